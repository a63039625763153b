use super::TransportError;

/// A contiguous payload as it travels between ranks.
///
/// No shape or stride metadata crosses the wire; N-dimensional structure is
/// packed away by the sender and restored by the receiver.
#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U64(Vec<u64>),
    Seq(Vec<Message>),
}

impl Message {
    fn kind(&self) -> &'static str {
        match self {
            Message::F64(_) => "f64",
            Message::F32(_) => "f32",
            Message::U64(_) => "u64",
            Message::Seq(_) => "seq",
        }
    }

    /// Number of scalar elements carried, recursively.
    pub fn len(&self) -> usize {
        match self {
            Message::F64(v) => v.len(),
            Message::F32(v) => v.len(),
            Message::U64(v) => v.len(),
            Message::Seq(v) => v.iter().map(Message::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn mismatch(expected: &'static str, found: &Message) -> TransportError {
    TransportError::PayloadMismatch {
        expected,
        found: found.kind(),
    }
}

/// Values that can be moved through a [`Communicator`](super::Communicator).
pub trait Wire: Sized + Send + 'static {
    fn into_message(self) -> Message;
    fn from_message(msg: Message) -> Result<Self, TransportError>;
}

/// Scalar element types that can form a contiguous buffer.
pub trait Element: Wire + Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    const NAME: &'static str;
    fn wrap(v: Vec<Self>) -> Message;
    fn unwrap(msg: Message) -> Result<Vec<Self>, TransportError>;
}

macro_rules! element {
    ($t:ty, $variant:ident, $name:literal) => {
        impl Element for $t {
            const NAME: &'static str = $name;

            fn wrap(v: Vec<Self>) -> Message {
                Message::$variant(v)
            }

            fn unwrap(msg: Message) -> Result<Vec<Self>, TransportError> {
                match msg {
                    Message::$variant(v) => Ok(v),
                    other => Err(mismatch($name, &other)),
                }
            }
        }

        impl Wire for $t {
            fn into_message(self) -> Message {
                Message::$variant(vec![self])
            }

            fn from_message(msg: Message) -> Result<Self, TransportError> {
                match msg {
                    Message::$variant(v) if v.len() == 1 => Ok(v[0]),
                    other => Err(mismatch(concat!("scalar ", $name), &other)),
                }
            }
        }
    };
}

element!(f64, F64, "f64");
element!(f32, F32, "f32");
element!(u64, U64, "u64");

impl<T: Element> Wire for Vec<T> {
    fn into_message(self) -> Message {
        T::wrap(self)
    }

    fn from_message(msg: Message) -> Result<Self, TransportError> {
        T::unwrap(msg)
    }
}

impl Wire for Message {
    fn into_message(self) -> Message {
        self
    }

    fn from_message(msg: Message) -> Result<Self, TransportError> {
        Ok(msg)
    }
}

fn take_seq(msg: Message, arity: usize) -> Result<Vec<Message>, TransportError> {
    match msg {
        Message::Seq(parts) if parts.len() == arity => Ok(parts),
        other => Err(mismatch("tuple", &other)),
    }
}

impl<A: Wire, B: Wire> Wire for (A, B) {
    fn into_message(self) -> Message {
        Message::Seq(vec![self.0.into_message(), self.1.into_message()])
    }

    fn from_message(msg: Message) -> Result<Self, TransportError> {
        let mut it = take_seq(msg, 2)?.into_iter();
        let a = A::from_message(it.next().unwrap())?;
        let b = B::from_message(it.next().unwrap())?;
        Ok((a, b))
    }
}

impl<A: Wire, B: Wire, C: Wire> Wire for (A, B, C) {
    fn into_message(self) -> Message {
        Message::Seq(vec![
            self.0.into_message(),
            self.1.into_message(),
            self.2.into_message(),
        ])
    }

    fn from_message(msg: Message) -> Result<Self, TransportError> {
        let mut it = take_seq(msg, 3)?.into_iter();
        let a = A::from_message(it.next().unwrap())?;
        let b = B::from_message(it.next().unwrap())?;
        let c = C::from_message(it.next().unwrap())?;
        Ok((a, b, c))
    }
}
