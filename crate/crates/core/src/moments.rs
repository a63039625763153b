//! Single-pass mean, variance and standard deviation.
//!
//! Each rank runs Welford's update over its local block to obtain a
//! [`MomentState`] `(n, mean, M2)`, then the per-rank states are merged with
//! the pairwise combination rule
//!
//! ```text
//! n    = n_a + n_b
//! δ    = mean_b - mean_a
//! mean = mean_a + δ·n_b/n
//! M2   = M2_a + M2_b + δ²·n_a·n_b/n
//! ```
//!
//! as a custom allreduce combiner. No pass over the data ever forms
//! `Σx²`, so a large common offset does not destroy the variance.

use crate::array::DndArray;
use crate::distribution::Tile;
use crate::scalar::Scalar;
use crate::transport::{Message, TransportError, Wire};
use crate::{Error, Result};

/// Partial moments over `n` samples, one `(mean, M2)` pair per slot.
///
/// Slots are stored as structure-of-arrays so merging is a flat elementwise
/// fold. `n == 0` is the identity element.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentState {
    pub n: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl MomentState {
    pub fn identity(arity: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; arity],
            m2: vec![0.0; arity],
        }
    }

    pub fn arity(&self) -> usize {
        self.mean.len()
    }

    /// Scalar state over a slice.
    pub fn from_slice<T: Scalar>(values: &[T]) -> Self {
        let mut s = Self::identity(1);
        for &v in values {
            s.push(&[v.to_f64()]);
        }
        s
    }

    /// Welford update with one sample per slot.
    pub fn push(&mut self, sample: &[f64]) {
        debug_assert_eq!(sample.len(), self.arity());
        self.n += 1;
        let n = self.n as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
    }

    /// Variance per slot with divisor `n - ddof`.
    pub fn variance(&self, ddof: u64) -> Result<Vec<f64>> {
        if self.n <= ddof {
            return Err(Error::NotEnoughSamples { n: self.n, ddof });
        }
        let d = (self.n - ddof) as f64;
        Ok(self.m2.iter().map(|m2| m2 / d).collect())
    }
}

/// Merges two partial states as if their samples had been concatenated.
pub fn combine(a: MomentState, b: MomentState) -> Result<MomentState> {
    if a.arity() != b.arity() {
        return Err(Error::Arity {
            left: a.arity(),
            right: b.arity(),
        });
    }
    if b.n == 0 {
        return Ok(a);
    }
    if a.n == 0 {
        return Ok(b);
    }
    let n = a.n + b.n;
    let (na, nb, nf) = (a.n as f64, b.n as f64, n as f64);
    let mut mean = a.mean;
    let mut m2 = a.m2;
    for i in 0..mean.len() {
        let delta = b.mean[i] - mean[i];
        mean[i] += delta * nb / nf;
        m2[i] += b.m2[i] + delta * delta * na * nb / nf;
    }
    Ok(MomentState { n, mean, m2 })
}

/// Signature of a state combiner used by the distributed reductions.
pub type Combiner = fn(MomentState, MomentState) -> Result<MomentState>;

impl Wire for MomentState {
    fn into_message(self) -> Message {
        (vec![self.n], self.mean, self.m2).into_message()
    }

    fn from_message(msg: Message) -> Result<Self, TransportError> {
        let (n, mean, m2) = <(Vec<u64>, Vec<f64>, Vec<f64>)>::from_message(msg)?;
        match n.as_slice() {
            [n] => Ok(Self { n: *n, mean, m2 }),
            _ => Err(TransportError::PayloadMismatch {
                expected: "moment count",
                found: "u64 vector",
            }),
        }
    }
}

/// One pass over a local block: the whole block as a single slot
/// (`axis = None`), or one slot per position of the remaining axes.
pub fn local_moments<T: Scalar>(tile: &Tile<T>, axis: Option<usize>) -> Result<MomentState> {
    let Some(k) = axis else {
        return Ok(MomentState::from_slice(tile.data()));
    };
    let ext = tile.extents();
    if k >= ext.len() {
        return Err(Error::InvalidAxis { axis: k, ndim: ext.len() });
    }
    let outer: usize = ext[..k].iter().product();
    let len = ext[k];
    let inner: usize = ext[k + 1..].iter().product();
    let mut state = MomentState::identity(outer * inner);
    let data = tile.data();
    for a in 0..len {
        state.n += 1;
        let n = state.n as f64;
        for o in 0..outer {
            let src = &data[(o * len + a) * inner..(o * len + a + 1) * inner];
            let mean = &mut state.mean[o * inner..(o + 1) * inner];
            let m2 = &mut state.m2[o * inner..(o + 1) * inner];
            for ((mu, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(src) {
                let x = x.to_f64();
                let delta = x - *mu;
                *mu += delta / n;
                *s += delta * (x - *mu);
            }
        }
    }
    Ok(state)
}

/// Global moment state of `a` plus the shape and split its per-slot results
/// take.
pub fn distributed_state<T: Scalar>(
    a: &DndArray<T>,
    axis: Option<usize>,
    combiner: Combiner,
) -> Result<(MomentState, Vec<usize>, Option<usize>)> {
    let local = local_moments(a.local(), axis)?;
    let comm = a.comm();
    let needs_reduce = match (axis, a.split()) {
        (_, None) => false,
        (None, Some(_)) => true,
        (Some(k), Some(s)) => k == s,
    };
    let state = if needs_reduce {
        let arity = local.arity();
        comm.allreduce_with(local, MomentState::identity(arity), combiner)?
    } else {
        local
    };
    let (shape, split) = match axis {
        None => (Vec::new(), None),
        Some(k) => {
            let mut shape = a.shape().to_vec();
            shape.remove(k);
            let split = match a.split() {
                Some(s) if s == k => None,
                Some(s) if s > k => Some(s - 1),
                other => other,
            };
            (shape, split)
        }
    };
    Ok((state, shape, split))
}

fn to_array<T: Scalar>(a: &DndArray<T>, shape: Vec<usize>, split: Option<usize>, values: Vec<f64>) -> Result<DndArray<f64>> {
    let lshape = crate::array::local_shape(&shape, split, a.comm().rank(), a.comm().size());
    DndArray::from_parts(shape, split, a.comm().clone(), Tile::new(lshape, values)?)
}

fn check_samples<T: Scalar>(a: &DndArray<T>, axis: Option<usize>, ddof: u64) -> Result<()> {
    let n = match axis {
        None => a.numel(),
        Some(k) if k < a.ndim() => a.shape()[k],
        Some(k) => return Err(Error::InvalidAxis { axis: k, ndim: a.ndim() }),
    } as u64;
    if n <= ddof {
        return Err(Error::NotEnoughSamples { n, ddof });
    }
    Ok(())
}

/// Mean with an explicit combiner; [`mean`] uses [`combine`].
pub fn mean_with<T: Scalar>(a: &DndArray<T>, axis: Option<usize>, combiner: Combiner) -> Result<DndArray<f64>> {
    check_samples(a, axis, 0)?;
    let (state, shape, split) = distributed_state(a, axis, combiner)?;
    to_array(a, shape, split, state.mean)
}

/// Variance with an explicit combiner; [`var`] uses [`combine`].
pub fn var_with<T: Scalar>(a: &DndArray<T>, axis: Option<usize>, ddof: u64, combiner: Combiner) -> Result<DndArray<f64>> {
    check_samples(a, axis, ddof)?;
    let (state, shape, split) = distributed_state(a, axis, combiner)?;
    let n = state.n;
    let values = if state.arity() == 0 {
        Vec::new()
    } else {
        let d = n.checked_sub(ddof).filter(|&d| d > 0).ok_or(Error::NotEnoughSamples { n, ddof })?;
        state.m2.iter().map(|m2| m2 / d as f64).collect()
    };
    to_array(a, shape, split, values)
}

/// Arithmetic mean over `axis` (or the whole array). Results are `f64`.
pub fn mean<T: Scalar>(a: &DndArray<T>, axis: Option<usize>) -> Result<DndArray<f64>> {
    mean_with(a, axis, combine)
}

/// Variance with divisor `n - ddof`; `ddof = 0` is the population variance.
pub fn var<T: Scalar>(a: &DndArray<T>, axis: Option<usize>, ddof: u64) -> Result<DndArray<f64>> {
    var_with(a, axis, ddof, combine)
}

pub fn std<T: Scalar>(a: &DndArray<T>, axis: Option<usize>, ddof: u64) -> Result<DndArray<f64>> {
    Ok(var(a, axis, ddof)?.sqrt())
}
