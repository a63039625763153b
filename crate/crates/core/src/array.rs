//! The distributed array type.
//!
//! A [`DndArray`] has a global `shape` and an optional `split` axis. With no
//! split every rank holds an identical full copy. With `split = Some(s)` the
//! global extent along `s` is divided by [`ChunkMap`] and each rank holds
//! only its own contiguous block, so the local shape (`lshape`) differs from
//! `shape` along `s` alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distribution::{extract_chunk, permute_leading, place_chunk, ChunkMap, Tile};
use crate::scalar::Scalar;
use crate::transport::{Communicator, Element};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct DndArray<T: Element = f64> {
    shape: Vec<usize>,
    split: Option<usize>,
    comm: Communicator,
    tile: Tile<T>,
}

/// Local extents of the block owned by `rank`.
pub fn local_shape(shape: &[usize], split: Option<usize>, rank: usize, size: usize) -> Vec<usize> {
    let mut lshape = shape.to_vec();
    if let Some(s) = split {
        lshape[s] = ChunkMap::new(shape[s], size).extent(rank);
    }
    lshape
}

fn check_split(shape: &[usize], split: Option<usize>) -> Result<()> {
    match split {
        Some(s) if s >= shape.len() => Err(Error::InvalidAxis {
            axis: s,
            ndim: shape.len(),
        }),
        _ => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Min,
    Max,
}

impl ReduceOp {
    fn identity<T: Scalar>(self) -> T {
        match self {
            ReduceOp::Sum => T::ZERO,
            ReduceOp::Min => T::INFINITY,
            ReduceOp::Max => T::NEG_INFINITY,
        }
    }

    fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            ReduceOp::Sum => a + b,
            ReduceOp::Min => a.min_of(b),
            ReduceOp::Max => a.max_of(b),
        }
    }
}

impl<T: Element> DndArray<T> {
    /// Wraps an already distributed local block. `tile` must have the
    /// extents this rank owns under `split`.
    pub fn from_parts(shape: Vec<usize>, split: Option<usize>, comm: Communicator, tile: Tile<T>) -> Result<Self> {
        check_split(&shape, split)?;
        let expected = local_shape(&shape, split, comm.rank(), comm.size());
        if tile.extents() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                left: tile.extents().to_vec(),
                right: expected,
            });
        }
        Ok(Self {
            shape,
            split,
            comm,
            tile,
        })
    }

    /// Distributes a global array that every rank already holds in full;
    /// each rank keeps only its own block.
    pub fn from_global(global: &Tile<T>, split: Option<usize>, comm: &Communicator) -> Result<Self> {
        let shape = global.extents().to_vec();
        check_split(&shape, split)?;
        let tile = match split {
            None => global.clone(),
            Some(s) => {
                let range = ChunkMap::new(shape[s], comm.size()).range(comm.rank());
                let data = extract_chunk(global, s, range.start, range.end)?;
                Tile::new(local_shape(&shape, split, comm.rank(), comm.size()), data)?
            }
        };
        Self::from_parts(shape, split, comm.clone(), tile)
    }

    /// Builds an array whose element at global index `idx` is `f(idx)`.
    pub fn from_fn(shape: &[usize], split: Option<usize>, comm: &Communicator, f: impl Fn(&[usize]) -> T) -> Result<Self> {
        check_split(shape, split)?;
        let lshape = local_shape(shape, split, comm.rank(), comm.size());
        let offset = split.map_or(0, |s| ChunkMap::new(shape[s], comm.size()).offset(comm.rank()));
        let n: usize = lshape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            let mut global = idx.clone();
            if let Some(s) = split {
                global[s] += offset;
            }
            data.push(f(&global));
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < lshape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self::from_parts(shape.to_vec(), split, comm.clone(), Tile::new(lshape, data)?)
    }

    pub fn full(shape: &[usize], value: T, split: Option<usize>, comm: &Communicator) -> Result<Self> {
        check_split(shape, split)?;
        let lshape = local_shape(shape, split, comm.rank(), comm.size());
        Self::from_parts(shape.to_vec(), split, comm.clone(), Tile::filled(lshape, value))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn lshape(&self) -> &[usize] {
        self.tile.extents()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements across all ranks.
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn split(&self) -> Option<usize> {
        self.split
    }

    pub fn comm(&self) -> &Communicator {
        &self.comm
    }

    pub fn local(&self) -> &Tile<T> {
        &self.tile
    }

    pub fn into_local(self) -> Tile<T> {
        self.tile
    }

    /// Chunk map along the split axis, if any.
    pub fn chunk_map(&self) -> Option<ChunkMap> {
        self.split.map(|s| ChunkMap::new(self.shape[s], self.comm.size()))
    }

    /// Global index of this rank's first element along the split axis.
    pub fn local_offset(&self) -> usize {
        self.chunk_map().map_or(0, |m| m.offset(self.comm.rank()))
    }

    /// Redistributes along `new_split`. Gathered content is preserved
    /// bitwise and the result is balanced.
    pub fn resplit(&self, new_split: Option<usize>) -> Result<Self> {
        check_split(&self.shape, new_split)?;
        let (rank, size) = (self.comm.rank(), self.comm.size());
        if new_split == self.split {
            return Ok(self.clone());
        }
        let tile = match (self.split, new_split) {
            (_, _) if size == 1 => self.tile.clone(),
            (None, Some(s)) => {
                let range = ChunkMap::new(self.shape[s], size).range(rank);
                let data = extract_chunk(&self.tile, s, range.start, range.end)?;
                Tile::new(local_shape(&self.shape, new_split, rank, size), data)?
            }
            (Some(s), None) => {
                let map = ChunkMap::new(self.shape[s], size);
                let blocks = self.comm.allgather_varying(self.tile.data().to_vec())?;
                let mut full = Tile::zeroed(self.shape.clone());
                for (r, block) in blocks.iter().enumerate() {
                    let range = map.range(r);
                    place_chunk(&mut full, s, range.start, range.end, block)?;
                }
                full
            }
            (Some(s), Some(t)) => {
                let old = ChunkMap::new(self.shape[s], size);
                let new = ChunkMap::new(self.shape[t], size);
                let parts = (0..size)
                    .map(|d| {
                        let range = new.range(d);
                        extract_chunk(&self.tile, t, range.start, range.end)
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let received = self.comm.alltoall_varying(parts)?;
                let mut out = Tile::zeroed(local_shape(&self.shape, new_split, rank, size));
                for (src, block) in received.iter().enumerate() {
                    let range = old.range(src);
                    place_chunk(&mut out, s, range.start, range.end, block)?;
                }
                out
            }
            (None, None) => unreachable!("handled by the equality check"),
        };
        Self::from_parts(self.shape.clone(), new_split, self.comm.clone(), tile)
    }

    /// Full global content, replicated on every rank.
    pub fn gather(&self) -> Result<Tile<T>> {
        Ok(self.resplit(None)?.tile)
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> DndArray<U> {
        let data = self.tile.data().iter().map(|&v| f(v)).collect();
        DndArray {
            shape: self.shape.clone(),
            split: self.split,
            comm: self.comm.clone(),
            tile: Tile::new(self.tile.extents().to_vec(), data).expect("same extents"),
        }
    }

    pub fn zip_with<U: Element, V: Element>(&self, other: &DndArray<U>, f: impl Fn(T, U) -> V) -> Result<DndArray<V>> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        if self.split != other.split {
            return Err(Error::SplitMismatch {
                left: self.split,
                right: other.split,
            });
        }
        if self.comm.size() != other.comm.size() || self.comm.rank() != other.comm.rank() {
            return Err(Error::InvalidArgument("operands live on different communicators".into()));
        }
        let data = self
            .tile
            .data()
            .iter()
            .zip(other.tile.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(DndArray {
            shape: self.shape.clone(),
            split: self.split,
            comm: self.comm.clone(),
            tile: Tile::new(self.tile.extents().to_vec(), data)?,
        })
    }

    /// The value of a 0-d array.
    pub fn item(&self) -> Result<T> {
        if !self.shape.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "item() needs a 0-d array, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.tile.data()[0])
    }
}

impl<T: Scalar> DndArray<T> {
    pub fn zeros(shape: &[usize], split: Option<usize>, comm: &Communicator) -> Result<Self> {
        Self::full(shape, T::ZERO, split, comm)
    }

    pub fn ones(shape: &[usize], split: Option<usize>, comm: &Communicator) -> Result<Self> {
        Self::full(shape, T::ONE, split, comm)
    }

    /// `0, 1, …, n-1` as a 1-d array.
    pub fn arange(n: usize, split: Option<usize>, comm: &Communicator) -> Result<Self> {
        Self::from_fn(&[n], split, comm, |i| T::from_f64(i[0] as f64))
    }

    /// Uniform samples in `[0, 1)`. The element at global flat index `i` is
    /// the `i`-th draw of a ChaCha8 stream seeded with `seed`, so the global
    /// content depends only on `(shape, seed)`.
    pub fn random_uniform(shape: &[usize], split: Option<usize>, seed: u64, comm: &Communicator) -> Result<Self> {
        check_split(shape, split)?;
        let (rank, size) = (comm.rank(), comm.size());
        let lshape = local_shape(shape, split, rank, size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(lshape.iter().product());
        match split {
            None => data.extend((0..shape.iter().product::<usize>()).map(|_| T::from_f64(rng.gen::<f64>()))),
            Some(s) => {
                let range = ChunkMap::new(shape[s], size).range(rank);
                let outer: usize = shape[..s].iter().product();
                let inner: usize = shape[s + 1..].iter().product();
                let run = range.len() * inner;
                for o in 0..outer {
                    let start = (o * shape[s] + range.start) * inner;
                    // each f64 draw consumes two 32-bit words of the stream
                    rng.set_word_pos(2 * start as u128);
                    data.extend((0..run).map(|_| T::from_f64(rng.gen::<f64>())));
                }
            }
        }
        Self::from_parts(shape.to_vec(), split, comm.clone(), Tile::new(lshape, data)?)
    }

    /// Reduces along `axis`, or over everything when `axis` is `None`.
    ///
    /// Whole-array and split-axis reductions communicate and return a
    /// replicated result; reductions along any other axis are local and keep
    /// the data distributed.
    pub fn reduce(&self, op: ReduceOp, axis: Option<usize>) -> Result<Self> {
        let comm = &self.comm;
        match axis {
            None => {
                let local = self
                    .tile
                    .data()
                    .iter()
                    .fold(op.identity::<T>(), |acc, &v| op.apply(acc, v));
                let value = if self.split.is_some() {
                    comm.allreduce(local, op.identity(), |a, b| op.apply(a, b))?
                } else {
                    local
                };
                Self::from_parts(Vec::new(), None, comm.clone(), Tile::scalar(value))
            }
            Some(k) => {
                if k >= self.ndim() {
                    return Err(Error::InvalidAxis {
                        axis: k,
                        ndim: self.ndim(),
                    });
                }
                let partial = reduce_tile_axis(&self.tile, k, op);
                let mut shape = self.shape.clone();
                shape.remove(k);
                match self.split {
                    Some(s) if s == k => {
                        let n = partial.len();
                        let data = comm.allreduce(partial.into_data(), vec![op.identity(); n], |mut a, b| {
                            for (x, y) in a.iter_mut().zip(b) {
                                *x = op.apply(*x, y);
                            }
                            a
                        })?;
                        Self::from_parts(shape.clone(), None, comm.clone(), Tile::new(shape, data)?)
                    }
                    split => {
                        let split = split.map(|s| if s > k { s - 1 } else { s });
                        Self::from_parts(shape, split, comm.clone(), partial)
                    }
                }
            }
        }
    }

    pub fn sum(&self, axis: Option<usize>) -> Result<Self> {
        self.reduce(ReduceOp::Sum, axis)
    }

    pub fn min(&self, axis: Option<usize>) -> Result<Self> {
        self.reduce(ReduceOp::Min, axis)
    }

    pub fn max(&self, axis: Option<usize>) -> Result<Self> {
        self.reduce(ReduceOp::Max, axis)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a / b)
    }

    pub fn sqrt(&self) -> Self {
        self.map(Scalar::sqrt)
    }

    pub fn square(&self) -> Self {
        self.map(|v| v * v)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }
}

fn reduce_tile_axis<T: Scalar>(tile: &Tile<T>, axis: usize, op: ReduceOp) -> Tile<T> {
    let ext = tile.extents();
    let outer: usize = ext[..axis].iter().product();
    let len = ext[axis];
    let inner: usize = ext[axis + 1..].iter().product();
    let mut out = vec![op.identity::<T>(); outer * inner];
    let data = tile.data();
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for a in 0..len {
            let src = &data[(o * len + a) * inner..(o * len + a + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = op.apply(*d, s);
            }
        }
    }
    let mut extents = ext.to_vec();
    extents.remove(axis);
    Tile::new(extents, out).expect("reduced extents")
}

/// Dense row-major product of two 2-d tiles.
pub fn matmul_local<T: Scalar>(a: &Tile<T>, b: &Tile<T>) -> Result<Tile<T>> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "matmul needs 2-d operands, got {:?} and {:?}",
            a.extents(),
            b.extents()
        )));
    }
    let (m, k) = (a.extents()[0], a.extents()[1]);
    let (k2, n) = (b.extents()[0], b.extents()[1]);
    if k != k2 {
        return Err(Error::ShapeMismatch {
            left: a.extents().to_vec(),
            right: b.extents().to_vec(),
        });
    }
    let mut out = vec![T::ZERO; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tile::new(vec![m, n], out)?)
}

/// Transpose of a 2-d tile.
pub fn transpose<T: Element>(t: &Tile<T>) -> Result<Tile<T>> {
    if t.ndim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "transpose needs a 2-d tile, got {:?}",
            t.extents()
        )));
    }
    Ok(permute_leading(t, 1)?)
}
