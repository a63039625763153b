//! Balanced one-dimensional decomposition and strided packing of row-major
//! tiles into contiguous buffers.

use crate::transport::Element;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("axis {axis} out of range for a {ndim}-d tile")]
    Axis { axis: usize, ndim: usize },
    #[error("slice {lo}..{hi} out of range for extent {extent}")]
    Range { lo: usize, hi: usize, extent: usize },
    #[error("buffer holds {got} elements, slice needs {expected}")]
    Length { got: usize, expected: usize },
    #[error("data length {got} does not match extents {extents:?}")]
    Extents { got: usize, extents: Vec<usize> },
}

/// Per-rank offsets and extents of an axis of length `n` split over `size`
/// ranks. The first `n % size` ranks hold one extra element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkMap {
    n: usize,
    offsets: Vec<usize>,
    extents: Vec<usize>,
}

impl ChunkMap {
    pub fn new(n: usize, size: usize) -> Self {
        assert!(size >= 1, "a chunk map needs at least one rank");
        let base = n / size;
        let extra = n % size;
        let extents: Vec<usize> = (0..size).map(|r| base + usize::from(r < extra)).collect();
        let offsets = extents
            .iter()
            .scan(0, |acc, &e| {
                let off = *acc;
                *acc += e;
                Some(off)
            })
            .collect();
        Self { n, offsets, extents }
    }

    pub fn global_extent(&self) -> usize {
        self.n
    }

    pub fn size(&self) -> usize {
        self.extents.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn offset(&self, rank: usize) -> usize {
        self.offsets[rank]
    }

    pub fn extent(&self, rank: usize) -> usize {
        self.extents[rank]
    }

    /// Half-open global index range owned by `rank`.
    pub fn range(&self, rank: usize) -> std::ops::Range<usize> {
        self.offsets[rank]..self.offsets[rank] + self.extents[rank]
    }

    /// Rank owning global index `i`.
    pub fn owner(&self, i: usize) -> Option<usize> {
        if i >= self.n {
            return None;
        }
        // the partition point of offsets <= i, minus one, skipping empty tails
        let r = self.offsets.partition_point(|&off| off <= i) - 1;
        Some(r)
    }
}

/// `chunk_map(n, p)` as a free function.
pub fn chunk_map(n: usize, size: usize) -> ChunkMap {
    ChunkMap::new(n, size)
}

/// Row-major contiguous block of elements.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile<T> {
    extents: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tile<T> {
    pub fn new(extents: Vec<usize>, data: Vec<T>) -> Result<Self, LayoutError> {
        if extents.iter().product::<usize>() != data.len() {
            return Err(LayoutError::Extents {
                got: data.len(),
                extents,
            });
        }
        Ok(Self { extents, data })
    }

    pub fn filled(extents: Vec<usize>, value: T) -> Self {
        let len = extents.iter().product();
        Self {
            extents,
            data: vec![value; len],
        }
    }

    pub fn zeroed(extents: Vec<usize>) -> Self {
        Self::filled(extents, T::default())
    }

    /// A 0-d tile holding one value.
    pub fn scalar(value: T) -> Self {
        Self {
            extents: Vec::new(),
            data: vec![value],
        }
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn ndim(&self) -> usize {
        self.extents.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.extents)
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        if index.len() != self.extents.len() || index.iter().zip(&self.extents).any(|(i, e)| i >= e) {
            return None;
        }
        let flat: usize = index.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        Some(self.data[flat])
    }

    /// `(outer, axis, inner)` element counts around `axis`.
    fn split_dims(&self, axis: usize) -> Result<(usize, usize, usize), LayoutError> {
        if axis >= self.ndim() {
            return Err(LayoutError::Axis {
                axis,
                ndim: self.ndim(),
            });
        }
        let outer = self.extents[..axis].iter().product();
        let inner = self.extents[axis + 1..].iter().product();
        Ok((outer, self.extents[axis], inner))
    }
}

pub fn row_major_strides(extents: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; extents.len()];
    for k in (0..extents.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * extents[k + 1];
    }
    strides
}

fn check_range(lo: usize, hi: usize, extent: usize) -> Result<(), LayoutError> {
    if lo > hi || hi > extent {
        return Err(LayoutError::Range { lo, hi, extent });
    }
    Ok(())
}

/// Packs the slice `lo..hi` along `axis` into a contiguous row-major buffer.
pub fn extract_chunk<T: Element>(
    tile: &Tile<T>,
    axis: usize,
    lo: usize,
    hi: usize,
) -> Result<Vec<T>, LayoutError> {
    let (outer, len, inner) = tile.split_dims(axis)?;
    check_range(lo, hi, len)?;
    let run = (hi - lo) * inner;
    let mut out = Vec::with_capacity(outer * run);
    for o in 0..outer {
        let start = (o * len + lo) * inner;
        out.extend_from_slice(&tile.data[start..start + run]);
    }
    Ok(out)
}

/// Inverse of [`extract_chunk`]: writes `buf` into the slice `lo..hi` along
/// `axis`, leaving every other element untouched.
pub fn place_chunk<T: Element>(
    tile: &mut Tile<T>,
    axis: usize,
    lo: usize,
    hi: usize,
    buf: &[T],
) -> Result<(), LayoutError> {
    let (outer, len, inner) = tile.split_dims(axis)?;
    check_range(lo, hi, len)?;
    let run = (hi - lo) * inner;
    if buf.len() != outer * run {
        return Err(LayoutError::Length {
            got: buf.len(),
            expected: outer * run,
        });
    }
    if run == 0 {
        return Ok(());
    }
    for (o, src) in buf.chunks_exact(run).enumerate() {
        let start = (o * len + lo) * inner;
        tile.data[start..start + run].copy_from_slice(src);
    }
    Ok(())
}

/// Moves `axis` to the front, physically reordering the data.
pub fn permute_leading<T: Element>(tile: &Tile<T>, axis: usize) -> Result<Tile<T>, LayoutError> {
    let (outer, len, inner) = tile.split_dims(axis)?;
    let mut extents = Vec::with_capacity(tile.ndim());
    extents.push(len);
    extents.extend_from_slice(&tile.extents[..axis]);
    extents.extend_from_slice(&tile.extents[axis + 1..]);
    let mut data = Vec::with_capacity(tile.len());
    for a in 0..len {
        for o in 0..outer {
            let start = (o * len + a) * inner;
            data.extend_from_slice(&tile.data[start..start + inner]);
        }
    }
    Ok(Tile { extents, data })
}

/// Undoes [`permute_leading`]: moves the leading axis back to position `axis`.
pub fn restore_leading<T: Element>(tile: &Tile<T>, axis: usize) -> Result<Tile<T>, LayoutError> {
    if tile.ndim() == 0 || axis >= tile.ndim() {
        return Err(LayoutError::Axis {
            axis,
            ndim: tile.ndim(),
        });
    }
    let len = tile.extents[0];
    let mut extents = tile.extents[1..].to_vec();
    extents.insert(axis, len);
    let outer: usize = extents[..axis].iter().product();
    let inner: usize = extents[axis + 1..].iter().product();
    let mut data = vec![T::default(); tile.len()];
    for a in 0..len {
        for o in 0..outer {
            let src = (a * outer + o) * inner;
            let dst = (o * len + a) * inner;
            data[dst..dst + inner].copy_from_slice(&tile.data[src..src + inner]);
        }
    }
    Ok(Tile { extents, data })
}
