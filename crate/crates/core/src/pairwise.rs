//! Pairwise Euclidean distances.
//!
//! Squared distances use the quadratic expansion
//! `‖x − y‖² = ‖x‖² + ‖y‖² − 2·x·y`, so the bulk of the work is one dense
//! matrix product per block. Cancellation can push tiny distances below
//! zero; those are clamped to zero before the square root.
//!
//! [`cdist`] computes the full `n × n` matrix of a row-split array with a
//! ring: each rank keeps its own rows fixed and passes a travelling row block
//! (with its precomputed norms and origin rank) to `rank + 1`, receiving the
//! next one from `rank − 1`. After `p` compute rounds and `p − 1` shifts every
//! block has visited every rank exactly once.

use crate::array::{matmul_local, transpose, DndArray};
use crate::distribution::{place_chunk, ChunkMap, Tile};
use crate::scalar::Scalar;
use crate::transport::Element;
use crate::{Error, Result};

fn row_norms<T: Scalar>(tile: &Tile<T>) -> Vec<T> {
    let m = tile.extents()[1];
    if m == 0 {
        return vec![T::ZERO; tile.extents()[0]];
    }
    tile.data()
        .chunks_exact(m)
        .map(|row| row.iter().fold(T::ZERO, |acc, &v| acc + v * v))
        .collect()
}

/// Squared distances between the rows of `x` (with norms `nx`) and the rows
/// of `y` (with norms `ny`), clamped at zero.
fn squared_block<T: Scalar>(x: &Tile<T>, nx: &[T], y: &Tile<T>, ny: &[T]) -> Result<Tile<T>> {
    let mut g = matmul_local(x, &transpose(y)?)?;
    let cols = ny.len();
    if cols > 0 {
        for (row, &xi) in g.data_mut().chunks_exact_mut(cols).zip(nx) {
            for (v, &yj) in row.iter_mut().zip(ny) {
                let d = xi + yj - (*v + *v);
                *v = if d > T::ZERO { d } else { T::ZERO };
            }
        }
    }
    Ok(g)
}

fn require_2d<T: Element>(a: &DndArray<T>, what: &str) -> Result<()> {
    if a.ndim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "{what} must be 2-d, got shape {:?}",
            a.shape()
        )));
    }
    Ok(())
}

/// Full pairwise distance matrix of the rows of `x`.
///
/// The result is `n × n`, split along rows with the same chunk map as `x`;
/// column blocks are written at the global offsets of the rank each visiting
/// block originated from. Inputs that are not row-split are resplit first.
pub fn cdist<T: Scalar>(x: &DndArray<T>) -> Result<DndArray<T>> {
    require_2d(x, "cdist input")?;
    let n = x.shape()[0];
    if x.numel() == 0 {
        return Err(Error::InvalidArgument("cdist of an empty array".into()));
    }
    let x = if x.split() == Some(0) {
        x.clone()
    } else {
        x.resplit(Some(0))?
    };
    let comm = x.comm();
    let (rank, size) = (comm.rank(), comm.size());
    let map = ChunkMap::new(n, size);
    let m = x.shape()[1];

    let own = x.local().clone();
    let own_norms = row_norms(&own);
    let mut out = Tile::zeroed(vec![own.extents()[0], n]);

    let mut block = own.clone();
    let mut norms = own_norms.clone();
    let mut origin = rank;
    for round in 0..size {
        debug_assert_eq!(origin, (rank + size - round) % size);
        let g = squared_block(&own, &own_norms, &block, &norms)?;
        let dist: Vec<T> = g.into_data().into_iter().map(Scalar::sqrt).collect();
        let range = map.range(origin);
        place_chunk(&mut out, 1, range.start, range.end, &dist)?;

        if round + 1 < size {
            let (data, nrm, org) = comm.sendrecv(
                (rank + 1) % size,
                (block.into_data(), norms, origin as u64),
                (rank + size - 1) % size,
            )?;
            origin = org as usize;
            block = Tile::new(vec![map.extent(origin), m], data)?;
            norms = nrm;
        }
    }
    DndArray::from_parts(vec![n, n], Some(0), comm.clone(), out)
}

/// Squared distances from the rows of `x` to the rows of a replicated `y`.
/// Purely local.
pub fn squared_cdist_xy<T: Scalar>(x: &DndArray<T>, y: &Tile<T>) -> Result<DndArray<T>> {
    require_2d(x, "cdist_xy left operand")?;
    if y.ndim() != 2 || y.extents()[1] != x.shape()[1] {
        return Err(Error::ShapeMismatch {
            left: x.shape().to_vec(),
            right: y.extents().to_vec(),
        });
    }
    let x = match x.split() {
        Some(1) => x.resplit(Some(0))?,
        _ => x.clone(),
    };
    let g = squared_block(x.local(), &row_norms(x.local()), y, &row_norms(y))?;
    DndArray::from_parts(
        vec![x.shape()[0], y.extents()[0]],
        x.split(),
        x.comm().clone(),
        g,
    )
}

/// Distances between the rows of `x` (row-split or replicated) and the rows
/// of `y`, which is replicated first if it is not already.
pub fn cdist_xy<T: Scalar>(x: &DndArray<T>, y: &DndArray<T>) -> Result<DndArray<T>> {
    require_2d(y, "cdist_xy right operand")?;
    let y = y.gather()?;
    Ok(squared_cdist_xy(x, &y)?.sqrt())
}
