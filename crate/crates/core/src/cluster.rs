//! k-means clustering with Lloyd's algorithm on row-split data.
//!
//! Centroids are replicated. Each iteration assigns every local row to its
//! nearest centroid (ties go to the lowest index), sums rows and counts per
//! cluster locally, and merges them with one allreduce; the inertia of the
//! assignment takes a second allreduce. Clusters that lose all their points
//! keep their previous centroid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::array::DndArray;
use crate::distribution::Tile;
use crate::pairwise::squared_cdist_xy;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves by `tol` or more. Zero runs exactly
    /// `max_iter` iterations.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeans {
    fn default() -> Self {
        Self {
            k: 8,
            max_iter: 30,
            tol: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansModel {
    pub k: usize,
    /// `k × m`, identical on every rank.
    pub centroids: Tile<f64>,
    /// Inertia of the assignment made at the start of each iteration.
    pub inertia_trace: Vec<f64>,
    pub iterations_run: usize,
    pub seed: u64,
}

fn row_split(x: &DndArray<f64>) -> Result<DndArray<f64>> {
    if x.ndim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "k-means needs 2-d data, got shape {:?}",
            x.shape()
        )));
    }
    match x.split() {
        Some(1) => x.resplit(Some(0)),
        _ => Ok(x.clone()),
    }
}

/// Replicates the given global rows of a row-split (or replicated) array,
/// in the order requested.
fn gather_rows(x: &DndArray<f64>, rows: &[usize]) -> Result<Tile<f64>> {
    let m = x.shape()[1];
    let local = x.local().data();
    let offset = x.local_offset();
    let owned = offset..offset + x.lshape()[0];
    let mut picked = Vec::new();
    let mut which = Vec::new();
    for &r in rows {
        if owned.contains(&r) {
            let i = r - offset;
            which.push(r as u64);
            picked.extend_from_slice(&local[i * m..(i + 1) * m]);
        }
    }
    let (indices, values): (Vec<Vec<u64>>, Vec<Vec<f64>>) = if x.split().is_some() {
        x.comm().allgather_varying((which, picked))?.into_iter().unzip()
    } else {
        (vec![which], vec![picked])
    };
    let mut out = vec![0.0; rows.len() * m];
    for (idx, vals) in indices.iter().zip(&values) {
        for (j, &r) in idx.iter().enumerate() {
            let dst = rows.iter().position(|&q| q as u64 == r).expect("requested row");
            out[dst * m..(dst + 1) * m].copy_from_slice(&vals[j * m..(j + 1) * m]);
        }
    }
    Ok(Tile::new(vec![rows.len(), m], out)?)
}

/// `k` distinct rows sampled uniformly without replacement. The draw only
/// depends on `(n, k, seed)`, never on how `x` is distributed.
pub fn init_centroids(x: &DndArray<f64>, k: usize, seed: u64) -> Result<Tile<f64>> {
    let x = row_split(x)?;
    let n = x.shape()[0];
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k={k} must be in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rand::seq::index::sample(&mut rng, n, k).into_vec();
    gather_rows(&x, &rows)
}

/// Nearest-centroid labels of the local rows together with their exact
/// squared distances.
fn assign(x: &DndArray<f64>, centroids: &Tile<f64>) -> Result<(Vec<usize>, Vec<f64>)> {
    let k = centroids.extents()[0];
    let m = centroids.extents()[1];
    let d2 = squared_cdist_xy(x, centroids)?;
    let mut labels = Vec::with_capacity(x.lshape()[0]);
    let mut dist = Vec::with_capacity(x.lshape()[0]);
    let rows = x.local().data().chunks_exact(m.max(1));
    for (row_d, row_x) in d2.local().data().chunks_exact(k).zip(rows) {
        let mut best = 0;
        for (j, &v) in row_d.iter().enumerate().skip(1) {
            if v < row_d[best] {
                best = j;
            }
        }
        labels.push(best);
        let c = &centroids.data()[best * m..(best + 1) * m];
        dist.push(row_x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum());
    }
    Ok((labels, dist))
}

impl KMeans {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn fit(&self, x: &DndArray<f64>) -> Result<KMeansModel> {
        let x = row_split(x)?;
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        let comm = x.comm();
        let finite = x.local().data().iter().all(|v| v.is_finite());
        if comm.allreduce_any(!finite)? {
            return Err(Error::NonFinite("k-means input"));
        }
        let (k, m) = (self.k, x.shape()[1]);
        let mut centroids = init_centroids(&x, k, self.seed)?;
        let mut inertia_trace = Vec::with_capacity(self.max_iter);
        let mut iterations_run = 0;

        while iterations_run < self.max_iter {
            let (labels, dist) = assign(&x, &centroids)?;

            // per-cluster sums followed by counts, merged in one collective
            let mut acc = vec![0.0; k * m + k];
            for (row, &c) in x.local().data().chunks_exact(m.max(1)).zip(&labels) {
                for (s, v) in acc[c * m..(c + 1) * m].iter_mut().zip(row) {
                    *s += v;
                }
                acc[k * m + c] += 1.0;
            }
            let acc = comm.allreduce_sum_vec(acc)?;
            let inertia = comm.allreduce_sum(dist.iter().sum())?;
            inertia_trace.push(inertia);
            iterations_run += 1;

            let mut shift = 0.0f64;
            let cdata = centroids.data_mut();
            for c in 0..k {
                let count = acc[k * m + c];
                if count == 0.0 {
                    continue;
                }
                for j in 0..m {
                    let new = acc[c * m + j] / count;
                    shift = shift.max((new - cdata[c * m + j]).abs());
                    cdata[c * m + j] = new;
                }
            }
            if shift < self.tol {
                break;
            }
        }

        Ok(KMeansModel {
            k,
            centroids,
            inertia_trace,
            iterations_run,
            seed: self.seed,
        })
    }
}

impl KMeansModel {
    /// Nearest-centroid label of every row; distributed like `x` along rows.
    pub fn predict(&self, x: &DndArray<f64>) -> Result<DndArray<u64>> {
        let x = row_split(x)?;
        if x.shape()[1] != self.centroids.extents()[1] {
            return Err(Error::ShapeMismatch {
                left: x.shape().to_vec(),
                right: self.centroids.extents().to_vec(),
            });
        }
        let (labels, _) = assign(&x, &self.centroids)?;
        let labels: Vec<u64> = labels.into_iter().map(|l| l as u64).collect();
        DndArray::from_parts(
            vec![x.shape()[0]],
            x.split(),
            x.comm().clone(),
            Tile::new(vec![x.lshape()[0]], labels)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{run, Communicator, LoopbackConfig};

    fn from_rows(rows: &[[f64; 2]], c: &Communicator) -> DndArray<f64> {
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        DndArray::from_global(&Tile::new(vec![rows.len(), 2], data).unwrap(), Some(0), c).unwrap()
    }

    #[test]
    fn k_equals_n_returns_all_rows() {
        let c = Communicator::solo();
        let x = from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]], &c);
        let cen = init_centroids(&x, 3, 11).unwrap();
        let mut rows: Vec<Vec<f64>> = cen.data().chunks(2).map(<[f64]>::to_vec).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]);
        assert!(init_centroids(&x, 4, 11).is_err());
        assert!(init_centroids(&x, 0, 11).is_err());
    }

    #[test]
    fn init_is_seeded_and_layout_free() {
        let c = Communicator::solo();
        let x = DndArray::<f64>::random_uniform(&[40, 3], Some(0), 1, &c).unwrap();
        let a = init_centroids(&x, 5, 77).unwrap();
        assert_eq!(a, init_centroids(&x, 5, 77).unwrap());
        let dist = run(LoopbackConfig::new(4), |c| {
            let x = DndArray::<f64>::random_uniform(&[40, 3], Some(0), 1, &c).unwrap();
            init_centroids(&x, 5, 77).unwrap()
        });
        assert!(dist.iter().all(|t| t == &a));
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let c = Communicator::solo();
        let x = DndArray::<f64>::random_uniform(&[50, 4], Some(0), 3, &c).unwrap();
        let model = KMeans::new(1).max_iter(1).fit(&x).unwrap();
        let mean = crate::moments::mean(&x, Some(0)).unwrap();
        for (a, b) in model.centroids.data().iter().zip(mean.local().data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = Communicator::solo();
        let model = KMeansModel {
            k: 2,
            centroids: Tile::new(vec![2, 2], vec![-1.0, 0.0, 1.0, 0.0]).unwrap(),
            inertia_trace: vec![],
            iterations_run: 0,
            seed: 0,
        };
        let x = from_rows(&[[0.0, 0.0], [-1.0, 0.0], [1.0, 0.0]], &c);
        assert_eq!(model.predict(&x).unwrap().local().data(), &[0, 0, 1]);
        let bad = DndArray::<f64>::zeros(&[2, 3], Some(0), &c).unwrap();
        assert!(model.predict(&bad).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let c = Communicator::solo();
        let x = from_rows(&[[0.0, f64::NAN], [1.0, 1.0]], &c);
        assert!(matches!(KMeans::new(1).fit(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn tol_stops_early() {
        let c = Communicator::solo();
        let x = from_rows(&[[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]], &c);
        let model = KMeans::new(2).max_iter(50).tol(1e-12).seed(0).fit(&x).unwrap();
        assert!(model.iterations_run < 50);
    }
}
