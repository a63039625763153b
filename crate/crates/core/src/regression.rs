//! LASSO regression by cyclic coordinate descent.
//!
//! Minimizes `E(w) = ‖y − Xw‖² + λ·Σ_{j≥1} |w_j|` where column 0 of `X` is an
//! all-ones bias column whose weight is not penalized. Rows of `X` and `y`
//! are distributed; the coefficient vector is replicated, so each coordinate
//! update costs a single scalar allreduce.
//!
//! With no ½ in front of the squared loss, exact minimization along
//! coordinate `j` gives
//!
//! ```text
//! ρ_j = x_jᵀ(r + w_j·x_j)
//! w_j = S(ρ_j, λ/2) / ‖x_j‖²        (j ≥ 1)
//! w_0 = ρ_0 / ‖x_0‖²
//! ```
//!
//! with `S` the soft-threshold operator. Features are used as given; scale
//! them beforehand if that matters.

use crate::array::DndArray;
use crate::distribution::Tile;
use crate::{Error, Result};

/// `sign(rho) · max(|rho| − t, 0)`.
pub fn soft_threshold(rho: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if rho > t {
        rho - t
    } else if rho < -t {
        rho + t
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lasso {
    pub lambda: f64,
    pub sweeps: usize,
    /// Stop once the largest coordinate change in a sweep is below `tol`.
    pub tol: f64,
}

impl Default for Lasso {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sweeps: 20,
            tol: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoModel {
    /// Coefficients; `w[0]` is the bias.
    pub w: Vec<f64>,
    pub lambda: f64,
    /// Objective after each completed sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps_run: usize,
}

fn rows_split(a: &DndArray<f64>) -> Result<DndArray<f64>> {
    match a.split() {
        Some(0) | None => Ok(a.clone()),
        Some(_) => a.resplit(Some(0)),
    }
}

/// Local columns of a row-major `rows × m` tile.
fn columns(tile: &Tile<f64>, m: usize) -> Vec<Vec<f64>> {
    let rows = tile.extents()[0];
    let mut cols = vec![Vec::with_capacity(rows); m];
    for row in tile.data().chunks_exact(m.max(1)) {
        for (col, &v) in cols.iter_mut().zip(row) {
            col.push(v);
        }
    }
    cols
}

impl Lasso {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn sweeps(mut self, sweeps: usize) -> Self {
        self.sweeps = sweeps;
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn fit(&self, x: &DndArray<f64>, y: &DndArray<f64>) -> Result<LassoModel> {
        if x.ndim() != 2 || y.ndim() != 1 || x.shape()[0] != y.shape()[0] {
            return Err(Error::ShapeMismatch {
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let (n, m) = (x.shape()[0], x.shape()[1]);
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument("LASSO needs at least one row and one column".into()));
        }
        let mut x = rows_split(x)?;
        let mut y = rows_split(y)?;
        if x.split() != y.split() {
            x = x.resplit(Some(0))?;
            y = y.resplit(Some(0))?;
        }
        let comm = x.comm();
        // replicated operands are reduced once, not once per rank
        let reduce = |v: f64| -> Result<f64> {
            if x.split().is_some() {
                Ok(comm.allreduce_sum(v)?)
            } else {
                Ok(v)
            }
        };

        let cols = columns(x.local(), m);
        let bad_bias = cols[0].iter().any(|&v| v != 1.0);
        let bad_bias = if x.split().is_some() { comm.allreduce_any(bad_bias)? } else { bad_bias };
        if bad_bias {
            return Err(Error::InvalidArgument("column 0 must be the all-ones bias column".into()));
        }
        let sq: Vec<f64> = if x.split().is_some() {
            comm.allreduce_sum_vec(cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect())?
        } else {
            cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect()
        };

        let mut w = vec![0.0; m];
        let mut r = y.local().data().to_vec();
        let mut objective_trace = Vec::with_capacity(self.sweeps);
        let mut sweeps_run = 0;
        let half = self.lambda / 2.0;

        while sweeps_run < self.sweeps {
            let mut max_change = 0.0f64;
            for j in 0..m {
                if sq[j] == 0.0 {
                    continue;
                }
                let col = &cols[j];
                let wj = w[j];
                let rho = reduce(col.iter().zip(&r).map(|(xv, rv)| xv * (rv + wj * xv)).sum())?;
                let new = if j == 0 {
                    rho / sq[j]
                } else {
                    soft_threshold(rho, half) / sq[j]
                };
                let delta = wj - new;
                if delta != 0.0 {
                    for (rv, xv) in r.iter_mut().zip(col) {
                        *rv += delta * xv;
                    }
                }
                max_change = max_change.max(delta.abs());
                w[j] = new;
            }
            let rss = reduce(r.iter().map(|v| v * v).sum())?;
            let penalty: f64 = w[1..].iter().map(|v| v.abs()).sum();
            objective_trace.push(rss + self.lambda * penalty);
            sweeps_run += 1;
            if max_change < self.tol {
                break;
            }
        }

        Ok(LassoModel {
            w,
            lambda: self.lambda,
            objective_trace,
            sweeps_run,
        })
    }
}

impl LassoModel {
    /// `X·w`, distributed like the rows of `x`. No communication.
    pub fn predict(&self, x: &DndArray<f64>) -> Result<DndArray<f64>> {
        if x.ndim() != 2 || x.shape()[1] != self.w.len() {
            return Err(Error::ShapeMismatch {
                left: x.shape().to_vec(),
                right: vec![self.w.len()],
            });
        }
        let x = rows_split(x)?;
        let m = self.w.len();
        let pred: Vec<f64> = x
            .local()
            .data()
            .chunks_exact(m)
            .map(|row| row.iter().zip(&self.w).map(|(a, b)| a * b).sum())
            .collect();
        let rows = pred.len();
        DndArray::from_parts(vec![x.shape()[0]], x.split(), x.comm().clone(), Tile::new(vec![rows], pred)?)
    }

    /// `E(w)` on the given data.
    pub fn objective(&self, x: &DndArray<f64>, y: &DndArray<f64>) -> Result<f64> {
        let pred = self.predict(x)?;
        let y = match (pred.split(), y.split()) {
            (a, b) if a == b => y.clone(),
            (a, _) => y.resplit(a)?,
        };
        let rss = pred.zip_with(&y, |p, t| (t - p) * (t - p))?.sum(None)?.item()?;
        Ok(rss + self.lambda * self.w[1..].iter().map(|v| v.abs()).sum::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Communicator;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
        assert_eq!(soft_threshold(3.0, 0.0), 3.0);
    }

    fn design(rows: &[&[f64]], c: &Communicator) -> DndArray<f64> {
        let m = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DndArray::from_global(&Tile::new(vec![rows.len(), m], data).unwrap(), Some(0), c).unwrap()
    }

    fn target(v: &[f64], c: &Communicator) -> DndArray<f64> {
        DndArray::from_global(&Tile::new(vec![v.len()], v.to_vec()).unwrap(), Some(0), c).unwrap()
    }

    #[test]
    fn zero_and_bias_only_predictions() {
        let c = Communicator::solo();
        let x = design(&[&[1.0, 2.0], &[1.0, -3.0]], &c);
        let zero = LassoModel {
            w: vec![0.0, 0.0],
            lambda: 0.0,
            objective_trace: vec![],
            sweeps_run: 0,
        };
        assert_eq!(zero.predict(&x).unwrap().local().data(), &[0.0, 0.0]);
        let bias = LassoModel { w: vec![2.5, 0.0], ..zero };
        assert_eq!(bias.predict(&x).unwrap().local().data(), &[2.5, 2.5]);
        let wide = design(&[&[1.0, 2.0, 3.0]], &c);
        assert!(bias.predict(&wide).is_err());
    }

    #[test]
    fn requires_bias_column() {
        let c = Communicator::solo();
        let x = design(&[&[2.0, 1.0], &[1.0, 0.0]], &c);
        let y = target(&[1.0, 2.0], &c);
        assert!(Lasso::new(0.1).fit(&x, &y).is_err());
        let short = target(&[1.0], &c);
        assert!(matches!(Lasso::new(0.1).fit(&x, &short), Err(Error::ShapeMismatch { .. })));
        assert!(Lasso::new(-1.0).fit(&design(&[&[1.0, 0.0]], &c), &short).is_err());
    }

    #[test]
    fn degenerate_column_stays_zero() {
        let c = Communicator::solo();
        let x = design(&[&[1.0, 0.0, 1.0], &[1.0, 0.0, 2.0], &[1.0, 0.0, 4.0]], &c);
        let y = target(&[1.0, 2.0, 4.0], &c);
        let model = Lasso::new(0.0).sweeps(200).fit(&x, &y).unwrap();
        assert_eq!(model.w[1], 0.0);
        assert!((model.w[2] - 1.0).abs() < 1e-8 && model.w[0].abs() < 1e-8);
    }

    #[test]
    fn objective_matches_trace() {
        let c = Communicator::solo();
        let x = design(&[&[1.0, 0.5], &[1.0, -1.0], &[1.0, 2.0]], &c);
        let y = target(&[1.0, 0.0, 3.0], &c);
        let model = Lasso::new(0.3).sweeps(5).fit(&x, &y).unwrap();
        let e = model.objective(&x, &y).unwrap();
        assert!((e - model.objective_trace.last().unwrap()).abs() < 1e-12);
    }
}
