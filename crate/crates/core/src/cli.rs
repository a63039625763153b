//! The `dnd` command-line harness: `convert`, `bench` and `verify`.
//!
//! Every run hosts a loopback world of `--ranks` workers (default: the
//! `DND_RANKS` environment variable, else 1). `bench` prints one JSON object
//! per invocation; `verify` compares a distributed run against a single-rank
//! run and reports through its exit code.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::array::DndArray;
use crate::cluster::KMeans;
use crate::dataio::{self, DnbHeader};
use crate::distribution::Tile;
use crate::moments::{self, Combiner, MomentState};
use crate::pairwise;
use crate::regression::Lasso;
use crate::scalar::DType;
use crate::transport::{try_run, Communicator, LoopbackConfig};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "dnd", version, about = "Distributed array benchmarks and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a numeric CSV file into a DNB file
    Convert(ConvertArgs),
    /// Time an algorithm and print a JSON report
    Bench(BenchArgs),
    /// Compare a distributed run against a single-rank run
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    pub src: PathBuf,
    pub dst: PathBuf,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,
    /// Skip the first CSV line
    #[arg(long)]
    pub header: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Moments,
    Cdist,
    Kmeans,
    Lasso,
}

impl Algo {
    fn name(self) -> &'static str {
        match self {
            Algo::Moments => "moments",
            Algo::Cdist => "cdist",
            Algo::Kmeans => "kmeans",
            Algo::Lasso => "lasso",
        }
    }

    /// Synthetic shapes: short-fat for moments, tall-skinny 18-feature for
    /// distances, 600 rows for k-means and 100 columns for LASSO.
    fn default_shape(self) -> Shape2 {
        let (rows, cols) = match self {
            Algo::Moments => (1200, 1000),
            Algo::Cdist => (2000, 18),
            Algo::Kmeans => (600, 8),
            Algo::Lasso => (5000, 100),
        };
        Shape2 { rows, cols }
    }

    fn default_iters(self) -> usize {
        match self {
            Algo::Kmeans => 30,
            Algo::Lasso => 20,
            _ => 0,
        }
    }
}

/// `ROWSxCOLS`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape2 {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for Shape2 {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        Ok(Self {
            rows: parse(r)?,
            cols: parse(c)?,
        })
    }
}

/// A split axis or `none`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisArg(pub Option<usize>);

impl FromStr for AxisArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Self(None)),
            v => v
                .parse()
                .map(|a| Self(Some(a)))
                .map_err(|_| format!("expected an axis index or 'none', got {s:?}")),
        }
    }
}

impl AxisArg {
    fn label(self) -> String {
        self.0.map_or_else(|| "none".to_string(), |a| a.to_string())
    }
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    #[arg(value_enum)]
    pub algo: Algo,
    /// Loopback world size [default: $DND_RANKS or 1]
    #[arg(long)]
    pub ranks: Option<usize>,
    /// Input DNB file
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generate ROWSxCOLS synthetic data
    #[arg(long)]
    pub synthetic: Option<Shape2>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split axis of the input: 0, 1 or none
    #[arg(long, default_value = "0")]
    pub split: AxisArg,
    /// Reduction axis for moments: 0, 1 or none
    #[arg(long, default_value = "none")]
    pub axis: AxisArg,
    #[arg(long, default_value_t = 0)]
    pub ddof: u64,
    /// Number of clusters
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Lloyd iterations (k-means, default 30) or coordinate sweeps (LASSO, default 20)
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OutFormat {
    Json,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 9)]
    pub runs: usize,
    #[arg(long, value_enum, default_value = "json")]
    pub out: OutFormat,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Largest accepted relative deviation
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Use a broken moment combiner (exercises the failure path)
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// One benchmark result, serialized as a single JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub algo: Algo,
    pub ranks: usize,
    pub split: String,
    pub params: BTreeMap<String, Value>,
    pub warmup_runs: usize,
    pub timed_runs: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub times_seconds: Vec<f64>,
}

/// Input of one algorithm run on one rank.
enum Dataset {
    Matrix(DndArray<f64>),
    Regression { x: DndArray<f64>, y: DndArray<f64> },
}

impl Dataset {
    fn rows_cols(&self) -> (usize, usize) {
        let a = match self {
            Dataset::Matrix(a) => a,
            Dataset::Regression { x, .. } => x,
        };
        (a.shape()[0], a.shape()[1])
    }
}

/// Result of one algorithm run, replicated on every rank.
#[derive(Clone, Debug)]
enum Outcome {
    Moments { mean: Vec<f64>, var: Vec<f64>, std: Vec<f64> },
    Cdist(Vec<f64>),
    Kmeans { centroids: Vec<f64>, labels: Vec<u64>, inertia: Vec<f64> },
    Lasso { w: Vec<f64>, objective: Vec<f64> },
}

fn world(ranks: Option<usize>) -> LoopbackConfig {
    let mut cfg = LoopbackConfig::from_env();
    if let Some(r) = ranks {
        cfg.size = r.max(1);
    }
    cfg
}

fn load_matrix(path: &PathBuf, split: Option<usize>, comm: &Communicator) -> Result<DndArray<f64>> {
    let header = DnbHeader::read(path)?;
    if header.extents.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "{}: expected a 2-d array, found shape {:?}",
            path.display(),
            header.extents
        )));
    }
    match header.dtype {
        DType::F64 => dataio::load::<f64>(path, split, comm),
        DType::F32 => Ok(dataio::load::<f32>(path, split, comm)?.map(f64::from)),
    }
}

/// Splits `[features | target]` rows into a design matrix with a leading
/// bias column and the target vector. Works on row-split or replicated data.
fn regression_from_matrix(a: &DndArray<f64>) -> Result<(DndArray<f64>, DndArray<f64>)> {
    let a = match a.split() {
        Some(1) => a.resplit(Some(0))?,
        _ => a.clone(),
    };
    let (n, cols) = (a.shape()[0], a.shape()[1]);
    if cols < 1 {
        return Err(Error::InvalidArgument("LASSO data needs a target column".into()));
    }
    let rows = a.lshape()[0];
    let mut x = Vec::with_capacity(rows * cols);
    let mut y = Vec::with_capacity(rows);
    for row in a.local().data().chunks_exact(cols) {
        x.push(1.0);
        x.extend_from_slice(&row[..cols - 1]);
        y.push(row[cols - 1]);
    }
    let comm = a.comm().clone();
    let xa = DndArray::from_parts(vec![n, cols], a.split(), comm.clone(), Tile::new(vec![rows, cols], x)?)?;
    let ya = DndArray::from_parts(vec![n], a.split(), comm, Tile::new(vec![rows], y)?)?;
    Ok((xa, ya))
}

/// Standardized features `√3·(2u − 1)`, a bias column, and a sparse linear
/// target with small uniform noise.
fn synthetic_regression(shape: Shape2, seed: u64, comm: &Communicator) -> Result<(DndArray<f64>, DndArray<f64>)> {
    let Shape2 { rows, cols } = shape;
    if cols < 1 {
        return Err(Error::InvalidArgument("LASSO needs at least the bias column".into()));
    }
    let u = DndArray::<f64>::random_uniform(&[rows, cols], Some(0), seed, comm)?;
    let noise = DndArray::<f64>::random_uniform(&[rows], Some(0), seed.wrapping_add(1), comm)?;
    let w_true: Vec<f64> = (0..cols)
        .map(|j| match j {
            0 => 0.5,
            j if j % 3 == 1 => 1.0 / j as f64,
            _ => 0.0,
        })
        .collect();
    let local_rows = u.lshape()[0];
    let mut x = Vec::with_capacity(local_rows * cols);
    let mut y = Vec::with_capacity(local_rows);
    for (row, e) in u.local().data().chunks_exact(cols).zip(noise.local().data()) {
        let start = x.len();
        x.push(1.0);
        x.extend(row[1..].iter().map(|v| 3f64.sqrt() * (2.0 * v - 1.0)));
        let xr = &x[start..];
        y.push(xr.iter().zip(&w_true).map(|(a, b)| a * b).sum::<f64>() + 0.1 * (e - 0.5));
    }
    let xa = DndArray::from_parts(vec![rows, cols], Some(0), comm.clone(), Tile::new(vec![local_rows, cols], x)?)?;
    let ya = DndArray::from_parts(vec![rows], Some(0), comm.clone(), Tile::new(vec![local_rows], y)?)?;
    Ok((xa, ya))
}

fn prepare(args: &CommonArgs, comm: &Communicator) -> Result<Dataset> {
    let split = args.split.0;
    if let Some(s) = split {
        if s > 1 {
            return Err(Error::InvalidAxis { axis: s, ndim: 2 });
        }
    }
    let data = match (&args.data, args.algo) {
        (Some(path), Algo::Lasso) => {
            let (x, y) = regression_from_matrix(&load_matrix(path, split, comm)?)?;
            Dataset::Regression {
                x: x.resplit(split)?,
                y: y.resplit(split.map(|_| 0))?,
            }
        }
        (Some(path), _) => Dataset::Matrix(load_matrix(path, split, comm)?),
        (None, Algo::Lasso) => {
            let shape = args.synthetic.unwrap_or(args.algo.default_shape());
            let (x, y) = synthetic_regression(shape, args.seed, comm)?;
            Dataset::Regression {
                x: x.resplit(split)?,
                y: y.resplit(split.map(|_| 0))?,
            }
        }
        (None, _) => {
            let Shape2 { rows, cols } = args.synthetic.unwrap_or(args.algo.default_shape());
            Dataset::Matrix(DndArray::random_uniform(&[rows, cols], split, args.seed, comm)?)
        }
    };

    let (rows, cols) = data.rows_cols();
    match args.algo {
        Algo::Moments => {
            if let Some(a) = args.axis.0 {
                if a > 1 {
                    return Err(Error::InvalidAxis { axis: a, ndim: 2 });
                }
            }
            let n = args.axis.0.map_or(rows * cols, |a| if a == 0 { rows } else { cols });
            if n as u64 <= args.ddof {
                return Err(Error::NotEnoughSamples {
                    n: n as u64,
                    ddof: args.ddof,
                });
            }
        }
        Algo::Cdist if rows * cols == 0 => {
            return Err(Error::InvalidArgument("cdist needs a non-empty matrix".into()));
        }
        Algo::Kmeans if args.k == 0 || args.k > rows => {
            return Err(Error::InvalidArgument(format!("k={} must be in 1..={rows}", args.k)));
        }
        Algo::Lasso if rows == 0 || args.lambda < 0.0 || args.lambda.is_nan() => {
            return Err(Error::InvalidArgument("LASSO needs rows and lambda >= 0".into()));
        }
        _ => {}
    }
    Ok(data)
}

fn gathered<T: crate::transport::Element>(a: &DndArray<T>) -> Result<Vec<T>> {
    Ok(a.gather()?.into_data())
}

fn execute(args: &CommonArgs, data: &Dataset, combiner: Combiner) -> Result<Outcome> {
    let iters = args.iters.unwrap_or(args.algo.default_iters());
    match (args.algo, data) {
        (Algo::Moments, Dataset::Matrix(a)) => {
            let axis = args.axis.0;
            let mean = moments::mean_with(a, axis, combiner)?;
            let var = moments::var_with(a, axis, args.ddof, combiner)?;
            let std = var.sqrt();
            Ok(Outcome::Moments {
                mean: gathered(&mean)?,
                var: gathered(&var)?,
                std: gathered(&std)?,
            })
        }
        (Algo::Cdist, Dataset::Matrix(a)) => Ok(Outcome::Cdist(gathered(&pairwise::cdist(a)?)?)),
        (Algo::Kmeans, Dataset::Matrix(a)) => {
            let model = KMeans::new(args.k).max_iter(iters.max(1)).seed(args.seed).fit(a)?;
            let labels = gathered(&model.predict(a)?)?;
            Ok(Outcome::Kmeans {
                centroids: model.centroids.into_data(),
                labels,
                inertia: model.inertia_trace,
            })
        }
        (Algo::Lasso, Dataset::Regression { x, y }) => {
            let model = Lasso::new(args.lambda).sweeps(iters).fit(x, y)?;
            Ok(Outcome::Lasso {
                w: model.w,
                objective: model.objective_trace,
            })
        }
        _ => unreachable!("dataset matches algorithm"),
    }
}

/// A combiner that averages means and drops the between-group term.
fn broken_combine(a: MomentState, b: MomentState) -> Result<MomentState> {
    if a.n == 0 {
        return Ok(b);
    }
    if b.n == 0 {
        return Ok(a);
    }
    Ok(MomentState {
        n: a.n + b.n,
        mean: a.mean.iter().zip(&b.mean).map(|(x, y)| 0.5 * (x + y)).collect(),
        m2: a.m2.iter().zip(&b.m2).map(|(x, y)| x + y).collect(),
    })
}

fn params(args: &CommonArgs, data: &Dataset) -> BTreeMap<String, Value> {
    let (rows, cols) = data.rows_cols();
    let mut p = BTreeMap::new();
    p.insert("rows".into(), json!(rows));
    p.insert("cols".into(), json!(cols));
    match &args.data {
        Some(path) => p.insert("data".into(), json!(path.display().to_string())),
        None => p.insert("seed".into(), json!(args.seed)),
    };
    let iters = args.iters.unwrap_or(args.algo.default_iters());
    match args.algo {
        Algo::Moments => {
            p.insert("axis".into(), json!(args.axis.label()));
            p.insert("ddof".into(), json!(args.ddof));
        }
        Algo::Cdist => {}
        Algo::Kmeans => {
            p.insert("k".into(), json!(args.k));
            p.insert("iters".into(), json!(iters));
        }
        Algo::Lasso => {
            p.insert("lambda".into(), json!(args.lambda));
            p.insert("iters".into(), json!(iters));
        }
    }
    p
}

/// Runs warmup and timed repetitions inside a loopback world. Each timed
/// run is bracketed by barriers; timing statistics use rank 0's clock.
pub fn run_bench(args: &BenchArgs) -> Result<BenchReport> {
    if args.runs == 0 {
        return Err(Error::InvalidArgument("--runs must be at least 1".into()));
    }
    let cfg = world(args.common.ranks);
    let ranks = cfg.size;
    let mut reports = try_run(cfg, |comm| {
        let data = prepare(&args.common, &comm)?;
        for _ in 0..args.warmup {
            execute(&args.common, &data, moments::combine)?;
        }
        let mut times = Vec::with_capacity(args.runs);
        for _ in 0..args.runs {
            comm.barrier()?;
            let t0 = Instant::now();
            execute(&args.common, &data, moments::combine)?;
            comm.barrier()?;
            times.push(t0.elapsed().as_secs_f64());
        }
        let times = comm.allgather_varying(times)?.swap_remove(0);
        let series = DndArray::from_global(&Tile::new(vec![times.len()], times.clone())?, None, &comm)?;
        let ddof = u64::from(times.len() > 1);
        let mean_seconds = moments::mean(&series, None)?.item()?;
        let std_seconds = moments::std(&series, None, ddof)?.item()?;
        Ok::<_, Error>(BenchReport {
            algo: args.common.algo,
            ranks,
            split: args.common.split.label(),
            params: params(&args.common, &data),
            warmup_runs: args.warmup,
            timed_runs: args.runs,
            mean_seconds,
            std_seconds,
            times_seconds: times,
        })
    })?;
    Ok(reports.swap_remove(0))
}

/// Deviation summary of one verification.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub max_abs: f64,
    pub max_rel: f64,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Largest absolute difference and the same scaled by the largest reference
/// magnitude.
fn deviation(got: &[f64], want: &[f64]) -> (f64, f64) {
    if got.len() != want.len() {
        return (f64::INFINITY, f64::INFINITY);
    }
    let max_abs = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let max_rel = if max_abs == 0.0 { 0.0 } else { max_abs / scale.max(f64::MIN_POSITIVE) };
    (max_abs, max_rel)
}

fn monotone(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + slack)
}

/// Solves the normal equations `XᵀX w = Xᵀy` by Gaussian elimination with
/// partial pivoting.
pub fn least_squares(x: &Tile<f64>, y: &[f64]) -> Option<Vec<f64>> {
    let (n, m) = (x.extents()[0], x.extents()[1]);
    let xd = x.data();
    let mut a = vec![0.0; m * (m + 1)];
    for i in 0..n {
        let row = &xd[i * m..(i + 1) * m];
        for j in 0..m {
            for k in 0..m {
                a[j * (m + 1) + k] += row[j] * row[k];
            }
            a[j * (m + 1) + m] += row[j] * y[i];
        }
    }
    let w = m + 1;
    for col in 0..m {
        let pivot = (col..m).max_by(|&p, &q| a[p * w + col].abs().total_cmp(&a[q * w + col].abs()))?;
        if a[pivot * w + col].abs() < 1e-300 {
            return None;
        }
        for k in 0..w {
            a.swap(col * w + k, pivot * w + k);
        }
        for r in 0..m {
            if r != col {
                let f = a[r * w + col] / a[col * w + col];
                for k in col..w {
                    a[r * w + k] -= f * a[col * w + k];
                }
            }
        }
    }
    Some((0..m).map(|j| a[j * w + m] / a[j * w + j]).collect())
}

fn compare(dist: &Outcome, solo: &Outcome, tol: f64) -> VerifyReport {
    let mut failures = Vec::new();
    let (got, want): (Vec<f64>, Vec<f64>) = match (dist, solo) {
        (Outcome::Moments { mean, var, std }, Outcome::Moments { mean: m, var: v, std: s }) => (
            mean.iter().chain(var).chain(std).copied().collect(),
            m.iter().chain(v).chain(s).copied().collect(),
        ),
        (Outcome::Cdist(a), Outcome::Cdist(b)) => (a.clone(), b.clone()),
        (
            Outcome::Kmeans { centroids, labels, inertia },
            Outcome::Kmeans { centroids: c, labels: l, .. },
        ) => {
            if labels != l {
                failures.push("k-means labels differ from the single-rank run".to_string());
            }
            if !monotone(inertia, 1e-9) {
                failures.push("k-means inertia increased between iterations".to_string());
            }
            (centroids.clone(), c.clone())
        }
        (Outcome::Lasso { w, objective }, Outcome::Lasso { w: w1, .. }) => {
            if !monotone(objective, 1e-9) {
                failures.push("LASSO objective increased between sweeps".to_string());
            }
            (w.clone(), w1.clone())
        }
        _ => unreachable!("same algorithm on both sides"),
    };
    let (max_abs, max_rel) = deviation(&got, &want);
    if !(max_rel <= tol) {
        failures.push(format!("relative deviation {max_rel:e} exceeds tolerance {tol:e}"));
    }
    VerifyReport {
        max_abs,
        max_rel,
        failures,
    }
}

/// Runs the algorithm on `--ranks` ranks and on one rank and compares the
/// replicated results.
pub fn run_verify(args: &VerifyArgs) -> Result<VerifyReport> {
    let combiner: Combiner = if args.inject_fault {
        broken_combine
    } else {
        moments::combine
    };
    let common = &args.common;
    let dist = try_run(world(common.ranks), |comm| {
        let data = prepare(common, &comm)?;
        execute(common, &data, combiner)
    })?
    .swap_remove(0);
    let solo_comm = Communicator::solo();
    let solo_data = prepare(common, &solo_comm)?;
    let solo = execute(common, &solo_data, moments::combine)?;
    let mut report = compare(&dist, &solo, args.tol);

    if let (Algo::Lasso, Outcome::Lasso { w, .. }) = (common.algo, &dist) {
        if common.lambda == 0.0 {
            if let Dataset::Regression { x, y } = &solo_data {
                let xt = x.gather()?;
                let yt = y.gather()?;
                match least_squares(&xt, yt.data()) {
                    Some(ls) => {
                        let (_, rel) = deviation(w, &ls);
                        if !(rel <= 1e-6) {
                            report
                                .failures
                                .push(format!("lambda=0 fit deviates {rel:e} from least squares"));
                        }
                    }
                    None => report.failures.push("normal equations are singular".to_string()),
                }
            }
        }
    }
    Ok(report)
}

/// Parses `argv` and runs the selected subcommand, writing regular output
/// to `out` and diagnostics to `err`. Returns the process exit code.
pub fn main_with(argv: impl IntoIterator<Item = String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match cli.command {
        Command::Convert(a) => {
            let dtype = match a.dtype {
                DtypeArg::F32 => DType::F32,
                DtypeArg::F64 => DType::F64,
            };
            match dataio::csv_to_dnb(&a.src, &a.dst, dtype, a.header) {
                Ok(h) => {
                    let _ = writeln!(out, "wrote {} ({} {:?})", a.dst.display(), h.dtype, h.extents);
                    0
                }
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    2
                }
            }
        }
        Command::Bench(a) => match run_bench(&a) {
            Ok(report) => {
                let line = serde_json::to_string(&report).expect("report serializes");
                let _ = writeln!(out, "{line}");
                0
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                2
            }
        },
        Command::Verify(a) => match run_verify(&a) {
            Ok(report) => {
                let _ = writeln!(
                    out,
                    "{} ranks={}: max_abs={:e} max_rel={:e} tol={:e}",
                    a.common.algo.name(),
                    world(a.common.ranks).size,
                    report.max_abs,
                    report.max_rel,
                    a.tol
                );
                for f in &report.failures {
                    let _ = writeln!(out, "FAIL: {f}");
                }
                if report.passed() {
                    let _ = writeln!(out, "PASS");
                    0
                } else {
                    1
                }
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                2
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_axis_parsing() {
        assert_eq!("600x8".parse::<Shape2>().unwrap(), Shape2 { rows: 600, cols: 8 });
        assert!("600".parse::<Shape2>().is_err());
        assert_eq!("none".parse::<AxisArg>().unwrap(), AxisArg(None));
        assert_eq!("1".parse::<AxisArg>().unwrap(), AxisArg(Some(1)));
        assert!("x".parse::<AxisArg>().is_err());
    }

    #[test]
    fn bench_defaults_follow_protocol() {
        let cli = Cli::try_parse_from(["dnd", "bench", "kmeans"]).unwrap();
        match cli.command {
            Command::Bench(b) => {
                assert_eq!((b.warmup, b.runs), (1, 9));
                assert_eq!(b.common.k, 8);
                assert_eq!(b.common.algo.default_iters(), 30);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn deviation_measures() {
        assert_eq!(deviation(&[1.0, 2.0], &[1.0, 2.0]), (0.0, 0.0));
        let (a, r) = deviation(&[1.0, 2.5], &[1.0, 2.0]);
        assert_eq!(a, 0.5);
        assert_eq!(r, 0.25);
        assert_eq!(deviation(&[1.0], &[]).0, f64::INFINITY);
    }

    #[test]
    fn least_squares_exact_fit() {
        let x = Tile::new(vec![3, 2], vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        let w = least_squares(&x, &[1.0, 3.0, 5.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn broken_combiner_is_wrong() {
        let a = MomentState::from_slice(&[0.0, 0.0]);
        let b = MomentState::from_slice(&[10.0]);
        let good = moments::combine(a.clone(), b.clone()).unwrap();
        let bad = broken_combine(a, b).unwrap();
        assert_ne!(good.mean, bad.mean);
    }
}
