use dndarray::cluster::init_centroids;
use dndarray::moments;
use dndarray::pairwise::{cdist, cdist_xy};
use dndarray::regression::soft_threshold;
use dndarray::{run, Communicator, DndArray, KMeans, Lasso, LoopbackConfig, Tile};

fn uniform(shape: &[usize], split: Option<usize>, seed: u64, c: &Communicator) -> DndArray<f64> {
    DndArray::random_uniform(shape, split, seed, c).unwrap()
}

fn solo(shape: &[usize], seed: u64) -> Tile<f64> {
    uniform(shape, None, seed, &Communicator::solo()).into_local()
}

/// Plain Lloyd iterations on a dense row-major matrix.
fn naive_lloyd(x: &[f64], m: usize, mut cent: Vec<f64>, iters: usize) -> (Vec<f64>, Vec<usize>) {
    let n = x.len() / m;
    let k = cent.len() / m;
    let nearest = |cent: &[f64]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                let mut best = (f64::INFINITY, 0);
                for c in 0..k {
                    let d: f64 = (0..m).map(|j| (x[i * m + j] - cent[c * m + j]).powi(2)).sum();
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                best.1
            })
            .collect()
    };
    for _ in 0..iters {
        let labels = nearest(&cent);
        let mut sums = vec![0.0; k * m];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..m {
                sums[labels[i] * m + j] += x[i * m + j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..m {
                    cent[c * m + j] = sums[c * m + j] / counts[c] as f64;
                }
            }
        }
    }
    let labels = nearest(&cent);
    (cent, labels)
}

#[test]
fn kmeans_matches_naive_lloyd() {
    let (n, m, k) = (300, 4, 5);
    let x = solo(&[n, m], 11);
    let init = init_centroids(&uniform(&[n, m], None, 11, &Communicator::solo()), k, 2).unwrap();
    let (want_c, want_l) = naive_lloyd(x.data(), m, init.into_data(), 10);
    let out = run(LoopbackConfig::new(3), |c| {
        let xa = uniform(&[n, m], Some(0), 11, &c);
        let model = KMeans::new(k).max_iter(10).seed(2).fit(&xa).unwrap();
        let labels = model.predict(&xa).unwrap().gather().unwrap().into_data();
        (model.centroids.into_data(), labels)
    });
    for (cent, labels) in out {
        for (a, b) in cent.iter().zip(&want_c) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
        assert_eq!(labels, want_l.iter().map(|&l| l as u64).collect::<Vec<_>>());
    }
}

#[test]
fn kmeans_separates_obvious_clusters() {
    let pts: Vec<f64> = (0..40).flat_map(|i| {
        let base = if i % 2 == 0 { 0.0 } else { 100.0 };
        [base + (i as f64) * 0.01, base]
    }).collect();
    let x = Tile::new(vec![40, 2], pts).unwrap();
    let out = run(LoopbackConfig::new(4), |c| {
        let xa = DndArray::from_global(&x, Some(0), &c).unwrap();
        let model = KMeans::new(2).max_iter(10).seed(5).fit(&xa).unwrap();
        model.predict(&xa).unwrap().gather().unwrap().into_data()
    });
    for labels in out {
        for i in 0..40 {
            assert_eq!(labels[i] == labels[0], i % 2 == 0);
        }
    }
}

#[test]
fn moments_with_ddof_match_two_pass() {
    let x = solo(&[37, 6], 12);
    let (r, c) = (37, 6);
    let data = x.data();
    let col = |j: usize| (0..r).map(move |i| data[i * c + j]);
    let want: Vec<f64> = (0..c)
        .map(|j| {
            let mean = col(j).sum::<f64>() / r as f64;
            col(j).map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64
        })
        .collect();
    let out = run(LoopbackConfig::new(4), |comm| {
        let a = uniform(&[37, 6], Some(0), 12, &comm);
        moments::var(&a, Some(0), 1).unwrap().gather().unwrap().into_data()
    });
    for got in out {
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }
}

#[test]
fn too_few_samples_is_an_error() {
    let a = uniform(&[3, 2], Some(0), 1, &Communicator::solo());
    assert!(moments::var(&a, Some(0), 3).is_err());
}

#[test]
fn cdist_xy_matches_naive() {
    let (x, y) = (solo(&[23, 5], 13), solo(&[9, 5], 14));
    let out = run(LoopbackConfig::new(3), |c| {
        let xa = uniform(&[23, 5], Some(0), 13, &c);
        let ya = uniform(&[9, 5], Some(0), 14, &c);
        cdist_xy(&xa, &ya).unwrap().gather().unwrap().into_data()
    });
    for d in out {
        for i in 0..23 {
            for j in 0..9 {
                let want: f64 = (0..5)
                    .map(|k| (x.data()[i * 5 + k] - y.data()[j * 5 + k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d[i * 9 + j] - want).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn cdist_handles_more_ranks_than_rows() {
    let out = run(LoopbackConfig::new(5), |c| {
        let xa = uniform(&[3, 2], Some(0), 15, &c);
        cdist(&xa).unwrap().gather().unwrap()
    });
    for d in out {
        assert_eq!(d.extents(), &[3, 3]);
        for i in 0..3 {
            assert_eq!(d.data()[i * 4], 0.0);
        }
    }
}

#[test]
fn soft_threshold_shrinks_toward_zero() {
    assert_eq!(soft_threshold(3.0, 1.0), 2.0);
    assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
    assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
}

#[test]
fn lasso_rejects_missing_bias_column() {
    let x = Tile::new(vec![4, 2], vec![2.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]).unwrap();
    let y = Tile::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let c = Communicator::solo();
    let xa = DndArray::from_global(&x, Some(0), &c).unwrap();
    let ya = DndArray::from_global(&y, Some(0), &c).unwrap();
    assert!(Lasso::new(1.0).fit(&xa, &ya).is_err());
    assert!(Lasso::new(-1.0).fit(&xa, &ya).is_err());
}

#[test]
fn lasso_fits_an_exact_line() {
    // y = 2 + 3 x
    let xs = [-1.5, -0.5, 0.5, 1.5, 2.5];
    let x = Tile::new(vec![5, 2], xs.iter().flat_map(|&v| [1.0, v]).collect()).unwrap();
    let y = Tile::new(vec![5], xs.iter().map(|v| 2.0 + 3.0 * v).collect()).unwrap();
    let out = run(LoopbackConfig::new(2), |c| {
        let xa = DndArray::from_global(&x, Some(0), &c).unwrap();
        let ya = DndArray::from_global(&y, Some(0), &c).unwrap();
        Lasso::new(0.0).sweeps(200).fit(&xa, &ya).unwrap().w
    });
    for w in out {
        assert!((w[0] - 2.0).abs() < 1e-9 && (w[1] - 3.0).abs() < 1e-9, "{w:?}");
    }
}
