#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use bgcn::error::{Error, Result};
use bgcn::graph_data::{Dataset, SparseMatrix};
use bgcn::target::{Evaluation, LogTarget, StreamRng};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn data_dir(name: &str) -> PathBuf {
    repo_root().join("data").join(name)
}

/// Correlated Gaussian with the whole log-density in the likelihood slot.
#[derive(Debug, Clone)]
pub struct Gaussian2 {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl Gaussian2 {
    fn precision(&self) -> [[f64; 2]; 2] {
        let [[a, b], [c, d]] = self.cov;
        let det = a * d - b * c;
        [[d / det, -b / det], [-c / det, a / det]]
    }
}

impl LogTarget for Gaussian2 {
    fn dim(&self) -> usize {
        2
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        Ok(self.evaluate_with_gradient(theta)?.0)
    }

    fn evaluate_with_gradient(&self, theta: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        let p = self.precision();
        let d = [theta[0] - self.mean[0], theta[1] - self.mean[1]];
        let pd = [p[0][0] * d[0] + p[0][1] * d[1], p[1][0] * d[0] + p[1][1] * d[1]];
        let ll = -0.5 * (d[0] * pd[0] + d[1] * pd[1]);
        Ok((
            Evaluation {
                log_lik: ll,
                log_prior: 0.0,
                train_accuracy: f64::NAN,
                test_accuracy: f64::NAN,
            },
            vec![-pd[0], -pd[1]],
        ))
    }

    fn initial_position(&self, rng: &mut StreamRng) -> Vec<f64> {
        vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
    }
}

/// One-dimensional target given by a closure over the log-density.
pub struct Scalar<F: Fn(f64) -> f64 + Sync> {
    pub log_density: F,
    pub start: f64,
}

impl<F: Fn(f64) -> f64 + Sync> LogTarget for Scalar<F> {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        Ok(Evaluation {
            log_lik: (self.log_density)(theta[0]),
            log_prior: 0.0,
            train_accuracy: f64::NAN,
            test_accuracy: f64::NAN,
        })
    }

    fn evaluate_with_gradient(&self, theta: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        let h = 1e-6;
        let g = ((self.log_density)(theta[0] + h) - (self.log_density)(theta[0] - h)) / (2.0 * h);
        Ok((self.evaluate(theta)?, vec![g]))
    }

    fn initial_position(&self, _rng: &mut StreamRng) -> Vec<f64> {
        vec![self.start]
    }
}

/// Target that fails after a fixed number of evaluations.
pub struct Failing {
    pub calls: std::sync::atomic::AtomicUsize,
    pub fail_after: usize,
}

impl LogTarget for Failing {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        if n >= self.fail_after {
            return Err(Error::NonFinite("synthetic failure".into()));
        }
        Ok(Evaluation {
            log_lik: -0.5 * theta[0] * theta[0],
            log_prior: 0.0,
            train_accuracy: f64::NAN,
            test_accuracy: f64::NAN,
        })
    }

    fn evaluate_with_gradient(&self, theta: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        Ok((self.evaluate(theta)?, vec![-theta[0]]))
    }

    fn initial_position(&self, _rng: &mut StreamRng) -> Vec<f64> {
        vec![0.0]
    }
}

/// A small random graph dataset with sparse nonnegative features.
pub fn random_dataset(seed: u64, nodes: usize, features: usize, classes: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for a in 0..nodes {
        for b in a + 1..nodes {
            if rng.random::<f64>() < 0.25 {
                edges.push((a, b));
            }
        }
    }
    let mut triplets = Vec::new();
    for r in 0..nodes {
        for c in 0..features {
            if rng.random::<f64>() < 0.4 {
                triplets.push((r, c, rng.random_range(0.1..2.0)));
            }
        }
    }
    let x = SparseMatrix::from_triplets(nodes, features, &triplets).unwrap();
    let labels: Vec<usize> = (0..nodes).map(|i| if i < classes { i } else { rng.random_range(0..classes) }).collect();
    let train: Vec<usize> = (0..nodes).filter(|i| i % 2 == 0).collect();
    let test: Vec<usize> = (0..nodes).filter(|i| i % 2 == 1).collect();
    Dataset::from_parts(nodes, features, classes, &edges, x, labels, train, test).unwrap()
}

/// Writes a dataset in the on-disk directory format.
pub fn write_dataset(dir: &Path, ds: &Dataset) {
    fs::create_dir_all(dir).unwrap();
    fs::write(
        dir.join("meta.json"),
        format!(
            "{{\"nodes\": {}, \"features\": {}, \"classes\": {}}}\n",
            ds.num_nodes, ds.num_features, ds.num_classes
        ),
    )
    .unwrap();
    let edges: String = ds.edges.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect();
    fs::write(dir.join("graph.edges"), edges).unwrap();
    let mut feats = String::new();
    for r in 0..ds.num_nodes {
        let (cols, vals) = ds.features.row(r);
        for (c, v) in cols.iter().zip(vals) {
            feats.push_str(&format!("{r}\t{c}\t{v}\n"));
        }
    }
    fs::write(dir.join("features.tsv"), feats).unwrap();
    let labels: String = ds.labels.iter().map(|y| format!("{y}\n")).collect();
    fs::write(dir.join("labels.txt"), labels).unwrap();
    fs::write(
        dir.join("splits.json"),
        format!("{{\"train\": {:?}, \"test\": {:?}}}\n", ds.train_mask, ds.test_mask),
    )
    .unwrap();
}

/// Dense reference forward pass: builds Â from the edge list and returns the
/// row log-softmax of the two-layer network with relu.
pub fn dense_log_probs(ds: &Dataset, hidden: usize, theta: &[f64]) -> Vec<Vec<f64>> {
    let n = ds.num_nodes;
    let (f, c) = (ds.num_features, ds.num_classes);
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(i, j) in &ds.edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i][j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    let x = ds.features.to_dense();
    let w0 = |i: usize, k: usize| theta[i * hidden + k];
    let b0 = |k: usize| theta[f * hidden + k];
    let off = f * hidden + hidden;
    let w1 = |k: usize, o: usize| theta[off + k * c + o];
    let b1 = |o: usize| theta[off + hidden * c + o];

    let matmul = |left: &Vec<Vec<f64>>, right: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let cols = right[0].len();
        left.iter()
            .map(|row| {
                (0..cols)
                    .map(|j| row.iter().zip(right).map(|(l, r)| l * r[j]).sum())
                    .collect()
            })
            .collect()
    };
    let xw: Vec<Vec<f64>> = (0..n)
        .map(|r| (0..hidden).map(|k| (0..f).map(|i| x[[r, i]] * w0(i, k)).sum()).collect())
        .collect();
    let h: Vec<Vec<f64>> = matmul(&a, &xw)
        .into_iter()
        .map(|row| row.iter().enumerate().map(|(k, v)| (v + b0(k)).max(0.0)).collect())
        .collect();
    let hw: Vec<Vec<f64>> = h
        .iter()
        .map(|row| (0..c).map(|o| (0..hidden).map(|k| row[k] * w1(k, o)).sum()).collect())
        .collect();
    matmul(&a, &hw)
        .into_iter()
        .map(|row| {
            let z: Vec<f64> = row.iter().enumerate().map(|(o, v)| v + b1(o)).collect();
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            z.iter().map(|v| v - lse).collect()
        })
        .collect()
}

/// Training log-likelihood plus `−‖θ‖²/(2σ²)`, from the dense reference.
pub fn dense_log_posterior_kernel(ds: &Dataset, hidden: usize, theta: &[f64], prior_var: f64) -> f64 {
    let lp = dense_log_probs(ds, hidden, theta);
    let ll: f64 = ds.train_mask.iter().map(|&i| lp[i][ds.labels[i]]).sum();
    ll - theta.iter().map(|t| t * t).sum::<f64>() / (2.0 * prior_var)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub coordinates: usize,
    pub failures: usize,
    /// Worst relative error among coordinates with gradient above 1e-6.
    pub worst_rel: f64,
    pub worst_abs: f64,
    pub params: usize,
    pub nodes: usize,
}

/// Compares the analytic gradient on one random instance with central
/// differences (step 1e-5) of the dense reference. A coordinate passes when
/// the relative error is below 1e-5 or the absolute error below 1e-8.
pub fn fd_gradient_check(seed: u64) -> FdReport {
    use bgcn::graph_data::normalize;
    use bgcn::model::{grad_log_posterior, Gcn, ParamVector, Topology};
    use rand_distr::StandardNormal;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = rng.random_range(3..=20);
    let classes = rng.random_range(2..=4);
    let hidden = rng.random_range(2..=8);
    let max_features = (600 - classes - hidden) / (hidden + 1) - classes;
    let features = rng.random_range(1..=max_features.min(40));
    let ds = random_dataset(seed ^ 0x5eed, nodes, features, classes);
    let topo = Topology::new(features, hidden, classes);
    assert!(topo.param_count() <= 600);
    let values: Vec<f64> = (0..topo.param_count())
        .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let theta = ParamVector::from_values(topo, values.clone()).unwrap();
    let prior_var = 25.0;
    let g = normalize(&ds);
    let grad = grad_log_posterior(
        &Gcn::new(topo),
        &g,
        &ds.features,
        &ds.labels,
        &ds.train_mask,
        &theta,
        prior_var,
    )
    .unwrap();

    let h = 1e-5;
    let mut report = FdReport {
        params: values.len(),
        nodes,
        ..FdReport::default()
    };
    let mut probe = values.clone();
    for i in 0..values.len() {
        probe[i] = values[i] + h;
        let up = dense_log_posterior_kernel(&ds, hidden, &probe, prior_var);
        probe[i] = values[i] - h;
        let down = dense_log_posterior_kernel(&ds, hidden, &probe, prior_var);
        probe[i] = values[i];
        let fd = (up - down) / (2.0 * h);
        let abs = (fd - grad.values[i]).abs();
        let rel = abs / fd.abs().max(grad.values[i].abs()).max(f64::MIN_POSITIVE);
        report.coordinates += 1;
        if !(rel < 1e-5 || abs < 1e-8) {
            report.failures += 1;
        }
        report.worst_abs = report.worst_abs.max(abs);
        if fd.abs().max(grad.values[i].abs()) > 1e-6 {
            report.worst_rel = report.worst_rel.max(rel);
        }
    }
    report
}
