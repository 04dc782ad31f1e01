//! Two-layer graph convolutional network and its log-posterior.
//!
//! ```text
//! logits = Â · act(Â · X · W0 + b0) · W1 + b1
//! ```
//!
//! Parameters live in one flat vector laid out as `W0` (row-major,
//! `in × hidden`), `b0`, `W1` (row-major, `hidden × out`), `b1`. Weight ids
//! used by the diagnostics index into this vector.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::{normalize, Dataset, NormalizedGraph, SparseMatrix};
use crate::target::{Evaluation, LogTarget, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub in_features: usize,
    pub hidden: usize,
    pub out_classes: usize,
}

impl Topology {
    pub fn new(in_features: usize, hidden: usize, out_classes: usize) -> Self {
        Topology {
            in_features,
            hidden,
            out_classes,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.hidden + self.hidden + self.hidden * self.out_classes + self.out_classes
    }

    pub fn layout(&self) -> Layout {
        let w0 = 0..self.in_features * self.hidden;
        let b0 = w0.end..w0.end + self.hidden;
        let w1 = b0.end..b0.end + self.hidden * self.out_classes;
        let b1 = w1.end..w1.end + self.out_classes;
        Layout { w0, b0, w1, b1 }
    }
}

pub fn param_count(t: Topology) -> usize {
    t.param_count()
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub w0: Range<usize>,
    pub b0: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
}

/// Weights and biases as matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w0: Array2<f64>,
    pub b0: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
}

/// The flat parameter vector θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub topology: Topology,
}

impl ParamVector {
    pub fn zeros(topology: Topology) -> Self {
        ParamVector {
            values: vec![0.0; topology.param_count()],
            topology,
        }
    }

    pub fn from_values(topology: Topology, values: Vec<f64>) -> Result<Self> {
        if values.len() != topology.param_count() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                values.len(),
                topology.param_count()
            )));
        }
        Ok(ParamVector { values, topology })
    }

    pub fn unflatten(&self) -> Weights {
        let v = views(self.topology, &self.values);
        Weights {
            w0: v.w0.to_owned(),
            b0: v.b0.to_owned(),
            w1: v.w1.to_owned(),
            b1: v.b1.to_owned(),
        }
    }

    pub fn flatten(topology: Topology, w: &Weights) -> Result<Self> {
        let t = topology;
        if w.w0.dim() != (t.in_features, t.hidden)
            || w.b0.len() != t.hidden
            || w.w1.dim() != (t.hidden, t.out_classes)
            || w.b1.len() != t.out_classes
        {
            return Err(Error::Dimension("weight shapes do not match the topology".into()));
        }
        let mut values = Vec::with_capacity(t.param_count());
        values.extend(w.w0.iter());
        values.extend(w.b0.iter());
        values.extend(w.w1.iter());
        values.extend(w.b1.iter());
        Ok(ParamVector { values, topology })
    }

    /// Uniform in `±√(6/(fan_in+fan_out))` per weight matrix, zero biases.
    pub fn glorot(topology: Topology, rng: &mut impl Rng) -> Self {
        let layout = topology.layout();
        let mut values = vec![0.0; topology.param_count()];
        let blocks = [
            (layout.w0, topology.in_features + topology.hidden),
            (layout.w1, topology.hidden + topology.out_classes),
        ];
        for (range, fan) in blocks {
            let limit = (6.0 / fan as f64).sqrt();
            for v in &mut values[range] {
                *v = rng.random_range(-limit..limit);
            }
        }
        ParamVector { values, topology }
    }
}

struct WeightViews<'a> {
    w0: ArrayView2<'a, f64>,
    b0: ArrayView1<'a, f64>,
    w1: ArrayView2<'a, f64>,
    b1: ArrayView1<'a, f64>,
}

fn views(t: Topology, theta: &[f64]) -> WeightViews<'_> {
    let l = t.layout();
    WeightViews {
        w0: ArrayView2::from_shape((t.in_features, t.hidden), &theta[l.w0]).expect("layout"),
        b0: ArrayView1::from(&theta[l.b0]),
        w1: ArrayView2::from_shape((t.hidden, t.out_classes), &theta[l.w1]).expect("layout"),
        b1: ArrayView1::from(&theta[l.b1]),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the activation.
    fn derivative(self, pre: f64, act: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - act * act,
        }
    }
}

/// Forward-pass result with the activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub log_probs: Array2<f64>,
    pre_hidden: Array2<f64>,
    hidden: Array2<f64>,
}

impl ModelOutput {
    pub fn num_nodes(&self) -> usize {
        self.log_probs.nrows()
    }

    /// Predicted class per node, ties going to the lowest class index.
    pub fn predictions(&self) -> Vec<usize> {
        self.log_probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gcn {
    pub topology: Topology,
    pub activation: Activation,
}

impl Gcn {
    pub fn new(topology: Topology) -> Self {
        Gcn {
            topology,
            activation: Activation::Relu,
        }
    }

    fn check(&self, g: &NormalizedGraph, x: &SparseMatrix, theta: &[f64]) -> Result<()> {
        let t = self.topology;
        if theta.len() != t.param_count() {
            return Err(Error::Dimension(format!(
                "θ has {} entries, topology needs {}",
                theta.len(),
                t.param_count()
            )));
        }
        if x.cols != t.in_features || x.rows != g.n {
            return Err(Error::Dimension(format!(
                "features are {}x{}, graph has {} nodes and the topology expects {} inputs",
                x.rows, x.cols, g.n, t.in_features
            )));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", theta[i])));
        }
        Ok(())
    }

    pub fn forward(&self, g: &NormalizedGraph, x: &SparseMatrix, theta: &[f64]) -> Result<ModelOutput> {
        self.check(g, x, theta)?;
        let w = views(self.topology, theta);
        let xw = x.mul_dense(w.w0)?;
        let mut pre_hidden = g.spmm(xw.view())?;
        pre_hidden += &w.b0;
        let act = self.activation;
        let hidden = pre_hidden.mapv(|v| act.apply(v));
        let hw = hidden.dot(&w.w1);
        let mut logits = g.spmm(hw.view())?;
        logits += &w.b1;
        log_softmax_rows(&mut logits);
        Ok(ModelOutput {
            log_probs: logits,
            pre_hidden,
            hidden,
        })
    }

    /// Gradient of `log_likelihood(mask)` (plus `log_prior` when `prior_var` is
    /// given) by reverse-mode through softmax, both layers and both graph
    /// products.
    #[allow(clippy::too_many_arguments)]
    pub fn gradient(
        &self,
        g: &NormalizedGraph,
        x: &SparseMatrix,
        theta: &[f64],
        out: &ModelOutput,
        labels: &[usize],
        mask: &[usize],
        prior_var: Option<f64>,
    ) -> Result<Vec<f64>> {
        self.check(g, x, theta)?;
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let t = self.topology;
        let w = views(t, theta);

        // d loglik / d logits
        let mut d_logits = Array2::<f64>::zeros(out.log_probs.raw_dim());
        for &i in mask {
            let mut row = d_logits.row_mut(i);
            row.assign(&out.log_probs.row(i).mapv(|lp| -lp.exp()));
            row[labels[i]] += 1.0;
        }
        let d_b1 = d_logits.sum_axis(Axis(0));
        let d_hw = g.spmm(d_logits.view())?;
        let d_w1 = out.hidden.t().dot(&d_hw);
        let mut d_pre = d_hw.dot(&w.w1.t());
        let act = self.activation;
        Zip::from(&mut d_pre)
            .and(&out.pre_hidden)
            .and(&out.hidden)
            .for_each(|d, &p, &h| *d *= act.derivative(p, h));
        let d_b0 = d_pre.sum_axis(Axis(0));
        let d_xw = g.spmm(d_pre.view())?;
        let d_w0 = x.transpose_mul_dense(d_xw.view())?;

        let mut grad = Vec::with_capacity(t.param_count());
        grad.extend(d_w0.iter());
        grad.extend(d_b0.iter());
        grad.extend(d_w1.iter());
        grad.extend(d_b1.iter());
        if let Some(var) = prior_var {
            for (gi, th) in grad.iter_mut().zip(theta) {
                *gi -= th / var;
            }
        }
        Ok(grad)
    }
}

fn log_softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
}

pub fn forward(gcn: &Gcn, g: &NormalizedGraph, x: &SparseMatrix, theta: &ParamVector) -> Result<ModelOutput> {
    gcn.forward(g, x, &theta.values)
}

/// `Σ_{i∈mask} log p(yᵢ | θ)`.
pub fn log_likelihood(out: &ModelOutput, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(mask.iter().map(|&i| out.log_probs[[i, labels[i]]]).sum())
}

/// Isotropic Gaussian log-density with variance `var` over every parameter.
pub fn log_prior(theta: &[f64], var: f64) -> Result<f64> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::invalid(format!("prior variance must be positive, got {var}")));
    }
    let p = theta.len() as f64;
    let sq: f64 = theta.iter().map(|v| v * v).sum();
    Ok(-0.5 * p * (2.0 * std::f64::consts::PI * var).ln() - sq / (2.0 * var))
}

/// Percentage of masked nodes whose arg-max class is the label.
pub fn accuracy(out: &ModelOutput, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let pred = out.predictions();
    let hits = mask.iter().filter(|&&i| pred[i] == labels[i]).count();
    Ok(100.0 * hits as f64 / mask.len() as f64)
}

/// Full gradient of the log-posterior.
pub fn grad_log_posterior(
    gcn: &Gcn,
    g: &NormalizedGraph,
    x: &SparseMatrix,
    labels: &[usize],
    mask: &[usize],
    theta: &ParamVector,
    prior_var: f64,
) -> Result<ParamVector> {
    let out = gcn.forward(g, x, &theta.values)?;
    let grad = gcn.gradient(g, x, &theta.values, &out, labels, mask, Some(prior_var))?;
    ParamVector::from_values(theta.topology, grad)
}

/// The GCN posterior over a dataset, as seen by the sampler. The likelihood
/// covers the training mask; accuracies cover the training and test masks.
#[derive(Debug, Clone)]
pub struct GcnPosterior {
    pub dataset: Dataset,
    pub graph: NormalizedGraph,
    pub gcn: Gcn,
    pub prior_var: f64,
    /// When false the proposal gradient covers the likelihood only.
    pub prior_in_gradient: bool,
}

impl GcnPosterior {
    pub fn new(dataset: Dataset, hidden: usize, prior_var: f64) -> Result<Self> {
        if !(prior_var > 0.0 && prior_var.is_finite()) {
            return Err(Error::invalid(format!("prior variance must be positive, got {prior_var}")));
        }
        if hidden == 0 || dataset.num_classes == 0 || dataset.num_features == 0 {
            return Err(Error::invalid("topology dimensions must be at least 1"));
        }
        if dataset.train_mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let graph = normalize(&dataset);
        let topology = Topology::new(dataset.num_features, hidden, dataset.num_classes);
        Ok(GcnPosterior {
            dataset,
            graph,
            gcn: Gcn::new(topology),
            prior_var,
            prior_in_gradient: true,
        })
    }

    pub fn topology(&self) -> Topology {
        self.gcn.topology
    }

    fn summarize(&self, theta: &[f64], out: &ModelOutput) -> Result<Evaluation> {
        let ds = &self.dataset;
        let test_accuracy = if ds.test_mask.is_empty() {
            f64::NAN
        } else {
            accuracy(out, &ds.labels, &ds.test_mask)?
        };
        Ok(Evaluation {
            log_lik: log_likelihood(out, &ds.labels, &ds.train_mask)?,
            log_prior: log_prior(theta, self.prior_var)?,
            train_accuracy: accuracy(out, &ds.labels, &ds.train_mask)?,
            test_accuracy,
        })
    }
}

impl LogTarget for GcnPosterior {
    fn dim(&self) -> usize {
        self.gcn.topology.param_count()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let out = self.gcn.forward(&self.graph, &self.dataset.features, theta)?;
        self.summarize(theta, &out)
    }

    fn evaluate_with_gradient(&self, theta: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        let ds = &self.dataset;
        let out = self.gcn.forward(&self.graph, &ds.features, theta)?;
        let prior = self.prior_in_gradient.then_some(self.prior_var);
        let grad = self
            .gcn
            .gradient(&self.graph, &ds.features, theta, &out, &ds.labels, &ds.train_mask, prior)?;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((self.summarize(theta, &out)?, grad))
    }

    fn initial_position(&self, rng: &mut StreamRng) -> Vec<f64> {
        ParamVector::glorot(self.gcn.topology, rng).values
    }
}
