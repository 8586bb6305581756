//! Small differentiable classifiers with closed-form gradients.
//!
//! Two shapes: plain softmax regression and a one-hidden-layer tanh MLP.
//! Parameters live in a single flat vector so the trainer can treat models
//! opaquely. Layouts:
//!   softmax_linear: [W (C x p) row-major, b (C)]
//!   mlp:            [W1 (h x p), b1 (h), W2 (C x h), b2 (C)]

use rand::Rng;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::ParamVector;
use crate::rng::{domain, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelSpec {
    SoftmaxLinear {
        input_dim: usize,
        classes: usize,
    },
    Mlp {
        input_dim: usize,
        hidden: usize,
        classes: usize,
    },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ModelSpec::SoftmaxLinear { input_dim, classes } => input_dim >= 1 && classes >= 2,
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => input_dim >= 1 && hidden >= 1 && classes >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("model: bad dimensions in {self:?}")))
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::SoftmaxLinear { input_dim, .. } | ModelSpec::Mlp { input_dim, .. } => {
                input_dim
            }
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            ModelSpec::SoftmaxLinear { classes, .. } | ModelSpec::Mlp { classes, .. } => classes,
        }
    }

    /// Total flat parameter count.
    pub fn param_dim(&self) -> usize {
        match *self {
            ModelSpec::SoftmaxLinear { input_dim, classes } => (input_dim + 1) * classes,
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => (input_dim + 1) * hidden + (hidden + 1) * classes,
        }
    }

    /// true at bias coordinates, matching the flat layout.
    pub fn bias_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.param_dim()];
        match *self {
            ModelSpec::SoftmaxLinear { input_dim, classes } => {
                for b in 0..classes {
                    mask[classes * input_dim + b] = true;
                }
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                let b1 = hidden * input_dim;
                for j in 0..hidden {
                    mask[b1 + j] = true;
                }
                let b2 = b1 + hidden + classes * hidden;
                for c in 0..classes {
                    mask[b2 + c] = true;
                }
            }
        }
        mask
    }

    /// Glorot-uniform weights, zero biases. One draw is shared by every
    /// agent in a run so training starts from consensus.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng_from(&[seed, domain::INIT]);
        let mut values = vec![0.0; self.param_dim()];
        let mut fill = |vals: &mut [f64], fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in vals {
                *v = rng.gen_range(-bound..bound);
            }
        };
        match *self {
            ModelSpec::SoftmaxLinear { input_dim, classes } => {
                fill(&mut values[..classes * input_dim], input_dim, classes);
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                let w1 = hidden * input_dim;
                fill(&mut values[..w1], input_dim, hidden);
                let w2_start = w1 + hidden;
                fill(
                    &mut values[w2_start..w2_start + classes * hidden],
                    hidden,
                    classes,
                );
            }
        }
        ParamVector::from_vec(values).expect("init draws are finite")
    }
}

/// A mini-batch of feature rows with integer labels, stored in ascending
/// original-index order so accumulation order is fixed.
#[derive(Clone, Debug)]
pub struct Batch {
    features: Vec<f64>, // b * p row-major
    labels: Vec<usize>,
    input_dim: usize,
}

impl Batch {
    /// Copy the given samples out of the dataset, sorted by index.
    pub fn gather(dataset: &Dataset, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::invalid("batch: no samples"));
        }
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        let p = dataset.num_features();
        let mut features = Vec::with_capacity(sorted.len() * p);
        let mut labels = Vec::with_capacity(sorted.len());
        for &i in &sorted {
            if i >= dataset.len() {
                return Err(Error::invalid(format!("batch: index {i} out of range")));
            }
            features.extend_from_slice(dataset.feature_row(i));
            labels.push(dataset.label(i));
        }
        Ok(Batch {
            features,
            labels,
            input_dim: p,
        })
    }

    /// Build a batch from explicit rows (kept in the given order).
    pub fn from_rows(rows: &[Vec<f64>], labels: &[usize]) -> Result<Batch> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(Error::invalid("batch: rows/labels mismatch or empty"));
        }
        let p = rows[0].len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("batch: ragged rows"));
        }
        Ok(Batch {
            features: rows.concat(),
            labels: labels.to_vec(),
            input_dim: p,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

fn check_dims(spec: &ModelSpec, params: &ParamVector, input_dim: usize) -> Result<()> {
    if params.len() != spec.param_dim() {
        return Err(Error::DimensionMismatch {
            left: params.len(),
            right: spec.param_dim(),
        });
    }
    if input_dim != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            left: input_dim,
            right: spec.input_dim(),
        });
    }
    Ok(())
}

/// Log-sum-exp with max subtraction; returns (lse, softmax probabilities).
fn softmax_lse(logits: &[f64], probs: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    max + sum.ln()
}

struct Scratch {
    logits: Vec<f64>,
    probs: Vec<f64>,
    hidden: Vec<f64>,
    dz1: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Scratch {
        let c = spec.classes();
        let h = match *spec {
            ModelSpec::Mlp { hidden, .. } => hidden,
            _ => 0,
        };
        Scratch {
            logits: vec![0.0; c],
            probs: vec![0.0; c],
            hidden: vec![0.0; h],
            dz1: vec![0.0; h],
        }
    }
}

/// Forward pass for one sample; fills logits (and hidden activations for the
/// MLP) in the scratch buffers.
fn forward(spec: &ModelSpec, params: &[f64], x: &[f64], scratch: &mut Scratch) {
    match *spec {
        ModelSpec::SoftmaxLinear { input_dim, classes } => {
            for c in 0..classes {
                let w = &params[c * input_dim..(c + 1) * input_dim];
                let b = params[classes * input_dim + c];
                let dot: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
                scratch.logits[c] = dot + b;
            }
        }
        ModelSpec::Mlp {
            input_dim,
            hidden,
            classes,
        } => {
            let b1 = hidden * input_dim;
            let w2_start = b1 + hidden;
            let b2 = w2_start + classes * hidden;
            for j in 0..hidden {
                let w = &params[j * input_dim..(j + 1) * input_dim];
                let dot: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
                scratch.hidden[j] = (dot + params[b1 + j]).tanh();
            }
            for c in 0..classes {
                let w = &params[w2_start + c * hidden..w2_start + (c + 1) * hidden];
                let dot: f64 = w.iter().zip(&scratch.hidden).map(|(w, a)| w * a).sum();
                scratch.logits[c] = dot + params[b2 + c];
            }
        }
    }
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    check_dims(spec, params, batch.input_dim)?;
    let classes = spec.classes();
    let p = params.as_slice();
    let mut grad = vec![0.0; params.len()];
    let mut scratch = Scratch::new(spec);
    let mut loss_sum = 0.0;

    for i in 0..batch.len() {
        let x = batch.row(i);
        let y = batch.label(i);
        if y >= classes {
            return Err(Error::invalid(format!(
                "batch: label {y} out of range for {classes} classes"
            )));
        }
        forward(spec, p, x, &mut scratch);
        let lse = softmax_lse(&scratch.logits, &mut scratch.probs);
        loss_sum += lse - scratch.logits[y];

        match *spec {
            ModelSpec::SoftmaxLinear { input_dim, classes } => {
                for c in 0..classes {
                    let dz = scratch.probs[c] - if c == y { 1.0 } else { 0.0 };
                    let gw = &mut grad[c * input_dim..(c + 1) * input_dim];
                    for (g, &xf) in gw.iter_mut().zip(x) {
                        *g += dz * xf;
                    }
                    grad[classes * input_dim + c] += dz;
                }
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                classes,
            } => {
                let b1 = hidden * input_dim;
                let w2_start = b1 + hidden;
                let b2 = w2_start + classes * hidden;
                scratch.dz1.iter_mut().for_each(|v| *v = 0.0);
                for c in 0..classes {
                    let dz2 = scratch.probs[c] - if c == y { 1.0 } else { 0.0 };
                    let w2 = &p[w2_start + c * hidden..w2_start + (c + 1) * hidden];
                    let gw2 = &mut grad[w2_start + c * hidden..w2_start + (c + 1) * hidden];
                    for j in 0..hidden {
                        gw2[j] += dz2 * scratch.hidden[j];
                        scratch.dz1[j] += dz2 * w2[j];
                    }
                    grad[b2 + c] += dz2;
                }
                for j in 0..hidden {
                    let a = scratch.hidden[j];
                    let dz1 = scratch.dz1[j] * (1.0 - a * a);
                    let gw1 = &mut grad[j * input_dim..(j + 1) * input_dim];
                    for (g, &xf) in gw1.iter_mut().zip(x) {
                        *g += dz1 * xf;
                    }
                    grad[b1 + j] += dz1;
                }
            }
        }
    }

    let inv = 1.0 / batch.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    // Overflowing inputs can make these non-finite; the trainer's abort
    // policy keys off the loss, so pass the raw values through.
    Ok((loss_sum * inv, ParamVector::from_vec_unchecked(grad)))
}

/// Mean cross-entropy over the batch (forward only).
pub fn batch_loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    check_dims(spec, params, batch.input_dim)?;
    let classes = spec.classes();
    let mut scratch = Scratch::new(spec);
    let mut loss_sum = 0.0;
    for i in 0..batch.len() {
        let y = batch.label(i);
        if y >= classes {
            return Err(Error::invalid(format!(
                "batch: label {y} out of range for {classes} classes"
            )));
        }
        forward(spec, params.as_slice(), batch.row(i), &mut scratch);
        let lse = softmax_lse(&scratch.logits, &mut scratch.probs);
        loss_sum += lse - scratch.logits[y];
    }
    Ok(loss_sum / batch.len() as f64)
}

/// Mean cross-entropy of `params` over a dataset split.
pub fn split_loss(
    spec: &ModelSpec,
    params: &ParamVector,
    dataset: &Dataset,
    which: Split,
) -> Result<f64> {
    let batch = Batch::gather(dataset, dataset.split(which))?;
    batch_loss(spec, params, &batch)
}

/// Fraction of argmax-correct predictions over a dataset split. Ties go to
/// the lowest class index.
pub fn accuracy(
    spec: &ModelSpec,
    params: &ParamVector,
    dataset: &Dataset,
    which: Split,
) -> Result<f64> {
    let indices = dataset.split(which);
    if indices.is_empty() {
        return Err(Error::invalid("accuracy: empty split"));
    }
    check_dims(spec, params, dataset.num_features())?;
    let mut scratch = Scratch::new(spec);
    let mut correct = 0usize;
    for &i in indices {
        forward(spec, params.as_slice(), dataset.feature_row(i), &mut scratch);
        let mut best = 0usize;
        for c in 1..scratch.logits.len() {
            if scratch.logits[c] > scratch.logits[best] {
                best = c;
            }
        }
        if best == dataset.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}
