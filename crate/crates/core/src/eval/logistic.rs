use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            learning_rate: 0.1,
            iterations: 500,
            l2: 1e-4,
        }
    }
}

/// Logistic regression over one-hot encoded categorical features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub outcome: usize,
    pub features: Vec<usize>,
    /// First one-hot column of each feature.
    pub offsets: Vec<usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub params: LogisticParams,
}

/// One-hot design: each row lists its active columns.
#[derive(Clone, Debug)]
pub struct Design {
    pub rows: Vec<Vec<usize>>,
    pub width: usize,
}

fn offsets(d: &Dataset, features: &[usize]) -> (Vec<usize>, usize) {
    let mut offs = Vec::with_capacity(features.len());
    let mut width = 0;
    for &f in features {
        offs.push(width);
        width += d.schema().domain_size(f);
    }
    (offs, width)
}

fn encode(d: &Dataset, features: &[usize], offs: &[usize], width: usize) -> Design {
    let rows = (0..d.n())
        .map(|r| {
            features
                .iter()
                .zip(offs)
                .map(|(&f, &o)| o + d.column(f)[r] as usize)
                .collect()
        })
        .collect();
    Design { rows, width }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log-loss plus `(l2/2)·‖w‖²`, with its gradient in `(w, b)`.
pub fn loss_and_gradient(x: &Design, y: &[bool], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.rows.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &label) in x.rows.iter().zip(y) {
        let z = b + row.iter().map(|&c| w[c]).sum::<f64>();
        loss += if label { softplus(-z) } else { softplus(z) };
        let r = sigmoid(z) - label as u8 as f64;
        for &c in row {
            gw[c] += r;
        }
        gb += r;
    }
    loss /= n;
    gb /= n;
    for (g, &wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, gw, gb)
}

fn binary_labels(d: &Dataset, outcome: usize) -> Result<Vec<bool>> {
    d.schema().check_index(outcome)?;
    let k = d.schema().domain_size(outcome);
    if k != 2 {
        return Err(Error::argument(format!(
            "outcome {:?} must be binary, has {k} values",
            d.schema().name(outcome)
        )));
    }
    Ok(d.column(outcome).iter().map(|&c| c == 1).collect())
}

/// Full-batch gradient descent from zero weights. Deterministic.
pub fn train_logistic(
    train: &Dataset,
    outcome: usize,
    features: &[usize],
    params: LogisticParams,
) -> Result<LinearClassifier> {
    let y = binary_labels(train, outcome)?;
    for &f in features {
        train.schema().check_index(f)?;
        if f == outcome {
            return Err(Error::argument("features must exclude the outcome"));
        }
    }
    let (offs, width) = offsets(train, features);
    let x = encode(train, features, &offs, width);
    let mut w = vec![0.0; width];
    let mut b = 0.0;
    for _ in 0..params.iterations {
        let (_, gw, gb) = loss_and_gradient(&x, &y, &w, b, params.l2);
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= params.learning_rate * g;
        }
        b -= params.learning_rate * gb;
    }
    debug_assert!(w.iter().all(|v| v.is_finite()) && b.is_finite());
    Ok(LinearClassifier {
        outcome,
        features: features.to_vec(),
        offsets: offs,
        weights: w,
        bias: b,
        params,
    })
}

impl LinearClassifier {
    /// `P(outcome = 1)` for each row of `d`, which must share the training schema's feature domains.
    pub fn predict_proba(&self, d: &Dataset) -> Result<Vec<f64>> {
        let (offs, width) = offsets(d, &self.features);
        if offs != self.offsets || width != self.weights.len() {
            return Err(Error::argument("dataset does not match the classifier's feature domains"));
        }
        let x = encode(d, &self.features, &offs, width);
        Ok(x.rows
            .iter()
            .map(|row| sigmoid(self.bias + row.iter().map(|&c| self.weights[c]).sum::<f64>()))
            .collect())
    }

    /// True labels of `d` for this classifier's outcome.
    pub fn labels(&self, d: &Dataset) -> Result<Vec<bool>> {
        binary_labels(d, self.outcome)
    }
}
