use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::softmax_cross_entropy;

use super::REASON_MARGIN;

#[derive(Clone, Debug, PartialEq)]
pub struct MarginStats {
    /// `f(X)[y] − max_{j≠y} f(X)[j]` per training example.
    pub margins: Vec<f64>,
    /// Margin percentile used by the margin-normalized measures.
    pub gamma: f64,
    /// Largest ℓ₂ norm of a training input.
    pub input_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputMeasures {
    pub cross_entropy: f64,
    pub inv_margin_sq: Result<f64, &'static str>,
    pub neg_entropy: f64,
    pub margin: MarginStats,
}

/// Nearest-rank percentile: the `⌈p/100 · m⌉`-th smallest value.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Margin of one row of logits.
pub fn margins(logits: &[f64], label: usize) -> f64 {
    let other = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[label] - other
}

pub fn margin_and_output_measures(
    net: &Network,
    train: &Dataset,
    percentile: f64,
) -> Result<OutputMeasures> {
    if train.is_empty() {
        return Err(Error::invalid("output measures need training data"));
    }
    let k = net.num_classes;
    let (mut ce, mut negent) = (0.0, 0.0);
    let mut ms = Vec::with_capacity(train.len());
    let idx: Vec<usize> = (0..train.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, y) = train.batch(chunk);
        let logits = net.predict(&x)?;
        for (row, &label) in logits.data().chunks(k).zip(&y) {
            let out = softmax_cross_entropy(row, label)?;
            ce += out.loss;
            negent += out
                .probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>();
            let row64: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            ms.push(margins(&row64, label));
        }
    }
    let m = train.len() as f64;
    let gamma = percentile_nearest_rank(&ms, percentile);
    Ok(OutputMeasures {
        cross_entropy: ce / m,
        inv_margin_sq: if gamma > 0.0 {
            Ok(1.0 / (gamma * gamma))
        } else {
            Err(REASON_MARGIN)
        },
        neg_entropy: negent / m,
        margin: MarginStats {
            margins: ms,
            gamma,
            input_bound: train.max_input_norm(),
        },
    })
}
