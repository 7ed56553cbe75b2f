use std::io::Write;

use ndarray::{ArrayView2, Axis};

use super::layers::Scalar;
use super::model::{cross_entropy, Mode, Model};
use super::NnError;
use crate::dataset::EmotionLabel;

const N: usize = EmotionLabel::COUNT;

/// `counts[i][j]` = items of true class `i` predicted as `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Per-class support.
    pub fn row_sums(&self) -> [u64; N] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn column_sums(&self) -> [u64; N] {
        let mut out = [0; N];
        for row in &self.counts {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    /// Header row of predicted labels, then one row per true label.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let names: Vec<&str> = EmotionLabel::ALL.iter().map(|l| l.name()).collect();
        writeln!(out, "true\\predicted,{}", names.join(","))?;
        for (label, row) in EmotionLabel::ALL.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{},{}", label.name(), cells.join(","))?;
        }
        Ok(())
    }
}

pub fn confusion_matrix(preds: &[EmotionLabel], truths: &[EmotionLabel]) -> Result<ConfusionMatrix, NnError> {
    if preds.len() != truths.len() {
        return Err(NnError::LengthMismatch { expected: truths.len(), actual: preds.len() });
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(truths) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// Argmax class index per row (lowest index on ties).
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn confusion(&self, labels: &[usize]) -> Result<ConfusionMatrix, NnError> {
        let to_label = |v: &[usize]| -> Result<Vec<EmotionLabel>, NnError> {
            v.iter()
                .map(|&i| EmotionLabel::from_index(i).ok_or(NnError::InvalidLabel { label: i, n_classes: N }))
                .collect()
        };
        confusion_matrix(&to_label(&self.predictions)?, &to_label(labels)?)
    }
}

const EVAL_CHUNK: usize = 256;

/// Eval-mode loss and accuracy over a whole matrix of examples.
pub fn evaluate<T: Scalar>(model: &Model<T>, features: ArrayView2<T>, labels: &[usize]) -> Result<Evaluation, NnError> {
    if features.nrows() != labels.len() {
        return Err(NnError::LengthMismatch { expected: features.nrows(), actual: labels.len() });
    }
    if labels.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(labels.len());
    for (chunk, chunk_labels) in features.axis_chunks_iter(Axis(0), EVAL_CHUNK).zip(labels.chunks(EVAL_CHUNK)) {
        let probs = model.forward(chunk, Mode::Eval)?;
        loss_sum += cross_entropy(probs.view(), chunk_labels)? * chunk_labels.len() as f64;
        for row in probs.rows() {
            let mut best = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            predictions.push(best);
        }
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        loss: loss_sum / labels.len() as f64,
        accuracy: correct as f64 / labels.len() as f64,
        predictions,
    })
}
