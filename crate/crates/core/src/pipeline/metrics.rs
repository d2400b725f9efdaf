//! Top-k and mean class accuracy.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub samples: usize,
    pub top1: f64,
    pub top5: f64,
    /// Fewer than five classes, so `top5` is always 1.
    pub top5_trivial: bool,
    /// Mean over classes with at least one sample.
    pub mean_class_accuracy: f64,
    /// `(correct, total)` per class.
    pub per_class: Vec<(usize, usize)>,
}

/// Class indices by descending score; equal scores keep index order.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn evaluate_scores(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Metrics> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::Dataset("no samples to evaluate".into()));
    }
    let mut per_class = vec![(0, 0); classes];
    let (mut hit1, mut hit5) = (0, 0);
    for (row, &label) in scores.iter().zip(labels) {
        if label >= classes {
            return Err(Error::Dataset(format!("class index {label} out of range for {classes} classes")));
        }
        if row.len() != classes {
            return Err(Error::Shape(format!("score row has {} entries for {classes} classes", row.len())));
        }
        let order = rank(row);
        let top1 = order[0] == label;
        hit1 += top1 as usize;
        hit5 += order.iter().take(5).any(|&c| c == label) as usize;
        per_class[label].1 += 1;
        per_class[label].0 += top1 as usize;
    }
    let n = scores.len() as f64;
    let present: Vec<f64> = per_class
        .iter()
        .filter(|(_, t)| *t > 0)
        .map(|&(c, t)| c as f64 / t as f64)
        .collect();
    Ok(Metrics {
        samples: scores.len(),
        top1: hit1 as f64 / n,
        top5: hit5 as f64 / n,
        top5_trivial: classes < 5,
        mean_class_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

impl Metrics {
    pub fn key_values(&self) -> String {
        format!(
            "samples={} top1={:.6} top5={:.6}{} mean_class_acc={:.6}",
            self.samples,
            self.top1,
            self.top5,
            if self.top5_trivial { " top5_trivial=true" } else { "" },
            self.mean_class_accuracy
        )
    }
}
