//! Single-label confusion accounting and macro-averaged metrics.
//!
//! Two accuracies are reported. `acc_paper` is `ΣTP / Σ(TP+FP+FN)`, which
//! counts every misclassification twice (as an FP and an FN);
//! `acc_standard` is `ΣTP / N`. They agree only on error-free runs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetManifest;
use crate::setting::AblationSetting;
use crate::transcript::Prediction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("prediction for unknown image {0:?}")]
    UnknownImageId(String),
    #[error("more than one prediction for image {0:?}")]
    DuplicatePrediction(String),
    #[error("prediction for {image_id:?} has label index {index} outside the label space")]
    LabelOutOfRange { image_id: String, index: usize },
    #[error("no predictions to evaluate")]
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: Vec<String>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub total: u64,
    pub abstentions: u64,
}

impl ConfusionCounts {
    pub fn zeroed(classes: Vec<String>) -> Self {
        let k = classes.len();
        Self { classes, tp: vec![0; k], fp: vec![0; k], fn_: vec![0; k], total: 0, abstentions: 0 }
    }

    /// Adds one outcome. `predicted = None` is an abstention.
    pub fn record(&mut self, truth: usize, predicted: Option<usize>) {
        self.total += 1;
        match predicted {
            Some(p) if p == truth => self.tp[truth] += 1,
            Some(p) => {
                self.fp[p] += 1;
                self.fn_[truth] += 1;
            }
            None => {
                self.abstentions += 1;
                self.fn_[truth] += 1;
            }
        }
    }

    pub fn misclassified(&self) -> u64 {
        self.total - self.abstentions - self.tp.iter().sum::<u64>()
    }
}

/// Tallies predictions against the manifest's ground truth.
pub fn confusion_counts(predictions: &[Prediction], manifest: &DatasetManifest) -> Result<ConfusionCounts, MetricsError> {
    let labels = manifest.labels();
    let mut counts = ConfusionCounts::zeroed(labels.names().to_vec());
    let mut seen = alloc::collections::BTreeSet::new();
    for p in predictions {
        let entry = manifest.get(&p.image_id).ok_or_else(|| MetricsError::UnknownImageId(p.image_id.clone()))?;
        if !seen.insert(p.image_id.as_str()) {
            return Err(MetricsError::DuplicatePrediction(p.image_id.clone()));
        }
        if let Some(index) = p.label_index.filter(|&i| i >= labels.len()) {
            return Err(MetricsError::LabelOutOfRange { image_id: p.image_id.clone(), index });
        }
        counts.record(entry.label_index, p.label_index);
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub setting: Option<AblationSetting>,
    pub total: u64,
    pub abstentions: u64,
    pub acc_paper: f64,
    pub acc_standard: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn zero_support_classes(&self) -> impl Iterator<Item = &str> {
        self.per_class.iter().filter(|c| c.zero_support).map(|c| c.class.as_str())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 plus plain means over all K classes.
///
/// Zero-support classes get recall 0 and are flagged; they stay in the
/// macro means. Undefined precision or F1 is 0.
pub fn macro_metrics(counts: &ConfusionCounts, setting: Option<AblationSetting>) -> Result<MetricsReport, MetricsError> {
    if counts.total == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    let per_class: Vec<ClassMetrics> = (0..counts.classes.len())
        .map(|k| {
            let (tp, fp, fn_) = (counts.tp[k], counts.fp[k], counts.fn_[k]);
            ClassMetrics {
                class: counts.classes[k].clone(),
                support: tp + fn_,
                tp,
                fp,
                fn_,
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
                zero_support: tp + fn_ == 0,
            }
        })
        .collect();
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let tp_sum: u64 = counts.tp.iter().sum();
    let all_sum: u64 = tp_sum + counts.fp.iter().sum::<u64>() + counts.fn_.iter().sum::<u64>();
    Ok(MetricsReport {
        setting,
        total: counts.total,
        abstentions: counts.abstentions,
        acc_paper: ratio(tp_sum, all_sum),
        acc_standard: ratio(tp_sum, counts.total),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::LabelSpace;
    use crate::transcript::PredictionSource;

    fn manifest(truths: &[&str]) -> DatasetManifest {
        let rows = truths.iter().enumerate().map(|(i, t)| (alloc::format!("img{i}"), String::new(), String::from(*t)));
        DatasetManifest::new(rows, Some(LabelSpace::new(["a", "b", "c"]).unwrap())).unwrap()
    }

    fn pred(i: usize, label: Option<usize>) -> Prediction {
        Prediction {
            image_id: alloc::format!("img{i}"),
            label_index: label,
            source: if label.is_some() { PredictionSource::Decider } else { PredictionSource::Abstain },
        }
    }

    #[test]
    fn perfect_run() {
        let m = manifest(&["a", "b", "c", "a"]);
        let preds: Vec<_> = [0, 1, 2, 0].iter().enumerate().map(|(i, &l)| pred(i, Some(l))).collect();
        let c = confusion_counts(&preds, &m).unwrap();
        assert_eq!(c.tp.iter().sum::<u64>(), 4);
        assert!(c.fp.iter().chain(&c.fn_).all(|&v| v == 0));
    }

    #[test]
    fn single_error() {
        let m = manifest(&["a", "b", "c", "a"]);
        let preds = [pred(0, Some(0)), pred(1, Some(1)), pred(2, Some(2)), pred(3, Some(1))];
        let c = confusion_counts(&preds, &m).unwrap();
        assert_eq!((c.fp[1], c.fn_[0]), (1, 1));
        let r = macro_metrics(&c, None).unwrap();
        assert_eq!(r.acc_standard, 0.75);
        assert_eq!(r.acc_paper, 0.6);
    }

    #[test]
    fn abstain_is_false_negative_only() {
        let m = manifest(&["a", "b"]);
        let c = confusion_counts(&[pred(0, None), pred(1, Some(1))], &m).unwrap();
        assert_eq!(c.fn_, [1, 0, 0]);
        assert_eq!(c.fp, [0, 0, 0]);
        assert_eq!(c.abstentions, 1);
    }

    #[test]
    fn perfect_three_class_metrics() {
        let m = manifest(&["a", "b", "c", "a", "b", "c"]);
        let preds: Vec<_> = [0, 1, 2, 0, 1, 2].iter().enumerate().map(|(i, &l)| pred(i, Some(l))).collect();
        let r = macro_metrics(&confusion_counts(&preds, &m).unwrap(), Some(AblationSetting::D)).unwrap();
        for v in [r.acc_paper, r.acc_standard, r.macro_recall, r.macro_f1, r.macro_precision] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn two_class_macro_recall() {
        let c = ConfusionCounts {
            classes: vec!["x".into(), "y".into()],
            tp: vec![1, 0],
            fp: vec![1, 0],
            fn_: vec![0, 1],
            total: 2,
            abstentions: 0,
        };
        let r = macro_metrics(&c, None).unwrap();
        assert_eq!(r.macro_recall, 0.5);
    }

    #[test]
    fn zero_support_flagged() {
        let m = manifest(&["a", "b"]);
        let r = macro_metrics(&confusion_counts(&[pred(0, Some(0)), pred(1, Some(1))], &m).unwrap(), None).unwrap();
        assert_eq!(r.zero_support_classes().collect::<Vec<_>>(), ["c"]);
        assert!((r.macro_recall - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let m = manifest(&["a", "b"]);
        assert_eq!(confusion_counts(&[pred(9, None)], &m), Err(MetricsError::UnknownImageId("img9".into())));
        assert!(matches!(confusion_counts(&[pred(0, None), pred(0, None)], &m), Err(MetricsError::DuplicatePrediction(_))));
        assert!(matches!(confusion_counts(&[pred(0, Some(7))], &m), Err(MetricsError::LabelOutOfRange { .. })));
        let empty = ConfusionCounts::zeroed(vec!["a".into(), "b".into()]);
        assert_eq!(macro_metrics(&empty, None), Err(MetricsError::EmptyDataset));
    }
}
