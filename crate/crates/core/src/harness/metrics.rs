//! Confusion counts and percent metrics with the positive class as "hate".

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn new(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The matrix seen with the classes swapped.
    pub fn flipped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

pub fn confusion(predictions: &[Label], golds: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: golds.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (p, g) in predictions.iter().zip(golds) {
        match (p, g) {
            (Label::Positive, Label::Positive) => cm.tp += 1,
            (Label::Positive, Label::Negative) => cm.fp += 1,
            (Label::Negative, Label::Negative) => cm.tn += 1,
            (Label::Negative, Label::Positive) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// A metric value with a flag for a zero denominator (value then 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Checked {
    pub value: f64,
    pub undefined: bool,
}

fn ratio(num: usize, den: usize) -> Checked {
    if den == 0 {
        Checked {
            value: 0.0,
            undefined: true,
        }
    } else {
        Checked {
            value: 100.0 * num as f64 / den as f64,
            undefined: false,
        }
    }
}

fn class_f1(tp: usize, fp: usize, fn_: usize) -> Checked {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

pub fn sensitivity_checked(cm: &ConfusionMatrix) -> Checked {
    ratio(cm.tp, cm.tp + cm.fn_)
}

pub fn specificity_checked(cm: &ConfusionMatrix) -> Checked {
    ratio(cm.tn, cm.tn + cm.fp)
}

pub fn macro_f1_checked(cm: &ConfusionMatrix) -> Checked {
    let pos = class_f1(cm.tp, cm.fp, cm.fn_);
    let neg = class_f1(cm.tn, cm.fn_, cm.fp);
    Checked {
        value: (pos.value + neg.value) / 2.0,
        undefined: pos.undefined || neg.undefined,
    }
}

/// Recall of the positive class, in percent.
pub fn sensitivity(cm: &ConfusionMatrix) -> f64 {
    sensitivity_checked(cm).value
}

/// Recall of the negative class, in percent.
pub fn specificity(cm: &ConfusionMatrix) -> f64 {
    specificity_checked(cm).value
}

/// Mean of the two per-class F1 scores, in percent.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    macro_f1_checked(cm).value
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub confusion: ConfusionMatrix,
    /// Names of metrics whose denominator was zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Metrics {
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        let mut warnings = Vec::new();
        let mut take = |name: &str, c: Checked| {
            if c.undefined {
                log::warn!("{name} has a zero denominator; reported as 0");
                warnings.push(name.to_owned());
            }
            c.value
        };
        let macro_f1 = take("macro_f1", macro_f1_checked(&cm));
        let sensitivity = take("sensitivity", sensitivity_checked(&cm));
        let specificity = take("specificity", specificity_checked(&cm));
        Metrics {
            macro_f1,
            sensitivity,
            specificity,
            confusion: cm,
            warnings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[u8]) -> Vec<Label> {
        v.iter().map(|&x| Label::from_bool(x == 1)).collect()
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion(&labels(&[1, 0]), &labels(&[1, 0])).unwrap(), ConfusionMatrix::new(1, 0, 1, 0));
        assert_eq!(confusion(&labels(&[0, 0, 0]), &labels(&[1, 1, 0])).unwrap(), ConfusionMatrix::new(0, 0, 1, 2));
        assert_eq!(confusion(&[], &[]).unwrap(), ConfusionMatrix::default());
        assert!(matches!(confusion(&labels(&[1]), &[]), Err(Error::LengthMismatch { left: 1, right: 0 })));
    }

    #[test]
    fn perfect_predictions() {
        let m = Metrics::from_confusion(ConfusionMatrix::new(7, 0, 13, 0));
        assert_eq!((m.macro_f1, m.sensitivity, m.specificity), (100.0, 100.0, 100.0));
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn hand_computed_example() {
        let cm = ConfusionMatrix::new(5, 0, 90, 5);
        assert_eq!(sensitivity(&cm), 50.0);
        // Positive F1 = 10/15, negative F1 = 180/185.
        assert!((macro_f1(&cm) - 81.98).abs() <= 0.01);
        assert!((macro_f1(&cm) - 50.0 * (10.0 / 15.0 + 180.0 / 185.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators_warn() {
        let m = Metrics::from_confusion(ConfusionMatrix::new(0, 0, 10, 0));
        assert_eq!(m.sensitivity, 0.0);
        assert_eq!(m.macro_f1, 50.0);
        assert_eq!(m.warnings, vec!["macro_f1", "sensitivity"]);
        let empty = Metrics::from_confusion(ConfusionMatrix::default());
        assert_eq!(empty.warnings.len(), 3);
    }

    proptest! {
        #[test]
        fn flip_swaps_sensitivity_and_specificity(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
            let cm = ConfusionMatrix::new(tp, fp, tn, fn_);
            let f = cm.flipped();
            prop_assert_eq!(sensitivity(&f), specificity(&cm));
            prop_assert_eq!(specificity(&f), sensitivity(&cm));
            prop_assert!((macro_f1(&f) - macro_f1(&cm)).abs() < 1e-12);
            for v in [macro_f1(&cm), sensitivity(&cm), specificity(&cm)] {
                prop_assert!((0.0..=100.0).contains(&v));
            }
        }
    }
}
