//! Confusion-matrix segmentation metrics and ROC AUC.

use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

fn binary_labels(target: &Tensor, what: &str) -> Result<Vec<bool>> {
    target
        .data()
        .iter()
        .map(|&v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            other => invalid(format!("{what} must be 0/1, found {other}")),
        })
        .collect()
}

fn check_inputs(pred: &Tensor, target: &Tensor, fov: Option<&Tensor>) -> Result<(Vec<bool>, Vec<bool>)> {
    pred.check_same_shape(target)?;
    let labels = binary_labels(target, "target")?;
    let keep = match fov {
        Some(m) => {
            m.check_same_shape(pred)?;
            binary_labels(m, "field-of-view mask")?
        }
        None => vec![true; labels.len()],
    };
    Ok((labels, keep))
}

/// A pixel is predicted positive iff `pred >= threshold`. Pixels outside the
/// optional field-of-view mask are not counted.
pub fn confusion(pred: &Tensor, target: &Tensor, threshold: f64, fov: Option<&Tensor>) -> Result<ConfusionCounts> {
    if !(0.0..=1.0).contains(&threshold) {
        return invalid(format!("threshold {threshold} outside [0, 1]"));
    }
    let (labels, keep) = check_inputs(pred, target, fov)?;
    let mut c = ConfusionCounts::default();
    for ((&p, &t), &k) in pred.data().iter().zip(&labels).zip(&keep) {
        if !k {
            continue;
        }
        match (p >= threshold, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Every value is either in `[0, 1]` or `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricReport {
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub pr: Option<f64>,
    pub iou: Option<f64>,
    pub f1: Option<f64>,
    pub acc: Option<f64>,
    pub auc: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn basic_metrics(c: &ConfusionCounts) -> Result<MetricReport> {
    if c.total() == 0 {
        return invalid("no pixels were counted");
    }
    let se = ratio(c.tp, c.tp + c.fn_);
    let pr = ratio(c.tp, c.tp + c.fp);
    // 2·PR·SE/(PR+SE) simplifies to 2TP/(2TP+FP+FN) whenever it is defined,
    // which needs PR + SE > 0, i.e. TP > 0
    let f1 = match (pr, se) {
        (Some(_), Some(_)) if c.tp > 0 => ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        _ => None,
    };
    Ok(MetricReport {
        se,
        sp: ratio(c.tn, c.tn + c.fp),
        pr,
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
        f1,
        acc: ratio(c.tp + c.tn, c.total()),
        auc: None,
    })
}

/// Area under the ROC curve by trapezoids over every distinct threshold.
///
/// The area is accumulated in integers, so the result equals the
/// Mann–Whitney statistic with ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return invalid(format!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return invalid("scores must not be NaN");
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative labels"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // twice the area in units of one (positive, negative) pair
    let (mut tp, mut fp, mut area2) = (0u128, 0u128, 0u128);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let (mut dtp, mut dfp) = (0u128, 0u128);
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        area2 += dfp * (2 * tp + dtp);
        tp += dtp;
        fp += dfp;
    }
    debug_assert_eq!((tp, fp), (pos as u128, neg as u128));
    Ok(area2 as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Thresholded metrics plus AUC of the raw scores over the same pixels.
pub fn evaluate(pred: &Tensor, target: &Tensor, threshold: f64, fov: Option<&Tensor>) -> Result<MetricReport> {
    let counts = confusion(pred, target, threshold, fov)?;
    let mut report = basic_metrics(&counts)?;
    let (labels, keep) = check_inputs(pred, target, fov)?;
    let (scores, labels): (Vec<f64>, Vec<bool>) = pred
        .data()
        .iter()
        .zip(labels)
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|((&s, l), _)| (s, l))
        .unzip();
    report.auc = match roc_auc(&scores, &labels) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(report)
}

impl MetricReport {
    /// Column order of the comparison tables.
    pub const CSV_HEADER: &'static str = "IOU,AUC,F1,ACC,SE,SP";

    pub fn csv_fields(&self) -> [Option<f64>; 6] {
        [self.iou, self.auc, self.f1, self.acc, self.se, self.sp]
    }

    pub fn to_csv_row(&self) -> String {
        self.csv_fields()
            .iter()
            .map(|v| MetricValue(*v).to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Displays a metric with six decimals, or `undefined`.
#[derive(Debug, Clone, Copy)]
pub struct MetricValue(pub Option<f64>);

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.6}"),
            None => f.write_str("undefined"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_has_no_errors() {
        let gt = t(&[0.0, 1.0, 1.0, 0.0, 1.0]);
        let c = confusion(&gt, &gt, 0.5, None).unwrap();
        assert_eq!((c.fp, c.fn_, c.tp, c.tn), (0, 0, 3, 2));
    }

    #[test]
    fn all_negative_prediction() {
        let gt = t(&[0.0, 1.0, 1.0, 0.0, 1.0]);
        let c = confusion(&t(&[0.0; 5]), &gt, 0.5, None).unwrap();
        assert_eq!((c.tp, c.fn_), (0, 3));
    }

    #[test]
    fn threshold_is_inclusive_and_fov_excludes() {
        let pred = t(&[0.5, 0.49, 0.9, 0.1]);
        let gt = t(&[1.0, 1.0, 0.0, 0.0]);
        let c = confusion(&pred, &gt, 0.5, None).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
        let fov = t(&[1.0, 0.0, 0.0, 1.0]);
        let c = confusion(&pred, &gt, 0.5, Some(&fov)).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
    }

    #[test]
    fn confusion_errors() {
        assert!(confusion(&t(&[0.1]), &t(&[0.0, 1.0]), 0.5, None).is_err());
        assert!(confusion(&t(&[0.1]), &t(&[0.5]), 0.5, None).is_err());
        assert!(confusion(&t(&[0.1]), &t(&[1.0]), 1.5, None).is_err());
    }

    #[test]
    fn perfect_counts_give_ones() {
        let r = basic_metrics(&ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 }).unwrap();
        for v in [r.se, r.sp, r.pr, r.iou, r.f1, r.acc] {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn worked_counts() {
        let r = basic_metrics(&ConfusionCounts { tp: 50, fp: 10, tn: 930, fn_: 10 }).unwrap();
        let close = |a: Option<f64>, b: f64| (a.unwrap() - b).abs() <= 1e-9;
        assert!(close(r.se, 50.0 / 60.0));
        assert!(close(r.sp, 930.0 / 940.0));
        assert!(close(r.pr, 50.0 / 60.0));
        assert!(close(r.iou, 50.0 / 70.0));
        assert!(close(r.f1, 50.0 / 60.0));
        assert!(close(r.acc, 0.98));
        let r = basic_metrics(&ConfusionCounts { tp: 2, fp: 1, tn: 0, fn_: 1 }).unwrap();
        assert_eq!(r.pr, r.se);
        assert_eq!(r.f1, r.pr);
    }

    #[test]
    fn zero_denominators_are_undefined() {
        let r = basic_metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 0 }).unwrap();
        assert_eq!((r.se, r.pr, r.f1, r.iou), (None, None, None, None));
        assert_eq!(r.sp, Some(1.0));
        let r = basic_metrics(&ConfusionCounts { tp: 0, fp: 2, tn: 5, fn_: 3 }).unwrap();
        assert_eq!((r.se, r.pr, r.f1), (Some(0.0), Some(0.0), None));
        assert!(basic_metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.8, 0.6, 0.4], &[true, false, true]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.2, 0.4], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(roc_auc(&[f64::NAN, 0.4], &[true, false]).is_err());
    }

    #[test]
    fn csv_row_for_perfect_prediction() {
        let gt = t(&[0.0, 1.0, 1.0, 0.0]);
        let r = evaluate(&gt, &gt, 0.5, None).unwrap();
        assert_eq!(r.to_csv_row(), "1.000000,1.000000,1.000000,1.000000,1.000000,1.000000");
        let flat = t(&[1.0; 4]);
        let r = evaluate(&flat, &flat, 0.5, None).unwrap();
        assert_eq!(r.auc, None);
        assert!(r.to_csv_row().starts_with("1.000000,undefined,"));
    }
}
