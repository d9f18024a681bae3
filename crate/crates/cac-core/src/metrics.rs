//! Per-class IoU, mIoU, and the metrics CSV emitted by training runs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::LabelMap;

/// Streaming intersection/prediction/truth counts per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    intersection: Vec<u64>,
    predicted: Vec<u64>,
    truth: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(n_classes: usize) -> Self {
        ConfusionCounts {
            intersection: vec![0; n_classes],
            predicted: vec![0; n_classes],
            truth: vec![0; n_classes],
        }
    }

    /// Accumulates one image; ignored pixels are skipped entirely.
    pub fn update(&mut self, predictions: &[usize], labels: &LabelMap) {
        debug_assert_eq!(predictions.len(), labels.len());
        for (pixel, &pred) in predictions.iter().enumerate() {
            if !labels.is_valid(pixel) {
                continue;
            }
            let truth = usize::from(labels.get(pixel));
            self.predicted[pred] += 1;
            self.truth[truth] += 1;
            if pred == truth {
                self.intersection[truth] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for k in 0..self.intersection.len() {
            self.intersection[k] += other.intersection[k];
            self.predicted[k] += other.predicted[k];
            self.truth[k] += other.truth[k];
        }
    }

    /// Per-class IoU (`None` for zero-union classes) and the mean over
    /// classes with nonzero union.
    pub fn iou(&self) -> (Vec<Option<f64>>, f64) {
        let mut per_class = Vec::with_capacity(self.intersection.len());
        let mut sum = 0.0;
        let mut counted = 0usize;
        for k in 0..self.intersection.len() {
            let union = self.predicted[k] + self.truth[k] - self.intersection[k];
            if union == 0 {
                per_class.push(None);
            } else {
                let iou = self.intersection[k] as f64 / union as f64;
                per_class.push(Some(iou));
                sum += iou;
                counted += 1;
            }
        }
        let miou = if counted == 0 { 0.0 } else { sum / counted as f64 };
        (per_class, miou)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One evaluation row: per-class IoU, mIoU, the enabled loss terms, and
/// the head diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub loss_ce: Option<f64>,
    pub loss_ce_p: Option<f64>,
    pub loss_ce_y: Option<f64>,
    pub loss_kl: Option<f64>,
    pub loss_total: Option<f64>,
    /// Mean entropy of the oracle softmax over non-ignored pixels.
    pub mean_entropy_py: f64,
    /// Mean cosine distance between rows of `A_p` and `C`.
    pub mean_cosdist_ap_c: f64,
}

fn push_opt(s: &mut String, v: Option<f64>) {
    match v {
        Some(v) => {
            let _ = write!(s, ",{v}");
        }
        None => s.push(','),
    }
}

pub fn csv_header(n_classes: usize) -> String {
    let mut s = String::from("epoch,split,miou");
    for k in 0..n_classes {
        let _ = write!(s, ",iou_{k}");
    }
    s.push_str(",loss_ce,loss_ce_p,loss_ce_y,loss_kl,loss_total,mean_entropy_py,mean_cosdist_ap_c");
    s
}

pub fn csv_row(row: &MetricsRow) -> String {
    let mut s = format!("{},{},{}", row.epoch, row.split.name(), row.miou);
    for iou in &row.iou {
        push_opt(&mut s, *iou);
    }
    push_opt(&mut s, row.loss_ce);
    push_opt(&mut s, row.loss_ce_p);
    push_opt(&mut s, row.loss_ce_y);
    push_opt(&mut s, row.loss_kl);
    push_opt(&mut s, row.loss_total);
    let _ = write!(s, ",{},{}", row.mean_entropy_py, row.mean_cosdist_ap_c);
    s
}

pub fn metrics_csv(n_classes: usize, rows: &[MetricsRow]) -> String {
    let mut s = csv_header(n_classes);
    s.push('\n');
    for row in rows {
        s.push_str(&csv_row(row));
        s.push('\n');
    }
    s
}

pub fn write_metrics_csv(path: &Path, n_classes: usize, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_csv(n_classes, rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::IGNORE;

    #[test]
    fn perfect_predictions_give_miou_one() {
        let labels = LabelMap::new(vec![0, 1, 1, 0], 2).unwrap();
        let mut counts = ConfusionCounts::new(2);
        counts.update(&[0, 1, 1, 0], &labels);
        let (iou, miou) = counts.iou();
        assert_eq!(iou, vec![Some(1.0), Some(1.0)]);
        assert_eq!(miou, 1.0);
    }

    #[test]
    fn constant_predictions_on_balanced_classes() {
        // Predicting class 0 everywhere with two balanced classes:
        // IoU_0 = 0.5, IoU_1 = 0 ⇒ mIoU = 0.25.
        let labels = LabelMap::new(vec![0, 0, 1, 1], 2).unwrap();
        let mut counts = ConfusionCounts::new(2);
        counts.update(&[0, 0, 0, 0], &labels);
        let (iou, miou) = counts.iou();
        assert_eq!(iou, vec![Some(0.5), Some(0.0)]);
        assert_eq!(miou, 0.25);
    }

    #[test]
    fn ignored_pixels_do_not_count() {
        let labels = LabelMap::new(vec![0, IGNORE, 1], 2).unwrap();
        let mut counts = ConfusionCounts::new(2);
        counts.update(&[0, 0, 1], &labels);
        let (_, miou) = counts.iou();
        assert_eq!(miou, 1.0);
    }

    #[test]
    fn zero_union_classes_are_excluded_from_the_mean() {
        let labels = LabelMap::new(vec![0, 0], 3).unwrap();
        let mut counts = ConfusionCounts::new(3);
        counts.update(&[0, 0], &labels);
        let (iou, miou) = counts.iou();
        assert_eq!(iou, vec![Some(1.0), None, None]);
        assert_eq!(miou, 1.0);
    }

    #[test]
    fn streaming_counts_match_naive_set_oracle() {
        // Naive per-class set intersection/union over explicit pixel sets.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(2..5usize);
            let hw = rng.gen_range(1..40usize);
            let y: Vec<u16> = (0..hw)
                .map(|_| {
                    if rng.gen_range(0..5) == 0 {
                        IGNORE
                    } else {
                        rng.gen_range(0..n as u16)
                    }
                })
                .collect();
            let preds: Vec<usize> = (0..hw).map(|_| rng.gen_range(0..n)).collect();
            let labels = LabelMap::new(y.clone(), n).unwrap();

            let mut counts = ConfusionCounts::new(n);
            counts.update(&preds, &labels);
            let (_, miou) = counts.iou();

            let mut naive_sum = 0.0;
            let mut naive_counted = 0usize;
            for k in 0..n {
                let pred_set: std::collections::BTreeSet<usize> = (0..hw)
                    .filter(|&i| y[i] != IGNORE && preds[i] == k)
                    .collect();
                let truth_set: std::collections::BTreeSet<usize> = (0..hw)
                    .filter(|&i| y[i] != IGNORE && usize::from(y[i]) == k)
                    .collect();
                let inter = pred_set.intersection(&truth_set).count();
                let union = pred_set.union(&truth_set).count();
                if union > 0 {
                    naive_sum += inter as f64 / union as f64;
                    naive_counted += 1;
                }
            }
            let naive = if naive_counted == 0 {
                0.0
            } else {
                naive_sum / naive_counted as f64
            };
            assert!((miou - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_has_fixed_header_and_blank_disabled_terms() {
        let row = MetricsRow {
            epoch: 1,
            split: Split::Val,
            iou: vec![Some(0.5), None],
            miou: 0.5,
            loss_ce: Some(0.25),
            loss_ce_p: None,
            loss_ce_y: None,
            loss_kl: None,
            loss_total: Some(0.25),
            mean_entropy_py: 0.1,
            mean_cosdist_ap_c: 0.9,
        };
        let csv = metrics_csv(2, &[row]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,split,miou,iou_0,iou_1,loss_ce,loss_ce_p,loss_ce_y,loss_kl,loss_total,mean_entropy_py,mean_cosdist_ap_c"
        );
        assert_eq!(lines.next().unwrap(), "1,val,0.5,0.5,,0.25,,,,0.25,0.1,0.9");
    }
}
