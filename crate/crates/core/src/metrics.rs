//! Multi-label evaluation metrics.
//!
//! Conventions, applied consistently and stated in output metadata:
//! * example F1 of an all-empty prediction/truth pair is 1.0;
//! * a label whose F1 denominator is zero scores 0.0, and macro F1
//!   averages over every label regardless;
//! * precision@1 skips samples with empty truth (0.0 if none remain)
//!   and breaks score ties toward the lowest label index;
//! * mAP ranks samples per label with ties broken toward the lower
//!   sample index, and averages only over labels with at least one
//!   relevant sample (0.0 if none).

use crate::matrix::{Matrix, NumError};

/// The six evaluation scores, all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub ha: f64,
    pub ebf1: f64,
    pub mif1: f64,
    pub maf1: f64,
    pub p_at_1: f64,
    pub map: f64,
}

impl MetricsReport {
    pub fn csv_header() -> &'static str {
        "ha,ebf1,mif1,maf1,p_at_1,map"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.ha, self.ebf1, self.mif1, self.maf1, self.p_at_1, self.map
        )
    }

    pub fn values(&self) -> [f64; 6] {
        [self.ha, self.ebf1, self.mif1, self.maf1, self.p_at_1, self.map]
    }
}

/// Scores with their thresholded hard predictions and the ground truth.
/// `predicted` is derived from `scores` and the threshold, never set
/// directly.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub scores: Matrix,
    pub predicted: Matrix,
    pub truth: Matrix,
}

impl PredictionSet {
    /// Scores must lie in [0, 1] (probability outputs); use
    /// [`evaluate_all`] directly for unbounded scores.
    pub fn new(scores: Matrix, threshold: f64, truth: Matrix) -> Result<Self, NumError> {
        check_threshold(threshold)?;
        check_same_shape(&scores, &truth, "prediction_set")?;
        check_binary(&truth, "prediction_set truth")?;
        if scores.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(NumError::param(
                "prediction_set",
                "scores must lie in [0, 1]".to_string(),
            ));
        }
        let predicted = threshold_scores(&scores, threshold);
        Ok(PredictionSet { scores, predicted, truth })
    }

    pub fn report(&self) -> Result<MetricsReport, NumError> {
        let (mif1, maf1) = micro_macro_f1(&self.predicted, &self.truth)?;
        Ok(MetricsReport {
            ha: hamming_accuracy(&self.predicted, &self.truth)?,
            ebf1: example_based_f1(&self.predicted, &self.truth)?,
            mif1,
            maf1,
            p_at_1: precision_at_1(&self.scores, &self.truth)?,
            map: mean_average_precision(&self.scores, &self.truth)?,
        })
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix, what: &'static str) -> Result<(), NumError> {
    if a.shape() != b.shape() {
        return Err(NumError::dim(what, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(NumError::degenerate(what, "empty input".to_string()));
    }
    Ok(())
}

fn check_binary(m: &Matrix, what: &'static str) -> Result<(), NumError> {
    if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(NumError::param(what, "entries must be 0 or 1".to_string()));
    }
    Ok(())
}

fn check_finite(m: &Matrix, what: &'static str) -> Result<(), NumError> {
    if !m.is_finite() {
        return Err(NumError::NonFinite { op: what });
    }
    Ok(())
}

fn check_threshold(threshold: f64) -> Result<(), NumError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(NumError::param(
            "threshold",
            format!("{} outside (0, 1)", threshold),
        ));
    }
    Ok(())
}

/// Hard predictions: 1.0 where score >= threshold.
pub fn threshold_scores(scores: &Matrix, threshold: f64) -> Matrix {
    scores.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

/// Fraction of label positions where prediction equals truth, averaged
/// over everything.
pub fn hamming_accuracy(pred: &Matrix, truth: &Matrix) -> Result<f64, NumError> {
    check_same_shape(pred, truth, "hamming_accuracy")?;
    check_binary(pred, "hamming_accuracy pred")?;
    check_binary(truth, "hamming_accuracy truth")?;
    let mut agree = 0usize;
    let total = pred.rows() * pred.cols();
    for (&p, &t) in pred.data().iter().zip(truth.data().iter()) {
        if p == t {
            agree += 1;
        }
    }
    Ok(agree as f64 / total as f64)
}

/// Per-sample 2|y and yhat| / (|y| + |yhat|), averaged over samples.
/// A sample with both sets empty scores 1.0.
pub fn example_based_f1(pred: &Matrix, truth: &Matrix) -> Result<f64, NumError> {
    check_same_shape(pred, truth, "example_based_f1")?;
    check_binary(pred, "example_based_f1 pred")?;
    check_binary(truth, "example_based_f1 truth")?;
    let mut sum = 0.0;
    for i in 0..pred.rows() {
        let mut inter = 0.0;
        let mut p_count = 0.0;
        let mut t_count = 0.0;
        for (&p, &t) in pred.row(i).iter().zip(truth.row(i).iter()) {
            if p == 1.0 && t == 1.0 {
                inter += 1.0;
            }
            if p == 1.0 {
                p_count += 1.0;
            }
            if t == 1.0 {
                t_count += 1.0;
            }
        }
        sum += if p_count + t_count == 0.0 { 1.0 } else { 2.0 * inter / (p_count + t_count) };
    }
    Ok(sum / pred.rows() as f64)
}

/// Micro F1 pools true/false positives and false negatives over all
/// labels; macro F1 averages per-label F1 over every label, scoring 0
/// for labels with a zero denominator.
pub fn micro_macro_f1(pred: &Matrix, truth: &Matrix) -> Result<(f64, f64), NumError> {
    check_same_shape(pred, truth, "micro_macro_f1")?;
    check_binary(pred, "micro_macro_f1 pred")?;
    check_binary(truth, "micro_macro_f1 truth")?;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&p, &t) in pred.data().iter().zip(truth.data().iter()) {
        if p == 1.0 && t == 1.0 {
            tp += 1.0;
        } else if p == 1.0 {
            fp += 1.0;
        } else if t == 1.0 {
            fn_ += 1.0;
        }
    }
    let denom = 2.0 * tp + fp + fn_;
    let micro = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };

    let c = pred.cols();
    let mut macro_sum = 0.0;
    for j in 0..c {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for i in 0..pred.rows() {
            let p = pred.get(i, j);
            let t = truth.get(i, j);
            if p == 1.0 && t == 1.0 {
                tp += 1.0;
            } else if p == 1.0 {
                fp += 1.0;
            } else if t == 1.0 {
                fn_ += 1.0;
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        macro_sum += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    Ok((micro, macro_sum / c as f64))
}

/// Fraction of samples whose highest-scored label is relevant, among
/// samples with at least one relevant label. Ties keep the lowest label
/// index; 0.0 when no sample qualifies.
pub fn precision_at_1(scores: &Matrix, truth: &Matrix) -> Result<f64, NumError> {
    check_same_shape(scores, truth, "precision_at_1")?;
    check_finite(scores, "precision_at_1")?;
    check_binary(truth, "precision_at_1 truth")?;
    let mut hits = 0.0;
    let mut counted = 0.0;
    for i in 0..scores.rows() {
        let tr = truth.row(i);
        if tr.iter().all(|&t| t != 1.0) {
            continue;
        }
        let sr = scores.row(i);
        let mut best = 0usize;
        for j in 1..sr.len() {
            if sr[j] > sr[best] {
                best = j;
            }
        }
        if tr[best] == 1.0 {
            hits += 1.0;
        }
        counted += 1.0;
    }
    Ok(if counted == 0.0 { 0.0 } else { hits / counted })
}

/// Per-label average precision over the sample ranking, averaged over
/// labels with at least one relevant sample. Ranking is by score
/// descending with ties toward the lower sample index; 0.0 when no
/// label has a relevant sample.
pub fn mean_average_precision(scores: &Matrix, truth: &Matrix) -> Result<f64, NumError> {
    check_same_shape(scores, truth, "mean_average_precision")?;
    check_finite(scores, "mean_average_precision")?;
    check_binary(truth, "mean_average_precision truth")?;
    let n = scores.rows();
    let c = scores.cols();
    let mut ap_sum = 0.0;
    let mut labels = 0.0;
    for j in 0..c {
        let relevant = (0..n).filter(|&i| truth.get(i, j) == 1.0).count();
        if relevant == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores
                .get(b, j)
                .partial_cmp(&scores.get(a, j))
                .expect("scores validated finite")
                .then(a.cmp(&b))
        });
        let mut hits = 0.0;
        let mut ap = 0.0;
        for (rank0, &i) in order.iter().enumerate() {
            if truth.get(i, j) == 1.0 {
                hits += 1.0;
                ap += hits / (rank0 + 1) as f64;
            }
        }
        ap_sum += ap / relevant as f64;
        labels += 1.0;
    }
    Ok(if labels == 0.0 { 0.0 } else { ap_sum / labels })
}

/// Threshold the scores and compute all six metrics. Scores only need
/// to be finite here; ranking metrics use them raw.
pub fn evaluate_all(scores: &Matrix, threshold: f64, truth: &Matrix) -> Result<MetricsReport, NumError> {
    check_threshold(threshold)?;
    check_same_shape(scores, truth, "evaluate_all")?;
    check_finite(scores, "evaluate_all")?;
    check_binary(truth, "evaluate_all truth")?;
    let predicted = threshold_scores(scores, threshold);
    let (mif1, maf1) = micro_macro_f1(&predicted, truth)?;
    Ok(MetricsReport {
        ha: hamming_accuracy(&predicted, truth)?,
        ebf1: example_based_f1(&predicted, truth)?,
        mif1,
        maf1,
        p_at_1: precision_at_1(scores, truth)?,
        map: mean_average_precision(scores, truth)?,
    })
}
