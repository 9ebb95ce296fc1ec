//! Reference multi-label metrics, one definition per function, computed
//! sample by sample and label by label.
//!
//! Conventions shared with the optimized implementation:
//! * example F1 of an all-empty prediction/truth pair is 1.0;
//! * per-label F1 with a zero denominator is 0.0, and macro-F1 averages
//!   over every label regardless;
//! * precision@1 skips samples with empty truth (0.0 if none remain) and
//!   breaks score ties toward the lowest label index;
//! * mAP ranks samples per label, breaks ties toward the lower sample
//!   index, and skips labels with no relevant sample (0.0 if none
//!   remain).

pub fn hamming_accuracy(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut agree = 0usize;
    let mut total = 0usize;
    for (pr, tr) in pred.iter().zip(truth.iter()) {
        for (&p, &t) in pr.iter().zip(tr.iter()) {
            if p == t {
                agree += 1;
            }
            total += 1;
        }
    }
    agree as f64 / total as f64
}

pub fn example_f1(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for (pr, tr) in pred.iter().zip(truth.iter()) {
        let mut inter = 0.0;
        let mut p_count = 0.0;
        let mut t_count = 0.0;
        for (&p, &t) in pr.iter().zip(tr.iter()) {
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
        sum += if p_count + t_count == 0.0 {
            1.0
        } else {
            2.0 * inter / (p_count + t_count)
        };
    }
    sum / pred.len() as f64
}

pub fn micro_f1(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (pr, tr) in pred.iter().zip(truth.iter()) {
        for (&p, &t) in pr.iter().zip(tr.iter()) {
            if p == 1.0 && t == 1.0 {
                tp += 1.0;
            } else if p == 1.0 {
                fp += 1.0;
            } else if t == 1.0 {
                fn_ += 1.0;
            }
        }
    }
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

pub fn macro_f1(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let c = pred[0].len();
    let mut sum = 0.0;
    for j in 0..c {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for i in 0..pred.len() {
            let p = pred[i][j];
            let t = truth[i][j];
            if p == 1.0 && t == 1.0 {
                tp += 1.0;
            } else if p == 1.0 {
                fp += 1.0;
            } else if t == 1.0 {
                fn_ += 1.0;
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        sum += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    sum / c as f64
}

pub fn precision_at_1(scores: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut hits = 0.0;
    let mut counted = 0.0;
    for (sr, tr) in scores.iter().zip(truth.iter()) {
        if tr.iter().all(|&t| t != 1.0) {
            continue;
        }
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
    if counted == 0.0 {
        0.0
    } else {
        hits / counted
    }
}

pub fn mean_average_precision(scores: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let n = scores.len();
    let c = scores[0].len();
    let mut ap_sum = 0.0;
    let mut labels = 0.0;
    for j in 0..c {
        let relevant = (0..n).filter(|&i| truth[i][j] == 1.0).count();
        if relevant == 0 {
            continue;
        }
        // Sort sample indices by score descending; equal scores keep the
        // lower sample index first.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores[b][j]
                .partial_cmp(&scores[a][j])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut hits = 0.0;
        let mut ap = 0.0;
        for (rank0, &i) in order.iter().enumerate() {
            if truth[i][j] == 1.0 {
                hits += 1.0;
                ap += hits / (rank0 + 1) as f64;
            }
        }
        ap_sum += ap / relevant as f64;
        labels += 1.0;
    }
    if labels == 0.0 {
        0.0
    } else {
        ap_sum / labels
    }
}
