//! Literal transcriptions of the training objectives.
//!
//! Positive sets, softmax normalizers, and pair weights are all computed
//! with direct per-element loops, one anchor at a time. No max-shifted
//! exponentials, no broadcasting identities.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positive {
    /// Positive when candidate labels equal the anchor labels exactly.
    All,
    /// Positive when the label sets share at least one label.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    MulSupCon,
    Rld,
    Cld,
}

#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    pub tau: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Components {
    pub total: f64,
    pub contrastive: f64,
    pub g: f64,
    pub h: f64,
    pub w_penalty: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn shares_any(a: &[f64], b: &[f64]) -> bool {
    for i in 0..a.len() {
        if a[i] == 1.0 && b[i] == 1.0 {
            return true;
        }
    }
    false
}

fn equal_labels(a: &[f64], b: &[f64]) -> bool {
    for i in 0..a.len() {
        if a[i] != b[i] {
            return false;
        }
    }
    true
}

/// Indices of the candidates positive for the anchor under `mode`.
pub fn positives(y_i: &[f64], cand_y: &[Vec<f64>], mode: Positive) -> Vec<usize> {
    let mut out = Vec::new();
    for (p, yp) in cand_y.iter().enumerate() {
        let is_pos = match mode {
            Positive::All => equal_labels(y_i, yp),
            Positive::Any => shares_any(y_i, yp),
        };
        if is_pos {
            out.push(p);
        }
    }
    out
}

/// log of the temperature-scaled softmax probability of candidate `z_p`
/// for anchor `z_i`, normalized over every row of `all_z`.
pub fn log_softmax_term(z_i: &[f64], z_p: &[f64], all_z: &[Vec<f64>], tau: f64) -> f64 {
    let mut denom = 0.0;
    for za in all_z {
        denom += (dot(z_i, za) / tau).exp();
    }
    ((dot(z_i, z_p) / tau).exp() / denom).ln()
}

/// Per-anchor multi-label supervised contrastive loss: for each label the
/// anchor carries, average -log softmax over that label's positives, then
/// sum over labels. Labels whose positive set is empty contribute zero.
pub fn mulsupcon_anchor_loss(
    z_i: &[f64],
    y_i: &[f64],
    cand_z: &[Vec<f64>],
    cand_y: &[Vec<f64>],
    tau: f64,
    mode: Positive,
) -> f64 {
    let pos = positives(y_i, cand_y, mode);
    let mut loss = 0.0;
    for j in 0..y_i.len() {
        if y_i[j] != 1.0 {
            continue;
        }
        let with_label: Vec<usize> = pos.iter().cloned().filter(|&p| cand_y[p][j] == 1.0).collect();
        if with_label.is_empty() {
            continue;
        }
        let mut label_term = 0.0;
        for &p in &with_label {
            label_term += log_softmax_term(z_i, &cand_z[p], cand_z, tau);
        }
        loss += -label_term / with_label.len() as f64;
    }
    loss
}

/// Batch loss: sum of anchor losses divided by the total label count of
/// the batch. Zero when no anchor carries any label.
pub fn mulsupcon_batch_loss(
    z_q: &[Vec<f64>],
    y: &[Vec<f64>],
    cand_z: &[Vec<f64>],
    cand_y: &[Vec<f64>],
    tau: f64,
    mode: Positive,
) -> f64 {
    let mut total = 0.0;
    let mut label_count = 0.0;
    for i in 0..z_q.len() {
        total += mulsupcon_anchor_loss(&z_q[i], &y[i], cand_z, cand_y, tau, mode);
        label_count += y[i].iter().sum::<f64>();
    }
    if label_count == 0.0 {
        0.0
    } else {
        total / label_count
    }
}

pub fn rbf_weight(z_i: &[f64], z_p: &[f64], sigma: f64) -> f64 {
    (-dist_sq(z_i, z_p) / (2.0 * sigma * sigma)).exp()
}

pub fn contrast_weight(z_i: &[f64], z_p: &[f64], all_z: &[Vec<f64>], tau: f64) -> f64 {
    log_softmax_term(z_i, z_p, all_z, tau)
}

pub fn frob_sq(w: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for row in w {
        for &v in row {
            s += v * v;
        }
    }
    s
}

/// Full batch objective for the distribution-recovery modes, and the
/// plain contrastive loss for `Mode::MulSupCon`.
///
/// Candidates for every anchor are the batch keys followed by the queue
/// rows. The anchor's own distribution `d[i]` stands in for its key's
/// distribution. H pairs each anchor with its own (y, d) plus the (y, d)
/// of its queue positives; G and the main term range over all positives.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    z_q: &[Vec<f64>],
    z_k: &[Vec<f64>],
    y: &[Vec<f64>],
    d: &[Vec<f64>],
    queue_z: &[Vec<f64>],
    queue_y: &[Vec<f64>],
    queue_d: &[Vec<f64>],
    w_dist: &[Vec<f64>],
    hyper: Hyper,
    mode: Mode,
    positive: Positive,
    raw_log_weight: bool,
    w_penalty_per_anchor: bool,
) -> Components {
    let b = z_q.len();
    let mut cand_z: Vec<Vec<f64>> = z_k.to_vec();
    cand_z.extend(queue_z.iter().cloned());
    let mut cand_y: Vec<Vec<f64>> = y.to_vec();
    cand_y.extend(queue_y.iter().cloned());
    let mut cand_d: Vec<Vec<f64>> = d.to_vec();
    cand_d.extend(queue_d.iter().cloned());

    if mode == Mode::MulSupCon {
        let loss = mulsupcon_batch_loss(z_q, y, &cand_z, &cand_y, hyper.tau, positive);
        return Components { total: loss, contrastive: loss, g: 0.0, h: 0.0, w_penalty: 0.0 };
    }

    let mut contrastive = 0.0;
    let mut g_total = 0.0;
    let mut h_total = 0.0;
    for i in 0..b {
        let pos = positives(&y[i], &cand_y, positive);
        for j in 0..y[i].len() {
            if y[i][j] != 1.0 {
                continue;
            }
            for &p in &pos {
                if cand_y[p][j] != 1.0 {
                    continue;
                }
                let c2 = log_softmax_term(&z_q[i], &cand_z[p], &cand_z, hyper.tau);
                contrastive += -(cand_d[p][j] * cand_y[p][j] * c2);
            }
        }
        for &p in &pos {
            let w = match mode {
                Mode::Rld => rbf_weight(&z_q[i], &cand_z[p], hyper.sigma),
                Mode::Cld => {
                    let c2 = log_softmax_term(&z_q[i], &cand_z[p], &cand_z, hyper.tau);
                    if raw_log_weight {
                        c2
                    } else {
                        c2.exp()
                    }
                }
                Mode::MulSupCon => unreachable!(),
            };
            g_total += w * dist_sq(&d[i], &cand_d[p]);
        }
        let mut h_i = dist_sq(&y[i], &d[i]);
        for &p in &pos {
            if p >= b {
                h_i += dist_sq(&cand_y[p], &cand_d[p]);
            }
        }
        h_total += h_i;
    }
    let copies = if w_penalty_per_anchor { b as f64 } else { 1.0 };
    let g = g_total;
    let h = hyper.alpha * h_total;
    let w_penalty = hyper.beta * frob_sq(w_dist) * copies;
    let total = contrastive + g + h + w_penalty;
    Components { total, contrastive, g, h, w_penalty }
}

/// Mean binary cross-entropy computed through the plain sigmoid. Only
/// valid for moderate logits; the optimized kernel exists precisely to
/// avoid this form's overflow.
pub fn bce_mean(logits: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for (xr, tr) in logits.iter().zip(targets.iter()) {
        for (&x, &t) in xr.iter().zip(tr.iter()) {
            let p = 1.0 / (1.0 + (-x).exp());
            total += -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            count += 1.0;
        }
    }
    total / count
}
