//! Training objectives.
//!
//! For a batch of `b` anchors the candidate set is the batch's key
//! embeddings followed by the queue snapshot (`m = b + len(queue)` rows).
//! Candidate labels come from the batch labels and the label queue;
//! candidate distributions pair the batch's *live* head outputs with the
//! detached distribution queue, so gradients flow through in-batch
//! distributions but never through queue rows.
//!
//! An anchor's positive set is selected by label overlap (ANY) or exact
//! label equality (ALL). Its own key is always a candidate and, carrying
//! identical labels, always a positive.
//!
//! Three modes:
//! * `MulSupCon`: per-label supervised contrastive loss, batch-averaged
//!   by total label count.
//! * `Rld`: distribution-weighted contrastive term plus a label
//!   distribution recovery regularizer whose pair weights are an RBF of
//!   embedding distance.
//! * `Cld`: same, with pair weights taken from the anchor's contrastive
//!   softmax instead (by default the probability, i.e. exp of the
//!   log-softmax; a flag switches to the raw log value).

use crate::matrix::{Matrix, NumError};
use crate::memory::QueueSnapshot;
use crate::ops;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    /// Softmax temperature.
    pub tau: f64,
    /// RBF bandwidth for the `Rld` pair weight.
    pub sigma: f64,
    /// Weight of the H (distribution fit) term.
    pub alpha: f64,
    /// Weight of the head-matrix Frobenius penalty.
    pub beta: f64,
}

impl Hyper {
    pub fn validate(&self) -> Result<(), NumError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(NumError::param("hyper", format!("tau {} must be positive", self.tau)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(NumError::param("hyper", format!("sigma {} must be positive", self.sigma)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(NumError::param("hyper", format!("alpha {} must be non-negative", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(NumError::param("hyper", format!("beta {} must be non-negative", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositiveMode {
    /// Exact label-vector equality.
    All,
    /// At least one shared label.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    MulSupCon,
    Rld,
    Cld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Rbf,
    Contrast,
}

#[derive(Debug, Clone, Copy)]
pub struct LossOptions {
    pub positive_mode: PositiveMode,
    /// Use the raw log-softmax value as the `Cld` pair weight instead of
    /// its exponential.
    pub cld_raw_log_weight: bool,
    /// Count the Frobenius penalty once per anchor instead of once per
    /// batch.
    pub w_penalty_per_anchor: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            positive_mode: PositiveMode::Any,
            cld_raw_log_weight: false,
            w_penalty_per_anchor: false,
        }
    }
}

/// Scalar loss pieces as they enter the total: `g` is the raw pair term,
/// `h` already includes alpha, `w_penalty` already includes beta, so
/// `total = contrastive + g + h + w_penalty` in the recovery modes.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossComponents {
    pub total: f64,
    pub contrastive: f64,
    pub g: f64,
    pub h: f64,
    pub w_penalty: f64,
}

impl LossComponents {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.contrastive.is_finite()
            && self.g.is_finite()
            && self.h.is_finite()
            && self.w_penalty.is_finite()
    }
}

/// Candidate membership of one anchor's positive set.
pub fn select_positives(y_i: &[f64], cand_y: &Matrix, mode: PositiveMode) -> Vec<bool> {
    (0..cand_y.rows())
        .map(|p| {
            let yp = cand_y.row(p);
            match mode {
                PositiveMode::All => y_i == yp,
                PositiveMode::Any => y_i.iter().zip(yp.iter()).any(|(&a, &b)| a == 1.0 && b == 1.0),
            }
        })
        .collect()
}

fn positive_mask(y: &Matrix, cand_y: &Matrix, mode: PositiveMode) -> Vec<Vec<bool>> {
    (0..y.rows())
        .map(|i| select_positives(y.row(i), cand_y, mode))
        .collect()
}

fn mask_to_matrix(mask: &[Vec<bool>]) -> Matrix {
    let rows = mask.len();
    let cols = if rows == 0 { 0 } else { mask[0].len() };
    let mut m = Matrix::zeros(rows, cols);
    for (i, row) in mask.iter().enumerate() {
        for (p, &on) in row.iter().enumerate() {
            if on {
                m.set(i, p, 1.0);
            }
        }
    }
    m
}

/// Per-pair averaging weights of the plain contrastive loss, plus the
/// batch's total label count. Entry (i, p) is the sum over the anchor's
/// labels j with `cand_y[p][j] = 1` of `1 / |P^j(i)|`.
fn mulsupcon_weights(
    y: &Matrix,
    cand_y: &Matrix,
    mask: &[Vec<bool>],
) -> (Matrix, f64) {
    let b = y.rows();
    let c = y.cols();
    let m = cand_y.rows();
    let mut w = Matrix::zeros(b, m);
    let mut total_labels = 0.0;
    for i in 0..b {
        for j in 0..c {
            if y.get(i, j) != 1.0 {
                continue;
            }
            total_labels += 1.0;
            let members: Vec<usize> = (0..m)
                .filter(|&p| mask[i][p] && cand_y.get(p, j) == 1.0)
                .collect();
            if members.is_empty() {
                continue;
            }
            let share = 1.0 / members.len() as f64;
            for p in members {
                w.set(i, p, w.get(i, p) + share);
            }
        }
    }
    (w, total_labels)
}

/// Inputs shared by the batch-loss builders. `z` and `d` live on the
/// tape; everything else is constant data.
struct CandidateData {
    cand_z: Matrix,
    cand_y: Matrix,
    mask: Vec<Vec<bool>>,
}

fn assemble_candidates(
    z_k: &Matrix,
    y: &Matrix,
    queue: &QueueSnapshot,
    mode: PositiveMode,
) -> Result<CandidateData, NumError> {
    if z_k.rows() != y.rows() {
        return Err(NumError::dim(
            "batch_loss",
            format!("{} keys vs {} label rows", z_k.rows(), y.rows()),
        ));
    }
    if !queue.is_empty() {
        if queue.z.cols() != z_k.cols() {
            return Err(NumError::dim(
                "batch_loss",
                format!("queue embeds {} dims, batch {}", queue.z.cols(), z_k.cols()),
            ));
        }
        if queue.y.cols() != y.cols() {
            return Err(NumError::dim(
                "batch_loss",
                format!("queue labels {} wide, batch {}", queue.y.cols(), y.cols()),
            ));
        }
    }
    let cand_z = z_k.concat_rows(&queue.z)?;
    let cand_y = y.concat_rows(&queue.y)?;
    let mask = positive_mask(y, &cand_y, mode);
    Ok(CandidateData { cand_z, cand_y, mask })
}

/// Tape nodes of the batch objective. Components carry the same scaling
/// convention as [`LossComponents`].
pub struct LossVars {
    pub total: Var,
    pub contrastive: Var,
    pub g: Var,
    pub h: Var,
    pub w_penalty: Var,
}

impl LossVars {
    pub fn components(&self, tape: &Tape) -> LossComponents {
        LossComponents {
            total: tape.scalar(self.total),
            contrastive: tape.scalar(self.contrastive),
            g: tape.scalar(self.g),
            h: tape.scalar(self.h),
            w_penalty: tape.scalar(self.w_penalty),
        }
    }
}

/// Record the full batch objective on `tape`.
///
/// `z` (b x e) and `d` (b x c) are the differentiable query outputs;
/// `dist_w` is the head weight (for the Frobenius penalty); `z_k`, `y`
/// and the queue snapshot are constants.
#[allow(clippy::too_many_arguments)]
pub fn build_total_loss(
    tape: &mut Tape,
    z: Var,
    d: Var,
    dist_w: Var,
    z_k: &Matrix,
    y: &Matrix,
    queue: &QueueSnapshot,
    hyper: &Hyper,
    mode: LossMode,
    opts: &LossOptions,
) -> Result<LossVars, NumError> {
    hyper.validate()?;
    let b = tape.value(z).rows();
    if z_k.rows() != b || tape.value(d).rows() != b {
        return Err(NumError::dim(
            "build_total_loss",
            format!(
                "anchor rows disagree: z {}, z_k {}, d {}",
                b,
                z_k.rows(),
                tape.value(d).rows()
            ),
        ));
    }
    let data = assemble_candidates(z_k, y, queue, opts.positive_mode)?;
    let mask_m = mask_to_matrix(&data.mask);

    let cand_z_v = tape.constant(data.cand_z.clone());
    let y_v = tape.constant(y.clone());

    // Similarities against every candidate, and the log-softmax row.
    let s_raw = tape.matmul_nt(z, cand_z_v);
    let s_scaled = tape.scale(s_raw, 1.0 / hyper.tau);
    let c2 = tape.row_log_softmax(s_scaled);

    if mode == LossMode::MulSupCon {
        let (weights, total_labels) = mulsupcon_weights(y, &data.cand_y, &data.mask);
        let zero = tape.scalar_const(0.0);
        let total = if total_labels == 0.0 {
            zero
        } else {
            let w_v = tape.constant(weights);
            let weighted = tape.mul(w_v, c2);
            let s = tape.sum(weighted);
            tape.scale(s, -1.0 / total_labels)
        };
        return Ok(LossVars { total, contrastive: total, g: zero, h: zero, w_penalty: zero });
    }

    // Live distributions stacked over the detached queue distributions.
    let cand_d = if queue.is_empty() {
        d
    } else {
        let qd = tape.constant(queue.d.clone());
        tape.concat_rows(d, qd)
    };
    let mask_v = tape.constant(mask_m);

    // Main term: -(sum over anchors and their positives of
    // d_p^j y_p^j log-softmax), vectorized as
    // M .* (Y (Cy .* Cd)^T) .* C2.
    let cand_y_v = tape.constant(data.cand_y.clone());
    let yd = tape.mul(cand_y_v, cand_d);
    let t = tape.matmul_nt(y_v, yd);
    let u = tape.mul(mask_v, t);
    let uc = tape.mul(u, c2);
    let s = tape.sum(uc);
    let contrastive = tape.scale(s, -1.0);

    // Pairwise squared distances between live and candidate
    // distributions: |d_i|^2 - 2 d_i . d_p + |d_p|^2.
    let d_sq = tape.square(d);
    let d_rs = tape.row_sum(d_sq);
    let cd_sq = tape.square(cand_d);
    let cd_rs = tape.row_sum(cd_sq);
    let cd_rs_row = tape.transpose(cd_rs);
    let cross = tape.matmul_nt(d, cand_d);
    let cross2 = tape.scale(cross, -2.0);
    let with_col = tape.add_col_vec(cross2, d_rs);
    let dist2_d = tape.add_row_vec(with_col, cd_rs_row);

    let weight = match mode {
        LossMode::Rld => {
            // Embedding distances via the same expansion; candidates are
            // constant so only the anchor side contributes gradient.
            let z_sq = tape.square(z);
            let z_rs = tape.row_sum(z_sq);
            let mut cz_rs = Matrix::zeros(1, data.cand_z.rows());
            for r in 0..data.cand_z.rows() {
                cz_rs.set(0, r, data.cand_z.row(r).iter().map(|v| v * v).sum());
            }
            let cz_rs_v = tape.constant(cz_rs);
            let s2 = tape.scale(s_raw, -2.0);
            let with_col_z = tape.add_col_vec(s2, z_rs);
            let dist2_z = tape.add_row_vec(with_col_z, cz_rs_v);
            let scaled = tape.scale(dist2_z, -1.0 / (2.0 * hyper.sigma * hyper.sigma));
            tape.exp(scaled)
        }
        LossMode::Cld => {
            if opts.cld_raw_log_weight {
                c2
            } else {
                tape.exp(c2)
            }
        }
        LossMode::MulSupCon => unreachable!(),
    };
    let wd = tape.mul(weight, dist2_d);
    let g_all = tape.mul(mask_v, wd);
    let g = tape.sum(g_all);

    // H: each anchor against its own (y, d), plus the constant
    // (label, distribution) mismatch of its queue positives.
    let diff = tape.sub(d, y_v);
    let diff_sq = tape.square(diff);
    let h_own = tape.sum(diff_sq);
    let mut h_queue = 0.0;
    for row in &data.mask {
        for (p, &on) in row.iter().enumerate().skip(b) {
            if on {
                let qr = p - b;
                let mismatch: f64 = queue
                    .y
                    .row(qr)
                    .iter()
                    .zip(queue.d.row(qr).iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                h_queue += mismatch;
            }
        }
    }
    let h_queue_v = tape.scalar_const(h_queue);
    let h_raw = tape.add(h_own, h_queue_v);
    let h = tape.scale(h_raw, hyper.alpha);

    let w_sq = tape.square(dist_w);
    let w_sum = tape.sum(w_sq);
    let copies = if opts.w_penalty_per_anchor { b as f64 } else { 1.0 };
    let w_penalty = tape.scale(w_sum, hyper.beta * copies);

    let cg = tape.add(contrastive, g);
    let cgh = tape.add(cg, h);
    let total = tape.add(cgh, w_penalty);
    Ok(LossVars { total, contrastive, g, h, w_penalty })
}

/// Scalar batch objective (no gradients). Same semantics as
/// [`build_total_loss`].
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    z_q: &Matrix,
    z_k: &Matrix,
    y: &Matrix,
    d: &Matrix,
    w_dist: &Matrix,
    queue: &QueueSnapshot,
    hyper: &Hyper,
    mode: LossMode,
    opts: &LossOptions,
) -> Result<LossComponents, NumError> {
    let mut tape = Tape::new();
    let z = tape.constant(z_q.clone());
    let dv = tape.constant(d.clone());
    let wv = tape.constant(w_dist.clone());
    let vars = build_total_loss(&mut tape, z, dv, wv, z_k, y, queue, hyper, mode, opts)?;
    let components = vars.components(&tape);
    if !components.is_finite() {
        return Err(NumError::NonFinite { op: "total_loss" });
    }
    Ok(components)
}

/// Plain multi-label supervised contrastive loss over explicit
/// candidates. Exposed for direct control over the candidate set; the
/// batch convention (keys then queue) is applied by [`mulsupcon_loss`].
pub fn mulsupcon_from_candidates(
    z_q: &Matrix,
    y: &Matrix,
    cand_z: &Matrix,
    cand_y: &Matrix,
    tau: f64,
    mode: PositiveMode,
) -> Result<f64, NumError> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(NumError::param("mulsupcon", format!("tau {} must be positive", tau)));
    }
    let mask = positive_mask(y, cand_y, mode);
    let (weights, total_labels) = mulsupcon_weights(y, cand_y, &mask);
    if total_labels == 0.0 {
        return Ok(0.0);
    }
    let s = crate::matrix::matmul_nt(z_q, cand_z)?.scale(1.0 / tau);
    let c2 = ops::row_log_softmax(&s);
    let value = -weights.hadamard(&c2)?.sum() / total_labels;
    if !value.is_finite() {
        return Err(NumError::NonFinite { op: "mulsupcon" });
    }
    Ok(value)
}

/// Batch-convention contrastive loss: candidates are the batch keys
/// followed by the queue snapshot.
pub fn mulsupcon_loss(
    z_q: &Matrix,
    z_k: &Matrix,
    y: &Matrix,
    queue: &QueueSnapshot,
    tau: f64,
    mode: PositiveMode,
) -> Result<f64, NumError> {
    let data = assemble_candidates(z_k, y, queue, mode)?;
    mulsupcon_from_candidates(z_q, y, &data.cand_z, &data.cand_y, tau, mode)
}

/// Weight of one (anchor, positive) pair.
///
/// `Rbf`: exp(-|z_i - z_p|^2 / (2 sigma^2)), in (0, 1], equal to 1 for
/// coincident embeddings. `Contrast`: the anchor's log-softmax value for
/// the positive, normalized over `all_z` (always <= 0).
pub fn pair_weight(
    z_i: &[f64],
    z_p: &[f64],
    all_z: &Matrix,
    hyper: &Hyper,
    kind: WeightKind,
) -> Result<f64, NumError> {
    hyper.validate()?;
    if z_i.len() != z_p.len() {
        return Err(NumError::dim(
            "pair_weight",
            format!("{} vs {} dims", z_i.len(), z_p.len()),
        ));
    }
    match kind {
        WeightKind::Rbf => {
            let dist_sq: f64 = z_i
                .iter()
                .zip(z_p.iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            Ok((-dist_sq / (2.0 * hyper.sigma * hyper.sigma)).exp())
        }
        WeightKind::Contrast => {
            if all_z.cols() != z_i.len() || all_z.rows() == 0 {
                return Err(NumError::dim(
                    "pair_weight",
                    format!("candidate set {:?} vs {} dims", all_z.shape(), z_i.len()),
                ));
            }
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum::<f64>();
            let s_p = dot(z_i, z_p) / hyper.tau;
            let mut max = f64::NEG_INFINITY;
            let sims: Vec<f64> = (0..all_z.rows())
                .map(|r| {
                    let s = dot(z_i, all_z.row(r)) / hyper.tau;
                    max = max.max(s);
                    s
                })
                .collect();
            let lse = max + sims.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
            Ok(s_p - lse)
        }
    }
}

/// One anchor's label-distribution recovery inputs. `pos_z`/`pos_d` are
/// the anchor's positives (for the weighted pair term); `h_y`/`h_d` are
/// the stacked logical-label/distribution pairs entering the fit term,
/// the anchor's own pair first; `all_z` is the anchor's full candidate
/// set, needed only for the `Contrast` weight normalizer.
pub struct LdAnchor<'a> {
    pub z_i: &'a [f64],
    pub d_i: &'a [f64],
    pub y_i: &'a [f64],
    pub pos_z: &'a Matrix,
    pub pos_d: &'a Matrix,
    pub h_y: &'a Matrix,
    pub h_d: &'a Matrix,
    pub all_z: &'a Matrix,
}

/// G_i + alpha * H_i + beta * |W|_F^2 for one anchor.
pub fn label_distribution_loss(
    anchor: &LdAnchor,
    w_dist: &Matrix,
    hyper: &Hyper,
    kind: WeightKind,
    raw_log_weight: bool,
) -> Result<f64, NumError> {
    hyper.validate()?;
    if anchor.pos_z.rows() != anchor.pos_d.rows() {
        return Err(NumError::dim(
            "label_distribution_loss",
            format!("{} pos_z rows vs {} pos_d rows", anchor.pos_z.rows(), anchor.pos_d.rows()),
        ));
    }
    if anchor.h_y.shape() != anchor.h_d.shape() {
        return Err(NumError::dim(
            "label_distribution_loss",
            format!("h_y {:?} vs h_d {:?}", anchor.h_y.shape(), anchor.h_d.shape()),
        ));
    }
    let mut g = 0.0;
    for p in 0..anchor.pos_z.rows() {
        let mut w = pair_weight(anchor.z_i, anchor.pos_z.row(p), anchor.all_z, hyper, kind)?;
        if kind == WeightKind::Contrast && !raw_log_weight {
            w = w.exp();
        }
        let dist_sq: f64 = anchor
            .d_i
            .iter()
            .zip(anchor.pos_d.row(p).iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        g += w * dist_sq;
    }
    let mut h = 0.0;
    for r in 0..anchor.h_y.rows() {
        h += anchor
            .h_y
            .row(r)
            .iter()
            .zip(anchor.h_d.row(r).iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    let value = g + hyper.alpha * h + hyper.beta * w_dist.frob_sq();
    if !value.is_finite() {
        return Err(NumError::NonFinite { op: "label_distribution_loss" });
    }
    Ok(value)
}

/// Mean binary cross-entropy over logits, in the overflow-safe form.
pub fn bce_loss(logits: &Matrix, targets: &Matrix) -> Result<f64, NumError> {
    if logits.shape() != targets.shape() {
        return Err(NumError::dim(
            "bce_loss",
            format!("{:?} vs {:?}", logits.shape(), targets.shape()),
        ));
    }
    if logits.rows() == 0 {
        return Err(NumError::degenerate("bce_loss", "no rows".to_string()));
    }
    let n = (logits.rows() * logits.cols()) as f64;
    let mut acc = 0.0;
    for (&x, &t) in logits.data().iter().zip(targets.data().iter()) {
        acc += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
    }
    let value = acc / n;
    if !value.is_finite() {
        return Err(NumError::NonFinite { op: "bce_loss" });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::ops::{row_l2_normalize, row_softmax};
    use crate::rng::Rng;
    use mlcld_oracles::losses as oracle;

    const TOL: f64 = 1e-9;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    fn unit_rows(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        rng.fill_uniform(&mut m, -1.0, 1.0);
        let (normed, _) = row_l2_normalize(&m).unwrap();
        normed
    }

    fn dist_rows(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        rng.fill_uniform(&mut m, -2.0, 2.0);
        row_softmax(&m)
    }

    fn label_rows(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if rng.coin(0.45) {
                    m.set(i, j, 1.0);
                }
            }
        }
        m
    }

    fn queue_of(len: usize, e: usize, c: usize, rng: &mut Rng) -> QueueSnapshot {
        QueueSnapshot {
            z: unit_rows(len, e, rng),
            y: label_rows(len, c, rng),
            d: dist_rows(len, c, rng),
        }
    }

    fn empty_queue(e: usize, c: usize) -> QueueSnapshot {
        QueueSnapshot {
            z: Matrix::zeros(0, e),
            y: Matrix::zeros(0, c),
            d: Matrix::zeros(0, c),
        }
    }

    fn hyper() -> Hyper {
        Hyper { tau: 0.2, sigma: 0.35, alpha: 0.7, beta: 0.003 }
    }

    #[test]
    fn total_loss_matches_naive_reference_across_modes() {
        let (b, e, c) = (4, 6, 5);
        let mut rng = Rng::new(41, 0);
        let mut checked = 0usize;
        for mode in [LossMode::MulSupCon, LossMode::Rld, LossMode::Cld] {
            for positive in [PositiveMode::Any, PositiveMode::All] {
                for queue_len in [0usize, 7] {
                    for raw in [false, true] {
                        let z_q = unit_rows(b, e, &mut rng);
                        let z_k = unit_rows(b, e, &mut rng);
                        let y = label_rows(b, c, &mut rng);
                        let d = dist_rows(b, c, &mut rng);
                        let mut w = Matrix::zeros(e, c);
                        rng.fill_uniform(&mut w, -0.5, 0.5);
                        let queue = if queue_len == 0 {
                            empty_queue(e, c)
                        } else {
                            queue_of(queue_len, e, c, &mut rng)
                        };
                        let opts = LossOptions {
                            positive_mode: positive,
                            cld_raw_log_weight: raw,
                            w_penalty_per_anchor: raw,
                        };
                        let got = total_loss(
                            &z_q, &z_k, &y, &d, &w, &queue, &hyper(), mode, &opts,
                        )
                        .unwrap();
                        let want = oracle::total_loss(
                            &z_q.to_rows(),
                            &z_k.to_rows(),
                            &y.to_rows(),
                            &d.to_rows(),
                            &queue.z.to_rows(),
                            &queue.y.to_rows(),
                            &queue.d.to_rows(),
                            &w.to_rows(),
                            oracle::Hyper {
                                tau: hyper().tau,
                                sigma: hyper().sigma,
                                alpha: hyper().alpha,
                                beta: hyper().beta,
                            },
                            match mode {
                                LossMode::MulSupCon => oracle::Mode::MulSupCon,
                                LossMode::Rld => oracle::Mode::Rld,
                                LossMode::Cld => oracle::Mode::Cld,
                            },
                            match positive {
                                PositiveMode::All => oracle::Positive::All,
                                PositiveMode::Any => oracle::Positive::Any,
                            },
                            raw,
                            raw,
                        );
                        assert!(
                            rel_close(got.total, want.total, TOL),
                            "{mode:?}/{positive:?}/q{queue_len}/raw{raw}: total {} vs {}",
                            got.total,
                            want.total
                        );
                        assert!(rel_close(got.contrastive, want.contrastive, TOL));
                        assert!(rel_close(got.g, want.g, TOL));
                        assert!(rel_close(got.h, want.h, TOL));
                        assert!(rel_close(got.w_penalty, want.w_penalty, TOL));
                        let sum = got.contrastive + got.g + got.h + got.w_penalty;
                        assert!(rel_close(got.total, sum, 1e-12));
                        checked += 1;
                    }
                }
            }
        }
        assert_eq!(checked, 24);
    }

    #[test]
    fn mulsupcon_loss_matches_naive_reference() {
        let (b, e, c) = (5, 4, 6);
        let mut rng = Rng::new(97, 0);
        for positive in [PositiveMode::Any, PositiveMode::All] {
            for queue_len in [0usize, 9] {
                let z_q = unit_rows(b, e, &mut rng);
                let z_k = unit_rows(b, e, &mut rng);
                let y = label_rows(b, c, &mut rng);
                let queue = if queue_len == 0 {
                    empty_queue(e, c)
                } else {
                    queue_of(queue_len, e, c, &mut rng)
                };
                let got = mulsupcon_loss(&z_q, &z_k, &y, &queue, 0.15, positive).unwrap();
                let mut cand_z = z_k.to_rows();
                cand_z.extend(queue.z.to_rows());
                let mut cand_y = y.to_rows();
                cand_y.extend(queue.y.to_rows());
                let want = oracle::mulsupcon_batch_loss(
                    &z_q.to_rows(),
                    &y.to_rows(),
                    &cand_z,
                    &cand_y,
                    0.15,
                    match positive {
                        PositiveMode::All => oracle::Positive::All,
                        PositiveMode::Any => oracle::Positive::Any,
                    },
                );
                assert!(rel_close(got, want, TOL), "{positive:?}/q{queue_len}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn mulsupcon_zero_label_batch_is_zero() {
        let mut rng = Rng::new(3, 0);
        let z_q = unit_rows(3, 4, &mut rng);
        let z_k = unit_rows(3, 4, &mut rng);
        let y = Matrix::zeros(3, 5);
        let q = empty_queue(4, 5);
        let got = mulsupcon_loss(&z_q, &z_k, &y, &q, 0.5, PositiveMode::Any).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn mulsupcon_two_candidate_value_is_exact() {
        // One anchor [1, 0] with a single label; candidates [1, 0] and
        // [0, 1] both carry it. At tau = 1 the similarities are 1 and 0,
        // so the loss is -(log softmax(1) + log softmax(0)) / 2
        // = (0.31326... + 1.31326...) / 2.
        let z_q = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let cand_z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let cand_y = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let got =
            mulsupcon_from_candidates(&z_q, &y, &cand_z, &cand_y, 1.0, PositiveMode::Any).unwrap();
        let softmax_log = |s: f64| s - (1f64.exp() + 1.0).ln();
        let want = -(softmax_log(1.0) + softmax_log(0.0)) / 2.0;
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.8132616875182228).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_gradients_match_finite_differences() {
        let (b, e, c) = (3, 4, 4);
        let mut rng = Rng::new(1234, 0);
        let z0 = unit_rows(b, e, &mut rng);
        let d0 = dist_rows(b, c, &mut rng);
        let mut w0 = Matrix::zeros(e, c);
        rng.fill_uniform(&mut w0, -0.4, 0.4);
        let z_k = unit_rows(b, e, &mut rng);
        let y = label_rows(b, c, &mut rng);
        let queue = queue_of(5, e, c, &mut rng);
        let hy = hyper();
        for (mode, raw) in [
            (LossMode::MulSupCon, false),
            (LossMode::Rld, false),
            (LossMode::Cld, false),
            (LossMode::Cld, true),
        ] {
            let opts = LossOptions {
                positive_mode: PositiveMode::Any,
                cld_raw_log_weight: raw,
                w_penalty_per_anchor: false,
            };
            let mut tape = Tape::new();
            let z = tape.leaf(z0.clone());
            let d = tape.leaf(d0.clone());
            let w = tape.leaf(w0.clone());
            let vars =
                build_total_loss(&mut tape, z, d, w, &z_k, &y, &queue, &hy, mode, &opts).unwrap();
            let grads = tape.backward(vars.total);
            let shape_of = |v: Var, m: &Matrix| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
            };
            let analytic = [shape_of(z, &z0), shape_of(d, &d0), shape_of(w, &w0)];
            let params = [z0.clone(), d0.clone(), w0.clone()];
            let report = grad_check(
                |ps: &[Matrix]| {
                    let mut t = Tape::new();
                    let zv = t.constant(ps[0].clone());
                    let dv = t.constant(ps[1].clone());
                    let wv = t.constant(ps[2].clone());
                    let lv =
                        build_total_loss(&mut t, zv, dv, wv, &z_k, &y, &queue, &hy, mode, &opts)?;
                    Ok(t.scalar(lv.total))
                },
                &params,
                &analytic,
                1e-5,
            )
            .unwrap();
            assert!(
                report.max_rel_err < 1e-6,
                "{mode:?} raw={raw}: max rel err {} at {:?}",
                report.max_rel_err,
                report.worst
            );
        }
    }

    #[test]
    fn queue_distribution_rows_stay_detached() {
        // Gradient flows through the live distributions but never into
        // the queue snapshot, so H's queue share acts as a constant
        // offset: doubling it shifts the loss without touching dL/dd.
        let (b, e, c) = (2, 3, 3);
        let mut rng = Rng::new(11, 0);
        let z0 = unit_rows(b, e, &mut rng);
        let d0 = dist_rows(b, c, &mut rng);
        let w0 = Matrix::filled(e, c, 0.1);
        let z_k = unit_rows(b, e, &mut rng);
        let y = label_rows(b, c, &mut rng);
        let queue = queue_of(4, e, c, &mut rng);
        let opts = LossOptions::default();
        let mut tape = Tape::new();
        let z = tape.leaf(z0);
        let d = tape.leaf(d0.clone());
        let w = tape.leaf(w0);
        let vars = build_total_loss(
            &mut tape, z, d, w, &z_k, &y, &queue, &hyper(), LossMode::Cld, &opts,
        )
        .unwrap();
        let grads = tape.backward(vars.total);
        let dd = grads.get(d).expect("live distributions get gradient");
        assert_eq!(dd.shape(), d0.shape());
        assert!(dd.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn pair_weight_closed_forms() {
        let hy = Hyper { tau: 1.0, sigma: 0.01, alpha: 0.0, beta: 0.0 };
        let z = vec![0.3, -0.4];
        let all = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let w = pair_weight(&z, &z, &all, &hy, WeightKind::Rbf).unwrap();
        assert_eq!(w, 1.0);

        // Distance 0.01 at sigma 0.01 gives exp(-1/2).
        let a = vec![0.0, 0.0];
        let b = vec![0.01, 0.0];
        let w = pair_weight(&a, &b, &all, &hy, WeightKind::Rbf).unwrap();
        assert!((w - (-0.5f64).exp()).abs() < 1e-15);

        // Similarities 1 and 0 at tau 1: log softmax of the former is
        // -ln(1 + exp(-1)).
        let zi = vec![1.0, 0.0];
        let zp = vec![1.0, 0.0];
        let w = pair_weight(&zi, &zp, &all, &hy, WeightKind::Contrast).unwrap();
        assert!((w - -(1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((w - -0.3132616875182228).abs() < 1e-12);
    }

    #[test]
    fn pair_weight_matches_naive_reference() {
        let mut rng = Rng::new(77, 0);
        let hy = Hyper { tau: 0.3, sigma: 0.25, alpha: 0.0, beta: 0.0 };
        for _ in 0..20 {
            let all = unit_rows(6, 5, &mut rng);
            let zi = all.row(0).to_vec();
            let zp = all.row(3).to_vec();
            let rbf = pair_weight(&zi, &zp, &all, &hy, WeightKind::Rbf).unwrap();
            assert!(rel_close(rbf, oracle::rbf_weight(&zi, &zp, hy.sigma), TOL));
            let con = pair_weight(&zi, &zp, &all, &hy, WeightKind::Contrast).unwrap();
            assert!(rel_close(con, oracle::contrast_weight(&zi, &zp, &all.to_rows(), hy.tau), TOL));
        }
    }

    #[test]
    fn anchor_recovery_loss_matches_naive_assembly() {
        let mut rng = Rng::new(55, 0);
        let hy = Hyper { tau: 0.2, sigma: 0.4, alpha: 0.9, beta: 0.01 };
        for kind in [WeightKind::Rbf, WeightKind::Contrast] {
            for raw in [false, true] {
                let all_z = unit_rows(7, 4, &mut rng);
                let zi = all_z.row(0).to_vec();
                let di = dist_rows(1, 5, &mut rng).row(0).to_vec();
                let yi = label_rows(1, 5, &mut rng).row(0).to_vec();
                let pos_z = unit_rows(3, 4, &mut rng);
                let pos_d = dist_rows(3, 5, &mut rng);
                let h_y = label_rows(2, 5, &mut rng);
                let h_d = dist_rows(2, 5, &mut rng);
                let mut w = Matrix::zeros(4, 5);
                rng.fill_uniform(&mut w, -0.3, 0.3);
                let anchor = LdAnchor {
                    z_i: &zi,
                    d_i: &di,
                    y_i: &yi,
                    pos_z: &pos_z,
                    pos_d: &pos_d,
                    h_y: &h_y,
                    h_d: &h_d,
                    all_z: &all_z,
                };
                let got = label_distribution_loss(&anchor, &w, &hy, kind, raw).unwrap();
                let mut want = 0.0;
                for p in 0..3 {
                    let mut pw = match kind {
                        WeightKind::Rbf => oracle::rbf_weight(&zi, pos_z.row(p), hy.sigma),
                        WeightKind::Contrast => {
                            oracle::contrast_weight(&zi, pos_z.row(p), &all_z.to_rows(), hy.tau)
                        }
                    };
                    if kind == WeightKind::Contrast && !raw {
                        pw = pw.exp();
                    }
                    let dsq: f64 = di
                        .iter()
                        .zip(pos_d.row(p).iter())
                        .map(|(&x, &y)| (x - y) * (x - y))
                        .sum();
                    want += pw * dsq;
                }
                let mut h = 0.0;
                for r in 0..2 {
                    h += h_y
                        .row(r)
                        .iter()
                        .zip(h_d.row(r).iter())
                        .map(|(&x, &y)| (x - y) * (x - y))
                        .sum::<f64>();
                }
                want += hy.alpha * h + hy.beta * oracle::frob_sq(&w.to_rows());
                assert!(rel_close(got, want, TOL), "{kind:?} raw={raw}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn bce_matches_naive_reference_and_pinned_value() {
        // All-zero logits give ln 2 regardless of targets.
        let logits = Matrix::zeros(2, 3);
        let targets = Matrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let got = bce_loss(&logits, &targets).unwrap();
        assert!((got - 2f64.ln()).abs() < 1e-15);

        let mut rng = Rng::new(21, 0);
        for _ in 0..10 {
            let mut x = Matrix::zeros(4, 6);
            rng.fill_uniform(&mut x, -5.0, 5.0);
            let t = label_rows(4, 6, &mut rng);
            let got = bce_loss(&x, &t).unwrap();
            let want = oracle::bce_mean(&x.to_rows(), &t.to_rows());
            assert!(rel_close(got, want, 1e-9));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = Rng::new(5, 0);
        let z = unit_rows(2, 3, &mut rng);
        let y = label_rows(2, 4, &mut rng);
        let d = dist_rows(2, 4, &mut rng);
        let w = Matrix::filled(3, 4, 0.1);
        let q = empty_queue(3, 4);

        let bad_tau = Hyper { tau: 0.0, sigma: 0.1, alpha: 0.0, beta: 0.0 };
        assert!(total_loss(&z, &z, &y, &d, &w, &q, &bad_tau, LossMode::Cld, &LossOptions::default())
            .is_err());

        let short = unit_rows(1, 3, &mut rng);
        assert!(total_loss(&z, &short, &y, &d, &w, &q, &hyper(), LossMode::Cld, &LossOptions::default())
            .is_err());

        let wide_queue = queue_of(2, 5, 4, &mut rng);
        assert!(total_loss(&z, &z, &y, &d, &w, &wide_queue, &hyper(), LossMode::Cld, &LossOptions::default())
            .is_err());

        assert!(mulsupcon_loss(&z, &z, &y, &q, -1.0, PositiveMode::Any).is_err());
        assert!(bce_loss(&Matrix::zeros(2, 3), &Matrix::zeros(3, 2)).is_err());
        assert!(bce_loss(&Matrix::zeros(0, 3), &Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn positive_selection_follows_mode() {
        let y_i = vec![1.0, 0.0, 1.0];
        let cand_y = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(select_positives(&y_i, &cand_y, PositiveMode::Any), [true, true, false, false]);
        assert_eq!(select_positives(&y_i, &cand_y, PositiveMode::All), [true, false, false, false]);
    }
}
