//! Central finite-difference gradient verification.
//!
//! Used by the test suites to validate every analytic gradient the tape
//! produces. The loss closure is re-evaluated with one element perturbed
//! by +/- h at a time, so cost is O(elements * forward).

use crate::matrix::{Matrix, NumError};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, row, col) of the worst element.
    pub worst: (usize, usize, usize),
    pub checked: usize,
}

/// Compare `analytic` gradients against central differences of `loss`.
///
/// Relative error per element is `|a - n| / max(|a|, |n|, 1e-8)`; the
/// report carries the maximum over all elements of all parameters.
pub fn grad_check<F>(
    mut loss: F,
    params: &[Matrix],
    analytic: &[Matrix],
    h: f64,
) -> Result<GradCheckReport, NumError>
where
    F: FnMut(&[Matrix]) -> Result<f64, NumError>,
{
    if params.len() != analytic.len() {
        return Err(NumError::dim(
            "grad_check",
            format!("{} params vs {} gradients", params.len(), analytic.len()),
        ));
    }
    if h <= 0.0 {
        return Err(NumError::param("grad_check", format!("step {} must be positive", h)));
    }
    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: (0, 0, 0), checked: 0 };

    for p in 0..params.len() {
        if params[p].shape() != analytic[p].shape() {
            return Err(NumError::dim(
                "grad_check",
                format!(
                    "param {} is {:?} but gradient is {:?}",
                    p,
                    params[p].shape(),
                    analytic[p].shape()
                ),
            ));
        }
        for r in 0..params[p].rows() {
            for c in 0..params[p].cols() {
                let saved = work[p].get(r, c);
                work[p].set(r, c, saved + h);
                let up = loss(&work)?;
                work[p].set(r, c, saved - h);
                let down = loss(&work)?;
                work[p].set(r, c, saved);
                if !up.is_finite() || !down.is_finite() {
                    return Err(NumError::NonFinite { op: "grad_check" });
                }
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[p].get(r, c);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = (p, r, c);
                }
                report.checked += 1;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tape::Tape;

    const H: f64 = 1e-5;
    const GATE: f64 = 1e-6;

    fn rand_matrix(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        rng.fill_uniform(&mut m, lo, hi);
        m
    }

    /// Checks one tape-built scalar against central differences for every
    /// leaf parameter.
    fn check(build: impl Fn(&mut Tape, &[crate::tape::Var]) -> crate::tape::Var, params: &[Matrix]) {
        let mut tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = build(&mut tape, &vars);
        let grads = tape.backward(root);
        let analytic: Vec<Matrix> = vars
            .iter()
            .zip(params.iter())
            .map(|(v, p)| {
                grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()))
            })
            .collect();
        let report = grad_check(
            |ps| {
                let mut t = Tape::new();
                let vs: Vec<_> = ps.iter().map(|p| t.leaf(p.clone())).collect();
                let root = build(&mut t, &vs);
                Ok(t.scalar(root))
            },
            params,
            &analytic,
            H,
        )
        .unwrap();
        assert!(
            report.max_rel_err < GATE,
            "max rel err {:.3e} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn matmul_chain() {
        let mut rng = Rng::new(100, 0);
        let a = rand_matrix(&mut rng, 3, 4, -1.0, 1.0);
        let b = rand_matrix(&mut rng, 4, 5, -1.0, 1.0);
        check(
            |t, vs| {
                let y = t.matmul(vs[0], vs[1]);
                let sq = t.square(y);
                t.sum(sq)
            },
            &[a, b],
        );
    }

    #[test]
    fn matmul_nt_both_sides() {
        let mut rng = Rng::new(101, 0);
        let a = rand_matrix(&mut rng, 3, 6, -1.0, 1.0);
        let b = rand_matrix(&mut rng, 4, 6, -1.0, 1.0);
        check(
            |t, vs| {
                let y = t.matmul_nt(vs[0], vs[1]);
                let e = t.exp(y);
                t.sum(e)
            },
            &[a, b],
        );
    }

    #[test]
    fn broadcast_adds() {
        let mut rng = Rng::new(102, 0);
        let a = rand_matrix(&mut rng, 4, 3, -1.0, 1.0);
        let r = rand_matrix(&mut rng, 1, 3, -1.0, 1.0);
        let c = rand_matrix(&mut rng, 4, 1, -1.0, 1.0);
        check(
            |t, vs| {
                let x = t.add_row_vec(vs[0], vs[1]);
                let y = t.add_col_vec(x, vs[2]);
                let sq = t.square(y);
                t.sum(sq)
            },
            &[a, r, c],
        );
    }

    #[test]
    fn relu_away_from_kink() {
        let mut rng = Rng::new(103, 0);
        // Keep inputs off zero so the finite difference never straddles
        // the kink.
        let mut a = rand_matrix(&mut rng, 5, 5, -1.0, 1.0);
        for v in a.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1_f64.copysign(*v + 1e-12);
            }
        }
        check(
            |t, vs| {
                let y = t.relu(vs[0]);
                let sq = t.square(y);
                t.sum(sq)
            },
            &[a],
        );
    }

    #[test]
    fn softmax_and_log_softmax() {
        let mut rng = Rng::new(104, 0);
        let a = rand_matrix(&mut rng, 3, 6, -2.0, 2.0);
        let w = rand_matrix(&mut rng, 3, 6, -1.0, 1.0);
        let w2 = w.clone();
        check(
            |t, vs| {
                let s = t.row_softmax(vs[0]);
                let wv = t.constant(w.clone());
                let m = t.mul(s, wv);
                t.sum(m)
            },
            &[a.clone()],
        );
        check(
            |t, vs| {
                let s = t.row_log_softmax(vs[0]);
                let wv = t.constant(w2.clone());
                let m = t.mul(s, wv);
                t.sum(m)
            },
            &[a],
        );
    }

    #[test]
    fn l2_normalize() {
        let mut rng = Rng::new(105, 0);
        let a = rand_matrix(&mut rng, 4, 5, 0.5, 1.5);
        let w = rand_matrix(&mut rng, 4, 5, -1.0, 1.0);
        check(
            |t, vs| {
                let z = t.row_l2_normalize(vs[0]).unwrap();
                let wv = t.constant(w.clone());
                let m = t.mul(z, wv);
                t.sum(m)
            },
            &[a],
        );
    }

    #[test]
    fn reductions_and_concat() {
        let mut rng = Rng::new(106, 0);
        let a = rand_matrix(&mut rng, 3, 4, -1.0, 1.0);
        let b = rand_matrix(&mut rng, 2, 4, -1.0, 1.0);
        check(
            |t, vs| {
                let cat = t.concat_rows(vs[0], vs[1]);
                let sq = t.square(cat);
                let rs = t.row_sum(sq);
                let e = t.exp(rs);
                t.sum(e)
            },
            &[a, b],
        );
    }

    #[test]
    fn transpose_through_matmul() {
        let mut rng = Rng::new(109, 0);
        let a = rand_matrix(&mut rng, 3, 4, -1.0, 1.0);
        let b = rand_matrix(&mut rng, 3, 2, -1.0, 1.0);
        check(
            |t, vs| {
                let at = t.transpose(vs[0]);
                let y = t.matmul(at, vs[1]);
                let sq = t.square(y);
                t.sum(sq)
            },
            &[a, b],
        );
    }

    #[test]
    fn bce_with_logits_grad_matches() {
        let mut rng = Rng::new(107, 0);
        let logits = rand_matrix(&mut rng, 4, 3, -3.0, 3.0);
        let mut targets = Matrix::zeros(4, 3);
        for v in targets.data_mut() {
            *v = if rng.coin(0.4) { 1.0 } else { 0.0 };
        }
        check(
            |t, vs| {
                let tv = t.constant(targets.clone());
                t.bce_with_logits(vs[0], tv)
            },
            &[logits],
        );
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // y = sum(a .* a_used_twice) exercises gradient accumulation into
        // one node from two consumers.
        let mut rng = Rng::new(108, 0);
        let a = rand_matrix(&mut rng, 3, 3, -1.0, 1.0);
        check(
            |t, vs| {
                let e = t.exp(vs[0]);
                let s1 = t.sum(e);
                let sq = t.square(vs[0]);
                let s2 = t.sum(sq);
                t.add(s1, s2)
            },
            &[a],
        );
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let p = [Matrix::zeros(2, 2)];
        let g = [Matrix::zeros(3, 2)];
        assert!(grad_check(|_| Ok(0.0), &p, &g, H).is_err());
        let g_ok = [Matrix::zeros(2, 2)];
        assert!(grad_check(|_| Ok(0.0), &p, &g_ok, -1.0).is_err());
        assert!(grad_check(|_| Ok(f64::NAN), &p, &g_ok, H).is_err());
    }
}
