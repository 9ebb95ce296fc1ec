//! AdamW with decoupled weight decay, cosine-annealing warm restarts, and
//! the exponential moving average used to track the key encoder.

use crate::matrix::{Matrix, NumError};

/// A trainable value and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
}

impl Param {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Per-parameter AdamW state. `lr` is set by the caller before each step
/// so a schedule can drive it.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub lr: f64,
}

impl AdamWState {
    pub fn new(rows: usize, cols: usize, beta1: f64, beta2: f64, epsilon: f64, weight_decay: f64) -> Self {
        AdamWState {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
            beta1,
            beta2,
            epsilon,
            weight_decay,
            lr: 0.0,
        }
    }
}

/// One AdamW update:
///
/// m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2, t <- t+1,
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.
///
/// Decay is decoupled: it multiplies the raw parameter, never the moment
/// estimates, so a zero gradient still shrinks the weight.
pub fn adamw_step(param: &mut Param, state: &mut AdamWState) -> Result<(), NumError> {
    if param.value.shape() != state.m.shape() {
        return Err(NumError::dim(
            "adamw_step",
            format!("param {:?} vs state {:?}", param.value.shape(), state.m.shape()),
        ));
    }
    if param.value.shape() != param.grad.shape() {
        return Err(NumError::dim(
            "adamw_step",
            format!("param {:?} vs grad {:?}", param.value.shape(), param.grad.shape()),
        ));
    }
    state.t += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let n = param.value.data().len();
    for i in 0..n {
        let g = param.grad.data()[i];
        let m = b1 * state.m.data()[i] + (1.0 - b1) * g;
        let v = b2 * state.v.data()[i] + (1.0 - b2) * g * g;
        state.m.data_mut()[i] = m;
        state.v.data_mut()[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        let theta = param.value.data()[i];
        param.value.data_mut()[i] =
            theta - state.lr * m_hat / (v_hat.sqrt() + state.epsilon) - state.lr * state.weight_decay * theta;
    }
    Ok(())
}

/// Cosine-annealing schedule with warm restarts. Cycle k has length
/// `t0 * t_mult^k` epochs; within a cycle the rate decays from `eta_max`
/// to `eta_min` along a half cosine, and each cycle restarts at
/// `eta_max`.
#[derive(Debug, Clone)]
pub struct SgdrSchedule {
    pub eta_max: f64,
    pub eta_min: f64,
    pub t0: u32,
    pub t_mult: u32,
    /// (cycle index, epochs into the cycle) of the last query.
    pub cursor: (u32, u32),
}

impl SgdrSchedule {
    pub fn new(eta_max: f64, eta_min: f64, t0: u32, t_mult: u32) -> Result<Self, NumError> {
        if t0 == 0 || t_mult == 0 {
            return Err(NumError::param(
                "sgdr",
                format!("t0 {} and t_mult {} must be positive", t0, t_mult),
            ));
        }
        if eta_min > eta_max {
            return Err(NumError::param(
                "sgdr",
                format!("eta_min {} exceeds eta_max {}", eta_min, eta_max),
            ));
        }
        Ok(SgdrSchedule { eta_max, eta_min, t0, t_mult, cursor: (0, 0) })
    }

    /// Learning rate for a zero-based `epoch`; updates the cursor.
    pub fn lr_at(&mut self, epoch: u32) -> f64 {
        let mut rem = epoch as u64;
        let mut len = self.t0 as u64;
        let mut cycle = 0u32;
        while rem >= len {
            rem -= len;
            len = len.saturating_mul(self.t_mult as u64);
            cycle += 1;
        }
        self.cursor = (cycle, rem as u32);
        let frac = rem as f64 / len as f64;
        self.eta_min + 0.5 * (self.eta_max - self.eta_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// key <- m * key + (1 - m) * query, elementwise over paired weight
/// lists. Momentum must lie in [0, 1]; both iterators must yield the
/// same number of identically shaped matrices.
pub fn ema_update<'k, 'q>(
    key: impl IntoIterator<Item = &'k mut Matrix>,
    query: impl IntoIterator<Item = &'q Matrix>,
    momentum: f64,
) -> Result<(), NumError> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(NumError::param(
            "ema_update",
            format!("momentum {} outside [0, 1]", momentum),
        ));
    }
    let mut key_iter = key.into_iter();
    let mut query_iter = query.into_iter();
    loop {
        match (key_iter.next(), query_iter.next()) {
            (Some(k), Some(q)) => {
                if k.shape() != q.shape() {
                    return Err(NumError::dim(
                        "ema_update",
                        format!("{:?} vs {:?}", k.shape(), q.shape()),
                    ));
                }
                for (kv, &qv) in k.data_mut().iter_mut().zip(q.data().iter()) {
                    *kv = momentum * *kv + (1.0 - momentum) * qv;
                }
            }
            (None, None) => return Ok(()),
            _ => {
                return Err(NumError::dim("ema_update", "weight lists differ in length".to_string()));
            }
        }
    }
}
