//! The two-tower encoder: a query MLP trained by backprop, a key MLP
//! tracked as an EMA of the query, and a linear head that maps the query
//! backbone to a label distribution.
//!
//! Layer stack (per tower): affine(f->h), relu, dropout, affine(h->h),
//! relu, dropout, affine(h->e). The embedding `z` is the row-normalized
//! backbone output; the distribution head consumes the un-normalized
//! backbone by default (configurable to the normalized embedding).

use crate::matrix::{Matrix, NumError};
use crate::ops;
use crate::optim::Param;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub num_labels: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), NumError> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("num_labels", self.num_labels),
        ] {
            if v == 0 {
                return Err(NumError::param("encoder_config", format!("{} must be positive", name)));
            }
        }
        Ok(())
    }
}

/// Which activation feeds the distribution head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistHeadInput {
    /// Un-normalized final affine output (the default).
    Backbone,
    /// Row-normalized embedding.
    Normalized,
}

#[derive(Debug, Clone)]
pub struct EncoderWeights {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
    pub w3: Param,
    pub b3: Param,
}

fn init_weight(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Matrix {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    rng.fill_uniform(&mut m, -bound, bound);
    m
}

impl EncoderWeights {
    /// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases.
    pub fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        let (f, h, e) = (cfg.input_dim, cfg.hidden_dim, cfg.embed_dim);
        EncoderWeights {
            w1: Param::new(init_weight(f, h, f, rng)),
            b1: Param::new(Matrix::zeros(1, h)),
            w2: Param::new(init_weight(h, h, h, rng)),
            b2: Param::new(Matrix::zeros(1, h)),
            w3: Param::new(init_weight(h, e, h, rng)),
            b3: Param::new(Matrix::zeros(1, e)),
        }
    }

    pub fn values(&self) -> [&Matrix; 6] {
        [
            &self.w1.value,
            &self.b1.value,
            &self.w2.value,
            &self.b2.value,
            &self.w3.value,
            &self.b3.value,
        ]
    }

    pub fn values_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.w1.value,
            &mut self.b1.value,
            &mut self.w2.value,
            &mut self.b2.value,
            &mut self.w3.value,
            &mut self.b3.value,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct ModelPair {
    pub config: EncoderConfig,
    pub dropout_rate: f64,
    pub head_input: DistHeadInput,
    pub query: EncoderWeights,
    /// EMA shadow of `query`; never receives gradients.
    pub key: EncoderWeights,
    pub dist_w: Param,
    pub dist_b: Param,
}

impl ModelPair {
    /// Fresh model. The key tower starts as an exact copy of the query
    /// tower. Draw order: query w1, w2, w3, then the head weight.
    pub fn init(
        config: EncoderConfig,
        dropout_rate: f64,
        head_input: DistHeadInput,
        rng: &mut Rng,
    ) -> Result<Self, NumError> {
        config.validate()?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(NumError::param(
                "model_init",
                format!("dropout_rate {} outside [0, 1)", dropout_rate),
            ));
        }
        let query = EncoderWeights::init(&config, rng);
        let key = query.clone();
        let dist_w = Param::new(init_weight(
            config.embed_dim,
            config.num_labels,
            config.embed_dim,
            rng,
        ));
        let dist_b = Param::new(Matrix::zeros(1, config.num_labels));
        Ok(ModelPair { config, dropout_rate, head_input, query, key, dist_w, dist_b })
    }

    /// The eight gradient-bearing parameters in optimizer order.
    pub fn trainable_params_mut(&mut self) -> [&mut Param; 8] {
        let [w1, b1, w2, b2, w3, b3] = self.query.params_mut();
        [w1, b1, w2, b2, w3, b3, &mut self.dist_w, &mut self.dist_b]
    }
}

/// Tape nodes for one query-tower forward pass.
pub struct QueryForward {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
    pub dist_w: Var,
    pub dist_b: Var,
    /// Final affine output, before normalization.
    pub backbone: Var,
    /// Row-normalized embedding.
    pub z: Var,
    pub logits: Var,
    /// Row-softmax of `logits`.
    pub d: Var,
}

fn tape_affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let mm = tape.matmul(x, w);
    tape.add_row_vec(mm, b)
}

/// Record the query forward on `tape`. With `train` set and a positive
/// dropout rate, two inverted-dropout masks are drawn from `rng`; in
/// eval mode (or rate zero) no masks are drawn and `rng` may be `None`.
pub fn query_forward(
    tape: &mut Tape,
    model: &ModelPair,
    x: &Matrix,
    train: bool,
    mut rng: Option<&mut Rng>,
) -> Result<QueryForward, NumError> {
    if x.cols() != model.config.input_dim {
        return Err(NumError::dim(
            "query_forward",
            format!("input has {} features, model expects {}", x.cols(), model.config.input_dim),
        ));
    }
    let use_dropout = train && model.dropout_rate > 0.0;
    if use_dropout && rng.is_none() {
        return Err(NumError::param(
            "query_forward",
            "dropout requires an rng in train mode",
        ));
    }

    let w1 = tape.leaf(model.query.w1.value.clone());
    let b1 = tape.leaf(model.query.b1.value.clone());
    let w2 = tape.leaf(model.query.w2.value.clone());
    let b2 = tape.leaf(model.query.b2.value.clone());
    let w3 = tape.leaf(model.query.w3.value.clone());
    let b3 = tape.leaf(model.query.b3.value.clone());
    let dist_w = tape.leaf(model.dist_w.value.clone());
    let dist_b = tape.leaf(model.dist_b.value.clone());

    let xv = tape.constant(x.clone());
    let mut drop = |tape: &mut Tape, a: Var, rows: usize, cols: usize| -> Result<Var, NumError> {
        if !use_dropout {
            return Ok(a);
        }
        let rng = rng.as_deref_mut().expect("checked above");
        let mask = ops::dropout_mask(rows, cols, model.dropout_rate, rng)?;
        let mv = tape.constant(mask);
        Ok(tape.mul(a, mv))
    };

    let h = model.config.hidden_dim;
    let b = x.rows();
    let pre1 = tape_affine(tape, xv, w1, b1);
    let act1 = tape.relu(pre1);
    let act1 = drop(tape, act1, b, h)?;
    let pre2 = tape_affine(tape, act1, w2, b2);
    let act2 = tape.relu(pre2);
    let act2 = drop(tape, act2, b, h)?;
    let backbone = tape_affine(tape, act2, w3, b3);
    let z = tape.row_l2_normalize(backbone)?;
    let head_in = match model.head_input {
        DistHeadInput::Backbone => backbone,
        DistHeadInput::Normalized => z,
    };
    let logits = tape_affine(tape, head_in, dist_w, dist_b);
    let d = tape.row_softmax(logits);

    Ok(QueryForward { w1, b1, w2, b2, w3, b3, dist_w, dist_b, backbone, z, logits, d })
}

/// Plain (non-recorded, dropout-free) forward through one tower.
pub struct Encoded {
    pub backbone: Matrix,
    pub z: Matrix,
}

pub fn plain_encode(weights: &EncoderWeights, x: &Matrix) -> Result<Encoded, NumError> {
    let a1 = ops::relu(&ops::affine(x, &weights.w1.value, &weights.b1.value)?);
    let a2 = ops::relu(&ops::affine(&a1, &weights.w2.value, &weights.b2.value)?);
    let backbone = ops::affine(&a2, &weights.w3.value, &weights.b3.value)?;
    let (z, _) = ops::row_l2_normalize(&backbone)?;
    Ok(Encoded { backbone, z })
}

/// Key-tower embedding. Structurally gradient-free: the computation
/// never touches a tape.
pub fn key_encode(model: &ModelPair, x: &Matrix) -> Result<Matrix, NumError> {
    Ok(plain_encode(&model.key, x)?.z)
}

pub struct EvalForward {
    pub z: Matrix,
    pub logits: Matrix,
    pub d: Matrix,
}

/// Dropout-free query forward used at evaluation time.
pub fn query_eval(model: &ModelPair, x: &Matrix) -> Result<EvalForward, NumError> {
    let enc = plain_encode(&model.query, x)?;
    let head_in = match model.head_input {
        DistHeadInput::Backbone => &enc.backbone,
        DistHeadInput::Normalized => &enc.z,
    };
    let logits = ops::affine(head_in, &model.dist_w.value, &model.dist_b.value)?;
    let d = ops::row_softmax(&logits);
    Ok(EvalForward { z: enc.z, logits, d })
}
