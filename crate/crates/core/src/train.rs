//! The two training phases: contrastive pretraining with the momentum
//! key tower and FIFO queues, then binary cross-entropy fine-tuning of
//! the query tower and head.
//!
//! Both loops are strictly single-threaded and deterministic: every
//! random draw comes from a fixed stream of the run seed, so a repeated
//! run reproduces weights bit for bit.

use crate::dataio::{make_batches, two_views, MulanDataset};
use crate::matrix::{Matrix, NumError};
use crate::memory::{MemoryError, QueueSet};
use crate::model::{key_encode, query_eval, query_forward, ModelPair};
use crate::objectives::{build_total_loss, Hyper, LossComponents, LossMode, LossOptions};
use crate::ops;
use crate::optim::{adamw_step, ema_update, AdamWState, SgdrSchedule};
use crate::rng::Rng;
use crate::tape::Tape;

/// Fixed RNG stream ids per seed. Streams keep the phases independent:
/// changing pretrain epochs never shifts the finetune draws.
pub mod seeds {
    pub const MODEL_INIT: u64 = 0;
    pub const PRETRAIN_SHUFFLE: u64 = 1;
    pub const PRETRAIN_MASKS: u64 = 2;
    pub const PRETRAIN_DROPOUT: u64 = 3;
    pub const FINETUNE_SHUFFLE: u64 = 4;
    pub const FINETUNE_MASKS: u64 = 5;
    pub const FINETUNE_DROPOUT: u64 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{0}")]
    Num(#[from] NumError),
    #[error("{0}")]
    Memory(#[from] MemoryError),
    #[error("invalid training setup: {0}")]
    Setup(String),
    #[error(
        "non-finite loss in {phase} at epoch {epoch}, iteration {iteration}: \
         total {total:?}, contrastive {contrastive:?}, g {g:?}, h {h:?}, w {w_penalty:?}",
        total = components.total,
        contrastive = components.contrastive,
        g = components.g,
        h = components.h,
        w_penalty = components.w_penalty
    )]
    NonFinite {
        phase: &'static str,
        epoch: u32,
        iteration: u64,
        components: LossComponents,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct PretrainSettings {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// EMA momentum of the key tower.
    pub momentum: f64,
    pub hyper: Hyper,
    pub queue_size: usize,
    /// Feature masking rate for the two augmented views.
    pub mask_rate: f64,
    pub t0: u32,
    pub t_mult: u32,
    pub eta_min: f64,
    pub loss_mode: LossMode,
    pub loss_options: LossOptions,
    /// Divide the batch objective by the batch size instead of using the
    /// plain sum.
    pub batch_mean: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct FinetuneSettings {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub mask_rate: f64,
    pub t0: u32,
    pub t_mult: u32,
    pub eta_min: f64,
}

/// Mean loss components of one pretraining epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochLoss {
    pub epoch: u32,
    pub components: LossComponents,
}

/// Mean BCE of one fine-tuning epoch.
#[derive(Debug, Clone, Copy)]
pub struct FinetuneEpochLoss {
    pub epoch: u32,
    pub bce: f64,
}

/// Post-step snapshot handed to an observer: the updated model, the
/// queue after this step's enqueue, and the rows that were enqueued.
pub struct StepInfo<'a> {
    pub epoch: u32,
    /// Global step counter, starting at 0.
    pub iteration: u64,
    pub lr: f64,
    pub components: LossComponents,
    pub model: &'a ModelPair,
    pub queue: &'a QueueSet,
    pub enqueued_z: &'a Matrix,
    pub enqueued_y: &'a Matrix,
    pub enqueued_d: &'a Matrix,
}

fn check_model_matches(model: &ModelPair, ds: &MulanDataset) -> Result<(), TrainError> {
    if ds.num_features() != model.config.input_dim {
        return Err(TrainError::Setup(format!(
            "dataset has {} features, model expects {}",
            ds.num_features(),
            model.config.input_dim
        )));
    }
    if ds.num_labels() != model.config.num_labels {
        return Err(TrainError::Setup(format!(
            "dataset has {} labels, model expects {}",
            ds.num_labels(),
            model.config.num_labels
        )));
    }
    Ok(())
}

fn adam_states(model: &mut ModelPair, weight_decay: f64) -> [AdamWState; 8] {
    model.trainable_params_mut().map(|p| {
        AdamWState::new(p.value.rows(), p.value.cols(), 0.9, 0.999, 1e-8, weight_decay)
    })
}

/// Contrastive pretraining. Per iteration: two masked views, a recorded
/// query forward, a gradient-free key forward, the batch objective
/// against the current queue snapshot, one AdamW step on the query
/// tower and head, one EMA update of the key tower, and one enqueue of
/// (key embedding, labels, detached distribution).
pub fn pretrain(
    model: &mut ModelPair,
    ds: &MulanDataset,
    settings: &PretrainSettings,
    seed: u64,
    mut hook: Option<&mut dyn FnMut(&StepInfo)>,
) -> Result<Vec<EpochLoss>, TrainError> {
    check_model_matches(model, ds)?;
    if settings.batch_size == 0 {
        return Err(TrainError::Setup("batch_size must be positive".to_string()));
    }
    if settings.queue_size < settings.batch_size {
        return Err(TrainError::Setup(format!(
            "queue_size {} smaller than batch_size {}",
            settings.queue_size, settings.batch_size
        )));
    }
    if !(0.0..=1.0).contains(&settings.momentum) {
        return Err(TrainError::Setup(format!(
            "momentum {} outside [0, 1]",
            settings.momentum
        )));
    }
    settings.hyper.validate()?;

    let mut shuffle_rng = Rng::new(seed, seeds::PRETRAIN_SHUFFLE);
    let mut mask_rng = Rng::new(seed, seeds::PRETRAIN_MASKS);
    let mut dropout_rng = Rng::new(seed, seeds::PRETRAIN_DROPOUT);
    let mut queue = QueueSet::new(
        settings.queue_size,
        model.config.embed_dim,
        model.config.num_labels,
    )?;
    let mut schedule = SgdrSchedule::new(settings.lr, settings.eta_min, settings.t0, settings.t_mult)?;
    let mut adam = adam_states(model, settings.weight_decay);

    let mut log = Vec::with_capacity(settings.epochs as usize);
    let mut iteration = 0u64;
    for epoch in 0..settings.epochs {
        let lr = schedule.lr_at(epoch);
        for st in adam.iter_mut() {
            st.lr = lr;
        }
        let batches = make_batches(ds, settings.batch_size, true, &mut shuffle_rng)?;
        let mut sums = LossComponents::default();
        for batch in &batches {
            let (view_q, view_k) = two_views(&batch.x, settings.mask_rate, &mut mask_rng)?;
            let mut tape = Tape::new();
            let qf = query_forward(&mut tape, model, &view_q, true, Some(&mut dropout_rng))?;
            let z_k = key_encode(model, &view_k)?;
            let snap = queue.snapshot();
            let vars = build_total_loss(
                &mut tape,
                qf.z,
                qf.d,
                qf.dist_w,
                &z_k,
                &batch.y,
                &snap,
                &settings.hyper,
                settings.loss_mode,
                &settings.loss_options,
            )?;
            let scale = if settings.batch_mean { 1.0 / batch.x.rows() as f64 } else { 1.0 };
            let root =
                if settings.batch_mean { tape.scale(vars.total, scale) } else { vars.total };
            let raw = vars.components(&tape);
            let components = LossComponents {
                total: raw.total * scale,
                contrastive: raw.contrastive * scale,
                g: raw.g * scale,
                h: raw.h * scale,
                w_penalty: raw.w_penalty * scale,
            };
            if !components.is_finite() {
                return Err(TrainError::NonFinite {
                    phase: "pretrain",
                    epoch,
                    iteration,
                    components,
                });
            }
            let grads = tape.backward(root);
            let vars_in_order =
                [qf.w1, qf.b1, qf.w2, qf.b2, qf.w3, qf.b3, qf.dist_w, qf.dist_b];
            let d_live = tape.value(qf.d).clone();
            for ((param, var), state) in model
                .trainable_params_mut()
                .into_iter()
                .zip(vars_in_order)
                .zip(adam.iter_mut())
            {
                match grads.get(var) {
                    Some(g) => param.grad = g.clone(),
                    None => param.zero_grad(),
                }
                adamw_step(param, state)?;
            }
            {
                let ModelPair { ref query, ref mut key, .. } = *model;
                ema_update(key.values_mut(), query.values(), settings.momentum)?;
            }
            queue.enqueue_batch(&z_k, &batch.y, &d_live)?;
            if let Some(hook) = hook.as_deref_mut() {
                hook(&StepInfo {
                    epoch,
                    iteration,
                    lr,
                    components,
                    model,
                    queue: &queue,
                    enqueued_z: &z_k,
                    enqueued_y: &batch.y,
                    enqueued_d: &d_live,
                });
            }
            sums.total += components.total;
            sums.contrastive += components.contrastive;
            sums.g += components.g;
            sums.h += components.h;
            sums.w_penalty += components.w_penalty;
            iteration += 1;
        }
        let n = batches.len() as f64;
        log.push(EpochLoss {
            epoch,
            components: LossComponents {
                total: sums.total / n,
                contrastive: sums.contrastive / n,
                g: sums.g / n,
                h: sums.h / n,
                w_penalty: sums.w_penalty / n,
            },
        });
    }
    Ok(log)
}

/// BCE fine-tuning of the query tower and head on masked inputs. The
/// key tower is untouched; the optimizer and schedule start fresh.
pub fn finetune(
    model: &mut ModelPair,
    ds: &MulanDataset,
    settings: &FinetuneSettings,
    seed: u64,
) -> Result<Vec<FinetuneEpochLoss>, TrainError> {
    check_model_matches(model, ds)?;
    if settings.batch_size == 0 {
        return Err(TrainError::Setup("batch_size must be positive".to_string()));
    }
    let mut shuffle_rng = Rng::new(seed, seeds::FINETUNE_SHUFFLE);
    let mut mask_rng = Rng::new(seed, seeds::FINETUNE_MASKS);
    let mut dropout_rng = Rng::new(seed, seeds::FINETUNE_DROPOUT);
    let mut schedule = SgdrSchedule::new(settings.lr, settings.eta_min, settings.t0, settings.t_mult)?;
    let mut adam = adam_states(model, settings.weight_decay);

    let mut log = Vec::with_capacity(settings.epochs as usize);
    let mut iteration = 0u64;
    for epoch in 0..settings.epochs {
        let lr = schedule.lr_at(epoch);
        for st in adam.iter_mut() {
            st.lr = lr;
        }
        let batches = make_batches(ds, settings.batch_size, true, &mut shuffle_rng)?;
        let mut sum = 0.0;
        for batch in &batches {
            let (masked, _) = ops::bernoulli_mask(&batch.x, settings.mask_rate, &mut mask_rng)?;
            let mut tape = Tape::new();
            let qf = query_forward(&mut tape, model, &masked, true, Some(&mut dropout_rng))?;
            let targets = tape.constant(batch.y.clone());
            let loss = tape.bce_with_logits(qf.logits, targets);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    phase: "finetune",
                    epoch,
                    iteration,
                    components: LossComponents { total: value, ..Default::default() },
                });
            }
            let grads = tape.backward(loss);
            let vars_in_order =
                [qf.w1, qf.b1, qf.w2, qf.b2, qf.w3, qf.b3, qf.dist_w, qf.dist_b];
            for ((param, var), state) in model
                .trainable_params_mut()
                .into_iter()
                .zip(vars_in_order)
                .zip(adam.iter_mut())
            {
                match grads.get(var) {
                    Some(g) => param.grad = g.clone(),
                    None => param.zero_grad(),
                }
                adamw_step(param, state)?;
            }
            sum += value;
            iteration += 1;
        }
        log.push(FinetuneEpochLoss { epoch, bce: sum / batches.len() as f64 });
    }
    Ok(log)
}

/// Score activation applied to the head logits at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreActivation {
    Sigmoid,
    Softmax,
}

/// Evaluation-mode scores: a dropout-free, mask-free forward through the
/// query tower, head logits mapped through the chosen activation.
pub fn predict_scores(
    model: &ModelPair,
    x: &Matrix,
    activation: ScoreActivation,
) -> Result<Matrix, NumError> {
    let out = query_eval(model, x)?;
    Ok(match activation {
        ScoreActivation::Sigmoid => ops::sigmoid(&out.logits),
        ScoreActivation::Softmax => ops::row_softmax(&out.logits),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DistHeadInput, EncoderConfig};

    fn toy_dataset(n: usize, f: usize, c: usize, seed: u64) -> MulanDataset {
        let mut rng = Rng::new(seed, 99);
        // Labels first, then label-dependent feature means so the task
        // is learnable.
        let mut labels = Matrix::zeros(n, c);
        for i in 0..n {
            let forced = rng.below(c);
            labels.set(i, forced, 1.0);
            for j in 0..c {
                if j != forced && rng.coin(0.25) {
                    labels.set(i, j, 1.0);
                }
            }
        }
        let mut features = Matrix::zeros(n, f);
        for i in 0..n {
            for k in 0..f {
                let mut v = 0.1 * rng.normal();
                for j in 0..c {
                    if labels.get(i, j) == 1.0 && k % c == j {
                        v += 1.0;
                    }
                }
                features.set(i, k, v);
            }
        }
        MulanDataset {
            features,
            labels,
            feature_names: (0..f).map(|k| format!("f{k}")).collect(),
            label_names: (0..c).map(|j| format!("l{j}")).collect(),
        }
    }

    fn toy_model(ds: &MulanDataset, seed: u64) -> ModelPair {
        let cfg = EncoderConfig {
            input_dim: ds.num_features(),
            hidden_dim: 16,
            embed_dim: 8,
            num_labels: ds.num_labels(),
        };
        let mut rng = Rng::new(seed, seeds::MODEL_INIT);
        ModelPair::init(cfg, 0.1, DistHeadInput::Backbone, &mut rng).unwrap()
    }

    fn settings(mode: LossMode) -> PretrainSettings {
        PretrainSettings {
            epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-4,
            momentum: 0.99,
            hyper: Hyper { tau: 0.1, sigma: 0.3, alpha: 0.1, beta: 0.01 },
            queue_size: 16,
            mask_rate: 0.3,
            t0: 5,
            t_mult: 2,
            eta_min: 1e-5,
            loss_mode: mode,
            loss_options: LossOptions::default(),
            batch_mean: false,
        }
    }

    fn finetune_settings() -> FinetuneSettings {
        FinetuneSettings {
            epochs: 3,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-5,
            mask_rate: 0.2,
            t0: 5,
            t_mult: 2,
            eta_min: 1e-5,
        }
    }

    #[test]
    fn pretrain_runs_and_logs_every_epoch() {
        let ds = toy_dataset(24, 10, 4, 1);
        let mut model = toy_model(&ds, 1);
        let log = pretrain(&mut model, &ds, &settings(LossMode::Cld), 7, None).unwrap();
        assert_eq!(log.len(), 2);
        for e in &log {
            assert!(e.components.is_finite());
            assert!(e.components.total != 0.0);
        }
    }

    #[test]
    fn pretrain_is_deterministic_per_seed() {
        let ds = toy_dataset(20, 8, 3, 2);
        let mut a = toy_model(&ds, 3);
        let mut b = toy_model(&ds, 3);
        let la = pretrain(&mut a, &ds, &settings(LossMode::Rld), 11, None).unwrap();
        let lb = pretrain(&mut b, &ds, &settings(LossMode::Rld), 11, None).unwrap();
        assert_eq!(a.query.w1.value, b.query.w1.value);
        assert_eq!(a.key.w3.value, b.key.w3.value);
        assert_eq!(a.dist_w.value, b.dist_w.value);
        assert_eq!(la[1].components.total, lb[1].components.total);

        let mut c = toy_model(&ds, 3);
        pretrain(&mut c, &ds, &settings(LossMode::Rld), 12, None).unwrap();
        assert_ne!(a.query.w1.value, c.query.w1.value);
    }

    #[test]
    fn hook_sees_consistent_state_and_ema_replays() {
        let ds = toy_dataset(16, 6, 3, 4);
        let mut model = toy_model(&ds, 5);
        let momentum = settings(LossMode::Cld).momentum;
        let mut prev_key: Vec<Matrix> =
            model.key.values().iter().map(|m| (*m).clone()).collect();
        let mut steps = 0u64;
        let mut hook = |info: &StepInfo| {
            // Key tower equals the EMA recurrence replayed offline.
            for ((k_new, k_old), q_new) in info
                .model
                .key
                .values()
                .iter()
                .zip(prev_key.iter())
                .zip(info.model.query.values().iter())
            {
                for (idx, &kv) in k_new.data().iter().enumerate() {
                    let expect =
                        momentum * k_old.data()[idx] + (1.0 - momentum) * q_new.data()[idx];
                    assert!((kv - expect).abs() < 1e-12);
                }
            }
            prev_key = info.model.key.values().iter().map(|m| (*m).clone()).collect();
            // Enqueued distribution rows are simplex rows.
            for r in 0..info.enqueued_d.rows() {
                let sum: f64 = info.enqueued_d.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!(info.enqueued_d.row(r).iter().all(|&v| v >= 0.0));
            }
            assert!(info.queue.len() <= info.queue.capacity());
            assert_eq!(info.iteration, steps);
            steps += 1;
        };
        pretrain(&mut model, &ds, &settings(LossMode::Cld), 13, Some(&mut hook)).unwrap();
        assert_eq!(steps, 4); // 2 epochs x ceil(16/8)
    }

    #[test]
    fn mulsupcon_mode_has_no_recovery_terms() {
        let ds = toy_dataset(16, 6, 3, 6);
        let mut model = toy_model(&ds, 6);
        let log = pretrain(&mut model, &ds, &settings(LossMode::MulSupCon), 5, None).unwrap();
        for e in &log {
            assert_eq!(e.components.g, 0.0);
            assert_eq!(e.components.h, 0.0);
            assert_eq!(e.components.w_penalty, 0.0);
            assert_eq!(e.components.total, e.components.contrastive);
        }
    }

    #[test]
    fn zero_epochs_leave_the_model_alone() {
        let ds = toy_dataset(12, 6, 3, 7);
        let mut model = toy_model(&ds, 7);
        let before = model.query.w1.value.clone();
        let mut s = settings(LossMode::Cld);
        s.epochs = 0;
        let log = pretrain(&mut model, &ds, &s, 1, None).unwrap();
        assert!(log.is_empty());
        assert_eq!(model.query.w1.value, before);

        let mut f = finetune_settings();
        f.epochs = 0;
        let log = finetune(&mut model, &ds, &f, 1).unwrap();
        assert!(log.is_empty());
        assert_eq!(model.query.w1.value, before);
    }

    #[test]
    fn rejects_mismatched_setup() {
        let ds = toy_dataset(12, 6, 3, 8);
        let mut model = toy_model(&ds, 8);
        let mut s = settings(LossMode::Cld);
        s.queue_size = 4; // smaller than batch_size 8
        assert!(matches!(
            pretrain(&mut model, &ds, &s, 1, None),
            Err(TrainError::Setup(_))
        ));
        let other = toy_dataset(12, 9, 3, 8);
        assert!(matches!(
            pretrain(&mut model, &other, &settings(LossMode::Cld), 1, None),
            Err(TrainError::Setup(_))
        ));
    }

    #[test]
    fn exploding_lr_reports_non_finite() {
        let ds = toy_dataset(16, 6, 3, 9);
        let mut model = toy_model(&ds, 9);
        let mut s = settings(LossMode::Cld);
        s.lr = 1e155;
        s.eta_min = 1e150;
        s.epochs = 3;
        let err = pretrain(&mut model, &ds, &s, 1, None);
        assert!(err.is_err());
    }

    #[test]
    fn finetune_learns_the_toy_task() {
        let ds = toy_dataset(48, 12, 3, 10);
        let mut model = toy_model(&ds, 10);
        let mut f = finetune_settings();
        // Noise-free variant: no masking, one scheduler cycle.
        f.epochs = 12;
        f.mask_rate = 0.0;
        f.lr = 3e-3;
        f.t0 = 12;
        let log = finetune(&mut model, &ds, &f, 3).unwrap();
        assert_eq!(log.len(), 12);
        // Epoch means trend downward, allowing two violations.
        let violations = log.windows(2).filter(|w| w[1].bce > w[0].bce).count();
        assert!(violations <= 2, "bce trajectory: {:?}", log);
        assert!(log.last().unwrap().bce < log[0].bce);
    }

    #[test]
    fn finetune_is_deterministic_and_leaves_key_untouched() {
        let ds = toy_dataset(20, 8, 3, 11);
        let mut a = toy_model(&ds, 12);
        let key_before = a.key.w1.value.clone();
        let la = finetune(&mut a, &ds, &finetune_settings(), 5).unwrap();
        let mut b = toy_model(&ds, 12);
        let lb = finetune(&mut b, &ds, &finetune_settings(), 5).unwrap();
        assert_eq!(a.query.w2.value, b.query.w2.value);
        assert_eq!(la.last().unwrap().bce, lb.last().unwrap().bce);
        assert_eq!(a.key.w1.value, key_before);
        assert_ne!(a.query.w1.value, b.key.w1.value);
    }

    #[test]
    fn predict_scores_matches_activation_choice() {
        let ds = toy_dataset(6, 5, 3, 13);
        let model = toy_model(&ds, 13);
        let sig = predict_scores(&model, &ds.features, ScoreActivation::Sigmoid).unwrap();
        let soft = predict_scores(&model, &ds.features, ScoreActivation::Softmax).unwrap();
        assert_eq!(sig.shape(), (6, 3));
        assert!(sig.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for r in 0..6 {
            let s: f64 = soft.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let logits = query_eval(&model, &ds.features).unwrap().logits;
        let expect = ops::sigmoid(&logits);
        assert_eq!(sig, expect);
    }
}
