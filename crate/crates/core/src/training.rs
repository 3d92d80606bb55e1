//! Semi-supervised objective and training loop.
//!
//! Labelled examples contribute a maximum-likelihood term and an adversarial
//! term (the same loss at inputs pushed along the normalized loss gradient).
//! Every example, labelled or not, contributes a virtual-adversarial term: the
//! KL divergence between the prediction at the input and at the worst-case
//! nearby input found by power iteration.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Mode;
use crate::math::{l2_norm, seeded_rng, softmax};
use crate::model::{EndemicModel, ModelInput, PerturbScope, Perturbable, ScopedModel};
use crate::params::{OptimizerKind, Optimizer, ParamSet};

pub const PROB_FLOOR: f64 = 1e-12;
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_ml: f64,
    pub lambda_at: f64,
    pub lambda_vat: f64,
    pub eps_at: f64,
    pub eps_vat: f64,
    pub xi: f64,
    pub power_iters: usize,
    pub scope: PerturbScope,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_ml: 1.0,
            lambda_at: 1.0,
            lambda_vat: 1.0,
            eps_at: 2.0,
            eps_vat: 2.0,
            xi: 1e-6,
            power_iters: 1,
            scope: PerturbScope::Embeddings,
        }
    }
}

impl LossConfig {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [("lambda_ml", self.lambda_ml), ("lambda_at", self.lambda_at), ("lambda_vat", self.lambda_vat)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number")));
            }
        }
        for (name, v) in [("eps_at", self.eps_at), ("eps_vat", self.eps_vat), ("xi", self.xi)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.power_iters == 0 {
            return Err(Error::Config("power_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// `−log p[target]` with the probability floored at [`PROB_FLOOR`]. The flag
/// reports whether the floor was hit.
pub fn ml_loss(probs: [f64; 2], target: usize) -> (f64, bool) {
    let p = probs[target];
    if p < PROB_FLOOR {
        (-PROB_FLOOR.ln(), true)
    } else {
        (-p.ln(), false)
    }
}

/// `KL(p ‖ q)` over two classes, with `q` floored.
pub fn kl_divergence(p: [f64; 2], q: [f64; 2]) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum::<f64>()
        .max(0.0)
}

/// `ε · g / ‖g‖₂`, or zeros for a zero gradient.
pub fn at_perturbation(grad: &[f64], eps: f64) -> Vec<f64> {
    let norm = l2_norm(grad);
    if norm == 0.0 || !norm.is_finite() {
        return vec![0.0; grad.len()];
    }
    grad.iter().map(|g| eps * g / norm).collect()
}

fn probs_of(logits: [f64; 2]) -> [f64; 2] {
    let p = softmax(&logits);
    [p[0], p[1]]
}

/// Virtual adversarial direction scaled to `cfg.eps_vat`, by power iteration
/// with finite-difference scale `cfg.xi`. Zero when the model is locally flat.
pub fn vat_direction<M: Perturbable, R: Rng>(model: &M, input: &M::Input, cfg: &LossConfig, rng: &mut R) -> Result<Vec<f64>> {
    let n = model.perturb_len(input);
    let p = probs_of(model.logits_at(input, &vec![0.0; n])?);
    let mut d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = l2_norm(&d);
    d.iter_mut().for_each(|x| *x /= norm);
    for _ in 0..cfg.power_iters {
        let r: Vec<f64> = d.iter().map(|x| cfg.xi * x).collect();
        let q = probs_of(model.logits_at(input, &r)?);
        // d KL(p‖q) / d logits_q = q − p.
        let g = model.input_grad_at(input, &r, [q[0] - p[0], q[1] - p[1]])?;
        let gn = l2_norm(&g);
        if gn == 0.0 {
            return Ok(vec![0.0; n]);
        }
        if !gn.is_finite() {
            return Err(Error::numeric("vat power iteration", format!("gradient norm {gn}")));
        }
        d = g.into_iter().map(|x| x / gn).collect();
    }
    Ok(d.into_iter().map(|x| cfg.eps_vat * x).collect())
}

/// `KL(p(x) ‖ p(x + r_adv))`.
pub fn vat_loss<M: Perturbable, R: Rng>(model: &M, input: &M::Input, cfg: &LossConfig, rng: &mut R) -> Result<f64> {
    let n = model.perturb_len(input);
    let p = probs_of(model.logits_at(input, &vec![0.0; n])?);
    let r = vat_direction(model, input, cfg, rng)?;
    let q = probs_of(model.logits_at(input, &r)?);
    let kl = kl_divergence(p, q);
    if !kl.is_finite() {
        return Err(Error::numeric("vat loss", format!("KL = {kl}")));
    }
    Ok(kl)
}

/// A prepared training example; `label` is the class index when labelled.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub input: ModelInput,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ml: f64,
    pub at: f64,
    pub vat: f64,
    pub total: f64,
    pub n_labelled: usize,
    pub n_examples: usize,
    pub floor_hits: usize,
}

/// Objective on one batch and its parameter gradient.
///
/// `example_seeds[i]` seeds the dropout masks and VAT start direction of
/// `batch[i]`. ML and AT are averaged over the labelled examples, VAT over all.
pub fn batch_objective(
    model: &EndemicModel,
    batch: &[&Example],
    example_seeds: &[u64],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, EndemicModel)> {
    let mut grads = model.zeros_like();
    let n_lab = batch.iter().filter(|e| e.label.is_some()).count();
    let n_all = batch.len();
    let mut out = LossBreakdown {
        n_labelled: n_lab,
        n_examples: n_all,
        ..LossBreakdown::default()
    };
    let need_at = cfg.lambda_at > 0.0;
    let need_vat = cfg.lambda_vat > 0.0;

    for (ex, &seed) in batch.iter().zip(example_seeds) {
        let mut rng = seeded_rng(&[seed]);
        if let Some(y) = ex.label {
            let w = 1.0 / n_lab as f64;
            let trace = model.forward(&ex.input, None, cfg.scope, Mode::Train, &mut rng)?;
            let p = trace.probs();
            let (loss, clamped) = ml_loss(p, y);
            out.ml += w * loss;
            out.floor_hits += usize::from(clamped);
            let mut d = [p[0], p[1]];
            d[y] -= 1.0;

            let input_grad = if cfg.lambda_ml > 0.0 {
                let s = cfg.lambda_ml * w;
                model.backward(&trace, [s * d[0], s * d[1]], &mut grads)
            } else if need_at {
                let mut scratch = model.zeros_like();
                model.backward(&trace, d, &mut scratch)
            } else {
                Vec::new()
            };

            if need_at {
                let r = at_perturbation(&input_grad, cfg.eps_at);
                let trace = model.forward(&ex.input, Some(&r), cfg.scope, Mode::Train, &mut rng)?;
                let q = trace.probs();
                let (loss, clamped) = ml_loss(q, y);
                out.at += w * loss;
                out.floor_hits += usize::from(clamped);
                let mut d = [q[0], q[1]];
                d[y] -= 1.0;
                let s = cfg.lambda_at * w;
                model.backward(&trace, [s * d[0], s * d[1]], &mut grads);
            }
        }

        if need_vat {
            let w = 1.0 / n_all as f64;
            let scoped = ScopedModel {
                model,
                scope: cfg.scope,
            };
            let p = model.predict(&ex.input)?;
            let r = vat_direction(&scoped, &ex.input, cfg, &mut rng)?;
            let trace = model.forward(&ex.input, Some(&r), cfg.scope, Mode::Eval, &mut rng)?;
            let q = trace.probs();
            let kl = kl_divergence(p, q);
            if !kl.is_finite() {
                return Err(Error::numeric("vat loss", format!("example {}: KL = {kl}", ex.id)));
            }
            out.vat += w * kl;
            let s = cfg.lambda_vat * w;
            model.backward(&trace, [s * (q[0] - p[0]), s * (q[1] - p[1])], &mut grads);
        }
    }
    out.total = cfg.lambda_ml * out.ml + cfg.lambda_at * out.at + cfg.lambda_vat * out.vat;
    Ok((out, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub loss: LossConfig,
    /// Stop once eval-mode train accuracy reaches this value.
    pub stop_at_train_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 42,
            loss: LossConfig::default(),
            stop_at_train_acc: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ml: f64,
    pub at: f64,
    pub vat: f64,
    pub total: f64,
    pub train_acc: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,L_ML,L_AT,L_VAT,total,train_acc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.6}",
            self.epoch, self.ml, self.at, self.vat, self.total, self.train_acc
        )
    }
}

/// Eval-mode accuracy over the labelled examples.
pub fn accuracy(model: &EndemicModel, examples: &[Example]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in examples {
        if let Some(y) = ex.label {
            let p = model.predict(&ex.input)?;
            total += 1;
            if (p[1] > p[0]) == (y == 1) {
                correct += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Trains from `model`, calling `on_epoch` after every completed epoch (the
/// hook writes checkpoints). Divergence aborts with an error; the last good
/// state is whatever `on_epoch` persisted.
pub fn train(
    model: &EndemicModel,
    examples: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EndemicModel, &EpochLog) -> Result<()>,
) -> Result<(EndemicModel, Vec<EpochLog>)> {
    cfg.loss.check()?;
    if !examples.iter().any(|e| e.label.is_some()) {
        return Err(Error::Precondition("training needs at least one labelled example".into()));
    }
    let mut model = model.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, model.num_params());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = seeded_rng(&[cfg.seed, epoch as u64, 0x5eed]);
        order.shuffle(&mut shuffle_rng);
        let (mut ml, mut at, mut vat) = (0.0, 0.0, 0.0);
        let (mut n_lab, mut n_all) = (0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let seeds: Vec<u64> = chunk
                .iter()
                .map(|&i| crate::math::mix_seed(&[cfg.seed, epoch as u64, i as u64]))
                .collect();
            let (parts, grads) = batch_objective(&model, &batch, &seeds, &cfg.loss)?;
            if !parts.total.is_finite() || parts.total > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    epoch,
                    loss: parts.total,
                });
            }
            if !grads.all_finite() {
                return Err(Error::numeric("training gradients", format!("epoch {epoch}")));
            }
            opt.step(&mut model, &grads);
            ml += parts.ml * parts.n_labelled as f64;
            at += parts.at * parts.n_labelled as f64;
            vat += parts.vat * parts.n_examples as f64;
            n_lab += parts.n_labelled;
            n_all += parts.n_examples;
            if parts.floor_hits > 0 {
                log::warn!("epoch {epoch}: probability floor hit {} times", parts.floor_hits);
            }
        }
        let ml = ml / n_lab.max(1) as f64;
        let at = at / n_lab.max(1) as f64;
        let vat = vat / n_all.max(1) as f64;
        let entry = EpochLog {
            epoch,
            ml,
            at,
            vat,
            total: cfg.loss.lambda_ml * ml + cfg.loss.lambda_at * at + cfg.loss.lambda_vat * vat,
            train_acc: accuracy(&model, examples)?,
        };
        log::info!(
            "epoch {epoch}: ML {:.4} AT {:.4} VAT {:.4} total {:.4} acc {:.3}",
            entry.ml,
            entry.at,
            entry.vat,
            entry.total,
            entry.train_acc
        );
        on_epoch(&model, &entry)?;
        logs.push(entry);
        if cfg.stop_at_train_acc.is_some_and(|target| entry.train_acc >= target) {
            break;
        }
    }
    Ok((model, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ml_loss_values() {
        assert_eq!(ml_loss([1.0, 0.0], 0).0, 0.0);
        assert!((ml_loss([0.5, 0.5], 1).0 - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, clamped) = ml_loss([1.0, 0.0], 1);
        assert!(clamped);
        assert!((l - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn batch_mean_matches_scalar_loop() {
        let probs = [[0.9, 0.1], [0.3, 0.7], [0.5, 0.5], [0.01, 0.99]];
        let labels = [0usize, 1, 0, 0];
        let mean = probs.iter().zip(labels).map(|(p, y)| ml_loss(*p, y).0).sum::<f64>() / 4.0;
        let mut oracle = 0.0;
        for i in 0..4 {
            oracle += -(probs[i][labels[i]] as f64).ln();
        }
        oracle /= 4.0;
        assert!((mean - oracle).abs() < 1e-15);
    }

    #[test]
    fn at_norm_and_zero() {
        let r = at_perturbation(&[3.0, -4.0, 0.0], 2.0);
        assert!((l2_norm(&r) - 2.0).abs() < 1e-12);
        assert_eq!(at_perturbation(&[0.0, 0.0], 2.0), vec![0.0, 0.0]);
    }

    #[test]
    fn kl_properties() {
        assert_eq!(kl_divergence([0.3, 0.7], [0.3, 0.7]), 0.0);
        assert!(kl_divergence([0.3, 0.7], [0.6, 0.4]) > 0.0);
        assert!(kl_divergence([1.0, 0.0], [0.0, 1.0]).is_finite());
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::default().check().is_ok());
        let bad = LossConfig {
            power_iters: 0,
            ..LossConfig::default()
        };
        assert!(bad.check().is_err());
        let bad = LossConfig {
            eps_vat: 0.0,
            ..LossConfig::default()
        };
        assert!(bad.check().is_err());
    }
}
