//! Classification losses with analytic logit gradients and the detached
//! (cross-entropy first, action-aware later) loss schedule.
//!
//! Every loss returns `(value, d value / d logits)` for a single sample.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, domain_err, shape_err, Error, Result};
use crate::exploration::SoftLabel;
use crate::longtail::ClassHistogram;

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - max - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn check_logits(logits: &[f64], classes: usize) -> Result<()> {
    if logits.len() != classes {
        return Err(shape_err!(
            "{} logits for a {classes}-class label",
            logits.len()
        ));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(domain_err!("non-finite logit"));
    }
    Ok(())
}

/// `-sum_c y_c w_c log p_c` and its gradient `(sum_c y_c w_c) p - y * w`.
fn weighted_soft_ce(
    logits: &[f64],
    target: &[f64],
    weight: impl Fn(usize) -> f64,
) -> Result<(f64, Vec<f64>)> {
    check_logits(logits, target.len())?;
    let logp = log_softmax(logits);
    let mut loss = 0.0;
    let mut mass = 0.0;
    for (c, (&y, &lp)) in target.iter().zip(&logp).enumerate() {
        let yw = y * weight(c);
        loss -= yw * lp;
        mass += yw;
    }
    let grad = logp
        .iter()
        .enumerate()
        .map(|(c, &lp)| mass * lp.exp() - target[c] * weight(c))
        .collect();
    Ok((loss, grad))
}

/// Softmax cross-entropy against a (possibly soft) label.
pub fn softmax_ce(logits: &[f64], label: &SoftLabel) -> Result<(f64, Vec<f64>)> {
    weighted_soft_ce(logits, &label.probs, |_| 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionAwareHyper {
    /// Lower end of the action-aware term range.
    pub upsilon: f64,
    /// Width of the action-aware term range.
    pub lambda: f64,
    /// Rescale weights to mean 1.
    pub normalize_weights: bool,
}

impl Default for ActionAwareHyper {
    fn default() -> Self {
        Self {
            upsilon: 0.99,
            lambda: 0.0099,
            normalize_weights: false,
        }
    }
}

impl ActionAwareHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.upsilon > 0.0 && self.upsilon < 1.0) {
            return Err(config_err!("upsilon must lie in (0, 1), got {}", self.upsilon));
        }
        if !(self.lambda > 0.0) {
            return Err(config_err!("lambda must be > 0, got {}", self.lambda));
        }
        if !(self.upsilon + self.lambda < 1.0) {
            return Err(config_err!(
                "upsilon + lambda must stay below 1, got {}",
                self.upsilon + self.lambda
            ));
        }
        Ok(())
    }
}

/// Action-aware term: class frequency mapped linearly onto
/// `[upsilon, upsilon + lambda]`.
pub fn beta_of(n_y: usize, n_min: usize, n_max: usize, hyper: &ActionAwareHyper) -> Result<f64> {
    if n_y < n_min || n_y > n_max {
        return Err(domain_err!(
            "class count {n_y} outside [{n_min}, {n_max}]"
        ));
    }
    if n_max == n_min {
        return Ok(hyper.upsilon);
    }
    let rel = (n_y - n_min) as f64 / (n_max - n_min) as f64;
    Ok(hyper.lambda * rel + hyper.upsilon)
}

/// Weighting factor `(1 - beta) / (1 - beta^n)`.
///
/// `beta^n` is evaluated as `exp(n ln beta)` through `expm1`, which keeps
/// the denominator accurate when `beta` is close to 1.
pub fn gamma_of(beta: f64, n: usize) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(domain_err!("beta must lie in (0, 1), got {beta}"));
    }
    if n == 0 {
        return Err(domain_err!("gamma needs n >= 1"));
    }
    if n == 1 {
        return Ok(1.0);
    }
    let denom = -(n as f64 * beta.ln()).exp_m1();
    Ok((1.0 - beta) / denom)
}

/// Per-class action-aware weights from the training histogram.
pub fn class_weights(hist: &ClassHistogram, hyper: &ActionAwareHyper) -> Result<Vec<f64>> {
    let mut w = hist
        .counts
        .iter()
        .map(|&n| gamma_of(beta_of(n, hist.n_min, hist.n_max, hyper)?, n))
        .collect::<Result<Vec<_>>>()?;
    if hyper.normalize_weights {
        normalize_mean(&mut w);
    }
    Ok(w)
}

fn normalize_mean(w: &mut [f64]) {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter_mut().for_each(|x| *x /= mean);
}

/// `-sum_c y_c gamma_c log p_c`; reduces to the action-aware loss for
/// one-hot labels.
pub fn action_aware_loss(
    logits: &[f64],
    label: &SoftLabel,
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if weights.len() != label.num_classes() {
        return Err(shape_err!(
            "{} class weights for {} classes",
            weights.len(),
            label.num_classes()
        ));
    }
    weighted_soft_ce(logits, &label.probs, |c| weights[c])
}

fn check_index(logits: &[f64], label: usize) -> Result<()> {
    if label >= logits.len() {
        return Err(shape_err!("label {label} with {} logits", logits.len()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(domain_err!("non-finite logit"));
    }
    Ok(())
}

/// `-(1 - p_y)^gamma log p_y`.
pub fn focal_loss(logits: &[f64], label: usize, gamma: f64) -> Result<(f64, Vec<f64>)> {
    check_index(logits, label)?;
    if !(gamma >= 0.0) {
        return Err(domain_err!("focal gamma must be >= 0"));
    }
    let logp = log_softmax(logits);
    let lp = logp[label];
    let py = lp.exp();
    let q = 1.0 - py;
    let loss = -q.powf(gamma) * lp;
    // dL/dp_y * p_y, then chain through dp_y/dz_j = p_y (delta_jy - p_j)
    let dq = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * lp * py
    };
    let coef = dq - q.powf(gamma);
    let grad = logp
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let delta = if j == label { 1.0 } else { 0.0 };
            coef * (delta - l.exp())
        })
        .collect();
    Ok((loss, grad))
}

/// Inverse-frequency weights `sum(n) / (C n_c)`.
pub fn inverse_frequency_weights(hist: &ClassHistogram) -> Vec<f64> {
    let total = hist.total() as f64;
    let k = hist.num_classes() as f64;
    hist.counts.iter().map(|&n| total / (k * n as f64)).collect()
}

/// Cross-entropy scaled by the inverse frequency of the target class.
pub fn weighted_ce(logits: &[f64], label: usize, hist: &ClassHistogram) -> Result<(f64, Vec<f64>)> {
    check_index(logits, label)?;
    if logits.len() != hist.num_classes() {
        return Err(shape_err!(
            "{} logits for a {}-class histogram",
            logits.len(),
            hist.num_classes()
        ));
    }
    let w = inverse_frequency_weights(hist);
    action_aware_loss(logits, &SoftLabel::one_hot(label, logits.len()), &w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_epochs: usize,
    /// First epoch trained with the action-aware loss.
    pub switch_epoch: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_epochs: 120,
            switch_epoch: 100,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.switch_epoch == 0 || self.switch_epoch > self.total_epochs {
            return Err(config_err!(
                "switch epoch {} must lie in [1, {}]",
                self.switch_epoch,
                self.total_epochs
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossStage {
    GenericCe,
    ActionAware,
}

/// Loss stage for a zero-based epoch.
pub fn select_loss(epoch: usize, schedule: &ScheduleConfig) -> Result<LossStage> {
    if epoch >= schedule.total_epochs {
        return Err(domain_err!(
            "epoch {epoch} outside [0, {})",
            schedule.total_epochs
        ));
    }
    Ok(if epoch < schedule.switch_epoch {
        LossStage::GenericCe
    } else {
        LossStage::ActionAware
    })
}

/// Training objective selected in the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy, then the action-aware loss from the switch epoch on.
    Detached,
    Ce,
    Focal,
    Weighted,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detached" | "action_aware" => Ok(LossKind::Detached),
            "ce" => Ok(LossKind::Ce),
            "focal" => Ok(LossKind::Focal),
            "weighted" => Ok(LossKind::Weighted),
            _ => Err(config_err!(
                "unknown loss kind {s:?} (expected detached, ce, focal, weighted)"
            )),
        }
    }
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Detached => "detached",
            LossKind::Ce => "ce",
            LossKind::Focal => "focal",
            LossKind::Weighted => "weighted",
        }
    }
}

/// A per-sample loss resolved for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Ce,
    /// Class-weighted cross-entropy (action-aware or inverse-frequency).
    ClassWeighted(Vec<f64>),
    Focal(f64),
}

impl Objective {
    pub fn evaluate(&self, logits: &[f64], label: &SoftLabel) -> Result<(f64, Vec<f64>)> {
        match self {
            Objective::Ce => softmax_ce(logits, label),
            Objective::ClassWeighted(w) => action_aware_loss(logits, label, w),
            Objective::Focal(g) => {
                let y = label.hard().ok_or_else(|| {
                    Error::Unsupported("focal loss needs one-hot labels; disable mixup".into())
                })?;
                focal_loss(logits, y, *g)
            }
        }
    }

    /// Effective weight a label receives, `sum_c y_c w_c`.
    pub fn sample_weight(&self, label: &SoftLabel) -> f64 {
        match self {
            Objective::ClassWeighted(w) => label.probs.iter().zip(w).map(|(y, w)| y * w).sum(),
            _ => 1.0,
        }
    }

    pub fn class_weights(&self, num_classes: usize) -> Vec<f64> {
        match self {
            Objective::ClassWeighted(w) => w.clone(),
            _ => vec![1.0; num_classes],
        }
    }
}
