//! Classification and distillation losses with analytic logit gradients.

use serde::{Deserialize, Serialize};

use super::NnError;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln()
}

/// Cross-entropy of the softmax of `logits` against a hard label.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Fixed,
    /// `min(pi, 1 - pi^t)` over epochs t = 1, 2, ...
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Kind {
    CrossEntropy,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    Sequential,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Imitation parameter in [0,1].
    pub pi: f64,
    pub schedule: Schedule,
    pub l2: L2Kind,
    pub mode: DistillMode,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            pi: 0.575,
            schedule: Schedule::Variable,
            l2: L2Kind::Euclidean,
            mode: DistillMode::Sequential,
        }
    }
}

/// Imitation weight effective at epoch `t` (1-based).
pub fn effective_pi(cfg: &DistillConfig, t: usize) -> f64 {
    match cfg.schedule {
        Schedule::Fixed => cfg.pi,
        Schedule::Variable => cfg.pi.min(1.0 - cfg.pi.powi(t as i32)),
    }
}

/// What the training loop optimizes for one sample.
#[derive(Debug, Clone)]
pub enum LossSpec<'a> {
    /// Plain cross-entropy against the hard label.
    Hard,
    /// `(1 - pi) * ce(label) + pi * l2(teacher_soft)`. A zero effective
    /// weight skips the soft term entirely so the arithmetic matches the
    /// hard path bit for bit.
    Distill {
        teacher_soft: &'a [f64],
        pi_t: f64,
        l2: L2Kind,
    },
}

/// Loss value and gradient with respect to the logits.
pub fn loss_and_grad(logits: &[f64], label: usize, spec: &LossSpec) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let ce = log_sum_exp(logits) - logits[label];
    let mut grad: Vec<f64> = p.clone();
    grad[label] -= 1.0;
    match spec {
        LossSpec::Hard => (ce, grad),
        LossSpec::Distill {
            teacher_soft,
            pi_t,
            l2,
        } => {
            let pi_t = *pi_t;
            if pi_t == 0.0 {
                return (ce, grad);
            }
            for g in grad.iter_mut() {
                *g *= 1.0 - pi_t;
            }
            let s = *teacher_soft;
            match l2 {
                L2Kind::CrossEntropy => {
                    let lse = log_sum_exp(logits);
                    let soft: f64 = s
                        .iter()
                        .zip(logits)
                        .map(|(&si, &zi)| si * (lse - zi))
                        .sum();
                    for (g, (&pi_, &si)) in grad.iter_mut().zip(p.iter().zip(s)) {
                        *g += pi_t * (pi_ - si);
                    }
                    ((1.0 - pi_t) * ce + pi_t * soft, grad)
                }
                L2Kind::Euclidean => {
                    let diff: Vec<f64> = p.iter().zip(s).map(|(&pi_, &si)| pi_ - si).collect();
                    let l2v: f64 = diff.iter().map(|d| d * d).sum();
                    // d l2 / dz = J_softmax^T (2 diff) = p .* (w - <p, w>)
                    let w: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
                    let dot: f64 = p.iter().zip(&w).map(|(&a, &b)| a * b).sum();
                    for ((g, &pi_), &wi) in grad.iter_mut().zip(p.iter()).zip(&w) {
                        *g += pi_t * pi_ * (wi - dot);
                    }
                    ((1.0 - pi_t) * ce + pi_t * l2v, grad)
                }
            }
        }
    }
}

/// The distillation objective for one sample at epoch `t`.
pub fn distill_loss(
    label: usize,
    teacher_soft: &[f64],
    logits: &[f64],
    cfg: &DistillConfig,
    t: usize,
) -> Result<f64, NnError> {
    if cfg.l2 == L2Kind::CrossEntropy {
        let sum: f64 = teacher_soft.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || teacher_soft.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(NnError::BadProbability(format!(
                "teacher vector sums to {sum}"
            )));
        }
    }
    if teacher_soft.len() != logits.len() {
        return Err(NnError::ShapeMismatch {
            what: "teacher classes",
            want: logits.len(),
            got: teacher_soft.len(),
        });
    }
    let pi_t = effective_pi(cfg, t);
    let (loss, _) = loss_and_grad(
        logits,
        label,
        &LossSpec::Distill {
            teacher_soft,
            pi_t,
            l2: cfg.l2,
        },
    );
    Ok(loss)
}
