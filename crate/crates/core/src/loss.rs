//! Training objectives: the generative-retrieval likelihood and the token-level
//! contrastive losses. Both are computed through log-sum-exp.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp, softmax};

/// Sum over steps of `-log softmax(logits_t)[target_t]`.
pub fn gr_loss(step_logits: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    Ok(gr_loss_with_grad(step_logits, targets)?.0)
}

/// Loss plus its gradient with respect to every logit.
pub fn gr_loss_with_grad(
    step_logits: &[Vec<f64>],
    targets: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if step_logits.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} logit vectors for {} targets",
            step_logits.len(),
            targets.len()
        )));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(targets.len());
    for (logits, &t) in step_logits.iter().zip(targets) {
        if t >= logits.len() {
            return Err(Error::invalid(format!(
                "target row {t} out of range for {} rows",
                logits.len()
            )));
        }
        loss += log_sum_exp(logits) - logits[t];
        let mut g = softmax(logits);
        g[t] -= 1.0;
        grads.push(g);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Single positive token, in-batch negatives.
    V1,
    /// Single positive token, every other CE row negative.
    V2,
    /// All target tokens positive, every other CE row negative.
    #[default]
    V3,
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" => Ok(Self::V1),
            "v2" => Ok(Self::V2),
            "v3" => Ok(Self::V3),
            other => Err(Error::invalid(format!("unknown loss variant {other:?}"))),
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::V1 => "v1",
            Self::V2 => "v2",
            Self::V3 => "v3",
        })
    }
}

/// `-log( Σ_{T+} e^{<q,t>} / (Σ_{T+} e^{<q,t>} + Σ_{T-} e^{<q,t>}) )`
pub fn contrastive_loss(
    q: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
    variant: LossVariant,
) -> Result<f64> {
    check_positives(positives.len(), variant)?;
    let pos: Vec<f64> = positives.iter().map(|t| dot(q, t)).collect();
    let neg: Vec<f64> = negatives.iter().map(|t| dot(q, t)).collect();
    Ok(contrastive_from_scores(&pos, &neg).0)
}

pub(crate) fn check_positives(n: usize, variant: LossVariant) -> Result<()> {
    match (variant, n) {
        (_, 0) => Err(Error::invalid(
            "contrastive loss needs at least one positive",
        )),
        (LossVariant::V1 | LossVariant::V2, n) if n != 1 => Err(Error::invalid(format!(
            "variant {variant} takes exactly one positive, got {n}"
        ))),
        _ => Ok(()),
    }
}

/// Loss and its gradients with respect to the positive and negative scores.
pub(crate) fn contrastive_from_scores(pos: &[f64], neg: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let all: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let lse_all = log_sum_exp(&all);
    let lse_pos = log_sum_exp(pos);
    let loss = (lse_all - lse_pos).max(0.0);
    let dpos = pos
        .iter()
        .map(|s| (s - lse_all).exp() - (s - lse_pos).exp())
        .collect();
    let dneg = neg.iter().map(|s| (s - lse_all).exp()).collect();
    (loss, dpos, dneg)
}
