//! Finite-difference verification of the hand-derived gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenId;
use crate::error::Result;
use crate::linalg::{mix_seed, Matrix};
use crate::loss::LossVariant;
use crate::model::{contrastive_example, gr_example, ModelGrads, ModelParams, OutputRows};

pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Largest analytic gradient magnitude seen.
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    pub components: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of `loss` against central differences over every
/// trainable component of `params`. Uses the fourth-order five-point stencil, so the
/// truncation error stays well below round-off on high-curvature components.
pub fn gradient_check<F>(params: &ModelParams, loss: F, epsilon: f64) -> Result<GradCheck>
where
    F: Fn(&ModelParams, Option<&mut ModelGrads>) -> Result<f64>,
{
    let mut grads = ModelGrads::zeros_like(params);
    loss(params, Some(&mut grads))?;
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(<[f64]>::to_vec).collect();
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        max_abs_analytic: 0.0,
        max_abs_numeric: 0.0,
        components: 0,
    };
    for (t, tensor) in analytic.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let orig = probe.trainable_mut()[t][i];
            let mut at = |offset: f64| -> Result<f64> {
                probe.trainable_mut()[t][i] = orig + offset;
                loss(&probe, None)
            };
            let n = (8.0 * (at(epsilon)? - at(-epsilon)?)
                - (at(2.0 * epsilon)? - at(-2.0 * epsilon)?))
                / (12.0 * epsilon);
            probe.trainable_mut()[t][i] = orig;
            report.max_relative_error = report.max_relative_error.max(relative_error(a, n));
            report.max_abs_analytic = report.max_abs_analytic.max(a.abs());
            report.max_abs_numeric = report.max_abs_numeric.max(n.abs());
            report.components += 1;
        }
    }
    Ok(report)
}

/// Which loss a random instance exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedLoss {
    /// Generative loss against frozen CE rows.
    Generative,
    /// Generative loss against a trainable output table.
    GenerativeVanilla,
    Contrastive(LossVariant),
}

/// A small random model plus a loss instance for gradient checking.
#[derive(Debug, Clone)]
pub struct CheckInstance {
    pub params: ModelParams,
    pub rows: Matrix,
    pub query: Vec<TokenId>,
    pub targets: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub loss: CheckedLoss,
}

impl CheckInstance {
    pub fn random(loss: CheckedLoss, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6C));
        let vocab = 10;
        let dim = 5;
        let n_rows = 9;
        let lambda = rng.random_range(0.1..0.9);
        let mut params =
            ModelParams::init(vocab, dim, lambda, rng.random_range(1..4), rng.random());
        if loss == CheckedLoss::GenerativeVanilla {
            params = params.with_vanilla_table();
        }
        let rows = Matrix::random(n_rows, dim, 0.8, &mut rng);
        let qlen = rng.random_range(1..6);
        let query = (0..qlen)
            .map(|_| TokenId(rng.random_range(4..vocab as u32)))
            .collect();
        let out_rows = if loss == CheckedLoss::GenerativeVanilla {
            vocab
        } else {
            n_rows
        };
        let tlen = rng.random_range(1..4);
        let mut targets: Vec<usize> = (0..tlen).map(|_| rng.random_range(3..out_rows)).collect();
        targets.push(1);
        let mut order: Vec<usize> = (0..n_rows).collect();
        for i in (1..n_rows).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let n_pos = match loss {
            CheckedLoss::Contrastive(LossVariant::V3) => rng.random_range(1..4),
            _ => 1,
        };
        let positives = order[..n_pos].to_vec();
        let n_neg = match loss {
            CheckedLoss::Contrastive(LossVariant::V1) => rng.random_range(1..4),
            _ => n_rows - n_pos,
        };
        let negatives = order[n_pos..n_pos + n_neg].to_vec();
        Self {
            params,
            rows,
            query,
            targets,
            positives,
            negatives,
            loss,
        }
    }

    pub fn evaluate(&self, params: &ModelParams, grads: Option<&mut ModelGrads>) -> Result<f64> {
        match self.loss {
            CheckedLoss::Generative => gr_example(
                params,
                OutputRows::Frozen(&self.rows),
                &self.query,
                &self.targets,
                grads,
            ),
            CheckedLoss::GenerativeVanilla => {
                gr_example(params, OutputRows::Table, &self.query, &self.targets, grads)
            }
            CheckedLoss::Contrastive(v) => contrastive_example(
                params,
                &self.rows,
                &self.query,
                &self.positives,
                &self.negatives,
                v,
                grads,
            ),
        }
    }

    pub fn check(&self, epsilon: f64) -> Result<GradCheck> {
        gradient_check(&self.params, |p, g| self.evaluate(p, g), epsilon)
    }
}
