//! End-to-end gradient check of the whole detector.

use rand::Rng;

use super::{Mode, ModelConfig, SingGraph};
use crate::autograd::{grad_check_seeded, GradCheckReport};
use crate::dsp::{FeatureSequence, SourceTag};
use crate::error::Result;
use crate::seed;

/// Input frames of the check, or the model's minimum if that is larger.
pub const GRADCHECK_FRAMES: usize = 6;

/// Central-difference step of the full-model check. Rounding noise in the
/// difference quotient is about `ulp(loss) / eps`, which swamps coordinates
/// whose true gradient is below ~1e-6; a larger step instead risks
/// straddling a SELU/leaky-ReLU kink. 3e-5 balances the two.
pub const GRADCHECK_EPS: f64 = 3e-5;

/// Default input seed of the full-model check.
pub const GRADCHECK_SEED: u64 = 3;

/// Uniform `[-1, 1)` fused features of the width `cfg` expects.
pub fn gradcheck_input(cfg: &ModelConfig, input_seed: u64) -> Result<FeatureSequence> {
    let frames = GRADCHECK_FRAMES.max(cfg.min_frames());
    let dim = cfg.input_dim();
    let mut rng = seed::rng(input_seed);
    let data = (0..frames * dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    FeatureSequence::new(data, frames, dim, 50.0, SourceTag::Embedding)
}

/// Gradient check of the spoof-class loss in both batch-norm modes.
#[derive(Debug, Clone)]
pub struct ModelGradCheck {
    pub train: GradCheckReport,
    pub eval: GradCheckReport,
    /// Parameter names, to resolve `worst` coordinates.
    pub names: Vec<String>,
}

impl ModelGradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.train.max_rel_error.max(self.eval.max_rel_error)
    }

    /// `(mode, parameter name, flat index)` of the worst coordinate.
    pub fn worst(&self) -> Option<(Mode, &str, usize)> {
        let (mode, rep) = if self.train.max_rel_error >= self.eval.max_rel_error {
            (Mode::Train, &self.train)
        } else {
            (Mode::Eval, &self.eval)
        };
        rep.worst.map(|(p, c)| (mode, self.names[p].as_str(), c))
    }
}

/// Compares every parameter gradient of a freshly initialized model against
/// central differences with step `eps`, on [`gradcheck_input`]`(cfg,
/// input_seed)`.
pub fn model_grad_check(cfg: &ModelConfig, input_seed: u64, eps: f64) -> Result<ModelGradCheck> {
    let model = SingGraph::new(cfg.clone())?;
    let x = gradcheck_input(cfg, input_seed)?;
    let run = |mode: Mode| {
        grad_check_seeded(
            |_, v| Ok(model.loss_on(v, &x, 1, 1.0, mode)?.0),
            model.params().tensors(),
            eps,
            input_seed,
        )
    };
    Ok(ModelGradCheck {
        train: run(Mode::Train)?,
        eval: run(Mode::Eval)?,
        names: model.params().names().to_vec(),
    })
}
