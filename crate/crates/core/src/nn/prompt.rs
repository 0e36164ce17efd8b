use alloc::format;

use super::{Bound, Conv2d, Init, Linear, ParamId, PromptLevel};
use crate::autograd::{Tape, Var};

/// Input-adaptive prompt generator for one decoder level.
///
/// `ω = softmax(Linear(GAP(F)))`, then `P̂ = Conv3×3(resize(Σ_j ω_j P_j))`
/// with the bilinear resize matching the spatial size of `F`.
#[derive(Debug, Clone)]
pub struct PromptBlock {
    pub components: ParamId,
    pub weight_head: Linear,
    pub conv: Conv2d,
    pub level: PromptLevel,
}

pub struct PromptOutput {
    pub prompt: Var,
    pub weights: Var,
}

impl PromptBlock {
    pub fn new(init: &mut Init<'_>, name: &str, feature_channels: usize, level: PromptLevel) -> Self {
        let components = init.unit_uniform(
            format!("{name}.components"),
            &[level.n_p, level.c_p, level.h_p, level.w_p],
        );
        Self {
            components,
            weight_head: Linear::new(init, &format!("{name}.weight_head"), feature_channels, level.n_p),
            conv: Conv2d::new(init, &format!("{name}.conv"), level.c_p, level.c_p, 3, 1, false),
            level,
        }
    }

    /// Prompt weights `[N, Np]` only.
    pub fn weights(&self, tape: &Tape, p: &Bound, features: &Var) -> Var {
        let pooled = tape.gap(features);
        let logits = self.weight_head.forward(tape, p, &pooled);
        tape.softmax_rows(&logits)
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, features: &Var) -> PromptOutput {
        let s = features.shape();
        let (hf, wf) = (s[2], s[3]);
        let weights = self.weights(tape, p, features);
        let mixed = tape.weighted_components(&weights, p.get(self.components));
        let resized = tape.bilinear_resize(&mixed, hf, wf);
        let prompt = self.conv.forward(tape, p, &resized);
        PromptOutput { prompt, weights }
    }
}
