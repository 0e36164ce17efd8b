use alloc::format;

use super::{Bound, Conv2d, Init, Linear, LEAKY_SLOPE, NORM_EPS};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};

/// Channel attention block.
///
/// `y = x + body(x) ⊙ gate`, where `body = conv3 → IN → LeakyReLU → conv3`
/// and `gate = σ(W₂ · ReLU(W₁ · GAP(body)))` with a `C → C/r → C`
/// bottleneck.
#[derive(Debug, Clone)]
pub struct Cab {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub squeeze: Linear,
    pub excite: Linear,
}

impl Cab {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::config(format!(
                "{name}: {channels} channels not divisible by reduction {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            conv1: Conv2d::new(init, &format!("{name}.conv1"), channels, channels, 3, 1, true),
            conv2: Conv2d::new(init, &format!("{name}.conv2"), channels, channels, 3, 1, true),
            squeeze: Linear::new(init, &format!("{name}.squeeze"), channels, hidden),
            excite: Linear::new(init, &format!("{name}.excite"), hidden, channels),
        })
    }

    fn body(&self, tape: &Tape, p: &Bound, x: &Var) -> Var {
        let h = self.conv1.forward(tape, p, x);
        let h = tape.instance_norm(&h, NORM_EPS);
        let h = tape.leaky_relu(&h, LEAKY_SLOPE);
        self.conv2.forward(tape, p, &h)
    }

    fn gate_of(&self, tape: &Tape, p: &Bound, body: &Var) -> Var {
        let s = tape.gap(body);
        let s = self.squeeze.forward(tape, p, &s);
        let s = tape.relu(&s);
        let s = self.excite.forward(tape, p, &s);
        tape.sigmoid(&s)
    }

    /// Channel gates `[N, C]` for input `x`.
    pub fn gates(&self, tape: &Tape, p: &Bound, x: &Var) -> Var {
        let b = self.body(tape, p, x);
        self.gate_of(tape, p, &b)
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Var {
        let b = self.body(tape, p, x);
        let g = self.gate_of(tape, p, &b);
        let gated = tape.scale_channels(&b, &g);
        tape.add(x, &gated)
    }
}
