use alloc::format;

use super::{fan_in_bound, Bound, Init, ParamId};
use crate::autograd::{Tape, Var};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(init: &mut Init<'_>, name: &str, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> Self {
        let bound = fan_in_bound(cin * k * k);
        let weight = init.uniform(format!("{name}.weight"), &[cout, cin, k, k], bound);
        let bias = bias.then(|| init.uniform(format!("{name}.bias"), &[cout], bound));
        Self {
            weight,
            bias,
            stride,
            // "same" padding for odd kernels, none for the 2×2 downsampler
            pad: if k % 2 == 1 { k / 2 } else { 0 },
        }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Var {
        tape.conv2d(
            x,
            p.get(self.weight),
            self.bias.map(|b| p.get(b)),
            self.stride,
            self.pad,
        )
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2x2 {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose2x2 {
    pub fn new(init: &mut Init<'_>, name: &str, cin: usize, cout: usize) -> Self {
        let bound = fan_in_bound(cout * 4);
        Self {
            weight: init.uniform(format!("{name}.weight"), &[cin, cout, 2, 2], bound),
            bias: init.uniform(format!("{name}.bias"), &[cout], bound),
        }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Var {
        tape.conv_transpose2x2(x, p.get(self.weight), p.get(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, fin: usize, fout: usize) -> Self {
        let bound = fan_in_bound(fin);
        Self {
            weight: init.uniform(format!("{name}.weight"), &[fout, fin], bound),
            bias: init.uniform(format!("{name}.bias"), &[fout], bound),
        }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Var {
        tape.linear(x, p.get(self.weight), p.get(self.bias))
    }
}
