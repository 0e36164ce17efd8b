//! Central finite-difference gradient probes.
//!
//! Used as an independent oracle for the analytic backward passes: the
//! numeric side only ever evaluates forward passes on an inference tape.

use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradProbe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradProbe {
    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn rel_err(&self, floor: f64) -> f64 {
        let d = math::abs(self.analytic - self.numeric);
        d / math::abs(self.analytic).max(math::abs(self.numeric)).max(floor)
    }
}

/// Compares `∂f/∂inputs[i][j]` from the tape against central differences
/// with step `h` at every `(i, j)` in `probes`. `f` must return a scalar.
pub fn probe_gradients<F>(inputs: &[Tensor], probes: &[(usize, usize)], h: f64, f: F) -> Vec<GradProbe>
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(&loss);
    let eval = |perturbed: &[Tensor]| -> f64 {
        let t = Tape::inference();
        let vs: Vec<Var> = perturbed.iter().map(|x| Var::constant(x.clone())).collect();
        f(&t, &vs).value().data()[0]
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    probes
        .iter()
        .map(|&(i, j)| {
            let analytic = grads.wrt(&vars[i]).map_or(0.0, |g| g.data()[j]);
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let fp = eval(&work);
            work[i].data_mut()[j] = orig - h;
            let fm = eval(&work);
            work[i].data_mut()[j] = orig;
            GradProbe {
                input: i,
                index: j,
                analytic,
                numeric: (fp - fm) / (2.0 * h),
            }
        })
        .collect()
}
