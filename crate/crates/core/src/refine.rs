//! Stage II: image-domain refinement of a magnitude sequence with stacked
//! U-Nets interleaved with grouped temporal shifts.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, Init, NetConfig, ParamStore, Unet};
use crate::phantom::Boundary;
use crate::tensor::Tensor;

const SCALE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub n_unets: usize,
    pub base_width: usize,
    pub shift_groups: usize,
    pub shift_offsets: Vec<isize>,
    pub boundary: Boundary,
    #[serde(default = "default_cabs")]
    pub cab_per_block: usize,
    #[serde(default = "default_reduction")]
    pub reduction: usize,
}

fn default_cabs() -> usize {
    1
}

fn default_reduction() -> usize {
    4
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            n_unets: 2,
            base_width: 16,
            shift_groups: 4,
            shift_offsets: vec![-1, 0, 1],
            boundary: Boundary::Cyclic,
            cab_per_block: default_cabs(),
            reduction: default_reduction(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_unets == 0 {
            return Err(Error::config("n_unets must be >= 1"));
        }
        if self.shift_groups == 0 || self.base_width % self.shift_groups != 0 {
            return Err(Error::config(format!(
                "shift_groups {} must divide base_width {}",
                self.shift_groups, self.base_width
            )));
        }
        self.unet_config().validate()
    }

    fn unet_config(&self) -> NetConfig {
        NetConfig {
            cab_per_block: self.cab_per_block,
            reduction: self.reduction,
            ..NetConfig::caunet(self.base_width, self.base_width, self.base_width)
        }
    }
}

/// Grouped shift of `[F, C, H, W]` features along the frame axis: group
/// `g` of output frame `t` reads frame `t − offsets[g mod len]`.
pub fn temporal_shift(features: &Tensor, groups: usize, offsets: &[isize], boundary: Boundary) -> Result<Tensor> {
    let s = features.shape();
    if s.len() != 4 {
        return Err(Error::shape("temporal_shift", &[0, 0, 0, 0], s));
    }
    if groups == 0 || s[1] % groups != 0 {
        return Err(Error::config(format!("{groups} shift groups do not divide {} channels", s[1])));
    }
    let t = Tape::inference();
    let y = t.temporal_shift(&Var::constant(features.clone()), groups, offsets, boundary == Boundary::Cyclic);
    Ok(y.value().clone())
}

#[derive(Debug, Clone)]
pub struct Refiner {
    cfg: RefineConfig,
    lift: Conv2d,
    unets: Vec<Unet>,
    head: Conv2d,
}

impl Refiner {
    /// Seeded initialization; the zeroed head makes the untrained refiner
    /// the identity.
    pub fn new(cfg: &RefineConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let w = cfg.base_width;
        let lift = Conv2d::new(&mut init, "refine.lift", 1, w, 3, 1, true);
        let ucfg = cfg.unet_config();
        let unets = (0..cfg.n_unets)
            .map(|i| Unet::caunet(&mut init, &format!("refine.unet{i}"), &ucfg))
            .collect::<Result<Vec<_>>>()?;
        let head = Conv2d::new(&mut init, "refine.head", w, 1, 3, 1, true);
        store.get_mut(head.weight).data_mut().fill(0.0);
        if let Some(b) = head.bias {
            store.get_mut(b).data_mut().fill(0.0);
        }
        Ok((
            Self {
                cfg: cfg.clone(),
                lift,
                unets,
                head,
            },
            store,
        ))
    }

    pub fn config(&self) -> &RefineConfig {
        &self.cfg
    }

    /// `[F, H, W]` Stage-I magnitudes to refined magnitudes of equal shape.
    pub fn forward(&self, tape: &Tape, p: &Bound, stage1: &Var) -> Var {
        let s = stage1.shape().to_vec();
        assert_eq!(s.len(), 3, "refine input must be [F, H, W]");
        let x = tape.reshape(stage1, &[s[0], 1, s[1], s[2]]);
        let scale = tape.add_scalar(&tape.sqrt(&tape.mean(&tape.mul(&x, &x))), SCALE_EPS);
        let xn = tape.mul_scalar_var(&x, &tape.recip(&scale));
        let mut f = self.lift.forward(tape, p, &xn);
        let cyclic = self.cfg.boundary == Boundary::Cyclic;
        for u in &self.unets {
            let shifted = tape.temporal_shift(&f, self.cfg.shift_groups, &self.cfg.shift_offsets, cyclic);
            let r = u.forward(tape, p, &shifted);
            f = tape.add(&f, &r);
        }
        let out = tape.mul_scalar_var(&self.head.forward(tape, p, &f), &scale);
        let y = tape.relu(&tape.add(&x, &out));
        tape.reshape(&y, &s)
    }

    /// Inference on a `[F, H, W]` volume.
    pub fn refine(&self, store: &ParamStore, stage1: &Tensor) -> Result<Tensor> {
        if stage1.ndim() != 3 {
            return Err(Error::shape("refine", &[0, 0, 0], stage1.shape()));
        }
        let t = Tape::inference();
        let y = self.forward(&t, &store.bind(&t), &Var::constant(stage1.clone()));
        if !y.value().all_finite() {
            return Err(Error::Divergence("non-finite stage-II output".into()));
        }
        Ok(y.value().clone())
    }
}
