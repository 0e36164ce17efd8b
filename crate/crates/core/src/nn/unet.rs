use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Bound, Cab, Conv2d, ConvTranspose2x2, Init, ParamStore, PromptBlock};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encoder/decoder depth; two downsamplings separate the three levels.
pub const UNET_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLevel {
    pub n_p: usize,
    pub h_p: usize,
    pub w_p: usize,
    pub c_p: usize,
}

/// One prompt bank per decoder level, finest level first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub levels: Vec<PromptLevel>,
}

impl PromptConfig {
    /// `N_p = 5`, `C_p` = decoder width, spatial sizes 24/12/6.
    pub fn default_for(base_width: usize) -> Self {
        let sizes = [24, 12, 6];
        Self {
            levels: (0..UNET_LEVELS)
                .map(|i| PromptLevel {
                    n_p: 5,
                    h_p: sizes[i],
                    w_p: sizes[i],
                    c_p: base_width << i,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub levels: usize,
    pub cab_per_block: usize,
    pub reduction: usize,
    pub use_prompts: bool,
    #[serde(default)]
    pub prompt: Option<PromptConfig>,
}

impl NetConfig {
    pub fn caunet(in_channels: usize, out_channels: usize, base_width: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            base_width,
            levels: UNET_LEVELS,
            cab_per_block: 2,
            reduction: 4,
            use_prompts: false,
            prompt: None,
        }
    }

    pub fn prompt_unet(in_channels: usize, out_channels: usize, base_width: usize) -> Self {
        Self {
            use_prompts: true,
            prompt: Some(PromptConfig::default_for(base_width)),
            ..Self::caunet(in_channels, out_channels, base_width)
        }
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels != UNET_LEVELS {
            return Err(Error::config(format!("levels must be {UNET_LEVELS}, got {}", self.levels)));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.base_width == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.cab_per_block == 0 {
            return Err(Error::config("cab_per_block must be positive"));
        }
        if self.reduction == 0 || self.base_width % self.reduction != 0 {
            return Err(Error::config(format!(
                "base_width {} not divisible by reduction {}",
                self.base_width, self.reduction
            )));
        }
        match (&self.prompt, self.use_prompts) {
            (Some(p), true) => {
                if p.levels.len() != UNET_LEVELS {
                    return Err(Error::config("one prompt bank per decoder level required"));
                }
                if p.levels.iter().any(|l| l.n_p == 0 || l.c_p == 0 || l.h_p == 0 || l.w_p == 0) {
                    return Err(Error::config("prompt dimensions must be positive"));
                }
            }
            (None, true) => return Err(Error::config("use_prompts set without a prompt config")),
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Level {
    enc: Vec<Cab>,
    down: Option<Conv2d>,
    reduce: Conv2d,
    dec: Vec<Cab>,
    up: Option<ConvTranspose2x2>,
    prompt: Option<PromptBlock>,
}

/// Three-level channel-attention U-Net; with prompts enabled it becomes
/// the prompt-conditioned variant.
///
/// Encoder level `i` runs `cab_per_block` CABs at width `base·2ⁱ` and keeps
/// the result as a skip; a stride-2 2×2 convolution moves to the next level.
/// A CAB bottleneck follows the deepest level. Each decoder level
/// concatenates its input with the skip, optionally concatenates the prompt
/// produced from those features, fuses with a 1×1 convolution, runs its CABs
/// and upsamples with a 2×2 transposed convolution.
#[derive(Debug, Clone)]
pub struct Unet {
    cfg: NetConfig,
    name: String,
    input: Conv2d,
    levels: Vec<Level>,
    bottleneck: Vec<Cab>,
    output: Conv2d,
}

/// Prompt weights captured during a forward pass, finest level first.
pub type PromptTrace = Vec<Tensor>;

impl Unet {
    /// Channel-attention U-Net; `cfg.use_prompts` must be false.
    pub fn caunet(init: &mut Init<'_>, name: &str, cfg: &NetConfig) -> Result<Self> {
        if cfg.use_prompts {
            return Err(Error::config("caunet requires use_prompts = false"));
        }
        Self::build(init, name, cfg)
    }

    /// Prompt-conditioned U-Net; `cfg.use_prompts` must be true.
    pub fn prompt_unet(init: &mut Init<'_>, name: &str, cfg: &NetConfig) -> Result<Self> {
        if !cfg.use_prompts {
            return Err(Error::config("prompt_unet requires use_prompts = true"));
        }
        Self::build(init, name, cfg)
    }

    /// Builds whichever variant `cfg` describes.
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &NetConfig) -> Result<Self> {
        Self::build(init, name, cfg)
    }

    fn build(init: &mut Init<'_>, name: &str, cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let input = Conv2d::new(init, &format!("{name}.input"), cfg.in_channels, cfg.width(0), 3, 1, true);
        let mut levels = Vec::with_capacity(UNET_LEVELS);
        for i in 0..UNET_LEVELS {
            let w = cfg.width(i);
            let enc = (0..cfg.cab_per_block)
                .map(|j| Cab::new(init, &format!("{name}.enc{i}.cab{j}"), w, cfg.reduction))
                .collect::<Result<Vec<_>>>()?;
            let down = (i + 1 < UNET_LEVELS)
                .then(|| Conv2d::new(init, &format!("{name}.down{i}"), w, cfg.width(i + 1), 2, 2, true));
            levels.push((w, enc, down));
        }
        let deepest = cfg.width(UNET_LEVELS - 1);
        let bottleneck = (0..cfg.cab_per_block)
            .map(|j| Cab::new(init, &format!("{name}.bottleneck.cab{j}"), deepest, cfg.reduction))
            .collect::<Result<Vec<_>>>()?;
        let mut built = Vec::with_capacity(UNET_LEVELS);
        for (i, (w, enc, down)) in levels.into_iter().enumerate() {
            let prompt = match (&cfg.prompt, cfg.use_prompts) {
                (Some(pc), true) => Some(PromptBlock::new(
                    init,
                    &format!("{name}.prompt{i}"),
                    2 * w,
                    pc.levels[i],
                )),
                _ => None,
            };
            let fused_in = 2 * w + prompt.as_ref().map_or(0, |p| p.level.c_p);
            let reduce = Conv2d::new(init, &format!("{name}.fuse{i}"), fused_in, w, 1, 1, true);
            let dec = (0..cfg.cab_per_block)
                .map(|j| Cab::new(init, &format!("{name}.dec{i}.cab{j}"), w, cfg.reduction))
                .collect::<Result<Vec<_>>>()?;
            let up = (i > 0).then(|| ConvTranspose2x2::new(init, &format!("{name}.up{i}"), w, cfg.width(i - 1)));
            built.push(Level {
                enc,
                down,
                reduce,
                dec,
                up,
                prompt,
            });
        }
        let output = Conv2d::new(init, &format!("{name}.output"), cfg.width(0), cfg.out_channels, 3, 1, true);
        Ok(Self {
            cfg: cfg.clone(),
            name: name.into(),
            input,
            levels: built,
            bottleneck,
            output,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Zeroes the output convolution so the network starts as `x ↦ 0`.
    pub fn zero_output(&self, store: &mut ParamStore) {
        store.get_mut(self.output.weight).data_mut().fill(0.0);
        if let Some(b) = self.output.bias {
            store.get_mut(b).data_mut().fill(0.0);
        }
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: &Var) -> Var {
        self.forward_traced(tape, p, x, None)
    }

    /// Forward pass that also records each decoder level's prompt weights.
    pub fn forward_traced(&self, tape: &Tape, p: &Bound, x: &Var, mut trace: Option<&mut PromptTrace>) -> Var {
        let s = x.shape();
        assert_eq!(s.len(), 4, "unet input must be [N, C, H, W]");
        assert_eq!(s[1], self.cfg.in_channels, "unet input channels");
        let (h, w) = (s[2], s[3]);
        let mult = 1 << (UNET_LEVELS - 1);
        let ph = (mult - h % mult) % mult;
        let pw = (mult - w % mult) % mult;
        let padded = if ph + pw > 0 {
            tape.reflect_pad(x, ph / 2, ph - ph / 2, pw / 2, pw - pw / 2)
        } else {
            x.clone()
        };

        let mut feat = self.input.forward(tape, p, &padded);
        let mut skips = Vec::with_capacity(UNET_LEVELS);
        for lvl in &self.levels {
            for cab in &lvl.enc {
                feat = cab.forward(tape, p, &feat);
            }
            skips.push(feat.clone());
            if let Some(down) = &lvl.down {
                feat = down.forward(tape, p, &feat);
            }
        }
        for cab in &self.bottleneck {
            feat = cab.forward(tape, p, &feat);
        }
        let mut weights = vec![None; UNET_LEVELS];
        for (i, lvl) in self.levels.iter().enumerate().rev() {
            let joined = tape.concat(&[&feat, &skips[i]], 1);
            let fused_in = match &lvl.prompt {
                Some(pb) => {
                    let out = pb.forward(tape, p, &joined);
                    weights[i] = Some(out.weights.value().clone());
                    tape.concat(&[&joined, &out.prompt], 1)
                }
                None => joined,
            };
            feat = lvl.reduce.forward(tape, p, &fused_in);
            for cab in &lvl.dec {
                feat = cab.forward(tape, p, &feat);
            }
            if let Some(up) = &lvl.up {
                feat = up.forward(tape, p, &feat);
            }
        }
        if let Some(t) = trace.as_mut() {
            t.extend(weights.into_iter().flatten());
        }
        let out = self.output.forward(tape, p, &feat);
        if ph + pw > 0 {
            tape.crop(&out, ph / 2, pw / 2, h, w)
        } else {
            out
        }
    }

    /// Prompt blocks, finest level first (empty for the plain variant).
    pub fn prompt_blocks(&self) -> Vec<&PromptBlock> {
        self.levels.iter().filter_map(|l| l.prompt.as_ref()).collect()
    }

    /// First CAB of the finest encoder level.
    pub fn first_cab(&self) -> &Cab {
        &self.levels[0].enc[0]
    }
}
