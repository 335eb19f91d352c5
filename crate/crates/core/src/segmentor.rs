//! Pyramid progressive attention U-Net and its ablation family.
//!
//! Four encoder stages at `m, m/2, m/4, m/8` feed a bottleneck at `m/16`.
//! With `pyramid_inputs`, stages two to four also receive the image
//! average-pooled to their resolution (3x3 conv + BN + ReLU, concatenated).
//! Each decoder stage upsamples the coarser features bilinearly, optionally
//! gates the skip connection with an attention gate, concatenates, and
//! applies two conv-BN-ReLU layers. Side-output heads are 1x1 convs followed
//! by a sigmoid; with `progressive_side_outputs` each side's logits are
//! added, after 2x upsampling, to the next finer side's logits.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::nn::{
    avg_pool, bilinear_upsample2x, load_tensors, save_tensors, BatchNorm2d, Conv2d, Mode,
    ParamPath, ParamStore,
};
use crate::{Error, Result};

/// Number of encoder (and decoder) stages.
pub const STAGES: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentorConfig {
    /// Input side length `m`; must be divisible by 16.
    pub input_size: usize,
    /// Channels of the first stage, doubled per stage; the bottleneck has 16x.
    pub base_channels: usize,
    pub pyramid_inputs: bool,
    pub attention_gates: bool,
    pub progressive_side_outputs: bool,
    pub deep_supervision: bool,
}

/// Ablation variant names.
pub const VARIANTS: [&str; 8] = [
    "U-Net",
    "PU-Net",
    "ProgU-Net",
    "AU-Net",
    "PAU-Net",
    "ProgAU-Net",
    "PPU-Net",
    "PPAU-Net",
];

impl SegmentorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % (1 << STAGES) != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {} is not a positive multiple of 16",
                self.input_size
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidArgument("base_channels must be positive".into()));
        }
        Ok(())
    }

    /// Channel width of encoder/decoder stage `k` (0 = full resolution).
    pub fn width(&self, k: usize) -> usize {
        self.base_channels << k
    }

    pub fn has_side_heads(&self) -> bool {
        self.deep_supervision || self.progressive_side_outputs
    }

    /// Name of the ablation variant with these flags, if any.
    pub fn variant_name(&self) -> Option<&'static str> {
        VARIANTS.iter().copied().find(|name| {
            make_variant(name).is_ok_and(|v| {
                (v.pyramid_inputs, v.attention_gates, v.progressive_side_outputs, v.deep_supervision)
                    == (
                        self.pyramid_inputs,
                        self.attention_gates,
                        self.progressive_side_outputs,
                        self.deep_supervision,
                    )
            })
        })
    }

    pub fn with_size(mut self, input_size: usize, base_channels: usize) -> Self {
        self.input_size = input_size;
        self.base_channels = base_channels;
        self
    }
}

impl fmt::Display for SegmentorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (m={}, base={})",
            self.variant_name().unwrap_or("custom"),
            self.input_size,
            self.base_channels
        )
    }
}

/// Flags for a named variant at full scale (`m = 128`, base width 32).
///
/// `P` as prefix is the pyramid encoder, `Prog` or a second `P` is
/// progressive deep supervision, `A` is attention gating.
pub fn make_variant(name: &str) -> Result<SegmentorConfig> {
    let (pyramid, progressive, attention) = match name {
        "U-Net" => (false, false, false),
        "PU-Net" => (true, false, false),
        "ProgU-Net" => (false, true, false),
        "AU-Net" => (false, false, true),
        "PAU-Net" => (true, false, true),
        "ProgAU-Net" => (false, true, true),
        "PPU-Net" => (true, true, false),
        "PPAU-Net" => (true, true, true),
        other => {
            return Err(Error::UnknownName {
                kind: "variant",
                name: other.to_string(),
            })
        }
    };
    Ok(SegmentorConfig {
        input_size: 128,
        base_channels: 32,
        pyramid_inputs: pyramid,
        attention_gates: attention,
        progressive_side_outputs: progressive,
        deep_supervision: progressive,
    })
}

/// Soft attention gate on a skip connection.
///
/// Given skip features `x` at resolution `r` and a gating signal `g` at
/// `r/2`, computes `alpha = sigmoid(psi(relu(w_x x' + w_g g + b_g)) + b_psi)`
/// at `r/2` (`x'` is `x` projected with stride 2), upsamples `alpha`
/// bilinearly to `r` and returns `alpha * x`.
pub struct AttentionGate {
    w_x: Conv2d,
    w_g: Conv2d,
    psi: Conv2d,
    inner_channels: usize,
}

impl AttentionGate {
    pub fn new(mut path: ParamPath<'_>, x_channels: usize, g_channels: usize) -> Result<Self> {
        let inner = (x_channels / 2).max(1);
        Ok(Self {
            w_x: Conv2d::new(path.pp("w_x"), x_channels, inner, 1, 2, 0, false)?,
            w_g: Conv2d::new(path.pp("w_g"), g_channels, inner, 1, 1, 0, true)?,
            psi: Conv2d::new(path.pp("psi"), inner, 1, 1, 1, 0, true)?,
            inner_channels: inner,
        })
    }

    pub fn inner_channels(&self) -> usize {
        self.inner_channels
    }

    pub fn w_x(&self) -> &Conv2d {
        &self.w_x
    }

    pub fn w_g(&self) -> &Conv2d {
        &self.w_g
    }

    pub fn psi(&self) -> &Conv2d {
        &self.psi
    }

    /// Attention coefficients at the resolution of `x`, shape `(B, 1, r, r)`.
    pub fn coefficients(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        let (_, cx, hx, wx) = x.dims4()?;
        let (_, cg, hg, wg) = g.dims4()?;
        if hx != 2 * hg || wx != 2 * wg {
            return Err(Error::shape(format!(
                "gate: skip {hx}x{wx} must be twice the gating resolution {hg}x{wg}"
            )));
        }
        if cx != self.w_x.weight().dims()[1] || cg != self.w_g.weight().dims()[1] {
            return Err(Error::shape(format!(
                "gate: got {cx}/{cg} channels, expected {}/{}",
                self.w_x.weight().dims()[1],
                self.w_g.weight().dims()[1]
            )));
        }
        let theta = self.w_x.forward(x)?;
        let phi = self.w_g.forward(g)?;
        let f = (theta + phi)?.relu()?;
        let alpha = sigmoid(&self.psi.forward(&f)?)?;
        bilinear_upsample2x(&alpha)
    }

    pub fn forward(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        let alpha = self.coefficients(x, g)?;
        Ok(x.broadcast_mul(&alpha)?)
    }
}

pub(crate) fn sigmoid(xs: &Tensor) -> Result<Tensor> {
    // 1 / (1 + exp(-x)), differentiable through candle's unary ops.
    Ok((xs.neg()?.exp()? + 1.0)?.recip()?)
}

struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnRelu {
    fn new(mut path: ParamPath<'_>, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::same3x3(path.pp("conv"), cin, cout)?,
            bn: BatchNorm2d::new(path.pp("bn"), cout)?,
        })
    }

    fn forward(&self, xs: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(xs)?, mode)?.relu()?)
    }
}

struct DoubleConv(ConvBnRelu, ConvBnRelu);

impl DoubleConv {
    fn new(mut path: ParamPath<'_>, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self(
            ConvBnRelu::new(path.pp("0"), cin, cout)?,
            ConvBnRelu::new(path.pp("1"), cout, cout)?,
        ))
    }

    fn forward(&self, xs: &Tensor, mode: Mode) -> Result<Tensor> {
        self.1.forward(&self.0.forward(xs, mode)?, mode)
    }
}

struct EncoderStage {
    pyramid: Option<ConvBnRelu>,
    convs: DoubleConv,
}

struct DecoderStage {
    gate: Option<AttentionGate>,
    convs: DoubleConv,
    side: Option<Conv2d>,
}

/// Final probability map plus the four side outputs, coarsest first.
pub struct SegmentorOutput {
    /// `(B, 1, m, m)`.
    pub final_map: Tensor,
    /// `(B, 1, m/8, m/8)`, `(B, 1, m/4, m/4)`, `(B, 1, m/2, m/2)`, and the
    /// final map itself.
    pub sides: Vec<Tensor>,
}

pub struct Segmentor {
    config: SegmentorConfig,
    store: ParamStore,
    encoder: Vec<EncoderStage>,
    bottleneck: DoubleConv,
    decoder: Vec<DecoderStage>,
    /// Output head when there are no side heads.
    head: Option<Conv2d>,
}

impl Segmentor {
    pub fn new(config: SegmentorConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32)
    }

    pub fn with_dtype(config: SegmentorConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, seed);
        let mut root = store.root();
        let mut encoder = Vec::with_capacity(STAGES);
        for k in 0..STAGES {
            let mut path = root.pp(format!("enc.{k}"));
            let (pyramid, cin) = if k == 0 {
                (None, 1)
            } else if config.pyramid_inputs {
                let prev = config.width(k - 1);
                (Some(ConvBnRelu::new(path.pp("pyramid"), 1, prev)?), 2 * prev)
            } else {
                (None, config.width(k - 1))
            };
            let convs = DoubleConv::new(path.pp("convs"), cin, config.width(k))?;
            encoder.push(EncoderStage { pyramid, convs });
        }
        let bottleneck_width = config.width(STAGES);
        let bottleneck =
            DoubleConv::new(root.pp("bottleneck"), config.width(STAGES - 1), bottleneck_width)?;
        let mut decoder = Vec::with_capacity(STAGES);
        let mut g_channels = bottleneck_width;
        for j in 0..STAGES {
            let k = STAGES - 1 - j;
            let width = config.width(k);
            let mut path = root.pp(format!("dec.{j}"));
            let gate = if config.attention_gates {
                Some(AttentionGate::new(path.pp("gate"), width, g_channels)?)
            } else {
                None
            };
            let convs = DoubleConv::new(path.pp("convs"), width + g_channels, width)?;
            let side = if config.has_side_heads() {
                Some(Conv2d::new(path.pp("side"), width, 1, 1, 1, 0, true)?)
            } else {
                None
            };
            decoder.push(DecoderStage { gate, convs, side });
            g_channels = width;
        }
        let head = if config.has_side_heads() {
            None
        } else {
            Some(Conv2d::new(root.pp("head"), config.width(0), 1, 1, 1, 0, true)?)
        };
        Ok(Self {
            config,
            store,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &SegmentorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// Attention gates by decoder stage, coarsest first (empty when off).
    pub fn gates(&self) -> Vec<&AttentionGate> {
        self.decoder.iter().filter_map(|d| d.gate.as_ref()).collect()
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<SegmentorOutput> {
        let m = self.config.input_size;
        let (_, c, h, w) = x.dims4()?;
        if (c, h, w) != (1, m, m) {
            return Err(Error::shape(format!(
                "segmentor expects (B, 1, {m}, {m}), got {:?}",
                x.dims()
            )));
        }
        let x = x.to_dtype(self.store.dtype())?;
        let mut skips = Vec::with_capacity(STAGES);
        let mut feats = x.clone();
        for (k, stage) in self.encoder.iter().enumerate() {
            let input = if k == 0 {
                feats.clone()
            } else {
                let pooled = feats.max_pool2d(2)?;
                match &stage.pyramid {
                    Some(p) => {
                        let img = avg_pool(&x, 1 << k)?;
                        Tensor::cat(&[&pooled, &p.forward(&img, mode)?], 1)?
                    }
                    None => pooled,
                }
            };
            feats = stage.convs.forward(&input, mode)?;
            skips.push(feats.clone());
        }
        let mut g = self.bottleneck.forward(&feats.max_pool2d(2)?, mode)?;
        let mut side_logits: Vec<Tensor> = Vec::with_capacity(STAGES);
        for (j, stage) in self.decoder.iter().enumerate() {
            let skip = &skips[STAGES - 1 - j];
            let skip = match &stage.gate {
                Some(gate) => gate.forward(skip, &g)?,
                None => skip.clone(),
            };
            let up = bilinear_upsample2x(&g)?;
            g = stage.convs.forward(&Tensor::cat(&[&skip, &up], 1)?, mode)?;
            if let Some(side) = &stage.side {
                let mut logits = side.forward(&g)?;
                if self.config.progressive_side_outputs {
                    if let Some(prev) = side_logits.last() {
                        logits = (logits + bilinear_upsample2x(prev)?)?;
                    }
                }
                side_logits.push(logits);
            }
        }
        if let Some(head) = &self.head {
            let final_map = sigmoid(&head.forward(&g)?)?;
            let sides = (0..STAGES)
                .map(|i| avg_pool(&final_map, 1 << (STAGES - 1 - i)))
                .collect::<Result<Vec<_>>>()?;
            return Ok(SegmentorOutput { final_map, sides });
        }
        let sides = side_logits.iter().map(sigmoid).collect::<Result<Vec<_>>>()?;
        Ok(SegmentorOutput {
            final_map: sides[STAGES - 1].clone(),
            sides,
        })
    }

    /// Evaluation-mode probability maps for a batch of `m x m` images.
    pub fn predict(&self, images: &[&Array2<f32>]) -> Result<Vec<Array2<f32>>> {
        let x = images_to_tensor(images, self.config.input_size, self.store.device())?;
        let out = self.forward(&x, Mode::Eval)?;
        tensor_to_maps(&out.final_map)
    }

    /// Writes a checkpoint with `kind = segmentor` and the JSON config.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = BTreeMap::from([
            ("kind".to_string(), "segmentor".to_string()),
            ("config".to_string(), serde_json::to_string(&self.config)?),
            ("crate_version".to_string(), crate::VERSION.to_string()),
        ]);
        save_tensors(path, &self.store.snapshot()?, meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = load_tensors(path)?;
        expect_kind(path, &meta, "segmentor")?;
        let config: SegmentorConfig = serde_json::from_str(
            meta.get("config")
                .ok_or_else(|| ckpt_error(path, "missing config"))?,
        )?;
        let dtype = tensors.values().next().map_or(DType::F32, Tensor::dtype);
        let model = Self::with_dtype(config, 0, dtype)?;
        model.store.restore(&tensors)?;
        Ok(model)
    }
}

pub(crate) fn ckpt_error(path: &Path, message: &str) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub(crate) fn expect_kind(path: &Path, meta: &BTreeMap<String, String>, kind: &str) -> Result<()> {
    match meta.get("kind") {
        Some(k) if k == kind => Ok(()),
        other => Err(ckpt_error(path, &format!("expected kind `{kind}`, found {other:?}"))),
    }
}

/// Stacks `m x m` images into a `(B, 1, m, m)` f32 tensor.
pub fn images_to_tensor(images: &[&Array2<f32>], m: usize, device: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(images.len() * m * m);
    for img in images {
        if img.dim() != (m, m) {
            return Err(Error::shape(format!("image {:?}, expected {m}x{m}", img.dim())));
        }
        data.extend(img.iter().copied());
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, m, m), device)?)
}

/// Splits a `(B, 1, m, m)` tensor into per-sample arrays.
pub fn tensor_to_maps(t: &Tensor) -> Result<Vec<Array2<f32>>> {
    let (b, _, h, w) = t.dims4()?;
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    (0..b)
        .map(|i| {
            Array2::from_shape_vec((h, w), flat[i * h * w..(i + 1) * h * w].to_vec())
                .map_err(|e| Error::shape(e.to_string()))
        })
        .collect()
}
