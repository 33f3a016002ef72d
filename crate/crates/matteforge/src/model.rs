//! The dual-path matting network: an encoder-decoder semantic path, a
//! downsampling-free textural compensate path, the feature fusion unit that
//! injects resized shallow semantic features scaled by a learnable weight,
//! and the tanh combination of the two one-channel outputs.

use std::cell::RefCell;
use std::collections::HashSet;
use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::checkpoint::{self, CheckpointEntry, META_PREFIX, OPT_PREFIX};
use crate::engine::ops::{
    add, batch_norm, clamp_unit, concat_channels, conv2d, max_pool2, relu, resize_nearest, scale,
    tanh, BnStats, NormMode,
};
use crate::engine::Tensor;
use crate::error::{MatteError, Result};
use crate::imaging::{AlphaMatte, Image};
use crate::scalar::Scalar;
use crate::trimap::{write_one_hot, Label, Trimap, TrimapPair};

pub const ENCODER_STRIDE: usize = 32;
const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// Which semantic-path activation feeds the feature fusion unit. The stem
/// output (the shallowest learned activation) is the default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfuSource {
    Stem,
    Stage1,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Encoder stem channels (64 at full scale, 8-16 at desk scale).
    pub base_width: usize,
    /// Residual blocks per encoder stage ((3,4,6,3) at full scale).
    pub encoder_blocks: [usize; 4],
    pub tcp_width: usize,
    /// Disabling the textural path yields the baseline model.
    pub tcp_enabled: bool,
    pub ffu_source: FfuSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_width: 8,
            encoder_blocks: [1, 1, 1, 1],
            tcp_width: 8,
            tcp_enabled: true,
            ffu_source: FfuSource::Stem,
        }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.base_width < 1 || self.tcp_width < 1 {
            return Err(MatteError::Config("model widths must be >= 1".into()));
        }
        if self.encoder_blocks.iter().any(|&b| b < 1) {
            return Err(MatteError::Config("encoder stages need >= 1 block".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// parameter registry

pub(crate) struct ParamRegistry<S: Scalar> {
    params: Vec<(String, Tensor<S>)>,
    buffers: Vec<(String, Vec<usize>, Rc<RefCell<Vec<S>>>)>,
    names: HashSet<String>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> ParamRegistry<S> {
    fn new(seed: u64) -> Self {
        ParamRegistry {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn claim(&mut self, name: &str) {
        assert!(self.names.insert(name.to_string()), "duplicate parameter {name}");
    }

    fn param(&mut self, name: &str, shape: Vec<usize>, data: Vec<S>) -> Tensor<S> {
        self.claim(name);
        let t = Tensor::param(shape, data);
        self.params.push((name.to_string(), t.clone()));
        t
    }

    /// He-normal initialized weight with std sqrt(2 / fan_in).
    fn he_param(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Tensor<S> {
        let std = (2.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                S::from_f64_lossy(z * std)
            })
            .collect();
        self.param(name, shape, data)
    }

    fn buffer(&mut self, name: &str, shape: Vec<usize>, init: S) -> Rc<RefCell<Vec<S>>> {
        self.claim(name);
        let n = shape.iter().product();
        let cell = Rc::new(RefCell::new(vec![init; n]));
        self.buffers.push((name.to_string(), shape, cell.clone()));
        cell
    }
}

// ---------------------------------------------------------------------------
// layers

struct Conv<S: Scalar> {
    w: Tensor<S>,
    b: Tensor<S>,
    stride: usize,
    padding: usize,
}

impl<S: Scalar> Conv<S> {
    fn new(reg: &mut ParamRegistry<S>, name: &str, ci: usize, co: usize, k: usize, stride: usize) -> Self {
        let w = reg.he_param(&format!("{name}/w"), vec![co, ci, k, k], ci * k * k);
        let b = reg.param(&format!("{name}/b"), vec![co], vec![S::zero(); co]);
        Conv {
            w,
            b,
            stride,
            padding: (k - 1) / 2,
        }
    }

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        conv2d(x, &self.w, &self.b, self.stride, self.padding)
    }
}

struct Bn<S: Scalar> {
    gamma: Tensor<S>,
    beta: Tensor<S>,
    stats: BnStats<S>,
}

impl<S: Scalar> Bn<S> {
    fn new(reg: &mut ParamRegistry<S>, name: &str, c: usize) -> Self {
        let gamma = reg.param(&format!("{name}/gamma"), vec![c], vec![S::one(); c]);
        let beta = reg.param(&format!("{name}/beta"), vec![c], vec![S::zero(); c]);
        let mean = reg.buffer(&format!("{name}/running_mean"), vec![c], S::zero());
        let var = reg.buffer(&format!("{name}/running_var"), vec![c], S::one());
        Bn {
            gamma,
            beta,
            stats: BnStats { mean, var },
        }
    }

    fn forward(&self, x: &Tensor<S>, mode: NormMode) -> Result<Tensor<S>> {
        batch_norm(
            x,
            &self.gamma,
            &self.beta,
            &self.stats,
            mode,
            S::from_f64_lossy(BN_MOMENTUM),
            S::from_f64_lossy(BN_EPS),
        )
    }
}

struct ConvBnRelu<S: Scalar> {
    conv: Conv<S>,
    bn: Bn<S>,
}

impl<S: Scalar> ConvBnRelu<S> {
    fn new(reg: &mut ParamRegistry<S>, name: &str, ci: usize, co: usize, k: usize, stride: usize) -> Self {
        ConvBnRelu {
            conv: Conv::new(reg, &format!("{name}/conv"), ci, co, k, stride),
            bn: Bn::new(reg, &format!("{name}/bn"), co),
        }
    }

    fn forward(&self, x: &Tensor<S>, mode: NormMode) -> Result<Tensor<S>> {
        Ok(relu(&self.bn.forward(&self.conv.forward(x)?, mode)?))
    }
}

struct ResidualBlock<S: Scalar> {
    conv1: Conv<S>,
    bn1: Bn<S>,
    conv2: Conv<S>,
    bn2: Bn<S>,
    proj: Option<(Conv<S>, Bn<S>)>,
}

impl<S: Scalar> ResidualBlock<S> {
    fn new(reg: &mut ParamRegistry<S>, name: &str, ci: usize, co: usize, stride: usize) -> Self {
        let proj = if ci != co || stride != 1 {
            Some((
                Conv::new(reg, &format!("{name}/down/conv"), ci, co, 1, stride),
                Bn::new(reg, &format!("{name}/down/bn"), co),
            ))
        } else {
            None
        };
        ResidualBlock {
            conv1: Conv::new(reg, &format!("{name}/conv1"), ci, co, 3, stride),
            bn1: Bn::new(reg, &format!("{name}/bn1"), co),
            conv2: Conv::new(reg, &format!("{name}/conv2"), co, co, 3, 1),
            bn2: Bn::new(reg, &format!("{name}/bn2"), co),
            proj,
        }
    }

    fn forward(&self, x: &Tensor<S>, mode: NormMode) -> Result<Tensor<S>> {
        let y = relu(&self.bn1.forward(&self.conv1.forward(x)?, mode)?);
        let y = self.bn2.forward(&self.conv2.forward(&y)?, mode)?;
        let skip = match &self.proj {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        Ok(relu(&add(&y, &skip)?))
    }
}

// ---------------------------------------------------------------------------
// semantic path

struct SemanticPath<S: Scalar> {
    stem: ConvBnRelu<S>,
    stages: Vec<Vec<ResidualBlock<S>>>,
    /// Two adaptation convs per skip connection.
    skips: Vec<[ConvBnRelu<S>; 2]>,
    dec_pre: Vec<ConvBnRelu<S>>,
    dec_post: Vec<ConvBnRelu<S>>,
    final_pre: ConvBnRelu<S>,
    out_conv: Conv<S>,
}

struct SpOutputs<S: Scalar> {
    logits: Tensor<S>,
    stem: Tensor<S>,
    stage1: Tensor<S>,
}

impl<S: Scalar> SemanticPath<S> {
    fn new(reg: &mut ParamRegistry<S>, cfg: &ModelConfig) -> Self {
        let w = cfg.base_width;
        let widths = [w, 2 * w, 4 * w, 8 * w];
        let stem = ConvBnRelu::new(reg, "sp/stem", 6, w, 3, 2);
        let mut stages = Vec::new();
        let mut ci = w;
        for (i, (&co, &blocks)) in widths.iter().zip(&cfg.encoder_blocks).enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let mut stage = Vec::new();
            for j in 0..blocks {
                let s = if j == 0 { stride } else { 1 };
                let cin = if j == 0 { ci } else { co };
                stage.push(ResidualBlock::new(
                    reg,
                    &format!("sp/stage{}/block{j}", i + 1),
                    cin,
                    co,
                    s,
                ));
            }
            stages.push(stage);
            ci = co;
        }
        // skip sources: stem (w, /2), stage1 (w, /4), stage2 (2w, /8),
        // stage3 (4w, /16)
        let skip_widths = [w, w, 2 * w, 4 * w];
        let skips = skip_widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                [
                    ConvBnRelu::new(reg, &format!("sp/skip{i}/conv0"), c, c, 3, 1),
                    ConvBnRelu::new(reg, &format!("sp/skip{i}/conv1"), c, c, 3, 1),
                ]
            })
            .collect();
        // decoder merge steps, deepest first
        let dec_in = [8 * w, 4 * w, 2 * w, w];
        let dec_target = [4 * w, 2 * w, w, w];
        let skip_ch = [4 * w, 2 * w, w, w];
        let mut dec_pre = Vec::new();
        let mut dec_post = Vec::new();
        for i in 0..4 {
            dec_pre.push(ConvBnRelu::new(reg, &format!("sp/dec{i}/pre"), dec_in[i], dec_target[i], 3, 1));
            dec_post.push(ConvBnRelu::new(
                reg,
                &format!("sp/dec{i}/post"),
                dec_target[i] + skip_ch[i],
                dec_target[i],
                3,
                1,
            ));
        }
        let final_pre = ConvBnRelu::new(reg, "sp/dec4/pre", w, w, 3, 1);
        let out_conv = Conv::new(reg, "sp/out", w, 1, 3, 1);
        SemanticPath {
            stem,
            stages,
            skips,
            dec_pre,
            dec_post,
            final_pre,
            out_conv,
        }
    }

    fn forward(&self, x: &Tensor<S>, mode: NormMode) -> Result<SpOutputs<S>> {
        let e0 = self.stem.forward(x, mode)?;
        let mut feat = max_pool2(&e0)?;
        let mut encoder_outs = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                feat = block.forward(&feat, mode)?;
            }
            encoder_outs.push(feat.clone());
        }
        let stage1 = encoder_outs[0].clone();

        let adapt = |i: usize, t: &Tensor<S>| -> Result<Tensor<S>> {
            let a = self.skips[i][0].forward(t, mode)?;
            self.skips[i][1].forward(&a, mode)
        };
        // deepest first: merge with stage3, stage2, stage1, stem
        let skip_feats = [
            adapt(3, &encoder_outs[2])?,
            adapt(2, &encoder_outs[1])?,
            adapt(1, &encoder_outs[0])?,
            adapt(0, &e0)?,
        ];
        let mut d = encoder_outs[3].clone();
        for i in 0..4 {
            let [_, _, h, w] = [d.shape()[0], d.shape()[1], d.shape()[2], d.shape()[3]];
            let up = resize_nearest(&d, h * 2, w * 2)?;
            let pre = self.dec_pre[i].forward(&up, mode)?;
            let merged = concat_channels(&[&pre, &skip_feats[i]])?;
            d = self.dec_post[i].forward(&merged, mode)?;
        }
        let [_, _, h, w] = [d.shape()[0], d.shape()[1], d.shape()[2], d.shape()[3]];
        let up = resize_nearest(&d, h * 2, w * 2)?;
        let top = self.final_pre.forward(&up, mode)?;
        let logits = self.out_conv.forward(&top)?;
        Ok(SpOutputs {
            logits,
            stem: e0,
            stage1,
        })
    }
}

// ---------------------------------------------------------------------------
// textural compensate path

struct TcpPath<S: Scalar> {
    extract: ConvBnRelu<S>,
    blocks: [ResidualBlock<S>; 2],
    ffu_proj: ConvBnRelu<S>,
    w_c: Tensor<S>,
    refine: ConvBnRelu<S>,
    out_conv: Conv<S>,
}

impl<S: Scalar> TcpPath<S> {
    fn new(reg: &mut ParamRegistry<S>, cfg: &ModelConfig) -> Self {
        let t = cfg.tcp_width;
        let shallow_ch = match cfg.ffu_source {
            FfuSource::Stem => cfg.base_width,
            FfuSource::Stage1 => cfg.base_width,
        };
        TcpPath {
            extract: ConvBnRelu::new(reg, "tcp/extract/conv0", 6, t, 3, 1),
            blocks: [
                ResidualBlock::new(reg, "tcp/extract/block0", t, t, 1),
                ResidualBlock::new(reg, "tcp/extract/block1", t, t, 1),
            ],
            ffu_proj: ConvBnRelu::new(reg, "tcp/ffu/proj", shallow_ch, t, 1, 1),
            // starts at 0 so training begins from the pure textural behavior
            w_c: reg.param("tcp/ffu/w_c", vec![1], vec![S::zero()]),
            refine: ConvBnRelu::new(reg, "tcp/refine/conv0", t, t, 3, 1),
            out_conv: Conv::new(reg, "tcp/out", t, 1, 3, 1),
        }
    }

    fn forward(
        &self,
        x: &Tensor<S>,
        shallow: &Tensor<S>,
        mode: NormMode,
        sizes: &mut Vec<(usize, usize)>,
    ) -> Result<Tensor<S>> {
        let record = |t: &Tensor<S>, sizes: &mut Vec<(usize, usize)>| {
            sizes.push((t.shape()[2], t.shape()[3]));
        };
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let mut feat = self.extract.forward(x, mode)?;
        record(&feat, sizes);
        for block in &self.blocks {
            feat = block.forward(&feat, mode)?;
            record(&feat, sizes);
        }
        let resized = resize_nearest(shallow, h, w)?;
        let proj = self.ffu_proj.forward(&resized, mode)?;
        let gated = scale(&proj, &self.w_c)?;
        let fused = add(&feat, &gated)?;
        record(&fused, sizes);
        let refined = self.refine.forward(&fused, mode)?;
        record(&refined, sizes);
        let logits = self.out_conv.forward(&refined)?;
        record(&logits, sizes);
        Ok(logits)
    }
}

// ---------------------------------------------------------------------------
// full model

pub struct ForwardTrace<S: Scalar> {
    pub sp_logits: Tensor<S>,
    pub tcp_logits: Option<Tensor<S>>,
    /// The semantic-path activation exposed to the fusion unit.
    pub shallow: Tensor<S>,
    pub alpha_pred: Tensor<S>,
    /// Spatial size of every recorded textural-path activation.
    pub tcp_activation_sizes: Vec<(usize, usize)>,
}

pub struct MattingModel<S: Scalar> {
    pub config: ModelConfig,
    registry: ParamRegistry<S>,
    sp: SemanticPath<S>,
    tcp: Option<TcpPath<S>>,
}

impl<S: Scalar> MattingModel<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut reg = ParamRegistry::new(seed);
        let sp = SemanticPath::new(&mut reg, &config);
        let tcp = if config.tcp_enabled {
            Some(TcpPath::new(&mut reg, &config))
        } else {
            None
        };
        Ok(MattingModel {
            config,
            registry: reg,
            sp,
            tcp,
        })
    }

    pub fn trainable_params(&self) -> &[(String, Tensor<S>)] {
        &self.registry.params
    }

    pub fn zero_grads(&self) {
        for (_, p) in &self.registry.params {
            p.zero_grad();
        }
    }

    pub fn params_finite(&self) -> bool {
        self.registry.params.iter().all(|(_, p)| p.all_finite())
    }

    /// Learnable weight of the feature fusion unit, when the textural path
    /// exists.
    pub fn ffu_weight(&self) -> Option<&Tensor<S>> {
        self.tcp.as_ref().map(|t| &t.w_c)
    }

    /// Forward pass on batched 6-channel inputs (RGB + one-hot trimap); the
    /// spatial size must be divisible by the encoder stride.
    pub fn forward(&self, x_sp: &Tensor<S>, x_tcp: &Tensor<S>, mode: NormMode) -> Result<ForwardTrace<S>> {
        let (h, w) = (x_sp.shape()[2], x_sp.shape()[3]);
        if h % ENCODER_STRIDE != 0 || w % ENCODER_STRIDE != 0 {
            return Err(MatteError::InvalidArgument(format!(
                "model input {h}x{w} not divisible by stride {ENCODER_STRIDE}"
            )));
        }
        let sp_out = self.sp.forward(x_sp, mode)?;
        let shallow = match self.config.ffu_source {
            FfuSource::Stem => sp_out.stem.clone(),
            FfuSource::Stage1 => sp_out.stage1.clone(),
        };
        let mut tcp_sizes = Vec::new();
        let tcp_logits = match &self.tcp {
            Some(tcp) => Some(tcp.forward(x_tcp, &shallow, mode, &mut tcp_sizes)?),
            None => None,
        };
        let combined = match &tcp_logits {
            Some(t) => add(&sp_out.logits, t)?,
            None => sp_out.logits.clone(),
        };
        let alpha_pred = clamp_unit(&tanh(&combined));
        Ok(ForwardTrace {
            sp_logits: sp_out.logits,
            tcp_logits,
            shallow,
            alpha_pred,
            tcp_activation_sizes: tcp_sizes,
        })
    }

    /// Convenience single-sample forward from an image and trimap pair.
    pub fn forward_single(&self, image: &Image, pair: &TrimapPair, mode: NormMode) -> Result<ForwardTrace<S>> {
        if image.height != pair.sp.height
            || image.width != pair.sp.width
            || pair.sp.height != pair.tcp.height
            || pair.sp.width != pair.tcp.width
        {
            return Err(MatteError::shape(
                "forward_single",
                &[image.height, image.width],
                &[pair.sp.height, pair.sp.width, pair.tcp.height, pair.tcp.width],
            ));
        }
        let x_sp = build_input(image, &pair.sp);
        let x_tcp = build_input(image, &pair.tcp);
        self.forward(&x_sp, &x_tcp, mode)
    }

    // -- checkpointing ------------------------------------------------------

    fn meta_entries(&self) -> Vec<CheckpointEntry> {
        let c = &self.config;
        vec![
            CheckpointEntry::new(format!("{META_PREFIX}base_width"), vec![1], vec![c.base_width as f32]),
            CheckpointEntry::new(
                format!("{META_PREFIX}encoder_blocks"),
                vec![4],
                c.encoder_blocks.iter().map(|&b| b as f32).collect(),
            ),
            CheckpointEntry::new(format!("{META_PREFIX}tcp_width"), vec![1], vec![c.tcp_width as f32]),
            CheckpointEntry::new(
                format!("{META_PREFIX}tcp_enabled"),
                vec![1],
                vec![if c.tcp_enabled { 1.0 } else { 0.0 }],
            ),
            CheckpointEntry::new(
                format!("{META_PREFIX}ffu_source"),
                vec![1],
                vec![match c.ffu_source {
                    FfuSource::Stem => 0.0,
                    FfuSource::Stage1 => 1.0,
                }],
            ),
        ]
    }

    pub fn save_checkpoint(&self, path: &Path, extra: &[CheckpointEntry]) -> Result<()> {
        let mut entries = self.meta_entries();
        for (name, t) in &self.registry.params {
            entries.push(CheckpointEntry::new(
                name.clone(),
                t.shape().iter().map(|&d| d as u64).collect(),
                t.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
            ));
        }
        for (name, shape, cell) in &self.registry.buffers {
            entries.push(CheckpointEntry::new(
                name.clone(),
                shape.iter().map(|&d| d as u64).collect(),
                cell.borrow().iter().map(|v| v.to_f64_lossy() as f32).collect(),
            ));
        }
        entries.extend_from_slice(extra);
        checkpoint::save(path, &entries)
    }

    /// Rebuilds a model from a checkpoint, returning the optimizer-state
    /// entries alongside it.
    pub fn load_checkpoint(path: &Path) -> Result<(Self, Vec<CheckpointEntry>)> {
        let entries = checkpoint::load(path)?;
        let get_meta = |name: &str| -> Result<Vec<f32>> {
            entries
                .iter()
                .find(|e| e.name == format!("{META_PREFIX}{name}"))
                .map(|e| e.data.clone())
                .ok_or_else(|| MatteError::Data(format!("checkpoint missing {META_PREFIX}{name}")))
        };
        let blocks = get_meta("encoder_blocks")?;
        let config = ModelConfig {
            base_width: get_meta("base_width")?[0] as usize,
            encoder_blocks: [
                blocks[0] as usize,
                blocks[1] as usize,
                blocks[2] as usize,
                blocks[3] as usize,
            ],
            tcp_width: get_meta("tcp_width")?[0] as usize,
            tcp_enabled: get_meta("tcp_enabled")?[0] != 0.0,
            ffu_source: if get_meta("ffu_source")?[0] == 0.0 {
                FfuSource::Stem
            } else {
                FfuSource::Stage1
            },
        };
        let model = MattingModel::new(config, 0)?;
        let mut opt_entries = Vec::new();
        let mut seen = HashSet::new();
        for entry in &entries {
            if entry.name.starts_with(OPT_PREFIX) {
                opt_entries.push(entry.clone());
                continue;
            }
            if entry.name.starts_with(META_PREFIX) {
                continue;
            }
            seen.insert(entry.name.clone());
            if let Some((_, t)) = model.registry.params.iter().find(|(n, _)| n == &entry.name) {
                let dims: Vec<usize> = entry.dims.iter().map(|&d| d as usize).collect();
                if t.shape() != dims.as_slice() {
                    return Err(MatteError::shape("checkpoint param", &dims, t.shape()));
                }
                let mut data = t.data_mut();
                for (dst, &src) in data.iter_mut().zip(&entry.data) {
                    *dst = S::from_f64_lossy(src as f64);
                }
            } else if let Some((_, _, cell)) =
                model.registry.buffers.iter().find(|(n, _, _)| n == &entry.name)
            {
                let mut data = cell.borrow_mut();
                for (dst, &src) in data.iter_mut().zip(&entry.data) {
                    *dst = S::from_f64_lossy(src as f64);
                }
            } else {
                return Err(MatteError::Data(format!(
                    "checkpoint entry {} does not match any model parameter",
                    entry.name
                )));
            }
        }
        for (name, _) in &model.registry.params {
            if !seen.contains(name) {
                return Err(MatteError::Data(format!("checkpoint missing parameter {name}")));
            }
        }
        Ok((model, opt_entries))
    }
}

// ---------------------------------------------------------------------------
// input/output plumbing

/// Writes the 6 planes (RGB then one-hot trimap) for one sample into `out`.
pub fn write_input_planes<S: Scalar>(image: &Image, trimap: &Trimap, out: &mut [S]) {
    let hw = image.height * image.width;
    assert_eq!(out.len(), 6 * hw);
    for y in 0..image.height {
        for x in 0..image.width {
            for c in 0..3 {
                out[c * hw + y * image.width + x] = S::from_f64_lossy(image.get(y, x, c) as f64);
            }
        }
    }
    write_one_hot(trimap, &mut out[3 * hw..]);
}

/// Batch-1 network input tensor for an image and its trimap.
pub fn build_input<S: Scalar>(image: &Image, trimap: &Trimap) -> Tensor<S> {
    let hw = image.height * image.width;
    let mut data = vec![S::zero(); 6 * hw];
    write_input_planes(image, trimap, &mut data);
    Tensor::constant(vec![1, 6, image.height, image.width], data)
}

#[derive(Clone, Copy, Debug)]
pub struct PadInfo {
    pub orig_h: usize,
    pub orig_w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

pub fn padded_size(h: usize, w: usize) -> (usize, usize) {
    let round = |v: usize| v.div_ceil(ENCODER_STRIDE) * ENCODER_STRIDE;
    (round(h), round(w))
}

/// Reflect-pads right/bottom to the next multiple of the encoder stride.
pub fn pad_image_to_stride(img: &Image) -> (Image, PadInfo) {
    let (ph, pw) = padded_size(img.height, img.width);
    let info = PadInfo {
        orig_h: img.height,
        orig_w: img.width,
        padded_h: ph,
        padded_w: pw,
    };
    (crate::imaging::reflect_pad_image(img, ph, pw), info)
}

pub fn pad_trimap_to_stride(t: &Trimap) -> Trimap {
    let (ph, pw) = padded_size(t.height, t.width);
    if ph == t.height && pw == t.width {
        return t.clone();
    }
    Trimap::from_fn(ph, pw, |y, x| {
        t.get(
            crate::imaging::mirror(y as isize, t.height),
            crate::imaging::mirror(x as isize, t.width),
        )
    })
}

/// Crops a padded-resolution matte back to the original size.
pub fn crop_matte(m: &AlphaMatte, info: PadInfo) -> AlphaMatte {
    AlphaMatte::from_fn(info.orig_h, info.orig_w, |y, x| m.get(y, x))
}

/// Extracts sample `n` of an N x 1 x H x W prediction as an alpha matte.
pub fn matte_from_prediction<S: Scalar>(pred: &Tensor<S>, n: usize) -> AlphaMatte {
    let (h, w) = (pred.shape()[2], pred.shape()[3]);
    let data = pred.data();
    AlphaMatte::from_fn(h, w, |y, x| data[(n * h + y) * w + x].to_f64_lossy() as f32)
}

/// Overrides the prediction with the trimap's absolute regions: foreground
/// pixels become 1, background pixels 0, unknown pixels keep the prediction.
pub fn predict_matte(alpha_pred: &AlphaMatte, trimap: &Trimap) -> AlphaMatte {
    AlphaMatte::from_fn(alpha_pred.height, alpha_pred.width, |y, x| match trimap.get(y, x) {
        Label::Foreground => 1.0,
        Label::Background => 0.0,
        Label::Unknown => alpha_pred.get(y, x),
    })
}
