//! Residual encoder, attention block and classifier head, in the baseline
//! bottleneck form and the scatter-augmented form.

mod attention;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

#[allow(unused_imports)] // float methods when std is not linked
use num_traits::Float;
use rand::Rng;

pub use attention::{attention_block, positional_encoding, AttentionWeights};

use crate::scatter::ScatterLayer;
use crate::tensor::{Graph, Mode, RunningStats, Tensor, Var};
use crate::{engine_rng, Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    Scatter,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Scatter => "scatter",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "scatter" => Ok(Variant::Scatter),
            other => Err(Error::Config(format!("unknown variant {other:?} (baseline|scatter)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub out_channels: usize,
    /// Bottleneck widths `(w1, w2)`.
    pub widths: (usize, usize),
    pub blocks: usize,
    /// Stride of the first block.
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_leads: usize,
    pub n_classes: usize,
    pub window: usize,
    pub stem_channels: usize,
    pub stages: Vec<StageConfig>,
    pub head_channels: usize,
    pub attention_heads: usize,
    pub positional_encoding: bool,
    pub pool_len: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub aux_features: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// The published architecture.
    pub fn full() -> Self {
        let stage = |out_channels, widths, blocks, stride| StageConfig {
            out_channels,
            widths,
            blocks,
            stride,
        };
        ModelConfig {
            n_leads: 12,
            n_classes: 24,
            window: 5120,
            stem_channels: 24,
            stages: vec![
                stage(48, (3, 6), 3, 1),
                stage(96, (6, 12), 4, 2),
                stage(192, (12, 24), 6, 2),
                stage(384, (24, 48), 3, 2),
            ],
            head_channels: 96,
            attention_heads: 12,
            positional_encoding: true,
            pool_len: 8,
            hidden: 256,
            dropout: 0.25,
            aux_features: 2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Desk-scale preset: every channel width halved (rounding up) and a
    /// 1024-sample window.
    pub fn tiny() -> Self {
        let full = Self::full();
        let half = |c: usize| c.div_ceil(2);
        ModelConfig {
            window: 1024,
            stem_channels: half(full.stem_channels),
            stages: full
                .stages
                .iter()
                .map(|s| StageConfig {
                    out_channels: half(s.out_channels),
                    widths: (half(s.widths.0), half(s.widths.1)),
                    ..s.clone()
                })
                .collect(),
            head_channels: half(full.head_channels),
            hidden: half(full.hidden),
            ..full
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown model preset {other:?} (full|tiny)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_leads", self.n_leads),
            ("n_classes", self.n_classes),
            ("window", self.window),
            ("stem_channels", self.stem_channels),
            ("head_channels", self.head_channels),
            ("attention_heads", self.attention_heads),
            ("pool_len", self.pool_len),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("at least one residual stage is required".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.out_channels == 0 || s.widths.0 == 0 || s.widths.1 == 0 || !(1..=2).contains(&s.stride) {
                return Err(Error::Config(format!("stage {} needs blocks, widths > 0 and stride 1 or 2", i + 1)));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_eps must be positive and bn_momentum in [0, 1]".into()));
        }
        if !self.head_channels.is_multiple_of(self.attention_heads) {
            return Err(Error::Build(format!(
                "attention over {} channels cannot use {} heads",
                self.head_channels, self.attention_heads
            )));
        }
        if self.encoder_len() < self.pool_len {
            return Err(Error::Config(format!(
                "window {} leaves {} steps before pooling to {}",
                self.window,
                self.encoder_len(),
                self.pool_len
            )));
        }
        Ok(())
    }

    /// Time steps entering the attention block.
    pub fn encoder_len(&self) -> usize {
        // stem conv, maxpool, one halving per stride-2 stage, conv1d.2
        let halvings = 3 + self.stages.iter().filter(|s| s.stride == 2).count();
        (0..halvings).fold(self.window, |l, _| l.div_ceil(2))
    }

    pub fn fc_inputs(&self) -> usize {
        self.head_channels * self.pool_len + self.aux_features
    }
}

/// One row of the architecture table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Option<usize>,
    pub stride: usize,
    pub repeat: usize,
    pub widths: Option<(usize, usize)>,
}

pub fn layer_specs(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let row = |name: &str, i, o, kernel, stride, repeat, widths| LayerSpec {
        name: name.to_string(),
        in_channels: i,
        out_channels: o,
        kernel,
        stride,
        repeat,
        widths,
    };
    let mut rows = vec![
        row("conv1d.1", cfg.n_leads, cfg.stem_channels, Some(7), 2, 1, None),
        row("maxpool.1", cfg.stem_channels, cfg.stem_channels, Some(3), 2, 1, None),
    ];
    let mut cin = cfg.stem_channels;
    for (i, s) in cfg.stages.iter().enumerate() {
        rows.push(row(&format!("residual.{}.x", i + 1), cin, s.out_channels, Some(3), s.stride, s.blocks, Some(s.widths)));
        cin = s.out_channels;
    }
    rows.extend([
        row("conv1d.2", cin, cfg.head_channels, Some(1), 2, 1, None),
        row("attention.1", cfg.head_channels, cfg.head_channels, None, 1, 1, None),
        row("avgpool", cfg.head_channels, cfg.head_channels, None, 1, 1, None),
        row("fc.1", cfg.fc_inputs(), cfg.hidden, None, 1, 1, None),
        row("fc.2", cfg.hidden, cfg.n_classes, None, 1, 1, None),
    ]);
    rows
}

/// A trainable tensor and the layer it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub layer: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
struct ConvRef {
    w: usize,
    b: usize,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct BnRef {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Block {
    Bottleneck {
        conv1: ConvRef,
        bn1: BnRef,
        conv2: ConvRef,
        bn2: BnRef,
        conv3: ConvRef,
        bn3: BnRef,
        projection: Option<(ConvRef, BnRef)>,
    },
    Scatter {
        conv1: ConvRef,
        bn1: BnRef,
        scatter_bn: BnRef,
        conv3: ConvRef,
        bn3: BnRef,
        skip_bn: BnRef,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    variant: Variant,
    params: Vec<Param<T>>,
    stats: Vec<RunningStats<T>>,
    stat_names: Vec<String>,
    stem: (ConvRef, BnRef),
    blocks: Vec<(String, Block)>,
    head: (ConvRef, BnRef),
    attention: [usize; 8],
    fc1: (usize, usize),
    fc2: (usize, usize),
    scatter: ScatterLayer,
}

struct Builder<T> {
    params: Vec<Param<T>>,
    stats: Vec<RunningStats<T>>,
    stat_names: Vec<String>,
    rng: crate::EngineRng,
    momentum: T,
}

impl<T: Real> Builder<T> {
    fn push(&mut self, layer: &str, name: &str, value: Tensor<T>) -> usize {
        self.params.push(Param {
            name: format!("{layer}.{name}"),
            layer: layer.to_string(),
            value,
        });
        self.params.len() - 1
    }

    fn kaiming(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(shape.to_vec(), |_| T::cast(rng.random_range(-bound..bound)))
    }

    fn conv(&mut self, layer: &str, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvRef {
        let w = self.kaiming(&[cout, cin, k], cin * k);
        let w = self.push(layer, &format!("{name}.weight"), w);
        let b = self.push(layer, &format!("{name}.bias"), Tensor::zeros([cout]));
        ConvRef {
            w,
            b,
            stride,
            padding: k / 2,
        }
    }

    fn bn(&mut self, layer: &str, name: &str, c: usize) -> BnRef {
        let gamma = self.push(layer, &format!("{name}.gamma"), Tensor::full([c], T::one()));
        let beta = self.push(layer, &format!("{name}.beta"), Tensor::zeros([c]));
        self.stats.push(RunningStats::new(c, self.momentum));
        self.stat_names.push(format!("{layer}.{name}"));
        BnRef {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }

    fn linear(&mut self, layer: &str, name: &str, f: usize, g: usize) -> (usize, usize) {
        let w = self.kaiming(&[f, g], f);
        let w = self.push(layer, &format!("{name}.weight"), w);
        let b = self.push(layer, &format!("{name}.bias"), Tensor::zeros([g]));
        (w, b)
    }
}

/// Builds a freshly initialized network. Conv and linear weights are
/// Kaiming-uniform over their fan-in; biases and bn shifts start at zero and
/// bn scales at one.
pub fn build_model<T: Real>(config: &ModelConfig, variant: Variant, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    let mut b = Builder {
        params: Vec::new(),
        stats: Vec::new(),
        stat_names: Vec::new(),
        rng: engine_rng(seed),
        momentum: T::cast(config.bn_momentum),
    };
    let stem = (
        b.conv("conv1d.1", "conv", config.n_leads, config.stem_channels, 7, 2),
        b.bn("conv1d.1", "bn", config.stem_channels),
    );
    let mut blocks = Vec::new();
    let mut cin = config.stem_channels;
    for (si, stage) in config.stages.iter().enumerate() {
        let (w1, w2) = stage.widths;
        let out = stage.out_channels;
        for bi in 0..stage.blocks {
            let layer = format!("residual.{}.{}", si + 1, bi + 1);
            let stride = if bi == 0 { stage.stride } else { 1 };
            let block = if variant == Variant::Scatter && stride == 2 {
                if 2 * cin != out || 2 * w1 != w2 {
                    return Err(Error::Build(format!(
                        "{layer}: a scatter block doubles channels, but maps {cin} -> {out} with widths ({w1}, {w2})"
                    )));
                }
                Block::Scatter {
                    conv1: b.conv(&layer, "conv1", cin, w1, 1, 1),
                    bn1: b.bn(&layer, "bn1", w1),
                    scatter_bn: b.bn(&layer, "scatter_bn", w2),
                    conv3: b.conv(&layer, "conv3", w2, out, 1, 1),
                    bn3: b.bn(&layer, "bn3", out),
                    skip_bn: b.bn(&layer, "skip_bn", out),
                }
            } else {
                Block::Bottleneck {
                    conv1: b.conv(&layer, "conv1", cin, w1, 1, 1),
                    bn1: b.bn(&layer, "bn1", w1),
                    conv2: b.conv(&layer, "conv2", w1, w2, 3, stride),
                    bn2: b.bn(&layer, "bn2", w2),
                    conv3: b.conv(&layer, "conv3", w2, out, 1, 1),
                    bn3: b.bn(&layer, "bn3", out),
                    projection: (stride != 1 || cin != out).then(|| {
                        (b.conv(&layer, "proj", cin, out, 1, stride), b.bn(&layer, "proj_bn", out))
                    }),
                }
            };
            blocks.push((layer, block));
            cin = out;
        }
    }
    let head = (
        b.conv("conv1d.2", "conv", cin, config.head_channels, 1, 2),
        b.bn("conv1d.2", "bn", config.head_channels),
    );
    let c = config.head_channels;
    let mut attention = [0; 8];
    for (i, name) in ["query", "key", "value", "output"].iter().enumerate() {
        let (w, bias) = b.linear("attention.1", name, c, c);
        attention[2 * i] = w;
        attention[2 * i + 1] = bias;
    }
    let fc1 = b.linear("fc.1", "linear", config.fc_inputs(), config.hidden);
    let fc2 = b.linear("fc.2", "linear", config.hidden, config.n_classes);
    Ok(Model {
        config: config.clone(),
        variant,
        params: b.params,
        stats: b.stats,
        stat_names: b.stat_names,
        stem,
        blocks,
        head,
        attention,
        fc1,
        fc2,
        scatter: ScatterLayer::default(),
    })
}

fn conv<T: Real>(g: &mut Graph<T>, p: &[Var], c: &ConvRef, x: Var) -> Result<Var> {
    g.conv1d(x, p[c.w], Some(p[c.b]), c.stride, c.padding)
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.stats
    }

    /// Names of the batchnorm layers owning each entry of [`Self::running_stats`].
    pub fn stat_names(&self) -> &[String] {
        &self.stat_names
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Parameter count per layer, in forward order. Residual blocks are
    /// listed individually (`residual.2.1`, ...).
    pub fn layer_table(&self) -> Vec<(String, usize)> {
        let mut rows: Vec<(String, usize)> = Vec::new();
        for p in &self.params {
            match rows.last_mut() {
                Some((layer, n)) if *layer == p.layer => *n += p.value.numel(),
                _ => rows.push((p.layer.clone(), p.value.numel())),
            }
        }
        rows
    }

    /// Residual block names in forward order.
    pub fn block_names(&self) -> Vec<&str> {
        self.blocks.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Copies the model into another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            variant: self.variant,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    layer: p.layer.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    mean: s.mean.iter().map(|v| U::cast(v.as_f64())).collect(),
                    var: s.var.iter().map(|v| U::cast(v.as_f64())).collect(),
                    momentum: U::cast(s.momentum.as_f64()),
                })
                .collect(),
            stat_names: self.stat_names.clone(),
            stem: self.stem.clone(),
            blocks: self.blocks.clone(),
            head: self.head.clone(),
            attention: self.attention,
            fc1: self.fc1,
            fc2: self.fc2,
            scatter: self.scatter.clone(),
        }
    }

    /// Puts every parameter on the tape: as leaves when `trainable`,
    /// otherwise as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { g.leaf(p.value.clone()) } else { g.constant(p.value.clone()) })
            .collect()
    }

    fn check_bound(&self, params: &[Var]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} bound parameters for a model with {}",
                params.len(),
                self.params.len()
            )));
        }
        Ok(())
    }

    /// Logits `[B, n_classes]` for `x: [B, n_leads, window]` and
    /// `aux: [B, aux_features]`. Train mode uses batch statistics, updates the
    /// running statistics and applies dropout from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        params: &[Var],
        x: Var,
        aux: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let mut stats = core::mem::take(&mut self.stats);
        let out = self.run(g, params, &mut stats, x, aux, mode, rng);
        self.stats = stats;
        out
    }

    /// Eval-mode logits without touching the model.
    pub fn infer(&self, x: &Tensor<T>, aux: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let (xv, av) = (g.constant(x.clone()), g.constant(aux.clone()));
        let mut stats = self.stats.clone();
        let mut rng = engine_rng(0);
        let y = self.run(&mut g, &params, &mut stats, xv, av, Mode::Eval, &mut rng)?;
        Ok(g.value(y).clone())
    }

    /// Runs residual block `index` alone.
    pub fn forward_block(&mut self, g: &mut Graph<T>, params: &[Var], index: usize, x: Var, mode: Mode) -> Result<Var> {
        self.check_bound(params)?;
        let block = self
            .blocks
            .get(index)
            .ok_or_else(|| Error::Contract(format!("no residual block {index}")))?
            .1
            .clone();
        let mut stats = core::mem::take(&mut self.stats);
        let out = self.run_block(g, params, &mut stats, &block, x, mode);
        self.stats = stats;
        out
    }

    fn bn(&self, g: &mut Graph<T>, p: &[Var], stats: &mut [RunningStats<T>], n: &BnRef, x: Var, mode: Mode) -> Result<Var> {
        g.batchnorm1d(x, p[n.gamma], p[n.beta], &mut stats[n.stats], mode, T::cast(self.config.bn_eps))
    }

    fn run_block(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        stats: &mut [RunningStats<T>],
        block: &Block,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        match block {
            Block::Bottleneck {
                conv1,
                bn1,
                conv2,
                bn2,
                conv3,
                bn3,
                projection,
            } => {
                let h = conv(g, p, conv1, x)?;
                let h = self.bn(g, p, stats, bn1, h, mode)?;
                let h = g.swish(h);
                let h = conv(g, p, conv2, h)?;
                let h = self.bn(g, p, stats, bn2, h, mode)?;
                let h = g.swish(h);
                let h = conv(g, p, conv3, h)?;
                let h = self.bn(g, p, stats, bn3, h, mode)?;
                let skip = match projection {
                    Some((c, n)) => {
                        let s = conv(g, p, c, x)?;
                        self.bn(g, p, stats, n, s, mode)?
                    }
                    None => x,
                };
                let y = g.add(h, skip)?;
                Ok(g.swish(y))
            }
            Block::Scatter {
                conv1,
                bn1,
                scatter_bn,
                conv3,
                bn3,
                skip_bn,
            } => {
                let h = conv(g, p, conv1, x)?;
                let h = self.bn(g, p, stats, bn1, h, mode)?;
                let h = self.scatter.forward(g, h)?;
                let h = self.bn(g, p, stats, scatter_bn, h, mode)?;
                let h = conv(g, p, conv3, h)?;
                let h = self.bn(g, p, stats, bn3, h, mode)?;
                let h = g.swish(h);
                let s = self.scatter.forward(g, x)?;
                let s = self.bn(g, p, stats, skip_bn, s, mode)?;
                g.add(h, s)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        stats: &mut [RunningStats<T>],
        x: Var,
        aux: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_bound(p)?;
        let cfg = &self.config;
        let (batch, leads, len) = g.value(x).dims3("model")?;
        if leads != cfg.n_leads || len != cfg.window {
            return Err(Error::shape(
                "model",
                format!("expected [B, {}, {}], got {:?}", cfg.n_leads, cfg.window, g.shape(x)),
            ));
        }
        if g.shape(aux) != [batch, cfg.aux_features] {
            return Err(Error::shape(
                "model",
                format!("aux must be [{batch}, {}], got {:?}", cfg.aux_features, g.shape(aux)),
            ));
        }
        let h = conv(g, p, &self.stem.0, x)?;
        let h = self.bn(g, p, stats, &self.stem.1, h, mode)?;
        let h = g.swish(h);
        let mut h = g.maxpool1d(h, 3, 2, 1)?;
        for (_, block) in &self.blocks {
            h = self.run_block(g, p, stats, block, h, mode)?;
        }
        let h = conv(g, p, &self.head.0, h)?;
        let h = self.bn(g, p, stats, &self.head.1, h, mode)?;
        let h = g.swish(h);
        let a = &self.attention;
        let weights = AttentionWeights {
            wq: p[a[0]],
            bq: p[a[1]],
            wk: p[a[2]],
            bk: p[a[3]],
            wv: p[a[4]],
            bv: p[a[5]],
            wo: p[a[6]],
            bo: p[a[7]],
        };
        let h = attention_block(g, h, &weights, cfg.attention_heads, cfg.positional_encoding)?;
        let h = g.adaptive_avgpool1d(h, cfg.pool_len)?;
        let mut h = g.reshape(h, &[batch, cfg.head_channels * cfg.pool_len])?;
        if cfg.aux_features > 0 {
            h = g.concat(&[h, aux], 1)?;
        }
        let h = g.linear(h, p[self.fc1.0], Some(p[self.fc1.1]))?;
        let h = g.swish(h);
        let h = g.dropout(h, cfg.dropout, mode, rng)?;
        g.linear(h, p[self.fc2.0], Some(p[self.fc2.1]))
    }
}
