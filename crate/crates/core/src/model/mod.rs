//! The spectro-temporal graph-attention detector.
//!
//! Pipeline: per-stem frame features → [`fuse_branches`] → residual conv
//! encoder over time (the fused feature axis is split into `F` spectral
//! bins) → attention aggregation into spectral and temporal nodes →
//! [`mgo`] (two HS-GAL/pool branches merged by element-wise max) →
//! [`readout`] → affine head with two logits. The detector's score is
//! `logit(bonafide) - logit(spoof)`.

mod check;
mod frontend;
mod io;
mod layers;

pub use check::{
    gradcheck_input, model_grad_check, ModelGradCheck, GRADCHECK_EPS, GRADCHECK_FRAMES,
    GRADCHECK_SEED,
};
pub use frontend::{
    fuse_branches, model_input, stem_features, Frontend, InputSetup, Stem, StemInputs,
    SPECTROGRAM_HOP_S,
};
pub use io::{
    decode_checkpoint, decode_embedding, encode_checkpoint, encode_embedding, load_checkpoint,
    load_embedding_file, save_checkpoint, save_embedding_file, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION, EMBEDDING_MAGIC,
};
pub use layers::{
    graph_pool, hs_gal, hs_gal_scores, keep_count, mgo, mgo_branch, readout, sa_aggregate,
    top_k_indices, BranchParams, GraphState, HsGalOutput, HsGalParams, Linear, MgoOutput,
    PoolOutput, PoolParams, SaOutput, SaParams, LEAKY_SLOPE,
};

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{BatchNormMode, Tape, Tensor, Var};
use crate::dsp::{FeatureSequence, LfccConfig};
use crate::error::{Error, Result};
use crate::seed;

/// Architecture hyper-parameters. All dimensions are configurable; the
/// defaults are a desk-scale setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub frontend: Frontend,
    /// Output channels of each residual encoder block.
    pub channels: Vec<usize>,
    /// Number of spectral bins `F` the fused feature axis is split into.
    pub f_bins: usize,
    /// Temporal max-pool width after each encoder block.
    pub time_pool: usize,
    /// Graph node dimension.
    pub d_node: usize,
    /// Keep ratios of the first and second graph pooling stage.
    pub pool_keep_ratio: [f64; 2],
    pub n_classes: usize,
    pub seed: u64,
    /// `[instrumental, vocal]` embedding widths for the embedding front-end.
    pub embedding_dims: [usize; 2],
    /// Filters per stem of the sinc filterbank front-end.
    pub sinc_filters: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frontend: Frontend::RawLfcc,
            channels: vec![16, 16],
            f_bins: 8,
            time_pool: 3,
            d_node: 32,
            pool_keep_ratio: [0.5, 0.7],
            n_classes: 2,
            seed: 0,
            embedding_dims: [768, 1024],
            sinc_filters: 32,
        }
    }
}

impl ModelConfig {
    /// A minimal configuration for gradient checks: 8-dim nodes, 4 spectral
    /// bins, a 2-block encoder of 4 channels without temporal pooling, fed
    /// 4 + 4 dimensional embeddings.
    pub fn tiny() -> Self {
        Self {
            frontend: Frontend::EmbeddingFiles,
            channels: vec![4, 4],
            f_bins: 4,
            time_pool: 1,
            d_node: 8,
            embedding_dims: [4, 4],
            seed: 0,
            ..Default::default()
        }
    }

    /// Width of the fused feature sequence the encoder expects.
    pub fn input_dim(&self) -> usize {
        match self.frontend {
            Frontend::RawLfcc => 2 * LfccConfig::default().n_coeff,
            Frontend::RawSpectrogram => 2 * self.sinc_filters,
            Frontend::EmbeddingFiles => self.embedding_dims[0] + self.embedding_dims[1],
        }
    }

    /// Channels of the encoder's output map.
    pub fn encoder_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }

    /// Frames left after the encoder for `frames` input frames.
    pub fn encoded_len(&self, frames: usize) -> usize {
        (0..self.channels.len()).fold(frames, |t, _| t / self.time_pool)
    }

    /// Fewest input frames that leave at least one encoded frame.
    pub fn min_frames(&self) -> usize {
        self.time_pool.pow(self.channels.len() as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_node < 4 {
            return bad(format!("d_node must be at least 4, got {}", self.d_node));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad(format!(
                "channels must be non-empty and positive: {:?}",
                self.channels
            ));
        }
        if self.f_bins == 0 || self.time_pool == 0 {
            return bad("f_bins and time_pool must be positive".into());
        }
        if self
            .pool_keep_ratio
            .iter()
            .any(|r| !(*r > 0.0 && *r <= 1.0))
        {
            return bad(format!(
                "pool_keep_ratio {:?} outside (0, 1]",
                self.pool_keep_ratio
            ));
        }
        if self.n_classes != 2 {
            return bad(format!("n_classes must be 2, got {}", self.n_classes));
        }
        if self.frontend == Frontend::RawSpectrogram && self.sinc_filters == 0 {
            return bad("sinc_filters must be positive".into());
        }
        if self.embedding_dims.contains(&0) {
            return bad("embedding_dims must be positive".into());
        }
        if !self.input_dim().is_multiple_of(self.f_bins) {
            return bad(format!(
                "fused feature width {} is not divisible by f_bins {}",
                self.input_dim(),
                self.f_bins
            ));
        }
        Ok(())
    }
}

/// Named tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Integrity(format!("duplicate tensor name {name:?}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Batch-norm behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Per-sample statistics; the statistics are reported back.
    Train,
    /// Frozen running statistics.
    Eval,
}

/// Batch statistics of one normalization layer: `(layer, mean, var)`.
pub type BnBatchStats = Vec<(String, Vec<f64>, Vec<f64>)>;

/// Output of a forward pass built on a tape.
pub struct ForwardPass<'t> {
    /// `[1, 2]`: bona fide, spoof.
    pub logits: Var<'t>,
    pub bn_stats: BnBatchStats,
}

/// Detached result of scoring one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logits: [f64; 2],
    /// `logit(bonafide) - logit(spoof)`.
    pub score: f64,
}

/// Detached intermediate values of an eval-mode forward pass.
#[derive(Debug, Clone)]
pub struct Stages {
    /// `[C, F, T]`.
    pub encoder_map: Tensor,
    /// `[F, D]`.
    pub spectral: Tensor,
    /// `[T, D]`.
    pub temporal: Tensor,
    /// `5 D`.
    pub hidden: Tensor,
    pub prediction: Prediction,
}

/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// The detector: configuration, trainable tensors and batch-norm buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct SingGraph {
    config: ModelConfig,
    params: ParamStore,
    buffers: ParamStore,
}

struct Init<'a> {
    rng: seed::SeededRng,
    params: &'a mut ParamStore,
    buffers: &'a mut ParamStore,
}

impl Init<'_> {
    fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<()> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.params.insert(name, Tensor::new(shape, data)?)
    }

    fn fill(&mut self, name: &str, shape: &[usize], v: f64) -> Result<()> {
        self.params.insert(name, Tensor::full(shape, v))
    }

    fn batchnorm(&mut self, name: &str, c: usize) -> Result<()> {
        self.fill(&format!("{name}.gamma"), &[c], 1.0)?;
        self.fill(&format!("{name}.beta"), &[c], 0.0)?;
        self.buffers
            .insert(&format!("{name}.running_mean"), Tensor::zeros(&[c]))?;
        self.buffers
            .insert(&format!("{name}.running_var"), Tensor::full(&[c], 1.0))
    }
}

fn block_name(i: usize) -> String {
    format!("encoder.{i}")
}

fn branch_name(b: usize) -> String {
    format!("mgo.{b}")
}

impl SingGraph {
    /// Freshly initialized model; the draw order is fixed, so the same
    /// config (including its seed) always yields the same parameters.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut buffers = ParamStore::default();
        let mut init = Init {
            rng: seed::rng(seed::derive(config.seed, &[b"init"])),
            params: &mut params,
            buffers: &mut buffers,
        };
        let d = config.d_node;
        let mut cin = config.input_dim() / config.f_bins;
        for (i, &c) in config.channels.iter().enumerate() {
            let p = block_name(i);
            init.batchnorm(&format!("{p}.bn1"), cin)?;
            init.normal(
                &format!("{p}.conv1"),
                &[c, cin, 3],
                (1.0 / (3 * cin) as f64).sqrt(),
            )?;
            init.batchnorm(&format!("{p}.bn2"), c)?;
            init.normal(
                &format!("{p}.conv2"),
                &[c, c, 3],
                (1.0 / (3 * c) as f64).sqrt(),
            )?;
            if cin != c {
                init.normal(
                    &format!("{p}.skip"),
                    &[c, cin, 1],
                    (1.0 / cin as f64).sqrt(),
                )?;
            }
            cin = c;
        }
        let c = config.encoder_channels();
        for axis in ["spectral", "temporal"] {
            init.fill(&format!("sa.{axis}.att"), &[c, 1], 0.0)?;
            init.normal(&format!("sa.{axis}.w"), &[c, d], (1.0 / c as f64).sqrt())?;
            init.fill(&format!("sa.{axis}.b"), &[d], 0.0)?;
        }
        let std_d = (1.0 / d as f64).sqrt();
        for b in 0..2 {
            for stage in 0..2 {
                let p = format!("{}.gal{stage}", branch_name(b));
                // zero score vectors start every attention uniform, away
                // from softmax saturation
                for a in ["att_aa", "att_bb", "att_ab", "att_stack"] {
                    init.fill(&format!("{p}.{a}"), &[d], 0.0)?;
                }
                init.normal(&format!("{p}.proj"), &[d, d], std_d)?;
                init.normal(&format!("{p}.stack_proj"), &[d, d], std_d)?;
                for kind in ["spectral", "temporal"] {
                    let q = format!("{}.pool{stage}.{kind}", branch_name(b));
                    init.normal(&format!("{q}.w"), &[d, 1], std_d)?;
                    init.fill(&format!("{q}.b"), &[1], 0.0)?;
                }
            }
        }
        init.normal("head.w", &[5 * d, 2], (1.0 / (5 * d) as f64).sqrt())?;
        init.fill("head.b", &[2], 0.0)?;
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    /// Reassembles a model from stored tensors, checking that every tensor
    /// the architecture needs is present with the right shape.
    pub fn from_parts(
        config: ModelConfig,
        params: ParamStore,
        buffers: ParamStore,
    ) -> Result<Self> {
        let fresh = Self::new(config.clone())?;
        for (want, got, what) in [
            (&fresh.params, &params, "parameter"),
            (&fresh.buffers, &buffers, "buffer"),
        ] {
            if want.len() != got.len() {
                return Err(Error::Format(format!(
                    "expected {} {what} tensors, found {}",
                    want.len(),
                    got.len()
                )));
            }
            for (name, t) in want.iter() {
                let g = got
                    .get(name)
                    .ok_or_else(|| Error::Format(format!("missing {what} {name:?}")))?;
                if g.shape() != t.shape() {
                    return Err(Error::shape("checkpoint tensor", g.shape(), t.shape()));
                }
            }
        }
        // keep the canonical order so parameter indices are stable
        let reorder = |want: &ParamStore, got: &ParamStore| -> Result<ParamStore> {
            let mut out = ParamStore::default();
            for name in want.names() {
                out.insert(name, got.get(name).expect("checked above").clone())?;
            }
            Ok(out)
        };
        Ok(Self {
            params: reorder(&fresh.params, &params)?,
            buffers: reorder(&fresh.buffers, &buffers)?,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    /// Leaves for every parameter, in store order.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Copies the first MGO branch's parameters into the second.
    pub fn tie_mgo_branches(&mut self) {
        let names: Vec<String> = self
            .params
            .names()
            .iter()
            .filter(|n| n.starts_with("mgo.0."))
            .cloned()
            .collect();
        for n in names {
            let src = self.params.get(&n).expect("listed").clone();
            let dst = n.replacen("mgo.0.", "mgo.1.", 1);
            *self
                .params
                .get_mut(&dst)
                .expect("branches mirror each other") = src;
        }
    }

    /// Folds per-sample batch statistics into the running statistics: the
    /// samples' statistics are averaged in order, then blended in with
    /// [`BN_MOMENTUM`].
    pub fn update_running_stats(&mut self, per_sample: &[BnBatchStats]) -> Result<()> {
        if per_sample.is_empty() {
            return Ok(());
        }
        let n = per_sample.len() as f64;
        for (layer_idx, (name, _, _)) in per_sample[0].iter().enumerate() {
            let mut mean = vec![0.0; per_sample[0][layer_idx].1.len()];
            let mut var = vec![0.0; mean.len()];
            for stats in per_sample {
                let (other, m, v) = &stats[layer_idx];
                if other != name || m.len() != mean.len() {
                    return Err(Error::Invariant(format!(
                        "batch statistics disagree on layer {name}"
                    )));
                }
                mean.iter_mut().zip(m).for_each(|(a, b)| *a += b / n);
                var.iter_mut().zip(v).for_each(|(a, b)| *a += b / n);
            }
            for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
                let buf = self
                    .buffers
                    .get_mut(&format!("{name}.{suffix}"))
                    .ok_or_else(|| Error::Invariant(format!("no buffer for {name}")))?;
                for (r, b) in buf.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
        Ok(())
    }

    /// Builds the forward pass on `tape` with `vars` bound to the parameters
    /// (see [`SingGraph::bind`]).
    pub fn forward_on<'t>(
        &self,
        vars: &[Var<'t>],
        input: &FeatureSequence,
        mode: Mode,
    ) -> Result<ForwardPass<'t>> {
        let ctx = Ctx::new(self, vars, mode)?;
        let logits = ctx.run(input)?.logits;
        Ok(ForwardPass {
            logits,
            bn_stats: ctx.stats.into_inner(),
        })
    }

    /// Weighted cross-entropy `-w · log softmax(logits)[class]` of one input.
    pub fn loss_on<'t>(
        &self,
        vars: &[Var<'t>],
        input: &FeatureSequence,
        class: usize,
        weight: f64,
        mode: Mode,
    ) -> Result<(Var<'t>, BnBatchStats)> {
        let pass = self.forward_on(vars, input, mode)?;
        let loss = pass
            .logits
            .log_softmax(1)?
            .slice(1, class, class + 1)?
            .sum_all()?
            .scale(-weight)?;
        Ok((loss, pass.bn_stats))
    }

    /// Eval-mode prediction for fused features.
    pub fn predict(&self, input: &FeatureSequence) -> Result<Prediction> {
        Ok(self.stages(input)?.prediction)
    }

    /// Eval-mode prediction from stems under an input setup.
    pub fn forward(&self, setup: InputSetup, inputs: &StemInputs<'_>) -> Result<Prediction> {
        self.predict(&model_input(&self.config, setup, inputs)?)
    }

    /// Eval-mode forward pass exposing the intermediate representations.
    pub fn stages(&self, input: &FeatureSequence) -> Result<Stages> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let ctx = Ctx::new(self, &vars, Mode::Eval)?;
        let out = ctx.run(input)?;
        let l = out.logits.value();
        let logits = [l.data()[0], l.data()[1]];
        Ok(Stages {
            encoder_map: (*out.encoder_map.value()).clone(),
            spectral: (*out.spectral.value()).clone(),
            temporal: (*out.temporal.value()).clone(),
            hidden: (*out.hidden.value()).clone(),
            prediction: Prediction {
                logits,
                score: logits[0] - logits[1],
            },
        })
    }
}

/// Parameter lookup and batch-norm bookkeeping for one forward pass.
struct Ctx<'m, 't> {
    model: &'m SingGraph,
    vars: &'m [Var<'t>],
    mode: Mode,
    stats: RefCell<BnBatchStats>,
}

struct RunOutput<'t> {
    encoder_map: Var<'t>,
    spectral: Var<'t>,
    temporal: Var<'t>,
    hidden: Var<'t>,
    logits: Var<'t>,
}

impl<'m, 't> Ctx<'m, 't> {
    fn new(model: &'m SingGraph, vars: &'m [Var<'t>], mode: Mode) -> Result<Self> {
        if vars.len() != model.params.len() {
            return Err(Error::Invariant(format!(
                "{} variables bound for {} parameters",
                vars.len(),
                model.params.len()
            )));
        }
        Ok(Self {
            model,
            vars,
            mode,
            stats: RefCell::new(Vec::new()),
        })
    }

    fn p(&self, name: &str) -> Result<Var<'t>> {
        self.model
            .params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Invariant(format!("no parameter named {name:?}")))
    }

    fn batchnorm(&self, x: Var<'t>, name: &str) -> Result<Var<'t>> {
        let gamma = self.p(&format!("{name}.gamma"))?;
        let beta = self.p(&format!("{name}.beta"))?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = x.batchnorm1d(gamma, beta, BatchNormMode::Train)?;
                let (m, v) = stats.expect("train mode reports statistics");
                self.stats.borrow_mut().push((name.to_string(), m, v));
                Ok(y)
            }
            Mode::Eval => {
                let buf = |s: &str| {
                    self.model
                        .buffers
                        .get(&format!("{name}.{s}"))
                        .ok_or_else(|| Error::Invariant(format!("no buffer {name}.{s}")))
                };
                let (mean, var) = (buf("running_mean")?, buf("running_var")?);
                let mode = BatchNormMode::Eval {
                    mean: mean.data(),
                    var: var.data(),
                };
                Ok(x.batchnorm1d(gamma, beta, mode)?.0)
            }
        }
    }

    /// `[B, C, L]` → `[B, C, L / w]` by non-overlapping max over time.
    fn time_pool(x: Var<'t>, w: usize) -> Result<Var<'t>> {
        if w == 1 {
            return Ok(x);
        }
        let s = x.shape();
        let l = s[2] / w;
        x.slice(2, 0, l * w)?.reshape(&[s[0], s[1], l, w])?.max(3)
    }

    /// Fused `[T, D]` features → `[C, F, T_enc]` map.
    fn encode(&self, input: &FeatureSequence) -> Result<Var<'t>> {
        let cfg = &self.model.config;
        let (t, d, f) = (input.frames(), input.dim(), cfg.f_bins);
        if d != cfg.input_dim() {
            return Err(Error::Input(format!(
                "model expects {}-dim fused features, got {d}",
                cfg.input_dim()
            )));
        }
        if t < cfg.min_frames() {
            return Err(Error::Length(format!(
                "{t} frames are too few for the encoder (needs at least {})",
                cfg.min_frames()
            )));
        }
        let tape = self
            .vars
            .first()
            .map(|v| v.tape())
            .ok_or_else(|| Error::Invariant("model has no parameters".into()))?;
        let x = tape.constant(Tensor::new(&[t, d], input.data().to_vec())?);
        // [T, F, D/F] → [F, D/F, T]: spectral bins act as the batch axis
        let mut x = x.reshape(&[t, f, d / f])?.permute(&[1, 2, 0])?;
        for i in 0..cfg.channels.len() {
            let p = block_name(i);
            let h = self.batchnorm(x, &format!("{p}.bn1"))?.selu()?;
            let h = h.conv1d(self.p(&format!("{p}.conv1"))?, 1, 1)?;
            let h = self.batchnorm(h, &format!("{p}.bn2"))?.selu()?;
            let h = h.conv1d(self.p(&format!("{p}.conv2"))?, 1, 1)?;
            let skip = match self.model.params.position(&format!("{p}.skip")) {
                Some(_) => x.conv1d(self.p(&format!("{p}.skip"))?, 1, 0)?,
                None => x,
            };
            x = Self::time_pool(h.add(skip)?, cfg.time_pool)?;
        }
        // [F, C, T] → [C, F, T]
        x.permute(&[1, 0, 2])
    }

    fn sa_params(&self) -> Result<SaParams<'t>> {
        let lin = |axis: &str| -> Result<Linear<'t>> {
            Ok(Linear {
                w: self.p(&format!("sa.{axis}.w"))?,
                b: Some(self.p(&format!("sa.{axis}.b"))?),
            })
        };
        Ok(SaParams {
            spectral_att: self.p("sa.spectral.att")?,
            temporal_att: self.p("sa.temporal.att")?,
            spectral_proj: lin("spectral")?,
            temporal_proj: lin("temporal")?,
        })
    }

    fn branch_params(&self, b: usize) -> Result<BranchParams<'t>> {
        let bn = branch_name(b);
        let gal = |stage: usize| -> Result<HsGalParams<'t>> {
            let p = |n: &str| self.p(&format!("{bn}.gal{stage}.{n}"));
            Ok(HsGalParams {
                att_aa: p("att_aa")?,
                att_bb: p("att_bb")?,
                att_ab: p("att_ab")?,
                att_stack: p("att_stack")?,
                proj: p("proj")?,
                stack_proj: p("stack_proj")?,
            })
        };
        let pool = |stage: usize, kind: &str| -> Result<PoolParams<'t>> {
            Ok(PoolParams {
                w: self.p(&format!("{bn}.pool{stage}.{kind}.w"))?,
                b: self.p(&format!("{bn}.pool{stage}.{kind}.b"))?,
            })
        };
        Ok(BranchParams {
            gal: [gal(0)?, gal(1)?],
            pool_spectral: [pool(0, "spectral")?, pool(1, "spectral")?],
            pool_temporal: [pool(0, "temporal")?, pool(1, "temporal")?],
        })
    }

    fn run(&self, input: &FeatureSequence) -> Result<RunOutput<'t>> {
        let cfg = &self.model.config;
        let encoder_map = self.encode(input)?;
        let sa = sa_aggregate(&self.sa_params()?, encoder_map)?;
        let branches = [self.branch_params(0)?, self.branch_params(1)?];
        let g = mgo(&branches, sa.spectral, sa.temporal, cfg.pool_keep_ratio)?.merged;
        let hidden = readout(g.spectral, g.temporal, g.stack)?;
        let logits = Linear {
            w: self.p("head.w")?,
            b: Some(self.p("head.b")?),
        }
        .apply(hidden.reshape(&[1, 5 * cfg.d_node])?)?;
        Ok(RunOutput {
            encoder_map,
            spectral: sa.spectral,
            temporal: sa.temporal,
            hidden,
            logits,
        })
    }
}

#[cfg(test)]
mod tests;
