//! Autoregressive probabilistic head-pose model.
//!
//! Each step reads the previously fed 12-d pose feature (pose plus linear
//! velocity) and the current speech representation, runs them through a
//! stack of gated dilated causal convolutions, and emits a diagonal Gaussian
//! over the next pose feature. Sampling it and feeding the sample back closes
//! the loop.
//!
//! The stack is evaluated incrementally: every layer keeps a ring of its
//! past inputs just long enough to reach `t − dilation`, so a step costs
//! O(layers) regardless of the receptive field.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HeadPose;
use crate::tensor::{GatedConvLayer, GatedConvWeights, History, Linear};
use crate::weights::WeightStore;

pub const POSE_DIM: usize = 6;
pub const FEATURE_DIM: usize = 12;
/// Receptive field of the default two-block, seven-layer stack.
pub const RECEPTIVE_FIELD: usize = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct PoseNetConfig {
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    pub cond_dim: usize,
}

impl Default for PoseNetConfig {
    fn default() -> Self {
        Self {
            residual_channels: 64,
            skip_channels: 128,
            blocks: 2,
            layers_per_block: 7,
            cond_dim: crate::apc::REPR_DIM,
        }
    }
}

impl PoseNetConfig {
    /// `1, 2, 4, …, 2^(layers−1)` repeated once per block.
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.blocks)
            .flat_map(|_| (0..self.layers_per_block).map(|l| 1usize << l))
            .collect()
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.dilations().iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pose_net.residual_channels", self.residual_channels),
            ("pose_net.skip_channels", self.skip_channels),
            ("pose_net.blocks", self.blocks),
            ("pose_net.layers_per_block", self.layers_per_block),
            ("pose_net.cond_dim", self.cond_dim),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.layers_per_block > 16 {
            return Err(Error::config("pose_net.layers_per_block", "must be at most 16"));
        }
        Ok(())
    }
}

/// Pose `p = (r, t)` and its linear velocity `dp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFeature {
    pub p: [f32; POSE_DIM],
    pub dp: [f32; POSE_DIM],
}

impl PoseFeature {
    pub fn to_vec(&self) -> [f32; FEATURE_DIM] {
        let mut v = [0.0; FEATURE_DIM];
        v[..POSE_DIM].copy_from_slice(&self.p);
        v[POSE_DIM..].copy_from_slice(&self.dp);
        v
    }

    /// Feature for `pose` following `previous`, velocity recomputed.
    pub fn following(pose: &HeadPose, previous: &HeadPose) -> Self {
        let p = pose.to_array();
        let q = previous.to_array();
        let mut dp = [0.0; POSE_DIM];
        for k in 0..POSE_DIM {
            dp[k] = p[k] - q[k];
        }
        Self { p, dp }
    }
}

/// Diagonal Gaussian over the 12-d pose feature, `σ = exp(−s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDistribution {
    pub mu: [f32; FEATURE_DIM],
    pub neg_log_sigma: [f32; FEATURE_DIM],
}

impl PoseDistribution {
    pub fn sigma(&self, d: usize) -> f32 {
        (-self.neg_log_sigma[d]).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    /// Feedback feature: sampled pose, velocity recomputed from the
    /// previous pose.
    pub feature: PoseFeature,
    pub pose: HeadPose,
    /// The raw 12-d draw.
    pub draw: [f32; FEATURE_DIM],
}

/// Draws `x ~ N(μ, diag(σ)²)` in all 12 dimensions and keeps the first six
/// as the head pose.
pub fn sample_pose<R: Rng + ?Sized>(dist: &PoseDistribution, previous: &HeadPose, rng: &mut R) -> PoseSample {
    let mut draw = [0.0f32; FEATURE_DIM];
    for d in 0..FEATURE_DIM {
        let eps: f32 = rng.sample(StandardNormal);
        draw[d] = dist.mu[d] + dist.sigma(d) * eps;
    }
    let pose = HeadPose::from_slice(&draw[..POSE_DIM]);
    PoseSample {
        feature: PoseFeature::following(&pose, previous),
        pose,
        draw,
    }
}

/// `−ln N(x | μ, σ)` summed over dimensions, evaluated in f64.
pub fn pose_nll_loss(dist: &PoseDistribution, x: &[f32; FEATURE_DIM]) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    (0..FEATURE_DIM)
        .map(|d| {
            let s = dist.neg_log_sigma[d] as f64;
            let z = (x[d] as f64 - dist.mu[d] as f64) * s.exp();
            half_ln_2pi - s + 0.5 * z * z
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct PoseModel {
    config: PoseNetConfig,
    input: Linear,
    layers: Vec<GatedConvLayer>,
    dilations: Vec<usize>,
    post1: Linear,
    post2: Linear,
    layer_inputs: Vec<History>,
    features: History,
    previous: HeadPose,
    awaiting_feed: bool,
    steps: u64,
}

impl PoseModel {
    pub fn new(
        config: PoseNetConfig,
        input: Linear,
        layers: Vec<GatedConvLayer>,
        post1: Linear,
        post2: Linear,
    ) -> Result<Self> {
        config.validate()?;
        let (c, s, k) = (config.residual_channels, config.skip_channels, config.cond_dim);
        if input.input_dim() != FEATURE_DIM + k || input.output_dim() != c {
            return Err(Error::dim(
                "pose input projection",
                format!("[{c}, {}]", FEATURE_DIM + k),
                format!("[{}, {}]", input.output_dim(), input.input_dim()),
            ));
        }
        let dilations = config.dilations();
        if layers.len() != dilations.len() {
            return Err(Error::dim("pose conv layer count", dilations.len(), layers.len()));
        }
        for l in &layers {
            if l.channels() != c || l.skip_channels() != s || l.cond_dim() != k {
                return Err(Error::dim(
                    "pose conv layer",
                    format!("C={c} S={s} cond={k}"),
                    format!("C={} S={} cond={}", l.channels(), l.skip_channels(), l.cond_dim()),
                ));
            }
        }
        if post1.input_dim() != s || post2.input_dim() != post1.output_dim() || post2.output_dim() != 2 * FEATURE_DIM {
            return Err(Error::dim(
                "pose post-net",
                format!("{s} → … → {}", 2 * FEATURE_DIM),
                format!("{} → {} → {}", post1.input_dim(), post2.input_dim(), post2.output_dim()),
            ));
        }
        let layer_inputs = dilations.iter().map(|&d| History::new(c, d + 1)).collect();
        let rf = config.receptive_field();
        Ok(Self {
            input,
            layers,
            post1,
            post2,
            layer_inputs,
            features: History::new(FEATURE_DIM, rf),
            previous: HeadPose::default(),
            awaiting_feed: false,
            steps: 0,
            dilations,
            config,
        })
    }

    pub fn zeros(config: PoseNetConfig) -> Result<Self> {
        config.validate()?;
        let (c, s, k) = (config.residual_channels, config.skip_channels, config.cond_dim);
        let layers = config
            .dilations()
            .iter()
            .map(|_| GatedConvLayer::zeros(c, s, k))
            .collect();
        Self::new(
            config.clone(),
            Linear::zeros(FEATURE_DIM + k, c),
            layers,
            Linear::zeros(s, s),
            Linear::zeros(s, 2 * FEATURE_DIM),
        )
    }

    /// Seeded random weights. The output head is damped and `σ` biased to
    /// about 0.05 so sampled poses stay near rest; not a trained model.
    pub fn random<R: Rng + ?Sized>(config: PoseNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (c, s, k) = (config.residual_channels, config.skip_channels, config.cond_dim);
        let input = Linear::random(FEATURE_DIM + k, c, rng);
        let layers = config
            .dilations()
            .iter()
            .map(|_| GatedConvLayer::random(c, s, k, rng))
            .collect();
        let post1 = Linear::random(s, s, rng);
        let mut post2 = Linear::random(s, 2 * FEATURE_DIM, rng);
        for v in post2.weight_mut().data_mut() {
            *v *= 0.05;
        }
        let bias = post2.bias_mut().data_mut();
        bias[..FEATURE_DIM].fill(0.0);
        bias[FEATURE_DIM..].fill(3.0);
        Self::new(config, input, layers, post1, post2)
    }

    /// Loads `pose.cond.*` (input projection of `[pose feature; condition]`),
    /// `pose.block{b}.layer{l}.*` and `pose.post.conv{1,2}.*`. Channel widths
    /// and depth are inferred from the tensors.
    pub fn from_store(store: &WeightStore) -> Result<Self> {
        let get = |n: &str| store.require(n).cloned();
        let input = Linear::new(get("pose.cond.weight")?, get("pose.cond.bias")?)?;
        let mut layers = Vec::new();
        let mut blocks = 0;
        let mut per_block = 0;
        for b in 1.. {
            if !store.contains_prefix(&format!("pose.block{b}.")) {
                break;
            }
            blocks = b;
            let mut count = 0;
            for l in 1.. {
                let p = format!("pose.block{b}.layer{l}.");
                if !store.contains_prefix(&p) {
                    break;
                }
                count = l;
                let t = |s: &str| get(&format!("{p}{s}"));
                layers.push(GatedConvLayer::new(GatedConvWeights {
                    filter_weight: t("filter.weight")?,
                    filter_bias: t("filter.bias")?,
                    gate_weight: t("gate.weight")?,
                    gate_bias: t("gate.bias")?,
                    cond_filter: t("cond_filter.weight")?,
                    cond_gate: t("cond_gate.weight")?,
                    residual: Linear::new(t("residual.weight")?, t("residual.bias")?)?,
                    skip: Linear::new(t("skip.weight")?, t("skip.bias")?)?,
                })?);
            }
            if b > 1 && count != per_block {
                return Err(Error::Format(format!(
                    "pose block {b} has {count} layers, block 1 has {per_block}"
                )));
            }
            per_block = count;
        }
        let first = layers
            .first()
            .ok_or_else(|| Error::MissingTensor("pose.block1.layer1.filter.weight".into()))?;
        let config = PoseNetConfig {
            residual_channels: first.channels(),
            skip_channels: first.skip_channels(),
            blocks,
            layers_per_block: per_block,
            cond_dim: first.cond_dim(),
        };
        let post1 = Linear::new(get("pose.post.conv1.weight")?, get("pose.post.conv1.bias")?)?;
        let post2 = Linear::new(get("pose.post.conv2.weight")?, get("pose.post.conv2.bias")?)?;
        Self::new(config, input, layers, post1, post2)
    }

    pub fn to_store(&self) -> WeightStore {
        let mut store = WeightStore::new();
        let mut put = |n: String, t: crate::tensor::Tensor| store.insert(n, t).expect("unique");
        put("pose.cond.weight".into(), self.input.weight().clone());
        put("pose.cond.bias".into(), self.input.bias().clone());
        let per = self.config.layers_per_block;
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("pose.block{}.layer{}.", i / per + 1, i % per + 1);
            for (suffix, t) in layer.named_tensors() {
                put(format!("{p}{suffix}"), t);
            }
        }
        put("pose.post.conv1.weight".into(), self.post1.weight().clone());
        put("pose.post.conv1.bias".into(), self.post1.bias().clone());
        put("pose.post.conv2.weight".into(), self.post2.weight().clone());
        put("pose.post.conv2.bias".into(), self.post2.bias().clone());
        store
    }

    pub fn config(&self) -> &PoseNetConfig {
        &self.config
    }

    pub fn dilations(&self) -> &[usize] {
        &self.dilations
    }

    pub fn input_projection(&self) -> &Linear {
        &self.input
    }

    pub fn layers(&self) -> &[GatedConvLayer] {
        &self.layers
    }

    pub fn post_net(&self) -> (&Linear, &Linear) {
        (&self.post1, &self.post2)
    }

    pub fn param_count(&self) -> usize {
        self.input.param_count()
            + self.layers.iter().map(GatedConvLayer::param_count).sum::<usize>()
            + self.post1.param_count()
            + self.post2.param_count()
    }

    /// Fed pose features, oldest first; at most the receptive field.
    pub fn history(&self) -> &History {
        &self.features
    }

    pub fn previous_pose(&self) -> HeadPose {
        self.previous
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn reset(&mut self) {
        self.layer_inputs.iter_mut().for_each(History::clear);
        self.features.clear();
        self.previous = HeadPose::default();
        self.awaiting_feed = false;
        self.steps = 0;
    }

    /// Distribution of the pose at the current step given the fed history
    /// and this frame's condition. Must be followed by [`PoseModel::feed`]
    /// before the next step.
    pub fn step(&mut self, repr: &[f32]) -> Result<PoseDistribution> {
        if repr.len() != self.config.cond_dim {
            return Err(Error::dim("pose condition width", self.config.cond_dim, repr.len()));
        }
        if self.awaiting_feed {
            return Err(Error::Domain(
                "pose step called before feeding the previous sample".into(),
            ));
        }
        let mut x = Vec::with_capacity(FEATURE_DIM + repr.len());
        match self.features.lag(0) {
            Some(f) => x.extend_from_slice(f),
            None => x.extend_from_slice(&[0.0; FEATURE_DIM]),
        }
        x.extend_from_slice(repr);
        let mut current = self.input.forward(&x)?;

        let mut skip = vec![0.0f32; self.config.skip_channels];
        let mut next = vec![0.0f32; self.config.residual_channels];
        for ((layer, hist), &d) in self.layers.iter().zip(&mut self.layer_inputs).zip(&self.dilations) {
            hist.push(&current);
            layer.step_raw(&current, hist.lag(d), repr, &mut next, &mut skip);
            std::mem::swap(&mut current, &mut next);
        }

        skip.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut hidden = self.post1.forward(&skip)?;
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let out = self.post2.forward(&hidden)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose generator".into()));
        }
        let mut dist = PoseDistribution {
            mu: [0.0; FEATURE_DIM],
            neg_log_sigma: [0.0; FEATURE_DIM],
        };
        dist.mu.copy_from_slice(&out[..FEATURE_DIM]);
        dist.neg_log_sigma.copy_from_slice(&out[FEATURE_DIM..]);
        self.awaiting_feed = true;
        self.steps += 1;
        Ok(dist)
    }

    /// Appends a pose feature to the autoregressive history.
    pub fn feed(&mut self, feature: PoseFeature) {
        self.features.push(&feature.to_vec());
        self.previous = HeadPose::from_slice(&feature.p);
        self.awaiting_feed = false;
    }

    /// Feeds an externally supplied pose, velocity taken from the last fed
    /// pose.
    pub fn feed_pose(&mut self, pose: HeadPose) {
        self.feed(PoseFeature::following(&pose, &self.previous));
    }

    /// One full autoregressive step: distribution, sample, feedback.
    pub fn generate<R: Rng + ?Sized>(&mut self, repr: &[f32], rng: &mut R) -> Result<(PoseDistribution, PoseSample)> {
        let dist = self.step(repr)?;
        let sample = sample_pose(&dist, &self.previous, rng);
        self.feed(sample.feature);
        Ok((dist, sample))
    }
}
