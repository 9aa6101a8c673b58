//! First-order MAML trainer over saliency-prediction tasks, with a small
//! planar saliency network as the adaptable model, a fast fine-tuning stage,
//! and scalar analytic oracles for validating the meta-update.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SaliencyMap;
use crate::synthetic::{gaussian_blob, random_center};
use crate::tensor::{
    load_checkpoint, save_checkpoint, seeded_rng, ParameterSet, Tape, Tensor,
};

/// A model whose loss can be evaluated and differentiated w.r.t. a parameter
/// set, for some sample type.
pub trait AdaptableModel {
    type Sample;

    fn loss(&self, params: &ParameterSet, batch: &[Self::Sample]) -> Result<f64>;

    fn loss_and_grads(
        &self,
        params: &ParameterSet,
        batch: &[Self::Sample],
    ) -> Result<(f64, BTreeMap<String, Tensor>)>;
}

/// Support/query split of one few-shot task.
#[derive(Debug, Clone)]
pub struct Task<S> {
    pub support: Vec<S>,
    pub query: Vec<S>,
}

/// Meta-training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Inner-loop learning rate.
    pub alpha: f64,
    /// Meta learning rate.
    pub beta: f64,
    /// Inner gradient steps per task.
    pub inner_steps: usize,
    pub task_batch_size: usize,
    pub meta_iterations: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            alpha: 0.05,
            beta: 0.05,
            inner_steps: 1,
            task_batch_size: 4,
            meta_iterations: 200,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::Config("meta learning rates must be positive".into()));
        }
        if self.inner_steps == 0 || self.task_batch_size == 0 || self.meta_iterations == 0 {
            return Err(Error::Config("meta loop sizes must be positive".into()));
        }
        Ok(())
    }
}

/// `k` full-batch gradient steps on the support set at rate `alpha`.
/// The base parameters are left untouched; the adapted copy is returned.
pub fn inner_adapt<M: AdaptableModel>(
    model: &M,
    theta: &ParameterSet,
    support: &[M::Sample],
    alpha: f64,
    k: usize,
) -> Result<ParameterSet> {
    if support.is_empty() {
        return Err(Error::invalid("inner_adapt needs a nonempty support set"));
    }
    let mut adapted = theta.clone();
    for _ in 0..k {
        let (_, grads) = model.loss_and_grads(&adapted, support)?;
        adapted.apply_sgd(&grads, alpha)?;
    }
    Ok(adapted)
}

/// One first-order MAML meta-update over a task batch: adapt per task, take
/// the query gradient at the adapted point, and apply the summed gradients to
/// the base parameters. Returns the mean query loss across the batch.
pub fn fomaml_meta_step<M: AdaptableModel>(
    model: &M,
    theta: &mut ParameterSet,
    task_batch: &[Task<M::Sample>],
    config: &MetaConfig,
) -> Result<f64> {
    fomaml_meta_step_k(model, theta, task_batch, config.alpha, config.beta, config.inner_steps)
}

/// As [`fomaml_meta_step`] but with explicit hyperparameters; `k = 0` is
/// allowed and reduces to plain gradient descent on the pooled query losses.
pub fn fomaml_meta_step_k<M: AdaptableModel>(
    model: &M,
    theta: &mut ParameterSet,
    task_batch: &[Task<M::Sample>],
    alpha: f64,
    beta: f64,
    k: usize,
) -> Result<f64> {
    if task_batch.is_empty() {
        return Err(Error::invalid("meta step needs a nonempty task batch"));
    }
    let mut summed: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut total_loss = 0.0;
    for task in task_batch {
        let adapted = if k == 0 {
            theta.clone()
        } else {
            inner_adapt(model, theta, &task.support, alpha, k)?
        };
        let (loss, grads) = model.loss_and_grads(&adapted, &task.query)?;
        total_loss += loss;
        for (name, g) in grads {
            match summed.get_mut(&name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    summed.insert(name, g);
                }
            }
        }
    }
    theta.apply_sgd(&summed, beta)?;
    Ok(total_loss / task_batch.len() as f64)
}

/// Exact second-order MAML update for the scalar quadratic family
/// `L_i(theta) = (theta - a_i)^2`, differentiating through the `k` inner
/// steps analytically. Validation oracle only.
///
/// After `k` inner steps, `theta_k = a_i + (1 - 2 alpha)^k (theta - a_i)`,
/// so the full meta-gradient of the query loss is
/// `2 (1 - 2 alpha)^{2k} (theta - a_i)`.
pub fn maml_second_order_reference(
    theta: f64,
    task_targets: &[f64],
    alpha: f64,
    beta: f64,
    k: usize,
) -> f64 {
    let shrink = (1.0 - 2.0 * alpha).powi(k as i32);
    let grad_sum: f64 = task_targets
        .iter()
        .map(|&a| 2.0 * shrink * shrink * (theta - a))
        .sum();
    theta - beta * grad_sum
}

/// Gradient descent on the support set; records the query loss before
/// training and after every epoch (so the curve has `epochs + 1` points).
pub fn fine_tune<M: AdaptableModel>(
    model: &M,
    theta_init: &ParameterSet,
    support: &[M::Sample],
    query: &[M::Sample],
    alpha: f64,
    epochs: usize,
) -> Result<(ParameterSet, Vec<f64>)> {
    if support.is_empty() {
        return Err(Error::invalid("fine_tune needs a nonempty support set"));
    }
    let mut params = theta_init.clone();
    let mut curve = vec![model.loss(&params, query)?];
    for _ in 0..epochs {
        let (_, grads) = model.loss_and_grads(&params, support)?;
        params.apply_sgd(&grads, alpha)?;
        curve.push(model.loss(&params, query)?);
    }
    Ok((params, curve))
}

// ── scalar quadratic oracle model ────────────────────────────────────

/// `L(theta) = mean over batch of (theta - a)^2`, with a single scalar
/// parameter named `"theta"`. Used to validate the meta-loops analytically.
pub struct ScalarQuadraticModel;

impl ScalarQuadraticModel {
    pub fn params(theta: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("theta", Tensor::scalar(theta)).unwrap();
        p
    }

    pub fn theta(params: &ParameterSet) -> f64 {
        params.get("theta").unwrap().item()
    }
}

impl AdaptableModel for ScalarQuadraticModel {
    type Sample = f64;

    fn loss(&self, params: &ParameterSet, batch: &[f64]) -> Result<f64> {
        let theta = Self::theta(params);
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        Ok(batch.iter().map(|a| (theta - a) * (theta - a)).sum::<f64>() / batch.len() as f64)
    }

    fn loss_and_grads(
        &self,
        params: &ParameterSet,
        batch: &[f64],
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let theta = Self::theta(params);
        let loss = self.loss(params, batch)?;
        let grad =
            batch.iter().map(|a| 2.0 * (theta - a)).sum::<f64>() / batch.len() as f64;
        let mut grads = BTreeMap::new();
        grads.insert("theta".to_string(), Tensor::scalar(grad));
        Ok((loss, grads))
    }
}

// ── planar saliency network ──────────────────────────────────────────

/// One (frame features, target saliency) pair.
#[derive(Debug, Clone)]
pub struct SaliencySample {
    /// `[1, H, W]` luminance-like features.
    pub features: Tensor,
    pub target: SaliencyMap,
}

pub type SaliencyTask = Task<SaliencySample>;

/// Topology of the planar encoder-decoder saliency network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyNetConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub enc_channels: usize,
    pub mid_channels: usize,
}

impl Default for SaliencyNetConfig {
    fn default() -> Self {
        SaliencyNetConfig {
            input_h: 8,
            input_w: 16,
            enc_channels: 4,
            mid_channels: 8,
        }
    }
}

impl SaliencyNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_h % 4 != 0 || self.input_w % 4 != 0 {
            return Err(Error::Config(
                "saliency net input dims must be divisible by 4".into(),
            ));
        }
        if self.enc_channels == 0 || self.mid_channels == 0 {
            return Err(Error::Config("saliency net channels must be positive".into()));
        }
        Ok(())
    }
}

/// Small planar encoder-decoder: two conv+pool stages down, two
/// upsample+conv stages up, softmax-normalized to a distribution.
#[derive(Debug, Clone)]
pub struct SaliencyNet {
    config: SaliencyNetConfig,
}

impl SaliencyNet {
    pub fn new(config: SaliencyNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(SaliencyNet { config })
    }

    pub fn config(&self) -> &SaliencyNetConfig {
        &self.config
    }

    pub fn init_params(&self, seed: u64) -> ParameterSet {
        let mut rng = seeded_rng(seed);
        let c1 = self.config.enc_channels;
        let c2 = self.config.mid_channels;
        let mut p = ParameterSet::new();
        let conv = |p: &mut ParameterSet, name: &str, o: usize, i: usize, rng: &mut ChaCha8Rng| {
            p.insert_init(format!("{name}.kernel"), &[o, i, 3, 3], i * 9, rng)
                .unwrap();
            p.insert(format!("{name}.bias"), Tensor::zeros(&[o])).unwrap();
        };
        conv(&mut p, "enc1", c1, 1, &mut rng);
        conv(&mut p, "enc2", c2, c1, &mut rng);
        conv(&mut p, "dec1", c1, c2, &mut rng);
        conv(&mut p, "dec2", 1, c1, &mut rng);
        p
    }

    fn forward_on_tape(
        &self,
        tape: &mut Tape,
        nodes: &BTreeMap<String, crate::tensor::NodeId>,
        features: &Tensor,
    ) -> Result<crate::tensor::NodeId> {
        if features.shape() != [1, self.config.input_h, self.config.input_w] {
            return Err(Error::shape(format!(
                "features must be [1,{},{}], got {:?}",
                self.config.input_h,
                self.config.input_w,
                features.shape()
            )));
        }
        let x = tape.leaf(features.clone());
        let x = tape.conv2d(x, nodes["enc1.kernel"], nodes["enc1.bias"])?;
        let x = tape.relu(x);
        let x = tape.avg_pool2d(x, 2, 2)?;
        let x = tape.conv2d(x, nodes["enc2.kernel"], nodes["enc2.bias"])?;
        let x = tape.relu(x);
        let x = tape.avg_pool2d(x, 2, 2)?;
        let x = tape.upsample_nearest(x, 2)?;
        let x = tape.conv2d(x, nodes["dec1.kernel"], nodes["dec1.bias"])?;
        let x = tape.relu(x);
        let x = tape.upsample_nearest(x, 2)?;
        let x = tape.conv2d(x, nodes["dec2.kernel"], nodes["dec2.bias"])?;
        Ok(tape.softmax_all(x))
    }

    /// Predicted saliency distribution for one frame.
    pub fn predict(&self, params: &ParameterSet, features: &Tensor) -> Result<SaliencyMap> {
        let mut tape = Tape::new();
        let nodes = params.inject(&mut tape);
        let out = self.forward_on_tape(&mut tape, &nodes, features)?;
        SaliencyMap::from_tensor(tape.value(out))
    }
}

impl AdaptableModel for SaliencyNet {
    type Sample = SaliencySample;

    fn loss(&self, params: &ParameterSet, batch: &[SaliencySample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut tape = Tape::new();
        let nodes = params.inject(&mut tape);
        let mut total = 0.0;
        for sample in batch {
            let pred = self.forward_on_tape(&mut tape, &nodes, &sample.features)?;
            let loss = tape.kl_loss(pred, &sample.target.to_tensor())?;
            total += tape.value(loss).item();
        }
        Ok(total / batch.len() as f64)
    }

    fn loss_and_grads(
        &self,
        params: &ParameterSet,
        batch: &[SaliencySample],
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut tape = Tape::new();
        let nodes = params.inject(&mut tape);
        let mut loss_nodes = Vec::new();
        for sample in batch {
            let pred = self.forward_on_tape(&mut tape, &nodes, &sample.features)?;
            loss_nodes.push(tape.kl_loss(pred, &sample.target.to_tensor())?);
        }
        let mut acc = loss_nodes[0];
        for &l in &loss_nodes[1..] {
            acc = tape.add(acc, l)?;
        }
        let mean = tape.scale(acc, 1.0 / batch.len() as f64);
        let grads = tape.backward(mean)?;
        let named = nodes
            .iter()
            .map(|(name, &id)| (name.clone(), tape.grad(&grads, id).clone()))
            .collect();
        Ok((tape.value(mean).item(), named))
    }
}

// ── task generation ──────────────────────────────────────────────────

/// Provider of per-video frame/target pairs for task construction.
pub trait VideoFeatureSource {
    fn video_count(&self) -> usize;
    fn frames(&self, video: usize) -> Result<Vec<SaliencySample>>;
}

pub const SUPPORT_SIZE: usize = 5;
pub const QUERY_SIZE: usize = 15;

/// Per video: draw 20 random frames and split them 5 support / 15 query.
pub fn make_saliency_tasks(
    source: &dyn VideoFeatureSource,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SaliencyTask>> {
    let mut tasks = Vec::with_capacity(source.video_count());
    for video in 0..source.video_count() {
        let frames = source.frames(video)?;
        let need = SUPPORT_SIZE + QUERY_SIZE;
        if frames.len() < need {
            return Err(Error::Data(format!(
                "video {video} has {} frames, need at least {need}",
                frames.len()
            )));
        }
        let mut indices: Vec<usize> = (0..frames.len()).collect();
        indices.shuffle(rng);
        let drawn = &indices[..need];
        let support = drawn[..SUPPORT_SIZE]
            .iter()
            .map(|&i| frames[i].clone())
            .collect();
        let query = drawn[SUPPORT_SIZE..]
            .iter()
            .map(|&i| frames[i].clone())
            .collect();
        tasks.push(Task { support, query });
    }
    Ok(tasks)
}

/// Self-contained synthetic task family: each "video" has its own target blob
/// width; frames show a noisy blob whose center defines the target saliency.
#[derive(Debug, Clone)]
pub struct SyntheticTaskFamily {
    pub net_config: SaliencyNetConfig,
    pub videos: usize,
    pub frames_per_video: usize,
    pub input_sigma: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticTaskFamily {
    fn default() -> Self {
        SyntheticTaskFamily {
            net_config: SaliencyNetConfig::default(),
            videos: 8,
            frames_per_video: 24,
            input_sigma: 1.5,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl VideoFeatureSource for SyntheticTaskFamily {
    fn video_count(&self) -> usize {
        self.videos
    }

    fn frames(&self, video: usize) -> Result<Vec<SaliencySample>> {
        let (h, w) = (self.net_config.input_h, self.net_config.input_w);
        let mut rng = seeded_rng(self.seed.wrapping_mul(1_000_003).wrapping_add(video as u64));
        // The per-video trait: how widely the audience's attention spreads.
        let target_sigma = rng.gen_range(1.0..3.0);
        let mut frames = Vec::with_capacity(self.frames_per_video);
        for _ in 0..self.frames_per_video {
            let (cy, cx) = random_center(&mut rng, h, w);
            let blob = gaussian_blob(h, w, cy, cx, self.input_sigma);
            let peak = blob.values().iter().cloned().fold(0.0f64, f64::max);
            let features = Tensor::new(
                vec![1, h, w],
                blob.values()
                    .iter()
                    .map(|&v| v / peak + rng.gen_range(-self.noise..=self.noise))
                    .collect(),
            )?;
            let target = gaussian_blob(h, w, cy, cx, target_sigma);
            frames.push(SaliencySample { features, target });
        }
        Ok(frames)
    }
}

// ── meta-training driver and checkpointing ───────────────────────────

/// Meta-train from scratch over tasks drawn from the source. Returns the
/// meta-learned initialization and the per-iteration mean query loss.
pub fn meta_train(
    net: &SaliencyNet,
    source: &dyn VideoFeatureSource,
    config: &MetaConfig,
    seed: u64,
) -> Result<(ParameterSet, Vec<f64>)> {
    let theta = net.init_params(seed);
    meta_train_from(net, source, config, seed, theta, 0)
}

/// Continue meta-training from `start_iter` with the given parameters. The
/// task-sampling RNG is derived per iteration from `(seed, iteration)`, so a
/// resumed run reproduces a straight one exactly.
pub fn meta_train_from(
    net: &SaliencyNet,
    source: &dyn VideoFeatureSource,
    config: &MetaConfig,
    seed: u64,
    mut theta: ParameterSet,
    start_iter: usize,
) -> Result<(ParameterSet, Vec<f64>)> {
    config.validate()?;
    if start_iter > config.meta_iterations {
        return Err(Error::invalid("start iteration beyond the configured total"));
    }
    let mut curve = Vec::with_capacity(config.meta_iterations - start_iter);
    for iter in start_iter..config.meta_iterations {
        let mut rng = seeded_rng(
            seed.wrapping_add(0x5EED)
                .wrapping_add((iter as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let tasks = make_saliency_tasks(source, &mut rng)?;
        let batch: Vec<SaliencyTask> = (0..config.task_batch_size)
            .map(|_| tasks[rng.gen_range(0..tasks.len())].clone())
            .collect();
        let loss = fomaml_meta_step(net, &mut theta, &batch, config)?;
        curve.push(loss);
    }
    Ok((theta, curve))
}

/// Metadata stored next to the weights in a meta-checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaCheckpointInfo {
    pub net: SaliencyNetConfig,
    pub meta: MetaConfig,
    pub iterations_run: usize,
}

pub fn save_meta_checkpoint(path: &Path, params: &ParameterSet, info: &MetaCheckpointInfo) -> Result<()> {
    let meta = serde_json::to_string(info).map_err(|e| Error::Data(e.to_string()))?;
    save_checkpoint(path, params, &meta)
}

pub fn load_meta_checkpoint(path: &Path) -> Result<(ParameterSet, MetaCheckpointInfo)> {
    let (params, meta) = load_checkpoint(path)?;
    let info = serde_json::from_str(&meta)
        .map_err(|e| Error::Data(format!("{}: bad meta-checkpoint metadata: {e}", path.display())))?;
    Ok((params, info))
}
