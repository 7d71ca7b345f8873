//! Hierarchical run configuration. `Default` is the paper-scale profile; every table
//! rejects unknown keys.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mcdm_core::data::{PairStrategy, PhantomSpec};
use mcdm_core::diffusion::{DenoiserConfig, LvdmTrainConfig, Sampler, VaeConfig, VaeTrainConfig};
use mcdm_core::mafe::{LossWeights, MafeConfig, MafeTrainConfig};
use mcdm_core::nn::ScheduleKind;
use mcdm_core::pseudo::{BlockMatchConfig, ReidConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomClass {
    pub name: String,
    pub pulse_amplitude: f64,
    pub period: f64,
    pub base_radius: f64,
    pub speckle_sigma: f64,
    pub cone_angle: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSelection {
    MaxDiff,
    FixedStride,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Existing dataset (clips plus `manifest.csv`); phantoms are generated when unset.
    pub dataset_dir: Option<PathBuf>,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub fps: f32,
    /// Videos per class and split.
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub classes: Vec<PhantomClass>,
    pub window: usize,
    pub pair_strategy: PairSelection,
    pub pair_start: usize,
    pub pairs_per_clip: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset_dir: None,
            height: 112,
            width: 112,
            frames: 128,
            fps: 50.,
            train_per_class: 32,
            val_per_class: 4,
            test_per_class: 8,
            classes: vec![
                PhantomClass { name: "high".into(), pulse_amplitude: 0.25, period: 32., base_radius: 28., speckle_sigma: 0.15, cone_angle: 75. },
                PhantomClass { name: "low".into(), pulse_amplitude: 0.08, period: 32., base_radius: 28., speckle_sigma: 0.15, cone_angle: 75. },
            ],
            window: 16,
            pair_strategy: PairSelection::MaxDiff,
            pair_start: 0,
            pairs_per_clip: 1,
        }
    }
}

impl DataConfig {
    pub fn strategy(&self) -> PairStrategy {
        match self.pair_strategy {
            PairSelection::MaxDiff => PairStrategy::MaxDiff,
            PairSelection::FixedStride => PairStrategy::FixedStride { start: self.pair_start },
        }
    }

    pub fn phantom_spec(&self, class: &PhantomClass, seed: u64, phase: f64) -> PhantomSpec {
        PhantomSpec {
            base_radius: class.base_radius,
            pulse_amplitude: class.pulse_amplitude,
            period: class.period,
            speckle_sigma: class.speckle_sigma,
            cone_angle: class.cone_angle,
            seed,
            height: self.height,
            width: self.width,
            phase,
            fps: self.fps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MafeSection {
    pub channels: [usize; 4],
    pub window: usize,
    pub head_channels: usize,
    pub refine_channels: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub warmup: usize,
    pub batch_size: usize,
    pub schedule: ScheduleKind,
    pub steps: usize,
    pub pyramid_levels: usize,
    pub clip_grad_norm: f64,
    pub swap_augment: bool,
    /// Leading frames used to compute each video's motion vector; whole clip when unset.
    pub motion_frames: Option<usize>,
}

impl Default for MafeSection {
    fn default() -> Self {
        let m = MafeConfig::default();
        let t = MafeTrainConfig::default();
        Self {
            channels: m.channels,
            window: m.window,
            head_channels: m.head_channels,
            refine_channels: m.refine_channels,
            lambda1: t.weights.lambda1,
            lambda2: t.weights.lambda2,
            lr: t.lr,
            warmup: t.warmup,
            batch_size: t.batch_size,
            schedule: t.schedule,
            steps: t.steps,
            pyramid_levels: t.pyramid_levels,
            clip_grad_norm: t.clip_grad_norm,
            swap_augment: t.swap_augment,
            motion_frames: None,
        }
    }
}

impl MafeSection {
    pub fn model(&self) -> MafeConfig {
        MafeConfig { channels: self.channels, window: self.window, head_channels: self.head_channels, refine_channels: self.refine_channels }
    }

    pub fn train(&self, seed: u64) -> MafeTrainConfig {
        MafeTrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            warmup: self.warmup,
            schedule: self.schedule,
            weights: LossWeights { lambda1: self.lambda1, lambda2: self.lambda2 },
            pyramid_levels: self.pyramid_levels,
            clip_grad_norm: self.clip_grad_norm,
            swap_augment: self.swap_augment,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMethod {
    BlockMatch,
    Import,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PseudoSection {
    pub temperature: f64,
    pub reid_channels: usize,
    pub reid_steps: usize,
    pub reid_batch_videos: usize,
    pub reid_lr: f64,
    pub holdout_every: usize,
    pub flow_method: FlowMethod,
    /// Directory of `<video_id>.mcfl` files for `flow_method = "import"`.
    pub flow_import_dir: Option<PathBuf>,
    pub patch: usize,
    pub search: usize,
    pub stride: usize,
}

impl Default for PseudoSection {
    fn default() -> Self {
        let r = ReidConfig::default();
        let b = BlockMatchConfig::default();
        Self {
            temperature: r.temperature,
            reid_channels: r.channels,
            reid_steps: r.steps,
            reid_batch_videos: r.batch_videos,
            reid_lr: r.lr,
            holdout_every: r.holdout_every,
            flow_method: FlowMethod::BlockMatch,
            flow_import_dir: None,
            patch: b.patch,
            search: b.search,
            stride: b.stride,
        }
    }
}

impl PseudoSection {
    /// The embedding width always follows the MAFE appearance width.
    pub fn reid(&self, embedding_dim: usize, seed: u64) -> ReidConfig {
        ReidConfig {
            channels: self.reid_channels,
            embedding_dim,
            temperature: self.temperature,
            steps: self.reid_steps,
            batch_videos: self.reid_batch_videos,
            lr: self.reid_lr,
            seed,
            holdout_every: self.holdout_every,
        }
    }

    pub fn block_match(&self) -> BlockMatchConfig {
        BlockMatchConfig { patch: self.patch, search: self.search, stride: self.stride }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeSection {
    pub channels: usize,
    pub latent_channels: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub kl_weight: f64,
}

impl Default for VaeSection {
    fn default() -> Self {
        let (m, t) = (VaeConfig::default(), VaeTrainConfig::default());
        Self { channels: m.channels, latent_channels: m.latent_channels, steps: t.steps, batch_size: t.batch_size, lr: t.lr, kl_weight: t.kl_weight }
    }
}

impl VaeSection {
    pub fn model(&self) -> VaeConfig {
        VaeConfig { channels: self.channels, latent_channels: self.latent_channels }
    }

    pub fn train(&self, seed: u64) -> VaeTrainConfig {
        VaeTrainConfig { steps: self.steps, batch_size: self.batch_size, lr: self.lr, kl_weight: self.kl_weight, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub blocks: usize,
    pub base_channels: usize,
    pub temporal_attention: bool,
    pub groups: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub clip_frames: usize,
    pub steps: usize,
    pub warmup: usize,
    pub schedule: ScheduleKind,
    pub p_drop: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let d = DenoiserConfig::default();
        Self {
            t_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            blocks: d.residual_blocks,
            base_channels: d.base_channels,
            temporal_attention: d.temporal_attention,
            groups: d.groups,
            lr: 1e-4,
            batch_size: 64,
            clip_frames: 16,
            steps: 100_000,
            warmup: 1000,
            schedule: ScheduleKind::Constant,
            p_drop: 0.1,
        }
    }
}

impl DiffusionSection {
    pub fn denoiser(&self, latent_channels: usize, conditioning_dim: usize) -> DenoiserConfig {
        DenoiserConfig {
            residual_blocks: self.blocks,
            base_channels: self.base_channels,
            latent_channels,
            temporal_attention: self.temporal_attention,
            conditioning_dim,
            groups: self.groups,
        }
    }

    pub fn train(&self, seed: u64) -> LvdmTrainConfig {
        LvdmTrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            clip_frames: self.clip_frames,
            lr: self.lr,
            warmup: self.warmup,
            schedule: self.schedule,
            p_drop: self.p_drop,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub frames: usize,
    pub sampler: Sampler,
    pub seed: u64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { frames: 128, sampler: Sampler::Ancestral, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub clip_lengths: Vec<usize>,
    pub embedder_seed: u64,
    pub windows_per_clip: usize,
    pub classifier_steps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { clip_lengths: vec![16, 128], embedder_seed: 0, windows_per_clip: 1, classifier_steps: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    /// Training steps per cell; the MAFE step count when unset.
    pub steps: Option<usize>,
    pub workers: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { lambda1: vec![0., 1., 5., 10.], lambda2: vec![0., 0.005, 0.01, 0.05, 0.1], steps: None, workers: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub mafe: MafeSection,
    pub pseudo: PseudoSection,
    pub vae: VaeSection,
    pub diffusion: DiffusionSection,
    pub sample: SampleSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.dataset_dir.is_none() && d.classes.is_empty() {
            bail!("data.classes is empty and no data.dataset_dir is given");
        }
        if d.train_per_class == 0 || d.test_per_class == 0 {
            bail!("data.train_per_class and data.test_per_class must be positive");
        }
        if d.frames < d.window || d.window < 3 {
            bail!("data.window must lie in [3, data.frames]");
        }
        self.mafe.model().validate()?;
        self.mafe.train(self.seed).weights.validate()?;
        self.diffusion.denoiser(self.vae.latent_channels, self.mafe.model().motion_dim()).validate()?;
        if self.eval.clip_lengths.is_empty() {
            bail!("eval.clip_lengths is empty");
        }
        if self.ablation.lambda1.is_empty() || self.ablation.lambda2.is_empty() {
            bail!("ablation grid axes must be non-empty");
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}
