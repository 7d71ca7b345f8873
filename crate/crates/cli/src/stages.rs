//! One function per pipeline stage. Every stage reads its inputs from and writes its
//! outputs to the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use candle_core::DType;
use mcdm_core::data::{
    analytic_flow, clip_path, generate_phantom, load_video_dataset, read_clip, read_flow_store, read_manifest, select_frame_pair,
    select_frame_pairs, write_clip, write_feature_store, write_flow_store, write_manifest, FeatureRecord, FeatureStore, FlowField,
    FramePair, PhantomSpec, Split, VideoClip,
};
use mcdm_core::diffusion::{
    encode_clip, latent_scale, make_noise_schedule, sample_video, train_vae, LvdmTrainer, BetaSchedule, CondNorm, Denoiser, LatentVideo,
    NoiseSchedule, SampleConfig, Vae,
};
use mcdm_core::mafe::{predict_pairs, Mafe, MafeConfig, MafeTrainer, MafeTrainConfig, StepLoss, TrainingPair};
use mcdm_core::metrics::{
    endpoint_error, fid, fvd, psnr, ssim, ClipEmbedder, MetricReport, RandomConvEmbedder, SoftmaxClassifier, SsimConfig,
};
use mcdm_core::nn::{frame_tensor, load_checkpoint, read_checkpoint_meta, save_checkpoint, AdamW, CheckpointMeta, ParamStore};
use mcdm_core::pseudo::{block_match_flow, export_embeddings, pair_embeddings, reid_separation, train_reid, ReidEmbedder, Separation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::FlowMethod;
use crate::run::{RunContext, Stage};

pub const DTYPE: DType = DType::F32;
pub const PHANTOM_INFO: &str = "phantoms.json";

/// Per-video phantom parameters and class index, written next to generated clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoInfo {
    pub class: usize,
    pub spec: PhantomSpec,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Deterministic sub-seed for a named component.
pub fn derive_seed(seed: u64, component: &str) -> u64 {
    component.bytes().fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3))
}

pub fn phantom_info(ctx: &RunContext) -> Result<Option<BTreeMap<String, VideoInfo>>> {
    let p = ctx.data_dir().join(PHANTOM_INFO);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(read_json(&p)?))
}

pub fn load_split(ctx: &RunContext, split: Split) -> Result<Vec<VideoClip>> {
    Ok(load_video_dataset(&ctx.data_dir(), split)?)
}

/// Clips of every split, in manifest order.
pub fn load_all(ctx: &RunContext) -> Result<Vec<(VideoClip, Split)>> {
    let root = ctx.data_dir();
    let mut out = Vec::new();
    for (id, split) in read_manifest(&root)? {
        match read_clip(&clip_path(&root, &id), &id) {
            Ok(c) => out.push((c, split)),
            Err(e) => log::warn!("skipping clip {id}: {e}"),
        }
    }
    if out.is_empty() {
        bail!("dataset {} has no readable clips", root.display());
    }
    Ok(out)
}

pub fn select_pairs(ctx: &RunContext, clip: &VideoClip) -> Result<Vec<FramePair>> {
    let d = &ctx.config.data;
    Ok(select_frame_pairs(clip, d.strategy(), d.window.min(clip.len()), d.pairs_per_clip)?)
}

// ---------------------------------------------------------------------------------------
// phantom-gen

pub fn phantom_gen(ctx: &RunContext) -> Result<()> {
    let d = &ctx.config.data;
    if d.dataset_dir.is_some() {
        log::info!("data.dataset_dir is set; nothing to generate");
        return Ok(());
    }
    let root = ctx.data_dir();
    std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.config.seed, "phantom"));
    let mut manifest = Vec::new();
    let mut info = BTreeMap::new();
    for (split, per_class) in [(Split::Train, d.train_per_class), (Split::Val, d.val_per_class), (Split::Test, d.test_per_class)] {
        for (k, class) in d.classes.iter().enumerate() {
            for i in 0..per_class {
                let id = format!("{split}-{}-{i:03}", class.name);
                let spec = d.phantom_spec(class, rng.random(), rng.random());
                let (clip, _) = generate_phantom(id.clone(), &spec, d.frames)?;
                write_clip(&clip_path(&root, &id), &clip)?;
                manifest.push((id.clone(), split));
                info.insert(id, VideoInfo { class: k, spec });
            }
        }
    }
    write_manifest(&root, &manifest)?;
    write_json(&root.join(PHANTOM_INFO), &info)?;
    log::info!("wrote {} phantom clips to {}", manifest.len(), root.display());
    Ok(())
}

// ---------------------------------------------------------------------------------------
// train-reid

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReidSummary {
    pub losses: Vec<f64>,
    pub same_mean: f64,
    pub cross_mean: f64,
    pub fraction: f64,
    pub triples: usize,
}

pub fn reid_embedder(ctx: &RunContext) -> (ParamStore, mcdm_core::pseudo::ReidConfig) {
    let cfg = ctx.config.pseudo.reid(ctx.config.mafe.model().embedding_dim(), derive_seed(ctx.config.seed, "reid"));
    (ParamStore::new(derive_seed(ctx.config.seed, "reid-init"), DTYPE), cfg)
}

pub fn train_reid_stage(ctx: &RunContext) -> Result<Separation> {
    let train = load_split(ctx, Split::Train)?;
    let (ps, cfg) = reid_embedder(ctx);
    let model = ReidEmbedder::new(&ps, &cfg)?;
    let report = train_reid(&model, &ps, &train, &cfg)?;
    let all: Vec<VideoClip> = load_all(ctx)?.into_iter().map(|(c, _)| c).collect();
    let records = export_embeddings(&model, &all, DTYPE)?;
    write_feature_store(&ctx.path("reid_embeddings.mcfs"), &records)?;
    let store = FeatureStore::from_records(records);
    let sep = reid_separation(&store, &train, &cfg)?;
    let meta = CheckpointMeta { config_hash: ctx.hash.clone(), step: cfg.steps, model_config: serde_json::to_string(&cfg)?, ..Default::default() };
    save_checkpoint(&ctx.path("reid.safetensors"), &ps, report.optimizer.as_ref(), &meta)?;
    write_json(
        &ctx.path("reid_report.json"),
        &ReidSummary { losses: report.losses, same_mean: sep.same_mean, cross_mean: sep.cross_mean, fraction: sep.fraction, triples: sep.triples },
    )?;
    log::info!("reid separation: same {:.3} cross {:.3} fraction {:.3}", sep.same_mean, sep.cross_mean, sep.fraction);
    Ok(sep)
}

// ---------------------------------------------------------------------------------------
// gen-flow

fn flow_dir(ctx: &RunContext) -> PathBuf {
    ctx.path("pseudo_flow")
}

pub fn gen_flow(ctx: &RunContext) -> Result<()> {
    let dir = flow_dir(ctx);
    std::fs::create_dir_all(&dir)?;
    let p = &ctx.config.pseudo;
    let bm = p.block_match();
    for (clip, _) in load_all(ctx)? {
        let pairs = select_pairs(ctx, &clip)?;
        let flows = match p.flow_method {
            FlowMethod::BlockMatch => {
                pairs.iter().map(|pr| block_match_flow(pr.i0.view(), pr.i1.view(), &bm)).collect::<mcdm_core::Result<Vec<_>>>()?
            }
            FlowMethod::Import => {
                let src = p.flow_import_dir.as_ref().ok_or_else(|| anyhow!("flow_method = \"import\" needs pseudo.flow_import_dir"))?;
                let path = src.join(format!("{}.mcfl", clip.id));
                if !path.exists() {
                    bail!("lookup failed: no imported flow file {} for video {}", path.display(), clip.id);
                }
                let flows = read_flow_store(&path)?;
                if flows.len() != pairs.len() || flows.iter().any(|f| f.dim() != (clip.height(), clip.width())) {
                    bail!("{}: expected {} flows of {}x{}", path.display(), pairs.len(), clip.height(), clip.width());
                }
                flows
            }
        };
        write_flow_store(&dir.join(format!("{}.mcfl", clip.id)), &flows)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------------------
// train-mafe

/// Selected pairs of `split` with their pseudo embeddings and flows attached.
pub fn training_pairs(ctx: &RunContext, split: Split) -> Result<Vec<TrainingPair>> {
    let reid = FeatureStore::open(&ctx.path("reid_embeddings.mcfs"))?;
    let mut out = Vec::new();
    for clip in load_split(ctx, split)? {
        let pairs = select_pairs(ctx, &clip)?;
        let path = flow_dir(ctx).join(format!("{}.mcfl", clip.id));
        let flows = read_flow_store(&path).with_context(|| format!("pseudo flows for {}", clip.id))?;
        if flows.len() != pairs.len() {
            bail!("{} holds {} flows for {} pairs; rerun gen-flow", path.display(), flows.len(), pairs.len());
        }
        for (pair, flow) in pairs.into_iter().zip(flows) {
            let emb = pair_embeddings(&reid, &pair.video_id, pair.i0_index, pair.i1_index)?;
            out.push(TrainingPair { pair, reid: Some(emb), flow: Some(flow) });
        }
    }
    Ok(out)
}

/// Held-out interpolation quality of a MAFE model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MafeEval {
    pub pairs: usize,
    pub psnr: f64,
    pub baseline_psnr: f64,
    pub ssim: f64,
    pub baseline_ssim: f64,
    /// Endpoint error of `flow_t1 - flow_t0` against the analytic phantom flow.
    pub epe: Option<f64>,
}

fn average(i0: &ndarray::Array2<f32>, i1: &ndarray::Array2<f32>) -> ndarray::Array2<f32> {
    (i0 + i1) * 0.5
}

/// PSNR is averaged over pairs in dB; capped at 100 dB for exact reconstructions.
pub fn evaluate_mafe(ctx: &RunContext, model: &Mafe, split: Split) -> Result<MafeEval> {
    let clips = load_split(ctx, split)?;
    let info = phantom_info(ctx)?;
    let pairs: Vec<FramePair> = clips.iter().map(|c| select_pairs(ctx, c)).collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    let preds = predict_pairs(model, &pairs, DTYPE)?;
    let ssim_cfg = SsimConfig { window: 11.min(odd_floor(ctx.config.data.height.min(ctx.config.data.width))), ..Default::default() };
    let mut e = MafeEval { pairs: pairs.len(), ..Default::default() };
    let (mut epe_sum, mut epe_n) = (0., 0usize);
    for (pair, pred) in pairs.iter().zip(&preds) {
        let base = average(&pair.i0, &pair.i1);
        e.psnr += psnr(pair.gt.view(), pred.frame.view(), 1.)?.min(100.);
        e.baseline_psnr += psnr(pair.gt.view(), base.view(), 1.)?.min(100.);
        e.ssim += ssim(pair.gt.view(), pred.frame.view(), &ssim_cfg)?;
        e.baseline_ssim += ssim(pair.gt.view(), base.view(), &ssim_cfg)?;
        if let Some(spec) = info.as_ref().and_then(|m| m.get(&pair.video_id)).map(|v| &v.spec) {
            let truth = analytic_flow(spec, pair.i0_index as f64, pair.i1_index as f64);
            let full = FlowField::new(&pred.flow_t1.u - &pred.flow_t0.u, &pred.flow_t1.v - &pred.flow_t0.v)?;
            epe_sum += endpoint_error(&full, &truth)?;
            epe_n += 1;
        }
    }
    let n = pairs.len().max(1) as f64;
    e.psnr /= n;
    e.baseline_psnr /= n;
    e.ssim /= n;
    e.baseline_ssim /= n;
    e.epe = (epe_n > 0).then(|| epe_sum / epe_n as f64);
    Ok(e)
}

fn odd_floor(n: usize) -> usize {
    if n % 2 == 1 {
        n
    } else {
        n - 1
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MafeSummary {
    pub losses: Vec<StepLoss>,
    pub initial_eval_loss: StepLoss,
    pub final_eval_loss: StepLoss,
    pub held_out: MafeEval,
}

pub struct FittedMafe {
    pub params: ParamStore,
    pub model: Mafe,
    pub optimizer: AdamW,
    pub summary: MafeSummary,
}

/// Builds a fresh model, trains it with `train_cfg` on the train split and returns it.
pub fn fit_mafe(ctx: &RunContext, train_cfg: &MafeTrainConfig, init_seed: u64) -> Result<FittedMafe> {
    let data = training_pairs(ctx, Split::Train)?;
    let params = ParamStore::new(init_seed, DTYPE);
    let model = Mafe::new(&params, ctx.config.mafe.model())?;
    let initial = mcdm_core::mafe::evaluate_loss(&model, &data, train_cfg, DTYPE)?;
    let mut trainer = MafeTrainer::new(&model, &params, train_cfg.clone())?;
    let losses = (0..train_cfg.steps).map(|_| trainer.step(&data)).collect::<mcdm_core::Result<Vec<_>>>()?;
    let optimizer = trainer.into_optimizer();
    let fin = mcdm_core::mafe::evaluate_loss(&model, &data, train_cfg, DTYPE)?;
    let held_out = evaluate_mafe(ctx, &model, Split::Test)?;
    let summary = MafeSummary { losses, initial_eval_loss: initial, final_eval_loss: fin, held_out };
    Ok(FittedMafe { params, model, optimizer, summary })
}

pub fn train_mafe_stage(ctx: &RunContext) -> Result<MafeSummary> {
    let cfg = ctx.config.mafe.train(derive_seed(ctx.config.seed, "mafe"));
    let fit = fit_mafe(ctx, &cfg, derive_seed(ctx.config.seed, "mafe-init"))?;
    let meta = CheckpointMeta {
        config_hash: ctx.hash.clone(),
        step: cfg.steps,
        model_config: serde_json::to_string(&ctx.config.mafe.model())?,
        ..Default::default()
    };
    save_checkpoint(&ctx.path("mafe.safetensors"), &fit.params, Some(&fit.optimizer), &meta)?;
    write_json(&ctx.path("mafe_report.json"), &fit.summary)?;
    let h = &fit.summary.held_out;
    log::info!("mafe held-out psnr {:.2} dB (average baseline {:.2} dB)", h.psnr, h.baseline_psnr);
    Ok(fit.summary)
}

pub fn load_mafe(ctx: &RunContext) -> Result<Mafe> {
    let path = ctx.path("mafe.safetensors");
    let meta = read_checkpoint_meta(&path)?;
    let cfg: MafeConfig = serde_json::from_str(&meta.model_config)?;
    let ps = ParamStore::new(0, DTYPE);
    let model = Mafe::new(&ps, cfg)?;
    load_checkpoint(&path, &ps, None)?;
    Ok(model)
}

// ---------------------------------------------------------------------------------------
// extract-motion

/// Motion vector of the selected pair inside the first `motion_frames` frames of a clip.
pub fn clip_motion_vector(ctx: &RunContext, model: &Mafe, clip: &VideoClip) -> Result<Vec<f32>> {
    let d = &ctx.config.data;
    let n = ctx.config.mafe.motion_frames.unwrap_or(clip.len()).min(clip.len());
    let sub = VideoClip::new(clip.id.clone(), clip.frames.slice(ndarray::s![..n, .., ..]).to_owned(), clip.fps)?;
    let pair = select_frame_pair(&sub, d.strategy(), d.window.min(n))?;
    let v = model.motion_vectors(&frame_tensor(&pair.i0, DTYPE)?, &frame_tensor(&pair.i1, DTYPE)?)?;
    Ok(v.squeeze(0)?.to_dtype(DType::F32)?.to_vec1::<f32>()?)
}

pub fn extract_motion(ctx: &RunContext) -> Result<()> {
    let model = load_mafe(ctx)?;
    let mut records = Vec::new();
    for (clip, _) in load_all(ctx)? {
        records.push(FeatureRecord::new(clip.id.clone(), clip_motion_vector(ctx, &model, &clip)?));
    }
    write_feature_store(&ctx.path("motion.mcfs"), &records)?;
    Ok(())
}

// ---------------------------------------------------------------------------------------
// train-vae

pub fn train_vae_stage(ctx: &RunContext) -> Result<()> {
    let all = load_all(ctx)?;
    let frames: Vec<_> = all.iter().filter(|(_, s)| *s == Split::Train).flat_map(|(c, _)| (0..c.len()).map(|t| c.frame_owned(t))).collect();
    let ps = ParamStore::new(derive_seed(ctx.config.seed, "vae-init"), DTYPE);
    let vae = Vae::new(&ps, ctx.config.vae.model())?;
    let report = train_vae(&vae, &ps, &frames, &ctx.config.vae.train(derive_seed(ctx.config.seed, "vae")))?;
    let mut encoded = Vec::new();
    for (clip, split) in &all {
        let fr: Vec<_> = (0..clip.len()).map(|t| clip.frame_owned(t)).collect();
        encoded.push((clip.id.clone(), *split, encode_clip(&vae, &fr, DTYPE)?));
    }
    let scale = latent_scale(encoded.iter().filter(|(_, s, _)| *s == Split::Train).map(|(_, _, z)| z))?;
    let records = encoded
        .into_iter()
        .map(|(id, _, z)| LatentVideo { id, z: (z * scale as f64)?, scale }.to_record().map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    write_feature_store(&ctx.path("latents.mcfs"), &records)?;
    let meta = CheckpointMeta {
        config_hash: ctx.hash.clone(),
        step: report.losses.len(),
        model_config: serde_json::to_string(&ctx.config.vae.model())?,
        ..Default::default()
    };
    save_checkpoint(&ctx.path("vae.safetensors"), &ps, report.optimizer.as_ref(), &meta)?;
    write_json(&ctx.path("vae_losses.json"), &report.losses)?;
    Ok(())
}

pub fn load_vae(ctx: &RunContext) -> Result<Vae> {
    let path = ctx.path("vae.safetensors");
    let meta = read_checkpoint_meta(&path)?;
    let ps = ParamStore::new(0, DTYPE);
    let vae = Vae::new(&ps, serde_json::from_str(&meta.model_config)?)?;
    load_checkpoint(&path, &ps, None)?;
    Ok(vae)
}

// ---------------------------------------------------------------------------------------
// train-lvdm

pub fn noise_schedule(ctx: &RunContext) -> Result<NoiseSchedule> {
    let d = &ctx.config.diffusion;
    Ok(make_noise_schedule(d.t_steps, d.beta_start, d.beta_end, BetaSchedule::Linear)?)
}

pub fn train_lvdm_stage(ctx: &RunContext) -> Result<Vec<f64>> {
    let motion = FeatureStore::open(&ctx.path("motion.mcfs"))?;
    let train_ids: std::collections::HashSet<String> =
        read_manifest(&ctx.data_dir())?.into_iter().filter(|(_, s)| *s == Split::Train).map(|(id, _)| id).collect();
    let latents = mcdm_core::data::read_feature_store(&ctx.path("latents.mcfs"))?
        .iter()
        .filter(|r| train_ids.contains(&r.id))
        .map(|r| LatentVideo::from_record(r, DTYPE))
        .collect::<mcdm_core::Result<Vec<_>>>()?;
    mcdm_core::diffusion::check_motion_ids(&latents, &motion)?;
    let norm = CondNorm::fit(latents.iter().map(|l| motion.get(&l.id)).collect::<mcdm_core::Result<Vec<_>>>()?)?;
    let cz = latents.first().map(|l| l.z.dim(1)).transpose()?.ok_or_else(|| anyhow!("no training latents"))?;
    let cfg = ctx.config.diffusion.denoiser(cz, motion.dim());
    let ps = ParamStore::new(derive_seed(ctx.config.seed, "lvdm-init"), DTYPE);
    let model = Denoiser::new(&ps, cfg.clone(), norm.clone())?;
    let schedule = noise_schedule(ctx)?;
    let train_cfg = ctx.config.diffusion.train(derive_seed(ctx.config.seed, "lvdm"));
    ensure!(motion.dim() == cfg.conditioning_dim, "motion vectors have dim {}, denoiser expects {}", motion.dim(), cfg.conditioning_dim);
    let mut trainer = LvdmTrainer::new(&model, &ps, &schedule, train_cfg.clone())?;
    let losses = (0..train_cfg.steps).map(|_| trainer.step(&latents, &motion)).collect::<mcdm_core::Result<Vec<_>>>()?;
    let optimizer = trainer.into_optimizer();
    let mut meta =
        CheckpointMeta { config_hash: ctx.hash.clone(), step: losses.len(), model_config: serde_json::to_string(&cfg)?, ..Default::default() };
    meta.extra.insert("cond_norm".into(), serde_json::to_string(&norm)?);
    meta.extra.insert("latent_scale".into(), latents[0].scale.to_string());
    save_checkpoint(&ctx.path("lvdm.safetensors"), &ps, Some(&optimizer), &meta)?;
    write_json(&ctx.path("lvdm_losses.json"), &losses)?;
    Ok(losses)
}

pub struct LoadedLvdm {
    pub model: Denoiser,
    pub latent_scale: f32,
}

pub fn load_lvdm(ctx: &RunContext) -> Result<LoadedLvdm> {
    let path = ctx.path("lvdm.safetensors");
    let meta = read_checkpoint_meta(&path)?;
    let norm: CondNorm = serde_json::from_str(meta.extra.get("cond_norm").ok_or_else(|| anyhow!("{}: no cond_norm", path.display()))?)?;
    let latent_scale: f32 = meta.extra.get("latent_scale").ok_or_else(|| anyhow!("{}: no latent_scale", path.display()))?.parse()?;
    let ps = ParamStore::new(0, DTYPE);
    let model = Denoiser::new(&ps, serde_json::from_str(&meta.model_config)?, norm)?;
    load_checkpoint(&path, &ps, None)?;
    Ok(LoadedLvdm { model, latent_scale })
}

// ---------------------------------------------------------------------------------------
// sample

#[derive(Clone, Debug, Default)]
pub struct SampleRequest {
    pub cond_id: Option<String>,
    pub frames: Option<usize>,
    pub seed: Option<u64>,
}

pub fn sample_path(ctx: &RunContext, id: &str, frames: usize, seed: u64) -> PathBuf {
    ctx.path("samples").join(format!("{id}__f{frames}_s{seed}.mcvd"))
}

/// Samples one clip per requested conditioning id (every test video by default).
pub fn sample_stage(ctx: &RunContext, req: &SampleRequest) -> Result<Vec<PathBuf>> {
    let lvdm = load_lvdm(ctx)?;
    let vae = load_vae(ctx)?;
    let motion = FeatureStore::open(&ctx.path("motion.mcfs"))?;
    let schedule = noise_schedule(ctx)?;
    let s = &ctx.config.sample;
    let frames = req.frames.unwrap_or(s.frames);
    let seed = req.seed.unwrap_or(s.seed);
    let ids: Vec<String> = match &req.cond_id {
        Some(id) => vec![id.clone()],
        None => read_manifest(&ctx.data_dir())?.into_iter().filter(|(_, sp)| *sp == Split::Test).map(|(id, _)| id).collect(),
    };
    std::fs::create_dir_all(ctx.path("samples"))?;
    let d = &ctx.config.data;
    let mut out = Vec::new();
    for id in ids {
        let cond = motion.get(&id).with_context(|| format!("no motion vector for `{id}`"))?;
        let cfg = SampleConfig { frames, height: d.height, width: d.width, sampler: s.sampler, seed, fps: d.fps };
        let clip = sample_video(&lvdm.model, &vae, &schedule, lvdm.latent_scale, Some(cond), &cfg, &id, DTYPE)?;
        let path = sample_path(ctx, &id, frames, seed);
        write_clip(&path, &clip)?;
        out.push(path);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------------
// evaluate

fn windows(clips: &[VideoClip], len: usize) -> Vec<ndarray::Array3<f32>> {
    clips
        .iter()
        .filter(|c| c.len() >= len)
        .map(|c| {
            let s = (c.len() - len) / 2;
            c.frames.slice(ndarray::s![s..s + len, .., ..]).to_owned()
        })
        .collect()
}

pub fn evaluate_stage(ctx: &RunContext) -> Result<MetricReport> {
    let cfg = &ctx.config;
    let mut report = MetricReport::new(ctx.hash.clone());
    let model = load_mafe(ctx)?;
    let m = evaluate_mafe(ctx, &model, Split::Test)?;
    report.insert("interp_psnr", m.psnr, None, "pixel", 1);
    report.insert("interp_ssim", m.ssim, None, "pixel", 1);
    report.insert("interp_baseline_psnr", m.baseline_psnr, None, "pixel", 1);
    if let Some(epe) = m.epe {
        report.insert("interp_flow_epe", epe, None, "analytic-phantom-flow", 1);
    }

    let real = load_split(ctx, Split::Test)?;
    let frames = cfg.sample.frames;
    let fake = real
        .iter()
        .map(|c| {
            let p = sample_path(ctx, &c.id, frames, cfg.sample.seed);
            read_clip(&p, &c.id).with_context(|| format!("missing sample {}; run `mcdm sample` first", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let embedder = RandomConvEmbedder::new(cfg.eval.embedder_seed)?;
    for &len in &cfg.eval.clip_lengths {
        match fvd(&real, &fake, &embedder, len, cfg.eval.windows_per_clip) {
            Ok(v) => report.insert(format!("fvd{len}"), v, None, embedder.name(), len),
            Err(e) => log::warn!("fvd{len} skipped: {e}"),
        }
    }
    let take = |clips: &[VideoClip]| -> Vec<ndarray::Array2<f32>> {
        clips.iter().flat_map(|c| (0..c.len()).step_by((c.len() / 8).max(1)).map(move |t| c.frame_owned(t))).collect()
    };
    let (rf, ff) = (take(&real), take(&fake));
    let rv: Vec<_> = rf.iter().map(|f| f.view()).collect();
    let fv: Vec<_> = ff.iter().map(|f| f.view()).collect();
    report.insert("fid", fid(&rv, &fv, &embedder)?, None, embedder.name(), 1);

    if let Some(info) = phantom_info(ctx)? {
        let train = load_split(ctx, Split::Train)?;
        let len = cfg.eval.clip_lengths.iter().copied().filter(|&l| l <= frames && l <= cfg.data.frames).min().unwrap_or(frames.min(cfg.data.frames));
        let feats = |clips: &[VideoClip]| -> Result<Vec<Vec<f64>>> { windows(clips, len).iter().map(|w| Ok(embedder.embed(w.view())?)).collect() };
        let labels: Vec<usize> = train.iter().filter(|c| c.len() >= len).map(|c| info.get(&c.id).map_or(0, |v| v.class)).collect();
        let classes = cfg.data.classes.len().max(1);
        let clf = SoftmaxClassifier::fit(&feats(&train)?, &labels, classes, cfg.eval.classifier_steps, 0.5, 1e-3)?;
        let probs = clf.predict_proba(&feats(&fake)?)?;
        let (is, std) = mcdm_core::metrics::inception_score(probs.view())?;
        report.insert("is", is, Some(std), format!("softmax-on-{}", embedder.name()), len);
    }
    report.write(&ctx.dir)?;
    Ok(report)
}

pub fn run_stage(ctx: &RunContext, stage: Stage) -> Result<()> {
    match stage {
        Stage::PhantomGen => phantom_gen(ctx),
        Stage::TrainReid => train_reid_stage(ctx).map(|_| ()),
        Stage::GenFlow => gen_flow(ctx),
        Stage::TrainMafe => train_mafe_stage(ctx).map(|_| ()),
        Stage::ExtractMotion => extract_motion(ctx),
        Stage::TrainVae => train_vae_stage(ctx),
        Stage::TrainLvdm => train_lvdm_stage(ctx).map(|_| ()),
        Stage::Sample => sample_stage(ctx, &SampleRequest::default()).map(|_| ()),
        Stage::Evaluate => evaluate_stage(ctx).map(|_| ()),
    }
}

/// Outcome of one stage inside a pipeline run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

/// Runs `stages` in pipeline order, skipping completed ones unless forced.
pub fn run_pipeline(ctx: &RunContext, stages: &[Stage]) -> Result<Vec<(Stage, StageOutcome)>> {
    let mut ordered = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    let mut out = Vec::new();
    for stage in ordered {
        out.push((stage, run_if_needed(ctx, stage)?));
    }
    Ok(out)
}

pub fn run_if_needed(ctx: &RunContext, stage: Stage) -> Result<StageOutcome> {
    if ctx.is_done(stage) && !ctx.force {
        log::info!("{stage}: already complete for config {}; skipping", ctx.hash);
        return Ok(StageOutcome::Skipped);
    }
    ctx.require(stage)?;
    log::info!("{stage}: running");
    run_stage(ctx, stage).with_context(|| format!("stage `{stage}` failed"))?;
    ctx.mark_done(stage)?;
    Ok(StageOutcome::Ran)
}

/// Mean held-out PSNR of the `(I0 + I1) / 2` blend.
pub fn baseline_psnr(ctx: &RunContext) -> Result<f64> {
    let mut sum = 0.;
    let mut n = 0;
    for clip in load_split(ctx, Split::Test)? {
        for p in select_pairs(ctx, &clip)? {
            sum += psnr(p.gt.view(), average(&p.i0, &p.i1).view(), 1.)?.min(100.);
            n += 1;
        }
    }
    Ok(sum / n.max(1) as f64)
}
