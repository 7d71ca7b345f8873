use candle_core::{DType, Device, Tensor};
use mcdm_core::data::{generate_phantom, FeatureRecord, FeatureStore, PhantomSpec};
use mcdm_core::diffusion::{
    diffusion_mse, encode_clip, gaussian, latent_scale, make_noise_schedule, q_sample, sample_latents, sample_video, train_lvdm,
    train_vae, BetaSchedule, CondNorm, Denoiser, DenoiserConfig, LatentVideo, LvdmTrainConfig, LvdmTrainer, SampleConfig,
    Sampler, Vae, VaeConfig, VaeTrainConfig,
};
use mcdm_core::metrics::psnr;
use mcdm_core::nn::{gradient_check, scalar, tensor_to_frame, frame_tensor, ParamStore};
use mcdm_core::Result;
use rand::SeedableRng;

const COND: usize = 6;

fn toy_denoiser(seed: u64) -> (ParamStore, Denoiser) {
    let ps = ParamStore::new(seed, DType::F32);
    let cfg = DenoiserConfig { residual_blocks: 2, base_channels: 16, latent_channels: 4, temporal_attention: true, conditioning_dim: COND, groups: 4 };
    let d = Denoiser::new(&ps, cfg, CondNorm::identity(COND)).unwrap();
    (ps, d)
}

/// Eight encoded 16x16 phantom clips of 8 frames and a motion store keyed by clip id.
fn toy_latents() -> (Vec<LatentVideo>, FeatureStore) {
    let vae = Vae::new(&ParamStore::new(9, DType::F32), VaeConfig { channels: 8, latent_channels: 4 }).unwrap();
    let mut raw = Vec::new();
    let mut records = Vec::new();
    for s in 0..8u64 {
        let amp = if s % 2 == 0 { 0.3 } else { 0.05 };
        let spec = PhantomSpec { height: 16, width: 16, base_radius: 4., pulse_amplitude: amp, period: 8., seed: s, ..Default::default() };
        let (clip, _) = generate_phantom(format!("v{s}"), &spec, 8).unwrap();
        let frames: Vec<_> = (0..8).map(|t| clip.frame_owned(t)).collect();
        raw.push((clip.id.clone(), encode_clip(&vae, &frames, DType::F32).unwrap()));
        records.push(FeatureRecord::new(clip.id, (0..COND).map(|i| amp as f32 * (i + 1) as f32).collect()));
    }
    let scale = latent_scale(raw.iter().map(|(_, z)| z)).unwrap();
    let latents = raw.into_iter().map(|(id, z)| LatentVideo { id, z: (z * scale as f64).unwrap(), scale }).collect();
    (latents, FeatureStore::from_records(records))
}

#[test]
fn vae_overfits_a_single_frame() -> Result<()> {
    let spec = PhantomSpec { seed: 4, ..Default::default() };
    let (clip, _) = generate_phantom("v", &spec, 16)?;
    let frame = clip.frame_owned(0);
    let ps = ParamStore::new(0, DType::F32);
    let vae = Vae::new(&ps, VaeConfig { channels: 16, latent_channels: 4 })?;
    let cfg = VaeTrainConfig { steps: 1000, batch_size: 1, lr: 2e-3, kl_weight: 1e-6, seed: 0 };
    train_vae(&vae, &ps, std::slice::from_ref(&frame), &cfg)?;
    let z = vae.encode_mean(&frame_tensor(&frame, DType::F32)?)?;
    assert_eq!(z.dims(), &[1, 4, 8, 8]);
    let rec = tensor_to_frame(&vae.decode(&z)?.squeeze(0)?)?;
    let p = psnr(frame.view(), rec.view(), 1.)?;
    assert!(p > 30., "reconstruction PSNR {p:.2} dB");
    Ok(())
}

#[test]
fn lvdm_smoke_run_reduces_loss() -> Result<()> {
    let (latents, motion) = toy_latents();
    let (ps, model) = toy_denoiser(0);
    let schedule = make_noise_schedule(64, 1e-4, 0.02 * 1000. / 64., BetaSchedule::Linear)?;
    let cfg = LvdmTrainConfig { steps: 200, batch_size: 4, clip_frames: 8, lr: 2e-3, warmup: 10, seed: 1, ..Default::default() };
    let losses = train_lvdm(&model, &ps, &latents, &motion, &schedule, &cfg)?;
    let first: f64 = losses[..50].iter().sum::<f64>() / 50.;
    let last: f64 = losses[150..].iter().sum::<f64>() / 50.;
    assert!(last < 0.8 * first, "first-50 mean {first:.4}, last-50 mean {last:.4}");
    Ok(())
}

#[test]
fn lvdm_training_is_bitwise_deterministic() -> Result<()> {
    let (latents, motion) = toy_latents();
    let schedule = make_noise_schedule(64, 1e-4, 0.3, BetaSchedule::Linear)?;
    let cfg = LvdmTrainConfig { steps: 20, batch_size: 2, seed: 5, ..Default::default() };
    let run = || {
        let (ps, model) = toy_denoiser(3);
        train_lvdm(&model, &ps, &latents, &motion, &schedule, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    Ok(())
}

#[test]
fn empty_motion_store_fails_before_training() -> Result<()> {
    let (latents, _) = toy_latents();
    let (ps, model) = toy_denoiser(0);
    let schedule = make_noise_schedule(16, 1e-4, 0.2, BetaSchedule::Linear)?;
    let before = ps.vars()[0].1.as_tensor().flatten_all()?.to_vec1::<f32>()?;
    let err = train_lvdm(&model, &ps, &latents, &FeatureStore::from_records(vec![]), &schedule, &LvdmTrainConfig::default());
    assert!(err.is_err());
    assert_eq!(before, ps.vars()[0].1.as_tensor().flatten_all()?.to_vec1::<f32>()?);
    let partial = FeatureStore::from_records(vec![FeatureRecord::new("v0", vec![0.; COND])]);
    let msg = train_lvdm(&model, &ps, &latents, &partial, &schedule, &LvdmTrainConfig::default()).unwrap_err().to_string();
    assert!(msg.contains("v1") && msg.contains("v7"), "{msg}");
    Ok(())
}

#[test]
fn conditioning_changes_outputs_after_a_step() -> Result<()> {
    let (latents, motion) = toy_latents();
    let (ps, model) = toy_denoiser(2);
    let schedule = make_noise_schedule(64, 1e-4, 0.3, BetaSchedule::Linear)?;
    let mut trainer = LvdmTrainer::new(&model, &ps, &schedule, LvdmTrainConfig { p_drop: 0., ..Default::default() })?;
    trainer.step(&latents, &motion)?;
    let z = gaussian(&[1, 8, 4, 4, 4], DType::F32, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
    let c1 = Tensor::from_slice(motion.get("v0")?, (1, COND), &Device::Cpu)?;
    let c2 = Tensor::from_slice(motion.get("v1")?, (1, COND), &Device::Cpu)?;
    let diff = (model.forward(&z, &[30], Some(&c1), None)? - model.forward(&z, &[30], Some(&c2), None)?)?.abs()?.max_all()?;
    assert!(diff.to_scalar::<f32>()? > 1e-6);
    Ok(())
}

#[test]
fn forward_process_variance_approaches_one() -> Result<()> {
    let schedule = make_noise_schedule(1000, 1e-4, 0.02, BetaSchedule::Linear)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let z0 = gaussian(&[10_000], DType::F64, &mut rng)?;
    let eps = gaussian(&[10_000], DType::F64, &mut rng)?;
    for t in [1, 500, 1000] {
        let x = q_sample(&z0, t, &eps, &schedule)?;
        let mean = scalar(&x.mean_all()?)?;
        let var = scalar(&(x - mean)?.sqr()?.mean_all()?)?;
        assert!((var - 1.).abs() < 0.05, "t={t}: variance {var}");
    }
    assert!(schedule.alpha_bar(1000) < 1e-4);
    Ok(())
}

#[test]
fn sampling_shape_length_generalisation_and_determinism() -> Result<()> {
    let (latents, motion) = toy_latents();
    let (ps, model) = toy_denoiser(4);
    let schedule = make_noise_schedule(8, 1e-4, 0.5, BetaSchedule::Linear)?;
    let cfg = LvdmTrainConfig { steps: 3, batch_size: 2, clip_frames: 8, ..Default::default() };
    train_lvdm(&model, &ps, &latents, &motion, &schedule, &cfg)?;
    let vae = Vae::new(&ParamStore::new(9, DType::F32), VaeConfig { channels: 8, latent_channels: 4 })?;
    let cond = motion.get("v0")?.to_vec();
    for sampler in [Sampler::Ancestral, Sampler::Deterministic] {
        let sc = SampleConfig { frames: 16, height: 32, width: 32, sampler, seed: 3, fps: 50. };
        let a = sample_video(&model, &vae, &schedule, latents[0].scale, Some(&cond), &sc, "s", DType::F32)?;
        let b = sample_video(&model, &vae, &schedule, latents[0].scale, Some(&cond), &sc, "s", DType::F32)?;
        assert_eq!(a.frames.dim(), (16, 32, 32));
        assert_eq!(a.frames, b.frames);
        let c = sample_video(&model, &vae, &schedule, latents[0].scale, Some(&cond), &SampleConfig { seed: 4, ..sc }, "s", DType::F32)?;
        assert_ne!(a.frames, c.frames);
    }
    let z = sample_latents(&model, &schedule, None, 16, (4, 4), Sampler::Ancestral, 0, DType::F32)?;
    assert_eq!(z.dims(), &[16, 4, 4, 4]);
    Ok(())
}

#[test]
fn diffusion_mse_gradient() -> Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let eps = gaussian(&[1, 1, 8, 8], DType::F64, &mut rng)?;
    let pred = gaussian(&[1, 1, 8, 8], DType::F64, &mut rng)?;
    let err = gradient_check(&pred, 1e-6, |p| Ok(diffusion_mse(p, &eps)?))?;
    assert!(err < 1e-3, "relative gradient error {err}");
    Ok(())
}
