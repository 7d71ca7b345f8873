use candle_core::{DType, Device, Tensor};
use mcdm_core::data::{generate_phantom, select_frame_pair, PairStrategy, PhantomSpec};
use mcdm_core::mafe::{
    evaluate_loss, laplacian_loss, laplacian_pyramid, reconstruct, total_loss_tensor, train_mafe, LossWeights, Mafe, MafeConfig,
    MafeTrainConfig, TrainingPair,
};
use mcdm_core::nn::{gradient_check, ParamStore, ScheduleKind};
use mcdm_core::pseudo::{block_match_flow, BlockMatchConfig};
use mcdm_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn random(shape: (usize, usize, usize, usize), seed: u64) -> Tensor {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    Tensor::from_iter((0..n).map(|_| rng.random::<f64>()), &Device::Cpu).unwrap().reshape(shape).unwrap()
}

#[test]
fn laplacian_and_total_loss_gradients_match_finite_differences() -> Result<()> {
    for seed in 0..3 {
        let target = random((1, 1, 8, 8), 100 + seed);
        let x = random((1, 1, 8, 8), seed);
        let err = gradient_check(&x, 1e-4, |p| laplacian_loss(p, &target, 2))?;
        assert!(err < 1e-3, "laplacian rel err {err}");
        let reid = Tensor::new(0.3f64, &Device::Cpu)?;
        let flow = Tensor::new(2.0f64, &Device::Cpu)?;
        let err = gradient_check(&x, 1e-4, |p| {
            total_loss_tensor(&laplacian_loss(p, &target, 2)?, Some(&reid), Some(&flow), &LossWeights::default())
        })?;
        assert!(err < 1e-3, "total rel err {err}");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pyramid_reconstruction_identity(seed in 0u64..1000, hl in 1usize..4, wl in 1usize..4, levels in 1usize..3) {
        let (h, w) = (hl * 4 * (1 << levels) / 2, wl * 4 * (1 << levels) / 2);
        prop_assume!(h >> levels >= 2 && w >> levels >= 2);
        let img = random((2, 1, h, w), seed);
        let back = reconstruct(&laplacian_pyramid(&img, levels).unwrap()).unwrap();
        let err = (back - &img).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap();
        prop_assert!(err < 1e-6);
    }

    #[test]
    fn laplacian_loss_is_a_symmetric_nonnegative_distance(seed in 0u64..1000) {
        let a = random((1, 1, 16, 16), seed);
        let b = random((1, 1, 16, 16), seed + 7919);
        let ab = laplacian_loss(&a, &b, 2).unwrap().to_scalar::<f64>().unwrap();
        let ba = laplacian_loss(&b, &a, 2).unwrap().to_scalar::<f64>().unwrap();
        prop_assert!(ab > 0.);
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(laplacian_loss(&a, &a, 2).unwrap().to_scalar::<f64>().unwrap(), 0.);
    }
}

#[test]
fn overfits_a_single_phantom_pair() -> Result<()> {
    let spec = PhantomSpec { seed: 3, pulse_amplitude: 0.15, ..Default::default() };
    let (clip, _) = generate_phantom("p", &spec, 16)?;
    let pair = select_frame_pair(&clip, PairStrategy::MaxDiff, 8)?;
    let flow = block_match_flow(pair.i0.view(), pair.i1.view(), &BlockMatchConfig::default())?;
    let mut emb = [vec![0f32; 32], vec![0f32; 32]];
    emb[0][0] = 1.;
    emb[1][1] = 1.;
    let data = vec![TrainingPair { pair, reid: Some(emb), flow: Some(flow) }];
    let ps = ParamStore::new(7, DType::F32);
    let model = Mafe::new(&ps, MafeConfig { channels: [8, 16, 16, 32], window: 5, head_channels: 32, refine_channels: 8 })?;
    let cfg = MafeTrainConfig {
        steps: 500,
        batch_size: 1,
        lr: 2e-3,
        warmup: 20,
        schedule: ScheduleKind::Constant,
        swap_augment: false,
        ..Default::default()
    };
    let before = evaluate_loss(&model, &data, &cfg, DType::F32)?.total;
    train_mafe(&model, &ps, &data, &cfg)?;
    let after = evaluate_loss(&model, &data, &cfg, DType::F32)?.total;
    assert!(after < 0.25 * before, "before {before} after {after}");
    Ok(())
}
