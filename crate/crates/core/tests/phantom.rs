use fcdlif_core::calibration::{apply_calibration, calibrate, delay_correct, resample_to_frames};
use fcdlif_core::evaluation::patlak_ki;
use fcdlif_core::phantom::{
    region_frame_curves, render_phantom, simulate_cohort, simulate_detector_trace, simulate_subject, FengParams,
    KineticParams, Outlier, Phantom, Region, RegionKind, RenderOptions, SimulationConfig, TraceConfig,
};
use fcdlif_core::{FrameSchedule, InputFunction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn region(kind: RegionKind, center: [f64; 3], radius: f64, kinetics: Option<KineticParams>) -> Region {
    Region {
        kind,
        center,
        radii: [radius; 3],
        kinetics,
    }
}

/// Blood pool plus one tissue region with the given kinetics.
fn two_region_phantom(k: KineticParams) -> Phantom {
    Phantom::new(
        [6, 3, 3],
        [1.0; 3],
        vec![
            region(RegionKind::BloodPool, [1.5, 1.5, 1.5], 1.0, None),
            region(RegionKind::Liver, [4.5, 1.5, 1.5], 1.0, Some(k)),
        ],
    )
    .unwrap()
}

fn peak(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

#[test]
fn halving_the_quadrature_step_changes_frames_below_a_thousandth() {
    let schedule = FrameSchedule::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let phantom = Phantom::mouse([24, 16, 16], [1.5; 3], &mut rng).unwrap();
    let feng = FengParams::random(&mut rng);
    let (coarse, aif_c) = region_frame_curves(&phantom, &schedule, &feng, 0.5).unwrap();
    let (fine, aif_f) = region_frame_curves(&phantom, &schedule, &feng, 0.25).unwrap();
    for (c, f) in coarse.iter().chain([&aif_c]).zip(fine.iter().chain([&aif_f])) {
        let scale = peak(f);
        for (a, b) in c.iter().zip(f) {
            // relative per frame; frames near zero (before injection) are
            // compared against the curve peak
            let rel = (a - b).abs() / b.abs().max(1e-3 * scale);
            assert!(rel < 1e-3, "{a} vs {b}");
        }
    }
}

#[test]
fn count_noise_is_unbiased() {
    let schedule = FrameSchedule::from_blocks(&[(1, 30.0), (2, 5.0), (1, 20.0)], 0.0).unwrap();
    let k = KineticParams::new(0.3, 0.4, 0.1, 0.05).unwrap();
    let phantom = two_region_phantom(k);
    let feng = FengParams::mouse_default();
    let noisy = RenderOptions::default();
    let clean = RenderOptions {
        count_scale: None,
        ..noisy
    };
    let (truth, _) = render_phantom(&phantom, &schedule, &feng, 0, clean).unwrap();
    let voxel = (4 * 3 + 1) * 3 + 1; // tissue centre
    let n = 10_000;
    let mut sums = vec![0.0f64; schedule.len()];
    let mut sq = vec![0.0f64; schedule.len()];
    for seed in 0..n {
        let (im, _) = render_phantom(&phantom, &schedule, &feng, seed, noisy).unwrap();
        for (t, v) in im.voxel_tac(voxel).into_iter().enumerate() {
            sums[t] += v;
            sq[t] += v * v;
        }
    }
    let expected = truth.voxel_tac(voxel);
    for t in 0..schedule.len() {
        let mean = sums[t] / n as f64;
        let var = sq[t] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!(expected[t] > 0.0);
        assert!((mean - expected[t]).abs() < 3.0 * se, "frame {t}: {mean} vs {}", expected[t]);
        // short frames are noisier
        let theory = expected[t] / (schedule.durations()[t] * 2.0);
        assert!((var / theory - 1.0).abs() < 0.1, "frame {t}: variance {var} vs {theory}");
    }
}

#[test]
fn patlak_recovers_irreversible_uptake() {
    let schedule = FrameSchedule::standard();
    // with a blood fraction the Patlak slope is (1 − Vb)·Ki, so the oracle uses Vb = 0
    for (k1, k2, k3) in [(0.1, 0.2, 0.05), (0.5, 1.0, 0.1)] {
        let k = KineticParams::new(k1, k2, k3, 0.0).unwrap();
        for feng in [FengParams::mouse_default(), FengParams::random(&mut ChaCha8Rng::seed_from_u64(9))] {
            let (curves, aif) = region_frame_curves(&two_region_phantom(k), &schedule, &feng, 0.5).unwrap();
            let input = InputFunction::on_schedule(&schedule, aif).unwrap();
            let fit = patlak_ki(&curves[1], &input, &schedule, None).unwrap();
            let rel = fit.ki / k.ki() - 1.0;
            assert!(rel.abs() < 0.02, "({k1}, {k2}, {k3}): Ki {} vs {}", fit.ki, k.ki());
        }
    }
    assert!((KineticParams::new(0.1, 0.2, 0.05, 0.0).unwrap().ki() - 0.02).abs() < 1e-15);
}

#[test]
fn patlak_of_reversible_region_is_flat() {
    let schedule = FrameSchedule::standard();
    let k = KineticParams::new(0.1, 1.0, 0.0, 0.0).unwrap();
    let (curves, aif) =
        region_frame_curves(&two_region_phantom(k), &schedule, &FengParams::mouse_default(), 0.5).unwrap();
    let input = InputFunction::on_schedule(&schedule, aif).unwrap();
    let fit = patlak_ki(&curves[1], &input, &schedule, None).unwrap();
    assert!(fit.ki.abs() < 1e-4, "Ki {}", fit.ki);
}

#[test]
fn cohort_is_deterministic_and_prefix_stable() {
    let cfg = SimulationConfig::desk(21);
    let a = simulate_cohort(&cfg, 3).unwrap();
    let b = simulate_cohort(&cfg, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(simulate_subject(&cfg, 2).unwrap(), a[2]);
    assert_ne!(a[0].image, a[1].image);
    let other = simulate_subject(&SimulationConfig::desk(22), 0).unwrap();
    assert_ne!(other.image, a[0].image);
}

fn calibrated_curve(feng: &FengParams, cfg: &TraceConfig, seed: u64) -> (f64, Vec<bool>, InputFunction) {
    let (trace, samples) = simulate_detector_trace(feng, cfg, seed).unwrap();
    let result = calibrate(&trace, &samples, cfg.true_delay_s).unwrap();
    let corrected = apply_calibration(&delay_correct(&trace, cfg.true_delay_s).unwrap(), &result).unwrap();
    let curve = resample_to_frames(&corrected, &FrameSchedule::standard()).unwrap();
    (result.overall, result.included, curve)
}

#[test]
fn calibration_pipeline_recovers_the_input_function() {
    let schedule = FrameSchedule::standard();
    for seed in 0..5 {
        let feng = FengParams::random(&mut ChaCha8Rng::seed_from_u64(100 + seed));
        let truth = region_frame_curves(&two_region_phantom(KineticParams::new(0.1, 0.2, 0.05, 0.0).unwrap()), &schedule, &feng, 0.5)
            .unwrap()
            .1;
        let top = peak(&truth);
        let mut cfg = TraceConfig::standard(3.7, 0.01 * 3.7 * top);
        let (clean_factor, _, _) = calibrated_curve(&feng, &cfg, seed);
        cfg.outlier = Some(Outlier { index: 2, factor: 10.0 });
        let (factor, included, curve) = calibrated_curve(&feng, &cfg, seed);
        assert!((factor / 3.7 - 1.0).abs() < 0.01, "seed {seed}: factor {factor}");
        assert!((factor / clean_factor - 1.0).abs() < 0.01);
        assert_eq!(included, [true, true, false, true, true, true]);
        let worst = curve.values.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / top;
        assert!(worst < 0.02, "seed {seed}: max error {worst}");
    }
}
