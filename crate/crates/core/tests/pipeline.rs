use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use steerkit::codec::{encode_depth, IdentityCodec, PoolingCodec};
use steerkit::ddpm::NoiseSchedule;
use steerkit::denoiser::{
    BiasSpec, BiasedOracle, OracleDenoiser, PredictionKind, PriorComponent, Recall,
};
use steerkit::depth::{DepthMap, SparseDepth};
use steerkit::eval::{
    area_mask, compute_metrics, erase_region, evaluation_mask, normalize_relative, run_benchmark,
    run_benchmark_with, sample_sparse, sample_sparse_in, synth_scene, EvaluationArea, Protocol,
    Scene, SceneSpec,
};
use steerkit::steering::{complete, SteeringConfig};
use steerkit::Error;

fn scene(seed: u64, h: usize, w: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = SceneSpec::random_room(h, w, &mut rng);
    let (rgb, gt) = synth_scene(&spec).unwrap();
    Scene {
        id: format!("scene{seed}"),
        rgb,
        gt,
    }
}

fn condition(s: &Scene, n: usize, seed: u64) -> SparseDepth {
    sample_sparse(&s.gt, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn blurred(s: &Scene) -> BiasedOracle {
    let x0 = encode_depth(&normalize_relative(&s.gt).unwrap(), &IdentityCodec).unwrap();
    BiasedOracle::new(
        &x0,
        &BiasSpec::GaussianBlur { radius: 3.0 },
        PredictionKind::Epsilon,
    )
    .unwrap()
}

#[test]
fn exact_oracle_recovers_ground_truth_for_any_k() {
    let s = scene(1, 60, 80);
    let c = condition(&s, 400, 2);
    let sched = NoiseSchedule::default_inference();
    let x0 = encode_depth(&normalize_relative(&s.gt).unwrap(), &IdentityCodec).unwrap();
    let mask = evaluation_mask(&EvaluationArea::large(), &s.gt).unwrap();
    for k in [0.0, 0.3, 1.0] {
        let mut d = OracleDenoiser::new(x0.clone(), PredictionKind::Epsilon);
        let cfg = SteeringConfig::default().with_k(k);
        let out = complete(&s.rgb, &c, &cfg, &mut d, &IdentityCodec, &sched).unwrap();
        let m = compute_metrics(&out.depth, &s.gt, &mask).unwrap();
        assert!(m.rmse < 1e-9, "k={k}: rmse {}", m.rmse);
        assert!(out.depth.metric && !out.relative.metric);
        assert!(out.transform.scale > 0.0);
    }
}

#[test]
fn identical_seeds_give_identical_output() {
    let s = scene(3, 40, 56);
    let c = condition(&s, 200, 4);
    let sched = NoiseSchedule::default_inference();
    let run = |seed: u64| {
        let cfg = SteeringConfig::default().with_k(0.3).with_seed(seed);
        // The recall prior makes the prediction depend on x_t, so the noise
        // seed reaches the output.
        let recall = Recall::new(vec![PriorComponent {
            std: 0.07,
            length: 1.5,
        }])
        .unwrap();
        let mut d = blurred(&s).with_recall(recall);
        complete(&s.rgb, &c, &cfg, &mut d, &IdentityCodec, &sched).unwrap()
    };
    let (a, b, other) = (run(9), run(9), run(10));
    assert_eq!(a.depth.values, b.depth.values);
    assert_eq!(a.positions, b.positions);
    assert_ne!(a.depth.values, other.depth.values);
}

#[test]
fn unsteered_run_ignores_steering_parameters() {
    let s = scene(5, 40, 56);
    let c = condition(&s, 200, 6);
    let sched = NoiseSchedule::default_inference();
    let run = |cfg: SteeringConfig| {
        complete(&s.rgb, &c, &cfg, &mut blurred(&s), &IdentityCodec, &sched).unwrap()
    };
    let base = run(SteeringConfig::default().with_k(0.0));
    let mut varied = SteeringConfig::default().with_k(0.0);
    varied.zeta = 2.0;
    varied.fill_density = 4.0;
    varied.resample_positions_per_step = true;
    let other = run(varied);
    assert_eq!(base.depth.values, other.depth.values);
    assert!(base.positions.is_none());
}

#[test]
fn steering_reduces_error_against_a_blurred_oracle() {
    let s = scene(7, 60, 80);
    let c = condition(&s, 500, 8);
    let sched = NoiseSchedule::default_inference();
    let mask = evaluation_mask(&EvaluationArea::large(), &s.gt).unwrap();
    let rmse = |k: f64| {
        let cfg = SteeringConfig::default().with_k(k);
        let out = complete(&s.rgb, &c, &cfg, &mut blurred(&s), &IdentityCodec, &sched).unwrap();
        compute_metrics(&out.depth, &s.gt, &mask).unwrap().rmse
    };
    let (unsteered, steered) = (rmse(0.0), rmse(1.0));
    assert!(steered < unsteered, "{steered} vs {unsteered}");
}

#[test]
fn lossy_codec_pipeline_runs() {
    let s = scene(9, 48, 64);
    let c = condition(&s, 300, 10);
    let codec = PoolingCodec::new(8).unwrap();
    let x0 = encode_depth(&normalize_relative(&s.gt).unwrap(), &codec).unwrap();
    assert_eq!(x0.shape(), (4, 6, 8));
    let mut d = OracleDenoiser::new(x0, PredictionKind::Velocity);
    let cfg = SteeringConfig::default().with_k(0.3);
    let out = complete(
        &s.rgb,
        &c,
        &cfg,
        &mut d,
        &codec,
        &NoiseSchedule::default_inference(),
    )
    .unwrap();
    assert_eq!(out.depth.dims(), (48, 64));
    assert!(out.depth.values.iter().all(|v| v.is_finite()));
}

#[test]
fn invalid_inputs_are_rejected() {
    let s = scene(11, 20, 24);
    let sched = NoiseSchedule::default_inference();
    let mut d = blurred(&s);
    let cfg = SteeringConfig::default();
    let one = SparseDepth::new(20, 24, condition(&s, 1, 1).points().to_vec()).unwrap();
    assert!(matches!(
        complete(&s.rgb, &one, &cfg, &mut d, &IdentityCodec, &sched),
        Err(Error::InsufficientData { .. })
    ));
    let wrong_size = condition(&scene(12, 21, 24), 10, 1);
    assert!(matches!(
        complete(&s.rgb, &wrong_size, &cfg, &mut d, &IdentityCodec, &sched),
        Err(Error::Dimension(_))
    ));
    let mut too_many = cfg.clone();
    too_many.steps = 51;
    let c = condition(&s, 10, 1);
    assert!(matches!(
        complete(&s.rgb, &c, &too_many, &mut d, &IdentityCodec, &sched),
        Err(Error::Parameter(_))
    ));
    let mut bad = cfg;
    bad.k = -1.0;
    assert!(complete(&s.rgb, &c, &bad, &mut d, &IdentityCodec, &sched).is_err());
}

#[test]
fn fewer_steps_subsample_the_schedule() {
    let s = scene(13, 30, 40);
    let c = condition(&s, 100, 2);
    let x0 = encode_depth(&normalize_relative(&s.gt).unwrap(), &IdentityCodec).unwrap();
    let mut d = OracleDenoiser::new(x0, PredictionKind::Velocity);
    let mut cfg = SteeringConfig::default().with_k(0.3);
    cfg.steps = 10;
    let out = complete(
        &s.rgb,
        &c,
        &cfg,
        &mut d,
        &IdentityCodec,
        &NoiseSchedule::default_inference(),
    )
    .unwrap();
    let mask = evaluation_mask(&EvaluationArea::large(), &s.gt).unwrap();
    assert!(compute_metrics(&out.depth, &s.gt, &mask).unwrap().rmse < 1e-9);
}

#[test]
fn benchmark_records_failures_and_pools_pixels() {
    let good = scene(15, 30, 40);
    let mut tiny = scene(16, 30, 40);
    // Too few valid pixels to sample from.
    for v in tiny.gt.values.iter_mut().skip(5) {
        *v = 0.0;
    }
    let scenes = vec![good.clone(), tiny, scene(17, 30, 40)];
    let protocol = Protocol {
        n_depth: 50,
        erase: None,
        areas: vec![
            EvaluationArea::large(),
            EvaluationArea::custom(10, 10).unwrap(),
        ],
        ks: vec![0.0, 0.5],
    };
    let mut seen = 0;
    let report = run_benchmark_with(
        &scenes,
        &protocol,
        &SteeringConfig::default(),
        |s: &Scene| Ok(blurred(s)),
        &IdentityCodec,
        &NoiseSchedule::default_inference(),
        |_, c, _, done| {
            assert_eq!(c.len(), 50);
            assert!(done.depth.metric);
            seen += 1;
        },
    )
    .unwrap();
    assert_eq!(seen, 4);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].scene_id, "scene16");
    assert_eq!(report.per_scene.len(), 2 * 2 * 2);
    for area in &protocol.areas {
        for &k in &protocol.ks {
            let agg = report.aggregate_for(area, k).unwrap();
            let parts: Vec<_> = report
                .per_scene
                .iter()
                .filter(|r| r.area == area.to_string() && r.k == k)
                .collect();
            let n: usize = parts.iter().map(|r| r.n_pixels).sum();
            let sq: f64 = parts
                .iter()
                .map(|r| r.rmse * r.rmse * r.n_pixels as f64)
                .sum();
            assert_eq!(agg.n_pixels, n);
            assert!((agg.rmse - (sq / n as f64).sqrt()).abs() < 1e-12);
        }
    }

    let mut jsonl = Vec::new();
    report.write_jsonl(&mut jsonl).unwrap();
    assert_eq!(String::from_utf8(jsonl).unwrap().lines().count(), 8 + 4);
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("scene_id,area,n_depth,k,"));
}

#[test]
fn benchmark_is_independent_of_scene_order_effects() {
    let scenes = vec![scene(20, 24, 32), scene(21, 24, 32)];
    let protocol = Protocol {
        n_depth: 40,
        erase: Some(EvaluationArea::custom(8, 8).unwrap()),
        areas: vec![EvaluationArea::large()],
        ks: vec![0.3],
    };
    let run = |s: &[Scene]| {
        run_benchmark(
            s,
            &protocol,
            &SteeringConfig::default(),
            |s: &Scene| Ok(blurred(s)),
            &IdentityCodec,
            &NoiseSchedule::default_inference(),
        )
        .unwrap()
    };
    let both = run(&scenes);
    let first = run(&scenes[..1]);
    let a = both
        .per_scene
        .iter()
        .find(|r| r.scene_id == "scene20")
        .unwrap();
    assert_eq!(a.rmse, first.per_scene[0].rmse);
    assert!(matches!(
        run_benchmark(
            &[],
            &protocol,
            &SteeringConfig::default(),
            |s: &Scene| Ok(blurred(s)),
            &IdentityCodec,
            &NoiseSchedule::default_inference(),
        ),
        Err(Error::EmptyReport(_))
    ));
}

fn arb_depth() -> impl Strategy<Value = DepthMap> {
    (4usize..24, 4usize..24, any::<u64>()).prop_map(|(h, w, seed)| {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DepthMap::from_fn(h, w, true, |_, _| {
            if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.5..8.0)
            }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn erasing_after_sampling_equals_sampling_outside(
        gt in arb_depth(),
        frac in 0.05f64..0.9,
        ah in 1usize..30,
        aw in 1usize..30,
        seed in any::<u64>(),
    ) {
        let valid = gt.valid_count();
        prop_assume!(valid > 0);
        let n = ((valid as f64 * frac) as usize).max(1);
        let area = EvaluationArea::custom(ah, aw).unwrap();
        let erased = erase_region(
            &sample_sparse(&gt, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap(),
            &area,
        );
        let (h, w) = gt.dims();
        let (ch, cw) = (ah.min(h), aw.min(w));
        let inside = area_mask(&EvaluationArea::custom(ch, cw).unwrap(), h, w).unwrap();
        let outside: Vec<bool> = inside.iter().map(|m| !m).collect();
        let direct = sample_sparse_in(
            &gt,
            erased.len(),
            Some(&outside),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        prop_assert_eq!(erased, direct);
    }

    #[test]
    fn sampling_picks_distinct_valid_pixels(gt in arb_depth(), seed in any::<u64>()) {
        let n = gt.valid_count() / 2;
        let c = sample_sparse(&gt, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(c.len(), n);
        for p in c.points() {
            prop_assert!(p.depth > 0.0);
            prop_assert_eq!(p.depth, gt.get(p.row, p.col));
        }
        let too_many = sample_sparse(&gt, gt.valid_count() + 1, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(matches!(too_many, Err(Error::Data(_))), "expected a data error");
    }

    #[test]
    fn normalized_relative_depth_spans_unit_range(gt in arb_depth()) {
        prop_assume!(gt.valid_count() >= 2);
        let valid = gt.values.iter().filter(|v| **v > 0.0);
        let lo = valid.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = valid.copied().fold(0.0, f64::max);
        prop_assume!(hi > lo);
        let n = normalize_relative(&gt).unwrap();
        for (v, g) in n.values.iter().zip(&gt.values) {
            prop_assert!((-1.0..=1.0).contains(v));
            if *g > 0.0 {
                let expect = 2.0 * (g - lo) / (hi - lo) - 1.0;
                prop_assert!((v - expect).abs() < 1e-12);
            }
        }
    }
}
