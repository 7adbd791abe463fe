use refinery_core::engine::*;
use refinery_core::gmm;
use refinery_core::oracle::{rollout, Bump};
use refinery_core::{Domain, GmmModel, InitState, OracleField, RngStream, StageSpec};

fn stage(f: OracleField) -> StageSpec {
    StageSpec::with_default_noise(0, f).unwrap()
}

fn plateau_field() -> OracleField {
    // Bump with amplitude above the cap: a flat p_max plateau around (0.3, 0.6),
    // no success elsewhere.
    OracleField::new(
        Domain::unit(2).unwrap(),
        vec![Bump { center: InitState::new(vec![0.3, 0.6]), amplitude: 1.0, width: 0.1 }],
        0.0,
        0.9,
    )
    .unwrap()
}

fn two_bump() -> OracleField {
    OracleField::new(
        Domain::unit(2).unwrap(),
        vec![
            Bump { center: InitState::new(vec![0.2, 0.25]), amplitude: 0.85, width: 0.1 },
            Bump { center: InitState::new(vec![0.7, 0.7]), amplitude: 0.6, width: 0.15 },
        ],
        0.02,
        0.99,
    )
    .unwrap()
}

#[test]
fn saturated_field_is_a_fixed_point() {
    let s = stage(OracleField::constant(Domain::unit(2).unwrap(), 1.0).unwrap());
    let cfg = FinetuneConfig::default();
    let (improved, rec) = finetune_stage(&s, &cfg, &RngStream::from_seed(1)).unwrap();
    assert_eq!(rec.epochs, cfg.conv_window);
    assert_eq!(rec.epoch_rates.len(), rec.epochs);
    assert!(rec.epoch_rates.iter().all(|r| *r == 1.0));
    assert_eq!(improved.oracle().grid_mean(32), 1.0);
    assert_eq!(rec.final_rate, 1.0);
}

#[test]
fn finetuning_never_lowers_the_true_mean() {
    let one = OracleField::new(
        Domain::unit(2).unwrap(),
        vec![Bump { center: InitState::new(vec![0.6, 0.4]), amplitude: 0.8, width: 0.15 }],
        0.02,
        0.99,
    )
    .unwrap();
    for (i, f) in [one, two_bump()].into_iter().enumerate() {
        let s = stage(f);
        let (improved, rec) = finetune_stage(&s, &FinetuneConfig::default(), &RngStream::new(2, i as u64)).unwrap();
        assert!(improved.oracle().grid_mean(64) >= s.oracle().grid_mean(64));
        assert!((0.0..=1.0).contains(&rec.final_rate));
        assert!(rec.epochs >= 1 && rec.epochs <= 60);
    }
}

#[test]
fn ucb_against_uniform_proposals_on_two_bumps() {
    let s = stage(two_bump());
    let ucb = FinetuneConfig::default();
    let uniform = FinetuneConfig { uniform_proposals: true, ..FinetuneConfig::default() };
    let (mut a, mut b) = (0.0, 0.0);
    for seed in 0..10 {
        let rng = RngStream::new(3, seed);
        a += finetune_stage(&s, &ucb, &rng).unwrap().1.final_rate;
        b += finetune_stage(&s, &uniform, &rng).unwrap().1.final_rate;
    }
    println!("ucb mean {:.4}, uniform mean {:.4}", a / 10.0, b / 10.0);
    assert!(a >= b, "ucb {} < uniform {}", a / 10.0, b / 10.0);
}

#[test]
fn baseline_on_certain_field_always_succeeds() {
    let s = stage(OracleField::constant(Domain::unit(3).unwrap(), 1.0).unwrap());
    let art = StageArtifacts::default();
    for t in 0..200 {
        assert!(deploy(&s, StrategyKind::Baseline, &art, &RngStream::new(4, t)).unwrap().success);
    }
}

#[test]
fn refinery_on_plateau_beats_baseline() {
    let s = stage(plateau_field());
    let cfg = FinetuneConfig::default();
    let gcfg = GmmConfig::default();
    let rng = RngStream::from_seed(5);
    let (art, _) = prepare_artifacts(&s, StrategyKind::Refinery, &cfg, &gcfg, &rng).unwrap();
    let m = art.finetuned_gmm.as_ref().unwrap().gmm.as_ref().unwrap();
    let h = m.heaviest_component();
    let mass_center = InitState::new(m.means()[h].clone());
    assert!(art.finetuned.as_ref().unwrap().oracle().true_prob(&mass_center).unwrap() >= 0.9 - 1e-12);
    let (mut r, mut b) = (0u32, 0u32);
    for t in 0..10_000 {
        let trng = RngStream::new(6, t);
        r += deploy(&s, StrategyKind::Refinery, &art, &trng).unwrap().success as u32;
        b += deploy(&s, StrategyKind::Baseline, &art, &trng).unwrap().success as u32;
    }
    assert!(r >= b, "refinery {r} baseline {b}");
}

#[test]
fn single_component_deployment_stays_on_plateau() {
    let f = plateau_field();
    let s = stage(f.clone());
    let mean = vec![0.3, 0.6];
    let cov = vec![0.002, 0.0, 0.0, 0.002];
    let m = GmmModel::new(vec![1.0], vec![mean.clone()], vec![cov.clone()]).unwrap();
    let art = StageArtifacts {
        baseline_gmm: Some(SuccessModel { gmm: Some(m), rollouts: 0, successes: 0 }),
        ..StageArtifacts::new(1000)
    };
    let mut inside = 0;
    for t in 0..1000 {
        let d = deploy(&s, StrategyKind::Deployment, &art, &RngStream::new(7, t)).unwrap();
        let x = d.chosen.coords();
        let maha = ((x[0] - mean[0]).powi(2) + (x[1] - mean[1]).powi(2)) / cov[0];
        if maha < 1.0 && f.true_prob(&d.chosen).unwrap() == f.p_max() {
            inside += 1;
        }
    }
    assert!(inside >= 990, "{inside}");
}

#[test]
fn independent_chain_matches_product() {
    let dom = Domain::unit(2).unwrap();
    let stages: Vec<StageSpec> = (0..3)
        .map(|i| StageSpec::with_default_noise(i, OracleField::constant(dom.clone(), 0.9).unwrap()).unwrap())
        .collect();
    let chain = ChainSpec::new("c", stages, vec![StrategyKind::Baseline; 3]).unwrap();
    let art = vec![StageArtifacts::default(); 3];
    let trials = 10_000;
    let res = run_chain(&chain, &art, trials, 0, &RngStream::from_seed(8)).unwrap();
    let want = 0.729;
    assert!((res.sequence_rate - want).abs() <= 3.0 * (want * (1.0 - want) / trials as f64).sqrt());
    assert!(res.sequence_rate <= res.per_stage_rates.iter().copied().fold(1.0, f64::min));
    assert_eq!(res.per_stage_reached[0], trials);
}

#[test]
fn chain_edge_cases() {
    let dom = Domain::unit(2).unwrap();
    let mk = |p: f64| StageSpec::with_default_noise(0, OracleField::constant(dom.clone(), p).unwrap()).unwrap();
    let chain = ChainSpec::new("z", vec![mk(0.8), mk(0.0), mk(0.8)], vec![StrategyKind::Baseline; 3]).unwrap();
    let art = vec![StageArtifacts::default(); 3];
    let res = run_chain(&chain, &art, 500, 2, &RngStream::from_seed(9)).unwrap();
    assert_eq!(res.sequence_rate, 0.0);
    assert_eq!(res.per_stage_reached[2], 0);

    let single = ChainSpec::new("s", vec![mk(0.6)], vec![StrategyKind::Baseline]).unwrap();
    let res = run_chain(&single, &art[..1], 2000, 0, &RngStream::from_seed(10)).unwrap();
    assert_eq!(res.sequence_rate, res.per_stage_rates[0]);

    // One retry per trial lifts a 0.5 stage to 1 − 0.5².
    let retry = ChainSpec::new("r", vec![mk(0.5)], vec![StrategyKind::Baseline]).unwrap();
    let res = run_chain(&retry, &art[..1], 10_000, 1, &RngStream::from_seed(11)).unwrap();
    assert!((res.sequence_rate - 0.75).abs() <= 3.0 * (0.75f64 * 0.25 / 1e4).sqrt());
    assert!(run_chain(&retry, &art[..1], 10, 3, &RngStream::from_seed(11)).is_err());
}

#[test]
fn mixture_deployment_not_worse_than_uniform_average() {
    let suite = generate_suite(&SuiteConfig { landscapes: 3, ..SuiteConfig::default() }, &RngStream::from_seed(12)).unwrap();
    for c in &suite {
        let s = &c.stages[0];
        for seed in 0..2 {
            let rng = RngStream::new(13, seed);
            let sm = fit_success_model(s, 1000, 8, &rng).unwrap();
            let Some(m) = &sm.gmm else { continue };
            let n = 10_000;
            let vals: Vec<f64> = (0..n)
                .map(|t| {
                    let sel = gmm::deploy_select(m, 1000, s.domain(), &rng.child(t)).unwrap();
                    s.oracle().true_prob(&sel.point).unwrap()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            let base = s.oracle().grid_mean(128);
            assert!(mean >= base - 2.0 * sd / (n as f64).sqrt(), "{}: {mean} < {base}", c.id);
        }
    }
}

#[test]
fn benchmark_smoke_and_determinism() {
    let suite = generate_suite(&SuiteConfig { landscapes: 1, ..SuiteConfig::default() }, &RngStream::from_seed(14)).unwrap();
    let cfg = BenchConfig { seeds: 2, audit: true, ..BenchConfig::default() };
    let t = std::time::Instant::now();
    let a = run_benchmark(&suite, &cfg, 99).unwrap();
    assert!(t.elapsed().as_secs_f64() < 10.0, "{:?}", t.elapsed());
    for c in &a.cells {
        for st in &c.stages {
            assert_eq!(st.runs.len(), 4);
            assert!(st.runs.iter().all(|r| (0.0..=1.0).contains(&r.final_rate)));
        }
    }
    assert_eq!(a.audit.as_ref().unwrap().violations, 0);
    let b = run_benchmark(&suite, &cfg, 99).unwrap();
    assert_eq!(
        refinery_core::report::to_json(&a).unwrap(),
        refinery_core::report::to_json(&b).unwrap()
    );
    assert_eq!(refinery_core::report::summary_csv(&a), refinery_core::report::summary_csv(&b));
}

#[test]
fn rollout_dataset_is_deterministic() {
    let s = stage(two_bump());
    let x = InitState::new(vec![0.2, 0.3]);
    let a = rollout(&s, &x, 100, &RngStream::from_seed(15)).unwrap();
    let b = rollout(&s, &x, 100, &RngStream::from_seed(15)).unwrap();
    assert_eq!(a, b);
}
