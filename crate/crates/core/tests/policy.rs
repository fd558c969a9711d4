use execsim::execution::{ExecutionSchedule, MetaOrder, ScheduledChild};
use execsim::lob::Side;
use execsim::policy::*;
use execsim::session::SessionTemplate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(rng: &mut ChaCha8Rng, k: usize) -> Vec<ExecutionSchedule> {
    (0..3)
        .map(|_| ExecutionSchedule {
            side: Side::Buy,
            children: (0..12)
                .map(|i| ScheduledChild {
                    time: 0,
                    volume: 1,
                    mode: Some(i % k),
                    draw: rng.random::<f64>(),
                })
                .collect(),
        })
        .collect()
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn gradient_matches_central_differences() {
    let session = SessionTemplate::desk();
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + inst);
        let k = 1 + (inst % 3) as usize;
        let mut p = PolicyParams::init(k, 6, 1, &mut rng);
        for x in p.flat_mut() {
            *x *= 10.0;
        }
        let schedules = random_batch(&mut rng, k);
        let rewards: Vec<f64> = (0..schedules.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch: Vec<BatchItem> = schedules
            .iter()
            .zip(&rewards)
            .map(|(schedule, &reward)| BatchItem { schedule, reward })
            .collect();
        let beta = rng.random_range(0.0..2.0);
        let region = (inst % 2 == 1).then(|| support(&session, inst % 4 == 3, k));
        let region = region.as_ref();
        let g = policy_gradient(&p, &STATE, &batch, beta, region).flat();
        let theta = p.flat();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            let mut t = theta.clone();
            t[i] += h;
            plus.set_flat(&t);
            t[i] -= 2.0 * h;
            minus.set_flat(&t);
            let fd = (surrogate_objective(&plus, &STATE, &batch, beta, region)
                - surrogate_objective(&minus, &STATE, &batch, beta, region))
                / (2.0 * h);
            let e = relative_error(g[i], fd);
            worst = worst.max(e);
            assert!(e < 1e-4, "instance {inst} param {i}: analytic {} vs fd {fd}", g[i]);
        }
    }
    println!("worst relative error {worst:e}");
}

fn stub_meta() -> MetaOrder {
    MetaOrder {
        side: Side::Sell,
        total_volume: 1000,
        num_children: 1000,
    }
}

#[test]
fn stub_converges_to_the_target() {
    // The entropy bonus is off so the test bed isolates the score-function
    // gradient and the optimiser.
    let cfg = TrainConfig {
        max_episodes: 50,
        early_stop_patience: 50,
        entropy_beta: 0.0,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &StubEnvironment::default(), &SessionTemplate::desk(), &stub_meta()).unwrap();
    let mu = policy_forward(&out.last, &STATE)[0].mu;
    assert!((mu - 0.3).abs() < 0.05, "mu = {mu}");
}

#[test]
fn without_entropy_sigma_collapses() {
    let run = |beta: f64| {
        let cfg = TrainConfig {
            max_episodes: 30,
            early_stop_patience: 100,
            entropy_beta: beta,
            entropy_decay_episode: None,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &StubEnvironment::default(), &SessionTemplate::desk(), &stub_meta()).unwrap();
        let modes = policy_forward(&out.last, &STATE);
        modes.iter().map(|m| m.sigma).sum::<f64>() / modes.len() as f64
    };
    let (s0, s2) = (run(0.0), run(2.0));
    assert!(s0 < 0.5 * s2, "beta 0: {s0}, beta 2: {s2}");
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig {
        max_episodes: 8,
        modes: 2,
        bounded: true,
        ..TrainConfig::default()
    };
    let a = train(&cfg, &StubEnvironment::default(), &SessionTemplate::desk(), &stub_meta()).unwrap();
    let b = train(&cfg, &StubEnvironment::default(), &SessionTemplate::desk(), &stub_meta()).unwrap();
    assert_eq!(a.episodes, b.episodes);
    assert_eq!(a.last, b.last);
}

proptest! {
    #[test]
    fn outputs_stay_in_the_unit_interval(seed in any::<u64>(), scale in 0.0f64..100.0, k in 1usize..4) {
        let mut p = PolicyParams::init(k, 8, 1, &mut ChaCha8Rng::seed_from_u64(seed));
        for x in p.flat_mut() {
            *x *= scale;
        }
        for m in policy_forward(&p, &STATE) {
            prop_assert!((0.0..=1.0).contains(&m.mu));
            prop_assert!((SIGMA_MIN..=1.0).contains(&m.sigma));
        }
    }

    #[test]
    fn entropy_increases_with_sigma(a in 0.001f64..1.0, b in 0.001f64..1.0) {
        prop_assume!(a < b);
        let m = |s| [execsim::execution::Mode { mu: 0.5, sigma: s }];
        prop_assert!(entropy(&m(a)) < entropy(&m(b)));
    }
}
