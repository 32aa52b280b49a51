use approx::assert_abs_diff_eq;
use gr2_core::games::{BeautyContestEnv, RewardScheme};
use gr2_core::learning::{
    seeded_stream, soft_target, train, update_agent, AgentBundle, AgentSpec, CategoricalOpponentModel, Experience,
    LossEval, LossNoise, ReplayBuffer, TrainEnv, TrainerConfig, LOG_STD_MIN,
};
use rand::Rng;

fn bundle(spec: AgentSpec, seed: u64) -> AgentBundle {
    let cfg = TrainerConfig::default();
    let mut a = AgentBundle::new(spec, &cfg, seeded_stream(seed, 1)).unwrap();
    // move the target critic away from the online one
    let mut rng = seeded_stream(seed, 9);
    let mut w = a.omega.flat();
    w.iter_mut().for_each(|x| *x += rng.gen_range(-0.05..0.05));
    a.omega_bar.set_flat(&w);
    a
}

fn batch(seed: u64, n: usize) -> Vec<Experience> {
    let mut rng = seeded_stream(seed, 7);
    (0..n)
        .map(|i| Experience {
            own: rng.gen_range(-0.9..0.9),
            opp: rng.gen_range(-0.9..0.9),
            reward: rng.gen_range(-1.0..0.0),
            terminal: i % 3 == 2,
        })
        .collect()
}

fn check_fd(
    params: Vec<f64>,
    eval: impl Fn(&[f64]) -> LossEval,
    label: &str,
) {
    let base = eval(&params);
    assert_eq!(base.grad.len(), params.len(), "{label}: gradient length");
    let h = 1e-5;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        let up = eval(&p).value;
        p[i] -= 2.0 * h;
        let dn = eval(&p).value;
        let fd = (up - dn) / (2.0 * h);
        let g = base.grad[i];
        let scale = fd.abs().max(g.abs()).max(1e-4);
        assert!((fd - g).abs() <= 1e-4 * scale + 1e-9, "{label} param {i}: fd {fd} vs analytic {g}");
    }
}

fn specs() -> Vec<AgentSpec> {
    vec![AgentSpec::gr2l(1), AgentSpec::gr2l(2), AgentSpec::gr2l(3), AgentSpec::gr2m(2, 1.5)]
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let cfg = TrainerConfig::default();
    for (s, spec) in specs().into_iter().chain([AgentSpec::indep()]).enumerate() {
        let agent = bundle(spec, s as u64);
        let b = batch(s as u64, 5);
        let mut rng = seeded_stream(s as u64, 3);
        let noise = LossNoise::sample(&mut rng, b.len(), cfg.opponent_samples);
        check_fd(
            agent.omega.flat(),
            |p| {
                let mut a = agent.clone();
                a.omega.set_flat(p);
                a.critic_loss(&b, &noise, &cfg, 0.3).unwrap()
            },
            &spec.label(),
        );
    }
}

#[test]
fn opponent_gradient_matches_finite_differences() {
    let cfg = TrainerConfig::default();
    for (s, spec) in specs().into_iter().enumerate() {
        let agent = bundle(spec, 10 + s as u64);
        let b = batch(s as u64, 5);
        let mut rng = seeded_stream(s as u64, 4);
        let noise = LossNoise::sample(&mut rng, b.len(), cfg.opponent_samples);
        check_fd(
            agent.phi.params().to_vec(),
            |p| {
                let mut a = agent.clone();
                a.phi.params_mut().copy_from_slice(p);
                a.opponent_model_loss(&b, &noise, &cfg).unwrap()
            },
            &spec.label(),
        );
    }
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let cfg = TrainerConfig::default();
    for (s, spec) in specs().into_iter().chain([AgentSpec::indep()]).enumerate() {
        let agent = bundle(spec, 20 + s as u64);
        let b = batch(s as u64, 5);
        let mut rng = seeded_stream(s as u64, 5);
        let noise = LossNoise::sample(&mut rng, b.len(), cfg.opponent_samples);
        check_fd(
            agent.theta.flat(),
            |p| {
                let mut a = agent.clone();
                a.theta.set_flat(p);
                a.actor_loss(&b, &noise, 0.2).unwrap()
            },
            &spec.label(),
        );
    }
}

fn active_aux_agent(level: usize) -> AgentBundle {
    let b = batch(0, 5);
    (0..200)
        .map(|s| bundle(AgentSpec::gr2l(level), 100 + s))
        .find(|a| a.auxiliary_level_loss(&b).unwrap().value > 1e-6)
        .expect("some initialization has an active hinge")
}

#[test]
fn auxiliary_gradient_matches_finite_differences() {
    for level in [2, 3] {
        let agent = active_aux_agent(level);
        let b = batch(0, 5);
        check_fd(
            agent.theta.flat(),
            |p| {
                let mut a = agent.clone();
                a.theta.set_flat(p);
                a.auxiliary_level_loss(&b).unwrap()
            },
            &format!("aux level {level}"),
        );
    }
}

#[test]
fn auxiliary_loss_is_zero_below_level_two() {
    let b = batch(1, 5);
    for spec in [AgentSpec::indep(), AgentSpec::gr2l(0), AgentSpec::gr2l(1)] {
        let l = bundle(spec, 3).auxiliary_level_loss(&b).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.iter().all(|g| *g == 0.0));
    }
    let l = active_aux_agent(2).auxiliary_level_loss(&b).unwrap();
    assert!(l.grad.iter().any(|g| g.abs() > 0.0));
}

#[test]
fn soft_target_examples() {
    assert_eq!(soft_target(1.0, 0.95, 123.0, true), 1.0);
    assert_abs_diff_eq!(soft_target(1.0, 0.95, 2.0, false), 2.9, epsilon = 1e-12);
}

#[test]
fn target_update_examples() {
    let mut a = bundle(AgentSpec::gr2l(1), 0);
    let w = a.omega.flat();
    let before = a.omega_bar.flat();
    a.target_update(0.0);
    assert_eq!(a.omega_bar.flat(), before);
    a.target_update(1.0);
    assert_eq!(a.omega_bar.flat(), w);

    let n = w.len();
    a.omega.set_flat(&vec![1.0; n]);
    a.omega_bar.set_flat(&vec![0.0; n]);
    a.target_update(0.001);
    assert!(a.omega_bar.flat().iter().all(|x| (x - 0.001).abs() < 1e-15));
}

#[test]
fn level_zero_acts_with_base_policy() {
    let cfg = TrainerConfig::default();
    let mut a = bundle(AgentSpec::gr2l(0), 4);
    let out = a.act(&cfg, false, 0).unwrap();
    assert_eq!(out.trace.len(), 1);
    assert!((-1.0..=1.0).contains(&out.action));
}

#[test]
fn zero_variance_head_matches_deterministic_rollout() {
    let cfg = TrainerConfig::default();
    let mut a = bundle(AgentSpec::gr2l(2), 5);
    // zero the log-std column of the own head and pin its bias at the floor
    let p = a.theta.own.params_mut();
    let n = p.len();
    let last_layer = n - (cfg.hidden[1] * 2 + 2);
    for k in 0..cfg.hidden[1] {
        p[last_layer + 2 * k + 1] = 0.0;
    }
    p[n - 1] = LOG_STD_MIN - 5.0;
    let trace = a.rollout_trace().unwrap();
    let out = a.act(&cfg, false, 10_000).unwrap();
    assert_abs_diff_eq!(out.action, trace[0], epsilon = 1e-7);
    assert_eq!(out.trace, trace);
}

#[test]
fn same_seed_gives_identical_actions() {
    let cfg = TrainerConfig::default();
    for spec in [AgentSpec::indep(), AgentSpec::gr2l(2), AgentSpec::gr2m(3, 1.5)] {
        let mut a = AgentBundle::new(spec, &cfg, seeded_stream(42, 1)).unwrap();
        let mut b = AgentBundle::new(spec, &cfg, seeded_stream(42, 1)).unwrap();
        for step in 0..50 {
            assert_eq!(a.act(&cfg, true, step).unwrap(), b.act(&cfg, true, step).unwrap());
        }
    }
}

#[test]
fn zero_learning_rates_leave_parameters_unchanged() {
    let cfg = TrainerConfig {
        lr_q: 0.0,
        lr_pi: 0.0,
        lr_rho: 0.0,
        batch_size: 8,
        ..TrainerConfig::default()
    };
    let mut a = AgentBundle::new(AgentSpec::gr2l(2), &cfg, seeded_stream(3, 1)).unwrap();
    for e in batch(3, 20) {
        a.replay.push(e);
    }
    let before = (a.theta.clone(), a.phi.clone(), a.omega.clone());
    let bar = a.omega_bar.flat();
    for step in 0..5 {
        update_agent(&mut a, &cfg, 0.5, step).unwrap();
    }
    assert_eq!(before, (a.theta.clone(), a.phi.clone(), a.omega.clone()));
    for (x, y) in bar.iter().zip(a.omega_bar.flat()) {
        assert_abs_diff_eq!(*x, y, epsilon = 1e-14);
    }
}

#[test]
fn entropy_alone_raises_log_std() {
    let mut a = bundle(AgentSpec::gr2l(1), 6);
    let n = a.omega.marginal.n_params();
    a.omega.marginal.params_mut().copy_from_slice(&vec![0.0; n]);
    let b = batch(6, 16);
    let mut rng = seeded_stream(6, 2);
    let noise = LossNoise::sample(&mut rng, b.len(), 8);
    let g = a.actor_loss(&b, &noise, 1.0).unwrap().grad;
    // last entry is the own head's log-std bias; descent raises it
    assert!(*g.last().unwrap() < 0.0);
}

#[test]
fn replay_keeps_the_most_recent_items() {
    let mut r = ReplayBuffer::new(100_000);
    for i in 0..=100_000u32 {
        r.push(i);
    }
    assert_eq!(r.len(), 100_000);
    assert_eq!(r.iter().next(), Some(&1));
    assert_eq!(r.iter().last(), Some(&100_000));
}

#[test]
fn temperature_anneals_monotonically() {
    let cfg = TrainerConfig::default();
    assert_abs_diff_eq!(cfg.alpha_at(0), cfg.alpha_start, epsilon = 1e-12);
    assert_abs_diff_eq!(cfg.alpha_at(cfg.iterations - 1), cfg.alpha_end, epsilon = 1e-12);
    for i in 1..cfg.iterations + 5 {
        assert!(cfg.alpha_at(i) <= cfg.alpha_at(i - 1));
    }
}

fn random_q(seed: u64, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut rng = seeded_stream(seed, 0);
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
}

#[test]
fn categorical_model_loss_vanishes_at_the_posterior() {
    let mut rng = seeded_stream(1, 0);
    let m = CategoricalOpponentModel::new(3, 5, &[10, 10], 1e-2, &mut rng);
    let q: Vec<Vec<f64>> = m.probs().iter().map(|r| r.iter().map(|p| p.ln() + 0.7).collect()).collect();
    assert!(m.loss(&q).unwrap().value.abs() < 1e-12);
    assert!(m.max_kl(&q).unwrap() < 1e-12);
}

#[test]
fn categorical_model_converges_to_a_frozen_posterior() {
    let mut rng = seeded_stream(2, 0);
    let mut m = CategoricalOpponentModel::new(5, 5, &[10, 10], 1e-2, &mut rng);
    let q = random_q(2, 5, 5);
    let first = m.loss(&q).unwrap().value;
    let mut reached = None;
    for step in 0..2000 {
        m.train_step(&q).unwrap();
        if m.max_kl(&q).unwrap() <= 1e-3 {
            reached = Some(step);
            break;
        }
    }
    assert!(reached.is_some(), "KL did not reach 1e-3");
    assert!(m.loss(&q).unwrap().value < first);
}

#[test]
fn categorical_loss_decreases_on_a_frozen_critic() {
    let mut rng = seeded_stream(3, 0);
    let mut m = CategoricalOpponentModel::new(2, 4, &[10, 10], 1e-3, &mut rng);
    let q = random_q(3, 2, 4);
    let losses: Vec<f64> = (0..400).map(|_| m.train_step(&q).unwrap()).collect();
    let windows: Vec<f64> = losses.chunks(50).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}

#[test]
fn short_training_run_is_reproducible() {
    let env = TrainEnv::Beauty(BeautyContestEnv::new(2, 0.7, RewardScheme::AbsoluteDifference).unwrap());
    let cfg = TrainerConfig {
        iterations: 12,
        warmup: 64,
        ..TrainerConfig::default()
    };
    let a = train(&env, &[AgentSpec::gr2l(2)], &cfg, 9, |_| {}).unwrap();
    let b = train(&env, &[AgentSpec::gr2l(2)], &cfg, 9, |_| {}).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.rows.len(), 24);
    assert!(a.rows.iter().all(|r| (0.0..=100.0).contains(&r.mean_action)));
    assert!(a.rows.last().unwrap().loss_q.is_some());
}
