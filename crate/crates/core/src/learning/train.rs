//! The training loop: act, store, update every agent, report per-iteration metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::agent::{AgentBundle, Experience, LossNoise};
use super::config::{AgentSpec, Method, TrainerConfig};
use crate::games::{BeautyContestEnv, NormalFormGame};
use crate::{Error, Result};

/// A stage game wrapped for training. Matrix games need two actions per
/// player; each agent's continuous action is its probability of action 0.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEnv {
    Beauty(BeautyContestEnv),
    Matrix(NormalFormGame),
}

impl TrainEnv {
    pub fn n_agents(&self) -> usize {
        match self {
            TrainEnv::Beauty(e) => e.n(),
            TrainEnv::Matrix(_) => 2,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            TrainEnv::Beauty(e) => e.bounds(),
            TrainEnv::Matrix(_) => (0.0, 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TrainEnv::Matrix(g) if g.action_counts() != (2, 2) => Err(Error::shape(format!(
                "training on matrix games needs 2 actions per player, got {:?}",
                g.action_counts()
            ))),
            _ => Ok(()),
        }
    }

    pub fn to_raw(&self, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        (lo + (x + 1.0) * 0.5 * (hi - lo)).clamp(lo, hi)
    }

    pub fn to_normalized(&self, a: f64) -> f64 {
        let (lo, hi) = self.bounds();
        2.0 * (a - lo) / (hi - lo) - 1.0
    }

    /// What agent `i` treats as the opponent's action.
    pub fn opponent_view(&self, xs: &[f64], i: usize) -> f64 {
        match self {
            TrainEnv::Beauty(_) => {
                let others: f64 = xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| x).sum();
                others / (xs.len() - 1) as f64
            }
            TrainEnv::Matrix(_) => xs[1 - i],
        }
    }

    /// Plays one round with raw actions; matrix games sample each player's pure action.
    pub fn play<R: Rng + ?Sized>(&self, raw: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            TrainEnv::Beauty(e) => e.step(raw),
            TrainEnv::Matrix(g) => {
                let mut pick = |p: f64| usize::from(rng.gen::<f64>() >= p);
                let (r, c) = (pick(raw[0]), pick(raw[1]));
                let (pr, pc) = g.payoff(r, c)?;
                Ok(vec![pr, pc])
            }
        }
    }
}

/// Per-iteration, per-agent metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub iteration: usize,
    /// Environment steps completed at the end of the iteration.
    pub step: usize,
    pub agent: usize,
    pub mean_action: f64,
    pub mean_reward: f64,
    pub loss_q: Option<f64>,
    pub loss_pi: Option<f64>,
    pub loss_rho: Option<f64>,
    pub loss_aux: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<MetricRow>,
    pub agents: Vec<AgentBundle>,
    /// Per iteration: mean over agents of `(Q(a_k, b_{k-1}), Q(a_{k-2}, b_{k-1}))`.
    pub level_gaps: Vec<Option<(f64, f64)>>,
}

impl TrainOutcome {
    fn final_rows(&self) -> impl Iterator<Item = &MetricRow> {
        let last = self.rows.last().map(|r| r.iteration);
        self.rows.iter().filter(move |r| Some(r.iteration) == last)
    }

    /// Mean action of the final iteration, averaged over agents.
    pub fn final_mean_action(&self) -> f64 {
        mean(self.final_rows().map(|r| r.mean_action))
    }

    pub fn final_mean_reward(&self) -> f64 {
        mean(self.final_rows().map(|r| r.mean_reward))
    }

    /// Agent-averaged mean action per iteration.
    pub fn mean_action_curve(&self) -> Vec<f64> {
        let iters = self.rows.last().map_or(0, |r| r.iteration + 1);
        let mut sum = vec![0.0; iters];
        let mut cnt = vec![0usize; iters];
        for r in &self.rows {
            sum[r.iteration] += r.mean_action;
            cnt[r.iteration] += 1;
        }
        sum.iter().zip(&cnt).map(|(s, c)| s / *c as f64).collect()
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    sum: f64,
    n: usize,
}

impl Acc {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

#[derive(Default, Clone, Copy)]
struct AgentAcc {
    action: Acc,
    reward: Acc,
    q: Acc,
    pi: Acc,
    rho: Acc,
    aux: Acc,
}

/// Independent random stream `stream` derived from `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds one bundle per agent; `specs` holds one spec per agent, or a single
/// spec shared by all (self-play).
pub fn init_agents(env: &TrainEnv, specs: &[AgentSpec], cfg: &TrainerConfig, seed: u64) -> Result<Vec<AgentBundle>> {
    let n = env.n_agents();
    if specs.len() != 1 && specs.len() != n {
        return Err(Error::Config(format!(
            "{} agent specs for an environment with {n} agents",
            specs.len()
        )));
    }
    (0..n)
        .map(|i| {
            let spec = specs[if specs.len() == 1 { 0 } else { i }];
            AgentBundle::new(spec, cfg, seeded_stream(seed, i as u64 + 1))
        })
        .collect()
}

fn check_finite(value: f64, loss: &'static str, step: usize, agent: &AgentBundle, batch: &[Experience]) -> Result<()> {
    if value.is_finite() {
        return Ok(());
    }
    let mut diagnostics = String::new();
    diagnostics.push_str(&agent.describe_params());
    diagnostics.push_str(&format!("; last batch ({} transitions):", batch.len()));
    for e in batch.iter().take(8) {
        diagnostics.push_str(&format!(" ({:.4},{:.4},{:.4})", e.own, e.opp, e.reward));
    }
    Err(Error::NonFiniteLoss {
        loss,
        step,
        diagnostics,
    })
}

/// One gradient round for `agent`. Returns the
/// losses `(q, pi, rho, aux)`.
pub fn update_agent(agent: &mut AgentBundle, cfg: &TrainerConfig, alpha: f64, step: usize) -> Result<[Option<f64>; 4]> {
    let batch = agent.replay.sample(cfg.batch_size, &mut agent.rng);
    let noise = LossNoise::sample(&mut agent.rng, batch.len(), cfg.opponent_samples);

    let lq = agent.critic_loss(&batch, &noise, cfg, alpha)?;
    check_finite(lq.value, "critic", step, agent, &batch)?;
    agent.apply_critic_grad(&lq.grad);

    let mut l_rho = None;
    if agent.spec.method != Method::Indep {
        let lr = agent.opponent_model_loss(&batch, &noise, cfg)?;
        check_finite(lr.value, "opponent", step, agent, &batch)?;
        agent.apply_opponent_grad(&lr.grad);
        l_rho = Some(lr.value);
    }

    let mut lpi = agent.actor_loss(&batch, &noise, alpha)?;
    check_finite(lpi.value, "actor", step, agent, &batch)?;
    let mut l_aux = None;
    if cfg.aux_loss && agent.spec.method != Method::Indep && agent.spec.level >= 2 {
        let la = agent.auxiliary_level_loss(&batch)?;
        check_finite(la.value, "auxiliary", step, agent, &batch)?;
        lpi.grad.iter_mut().zip(&la.grad).for_each(|(g, a)| *g += cfg.aux_weight * a);
        l_aux = Some(la.value);
    }
    agent.apply_policy_grad(&lpi.grad);
    agent.target_update(cfg.polyak);
    Ok([Some(lq.value), Some(lpi.value), l_rho, l_aux])
}

/// Runs the training loop for `cfg.iterations` iterations. `observer` sees each
/// metric row as soon as its iteration ends.
pub fn train(
    env: &TrainEnv,
    specs: &[AgentSpec],
    cfg: &TrainerConfig,
    seed: u64,
    mut observer: impl FnMut(&MetricRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    env.validate()?;
    let mut agents = init_agents(env, specs, cfg, seed)?;
    let mut env_rng = seeded_stream(seed, 0);
    let n = agents.len();
    let mut rows = Vec::with_capacity(cfg.iterations * n);
    let mut level_gaps = Vec::with_capacity(cfg.iterations);
    let mut step = 0usize;

    for iteration in 0..cfg.iterations {
        let alpha = cfg.alpha_at(iteration);
        let mut acc = vec![AgentAcc::default(); n];
        for t in 0..cfg.steps_per_iteration {
            let mut xs = Vec::with_capacity(n);
            for agent in agents.iter_mut() {
                xs.push(agent.act(cfg, true, step)?.action);
            }
            let raw: Vec<f64> = xs.iter().map(|x| env.to_raw(*x)).collect();
            let rewards = env.play(&raw, &mut env_rng)?;
            let terminal = t + 1 == cfg.steps_per_iteration;
            for (i, agent) in agents.iter_mut().enumerate() {
                agent.replay.push(Experience {
                    own: xs[i],
                    opp: env.opponent_view(&xs, i),
                    reward: rewards[i],
                    terminal,
                });
                acc[i].action.add(raw[i]);
                acc[i].reward.add(rewards[i]);
            }
            for (i, agent) in agents.iter_mut().enumerate() {
                if agent.replay.len() >= cfg.warmup.max(cfg.batch_size) {
                    let [q, pi, rho, aux] = update_agent(agent, cfg, alpha, step)?;
                    let a = &mut acc[i];
                    q.map(|v| a.q.add(v));
                    pi.map(|v| a.pi.add(v));
                    rho.map(|v| a.rho.add(v));
                    aux.map(|v| a.aux.add(v));
                }
            }
            step += 1;
        }
        for (i, a) in acc.iter().enumerate() {
            let row = MetricRow {
                iteration,
                step,
                agent: i,
                mean_action: a.action.get().unwrap_or(f64::NAN),
                mean_reward: a.reward.get().unwrap_or(f64::NAN),
                loss_q: a.q.get(),
                loss_pi: a.pi.get(),
                loss_rho: a.rho.get(),
                loss_aux: a.aux.get(),
            };
            observer(&row);
            rows.push(row);
        }
        let mut gap = Acc::default();
        let mut low = Acc::default();
        for agent in &agents {
            if let Some((hi, lo)) = agent.level_gap()? {
                gap.add(hi);
                low.add(lo);
            }
        }
        level_gaps.push(gap.get().zip(low.get()));
    }
    Ok(TrainOutcome {
        rows,
        agents,
        level_gaps,
    })
}
