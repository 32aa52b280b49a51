//! One learning agent: policy, opponent model and critics, with the losses
//! that train them.
//!
//! Actions are handled in normalized units `x` in `[-1, 1]`; environments map
//! them to their own bounds. Every Gaussian head emits a mean `mu` and a
//! log-std (clamped to `[LOG_STD_MIN, LOG_STD_MAX]`) for the pre-squash value
//! `u`, and `x = 2 * sigmoid(u) - 1`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::autodiff::{Tape, Tensor, Var};
use super::config::{AgentSpec, Method, TrainerConfig};
use super::nn::{Adam, BoundMlp, Mlp};
use super::replay::ReplayBuffer;
use crate::games::StateToken;
use crate::reasoning::{level_k_rollout, LevelKStack, PoissonMixture};
use crate::{fmath, Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;
const LN_2: f64 = core::f64::consts::LN_2;

/// A transition from one agent's point of view, actions normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Experience {
    pub own: f64,
    /// Opponent action, or the mean of all other agents' actions.
    pub opp: f64,
    pub reward: f64,
    pub terminal: bool,
}

/// Policy parameters θ: the unconditioned level-0 head and the shared
/// own-conditional head used by every own level ≥ 1.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyParams {
    pub base: Mlp,
    pub own: Mlp,
}

/// Critic parameters ω: joint head `Q(s, a, b)` and marginal head `Q(s, a)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CriticParams {
    pub joint: Mlp,
    pub marginal: Mlp,
}

fn concat_params(a: &Mlp, b: &Mlp) -> Vec<f64> {
    let mut v = a.params().to_vec();
    v.extend_from_slice(b.params());
    v
}

fn split_params(a: &mut Mlp, b: &mut Mlp, flat: &[f64]) {
    let n = a.n_params();
    assert_eq!(flat.len(), n + b.n_params(), "flat parameter length mismatch");
    a.params_mut().copy_from_slice(&flat[..n]);
    b.params_mut().copy_from_slice(&flat[n..]);
}

impl PolicyParams {
    pub fn flat(&self) -> Vec<f64> {
        concat_params(&self.base, &self.own)
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        split_params(&mut self.base, &mut self.own, flat)
    }
}

impl CriticParams {
    pub fn flat(&self) -> Vec<f64> {
        concat_params(&self.joint, &self.marginal)
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        split_params(&mut self.joint, &mut self.marginal, flat)
    }
}

/// Standard-normal draws consumed by one round of loss evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct LossNoise {
    /// Top-level policy noise at the next state, one per transition.
    pub next_top: Vec<f64>,
    /// Opponent samples at the next state, `opponent_samples` per transition.
    pub next_opp: Vec<f64>,
    /// Opponent samples for the marginal-critic target.
    pub marginal_opp: Vec<f64>,
    /// Reparameterization noise of the opponent-model loss.
    pub rho: Vec<f64>,
    /// Top-level policy noise of the actor loss.
    pub actor: Vec<f64>,
}

impl LossNoise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, batch: usize, opponent_samples: usize) -> Self {
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let m = batch * opponent_samples;
        Self {
            next_top: draw(batch),
            next_opp: draw(m),
            marginal_opp: draw(m),
            rho: draw(m),
            actor: draw(batch),
        }
    }
}

/// Value of a loss and its gradient with respect to one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Result of [`AgentBundle::act`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutcome {
    /// Executed action, normalized.
    pub action: f64,
    /// Deterministic rollout of the top level, `(a_k, b_{k-1}, a_{k-2}, ...)`.
    pub trace: Vec<f64>,
}

/// Mean-reverting Ornstein-Uhlenbeck process with unit time step.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    pub state: f64,
}

impl OuNoise {
    pub fn new(theta: f64, sigma: f64) -> Self {
        Self { theta, sigma, state: 0.0 }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.state += -self.theta * self.state + self.sigma * z;
        self.state
    }
}

/// Soft Bellman target `r + gamma * V(s')`, without bootstrap on terminal steps.
pub fn soft_target(reward: f64, gamma: f64, v_next: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * v_next
    }
}

/// Everything one agent owns.
#[derive(Debug, Clone)]
pub struct AgentBundle {
    pub spec: AgentSpec,
    pub theta: PolicyParams,
    /// Opponent model ρ(b | s, a), shared by every opponent level.
    pub phi: Mlp,
    pub omega: CriticParams,
    pub omega_bar: CriticParams,
    pub replay: ReplayBuffer<Experience>,
    pub rng: ChaCha8Rng,
    mixture: Option<PoissonMixture>,
    opt_theta: Adam,
    opt_phi: Adam,
    opt_omega: Adam,
    ou: OuNoise,
}

fn mlp_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

fn gaussian_net(input: usize, cfg: &TrainerConfig, rng: &mut ChaCha8Rng) -> Mlp {
    let mut net = Mlp::new(&mlp_sizes(input, &cfg.hidden, 2), 0.1, rng);
    let n = net.n_params();
    net.params_mut()[n - 1] = cfg.init_log_std;
    net
}

impl AgentBundle {
    pub fn new(spec: AgentSpec, cfg: &TrainerConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let mixture = match spec.method {
            Method::Gr2m => Some(PoissonMixture::new(spec.lambda.unwrap_or(1.5), spec.level)?),
            _ => None,
        };
        let theta = PolicyParams {
            base: gaussian_net(1, cfg, &mut rng),
            own: gaussian_net(2, cfg, &mut rng),
        };
        let phi = gaussian_net(2, cfg, &mut rng);
        let omega = CriticParams {
            joint: Mlp::new(&mlp_sizes(3, &cfg.hidden, 1), 1.0, &mut rng),
            marginal: Mlp::new(&mlp_sizes(2, &cfg.hidden, 1), 1.0, &mut rng),
        };
        Ok(Self {
            spec,
            opt_theta: Adam::new(theta.base.n_params() + theta.own.n_params(), cfg.lr_pi),
            opt_phi: Adam::new(phi.n_params(), cfg.lr_rho),
            opt_omega: Adam::new(omega.joint.n_params() + omega.marginal.n_params(), cfg.lr_q),
            omega_bar: omega.clone(),
            theta,
            phi,
            omega,
            replay: ReplayBuffer::new(cfg.replay_capacity),
            rng,
            mixture,
            ou: OuNoise::new(cfg.ou_theta, cfg.ou_sigma),
        })
    }

    pub fn mixture(&self) -> Option<&PoissonMixture> {
        self.mixture.as_ref()
    }

    /// Chooses an action. `step` is the global environment step, used for the
    /// exploration window.
    pub fn act(&mut self, cfg: &TrainerConfig, explore: bool, step: usize) -> Result<ActOutcome> {
        let eps: f64 = self.rng.sample(StandardNormal);
        let mut ctx = Ctx::new(self);
        let ones = ctx.ones(1);
        let out = if self.spec.method == Method::Indep {
            ctx.policy(self, ones, None)?
        } else {
            let e = ctx.tape.leaf(Tensor::scalar(eps));
            ctx.policy(self, ones, Some(e))?
        };
        let mut x = ctx.tape.scalar(out.action);
        let trace = out.trace.iter().map(|v| ctx.tape.scalar(*v)).collect();
        if explore {
            x += match self.spec.method {
                Method::Indep => self.ou.sample(&mut self.rng),
                _ if step < cfg.explore_steps => {
                    let z: f64 = self.rng.sample(StandardNormal);
                    cfg.explore_noise * z
                }
                _ => 0.0,
            };
        }
        Ok(ActOutcome {
            action: x.clamp(-1.0, 1.0),
            trace,
        })
    }

    /// Deterministic level-`k` rollout actions (normalized), top level first.
    pub fn rollout_trace(&self) -> Result<Vec<f64>> {
        let mut ctx = Ctx::new(self);
        let ones = ctx.ones(1);
        let trace = ctx.rollout(self, ones, self.spec.level)?;
        Ok(trace.iter().map(|v| ctx.tape.scalar(*v)).collect())
    }

    /// `(Q(a_k, b_{k-1}), Q(a_{k-2}, b_{k-1}))` along the deterministic rollout.
    pub fn level_gap(&self) -> Result<Option<(f64, f64)>> {
        if self.spec.method == Method::Indep || self.spec.level < 2 {
            return Ok(None);
        }
        let mut ctx = Ctx::new(self);
        let ones = ctx.ones(1);
        let tr = ctx.rollout(self, ones, self.spec.level)?;
        let hi = ctx.q_joint(Which::Current, ones, tr[0], tr[1]);
        let lo = ctx.q_joint(Which::Current, ones, tr[2], tr[1]);
        Ok(Some((ctx.tape.scalar(hi), ctx.tape.scalar(lo))))
    }

    /// Soft Bellman residual of both critic heads; gradient w.r.t. ω.
    pub fn critic_loss(&self, batch: &[Experience], noise: &LossNoise, cfg: &TrainerConfig, alpha: f64) -> Result<LossEval> {
        if batch.is_empty() {
            return Err(Error::domain("critic loss needs a non-empty batch"));
        }
        let n = batch.len();
        let m = cfg.opponent_samples;
        let mut ctx = Ctx::new(self);
        let ones = ctx.ones(n);
        let own = ctx.column(batch.iter().map(|e| e.own));
        let opp = ctx.column(batch.iter().map(|e| e.opp));
        let rewards: Vec<f64> = batch.iter().map(|e| e.reward * cfg.reward_scale).collect();

        if self.spec.method == Method::Indep {
            let next = ctx.policy(self, ones, None)?;
            let q_next = ctx.q_marginal(Which::Target, ones, next.action);
            let y = targets(&rewards, batch, cfg.gamma, &ctx.tape.value(q_next).data);
            let yv = ctx.column(y.into_iter());
            let q = ctx.q_marginal(Which::Current, ones, own);
            let loss = ctx.half_mse(q, yv);
            return Ok(ctx.eval_omega(loss));
        }

        // next-state soft value through the target critic
        let eps = ctx.column(noise.next_top[..n].iter().copied());
        let next = ctx.policy(self, ones, Some(eps))?;
        let ones_m = ctx.ones(n * m);
        let x_rep = ctx.tape.repeat_rows(next.action, m);
        let e_opp = ctx.column(noise.next_opp[..n * m].iter().copied());
        let (b_next, _) = ctx.sample_head(Net::Rho, ones_m, Some(x_rep), e_opp);
        let q_next = ctx.q_joint(Which::Target, ones_m, x_rep, b_next);
        let qm_next = ctx.tape.log_mean_exp_groups(q_next, m);
        let log_pi = next.log_prob.expect("stochastic policy has a density");
        let v: Vec<f64> = ctx
            .tape
            .value(qm_next)
            .data
            .iter()
            .zip(&ctx.tape.value(log_pi).data)
            .map(|(q, lp)| q - alpha * lp)
            .collect();
        let y = targets(&rewards, batch, cfg.gamma, &v);

        // marginal head regresses onto the target critic marginalized under ρ
        let own_rep = ctx.tape.repeat_rows(own, m);
        let e_marg = ctx.column(noise.marginal_opp[..n * m].iter().copied());
        let (b_marg, _) = ctx.sample_head(Net::Rho, ones_m, Some(own_rep), e_marg);
        let q_marg_t = ctx.q_joint(Which::Target, ones_m, own_rep, b_marg);
        let ym = ctx.tape.log_mean_exp_groups(q_marg_t, m);
        let ym = ctx.tape.detach(ym);

        let yv = ctx.column(y.into_iter());
        let q = ctx.q_joint(Which::Current, ones, own, opp);
        let l_joint = ctx.half_mse(q, yv);
        let qm = ctx.q_marginal(Which::Current, ones, own);
        let l_marg = ctx.half_mse(qm, ym);
        let loss = ctx.tape.add(l_joint, l_marg);
        Ok(ctx.eval_omega(loss))
    }

    /// Reparameterized KL from ρ_φ(·|s,a) to the posterior ∝ exp(Q(s,a,b) - Q(s,a));
    /// gradient w.r.t. φ.
    pub fn opponent_model_loss(&self, batch: &[Experience], noise: &LossNoise, cfg: &TrainerConfig) -> Result<LossEval> {
        if batch.is_empty() {
            return Err(Error::domain("opponent loss needs a non-empty batch"));
        }
        let n = batch.len();
        let m = cfg.opponent_samples;
        let mut ctx = Ctx::new(self);
        let ones_m = ctx.ones(n * m);
        let own = ctx.column(batch.iter().map(|e| e.own));
        let own_rep = ctx.tape.repeat_rows(own, m);
        let eps = ctx.column(noise.rho[..n * m].iter().copied());
        let (b, log_rho) = ctx.sample_head(Net::Rho, ones_m, Some(own_rep), eps);
        let q = ctx.q_joint(Which::Current, ones_m, own_rep, b);
        let qm = ctx.q_marginal(Which::Current, ones_m, own_rep);
        let qm = ctx.tape.detach(qm);
        let d = ctx.tape.sub(log_rho, q);
        let d = ctx.tape.add(d, qm);
        let loss = ctx.tape.mean(d);
        let value = ctx.tape.scalar(loss);
        let grads = ctx.tape.backward(loss);
        Ok(LossEval {
            value,
            grad: ctx.rho.gradient(&grads),
        })
    }

    /// `E[alpha * log pi_k(a_k) - Q(s, a_k)]` with the rollout differentiated end to
    /// end; gradient w.r.t. θ.
    pub fn actor_loss(&self, batch: &[Experience], noise: &LossNoise, alpha: f64) -> Result<LossEval> {
        if batch.is_empty() {
            return Err(Error::domain("actor loss needs a non-empty batch"));
        }
        let n = batch.len();
        let mut ctx = Ctx::new(self);
        let ones = ctx.ones(n);
        let loss = if self.spec.method == Method::Indep {
            let pol = ctx.policy(self, ones, None)?;
            let q = ctx.q_marginal(Which::Current, ones, pol.action);
            let q = ctx.tape.mean(q);
            ctx.tape.scale(q, -1.0)
        } else {
            let eps = ctx.column(noise.actor[..n].iter().copied());
            let pol = ctx.policy(self, ones, Some(eps))?;
            let q = ctx.q_marginal(Which::Current, ones, pol.action);
            let lp = ctx.tape.scale(pol.log_prob.expect("stochastic policy"), alpha);
            let d = ctx.tape.sub(lp, q);
            ctx.tape.mean(d)
        };
        Ok(ctx.eval_theta(loss))
    }

    /// Hinge on the inter-level improvement `Q(a_k, b_{k-1}) - Q(a_{k-2}, b_{k-1})`;
    /// zero for `k < 2`. Gradient w.r.t. θ.
    pub fn auxiliary_level_loss(&self, batch: &[Experience]) -> Result<LossEval> {
        let n_theta = self.theta.base.n_params() + self.theta.own.n_params();
        if self.spec.method == Method::Indep || self.spec.level < 2 || batch.is_empty() {
            return Ok(LossEval {
                value: 0.0,
                grad: vec![0.0; n_theta],
            });
        }
        let n = batch.len();
        let mut ctx = Ctx::new(self);
        let ones = ctx.ones(n);
        let tr = ctx.rollout(self, ones, self.spec.level)?;
        let hi = ctx.q_joint(Which::Current, ones, tr[0], tr[1]);
        let lo = ctx.q_joint(Which::Current, ones, tr[2], tr[1]);
        let gap = ctx.tape.sub(lo, hi);
        let hinge = ctx.tape.relu(gap);
        let loss = ctx.tape.mean(hinge);
        Ok(ctx.eval_theta(loss))
    }

    /// Polyak averaging `ω̄ ← tau ω + (1 - tau) ω̄`.
    pub fn target_update(&mut self, tau: f64) {
        let w = self.omega.flat();
        let mut wb = self.omega_bar.flat();
        wb.iter_mut().zip(&w).for_each(|(b, w)| *b = tau * w + (1.0 - tau) * *b);
        self.omega_bar.set_flat(&wb);
    }

    pub fn apply_critic_grad(&mut self, grad: &[f64]) {
        let mut p = self.omega.flat();
        self.opt_omega.step(&mut p, grad);
        self.omega.set_flat(&p);
    }

    pub fn apply_opponent_grad(&mut self, grad: &[f64]) {
        let mut p = self.phi.params().to_vec();
        self.opt_phi.step(&mut p, grad);
        self.phi.params_mut().copy_from_slice(&p);
    }

    pub fn apply_policy_grad(&mut self, grad: &[f64]) {
        let mut p = self.theta.flat();
        self.opt_theta.step(&mut p, grad);
        self.theta.set_flat(&p);
    }

    /// Parameter norms, for diagnostics.
    pub fn describe_params(&self) -> String {
        let norm = |v: &[f64]| fmath::sqrt(v.iter().map(|x| x * x).sum());
        format!(
            "|theta|={:.4e} |phi|={:.4e} |omega|={:.4e} |omega_bar|={:.4e}",
            norm(&self.theta.flat()),
            norm(self.phi.params()),
            norm(&self.omega.flat()),
            norm(&self.omega_bar.flat())
        )
    }
}

fn targets(rewards: &[f64], batch: &[Experience], gamma: f64, v_next: &[f64]) -> Vec<f64> {
    rewards
        .iter()
        .zip(batch)
        .zip(v_next)
        .map(|((r, e), v)| soft_target(*r, gamma, *v, e.terminal))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Net {
    Base,
    Own,
    Rho,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Which {
    Current,
    Target,
}

struct PolicyOut {
    action: Var,
    log_prob: Option<Var>,
    trace: Vec<Var>,
}

/// A tape with every network of one agent bound to it.
struct Ctx {
    tape: Tape,
    base: BoundMlp,
    own: BoundMlp,
    rho: BoundMlp,
    joint: BoundMlp,
    marginal: BoundMlp,
    joint_bar: BoundMlp,
    marginal_bar: BoundMlp,
}

impl Ctx {
    fn new(agent: &AgentBundle) -> Self {
        let mut tape = Tape::new();
        Self {
            base: agent.theta.base.bind(&mut tape),
            own: agent.theta.own.bind(&mut tape),
            rho: agent.phi.bind(&mut tape),
            joint: agent.omega.joint.bind(&mut tape),
            marginal: agent.omega.marginal.bind(&mut tape),
            joint_bar: agent.omega_bar.joint.bind(&mut tape),
            marginal_bar: agent.omega_bar.marginal.bind(&mut tape),
            tape,
        }
    }

    fn ones(&mut self, n: usize) -> Var {
        self.tape.leaf(Tensor::filled(n, 1, 1.0))
    }

    fn column(&mut self, it: impl Iterator<Item = f64>) -> Var {
        self.tape.leaf(Tensor::column(it.collect()))
    }

    fn net(&self, net: Net) -> &BoundMlp {
        match net {
            Net::Base => &self.base,
            Net::Own => &self.own,
            Net::Rho => &self.rho,
        }
    }

    /// `(mean, clamped log-std)` of a Gaussian head.
    fn head(&mut self, net: Net, ones: Var, input: Option<Var>) -> (Var, Var) {
        let x = match input {
            Some(v) => self.tape.concat(&[ones, v]),
            None => ones,
        };
        let out = self.net(net).clone().forward(&mut self.tape, x);
        let mu = self.tape.col(out, 0);
        let ls = self.tape.col(out, 1);
        let ls = self.tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX);
        (mu, ls)
    }

    fn squash(&mut self, u: Var) -> Var {
        let s = self.tape.sigmoid(u);
        let s = self.tape.scale(s, 2.0);
        self.tape.add_scalar(s, -1.0)
    }

    fn mean_action(&mut self, net: Net, ones: Var, input: Option<Var>) -> Var {
        let (mu, _) = self.head(net, ones, input);
        self.squash(mu)
    }

    /// Reparameterized sample and its log-density in normalized action space.
    fn sample_head(&mut self, net: Net, ones: Var, input: Option<Var>, eps: Var) -> (Var, Var) {
        let (mu, ls) = self.head(net, ones, input);
        let std = self.tape.exp(ls);
        let noise = self.tape.mul(std, eps);
        let u = self.tape.add(mu, noise);
        let x = self.squash(u);
        let c = {
            let e = self.tape.value(eps);
            Tensor::column(e.data.iter().map(|z| -0.5 * z * z - HALF_LN_TAU - LN_2).collect())
        };
        let c = self.tape.leaf(c);
        let sp_pos = self.tape.softplus(u);
        let neg_u = self.tape.scale(u, -1.0);
        let sp_neg = self.tape.softplus(neg_u);
        let lp = self.tape.sub(c, ls);
        let lp = self.tape.add(lp, sp_pos);
        let lp = self.tape.add(lp, sp_neg);
        (x, lp)
    }

    fn q_joint(&mut self, which: Which, ones: Var, a: Var, b: Var) -> Var {
        let x = self.tape.concat(&[ones, a, b]);
        let net = match which {
            Which::Current => self.joint.clone(),
            Which::Target => self.joint_bar.clone(),
        };
        net.forward(&mut self.tape, x)
    }

    fn q_marginal(&mut self, which: Which, ones: Var, a: Var) -> Var {
        let x = self.tape.concat(&[ones, a]);
        let net = match which {
            Which::Current => self.marginal.clone(),
            Which::Target => self.marginal_bar.clone(),
        };
        net.forward(&mut self.tape, x)
    }

    fn half_mse(&mut self, q: Var, y: Var) -> Var {
        let d = self.tape.sub(q, y);
        let d = self.tape.square(d);
        let l = self.tape.mean(d);
        self.tape.scale(l, 0.5)
    }

    /// Deterministic level-`k` rollout (mean actions), `(a_k, b_{k-1}, ...)`.
    fn rollout(&mut self, agent: &AgentBundle, ones: Var, k: usize) -> Result<Vec<Var>> {
        let stack = TapeStack {
            ctx: RefCell::new(self),
            ones,
            max_level: agent.spec.level.max(k),
        };
        let r = level_k_rollout(&stack, StateToken::default(), k)?;
        Ok(r.actions())
    }

    /// Top-level action at level `k`: sampled when `eps` is given, otherwise the mean.
    fn top_level(&mut self, agent: &AgentBundle, ones: Var, k: usize, eps: Option<Var>) -> Result<PolicyOut> {
        let trace = self.rollout(agent, ones, k)?;
        let (net, input) = if k == 0 { (Net::Base, None) } else { (Net::Own, Some(trace[1])) };
        Ok(match eps {
            Some(e) => {
                let (x, lp) = self.sample_head(net, ones, input, e);
                PolicyOut {
                    action: x,
                    log_prob: Some(lp),
                    trace,
                }
            }
            None => PolicyOut {
                action: trace[0],
                log_prob: None,
                trace,
            },
        })
    }

    fn policy(&mut self, agent: &AgentBundle, ones: Var, eps: Option<Var>) -> Result<PolicyOut> {
        let k = agent.spec.level;
        match (agent.spec.method, agent.mixture.as_ref()) {
            (Method::Indep, _) => {
                let a = self.mean_action(Net::Base, ones, None);
                Ok(PolicyOut {
                    action: a,
                    log_prob: None,
                    trace: vec![a],
                })
            }
            (Method::Gr2m, Some(mix)) => {
                let w = mix.weights().to_vec();
                let top = self.top_level(agent, ones, k, eps)?;
                let mut acc = self.tape.scale(top.action, w[k]);
                for (m, wm) in w.iter().enumerate().take(k) {
                    let am = self.rollout(agent, ones, m)?[0];
                    let am = self.tape.scale(am, *wm);
                    acc = self.tape.add(acc, am);
                }
                Ok(PolicyOut { action: acc, ..top })
            }
            _ => self.top_level(agent, ones, k, eps),
        }
    }

    fn eval_omega(&mut self, loss: Var) -> LossEval {
        let value = self.tape.scalar(loss);
        let g = self.tape.backward(loss);
        let mut grad = self.joint.gradient(&g);
        grad.extend(self.marginal.gradient(&g));
        LossEval { value, grad }
    }

    fn eval_theta(&mut self, loss: Var) -> LossEval {
        let value = self.tape.scalar(loss);
        let g = self.tape.backward(loss);
        let mut grad = self.base.gradient(&g);
        grad.extend(self.own.gradient(&g));
        LossEval { value, grad }
    }
}

/// Level-k stack whose conditionals are the agent's mean actions on a tape.
struct TapeStack<'c> {
    ctx: RefCell<&'c mut Ctx>,
    ones: Var,
    max_level: usize,
}

impl LevelKStack for TapeStack<'_> {
    type Action = Var;

    fn max_level(&self) -> usize {
        self.max_level
    }

    fn level0(&self, _s: StateToken) -> Var {
        self.ctx.borrow_mut().mean_action(Net::Base, self.ones, None)
    }

    fn own(&self, _level: usize, _s: StateToken, opp: &Var) -> Var {
        self.ctx.borrow_mut().mean_action(Net::Own, self.ones, Some(*opp))
    }

    fn opp(&self, _level: usize, _s: StateToken, own: &Var) -> Var {
        self.ctx.borrow_mut().mean_action(Net::Rho, self.ones, Some(*own))
    }
}
