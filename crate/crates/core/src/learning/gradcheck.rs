//! Central finite-difference checks of every loss of an [`AgentBundle`].

use alloc::vec::Vec;

use super::agent::{AgentBundle, Experience, LossEval, LossNoise};
use super::config::{Method, TrainerConfig};
use crate::Result;

/// Worst disagreement between the analytic and numeric gradient of one loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub loss: &'static str,
    pub params: usize,
    /// `max_i |fd_i - g_i| / max(|fd_i|, |g_i|, floor)`.
    pub max_rel_error: f64,
}

impl GradientCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn check(
    loss: &'static str,
    params: Vec<f64>,
    h: f64,
    floor: f64,
    eval: impl Fn(&[f64]) -> Result<LossEval>,
) -> Result<GradientCheck> {
    let base = eval(&params)?;
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for i in 0..params.len() {
        p[i] = params[i] + h;
        let up = eval(&p)?.value;
        p[i] = params[i] - h;
        let dn = eval(&p)?.value;
        p[i] = params[i];
        let fd = (up - dn) / (2.0 * h);
        let g = base.grad[i];
        let scale = fd.abs().max(g.abs()).max(floor);
        worst = worst.max((fd - g).abs() / scale);
    }
    Ok(GradientCheck {
        loss,
        params: params.len(),
        max_rel_error: worst,
    })
}

/// Checks the critic, opponent, actor and auxiliary losses of `agent` on
/// `batch` with step `h`. Gradients smaller than `floor` are compared in
/// absolute terms. Losses an agent does not have are skipped.
pub fn check_gradients(
    agent: &AgentBundle,
    batch: &[Experience],
    noise: &LossNoise,
    cfg: &TrainerConfig,
    alpha: f64,
    h: f64,
    floor: f64,
) -> Result<Vec<GradientCheck>> {
    let mut out = Vec::with_capacity(4);
    out.push(check("critic", agent.omega.flat(), h, floor, |p| {
        let mut a = agent.clone();
        a.omega.set_flat(p);
        a.critic_loss(batch, noise, cfg, alpha)
    })?);
    if agent.spec.method != Method::Indep {
        out.push(check("opponent", agent.phi.params().to_vec(), h, floor, |p| {
            let mut a = agent.clone();
            a.phi.params_mut().copy_from_slice(p);
            a.opponent_model_loss(batch, noise, cfg)
        })?);
    }
    out.push(check("actor", agent.theta.flat(), h, floor, |p| {
        let mut a = agent.clone();
        a.theta.set_flat(p);
        a.actor_loss(batch, noise, alpha)
    })?);
    if agent.spec.method != Method::Indep && agent.spec.level >= 2 {
        out.push(check("auxiliary", agent.theta.flat(), h, floor, |p| {
            let mut a = agent.clone();
            a.theta.set_flat(p);
            a.auxiliary_level_loss(batch)
        })?);
    }
    Ok(out)
}
