//! Soft operators, the opponent posterior, level-k recursive rollouts and
//! Poisson mixtures over reasoning levels.
//!
//! Everything here is independent of the learning machinery: the same
//! rollout drives exact best-response stacks in [`crate::analysis`] and the
//! neural stacks in [`crate::learning`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::fmath;
use crate::games::StateToken;
use crate::{Error, Result};

/// `ln Σ exp(q)`, max-shifted so that large magnitudes do not overflow.
pub fn soft_max_operator(q: &[f64]) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::domain("soft maximum of an empty vector"));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("soft maximum of non-finite values"));
    }
    Ok(logsumexp_unchecked(q))
}

pub(crate) fn logsumexp_unchecked(q: &[f64]) -> f64 {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + fmath::ln(q.iter().map(|v| fmath::exp(v - m)).sum::<f64>())
}

/// Stabilized softmax; components sum to one.
pub fn softmax(q: &[f64]) -> Result<Vec<f64>> {
    let z = soft_max_operator(q)?;
    let mut p: Vec<f64> = q.iter().map(|v| fmath::exp(v - z)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    Ok(p)
}

/// `ln Σ_j rho_j exp(q_j)`; zero-probability entries drop out.
pub fn weighted_logsumexp(q: &[f64], rho: &[f64]) -> Result<f64> {
    if q.len() != rho.len() {
        return Err(Error::shape(format!(
            "{} values but {} weights",
            q.len(),
            rho.len()
        )));
    }
    if q.is_empty() {
        return Err(Error::domain("empty opponent support"));
    }
    if rho.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::domain("weights must be finite and non-negative"));
    }
    let total: f64 = rho.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("weights sum to {total}, not 1")));
    }
    let shifted: Vec<f64> = q
        .iter()
        .zip(rho)
        .map(|(v, r)| {
            if *r > 0.0 {
                v + fmath::ln(*r)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    Ok(logsumexp_unchecked(&shifted))
}

/// A tabulated joint Q-function `Q(s, a_own, a_opp)` over finite supports.
///
/// Actions are addressed by their index into the supports; the supports carry
/// the action values themselves (discrete labels or points of a sampling grid).
#[derive(Debug, Clone, PartialEq)]
pub struct JointQView {
    own_support: Vec<f64>,
    opp_support: Vec<f64>,
    values: BTreeMap<StateToken, Vec<f64>>,
}

impl JointQView {
    pub fn new(own_support: Vec<f64>, opp_support: Vec<f64>) -> Result<Self> {
        if own_support.is_empty() || opp_support.is_empty() {
            return Err(Error::domain("action supports must be non-empty"));
        }
        Ok(Self {
            own_support,
            opp_support,
            values: BTreeMap::new(),
        })
    }

    /// Single-state view built from a row-major `own x opp` table.
    pub fn from_table(
        own_support: Vec<f64>,
        opp_support: Vec<f64>,
        state: StateToken,
        table: Vec<f64>,
    ) -> Result<Self> {
        let mut q = Self::new(own_support, opp_support)?;
        q.insert_state(state, table)?;
        Ok(q)
    }

    pub fn insert_state(&mut self, state: StateToken, table: Vec<f64>) -> Result<()> {
        let need = self.own_support.len() * self.opp_support.len();
        if table.len() != need {
            return Err(Error::shape(format!(
                "Q table needs {need} entries, got {}",
                table.len()
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("Q values must be finite"));
        }
        self.values.insert(state, table);
        Ok(())
    }

    pub fn own_support(&self) -> &[f64] {
        &self.own_support
    }

    pub fn opp_support(&self) -> &[f64] {
        &self.opp_support
    }

    /// The row `Q(s, a_own, ·)` over the opponent support.
    pub fn row(&self, s: StateToken, a_own: usize) -> Result<&[f64]> {
        let table = self
            .values
            .get(&s)
            .ok_or_else(|| Error::Lookup(format!("unknown state {:?}", s)))?;
        if a_own >= self.own_support.len() {
            return Err(Error::Lookup(format!("own action {a_own} not in support")));
        }
        let n = self.opp_support.len();
        Ok(&table[a_own * n..(a_own + 1) * n])
    }
}

/// `Q(s, a) = ln Σ_{a'} exp Q(s, a, a')`.
pub fn marginal_q_logsumexp(q: &JointQView, s: StateToken, a_own: usize) -> Result<f64> {
    soft_max_operator(q.row(s, a_own)?)
}

/// The best-fit opponent model: `exp(Q(s, a, ·) - Q(s, a))`.
pub fn opponent_posterior(q: &JointQView, s: StateToken, a_own: usize) -> Result<Vec<f64>> {
    let row = q.row(s, a_own)?;
    let z = soft_max_operator(row)?;
    let mut p: Vec<f64> = row.iter().map(|v| fmath::exp(v - z)).collect();
    // renormalize away the last ulp of rounding
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// Marginal Q under an explicit opponent model: `ln Σ_j rho_j exp Q(s, a, j)`.
pub fn weighted_marginal_q(
    q: &JointQView,
    rho: &[f64],
    s: StateToken,
    a_own: usize,
) -> Result<f64> {
    weighted_logsumexp(q.row(s, a_own)?, rho)
}

/// Policies making up a level-k reasoning stack.
///
/// `own` and `opp` are the deterministic conditional responses used inside a
/// rollout. Implementations may share parameters between levels; they still
/// evaluate differently because their inputs differ.
pub trait LevelKStack {
    type Action: Clone;

    fn max_level(&self) -> usize;
    /// Unconditioned base policy.
    fn level0(&self, s: StateToken) -> Self::Action;
    /// Own level-`level` response to an opponent action.
    fn own(&self, level: usize, s: StateToken, opp: &Self::Action) -> Self::Action;
    /// Opponent level-`level` response to one of our actions.
    fn opp(&self, level: usize, s: StateToken, own: &Self::Action) -> Self::Action;
}

/// A [`LevelKStack`] assembled from closures.
pub struct FnStack<A, L0, O, P> {
    pub max_level: usize,
    pub level0: L0,
    pub own: O,
    pub opp: P,
    _a: core::marker::PhantomData<A>,
}

impl<A, L0, O, P> FnStack<A, L0, O, P>
where
    A: Clone,
    L0: Fn(StateToken) -> A,
    O: Fn(usize, StateToken, &A) -> A,
    P: Fn(usize, StateToken, &A) -> A,
{
    pub fn new(max_level: usize, level0: L0, own: O, opp: P) -> Self {
        Self {
            max_level,
            level0,
            own,
            opp,
            _a: core::marker::PhantomData,
        }
    }
}

impl<A, L0, O, P> LevelKStack for FnStack<A, L0, O, P>
where
    A: Clone,
    L0: Fn(StateToken) -> A,
    O: Fn(usize, StateToken, &A) -> A,
    P: Fn(usize, StateToken, &A) -> A,
{
    type Action = A;

    fn max_level(&self) -> usize {
        self.max_level
    }
    fn level0(&self, s: StateToken) -> A {
        (self.level0)(s)
    }
    fn own(&self, level: usize, s: StateToken, opp: &A) -> A {
        (self.own)(level, s, opp)
    }
    fn opp(&self, level: usize, s: StateToken, own: &A) -> A {
        (self.opp)(level, s, own)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Own,
    Opponent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry<A> {
    pub level: usize,
    pub role: Role,
    pub action: A,
}

/// Result of a level-k rollout. `trace[0]` is the level-k own action, then the
/// opponent's level-(k-1) response, our level-(k-2) action and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<A> {
    pub action: A,
    pub trace: Vec<TraceEntry<A>>,
}

impl<A: Clone> Rollout<A> {
    pub fn actions(&self) -> Vec<A> {
        self.trace.iter().map(|e| e.action.clone()).collect()
    }
}

/// Deterministic level-k rollout.
///
/// Level 0 is the base policy. For `k >= 1` the own level-k action responds to
/// the opponent's level-(k-1) action, which in turn responds to our level-(k-2)
/// action; when that index is -1 the opponent conditions on our level-0 action.
pub fn level_k_rollout<S: LevelKStack>(
    stack: &S,
    s: StateToken,
    k: usize,
) -> Result<Rollout<S::Action>> {
    if k > stack.max_level() {
        return Err(Error::Level {
            requested: k,
            max: stack.max_level(),
        });
    }
    let a0 = stack.level0(s);
    let mut trace = Vec::with_capacity(k + 1);
    let (mut own, mut level) = if k % 2 == 0 {
        trace.push(TraceEntry {
            level: 0,
            role: Role::Own,
            action: a0.clone(),
        });
        (a0, 0usize)
    } else {
        let b0 = stack.opp(0, s, &a0);
        trace.push(TraceEntry {
            level: 0,
            role: Role::Opponent,
            action: b0.clone(),
        });
        let a1 = stack.own(1, s, &b0);
        trace.push(TraceEntry {
            level: 1,
            role: Role::Own,
            action: a1.clone(),
        });
        (a1, 1usize)
    };
    while level < k {
        let b = stack.opp(level + 1, s, &own);
        trace.push(TraceEntry {
            level: level + 1,
            role: Role::Opponent,
            action: b.clone(),
        });
        own = stack.own(level + 2, s, &b);
        trace.push(TraceEntry {
            level: level + 2,
            role: Role::Own,
            action: own.clone(),
        });
        level += 2;
    }
    trace.reverse();
    debug_assert_eq!(trace.len(), k + 1);
    Ok(Rollout { action: own, trace })
}

/// Poisson weights over levels `0..=k`, normalized over exactly those levels.
pub fn poisson_weights(lambda_mean: f64, k: usize) -> Result<Vec<f64>> {
    if !(lambda_mean > 0.0) || !lambda_mean.is_finite() {
        return Err(Error::domain(format!(
            "Poisson mean must be positive, got {lambda_mean}"
        )));
    }
    let ln_lambda = fmath::ln(lambda_mean);
    let logs: Vec<f64> = (0..=k)
        .map(|m| m as f64 * ln_lambda - fmath::ln_factorial(m))
        .collect();
    let z = logsumexp_unchecked(&logs);
    Ok(logs.iter().map(|l| fmath::exp(l - z)).collect())
}

/// Normalized Poisson belief over reasoning levels `0..=max_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonMixture {
    lambda_mean: f64,
    max_level: usize,
    weights: Vec<f64>,
}

impl PoissonMixture {
    pub fn new(lambda_mean: f64, max_level: usize) -> Result<Self> {
        Ok(Self {
            lambda_mean,
            max_level,
            weights: poisson_weights(lambda_mean, max_level)?,
        })
    }

    /// Arbitrary normalized level weights (used for degenerate mixtures in tests and sweeps).
    pub fn with_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::domain("level weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("level weights sum to {total}")));
        }
        Ok(Self {
            lambda_mean: f64::NAN,
            max_level: weights.len() - 1,
            weights,
        })
    }

    pub fn lambda_mean(&self) -> f64 {
        self.lambda_mean
    }
    pub fn max_level(&self) -> usize {
        self.max_level
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// GR2-M decision for continuous actions: the weighted average of the
/// deterministic level actions.
pub fn mix_levels<S>(stack: &S, s: StateToken, mixture: &PoissonMixture) -> Result<f64>
where
    S: LevelKStack<Action = f64>,
{
    check_mixture_levels(stack.max_level(), mixture)?;
    let mut acc = 0.0;
    for (m, w) in mixture.weights().iter().enumerate() {
        acc += w * level_k_rollout(stack, s, m)?.action;
    }
    Ok(acc)
}

/// GR2-M decision for discrete actions: a categorical mixture over the level actions.
pub fn mix_levels_discrete<S>(
    stack: &S,
    s: StateToken,
    mixture: &PoissonMixture,
    n_actions: usize,
) -> Result<LevelMixture>
where
    S: LevelKStack<Action = usize>,
{
    check_mixture_levels(stack.max_level(), mixture)?;
    let mut probs = alloc::vec![0.0; n_actions];
    for (m, w) in mixture.weights().iter().enumerate() {
        let a = level_k_rollout(stack, s, m)?.action;
        if a >= n_actions {
            return Err(Error::Index {
                what: "level action",
                index: a,
                len: n_actions,
            });
        }
        probs[a] += w;
    }
    Ok(LevelMixture { probs })
}

fn check_mixture_levels(stack_max: usize, mixture: &PoissonMixture) -> Result<()> {
    if mixture.max_level() > stack_max {
        return Err(Error::Level {
            requested: mixture.max_level(),
            max: stack_max,
        });
    }
    Ok(())
}

/// Categorical distribution over discrete actions produced by mixing levels.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelMixture {
    pub probs: Vec<f64>,
}

impl LevelMixture {
    /// Most likely action; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.argmax()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    const S: StateToken = StateToken(0);

    fn view(row: &[f64]) -> JointQView {
        JointQView::from_table(vec![0.0], (0..row.len()).map(|i| i as f64).collect(), S, row.to_vec())
            .unwrap()
    }

    #[test]
    fn soft_max_examples() {
        let c = 3.7;
        assert_abs_diff_eq!(soft_max_operator(&[c, c]).unwrap(), c + fmath::ln(2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(soft_max_operator(&[0.0; 4]).unwrap(), 1.3862943611198906, epsilon = 1e-12);
        assert_abs_diff_eq!(soft_max_operator(&[1.0, 2.0]).unwrap(), 2.3132616875182226, epsilon = 1e-12);
        assert!(soft_max_operator(&[]).is_err());
        assert_abs_diff_eq!(soft_max_operator(&[1000.0, 1000.0]).unwrap(), 1000.0 + fmath::ln(2.0), epsilon = 1e-9);
    }

    #[test]
    fn marginal_examples() {
        assert_abs_diff_eq!(marginal_q_logsumexp(&view(&[1.0, 2.0]), S, 0).unwrap(), 2.3132616875182226, epsilon = 1e-12);
        assert_eq!(marginal_q_logsumexp(&view(&[-4.25]), S, 0).unwrap(), -4.25);
        let base = marginal_q_logsumexp(&view(&[0.3, -1.0, 2.0]), S, 0).unwrap();
        let shifted = marginal_q_logsumexp(&view(&[5.3, 4.0, 7.0]), S, 0).unwrap();
        assert_abs_diff_eq!(shifted - base, 5.0, epsilon = 1e-12);
        assert!(matches!(marginal_q_logsumexp(&view(&[1.0]), StateToken(9), 0), Err(Error::Lookup(_))));
        assert!(matches!(marginal_q_logsumexp(&view(&[1.0]), S, 3), Err(Error::Lookup(_))));
    }

    #[test]
    fn posterior_examples() {
        let p = opponent_posterior(&view(&[1.0, 2.0]), S, 0).unwrap();
        assert_abs_diff_eq!(p[0], 0.2689414213699951, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.7310585786300049, epsilon = 1e-12);
        let u = opponent_posterior(&view(&[4.0; 5]), S, 0).unwrap();
        u.iter().for_each(|x| assert_abs_diff_eq!(*x, 0.2, epsilon = 1e-15));
        let p = opponent_posterior(&view(&[10.0, -10.0]), S, 0).unwrap();
        assert_abs_diff_eq!(p[1], 2.0611536181902037e-9, epsilon = 1e-18);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_marginal_examples() {
        let q = view(&[1.0, 2.0]);
        let rho = opponent_posterior(&q, S, 0).unwrap();
        let oracle = libm::log(rho[0] * libm::exp(1.0) + rho[1] * libm::exp(2.0));
        assert_abs_diff_eq!(weighted_marginal_q(&q, &rho, S, 0).unwrap(), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle, 1.8137, epsilon = 5e-5);
        let c = view(&[2.5; 3]);
        assert_abs_diff_eq!(weighted_marginal_q(&c, &[0.2, 0.5, 0.3], S, 0).unwrap(), 2.5, epsilon = 1e-12);
        let q3 = view(&[1.0, -7.0, 3.0]);
        assert_abs_diff_eq!(weighted_marginal_q(&q3, &[0.0, 1.0, 0.0], S, 0).unwrap(), -7.0, epsilon = 1e-12);
        assert!(matches!(weighted_marginal_q(&q3, &[0.5, 0.5], S, 0), Err(Error::Shape(_))));
    }

    fn identity_stack(a0: f64, k: usize) -> impl LevelKStack<Action = f64> {
        FnStack::new(k, move |_| a0, |_, _, b: &f64| *b, |_, _, a: &f64| *a)
    }

    #[test]
    fn rollout_base_and_identity() {
        let st = identity_stack(42.0, 5);
        let r0 = level_k_rollout(&st, S, 0).unwrap();
        assert_eq!(r0.action, 42.0);
        assert_eq!(r0.trace.len(), 1);
        for k in 0..=5 {
            let r = level_k_rollout(&st, S, k).unwrap();
            assert_eq!(r.action, 42.0);
            assert_eq!(r.trace.len(), k + 1);
            assert!(r.trace.iter().all(|e| e.action == 42.0));
        }
        assert!(matches!(level_k_rollout(&st, S, 6), Err(Error::Level { requested: 6, max: 5 })));
    }

    #[test]
    fn rollout_beauty_contest_best_responses() {
        let st = FnStack::new(3, |_| 50.0, |_, _, b: &f64| 0.5 * b, |_, _, a: &f64| 0.5 * a);
        let r = level_k_rollout(&st, S, 2).unwrap();
        assert_eq!(r.actions(), vec![12.5, 25.0, 50.0]);
        let r3 = level_k_rollout(&st, S, 3).unwrap();
        assert_eq!(r3.actions(), vec![3.125, 6.25, 12.5, 25.0]);
    }

    #[test]
    fn rollout_trace_alternates_roles() {
        let st = FnStack::new(6, |_| 1.0, |l, _, b: &f64| b + l as f64, |l, _, a: &f64| a * 2.0 + l as f64);
        for k in 0..=6 {
            let r = level_k_rollout(&st, S, k).unwrap();
            for (i, e) in r.trace.iter().enumerate() {
                assert_eq!(e.level, k - i);
                let expect = if i % 2 == 0 { Role::Own } else { Role::Opponent };
                assert_eq!(e.role, expect);
            }
        }
    }

    #[test]
    fn poisson_examples() {
        let w = poisson_weights(1.5, 2).unwrap();
        assert_abs_diff_eq!(w[0], 1.0 / 3.625, epsilon = 1e-12);
        assert_abs_diff_eq!(w[0], 0.275862, epsilon = 1e-6);
        assert_abs_diff_eq!(w[1], 0.413793, epsilon = 1e-6);
        assert_abs_diff_eq!(w[2], 0.310345, epsilon = 1e-6);
        assert_eq!(poisson_weights(3.0, 0).unwrap(), vec![1.0]);
        let w = poisson_weights(1000.0, 2).unwrap();
        assert!(w[2] > 0.99);
        assert_abs_diff_eq!(w[2] / w[1], 500.0, epsilon = 1e-9);
        assert!(poisson_weights(0.0, 2).is_err());
        assert!(poisson_weights(-1.0, 2).is_err());
    }

    #[test]
    fn mix_examples() {
        let st = identity_stack(7.0, 3);
        let m = PoissonMixture::new(1.5, 3).unwrap();
        assert_abs_diff_eq!(mix_levels(&st, S, &m).unwrap(), 7.0, epsilon = 1e-12);
        let st2 = FnStack::new(1, |_| 10.0, |_, _, _: &f64| 20.0, |_, _, a: &f64| *a);
        let m2 = PoissonMixture::with_weights(vec![0.4, 0.6]).unwrap();
        assert_abs_diff_eq!(mix_levels(&st2, S, &m2).unwrap(), 16.0, epsilon = 1e-12);
        let st3 = FnStack::new(3, |_| 50.0, |_, _, b: &f64| 0.5 * b, |_, _, a: &f64| 0.5 * a);
        let one_hot = PoissonMixture::with_weights(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            mix_levels(&st3, S, &one_hot).unwrap(),
            level_k_rollout(&st3, S, 2).unwrap().action
        );
        let too_deep = PoissonMixture::new(1.5, 4).unwrap();
        assert!(matches!(mix_levels(&st3, S, &too_deep), Err(Error::Level { .. })));
    }

    #[test]
    fn discrete_mixture() {
        let st = FnStack::new(2, |_| 0usize, |_, _, b: &usize| (b + 1) % 3, |_, _, a: &usize| *a);
        let m = PoissonMixture::with_weights(vec![0.2, 0.5, 0.3]).unwrap();
        let mix = mix_levels_discrete(&st, S, &m, 3).unwrap();
        // level 0 -> 0, level 1 -> 1, level 2 -> 1
        assert_abs_diff_eq!(mix.probs[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(mix.probs[1], 0.8, epsilon = 1e-12);
        assert_eq!(mix.argmax(), 1);
    }
}
