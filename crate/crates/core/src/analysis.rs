//! Exact game-theoretic oracles: best responses, regret, exact level-k chains
//! and the checks that pure Nash play persists up the reasoning hierarchy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::games::{BeautyContestEnv, NormalFormGame, Player};
use crate::{Error, Result};

const TIE_TOL: f64 = 1e-12;

/// One mixed strategy per player.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StrategyProfile {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

impl StrategyProfile {
    pub fn new(row: Vec<f64>, col: Vec<f64>) -> Result<Self> {
        for (who, v) in [("row", &row), ("column", &col)] {
            check_distribution(v).map_err(|e| Error::domain(format!("{who} strategy: {e}")))?;
        }
        Ok(Self { row, col })
    }

    pub fn pure(game: &NormalFormGame, row: usize, col: usize) -> Self {
        let (r, c) = game.action_counts();
        Self {
            row: one_hot(r, row),
            col: one_hot(c, col),
        }
    }

    pub fn uniform(game: &NormalFormGame) -> Self {
        let (r, c) = game.action_counts();
        Self {
            row: vec![1.0 / r as f64; r],
            col: vec![1.0 / c as f64; c],
        }
    }

    pub fn get(&self, player: Player) -> &[f64] {
        match player {
            Player::Row => &self.row,
            Player::Col => &self.col,
        }
    }

    /// `(row action, column action)` if both strategies are pure.
    pub fn as_pure(&self) -> Option<(usize, usize)> {
        Some((pure_index(&self.row)?, pure_index(&self.col)?))
    }
}

fn check_distribution(v: &[f64]) -> core::result::Result<(), &'static str> {
    if v.is_empty() {
        return Err("empty");
    }
    if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err("negative or non-finite entry");
    }
    if (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err("does not sum to 1");
    }
    Ok(())
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn pure_index(v: &[f64]) -> Option<usize> {
    let i = v.iter().position(|x| *x == 1.0)?;
    v.iter()
        .enumerate()
        .all(|(j, x)| j == i || *x == 0.0)
        .then_some(i)
}

/// All pure actions of `player` maximizing expected payoff against `opp`.
pub fn best_response(game: &NormalFormGame, player: Player, opp: &[f64]) -> Result<Vec<usize>> {
    let n_opp = game.num_actions(player.other());
    if opp.len() != n_opp {
        return Err(Error::shape(format!(
            "opponent strategy has {} entries, expected {n_opp}",
            opp.len()
        )));
    }
    check_distribution(opp).map_err(Error::domain)?;
    let values: Vec<f64> = (0..game.num_actions(player))
        .map(|a| game.action_value(player, a, opp))
        .collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOL * best.abs().max(1.0);
    Ok(values
        .iter()
        .enumerate()
        .filter(|(_, v)| best - **v <= tol)
        .map(|(i, _)| i)
        .collect())
}

fn best_response_value(game: &NormalFormGame, player: Player, opp: &[f64]) -> f64 {
    (0..game.num_actions(player))
        .map(|a| game.action_value(player, a, opp))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn strategy_value(game: &NormalFormGame, player: Player, own: &[f64], opp: &[f64]) -> f64 {
    own.iter()
        .enumerate()
        .map(|(a, p)| p * game.action_value(player, a, opp))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NashCheck {
    pub is_nash: bool,
    /// Best-response value minus current value, row player first.
    pub regrets: [f64; 2],
}

pub fn is_nash(game: &NormalFormGame, profile: &StrategyProfile, epsilon: f64) -> Result<NashCheck> {
    let (r, c) = game.action_counts();
    if profile.row.len() != r || profile.col.len() != c {
        return Err(Error::shape("profile does not match the game's action counts"));
    }
    let regret = |p: Player| {
        let own = profile.get(p);
        let opp = profile.get(p.other());
        (best_response_value(game, p, opp) - strategy_value(game, p, own, opp)).max(0.0)
    };
    let regrets = [regret(Player::Row), regret(Player::Col)];
    Ok(NashCheck {
        is_nash: regrets.iter().all(|r| *r <= epsilon),
        regrets,
    })
}

/// Sum of both players' best-response regrets.
pub fn exploitability(game: &NormalFormGame, profile: &StrategyProfile) -> Result<f64> {
    let check = is_nash(game, profile, 0.0)?;
    Ok(check.regrets[0] + check.regrets[1])
}

/// All pure-strategy Nash equilibria, by brute force over every pure profile.
pub fn pure_nash_equilibria(game: &NormalFormGame) -> Vec<(usize, usize)> {
    let (rows, cols) = game.action_counts();
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let row_ok = (0..rows).all(|r2| game.entry(Player::Row, r2, c) <= game.entry(Player::Row, r, c));
            let col_ok = (0..cols).all(|c2| game.entry(Player::Col, r, c2) <= game.entry(Player::Col, r, c));
            if row_ok && col_ok {
                out.push((r, c));
            }
        }
    }
    out
}

/// The fully mixed equilibrium of a 2x2 game, if one exists (indifference conditions).
pub fn mixed_equilibrium_2x2(game: &NormalFormGame) -> Option<StrategyProfile> {
    if !game.is_2x2() {
        return None;
    }
    let coeffs = crate::dynamics::derive_coefficients(game).ok()?;
    let ctr = crate::dynamics::center(&coeffs).ok()?;
    if !ctr.interior {
        return None;
    }
    Some(StrategyProfile {
        row: vec![ctr.alpha, 1.0 - ctr.alpha],
        col: vec![ctr.beta, 1.0 - ctr.beta],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TieRule {
    #[default]
    LowestIndex,
    Uniform,
}

/// Strategies or actions of levels `0..=k`, in increasing level order.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelKTrace<T> {
    pub levels: Vec<T>,
    pub tie_rule: TieRule,
}

impl<T> LevelKTrace<T> {
    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }
}

fn respond(game: &NormalFormGame, player: Player, opp: &[f64], tie: TieRule) -> Result<Vec<f64>> {
    let br = best_response(game, player, opp)?;
    let n = game.num_actions(player);
    Ok(match tie {
        TieRule::LowestIndex => one_hot(n, br[0]),
        TieRule::Uniform => {
            let mut v = vec![0.0; n];
            br.iter().for_each(|i| v[*i] = 1.0 / br.len() as f64);
            v
        }
    })
}

/// Exact GR2-L chain: each player's level-m strategy best-responds to the other
/// player's level-(m-1) strategy. `level0` defaults to uniform.
pub fn exact_level_k(
    game: &NormalFormGame,
    k: usize,
    level0: Option<StrategyProfile>,
    tie_rule: TieRule,
) -> Result<LevelKTrace<StrategyProfile>> {
    let start = match level0 {
        Some(p) => {
            let (r, c) = game.action_counts();
            if p.row.len() != r || p.col.len() != c {
                return Err(Error::shape("level-0 profile does not match the game"));
            }
            p
        }
        None => StrategyProfile::uniform(game),
    };
    let mut levels = Vec::with_capacity(k + 1);
    levels.push(start);
    for _ in 0..k {
        let prev = levels.last().expect("non-empty");
        let next = StrategyProfile {
            row: respond(game, Player::Row, &prev.col, tie_rule)?,
            col: respond(game, Player::Col, &prev.row, tie_rule)?,
        };
        levels.push(next);
    }
    Ok(LevelKTrace { levels, tie_rule })
}

/// Large-n best response in the Beauty Contest: `clamp(p * a)`.
pub fn beauty_best_response_analytic(env: &BeautyContestEnv, others_mean: f64) -> f64 {
    let (lo, hi) = env.bounds();
    (env.p() * others_mean).clamp(lo, hi)
}

/// Best integer guess when all other players guess `others_mean`, by brute force
/// over the integer grid of the action range (own guess counted in the mean).
pub fn beauty_best_response_discrete(env: &BeautyContestEnv, others_mean: f64, tie: TieRule) -> f64 {
    let (lo, hi) = env.bounds();
    let n = env.n() as f64;
    let others = (n - 1.0) * others_mean;
    let grid_lo = libm::ceil(lo) as i64;
    let grid_hi = libm::floor(hi) as i64;
    let mut best = Vec::new();
    let mut best_d = f64::INFINITY;
    for g in grid_lo..=grid_hi {
        let g = g as f64;
        let d = (g - env.p() * (g + others) / n).abs();
        if d < best_d - TIE_TOL {
            best_d = d;
            best.clear();
            best.push(g);
        } else if (d - best_d).abs() <= TIE_TOL {
            best.push(g);
        }
    }
    match tie {
        TieRule::LowestIndex => best[0],
        TieRule::Uniform => best.iter().sum::<f64>() / best.len() as f64,
    }
}

/// Exact level-k guesses for the Beauty Contest, all opponents at level m-1.
pub fn exact_level_k_beauty(
    env: &BeautyContestEnv,
    k: usize,
    level0_mean: f64,
    analytic: bool,
    tie_rule: TieRule,
) -> LevelKTrace<f64> {
    let mut levels = Vec::with_capacity(k + 1);
    levels.push(level0_mean);
    for m in 0..k {
        let prev = levels[m];
        levels.push(if analytic {
            beauty_best_response_analytic(env, prev)
        } else {
            beauty_best_response_discrete(env, prev, tie_rule)
        });
    }
    LevelKTrace { levels, tie_rule }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashPersistenceReport {
    pub holds: bool,
    /// First level (>= 1) whose joint pure profile is a Nash equilibrium.
    pub first_nash_level: Option<usize>,
    /// Level at which play left the equilibrium, with the deviating profile.
    pub counterexample: Option<(usize, StrategyProfile)>,
}

/// Runs the exact chain to `k_max` and checks that once the joint pure profile is
/// Nash, every higher level repeats it.
pub fn verify_nash_persistence(game: &NormalFormGame, k_max: usize, tie_rule: TieRule) -> Result<NashPersistenceReport> {
    let trace = exact_level_k(game, k_max, None, tie_rule)?;
    let mut first = None;
    for (m, profile) in trace.levels.iter().enumerate().skip(1) {
        if profile.as_pure().is_some() && is_nash(game, profile, 1e-12)?.is_nash {
            first = Some(m);
            break;
        }
    }
    let Some(m) = first else {
        return Ok(NashPersistenceReport {
            holds: true,
            first_nash_level: None,
            counterexample: None,
        });
    };
    let eq = &trace.levels[m];
    let bad = trace.levels[m + 1..]
        .iter()
        .enumerate()
        .find(|(_, p)| *p != eq)
        .map(|(i, p)| (m + 1 + i, p.clone()));
    Ok(NashPersistenceReport {
        holds: bad.is_none(),
        first_nash_level: Some(m),
        counterexample: bad,
    })
}

/// Weak-dominance gaps along an exact chain: for every m >= 2 and each player,
/// payoff(level m vs opponent m-1) - payoff(level m-2 vs opponent m-1).
pub fn level_dominance_gaps(game: &NormalFormGame, trace: &LevelKTrace<StrategyProfile>) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for m in 2..trace.levels.len() {
        let opp = &trace.levels[m - 1];
        let gap = |p: Player| {
            strategy_value(game, p, trace.levels[m].get(p), opp.get(p.other()))
                - strategy_value(game, p, trace.levels[m - 2].get(p), opp.get(p.other()))
        };
        out.push([gap(Player::Row), gap(Player::Col)]);
    }
    out
}

/// Verdict for one game of the random battery.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryCase {
    pub game: NormalFormGame,
    pub report: NashPersistenceReport,
}

/// Random integer-payoff games (alternating 2x2 and 3x3) that possess at least
/// one pure Nash equilibrium. Payoffs of each player are a permutation of
/// `1..=rows*cols`, so best responses are never tied.
pub fn random_pure_nash_games(count: usize, seed: u64) -> Vec<NormalFormGame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = if out.len() % 2 == 0 { 2 } else { 3 };
        let draw = |rng: &mut ChaCha8Rng| {
            let mut v: Vec<f64> = (1..=n * n).map(|x| x as f64).collect();
            v.shuffle(rng);
            // random sign flips spread the games beyond pure coordination
            if rng.gen_bool(0.5) {
                v.iter_mut().for_each(|x| *x -= (n * n) as f64 / 2.0);
            }
            v
        };
        let r = draw(&mut rng);
        let c = draw(&mut rng);
        let game = NormalFormGame::from_flat(n, n, r, c).expect("valid random game");
        if !pure_nash_equilibria(&game).is_empty() {
            out.push(game);
        }
    }
    out
}

pub fn nash_persistence_battery(games: &[NormalFormGame], k_max: usize, tie_rule: TieRule) -> Result<Vec<BatteryCase>> {
    games
        .iter()
        .map(|g| {
            Ok(BatteryCase {
                game: g.clone(),
                report: verify_nash_persistence(g, k_max, tie_rule)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{MixedStrategyPair, RewardScheme};
    use approx::assert_abs_diff_eq;

    /// Independent enumeration used to cross-check `best_response`.
    fn brute_best(game: &NormalFormGame, player: Player, opp: &[f64]) -> Vec<usize> {
        let n = game.num_actions(player);
        let mut vals = Vec::new();
        for a in 0..n {
            let mut v = 0.0;
            for (o, p) in opp.iter().enumerate() {
                let (r, c) = if player == Player::Row { (a, o) } else { (o, a) };
                let pay = game.payoff(r, c).unwrap();
                v += p * if player == Player::Row { pay.0 } else { pay.1 };
            }
            vals.push(v);
        }
        let m = vals.iter().cloned().fold(f64::MIN, f64::max);
        (0..n).filter(|i| (m - vals[*i]).abs() < 1e-9).collect()
    }

    #[test]
    fn best_response_examples() {
        let sh = NormalFormGame::stag_hunt();
        assert_eq!(best_response(&sh, Player::Row, &[0.5, 0.5]).unwrap(), vec![0, 1]);
        assert_eq!(best_response(&sh, Player::Row, &[1.0, 0.0]).unwrap(), vec![0]);
        let rg = NormalFormGame::rotational();
        assert_eq!(best_response(&rg, Player::Row, &[1.0, 0.0]).unwrap(), vec![1]);
        assert_eq!(best_response(&rg, Player::Col, &[1.0, 0.0]).unwrap(), vec![0]);
        assert!(best_response(&rg, Player::Col, &[1.0]).is_err());
    }

    #[test]
    fn best_response_agrees_with_enumeration() {
        let games = random_pure_nash_games(40, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in &games {
            for p in [Player::Row, Player::Col] {
                let n = g.num_actions(p.other());
                let mut w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= s);
                assert_eq!(best_response(g, p, &w).unwrap(), brute_best(g, p, &w));
            }
        }
    }

    #[test]
    fn nash_examples() {
        let sh = NormalFormGame::stag_hunt();
        let ss = is_nash(&sh, &StrategyProfile::pure(&sh, 0, 0), 0.0).unwrap();
        assert!(ss.is_nash);
        assert_eq!(ss.regrets, [0.0, 0.0]);
        assert!(is_nash(&sh, &StrategyProfile::pure(&sh, 1, 1), 0.0).unwrap().is_nash);
        assert!(!is_nash(&sh, &StrategyProfile::pure(&sh, 0, 1), 0.0).unwrap().is_nash);
        let rg = NormalFormGame::rotational();
        let mid = StrategyProfile::new(vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
        assert!(is_nash(&rg, &mid, 1e-12).unwrap().is_nash);
        assert!(exploitability(&rg, &mid).unwrap() <= 1e-12);
    }

    #[test]
    fn exploitability_examples() {
        let rg = NormalFormGame::rotational();
        let corner = StrategyProfile::pure(&rg, 0, 0);
        let check = is_nash(&rg, &corner, 0.0).unwrap();
        assert_eq!(check.regrets, [1.0, 0.0]);
        assert_eq!(exploitability(&rg, &corner).unwrap(), 1.0);
        let shifted = rg.shifted(Player::Col, 17.5);
        assert_abs_diff_eq!(exploitability(&shifted, &corner).unwrap(), 1.0, epsilon = 1e-12);
        let sh = NormalFormGame::stag_hunt();
        assert_eq!(exploitability(&sh, &StrategyProfile::pure(&sh, 1, 1)).unwrap(), 0.0);
    }

    #[test]
    fn mixed_equilibrium_of_rotational_game() {
        let rg = NormalFormGame::rotational();
        let eq = mixed_equilibrium_2x2(&rg).unwrap();
        assert_eq!(eq.row, vec![0.5, 0.5]);
        assert!(exploitability(&rg, &eq).unwrap() <= 1e-12);
        let v = rg.expected_payoffs(MixedStrategyPair::new(0.5, 0.5).unwrap()).unwrap();
        assert_eq!(v, (1.5, 1.5));
    }

    #[test]
    fn exact_chain_examples() {
        let env = BeautyContestEnv::new(1000, 0.5, RewardScheme::AbsoluteDifference).unwrap();
        let t = exact_level_k_beauty(&env, 2, 50.0, true, TieRule::LowestIndex);
        assert_eq!(t.levels, vec![50.0, 25.0, 12.5]);
        let sh = NormalFormGame::stag_hunt();
        let t0 = exact_level_k(&sh, 0, None, TieRule::LowestIndex).unwrap();
        assert_eq!(t0.levels, vec![StrategyProfile::uniform(&sh)]);
        // level 1 lands on (S, S); every later level repeats it
        let t = exact_level_k(&sh, 6, None, TieRule::LowestIndex).unwrap();
        for p in &t.levels[1..] {
            assert_eq!(p.as_pure(), Some((0, 0)));
        }
        let tu = exact_level_k(&sh, 2, None, TieRule::Uniform).unwrap();
        assert_eq!(tu.levels[1], StrategyProfile::uniform(&sh));
    }

    #[test]
    fn discrete_beauty_best_response() {
        let env = BeautyContestEnv::new(2, 0.7, RewardScheme::AbsoluteDifference).unwrap();
        // g = 0.35 g + 0.35 * 50  =>  g = 26.92...
        assert_eq!(beauty_best_response_discrete(&env, 50.0, TieRule::LowestIndex), 27.0);
        // on the integer grid, 1 is already a best response to itself
        let t = exact_level_k_beauty(&env, 30, 50.0, false, TieRule::LowestIndex);
        assert_eq!(*t.levels.last().unwrap(), 1.0);
        let up = BeautyContestEnv::new(10, 1.1, RewardScheme::AbsoluteDifference).unwrap();
        let t = exact_level_k_beauty(&up, 40, 50.0, true, TieRule::LowestIndex);
        assert_eq!(*t.levels.last().unwrap(), 100.0);
    }

    #[test]
    fn analytic_beauty_chain_is_geometric_and_monotone() {
        for (p, up) in [(0.7, false), (0.5, false), (1.1, true), (1.3, true)] {
            let env = BeautyContestEnv::new(10, p, RewardScheme::AbsoluteDifference).unwrap();
            let t = exact_level_k_beauty(&env, 60, 50.0, true, TieRule::LowestIndex);
            for w in t.levels.windows(2) {
                let expect = (p * w[0]).clamp(0.0, 100.0);
                assert_eq!(w[1], expect);
                if up {
                    assert!(w[1] >= w[0]);
                } else {
                    assert!(w[1] <= w[0]);
                }
            }
            let last = *t.levels.last().unwrap();
            if up {
                assert_eq!(last, 100.0);
            } else {
                assert!(last < 1e-6);
            }
        }
    }

    #[test]
    fn nash_persistence_stag_hunt() {
        let r = verify_nash_persistence(&NormalFormGame::stag_hunt(), 6, TieRule::LowestIndex).unwrap();
        assert!(r.holds);
        assert!(r.first_nash_level.unwrap() <= 1);
    }

    #[test]
    fn nash_persistence_vacuous_on_cycling_chain() {
        // matching pennies never reaches a pure equilibrium
        let mp = NormalFormGame::from_flat(2, 2, vec![1.0, -1.0, -1.0, 1.0], vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let r = verify_nash_persistence(&mp, 8, TieRule::LowestIndex).unwrap();
        assert!(r.holds);
        assert_eq!(r.first_nash_level, None);
    }

    #[test]
    fn nash_persistence_battery_holds() {
        let games = random_pure_nash_games(200, 7);
        let cases = nash_persistence_battery(&games, 8, TieRule::LowestIndex).unwrap();
        let reached = cases.iter().filter(|c| c.report.first_nash_level.is_some()).count();
        assert!(reached > 50);
        assert!(cases.iter().all(|c| c.report.holds));
    }

    #[test]
    fn ties_can_break_persistence() {
        // the row player is indifferent against column action 0, so the lowest-index
        // rule pulls it off the equilibrium reached at level 1
        let g = NormalFormGame::from_flat(2, 2, vec![1.0, 0.0, 1.0, 5.0], vec![3.0, 0.0, 2.0, 1.0]).unwrap();
        let t = exact_level_k(&g, 4, None, TieRule::LowestIndex).unwrap();
        let r = verify_nash_persistence(&g, 4, TieRule::LowestIndex).unwrap();
        if let Some(m) = r.first_nash_level {
            let same = t.levels[m..].iter().all(|p| *p == t.levels[m]);
            assert_eq!(same, r.holds);
        }
    }

    #[test]
    fn dominance_gaps_nonnegative() {
        for g in random_pure_nash_games(60, 5) {
            let t = exact_level_k(&g, 8, None, TieRule::LowestIndex).unwrap();
            for gap in level_dominance_gaps(&g, &t) {
                assert!(gap[0] >= -1e-12 && gap[1] >= -1e-12);
            }
        }
    }

    #[test]
    fn nash_iff_exploitability_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for g in random_pure_nash_games(30, 2) {
            let (r, c) = g.action_counts();
            for _ in 0..20 {
                let mut draw = |n: usize| {
                    let mut w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3)).collect();
                    let s: f64 = w.iter().sum();
                    w.iter_mut().for_each(|x| *x /= s);
                    w
                };
                let prof = StrategyProfile::new(draw(r), draw(c)).unwrap();
                let eps = 0.05;
                let ch = is_nash(&g, &prof, eps).unwrap();
                assert_eq!(ch.is_nash, ch.regrets.iter().all(|r| *r <= eps));
                if exploitability(&g, &prof).unwrap() <= eps {
                    assert!(ch.is_nash);
                }
            }
            for (a, b) in pure_nash_equilibria(&g) {
                assert!(exploitability(&g, &StrategyProfile::pure(&g, a, b)).unwrap() <= 1e-12);
            }
        }
    }
}
