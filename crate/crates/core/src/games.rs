//! Stage games: two-player normal-form games and the n-player Keynes Beauty Contest.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A finite two-player stage game given by one payoff matrix per player.
///
/// Matrices are stored row-major: entry `(r, c)` lives at `r * cols + c`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormalFormGame {
    rows: usize,
    cols: usize,
    row_payoffs: Vec<f64>,
    col_payoffs: Vec<f64>,
}

impl NormalFormGame {
    /// Builds a game from nested row-major payoff matrices.
    pub fn new(row_payoffs: &[Vec<f64>], col_payoffs: &[Vec<f64>]) -> Result<Self> {
        let rows = row_payoffs.len();
        if rows == 0 || col_payoffs.len() != rows {
            return Err(Error::shape(format!(
                "payoff matrices must have the same positive number of rows ({} vs {})",
                rows,
                col_payoffs.len()
            )));
        }
        let cols = row_payoffs[0].len();
        if cols == 0 {
            return Err(Error::shape("payoff matrices must have at least one column"));
        }
        let mut r = Vec::with_capacity(rows * cols);
        let mut c = Vec::with_capacity(rows * cols);
        for (rr, cr) in row_payoffs.iter().zip(col_payoffs) {
            if rr.len() != cols || cr.len() != cols {
                return Err(Error::shape("ragged payoff matrix"));
            }
            r.extend_from_slice(rr);
            c.extend_from_slice(cr);
        }
        Self::from_flat(rows, cols, r, c)
    }

    pub fn from_flat(
        rows: usize,
        cols: usize,
        row_payoffs: Vec<f64>,
        col_payoffs: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("action counts must be positive"));
        }
        if row_payoffs.len() != rows * cols || col_payoffs.len() != rows * cols {
            return Err(Error::shape(format!(
                "expected {} payoff entries per player, got {} and {}",
                rows * cols,
                row_payoffs.len(),
                col_payoffs.len()
            )));
        }
        if row_payoffs.iter().chain(&col_payoffs).any(|v| !v.is_finite()) {
            return Err(Error::domain("payoff entries must be finite"));
        }
        Ok(Self {
            rows,
            cols,
            row_payoffs,
            col_payoffs,
        })
    }

    /// The Rotational Game. Row action 0 / column action 0 are the "first" actions.
    pub fn rotational() -> Self {
        Self::from_flat(2, 2, alloc::vec![0.0, 3.0, 1.0, 2.0], alloc::vec![3.0, 2.0, 0.0, 1.0])
            .expect("static game")
    }

    /// Stag Hunt with action 0 = S (stag) and action 1 = P (hare).
    pub fn stag_hunt() -> Self {
        Self::from_flat(2, 2, alloc::vec![4.0, 1.0, 3.0, 2.0], alloc::vec![4.0, 3.0, 1.0, 2.0])
            .expect("static game")
    }

    pub fn action_counts(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_2x2(&self) -> bool {
        self.rows == 2 && self.cols == 2
    }

    /// Row-major payoff matrix of one player (0 = row, 1 = column).
    pub fn payoffs(&self, player: Player) -> &[f64] {
        match player {
            Player::Row => &self.row_payoffs,
            Player::Col => &self.col_payoffs,
        }
    }

    #[inline]
    pub fn entry(&self, player: Player, row: usize, col: usize) -> f64 {
        self.payoffs(player)[row * self.cols + col]
    }

    pub fn payoff(&self, row_action: usize, col_action: usize) -> Result<(f64, f64)> {
        if row_action >= self.rows {
            return Err(Error::Index {
                what: "row action",
                index: row_action,
                len: self.rows,
            });
        }
        if col_action >= self.cols {
            return Err(Error::Index {
                what: "column action",
                index: col_action,
                len: self.cols,
            });
        }
        let i = row_action * self.cols + col_action;
        Ok((self.row_payoffs[i], self.col_payoffs[i]))
    }

    /// Bilinear expected payoffs `(V_r, V_c)` of a 2x2 game under mixed strategies.
    pub fn expected_payoffs(&self, s: MixedStrategyPair) -> Result<(f64, f64)> {
        if !self.is_2x2() {
            return Err(Error::shape(format!(
                "expected payoffs need a 2x2 game, got {}x{}",
                self.rows, self.cols
            )));
        }
        let (a, b) = (s.alpha(), s.beta());
        let w = [a * b, a * (1.0 - b), (1.0 - a) * b, (1.0 - a) * (1.0 - b)];
        let v = |m: &[f64]| w.iter().zip(m).map(|(w, x)| w * x).sum::<f64>();
        Ok((v(&self.row_payoffs), v(&self.col_payoffs)))
    }

    /// Expected payoff of `player` using pure action `action` against the opponent's mixed strategy.
    pub fn action_value(&self, player: Player, action: usize, opp: &[f64]) -> f64 {
        match player {
            Player::Row => (0..self.cols)
                .map(|c| opp[c] * self.entry(Player::Row, action, c))
                .sum(),
            Player::Col => (0..self.rows)
                .map(|r| opp[r] * self.entry(Player::Col, r, action))
                .sum(),
        }
    }

    pub fn num_actions(&self, player: Player) -> usize {
        match player {
            Player::Row => self.rows,
            Player::Col => self.cols,
        }
    }

    /// Returns a copy with `shift` added to every payoff of `player`.
    pub fn shifted(&self, player: Player, shift: f64) -> Self {
        let mut g = self.clone();
        let m = match player {
            Player::Row => &mut g.row_payoffs,
            Player::Col => &mut g.col_payoffs,
        };
        m.iter_mut().for_each(|v| *v += shift);
        g
    }
}

/// The two roles of a two-player game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Player {
    Row,
    Col,
}

impl Player {
    pub fn other(self) -> Self {
        match self {
            Player::Row => Player::Col,
            Player::Col => Player::Row,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Player::Row => 0,
            Player::Col => 1,
        }
    }
}

/// `(alpha, beta)`: probabilities that the row and column player pick their first action.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixedStrategyPair {
    alpha: f64,
    beta: f64,
}

impl MixedStrategyPair {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let ok = |x: f64| (0.0..=1.0).contains(&x);
        if !ok(alpha) || !ok(beta) {
            return Err(Error::domain(format!(
                "mixed strategies must lie in [0,1], got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// Projects an arbitrary point onto the unit square.
    pub fn clamped(alpha: f64, beta: f64) -> Self {
        Self {
            alpha: alpha.clamp(0.0, 1.0),
            beta: beta.clamp(0.0, 1.0),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn on_boundary(&self) -> bool {
        self.alpha <= 0.0 || self.alpha >= 1.0 || self.beta <= 0.0 || self.beta >= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RewardScheme {
    AbsoluteDifference,
    SquaredAbsoluteDifference,
}

/// The n-player guessing game: everyone guesses in `[low, high]`, the target is `p` times the mean.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BeautyContestEnv {
    n: usize,
    p: f64,
    low: f64,
    high: f64,
    reward_scheme: RewardScheme,
    steps_per_iteration: usize,
}

impl BeautyContestEnv {
    pub fn new(n: usize, p: f64, reward_scheme: RewardScheme) -> Result<Self> {
        Self::with_bounds(n, p, 0.0, 100.0, reward_scheme, 10)
    }

    pub fn with_bounds(
        n: usize,
        p: f64,
        low: f64,
        high: f64,
        reward_scheme: RewardScheme,
        steps_per_iteration: usize,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(format!("beauty contest needs n >= 2, got {n}")));
        }
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::domain(format!("multiplier p must be positive, got {p}")));
        }
        if !(low < high) || !low.is_finite() || !high.is_finite() {
            return Err(Error::domain(format!("invalid bounds [{low}, {high}]")));
        }
        if steps_per_iteration == 0 {
            return Err(Error::domain("steps_per_iteration must be positive"));
        }
        Ok(Self {
            n,
            p,
            low,
            high,
            reward_scheme,
            steps_per_iteration,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn bounds(&self) -> (f64, f64) {
        (self.low, self.high)
    }
    pub fn reward_scheme(&self) -> RewardScheme {
        self.reward_scheme
    }
    pub fn steps_per_iteration(&self) -> usize {
        self.steps_per_iteration
    }

    /// Guess of the unique pure Nash equilibrium of the bounded game.
    pub fn nash_guess(&self) -> f64 {
        if self.p < 1.0 {
            self.low
        } else if self.p > 1.0 {
            self.high
        } else {
            // every common guess is an equilibrium; report the midpoint
            0.5 * (self.low + self.high)
        }
    }

    /// Per-agent rewards: minus the distance of each guess to `p * mean(actions)`.
    pub fn step(&self, actions: &[f64]) -> Result<Vec<f64>> {
        if actions.len() != self.n {
            return Err(Error::shape(format!(
                "expected {} actions, got {}",
                self.n,
                actions.len()
            )));
        }
        if let Some(a) = actions
            .iter()
            .find(|a| !(a.is_finite() && **a >= self.low && **a <= self.high))
        {
            return Err(Error::domain(format!(
                "guess {a} outside [{}, {}]",
                self.low, self.high
            )));
        }
        let target = self.p * actions.iter().sum::<f64>() / self.n as f64;
        Ok(actions
            .iter()
            .map(|a| {
                let d = a - target;
                match self.reward_scheme {
                    RewardScheme::AbsoluteDifference => -d.abs(),
                    RewardScheme::SquaredAbsoluteDifference => -d * d,
                }
            })
            .collect())
    }
}

/// Opaque state token. Every stage game here is stateless, so a single token suffices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateToken(pub u32);

/// An action as seen by the replay buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Action {
    Discrete(usize),
    Continuous(f64),
}

impl Action {
    pub fn as_f64(&self) -> f64 {
        match *self {
            Action::Discrete(i) => i as f64,
            Action::Continuous(x) => x,
        }
    }
}

/// One joint environment step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Transition {
    pub state: StateToken,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub next_state: StateToken,
    pub terminal: bool,
}

impl Transition {
    pub fn new(
        state: StateToken,
        actions: Vec<Action>,
        rewards: Vec<f64>,
        next_state: StateToken,
        terminal: bool,
    ) -> Result<Self> {
        if actions.len() != rewards.len() {
            return Err(Error::shape(format!(
                "{} actions but {} rewards",
                actions.len(),
                rewards.len()
            )));
        }
        Ok(Self {
            state,
            actions,
            rewards,
            next_state,
            terminal,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.actions.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn payoff_matches_builtin_matrices() {
        let rg = NormalFormGame::rotational();
        assert_eq!(rg.payoff(0, 1).unwrap(), (3.0, 2.0));
        assert_eq!(rg.payoff(0, 0).unwrap(), (0.0, 3.0));
        assert_eq!(rg.payoff(1, 0).unwrap(), (1.0, 0.0));
        assert_eq!(rg.payoff(1, 1).unwrap(), (2.0, 1.0));
        let sh = NormalFormGame::stag_hunt();
        assert_eq!(sh.payoff(0, 0).unwrap(), (4.0, 4.0));
        assert_eq!(sh.payoff(0, 1).unwrap(), (1.0, 3.0));
        assert_eq!(sh.payoff(1, 0).unwrap(), (3.0, 1.0));
        assert_eq!(sh.payoff(1, 1).unwrap(), (2.0, 2.0));
        assert_eq!(sh.payoff(1, 1), sh.payoff(1, 1));
    }

    #[test]
    fn payoff_rejects_out_of_range() {
        let g = NormalFormGame::rotational();
        assert!(matches!(g.payoff(2, 0), Err(Error::Index { .. })));
        assert!(matches!(g.payoff(0, 5), Err(Error::Index { .. })));
    }

    #[test]
    fn construction_validates() {
        assert!(NormalFormGame::new(&[vec![1.0, 2.0]], &[vec![1.0]]).is_err());
        assert!(NormalFormGame::new(&[vec![f64::NAN]], &[vec![1.0]]).is_err());
        let g = NormalFormGame::new(&[vec![1.0, 2.0, 3.0]], &[vec![0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(g.action_counts(), (1, 3));
    }

    #[test]
    fn expected_payoffs_examples() {
        let rg = NormalFormGame::rotational();
        let sh = NormalFormGame::stag_hunt();
        let corner = MixedStrategyPair::new(1.0, 1.0).unwrap();
        assert_eq!(rg.expected_payoffs(corner).unwrap(), (0.0, 3.0));
        let mid = MixedStrategyPair::new(0.5, 0.5).unwrap();
        assert_eq!(rg.expected_payoffs(mid).unwrap(), (1.5, 1.5));
        assert_eq!(sh.expected_payoffs(mid).unwrap(), (2.5, 2.5));
        let g3 = NormalFormGame::new(&vec![vec![0.0; 3]; 3], &vec![vec![0.0; 3]; 3]).unwrap();
        assert!(matches!(g3.expected_payoffs(mid), Err(Error::Shape(_))));
    }

    #[test]
    fn expected_payoffs_at_corners_equal_entries() {
        for g in [NormalFormGame::rotational(), NormalFormGame::stag_hunt()] {
            for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let s = MixedStrategyPair::new(1.0 - r as f64, 1.0 - c as f64).unwrap();
                assert_eq!(g.expected_payoffs(s).unwrap(), g.payoff(r, c).unwrap());
            }
        }
    }

    #[test]
    fn beauty_step_examples() {
        let env = BeautyContestEnv::new(2, 0.7, RewardScheme::AbsoluteDifference).unwrap();
        assert_eq!(env.step(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let r = env.step(&[50.0, 50.0]).unwrap();
        assert!((r[0] + 15.0).abs() < 1e-12 && (r[1] + 15.0).abs() < 1e-12);
        let env = BeautyContestEnv::new(10, 1.1, RewardScheme::AbsoluteDifference).unwrap();
        for r in env.step(&[100.0; 10]).unwrap() {
            assert!((r + 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn beauty_squared_scheme() {
        let env = BeautyContestEnv::new(2, 0.7, RewardScheme::SquaredAbsoluteDifference).unwrap();
        let r = env.step(&[50.0, 50.0]).unwrap();
        assert!((r[0] + 225.0).abs() < 1e-9);
    }

    #[test]
    fn beauty_rejects_out_of_bounds() {
        let env = BeautyContestEnv::new(2, 0.7, RewardScheme::AbsoluteDifference).unwrap();
        assert!(matches!(env.step(&[-1.0, 3.0]), Err(Error::Domain(_))));
        assert!(matches!(env.step(&[101.0, 3.0]), Err(Error::Domain(_))));
        assert!(matches!(env.step(&[1.0]), Err(Error::Shape(_))));
        assert!(BeautyContestEnv::new(1, 0.7, RewardScheme::AbsoluteDifference).is_err());
        assert!(BeautyContestEnv::new(2, 0.0, RewardScheme::AbsoluteDifference).is_err());
    }

    #[test]
    fn transition_checks_lengths() {
        let t = Transition::new(
            StateToken(0),
            vec![Action::Continuous(1.0)],
            vec![0.0, 1.0],
            StateToken(0),
            false,
        );
        assert!(t.is_err());
    }
}
