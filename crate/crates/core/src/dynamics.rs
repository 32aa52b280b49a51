//! Gradient-ascent learning dynamics on 2x2 games.
//!
//! Level 0 is infinitesimal gradient ascent (IGA). A level-k player takes the
//! gradient of its payoff against the opponent's one-step look-ahead strategy
//! `beta + zeta * beta_dot`, where the look-ahead uses the opponent's level-(k-1)
//! field. Because parameters are shared across levels of equal parity, the
//! look-ahead corrections of the lower same-parity levels accumulate onto the
//! top level:
//!
//! ```text
//! L_k = P_k + Σ_{j = k-2, k-4, ..., j >= 1} (P_j - P_0)
//! ```
//!
//! where `P_j` is the plain j-step look-ahead field. `L_1` and `L_2` equal the
//! plain look-ahead fields; `L_3` yields
//! `dF/dt = ζ u_r u_c (2 + ζ² u_r u_c)(u_c x² - u_r y²)`.

use alloc::format;
use alloc::vec::Vec;

use crate::fmath;
use crate::games::{MixedStrategyPair, NormalFormGame, Player};
use crate::{Error, Result};

/// `(u_r, b_r, u_c, b_c)` of a 2x2 game.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Coefficients {
    pub u_r: f64,
    pub b_r: f64,
    pub u_c: f64,
    pub b_c: f64,
}

impl Coefficients {
    pub fn new(u_r: f64, b_r: f64, u_c: f64, b_c: f64) -> Self {
        Self { u_r, b_r, u_c, b_c }
    }

    /// True when the center is a mixed equilibrium surrounded by closed IGA orbits.
    pub fn has_mixed_center(&self) -> bool {
        self.u_r * self.u_c < 0.0
    }
}

pub fn derive_coefficients(game: &NormalFormGame) -> Result<Coefficients> {
    if !game.is_2x2() {
        let (r, c) = game.action_counts();
        return Err(Error::shape(format!("coefficients need a 2x2 game, got {r}x{c}")));
    }
    let r = |i, j| game.entry(Player::Row, i, j);
    let c = |i, j| game.entry(Player::Col, i, j);
    Ok(Coefficients {
        u_r: r(0, 0) - r(0, 1) - r(1, 0) + r(1, 1),
        b_r: r(0, 1) - r(1, 1),
        u_c: c(0, 0) - c(0, 1) - c(1, 0) + c(1, 1),
        b_c: c(1, 0) - c(1, 1),
    })
}

/// Location of the zero-gradient point of the IGA field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Center {
    pub alpha: f64,
    pub beta: f64,
    /// Whether the point lies in the open unit square.
    pub interior: bool,
}

impl Center {
    pub fn distance(&self, p: MixedStrategyPair) -> f64 {
        let dx = p.alpha() - self.alpha;
        let dy = p.beta() - self.beta;
        fmath::sqrt(dx * dx + dy * dy)
    }
}

pub fn center(c: &Coefficients) -> Result<Center> {
    if c.u_r == 0.0 || c.u_c == 0.0 {
        return Err(Error::DegenerateGame("u_r or u_c is zero; no isolated center"));
    }
    let alpha = -c.b_c / c.u_c;
    let beta = -c.b_r / c.u_r;
    Ok(Center {
        alpha,
        beta,
        interior: alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0,
    })
}

/// Coefficients plus look-ahead step and reasoning level.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dynamics2x2 {
    pub coeffs: Coefficients,
    pub zeta: f64,
    pub level: usize,
}

impl Dynamics2x2 {
    pub fn new(coeffs: Coefficients, zeta: f64, level: usize) -> Result<Self> {
        if !(zeta >= 0.0) || !zeta.is_finite() {
            return Err(Error::domain(format!("zeta must be finite and >= 0, got {zeta}")));
        }
        let Coefficients { u_r, b_r, u_c, b_c } = coeffs;
        if ![u_r, b_r, u_c, b_c].iter().all(|v| v.is_finite()) {
            return Err(Error::domain("coefficients must be finite"));
        }
        Ok(Self { coeffs, zeta, level })
    }

    pub fn vector_field(&self, alpha: f64, beta: f64) -> (f64, f64) {
        vector_field_raw(&self.coeffs, self.zeta, self.level, alpha, beta)
    }
}

/// Plain look-ahead field `P_k`.
fn lookahead_field(c: &Coefficients, zeta: f64, k: usize, alpha: f64, beta: f64) -> (f64, f64) {
    let mut v = (c.u_r * beta + c.b_r, c.u_c * alpha + c.b_c);
    for _ in 0..k {
        v = (
            c.u_r * (beta + zeta * v.1) + c.b_r,
            c.u_c * (alpha + zeta * v.0) + c.b_c,
        );
    }
    v
}

fn vector_field_raw(c: &Coefficients, zeta: f64, level: usize, alpha: f64, beta: f64) -> (f64, f64) {
    let top = lookahead_field(c, zeta, level, alpha, beta);
    if level < 3 {
        return top;
    }
    let base = lookahead_field(c, zeta, 0, alpha, beta);
    let mut out = top;
    let mut j = level - 2;
    while j >= 1 {
        let p = lookahead_field(c, zeta, j, alpha, beta);
        out.0 += p.0 - base.0;
        out.1 += p.1 - base.1;
        if j < 2 {
            break;
        }
        j -= 2;
    }
    out
}

/// Velocity `(dα/dt, dβ/dt)` of the level-k dynamics at `point`.
pub fn vector_field(c: &Coefficients, zeta: f64, level: usize, point: MixedStrategyPair) -> (f64, f64) {
    vector_field_raw(c, zeta, level, point.alpha(), point.beta())
}

/// Orientation making `F` non-negative: `+1` when `u_c > 0 > u_r`, `-1` when `u_r > 0 > u_c`.
fn orientation(c: &Coefficients) -> Result<f64> {
    if !c.has_mixed_center() {
        return Err(Error::NotLyapunovCandidate(c.u_r * c.u_c));
    }
    Ok(if c.u_c > 0.0 { 1.0 } else { -1.0 })
}

fn offsets(c: &Coefficients, p: MixedStrategyPair) -> Result<(f64, f64)> {
    let ctr = center(c)?;
    Ok((p.alpha() - ctr.alpha, p.beta() - ctr.beta))
}

/// `F(x, y) = ½(u_c x² - u_r y²)` around the center, sign-oriented to be non-negative.
pub fn lyapunov_value(c: &Coefficients, p: MixedStrategyPair) -> Result<f64> {
    let s = orientation(c)?;
    let (x, y) = offsets(c, p)?;
    Ok(s * 0.5 * (c.u_c * x * x - c.u_r * y * y))
}

/// Closed-form `dF/dt` for levels 0 through 3.
pub fn lyapunov_derivative_closed_form(
    c: &Coefficients,
    zeta: f64,
    p: MixedStrategyPair,
    level: usize,
) -> Result<f64> {
    let s = orientation(c)?;
    let (x, y) = offsets(c, p)?;
    let ruc = c.u_r * c.u_c;
    let factor = match level {
        0 => return Ok(0.0),
        1 | 2 => 1.0,
        3 => 2.0 + zeta * zeta * ruc,
        k => return Err(Error::UnsupportedLevel(k)),
    };
    Ok(s * zeta * ruc * factor * (c.u_c * x * x - c.u_r * y * y))
}

/// Chain-rule `∂F/∂x · ẋ + ∂F/∂y · ẏ` using the level-k field, together with
/// the magnitude `|∂F/∂x · ẋ| + |∂F/∂y · ẏ|` of the two summands.
pub fn lyapunov_derivative_terms(
    c: &Coefficients,
    zeta: f64,
    p: MixedStrategyPair,
    level: usize,
) -> Result<(f64, f64)> {
    let s = orientation(c)?;
    let (x, y) = offsets(c, p)?;
    let (da, db) = vector_field(c, zeta, level, p);
    let tx = s * c.u_c * x * da;
    let ty = -s * c.u_r * y * db;
    Ok((tx + ty, tx.abs() + ty.abs()))
}

pub fn lyapunov_derivative_numeric(
    c: &Coefficients,
    zeta: f64,
    p: MixedStrategyPair,
    level: usize,
) -> Result<f64> {
    lyapunov_derivative_terms(c, zeta, p, level).map(|(v, _)| v)
}

/// A solution curve of the dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<MixedStrategyPair>,
    /// Present when the game admits the quadratic Lyapunov function.
    pub lyapunov_values: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<MixedStrategyPair> {
        self.points.last().copied()
    }
}

/// Fixed-step RK4 with componentwise projection onto the unit square after every step.
pub fn integrate(
    dynamics: &Dynamics2x2,
    start: MixedStrategyPair,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::domain(format!("horizon must be non-negative, got {horizon}")));
    }
    let c = dynamics.coeffs;
    let lyap = c.has_mixed_center() && center(&c).is_ok();
    let steps = libm::round(horizon / dt) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    let mut values = if lyap { Some(Vec::with_capacity(steps + 1)) } else { None };

    let f = |a: f64, b: f64| dynamics.vector_field(a, b);
    let mut p = start;
    let mut push = |t: f64, p: MixedStrategyPair| -> Result<()> {
        times.push(t);
        points.push(p);
        if let Some(v) = values.as_mut() {
            v.push(lyapunov_value(&c, p)?);
        }
        Ok(())
    };
    push(0.0, p)?;
    for i in 1..=steps {
        let (a, b) = (p.alpha(), p.beta());
        let k1 = f(a, b);
        let k2 = f(a + 0.5 * dt * k1.0, b + 0.5 * dt * k1.1);
        let k3 = f(a + 0.5 * dt * k2.0, b + 0.5 * dt * k2.1);
        let k4 = f(a + dt * k3.0, b + dt * k3.1);
        let na = a + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        let nb = b + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        let t = i as f64 * dt;
        if !na.is_finite() || !nb.is_finite() {
            return Err(Error::IntegrationDiverged(t));
        }
        p = MixedStrategyPair::clamped(na, nb);
        push(t, p)?;
    }
    Ok(Trajectory {
        times,
        points,
        lyapunov_values: values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    ConvergedToCenter,
    Cycling,
    BoundaryAttracted,
    Undetermined,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::ConvergedToCenter => "converged",
            Verdict::Cycling => "cycling",
            Verdict::BoundaryAttracted => "boundary",
            Verdict::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub verdict: Verdict,
    /// First time from which the trajectory stays within epsilon of the center.
    pub time_to_epsilon: Option<f64>,
    pub final_distance: f64,
}

/// Relative drift of the Lyapunov value tolerated for a closed orbit.
pub const CYCLE_TOLERANCE: f64 = 1e-5;

pub fn classify(traj: &Trajectory, c: &Coefficients, epsilon: f64) -> Result<ConvergenceReport> {
    let last = traj
        .last()
        .ok_or_else(|| Error::domain("cannot classify an empty trajectory"))?;
    let ctr = match center(c) {
        Ok(ctr) => ctr,
        Err(_) => {
            let verdict = if last.on_boundary() {
                Verdict::BoundaryAttracted
            } else {
                Verdict::Undetermined
            };
            return Ok(ConvergenceReport {
                verdict,
                time_to_epsilon: None,
                final_distance: f64::NAN,
            });
        }
    };
    let final_distance = ctr.distance(last);
    // first index after which every point stays inside the ball
    let mut entry = None;
    for (i, p) in traj.points.iter().enumerate().rev() {
        if ctr.distance(*p) < epsilon {
            entry = Some(i);
        } else {
            break;
        }
    }
    if let Some(i) = entry {
        return Ok(ConvergenceReport {
            verdict: Verdict::ConvergedToCenter,
            time_to_epsilon: Some(traj.times[i]),
            final_distance,
        });
    }
    let verdict = if let Some(values) = traj.lyapunov_values.as_ref().filter(|_| !last.on_boundary()) {
        let f0 = values[0];
        let drift = values.iter().map(|v| (v - f0).abs()).fold(0.0, f64::max);
        let min_dist = traj
            .points
            .iter()
            .map(|p| ctr.distance(*p))
            .fold(f64::INFINITY, f64::min);
        if f0 > 0.0 && drift / f0 < CYCLE_TOLERANCE && min_dist > epsilon {
            Verdict::Cycling
        } else {
            Verdict::Undetermined
        }
    } else if last.on_boundary() {
        Verdict::BoundaryAttracted
    } else {
        Verdict::Undetermined
    };
    Ok(ConvergenceReport {
        verdict,
        time_to_epsilon: None,
        final_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pt(a: f64, b: f64) -> MixedStrategyPair {
        MixedStrategyPair::new(a, b).unwrap()
    }

    fn rg() -> Coefficients {
        derive_coefficients(&NormalFormGame::rotational()).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(rg(), Coefficients::new(-2.0, 1.0, 2.0, -1.0));
        let sh = derive_coefficients(&NormalFormGame::stag_hunt()).unwrap();
        assert_eq!(sh, Coefficients::new(2.0, -1.0, 2.0, -1.0));
        let zero = NormalFormGame::from_flat(2, 2, alloc::vec![0.0; 4], alloc::vec![0.0; 4]).unwrap();
        assert_eq!(derive_coefficients(&zero).unwrap(), Coefficients::new(0.0, 0.0, 0.0, 0.0));
        let g3 = NormalFormGame::from_flat(3, 3, alloc::vec![0.0; 9], alloc::vec![0.0; 9]).unwrap();
        assert!(matches!(derive_coefficients(&g3), Err(Error::Shape(_))));
    }

    #[test]
    fn center_examples() {
        let c = center(&rg()).unwrap();
        assert_eq!((c.alpha, c.beta), (0.5, 0.5));
        assert!(c.interior);
        let sh = center(&Coefficients::new(2.0, -1.0, 2.0, -1.0)).unwrap();
        assert_eq!((sh.alpha, sh.beta), (0.5, 0.5));
        let o = center(&Coefficients::new(-1.0, 0.0, 1.0, 0.0)).unwrap();
        assert_eq!((o.alpha, o.beta), (0.0, 0.0));
        assert!(!o.interior);
        assert!(matches!(center(&Coefficients::new(0.0, 1.0, 1.0, 0.0)), Err(Error::DegenerateGame(_))));
    }

    #[test]
    fn field_examples() {
        let c = rg();
        assert_eq!(vector_field(&c, 0.1, 0, pt(0.5, 0.5)), (0.0, 0.0));
        let v = vector_field(&c, 0.1, 0, pt(0.6, 0.5));
        assert_abs_diff_eq!(v.0, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.1, 0.2, epsilon = 1e-15);
        for level in 1..6 {
            assert_eq!(vector_field(&c, 0.0, level, pt(0.3, 0.8)), vector_field(&c, 0.0, 0, pt(0.3, 0.8)));
        }
    }

    #[test]
    fn level_one_field_matches_matrix_form() {
        let c = Coefficients::new(-1.3, 0.4, 2.2, -0.7);
        let z = 0.2;
        let (a, b) = (0.31, 0.77);
        let ruc = c.u_r * c.u_c;
        let expect = (
            z * ruc * a + c.u_r * b + z * c.u_r * c.b_c + c.b_r,
            c.u_c * a + z * ruc * b + z * c.u_c * c.b_r + c.b_c,
        );
        let got = vector_field(&c, z, 1, pt(a, b));
        assert_abs_diff_eq!(got.0, expect.0, epsilon = 1e-14);
        assert_abs_diff_eq!(got.1, expect.1, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_examples() {
        let c = rg();
        assert_eq!(lyapunov_value(&c, pt(0.5, 0.5)).unwrap(), 0.0);
        assert_abs_diff_eq!(lyapunov_value(&c, pt(0.6, 0.5)).unwrap(), 0.01, epsilon = 1e-15);
        let a = lyapunov_value(&c, pt(0.7, 0.2)).unwrap();
        let b = lyapunov_value(&c, pt(0.3, 0.8)).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        let sh = Coefficients::new(2.0, -1.0, 2.0, -1.0);
        assert!(matches!(lyapunov_value(&sh, pt(0.1, 0.1)), Err(Error::NotLyapunovCandidate(_))));
        // flipped orientation stays non-negative
        let flipped = Coefficients::new(2.0, -1.0, -2.0, 1.0);
        assert!(lyapunov_value(&flipped, pt(0.9, 0.1)).unwrap() > 0.0);
    }

    #[test]
    fn closed_form_examples() {
        let c = rg();
        assert_eq!(lyapunov_derivative_closed_form(&c, 0.1, pt(0.2, 0.9), 0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            lyapunov_derivative_closed_form(&c, 0.1, pt(0.6, 0.5), 1).unwrap(),
            -0.008,
            epsilon = 1e-15
        );
        let small = lyapunov_derivative_closed_form(&c, 1e-6, pt(0.6, 0.5), 3).unwrap();
        assert!(small < 0.0 && small > -1e-6);
        assert!(matches!(
            lyapunov_derivative_closed_form(&c, 0.1, pt(0.6, 0.5), 4),
            Err(Error::UnsupportedLevel(4))
        ));
    }

    #[test]
    fn numeric_matches_closed_form_at_levels_0_to_3() {
        let c = rg();
        assert!(lyapunov_derivative_numeric(&c, 0.1, pt(0.9, 0.2), 0).unwrap().abs() < 1e-12);
        for level in 0..=3 {
            for (a, b) in [(0.6, 0.5), (0.9, 0.1), (0.2, 0.35), (0.5, 0.99)] {
                let closed = lyapunov_derivative_closed_form(&c, 0.1, pt(a, b), level).unwrap();
                let (num, mag) = lyapunov_derivative_terms(&c, 0.1, pt(a, b), level).unwrap();
                assert!((closed - num).abs() <= 1e-9 * mag.max(closed.abs()).max(1e-300));
            }
        }
        // level 2 equals the level-1 closed form
        let l1 = lyapunov_derivative_closed_form(&c, 0.1, pt(0.8, 0.3), 1).unwrap();
        let n2 = lyapunov_derivative_numeric(&c, 0.1, pt(0.8, 0.3), 2).unwrap();
        assert_abs_diff_eq!(l1, n2, epsilon = 1e-14);
    }

    #[test]
    fn integrate_fixed_point_and_errors() {
        let d = Dynamics2x2::new(rg(), 0.1, 2).unwrap();
        let t = integrate(&d, pt(0.5, 0.5), 1e-2, 5.0).unwrap();
        assert!(t.points.iter().all(|p| *p == pt(0.5, 0.5)));
        assert!(integrate(&d, pt(0.5, 0.5), 0.0, 5.0).is_err());
        let r = classify(&t, &rg(), 1e-3).unwrap();
        assert_eq!(r.verdict, Verdict::ConvergedToCenter);
        assert_eq!(r.time_to_epsilon, Some(0.0));
    }

    #[test]
    fn integrate_detects_divergence() {
        assert!(Dynamics2x2::new(Coefficients::new(f64::NAN, 0.0, 1.0, 0.0), 0.0, 0).is_err());
        assert!(Dynamics2x2::new(rg(), -0.1, 0).is_err());
        let big = Dynamics2x2 {
            coeffs: Coefficients::new(-1e300, 1e300, 1e300, -1e300),
            zeta: 1e10,
            level: 1,
        };
        assert!(matches!(integrate(&big, pt(0.9, 0.1), 1.0, 2.0), Err(Error::IntegrationDiverged(_))));
    }

    #[test]
    fn level_two_converges_from_corner() {
        let d = Dynamics2x2::new(rg(), 0.1, 2).unwrap();
        let t = integrate(&d, pt(0.9, 0.1), 1e-3, 200.0).unwrap();
        let r = classify(&t, &rg(), 1e-3).unwrap();
        assert!(r.final_distance < 1e-3);
        assert_eq!(r.verdict, Verdict::ConvergedToCenter);
    }

    #[test]
    fn saddle_game_goes_to_boundary() {
        let sh = derive_coefficients(&NormalFormGame::stag_hunt()).unwrap();
        let d = Dynamics2x2::new(sh, 0.1, 0).unwrap();
        let t = integrate(&d, pt(0.7, 0.6), 1e-2, 20.0).unwrap();
        assert!(t.lyapunov_values.is_none());
        let r = classify(&t, &sh, 1e-3).unwrap();
        assert_eq!(r.verdict, Verdict::BoundaryAttracted);
        assert_eq!(t.last().unwrap(), pt(1.0, 1.0));
    }
}
