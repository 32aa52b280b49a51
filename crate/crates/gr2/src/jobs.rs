//! The four jobs: dynamics, train, tournament and verify.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use gr2_core::analysis::{nash_persistence_battery, random_pure_nash_games, TieRule};
use gr2_core::dynamics::{
    center, classify, derive_coefficients, integrate, lyapunov_derivative_closed_form, lyapunov_derivative_terms,
    Coefficients, Dynamics2x2, Verdict,
};
use gr2_core::games::{MixedStrategyPair, StateToken};
use gr2_core::learning::{
    check_gradients, seeded_stream, train, AgentBundle, AgentSpec, CategoricalOpponentModel, CriticParams,
    Experience, LossNoise, MetricRow, PolicyParams, TrainerConfig,
};
use gr2_core::learning::nn::Mlp;
use gr2_core::reasoning::{marginal_q_logsumexp, opponent_posterior, poisson_weights, JointQView};
use rand::Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, Game};
use crate::error::{Gr2Error, Result};
use crate::output::{ensure_dir, median, quantile, write_csv, write_metrics, write_text, write_trajectory};

// ---------------------------------------------------------------- dynamics

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsRow {
    pub level: usize,
    pub start: [f64; 2],
    /// `None` when the start point was skipped; the reason is in `note`.
    pub verdict: Option<Verdict>,
    pub time_to_epsilon: Option<f64>,
    pub final_distance: Option<f64>,
    /// Largest relative drift of the Lyapunov value, when it exists.
    pub lyapunov_drift: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsReport {
    pub config_hash: String,
    pub coefficients: Coefficients,
    pub rows: Vec<DynamicsRow>,
}

impl DynamicsReport {
    pub fn row(&self, level: usize, start: usize) -> Option<&DynamicsRow> {
        self.rows
            .iter()
            .filter(|r| r.level == level)
            .nth(start)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn run_dynamics(cfg: &ExperimentConfig) -> Result<DynamicsReport> {
    let Some(Game::Matrix(game)) = &cfg.game else {
        return Err(Gr2Error::Config("dynamics needs a 2x2 matrix game".into()));
    };
    let s = &cfg.dynamics;
    let coeffs = derive_coefficients(game)?;
    ensure_dir(&cfg.out)?;
    let mut rows = Vec::new();
    for &level in &s.levels {
        for (i, &[a, b]) in s.starts.iter().enumerate() {
            let mut row = DynamicsRow {
                level,
                start: [a, b],
                verdict: None,
                time_to_epsilon: None,
                final_distance: None,
                lyapunov_drift: None,
                note: String::new(),
            };
            let result = MixedStrategyPair::new(a, b)
                .and_then(|p| Ok((p, Dynamics2x2::new(coeffs, s.zeta, level)?)))
                .and_then(|(p, dynamics)| integrate(&dynamics, p, s.dt, s.horizon))
                .and_then(|traj| Ok((classify(&traj, &coeffs, s.epsilon)?, traj)));
            match result {
                Ok((report, traj)) => {
                    write_trajectory(&cfg.out.join(format!("traj_level{level}_start{i}.csv")), &traj, s.stride)?;
                    row.verdict = Some(report.verdict);
                    row.time_to_epsilon = report.time_to_epsilon;
                    row.final_distance = Some(report.final_distance);
                    row.lyapunov_drift = traj.lyapunov_values.as_ref().and_then(|f| {
                        (f[0] > 0.0).then(|| f.iter().map(|v| (v - f[0]).abs() / f[0]).fold(0.0, f64::max))
                    });
                }
                Err(e) => row.note = format!("skipped: {e}"),
            }
            rows.push(row);
        }
    }
    let report = DynamicsReport {
        config_hash: cfg.hash(),
        coefficients: coeffs,
        rows,
    };
    write_csv(
        &cfg.out.join("dynamics_summary.csv"),
        &[
            "level",
            "alpha0",
            "beta0",
            "verdict",
            "time_to_epsilon",
            "final_distance",
            "lyapunov_drift",
            "note",
        ],
        report.rows.iter().map(|r| {
            vec![
                r.level.to_string(),
                r.start[0].to_string(),
                r.start[1].to_string(),
                r.verdict.map(|v| v.as_str().to_string()).unwrap_or_default(),
                fmt_opt(r.time_to_epsilon),
                fmt_opt(r.final_distance),
                fmt_opt(r.lyapunov_drift),
                r.note.clone(),
            ]
        }),
    )?;
    let mut text = format!("job: dynamics\nconfig_hash: {}\n", report.config_hash);
    let c = coeffs;
    let _ = writeln!(text, "coefficients: u_r={} b_r={} u_c={} b_c={}", c.u_r, c.b_r, c.u_c, c.b_c);
    match center(&coeffs) {
        Ok(ctr) => {
            let _ = writeln!(text, "center: ({}, {})", ctr.alpha, ctr.beta);
        }
        Err(e) => {
            let _ = writeln!(text, "center: none ({e})");
        }
    }
    for r in &report.rows {
        let _ = writeln!(
            text,
            "level {} start ({}, {}): {} t_eps={} dist={}{}",
            r.level,
            r.start[0],
            r.start[1],
            r.verdict.map_or("skipped", |v| v.as_str()),
            fmt_opt(r.time_to_epsilon),
            fmt_opt(r.final_distance),
            if r.note.is_empty() { String::new() } else { format!(" ({})", r.note) }
        );
    }
    write_text(&cfg.out.join("summary.txt"), &text)?;
    Ok(report)
}

// ---------------------------------------------------------------- train

/// One seed's completed training run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    pub duration: Duration,
    /// Final-iteration mean action of the scored agents (raw units).
    pub final_mean_action: f64,
    pub final_mean_reward: f64,
    pub level_gaps: Vec<Option<(f64, f64)>>,
}

impl RunRecord {
    /// Per-iteration mean action over the scored agents.
    pub fn action_curve(&self) -> Vec<f64> {
        curve(&self.rows, |r| r.mean_action, None)
    }

    pub fn reward_curve(&self) -> Vec<f64> {
        curve(&self.rows, |r| r.mean_reward, None)
    }

    /// First iteration whose mean action is below `threshold`.
    pub fn first_iteration_below(&self, threshold: f64) -> Option<usize> {
        self.action_curve().iter().position(|a| *a < threshold)
    }
}

fn curve(rows: &[MetricRow], f: impl Fn(&MetricRow) -> f64, agents: Option<&[usize]>) -> Vec<f64> {
    let iters = rows.last().map_or(0, |r| r.iteration + 1);
    let mut sum = vec![0.0; iters];
    let mut cnt = vec![0usize; iters];
    for r in rows {
        if agents.is_none_or(|a| a.contains(&r.agent)) {
            sum[r.iteration] += f(r);
            cnt[r.iteration] += 1;
        }
    }
    sum.iter().zip(&cnt).map(|(s, c)| s / *c as f64).collect()
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub config_hash: String,
    pub records: Vec<RunRecord>,
    pub failures: Vec<(u64, String)>,
    pub median_final_action: f64,
    pub median_final_reward: f64,
}

impl TrainReport {
    pub fn final_actions(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.final_mean_action).collect()
    }

    pub fn final_rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.final_mean_reward).collect()
    }
}

#[derive(Serialize)]
struct AgentCheckpoint<'a> {
    spec: &'a AgentSpec,
    theta: &'a PolicyParams,
    phi: &'a Mlp,
    omega: &'a CriticParams,
    omega_bar: &'a CriticParams,
}

#[derive(Serialize)]
struct Checkpoint<'a> {
    version: u32,
    config_hash: &'a str,
    seed: u64,
    agents: Vec<AgentCheckpoint<'a>>,
}

fn write_checkpoint(path: &Path, hash: &str, seed: u64, agents: &[AgentBundle]) -> Result<()> {
    let ck = Checkpoint {
        version: 1,
        config_hash: hash,
        seed,
        agents: agents
            .iter()
            .map(|a| AgentCheckpoint {
                spec: &a.spec,
                theta: &a.theta,
                phi: &a.phi,
                omega: &a.omega,
                omega_bar: &a.omega_bar,
            })
            .collect(),
    };
    let text = serde_json::to_string(&ck).map_err(|e| Gr2Error::Job(format!("checkpoint: {e}")))?;
    write_text(path, &text)
}

/// Trains `specs` on `game` once per seed, writing per-seed metrics and
/// checkpoints into `dir`. `scored` selects the agents whose final action and
/// reward are reported (all agents when `None`).
fn train_seeds(
    game: &Game,
    specs: &[AgentSpec],
    trainer: &TrainerConfig,
    seeds: &[u64],
    hash: &str,
    dir: &Path,
    scored: Option<&[usize]>,
) -> Result<TrainReport> {
    ensure_dir(dir)?;
    let env = game.train_env();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &seed in seeds {
        let start = Instant::now();
        match train(&env, specs, trainer, seed, |_| {}) {
            Ok(outcome) => {
                let duration = start.elapsed();
                write_metrics(&dir.join(format!("metrics_{seed}.csv")), &outcome.rows)?;
                write_checkpoint(&dir.join(format!("checkpoint_{seed}.json")), hash, seed, &outcome.agents)?;
                let last = |f: fn(&MetricRow) -> f64| *curve(&outcome.rows, f, scored).last().unwrap_or(&f64::NAN);
                let rows: Vec<MetricRow> = outcome
                    .rows
                    .iter()
                    .filter(|r| scored.is_none_or(|a| a.contains(&r.agent)))
                    .cloned()
                    .collect();
                records.push(RunRecord {
                    config_hash: hash.to_string(),
                    seed,
                    final_mean_action: last(|r| r.mean_action),
                    final_mean_reward: last(|r| r.mean_reward),
                    rows,
                    duration,
                    level_gaps: outcome.level_gaps,
                });
            }
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let actions: Vec<f64> = records.iter().map(|r| r.final_mean_action).collect();
    let rewards: Vec<f64> = records.iter().map(|r| r.final_mean_reward).collect();
    Ok(TrainReport {
        config_hash: hash.to_string(),
        median_final_action: median(&actions),
        median_final_reward: median(&rewards),
        records,
        failures,
    })
}

fn write_aggregate(path: &Path, records: &[RunRecord]) -> Result<()> {
    let curves: Vec<(Vec<f64>, Vec<f64>)> = records.iter().map(|r| (r.action_curve(), r.reward_curve())).collect();
    let iters = curves.iter().map(|c| c.0.len()).min().unwrap_or(0);
    let rows = (0..iters).map(|i| {
        let a: Vec<f64> = curves.iter().map(|c| c.0[i]).collect();
        let r: Vec<f64> = curves.iter().map(|c| c.1[i]).collect();
        vec![
            i.to_string(),
            median(&a).to_string(),
            quantile(&a, 0.25).to_string(),
            quantile(&a, 0.75).to_string(),
            median(&r).to_string(),
            quantile(&r, 0.25).to_string(),
            quantile(&r, 0.75).to_string(),
            a.len().to_string(),
        ]
    });
    write_csv(
        path,
        &[
            "iteration",
            "median_action",
            "q25_action",
            "q75_action",
            "median_reward",
            "q25_reward",
            "q75_reward",
            "seeds",
        ],
        rows,
    )
}

fn game_label(game: &Game) -> String {
    match game {
        Game::Beauty(e) => format!("beauty n={} p={} {:?}", e.n(), e.p(), e.reward_scheme()),
        Game::Matrix(g) => format!("matrix {:?}", g.action_counts()),
    }
}

fn check_failures(report: &TrainReport, seeds: usize) -> Result<()> {
    if report.failures.len() * 2 > seeds {
        let list: Vec<String> = report.failures.iter().map(|(s, e)| format!("seed {s}: {e}")).collect();
        return Err(Gr2Error::Job(format!(
            "{} of {seeds} seeds failed: {}",
            report.failures.len(),
            list.join("; ")
        )));
    }
    Ok(())
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let game = cfg
        .game
        .as_ref()
        .ok_or_else(|| Gr2Error::Config("train needs a [game]".into()))?;
    let hash = cfg.hash();
    let report = train_seeds(game, &cfg.agents, &cfg.trainer, &cfg.seeds, &hash, &cfg.out, None)?;
    write_aggregate(&cfg.out.join("aggregate.csv"), &report.records)?;

    let mut text = format!("job: train\nconfig_hash: {hash}\ngame: {}\n", game_label(game));
    let labels: Vec<String> = cfg.agents.iter().map(AgentSpec::label).collect();
    let _ = writeln!(text, "agents: {}", labels.join(", "));
    let _ = writeln!(text, "seed,final_mean_action,final_mean_reward,seconds");
    for r in &report.records {
        let _ = writeln!(
            text,
            "{},{},{},{:.2}",
            r.seed,
            r.final_mean_action,
            r.final_mean_reward,
            r.duration.as_secs_f64()
        );
    }
    for (s, e) in &report.failures {
        let _ = writeln!(text, "{s},failed,{e},");
    }
    match game {
        Game::Beauty(_) => {
            let _ = writeln!(text, "converged_guess_median: {}", report.median_final_action);
        }
        Game::Matrix(_) => {}
    }
    let _ = writeln!(text, "final_reward_median: {}", report.median_final_reward);
    write_text(&cfg.out.join("summary.txt"), &text)?;
    check_failures(&report, cfg.seeds.len())?;
    Ok(report)
}

// ---------------------------------------------------------------- tournament

#[derive(Debug, Clone)]
pub struct Pairing {
    pub row: usize,
    pub col: usize,
    pub report: TrainReport,
}

#[derive(Debug, Clone)]
pub struct TournamentReport {
    pub config_hash: String,
    pub labels: Vec<String>,
    /// `scores[i][j]`: median final reward of spec `i` playing against spec `j`.
    pub scores: Vec<Vec<f64>>,
    /// Median final action of spec `i` against spec `j`.
    pub actions: Vec<Vec<f64>>,
    /// Scores min-max scaled within each column: best 1, worst 0.
    pub normalized: Vec<Vec<f64>>,
    /// Row means of `normalized`.
    pub averages: Vec<f64>,
    pub pairings: Vec<Pairing>,
}

/// Per-column min-max scaling; a column without spread maps to 1.
pub fn minimax_normalize(scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = scores.len();
    let m = scores.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; m]; n];
    for j in 0..m {
        let col: Vec<f64> = scores.iter().map(|r| r[j]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            out[i][j] = if hi > lo { (scores[i][j] - lo) / (hi - lo) } else { 1.0 };
        }
    }
    out
}

pub fn run_tournament(cfg: &ExperimentConfig) -> Result<TournamentReport> {
    let game = cfg
        .game
        .as_ref()
        .ok_or_else(|| Gr2Error::Config("tournament needs a [game]".into()))?;
    let hash = cfg.hash();
    let n_agents = game.n_agents();
    let labels: Vec<String> = cfg.agents.iter().map(AgentSpec::label).collect();
    let k = cfg.agents.len();
    let mut scores = vec![vec![f64::NAN; k]; k];
    let mut actions = vec![vec![f64::NAN; k]; k];
    let mut pairings = Vec::new();
    let all: Vec<usize> = (0..n_agents).collect();
    for i in 0..k {
        for j in 0..k {
            let mut specs = vec![cfg.agents[j]; n_agents];
            specs[0] = cfg.agents[i];
            let scored: &[usize] = if i == j { &all } else { &[0] };
            let dir = cfg.out.join(format!("{i}_{}_vs_{j}_{}", labels[i], labels[j]));
            let report = train_seeds(game, &specs, &cfg.trainer, &cfg.seeds, &hash, &dir, Some(scored))?;
            check_failures(&report, cfg.seeds.len())?;
            scores[i][j] = report.median_final_reward;
            actions[i][j] = report.median_final_action;
            pairings.push(Pairing { row: i, col: j, report });
        }
    }
    let normalized = minimax_normalize(&scores);
    let averages = normalized.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect::<Vec<_>>();

    let header: Vec<&str> = std::iter::once("spec").chain(labels.iter().map(String::as_str)).collect();
    let matrix_rows = |m: &[Vec<f64>], extra: Option<&[f64]>| -> Vec<Vec<String>> {
        m.iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = vec![labels[i].clone()];
                row.extend(r.iter().map(f64::to_string));
                if let Some(e) = extra {
                    row.push(e[i].to_string());
                }
                row
            })
            .collect()
    };
    ensure_dir(&cfg.out)?;
    write_csv(&cfg.out.join("tournament_scores.csv"), &header, matrix_rows(&scores, None))?;
    write_csv(&cfg.out.join("tournament_actions.csv"), &header, matrix_rows(&actions, None))?;
    let mut norm_header = header.clone();
    norm_header.push("average");
    write_csv(
        &cfg.out.join("tournament_normalized.csv"),
        &norm_header,
        matrix_rows(&normalized, Some(&averages)),
    )?;

    let mut text = format!("job: tournament\nconfig_hash: {hash}\ngame: {}\n", game_label(game));
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(text, "{l}: normalized average {}", averages[i]);
    }
    write_text(&cfg.out.join("summary.txt"), &text)?;
    Ok(TournamentReport {
        config_hash: hash,
        labels,
        scores,
        actions,
        normalized,
        averages,
        pairings,
    })
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckItem {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub items: Vec<CheckItem>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> Vec<&CheckItem> {
        self.items.iter().filter(|i| i.status == CheckStatus::Fail).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for i in &self.items {
            let tag = match i.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Warn => "WARN",
                CheckStatus::Fail => "FAIL",
            };
            let _ = writeln!(s, "{tag} {}: {}", i.name, i.detail);
        }
        let _ = writeln!(
            s,
            "{} checks, {} failed",
            self.items.len(),
            self.failures().len()
        );
        s
    }
}

fn item(name: &str, ok: bool, detail: String) -> CheckItem {
    CheckItem {
        name: name.into(),
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        detail,
    }
}

fn check_battery(cfg: &ExperimentConfig) -> Result<CheckItem> {
    let s = &cfg.verify;
    if s.k_max == 0 || s.battery == 0 {
        return Ok(CheckItem {
            name: "nash_persistence_battery".into(),
            status: CheckStatus::Warn,
            detail: "empty battery; passes vacuously".into(),
        });
    }
    let games = random_pure_nash_games(s.battery, s.battery_seed);
    let cases = nash_persistence_battery(&games, s.k_max, TieRule::LowestIndex)?;
    let reached = cases.iter().filter(|c| c.report.first_nash_level.is_some()).count();
    let held = cases
        .iter()
        .filter(|c| c.report.first_nash_level.is_some() && c.report.holds)
        .count();
    Ok(item(
        "nash_persistence_battery",
        held == reached && cases.iter().all(|c| c.report.holds),
        format!("{held}/{reached} games reaching a pure Nash keep it at every higher level ({} games)", cases.len()),
    ))
}

/// Random coefficients with an interior mixed center.
pub fn random_mixed_coefficients<R: Rng + ?Sized>(rng: &mut R) -> Coefficients {
    loop {
        let ur = rng.gen_range(-5.0..5.0);
        let uc = rng.gen_range(-5.0..5.0);
        if ur * uc >= -1e-3 {
            continue;
        }
        let br = -ur * rng.gen_range(0.05..0.95);
        let bc = -uc * rng.gen_range(0.05..0.95);
        return Coefficients::new(ur, br, uc, bc);
    }
}

/// Closed-form against chain-rule `dF/dt` over random samples; returns the
/// worst relative error. `flip_sign` corrupts the closed form.
pub fn lyapunov_agreement(samples: usize, seed: u64, flip_sign: bool) -> Result<f64> {
    let mut rng = seeded_stream(seed, 11);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let c = random_mixed_coefficients(&mut rng);
        let p = MixedStrategyPair::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))?;
        let zeta = rng.gen_range(1e-3..0.5);
        for level in 0..=3 {
            let mut closed = lyapunov_derivative_closed_form(&c, zeta, p, level)?;
            if flip_sign {
                closed = -closed;
            }
            let (numeric, magnitude) = lyapunov_derivative_terms(&c, zeta, p, level)?;
            worst = worst.max((closed - numeric).abs() / magnitude.max(1e-300));
        }
    }
    Ok(worst)
}

fn random_batch(seed: u64, n: usize) -> Vec<Experience> {
    let mut rng = seeded_stream(seed, 21);
    (0..n)
        .map(|i| Experience {
            own: rng.gen_range(-0.9..0.9),
            opp: rng.gen_range(-0.9..0.9),
            reward: rng.gen_range(-1.0..0.0),
            terminal: i % 4 == 3,
        })
        .collect()
}

/// Finite-difference checks of every loss on randomly initialized bundles.
/// Returns `(label, loss, worst relative error)` per check.
pub fn gradient_checks(seed: u64) -> Result<Vec<(String, &'static str, f64)>> {
    let cfg = TrainerConfig::default();
    let specs = [
        AgentSpec::indep(),
        AgentSpec::gr2l(1),
        AgentSpec::gr2l(2),
        AgentSpec::gr2l(3),
        AgentSpec::gr2m(2, 1.5),
        AgentSpec::gr2m(3, 1.5),
    ];
    let mut out = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let s = seed.wrapping_add(i as u64);
        let mut agent = AgentBundle::new(*spec, &cfg, seeded_stream(s, 1))?;
        let mut rng = seeded_stream(s, 22);
        let mut w = agent.omega.flat();
        w.iter_mut().for_each(|x| *x += rng.gen_range(-0.05..0.05));
        agent.omega_bar.set_flat(&w);
        let batch = random_batch(s, 5);
        let noise = LossNoise::sample(&mut rng, batch.len(), cfg.opponent_samples);
        for c in check_gradients(&agent, &batch, &noise, &cfg, 0.3, 1e-5, 1e-4)? {
            out.push((spec.label(), c.loss, c.max_rel_error));
        }
    }
    Ok(out)
}

/// Trains the categorical opponent model on a frozen random joint-Q and
/// returns the step at which its KL first drops to `tol`.
pub fn posterior_fit_steps(seed: u64, grid: usize, max_steps: usize, tol: f64) -> Result<Option<usize>> {
    let mut rng = seeded_stream(seed, 31);
    let q: Vec<Vec<f64>> = (0..grid)
        .map(|_| (0..grid).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let mut model = CategoricalOpponentModel::new(grid, grid, &[10, 10], 1e-2, &mut rng);
    for step in 0..max_steps {
        model.train_step(&q)?;
        if model.max_kl(&q)? <= tol {
            return Ok(Some(step + 1));
        }
    }
    Ok(None)
}

fn check_oracles(samples: usize, seed: u64) -> Result<Vec<CheckItem>> {
    let mut rng = seeded_stream(seed, 41);
    let mut worst: f64 = 0.0;
    let s = StateToken::default();
    for _ in 0..samples {
        let n = rng.gen_range(1..9);
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let q = JointQView::from_table(vec![0.0], (0..n).map(|i| i as f64).collect(), s, row.clone())?;
        let post = opponent_posterior(&q, s, 0)?;
        let lse = marginal_q_logsumexp(&q, s, 0)?;
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        for (i, p) in post.iter().enumerate() {
            worst = worst.max((p - (row[i] - lse).exp()).abs());
            worst = worst.max((p - row[i].exp() / z).abs());
        }
    }
    let mut items = vec![item(
        "opponent_posterior_oracle",
        worst <= 1e-9,
        format!("max deviation {worst:.3e} over {samples} random rows"),
    )];

    let w = poisson_weights(1.5, 2)?;
    let expect = [0.275862, 0.413793, 0.310345];
    let dev = w.iter().zip(expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut ratio: f64 = 0.0;
    for lambda in [0.5, 1.5, 5.0] {
        for k in 1..=6 {
            let w = poisson_weights(lambda, k)?;
            for m in 1..=k {
                ratio = ratio.max((w[m] / w[m - 1] - lambda / m as f64).abs());
            }
        }
    }
    items.push(item(
        "poisson_mixture",
        dev <= 1e-6 && ratio <= 1e-12,
        format!("weights(1.5, 2) off by {dev:.2e}; ratio identity off by {ratio:.2e}"),
    ));
    Ok(items)
}

pub fn run_verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    let s = &cfg.verify;
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let fault = s.inject_fault.as_deref();
    if let Some(f) = fault {
        if f != "lyapunov_sign" {
            return Err(Gr2Error::Config(format!("unknown inject_fault {f:?}")));
        }
    }
    let mut items = vec![check_battery(cfg)?];

    let worst = lyapunov_agreement(s.lyapunov_samples, seed, fault == Some("lyapunov_sign"))?;
    items.push(item(
        "lyapunov_closed_form",
        worst <= 1e-9,
        format!("worst relative error {worst:.3e} over {} samples, levels 0-3", s.lyapunov_samples),
    ));

    let grads = gradient_checks(seed)?;
    let bad: Vec<String> = grads
        .iter()
        .filter(|g| g.2 > 1e-4)
        .map(|g| format!("{}/{} {:.2e}", g.0, g.1, g.2))
        .collect();
    let worst = grads.iter().map(|g| g.2).fold(0.0, f64::max);
    items.push(item(
        "loss_gradients",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} loss checks, worst relative error {worst:.2e}", grads.len())
        } else {
            format!("failing: {}", bad.join(", "))
        },
    ));

    items.extend(check_oracles(s.oracle_samples, seed)?);
    let fit = posterior_fit_steps(seed, 5, 2000, 1e-3)?;
    items.push(item(
        "opponent_model_fit",
        fit.is_some(),
        match fit {
            Some(n) => format!("KL <= 1e-3 after {n} steps"),
            None => "KL above 1e-3 after 2000 steps".into(),
        },
    ));

    let report = VerifyReport { items };
    ensure_dir(&cfg.out)?;
    let text = format!("job: verify\nconfig_hash: {}\n{}", cfg.hash(), report.render());
    write_text(&cfg.out.join("verify_report.txt"), &text)?;
    Ok(report)
}
