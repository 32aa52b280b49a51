//! Experiment configuration files (TOML) and their canonical hash.

use std::fs;
use std::path::{Path, PathBuf};

use gr2_core::games::{BeautyContestEnv, NormalFormGame, Player, RewardScheme};
use gr2_core::learning::{AgentSpec, Method, TrainEnv, TrainerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Gr2Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Dynamics,
    Train,
    Tournament,
    Verify,
}

impl JobKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JobKind::Dynamics => "dynamics",
            JobKind::Train => "train",
            JobKind::Tournament => "tournament",
            JobKind::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    #[default]
    Abs,
    Square,
}

impl From<SchemeName> for RewardScheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Abs => RewardScheme::AbsoluteDifference,
            SchemeName::Square => RewardScheme::SquaredAbsoluteDifference,
        }
    }
}

/// A game definition, inline or in its own file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GameDef {
    Matrix {
        row_payoffs: Vec<Vec<f64>>,
        col_payoffs: Vec<Vec<f64>>,
    },
    Beauty {
        n: usize,
        p: f64,
        #[serde(default)]
        reward_scheme: SchemeName,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GameSpec {
    /// `"rotational"` or `"stag_hunt"`.
    Named(String),
    File { file: PathBuf },
    Inline(GameDef),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub method: Method,
    #[serde(default)]
    pub level: usize,
    pub lambda: Option<f64>,
}

impl AgentEntry {
    fn to_spec(self) -> Result<AgentSpec> {
        let spec = AgentSpec {
            method: self.method,
            level: self.level,
            lambda: self.lambda,
        };
        spec.validate().map_err(|e| Gr2Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSettings {
    pub zeta: f64,
    pub dt: f64,
    pub horizon: f64,
    pub epsilon: f64,
    pub levels: Vec<usize>,
    pub starts: Vec<[f64; 2]>,
    /// Write every `stride`-th integration point.
    pub stride: usize,
}

impl Default for DynamicsSettings {
    fn default() -> Self {
        Self {
            zeta: 0.1,
            dt: 1e-3,
            horizon: 50.0,
            epsilon: 1e-3,
            levels: vec![0, 1, 2, 3],
            starts: vec![[0.8, 0.5], [0.5, 0.9], [0.2, 0.2], [0.65, 0.3], [0.5, 0.5]],
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    pub k_max: usize,
    pub battery: usize,
    pub battery_seed: u64,
    pub lyapunov_samples: usize,
    pub oracle_samples: usize,
    /// Deliberately broken check, for exercising the failure path.
    pub inject_fault: Option<String>,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            k_max: 8,
            battery: 200,
            battery_seed: 0,
            lyapunov_samples: 1000,
            oracle_samples: 200,
            inject_fault: None,
        }
    }
}

/// The file as written.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub job: Option<JobKind>,
    pub game: Option<GameSpec>,
    #[serde(default)]
    pub agents: Vec<AgentEntry>,
    #[serde(default)]
    pub trainer: toml::Table,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dynamics: DynamicsSettings,
    #[serde(default)]
    pub verify: VerifySettings,
}

/// The game after resolving names and files.
#[derive(Debug, Clone, PartialEq)]
pub enum Game {
    Matrix(NormalFormGame),
    Beauty(BeautyContestEnv),
}

impl Game {
    pub fn train_env(&self) -> TrainEnv {
        match self {
            Game::Matrix(g) => TrainEnv::Matrix(g.clone()),
            Game::Beauty(e) => TrainEnv::Beauty(e.clone()),
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            Game::Matrix(_) => 2,
            Game::Beauty(e) => e.n(),
        }
    }

    fn canonical(&self) -> serde_json::Value {
        match self {
            Game::Matrix(g) => {
                let (r, c) = g.action_counts();
                serde_json::json!({
                    "type": "matrix",
                    "rows": r,
                    "cols": c,
                    "row_payoffs": g.payoffs(Player::Row),
                    "col_payoffs": g.payoffs(Player::Col),
                })
            }
            Game::Beauty(e) => serde_json::json!({
                "type": "beauty",
                "n": e.n(),
                "p": e.p(),
                "bounds": [e.bounds().0, e.bounds().1],
                "reward_scheme": format!("{:?}", e.reward_scheme()),
            }),
        }
    }
}

fn game_from_def(def: &GameDef) -> Result<Game> {
    let cfg = |e: gr2_core::Error| Gr2Error::Config(e.to_string());
    match def {
        GameDef::Matrix {
            row_payoffs,
            col_payoffs,
        } => Ok(Game::Matrix(NormalFormGame::new(row_payoffs, col_payoffs).map_err(cfg)?)),
        GameDef::Beauty { n, p, reward_scheme } => Ok(Game::Beauty(
            BeautyContestEnv::new(*n, *p, (*reward_scheme).into()).map_err(cfg)?,
        )),
    }
}

pub fn builtin_game(name: &str) -> Option<NormalFormGame> {
    match name {
        "rotational" => Some(NormalFormGame::rotational()),
        "stag_hunt" => Some(NormalFormGame::stag_hunt()),
        _ => None,
    }
}

fn resolve_game(spec: &GameSpec, base_dir: &Path) -> Result<Game> {
    match spec {
        GameSpec::Named(name) => builtin_game(name)
            .map(Game::Matrix)
            .ok_or_else(|| Gr2Error::Config(format!("unknown built-in game {name:?}"))),
        GameSpec::File { file } => {
            let path = base_dir.join(file);
            let text = fs::read_to_string(&path).map_err(|e| Gr2Error::io(&path, e))?;
            let def: GameDef =
                toml::from_str(&text).map_err(|e| Gr2Error::Config(format!("{}: {e}", path.display())))?;
            game_from_def(&def)
        }
        GameSpec::Inline(def) => game_from_def(def),
    }
}

/// Trainer defaults for a game: 400 x 10 for the Beauty Contest, 200 x 25 for matrix games.
pub fn trainer_defaults(game: &Game) -> TrainerConfig {
    match game {
        Game::Beauty(_) => TrainerConfig::default(),
        Game::Matrix(_) => TrainerConfig {
            iterations: 200,
            steps_per_iteration: 25,
            ..TrainerConfig::default()
        },
    }
}

fn merge_trainer(base: TrainerConfig, overrides: &toml::Table) -> Result<TrainerConfig> {
    let mut value = serde_json::to_value(&base).expect("trainer config serializes");
    let obj = value.as_object_mut().expect("trainer config is a map");
    for (k, v) in overrides {
        let v = serde_json::to_value(v).map_err(|e| Gr2Error::Config(format!("trainer.{k}: {e}")))?;
        obj.insert(k.clone(), v);
    }
    let cfg: TrainerConfig =
        serde_json::from_value(value).map_err(|e| Gr2Error::Config(format!("[trainer]: {e}")))?;
    cfg.validate().map_err(|e| Gr2Error::Config(e.to_string()))?;
    Ok(cfg)
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub job: JobKind,
    pub game: Option<Game>,
    pub agents: Vec<AgentSpec>,
    pub trainer: TrainerConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub dynamics: DynamicsSettings,
    pub verify: VerifySettings,
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig, job: JobKind, base_dir: &Path) -> Result<Self> {
        if let Some(j) = raw.job {
            if j != job {
                return Err(Gr2Error::Config(format!(
                    "config is for job {:?} but {:?} was requested",
                    j.as_str(),
                    job.as_str()
                )));
            }
        }
        let game = raw.game.as_ref().map(|g| resolve_game(g, base_dir)).transpose()?;
        let agents = raw.agents.iter().map(|a| a.to_spec()).collect::<Result<Vec<_>>>()?;
        let trainer = match &game {
            Some(g) => merge_trainer(trainer_defaults(g), &raw.trainer)?,
            None => merge_trainer(TrainerConfig::default(), &raw.trainer)?,
        };
        let seeds = raw.seeds.unwrap_or_else(|| (0..6).collect());
        let cfg = Self {
            job,
            game,
            agents,
            trainer,
            seeds,
            out: raw.out.unwrap_or_else(|| PathBuf::from("runs").join(job.as_str())),
            dynamics: raw.dynamics,
            verify: raw.verify,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, job: JobKind, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Gr2Error::Config(e.to_string()))?;
        Self::from_raw(raw, job, base_dir)
    }

    pub fn load(path: &Path, job: JobKind) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Gr2Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, job, base)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Gr2Error::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        match self.job {
            JobKind::Dynamics => match &self.game {
                Some(Game::Matrix(g)) if g.is_2x2() => {}
                _ => return bad("dynamics needs a 2x2 matrix game".into()),
            },
            JobKind::Train | JobKind::Tournament => {
                let Some(game) = &self.game else {
                    return bad(format!("{} needs a [game]", self.job.as_str()));
                };
                if let Game::Matrix(g) = game {
                    if !g.is_2x2() {
                        return bad("training on matrix games needs a 2x2 game".into());
                    }
                }
                let n = game.n_agents();
                if self.job == JobKind::Train && self.agents.len() != 1 && self.agents.len() != n {
                    return bad(format!("train needs 1 or {n} agent specs, got {}", self.agents.len()));
                }
                if self.job == JobKind::Tournament && self.agents.len() < 2 && self.agents.len() != 1 {
                    return bad("tournament needs agent specs".into());
                }
                if self.agents.is_empty() {
                    return bad("at least one [[agents]] entry is required".into());
                }
            }
            JobKind::Verify => {}
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every semantic field (seeds and the
    /// output directory excluded).
    pub fn hash(&self) -> String {
        let agents: Vec<_> = self
            .agents
            .iter()
            .map(|a| serde_json::json!({"method": a.method.as_str(), "level": a.level, "lambda": a.lambda}))
            .collect();
        let mut doc = serde_json::json!({
            "job": self.job.as_str(),
            "game": self.game.as_ref().map(Game::canonical),
            "agents": agents,
        });
        let obj = doc.as_object_mut().expect("map");
        match self.job {
            JobKind::Train | JobKind::Tournament => {
                obj.insert("trainer".into(), serde_json::to_value(&self.trainer).expect("serializable"));
            }
            JobKind::Dynamics => {
                obj.insert("dynamics".into(), serde_json::to_value(&self.dynamics).expect("serializable"));
            }
            JobKind::Verify => {
                obj.insert("verify".into(), serde_json::to_value(&self.verify).expect("serializable"));
            }
        }
        // serde_json maps are ordered by key, so this string is canonical
        let text = serde_json::to_string(&doc).expect("serializable");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| Gr2Error::Config(format!("bad seed {t:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BEAUTY: &str = r#"
        [game]
        type = "beauty"
        n = 2
        p = 0.7

        [[agents]]
        method = "gr2l"
        level = 2

        [trainer]
        lr_q = 5e-4
    "#;

    fn parse(text: &str, job: JobKind) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, job, Path::new("."))
    }

    #[test]
    fn defaults_and_overrides() {
        let c = parse(BEAUTY, JobKind::Train).unwrap();
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(c.trainer.lr_q, 5e-4);
        assert_eq!(c.trainer.lr_pi, 1e-4);
        assert_eq!(c.trainer.iterations, 400);
        let m = parse("game = \"stag_hunt\"\n[[agents]]\nmethod = \"indep\"\n", JobKind::Train).unwrap();
        assert_eq!((m.trainer.iterations, m.trainer.steps_per_iteration), (200, 25));
    }

    #[test]
    fn hash_ignores_layout_seeds_and_output() {
        let a = parse(BEAUTY, JobKind::Train).unwrap();
        let reflowed = format!("seeds = [3]\nout = \"elsewhere\"\n{}", BEAUTY.replace("    ", "").replace(" = ", "="));
        let b = parse(&reflowed, JobKind::Train).unwrap();
        assert_eq!(a.hash(), b.hash());
        // spelling out a default is not a semantic change
        let c = parse(&format!("{BEAUTY}\nlr_pi = 1e-4\n"), JobKind::Train).unwrap();
        assert_eq!(a.hash(), c.hash());
        let d = parse(&BEAUTY.replace("p = 0.7", "p = 0.75"), JobKind::Train).unwrap();
        assert_ne!(a.hash(), d.hash());
        let e = parse(&format!("{BEAUTY}\ngamma = 0.9\n"), JobKind::Train).unwrap();
        assert_ne!(a.hash(), e.hash());
    }

    #[test]
    fn named_and_inline_games_agree() {
        let named = parse("game = \"rotational\"", JobKind::Dynamics).unwrap();
        let inline = parse(
            "[game]\ntype = \"matrix\"\nrow_payoffs = [[0, 3], [1, 2]]\ncol_payoffs = [[3, 2], [0, 1]]\n",
            JobKind::Dynamics,
        )
        .unwrap();
        assert_eq!(named.game, inline.game);
        assert_eq!(named.hash(), inline.hash());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(parse("[game]\ntype = \"beauty\"\nn = 1\np = 0.7", JobKind::Train), Err(Gr2Error::Config(_))));
        assert!(matches!(parse(&format!("{BEAUTY}\nlr_qq = 1.0\n"), JobKind::Train), Err(Gr2Error::Config(_))));
        assert!(matches!(parse(&format!("seeds = []\n{BEAUTY}"), JobKind::Train), Err(Gr2Error::Config(_))));
        assert!(matches!(
            parse("game = \"stag_hunt\"\n[[agents]]\nmethod = \"gr2m\"\nlevel = 2\n", JobKind::Train),
            Err(Gr2Error::Config(_))
        ));
        assert!(matches!(parse("job = \"verify\"", JobKind::Train), Err(Gr2Error::Config(_))));
        assert!(matches!(parse(BEAUTY, JobKind::Dynamics), Err(Gr2Error::Config(_))));
        assert_eq!(parse_seeds("1, 2,5").unwrap(), vec![1, 2, 5]);
        assert!(parse_seeds("x").is_err());
    }
}
