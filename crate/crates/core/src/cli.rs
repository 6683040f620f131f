//! The `btai` command line: `episode`, `benchmark` and `oracle`.
//!
//! Each subcommand reads a [`Config`] and writes a CSV to `run.out`, or to
//! standard output when no path is given. Floats are written with 17
//! significant digits so that runs can be compared byte for byte.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baseline::{benchmark_model, timing_sweep, TimingOptions, TimingRow};
use crate::config::Config;
use crate::distributions::CategoricalParams;
use crate::env::{Environment, MazeSpec, PomdpEnv};
use crate::error::{Error, Result};
use crate::model::{ModelParams, PriorConcentrations, TargetDist, OBS, STATE};
use crate::oracle::{run_oracle_suite, CheckResult, OracleSizes};
use crate::planner::{act_perceive_loop, EpisodeTrace};
use crate::tensor::Tensor;

#[derive(Debug, Parser)]
#[command(name = "btai", version, about = "Tree-search active inference agent and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and write its trace.
    Episode(RunArgs),
    /// Time the exhaustive baseline against the tree search.
    Benchmark(RunArgs),
    /// Run the cross-checks and exit non-zero on any failure.
    Oracle(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "planner.cost", value_parser = ["classic", "feef", "pcost"])]
    pub planner_cost: Option<String>,
    #[arg(long = "planner.propagation", value_parser = ["forward", "backward", "min_backward"])]
    pub planner_propagation: Option<String>,
    #[arg(long = "planner.expansions")]
    pub planner_expansions: Option<usize>,
    #[arg(long = "planner.cp")]
    pub planner_cp: Option<f64>,
    #[arg(long = "inference.mode", value_parser = ["local", "global"])]
    pub inference_mode: Option<String>,
    /// Any other key, as `section.key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    /// The config file with every override applied.
    pub fn config(&self) -> Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::parse("", &std::env::current_dir()?)?,
        };
        for item in &self.set {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`--set {item}` needs KEY=VALUE")))?;
            config.set(key.trim(), value.trim())?;
        }
        let quoted = |s: &str| toml::Value::String(s.to_owned()).to_string();
        // flag paths are relative to the working directory, not the config
        let out = self.out.as_deref().map(std::path::absolute).transpose()?;
        let overrides = [
            ("run.seed", self.seed.map(|s| s.to_string())),
            ("run.out", out.map(|p| quoted(&p.display().to_string()))),
            ("planner.cost", self.planner_cost.as_deref().map(quoted)),
            ("planner.propagation", self.planner_propagation.as_deref().map(quoted)),
            ("planner.expansions", self.planner_expansions.map(|k| k.to_string())),
            ("planner.cp", self.planner_cp.map(|c| format!("{c:?}"))),
            ("inference.mode", self.inference_mode.as_deref().map(quoted)),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                config.set(key, &value)?;
            }
        }
        Ok(config)
    }
}

/// Runs a parsed command line. Returns `Ok(false)` when the command ran but
/// reported a failure (an oracle check).
pub fn execute(cli: &Cli, stderr: &mut dyn Write) -> Result<bool> {
    match &cli.command {
        Command::Episode(args) => {
            let config = args.config()?;
            let (trace, summary) = run_episode(&config)?;
            with_output(&config, |w| write_episode_csv(w, &trace, wall_time(&config)?))?;
            if let Some(path) = config.path("output.vfe_trace")? {
                write_vfe_csv(File::create(path)?, &trace)?;
            }
            writeln!(stderr, "{summary}")?;
            Ok(true)
        }
        Command::Benchmark(args) => {
            let config = args.config()?;
            let rows = run_benchmark(&config)?;
            with_output(&config, |w| write_timing_csv(w, &rows))?;
            Ok(true)
        }
        Command::Oracle(args) => {
            let config = args.config()?;
            let checks = run_oracles(&config)?;
            with_output(&config, |w| write_oracle_csv(w, &checks))?;
            for c in &checks {
                let verdict = if c.passed() { "PASS" } else { "FAIL" };
                writeln!(
                    stderr,
                    "{verdict} {} ({} cases, max error {:e}, tolerance {:e})",
                    c.name, c.cases, c.max_error, c.tolerance
                )?;
            }
            Ok(checks.iter().all(CheckResult::passed))
        }
    }
}

fn wall_time(config: &Config) -> Result<bool> {
    config.bool("output.wall_time", true)
}

fn with_output(config: &Config, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match config.path("run.out")? {
        Some(path) => {
            let mut file = io::BufWriter::new(File::create(path)?);
            write(&mut file)?;
            file.flush()?;
        }
        None => write(&mut io::stdout().lock())?,
    }
    Ok(())
}

/// `{:.16e}`: 17 significant digits, enough to round-trip an `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidValue(format!("csv: {other:?}")),
    }
}

fn write_rows<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub const EPISODE_COLUMNS: [&str; 6] = [
    "step",
    "observation",
    "action",
    "selected_gbar",
    "planning_iterations",
    "wall_time_ms",
];

pub fn write_episode_csv(out: &mut dyn Write, trace: &EpisodeTrace, wall_time: bool) -> Result<()> {
    write_rows(
        out,
        &EPISODE_COLUMNS,
        trace.steps.iter().map(|s| {
            vec![
                s.step.to_string(),
                s.observation.to_string(),
                s.action.to_string(),
                format_float(s.selected_gbar),
                s.planning_iterations.to_string(),
                format_float(if wall_time { s.wall_time_ms } else { 0.0 }),
            ]
        }),
    )
}

pub fn write_vfe_csv(out: impl Write, trace: &EpisodeTrace) -> Result<()> {
    write_rows(
        out,
        &["step", "sweep_index", "vfe"],
        trace.steps.iter().flat_map(|s| {
            s.vfe
                .iter()
                .enumerate()
                .map(|(i, f)| vec![s.step.to_string(), i.to_string(), format_float(*f)])
        }),
    )
}

pub const TIMING_COLUMNS: [&str; 5] = [
    "planner",
    "horizon",
    "policies_or_expansions",
    "wall_time_ms",
    "censored",
];

pub fn write_timing_csv(out: &mut dyn Write, rows: &[TimingRow]) -> Result<()> {
    write_rows(
        out,
        &TIMING_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.planner.name().to_owned(),
                r.horizon.to_string(),
                r.policies_or_expansions.to_string(),
                format_float(r.wall_time_ms),
                r.censored.to_string(),
            ]
        }),
    )
}

pub fn write_oracle_csv(out: &mut dyn Write, checks: &[CheckResult]) -> Result<()> {
    write_rows(
        out,
        &["check", "cases", "max_error", "tolerance", "passed"],
        checks.iter().map(|c| {
            vec![
                c.name.to_owned(),
                c.cases.to_string(),
                format_float(c.max_error),
                format_float(c.tolerance),
                c.passed().to_string(),
            ]
        }),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub steps_to_goal: Option<usize>,
    pub total_cost: f64,
    pub mean_planning_ms: f64,
}

impl std::fmt::Display for EpisodeSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.steps_to_goal {
            Some(n) => write!(f, "steps_to_goal={n}")?,
            None => write!(f, "steps_to_goal=none")?,
        }
        write!(
            f,
            " total_cost={} mean_planning_ms={:.3}",
            format_float(self.total_cost),
            self.mean_planning_ms
        )
    }
}

fn read_model(path: &std::path::Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    ModelParams::from_text(&text)
}

fn target_from(config: &Config, default: TargetDist) -> Result<TargetDist> {
    let obs = match config.f64_list("target.obs")? {
        Some(v) => CategoricalParams::from_vec(OBS, v)?,
        None => default.obs,
    };
    let states = match config.f64_list("target.states")? {
        Some(v) => CategoricalParams::from_vec(STATE, v)?,
        None => default.states,
    };
    TargetDist::new(obs, states)
}

/// The environment, the agent's model and the target described by the
/// `env`, `agent` and `target` sections.
pub fn build_episode(config: &Config) -> Result<(Box<dyn Environment>, ModelParams, TargetDist)> {
    let seed = config.seed()?;
    let (env, truth, target): (Box<dyn Environment>, ModelParams, TargetDist) =
        if let Some(path) = config.path("env.maze")? {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let maze = MazeSpec::parse(&text)?
                .with_obs_noise(config.f64("env.obs_noise", 0.0)?)?
                .with_actions(config.usize("env.actions", 5)?)?;
            (
                Box::new(maze.environment(seed)?),
                maze.to_model()?,
                maze.goal_target()?,
            )
        } else if let Some(path) = config.path("env.model")? {
            let model = read_model(&path)?;
            let mut env = PomdpEnv::new(&model, seed)?;
            if let Some(s) = config.opt_usize("env.terminal_state")? {
                env = env.with_terminal_state(s)?;
            }
            let target = TargetDist::uniform(model.spec())?;
            (Box::new(env), model, target)
        } else {
            return Err(Error::Config("set `env.maze` or `env.model`".into()));
        };
    let agent = if let Some(path) = config.path("agent.model")? {
        read_model(&path)?
    } else if config.bool("agent.learn", false)? {
        let spec = truth.spec();
        let c = config.f64("agent.prior_concentration", 1.0)?;
        ModelParams::new(
            spec,
            PriorConcentrations {
                a: Some(Tensor::filled(spec.a_axes(), c)?),
                b: Some(Tensor::filled(spec.b_axes(), c)?),
                d: Some(Tensor::filled(spec.d_axes(), c)?),
            },
        )?
    } else {
        truth
    };
    Ok((env, agent, target_from(config, target)?))
}

pub fn run_episode(config: &Config) -> Result<(EpisodeTrace, EpisodeSummary)> {
    let (mut env, model, target) = build_episode(config)?;
    let planner = config.planner()?;
    let horizon = config.usize("run.horizon", 20)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed()?);
    // keep the agent's draws apart from the environment's
    rng.set_stream(1);
    let trace = act_perceive_loop(env.as_mut(), &model, &target, &planner, horizon, &mut rng)?;
    let n = trace.steps.len();
    let summary = EpisodeSummary {
        steps_to_goal: trace.terminated.then_some(n),
        total_cost: trace.steps.iter().map(|s| s.selected_gbar).sum(),
        mean_planning_ms: if n == 0 {
            0.0
        } else {
            trace.steps.iter().map(|s| s.wall_time_ms).sum::<f64>() / n as f64
        },
    };
    Ok((trace, summary))
}

pub fn run_benchmark(config: &Config) -> Result<Vec<TimingRow>> {
    let seed = config.seed()?;
    let model = match config.path("benchmark.model")? {
        Some(path) => read_model(&path)?,
        None => benchmark_model(seed)?,
    };
    let target = target_from(config, TargetDist::uniform(model.spec())?)?;
    let horizons = config.usize_list("benchmark.horizons", &[4, 5, 6, 7, 8, 9])?;
    let options = TimingOptions {
        timeout_ms: config.f64("benchmark.timeout_ms", 60_000.0)?,
        min_sample_ms: config.f64("benchmark.min_sample_ms", 50.0)?,
        seed,
        measure: wall_time(config)?,
    };
    timing_sweep(&model, &target, &horizons, &config.planner()?, &options)
}

pub fn run_oracles(config: &Config) -> Result<Vec<CheckResult>> {
    let d = OracleSizes::default();
    let sizes = OracleSizes {
        models: config.usize("oracle.models", d.models)?,
        trees: config.usize("oracle.trees", d.trees)?,
        nodes: config.usize("oracle.nodes", d.nodes)?,
    };
    run_oracle_suite(sizes, config.seed()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2e9, -1.5e-300, 0.0] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_float(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "btai",
            "episode",
            "--seed",
            "7",
            "--planner.cost",
            "classic",
            "--planner.cp",
            "0.5",
            "--set",
            "planner.gamma=3",
            "--inference.mode",
            "global",
        ])
        .unwrap();
        let Command::Episode(args) = &cli.command else {
            panic!("wrong subcommand")
        };
        let config = args.config().unwrap();
        assert_eq!(config.seed().unwrap(), 7);
        let p = config.planner().unwrap();
        assert_eq!(p.cost, crate::planner::CostKind::Classic);
        assert_eq!((p.exploration, p.gamma), (0.5, 3.0));
        assert_eq!(p.inference.mode, crate::inference::InferenceMode::Global);
    }

    #[test]
    fn invalid_flag_values_are_rejected() {
        assert!(Cli::try_parse_from(["btai", "episode", "--planner.cost", "cheap"]).is_err());
        assert!(Cli::try_parse_from(["btai", "episode", "--planner.expansions", "-1"]).is_err());
        let cli = Cli::try_parse_from(["btai", "episode", "--set", "nonsense"]).unwrap();
        let Command::Episode(args) = &cli.command else {
            panic!("wrong subcommand")
        };
        assert!(args.config().is_err());
    }

    #[test]
    fn episode_needs_an_environment() {
        let config = Config::parse("", std::path::Path::new(".")).unwrap();
        assert!(matches!(run_episode(&config), Err(Error::Config(_))));
    }
}
