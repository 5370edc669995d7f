//! `cascade`: reference tables, sweeps, simulation and estimation.

mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use cascade_core::belief::{fmt_full, parse_actions};
use cascade_core::cascade::{grid, hazard_series};
use cascade_core::gmm::synthetic_dataset;
use cascade_core::par::stream_rng;
use cascade_core::reproduce::{
    figure1, hazard_csv, table1, table1_csv, worked_example, worked_example_text,
};
use cascade_core::signal::State;
use cascade_core::{
    down_cascade_condition, evaluate_history, gmm_estimate, is_ihrp, simulate_sequence,
    up_cascade_condition, BeliefState, Error, GmmOptions, History, ProbabilityVariant, QualitySpec,
    SequenceDataset, SignalStructure, Weighting,
};
use clap::{Parser, Subcommand};
use serde_json::json;

use config::{parse_grid, Format, RunConfig, WeightingArg};

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Estimation(String),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Estimation(_) => CliError::Estimation(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Estimation(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Estimation(m) => write!(f, "estimation failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cascade",
    version,
    about = "Social learning with private signal qualities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Lower quality bound of a uniform quality spec.
    #[arg(long, global = true)]
    q_lo: Option<f64>,
    /// Upper quality bound of a uniform quality spec.
    #[arg(long, global = true)]
    q_hi: Option<f64>,
    /// Initial public belief.
    #[arg(long, global = true)]
    mu0: Option<f64>,
    /// Action history such as 0110.
    #[arg(long, global = true)]
    history: Option<String>,
    /// Maximum number of actions in a time-to-cascade run.
    #[arg(long, global = true)]
    cap: Option<usize>,
    /// Grid as start,stop,step.
    #[arg(long, global = true, value_parser = parse_grid)]
    grid: Option<[f64; 3]>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    weighting: Option<WeightingArg>,
    /// JSON quality spec file.
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// JSON config file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Contrary-action probabilities and beliefs after runs of zeros.
    Table1,
    /// Time to an up-cascade across lower quality bounds.
    Figure1,
    /// Hazard ratio of a uniform quality spec over a grid.
    Hazard,
    /// Cascade conditions and hazard monotonicity for a spec.
    CheckCascade,
    /// The exact two-agent belief chain at q_hi = 2/3.
    WorkedExample,
    /// Simulate a sequence, or evaluate --history deterministically.
    Simulate {
        /// Number of agents.
        #[arg(long)]
        length: Option<usize>,
        /// True state, 0 or 1.
        #[arg(long)]
        state: Option<u8>,
    },
    /// Estimate q_hi from a CSV of action sequences.
    Estimate {
        /// Dataset CSV: one sequence of 0/1 tokens per line.
        data: Option<PathBuf>,
        /// Generate this many synthetic sequences at --q-hi instead.
        #[arg(long)]
        synthetic: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (length, state, data, synthetic) = match &cli.command {
        Command::Simulate { length, state } => (*length, *state, None, None),
        Command::Estimate { data, synthetic } => (None, None, data.clone(), *synthetic),
        _ => (None, None, None, None),
    };
    let cfg = base.overlay(RunConfig {
        q_lo: cli.q_lo,
        q_hi: cli.q_hi,
        mu0: cli.mu0,
        history: cli.history.clone(),
        cap: cli.cap,
        grid: cli.grid,
        seed: cli.seed,
        weighting: cli.weighting,
        spec: cli.spec.clone(),
        quality_spec: None,
        out: cli.out.clone(),
        format: cli.format,
        length,
        state,
        data,
        synthetic,
    });
    let text = match cli.command {
        Command::Table1 => cmd_table1(&cfg)?,
        Command::Figure1 => cmd_figure1(&cfg)?,
        Command::Hazard => cmd_hazard(&cfg)?,
        Command::CheckCascade => cmd_check_cascade(&cfg)?,
        Command::WorkedExample => cmd_worked_example(&cfg)?,
        Command::Simulate { .. } => cmd_simulate(&cfg)?,
        Command::Estimate { .. } => cmd_estimate(&cfg)?,
    };
    match &cfg.out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable output");
    s.push('\n');
    s
}

fn grid_of(cfg: &RunConfig, default: [f64; 3]) -> Result<Vec<f64>, CliError> {
    let [a, b, c] = cfg.grid.unwrap_or(default);
    Ok(grid(a, b, c)?)
}

fn cmd_table1(cfg: &RunConfig) -> Result<String, CliError> {
    let weighting = match cfg.weighting.unwrap_or(WeightingArg::Prior) {
        WeightingArg::Prior => Weighting::Fixed(0.5),
        WeightingArg::Posterior => Weighting::Posterior,
    };
    let cells = table1(weighting);
    Ok(match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => table1_csv(&cells),
        Format::Json => to_json(&cells),
    })
}

fn cmd_figure1(cfg: &RunConfig) -> Result<String, CliError> {
    let q_hi = RunConfig::check_probability("q_hi", cfg.q_hi.unwrap_or(0.8))?;
    let g = grid_of(cfg, [0.5, q_hi, 0.001])?;
    let cap = cfg.cap.unwrap_or(100);
    let sweep = figure1(q_hi, &g, cap)?;
    Ok(match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => sweep.to_csv(true),
        Format::Json => to_json(&sweep),
    })
}

fn cmd_hazard(cfg: &RunConfig) -> Result<String, CliError> {
    let q_lo = cfg.q_lo.unwrap_or(0.5);
    let q_hi = cfg.q_hi.unwrap_or(0.8);
    let xs = grid_of(cfg, [0.0, 1.0, 0.01])?;
    Ok(match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => hazard_csv(q_lo, q_hi, &xs)?,
        Format::Json => {
            let s = SignalStructure::build(&QualitySpec::uniform(q_lo, q_hi))?;
            let rows: Vec<_> = hazard_series(&s, &xs)
                .into_iter()
                .map(|(x, h)| json!({ "x": x, "hazard": h }))
                .collect();
            to_json(&rows)
        }
    })
}

fn cmd_check_cascade(cfg: &RunConfig) -> Result<String, CliError> {
    let spec = cfg.quality()?;
    let s = SignalStructure::build(&spec)?;
    let up = up_cascade_condition(&s);
    let down = down_cascade_condition(&s);
    let ihrp = is_ihrp(&s);
    let mlrp = s.check_mlrp().err().map(|e| e.to_string());
    Ok(match cfg.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&json!({
            "up": up,
            "down": down,
            "ihrp": ihrp,
            "mlrp_violation": mlrp,
        })),
        Format::Csv => {
            let mut out = String::from("direction,holds,strict,witness_x,margin\n");
            for r in [up, down] {
                out.push_str(&format!(
                    "{:?},{},{},{},{}\n",
                    r.direction,
                    r.condition_holds,
                    r.strict,
                    r.witness_x.map_or("nan".into(), fmt_full),
                    fmt_full(r.margin)
                ));
            }
            out.to_lowercase()
        }
    })
}

fn cmd_worked_example(cfg: &RunConfig) -> Result<String, CliError> {
    let steps = worked_example();
    Ok(match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => worked_example_text(&steps),
        Format::Json => {
            let rows: Vec<_> = steps
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    json!({
                        "agent": i + 1,
                        "mu": s.mu.to_string(),
                        "mu_decimal": s.mu_f64(),
                        "threshold": s.threshold.to_string(),
                        "threshold_decimal": s.threshold_f64(),
                    })
                })
                .collect();
            to_json(&rows)
        }
    })
}

fn cmd_simulate(cfg: &RunConfig) -> Result<String, CliError> {
    let s = SignalStructure::build(&cfg.quality()?)?;
    let mu0 = RunConfig::check_probability("mu0", cfg.mu0.unwrap_or(0.5))?;
    let origin = BeliefState::from_mu(mu0)?;
    let actions = match &cfg.history {
        Some(h) => parse_actions(h)?,
        None => {
            let seed = cfg
                .seed
                .ok_or_else(|| CliError::Invalid("simulate needs --seed (or --history)".into()))?;
            let state = match cfg.state.unwrap_or(1) {
                0 => State::Zero,
                1 => State::One,
                other => {
                    return Err(CliError::Invalid(format!(
                        "state must be 0 or 1, got {other}"
                    )))
                }
            };
            let mut rng = stream_rng(seed, 0);
            simulate_sequence(&s, state, mu0, cfg.length.unwrap_or(20), &mut rng)?
        }
    };
    let t = evaluate_history(&s, &History::new(actions, origin));
    Ok(match cfg.format.unwrap_or(Format::Csv) {
        Format::Csv => t.to_csv(),
        Format::Json => to_json(&json!({
            "actions": t.actions.iter().map(|a| a.bit()).collect::<Vec<_>>(),
            "mu": t.beliefs.iter().map(|b| b.mu()).collect::<Vec<_>>(),
            "threshold": t.thresholds,
            "cascade_flag": t.cascade_flags,
            "clamped": t.clamped,
        })),
    })
}

fn cmd_estimate(cfg: &RunConfig) -> Result<String, CliError> {
    let dataset = match (&cfg.data, cfg.synthetic) {
        (Some(p), None) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
            SequenceDataset::from_csv(&text, p.display().to_string())
                .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?
        }
        (None, Some(n)) => {
            let q_hi = cfg
                .q_hi
                .ok_or_else(|| CliError::Invalid("--synthetic needs --q-hi".into()))?;
            let seed = cfg
                .seed
                .ok_or_else(|| CliError::Invalid("--synthetic needs --seed".into()))?;
            synthetic_dataset(q_hi, n, seed)?
        }
        _ => {
            return Err(CliError::Invalid(
                "give a dataset path or --synthetic N".into(),
            ))
        }
    };
    let opts = GmmOptions {
        variant: match cfg.weighting.unwrap_or(WeightingArg::Posterior) {
            WeightingArg::Posterior => ProbabilityVariant::Posterior,
            WeightingArg::Prior => ProbabilityVariant::Prior,
        },
        ..GmmOptions::default()
    };
    let est = gmm_estimate(&dataset, &opts)?;
    Ok(match cfg.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&est),
        Format::Csv => {
            let mut out = String::from("h,count,empirical,model\n");
            for r in &est.per_history {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    r.h,
                    r.count,
                    r.empirical.map_or("nan".into(), fmt_full),
                    fmt_full(r.model)
                ));
            }
            out
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(
            CliError::from(Error::Estimation("flat".into())).exit_code(),
            3
        );
        assert_eq!(CliError::from(Error::Parse("x".into())).exit_code(), 2);
        assert_eq!(
            CliError::from(Error::InvalidSpec("x".into())).exit_code(),
            2
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
