//! `wikisurvey`: offline fitting, simulation and scoring of vote logs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use wikisurvey_core::estimator::{per_draw_scores, ModelConfig};
use wikisurvey_core::report::fit;
use wikisurvey_core::sim::{generate_truth, simulate_votes, SimulationSpec, Truth};
use wikisurvey_core::{votes_csv, Error as CoreError, VoteLog, DEFAULT_MIN_APPEARANCES};

#[derive(Debug, Parser)]
#[command(name = "wikisurvey", version, about = "Fit, simulate and score pairwise wiki-survey vote logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the hierarchical probit model to a vote log.
    ///
    /// Exit status: 0 converged, 3 not converged (results still written),
    /// 2 invalid input or too little data.
    Fit {
        #[arg(long)]
        votes: PathBuf,
        /// Model configuration (`.toml`, otherwise JSON). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a survey and write the truth, the vote log and a manifest.
    Simulate {
        /// Simulation spec (`.toml`, otherwise JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print simple scores and tallies from a vote log.
    Score {
        #[arg(long)]
        votes: PathBuf,
        /// Only list items with at least this many completed appearances.
        #[arg(long, default_value_t = DEFAULT_MIN_APPEARANCES)]
        min_appearances: u64,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn io(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn core(e: CoreError) -> Failure {
    match &e {
        CoreError::InsufficientData { dropped_items } => {
            let ids: Vec<String> = dropped_items.iter().map(ToString::to_string).collect();
            invalid(anyhow::anyhow!("insufficient data: dropped items {}", ids.join(", ")))
        }
        CoreError::SingularSystem => Failure { code: 1, error: e.into() },
        _ => invalid(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit { votes, config, out } => run_fit(&votes, config.as_deref(), &out),
        Command::Simulate { spec, out } => run_simulate(&spec, &out),
        Command::Score { votes, min_appearances, json } => run_score(&votes, min_appearances, json),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(invalid)?;
    let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
        toml::from_str(&text).map_err(anyhow::Error::from)
    } else {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed.with_context(|| format!("parsing {}", path.display())).map_err(invalid)
}

fn read_votes(path: &Path) -> Result<VoteLog, Failure> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display())).map_err(invalid)?;
    VoteLog::parse(std::io::BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(invalid)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(io)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display())).map_err(io)
}

fn create_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(io)
}

fn run_fit(votes: &Path, config: Option<&Path>, out: &Path) -> Result<u8, Failure> {
    let config: ModelConfig = match config {
        Some(p) => read_document(p)?,
        None => ModelConfig::default(),
    };
    config.validate().map_err(core)?;
    let log = read_votes(votes)?;
    let (dataset, filter) = log.estimation_dataset(None).map_err(core)?;
    if !filter.dropped_items.is_empty() {
        let ids: Vec<String> = filter.dropped_items.iter().map(ToString::to_string).collect();
        println!("dropped items without both a win and a loss: {}", ids.join(", "));
    }
    let output = fit(&dataset, &filter, &log.tallies(), &config).map_err(core)?;
    create_dir(out)?;
    write_json(&out.join("results.json"), &output.results)?;
    write_json(&out.join("diagnostics.json"), &output.diagnostics)?;

    let d = &output.diagnostics;
    println!(
        "{} votes, {} sessions, {} items; {} chains x {} kept draws",
        d.design.votes, d.design.sessions, d.design.items, d.chains, d.kept_per_chain
    );
    println!(
        "max R-hat: mu {:.4}, theta {:.4} (threshold {})",
        d.max_rhat_mu, d.max_rhat_theta_v, d.rhat_threshold
    );
    println!("{:>8} {:>10} {:>17} {:>8}", "item", "modeled", "95% interval", "simple");
    for r in &output.results.items {
        println!(
            "{:>8} {:>10.2} {:>8.2}-{:<8.2} {:>8.2}",
            r.item_id.0, r.modeled_score, r.ci_low, r.ci_high, r.simple_score
        );
    }
    if output.results.converged {
        println!("converged; wrote {}", out.display());
        Ok(0)
    } else {
        eprintln!("chains did not converge; results written to {} are provisional", out.display());
        Ok(3)
    }
}

#[derive(Debug, Serialize)]
struct TruthDocument<'a> {
    #[serde(flatten)]
    truth: &'a Truth,
    /// Item scores implied by the true appeals, in `item_ids` order.
    true_scores: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    seed: u64,
    spec: &'a SimulationSpec,
    items: usize,
    sessions: usize,
    votes: usize,
    votes_per_session_median: f64,
    votes_per_session_max: usize,
    files: [&'static str; 2],
}

fn run_simulate(spec_path: &Path, out: &Path) -> Result<u8, Failure> {
    let spec: SimulationSpec = read_document(spec_path)?;
    spec.validate().map_err(core)?;
    let truth = generate_truth(&spec).map_err(core)?;
    let rows = simulate_votes(&truth, &spec).map_err(core)?;
    let true_scores = per_draw_scores(&truth.theta).map_err(core)?;

    let mut per_session = vec![0usize; spec.sessions];
    for r in &rows {
        per_session[(r.session_id - 1) as usize] += 1;
    }
    per_session.sort_unstable();
    let n = per_session.len();
    let median = if n % 2 == 1 {
        per_session[n / 2] as f64
    } else {
        (per_session[n / 2 - 1] + per_session[n / 2]) as f64 / 2.0
    };

    create_dir(out)?;
    write_json(&out.join("truth.json"), &TruthDocument { truth: &truth, true_scores })?;
    let csv = votes_csv::write_rows(&rows).map_err(core)?;
    fs::write(out.join("votes.csv"), csv).map_err(io)?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            seed: spec.seed,
            spec: &spec,
            items: spec.items,
            sessions: spec.sessions,
            votes: rows.len(),
            votes_per_session_median: median,
            votes_per_session_max: per_session.last().copied().unwrap_or(0),
            files: ["truth.json", "votes.csv"],
        },
    )?;
    println!("simulated {} votes from {} sessions over {} items into {}", rows.len(), spec.sessions, spec.items, out.display());
    Ok(0)
}

fn run_score(votes: &Path, min_appearances: u64, json: bool) -> Result<u8, Failure> {
    let log = read_votes(votes)?;
    let scores = wikisurvey_core::rank_tallies(log.tallies(), min_appearances);
    if json {
        println!("{}", serde_json::to_string_pretty(&scores).map_err(io)?);
        return Ok(0);
    }
    let mut table = format!("{:>8} {:>8} {:>6} {:>6} {:>12}\n", "item", "score", "wins", "losses", "appearances");
    for s in &scores {
        writeln!(
            table,
            "{:>8} {:>8.2} {:>6} {:>6} {:>12}",
            s.item_id.0, s.score, s.wins, s.losses, s.completed_appearances
        )
        .expect("writing to a String");
    }
    print!("{table}");
    if scores.is_empty() {
        eprintln!("no item has {min_appearances} or more completed appearances");
    }
    Ok(0)
}
