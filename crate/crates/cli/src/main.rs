use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use capacity_rank::assignment::rank_by_predicted_reward;
use capacity_rank::capacity::CapacityModel;
use capacity_rank::gbm::BoostedModel;
use capacity_rank::harness::{
    aggregate, rank_mode, read_runs, run_and_summarize, split, train_model, ExperimentConfig,
    RankConfig, RunRecord, Summary,
};
use capacity_rank::objectives::ObjectiveKind;
use capacity_rank::tasks::{generate_synthetic, load_csv, SyntheticSpec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "capacity-rank", version, about = "Capacity-aware task ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task file (`tasks.csv`).
    Gen {
        /// Generator spec (JSON); defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every configured objective on each data set's training split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank a task file with a saved model and write `plan.csv`.
    Rank {
        /// Descriptor and capacity for the task file (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate: writes runs.jsonl, curves.csv, summary.csv and models.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize an existing runs.jsonl into summary.csv / summary.json.
    Compare {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

fn load_experiment(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut cfg =
        ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(out) = out {
        cfg.output_dir = Some(out);
    }
    if let Some(seed) = seed {
        cfg.reseed(seed);
    }
    Ok(cfg)
}

fn gen(config: Option<PathBuf>, out: &Path, seed: u64) -> Result<bool> {
    let spec: SyntheticSpec = match config {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => SyntheticSpec::default(),
    };
    let data = generate_synthetic(&spec, seed)?;
    fs::create_dir_all(out)?;
    let path = out.join("tasks.csv");
    data.save_csv(&path)?;
    println!("wrote {} tasks to {}", data.len(), path.display());
    Ok(true)
}

fn train(cfg: &ExperimentConfig) -> Result<bool> {
    let Some(dir) = &cfg.output_dir else {
        bail!("no output directory: pass --out or set output_dir");
    };
    let models = dir.join("models");
    fs::create_dir_all(&models)?;
    let mut ok = true;
    for ds in &cfg.datasets {
        let prepared = ds.load().and_then(|data| {
            let (train, test) = split(&data, &cfg.split)?;
            let capacity = CapacityModel::new(cfg.capacity.clone(), train.len().max(test.len()))?;
            Ok((train, capacity.survival_weights()?))
        });
        let (train, weights) = match prepared {
            Ok(p) => p,
            Err(e) => {
                eprintln!("{}: {e}", ds.id);
                ok = false;
                continue;
            }
        };
        for &kind in &cfg.kinds {
            let result = train_model(
                kind,
                &train,
                &weights,
                &cfg.train_config(kind),
                cfg.lambda,
                cfg.query_size,
            )
            .and_then(|m| {
                let path = models.join(format!("{}__{}.json", ds.id, kind.name()));
                m.save(&path)?;
                Ok(path)
            });
            match result {
                Ok(path) => println!("{} {kind}: {}", ds.id, path.display()),
                Err(e) => {
                    eprintln!("{} {kind}: {e}", ds.id);
                    ok = false;
                }
            }
        }
    }
    Ok(ok)
}

fn rank(config: &Path, model: &Path, data: &Path, out: &Path) -> Result<bool> {
    let cfg = RankConfig::load(config)?;
    let model = BoostedModel::load(model)?;
    let tasks = load_csv(data, &cfg.descriptor)?;
    let kind = ObjectiveKind::ALL
        .into_iter()
        .find(|k| k.tag() == model.objective_tag)
        .expect("every tag has a kind");
    let mode = cfg.mode.unwrap_or_else(|| rank_mode(kind));
    let ranking = rank_by_predicted_reward(&model, &tasks, mode)?;
    if let Some(w) = &ranking.warning {
        eprintln!("warning: {w}");
    }
    let weights = CapacityModel::new(cfg.capacity, tasks.len())?.survival_weights()?;
    fs::create_dir_all(out)?;
    let path = out.join("plan.csv");
    ranking.write_csv(&weights, fs::File::create(&path)?)?;
    let plan = ranking.plan(&tasks.rewards(), &weights)?;
    println!(
        "expected profit {} ({})",
        plan.expected_profit,
        path.display()
    );
    Ok(true)
}

fn print_summary(summary: &Summary) {
    for metric in [
        "expected_profit",
        "expected_precision",
        "average_precision",
        "spearman_rho",
        "aucpc",
    ] {
        for kind in &summary.kinds {
            if let Some(row) = summary.row(metric, *kind) {
                let mark = if row.best { "*" } else { "" };
                println!(
                    "{metric:>20} {:>16} {:>14} ± {:<12}{mark}",
                    kind.name(),
                    row.mean.map_or("-".into(), |m| format!("{m:.4}")),
                    row.sd.map_or("-".into(), |s| format!("{s:.4}")),
                );
            }
        }
    }
}

fn report_failures(records: &[RunRecord]) -> bool {
    let mut ok = true;
    for r in records.iter().filter(|r| !r.succeeded()) {
        eprintln!(
            "{} {}: {}",
            r.dataset,
            r.kind,
            r.error.as_deref().unwrap_or("no report")
        );
        ok = false;
    }
    ok
}

fn eval(cfg: &ExperimentConfig) -> Result<bool> {
    let (records, summary) = run_and_summarize(cfg)?;
    print_summary(&summary);
    Ok(report_failures(&records))
}

fn compare(runs: &Path, out: &Path, alpha: f64) -> Result<bool> {
    let records = read_runs(runs)?;
    if records.is_empty() {
        bail!("{} holds no runs", runs.display());
    }
    let summary = aggregate(&records, alpha)?;
    summary.save(out)?;
    print_summary(&summary);
    Ok(report_failures(&records))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config, out, seed } => gen(config, &out, seed),
        Command::Train { config, out, seed } => {
            load_experiment(&config, out, seed).and_then(|c| train(&c))
        }
        Command::Rank {
            config,
            model,
            data,
            out,
        } => rank(&config, &model, &data, &out),
        Command::Eval { config, out, seed } => {
            load_experiment(&config, out, seed).and_then(|c| eval(&c))
        }
        Command::Compare { runs, out, alpha } => compare(&runs, &out, alpha),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
