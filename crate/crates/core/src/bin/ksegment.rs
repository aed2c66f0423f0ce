use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ksegment::config::ExperimentConfig;
use ksegment::dataset::{generate_synthetic, save_csv, CsvSchema};
use ksegment::error::{Error, Result};
use ksegment::experiment::{
    assess_saved, load_reports, pareto_rows, prepare_data, render_summary, run_experiment_with, save_models,
    train_models, write_pareto_csv, DATA_FILE, PARETO_FILE, SUMMARY_FILE,
};

#[derive(Parser)]
#[command(name = "ksegment", version, about = "K-segment property valuation and fairness evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic market described by the config as CSV.
    GenData(Common),
    /// Train every configured model and save the ensembles.
    Train(Common),
    /// Value the assessment roll with previously saved ensembles.
    Assess(Common),
    /// Run the full pipeline: train, assess, score and write reports.
    Evaluate(Common),
    /// Recompute the Pareto table from saved reports.
    Pareto(Common),
    /// Print a summary of saved reports.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the data and booster seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg.report.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(c) => {
            let cfg = c.load()?;
            let Some(synth) = &cfg.synthetic else {
                return Err(Error::Config {
                    path: "synthetic".into(),
                    message: "gen-data needs a `synthetic` section".into(),
                });
            };
            let records = generate_synthetic(synth)?;
            create_dir(&cfg.report.out_dir)?;
            let path = cfg.report.out_dir.join(DATA_FILE);
            save_csv(&path, &records, &CsvSchema::with_feature_dim(synth.feature_dim))?;
            println!("wrote {} records to {}", records.len(), path.display());
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let data = prepare_data(&cfg)?;
            let models = train_models(&cfg, &data)?;
            for path in save_models(&cfg.report.out_dir, &models)? {
                println!("saved {}", path.display());
            }
        }
        Command::Assess(c) => {
            let cfg = c.load()?;
            let path = assess_saved(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            let output = run_experiment_with(&cfg)?;
            print!("{}", render_summary(&output.reports));
            println!("\nreports written to {}", cfg.report.out_dir.display());
        }
        Command::Pareto(c) => {
            let cfg = c.load()?;
            let reports = load_reports(&cfg)?;
            let rows = pareto_rows(&reports, cfg.report.pareto_selector()?, &cfg.report.pareto_split)?;
            let path = cfg.report.out_dir.join(PARETO_FILE);
            write_pareto_csv(&path, &rows)?;
            for r in &rows {
                let mark = if r.on_hull { "hull" } else if r.on_frontier { "frontier" } else { "" };
                println!("{:<24} {:>12.6} {:>14.8} {mark}", r.model, r.accuracy, r.fairness_value);
            }
        }
        Command::Report(c) => {
            let cfg = c.load()?;
            let summary = render_summary(&load_reports(&cfg)?);
            let path = cfg.report.out_dir.join(SUMMARY_FILE);
            std::fs::write(&path, &summary).map_err(|e| Error::Io { path, source: e })?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
