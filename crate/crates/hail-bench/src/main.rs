//! Command-line entry point: generate synthetic streams, run the incremental
//! benchmark, re-emit reports from a previous run, or inspect a checkpoint.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hail_bench::config::ExperimentConfig;
use hail_bench::{checkpoint, report, runner, Result};

#[derive(Parser)]
#[command(name = "hail-bench", about = "Incremental audio-visual intensity benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one seed's synthetic stream as per-species split files.
    Generate {
        /// JSON experiment config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Generator seed; defaults to the config's first seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Target directory; defaults to <output_dir>/data.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured method over every seed and emit reports.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated method list overriding the config.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Output directory overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild results.csv, summary.json, and the accuracy curve from a
    /// previous run's records.json.
    Report {
        /// Directory holding records.json.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print what a pipeline checkpoint contains.
    InspectCheckpoint { path: PathBuf },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn generate(config: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(&config)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let dir = out.unwrap_or_else(|| cfg.output_dir.join("data"));
    std::fs::create_dir_all(&dir)?;

    let mut stages = hail_core::synth::generate(&cfg.synth.to_core(seed))?;
    runner::apply_modality_mask(&mut stages, cfg.modality);
    for stage in &stages {
        for (name, pairs) in
            [("train", &stage.train), ("val", &stage.val), ("test", &stage.test)]
        {
            let path = dir.join(format!("species{}_{name}.avc", stage.species_id));
            hail_core::synth::write_split(&path, seed, stage.species_id, pairs)?;
            println!("wrote {} ({} samples)", path.display(), pairs.len());
        }
    }
    Ok(())
}

fn run(
    config: Option<PathBuf>,
    seed: Option<u64>,
    methods: Option<Vec<String>>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(&config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = methods {
        cfg.methods = m;
    }
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    cfg.validate()?;

    let outcomes = runner::run_experiment(&cfg)?;
    report::emit_reports(&outcomes, &cfg.output_dir)?;
    println!("wrote reports under {}", cfg.output_dir.display());
    for line in summary_lines(&outcomes)? {
        println!("{line}");
    }
    Ok(())
}

fn summary_lines(outcomes: &[runner::RunOutcome]) -> Result<Vec<String>> {
    let summary = report::summarize(outcomes)?;
    let mut lines = Vec::new();
    for (method, entry) in &summary.methods {
        let forgetting = match entry.final_forgetting {
            Some(f) => format!("{:.4} +- {:.4}", f.mean, f.sd),
            None => "n/a".into(),
        };
        lines.push(format!(
            "{method}: avg_acc {:.4} +- {:.4}, forgetting {forgetting}, state {:.0} bytes",
            entry.final_avg_acc.mean, entry.final_avg_acc.sd, entry.storage_footprint_bytes.mean
        ));
    }
    Ok(lines)
}

fn rebuild_reports(out: PathBuf) -> Result<()> {
    let outcomes = report::load_records(&out.join("records.json"))?;
    report::emit_reports(&outcomes, &out)?;
    println!("rebuilt reports under {}", out.display());
    Ok(())
}

fn inspect(path: PathBuf) -> Result<()> {
    let (pipe, fusion) = checkpoint::load(&path)?;
    let model = pipe.model();
    println!("checkpoint {}", path.display());
    println!("  fusion dim: {}", fusion.dim());
    println!(
        "  expansions: fused {} -> {}, audio {} -> {}, visual {} -> {}",
        model.expansion_av.input_dim(),
        model.expansion_av.output_dim(),
        model.expansion_a.input_dim(),
        model.expansion_a.output_dim(),
        model.expansion_v.input_dim(),
        model.expansion_v.output_dim()
    );
    println!("  stages learned: {}", pipe.stages_learned());
    println!("  species order: {:?}", model.species_order);
    println!(
        "  gamma: {} -> {} over K = {}",
        model.gamma.gamma_max(),
        model.gamma.gamma_min(),
        model.gamma.k_total()
    );
    println!("  routing: {:?}", pipe.settings().routing);
    println!("  prototype augmentation: {}", pipe.settings().use_prototype_augmentation);
    println!(
        "  bank: m = {}, alpha = {}, {} general intensity sets, {} species cells",
        pipe.bank().m(),
        pipe.bank().alpha(),
        pipe.bank().general().len(),
        pipe.bank().species().len()
    );
    println!("  retained state: {} bytes", pipe.model().byte_len() + pipe.bank().byte_len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, seed, out } => generate(config, seed, out),
        Command::Run { config, seed, methods, out } => run(config, seed, methods, out),
        Command::Report { out } => rebuild_reports(out),
        Command::InspectCheckpoint { path } => inspect(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
