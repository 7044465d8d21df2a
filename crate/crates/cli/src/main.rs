use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use toploss::checkpoint::Checkpoint;
use toploss::experiment::{run_bagging, run_experiment, ExperimentConfig};
use toploss::ingest::{labelled_patches, log_transform, parse_label_sidecar, read_pgm16, tile, PATCH_SIZE};
use toploss::metrics::evaluate_scores;
use toploss::report::{emit_report, read_report, ReportFormat, ReportRow};
use toploss::sampler::Dataset;
use toploss::seed::derive_seed;
use toploss::synth::{reference_counts, DomainChain, DomainChainSpec, MixtureSpec};
use toploss::Matrix;

#[derive(Parser)]
#[command(name = "toploss", version, about = "Top-2 smooth loss experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/test/source/intermediate manifests.
    Synth(SynthArgs),
    /// Tile a 16-bit PGM image into labelled patches and write a manifest.
    Ingest(IngestArgs),
    /// Run an experiment config and write one report row per seed.
    Train(TrainArgs),
    /// Train bagged ensembles and write the ensemble rows.
    Bag(BagArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Merge report files into one.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    /// Scale factor applied to the seven-class land-cover counts.
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    #[arg(long, default_value_t = 15.0)]
    separation: f64,
    #[arg(long, default_value_t = 5.0)]
    spread: f64,
    /// Class-mean shift per domain hop.
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    #[arg(long, default_value_t = 300)]
    source_per_class: usize,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    image: PathBuf,
    /// Sidecar with one `origin_x,origin_y,label` line per labelled patch.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = PATCH_SIZE)]
    patch_size: usize,
    /// Defaults to one more than the largest label.
    #[arg(long)]
    n_classes: Option<usize>,
}

#[derive(Args)]
struct ReportOut {
    /// Report file; format from the extension unless `--format` is given.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    out: ReportOut,
    /// Save one checkpoint per seed into this directory.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BagArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    out: ReportOut,
    #[arg(long, default_value_t = 5)]
    models: usize,
    /// Also write every sub-model's row.
    #[arg(long)]
    members: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    format: Option<String>,
}

fn format_for(path: &Path, explicit: Option<&str>) -> Result<ReportFormat> {
    match explicit {
        Some(f) => Ok(f.parse()?),
        None => ReportFormat::from_path(path)
            .with_context(|| format!("cannot tell report format of {}; pass --format", path.display())),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_json(&text).with_context(|| format!("config {}", path.display()))
}

fn synth(args: SynthArgs) -> Result<()> {
    let counts = reference_counts(args.scale);
    let n = counts.len();
    let chain = DomainChain::from_spec(&DomainChainSpec {
        base: MixtureSpec {
            n_classes: n,
            feature_dim: args.feature_dim,
            counts: counts.clone(),
            separation: args.separation,
            spread: args.spread,
            seed: derive_seed(args.seed, 0),
        },
        shift_magnitude: args.shift,
    })?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let per_source = vec![args.source_per_class; n];
    let sets = [
        ("train.csv", chain.target.sample(&counts, derive_seed(args.seed, 1))?),
        ("test.csv", chain.target.sample(&vec![args.test_per_class; n], derive_seed(args.seed, 2))?),
        ("source.csv", chain.source.sample(&per_source, derive_seed(args.seed, 3))?),
        ("intermediate.csv", chain.intermediate.sample(&per_source, derive_seed(args.seed, 4))?),
    ];
    for (name, ds) in &sets {
        let path = args.out_dir.join(name);
        ds.write_manifest(&path)?;
        println!("{} rows -> {}", ds.len(), path.display());
    }
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let img = read_pgm16(&args.image)?;
    let patches = tile(&log_transform(&img), args.patch_size)?;
    if patches.too_small {
        bail!(
            "{}x{} image holds no {} pixel patch",
            img.width,
            img.height,
            args.patch_size
        );
    }
    let text = std::fs::read_to_string(&args.labels)
        .with_context(|| format!("reading {}", args.labels.display()))?;
    let (rows, labels) = labelled_patches(&patches, &parse_label_sidecar(&text)?)?;
    if rows.is_empty() {
        bail!("no labelled patches in {}", args.labels.display());
    }
    let n_classes = args
        .n_classes
        .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let ds = Dataset::new(Matrix::from_rows(&rows)?, labels, n_classes)?;
    ds.write_manifest(&args.out)?;
    println!(
        "{} of {} patches ({:.0} m on a side) -> {}",
        ds.len(),
        patches.patches.len(),
        patches.ground_extent_m(),
        args.out.display()
    );
    Ok(())
}

fn write_rows(rows: &[ReportRow], out: &ReportOut) -> Result<()> {
    let format = format_for(&out.report, out.format.as_deref())?;
    emit_report(rows, &out.report, format)?;
    for r in rows {
        println!(
            "{} epochs {} top1 {:.4} top2 {:.4} macro_f1 {:.4}",
            r.run_id, r.epochs, r.top1, r.top2, r.macro_f1
        );
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    format_for(&args.out.report, args.out.format.as_deref())?;
    if let Some(dir) = &args.checkpoint_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let records = run_experiment(&cfg)?;
    if let Some(dir) = &args.checkpoint_dir {
        for r in &records {
            let ck = Checkpoint {
                network: r.network.clone(),
                standardizer: r.standardizer.clone(),
            };
            ck.save(&dir.join(format!("{}.json", r.row.run_id)))?;
        }
    }
    let rows: Vec<ReportRow> = records.into_iter().map(|r| r.row).collect();
    write_rows(&rows, &args.out)
}

fn bag(args: BagArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    format_for(&args.out.report, args.out.format.as_deref())?;
    let mut rows = Vec::new();
    for b in run_bagging(&cfg, args.models)? {
        if args.members {
            rows.extend(b.members.into_iter().map(|m| m.row));
        }
        rows.push(b.ensemble);
    }
    write_rows(&rows, &args.out)
}

fn eval(args: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let mut ds = Dataset::read_manifest(&args.manifest)?;
    if let Some(s) = &ck.standardizer {
        ds = s.apply_dataset(&ds)?;
    }
    if ds.is_empty() {
        bail!("manifest {} has no rows", args.manifest.display());
    }
    let scores = ck.network.scores(ds.features())?;
    let report = evaluate_scores(&scores, ds.labels())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.inputs {
        rows.extend(read_report(path, format_for(path, None)?)?);
    }
    let format = format_for(&args.output, args.format.as_deref())?;
    emit_report(&rows, &args.output, format)?;
    println!("{} rows -> {}", rows.len(), args.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Bag(a) => bag(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
