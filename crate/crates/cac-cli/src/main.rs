//! `cac` — generate contextual scenes, train and evaluate the
//! context-aware classifier, run the ablation grids, check gradients, and
//! time the inference overhead.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cac_core::ablation::{ablation_csv, run_suite, Suite};
use cac_core::checkpoint::{load_checkpoint, save_checkpoint};
use cac_core::config::{parse_eval_mode, parse_scene_spec, RunConfig};
use cac_core::error::Error;
use cac_core::gradcheck;
use cac_core::metrics::{csv_row, Split};
use cac_core::synth::{generate_range, read_dataset, write_dataset, Dataset};
use cac_core::train::{evaluate, time_overhead, train};

#[derive(Parser)]
#[command(
    name = "cac",
    about = "Context-aware classifier for semantic segmentation, desk scale",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic contextual dataset from a scene spec file.
    GenData(GenDataArgs),
    /// Train from a run config, writing checkpoint + metrics CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset in one head mode.
    Eval(EvalArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train every variant of an ablation suite, one CSV row per
    /// variant × seed.
    Ablate(AblateArgs),
    /// Compare inference wall-time with and without the context head.
    Time(TimeArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Scene spec file (key = value; see README for the schema).
    #[arg(long)]
    spec: PathBuf,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Override the spec file's sample count.
    #[arg(long)]
    count: Option<usize>,
    /// Override the spec file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec file's stream offset (for train/val splits).
    #[arg(long)]
    skip: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config file (key = value; defaults fill missing keys).
    #[arg(long)]
    config: PathBuf,
    /// Training dataset.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset.
    #[arg(long)]
    val: PathBuf,
    /// Output directory for checkpoint.cac, metrics.csv and
    /// config.resolved.txt.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// estimated | oracle | original
    #[arg(long)]
    mode: String,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the randomized instances.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    /// loss | kl | cosine | formation
    #[arg(long)]
    suite: String,
    /// Training dataset.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset.
    #[arg(long)]
    val: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds, one run per variant per seed.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Override the epoch count of every variant (handy for smoke runs).
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct TimeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Timed full-dataset passes per path (at least 20).
    #[arg(long, default_value_t = 40)]
    repeats: usize,
}

fn read_to_string(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn load_data(path: &Path) -> Result<Dataset, Error> {
    read_dataset(path)
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), Error> {
    let text = read_to_string(&args.spec)?;
    let (mut spec, mut count, mut skip) = parse_scene_spec(&text)?;
    if let Some(c) = args.count {
        count = c;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(s) = args.skip {
        skip = s;
    }
    let dataset = generate_range(&spec, skip, count)?;
    write_dataset(&args.out, &dataset)?;
    println!(
        "wrote {} samples ({}x{} grid, {} classes, d_in {}) to {}",
        dataset.len(),
        dataset.height,
        dataset.width,
        dataset.n_classes,
        dataset.d_in,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let cfg = RunConfig::parse(&read_to_string(&args.config)?)?;
    let train_set = load_data(&args.data)?;
    let val_set = load_data(&args.val)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io {
        path: args.out_dir.display().to_string(),
        source: e,
    })?;

    // The fully resolved config goes beside the outputs first, so a run
    // can be reproduced even if it is interrupted later.
    let resolved = args.out_dir.join("config.resolved.txt");
    std::fs::write(&resolved, cfg.to_canonical_text()).map_err(|e| Error::Io {
        path: resolved.display().to_string(),
        source: e,
    })?;

    let (ckpt, metrics) = train(&cfg, &train_set, &val_set)?;
    let ckpt_path = args.out_dir.join("checkpoint.cac");
    save_checkpoint(&ckpt_path, &ckpt)?;
    let metrics_path = args.out_dir.join("metrics.csv");
    cac_core::metrics::write_metrics_csv(&metrics_path, train_set.n_classes, &metrics)?;

    if let Some(final_val) = metrics.iter().rev().find(|r| r.split == Split::Val) {
        println!(
            "trained {} epochs; final val mIoU {:.4} (eval mode {})",
            cfg.epochs,
            final_val.miou,
            cac_core::config::eval_mode_name(cfg.eval_mode)
        );
    }
    println!("checkpoint: {}", ckpt_path.display());
    println!("metrics:    {}", metrics_path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let mode = parse_eval_mode(&args.mode)?;
    let ckpt = load_checkpoint(&args.ckpt)?;
    let dataset = load_data(&args.data)?;
    let row = evaluate(&ckpt, &dataset, mode)?;
    println!("{}", cac_core::metrics::csv_header(dataset.n_classes));
    println!("{}", csv_row(&row));
    println!("mIoU = {:.4} (mode {})", row.miou, args.mode);
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<bool, Error> {
    let mut all_passed = true;
    println!("op-level randomized checks (seed {}):", args.seed);
    for named in gradcheck::op_suite(args.seed)? {
        all_passed &= named.report.passed;
        println!("  {:<18} {}", named.name, summary(&named.report));
    }

    let report = gradcheck::objective_check(
        args.seed,
        gradcheck::DEFAULT_STEP,
        gradcheck::DEFAULT_TOLERANCE,
    )?;
    all_passed &= report.passed;
    println!("full objective over encoder, classifier, theta_p:");
    println!("  {report}");

    let stop = gradcheck::stop_gradient_check(args.seed)?;
    all_passed &= stop.passed();
    println!(
        "stop-gradient: max |dL_KL/dtheta_y| = {:e} (must be exactly 0), max |dL_ce_y/dtheta_y| = {:e} (must be nonzero): {}",
        stop.max_kl_grad,
        stop.max_ce_y_grad,
        if stop.passed() { "PASS" } else { "FAIL" }
    );

    println!("gradcheck: {}", if all_passed { "PASS" } else { "FAIL" });
    Ok(all_passed)
}

fn summary(report: &gradcheck::CheckReport) -> String {
    match &report.worst {
        Some(w) => format!(
            "{} ({} coords, worst rel err {:.2e})",
            if report.passed { "PASS" } else { "FAIL" },
            report.checked,
            w.rel_err
        ),
        None => format!(
            "{} ({} coords)",
            if report.passed { "PASS" } else { "FAIL" },
            report.checked
        ),
    }
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Error> {
    let suite = Suite::parse(&args.suite)?;
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("invalid seed `{s}` in --seeds")))
        })
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("--seeds must name at least one seed".into()));
    }
    let train_set = load_data(&args.data)?;
    let val_set = load_data(&args.val)?;
    let mut base = RunConfig::default();
    if let Some(epochs) = args.epochs {
        base.epochs = epochs;
    }

    let rows = run_suite(suite, &base, &train_set, &val_set, &seeds, |v, seed, miou| {
        println!("{} seed {}: val mIoU {:.4}", v.name, seed, miou);
    })?;
    std::fs::write(&args.out, ablation_csv(&rows)).map_err(|e| Error::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn cmd_time(args: TimeArgs) -> Result<(), Error> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let dataset = load_data(&args.data)?;
    let report = time_overhead(&ckpt, &dataset, args.repeats)?;
    println!("{report}");
    println!("relative delta: {:+.1}%", report.delta_percent());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(args) => cmd_gen_data(args).map(|()| true),
        Command::Train(args) => cmd_train(args).map(|()| true),
        Command::Eval(args) => cmd_eval(args).map(|()| true),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Ablate(args) => cmd_ablate(args).map(|()| true),
        Command::Time(args) => cmd_time(args).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
