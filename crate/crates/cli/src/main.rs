//! `sail`: simulate datasets, train temporal masks, check gradients and
//! score localization.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sail_core::dataio::{load_dataset, write_dataset, ParamsFile, RunConfig};
use sail_core::eval::{baseline_params, evaluate_dataset, width_stats, DatasetEval, Matching};
use sail_core::gradcheck::{run_gradcheck, GradcheckOptions, DEFAULT_TOLERANCE};
use sail_core::optim::train;
use sail_core::simulator::{
    dataset_stats, gen_videos, sparsify, to_dataset, LayoutMode, ScenarioSpec, SparsifyPolicy,
};
use sail_core::{Dataset, Error, LocReport, MaskKind, MaskParams, PoolingMode, Result};

#[derive(Parser)]
#[command(
    name = "sail",
    version,
    about = "Weakly-supervised temporal event localization with learnable masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (manifest + embedding files).
    Simulate(SimulateArgs),
    /// Train one mask per caption and write the learned parameters.
    Train(TrainArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Score learned parameters against ground truth.
    Eval(EvalArgs),
    /// Score the untrained fixed-uniform masks.
    Baseline(BaselineArgs),
    /// Train and evaluate over keep-ratio and inter-mask-width grids.
    Sweep(SweepArgs),
}

/// Overrides for every [`RunConfig`] key.
#[derive(Args, Default)]
struct RunArgs {
    /// key=value file with run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    width_max: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    w_inter: Option<f64>,
    #[arg(long)]
    alpha_aug: Option<f64>,
    #[arg(long)]
    lambda_div: Option<f64>,
    /// plain_mean or mask_weighted
    #[arg(long)]
    pooling: Option<PoolingMode>,
    /// gaussian, cauchy or hard_binary
    #[arg(long)]
    mask_kind: Option<MaskKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable both ranking terms.
    #[arg(long)]
    no_sim: bool,
    /// Disable the inverse-mask ranking term.
    #[arg(long)]
    no_inverse: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::read(path)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            temperature,
            width_max,
            margin,
            w_inter,
            alpha_aug,
            lambda_div,
            pooling,
            mask_kind,
            lr,
            weight_decay,
            batch_size,
            steps,
            seed
        );
        cfg.no_sim |= self.no_sim;
        cfg.no_inverse |= self.no_inverse;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 20)]
    n_videos: usize,
    #[arg(long, default_value_t = 64)]
    n_frames: usize,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    #[arg(long, default_value_t = 3)]
    min_events: usize,
    #[arg(long, default_value_t = 3)]
    max_events: usize,
    /// uniform, non_uniform or heterogeneous_durations
    #[arg(long, default_value = "non_uniform")]
    layout: LayoutMode,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    transition_fraction: f64,
    /// Omit synthetic transition captions from the dataset.
    #[arg(long)]
    no_synthetic: bool,
}

impl ScenarioArgs {
    fn spec(&self, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            n_videos: self.n_videos,
            n_frames: self.n_frames,
            embed_dim: self.embed_dim,
            min_events: self.min_events,
            max_events: self.max_events,
            layout: self.layout,
            noise_sigma: self.noise_sigma,
            transition_fraction: self.transition_fraction,
            seed,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Fraction of events that keep their captions; the rest become hidden
    /// ground truth.
    #[arg(long, default_value_t = 1.0)]
    keep_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "gaussian")]
    mask_kind: MaskKind,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Parameter file written by `train`.
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also score the fixed-uniform masks.
    #[arg(long)]
    with_baseline: bool,
    /// best_iou or one_to_one
    #[arg(long, default_value = "best_iou")]
    matching: MatchingArg,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "best_iou")]
    matching: MatchingArg,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1.0")]
    keep_ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
    w_inters: Vec<f64>,
    /// Number of seeds per grid point, starting at the run seed.
    #[arg(long, default_value_t = 1)]
    n_seeds: u64,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MatchingArg {
    #[value(name = "best_iou")]
    BestIou,
    #[value(name = "one_to_one")]
    OneToOne,
}

impl From<MatchingArg> for Matching {
    fn from(m: MatchingArg) -> Self {
        match m {
            MatchingArg::BestIou => Matching::BestIou,
            MatchingArg::OneToOne => Matching::OneToOne,
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn simulate_dataset(
    scenario: &ScenarioArgs,
    seed: u64,
    keep_ratio: f64,
) -> Result<(Dataset, String)> {
    let spec = scenario.spec(seed);
    let policy = SparsifyPolicy::new(keep_ratio, seed)?;
    let videos: Vec<_> = gen_videos(&spec)?
        .iter()
        .map(|v| sparsify(v, &policy))
        .collect();
    let stats = dataset_stats(&videos);
    let text = format!(
        "videos={}\nmean_events_per_video={}\nmean_annotated_events_per_video={}\nmean_coverage={}\nmean_annotated_coverage={}\n",
        stats.videos,
        stats.mean_events,
        stats.mean_annotated_events,
        stats.mean_coverage,
        stats.mean_annotated_coverage
    );
    Ok((to_dataset(&spec, &videos, !scenario.no_synthetic)?, text))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    create_dir(&args.out_dir)?;
    let (dataset, stats) = simulate_dataset(&args.scenario, args.seed, args.keep_ratio)?;
    let manifest = write_dataset(&dataset, &args.out_dir)?;
    write_text(&args.out_dir.join("stats.txt"), &stats)?;
    print!("{stats}");
    println!("manifest={}", manifest.display());
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let dataset = load_dataset(&args.manifest)?;
    create_dir(&args.out_dir)?;
    let train_cfg = cfg.train_config(dataset.n_frames)?;
    let report = train(&dataset.videos, &train_cfg, cfg.seed)?;

    cfg.write(&args.out_dir.join("run_config.txt"))?;
    ParamsFile::new(cfg.mask_kind, &dataset, &report.final_params)
        .write(&args.out_dir.join("params.json"))?;
    let log_path = args.out_dir.join("train_log.jsonl");
    let mut log = Vec::new();
    report
        .write_records(&mut log)
        .map_err(|e| Error::io(&log_path, e))?;
    write_text(&log_path, &String::from_utf8_lossy(&log))?;
    let summary = format!(
        "videos={}\nsteps={}\nseed={}\ninitial_total={}\nfinal_total={}\nfinal_sim={}\nfinal_sim_inverse={}\nfinal_aug={}\nfinal_diversity={}\n",
        dataset.videos.len(),
        train_cfg.steps,
        cfg.seed,
        report.initial_loss.total,
        report.final_loss.total,
        report.final_loss.sim,
        report.final_loss.sim_inverse,
        report.final_loss.aug,
        report.final_loss.diversity
    );
    write_text(&args.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("wall_clock_seconds={:.3}", report.wall_clock.as_secs_f64());
    Ok(())
}

fn gradcheck_cmd(args: &GradcheckArgs) -> Result<bool> {
    let report = run_gradcheck(&GradcheckOptions {
        trials: args.trials,
        seed: args.seed,
        kind: args.mask_kind,
        tolerance: args.tolerance,
        ..Default::default()
    })?;
    if report.surrogate {
        println!(
            "mask_kind={} (straight-through surrogate gradient)",
            report.kind
        );
    } else {
        println!("mask_kind={}", report.kind);
    }
    println!("trials={}", report.trials);
    for t in &report.terms {
        println!(
            "{} max_rel_err={:.3e} {}",
            t.term,
            t.max_rel_err,
            if t.passed { "PASS" } else { "FAIL" }
        );
    }
    let ok = report.passed();
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn eval_records(label: &str, ev: &DatasetEval) -> String {
    let mut s = ev.report.to_records(label, 100.0);
    let _ = writeln!(s, "mean_best_iou={}", ev.mean_best_iou);
    let _ = writeln!(s, "center_error={}", ev.center_error);
    s
}

fn write_eval(
    out_dir: &Path,
    dataset: &Dataset,
    rows: &[(&str, Vec<Vec<MaskParams>>)],
    matching: Matching,
) -> Result<()> {
    create_dir(out_dir)?;
    let mut records = String::new();
    let mut csv = String::new();
    let mut widths = String::new();
    for (label, params) in rows {
        let ev = evaluate_dataset(dataset, params, matching)?;
        if csv.is_empty() {
            let _ = writeln!(csv, "{},mean_best_iou,center_error", ev.report.csv_header());
        }
        let _ = writeln!(
            csv,
            "{},{},{}",
            ev.report.csv_row(label, 100.0),
            ev.mean_best_iou,
            ev.center_error
        );
        records.push_str(&eval_records(label, &ev));
        records.push('\n');
        let per_video: Vec<Vec<f64>> = params
            .iter()
            .map(|v| v.iter().map(|p| p.width()).collect())
            .collect();
        match width_stats(&per_video) {
            Ok(ws) => widths.push_str(&ws.to_records(label)),
            Err(Error::EmptyResult(msg)) => {
                let _ = writeln!(widths, "[{label}]\nunavailable={msg}");
            }
            Err(e) => return Err(e),
        }
    }
    write_text(&out_dir.join("eval.txt"), &records)?;
    write_text(&out_dir.join("eval.csv"), &csv)?;
    write_text(&out_dir.join("widths.txt"), &widths)?;
    print!("{records}");
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let dataset = load_dataset(&args.manifest)?;
    dataset.require_ground_truth()?;
    let file = ParamsFile::read(&args.params)?;
    let mut rows = vec![("trained", file.params_for(&dataset)?)];
    if args.with_baseline {
        rows.push(("fixed_uniform", baseline_params(&dataset)?));
    }
    write_eval(&args.out_dir, &dataset, &rows, args.matching.into())
}

fn baseline_cmd(args: &BaselineArgs) -> Result<()> {
    let dataset = load_dataset(&args.manifest)?;
    dataset.require_ground_truth()?;
    let params = baseline_params(&dataset)?;
    create_dir(&args.out_dir)?;
    ParamsFile::new(MaskKind::Gaussian, &dataset, &params)
        .write(&args.out_dir.join("params.json"))?;
    write_eval(
        &args.out_dir,
        &dataset,
        &[("fixed_uniform", params)],
        args.matching.into(),
    )
}

/// Trains on `n_seeds` simulated datasets and averages the scores.
fn sweep_point(args: &SweepArgs, cfg: &RunConfig, keep_ratio: f64) -> Result<(LocReport, f64)> {
    let mut reports = Vec::new();
    let mut iou = 0.0;
    for s in 0..args.n_seeds {
        let seed = cfg.seed + s;
        let (dataset, _) = simulate_dataset(&args.scenario, seed, keep_ratio)?;
        let report = train(&dataset.videos, &cfg.train_config(dataset.n_frames)?, seed)?;
        let ev = evaluate_dataset(&dataset, &report.final_params, Matching::BestIou)?;
        iou += ev.mean_best_iou;
        reports.push(ev.report);
    }
    Ok((LocReport::average(&reports)?, iou / args.n_seeds as f64))
}

fn sweep(args: &SweepArgs) -> Result<()> {
    if args.n_seeds == 0 {
        return Err(Error::Config("n-seeds must be >= 1".into()));
    }
    let cfg = args.run.resolve()?;
    create_dir(&args.out_dir)?;
    cfg.write(&args.out_dir.join("run_config.txt"))?;
    for (name, grid) in [
        ("keep_ratio", &args.keep_ratios),
        ("w_inter", &args.w_inters),
    ] {
        let mut csv = String::new();
        for &value in grid.iter() {
            let (point_cfg, keep) = if name == "keep_ratio" {
                (cfg, value)
            } else {
                (
                    RunConfig {
                        w_inter: value,
                        ..cfg
                    },
                    1.0,
                )
            };
            point_cfg.validate()?;
            let (report, iou) = sweep_point(args, &point_cfg, keep)?;
            if csv.is_empty() {
                let _ = writeln!(
                    csv,
                    "{},mean_best_iou",
                    report.csv_header().replacen("label", name, 1)
                );
            }
            let row = format!("{},{iou}", report.csv_row(&value.to_string(), 100.0));
            println!("{name} {row}");
            let _ = writeln!(csv, "{row}");
        }
        write_text(&args.out_dir.join(format!("sweep_{name}.csv")), &csv)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(a) => simulate(&a).map(|_| true),
        Command::Train(a) => train_cmd(&a).map(|_| true),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
        Command::Eval(a) => eval_cmd(&a).map(|_| true),
        Command::Baseline(a) => baseline_cmd(&a).map(|_| true),
        Command::Sweep(a) => sweep(&a).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
