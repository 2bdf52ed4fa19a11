use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mireg::bench::{self, SweepParam};
use mireg::config::RunConfig;
use mireg::estimate::{run_pipeline, Mode, RegistrationResult};
use mireg::eval::{aggregate, score_scene, AggregateMetrics, SuccessThresholds};
use mireg::featnet::{load_checkpoint, save_checkpoint, Checkpoint, NetParams};
use mireg::geom::{LabeledScene, RigidTransform};
use mireg::gradcheck::{self, GradcheckOptions};
use mireg::scenegen::{generate_batch, scene_at, GenConfig};
use mireg::trainer::{train, NegativeMining};
use mireg::{Error, Result};

#[derive(Parser)]
#[command(name = "mireg", version, about = "Multi-instance rigid registration of putative correspondences")]
struct Cli {
    /// JSON run configuration (falls back to $MIREG_CONFIG, then defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic labeled scenes and a manifest.
    Generate(GenerateArgs),
    /// Train the correspondence embedding network.
    Train(TrainArgs),
    /// Register one scene file.
    Infer(InferArgs),
    /// Score a directory of results against labeled scenes.
    Eval(EvalArgs),
    /// Generate test scenes, run the pipeline and score it.
    Benchmark(BenchArgs),
    /// Benchmark once per value of one parameter.
    Sweep(SweepArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, alias = "count", default_value_t = 10)]
    num_scenes: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    instances_min: Option<usize>,
    #[arg(long)]
    instances_max: Option<usize>,
    #[arg(long)]
    inlier_ratio: Option<f64>,
    #[arg(long)]
    noise_points: Option<usize>,
    #[arg(long)]
    n_corr: Option<usize>,
    #[arg(long)]
    hard_outlier_fraction: Option<f64>,
    #[arg(long)]
    partial: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    random_negatives: bool,
    #[arg(long)]
    iterations: Option<usize>,
    /// Also write the log records to this file.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Add the spectrum, selected cluster count and retained count.
    #[arg(long)]
    dump_clusters: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    scene_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    re_max: Option<f64>,
    #[arg(long)]
    te_max: Option<f64>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    num_scenes: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// One of tau_s, tau_n, ransac_iterations.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    num_scenes: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Scale the analytic gradients by 1.01 (the check must then fail).
    #[arg(long)]
    perturb: bool,
}

enum Failure {
    Usage(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Command::Gradcheck(args) = &cli.command {
        return gradcheck_cmd(args);
    }
    let mut cfg = RunConfig::resolve(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Generate(a) => generate_cmd(&cfg, a)?,
        Command::Train(a) => train_cmd(cfg, a)?,
        Command::Infer(a) => infer_cmd(cfg, a)?,
        Command::Eval(a) => eval_cmd(&cfg, a)?,
        Command::Benchmark(a) => benchmark_cmd(cfg, a)?,
        Command::Sweep(a) => sweep_cmd(cfg, a)?,
        Command::Gradcheck(_) => unreachable!(),
    }
    Ok(())
}

fn load_model(path: Option<&Path>, mode: Mode) -> Result<Option<NetParams>> {
    match (path, mode) {
        (Some(p), Mode::Deep) => Ok(Some(load_checkpoint(p)?.params)),
        (None, Mode::Deep) => Err(Error::MissingModel),
        _ => Ok(None),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    root_seed: u64,
    num_scenes: usize,
    gen: &'a GenConfig,
    files: Vec<String>,
}

fn generate_cmd(cfg: &RunConfig, a: GenerateArgs) -> Result<()> {
    let mut cfg = cfg.clone();
    let g = &mut cfg.gen;
    if let Some(v) = a.instances_min {
        g.instances_min = v;
    }
    if let Some(v) = a.instances_max {
        g.instances_max = v;
    }
    if let Some(v) = a.inlier_ratio {
        g.inlier_ratio_per_instance = v;
    }
    if let Some(v) = a.noise_points {
        g.noise_points = v;
    }
    if let Some(v) = a.n_corr {
        g.num_correspondences = v;
    }
    if let Some(v) = a.hard_outlier_fraction {
        g.hard_outlier_fraction = v;
    }
    g.partial |= a.partial;
    g.validate()?;
    let gen = cfg.test_gen();
    let scenes = generate_batch(&gen, a.num_scenes)?;
    std::fs::create_dir_all(&a.out)?;
    let mut files = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let name = format!("scene_{i:05}.json");
        s.save(a.out.join(&name))?;
        files.push(name);
    }
    write_json(&a.out.join("manifest.json"), &Manifest { root_seed: cfg.seed, num_scenes: a.num_scenes, gen: &gen, files })
}

fn train_cmd(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if a.random_negatives {
        cfg.loss.negatives = NegativeMining::Random;
    }
    if let Some(n) = a.iterations {
        cfg.loss.iterations = n;
    }
    cfg.validate()?;
    let gen = cfg.train_gen();
    let mut log_file = a.log.as_ref().map(std::fs::File::create).transpose()?.map(std::io::BufWriter::new);
    let stdout = std::io::stdout();
    let mut io_err: Option<std::io::Error> = None;
    let out = train(&cfg.loss, &cfg.net, &cfg.consistency, |i| scene_at(&gen, i), cfg.train_seed(), |rec| {
        let line = serde_json::to_string(rec).expect("log record serialization");
        let mut res = writeln!(stdout.lock(), "{line}");
        if let Some(f) = log_file.as_mut() {
            res = res.and(writeln!(f, "{line}"));
        }
        if let Err(e) = res {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    save_checkpoint(&Checkpoint { params: out.params, rng_seed: cfg.seed }, &a.out)
}

#[derive(Serialize)]
struct InferOutput<'a> {
    transforms: &'a [RigidTransform],
    assignment: &'a [u32],
    timings: &'a mireg::estimate::StageTimings,
    #[serde(skip_serializing_if = "Option::is_none")]
    clusters: Option<ClusterDump<'a>>,
}

#[derive(Serialize)]
struct ClusterDump<'a> {
    num_retained: usize,
    m_selected: usize,
    eigenvalues: &'a [f64],
}

fn infer_cmd(cfg: RunConfig, a: InferArgs) -> Result<()> {
    let mode = a.mode.unwrap_or(cfg.mode);
    let scene = LabeledScene::load(&a.scene)?;
    let params = load_model(a.model.as_deref(), mode)?;
    let source = bench::feature_source(mode, params.as_ref())?;
    let res: RegistrationResult = run_pipeline(&scene, source, &cfg.pipeline(), cfg.scene_pipeline_seed(0))?;
    let out = InferOutput {
        transforms: &res.transforms,
        assignment: &res.cluster_assignment,
        timings: &res.timings,
        clusters: a.dump_clusters.then_some(ClusterDump {
            num_retained: res.num_retained,
            m_selected: res.m_selected,
            eigenvalues: &res.eigenvalues,
        }),
    };
    write_json(&a.out, &out)
}

#[derive(Deserialize)]
struct PredFile {
    transforms: Vec<RigidTransform>,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    #[serde(flatten)]
    metrics: &'a AggregateMetrics,
    thresholds: SuccessThresholds,
    scenes: Vec<String>,
}

fn eval_cmd(cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    let th = SuccessThresholds {
        re_max: a.re_max.unwrap_or(cfg.thresholds.re_max),
        te_max: a.te_max.unwrap_or(cfg.thresholds.te_max),
    };
    th.validate()?;
    let mut names: Vec<String> = std::fs::read_dir(&a.scene_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("scene_") && n.ends_with(".json"))
        .collect();
    names.sort();
    let mut per_scene = Vec::with_capacity(names.len());
    for name in &names {
        let scene = LabeledScene::load(a.scene_dir.join(name))?;
        if !scene.is_labeled() {
            return Err(Error::MissingLabels);
        }
        let pred_path = a.pred_dir.join(name);
        let text = std::fs::read_to_string(&pred_path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", pred_path.display())))?;
        let pred: PredFile = serde_json::from_str(&text)?;
        per_scene.push(score_scene(&pred.transforms, &scene.gt_transforms, &th));
    }
    let metrics = aggregate(per_scene)?;
    if let Some(csv) = &a.csv {
        let mut w = std::io::BufWriter::new(std::fs::File::create(csv)?);
        writeln!(w, "scene,num_gt,num_pred,recall,precision,f1")?;
        for (name, s) in names.iter().zip(&metrics.per_scene) {
            writeln!(w, "{name},{},{},{},{},{}", s.num_gt, s.num_pred, s.recall, s.precision, s.f1)?;
        }
        w.flush()?;
    }
    write_json(&a.out, &EvalOutput { metrics: &metrics, thresholds: th, scenes: names })
}

fn benchmark_cmd(mut cfg: RunConfig, a: BenchArgs) -> Result<()> {
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(n) = a.num_scenes {
        cfg.num_scenes = n;
    }
    let params = load_model(a.model.as_deref(), cfg.mode)?;
    let report = bench::benchmark(&cfg, params.as_ref())?;
    bench::write_benchmark_artifacts(&report, &cfg, &a.out)?;
    let m = &report.metrics;
    println!("mode={} scenes={} MR={:.4} MP={:.4} MF={:.4}", cfg.mode, m.num_scenes, m.mr, m.mp, m.mf);
    Ok(())
}

fn sweep_cmd(mut cfg: RunConfig, a: SweepArgs) -> Result<()> {
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(n) = a.num_scenes {
        cfg.num_scenes = n;
    }
    let params = load_model(a.model.as_deref(), cfg.mode)?;
    let rows = bench::sweep(&cfg, params.as_ref(), a.param, &a.values)?;
    bench::write_sweep_csv(&rows, a.param, &a.out)?;
    for r in &rows {
        println!("{}={} MR={:.4} MP={:.4} MF={:.4}", a.param.name(), r.value, r.mr, r.mp, r.mf);
    }
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> std::result::Result<(), Failure> {
    let report = gradcheck::run(&GradcheckOptions { perturb: a.perturb, ..GradcheckOptions::default() });
    for (suite, tensor, err) in report.max_per_tensor() {
        let status = if err < report.tolerance { "ok" } else { "FAIL" };
        println!("{suite:<17} {tensor:<28} {err:.3e} {status}");
    }
    if report.passed {
        println!("gradcheck passed (tolerance {:.0e})", report.tolerance);
        Ok(())
    } else {
        Err(Failure::Verification(format!("relative error above {:.0e}", report.tolerance)))
    }
}
