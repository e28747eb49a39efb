//! `flowcast` command-line driver.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use flowcast::config::{Config, FormatKind};
use flowcast::eval::evaluate;
use flowcast::forecast::{Forecaster, Measurement};
use flowcast::ingest::{parse_annotations, write_simple_csv, Trajectory};
use flowcast::model::TrainedModel;
use flowcast::synth::{generate, Scenario, SynthConfig};
use flowcast::train::{holdout_split, train};
use flowcast::{Error, Vec2};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "flowcast", version, about = "Trajectory forecasting with learned vector fields")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for internal parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to trajectory data.
    Train(TrainArgs),
    /// Forecast one agent and write a raster per frame.
    Predict(PredictArgs),
    /// Score forecasts against held-out trajectories.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scene with known fields.
    Synth(SynthArgs),
    /// Print a summary of a model file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Annotation file.
    #[arg(long)]
    data: PathBuf,
    /// Input layout: simple-csv or drone.
    #[arg(long)]
    format: Option<String>,
    /// Seconds per frame (required for drone annotations).
    #[arg(long)]
    frame_dt: Option<f64>,
    /// Output model file.
    #[arg(long, short)]
    output: PathBuf,
    /// Fraction of trajectories held out for testing.
    #[arg(long, requires = "fold")]
    holdout: Option<f64>,
    /// Which held-out block to use.
    #[arg(long, requires = "holdout")]
    fold: Option<usize>,
}

#[derive(Args, Debug)]
struct ForecastOverrides {
    #[arg(long)]
    n_t: Option<usize>,
    #[arg(long)]
    n_x: Option<usize>,
    #[arg(long)]
    eps_tol: Option<f64>,
    #[arg(long)]
    raster_nx: Option<usize>,
    #[arg(long)]
    raster_ny: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Measured position `x,y`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    position: Vec2,
    /// Measured velocity `vx,vy`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    velocity: Vec2,
    /// Directory receiving the raster files and manifest.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: ForecastOverrides,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test trajectories, in the model's training format unless overridden.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    format: Option<String>,
    /// Raster samples per prediction for the Hausdorff distance.
    #[arg(long)]
    samples: Option<usize>,
    /// Report file; timing goes to `<report>.timing.txt`.
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    overrides: ForecastOverrides,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// straight-corridor, two-corridor, circle or crossing.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    count: usize,
    /// Measurement noise std per axis.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Brownian model-noise rate.
    #[arg(long, default_value_t = 0.0)]
    kappa: f64,
    #[arg(long)]
    frame_dt: Option<f64>,
    /// Total heading change of the two-corridor scene, radians.
    #[arg(long)]
    bend: Option<f64>,
    #[arg(long)]
    max_frames: Option<usize>,
    /// Output CSV; the truth file is written to `<output>.truth.json`.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Write each field's angle function on a grid into this directory.
    #[arg(long)]
    angle_raster: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    grid: usize,
}

struct CliError {
    code: &'static str,
    msg: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError { code: e.code(), msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: "io", msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError { code: "usage", msg: msg.into() }
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> CliError + '_ {
    move |e| CliError { code: e.code(), msg: format!("{}: {e}", path.display()) }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parse_pair(s: &str) -> std::result::Result<Vec2, String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated numbers")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    Ok(Vec2::new(a, b))
}

fn parse_format(s: &str) -> CliResult<FormatKind> {
    match s {
        "simple-csv" => Ok(FormatKind::SimpleCsv),
        "drone" => Ok(FormatKind::Drone),
        other => Err(usage(format!("unknown format {other:?}; expected simple-csv or drone"))),
    }
}

fn load_config(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(with_path(p))?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_trajectories(path: &Path, cfg: &flowcast::config::IngestConfig) -> CliResult<Vec<Trajectory>> {
    let file = fs::File::open(path).map_err(|e| CliError { code: "io", msg: format!("{}: {e}", path.display()) })?;
    let parsed = parse_annotations(BufReader::new(file), cfg.annotation_format()?).map_err(with_path(path))?;
    if parsed.skipped_agents > 0 || parsed.dropped_rows > 0 {
        log::warn!(
            "{}: skipped {} short agents, dropped {} lost/occluded rows",
            path.display(),
            parsed.skipped_agents,
            parsed.dropped_rows
        );
    }
    Ok(parsed.trajectories)
}

fn apply_overrides(cfg: &mut flowcast::config::ForecastConfig, o: &ForecastOverrides) {
    if let Some(v) = o.n_t {
        cfg.n_t = v;
    }
    if let Some(v) = o.n_x {
        cfg.n_x = v;
    }
    if let Some(v) = o.eps_tol {
        cfg.eps_tol = v;
    }
    if let Some(v) = o.raster_nx {
        cfg.raster_nx = v;
    }
    if let Some(v) = o.raster_ny {
        cfg.raster_ny = v;
    }
}

fn cmd_train(mut cfg: Config, args: &TrainArgs) -> CliResult<()> {
    if let Some(f) = &args.format {
        cfg.train.ingest.format = parse_format(f)?;
    }
    if let Some(dt) = args.frame_dt {
        cfg.train.ingest.frame_dt = Some(dt);
    }
    let mut trajs = read_trajectories(&args.data, &cfg.train.ingest)?;
    if let (Some(fraction), Some(fold)) = (args.holdout, args.fold) {
        let (tr, held) = holdout_split(trajs, fraction, fold, cfg.seed)?;
        let mut ids = String::new();
        for t in &held {
            ids.push_str(t.agent_id());
            ids.push('\n');
        }
        fs::write(sibling(&args.output, "holdout.txt"), ids)?;
        trajs = tr;
    }
    let model = train(&trajs, &cfg.train)?;
    model.save(&args.output)?;
    println!("trained n={} sizes={:?} from {} trajectories", model.n(), model.clustering.sizes, trajs.len());
    Ok(())
}

/// `<path>.<suffix>`, keeping the original extension in the name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn load_model(path: &Path) -> CliResult<TrainedModel> {
    TrainedModel::load(path).map_err(with_path(path))
}

fn cmd_predict(mut cfg: Config, args: &PredictArgs) -> CliResult<()> {
    apply_overrides(&mut cfg.forecast, &args.overrides);
    let model = load_model(&args.model)?;
    let meas = Measurement::new(args.position, args.velocity)?;
    let forecaster = Forecaster::new(&model, cfg.forecast.clone())?;
    let start = Instant::now();
    let frames = forecaster.predict(&meas)?;
    let elapsed = start.elapsed().as_secs_f64();

    fs::create_dir_all(&args.out_dir)?;
    let mut files = Vec::new();
    let mut diagnostics = Vec::new();
    for (l, frame) in frames.iter().enumerate() {
        let name = format!("frame_{:04}.txt", l + 1);
        fs::write(args.out_dir.join(&name), frame.raster.to_text())?;
        let d = &frame.diagnostics;
        diagnostics.push(json!({
            "t": frame.raster.t,
            "weight_sum": d.weight_sum,
            "nonlinear_mass": d.nonlinear_mass,
            "linear_mass": d.linear_mass,
            "total_mass": d.total_mass,
            "atoms": d.atoms,
        }));
        files.push(name);
    }
    let manifest = json!({
        "model": args.model.display().to_string(),
        "measurement": {
            "position": [meas.x_hat.x, meas.x_hat.y],
            "velocity": [meas.v_hat.x, meas.v_hat.y],
        },
        "forecast": cfg.forecast,
        "frame_dt": model.frame_dt(),
        "files": files,
        "diagnostics": diagnostics,
        "timing": {
            "seconds": elapsed,
            "seconds_per_frame": elapsed / frames.len() as f64,
        },
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(args.out_dir.join("manifest.json"), text)?;
    println!("wrote {} frames to {}", frames.len(), args.out_dir.display());
    Ok(())
}

fn cmd_evaluate(mut cfg: Config, args: &EvaluateArgs) -> CliResult<()> {
    apply_overrides(&mut cfg.forecast, &args.overrides);
    if let Some(n) = args.samples {
        cfg.eval.samples = n;
    }
    let model = load_model(&args.model)?;
    let mut ingest = model.training.ingest.clone();
    ingest.frame_dt = Some(model.frame_dt());
    if let Some(f) = &args.format {
        ingest.format = parse_format(f)?;
    }
    let tests = read_trajectories(&args.test, &ingest)?;
    let report = evaluate(&model, &tests, &cfg.forecast, &cfg.eval, cfg.seed)?;
    fs::write(&args.report, report.to_text())?;
    fs::write(sibling(&args.report, "timing.txt"), report.timing_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_synth(cfg: Config, args: &SynthArgs) -> CliResult<()> {
    let scenario: Scenario = args.scenario.parse().map_err(|e: Error| usage(e.to_string()))?;
    let mut sc = SynthConfig::new(scenario, args.count, cfg.seed);
    sc.noise = args.noise;
    sc.kappa = args.kappa;
    if let Some(v) = args.frame_dt {
        sc.frame_dt = v;
    }
    if let Some(v) = args.bend {
        sc.bend = v;
    }
    if let Some(v) = args.max_frames {
        sc.max_frames = v;
    }
    let (trajs, truth) = generate(&sc)?;
    let mut out = Vec::new();
    write_simple_csv(&mut out, &trajs)?;
    fs::write(&args.output, out)?;
    let mut text = serde_json::to_string_pretty(&truth).expect("truth serializes");
    text.push('\n');
    fs::write(sibling(&args.output, "truth.json"), text)?;
    println!("wrote {} {} trajectories to {}", trajs.len(), scenario, args.output.display());
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let nm = &model.noise;
    println!("schema_version={}", model.schema_version);
    println!("n={}", model.n());
    println!("sizes={:?}", model.clustering.sizes);
    println!("unclassified={}", model.clustering.unclassified);
    let d = &model.domain;
    println!("domain={:?},{:?},{:?},{:?}", d.min[0], d.min[1], d.max[0], d.max[1]);
    println!("frame_dt={:?}", model.frame_dt());
    println!("s_max={:?}", model.model_priors.s_max);
    println!("p_model={:?}", model.model_priors.p_model);
    println!("sigma_x={:?}", nm.sigma_x);
    println!("sigma_v={:?}", nm.sigma_v);
    println!("kappa={:?}", nm.kappa);
    for (k, f) in model.fields.iter().enumerate() {
        println!("field[{k}].degree={} coeff_norm={:?}", f.degree, f.coeff_norm());
    }
    if let Some(dir) = &args.angle_raster {
        if args.grid == 0 {
            return Err(usage("--grid must be positive"));
        }
        fs::create_dir_all(dir)?;
        let g = args.grid;
        for (k, f) in model.fields.iter().enumerate() {
            let mut s = format!("# field={k}\n# cells={g}x{g}\n# canonical=-1,-1,1,1\n");
            for iy in 0..g {
                let y = -1.0 + (iy as f64 + 0.5) * 2.0 / g as f64;
                let row: Vec<String> = (0..g)
                    .map(|ix| {
                        let x = -1.0 + (ix as f64 + 0.5) * 2.0 / g as f64;
                        format!("{:.16e}", f.theta(&Vec2::new(x, y)))
                    })
                    .collect();
                s.push_str(&row.join(","));
                s.push('\n');
            }
            fs::write(dir.join(format!("angle_{k}.txt")), s)?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train(a) => cmd_train(cfg, a),
        Command::Predict(a) => cmd_predict(cfg, a),
        Command::Evaluate(a) => cmd_evaluate(cfg, a),
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("ERROR:usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR:{}: {}", e.code, e.msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
