mod settings;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use steerkit::codec::{encode_depth, LatentCodec};
use steerkit::ddpm::NoiseSchedule;
use steerkit::denoiser::bridge::{
    serve, spawn_tcp, BridgeCodec, BridgeDenoiser, BridgeSession, LoopbackHandler, SharedSession,
};
use steerkit::denoiser::{BiasSpec, BiasedOracle, PredictionKind};
use steerkit::depth::DepthMap;
use steerkit::eval::{
    normalize_relative, run_benchmark, sample_sparse, synth_scene, EvaluationArea, Protocol, Scene,
    SceneSpec,
};
use steerkit::io::{
    load_dataset, read_depth, read_rgb, read_sparse, write_depth, write_scene, write_sparse,
    DepthFormat,
};
use steerkit::steering::{complete, SteeringConfig};
use steerkit::Error;

use settings::{parse_kind, BiasChain, CodecSpec, FileLayer, List, RecallSpec, ScheduleSpec};

#[derive(Parser)]
#[command(
    name = "steerkit",
    version,
    about = "Depth completion by steering a diffusion sampler toward sparse metric depth"
)]
struct Cli {
    /// Settings file of `key = value` lines. Flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Random seed. Falls back to the settings file, then STEERKIT_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete a sparse depth condition into a dense metric depth map.
    Complete(CompleteArgs),
    /// Run the completion protocol over a directory of scenes.
    Benchmark(BenchmarkArgs),
    /// Render synthetic rooms with exact depth.
    Synth(SynthArgs),
    /// Print the noise schedule as CSV.
    ScheduleDump(ScheduleArgs),
    /// Check that a bridge server answers the INIT handshake.
    BridgePing(PingArgs),
    /// Serve the built-in loopback bridge handler (for testing clients).
    #[command(hide = true)]
    ServeLoopback(ServeArgs),
}

#[derive(Args, Clone, Default)]
struct SteerArgs {
    /// Base steering factor k.
    #[arg(long)]
    k: Option<f64>,
    /// Exclusion radius (pixels) around condition points for fill samples.
    #[arg(long)]
    zeta: Option<f64>,
    /// Fill samples per zeta x zeta cell.
    #[arg(long)]
    fill_density: Option<f64>,
    /// Reverse steps (at most the schedule length).
    #[arg(long)]
    steps: Option<usize>,
    /// Re-fit the condition at every step.
    #[arg(long, value_name = "BOOL")]
    refit_per_step: Option<bool>,
    /// Draw new fill positions at every step.
    #[arg(long, value_name = "BOOL")]
    resample_positions_per_step: Option<bool>,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// External denoiser: `host:port` or `stdio:<command>`.
    #[arg(long)]
    bridge: Option<String>,
    /// Local schedule: default, linear:B0:B1:T or scaled-linear:B0:B1:T.
    #[arg(long)]
    schedule: Option<ScheduleSpec>,
    /// Local codec: identity or pool:F.
    #[arg(long)]
    codec: Option<CodecSpec>,
    /// Oracle bias chain, e.g. calibrated-blur:16+warp:0.8:0.1, or none.
    #[arg(long)]
    bias: Option<BiasChain>,
    /// Oracle recall prior, comma-separated STD:LEN components, or none.
    #[arg(long)]
    recall: Option<RecallSpec>,
    /// What the denoiser predicts: eps or v.
    #[arg(long, value_parser = parse_kind)]
    kind: Option<PredictionKind>,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    rgb: PathBuf,
    /// CSV with header row,col,depth_m.
    #[arg(long)]
    sparse: PathBuf,
    /// Output depth file (.pfm or .png).
    #[arg(long)]
    out: PathBuf,
    /// Ground truth for the local oracle denoiser (ignored with --bridge).
    #[arg(long)]
    gt: Option<PathBuf>,
    #[command(flatten)]
    steer: SteerArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Directory of <id>_rgb.png and <id>_depth.{png,pfm} files.
    #[arg(long)]
    data: PathBuf,
    /// Directory for report.jsonl and report.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    n_depth: Option<usize>,
    /// Area whose samples are erased: large, medium, small or HxW.
    #[arg(long)]
    erase: Option<EvaluationArea>,
    /// Evaluation areas, comma-separated.
    #[arg(long)]
    areas: Option<List<EvaluationArea>>,
    /// Steering factors, comma-separated.
    #[arg(long)]
    ks: Option<List<f64>>,
    #[command(flatten)]
    steer: SteerArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 448)]
    height: usize,
    #[arg(long, default_value_t = 608)]
    width: usize,
    /// Depth file format: pfm or png.
    #[arg(long, default_value = "pfm")]
    format: String,
    /// Render this JSON scene description instead of random rooms.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Also write <id>_sparse.csv with this many samples of the depth.
    #[arg(long)]
    sparse: Option<usize>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    schedule: Option<ScheduleSpec>,
    /// Subsample to this many steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct PingArgs {
    #[arg(long)]
    bridge: Option<String>,
    #[arg(long, default_value_t = 448)]
    height: usize,
    #[arg(long, default_value_t = 608)]
    width: usize,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    /// Accept this many TCP sessions on an ephemeral port instead of stdio.
    #[arg(long)]
    tcp_sessions: Option<usize>,
    #[arg(long)]
    schedule: Option<ScheduleSpec>,
    #[arg(long)]
    codec: Option<CodecSpec>,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 3,
        Error::Format { .. } | Error::UnsupportedFormat(_) => 4,
        Error::Parameter(_) | Error::Range { .. } => 5,
        Error::Dimension(_)
        | Error::EmptyCondition
        | Error::InsufficientData { .. }
        | Error::DegenerateFit
        | Error::Data(_)
        | Error::EmptyEvaluation
        | Error::DuplicatePosition { .. }
        | Error::NonPositiveDepth { .. }
        | Error::OutOfBounds { .. } => 6,
        Error::EmptyReport(_) => 7,
        Error::Connection(_) | Error::Protocol(_) | Error::Remote(_) | Error::Denoiser(_) => 8,
        Error::Singularity { .. } | Error::Numeric(_) => 9,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `steerkit --help` for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => FileLayer::load(p)?,
        None => FileLayer::empty(),
    };
    let env_seed = match std::env::var("STEERKIT_SEED") {
        Ok(v) => Some(
            v.parse::<u64>()
                .map_err(|e| Error::Parameter(format!("STEERKIT_SEED={v:?}: {e}")))?,
        ),
        Err(_) => None,
    };
    let seed = file.pick(cli.seed, "seed")?.or(env_seed).unwrap_or(0);
    match cli.command {
        Command::Complete(a) => cmd_complete(a, &file, seed),
        Command::Benchmark(a) => cmd_benchmark(a, &file, seed),
        Command::Synth(a) => cmd_synth(a, seed),
        Command::ScheduleDump(a) => cmd_schedule(a, &file),
        Command::BridgePing(a) => cmd_ping(a, &file),
        Command::ServeLoopback(a) => cmd_serve(a, &file),
    }
}

fn steering_config(a: &SteerArgs, file: &FileLayer, seed: u64) -> CliResult<SteeringConfig> {
    let d = SteeringConfig::default();
    let cfg = SteeringConfig {
        k: file.pick_or(a.k, "k", d.k)?,
        zeta: file.pick_or(a.zeta, "zeta", d.zeta)?,
        fill_density: file.pick_or(a.fill_density, "fill_density", d.fill_density)?,
        steps: file.pick_or(a.steps, "steps", d.steps)?,
        seed,
        refit_per_step: file.pick_or(a.refit_per_step, "refit_per_step", d.refit_per_step)?,
        resample_positions_per_step: file.pick_or(
            a.resample_positions_per_step,
            "resample_positions_per_step",
            d.resample_positions_per_step,
        )?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Local oracle settings, resolved.
struct OracleSetup {
    codec: Box<dyn LatentCodec + Send + Sync>,
    schedule: NoiseSchedule,
    biases: Vec<BiasSpec>,
    recall: RecallSpec,
    kind: PredictionKind,
}

impl OracleSetup {
    fn resolve(m: &ModelArgs, file: &FileLayer) -> CliResult<Self> {
        let codec = file.pick_or(m.codec, "codec", CodecSpec::Identity)?;
        let schedule = file.pick_or(m.schedule.clone(), "schedule", ScheduleSpec::Default)?;
        let biases = file.pick_or(m.bias.clone(), "bias", BiasChain(Vec::new()))?;
        let recall = file.pick_or(m.recall.clone(), "recall", RecallSpec(Vec::new()))?;
        let kind = file.pick_or(m.kind, "kind", PredictionKind::Velocity)?;
        Ok(Self {
            codec: codec.build()?,
            schedule: schedule.build()?,
            biases: biases.0,
            recall,
            kind,
        })
    }

    fn denoiser(&self, gt: &DepthMap) -> steerkit::Result<BiasedOracle> {
        let x0 = encode_depth(&normalize_relative(gt)?, self.codec.as_ref())?;
        // A zero-radius blur is the identity, so an empty chain is the exact oracle.
        let mut d = BiasedOracle::new(&x0, &BiasSpec::GaussianBlur { radius: 0.0 }, self.kind)?;
        for b in &self.biases {
            d = d.then_bias(b)?;
        }
        Ok(d.with_recall(self.recall.build()?))
    }
}

struct BridgeSetup {
    session: SharedSession,
    codec: BridgeCodec,
    schedule: NoiseSchedule,
    kind: PredictionKind,
}

impl BridgeSetup {
    fn connect(
        target: &str,
        m: &ModelArgs,
        file: &FileLayer,
        dims: (usize, usize),
        steps: usize,
    ) -> CliResult<Self> {
        let mut session = BridgeSession::connect(target)?;
        session.init(dims.0, dims.1, steps)?;
        let schedule = session.schedule()?;
        let session = Arc::new(Mutex::new(session));
        let codec = BridgeCodec::new(session.clone(), dims.0, dims.1, 0.0)?;
        Ok(Self {
            session,
            codec,
            schedule,
            kind: file.pick_or(m.kind, "kind", PredictionKind::Velocity)?,
        })
    }

    fn denoiser(&self) -> BridgeDenoiser {
        BridgeDenoiser::new(self.session.clone()).with_kind(self.kind)
    }

    fn close(self) -> CliResult<()> {
        let result = self
            .session
            .lock()
            .map_err(|_| Error::Protocol("bridge session poisoned".into()))?
            .shutdown();
        Ok(result?)
    }
}

fn bridge_target(flag: Option<String>, file: &FileLayer) -> CliResult<Option<String>> {
    Ok(file.pick(flag, "bridge")?)
}

fn cmd_complete(a: CompleteArgs, file: &FileLayer, seed: u64) -> CliResult<()> {
    let cfg = steering_config(&a.steer, file, seed)?;
    let rgb = read_rgb(&a.rgb)?;
    let c = read_sparse(&a.sparse, rgb.height, rgb.width)?;
    DepthFormat::from_path(&a.out)?;
    let done = match bridge_target(a.model.bridge.clone(), file)? {
        Some(target) => {
            let b =
                BridgeSetup::connect(&target, &a.model, file, (rgb.height, rgb.width), cfg.steps)?;
            let out = complete(&rgb, &c, &cfg, &mut b.denoiser(), &b.codec, &b.schedule)?;
            b.close()?;
            out
        }
        None => {
            let Some(gt_path) = &a.gt else {
                return Err(Failure::Usage(
                    "complete needs --bridge, or --gt for the local oracle denoiser".into(),
                ));
            };
            let gt = read_depth(gt_path)?;
            let setup = OracleSetup::resolve(&a.model, file)?;
            let mut d = setup.denoiser(&gt)?;
            complete(
                &rgb,
                &c,
                &cfg,
                &mut d,
                setup.codec.as_ref(),
                &setup.schedule,
            )?
        }
    };
    write_depth(&done.depth, &a.out)?;
    println!(
        "wrote {} ({}x{}), scale {} shift {} fit rmse {} over {} points",
        a.out.display(),
        done.depth.height,
        done.depth.width,
        done.transform.scale,
        done.transform.shift,
        done.transform.rmse,
        done.transform.pairs
    );
    Ok(())
}

fn cmd_benchmark(a: BenchmarkArgs, file: &FileLayer, seed: u64) -> CliResult<()> {
    let cfg = steering_config(&a.steer, file, seed)?;
    let protocol = Protocol {
        n_depth: file.pick_or(a.n_depth, "n_depth", 13620)?,
        erase: file.pick(a.erase, "erase")?,
        areas: file
            .pick_or(
                a.areas,
                "areas",
                List(vec![
                    EvaluationArea::large(),
                    EvaluationArea::medium(),
                    EvaluationArea::small(),
                ]),
            )?
            .0,
        ks: file.pick_or(a.ks, "ks", List(vec![0.0, 0.1, 0.2, 0.3]))?.0,
    };
    protocol.validate()?;
    let scenes = load_dataset(&a.data)?;
    let report = match bridge_target(a.model.bridge.clone(), file)? {
        Some(target) => {
            let Some(first) = scenes.first() else {
                return Err(Error::EmptyReport("the dataset contains no scenes".into()).into());
            };
            let dims = first.gt.dims();
            if let Some(s) = scenes.iter().find(|s| s.gt.dims() != dims) {
                return Err(Error::Data(format!(
                    "scene {} is {:?} but the bridge was initialised for {dims:?}",
                    s.id,
                    s.gt.dims()
                ))
                .into());
            }
            let b = BridgeSetup::connect(&target, &a.model, file, dims, cfg.steps)?;
            let report = run_benchmark(
                &scenes,
                &protocol,
                &cfg,
                |_: &Scene| Ok(b.denoiser()),
                &b.codec,
                &b.schedule,
            )?;
            b.close()?;
            report
        }
        None => {
            let setup = OracleSetup::resolve(&a.model, file)?;
            run_benchmark(
                &scenes,
                &protocol,
                &cfg,
                |s: &Scene| setup.denoiser(&s.gt),
                setup.codec.as_ref(),
                &setup.schedule,
            )?
        }
    };
    fs::create_dir_all(&a.out_dir)?;
    report.write_jsonl(fs::File::create(a.out_dir.join("report.jsonl"))?)?;
    report.write_csv(fs::File::create(a.out_dir.join("report.csv"))?)?;
    for r in &report.aggregate {
        println!(
            "{:>8} k={:<4} rmse={:.4} mae={:.4} rel={:.4} delta1={:.4} pixels={}",
            r.area, r.k, r.rmse, r.mae, r.rel, r.delta1, r.n_pixels
        );
    }
    for f in &report.failures {
        eprintln!("scene {} failed: {}", f.scene_id, f.error);
    }
    if report.aggregate.is_empty() {
        return Err(Error::EmptyReport("every scene failed".into()).into());
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs, seed: u64) -> CliResult<()> {
    let format = match a.format.as_str() {
        "pfm" => DepthFormat::Pfm,
        "png" => DepthFormat::Png16,
        other => {
            return Err(
                Error::UnsupportedFormat(format!("depth format {other:?}; use pfm or png")).into(),
            )
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<SceneSpec> = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let spec: SceneSpec = serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            vec![spec]
        }
        None => (0..a.count)
            .map(|_| SceneSpec::random_room(a.height, a.width, &mut rng))
            .collect(),
    };
    fs::create_dir_all(&a.out_dir)?;
    for (i, spec) in specs.iter().enumerate() {
        let (rgb, gt) = synth_scene(spec)?;
        let scene = Scene {
            id: format!("synth{i:04}"),
            rgb,
            gt,
        };
        let (rgb_path, depth_path) = write_scene(&a.out_dir, &scene, format)?;
        let spec_path = a.out_dir.join(format!("{}_spec.json", scene.id));
        let json = serde_json::to_string_pretty(spec).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&spec_path, json)?;
        println!("{}", rgb_path.display());
        println!("{}", depth_path.display());
        if let Some(n) = a.sparse {
            let c = sample_sparse(&scene.gt, n, &mut rng)?;
            let p = a.out_dir.join(format!("{}_sparse.csv", scene.id));
            write_sparse(&c, &p)?;
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn cmd_schedule(a: ScheduleArgs, file: &FileLayer) -> CliResult<()> {
    let spec = file.pick_or(a.schedule, "schedule", ScheduleSpec::Default)?;
    let mut sched = spec.build()?;
    if let Some(steps) = file.pick(a.steps, "steps")? {
        if steps != sched.steps() {
            sched = sched.subsample(steps)?;
        }
    }
    println!("t,beta,alpha_bar,posterior_variance");
    for t in 1..=sched.steps() {
        println!(
            "{t},{},{},{}",
            sched.beta(t),
            sched.alpha_bar(t),
            sched.sigma2(t)
        );
    }
    Ok(())
}

fn cmd_ping(a: PingArgs, file: &FileLayer) -> CliResult<()> {
    let Some(target) = bridge_target(a.bridge, file)? else {
        return Err(Failure::Usage("bridge-ping needs --bridge".into()));
    };
    let steps = file.pick_or(a.steps, "steps", steerkit::ddpm::DEFAULT_STEPS)?;
    let mut session = BridgeSession::connect(&target)?;
    let ack = session.init(a.height, a.width, steps)?.clone();
    let sched = session.schedule()?;
    let (c, h, w) = ack.latent_shape();
    println!(
        "ok: {} timesteps, alpha_bar_T = {}, latent {c}x{h}x{w}",
        sched.steps(),
        sched.alpha_bar(sched.steps())
    );
    session.shutdown()?;
    Ok(())
}

fn cmd_serve(a: ServeArgs, file: &FileLayer) -> CliResult<()> {
    let sched = file
        .pick_or(a.schedule, "schedule", ScheduleSpec::Default)?
        .build()?;
    let codec = file.pick_or(a.codec, "codec", CodecSpec::Identity)?;
    let handler = LoopbackHandler::new(sched.betas().to_vec());
    let handler = match codec {
        CodecSpec::Identity => handler,
        CodecSpec::Pool(f) => handler.with_codec(steerkit::codec::PoolingCodec::new(f)?),
    };
    match a.tcp_sessions {
        Some(n) => {
            let (addr, join) = spawn_tcp(handler, n)?;
            println!("{addr}");
            let ends = join
                .join()
                .map_err(|_| Error::Protocol("server thread panicked".into()))?;
            eprintln!("served sessions: {ends:?}");
        }
        None => {
            let mut handler = handler;
            serve(
                &mut handler,
                std::io::stdin().lock(),
                std::io::stdout().lock(),
            )?;
        }
    }
    Ok(())
}
