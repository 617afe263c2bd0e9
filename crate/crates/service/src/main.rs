use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use p2b_core::broker::{JobState, SystemClock};
use p2b_core::grammar::StyleCatalog;
use p2b_core::pipeline::{reconstruct, PipelineConfig, ReconstructionRequest, StyleLibrary};
use p2b_core::synth::{corpus_at, CORPUS_ELEVATION_DEG, CORPUS_SEED, STREET_ELEVATION_DEG};
use p2b_core::vision::{parse_silhouette, write_silhouette, ImageBuffer};
use p2b_service::client::GatewayClient;
use p2b_service::config::{GatewayConfig, WorkerConfig};
use p2b_service::cost::cost_report;
use p2b_service::gateway::{serve, AppState};
use p2b_service::worker::Worker;

type AnyError = Box<dyn std::error::Error + Send + Sync>;

/// Photo-to-building reconstruction service.
#[derive(Parser)]
#[command(name = "p2b", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gateway with its in-process job queue.
    Serve(ServeArgs),
    /// Run a slot-pinned worker against a gateway.
    Worker(WorkerArgs),
    /// Submit a photo and silhouette to a gateway.
    Submit(SubmitArgs),
    /// Reconstruct locally, without the service.
    Reconstruct(ReconstructArgs),
    /// Throughput and cost of a worker pool.
    Cost(CostArgs),
    /// Check a silhouette file.
    SilhCheck(SilhCheckArgs),
    /// Style library tools.
    Library {
        #[command(subcommand)]
        command: LibraryCommand,
    },
    /// Write the synthetic round-trip corpus (photos, silhouettes, truth).
    Synth(SynthArgs),
}

#[derive(Args)]
struct ServeArgs {
    /// TOML settings file; `P2B_*` variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    staging_root: Option<PathBuf>,
    #[arg(long)]
    results_root: Option<PathBuf>,
    #[arg(long)]
    static_root: Option<PathBuf>,
    #[arg(long)]
    job_timeout_s: Option<u64>,
}

#[derive(Args)]
struct WorkerArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gateway URL, e.g. http://127.0.0.1:8080.
    #[arg(long)]
    gateway: Option<String>,
    #[arg(long)]
    slot: Option<u32>,
    /// Directory with library.toml (see `p2b library build`).
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    worker_id: Option<String>,
    #[arg(long)]
    pipeline_config: Option<PathBuf>,
}

#[derive(Args)]
struct SubmitArgs {
    image: PathBuf,
    silhouette: PathBuf,
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    gateway: String,
    /// Poll until the job ends and download the result.
    #[arg(long)]
    wait: bool,
    /// Where `--wait` stores the archive; defaults to job-<id>.zip.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    image: PathBuf,
    silhouette: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Library directory; the built-in library is rendered when omitted.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Pipeline config TOML.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value_t = 1200.0)]
    monthly_cost: f64,
    #[arg(long, default_value_t = 60.0)]
    avg_seconds: f64,
    #[arg(long, default_value_t = 4)]
    concurrency: u32,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SilhCheckArgs {
    file: PathBuf,
    /// Also check that the silhouette was drawn on this photo's size.
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LibraryCommand {
    /// Render the built-in styles and templates into a directory.
    Build {
        dir: PathBuf,
        #[arg(long, default_value_t = PipelineConfig::default().raster_size)]
        raster_size: usize,
    },
}

#[derive(Args)]
struct SynthArgs {
    dir: PathBuf,
    #[arg(long, default_value_t = CORPUS_SEED)]
    seed: u64,
    /// Street-level cameras instead of the elevated default.
    #[arg(long)]
    street: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, AnyError> {
    match cli.command {
        Command::Serve(a) => serve_cmd(a),
        Command::Worker(a) => worker_cmd(a),
        Command::Submit(a) => submit_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Cost(a) => {
            let r = cost_report(a.monthly_cost, a.avg_seconds, a.concurrency)?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("{r}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SilhCheck(a) => silh_check_cmd(a),
        Command::Library {
            command: LibraryCommand::Build { dir, raster_size },
        } => {
            let lib = StyleLibrary::builtin(raster_size);
            std::fs::create_dir_all(&dir)?;
            let files = lib.save(&dir)?;
            println!("wrote {} files to {}", files.len(), dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth(a) => synth_cmd(a),
    }
}

fn serve_cmd(a: ServeArgs) -> Result<ExitCode, AnyError> {
    let mut cfg = GatewayConfig::load(a.config.as_deref())?;
    if let Some(v) = a.listen {
        cfg.listen = v;
    }
    if let Some(v) = a.staging_root {
        cfg.staging_root = v;
    }
    if let Some(v) = a.results_root {
        cfg.results_root = v;
    }
    if let Some(v) = a.static_root {
        cfg.static_root = v;
    }
    if let Some(v) = a.job_timeout_s {
        cfg.job_timeout_s = v;
    }
    cfg.validate()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.listen).await?;
        let state = AppState::prepare(cfg, Arc::new(SystemClock))?;
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
    })?;
    Ok(ExitCode::SUCCESS)
}

fn worker_cmd(a: WorkerArgs) -> Result<ExitCode, AnyError> {
    let mut cfg = WorkerConfig::load(a.config.as_deref())?;
    if let Some(v) = a.gateway {
        cfg.gateway_endpoint = v;
    }
    if let Some(v) = a.slot {
        cfg.slot_id = v;
    }
    if let Some(v) = a.library {
        cfg.library_path = v;
    }
    if let Some(v) = a.worker_id {
        cfg.worker_id = v;
    }
    if let Some(v) = a.pipeline_config {
        cfg.pipeline_config = Some(v);
    }
    let worker = Worker::start(&cfg)?;
    worker.run(&AtomicBool::new(false), None);
    Ok(ExitCode::SUCCESS)
}

fn submit_cmd(a: SubmitArgs) -> Result<ExitCode, AnyError> {
    let client = GatewayClient::new(&a.gateway)?;
    let job_id = client.submit(std::fs::read(&a.image)?, std::fs::read(&a.silhouette)?)?;
    println!("job {job_id} submitted");
    if !a.wait {
        return Ok(ExitCode::SUCCESS);
    }
    let mut last = None;
    let status = client.wait(job_id, Duration::from_secs(1), |s| {
        if last != Some((s.state, s.progress)) {
            println!("job {job_id}: {} {}%", s.state, s.progress);
            last = Some((s.state, s.progress));
        }
    })?;
    if status.state != JobState::Completed {
        eprintln!("job {job_id} {}: {}", status.state, status.message);
        return Ok(ExitCode::FAILURE);
    }
    println!("{}", status.message);
    let out = a
        .output
        .unwrap_or_else(|| PathBuf::from(format!("job-{job_id}.zip")));
    std::fs::write(&out, client.result(job_id)?)?;
    println!("result written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<ExitCode, AnyError> {
    let config = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let library = match &a.library {
        Some(dir) => StyleLibrary::load(dir)?,
        None => StyleLibrary::builtin(config.raster_size),
    };
    let image = ImageBuffer::decode(&std::fs::read(&a.image)?)?;
    let silhouette = parse_silhouette(&std::fs::read_to_string(&a.silhouette)?)?;
    let req = ReconstructionRequest {
        image,
        silhouette,
        config,
    };
    let result = reconstruct(&req, &library, &a.output, &mut |p| {
        log::info!("{} {}%", p.stage, p.percent)
    })?;
    let summary = serde_json::to_string_pretty(&result)?;
    std::fs::write(
        a.output.join(p2b_service::api::RESULT_SUMMARY_FILE),
        summary + "\n",
    )?;
    let style = &library
        .catalog
        .mass_style(result.grammar.mass.style_id)?
        .name;
    println!(
        "{style} mass, {} floors x {} columns, {} windows, residual {:.2} px",
        result.grammar.facade.floors,
        result.grammar.facade.columns,
        result.window_count,
        result.residual
    );
    for w in &result.warnings {
        println!("warning: {w}");
    }
    for f in &result.output_files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn silh_check_cmd(a: SilhCheckArgs) -> Result<ExitCode, AnyError> {
    let text = std::fs::read_to_string(&a.file)?;
    let poly = match parse_silhouette(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}: {e}", a.file.display());
            return Ok(ExitCode::FAILURE);
        }
    };
    if let Some(img) = &a.image {
        let image = ImageBuffer::decode(&std::fs::read(img)?)?;
        if (poly.image_w as usize, poly.image_h as usize) != (image.width, image.height) {
            eprintln!(
                "{}: drawn on a {}x{} image but {} is {}x{}",
                a.file.display(),
                poly.image_w,
                poly.image_h,
                img.display(),
                image.width,
                image.height
            );
            return Ok(ExitCode::FAILURE);
        }
    }
    println!(
        "ok: {} segments on a {}x{} image",
        poly.segments.len(),
        poly.image_w,
        poly.image_h
    );
    Ok(ExitCode::SUCCESS)
}

fn synth_cmd(a: SynthArgs) -> Result<ExitCode, AnyError> {
    let catalog = StyleCatalog::builtin();
    let elevation = if a.street {
        STREET_ELEVATION_DEG
    } else {
        CORPUS_ELEVATION_DEG
    };
    let cases = corpus_at(&catalog, a.seed, elevation)?;
    std::fs::create_dir_all(&a.dir)?;
    for case in &cases {
        let base = a.dir.join(&case.name);
        write(&base.with_extension("png"), &case.image.encode_png())?;
        write(
            &base.with_extension("silh"),
            write_silhouette(&case.silhouette).as_bytes(),
        )?;
        let truth = serde_json::to_string_pretty(&case.truth(&catalog)?)?;
        write(&base.with_extension("truth.json"), truth.as_bytes())?;
    }
    println!("wrote {} cases to {}", cases.len(), a.dir.display());
    Ok(ExitCode::SUCCESS)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), AnyError> {
    std::fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()).into())
}
