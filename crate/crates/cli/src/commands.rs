//! `fe` subcommands. [`run`] is the whole program minus process exit, so
//! tests can drive it in-process.

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use eraser_core::adapter::AdapterConfig;
use eraser_core::geometry::{compute_rectification, warp_image, FrameRecord};
use eraser_core::inpaint::{inpaint, BackendConfig, InpaintRequest, PatchMatchParams};
use eraser_core::metrics::{evaluate, incoherence, lpips_external, psnr, EvalOptions, IncoherenceParams, MethodSpec, PsnrRegion};
use eraser_core::pipeline::{dump_debug, erase, PipelineConfig, Selection};
use eraser_core::raster::{load_rgb, save_rgb, BinaryMask};
use eraser_core::scene::{load_scene, save_scene};
use eraser_core::synth::{demo_room, oblique_suite, write_suite};

use crate::server::{serve, AppState};
use crate::session::Session;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "fe", version, about = "Plane-by-plane furniture eraser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Remove instances from a scene and write the result.
    Erase(EraseArgs),
    /// Score methods over a dataset of scenes and masks.
    Evaluate(EvaluateArgs),
    /// Write the fronto-parallel view of one plane.
    Rectify(RectifyArgs),
    /// Compare a prediction with ground truth over a mask.
    Metrics(MetricsArgs),
    /// Serve the interactive eraser API for one scene.
    Serve(ServeArgs),
    /// Run one inpainting backend on an image and mask.
    Inpaint(InpaintArgs),
    /// Generate synthetic scenes.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("which").required(true).args(["select", "all"]))]
struct EraseArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Comma-separated instance ids.
    #[arg(long, value_delimiter = ',')]
    select: Vec<String>,
    #[arg(long)]
    all: bool,
    /// Pipeline config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write per-plane intermediates here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// JSON list of methods, or `{"methods": [...], "options": {...}}`.
    #[arg(long)]
    methods: PathBuf,
    /// Directory for report.csv and report.json.
    #[arg(long)]
    report: PathBuf,
    /// Overrides the options file.
    #[arg(long, value_enum)]
    psnr_region: Option<Region>,
}

#[derive(Args, Debug)]
struct RectifyArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    plane: String,
    /// Output directory: rectified.png, valid.png, frame.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    target_long_side: u32,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// White pixels are the evaluated region.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, value_enum, default_value_t = Region::Image)]
    psnr_region: Region,
    /// Incoherence parameters JSON.
    #[arg(long)]
    params: Option<PathBuf>,
    /// LPIPS adapter JSON; LPIPS is skipped without it.
    #[arg(long)]
    lpips: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Overridden by FE_PORT.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InpaintArgs {
    #[arg(long)]
    input: PathBuf,
    /// White pixels are filled.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = Backend::Patchmatch)]
    backend: Backend,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum DemoCommand {
    /// The two-object demo room, plus empty.png (the room without furniture).
    Room {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
    },
    /// The five-scene oblique-texture suite in dataset layout.
    Suite {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Region {
    Image,
    Mask,
}

impl From<Region> for PsnrRegion {
    fn from(r: Region) -> Self {
        match r {
            Region::Image => PsnrRegion::Image,
            Region::Mask => PsnrRegion::Mask,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Backend {
    Patchmatch,
    Diffusion,
}

/// Bad invocation or input that the caller can fix; exits with 1.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return EXIT_INVALID;
        }
        if let Some(e) = cause.downcast_ref::<eraser_core::Error>() {
            return if e.is_validation() { EXIT_INVALID } else { EXIT_RUNTIME };
        }
    }
    EXIT_RUNTIME
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Erase(a) => cmd_erase(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Rectify(a) => cmd_rectify(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Inpaint(a) => cmd_inpaint(a),
        Command::Demo(d) => cmd_demo(d),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None => PipelineConfig::default(),
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
}

fn load_bundle(dir: &Path) -> anyhow::Result<eraser_core::scene::SceneBundle> {
    let loaded = load_scene(dir)?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", dir.display());
    }
    Ok(loaded.bundle)
}

fn cmd_erase(a: EraseArgs) -> anyhow::Result<()> {
    let config = load_config(a.config.as_deref())?;
    let bundle = load_bundle(&a.scene)?;
    let selection = if a.all { Selection::All } else { Selection::Ids(a.select) };
    let result = erase(&bundle, &selection, &config)?;
    save_rgb(&result.final_image, &a.out)?;
    if let Some(dir) = &a.dump {
        dump_debug(&result, dir)?;
    }
    for r in &result.per_plane {
        if let Some(reason) = r.skipped {
            log::info!("plane `{}` skipped: {reason:?}", r.plane_id);
        }
    }
    println!("{}", serde_json::to_string(&result.timings)?);
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MethodsFile {
    List(Vec<MethodSpec>),
    Full {
        methods: Vec<MethodSpec>,
        #[serde(default)]
        options: EvalOptions,
    },
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let (methods, mut options) = match read_json::<MethodsFile>(&a.methods)? {
        MethodsFile::List(m) => (m, EvalOptions::default()),
        MethodsFile::Full { methods, options } => (methods, options),
    };
    if methods.is_empty() {
        bail!(Invalid(format!("{}: no methods given", a.methods.display())));
    }
    if let Some(r) = a.psnr_region {
        options.psnr_region = r.into();
    }
    let report = evaluate(&a.dataset, &methods, &options)?;
    report.write(&a.report)?;
    for f in &report.failures {
        eprintln!("failed: {} / {}: {}", f.scene_id, f.method, f.error);
    }
    print!("{}", report.render_table());
    Ok(())
}

fn cmd_rectify(a: RectifyArgs) -> anyhow::Result<()> {
    let bundle = load_bundle(&a.scene)?;
    let plane = bundle.plane(&a.plane).ok_or_else(|| {
        let ids: Vec<&str> = bundle.planes.iter().map(|p| p.id.as_str()).collect();
        Invalid(format!("unknown plane `{}` (valid ids: {})", a.plane, ids.join(", ")))
    })?;
    let frame = compute_rectification(plane, &bundle.intrinsics, a.target_long_side)?;
    let (rectified, valid) = warp_image(&bundle.image, &frame.h_orig_to_rect, frame.dims());
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_rgb(&rectified, &a.out.join("rectified.png"))?;
    valid.save_png(&a.out.join("valid.png"))?;
    let record = FrameRecord::from(&frame);
    std::fs::write(a.out.join("frame.json"), serde_json::to_string_pretty(&record)?)?;
    println!("{}", serde_json::to_string(&record.h_orig_to_rect)?);
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> anyhow::Result<()> {
    let gt = load_rgb(&a.gt)?;
    let pred = load_rgb(&a.pred)?;
    let mask = BinaryMask::load_png(&a.mask)?;
    let params = match &a.params {
        Some(p) => read_json::<IncoherenceParams>(p)?,
        None => IncoherenceParams::default(),
    };
    params.validate()?;
    let inc = incoherence(&gt, &pred, &mask, &params)?;
    let region = match a.psnr_region {
        Region::Image => None,
        Region::Mask => Some(&mask),
    };
    let p = psnr(&gt, &pred, region)?;
    println!("incoherence {inc:?}");
    println!("psnr {p:?}");
    if let Some(path) = &a.lpips {
        let adapter: AdapterConfig = read_json(path)?;
        adapter.validate().map_err(|m| Invalid(format!("{}: {m}", path.display())))?;
        println!("lpips {:?}", lpips_external(&gt, &pred, &adapter)?);
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> anyhow::Result<()> {
    let port = match std::env::var("FE_PORT") {
        Ok(v) => v.trim().parse::<u16>().map_err(|_| Invalid(format!("FE_PORT is not a port number: `{v}`")))?,
        Err(_) => a.port,
    };
    let config = load_config(a.config.as_deref())?;
    let session = Session::new(load_bundle(&a.scene)?, config)?;
    let state = AppState::new(session);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime
        .block_on(serve(state, SocketAddr::new(a.host, port)))
        .with_context(|| format!("serving on {}:{port}", a.host))
}

fn cmd_inpaint(a: InpaintArgs) -> anyhow::Result<()> {
    let image = load_rgb(&a.input)?;
    let mask = BinaryMask::load_png(&a.mask)?;
    let backend = match a.backend {
        Backend::Patchmatch => BackendConfig::PatchMatch(PatchMatchParams { seed: a.seed, ..Default::default() }),
        Backend::Diffusion => BackendConfig::Diffusion,
    };
    let out = inpaint(&InpaintRequest::new(image, mask)?, &backend)?;
    save_rgb(&out, &a.output)?;
    Ok(())
}

fn cmd_demo(d: DemoCommand) -> anyhow::Result<()> {
    match d {
        DemoCommand::Room { out, width, height } => {
            let rendered = demo_room(width, height).render()?;
            save_scene(&rendered.bundle, &out)?;
            save_rgb(&rendered.empty, &out.join("empty.png"))?;
        }
        DemoCommand::Suite { out, width, height, seed } => {
            write_suite(&oblique_suite(width, height, seed)?, &out)?;
        }
    }
    Ok(())
}
