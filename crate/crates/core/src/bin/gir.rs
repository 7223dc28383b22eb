use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use gir::envlight::build_dfg_lut;
use gir::io::checkpoint::{write_log, LOG_FILE};
use gir::io::{export_buffers, load_dataset, load_scene, load_views, read_env, write_png, Checkpoint, Pfm};
use gir::optim::{random_init, TrainConfig, Trainer};
use gir::raster::{Camera, RenderMode};
use gir::service::{serve, ServiceState};
use gir::session::{display_image, edit_materials, MaterialOverrides, RenderRequest, RenderSession, Selection};

#[derive(Parser)]
#[command(name = "gir", version, about = "Gaussian inverse rendering: train, render, relight and edit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a scene and environment to a posed dataset.
    Train(TrainArgs),
    /// Render one view of a checkpoint.
    Render(RenderArgs),
    /// Render views of a checkpoint under a new environment.
    Relight(RelightArgs),
    /// Apply a material edit and write a new checkpoint.
    EditMaterial(EditArgs),
    /// Write every buffer of one view as PNG and PFM.
    ExportBuffers(ExportArgs),
    /// Precompute the DFG table.
    BuildLut(LutArgs),
    /// Run the HTTP render service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root containing transforms_train.json.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Dataset split to train on.
    #[arg(long, default_value = "train")]
    split: String,
    /// Training configuration as JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initial scene archive; otherwise Gaussians are placed at random.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Number of random initial Gaussians.
    #[arg(long, default_value_t = 5000)]
    init_count: usize,
}

#[derive(Args, Clone)]
struct ViewArgs {
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Training view index supplying the camera.
    #[arg(long, default_value_t = 0)]
    view: usize,
    /// Image size override as WIDTHxHEIGHT, keeping the field of view.
    #[arg(long)]
    size: Option<String>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    view: ViewArgs,
    /// shaded, albedo, normal, roughness, metallic or depth.
    #[arg(long, default_value = "shaded")]
    mode: RenderMode,
    /// Environment (.hdr or .pfm) replacing the trained one.
    #[arg(long)]
    env: Option<PathBuf>,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Output PNG; a PFM with the raw buffer is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RelightArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// New environment (.hdr or .pfm).
    #[arg(long)]
    env: PathBuf,
    /// View indices to render; all training views when omitted.
    #[arg(long, value_delimiter = ',')]
    views: Vec<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Clone, Copy)]
struct OverrideArgs {
    /// Added to every roughness.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    d_roughness: f64,
    /// Added to every metallic value.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    d_metallic: f64,
    /// Albedo multiplier as R,G,B.
    #[arg(long)]
    albedo_tint: Option<Tint>,
}

#[derive(Clone, Copy)]
struct Tint([f64; 3]);

impl std::str::FromStr for Tint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        match v[..] {
            [r, g, b] => Ok(Tint([r, g, b])),
            _ => Err(format!("expected R,G,B, got {} values", v.len())),
        }
    }
}

impl OverrideArgs {
    fn overrides(&self) -> MaterialOverrides {
        MaterialOverrides {
            d_roughness: self.d_roughness,
            d_metallic: self.d_metallic,
            albedo_tint: self.albedo_tint.map_or([1.0; 3], |t| t.0),
        }
    }
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `all`, `box:x0,y0,z0,x1,y1,z1` or e.g. `metallic>0.5`.
    #[arg(long, default_value = "all")]
    select: Selection,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    view: ViewArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct LutArgs {
    #[arg(long, default_value_t = 64)]
    res: usize,
    /// Output PFM; red holds the scale term, green the bias term.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

fn parse_size(s: &str) -> anyhow::Result<(usize, usize)> {
    let (w, h) = s.split_once('x').context("size must look like 640x480")?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}

fn resize(cam: &Camera, (w, h): (usize, usize)) -> gir::Result<Camera> {
    let f = cam.fx * w as f64 / cam.width as f64;
    Camera::new(w, h, f, f, cam.rotation, cam.position)
}

fn load_camera(ck: &Checkpoint, args: &ViewArgs) -> anyhow::Result<Camera> {
    let cam = *ck
        .cameras
        .get(args.view)
        .with_context(|| format!("view {} out of range (checkpoint has {})", args.view, ck.cameras.len()))?;
    Ok(match &args.size {
        Some(s) => resize(&cam, parse_size(s)?)?,
        None => cam,
    })
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn lighting_for(session: &RenderSession, ck: &Checkpoint, env: Option<&Path>) -> anyhow::Result<Arc<gir::envlight::Lighting>> {
    let env = match env {
        Some(p) => read_env(p).with_context(|| format!("reading environment {}", p.display()))?,
        None => ck.generator.generate(),
    };
    Ok(session.prepare_lighting(&env)?)
}

fn raw_name(mode: RenderMode) -> &'static str {
    match mode {
        RenderMode::Shaded => "color",
        m => m.name(),
    }
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut config: TrainConfig = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(n) = a.iterations {
        config.iterations = n;
        config.densify.until = config.densify.until.min(n);
        config.mask_activation = config.mask_activation.map(|m| m.min(n));
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let manifest = load_dataset(&a.data, &a.split)?;
    let views = load_views(&manifest)?;
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera).collect();
    let scene = match &a.init {
        Some(p) => load_scene(p)?.scene,
        None => random_init(&cameras, a.init_count, config.seed)?,
    };
    log::info!("training {} Gaussians on {} views for {} iterations", scene.len(), views.len(), config.iterations);
    let mut trainer = Trainer::new(scene, views, config)?;
    let every = (trainer.config.iterations / 20).max(1);
    while trainer.iteration < trainer.config.iterations {
        let next = (trainer.iteration + every).min(trainer.config.iterations);
        trainer.run_until(next)?;
        if let Some(r) = trainer.log.last() {
            println!("iter {:6} loss {:.5} gaussians {}", r.iteration, r.loss.total, r.gaussians);
        }
    }
    let ck = Checkpoint {
        scene: trainer.scene,
        generator: trainer.generator,
        config: trainer.config,
        cameras,
    };
    ck.save(&a.out)?;
    write_log(a.out.join(LOG_FILE), &trainer.log)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_render(a: RenderArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&a.view.checkpoint)?;
    let session = RenderSession::from_checkpoint(&ck)?;
    let lighting = lighting_for(&session, &ck, a.env.as_deref())?;
    let req = RenderRequest {
        camera: load_camera(&ck, &a.view)?,
        mode: a.mode,
        overrides: a.overrides.overrides(),
    };
    let fb = session.render_buffers(&lighting, &req)?;
    write_png(&a.out, &display_image(&fb, a.mode)?)?;
    let raw = export_buffers(&fb)?
        .into_iter()
        .find(|b| b.name == raw_name(a.mode))
        .expect("every mode has a buffer");
    let pfm_path = a.out.with_extension("pfm");
    raw.raw.save(&pfm_path)?;
    println!("wrote {} and {}", a.out.display(), pfm_path.display());
    Ok(())
}

fn cmd_relight(a: RelightArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let session = RenderSession::from_checkpoint(&ck)?;
    let lighting = lighting_for(&session, &ck, Some(&a.env))?;
    let views: Vec<usize> = if a.views.is_empty() { (0..ck.cameras.len()).collect() } else { a.views.clone() };
    std::fs::create_dir_all(&a.out_dir)?;
    for i in views {
        let camera = *ck.cameras.get(i).with_context(|| format!("view {i} out of range"))?;
        let req = RenderRequest {
            camera,
            mode: RenderMode::Shaded,
            overrides: MaterialOverrides::default(),
        };
        let path = a.out_dir.join(format!("view_{i:03}.png"));
        std::fs::write(&path, session.render_png(&lighting, &req)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_edit(a: EditArgs) -> anyhow::Result<()> {
    let mut ck = load_checkpoint(&a.checkpoint)?;
    let n = edit_materials(&mut ck.scene, &a.select, &a.overrides.overrides())?;
    ck.save(&a.out)?;
    println!("edited {n} of {} Gaussians; wrote {}", ck.scene.len(), a.out.display());
    Ok(())
}

fn cmd_export(a: ExportArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&a.view.checkpoint)?;
    let session = RenderSession::from_checkpoint(&ck)?;
    let lighting = lighting_for(&session, &ck, None)?;
    let req = RenderRequest {
        camera: load_camera(&ck, &a.view)?,
        mode: RenderMode::Shaded,
        overrides: MaterialOverrides::default(),
    };
    let fb = session.render_buffers(&lighting, &req)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for b in export_buffers(&fb)? {
        write_png(a.out_dir.join(format!("{}.png", b.name)), &b.display)?;
        b.raw.save(a.out_dir.join(format!("{}.pfm", b.name)))?;
    }
    println!("wrote buffers to {}", a.out_dir.display());
    Ok(())
}

fn cmd_lut(a: LutArgs) -> anyhow::Result<()> {
    let lut = build_dfg_lut(a.res)?;
    let r = lut.resolution();
    // Rows index roughness, columns cos(theta_v).
    let data = lut.entries().iter().flat_map(|e| [e[0] as f32, e[1] as f32, 0.0]).collect();
    Pfm::new(r, r, 3, data)?.save(&a.out)?;
    println!("wrote {}x{} table to {}", r, r, a.out.display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let state = Arc::new(ServiceState::from_checkpoint(&ck)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        use std::io::Write;
        std::io::stdout().flush()?;
        serve(listener, state).await?;
        anyhow::Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    gir::init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Relight(a) => cmd_relight(a),
        Command::EditMaterial(a) => cmd_edit(a),
        Command::ExportBuffers(a) => cmd_export(a),
        Command::BuildLut(a) => cmd_lut(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
