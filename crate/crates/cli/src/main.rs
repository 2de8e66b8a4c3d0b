mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "meshfield", version, about = "Quad-mesh neural-field textures: generation, transfer and toy training")]
struct Cli {
    /// Run configuration (JSON). Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct View {
    /// Camera azimuth in degrees.
    #[arg(long, default_value_t = 30.0)]
    azimuth: f64,
    /// Camera elevation in degrees.
    #[arg(long, default_value_t = 20.0)]
    elevation: f64,
    /// Image side in pixels (default from the config).
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Subdivide an OBJ quad mesh into a hierarchy and save it as QMH1.
    Hierarchy {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Render an unconditional texture sample.
    Generate {
        #[arg(long)]
        weights: PathBuf,
        /// QMH1 hierarchy or OBJ mesh.
        #[arg(long)]
        mesh: PathBuf,
        /// Seed of the latent z (defaults to --seed).
        #[arg(long, conflicts_with = "z_file")]
        z_seed: Option<u64>,
        /// JSON array holding z.
        #[arg(long)]
        z_file: Option<PathBuf>,
        #[command(flatten)]
        view: View,
        #[arg(long)]
        output: PathBuf,
    },
    /// Sample the field on an n x n grid per face and write one PNG tile per face.
    Bake {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        resolution: usize,
        #[arg(long)]
        z_seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit a texture to a single query image.
    Transfer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// 16-bit NOC image of the query.
        #[arg(long)]
        noc: Option<PathBuf>,
        #[arg(long, value_enum)]
        pose_mode: Option<PoseArg>,
        /// Query camera, needed by the exact and bins pose modes.
        #[arg(long, requires = "elevation")]
        azimuth: Option<f64>,
        #[arg(long, requires = "azimuth")]
        elevation: Option<f64>,
        /// Bin indices for the provided pose mode.
        #[arg(long, requires = "elevation_bin")]
        azimuth_bin: Option<usize>,
        #[arg(long, requires = "azimuth_bin")]
        elevation_bin: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Adversarial training on an image corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Starting weights; fresh ones from the config otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Ground-truth NOC render (16-bit PNG), plus the foreground mask.
    RenderNoc {
        #[arg(long)]
        mesh: PathBuf,
        #[command(flatten)]
        view: View,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Finite-difference and oracle checks.
    Selftest {
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Write fresh model weights (and the JSON architecture sidecar).
    Init {
        #[arg(long)]
        output: PathBuf,
    },
    /// Write the procedural training corpus as PNGs.
    Corpus {
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a built-in quad mesh as OBJ.
    MakeShape {
        #[arg(long, value_enum)]
        kind: ShapeKind,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the fully expanded configuration.
    InitConfig,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PoseArg {
    Exact,
    Bins,
    Provided,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ShapeKind {
    Cube,
    Sphere,
    Plane,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n >= 1, "--threads must be >= 1");
        meshfield::par::configure_threads(n);
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed;
    use commands as c;
    match cli.command {
        Command::Hierarchy { input, levels, output } => c::hierarchy(&input, levels, &output),
        Command::Generate {
            weights,
            mesh,
            z_seed,
            z_file,
            view,
            output,
        } => c::generate(&cfg, seed, &weights, &mesh, c::LatentSource::new(z_seed, z_file), &view, &output),
        Command::Bake {
            weights,
            mesh,
            resolution,
            z_seed,
            out_dir,
        } => c::bake(&cfg, seed, &weights, &mesh, resolution, z_seed, &out_dir),
        Command::Transfer {
            weights,
            mesh,
            query,
            mask,
            noc,
            pose_mode,
            azimuth,
            elevation,
            azimuth_bin,
            elevation_bin,
            out_dir,
        } => {
            let pose = c::PoseRequest {
                mode: pose_mode,
                camera: azimuth.zip(elevation),
                bins: azimuth_bin.zip(elevation_bin),
            };
            c::transfer(&cfg, seed, &weights, &mesh, &query, &mask, noc.as_deref(), pose, &out_dir)
        }
        Command::Train { corpus, weights, output } => c::train(&cfg, seed, &corpus, weights.as_deref(), &output),
        Command::RenderNoc { mesh, view, output, mask } => c::render_noc(&cfg, &mesh, &view, &output, mask.as_deref()),
        Command::Selftest { instances } => c::selftest(instances, seed.unwrap_or(0)),
        Command::Init { output } => c::init(&cfg, seed, &output),
        Command::Corpus { output } => c::corpus(&cfg, seed, &output),
        Command::MakeShape { kind, output } => c::make_shape(kind, &output),
        Command::InitConfig => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
