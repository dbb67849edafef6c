use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cousinforge::navsim::PolicyKind;
use cousinforge_cli::commands::{self, parse_floats, ArtifactKind};
use cousinforge_cli::config::PipelineConfig;
use cousinforge_cli::error::{CliError, CliResult};

#[derive(Clone, Copy, clap::ValueEnum)]
enum PolicyArg {
    Straight,
    Waypoint,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Straight => PolicyKind::Straight,
            PolicyArg::Waypoint => PolicyKind::Waypoint,
        }
    }
}

#[derive(Parser)]
#[command(name = "cousinforge", version, about = "Real-to-sim digital cousin scene generation")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply to anything unset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads. Output bytes do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fuse one clip bundle into a scene graph.
    Distill {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Rank cousin assets, ground materials and skies for a scene graph.
    Materialize {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        assets: PathBuf,
        #[arg(long)]
        materials: PathBuf,
        #[arg(long)]
        skies: PathBuf,
        /// Cousins per node; overrides `retrieval.k`.
        #[arg(short)]
        k: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Emit k cousin scenes from a graph and its selection.
    Generate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        assets: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the whole pipeline over every clip of a manifest.
    BuildLibrary {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        assets: PathBuf,
        #[arg(long)]
        materials: PathBuf,
        #[arg(long)]
        skies: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score a generated scene against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit E = beta * N^-alpha to a CSV with columns N,SR.
    ScalingFit {
        #[arg(long)]
        points: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run one navigation episode in a generated scene.
    Navsim {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "waypoint")]
        policy: PolicyArg,
        /// Start pose `x,y,theta`.
        #[arg(long, value_parser = parse_floats::<3>, allow_hyphen_values = true)]
        start: [f64; 3],
        /// Goal `x,y`; sampled from the seed when omitted.
        #[arg(long, value_parser = parse_floats::<2>, allow_hyphen_values = true)]
        goal: Option<[f64; 2]>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Schema-check an artifact file.
    Validate {
        path: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<ArtifactKind>,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::new("internal", e.to_string()))?;
    pool.install(|| match cli.cmd {
        Cmd::Distill { bundle, out } => commands::cmd_distill(&bundle, &out, &cfg),
        Cmd::Materialize { graph, assets, materials, skies, k, out } => {
            let mut cfg = cfg.clone();
            if let Some(k) = k {
                cfg.retrieval.k = k;
                cfg.validate()?;
            }
            commands::cmd_materialize(&graph, &assets, &materials, &skies, &out, &cfg)
        }
        Cmd::Generate { graph, selection, assets, out } => {
            commands::cmd_generate(&graph, &selection, &assets, &out, &cfg)
        }
        Cmd::BuildLibrary { manifest, assets, materials, skies, out } => {
            let index = commands::cmd_build_library(&manifest, &assets, &materials, &skies, &out, &cfg)?;
            log::info!("built {} scenes from {} clips", index.scene_count, index.clip_count);
            Ok(())
        }
        Cmd::Evaluate { pred, gt, out } => commands::cmd_evaluate(&pred, &gt, &out, &cfg).map(drop),
        Cmd::ScalingFit { points, out } => commands::cmd_scaling_fit(&points, &out, &cfg).map(drop),
        Cmd::Navsim { scene, policy, start, goal, seed, out } => {
            let seed = seed.unwrap_or(cfg.seed);
            commands::cmd_navsim(&scene, policy.into(), start, goal, seed, &out, &cfg).map(drop)
        }
        Cmd::Validate { path, kind } => {
            let v = commands::cmd_validate(&path, kind)?;
            println!("{}", serde_json::to_string(&v).expect("validation serializes"));
            Ok(())
        }
        Cmd::DefaultConfig => {
            print!("{}", PipelineConfig::default_toml());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COUSINFORGE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
