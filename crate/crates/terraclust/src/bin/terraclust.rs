use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use terraclust::mts::DistanceMode;
use terraclust::pipeline::{
    run_all, stage_analyze, stage_cluster_geo, stage_embed_geo, stage_refine, stage_synth,
    stage_train_geo, PipelineConfig,
};

#[derive(Parser)]
#[command(
    name = "terraclust",
    about = "Unsupervised zoning of raster image sequences via triplet embeddings and K-means"
)]
struct Cli {
    /// Pipeline configuration JSON; omitted, a built-in synthetic-scene
    /// default is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Cluster count override for the refinement stage.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Distance between embedding sequences.
    #[arg(long, value_enum, global = true)]
    distance_mode: Option<DistanceMode>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and persist the synthetic scene.
    Synth,
    /// Sample geographic triplets and train the first-stage encoder.
    TrainGeo,
    /// Embed every tile sequence with the geographic encoder.
    Embed,
    /// Cluster the geographic embedding for every requested K.
    Cluster,
    /// Sample cluster triplets, refine the encoder, re-embed, re-cluster.
    Refine,
    /// Emit maps, projections, trees, scores, and the baseline comparison.
    Analyze,
    /// Run every stage in order and write the manifest.
    RunAll,
}

fn build_config(cli: &Cli) -> terraclust::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::desk_default(PathBuf::from("terraclust_out")),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(k) = cli.k {
        cfg.kmeans.k = k;
        if !cfg.k_list.contains(&k) {
            cfg.k_list.push(k);
        }
    }
    if let Some(mode) = cli.distance_mode {
        cfg.kmeans.mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> terraclust::Result<()> {
    let cfg = build_config(cli)?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| terraclust::Error::io(cfg.out.clone(), e))?;
    match cli.command {
        Command::Synth => stage_synth(&cfg).map_err(|e| e.in_stage("synth")),
        Command::TrainGeo => stage_train_geo(&cfg).map_err(|e| e.in_stage("train-geo")),
        Command::Embed => stage_embed_geo(&cfg).map_err(|e| e.in_stage("embed")),
        Command::Cluster => stage_cluster_geo(&cfg).map_err(|e| e.in_stage("cluster")),
        Command::Refine => stage_refine(&cfg).map_err(|e| e.in_stage("refine")),
        Command::Analyze => stage_analyze(&cfg).map_err(|e| e.in_stage("analyze")),
        Command::RunAll => run_all(&cfg).map(|manifest| {
            for record in &manifest.stages {
                eprintln!("{:<10} {:.2}s", record.stage, record.seconds);
            }
            println!("{}", cfg.out.join("manifest.json").display());
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
