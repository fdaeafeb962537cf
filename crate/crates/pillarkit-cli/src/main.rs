//! Command-line surface for the pillar detection pipeline.
//!
//! Exit codes: 0 success, 1 input error (paths, formats, configuration),
//! 2 internal defect. Every command validates its configuration before
//! touching any output path, and all randomness descends from the config
//! seed, so identical invocations produce byte-identical files.

use clap::{Args, Parser, Subcommand};
use pillarkit::eval::{self, EvalScene};
use pillarkit::nn::{init_weights, load_weights, save_weights};
use pillarkit::pillar::sparsity_stats;
use pillarkit::pipeline::{Pipeline, PipelineConfig};
use pillarkit::scene::io::{
    read_labels, read_point_cloud, read_scene, write_detections, write_labels, write_point_cloud,
    PointFormat,
};
use pillarkit::scene::{count_points_in_box, synth_scene, PointCloud};
use pillarkit::{Error, NUM_CLASSES};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pillarkit", version, about = "Fine-grained pillar 3D detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes (point binary + label JSON) into a directory
    Synth(SynthArgs),
    /// Corpus statistics
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Write a deterministic weight file for the configured pipeline
    InitWeights(InitWeightsArgs),
    /// Run the detection pipeline over scenes, writing detection JSON
    Infer(InferArgs),
    /// Score detections against labels (AP / APH per class and level)
    Eval(EvalArgs),
    /// Per-stage latency statistics over repeated runs of one scene
    Bench(BenchArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline config JSON; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig, Error> {
        match &self.config {
            Some(path) => PipelineConfig::from_json_file(path),
            None => {
                let cfg = PipelineConfig::default();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Number of scenes to generate
    #[arg(long)]
    count: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Height histograms of scene points and per-class object points
    Height(StatsHeightArgs),
    /// Sub-pillar occupancy tables over split counts and grid sizes
    Sparsity(StatsSparsityArgs),
}

#[derive(Args)]
struct StatsHeightArgs {
    /// Scene .bin files or directories of them
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    bin_width: f64,
    #[arg(long, default_value_t = -3.0)]
    z_min: f64,
    #[arg(long, default_value_t = 3.0)]
    z_max: f64,
}

#[derive(Args)]
struct StatsSparsityArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated sub-pillar split counts
    #[arg(long, default_value = "1,2,4,6,8", value_delimiter = ',')]
    n_sub: Vec<usize>,
    /// Comma-separated grid sizes in meters
    #[arg(long, default_value = "0.32,0.16,0.08", value_delimiter = ',')]
    grid_sizes: Vec<f64>,
}

#[derive(Args)]
struct InitWeightsArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Seed override; defaults to the config seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Weight file; falls back to the config `weights` path
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Output directory for detection JSON files
    #[arg(long)]
    out: PathBuf,
    /// Scene-level parallelism; 1 keeps runs fully sequential
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Directory of detection JSON files (one per scene stem)
    #[arg(long)]
    detections: PathBuf,
    /// Directory of label JSON files with sibling .bin point clouds
    #[arg(long)]
    labels: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Weight file; when omitted, weights are initialized from the seed
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Scene .bin file to benchmark
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Output CSV path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, result) = match cli.command {
        Command::Synth(args) => ("synth", cmd_synth(args)),
        Command::Stats(StatsCommand::Height(args)) => ("stats height", cmd_stats_height(args)),
        Command::Stats(StatsCommand::Sparsity(args)) => {
            ("stats sparsity", cmd_stats_sparsity(args))
        }
        Command::InitWeights(args) => ("init-weights", cmd_init_weights(args)),
        Command::Infer(args) => ("infer", cmd_infer(args)),
        Command::Eval(args) => ("eval", cmd_eval(args)),
        Command::Bench(args) => ("bench", cmd_bench(args)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error [{stage}]: {err}");
            if err.is_defect() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Expand files and directories into a sorted list of `.bin` scene paths.
fn collect_scene_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Error> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut in_dir: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| io_err(input, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "bin"))
                .collect();
            in_dir.sort();
            files.extend(in_dir);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Config("no input scenes found".into()));
    }
    Ok(files)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let cfg = args.config.load()?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    for i in 0..args.count {
        // one generator stream per scene, offset from the config seed
        let mut synth_cfg = cfg.synth.clone();
        synth_cfg.seed = cfg.seed.wrapping_add(i as u64);
        let scene = synth_scene(&synth_cfg)?;
        let stem = format!("scene_{i:04}");
        write_point_cloud(
            &args.out.join(format!("{stem}.bin")),
            PointFormat::BinaryF32,
            &scene.cloud,
        )?;
        write_labels(&args.out.join(format!("{stem}.json")), &scene.labels)?;
    }
    println!("wrote {} scenes to {}", args.count, args.out.display());
    Ok(())
}

fn cmd_stats_height(args: StatsHeightArgs) -> Result<(), Error> {
    if !(args.bin_width > 0.0) || !(args.z_min < args.z_max) {
        return Err(Error::Config(
            "need bin_width > 0 and z_min < z_max".into(),
        ));
    }
    let files = collect_scene_files(&args.inputs)?;
    let range = (args.z_min, args.z_max);
    let n_bins = ((range.1 - range.0) / args.bin_width).ceil().max(1.0) as usize;
    // column 0: whole scene; columns 1..: points inside boxes of each class
    let mut counts = vec![[0usize; 1 + NUM_CLASSES]; n_bins];
    let mut centers: Option<Vec<f64>> = None;
    for file in &files {
        let scene = read_scene(file)?;
        let hist = pillarkit::scene::height_histogram(&scene.cloud, args.bin_width, range)?;
        if centers.is_none() {
            centers = Some(hist.iter().map(|(c, _)| *c).collect());
        }
        for (i, (_, c)) in hist.iter().enumerate() {
            counts[i][0] += c;
        }
        for label in &scene.labels {
            for p in scene.cloud.iter() {
                if label.bbox.contains(p[0] as f64, p[1] as f64, p[2] as f64) {
                    let z = p[2] as f64;
                    if z >= range.0 && z < range.1 {
                        let idx =
                            (((z - range.0) / args.bin_width) as usize).min(n_bins - 1);
                        counts[idx][1 + label.class_id] += 1;
                    }
                }
            }
        }
    }
    let mut csv = String::from("bin_center,scene,vehicle,pedestrian,cyclist\n");
    let centers = centers.expect("at least one scene");
    for (center, row) in centers.iter().zip(&counts) {
        csv.push_str(&format!(
            "{:.4},{},{},{},{}\n",
            center, row[0], row[1], row[2], row[3]
        ));
    }
    std::fs::write(&args.out, csv).map_err(|e| io_err(&args.out, e))?;
    println!("wrote height histogram over {} scenes", files.len());
    Ok(())
}

fn cmd_stats_sparsity(args: StatsSparsityArgs) -> Result<(), Error> {
    let cfg = args.config.load()?;
    if args.n_sub.is_empty() || args.grid_sizes.is_empty() {
        return Err(Error::Config("need at least one n_sub and grid size".into()));
    }
    let files = collect_scene_files(&args.inputs)?;
    let mut csv = String::from("scene,n_sub,grid_size,total_cells,occupied_cells,occupancy_ratio\n");
    for file in &files {
        let cloud = read_point_cloud(file, PointFormat::BinaryF32)?;
        let rows = sparsity_stats(&cloud, &cfg.grid, &args.n_sub, &args.grid_sizes)?;
        let stem = stem_of(file);
        for r in rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{:.8}\n",
                stem, r.n_sub, r.grid_size, r.total_cells, r.occupied_cells, r.occupancy_ratio
            ));
        }
    }
    std::fs::write(&args.out, csv).map_err(|e| io_err(&args.out, e))?;
    println!("wrote occupancy table over {} scenes", files.len());
    Ok(())
}

fn cmd_init_weights(args: InitWeightsArgs) -> Result<(), Error> {
    let cfg = args.config.load()?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let store = init_weights(&cfg.weight_specs()?, seed)?;
    save_weights(&store, &args.out)?;
    println!(
        "wrote {} tensors to {} (seed {seed})",
        store.len(),
        args.out.display()
    );
    Ok(())
}

fn load_pipeline(cfg: &PipelineConfig, weights: Option<&PathBuf>) -> Result<Pipeline, Error> {
    let store = match weights.or(cfg.weights.as_ref()) {
        Some(path) => load_weights(path)?,
        None => init_weights(&cfg.weight_specs()?, cfg.seed)?,
    };
    Pipeline::new(cfg, store)
}

fn cmd_infer(args: InferArgs) -> Result<(), Error> {
    let cfg = args.config.load()?;
    if args.threads < 1 {
        return Err(Error::Config("threads must be >= 1".into()));
    }
    let weights = args
        .weights
        .as_ref()
        .or(cfg.weights.as_ref())
        .cloned()
        .ok_or_else(|| Error::Config("no weights: pass --weights or set it in the config".into()))?;
    let store = load_weights(&weights)?;
    let pipeline = Pipeline::new(&cfg, store)?;
    let files = collect_scene_files(&args.inputs)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;

    let run_one = |file: &PathBuf| -> Result<(String, pillarkit::pipeline::StageTimings), Error> {
        let cloud = read_point_cloud(file, PointFormat::BinaryF32)?;
        let (dets, timings) = pipeline.infer(&cloud)?;
        let stem = stem_of(file);
        write_detections(&args.out.join(format!("{stem}.json")), &dets)?;
        Ok((stem, timings))
    };
    let results: Vec<Result<_, Error>> = if args.threads == 1 {
        files.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            files.par_iter().map(run_one).collect()
        })
    };
    for result in results {
        let (stem, timings) = result?;
        let line: Vec<String> = timings
            .stages()
            .iter()
            .map(|(name, ms)| format!("{name} {ms:.2} ms"))
            .collect();
        eprintln!("[{stem}] {}", line.join(" | "));
    }
    println!("wrote detections for {} scenes to {}", files.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let cfg = args.config.load()?;
    let mut label_files: Vec<PathBuf> = std::fs::read_dir(&args.labels)
        .map_err(|e| io_err(&args.labels, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    label_files.sort();
    if label_files.is_empty() {
        return Err(Error::Config(format!(
            "no label JSON files in {}",
            args.labels.display()
        )));
    }
    let mut scenes = Vec::new();
    for label_file in &label_files {
        let labels = read_labels(label_file)?;
        let cloud_path = label_file.with_extension("bin");
        let cloud = if cloud_path.exists() {
            read_point_cloud(&cloud_path, PointFormat::BinaryF32)?
        } else {
            PointCloud::new()
        };
        let det_path = args.detections.join(
            label_file
                .file_name()
                .expect("label files have names"),
        );
        let detections = if det_path.exists() {
            pillarkit::scene::io::read_detections(&det_path)?
        } else {
            Vec::new()
        };
        let gts = labels
            .iter()
            .map(|l| pillarkit::eval::EvalGt {
                bbox: l.bbox,
                class_id: l.class_id,
                num_points: count_points_in_box(&cloud, &l.bbox),
            })
            .collect();
        scenes.push(EvalScene { detections, gts });
    }
    let result = eval::evaluate(&scenes, &cfg.eval)?;
    std::fs::write(&args.out, eval::result_csv(&result)).map_err(|e| io_err(&args.out, e))?;
    print!("{}", eval::result_summary(&result));
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Error> {
    let cfg = args.config.load()?;
    if args.reps < 1 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    let pipeline = load_pipeline(&cfg, args.weights.as_ref())?;
    let cloud = read_point_cloud(&args.scene, PointFormat::BinaryF32)?;
    let mut samples: Vec<Vec<f64>> = Vec::new();
    let mut stage_names: Vec<&'static str> = Vec::new();
    for _ in 0..args.reps {
        let (_, timings) = pipeline.infer(&cloud)?;
        if stage_names.is_empty() {
            stage_names = timings.stages().iter().map(|(n, _)| *n).collect();
            samples = vec![Vec::with_capacity(args.reps); stage_names.len()];
        }
        for (i, (_, ms)) in timings.stages().iter().enumerate() {
            samples[i].push(*ms);
        }
    }
    let mut csv = String::from("stage,min_ms,median_ms,p95_ms\n");
    for (name, series) in stage_names.iter().zip(&mut samples) {
        series.sort_by(f64::total_cmp);
        let min = series[0];
        let median = series[series.len() / 2];
        let p95 = series[((series.len() as f64 * 0.95) as usize).min(series.len() - 1)];
        csv.push_str(&format!("{name},{min:.3},{median:.3},{p95:.3}\n"));
    }
    match &args.out {
        Some(path) => std::fs::write(path, csv).map_err(|e| io_err(path, e))?,
        None => print!("{csv}"),
    }
    eprintln!("benchmarked {} reps on {}", args.reps, args.scene.display());
    Ok(())
}
