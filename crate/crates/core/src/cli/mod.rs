//! The `fsc` command surface. Logs and the resolved configuration go to
//! stderr; data goes to files only.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use crate::datagen::{build_dataset, load_mesh_dir, toy_sources, write_toy_meshes, GenConfig, Manifest, SplitRatios};
use crate::descriptor::{retention_curve, FpfhParams, NormalSource, RetentionCurve};
use crate::error::{FscError, Result};
use crate::geom::ply::{read_cloud, write_bytes, write_cloud, PlyFormat};
use crate::model::{checkpoint, AblationFlags, ModelConfig, Preset};
use crate::plot::{LineChart, Series};
use crate::training::eval::{evaluate, EvalOptions, EvalReport};
use crate::training::{prepare_samples, train, StepStats, TrainConfig, TrainState};

#[derive(Debug, Parser)]
#[command(name = "fsc", version, about = "Few-point shape completion toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the procedural toy meshes to a directory.
    Meshes(MeshesArgs),
    /// Build a dataset: ground truth, partial views and coarse targets.
    Gen(GenArgs),
    /// FPFH entropy retained by random subsets.
    Entropy(EntropyArgs),
    /// Train a completion model.
    Train(TrainArgs),
    /// Evaluate a checkpoint across input resolutions.
    Eval(EvalArgs),
    /// Complete a single point cloud.
    Complete(CompleteArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct MeshesArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// Directory of .obj/.ply meshes. Without it the built-in toy shapes are used.
    #[arg(long)]
    pub meshes: Option<PathBuf>,
    /// Number of toy shapes when `--meshes` is absent.
    #[arg(long, default_value_t = 20)]
    pub toy: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16_384)]
    pub gt_points: usize,
    #[arg(long, default_value_t = 2048)]
    pub partial: usize,
    #[arg(long, value_delimiter = ',', default_value = "1024,512,256,128,64")]
    pub levels: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    pub coarse: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// train,val,test ratios.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    pub split: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub views: usize,
    /// Draw every level from the full partial view instead of the previous level.
    #[arg(long)]
    pub independent_levels: bool,
    #[arg(long)]
    pub ascii: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalsArg {
    Carried,
    Reestimate,
}

#[derive(Debug, Args, Serialize)]
pub struct EntropyArgs {
    /// Dataset root; ground-truth clouds of `--split` are analysed.
    #[arg(long, conflicts_with = "input")]
    pub data: Option<PathBuf>,
    /// Single PLY cloud to analyse.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Split to read, or every split when absent.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "16384,8192,4096,2048,1024,512,256,128,64")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::descriptor::DEFAULT_RADIUS)]
    pub radius: f64,
    #[arg(long, default_value_t = crate::descriptor::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = crate::descriptor::DEFAULT_VOXEL)]
    pub voxel: f64,
    #[arg(long, value_enum, default_value = "carried")]
    pub normals: NormalsArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long, default_value = "tiny")]
    pub preset: Preset,
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub ckpt_out: PathBuf,
    /// Continue from a saved training state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Input resolutions drawn during training; defaults to every stored level.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// Weight of the adversarial terms.
    #[arg(long)]
    pub adv_weight: Option<f64>,
    #[arg(long)]
    pub gp_lambda: Option<f64>,
    /// Model components to switch off, e.g. `salient_branch,point_revision`.
    #[arg(long, value_delimiter = ',')]
    pub disable: Vec<String>,
    /// Save the state every N steps in addition to the end.
    #[arg(long)]
    pub save_every: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Input resolutions; defaults to every stored level.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// Report path; `.json` writes JSON, anything else CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub no_emd: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct CompleteArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub ascii: bool,
}

fn print_config(command: &str, value: &Value) {
    eprintln!("config {}", json!({ "command": command, "resolved": value }));
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

fn ply_format(ascii: bool) -> PlyFormat {
    if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn cmd_meshes(a: &MeshesArgs) -> Result<()> {
    print_config("meshes", &to_value(a));
    let paths = write_toy_meshes(&a.out, a.count, a.seed)?;
    info!("wrote {} meshes to {}", paths.len(), a.out.display());
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let [train, val, test] = a.split[..] else {
        return Err(FscError::Config(format!("--split needs three ratios, got {:?}", a.split)));
    };
    let cfg = GenConfig {
        gt_points: a.gt_points,
        partial_points: a.partial,
        levels: a.levels.clone(),
        coarse_points: a.coarse,
        seed: a.seed,
        split: SplitRatios { train, val, test },
        nested: !a.independent_levels,
        views_per_mesh: a.views,
        binary_ply: !a.ascii,
        ..GenConfig::default()
    };
    cfg.validate()?;
    print_config("gen", &json!({ "meshes": a.meshes, "toy": a.toy, "out": a.out, "gen": cfg }));
    let sources = match &a.meshes {
        Some(dir) => load_mesh_dir(dir)?,
        None => toy_sources(a.toy, a.seed),
    };
    let t = Instant::now();
    let manifest = build_dataset(&sources, &cfg, &a.out)?;
    for (name, entries) in &manifest.splits {
        info!("split {name}: {} samples", entries.len());
    }
    info!("dataset written to {} in {:.1}s", a.out.display(), t.elapsed().as_secs_f64());
    Ok(())
}

pub fn retention_csv(curve: &RetentionCurve) -> String {
    let mut s = String::from("size,mean_S,mean_fraction,stddev\n");
    for i in 0..curve.sizes.len() {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", curve.sizes[i], curve.mean_entropy[i], curve.mean_fraction[i], curve.stddev[i]);
    }
    s
}

fn cmd_entropy(a: &EntropyArgs) -> Result<()> {
    let params = FpfhParams {
        radius: a.radius,
        bins: a.bins,
        voxel: a.voxel,
        normals: match a.normals {
            NormalsArg::Carried => NormalSource::Carried,
            NormalsArg::Reestimate => NormalSource::Reestimate,
        },
        ..FpfhParams::default()
    };
    print_config("entropy", &json!({ "args": a, "fpfh": params }));
    let clouds = match (&a.data, &a.input) {
        (Some(root), None) => {
            let manifest = Manifest::load(root)?;
            let names: Vec<String> = match &a.split {
                Some(s) => vec![s.clone()],
                None => manifest.splits.keys().cloned().collect(),
            };
            let mut clouds = Vec::new();
            for name in names {
                for e in manifest.split(&name)? {
                    clouds.push(read_cloud(&root.join(&e.gt))?);
                }
            }
            clouds
        }
        (None, Some(path)) => vec![read_cloud(path)?],
        _ => return Err(FscError::InvalidValue("give exactly one of --data or --input".into())),
    };
    let smallest = clouds.iter().map(|c| c.len()).min().ok_or(FscError::EmptyInput)?;
    let sizes: Vec<usize> = a.sizes.iter().copied().filter(|&s| s <= smallest).collect();
    if sizes.len() < a.sizes.len() {
        info!("sizes above {smallest} points dropped");
    }
    let curves = clouds
        .iter()
        .map(|c| retention_curve(c, &sizes, a.trials, a.seed, &params))
        .collect::<Result<Vec<_>>>()?;
    let curve = RetentionCurve::average(&curves)?;
    write_text(&a.out, &retention_csv(&curve))?;
    if let Some(svg) = &a.svg {
        let points = curve.sizes.iter().zip(&curve.mean_fraction).map(|(&s, &f)| (s as f64, f)).collect();
        let chart = LineChart::new("FPFH entropy retained by subsets", "points", "entropy fraction", true)
            .with_series(Series::new(format!("{} clouds", curves.len()), points));
        write_text(svg, &chart.to_svg())?;
    }
    for (s, f) in curve.sizes.iter().zip(&curve.mean_fraction) {
        info!("{s:>6} points: fraction {f:.4}");
    }
    Ok(())
}

/// Turns off the named ablation switches.
pub fn disable_components(flags: &mut AblationFlags, names: &[String]) -> Result<()> {
    let mut v = to_value(flags);
    let map = v.as_object_mut().expect("flags are an object");
    for name in names {
        match map.get_mut(name) {
            Some(slot) => *slot = Value::Bool(false),
            None => {
                let known: Vec<&String> = map.keys().collect();
                return Err(FscError::Config(format!("unknown component {name:?}; known: {known:?}")));
            }
        }
    }
    *flags = serde_json::from_value(v).expect("flags deserialize");
    Ok(())
}

pub const LOG_HEADER: &str =
    "step,resolution,alpha,d1,d2,loss,critic_feature,critic_point,adv_feature,adv_point,cd_l1,wall_ms\n";

pub fn log_row(s: &StepStats) -> String {
    format!(
        "{},{},{:.6},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.6},{:.3}\n",
        s.step, s.resolution, s.alpha, s.d1, s.d2, s.loss, s.critic_feature, s.critic_point, s.adv_feature, s.adv_point, s.cd_l1, s.wall_ms
    )
}

fn train_config(a: &TrainArgs, manifest: &Manifest) -> Result<TrainConfig> {
    let mut model = ModelConfig::preset(a.preset);
    disable_components(&mut model.flags, &a.disable)?;
    let mut cfg = TrainConfig::new(model, a.steps, a.seed);
    if let Some(lr) = a.lr {
        cfg.optim.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.levels = a.levels.clone().unwrap_or_else(|| manifest.config.resolutions());
    if let Some(w) = a.adv_weight {
        cfg.loss.adv_weight = w;
    }
    if let Some(g) = a.gp_lambda {
        cfg.loss.gp_lambda = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let manifest = Manifest::load(&a.data)?;
    let mut state = match &a.resume {
        Some(path) => {
            let mut s = TrainState::load(path)?;
            s.config.steps = a.steps;
            s
        }
        None => TrainState::new(train_config(a, &manifest)?)?,
    };
    print_config("train", &json!({ "args": a, "train": state.config }));
    let samples = manifest.load_split(&a.data, &a.split)?;
    if samples.is_empty() {
        return Err(FscError::InvalidValue(format!("split {:?} is empty", a.split)));
    }
    let data = prepare_samples(samples, state.config.model.n_coarse)?;
    let levels = &state.config.levels;
    if let Some(s) = data.iter().find(|s| levels.iter().any(|&r| crate::training::eval::input_at(&s.sample, r).is_err())) {
        return Err(FscError::Config(format!("sample {} lacks an input resolution among {levels:?}", s.sample.id)));
    }
    let mut log = String::from(LOG_HEADER);
    let log_every = (a.steps / 20).max(1);
    train(&mut state, &data, a.steps, |st, s| {
        log.push_str(&log_row(s));
        if (s.step + 1) % log_every == 0 {
            info!("step {:>6} d1 {:.5} d2 {:.5} cd_l1 {:.2} ({:.0} ms)", s.step + 1, s.d1, s.d2, s.cd_l1, s.wall_ms);
        }
        if a.save_every.is_some_and(|e| e > 0 && st.step % e == 0) {
            st.save(&a.ckpt_out)?;
        }
        Ok(())
    })?;
    state.save(&a.ckpt_out)?;
    if let Some(path) = &a.log {
        write_text(path, &log)?;
    }
    info!("saved {} after {} steps", a.ckpt_out.display(), state.step);
    Ok(())
}

pub fn degradation_chart(report: &EvalReport) -> LineChart {
    let points = report.curve().into_iter().map(|(r, cd)| (r as f64, cd)).collect();
    LineChart::new("Completion error by input size", "input points", "CD-l1 x 1000", true)
        .with_series(Series::new("all categories", points))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let manifest = Manifest::load(&a.data)?;
    let model = checkpoint::load_model(&a.ckpt)?;
    let opts = EvalOptions { split: a.split.clone(), resolutions: a.levels.clone().unwrap_or_else(|| manifest.config.resolutions()), with_l2: true, with_emd: !a.no_emd };
    print_config("eval", &json!({ "args": a, "model": model.config, "eval": opts }));
    let report = evaluate(&model, &a.data, &manifest, &opts)?;
    for f in &report.failures {
        log::warn!("{}: {}", f.id, f.message);
    }
    if report.rows.is_empty() {
        return Err(FscError::InvalidValue(format!("no sample of split {:?} could be evaluated", a.split)));
    }
    let json_out = a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    write_text(&a.out, &if json_out { report.to_json() } else { report.to_csv() })?;
    if let Some(svg) = &a.svg {
        write_text(svg, &degradation_chart(&report).to_svg())?;
    }
    for (r, cd) in report.curve() {
        info!("{r:>5} points: CD-l1 x 1000 = {cd:.3}");
    }
    Ok(())
}

fn cmd_complete(a: &CompleteArgs) -> Result<()> {
    let model = checkpoint::load_model(&a.ckpt)?;
    print_config("complete", &json!({ "args": a, "model": model.config }));
    let input = read_cloud(&a.input)?;
    let t = Instant::now();
    let out = model.complete(&input)?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    write_cloud(&a.output, &out.y_detail, ply_format(a.ascii))?;
    eprintln!("n_in {} m_out {} inference_ms {ms:.1}", input.len(), out.y_detail.len());
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("FSC_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| FscError::Config(format!("FSC_THREADS must be a positive integer, got {v:?}")))?;
    // Fails only if a pool already exists, which is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Meshes(a) => cmd_meshes(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Entropy(a) => cmd_entropy(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Complete(a) => cmd_complete(a),
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
