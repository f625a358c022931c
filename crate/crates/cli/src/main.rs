mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use uvpose_core::harness::{self, CoordMode, RobustParams, BREAKDOWN_CSV_HEADER};
use uvpose_core::io::{self, fmt_sig, Archive, ObjectAnnotation};
use uvpose_core::metrics::{self, FrameRecord, ModelPoints, AUC_MAX_THRESHOLD};
use uvpose_core::scene::{generate_scene, SceneConfig};
use uvpose_core::solver::{robust_solve, solve_pose_from_pixels, Observations};
use uvpose_core::{
    encode_normals, encode_pe, encode_plain_uv, encode_xy, umeyama, CameraIntrinsics, Error, PeConfig,
    TransformSpec,
};

use manifest::{hash_config, ManifestBuilder, StageTimer};

const DEFAULT_OCCLUSION_EDGES: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 1.0];

#[derive(Parser)]
#[command(name = "uvpose", version, about = "Geometry, transform and pose-evaluation experiments on RGB-D frames")]
#[command(after_help = "Environment:\n  UNI6D_THREADS  worker thread cap (0 or unset = all cores)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into a frame archive.
    Gen {
        /// Scene configuration JSON. Defaults to the standard three-object scene.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output archive directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Add coordinate channels to an archive.
    Encode {
        /// Input archive directory.
        #[arg(long)]
        input: PathBuf,
        /// Output archive directory.
        #[arg(long)]
        out: PathBuf,
        /// Plain U/V channels (pixel column and row).
        #[arg(long)]
        uv: bool,
        /// Normalized X/Y ray channels.
        #[arg(long)]
        xy: bool,
        /// Sinusoidal encoding with this many planes (multiple of 4); needs U/V.
        #[arg(long, value_name = "D")]
        pe: Option<usize>,
        /// Surface normals from depth.
        #[arg(long)]
        nrm: bool,
    },
    /// Apply a transform sequence to every plane of an archive.
    Transform {
        /// Input archive directory.
        #[arg(long)]
        input: PathBuf,
        /// Transform sequence JSON, e.g. [{"op":"crop","roi":[100,50,540,430]},{"op":"hflip"}].
        #[arg(long)]
        spec: PathBuf,
        /// Output archive directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover object poses from an archive or a correspondence CSV.
    Solve {
        /// Archive directory, or CSV with header a,b,c,u,v,d[,w] or a,b,c,x,y,z[,w].
        #[arg(long)]
        input: PathBuf,
        /// Intrinsics JSON, required for a pixel-observation CSV.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        /// Where pixel coordinates come from when solving an archive.
        #[arg(long, value_enum, default_value_t = ModeArg::Uv)]
        mode: ModeArg,
        /// Fraction of worst pairs dropped per refit, in [0, 0.5).
        #[arg(long, default_value_t = 0.0)]
        trim: f64,
        /// Refit iterations when trimming.
        #[arg(long, default_value_t = 3)]
        iters: usize,
        /// Output pose JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Projection residuals and pose errors under both coordinate sources.
    Breakdown {
        /// `identity`, `standard` (five resize/crop/flip combinations), or a JSON file
        /// holding one transform sequence or an object of named sequences.
        #[arg(long, default_value = "standard")]
        spec: String,
        /// Scene configuration JSON. Defaults to the standard scene.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score pose predictions against ground truth.
    Eval {
        /// Prediction pose JSON, or a directory of `<frame>.json` files.
        #[arg(long)]
        pred: PathBuf,
        /// Ground truth: a pose JSON, a directory of `<frame>.json` files, or a
        /// directory of archives each holding `pose.json`.
        #[arg(long)]
        gt: PathBuf,
        /// Directory of `<name>.xyz` models with JSON sidecars.
        #[arg(long)]
        models: PathBuf,
        /// Output directory for metrics.csv, occlusion.csv and auc_curve.csv.
        #[arg(long)]
        out: PathBuf,
        /// Occlusion bin edges, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_OCCLUSION_EDGES)]
        occlusion_edges: Vec<f64>,
        /// Threshold samples in the accuracy curve.
        #[arg(long, default_value_t = 100)]
        curve_steps: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    Builtin,
    Uv,
}

impl From<ModeArg> for CoordMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Builtin => CoordMode::Builtin,
            ModeArg::Uv => CoordMode::UvChannel,
        }
    }
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_degenerate() { 3 } else { 2 })
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("UNI6D_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| format!("UNI6D_THREADS must be a non-negative integer, got {v:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(cmd: Command) -> Outcome<()> {
    match cmd {
        Command::Gen { config, seed, out } => gen(config, seed, &out),
        Command::Encode { input, out, uv, xy, pe, nrm } => encode(&input, &out, uv, xy, pe, nrm),
        Command::Transform { input, spec, out } => transform(&input, &spec, &out),
        Command::Solve { input, intrinsics, mode, trim, iters, out } => {
            solve(&input, intrinsics.as_deref(), mode, trim, iters, &out)
        }
        Command::Breakdown { spec, config, seed, out } => breakdown(&spec, config.as_deref(), seed, &out),
        Command::Eval { pred, gt, models, out, occlusion_edges, curve_steps } => {
            eval(&pred, &gt, &models, &out, &occlusion_edges, curve_steps)
        }
    }
}

fn load_scene_config(path: Option<&Path>, seed: Option<u64>) -> Outcome<SceneConfig> {
    let mut cfg = match path {
        Some(p) => io::read_json::<SceneConfig>(p)?,
        None => SceneConfig::standard(seed.unwrap_or(0)),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = path {
        cfg.validate().map_err(|e| Error::Format { path: p.into(), field: "config".into(), msg: e.to_string() })?;
    }
    Ok(cfg)
}

fn gen(config: Option<PathBuf>, seed: Option<u64>, out: &Path) -> Outcome<()> {
    let mut timer = StageTimer::start();
    let cfg = load_scene_config(config.as_deref(), seed)?;
    timer.lap("load");
    let scene = generate_scene(&cfg)?;
    timer.lap("render");
    Archive::from_scene(&scene).write(out)?;
    timer.lap("write");
    ManifestBuilder {
        command: "gen".into(),
        config_hash: hash_config(&cfg),
        seed: Some(cfg.seed),
        inputs: config.into_iter().collect(),
        outputs: vec![out.into()],
    }
    .write(timer, out)?;
    Ok(())
}

fn encode(input: &Path, out: &Path, uv: bool, xy: bool, pe: Option<usize>, nrm: bool) -> Outcome<()> {
    if !(uv || xy || pe.is_some() || nrm) {
        return Err(Failure::Usage("encode needs at least one of --uv, --xy, --pe, --nrm".into()));
    }
    let mut timer = StageTimer::start();
    let mut arch = Archive::read(input)?;
    timer.lap("read");
    let k = arch.intrinsics;
    if uv {
        arch.image = encode_plain_uv(&arch.image);
    }
    if xy {
        arch.image = encode_xy(&arch.image, &k)?;
    }
    if let Some(d) = pe {
        arch.image = encode_pe(&arch.image, PeConfig::new(d)?)?;
    }
    if nrm {
        arch.image = encode_normals(&arch.image, &k);
    }
    timer.lap("encode");
    arch.write(out)?;
    timer.lap("write");
    #[derive(Serialize)]
    struct Flags {
        uv: bool,
        xy: bool,
        pe: Option<usize>,
        nrm: bool,
    }
    ManifestBuilder {
        command: "encode".into(),
        config_hash: hash_config(&Flags { uv, xy, pe, nrm }),
        seed: None,
        inputs: vec![input.into()],
        outputs: vec![out.into()],
    }
    .write(timer, out)?;
    Ok(())
}

fn transform(input: &Path, spec_path: &Path, out: &Path) -> Outcome<()> {
    let mut timer = StageTimer::start();
    let spec: TransformSpec = io::read_json(spec_path)?;
    let mut arch = Archive::read(input)?;
    timer.lap("read");
    // Intrinsics stay those of the original capture.
    arch.image = spec.apply(&arch.image)?;
    timer.lap("transform");
    arch.write(out)?;
    timer.lap("write");
    ManifestBuilder {
        command: "transform".into(),
        config_hash: hash_config(&spec),
        seed: None,
        inputs: vec![input.into(), spec_path.into()],
        outputs: vec![out.into()],
    }
    .write(timer, out)?;
    Ok(())
}

fn solve(input: &Path, intrinsics: Option<&Path>, mode: ModeArg, trim: f64, iters: usize, out: &Path) -> Outcome<()> {
    if !(0.0..0.5).contains(&trim) {
        return Err(Failure::Usage(format!("--trim must lie in [0, 0.5), got {trim}")));
    }
    let robust = (trim > 0.0).then_some(RobustParams { iters, trim });
    let mut timer = StageTimer::start();
    let mut inputs = vec![input.to_path_buf()];
    let poses = if input.is_dir() {
        let arch = Archive::read(input)?;
        timer.lap("read");
        let names: BTreeMap<u32, String> = arch.objects.iter().map(|o| (o.id, o.name.clone())).collect();
        let occlusion: BTreeMap<u32, f64> = arch.objects.iter().map(|o| (o.id, o.occlusion)).collect();
        let solved = harness::recover_poses(&arch.image, &arch.intrinsics, mode.into(), robust)?;
        let mut list = Vec::new();
        for (id, pose) in solved {
            match pose {
                Ok(pose) => list.push(ObjectAnnotation {
                    id,
                    name: names.get(&id).cloned().unwrap_or_else(|| format!("object_{id}")),
                    occlusion: occlusion.get(&id).copied().unwrap_or(0.0),
                    pose,
                }),
                Err(e) => eprintln!("warning: {}: object {id}: {e}", input.display()),
            }
        }
        if list.is_empty() {
            return Err(Error::EmptyInput("solvable objects").into());
        }
        timer.lap("solve");
        list
    } else {
        let c = io::read_correspondences(input)?;
        let k = match (c.observations(), intrinsics) {
            (Observations::Pixels(_), None) => {
                return Err(Failure::Usage("--intrinsics is required for pixel correspondences".into()))
            }
            (_, Some(p)) => {
                inputs.push(p.into());
                Some(io::read_json::<CameraIntrinsics>(p)?)
            }
            (Observations::Camera(_), None) => None,
        };
        timer.lap("read");
        let pose = match (robust, k) {
            (Some(r), k) => robust_solve(&c, k.as_ref(), r.iters, r.trim)?,
            (None, Some(k)) if matches!(c.observations(), Observations::Pixels(_)) => solve_pose_from_pixels(&c, &k)?,
            (None, _) => umeyama(&c)?,
        };
        timer.lap("solve");
        let name = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        vec![ObjectAnnotation { id: 1, name, occlusion: 0.0, pose }]
    };
    io::write_annotations(out, &poses)?;
    timer.lap("write");
    #[derive(Serialize)]
    struct Params {
        mode: ModeArg,
        trim: f64,
        iters: usize,
    }
    ManifestBuilder {
        command: "solve".into(),
        config_hash: hash_config(&Params { mode, trim, iters }),
        seed: None,
        inputs,
        outputs: vec![out.into()],
    }
    .write(timer, out)?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Single(TransformSpec),
    Named(BTreeMap<String, TransformSpec>),
}

fn resolve_specs(spec: &str) -> Outcome<Vec<(String, TransformSpec)>> {
    Ok(match spec {
        "identity" => vec![("identity".into(), harness::identity_spec())],
        "standard" => harness::standard_spec_matrix(),
        path => {
            let p = Path::new(path);
            if !p.is_file() {
                return Err(Failure::Usage(format!("--spec must be identity, standard or a JSON file; {path:?} is none")));
            }
            match io::read_json::<SpecFile>(p)? {
                SpecFile::Single(s) => {
                    let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "spec".into());
                    vec![(id, s)]
                }
                SpecFile::Named(m) => m.into_iter().collect(),
            }
        }
    })
}

fn breakdown(spec: &str, config: Option<&Path>, seed: u64, out: &Path) -> Outcome<()> {
    let mut timer = StageTimer::start();
    let specs = resolve_specs(spec)?;
    let cfg = load_scene_config(config, Some(seed))?;
    timer.lap("load");
    let scene = generate_scene(&cfg)?;
    timer.lap("render");
    let results = specs
        .par_iter()
        .map(|(id, s)| harness::run_on_scene(&scene, id, s))
        .collect::<uvpose_core::Result<Vec<_>>>()?;
    timer.lap("experiment");
    let mut csv = String::from(BREAKDOWN_CSV_HEADER);
    csv.push('\n');
    for r in &results {
        for row in r.csv_rows() {
            csv.push_str(&row);
            csv.push('\n');
        }
    }
    io::write_atomic(out, csv.as_bytes())?;
    timer.lap("write");
    let mut inputs: Vec<PathBuf> = config.into_iter().map(Path::to_path_buf).collect();
    if Path::new(spec).is_file() {
        inputs.push(spec.into());
    }
    ManifestBuilder {
        command: "breakdown".into(),
        config_hash: hash_config(&(&cfg, &specs)),
        seed: Some(cfg.seed),
        inputs,
        outputs: vec![out.into()],
    }
    .write(timer, out)?;
    Ok(())
}

/// Frame id → annotations, from a single file (frame "0") or a directory.
fn read_frames(path: &Path) -> Outcome<BTreeMap<String, (PathBuf, Vec<ObjectAnnotation>)>> {
    let mut frames = BTreeMap::new();
    if path.is_file() {
        frames.insert("0".to_string(), (path.to_path_buf(), io::read_annotations(path)?));
        return Ok(frames);
    }
    if path.join("pose.json").is_file() {
        let p = path.join("pose.json");
        let anns = io::read_annotations(&p)?;
        frames.insert("0".to_string(), (p, anns));
        return Ok(frames);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    for entry in entries {
        let p = entry.map_err(|e| Error::Io { path: path.into(), source: e })?.path();
        let Some(stem) = p.file_stem().map(|s| s.to_string_lossy().into_owned()) else {
            continue;
        };
        let file = if p.is_dir() && p.join("pose.json").is_file() {
            p.join("pose.json")
        } else if p.extension().is_some_and(|e| e == "json") && !stem.ends_with(".manifest") {
            p.clone()
        } else {
            continue;
        };
        let anns = io::read_annotations(&file)?;
        frames.insert(stem, (file, anns));
    }
    if frames.is_empty() {
        return Err(Failure::Usage(format!("{} holds no pose files", path.display())));
    }
    Ok(frames)
}

fn eval(
    pred: &Path,
    gt: &Path,
    models_dir: &Path,
    out: &Path,
    edges: &[f64],
    curve_steps: usize,
) -> Outcome<()> {
    let mut timer = StageTimer::start();
    let gt_frames = read_frames(gt)?;
    let pred_frames = read_frames(pred)?;
    let models: BTreeMap<String, ModelPoints> = io::read_models(models_dir)?;
    timer.lap("read");

    let mut records = Vec::new();
    for (frame, (gt_path, gts)) in &gt_frames {
        let (pred_path, preds) = pred_frames.get(frame).ok_or_else(|| Error::Format {
            path: pred.into(),
            field: format!("frame {frame}"),
            msg: format!("no prediction for ground-truth frame in {}", gt_path.display()),
        })?;
        for g in gts {
            let p = preds.iter().find(|p| p.id == g.id).ok_or_else(|| Error::Format {
                path: pred_path.clone(),
                field: format!("id {}", g.id),
                msg: format!("no prediction for object {:?}", g.name),
            })?;
            if !models.contains_key(&g.name) {
                return Err(Error::Format {
                    path: gt_path.clone(),
                    field: format!("name {:?}", g.name),
                    msg: format!("no model {}.xyz in {}", g.name, models_dir.display()),
                }
                .into());
            }
            records.push(FrameRecord {
                frame_id: frame.clone(),
                object: g.name.clone(),
                pred: p.pose,
                gt: g.pose,
                occlusion: g.occlusion,
            });
        }
    }
    let report = metrics::evaluate(&records, &models, edges)?;
    timer.lap("score");

    let mut table = String::from("object,frames,symmetric,adds_auc,add_s_auc,add_0.1d,adds_2cm\n");
    let rows = report.objects.iter().map(|m| (m, m.symmetric.to_string()));
    for (m, symmetric) in rows.chain(std::iter::once((&report.overall, String::new()))) {
        table.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.object,
            m.frames,
            symmetric,
            fmt_sig(m.adds_auc),
            fmt_sig(m.add_s_auc),
            fmt_sig(m.add_01d),
            fmt_sig(m.adds_2cm)
        ));
    }
    let mut occ = String::from("occlusion_lo,occlusion_hi,count,adds_2cm\n");
    for b in &report.occlusion {
        let acc = b.accuracy.map(fmt_sig).unwrap_or_default();
        occ.push_str(&format!("{},{},{},{}\n", fmt_sig(b.lo), fmt_sig(b.hi), b.count, acc));
    }
    let mut curve = String::from("object,threshold_m,adds_acc,add_s_acc\n");
    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for f in &report.frames {
        let sym = models[&f.object].is_symmetric();
        if groups.last().is_none_or(|g| g.0 != f.object) {
            groups.push((f.object.clone(), Vec::new(), Vec::new()));
        }
        let g = groups.last_mut().expect("just pushed");
        g.1.push(f.adds);
        g.2.push(if sym { f.adds } else { f.add });
    }
    let all_adds: Vec<f64> = groups.iter().flat_map(|g| g.1.iter().copied()).collect();
    let all_add_s: Vec<f64> = groups.iter().flat_map(|g| g.2.iter().copied()).collect();
    groups.push(("ALL".into(), all_adds, all_add_s));
    for (name, adds, add_s) in &groups {
        let a = metrics::accuracy_curve(adds, AUC_MAX_THRESHOLD, curve_steps)?;
        let b = metrics::accuracy_curve(add_s, AUC_MAX_THRESHOLD, curve_steps)?;
        for ((t, x), (_, y)) in a.iter().zip(&b) {
            curve.push_str(&format!("{name},{},{},{}\n", fmt_sig(*t), fmt_sig(*x), fmt_sig(*y)));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.into(), source: e })?;
    let outputs = vec![out.join("metrics.csv"), out.join("occlusion.csv"), out.join("auc_curve.csv")];
    io::write_atomic(&outputs[0], table.as_bytes())?;
    io::write_atomic(&outputs[1], occ.as_bytes())?;
    io::write_atomic(&outputs[2], curve.as_bytes())?;
    timer.lap("write");

    #[derive(Serialize)]
    struct Params<'a> {
        edges: &'a [f64],
        curve_steps: usize,
    }
    ManifestBuilder {
        command: "eval".into(),
        config_hash: hash_config(&Params { edges, curve_steps }),
        seed: None,
        inputs: vec![pred.into(), gt.into(), models_dir.into()],
        outputs,
    }
    .write(timer, out)?;
    Ok(())
}
