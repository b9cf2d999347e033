//! The `template-fit` command line: `synth`, `fit`, `eval`, `export` and
//! `gradcheck`.
//!
//! Exit codes: 0 success, 2 bad arguments or configuration, 3 data errors,
//! 4 numerical failures (including a failed gradient check).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::assets::{read_obj, shipped_rig_dir, write_obj, Character};
use crate::camproj::{cameras_from_json, cameras_to_json, read_pgm, Camera, Mask};
use crate::config::RunConfig;
use crate::dataset::{frame_dir, gt_file, load_dataset, read_cameras, read_meta, FrameParams};
use crate::error::Error;
use crate::fitter::{fit_sequence, smooth_sequence, FrameResult};
use crate::gradcheck::gradcheck_suite;
use crate::graphdeform::{mesh_state, GraphParams, MeshState};
use crate::kinematics::node_transforms;
use crate::metrics::{iou_family, pose_scores, JointSequence};
use crate::synthgen::generate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const MANIFEST_FILE: &str = "run.json";
pub const FIT_META_FILE: &str = "fit.json";

#[derive(Debug, Parser)]
#[command(name = "template-fit", version, about = "Multi-view template fitting")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeshSet {
    Raw,
    Smoothed,
    PoseOnly,
}

impl MeshSet {
    fn dir(self) -> &'static str {
        match self {
            MeshSet::Raw => "meshes",
            MeshSet::Smoothed => "smoothed",
            MeshSet::PoseOnly => "pose_only",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-view dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Rig directory (defaults to the shipped capsule person).
        #[arg(long)]
        rig: Option<PathBuf>,
        /// Overrides `synth.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit pose and deformation to every frame of a dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Supervision cameras: `0`, `0,2,5` or the inclusive range `0..6`.
        #[arg(long, value_parser = parse_index_list)]
        cameras: Option<Vec<usize>>,
        /// Inclusive frame range `A..B`, or a single frame.
        #[arg(long, value_parser = parse_frame_range)]
        frames: Option<(usize, usize)>,
        /// Worker threads (0 = all cores). Results do not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
        /// Skip the deformation stage.
        #[arg(long)]
        pose_only: bool,
        /// Write per-iteration loss traces.
        #[arg(long)]
        traces: bool,
    },
    /// Score a fit against ground truth and write a metrics CSV.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Input camera for the IoU split (defaults to the one used to fit).
        #[arg(long)]
        input_view: Option<usize>,
        /// Output CSV (defaults to PRED/metrics.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "raw")]
        meshes: MeshSet,
        /// Move every mesh to the ground-truth translation before the IoU.
        #[arg(long)]
        gt_translation: bool,
        /// Also write per-frame metrics here.
        #[arg(long)]
        per_frame: Option<PathBuf>,
    },
    /// Rebuild OBJ meshes (raw and smoothed) from fitted parameters.
    Export {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rig: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write report.csv and run.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `3`, `0,2,5`, `0..6` (inclusive) or combinations like `0..2,5`.
pub fn parse_index_list(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b) = (parse_index(a)?, parse_index(b)?);
            if a > b {
                return Err(format!("empty range {part}"));
            }
            out.extend(a..=b);
        } else {
            out.push(parse_index(part)?);
        }
    }
    Ok(out)
}

/// Parses the inclusive range `A..B` or a single index.
pub fn parse_frame_range(text: &str) -> Result<(usize, usize), String> {
    let (a, b) = match text.split_once("..") {
        Some((a, b)) => (parse_index(a)?, parse_index(b)?),
        None => {
            let a = parse_index(text)?;
            (a, a)
        }
    };
    if a > b {
        return Err(format!("empty range {text}"));
    }
    Ok((a, b))
}

fn parse_index(text: &str) -> Result<usize, String> {
    text.trim()
        .parse()
        .map_err(|_| format!("'{text}' is not a non-negative integer"))
}

#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    Usage(String),
    CheckFailed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Usage(s) | CliError::CheckFailed(s) => f.write_str(s),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::CheckFailed(_) => EXIT_NUMERICAL,
            CliError::Lib(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Lib(Error::InvalidConfig(_) | Error::UnknownBlock(_) | Error::NodeCountOutOfRange { .. }) => {
                EXIT_USAGE
            }
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Provenance record written next to every command's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub assets: BTreeMap<String, String>,
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: None,
            seed: None,
            assets: BTreeMap::new(),
            timings: Vec::new(),
        }
    }

    fn asset(&mut self, key: &str, path: &Path) {
        self.assets.insert(key.to_string(), path.display().to_string());
    }

    /// Runs `f` and records its wall time under `stage`.
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    fn write(&self, path: &Path) -> CliResult<()> {
        write_file(path, &self.to_json())
    }
}

/// What `fit` records about its run; `eval` and `export` read it back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub rig: String,
    pub dataset: String,
    pub first_frame: usize,
    pub frames: usize,
    pub input_camera: usize,
    pub cameras: Vec<usize>,
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    pub eval_joints: Vec<String>,
    pub eval_parents: Vec<i64>,
    /// `(frame, error)` for frames that fell back to the rest pose.
    pub failed: Vec<(usize, String)>,
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn frame_file(dir: &Path, frame: usize, ext: &str) -> PathBuf {
    dir.join(format!("{frame:04}.{ext}"))
}

fn load_rig(rig: Option<&Path>, manifest: &mut RunManifest) -> CliResult<(Character, PathBuf)> {
    let dir = rig.map_or_else(shipped_rig_dir, Path::to_path_buf);
    manifest.asset("rig", &dir);
    let character = manifest.time("load_rig", || Character::load_dir(&dir, None))?;
    Ok((character, dir))
}

fn parents_from_meta(parents: &[i64]) -> Vec<Option<usize>> {
    parents.iter().map(|&p| usize::try_from(p).ok()).collect()
}

pub fn synth(config: Option<&Path>, out: &Path, rig: Option<&Path>, seed: Option<u64>) -> CliResult<()> {
    let mut manifest = RunManifest::new("synth");
    let mut run = RunConfig::load(config)?;
    if let Some(s) = seed {
        run.synth.seed = s;
    }
    run.validate()?;
    if let Some(p) = config {
        manifest.asset("config", p);
    }
    manifest.config_hash = Some(run.hash());
    manifest.seed = Some(run.synth.seed);
    let (character, _) = load_rig(rig, &mut manifest)?;
    manifest.time("synthesize", || generate(&character, &run.synth, out))?;
    write_file(&out.join("config.toml"), &run.to_toml())?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    info!("wrote {} frames to {}", run.synth.frames, out.display());
    Ok(())
}

pub struct FitArgs<'a> {
    pub dataset: &'a Path,
    pub rig: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
    pub cameras: Option<Vec<usize>>,
    pub frames: Option<(usize, usize)>,
    pub jobs: Option<usize>,
    pub pose_only: bool,
    pub traces: bool,
}

fn trace_csv(result: &FrameResult) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::malformed("trace CSV", e.to_string());
    w.write_record(["stage", "iteration", "total", "keypoint", "limit", "silhouette", "keypoint_graph", "arap"])
        .map_err(csv_err)?;
    let f = |v: f64| v.to_string();
    for (i, t) in result.pose_trace.iter().enumerate() {
        w.write_record(["pose", &i.to_string(), &f(t.total), &f(t.keypoint), &f(t.limit), "", "", ""])
            .map_err(csv_err)?;
    }
    for (i, t) in result.deform_trace.iter().enumerate() {
        w.write_record([
            "deform",
            &i.to_string(),
            &f(t.total),
            "",
            "",
            &f(t.silhouette),
            &f(t.keypoint_graph),
            &f(t.arap),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::malformed("trace CSV", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
}

pub fn fit(args: FitArgs<'_>) -> CliResult<()> {
    let mut manifest = RunManifest::new("fit");
    let mut run = RunConfig::load(args.config)?;
    if args.cameras.is_some() {
        run.fit.cameras = args.cameras.clone();
    }
    if let Some(j) = args.jobs {
        run.fit.jobs = j;
    }
    run.fit.pose_only |= args.pose_only;
    run.validate()?;
    if let Some(p) = args.config {
        manifest.asset("config", p);
    }
    manifest.asset("dataset", args.dataset);
    manifest.config_hash = Some(run.hash());
    let (character, rig_dir) = load_rig(args.rig, &mut manifest)?;
    let dataset = manifest.time("load_dataset", || load_dataset(args.dataset, args.frames))?;
    manifest.seed = Some(dataset.meta.seed);
    let supervision = run.fit.supervision(dataset.cameras.len())?;
    let result = manifest.time("fit", || fit_sequence(&character, &dataset, &run.fit))?;

    let out = args.out;
    let faces = &character.rig.mesh.faces;
    let input = &dataset.cameras[run.fit.input_camera];
    let skeleton = &character.rig.skeleton;
    manifest.time("write", || -> CliResult<()> {
        for (r, smoothed) in result.frames.iter().zip(&result.smoothed) {
            let joints = crate::metrics::eval_joints(skeleton, &r.pose, input)?;
            let params = FrameParams {
                pose: r.pose.clone(),
                graph: r.graph.clone(),
                joints,
            };
            params.write(&frame_file(&out.join("params"), r.frame, "txt"))?;
            write_obj(&frame_file(&out.join("meshes"), r.frame, "obj"), &r.mesh.world, faces)?;
            write_obj(&frame_file(&out.join("smoothed"), r.frame, "obj"), &smoothed.world, faces)?;
            let transforms = node_transforms(&character, &r.pose.theta, &r.pose.alpha)?;
            let rigid = mesh_state(&character, &GraphParams::zeros(character.node_count()), &transforms, input, &r.pose.t)?;
            write_obj(&frame_file(&out.join("pose_only"), r.frame, "obj"), &rigid.world, faces)?;
            if args.traces {
                write_file(&frame_file(&out.join("traces"), r.frame, "csv"), &trace_csv(r)?)?;
            }
        }
        Ok(())
    })?;
    let failed: Vec<(usize, String)> = result
        .frames
        .iter()
        .filter_map(|r| r.error.clone().map(|e| (r.frame, e)))
        .collect();
    for (frame, e) in &failed {
        warn!("frame {frame} fell back to the rest pose: {e}");
    }
    let meta = FitMeta {
        rig: rig_dir.display().to_string(),
        dataset: args.dataset.display().to_string(),
        first_frame: dataset.first_frame,
        frames: result.frames.len(),
        input_camera: run.fit.input_camera,
        cameras: supervision,
        kernel_size: run.fit.kernel_size,
        kernel_sigma: run.fit.kernel_sigma,
        eval_joints: dataset.meta.eval_joints.clone(),
        eval_parents: dataset.meta.eval_parents.clone(),
        failed,
    };
    write_file(&out.join(FIT_META_FILE), &serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    write_file(&out.join("cameras.json"), &cameras_to_json(&dataset.cameras))?;
    write_file(&out.join("config.toml"), &run.to_toml())?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    info!("fitted {} frames into {}", meta.frames, out.display());
    Ok(())
}

fn read_fit_meta(pred: &Path) -> CliResult<FitMeta> {
    let path = pred.join(FIT_META_FILE);
    serde_json::from_str(&read_file(&path)?)
        .map_err(|e| Error::malformed(path.display().to_string(), e.to_string()).into())
}

fn read_params(dir: &Path, first: usize, count: usize) -> CliResult<Vec<FrameParams>> {
    (first..first + count)
        .map(|f| FrameParams::read(&frame_file(dir, f, "txt")).map_err(CliError::from))
        .collect()
}

/// One row of metrics; sequence-level values when `frame` is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub gle_mm: f64,
    pub pck3d: f64,
    pub auc: f64,
    pub mpjpe_pa_mm: f64,
    pub amviou: f64,
    pub rviou: f64,
    pub sviou: f64,
}

pub const METRIC_COLUMNS: [&str; 7] = ["gle_mm", "pck3d", "auc", "mpjpe_pa_mm", "amviou", "rviou", "sviou"];

impl MetricRow {
    fn values(&self) -> [f64; 7] {
        [self.gle_mm, self.pck3d, self.auc, self.mpjpe_pa_mm, self.amviou, self.rviou, self.sviou]
    }
}

fn score(
    pred: &JointSequence,
    gt: &JointSequence,
    meshes: &[Vec<Vector3<f64>>],
    faces: &[[usize; 3]],
    masks: &[Vec<Mask>],
    cameras: &[Camera],
    input: usize,
) -> CliResult<MetricRow> {
    let pose = pose_scores(pred, gt)?;
    if pose.flagged > 0 {
        warn!("{} zero-length predicted bones inherited their parent's direction", pose.flagged);
    }
    let iou = iou_family(meshes, faces, masks, cameras, input)?;
    Ok(MetricRow {
        gle_mm: pose.gle_mm,
        pck3d: pose.pck3d,
        auc: pose.auc,
        mpjpe_pa_mm: pose.mpjpe_pa_mm,
        amviou: iou.amviou,
        rviou: iou.rviou,
        sviou: iou.sviou,
    })
}

fn metrics_csv(header: &[&str], rows: &[(String, MetricRow)]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for (key, row) in rows {
        out.push_str(key);
        for v in row.values() {
            write!(out, ",{v}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

pub struct EvalArgs<'a> {
    pub pred: &'a Path,
    pub gt: &'a Path,
    pub input_view: Option<usize>,
    pub out: Option<&'a Path>,
    pub meshes: MeshSet,
    pub gt_translation: bool,
    pub per_frame: Option<&'a Path>,
}

/// Scores a fit and returns the sequence-level metrics.
pub fn eval(args: EvalArgs<'_>) -> CliResult<MetricRow> {
    let mut manifest = RunManifest::new("eval");
    manifest.asset("pred", args.pred);
    manifest.asset("gt", args.gt);
    let meta = read_fit_meta(args.pred)?;
    let gt_meta = read_meta(args.gt)?;
    manifest.seed = Some(gt_meta.seed);
    let cameras = read_cameras(args.gt)?;
    let input = args.input_view.unwrap_or(meta.input_camera);
    if input >= cameras.len() {
        return Err(CliError::Usage(format!("input view {input} out of range ({} cameras)", cameras.len())));
    }
    if meta.first_frame + meta.frames > gt_meta.frames {
        return Err(Error::FrameMismatch(meta.first_frame + meta.frames, gt_meta.frames).into());
    }
    let first = meta.first_frame;
    let (pred, gt, meshes, faces, masks) = manifest.time("load", || -> CliResult<_> {
        let pred = read_params(&args.pred.join("params"), first, meta.frames)?;
        let gt = (first..first + meta.frames)
            .map(|f| FrameParams::read(&gt_file(args.gt, f)))
            .collect::<crate::Result<Vec<_>>>()?;
        let mut faces = Vec::new();
        let mut meshes = Vec::with_capacity(meta.frames);
        for (i, f) in (first..first + meta.frames).enumerate() {
            let (mut v, fc) = read_obj(&frame_file(&args.pred.join(args.meshes.dir()), f, "obj"))?;
            if args.gt_translation {
                let shift = gt[i].pose.t - pred[i].pose.t;
                v.iter_mut().for_each(|x| *x += shift);
            }
            meshes.push(v);
            faces = fc;
        }
        let masks = (first..first + meta.frames)
            .map(|f| {
                (0..cameras.len())
                    .map(|c| read_pgm(&frame_dir(args.gt, f).join(format!("mask_{c:02}.pgm"))))
                    .collect::<crate::Result<Vec<_>>>()
            })
            .collect::<crate::Result<Vec<_>>>()?;
        Ok((pred, gt, meshes, faces, masks))
    })?;
    let parents = parents_from_meta(&gt_meta.eval_parents);
    let joints = |p: &[FrameParams]| JointSequence::new(p.iter().map(|x| x.joints.clone()).collect(), parents.clone());
    let (pred_seq, gt_seq) = (joints(&pred), joints(&gt));

    let total = manifest.time("score", || score(&pred_seq, &gt_seq, &meshes, &faces, &masks, &cameras, input))?;
    let default_out = args.pred.join("metrics.csv");
    let out = args.out.unwrap_or(&default_out);
    let mut header = vec!["frames"];
    header.extend(METRIC_COLUMNS);
    write_file(out, &metrics_csv(&header, &[(meta.frames.to_string(), total)]))?;

    if let Some(path) = args.per_frame {
        let rows = manifest.time("score_per_frame", || {
            (0..meta.frames)
                .map(|i| {
                    let one = |s: &JointSequence| JointSequence::new(vec![s.frames[i].clone()], parents.clone());
                    let row = score(
                        &one(&pred_seq),
                        &one(&gt_seq),
                        &meshes[i..=i],
                        &faces,
                        &masks[i..=i],
                        &cameras,
                        input,
                    )?;
                    Ok(((first + i).to_string(), row))
                })
                .collect::<CliResult<Vec<_>>>()
        })?;
        let mut header = vec!["frame"];
        header.extend(METRIC_COLUMNS);
        write_file(path, &metrics_csv(&header, &rows))?;
    }
    let mut manifest_path = out.as_os_str().to_owned();
    manifest_path.push(".run.json");
    manifest.write(Path::new(&manifest_path))?;
    Ok(total)
}

pub fn export(pred: &Path, out: &Path, rig: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::new("export");
    manifest.asset("pred", pred);
    let meta = read_fit_meta(pred)?;
    let rig_dir = rig.map_or_else(|| PathBuf::from(&meta.rig), Path::to_path_buf);
    let (character, _) = load_rig(Some(&rig_dir), &mut manifest)?;
    let cameras = cameras_from_json(&read_file(&pred.join("cameras.json"))?)?;
    let input = cameras
        .get(meta.input_camera)
        .ok_or_else(|| Error::malformed(FIT_META_FILE, "input camera out of range"))?;
    let params = read_params(&pred.join("params"), meta.first_frame, meta.frames)?;
    let states = manifest.time("pose", || {
        params
            .iter()
            .map(|p| {
                let transforms = node_transforms(&character, &p.pose.theta, &p.pose.alpha)?;
                mesh_state(&character, &p.graph, &transforms, input, &p.pose.t)
            })
            .collect::<crate::Result<Vec<MeshState>>>()
    })?;
    let smoothed = smooth_sequence(&states, meta.kernel_size, meta.kernel_sigma)?;
    let faces = &character.rig.mesh.faces;
    manifest.time("write", || -> CliResult<()> {
        for (i, (raw, smooth)) in states.iter().zip(&smoothed).enumerate() {
            let f = meta.first_frame + i;
            write_obj(&frame_file(out, f, "obj"), &raw.world, faces)?;
            write_obj(&frame_file(&out.join("smoothed"), f, "obj"), &smooth.world, faces)?;
        }
        Ok(())
    })?;
    manifest.write(&out.join(MANIFEST_FILE))
}

pub fn gradcheck(rig: Option<&Path>, seed: u64, config: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::new("gradcheck");
    let run = RunConfig::load(config)?;
    if let Some(p) = config {
        manifest.asset("config", p);
    }
    manifest.config_hash = Some(run.hash());
    manifest.seed = Some(seed);
    let (character, _) = load_rig(rig, &mut manifest)?;
    let report = manifest.time("check", || gradcheck_suite(&character, &run.gradcheck, run.fit.weights, seed))?;

    let mut table = String::from("configuration,objective,block,checked,skipped,max_error,worst_index\n");
    for r in &report.rows {
        writeln!(
            table,
            "{},{},{},{},{},{:.3e},{}",
            r.configuration, r.objective, r.block.name, r.block.checked, r.block.skipped, r.block.max_error, r.block.worst
        )
        .expect("write to string");
    }
    print!("{table}");
    let worst = report.worst().map(|r| r.block.max_error).unwrap_or(0.0);
    println!(
        "{} blocks over {} configurations, worst relative error {worst:.3e} (tolerance {:.0e})",
        report.rows.len(),
        run.gradcheck.configurations,
        report.tolerance
    );
    match out {
        Some(dir) => {
            write_file(&dir.join("report.csv"), &table)?;
            manifest.write(&dir.join(MANIFEST_FILE))?;
        }
        None => eprintln!("{}", manifest.to_json()),
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("gradient check failed: worst relative error {worst:.3e}")))
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { config, out, rig, seed } => synth(config.as_deref(), &out, rig.as_deref(), seed),
        Command::Fit {
            dataset,
            rig,
            config,
            out,
            cameras,
            frames,
            jobs,
            pose_only,
            traces,
        } => fit(FitArgs {
            dataset: &dataset,
            rig: rig.as_deref(),
            config: config.as_deref(),
            out: &out,
            cameras,
            frames,
            jobs,
            pose_only,
            traces,
        }),
        Command::Eval {
            pred,
            gt,
            input_view,
            out,
            meshes,
            gt_translation,
            per_frame,
        } => {
            let row = eval(EvalArgs {
                pred: &pred,
                gt: &gt,
                input_view,
                out: out.as_deref(),
                meshes,
                gt_translation,
                per_frame: per_frame.as_deref(),
            })?;
            for (name, v) in METRIC_COLUMNS.iter().zip(row.values()) {
                println!("{name:>12} {v:.4}");
            }
            Ok(())
        }
        Command::Export { pred, out, rig } => export(&pred, &out, rig.as_deref()),
        Command::Gradcheck { rig, seed, config, out } => gradcheck(rig.as_deref(), seed, config.as_deref(), out.as_deref()),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_lists() {
        assert_eq!(parse_index_list("3").unwrap(), vec![3]);
        assert_eq!(parse_index_list("0..6").unwrap(), (0..=6).collect::<Vec<_>>());
        assert_eq!(parse_index_list("0..1, 4").unwrap(), vec![0, 1, 4]);
        assert!(parse_index_list("2..1").is_err());
        assert!(parse_index_list("a").is_err());
        assert_eq!(parse_frame_range("2..5").unwrap(), (2, 5));
        assert_eq!(parse_frame_range("7").unwrap(), (7, 7));
        assert!(parse_frame_range("5..2").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["template-fit", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["template-fit", "fit", "--dataset", "x"]), EXIT_USAGE);
        assert_eq!(CliError::from(Error::SingularCamera).exit_code(), EXIT_NUMERICAL);
        assert_eq!(CliError::from(Error::EmptySequence).exit_code(), EXIT_DATA);
        assert_eq!(CliError::from(Error::InvalidConfig("x".into())).exit_code(), EXIT_USAGE);
    }

    #[test]
    fn missing_dataset_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none");
        let out = dir.path().join("out");
        let code = run([
            "template-fit",
            "fit",
            "--dataset",
            missing.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_DATA);
    }
}
