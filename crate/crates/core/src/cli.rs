//! Batch command-line pipeline: `gen`, `label`, `extract`, `train-seg`,
//! `train-cls`, `eval` and `export`.
//!
//! Every command resolves its parameters as built-in defaults, then an
//! optional JSON file given by `--config`, then command-line flags. Unknown
//! keys are rejected. The resolved parameters are written to `config.json`
//! in the output directory before any other output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::criteria::{threshold_label, Criterion, ThresholdMode};
use crate::dataset::{extract_cls, extract_seg, group_folds, normalize, split_random, SampleSet, Task};
use crate::error::{Error, Result};
use crate::flowgrid::{load_fgrd, save_fgrd, Dims, FlowGrid, FlowParams, LabelVolume, ScalarField};
use crate::flowgrid::csv_error;
use crate::nn::{
    evaluate, init_uniform, load_checkpoint, save_checkpoint, train, AdamParams, LossKind, OptimizerKind,
    TrainConfig, TrainReport,
};
use crate::synth::{generate, FlowKind, GenSpec, StreetLayout, Vortex};

pub const THREADS_ENV: &str = "VORTEXKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "vortexkit", version, about = "Vortex identification and flow-field learning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic flow field as an FGRD file.
    Gen(GenArgs),
    /// Evaluate a criterion on a grid and threshold it into labels.
    Label(LabelArgs),
    /// Extract segmentation or classification samples.
    Extract(ExtractArgs),
    /// Train a segmentation network on an 8:2 random split.
    TrainSeg(TrainSegArgs),
    /// Train classification networks with the grouped fold protocol.
    TrainCls(TrainClsArgs),
    /// Evaluate a checkpoint on a sample set.
    Eval(EvalArgs),
    /// Export a criterion field or label volume as VTK or CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file with parameters; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Points along x and y; also z for 3D kinds (2D kinds get 3 planes).
    #[arg(long)]
    pub n: Option<usize>,
    /// Explicit dimensions, `NI,NJ,NK`.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Number of stored time levels.
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum KindArg {
    #[value(name = "taylor_green_2d")]
    TaylorGreen2d,
    #[value(name = "taylor_green_3d")]
    TaylorGreen3d,
    LambOseenStreet,
    SolidBody,
    Uniform,
    Shear,
}

impl From<KindArg> for FlowKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::TaylorGreen2d => FlowKind::TaylorGreen2d,
            KindArg::TaylorGreen3d => FlowKind::TaylorGreen3d,
            KindArg::LambOseenStreet => FlowKind::LambOseenStreet,
            KindArg::SolidBody => FlowKind::SolidBody,
            KindArg::Uniform => FlowKind::Uniform,
            KindArg::Shear => FlowKind::Shear,
        }
    }
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input FGRD file.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// q, omega or ivd.
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Time level.
    #[arg(long)]
    pub t: Option<usize>,
    /// Reference label CSV to measure coverage against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Input FGRD file(s). Classification takes one per viscosity family.
    #[arg(long = "grid")]
    pub grids: Vec<PathBuf>,
    /// Label CSV for segmentation.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub t: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Seg,
    Cls,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Sample CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_train: Option<usize>,
    #[arg(long)]
    pub batch_test: Option<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Disable feature standardization.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainSegArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Fraction of samples used for training.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainClsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub groups: Option<usize>,
    /// Fraction of slices per group used for training.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// MLP1 checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sample CSV, already normalized like the training data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Criterion to export (q, omega, ivd).
    #[arg(long)]
    pub criterion: Option<String>,
    /// Label CSV to export instead of a criterion.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub t: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Csv,
    Vtk,
}

// ---------------------------------------------------------------------------
// config resolution

/// Flag values layered over the defaults and the config file.
#[derive(Default)]
struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    fn set<T: Serialize>(&mut self, key: &'static str, value: Option<T>) {
        if let Some(v) = value {
            self.0.push((key, serde_json::to_value(v).expect("flag values serialize")));
        }
    }

    fn common(&mut self, c: &Common) {
        self.set("out", c.out.as_ref());
        self.set("seed", c.seed);
    }
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, l) => *b = l,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        let obj = cur.as_object_mut().expect("config root is an object");
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut()
        .expect("config section is an object")
        .insert(parts[parts.len() - 1].to_string(), value);
}

fn resolve<T: DeserializeOwned>(defaults: Value, file: Option<&Path>, flags: Overrides) -> Result<T> {
    let mut cfg = defaults;
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let layer: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Usage(format!("{}: invalid JSON: {e}", path.display())))?;
        if !layer.is_object() {
            return Err(Error::Usage(format!("{}: config must be a JSON object", path.display())));
        }
        merge(&mut cfg, layer);
    }
    for (k, v) in flags.0 {
        set_path(&mut cfg, k, v);
    }
    serde_json::from_value(cfg).map_err(|e| Error::Usage(format!("config: {e}")))
}

fn prepare_out<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn usage(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Err(Error::Usage(msg()))
    } else {
        Ok(())
    }
}

fn as_usage(e: Error) -> Error {
    match e {
        Error::Validation(m) => Error::Usage(m),
        other => other,
    }
}

fn parse_criterion(name: Option<String>) -> Result<Option<Criterion>> {
    name.map(|n| n.parse()).transpose()
}

// ---------------------------------------------------------------------------
// label files

/// Writes `i,j,k,valid,label` rows, `k` fastest.
pub fn write_labels_csv(path: &Path, labels: &LabelVolume) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["i", "j", "k", "valid", "label"]).map_err(|e| csv_error(path, e))?;
    let d = labels.dims();
    for i in 0..d.ni {
        for j in 0..d.nj {
            for k in 0..d.nk {
                let row = [
                    i.to_string(),
                    j.to_string(),
                    k.to_string(),
                    u8::from(labels.is_valid(i, j, k)).to_string(),
                    u8::from(labels.get(i, j, k)).to_string(),
                ];
                w.write_record(&row).map_err(|e| csv_error(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a label CSV written by [`write_labels_csv`] for a grid of `dims`.
pub fn read_labels_csv(path: &Path, dims: Dims) -> Result<LabelVolume> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["i", "j", "k", "valid", "label"] {
        return Err(Error::Format(format!("{}: header must be i,j,k,valid,label", path.display())));
    }
    let mut labels = vec![false; dims.len()];
    let mut valid = vec![false; dims.len()];
    let mut seen = vec![false; dims.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = || Error::Format(format!("{}: bad value in data row {}", path.display(), line + 1));
        let n: Vec<usize> = (0..5)
            .map(|c| rec.get(c).ok_or_else(bad)?.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if n[0] >= dims.ni || n[1] >= dims.nj || n[2] >= dims.nk {
            return Err(Error::Index(format!(
                "{}: point ({}, {}, {}) outside grid {dims:?}",
                path.display(),
                n[0],
                n[1],
                n[2]
            )));
        }
        let idx = dims.index(n[0], n[1], n[2]);
        seen[idx] = true;
        valid[idx] = n[3] == 1;
        labels[idx] = n[4] == 1;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Validation(format!("{}: does not cover every grid point", path.display())));
    }
    LabelVolume::new(dims, labels, valid, path.display().to_string())
}

fn field_csv(grid: &FlowGrid, field: &ScalarField) -> String {
    let d = field.dims();
    let mut out = String::from("x,y,z,value\n");
    for i in 0..d.ni {
        for j in 0..d.nj {
            for k in 0..d.nk {
                if let Some(v) = field.get(i, j, k) {
                    let _ = writeln!(out, "{},{},{},{v}", grid.x()[i], grid.y()[j], grid.z()[k]);
                }
            }
        }
    }
    out
}

/// Legacy ASCII VTK structured grid with one scalar array. Points without a
/// value are written as 0.
pub fn vtk_structured_grid(grid: &FlowGrid, name: &str, values: &dyn Fn(usize, usize, usize) -> f64) -> String {
    let d = grid.dims();
    let n = d.len();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(out, "vortexkit {name}");
    out.push_str("ASCII\nDATASET STRUCTURED_GRID\n");
    let _ = writeln!(out, "DIMENSIONS {} {} {}", d.ni, d.nj, d.nk);
    let _ = writeln!(out, "POINTS {n} double");
    // VTK orders points with x fastest
    for k in 0..d.nk {
        for j in 0..d.nj {
            for i in 0..d.ni {
                let _ = writeln!(out, "{} {} {}", grid.x()[i], grid.y()[j], grid.z()[k]);
            }
        }
    }
    let _ = writeln!(out, "POINT_DATA {n}");
    let _ = writeln!(out, "SCALARS {name} double 1");
    out.push_str("LOOKUP_TABLE default\n");
    for k in 0..d.nk {
        for j in 0..d.nj {
            for i in 0..d.ni {
                let _ = writeln!(out, "{}", values(i, j, k));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// commands

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub kind: FlowKind,
    /// Shorthand for `dims`; ignored when `dims` is given.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub dims: Option<[usize; 3]>,
    #[serde(default)]
    pub extent: Option<[[f64; 2]; 3]>,
    pub timesteps: usize,
    pub dt: f64,
    pub nu: f64,
    pub omega0: f64,
    pub shear_rate: f64,
    pub velocity: [f64; 3],
    #[serde(default)]
    pub vortices: Vec<Vortex>,
    #[serde(default)]
    pub street: Option<StreetLayout>,
}

impl GenConfig {
    fn spec(&self) -> Result<GenSpec> {
        let dims = match (self.dims, self.n) {
            (Some(d), _) => d,
            (None, Some(n)) => match self.kind {
                FlowKind::TaylorGreen2d | FlowKind::LambOseenStreet => [n, n, 3],
                _ => [n, n, n],
            },
            (None, None) => return Err(Error::Usage("gen needs `n` or `dims`".into())),
        };
        let spec = GenSpec {
            kind: self.kind,
            dims,
            extent: self.extent,
            timesteps: self.timesteps,
            dt: self.dt,
            nu: self.nu,
            omega0: self.omega0,
            shear_rate: self.shear_rate,
            velocity: self.velocity,
            vortices: self.vortices.clone(),
            street: self.street,
            seed: self.seed,
        };
        spec.validate().map_err(as_usage)?;
        Ok(spec)
    }
}

/// Metadata written next to every generated grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMeta {
    pub kind: FlowKind,
    pub dims: [usize; 3],
    pub timesteps: usize,
    pub dt: f64,
    pub nu: f64,
    /// `U L / nu` with unit reference speed and length.
    pub reynolds: f64,
    pub spec: GenSpec,
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut ov = Overrides::default();
    ov.common(&a.common);
    ov.set("kind", a.kind.map(FlowKind::from));
    ov.set("n", a.n);
    if let Some(d) = &a.dims {
        usage(d.len() != 3, || format!("--dims takes three values, got {}", d.len()))?;
    }
    ov.set("dims", a.dims);
    ov.set("timesteps", a.timesteps);
    ov.set("dt", a.dt);
    ov.set("nu", a.nu);
    let d = GenSpec::new(FlowKind::Uniform, [2, 2, 2]);
    let defaults = json!({
        "seed": 0, "timesteps": d.timesteps, "dt": d.dt, "nu": d.nu, "omega0": d.omega0,
        "shear_rate": d.shear_rate, "velocity": d.velocity,
    });
    let cfg: GenConfig = resolve(defaults, a.common.config.as_deref(), ov)?;
    let spec = cfg.spec()?;
    prepare_out(&cfg.out, &cfg)?;
    let generated = generate(&spec)?;
    save_fgrd(&generated.grid, cfg.out.join("grid.fgrd"))?;
    let meta = GridMeta {
        kind: spec.kind,
        dims: spec.dims,
        timesteps: spec.timesteps,
        dt: spec.dt,
        nu: spec.nu,
        reynolds: FlowParams::new(1.0, 1.0, 1.0, spec.nu)?.reynolds(),
        spec,
    };
    write_json(&cfg.out.join("grid.json"), &meta)?;
    if let Some(cores) = &generated.cores {
        write_labels_csv(&cfg.out.join("cores.csv"), cores)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub grid: PathBuf,
    pub criterion: Criterion,
    /// Defaults to 0 for q and 0.52 for omega; required for ivd.
    #[serde(default)]
    pub threshold: Option<f64>,
    pub mode: ThresholdMode,
    pub t: usize,
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSummary {
    pub criterion: Criterion,
    pub threshold: f64,
    pub t: usize,
    pub valid_points: usize,
    pub labeled_points: usize,
    /// Fraction of reference-labelled valid points that are also labelled.
    pub truth_coverage: Option<f64>,
}

fn cmd_label(a: LabelArgs) -> Result<()> {
    let mut ov = Overrides::default();
    ov.common(&a.common);
    ov.set("grid", a.grid);
    ov.set("criterion", parse_criterion(a.criterion)?);
    ov.set("threshold", a.threshold);
    ov.set("t", a.t);
    ov.set("truth", a.truth);
    let cfg: LabelConfig = resolve(json!({"seed": 0, "t": 0, "mode": "greater"}), a.common.config.as_deref(), ov)?;
    let threshold = match cfg.threshold.or(cfg.criterion.default_threshold()) {
        Some(t) => t,
        None => return Err(Error::Usage(format!("criterion {} needs an explicit threshold", cfg.criterion))),
    };
    prepare_out(&cfg.out, &cfg)?;
    let grid = load_fgrd(&cfg.grid)?;
    if cfg.t >= grid.timesteps() {
        return Err(Error::Index(format!("time level {} outside 0..{}", cfg.t, grid.timesteps())));
    }
    let field = cfg.criterion.field(&grid, cfg.t)?;
    let labels = threshold_label(&field, threshold, cfg.mode);
    write_labels_csv(&cfg.out.join("labels.csv"), &labels)?;
    write_text(&cfg.out.join("field.csv"), &field_csv(&grid, &field))?;
    let truth_coverage = match &cfg.truth {
        Some(p) => {
            let truth = read_labels_csv(p, grid.dims())?;
            let mut hit = 0usize;
            let mut total = 0usize;
            for (n, &t) in truth.labels().iter().enumerate() {
                if t && labels.valid()[n] {
                    total += 1;
                    hit += usize::from(labels.labels()[n]);
                }
            }
            Some(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
        }
        None => None,
    };
    let summary = LabelSummary {
        criterion: cfg.criterion,
        threshold,
        t: cfg.t,
        valid_points: field.valid_count(),
        labeled_points: labels.count(),
        truth_coverage,
    };
    write_json(&cfg.out.join("summary.json"), &summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub task: Task,
    pub grids: Vec<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    pub t: usize,
}

/// Class index assigned to each viscosity family, ascending in `nu`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMap {
    pub nu: Vec<f64>,
    pub reynolds: Vec<f64>,
}

fn grid_meta(grid_path: &Path) -> Result<GridMeta> {
    let meta = grid_path.with_file_name("grid.json");
    if !meta.exists() {
        return Err(Error::Validation(format!("no grid.json next to {}", grid_path.display())));
    }
    read_json(&meta)
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let mut ov = Overrides::default();
    ov.common(&a.common);
    ov.set(
        "task",
        a.task.map(|t| match t {
            TaskArg::Seg => Task::Segmentation,
            TaskArg::Cls => Task::Classification,
        }),
    );
    if !a.grids.is_empty() {
        ov.set("grids", Some(&a.grids));
    }
    ov.set("labels", a.labels);
    ov.set("t", a.t);
    let cfg: ExtractConfig = resolve(json!({"seed": 0, "t": 0}), a.common.config.as_deref(), ov)?;
    usage(cfg.grids.is_empty(), || "extract needs at least one grid".into())?;
    match cfg.task {
        Task::Segmentation => {
            usage(cfg.grids.len() != 1, || "segmentation extraction takes exactly one grid".into())?;
            usage(cfg.labels.is_none(), || "segmentation extraction needs `labels`".into())?;
        }
        Task::Classification => {
            usage(cfg.labels.is_some(), || "classification extraction takes no labels".into())?;
        }
    }
    prepare_out(&cfg.out, &cfg)?;
    let set = match cfg.task {
        Task::Segmentation => {
            let grid = load_fgrd(&cfg.grids[0])?;
            if cfg.t >= grid.timesteps() {
                return Err(Error::Index(format!("time level {} outside 0..{}", cfg.t, grid.timesteps())));
            }
            let labels = read_labels_csv(cfg.labels.as_deref().unwrap(), grid.dims())?;
            extract_seg(&grid, cfg.t, &labels)?
        }
        Task::Classification => {
            let metas = cfg.grids.iter().map(|g| grid_meta(g)).collect::<Result<Vec<_>>>()?;
            let mut nus: Vec<f64> = metas.iter().map(|m| m.nu).collect();
            nus.sort_by(f64::total_cmp);
            nus.dedup();
            let mut family = Vec::with_capacity(cfg.grids.len());
            for (path, meta) in cfg.grids.iter().zip(&metas) {
                let class = nus.iter().position(|&n| n == meta.nu).unwrap();
                family.push((load_fgrd(path)?, class));
            }
            let reynolds = nus.iter().map(|&nu| 1.0 / nu).collect();
            write_json(&cfg.out.join("classes.json"), &ClassMap { nu: nus, reynolds })?;
            extract_cls(&family)?
        }
    };
    set.write_csv(cfg.out.join("samples.csv"))
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

/// Network and optimizer settings shared by both training commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_train: usize,
    pub batch_test: usize,
    #[serde(default)]
    pub adam: AdamParams,
    pub optimizer: OptimizerKind,
}

impl TrainOptions {
    fn to_config(&self, input: usize, outputs: usize, loss: LossKind, seed: u64) -> Result<TrainConfig> {
        let mut widths = vec![input];
        widths.extend(&self.hidden);
        widths.push(outputs);
        let cfg = TrainConfig {
            widths,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_train: self.batch_train,
            batch_test: self.batch_test,
            seed,
            adam: self.adam,
            loss,
            optimizer: self.optimizer,
        };
        cfg.validate().map_err(as_usage)?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        // widths here are placeholders; only the hyperparameters are checked
        self.to_config(1, 2, LossKind::Ce, 0).map(|_| ())
    }
}

fn train_overrides(ov: &mut Overrides, t: &TrainFlags) {
    ov.set("data", t.data.as_ref());
    ov.set("train.epochs", t.epochs);
    ov.set("train.learning_rate", t.lr);
    ov.set("train.batch_train", t.batch_train);
    ov.set("train.batch_test", t.batch_test);
    ov.set("train.hidden", t.hidden.as_ref());
    ov.set(
        "train.optimizer",
        t.optimizer.map(|o| match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        }),
    );
    if t.no_normalize {
        ov.set("normalize", Some(false));
    }
}

fn train_defaults(batch_train: usize, batch_test: usize) -> Value {
    json!({
        "seed": 0,
        "normalize": true,
        "train": {
            "hidden": default_hidden(),
            "learning_rate": 0.005,
            "epochs": 500,
            "batch_train": batch_train,
            "batch_test": batch_test,
            "adam": AdamParams::default(),
            "optimizer": "adam",
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSegConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub data: PathBuf,
    pub ratio: f64,
    pub normalize: bool,
    pub train: TrainOptions,
}

/// Trains one model and writes checkpoint, report, confusion, test split and
/// normalization into `dir`.
fn train_into(dir: &Path, train_set: &SampleSet, test_set: &SampleSet, normalize_features: bool, cfg: &TrainConfig) -> Result<TrainReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (tr, te) = if normalize_features {
        let (tr, te, norm) = normalize(train_set, test_set)?;
        write_json(&dir.join("norm.json"), &norm)?;
        (tr, te)
    } else {
        (train_set.clone(), test_set.clone())
    };
    let mut model = init_uniform(&cfg.widths, cfg.seed)?;
    let report = train(&mut model, &tr, &te, cfg)?;
    save_checkpoint(&model, dir.join("model.mlp1"))?;
    write_json(&dir.join("report.json"), &report)?;
    write_text(&dir.join("confusion.csv"), &report.final_metrics.confusion.to_csv())?;
    te.write_csv(dir.join("test.csv"))?;
    Ok(report)
}

fn cmd_train_seg(a: TrainSegArgs) -> Result<()> {
    let mut ov = Overrides::default();
    ov.common(&a.common);
    train_overrides(&mut ov, &a.train);
    ov.set("ratio", a.ratio);
    let mut defaults = train_defaults(4225, 4225);
    merge(&mut defaults, json!({"ratio": 0.8}));
    let cfg: TrainSegConfig = resolve(defaults, a.common.config.as_deref(), ov)?;
    cfg.train.check()?;
    usage(!(0.0..1.0).contains(&cfg.ratio) || cfg.ratio == 0.0, || format!("ratio must be in (0, 1), got {}", cfg.ratio))?;
    prepare_out(&cfg.out, &cfg)?;
    let set = SampleSet::read_csv(&cfg.data)?;
    if set.task() != Task::Segmentation {
        return Err(Error::Validation("train-seg needs segmentation samples".into()));
    }
    let tc = cfg.train.to_config(set.width(), 2, LossKind::Bce, cfg.seed)?;
    let (tr, te) = split_random(&set, cfg.ratio, cfg.seed)?;
    train_into(&cfg.out, &tr, &te, cfg.normalize, &tc)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainClsConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub data: PathBuf,
    pub groups: usize,
    pub ratio: f64,
    pub normalize: bool,
    pub train: TrainOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub group: usize,
    pub train_slices: Vec<usize>,
    pub test_slices: Vec<usize>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClsSummary {
    pub folds: Vec<FoldSummary>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cmd_train_cls(a: TrainClsArgs) -> Result<()> {
    let mut ov = Overrides::default();
    ov.common(&a.common);
    train_overrides(&mut ov, &a.train);
    ov.set("groups", a.groups);
    ov.set("ratio", a.ratio);
    let mut defaults = train_defaults(128, 1024);
    merge(&mut defaults, json!({"groups": 5, "ratio": 0.8}));
    let cfg: TrainClsConfig = resolve(defaults, a.common.config.as_deref(), ov)?;
    cfg.train.check()?;
    usage(cfg.groups == 0, || "groups must be >= 1".into())?;
    usage(!(cfg.ratio > 0.0 && cfg.ratio < 1.0), || format!("ratio must be in (0, 1), got {}", cfg.ratio))?;
    prepare_out(&cfg.out, &cfg)?;
    let set = SampleSet::read_csv(&cfg.data)?;
    if set.task() != Task::Classification {
        return Err(Error::Validation("train-cls needs classification samples".into()));
    }
    let classes = set.class_count().max(2);
    let tc = cfg.train.to_config(set.width(), classes, LossKind::Ce, cfg.seed)?;
    let folds = group_folds(&set, cfg.groups, cfg.ratio, cfg.seed)?;
    let mut summaries = Vec::with_capacity(folds.len());
    for fold in &folds {
        let dir = cfg.out.join(format!("fold{}", fold.group));
        let report = train_into(&dir, &fold.train, &fold.test, cfg.normalize, &tc)?;
        summaries.push(FoldSummary {
            group: fold.group,
            train_slices: fold.train_slices.clone(),
            test_slices: fold.test_slices.clone(),
            accuracy: report.final_metrics.accuracy,
            precision: report.final_metrics.precision,
            recall: report.final_metrics.recall,
            wall_clock_seconds: report.wall_clock_seconds,
        });
    }
    let acc: Vec<f64> = summaries.iter().map(|s| s.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    let summary = ClsSummary {
        mean_precision: mean_std(&summaries.iter().map(|s| s.precision).collect::<Vec<_>>()).0,
        mean_recall: mean_std(&summaries.iter().map(|s| s.recall).collect::<Vec<_>>()).0,
        folds: summaries,
        mean_accuracy,
        std_accuracy,
    };
    write_json(&cfg.out.join("summary.json"), &summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub model: PathBuf,
    pub data: PathBuf,
    pub batch: usize,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut ov = Overrides::default();
    ov.common(&a.common);
    ov.set("model", a.model);
    ov.set("data", a.data);
    ov.set("batch", a.batch);
    let cfg: EvalConfig = resolve(json!({"seed": 0, "batch": 1024}), a.common.config.as_deref(), ov)?;
    usage(cfg.batch == 0, || "batch must be >= 1".into())?;
    prepare_out(&cfg.out, &cfg)?;
    let model = load_checkpoint(&cfg.model)?;
    let set = SampleSet::read_csv(&cfg.data)?;
    if set.width() != model.input_width() {
        return Err(Error::Validation(format!(
            "samples have {} features, model expects {}",
            set.width(),
            model.input_width()
        )));
    }
    let loss = match set.task() {
        Task::Segmentation => LossKind::Bce,
        Task::Classification => LossKind::Ce,
    };
    let eval = evaluate(&model, &set, loss, cfg.batch)?;
    write_json(&cfg.out.join("metrics.json"), &eval)?;
    write_text(&cfg.out.join("confusion.csv"), &eval.confusion.to_csv())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub grid: PathBuf,
    #[serde(default)]
    pub criterion: Option<Criterion>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    pub format: FormatArg,
    pub t: usize,
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let mut ov = Overrides::default();
    ov.common(&a.common);
    ov.set("grid", a.grid);
    ov.set("criterion", parse_criterion(a.criterion)?);
    ov.set("labels", a.labels);
    ov.set("format", a.format);
    ov.set("t", a.t);
    let cfg: ExportConfig = resolve(json!({"seed": 0, "t": 0, "format": "vtk"}), a.common.config.as_deref(), ov)?;
    usage(cfg.criterion.is_some() == cfg.labels.is_some(), || {
        "export needs exactly one of `criterion` or `labels`".into()
    })?;
    prepare_out(&cfg.out, &cfg)?;
    let grid = load_fgrd(&cfg.grid)?;
    let d = grid.dims();
    let (name, field) = match (&cfg.criterion, &cfg.labels) {
        (Some(c), _) => {
            if cfg.t >= grid.timesteps() {
                return Err(Error::Index(format!("time level {} outside 0..{}", cfg.t, grid.timesteps())));
            }
            (c.to_string(), c.field(&grid, cfg.t)?)
        }
        (None, Some(p)) => {
            let labels = read_labels_csv(p, d)?;
            let values = labels.labels().iter().map(|&l| f64::from(u8::from(l))).collect();
            ("label".to_string(), ScalarField::new(d, values, labels.valid().to_vec())?)
        }
        (None, None) => unreachable!(),
    };
    match cfg.format {
        FormatArg::Csv => write_text(&cfg.out.join(format!("{name}.csv")), &field_csv(&grid, &field)),
        FormatArg::Vtk => {
            let text = vtk_structured_grid(&grid, &name, &|i, j, k| field.get(i, j, k).unwrap_or(0.0));
            write_text(&cfg.out.join(format!("{name}.vtk")), &text)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Label(a) => cmd_label(a),
        Command::Extract(a) => cmd_extract(a),
        Command::TrainSeg(a) => cmd_train_seg(a),
        Command::TrainCls(a) => cmd_train_cls(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
