//! Command-line front end. Every command writes one JSON document to stdout or `--out`.
//!
//! Exit codes: 0 ok, 2 unreadable or invalid input, 3 analysis failure, 4 inference
//! failure, 5 metric precondition.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{parse_graph, GraphError, GraphIR};
use crate::inference::InferenceError;
use crate::metrics::{
    consistency, pareto_front, read_pareto_csv, relevance_ordering_test, stability, Annotations, ConsistencyReport,
    MetricConfig, MetricError, ParetoPoint, RotConfig, RotSummary, StabilityReport,
};
use crate::model::{Dataset, Explanation, ModelBundle, ModelError};
use crate::numerics::{simcheck, RegionError, DEFAULT_REGIONS};
use crate::pixel_mapping::{render_pgm, BBox, KernelConfig, MappingError, Method, Region};
use crate::protopart::{
    evaluate_losses, replace_prototypes, DedupMode, Distance, LossConfig, Losses, ProtoError, PrototypeBank,
    Provenance, SimilarityConfig,
};
use crate::rf::{functional_rf, spatial_area, RfError, RfStats};
use crate::tensor::{self, NtsrError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input = 2,
    Analysis = 3,
    Inference = 4,
    Metric = 5,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn new(kind: ErrorKind, message: impl ToString) -> Self {
        CliError { kind, message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::new(ErrorKind::Input, e)
    }
}

impl From<NtsrError> for CliError {
    fn from(e: NtsrError) -> Self {
        CliError::new(ErrorKind::Input, e)
    }
}

impl From<RfError> for CliError {
    fn from(e: RfError) -> Self {
        CliError::new(ErrorKind::Analysis, e)
    }
}

impl From<MappingError> for CliError {
    fn from(e: MappingError) -> Self {
        CliError::new(ErrorKind::Analysis, e)
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        CliError::new(ErrorKind::Inference, e)
    }
}

impl From<ProtoError> for CliError {
    fn from(e: ProtoError) -> Self {
        let kind = match e {
            ProtoError::Ntsr(_) | ProtoError::Sidecar(_) | ProtoError::Io { .. } | ProtoError::InvalidBank(_) => {
                ErrorKind::Input
            }
            _ => ErrorKind::Inference,
        };
        CliError::new(kind, e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Inference(e) => e.into(),
            ModelError::Proto(e) => e.into(),
            ModelError::Rf(e) => e.into(),
            ModelError::Mapping(e) => e.into(),
            e @ (ModelError::Graph(_) | ModelError::Ntsr(_) | ModelError::Invalid(_) | ModelError::Io { .. }) => {
                CliError::new(ErrorKind::Input, e)
            }
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Model(e) => e.into(),
            e @ (MetricError::Csv(_)
            | MetricError::Json(_)
            | MetricError::Io(_)
            | MetricError::InvalidAnnotations(_)
            | MetricError::InvalidPoint { .. }) => CliError::new(ErrorKind::Input, e),
            e => CliError::new(ErrorKind::Metric, e),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(ErrorKind::Input, format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------- arguments

#[derive(Debug, Parser)]
#[command(name = "protoloc", version, about = "Receptive-field analysis and prototype localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Omit version and timestamp so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_meta: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Receptive-field report for every node of a graph.
    Rf(RfArgs),
    /// Prediction with the top prototypes of the predicted class.
    Explain(ExplainArgs),
    /// Heat maps and pixel regions of prototypes on images.
    Localize(LocalizeArgs),
    /// Replace prototypes by their nearest same-class training patches.
    Replace(ReplaceArgs),
    /// Relevance ordering test.
    Rot(RotArgs),
    /// Part consistency and stability.
    Metrics(MetricsArgs),
    /// Non-dominated (receptive field, accuracy) points.
    Pareto(ParetoArgs),
    /// Forward evaluation of the training objective.
    Losses(LossesArgs),
    /// Rounding error of the two similarity formulations.
    Simcheck(SimcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DistanceArg {
    Cosine,
    L2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Rf,
    Upsample,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Rf => Method::Rf,
            MethodArg::Upsample => Method::Upsample,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DedupArg {
    Patch,
    Image,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RenderArg {
    Pgm,
}

#[derive(Debug, Args)]
pub struct BundleArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Prototype bank NTSR; its sidecar JSON sits next to it.
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub embed_node: String,
    #[arg(long, value_enum, default_value_t = DistanceArg::Cosine)]
    pub distance: DistanceArg,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1e-6)]
    pub epsilon: f64,
}

impl BundleArgs {
    fn similarity(&self) -> SimilarityConfig {
        let distance = match self.distance {
            DistanceArg::Cosine => Distance::Cosine,
            DistanceArg::L2 => Distance::L2Squared,
        };
        SimilarityConfig { distance, epsilon: self.epsilon, ..SimilarityConfig::default() }
    }

    fn load(&self) -> Result<ModelBundle, CliError> {
        Ok(ModelBundle::load(&self.graph, &self.weights, &self.bank, &self.embed_node, self.similarity())?)
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset NTSR with `images` (N, C, H, W) and `labels` (N).
    #[arg(long)]
    pub images: PathBuf,
    /// Image index into the dataset; repeatable. Defaults to every image.
    #[arg(long = "image")]
    pub image: Vec<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, Vec<usize>), CliError> {
        let ds = Dataset::load(&self.images)?;
        let ids = if self.image.is_empty() { (0..ds.len()).collect() } else { self.image.clone() };
        if let Some(&bad) = ids.iter().find(|&&i| i >= ds.len()) {
            return Err(CliError::new(ErrorKind::Input, format!("image {bad} out of range ({} images)", ds.len())));
        }
        Ok((ds, ids))
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Also write min-max normalized heat maps in this format.
    #[arg(long, value_enum)]
    pub render: Option<RenderArg>,
    /// Directory for rendered maps.
    #[arg(long, default_value = ".")]
    pub render_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RfArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Override the input size: `H` or `HxW`.
    #[arg(long, value_parser = parse_hw)]
    pub input_size: Option<(usize, usize)>,
    /// Restrict the report to these nodes.
    #[arg(long)]
    pub node: Vec<String>,
    /// Write every position's field (channel 0) of the reported nodes to this JSON file.
    #[arg(long)]
    pub dump_fields: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[command(flatten)]
    pub render: RenderArgs,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Prototype index; repeatable. Defaults to every prototype.
    #[arg(long)]
    pub prototype: Vec<usize>,
    #[arg(long, value_enum, default_value_t = MethodArg::Rf)]
    pub method: MethodArg,
    /// Disable the Gaussian weighting inside receptive fields.
    #[arg(long)]
    pub no_kernel: bool,
    /// Write unnormalized heat maps to this NTSR file as `img{i}_proto{j}`.
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
    #[command(flatten)]
    pub render: RenderArgs,
}

#[derive(Debug, Args)]
pub struct ReplaceArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    /// Dataset NTSR with `images` and `labels`.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long, value_enum, default_value_t = DedupArg::Patch)]
    pub dedup: DedupArg,
    /// Where the replaced bank (and its sidecar) is written.
    #[arg(long)]
    pub save_bank: PathBuf,
}

#[derive(Debug, Args)]
pub struct RotArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Prototype index; repeatable. Defaults to every prototype.
    #[arg(long)]
    pub prototype: Vec<usize>,
    #[arg(long, value_enum, default_value_t = MethodArg::Rf)]
    pub method: MethodArg,
    #[arg(long)]
    pub no_kernel: bool,
    /// Fraction of pixels restored between evaluations; 0 restores one pixel at a time.
    #[arg(long, default_value_t = 0.01)]
    pub stride: f64,
    /// Noise baselines per (image, prototype).
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.8)]
    pub mu: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.2)]
    pub sigma: f64,
    /// Part window around each localization: `S` or `HxW`.
    #[arg(long, value_parser = parse_hw, default_value = "72")]
    pub window: (usize, usize),
    #[arg(long, value_enum, default_value_t = MethodArg::Rf)]
    pub method: MethodArg,
    /// Also write one CSV row per prototype.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParetoArgs {
    /// CSV with columns label,mrf,accuracy.
    #[arg(long)]
    pub csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    pub lambda_cls: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    pub lambda_sep: f64,
}

#[derive(Debug, Args)]
pub struct SimcheckArgs {
    /// `default` or a comma list of `lo:hi` ranges.
    #[arg(long, default_value = "default")]
    pub regions: String,
    #[arg(long, default_value_t = 30_000)]
    pub samples: usize,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1e-6)]
    pub epsilon: f64,
}

fn parse_hw(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let (h, w) = match s.split_once(['x', 'X']) {
        Some((h, w)) => (parse(h)?, parse(w)?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((h, w))
}

pub fn parse_regions(s: &str) -> Result<Vec<(f64, f64)>, String> {
    if s == "default" {
        return Ok(DEFAULT_REGIONS.to_vec());
    }
    s.split(',')
        .map(|r| {
            let (lo, hi) = r.split_once(':').ok_or_else(|| format!("region `{r}` is not lo:hi"))?;
            let lo: f64 = lo.trim().parse().map_err(|e| format!("`{lo}`: {e}"))?;
            let hi: f64 = hi.trim().parse().map_err(|e| format!("`{hi}`: {e}"))?;
            if !(0.0 <= lo && lo < hi && hi.is_finite()) {
                return Err(format!("region `{r}` must satisfy 0 <= lo < hi"));
            }
            Ok((lo, hi))
        })
        .collect()
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub version: String,
    pub unix_time: u64,
}

/// Top-level JSON document of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub command: String,
    pub seed: u64,
    pub result: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResult {
    pub image: usize,
    pub label: usize,
    #[serde(flatten)]
    pub explanation: Explanation,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rendered: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeRecord {
    pub image: usize,
    pub prototype: usize,
    pub score: f64,
    pub argmin: (usize, usize),
    pub region: Region,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaceResult {
    pub bank: PathBuf,
    pub prototypes: usize,
    pub provenance: Vec<Option<Provenance>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotRecord {
    #[serde(flatten)]
    pub summary: RotSummary,
    /// Pixel fraction of the prototype's best patch field on the clean image.
    pub rf_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotResult {
    pub method: Method,
    pub kernel: bool,
    pub stride: f64,
    pub samples: usize,
    pub records: Vec<RotRecord>,
    pub mean_ausc: f64,
    pub mean_pct_to_recovery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResult {
    pub config: MetricConfig,
    pub consistency: ConsistencyReport,
    pub stability: StabilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoResult {
    pub points: Vec<ParetoPoint>,
    pub front: Vec<ParetoPoint>,
}

// ---------------------------------------------------------------- driver

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return if code == 0 { 0 } else { ErrorKind::Input as i32 };
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Rf(a) => emit(cli, "rf", &cmd_rf(a)?, stdout),
        Command::Explain(a) => emit(cli, "explain", &cmd_explain(a)?, stdout),
        Command::Localize(a) => emit(cli, "localize", &cmd_localize(a)?, stdout),
        Command::Replace(a) => emit(cli, "replace", &cmd_replace(a)?, stdout),
        Command::Rot(a) => emit(cli, "rot", &cmd_rot(a, cli.seed)?, stdout),
        Command::Metrics(a) => emit(cli, "metrics", &cmd_metrics(a, cli.seed)?, stdout),
        Command::Pareto(a) => emit(cli, "pareto", &cmd_pareto(a)?, stdout),
        Command::Losses(a) => emit(cli, "losses", &cmd_losses(a)?, stdout),
        Command::Simcheck(a) => emit(cli, "simcheck", &cmd_simcheck(a, cli.seed)?, stdout),
    }
}

fn emit<T: Serialize>(cli: &Cli, command: &str, result: &T, stdout: &mut dyn Write) -> Result<(), CliError> {
    let meta = (!cli.no_meta).then(|| Meta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        unix_time: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    });
    let report = Report { command: command.to_string(), seed: cli.seed, result, meta };
    let mut text = serde_json::to_string_pretty(&report).expect("reports serialize");
    text.push('\n');
    match &cli.out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_err(path, e)),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::new(ErrorKind::Input, e)),
    }
}

fn read_graph(path: &Path) -> Result<GraphIR, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(parse_graph(&bytes)?)
}

pub fn cmd_rf(a: &RfArgs) -> Result<BTreeMap<String, RfStats>, CliError> {
    let mut g = read_graph(&a.graph)?;
    if let Some((h, w)) = a.input_size {
        let [c, _, _] = g.input_shape;
        g = GraphIR::new(g.name.clone(), [c, h, w], g.nodes().to_vec())?;
    }
    let rf = functional_rf(&g)?;
    let ids: Vec<String> = if a.node.is_empty() { g.nodes().iter().map(|n| n.id.clone()).collect() } else { a.node.clone() };
    let mut report = BTreeMap::new();
    for id in &ids {
        report.insert(id.clone(), rf.stats(id)?);
    }
    if let Some(path) = &a.dump_fields {
        let mut dump = BTreeMap::new();
        for id in &ids {
            let nf = rf.node(id)?;
            let (h, w) = nf.spatial();
            let grid = nf.grid(0);
            let rows: Vec<Vec<_>> = (0..h).map(|i| (0..w).map(|j| grid.get(i, j).as_ref().clone()).collect()).collect();
            dump.insert(id.clone(), rows);
        }
        std::fs::write(path, serde_json::to_string(&dump).expect("fields serialize")).map_err(|e| io_err(path, e))?;
    }
    Ok(report)
}

fn write_pgm(dir: &Path, name: &str, heat: &Tensor) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, render_pgm(heat)?).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn cmd_explain(a: &ExplainArgs) -> Result<Vec<ExplainResult>, CliError> {
    let bundle = a.bundle.load()?;
    let (ds, ids) = a.data.load()?;
    ids.into_iter()
        .map(|i| {
            let explanation = bundle.explain(&ds.images[i], a.top_k)?;
            let mut rendered = Vec::new();
            if a.render.render.is_some() {
                let z = bundle.embed(&ds.images[i])?;
                for ev in &explanation.evidence {
                    let smap = bundle.similarity_map(&z, ev.prototype)?;
                    let heat = bundle.heatmap(&smap, Method::Rf, KernelConfig::default())?;
                    rendered.push(write_pgm(&a.render.render_dir, &format!("explain_img{i}_proto{}.pgm", ev.prototype), &heat)?);
                }
            }
            Ok(ExplainResult { image: i, label: ds.labels[i], explanation, rendered })
        })
        .collect()
}

fn prototype_ids(requested: &[usize], bank: &PrototypeBank) -> Result<Vec<usize>, CliError> {
    if let Some(&bad) = requested.iter().find(|&&j| j >= bank.len()) {
        return Err(CliError::new(ErrorKind::Input, format!("prototype {bad} out of range ({} prototypes)", bank.len())));
    }
    Ok(if requested.is_empty() { (0..bank.len()).collect() } else { requested.to_vec() })
}

pub fn cmd_localize(a: &LocalizeArgs) -> Result<Vec<LocalizeRecord>, CliError> {
    let bundle = a.bundle.load()?;
    let (ds, ids) = a.data.load()?;
    let protos = prototype_ids(&a.prototype, &bundle.bank)?;
    let method = Method::from(a.method);
    let kernel = KernelConfig { enabled: !a.no_kernel };
    let mut records = Vec::new();
    let mut maps: Vec<(String, Tensor)> = Vec::new();
    for &i in &ids {
        let z = bundle.embed(&ds.images[i])?;
        for &j in &protos {
            let smap = bundle.similarity_map(&z, j)?;
            let region = bundle.localize(&smap, method)?;
            let mut rendered = None;
            if a.heatmaps.is_some() || a.render.render.is_some() {
                let heat = bundle.heatmap(&smap, method, kernel)?;
                if a.render.render.is_some() {
                    rendered = Some(write_pgm(&a.render.render_dir, &format!("img{i}_proto{j}.pgm"), &heat)?);
                }
                maps.push((format!("img{i}_proto{j}"), heat));
            }
            let argmin = smap.argmin();
            records.push(LocalizeRecord {
                image: i,
                prototype: j,
                score: smap.score(argmin.0, argmin.1),
                argmin,
                bbox: region.bbox(),
                region,
                rendered,
            });
        }
    }
    if let Some(path) = &a.heatmaps {
        tensor::write_file(path, maps.iter().map(|(n, t)| (n.as_str(), t)))?;
    }
    Ok(records)
}

pub fn cmd_replace(a: &ReplaceArgs) -> Result<ReplaceResult, CliError> {
    let bundle = a.bundle.load()?;
    let ds = Dataset::load(&a.images)?;
    let embeddings: Vec<Tensor> = ds.images.iter().map(|x| bundle.embed(x)).collect::<Result<_, _>>()?;
    let dedup = match a.dedup {
        DedupArg::Patch => DedupMode::Patch,
        DedupArg::Image => DedupMode::Image,
    };
    let bank = replace_prototypes(&bundle.bank, &embeddings, &ds.labels, &bundle.sim, dedup)?;
    bank.save(&a.save_bank)?;
    Ok(ReplaceResult { bank: a.save_bank.clone(), prototypes: bank.len(), provenance: bank.provenance().to_vec() })
}

pub fn cmd_rot(a: &RotArgs, seed: u64) -> Result<RotResult, CliError> {
    let bundle = a.bundle.load()?;
    let (ds, ids) = a.data.load()?;
    let protos = prototype_ids(&a.prototype, &bundle.bank)?;
    let cfg = RotConfig {
        method: a.method.into(),
        kernel: KernelConfig { enabled: !a.no_kernel },
        stride: a.stride,
        samples: a.samples,
        seed,
        noise_range: None,
    };
    let [_, h, w] = bundle.input_shape();
    let mut records = Vec::new();
    for &i in &ids {
        let z = bundle.embed(&ds.images[i])?;
        for &j in &protos {
            let summary = relevance_ordering_test(&bundle, &ds.images[i], i, j, &cfg)?;
            let smap = bundle.similarity_map(&z, j)?;
            let field = bundle.rf()?.patch_field(&bundle.embed_node, smap.argmin().0, smap.argmin().1, smap.patch.0, smap.patch.1)?;
            records.push(RotRecord { summary, rf_fraction: spatial_area(&field) as f64 / (h * w) as f64 });
        }
    }
    let n = records.len().max(1) as f64;
    Ok(RotResult {
        method: cfg.method,
        kernel: cfg.kernel.enabled,
        stride: cfg.stride,
        samples: cfg.samples,
        mean_ausc: records.iter().map(|r| r.summary.ausc).sum::<f64>() / n,
        mean_pct_to_recovery: records.iter().map(|r| r.summary.pct_to_recovery).sum::<f64>() / n,
        records,
    })
}

pub fn cmd_metrics(a: &MetricsArgs, seed: u64) -> Result<MetricsResult, CliError> {
    let bundle = a.bundle.load()?;
    let ds = Dataset::load(&a.images)?;
    let ann = Annotations::load(&a.annotations)?;
    let config = MetricConfig { mu: a.mu, sigma: a.sigma, window: a.window, method: a.method.into() };
    let con = consistency(&bundle, &ds, &ann, &config)?;
    let sta = stability(&bundle, &ds, &ann, &config, seed)?;
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::new(ErrorKind::Input, e))?;
        let csv_err = |e: csv::Error| CliError::new(ErrorKind::Input, e);
        w.write_record(["prototype", "class", "best_part", "max_frequency", "consistent", "stability"]).map_err(csv_err)?;
        for (p, s) in con.prototypes.iter().zip(&sta.per_prototype) {
            w.write_record([
                p.prototype.to_string(),
                p.class.to_string(),
                p.best_part.clone(),
                p.max_frequency.to_string(),
                p.consistent.to_string(),
                s.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    Ok(MetricsResult { config, consistency: con, stability: sta })
}

pub fn cmd_pareto(a: &ParetoArgs) -> Result<ParetoResult, CliError> {
    let file = std::fs::File::open(&a.csv).map_err(|e| io_err(&a.csv, e))?;
    let points = read_pareto_csv(file)?;
    Ok(ParetoResult { front: pareto_front(&points), points })
}

pub fn cmd_losses(a: &LossesArgs) -> Result<Losses, CliError> {
    let bundle = a.bundle.load()?;
    let ds = Dataset::load(&a.images)?;
    let mut logits = Vec::with_capacity(ds.len());
    let mut embeddings = Vec::with_capacity(ds.len());
    for x in &ds.images {
        let z = bundle.embed(x)?;
        logits.push(bundle.logits(&bundle.units(&z)?)?);
        embeddings.push(z);
    }
    let lc = LossConfig { lambda_cls: a.lambda_cls, lambda_sep: a.lambda_sep };
    Ok(evaluate_losses(&logits, &ds.labels, &bundle.bank, &embeddings, &lc, &bundle.sim)?)
}

pub fn cmd_simcheck(a: &SimcheckArgs, seed: u64) -> Result<Vec<RegionError>, CliError> {
    let regions = parse_regions(&a.regions).map_err(|e| CliError::new(ErrorKind::Input, e))?;
    if a.samples == 0 || !(a.epsilon > 0.0) {
        return Err(CliError::new(ErrorKind::Input, "samples and epsilon must be positive"));
    }
    Ok(simcheck(&regions, a.samples, a.epsilon, seed))
}
