//! Command-line front end. Every subcommand resolves to a [`RunConfig`]
//! (command, space file, parameters, output file) that `run --config`
//! accepts directly, so both paths share validation and reporting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::charts::{build_chart, default_chart_radius, openness_measure, quasigeodesic_check, OpennessReport, RatioStats};
use crate::error::{refuse, Error, Result};
use crate::flow::{extremal_invariance_test, gradient_curve, FlowConfig, GradientCurve, InvarianceReport};
use crate::glue::{
    build_projection_with, projection_quality, volume_convergence_experiment, ChartOrder, GlueMap, GlueOptions,
    ProjectionQuality,
};
use crate::io::{read_space, space_to_json, Report, SpaceDocument};
use crate::models::{GeneratorSpec, Interior, PolygonOptions};
use crate::space::{
    hausdorff_measure_estimate, packing_dimension_estimate, validate_with_seed, Curve, CurveKind, DimensionEstimate,
    MeasureEstimate, MetricKind, PointId, Space, Subset, DEFAULT_SEED,
};
use crate::strainers::{
    classify, default_search_radius, find_strainer, strainer_number, ClassificationMask, SearchOptions, Strainer,
};

/// Default strainer length bound where a command does not require one.
pub const DEFAULT_ELL: f64 = 0.1;

/// Parameters that name points or seeds and may be zero.
const NON_SCALE_KEYS: [&str; 7] = ["base", "from", "toward_dist", "viewpoint", "seed", "shuffle_seed", "rotation"];

#[derive(Debug, Parser)]
#[command(name = "alexkit", version, about = "Comparison-geometry experiments on sampled metric spaces")]
pub struct Cli {
    /// Worker threads (falls back to ALEXKIT_THREADS); results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a model space file.
    Gen(GenParams),
    /// Check the metric axioms of a space file.
    Validate(ValidateParams),
    /// Classify subset points by (k,δ)-strainers.
    Strain(StrainParams),
    /// Build a strainer chart at a base point.
    Chart(ChartParams),
    /// Check the quasigeodesic monotonicity of a path.
    Qcheck(QcheckParams),
    /// Follow a discrete gradient curve of a distance function.
    Flow(FlowParams),
    /// Strainer number and packing dimension of a subset.
    Dim(DimParams),
    /// Hausdorff measure estimates of a subset.
    Vol(VolParams),
    /// Glue local charts into a projection onto a subset.
    Glue(GlueParams),
    /// Measure estimates along a family of generated spaces.
    Converge(ConvergeParams),
    /// Execute a JSON run configuration.
    Run(RunParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Gen,
    Validate,
    Strain,
    Chart,
    Qcheck,
    Flow,
    Dim,
    Vol,
    Glue,
    Converge,
}

/// A fully described invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_path: Option<PathBuf>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_path: Option<PathBuf>,
}

impl RunConfig {
    /// Numeric scale parameters must be positive, `delta ≤ 0.3`, `ell ≤ 1`.
    pub fn validate(&self) -> Result<()> {
        fn check(key: &str, v: &Value) -> Result<()> {
            match v {
                Value::Number(n) => {
                    let x = n.as_f64().unwrap_or(f64::NAN);
                    if NON_SCALE_KEYS.contains(&key) {
                        if !(x >= 0.0) {
                            return refuse(format!("parameter `{key}` must be nonnegative, got {x}"));
                        }
                    } else if !(x > 0.0) {
                        return refuse(format!("parameter `{key}` must be positive, got {x}"));
                    }
                    Ok(())
                }
                Value::Array(items) => items.iter().try_for_each(|item| check(key, item)),
                _ => Ok(()),
            }
        }
        for (key, v) in &self.params {
            check(key, v)?;
        }
        let get = |k: &str| self.params.get(k).and_then(Value::as_f64);
        if let Some(delta) = get("delta") {
            if delta > 0.3 {
                return refuse(format!("parameter `delta` = {delta} exceeds 0.3"));
            }
        }
        if let Some(ell) = get("ell") {
            if ell > 1.0 {
                return refuse(format!("parameter `ell` = {ell} exceeds 1"));
            }
        }
        Ok(())
    }

    fn from_params<P: Serialize>(command: CommandKind, params: &P) -> Result<Self> {
        let mut map = match serde_json::to_value(params)? {
            Value::Object(map) => map,
            _ => unreachable!("parameter structs serialize to objects"),
        };
        let path = |v: Option<Value>| v.and_then(|v| v.as_str().map(PathBuf::from));
        let space_path = path(map.remove("space"));
        let out_path = path(map.remove("out"));
        Ok(Self {
            command,
            space_path,
            params: map.into_iter().collect(),
            out_path,
        })
    }

    /// Typed parameters, with `space` and `out` taken from the paths.
    fn typed<P: DeserializeOwned>(&self) -> Result<P> {
        let mut map: serde_json::Map<String, Value> = self.params.clone().into_iter().collect();
        if let Some(p) = &self.space_path {
            map.insert("space".into(), Value::String(p.display().to_string()));
        }
        if let Some(p) = &self.out_path {
            map.insert("out".into(), Value::String(p.display().to_string()));
        }
        serde_json::from_value(Value::Object(map)).or_else(|e| refuse(format!("configuration: {e}")))
    }
}

// ---------------------------------------------------------------------------
// parameter sets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    Polygon,
    Square,
    Cone,
    Pillow,
    Circle,
    Segment,
    TwoPoints,
    /// Generator spec JSON given by `--spec`.
    Spec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InteriorMode {
    Full,
    Collar,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct GenParams {
    #[arg(value_enum)]
    pub kind: GenKind,
    /// Number of vertices of a regular polygon.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Sampling pitch.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interior: Option<InteriorMode>,
    /// Collar width for `--interior collar`.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collar: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interior_h: Option<f64>,
    /// Generator spec file for `spec`.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ValidateParams {
    #[arg(long)]
    pub space: PathBuf,
    /// Seed of the sampled triangle check for large spaces.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct StrainParams {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub subset: String,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub ell: f64,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_radius: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ChartParams {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub subset: String,
    #[arg(long)]
    pub base: PointId,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub delta: f64,
    /// Strainer length bound (default 0.1).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
    /// Chart radius (default `ℓδ`).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricArg>,
    /// Directions of the openness grid for k ≥ 2 (default 16).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Intrinsic,
    Extrinsic,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Intrinsic => MetricKind::Intrinsic,
            MetricArg::Extrinsic => MetricKind::Extrinsic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct QcheckParams {
    #[arg(long)]
    pub space: PathBuf,
    /// Curve JSON (`{"points", "step", "kind"}`) or a bare array of ids.
    #[arg(long)]
    pub path: PathBuf,
    #[arg(long)]
    pub viewpoint: PointId,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct FlowParams {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub from: PointId,
    #[arg(long)]
    pub toward_dist: PointId,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    /// Also measure the deviation from `--subset`.
    #[arg(long)]
    #[serde(default)]
    pub invariance: bool,
    /// Step length (default twice the resolution).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct DimParams {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub subset: String,
    #[arg(long)]
    pub delta: f64,
    /// Strainer length bound (default 0.1).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
    /// Packing scales (default five log-spaced values from 2h to 20h).
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct VolParams {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub subset: String,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct GlueParams {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub subset: String,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub ell: f64,
    #[arg(long)]
    pub r: f64,
    /// Collar width (default r/10).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Dimension of the subset (default 1).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_radius: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_candidates: Option<usize>,
    /// Blend charts in a seeded random order instead of net order.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_seed: Option<u64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ConvergeParams {
    /// JSON array of generator specs.
    #[arg(long)]
    pub family: PathBuf,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
    /// CSV table path (default: the output path with extension `csv`).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct RunParams {
    #[arg(long)]
    pub config: PathBuf,
}

impl Command {
    /// Run configuration of a direct subcommand; `None` for `run`.
    pub fn to_config(&self) -> Result<Option<RunConfig>> {
        use CommandKind as K;
        let config = match self {
            Command::Gen(p) => RunConfig::from_params(K::Gen, p)?,
            Command::Validate(p) => RunConfig::from_params(K::Validate, p)?,
            Command::Strain(p) => RunConfig::from_params(K::Strain, p)?,
            Command::Chart(p) => RunConfig::from_params(K::Chart, p)?,
            Command::Qcheck(p) => RunConfig::from_params(K::Qcheck, p)?,
            Command::Flow(p) => RunConfig::from_params(K::Flow, p)?,
            Command::Dim(p) => RunConfig::from_params(K::Dim, p)?,
            Command::Vol(p) => RunConfig::from_params(K::Vol, p)?,
            Command::Glue(p) => RunConfig::from_params(K::Glue, p)?,
            Command::Converge(p) => RunConfig::from_params(K::Converge, p)?,
            Command::Run(_) => return Ok(None),
        };
        Ok(Some(config))
    }
}

// ---------------------------------------------------------------------------
// execution

/// Files produced by a command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Report JSON (the space file for `gen`).
    pub json: String,
    pub csv: Option<String>,
    /// Set when the command's own check failed (e.g. validation); the
    /// report is still written and the process exits with status 2.
    pub refusal: Option<String>,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).or_else(|e| refuse(format!("configuration {}: {e}", path.display())))
}

fn load_space(path: &Path) -> Result<SpaceDocument> {
    let doc = read_space(path)?;
    let report = validate_with_seed(&doc.space, DEFAULT_SEED);
    if !report.passed {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return refuse(format!("space {} fails validation: {}", path.display(), failed.join(", ")));
    }
    Ok(doc)
}

fn report<P: Serialize, R: Serialize>(config: &RunConfig, params: &P, result: R) -> Result<String> {
    let resolved = RunConfig::from_params(config.command, params)?;
    Report::new(format!("{:?}", config.command).to_lowercase(), resolved, result).to_json()
}

fn require<T: Copy>(v: Option<T>, key: &str) -> Result<T> {
    v.map_or_else(|| refuse(format!("missing parameter `{key}`")), Ok)
}

fn generator_spec(p: &GenParams) -> Result<GeneratorSpec> {
    let options = || -> Result<PolygonOptions> {
        let interior = match p.interior.unwrap_or(InteriorMode::Full) {
            InteriorMode::Full => Interior::Full,
            InteriorMode::None => Interior::None,
            InteriorMode::Collar => Interior::Collar {
                width: require(p.collar, "collar")?,
            },
        };
        Ok(PolygonOptions {
            interior,
            interior_h: p.interior_h,
        })
    };
    Ok(match p.kind {
        GenKind::Polygon => GeneratorSpec::RegularPolygon {
            n: require(p.n, "n")?,
            radius: p.radius.unwrap_or(1.0),
            rotation: p.rotation.unwrap_or(0.0),
            h: require(p.h, "h")?,
            options: options()?,
        },
        GenKind::Square => GeneratorSpec::Square {
            side: p.side.unwrap_or(1.0),
            h: require(p.h, "h")?,
            options: options()?,
        },
        GenKind::Cone => GeneratorSpec::Cone {
            theta: require(p.theta, "theta")?,
            radius: p.radius.unwrap_or(1.0),
            h: require(p.h, "h")?,
        },
        GenKind::Pillow => GeneratorSpec::Pillow {
            side: p.side.unwrap_or(1.0),
            h: require(p.h, "h")?,
        },
        GenKind::Circle => GeneratorSpec::Circle {
            length: require(p.length, "length")?,
            h: require(p.h, "h")?,
        },
        GenKind::Segment => GeneratorSpec::Segment {
            length: p.length.unwrap_or(1.0),
            h: require(p.h, "h")?,
        },
        GenKind::TwoPoints => GeneratorSpec::TwoPoints {
            distance: require(p.distance, "distance")?,
        },
        GenKind::Spec => {
            let path = p.spec.as_ref().map_or_else(|| refuse("missing parameter `spec`"), Ok)?;
            serde_json::from_str(&fs::read_to_string(path)?)?
        }
    })
}

fn space_path(config: &RunConfig) -> Result<&Path> {
    config
        .space_path
        .as_deref()
        .map_or_else(|| refuse("missing parameter `space`"), Ok)
}

#[derive(Serialize)]
struct StrainResult {
    mask: ClassificationMask,
    margins: Vec<f64>,
}

#[derive(Serialize)]
struct ChartResult {
    strainer: Strainer,
    radius: f64,
    region: Vec<PointId>,
    values: Vec<Vec<f64>>,
    metric: MetricKind,
    stats: RatioStats,
    extrinsic: RatioStats,
    intrinsic: RatioStats,
    openness: OpennessReport,
}

#[derive(Serialize)]
struct FlowResult {
    curve: GradientCurve,
    #[serde(skip_serializing_if = "Option::is_none")]
    invariance: Option<InvarianceReport>,
}

#[derive(Serialize)]
struct DimResult {
    strainer_number: usize,
    packing_dim: f64,
    estimate: DimensionEstimate,
}

#[derive(Serialize)]
struct VolResult {
    extrinsic: MeasureEstimate,
    intrinsic: MeasureEstimate,
    exact: Option<f64>,
}

#[derive(Serialize)]
struct GlueResult {
    map: GlueMap,
    quality: ProjectionQuality,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PathFile {
    Curve(Curve),
    Ids(Vec<PointId>),
}

fn subset<'a>(space: &'a Space, name: &str) -> Result<Subset<'a>> {
    Subset::named(space, name, None)
}

/// Runs a configuration and returns the files it produces.
pub fn execute(config: &RunConfig) -> Result<Outcome> {
    config.validate()?;
    let done = |json: String| Outcome {
        json,
        csv: None,
        refusal: None,
    };
    match config.command {
        CommandKind::Gen => {
            let p: GenParams = config.typed()?;
            let model = generator_spec(&p)?.generate()?;
            Ok(done(space_to_json(&model.space, Some(&model.annotation))?))
        }
        CommandKind::Validate => {
            let p: ValidateParams = config.typed()?;
            let doc = read_space(&p.space)?;
            let result = validate_with_seed(&doc.space, p.seed.unwrap_or(DEFAULT_SEED));
            let refusal = (!result.passed).then(|| format!("space {} fails validation", p.space.display()));
            Ok(Outcome {
                json: report(config, &p, &result)?,
                csv: None,
                refusal,
            })
        }
        CommandKind::Strain => {
            let p: StrainParams = config.typed()?;
            let doc = load_space(space_path(config)?)?;
            let sub = subset(&doc.space, &p.subset)?;
            let radius = p.search_radius.unwrap_or_else(|| default_search_radius(p.ell));
            let mask = classify(&sub, p.k, p.delta, p.ell, radius)?;
            let margins = mask.margins();
            Ok(done(report(config, &p, StrainResult { mask, margins })?))
        }
        CommandKind::Chart => {
            let p: ChartParams = config.typed()?;
            let doc = load_space(space_path(config)?)?;
            let space = &doc.space;
            let sub = subset(space, &p.subset)?;
            let ell = p.ell.unwrap_or(DEFAULT_ELL);
            let strainer = find_strainer(space, p.base, p.k, p.delta, ell, default_search_radius(ell))?
                .map_or_else(
                    || refuse(format!("no ({},{})-strainer with length > {ell} at point {}", p.k, p.delta, p.base)),
                    Ok,
                )?;
            let radius = p.radius.unwrap_or_else(|| default_chart_radius(ell, p.delta));
            let chart = build_chart(&sub, &strainer, radius)?;
            let metric: MetricKind = p.metric.unwrap_or(MetricArg::Extrinsic).into();
            let openness = openness_measure(space, &chart, p.grid.unwrap_or(16))?;
            let result = ChartResult {
                stats: chart.stats(metric).clone(),
                metric,
                strainer: chart.strainer,
                radius: chart.radius,
                region: chart.region,
                values: chart.values,
                extrinsic: chart.extrinsic,
                intrinsic: chart.intrinsic,
                openness,
            };
            Ok(done(report(config, &p, result)?))
        }
        CommandKind::Qcheck => {
            let p: QcheckParams = config.typed()?;
            let doc = load_space(space_path(config)?)?;
            let space = &doc.space;
            let curve = match serde_json::from_str::<PathFile>(&fs::read_to_string(&p.path)?)? {
                PathFile::Curve(c) => c,
                PathFile::Ids(ids) => {
                    if ids.len() < 2 {
                        return Err(Error::Invalid("a path needs at least two points".into()));
                    }
                    for &id in &ids {
                        space.check_id(id)?;
                    }
                    let total: f64 = ids.windows(2).map(|w| space.dist(w[0], w[1])).sum();
                    let step = total / (ids.len() - 1) as f64;
                    Curve::new(ids, step, CurveKind::Generic)
                }
            };
            let result = quasigeodesic_check(space, &curve, p.viewpoint)?;
            Ok(done(report(config, &p, result)?))
        }
        CommandKind::Flow => {
            let p: FlowParams = config.typed()?;
            let doc = load_space(space_path(config)?)?;
            let space = &doc.space;
            let step = match p.step {
                Some(s) => s,
                None => 2.0 * require(space.resolution, "step")?,
            };
            let mut cfg = FlowConfig::with_step(step);
            if let Some(n) = p.max_steps {
                cfg.max_steps = n;
            }
            let curve = gradient_curve(space, p.toward_dist, p.from, &cfg)?;
            let invariance = if p.invariance {
                let name = p.subset.as_deref().map_or_else(|| refuse("missing parameter `subset`"), Ok)?;
                let sub = subset(space, name)?;
                Some(extremal_invariance_test(&sub, p.toward_dist, &[p.from], &cfg)?)
            } else {
                None
            };
            Ok(done(report(config, &p, FlowResult { curve, invariance })?))
        }
        CommandKind::Dim => {
            let p: DimParams = config.typed()?;
            let doc = load_space(space_path(config)?)?;
            let space = &doc.space;
            let sub = subset(space, &p.subset)?;
            let grid = match &p.eps_grid {
                Some(g) => g.clone(),
                None => {
                    let h = require(space.resolution, "eps_grid")?;
                    (0..5).map(|i| 2.0 * h * 10f64.powf(i as f64 / 4.0)).collect()
                }
            };
            let number = strainer_number(&sub, p.delta, p.ell.unwrap_or(DEFAULT_ELL))?;
            let estimate = packing_dimension_estimate(space, sub.indices(), &grid)?;
            let result = DimResult {
                strainer_number: number,
                packing_dim: estimate.slope,
                estimate,
            };
            Ok(done(report(config, &p, result)?))
        }
        CommandKind::Vol => {
            let p: VolParams = config.typed()?;
            let doc = load_space(space_path(config)?)?;
            let sub = subset(&doc.space, &p.subset)?;
            let result = VolResult {
                extrinsic: hausdorff_measure_estimate(&sub, p.m, p.eps, MetricKind::Extrinsic)?,
                intrinsic: hausdorff_measure_estimate(&sub, p.m, p.eps, MetricKind::Intrinsic)?,
                exact: doc
                    .annotations
                    .as_ref()
                    .and_then(|a| a.exact_measure.get(&p.subset).copied()),
            };
            Ok(done(report(config, &p, result)?))
        }
        CommandKind::Glue => {
            let p: GlueParams = config.typed()?;
            let doc = load_space(space_path(config)?)?;
            let sub = subset(&doc.space, &p.subset)?;
            let mut search = SearchOptions::default();
            if let Some(c) = p.max_candidates {
                search.max_candidates = c;
            }
            let opts = GlueOptions {
                order: p.shuffle_seed.map_or(ChartOrder::Net, |seed| ChartOrder::Shuffled { seed }),
                search_radius: p.search_radius,
                search,
            };
            let map = build_projection_with(&sub, p.m.unwrap_or(1), p.delta, p.ell, p.r, p.rho, opts)?;
            let quality = projection_quality(&sub, &map, 16)?;
            Ok(done(report(config, &p, GlueResult { map, quality })?))
        }
        CommandKind::Converge => {
            let p: ConvergeParams = config.typed()?;
            let family: Vec<GeneratorSpec> = serde_json::from_str(&fs::read_to_string(&p.family)?)?;
            let table = volume_convergence_experiment(&family, p.m, p.eps, p.limit)?;
            let csv = table.to_csv()?;
            Ok(Outcome {
                json: report(config, &p, &table)?,
                csv: Some(csv),
                refusal: None,
            })
        }
    }
}

/// Executes a configuration and writes its files; the JSON goes to stdout
/// when no output path is configured.
pub fn run(config: &RunConfig) -> Result<()> {
    let outcome = execute(config)?;
    match &config.out_path {
        Some(path) => {
            fs::write(path, &outcome.json)?;
            if let Some(csv) = &outcome.csv {
                let csv_path = config
                    .params
                    .get("csv")
                    .and_then(Value::as_str)
                    .map_or_else(|| path.with_extension("csv"), PathBuf::from);
                fs::write(csv_path, csv)?;
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{}", outcome.json) {
                // A closed reader (e.g. `| head`) is not a failure of the command.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    match outcome.refusal {
        Some(msg) => refuse(msg),
        None => Ok(()),
    }
}

/// Exit status contract: 0 success, 2 refusal, 1 any other error.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_refusal() => 2,
        Err(_) => 1,
    }
}

/// Runs a parsed command line.
pub fn dispatch(cli: &Cli) -> Result<()> {
    let config = match cli.command.to_config()? {
        Some(c) => c,
        None => match &cli.command {
            Command::Run(r) => load_config(&r.config)?,
            _ => unreachable!("only `run` has no direct configuration"),
        },
    };
    run(&config)
}

/// Worker count from `--threads` or `ALEXKIT_THREADS`.
pub fn thread_count(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| std::env::var("ALEXKIT_THREADS").ok()?.parse().ok())
        .filter(|&n| n > 0)
}
