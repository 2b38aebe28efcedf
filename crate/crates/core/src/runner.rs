//! Config-driven runs shared by the command-line tool and the tests.
//!
//! Every run writes its artifacts plus a `manifest.json` holding the
//! resolved config, the seed and a SHA-256 per artifact. Passing that
//! manifest back as the config re-runs the same computation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::Exercise;
use crate::experiments::{run_sweep, verify_sweep, Mode, SweepConfig};
use crate::oracle;
use crate::population::derive_seed;
use crate::population::{pop_a, random_population, Cell, Population, RandomPopulationSpec};
use crate::sqf::{
    generate, generate_data, ingest_path, replicate_figure, trend_holds, FigureConfig,
    GeneratorSpec, SchemaConfig,
};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Sweep,
    Sqf,
    OracleCheck,
    Generate,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sweep" => Some(Self::Sweep),
            "sqf" => Some(Self::Sqf),
            "oracle-check" => Some(Self::OracleCheck),
            "generate" => Some(Self::Generate),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sweep => "sweep",
            Self::Sqf => "sqf",
            Self::OracleCheck => "oracle-check",
            Self::Generate => "generate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Format {
    #[default]
    #[serde(rename = "csv")]
    Csv,
    #[serde(rename = "csv+svg")]
    CsvSvg,
}

impl Format {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "csv+svg" => Some(Self::CsvSvg),
            _ => None,
        }
    }

    fn svg(self) -> bool {
        self == Self::CsvSvg
    }
}

/// Where a sweep gets its population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSource {
    /// A built-in population; only `"pop_a"` exists.
    Fixture(String),
    Cells(Vec<Cell>),
    Path(PathBuf),
    Random {
        #[serde(flatten)]
        spec: RandomPopulationSpec,
        seed: u64,
    },
}

impl PopulationSource {
    pub fn load(&self) -> Result<Population> {
        match self {
            Self::Fixture(name) if name == "pop_a" => Ok(pop_a()),
            Self::Fixture(name) => Err(Error::InvalidConfig(format!(
                "unknown population fixture {name:?}"
            ))),
            Self::Cells(cells) => crate::population::build_population(cells.clone()),
            Self::Path(p) => Population::from_json_path(p),
            Self::Random { spec, seed } => Ok(random_population(*spec, *seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRun {
    pub population: PopulationSource,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqfInput {
    Generate(GeneratorSpec),
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: SchemaConfig,
    },
}

impl Default for SqfInput {
    fn default() -> Self {
        Self::Generate(GeneratorSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqfRun {
    #[serde(default)]
    pub input: SqfInput,
    #[serde(default)]
    pub figure: FigureConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRun {
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleRun {
    #[serde(default)]
    pub seed: Option<u64>,
}

const DEFAULT_ORACLE_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command: Command,
    pub seed: Option<u64>,
    pub format: Format,
    pub config: Value,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    PropertyViolation,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::PropertyViolation => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub status: Status,
    pub lines: Vec<String>,
    pub manifest: Option<Manifest>,
}

pub const DEFAULT_OUT: &str = "out";

fn parse_json<T: serde::de::DeserializeOwned>(value: Value, origin: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::InvalidConfig(format!("{origin}: {e}")))
}

/// Reads the config file. A manifest is unwrapped to its recorded config
/// and seed; it must have been written by the same command.
fn load_config(
    command: Command,
    path: Option<&Path>,
) -> Result<(Option<Value>, Option<u64>, Option<Format>)> {
    let Some(path) = path else {
        return Ok((None, None, None));
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    if value.get("manifest_version").is_some() {
        let m: Manifest = parse_json(value, &path.display().to_string())?;
        if m.command != command {
            return Err(Error::InvalidConfig(format!(
                "manifest {} was written by `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        return Ok((Some(m.config), m.seed, Some(m.format)));
    }
    Ok((Some(value), None, None))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Outputs {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn finish(
        self,
        command: Command,
        seed: Option<u64>,
        format: Format,
        config: Value,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            seed,
            format,
            config,
            artifacts: self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| {
        Error::InvalidConfig(format!(
            "{what} is stochastic: pass --seed or set \"seed\" in the config"
        ))
    })
}

/// Runs `command`. Validation and config problems are returned as errors;
/// a completed run that found property violations reports
/// [`Status::PropertyViolation`].
pub fn run(command: Command, opts: &RunOptions) -> Result<RunReport> {
    if let Some(0) = opts.threads {
        return Err(Error::InvalidArgument(
            "--threads must be at least 1".into(),
        ));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start thread pool: {e}")))?;
    pool.install(|| run_inner(command, opts))
}

fn run_inner(command: Command, opts: &RunOptions) -> Result<RunReport> {
    let (config, manifest_seed, manifest_format) = load_config(command, opts.config.as_deref())?;
    let seed = opts.seed.or(manifest_seed);
    let format = opts.format.or(manifest_format).unwrap_or_default();
    let origin = opts
        .config
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "config".into());
    let out_dir = opts
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    match command {
        Command::Sweep => {
            let value =
                config.ok_or_else(|| Error::InvalidConfig("sweep requires --config".into()))?;
            let mut cfg: SweepRun = parse_json(value, &origin)?;
            if let (Mode::MonteCarlo { seed: s, .. }, Some(flag)) = (&mut cfg.sweep.mode, seed) {
                *s = flag;
            }
            let run_seed = match cfg.sweep.mode {
                Mode::MonteCarlo { seed, .. } => Some(seed),
                Mode::Exact => seed,
            };
            run_sweep_command(cfg, run_seed, format, out_dir)
        }
        Command::Sqf => {
            let mut cfg: SqfRun = match config {
                Some(v) => parse_json(v, &origin)?,
                None => SqfRun::default(),
            };
            let s = require_seed(seed.or(cfg.seed), "sqf")?;
            cfg.seed = Some(s);
            run_sqf_command(cfg, s, format, out_dir)
        }
        Command::Generate => {
            let mut cfg: GenerateRun = match config {
                Some(v) => parse_json(v, &origin)?,
                None => GenerateRun::default(),
            };
            let s = require_seed(seed.or(cfg.seed), "generate")?;
            cfg.seed = Some(s);
            cfg.generator.validate()?;
            let mut buf = Vec::new();
            generate(&cfg.generator, s, &mut buf)?;
            let mut out = Outputs::new(out_dir)?;
            out.write("stops.csv", &buf)?;
            let manifest = out.finish(command, Some(s), format, serde_json::to_value(&cfg)?)?;
            Ok(RunReport {
                status: Status::Ok,
                lines: vec![format!("wrote {} synthetic stops", cfg.generator.n)],
                manifest: Some(manifest),
            })
        }
        Command::OracleCheck => {
            let mut cfg: OracleRun = match config {
                Some(v) => parse_json(v, &origin)?,
                None => OracleRun::default(),
            };
            let s = seed.or(cfg.seed).unwrap_or(DEFAULT_ORACLE_SEED);
            cfg.seed = Some(s);
            let checks = oracle::run_all(s);
            let failed = checks.iter().filter(|c| !c.pass).count();
            let mut lines: Vec<String> = checks
                .iter()
                .map(|c| {
                    format!(
                        "{} {}: {}",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.name,
                        c.detail
                    )
                })
                .collect();
            lines.push(format!("{} checks, {failed} failed", checks.len()));
            let manifest = match &opts.out {
                Some(dir) => {
                    let mut out = Outputs::new(dir.clone())?;
                    let mut wr = csv::Writer::from_writer(Vec::new());
                    wr.write_record(["check", "pass", "detail"])?;
                    for c in &checks {
                        wr.write_record([
                            c.name.as_str(),
                            if c.pass { "1" } else { "0" },
                            c.detail.as_str(),
                        ])?;
                    }
                    let bytes = wr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
                    out.write("oracle.csv", &bytes)?;
                    Some(out.finish(command, Some(s), format, serde_json::to_value(&cfg)?)?)
                }
                None => None,
            };
            Ok(RunReport {
                status: if failed == 0 {
                    Status::Ok
                } else {
                    Status::PropertyViolation
                },
                lines,
                manifest,
            })
        }
    }
}

fn run_sweep_command(
    cfg: SweepRun,
    seed: Option<u64>,
    format: Format,
    out_dir: PathBuf,
) -> Result<RunReport> {
    let pop = cfg.population.load()?;
    let result = run_sweep(&pop, &cfg.sweep)?;
    let violations = verify_sweep(&pop, &cfg.sweep, &result);

    let mut out = Outputs::new(out_dir)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    out.write("sweep.csv", &buf)?;
    if !result.mlr.is_empty() {
        let mut buf = Vec::new();
        result.write_mlr_csv(&mut buf)?;
        out.write("mlr.csv", &buf)?;
    }
    if format.svg() {
        for (name, svg) in result.charts() {
            out.write(&name, svg.as_bytes())?;
        }
    }
    let manifest = out.finish(Command::Sweep, seed, format, serde_json::to_value(&cfg)?)?;

    let mut lines = Vec::new();
    if let Some(total) = pop.renormalized_from() {
        lines.push(format!("population masses summed to {total}; renormalized"));
    }
    lines.push(format!(
        "sweep: {} grid points, {} rows",
        cfg.sweep.tau_grid.len(),
        result.rows.len()
    ));
    let flagged = result.rows.iter().filter(|r| r.positivity_flag).count();
    if flagged > 0 {
        lines.push(format!("{flagged} rows flagged for positivity"));
    }
    lines.extend(violations.iter().map(|v| format!("VIOLATION {v}")));
    Ok(RunReport {
        status: if violations.is_empty() {
            Status::Ok
        } else {
            Status::PropertyViolation
        },
        lines,
        manifest: Some(manifest),
    })
}

#[derive(Debug, Clone, Serialize)]
struct SqfReport<'a> {
    ingest: crate::sqf::IngestReport,
    result: &'a crate::sqf::FigureResult,
    trends: Vec<TrendLine>,
}

#[derive(Debug, Clone, Serialize)]
struct TrendLine {
    exercise: Exercise,
    expected: &'static str,
    pass: bool,
    detail: String,
}

fn run_sqf_command(cfg: SqfRun, seed: u64, format: Format, out_dir: PathBuf) -> Result<RunReport> {
    let data = match &cfg.input {
        SqfInput::Generate(spec) => generate_data(spec, seed)?,
        SqfInput::Csv { path, schema } => ingest_path(path, schema)?,
    };
    let result = replicate_figure(&data, &cfg.figure, derive_seed(seed, 1))?;
    let trends: Vec<TrendLine> = [
        (Exercise::YGivenSelected, false),
        (Exercise::SFull, true),
        (Exercise::YsFull, true),
    ]
    .into_iter()
    .map(|(ex, increasing)| {
        let pts: Vec<(f64, f64)> = result.curve(ex, 1).iter().map(|p| (p.2, p.3)).collect();
        let (pass, detail) = trend_holds(&pts, increasing);
        TrendLine {
            exercise: ex,
            expected: if increasing {
                "increasing"
            } else {
                "decreasing"
            },
            pass,
            detail,
        }
    })
    .collect();

    let mut out = Outputs::new(out_dir)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    out.write("figure1.csv", &buf)?;
    if format.svg() {
        out.write("figure1.svg", result.chart().as_bytes())?;
    }
    let report = SqfReport {
        ingest: data.report,
        result: &result,
        trends: trends.clone(),
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    out.write("sqf_report.json", text.as_bytes())?;
    let manifest = out.finish(
        Command::Sqf,
        Some(seed),
        format,
        serde_json::to_value(&cfg)?,
    )?;

    let r = data.report;
    let mut lines = vec![format!(
        "ingest: {} rows read, {} kept, {} missing, {} other group, {} inconsistent",
        r.rows_read, r.kept, r.dropped_missing, r.dropped_other_group, r.rejected_inconsistent
    )];
    for c in &result.calibrations {
        lines.push(format!(
            "share {:.3}: c0 {:.5}, c1 {:.5}, tau {:.5}, tie slack {:?}",
            c.aa_share, c.c[0], c.c[1], c.tau, c.tie_slack
        ));
    }
    let mut ok = true;
    for t in &trends {
        ok &= t.pass;
        lines.push(format!(
            "{} group-1 top share {} {}: {}",
            if t.pass { "PASS" } else { "VIOLATION" },
            t.exercise,
            t.expected,
            t.detail
        ));
    }
    Ok(RunReport {
        status: if ok {
            Status::Ok
        } else {
            Status::PropertyViolation
        },
        lines,
        manifest: Some(manifest),
    })
}
