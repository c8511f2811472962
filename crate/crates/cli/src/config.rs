//! Run configuration: a flat `key=value` file merged with command-line flags.
//!
//! Grammar: one `key = value` per line; blank lines and lines starting with
//! `#` are ignored; keys are case-insensitive; later lines win. Flags given
//! on the command line override the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use l3o_core::alt_variance::ProcedureId;
use l3o_core::design::WeightKind;
use l3o_core::simulate::{ErrorParams, Family};

use crate::args::{Command, Format, Options, WeightsArg};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Estimate,
    Test,
    Cs,
    Diagnose,
    Simulate,
}

/// A concentration target: a number, or a multiple of `√K` or of `c`
/// (written `2sqrtK`, `0.5c`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Value(f64),
    SqrtK(f64),
    PerCell(f64),
}

impl Target {
    pub fn parse(s: &str) -> Option<Self> {
        let t = s.trim();
        let num = |p: &str| -> Option<f64> {
            if p.is_empty() {
                Some(1.0)
            } else {
                p.trim().trim_end_matches('*').parse().ok()
            }
        };
        if let Some(p) = t.strip_suffix("sqrtK").or_else(|| t.strip_suffix("sqrt(K)")) {
            return num(p).map(Target::SqrtK);
        }
        if let Some(p) = t.strip_suffix('c') {
            return num(p).map(Target::PerCell);
        }
        t.parse().ok().map(Target::Value)
    }

    pub fn resolve(&self, k: usize, c: usize) -> f64 {
        match *self {
            Target::Value(v) => v,
            Target::SqrtK(m) => m * (k as f64).sqrt(),
            Target::PerCell(m) => m * c as f64,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Target::Value(v) => format!("{v}"),
            Target::SqrtK(m) => format!("{m}sqrtK"),
            Target::PerCell(m) => format!("{m}c"),
        }
    }
}

/// Simulation design as read from configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub family: Family,
    pub k: usize,
    pub c: usize,
    pub e_tfs: Target,
    pub e_tar: Target,
    pub beta: f64,
    pub params: ErrorParams,
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec {
            family: Family::BinaryJudge,
            k: 400,
            c: 5,
            e_tfs: Target::Value(2.0),
            e_tar: Target::Value(0.0),
            beta: 0.0,
            params: ErrorParams::default_for(Family::BinaryJudge),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub input: Option<PathBuf>,
    pub weights: Option<WeightKind>,
    pub beta0: Option<f64>,
    pub alpha: f64,
    pub procedures: Vec<ProcedureId>,
    pub conservative: bool,
    pub grid: bool,
    pub threads: Option<usize>,
    pub seed: u64,
    pub reps: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub table1: bool,
    pub design: DesignSpec,
}

/// Procedures reported in the benchmark tables.
pub const TABLE_PROCEDURES: [ProcedureId; 9] = [
    ProcedureId::Tsls,
    ProcedureId::Ek,
    ProcedureId::Ms,
    ProcedureId::Mo,
    ProcedureId::XtildeT,
    ProcedureId::XtildeAr,
    ProcedureId::L3o,
    ProcedureId::LmOracle,
    ProcedureId::ArOracle,
];

fn bad(msg: String) -> CliError {
    CliError::Schema(msg)
}

/// Parse `key=value` text into a map with lower-cased keys.
pub fn parse_kv(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("config line {}: expected key=value, got {line:?}", ln + 1)))?;
        let key = k.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(bad(format!("config line {}: empty key", ln + 1)));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

pub fn parse_procedures(s: &str) -> CliResult<Vec<ProcedureId>> {
    let mut out = Vec::new();
    for name in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let p = ProcedureId::parse(name).ok_or_else(|| bad(format!("unknown procedure `{name}`")))?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(bad(String::from("empty procedure list")));
    }
    Ok(out)
}

fn parse_weights(s: &str) -> CliResult<WeightKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "jive" => Ok(WeightKind::Jive),
        "ujive" => Ok(WeightKind::Ujive),
        "sive" => Ok(WeightKind::Sive),
        other => Err(bad(format!("unknown weights `{other}` (jive, ujive or sive)"))),
    }
}

fn parse_format(s: &str) -> CliResult<Format> {
    match s.trim().to_ascii_lowercase().as_str() {
        "json" => Ok(Format::Json),
        "csv" => Ok(Format::Csv),
        "text" => Ok(Format::Text),
        other => Err(bad(format!("unknown format `{other}`"))),
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.trim().parse().map_err(|_| bad(format!("config key `{key}`: cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> CliResult<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(bad(format!("config key `{key}`: expected true/false, got {v:?}"))),
    }
}

fn target(key: &str, v: &str) -> CliResult<Target> {
    Target::parse(v).ok_or_else(|| bad(format!("config key `{key}`: cannot parse {v:?} (number, `<m>sqrtK` or `<m>c`)")))
}

/// Apply family-specific error parameters over the family defaults.
fn error_params(family: Family, map: &BTreeMap<String, String>) -> CliResult<ErrorParams> {
    let get = |k: &str| -> CliResult<Option<f64>> { map.get(k).map(|v| num::<f64>(k, v)).transpose() };
    let mut p = ErrorParams::default_for(family);
    match &mut p {
        ErrorParams::BinaryJudge { sigma_ev, sigma_ee } => {
            if let Some(v) = get("sigma_ev")? {
                *sigma_ev = v;
            }
            if let Some(v) = get("sigma_ee")? {
                *sigma_ee = v;
            }
        }
        ErrorParams::ContinuousX { sigma_ee, sigma_vv, sigma_exi, sigma_ev, sigma_xixi } => {
            if let Some(v) = get("sigma_ee")? {
                *sigma_ee = v;
            }
            if let Some(v) = get("sigma_vv")? {
                *sigma_vv = v;
            }
            if let Some(v) = get("sigma_exi")? {
                *sigma_exi = v;
            }
            if let Some(v) = get("sigma_ev")? {
                *sigma_ev = v;
            }
            if let Some(v) = get("sigma_xixi")? {
                *sigma_xixi = Some(v);
            }
        }
        ErrorParams::BinaryCovariates { p, sigma_ee, sigma_ev, g } => {
            if let Some(v) = get("p")? {
                *p = v;
            }
            if let Some(v) = get("sigma_ee")? {
                *sigma_ee = v;
            }
            if let Some(v) = get("sigma_ev")? {
                *sigma_ev = v;
            }
            if let Some(v) = get("g")? {
                *g = v;
            }
        }
    }
    Ok(p)
}

const KNOWN_KEYS: &[&str] = &[
    "input", "weights", "beta0", "alpha", "procedures", "conservative", "grid", "threads", "seed", "reps", "n_reps",
    "out", "format", "table1", "family", "k", "c", "e_tfs", "e_tar", "beta", "sigma_ev", "sigma_ee", "sigma_vv",
    "sigma_exi", "sigma_xixi", "p", "g",
];

impl RunConfig {
    /// Resolve a parsed command line, reading `--config` if given.
    pub fn from_command(cmd: &Command) -> CliResult<Self> {
        let opts = cmd.options();
        let map = match &opts.config {
            Some(path) => read_config(path)?,
            None => BTreeMap::new(),
        };
        let kind = match cmd {
            Command::Estimate(_) => CommandKind::Estimate,
            Command::Test(_) => CommandKind::Test,
            Command::Cs(_) => CommandKind::Cs,
            Command::Diagnose(_) => CommandKind::Diagnose,
            Command::Simulate(_) => CommandKind::Simulate,
        };
        Self::resolve(kind, opts, &map)
    }

    pub fn resolve(kind: CommandKind, opts: &Options, map: &BTreeMap<String, String>) -> CliResult<Self> {
        if let Some(k) = map.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(bad(format!("unknown config key `{k}`")));
        }
        let s = |k: &str| map.get(k).map(String::as_str);

        let input = opts.input.clone().or_else(|| s("input").map(PathBuf::from));
        let weights = match (opts.weights, s("weights")) {
            (Some(w), _) => Some(match w {
                WeightsArg::Jive => WeightKind::Jive,
                WeightsArg::Ujive => WeightKind::Ujive,
                WeightsArg::Sive => WeightKind::Sive,
            }),
            (None, Some(v)) => Some(parse_weights(v)?),
            (None, None) => None,
        };
        let beta0 = match (opts.beta0, s("beta0")) {
            (Some(b), _) => Some(b),
            (None, Some(v)) => Some(num("beta0", v)?),
            _ => None,
        };
        let alpha = match (opts.alpha, s("alpha")) {
            (Some(a), _) => a,
            (None, Some(v)) => num("alpha", v)?,
            _ => 0.05,
        };
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(bad(format!("alpha must be in (0,1), got {alpha}")));
        }
        let default_procs: &[ProcedureId] = match kind {
            CommandKind::Simulate => &TABLE_PROCEDURES,
            _ => &[ProcedureId::L3o],
        };
        let procedures = match opts.procedures.as_deref().or(s("procedures")) {
            Some(v) => parse_procedures(v)?,
            None => default_procs.to_vec(),
        };
        let flag_or = |flag: bool, key: &str| -> CliResult<bool> {
            if flag {
                Ok(true)
            } else {
                s(key).map(|v| boolean(key, v)).transpose().map(|b| b.unwrap_or(false))
            }
        };
        let conservative = flag_or(opts.conservative, "conservative")?;
        let grid = flag_or(opts.grid, "grid")?;
        let table1 = flag_or(opts.table1, "table1")?;
        let threads = match (opts.threads, s("threads")) {
            (Some(t), _) => Some(t),
            (None, Some(v)) => Some(num("threads", v)?),
            _ => None,
        };
        if threads == Some(0) {
            return Err(bad(String::from("threads must be at least 1")));
        }
        let seed = match (opts.seed, s("seed")) {
            (Some(v), _) => v,
            (None, Some(v)) => num("seed", v)?,
            _ => 1,
        };
        let reps = match (opts.reps, s("reps").or(s("n_reps"))) {
            (Some(v), _) => v,
            (None, Some(v)) => num("n_reps", v)?,
            _ => 1000,
        };
        if reps == 0 {
            return Err(bad(String::from("reps must be at least 1")));
        }
        let out = opts.out.clone().or_else(|| s("out").map(PathBuf::from));
        let format = match (opts.format, s("format")) {
            (Some(f), _) => f,
            (None, Some(v)) => parse_format(v)?,
            _ => match kind {
                CommandKind::Simulate => Format::Csv,
                _ => Format::Json,
            },
        };

        let mut design = DesignSpec::default();
        if let Some(v) = s("family") {
            design.family = Family::parse(v).ok_or_else(|| bad(format!("unknown family `{v}`")))?;
        }
        if let Some(v) = s("k") {
            design.k = num("K", v)?;
        }
        if let Some(v) = s("c") {
            design.c = num("c", v)?;
        }
        if let Some(v) = s("e_tfs") {
            design.e_tfs = target("e_tfs", v)?;
        }
        if let Some(v) = s("e_tar") {
            design.e_tar = target("e_tar", v)?;
        }
        if let Some(v) = s("beta") {
            design.beta = num("beta", v)?;
        }
        design.params = error_params(design.family, map)?;

        Ok(RunConfig {
            command: kind,
            input,
            weights,
            beta0,
            alpha,
            procedures,
            conservative,
            grid,
            threads,
            seed,
            reps,
            out,
            format,
            table1,
            design,
        })
    }
}

pub fn read_config(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Schema(format!("cannot read config {}: {e}", path.display())))?;
    parse_kv(&text)
}
