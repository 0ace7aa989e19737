//! `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key is optional; unknown and repeated keys are rejected. Relative
//! paths are resolved against the directory of the config file.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use cnn2gnn::distill::{DistillConfig, Mechanism};
use cnn2gnn::graph::GraphColumns;

pub const DEFAULT_S: usize = 50;
pub const DEFAULT_TAU_LIST: [f64; 6] = [1.0, 4.0, 8.0, 16.0, 32.0, 64.0];
pub const DEFAULT_S_LIST: [usize; 5] = [10, 30, 50, 70, 90];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line of the offending setting, if one is to blame.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config error at line {line}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Blobs {
        n: usize,
        classes: usize,
        dim: usize,
        spread: f64,
    },
    Csv {
        path: PathBuf,
        label: String,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: DistillConfig,
    pub data: DataSpec,
    pub test_fraction: f64,
    pub student_hidden: usize,
    pub head_hidden: Vec<usize>,
    pub out: Option<PathBuf>,
    pub tau_list: Vec<f64>,
    /// Sweep values of `s`, already clipped to `batch − 1`.
    pub s_list: Vec<usize>,
}

const KEYS: &[&str] = &[
    "s",
    "tau",
    "alpha",
    "lr",
    "batch",
    "epochs",
    "seed",
    "mechanism",
    "columns",
    "data",
    "blobs_n",
    "blobs_classes",
    "blobs_dim",
    "blobs_spread",
    "csv_path",
    "csv_label",
    "idx_images",
    "idx_labels",
    "test_fraction",
    "student_hidden",
    "head_hidden",
    "out",
    "tau_list",
    "s_list",
];

/// Raw settings with the line each came from.
struct Settings {
    values: HashMap<String, (usize, String)>,
    base: PathBuf,
}

impl Settings {
    fn line_of(&self, key: &str) -> Option<usize> {
        self.values.get(key).map(|v| v.0)
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.values.get(key) {
            None => Ok(default),
            Some((line, raw)) => raw.parse().map_err(|_| {
                at(
                    *line,
                    format!("cannot parse `{raw}` as a value for `{key}`"),
                )
            }),
        }
    }

    fn list<T: std::str::FromStr + Clone>(
        &self,
        key: &str,
        default: &[T],
    ) -> Result<Vec<T>, ConfigError> {
        let Some((line, raw)) = self.values.get(key) else {
            return Ok(default.to_vec());
        };
        let items: Result<Vec<T>, _> = raw.split(',').map(|v| v.trim().parse()).collect();
        match items {
            Ok(v) if !v.is_empty() => Ok(v),
            _ => Err(at(
                *line,
                format!("`{key}` must be a comma-separated list, got `{raw}`"),
            )),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(|(_, raw)| self.base.join(raw))
    }

    fn check(&self, key: &str, ok: bool, message: impl Into<String>) -> Result<(), ConfigError> {
        if ok {
            return Ok(());
        }
        Err(ConfigError {
            line: self.line_of(key),
            message: message.into(),
        })
    }
}

fn read_settings(text: &str, base: &Path) -> Result<Settings, ConfigError> {
    let mut values: HashMap<String, (usize, String)> = HashMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(at(line, format!("expected `key = value`, got `{content}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(at(line, format!("unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(at(line, format!("`{key}` has no value")));
        }
        if let Some((first, _)) = values.get(key) {
            return Err(at(line, format!("`{key}` already set at line {first}")));
        }
        values.insert(key.to_string(), (line, value.to_string()));
    }
    Ok(Settings {
        values,
        base: base.to_path_buf(),
    })
}

fn parse_mechanism(settings: &Settings) -> Result<Mechanism, ConfigError> {
    match settings.values.get("mechanism") {
        None => Ok(Mechanism::default()),
        Some((line, raw)) => raw
            .parse()
            .map_err(|e: cnn2gnn::Error| at(*line, e.to_string())),
    }
}

fn parse_columns(settings: &Settings) -> Result<GraphColumns, ConfigError> {
    match settings
        .values
        .get("columns")
        .map(|(l, v)| (*l, v.as_str()))
    {
        None | Some((_, "batch")) => Ok(GraphColumns::Batch),
        Some((_, "full")) => Ok(GraphColumns::Full),
        Some((line, other)) => Err(at(
            line,
            format!("columns must be `batch` or `full`, got `{other}`"),
        )),
    }
}

fn parse_data(settings: &Settings) -> Result<DataSpec, ConfigError> {
    let kind: String = settings.get("data", "blobs".to_string())?;
    let owned: &[&str] = match kind.as_str() {
        "blobs" => &["blobs_n", "blobs_classes", "blobs_dim", "blobs_spread"],
        "csv" => &["csv_path", "csv_label"],
        "idx" => &["idx_images", "idx_labels"],
        other => {
            let line = settings.line_of("data");
            return Err(ConfigError {
                line,
                message: format!("data must be `blobs`, `csv` or `idx`, got `{other}`"),
            });
        }
    };
    for key in [
        "blobs_n",
        "blobs_classes",
        "blobs_dim",
        "blobs_spread",
        "csv_path",
        "csv_label",
        "idx_images",
        "idx_labels",
    ] {
        if !owned.contains(&key) {
            settings.check(
                key,
                settings.line_of(key).is_none(),
                format!("`{key}` does not apply to data = {kind}"),
            )?;
        }
    }
    match kind.as_str() {
        "blobs" => {
            let n = settings.get("blobs_n", 600)?;
            let classes = settings.get("blobs_classes", 3)?;
            let dim = settings.get("blobs_dim", 32)?;
            let spread: f64 = settings.get("blobs_spread", 0.6)?;
            settings.check(
                "blobs_classes",
                classes >= 2,
                "blobs_classes must be at least 2",
            )?;
            settings.check(
                "blobs_n",
                n >= classes,
                "blobs_n must be at least blobs_classes",
            )?;
            settings.check(
                "blobs_dim",
                dim >= classes,
                "blobs_dim must be at least blobs_classes",
            )?;
            settings.check(
                "blobs_spread",
                spread >= 0.0 && spread.is_finite(),
                "blobs_spread must be non-negative",
            )?;
            Ok(DataSpec::Blobs {
                n,
                classes,
                dim,
                spread,
            })
        }
        "csv" => {
            let path = settings.path("csv_path").ok_or_else(|| ConfigError {
                line: settings.line_of("data"),
                message: "data = csv needs `csv_path`".into(),
            })?;
            Ok(DataSpec::Csv {
                path,
                label: settings.get("csv_label", "label".to_string())?,
            })
        }
        _ => {
            let missing = || ConfigError {
                line: settings.line_of("data"),
                message: "data = idx needs `idx_images` and `idx_labels`".into(),
            };
            Ok(DataSpec::Idx {
                images: settings.path("idx_images").ok_or_else(missing)?,
                labels: settings.path("idx_labels").ok_or_else(missing)?,
            })
        }
    }
}

/// Parses config text; `base` anchors relative paths.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let settings = read_settings(text, base)?;
    let defaults = DistillConfig::default();

    let batch_size: usize = settings.get("batch", defaults.batch_size)?;
    settings.check(
        "batch",
        batch_size >= 2,
        format!("batch must be at least 2, got {batch_size}"),
    )?;
    let clip = |s: usize| s.min(batch_size - 1);
    let s = match settings.line_of("s") {
        None => clip(DEFAULT_S),
        Some(_) => settings.get("s", 0)?,
    };
    let train = DistillConfig {
        s,
        tau: settings.get("tau", defaults.tau)?,
        kd_alpha: settings.get("alpha", defaults.kd_alpha)?,
        lr: settings.get("lr", defaults.lr)?,
        batch_size,
        epochs: settings.get("epochs", defaults.epochs)?,
        seed: settings.get("seed", defaults.seed)?,
        mechanism: parse_mechanism(&settings)?,
        columns: parse_columns(&settings)?,
    };
    if let Err(e) = train.validate() {
        let message = match e {
            cnn2gnn::Error::Config(m) => m,
            other => other.to_string(),
        };
        let key = match message.split_whitespace().next() {
            Some("kd_alpha") => "alpha",
            Some("batch_size") => "batch",
            Some(field) => field,
            None => "",
        };
        return Err(ConfigError {
            line: settings.line_of(key),
            message,
        });
    }
    settings.check("epochs", train.epochs >= 1, "epochs must be at least 1")?;

    let test_fraction: f64 = settings.get("test_fraction", 0.3)?;
    settings.check(
        "test_fraction",
        test_fraction > 0.0 && test_fraction < 1.0,
        format!("test_fraction must lie in (0, 1), got {test_fraction}"),
    )?;
    let student_hidden = settings.get("student_hidden", 256)?;
    settings.check(
        "student_hidden",
        student_hidden >= 1,
        "student_hidden must be positive",
    )?;
    let head_hidden = settings.list("head_hidden", &[512, 256])?;
    settings.check(
        "head_hidden",
        head_hidden.iter().all(|&w| w >= 1),
        "head_hidden widths must be positive",
    )?;

    let tau_list = settings.list("tau_list", &DEFAULT_TAU_LIST)?;
    settings.check(
        "tau_list",
        tau_list.iter().all(|t| *t > 0.0 && t.is_finite()),
        "tau_list values must be positive",
    )?;
    let mut s_list: Vec<usize> = settings.list("s_list", &DEFAULT_S_LIST)?;
    settings.check(
        "s_list",
        s_list.iter().all(|&s| s >= 1),
        "s_list values must be at least 1",
    )?;
    for s in &mut s_list {
        *s = clip(*s);
    }
    s_list.dedup();

    Ok(RunConfig {
        train,
        data: parse_data(&settings)?,
        test_fraction,
        student_hidden,
        head_hidden,
        out: settings.path("out"),
        tau_list,
        s_list,
    })
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}
