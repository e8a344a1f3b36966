//! Flat `key: value` configuration with dotted keys.
//!
//! Values resolve as built-in defaults, then the config file, then
//! command-line overrides. The canonical form lists every key in sorted
//! order and its SHA-256 is the config hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{Result, RunError};
use crate::eval::MetricRegister;
use crate::models::{LossKind, ModelKind, ModelParams, TrainConfig};
use crate::protocol::{parse_eval_setting, EvalPlan, DEFAULT_SEED};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Str,
    Path,
    Char,
    Bool,
    Uint,
    Float,
}

/// `(key, type, default)`; an empty default means unset.
const KEYS: &[(&str, Kind, &str)] = &[
    ("data.inter", Kind::Path, ""),
    ("data.user", Kind::Path, ""),
    ("data.item", Kind::Path, ""),
    ("data.kg", Kind::Path, ""),
    ("data.link", Kind::Path, ""),
    ("data.net", Kind::Path, ""),
    ("data.separator", Kind::Char, ","),
    ("preprocess.filter_order", Kind::Str, "value,inter_num"),
    ("filter.min_user_inter", Kind::Uint, "0"),
    ("filter.min_item_inter", Kind::Uint, "0"),
    ("filter.value", Kind::Str, ""),
    ("preprocess.fill_nan", Kind::Bool, "false"),
    ("preprocess.label_field", Kind::Str, "rating"),
    ("preprocess.label_threshold", Kind::Float, ""),
    ("preprocess.normalize", Kind::Str, ""),
    ("eval.setting", Kind::Str, "RO_RS,full"),
    ("eval.ratios", Kind::Str, "0.8,0.1,0.1"),
    ("eval.metrics", Kind::Str, "recall,mrr,ndcg,precision"),
    ("eval.topk", Kind::Str, "10"),
    ("eval.valid_metric", Kind::Str, "ndcg@10"),
    ("eval.batch_size", Kind::Uint, "256"),
    ("eval.mask_history", Kind::Bool, "true"),
    ("model.kind", Kind::Str, "BPR"),
    ("model.knn_k", Kind::Uint, "100"),
    ("model.knn_shrink", Kind::Float, "0"),
    ("model.ease_l2", Kind::Float, "250"),
    ("train.learning_rate", Kind::Float, "0.05"),
    ("train.embedding_size", Kind::Uint, "64"),
    ("train.reg_weight", Kind::Float, "0.0001"),
    ("train.batch_size", Kind::Uint, "256"),
    ("train.epochs", Kind::Uint, "50"),
    ("train.patience", Kind::Uint, "10"),
    ("train.loss", Kind::Str, "bpr"),
    ("train.margin", Kind::Float, "1"),
    ("seed", Kind::Uint, "2020"),
    ("output.dir", Kind::Path, "output"),
];

const ALIASES: &[(&str, &str)] = &[
    ("lr", "train.learning_rate"),
    ("learning_rate", "train.learning_rate"),
    ("embedding_size", "train.embedding_size"),
    ("reg_weight", "train.reg_weight"),
    ("epochs", "train.epochs"),
    ("patience", "train.patience"),
    ("train_batch_size", "train.batch_size"),
    ("model", "model.kind"),
    ("eval_setting", "eval.setting"),
    ("metrics", "eval.metrics"),
    ("topk", "eval.topk"),
    ("valid_metric", "eval.valid_metric"),
];

/// Full key for a key or alias, or an error naming the unknown key.
pub fn canonical_key(key: &str) -> Result<&'static str> {
    let key = key.trim();
    if let Some(&(k, _, _)) = KEYS.iter().find(|(k, _, _)| *k == key) {
        return Ok(k);
    }
    ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map(|&(_, k)| k)
        .ok_or_else(|| RunError::UnknownKey(key.to_string()))
}

fn kind_of(key: &str) -> Kind {
    KEYS.iter()
        .find(|(k, _, _)| *k == key)
        .map(|&(_, t, _)| t)
        .expect("canonical key")
}

fn type_error(key: &str, value: &str, expected: &str) -> RunError {
    RunError::TypeMismatch {
        key: key.to_string(),
        value: value.to_string(),
        expected: expected.to_string(),
    }
}

/// Checks and normalizes one raw value.
fn normalize_value(key: &str, value: &str) -> Result<String> {
    let v = value.trim();
    if v.is_empty() {
        return Ok(String::new());
    }
    Ok(match kind_of(key) {
        Kind::Str | Kind::Path => v.to_string(),
        Kind::Char => match v {
            "\\t" | "tab" => "\t".to_string(),
            _ if v.chars().count() == 1 => v.to_string(),
            _ => return Err(type_error(key, v, "a single character")),
        },
        Kind::Bool => match v.to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => "true".into(),
            "false" | "no" | "off" | "0" => "false".into(),
            _ => return Err(type_error(key, v, "a boolean")),
        },
        Kind::Uint => v
            .parse::<u64>()
            .map_err(|_| type_error(key, v, "a non-negative integer"))?
            .to_string(),
        Kind::Float => {
            let x = v.parse::<f64>().map_err(|_| type_error(key, v, "a number"))?;
            if !x.is_finite() {
                return Err(type_error(key, v, "a finite number"));
            }
            x.to_string()
        }
    })
}

/// Type-checks a value for a canonical key.
pub fn check_value(key: &str, value: &str) -> Result<()> {
    normalize_value(key, value).map(|_| ())
}

/// Parses `key: value` lines; `#` starts a comment line. `key=value` is
/// accepted too.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .or_else(|| line.split_once('='))
            .ok_or_else(|| RunError::ConfigSyntax {
                line: n + 1,
                text: line.to_string(),
            })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` override.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    text.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| RunError::ConfigSyntax {
            line: 0,
            text: text.to_string(),
        })
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Directory relative paths are resolved against; not part of the hash.
    base_dir: PathBuf,
}

impl Config {
    /// Defaults overridden by `entries` in order.
    pub fn from_entries<K: AsRef<str>, V: AsRef<str>>(
        entries: impl IntoIterator<Item = (K, V)>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|&(k, _, d)| (k.to_string(), d.to_string())).collect();
        for (k, v) in entries {
            let key = canonical_key(k.as_ref())?;
            values.insert(key.to_string(), normalize_value(key, v.as_ref())?);
        }
        let cfg = Self {
            values,
            base_dir: base_dir.into(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides<K: AsRef<str>, V: AsRef<str>>(
        &self,
        entries: impl IntoIterator<Item = (K, V)>,
    ) -> Result<Self> {
        let base: Vec<(String, String)> = self.values.clone().into_iter().collect();
        let extra: Vec<(String, String)> = entries
            .into_iter()
            .map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string()))
            .collect();
        Self::from_entries(base.into_iter().chain(extra), self.base_dir.clone())
    }

    /// Parses canonical or hand-written config text.
    pub fn from_text(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        Self::from_entries(parse_config_text(text)?, base_dir)
    }

    fn validate(&self) -> Result<()> {
        if self.get("data.inter").is_empty() {
            return Err(RunError::MissingKey("data.inter".into()));
        }
        self.model_kind()?;
        self.train_config()?.validate()?;
        self.eval_plan()?;
        let register = self.register()?;
        if !register.has_key(self.valid_metric()) {
            return Err(RunError::InvalidValue {
                key: "eval.valid_metric".into(),
                reason: format!("`{}` is not among the registered metrics", self.valid_metric()),
            });
        }
        self.filter_order()?;
        self.value_filters()?;
        if self.get_usize("eval.batch_size") == 0 {
            return Err(RunError::InvalidValue {
                key: "eval.batch_size".into(),
                reason: "must be positive".into(),
            });
        }
        if self.get_usize("model.knn_k") == 0 || self.get_f64("model.ease_l2").is_none_or(|l| l <= 0.0) {
            return Err(RunError::InvalidValue {
                key: "model".into(),
                reason: "knn_k and ease_l2 must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn get_usize(&self, key: &str) -> usize {
        self.get(key).parse().unwrap_or(0)
    }

    fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).parse().ok()
    }

    fn get_bool(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    /// Absolute form of a path-valued key, or `None` when unset.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        if v.is_empty() {
            return None;
        }
        let p = Path::new(v);
        Some(if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        })
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn separator(&self) -> char {
        self.get("data.separator").chars().next().unwrap_or(',')
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").parse().unwrap_or(DEFAULT_SEED)
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        ModelKind::from_str(self.get("model.kind")).map_err(|_| RunError::InvalidValue {
            key: "model.kind".into(),
            reason: format!("unknown model `{}`", self.get("model.kind")),
        })
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            knn_k: self.get_usize("model.knn_k"),
            knn_shrink: self.get_f64("model.knn_shrink").unwrap_or(0.0),
            ease_l2: self.get_f64("model.ease_l2").unwrap_or(250.0),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let loss = match self.get("train.loss").to_ascii_lowercase().as_str() {
            "bpr" => LossKind::Bpr,
            "margin" => LossKind::Margin(self.get_f64("train.margin").unwrap_or(1.0)),
            other => {
                return Err(RunError::InvalidValue {
                    key: "train.loss".into(),
                    reason: format!("unknown loss `{other}`"),
                })
            }
        };
        Ok(TrainConfig {
            learning_rate: self.get_f64("train.learning_rate").unwrap_or(f64::NAN),
            embedding_size: self.get_usize("train.embedding_size"),
            reg_weight: self.get_f64("train.reg_weight").unwrap_or(f64::NAN),
            batch_size: self.get_usize("train.batch_size"),
            epochs: self.get_usize("train.epochs"),
            patience: self.get_usize("train.patience"),
            seed: self.seed(),
            loss,
        })
    }

    pub fn eval_plan(&self) -> Result<EvalPlan> {
        let ratios: Vec<f64> = self
            .get("eval.ratios")
            .split([',', ':'])
            .map(|r| r.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| type_error("eval.ratios", self.get("eval.ratios"), "three numbers"))?;
        let ratios: [f64; 3] = ratios
            .try_into()
            .map_err(|_| type_error("eval.ratios", self.get("eval.ratios"), "three numbers"))?;
        let total: f64 = ratios.iter().sum();
        let ratios = ratios.map(|r| r / total);
        Ok(parse_eval_setting(self.get("eval.setting"))?
            .with_ratios(ratios)?
            .with_seed(self.seed()))
    }

    pub fn register(&self) -> Result<MetricRegister> {
        Ok(MetricRegister::parse(self.get("eval.metrics"), self.get("eval.topk"))?)
    }

    pub fn valid_metric(&self) -> &str {
        self.get("eval.valid_metric")
    }

    pub fn eval_batch_size(&self) -> usize {
        self.get_usize("eval.batch_size")
    }

    pub fn mask_history(&self) -> bool {
        self.get_bool("eval.mask_history")
    }

    pub fn fill_nan(&self) -> bool {
        self.get_bool("preprocess.fill_nan")
    }

    pub fn min_inter(&self) -> (usize, usize) {
        (
            self.get_usize("filter.min_user_inter"),
            self.get_usize("filter.min_item_inter"),
        )
    }

    /// `(field, threshold)` when labels are derived from a field.
    pub fn label(&self) -> Option<(&str, f64)> {
        self.get_f64("preprocess.label_threshold")
            .map(|t| (self.get("preprocess.label_field"), t))
    }

    pub fn normalize_fields(&self) -> Vec<&str> {
        list(self.get("preprocess.normalize"))
    }

    pub fn filter_order(&self) -> Result<Vec<FilterStep>> {
        list(self.get("preprocess.filter_order"))
            .into_iter()
            .map(|s| match s {
                "value" => Ok(FilterStep::Value),
                "inter_num" => Ok(FilterStep::InterNum),
                other => Err(RunError::InvalidValue {
                    key: "preprocess.filter_order".into(),
                    reason: format!("unknown step `{other}`"),
                }),
            })
            .collect()
    }

    /// Value conditions, separated by `;`.
    pub fn value_filters(&self) -> Result<Vec<(String, crate::dataset::ValuePredicate)>> {
        self.get("filter.value")
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|c| {
                crate::dataset::ValuePredicate::parse_condition(c).ok_or_else(|| RunError::InvalidValue {
                    key: "filter.value".into(),
                    reason: format!("cannot parse condition `{c}`"),
                })
            })
            .collect()
    }

    /// Every key with its effective value, sorted by key.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let v = if v == "\t" { "\\t" } else { v.as_str() };
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStep {
    Value,
    InterNum,
}

fn list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

/// Resolves a config from an optional file and `key=value` overrides.
/// Relative paths are taken relative to the file's directory, or to the
/// working directory without a file.
pub fn load_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Config> {
    let (entries, base) = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (parse_config_text(&text)?, base)
        }
        None => (Vec::new(), PathBuf::new()),
    };
    let base = if base.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        base
    };
    Config::from_entries(entries.into_iter().chain(overrides.iter().cloned()), base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(entries: &[(&str, &str)]) -> Result<Config> {
        let mut all = vec![("data.inter", "x.inter")];
        all.extend_from_slice(entries);
        Config::from_entries(all, ".")
    }

    #[test]
    fn defaults_plus_data_path_are_valid() {
        let c = cfg(&[]).unwrap();
        assert_eq!(c.model_kind().unwrap(), ModelKind::Bpr);
        assert_eq!(c.train_config().unwrap().learning_rate, 0.05);
        assert_eq!(c.seed(), 2020);
    }

    #[test]
    fn file_then_cli_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "data.inter: d.inter\nlr: 0.01\n").unwrap();
        let c = load_config(Some(&path), &[]).unwrap();
        assert_eq!(c.train_config().unwrap().learning_rate, 0.01);
        let c = load_config(Some(&path), &[("train.learning_rate".into(), "0.1".into())]).unwrap();
        assert_eq!(c.train_config().unwrap().learning_rate, 0.1);
        assert_eq!(c.path("data.inter").unwrap(), dir.path().join("d.inter"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        match cfg(&[("foo", "1")]) {
            Err(RunError::UnknownKey(k)) => assert_eq!(k, "foo"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            cfg(&[("train.epochs", "ten")]),
            Err(RunError::TypeMismatch { .. })
        ));
        assert!(matches!(
            Config::from_entries(Vec::<(&str, &str)>::new(), "."),
            Err(RunError::MissingKey(_))
        ));
        assert!(cfg(&[("eval.valid_metric", "auc@10")]).is_err());
        assert!(cfg(&[("model.kind", "neumf")]).is_err());
    }

    #[test]
    fn hash_tracks_effective_values_only() {
        let a = cfg(&[("lr", "0.1")]).unwrap();
        let b = cfg(&[("train.learning_rate", "0.10")]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), cfg(&[]).unwrap().hash());
        let back = Config::from_text(&a.canonical_text(), ".").unwrap();
        assert_eq!(back, a);
    }
}
