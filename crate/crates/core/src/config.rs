//! Run configuration files: one `key = value` per line, `#` starts a comment.
//! Unknown or repeated keys are errors; every value is range-checked before
//! anything runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::PatchConfig;
use crate::dsd::{RankingScope, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub patches: PatchConfig,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            patches: PatchConfig::default(),
            train_dir: None,
            val_dir: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "depth",
    "filters",
    "kernel",
    "input_channels",
    "sigma",
    "sparsity",
    "ranking",
    "epochs_dense",
    "epochs_sparse",
    "epochs_retrain",
    "lr_initial",
    "lr_drop_factor",
    "batch_size",
    "patch_size",
    "stride",
    "seed",
    "train_dir",
    "val_dir",
    "out_dir",
];

fn config_err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| config_err(line, key, format!("cannot parse `{raw}`")))
}

fn check(ok: bool, line: usize, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_err(line, key, message))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<(&str, usize)> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| config_err(line, content, "expected `key = value`"))?;
            let key = KEYS
                .iter()
                .copied()
                .find(|k| *k == key)
                .ok_or_else(|| config_err(line, key, "unknown key"))?;
            if let Some((_, first)) = seen.iter().find(|(k, _)| *k == key) {
                return Err(config_err(
                    line,
                    key,
                    format!("duplicate key, first set on line {first}"),
                ));
            }
            seen.push((key, line));
            if value.is_empty() {
                return Err(config_err(line, key, "missing value"));
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate_with_lines(&seen)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "depth" => t.network.depth = parse_value(line, key, v)?,
            "filters" => t.network.filters = parse_value(line, key, v)?,
            "kernel" => t.network.kernel_size = parse_value(line, key, v)?,
            "input_channels" => t.network.input_channels = parse_value(line, key, v)?,
            "sigma" => t.sigma = parse_value(line, key, v)?,
            "sparsity" => t.sparsity = parse_value(line, key, v)?,
            "ranking" => {
                t.ranking = match v {
                    "global" => RankingScope::Global,
                    "per_layer" => RankingScope::PerLayer,
                    _ => return Err(config_err(line, key, "expected `global` or `per_layer`")),
                }
            }
            "epochs_dense" => t.epochs_dense = parse_value(line, key, v)?,
            "epochs_sparse" => t.epochs_sparse = parse_value(line, key, v)?,
            "epochs_retrain" => t.epochs_retrain = parse_value(line, key, v)?,
            "lr_initial" => t.lr.initial = parse_value(line, key, v)?,
            "lr_drop_factor" => t.lr.drop_factor = parse_value(line, key, v)?,
            "batch_size" => t.batch_size = parse_value(line, key, v)?,
            "patch_size" => self.patches.patch_size = parse_value(line, key, v)?,
            "stride" => self.patches.stride = parse_value(line, key, v)?,
            "seed" => t.seed = parse_value(line, key, v)?,
            "train_dir" => self.train_dir = Some(PathBuf::from(v)),
            "val_dir" => self.val_dir = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => unreachable!("key list and match arms agree"),
        }
        Ok(())
    }

    fn validate_with_lines(&self, seen: &[(&str, usize)]) -> Result<()> {
        let line_of = |key: &str| seen.iter().find(|(k, _)| *k == key).map_or(0, |(_, l)| *l);
        let t = &self.train;
        let n = &t.network;
        let rules: [(&str, bool, &str); 12] = [
            ("depth", n.depth >= 3, "must be at least 3"),
            ("filters", n.filters >= 1, "must be at least 1"),
            ("kernel", n.kernel_size % 2 == 1, "must be odd"),
            (
                "input_channels",
                n.input_channels >= 1,
                "must be at least 1",
            ),
            (
                "sigma",
                t.sigma >= 0.0 && t.sigma.is_finite(),
                "must be finite and >= 0",
            ),
            (
                "sparsity",
                (0.0..1.0).contains(&t.sparsity),
                "must be in [0, 1)",
            ),
            ("epochs_dense", t.epochs_dense >= 1, "must be at least 1"),
            (
                "lr_initial",
                t.lr.initial > 0.0 && t.lr.initial.is_finite(),
                "must be positive",
            ),
            (
                "lr_drop_factor",
                t.lr.drop_factor > 0.0 && t.lr.drop_factor <= 1.0,
                "must be in (0, 1]",
            ),
            ("batch_size", t.batch_size >= 1, "must be at least 1"),
            (
                "patch_size",
                self.patches.patch_size >= 1,
                "must be at least 1",
            ),
            ("stride", self.patches.stride >= 1, "must be at least 1"),
        ];
        for (key, ok, msg) in rules {
            check(ok, line_of(key), key, msg)?;
        }
        Ok(())
    }

    pub fn require_train_dir(&self) -> Result<&Path> {
        self.train_dir
            .as_deref()
            .ok_or_else(|| config_err(0, "train_dir", "required for training"))
    }

    /// Canonical text form, parseable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("depth", t.network.depth.to_string());
        kv("filters", t.network.filters.to_string());
        kv("kernel", t.network.kernel_size.to_string());
        kv("input_channels", t.network.input_channels.to_string());
        kv("sigma", t.sigma.to_string());
        kv("sparsity", t.sparsity.to_string());
        kv(
            "ranking",
            match t.ranking {
                RankingScope::Global => "global",
                RankingScope::PerLayer => "per_layer",
            }
            .to_string(),
        );
        kv("epochs_dense", t.epochs_dense.to_string());
        kv("epochs_sparse", t.epochs_sparse.to_string());
        kv("epochs_retrain", t.epochs_retrain.to_string());
        kv("lr_initial", t.lr.initial.to_string());
        kv("lr_drop_factor", t.lr.drop_factor.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("patch_size", self.patches.patch_size.to_string());
        kv("stride", self.patches.stride.to_string());
        kv("seed", t.seed.to_string());
        if let Some(d) = &self.train_dir {
            kv("train_dir", d.display().to_string());
        }
        if let Some(d) = &self.val_dir {
            kv("val_dir", d.display().to_string());
        }
        kv("out_dir", self.out_dir.display().to_string());
        out
    }
}
