//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment, keys are dotted
//! (`model.hidden`, `scaling.factor`). Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ropepp::accounting::ModelConfig;
use ropepp::scaling::ScalingSpec;

pub const KEYS: &[&str] = &[
    "seed",
    "out",
    "float",
    "model.name",
    "model.hidden",
    "model.intermediate",
    "model.layers",
    "model.attn_heads",
    "model.kv_heads",
    "model.vocab",
    "rotary.d",
    "rotary.base",
    "scaling.kind",
    "scaling.new_base",
    "scaling.factor",
    "noise.real",
    "noise.imag",
    "attend.variant",
    "attend.seq",
    "curves.max_dt",
    "curves.grid",
    "curves.kinds",
    "coverage.train_len",
    "coverage.variant",
    "verify.sizes",
    "verify.cases",
    "budget.seqs",
    "budget.dtype_bytes",
    "bench.variant",
    "bench.seqs",
    "bench.repeats",
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    source: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        cfg.source = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                bail!("line {}: unknown key '{key}'", i + 1);
            }
            if value.is_empty() {
                bail!("line {}: empty value for '{key}'", i + 1);
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                bail!("line {}: duplicate key '{key}'", i + 1);
            }
        }
        Ok(Self { values, source: None })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        debug_assert!(KEYS.contains(&key), "{key}");
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key '{key}': cannot parse '{v}': {e}")),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => parse_list(v).map(Some).with_context(|| format!("config key '{key}'")),
        }
    }

    /// Flag value if given, otherwise the file value.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    pub fn pick_list<T: FromStr>(&self, flag: Option<Vec<T>>, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get_list(key),
        }
    }

    pub fn has_model(&self) -> bool {
        self.values.keys().any(|k| k.starts_with("model."))
    }

    /// Model shape from `model.*`; `None` when the file has no model section.
    pub fn model(&self) -> Result<Option<ModelConfig>> {
        if !self.has_model() {
            return Ok(None);
        }
        let need = |key: &str| -> Result<usize> {
            self.get(key)?.ok_or_else(|| anyhow!("config is missing '{key}'"))
        };
        let cfg = ModelConfig {
            name: self
                .get("model.name")?
                .or_else(|| self.source.clone())
                .unwrap_or_default(),
            hidden: need("model.hidden")?,
            intermediate: self.get("model.intermediate")?.unwrap_or(0),
            layers: need("model.layers")?,
            attn_heads: need("model.attn_heads")?,
            kv_heads: need("model.kv_heads")?,
            vocab: self.get("model.vocab")?.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(Some(cfg))
    }

    pub fn scaling(&self) -> Result<ScalingSpec> {
        let kind: Option<String> = self.get("scaling.kind")?;
        let spec = match kind.as_deref() {
            None | Some("none") => ScalingSpec::None,
            Some("ntk") | Some("ntk_rebase") => ScalingSpec::NtkRebase {
                new_base: self
                    .get("scaling.new_base")?
                    .ok_or_else(|| anyhow!("scaling.kind = ntk needs scaling.new_base"))?,
            },
            Some("linear") | Some("linear_pi") | Some("pi") => ScalingSpec::LinearPi {
                factor: self
                    .get("scaling.factor")?
                    .ok_or_else(|| anyhow!("scaling.kind = linear_pi needs scaling.factor"))?,
            },
            Some(other) => bail!("unknown scaling.kind '{other}' (none, ntk, linear_pi)"),
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|e| anyhow!("cannot parse '{x}': {e}")))
        .collect()
}
