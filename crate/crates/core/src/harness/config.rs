use std::fs;
use std::path::Path;

use crate::attack::{AttackConfig, InitMethod};
use crate::error::{Error, Result};
use crate::tensor::Metric;

/// Attack campaign settings from a `key = value` file and/or command-line
/// flags. Unset fields fall back to [`AttackConfig::preset`] for the metric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackSettings {
    pub metric: Option<Metric>,
    pub lambda0: Option<f64>,
    pub beta: Option<f64>,
    pub step: Option<f64>,
    pub mu: Option<f64>,
    pub iters: Option<usize>,
    pub inner: Option<usize>,
    pub topk: Option<usize>,
    pub softmax: Option<bool>,
    pub sample: Option<usize>,
    pub seed: Option<u64>,
    pub init: Option<InitMethod>,
    pub init_tries: Option<usize>,
    pub l1_substitute: Option<bool>,
    pub workers: Option<usize>,
    pub thresholds: Option<Vec<f64>>,
}

pub const SETTINGS_KEYS: [&str; 16] = [
    "metric",
    "lambda0",
    "beta",
    "step",
    "mu",
    "iters",
    "inner",
    "topk",
    "softmax",
    "sample",
    "seed",
    "init",
    "init_tries",
    "l1_substitute",
    "workers",
    "thresholds",
];

fn value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Option<T>> {
    v.parse()
        .map(Some)
        .map_err(|_| Error::invalid(format!("line {line}: bad value '{v}' for '{key}'")))
}

pub fn parse_thresholds(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad threshold '{t}'")))
        })
        .collect()
}

impl AttackSettings {
    /// Parses one `key = value` per line; blank lines and `#` comments are
    /// skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {line}: expected key = value")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "metric" => s.metric = value(line, k, v)?,
                "lambda0" => s.lambda0 = value(line, k, v)?,
                "beta" => s.beta = value(line, k, v)?,
                "step" => s.step = value(line, k, v)?,
                "mu" => s.mu = value(line, k, v)?,
                "iters" => s.iters = value(line, k, v)?,
                "inner" => s.inner = value(line, k, v)?,
                "topk" => s.topk = value(line, k, v)?,
                "softmax" => s.softmax = value(line, k, v)?,
                "sample" => s.sample = value(line, k, v)?,
                "seed" => s.seed = value(line, k, v)?,
                "init" => s.init = value(line, k, v)?,
                "init_tries" => s.init_tries = value(line, k, v)?,
                "l1_substitute" => s.l1_substitute = value(line, k, v)?,
                "workers" => s.workers = value(line, k, v)?,
                "thresholds" => s.thresholds = Some(parse_thresholds(v)?),
                other => {
                    return Err(Error::invalid(format!(
                        "line {line}: unknown key '{other}' (known: {})",
                        SETTINGS_KEYS.join(", ")
                    )))
                }
            }
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merged(self, over: AttackSettings) -> Self {
        Self {
            metric: over.metric.or(self.metric),
            lambda0: over.lambda0.or(self.lambda0),
            beta: over.beta.or(self.beta),
            step: over.step.or(self.step),
            mu: over.mu.or(self.mu),
            iters: over.iters.or(self.iters),
            inner: over.inner.or(self.inner),
            topk: over.topk.or(self.topk),
            softmax: over.softmax.or(self.softmax),
            sample: over.sample.or(self.sample),
            seed: over.seed.or(self.seed),
            init: over.init.or(self.init),
            init_tries: over.init_tries.or(self.init_tries),
            l1_substitute: over.l1_substitute.or(self.l1_substitute),
            workers: over.workers.or(self.workers),
            thresholds: over.thresholds.or(self.thresholds),
        }
    }

    /// The attack configuration; the metric defaults to ℓ2.
    pub fn attack_config(&self) -> Result<AttackConfig> {
        let base = AttackConfig::preset(self.metric.unwrap_or(Metric::L2));
        let cfg = AttackConfig {
            lambda0: self.lambda0.unwrap_or(base.lambda0),
            beta: self.beta.unwrap_or(base.beta),
            step: self.step.unwrap_or(base.step),
            mu: self.mu.unwrap_or(base.mu),
            iterations: self.iters.unwrap_or(base.iterations),
            inner: self.inner.unwrap_or(base.inner),
            k_top: self.topk.unwrap_or(base.k_top),
            use_softmax: self.softmax.unwrap_or(base.use_softmax),
            seed: self.seed.unwrap_or(base.seed),
            init_method: self.init.unwrap_or(base.init_method),
            max_init_tries: self.init_tries.unwrap_or(base.max_init_tries),
            l1_substitute: self.l1_substitute.unwrap_or(base.l1_substitute),
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys_and_comments() {
        let s = AttackSettings::parse(
            "# campaign\nmetric = linf\nmu=3 # wider\n\nsoftmax = true\ninit = ascent\nthresholds = 0.1, 0.3\n",
        )
        .unwrap();
        assert_eq!(s.metric, Some(Metric::Linf));
        assert_eq!(s.mu, Some(3.0));
        assert_eq!(s.softmax, Some(true));
        assert_eq!(s.init, Some(InitMethod::Ascent));
        assert_eq!(s.thresholds, Some(vec![0.1, 0.3]));
        let cfg = s.attack_config().unwrap();
        assert_eq!(
            (cfg.metric, cfg.mu, cfg.use_softmax, cfg.iterations),
            (Metric::Linf, 3.0, true, 900)
        );
    }

    #[test]
    fn unknown_or_malformed_lines_are_errors() {
        assert!(AttackSettings::parse("lamda0 = 0.1").is_err());
        assert!(AttackSettings::parse("mu").is_err());
        assert!(AttackSettings::parse("iters = many").is_err());
        assert!(AttackSettings::parse("init = zeros").is_err());
        assert!(AttackSettings::parse("beta = 2").unwrap().attack_config().is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = AttackSettings::parse("metric = tv\nseed = 4\niters = 50").unwrap();
        let flags = AttackSettings {
            iters: Some(10),
            ..Default::default()
        };
        let cfg = file.merged(flags).attack_config().unwrap();
        assert_eq!((cfg.metric, cfg.seed, cfg.iterations, cfg.mu), (Metric::Tv, 4, 10, 5.0));
    }
}
