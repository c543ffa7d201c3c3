//! Run settings from flags, an optional config file, and defaults, in that
//! order of precedence.
//!
//! The config file is flat `key = value` text; `#` starts a comment. Keys
//! mirror the long flags, with `-` or `_` accepted:
//!
//! ```text
//! metric = fwiou
//! k = 2
//! eps = 1e-6
//! gauge = first-zero
//! jobs = 4
//! seed = 7
//! scale-source = both
//! threshold = 0.6
//! repeats = 1
//! port = 8080
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use mad_core::ranking::DEFAULT_FAILURE_THRESHOLD;
use mad_core::selection::ScaleSource;
use mad_core::{Gauge, MetricKind, RankingConfig, SelectionConfig};
use serde::Serialize;

/// Flags shared by every subcommand; `None` means "not given".
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat key=value settings file.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Concordance metric: miou, fwiou or mpa.
    #[arg(long, global = true)]
    pub metric: Option<String>,
    /// Images selected per (defender, attacker, category) cell.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Additive smoothing of performance ratios.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// zero-sum, first-zero or unit-sum.
    #[arg(long, global = true)]
    pub gauge: Option<String>,
    /// Worker threads for the concordance scan.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Whose object proportion is checked against the scale bounds.
    #[arg(long = "scale-source", global = true)]
    pub scale_source: Option<String>,
    /// Score below which a prediction counts as a failure.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Trials per MAD record and rater.
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub metric: MetricKind,
    pub k: usize,
    pub eps: f64,
    pub gauge: Gauge,
    pub jobs: Option<usize>,
    pub seed: u64,
    pub scale_source: ScaleSource,
    pub threshold: f64,
    pub repeats: usize,
    pub port: u16,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            metric: MetricKind::Miou,
            k: 1,
            eps: 1e-6,
            gauge: Gauge::ZeroSum,
            jobs: None,
            seed: 7,
            scale_source: ScaleSource::Defender,
            threshold: DEFAULT_FAILURE_THRESHOLD,
            repeats: 1,
            port: 8080,
        }
    }
}

const KEYS: [&str; 10] = [
    "metric",
    "k",
    "eps",
    "gauge",
    "jobs",
    "seed",
    "scale-source",
    "threshold",
    "repeats",
    "port",
];

/// Parses `key = value` lines.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", n + 1))?;
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            bail!("config line {}: unknown key `{}`", n + 1, k.trim());
        }
        if out.insert(key, v.trim().to_string()).is_some() {
            bail!("config line {}: `{}` set twice", n + 1, k.trim());
        }
    }
    Ok(out)
}

fn pick<T: FromStr>(flag: Option<T>, file: &BTreeMap<String, String>, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(s) => s.parse().map_err(|e| anyhow!("config `{key}`: {e}")),
        None => Ok(default),
    }
}

fn parsed<T: FromStr>(flag: &Option<String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    flag.as_deref()
        .map(|s| s.parse().map_err(|e| anyhow!("--{key}: {e}")))
        .transpose()
}

impl Settings {
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let file = match &o.config {
            Some(p) => {
                parse_config(&fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?)?
            }
            None => BTreeMap::new(),
        };
        Self::layered(o, &file, Settings::default())
    }

    /// `base` supplies the values neither flags nor the file set.
    pub fn layered(o: &Overrides, file: &BTreeMap<String, String>, base: Settings) -> Result<Self> {
        let s = Settings {
            metric: pick(parsed(&o.metric, "metric")?, file, "metric", base.metric)?,
            k: pick(o.k, file, "k", base.k)?,
            eps: pick(o.eps, file, "eps", base.eps)?,
            gauge: pick(parsed(&o.gauge, "gauge")?, file, "gauge", base.gauge)?,
            jobs: match o.jobs {
                Some(j) => Some(j),
                None => file
                    .get("jobs")
                    .map(|s| s.parse())
                    .transpose()
                    .context("config `jobs`")?
                    .or(base.jobs),
            },
            seed: pick(o.seed, file, "seed", base.seed)?,
            scale_source: pick(
                parsed(&o.scale_source, "scale-source")?,
                file,
                "scale-source",
                base.scale_source,
            )?,
            threshold: pick(o.threshold, file, "threshold", base.threshold)?,
            repeats: pick(o.repeats, file, "repeats", base.repeats)?,
            port: pick(o.port, file, "port", base.port)?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if self.eps.is_nan() || self.eps < 0.0 {
            bail!("eps must be >= 0");
        }
        if self.jobs == Some(0) {
            bail!("jobs must be at least 1");
        }
        if self.repeats == 0 {
            bail!("repeats must be at least 1");
        }
        Ok(())
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            metric: self.metric,
            k: self.k,
            scale_source: self.scale_source,
        }
    }

    pub fn ranking(&self) -> RankingConfig<f64> {
        RankingConfig {
            epsilon: self.eps,
            gauge: self.gauge,
            ..RankingConfig::default()
        }
    }

    /// Runs `f` on a rayon pool sized by `jobs` (all cores when unset).
    pub fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            b = b.num_threads(j);
        }
        Ok(b.build().context("building worker pool")?.install(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = parse_config("# regime\nmetric = fwiou\nk=3\nscale_source = both # trailing\n").unwrap();
        let o = Overrides {
            k: Some(2),
            ..Overrides::default()
        };
        let s = Settings::layered(&o, &file, Settings::default()).unwrap();
        assert_eq!(s.metric, MetricKind::Fwiou);
        assert_eq!(s.k, 2);
        assert_eq!(s.scale_source, ScaleSource::Both);
        assert_eq!(s.eps, 1e-6);
        assert_eq!(s.gauge, Gauge::ZeroSum);
        assert_eq!(s.threshold, 0.6);
    }

    #[test]
    fn bad_config_lines() {
        assert!(parse_config("colour = red").is_err());
        assert!(parse_config("metric").is_err());
        assert!(parse_config("k = 1\nk = 2").is_err());
        let file = parse_config("k = many").unwrap();
        assert!(Settings::layered(&Overrides::default(), &file, Settings::default()).is_err());
        let o = Overrides {
            metric: Some("accuracy".into()),
            ..Overrides::default()
        };
        assert!(Settings::layered(&o, &BTreeMap::new(), Settings::default()).is_err());
    }

    #[test]
    fn zero_k_rejected() {
        let o = Overrides {
            k: Some(0),
            ..Overrides::default()
        };
        assert!(Settings::layered(&o, &BTreeMap::new(), Settings::default()).is_err());
    }
}
