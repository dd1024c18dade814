//! Pipeline orchestration behind the `sfam` binary.
//!
//! Each command reads an episode manifest, processes episodes on a worker
//! pool and collects results in manifest order, so outputs do not depend on
//! the number of workers.

mod commands;
pub mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

pub use commands::{
    cmd_evaluate, cmd_explain, cmd_sanity, EvaluateOutcome, Outcome, SanityOutcome,
};
use sfam_core::localization::DEFAULT_THRESHOLD;
use sfam_core::{BoxMode, Metric};

/// Which explanation map to build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    #[default]
    Sfam,
    Ram,
    Decomposition,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sfam => "sfam",
            Method::Ram => "ram",
            Method::Decomposition => "decomposition",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        match s {
            "sfam" => Ok(Method::Sfam),
            "ram" => Ok(Method::Ram),
            "decomposition" => Ok(Method::Decomposition),
            other => Err(UsageError(format!(
                "unknown method {other:?}, expected sfam, ram or decomposition"
            ))),
        }
    }
}

/// Bad flags or flag combinations, reported before any episode is touched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "usage error: {}", self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub method: Method,
    /// Overrides the per-episode metric when set.
    pub metric: Option<Metric>,
    pub threshold: f64,
    pub box_mode: BoxMode,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub seed: u64,
    pub keep_going: bool,
    pub alpha: f64,
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            manifest: manifest.into(),
            method: Method::Sfam,
            metric: None,
            threshold: DEFAULT_THRESHOLD,
            box_mode: BoxMode::Component,
            output_dir: output_dir.into(),
            jobs: 1,
            seed: 0,
            keep_going: false,
            alpha: sfam_core::store::DEFAULT_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(UsageError(format!(
                "--threshold must lie strictly between 0 and 1, got {}",
                self.threshold
            )));
        }
        if self.method == Method::Decomposition && self.metric == Some(Metric::Euclidean) {
            return Err(UsageError(
                "decomposition explains cosine similarity only; drop --metric or pass --metric cosine".into(),
            ));
        }
        if self.jobs == 0 {
            return Err(UsageError("--jobs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(UsageError(format!(
                "--alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Metric used for an episode whose manifest entry says `episode_metric`.
    pub fn resolve_metric(&self, episode_metric: Option<Metric>) -> Metric {
        if self.method == Method::Decomposition {
            return Metric::Cosine;
        }
        self.metric.or(episode_metric).unwrap_or_default()
    }
}

/// Parse a comma-separated list of randomization fractions.
pub fn parse_fractions(s: &str) -> Result<Vec<f64>, UsageError> {
    let fractions = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|f| (0.0..=1.0).contains(f))
                .ok_or_else(|| UsageError(format!("fraction {t:?} is not a number in [0, 1]")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if fractions.is_empty() {
        return Err(UsageError("--fractions needs at least one value".into()));
    }
    Ok(fractions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_gates() {
        let mut cfg = RunConfig::new("m.json", "out");
        assert!(cfg.validate().is_ok());
        cfg.method = Method::Decomposition;
        cfg.metric = Some(Metric::Euclidean);
        assert!(cfg.validate().is_err());
        cfg.metric = None;
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.resolve_metric(Some(Metric::Euclidean)), Metric::Cosine);
        cfg.threshold = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn metric_resolution_order() {
        let mut cfg = RunConfig::new("m.json", "out");
        assert_eq!(cfg.resolve_metric(None), Metric::Euclidean);
        assert_eq!(cfg.resolve_metric(Some(Metric::Cosine)), Metric::Cosine);
        cfg.metric = Some(Metric::Euclidean);
        assert_eq!(cfg.resolve_metric(Some(Metric::Cosine)), Metric::Euclidean);
    }

    #[test]
    fn fractions_parse() {
        assert_eq!(parse_fractions("0,0.5, 1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_fractions("0,2").is_err());
        assert!(parse_fractions("").is_err());
        assert!(parse_fractions("x").is_err());
    }
}
