//! Linear latency model: a forward pass costs `c_base + c_tok * n_toks`, and
//! a rollout costs `c_base * n_fwd + c_tok * n_toks_total + c_fixed`.

use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("need at least two samples with distinct token counts (got {samples} samples, {distinct} distinct)")]
    Degenerate { samples: usize, distinct: usize },
    #[error("invalid sample at row {row}: {reason}")]
    InvalidSample { row: usize, reason: String },
    #[error("malformed parameter file: {0}")]
    Params(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyParams {
    pub c_base: f64,
    pub c_tok: f64,
    #[serde(default)]
    pub c_fixed: f64,
}

impl LatencyParams {
    pub fn new(c_base: f64, c_tok: f64, c_fixed: f64) -> Self {
        Self { c_base, c_tok, c_fixed }
    }

    /// Time of one forward pass over `n_toks` tokens.
    pub fn predict_fwd(&self, n_toks: f64) -> f64 {
        self.c_base + self.c_tok * n_toks
    }

    /// Rollout time for `n_fwd` passes processing `n_toks_total` tokens in all.
    pub fn predict_total(&self, n_fwd: f64, n_toks_total: f64) -> f64 {
        self.c_base * n_fwd + self.c_tok * n_toks_total + self.c_fixed
    }

    /// `key=value` lines, one per coefficient.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "c_base={}", self.c_base).unwrap();
        writeln!(s, "c_tok={}", self.c_tok).unwrap();
        writeln!(s, "c_fixed={}", self.c_fixed).unwrap();
        s
    }

    /// Parses [`to_kv`](Self::to_kv) output. Unknown keys are ignored so a
    /// fit report (which adds `mre=`) reads back directly; `c_fixed` is
    /// optional.
    pub fn from_kv(text: &str) -> Result<Self, LatencyError> {
        let (mut base, mut tok, mut fixed) = (None, None, 0.0);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LatencyError::Params(format!("expected key=value, got `{line}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| LatencyError::Params(format!("bad number for `{}`", k.trim())))?;
            match k.trim() {
                "c_base" => base = Some(v),
                "c_tok" => tok = Some(v),
                "c_fixed" => fixed = v,
                _ => {}
            }
        }
        match (base, tok) {
            (Some(c_base), Some(c_tok)) => Ok(Self { c_base, c_tok, c_fixed: fixed }),
            _ => Err(LatencyError::Params("c_base and c_tok are required".into())),
        }
    }
}

/// One profiled forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub n_toks: f64,
    #[serde(rename = "t_us")]
    pub t_observed: f64,
}

/// One end-to-end rollout measurement, used only to estimate `c_fixed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutSample {
    pub n_fwd: f64,
    pub n_toks_total: f64,
    #[serde(rename = "t_us")]
    pub t_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyFit {
    pub params: LatencyParams,
    /// Mean of `|predicted - observed| / observed` over the samples.
    pub mean_relative_error: f64,
    /// A coefficient came out negative and was pinned at zero.
    pub clamped: bool,
}

/// Ordinary least squares of `t = c_base + c_tok * n_toks`.
///
/// A negative coefficient is pinned at zero and the other one refit under
/// that constraint. `c_fixed` is left at zero; see [`fit_fixed_overhead`].
pub fn fit(samples: &[ProfileSample]) -> Result<LatencyFit, LatencyError> {
    for (row, s) in samples.iter().enumerate() {
        if !(s.n_toks >= 1.0) || !s.n_toks.is_finite() {
            return Err(LatencyError::InvalidSample { row, reason: "n_toks must be >= 1".into() });
        }
        if !(s.t_observed > 0.0) || !s.t_observed.is_finite() {
            return Err(LatencyError::InvalidSample { row, reason: "t_us must be > 0".into() });
        }
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.n_toks).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(LatencyError::Degenerate {
            samples: samples.len(),
            distinct: distinct.len(),
        });
    }

    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s.n_toks).sum::<f64>() / n;
    let mean_t = samples.iter().map(|s| s.t_observed).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.n_toks - mean_x).powi(2)).sum();
    let sxt: f64 = samples
        .iter()
        .map(|s| (s.n_toks - mean_x) * (s.t_observed - mean_t))
        .sum();
    let mut c_tok = sxt / sxx;
    let mut c_base = mean_t - c_tok * mean_x;
    let mut clamped = false;

    if c_base < 0.0 {
        log::warn!("fitted c_base {c_base:.6} < 0; clamping to 0");
        clamped = true;
        c_base = 0.0;
        let sx2: f64 = samples.iter().map(|s| s.n_toks * s.n_toks).sum();
        let sxy: f64 = samples.iter().map(|s| s.n_toks * s.t_observed).sum();
        c_tok = (sxy / sx2).max(0.0);
    }
    if c_tok < 0.0 {
        log::warn!("fitted c_tok {c_tok:.6} < 0; clamping to 0");
        clamped = true;
        c_tok = 0.0;
        c_base = mean_t;
    }

    let params = LatencyParams { c_base, c_tok, c_fixed: 0.0 };
    let mean_relative_error = samples
        .iter()
        .map(|s| (params.predict_fwd(s.n_toks) - s.t_observed).abs() / s.t_observed)
        .sum::<f64>()
        / n;
    Ok(LatencyFit { params, mean_relative_error, clamped })
}

/// Mean residual of end-to-end measurements against the per-pass model,
/// clamped at zero. Returns 0 for an empty slice.
pub fn fit_fixed_overhead(params: &LatencyParams, rollouts: &[RolloutSample]) -> f64 {
    if rollouts.is_empty() {
        return 0.0;
    }
    let mean = rollouts
        .iter()
        .map(|r| r.t_total - params.c_base * r.n_fwd - params.c_tok * r.n_toks_total)
        .sum::<f64>()
        / rollouts.len() as f64;
    mean.max(0.0)
}

/// Reads `n_toks,t_us` CSV (with header).
pub fn read_profile_csv<R: Read>(reader: R) -> Result<Vec<ProfileSample>, LatencyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Reads `n_fwd,n_toks_total,t_us` CSV (with header).
pub fn read_rollout_csv<R: Read>(reader: R) -> Result<Vec<RolloutSample>, LatencyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
