//! Parameter-space tampering used to measure detection.
//!
//! Randomness comes from the key's `attack` seed only. A gaussian attack
//! with seed `n` draws its targets from ChaCha stream `2n` and its noise
//! from stream `2n + 1`, so for a fixed seed the parameters hit at a smaller
//! fraction are a prefix of those hit at a larger one, with identical noise.

use std::time::Instant;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::ParameterSet;
use crate::error::{Error, Result};
use crate::keys::{seed_for, RandomStream, SeedLabel, SeedValue, WatermarkKey};
use crate::watermark::{embed, extract, frame_payload, WatermarkConfig};

fn default_sigma() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    /// Adds N(0, sigma^2) to `ceil(fraction * n_p)` distinct parameters.
    Gaussian {
        fraction: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Zeroes elements `[start, end)` of one tensor.
    ZeroRange { tensor: String, start: usize, end: usize },
    /// Overwrites elements `[start, end)` of one tensor with `value`.
    ReplaceValue {
        tensor: String,
        start: usize,
        end: usize,
        value: f64,
    },
}

impl AttackSpec {
    pub fn mode(&self) -> &'static str {
        match self {
            AttackSpec::Gaussian { .. } => "gaussian",
            AttackSpec::ZeroRange { .. } => "zero_range",
            AttackSpec::ReplaceValue { .. } => "replace_value",
        }
    }

    pub fn target(&self) -> String {
        match self {
            AttackSpec::Gaussian { fraction, sigma, .. } => format!("{fraction:e}@sigma={sigma}"),
            AttackSpec::ZeroRange { tensor, start, end } => format!("{tensor}[{start}..{end}]"),
            AttackSpec::ReplaceValue {
                tensor,
                start,
                end,
                value,
            } => format!("{tensor}[{start}..{end}]={value}"),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            AttackSpec::Gaussian { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

/// `ceil(fraction * n)`, forgiving float noise around exact products.
pub fn attacked_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let count = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    (count as usize).min(n)
}

pub fn gaussian_attack(
    set: &ParameterSet,
    fraction: f64,
    sigma: f64,
    seed: &SeedValue,
    trial: u64,
) -> Result<(ParameterSet, usize)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|_| Error::InvalidArgument(format!("invalid sigma {sigma}")))?;
    let mut values = set.values();
    let count = attacked_count(fraction, values.len());
    if count == 0 {
        return Ok((set.clone(), 0));
    }
    let targets = RandomStream::with_stream(seed, trial.wrapping_mul(2)).sample_indices(values.len(), count);
    let mut noise = RandomStream::with_stream(seed, trial.wrapping_mul(2).wrapping_add(1));
    for &i in &targets {
        values[i] += normal.sample(&mut noise);
    }
    let mut out = set.clone();
    out.set_values(&values)?;
    Ok((out, count))
}

fn overwrite_range(set: &ParameterSet, tensor: &str, start: usize, end: usize, value: f64) -> Result<ParameterSet> {
    let mut out = set.clone();
    let t = out
        .get_mut(tensor)
        .ok_or_else(|| Error::UnknownTensor(tensor.to_owned()))?;
    if start > end || end > t.len() {
        return Err(Error::InvalidArgument(format!(
            "range [{start}, {end}) out of bounds for tensor `{tensor}` of {} elements",
            t.len()
        )));
    }
    let data = t.data_mut();
    for i in start..end {
        data.set(i, value);
    }
    Ok(out)
}

pub fn zero_attack(set: &ParameterSet, tensor: &str, range: std::ops::Range<usize>) -> Result<ParameterSet> {
    overwrite_range(set, tensor, range.start, range.end, 0.0)
}

pub fn replace_attack(set: &ParameterSet, tensor: &str, range: std::ops::Range<usize>, value: f64) -> Result<ParameterSet> {
    overwrite_range(set, tensor, range.start, range.end, value)
}

/// Applies `spec` and returns the attacked copy with the number of
/// parameters targeted.
pub fn apply_attack(set: &ParameterSet, spec: &AttackSpec, attack_seed: &SeedValue) -> Result<(ParameterSet, usize)> {
    match spec {
        AttackSpec::Gaussian {
            fraction,
            sigma,
            seed,
        } => gaussian_attack(set, *fraction, *sigma, attack_seed, *seed),
        AttackSpec::ZeroRange { tensor, start, end } => {
            Ok((overwrite_range(set, tensor, *start, *end, 0.0)?, end - start))
        }
        AttackSpec::ReplaceValue {
            tensor,
            start,
            end,
            value,
        } => Ok((overwrite_range(set, tensor, *start, *end, *value)?, end - start)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    /// `None` for the untouched baseline.
    pub attack: Option<AttackSpec>,
    pub modified_count: usize,
    pub ber: f64,
    pub verified: bool,
    pub wall_time_ms: f64,
}

/// Embeds `payload` once, then runs every attack on a fresh copy and
/// extracts against the known message. The first report is the baseline.
pub fn run_experiment(
    model: &ParameterSet,
    key: &WatermarkKey,
    payload: &[u8],
    attacks: &[AttackSpec],
    cfg: &WatermarkConfig,
) -> Result<Vec<AttackReport>> {
    let marked = embed(model, key, payload, cfg)?;
    let reference = frame_payload(payload)?;
    let attack_seed = seed_for(key, SeedLabel::Attack);

    let run = |spec: Option<&AttackSpec>| -> Result<AttackReport> {
        let started = Instant::now();
        let (attacked, modified_count) = match spec {
            Some(spec) => apply_attack(&marked, spec, &attack_seed)?,
            None => (marked.clone(), 0),
        };
        let report = extract(&attacked, key, cfg, Some(&reference))?;
        Ok(AttackReport {
            attack: spec.cloned(),
            modified_count,
            ber: report.ber.unwrap_or(1.0),
            verified: report.verified,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    };

    let mut reports = vec![run(None)?];
    reports.extend(
        attacks
            .par_iter()
            .map(|spec| run(Some(spec)))
            .collect::<Result<Vec<_>>>()?,
    );
    Ok(reports)
}

/// CSV with columns `mode,target,seed,modified_count,ber,verified`. Timing
/// is left out so identical runs give identical bytes.
pub fn reports_to_csv(reports: &[AttackReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["mode", "target", "seed", "modified_count", "ber", "verified"])
        .map_err(io)?;
    for r in reports {
        let (mode, target, seed) = match &r.attack {
            Some(spec) => (
                spec.mode().to_owned(),
                spec.target(),
                spec.seed().map(|s| s.to_string()).unwrap_or_default(),
            ),
            None => ("none".to_owned(), String::new(), String::new()),
        };
        w.write_record([
            mode,
            target,
            seed,
            r.modified_count.to_string(),
            format!("{:.6}", r.ber),
            r.verified.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
