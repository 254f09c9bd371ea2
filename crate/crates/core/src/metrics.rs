//! Hypervolume and the comparison statistics used in experiment reports.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::seeded_rng;

/// Reference point for hypervolume. Points not strictly better than the
/// reference in every objective contribute nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvReference(pub Vec<f64>);

impl HvReference {
    pub fn new(point: Vec<f64>) -> Self {
        HvReference(point)
    }
    pub fn point(&self) -> &[f64] {
        &self.0
    }
}

/// Exact two-objective hypervolume by a sweep over the non-dominated subset.
pub fn hypervolume_2d<P: AsRef<[f64]>>(front: &[P], reference: &HvReference) -> Result<f64> {
    let r = reference.point();
    if r.len() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: r.len(),
        });
    }
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(front.len());
    for p in front {
        let p = p.as_ref();
        if p.len() != 2 {
            return Err(Error::Dimension {
                expected: 2,
                got: p.len(),
            });
        }
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::usage("hypervolume requires finite points"));
        }
        if p[0] < r[0] && p[1] < r[1] {
            pts.push((p[0], p[1]));
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    // Walking in increasing f1, a point is non-dominated iff its f2 is below
    // every f2 seen so far.
    let mut hv = 0.0;
    let mut best_f2 = r[1];
    let mut staircase: Vec<(f64, f64)> = Vec::new();
    for (f1, f2) in pts {
        if f2 < best_f2 {
            staircase.push((f1, f2));
            best_f2 = f2;
        }
    }
    for (k, &(f1, f2)) in staircase.iter().enumerate() {
        let next_f1 = staircase.get(k + 1).map_or(r[0], |p| p.0);
        hv += (next_f1 - f1) * (r[1] - f2);
    }
    Ok(hv)
}

const MC_SAMPLES: usize = 1_000_000;
const MC_SEED: u64 = 0x4856_4d43;

/// Hypervolume for any objective count: exact for two objectives, a seeded
/// Monte Carlo estimate otherwise.
pub fn hypervolume<P: AsRef<[f64]>>(front: &[P], reference: &HvReference) -> Result<f64> {
    let r = reference.point();
    if r.len() == 2 {
        return hypervolume_2d(front, reference);
    }
    let m = r.len();
    let pts: Vec<&[f64]> = front
        .iter()
        .map(|p| p.as_ref())
        .filter(|p| p.len() == m && p.iter().zip(r).all(|(a, b)| a < b))
        .collect();
    if pts.is_empty() {
        return Ok(0.0);
    }
    let lo: Vec<f64> = (0..m)
        .map(|j| pts.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let volume: f64 = lo.iter().zip(r).map(|(l, h)| h - l).product();
    let mut rng = seeded_rng(MC_SEED);
    let mut hits = 0usize;
    let mut s = vec![0.0; m];
    for _ in 0..MC_SAMPLES {
        for j in 0..m {
            s[j] = lo[j] + rng.random::<f64>() * (r[j] - lo[j]);
        }
        if pts.iter().any(|p| p.iter().zip(&s).all(|(a, b)| a <= b)) {
            hits += 1;
        }
    }
    Ok(volume * hits as f64 / MC_SAMPLES as f64)
}

/// Percentage difference `100 (hv_algo - hv_ref_algo) / hv_ref_algo`.
pub fn delta_hv_percent(hv_algo: f64, hv_ref_algo: f64) -> Result<f64> {
    if hv_ref_algo <= 0.0 || !hv_ref_algo.is_finite() {
        return Err(Error::UndefinedMetric(format!(
            "reference hypervolume must be positive, got {hv_ref_algo}"
        )));
    }
    Ok(100.0 * (hv_algo - hv_ref_algo) / hv_ref_algo)
}

/// The gap reported in comparison tables: how far the baseline's HV falls
/// below the transfer run's, relative to the baseline's own HV. Negative when
/// the baseline is worse.
pub fn baseline_gap_percent(hv_baseline: f64, hv_transfer: f64) -> Result<f64> {
    delta_hv_percent(hv_transfer, hv_baseline).map(|d| -d)
}

/// Result of [`additional_fe_percent`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdditionalFe {
    Reached(f64),
    /// Target never reached; the value is the largest percentage the
    /// trajectory could have shown.
    Exceeds(f64),
}

impl AdditionalFe {
    pub fn reached(self) -> Option<f64> {
        match self {
            AdditionalFe::Reached(p) => Some(p),
            AdditionalFe::Exceeds(_) => None,
        }
    }

    /// Sort key where "never reached" ranks above every reached value.
    pub fn ordering_key(self) -> f64 {
        match self {
            AdditionalFe::Reached(p) => p,
            AdditionalFe::Exceeds(_) => f64::INFINITY,
        }
    }
}

impl fmt::Display for AdditionalFe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdditionalFe::Reached(p) => write!(f, "{p:.2}%"),
            AdditionalFe::Exceeds(p) => write!(f, ">{p:.0}%"),
        }
    }
}

/// Extra evaluations (in percent of `base_fe`) a trajectory needs to reach
/// `hv_target`. `hv_by_fe[k]` is the incumbent HV after `k + 1` evaluations.
pub fn additional_fe_percent(hv_by_fe: &[f64], hv_target: f64, base_fe: usize) -> Result<AdditionalFe> {
    if base_fe == 0 {
        return Err(Error::usage("base_fe must be positive"));
    }
    let base = base_fe as f64;
    match hv_by_fe.iter().position(|hv| *hv >= hv_target) {
        Some(k) => {
            let fe = (k + 1).max(base_fe) as f64;
            Ok(AdditionalFe::Reached(100.0 * (fe - base) / base))
        }
        None => {
            let fe_max = hv_by_fe.len().max(base_fe) as f64;
            Ok(AdditionalFe::Exceeds(100.0 * (fe_max - base) / base))
        }
    }
}

/// Parse a front file: one point per line, coordinates separated by commas
/// or whitespace. Blank lines and lines starting with `#` are skipped.
pub fn parse_front(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut points: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<&str> = rec.iter().flat_map(|f| f.split_whitespace()).collect();
        if fields.is_empty() {
            continue;
        }
        let point = fields
            .iter()
            .map(|f| {
                f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("not a finite number: {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = points.first() {
            if first.len() != point.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} coordinates, found {}", first.len(), point.len()),
                });
            }
        }
        points.push(point);
    }
    Ok(points)
}
