//! Synthetic expensive calibration tasks.
//!
//! Each task's two objectives are weighted root-mean-square distances from
//! the normalized parameter vector to two target configurations that depend
//! on the task's state series, so tasks with similar states have nearby
//! optima. The Pareto set is the segment between the two targets and the
//! front is the line `f1 + f2 = delta`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedder::TaskState;
use crate::error::{Error, Result};
use crate::metrics::HvReference;
use crate::sampling::{mix_seed, seeded_rng, SeedRng};
use crate::types::{Bounds, ObjectiveVector};

/// A black-box multi-objective problem evaluated in physical units.
pub trait ExpensiveProblem: Send + Sync {
    fn id(&self) -> &str;
    fn bounds(&self) -> &Bounds;
    fn n_objectives(&self) -> usize;
    /// One true evaluation; increments the evaluation counter.
    fn evaluate(&self, theta: &[f64]) -> Result<ObjectiveVector>;
    fn evaluations(&self) -> usize;
    fn hv_reference(&self) -> HvReference;
    /// Exact hypervolume of the true front w.r.t. [`Self::hv_reference`], when known.
    fn analytic_hv(&self) -> Option<f64> {
        None
    }
}

/// Exact hypervolume of the front `{(t, delta - t) : t in [0, delta]}`.
pub fn analytic_hv(delta: f64, reference: &HvReference) -> Result<f64> {
    let r = reference.point();
    if r.len() != 2 || !(r[0] > delta && r[1] > delta) || delta < 0.0 {
        return Err(Error::usage(format!(
            "reference {r:?} must strictly exceed ({delta}, {delta})"
        )));
    }
    Ok(r[0] * r[1] - 0.5 * delta * delta)
}

/// Linear state-to-optimum map `a(s) = clip(gain * Q mean(s) + 0.5)`, with
/// `Q` a seeded matrix of orthonormal rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftMap {
    pub gain: f64,
    pub basis: Vec<Vec<f64>>,
}

pub const SHIFT_OFFSET: f64 = 0.5;
pub const SHIFT_RANGE: (f64, f64) = (0.1, 0.9);

fn gram_schmidt(rows: &mut [Vec<f64>]) {
    for i in 0..rows.len() {
        for j in 0..i {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let rj = rows[j].clone();
            rows[i].iter_mut().zip(&rj).for_each(|(a, b)| *a -= dot * b);
        }
        let n = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        rows[i].iter_mut().for_each(|v| *v /= n);
    }
}

fn normal_vec(rng: &mut SeedRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

impl ShiftMap {
    pub fn new(dim: usize, state_dim: usize, gain: f64, seed: u64) -> Result<Self> {
        if dim > state_dim {
            return Err(Error::usage(format!(
                "decision dimension {dim} exceeds flattened state dimension {state_dim}"
            )));
        }
        let mut rng = seeded_rng(seed);
        let mut basis: Vec<Vec<f64>> = (0..dim).map(|_| normal_vec(&mut rng, state_dim)).collect();
        gram_schmidt(&mut basis);
        Ok(ShiftMap { gain, basis })
    }

    /// Shift for a state; the first coordinate is capped so that the second
    /// target `a + delta e1` stays inside the unit cube.
    pub fn shift(&self, state: &TaskState, delta: f64) -> Vec<f64> {
        let mean = state.mean_frame();
        self.basis
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let v = SHIFT_OFFSET + self.gain * row.iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>();
                let hi = if i == 0 { SHIFT_RANGE.1 - delta } else { SHIFT_RANGE.1 };
                v.clamp(SHIFT_RANGE.0, hi)
            })
            .collect()
    }

    /// `Q^T eta`, a state-space direction that maps onto `eta`.
    fn lift(&self, eta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.basis[0].len()];
        for (row, e) in self.basis.iter().zip(eta) {
            out.iter_mut().zip(row).for_each(|(o, r)| *o += e * r);
        }
        out
    }
}

pub struct SyntheticTask {
    id: String,
    state: TaskState,
    shift: Vec<f64>,
    delta: f64,
    bounds: Bounds,
    counter: AtomicUsize,
    delay: Option<Duration>,
}

impl std::fmt::Debug for SyntheticTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyntheticTask")
            .field("id", &self.id)
            .field("shift", &self.shift)
            .field("delta", &self.delta)
            .finish()
    }
}

impl Clone for SyntheticTask {
    fn clone(&self) -> Self {
        SyntheticTask {
            id: self.id.clone(),
            state: self.state.clone(),
            shift: self.shift.clone(),
            delta: self.delta,
            bounds: self.bounds.clone(),
            counter: AtomicUsize::new(0),
            delay: self.delay,
        }
    }
}

impl SyntheticTask {
    pub fn new(id: impl Into<String>, state: TaskState, shift: Vec<f64>, delta: f64, bounds: Bounds) -> Result<Self> {
        if shift.len() != bounds.dim() {
            return Err(Error::Dimension {
                expected: bounds.dim(),
                got: shift.len(),
            });
        }
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(Error::usage(format!("conflict offset must lie in (0, 0.5], got {delta}")));
        }
        Ok(SyntheticTask {
            id: id.into(),
            state,
            shift,
            delta,
            bounds,
            counter: AtomicUsize::new(0),
            delay: None,
        })
    }

    /// Sleep this long inside every evaluation.
    pub fn with_delay(mut self, delay: Option<Duration>) -> Self {
        self.delay = delay;
        self
    }

    pub fn state(&self) -> &TaskState {
        &self.state
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Objectives at a normalized point; no bounds check, no counting.
    pub fn objectives_normalized(&self, u: &[f64]) -> Vec<f64> {
        let d = u.len();
        let tail: f64 = if d > 1 {
            u[1..].iter().zip(&self.shift[1..]).map(|(x, a)| (x - a).powi(2)).sum::<f64>() / (d - 1) as f64
        } else {
            0.0
        };
        let e1 = u[0] - self.shift[0];
        let e2 = e1 - self.delta;
        vec![(e1 * e1 + tail).sqrt(), (e2 * e2 + tail).sqrt()]
    }

    /// A normalized point on the Pareto set, `t` in `[0, 1]` along the segment.
    pub fn pareto_point(&self, t: f64) -> Vec<f64> {
        let mut u = self.shift.clone();
        u[0] += t * self.delta;
        u
    }
}

impl ExpensiveProblem for SyntheticTask {
    fn id(&self) -> &str {
        &self.id
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn n_objectives(&self) -> usize {
        2
    }

    fn evaluate(&self, theta: &[f64]) -> Result<ObjectiveVector> {
        let u = self.bounds.normalize(theta)?;
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        self.counter.fetch_add(1, Ordering::SeqCst);
        Ok(ObjectiveVector(self.objectives_normalized(&u)))
    }

    fn evaluations(&self) -> usize {
        self.counter.load(Ordering::SeqCst)
    }

    fn hv_reference(&self) -> HvReference {
        HvReference::new(vec![self.delta + 0.1, self.delta + 0.1])
    }

    fn analytic_hv(&self) -> Option<f64> {
        analytic_hv(self.delta, &self.hv_reference()).ok()
    }
}

/// Parameters of a generated task family. Everything is derived
/// deterministically from these values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyParams {
    pub n_source: usize,
    pub n_target: usize,
    pub outlier_targets: usize,
    /// Spread of task regimes around the cluster center.
    pub spread: f64,
    /// Distance of an in-cluster target from the source regime it revisits,
    /// as a fraction of `spread`.
    pub target_jitter: f64,
    /// Per-frame noise, as a fraction of `spread`.
    pub frame_noise: f64,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub delta: f64,
    pub map_gain: f64,
    /// Number of background states used to fit the embedder.
    pub corpus_size: usize,
    pub seed: u64,
    /// Artificial delay per evaluation, in milliseconds.
    pub slow_mode_ms: Option<u64>,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            n_source: 20,
            n_target: 10,
            outlier_targets: 3,
            spread: 1.0,
            target_jitter: 0.1,
            frame_noise: 0.1,
            frames: 6,
            channels: 1,
            height: 4,
            width: 4,
            dim: 5,
            delta: 0.3,
            map_gain: 0.1,
            corpus_size: 64,
            seed: 2024,
            slow_mode_ms: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskFamily {
    pub params: FamilyParams,
    pub map: ShiftMap,
    pub sources: Vec<SyntheticTask>,
    /// In-cluster targets first, then outliers.
    pub targets: Vec<SyntheticTask>,
    pub outlier: Vec<bool>,
    /// Background states for fitting the embedder.
    pub corpus: Vec<TaskState>,
}

fn frame_cosine(a: &TaskState, b: &TaskState) -> f64 {
    let t = a.frames.len().min(b.frames.len());
    let mut total = 0.0;
    for (x, y) in a.frames.iter().zip(&b.frames).take(t) {
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        total += dot / (nx * ny);
    }
    total / t as f64
}

const MAX_OUTLIER_DRAWS: usize = 64;

impl TaskFamily {
    pub fn generate(params: &FamilyParams) -> Result<Self> {
        let p = params;
        if p.outlier_targets > p.n_target {
            return Err(Error::usage("outlier_targets exceeds n_target"));
        }
        if p.n_source == 0 && p.n_target > p.outlier_targets {
            return Err(Error::usage("in-cluster targets need at least one source"));
        }
        let state_dim = p.channels * p.height * p.width;
        let bounds = if p.dim == 5 { Bounds::microphysics() } else { Bounds::unit(p.dim) };
        let map = ShiftMap::new(p.dim, state_dim, p.map_gain, mix_seed(p.seed, 1))?;
        let mut rng = seeded_rng(mix_seed(p.seed, 2));
        let center = normal_vec(&mut rng, state_dim);
        let delay = p.slow_mode_ms.map(Duration::from_millis);

        let make_state = |rng: &mut SeedRng, center: &[f64], eta: &[f64]| -> Result<TaskState> {
            let offset = map.lift(eta);
            let frames = (0..p.frames)
                .map(|_| {
                    let noise = normal_vec(rng, state_dim);
                    (0..state_dim)
                        .map(|k| center[k] + p.spread * (offset[k] + p.frame_noise * noise[k]))
                        .collect()
                })
                .collect();
            TaskState::new(p.channels, p.height, p.width, frames)
        };
        let make_task = |id: String, state: TaskState| -> Result<SyntheticTask> {
            let shift = map.shift(&state, p.delta);
            Ok(SyntheticTask::new(id, state, shift, p.delta, bounds.clone())?.with_delay(delay))
        };

        let mut etas = Vec::with_capacity(p.n_source);
        let mut sources = Vec::with_capacity(p.n_source);
        for i in 0..p.n_source {
            let eta = normal_vec(&mut rng, p.dim);
            let state = make_state(&mut rng, &center, &eta)?;
            sources.push(make_task(format!("source-{i:02}"), state)?);
            etas.push(eta);
        }

        let n_in = p.n_target - p.outlier_targets;
        let mut targets = Vec::with_capacity(p.n_target);
        for k in 0..n_in {
            let base = rng.random_range(0..p.n_source);
            let eta: Vec<f64> = etas[base]
                .iter()
                .map(|e| e + p.target_jitter * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let state = make_state(&mut rng, &center, &eta)?;
            targets.push(make_task(format!("target-{k:02}"), state)?);
        }

        let max_sim = |t: &SyntheticTask, sources: &[SyntheticTask]| {
            sources
                .iter()
                .map(|s| frame_cosine(t.state(), s.state()))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let in_cluster_floor = targets
            .iter()
            .map(|t| max_sim(t, &sources))
            .fold(f64::INFINITY, f64::min);

        let c_norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut accepted = None;
        for attempt in 0..MAX_OUTLIER_DRAWS {
            let mut orng = seeded_rng(mix_seed(p.seed, 100 + attempt as u64));
            let mut pair = vec![center.clone(), normal_vec(&mut orng, state_dim)];
            gram_schmidt(&mut pair);
            let far: Vec<f64> = pair[1].iter().map(|v| v * c_norm).collect();
            let outliers = (0..p.outlier_targets)
                .map(|k| {
                    let eta = normal_vec(&mut orng, p.dim);
                    let state = make_state(&mut orng, &far, &eta)?;
                    make_task(format!("target-{:02}", n_in + k), state)
                })
                .collect::<Result<Vec<_>>>()?;
            let separated = outliers.iter().all(|o| max_sim(o, &sources) < in_cluster_floor);
            if separated || p.n_source == 0 || n_in == 0 {
                accepted = Some(outliers);
                break;
            }
        }
        let outliers = accepted.ok_or_else(|| {
            Error::usage("could not draw outlier targets separated from the source cluster")
        })?;
        targets.extend(outliers);

        let mut crng = seeded_rng(mix_seed(p.seed, 3));
        let corpus = (0..p.corpus_size)
            .map(|_| {
                let frames = (0..p.frames).map(|_| normal_vec(&mut crng, state_dim)).collect();
                TaskState::new(p.channels, p.height, p.width, frames)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut outlier = vec![false; n_in];
        outlier.extend(std::iter::repeat_n(true, p.outlier_targets));
        Ok(TaskFamily {
            params: p.clone(),
            map,
            sources,
            targets,
            outlier,
            corpus,
        })
    }

    /// Every state the embedder may be fitted on before any target arrives.
    pub fn embedder_training_states(&self) -> Vec<TaskState> {
        self.corpus
            .iter()
            .cloned()
            .chain(self.sources.iter().map(|s| s.state().clone()))
            .collect()
    }
}

pub fn make_task_family(n_source: usize, n_target: usize, cluster_spread: f64, outlier_targets: usize, seed: u64) -> Result<TaskFamily> {
    TaskFamily::generate(&FamilyParams {
        n_source,
        n_target,
        outlier_targets,
        spread: cluster_spread,
        seed,
        ..FamilyParams::default()
    })
}
