//! Task-state representation: a linear embedder fitted to minimize mean
//! squared reconstruction error, latent cosine similarity between tasks, and
//! softmax weighting of the most similar sources.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed state series of a task: `T` frames of `channels x height x width`
/// values, each frame stored flattened in channel-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Vec<f64>>,
}

impl TaskState {
    pub fn new(channels: usize, height: usize, width: usize, frames: Vec<Vec<f64>>) -> Result<Self> {
        let s = TaskState {
            channels,
            height,
            width,
            frames,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::usage("task state needs at least one frame"));
        }
        if self.frame_len() == 0 {
            return Err(Error::usage("task state frames must be non-empty"));
        }
        for f in &self.frames {
            if f.len() != self.frame_len() {
                return Err(Error::Dimension {
                    expected: self.frame_len(),
                    got: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::usage("task state contains non-finite values"));
            }
        }
        Ok(())
    }

    /// Per-pixel mean over time.
    pub fn mean_frame(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.frame_len()];
        for f in &self.frames {
            for (a, b) in m.iter_mut().zip(f) {
                *a += b;
            }
        }
        let t = self.frames.len() as f64;
        m.iter_mut().for_each(|v| *v /= t);
        m
    }
}

/// Latent vectors of one task state, one per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeries {
    pub task_id: String,
    pub vectors: Vec<Vec<f64>>,
}

/// Centered rank-`q` orthogonal projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedder {
    pub shape: (usize, usize, usize),
    pub mean: Vec<f64>,
    /// `q` orthonormal rows of length `channels * height * width`.
    pub projection: Vec<Vec<f64>>,
    /// Set when the training frames had no variance; every latent is then zero.
    pub degenerate: bool,
}

const DEGENERACY_TOL: f64 = 1e-14;

/// Fit the principal subspace of all frames of `states`.
pub fn fit_embedder(states: &[TaskState], latent_dim: usize) -> Result<Embedder> {
    let first = states
        .first()
        .ok_or_else(|| Error::usage("embedder needs at least one task state"))?;
    let shape = first.shape();
    let dim = first.frame_len();
    if latent_dim == 0 || latent_dim > dim {
        return Err(Error::usage(format!(
            "latent dimension {latent_dim} must be in 1..={dim}"
        )));
    }
    for s in states {
        s.validate()?;
        if s.shape() != shape {
            return Err(Error::usage(format!(
                "state shape {:?} differs from {:?}",
                s.shape(),
                shape
            )));
        }
    }

    let frames: Vec<&Vec<f64>> = states.iter().flat_map(|s| s.frames.iter()).collect();
    let n = frames.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in &frames {
        for (m, v) in mean.iter_mut().zip(f.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for f in &frames {
        for (c, (v, m)) in centered.iter_mut().zip(f.iter().zip(&mean)) {
            *c = v - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in 0..dim {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    let degenerate = !(top > DEGENERACY_TOL);

    let projection = order
        .iter()
        .take(latent_dim)
        .map(|&k| {
            let mut row: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // sign convention: largest-magnitude entry positive
            let pivot = row
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bi, bv), (i, v)| {
                    if v.abs() > bv.abs() {
                        (i, *v)
                    } else {
                        (bi, bv)
                    }
                })
                .1;
            if pivot < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            row
        })
        .collect();

    Ok(Embedder {
        shape,
        mean,
        projection,
        degenerate,
    })
}

impl Embedder {
    pub fn latent_dim(&self) -> usize {
        self.projection.len()
    }

    fn encode_frame(&self, frame: &[f64]) -> Vec<f64> {
        if self.degenerate {
            return vec![0.0; self.latent_dim()];
        }
        self.projection
            .iter()
            .map(|row| {
                row.iter()
                    .zip(frame.iter().zip(&self.mean))
                    .map(|(p, (v, m))| p * (v - m))
                    .sum()
            })
            .collect()
    }

    fn decode(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (row, zi) in self.projection.iter().zip(z) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += zi * p;
            }
        }
        out
    }

    pub fn embed(&self, task_id: &str, state: &TaskState) -> Result<LatentSeries> {
        state.validate()?;
        if state.shape() != self.shape {
            return Err(Error::usage(format!(
                "state shape {:?} does not match embedder shape {:?}",
                state.shape(),
                self.shape
            )));
        }
        Ok(LatentSeries {
            task_id: task_id.to_string(),
            vectors: state.frames.iter().map(|f| self.encode_frame(f)).collect(),
        })
    }

    pub fn reconstruct(&self, frame: &[f64]) -> Vec<f64> {
        self.decode(&self.encode_frame(frame))
    }

    /// Mean over all frames of the squared reconstruction error.
    pub fn reconstruction_mse(&self, states: &[TaskState]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in states {
            for f in &s.frames {
                let r = self.reconstruct(f);
                total += f.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                count += 1;
            }
        }
        total / count.max(1) as f64
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Time-averaged cosine similarity of two latent series.
pub fn task_similarity(a: &LatentSeries, b: &LatentSeries) -> Result<f64> {
    if a.vectors.len() != b.vectors.len() || a.vectors.is_empty() {
        return Err(Error::usage(format!(
            "latent series lengths differ or are empty ({} vs {})",
            a.vectors.len(),
            b.vectors.len()
        )));
    }
    let mut total = 0.0;
    for (za, zb) in a.vectors.iter().zip(&b.vectors) {
        if za.len() != zb.len() {
            return Err(Error::Dimension {
                expected: za.len(),
                got: zb.len(),
            });
        }
        let (na, nb) = (norm(za), norm(zb));
        if na == 0.0 {
            return Err(Error::DegenerateLatent {
                task: a.task_id.clone(),
            });
        }
        if nb == 0.0 {
            return Err(Error::DegenerateLatent {
                task: b.task_id.clone(),
            });
        }
        let dot: f64 = za.iter().zip(zb).map(|(x, y)| x * y).sum();
        total += (dot / (na * nb)).clamp(-1.0, 1.0);
    }
    Ok(total / a.vectors.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSource {
    pub id: String,
    /// Position in the archive (insertion order).
    pub index: usize,
    pub similarity: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// Similarity to every archived source, in archive order.
    pub per_source: Vec<(String, f64)>,
    /// The most similar sources, most similar first.
    pub selected: Vec<SelectedSource>,
}

impl SimilarityReport {
    pub fn max_weight(&self) -> f64 {
        self.selected.iter().map(|s| s.weight).fold(0.0, f64::max)
    }

    pub fn max_similarity(&self) -> f64 {
        self.selected
            .iter()
            .map(|s| s.similarity)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Keep the `gamma` most similar sources and weight them by a softmax with
/// temperature `temperature` over that subset only.
pub fn select_and_weight(sims: &[(String, f64)], gamma: usize, temperature: f64) -> Result<SimilarityReport> {
    if sims.is_empty() {
        return Err(Error::usage("no source similarities to select from"));
    }
    if gamma == 0 {
        return Err(Error::usage("gamma must be at least 1"));
    }
    if !(temperature > 0.0) {
        return Err(Error::usage(format!("temperature must be positive, got {temperature}")));
    }
    if let Some((id, _)) = sims.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::usage(format!("similarity for {id} is not finite")));
    }

    let mut order: Vec<usize> = (0..sims.len()).collect();
    // stable: equal similarities keep archive order
    order.sort_by(|&a, &b| sims[b].1.total_cmp(&sims[a].1));
    order.truncate(gamma.min(sims.len()));

    let top = sims[order[0]].1;
    let raw: Vec<f64> = order
        .iter()
        .map(|&i| ((sims[i].1 - top) / temperature).exp())
        .collect();
    let z: f64 = raw.iter().sum();

    Ok(SimilarityReport {
        per_source: sims.to_vec(),
        selected: order
            .iter()
            .zip(&raw)
            .map(|(&i, r)| SelectedSource {
                id: sims[i].0.clone(),
                index: i,
                similarity: sims[i].1,
                weight: r / z,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn latent(vs: Vec<Vec<f64>>) -> LatentSeries {
        LatentSeries {
            task_id: "t".into(),
            vectors: vs,
        }
    }

    fn sims(vals: &[f64]) -> Vec<(String, f64)> {
        vals.iter()
            .enumerate()
            .map(|(i, v)| (format!("s{i}"), *v))
            .collect()
    }

    #[test]
    fn similarity_examples() {
        let a = latent(vec![vec![1.0, 2.0], vec![-1.0, 0.5]]);
        assert!((task_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let x = latent(vec![vec![1.0, 0.0]; 3]);
        let y = latent(vec![vec![0.0, 2.0]; 3]);
        assert_eq!(task_similarity(&x, &y).unwrap(), 0.0);
        let z = latent(vec![vec![1.0, 1.0]; 3]);
        assert!((task_similarity(&x, &z).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
    }

    #[test]
    fn zero_latent_is_degenerate() {
        let x = latent(vec![vec![1.0, 0.0]]);
        let mut y = latent(vec![vec![0.0, 0.0]]);
        y.task_id = "bad".into();
        match task_similarity(&x, &y) {
            Err(Error::DegenerateLatent { task }) => assert_eq!(task, "bad"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weighting_examples() {
        let r = select_and_weight(&sims(&[0.3; 5]), 5, 0.065).unwrap();
        assert!(r.selected.iter().all(|s| (s.weight - 0.2).abs() < 1e-15));

        let r = select_and_weight(&sims(&[0.7, 0.9]), 2, 0.065).unwrap();
        assert_eq!(r.selected[0].id, "s1");
        let direct = 1.0 / (1.0 + (-0.2f64 / 0.065).exp());
        assert!((r.selected[0].weight - direct).abs() < 1e-12);
        assert!((r.selected[0].weight - 0.9559307).abs() < 1e-7);
        assert!((r.selected[1].weight - 0.0440693).abs() < 1e-7);
    }

    #[test]
    fn selection_truncates_and_breaks_ties_by_archive_order() {
        let r = select_and_weight(&sims(&[0.5, 0.8, 0.8, 0.1, 0.8]), 2, 0.065).unwrap();
        let ids: Vec<&str> = r.selected.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["s1", "s2"]);
        let r = select_and_weight(&sims(&[0.5, 0.1]), 5, 0.065).unwrap();
        assert_eq!(r.selected.len(), 2);
        assert!(select_and_weight(&[], 5, 0.065).is_err());
        assert!(select_and_weight(&sims(&[0.5]), 5, 0.0).is_err());
    }

    fn random_states(n: usize, t: usize, dim: usize, seed: u64) -> Vec<TaskState> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| {
                let frames = (0..t)
                    .map(|_| (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                    .collect();
                TaskState::new(1, 1, dim, frames).unwrap()
            })
            .collect()
    }

    #[test]
    fn exact_subspace_reconstructs_perfectly() {
        // frames = base + a*u + b*v, a 2-d affine subspace of R^6
        let mut rng = seeded_rng(5);
        let base = [0.3, -1.0, 2.0, 0.0, 0.5, 1.5];
        let u = [1.0, 0.0, 1.0, 0.0, -1.0, 0.0];
        let v = [0.0, 2.0, 0.0, 1.0, 0.0, 1.0];
        let frames: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random(), rng.random());
                (0..6).map(|i| base[i] + a * u[i] + b * v[i]).collect()
            })
            .collect();
        let states = vec![TaskState::new(1, 2, 3, frames).unwrap()];
        let e = fit_embedder(&states, 2).unwrap();
        assert!(e.reconstruction_mse(&states) < 1e-10);
    }

    #[test]
    fn full_rank_reconstructs_perfectly() {
        let states = random_states(3, 10, 8, 1);
        let e = fit_embedder(&states, 8).unwrap();
        assert!(e.reconstruction_mse(&states) < 1e-20);
    }

    #[test]
    fn degenerate_data_is_flagged() {
        let frames = vec![vec![1.0, 2.0, 3.0]; 5];
        let states = vec![TaskState::new(1, 1, 3, frames).unwrap()];
        let e = fit_embedder(&states, 2).unwrap();
        assert!(e.degenerate);
        let z = e.embed("x", &states[0]).unwrap();
        assert!(z.vectors.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn embed_checks_shape_and_latent_dim() {
        let states = random_states(2, 4, 6, 2);
        assert!(fit_embedder(&states, 7).is_err());
        assert!(fit_embedder(&states, 0).is_err());
        let e = fit_embedder(&states, 3).unwrap();
        let other = random_states(1, 2, 5, 3);
        assert!(e.embed("x", &other[0]).is_err());
    }

    #[test]
    fn identical_frames_give_identical_latents_and_mean_maps_to_center() {
        let states = random_states(4, 25, 6, 7);
        let e = fit_embedder(&states, 4).unwrap();
        let f = states[0].frames[0].clone();
        let dup = TaskState::new(1, 1, 6, vec![f.clone(), f]).unwrap();
        let z = e.embed("d", &dup).unwrap();
        assert_eq!(z.vectors[0], z.vectors[1]);

        // reconstruction of an in-subspace frame is a fixed point
        let rec = e.reconstruct(&states[0].frames[1]);
        let z1 = e.embed("a", &TaskState::new(1, 1, 6, vec![rec.clone()]).unwrap()).unwrap();
        let z2 = e.embed("b", &TaskState::new(1, 1, 6, vec![states[0].frames[1].clone()]).unwrap()).unwrap();
        for (a, b) in z1.vectors[0].iter().zip(&z2.vectors[0]) {
            assert!((a - b).abs() < 1e-12);
        }

        // the training mean sits at the latent origin
        let mean = e.mean.clone();
        let zm = e.embed("m", &TaskState::new(1, 1, 6, vec![mean]).unwrap()).unwrap();
        assert!(zm.vectors[0].iter().all(|v| v.abs() < 1e-12));
    }

    fn series() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.1f64..2.0, 3), 4)
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_scale_invariant(a in series(), b in series(), k in 0.01f64..100.0) {
            let la = latent(a.clone());
            let lb = latent(b);
            prop_assert_eq!(task_similarity(&la, &lb).unwrap(), task_similarity(&lb, &la).unwrap());
            let scaled = latent(a.iter().map(|v| v.iter().map(|x| x * k).collect()).collect());
            let d = task_similarity(&scaled, &lb).unwrap() - task_similarity(&la, &lb).unwrap();
            prop_assert!(d.abs() < 1e-12);
        }

        #[test]
        fn weights_sum_to_one_and_are_shift_invariant(
            vals in prop::collection::vec(-1.0f64..1.0, 1..12),
            shift in -3.0f64..3.0,
            gamma in 1usize..8,
        ) {
            let r = select_and_weight(&sims(&vals), gamma, 0.065).unwrap();
            let total: f64 = r.selected.iter().map(|s| s.weight).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            let r2 = select_and_weight(&sims(&shifted), gamma, 0.065).unwrap();
            for (a, b) in r.selected.iter().zip(&r2.selected) {
                prop_assert_eq!(&a.id, &b.id);
                prop_assert!((a.weight - b.weight).abs() < 1e-12);
            }
        }

        #[test]
        fn lower_temperature_sharpens(vals in prop::collection::vec(-1.0f64..1.0, 2..8)) {
            let distinct = vals.iter().any(|v| (v - vals[0]).abs() > 1e-3);
            prop_assume!(distinct);
            let n = vals.len();
            let hot = select_and_weight(&sims(&vals), n, 0.5).unwrap().max_weight();
            let cold = select_and_weight(&sims(&vals), n, 0.1).unwrap().max_weight();
            prop_assert!(cold > hot);
        }
    }
}
