//! Similarity-weighted ensemble of source surrogates blended with a local
//! surrogate through a dynamic weight that grows with the evaluation count.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedder::SimilarityReport;
use crate::error::{Error, Result};
use crate::gp::{Prediction, Surrogate};
use crate::types::Bounds;

/// Dynamic local-model weight `1 - exp(-c * fe)`.
pub fn beta(c: f64, fe: usize) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::usage(format!("decay control c must be positive, got {c}")));
    }
    Ok(1.0 - (-c * fe as f64).exp())
}

/// Which quantity of the selected sources is compared against `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdBasis {
    /// Largest raw latent similarity among the selected sources.
    #[default]
    Similarity,
    /// Largest softmax weight among the selected sources.
    Weight,
}

/// `c_high` when a highly similar source is present, `c_low` otherwise.
/// The comparison is inclusive.
pub fn choose_c(report: &SimilarityReport, tau: f64, c_high: f64, c_low: f64, basis: ThresholdBasis) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::usage(format!("tau must lie in (0, 1), got {tau}")));
    }
    if !(c_high > 0.0 && c_low > 0.0) {
        return Err(Error::usage("c_high and c_low must be positive"));
    }
    let score = match basis {
        ThresholdBasis::Weight => report.max_weight(),
        ThresholdBasis::Similarity => report.max_similarity(),
    };
    Ok(if score >= tau { c_high } else { c_low })
}

pub type SharedSurrogate = Arc<dyn Surrogate>;

/// `(1 - beta) * sum_i w_i G_i + beta * G_loc`, with variances mixed using
/// the same weights.
pub struct EnsembleSurrogate {
    sources: Vec<(SharedSurrogate, f64)>,
    local: Option<SharedSurrogate>,
    beta: f64,
    n_objectives: usize,
}

impl EnsembleSurrogate {
    /// Build with `beta = 1 - exp(-c * fe)`. Without a local model the
    /// sources carry all the weight; without sources the local model does.
    pub fn new(sources: Vec<(SharedSurrogate, f64)>, local: Option<SharedSurrogate>, c: f64, fe: usize) -> Result<Self> {
        let b = beta(c, fe)?;
        Self::with_beta(sources, local, b)
    }

    pub fn with_beta(sources: Vec<(SharedSurrogate, f64)>, local: Option<SharedSurrogate>, beta: f64) -> Result<Self> {
        if sources.is_empty() && local.is_none() {
            return Err(Error::usage("ensemble needs at least one model"));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::usage(format!("beta must lie in [0, 1], got {beta}")));
        }
        if !sources.is_empty() {
            let total: f64 = sources.iter().map(|(_, w)| *w).sum();
            if (total - 1.0).abs() > 1e-12 || sources.iter().any(|(_, w)| *w < 0.0) {
                return Err(Error::usage(format!("source weights must be non-negative and sum to 1, got {total}")));
            }
        }
        let n_objectives = sources
            .first()
            .map(|(s, _)| s.n_objectives())
            .or_else(|| local.as_ref().map(|l| l.n_objectives()))
            .unwrap_or(0);
        if sources.iter().any(|(s, _)| s.n_objectives() != n_objectives)
            || local.as_ref().is_some_and(|l| l.n_objectives() != n_objectives)
        {
            return Err(Error::usage("ensemble members disagree on objective count"));
        }
        let beta = match (&local, sources.is_empty()) {
            (None, _) => 0.0,
            (Some(_), true) => 1.0,
            (Some(_), false) => beta,
        };
        Ok(EnsembleSurrogate {
            sources,
            local,
            beta,
            n_objectives,
        })
    }

    /// The effective local weight after the no-local / no-source rules.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn has_local(&self) -> bool {
        self.local.is_some()
    }

    /// Components with a non-zero effective weight.
    fn components(&self) -> Vec<(&SharedSurrogate, f64)> {
        let mut out: Vec<(&SharedSurrogate, f64)> = self
            .sources
            .iter()
            .map(|(s, w)| (s, (1.0 - self.beta) * w))
            .filter(|(_, w)| *w > 0.0)
            .collect();
        if let Some(l) = &self.local {
            if self.beta > 0.0 {
                out.push((l, self.beta));
            }
        }
        out
    }
}

impl Surrogate for EnsembleSurrogate {
    fn n_objectives(&self) -> usize {
        self.n_objectives
    }

    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let comps = self.components();
        if let [(only, w)] = comps.as_slice() {
            if *w == 1.0 {
                return only.predict(x);
            }
        }
        let m = self.n_objectives;
        let mut mean = vec![0.0; m];
        let mut var = vec![0.0; m];
        for (s, w) in comps {
            let p = s.predict(x)?;
            for j in 0..m {
                mean[j] += w * p.mean[j];
                var[j] += w * p.std[j] * p.std[j];
            }
        }
        Ok(Prediction {
            mean,
            std: var.into_iter().map(|v| v.max(0.0).sqrt()).collect(),
        })
    }

    fn predict_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let comps = self.components();
        if let [(only, w)] = comps.as_slice() {
            if *w == 1.0 {
                return only.predict_mean(x);
            }
        }
        let mut mean = vec![0.0; self.n_objectives];
        for (s, w) in comps {
            for (acc, v) in mean.iter_mut().zip(s.predict_mean(x)?) {
                *acc += w * v;
            }
        }
        Ok(mean)
    }
}

/// Query a source model trained under different bounds: target-normalized
/// input is mapped to physical units and re-normalized (with clipping) to the
/// source's bounds.
pub struct Remapped {
    inner: SharedSurrogate,
    target: Bounds,
    source: Bounds,
}

impl Remapped {
    pub fn new(inner: SharedSurrogate, target: Bounds, source: Bounds) -> Self {
        Remapped { inner, target, source }
    }

    fn map(&self, x: &[f64]) -> Result<Vec<f64>> {
        let phys = self.target.denormalize(x)?;
        Ok(self.source.normalize_clipped(&phys))
    }
}

impl Surrogate for Remapped {
    fn n_objectives(&self) -> usize {
        self.inner.n_objectives()
    }
    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.inner.predict(&self.map(x)?)
    }
    fn predict_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner.predict_mean(&self.map(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::select_and_weight;
    use proptest::prelude::*;

    /// Returns a fixed prediction everywhere.
    struct Stub(Vec<f64>, Vec<f64>);

    impl Surrogate for Stub {
        fn n_objectives(&self) -> usize {
            self.0.len()
        }
        fn predict(&self, _x: &[f64]) -> Result<Prediction> {
            Ok(Prediction {
                mean: self.0.clone(),
                std: self.1.clone(),
            })
        }
    }

    fn stub(m: f64, s: f64) -> SharedSurrogate {
        Arc::new(Stub(vec![m, -m], vec![s, s]))
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta(0.038, 0).unwrap(), 0.0);
        assert_eq!(beta(0.017, 0).unwrap(), 0.0);
        assert!((beta(0.038, 60).unwrap() - 0.8977158).abs() < 1e-7);
        assert!(beta(0.0, 3).is_err());
        assert!(beta(-1.0, 3).is_err());
    }

    #[test]
    fn degenerate_ensembles() {
        let s = stub(2.0, 0.3);
        let e = EnsembleSurrogate::with_beta(vec![(s.clone(), 1.0)], None, 0.0).unwrap();
        assert_eq!(e.predict(&[0.1]).unwrap(), s.predict(&[0.1]).unwrap());
        // local only
        let l = stub(-1.0, 0.2);
        let e = EnsembleSurrogate::with_beta(vec![], Some(l.clone()), 0.3).unwrap();
        assert_eq!(e.beta(), 1.0);
        assert_eq!(e.predict(&[0.1]).unwrap(), l.predict(&[0.1]).unwrap());
        // no local model forces beta to zero
        let e = EnsembleSurrogate::new(vec![(s, 1.0)], None, 0.038, 40).unwrap();
        assert_eq!(e.beta(), 0.0);
        assert!(EnsembleSurrogate::with_beta(vec![], None, 0.0).is_err());
    }

    #[test]
    fn linear_combination() {
        let (m1, m2, ml) = (1.0, 3.0, 10.0);
        let e = EnsembleSurrogate::with_beta(
            vec![(stub(m1, 1.0), 0.6), (stub(m2, 2.0), 0.4)],
            Some(stub(ml, 0.5)),
            0.5,
        )
        .unwrap();
        let p = e.predict(&[0.0]).unwrap();
        assert!((p.mean[0] - (0.3 * m1 + 0.2 * m2 + 0.5 * ml)).abs() < 1e-12);
        let var = 0.3 * 1.0 + 0.2 * 4.0 + 0.5 * 0.25;
        assert!((p.std[0] - f64::sqrt(var)).abs() < 1e-12);
        assert!((e.predict_mean(&[0.0]).unwrap()[0] - p.mean[0]).abs() < 1e-12);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(EnsembleSurrogate::with_beta(vec![(stub(1.0, 1.0), 0.5)], None, 0.0).is_err());
    }

    fn report(sims: &[f64]) -> SimilarityReport {
        let v: Vec<(String, f64)> = sims.iter().enumerate().map(|(i, s)| (format!("s{i}"), *s)).collect();
        select_and_weight(&v, 5, 0.065).unwrap()
    }

    fn with_weights(ws: &[f64]) -> SimilarityReport {
        let mut r = report(&vec![0.5; ws.len()]);
        for (s, w) in r.selected.iter_mut().zip(ws) {
            s.weight = *w;
        }
        r
    }

    #[test]
    fn choose_c_examples() {
        let b = ThresholdBasis::Weight;
        assert_eq!(choose_c(&with_weights(&[0.95, 0.05]), 0.7, 0.038, 0.017, b).unwrap(), 0.038);
        assert_eq!(choose_c(&with_weights(&[0.4, 0.3, 0.3]), 0.7, 0.038, 0.017, b).unwrap(), 0.017);
        assert_eq!(choose_c(&with_weights(&[0.7, 0.3]), 0.7, 0.038, 0.017, b).unwrap(), 0.038);
        let s = ThresholdBasis::Similarity;
        assert_eq!(choose_c(&report(&[0.95, 0.2]), 0.7, 0.038, 0.017, s).unwrap(), 0.038);
        assert_eq!(choose_c(&report(&[0.6, 0.6]), 0.7, 0.038, 0.017, s).unwrap(), 0.017);
        assert!(choose_c(&report(&[0.6]), 1.0, 0.038, 0.017, s).is_err());
    }

    proptest! {
        #[test]
        fn mean_is_convex_combination(
            means in prop::collection::vec(-5.0f64..5.0, 1..5),
            raw_w in prop::collection::vec(0.01f64..1.0, 5),
            local in -5.0f64..5.0,
            fe in 0usize..100,
        ) {
            let total: f64 = raw_w[..means.len()].iter().sum();
            let mut sources: Vec<(SharedSurrogate, f64)> = means
                .iter()
                .zip(&raw_w)
                .map(|(m, w)| (stub(*m, 0.1), w / total))
                .collect();
            // force exact unit sum
            let rest: f64 = sources[1..].iter().map(|(_, w)| *w).sum();
            sources[0].1 = 1.0 - rest;
            let e = EnsembleSurrogate::new(sources, Some(stub(local, 0.1)), 0.038, fe).unwrap();
            let mu = e.predict(&[0.0]).unwrap().mean[0];
            let lo = means.iter().cloned().fold(local, f64::min);
            let hi = means.iter().cloned().fold(local, f64::max);
            prop_assert!(mu >= lo - 1e-9 && mu <= hi + 1e-9);
        }

        #[test]
        fn beta_monotone(c1 in 0.001f64..0.1, c2 in 0.001f64..0.1, fe in 1usize..200) {
            prop_assert!(beta(c1, fe + 1).unwrap() > beta(c1, fe).unwrap());
            if c1 < c2 {
                prop_assert!(beta(c1, fe).unwrap() < beta(c2, fe).unwrap());
            }
            let b = beta(c1, fe).unwrap();
            prop_assert!((0.0..1.0).contains(&b));
        }
    }
}
