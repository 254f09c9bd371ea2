//! Solution-level transfer: non-dominated sorting, crowding distance, elite
//! extraction from source datasets, and warm-start population assembly.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::archive::SourceArchive;
use crate::embedder::SimilarityReport;
use crate::error::{Error, Result};
use crate::sampling::{latin_hypercube, seeded_rng};
use crate::types::{dominates_unchecked, Bounds, DecisionVector, EvaluatedSolution};

/// Fast non-dominated sort over objective vectors. Fronts are returned in
/// rank order, members of each front in ascending index order.
pub fn sort_fronts(objs: &[&[f64]]) -> Vec<Vec<usize>> {
    let n = objs.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates_unchecked(objs[i], objs[j]) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if dominates_unchecked(objs[j], objs[i]) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by_count[j] -= 1;
                if dominated_by_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front` (indices into `objs`), in the
/// same order as `front`. Boundary members and fronts of size <= 2 get
/// `+inf`.
pub fn crowding_of(objs: &[&[f64]], front: &[usize]) -> Vec<f64> {
    let k = front.len();
    if k <= 2 {
        return vec![f64::INFINITY; k];
    }
    let m = objs[front[0]].len();
    let mut dist = vec![0.0; k];
    let mut order: Vec<usize> = (0..k).collect();
    for j in 0..m {
        order.sort_by(|&a, &b| objs[front[a]][j].total_cmp(&objs[front[b]][j]).then(a.cmp(&b)));
        let lo = objs[front[order[0]]][j];
        let hi = objs[front[order[k - 1]]][j];
        dist[order[0]] = f64::INFINITY;
        dist[order[k - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..(k - 1) {
            let gap = objs[front[order[w + 1]]][j] - objs[front[order[w - 1]]][j];
            dist[order[w]] += gap / range;
        }
    }
    dist
}

/// Keep `g` members of `front` with the largest crowding distance; ties go
/// to the smaller first objective, then to the earlier position in `front`.
pub fn truncate_by_crowding(objs: &[&[f64]], front: &[usize], g: usize) -> Vec<usize> {
    let cd = crowding_of(objs, front);
    let mut pos: Vec<usize> = (0..front.len()).collect();
    pos.sort_by(|&a, &b| {
        cd[b]
            .partial_cmp(&cd[a])
            .unwrap_or(Ordering::Equal)
            .then(objs[front[a]][0].total_cmp(&objs[front[b]][0]))
            .then(a.cmp(&b))
    });
    pos.into_iter().take(g).map(|p| front[p]).collect()
}

fn objective_refs(pop: &[EvaluatedSolution]) -> Vec<&[f64]> {
    pop.iter().map(|s| &s.objectives[..]).collect()
}

/// Non-dominated levels of evaluated solutions, as indices into `pop`.
pub fn nondominated_sort(pop: &[EvaluatedSolution]) -> Vec<Vec<usize>> {
    sort_fronts(&objective_refs(pop))
}

/// Crowding distance of every member of `front`.
pub fn crowding_distance(front: &[EvaluatedSolution]) -> Vec<f64> {
    let objs = objective_refs(front);
    let idx: Vec<usize> = (0..front.len()).collect();
    crowding_of(&objs, &idx)
}

/// Indices of the `n_i` elites of `dataset`: whole non-dominated levels while
/// they fit, then the crowding-truncated first level that does not.
pub fn elite_indices(dataset: &[EvaluatedSolution], n_i: usize) -> Vec<usize> {
    if n_i == 0 || dataset.is_empty() {
        return Vec::new();
    }
    if n_i >= dataset.len() {
        return (0..dataset.len()).collect();
    }
    let objs = objective_refs(dataset);
    let fronts = sort_fronts(&objs);
    let mut out = Vec::with_capacity(n_i);
    for front in &fronts {
        let remaining = n_i - out.len();
        if remaining == 0 {
            break;
        }
        if front.len() <= remaining {
            out.extend_from_slice(front);
        } else {
            out.extend(truncate_by_crowding(&objs, front, remaining));
            break;
        }
    }
    out
}

pub fn extract_elites(dataset: &[EvaluatedSolution], n_i: usize) -> Vec<DecisionVector> {
    elite_indices(dataset, n_i)
        .into_iter()
        .map(|i| dataset[i].decision.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan {
    /// Elite count requested from each selected source.
    pub per_source_counts: BTreeMap<String, usize>,
    pub total_elite: usize,
    pub random_fill: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialPopulation {
    /// Normalized decisions; injected elites first, in selection order.
    pub members: Vec<Vec<f64>>,
    pub injected: usize,
    pub plan: InjectionPlan,
}

/// Warm-start population of exactly `n_p` normalized decisions: elites from
/// the selected sources in proportion to their weights, filled up with a
/// Latin hypercube design.
pub fn build_initial_population(
    report: Option<&SimilarityReport>,
    archive: &SourceArchive,
    target_bounds: &Bounds,
    n_p: usize,
    rho: f64,
    seed: u64,
) -> Result<InitialPopulation> {
    if n_p == 0 {
        return Err(Error::usage("population size must be at least 1"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::usage(format!("rho must lie in [0, 1], got {rho}")));
    }
    let n_opt = (rho * n_p as f64).floor() as usize;
    let mut members: Vec<Vec<f64>> = Vec::with_capacity(n_p);
    let mut counts = BTreeMap::new();

    if let Some(report) = report.filter(|_| !archive.records.is_empty()) {
        for sel in &report.selected {
            let record = archive
                .records
                .get(sel.index)
                .ok_or_else(|| Error::usage(format!("selected source {} not in archive", sel.id)))?;
            let n_i = (sel.weight * n_opt as f64).floor() as usize;
            counts.insert(sel.id.clone(), n_i);
            for d in extract_elites(&record.data, n_i) {
                members.push(target_bounds.normalize_clipped(&d));
            }
        }
    }
    let injected = members.len();
    let fill = n_p - injected;
    let mut rng = seeded_rng(seed);
    members.extend(latin_hypercube(fill, target_bounds.dim(), &mut rng));

    Ok(InitialPopulation {
        members,
        injected,
        plan: InjectionPlan {
            per_source_counts: counts,
            total_elite: n_opt,
            random_fill: fill,
        },
    })
}
