//! NSGA-II style evolution over a surrogate: binary tournament, simulated
//! binary crossover, polynomial mutation and crowded environmental selection.
//! All decisions live in the unit cube.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::Result;
use crate::exec;
use crate::gp::Surrogate;
use crate::transfer::{crowding_of, sort_fronts};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fidelity {
    Surrogate,
    True,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub fidelity: Fidelity,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Population {
    pub members: Vec<Individual>,
}

impl Population {
    pub fn new(members: Vec<Individual>) -> Self {
        Population { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn objectives(&self) -> Vec<&[f64]> {
        self.members.iter().map(|m| &m.f[..]).collect()
    }

    /// Concatenate populations.
    pub fn union(parts: impl IntoIterator<Item = Population>) -> Population {
        Population {
            members: parts.into_iter().flat_map(|p| p.members).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variation {
    pub crossover_prob: f64,
    pub crossover_eta: f64,
    /// Per-gene mutation probability; `None` means `1 / d`.
    pub mutation_prob: Option<f64>,
    pub mutation_eta: f64,
}

impl Default for Variation {
    fn default() -> Self {
        Variation {
            crossover_prob: 0.9,
            crossover_eta: 20.0,
            mutation_prob: None,
            mutation_eta: 20.0,
        }
    }
}

fn sbx_spread(u: f64, alpha: f64, eta: f64) -> f64 {
    if u <= 1.0 / alpha {
        (u * alpha).powf(1.0 / (eta + 1.0))
    } else {
        (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
    }
}

/// Bounded simulated binary crossover on `[0, 1]^d`.
pub fn sbx_crossover<R: Rng + ?Sized>(p1: &[f64], p2: &[f64], eta: f64, prob: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    if prob <= 0.0 || rng.random::<f64>() >= prob {
        return (c1, c2);
    }
    for i in 0..p1.len() {
        if rng.random::<f64>() > 0.5 || (p1[i] - p2[i]).abs() <= 1e-14 {
            continue;
        }
        let (y1, y2) = if p1[i] < p2[i] { (p1[i], p2[i]) } else { (p2[i], p1[i]) };
        let span = y2 - y1;
        let u: f64 = rng.random();

        let b = 1.0 + 2.0 * y1 / span;
        let alpha = 2.0 - b.powf(-(eta + 1.0));
        let a = (0.5 * ((y1 + y2) - sbx_spread(u, alpha, eta) * span)).clamp(0.0, 1.0);

        let b = 1.0 + 2.0 * (1.0 - y2) / span;
        let alpha = 2.0 - b.powf(-(eta + 1.0));
        let c = (0.5 * ((y1 + y2) + sbx_spread(u, alpha, eta) * span)).clamp(0.0, 1.0);

        if rng.random::<f64>() < 0.5 {
            c1[i] = c;
            c2[i] = a;
        } else {
            c1[i] = a;
            c2[i] = c;
        }
    }
    (c1, c2)
}

/// Bounded polynomial mutation on `[0, 1]^d`. Returns the mutant and the
/// number of genes that were selected for mutation.
pub fn polynomial_mutation<R: Rng + ?Sized>(x: &[f64], eta: f64, prob: f64, rng: &mut R) -> (Vec<f64>, usize) {
    let mut y = x.to_vec();
    let mut touched = 0;
    let pow = 1.0 / (eta + 1.0);
    for v in y.iter_mut() {
        if rng.random::<f64>() >= prob {
            continue;
        }
        touched += 1;
        let u: f64 = rng.random();
        let dq = if u < 0.5 {
            let xy = 1.0 - *v;
            let val = 2.0 * u + (1.0 - 2.0 * u) * xy.powf(eta + 1.0);
            val.powf(pow) - 1.0
        } else {
            let xy = *v;
            let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy.powf(eta + 1.0);
            1.0 - val.powf(pow)
        };
        *v = (*v + dq).clamp(0.0, 1.0);
    }
    (y, touched)
}

/// Rank (front index) and crowding distance of every member.
pub fn rank_and_crowding(objs: &[&[f64]]) -> (Vec<usize>, Vec<f64>) {
    let mut rank = vec![0; objs.len()];
    let mut crowd = vec![0.0; objs.len()];
    for (r, front) in sort_fronts(objs).iter().enumerate() {
        for (i, cd) in front.iter().zip(crowding_of(objs, front)) {
            rank[*i] = r;
            crowd[*i] = cd;
        }
    }
    (rank, crowd)
}

fn tournament<R: Rng + ?Sized>(rank: &[usize], crowd: &[f64], rng: &mut R) -> usize {
    let n = rank.len();
    let a = rng.random_range(0..n);
    let b = rng.random_range(0..n);
    match rank[a].cmp(&rank[b]) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            if crowd[a] > crowd[b] {
                a
            } else if crowd[b] > crowd[a] {
                b
            } else if rng.random::<bool>() {
                a
            } else {
                b
            }
        }
    }
}

/// Produce `pop.len()` offspring scored by the surrogate's mean.
pub fn evolve_generation<R: Rng + ?Sized>(
    pop: &Population,
    surrogate: &dyn Surrogate,
    variation: &Variation,
    rng: &mut R,
) -> Result<Population> {
    let n = pop.len();
    if n == 0 {
        return Ok(Population::default());
    }
    let d = pop.members[0].x.len();
    let p_m = variation.mutation_prob.unwrap_or(1.0 / d as f64);
    let objs = pop.objectives();
    let (rank, crowd) = rank_and_crowding(&objs);

    let mut children: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    while children.len() < n {
        let a = tournament(&rank, &crowd, rng);
        let b = tournament(&rank, &crowd, rng);
        let (c1, c2) = sbx_crossover(
            &pop.members[a].x,
            &pop.members[b].x,
            variation.crossover_eta,
            variation.crossover_prob,
            rng,
        );
        children.push(polynomial_mutation(&c1, variation.mutation_eta, p_m, rng).0);
        if children.len() < n {
            children.push(polynomial_mutation(&c2, variation.mutation_eta, p_m, rng).0);
        }
    }

    let scores = exec::map(&children, |x| surrogate.predict_mean(x));
    let members = children
        .into_iter()
        .zip(scores)
        .map(|(x, f)| {
            f.map(|f| Individual {
                x,
                f,
                fidelity: Fidelity::Surrogate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Population { members })
}

/// Order in which members of a partially admitted front survive: crowding
/// distance (computed over distinct objective vectors) descending, then true
/// fidelity, then smaller first objective, then position. Repeated objective
/// vectors rank after every distinct one, with a true-fidelity copy chosen as
/// the representative when one exists.
fn survival_order(union: &Population, objs: &[&[f64]], front: &[usize]) -> Vec<usize> {
    let mut representative: Vec<usize> = Vec::new();
    let mut is_rep = vec![false; front.len()];
    for (p, &i) in front.iter().enumerate() {
        match representative.iter().position(|&q| objs[front[q]] == objs[i]) {
            None => {
                representative.push(p);
                is_rep[p] = true;
            }
            Some(slot) => {
                let q = representative[slot];
                if union.members[i].fidelity == Fidelity::True && union.members[front[q]].fidelity != Fidelity::True {
                    is_rep[q] = false;
                    is_rep[p] = true;
                    representative[slot] = p;
                }
            }
        }
    }
    let reps: Vec<usize> = representative.iter().map(|&p| front[p]).collect();
    let rep_cd = crowding_of(objs, &reps);
    let mut cd = vec![-1.0; front.len()];
    for (&p, c) in representative.iter().zip(rep_cd) {
        cd[p] = c;
    }
    let mut pos: Vec<usize> = (0..front.len()).collect();
    pos.sort_by(|&a, &b| {
        cd[b]
            .partial_cmp(&cd[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                let ta = union.members[front[a]].fidelity == Fidelity::True;
                let tb = union.members[front[b]].fidelity == Fidelity::True;
                tb.cmp(&ta)
            })
            .then(objs[front[a]][0].total_cmp(&objs[front[b]][0]))
            .then(a.cmp(&b))
    });
    pos.into_iter().map(|p| front[p]).collect()
}

/// Indices of the `n_p` survivors of `union`.
pub fn select_survivors(union: &Population, n_p: usize) -> Vec<usize> {
    let objs = union.objectives();
    let mut keep = Vec::with_capacity(n_p);
    for front in sort_fronts(&objs) {
        let room = n_p - keep.len();
        if room == 0 {
            break;
        }
        if front.len() <= room {
            keep.extend(front);
        } else {
            keep.extend(survival_order(union, &objs, &front).into_iter().take(room));
            break;
        }
    }
    keep
}

/// NSGA-II survival: whole fronts while they fit, then crowding truncation.
pub fn environmental_selection(union: Population, n_p: usize) -> Population {
    let keep = select_survivors(&union, n_p);
    let mut slots: Vec<Option<Individual>> = union.members.into_iter().map(Some).collect();
    Population {
        members: keep.into_iter().map(|i| slots[i].take().expect("unique index")).collect(),
    }
}
