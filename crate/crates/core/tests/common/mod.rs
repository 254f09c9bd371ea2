//! Brute-force oracles shared by the integration tests. Each one follows
//! the textbook definition as literally as possible and ignores speed.
#![allow(dead_code)]

use rand::Rng;
use seeto::sampling::SeedRng;

pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Peel non-dominated layers by pairwise comparison.
pub fn brute_fronts(objs: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..objs.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| dominates(&objs[j], &objs[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

/// NSGA-II crowding distance of each member of `front`, in `front` order.
pub fn brute_crowding(objs: &[Vec<f64>], front: &[usize]) -> Vec<f64> {
    let k = front.len();
    if k <= 2 {
        return vec![f64::INFINITY; k];
    }
    let mut d = vec![0.0; k];
    for j in 0..objs[front[0]].len() {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| objs[front[a]][j].partial_cmp(&objs[front[b]][j]).unwrap().then(a.cmp(&b)));
        let lo = objs[front[order[0]]][j];
        let hi = objs[front[order[k - 1]]][j];
        d[order[0]] = f64::INFINITY;
        d[order[k - 1]] = f64::INFINITY;
        for w in 1..k - 1 {
            if hi > lo {
                d[order[w]] += (objs[front[order[w + 1]]][j] - objs[front[order[w - 1]]][j]) / (hi - lo);
            }
        }
    }
    d
}

/// `g` members of `front` by descending crowding, ties to smaller first
/// objective, then earlier position.
pub fn brute_truncate(objs: &[Vec<f64>], front: &[usize], g: usize) -> Vec<usize> {
    let cd = brute_crowding(objs, front);
    let mut pos: Vec<usize> = (0..front.len()).collect();
    pos.sort_by(|&a, &b| {
        cd[b]
            .partial_cmp(&cd[a])
            .unwrap()
            .then(objs[front[a]][0].partial_cmp(&objs[front[b]][0]).unwrap())
            .then(a.cmp(&b))
    });
    pos.into_iter().take(g).map(|p| front[p]).collect()
}

/// The three-case elite rule, written out case by case.
pub fn brute_elites(objs: &[Vec<f64>], n_i: usize) -> Vec<usize> {
    if n_i == 0 {
        return Vec::new();
    }
    if n_i >= objs.len() {
        return (0..objs.len()).collect();
    }
    let fronts = brute_fronts(objs);
    let f1 = &fronts[0];
    if f1.len() > n_i {
        return brute_truncate(objs, f1, n_i);
    }
    if f1.len() == n_i {
        return f1.clone();
    }
    let mut out = Vec::new();
    let mut m = 0;
    while out.len() + fronts[m].len() <= n_i {
        out.extend(&fronts[m]);
        m += 1;
        if out.len() == n_i {
            return out;
        }
    }
    let n_other = n_i - out.len();
    out.extend(brute_truncate(objs, &fronts[m], n_other));
    out
}

/// NSGA-II survival by the book (no duplicate handling).
pub fn brute_survivors(objs: &[Vec<f64>], n_p: usize) -> Vec<usize> {
    let mut keep = Vec::new();
    for front in brute_fronts(objs) {
        if keep.len() + front.len() <= n_p {
            keep.extend(front);
        } else {
            let g = n_p - keep.len();
            keep.extend(brute_truncate(objs, &front, g));
        }
        if keep.len() == n_p {
            break;
        }
    }
    keep
}

/// Monte Carlo hypervolume of a 2-d front: estimate and standard error.
/// Dominance of a sample is decided by a prefix minimum over the front
/// sorted by the first objective.
pub fn mc_hv_2d(front: &[Vec<f64>], r: [f64; 2], samples: usize, rng: &mut SeedRng) -> (f64, f64) {
    let mut pts: Vec<(f64, f64)> = front.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut prefix_min = Vec::with_capacity(pts.len());
    let mut m = f64::INFINITY;
    for p in &pts {
        m = m.min(p.1);
        prefix_min.push(m);
    }
    let lo0 = pts.iter().map(|p| p.0).fold(r[0], f64::min);
    let lo1 = pts.iter().map(|p| p.1).fold(r[1], f64::min);
    let volume = (r[0] - lo0) * (r[1] - lo1);
    if volume <= 0.0 {
        return (0.0, 0.0);
    }
    let mut hits = 0usize;
    for _ in 0..samples {
        let s0 = lo0 + rng.random::<f64>() * (r[0] - lo0);
        let s1 = lo1 + rng.random::<f64>() * (r[1] - lo1);
        // points with first objective <= s0
        let k = pts.partition_point(|p| p.0 <= s0);
        if k > 0 && prefix_min[k - 1] <= s1 {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    (volume * p, volume * (p * (1.0 - p) / samples as f64).sqrt())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

pub fn random_points(n: usize, m: usize, rng: &mut SeedRng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.random()).collect()).collect()
}

/// Points on a few noisy concave-ish layers so fronts have several members.
pub fn layered_points(n: usize, rng: &mut SeedRng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let t: f64 = rng.random();
            let layer = rng.random_range(0..4) as f64;
            vec![t + 0.3 * layer, 1.0 - t + 0.3 * layer]
        })
        .collect()
}
