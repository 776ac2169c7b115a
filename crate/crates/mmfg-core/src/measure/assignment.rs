//! Exact optimal assignment and the path-space Wasserstein distance.
//!
//! For equal-size empirical measures with uniform weights the Wasserstein
//! infimum over couplings is attained at an assignment, so a Hungarian-style
//! solver gives the exact value. Unequal weights are split into equal-mass
//! atoms on a common denominator first, which keeps the solver exact.

use super::{rho_path_prefix, PathMeasure};
use crate::error::{Error, Result};

/// Largest particle count accepted before splitting.
pub const ASSIGNMENT_CAP: usize = 512;
/// Largest atom count after common-denominator splitting.
pub const SPLIT_CAP: usize = 2048;

/// Exact minimum-cost assignment on a dense `n x n` cost matrix
/// (row-major), by shortest augmenting paths with potentials.
/// Returns `(assignment, total)` with `assignment[row] = col`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    let inf = f64::INFINITY;
    // 1-based potentials; p[j] = row matched to column j, column 0 virtual.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    let mut chosen = Vec::with_capacity(n);
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
        chosen.push(cost[(p[j] - 1) * n + (j - 1)]);
    }
    // Summing the selected entries in sorted order makes the total
    // independent of the traversal, so the distance is exactly symmetric.
    chosen.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total = chosen.iter().sum();
    (assignment, total)
}

/// Find the smallest common denominator `D <= cap` such that every weight is
/// (numerically) an integer multiple of `1/D`, and return the atom counts.
fn split_counts(weights: &[f64], cap: usize) -> Result<Vec<usize>> {
    let count = weights.len();
    'outer: for d in count..=cap {
        let mut total = 0usize;
        let mut counts = Vec::with_capacity(count);
        for &w in weights {
            let scaled = w * d as f64;
            let rounded = scaled.round();
            if (scaled - rounded).abs() > 1e-9 || rounded < 0.0 {
                continue 'outer;
            }
            counts.push(rounded as usize);
            total += rounded as usize;
        }
        if total == d {
            return Ok(counts);
        }
    }
    Err(Error::ResourceLimit(format!(
        "weights admit no common denominator up to {cap} atoms; subsample or re-weight"
    )))
}

/// Indices of the equal-mass atoms each measure splits into.
fn atom_indices(m: &PathMeasure) -> Result<Vec<usize>> {
    if m.is_uniform_weights() {
        return Ok((0..m.count()).collect());
    }
    let counts = split_counts(m.weights(), SPLIT_CAP)?;
    let mut idx = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        idx.extend(std::iter::repeat(i).take(c));
    }
    Ok(idx)
}

impl PathMeasure {
    fn is_uniform_weights(&self) -> bool {
        let w0 = 1.0 / self.count() as f64;
        self.weights().iter().all(|w| (w - w0).abs() < 1e-15)
    }
}

fn wasserstein_path_impl(mu: &PathMeasure, nu: &PathMeasure, upto: usize) -> Result<f64> {
    if !mu.same_shape(nu) {
        return Err(Error::invalid("path measures must share the grid"));
    }
    if mu.count() > ASSIGNMENT_CAP || nu.count() > ASSIGNMENT_CAP {
        return Err(Error::ResourceLimit(format!(
            "particle count exceeds the assignment cap {ASSIGNMENT_CAP}; subsample first"
        )));
    }
    let a_idx = atom_indices(mu)?;
    let b_idx = atom_indices(nu)?;
    // Bring both to a common atom count.
    let lcm = {
        let (a, b) = (a_idx.len(), b_idx.len());
        let gcd = {
            let (mut x, mut y) = (a, b);
            while y != 0 {
                let t = x % y;
                x = y;
                y = t;
            }
            x
        };
        a / gcd * b
    };
    if lcm > SPLIT_CAP {
        return Err(Error::ResourceLimit(format!(
            "common atom grid needs {lcm} atoms (> {SPLIT_CAP}); subsample first"
        )));
    }
    let expand = |idx: &[usize]| -> Vec<usize> {
        let rep = lcm / idx.len();
        idx.iter()
            .flat_map(|&i| std::iter::repeat(i).take(rep))
            .collect()
    };
    let rows = expand(&a_idx);
    let cols = expand(&b_idx);
    let n = lcm;
    let dim = mu.dim();
    let mut cost = vec![0.0f64; n * n];
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            cost[r * n + c] = rho_path_prefix(mu.path(i), nu.path(j), dim, upto);
        }
    }
    let (_, total) = min_cost_assignment(&cost, n);
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Exact order-2 Wasserstein distance between path measures under the
/// truncated sup-square path cost.
pub fn wasserstein_path(mu: &PathMeasure, nu: &PathMeasure) -> Result<f64> {
    wasserstein_path_impl(mu, nu, mu.nodes() - 1)
}

/// Same distance with the path cost restricted to nodes `0..=upto`; it is
/// non-decreasing in `upto`.
pub fn wasserstein_path_prefix(mu: &PathMeasure, nu: &PathMeasure, upto: usize) -> Result<f64> {
    if upto >= mu.nodes() {
        return Err(Error::invalid("prefix node out of range"));
    }
    wasserstein_path_impl(mu, nu, upto)
}

/// Reference oracle: enumerate every permutation coupling. Exponential;
/// intended for measures with at most ~8 uniform atoms.
pub fn brute_force_wasserstein_path(mu: &PathMeasure, nu: &PathMeasure) -> Result<f64> {
    if !mu.same_shape(nu) || mu.count() != nu.count() {
        return Err(Error::invalid("brute force needs equal-size clouds"));
    }
    let n = mu.count();
    if n > 8 {
        return Err(Error::ResourceLimit("brute force capped at 8 atoms".into()));
    }
    let dim = mu.dim();
    let upto = mu.nodes() - 1;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm.
    fn heaps(perm: &mut Vec<usize>, k: usize, best: &mut f64, eval: &impl Fn(&[usize]) -> f64) {
        if k == 1 {
            let v = eval(perm);
            if v < *best {
                *best = v;
            }
            return;
        }
        for i in 0..k {
            heaps(perm, k - 1, best, eval);
            if k % 2 == 0 {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
        }
    }
    let eval = |p: &[usize]| -> f64 {
        p.iter()
            .enumerate()
            .map(|(i, &j)| rho_path_prefix(mu.path(i), nu.path(j), dim, upto))
            .sum::<f64>()
    };
    heaps(&mut perm, n, &mut best, &eval);
    Ok((best / n as f64).sqrt())
}
