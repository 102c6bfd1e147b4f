//! Independent oracles for the test suites: finite-difference gradients,
//! brute-force fusion enumeration, and an exact maximal-mutual-information
//! solver over two-marginal transportation polytopes. Nothing here is used
//! by the library itself; the implementations deliberately avoid the code
//! paths they check.

use crate::fusion::Coupling;

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Largest relative discrepancy between two gradients, with the denominator
/// floored at one so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Brute-force fusion by enumerating every outcome tuple of a coupling and
/// applying the unanimity rule literally: a tuple supports object `i` iff
/// all its non-uncertain coordinates equal `i` and at least one coordinate
/// is non-uncertain. Returns the fused probabilities and confidence.
pub fn fuse_by_enumeration(coupling: &Coupling) -> (Vec<f64>, f64) {
    let n = coupling.outcomes();
    let arity = coupling.arity();
    let unc = (n - 1) as u16;
    let mut probs = vec![0.0; n - 1];
    let mut all_unc = 0.0;

    let mut tuple = vec![0u16; arity];
    loop {
        let m = coupling.mass_at(&tuple);
        if m != 0.0 {
            let named: Vec<u16> = tuple.iter().copied().filter(|&o| o != unc).collect();
            if named.is_empty() {
                all_unc += m;
            } else if named.iter().all(|&o| o == named[0]) {
                probs[named[0] as usize] += m;
            }
        }
        // Odometer increment over the (I+1)^L tuple space.
        let mut axis = 0;
        loop {
            if axis == arity {
                return (probs, 1.0 - all_unc);
            }
            tuple[axis] += 1;
            if tuple[axis] < n as u16 {
                break;
            }
            tuple[axis] = 0;
            axis += 1;
        }
    }
}

/// Mutual information of a dense two-marginal coupling against fixed
/// marginals, in nats.
fn mi_of(mass: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let (np, nq) = (p.len(), q.len());
    let mut mi = 0.0;
    for i in 0..np {
        for j in 0..nq {
            let m = mass[i * nq + j];
            if m > 1e-15 {
                let denom = p[i] * q[j];
                if denom > 0.0 {
                    mi += m * (m / denom).ln();
                }
            }
        }
    }
    mi
}

/// Exact maximum of mutual information over all couplings of two discrete
/// marginals. Mutual information with fixed marginals is a convex function
/// of the joint, so the maximum sits at a vertex of the transportation
/// polytope; every vertex is the basic solution of some spanning-tree cell
/// subset, which this enumerates exhaustively (feasible for supports <= 4).
pub fn max_mi_exact(p: &[f64], q: &[f64]) -> f64 {
    let (np, nq) = (p.len(), q.len());
    let cells = np * nq;
    let basis_size = np + nq - 1;
    assert!(cells <= 16, "exhaustive solver meant for small supports");

    let mut best = 0.0f64;
    // Iterate subsets of cells with exactly `basis_size` members.
    let mut subset: Vec<usize> = (0..basis_size).collect();
    loop {
        if let Some(mass) = solve_basis(&subset, p, q) {
            best = best.max(mi_of(&mass, p, q));
        }
        // Next combination.
        let mut i = basis_size;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] != i + cells - basis_size {
                subset[i] += 1;
                for j in (i + 1)..basis_size {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Solves the transportation system restricted to the given cells by leaf
/// peeling; returns the full mass matrix when the cells form a spanning
/// tree with a non-negative solution.
fn solve_basis(cells: &[usize], p: &[f64], q: &[f64]) -> Option<Vec<f64>> {
    let (np, nq) = (p.len(), q.len());
    let mut mass = vec![0.0; np * nq];
    let mut active: Vec<bool> = vec![false; np * nq];
    for &c in cells {
        active[c] = true;
    }
    let mut row_need: Vec<f64> = p.to_vec();
    let mut col_need: Vec<f64> = q.to_vec();
    let mut row_deg = vec![0usize; np];
    let mut col_deg = vec![0usize; nq];
    for &c in cells {
        row_deg[c / nq] += 1;
        col_deg[c % nq] += 1;
    }
    if row_deg.iter().any(|&d| d == 0) || col_deg.iter().any(|&d| d == 0) {
        return None;
    }

    let mut remaining = cells.len();
    while remaining > 0 {
        let mut progressed = false;
        // A row with a single active cell pins that cell's mass.
        for i in 0..np {
            if row_deg[i] == 1 {
                let j = (0..nq).find(|&j| active[i * nq + j])?;
                let m = row_need[i];
                if m < -1e-12 {
                    return None;
                }
                mass[i * nq + j] = m.max(0.0);
                row_need[i] = 0.0;
                col_need[j] -= m;
                active[i * nq + j] = false;
                row_deg[i] = 0;
                col_deg[j] -= 1;
                remaining -= 1;
                progressed = true;
            }
        }
        for j in 0..nq {
            if col_deg[j] == 1 {
                let i = (0..np).find(|&i| active[i * nq + j])?;
                let m = col_need[j];
                if m < -1e-12 {
                    return None;
                }
                mass[i * nq + j] = m.max(0.0);
                col_need[j] = 0.0;
                row_need[i] -= m;
                active[i * nq + j] = false;
                col_deg[j] = 0;
                row_deg[i] -= 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            // A cycle: not a spanning tree.
            return None;
        }
    }
    if row_need.iter().chain(col_need.iter()).any(|&v| v.abs() > 1e-9) {
        return None;
    }
    Some(mass)
}

/// Grid-search maximizer for two-outcome marginals: the polytope is the
/// segment `m00 in [max(0, p0+q0-1), min(p0, q0)]`, scanned inclusively.
pub fn max_mi_grid_two(p: &[f64], q: &[f64], steps: usize) -> f64 {
    assert_eq!(p.len(), 2);
    assert_eq!(q.len(), 2);
    let lo = (p[0] + q[0] - 1.0).max(0.0);
    let hi = p[0].min(q[0]);
    let mut best = f64::NEG_INFINITY;
    for k in 0..=steps {
        let m00 = lo + (hi - lo) * k as f64 / steps as f64;
        let mass = [m00, p[0] - m00, q[0] - m00, 1.0 - p[0] - q[0] + m00];
        if mass.iter().any(|&m| m < -1e-12) {
            continue;
        }
        best = best.max(mi_of(&mass, p, q));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_solver_agrees_with_grid_on_two_outcomes() {
        let cases = [
            (vec![0.5, 0.5], vec![0.5, 0.5]),
            (vec![0.7, 0.3], vec![0.6, 0.4]),
            (vec![0.6, 0.4], vec![0.4, 0.6]),
            (vec![0.9, 0.1], vec![0.2, 0.8]),
        ];
        for (p, q) in cases {
            let exact = max_mi_exact(&p, &q);
            let grid = max_mi_grid_two(&p, &q, 2000);
            assert!(
                (exact - grid).abs() < 1e-6,
                "exact {exact} vs grid {grid} for {p:?} {q:?}"
            );
        }
    }

    #[test]
    fn anti_aligned_marginals_prefer_the_antitone_vertex() {
        // For p = (0.6, 0.4), q = (0.4, 0.6) the maximal-MI coupling is the
        // permutation-like vertex with zero diagonal; its MI equals the
        // marginal entropy.
        let p = [0.6, 0.4];
        let q = [0.4, 0.6];
        let exact = max_mi_exact(&p, &q);
        let h: f64 = p.iter().map(|&v| -v * v.ln()).sum();
        assert!((exact - h).abs() < 1e-9, "exact {exact} vs entropy {h}");
    }
}
