//! Event-driven decision fusion with per-sensor uncertainty.
//!
//! Each sensor report is augmented with an explicit uncertainty outcome
//! carrying mass `1 - DoC`. A joint distribution (coupling) over the
//! per-sensor outcome tuples is formed as a convex blend, weighted by the
//! correlation pseudo-measure `rho`, of the independence coupling and a
//! maximal-dependence coupling with the same marginals. The fused
//! probability of an object is the mass of all tuples whose non-uncertain
//! coordinates unanimously name it; mass on conflicting tuples backs no
//! object and is not renormalized (a config flag can turn renormalization
//! on). The fused degree of confidence is one minus the all-uncertain mass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One sensor's object-probability vector plus its degree of confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorReport {
    pub probs: Vec<f64>,
    /// Degree of confidence in `[0, 1]`.
    pub doc: f64,
    /// Originating modality; `None` for fused or synthetic reports.
    pub modality: Option<usize>,
}

impl SensorReport {
    pub fn new(probs: Vec<f64>, doc: f64, modality: Option<usize>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Contract("report needs at least one object".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Contract("report probabilities must be non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("report probabilities sum to {sum}, not 1")));
        }
        if !(0.0..=1.0).contains(&doc) {
            return Err(Error::Contract(format!("degree of confidence {doc} outside [0, 1]")));
        }
        Ok(SensorReport { probs, doc, modality })
    }

    pub fn objects(&self) -> usize {
        self.probs.len()
    }
}

/// Report over `I + 1` outcomes: the `I` objects scaled by the DoC, plus a
/// final uncertainty outcome with the remaining mass.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedReport {
    probs: Vec<f64>,
}

impl AugmentedReport {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Number of outcomes including the uncertainty slot.
    pub fn outcomes(&self) -> usize {
        self.probs.len()
    }

    pub fn uncertainty_mass(&self) -> f64 {
        *self.probs.last().unwrap()
    }
}

/// Scales object masses by the DoC and gives the complement to the
/// uncertainty outcome.
pub fn augment(report: &SensorReport) -> Result<AugmentedReport> {
    if !(0.0..=1.0).contains(&report.doc) {
        return Err(Error::Contract(format!(
            "degree of confidence {} outside [0, 1]",
            report.doc
        )));
    }
    let mut probs: Vec<f64> = report.probs.iter().map(|p| report.doc * p).collect();
    probs.push(1.0 - report.doc);
    Ok(AugmentedReport { probs })
}

/// Joint mass over per-modality outcome tuples. Two-modality couplings are
/// dense `(I+1) x (I+1)` matrices; higher arities use a sparse tuple map.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    Dense2 {
        /// Outcomes per axis, `I + 1`.
        n: usize,
        /// Row-major mass, row = modality 0's outcome.
        mass: Vec<f64>,
    },
    Sparse {
        arity: usize,
        n: usize,
        mass: BTreeMap<Vec<u16>, f64>,
    },
}

impl Coupling {
    pub fn arity(&self) -> usize {
        match self {
            Coupling::Dense2 { .. } => 2,
            Coupling::Sparse { arity, .. } => *arity,
        }
    }

    /// Outcomes per axis including the uncertainty slot.
    pub fn outcomes(&self) -> usize {
        match self {
            Coupling::Dense2 { n, .. } => *n,
            Coupling::Sparse { n, .. } => *n,
        }
    }

    pub fn mass_at(&self, tuple: &[u16]) -> f64 {
        match self {
            Coupling::Dense2 { n, mass } => {
                mass[tuple[0] as usize * *n + tuple[1] as usize]
            }
            Coupling::Sparse { mass, .. } => *mass.get(tuple).unwrap_or(&0.0),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            Coupling::Dense2 { mass, .. } => mass.iter().sum(),
            Coupling::Sparse { mass, .. } => mass.values().sum(),
        }
    }

    /// Marginal distribution of one axis.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let n = self.outcomes();
        let mut out = vec![0.0; n];
        match self {
            Coupling::Dense2 { n, mass } => {
                for r in 0..*n {
                    for c in 0..*n {
                        let idx = if axis == 0 { r } else { c };
                        out[idx] += mass[r * n + c];
                    }
                }
            }
            Coupling::Sparse { mass, .. } => {
                for (tuple, &m) in mass {
                    out[tuple[axis] as usize] += m;
                }
            }
        }
        out
    }

    /// Visits every tuple with non-zero stored mass.
    pub fn for_each(&self, mut f: impl FnMut(&[u16], f64)) {
        match self {
            Coupling::Dense2 { n, mass } => {
                for r in 0..*n {
                    for c in 0..*n {
                        let m = mass[r * n + c];
                        if m != 0.0 {
                            f(&[r as u16, c as u16], m);
                        }
                    }
                }
            }
            Coupling::Sparse { mass, .. } => {
                for (tuple, &m) in mass {
                    if m != 0.0 {
                        f(tuple, m);
                    }
                }
            }
        }
    }

    /// Mutual information of the coupling against its own marginals, in nats.
    pub fn mutual_information(&self) -> f64 {
        let arity = self.arity();
        let marginals: Vec<Vec<f64>> = (0..arity).map(|a| self.marginal(a)).collect();
        let mut mi = 0.0;
        self.for_each(|tuple, m| {
            if m > 0.0 {
                let mut prod = 1.0;
                for (a, &o) in tuple.iter().enumerate() {
                    prod *= marginals[a][o as usize];
                }
                if prod > 0.0 {
                    mi += m * (m / prod).ln();
                }
            }
        });
        mi
    }
}

fn check_reports(reports: &[AugmentedReport]) -> Result<usize> {
    if reports.len() < 2 {
        return Err(Error::Contract(format!(
            "coupling needs >= 2 reports, got {}",
            reports.len()
        )));
    }
    let n = reports[0].outcomes();
    for r in reports {
        if r.outcomes() != n {
            return Err(Error::Contract(
                "all reports must cover the same object set".into(),
            ));
        }
    }
    Ok(n)
}

/// Independence coupling: the product of the marginals. Mutual information
/// zero by construction.
pub fn min_mi_coupling(reports: &[AugmentedReport]) -> Result<Coupling> {
    let n = check_reports(reports)?;
    if reports.len() == 2 {
        let mut mass = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                mass[r * n + c] = reports[0].probs[r] * reports[1].probs[c];
            }
        }
        return Ok(Coupling::Dense2 { n, mass });
    }
    let mut mass = BTreeMap::new();
    let arity = reports.len();
    let mut tuple = vec![0u16; arity];
    product_fill(reports, 0, 1.0, &mut tuple, &mut mass);
    Ok(Coupling::Sparse { arity, n, mass })
}

fn product_fill(
    reports: &[AugmentedReport],
    axis: usize,
    acc: f64,
    tuple: &mut Vec<u16>,
    out: &mut BTreeMap<Vec<u16>, f64>,
) {
    if acc == 0.0 {
        return;
    }
    if axis == reports.len() {
        out.insert(tuple.clone(), acc);
        return;
    }
    for (o, &p) in reports[axis].probs.iter().enumerate() {
        tuple[axis] = o as u16;
        product_fill(reports, axis + 1, acc * p, tuple, out);
    }
}

/// Maximal-dependence coupling with the given marginals.
///
/// The backbone is a deterministic greedy matching: repeatedly pair the
/// largest remaining outcome mass of every modality and allocate their
/// minimum to that tuple, ties breaking toward the lowest outcome index.
/// For two modalities the construction is strengthened: every label
/// alignment (all permutations, for small outcome counts) seeds a matched
/// Frechet allocation followed by the greedy residual matching, each
/// candidate is sharpened by first-improving transportation pivots (2x2
/// cycle shifts between adjacent polytope vertices), and the candidate with
/// the largest mutual information wins. The result always carries the exact
/// input marginals.
pub fn max_mi_coupling(reports: &[AugmentedReport]) -> Result<Coupling> {
    let n = check_reports(reports)?;
    let arity = reports.len();

    let coupling = if arity == 2 {
        let p = reports[0].probs.clone();
        let q = reports[1].probs.clone();
        let mut best_mass: Option<Vec<f64>> = None;
        let mut best_mi = f64::NEG_INFINITY;
        let mut consider = |mut mass: Vec<f64>| {
            improve_pairwise_mi(n, &mut mass);
            let mi = pairwise_mi(n, &mass, &p, &q);
            if mi > best_mi + 1e-12 {
                best_mi = mi;
                best_mass = Some(mass);
            }
        };

        consider(greedy_pair_matching(&p, &q, None));
        // Alignment sweep is factorial in the outcome count; fusion works
        // with a handful of objects, and past that the plain greedy start
        // stands alone.
        if n <= 6 {
            let mut perm: Vec<usize> = (0..n).collect();
            permutations(&mut perm, 0, &mut |sigma| {
                consider(greedy_pair_matching(&p, &q, Some(sigma)));
            });
        }
        Coupling::Dense2 {
            n,
            mass: best_mass.expect("at least one candidate"),
        }
    } else {
        let mut leftover: Vec<Vec<f64>> = reports.iter().map(|r| r.probs.clone()).collect();
        let mut cells: BTreeMap<Vec<u16>, f64> = BTreeMap::new();
        loop {
            let mut tuple = Vec::with_capacity(arity);
            let mut alloc = f64::INFINITY;
            for marg in &leftover {
                let mut best = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for (o, &v) in marg.iter().enumerate() {
                    if v > best_v {
                        best_v = v;
                        best = o;
                    }
                }
                tuple.push(best as u16);
                alloc = alloc.min(best_v);
            }
            if alloc <= 1e-15 {
                break;
            }
            for (marg, &o) in leftover.iter_mut().zip(&tuple) {
                marg[o as usize] -= alloc;
            }
            *cells.entry(tuple).or_insert(0.0) += alloc;
        }
        Coupling::Sparse { arity, n, mass: cells }
    };

    for (axis, report) in reports.iter().enumerate() {
        let marg = coupling.marginal(axis);
        for (a, b) in marg.iter().zip(report.probs()) {
            if (a - b).abs() > 1e-9 {
                return Err(Error::Numeric(format!(
                    "greedy coupling lost marginal mass on axis {axis}: {a} vs {b}"
                )));
            }
        }
    }
    Ok(coupling)
}

/// Matched allocation then greedy residual for two marginals. With an
/// alignment, cell `(i, sigma(i))` first takes `min(p_i, q_sigma(i))`; the
/// leftovers (or, without an alignment, the full marginals) are then paired
/// largest-to-largest until exhausted.
fn greedy_pair_matching(p: &[f64], q: &[f64], alignment: Option<&[usize]>) -> Vec<f64> {
    let n = p.len();
    let mut mass = vec![0.0; n * n];
    let mut lp = p.to_vec();
    let mut lq = q.to_vec();
    if let Some(sigma) = alignment {
        for (i, &j) in sigma.iter().enumerate() {
            let m = lp[i].min(lq[j]);
            mass[i * n + j] += m;
            lp[i] -= m;
            lq[j] -= m;
        }
    }
    loop {
        let (mut bi, mut bj) = (0usize, 0usize);
        let (mut bp, mut bq) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (i, &v) in lp.iter().enumerate() {
            if v > bp {
                bp = v;
                bi = i;
            }
        }
        for (j, &v) in lq.iter().enumerate() {
            if v > bq {
                bq = v;
                bj = j;
            }
        }
        let alloc = bp.min(bq);
        if alloc <= 1e-15 {
            break;
        }
        mass[bi * n + bj] += alloc;
        lp[bi] -= alloc;
        lq[bj] -= alloc;
    }
    mass
}

fn pairwise_mi(n: usize, mass: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for r in 0..n {
        for c in 0..n {
            let m = mass[r * n + c];
            if m > 1e-15 {
                let denom = p[r] * q[c];
                if denom > 0.0 {
                    total += m * (m / denom).ln();
                }
            }
        }
    }
    total
}

fn permutations(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Pivot hill-climb for a dense two-axis coupling over the transportation
/// polytope's 1-skeleton. Bringing an empty cell into the occupied basis
/// closes a unique alternating cycle through the occupied cells; pushing
/// mass around it to the boundary moves to an adjacent vertex and preserves
/// both marginals. Mutual information is convex over the polytope, so its
/// maximum sits at a vertex; first-improving moves in a fixed scan order
/// keep the walk deterministic and strictly increasing, hence finite.
fn improve_pairwise_mi(n: usize, mass: &mut [f64]) {
    let marg_rows: Vec<f64> = (0..n)
        .map(|r| (0..n).map(|c| mass[r * n + c]).sum())
        .collect();
    let marg_cols: Vec<f64> = (0..n)
        .map(|c| (0..n).map(|r| mass[r * n + c]).sum())
        .collect();
    let mi = |mass: &[f64]| -> f64 { pairwise_mi(n, mass, &marg_rows, &marg_cols) };

    let mut current = mi(mass);
    for _round in 0..256 {
        let mut improved = false;
        'scan: for enter_r in 0..n {
            for enter_c in 0..n {
                if mass[enter_r * n + enter_c] > 1e-15 {
                    continue;
                }
                let Some(cycle) = basis_cycle(n, mass, enter_r, enter_c) else {
                    continue;
                };
                // Even cycle positions gain mass, odd ones lose it; the
                // move length is capped by the smallest losing cell.
                let mut delta = f64::INFINITY;
                for (k, &(r, c)) in cycle.iter().enumerate() {
                    if k % 2 == 1 {
                        delta = delta.min(mass[r * n + c]);
                    }
                }
                if delta <= 1e-15 {
                    continue;
                }
                let mut cand = mass.to_vec();
                for (k, &(r, c)) in cycle.iter().enumerate() {
                    if k % 2 == 0 {
                        cand[r * n + c] += delta;
                    } else {
                        cand[r * n + c] = (cand[r * n + c] - delta).max(0.0);
                    }
                }
                let value = mi(&cand);
                if value > current + 1e-12 {
                    mass.copy_from_slice(&cand);
                    current = value;
                    improved = true;
                    continue 'scan;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Alternating cycle created by entering an empty cell into the occupied
/// basis: a path of occupied cells connecting that cell's row to its
/// column, prefixed by the entering cell, so cells alternate gain/lose
/// around the cycle. `None` when the occupied graph does not connect them.
fn basis_cycle(
    n: usize,
    mass: &[f64],
    enter_r: usize,
    enter_c: usize,
) -> Option<Vec<(usize, usize)>> {
    // Nodes 0..n are rows, n..2n columns; edges are occupied cells.
    let occupied = |r: usize, c: usize| mass[r * n + c] > 1e-15;
    let mut prev: Vec<Option<(usize, (usize, usize))>> = vec![None; 2 * n];
    let mut visited = vec![false; 2 * n];
    let start = enter_r;
    let goal = n + enter_c;
    visited[start] = true;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(start);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        if node < n {
            let r = node;
            for c in 0..n {
                if occupied(r, c) && !visited[n + c] {
                    visited[n + c] = true;
                    prev[n + c] = Some((node, (r, c)));
                    queue.push_back(n + c);
                }
            }
        } else {
            let c = node - n;
            for r in 0..n {
                if occupied(r, c) && !visited[r] {
                    visited[r] = true;
                    prev[r] = Some((node, (r, c)));
                    queue.push_back(r);
                }
            }
        }
    }
    if !visited[goal] {
        return None;
    }
    let mut path_cells = Vec::new();
    let mut node = goal;
    while node != start {
        let (parent, cell) = prev[node]?;
        path_cells.push(cell);
        node = parent;
    }
    path_cells.reverse();
    let mut cycle = Vec::with_capacity(path_cells.len() + 1);
    cycle.push((enter_r, enter_c));
    cycle.extend(path_cells);
    Some(cycle)
}

/// Convex blend `rho * max + (1 - rho) * min`, cell-wise.
pub fn blend(max_c: &Coupling, min_c: &Coupling, rho: f64) -> Result<Coupling> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Contract(format!("rho {rho} outside [0, 1]")));
    }
    match (max_c, min_c) {
        (Coupling::Dense2 { n: na, mass: ma }, Coupling::Dense2 { n: nb, mass: mb }) => {
            if na != nb {
                return Err(Error::Contract("couplings have different outcome counts".into()));
            }
            let mass = ma
                .iter()
                .zip(mb)
                .map(|(a, b)| rho * a + (1.0 - rho) * b)
                .collect();
            Ok(Coupling::Dense2 { n: *na, mass })
        }
        (
            Coupling::Sparse { arity: aa, n: na, mass: ma },
            Coupling::Sparse { arity: ab, n: nb, mass: mb },
        ) => {
            if aa != ab || na != nb {
                return Err(Error::Contract("couplings have different shapes".into()));
            }
            let mut mass = BTreeMap::new();
            for (t, &m) in ma {
                *mass.entry(t.clone()).or_insert(0.0) += rho * m;
            }
            for (t, &m) in mb {
                *mass.entry(t.clone()).or_insert(0.0) += (1.0 - rho) * m;
            }
            Ok(Coupling::Sparse { arity: *aa, n: *na, mass })
        }
        _ => Err(Error::Contract("cannot blend dense and sparse couplings".into())),
    }
}

/// Fused object probabilities plus the fused degree of confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedReport {
    pub probs: Vec<f64>,
    pub doc_f: f64,
}

/// Collapses a coupling into fused object probabilities: a tuple supports
/// object `i` when every non-uncertain coordinate equals `i` and at least
/// one coordinate is non-uncertain. The all-uncertain tuple defines
/// `doc_f = 1 - mass(all unc)`. Conflicting tuples support nothing.
pub fn fuse(coupling: &Coupling) -> FusedReport {
    let n = coupling.outcomes();
    let unc = (n - 1) as u16;
    let objects = n - 1;
    let mut probs = vec![0.0; objects];
    let mut all_unc = 0.0;
    coupling.for_each(|tuple, m| {
        let mut agreed: Option<u16> = None;
        let mut conflict = false;
        let mut any_object = false;
        for &o in tuple {
            if o == unc {
                continue;
            }
            any_object = true;
            match agreed {
                None => agreed = Some(o),
                Some(a) if a != o => conflict = true,
                _ => {}
            }
        }
        if !any_object {
            all_unc += m;
        } else if !conflict {
            probs[agreed.unwrap() as usize] += m;
        }
    });
    FusedReport {
        probs,
        doc_f: 1.0 - all_unc,
    }
}

/// Renormalizes fused probabilities so they sum to one, spreading the
/// conflict and uncertainty mass proportionally. Off by default in the
/// pipeline since the fusion rule itself does not renormalize.
pub fn renormalize(fused: &FusedReport) -> FusedReport {
    let sum: f64 = fused.probs.iter().sum();
    if sum <= 0.0 {
        return fused.clone();
    }
    FusedReport {
        probs: fused.probs.iter().map(|p| p / sum).collect(),
        doc_f: fused.doc_f,
    }
}

/// Final decision from a fused report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Object(usize),
    /// All fused probabilities were zero; counted as an error in accuracy.
    Abstain,
}

/// Argmax with ties broken toward the lowest index.
pub fn decide(fused: &FusedReport) -> Decision {
    let mut best = 0usize;
    let mut best_v = 0.0;
    for (i, &p) in fused.probs.iter().enumerate() {
        if p > best_v {
            best_v = p;
            best = i;
        }
    }
    if best_v <= 0.0 {
        Decision::Abstain
    } else {
        Decision::Object(best)
    }
}

/// End-to-end fusion of raw sensor reports at correlation `rho`.
pub fn fuse_reports(reports: &[SensorReport], rho: f64) -> Result<FusedReport> {
    let augmented: Vec<AugmentedReport> = reports.iter().map(augment).collect::<Result<_>>()?;
    let max_c = max_mi_coupling(&augmented)?;
    let min_c = min_mi_coupling(&augmented)?;
    let blended = blend(&max_c, &min_c, rho)?;
    Ok(fuse(&blended))
}

/// Experimental estimator for `rho`: the mean over modality pairs and
/// classes of the sample correlation between per-class decision indicators,
/// clamped into `[0, 1]`. The training pipeline treats `rho` as a constant;
/// this helper exists for exploratory sweeps.
pub fn estimate_rho(per_sample_reports: &[Vec<SensorReport>]) -> Result<f64> {
    let samples = per_sample_reports.len();
    if samples < 2 {
        return Err(Error::Contract("rho estimation needs >= 2 samples".into()));
    }
    let modalities = per_sample_reports[0].len();
    if modalities < 2 {
        return Err(Error::Contract("rho estimation needs >= 2 modalities".into()));
    }
    let classes = per_sample_reports[0][0].objects();
    let argmax = |r: &SensorReport| -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &p) in r.probs.iter().enumerate() {
            if p > best_v {
                best_v = p;
                best = i;
            }
        }
        best
    };

    let mut total = 0.0;
    let mut terms = 0usize;
    for a in 0..modalities {
        for b in (a + 1)..modalities {
            for cls in 0..classes {
                let xs: Vec<f64> = per_sample_reports
                    .iter()
                    .map(|r| (argmax(&r[a]) == cls) as u8 as f64)
                    .collect();
                let ys: Vec<f64> = per_sample_reports
                    .iter()
                    .map(|r| (argmax(&r[b]) == cls) as u8 as f64)
                    .collect();
                if let Some(c) = correlation(&xs, &ys) {
                    total += c;
                    terms += 1;
                }
            }
        }
    }
    if terms == 0 {
        return Ok(0.0);
    }
    Ok((total / terms as f64).clamp(0.0, 1.0))
}

fn correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
