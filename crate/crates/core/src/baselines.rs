//! Reference decision-fusion rules for comparison runs.
//!
//! Similar-sensor fusion minimizes a confidence-weighted KL discrepancy to
//! the individual reports (closed form: the weighted geometric mean).
//! Dissimilar-sensor fusion solves its stationarity condition with a
//! bisection on the simplex multiplier. Dempster's rule combines the
//! reports as singleton belief assignments. Feature concatenation trains a
//! single linear classifier on the stacked raw features.

use crate::error::{Error, Result};
use crate::fusion::SensorReport;
use crate::nets::{classify, LinearClassifier};
use crate::objective::{accuracy_of, cross_entropy};
use crate::rng::CounterRng;
use crate::tensor::{sgd_step, Tape, Tensor};

/// Per-sensor contribution weights on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineWeights {
    w: Vec<f64>,
}

impl BaselineWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Contract("weights must be non-empty".into()));
        }
        if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Contract("weights must be non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("weights sum to {sum}, not 1")));
        }
        Ok(BaselineWeights { w })
    }

    pub fn uniform(n: usize) -> Self {
        BaselineWeights {
            w: vec![1.0 / n as f64; n],
        }
    }

    /// Weights proportional to per-modality training accuracies, mirroring
    /// the confidence prior.
    pub fn from_accuracies(acc: &[f64]) -> Result<Self> {
        let sum: f64 = acc.iter().sum();
        if sum <= 0.0 {
            return Ok(BaselineWeights::uniform(acc.len()));
        }
        BaselineWeights::new(acc.iter().map(|a| a / sum).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }
}

fn check_reports(reports: &[SensorReport], w: &BaselineWeights) -> Result<usize> {
    if reports.is_empty() {
        return Err(Error::Contract("no reports to fuse".into()));
    }
    if reports.len() != w.w.len() {
        return Err(Error::Contract(format!(
            "{} reports but {} weights",
            reports.len(),
            w.w.len()
        )));
    }
    let objects = reports[0].objects();
    for r in reports {
        if r.objects() != objects {
            return Err(Error::Contract("reports disagree on the object set".into()));
        }
    }
    Ok(objects)
}

/// Similar-sensor fusion: the report minimizing the weighted KL divergence
/// `sum_l w_l KL(r || R_l)`, which is the normalized weighted geometric
/// mean of the reports. An object zeroed by any positively-weighted report
/// gets zero mass; if that kills every object, the fusion is undefined.
pub fn similar_fusion(reports: &[SensorReport], w: &BaselineWeights) -> Result<SensorReport> {
    let objects = check_reports(reports, w)?;
    let mut fused = vec![1.0; objects];
    for (report, &weight) in reports.iter().zip(&w.w) {
        for (f, &p) in fused.iter_mut().zip(&report.probs) {
            if weight > 0.0 {
                *f *= p.powf(weight);
            }
        }
    }
    let sum: f64 = fused.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Contract(
            "all objects have zero geometric-mean mass; similar fusion undefined".into(),
        ));
    }
    fused.iter_mut().for_each(|p| *p /= sum);
    SensorReport::new(fused, 1.0, None)
}

/// Arithmetic-mean variant corresponding to the reverse KL direction;
/// available behind this separate entry point.
pub fn similar_fusion_arithmetic(
    reports: &[SensorReport],
    w: &BaselineWeights,
) -> Result<SensorReport> {
    let objects = check_reports(reports, w)?;
    let mut fused = vec![0.0; objects];
    for (report, &weight) in reports.iter().zip(&w.w) {
        for (f, &p) in fused.iter_mut().zip(&report.probs) {
            *f += weight * p;
        }
    }
    SensorReport::new(fused, 1.0, None)
}

/// Floor applied to zero report entries before the dissimilar solve.
const DISSIMILAR_FLOOR: f64 = 1e-9;

/// Dissimilar-sensor fusion: minimizes
/// `sum_l w_l sum_i p_i / P_l(o_i) - sum_i ln p_i` over the simplex.
/// Stationarity gives `p_i = 1 / (lambda + c_i)` with
/// `c_i = sum_l w_l / P_l(o_i)`; the multiplier is found by bisection until
/// the simplex constraint holds to 1e-10. Zero report entries are floored
/// at 1e-9.
pub fn dissimilar_fusion(reports: &[SensorReport], w: &BaselineWeights) -> Result<SensorReport> {
    let objects = check_reports(reports, w)?;
    let mut coeff = vec![0.0; objects];
    for (report, &weight) in reports.iter().zip(&w.w) {
        for (c, &p) in coeff.iter_mut().zip(&report.probs) {
            *c += weight / p.max(DISSIMILAR_FLOOR);
        }
    }
    let min_c = coeff.iter().copied().fold(f64::INFINITY, f64::min);
    if !min_c.is_finite() {
        return Err(Error::Numeric("dissimilar fusion: non-finite coefficients".into()));
    }

    // g(lambda) = sum_i 1/(lambda + c_i) decreases from +inf at the pole to
    // below one at lambda = -min_c + I + 1, so the bracket always holds.
    let g = |lambda: f64| -> f64 { coeff.iter().map(|c| 1.0 / (lambda + c)).sum() };
    let mut lo = -min_c + 1e-12 * min_c.abs().max(1.0);
    let mut hi = -min_c + objects as f64 + 1.0;
    if g(lo) < 1.0 {
        return Err(Error::Numeric(format!(
            "dissimilar fusion bracket failure: g(lo)={} at lo={lo}",
            g(lo)
        )));
    }
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..200 {
        lambda = 0.5 * (lo + hi);
        let val = g(lambda);
        if (val - 1.0).abs() < 1e-13 {
            break;
        }
        if val > 1.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }
    let p: Vec<f64> = coeff.iter().map(|c| 1.0 / (lambda + c)).collect();
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-10 {
        return Err(Error::Numeric(format!(
            "dissimilar fusion bisection did not converge: sum={sum}, lambda={lambda}"
        )));
    }
    // Exact normalization absorbs the residual 1e-10.
    SensorReport::new(p.iter().map(|v| v / sum).collect(), 1.0, None)
}

/// Largest stationarity residual `|c_i - 1/p_i + lambda|` of a dissimilar
/// fusion output; checked by the solver tests.
pub fn dissimilar_kkt_residual(
    reports: &[SensorReport],
    w: &BaselineWeights,
    fused: &SensorReport,
) -> Result<f64> {
    let objects = check_reports(reports, w)?;
    let mut coeff = vec![0.0; objects];
    for (report, &weight) in reports.iter().zip(&w.w) {
        for (c, &p) in coeff.iter_mut().zip(&report.probs) {
            *c += weight / p.max(DISSIMILAR_FLOOR);
        }
    }
    // Recover lambda from the first component, then measure the others
    // against it.
    let lambda = 1.0 / fused.probs[0] - coeff[0];
    let mut worst = 0.0f64;
    for (c, &p) in coeff.iter().zip(&fused.probs) {
        worst = worst.max((c - 1.0 / p + lambda).abs());
    }
    Ok(worst)
}

/// Result of Dempster's rule; total conflict leaves no defined combination.
#[derive(Debug, Clone, PartialEq)]
pub enum DempsterOutcome {
    Fused(SensorReport),
    /// Conflict mass reached one; the combination is undefined.
    Abstain,
}

/// Dempster's rule over singleton basic-belief assignments: products of the
/// per-object masses normalized by one minus the conflict mass.
pub fn dempster_shafer(reports: &[SensorReport]) -> Result<DempsterOutcome> {
    if reports.is_empty() {
        return Err(Error::Contract("no reports to combine".into()));
    }
    let objects = reports[0].objects();
    for r in reports {
        if r.objects() != objects {
            return Err(Error::Contract("reports disagree on the object set".into()));
        }
    }
    let mut joint = vec![1.0; objects];
    for report in reports {
        for (j, &p) in joint.iter_mut().zip(&report.probs) {
            *j *= p;
        }
    }
    let agreement: f64 = joint.iter().sum();
    if agreement <= 0.0 {
        return Ok(DempsterOutcome::Abstain);
    }
    let fused: Vec<f64> = joint.iter().map(|j| j / agreement).collect();
    Ok(DempsterOutcome::Fused(SensorReport::new(fused, 1.0, None)?))
}

/// Linear classifier over the stacked raw features of every modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatClassifier {
    pub classifier: LinearClassifier,
    /// Per-modality input dimensions, in stacking order.
    pub dims: Vec<usize>,
}

/// Stacks aligned `[d_l, B]` batches into one `[sum d_l, B]` matrix.
pub fn stack_features(batches: &[&Tensor]) -> Result<Tensor> {
    if batches.is_empty() {
        return Err(Error::Contract("nothing to stack".into()));
    }
    let cols = batches[0].cols();
    let mut rows = 0;
    for b in batches {
        if b.cols() != cols {
            return Err(Error::Contract("stacked batches must align".into()));
        }
        rows += b.rows();
    }
    let mut data = Vec::with_capacity(rows * cols);
    for b in batches {
        data.extend_from_slice(b.data());
    }
    Tensor::from_vec(vec![rows, cols], data)
}

impl ConcatClassifier {
    /// Trains by summed cross-entropy with plain gradient steps on the
    /// stacked training features.
    pub fn train(
        xs: &[&Tensor],
        labels: &Tensor,
        epochs: usize,
        rate: f64,
        seed: u64,
    ) -> Result<ConcatClassifier> {
        let stacked = stack_features(xs)?;
        let classes = labels.rows();
        let total_dim = stacked.rows();
        let n = stacked.cols();

        let mut rng = CounterRng::stream(seed, "concat.init", 0);
        let std = (2.0 / total_dim as f64).sqrt();
        let w_data: Vec<f64> = (0..classes * total_dim).map(|_| std * rng.normal()).collect();
        let mut classifier = LinearClassifier {
            w: Tensor::from_vec(vec![classes, total_dim], w_data)?.into_param("concat.weight"),
            b: Tensor::zeros(vec![classes, 1]).into_param("concat.bias"),
        };

        // Scale the summed loss's gradient by the batch size through the
        // rate so training is insensitive to N.
        let effective = rate / n.max(1) as f64;
        for _ in 0..epochs {
            let mut tape = Tape::new();
            let vars = classifier.bind(&mut tape);
            let xv = tape.constant(&stacked);
            let probs = classifier.forward(&mut tape, vars, xv)?;
            let yv = tape.constant(labels);
            let loss = cross_entropy(&mut tape, probs, yv)?;
            tape.backward(loss)?;
            classifier.w.accumulate_grad(tape.grad(vars.0))?;
            classifier.b.accumulate_grad(tape.grad(vars.1))?;
            sgd_step([&mut classifier.w, &mut classifier.b], effective)?;
        }
        Ok(ConcatClassifier {
            classifier,
            dims: xs.iter().map(|x| x.rows()).collect(),
        })
    }

    /// Report for one stacked feature column (or batch).
    pub fn predict(&self, xs: &[&Tensor]) -> Result<Tensor> {
        let stacked = stack_features(xs)?;
        if stacked.rows() != self.classifier.feature_dim() {
            return Err(Error::Shape {
                op: "concat_classifier",
                left: vec![self.classifier.feature_dim()],
                right: vec![stacked.rows()],
            });
        }
        classify(&self.classifier, &stacked)
    }

    pub fn accuracy(&self, xs: &[&Tensor], labels: &Tensor) -> Result<f64> {
        let probs = self.predict(xs)?;
        Ok(accuracy_of(&probs, labels))
    }
}
