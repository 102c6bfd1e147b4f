//! Synthetic multi-modal scenario generation.
//!
//! A ground-truth latent space shared by all modalities, per-modality
//! private factors, fixed random embeddings into each sensor's observation
//! space, and dB-calibrated noise injection. Also the 2-D toy shape
//! distributions used by the dimensionality study.
//!
//! Every sample draws from a counter-derived stream keyed by its index, so
//! generation is bit-reproducible and independent of iteration order.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Scenario description. Observation dimensions must be able to embed the
/// shared latent plus that modality's private factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Number of modalities `L`.
    pub modalities: usize,
    /// Number of object classes `I`.
    pub classes: usize,
    /// Ground-truth shared latent dimension.
    pub latent_dim: usize,
    /// Private latent dimensions, one per modality.
    pub private_dims: Vec<usize>,
    /// Observation dimension per modality.
    pub obs_dims: Vec<usize>,
    /// Aligned training samples.
    pub train_samples: usize,
    /// Aligned held-out samples.
    pub test_samples: usize,
    /// Mean distance between class centers in latent space.
    pub class_separation: f64,
    /// Pass observations through tanh before adding sensor noise.
    pub nonlinear: bool,
    pub seed: u64,
}

/// Standard deviation of the always-present observation noise.
const OBS_NOISE_STD: f64 = 0.05;

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modalities < 2 {
            return Err(Error::Contract(format!(
                "fusion needs >= 2 modalities, got {}",
                self.modalities
            )));
        }
        if self.classes < 2 {
            return Err(Error::Contract("need at least two classes".into()));
        }
        if self.latent_dim == 0 || self.train_samples == 0 {
            return Err(Error::Contract("latent dimension and sample counts must be positive".into()));
        }
        if self.private_dims.len() != self.modalities || self.obs_dims.len() != self.modalities {
            return Err(Error::Contract(
                "private_dims and obs_dims must list one entry per modality".into(),
            ));
        }
        for (l, (&d, &p)) in self.obs_dims.iter().zip(&self.private_dims).enumerate() {
            if d < self.latent_dim + p {
                return Err(Error::Contract(format!(
                    "modality {l}: obs dim {d} cannot embed latent {} + private {p}",
                    self.latent_dim
                )));
            }
        }
        if !(self.class_separation >= 0.0) {
            return Err(Error::Contract("class separation must be non-negative".into()));
        }
        Ok(())
    }
}

/// One modality's aligned observations. Column `n` is the same physical
/// event in every modality. The true latent is carried for diagnostics only
/// and never enters training.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorBatch {
    /// Observations, `[d_l, B]`.
    pub x: Tensor,
    /// One-hot labels, `[I, B]`.
    pub labels: Tensor,
    /// Ground-truth shared latent, `[latent_dim, B]`.
    pub true_latent: Tensor,
    /// Per-sample SNR in dB; `+inf` marks a clean sample.
    pub snr_db: Vec<f64>,
    /// Per-sample damage flag.
    pub damaged: Vec<bool>,
}

impl SensorBatch {
    pub fn samples(&self) -> usize {
        self.x.cols()
    }

    /// Copies the selected sample columns into a new batch.
    pub fn select(&self, idx: &[usize]) -> SensorBatch {
        SensorBatch {
            x: self.x.select_columns(idx),
            labels: self.labels.select_columns(idx),
            true_latent: self.true_latent.select_columns(idx),
            snr_db: idx.iter().map(|&i| self.snr_db[i]).collect(),
            damaged: idx.iter().map(|&i| self.damaged[i]).collect(),
        }
    }
}

/// Train and test splits, one [`SensorBatch`] per modality each.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub train: Vec<SensorBatch>,
    pub test: Vec<SensorBatch>,
}

/// Draws class centers whose mean pairwise distance equals `separation`
/// exactly (up to float rounding).
fn class_centers(rng: &mut CounterRng, classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = (0..classes).map(|_| rng.normal_vec(dim)).collect();
    if separation == 0.0 {
        return vec![vec![0.0; dim]; classes];
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..classes {
        for j in (i + 1)..classes {
            let d: f64 = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            total += d;
            pairs += 1;
        }
    }
    let mean = total / pairs as f64;
    let scale = if mean > 0.0 { separation / mean } else { 0.0 };
    for c in &mut centers {
        c.iter_mut().for_each(|v| *v *= scale);
    }
    centers
}

/// Generates the aligned train/test batches for a scenario.
///
/// Per sample: shared latent = class center + unit normal noise; per
/// modality a private latent around modality-specific class centers; the
/// observation is a fixed full-rank random embedding of `[shared; private]`,
/// optionally squashed by tanh, plus small sensor noise.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let total = cfg.train_samples + cfg.test_samples;
    let (l_count, i_count) = (cfg.modalities, cfg.classes);

    let mut center_rng = CounterRng::stream(cfg.seed, "centers.shared", 0);
    let shared_centers = class_centers(&mut center_rng, i_count, cfg.latent_dim, cfg.class_separation);
    let private_centers: Vec<Vec<Vec<f64>>> = (0..l_count)
        .map(|l| {
            let mut r = CounterRng::stream(cfg.seed, "centers.private", l as u64);
            class_centers(&mut r, i_count, cfg.private_dims[l], cfg.class_separation)
        })
        .collect();

    // Fixed random embeddings, one per modality; entries scaled by the
    // input dimension so observations stay O(1).
    let embeddings: Vec<Tensor> = (0..l_count)
        .map(|l| {
            let rows = cfg.obs_dims[l];
            let cols = cfg.latent_dim + cfg.private_dims[l];
            let mut r = CounterRng::stream(cfg.seed, "embedding", l as u64);
            let std = 1.0 / (cols as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols).map(|_| std * r.normal()).collect();
            Tensor::from_vec(vec![rows, cols], data)
        })
        .collect::<Result<_>>()?;

    // Balanced classes in a seeded order.
    let mut class_of: Vec<usize> = (0..total).map(|n| n % i_count).collect();
    let mut order_rng = CounterRng::stream(cfg.seed, "class.order", 0);
    order_rng.shuffle(&mut class_of);

    let mut xs: Vec<Vec<f64>> = cfg.obs_dims.iter().map(|&d| vec![0.0; d * total]).collect();
    let mut latents = vec![0.0; cfg.latent_dim * total];
    let mut labels = vec![0.0; i_count * total];

    for n in 0..total {
        let cls = class_of[n];
        labels[cls * total + n] = 1.0;

        let mut srng = CounterRng::stream(cfg.seed, "sample.shared", n as u64);
        let shared: Vec<f64> = shared_centers[cls]
            .iter()
            .map(|&c| c + srng.normal())
            .collect();
        for (k, &v) in shared.iter().enumerate() {
            latents[k * total + n] = v;
        }

        for l in 0..l_count {
            let mut prng = CounterRng::stream(cfg.seed, "sample.private", (n * l_count + l) as u64);
            let private: Vec<f64> = private_centers[l][cls]
                .iter()
                .map(|&c| c + prng.normal())
                .collect();
            let joint: Vec<f64> = shared.iter().chain(private.iter()).copied().collect();

            let emb = &embeddings[l];
            let (rows, cols) = (emb.rows(), emb.cols());
            let mut nrng = CounterRng::stream(cfg.seed, "sample.noise", (n * l_count + l) as u64);
            for r in 0..rows {
                let mut acc = 0.0;
                for c in 0..cols {
                    acc += emb.data()[r * cols + c] * joint[c];
                }
                if cfg.nonlinear {
                    acc = acc.tanh();
                }
                xs[l][r * total + n] = acc + OBS_NOISE_STD * nrng.normal();
            }
        }
    }

    let split = |l: usize, idx: &[usize]| -> Result<SensorBatch> {
        let d = cfg.obs_dims[l];
        let full_x = Tensor::from_vec(vec![d, total], xs[l].clone())?;
        let full_labels = Tensor::from_vec(vec![i_count, total], labels.clone())?;
        let full_latent = Tensor::from_vec(vec![cfg.latent_dim, total], latents.clone())?;
        Ok(SensorBatch {
            x: full_x.select_columns(idx),
            labels: full_labels.select_columns(idx),
            true_latent: full_latent.select_columns(idx),
            snr_db: vec![f64::INFINITY; idx.len()],
            damaged: vec![false; idx.len()],
        })
    };

    let train_idx: Vec<usize> = (0..cfg.train_samples).collect();
    let test_idx: Vec<usize> = (cfg.train_samples..total).collect();
    let train: Vec<SensorBatch> = (0..l_count)
        .map(|l| split(l, &train_idx))
        .collect::<Result<_>>()?;
    let test: Vec<SensorBatch> = (0..l_count)
        .map(|l| split(l, &test_idx))
        .collect::<Result<_>>()?;

    Ok(Scenario {
        config: cfg.clone(),
        train,
        test,
    })
}

/// Adds zero-mean Gaussian noise at the requested SNR, per sample:
/// the noise power equals the sample's mean-square signal divided by
/// `10^(snr/10)`. `+inf` returns a clean copy.
pub fn inject_noise(batch: &SensorBatch, snr_db: f64, seed: u64) -> Result<SensorBatch> {
    if snr_db.is_nan() {
        return Err(Error::Contract("snr must not be NaN".into()));
    }
    let mut out = batch.clone();
    if snr_db == f64::INFINITY {
        return Ok(out);
    }
    let (rows, cols) = (batch.x.rows(), batch.x.cols());
    let factor = 10f64.powf(snr_db / 10.0);
    for c in 0..cols {
        let mut power = 0.0;
        for r in 0..rows {
            let v = batch.x.at(r, c);
            power += v * v;
        }
        power /= rows as f64;
        let std = (power / factor).sqrt();
        let mut rng = CounterRng::stream(seed, "inject", c as u64);
        let data = out.x.data_mut();
        for r in 0..rows {
            data[r * cols + c] += std * rng.normal();
        }
        out.snr_db[c] = snr_db;
        out.damaged[c] = true;
    }
    Ok(out)
}

/// Non-Gaussian failure modes; real sensors rarely fail politely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DamageMode {
    /// Additive noise at this SNR (dB).
    Noise(f64),
    /// All-zero output.
    Zero,
    /// Output stuck at each sample's first reading.
    StuckAt,
}

/// Applies a damage mode to every sample of the batch.
pub fn apply_damage(batch: &SensorBatch, mode: DamageMode, seed: u64) -> Result<SensorBatch> {
    match mode {
        DamageMode::Noise(snr) => inject_noise(batch, snr, seed),
        DamageMode::Zero => {
            let mut out = batch.clone();
            out.x.data_mut().iter_mut().for_each(|v| *v = 0.0);
            out.snr_db.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            out.damaged.iter_mut().for_each(|v| *v = true);
            Ok(out)
        }
        DamageMode::StuckAt => {
            let mut out = batch.clone();
            let (rows, cols) = (out.x.rows(), out.x.cols());
            for c in 0..cols {
                let stuck = out.x.at(0, c);
                let data = out.x.data_mut();
                for r in 0..rows {
                    data[r * cols + c] = stuck;
                }
            }
            out.snr_db.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            out.damaged.iter_mut().for_each(|v| *v = true);
            Ok(out)
        }
    }
}

/// 2-D toy distributions for the dimensionality study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeDistribution {
    /// Unit circle: `x^2 + y^2 = 1`.
    Circle,
    /// Thin annulus: `x^2 + y^2 in [1 - eps, 1 + eps]`.
    Disk { eps: f64 },
    /// Uniform on `[0, 1]^2`.
    Square,
}

/// Uniform samples from the named manifold or region, `n` rows of `(x, y)`.
pub fn sample_shape(dist: ShapeDistribution, n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    if n == 0 {
        return Err(Error::Contract("sample count must be positive".into()));
    }
    let mut rng = CounterRng::stream(seed, "shape", 0);
    let mut out = Vec::with_capacity(n);
    match dist {
        ShapeDistribution::Circle => {
            for _ in 0..n {
                let theta = rng.uniform() * std::f64::consts::TAU;
                out.push([theta.cos(), theta.sin()]);
            }
        }
        ShapeDistribution::Disk { eps } => {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::Contract(format!("disk band eps must be in (0, 1), got {eps}")));
            }
            for _ in 0..n {
                // Squared radius uniform in the band keeps samples inside it
                // exactly.
                let r2 = 1.0 - eps + 2.0 * eps * rng.uniform();
                let theta = rng.uniform() * std::f64::consts::TAU;
                let r = r2.sqrt();
                out.push([r * theta.cos(), r * theta.sin()]);
            }
        }
        ShapeDistribution::Square => {
            for _ in 0..n {
                out.push([rng.uniform(), rng.uniform()]);
            }
        }
    }
    Ok(out)
}

/// Fraction of `k x k` grid cells over the unit square `[0,1]^2` containing
/// at least one point. Points outside the square fall in no cell.
pub fn coverage_fraction(points: &[[f64; 2]], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::Contract(format!("grid must be at least 2x2, got {k}")));
    }
    let mut hit = vec![false; k * k];
    for p in points {
        let (x, y) = (p[0], p[1]);
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            continue;
        }
        let cx = ((x * k as f64) as usize).min(k - 1);
        let cy = ((y * k as f64) as usize).min(k - 1);
        hit[cy * k + cx] = true;
    }
    Ok(hit.iter().filter(|&&h| h).count() as f64 / (k * k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig {
            modalities: 3,
            classes: 3,
            latent_dim: 6,
            private_dims: vec![2, 0, 4],
            obs_dims: vec![16, 12, 20],
            train_samples: 60,
            test_samples: 30,
            class_separation: 3.0,
            nonlinear: true,
            seed: 17,
        }
    }

    #[test]
    fn generation_is_bit_reproducible() {
        let a = generate_scenario(&small_cfg()).unwrap();
        let b = generate_scenario(&small_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batches_are_aligned_across_modalities() {
        let s = generate_scenario(&small_cfg()).unwrap();
        for batch in &s.train {
            assert_eq!(batch.samples(), 60);
            assert_eq!(batch.labels.data(), s.train[0].labels.data());
            assert_eq!(batch.true_latent.data(), s.train[0].true_latent.data());
        }
        for batch in &s.test {
            assert_eq!(batch.samples(), 30);
        }
    }

    #[test]
    fn labels_are_one_hot_and_balanced() {
        let s = generate_scenario(&small_cfg()).unwrap();
        let labels = &s.train[0].labels;
        let mut counts = [0usize; 3];
        for c in 0..labels.cols() {
            let mut ones = 0;
            for r in 0..3 {
                if labels.at(r, c) == 1.0 {
                    ones += 1;
                    counts[r] += 1;
                }
            }
            assert_eq!(ones, 1);
        }
        for &count in &counts {
            assert!(count >= 15, "class badly unbalanced: {counts:?}");
        }
    }

    #[test]
    fn rejects_single_modality_and_bad_dims() {
        let mut cfg = small_cfg();
        cfg.modalities = 1;
        cfg.private_dims = vec![0];
        cfg.obs_dims = vec![16];
        assert!(matches!(generate_scenario(&cfg), Err(Error::Contract(_))));

        let mut cfg2 = small_cfg();
        cfg2.obs_dims[0] = 4; // cannot embed latent 6 + private 2
        assert!(matches!(generate_scenario(&cfg2), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_separation_removes_class_signal() {
        let mut cfg = small_cfg();
        cfg.class_separation = 0.0;
        cfg.train_samples = 600;
        let s = generate_scenario(&cfg).unwrap();
        // With no separation the class centroids coincide up to sampling
        // noise: their spread must be small next to the within-class spread.
        let x = &s.train[0].x;
        let labels = &s.train[0].labels;
        let rows = x.rows();
        let mut centroid = vec![vec![0.0; rows]; 3];
        let mut count = [0usize; 3];
        for c in 0..x.cols() {
            let cls = (0..3).find(|&r| labels.at(r, c) == 1.0).unwrap();
            count[cls] += 1;
            for r in 0..rows {
                centroid[cls][r] += x.at(r, c);
            }
        }
        for cls in 0..3 {
            centroid[cls].iter_mut().for_each(|v| *v /= count[cls] as f64);
        }
        let mut max_sep = 0.0f64;
        for a in 0..3 {
            for b in (a + 1)..3 {
                let d: f64 = centroid[a]
                    .iter()
                    .zip(&centroid[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                max_sep = max_sep.max(d);
            }
        }
        let mut within = 0.0;
        for c in 0..x.cols() {
            let cls = (0..3).find(|&r| labels.at(r, c) == 1.0).unwrap();
            within += (0..rows)
                .map(|r| (x.at(r, c) - centroid[cls][r]).powi(2))
                .sum::<f64>()
                .sqrt();
        }
        within /= x.cols() as f64;
        assert!(
            max_sep < 0.35 * within,
            "centroid spread {max_sep} too large next to within-class spread {within}"
        );
    }

    #[test]
    fn inject_noise_hits_requested_power() {
        let cfg = ScenarioConfig {
            train_samples: 300,
            test_samples: 0,
            ..small_cfg()
        };
        let s = generate_scenario(&cfg).unwrap();
        let clean = &s.train[0];

        for &(snr, factor) in &[(0.0, 1.0), (-10.0, 10.0)] {
            let noisy = inject_noise(clean, snr, 99).unwrap();
            let (rows, cols) = (clean.x.rows(), clean.x.cols());
            let mut sig = 0.0;
            let mut noise = 0.0;
            for c in 0..cols {
                for r in 0..rows {
                    let v = clean.x.at(r, c);
                    let d = noisy.x.at(r, c) - v;
                    sig += v * v;
                    noise += d * d;
                }
            }
            let ratio = noise / sig;
            assert!(
                (ratio - factor).abs() < 0.02 * factor.max(1.0),
                "snr {snr}: noise/signal {ratio}, wanted {factor}"
            );
            assert!(noisy.damaged.iter().all(|&d| d));
        }

        let same = inject_noise(clean, f64::INFINITY, 99).unwrap();
        assert_eq!(same.x.data(), clean.x.data());
        assert!(same.damaged.iter().all(|&d| !d));
    }

    #[test]
    fn empirical_snr_within_point_two_db() {
        let cfg = ScenarioConfig {
            train_samples: 400,
            test_samples: 0,
            ..small_cfg()
        };
        let s = generate_scenario(&cfg).unwrap();
        let clean = &s.train[1];
        let noisy = inject_noise(clean, 5.0, 3).unwrap();
        let mut sig = 0.0;
        let mut noise = 0.0;
        for (a, b) in clean.x.data().iter().zip(noisy.x.data()) {
            sig += a * a;
            noise += (b - a) * (b - a);
        }
        let db = 10.0 * (sig / noise).log10();
        assert!((db - 5.0).abs() < 0.2, "empirical snr {db}");
    }

    #[test]
    fn hard_damage_modes() {
        let s = generate_scenario(&small_cfg()).unwrap();
        let zero = apply_damage(&s.test[0], DamageMode::Zero, 1).unwrap();
        assert!(zero.x.data().iter().all(|&v| v == 0.0));
        let stuck = apply_damage(&s.test[0], DamageMode::StuckAt, 1).unwrap();
        for c in 0..stuck.x.cols() {
            let first = stuck.x.at(0, c);
            for r in 0..stuck.x.rows() {
                assert_eq!(stuck.x.at(r, c), first);
            }
        }
    }

    #[test]
    fn shape_constraints_hold_exactly() {
        let circle = sample_shape(ShapeDistribution::Circle, 500, 5).unwrap();
        for p in &circle {
            assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-9);
        }
        let disk = sample_shape(ShapeDistribution::Disk { eps: 0.05 }, 500, 5).unwrap();
        for p in &disk {
            let r2 = p[0] * p[0] + p[1] * p[1];
            assert!((0.95..=1.05).contains(&r2), "r^2 = {r2}");
        }
        let square = sample_shape(ShapeDistribution::Square, 500, 5).unwrap();
        for p in &square {
            assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
        }
    }

    #[test]
    fn coverage_fraction_examples() {
        assert_eq!(coverage_fraction(&[], 10).unwrap(), 0.0);

        let mut centers = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                centers.push([(i as f64 + 0.5) / 10.0, (j as f64 + 0.5) / 10.0]);
            }
        }
        assert_eq!(coverage_fraction(&centers, 10).unwrap(), 1.0);

        let uniform = sample_shape(ShapeDistribution::Square, 10_000, 7).unwrap();
        assert!(coverage_fraction(&uniform, 10).unwrap() >= 0.99);

        assert!(coverage_fraction(&centers, 1).is_err());
    }
}
