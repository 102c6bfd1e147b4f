//! Loss terms and the alternating adversarial training schedule.
//!
//! The full objective per modality `l` is
//! `V_l + gamma1 * ||S_l||_inf1 + gamma2 * commutation + gamma3 * cross_entropy`,
//! where `V_l` is the multi-head Wasserstein value against every other
//! modality. One epoch walks the aligned training set in seeded minibatch
//! order; for each batch and each modality in order, the critic ascends its
//! value (weights re-clamped after the step), then the modality's
//! classifier, selection matrix, square operator, and generator body
//! descend the combined loss. The update order is part of the contract, so
//! the loop is strictly sequential.

use crate::error::{Error, Result};
use crate::nets::{CriticNet, CriticVars, ModelBundle};
use crate::rng::CounterRng;
use crate::simdata::SensorBatch;
use crate::tensor::{sgd_step, Tape, Tensor, Var};

/// Weights of the loss terms plus optimizer constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Column-sparsity weight on the selection matrices.
    pub gamma1: f64,
    /// Commutation-penalty weight on the square operators.
    pub gamma2: f64,
    /// Classification (cross-entropy) weight.
    pub gamma3: f64,
    /// Half-width of the critic weight box.
    pub clamp_box: f64,
    /// Generator-side learning rate.
    pub mu_g: f64,
    /// Critic learning rate.
    pub mu_d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma1: 1e-3,
            gamma2: 1e-2,
            gamma3: 1.0,
            clamp_box: 0.01,
            mu_g: 5e-4,
            mu_d: 5e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.gamma1 < 0.0 || self.gamma2 < 0.0 || self.gamma3 < 0.0 {
            return Err(Error::Contract("loss weights must be non-negative".into()));
        }
        if !(self.clamp_box > 0.0) {
            return Err(Error::Contract("clamp box must be positive".into()));
        }
        if self.mu_g < 0.0 || self.mu_d < 0.0 {
            return Err(Error::Contract("learning rates must be non-negative".into()));
        }
        Ok(())
    }
}

/// Minibatch size and the seed governing per-epoch shuffles.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub batch_size: usize,
    pub seed: u64,
}

/// Per-epoch training traces. Every history gains exactly one entry per
/// epoch, all evaluated on the full training set at epoch end.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub wasserstein: Vec<f64>,
    pub commutation: Vec<f64>,
    pub selection_norm: Vec<f64>,
    pub cross_entropy: Vec<f64>,
    /// Sum over hidden coordinates of the pairwise-distance profile.
    pub pairwise_distance: Vec<f64>,
    /// Per-modality training accuracy, one inner vector per modality.
    pub train_accuracy: Vec<Vec<f64>>,
}

impl TrainState {
    pub fn new(modalities: usize) -> Self {
        TrainState {
            train_accuracy: vec![Vec::new(); modalities],
            ..TrainState::default()
        }
    }
}

/// Wasserstein value of generator `l` on the tape: for every other modality
/// `m`, the mean of head `m` on that modality's estimate minus the mean of
/// head `m` on this modality's estimate.
pub fn wasserstein_value(
    tape: &mut Tape,
    critic: &CriticNet,
    critic_vars: &CriticVars,
    hidden: &[Var],
    l: usize,
) -> Result<Var> {
    if hidden.len() < 2 {
        return Err(Error::Contract(format!(
            "fusion needs >= 2 modalities, got {}",
            hidden.len()
        )));
    }
    let scores: Vec<Var> = hidden
        .iter()
        .map(|&h| critic.forward(tape, critic_vars, h))
        .collect::<Result<_>>()?;
    let mut total: Option<Var> = None;
    for m in 0..hidden.len() {
        if m == l {
            continue;
        }
        let own_row = tape.row(scores[m], m)?;
        let own_mean = tape.mean(own_row);
        let cross_row = tape.row(scores[l], m)?;
        let cross_mean = tape.mean(cross_row);
        let term = tape.sub(own_mean, cross_mean)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    Ok(total.expect("L >= 2 guarantees at least one term"))
}

/// Untaped Wasserstein values for reporting, one per generator.
pub fn wasserstein_values_raw(critic: &CriticNet, hidden: &[Tensor]) -> Result<Vec<f64>> {
    if hidden.len() < 2 {
        return Err(Error::Contract(format!(
            "fusion needs >= 2 modalities, got {}",
            hidden.len()
        )));
    }
    let scores: Vec<Tensor> = hidden
        .iter()
        .map(|h| critic.forward_raw(h))
        .collect::<Result<_>>()?;
    let mean_row = |t: &Tensor, r: usize| -> f64 {
        let cols = t.cols();
        t.data()[r * cols..(r + 1) * cols].iter().sum::<f64>() / cols as f64
    };
    let mut out = Vec::with_capacity(hidden.len());
    for l in 0..hidden.len() {
        let mut v = 0.0;
        for m in 0..hidden.len() {
            if m != l {
                v += mean_row(&scores[m], m) - mean_row(&scores[l], m);
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// Commutation penalty over operator handles already on the tape:
/// the squared Frobenius norm of every ordered-pair commutator, so each
/// unordered pair is counted twice.
pub fn commutation_penalty(tape: &mut Tape, ops: &[Var]) -> Result<Var> {
    for &op in ops {
        let s = tape.shape(op);
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::Contract(format!(
                "commutation penalty needs square operators, got {s:?}"
            )));
        }
        if s != tape.shape(ops[0]) {
            return Err(Error::Contract("operators must share one size".into()));
        }
    }
    let zero = tape.constant_from(vec![1], vec![0.0])?;
    let mut total = zero;
    for i in 0..ops.len() {
        for j in 0..ops.len() {
            if i == j {
                continue;
            }
            let ab = tape.matmul(ops[i], ops[j])?;
            let ba = tape.matmul(ops[j], ops[i])?;
            let diff = tape.sub(ab, ba)?;
            let sq = tape.square(diff);
            let norm = tape.sum(sq);
            total = tape.add(total, norm)?;
        }
    }
    Ok(total)
}

/// Untaped commutation penalty over a family of square operators.
pub fn commutation_penalty_raw(ops: &[&Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..ops.len() {
        for j in 0..ops.len() {
            if i == j {
                continue;
            }
            let ab = ops[i].matmul(ops[j])?;
            let ba = ops[j].matmul(ops[i])?;
            total += ab
                .data()
                .iter()
                .zip(ba.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
    }
    Ok(total)
}

/// Mean Frobenius norm of the pairwise commutators (unordered pairs).
pub fn mean_commutator_norm(ops: &[&Tensor]) -> Result<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..ops.len() {
        for j in (i + 1)..ops.len() {
            let ab = ops[i].matmul(ops[j])?;
            let ba = ops[j].matmul(ops[i])?;
            let norm_sq: f64 = ab
                .data()
                .iter()
                .zip(ba.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            total += norm_sq.sqrt();
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { total / pairs as f64 })
}

/// Column-wise max-of-abs norm: the sum over columns of each column's
/// largest absolute entry. Subgradient flows to the lowest-index maximal
/// row of each column.
pub fn linf1_norm(tape: &mut Tape, s: Var) -> Result<Var> {
    let a = tape.abs(s);
    let m = tape.colmax(a)?;
    Ok(tape.sum(m))
}

/// Untaped column-wise max-of-abs norm.
pub fn linf1_norm_raw(s: &Tensor) -> f64 {
    let (m, n) = (s.rows(), s.cols());
    let mut total = 0.0;
    for c in 0..n {
        let mut mx = 0.0f64;
        for r in 0..m {
            mx = mx.max(s.data()[r * n + c].abs());
        }
        total += mx;
    }
    total
}

/// Summed negative log-likelihood of one-hot labels under `probs`, with the
/// log argument floored at 1e-12. Summation (not averaging) over the batch.
pub fn cross_entropy(tape: &mut Tape, probs: Var, labels: Var) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    if shape != tape.shape(labels) {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: shape,
            right: tape.shape(labels).to_vec(),
        });
    }
    validate_one_hot(tape.value(labels), shape[0], shape[1])?;
    let clipped = tape.max_scalar(probs, 1e-12);
    let logp = tape.log(clipped)?;
    let picked = tape.mul(labels, logp)?;
    let total = tape.sum(picked);
    Ok(tape.neg(total))
}

fn validate_one_hot(labels: &[f64], rows: usize, cols: usize) -> Result<()> {
    for c in 0..cols {
        let mut ones = 0usize;
        for r in 0..rows {
            let v = labels[r * cols + c];
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(Error::Contract(format!(
                    "labels must be one-hot, found {v} in column {c}"
                )));
            }
        }
        if ones != 1 {
            return Err(Error::Contract(format!(
                "labels must be one-hot, column {c} has {ones} ones"
            )));
        }
    }
    Ok(())
}

/// Untaped summed cross-entropy of one-hot labels under probabilities.
pub fn cross_entropy_raw(probs: &Tensor, labels: &Tensor) -> Result<f64> {
    if probs.shape() != labels.shape() {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: probs.shape().to_vec(),
            right: labels.shape().to_vec(),
        });
    }
    validate_one_hot(labels.data(), labels.rows(), labels.cols())?;
    let mut total = 0.0;
    for (p, y) in probs.data().iter().zip(labels.data()) {
        if *y == 1.0 {
            total -= p.max(1e-12).ln();
        }
    }
    Ok(total)
}

/// Per-hidden-coordinate sum of squared differences between all ordered
/// modality pairs, averaged over the batch. The returned tensor has one
/// entry per hidden coordinate.
pub fn pairwise_hidden_distance(hidden: &[Tensor]) -> Result<Tensor> {
    if hidden.is_empty() {
        return Err(Error::Contract("no hidden estimates".into()));
    }
    let shape = hidden[0].shape().to_vec();
    for h in hidden {
        if h.shape() != shape.as_slice() {
            return Err(Error::Shape {
                op: "pairwise_hidden_distance",
                left: shape.clone(),
                right: h.shape().to_vec(),
            });
        }
    }
    let (dh, batch) = (shape[0], shape[1]);
    let mut out = vec![0.0; dh];
    for l in 0..hidden.len() {
        for m in 0..hidden.len() {
            if l == m {
                continue;
            }
            let (a, b) = (hidden[l].data(), hidden[m].data());
            for k in 0..dh {
                let mut acc = 0.0;
                for c in 0..batch {
                    let d = a[k * batch + c] - b[k * batch + c];
                    acc += d * d;
                }
                out[k] += acc / batch as f64;
            }
        }
    }
    Tensor::from_vec(vec![dh], out)
}

/// Per-modality accuracy of the current model on aligned batches.
pub fn train_accuracies(bundle: &ModelBundle, data: &[SensorBatch]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for (l, batch) in data.iter().enumerate() {
        let probs = bundle.modality_probs(l, &batch.x)?;
        out.push(accuracy_of(&probs, &batch.labels));
    }
    Ok(out)
}

/// Fraction of columns whose argmax matches the one-hot label. Ties go to
/// the lowest class index.
pub fn accuracy_of(probs: &Tensor, labels: &Tensor) -> f64 {
    let (classes, batch) = (probs.rows(), probs.cols());
    if batch == 0 {
        return 0.0;
    }
    let mut correct = 0usize;
    for c in 0..batch {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        let mut truth = 0usize;
        for r in 0..classes {
            let p = probs.at(r, c);
            if p > best_v {
                best_v = p;
                best = r;
            }
            if labels.at(r, c) == 1.0 {
                truth = r;
            }
        }
        if best == truth {
            correct += 1;
        }
    }
    correct as f64 / batch as f64
}

fn check_alignment(data: &[SensorBatch]) -> Result<usize> {
    if data.len() < 2 {
        return Err(Error::Contract(format!(
            "fusion needs >= 2 modalities, got {}",
            data.len()
        )));
    }
    let n = data[0].x.cols();
    for batch in data {
        if batch.x.cols() != n || batch.labels.cols() != n {
            return Err(Error::Contract(format!(
                "misaligned batch sizes: expected {n} samples in every modality"
            )));
        }
    }
    Ok(n)
}

/// One full pass over the aligned training set.
///
/// Batch order is drawn from `(seed, epoch)`, so resuming from a checkpoint
/// replays the identical schedule. Histories in `state` are extended by the
/// epoch-end values measured on the whole training set.
pub fn train_epoch(
    bundle: &mut ModelBundle,
    data: &[SensorBatch],
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<()> {
    cfg.weights.validate()?;
    let n = check_alignment(data)?;
    let modalities = data.len();
    if cfg.batch_size == 0 {
        return Err(Error::Contract("batch size must be positive".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = CounterRng::stream(cfg.seed, "epoch.shuffle", state.epoch as u64);
    shuffle_rng.shuffle(&mut order);

    let w = cfg.weights;
    for chunk in order.chunks(cfg.batch_size) {
        let xs: Vec<Tensor> = data.iter().map(|b| b.x.select_columns(chunk)).collect();
        let labels = data[0].labels.select_columns(chunk);

        // Running raw hidden estimates; refreshed whenever a generator moves.
        let mut hidden: Vec<Tensor> = bundle.hidden_estimates(&xs)?;

        for l in 0..modalities {
            critic_step(bundle, &hidden, l, &w)?;
            generator_step(bundle, &xs[l], &labels, &hidden, l, &w)?;
            hidden[l] = bundle.generators[l].forward_raw(&xs[l])?;
        }
    }

    // Epoch-end traces on the full training set.
    let xs_full: Vec<Tensor> = data.iter().map(|b| b.x.clone()).collect();
    let hidden_full = bundle.hidden_estimates(&xs_full)?;
    let wvals = wasserstein_values_raw(&bundle.critic, &hidden_full)?;
    let wsum: f64 = wvals.iter().sum();
    let comm = commutation_penalty_raw(&bundle.square_ops())?;
    let sel: f64 = bundle.selectors.iter().map(|s| linf1_norm_raw(&s.s)).sum();
    let mut xent = 0.0;
    for l in 0..modalities {
        let f = crate::nets::select_features(&bundle.selectors[l], &hidden_full[l])?;
        let probs = bundle.probs_from_features(l, &f)?;
        xent += cross_entropy_raw(&probs, &data[l].labels)?;
    }
    let dist = pairwise_hidden_distance(&hidden_full)?;
    let dist_sum: f64 = dist.data().iter().sum();
    let accs = train_accuracies(bundle, data)?;

    for v in [wsum, comm, sel, xent, dist_sum] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at epoch {}: wasserstein={wsum} commutation={comm} \
                 selection={sel} cross_entropy={xent}",
                state.epoch
            )));
        }
    }

    state.wasserstein.push(wsum);
    state.commutation.push(comm);
    state.selection_norm.push(sel);
    state.cross_entropy.push(xent);
    state.pairwise_distance.push(dist_sum);
    for (l, acc) in accs.iter().enumerate() {
        state.train_accuracy[l].push(*acc);
    }
    state.epoch += 1;
    bundle.epoch = state.epoch;
    bundle.train_accuracy = accs;
    Ok(())
}

/// Critic ascent on the Wasserstein value of modality `l`, followed by the
/// weight clamp.
fn critic_step(
    bundle: &mut ModelBundle,
    hidden: &[Tensor],
    l: usize,
    w: &LossWeights,
) -> Result<()> {
    let mut tape = Tape::new();
    let critic_vars = bundle.critic.bind(&mut tape);
    let hvars: Vec<Var> = hidden.iter().map(|h| tape.constant(h)).collect();
    let value = wasserstein_value(&mut tape, &bundle.critic, &critic_vars, &hvars, l)?;
    // Ascend by descending the negated value.
    let loss = tape.neg(value);
    tape.backward(loss)?;
    bundle.critic.absorb_grads(&tape, &critic_vars)?;
    sgd_step(bundle.critic.params_mut(), w.mu_d)?;
    bundle.critic.clamp_params(w.clamp_box)
}

/// Joint descent step for modality `l`: generator body, square operator,
/// selection matrix, and classifier under the combined objective. Other
/// modalities' estimates and the critic weights enter as constants.
fn generator_step(
    bundle: &mut ModelBundle,
    x: &Tensor,
    labels: &Tensor,
    hidden: &[Tensor],
    l: usize,
    w: &LossWeights,
) -> Result<()> {
    let modalities = hidden.len();
    let mut tape = Tape::new();

    let gen_vars = bundle.generators[l].bind(&mut tape);
    let sel_var = bundle.selectors[l].bind(&mut tape);
    let cls_vars = bundle.classifiers[l].bind(&mut tape);
    let critic_vars = bundle.critic.bind_frozen(&mut tape);

    let xv = tape.constant(x);
    let h_l = bundle.generators[l].forward(&mut tape, &gen_vars, xv)?;
    let mut hvars: Vec<Var> = Vec::with_capacity(modalities);
    for (m, h) in hidden.iter().enumerate() {
        hvars.push(if m == l { h_l } else { tape.constant(h) });
    }

    let v = wasserstein_value(&mut tape, &bundle.critic, &critic_vars, &hvars, l)?;
    let mut loss = v;

    if w.gamma1 > 0.0 {
        let sel_norm = linf1_norm(&mut tape, sel_var)?;
        let scaled = tape.scale(sel_norm, w.gamma1);
        loss = tape.add(loss, scaled)?;
    }

    if w.gamma2 > 0.0 {
        // Only pairs involving l carry gradient; both orders are kept so the
        // slice differentiates exactly like the full double sum.
        let mut ops: Vec<Var> = Vec::with_capacity(modalities);
        for (m, g) in bundle.generators.iter().enumerate() {
            ops.push(if m == l { gen_vars.out_op } else { tape.constant(&g.out_op) });
        }
        let mut comm: Option<Var> = None;
        for m in 0..modalities {
            if m == l {
                continue;
            }
            for (a, b) in [(l, m), (m, l)] {
                let ab = tape.matmul(ops[a], ops[b])?;
                let ba = tape.matmul(ops[b], ops[a])?;
                let diff = tape.sub(ab, ba)?;
                let sq = tape.square(diff);
                let norm = tape.sum(sq);
                comm = Some(match comm {
                    None => norm,
                    Some(c) => tape.add(c, norm)?,
                });
            }
        }
        let comm = comm.expect("L >= 2");
        let scaled = tape.scale(comm, w.gamma2);
        loss = tape.add(loss, scaled)?;
    }

    if w.gamma3 > 0.0 {
        let f = bundle.selectors[l].forward(&mut tape, sel_var, h_l)?;
        let probs = bundle.classifiers[l].forward(&mut tape, cls_vars, f)?;
        let lv = tape.constant(labels);
        let ce = cross_entropy(&mut tape, probs, lv)?;
        let scaled = tape.scale(ce, w.gamma3);
        loss = tape.add(loss, scaled)?;
    }

    tape.backward(loss)?;
    bundle.generators[l].absorb_grads(&tape, &gen_vars)?;
    bundle.selectors[l].s.accumulate_grad(tape.grad(sel_var))?;
    bundle.classifiers[l].w.accumulate_grad(tape.grad(cls_vars.0))?;
    bundle.classifiers[l].b.accumulate_grad(tape.grad(cls_vars.1))?;

    let mut params = bundle.generators[l].params_mut();
    params.push(&mut bundle.selectors[l].s);
    let cls = &mut bundle.classifiers[l];
    params.push(&mut cls.w);
    params.push(&mut cls.b);
    sgd_step(params, w.mu_g)
}
