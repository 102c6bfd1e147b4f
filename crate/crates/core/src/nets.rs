//! Network definitions: per-modality generators, selection matrices, linear
//! classifiers, and the shared multi-head critic.
//!
//! A generator factors as a dense relu body followed by one square linear
//! operator with no bias and no activation; the square operators are what
//! the commutation penalty acts on. Selection matrices pick per-modality
//! features out of the shared hidden space, and the critic scores hidden
//! estimates with one unbounded output per modality.

use crate::error::{Error, Result};
use crate::objective::LossWeights;
use crate::rng::CounterRng;
use crate::tensor::{Tape, Tensor, Var};

/// Column of `S` is considered inactive when its largest absolute entry is
/// below this; used for reporting shared vs. private structure only.
pub const EPS_INACTIVE: f64 = 1e-4;

/// Hidden dimension at which full-scale sensor runs performed best; the
/// synthetic benchmark uses a much smaller space.
pub const LARGE_SCALE_HIDDEN_DIM: usize = 500;

/// One dense layer, weight `[out, in]` and bias `[out, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseLayer {
    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    fn bind(&self, tape: &mut Tape) -> (Var, Var) {
        (tape.leaf(&self.w), tape.leaf(&self.b))
    }

    fn bind_frozen(&self, tape: &mut Tape) -> (Var, Var) {
        (tape.constant(&self.w), tape.constant(&self.b))
    }

    fn forward(&self, tape: &mut Tape, vars: (Var, Var), x: Var, relu: bool) -> Result<Var> {
        let wx = tape.matmul(vars.0, x)?;
        let cols = tape.shape(wx)[1];
        let bb = tape.broadcast_cols(vars.1, cols)?;
        let y = tape.add(wx, bb)?;
        Ok(if relu { tape.relu(y) } else { y })
    }

    fn forward_raw(&self, x: &Tensor, relu: bool) -> Result<Tensor> {
        let mut y = self.w.matmul(x)?;
        let (rows, cols) = (y.rows(), y.cols());
        let b = self.b.data();
        let yd = y.data_mut();
        for r in 0..rows {
            let bv = b[r];
            for v in &mut yd[r * cols..(r + 1) * cols] {
                *v += bv;
                if relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(y)
    }
}

/// Per-modality generator: relu body into the hidden dimension, then the
/// square linear operator whose commutators are penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub body: Vec<DenseLayer>,
    pub out_op: Tensor,
}

/// Tape handles for one generator's parameters.
pub struct GeneratorVars {
    pub body: Vec<(Var, Var)>,
    pub out_op: Var,
}

impl GeneratorNet {
    pub fn input_dim(&self) -> usize {
        self.body[0].in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.out_op.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> GeneratorVars {
        GeneratorVars {
            body: self.body.iter().map(|l| l.bind(tape)).collect(),
            out_op: tape.leaf(&self.out_op),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &GeneratorVars, x: Var) -> Result<Var> {
        let mut h = x;
        for (layer, &lv) in self.body.iter().zip(&vars.body) {
            h = layer.forward(tape, lv, h, true)?;
        }
        tape.matmul(vars.out_op, h)
    }

    /// Hidden estimate for a `[d_l, B]` batch without recording a tape.
    pub fn forward_raw(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.rows() != self.input_dim() {
            return Err(Error::Shape {
                op: "generate",
                left: vec![self.input_dim()],
                right: x.shape().to_vec(),
            });
        }
        let mut h = x.clone();
        for layer in &self.body {
            h = layer.forward_raw(&h, true)?;
        }
        self.out_op.matmul(&h)
    }

    pub fn absorb_grads(&mut self, tape: &Tape, vars: &GeneratorVars) -> Result<()> {
        for (layer, lv) in self.body.iter_mut().zip(&vars.body) {
            layer.w.accumulate_grad(tape.grad(lv.0))?;
            layer.b.accumulate_grad(tape.grad(lv.1))?;
        }
        self.out_op.accumulate_grad(tape.grad(vars.out_op))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(2 * self.body.len() + 1);
        for layer in &mut self.body {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out.push(&mut self.out_op);
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::with_capacity(2 * self.body.len() + 1);
        for layer in &self.body {
            out.push(&layer.w);
            out.push(&layer.b);
        }
        out.push(&self.out_op);
        out
    }
}

/// Hidden estimate `G(x)` for an aligned observation batch.
pub fn generate(g: &GeneratorNet, x: &Tensor) -> Result<Tensor> {
    g.forward_raw(x)
}

/// Selection matrix `[d, d_H]` mapping hidden coordinates to features.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix {
    pub s: Tensor,
}

impl SelectionMatrix {
    pub fn feature_dim(&self) -> usize {
        self.s.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.s.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> Var {
        tape.leaf(&self.s)
    }

    pub fn forward(&self, tape: &mut Tape, var: Var, h: Var) -> Result<Var> {
        tape.matmul(var, h)
    }

    /// Hidden-space columns whose largest absolute entry falls below
    /// [`EPS_INACTIVE`]; those coordinates are private to other modalities.
    pub fn inactive_columns(&self) -> Vec<usize> {
        let (d, dh) = (self.s.rows(), self.s.cols());
        (0..dh)
            .filter(|&j| (0..d).all(|i| self.s.data()[i * dh + j].abs() < EPS_INACTIVE))
            .collect()
    }
}

/// Feature selection `F = S . H`.
pub fn select_features(s: &SelectionMatrix, h: &Tensor) -> Result<Tensor> {
    s.s.matmul(h)
}

/// Linear classifier over selected features; `classify` returns softmax
/// probabilities per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearClassifier {
    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> (Var, Var) {
        (tape.leaf(&self.w), tape.leaf(&self.b))
    }

    /// Probabilities on the tape: softmax over class scores per column.
    pub fn forward(&self, tape: &mut Tape, vars: (Var, Var), f: Var) -> Result<Var> {
        let wx = tape.matmul(vars.0, f)?;
        let cols = tape.shape(wx)[1];
        let bb = tape.broadcast_cols(vars.1, cols)?;
        let logits = tape.add(wx, bb)?;
        tape.softmax_cols(logits)
    }

    pub fn forward_raw(&self, f: &Tensor) -> Result<Tensor> {
        let layer = DenseLayer {
            w: self.w.clone(),
            b: self.b.clone(),
        };
        let mut logits = layer.forward_raw(f, false)?;
        softmax_cols_in_place(&mut logits);
        Ok(logits)
    }
}

/// Class probabilities for a `[d, B]` feature batch. Columns sum to one;
/// the softmax subtracts the per-column maximum before exponentiating.
pub fn classify(c: &LinearClassifier, f: &Tensor) -> Result<Tensor> {
    c.forward_raw(f)
}

fn softmax_cols_in_place(t: &mut Tensor) {
    let (m, n) = (t.rows(), t.cols());
    let d = t.data_mut();
    for c in 0..n {
        let mut mx = f64::NEG_INFINITY;
        for r in 0..m {
            mx = mx.max(d[r * n + c]);
        }
        let mut z = 0.0;
        for r in 0..m {
            let e = (d[r * n + c] - mx).exp();
            d[r * n + c] = e;
            z += e;
        }
        for r in 0..m {
            d[r * n + c] /= z;
        }
    }
}

/// Shared critic: a relu trunk with a final linear layer that emits one
/// unbounded score per modality. Weights live inside the clamp box; the
/// training loop re-clamps after every update.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    pub layers: Vec<DenseLayer>,
}

/// Tape handles for the critic's parameters.
pub struct CriticVars {
    pub layers: Vec<(Var, Var)>,
}

impl CriticNet {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn heads(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    pub fn bind(&self, tape: &mut Tape) -> CriticVars {
        CriticVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    /// Binds critic parameters as constants: gradients pass through the
    /// critic to its inputs but never into its weights. Used on generator
    /// updates, where the critic is a fixed scorer.
    pub fn bind_frozen(&self, tape: &mut Tape) -> CriticVars {
        CriticVars {
            layers: self.layers.iter().map(|l| l.bind_frozen(tape)).collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &CriticVars, h: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut y = h;
        for (i, (layer, &lv)) in self.layers.iter().zip(&vars.layers).enumerate() {
            y = layer.forward(tape, lv, y, i != last)?;
        }
        Ok(y)
    }

    pub fn forward_raw(&self, h: &Tensor) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut y = h.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            y = layer.forward_raw(&y, i != last)?;
        }
        Ok(y)
    }

    pub fn absorb_grads(&mut self, tape: &Tape, vars: &CriticVars) -> Result<()> {
        for (layer, lv) in self.layers.iter_mut().zip(&vars.layers) {
            layer.w.accumulate_grad(tape.grad(lv.0))?;
            layer.b.accumulate_grad(tape.grad(lv.1))?;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            out.push(&layer.w);
            out.push(&layer.b);
        }
        out
    }

    pub fn clamp_params(&mut self, box_half_width: f64) -> Result<()> {
        for p in self.params_mut() {
            p.clamp_(-box_half_width, box_half_width)?;
        }
        Ok(())
    }
}

/// Raw per-modality critic scores for a `[d_H, B]` batch, shape `[L, B]`.
pub fn critic_scores(dnet: &CriticNet, h: &Tensor) -> Result<Tensor> {
    if h.rank() != 2 || h.rows() != dnet.input_dim() {
        return Err(Error::Shape {
            op: "critic_scores",
            left: vec![dnet.input_dim()],
            right: h.shape().to_vec(),
        });
    }
    dnet.forward_raw(h)
}

/// Layer sizing for [`init_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Observation dimension per modality.
    pub obs_dims: Vec<usize>,
    /// Shared hidden dimension `d_H`.
    pub hidden_dim: usize,
    /// Selected-feature dimension `d` (rows of each selection matrix).
    pub feature_dim: usize,
    /// Number of object classes.
    pub classes: usize,
    /// Uniform width of the generator body.
    pub gen_width: usize,
    /// Total generator depth including the final square operator.
    pub gen_layers: usize,
    /// Width of the critic trunk.
    pub critic_width: usize,
    /// Critic depth including the per-modality output layer.
    pub critic_layers: usize,
}

impl NetConfig {
    pub fn modalities(&self) -> usize {
        self.obs_dims.len()
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.hidden_dim,
            self.feature_dim,
            self.classes,
            self.gen_width,
            self.critic_width,
        ];
        if all.iter().any(|&v| v == 0) || self.obs_dims.iter().any(|&v| v == 0) {
            return Err(Error::Contract("all layer sizes must be positive".into()));
        }
        if self.gen_layers < 2 {
            return Err(Error::Contract("generators need at least two layers".into()));
        }
        if self.critic_layers < 1 {
            return Err(Error::Contract("critic needs at least one layer".into()));
        }
        if self.obs_dims.is_empty() {
            return Err(Error::Contract("at least one modality required".into()));
        }
        Ok(())
    }
}

/// The full learned model plus the hyper-parameters it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub generators: Vec<GeneratorNet>,
    pub selectors: Vec<SelectionMatrix>,
    pub classifiers: Vec<LinearClassifier>,
    pub critic: CriticNet,
    pub hyper: LossWeights,
    pub seed: u64,
    pub epoch: usize,
    /// Latest per-modality training accuracy; the prior term of the
    /// degree of confidence.
    pub train_accuracy: Vec<f64>,
}

impl ModelBundle {
    pub fn modalities(&self) -> usize {
        self.generators.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.generators[0].hidden_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.selectors[0].feature_dim()
    }

    pub fn classes(&self) -> usize {
        self.classifiers[0].classes()
    }

    pub fn square_ops(&self) -> Vec<&Tensor> {
        self.generators.iter().map(|g| &g.out_op).collect()
    }

    /// Raw hidden estimates for aligned observation batches, one per modality.
    pub fn hidden_estimates(&self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        if xs.len() != self.modalities() {
            return Err(Error::Contract(format!(
                "expected {} modality batches, got {}",
                self.modalities(),
                xs.len()
            )));
        }
        self.generators
            .iter()
            .zip(xs)
            .map(|(g, x)| g.forward_raw(x))
            .collect()
    }

    /// Class probabilities of modality `l` for an observation batch.
    pub fn modality_probs(&self, l: usize, x: &Tensor) -> Result<Tensor> {
        let h = self.generators[l].forward_raw(x)?;
        let f = select_features(&self.selectors[l], &h)?;
        classify(&self.classifiers[l], &f)
    }

    /// Class probabilities computed from an already-selected feature batch.
    pub fn probs_from_features(&self, l: usize, f: &Tensor) -> Result<Tensor> {
        classify(&self.classifiers[l], f)
    }

    pub fn all_params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for g in &self.generators {
            out.extend(g.params());
        }
        for s in &self.selectors {
            out.push(&s.s);
        }
        for c in &self.classifiers {
            out.push(&c.w);
            out.push(&c.b);
        }
        out.extend(self.critic.params());
        out
    }
}

fn he_normal(rng: &mut CounterRng, rows: usize, cols: usize, name: &str) -> Tensor {
    let std = (2.0 / cols as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| std * rng.normal()).collect();
    Tensor::from_vec(vec![rows, cols], data)
        .expect("finite init")
        .into_param(name)
}

fn zero_bias(rows: usize, name: &str) -> Tensor {
    Tensor::zeros(vec![rows, 1]).into_param(name)
}

/// Fresh parameters: relu-scaled normal weights, zero biases, square
/// operators at identity plus a small perturbation so the commutation
/// penalty starts near its optimum, and selection entries at `N(0, 1/d_H)`.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ModelBundle> {
    cfg.validate()?;
    let modalities = cfg.modalities();
    let mut generators = Vec::with_capacity(modalities);
    let mut selectors = Vec::with_capacity(modalities);
    let mut classifiers = Vec::with_capacity(modalities);

    for (l, &d_l) in cfg.obs_dims.iter().enumerate() {
        let mut rng = CounterRng::stream(seed, "init.gen", l as u64);
        let body_layers = cfg.gen_layers - 1;
        let mut dims = Vec::with_capacity(body_layers + 1);
        dims.push(d_l);
        for _ in 0..body_layers.saturating_sub(1) {
            dims.push(cfg.gen_width);
        }
        dims.push(cfg.hidden_dim);

        let mut body = Vec::with_capacity(body_layers);
        for i in 0..body_layers {
            body.push(DenseLayer {
                w: he_normal(&mut rng, dims[i + 1], dims[i], &format!("gen{l}.layer{i}.weight")),
                b: zero_bias(dims[i + 1], &format!("gen{l}.layer{i}.bias")),
            });
        }
        let mut op = Tensor::identity(cfg.hidden_dim);
        for v in op.data_mut() {
            *v += 0.1 * rng.normal();
        }
        generators.push(GeneratorNet {
            body,
            out_op: op.into_param(&format!("gen{l}.square_op")),
        });

        let mut srng = CounterRng::stream(seed, "init.sel", l as u64);
        let s_std = (1.0 / cfg.hidden_dim as f64).sqrt();
        let s_data: Vec<f64> = (0..cfg.feature_dim * cfg.hidden_dim)
            .map(|_| s_std * srng.normal())
            .collect();
        selectors.push(SelectionMatrix {
            s: Tensor::from_vec(vec![cfg.feature_dim, cfg.hidden_dim], s_data)?
                .into_param(&format!("sel{l}")),
        });

        let mut crng = CounterRng::stream(seed, "init.cls", l as u64);
        classifiers.push(LinearClassifier {
            w: he_normal(&mut crng, cfg.classes, cfg.feature_dim, &format!("cls{l}.weight")),
            b: zero_bias(cfg.classes, &format!("cls{l}.bias")),
        });
    }

    let mut drng = CounterRng::stream(seed, "init.critic", 0);
    let mut ddims = Vec::with_capacity(cfg.critic_layers + 1);
    ddims.push(cfg.hidden_dim);
    for _ in 0..cfg.critic_layers.saturating_sub(1) {
        ddims.push(cfg.critic_width);
    }
    ddims.push(modalities);
    let mut dlayers = Vec::with_capacity(cfg.critic_layers);
    for i in 0..cfg.critic_layers {
        dlayers.push(DenseLayer {
            w: he_normal(&mut drng, ddims[i + 1], ddims[i], &format!("critic.layer{i}.weight")),
            b: zero_bias(ddims[i + 1], &format!("critic.layer{i}.bias")),
        });
    }

    Ok(ModelBundle {
        generators,
        selectors,
        classifiers,
        critic: CriticNet { layers: dlayers },
        hyper: LossWeights::default(),
        seed,
        epoch: 0,
        train_accuracy: vec![0.0; modalities],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> NetConfig {
        NetConfig {
            obs_dims: vec![7, 5],
            hidden_dim: 4,
            feature_dim: 3,
            classes: 3,
            gen_width: 6,
            gen_layers: 4,
            critic_width: 5,
            critic_layers: 3,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&small_cfg(), 9).unwrap();
        let b = init_params(&small_cfg(), 9).unwrap();
        assert_eq!(a, b);
        let c = init_params(&small_cfg(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn square_op_init_stays_near_identity() {
        // Entries of op - I are N(0, 0.1^2): the expected squared Frobenius
        // norm is d_H^2 * 0.01. Check within a loose factor.
        let bundle = init_params(&small_cfg(), 3).unwrap();
        let dh = bundle.hidden_dim();
        let expected = (dh * dh) as f64 * 0.01;
        for g in &bundle.generators {
            let mut norm_sq = 0.0;
            for i in 0..dh {
                for j in 0..dh {
                    let v = g.out_op.data()[i * dh + j] - if i == j { 1.0 } else { 0.0 };
                    norm_sq += v * v;
                }
            }
            assert!(norm_sq < 6.0 * expected, "norm_sq {norm_sq} vs expected {expected}");
        }
    }

    #[test]
    fn large_scale_hidden_dim_preset() {
        assert_eq!(LARGE_SCALE_HIDDEN_DIM, 500);
    }

    #[test]
    fn zero_weight_generator_outputs_zero() {
        let mut bundle = init_params(&small_cfg(), 1).unwrap();
        for p in bundle.generators[0].params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_vec(vec![7, 2], (0..14).map(|i| i as f64).collect()).unwrap();
        let h = generate(&bundle.generators[0], &x).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_batch_columns_are_independent() {
        let bundle = init_params(&small_cfg(), 5).unwrap();
        let col: Vec<f64> = (0..7).map(|i| (i as f64 * 0.3).sin()).collect();
        let single = Tensor::from_vec(vec![7, 1], col.clone()).unwrap();
        let mut wide_data = Vec::new();
        for &v in &col {
            wide_data.push(v);
            for j in 0..31 {
                wide_data.push(v + j as f64);
            }
        }
        let wide = Tensor::from_vec(vec![7, 32], wide_data).unwrap();
        let h1 = generate(&bundle.generators[0], &single).unwrap();
        let h32 = generate(&bundle.generators[0], &wide).unwrap();
        for r in 0..4 {
            assert!((h1.at(r, 0) - h32.at(r, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn generate_rejects_wrong_input_rows() {
        let bundle = init_params(&small_cfg(), 5).unwrap();
        let x = Tensor::zeros(vec![6, 2]);
        assert!(matches!(
            generate(&bundle.generators[0], &x),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn selection_prefix_identity_picks_leading_coordinates() {
        let mut s = Tensor::zeros(vec![3, 4]);
        for i in 0..3 {
            s.data_mut()[i * 4 + i] = 1.0;
        }
        let sel = SelectionMatrix { s };
        let h = Tensor::from_vec(vec![4, 2], (0..8).map(|i| i as f64).collect()).unwrap();
        let f = select_features(&sel, &h).unwrap();
        assert_eq!(f.data(), &h.data()[0..6]);
        assert_eq!(sel.inactive_columns(), vec![3]);
    }

    #[test]
    fn selection_matches_naive_triple_loop() {
        let mut rng = CounterRng::stream(2, "test.sel", 0);
        let s_data = rng.normal_vec(3 * 5);
        let h_data = rng.normal_vec(5 * 4);
        let sel = SelectionMatrix {
            s: Tensor::from_vec(vec![3, 5], s_data.clone()).unwrap(),
        };
        let h = Tensor::from_vec(vec![5, 4], h_data.clone()).unwrap();
        let f = select_features(&sel, &h).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += s_data[i * 5 + k] * h_data[k * 4 + j];
                }
                assert_eq!(f.at(i, j), acc);
            }
        }
    }

    #[test]
    fn classify_uniform_for_zero_weights() {
        let c = LinearClassifier {
            w: Tensor::zeros(vec![3, 4]),
            b: Tensor::zeros(vec![3, 1]),
        };
        let f = Tensor::from_vec(vec![4, 2], (0..8).map(|i| i as f64).collect()).unwrap();
        let p = classify(&c, &f).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_is_shift_invariant() {
        let mut rng = CounterRng::stream(4, "test.cls", 0);
        let w = Tensor::from_vec(vec![3, 4], rng.normal_vec(12)).unwrap();
        let b0 = Tensor::zeros(vec![3, 1]);
        let bk = Tensor::from_vec(vec![3, 1], vec![7.5; 3]).unwrap();
        let f = Tensor::from_vec(vec![4, 2], rng.normal_vec(8)).unwrap();
        let p0 = classify(&LinearClassifier { w: w.clone(), b: b0 }, &f).unwrap();
        let pk = classify(&LinearClassifier { w, b: bk }, &f).unwrap();
        for (a, b) in p0.data().iter().zip(pk.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_zero_weights_zero_scores_and_shape() {
        let mut bundle = init_params(&small_cfg(), 6).unwrap();
        let h = Tensor::from_vec(vec![4, 1], vec![0.4, -0.2, 0.9, 0.1]).unwrap();
        let scores = critic_scores(&bundle.critic, &h).unwrap();
        assert_eq!(scores.shape(), &[2, 1]);

        for p in bundle.critic.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let zs = critic_scores(&bundle.critic, &h).unwrap();
        assert!(zs.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clamped_critic_scores_respect_interval_bound() {
        let mut bundle = init_params(&small_cfg(), 8).unwrap();
        bundle.critic.clamp_params(0.01).unwrap();
        let h = Tensor::from_vec(vec![4, 1], vec![1.0, -1.0, 0.5, 0.25]).unwrap();
        let scores = critic_scores(&bundle.critic, &h).unwrap();
        // Interval bound: |out| <= 0.01 * fan_in * |in|_max + 0.01 per layer.
        let mut bound = 1.0;
        for layer in &bundle.critic.layers {
            bound = 0.01 * layer.in_dim() as f64 * bound + 0.01;
        }
        for &v in scores.data() {
            assert!(v.is_finite());
            assert!(v.abs() <= bound, "score {v} exceeds bound {bound}");
        }
    }

    #[test]
    fn generator_forward_matches_tape_forward() {
        let bundle = init_params(&small_cfg(), 12).unwrap();
        let mut rng = CounterRng::stream(12, "test.x", 0);
        let x = Tensor::from_vec(vec![7, 3], rng.normal_vec(21)).unwrap();
        let raw = bundle.generators[0].forward_raw(&x).unwrap();
        let mut tape = Tape::new();
        let vars = bundle.generators[0].bind(&mut tape);
        let xv = tape.constant(&x);
        let h = bundle.generators[0].forward(&mut tape, &vars, xv).unwrap();
        for (a, b) in raw.data().iter().zip(tape.value(h)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
