//! Define-by-run computation tape.
//!
//! A [`Tape`] records primitive operations in creation order, which is
//! already a topological order, so one reverse sweep propagates gradients
//! from a scalar loss to every leaf that requires them. Tapes are rebuilt
//! per training step and are strictly single-threaded.

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Tensor};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Rule {
    Leaf,
    Constant,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Max { a: Var, b: Var },
    AddScalar { a: Var },
    Scale { a: Var, c: f64 },
    MaxScalar { a: Var, c: f64 },
    Relu { a: Var },
    Exp { a: Var },
    Log { a: Var },
    Abs { a: Var },
    Square { a: Var },
    Sum { a: Var },
    Mean { a: Var },
    Row { a: Var, index: usize },
    BroadcastCols { a: Var },
    ColMax { a: Var },
    SoftmaxCols { a: Var },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    needs_grad: bool,
    rule: Rule,
}

/// Recorded forward pass over which gradients can be computed.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool, rule: Rule) -> Var {
        let n = value.len();
        self.nodes.push(Node {
            shape,
            value,
            grad: vec![0.0; n],
            needs_grad,
            rule,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a tensor as an input leaf. Gradients flow back to it iff the
    /// tensor is a parameter.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rule = if t.requires_grad() { Rule::Leaf } else { Rule::Constant };
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), rule)
    }

    /// Records a tensor as a constant regardless of its parameter status.
    /// Used when another module's parameters act as a fixed target.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Rule::Constant)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.constant(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.node(v).value.len(), 1);
        self.node(v).value[0]
    }

    /// Gradient buffer of a node; meaningful after `backward`.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.node(v).grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::Shape {
                op,
                left: self.node(a).shape.clone(),
                right: self.node(b).shape.clone(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: sa.clone(),
                right: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&self.node(a).value, &self.node(b).value, &mut out, m, k, n);
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(vec![m, n], out, needs, Rule::Matmul { a, b }))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        rule: Rule,
    ) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let value: Vec<f64> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        let shape = self.node(a).shape.clone();
        Ok(self.push(shape, value, needs, rule))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Rule::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Rule::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Rule::Mul { a, b })
    }

    /// Elementwise maximum; on ties the subgradient goes to the first operand.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("max", a, b, f64::max, Rule::Max { a, b })
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, rule: Rule) -> Var {
        let value: Vec<f64> = self.node(a).value.iter().map(|&x| f(x)).collect();
        let needs = self.node(a).needs_grad;
        let shape = self.node(a).shape.clone();
        self.push(shape, value, needs, rule)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Rule::AddScalar { a })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Rule::Scale { a, c })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn max_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.max(c), Rule::MaxScalar { a, c })
    }

    /// Rectifier with the `relu'(0) = 0` convention.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Rule::Relu { a })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Rule::Exp { a })
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.node(a).value.iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive input {bad}")));
        }
        Ok(self.unary(a, f64::ln, Rule::Log { a }))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Rule::Abs { a })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Rule::Square { a })
    }

    /// Full reduction to a scalar node of shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.node(a).value.iter().sum();
        let needs = self.node(a).needs_grad;
        self.push(vec![1], vec![s], needs, Rule::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.node(a).value.len().max(1);
        let s: f64 = self.node(a).value.iter().sum::<f64>() / n as f64;
        let needs = self.node(a).needs_grad;
        self.push(vec![1], vec![s], needs, Rule::Mean { a })
    }

    /// Slices row `index` of a rank-2 node into a `[1, cols]` node.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let shape = &self.node(a).shape;
        if shape.len() != 2 || index >= shape[0] {
            return Err(Error::Contract(format!(
                "row {index} out of bounds for shape {shape:?}"
            )));
        }
        let cols = shape[1];
        let value = self.node(a).value[index * cols..(index + 1) * cols].to_vec();
        let needs = self.node(a).needs_grad;
        Ok(self.push(vec![1, cols], value, needs, Rule::Row { a, index }))
    }

    /// Tiles a `[m, 1]` column across `cols` columns. The backward rule sums
    /// gradients row-wise, which is what bias terms need.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let shape = &self.node(a).shape;
        if shape.len() != 2 || shape[1] != 1 {
            return Err(Error::Shape {
                op: "broadcast_cols",
                left: shape.clone(),
                right: vec![cols],
            });
        }
        let m = shape[0];
        let mut value = vec![0.0; m * cols];
        for r in 0..m {
            let v = self.node(a).value[r];
            value[r * cols..(r + 1) * cols].iter_mut().for_each(|x| *x = v);
        }
        let needs = self.node(a).needs_grad;
        Ok(self.push(vec![m, cols], value, needs, Rule::BroadcastCols { a }))
    }

    /// Per-column maximum of a rank-2 node, shape `[1, cols]`. The
    /// subgradient goes to the lowest-index maximal row of each column.
    pub fn colmax(&mut self, a: Var) -> Result<Var> {
        let shape = &self.node(a).shape;
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::Contract(format!("colmax needs a non-empty matrix, got {shape:?}")));
        }
        let (m, n) = (shape[0], shape[1]);
        let av = &self.node(a).value;
        let mut value = vec![f64::NEG_INFINITY; n];
        for r in 0..m {
            for c in 0..n {
                let x = av[r * n + c];
                if x > value[c] {
                    value[c] = x;
                }
            }
        }
        let needs = self.node(a).needs_grad;
        Ok(self.push(vec![1, n], value, needs, Rule::ColMax { a }))
    }

    /// Numerically stable column-wise softmax of an `[m, n]` node.
    pub fn softmax_cols(&mut self, a: Var) -> Result<Var> {
        let shape = &self.node(a).shape;
        if shape.len() != 2 {
            return Err(Error::Contract(format!("softmax_cols needs a matrix, got {shape:?}")));
        }
        let (m, n) = (shape[0], shape[1]);
        let av = &self.node(a).value;
        let mut value = vec![0.0; m * n];
        for c in 0..n {
            let mut mx = f64::NEG_INFINITY;
            for r in 0..m {
                mx = mx.max(av[r * n + c]);
            }
            let mut z = 0.0;
            for r in 0..m {
                let e = (av[r * n + c] - mx).exp();
                value[r * n + c] = e;
                z += e;
            }
            for r in 0..m {
                value[r * n + c] /= z;
            }
        }
        let needs = self.node(a).needs_grad;
        Ok(self.push(vec![m, n], value, needs, Rule::SoftmaxCols { a }))
    }

    /// Propagates `d loss / d node` into every node reachable from `loss`,
    /// which must be scalar and connected to at least one parameter leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        if !self.node(loss).needs_grad {
            return Err(Error::Contract(
                "loss is not connected to any parameter leaf".to_string(),
            ));
        }
        self.nodes[loss.0].grad[0] += 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let rule = self.nodes[i].rule.clone();
            match rule {
                Rule::Leaf | Rule::Constant => {}
                Rule::Matmul { a, b } => self.back_matmul(i, a, b),
                Rule::Add { a, b } => {
                    self.add_grad_scaled(a, i, 1.0);
                    self.add_grad_scaled(b, i, 1.0);
                }
                Rule::Sub { a, b } => {
                    self.add_grad_scaled(a, i, 1.0);
                    self.add_grad_scaled(b, i, -1.0);
                }
                Rule::Mul { a, b } => {
                    self.back_mul(i, a, b);
                }
                Rule::Max { a, b } => self.back_max(i, a, b),
                Rule::AddScalar { a } => self.add_grad_scaled(a, i, 1.0),
                Rule::Scale { a, c } => self.add_grad_scaled(a, i, c),
                Rule::MaxScalar { a, c } => self.back_max_scalar(i, a, c),
                Rule::Relu { a } => self.back_relu(i, a),
                Rule::Exp { a } => self.back_exp(i, a),
                Rule::Log { a } => self.back_log(i, a),
                Rule::Abs { a } => self.back_abs(i, a),
                Rule::Square { a } => self.back_square(i, a),
                Rule::Sum { a } => {
                    let g = self.nodes[i].grad[0];
                    if self.nodes[a.0].needs_grad {
                        self.nodes[a.0].grad.iter_mut().for_each(|v| *v += g);
                    }
                }
                Rule::Mean { a } => {
                    let n = self.nodes[a.0].value.len().max(1);
                    let g = self.nodes[i].grad[0] / n as f64;
                    if self.nodes[a.0].needs_grad {
                        self.nodes[a.0].grad.iter_mut().for_each(|v| *v += g);
                    }
                }
                Rule::Row { a, index } => {
                    if self.nodes[a.0].needs_grad {
                        let cols = self.nodes[a.0].shape[1];
                        let (head, tail) = self.nodes.split_at_mut(i);
                        let src = &tail[0].grad;
                        let dst = &mut head[a.0].grad[index * cols..(index + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                Rule::BroadcastCols { a } => {
                    if self.nodes[a.0].needs_grad {
                        let rows = self.nodes[a.0].shape[0];
                        let cols = self.nodes[i].shape[1];
                        let (head, tail) = self.nodes.split_at_mut(i);
                        let src = &tail[0].grad;
                        let dst = &mut head[a.0].grad;
                        for r in 0..rows {
                            dst[r] += src[r * cols..(r + 1) * cols].iter().sum::<f64>();
                        }
                    }
                }
                Rule::ColMax { a } => self.back_colmax(i, a),
                Rule::SoftmaxCols { a } => self.back_softmax(i, a),
            }
        }

        // Leaf gradients accumulate across backward calls; intermediate
        // buffers reset so a second loss on the same tape propagates only
        // its own contribution.
        for node in &mut self.nodes {
            if matches!(node.rule, Rule::Leaf) {
                // A non-finite leaf gradient is caught here, naming the pass
                // that produced it rather than a later consumer.
                if node.grad.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(
                        "backward produced a non-finite leaf gradient".to_string(),
                    ));
                }
            } else {
                node.grad.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(())
    }

    fn add_grad_scaled(&mut self, target: Var, from: usize, scale: f64) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        debug_assert!(target.0 < from);
        let (head, tail) = self.nodes.split_at_mut(from);
        let src = &tail[0].grad;
        let dst = &mut head[target.0].grad;
        for (d, s) in dst.iter_mut().zip(src) {
            *d += scale * s;
        }
    }

    fn back_matmul(&mut self, out: usize, a: Var, b: Var) {
        let m = self.nodes[a.0].shape[0];
        let k = self.nodes[a.0].shape[1];
        let n = self.nodes[b.0].shape[1];
        let g = self.nodes[out].grad.clone();
        if self.nodes[a.0].needs_grad {
            // dA = g . B^T
            let bv = self.nodes[b.0].value.clone();
            let ga = &mut self.nodes[a.0].grad;
            for i in 0..m {
                for p in 0..k {
                    let mut acc = 0.0;
                    let grow = &g[i * n..(i + 1) * n];
                    let brow = &bv[p * n..(p + 1) * n];
                    for (gv, bvv) in grow.iter().zip(brow) {
                        acc += gv * bvv;
                    }
                    ga[i * k + p] += acc;
                }
            }
        }
        if self.nodes[b.0].needs_grad {
            // dB = A^T . g
            let av = self.nodes[a.0].value.clone();
            let gb = &mut self.nodes[b.0].grad;
            for i in 0..m {
                for p in 0..k {
                    let avv = av[i * k + p];
                    if avv == 0.0 {
                        continue;
                    }
                    let grow = &g[i * n..(i + 1) * n];
                    let brow = &mut gb[p * n..(p + 1) * n];
                    for (bg, gv) in brow.iter_mut().zip(grow) {
                        *bg += avv * gv;
                    }
                }
            }
        }
    }

    fn back_mul(&mut self, out: usize, a: Var, b: Var) {
        let g = self.nodes[out].grad.clone();
        if self.nodes[a.0].needs_grad {
            let bv = self.nodes[b.0].value.clone();
            let ga = &mut self.nodes[a.0].grad;
            for ((d, s), x) in ga.iter_mut().zip(&g).zip(&bv) {
                *d += s * x;
            }
        }
        if self.nodes[b.0].needs_grad {
            let av = self.nodes[a.0].value.clone();
            let gb = &mut self.nodes[b.0].grad;
            for ((d, s), x) in gb.iter_mut().zip(&g).zip(&av) {
                *d += s * x;
            }
        }
    }

    fn back_max(&mut self, out: usize, a: Var, b: Var) {
        let g = self.nodes[out].grad.clone();
        let av = self.nodes[a.0].value.clone();
        let bv = self.nodes[b.0].value.clone();
        if self.nodes[a.0].needs_grad {
            let ga = &mut self.nodes[a.0].grad;
            for i in 0..g.len() {
                if av[i] >= bv[i] {
                    ga[i] += g[i];
                }
            }
        }
        if self.nodes[b.0].needs_grad {
            let gb = &mut self.nodes[b.0].grad;
            for i in 0..g.len() {
                if bv[i] > av[i] {
                    gb[i] += g[i];
                }
            }
        }
    }

    fn back_max_scalar(&mut self, out: usize, a: Var, c: f64) {
        if !self.nodes[a.0].needs_grad {
            return;
        }
        let g = self.nodes[out].grad.clone();
        let av = self.nodes[a.0].value.clone();
        let ga = &mut self.nodes[a.0].grad;
        for i in 0..g.len() {
            if av[i] > c {
                ga[i] += g[i];
            }
        }
    }

    fn back_relu(&mut self, out: usize, a: Var) {
        if !self.nodes[a.0].needs_grad {
            return;
        }
        let g = self.nodes[out].grad.clone();
        let av = self.nodes[a.0].value.clone();
        let ga = &mut self.nodes[a.0].grad;
        for i in 0..g.len() {
            if av[i] > 0.0 {
                ga[i] += g[i];
            }
        }
    }

    fn back_exp(&mut self, out: usize, a: Var) {
        if !self.nodes[a.0].needs_grad {
            return;
        }
        let g = self.nodes[out].grad.clone();
        let ov = self.nodes[out].value.clone();
        let ga = &mut self.nodes[a.0].grad;
        for i in 0..g.len() {
            ga[i] += g[i] * ov[i];
        }
    }

    fn back_log(&mut self, out: usize, a: Var) {
        if !self.nodes[a.0].needs_grad {
            return;
        }
        let g = self.nodes[out].grad.clone();
        let av = self.nodes[a.0].value.clone();
        let ga = &mut self.nodes[a.0].grad;
        for i in 0..g.len() {
            ga[i] += g[i] / av[i];
        }
    }

    fn back_abs(&mut self, out: usize, a: Var) {
        if !self.nodes[a.0].needs_grad {
            return;
        }
        let g = self.nodes[out].grad.clone();
        let av = self.nodes[a.0].value.clone();
        let ga = &mut self.nodes[a.0].grad;
        for i in 0..g.len() {
            // sign(0) = 0, consistent with the relu convention.
            ga[i] += g[i] * if av[i] > 0.0 { 1.0 } else if av[i] < 0.0 { -1.0 } else { 0.0 };
        }
    }

    fn back_square(&mut self, out: usize, a: Var) {
        if !self.nodes[a.0].needs_grad {
            return;
        }
        let g = self.nodes[out].grad.clone();
        let av = self.nodes[a.0].value.clone();
        let ga = &mut self.nodes[a.0].grad;
        for i in 0..g.len() {
            ga[i] += 2.0 * av[i] * g[i];
        }
    }

    fn back_colmax(&mut self, out: usize, a: Var) {
        if !self.nodes[a.0].needs_grad {
            return;
        }
        let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
        let g = self.nodes[out].grad.clone();
        let av = self.nodes[a.0].value.clone();
        let ga = &mut self.nodes[a.0].grad;
        for c in 0..n {
            let mut best_r = 0;
            let mut best = f64::NEG_INFINITY;
            for r in 0..m {
                let x = av[r * n + c];
                if x > best {
                    best = x;
                    best_r = r;
                }
            }
            ga[best_r * n + c] += g[c];
        }
    }

    fn back_softmax(&mut self, out: usize, a: Var) {
        if !self.nodes[a.0].needs_grad {
            return;
        }
        let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
        let g = self.nodes[out].grad.clone();
        let p = self.nodes[out].value.clone();
        let ga = &mut self.nodes[a.0].grad;
        for c in 0..n {
            let mut dot = 0.0;
            for r in 0..m {
                dot += g[r * n + c] * p[r * n + c];
            }
            for r in 0..m {
                ga[r * n + c] += p[r * n + c] * (g[r * n + c] - dot);
            }
        }
    }
}
