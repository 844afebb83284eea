//! Reverse-mode automatic differentiation on a flat expression tape.
//!
//! Every node carries a `Vec<f64>` value (scalars are length-1 vectors), and
//! the tape records how each node was produced so that `backward` can sweep
//! once from the loss to every leaf, accumulating exact gradients.  The op
//! set is deliberately small: just what the graph layers, action heads, and
//! training losses in this crate are built from.
//!
//! The tape is rebuilt for every loss evaluation.  That keeps the programming
//! model simple (no retained-graph invalidation) and is cheap at the network
//! sizes used here.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input or parameter; gradient accumulates here.
    Leaf,
    /// Matrix-vector product.  `w` is a row-major `rows x cols` matrix node.
    MatVec { w: NodeId, x: NodeId, rows: usize, cols: usize },
    /// Elementwise sum of two equal-length vectors.
    Add { a: NodeId, b: NodeId },
    /// Elementwise product of two equal-length vectors.
    Mul { a: NodeId, b: NodeId },
    /// Concatenation of vectors in order.
    Concat { parts: Vec<NodeId> },
    /// Elementwise leaky rectifier.
    LeakyRelu { x: NodeId, slope: f64 },
    /// Elementwise logistic sigmoid.
    Sigmoid { x: NodeId },
    /// Elementwise hyperbolic tangent.
    Tanh { x: NodeId },
    /// Elementwise softplus, ln(1 + e^x).
    Softplus { x: NodeId },
    /// Softmax over the whole vector.
    Softmax { x: NodeId },
    /// Multiply by a compile-time constant.
    Scale { x: NodeId, k: f64 },
    /// Add a constant vector (noise draws enter the graph this way).
    AddConst { x: NodeId },
    /// Inner product of two equal-length vectors; output is a scalar.
    Dot { a: NodeId, b: NodeId },
    /// Componentwise maximum over equal-length vectors.
    MaxPool { parts: Vec<NodeId> },
    /// Scale a vector by a scalar node (length-1).
    ScaleBy { x: NodeId, s: NodeId },
    /// Elementwise sum of equally long vectors.
    SumVecs { parts: Vec<NodeId> },
    /// Extract one component as a scalar node.
    Index { x: NodeId, i: usize },
    /// Sum of all components; output is a scalar.
    SumComponents { x: NodeId },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Expression tape.  Build values through the methods below, then call
/// [`Tape::backward`] on a scalar node to populate gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Borrow a node's current value.
    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Borrow a node's accumulated gradient (zeros before `backward`).
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    /// Length of a node's value vector.
    pub fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    /// Insert an input or parameter vector.
    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Insert a constant vector.  Constants are leaves too; their gradient is
    /// computed but simply never read back.
    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Row-major `rows x cols` matrix times length-`cols` vector.
    pub fn matvec(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.len_of(w), rows * cols, "matrix node has wrong length");
        assert_eq!(self.len_of(x), cols, "vector node has wrong length");
        let mut out = vec![0.0; rows];
        {
            let wv = &self.nodes[w.0].value;
            let xv = &self.nodes[x.0].value;
            for (r, o) in out.iter_mut().enumerate() {
                let row = &wv[r * cols..(r + 1) * cols];
                *o = row.iter().zip(xv).map(|(a, b)| a * b).sum();
            }
        }
        self.push(out, Op::MatVec { w, x, rows, cols })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.len_of(a), self.len_of(b), "add length mismatch");
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(out, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.len_of(a), self.len_of(b), "mul length mismatch");
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(out, Op::Mul { a, b })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(out, Op::Concat { parts: parts.to_vec() })
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        self.push(out, Op::LeakyRelu { x, slope })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(out, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| v.tanh()).collect();
        self.push(out, Op::Tanh { x })
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        // ln(1+e^x), written to stay finite for large |x|.
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| if v > 30.0 { v } else { v.exp().ln_1p() })
            .collect();
        self.push(out, Op::Softplus { x })
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.iter().map(|&a| (a - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|&e| e / z).collect();
        self.push(out, Op::Softmax { x })
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| k * v).collect();
        self.push(out, Op::Scale { x, k })
    }

    /// Add a constant vector to `x`.  The constant does not get a node of its
    /// own, so nothing flows back into it.
    pub fn add_const(&mut self, x: NodeId, c: &[f64]) -> NodeId {
        assert_eq!(self.len_of(x), c.len(), "add_const length mismatch");
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .zip(c)
            .map(|(v, k)| v + k)
            .collect();
        self.push(out, Op::AddConst { x })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.len_of(a), self.len_of(b), "dot length mismatch");
        let s: f64 = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push(vec![s], Op::Dot { a, b })
    }

    /// Componentwise maximum over one or more equal-length vectors.  The
    /// gradient routes to the first argument attaining the maximum, which
    /// makes ties deterministic.
    pub fn max_pool(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "max_pool needs at least one input");
        let len = self.len_of(parts[0]);
        let mut out = self.nodes[parts[0].0].value.clone();
        for p in &parts[1..] {
            assert_eq!(self.len_of(*p), len, "max_pool length mismatch");
            for (o, &v) in out.iter_mut().zip(&self.nodes[p.0].value) {
                if v > *o {
                    *o = v;
                }
            }
        }
        self.push(out, Op::MaxPool { parts: parts.to_vec() })
    }

    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.len_of(s), 1, "scale_by takes a scalar node");
        let k = self.nodes[s.0].value[0];
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| k * v).collect();
        self.push(out, Op::ScaleBy { x, s })
    }

    pub fn sum_vecs(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "sum_vecs needs at least one input");
        let len = self.len_of(parts[0]);
        let mut out = vec![0.0; len];
        for p in parts {
            assert_eq!(self.len_of(*p), len, "sum_vecs length mismatch");
            for (o, &v) in out.iter_mut().zip(&self.nodes[p.0].value) {
                *o += v;
            }
        }
        self.push(out, Op::SumVecs { parts: parts.to_vec() })
    }

    pub fn index(&mut self, x: NodeId, i: usize) -> NodeId {
        let v = self.nodes[x.0].value[i];
        self.push(vec![v], Op::Index { x, i })
    }

    pub fn sum_components(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.iter().sum();
        self.push(vec![s], Op::SumComponents { x })
    }

    /// Convenience: `a - b`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Convenience: affine layer `W·x + b`.
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let wx = self.matvec(w, x, rows, cols);
        self.add(wx, b)
    }

    /// Convenience: mean squared value of a vector, as a scalar node.
    pub fn mean_square(&mut self, x: NodeId) -> NodeId {
        let n = self.len_of(x) as f64;
        let sq = self.mul(x, x);
        let s = self.sum_components(sq);
        self.scale(s, 1.0 / n)
    }

    /// Propagate gradients from the scalar node `loss` back to every leaf.
    /// Gradients accumulate; call once per tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.len_of(loss) != 1 {
            return Err(Error::Nn(format!(
                "backward expects a scalar loss, got a vector of length {}",
                self.len_of(loss)
            )));
        }
        if !self.nodes[loss.0].value[0].is_finite() {
            return Err(Error::Nn("loss is not finite".into()));
        }
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..=loss.0).rev() {
            let op = self.nodes[i].op.clone();
            let g = self.nodes[i].grad.clone();
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            match op {
                Op::Leaf => {}
                Op::MatVec { w, x, rows, cols } => {
                    let xv = self.nodes[x.0].value.clone();
                    let wv = self.nodes[w.0].value.clone();
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            self.nodes[w.0].grad[r * cols + c] += gr * xv[c];
                            self.nodes[x.0].grad[c] += gr * wv[r * cols + c];
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (k, &gv) in g.iter().enumerate() {
                        self.nodes[a.0].grad[k] += gv;
                        self.nodes[b.0].grad[k] += gv;
                    }
                }
                Op::Mul { a, b } => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    for (k, &gv) in g.iter().enumerate() {
                        self.nodes[a.0].grad[k] += gv * bv[k];
                        self.nodes[b.0].grad[k] += gv * av[k];
                    }
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        for k in 0..len {
                            self.nodes[p.0].grad[k] += g[off + k];
                        }
                        off += len;
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.nodes[x.0].value.clone();
                    for (k, &gv) in g.iter().enumerate() {
                        let d = if xv[k] > 0.0 { 1.0 } else { slope };
                        self.nodes[x.0].grad[k] += gv * d;
                    }
                }
                Op::Sigmoid { x } => {
                    let yv = self.nodes[i].value.clone();
                    for (k, &gv) in g.iter().enumerate() {
                        self.nodes[x.0].grad[k] += gv * yv[k] * (1.0 - yv[k]);
                    }
                }
                Op::Tanh { x } => {
                    let yv = self.nodes[i].value.clone();
                    for (k, &gv) in g.iter().enumerate() {
                        self.nodes[x.0].grad[k] += gv * (1.0 - yv[k] * yv[k]);
                    }
                }
                Op::Softplus { x } => {
                    let xv = self.nodes[x.0].value.clone();
                    for (k, &gv) in g.iter().enumerate() {
                        let s = 1.0 / (1.0 + (-xv[k]).exp());
                        self.nodes[x.0].grad[k] += gv * s;
                    }
                }
                Op::Softmax { x } => {
                    let yv = self.nodes[i].value.clone();
                    let inner: f64 = g.iter().zip(&yv).map(|(gv, y)| gv * y).sum();
                    for (k, y) in yv.iter().enumerate() {
                        self.nodes[x.0].grad[k] += y * (g[k] - inner);
                    }
                }
                Op::Scale { x, k } => {
                    for (j, &gv) in g.iter().enumerate() {
                        self.nodes[x.0].grad[j] += gv * k;
                    }
                }
                Op::AddConst { x } => {
                    for (j, &gv) in g.iter().enumerate() {
                        self.nodes[x.0].grad[j] += gv;
                    }
                }
                Op::Dot { a, b } => {
                    let g0 = g[0];
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    for k in 0..av.len() {
                        self.nodes[a.0].grad[k] += g0 * bv[k];
                        self.nodes[b.0].grad[k] += g0 * av[k];
                    }
                }
                Op::MaxPool { parts } => {
                    let yv = self.nodes[i].value.clone();
                    for (k, &gv) in g.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        // Route to the first input that attains the max.
                        for p in &parts {
                            if self.nodes[p.0].value[k] == yv[k] {
                                self.nodes[p.0].grad[k] += gv;
                                break;
                            }
                        }
                    }
                }
                Op::ScaleBy { x, s } => {
                    let k = self.nodes[s.0].value[0];
                    let xv = self.nodes[x.0].value.clone();
                    let mut ds = 0.0;
                    for (j, &gv) in g.iter().enumerate() {
                        self.nodes[x.0].grad[j] += gv * k;
                        ds += gv * xv[j];
                    }
                    self.nodes[s.0].grad[0] += ds;
                }
                Op::SumVecs { parts } => {
                    for p in parts {
                        for (k, &gv) in g.iter().enumerate() {
                            self.nodes[p.0].grad[k] += gv;
                        }
                    }
                }
                Op::Index { x, i: idx } => {
                    self.nodes[x.0].grad[idx] += g[0];
                }
                Op::SumComponents { x } => {
                    let g0 = g[0];
                    for gx in self.nodes[x.0].grad.iter_mut() {
                        *gx += g0;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Central-difference derivative of `f` with respect to component `i` of
    /// `base`, with step `h`.
    fn central_diff(base: &[f64], i: usize, h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
        let mut hi = base.to_vec();
        let mut lo = base.to_vec();
        hi[i] += h;
        lo[i] -= h;
        (f(&hi) - f(&lo)) / (2.0 * h)
    }

    #[test]
    fn matvec_gradients_match_central_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let (rows, cols) = (3, 4);
        let w: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss = |wv: &[f64], xv: &[f64]| {
            let mut t = Tape::new();
            let wn = t.leaf(wv.to_vec());
            let xn = t.leaf(xv.to_vec());
            let y = t.matvec(wn, xn, rows, cols);
            let y2 = t.tanh(y);
            let l = t.mean_square(y2);
            t.value(l)[0]
        };

        let mut t = Tape::new();
        let wn = t.leaf(w.clone());
        let xn = t.leaf(x.clone());
        let y = t.matvec(wn, xn, rows, cols);
        let y2 = t.tanh(y);
        let l = t.mean_square(y2);
        t.backward(l).unwrap();

        for i in 0..w.len() {
            let fd = central_diff(&w, i, 1e-6, |wv| loss(wv, &x));
            assert!((t.grad(wn)[i] - fd).abs() < 1e-7, "w[{i}]: {} vs {}", t.grad(wn)[i], fd);
        }
        for i in 0..x.len() {
            let fd = central_diff(&x, i, 1e-6, |xv| loss(&w, xv));
            assert!((t.grad(xn)[i] - fd).abs() < 1e-7, "x[{i}]: {} vs {}", t.grad(xn)[i], fd);
        }
    }

    #[test]
    fn softmax_and_attention_shape_ops_differentiate_correctly() {
        // Exercise softmax, index, scale_by, sum_vecs, concat and dot together,
        // the same composition the attention layer uses.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let feats: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();

        let loss = |lv: &[f64]| {
            let mut t = Tape::new();
            let ln = t.leaf(lv.to_vec());
            let alpha = t.softmax(ln);
            let mut weighted = Vec::new();
            for (j, f) in feats.iter().enumerate() {
                let fv = t.constant(f.clone());
                let aj = t.index(alpha, j);
                weighted.push(t.scale_by(fv, aj));
            }
            let agg = t.sum_vecs(&weighted);
            let act = t.sigmoid(agg);
            let l = t.mean_square(act);
            t.value(l)[0]
        };

        let mut t = Tape::new();
        let ln = t.leaf(logits.clone());
        let alpha = t.softmax(ln);
        let mut weighted = Vec::new();
        for (j, f) in feats.iter().enumerate() {
            let fv = t.constant(f.clone());
            let aj = t.index(alpha, j);
            weighted.push(t.scale_by(fv, aj));
        }
        let agg = t.sum_vecs(&weighted);
        let act = t.sigmoid(agg);
        let l = t.mean_square(act);
        t.backward(l).unwrap();

        for i in 0..logits.len() {
            let fd = central_diff(&logits, i, 1e-6, loss);
            assert!(
                (t.grad(ln)[i] - fd).abs() < 1e-7,
                "logit {i}: {} vs {}",
                t.grad(ln)[i],
                fd
            );
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_the_maximizer() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1.0, -2.0, 5.0]);
        let b = t.leaf(vec![3.0, -1.0, 4.0]);
        let m = t.max_pool(&[a, b]);
        assert_eq!(t.value(m), &[3.0, -1.0, 5.0]);
        let s = t.sum_components(m);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a), &[0.0, 0.0, 1.0]);
        assert_eq!(t.grad(b), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn shared_leaves_accumulate_gradient_from_every_use() {
        // y = w·x used twice: loss = (w·x)² + (w·x) → dl/dw = (2(w·x)+1)·x.
        let mut t = Tape::new();
        let w = t.leaf(vec![2.0, -1.0]);
        let x = t.constant(vec![0.5, 3.0]);
        let d = t.dot(w, x); // = -2
        let d2 = t.mul(d, d);
        let l = t.add(d2, d);
        t.backward(l).unwrap();
        let expect = |xi: f64| (2.0 * -2.0 + 1.0) * xi;
        assert!((t.grad(w)[0] - expect(0.5)).abs() < 1e-12);
        assert!((t.grad(w)[1] - expect(3.0)).abs() < 1e-12);
    }

    #[test]
    fn randomized_composite_graphs_pass_finite_difference_checks() {
        // Ten seeded random parameter settings of a two-layer net with every
        // remaining activation (leaky_relu, softplus, tanh) in the path.
        for seed in 0..10u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let (h, d) = (5, 3);
            let w1: Vec<f64> = (0..h * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b1: Vec<f64> = (0..h).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let w2: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let loss = |p: &[f64]| {
                let (w1v, rest) = p.split_at(h * d);
                let (b1v, w2v) = rest.split_at(h);
                let mut t = Tape::new();
                let w1n = t.leaf(w1v.to_vec());
                let b1n = t.leaf(b1v.to_vec());
                let w2n = t.leaf(w2v.to_vec());
                let xn = t.constant(x.clone());
                let a = t.affine(w1n, b1n, xn, h, d);
                let a = t.leaky_relu(a, 0.2);
                let a = t.softplus(a);
                let a = t.tanh(a);
                let y = t.dot(w2n, a);
                let l = t.mul(y, y);
                t.value(l)[0]
            };

            let mut flat = w1.clone();
            flat.extend_from_slice(&b1);
            flat.extend_from_slice(&w2);

            let mut t = Tape::new();
            let w1n = t.leaf(w1.clone());
            let b1n = t.leaf(b1.clone());
            let w2n = t.leaf(w2.clone());
            let xn = t.constant(x.clone());
            let a = t.affine(w1n, b1n, xn, h, d);
            let a = t.leaky_relu(a, 0.2);
            let a = t.softplus(a);
            let a = t.tanh(a);
            let y = t.dot(w2n, a);
            let l = t.mul(y, y);
            t.backward(l).unwrap();

            let mut ad = t.grad(w1n).to_vec();
            ad.extend_from_slice(t.grad(b1n));
            ad.extend_from_slice(t.grad(w2n));

            for (i, &a) in ad.iter().enumerate() {
                let fd = central_diff(&flat, i, 1e-6, loss);
                // The denominator floor turns the check into an absolute one
                // (at 1e-9) for tiny gradients, where the central difference
                // itself is only roundoff-accurate.
                let denom = a.abs().max(fd.abs()).max(1e-3);
                assert!(
                    ((ad[i] - fd) / denom).abs() < 1e-6,
                    "seed {seed} component {i}: analytic {} vs numeric {}",
                    ad[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn non_finite_loss_is_reported_as_an_error() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1e308]);
        let y = t.mul(x, x); // overflows to +inf
        let err = t.backward(y).unwrap_err();
        assert!(err.to_string().contains("finite"));
    }
}
