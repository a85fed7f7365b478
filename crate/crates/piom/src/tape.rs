//! Reverse-mode differentiation over dense row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. `backward` seeds
//! the gradient of an output node and walks the tape in reverse. Nodes are
//! appended in evaluation order, so reverse index order is already a valid
//! topological order.

use std::sync::Arc;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c += a·b` with optional transposes, via `matrixmultiply`.
fn gemm(a: &Mat, ta: bool, b: &Mat, tb: bool, c: &mut Mat) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "inner dimensions");
    assert_eq!((c.rows, c.cols), (m, n), "output shape");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: shapes and strides are checked above and describe the buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            1.0,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.rows, b.cols);
    gemm(a, false, b, false, &mut c);
    c
}

/// Row groups for grouped attention: queries `q` attend only to keys `k`.
/// Masked keys are simply left out of `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnGroup {
    pub q: Vec<usize>,
    pub k: Vec<usize>,
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, groups: Arc<Vec<AttnGroup>>, probs: Vec<Vec<f64>> },
    GroupMax { x: Var, argmax: Vec<usize> },
    GroupMean { x: Var, groups: Arc<Vec<Vec<usize>>> },
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let c = matmul(self.value(a), self.value(b));
        self.push(c, Op::MatMul(a, b))
    }

    /// `x + 1·bias` with `bias` a 1×cols row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, self.value(x).cols), "bias shape");
        let mut y = self.value(x).clone();
        let b = &self.nodes[bias.0].value.data;
        for r in 0..y.rows {
            for (v, bb) in y.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        self.push(y, Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        assert_eq!((y.rows, y.cols), (self.value(b).rows, self.value(b).cols), "add shapes");
        y.add_assign(self.value(b));
        self.push(y, Op::Add(a, b))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y = Mat::from_vec(v.rows, v.cols, v.data.iter().map(|&t| gelu(t)).collect());
        self.push(y, Op::Gelu(x))
    }

    /// Row-wise layer normalization with learned gain and bias (1×cols).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows, xv.cols);
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let (g, b) = (&self.value(gain).data, &self.value(bias).data);
        let mut y = xhat.clone();
        for r in 0..rows {
            for (c, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = *v * g[c] + b[c];
            }
        }
        self.push(y, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// Grouped multi-head scaled dot-product attention. `q` rows listed in a
    /// group attend to that group's `k`/`v` rows; rows of `q` in no group
    /// produce zeros. Returns the head-concatenated output.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, groups: Arc<Vec<AttnGroup>>) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.cols;
        assert!(heads > 0 && d % heads == 0, "width divisible by heads");
        assert_eq!(km.cols, d);
        assert_eq!(vm.cols, d);
        assert_eq!(km.rows, vm.rows);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(qm.rows, d);
        let mut probs = Vec::with_capacity(groups.len() * heads);
        for g in groups.iter() {
            let nk = g.k.len();
            for h in 0..heads {
                let off = h * dh;
                let mut p = vec![0.0; g.q.len() * nk];
                for (i, &qi) in g.q.iter().enumerate() {
                    let qr = &qm.row(qi)[off..off + dh];
                    let s = &mut p[i * nk..(i + 1) * nk];
                    let mut mx = f64::NEG_INFINITY;
                    for (j, &kj) in g.k.iter().enumerate() {
                        let kr = &km.row(kj)[off..off + dh];
                        s[j] = scale * qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>();
                        mx = mx.max(s[j]);
                    }
                    let mut z = 0.0;
                    for e in s.iter_mut() {
                        *e = (*e - mx).exp();
                        z += *e;
                    }
                    for e in s.iter_mut() {
                        *e /= z;
                    }
                    let orow = &mut out.data[qi * d + off..qi * d + off + dh];
                    for (j, &kj) in g.k.iter().enumerate() {
                        let w = s[j];
                        for (o, vv) in orow.iter_mut().zip(&vm.row(kj)[off..off + dh]) {
                            *o += w * vv;
                        }
                    }
                }
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { q, k, v, heads, groups, probs })
    }

    /// Attention probabilities of the attention node `node`: one row-major
    /// |q|×|k| matrix per (group, head).
    pub fn attention_probs(&self, node: Var) -> Option<&[Vec<f64>]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Column-wise max over each row group; one output row per group.
    pub fn group_max(&mut self, x: Var, groups: &[Vec<usize>]) -> Var {
        let xv = self.value(x);
        let cols = xv.cols;
        let mut y = Mat::zeros(groups.len(), cols);
        let mut argmax = vec![0usize; groups.len() * cols];
        for (gi, g) in groups.iter().enumerate() {
            assert!(!g.is_empty(), "empty max-pool group");
            for c in 0..cols {
                let mut best = g[0];
                for &r in &g[1..] {
                    if xv.at(r, c) > xv.at(best, c) {
                        best = r;
                    }
                }
                argmax[gi * cols + c] = best;
                y.data[gi * cols + c] = xv.at(best, c);
            }
        }
        self.push(y, Op::GroupMax { x, argmax })
    }

    /// Mean over each row group; one output row per group.
    pub fn group_mean(&mut self, x: Var, groups: Arc<Vec<Vec<usize>>>) -> Var {
        let xv = self.value(x);
        let mut y = Mat::zeros(groups.len(), xv.cols);
        for (gi, g) in groups.iter().enumerate() {
            assert!(!g.is_empty(), "empty mean-pool group");
            let inv = 1.0 / g.len() as f64;
            let out = &mut y.data[gi * xv.cols..(gi + 1) * xv.cols];
            for &r in g {
                for (o, v) in out.iter_mut().zip(xv.row(r)) {
                    *o += v * inv;
                }
            }
        }
        self.push(y, Op::GroupMean { x, groups })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols, cols, "concat widths");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Reverse pass from `out` seeded with `seed` (same shape as `out`).
    /// Returns the gradient of every node reached (`None` for untouched nodes).
    pub fn backward(&self, out: Var, seed: Mat) -> Vec<Option<Mat>> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        assert_eq!((seed.rows, seed.cols), (self.value(out).rows, self.value(out).cols), "seed shape");
        grads[out.0] = Some(seed);
        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(cur) => cur.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Mat::zeros(av.rows, av.cols);
                    gemm(&g, false, bv, true, &mut ga);
                    let mut gb = Mat::zeros(bv.rows, bv.cols);
                    gemm(av, true, &g, false, &mut gb);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddBias(x, bias) => {
                    let mut gb = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *bias, gb);
                    acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let gx = Mat::from_vec(g.rows, g.cols, g.data.iter().zip(&xv.data).map(|(gg, &t)| gg * gelu_grad(t)).collect());
                    acc(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = &self.value(*gain).data;
                    let (rows, cols) = (g.rows, g.cols);
                    let mut ggain = Mat::zeros(1, cols);
                    let mut gbias = Mat::zeros(1, cols);
                    let mut gx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let (gr, xr) = (g.row(r), xhat.row(r));
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..cols {
                            ggain.data[c] += gr[c] * xr[c];
                            gbias.data[c] += gr[c];
                            let dxh = gr[c] * gv[c];
                            m1 += dxh;
                            m2 += dxh * xr[c];
                        }
                        m1 /= cols as f64;
                        m2 /= cols as f64;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            out[c] = inv_std[r] * (gr[c] * gv[c] - m1 - xr[c] * m2);
                        }
                    }
                    acc(&mut grads, *gain, ggain);
                    acc(&mut grads, *bias, gbias);
                    acc(&mut grads, *x, gx);
                }
                Op::Attention { q, k, v, heads, groups, probs } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qm.cols;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Mat::zeros(qm.rows, d);
                    let mut gk = Mat::zeros(km.rows, d);
                    let mut gv = Mat::zeros(vm.rows, d);
                    for (gi, grp) in groups.iter().enumerate() {
                        let nk = grp.k.len();
                        for h in 0..*heads {
                            let off = h * dh;
                            let p = &probs[gi * heads + h];
                            let mut ds = vec![0.0; nk];
                            for (i, &qi) in grp.q.iter().enumerate() {
                                let go = &g.row(qi)[off..off + dh];
                                let pr = &p[i * nk..(i + 1) * nk];
                                let mut dot = 0.0;
                                for (j, &kj) in grp.k.iter().enumerate() {
                                    let vr = &vm.row(kj)[off..off + dh];
                                    let dp: f64 = go.iter().zip(vr).map(|(a, b)| a * b).sum();
                                    ds[j] = dp;
                                    dot += dp * pr[j];
                                    let gvr = &mut gv.data[kj * d + off..kj * d + off + dh];
                                    for (o, gg) in gvr.iter_mut().zip(go) {
                                        *o += pr[j] * gg;
                                    }
                                }
                                for (j, &kj) in grp.k.iter().enumerate() {
                                    let dsj = pr[j] * (ds[j] - dot) * scale;
                                    if dsj == 0.0 {
                                        continue;
                                    }
                                    let qr = &qm.data[qi * d + off..qi * d + off + dh];
                                    let kr = &km.data[kj * d + off..kj * d + off + dh];
                                    let gqr = &mut gq.data[qi * d + off..qi * d + off + dh];
                                    for (o, kk) in gqr.iter_mut().zip(kr) {
                                        *o += dsj * kk;
                                    }
                                    let gkr = &mut gk.data[kj * d + off..kj * d + off + dh];
                                    for (o, qq) in gkr.iter_mut().zip(qr) {
                                        *o += dsj * qq;
                                    }
                                }
                            }
                        }
                    }
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::GroupMax { x, argmax } => {
                    let xv = self.value(*x);
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    let cols = xv.cols;
                    for (idx, &r) in argmax.iter().enumerate() {
                        gx.data[r * cols + idx % cols] += g.data[idx];
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::GroupMean { x, groups } => {
                    let xv = self.value(*x);
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for (gi, grp) in groups.iter().enumerate() {
                        let inv = 1.0 / grp.len() as f64;
                        for &r in grp {
                            for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(gi)) {
                                *o += v * inv;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let len = pv.rows * pv.cols;
                        acc(&mut grads, *p, Mat::from_vec(pv.rows, pv.cols, g.data[start..start + len].to_vec()));
                        start += len;
                    }
                }
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Scalar objective Σ w ⊙ f(leaves) for a random weight matrix `w`.
    fn check_grad(build: &dyn Fn(&mut Tape, &[Var]) -> Var, shapes: &[(usize, usize)], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Mat> = shapes.iter().map(|&(r, c)| rand_mat(&mut rng, r, c)).collect();
        let eval = |inputs: &[Mat]| -> (Tape, Var, Vec<Var>) {
            let mut t = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|m| t.leaf(m.clone())).collect();
            let out = build(&mut t, &vars);
            (t, out, vars)
        };
        let (t, out, vars) = eval(&inputs);
        let o = t.value(out);
        let w = rand_mat(&mut rng, o.rows, o.cols);
        let f = |inputs: &[Mat]| -> f64 {
            let (t, out, _) = eval(inputs);
            t.value(out).data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
        };
        let grads = t.backward(out, w.clone());
        let h = 1e-6;
        for (li, var) in vars.iter().enumerate() {
            let g = grads[var.0].clone().unwrap_or_else(|| Mat::zeros(shapes[li].0, shapes[li].1));
            for e in 0..inputs[li].data.len() {
                let mut p = inputs.to_vec();
                p[li].data[e] += h;
                let mut m = inputs.to_vec();
                m[li].data[e] -= h;
                let num = (f(&p) - f(&m)) / (2.0 * h);
                let ana = g.data[e];
                assert!((num - ana).abs() <= 1e-6 * (1.0 + num.abs()), "input {li} elem {e}: {ana} vs {num}");
            }
        }
    }

    #[test]
    fn matmul_bias_gelu_gradients() {
        check_grad(
            &|t, v| {
                let y = t.matmul(v[0], v[1]);
                let y = t.add_bias(y, v[2]);
                t.gelu(y)
            },
            &[(4, 3), (3, 5), (1, 5)],
            1,
        );
    }

    #[test]
    fn layer_norm_gradients() {
        check_grad(&|t, v| t.layer_norm(v[0], v[1], v[2]), &[(5, 6), (1, 6), (1, 6)], 2);
    }

    #[test]
    fn attention_gradients() {
        let groups = Arc::new(vec![
            AttnGroup { q: vec![0, 2], k: vec![0, 1, 3] },
            AttnGroup { q: vec![1, 3], k: vec![2, 3] },
        ]);
        check_grad(&move |t, v| t.attention(v[0], v[1], v[2], 2, groups.clone()), &[(4, 4), (4, 4), (4, 4)], 3);
    }

    #[test]
    fn pooling_and_concat_gradients() {
        let groups = Arc::new(vec![vec![0, 1, 2], vec![3, 4]]);
        check_grad(
            &move |t, v| {
                let a = t.group_max(v[0], &[vec![0, 1], vec![2, 3, 4]]);
                let b = t.group_mean(v[1], groups.clone());
                let c = t.concat_rows(&[a, b]);
                t.add(c, v[2])
            },
            &[(5, 3), (5, 3), (4, 3)],
            4,
        );
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new();
        let q = t.leaf(rand_mat(&mut rng, 6, 8));
        let k = t.leaf(rand_mat(&mut rng, 7, 8));
        let v = t.leaf(rand_mat(&mut rng, 7, 8));
        let groups = Arc::new(vec![AttnGroup { q: (0..6).collect(), k: vec![0, 2, 3, 6] }]);
        let a = t.attention(q, k, v, 4, groups);
        for p in t.attention_probs(a).unwrap() {
            for row in p.chunks(4) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
