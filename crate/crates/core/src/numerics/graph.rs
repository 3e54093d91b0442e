//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in creation order, which is already a topological
//! order, so the backward sweep walks the node list from the loss towards
//! the leaves and accumulates gradient contributions in a fixed order.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;
/// sqrt(2 / pi), used by the tanh form of GELU.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub const GELU_CUBIC: f64 = 0.044_715;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    Gather {
        src: Var,
        index: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        rows: bool,
    },
    Slice {
        src: Var,
        row0: usize,
        col0: usize,
    },
    MeanRowGroups {
        src: Var,
        group: usize,
    },
    StopGrad,
    StraightThrough(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Attention {
        qkv: Var,
        tokens: usize,
        heads: usize,
        probs: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when no gradient reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => {
            let c = *shape.last().unwrap_or(&1);
            (shape.iter().product::<usize>() / c.max(1), c)
        }
    }
}

pub fn gelu(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Sign with `sign(0) = +1`.
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
fn matmul_acc_bt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
fn matmul_acc_at(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph node shapes are consistent")
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf copied from a tensor; tracks gradient iff the tensor requires it.
    pub fn tensor(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != value.len() || numel == 0 {
            return Err(Error::shape(
                "leaf",
                format!("shape {shape:?} with {} values", value.len()),
            ));
        }
        Ok(self.push(shape, value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        self.leaf(shape, value, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn elementwise(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`c` row vector to every row of an `r x c` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = dims(self.shape(x));
        if self.value(row).len() != c {
            return Err(Error::shape(
                "add_row",
                format!("row of {} for matrix {:?}", self.value(row).len(), self.shape(x)),
            ));
        }
        let rv = self.value(row);
        let mut value = self.value(x).to_vec();
        for i in 0..r {
            for (o, b) in value[i * c..(i + 1) * c].iter_mut().zip(rv) {
                *o += b;
            }
        }
        let needs = self.needs(x) || self.needs(row);
        Ok(self.push(self.shape(x).to_vec(), value, Op::AddRow(x, row), needs))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * s).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, s), needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut value = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut value, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a);
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = src[i * c + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(vec![c, r], value, Op::Transpose(a), needs))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = dims(self.shape(a));
        let mut value = self.value(a).to_vec();
        for row in value.chunks_mut(c).take(r) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), value, Op::Softmax(a), needs)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = dims(self.shape(x));
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gain {} / bias {} for width {c}",
                    self.value(gain).len(),
                    self.value(bias).len()
                ),
            ));
        }
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut normed = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let nh = (row[j] - mean) * rs;
                normed[i * c + j] = nh;
                value[i * c + j] = nh * gv[j] + bv[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            self.shape(x).to_vec(),
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            },
            needs,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| gelu(x)).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), value, Op::Gelu(a), needs)
    }

    /// Absolute value; the derivative at zero is taken as `+1`.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.abs()).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), value, Op::Abs(a), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = vec![self.value(a).iter().sum()];
        let needs = self.needs(a);
        self.push(vec![1], value, Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let value = vec![self.value(a).iter().sum::<f64>() / n];
        let needs = self.needs(a);
        self.push(vec![1], value, Op::Mean(a), needs)
    }

    /// Squared Euclidean norm of all entries.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = vec![self.value(a).iter().map(|v| v * v).sum()];
        let needs = self.needs(a);
        self.push(vec![1], value, Op::SumSquares(a), needs)
    }

    /// Flat gather: `out[i] = src[index[i]]`, reshaped to `shape`.
    /// Repeated indices accumulate in the backward pass.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let n = self.value(src).len();
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape(
                "gather",
                format!("{} indices for output shape {shape:?}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of range for {n} values"),
            ));
        }
        let sv = self.value(src);
        let value = index.iter().map(|&i| sv[i]).collect();
        let needs = self.needs(src);
        Ok(self.push(shape, value, Op::Gather { src, index }, needs))
    }

    /// Gathers whole rows of a matrix.
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = dims(self.shape(src));
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} out of range for {r} rows"),
            ));
        }
        let index = rows.iter().flat_map(|&row| (row * c)..(row * c + c)).collect();
        self.gather(src, index, vec![rows.len(), c])
    }

    /// Concatenates matrices along rows (`rows = true`) or columns.
    pub fn concat(&mut self, parts: &[Var], rows: bool) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no parts"));
        };
        let (r0, c0) = dims(self.shape(first));
        let mut total = 0;
        for &p in parts {
            let (r, c) = dims(self.shape(p));
            if (rows && c != c0) || (!rows && r != r0) {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} incompatible with {:?}", self.shape(p), self.shape(first)),
                ));
            }
            total += if rows { r } else { c };
        }
        let (out_r, out_c) = if rows { (total, c0) } else { (r0, total) };
        let mut value = Vec::with_capacity(out_r * out_c);
        if rows {
            for &p in parts {
                value.extend_from_slice(self.value(p));
            }
        } else {
            for i in 0..r0 {
                for &p in parts {
                    let (_, c) = dims(self.shape(p));
                    value.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
                }
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            vec![out_r, out_c],
            value,
            Op::Concat {
                parts: parts.to_vec(),
                rows,
            },
            needs,
        ))
    }

    /// Sub-matrix `src[row0..row0+nrows, col0..col0+ncols]`.
    pub fn slice(&mut self, src: Var, row0: usize, nrows: usize, col0: usize, ncols: usize) -> Result<Var> {
        let (r, c) = dims(self.shape(src));
        if row0 + nrows > r || col0 + ncols > c || nrows == 0 || ncols == 0 {
            return Err(Error::shape(
                "slice",
                format!("[{row0}+{nrows}, {col0}+{ncols}] of {r}x{c}"),
            ));
        }
        let sv = self.value(src);
        let mut value = Vec::with_capacity(nrows * ncols);
        for i in row0..row0 + nrows {
            value.extend_from_slice(&sv[i * c + col0..i * c + col0 + ncols]);
        }
        let needs = self.needs(src);
        Ok(self.push(vec![nrows, ncols], value, Op::Slice { src, row0, col0 }, needs))
    }

    /// Averages consecutive groups of `group` rows: `[b*group, c] -> [b, c]`.
    pub fn mean_row_groups(&mut self, src: Var, group: usize) -> Result<Var> {
        let (r, c) = dims(self.shape(src));
        if group == 0 || r % group != 0 {
            return Err(Error::shape(
                "mean_row_groups",
                format!("{r} rows not divisible into groups of {group}"),
            ));
        }
        let b = r / group;
        let sv = self.value(src);
        let mut value = vec![0.0; b * c];
        for i in 0..r {
            let o = i / group;
            for j in 0..c {
                value[o * c + j] += sv[i * c + j];
            }
        }
        let inv = 1.0 / group as f64;
        value.iter_mut().for_each(|v| *v *= inv);
        let needs = self.needs(src);
        Ok(self.push(vec![b, c], value, Op::MeanRowGroups { src, group }, needs))
    }

    /// Identity forward, zero gradient backward.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let value = self.value(a).to_vec();
        self.push(self.shape(a).to_vec(), value, Op::StopGrad, false)
    }

    /// Forward value `replacement`; the incoming gradient is copied unaltered
    /// to `input`. Nothing that produced `replacement` receives gradient.
    pub fn straight_through(&mut self, input: Var, replacement: Vec<f64>) -> Result<Var> {
        if replacement.len() != self.value(input).len() {
            return Err(Error::shape(
                "straight_through",
                format!(
                    "replacement of {} for input of {}",
                    replacement.len(),
                    self.value(input).len()
                ),
            ));
        }
        let needs = self.needs(input);
        Ok(self.push(
            self.shape(input).to_vec(),
            replacement,
            Op::StraightThrough(input),
            needs,
        ))
    }

    /// Mean softmax cross-entropy over the rows of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = dims(self.shape(logits));
        if targets.len() != r {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {r} rows", targets.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::contract(format!(
                "target class {t} out of range for {c} classes"
            )));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            let row = &lv[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + z.ln();
            loss += log_z - row[targets[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - log_z).exp();
            }
        }
        let needs = self.needs(logits);
        Ok(self.push(
            vec![1],
            vec![loss / r as f64],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Multi-head scaled dot-product self-attention. `qkv` is
    /// `[batch * tokens, 3 * d]` with queries, keys and values side by side;
    /// each group of `tokens` rows attends only within itself. Returns the
    /// concatenated head outputs, `[batch * tokens, d]`.
    pub fn attention(&mut self, qkv: Var, tokens: usize, heads: usize) -> Result<Var> {
        let (r, c3) = dims(self.shape(qkv));
        if tokens == 0 || heads == 0 || r % tokens != 0 || c3 % 3 != 0 || (c3 / 3) % heads != 0 {
            return Err(Error::shape(
                "attention",
                format!("{r}x{c3} input with {tokens} tokens and {heads} heads"),
            ));
        }
        let d = c3 / 3;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let v = self.value(qkv);
        let mut out = vec![0.0; r * d];
        let mut probs = vec![0.0; (r / tokens) * heads * tokens * tokens];
        for b in 0..r / tokens {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * tokens * tokens..][..tokens * tokens];
                for i in 0..tokens {
                    let qi = &v[(b * tokens + i) * c3 + h * dh..][..dh];
                    let row = &mut p[i * tokens..(i + 1) * tokens];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &v[(b * tokens + j) * c3 + d + h * dh..][..dh];
                        *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    row.iter_mut().for_each(|s| *s /= z);
                    let o = &mut out[(b * tokens + i) * d + h * dh..][..dh];
                    for (j, &pij) in row.iter().enumerate() {
                        let vj = &v[(b * tokens + j) * c3 + 2 * d + h * dh..][..dh];
                        o.iter_mut().zip(vj).for_each(|(o, v)| *o += pij * v);
                    }
                }
            }
        }
        let needs = self.needs(qkv);
        Ok(self.push(
            vec![r, d],
            out,
            Op::Attention {
                qkv,
                tokens,
                heads,
                probs,
            },
            needs,
        ))
    }

    /// Mean squared error between two same-shape nodes.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let n = self.value(d).len() as f64;
        let ss = self.sum_squares(d);
        Ok(self.scale(ss, 1.0 / n))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        // Only report gradients for nodes that were meant to receive them.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::Add(a, b) => {
                for &v in [a, b] {
                    if self.needs(v) {
                        accumulate(grads, v, len(v), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, len(*a), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, len(*b), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    accumulate(grads, *a, len(*a), |d| {
                        for ((d, g), y) in d.iter_mut().zip(g).zip(bv) {
                            *d += g * y;
                        }
                    });
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    accumulate(grads, *b, len(*b), |d| {
                        for ((d, g), x) in d.iter_mut().zip(g).zip(av) {
                            *d += g * x;
                        }
                    });
                }
            }
            Op::AddRow(x, row) => {
                if self.needs(*x) {
                    accumulate(grads, *x, len(*x), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
                if self.needs(*row) {
                    let c = len(*row);
                    accumulate(grads, *row, c, |d| {
                        for chunk in g.chunks(c) {
                            d.iter_mut().zip(chunk).for_each(|(d, g)| *d += g);
                        }
                    });
                }
            }
            Op::Scale(a, s) => {
                accumulate(grads, *a, len(*a), |d| {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s)
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = dims(self.shape(*a));
                let n = dims(self.shape(*b)).1;
                if self.needs(*a) {
                    let bv = self.value(*b);
                    accumulate(grads, *a, m * k, |d| matmul_acc_bt(g, bv, d, m, k, n));
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    accumulate(grads, *b, k * n, |d| matmul_acc_at(av, g, d, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = dims(self.shape(*a));
                accumulate(grads, *a, r * c, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let (_, c) = dims(&node.shape);
                let y = &node.value;
                accumulate(grads, *a, y.len(), |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                        for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (g - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            } => {
                let (r, c) = dims(&node.shape);
                if self.needs(*gain) {
                    accumulate(grads, *gain, c, |d| {
                        for (grow, nrow) in g.chunks(c).zip(normed.chunks(c)) {
                            for ((d, g), n) in d.iter_mut().zip(grow).zip(nrow) {
                                *d += g * n;
                            }
                        }
                    });
                }
                if self.needs(*bias) {
                    accumulate(grads, *bias, c, |d| {
                        for grow in g.chunks(c) {
                            d.iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                        }
                    });
                }
                if self.needs(*x) {
                    let gv = self.value(*gain);
                    accumulate(grads, *x, r * c, |d| {
                        let cf = c as f64;
                        for i in 0..r {
                            let grow = &g[i * c..(i + 1) * c];
                            let nrow = &normed[i * c..(i + 1) * c];
                            let mut sum_gh = 0.0;
                            let mut sum_gh_n = 0.0;
                            for j in 0..c {
                                let gh = grow[j] * gv[j];
                                sum_gh += gh;
                                sum_gh_n += gh * nrow[j];
                            }
                            for j in 0..c {
                                let gh = grow[j] * gv[j];
                                d[i * c + j] += rstd[i] * (gh - sum_gh / cf - nrow[j] * sum_gh_n / cf);
                            }
                        }
                    });
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, av.len(), |d| {
                    for ((d, g), &x) in d.iter_mut().zip(g).zip(av) {
                        *d += g * gelu_derivative(x);
                    }
                });
            }
            Op::Abs(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, av.len(), |d| {
                    for ((d, g), &x) in d.iter_mut().zip(g).zip(av) {
                        *d += g * sign(x);
                    }
                });
            }
            Op::Sum(a) => {
                accumulate(grads, *a, len(*a), |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean(a) => {
                let n = len(*a);
                let s = g[0] / n as f64;
                accumulate(grads, *a, n, |d| d.iter_mut().for_each(|d| *d += s));
            }
            Op::SumSquares(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, av.len(), |d| {
                    for (d, x) in d.iter_mut().zip(av) {
                        *d += 2.0 * x * g[0];
                    }
                });
            }
            Op::Gather { src, index } => {
                accumulate(grads, *src, len(*src), |d| {
                    for (&i, g) in index.iter().zip(g) {
                        d[i] += g;
                    }
                });
            }
            Op::Concat { parts, rows } => {
                if *rows {
                    let mut offset = 0;
                    for &p in parts {
                        let n = len(p);
                        if self.needs(p) {
                            accumulate(grads, p, n, |d| {
                                d.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, g)| *d += g)
                            });
                        }
                        offset += n;
                    }
                } else {
                    let (r, total) = dims(&node.shape);
                    let mut col = 0;
                    for &p in parts {
                        let c = dims(self.shape(p)).1;
                        if self.needs(p) {
                            accumulate(grads, p, r * c, |d| {
                                for i in 0..r {
                                    for j in 0..c {
                                        d[i * c + j] += g[i * total + col + j];
                                    }
                                }
                            });
                        }
                        col += c;
                    }
                }
            }
            Op::Slice { src, row0, col0 } => {
                let c = dims(self.shape(*src)).1;
                let (nr, nc) = dims(&node.shape);
                accumulate(grads, *src, len(*src), |d| {
                    for i in 0..nr {
                        for j in 0..nc {
                            d[(row0 + i) * c + col0 + j] += g[i * nc + j];
                        }
                    }
                });
            }
            Op::MeanRowGroups { src, group } => {
                let (r, c) = dims(self.shape(*src));
                let inv = 1.0 / *group as f64;
                accumulate(grads, *src, r * c, |d| {
                    for i in 0..r {
                        let o = i / group;
                        for j in 0..c {
                            d[i * c + j] += g[o * c + j] * inv;
                        }
                    }
                });
            }
            Op::StraightThrough(input) => {
                accumulate(grads, *input, len(*input), |d| {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g)
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let r = targets.len();
                let c = probs.len() / r;
                let s = g[0] / r as f64;
                accumulate(grads, *logits, r * c, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                            d[i * c + j] += s * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Attention {
                qkv,
                tokens,
                heads,
                probs,
            } => {
                let (r, c3) = dims(self.shape(*qkv));
                let (n, nh) = (*tokens, *heads);
                let d = c3 / 3;
                let dh = d / nh;
                let scale = 1.0 / (dh as f64).sqrt();
                let v = self.value(*qkv);
                accumulate(grads, *qkv, r * c3, |dq| {
                    let mut dp = vec![0.0; n];
                    for b in 0..r / n {
                        for h in 0..nh {
                            let p = &probs[(b * nh + h) * n * n..][..n * n];
                            for i in 0..n {
                                let gi = &g[(b * n + i) * d + h * dh..][..dh];
                                let prow = &p[i * n..(i + 1) * n];
                                for j in 0..n {
                                    let vrow = (b * n + j) * c3 + 2 * d + h * dh;
                                    dp[j] = gi.iter().zip(&v[vrow..vrow + dh]).map(|(a, b)| a * b).sum();
                                    for k in 0..dh {
                                        dq[vrow + k] += prow[j] * gi[k];
                                    }
                                }
                                let dot: f64 = dp.iter().zip(prow).map(|(a, b)| a * b).sum();
                                let qrow = (b * n + i) * c3 + h * dh;
                                for j in 0..n {
                                    let ds = prow[j] * (dp[j] - dot) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    let krow = (b * n + j) * c3 + d + h * dh;
                                    for k in 0..dh {
                                        dq[qrow + k] += ds * v[krow + k];
                                        dq[krow + k] += ds * v[qrow + k];
                                    }
                                }
                            }
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(g: &mut Graph, shape: Vec<usize>, v: Vec<f64>) -> Var {
        g.leaf(shape, v, true).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let w = param(&mut g, vec![2], vec![1.0, 2.0]);
        let ww = g.mul(w, w).unwrap();
        let loss = g.sum(ww);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn stop_grad_blocks_one_factor() {
        let mut g = Graph::new();
        let w = param(&mut g, vec![1], vec![3.0]);
        let frozen = g.stop_grad(w);
        assert_eq!(g.value(frozen), g.value(w));
        let prod = g.mul(frozen, w).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[3.0]);
        assert!(grads.get(frozen).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let w = param(&mut g, vec![2], vec![1.0, 2.0]);
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors_name_the_operation() {
        let mut g = Graph::new();
        let a = param(&mut g, vec![2, 3], vec![0.0; 6]);
        let b = param(&mut g, vec![2, 3], vec![0.0; 6]);
        match g.matmul(a, b) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("expected shape error, got {other:?}"),
        }
        let c = param(&mut g, vec![3], vec![0.0; 3]);
        match g.add(a, c) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "add"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn straight_through_copies_gradient() {
        let mut g = Graph::new();
        let z = param(&mut g, vec![1, 3], vec![0.1, 0.2, 0.3]);
        let zb = g.straight_through(z, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(g.value(zb), &[1.0, 1.0, 1.0]);
        let loss = g.sum(zb);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(z).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_classes() {
        let mut g = Graph::new();
        let logits = param(&mut g, vec![1, 10], vec![0.0; 10]);
        let loss = g.cross_entropy(logits, &[3]).unwrap();
        assert!((g.scalar(loss) - 10f64.ln()).abs() < 1e-12);
        assert!(matches!(g.cross_entropy(logits, &[10]), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_confident_correct_is_zero() {
        let mut g = Graph::new();
        let mut v = vec![0.0; 10];
        v[0] = 1e9;
        let logits = param(&mut g, vec![1, 10], v);
        let loss = g.cross_entropy(logits, &[0]).unwrap();
        assert!(g.scalar(loss).abs() < 1e-12);
    }

    #[test]
    fn gelu_matches_tabulated_values() {
        // Reference values of 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
        let table = [
            (-3.0, -0.003_637_392_081_772_994_3),
            (-1.0, -0.158_808_009_391_723_24),
            (-0.5, -0.154_285_990_174_856_06),
            (0.0, 0.0),
            (0.5, 0.345_714_009_825_143_94),
            (1.0, 0.841_191_990_608_276_8),
            (2.0, 1.954_597_694_087_775),
        ];
        for (x, want) in table {
            assert!((gelu(x) - want).abs() < 1e-12, "gelu({x}) = {}", gelu(x));
        }
    }

    #[test]
    fn repeated_gather_accumulates() {
        let mut g = Graph::new();
        let src = param(&mut g, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let picked = g.gather_rows(src, &[1, 1, 0]).unwrap();
        assert_eq!(g.value(picked), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let loss = g.sum(picked);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(src).unwrap(), &[1.0, 1.0, 2.0, 2.0]);
    }

    /// The same attention spelled out with slices, transposes and softmax.
    fn attention_by_parts(g: &mut Graph, qkv: Var, tokens: usize, heads: usize) -> Var {
        let (r, c3) = dims(g.shape(qkv));
        let d = c3 / 3;
        let dh = d / heads;
        let mut rows = Vec::new();
        for b in 0..r / tokens {
            let mut cols = Vec::new();
            for h in 0..heads {
                let q = g.slice(qkv, b * tokens, tokens, h * dh, dh).unwrap();
                let k = g.slice(qkv, b * tokens, tokens, d + h * dh, dh).unwrap();
                let v = g.slice(qkv, b * tokens, tokens, 2 * d + h * dh, dh).unwrap();
                let kt = g.transpose(k).unwrap();
                let s = g.matmul(q, kt).unwrap();
                let s = g.scale(s, 1.0 / (dh as f64).sqrt());
                let p = g.softmax(s);
                cols.push(g.matmul(p, v).unwrap());
            }
            rows.push(g.concat(&cols, false).unwrap());
        }
        g.concat(&rows, true).unwrap()
    }

    #[test]
    fn fused_attention_matches_composition() {
        let (tokens, heads, d, batch) = (3, 2, 4, 2);
        let values: Vec<f64> = (0..batch * tokens * 3 * d)
            .map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0)
            .collect();
        let weights: Vec<f64> = (0..batch * tokens * d).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut g = Graph::new();
        let qkv = param(&mut g, vec![batch * tokens, 3 * d], values);
        let w = g.constant(vec![batch * tokens, d], weights).unwrap();
        let fused = g.attention(qkv, tokens, heads).unwrap();
        let parts = attention_by_parts(&mut g, qkv, tokens, heads);
        for (a, b) in g.value(fused).iter().zip(g.value(parts)) {
            assert!((a - b).abs() < 1e-12);
        }
        let lf = g.mul(fused, w).unwrap();
        let lf = g.sum(lf);
        let lp = g.mul(parts, w).unwrap();
        let lp = g.sum(lp);
        let gf = g.backward(lf).unwrap().get(qkv).unwrap().to_vec();
        let gp = g.backward(lp).unwrap().get(qkv).unwrap().to_vec();
        for (a, b) in gf.iter().zip(&gp) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_rejects_bad_grouping() {
        let mut g = Graph::new();
        let qkv = param(&mut g, vec![5, 12], vec![0.0; 60]);
        assert!(g.attention(qkv, 2, 2).is_err());
        assert!(g.attention(qkv, 5, 3).is_err());
    }
}
