use super::{shape_err, AutodiffError, ParamId, ParamStore, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Unary(Var, Unary),
    Map(Var, fn(f64) -> f64),
    Sum(Var),
    Mean(Var),
    MeanLastAxis(Var),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Conv1d { x: Var, w: Var, b: Option<Var>, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    SoftmaxCe { logits: Var, probs: Vec<f64>, labels: Vec<usize>, weights: Vec<f64>, wsum: f64 },
    BceLogits { logits: Var, targets: Vec<f64>, weights: Vec<f64>, wsum: f64 },
    GaussianSample { mu: Var, logvar: Var, eps: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// Per-channel batch statistics (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, batch: &BnStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// Gradients of every tape node from one backward pass.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }
}

/// Append-only record of a forward computation. Nodes are stored in
/// creation order, which is a topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `c = a * b` with explicit strides; `a` is `m x k`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index addressed through the strides lies inside the
    // slices, which the callers size from the same m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Splits a shape around `axis` into (outer, dim, inner) extents.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op, param: None });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no parameter gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A leaf holding a copy of a parameter; backward accumulates into it.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.get(id).value.clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, node: Op) -> Result<Var, AutodiffError> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(t, node))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let t = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect()).unwrap();
        self.push(t, Op::Scale(a, c))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (n, 1), 0.0, &mut out);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// Adds a `[n]` bias along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        let n = *sx.last().unwrap();
        if sb != [n] {
            return Err(shape_err("add_bias", format!("{sx:?} + {sb:?}")));
        }
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(a, c)| a + c))
            .collect();
        let t = Tensor::new(sx.to_vec(), data)?;
        Ok(self.push(t, Op::AddBias(x, b)))
    }

    fn unary(&mut self, a: Var, u: Unary) -> Var {
        let f: fn(f64) -> f64 = match u {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Relu => |x| x.max(0.0),
            Unary::Softplus => softplus,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
        };
        let t = self.value(a);
        let t = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).unwrap();
        self.push(t, Op::Unary(a, u))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    /// Derivative at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    /// Elementwise `f` with caller-supplied derivative `df`, evaluated at
    /// the input.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let t = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).unwrap();
        self.push(t, Op::Map(a, df))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Mean over the last axis, which is removed. A 1-d input gives shape `[1]`.
    pub fn mean_last_axis(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let shape = t.shape();
        let n = *shape.last().unwrap();
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let data = t.data().chunks(n).map(|c| c.iter().sum::<f64>() / n as f64).collect();
        let t = Tensor::new(out_shape, data).unwrap();
        self.push(t, Op::MeanLastAxis(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = self.shape(*parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = around(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let d = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * d..(o + 1) * d]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec(), axis)))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(shape_err("slice", format!("{start}..{end} on axis {axis} of {shape:?}")));
        }
        let (outer, dim, inner) = around(&shape, axis);
        let len = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Slice { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Stride-1 convolution of `x [N, Cin, L]` with `w [Cout, Cin, K]` and
    /// optional bias `b [Cout]`, zero padded so the output length is `L`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let sb = b.map(|b| self.shape(b).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || sb.as_ref().is_some_and(|sb| sb[..] != [sw[0]]) {
            return Err(shape_err("conv1d", format!("x {sx:?}, w {sw:?}, b {sb:?}")));
        }
        let (n, cin, l) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let pad = (k - 1) / 2;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * cout * l];
        let mut cols = vec![0.0; cin * k * l];
        for i in 0..n {
            im2col(&xd[i * cin * l..(i + 1) * cin * l], cin, l, k, pad, &mut cols);
            let y = &mut out[i * cout * l..(i + 1) * cout * l];
            for (o, row) in y.chunks_mut(l).enumerate() {
                row.fill(bd.map_or(0.0, |bd| bd[o]));
            }
            gemm(cout, cin * k, l, wd, (cin * k, 1), &cols, (l, 1), 1.0, y);
        }
        Ok(self.push(Tensor::new(vec![n, cout, l], out)?, Op::Conv1d { x, w, b, pad }))
    }

    fn bn_layout(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize), AutodiffError> {
        let sx = self.shape(x);
        let (n, c, l) = match *sx {
            [n, c] => (n, c, 1),
            [n, c, l] => (n, c, l),
            _ => return Err(shape_err("batchnorm", format!("input {sx:?}"))),
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batchnorm", format!("{c} channels, gamma {:?}", self.shape(gamma))));
        }
        Ok((n, c, l))
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, stats: &BnStats, train: bool) -> Result<Var, AutodiffError> {
        let (n, c, l) = self.bn_layout(x, gamma, beta)?;
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xd = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * l;
                for j in base..base + l {
                    xhat[j] = (xd[j] - stats.mean[ch]) * inv_std[ch];
                    out[j] = g[ch] * xhat[j] + bt[ch];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train },
        ))
    }

    /// Batch normalization over `[N, C]` or `[N, C, L]` using the batch's own
    /// per-channel statistics, which are returned for running averages.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BnStats), AutodiffError> {
        let (n, c, l) = self.bn_layout(x, gamma, beta)?;
        let xd = self.value(x).data();
        let m = (n * l) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..n {
            for (ch, acc) in mean.iter_mut().enumerate() {
                let base = (i * c + ch) * l;
                *acc += xd[base..base + l].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * l;
                var[ch] += xd[base..base + l].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let stats = BnStats { mean, var };
        let out = self.bn_apply(x, gamma, beta, &stats, true)?;
        Ok((out, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batchnorm_eval(&mut self, x: Var, gamma: Var, beta: Var, stats: &BnStats) -> Result<Var, AutodiffError> {
        self.bn_apply(x, gamma, beta, stats, false)
    }

    /// Weighted mean cross-entropy of softmax(`logits [N, C]`):
    /// `sum_i w_i * ce_i / sum_i w_i`.
    pub fn softmax_ce(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var, AutodiffError> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() || s[0] != weights.len() {
            return Err(shape_err("softmax_ce", format!("logits {s:?}, {} labels", labels.len())));
        }
        let c = s[1];
        if let Some(&label) = labels.iter().find(|&&y| y >= c) {
            return Err(AutodiffError::BadLabel { label, classes: c });
        }
        let wsum: f64 = weights.iter().sum();
        if !(wsum > 0.0) {
            return Err(AutodiffError::BadArgument("weights must have a positive sum".into()));
        }
        let mut probs = Vec::with_capacity(s[0] * c);
        let mut loss = 0.0;
        for ((row, &y), &w) in self.value(logits).data().chunks(c).zip(labels).zip(weights) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += w * (lse - row[y]);
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let op = Op::SoftmaxCe {
            logits,
            probs,
            labels: labels.to_vec(),
            weights: weights.to_vec(),
            wsum,
        };
        Ok(self.push(Tensor::scalar(loss / wsum), op))
    }

    /// Weighted mean binary cross-entropy of `sigmoid(logits)` against
    /// `targets`, for logits of any shape (flattened).
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], weights: &[f64]) -> Result<Var, AutodiffError> {
        let z = self.value(logits).data();
        if z.len() != targets.len() || z.len() != weights.len() {
            return Err(shape_err("bce_with_logits", format!("{} logits, {} targets", z.len(), targets.len())));
        }
        let wsum: f64 = weights.iter().sum();
        if !(wsum > 0.0) {
            return Err(AutodiffError::BadArgument("weights must have a positive sum".into()));
        }
        let loss: f64 = z
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &y), &w)| w * (softplus(z) - y * z))
            .sum();
        let op = Op::BceLogits {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            wsum,
        };
        Ok(self.push(Tensor::scalar(loss / wsum), op))
    }

    /// Reparameterized draw `mu + exp(logvar / 2) * eps`; `eps` is a constant.
    pub fn gaussian_sample(&mut self, mu: Var, logvar: Var, eps: &Tensor) -> Result<Var, AutodiffError> {
        self.same_shape("gaussian_sample", mu, logvar)?;
        if eps.shape() != self.shape(mu) {
            return Err(shape_err("gaussian_sample", format!("eps {:?} vs {:?}", eps.shape(), self.shape(mu))));
        }
        let (m, lv) = (self.value(mu).data(), self.value(logvar).data());
        let data = m
            .iter()
            .zip(lv)
            .zip(eps.data())
            .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
            .collect();
        let t = Tensor::new(self.shape(mu).to_vec(), data)?;
        Ok(self.push(t, Op::GaussianSample { mu, logvar, eps: eps.data().to_vec() }))
    }

    /// Reverse pass from a one-element `out`. Parameter leaves add their
    /// gradients into `store`.
    pub fn backward(&self, out: Var, store: &mut ParamStore) -> Result<Gradients, AutodiffError> {
        let grads = self.gradients(out)?;
        for (node, g) in self.nodes.iter().zip(&grads.0) {
            if let (Some(id), Some(g)) = (node.param, g) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(grads)
    }

    /// Reverse pass without touching any parameter store.
    pub fn gradients(&self, out: Var) -> Result<Gradients, AutodiffError> {
        let ov = self.value(out);
        if ov.numel() != 1 {
            return Err(AutodiffError::NonScalarOutput(ov.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::filled(ov.shape(), 1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients(grads))
    }

    fn backprop(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            f(slot.data_mut());
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += g));
                acc(*b, &mut |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += g));
                acc(*b, &mut |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += gd[j] * bv[j];
                    }
                });
                acc(*b, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += gd[j] * av[j];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += g * c)),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // dA = G B^T, dB = A^T G
                acc(*a, &mut |d| gemm(m, n, k, gd, (n, 1), bv, (1, n), 1.0, d));
                acc(*b, &mut |d| gemm(k, m, n, av, (1, k), gd, (n, 1), 1.0, d));
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += g));
                let n = self.shape(*b)[0];
                acc(*b, &mut |d| {
                    for row in gd.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(x, g)| *x += g);
                    }
                });
            }
            Op::Unary(a, u) => {
                let (xv, yv) = (self.value(*a).data(), node.value.data());
                let u = *u;
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        let (x, y) = (xv[j], yv[j]);
                        let dy = match u {
                            Unary::Sigmoid => y * (1.0 - y),
                            Unary::Tanh => 1.0 - y * y,
                            Unary::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Softplus => sigmoid(x),
                            Unary::Exp => y,
                            Unary::Log => 1.0 / x,
                        };
                        d[j] += gd[j] * dy;
                    }
                });
            }
            Op::Map(a, df) => {
                let xv = self.value(*a).data();
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += gd[j] * df(xv[j]);
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += gd[0])),
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += gd[0] / n));
            }
            Op::MeanLastAxis(a) => {
                let n = *self.shape(*a).last().unwrap();
                acc(*a, &mut |d| {
                    for (chunk, g) in d.chunks_mut(n).zip(gd) {
                        chunk.iter_mut().for_each(|x| *x += g / n as f64);
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = around(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let dim = self.shape(p)[*axis];
                    acc(p, &mut |d| {
                        for o in 0..outer {
                            let src = &gd[(o * total + offset) * inner..(o * total + offset + dim) * inner];
                            let dst = &mut d[o * dim * inner..(o + 1) * dim * inner];
                            dst.iter_mut().zip(src).for_each(|(x, g)| *x += g);
                        }
                    });
                    offset += dim;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = around(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        let dst = &mut d[(o * dim + start) * inner..(o * dim + start + len) * inner];
                        let src = &gd[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(x, g)| *x += g);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += g)),
            Op::Conv1d { x, w, b, pad } => {
                let sx = self.shape(*x);
                let sw = self.shape(*w);
                let (n, cin, l) = (sx[0], sx[1], sx[2]);
                let (cout, k) = (sw[0], sw[2]);
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let mut cols = vec![0.0; cin * k * l];
                let mut dcols = vec![0.0; cin * k * l];
                let mut dw = vec![0.0; cout * cin * k];
                let mut dx = vec![0.0; n * cin * l];
                for i in 0..n {
                    let gy = &gd[i * cout * l..(i + 1) * cout * l];
                    im2col(&xd[i * cin * l..(i + 1) * cin * l], cin, l, k, *pad, &mut cols);
                    // dW += gY cols^T
                    gemm(cout, l, cin * k, gy, (l, 1), &cols, (1, l), 1.0, &mut dw);
                    // dcols = W^T gY
                    gemm(cin * k, cout, l, wd, (1, cin * k), gy, (l, 1), 0.0, &mut dcols);
                    col2im(&dcols, cin, l, k, *pad, &mut dx[i * cin * l..(i + 1) * cin * l]);
                }
                acc(*x, &mut |d| d.iter_mut().zip(&dx).for_each(|(a, g)| *a += g));
                acc(*w, &mut |d| d.iter_mut().zip(&dw).for_each(|(a, g)| *a += g));
                let Some(b) = b else { return };
                acc(*b, &mut |d| {
                    for i in 0..n {
                        for (o, db) in d.iter_mut().enumerate() {
                            let base = (i * cout + o) * l;
                            *db += gd[base..base + l].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let s = self.shape(*x);
                let (n, c, l) = (s[0], s[1], if s.len() == 3 { s[2] } else { 1 });
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * l;
                        for j in base..base + l {
                            dgamma[ch] += gd[j] * xhat[j];
                            dbeta[ch] += gd[j];
                        }
                    }
                }
                let m = (n * l) as f64;
                acc(*x, &mut |d| {
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * l;
                            for j in base..base + l {
                                d[j] += if *train {
                                    // sum of dxhat is gamma * dbeta, sum of dxhat * xhat is gamma * dgamma
                                    gv[ch] * inv_std[ch] / m * (m * gd[j] - dbeta[ch] - xhat[j] * dgamma[ch])
                                } else {
                                    gd[j] * gv[ch] * inv_std[ch]
                                };
                            }
                        }
                    }
                });
                acc(*gamma, &mut |d| d.iter_mut().zip(&dgamma).for_each(|(a, g)| *a += g));
                acc(*beta, &mut |d| d.iter_mut().zip(&dbeta).for_each(|(a, g)| *a += g));
            }
            Op::SoftmaxCe { logits, probs, labels, weights, wsum } => {
                let c = self.shape(*logits)[1];
                acc(*logits, &mut |d| {
                    for (r, (&y, &w)) in labels.iter().zip(weights).enumerate() {
                        let f = gd[0] * w / wsum;
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            d[r * c + j] += f * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
            Op::BceLogits { logits, targets, weights, wsum } => {
                let z = self.value(*logits).data();
                acc(*logits, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += gd[0] * weights[j] / wsum * (sigmoid(z[j]) - targets[j]);
                    }
                });
            }
            Op::GaussianSample { mu, logvar, eps } => {
                let lv = self.value(*logvar).data();
                acc(*mu, &mut |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += g));
                acc(*logvar, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += gd[j] * 0.5 * (0.5 * lv[j]).exp() * eps[j];
                    }
                });
            }
        }
    }
}

/// `cols[(c * k + t) * l + p] = x[c, p + t - pad]`, zero outside.
fn im2col(x: &[f64], cin: usize, l: usize, k: usize, pad: usize, cols: &mut [f64]) {
    for c in 0..cin {
        for t in 0..k {
            let row = &mut cols[(c * k + t) * l..(c * k + t + 1) * l];
            for (p, v) in row.iter_mut().enumerate() {
                let src = p + t;
                *v = if src >= pad && src - pad < l { x[c * l + src - pad] } else { 0.0 };
            }
        }
    }
}

fn col2im(cols: &[f64], cin: usize, l: usize, k: usize, pad: usize, dx: &mut [f64]) {
    for c in 0..cin {
        for t in 0..k {
            let row = &cols[(c * k + t) * l..(c * k + t + 1) * l];
            for (p, v) in row.iter().enumerate() {
                let src = p + t;
                if src >= pad && src - pad < l {
                    dx[c * l + src - pad] += v;
                }
            }
        }
    }
}
