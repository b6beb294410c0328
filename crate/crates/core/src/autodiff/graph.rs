use crate::autodiff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the batch's own statistics.
    Train { eps: T },
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [T], var: &'a [T], eps: T },
}

/// Per-channel statistics of one train-mode batch norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n - 1) variance, used for running estimates.
    pub var_unbiased: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1d { x: Var, w: Var, b: Option<Var> },
    MaxPool2 { x: Var, pick: Vec<u8> },
    Upsample2 { x: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Dice { p: Var, target: Vec<T>, smooth: T, inter: T, denom: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of a forward computation. Nodes are stored in
/// creation order, which is a topological order, so backward is a single
/// reverse sweep.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients from one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn mismatch(what: &str, a: [usize; 3], b: [usize; 3]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

/// Fills `col` (`cin*k` rows by `l` columns) with shifted copies of `x`
/// (`cin` rows by `l`), zero outside the signal.
fn im2col<T: Scalar>(x: &[T], cin: usize, l: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    for ci in 0..cin {
        let src = &x[ci * l..(ci + 1) * l];
        for kk in 0..k {
            let row = &mut col[(ci * k + kk) * l..(ci * k + kk + 1) * l];
            let off = kk as isize - pad;
            let lo = (-off).max(0) as usize;
            let hi = (l as isize - off).clamp(0, l as isize) as usize;
            if lo >= hi {
                row.fill(T::zero());
                continue;
            }
            row[..lo].fill(T::zero());
            row[hi..].fill(T::zero());
            let s0 = (lo as isize + off) as usize;
            row[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
        }
    }
}

/// Scatter-adds `col` back onto `dx`; adjoint of [`im2col`].
fn col2im_add<T: Scalar>(col: &[T], cin: usize, l: usize, k: usize, dx: &mut [T]) {
    let pad = (k / 2) as isize;
    for ci in 0..cin {
        let dst = &mut dx[ci * l..(ci + 1) * l];
        for kk in 0..k {
            let row = &col[(ci * k + kk) * l..(ci * k + kk + 1) * l];
            let off = kk as isize - pad;
            let lo = (-off).max(0) as usize;
            let hi = (l as isize - off).clamp(0, l as isize) as usize;
            for t in lo..hi {
                dst[(t as isize + off) as usize] += row[t];
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite forward value");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant leaf; no gradient is accumulated for it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Branch taken by every piecewise op in the graph: the sign of each
    /// ReLU input and the winner of each max-pool pair, in node order.
    /// Two graphs with equal patterns lie on the same smooth piece.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => bits.extend(self.value(*x).data().iter().map(|&v| v > T::zero())),
                Op::MaxPool2 { pick, .. } => bits.extend(pick.iter().map(|&p| p == 1)),
                _ => {}
            }
        }
        bits
    }

    /// Stride-1 cross-correlation with "same" zero padding.
    /// `x: (B, Cin, L)`, `w: (Cout, Cin, K)` with odd `K`, `b: (1, Cout, 1)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [bsz, cin, l] = self.value(x).shape();
        let [cout, cin_w, k] = self.value(w).shape();
        if cin != cin_w {
            return Err(mismatch("conv1d input channels", self.value(x).shape(), self.value(w).shape()));
        }
        if k % 2 == 0 {
            return Err(Error::ShapeMismatch(format!("conv1d kernel size must be odd, got {k}")));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [1, cout, 1] {
                return Err(mismatch("conv1d bias", self.value(b).shape(), [1, cout, 1]));
            }
        }
        let rows = cin * k;
        let mut out = Tensor::zeros([bsz, cout, l]);
        let mut col = vec![T::zero(); if k == 1 { 0 } else { rows * l }];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let od = out.data_mut();
            for bi in 0..bsz {
                let xb = &xv[bi * cin * l..(bi + 1) * cin * l];
                let src: &[T] = if k == 1 {
                    xb
                } else {
                    im2col(xb, cin, l, k, &mut col);
                    &col
                };
                let ob = &mut od[bi * cout * l..(bi + 1) * cout * l];
                T::gemm(cout, rows, l, wv, rows, 1, src, l, 1, T::zero(), ob, l, 1);
            }
        }
        if let Some(b) = b {
            let bias = self.value(b).data().to_vec();
            let od = out.data_mut();
            for bi in 0..bsz {
                for (o, &bv) in bias.iter().enumerate() {
                    let start = (bi * cout + o) * l;
                    od[start..start + l].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Conv1d { x, w, b }, needs))
    }

    /// Pairwise max along length; ties select the earlier index.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [bsz, c, l] = self.value(x).shape();
        if l % 2 != 0 {
            return Err(Error::IndivisibleLength(l, 2));
        }
        let half = l / 2;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(bsz * c * half);
        let mut pick = Vec::with_capacity(bsz * c * half);
        for pair in xv.chunks_exact(2) {
            if pair[0] >= pair[1] {
                out.push(pair[0]);
                pick.push(0);
            } else {
                out.push(pair[1]);
                pick.push(1);
            }
        }
        let t = Tensor::from_vec([bsz, c, half], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::MaxPool2 { x, pick }, needs))
    }

    /// Nearest-neighbour upsampling by two along length.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let [bsz, c, l] = self.value(x).shape();
        let mut out = Vec::with_capacity(bsz * c * l * 2);
        for &v in self.value(x).data() {
            out.push(v);
            out.push(v);
        }
        let t = Tensor::from_vec([bsz, c, 2 * l], out).expect("shape arithmetic");
        let needs = self.needs(x);
        self.push(t, Op::Upsample2 { x }, needs)
    }

    /// Channel-wise concatenation `[a; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ba, ca, la] = self.value(a).shape();
        let [bb, cb, lb] = self.value(b).shape();
        if ba != bb || la != lb {
            return Err(mismatch("concat", [ba, ca, la], [bb, cb, lb]));
        }
        let mut out = Vec::with_capacity(ba * (ca + cb) * la);
        for bi in 0..ba {
            out.extend_from_slice(self.value(a).item(bi));
            out.extend_from_slice(self.value(b).item(bi));
        }
        let t = Tensor::from_vec([ba, ca + cb, la], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Concat { a, b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(mismatch("add", sa, sb));
        }
        let out: Vec<T> = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::from_vec(sa, out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add { a, b }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let out: Vec<T> = src.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let t = Tensor::from_vec(src.shape(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(t, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let out: Vec<T> = src.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::from_vec(src.shape(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(t, Op::Sigmoid { x }, needs)
    }

    /// Per-channel normalization over batch and length, followed by the
    /// affine map `gamma * xhat + beta` (`gamma`, `beta`: `(1, C, 1)`).
    /// Train mode also returns the batch statistics.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let [bsz, c, l] = self.value(x).shape();
        for p in [gamma, beta] {
            if self.value(p).shape() != [1, c, 1] {
                return Err(mismatch("batchnorm affine", self.value(p).shape(), [1, c, 1]));
            }
        }
        let n = bsz * l;
        let xv = self.value(x).data();
        let (mean, inv_std, stats, batch_stats) = match mode {
            BatchNormMode::Train { eps } => {
                let nn = T::from_usize(n).expect("count");
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for bi in 0..bsz {
                        s += xv[(bi * c + ch) * l..(bi * c + ch + 1) * l].iter().copied().sum::<T>();
                    }
                    let m = s / nn;
                    let mut q = T::zero();
                    for bi in 0..bsz {
                        for &v in &xv[(bi * c + ch) * l..(bi * c + ch + 1) * l] {
                            let d = v - m;
                            q += d * d;
                        }
                    }
                    mean[ch] = m;
                    var[ch] = q / nn;
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let unbiased = if n > 1 {
                    let f = nn / T::from_usize(n - 1).expect("count");
                    var.iter().map(|&v| v * f).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats { mean: mean.clone(), var_unbiased: unbiased };
                (mean, inv_std, Some(stats), true)
            }
            BatchNormMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::ShapeMismatch(format!(
                        "batchnorm running stats have {} / {} channels, expected {c}",
                        mean.len(),
                        var.len()
                    )));
                }
                let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean.to_vec(), inv_std, None, false)
            }
        };
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..bsz {
            for ch in 0..c {
                let r = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                let (m, s, gg, bb) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
                for ((xh, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&xv[r]) {
                    *xh = (v - m) * s;
                    *o = gg * *xh + bb;
                }
            }
        }
        let t = Tensor::from_vec([bsz, c, l], out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let var = self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, needs);
        Ok((var, stats))
    }

    /// `1 - (2·Σ p·g + smooth) / (Σ p + Σ g + smooth)` over every element.
    pub fn dice_loss(&mut self, p: Var, target: &Tensor<T>, smooth: T) -> Result<Var> {
        let pv = self.value(p);
        if pv.shape() != target.shape() {
            return Err(mismatch("dice_loss", pv.shape(), target.shape()));
        }
        let mut inter = T::zero();
        let mut sp = T::zero();
        let mut sg = T::zero();
        for (&a, &b) in pv.data().iter().zip(target.data()) {
            inter += a * b;
            sp += a;
            sg += b;
        }
        let two = T::one() + T::one();
        let denom = sp + sg + smooth;
        let loss = T::one() - (two * inter + smooth) / denom;
        let needs = self.needs(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Dice { p, target: target.data().to_vec(), smooth, inter, denom },
            needs,
        ))
    }

    /// Backward sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        let seed = Tensor::full(self.value(out).shape(), T::one());
        self.backward_with(out, seed)
    }

    /// Backward sweep seeded with `d(loss)/d(out) = seed`.
    pub fn backward_with(&self, out: Var, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.value(out).shape(), "seed shape must match output");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed.into_vec());
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backward_node(node, &dy, &mut grads);
        }
        Gradients {
            grads: grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| {
                    let node = &self.nodes[i];
                    match (&node.op, g) {
                        (Op::Leaf, Some(g)) if node.needs_grad => {
                            Some(Tensor::from_vec(node.value.shape(), g).expect("grad shape"))
                        }
                        _ => None,
                    }
                })
                .collect(),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let [bsz, cin, l] = xv.shape();
                let [cout, _, k] = wv.shape();
                let rows = cin * k;
                let need_x = self.needs(*x);
                let need_w = self.needs(*w);
                let mut dw = vec![T::zero(); cout * rows];
                let mut dx = vec![T::zero(); if need_x { bsz * cin * l } else { 0 }];
                let mut col = vec![T::zero(); if k == 1 || !need_w { 0 } else { rows * l }];
                let mut dcol = vec![T::zero(); if need_x { rows * l } else { 0 }];
                for bi in 0..bsz {
                    let dyb = &dy[bi * cout * l..(bi + 1) * cout * l];
                    let xb = &xv.data()[bi * cin * l..(bi + 1) * cin * l];
                    if need_w {
                        let src: &[T] = if k == 1 {
                            xb
                        } else {
                            im2col(xb, cin, l, k, &mut col);
                            &col
                        };
                        // dW += dY · colᵀ
                        T::gemm(cout, l, rows, dyb, l, 1, src, 1, l, T::one(), &mut dw, rows, 1);
                    }
                    if need_x {
                        // dcol = Wᵀ · dY
                        T::gemm(rows, cout, l, wv.data(), 1, rows, dyb, l, 1, T::zero(), &mut dcol, l, 1);
                        let dxb = &mut dx[bi * cin * l..(bi + 1) * cin * l];
                        if k == 1 {
                            dxb.iter_mut().zip(&dcol).for_each(|(a, &v)| *a += v);
                        } else {
                            col2im_add(&dcol, cin, l, k, dxb);
                        }
                    }
                }
                if need_x {
                    self.accumulate(grads, *x, dx);
                }
                if need_w {
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); cout];
                    for bi in 0..bsz {
                        for (o, d) in db.iter_mut().enumerate() {
                            let s = (bi * cout + o) * l;
                            *d += dy[s..s + l].iter().copied().sum::<T>();
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MaxPool2 { x, pick } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (i, (&g, &p)) in dy.iter().zip(pick).enumerate() {
                    dx[2 * i + p as usize] = g;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Upsample2 { x } => {
                let dx: Vec<T> = dy.chunks_exact(2).map(|p| p[0] + p[1]).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { a, b } => {
                let [bsz, ca, l] = self.value(*a).shape();
                let cb = self.value(*b).channels();
                let plane = (ca + cb) * l;
                let mut da = Vec::with_capacity(bsz * ca * l);
                let mut db = Vec::with_capacity(bsz * cb * l);
                for bi in 0..bsz {
                    let item = &dy[bi * plane..(bi + 1) * plane];
                    da.extend_from_slice(&item[..ca * l]);
                    db.extend_from_slice(&item[ca * l..]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, dy.to_vec());
                self.accumulate(grads, *b, dy.to_vec());
            }
            Op::Relu { x } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let dx = node.value.data().iter().zip(dy).map(|(&y, &g)| g * y * (T::one() - y)).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let [bsz, c, l] = self.value(*x).shape();
                let g = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for bi in 0..bsz {
                    for ch in 0..c {
                        let r = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                        for (&d, &xh) in dy[r.clone()].iter().zip(&xhat[r]) {
                            dbeta[ch] += d;
                            dgamma[ch] += d * xh;
                        }
                    }
                }
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); dy.len()];
                    let nn = T::from_usize(bsz * l).expect("count");
                    for bi in 0..bsz {
                        for ch in 0..c {
                            let r = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                            let scale = g[ch] * inv_std[ch];
                            if *batch_stats {
                                let (sd, sdx) = (dbeta[ch], dgamma[ch]);
                                for ((o, &d), &xh) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xhat[r]) {
                                    *o = scale / nn * (nn * d - sd - xh * sdx);
                                }
                            } else {
                                for (o, &d) in dx[r.clone()].iter_mut().zip(&dy[r]) {
                                    *o = scale * d;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Dice { p, target, smooth, inter, denom } => {
                let two = T::one() + T::one();
                let numer = two * *inter + *smooth;
                let d2 = *denom * *denom;
                let scale = dy[0];
                let dp = target.iter().map(|&gt| -(two * gt * *denom - numer) / d2 * scale).collect();
                self.accumulate(grads, *p, dp);
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
