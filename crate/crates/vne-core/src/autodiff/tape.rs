//! Tape-based reverse-mode differentiation. Forward values are computed
//! eagerly; the backward pass walks the tape in reverse, accumulating
//! gradients so shared subexpressions sum over every use site.

use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Detach,
    Matmul(TensorId, TensorId),
    Transpose(TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    MinElem(TensorId, TensorId),
    Neg(TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    AddBias(TensorId, TensorId),
    SubRow(TensorId, TensorId),
    DivRow(TensorId, TensorId),
    ConcatRows(Vec<TensorId>),
    StackScalars(Vec<TensorId>),
    GatherRows(TensorId, Vec<usize>),
    GatherCols(TensorId, Vec<usize>),
    SegmentSoftmax(TensorId, Vec<usize>),
    SegmentSum(TensorId, Vec<usize>),
    ScaleRows(TensorId, TensorId),
    LeakyRelu(TensorId, f64),
    Softplus(TensorId),
    Sqrt(TensorId),
    Log(TensorId),
    Exp(TensorId),
    Clamp(TensorId, f64, f64),
    Sum(TensorId),
    Mean(TensorId),
    SumAxis0(TensorId),
    MeanAxis0(TensorId),
    Mse(TensorId, TensorId),
    Reshape(TensorId),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// (tape id, parameter name) for leaves bound from a ParameterSet.
    bindings: Vec<(TensorId, String)>,
}

/// Gradients of one backward pass, indexed by tape id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        let t = self.value(id);
        debug_assert_eq!(t.numel(), 1);
        t.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> TensorId {
        self.nodes.push(Node { value, op });
        TensorId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> TensorId {
        self.push(t, Op::Input)
    }

    pub fn constant(&mut self, t: Tensor) -> TensorId {
        self.push(t, Op::Input)
    }

    pub fn scalar(&mut self, x: f64) -> TensorId {
        self.push(Tensor::scalar(x), Op::Input)
    }

    /// Leaf bound to a named parameter; gradients accumulate back into the
    /// parameter set via `grads_into`.
    pub fn param(&mut self, name: &str, value: Tensor) -> TensorId {
        let id = self.push(value, Op::Input);
        self.bindings.push((id, name.to_string()));
        id
    }

    /// Value copy whose backward contribution is dropped.
    pub fn detach(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).clone();
        self.push(v, Op::Detach)
    }

    fn same_shape(
        &self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
    ) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        let (av, bv) = (ta.data(), tb.data());
        for i in 0..m {
            for kk in 0..k {
                let aik = av[i * k + kk];
                if aik != 0.0 {
                    let brow = &bv[kk * n..(kk + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aik * brow[j];
                    }
                }
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out), Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, AutodiffError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(AutodiffError::BadInput {
                op: "transpose",
                detail: format!("rank-2 required, got {:?}", t.shape()),
            });
        }
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t.at(i, j);
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out), Op::Transpose(a)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn min_elem(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        self.same_shape("min_elem", a, b)?;
        let out = zip_map(self.value(a), self.value(b), f64::min);
        Ok(self.push(out, Op::MinElem(a, b)))
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let out = map(self.value(a), |x| -x);
        self.push(out, Op::Neg(a))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let out = map(self.value(a), |x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> TensorId {
        let out = map(self.value(a), |x| x + c);
        self.push(out, Op::AddConst(a))
    }

    /// [m, n] plus a length-n bias broadcast over rows.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if ta.rank() != 2 || tb.rank() != 1 || ta.cols() != tb.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = ta.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += tb.data()[j];
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out), Op::AddBias(a, bias)))
    }

    /// [m, n] minus a length-n row broadcast over rows.
    pub fn sub_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId, AutodiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if ta.rank() != 2 || tr.rank() != 1 || ta.cols() != tr.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "sub_row",
                lhs: ta.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = ta.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] -= tr.data()[j];
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out), Op::SubRow(a, row)))
    }

    /// [m, n] divided elementwise by a length-n row broadcast over rows.
    pub fn div_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId, AutodiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if ta.rank() != 2 || tr.rank() != 1 || ta.cols() != tr.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "div_row",
                lhs: ta.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = ta.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] /= tr.data()[j];
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out), Op::DivRow(a, row)))
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::BadInput {
                op: "concat_rows",
                detail: "no inputs".into(),
            });
        }
        let n = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.cols() != n {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.rows();
        }
        let mut out = Vec::with_capacity(rows * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::matrix(rows, n, out), Op::ConcatRows(parts.to_vec())))
    }

    /// Stacks scalar nodes into a length-n vector.
    pub fn stack_scalars(&mut self, parts: &[TensorId]) -> Result<TensorId, AutodiffError> {
        let mut out = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.numel() != 1 {
                return Err(AutodiffError::BadInput {
                    op: "stack_scalars",
                    detail: format!("non-scalar input of shape {:?}", t.shape()),
                });
            }
            out.push(t.data()[0]);
        }
        Ok(self.push(Tensor::vector(out), Op::StackScalars(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId, AutodiffError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(AutodiffError::BadInput {
                op: "gather_rows",
                detail: format!("rank-2 required, got {:?}", t.shape()),
            });
        }
        let (m, n) = (t.rows(), t.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(AutodiffError::BadInput {
                op: "gather_rows",
                detail: format!("row {bad} out of range (m={m})"),
            });
        }
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
        }
        Ok(self.push(Tensor::matrix(idx.len(), n, out), Op::GatherRows(a, idx.to_vec())))
    }

    pub fn gather_cols(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId, AutodiffError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(AutodiffError::BadInput {
                op: "gather_cols",
                detail: format!("rank-2 required, got {:?}", t.shape()),
            });
        }
        let (m, n) = (t.rows(), t.cols());
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(AutodiffError::BadInput {
                op: "gather_cols",
                detail: format!("col {bad} out of range (n={n})"),
            });
        }
        let mut out = Vec::with_capacity(m * idx.len());
        for i in 0..m {
            for &j in idx {
                out.push(t.at(i, j));
            }
        }
        Ok(self.push(Tensor::matrix(m, idx.len(), out), Op::GatherCols(a, idx.to_vec())))
    }

    /// Softmax over contiguous segments of a vector. `segments` must be
    /// sorted nondecreasing, one id per element.
    pub fn segment_softmax(
        &mut self,
        a: TensorId,
        segments: &[usize],
    ) -> Result<TensorId, AutodiffError> {
        let t = self.value(a);
        if t.rank() != 1 || t.numel() != segments.len() {
            return Err(AutodiffError::BadInput {
                op: "segment_softmax",
                detail: format!(
                    "vector of len {} vs {} segment ids",
                    t.numel(),
                    segments.len()
                ),
            });
        }
        if segments.windows(2).any(|w| w[0] > w[1]) {
            return Err(AutodiffError::BadInput {
                op: "segment_softmax",
                detail: "segment ids must be sorted".into(),
            });
        }
        let x = t.data();
        let mut out = vec![0.0; x.len()];
        let mut start = 0;
        while start < x.len() {
            let seg = segments[start];
            let mut end = start;
            while end < x.len() && segments[end] == seg {
                end += 1;
            }
            let max = x[start..end].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for i in start..end {
                out[i] = (x[i] - max).exp();
                denom += out[i];
            }
            for v in &mut out[start..end] {
                *v /= denom;
            }
            start = end;
        }
        Ok(self.push(Tensor::vector(out), Op::SegmentSoftmax(a, segments.to_vec())))
    }

    /// Sums rows of [len, n] into [n_segments, n] buckets. `segments` must be
    /// sorted nondecreasing with ids < n_segments; empty segments yield zero
    /// rows.
    pub fn segment_sum(
        &mut self,
        a: TensorId,
        segments: &[usize],
        n_segments: usize,
    ) -> Result<TensorId, AutodiffError> {
        let t = self.value(a);
        if t.rank() != 2 || t.rows() != segments.len() {
            return Err(AutodiffError::BadInput {
                op: "segment_sum",
                detail: format!("{} rows vs {} segment ids", t.rows(), segments.len()),
            });
        }
        if segments.windows(2).any(|w| w[0] > w[1]) {
            return Err(AutodiffError::BadInput {
                op: "segment_sum",
                detail: "segment ids must be sorted".into(),
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(AutodiffError::BadInput {
                op: "segment_sum",
                detail: format!("segment id {bad} >= n_segments {n_segments}"),
            });
        }
        let n = t.cols();
        let mut out = vec![0.0; n_segments * n];
        for (row, &seg) in segments.iter().enumerate() {
            for j in 0..n {
                out[seg * n + j] += t.at(row, j);
            }
        }
        Ok(self.push(
            Tensor::matrix(n_segments, n, out),
            Op::SegmentSum(a, segments.to_vec()),
        ))
    }

    /// Scales row i of [m, n] by weight w[i].
    pub fn scale_rows(&mut self, a: TensorId, w: TensorId) -> Result<TensorId, AutodiffError> {
        let (ta, tw) = (self.value(a), self.value(w));
        if ta.rank() != 2 || tw.rank() != 1 || ta.rows() != tw.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "scale_rows",
                lhs: ta.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = ta.data().to_vec();
        for i in 0..m {
            let wi = tw.data()[i];
            for j in 0..n {
                out[i * n + j] *= wi;
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out), Op::ScaleRows(a, w)))
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> TensorId {
        let out = map(self.value(a), |x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        let out = map(self.value(a), |x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(out, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        let out = map(self.value(a), f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let out = map(self.value(a), f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let out = map(self.value(a), f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: TensorId, lo: f64, hi: f64) -> TensorId {
        let out = map(self.value(a), |x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn sum_axis0(&mut self, a: TensorId) -> Result<TensorId, AutodiffError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(AutodiffError::BadInput {
                op: "sum_axis0",
                detail: format!("rank-2 required, got {:?}", t.shape()),
            });
        }
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += t.at(i, j);
            }
        }
        Ok(self.push(Tensor::vector(out), Op::SumAxis0(a)))
    }

    pub fn mean_axis0(&mut self, a: TensorId) -> Result<TensorId, AutodiffError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(AutodiffError::BadInput {
                op: "mean_axis0",
                detail: format!("rank-2 required, got {:?}", t.shape()),
            });
        }
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += t.at(i, j);
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        Ok(self.push(Tensor::vector(out), Op::MeanAxis0(a)))
    }

    /// Same buffer, new shape (element count must match).
    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId, AutodiffError> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape,
            });
        }
        let out = Tensor::new(shape, t.data().to_vec());
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn mse(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, AutodiffError> {
        self.same_shape("mse", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.numel() as f64;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b)))
    }

    /// Reverse pass from a scalar loss; returns per-node gradients.
    pub fn backward(&self, loss: TensorId) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward requires a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(
            self.value(loss).shape().to_vec(),
            vec![1.0],
        ));

        for idx in (0..self.nodes.len()).rev() {
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Input | Op::Detach => {}
                Op::Matmul(a, b) => {
                    let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    let gv = g.data();
                    for i in 0..m {
                        for j in 0..n {
                            let gij = gv[i * n + j];
                            if gij != 0.0 {
                                for kk in 0..k {
                                    da[i * k + kk] += gij * tb.at(kk, j);
                                    db[kk * n + j] += ta.at(i, kk) * gij;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, k, da));
                    accumulate(&mut grads, *b, Tensor::matrix(k, n, db));
                }
                Op::Transpose(a) => {
                    let t = self.value(*a);
                    let (m, n) = (t.rows(), t.cols());
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = g.at(j, i);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, n, da));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    let neg = Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| -x).collect());
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let da = zip_map(&g, self.value(*b), |gx, y| gx * y);
                    let db = zip_map(&g, self.value(*a), |gx, x| gx * x);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MinElem(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut da = vec![0.0; g.numel()];
                    let mut db = vec![0.0; g.numel()];
                    for i in 0..g.numel() {
                        if ta.data()[i] <= tb.data()[i] {
                            da[i] = g.data()[i];
                        } else {
                            db[i] = g.data()[i];
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(ta.shape().to_vec(), da));
                    accumulate(&mut grads, *b, Tensor::new(tb.shape().to_vec(), db));
                }
                Op::Neg(a) => {
                    let da = Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| -x).collect());
                    accumulate(&mut grads, *a, da);
                }
                Op::Scale(a, c) => {
                    let da =
                        Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| c * x).collect());
                    accumulate(&mut grads, *a, da);
                }
                Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::AddBias(a, bias) => {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for i in 0..g.rows() {
                        for j in 0..n {
                            db[j] += g.at(i, j);
                        }
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *bias, Tensor::vector(db));
                }
                Op::SubRow(a, row) => {
                    let n = g.cols();
                    let mut dr = vec![0.0; n];
                    for i in 0..g.rows() {
                        for j in 0..n {
                            dr[j] -= g.at(i, j);
                        }
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *row, Tensor::vector(dr));
                }
                Op::DivRow(a, row) => {
                    let (ta, tr) = (self.value(*a), self.value(*row));
                    let (m, n) = (ta.rows(), ta.cols());
                    let mut da = vec![0.0; m * n];
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            let rj = tr.data()[j];
                            da[i * n + j] = g.at(i, j) / rj;
                            dr[j] -= g.at(i, j) * ta.at(i, j) / (rj * rj);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, n, da));
                    accumulate(&mut grads, *row, Tensor::vector(dr));
                }
                Op::ConcatRows(parts) => {
                    let n = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let slice = g.data()[offset * n..(offset + rows) * n].to_vec();
                        accumulate(&mut grads, p, Tensor::matrix(rows, n, slice));
                        offset += rows;
                    }
                }
                Op::StackScalars(parts) => {
                    for (i, &p) in parts.iter().enumerate() {
                        let shape = self.value(p).shape().to_vec();
                        accumulate(&mut grads, p, Tensor::new(shape, vec![g.data()[i]]));
                    }
                }
                Op::GatherRows(a, idx) => {
                    let t = self.value(*a);
                    let (m, n) = (t.rows(), t.cols());
                    let mut da = vec![0.0; m * n];
                    for (out_row, &src_row) in idx.iter().enumerate() {
                        for j in 0..n {
                            da[src_row * n + j] += g.at(out_row, j);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, n, da));
                }
                Op::GatherCols(a, idx) => {
                    let t = self.value(*a);
                    let (m, n) = (t.rows(), t.cols());
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for (out_col, &src_col) in idx.iter().enumerate() {
                            da[i * n + src_col] += g.at(i, out_col);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, n, da));
                }
                Op::SegmentSoftmax(a, segments) => {
                    let y = &self.nodes[idx].value;
                    let mut da = vec![0.0; y.numel()];
                    let mut start = 0;
                    while start < y.numel() {
                        let seg = segments[start];
                        let mut end = start;
                        while end < y.numel() && segments[end] == seg {
                            end += 1;
                        }
                        let dot: f64 = (start..end)
                            .map(|i| g.data()[i] * y.data()[i])
                            .sum();
                        for i in start..end {
                            da[i] = y.data()[i] * (g.data()[i] - dot);
                        }
                        start = end;
                    }
                    accumulate(&mut grads, *a, Tensor::vector(da));
                }
                Op::SegmentSum(a, segments) => {
                    let t = self.value(*a);
                    let n = t.cols();
                    let mut da = vec![0.0; t.rows() * n];
                    for (row, &seg) in segments.iter().enumerate() {
                        for j in 0..n {
                            da[row * n + j] = g.at(seg, j);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(t.rows(), n, da));
                }
                Op::ScaleRows(a, w) => {
                    let (ta, tw) = (self.value(*a), self.value(*w));
                    let (m, n) = (ta.rows(), ta.cols());
                    let mut da = vec![0.0; m * n];
                    let mut dw = vec![0.0; m];
                    for i in 0..m {
                        let wi = tw.data()[i];
                        for j in 0..n {
                            da[i * n + j] = g.at(i, j) * wi;
                            dw[i] += g.at(i, j) * ta.at(i, j);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, n, da));
                    accumulate(&mut grads, *w, Tensor::vector(dw));
                }
                Op::LeakyRelu(a, slope) => {
                    let da = zip_map(&g, self.value(*a), |gx, x| {
                        if x > 0.0 {
                            gx
                        } else {
                            gx * slope
                        }
                    });
                    accumulate(&mut grads, *a, da);
                }
                Op::Softplus(a) => {
                    let da = zip_map(&g, self.value(*a), |gx, x| {
                        let sig = 1.0 / (1.0 + (-x).exp());
                        gx * sig
                    });
                    accumulate(&mut grads, *a, da);
                }
                Op::Sqrt(a) => {
                    let da = zip_map(&g, self.value(*a), |gx, x| gx * 0.5 / x.sqrt());
                    accumulate(&mut grads, *a, da);
                }
                Op::Log(a) => {
                    let da = zip_map(&g, self.value(*a), |gx, x| gx / x);
                    accumulate(&mut grads, *a, da);
                }
                Op::Exp(a) => {
                    let da = zip_map(&g, self.value(*a), |gx, x| gx * x.exp());
                    accumulate(&mut grads, *a, da);
                }
                Op::Clamp(a, lo, hi) => {
                    let da = zip_map(&g, self.value(*a), |gx, x| {
                        if x >= *lo && x <= *hi {
                            gx
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let t = self.value(*a);
                    let da = Tensor::new(t.shape().to_vec(), vec![g.data()[0]; t.numel()]);
                    accumulate(&mut grads, *a, da);
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    let v = g.data()[0] / t.numel() as f64;
                    let da = Tensor::new(t.shape().to_vec(), vec![v; t.numel()]);
                    accumulate(&mut grads, *a, da);
                }
                Op::SumAxis0(a) => {
                    let t = self.value(*a);
                    let (m, n) = (t.rows(), t.cols());
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = g.data()[j];
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, n, da));
                }
                Op::MeanAxis0(a) => {
                    let t = self.value(*a);
                    let (m, n) = (t.rows(), t.cols());
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = g.data()[j] / m as f64;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, n, da));
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::new(shape, g.data().to_vec()));
                }
                Op::Mse(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let scale = 2.0 * g.data()[0] / ta.numel() as f64;
                    let da: Vec<f64> = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(x, y)| scale * (x - y))
                        .collect();
                    let db: Vec<f64> = da.iter().map(|x| -x).collect();
                    accumulate(&mut grads, *a, Tensor::new(ta.shape().to_vec(), da));
                    accumulate(&mut grads, *b, Tensor::new(tb.shape().to_vec(), db));
                }
            }
        }
        Gradients { grads }
    }

    /// Accumulates the backward pass's parameter gradients into the set.
    pub fn grads_into(&self, grads: &Gradients, params: &mut super::ParameterSet) {
        for (id, name) in &self.bindings {
            if let Some(g) = grads.get(*id) {
                params.accumulate_grad(name, g);
            }
        }
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.numel(), b.numel());
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn accumulate(grads: &mut [Option<Tensor>], id: TensorId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
