use rand::Rng;

use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// One recorded operation. Stores parent handles plus whatever the backward
/// pass needs that cannot be recovered from the forward values.
#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    VecMat { x: Var, m: Var },
    Add { a: Var, b: Var },
    AddRow { m: Var, v: Var },
    AddCol { m: Var, v: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, k: f64 },
    Sigmoid { x: Var },
    Tanh { x: Var },
    LogSumExp { x: Var },
    LogSumExpAxis0 { m: Var },
    Concat { parts: Vec<Var> },
    Row { m: Var, i: usize },
    Rows { m: Var, ids: Vec<usize> },
    SumRows { m: Var, ids: Vec<usize> },
    Gather1 { x: Var, ids: Vec<usize> },
    Gather2 { m: Var, coords: Vec<(usize, usize)> },
    Submatrix { m: Var, r0: usize, c0: usize },
    Dropout { x: Var, mask: Vec<f64> },
    Conv1dSame { x: Var, filters: Var, bias: Var, window: usize },
    MaxAxis0 { m: Var, argmax: Vec<usize> },
    SumAll { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation, in topological (recording) order.
///
/// A tape is built for a single step and dropped afterwards; [`Tape::backward`]
/// may run at most once per tape.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    param_vars: Vec<(ParamId, Var)>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_vars: Vec::new(),
            backward_done: false,
        }
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

    /// Gradient of the last `backward` loss w.r.t. `v`, if any flowed there.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value out of {op:?}");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Record an input value.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Record a constant (no gradient ever flows to it).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Bind a stored parameter onto this tape as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        debug_assert!(
            !self.param_vars.iter().any(|(pid, _)| *pid == id),
            "parameter bound twice on one tape"
        );
        let var = self.leaf(store.value(id).clone(), true);
        self.param_vars.push((id, var));
        var
    }

    /// Parameters bound via [`Tape::param`], in binding order.
    pub fn param_vars(&self) -> &[(ParamId, Var)] {
        &self.param_vars
    }

    /// Gradient for a bound parameter after `backward` (None if no flow).
    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor> {
        self.param_vars
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|&(_, v)| self.grad(v))
    }

    // ---- forward operations -------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ta.data()[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data()[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_vec(&[m, n], out)?,
            Op::MatMul { a, b },
            needs,
        ))
    }

    /// `[k] x [k,n] -> [n]`
    pub fn vecmat(&mut self, x: Var, m: Var) -> Result<Var> {
        let (tx, tm) = (self.value(x), self.value(m));
        if tx.shape().len() != 1 || tm.shape().len() != 2 || tx.numel() != tm.rows() {
            return Err(Error::shape(format!(
                "vecmat {:?} x {:?}",
                tx.shape(),
                tm.shape()
            )));
        }
        let (k, n) = (tm.rows(), tm.cols());
        let mut out = vec![0.0; n];
        for p in 0..k {
            let xv = tx.data()[p];
            if xv == 0.0 {
                continue;
            }
            let mrow = &tm.data()[p * n..(p + 1) * n];
            for j in 0..n {
                out[j] += xv * mrow[j];
            }
        }
        let needs = self.needs(x) || self.needs(m);
        Ok(self.push(Tensor::from_vec(&[n], out)?, Op::VecMat { x, m }, needs))
    }

    /// Elementwise sum of two equal-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "add {:?} + {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(&shape, data)?, Op::Add { a, b }, needs))
    }

    /// `[r,c] + [c]`, the vector added to every row (bias broadcast).
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.shape().len() != 2 || tv.shape().len() != 1 || tv.numel() != tm.cols() {
            return Err(Error::shape(format!(
                "add_row {:?} + {:?}",
                tm.shape(),
                tv.shape()
            )));
        }
        let (r, c) = (tm.rows(), tm.cols());
        let mut data = tm.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += tv.data()[j];
            }
        }
        let needs = self.needs(m) || self.needs(v);
        Ok(self.push(Tensor::from_vec(&[r, c], data)?, Op::AddRow { m, v }, needs))
    }

    /// `[r,c] + [r]`, the vector added to every column.
    pub fn add_col(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.shape().len() != 2 || tv.shape().len() != 1 || tv.numel() != tm.rows() {
            return Err(Error::shape(format!(
                "add_col {:?} + {:?}",
                tm.shape(),
                tv.shape()
            )));
        }
        let (r, c) = (tm.rows(), tm.cols());
        let mut data = tm.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += tv.data()[i];
            }
        }
        let needs = self.needs(m) || self.needs(v);
        Ok(self.push(Tensor::from_vec(&[r, c], data)?, Op::AddCol { m, v }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "sub {:?} - {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let shape = ta.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(&shape, data)?, Op::Sub { a, b }, needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "mul {:?} * {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(&shape, data)?, Op::Mul { a, b }, needs))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * k).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::from_vec(&shape, data).expect("same shape"),
            Op::Scale { x, k },
            needs,
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::from_vec(&shape, data).expect("same shape"),
            Op::Sigmoid { x },
            needs,
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.tanh()).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::from_vec(&shape, data).expect("same shape"),
            Op::Tanh { x },
            needs,
        )
    }

    /// Log-sum-exp over all elements, max-shifted for stability. Scalar out.
    pub fn log_sum_exp(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.numel() == 0 {
            return Err(Error::shape("log_sum_exp of empty tensor"));
        }
        let v = super::log_sum_exp_slice(tx.data());
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(v), Op::LogSumExp { x }, needs))
    }

    /// Column-wise log-sum-exp of a 2-D tensor: `[r,c] -> [c]`.
    pub fn log_sum_exp_axis0(&mut self, m: Var) -> Result<Var> {
        let tm = self.value(m);
        if tm.shape().len() != 2 {
            return Err(Error::shape(format!("log_sum_exp_axis0 {:?}", tm.shape())));
        }
        let (r, c) = (tm.rows(), tm.cols());
        let mut out = vec![0.0; c];
        let mut col = vec![0.0; r];
        for j in 0..c {
            for i in 0..r {
                col[i] = tm.at2(i, j);
            }
            out[j] = super::log_sum_exp_slice(&col);
        }
        let needs = self.needs(m);
        Ok(self.push(
            Tensor::from_vec(&[c], out)?,
            Op::LogSumExpAxis0 { m },
            needs,
        ))
    }

    /// Concatenate 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of zero tensors"));
        }
        let mut data = Vec::new();
        let mut needs = false;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(Error::shape(format!("concat of non-1-D {:?}", t.shape())));
            }
            data.extend_from_slice(t.data());
            needs |= self.needs(p);
        }
        let n = data.len();
        Ok(self.push(
            Tensor::from_vec(&[n], data)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Row `i` of a 2-D tensor as a 1-D tensor.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let tm = self.value(m);
        if tm.shape().len() != 2 || i >= tm.rows() {
            return Err(Error::shape(format!("row {i} of {:?}", tm.shape())));
        }
        let c = tm.cols();
        let data = tm.data()[i * c..(i + 1) * c].to_vec();
        let needs = self.needs(m);
        Ok(self.push(Tensor::from_vec(&[c], data)?, Op::Row { m, i }, needs))
    }

    /// Embedding lookup: selected rows of `[v,d]` stacked into `[k,d]`.
    /// Backward scatter-adds into the selected rows.
    pub fn rows(&mut self, m: Var, ids: &[usize]) -> Result<Var> {
        let tm = self.value(m);
        if tm.shape().len() != 2 {
            return Err(Error::shape(format!("rows of {:?}", tm.shape())));
        }
        if ids.is_empty() {
            return Err(Error::shape("rows with empty index list"));
        }
        let (r, c) = (tm.rows(), tm.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::shape(format!("row index {bad} out of range {r}")));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(&tm.data()[i * c..(i + 1) * c]);
        }
        let needs = self.needs(m);
        Ok(self.push(
            Tensor::from_vec(&[ids.len(), c], data)?,
            Op::Rows {
                m,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Sum of selected rows of `[v,d]` as a 1-D `[d]` (duplicates accumulate).
    pub fn sum_rows(&mut self, m: Var, ids: &[usize]) -> Result<Var> {
        let tm = self.value(m);
        if tm.shape().len() != 2 {
            return Err(Error::shape(format!("sum_rows of {:?}", tm.shape())));
        }
        let (r, c) = (tm.rows(), tm.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::shape(format!("row index {bad} out of range {r}")));
        }
        let mut out = vec![0.0; c];
        for &i in ids {
            for j in 0..c {
                out[j] += tm.data()[i * c + j];
            }
        }
        let needs = self.needs(m);
        Ok(self.push(
            Tensor::from_vec(&[c], out)?,
            Op::SumRows {
                m,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Pick entries of a 1-D tensor: `x[ids] -> [k]`.
    pub fn gather1(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 1 {
            return Err(Error::shape(format!("gather1 of {:?}", tx.shape())));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= tx.numel()) {
            return Err(Error::shape(format!("index {bad} out of range")));
        }
        let data: Vec<f64> = ids.iter().map(|&i| tx.data()[i]).collect();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_vec(&[ids.len()], data)?,
            Op::Gather1 {
                x,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Pick entries of a 2-D tensor at the given coordinates: `-> [k]`.
    pub fn gather2(&mut self, m: Var, coords: &[(usize, usize)]) -> Result<Var> {
        let tm = self.value(m);
        if tm.shape().len() != 2 {
            return Err(Error::shape(format!("gather2 of {:?}", tm.shape())));
        }
        let (r, c) = (tm.rows(), tm.cols());
        if let Some(&bad) = coords.iter().find(|&&(i, j)| i >= r || j >= c) {
            return Err(Error::shape(format!("coord {bad:?} out of {r}x{c}")));
        }
        let data: Vec<f64> = coords.iter().map(|&(i, j)| tm.at2(i, j)).collect();
        let needs = self.needs(m);
        Ok(self.push(
            Tensor::from_vec(&[coords.len()], data)?,
            Op::Gather2 {
                m,
                coords: coords.to_vec(),
            },
            needs,
        ))
    }

    /// Contiguous block `m[r0..r1, c0..c1]`.
    pub fn submatrix(&mut self, m: Var, r0: usize, r1: usize, c0: usize, c1: usize) -> Result<Var> {
        let tm = self.value(m);
        if tm.shape().len() != 2 || r1 > tm.rows() || c1 > tm.cols() || r0 >= r1 || c0 >= c1 {
            return Err(Error::shape(format!(
                "submatrix [{r0}..{r1}, {c0}..{c1}] of {:?}",
                tm.shape()
            )));
        }
        let c = tm.cols();
        let mut data = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for i in r0..r1 {
            data.extend_from_slice(&tm.data()[i * c + c0..i * c + c1]);
        }
        let needs = self.needs(m);
        Ok(self.push(
            Tensor::from_vec(&[r1 - r0, c1 - c0], data)?,
            Op::Submatrix { m, r0, c0 },
            needs,
        ))
    }

    /// Inverted dropout. In training mode each entry is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; in eval mode
    /// the input passes through unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::data(format!("dropout probability {p} not in [0,1)")));
        }
        if !training || p == 0.0 {
            // identity, but still a node so grads flow
            return self.scale(x, 1.0).pipe_ok();
        }
        let tx = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..tx.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = tx.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_vec(&shape, data)?,
            Op::Dropout { x, mask },
            needs,
        ))
    }

    /// Same-length 1-D convolution over `x: [len, d]` with zero padding of
    /// `window/2` columns each side. Filters are `[n_f, window*d]`, flattened
    /// window-major; bias is `[n_f]`. Output `[len, n_f]`.
    pub fn conv1d_same(&mut self, x: Var, filters: Var, bias: Var, window: usize) -> Result<Var> {
        let (tx, tf, tb) = (self.value(x), self.value(filters), self.value(bias));
        if tx.shape().len() != 2 || tf.shape().len() != 2 || tb.shape().len() != 1 {
            return Err(Error::shape("conv1d_same operand ranks"));
        }
        let (len, d) = (tx.rows(), tx.cols());
        let nf = tf.rows();
        if tf.cols() != window * d || tb.numel() != nf || window % 2 == 0 {
            return Err(Error::shape(format!(
                "conv1d_same filters {:?} bias {:?} window {window} d {d}",
                tf.shape(),
                tb.shape()
            )));
        }
        let half = window / 2;
        let mut out = vec![0.0; len * nf];
        for t in 0..len {
            for f in 0..nf {
                let mut acc = tb.data()[f];
                for w in 0..window {
                    let s = t as isize + w as isize - half as isize;
                    if s < 0 || s >= len as isize {
                        continue;
                    }
                    let s = s as usize;
                    for e in 0..d {
                        acc += tf.at2(f, w * d + e) * tx.at2(s, e);
                    }
                }
                out[t * nf + f] = acc;
            }
        }
        let needs = self.needs(x) || self.needs(filters) || self.needs(bias);
        Ok(self.push(
            Tensor::from_vec(&[len, nf], out)?,
            Op::Conv1dSame {
                x,
                filters,
                bias,
                window,
            },
            needs,
        ))
    }

    /// Column-wise maximum of a 2-D tensor (max over time). Ties resolve to
    /// the earliest row so the backward routing is deterministic.
    pub fn max_axis0(&mut self, m: Var) -> Result<Var> {
        let tm = self.value(m);
        if tm.shape().len() != 2 {
            return Err(Error::shape(format!("max_axis0 of {:?}", tm.shape())));
        }
        let (r, c) = (tm.rows(), tm.cols());
        let mut out = vec![f64::NEG_INFINITY; c];
        let mut argmax = vec![0usize; c];
        for j in 0..c {
            for i in 0..r {
                let v = tm.at2(i, j);
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let needs = self.needs(m);
        Ok(self.push(
            Tensor::from_vec(&[c], out)?,
            Op::MaxAxis0 { m, argmax },
            needs,
        ))
    }

    /// Sum of all elements. Scalar out.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(v), Op::SumAll { x }, needs)
    }

    // ---- reverse pass ---------------------------------------------------

    /// Populate gradients of `loss` w.r.t. every recorded leaf that requires
    /// them. Gradients accumulate additively across uses of a node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::data(
                "backward called twice on one tape without reset",
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for k in (0..=loss.0).rev() {
            if !self.nodes[k].needs_grad {
                continue;
            }
            let Some(dy) = self.grads[k].take() else {
                continue;
            };
            self.propagate(k, &dy);
            self.grads[k] = Some(dy);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, k: usize, dy: &Tensor) {
        // Reading forward values immutably while accumulating into the
        // separate grads vector.
        match &self.nodes[k].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, kk, n) = (ta.rows(), ta.cols(), tb.cols());
                let mut da = Tensor::zeros(&[m, kk]);
                let mut db = Tensor::zeros(&[kk, n]);
                for i in 0..m {
                    for p in 0..kk {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += dy.at2(i, j) * tb.at2(p, j);
                        }
                        da.set2(i, p, acc);
                    }
                }
                for p in 0..kk {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += ta.at2(i, p) * dy.at2(i, j);
                        }
                        db.set2(p, j, acc);
                    }
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::VecMat { x, m } => {
                let (x, m) = (*x, *m);
                let (tx, tm) = (self.value(x), self.value(m));
                let (k_, n) = (tm.rows(), tm.cols());
                let mut dx = Tensor::zeros(&[k_]);
                let mut dm = Tensor::zeros(&[k_, n]);
                for p in 0..k_ {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += tm.at2(p, j) * dy.data()[j];
                    }
                    dx.data_mut()[p] = acc;
                    let xv = tx.data()[p];
                    for j in 0..n {
                        dm.set2(p, j, xv * dy.data()[j]);
                    }
                }
                self.accumulate(x, dx);
                self.accumulate(m, dm);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, dy.clone());
                self.accumulate(b, dy.clone());
            }
            Op::AddRow { m, v } => {
                let (m, v) = (*m, *v);
                let c = self.value(v).numel();
                let r = dy.numel() / c;
                let mut dv = Tensor::zeros(&[c]);
                for i in 0..r {
                    for j in 0..c {
                        dv.data_mut()[j] += dy.at2(i, j);
                    }
                }
                self.accumulate(m, dy.clone());
                self.accumulate(v, dv);
            }
            Op::AddCol { m, v } => {
                let (m, v) = (*m, *v);
                let r = self.value(v).numel();
                let c = dy.numel() / r;
                let mut dv = Tensor::zeros(&[r]);
                for i in 0..r {
                    for j in 0..c {
                        dv.data_mut()[i] += dy.at2(i, j);
                    }
                }
                self.accumulate(m, dy.clone());
                self.accumulate(v, dv);
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                let mut db = dy.clone();
                for g in db.data_mut() {
                    *g = -*g;
                }
                self.accumulate(a, dy.clone());
                self.accumulate(b, db);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let shape = dy.shape().to_vec();
                let da: Vec<f64> = dy
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(g, bv)| g * bv)
                    .collect();
                let db: Vec<f64> = dy
                    .data()
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(g, av)| g * av)
                    .collect();
                self.accumulate(a, Tensor::from_vec(&shape, da).unwrap());
                self.accumulate(b, Tensor::from_vec(&shape, db).unwrap());
            }
            Op::Scale { x, k: c } => {
                let (x, c) = (*x, *c);
                let mut dx = dy.clone();
                for g in dx.data_mut() {
                    *g *= c;
                }
                self.accumulate(x, dx);
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let shape = dy.shape().to_vec();
                let s = self.nodes[k].value.data();
                let dx: Vec<f64> = dy
                    .data()
                    .iter()
                    .zip(s)
                    .map(|(g, sv)| g * sv * (1.0 - sv))
                    .collect();
                self.accumulate(x, Tensor::from_vec(&shape, dx).unwrap());
            }
            Op::Tanh { x } => {
                let x = *x;
                let shape = dy.shape().to_vec();
                let t = self.nodes[k].value.data();
                let dx: Vec<f64> = dy
                    .data()
                    .iter()
                    .zip(t)
                    .map(|(g, tv)| g * (1.0 - tv * tv))
                    .collect();
                self.accumulate(x, Tensor::from_vec(&shape, dx).unwrap());
            }
            Op::LogSumExp { x } => {
                let x = *x;
                let y = self.nodes[k].value.item();
                let g = dy.item();
                let tx = self.value(x);
                let shape = tx.shape().to_vec();
                let dx: Vec<f64> = tx.data().iter().map(|v| g * (v - y).exp()).collect();
                self.accumulate(x, Tensor::from_vec(&shape, dx).unwrap());
            }
            Op::LogSumExpAxis0 { m } => {
                let m = *m;
                let tm = self.value(m);
                let (r, c) = (tm.rows(), tm.cols());
                let y = self.nodes[k].value.data();
                let mut dm = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    for j in 0..c {
                        dm.set2(i, j, dy.data()[j] * (tm.at2(i, j) - y[j]).exp());
                    }
                }
                self.accumulate(m, dm);
            }
            Op::Concat { parts } => {
                let parts = parts.clone();
                let mut off = 0;
                for p in parts {
                    let n = self.value(p).numel();
                    let dx = Tensor::from_vec(&[n], dy.data()[off..off + n].to_vec()).unwrap();
                    off += n;
                    self.accumulate(p, dx);
                }
            }
            Op::Row { m, i } => {
                let (m, i) = (*m, *i);
                let tm = self.value(m);
                let (r, c) = (tm.rows(), tm.cols());
                let mut dm = Tensor::zeros(&[r, c]);
                for j in 0..c {
                    dm.set2(i, j, dy.data()[j]);
                }
                self.accumulate(m, dm);
            }
            Op::Rows { m, ids } => {
                let m = *m;
                let ids = ids.clone();
                let tm = self.value(m);
                let (r, c) = (tm.rows(), tm.cols());
                let mut dm = Tensor::zeros(&[r, c]);
                for (kk, &i) in ids.iter().enumerate() {
                    for j in 0..c {
                        *dm.data_mut().get_mut(i * c + j).unwrap() += dy.at2(kk, j);
                    }
                }
                self.accumulate(m, dm);
            }
            Op::SumRows { m, ids } => {
                let m = *m;
                let ids = ids.clone();
                let tm = self.value(m);
                let (r, c) = (tm.rows(), tm.cols());
                let mut dm = Tensor::zeros(&[r, c]);
                for &i in &ids {
                    for j in 0..c {
                        dm.data_mut()[i * c + j] += dy.data()[j];
                    }
                }
                self.accumulate(m, dm);
            }
            Op::Gather1 { x, ids } => {
                let x = *x;
                let ids = ids.clone();
                let n = self.value(x).numel();
                let mut dx = Tensor::zeros(&[n]);
                for (kk, &i) in ids.iter().enumerate() {
                    dx.data_mut()[i] += dy.data()[kk];
                }
                self.accumulate(x, dx);
            }
            Op::Gather2 { m, coords } => {
                let m = *m;
                let coords = coords.clone();
                let tm = self.value(m);
                let (r, c) = (tm.rows(), tm.cols());
                let mut dm = Tensor::zeros(&[r, c]);
                for (kk, &(i, j)) in coords.iter().enumerate() {
                    dm.data_mut()[i * c + j] += dy.data()[kk];
                }
                self.accumulate(m, dm);
            }
            Op::Submatrix { m, r0, c0 } => {
                let (m, r0, c0) = (*m, *r0, *c0);
                let tm = self.value(m);
                let (r, c) = (tm.rows(), tm.cols());
                let (sr, sc) = (self.nodes[k].value.rows(), self.nodes[k].value.cols());
                let mut dm = Tensor::zeros(&[r, c]);
                for i in 0..sr {
                    for j in 0..sc {
                        dm.set2(r0 + i, c0 + j, dy.at2(i, j));
                    }
                }
                self.accumulate(m, dm);
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                let shape = dy.shape().to_vec();
                let dx: Vec<f64> = dy.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(x, Tensor::from_vec(&shape, dx).unwrap());
            }
            Op::Conv1dSame {
                x,
                filters,
                bias,
                window,
            } => {
                let (x, filters, bias, window) = (*x, *filters, *bias, *window);
                let (tx, tf) = (self.value(x), self.value(filters));
                let (len, d) = (tx.rows(), tx.cols());
                let nf = tf.rows();
                let half = window / 2;
                let mut dx = Tensor::zeros(&[len, d]);
                let mut df = Tensor::zeros(&[nf, window * d]);
                let mut db = Tensor::zeros(&[nf]);
                for t in 0..len {
                    for f in 0..nf {
                        let g = dy.at2(t, f);
                        if g == 0.0 {
                            continue;
                        }
                        db.data_mut()[f] += g;
                        for w in 0..window {
                            let s = t as isize + w as isize - half as isize;
                            if s < 0 || s >= len as isize {
                                continue;
                            }
                            let s = s as usize;
                            for e in 0..d {
                                df.data_mut()[f * window * d + w * d + e] += g * tx.at2(s, e);
                                dx.data_mut()[s * d + e] += g * tf.at2(f, w * d + e);
                            }
                        }
                    }
                }
                self.accumulate(x, dx);
                self.accumulate(filters, df);
                self.accumulate(bias, db);
            }
            Op::MaxAxis0 { m, argmax } => {
                let m = *m;
                let argmax = argmax.clone();
                let tm = self.value(m);
                let (r, c) = (tm.rows(), tm.cols());
                let mut dm = Tensor::zeros(&[r, c]);
                for (j, &i) in argmax.iter().enumerate() {
                    dm.set2(i, j, dy.data()[j]);
                }
                self.accumulate(m, dm);
            }
            Op::SumAll { x } => {
                let x = *x;
                let g = dy.item();
                let tx = self.value(x);
                let shape = tx.shape().to_vec();
                let dx = Tensor::from_vec(&shape, vec![g; tx.numel()]).unwrap();
                self.accumulate(x, dx);
            }
        }
    }
}

// Small helper so the eval-mode dropout early return reads cleanly.
trait PipeOk: Sized {
    fn pipe_ok(self) -> Result<Var>;
}

impl PipeOk for Var {
    fn pipe_ok(self) -> Result<Var> {
        Ok(self)
    }
}
