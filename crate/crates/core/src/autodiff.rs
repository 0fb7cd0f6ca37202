//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass as an append-only
//! node list; node ids are strictly increasing, so an operation's inputs
//! always precede it. [`Tape::backward`] seeds the scalar loss with 1 and
//! walks the nodes in reverse, accumulating gradients additively into a
//! zero-initialized buffer per node (fan-out is handled by summation).
//!
//! The op set is exactly what the forecasting network needs; there is no
//! broadcasting beyond the few dedicated ops below.

use crate::error::{Error, Result};
use crate::spectral;
use crate::tensor::{matmul_raw, NodeId, Tensor};

#[derive(Debug)]
enum Op {
    Leaf,
    /// `a[m,k] * b[k,n]`
    MatMul { a: NodeId, b: NodeId },
    /// `a[p,n] * x[c,n,k]` per leading slice of `x`.
    MatMulBatched { a: NodeId, x: NodeId },
    Transpose { a: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Hadamard { a: NodeId, b: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    Scale { a: NodeId, factor: f64 },
    /// Add a length-`d` bias to every row of an `m x d` matrix.
    AddBiasRows { matrix: NodeId, bias: NodeId },
    /// `[m,c1] ++ [m,c2] -> [m,c1+c2]` along columns.
    ConcatCols { a: NodeId, b: NodeId },
    SoftmaxRows { a: NodeId },
    /// Row sums of a matrix, as a column vector.
    RowSums { a: NodeId },
    /// `x^(-1/2)` for positive entries, 0 otherwise (zero-degree rows).
    DegInvSqrt { a: NodeId },
    /// Eigenvector matrix of a symmetric input; `values` is the paired spectrum.
    EighVectors { l: NodeId, values: Tensor },
    /// Eigenvalues of a symmetric input; `vectors` is the paired basis.
    EighValues { l: NodeId, vectors: Tensor },
    /// Same-length 1-D cross-correlation, channels-first, odd kernel width.
    Conv1d { x: NodeId, kernels: NodeId, bias: NodeId },
    /// Per-eigenindex spectral filter with channel mixing:
    /// `y[j,n,k] = sum_i theta[i,j,n] * x[i,n,k]`.
    GraphFilter { theta: NodeId, x: NodeId },
    /// Lift a matrix into `c` channels: `y[c,n,k] = w[c]*x[n,k] + b[c]`.
    ChannelLift { weight: NodeId, bias: NodeId, x: NodeId },
    Reshape { a: NodeId },
    SumAll { a: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by one backward pass, indexed by node id.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn by_id(&self, id: NodeId) -> &Tensor {
        &self.grads[id]
    }

    /// Gradient with respect to a taped tensor.
    pub fn wrt(&self, t: &Tensor) -> Result<&Tensor> {
        let id = t
            .node_id()
            .ok_or_else(|| Error::Config("tensor is not linked to this tape".into()))?;
        Ok(&self.grads[id])
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, mut value: Tensor) -> Tensor {
        let id = self.nodes.len();
        value.set_node_id(id);
        self.nodes.push(Node { op, value: value.clone() });
        value
    }

    fn id_of(&self, t: &Tensor) -> Result<NodeId> {
        match t.node_id() {
            Some(id) if id < self.nodes.len() => Ok(id),
            _ => Err(Error::Config("operand is not recorded on this tape".into())),
        }
    }

    /// Record an input value (parameter, constant or data) as a leaf.
    pub fn leaf(&mut self, t: Tensor) -> Tensor {
        self.push(Op::Leaf, t.detached())
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.id_of(a)?, self.id_of(b)?);
        let value = matmul_raw(a, b)?;
        Ok(self.push(Op::MatMul { a: ia, b: ib }, value))
    }

    /// Multiply every leading slice of `x[c,n,k]` by the shared matrix `a[p,n]`.
    pub fn matmul_batched(&mut self, a: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (ia, ix) = (self.id_of(a)?, self.id_of(x)?);
        let (p, n) = a.dims2()?;
        let (c, n2, k) = x.dims3()?;
        if n != n2 {
            return Err(Error::dim(format!(
                "batched matmul: {:?} against slices of {:?}",
                a.shape(),
                x.shape()
            )));
        }
        let mut out = Tensor::zeros(&[c, p, k]);
        {
            let od = out.data_mut();
            let ad = a.data();
            let xd = x.data();
            for ch in 0..c {
                for i in 0..p {
                    let orow = &mut od[(ch * p + i) * k..(ch * p + i + 1) * k];
                    for t in 0..n {
                        let w = ad[i * n + t];
                        if w == 0.0 {
                            continue;
                        }
                        let xrow = &xd[(ch * n + t) * k..(ch * n + t + 1) * k];
                        for j in 0..k {
                            orow[j] += w * xrow[j];
                        }
                    }
                }
            }
        }
        Ok(self.push(Op::MatMulBatched { a: ia, x: ix }, out))
    }

    pub fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let value = a.transposed()?;
        Ok(self.push(Op::Transpose { a: ia }, value))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.id_of(a)?, self.id_of(b)?);
        let value = a.zip_map(b, |x, y| x + y)?;
        Ok(self.push(Op::Add { a: ia, b: ib }, value))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.id_of(a)?, self.id_of(b)?);
        let value = a.zip_map(b, |x, y| x - y)?;
        Ok(self.push(Op::Sub { a: ia, b: ib }, value))
    }

    pub fn hadamard(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.id_of(a)?, self.id_of(b)?);
        let value = a.zip_map(b, |x, y| x * y)?;
        Ok(self.push(Op::Hadamard { a: ia, b: ib }, value))
    }

    pub fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let value = a.map(|x| 1.0 / (1.0 + (-x).exp()));
        Ok(self.push(Op::Sigmoid { a: ia }, value))
    }

    pub fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let value = a.map(f64::tanh);
        Ok(self.push(Op::Tanh { a: ia }, value))
    }

    pub fn scale(&mut self, a: &Tensor, factor: f64) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let value = a.map(|x| factor * x);
        Ok(self.push(Op::Scale { a: ia, factor }, value))
    }

    pub fn add_bias_rows(&mut self, matrix: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (im, ib) = (self.id_of(matrix)?, self.id_of(bias)?);
        let (r, c) = matrix.dims2()?;
        if bias.shape() != [c] {
            return Err(Error::dim(format!(
                "row bias of shape {:?} against matrix {:?}",
                bias.shape(),
                matrix.shape()
            )));
        }
        let mut value = matrix.detached();
        {
            let data = value.data_mut();
            for i in 0..r {
                for j in 0..c {
                    data[i * c + j] += bias.data()[j];
                }
            }
        }
        Ok(self.push(Op::AddBiasRows { matrix: im, bias: ib }, value))
    }

    pub fn concat_cols(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.id_of(a)?, self.id_of(b)?);
        let (ra, ca) = a.dims2()?;
        let (rb, cb) = b.dims2()?;
        if ra != rb {
            return Err(Error::dim(format!(
                "cannot concat columns of {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::new(vec![ra, ca + cb], data)?;
        Ok(self.push(Op::ConcatCols { a: ia, b: ib }, value))
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let (r, c) = a.dims2()?;
        let mut value = a.detached();
        {
            let data = value.data_mut();
            for i in 0..r {
                let row = &mut data[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        Ok(self.push(Op::SoftmaxRows { a: ia }, value))
    }

    pub fn row_sums(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let (r, c) = a.dims2()?;
        let data: Vec<f64> = (0..r).map(|i| a.data()[i * c..(i + 1) * c].iter().sum()).collect();
        let value = Tensor::new(vec![r, 1], data)?;
        Ok(self.push(Op::RowSums { a: ia }, value))
    }

    pub fn deg_inv_sqrt(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let value = a.map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 });
        Ok(self.push(Op::DegInvSqrt { a: ia }, value))
    }

    /// Eigendecomposition of a symmetric matrix, recorded so gradients reach
    /// the input through both the eigenvector and eigenvalue outputs.
    /// Returns `(vectors, values)` with eigenvalues ascending.
    pub fn eigh(&mut self, l: &Tensor) -> Result<(Tensor, Tensor)> {
        let il = self.id_of(l)?;
        let basis = spectral::jacobi_eigh(&l.detached())?;
        let u = self.push(
            Op::EighVectors { l: il, values: basis.values.clone() },
            basis.vectors.clone(),
        );
        let lam = self.push(Op::EighValues { l: il, vectors: basis.vectors }, basis.values);
        Ok((u, lam))
    }

    /// Same-length 1-D cross-correlation with zero padding.
    /// `x` is `[c_in, len]` or `[c_in, batch, len]`; kernels are
    /// `[c_out, c_in, tau]` with odd `tau`; bias is `[c_out]`.
    pub fn conv1d_same(&mut self, x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (ix, ik, ib) = (self.id_of(x)?, self.id_of(kernels)?, self.id_of(bias)?);
        let (c_out, c_in, tau) = kernels.dims3()?;
        if tau % 2 == 0 {
            return Err(Error::Config(format!(
                "conv1d_same needs an odd kernel width, got {}",
                tau
            )));
        }
        if bias.shape() != [c_out] {
            return Err(Error::dim(format!(
                "conv bias shape {:?} does not match {} output channels",
                bias.shape(),
                c_out
            )));
        }
        let (cx, batch, len) = match x.shape() {
            [c, l] => (*c, 1usize, *l),
            [c, b, l] => (*c, *b, *l),
            other => return Err(Error::dim(format!("conv input must be rank 2 or 3, got {:?}", other))),
        };
        if cx != c_in {
            return Err(Error::dim(format!(
                "conv input has {} channels, kernels expect {}",
                cx, c_in
            )));
        }
        let value = conv1d_forward(x.data(), c_in, batch, len, kernels.data(), c_out, tau, bias.data());
        let shape = if x.shape().len() == 2 { vec![c_out, len] } else { vec![c_out, batch, len] };
        Ok(self.push(Op::Conv1d { x: ix, kernels: ik, bias: ib }, Tensor::new(shape, value)?))
    }

    /// Spectral filter with channel mixing (see [`Op::GraphFilter`]).
    pub fn graph_filter(&mut self, theta: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (it, ix) = (self.id_of(theta)?, self.id_of(x)?);
        let (c_in, c_out, n) = theta.dims3()?;
        let (cx, nx, k) = x.dims3()?;
        if cx != c_in || nx != n {
            return Err(Error::dim(format!(
                "graph filter {:?} against input {:?}",
                theta.shape(),
                x.shape()
            )));
        }
        let mut out = Tensor::zeros(&[c_out, n, k]);
        {
            let od = out.data_mut();
            let td = theta.data();
            let xd = x.data();
            for j in 0..c_out {
                for i in 0..c_in {
                    for node in 0..n {
                        let w = td[(i * c_out + j) * n + node];
                        if w == 0.0 {
                            continue;
                        }
                        let xrow = &xd[(i * n + node) * k..(i * n + node + 1) * k];
                        let orow = &mut od[(j * n + node) * k..(j * n + node + 1) * k];
                        for t in 0..k {
                            orow[t] += w * xrow[t];
                        }
                    }
                }
            }
        }
        Ok(self.push(Op::GraphFilter { theta: it, x: ix }, out))
    }

    pub fn channel_lift(&mut self, weight: &Tensor, bias: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (iw, ib, ix) = (self.id_of(weight)?, self.id_of(bias)?, self.id_of(x)?);
        let c = weight.numel();
        if bias.numel() != c || weight.shape().len() != 1 || bias.shape().len() != 1 {
            return Err(Error::dim(format!(
                "channel lift wants weight/bias vectors of equal length, got {:?} and {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        let (n, k) = x.dims2()?;
        let mut out = Tensor::zeros(&[c, n, k]);
        {
            let od = out.data_mut();
            let xd = x.data();
            for ch in 0..c {
                let (w, b) = (weight.data()[ch], bias.data()[ch]);
                let block = &mut od[ch * n * k..(ch + 1) * n * k];
                for (o, v) in block.iter_mut().zip(xd) {
                    *o = w * v + b;
                }
            }
        }
        Ok(self.push(Op::ChannelLift { weight: iw, bias: ib, x: ix }, out))
    }

    pub fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let value = a.reshaped(shape)?;
        Ok(self.push(Op::Reshape { a: ia }, value))
    }

    pub fn sum_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let ia = self.id_of(a)?;
        let value = Tensor::scalar(a.data().iter().sum());
        Ok(self.push(Op::SumAll { a: ia }, value))
    }

    /// Seed the scalar loss with gradient 1 and sweep the tape in reverse.
    /// Every node gets a gradient buffer; nodes the loss does not reach keep
    /// their zeros.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let loss_id = self.id_of(loss)?;
        if self.nodes[loss_id].value.numel() != 1 {
            return Err(Error::dim(format!(
                "backward expects a scalar loss node, got shape {:?}",
                self.nodes[loss_id].value.shape()
            )));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape()))
            .collect();
        grads[loss_id].data_mut()[0] = 1.0;

        for id in (0..self.nodes.len()).rev() {
            if grads[id].max_abs() == 0.0 {
                continue;
            }
            // move the gradient out while the arms write to earlier nodes
            let g = std::mem::replace(&mut grads[id], Tensor::zeros(&[0]));
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let da = matmul_raw(&g, &bv.transposed()?)?;
                    let db = matmul_raw(&av.transposed()?, &g)?;
                    grads[*a].add_scaled(&da, 1.0);
                    grads[*b].add_scaled(&db, 1.0);
                }
                Op::MatMulBatched { a, x } => {
                    let av = &self.nodes[*a].value;
                    let xv = &self.nodes[*x].value;
                    let (p, n) = av.dims2()?;
                    let (c, _, k) = xv.dims3()?;
                    let mut da = Tensor::zeros(&[p, n]);
                    let mut dx = Tensor::zeros(xv.shape());
                    {
                        let dad = da.data_mut();
                        let gd = g.data();
                        let xd = xv.data();
                        for ch in 0..c {
                            for i in 0..p {
                                let grow = &gd[(ch * p + i) * k..(ch * p + i + 1) * k];
                                for t in 0..n {
                                    let xrow = &xd[(ch * n + t) * k..(ch * n + t + 1) * k];
                                    let mut acc = 0.0;
                                    for j in 0..k {
                                        acc += grow[j] * xrow[j];
                                    }
                                    dad[i * n + t] += acc;
                                }
                            }
                        }
                    }
                    {
                        let dxd = dx.data_mut();
                        let gd = g.data();
                        let ad = av.data();
                        for ch in 0..c {
                            for i in 0..p {
                                let grow = &gd[(ch * p + i) * k..(ch * p + i + 1) * k];
                                for t in 0..n {
                                    let w = ad[i * n + t];
                                    if w == 0.0 {
                                        continue;
                                    }
                                    let xrow = &mut dxd[(ch * n + t) * k..(ch * n + t + 1) * k];
                                    for j in 0..k {
                                        xrow[j] += w * grow[j];
                                    }
                                }
                            }
                        }
                    }
                    grads[*a].add_scaled(&da, 1.0);
                    grads[*x].add_scaled(&dx, 1.0);
                }
                Op::Transpose { a } => {
                    grads[*a].add_scaled(&g.transposed()?, 1.0);
                }
                Op::Add { a, b } => {
                    grads[*a].add_scaled(&g, 1.0);
                    grads[*b].add_scaled(&g, 1.0);
                }
                Op::Sub { a, b } => {
                    grads[*a].add_scaled(&g, 1.0);
                    grads[*b].add_scaled(&g, -1.0);
                }
                Op::Hadamard { a, b } => {
                    let da = g.zip_map(&self.nodes[*b].value, |gv, bv| gv * bv)?;
                    let db = g.zip_map(&self.nodes[*a].value, |gv, av| gv * av)?;
                    grads[*a].add_scaled(&da, 1.0);
                    grads[*b].add_scaled(&db, 1.0);
                }
                Op::Sigmoid { a } => {
                    // sigma' = sigma * (1 - sigma), from the saved output
                    let da = g.zip_map(&self.nodes[id].value, |gv, s| gv * s * (1.0 - s))?;
                    grads[*a].add_scaled(&da, 1.0);
                }
                Op::Tanh { a } => {
                    let da = g.zip_map(&self.nodes[id].value, |gv, t| gv * (1.0 - t * t))?;
                    grads[*a].add_scaled(&da, 1.0);
                }
                Op::Scale { a, factor } => {
                    grads[*a].add_scaled(&g, *factor);
                }
                Op::AddBiasRows { matrix, bias } => {
                    grads[*matrix].add_scaled(&g, 1.0);
                    let (r, c) = g.dims2()?;
                    let mut db = Tensor::zeros(&[c]);
                    for i in 0..r {
                        for j in 0..c {
                            db.data_mut()[j] += g.at2(i, j);
                        }
                    }
                    grads[*bias].add_scaled(&db, 1.0);
                }
                Op::ConcatCols { a, b } => {
                    let (r, ca) = self.nodes[*a].value.dims2()?;
                    let (_, cb) = self.nodes[*b].value.dims2()?;
                    let mut da = Tensor::zeros(&[r, ca]);
                    let mut db = Tensor::zeros(&[r, cb]);
                    for i in 0..r {
                        for j in 0..ca {
                            da.set2(i, j, g.at2(i, j));
                        }
                        for j in 0..cb {
                            db.set2(i, j, g.at2(i, ca + j));
                        }
                    }
                    grads[*a].add_scaled(&da, 1.0);
                    grads[*b].add_scaled(&db, 1.0);
                }
                Op::SoftmaxRows { a } => {
                    let s = &self.nodes[id].value;
                    let (r, c) = s.dims2()?;
                    let mut da = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += g.at2(i, j) * s.at2(i, j);
                        }
                        for j in 0..c {
                            da.set2(i, j, s.at2(i, j) * (g.at2(i, j) - dot));
                        }
                    }
                    grads[*a].add_scaled(&da, 1.0);
                }
                Op::RowSums { a } => {
                    let (r, c) = self.nodes[*a].value.dims2()?;
                    let mut da = Tensor::zeros(&[r, c]);
                    for i in 0..r {
                        for j in 0..c {
                            da.set2(i, j, g.at2(i, 0));
                        }
                    }
                    grads[*a].add_scaled(&da, 1.0);
                }
                Op::DegInvSqrt { a } => {
                    let da = g.zip_map(&self.nodes[*a].value, |gv, x| {
                        if x > 0.0 {
                            gv * (-0.5) * x.powf(-1.5)
                        } else {
                            0.0
                        }
                    })?;
                    grads[*a].add_scaled(&da, 1.0);
                }
                Op::EighVectors { l, values } => {
                    let u = &self.nodes[id].value;
                    let zero = Tensor::zeros(&[values.numel()]);
                    let dl = spectral::eigh_backward(u, values, &g, &zero)?;
                    grads[*l].add_scaled(&dl, 1.0);
                }
                Op::EighValues { l, vectors } => {
                    let lam = &self.nodes[id].value;
                    let zero = Tensor::zeros(vectors.shape());
                    let dl = spectral::eigh_backward(vectors, lam, &zero, &g)?;
                    grads[*l].add_scaled(&dl, 1.0);
                }
                Op::Conv1d { x, kernels, bias } => {
                    let xv = &self.nodes[*x].value;
                    let kv = &self.nodes[*kernels].value;
                    let (c_out, c_in, tau) = kv.dims3()?;
                    let (batch, len) = match xv.shape() {
                        [_, l] => (1usize, *l),
                        [_, b, l] => (*b, *l),
                        _ => unreachable!("validated at record time"),
                    };
                    let (dx, dk, db) = conv1d_backward(
                        g.data(),
                        xv.data(),
                        kv.data(),
                        c_in,
                        c_out,
                        batch,
                        len,
                        tau,
                    );
                    grads[*x].add_scaled(&Tensor::new(xv.shape().to_vec(), dx)?, 1.0);
                    grads[*kernels].add_scaled(&Tensor::new(kv.shape().to_vec(), dk)?, 1.0);
                    grads[*bias].add_scaled(&Tensor::new(vec![c_out], db)?, 1.0);
                }
                Op::GraphFilter { theta, x } => {
                    let tv = &self.nodes[*theta].value;
                    let xv = &self.nodes[*x].value;
                    let (c_in, c_out, n) = tv.dims3()?;
                    let (_, _, k) = xv.dims3()?;
                    let mut dt = Tensor::zeros(tv.shape());
                    let mut dx = Tensor::zeros(xv.shape());
                    {
                        let dtd = dt.data_mut();
                        let gd = g.data();
                        let xd = xv.data();
                        let td = tv.data();
                        let dxd = dx.data_mut();
                        for j in 0..c_out {
                            for i in 0..c_in {
                                for node in 0..n {
                                    let grow = &gd[(j * n + node) * k..(j * n + node + 1) * k];
                                    let xrow = &xd[(i * n + node) * k..(i * n + node + 1) * k];
                                    let mut acc = 0.0;
                                    for t in 0..k {
                                        acc += grow[t] * xrow[t];
                                    }
                                    dtd[(i * c_out + j) * n + node] += acc;
                                    let w = td[(i * c_out + j) * n + node];
                                    if w != 0.0 {
                                        let dxrow =
                                            &mut dxd[(i * n + node) * k..(i * n + node + 1) * k];
                                        for t in 0..k {
                                            dxrow[t] += w * grow[t];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    grads[*theta].add_scaled(&dt, 1.0);
                    grads[*x].add_scaled(&dx, 1.0);
                }
                Op::ChannelLift { weight, bias, x } => {
                    let wv = &self.nodes[*weight].value;
                    let xv = &self.nodes[*x].value;
                    let c = wv.numel();
                    let (n, k) = xv.dims2()?;
                    let mut dw = Tensor::zeros(&[c]);
                    let mut db = Tensor::zeros(&[c]);
                    let mut dx = Tensor::zeros(&[n, k]);
                    {
                        let gd = g.data();
                        let xd = xv.data();
                        let dxd = dx.data_mut();
                        for ch in 0..c {
                            let w = wv.data()[ch];
                            let block = &gd[ch * n * k..(ch + 1) * n * k];
                            let mut dw_acc = 0.0;
                            let mut db_acc = 0.0;
                            for (i, gv) in block.iter().enumerate() {
                                dw_acc += gv * xd[i];
                                db_acc += gv;
                                dxd[i] += w * gv;
                            }
                            dw.data_mut()[ch] = dw_acc;
                            db.data_mut()[ch] = db_acc;
                        }
                    }
                    grads[*weight].add_scaled(&dw, 1.0);
                    grads[*bias].add_scaled(&db, 1.0);
                    grads[*x].add_scaled(&dx, 1.0);
                }
                Op::Reshape { a } => {
                    let back = g.reshaped(self.nodes[*a].value.shape())?;
                    grads[*a].add_scaled(&back, 1.0);
                }
                Op::SumAll { a } => {
                    let gv = g.data()[0];
                    let da = Tensor::full(self.nodes[*a].value.shape(), gv);
                    grads[*a].add_scaled(&da, 1.0);
                }
            }
            grads[id] = g;
        }
        Ok(Gradients { grads })
    }
}

/// Valid overlap of `y[t] += k * x[t + shift]` over `t in [0, len)` with the
/// source clipped to `[0, len)`: destination range start and length.
#[inline]
fn shifted_ranges(len: usize, shift: isize) -> (usize, usize, usize) {
    if shift >= 0 {
        let s = shift as usize;
        (0, s, len - s) // dst starts at 0, src at s
    } else {
        let s = (-shift) as usize;
        (s, 0, len - s)
    }
}

fn conv1d_forward(
    x: &[f64],
    c_in: usize,
    batch: usize,
    len: usize,
    kernels: &[f64],
    c_out: usize,
    tau: usize,
    bias: &[f64],
) -> Vec<f64> {
    let pad = (tau - 1) as isize / 2;
    let mut out = vec![0.0; c_out * batch * len];
    for o in 0..c_out {
        for b in 0..batch {
            let orow = &mut out[(o * batch + b) * len..(o * batch + b + 1) * len];
            for v in orow.iter_mut() {
                *v = bias[o];
            }
            for i in 0..c_in {
                let xrow = &x[(i * batch + b) * len..(i * batch + b + 1) * len];
                let krow = &kernels[(o * c_in + i) * tau..(o * c_in + i + 1) * tau];
                for (dt, kv) in krow.iter().enumerate() {
                    if *kv == 0.0 {
                        continue;
                    }
                    let (dst0, src0, count) = shifted_ranges(len, dt as isize - pad);
                    let dsts = &mut orow[dst0..dst0 + count];
                    let srcs = &xrow[src0..src0 + count];
                    for (d, s) in dsts.iter_mut().zip(srcs) {
                        *d += kv * s;
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    g: &[f64],
    x: &[f64],
    kernels: &[f64],
    c_in: usize,
    c_out: usize,
    batch: usize,
    len: usize,
    tau: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = (tau - 1) as isize / 2;
    let mut dx = vec![0.0; c_in * batch * len];
    let mut dk = vec![0.0; c_out * c_in * tau];
    let mut db = vec![0.0; c_out];
    for o in 0..c_out {
        for b in 0..batch {
            let grow = &g[(o * batch + b) * len..(o * batch + b + 1) * len];
            db[o] += grow.iter().sum::<f64>();
            for i in 0..c_in {
                let xrow = &x[(i * batch + b) * len..(i * batch + b + 1) * len];
                let dxrow = &mut dx[(i * batch + b) * len..(i * batch + b + 1) * len];
                let koff = (o * c_in + i) * tau;
                for dt in 0..tau {
                    let (dst0, src0, count) = shifted_ranges(len, dt as isize - pad);
                    // dk[dt] is the dot of g's clipped window with x's
                    let gs = &grow[dst0..dst0 + count];
                    let xs = &xrow[src0..src0 + count];
                    let mut acc = 0.0;
                    for (gv, xv) in gs.iter().zip(xs) {
                        acc += gv * xv;
                    }
                    dk[koff + dt] += acc;
                    let kv = kernels[koff + dt];
                    if kv != 0.0 {
                        let dxs = &mut dxrow[src0..src0 + count];
                        for (d, gv) in dxs.iter_mut().zip(gs) {
                            *d += kv * gv;
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

/// Central finite differences of a scalar function over a parameter list:
/// `(f(p + h e_i) - f(p - h e_i)) / 2h` per coordinate. Test oracle; stays
/// independent of the tape it is used to check.
pub fn finite_difference_gradient<F>(mut f: F, params: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite differences need h > 0, got {}", h)));
    }
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Tensor::zeros(params[pi].shape());
        for ci in 0..params[pi].numel() {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[ci] += h;
            let fp = f(&plus)?;
            let mut minus = params.to_vec();
            minus[pi].data_mut()[ci] -= h;
            let fm = f(&minus)?;
            grad.data_mut()[ci] = (fp - fm) / (2.0 * h);
        }
        grads.push(grad);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
        let mut diff = analytic.clone();
        diff.add_scaled(numeric, -1.0);
        let denom = analytic.frobenius_norm().max(numeric.frobenius_norm()).max(1e-8);
        diff.frobenius_norm() / denom
    }

    /// Checks one taped scalar function against central differences at 1e-5.
    fn check_gradients<F>(build: F, params: &[Tensor], tol: f64)
    where
        F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
    {
        let mut tape = Tape::new();
        let leafed: Vec<Tensor> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &leafed).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let numeric = finite_difference_gradient(
            |ps| {
                let mut t = Tape::new();
                let leafed: Vec<Tensor> = ps.iter().map(|p| t.leaf(p.clone())).collect();
                Ok(build(&mut t, &leafed)?.data()[0])
            },
            params,
            1e-5,
        )
        .unwrap();
        for (i, num) in numeric.iter().enumerate() {
            let ana = grads.wrt(&leafed[i]).unwrap();
            let err = rel_err(ana, num);
            assert!(err < tol, "param {} gradient off by {:e}", i, err);
        }
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let mut tape = Tape::new();
        let (ta, tb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let c = tape.matmul(&ta, &tb).unwrap();
        // independent O(mkn) oracle
        for i in 0..3 {
            for j in 0..2 {
                let mut want = 0.0;
                for p in 0..4 {
                    want += a.at2(i, p) * b.at2(p, j);
                }
                assert!((c.at2(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[4, 2]));
        let msg = tape.matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0, 2.0, 3.0]));
        let loss = tape.sum_all(&x).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_quadratic() {
        // loss = x^T x at x = [1, 2] -> grad = [2, 4]
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0, 2.0]));
        let sq = tape.hadamard(&x, &x).unwrap();
        let loss = tape.sum_all(&sq).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0, 2.0]));
        let err = tape.backward(&x).unwrap_err().to_string();
        assert!(err.contains("scalar"), "{err}");
    }

    #[test]
    fn unreachable_nodes_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0]));
        let orphan = tape.leaf(Tensor::vector(&[5.0, 6.0]));
        let loss = tape.sum_all(&x).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&orphan).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn sigmoid_symmetry_point() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let s = tape.sigmoid(&x).unwrap();
        assert_eq!(s.data()[0], 0.5);
    }

    #[test]
    fn hadamard_example() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(&[1.0, 2.0, 3.0]));
        let b = tape.leaf(Tensor::vector(&[0.0, 1.0, 2.0]));
        let h = tape.hadamard(&a, &b).unwrap();
        assert_eq!(h.data(), &[0.0, 2.0, 6.0]);
    }

    #[test]
    fn tanh_gradient_matches_central_difference() {
        // d/dx tanh at 0.3 against (f(x+h)-f(x-h))/2h with h = 1e-6
        let f = |x: f64| x.tanh();
        let h = 1e-6;
        let numeric = (f(0.3 + h) - f(0.3 - h)) / (2.0 * h);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.3));
        let y = tape.tanh(&x).unwrap();
        let loss = tape.sum_all(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert!((grads.wrt(&x).unwrap().data()[0] - numeric).abs() < 1e-8);
    }

    #[test]
    fn softmax_uniform_and_stabilized() {
        let mut tape = Tape::new();
        let flat = tape.leaf(Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap());
        let s = tape.softmax_rows(&flat).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let spike = tape.leaf(Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap());
        let s = tape.softmax_rows(&spike).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1].abs() < 1e-12);
        assert!(s.all_finite());
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = rand_tensor(&mut rng, &[1, 4]);
        let weights = rand_tensor(&mut rng, &[1, 4]);
        // random linear functional of the softmax output exercises the full Jacobian
        check_gradients(
            |tape, ps| {
                let s = tape.softmax_rows(&ps[0])?;
                let w = tape.hadamard(&s, &ps[1])?;
                tape.sum_all(&w)
            },
            &[logits, weights],
            1e-7,
        );
    }

    #[test]
    fn conv1d_delta_kernel_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 5], vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
        let k = tape.leaf(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let b = tape.leaf(Tensor::vector(&[0.0]));
        let y = tape.conv1d_same(&x, &k, &b).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn conv1d_zero_padding_at_boundaries() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap());
        let k = tape.leaf(Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap());
        let b = tape.leaf(Tensor::vector(&[0.0]));
        let y = tape.conv1d_same(&x, &k, &b).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 2.0]);
    }

    #[test]
    fn conv1d_rejects_even_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 4]));
        let k = tape.leaf(Tensor::zeros(&[1, 1, 2]));
        let b = tape.leaf(Tensor::vector(&[0.0]));
        match tape.conv1d_same(&x, &k, &b) {
            Err(Error::Config(_)) => {}
            other => panic!("expected a configuration error, got {:?}", other.map(|t| t.shape().to_vec())),
        }
    }

    #[test]
    fn conv1d_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, &[2, 8]);
        let k = rand_tensor(&mut rng, &[3, 2, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        let mut tape = Tape::new();
        let (tx, tk, tb) = (tape.leaf(x.clone()), tape.leaf(k.clone()), tape.leaf(b.clone()));
        let y = tape.conv1d_same(&tx, &tk, &tb).unwrap();
        // direct nested-loop oracle with explicit zero padding
        for o in 0..3 {
            for t in 0..8i64 {
                let mut want = b.data()[o];
                for i in 0..2 {
                    for dt in -1..=1i64 {
                        let src = t + dt;
                        if (0..8).contains(&src) {
                            want += x.at2(i, src as usize) * k.at3(o, i, (dt + 1) as usize);
                        }
                    }
                }
                assert!((y.at2(o, t as usize) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn per_op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let tol = 1e-5;

        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        check_gradients(
            |tape, ps| {
                let c = tape.matmul(&ps[0], &ps[1])?;
                let s = tape.sigmoid(&c)?;
                tape.sum_all(&s)
            },
            &[a, b],
            tol,
        );

        let x = rand_tensor(&mut rng, &[2, 3, 5]);
        let k = rand_tensor(&mut rng, &[2, 2, 3]);
        let bias = rand_tensor(&mut rng, &[2]);
        check_gradients(
            |tape, ps| {
                let y = tape.conv1d_same(&ps[0], &ps[1], &ps[2])?;
                let t = tape.tanh(&y)?;
                tape.sum_all(&t)
            },
            &[x, k, bias],
            tol,
        );

        let m = rand_tensor(&mut rng, &[4, 3]);
        let bias = rand_tensor(&mut rng, &[3]);
        check_gradients(
            |tape, ps| {
                let y = tape.add_bias_rows(&ps[0], &ps[1])?;
                let s = tape.softmax_rows(&y)?;
                let sq = tape.hadamard(&s, &s)?;
                tape.sum_all(&sq)
            },
            &[m, bias],
            tol,
        );

        let a = rand_tensor(&mut rng, &[3, 2]);
        let b = rand_tensor(&mut rng, &[3, 4]);
        check_gradients(
            |tape, ps| {
                let c = tape.concat_cols(&ps[0], &ps[1])?;
                let t = tape.transpose(&c)?;
                let sq = tape.hadamard(&t, &t)?;
                tape.sum_all(&sq)
            },
            &[a, b],
            tol,
        );

        // positive input keeps deg_inv_sqrt away from its zero branch
        let w = rand_tensor(&mut rng, &[4, 4]).map(|v| v.abs() + 0.5);
        check_gradients(
            |tape, ps| {
                let d = tape.row_sums(&ps[0])?;
                let r = tape.deg_inv_sqrt(&d)?;
                let rt = tape.transpose(&r)?;
                let outer = tape.matmul(&r, &rt)?;
                let scaled = tape.hadamard(&ps[0], &outer)?;
                tape.sum_all(&scaled)
            },
            &[w],
            tol,
        );

        let theta = rand_tensor(&mut rng, &[2, 3, 4]);
        let xhat = rand_tensor(&mut rng, &[2, 4, 5]);
        check_gradients(
            |tape, ps| {
                let z = tape.graph_filter(&ps[0], &ps[1])?;
                let sq = tape.hadamard(&z, &z)?;
                tape.sum_all(&sq)
            },
            &[theta, xhat],
            tol,
        );

        let wv = rand_tensor(&mut rng, &[3]);
        let bv = rand_tensor(&mut rng, &[3]);
        let x2 = rand_tensor(&mut rng, &[4, 5]);
        let u = rand_tensor(&mut rng, &[4, 4]);
        check_gradients(
            |tape, ps| {
                let lifted = tape.channel_lift(&ps[0], &ps[1], &ps[2])?;
                let mixed = tape.matmul_batched(&ps[3], &lifted)?;
                let sq = tape.hadamard(&mixed, &mixed)?;
                tape.sum_all(&sq)
            },
            &[wv, bv, x2, u],
            tol,
        );
    }

    #[test]
    fn finite_difference_on_closed_forms() {
        // f(x) = x^2 at 3 -> 6
        let g = finite_difference_gradient(
            |ps| Ok(ps[0].data()[0] * ps[0].data()[0]),
            &[Tensor::scalar(3.0)],
            1e-5,
        )
        .unwrap();
        assert!((g[0].data()[0] - 6.0).abs() < 1e-8);
        // f(x) = sin(x) at 0 -> 1
        let g = finite_difference_gradient(
            |ps| Ok(ps[0].data()[0].sin()),
            &[Tensor::scalar(0.0)],
            1e-5,
        )
        .unwrap();
        assert!((g[0].data()[0] - 1.0).abs() < 1e-9);
        assert!(finite_difference_gradient(|_| Ok(0.0), &[Tensor::scalar(0.0)], 0.0).is_err());
    }

    #[test]
    fn two_layer_toy_net_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w1 = rand_tensor(&mut rng, &[3, 4]);
        let b1 = rand_tensor(&mut rng, &[4]);
        let w2 = rand_tensor(&mut rng, &[4, 1]);
        let x = rand_tensor(&mut rng, &[2, 3]);
        check_gradients(
            |tape, ps| {
                let xl = tape.leaf(x.clone());
                let h = tape.matmul(&xl, &ps[0])?;
                let h = tape.add_bias_rows(&h, &ps[1])?;
                let h = tape.tanh(&h)?;
                let y = tape.matmul(&h, &ps[2])?;
                let sq = tape.hadamard(&y, &y)?;
                tape.sum_all(&sq)
            },
            &[w1, b1, w2],
            1e-6,
        );
    }

    #[test]
    fn forward_replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = rand_tensor(&mut rng, &[4, 4]);
        let b = rand_tensor(&mut rng, &[4, 4]);
        let run = || {
            let mut tape = Tape::new();
            let (ta, tb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
            let c = tape.matmul(&ta, &tb).unwrap();
            let s = tape.sigmoid(&c).unwrap();
            let sm = tape.softmax_rows(&s).unwrap();
            sm.data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
