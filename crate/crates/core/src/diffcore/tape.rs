//! Reverse-mode differentiation over [`Tensor2`] values.
//!
//! Each method on [`Tape`] evaluates its operation eagerly and records the
//! node; [`Tape::backward`] walks the record in reverse and accumulates
//! adjoints. The op set is exactly what the MLP and the calibration losses
//! use.

use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Exp(Var),
    Abs(Var),
    Sqrt(Var),
    Pow(Var, Vec<f64>),
    LogSoftmax(Var),
    Softmax(Var),
    RowMax(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    SelectRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    /// sum_ij u_i v_j exp(-|r_i - s_j| * inv_bandwidth)
    LaplacianForm {
        u: Var,
        r: Var,
        v: Var,
        s: Var,
        inv_bandwidth: f64,
    },
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Recorded computation for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    adjoints: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor2 {
        match self.adjoints.get(var.0).and_then(Option::as_ref) {
            Some(t) => t.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor2::zeros(r, c)
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
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

    pub fn value(&self, var: Var) -> &Tensor2 {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a 1 x m bias row to every row of an n x m input.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::Shape(format!(
                "bias {}x{} for input {}x{}",
                b.rows(),
                b.cols(),
                x.rows(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        let brow = b.row(0).to_vec();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&brow) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let out = self.value(a).map(|x| x + shift);
        self.push(out, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    /// Square root; inputs must be non-negative (clamp with [`Tape::relu`] first).
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric("sqrt of a negative value".into()));
        }
        let out = self.value(a).map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(a)))
    }

    /// Elementwise power with a per-entry constant exponent.
    pub fn pow(&mut self, a: Var, exponents: Vec<f64>) -> Result<Var> {
        let x = self.value(a);
        if exponents.len() != x.data().len() {
            return Err(Error::Shape(format!(
                "{} exponents for {} entries",
                exponents.len(),
                x.data().len()
            )));
        }
        let data = x
            .data()
            .iter()
            .zip(&exponents)
            .map(|(&v, &e)| v.powf(e))
            .collect();
        let out = Tensor2::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(out, Op::Pow(a, exponents)))
    }

    /// Row-wise log-softmax, stabilized by subtracting the row max.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    /// Row maximum as an n x 1 column; ties resolve to the lowest column.
    pub fn row_max(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let argmax: Vec<usize> = x.iter_rows().map(argmax_row).collect();
        let vals = argmax
            .iter()
            .enumerate()
            .map(|(r, &c)| x.get(r, c))
            .collect();
        self.push(Tensor2::column(vals), Op::RowMax(a, argmax))
    }

    /// Picks entry `(i, cols[i])` of every row into an n x 1 column.
    pub fn gather(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if cols.len() != x.rows() {
            return Err(Error::Shape(format!(
                "{} indices for {} rows",
                cols.len(),
                x.rows()
            )));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= x.cols()) {
            return Err(Error::Shape(format!(
                "column {bad} out of range for width {}",
                x.cols()
            )));
        }
        let vals = cols.iter().enumerate().map(|(r, &c)| x.get(r, c)).collect();
        Ok(self.push(Tensor2::column(vals), Op::Gather(a, cols.to_vec())))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
            return Err(Error::Shape(format!(
                "row {bad} out of range for {} rows",
                x.rows()
            )));
        }
        let out = x.select_rows(rows);
        Ok(self.push(out, Op::SelectRows(a, rows.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor2::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.data().is_empty() {
            return Err(Error::Empty("mean of an empty tensor".into()));
        }
        let out = Tensor2::scalar(x.sum() / x.data().len() as f64);
        Ok(self.push(out, Op::Mean(a)))
    }

    /// Column means: n x m -> 1 x m.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(Error::Empty("mean over zero rows".into()));
        }
        let mut out = Tensor2::zeros(1, x.cols());
        for row in x.iter_rows() {
            for (o, v) in out.row_mut(0).iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = x.rows() as f64;
        let out = out.map(|v| v / n);
        Ok(self.push(out, Op::MeanRows(a)))
    }

    /// Laplacian-kernel bilinear form
    /// `sum_ij u_i v_j exp(-|r_i - s_j| / bandwidth)` over column vectors,
    /// evaluated in O(n m) time without materializing the kernel matrix.
    pub fn laplacian_form(
        &mut self,
        u: Var,
        r: Var,
        v: Var,
        s: Var,
        bandwidth: f64,
    ) -> Result<Var> {
        if bandwidth <= 0.0 || !bandwidth.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidth {bandwidth} must be positive"
            )));
        }
        let (uu, rr, vv, ss) = (self.value(u), self.value(r), self.value(v), self.value(s));
        for (name, t, n) in [("u", uu, rr.rows()), ("v", vv, ss.rows())] {
            if t.cols() != 1 || t.rows() != n {
                return Err(Error::Shape(format!(
                    "laplacian_form: {name} must be a column matching its points"
                )));
            }
        }
        if rr.cols() != 1 || ss.cols() != 1 {
            return Err(Error::Shape(
                "laplacian_form: points must be columns".into(),
            ));
        }
        let inv = 1.0 / bandwidth;
        let mut total = 0.0;
        for (&ui, &ri) in uu.data().iter().zip(rr.data()) {
            let mut acc = 0.0;
            for (&vj, &sj) in vv.data().iter().zip(ss.data()) {
                acc += vj * (-(ri - sj).abs() * inv).exp();
            }
            total += ui * acc;
        }
        Ok(self.push(
            Tensor2::scalar(total),
            Op::LaplacianForm {
                u,
                r,
                v,
                s,
                inv_bandwidth: inv,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self.nodes.get(loss.0).ok_or_else(|| {
            Error::InvalidArgument(format!("variable {} is not on this tape", loss.0))
        })?;
        if node.value.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "loss must be 1x1, got {:?}",
                node.value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            // Leaves keep their adjoint for the caller.
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddBias(a, bias) => {
                    let mut db = Tensor2::zeros(1, g.cols());
                    for row in g.iter_rows() {
                        for (d, v) in db.row_mut(0).iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *bias, db);
                    accumulate(&mut adj, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|v| -v));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |gv, bv| gv * bv);
                    let db = g.zip_map(self.value(*a), |gv, av| gv * av);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Scale(a, f) => accumulate(&mut adj, *a, g.map(|v| v * f)),
                Op::Offset(a) => accumulate(&mut adj, *a, g),
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::Exp(a) => accumulate(&mut adj, *a, g.zip_map(out, |gv, y| gv * y)),
                Op::Abs(a) => {
                    let d = g.zip_map(self.value(*a), |gv, x| gv * sign(x));
                    accumulate(&mut adj, *a, d);
                }
                Op::Sqrt(a) => {
                    let d = g.zip_map(out, |gv, y| if y > 0.0 { gv * 0.5 / y } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::Pow(a, exps) => {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .zip(exps)
                        .map(|((&gv, &xv), &e)| {
                            if e == 0.0 || (xv == 0.0 && e < 1.0) {
                                0.0
                            } else {
                                gv * e * xv.powf(e - 1.0)
                            }
                        })
                        .collect();
                    accumulate(&mut adj, *a, Tensor2::from_vec(x.rows(), x.cols(), data)?);
                }
                Op::LogSoftmax(a) => {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for (dv, &ls) in d.row_mut(r).iter_mut().zip(out.row(r)) {
                            *dv -= ls.exp() * gsum;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::Softmax(a) => {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let dot: f64 = g.row(r).iter().zip(out.row(r)).map(|(x, y)| x * y).sum();
                        for (dv, &s) in d.row_mut(r).iter_mut().zip(out.row(r)) {
                            *dv = s * (*dv - dot);
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::RowMax(a, argmax) | Op::Gather(a, argmax) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut d = Tensor2::zeros(rows, cols);
                    for (r, &c) in argmax.iter().enumerate() {
                        d.set(r, c, g.get(r, 0));
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::SelectRows(a, rows) => {
                    let (n, cols) = self.value(*a).shape();
                    let mut d = Tensor2::zeros(n, cols);
                    for (k, &r) in rows.iter().enumerate() {
                        for (dv, gv) in d.row_mut(r).iter_mut().zip(g.row(k)) {
                            *dv += gv;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Tensor2::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(
                        &mut adj,
                        *a,
                        Tensor2::filled(r, c, g.item() / (r * c) as f64),
                    );
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.value(*a).shape();
                    let mut d = Tensor2::zeros(r, c);
                    for i in 0..r {
                        for (dv, gv) in d.row_mut(i).iter_mut().zip(g.row(0)) {
                            *dv = gv / r as f64;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::LaplacianForm {
                    u,
                    r,
                    v,
                    s,
                    inv_bandwidth,
                } => {
                    let gs = g.item();
                    let inv = *inv_bandwidth;
                    let (uu, rr, vv, ss) = (
                        self.value(*u),
                        self.value(*r),
                        self.value(*v),
                        self.value(*s),
                    );
                    let mut du = vec![0.0; uu.rows()];
                    let mut dr = vec![0.0; rr.rows()];
                    let mut dv = vec![0.0; vv.rows()];
                    let mut ds = vec![0.0; ss.rows()];
                    for i in 0..rr.rows() {
                        let (ui, ri) = (uu.data()[i], rr.data()[i]);
                        for j in 0..ss.rows() {
                            let (vj, sj) = (vv.data()[j], ss.data()[j]);
                            let diff = ri - sj;
                            let k = (-diff.abs() * inv).exp();
                            du[i] += vj * k;
                            dv[j] += ui * k;
                            // d/dr_i exp(-|r_i - s_j| inv) = -inv sign(r_i - s_j) k
                            let dk = -inv * sign(diff) * k * ui * vj;
                            dr[i] += dk;
                            ds[j] -= dk;
                        }
                    }
                    let scale =
                        |v: Vec<f64>| Tensor2::column(v.into_iter().map(|x| x * gs).collect());
                    accumulate(&mut adj, *u, scale(du));
                    accumulate(&mut adj, *r, scale(dr));
                    accumulate(&mut adj, *v, scale(dv));
                    accumulate(&mut adj, *s, scale(ds));
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients {
            adjoints: adj,
            shapes,
        })
    }
}

fn accumulate(adj: &mut [Option<Tensor2>], var: Var, delta: Tensor2) {
    match &mut adj[var.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

/// Index of the row maximum, lowest index on ties.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}
