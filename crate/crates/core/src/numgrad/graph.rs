//! Tape-based reverse-mode differentiation over [`Tensor2`] values.
//!
//! A [`Graph`] records every operation eagerly: values are computed as nodes
//! are pushed, and [`Graph::backward`] walks the tape once in reverse. Leaves
//! are either constants or named parameters copied out of a [`ParamStore`];
//! gradients of the latter are accumulated back into the store.

use super::params::ParamStore;
use super::tensor::{gemm, Tensor2};
use crate::error::{Error, Result};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Activate(Var, Activation),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Square(Var),
    Hinge(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    VStack(Var, Var),
    GatherRows(Var, Vec<usize>),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    frozen: Vec<String>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parameters whose name starts with any of `prefixes` enter the graph as
    /// constants and receive no gradient.
    pub fn with_frozen<S: AsRef<str>>(prefixes: &[S]) -> Self {
        Graph {
            nodes: Vec::new(),
            frozen: prefixes.iter().map(|p| p.as_ref().to_owned()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor2, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Copies the current value of `name` into the graph.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        if self.frozen.iter().any(|p| name.starts_with(p.as_str())) {
            return Ok(self.constant(value));
        }
        Ok(self.push(value, Op::Param(name.to_owned()), true))
    }

    /// Same value as `v`, cut off from backpropagation.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// Adds the 1×n row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dim(
                "add_row",
                format!("1x{}", xv.cols()),
                format!("{}x{}", bv.rows(), bv.cols()),
            ));
        }
        let mut value = xv.clone();
        let b = bv.data();
        for r in 0..value.rows() {
            for (o, bi) in value.row_mut(r).iter_mut().zip(b) {
                *o += bi;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(value, Op::AddRow(x, bias), ng))
    }

    pub fn activate(&mut self, x: Var, act: Activation) -> Var {
        if act == Activation::Linear {
            return x;
        }
        let value = self.value(x).map(|v| act.apply(v));
        let ng = self.ng(x);
        self.push(value, Op::Activate(x, act), ng)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(
                name,
                format!("{:?}", av.shape()),
                format!("{:?}", bv.shape()),
            ));
        }
        let value = av.zip_map(bv, f)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, s), ng)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v + s);
        let ng = self.ng(x);
        self.push(value, Op::AddScalar(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        let ng = self.ng(x);
        self.push(value, Op::Exp(x), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let ng = self.ng(x);
        self.push(value, Op::Square(x), ng)
    }

    /// `max(0, x)`; the derivative at exactly zero is taken as zero.
    pub fn hinge(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(value, Op::Hinge(x), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_cols(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::ConcatCols(a, b), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(Error::dim("slice_cols", format!("range within 0..{}", xv.cols()), format!("{start}..{end}")));
        }
        let value = xv.slice_cols(start, end);
        let ng = self.ng(x);
        Ok(self.push(value, Op::SliceCols(x, start), ng))
    }

    pub fn vstack(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).vstack(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::VStack(a, b), ng))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::dim("gather_rows", format!("index < {}", xv.rows()), bad));
        }
        let value = xv.select_rows(&idx);
        let ng = self.ng(x);
        Ok(self.push(value, Op::GatherRows(x, idx), ng))
    }

    /// n×m → n×1 sum across columns.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f64> = xv.iter_rows().map(|r| r.iter().sum()).collect();
        let value = Tensor2::from_vec(xv.rows(), 1, data).expect("row count");
        let ng = self.ng(x);
        self.push(value, Op::RowSum(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor2::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(value, Op::Sum(x), ng)
    }

    /// Mean over all entries; an empty input yields 0.
    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = if xv.is_empty() { 0.0 } else { xv.sum() / xv.len() as f64 };
        let ng = self.ng(x);
        self.push(Tensor2::scalar(m), Op::Mean(x), ng)
    }

    /// `Σ wᵢ·xᵢ` over 1×1 nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            if self.value(v).shape() != (1, 1) {
                return Err(Error::dim("weighted_sum", "1x1 terms", format!("{:?}", self.value(v).shape())));
            }
            let scaled = if w == 1.0 { v } else { self.scale(v, w) };
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled)?,
            });
        }
        Ok(match acc {
            Some(a) => a,
            None => self.constant(Tensor2::scalar(0.0)),
        })
    }

    /// Propagates d`loss` back through the tape, accumulating parameter
    /// gradients into `store`. Consumes the graph.
    pub fn backward(self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let Graph { nodes, .. } = self;
        let Some(node) = nodes.get(loss.0) else {
            return Err(Error::State("backward called without a recorded forward trace".into()));
        };
        if node.value.shape() != (1, 1) {
            return Err(Error::dim("backward", "1x1 loss", format!("{:?}", node.value.shape())));
        }
        node.value.ensure_finite("loss")?;

        let mut grads: Vec<Option<Tensor2>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor2::scalar(1.0));

        let accumulate = |grads: &mut Vec<Option<Tensor2>>, v: Var, g: Tensor2| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g).expect("gradient shape"),
                slot @ None => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => store.accumulate_grad(name, &g)?,
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].needs_grad {
                        let mut ga = Tensor2::zeros(av.rows(), av.cols());
                        gemm(&g, false, bv, true, &mut ga, 0.0);
                        accumulate(&mut grads, *a, ga);
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = Tensor2::zeros(bv.rows(), bv.cols());
                        gemm(av, true, &g, false, &mut gb, 0.0);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(x, b) => {
                    if nodes[b.0].needs_grad {
                        let mut gb = Tensor2::zeros(1, g.cols());
                        for r in g.iter_rows() {
                            for (o, v) in gb.data_mut().iter_mut().zip(r) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Activate(x, act) => {
                    let gx = match act {
                        Activation::Linear => g,
                        Activation::LeakyRelu => g.zip_map(&nodes[x.0].value, |gi, xi| {
                            if xi > 0.0 {
                                gi
                            } else {
                                LEAKY_SLOPE * gi
                            }
                        })?,
                        Activation::Sigmoid => g.zip_map(&node.value, |gi, yi| gi * yi * (1.0 - yi))?,
                    };
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(&nodes[b.0].value, |gi, bi| gi * bi)?;
                    let gb = g.zip_map(&nodes[a.0].value, |gi, ai| gi * ai)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, g.scale(*s)),
                Op::AddScalar(x) => accumulate(&mut grads, *x, g),
                Op::Exp(x) => {
                    let gx = g.zip_map(&node.value, |gi, yi| gi * yi)?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Square(x) => {
                    let gx = g.zip_map(&nodes[x.0].value, |gi, xi| 2.0 * gi * xi)?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Hinge(x) => {
                    let gx = g.zip_map(&nodes[x.0].value, |gi, xi| if xi > 0.0 { gi } else { 0.0 })?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let split = nodes[a.0].value.cols();
                    let ga = g.slice_cols(0, split);
                    let gb = g.slice_cols(split, g.cols());
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SliceCols(x, start) => {
                    let xv = &nodes[x.0].value;
                    let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::VStack(a, b) => {
                    let (ar, cols) = (nodes[a.0].value.rows(), g.cols());
                    let data = g.data();
                    let ga = Tensor2::from_vec(ar, nodes[a.0].value.cols(), data[..ar * cols].to_vec())?;
                    let gb = Tensor2::from_vec(g.rows() - ar, nodes[b.0].value.cols(), data[ar * cols..].to_vec())?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::GatherRows(x, idx) => {
                    let xv = &nodes[x.0].value;
                    let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                    for (k, &src) in idx.iter().enumerate() {
                        for (o, v) in gx.row_mut(src).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowSum(x) => {
                    let xv = &nodes[x.0].value;
                    let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let gr = g.get(r, 0);
                        gx.row_mut(r).fill(gr);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let xv = &nodes[x.0].value;
                    accumulate(&mut grads, *x, Tensor2::filled(xv.rows(), xv.cols(), g.data()[0]));
                }
                Op::Mean(x) => {
                    let xv = &nodes[x.0].value;
                    let n = xv.len().max(1) as f64;
                    accumulate(&mut grads, *x, Tensor2::filled(xv.rows(), xv.cols(), g.data()[0] / n));
                }
            }
        }
        Ok(())
    }
}

/// `activation(input · W + b)` for the layer `layer_name`, whose parameters
/// are `{layer_name}.w` (in × out) and `{layer_name}.b` (1 × out).
pub fn dense_forward(
    g: &mut Graph,
    store: &ParamStore,
    layer_name: &str,
    input: Var,
    activation: Activation,
) -> Result<Var> {
    let w = g.param(store, &format!("{layer_name}.w"))?;
    let b = g.param(store, &format!("{layer_name}.b"))?;
    let (in_cols, w_rows) = (g.value(input).cols(), g.value(w).rows());
    if in_cols != w_rows {
        return Err(Error::dim("dense_forward", format!("{w_rows} input columns for {layer_name}"), in_cols));
    }
    let z = g.matmul(input, w)?;
    let z = g.add_row(z, b)?;
    Ok(g.activate(z, activation))
}
