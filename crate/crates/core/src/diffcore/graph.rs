//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid reverse topological order. All reductions run in index order, which
//! keeps forward and backward passes bitwise reproducible.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Dense 2-D tensor. Vectors are stored as `1×d` rows.
pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Graph`].
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
    /// `x · wᵀ` with `w` stored out×in.
    MatMulT { x: Var, w: Var },
    /// Adds a `1×d` row to every row of `x`.
    AddRow { x: Var, row: Var },
    Tanh(Var),
    Sigmoid(Var),
    /// Max over consecutive groups of `set_size` rows. `argmax[b * d + j]` is
    /// the winning row of `x` for output `(b, j)`.
    MaxPoolSets { x: Var, argmax: Vec<usize> },
    /// Repeats each row of `x` `times` times in place.
    RepeatRows { x: Var, times: usize },
    ConcatCols(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, materialising zeros when it was not reached.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "{op}: operand shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Column-wise max over groups of `set_size` consecutive rows.
///
/// Ties go to the lowest row index. Returns the pooled `groups×d` matrix and
/// the flat winner table.
pub(crate) fn pool_sets(x: &Tensor, set_size: usize) -> Result<(Tensor, Vec<usize>)> {
    let (rows, d) = x.dim();
    if set_size == 0 || rows == 0 {
        return Err(Error::Empty("max-pool over an empty point set".into()));
    }
    if rows % set_size != 0 {
        return Err(Error::Contract(format!(
            "max-pool: {rows} rows do not split into sets of {set_size}"
        )));
    }
    let groups = rows / set_size;
    let mut pooled = Tensor::zeros((groups, d));
    let mut argmax = vec![0usize; groups * d];
    for g in 0..groups {
        let base = g * set_size;
        for j in 0..d {
            let mut best = base;
            let mut best_val = x[[base, j]];
            for r in base + 1..base + set_size {
                let v = x[[r, j]];
                if v > best_val {
                    best_val = v;
                    best = r;
                }
            }
            pooled[[g, j]] = best_val;
            argmax[g * d + j] = best;
        }
    }
    Ok((pooled, argmax))
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ncols() != wv.ncols() {
            return Err(Error::Contract(format!(
                "dense layer expects input width {}, got {}",
                wv.ncols(),
                xv.ncols()
            )));
        }
        let out = xv.dot(&wv.t());
        Ok(self.push(out, Op::MatMulT { x, w }))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != xv.ncols() {
            return Err(Error::Contract(format!(
                "row broadcast: {:?} onto {:?}",
                rv.dim(),
                xv.dim()
            )));
        }
        let out = xv + rv;
        Ok(self.push(out, Op::AddRow { x, row }))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Max-pools consecutive groups of `set_size` rows into one row each.
    pub fn maxpool_sets(&mut self, x: Var, set_size: usize) -> Result<Var> {
        let (pooled, argmax) = pool_sets(self.value(x), set_size)?;
        Ok(self.push(pooled, Op::MaxPoolSets { x, argmax }))
    }

    /// Repeats every row `times` times, so a per-set feature lines up with
    /// the per-point rows of its set.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::Contract("repeat_rows with zero repeats".into()));
        }
        let xv = self.value(x);
        let (rows, d) = xv.dim();
        let mut out = Tensor::zeros((rows * times, d));
        for r in 0..rows {
            let src = xv.row(r);
            for k in 0..times {
                out.row_mut(r * times + k).assign(&src);
            }
        }
        Ok(self.push(out, Op::RepeatRows { x, times }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.nrows() != bv.nrows() {
            return Err(Error::Contract(format!(
                "concat: row counts {} and {} differ",
                av.nrows(),
                bv.nrows()
            )));
        }
        let out = ndarray::concatenate(Axis(1), &[av.view(), bv.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x) * c;
        self.push(out, Op::Scale(x, c))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v * v);
        self.push(out, Op::Square(x))
    }

    /// Sum of all entries as a `1×1` tensor, accumulated in row-major order.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().fold(0.0, |acc, v| acc + v);
        self.push(Tensor::from_elem((1, 1), total), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.len().max(1) as f64;
        let total = v.iter().fold(0.0, |acc, v| acc + v);
        self.push(Tensor::from_elem((1, 1), total / n), Op::Mean(x))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.dim()
            )));
        }
        self.backward_from(&[(loss, Tensor::from_elem((1, 1), 1.0))])
    }

    /// Reverse pass seeded with explicit output gradients. Used when the
    /// gradient of a loss with respect to network outputs is known in closed
    /// form.
    pub fn backward_from(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (var, seed) in seeds {
            same_shape("backward seed", self.value(*var), seed)?;
            accumulate(&mut grads, *var, seed.clone());
            last = last.max(var.0);
        }
        for idx in (0..=last).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    // Leaves keep their gradient; intermediates drop theirs
                    // once propagated.
                    grads[idx] = Some(dy);
                }
                Op::MatMulT { x, w } => {
                    let dx = dy.dot(self.value(*w));
                    let dw = dy.t().dot(self.value(*x));
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                }
                Op::AddRow { x, row } => {
                    let mut drow = Tensor::zeros((1, dy.ncols()));
                    for r in dy.rows() {
                        drow.row_mut(0).zip_mut_with(&r, |a, b| *a += b);
                    }
                    accumulate(&mut grads, *row, drow);
                    accumulate(&mut grads, *x, dy.clone());
                }
                Op::Tanh(x) => {
                    let mut dx = dy.clone();
                    Zip::from(&mut dx)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = dy.clone();
                    Zip::from(&mut dx)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPoolSets { x, argmax } => {
                    let xv = self.value(*x);
                    let d = xv.ncols();
                    let mut dx = Tensor::zeros(xv.dim());
                    for (g, row) in dy.rows().into_iter().enumerate() {
                        for j in 0..d {
                            dx[[argmax[g * d + j], j]] += row[j];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::RepeatRows { x, times } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.dim());
                    for r in 0..xv.nrows() {
                        let mut acc = dx.row_mut(r);
                        for k in 0..*times {
                            acc.zip_mut_with(&dy.row(r * times + k), |a, b| *a += b);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).ncols();
                    accumulate(&mut grads, *a, dy.slice(s![.., ..split]).to_owned());
                    accumulate(&mut grads, *b, dy.slice(s![.., split..]).to_owned());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&dy);
                    accumulate(&mut grads, *a, dy);
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, &dy * self.value(*b));
                    accumulate(&mut grads, *b, &dy * self.value(*a));
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, dy * *c),
                Op::Square(x) => {
                    let dx = &dy * &(self.value(*x) * 2.0);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let g = dy[[0, 0]];
                    accumulate(&mut grads, *x, Tensor::from_elem(self.value(*x).dim(), g));
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let g = dy[[0, 0]] / xv.len().max(1) as f64;
                    accumulate(&mut grads, *x, Tensor::from_elem(xv.dim(), g));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Logistic function, kept strictly inside (0, 1) even where the exact
/// value rounds to an endpoint.
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Set max-pooling over the rows of `features` (`n_points×d`).
///
/// Returns the pooled `1×d` row and, per feature column, the index of the
/// winning point. Ties resolve to the lowest point index.
pub fn maxpool_set(features: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let n = features.nrows();
    pool_sets(features, n)
}
