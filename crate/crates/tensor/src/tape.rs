use serde::{Deserialize, Serialize};

use crate::{Matrix, ParameterStore, Result, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// ELU with alpha = 1, which is continuously differentiable at zero.
    #[default]
    Elu,
    Tanh,
    /// Leaky ReLU with negative slope 0.2.
    LeakyRelu,
}

const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    /// Derivative given the input `x` and the output `y = apply(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "none" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            "tanh" => Ok(Activation::Tanh),
            "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyRelu),
            other => Err(TensorError::Invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ConcatCols(Vec<Var>),
    RowSoftmax(Var),
    MaskedRowSoftmax(Var, Vec<bool>),
    RowLogSoftmax(Var),
    Activate(Var, Activation),
    MaskedFill(Var, Vec<bool>),
    Scale(Var, f64),
    GatherRows(Var, Vec<usize>),
    ScatterEntries(Var, Vec<(usize, usize)>),
    Pick(Var, Vec<(usize, usize)>),
    SumCols(Var),
    ReduceSum(Var),
    Transpose(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
    param: Option<String>,
}

/// Records primitive operations in topological (creation) order so that a
/// single reverse sweep yields exact gradients.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value that needs one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
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

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NumericFault { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// A value that does not receive gradients.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// A free input that receives gradients.
    pub fn leaf(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// Loads a named slot. Frozen slots enter the tape detached, so their
    /// gradient is exactly zero.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        let slot = store
            .slot(name)
            .ok_or_else(|| TensorError::MissingSlot(name.to_string()))?;
        let var = self.push(slot.value.clone(), Op::Leaf, !slot.frozen, "param")?;
        self.nodes[var.0].param = Some(name.to_string());
        Ok(var)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Matmul(a, b), needs, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs, "add")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs, "mul")
    }

    /// Adds a `1 x d` row to every row of an `n x d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != m.cols() {
            return Err(TensorError::Dimension {
                op: "add_row",
                left: m.shape(),
                right: r.shape(),
            });
        }
        let mut value = m.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        let needs = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), needs, "add_row")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_cols of zero inputs".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(TensorError::Dimension {
                    op: "concat_cols",
                    left: self.value(*first).shape(),
                    right: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.value(*p).row(i);
                value.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), needs, "concat_cols")
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mask = vec![true; x.rows() * x.cols()];
        let value = masked_softmax(x, &mask);
        let needs = self.needs(a);
        self.push(value, Op::RowSoftmax(a), needs, "row_softmax")
    }

    /// Softmax over the entries of each row where `mask` is true. Entries
    /// outside the mask are exactly zero; a row with an empty mask is all zero.
    pub fn masked_row_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(a);
        check_mask(x, mask, "masked_row_softmax")?;
        let value = masked_softmax(x, mask);
        let needs = self.needs(a);
        self.push(value, Op::MaskedRowSoftmax(a, mask.to_vec()), needs, "masked_row_softmax")
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut value = x.clone();
        for i in 0..x.rows() {
            let row = x.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in value.row_mut(i) {
                *v -= lse;
            }
        }
        let needs = self.needs(a);
        self.push(value, Op::RowLogSoftmax(a), needs, "row_log_softmax")
    }

    pub fn activate(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let value = self.value(a).map(|v| kind.apply(v));
        let needs = self.needs(a);
        self.push(value, Op::Activate(a, kind), needs, "activate")
    }

    /// Replaces entries where `mask` is true with the finite `fill` value.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], fill: f64) -> Result<Var> {
        if !fill.is_finite() {
            return Err(TensorError::Invalid("masked_fill value must be finite".into()));
        }
        let x = self.value(a);
        check_mask(x, mask, "masked_fill")?;
        let mut value = x.clone();
        for (v, &m) in value.data_mut().iter_mut().zip(mask) {
            if m {
                *v = fill;
            }
        }
        let needs = self.needs(a);
        self.push(value, Op::MaskedFill(a, mask.to_vec()), needs, "masked_fill")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v * factor);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, factor), needs, "scale")
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let mut value = Matrix::zeros(indices.len(), x.cols());
        for (k, &i) in indices.iter().enumerate() {
            if i >= x.rows() {
                return Err(TensorError::Invalid(format!(
                    "gather_rows index {i} out of range for {} rows",
                    x.rows()
                )));
            }
            value.row_mut(k).copy_from_slice(x.row(i));
        }
        let needs = self.needs(a);
        self.push(value, Op::GatherRows(a, indices.to_vec()), needs, "gather_rows")
    }

    /// Scatters a `k x 1` column into a zero `rows x cols` matrix at the given
    /// positions (duplicates accumulate).
    pub fn scatter_entries(&mut self, src: Var, positions: &[(usize, usize)], rows: usize, cols: usize) -> Result<Var> {
        let s = self.value(src);
        if s.cols() != 1 || s.rows() != positions.len() {
            return Err(TensorError::Dimension {
                op: "scatter_entries",
                left: s.shape(),
                right: (positions.len(), 1),
            });
        }
        let mut value = Matrix::zeros(rows, cols);
        for (k, &(i, j)) in positions.iter().enumerate() {
            if i >= rows || j >= cols {
                return Err(TensorError::Invalid(format!(
                    "scatter position ({i}, {j}) outside {rows}x{cols}"
                )));
            }
            value[(i, j)] += s[(k, 0)];
        }
        let needs = self.needs(src);
        self.push(value, Op::ScatterEntries(src, positions.to_vec()), needs, "scatter_entries")
    }

    /// Reads the entries at `positions` into a `k x 1` column.
    pub fn pick(&mut self, a: Var, positions: &[(usize, usize)]) -> Result<Var> {
        let x = self.value(a);
        let mut value = Matrix::zeros(positions.len(), 1);
        for (k, &(i, j)) in positions.iter().enumerate() {
            if i >= x.rows() || j >= x.cols() {
                return Err(TensorError::Invalid(format!(
                    "pick position ({i}, {j}) outside {:?}",
                    x.shape()
                )));
            }
            value[(k, 0)] = x[(i, j)];
        }
        let needs = self.needs(a);
        self.push(value, Op::Pick(a, positions.to_vec()), needs, "pick")
    }

    /// Row sums: `n x d -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut value = Matrix::zeros(x.rows(), 1);
        for i in 0..x.rows() {
            value[(i, 0)] = x.row(i).iter().sum();
        }
        let needs = self.needs(a);
        self.push(value, Op::SumCols(a), needs, "sum_cols")
    }

    pub fn reduce_sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::ReduceSum(a), needs, "reduce_sum")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(value, Op::Transpose(a), needs, "transpose")
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar output, got {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut send = |var: Var, contribution: Matrix| -> Result<()> {
            if !self.nodes[var.0].needs_grad {
                return Ok(());
            }
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&contribution),
                slot @ None => {
                    *slot = Some(contribution);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                if self.needs(*a) {
                    send(*a, g.matmul(&self.value(*b).transpose())?)?;
                }
                if self.needs(*b) {
                    send(*b, self.value(*a).transpose().matmul(g)?)?;
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.clone())?;
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    send(*a, g.zip_map(self.value(*b), "mul_backward", |x, y| x * y)?)?;
                }
                if self.needs(*b) {
                    send(*b, g.zip_map(self.value(*a), "mul_backward", |x, y| x * y)?)?;
                }
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone())?;
                if self.needs(*row) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    send(*row, db)?;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut part = Matrix::zeros(g.rows(), cols);
                        for i in 0..g.rows() {
                            part.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cols]);
                        }
                        send(*p, part)?;
                    }
                    offset += cols;
                }
            }
            Op::RowSoftmax(a) => {
                let mask = vec![true; g.rows() * g.cols()];
                send(*a, softmax_backward(&node.value, g, &mask))?;
            }
            Op::MaskedRowSoftmax(a, mask) => {
                send(*a, softmax_backward(&node.value, g, mask))?;
            }
            Op::RowLogSoftmax(a) => {
                let y = &node.value;
                let mut dx = g.clone();
                for i in 0..g.rows() {
                    let gsum: f64 = g.row(i).iter().sum();
                    for (d, ly) in dx.row_mut(i).iter_mut().zip(y.row(i)) {
                        *d -= ly.exp() * gsum;
                    }
                }
                send(*a, dx)?;
            }
            Op::Activate(a, kind) => {
                let x = self.value(*a);
                let y = &node.value;
                let mut dx = g.clone();
                for ((d, &xv), &yv) in dx.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *d *= kind.derivative(xv, yv);
                }
                send(*a, dx)?;
            }
            Op::MaskedFill(a, mask) => {
                let mut dx = g.clone();
                for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                    if m {
                        *d = 0.0;
                    }
                }
                send(*a, dx)?;
            }
            Op::Scale(a, factor) => send(*a, g.map(|v| v * factor))?,
            Op::GatherRows(a, indices) => {
                let x = self.value(*a);
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for (k, &i) in indices.iter().enumerate() {
                    for (d, v) in dx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                send(*a, dx)?;
            }
            Op::ScatterEntries(src, positions) => {
                let mut ds = Matrix::zeros(positions.len(), 1);
                for (k, &(i, j)) in positions.iter().enumerate() {
                    ds[(k, 0)] = g[(i, j)];
                }
                send(*src, ds)?;
            }
            Op::Pick(a, positions) => {
                let x = self.value(*a);
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for (k, &(i, j)) in positions.iter().enumerate() {
                    dx[(i, j)] += g[(k, 0)];
                }
                send(*a, dx)?;
            }
            Op::SumCols(a) => {
                let x = self.value(*a);
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    dx.row_mut(i).iter_mut().for_each(|d| *d = g[(i, 0)]);
                }
                send(*a, dx)?;
            }
            Op::ReduceSum(a) => {
                let (r, c) = self.value(*a).shape();
                send(*a, Matrix::filled(r, c, g[(0, 0)]))?;
            }
            Op::Transpose(a) => send(*a, g.transpose())?,
        }
        Ok(())
    }

    /// Adds the gradient of every parameter leaf into its slot's gradient
    /// buffer. A slot loaded several times accumulates all contributions.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParameterStore) -> Result<()> {
        for (idx, node) in self.nodes.iter().enumerate() {
            let (Some(name), Some(g)) = (&node.param, grads.grads[idx].as_ref()) else {
                continue;
            };
            let slot = store
                .slot_mut(name)
                .ok_or_else(|| TensorError::MissingSlot(name.clone()))?;
            if !slot.frozen {
                slot.grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}

fn check_mask(x: &Matrix, mask: &[bool], op: &'static str) -> Result<()> {
    if mask.len() != x.rows() * x.cols() {
        return Err(TensorError::Dimension {
            op,
            left: x.shape(),
            right: (mask.len(), 1),
        });
    }
    Ok(())
}

fn masked_softmax(x: &Matrix, mask: &[bool]) -> Matrix {
    let cols = x.cols();
    let mut out = Matrix::zeros(x.rows(), cols);
    for i in 0..x.rows() {
        let row = x.row(i);
        let m = &mask[i * cols..(i + 1) * cols];
        let max = row
            .iter()
            .zip(m)
            .filter(|(_, &on)| on)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        let out_row = out.row_mut(i);
        for j in 0..cols {
            if m[j] {
                let e = (row[j] - max).exp();
                out_row[j] = e;
                total += e;
            }
        }
        for v in out_row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn softmax_backward(y: &Matrix, g: &Matrix, mask: &[bool]) -> Matrix {
    let cols = y.cols();
    let mut dx = Matrix::zeros(y.rows(), cols);
    for i in 0..y.rows() {
        let yr = y.row(i);
        let gr = g.row(i);
        let m = &mask[i * cols..(i + 1) * cols];
        let dot: f64 = (0..cols).filter(|&j| m[j]).map(|j| yr[j] * gr[j]).sum();
        let dr = dx.row_mut(i);
        for j in 0..cols {
            if m[j] {
                dr[j] = yr[j] * (gr[j] - dot);
            }
        }
    }
    dx
}
