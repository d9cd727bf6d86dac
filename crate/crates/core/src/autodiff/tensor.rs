use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{AutodiffError, Array};

/// Ordered record of the primitive operations applied to tracked tensors.
///
/// A record is confined to the thread that created it. It is freed once the
/// last tensor referring to it is dropped.
#[derive(Clone, Default)]
pub struct GradRecord {
    inner: Rc<RefCell<Vec<Node>>>,
}

pub(super) struct Node {
    pub(super) value: Rc<Array>,
    pub(super) kind: OpKind,
    pub(super) inputs: Vec<Input>,
}

#[derive(Clone)]
pub(super) struct Input {
    pub(super) id: Option<usize>,
    pub(super) value: Rc<Array>,
}

#[derive(Clone)]
pub(super) enum OpKind {
    Leaf,
    MatMul { transpose_lhs: bool, transpose_rhs: bool },
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar,
    Relu,
    Tanh,
    Sign,
    Log,
    Exp,
    Square,
    Recip,
    Clip { lo: f64, hi: f64 },
    BroadcastTo,
    SumTo,
    Reshape,
    SliceCols { start: usize },
    PadCols { start: usize },
    ConcatCols,
    Gather(Rc<[usize]>),
    Scatter(Rc<[usize]>),
}

impl GradRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a differentiable leaf (a parameter or an input we want
    /// gradients for).
    pub fn var(&self, value: Array) -> Tensor {
        let value = Rc::new(value);
        let id = self.push(Node {
            value: value.clone(),
            kind: OpKind::Leaf,
            inputs: Vec::new(),
        });
        Tensor {
            value,
            node: Some(NodeRef {
                record: self.clone(),
                id,
            }),
        }
    }

    /// Number of recorded operations, leaves included.
    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.inner.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub(super) fn same(&self, other: &GradRecord) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(super) fn with_node<R>(&self, id: usize, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.inner.borrow()[id])
    }

    pub(super) fn tensor_at(&self, id: usize) -> Tensor {
        let value = self.inner.borrow()[id].value.clone();
        Tensor {
            value,
            node: Some(NodeRef {
                record: self.clone(),
                id,
            }),
        }
    }
}

#[derive(Clone)]
pub(super) struct NodeRef {
    pub(super) record: GradRecord,
    pub(super) id: usize,
}

/// A dense value, optionally tracked by a [`GradRecord`].
///
/// Tensors without a record are constants: operations on constants only are
/// evaluated eagerly and leave no trace.
#[derive(Clone)]
pub struct Tensor {
    value: Rc<Array>,
    node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.value.shape())
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl From<Array> for Tensor {
    fn from(value: Array) -> Self {
        Self::constant(value)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tensor {
    pub fn constant(value: Array) -> Self {
        Self {
            value: Rc::new(value),
            node: None,
        }
    }

    pub(super) fn from_shared(value: Rc<Array>) -> Self {
        Self { value, node: None }
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(Array::scalar(value))
    }

    pub fn value(&self) -> &Array {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn record(&self) -> Option<&GradRecord> {
        self.node.as_ref().map(|n| &n.record)
    }

    pub(super) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    /// The same value, cut off from any record.
    pub fn detach(&self) -> Tensor {
        Tensor {
            value: self.value.clone(),
            node: None,
        }
    }

    fn emit(kind: OpKind, value: Array, inputs: &[&Tensor]) -> Tensor {
        let mut record: Option<&GradRecord> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                match record {
                    None => record = Some(&n.record),
                    Some(r) => assert!(
                        r.same(&n.record),
                        "tensors from different gradient records combined"
                    ),
                }
            }
        }
        let value = Rc::new(value);
        let Some(record) = record else {
            return Tensor { value, node: None };
        };
        let record = record.clone();
        let id = record.push(Node {
            value: value.clone(),
            kind,
            inputs: inputs
                .iter()
                .map(|t| Input {
                    id: t.node_id(),
                    value: t.value.clone(),
                })
                .collect(),
        });
        Tensor {
            value,
            node: Some(NodeRef { record, id }),
        }
    }

    fn unary(&self, kind: OpKind, f: impl Fn(f64) -> f64) -> Tensor {
        let value = self.value.map(f);
        Self::emit(kind, value, &[self])
    }

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        kind: OpKind,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        if self.shape() != other.shape() {
            return Err(shape_err(op, self, other));
        }
        let value = self.value.zip_map(&other.value, f);
        Ok(Self::emit(kind, value, &[self, other]))
    }

    /// Matrix product `self · other` of rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        self.matmul_t(other, false, false)
    }

    /// Matrix product with either operand optionally transposed.
    pub fn matmul_t(
        &self,
        other: &Tensor,
        transpose_lhs: bool,
        transpose_rhs: bool,
    ) -> Result<Tensor, AutodiffError> {
        let value = self.value.matmul(&other.value, transpose_lhs, transpose_rhs)?;
        Ok(Self::emit(
            OpKind::MatMul {
                transpose_lhs,
                transpose_rhs,
            },
            value,
            &[self, other],
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        self.binary(other, "add", OpKind::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        self.binary(other, "sub", OpKind::Sub, |a, b| a - b)
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        self.binary(other, "ewise_mul", OpKind::Mul, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(OpKind::Scale(c), |v| c * v)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(OpKind::AddScalar, |v| v + c)
    }

    /// `max(0, x)`; the derivative at exactly zero is taken as zero.
    pub fn relu(&self) -> Tensor {
        self.unary(OpKind::Relu, |v| v.max(0.0))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(OpKind::Tanh, f64::tanh)
    }

    /// `+1` for non-negative entries, `-1` for negative ones.
    ///
    /// Exact zeros map to `+1`. The operation passes no gradient: anything
    /// upstream of it receives an exactly zero adjoint through this path.
    pub fn sign_gate(&self) -> Tensor {
        self.unary(OpKind::Sign, |v| if v < 0.0 { -1.0 } else { 1.0 })
    }

    /// Natural logarithm. Non-positive inputs yield `-inf`/`NaN` as in `f64::ln`.
    pub fn log(&self) -> Tensor {
        self.unary(OpKind::Log, f64::ln)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(OpKind::Exp, f64::exp)
    }

    pub fn square(&self) -> Tensor {
        self.unary(OpKind::Square, |v| v * v)
    }

    pub fn recip(&self) -> Tensor {
        self.unary(OpKind::Recip, |v| 1.0 / v)
    }

    /// Clamps into `[lo, hi]`; the gradient is passed only strictly inside.
    pub fn clip(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(OpKind::Clip { lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        let value = self.value.reshaped(shape)?;
        Ok(Self::emit(OpKind::Reshape, value, &[self]))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        self.sum_to(&[]).expect("any shape reduces to a scalar")
    }

    pub fn mean(&self) -> Tensor {
        let n = self.value.len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Repeats a tensor along unit (or missing, for scalars) dimensions.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let value = broadcast_array(&self.value, shape)?;
        Ok(Self::emit(OpKind::BroadcastTo, value, &[self]))
    }

    /// Sums over the dimensions that are 1 in `shape` (all of them for a
    /// rank-0 target). Inverse of [`Tensor::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let value = sum_array_to(&self.value, shape)?;
        Ok(Self::emit(OpKind::SumTo, value, &[self]))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor, AutodiffError> {
        let (rows, cols) = self.matrix_dims("slice_cols")?;
        if start + len > cols {
            return Err(AutodiffError::Shape {
                op: "slice_cols",
                lhs: self.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let src = self.value.data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let value = Array::new(vec![rows, len], data)?;
        Ok(Self::emit(OpKind::SliceCols { start }, value, &[self]))
    }

    /// Embeds a matrix into a zero matrix with `total` columns, starting at
    /// column `start`.
    pub fn pad_cols(&self, start: usize, total: usize) -> Result<Tensor, AutodiffError> {
        let (rows, cols) = self.matrix_dims("pad_cols")?;
        if start + cols > total {
            return Err(AutodiffError::Shape {
                op: "pad_cols",
                lhs: self.shape().to_vec(),
                rhs: vec![start, total],
            });
        }
        let src = self.value.data();
        let mut data = vec![0.0; rows * total];
        for r in 0..rows {
            data[r * total + start..r * total + start + cols]
                .copy_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let value = Array::new(vec![rows, total], data)?;
        Ok(Self::emit(OpKind::PadCols { start }, value, &[self]))
    }

    /// Joins two matrices with equal row counts side by side.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        let (ra, ca) = self.matrix_dims("concat")?;
        let (rb, cb) = other.matrix_dims("concat")?;
        if ra != rb {
            return Err(shape_err("concat", self, other));
        }
        let (a, b) = (self.value.data(), other.value.data());
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&a[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&b[r * cb..(r + 1) * cb]);
        }
        let value = Array::new(vec![ra, ca + cb], data)?;
        Ok(Self::emit(OpKind::ConcatCols, value, &[self, other]))
    }

    /// Picks `self[r, index[r]]` for every row `r`, giving a vector.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor, AutodiffError> {
        let (rows, cols) = self.matrix_dims("gather")?;
        if index.len() != rows || index.iter().any(|&i| i >= cols) {
            return Err(AutodiffError::Index {
                op: "gather",
                shape: self.shape().to_vec(),
            });
        }
        let src = self.value.data();
        let data = index
            .iter()
            .enumerate()
            .map(|(r, &c)| src[r * cols + c])
            .collect();
        let value = Array::vector(data);
        Ok(Self::emit(OpKind::Gather(index.into()), value, &[self]))
    }

    /// Places vector entry `r` at `[r, index[r]]` of a zero `rows × cols` matrix.
    pub fn scatter_rows(&self, index: &[usize], cols: usize) -> Result<Tensor, AutodiffError> {
        let rows = self.value.len();
        if self.shape().len() != 1 || index.len() != rows || index.iter().any(|&i| i >= cols) {
            return Err(AutodiffError::Index {
                op: "scatter",
                shape: self.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; rows * cols];
        for (r, (&c, &v)) in index.iter().zip(self.value.data()).enumerate() {
            data[r * cols + c] = v;
        }
        let value = Array::new(vec![rows, cols], data)?;
        Ok(Self::emit(OpKind::Scatter(index.into()), value, &[self]))
    }

    /// Row-wise `log softmax` of a `batch × classes` matrix.
    pub fn log_softmax_rows(&self) -> Result<Tensor, AutodiffError> {
        let (rows, cols) = self.matrix_dims("log_softmax")?;
        let src = self.value.data();
        let row_max: Vec<f64> = (0..rows)
            .map(|r| {
                src[r * cols..(r + 1) * cols]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        // The shift is a constant; log-softmax is invariant to it.
        let shift = Tensor::constant(Array::new(vec![rows, 1], row_max)?)
            .broadcast_to(&[rows, cols])?;
        let shifted = self.sub(&shift)?;
        let lse = shifted.exp().sum_to(&[rows, 1])?.log();
        shifted.sub(&lse.broadcast_to(&[rows, cols])?)
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize), AutodiffError> {
        self.value.dims2().ok_or_else(|| AutodiffError::Shape {
            op,
            lhs: self.shape().to_vec(),
            rhs: vec![],
        })
    }
}

/// Per-dimension strides of `src` viewed inside `target`, with zero stride
/// along broadcast dimensions.
fn broadcast_strides(src: &[usize], target: &[usize]) -> Option<Vec<usize>> {
    let numel: usize = src.iter().product();
    if numel == 1 {
        return Some(vec![0; target.len()]);
    }
    if src.len() != target.len() {
        return None;
    }
    let mut strides = vec![0; src.len()];
    let mut acc = 1;
    for d in (0..src.len()).rev() {
        if src[d] == target[d] {
            strides[d] = acc;
        } else if src[d] != 1 {
            return None;
        }
        acc *= src[d];
    }
    Some(strides)
}

fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0; shape.len()];
    for flat in 0..total {
        f(flat, &idx);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn broadcast_array(src: &Array, target: &[usize]) -> Result<Array, AutodiffError> {
    let strides = broadcast_strides(src.shape(), target).ok_or_else(|| AutodiffError::Shape {
        op: "broadcast",
        lhs: src.shape().to_vec(),
        rhs: target.to_vec(),
    })?;
    let total: usize = target.iter().product();
    let mut data = Vec::with_capacity(total);
    let s = src.data();
    for_each_index(target, |_, idx| {
        let off: usize = idx.iter().zip(&strides).map(|(i, st)| i * st).sum();
        data.push(s[off]);
    });
    Array::new(target.to_vec(), data)
}

fn sum_array_to(src: &Array, target: &[usize]) -> Result<Array, AutodiffError> {
    let strides = broadcast_strides(target, src.shape()).ok_or_else(|| AutodiffError::Shape {
        op: "sum_to",
        lhs: src.shape().to_vec(),
        rhs: target.to_vec(),
    })?;
    let mut data = vec![0.0; target.iter().product()];
    let s = src.data();
    for_each_index(src.shape(), |flat, idx| {
        let off: usize = idx.iter().zip(&strides).map(|(i, st)| i * st).sum();
        data[off] += s[flat];
    });
    Array::new(target.to_vec(), data)
}
