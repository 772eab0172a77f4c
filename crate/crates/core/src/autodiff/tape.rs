use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::matrix::{gemm_acc, Matrix};

/// Handle to a value recorded on a [`Tape`]. Values are row-major matrices;
/// scalars are `1×1` and per-row quantities are `r×1` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    ConcatCols(Tensor, Tensor),
    Sigmoid(Tensor),
    Exp(Tensor),
    Log(Tensor),
    Relu(Tensor),
    Softplus(Tensor),
    Sqrt(Tensor),
    GatherRows(Tensor, Vec<usize>),
    SegmentSum(Tensor, Vec<usize>),
    SegmentSoftmax(Tensor, Vec<usize>, usize),
    RowDot(Tensor, Tensor),
    SumAll(Tensor),
    SumCols(Tensor),
    LogSumExpRows(Tensor),
    LogSoftmaxRows(Tensor),
    SoftmaxRows(Tensor),
    BroadcastRows(Tensor),
    GaussianLogDensity(Tensor, Tensor, Tensor),
    MixtureLogDensity {
        z: Tensor,
        logits: Tensor,
        means: Tensor,
        var: Tensor,
        /// Component responsibilities, `rows × m`.
        resp: Vec<f64>,
    },
    BceWithLogits(Tensor, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Gradients accumulate across repeated `backward` calls until
/// [`Tape::zero_grad`] is called.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Tensor {
        debug_assert_eq!(value.len(), rows * cols);
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Tensor { id, rows, cols }
    }

    fn rg(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.nodes[t.id].requires_grad)
    }

    pub fn value(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.id].value
    }

    pub fn scalar(&self, t: Tensor) -> f64 {
        assert_eq!(t.len(), 1, "tensor is not a scalar");
        self.nodes[t.id].value[0]
    }

    pub fn to_matrix(&self, t: Tensor) -> Matrix {
        Matrix::from_vec(t.rows, t.cols, self.value(t).to_vec())
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    /// Accumulated gradient with respect to the leaf `t`, or `None` when nothing
    /// flowed into it. Interior nodes do not retain gradients.
    pub fn grad(&self, t: Tensor) -> Option<&[f64]> {
        self.grads[t.id].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ----- leaves -----

    pub fn leaf(&mut self, m: &Matrix, requires_grad: bool) -> Tensor {
        self.push(m.rows, m.cols, m.data.clone(), Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, m: &Matrix) -> Tensor {
        self.leaf(m, true)
    }

    pub fn constant(&mut self, m: &Matrix) -> Tensor {
        self.leaf(m, false)
    }

    pub fn from_vec(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Tensor {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        self.push(rows, cols, data, Op::Leaf, requires_grad)
    }

    // ----- binary ops -----

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(a.cols, b.rows, "matmul shape mismatch {:?} x {:?}", a.shape(), b.shape());
        let mut out = vec![0.0; a.rows * b.cols];
        gemm_acc(self.value(a), self.value(b), &mut out, a.rows, a.cols, b.cols);
        let rg = self.rg(&[a, b]);
        self.push(a.rows, b.cols, out, Op::MatMul(a, b), rg)
    }

    fn zip_with(&mut self, a: Tensor, b: Tensor, f: impl Fn(f64, f64) -> f64, op: Op) -> Tensor {
        assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(&[a, b]);
        self.push(a.rows, a.cols, out, op, rg)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + 1·row`, broadcasting a `1×c` row over every row of `a`.
    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Tensor {
        assert!(row.rows == 1 && row.cols == a.cols, "add_row expects a 1x{} row", a.cols);
        let r = self.value(row);
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_mut(a.cols.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(a.rows, a.cols, out, Op::AddRow(a, row), rg)
    }

    /// Concatenates along columns: `[a | b]`.
    pub fn concat_cols(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(a.rows, b.rows, "concat_cols row mismatch");
        let cols = a.cols + b.cols;
        let mut out = Vec::with_capacity(a.rows * cols);
        for r in 0..a.rows {
            out.extend_from_slice(&self.value(a)[r * a.cols..(r + 1) * a.cols]);
            out.extend_from_slice(&self.value(b)[r * b.cols..(r + 1) * b.cols]);
        }
        let rg = self.rg(&[a, b]);
        self.push(a.rows, cols, out, Op::ConcatCols(a, b), rg)
    }

    /// Row-wise inner products, `r×c · r×c -> r×1`.
    pub fn row_dot(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(a.shape(), b.shape(), "row_dot shape mismatch");
        let c = a.cols;
        let (va, vb) = (self.value(a), self.value(b));
        let out = (0..a.rows)
            .map(|r| {
                va[r * c..(r + 1) * c]
                    .iter()
                    .zip(&vb[r * c..(r + 1) * c])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let rg = self.rg(&[a, b]);
        self.push(a.rows, 1, out, Op::RowDot(a, b), rg)
    }

    // ----- unary ops -----

    fn map(&mut self, a: Tensor, f: impl Fn(f64) -> f64, op: Op) -> Tensor {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a]);
        self.push(a.rows, a.cols, out, op, rg)
    }

    pub fn scale(&mut self, a: Tensor, s: f64) -> Tensor {
        self.map(a, |x| s * x, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Tensor) -> Tensor {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Tensor, s: f64) -> Tensor {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Tensor) -> Tensor {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Tensor) -> Tensor {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, a: Tensor) -> Tensor {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: Tensor) -> Tensor {
        self.map(a, f64::sqrt, Op::Sqrt(a))
    }

    // ----- indexing and reductions -----

    /// Selects rows of `a` by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Tensor, idx: &[usize]) -> Tensor {
        let c = a.cols;
        let va = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < a.rows, "gather index {i} out of range {}", a.rows);
            out.extend_from_slice(&va[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[a]);
        self.push(idx.len(), c, out, Op::GatherRows(a, idx.to_vec()), rg)
    }

    /// Sums rows of `a` into `num_segments` output rows: row `e` is added to
    /// output row `segments[e]`.
    pub fn segment_sum(&mut self, a: Tensor, segments: &[usize], num_segments: usize) -> Tensor {
        assert_eq!(segments.len(), a.rows, "one segment id per row");
        let c = a.cols;
        let va = self.value(a);
        let mut out = vec![0.0; num_segments * c];
        for (e, &s) in segments.iter().enumerate() {
            assert!(s < num_segments, "segment id {s} out of range");
            for (o, &x) in out[s * c..(s + 1) * c].iter_mut().zip(&va[e * c..(e + 1) * c]) {
                *o += x;
            }
        }
        let rg = self.rg(&[a]);
        self.push(num_segments, c, out, Op::SegmentSum(a, segments.to_vec()), rg)
    }

    /// Softmax of an `E×1` score column within groups sharing a segment id.
    /// Every segment in `0..num_segments` must be non-empty.
    pub fn segment_softmax(&mut self, scores: Tensor, segments: &[usize], num_segments: usize) -> Tensor {
        assert_eq!(scores.cols, 1, "segment_softmax expects a score column");
        assert_eq!(segments.len(), scores.rows, "one segment id per score");
        let vs = self.value(scores);
        let mut max = vec![f64::NEG_INFINITY; num_segments];
        for (&s, &x) in segments.iter().zip(vs) {
            assert!(s < num_segments, "segment id {s} out of range");
            max[s] = max[s].max(x);
        }
        assert!(
            max.iter().all(|m| *m > f64::NEG_INFINITY),
            "segment_softmax called with an empty segment"
        );
        let mut out: Vec<f64> = segments.iter().zip(vs).map(|(&s, &x)| (x - max[s]).exp()).collect();
        let mut sum = vec![0.0; num_segments];
        for (&s, &e) in segments.iter().zip(&out) {
            sum[s] += e;
        }
        for (&s, o) in segments.iter().zip(out.iter_mut()) {
            *o /= sum[s];
        }
        let rg = self.rg(&[scores]);
        self.push(
            scores.rows,
            1,
            out,
            Op::SegmentSoftmax(scores, segments.to_vec(), num_segments),
            rg,
        )
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(1, 1, vec![s], Op::SumAll(a), rg)
    }

    /// Per-row sums, `r×c -> r×1`.
    pub fn sum_cols(&mut self, a: Tensor) -> Tensor {
        let c = a.cols.max(1);
        let out = self.value(a).chunks(c).map(|r| r.iter().sum()).collect();
        let rg = self.rg(&[a]);
        self.push(a.rows, 1, out, Op::SumCols(a), rg)
    }

    /// Per-row log-sum-exp, `r×c -> r×1`, stabilized by the row maximum.
    pub fn logsumexp_rows(&mut self, a: Tensor) -> Tensor {
        let out = self.value(a).chunks(a.cols.max(1)).map(log_sum_exp).collect();
        let rg = self.rg(&[a]);
        self.push(a.rows, 1, out, Op::LogSumExpRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Tensor) -> Tensor {
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(a.cols.max(1)) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(&[a]);
        self.push(a.rows, a.cols, out, Op::LogSoftmaxRows(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Tensor) -> Tensor {
        let mut out = self.value(a).to_vec();
        out.chunks_mut(a.cols.max(1)).for_each(softmax_in_place);
        let rg = self.rg(&[a]);
        self.push(a.rows, a.cols, out, Op::SoftmaxRows(a), rg)
    }

    /// Repeats a `1×c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Tensor, rows: usize) -> Tensor {
        assert_eq!(a.rows, 1, "broadcast_rows expects a single row");
        let out = self.value(a).repeat(rows);
        let rg = self.rg(&[a]);
        self.push(rows, a.cols, out, Op::BroadcastRows(a), rg)
    }

    // ----- probabilistic terms -----

    /// Row-wise diagonal Gaussian log-density
    /// `Σ_j -½ ln(2π σ²_j) - (z_j - μ_j)² / (2σ²_j)`, giving an `r×1` column.
    ///
    /// Panics if any variance is not strictly positive.
    pub fn gaussian_log_density(&mut self, z: Tensor, mean: Tensor, var: Tensor) -> Tensor {
        assert_eq!(z.shape(), mean.shape(), "gaussian_log_density mean shape");
        assert_eq!(z.shape(), var.shape(), "gaussian_log_density variance shape");
        let c = z.cols;
        let (vz, vm, vv) = (self.value(z), self.value(mean), self.value(var));
        assert!(vv.iter().all(|&s| s > 0.0), "variance must be strictly positive");
        let out = (0..z.rows)
            .map(|r| {
                (r * c..(r + 1) * c)
                    .map(|k| {
                        let d = vz[k] - vm[k];
                        -0.5 * (2.0 * PI * vv[k]).ln() - d * d / (2.0 * vv[k])
                    })
                    .sum()
            })
            .collect();
        let rg = self.rg(&[z, mean, var]);
        self.push(z.rows, 1, out, Op::GaussianLogDensity(z, mean, var), rg)
    }

    /// Row-wise log-density of a diagonal Gaussian mixture,
    /// `log Σ_i softmax(logits)_i Φ(z; means_i, var_i)`, giving an `r×1`
    /// column. `logits` is `1×m`, `means` and `var` are `m×c`.
    ///
    /// Panics if any variance is not strictly positive.
    pub fn mixture_log_density(&mut self, z: Tensor, logits: Tensor, means: Tensor, var: Tensor) -> Tensor {
        let (m, c) = (means.rows, means.cols);
        assert_eq!(logits.shape(), [1, m], "mixture logits must be 1 x components");
        assert_eq!(var.shape(), means.shape(), "mixture variance shape");
        assert_eq!(z.cols, c, "mixture dimension mismatch");
        assert!(m > 0, "mixture needs at least one component");
        let (vz, vl, vm, vv) = (self.value(z), self.value(logits), self.value(means), self.value(var));
        assert!(vv.iter().all(|&s| s > 0.0), "variance must be strictly positive");
        let lse_w = log_sum_exp(vl);
        // Per-coordinate terms use the exact arithmetic of
        // `gaussian_log_density`, so a one-component mixture reproduces it
        // bit for bit.
        let half_log: Vec<f64> = vv.iter().map(|&v| -0.5 * (2.0 * PI * v).ln()).collect();
        let two_var: Vec<f64> = vv.iter().map(|&v| 2.0 * v).collect();
        let mut out = Vec::with_capacity(z.rows);
        let mut resp = vec![0.0; z.rows * m];
        for r in 0..z.rows {
            let zr = &vz[r * c..(r + 1) * c];
            let row = &mut resp[r * m..(r + 1) * m];
            for i in 0..m {
                let density: f64 = (0..c)
                    .map(|j| {
                        let k = i * c + j;
                        let d = zr[j] - vm[k];
                        half_log[k] - d * d / two_var[k]
                    })
                    .sum();
                row[i] = (vl[i] - lse_w) + density;
            }
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
            out.push(lse);
        }
        let rg = self.rg(&[z, logits, means, var]);
        self.push(
            z.rows,
            1,
            out,
            Op::MixtureLogDensity {
                z,
                logits,
                means,
                var,
                resp,
            },
            rg,
        )
    }

    /// Summed binary cross-entropy between sigmoid(`logits`) and 0/1 `targets`,
    /// in the overflow-free logit form `max(x,0) - x·y + ln(1 + e^{-|x|})`.
    pub fn bce_with_logits(&mut self, logits: Tensor, targets: &[f64]) -> Tensor {
        assert_eq!(logits.len(), targets.len(), "bce target length mismatch");
        let s = self
            .value(logits)
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let rg = self.rg(&[logits]);
        self.push(1, 1, vec![s], Op::BceWithLogits(logits, targets.to_vec()), rg)
    }

    // ----- backward -----

    fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], t: Tensor, f: impl FnOnce(&mut [f64])) {
        if !nodes[t.id].requires_grad {
            return;
        }
        let g = grads[t.id].get_or_insert_with(|| vec![0.0; t.rows * t.cols]);
        f(g);
    }

    /// Back-propagates from a scalar `loss`, accumulating into the gradient
    /// buffers of every node that requires a gradient.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !self.nodes[loss.id].requires_grad {
            return Ok(());
        }
        // Seed on a scratch buffer so earlier accumulations are respected.
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        local[loss.id] = Some(vec![1.0]);
        let nodes = &self.nodes;
        for id in (0..=loss.id).rev() {
            let Some(g) = local[id].take() else { continue };
            let node = &nodes[id];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (n, k, m) = (a.rows, a.cols, b.cols);
                    let (va, vb) = (&nodes[a.id].value, &nodes[b.id].value);
                    Self::acc(&mut local, nodes, *a, |da| {
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for p in 0..k {
                                let brow = &vb[p * m..(p + 1) * m];
                                da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    Self::acc(&mut local, nodes, *b, |db| {
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            for p in 0..k {
                                let av = va[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for (d, &x) in db[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                    *d += av * x;
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    Self::acc(&mut local, nodes, *a, |d| add_into(d, &g));
                    Self::acc(&mut local, nodes, *b, |d| add_into(d, &g));
                }
                Op::Sub(a, b) => {
                    Self::acc(&mut local, nodes, *a, |d| add_into(d, &g));
                    Self::acc(&mut local, nodes, *b, |d| d.iter_mut().zip(&g).for_each(|(x, y)| *x -= y));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.id].value, &nodes[b.id].value);
                    Self::acc(&mut local, nodes, *a, |d| {
                        for ((x, gy), y) in d.iter_mut().zip(&g).zip(vb) {
                            *x += gy * y;
                        }
                    });
                    Self::acc(&mut local, nodes, *b, |d| {
                        for ((x, gy), y) in d.iter_mut().zip(&g).zip(va) {
                            *x += gy * y;
                        }
                    });
                }
                Op::AddRow(a, row) => {
                    Self::acc(&mut local, nodes, *a, |d| add_into(d, &g));
                    Self::acc(&mut local, nodes, *row, |d| {
                        for chunk in g.chunks(a.cols.max(1)) {
                            add_into(d, chunk);
                        }
                    });
                }
                Op::Scale(a, s) => {
                    Self::acc(&mut local, nodes, *a, |d| d.iter_mut().zip(&g).for_each(|(x, y)| *x += s * y));
                }
                Op::AddScalar(a) => Self::acc(&mut local, nodes, *a, |d| add_into(d, &g)),
                Op::ConcatCols(a, b) => {
                    let cols = a.cols + b.cols;
                    Self::acc(&mut local, nodes, *a, |d| {
                        for r in 0..a.rows {
                            add_into(&mut d[r * a.cols..(r + 1) * a.cols], &g[r * cols..r * cols + a.cols]);
                        }
                    });
                    Self::acc(&mut local, nodes, *b, |d| {
                        for r in 0..b.rows {
                            add_into(&mut d[r * b.cols..(r + 1) * b.cols], &g[r * cols + a.cols..(r + 1) * cols]);
                        }
                    });
                }
                Op::Sigmoid(a) => Self::acc(&mut local, nodes, *a, |d| {
                    for ((x, gy), y) in d.iter_mut().zip(&g).zip(out) {
                        *x += gy * y * (1.0 - y);
                    }
                }),
                Op::Exp(a) => Self::acc(&mut local, nodes, *a, |d| {
                    for ((x, gy), y) in d.iter_mut().zip(&g).zip(out) {
                        *x += gy * y;
                    }
                }),
                Op::Log(a) => {
                    let va = &nodes[a.id].value;
                    Self::acc(&mut local, nodes, *a, |d| {
                        for ((x, gy), v) in d.iter_mut().zip(&g).zip(va) {
                            *x += gy / v;
                        }
                    })
                }
                Op::Relu(a) => {
                    let va = &nodes[a.id].value;
                    Self::acc(&mut local, nodes, *a, |d| {
                        for ((x, gy), v) in d.iter_mut().zip(&g).zip(va) {
                            if *v > 0.0 {
                                *x += gy;
                            }
                        }
                    })
                }
                Op::Softplus(a) => {
                    let va = &nodes[a.id].value;
                    Self::acc(&mut local, nodes, *a, |d| {
                        for ((x, gy), v) in d.iter_mut().zip(&g).zip(va) {
                            *x += gy * sigmoid(*v);
                        }
                    })
                }
                Op::Sqrt(a) => Self::acc(&mut local, nodes, *a, |d| {
                    for ((x, gy), y) in d.iter_mut().zip(&g).zip(out) {
                        *x += gy / (2.0 * y);
                    }
                }),
                Op::GatherRows(a, idx) => {
                    let c = a.cols;
                    Self::acc(&mut local, nodes, *a, |d| {
                        for (r, &i) in idx.iter().enumerate() {
                            add_into(&mut d[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                        }
                    })
                }
                Op::SegmentSum(a, seg) => {
                    let c = a.cols;
                    Self::acc(&mut local, nodes, *a, |d| {
                        for (e, &s) in seg.iter().enumerate() {
                            add_into(&mut d[e * c..(e + 1) * c], &g[s * c..(s + 1) * c]);
                        }
                    })
                }
                Op::SegmentSoftmax(a, seg, nseg) => {
                    let mut dot = vec![0.0; *nseg];
                    for ((&s, gy), y) in seg.iter().zip(&g).zip(out) {
                        dot[s] += gy * y;
                    }
                    Self::acc(&mut local, nodes, *a, |d| {
                        for (e, &s) in seg.iter().enumerate() {
                            d[e] += out[e] * (g[e] - dot[s]);
                        }
                    })
                }
                Op::RowDot(a, b) => {
                    let c = a.cols;
                    let (va, vb) = (&nodes[a.id].value, &nodes[b.id].value);
                    Self::acc(&mut local, nodes, *a, |d| {
                        for r in 0..a.rows {
                            for k in r * c..(r + 1) * c {
                                d[k] += g[r] * vb[k];
                            }
                        }
                    });
                    Self::acc(&mut local, nodes, *b, |d| {
                        for r in 0..b.rows {
                            for k in r * c..(r + 1) * c {
                                d[k] += g[r] * va[k];
                            }
                        }
                    });
                }
                Op::SumAll(a) => Self::acc(&mut local, nodes, *a, |d| d.iter_mut().for_each(|x| *x += g[0])),
                Op::SumCols(a) => {
                    let c = a.cols.max(1);
                    Self::acc(&mut local, nodes, *a, |d| {
                        for (r, chunk) in d.chunks_mut(c).enumerate() {
                            chunk.iter_mut().for_each(|x| *x += g[r]);
                        }
                    })
                }
                Op::LogSumExpRows(a) => {
                    let c = a.cols.max(1);
                    let va = &nodes[a.id].value;
                    Self::acc(&mut local, nodes, *a, |d| {
                        for (r, chunk) in d.chunks_mut(c).enumerate() {
                            for (k, x) in chunk.iter_mut().enumerate() {
                                *x += g[r] * (va[r * c + k] - out[r]).exp();
                            }
                        }
                    })
                }
                Op::LogSoftmaxRows(a) => {
                    let c = a.cols.max(1);
                    Self::acc(&mut local, nodes, *a, |d| {
                        for r in 0..a.rows {
                            let gs: f64 = g[r * c..(r + 1) * c].iter().sum();
                            for k in r * c..(r + 1) * c {
                                d[k] += g[k] - out[k].exp() * gs;
                            }
                        }
                    })
                }
                Op::SoftmaxRows(a) => {
                    let c = a.cols.max(1);
                    Self::acc(&mut local, nodes, *a, |d| {
                        for r in 0..a.rows {
                            let dot: f64 = (r * c..(r + 1) * c).map(|k| g[k] * out[k]).sum();
                            for k in r * c..(r + 1) * c {
                                d[k] += out[k] * (g[k] - dot);
                            }
                        }
                    })
                }
                Op::BroadcastRows(a) => Self::acc(&mut local, nodes, *a, |d| {
                    for chunk in g.chunks(a.cols.max(1)) {
                        add_into(d, chunk);
                    }
                }),
                Op::GaussianLogDensity(z, mean, var) => {
                    let c = z.cols.max(1);
                    let (vz, vm, vv) = (&nodes[z.id].value, &nodes[mean.id].value, &nodes[var.id].value);
                    Self::acc(&mut local, nodes, *z, |d| {
                        for (r, gr) in g.iter().enumerate() {
                            for k in r * c..(r + 1) * c {
                                d[k] -= gr * (vz[k] - vm[k]) / vv[k];
                            }
                        }
                    });
                    Self::acc(&mut local, nodes, *mean, |d| {
                        for (r, gr) in g.iter().enumerate() {
                            for k in r * c..(r + 1) * c {
                                d[k] += gr * (vz[k] - vm[k]) / vv[k];
                            }
                        }
                    });
                    Self::acc(&mut local, nodes, *var, |d| {
                        for (r, gr) in g.iter().enumerate() {
                            for k in r * c..(r + 1) * c {
                                let diff = vz[k] - vm[k];
                                d[k] += gr * (-0.5 / vv[k] + diff * diff / (2.0 * vv[k] * vv[k]));
                            }
                        }
                    });
                }
                Op::MixtureLogDensity {
                    z,
                    logits,
                    means,
                    var,
                    resp,
                } => {
                    let (m, c) = (means.rows, means.cols);
                    let (vz, vm, vv) = (&nodes[z.id].value, &nodes[means.id].value, &nodes[var.id].value);
                    Self::acc(&mut local, nodes, *z, |d| {
                        for (r, gr) in g.iter().enumerate() {
                            for i in 0..m {
                                let w = gr * resp[r * m + i];
                                for j in 0..c {
                                    d[r * c + j] -= w * (vz[r * c + j] - vm[i * c + j]) / vv[i * c + j];
                                }
                            }
                        }
                    });
                    Self::acc(&mut local, nodes, *means, |d| {
                        for (r, gr) in g.iter().enumerate() {
                            for i in 0..m {
                                let w = gr * resp[r * m + i];
                                for j in 0..c {
                                    d[i * c + j] += w * (vz[r * c + j] - vm[i * c + j]) / vv[i * c + j];
                                }
                            }
                        }
                    });
                    Self::acc(&mut local, nodes, *var, |d| {
                        for (r, gr) in g.iter().enumerate() {
                            for i in 0..m {
                                let w = gr * resp[r * m + i];
                                for j in 0..c {
                                    let (diff, v) = (vz[r * c + j] - vm[i * c + j], vv[i * c + j]);
                                    d[i * c + j] += w * (-0.5 / v + diff * diff / (2.0 * v * v));
                                }
                            }
                        }
                    });
                    let vl = &nodes[logits.id].value;
                    Self::acc(&mut local, nodes, *logits, |d| {
                        let lse = log_sum_exp(vl);
                        let mut da = vec![0.0; m];
                        for (r, gr) in g.iter().enumerate() {
                            for i in 0..m {
                                da[i] += gr * resp[r * m + i];
                            }
                        }
                        let total: f64 = da.iter().sum();
                        for k in 0..m {
                            d[k] += da[k] - (vl[k] - lse).exp() * total;
                        }
                    });
                }
                Op::BceWithLogits(a, y) => {
                    let va = &nodes[a.id].value;
                    Self::acc(&mut local, nodes, *a, |d| {
                        for ((x, v), t) in d.iter_mut().zip(va).zip(y) {
                            *x += g[0] * (sigmoid(*v) - t);
                        }
                    })
                }
            }
            // Leaves keep their gradient; interior buffers are consumed.
            if matches!(node.op, Op::Leaf) {
                local[id] = Some(g);
            }
        }
        for (id, g) in local.into_iter().enumerate() {
            if let Some(g) = g {
                match &mut self.grads[id] {
                    Some(acc) => add_into(acc, &g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
