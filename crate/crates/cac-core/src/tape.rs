//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] replays it in
//! reverse and accumulates vector-Jacobian products. Tapes are rebuilt per
//! forward pass and are strictly single-threaded; data parallelism across
//! images is done by giving each worker its own tape (see [`crate::batch`]).
//!
//! [`Var::detach`] is the stop-gradient barrier: it forwards the value and
//! records no parents, so the gradient along that path is exactly zero.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Gradients per parent; `None` for parents that do not need one.
type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("index", &self.index).finish()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<'t> {
    grads: Vec<Option<Tensor>>,
    _tape: std::marker::PhantomData<&'t Tape>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Binds a tensor as a leaf; it participates in gradients when the
    /// tensor was marked with [`Tensor::requiring_grad`].
    pub fn leaf(&self, value: &Tensor) -> Var<'_> {
        let requires_grad = value.requires_grad();
        self.push(Node {
            value: value.clone(),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        })
    }

    /// Binds a tensor that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        })
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(node);
        Var { tape: self, index }
    }

    fn record<'t>(
        &'t self,
        value: Tensor,
        parents: Vec<usize>,
        backward: BackwardFn,
    ) -> Var<'t> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(Node {
            value,
            requires_grad,
            parents,
            backward: if requires_grad { Some(backward) } else { None },
        })
    }

    fn parent_requires(&self, index: usize) -> bool {
        self.nodes.borrow()[index].requires_grad
    }

    /// Reverse pass from a scalar root. Returns gradients for every node
    /// that requires them; others read as zero.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients<'_>> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.index].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.index + 1];
        grads[root.index] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.index).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(grad) = grads[idx].clone() else {
                continue;
            };
            let Some(backward) = &node.backward else {
                continue;
            };
            let parent_grads = backward(&grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                grads[p] = Some(match grads[p].take() {
                    Some(existing) => {
                        let sum = tensor::add_slices(existing.data(), pg.data());
                        Tensor::new(existing.shape().to_vec(), sum)
                            .expect("gradient accumulation preserves shape")
                    }
                    None => pg,
                });
            }
        }
        drop(nodes);
        Ok(Gradients {
            grads,
            _tape: std::marker::PhantomData,
        })
    }
}

impl<'t> Gradients<'t> {
    /// Gradient with respect to `v`, zeros when no gradient flowed there.
    pub fn wrt(&self, v: Var<'t>) -> Tensor {
        match self.grads.get(v.index).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&v.shape()),
        }
    }
}

fn same_tape(a: &Tape, b: &Tape) {
    assert!(std::ptr::eq(a, b), "variables belong to different tapes");
}

impl<'t> Var<'t> {
    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Tensor {
        self.tape.nodes.borrow()[self.index].value.clone()
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.index].value.shape().to_vec()
    }

    pub fn requires_grad(self) -> bool {
        self.tape.nodes.borrow()[self.index].requires_grad
    }

    fn matrix_dims(self, op: &'static str) -> (usize, usize) {
        let shape = self.shape();
        assert!(shape.len() == 2, "{op}: expected a matrix, got {shape:?}");
        (shape[0], shape[1])
    }

    /// `self[m×k] · rhs[k×n]`
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_tape(self.tape, rhs.tape);
        let a = self.value();
        let b = rhs.value();
        let (m, k) = self.matrix_dims("matmul");
        let (k2, n) = rhs.matrix_dims("matmul");
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = Tensor::matrix(m, n, tensor::mm(a.data(), b.data(), m, k, n))?;
        let need_a = self.tape.parent_requires(self.index);
        let need_b = self.tape.parent_requires(rhs.index);
        Ok(self.tape.record(
            out,
            vec![self.index, rhs.index],
            Box::new(move |g| {
                let ga = need_a.then(|| {
                    Tensor::matrix(m, k, tensor::mm_nt(g.data(), b.data(), m, n, k))
                        .expect("matmul grad shape")
                });
                let gb = need_b.then(|| {
                    Tensor::matrix(k, n, tensor::mm_tn(a.data(), g.data(), m, k, n))
                        .expect("matmul grad shape")
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `self[m×k] · rhs[n×k]ᵀ`
    pub fn matmul_nt(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_tape(self.tape, rhs.tape);
        let a = self.value();
        let b = rhs.value();
        let (m, k) = self.matrix_dims("matmul_nt");
        let (n, k2) = rhs.matrix_dims("matmul_nt");
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = Tensor::matrix(m, n, tensor::mm_nt(a.data(), b.data(), m, k, n))?;
        let need_a = self.tape.parent_requires(self.index);
        let need_b = self.tape.parent_requires(rhs.index);
        Ok(self.tape.record(
            out,
            vec![self.index, rhs.index],
            Box::new(move |g| {
                // d_a = g·b, d_b = gᵀ·a
                let ga = need_a.then(|| {
                    Tensor::matrix(m, k, tensor::mm(g.data(), b.data(), m, n, k))
                        .expect("matmul_nt grad shape")
                });
                let gb = need_b.then(|| {
                    Tensor::matrix(n, k, tensor::mm_tn(g.data(), a.data(), m, n, k))
                        .expect("matmul_nt grad shape")
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `self[k×m]ᵀ · rhs[k×n]`
    pub fn matmul_tn(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_tape(self.tape, rhs.tape);
        let a = self.value();
        let b = rhs.value();
        let (k, m) = self.matrix_dims("matmul_tn");
        let (k2, n) = rhs.matrix_dims("matmul_tn");
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_tn",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = Tensor::matrix(m, n, tensor::mm_tn(a.data(), b.data(), k, m, n))?;
        let need_a = self.tape.parent_requires(self.index);
        let need_b = self.tape.parent_requires(rhs.index);
        Ok(self.tape.record(
            out,
            vec![self.index, rhs.index],
            Box::new(move |g| {
                // out = aᵀ·b  ⇒  d_a = b·gᵀ, d_b = a·g
                let ga = need_a.then(|| {
                    Tensor::matrix(k, m, tensor::mm_nt(b.data(), g.data(), k, n, m))
                        .expect("matmul_tn grad shape")
                });
                let gb = need_b.then(|| {
                    Tensor::matrix(k, n, tensor::mm(a.data(), g.data(), k, m, n))
                        .expect("matmul_tn grad shape")
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_tape(self.tape, rhs.tape);
        let a = self.value();
        let b = rhs.value();
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = Tensor::new(a.shape().to_vec(), tensor::add_slices(a.data(), b.data()))?;
        Ok(self.tape.record(
            out,
            vec![self.index, rhs.index],
            Box::new(move |g| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    /// Elementwise product.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_tape(self.tape, rhs.tape);
        let a = self.value();
        let b = rhs.value();
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let need_a = self.tape.parent_requires(self.index);
        let need_b = self.tape.parent_requires(rhs.index);
        Ok(self.tape.record(
            out,
            vec![self.index, rhs.index],
            Box::new(move |g| {
                let ga = need_a.then(|| {
                    let d: Vec<f64> = g.data().iter().zip(b.data()).map(|(g, y)| g * y).collect();
                    Tensor::new(b.shape().to_vec(), d).expect("mul grad shape")
                });
                let gb = need_b.then(|| {
                    let d: Vec<f64> = g.data().iter().zip(a.data()).map(|(g, x)| g * x).collect();
                    Tensor::new(a.shape().to_vec(), d).expect("mul grad shape")
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Adds a rank-1 bias to every row of a matrix.
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        same_tape(self.tape, bias.tape);
        let a = self.value();
        let b = bias.value();
        let (m, n) = self.matrix_dims("add_row_bias");
        if b.rank() != 1 || b.len() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = a.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += b.data()[j];
            }
        }
        let out = Tensor::matrix(m, n, data)?;
        let need_b = self.tape.parent_requires(bias.index);
        Ok(self.tape.record(
            out,
            vec![self.index, bias.index],
            Box::new(move |g| {
                let gb = need_b.then(|| {
                    let mut col = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            col[j] += g.data()[i * n + j];
                        }
                    }
                    Tensor::vector(col)
                });
                vec![Some(g.clone()), gb]
            }),
        ))
    }

    /// Columns of `self` followed by columns of `rhs`.
    pub fn concat_cols(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_tape(self.tape, rhs.tape);
        let a = self.value();
        let b = rhs.value();
        let (m, p) = self.matrix_dims("concat_cols");
        let (m2, q) = rhs.matrix_dims("concat_cols");
        if m != m2 {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&a.data()[i * p..(i + 1) * p]);
            data.extend_from_slice(&b.data()[i * q..(i + 1) * q]);
        }
        let out = Tensor::matrix(m, p + q, data)?;
        Ok(self.tape.record(
            out,
            vec![self.index, rhs.index],
            Box::new(move |g| {
                let w = p + q;
                let mut ga = Vec::with_capacity(m * p);
                let mut gb = Vec::with_capacity(m * q);
                for i in 0..m {
                    ga.extend_from_slice(&g.data()[i * w..i * w + p]);
                    gb.extend_from_slice(&g.data()[i * w + p..(i + 1) * w]);
                }
                vec![
                    Some(Tensor::matrix(m, p, ga).expect("concat grad shape")),
                    Some(Tensor::matrix(m, q, gb).expect("concat grad shape")),
                ]
            }),
        ))
    }

    /// Divides row `i` of a matrix by `divisor[i]`. Divisors at or below
    /// `floor` are clamped to `floor` and treated as constants in backward;
    /// callers only rely on that branch for degenerate all-masked inputs.
    pub fn div_rows(self, divisor: Var<'t>, floor: f64) -> Result<Var<'t>> {
        same_tape(self.tape, divisor.tape);
        let a = self.value();
        let v = divisor.value();
        let (m, n) = self.matrix_dims("div_rows");
        if v.rank() != 1 || v.len() != m {
            return Err(Error::ShapeMismatch {
                op: "div_rows",
                lhs: a.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let clamped: Vec<f64> = v.data().iter().map(|&d| d.max(floor)).collect();
        let live: Vec<bool> = v.data().iter().map(|&d| d > floor).collect();
        let mut data = a.data().to_vec();
        for i in 0..m {
            let inv = 1.0 / clamped[i];
            for j in 0..n {
                data[i * n + j] *= inv;
            }
        }
        let out = Tensor::matrix(m, n, data)?;
        let out_copy = out.clone();
        let need_v = self.tape.parent_requires(divisor.index);
        Ok(self.tape.record(
            out,
            vec![self.index, divisor.index],
            Box::new(move |g| {
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let inv = 1.0 / clamped[i];
                    for j in 0..n {
                        ga[i * n + j] = g.data()[i * n + j] * inv;
                    }
                }
                let gv = need_v.then(|| {
                    let mut d = vec![0.0; m];
                    for i in 0..m {
                        if !live[i] {
                            continue;
                        }
                        let inv = 1.0 / clamped[i];
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g.data()[i * n + j] * out_copy.data()[i * n + j];
                        }
                        d[i] = -acc * inv;
                    }
                    Tensor::vector(d)
                });
                vec![
                    Some(Tensor::matrix(m, n, ga).expect("div_rows grad shape")),
                    gv,
                ]
            }),
        ))
    }

    pub fn relu(self) -> Var<'t> {
        let a = self.value();
        let data: Vec<f64> = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let out = Tensor::new(a.shape().to_vec(), data).expect("relu preserves shape");
        self.tape.record(
            out,
            vec![self.index],
            Box::new(move |g| {
                // Subgradient 0 at the kink.
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(a.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![Some(Tensor::new(a.shape().to_vec(), d).expect("relu grad shape"))]
            }),
        )
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let a = self.value();
        let data: Vec<f64> = a.data().iter().map(|x| x * s).collect();
        let out = Tensor::new(a.shape().to_vec(), data).expect("scale preserves shape");
        let shape = a.shape().to_vec();
        self.tape.record(
            out,
            vec![self.index],
            Box::new(move |g| {
                let d: Vec<f64> = g.data().iter().map(|g| g * s).collect();
                vec![Some(Tensor::new(shape.clone(), d).expect("scale grad shape"))]
            }),
        )
    }

    /// Row-wise softmax with max-subtraction.
    pub fn softmax_rows(self) -> Var<'t> {
        let (m, n) = self.matrix_dims("softmax_rows");
        let out = self.value().softmax_rows_value();
        let sm = out.clone();
        self.tape.record(
            out,
            vec![self.index],
            Box::new(move |g| {
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let srow = &sm.data()[i * n..(i + 1) * n];
                    let grow = &g.data()[i * n..(i + 1) * n];
                    let dot: f64 = srow.iter().zip(grow).map(|(s, g)| s * g).sum();
                    for j in 0..n {
                        d[i * n + j] = srow[j] * (grow[j] - dot);
                    }
                }
                vec![Some(Tensor::matrix(m, n, d).expect("softmax grad shape"))]
            }),
        )
    }

    /// Row-wise log-softmax via log-sum-exp; never the log of a stored
    /// softmax.
    pub fn log_softmax_rows(self) -> Var<'t> {
        let a = self.value();
        let (m, n) = self.matrix_dims("log_softmax_rows");
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &a.data()[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for j in 0..n {
                data[i * n + j] = row[j] - lse;
            }
        }
        let out = Tensor::matrix(m, n, data).expect("log_softmax preserves shape");
        let lsm = out.clone();
        self.tape.record(
            out,
            vec![self.index],
            Box::new(move |g| {
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let lrow = &lsm.data()[i * n..(i + 1) * n];
                    let grow = &g.data()[i * n..(i + 1) * n];
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..n {
                        d[i * n + j] = grow[j] - lrow[j].exp() * gsum;
                    }
                }
                vec![Some(Tensor::matrix(m, n, d).expect("log_softmax grad shape"))]
            }),
        )
    }

    /// Normalizes each row to unit L2 norm; rows with norm ≤ `eps` map to
    /// zeros (the documented degenerate path for absent-class prototypes).
    pub fn l2_normalize_rows(self, eps: f64) -> Var<'t> {
        let a = self.value();
        let (m, n) = self.matrix_dims("l2_normalize_rows");
        let mut data = vec![0.0; m * n];
        let mut norms = vec![0.0; m];
        for i in 0..m {
            let row = &a.data()[i * n..(i + 1) * n];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms[i] = norm;
            if norm > eps {
                let inv = 1.0 / norm;
                for j in 0..n {
                    data[i * n + j] = row[j] * inv;
                }
            }
        }
        let out = Tensor::matrix(m, n, data).expect("l2_normalize preserves shape");
        let unit = out.clone();
        self.tape.record(
            out,
            vec![self.index],
            Box::new(move |g| {
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    if norms[i] <= eps {
                        continue;
                    }
                    let inv = 1.0 / norms[i];
                    let urow = &unit.data()[i * n..(i + 1) * n];
                    let grow = &g.data()[i * n..(i + 1) * n];
                    let dot: f64 = urow.iter().zip(grow).map(|(u, g)| u * g).sum();
                    for j in 0..n {
                        d[i * n + j] = (grow[j] - urow[j] * dot) * inv;
                    }
                }
                vec![Some(Tensor::matrix(m, n, d).expect("l2_normalize grad shape"))]
            }),
        )
    }

    /// Sum over all elements (`axis: None`, scalar result), over rows
    /// (`Some(0)`, column sums) or over columns (`Some(1)`, row sums).
    pub fn reduce_sum(self, axis: Option<usize>) -> Result<Var<'t>> {
        let a = self.value();
        match axis {
            None => {
                let total: f64 = a.data().iter().sum();
                let shape = a.shape().to_vec();
                Ok(self.tape.record(
                    Tensor::scalar(total),
                    vec![self.index],
                    Box::new(move |g| {
                        vec![Some(Tensor::full(&shape, g.data()[0]))]
                    }),
                ))
            }
            Some(axis) => {
                if a.rank() != 2 || axis > 1 {
                    return Err(Error::InvalidAxis {
                        op: "reduce_sum",
                        axis,
                        rank: a.rank(),
                    });
                }
                let (m, n) = (a.rows(), a.cols());
                if axis == 0 {
                    let mut col = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            col[j] += a.data()[i * n + j];
                        }
                    }
                    Ok(self.tape.record(
                        Tensor::vector(col),
                        vec![self.index],
                        Box::new(move |g| {
                            let mut d = vec![0.0; m * n];
                            for i in 0..m {
                                d[i * n..(i + 1) * n].copy_from_slice(g.data());
                            }
                            vec![Some(Tensor::matrix(m, n, d).expect("reduce grad shape"))]
                        }),
                    ))
                } else {
                    let mut rows = vec![0.0; m];
                    for i in 0..m {
                        rows[i] = a.data()[i * n..(i + 1) * n].iter().sum();
                    }
                    Ok(self.tape.record(
                        Tensor::vector(rows),
                        vec![self.index],
                        Box::new(move |g| {
                            let mut d = vec![0.0; m * n];
                            for i in 0..m {
                                let gi = g.data()[i];
                                for j in 0..n {
                                    d[i * n + j] = gi;
                                }
                            }
                            vec![Some(Tensor::matrix(m, n, d).expect("reduce grad shape"))]
                        }),
                    ))
                }
            }
        }
    }

    pub fn reduce_mean(self, axis: Option<usize>) -> Result<Var<'t>> {
        let shape = self.shape();
        let count = match axis {
            None => shape.iter().product::<usize>(),
            Some(0) => *shape.first().unwrap_or(&1),
            Some(1) => *shape.get(1).unwrap_or(&1),
            Some(axis) => {
                return Err(Error::InvalidAxis {
                    op: "reduce_mean",
                    axis,
                    rank: shape.len(),
                })
            }
        };
        Ok(self.reduce_sum(axis)?.scale(1.0 / count as f64))
    }

    /// Stop-gradient barrier: forwards the value, records no parents.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant(self.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &Tape, shape: Vec<usize>, data: Vec<f64>) -> Var<'_> {
        tape.leaf(&Tensor::new(shape, data).unwrap().requiring_grad())
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let i = leaf(&tape, vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = leaf(&tape, vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let c = i.matmul(b).unwrap();
        assert_eq!(c.value().data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn matmul_1x2_by_2x1() {
        let tape = Tape::new();
        let a = leaf(&tape, vec![1, 2], vec![1.0, 2.0]);
        let b = leaf(&tape, vec![2, 1], vec![3.0, 4.0]);
        let c = a.matmul(b).unwrap();
        assert_eq!(c.value().data(), &[11.0]);
        let grads = tape.backward(c).unwrap();
        assert_eq!(grads.wrt(a).data(), &[3.0, 4.0]);
        assert_eq!(grads.wrt(b).data(), &[1.0, 2.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = leaf(&tape, vec![2, 3], vec![0.0; 6]);
        let b = leaf(&tape, vec![2, 2], vec![0.0; 4]);
        let err = a.matmul(b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let tape = Tape::new();
        let a = leaf(&tape, vec![1, 2], vec![0.0, 0.0]);
        assert_eq!(a.softmax_rows().value().data(), &[0.5, 0.5]);
        let big = leaf(&tape, vec![1, 2], vec![1000.0, 1000.0]);
        let s = big.softmax_rows().value();
        assert!(s.is_finite());
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn log_softmax_matches_ln2() {
        let tape = Tape::new();
        let a = leaf(&tape, vec![1, 2], vec![0.0, 0.0]);
        let l = a.log_softmax_rows().value();
        for v in l.data() {
            assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_extreme_row_is_finite() {
        let tape = Tape::new();
        let a = leaf(&tape, vec![1, 2], vec![50.0, 0.0]);
        let l = a.log_softmax_rows().value();
        assert!(l.is_finite());
        // Extended precision gives lsm[0] = -1.9287498479639178e-22, below
        // what f64 arithmetic around 1.0 can resolve; the correctly rounded
        // result is 0.0 and must not collapse to -inf.
        assert!(l.data()[0] <= 0.0 && l.data()[0] > -1e-21);
        assert!((l.data()[1] - (-50.0)).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_345_triangle_and_degenerate_row() {
        let tape = Tape::new();
        let a = leaf(&tape, vec![2, 2], vec![3.0, 4.0, 0.0, 0.0]);
        let n = a.l2_normalize_rows(1e-12).value();
        assert!((n.at2(0, 0) - 0.6).abs() < 1e-15);
        assert!((n.at2(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(n.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn concat_cols_and_gradient_split() {
        let tape = Tape::new();
        let a = leaf(&tape, vec![1, 1], vec![1.0]);
        let b = leaf(&tape, vec![1, 1], vec![2.0]);
        let c = a.concat_cols(b).unwrap();
        assert_eq!(c.value().data(), &[1.0, 2.0]);
        let s = c.reduce_sum(None).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(a).data(), &[1.0]);
        assert_eq!(grads.wrt(b).data(), &[1.0]);
    }

    #[test]
    fn relu_and_scale_values() {
        let tape = Tape::new();
        let a = leaf(&tape, vec![1, 2], vec![-1.0, 2.0]);
        assert_eq!(a.relu().value().data(), &[0.0, 2.0]);
        let b = leaf(&tape, vec![1, 2], vec![1.0, -1.0]);
        assert_eq!(b.scale(15.0).value().data(), &[15.0, -15.0]);
    }

    #[test]
    fn reduce_sum_of_ones() {
        let tape = Tape::new();
        let a = leaf(&tape, vec![3, 4], vec![1.0; 12]);
        assert_eq!(a.reduce_sum(None).unwrap().value().data(), &[12.0]);
        assert_eq!(a.reduce_sum(Some(0)).unwrap().value().data(), &[3.0; 4]);
        assert_eq!(a.reduce_sum(Some(1)).unwrap().value().data(), &[4.0; 3]);
        assert!(matches!(
            a.reduce_sum(Some(2)),
            Err(Error::InvalidAxis { .. })
        ));
    }

    #[test]
    fn detach_passes_value_and_blocks_gradient() {
        let tape = Tape::new();
        let x = leaf(&tape, vec![1, 3], vec![1.0, 2.0, 3.0]);
        let d = x.detach();
        assert_eq!(d.value().data(), x.value().data());

        let loss = d.reduce_sum(None).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0, 0.0]);

        // d(sum(x + detach(x)))/dx = ones, the detached branch contributes
        // exactly nothing.
        let tape = Tape::new();
        let x = leaf(&tape, vec![1, 3], vec![1.0, 2.0, 3.0]);
        let s = x.add(x.detach()).unwrap().reduce_sum(None).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let tape = Tape::new();
        let a = leaf(&tape, vec![1, 2], vec![1.0, 2.0]);
        assert!(matches!(
            tape.backward(a),
            Err(Error::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn gradient_accumulates_over_multiple_uses() {
        // y = sum(x·2) + sum(x·3)  ⇒  dy/dx = 5 everywhere
        let tape = Tape::new();
        let x = leaf(&tape, vec![1, 2], vec![1.0, -1.0]);
        let a = x.scale(2.0).reduce_sum(None).unwrap();
        let b = x.scale(3.0).reduce_sum(None).unwrap();
        let y = a.add(b).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).data(), &[5.0, 5.0]);
    }
}
