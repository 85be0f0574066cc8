use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, PAD};
use super::{numel, Scalar, Tensor};
use crate::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Position of a tensor on a particular tape.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}#{}", self.tape, self.index)
    }
}

/// Input gradients for each operand; `None` where the operand is untracked.
type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    inputs: Vec<Option<usize>>,
    shape: Vec<usize>,
    /// `None` marks a leaf.
    backward: Option<BackwardFn<T>>,
}

/// Whether stochastic layers are active.
pub enum Mode {
    Eval,
    Train(ChaCha8Rng),
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Records differentiable operations in execution order.
///
/// A tape is single-threaded. Node indices are assigned in recording order,
/// so every input precedes its consumer and a reverse sweep is a valid
/// topological traversal.
pub struct Tape<T: Scalar = f64> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `t` as a gradient-receiving input.
    pub fn leaf(&self, t: &Tensor<T>) -> Tensor<T> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            inputs: Vec::new(),
            shape: t.shape().to_vec(),
            backward: None,
        });
        t.detach().with_node(NodeId {
            tape: self.id,
            index,
        })
    }

    fn slot(&self, t: &Tensor<T>) -> Result<Option<usize>> {
        match t.node {
            None => Ok(None),
            Some(n) if n.tape == self.id => Ok(Some(n.index)),
            Some(n) => Err(Error::Tape(format!(
                "tensor {n:?} belongs to a different tape (t{})",
                self.id
            ))),
        }
    }

    fn record(
        &self,
        operands: &[&Tensor<T>],
        shape: Vec<usize>,
        data: impl Into<Arc<Vec<T>>>,
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Result<Tensor<T>> {
        let inputs = operands
            .iter()
            .map(|t| self.slot(t))
            .collect::<Result<Vec<_>>>()?;
        let out = Tensor::from_parts(shape, data.into());
        if inputs.iter().all(Option::is_none) {
            return Ok(out);
        }
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            inputs,
            shape: out.shape().to_vec(),
            backward: Some(Box::new(backward)),
        });
        Ok(out.with_node(NodeId {
            tape: self.id,
            index,
        }))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are returned for every
    /// leaf on the tape; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        if loss.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let start = self
            .slot(loss)?
            .ok_or_else(|| Error::Tape("loss is not recorded on this tape".into()))?;
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[start] = Some(vec![T::one()]);
        let mut leaves = HashMap::new();
        for i in (0..=start).rev() {
            let node = &nodes[i];
            let Some(backward) = &node.backward else {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); numel(&node.shape)]);
                leaves.insert(i, Tensor::from_parts(node.shape.clone(), Arc::new(g)));
                continue;
            };
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (slot, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(j), Some(ig)) = (slot, ig) else {
                    continue;
                };
                match &mut grads[*j] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&ig) {
                            *a += *v;
                        }
                    }
                    empty => *empty = Some(ig),
                }
            }
        }
        // Leaves recorded after the loss cannot influence it.
        for (i, node) in nodes.iter().enumerate().skip(start + 1) {
            if node.backward.is_none() {
                leaves.insert(i, Tensor::zeros(node.shape.clone()));
            }
        }
        Ok(Gradients {
            tape: self.id,
            leaves,
        })
    }

    // ---------------------------------------------------------------- ops

    /// Matrix product over the last two axes.
    ///
    /// A rank-2 `b` is shared across all leading axes of `a` (a linear
    /// layer); otherwise both operands carry identical leading (batch) axes.
    pub fn matmul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` over the last two axes, same batching rules as [`Tape::matmul`].
    pub fn matmul_nt(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        let (ra, rb) = (a.rank(), b.rank());
        if ra < 2 || rb < 2 {
            return Err(mismatch());
        }
        let k = a.shape()[ra - 1];
        let (bk, n) = if trans_b {
            (b.shape()[rb - 1], b.shape()[rb - 2])
        } else {
            (b.shape()[rb - 2], b.shape()[rb - 1])
        };
        if bk != k {
            return Err(mismatch());
        }
        let shared = rb == 2;
        if !shared && (ra != rb || a.shape()[..ra - 2] != b.shape()[..rb - 2]) {
            return Err(mismatch());
        }
        let (batch, m) = if shared {
            (1, a.len() / k)
        } else {
            (numel(&a.shape()[..ra - 2]), a.shape()[ra - 2])
        };
        let mut shape = a.shape()[..ra - 1].to_vec();
        shape.push(n);

        let (ad, bd) = (Arc::clone(a.data_arc()), Arc::clone(b.data_arc()));
        let b_stride = if shared { 0 } else { k * n };
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            kernels::gemm(
                m,
                k,
                n,
                &ad[bi * m * k..],
                false,
                &bd[bi * b_stride..],
                trans_b,
                &mut out[bi * m * n..],
                false,
            );
        }
        self.record(&[a, b], shape, out, move |dc, needs| {
            let da = needs[0].then(|| {
                let mut da = vec![T::zero(); batch * m * k];
                for bi in 0..batch {
                    // dA = dC · op(B)ᵀ
                    kernels::gemm(
                        m,
                        n,
                        k,
                        &dc[bi * m * n..],
                        false,
                        &bd[bi * b_stride..],
                        !trans_b,
                        &mut da[bi * m * k..],
                        false,
                    );
                }
                da
            });
            let db = needs[1].then(|| {
                let mut db = vec![T::zero(); bd.len()];
                for bi in 0..batch {
                    let (a_blk, dc_blk) = (&ad[bi * m * k..], &dc[bi * m * n..]);
                    let db_blk = &mut db[bi * b_stride..];
                    if trans_b {
                        // dBₛ = dCᵀ · A
                        kernels::gemm(n, m, k, dc_blk, true, a_blk, false, db_blk, shared);
                    } else {
                        // dB = Aᵀ · dC
                        kernels::gemm(k, m, n, a_blk, true, dc_blk, false, db_blk, shared);
                    }
                }
                db
            });
            vec![da, db]
        })
    }

    /// `a + b` where `b`'s shape equals the trailing axes of `a`'s shape.
    pub fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (ra, rb) = (a.rank(), b.rank());
        if rb > ra || a.shape()[ra - rb..] != *b.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let nb = b.len();
        let bd = b.data();
        let out: Vec<T> = a
            .data()
            .chunks_exact(nb)
            .flat_map(|chunk| chunk.iter().zip(bd).map(|(&x, &y)| x + y))
            .collect();
        self.record(&[a, b], a.shape().to_vec(), out, move |dy, needs| {
            let da = needs[0].then(|| dy.to_vec());
            let db = needs[1].then(|| {
                let mut db = vec![T::zero(); nb];
                for chunk in dy.chunks_exact(nb) {
                    for (d, &g) in db.iter_mut().zip(chunk) {
                        *d += g;
                    }
                }
                db
            });
            vec![da, db]
        })
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (ad, bd) = (Arc::clone(a.data_arc()), Arc::clone(b.data_arc()));
        let out: Vec<T> = ad.iter().zip(bd.iter()).map(|(&x, &y)| x * y).collect();
        self.record(&[a, b], a.shape().to_vec(), out, move |dy, needs| {
            let da = needs[0].then(|| dy.iter().zip(bd.iter()).map(|(&g, &y)| g * y).collect());
            let db = needs[1].then(|| dy.iter().zip(ad.iter()).map(|(&g, &x)| g * x).collect());
            vec![da, db]
        })
    }

    pub fn scale(&self, a: &Tensor<T>, s: T) -> Result<Tensor<T>> {
        let out: Vec<T> = a.data().iter().map(|&x| x * s).collect();
        self.record(&[a], a.shape().to_vec(), out, move |dy, _| {
            vec![Some(dy.iter().map(|&g| g * s).collect())]
        })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let n = a.len();
        let total = a.data().iter().copied().sum();
        self.record(&[a], Vec::new(), vec![total], move |dy, _| {
            vec![Some(vec![dy[0]; n])]
        })
    }

    pub fn mean(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.sum(a)?;
        self.scale(&s, T::one() / T::from_f64(a.len() as f64))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&self, a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        if axis >= a.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: a.rank(),
            });
        }
        let (outer, len, inner) = kernels::axis_split(a.shape(), axis);
        let inv = T::one() / T::from_f64(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        let x = a.data();
        for o in 0..outer {
            for j in 0..len {
                let src = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        self.record(&[a], shape, out, move |dy, _| {
            let mut dx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                let g = &dy[o * inner..(o + 1) * inner];
                for j in 0..len {
                    for (d, &v) in dx[(o * len + j) * inner..(o * len + j + 1) * inner]
                        .iter_mut()
                        .zip(g)
                    {
                        *d = v * inv;
                    }
                }
            }
            vec![Some(dx)]
        })
    }

    pub fn reshape(&self, a: &Tensor<T>, shape: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
        let shape = shape.into();
        let out = a.reshaped(shape)?;
        let Some(slot) = self.slot(a)? else {
            return Ok(out);
        };
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            inputs: vec![Some(slot)],
            shape: out.shape().to_vec(),
            backward: Some(Box::new(|dy, _| vec![Some(dy.to_vec())])),
        });
        Ok(out.with_node(NodeId {
            tape: self.id,
            index,
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, a: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = a.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&ax| ax >= rank || std::mem::replace(&mut seen[ax], true))
        {
            return Err(Error::invalid(format!(
                "{axes:?} is not a permutation of the axes of {:?}",
                a.shape()
            )));
        }
        // Keep the trailing axis as a contiguous row when it stays last.
        if axes[rank - 1] == rank - 1 && rank > 1 {
            let (index, out_lead) =
                kernels::permute_index(&a.shape()[..rank - 1], &axes[..rank - 1]);
            self.gather_rows(a, Arc::new(index), &out_lead)
        } else {
            let (index, out_shape) = kernels::permute_index(a.shape(), axes);
            let mut col = a.shape().to_vec();
            col.push(1);
            let col = self.reshape(a, col)?;
            let g = self.gather_rows(&col, Arc::new(index), &out_shape)?;
            self.reshape(&g, out_shape)
        }
    }

    /// Row gather over the last axis: output row `i` is input row `index[i]`,
    /// or zeros for [`PAD`]. The output shape is `lead` followed by the row
    /// length.
    pub fn gather_rows(
        &self,
        a: &Tensor<T>,
        index: Arc<Vec<usize>>,
        lead: &[usize],
    ) -> Result<Tensor<T>> {
        let row_len = *a.shape().last().unwrap_or(&1);
        let rows = a.len() / row_len;
        if numel(lead) != index.len() {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: lead.to_vec(),
                rhs: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i != PAD && i >= rows) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of range for {rows} rows"
            )));
        }
        let out = kernels::gather_rows(a.data(), row_len, &index);
        let mut shape = lead.to_vec();
        shape.push(row_len);
        self.record(&[a], shape, out, move |dy, _| {
            vec![Some(kernels::scatter_add_rows(dy, row_len, &index, rows))]
        })
    }

    pub fn softmax(&self, a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        if axis >= a.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: a.rank(),
            });
        }
        let (outer, len, inner) = kernels::axis_split(a.shape(), axis);
        let y = Arc::new(kernels::softmax_forward(a.data(), outer, len, inner));
        let saved = Arc::clone(&y);
        self.record(&[a], a.shape().to_vec(), y, move |dy, _| {
            vec![Some(kernels::softmax_backward(
                &saved, dy, outer, len, inner,
            ))]
        })
    }

    /// Normalizes over the last axis, then applies `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(
        &self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: T,
    ) -> Result<Tensor<T>> {
        let c = *x.shape().last().unwrap_or(&1);
        if x.rank() == 0 || gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        if eps.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::invalid("layer_norm eps must be positive"));
        }
        let (y, cache) = kernels::layer_norm_forward(x.data(), gamma.data(), beta.data(), c, eps);
        let gd = Arc::clone(gamma.data_arc());
        self.record(
            &[x, gamma, beta],
            x.shape().to_vec(),
            y,
            move |dy, needs| {
                let (dx, dg, db) = kernels::layer_norm_backward(dy, &gd, &cache, c);
                vec![
                    needs[0].then_some(dx),
                    needs[1].then_some(dg),
                    needs[2].then_some(db),
                ]
            },
        )
    }

    pub fn gelu(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let xd = Arc::clone(x.data_arc());
        let out: Vec<T> = xd.iter().map(|&v| kernels::gelu(v)).collect();
        self.record(&[x], x.shape().to_vec(), out, move |dy, _| {
            vec![Some(
                dy.iter()
                    .zip(xd.iter())
                    .map(|(&g, &v)| g * kernels::gelu_grad(v))
                    .collect(),
            )]
        })
    }

    /// Inverted dropout: identity in eval mode or at rate 0; in train mode
    /// zeroes each element with probability `rate` and scales survivors by
    /// `1 / (1 − rate)`.
    pub fn dropout(&self, x: &Tensor<T>, rate: f64, mode: &mut Mode) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        let rng = match mode {
            Mode::Train(rng) if rate > 0.0 => rng,
            _ => return Ok(x.clone()),
        };
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask: Arc<Vec<T>> = Arc::new(
            (0..x.len())
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect(),
        );
        let out: Vec<T> = x
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| v * m)
            .collect();
        self.record(&[x], x.shape().to_vec(), out, move |dy, _| {
            vec![Some(
                dy.iter().zip(mask.iter()).map(|(&g, &m)| g * m).collect(),
            )]
        })
    }

    /// Mean over samples of `−ln(max(p[label], 1e-12))`.
    ///
    /// `probs` is `[K]` (one sample) or `[B, K]`; `labels` has one entry per
    /// sample.
    pub fn cross_entropy(&self, probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
        let k = *probs.shape().last().unwrap_or(&1);
        let batch = probs.len() / k;
        if probs.rank() == 0 || probs.rank() > 2 || labels.len() != batch {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: probs.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let floor = T::from_f64(1e-12);
        let inv_b = T::one() / T::from_f64(batch as f64);
        let pd = Arc::clone(probs.data_arc());
        let loss = labels
            .iter()
            .enumerate()
            .map(|(b, &l)| -pd[b * k + l].max(floor).ln())
            .sum::<T>()
            * inv_b;
        let labels = labels.to_vec();
        self.record(&[probs], Vec::new(), vec![loss], move |dy, _| {
            let mut dp = vec![T::zero(); pd.len()];
            for (b, &l) in labels.iter().enumerate() {
                let p = pd[b * k + l];
                if p > floor {
                    dp[b * k + l] = -dy[0] * inv_b / p;
                }
            }
            vec![Some(dp)]
        })
    }

    /// `x · w (+ b)`.
    pub fn linear(&self, x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(&y, b),
            None => Ok(y),
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T: Scalar = f64> {
    tape: u64,
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to a leaf tensor.
    pub fn wrt(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        let node = t.node()?;
        if node.tape != self.tape {
            return None;
        }
        self.leaves.get(&node.index)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
