//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Values are stored row-major. A [`Tape`] records operations during the
//! forward pass; [`Tape::backward`] replays them in reverse to accumulate
//! gradients for every leaf that requires them. Tapes are created per
//! training step and discarded after backward.
//!
//! The element type is generic so the same graph-building code can run in
//! f32 (model state) and f64 (finite-difference oracles in tests).

use std::cell::RefCell;
use std::rc::Rc;

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

/// Scalar element type for tensors.
pub trait Element: Float + FromPrimitive + Default + std::fmt::Debug + 'static {}
impl Element for f32 {}
impl Element for f64 {}

/// Shorthand conversion from f64 constants.
pub(crate) fn el<T: Element>(x: f64) -> T {
    T::from_f64(x).expect("constant conversion")
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("tensors belong to different tapes in {0}")]
    TapeMismatch(&'static str),
    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<V, E = TensorError> = std::result::Result<V, E>;

type BackFn<T> = Box<dyn Fn(&[T], &mut GradBuf<T>)>;

struct Node<T> {
    parents: Vec<usize>,
    len: usize,
    back: Option<BackFn<T>>,
}

pub struct TapeInner<T> {
    nodes: Vec<Node<T>>,
}

/// Append-only record of operations; shared by all tensors of one step.
#[derive(Clone)]
pub struct Tape<T: Element> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

pub(crate) struct GradBuf<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Element> GradBuf<T> {
    pub(crate) fn with(&mut self, node: usize, len: usize, f: impl FnOnce(&mut [T])) {
        let slot = self.slots[node].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }
}

/// Gradients produced by one backward pass, indexed by node id.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    lens: Vec<usize>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `t`. Leaves never reached by the
    /// loss get a zero gradient of the right length.
    pub fn wrt(&self, t: &Tensor<T>) -> Vec<T> {
        let id = t.node_id().expect("gradient of a tensor not on the tape");
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.lens[id]],
        }
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })) }
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }

    /// Register a gradient-requiring leaf.
    pub fn leaf(&self, data: Vec<T>, shape: Vec<usize>) -> Tensor<T> {
        assert_eq!(numel(&shape), data.len(), "leaf data/shape mismatch");
        let id = self.push(Node { parents: vec![], len: data.len(), back: None });
        Tensor { data: Rc::new(data), shape, node: Some((self.clone(), id)) }
    }

    fn same(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Reverse pass from a scalar loss node. Gradients are populated for
    /// every leaf reachable from the loss; deterministic across repeated
    /// invocations on the same tape.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        let (tape, loss_id) = match &loss.node {
            Some((t, id)) if t.same(self) => (t, *id),
            Some(_) => return Err(TensorError::TapeMismatch("backward")),
            None => return Err(TensorError::Invalid("loss tensor is not on the tape".into())),
        };
        if loss.data.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss.shape.clone()));
        }
        let _ = tape;
        let inner = self.inner.borrow();
        let n = inner.nodes.len();

        // Mark nodes reachable from the loss.
        let mut reachable = vec![false; n];
        let mut stack = vec![loss_id];
        while let Some(id) = stack.pop() {
            if reachable[id] {
                continue;
            }
            reachable[id] = true;
            stack.extend_from_slice(&inner.nodes[id].parents);
        }

        let mut buf = GradBuf { slots: vec![None; n] };
        buf.slots[loss_id] = Some(vec![T::one()]);
        for id in (0..=loss_id).rev() {
            if !reachable[id] {
                continue;
            }
            let node = &inner.nodes[id];
            if let Some(back) = &node.back {
                let g = match buf.slots[id].take() {
                    Some(g) => g,
                    None => continue,
                };
                back(&g, &mut buf);
                buf.slots[id] = Some(g);
            }
        }
        let lens = inner.nodes.iter().map(|n| n.len).collect();
        // Drop non-leaf gradients; callers only query leaves and inputs.
        Ok(Gradients { grads: buf.slots, lens })
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Dense row-major tensor, optionally recorded on a tape.
#[derive(Clone)]
pub struct Tensor<T: Element> {
    data: Rc<Vec<T>>,
    shape: Vec<usize>,
    node: Option<(Tape<T>, usize)>,
}

impl<T: Element> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

// Resolve the tape shared by a set of inputs, erroring on mixed tapes.
fn common_tape<T: Element>(op: &'static str, inputs: &[&Tensor<T>]) -> Result<Option<Tape<T>>> {
    let mut found: Option<Tape<T>> = None;
    for t in inputs {
        if let Some((tape, _)) = &t.node {
            match &found {
                None => found = Some(tape.clone()),
                Some(f) if f.same(tape) => {}
                Some(_) => return Err(TensorError::TapeMismatch(op)),
            }
        }
    }
    Ok(found)
}

fn record<T: Element>(
    tape: Option<Tape<T>>,
    data: Vec<T>,
    shape: Vec<usize>,
    parents: Vec<usize>,
    back: Option<BackFn<T>>,
) -> Tensor<T> {
    match tape {
        Some(tape) => {
            let id = tape.push(Node { parents, len: data.len(), back });
            Tensor { data: Rc::new(data), shape, node: Some((tape, id)) }
        }
        None => Tensor { data: Rc::new(data), shape, node: None },
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), data.len(), "data/shape mismatch");
        Tensor { data: Rc::new(data), shape: shape.to_vec(), node: None }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(vec![T::zero(); numel(shape)], shape)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor::from_vec(vec![v; numel(shape)], shape)
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_vec(vec![v], &[1])
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    /// Same values, severed from the tape.
    pub fn detach(&self) -> Tensor<T> {
        Tensor { data: self.data.clone(), shape: self.shape.clone(), node: None }
    }

    // ── elementwise binary ops (rhs may broadcast as a shape suffix) ──

    fn binary(
        &self,
        rhs: &Tensor<T>,
        op: &'static str,
        fwd: impl Fn(T, T) -> T,
        dl: impl Fn(T, T) -> T + 'static,
        dr: impl Fn(T, T) -> T + 'static,
    ) -> Result<Tensor<T>> {
        let suffix_ok = self.shape.len() >= rhs.shape.len()
            && self.shape[self.shape.len() - rhs.shape.len()..] == rhs.shape[..];
        if !suffix_ok {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let rlen = rhs.data.len().max(1);
        let out: Vec<T> =
            self.data.iter().enumerate().map(|(i, &a)| fwd(a, rhs.data[i % rlen])).collect();
        let tape = common_tape(op, &[self, rhs])?;
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let (la, lb) = (self.node_id(), rhs.node_id());
            let (ad, bd) = (self.data.clone(), rhs.data.clone());
            let alen = ad.len();
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                if let Some(ia) = la {
                    buf.with(ia, alen, |ga| {
                        for i in 0..alen {
                            ga[i] = ga[i] + g[i] * dl(ad[i], bd[i % rlen]);
                        }
                    });
                }
                if let Some(ib) = lb {
                    buf.with(ib, rlen, |gb| {
                        for i in 0..alen {
                            gb[i % rlen] = gb[i % rlen] + g[i] * dr(ad[i], bd[i % rlen]);
                        }
                    });
                }
            }) as BackFn<T>
        });
        let parents = [self.node_id(), rhs.node_id()].into_iter().flatten().collect();
        Ok(record(tape, out, self.shape.clone(), parents, back))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "add", |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "sub", |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "div", |a, b| a / b, |_, b| T::one() / b, |a, b| -a / (b * b))
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(
            rhs,
            "minimum",
            |a, b| if a <= b { a } else { b },
            |a, b| if a <= b { T::one() } else { T::zero() },
            |a, b| if a <= b { T::zero() } else { T::one() },
        )
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(
            rhs,
            "maximum",
            |a, b| if a >= b { a } else { b },
            |a, b| if a >= b { T::one() } else { T::zero() },
            |a, b| if a >= b { T::zero() } else { T::one() },
        )
    }

    // ── elementwise unary ops ──

    fn unary(
        &self,
        _op: &'static str,
        fwd: impl Fn(T) -> T,
        dfdx: impl Fn(T, T) -> T + 'static, // (x, y) -> dy/dx
    ) -> Tensor<T> {
        let out: Vec<T> = self.data.iter().map(|&x| fwd(x)).collect();
        let tape = self.node.as_ref().map(|(t, _)| t.clone());
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let xd = self.data.clone();
            let yd: Rc<Vec<T>> = Rc::new(out.clone());
            let len = xd.len();
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                buf.with(id, len, |gx| {
                    for i in 0..len {
                        gx[i] = gx[i] + g[i] * dfdx(xd[i], yd[i]);
                    }
                });
            }) as BackFn<T>
        });
        let parents = self.node_id().into_iter().collect();
        record(tape, out, self.shape.clone(), parents, back)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c: T = el(c);
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c: T = el(c);
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary("relu", |x| x.max(T::zero()), |x, _| {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            "sigmoid",
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary("ln", |x| x.ln(), |x, _| T::one() / x)
    }

    /// Tanh-approximation GELU: 0.5x(1 + tanh(√(2/π)(x + 0.044715x³))).
    pub fn gelu(&self) -> Tensor<T> {
        let k: T = el(0.797_884_560_802_865_4); // sqrt(2/pi)
        let c: T = el(0.044715);
        let half: T = el(0.5);
        let three: T = el(3.0);
        self.unary(
            "gelu",
            move |x| half * x * (T::one() + (k * (x + c * x * x * x)).tanh()),
            move |x, _| {
                let t = (k * (x + c * x * x * x)).tanh();
                half * (T::one() + t)
                    + half * x * (T::one() - t * t) * k * (T::one() + three * c * x * x)
            },
        )
    }

    // ── shape ops ──

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let tape = self.node.as_ref().map(|(t, _)| t.clone());
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let len = self.data.len();
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                buf.with(id, len, |gx| {
                    for i in 0..len {
                        gx[i] = gx[i] + g[i];
                    }
                });
            }) as BackFn<T>
        });
        let parents = self.node_id().into_iter().collect();
        Ok(record(tape, self.data.to_vec(), shape.to_vec(), parents, back))
    }

    /// Pure data movement: `out[i] = self[map[i]]`. Backbone of transpose,
    /// slicing, window partitioning and cyclic shifts.
    pub fn gather(&self, map: &[usize], out_shape: &[usize]) -> Tensor<T> {
        assert_eq!(map.len(), numel(out_shape), "gather map/shape mismatch");
        let out: Vec<T> = map.iter().map(|&j| self.data[j]).collect();
        let tape = self.node.as_ref().map(|(t, _)| t.clone());
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let len = self.data.len();
            let map = map.to_vec();
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                buf.with(id, len, |gx| {
                    for (i, &j) in map.iter().enumerate() {
                        gx[j] = gx[j] + g[i];
                    }
                });
            }) as BackFn<T>
        });
        let parents = self.node_id().into_iter().collect();
        record(tape, out, out_shape.to_vec(), parents, back)
    }

    /// Swap two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        let rank = self.shape.len();
        if a >= rank || b >= rank {
            return Err(TensorError::AxisOutOfRange { axis: a.max(b), rank });
        }
        let mut out_shape = self.shape.clone();
        out_shape.swap(a, b);
        let in_strides = strides(&self.shape);
        let out_strides = strides(&out_shape);
        let mut map = vec![0usize; self.data.len()];
        for (i, m) in map.iter_mut().enumerate() {
            let mut rem = i;
            let mut src = 0usize;
            for (ax, &os) in out_strides.iter().enumerate() {
                let idx = rem / os;
                rem %= os;
                let src_ax = if ax == a {
                    b
                } else if ax == b {
                    a
                } else {
                    ax
                };
                src += idx * in_strides[src_ax];
            }
            *m = src;
        }
        Ok(self.gather(&map, &out_shape))
    }

    /// Contiguous slice along one axis.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let rank = self.shape.len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        if start + len > self.shape[axis] {
            return Err(TensorError::Invalid(format!(
                "slice {start}..{} out of bounds for axis {axis} of extent {}",
                start + len,
                self.shape[axis]
            )));
        }
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let extent = self.shape[axis];
        let mut map = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for i in 0..len {
                let base = (o * extent + start + i) * inner;
                map.extend(base..base + inner);
            }
        }
        Ok(self.gather(&map, &out_shape))
    }

    /// Concatenate along one axis; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let rank = first.shape.len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let mut axis_total = 0;
        for p in parts {
            let mut s = p.shape.clone();
            if s.len() != rank {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            s[axis] = first.shape[axis];
            if s != first.shape {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            axis_total += p.shape[axis];
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let tape = common_tape("concat", parts)?;
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let metas: Vec<(Option<usize>, usize, usize)> =
                parts.iter().map(|p| (p.node_id(), p.shape[axis] * inner, p.data.len())).collect();
            let row = axis_total * inner;
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                for o in 0..outer {
                    let mut off = o * row;
                    for &(id, chunk, plen) in &metas {
                        if let Some(id) = id {
                            let src = &g[off..off + chunk];
                            buf.with(id, plen, |gp| {
                                for (k, &v) in src.iter().enumerate() {
                                    gp[o * chunk + k] = gp[o * chunk + k] + v;
                                }
                            });
                        }
                        off += chunk;
                    }
                }
            }) as BackFn<T>
        });
        let parents = parts.iter().filter_map(|p| p.node_id()).collect();
        Ok(record(tape, out, out_shape, parents, back))
    }

    // ── matrix products ──

    /// 2-D matrix product.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let out = mm_nn(&self.data, &rhs.data, m, k, n);
        let tape = common_tape("matmul", &[self, rhs])?;
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let (la, lb) = (self.node_id(), rhs.node_id());
            let (ad, bd) = (self.data.clone(), rhs.data.clone());
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                if let Some(ia) = la {
                    let ga = mm_nt(g, &bd, m, n, k); // g[m,n] @ B^T[n,k]
                    buf.with(ia, m * k, |s| accumulate(s, &ga));
                }
                if let Some(ib) = lb {
                    let gb = mm_tn(&ad, g, m, k, n); // A^T[k,m] @ g[m,n]
                    buf.with(ib, k * n, |s| accumulate(s, &gb));
                }
            }) as BackFn<T>
        });
        let parents = [self.node_id(), rhs.node_id()].into_iter().flatten().collect();
        Ok(record(tape, out, vec![m, n], parents, back))
    }

    /// Batched 3-D matrix product: [b,m,k] x [b,k,n] -> [b,m,n].
    pub fn bmm(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 3
            || rhs.rank() != 3
            || self.shape[0] != rhs.shape[0]
            || self.shape[2] != rhs.shape[1]
        {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let (b, m, k, n) = (self.shape[0], self.shape[1], self.shape[2], rhs.shape[2]);
        let mut out = Vec::with_capacity(b * m * n);
        for i in 0..b {
            out.extend(mm_nn(
                &self.data[i * m * k..(i + 1) * m * k],
                &rhs.data[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        let tape = common_tape("bmm", &[self, rhs])?;
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let (la, lb) = (self.node_id(), rhs.node_id());
            let (ad, bd) = (self.data.clone(), rhs.data.clone());
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                for i in 0..b {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    if let Some(ia) = la {
                        let ga = mm_nt(gi, &bd[i * k * n..(i + 1) * k * n], m, n, k);
                        buf.with(ia, b * m * k, |s| {
                            accumulate(&mut s[i * m * k..(i + 1) * m * k], &ga)
                        });
                    }
                    if let Some(ib) = lb {
                        let gb = mm_tn(&ad[i * m * k..(i + 1) * m * k], gi, m, k, n);
                        buf.with(ib, b * k * n, |s| {
                            accumulate(&mut s[i * k * n..(i + 1) * k * n], &gb)
                        });
                    }
                }
            }) as BackFn<T>
        });
        let parents = [self.node_id(), rhs.node_id()].into_iter().flatten().collect();
        Ok(record(tape, out, vec![b, m, n], parents, back))
    }

    // ── reductions ──

    pub fn reduce_sum(&self) -> Tensor<T> {
        let s = self.data.iter().fold(T::zero(), |acc, &x| acc + x);
        let tape = self.node.as_ref().map(|(t, _)| t.clone());
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let len = self.data.len();
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                buf.with(id, len, |gx| {
                    for v in gx.iter_mut() {
                        *v = *v + g[0];
                    }
                });
            }) as BackFn<T>
        });
        let parents = self.node_id().into_iter().collect();
        record(tape, vec![s], vec![1], parents, back)
    }

    pub fn reduce_mean(&self) -> Tensor<T> {
        let n = self.data.len();
        self.reduce_sum().scale(1.0 / n as f64)
    }

    /// Mean along one axis (the axis is removed).
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let rank = self.shape.len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let extent = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![T::zero(); outer * inner];
        let inv: T = el(1.0 / extent as f64);
        for o in 0..outer {
            for i in 0..extent {
                let base = (o * extent + i) * inner;
                for j in 0..inner {
                    out[o * inner + j] = out[o * inner + j] + self.data[base + j] * inv;
                }
            }
        }
        let mut out_shape = self.shape.clone();
        out_shape.remove(axis);
        let tape = self.node.as_ref().map(|(t, _)| t.clone());
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let len = self.data.len();
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                buf.with(id, len, |gx| {
                    for o in 0..outer {
                        for i in 0..extent {
                            let base = (o * extent + i) * inner;
                            for j in 0..inner {
                                gx[base + j] = gx[base + j] + g[o * inner + j] * inv;
                            }
                        }
                    }
                });
            }) as BackFn<T>
        });
        let parents = self.node_id().into_iter().collect();
        Ok(record(tape, out, out_shape, parents, back))
    }

    // ── fused neural-net ops ──

    /// Numerically stable softmax along `axis` (max-subtraction).
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let rank = self.shape.len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let (outer, extent, inner) = lane_dims(&self.shape, axis);
        let mut out = self.data.to_vec();
        for_each_lane(outer, extent, inner, |idx| {
            let mx = idx.iter().map(|&i| out[i]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &i in idx {
                let e = (out[i] - mx).exp();
                out[i] = e;
                sum = sum + e;
            }
            for &i in idx {
                out[i] = out[i] / sum;
            }
        });
        let tape = self.node.as_ref().map(|(t, _)| t.clone());
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let y: Rc<Vec<T>> = Rc::new(out.clone());
            let len = self.data.len();
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                buf.with(id, len, |gx| {
                    for_each_lane(outer, extent, inner, |idx| {
                        let dot =
                            idx.iter().map(|&i| g[i] * y[i]).fold(T::zero(), |a, b| a + b);
                        for &i in idx {
                            gx[i] = gx[i] + (g[i] - dot) * y[i];
                        }
                    });
                });
            }) as BackFn<T>
        });
        let parents = self.node_id().into_iter().collect();
        Ok(record(tape, out, self.shape.clone(), parents, back))
    }

    /// Log-softmax along `axis`, stable via max-subtraction.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let rank = self.shape.len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let (outer, extent, inner) = lane_dims(&self.shape, axis);
        let mut out = self.data.to_vec();
        for_each_lane(outer, extent, inner, |idx| {
            let mx = idx.iter().map(|&i| out[i]).fold(T::neg_infinity(), T::max);
            let lse = idx
                .iter()
                .map(|&i| (out[i] - mx).exp())
                .fold(T::zero(), |a, b| a + b)
                .ln()
                + mx;
            for &i in idx {
                out[i] = out[i] - lse;
            }
        });
        let tape = self.node.as_ref().map(|(t, _)| t.clone());
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let y: Rc<Vec<T>> = Rc::new(out.clone());
            let len = self.data.len();
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                buf.with(id, len, |gx| {
                    for_each_lane(outer, extent, inner, |idx| {
                        let gsum = idx.iter().map(|&i| g[i]).fold(T::zero(), |a, b| a + b);
                        for &i in idx {
                            gx[i] = gx[i] + g[i] - y[i].exp() * gsum;
                        }
                    });
                });
            }) as BackFn<T>
        });
        let parents = self.node_id().into_iter().collect();
        Ok(record(tape, out, self.shape.clone(), parents, back))
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        if eps <= 0.0 {
            return Err(TensorError::Invalid(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let d = *self.shape.last().ok_or_else(|| {
            TensorError::Invalid("layer_norm on rank-0 tensor".into())
        })?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: vec![d],
                rhs: gamma.shape().to_vec(),
            });
        }
        let rows = self.data.len() / d;
        let eps_t: T = el(eps);
        let inv_d: T = el(1.0 / d as f64);
        let mut out = vec![T::zero(); self.data.len()];
        let mut xhat = vec![T::zero(); self.data.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &self.data[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) * inv_d;
            let var = row.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) * inv_d;
            let istd = T::one() / (var + eps_t).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                xhat[r * d + j] = xh;
                out[r * d + j] = gamma.data[j] * xh + beta.data[j];
            }
        }
        let tape = common_tape("layer_norm", &[self, gamma, beta])?;
        let back: Option<BackFn<T>> = tape.as_ref().map(|_| {
            let (lx, lg, lb) = (self.node_id(), gamma.node_id(), beta.node_id());
            let gd = gamma.data.clone();
            let xhat = Rc::new(xhat);
            let inv_std = Rc::new(inv_std);
            let len = self.data.len();
            Box::new(move |g: &[T], buf: &mut GradBuf<T>| {
                if let Some(ib) = lb {
                    buf.with(ib, d, |s| {
                        for r in 0..rows {
                            for j in 0..d {
                                s[j] = s[j] + g[r * d + j];
                            }
                        }
                    });
                }
                if let Some(ig) = lg {
                    buf.with(ig, d, |s| {
                        for r in 0..rows {
                            for j in 0..d {
                                s[j] = s[j] + g[r * d + j] * xhat[r * d + j];
                            }
                        }
                    });
                }
                if let Some(ix) = lx {
                    buf.with(ix, len, |s| {
                        for r in 0..rows {
                            let mut mean_dxh = T::zero();
                            let mut mean_dxh_xh = T::zero();
                            for j in 0..d {
                                let dxh = g[r * d + j] * gd[j];
                                mean_dxh = mean_dxh + dxh;
                                mean_dxh_xh = mean_dxh_xh + dxh * xhat[r * d + j];
                            }
                            mean_dxh = mean_dxh * inv_d;
                            mean_dxh_xh = mean_dxh_xh * inv_d;
                            for j in 0..d {
                                let dxh = g[r * d + j] * gd[j];
                                s[r * d + j] = s[r * d + j]
                                    + inv_std[r]
                                        * (dxh - mean_dxh - xhat[r * d + j] * mean_dxh_xh);
                            }
                        }
                    });
                }
            }) as BackFn<T>
        });
        let parents =
            [self.node_id(), gamma.node_id(), beta.node_id()].into_iter().flatten().collect();
        Ok(record(tape, out, self.shape.clone(), parents, back))
    }
}

fn accumulate<T: Element>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn for_each_lane(outer: usize, extent: usize, inner: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; extent];
    for o in 0..outer {
        for j in 0..inner {
            for (i, slot) in idx.iter_mut().enumerate() {
                *slot = (o * extent + i) * inner + j;
            }
            f(&idx);
        }
    }
}

fn mm_nn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

// a[m,n] @ b[k,n]^T -> [m,k]
fn mm_nt<T: Element>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for j in 0..n {
                s = s + arow[j] * brow[j];
            }
            out[i * k + p] = s;
        }
    }
    out
}

// a[m,k]^T @ b[m,n] -> [k,n]
fn mm_tn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}
