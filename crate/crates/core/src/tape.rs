//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! Every op computes its value with the plain kernels from `tensor` and
//! pushes a node holding a backward closure. `backward` walks the tape in
//! reverse, accumulating gradients for every recorded node, so any
//! intermediate (e.g. a captured feature map) can be queried afterwards.

use crate::error::{Error, Result};
use crate::tensor::{
    self, max_axes, mean_axes, reduce_to_shape, softmax, sum_axes, zip_broadcast, Element, Tensor,
};
use std::cell::{Cell, RefCell};

/// Handle to a node on a tape. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// grad w.r.t. output -> grads w.r.t. each parent (same order, same shapes).
type BackFn<E> = Box<dyn Fn(&Tensor<E>) -> Vec<Tensor<E>>>;

struct Node<E: Element> {
    value: Tensor<E>,
    parents: Vec<Var>,
    back: Option<BackFn<E>>,
}

/// One recorded computation. Confined to a single thread.
pub struct Tape<E: Element> {
    nodes: RefCell<Vec<Node<E>>>,
    consumed: Cell<bool>,
}

/// Per-node gradients produced by one `backward` pass.
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape if `v` was unreachable
    /// from the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<E> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Elementwise operation tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Negate,
}

/// Reduction tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

fn sigmoid_val<E: Element>(x: E) -> E {
    // split on sign so exp never overflows
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), consumed: Cell::new(false) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record an input node (parameter, data, constant).
    pub fn leaf(&self, value: Tensor<E>) -> Var {
        self.push(value, vec![], None)
    }

    /// Low-level node registration; layer ops use this to install custom
    /// backward closures.
    pub fn push(&self, value: Tensor<E>, parents: Vec<Var>, back: Option<BackFn<E>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, back });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Tensor<E> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    // ── elementwise ──────────────────────────────────────────────────

    /// Dispatch by tag; binary tags require `b`.
    pub fn elementwise(&self, op: ElemOp, a: Var, b: Option<Var>) -> Result<Var> {
        match (op, b) {
            (ElemOp::Add, Some(b)) => self.add(a, b),
            (ElemOp::Sub, Some(b)) => self.sub(a, b),
            (ElemOp::Mul, Some(b)) => self.mul(a, b),
            (ElemOp::Div, Some(b)) => self.div(a, b),
            (ElemOp::Relu, None) => self.relu(a),
            (ElemOp::Sigmoid, None) => self.sigmoid(a),
            (ElemOp::Exp, None) => self.exp(a),
            (ElemOp::Log, None) => self.log(a),
            (ElemOp::Negate, None) => self.negate(a),
            (op, b) => Err(Error::Tape(format!(
                "elementwise {op:?} with {} operand(s)",
                1 + b.is_some() as usize
            ))),
        }
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = zip_broadcast(&va, &vb, |x, y| x + y)?;
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g| {
                vec![reduce_to_shape(g, &sa), reduce_to_shape(g, &sb)]
            })),
        ))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = zip_broadcast(&va, &vb, |x, y| x - y)?;
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g| {
                vec![
                    reduce_to_shape(g, &sa),
                    reduce_to_shape(&g.map(|x| -x), &sb),
                ]
            })),
        ))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = zip_broadcast(&va, &vb, |x, y| x * y)?;
        let (ca, cb) = (va.clone(), vb.clone());
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g| {
                let ga = zip_broadcast(g, &cb, |x, y| x * y).unwrap();
                let gb = zip_broadcast(g, &ca, |x, y| x * y).unwrap();
                vec![reduce_to_shape(&ga, ca.shape()), reduce_to_shape(&gb, cb.shape())]
            })),
        ))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.data().iter().any(|&x| x == E::zero()) {
            return Err(Error::Domain("division by zero".into()));
        }
        let out = zip_broadcast(&va, &vb, |x, y| x / y)?;
        let (ca, cb) = (va.clone(), vb.clone());
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g| {
                let ga = zip_broadcast(g, &cb, |x, y| x / y).unwrap();
                // d/db (a/b) = -a/b^2
                let gb = zip_broadcast(g, &ca, |x, y| x * y).unwrap();
                let gb = zip_broadcast(&gb, &cb, |x, y| -x / (y * y)).unwrap();
                vec![reduce_to_shape(&ga, ca.shape()), reduce_to_shape(&gb, cb.shape())]
            })),
        ))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = va.map(|x| if x > E::zero() { x } else { E::zero() });
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g| {
                vec![zip_broadcast(g, &va, |gi, x| if x > E::zero() { gi } else { E::zero() }).unwrap()]
            })),
        ))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid_val);
        let y = out.clone();
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g| {
                vec![zip_broadcast(g, &y, |gi, yi| gi * yi * (E::one() - yi)).unwrap()]
            })),
        ))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.exp());
        out.check_finite("exp")?;
        let y = out.clone();
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g| {
                vec![zip_broadcast(g, &y, |gi, yi| gi * yi).unwrap()]
            })),
        ))
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.data().iter().any(|&x| x <= E::zero()) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        let out = va.map(|x| x.ln());
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g| {
                vec![zip_broadcast(g, &va, |gi, x| gi / x).unwrap()]
            })),
        ))
    }

    pub fn negate(&self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| -x);
        Ok(self.push(out, vec![a], Some(Box::new(move |g| vec![g.map(|x| -x)]))))
    }

    /// Multiply by a compile-time constant (not differentiated through).
    pub fn scale(&self, a: Var, c: E) -> Result<Var> {
        let out = self.value(a).scale(c);
        Ok(self.push(out, vec![a], Some(Box::new(move |g| vec![g.scale(c)]))))
    }

    pub fn add_scalar(&self, a: Var, c: E) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        Ok(self.push(out, vec![a], Some(Box::new(move |g| vec![g.clone()]))))
    }

    // ── matmul / softmax / reduce / structural ───────────────────────

    /// Matrix product over the last two axes (leading axes batch).
    /// Gradient rule: dA = g · Bᵀ, dB = Aᵀ · g.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = tensor::matmul(&va, &vb)?;
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g| {
                let bt = tensor::transpose_last2(&vb).unwrap();
                let at = tensor::transpose_last2(&va).unwrap();
                vec![
                    tensor::matmul(g, &bt).unwrap(),
                    tensor::matmul(&at, g).unwrap(),
                ]
            })),
        ))
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let out = softmax(&self.value(a), axis)?;
        let y = out.clone();
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g| {
                // dx = y * (g - sum(g*y, axis))
                let gy = zip_broadcast(g, &y, |a, b| a * b).unwrap();
                let s = sum_axes(&gy, &[axis], true).unwrap();
                let inner = zip_broadcast(g, &s, |a, b| a - b).unwrap();
                vec![zip_broadcast(&y, &inner, |a, b| a * b).unwrap()]
            })),
        ))
    }

    pub fn reduce(&self, op: ReduceOp, a: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        let va = self.value(a);
        let in_shape = va.shape().to_vec();
        match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                let n: usize = axes.iter().map(|&ax| in_shape[ax]).product();
                let out = if op == ReduceOp::Sum {
                    sum_axes(&va, axes, keepdims)?
                } else {
                    mean_axes(&va, axes, keepdims)?
                };
                let axes = axes.to_vec();
                let factor = if op == ReduceOp::Mean {
                    E::from_f64(1.0 / n as f64)
                } else {
                    E::one()
                };
                Ok(self.push(
                    out,
                    vec![a],
                    Some(Box::new(move |g| {
                        // re-expand over the reduced axes
                        let mut keep = g.clone();
                        if !keepdims {
                            // reinsert size-1 dims so broadcast lines up
                            let mut shape = in_shape.clone();
                            for (d, s) in shape.iter_mut().enumerate() {
                                if axes.contains(&d) {
                                    *s = 1;
                                }
                            }
                            keep = keep.reshape(&shape).unwrap();
                        }
                        let expanded =
                            zip_broadcast(&Tensor::zeros(&in_shape), &keep, |_, gi| gi * factor)
                                .unwrap();
                        vec![expanded]
                    })),
                ))
            }
            ReduceOp::Max => {
                let (out, arg) = max_axes(&va, axes, keepdims)?;
                Ok(self.push(
                    out,
                    vec![a],
                    Some(Box::new(move |g| {
                        let mut gx = Tensor::zeros(&in_shape);
                        for (o, &src) in arg.iter().enumerate() {
                            gx.data_mut()[src] += g.data()[o];
                        }
                        vec![gx]
                    })),
                ))
            }
        }
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let in_shape = va.shape().to_vec();
        let out = va.reshape(shape)?;
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g| vec![g.reshape(&in_shape).unwrap()])),
        ))
    }

    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let out = tensor::permute(&self.value(a), perm)?;
        let mut inverse = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g| vec![tensor::permute(g, &inverse).unwrap()])),
        ))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<Tensor<E>> = parts.iter().map(|&p| self.value(p)).collect();
        let refs: Vec<&Tensor<E>> = values.iter().collect();
        let out = tensor::concat(&refs, axis)?;
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        Ok(self.push(
            out,
            parts.to_vec(),
            Some(Box::new(move |g| tensor::split(g, axis, &sizes).unwrap())),
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse accumulation from a scalar loss. Consumes the tape: a
    /// second call is an error.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        if self.consumed.get() {
            return Err(Error::Tape("backward called twice on a consumed tape".into()));
        }
        let nodes = self.nodes.borrow();
        let loss_node = nodes
            .get(loss.0)
            .ok_or_else(|| Error::Tape("loss var not on this tape".into()))?;
        if !loss_node.value.is_scalar() {
            return Err(Error::Tape(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Tensor<E>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::ones(loss_node.value.shape()));
        for i in (0..=loss.0).rev() {
            let g = match &grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            let node = &nodes[i];
            if let Some(back) = &node.back {
                let parent_grads = back(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (p, pg) in node.parents.iter().zip(parent_grads) {
                    debug_assert_eq!(
                        pg.shape(),
                        nodes[p.0].value.shape(),
                        "backward produced wrong gradient shape"
                    );
                    match &mut grads[p.0] {
                        Some(acc) => {
                            let sum = zip_broadcast(acc, &pg, |a, b| a + b).unwrap();
                            *acc = sum;
                        }
                        slot => *slot = Some(pg),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

// ── finite differences ───────────────────────────────────────────────

/// Result of a gradient check.
#[derive(Debug, Clone)]
pub struct FdCheck {
    pub max_rel_err: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-2)
}

/// Central-difference gradient check of a scalar-valued tensor function.
///
/// `f` maps an input var on a fresh tape to a scalar loss var. The
/// analytic gradient comes from `backward`; the numeric one from
/// (f(x+h) - f(x-h)) / 2h per coordinate.
pub fn finite_difference_check<E: Element>(
    f: &dyn Fn(&Tape<E>, Var) -> Result<Var>,
    x: &Tensor<E>,
    step: f64,
) -> Result<FdCheck> {
    let eval = |t: &Tensor<E>| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.leaf(t.clone());
        let loss = f(&tape, v)?;
        Ok(tape.value(loss).scalar_value().as_f64())
    };

    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get_or_zeros(xv, x.shape());

    let h = step;
    let mut numeric = Vec::with_capacity(x.len());
    let mut max_rel = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + E::from_f64(h);
        let fp = eval(&xp)?;
        xp.data_mut()[i] = orig - E::from_f64(h);
        let fm = eval(&xp)?;
        xp.data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i].as_f64();
        max_rel = max_rel.max(rel_err(a, fd));
        numeric.push(fd);
    }
    Ok(FdCheck {
        max_rel_err: max_rel,
        analytic: analytic.data().iter().map(|x| x.as_f64()).collect(),
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_examples() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);

        let a = t.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let b = t.leaf(Tensor::from_vec(vec![3.0, 4.0]));
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value(s).data(), &[4.0, 6.0]);

        let z = t.leaf(Tensor::from_vec(vec![0.0]));
        let sg = t.sigmoid(z).unwrap();
        assert_eq!(t.value(sg).data(), &[0.5]);
    }

    #[test]
    fn elementwise_dispatch_arity() {
        let t = Tape::<f64>::new();
        let a = t.leaf(Tensor::from_vec(vec![1.0]));
        assert!(t.elementwise(ElemOp::Add, a, None).is_err());
        assert!(t.elementwise(ElemOp::Relu, a, Some(a)).is_err());
        assert!(t.elementwise(ElemOp::Negate, a, None).is_ok());
    }

    #[test]
    fn domain_errors_not_nan() {
        let t = Tape::<f64>::new();
        let a = t.leaf(Tensor::from_vec(vec![1.0]));
        let z = t.leaf(Tensor::from_vec(vec![0.0]));
        assert!(matches!(t.div(a, z), Err(Error::Domain(_))));
        assert!(matches!(t.log(z), Err(Error::Domain(_))));
    }

    #[test]
    fn backward_sum_is_ones() {
        let t = Tape::<f64>::new();
        let w = t.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let loss = t.reduce(ReduceOp::Sum, w, &[0], false).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_relu_mask() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_vec(vec![-1.0, 2.0]));
        let r = t.relu(x).unwrap();
        let loss = t.reduce(ReduceOp::Sum, r, &[0], false).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_mean_distributes() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_vec(vec![0.0; 8]));
        let m = t.reduce(ReduceOp::Mean, x, &[0], false).unwrap();
        let g = t.backward(m).unwrap();
        for &v in g.get(x).unwrap().data() {
            assert!((v - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_gradient_matches_rule() {
        // d sum(a.b) / da at a=[[1,1]], b=[[2],[5]] -> [[2,5]]
        let t = Tape::<f64>::new();
        let a = t.leaf(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let b = t.leaf(Tensor::new(vec![2, 1], vec![2.0, 5.0]).unwrap());
        let p = t.matmul(a, b).unwrap();
        let loss = t.reduce(ReduceOp::Sum, p, &[0, 1], false).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[2.0, 5.0]);
    }

    #[test]
    fn matmul_gradient_matches_fd() {
        let b = Tensor::new(vec![2, 1], vec![2.0, 5.0]).unwrap();
        let check = finite_difference_check(
            &|t: &Tape<f64>, a| {
                let bv = t.leaf(b.clone());
                let p = t.matmul(a, bv)?;
                t.reduce(ReduceOp::Sum, p, &[0, 1], false)
            },
            &Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(),
            1e-4,
        )
        .unwrap();
        assert!(check.max_rel_err < 1e-8, "rel err {}", check.max_rel_err);
    }

    #[test]
    fn backward_twice_is_error() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert!(t.backward(y).is_err());
    }

    #[test]
    fn backward_nonscalar_is_error() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn fd_check_sum_of_squares() {
        // f = sum(x^2) at x=[3]: analytic gradient 6
        let check = finite_difference_check(
            &|t: &Tape<f64>, x| {
                let sq = t.mul(x, x)?;
                t.reduce(ReduceOp::Sum, sq, &[0], false)
            },
            &Tensor::from_vec(vec![3.0]),
            1e-5,
        )
        .unwrap();
        assert!((check.analytic[0] - 6.0).abs() < 1e-12);
        assert!((check.numeric[0] - 6.0).abs() < 1e-8);
        assert!(check.max_rel_err < 1e-9);
    }

    #[test]
    fn fd_check_sigmoid_quarter() {
        let check = finite_difference_check(
            &|t: &Tape<f64>, x| {
                let s = t.sigmoid(x)?;
                t.reduce(ReduceOp::Sum, s, &[0], false)
            },
            &Tensor::from_vec(vec![0.0]),
            1e-5,
        )
        .unwrap();
        assert!((check.analytic[0] - 0.25).abs() < 1e-12);
        assert!(check.max_rel_err < 1e-9);
    }

    #[test]
    fn softmax_backward_matches_fd() {
        let x = Tensor::from_vec(vec![0.3, -1.2, 0.7, 0.1]);
        let check = finite_difference_check(
            &|t: &Tape<f64>, x| {
                let s = t.softmax(x, 0)?;
                // weighted sum so the gradient is not identically zero
                let w = t.leaf(Tensor::from_vec(vec![1.0, 2.0, -1.0, 0.5]));
                let p = t.mul(s, w)?;
                t.reduce(ReduceOp::Sum, p, &[0], false)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_err < 1e-8, "rel err {}", check.max_rel_err);
    }

    #[test]
    fn tape_values_match_tape_free_eval() {
        // recording must not perturb values
        let x = Tensor::from_vec(vec![0.5, -0.25, 1.5]);
        let y = Tensor::from_vec(vec![2.0, 3.0, 4.0]);
        let t = Tape::<f32>::new();
        let (a, b) = (t.leaf(x.cast()), t.leaf(y.cast()));
        let m = t.mul(a, b).unwrap();
        let s = t.sigmoid(m).unwrap();
        let taped = t.value(s);
        drop(t);
        let raw = zip_broadcast(&x.cast::<f32>(), &y.cast::<f32>(), |a, b| a * b)
            .unwrap()
            .map(sigmoid_val);
        assert_eq!(taped, raw);
    }

    #[test]
    fn max_reduce_backward_first_tie() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_vec(vec![5.0, 5.0, 1.0]));
        let m = t.reduce(ReduceOp::Max, x, &[0], false).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }
}
