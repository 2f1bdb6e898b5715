//! Define-by-run reverse-mode differentiation.
//!
//! Every operation on a [`Tape`] evaluates eagerly and records its inputs;
//! [`Tape::backward`] then walks the record in reverse creation order, which
//! is a valid topological order because a node can only reference earlier
//! nodes.

use crate::diffcore::tensor::{gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    None,
    Row,
    Scalar,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, S),
    AddScalar(Var),
    MatMul(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sqrt(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Concat(Var, Var),
    SliceCols(Var, usize),
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Ordered record of primitive operations and their values.
#[derive(Clone, Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients of a scalar output with respect to every node that needed one.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` if `v` did not influence
    /// the output.
    pub fn wrt_or_zeros(&self, v: Var, like: &Tensor<S>) -> Tensor<S> {
        self.wrt(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(
        &mut self,
        value: Tensor<S>,
        op: Op<S>,
        needs_grad: bool,
        name: &'static str,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn broadcast_kind(&self, a: Var, b: Var, op: &'static str) -> Result<Broadcast> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let ta = self.value(a);
        let tb = self.value(b);
        if sa == sb {
            Ok(Broadcast::None)
        } else if tb.len() == 1 {
            Ok(Broadcast::Scalar)
        } else if tb.rows() == 1 && tb.cols() == ta.cols() {
            Ok(Broadcast::Row)
        } else {
            Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn binary(&mut self, a: Var, b: Var, kind: u8) -> Result<Var> {
        let name = ["add", "sub", "mul"][kind as usize];
        let bc = self.broadcast_kind(a, b, name)?;
        let ta = self.value(a);
        let tb = self.value(b).data();
        let n = ta.cols();
        let f = |x: S, y: S| match kind {
            0 => x + y,
            1 => x - y,
            _ => x * y,
        };
        let data: Vec<S> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bc {
                    Broadcast::None => tb[i],
                    Broadcast::Row => tb[i % n],
                    Broadcast::Scalar => tb[0],
                };
                f(x, y)
            })
            .collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        let op = match kind {
            0 => Op::Add(a, b, bc),
            1 => Op::Sub(a, b, bc),
            _ => Op::Mul(a, b, bc),
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(value, op, ng, name)
    }

    /// Elementwise sum. `b` may be a `[1, n]` row or a single element, in
    /// which case it is broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 1)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 2)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        let ng = self.needs(a);
        self.push(v, Op::Scale(a, c), ng, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        let ng = self.needs(a);
        self.push(v, Op::AddScalar(a), ng, "add_scalar")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), ng, "matmul")
    }

    /// ReLU with subgradient 0 at exactly 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self
            .value(a)
            .map(|x| if x > S::zero() { x } else { S::zero() });
        let ng = self.needs(a);
        self.push(v, Op::Relu(a), ng, "relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(S::exp);
        let ng = self.needs(a);
        self.push(v, Op::Exp(a), ng, "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(S::ln);
        let ng = self.needs(a);
        self.push(v, Op::Log(a), ng, "log")
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(softplus);
        let ng = self.needs(a);
        self.push(v, Op::Softplus(a), ng, "softplus")
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(S::sqrt);
        let ng = self.needs(a);
        self.push(v, Op::Sqrt(a), ng, "sqrt")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        let ng = self.needs(a);
        self.push(v, Op::Square(a), ng, "square")
    }

    /// Sum of all elements, as a `[1, 1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(v, Op::Sum(a), ng, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).mean());
        let ng = self.needs(a);
        self.push(v, Op::Mean(a), ng, "mean")
    }

    /// Per-row sums: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = (0..t.rows())
            .map(|i| t.row_slice(i).iter().copied().sum())
            .collect();
        let v = Tensor::from_parts(vec![t.rows(), 1], data);
        let ng = self.needs(a);
        self.push(v, Op::SumCols(a), ng, "sum_cols")
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(Error::Shape {
                op: "concat",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, na, nb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            data.extend_from_slice(ta.row_slice(i));
            data.extend_from_slice(tb.row_slice(i));
        }
        let v = Tensor::from_parts(vec![m, na + nb], data);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Concat(a, b), ng, "concat")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(Error::invalid(format!(
                "slice_cols {start}..{end} out of range for {} columns",
                t.cols()
            )));
        }
        let m = t.rows();
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&t.row_slice(i)[start..end]);
        }
        let v = Tensor::from_parts(vec![m, end - start], data);
        let ng = self.needs(a);
        self.push(v, Op::SliceCols(a, start), ng, "slice_cols")
    }

    /// Gradients of a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<S>> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: out.shape().to_vec(),
                rhs: vec![1, 1],
            });
        }
        self.backward_with(output, Tensor::full(out.shape(), S::one()))
    }

    /// Vector-Jacobian product seeded with `output_gradient`.
    pub fn backward_with(&self, output: Var, output_gradient: Tensor<S>) -> Result<Gradients<S>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::invalid(
                "backward on a node not recorded on this tape",
            ));
        }
        if output_gradient.shape() != self.value(output).shape() {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.value(output).shape().to_vec(),
                rhs: output_gradient.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(output_gradient);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if !g.is_finite() {
                return Err(Error::NonFinite("backward"));
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let mut acc = |v: Var, delta: Tensor<S>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign_scaled(&delta, S::one()),
                slot @ None => *slot = Some(delta),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -S::one()
                } else {
                    S::one()
                };
                acc(*a, g.clone());
                let tb = self.value(*b);
                acc(*b, reduce_broadcast(g, tb, *bc, |x, _| sign * x));
            }
            Op::Mul(a, b, bc) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = ta.cols();
                let ga: Vec<S> = gd
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| {
                        gv * match bc {
                            Broadcast::None => tb.data()[i],
                            Broadcast::Row => tb.data()[i % n],
                            Broadcast::Scalar => tb.data()[0],
                        }
                    })
                    .collect();
                acc(*a, Tensor::from_parts(ta.shape().to_vec(), ga));
                let gb_full = Tensor::from_parts(
                    g.shape().to_vec(),
                    gd.iter().zip(ta.data()).map(|(&gv, &av)| gv * av).collect(),
                );
                acc(*b, reduce_broadcast(&gb_full, tb, *bc, |x, _| x));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * *c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].needs_grad {
                    let mut ga = vec![S::zero(); m * k];
                    gemm_nt_acc(gd, tb.data(), &mut ga, m, k, n);
                    acc(*a, Tensor::from_parts(ta.shape().to_vec(), ga));
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = vec![S::zero(); k * n];
                    gemm_tn_acc(ta.data(), gd, &mut gb, m, k, n);
                    acc(*b, Tensor::from_parts(tb.shape().to_vec(), gb));
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    zip_map(g, x, |gv, xv| if xv > S::zero() { gv } else { S::zero() }),
                );
            }
            Op::Exp(a) => acc(*a, zip_map(g, &node.value, |gv, yv| gv * yv)),
            Op::Log(a) => acc(*a, zip_map(g, self.value(*a), |gv, xv| gv / xv)),
            Op::Softplus(a) => acc(*a, zip_map(g, self.value(*a), |gv, xv| gv * sigmoid(xv))),
            Op::Sqrt(a) => acc(*a, zip_map(g, &node.value, |gv, yv| gv / (S::two() * yv))),
            Op::Square(a) => acc(*a, zip_map(g, self.value(*a), |gv, xv| S::two() * gv * xv)),
            Op::Sum(a) => acc(*a, Tensor::full(self.value(*a).shape(), gd[0])),
            Op::Mean(a) => {
                let t = self.value(*a);
                acc(*a, Tensor::full(t.shape(), gd[0] / S::of(t.len() as f64)));
            }
            Op::SumCols(a) => {
                let t = self.value(*a);
                let n = t.cols();
                let data = (0..t.len()).map(|i| gd[i / n]).collect();
                acc(*a, Tensor::from_parts(t.shape().to_vec(), data));
            }
            Op::Concat(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (na, nb) = (ta.cols(), tb.cols());
                let mut ga = Vec::with_capacity(ta.len());
                let mut gb = Vec::with_capacity(tb.len());
                for row in gd.chunks(na + nb) {
                    ga.extend_from_slice(&row[..na]);
                    gb.extend_from_slice(&row[na..]);
                }
                acc(*a, Tensor::from_parts(ta.shape().to_vec(), ga));
                acc(*b, Tensor::from_parts(tb.shape().to_vec(), gb));
            }
            Op::SliceCols(a, start) => {
                let t = self.value(*a);
                let n = t.cols();
                let w = g.cols();
                let mut data = vec![S::zero(); t.len()];
                for (i, grow) in gd.chunks(w).enumerate() {
                    data[i * n + start..i * n + start + w].copy_from_slice(grow);
                }
                acc(*a, Tensor::from_parts(t.shape().to_vec(), data));
            }
        }
    }
}

fn zip_map<S: Scalar>(g: &Tensor<S>, x: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    Tensor::from_parts(
        g.shape().to_vec(),
        g.data()
            .iter()
            .zip(x.data())
            .map(|(&a, &b)| f(a, b))
            .collect(),
    )
}

/// Sums a full-shape gradient back down to the shape of a broadcast operand.
fn reduce_broadcast<S: Scalar>(
    g: &Tensor<S>,
    target: &Tensor<S>,
    bc: Broadcast,
    f: impl Fn(S, usize) -> S,
) -> Tensor<S> {
    match bc {
        Broadcast::None => Tensor::from_parts(
            g.shape().to_vec(),
            g.data().iter().enumerate().map(|(i, &x)| f(x, i)).collect(),
        ),
        Broadcast::Scalar => {
            let s = g.data().iter().enumerate().map(|(i, &x)| f(x, i)).sum();
            Tensor::from_parts(target.shape().to_vec(), vec![s])
        }
        Broadcast::Row => {
            let n = target.cols();
            let mut out = vec![S::zero(); n];
            for (i, &x) in g.data().iter().enumerate() {
                out[i % n] = out[i % n] + f(x, i);
            }
            Tensor::from_parts(target.shape().to_vec(), out)
        }
    }
}

/// Plain forward evaluation of `x · w + b` for every row of `x`; shares the
/// kernel used by the recorded `matmul`.
pub fn affine<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, k, n) = (x.rows(), x.cols(), w.cols());
    if w.rows() != k || b.len() != n {
        return Err(Error::Shape {
            op: "affine",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(b.data());
    }
    S::gemm(
        m,
        k,
        n,
        x.data(),
        (k, 1),
        w.data(),
        (n, 1),
        S::one(),
        &mut out,
        (n, 1),
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn square_value_and_derivative() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.square(x).unwrap();
        assert_eq!(tape.value(y).item(), 9.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn relu_values_and_subgradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(1, 4, &[-2.5, 2.5, -1.0, 0.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.5, 0.0, 0.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn broadcast_row_gradients_sum_over_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(t(3, 2, &[1., 2., 3., 4., 5., 6.]));
        let b = tape.param(t(1, 2, &[0.5, -0.5]));
        let y = tape.mul(x, b).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(b).unwrap().data(), &[9.0, 12.0]);
        assert!(g.wrt(x).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x * x + x  => dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.5));
        let xx = tape.mul(x, x).unwrap();
        let y = tape.add(xx, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 4.0);
    }

    #[test]
    fn errors_on_shape_and_nonfinite() {
        let mut tape = Tape::new();
        let a = tape.param(t(2, 2, &[1., 2., 3., 4.]));
        let b = tape.param(t(3, 1, &[1., 2., 3.]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
        let z = tape.param(Tensor::scalar(0.0));
        assert!(matches!(tape.log(z), Err(Error::NonFinite("log"))));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn slice_and_concat_route_gradients() {
        let mut tape = Tape::new();
        let a = tape.param(t(2, 1, &[1., 2.]));
        let b = tape.param(t(2, 2, &[3., 4., 5., 6.]));
        let c = tape.concat(a, b).unwrap();
        let s = tape.slice_cols(c, 1, 2).unwrap();
        let sq = tape.square(s).unwrap();
        let out = tape.sum(sq).unwrap();
        let g = tape.backward(out).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[0., 0.]);
        assert_eq!(g.wrt(b).unwrap().data(), &[6., 0., 10., 0.]);
    }
}
