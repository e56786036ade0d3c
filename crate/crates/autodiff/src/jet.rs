//! Third-order forward-mode jets whose coefficients are graph values.
//!
//! A [`Jet3`] carries `(f, f', f'', f''')` along one input direction. The
//! coefficients are raw derivatives, not Taylor coefficients. Every
//! coefficient is produced by graph primitives, so a later [`Graph::backward`]
//! differentiates input derivatives with respect to parameters.
//!
//! [`Graph::backward`]: crate::Graph::backward

use crate::error::{AutodiffError, Result};
use crate::graph::{OpKind, Value};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Jet3<'g> {
    /// Value and first, second and third directional derivatives.
    pub c: [Value<'g>; 4],
    constant: bool,
}

impl<'g> Jet3<'g> {
    /// Jet of a value that does not depend on the direction.
    pub fn constant(v: Value<'g>) -> Self {
        let (r, c) = v.shape();
        let z = v.graph().zeros(r, c);
        Self { c: [v, z, z, z], constant: true }
    }

    /// Seed every row of `x` along column `direction`: that column gets
    /// `c1 = 1`, everything else `c1 = 0`, and `c2 = c3 = 0`.
    pub fn lift(x: Value<'g>, direction: usize) -> Result<Self> {
        let (r, c) = x.shape();
        if direction >= c {
            return Err(AutodiffError::DirectionOutOfRange { direction, len: c });
        }
        let g = x.graph();
        let seed = g.constant(Tensor::from_fn(r, c, |_, j| if j == direction { 1.0 } else { 0.0 }));
        let z = g.zeros(r, c);
        Ok(Self { c: [x, seed, z, z], constant: false })
    }

    /// Build from explicit coefficients. All four must share one shape.
    pub fn from_coefficients(c: [Value<'g>; 4]) -> Result<Self> {
        let shape = c[0].shape();
        if c.iter().any(|v| v.shape() != shape) {
            return Err(AutodiffError::ShapeMismatch { op: "jet", shapes: c.iter().map(|v| v.shape()).collect() });
        }
        Ok(Self { c, constant: false })
    }

    pub fn value(&self) -> Value<'g> {
        self.c[0]
    }

    pub fn d1(&self) -> Value<'g> {
        self.c[1]
    }

    pub fn d2(&self) -> Value<'g> {
        self.c[2]
    }

    pub fn d3(&self) -> Value<'g> {
        self.c[3]
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn shape(&self) -> (usize, usize) {
        self.c[0].shape()
    }

    fn map_coefficients(&self, mut f: impl FnMut(Value<'g>) -> Result<Value<'g>>) -> Result<Self> {
        if self.constant {
            return Ok(Self::constant(f(self.c[0])?));
        }
        Ok(Self { c: [f(self.c[0])?, f(self.c[1])?, f(self.c[2])?, f(self.c[3])?], constant: false })
    }

    pub fn add(&self, other: &Jet3<'g>) -> Result<Self> {
        self.zip_linear(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Jet3<'g>) -> Result<Self> {
        self.zip_linear(other, |a, b| a.sub(b))
    }

    fn zip_linear(&self, other: &Jet3<'g>, f: impl Fn(Value<'g>, Value<'g>) -> Result<Value<'g>>) -> Result<Self> {
        if other.constant && self.constant {
            return Ok(Self::constant(f(self.c[0], other.c[0])?));
        }
        if other.constant {
            return Ok(Self { c: [f(self.c[0], other.c[0])?, self.c[1], self.c[2], self.c[3]], constant: false });
        }
        let mut c = [self.c[0]; 4];
        for k in 0..4 {
            c[k] = f(self.c[k], other.c[k])?;
        }
        Ok(Self { c, constant: false })
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        self.map_coefficients(|v| v.scale(s))
    }

    /// Leibniz rule for an elementwise product.
    pub fn mul(&self, other: &Jet3<'g>) -> Result<Self> {
        self.bilinear(other, |a, b| a.mul(b))
    }

    /// `self · w`, `w` independent of the direction.
    pub fn matmul_const(&self, w: Value<'g>) -> Result<Self> {
        self.map_coefficients(|v| v.matmul(w))
    }

    /// Add a direction-independent `1 x cols` row; only the value moves.
    pub fn add_row(&self, row: Value<'g>) -> Result<Self> {
        if self.constant {
            return Ok(Self::constant(self.c[0].add_row(row)?));
        }
        Ok(Self { c: [self.c[0].add_row(row)?, self.c[1], self.c[2], self.c[3]], constant: false })
    }

    /// Elementwise product with a direction-independent row broadcast down the rows.
    pub fn mul_row(&self, row: Value<'g>) -> Result<Self> {
        self.map_coefficients(|v| v.mul_row(row))
    }

    fn bilinear(&self, other: &Jet3<'g>, f: impl Fn(Value<'g>, Value<'g>) -> Result<Value<'g>>) -> Result<Self> {
        let [u0, u1, u2, u3] = self.c;
        let [v0, v1, v2, v3] = other.c;
        match (self.constant, other.constant) {
            (true, true) => Ok(Self::constant(f(u0, v0)?)),
            (false, true) => Ok(Self { c: [f(u0, v0)?, f(u1, v0)?, f(u2, v0)?, f(u3, v0)?], constant: false }),
            (true, false) => Ok(Self { c: [f(u0, v0)?, f(u0, v1)?, f(u0, v2)?, f(u0, v3)?], constant: false }),
            (false, false) => {
                let y0 = f(u0, v0)?;
                let y1 = f(u1, v0)?.add(f(u0, v1)?)?;
                let y2 = f(u2, v0)?.add(f(u1, v1)?.scale(2.0)?)?.add(f(u0, v2)?)?;
                let y3 = f(u3, v0)?
                    .add(f(u2, v1)?.scale(3.0)?)?
                    .add(f(u1, v2)?.scale(3.0)?)?
                    .add(f(u0, v3)?)?;
                Ok(Self { c: [y0, y1, y2, y3], constant: false })
            }
        }
    }

    /// Faà di Bruno composition with an elementwise scalar function whose
    /// value and first three derivatives at `c0` are `[f0, f1, f2, f3]`.
    pub fn compose(&self, derivs: [Value<'g>; 4]) -> Result<Self> {
        let [f0, f1, f2, f3] = derivs;
        if self.constant {
            return Ok(Self::constant(f0));
        }
        let [_, x1, x2, x3] = self.c;
        let x1_sq = x1.mul(x1)?;
        let y1 = f1.mul(x1)?;
        let y2 = f2.mul(x1_sq)?.add(f1.mul(x2)?)?;
        let y3 = f3
            .mul(x1_sq.mul(x1)?)?
            .add(f2.mul(x1.mul(x2)?)?.scale(3.0)?)?
            .add(f1.mul(x3)?)?;
        Ok(Self { c: [f0, y1, y2, y3], constant: false })
    }

    pub fn tanh(&self) -> Result<Self> {
        let t = self.c[0].tanh()?;
        if self.constant {
            return Ok(Self::constant(t));
        }
        // s = 1 - t²; tanh' = s, tanh'' = -2ts, tanh''' = -2s(1 - 3t²)
        let t_sq = t.mul(t)?;
        let s = t_sq.neg()?.add_scalar(1.0)?;
        let f2 = t.mul(s)?.scale(-2.0)?;
        let f3 = s.mul(t_sq.scale(-3.0)?.add_scalar(1.0)?)?.scale(-2.0)?;
        self.compose([t, s, f2, f3])
    }

    pub fn sigmoid(&self) -> Result<Self> {
        let s = self.c[0].sigmoid()?;
        if self.constant {
            return Ok(Self::constant(s));
        }
        // q = s(1 - s); σ' = q, σ'' = q(1 - 2s), σ''' = q(1 - 6s + 6s²)
        let q = s.mul(s.neg()?.add_scalar(1.0)?)?;
        let f2 = q.mul(s.scale(-2.0)?.add_scalar(1.0)?)?;
        let f3 = q.mul(q.scale(-6.0)?.add_scalar(1.0)?)?;
        self.compose([s, q, f2, f3])
    }

    pub fn exp(&self) -> Result<Self> {
        let e = self.c[0].exp()?;
        self.compose([e, e, e, e])
    }

    pub fn recip(&self) -> Result<Self> {
        let r = self.c[0].powi(-1)?;
        if self.constant {
            return Ok(Self::constant(r));
        }
        let r2 = r.mul(r)?;
        let f1 = r2.neg()?;
        let f2 = r2.mul(r)?.scale(2.0)?;
        let f3 = r2.mul(r2)?.scale(-6.0)?;
        self.compose([r, f1, f2, f3])
    }

    pub fn div(&self, other: &Jet3<'g>) -> Result<Self> {
        self.mul(&other.recip()?)
    }
}

/// One jet per coordinate of the row vector `x`, seeded along `direction`.
pub fn jet3_lift<'g>(x: Value<'g>, direction: usize) -> Result<Vec<Jet3<'g>>> {
    let (r, len) = x.shape();
    if r != 1 {
        return Err(AutodiffError::InvalidArgument {
            op: "jet3_lift",
            detail: format!("expected a row vector, got {r}x{len}"),
        });
    }
    if direction >= len {
        return Err(AutodiffError::DirectionOutOfRange { direction, len });
    }
    let g = x.graph();
    let zero = g.scalar(0.0);
    let one = g.scalar(1.0);
    (0..len)
        .map(|i| {
            let xi = x.slice(0..1, i..i + 1)?;
            let seed = if i == direction { one } else { zero };
            Jet3::from_coefficients([xi, seed, zero, zero])
        })
        .collect()
}

/// Apply a primitive kind to jets.
///
/// Supports add, sub, mul, div, tanh, sigmoid, exp, matmul (second input
/// constant), scale and broadcast_add_row (row constant).
pub fn jet3_primitive<'g>(kind: &OpKind, inputs: &[Jet3<'g>]) -> Result<Jet3<'g>> {
    let arity = |n: usize| {
        if inputs.len() == n {
            Ok(())
        } else {
            Err(AutodiffError::Arity { op: kind.name(), expected: n, got: inputs.len() })
        }
    };
    match kind {
        OpKind::Add => arity(2).and_then(|_| inputs[0].add(&inputs[1])),
        OpKind::Sub => arity(2).and_then(|_| inputs[0].sub(&inputs[1])),
        OpKind::Mul => arity(2).and_then(|_| inputs[0].mul(&inputs[1])),
        OpKind::Div => arity(2).and_then(|_| inputs[0].div(&inputs[1])),
        OpKind::Tanh => arity(1).and_then(|_| inputs[0].tanh()),
        OpKind::Sigmoid => arity(1).and_then(|_| inputs[0].sigmoid()),
        OpKind::Exp => arity(1).and_then(|_| inputs[0].exp()),
        OpKind::Scale(s) => arity(1).and_then(|_| inputs[0].scale(*s)),
        OpKind::MatMul | OpKind::BroadcastAddRow => {
            arity(2)?;
            if !inputs[1].is_constant() {
                return Err(AutodiffError::InvalidArgument {
                    op: kind.name(),
                    detail: "second operand must be direction-independent".into(),
                });
            }
            if *kind == OpKind::MatMul {
                inputs[0].matmul_const(inputs[1].value())
            } else {
                inputs[0].add_row(inputs[1].value())
            }
        }
        other => Err(AutodiffError::UnsupportedJetOp(other.name())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    fn coeffs(j: &Jet3<'_>) -> [f64; 4] {
        [j.c[0].item(), j.c[1].item(), j.c[2].item(), j.c[3].item()]
    }

    #[test]
    fn lift_seeds_selected_coordinate() {
        let g = Graph::new();
        let x = g.constant(Tensor::row(vec![5.0, 7.0]));
        let jets = jet3_lift(x, 0).unwrap();
        assert_eq!(coeffs(&jets[0]), [5.0, 1.0, 0.0, 0.0]);
        assert_eq!(coeffs(&jets[1]), [7.0, 0.0, 0.0, 0.0]);
        assert!(matches!(jet3_lift(x, 2), Err(AutodiffError::DirectionOutOfRange { .. })));
    }

    #[test]
    fn cube_at_two() {
        let g = Graph::new();
        let x = jet3_lift(g.constant(Tensor::row(vec![2.0])), 0).unwrap()[0];
        let y = x.mul(&x).unwrap().mul(&x).unwrap();
        assert_eq!(coeffs(&y), [8.0, 12.0, 12.0, 6.0]);
    }

    #[test]
    fn square_at_two() {
        let g = Graph::new();
        let x = jet3_lift(g.constant(Tensor::row(vec![2.0])), 0).unwrap()[0];
        let y = jet3_primitive(&OpKind::Mul, &[x, x]).unwrap();
        assert_eq!(coeffs(&y), [4.0, 4.0, 2.0, 0.0]);
    }

    #[test]
    fn tanh_at_zero() {
        let g = Graph::new();
        let x = jet3_lift(g.constant(Tensor::row(vec![0.0])), 0).unwrap()[0];
        let y = jet3_primitive(&OpKind::Tanh, &[x]).unwrap();
        assert_eq!(coeffs(&y), [0.0, 1.0, 0.0, -2.0]);
    }

    #[test]
    fn zero_jet_is_additive_identity() {
        let g = Graph::new();
        let x = jet3_lift(g.constant(Tensor::row(vec![0.3])), 0).unwrap()[0];
        let j = x.tanh().unwrap().exp().unwrap();
        let zero = Jet3::constant(g.scalar(0.0));
        let sum = jet3_primitive(&OpKind::Add, &[j, zero]).unwrap();
        assert_eq!(coeffs(&sum), coeffs(&j));
    }

    #[test]
    fn constants_have_zero_tangents() {
        let g = Graph::new();
        let c = Jet3::constant(g.scalar(1.5)).tanh().unwrap().sigmoid().unwrap();
        assert_eq!(&coeffs(&c)[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_minus_jet_negates_tangents() {
        let g = Graph::new();
        let x = jet3_lift(g.constant(Tensor::row(vec![1.0])), 0).unwrap()[0];
        let c = Jet3::constant(g.scalar(4.0));
        let y = c.sub(&x).unwrap();
        assert_eq!(coeffs(&y), [3.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn unsupported_kind_is_rejected() {
        let g = Graph::new();
        let x = Jet3::lift(g.constant(Tensor::row(vec![1.0])), 0).unwrap();
        assert!(matches!(jet3_primitive(&OpKind::Relu, &[x]), Err(AutodiffError::UnsupportedJetOp("relu"))));
        assert!(jet3_primitive(&OpKind::MatMul, &[x, x]).is_err());
    }
}
