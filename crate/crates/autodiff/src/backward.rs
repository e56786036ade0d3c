//! Reverse-mode sweep over a recorded [`Graph`].

use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, NodeId, NodeKind, OpKind, Value};
use crate::tensor::Tensor;

/// Gradients of a scalar loss, keyed by parameter node id.
#[derive(Debug, Clone)]
pub struct Gradients {
    order: Vec<NodeId>,
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, param: &Value<'_>) -> Option<&Tensor> {
        self.grads.get(&param.id())
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    /// `(parameter id, gradient)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.order.iter().map(move |id| (*id, &self.grads[id]))
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl Graph {
    /// `∂loss/∂p` for every registered parameter `p`.
    ///
    /// Parameters the loss does not depend on receive zero arrays.
    pub fn backward(&self, loss: &Value<'_>) -> Result<Gradients> {
        if loss.graph().id() != self.id() {
            return Err(AutodiffError::CrossGraph { expected: self.id(), found: loss.graph().id() });
        }
        if loss.shape() != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(loss.shape()));
        }
        let params = self.parameter_ids();
        if params.is_empty() {
            return Err(AutodiffError::NoParameters);
        }

        let nodes = self.nodes.borrow();
        let mut adjoints: Vec<Option<Tensor>> = vec![None; loss.id() + 1];
        adjoints[loss.id()] = Some(Tensor::scalar(1.0));
        let mut grads: HashMap<NodeId, Tensor> = HashMap::with_capacity(params.len());

        for k in (0..=loss.id()).rev() {
            let Some(adj) = adjoints[k].take() else { continue };
            let node = &nodes[k];
            if adj.has_nan() {
                return Err(AutodiffError::NanAdjoint { node: k, op: node.kind.name() });
            }
            let op = match &node.kind {
                NodeKind::Parameter => {
                    grads.insert(k, adj);
                    continue;
                }
                NodeKind::Constant => continue,
                NodeKind::Op(op) => op,
            };
            // Accumulate slices in place; materializing a zero-padded copy per
            // slice is quadratic when many slices share one parent.
            if let OpKind::Slice { rows, cols } = op {
                let i = node.inputs[0];
                if nodes[i].requires_grad {
                    let (r, c) = nodes[i].value.shape();
                    adjoints[i].get_or_insert_with(|| Tensor::zeros(r, c)).add_block(rows.start, cols.start, &adj);
                }
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let contributions = vjp(op, &inputs, &node.value, &adj, &needs);
            for ((&i, need), contrib) in node.inputs.iter().zip(&needs).zip(contributions) {
                if !need {
                    continue;
                }
                let Some(c) = contrib else { continue };
                match &mut adjoints[i] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }

        for &p in &params {
            grads.entry(p).or_insert_with(|| {
                let (r, c) = nodes[p].value.shape();
                Tensor::zeros(r, c)
            });
        }
        Ok(Gradients { order: params, grads })
    }
}

/// Vector-Jacobian products of one op; `None` for inputs that need no gradient.
fn vjp(op: &OpKind, x: &[&Tensor], y: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
    let one = |t: Tensor| vec![Some(t)];
    match op {
        OpKind::Add => vec![Some(g.clone()), Some(g.clone())],
        OpKind::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
        OpKind::Mul => vec![
            needs[0].then(|| g.zip_map(x[1], |a, b| a * b)),
            needs[1].then(|| g.zip_map(x[0], |a, b| a * b)),
        ],
        OpKind::Div => vec![
            needs[0].then(|| g.zip_map(x[1], |a, b| a / b)),
            needs[1].then(|| {
                let t = g.zip_map(x[0], |a, b| a * b);
                t.zip_map(x[1], |a, b| -a / (b * b))
            }),
        ],
        OpKind::Neg => one(g.map(|v| -v)),
        OpKind::MatMul => vec![needs[0].then(|| g.matmul_nt(x[1])), needs[1].then(|| x[0].matmul_tn(g))],
        OpKind::Transpose => one(g.transpose()),
        OpKind::Exp => one(g.zip_map(y, |a, b| a * b)),
        OpKind::Ln => one(g.zip_map(x[0], |a, b| a / b)),
        OpKind::Tanh => one(g.zip_map(y, |a, t| a * (1.0 - t * t))),
        OpKind::Sigmoid => one(g.zip_map(y, |a, s| a * s * (1.0 - s))),
        OpKind::Relu => one(g.zip_map(x[0], |a, b| if b > 0.0 { a } else { 0.0 })),
        OpKind::PowInt(n) => {
            let n = *n;
            one(g.zip_map(x[0], |a, b| a * n as f64 * b.powi(n - 1)))
        }
        OpKind::Powf(e) => {
            let e = *e;
            one(g.zip_map(x[0], |a, b| a * e * b.powf(e - 1.0)))
        }
        OpKind::Sum => one(Tensor::filled(x[0].rows(), x[0].cols(), g.item())),
        OpKind::Mean => {
            let n = x[0].len() as f64;
            one(Tensor::filled(x[0].rows(), x[0].cols(), g.item() / n))
        }
        OpKind::SumRows => one(g.broadcast_to(x[0].rows(), x[0].cols())),
        OpKind::SumCols => one(g.broadcast_to(x[0].rows(), x[0].cols())),
        OpKind::SoftmaxRows => {
            let cols = y.cols();
            let mut out = g.clone();
            for ((o_row, y_row), g_row) in
                out.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)).zip(g.data().chunks(cols))
            {
                let dot: f64 = y_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
                for ((o, &yv), &gv) in o_row.iter_mut().zip(y_row).zip(g_row) {
                    *o = yv * (gv - dot);
                }
            }
            one(out)
        }
        OpKind::NormalizeRows { eps } => {
            let cols = y.cols();
            let n = cols as f64;
            let mut out = g.clone();
            for (((o_row, x_row), y_row), g_row) in out
                .data_mut()
                .chunks_mut(cols)
                .zip(x[0].data().chunks(cols))
                .zip(y.data().chunks(cols))
                .zip(g.data().chunks(cols))
            {
                let mean = x_row.iter().sum::<f64>() / n;
                let var = x_row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv = 1.0 / (var + eps).sqrt();
                let g_mean = g_row.iter().sum::<f64>() / n;
                let gy_mean = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum::<f64>() / n;
                for ((o, &gv), &yv) in o_row.iter_mut().zip(g_row).zip(y_row) {
                    *o = inv * (gv - g_mean - yv * gy_mean);
                }
            }
            one(out)
        }
        OpKind::ConcatRows => {
            let mut r0 = 0;
            x.iter()
                .zip(needs)
                .map(|(t, &need)| {
                    let r1 = r0 + t.rows();
                    let part = need.then(|| g.slice(r0, r1, 0, g.cols()));
                    r0 = r1;
                    part
                })
                .collect()
        }
        OpKind::ConcatCols => {
            let mut c0 = 0;
            x.iter()
                .zip(needs)
                .map(|(t, &need)| {
                    let c1 = c0 + t.cols();
                    let part = need.then(|| g.slice(0, g.rows(), c0, c1));
                    c0 = c1;
                    part
                })
                .collect()
        }
        OpKind::Slice { rows, cols } => {
            let mut out = Tensor::zeros(x[0].rows(), x[0].cols());
            out.add_block(rows.start, cols.start, g);
            one(out)
        }
        OpKind::Scale(s) => {
            let s = *s;
            one(g.map(|v| v * s))
        }
        OpKind::AddScalar(_) => one(g.clone()),
        OpKind::BroadcastAddRow => vec![Some(g.clone()), needs[1].then(|| g.sum_rows())],
        OpKind::Broadcast { .. } => {
            let (r, c) = x[0].shape();
            let reduced = match (r == 1 && g.rows() != 1, c == 1 && g.cols() != 1) {
                (true, true) => Tensor::scalar(g.sum()),
                (true, false) => g.sum_rows(),
                (false, true) => g.sum_cols(),
                (false, false) => g.clone(),
            };
            one(reduced)
        }
        OpKind::Reshape { .. } => one(g.reshape(x[0].rows(), x[0].cols())),
        OpKind::TileRows(n) => {
            let block = x[0].len();
            let mut out = Tensor::zeros(x[0].rows(), x[0].cols());
            for k in 0..*n {
                for (o, v) in out.data_mut().iter_mut().zip(&g.data()[k * block..(k + 1) * block]) {
                    *o += v;
                }
            }
            one(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones() {
        let g = Graph::new();
        let p = g.parameter(Tensor::from_fn(2, 2, |r, c| (r + c) as f64));
        let loss = p.sum().unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&p).unwrap(), &Tensor::filled(2, 2, 1.0));
    }

    #[test]
    fn quadratic_mean_gradient() {
        let g = Graph::new();
        let p = g.parameter(Tensor::row(vec![1.0, 3.0]));
        let c = g.constant(Tensor::row(vec![0.0, 0.0]));
        let loss = p.sub(c).unwrap().powi(2).unwrap().mean().unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&p).unwrap().data(), &[1.0, 3.0]);
    }

    #[test]
    fn unreachable_parameters_get_zeros() {
        let g = Graph::new();
        let p = g.parameter(Tensor::scalar(2.0));
        let q = g.parameter(Tensor::row(vec![1.0, 1.0, 1.0]));
        let loss = p.powi(3).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&p).unwrap().item(), 12.0);
        assert_eq!(grads.get(&q).unwrap(), &Tensor::zeros(1, 3));
        assert_eq!(grads.len(), 2);
    }

    #[test]
    fn rejects_non_scalar_loss_and_parameterless_graph() {
        let g = Graph::new();
        let p = g.parameter(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(&p), Err(AutodiffError::NonScalarLoss((1, 2)))));
        let h = Graph::new();
        let c = h.scalar(1.0);
        assert!(matches!(h.backward(&c), Err(AutodiffError::NoParameters)));
    }

    #[test]
    fn nan_adjoint_is_reported() {
        let g = Graph::new();
        let p = g.parameter(Tensor::scalar(0.0));
        // d/dp sqrt(p) at 0 is infinite; times 0 from the relu gives NaN.
        let loss = p.powf(0.5).unwrap().relu().unwrap().scale(0.0).unwrap().add(p.powf(0.5).unwrap()).unwrap();
        let err = g.backward(&loss).unwrap_err();
        assert!(matches!(err, AutodiffError::NanAdjoint { .. }), "{err:?}");
    }
}
