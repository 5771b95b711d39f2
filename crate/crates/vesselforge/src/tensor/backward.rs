//! Reverse-mode gradient propagation over the lineage DAG.

use std::collections::{HashMap, HashSet};

use super::{conv, pool, resample, Element, Op, PoolKind, Tensor, CE_CLAMP_LO};
use crate::error::{Error, Result};

impl<E: Element> Tensor<E> {
    /// Propagate `d(self)/d(leaf)` into the grad buffer of every leaf tensor
    /// reachable through the lineage DAG. `self` must be a scalar. Where a
    /// tensor feeds several consumers the contributions sum. Repeated calls
    /// keep accumulating; use [`Tensor::take_grad`] or [`Tensor::zero_grad`]
    /// between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NotScalar { numel: self.numel() });
        }
        let order = topo_order(self);
        let mut grads: HashMap<super::TensorId, Vec<E>> = HashMap::new();
        grads.insert(self.id(), vec![E::one()]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else { continue };
            if let Some(op) = t.lineage() {
                propagate(op, t, &g, &mut grads);
            } else {
                t.accumulate_grad(&g);
            }
        }
        Ok(())
    }
}

/// Post-order DFS; reversing it yields a valid topological order for the
/// backward sweep. Iterative so deep graphs cannot overflow the stack.
fn topo_order<E: Element>(root: &Tensor<E>) -> Vec<Tensor<E>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (tensor, children_pushed)
    let mut stack: Vec<(Tensor<E>, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(op) = t.lineage() {
            for inp in op.inputs() {
                if !seen.contains(&inp.id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }
    order
}

fn add_into<E: Element>(grads: &mut HashMap<super::TensorId, Vec<E>>, t: &Tensor<E>, g: Vec<E>) {
    match grads.get_mut(&t.id()) {
        Some(buf) => {
            for (b, v) in buf.iter_mut().zip(g) {
                *b += v;
            }
        }
        None => {
            grads.insert(t.id(), g);
        }
    }
}

fn propagate<E: Element>(
    op: &Op<E>,
    out: &Tensor<E>,
    go: &[E],
    grads: &mut HashMap<super::TensorId, Vec<E>>,
) {
    match op {
        Op::Conv2d { x, w, b, spec } => {
            let (n, ic, ih, iw) = x.dims4().expect("conv input recorded as NCHW");
            let (oc, _, kh, kw) = w.dims4().expect("conv weight recorded as 4-D");
            let oh = out.shape()[2];
            let ow = out.shape()[3];
            let (dx, dw, db) = conv::backward_kernel(
                go,
                x.data(),
                (n, ic, ih, iw),
                w.data(),
                (oc, kh, kw),
                spec,
                (oh, ow),
            );
            add_into(grads, x, dx);
            add_into(grads, w, dw);
            add_into(grads, b, db);
        }
        Op::Pool2d { x, kind, window, stride, padding } => {
            let dims = x.dims4().expect("pool input recorded as NCHW");
            let oh = out.shape()[2];
            let ow = out.shape()[3];
            let dx = pool::backward_kernel(
                go,
                x.data(),
                dims,
                *kind,
                *window,
                *stride,
                *padding,
                (oh, ow),
            );
            add_into(grads, x, dx);
        }
        Op::UpsampleBilinear { x, factor } => {
            let dims = x.dims4().expect("upsample input recorded as NCHW");
            let dx = resample::backward_kernel(go, dims, *factor);
            add_into(grads, x, dx);
        }
        Op::ConcatChannels { xs } => {
            let (n, c_total, h, w) = out.dims4().expect("concat output is NCHW");
            let hw = h * w;
            let mut c_off = 0;
            for x in xs {
                let c = x.shape()[1];
                let mut dx = vec![E::zero(); x.numel()];
                for ni in 0..n {
                    let src = &go[ni * c_total * hw + c_off * hw..][..c * hw];
                    dx[ni * c * hw..(ni + 1) * c * hw].copy_from_slice(src);
                }
                add_into(grads, x, dx);
                c_off += c;
            }
        }
        Op::Relu { x } => {
            let dx = x
                .data()
                .iter()
                .zip(go)
                .map(|(&v, &g)| if v > E::zero() { g } else { E::zero() })
                .collect();
            add_into(grads, x, dx);
        }
        Op::Sigmoid { x } => {
            // out = sigmoid(x); d = out * (1 - out)
            let dx = out
                .data()
                .iter()
                .zip(go)
                .map(|(&s, &g)| g * s * (E::one() - s))
                .collect();
            add_into(grads, x, dx);
        }
        Op::SoftmaxChannels { x } => {
            let (n, c, h, w) = out.dims4().expect("softmax output is NCHW");
            let hw = h * w;
            let s = out.data();
            let mut dx = vec![E::zero(); s.len()];
            for ni in 0..n {
                let base = ni * c * hw;
                for p in 0..hw {
                    let mut dot = E::zero();
                    for ci in 0..c {
                        dot += go[base + ci * hw + p] * s[base + ci * hw + p];
                    }
                    for ci in 0..c {
                        let idx = base + ci * hw + p;
                        dx[idx] = s[idx] * (go[idx] - dot);
                    }
                }
            }
            add_into(grads, x, dx);
        }
        Op::Add { a, b } => {
            add_into(grads, a, go.to_vec());
            add_into(grads, b, go.to_vec());
        }
        Op::SumAll { x } => {
            let g = go[0];
            add_into(grads, x, vec![g; x.numel()]);
        }
        Op::MeanAll { x } => {
            let g = go[0] / E::from_f64_lossy(x.numel() as f64);
            add_into(grads, x, vec![g; x.numel()]);
        }
        Op::CrossEntropyMasked { probs, labels, mask, count } => {
            let (n, c, h, w) = probs.dims4().expect("loss input is NCHW");
            let hw = h * w;
            let lo = E::from_f64_lossy(CE_CLAMP_LO);
            let hi = E::from_f64_lossy(1.0 - CE_CLAMP_LO);
            let scale = go[0] / E::from_f64_lossy(*count as f64);
            let p = probs.data();
            let mut dp = vec![E::zero(); p.len()];
            for ni in 0..n {
                for pix in 0..hw {
                    if !mask[ni * hw + pix] {
                        continue;
                    }
                    let cls = labels[ni * hw + pix] as usize;
                    debug_assert!(cls < c);
                    let idx = ni * c * hw + cls * hw + pix;
                    let v = p[idx];
                    // gradient flows only where the clamp is inactive
                    if v > lo && v < hi {
                        dp[idx] = -scale / v;
                    }
                }
            }
            add_into(grads, probs, dp);
        }
    }
}
