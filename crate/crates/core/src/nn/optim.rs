use serde::{Deserialize, Serialize};

use crate::nn::mlp::{Dense, Gradients};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// Plain gradient descent.
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators and step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    kind: OptimizerKind,
    first: Vec<Dense<T>>,
    second: Vec<Dense<T>>,
    steps: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(i, o)| Dense::zeros(i, o)).collect::<Vec<_>>();
        let (first, second) = match kind {
            OptimizerKind::Adam { .. } => (zeros(), zeros()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self { kind, first, second, steps: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub(crate) fn step(&mut self, params: &mut [Dense<T>], grads: &Gradients<T>, lr: T) {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&grads.layers) {
                    p.w.zip_mut_with(&g.w, |w, &d| *w -= lr * d);
                    p.b.zip_mut_with(&g.b, |b, &d| *b -= lr * d);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let t = self.steps as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let one = T::one();
                let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                };
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    for (((pw, gw), mw), vw) in p.w.iter_mut().zip(g.w.iter()).zip(m.w.iter_mut()).zip(v.w.iter_mut()) {
                        update(pw, *gw, mw, vw);
                    }
                    for (((pb, gb), mb), vb) in p.b.iter_mut().zip(g.b.iter()).zip(m.b.iter_mut()).zip(v.b.iter_mut()) {
                        update(pb, *gb, mb, vb);
                    }
                }
            }
        }
    }
}
