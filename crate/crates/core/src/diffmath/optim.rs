use indexmap::IndexMap;

use super::graph::Gradients;
use super::params::Parameterized;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: IndexMap<String, Tensor>,
    second: IndexMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    /// Applies one update. Parameters without a gradient entry are treated
    /// as having a zero gradient; gradients for unknown names are rejected.
    pub fn step(&mut self, params: &mut dyn Parameterized, grads: &Gradients) -> Result<()> {
        let mut problem = None;
        let mut seen = 0;
        params.visit_params(&mut |name, t| {
            if let Some(g) = grads.get(name) {
                seen += 1;
                if g.shape() != t.shape() && problem.is_none() {
                    problem = Some(format!("{name}: param {:?}, grad {:?}", t.shape(), g.shape()));
                }
            }
        });
        if let Some(p) = problem {
            return shape_err("adam", p);
        }
        if seen != grads.len() {
            return shape_err("adam", "gradient for an unknown parameter");
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (first, second) = (&mut self.first, &mut self.second);
        params.visit_params_mut(&mut |name, p| {
            let Some(g) = grads.get(name) else {
                // zero gradient: moments still decay
                if let (Some(m), Some(v)) = (first.get_mut(name), second.get_mut(name)) {
                    for ((pv, mv), vv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()) {
                        *mv *= b1;
                        *vv *= b2;
                        *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                    }
                }
                return;
            };
            let m = first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
            }
        });
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::params::ParamSet;

    fn scalar_set(v: f64) -> ParamSet {
        ParamSet::new().with("p", Tensor::scalar(v))
    }

    fn grad(v: f64) -> Gradients {
        let mut g = Gradients::new();
        g.insert("p".into(), Tensor::scalar(v));
        g
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = scalar_set(1.5);
        let mut opt = Adam::new(0.1).unwrap();
        opt.step(&mut p, &grad(0.0)).unwrap();
        assert_eq!(p.get("p").unwrap().item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = −lr / (1 + 1e-8).
        let mut p = scalar_set(0.0);
        let mut opt = Adam::new(0.0004).unwrap();
        opt.step(&mut p, &grad(1.0)).unwrap();
        let v = p.get("p").unwrap().item();
        assert!((v + 0.0004).abs() < 1e-11, "{v}");
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn identical_calls_identical_results() {
        let run = || {
            let mut p = scalar_set(0.3);
            let mut opt = Adam::new(0.01).unwrap();
            for k in 0..5 {
                opt.step(&mut p, &grad(k as f64 - 2.0)).unwrap();
            }
            p.get("p").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected_without_mutation() {
        let mut p = scalar_set(0.3);
        let mut opt = Adam::new(0.01).unwrap();
        let mut g = Gradients::new();
        g.insert("p".into(), Tensor::zeros(&[2]));
        assert!(opt.step(&mut p, &g).is_err());
        assert_eq!(opt.steps(), 0);
        assert_eq!(p.get("p").unwrap().item(), 0.3);
    }

    #[test]
    fn clip_rescales() {
        let mut g = grad(3.0);
        g.insert("q".into(), Tensor::scalar(4.0));
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g["p"].item() - 0.6).abs() < 1e-12);
    }
}
