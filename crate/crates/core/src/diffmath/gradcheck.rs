//! Central finite-difference checks of reverse-mode gradients.

use super::graph::{Gradients, Graph, Var};
use super::params::Parameterized;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn eval<M, F>(model: &M, f: &F) -> Result<f64>
where
    F: Fn(&M, &mut Graph) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(model, &mut g)?;
    let v = g.value(loss);
    if !v.is_scalar() {
        return Err(Error::NotScalar(v.shape().to_vec()));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check evaluation".into()));
    }
    Ok(v)
}

/// Gradients from one reverse sweep.
pub fn analytic_gradients<M, F>(model: &M, f: &F) -> Result<Gradients>
where
    F: Fn(&M, &mut Graph) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(model, &mut g)?;
    g.backward(loss)
}

/// Central differences `(f(θ+ε) − f(θ−ε)) / 2ε`, one coordinate at a time.
pub fn numeric_gradients<M, F>(model: &M, eps: f64, f: &F) -> Result<Gradients>
where
    M: Parameterized + Clone,
    F: Fn(&M, &mut Graph) -> Result<Var>,
{
    let mut shapes = Vec::new();
    model.visit_params(&mut |name, t| shapes.push((name.to_string(), t.shape().to_vec())));
    let mut out = Gradients::new();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let mut d = vec![0.0; n];
        for (i, di) in d.iter_mut().enumerate() {
            let mut plus = model.clone();
            perturb(&mut plus, &name, i, eps);
            let mut minus = model.clone();
            perturb(&mut minus, &name, i, -eps);
            *di = (eval(&plus, f)? - eval(&minus, f)?) / (2.0 * eps);
        }
        out.insert(name, Tensor::new(shape, d)?);
    }
    Ok(out)
}

fn perturb<M: Parameterized>(model: &mut M, name: &str, index: usize, delta: f64) {
    model.visit_params_mut(&mut |n, t| {
        if n == name {
            t.data_mut()[index] += delta;
        }
    });
}

/// Compares two gradient maps coordinate by coordinate. Names missing from
/// `analytic` count as zero gradients.
pub fn compare_gradients(analytic: &Gradients, numeric: &Gradients) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    for (name, num) in numeric {
        for (i, &n) in num.data().iter().enumerate() {
            let a = analytic.get(name).map_or(0.0, |t| t.data()[i]);
            let err = (a - n).abs() / 1f64.max(a.abs()).max(n.abs());
            report.coordinates += 1;
            if report.worst_param.is_empty() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    report
}

/// Builds the loss with `f`, differentiates it, and compares against
/// central differences with step `eps`.
pub fn grad_check<M, F>(model: &M, eps: f64, f: F) -> Result<GradCheckReport>
where
    M: Parameterized + Clone,
    F: Fn(&M, &mut Graph) -> Result<Var>,
{
    let analytic = analytic_gradients(model, &f)?;
    let numeric = numeric_gradients(model, eps, &f)?;
    Ok(compare_gradients(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::graph::cross_entropy_seq;
    use crate::diffmath::params::ParamSet;

    #[test]
    fn sum_of_squares() {
        let m = ParamSet::new().with("x", Tensor::vector(vec![0.3, -1.2, 2.5]).unwrap());
        let r = grad_check(&m, 1e-5, |m, g| {
            let x = g.param("x", m.get("x").unwrap())?;
            let sq = g.mul(x, x)?;
            g.sum(sq)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.coordinates, 3);
    }

    #[test]
    fn cross_entropy_of_softmax() {
        let logits = Tensor::new(vec![3, 4], (0..12).map(|i| ((i * 7) % 5) as f64 * 0.4 - 0.9).collect())
            .unwrap();
        let m = ParamSet::new().with("logits", logits);
        let r = grad_check(&m, 1e-5, |m, g| {
            let x = g.param("logits", m.get("logits").unwrap())?;
            let p = g.softmax_temp(x, 0.5, 1)?;
            cross_entropy_seq(g, p, &[0, 3, 1])
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let m = ParamSet::new().with("x", Tensor::vector(vec![1.0, 2.0]).unwrap());
        let r = grad_check(&m, 1e-5, |_, g| g.constant(Tensor::scalar(4.0))).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let m = ParamSet::new().with("x", Tensor::scalar(1.0));
        let r = grad_check(&m, 1e-5, |m, g| {
            let x = g.param("x", m.get("x").unwrap())?;
            g.scale(x, f64::INFINITY)
        });
        assert!(r.is_err());
    }

    #[test]
    fn corrupted_gradient_names_parameter() {
        let m = ParamSet::new()
            .with("a", Tensor::vector(vec![0.5, 0.1]).unwrap())
            .with("b", Tensor::vector(vec![0.2]).unwrap());
        let f = |m: &ParamSet, g: &mut Graph| {
            let a = g.param("a", m.get("a").unwrap())?;
            let b = g.param("b", m.get("b").unwrap())?;
            let sa = g.sum(a)?;
            let p = g.mul(sa, b)?;
            g.sum(p)
        };
        let mut analytic = analytic_gradients(&m, &f).unwrap();
        analytic.get_mut("b").unwrap().data_mut()[0] += 0.5;
        let numeric = numeric_gradients(&m, 1e-5, &f).unwrap();
        let r = compare_gradients(&analytic, &numeric);
        assert_eq!(r.worst_param, "b");
        assert!(r.max_rel_error > 0.1);
    }
}
