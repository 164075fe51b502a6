use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Step size and tolerance for central-difference gradient checks. The
/// defaults are tuned for f64: h = 1e-5 keeps truncation and rounding error
/// both well below the 1e-4 acceptance threshold for single ops.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOpts {
    pub h: f64,
    pub tol: f64,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts { h: 1e-5, tol: 1e-4 }
    }
}

impl GradCheckOpts {
    /// Looser tolerance for whole-model checks, where error compounds across
    /// many ops.
    pub fn end_to_end() -> Self {
        GradCheckOpts { h: 1e-5, tol: 1e-3 }
    }
}

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct CheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

impl CheckEntry {
    pub fn into_result(self) -> Result<CheckEntry> {
        if self.pass {
            Ok(self)
        } else {
            Err(Error::GradCheck {
                name: self.name,
                max_rel_err: self.max_rel_err,
                tol: self.tol,
            })
        }
    }
}

/// Check the gradient of a scalar-valued graph function w.r.t. one input.
pub fn grad_check<F>(name: &str, f: F, x: &Tensor<f64>, opts: GradCheckOpts) -> Result<CheckEntry>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_multi(
        name,
        |g, vars| f(g, vars[0]),
        std::slice::from_ref(x),
        opts,
    )
}

/// Check gradients of a scalar-valued graph function w.r.t. every input.
///
/// The forward pass is evaluated twice up front; if the two scalar results
/// are not bit-identical the function is nondeterministic and no finite
/// difference is meaningful, so that is reported as its own error. Analytic
/// gradients then come from one backward sweep, numeric ones from central
/// differences at `opts.h`, compared as
/// `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn grad_check_multi<F>(
    name: &str,
    f: F,
    inputs: &[Tensor<f64>],
    opts: GradCheckOpts,
) -> Result<CheckEntry>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).numel() != 1 {
            return Err(Error::shape(
                "grad_check",
                format!(
                    "checked function must be scalar-valued, got {:?}",
                    g.value(out).shape()
                ),
            ));
        }
        Ok(g.scalar_value(out))
    };

    let base = eval(inputs)?;
    let again = eval(inputs)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Determinism(name.to_string()));
    }

    // Analytic gradients, one backward pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; x.numel()])
        })
        .collect();

    let mut max_rel_err = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, x) in inputs.iter().enumerate() {
        for ei in 0..x.numel() {
            let orig = x.data()[ei];
            work[ti].data_mut()[ei] = orig + opts.h;
            let fp = eval(&work)?;
            work[ti].data_mut()[ei] = orig - opts.h;
            let fm = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * opts.h);
            let a = analytic[ti][ei];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
        }
    }

    Ok(CheckEntry {
        name: name.to_string(),
        max_rel_err,
        tol: opts.tol,
        pass: max_rel_err <= opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_gradient()  {
        let x = Tensor::from_f64(&[3], &[0.3, -1.2, 2.5]).unwrap();
        let e = grad_check("sum", |g, v| g.sum_all(v), &x, GradCheckOpts::default()).unwrap();
        assert!(e.pass);
        // d(sum)/dx = 1 exactly; both sides agree to rounding.
        assert!(e.max_rel_err < 1e-9, "{}", e.max_rel_err);
    }

    #[test]
    fn wrong_backward_is_caught() {
        let x = Tensor::from_f64(&[3], &[0.7, -0.4, 1.1]).unwrap();
        let e = grad_check(
            "square_wrong_grad",
            |g, v| {
                let s = g.square_wrong_grad(v)?;
                g.sum_all(s)
            },
            &x,
            GradCheckOpts::default(),
        )
        .unwrap();
        assert!(!e.pass, "deliberately wrong vjp must fail the check");
        assert!(e.max_rel_err > 0.1, "{}", e.max_rel_err);
        assert!(e.into_result().is_err());
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        use std::cell::Cell;
        let counter = Cell::new(0.0f64);
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        let err = grad_check(
            "impure",
            |g, v| {
                counter.set(counter.get() + 1.0);
                let c = g.constant(Tensor::scalar(counter.get()));
                let y = g.hadamard(v, c)?;
                g.sum_all(y)
            },
            &x,
            GradCheckOpts::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Determinism(_)), "{err}");
    }
}
