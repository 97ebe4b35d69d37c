//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::{Graph, ParamStore};
use super::tape::Var;
use crate::error::{AmnError, Result};

/// Which coordinates of each parameter are perturbed.
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub eps: f64,
    /// Per parameter: check every coordinate when the parameter has at most
    /// this many, otherwise this many random coordinates plus the same
    /// number with the largest analytic gradient.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Use the five-point central stencil (error `O(eps^4)`) instead of the
    /// three-point one (`O(eps^2)`).
    pub five_point: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: 1e-5,
            max_coords: None,
            seed: 0,
            five_point: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub frozen: bool,
    pub coords_checked: usize,
    pub max_abs_grad: f64,
    pub max_rel_error: f64,
    /// Coordinate attaining `max_rel_error`, with both gradients there.
    pub worst_coord: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `scalar_fn` with central differences at
/// every coordinate of every trainable parameter.
pub fn finite_difference_check<L>(
    scalar_fn: L,
    params: &ParamStore<f64>,
    eps: f64,
) -> Result<GradCheckReport>
where
    L: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    finite_difference_check_with(
        scalar_fn,
        params,
        CheckOptions {
            eps,
            ..CheckOptions::default()
        },
    )
}

pub fn finite_difference_check_with<L>(
    scalar_fn: L,
    params: &ParamStore<f64>,
    opts: CheckOptions,
) -> Result<GradCheckReport>
where
    L: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    if !(opts.eps > 0.0 && opts.eps <= 1e-2) {
        return Err(AmnError::InvalidArgument(format!(
            "finite difference step {} outside (0, 1e-2]",
            opts.eps
        )));
    }
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = scalar_fn(&mut g)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(AmnError::NonFinite(format!("scalar function returned {v}")));
        }
        Ok(v)
    };

    let analytic = {
        let mut g = Graph::new(params);
        let loss = scalar_fn(&mut g)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(AmnError::NonFinite(format!("scalar function returned {v}")));
        }
        g.param_grads(loss)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        params: Vec::new(),
    };
    for id in params.ids() {
        let entry = params.entry(id);
        let g = analytic.get(id).data();
        let max_abs_grad = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut check = ParamCheck {
            name: entry.name.clone(),
            frozen: entry.frozen,
            coords_checked: 0,
            max_abs_grad,
            max_rel_error: 0.0,
            worst_coord: None,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        if entry.frozen {
            report.params.push(check);
            continue;
        }
        let n = g.len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(cap) if n > cap => {
                let mut picked: Vec<usize> = sample(&mut rng, n, cap).into_vec();
                let mut by_mag: Vec<usize> = (0..n).collect();
                by_mag.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()).then(a.cmp(&b)));
                picked.extend(by_mag.into_iter().take(cap));
                picked.sort_unstable();
                picked.dedup();
                picked
            }
            _ => (0..n).collect(),
        };
        for &c in &coords {
            let original = work.get(id).data()[c];
            let mut at = |step: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[c] = original + step;
                let v = eval(&work);
                work.get_mut(id).data_mut()[c] = original;
                v
            };
            let h = opts.eps;
            let numeric = if opts.five_point {
                (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h)
            } else {
                (at(h)? - at(-h)?) / (2.0 * h)
            };
            let err = relative_error(g[c], numeric);
            if err > check.max_rel_error || check.worst_coord.is_none() {
                check.max_rel_error = err.max(check.max_rel_error);
                check.worst_coord = Some(c);
                check.worst_analytic = g[c];
                check.worst_numeric = numeric;
            }
        }
        check.coords_checked = coords.len();
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w), false);
        s
    }

    #[test]
    fn square_matches_analytic_gradient() {
        let s = store(3.0);
        let id = s.find("w").unwrap();
        let report = finite_difference_check(
            |g| {
                let w = g.param(id);
                g.tape.mul(w, w)
            },
            &s,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert!((report.params[0].max_abs_grad - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let s = store(3.0);
        let report =
            finite_difference_check(|g| Ok(g.tape.constant(Tensor::scalar(4.0))), &s, 1e-4)
                .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.params[0].max_abs_grad, 0.0);
    }

    #[test]
    fn rejects_non_finite_value() {
        let s = store(0.0);
        let id = s.find("w").unwrap();
        let res = finite_difference_check(
            |g| {
                let w = g.param(id);
                Ok(g.tape.log(w))
            },
            &s,
            1e-4,
        );
        assert!(matches!(res, Err(AmnError::NonFinite(_))));
    }

    #[test]
    fn five_point_stencil_is_exact_on_quartics() {
        let s = store(0.7);
        let id = s.find("w").unwrap();
        let opts = CheckOptions {
            eps: 1e-2,
            five_point: true,
            ..CheckOptions::default()
        };
        let report = finite_difference_check_with(
            |g| {
                let w = g.param(id);
                let w2 = g.tape.mul(w, w)?;
                g.tape.mul(w2, w2)
            },
            &s,
            opts,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-12, "{report:?}");
    }

    #[test]
    fn rejects_bad_step() {
        let s = store(1.0);
        let id = s.find("w").unwrap();
        let f = |g: &mut Graph<'_, f64>| Ok(g.param(id));
        assert!(finite_difference_check(f, &s, 0.0).is_err());
        assert!(finite_difference_check(f, &s, 0.1).is_err());
    }
}
