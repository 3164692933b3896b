//! Central finite-difference verification of analytic gradients.

use std::fmt;

use serde::Serialize;

use super::{AutodiffError, Graph, ParamStore, Var};

/// Denominator floor for the relative error. Central differences on a loss
/// of magnitude ~10-100 carry roughly 1e-10 of rounding noise at eps = 1e-5,
/// so gradients smaller than this floor are judged on absolute error
/// (`tol * floor`) instead.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// Outcome for one parameter tensor.
#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub eps: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl CheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tol)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<40} max_rel_err={:.3e} max_abs_err={:.3e}",
                p.name, p.max_rel_err, p.max_abs_err
            )?;
        }
        write!(
            f,
            "{} (max_rel_err={:.3e}, tol={:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_err(),
            self.tol
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error("non-finite analytic gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at parameter `{0}`")]
    NonFiniteLoss(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the gradient from [`Graph::backward`] against central differences
/// for every scalar weight in `store`.
///
/// `forward` must build the scalar loss on the graph it is handed and be
/// deterministic; it is always given an evaluation-mode graph.
/// Gradients in `store` are left holding the analytic values.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut forward: F,
    eps: f64,
    tol: f64,
) -> Result<CheckReport, GradCheckError>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var, AutodiffError>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = forward(&mut g, store)?;
    g.backward(loss, store)?;

    let mut eval = |store: &ParamStore| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let loss = forward(&mut g, store)?;
        Ok(g.value(loss).item())
    };

    let mut params = Vec::with_capacity(store.len());
    for pi in 0..store.len() {
        let analytic = store.params()[pi].grad.data().to_vec();
        let name = store.params()[pi].name.clone();
        if analytic.iter().any(|v| !v.is_finite()) {
            return Err(GradCheckError::NonFiniteGradient(name));
        }
        let mut check = ParamCheck {
            name,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_index: 0,
        };
        for (k, &a) in analytic.iter().enumerate() {
            let orig = store.params()[pi].value.data()[k];
            store.params_mut()[pi].value.data_mut()[k] = orig + eps;
            let up = eval(store)?;
            store.params_mut()[pi].value.data_mut()[k] = orig - eps;
            let down = eval(store)?;
            store.params_mut()[pi].value.data_mut()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(GradCheckError::NonFiniteLoss(check.name));
            }
            let numeric = (up - down) / (2.0 * eps);
            let rel = relative_error(a, numeric);
            check.max_abs_err = check.max_abs_err.max((a - numeric).abs());
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_index = k;
            }
        }
        params.push(check);
    }
    Ok(CheckReport { eps, tol, params })
}
