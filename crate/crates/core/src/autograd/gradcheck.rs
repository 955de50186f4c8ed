use rand::seq::index::sample;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::{par, seed};

/// Above this many coordinates only a 1% random subsample is differenced.
pub const FULL_CHECK_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Set when the function passed through an exact max-type tie, where the
    /// analytic gradient is a convention rather than a derivative.
    pub tie_warning: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(x + eps) - f(x - eps)) / 2 eps`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + Sync,
{
    grad_check_seeded(f, params, eps, 0)
}

/// Like [`grad_check`]; `subsample_seed` picks the coordinates when the
/// parameter count exceeds [`FULL_CHECK_LIMIT`].
///
/// `f` receives a fresh tape with one leaf per parameter and returns the
/// scalar loss built on it.
pub fn grad_check_seeded<F>(
    f: F,
    params: &[Tensor],
    eps: f64,
    subsample_seed: u64,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + Sync,
{
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric(
            "grad_check parameters must be finite".into(),
        ));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = ps.iter().map(|p| tape.param(p.clone())).collect();
        Ok(f(&tape, &leaves)?.item())
    };

    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&tape, &leaves)?;
    let base = loss.item();
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = leaves
        .iter()
        .zip(params)
        .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    let tie_warning = tape.saw_ties();

    let again = eval(params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Determinism(format!(
            "repeated evaluation differs: {base} vs {again}"
        )));
    }

    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.numel()).map(move |c| (pi, c)))
        .collect();
    if coords.len() > FULL_CHECK_LIMIT {
        let keep = coords.len().div_ceil(100);
        let mut rng = seed::rng(subsample_seed);
        let mut picked: Vec<usize> = sample(&mut rng, coords.len(), keep).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }

    let errors = par::map(&coords, |&(pi, c)| -> Result<f64> {
        let mut shifted = params.to_vec();
        let x0 = params[pi].data()[c];
        shifted[pi].data_mut()[c] = x0 + eps;
        let up = eval(&shifted)?;
        shifted[pi].data_mut()[c] = x0 - eps;
        let down = eval(&shifted)?;
        let numeric = (up - down) / (2.0 * eps);
        Ok(relative_error(analytic[pi].data()[c], numeric))
    });

    let mut max_rel_error = 0.0;
    let mut worst = None;
    for (e, coord) in errors.into_iter().zip(&coords) {
        let e = e?;
        if e > max_rel_error || worst.is_none() {
            max_rel_error = e;
            worst = Some(*coord);
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        checked: coords.len(),
        tie_warning,
    })
}
