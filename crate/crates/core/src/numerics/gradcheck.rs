use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Number of parameter coordinates to probe.
    pub samples: usize,
    /// Central-difference step.
    pub step: f64,
    pub tol: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            step: 1e-4,
            tol: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
    pub worst: Option<ProbeResult>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of the scalar built by `loss` against central
/// finite differences `(f(w + h) - f(w - h)) / 2h`.
///
/// Probes are drawn uniformly without replacement from coordinates of
/// parameters the loss reaches whose analytic gradient is nonzero.
pub fn grad_check<F, R>(
    params: &mut ParamStore<f64>,
    mut loss: F,
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<'_, f64>) -> Result<Var>,
    R: Rng + ?Sized,
{
    let grads = {
        let mut tape = Tape::new(params);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };
    let mut pool: Vec<(ParamId, usize, f64)> = Vec::new();
    for (id, g) in grads.iter() {
        pool.extend(
            g.iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(i, &x)| (id, i, x)),
        );
    }
    if pool.is_empty() {
        return Err(Error::invalid("loss has zero gradient everywhere"));
    }
    let probes: Vec<_> = pool
        .choose_multiple(rng, opts.samples.min(pool.len()))
        .copied()
        .collect();

    let mut eval = |params: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(params);
        let l = loss(&mut tape)?;
        Ok(tape.scalar(l))
    };

    let mut results = Vec::with_capacity(probes.len());
    for (id, idx, analytic) in probes {
        let orig = params.get(id).data()[idx];
        params.get_mut(id).data_mut()[idx] = orig + opts.step;
        let plus = eval(params)?;
        params.get_mut(id).data_mut()[idx] = orig - opts.step;
        let minus = eval(params)?;
        params.get_mut(id).data_mut()[idx] = orig;
        let numeric = (plus - minus) / (2.0 * opts.step);
        results.push(ProbeResult {
            param: params.name(id).to_string(),
            index: idx,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric, opts.floor),
        });
    }

    let checked = results.len();
    let mean = results.iter().map(|r| r.rel_error).sum::<f64>() / checked as f64;
    let worst = results
        .into_iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
    let max = worst.as_ref().map_or(0.0, |w| w.rel_error);
    Ok(GradCheckReport {
        checked,
        max_rel_error: max,
        mean_rel_error: mean,
        tol: opts.tol,
        passed: max < opts.tol,
        worst,
    })
}
