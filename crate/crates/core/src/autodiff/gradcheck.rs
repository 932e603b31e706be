//! Analytic-versus-numeric gradient verification.
//!
//! The closure under test builds a scalar loss on a fresh tape from bound
//! parameters. It must be deterministic: fixed inputs, fixed dropout masks.
//! Central finite differences over every parameter element give the
//! independent reference.

use std::collections::BTreeMap;

use crate::scalar::Scalar;

use super::store::ParameterStore;
use super::tape::{Tape, Var};
use super::TapeError;

/// Per-parameter comparison outcome.
#[derive(Clone, Debug)]
pub struct GradCheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn worst(&self) -> f64 {
        self.rows.iter().fold(0.0, |acc, r| acc.max(r.max_rel_err))
    }

    pub fn failing(&self) -> Vec<&GradCheckRow> {
        self.rows.iter().filter(|r| !r.pass).collect()
    }
}

/// Relative error with a floor that keeps dead-gradient noise from
/// registering as disagreement.
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

fn eval_loss<T, F>(store: &ParameterStore<T>, build_loss: &F) -> Result<T, TapeError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &BTreeMap<String, Var>) -> Result<Var, TapeError>,
{
    let mut tape = Tape::new();
    let vars = store.bind_all(&mut tape)?;
    let loss = build_loss(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Check the closure's analytic gradients against central finite differences
/// of step `h`, one row per parameter.
pub fn grad_check<T, F>(
    params: &ParameterStore<T>,
    build_loss: &F,
    tolerance: f64,
    h: f64,
) -> Result<GradCheckReport, TapeError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &BTreeMap<String, Var>) -> Result<Var, TapeError>,
{
    let first = eval_loss(params, build_loss)?;
    let second = eval_loss(params, build_loss)?;
    if first != second {
        return Err(TapeError::NonDeterministicClosure {
            first: first.to_f64_lossy(),
            second: second.to_f64_lossy(),
        });
    }

    let analytic = {
        let mut tape = Tape::new();
        let vars = params.bind_all(&mut tape)?;
        let loss = build_loss(&mut tape, &vars)?;
        tape.backward(loss)?.to_map()
    };

    let mut probe = params.clone();
    let step = T::from_f64_lossy(h);
    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let len = probe.get(&name).unwrap().len();
        let mut worst = 0.0f64;
        for i in 0..len {
            let original = probe.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = original + step;
            let plus = eval_loss(&probe, build_loss)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = original - step;
            let minus = eval_loss(&probe, build_loss)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = original;
            let numeric = (plus.to_f64_lossy() - minus.to_f64_lossy()) / (2.0 * h);
            let a = analytic[&name].data()[i].to_f64_lossy();
            worst = worst.max(relative_error(a, numeric));
        }
        rows.push(GradCheckRow { name, max_rel_err: worst, pass: worst <= tolerance });
    }
    Ok(GradCheckReport { rows, tolerance })
}
