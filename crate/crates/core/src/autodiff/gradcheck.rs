//! Central finite-difference gradient checks.

use super::{ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|fd - analytic| / max(|fd|, |analytic|, floor)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose probes crossed a max-pool or ReLU switch.
    pub skipped: usize,
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with step `h` for every entry of every parameter. Entries
/// whose `+h` or `-h` probe changes [`Tape::branch_signature`] are skipped,
/// as are parameters the scalar never reads.
pub fn check_gradients<F>(store: &ParamStore, f: F, h: f64, floor: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let signature = tape.branch_signature();
    let grads = tape.backward(loss)?;
    let mut analytic = store.clone();
    analytic.accumulate(&tape, &grads);

    let eval = |s: &ParamStore| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok((t.value(l).item(), t.branch_signature()))
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = store.clone();
    for p in store.iter() {
        let Some(g) = analytic.get(p.name()).and_then(|q| q.grad()).map(<[f64]>::to_vec) else {
            continue;
        };
        let mut data = p.value().data().to_vec();
        for i in 0..data.len() {
            let x0 = data[i];
            data[i] = x0 + h;
            probe.set_value(p.name(), data.clone())?;
            let (up, sig_up) = eval(&probe)?;
            data[i] = x0 - h;
            probe.set_value(p.name(), data.clone())?;
            let (dn, sig_dn) = eval(&probe)?;
            data[i] = x0;
            if sig_up != signature || sig_dn != signature {
                report.skipped += 1;
                continue;
            }
            let fd = (up - dn) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(floor);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
        probe.set_value(p.name(), data)?;
    }
    Ok(report)
}
