use serde::Serialize;

use super::{AutodiffError, ParamStore, Tape, Var};

pub const DEFAULT_H: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub h: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(move |e| e.max_rel_error >= self.tol)
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

/// Compares backward-pass gradients of the scalar `f` with central
/// differences, element by element, for every parameter in `store`.
/// Parameter values are restored afterwards and gradients left zeroed.
pub fn grad_check<F>(store: &mut ParamStore, f: F, h: f64, tol: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>,
{
    let eval = |store: &ParamStore| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        Ok(tape.value(out).item())
    };

    store.zero_grad();
    {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        tape.backward(out, store)?;
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();
    store.zero_grad();

    let ids: Vec<_> = store.ids().collect();
    let mut entries = Vec::with_capacity(ids.len());
    for (id, grad) in ids.into_iter().zip(analytic) {
        let mut worst = (0.0, 0, 0.0, 0.0);
        for j in 0..grad.len() {
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + h;
            let up = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig - h;
            let down = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (up? - down?) / (2.0 * h);
            let err = rel_error(grad[j], numeric);
            if err > worst.0 || j == 0 {
                worst = (err, j, grad[j], numeric);
            }
        }
        entries.push(GradCheckEntry {
            name: store.get(id).name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            analytic: worst.2,
            numeric: worst.3,
        });
    }
    Ok(GradCheckReport { tol, h, entries })
}
