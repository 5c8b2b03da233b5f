use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::NumericsError;

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates checked in total when the parameters hold more than this many.
    pub max_coords: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            max_coords: 200,
            floor: 1e-6,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub both_zero: bool,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub checked: Vec<CoordCheck>,
    pub max_rel_error: f64,
    pub worst: Option<CoordCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn both_zero_count(&self) -> usize {
        self.checked.iter().filter(|c| c.both_zero).count()
    }

    /// Names of tensors with at least one coordinate over tolerance.
    pub fn failing_tensors(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.checked {
            if c.rel_error >= self.tolerance && !out.contains(&c.tensor) {
                out.push(c.tensor.clone());
            }
        }
        out
    }
}

/// Compares tape gradients of `f` with central finite differences.
///
/// `f` records a scalar loss on the supplied tape. It is evaluated twice up
/// front; if the two values differ the check is aborted. `tamper` may edit the
/// analytic gradients before comparison, which lets tests inject faults.
pub fn finite_difference_check<E, F, T>(
    store: &mut ParamStore,
    mut f: F,
    tamper: T,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport, E>
where
    E: From<NumericsError>,
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var, E>,
    T: FnOnce(&mut Gradients, &ParamStore),
{
    fn eval<E, F>(f: &mut F, store: &ParamStore) -> Result<f64, E>
    where
        F: FnMut(&ParamStore, &mut Tape) -> Result<Var, E>,
    {
        let mut tape = Tape::new();
        let v = f(store, &mut tape)?;
        Ok(tape.scalar(v))
    }
    let a = eval(&mut f, store)?;
    let b = eval(&mut f, store)?;
    if a.to_bits() != b.to_bits() {
        return Err(NumericsError::NonDeterministic(format!("two evaluations gave {a:e} and {b:e}")).into());
    }

    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let mut grads = tape.backward(loss)?;
    tamper(&mut grads, store);

    let coords = choose_coords(store, &grads, cfg);
    let mut checked = Vec::with_capacity(coords.len());
    for (id, idx) in coords {
        let analytic = grads.param(id).map_or(0.0, |g| g[idx]);
        let orig = store.get(id).values()[idx];
        store.get_mut(id).values_mut()[idx] = orig + cfg.step;
        let up = eval(&mut f, store);
        store.get_mut(id).values_mut()[idx] = orig - cfg.step;
        let down = eval(&mut f, store);
        store.get_mut(id).values_mut()[idx] = orig;
        let numeric = (up? - down?) / (2.0 * cfg.step);
        let both_zero = analytic == 0.0 && numeric.abs() < 1e-12;
        let rel_error = if both_zero {
            0.0
        } else {
            (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor)
        };
        checked.push(CoordCheck {
            tensor: store.name(id).to_string(),
            index: idx,
            analytic,
            numeric,
            rel_error,
            both_zero,
        });
    }
    let worst = checked
        .iter()
        .max_by(|x, y| x.rel_error.total_cmp(&y.rel_error))
        .cloned();
    Ok(GradcheckReport {
        max_rel_error: worst.as_ref().map_or(0.0, |w| w.rel_error),
        worst,
        checked,
        tolerance: cfg.tolerance,
    })
}

// Every tensor gets a share of the coordinate budget proportional to its size
// (at least one), and half of each share goes to coordinates with a nonzero
// analytic gradient so sparse gradients are actually exercised.
fn choose_coords(store: &ParamStore, grads: &Gradients, cfg: &GradcheckConfig) -> Vec<(ParamId, usize)> {
    let total = store.total_numel();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for (id, _, t) in store.iter() {
        let n = t.numel();
        if total <= cfg.max_coords {
            out.extend((0..n).map(|i| (id, i)));
            continue;
        }
        let quota = ((cfg.max_coords * n) as f64 / total as f64).round().max(1.0) as usize;
        let quota = quota.min(n);
        let nonzero: Vec<usize> = grads
            .param(id)
            .map(|g| (0..n).filter(|&i| g[i] != 0.0).collect())
            .unwrap_or_default();
        let mut picked: Vec<usize> = Vec::with_capacity(quota);
        let from_nonzero = nonzero.len().min(quota.div_ceil(2));
        for k in sample(&mut rng, nonzero.len(), from_nonzero) {
            picked.push(nonzero[k]);
        }
        while picked.len() < quota {
            let i = sample(&mut rng, n, 1).index(0);
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| (id, i)));
    }
    out
}
