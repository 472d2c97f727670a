//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Which coordinates of each trainable parameter to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most this many coordinates per parameter, chosen with a seeded RNG.
    Sample { per_param: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checks: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    /// Worst relative error among coordinates of the named parameter.
    pub fn max_rel_error_for(&self, param: &str) -> Option<f64> {
        self.checks
            .iter()
            .filter(|c| c.param == param)
            .map(|c| c.rel_error)
            .reduce(f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn eval_scalar<F>(store: &ParamStore, f: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(store, &mut g)?;
    let t = g.value(out);
    if !t.is_scalar() {
        return Err(Error::invalid("gradient check needs a scalar function"));
    }
    let v = t.item();
    if !v.is_finite() {
        return Err(Error::Numerical(format!("function value {v} is not finite")));
    }
    Ok(v)
}

/// Compares the reverse-mode gradient of `f` against
/// `(f(p+eps) - f(p-eps)) / (2 eps)` for the selected coordinates of every
/// trainable parameter (or only `only`, when given). Parameter values are
/// restored exactly afterwards and gradients are left zeroed.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    eps: f64,
    coords: Coords,
    only: Option<&[ParamId]>,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    store.zero_grad();
    {
        let mut g = Graph::new();
        let out = f(store, &mut g)?;
        let v = g.value(out);
        if v.is_scalar() && !v.item().is_finite() {
            return Err(Error::Numerical("function value is not finite".into()));
        }
        g.backward(out, store)?;
    }

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.trainable().map(|(id, _)| id).collect(),
    };
    let mut checks = Vec::new();
    for id in ids {
        let numel = store.get(id).value.numel();
        let picked: Vec<usize> = match coords {
            Coords::All => (0..numel).collect(),
            Coords::Sample { per_param, seed } => {
                if per_param >= numel {
                    (0..numel).collect()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ id.0 as u64);
                    let mut v = sample(&mut rng, numel, per_param).into_vec();
                    v.sort_unstable();
                    v
                }
            }
        };
        let analytic_all = store
            .get(id)
            .grad
            .as_ref()
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; numel]);
        for idx in picked {
            let orig = store.get(id).value.data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + eps;
            let plus = eval_scalar(store, &mut f);
            store.get_mut(id).value.data_mut()[idx] = orig - eps;
            let minus = eval_scalar(store, &mut f);
            store.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let analytic = analytic_all[idx];
            checks.push(CoordCheck {
                param: store.get(id).name.clone(),
                index: idx,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            });
        }
    }
    store.zero_grad();
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        checks,
    })
}
