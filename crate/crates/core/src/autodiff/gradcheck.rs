//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{FaultInjection, Graph, Var};
use super::params::ParamStore;
use super::{AutodiffError, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference half step.
    pub step: f64,
    /// Entries probed per parameter tensor; tensors this size or smaller are
    /// checked exhaustively.
    pub max_entries: usize,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    pub seed: u64,
    /// Corrupts one backward rule in the analytic pass.
    pub fault: Option<FaultInjection>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_entries: 6,
            floor: 1e-6,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// One entry per parameter tensor, worst first.
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params.first().map_or(0.0, |p| p.max_rel_error)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.params.iter().all(|p| p.max_rel_error < tolerance)
    }

    pub fn failures(&self, tolerance: f64) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(move |p| p.max_rel_error >= tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of `loss_fn` against central differences for
/// every parameter tensor in `store`.
pub fn grad_check<F>(loss_fn: F, store: &ParamStore, config: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, s)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(AutodiffError::NonFiniteLoss);
        }
        Ok(v)
    };

    let mut g = Graph::new();
    g.set_fault(config.fault);
    let loss = loss_fn(&mut g, store)?;
    if !g.scalar(loss).is_finite() {
        return Err(AutodiffError::NonFiniteLoss);
    }
    let grads = g.backward(loss)?;
    let mut analytic = store.clone();
    analytic.clear_grads();
    grads.write_to(&g, &mut analytic)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for (id, name, tensor) in store.iter() {
        let n = tensor.numel();
        let mut entries: Vec<usize> = if n <= config.max_entries {
            (0..n).collect()
        } else {
            sample(&mut rng, n, config.max_entries).into_vec()
        };
        entries.sort_unstable();
        let zeros = vec![0.0; n];
        let a_grad = analytic.tensor(id).grad().unwrap_or(&zeros).to_vec();
        let mut worst = ParamCheck {
            name: name.to_string(),
            entries_checked: entries.len(),
            max_rel_error: 0.0,
            worst_index: entries[0],
            analytic: a_grad[entries[0]],
            numeric: f64::NAN,
        };
        for &i in &entries {
            let orig = tensor.data()[i];
            probe.tensor_mut(id).data_mut()[i] = orig + config.step;
            let plus = eval(&probe)?;
            probe.tensor_mut(id).data_mut()[i] = orig - config.step;
            let minus = eval(&probe)?;
            probe.tensor_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * config.step);
            let err = relative_error(a_grad[i], numeric, config.floor);
            if err >= worst.max_rel_error || worst.numeric.is_nan() {
                worst.max_rel_error = err;
                worst.worst_index = i;
                worst.analytic = a_grad[i];
                worst.numeric = numeric;
            }
        }
        params.push(worst);
    }
    params.sort_by(|a, b| {
        b.max_rel_error
            .total_cmp(&a.max_rel_error)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(GradCheckReport { params })
}
