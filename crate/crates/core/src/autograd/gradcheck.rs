//! Central finite-difference checks of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates sampled per parameter tensor (all of them if the tensor is
    /// smaller).
    pub coords_per_tensor: usize,
    /// Denominator floor for the relative error so that gradients at the
    /// level of round-off noise do not dominate.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, coords_per_tensor: 5, floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient returned by `loss_fn` with central
/// differences on sampled coordinates of every tensor.
///
/// Half of the samples per tensor are drawn from coordinates with a non-zero
/// analytic gradient (sparse embedding tables would otherwise be checked
/// almost only at zeros). `params` is restored exactly before returning.
pub fn grad_check<F>(params: &mut ParamStore, mut loss_fn: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Grads)>,
{
    let (loss, grads) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} at gradient-check point")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, tensors: Vec::new() };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let analytic = grads.get(id).data.clone();
        let mut nonzero: Vec<usize> = (0..n).filter(|&k| analytic[k] != 0.0).collect();
        let mut all: Vec<usize> = (0..n).collect();
        nonzero.shuffle(&mut rng);
        all.shuffle(&mut rng);
        let want = cfg.coords_per_tensor.min(n);
        let mut coords: Vec<usize> = nonzero.into_iter().take(want.div_ceil(2)).collect();
        for k in all {
            if coords.len() >= want {
                break;
            }
            if !coords.contains(&k) {
                coords.push(k);
            }
        }

        let mut worst = 0.0f64;
        for &k in &coords {
            let original = params.get(id).data[k];
            params.get_mut(id).data[k] = original + cfg.step;
            let plus = loss_fn(params).map(|(l, _)| l);
            params.get_mut(id).data[k] = original - cfg.step;
            let minus = loss_fn(params).map(|(l, _)| l);
            params.get_mut(id).data[k] = original;
            let (plus, minus) = (plus?, minus?);
            let numeric = (plus - minus) / (2.0 * cfg.step);
            worst = worst.max(relative_error(analytic[k], numeric, cfg.floor));
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.tensors.push(TensorCheck { name: params.name(id).to_string(), coords: coords.len(), max_rel_error: worst });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Graph, Tensor};

    fn quadratic_store() -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::row_vector(vec![0.5, -1.5, 2.0, 0.25, -0.75, 3.0]));
        p
    }

    fn half_square(params: &ParamStore) -> Result<(f64, Grads)> {
        let mut g = Graph::new(params);
        let x = g.param(params.id("x").unwrap());
        let sq = g.mul(x, x);
        let s = g.sum(sq);
        let loss = g.scale(s, 0.5);
        Ok((g.scalar(loss), g.backward(loss)))
    }

    #[test]
    fn quadratic_is_essentially_exact() {
        let mut p = quadratic_store();
        let report = grad_check(&mut p, half_square, &GradCheckConfig::default()).unwrap();
        assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
        assert_eq!(report.tensors[0].coords, 5);
    }

    #[test]
    fn corrupted_partial_is_caught() {
        let mut p = quadratic_store();
        let cfg = GradCheckConfig { coords_per_tensor: 6, ..Default::default() };
        let report = grad_check(
            &mut p,
            |params| {
                let (l, mut g) = half_square(params)?;
                g.tensors[0].data[2] *= 1.5;
                Ok((l, g))
            },
            &cfg,
        )
        .unwrap();
        assert!(report.max_rel_error > 1e-2);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut p = quadratic_store();
        let err = grad_check(&mut p, |params| Ok((f64::NAN, params.zero_grads())), &GradCheckConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn parameters_are_restored() {
        let mut p = quadratic_store();
        let before = p.clone();
        grad_check(&mut p, half_square, &GradCheckConfig::default()).unwrap();
        assert_eq!(p, before);
    }
}
