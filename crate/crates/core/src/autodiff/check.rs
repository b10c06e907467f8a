//! Central finite-difference verification of tape gradients.
//!
//! `stop_gradient` outputs are frozen at their unperturbed values while the
//! loss is re-evaluated, so the numerical derivative describes the same
//! function the tape differentiates. An entry whose tape gradient is exactly
//! zero but whose derivative through the live (unfrozen) graph is not is
//! reported as [`EntryStatus::Blocked`] rather than as a mismatch.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Magnitudes below this are compared absolutely rather than relatively.
    pub abs_floor: f64,
    /// Parameters larger than this are checked on a seeded random subset.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_entries: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryStatus {
    Ok,
    /// Tape gradient is zero because every path runs through a stop-gradient.
    Blocked,
    Mismatch,
}

#[derive(Clone, Debug)]
pub struct EntryCheck {
    pub flat_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub status: EntryStatus,
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: Vec<EntryCheck>,
}

impl ParamCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn count(&self, status: EntryStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error()).fold(0.0, f64::max)
    }

    pub fn mismatches(&self) -> usize {
        self.params.iter().map(|p| p.count(EntryStatus::Mismatch)).sum()
    }

    pub fn passed(&self) -> bool {
        self.mismatches() == 0
    }

    pub fn param(&self, name: &str) -> Option<&ParamCheck> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares tape gradients of `forward`'s scalar output against central
/// differences `(f(θ+h) − f(θ−h)) / 2h` for every parameter in `store`.
pub fn check_gradients<F>(store: &ParamStore, forward: F, config: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
{
    let (grads, stops) = {
        let mut tape = Tape::new(store);
        let loss = forward(&mut tape)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(value));
        }
        let stops = tape.stopped_values().to_vec();
        (tape.backward(loss)?, stops)
    };

    let mut work = store.clone();
    let eval = |s: &ParamStore, frozen: Option<&Vec<Tensor>>| -> Result<f64> {
        let mut tape = match frozen {
            Some(f) => Tape::with_frozen_stops(s, f.clone()),
            None => Tape::new(s),
        };
        let loss = forward(&mut tape)?;
        let v = tape.value(loss).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss(v))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let h = config.step;
    let mut params = Vec::new();
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    for name in names {
        let Some(grad) = grads.get(&name) else { continue };
        let len = store.value(&name)?.len();
        let mut flat: Vec<usize> = if len <= config.max_entries {
            (0..len).collect()
        } else {
            sample(&mut rng, len, config.max_entries).into_vec()
        };
        flat.sort_unstable();

        let mut entries = Vec::with_capacity(flat.len());
        for i in flat {
            let orig = work.value(&name)?.values()[i];
            let mut central = |frozen: Option<&Vec<Tensor>>| -> Result<f64> {
                work.value_mut(&name)?.values_mut()[i] = orig + h;
                let plus = eval(&work, frozen)?;
                work.value_mut(&name)?.values_mut()[i] = orig - h;
                let minus = eval(&work, frozen)?;
                work.value_mut(&name)?.values_mut()[i] = orig;
                Ok((plus - minus) / (2.0 * h))
            };
            let numeric = central(Some(&stops))?;
            let analytic = grad.at(i);
            let rel_error = relative_error(analytic, numeric, config.abs_floor);
            let status = if rel_error > config.tolerance {
                EntryStatus::Mismatch
            } else if analytic == 0.0 {
                let live = central(None)?;
                if live.abs() > config.abs_floor {
                    EntryStatus::Blocked
                } else {
                    EntryStatus::Ok
                }
            } else {
                EntryStatus::Ok
            };
            entries.push(EntryCheck {
                flat_index: i,
                analytic,
                numeric,
                rel_error,
                status,
            });
        }
        params.push(ParamCheck { name, entries });
    }
    Ok(GradCheckReport {
        params,
        tolerance: config.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamKind;

    fn linear_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(
            "w",
            ParamKind::Dense,
            Tensor::matrix(3, 1, vec![0.3, -0.2, 0.5]).unwrap(),
        )
        .unwrap();
        s.insert("b", ParamKind::Dense, Tensor::vector(vec![0.1])).unwrap();
        s
    }

    #[test]
    fn linear_layer_with_bce_is_exact() {
        let store = linear_store();
        let x = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let labels = [1.0, 0.0, 1.0, 0.0];
        let report = check_gradients(
            &store,
            |tape| {
                let xv = tape.constant(x.clone());
                let w = tape.param("w")?;
                let b = tape.param("b")?;
                let z = tape.matmul(xv, w)?;
                let z = tape.add_row(z, b)?;
                let p = tape.sigmoid(z);
                tape.bce_mean(p, &labels)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error() < 1e-6, "{}", report.max_rel_error());
    }

    #[test]
    fn stop_gradient_only_path_is_flagged_blocked() {
        let store = linear_store();
        let report = check_gradients(
            &store,
            |tape| {
                let w = tape.param("w")?;
                let b = tape.param("b")?;
                let frozen = tape.stop_gradient(w)?;
                let prod = tape.mul(frozen, frozen)?;
                let s = tape.sum(prod);
                let bb = tape.mul(b, b)?;
                let bs = tape.sum(bb);
                tape.add(s, bs)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed());
        let w = report.param("w").unwrap();
        assert_eq!(w.count(EntryStatus::Blocked), 3);
        assert!(w.entries.iter().all(|e| e.analytic == 0.0));
        assert_eq!(report.param("b").unwrap().count(EntryStatus::Ok), 1);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let store = linear_store();
        let err = check_gradients(
            &store,
            |tape| {
                let b = tape.param("b")?;
                let zero = tape.scale(b, 0.0);
                let inf = tape.div(b, zero)?;
                Ok(tape.sum(inf))
            },
            &GradCheckConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(_)));
    }
}
