//! Finite-difference gradient verification.
//!
//! Central differences on randomly chosen coordinates against the tape's
//! analytic gradients. Every layer and the assembled models are validated
//! through this module; it is also wired into the CLI selftest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Name and coordinate of the worst offender, for diagnostics.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Check several parameters against one loss function. The closure must
/// rebuild the forward pass from scratch (fresh tape) on every call; only
/// the first call's tape is used for the backward pass.
pub fn finite_diff_check_multi(
    params: &[(&str, &Tensor)],
    loss_fn: impl Fn() -> Result<(Tape, Tensor), TensorError>,
    coords_per_tensor: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport, TensorError> {
    for (_, p) in params {
        p.zero_grad();
    }
    let (tape, loss) = loss_fn()?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    for (_, p) in params {
        p.zero_grad();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for ((name, p), grads) in params.iter().zip(&analytic) {
        for _ in 0..coords_per_tensor.min(p.numel()) {
            let idx = rng.random_range(0..p.numel());
            let orig = p.data()[idx];
            p.apply_update(|d| d[idx] = orig + h);
            let lp = loss_fn()?.1.item();
            p.apply_update(|d| d[idx] = orig - h);
            let lm = loss_fn()?.1.item();
            p.apply_update(|d| d[idx] = orig);
            let fd = (lp - lm) / (2.0 * h);
            let g = grads[idx];
            // Coordinates with (near-)zero true gradient measure only FD
            // roundoff noise; e.g. a key-projection bias shifts every score
            // in a softmax row equally and has exactly zero gradient.
            let scale = fd.abs().max(g.abs());
            let rel = if scale < 1e-4 {
                0.0
            } else {
                (fd - g).abs() / scale
            };
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.to_string(), idx));
            }
        }
    }
    Ok(report)
}

/// Single-tensor convenience wrapper.
pub fn finite_diff_check(
    param: &Tensor,
    loss_fn: impl Fn() -> (Tape, Tensor),
    coords: usize,
    h: f64,
    seed: u64,
) -> GradCheckReport {
    finite_diff_check_multi(&[("param", param)], || Ok(loss_fn()), coords, h, seed)
        .expect("loss_fn is infallible here")
}
