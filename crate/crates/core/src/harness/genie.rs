//! Least-squares fit of the quadratic ansatz to the true fast-variable
//! coupling, using the fast states of a simulated trajectory.

use nalgebra::{Matrix2, Vector2};

use crate::error::{NhfError, Result};
use crate::model::{generate_ground_truth, TruthConfig};

/// Fits `(a1, a2)` in `(HC/B) sum_l z_{jL+l} ≈ a1 x_j^2 + a2 x_j` over all slow
/// components and all recorded steps of a run of `n_steps` steps.
pub fn genie_ansatz_fit(cfg: &TruthConfig, n_steps: u64, seed: u64) -> Result<(f64, f64)> {
    let cfg = TruthConfig {
        record_fast: true,
        ..cfg.clone()
    };
    let gt = generate_ground_truth(&cfg, n_steps, seed)?;
    let fast = gt
        .trajectory
        .fast_states
        .as_ref()
        .ok_or_else(|| NhfError::invalid("fast states were not recorded"))?;
    let hcb = cfg.coupling * cfg.time_scale / cfg.amplitude;
    let mut ata = Matrix2::zeros();
    let mut atb = Vector2::zeros();
    for (x, z) in gt.trajectory.slow_states.iter().zip(fast) {
        for (j, xj) in x.iter().enumerate() {
            let target = hcb * z[j * cfg.l..(j + 1) * cfg.l].iter().sum::<f64>();
            let row = Vector2::new(xj * xj, *xj);
            ata += row * row.transpose();
            atb += row * target;
        }
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| NhfError::invalid("degenerate genie regression"))?;
    Ok((sol[0], sol[1]))
}
