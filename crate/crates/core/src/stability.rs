//! Small-signal check of an operating point: finite-difference Jacobian of
//! the plant right-hand side and its eigenvalues.

use nalgebra::{Complex, DMatrix};

use crate::plant::{PlantError, PlantState, StateLayout, SystemParams, UnitKind};

/// Indices of the state entries that actually evolve. Offline branches and
/// the integrator with `K_i = 0` only contribute structural zero eigenvalues.
fn active_indices(params: &SystemParams, layout: &StateLayout) -> Vec<usize> {
    let mut idx = vec![0];
    let n = params.units.len();
    let mut cap = 0;
    for (k, u) in params.units.iter().enumerate() {
        if u.online {
            idx.push(layout.current_index(k));
        }
        if u.kind == UnitKind::Sc {
            if u.online {
                idx.push(1 + n + cap);
            }
            cap += 1;
        }
    }
    if params.ki > 0.0 {
        idx.push(layout.sigma_index());
    }
    idx
}

/// Central-difference Jacobian restricted to the active states.
pub fn jacobian(params: &SystemParams, state: &PlantState) -> Result<DMatrix<f64>, PlantError> {
    let layout = StateLayout::new(params);
    let x0 = state.to_vec();
    let active = active_indices(params, &layout);
    let m = active.len();
    let mut jac = DMatrix::zeros(m, m);
    let mut plus = vec![0.0; x0.len()];
    let mut minus = vec![0.0; x0.len()];
    for (col, &j) in active.iter().enumerate() {
        let h = 1e-6 * x0[j].abs().max(1.0);
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += h;
        xm[j] -= h;
        layout.rhs(params, &xp, &mut plus)?;
        layout.rhs(params, &xm, &mut minus)?;
        for (row, &i) in active.iter().enumerate() {
            jac[(row, col)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

pub fn eigenvalues(
    params: &SystemParams,
    state: &PlantState,
) -> Result<Vec<Complex<f64>>, PlantError> {
    let jac = jacobian(params, state)?;
    Ok(jac.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part of the linearization at the equilibrium for the
/// present loads. Negative means locally asymptotically stable.
pub fn spectral_abscissa(params: &SystemParams) -> Result<f64, PlantError> {
    let eq = PlantState::equilibrium(params)?;
    Ok(eigenvalues(params, &eq)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}
