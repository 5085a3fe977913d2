//! Reduced-order model of a single-bus MVDC microgrid.
//!
//! The bus capacitor `C_eq` is fed by droop-controlled sources (synchronous
//! generators and battery units) and supercapacitor branches, and drained by a
//! constant-power load and a pulsed-power load. A centralized PI loop adds the
//! same voltage correction `δv` to every online SG/BESS branch.
//!
//! ```text
//! C_eq·dv/dt  = Σ i_k − (P_cpl + P_ppl)/v
//! L_k·di_k/dt = v_ref − R_k·i_k − v + δv          (SG, BESS)
//! L_k·di_k/dt = v_ref − R_k·i_k − v_c,k − v       (SC)
//! C_k·dv_c/dt = i_k                               (SC)
//! dσ/dt       = v_ref − v,   δv = K_p·(v_ref − v) + K_i·σ
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("no online SG/BESS unit left to regulate the bus")]
    NoOnlineSources,
    #[error("no droop equilibrium: {p_load} W exceeds the deliverable power {p_max} W")]
    NoEquilibrium { p_load: f64, p_max: f64 },
    #[error("bus voltage {v_t} V at or below the floor {floor} V")]
    VoltageFloor { v_t: f64, floor: f64 },
    #[error("state layout does not match the unit list: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Sg,
    Bess,
    Sc,
}

impl UnitKind {
    /// SG and BESS branches share load through droop and receive `δv`.
    pub fn is_droop_source(self) -> bool {
        matches!(self, UnitKind::Sg | UnitKind::Bess)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitParams {
    pub id: String,
    pub kind: UnitKind,
    /// Branch inductance `L_k` (H).
    pub inductance: f64,
    /// Droop / series resistance `R_k` (Ω).
    pub resistance: f64,
    /// Series capacitance `C_k` (F), supercapacitor branches only.
    pub capacitance: Option<f64>,
    pub online: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Bus reference voltage `v_oDC` (V).
    pub v_ref: f64,
    /// DC-link capacitance (F).
    pub c_eq: f64,
    pub units: Vec<UnitParams>,
    /// Secondary proportional gain.
    pub kp: f64,
    /// Secondary integral gain (1/s).
    pub ki: f64,
    /// Constant-power load (W).
    pub p_cpl: f64,
    /// Pulsed-power load (W).
    pub p_ppl: f64,
    /// Abort threshold as a fraction of `v_ref`.
    pub voltage_floor: f64,
}

impl SystemParams {
    pub fn p_load(&self) -> f64 {
        self.p_cpl + self.p_ppl
    }

    pub fn floor_voltage(&self) -> f64 {
        self.voltage_floor * self.v_ref
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.units.iter().position(|u| u.id == id)
    }

    fn online_droop_sources(&self) -> impl Iterator<Item = &UnitParams> {
        self.units
            .iter()
            .filter(|u| u.online && u.kind.is_droop_source())
    }

    /// Every violated parameter invariant, empty when the set is admissible.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.v_ref > 0.0) {
            out.push(format!("system.v_ref must be > 0 (got {})", self.v_ref));
        }
        if !(self.c_eq > 0.0) {
            out.push(format!("system.c_eq must be > 0 (got {})", self.c_eq));
        }
        if !(self.p_cpl >= 0.0) || !(self.p_ppl >= 0.0) {
            out.push("system loads must be >= 0".to_string());
        }
        if !(self.voltage_floor > 0.0 && self.voltage_floor < 1.0) {
            out.push(format!(
                "system.voltage_floor must lie in (0, 1) (got {})",
                self.voltage_floor
            ));
        }
        if !(self.kp >= 0.0) || !(self.ki >= 0.0) {
            out.push("secondary gains must be >= 0".to_string());
        }
        for (n, u) in self.units.iter().enumerate() {
            if u.id.is_empty() {
                out.push(format!("units[{n}] has an empty id"));
            }
            if self.units[..n].iter().any(|o| o.id == u.id) {
                out.push(format!("unit id '{}' is duplicated", u.id));
            }
            if !(u.inductance > 0.0) {
                out.push(format!("unit '{}': inductance must be > 0", u.id));
            }
            if !(u.resistance > 0.0) {
                out.push(format!("unit '{}': resistance must be > 0", u.id));
            }
            match (u.kind, u.capacitance) {
                (UnitKind::Sc, Some(c)) if c > 0.0 => {}
                (UnitKind::Sc, _) => {
                    out.push(format!("unit '{}': sc units need capacitance > 0", u.id))
                }
                (_, Some(_)) => out.push(format!(
                    "unit '{}': capacitance is only valid for sc units",
                    u.id
                )),
                (_, None) => {}
            }
        }
        if self.online_droop_sources().next().is_none() {
            out.push("at least one sg/bess unit must be online".to_string());
        } else if out.is_empty() {
            if let Err(e) = stability_guard(self) {
                out.push(e);
            }
        }
        out
    }
}

/// Constant-power-load small-signal condition at the droop operating point:
/// `R_eq < v_t² / P_load`.
pub fn stability_guard(params: &SystemParams) -> Result<(), String> {
    let r_eq = equivalent_droop(params).map_err(|e| e.to_string())?;
    let p = params.p_load();
    if p == 0.0 {
        return Ok(());
    }
    let v = droop_equilibrium(params, p).map_err(|e| e.to_string())?;
    let limit = v * v / p;
    if r_eq < limit {
        Ok(())
    } else {
        Err(format!(
            "droop resistance {r_eq} Ω violates the CPL stability limit {limit} Ω"
        ))
    }
}

/// Parallel combination of the droop resistances of online SG/BESS units.
pub fn equivalent_droop(params: &SystemParams) -> Result<f64, PlantError> {
    let conductance: f64 = params
        .online_droop_sources()
        .map(|u| 1.0 / u.resistance)
        .sum();
    if conductance == 0.0 {
        return Err(PlantError::NoOnlineSources);
    }
    Ok(1.0 / conductance)
}

/// High-voltage root of `v² − v_ref·v + R_eq·P = 0`.
pub fn droop_equilibrium(params: &SystemParams, p_load: f64) -> Result<f64, PlantError> {
    let r_eq = equivalent_droop(params)?;
    droop_root(params.v_ref, r_eq, p_load)
}

pub(crate) fn droop_root(v_ref: f64, r_eq: f64, p_load: f64) -> Result<f64, PlantError> {
    let disc = v_ref * v_ref - 4.0 * r_eq * p_load;
    if disc < 0.0 {
        return Err(PlantError::NoEquilibrium {
            p_load,
            p_max: v_ref * v_ref / (4.0 * r_eq),
        });
    }
    let root = 0.5 * (v_ref + disc.sqrt());
    // Refine with one Newton step against cancellation in the discriminant.
    let f = root * root - v_ref * root + r_eq * p_load;
    let df = 2.0 * root - v_ref;
    Ok(if df.abs() > 0.0 { root - f / df } else { root })
}

/// Secondary PI correction `δv = K_p·(v_ref − v_t) + K_i·σ`.
pub fn secondary_delta(state: &PlantState, params: &SystemParams) -> f64 {
    pi_correction(params, state.v_t, state.sigma)
}

#[inline]
fn pi_correction(params: &SystemParams, v_t: f64, sigma: f64) -> f64 {
    params.kp * (params.v_ref - v_t) + params.ki * sigma
}

/// ODE state. `currents` follows the unit order; `cap_voltages` holds one
/// entry per SC unit, in unit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub v_t: f64,
    pub currents: Vec<f64>,
    pub cap_voltages: Vec<f64>,
    pub sigma: f64,
}

impl PlantState {
    /// Operating point for the present loads and topology.
    ///
    /// With integral action the bus sits at `v_ref` and `σ` carries the
    /// droop offset; without it the bus settles on the droop curve whose
    /// effective resistance is `R_eq/(1 + K_p)`.
    pub fn equilibrium(params: &SystemParams) -> Result<Self, PlantError> {
        let r_eq = equivalent_droop(params)?;
        let p = params.p_load();
        let (v_t, delta, sigma) = if params.ki > 0.0 {
            let delta = r_eq * p / params.v_ref;
            (params.v_ref, delta, delta / params.ki)
        } else {
            let v = droop_root(params.v_ref, r_eq / (1.0 + params.kp), p)?;
            (v, params.kp * (params.v_ref - v), 0.0)
        };
        let currents = params
            .units
            .iter()
            .map(|u| {
                if u.online && u.kind.is_droop_source() {
                    (params.v_ref - v_t + delta) / u.resistance
                } else {
                    0.0
                }
            })
            .collect();
        let cap_voltages = params
            .units
            .iter()
            .filter(|u| u.kind == UnitKind::Sc)
            .map(|_| params.v_ref - v_t)
            .collect();
        Ok(Self {
            v_t,
            currents,
            cap_voltages,
            sigma,
        })
    }

    pub fn len(&self) -> usize {
        2 + self.currents.len() + self.cap_voltages.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Packs into `[v_t, i…, v_c…, σ]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.push(self.v_t);
        x.extend_from_slice(&self.currents);
        x.extend_from_slice(&self.cap_voltages);
        x.push(self.sigma);
        x
    }

    pub fn from_slice(x: &[f64], n_units: usize) -> Result<Self, PlantError> {
        if x.len() < n_units + 2 {
            return Err(PlantError::ShapeMismatch(format!(
                "{} values for {n_units} units",
                x.len()
            )));
        }
        let n_caps = x.len() - n_units - 2;
        Ok(Self {
            v_t: x[0],
            currents: x[1..1 + n_units].to_vec(),
            cap_voltages: x[1 + n_units..1 + n_units + n_caps].to_vec(),
            sigma: x[x.len() - 1],
        })
    }
}

/// Time derivative of a [`PlantState`], laid out like the state itself.
pub fn derivatives(state: &PlantState, params: &SystemParams) -> Result<PlantState, PlantError> {
    let layout = StateLayout::new(params);
    let x = state.to_vec();
    if x.len() != layout.dim() {
        return Err(PlantError::ShapeMismatch(format!(
            "state has {} entries, params need {}",
            x.len(),
            layout.dim()
        )));
    }
    let mut dx = vec![0.0; x.len()];
    layout.rhs(params, &x, &mut dx)?;
    PlantState::from_slice(&dx, params.units.len())
}

/// Index map of the flat state vector for one parameter set.
#[derive(Debug, Clone)]
pub struct StateLayout {
    n_units: usize,
    /// For each unit, the slot of its series-capacitor voltage (SC only).
    cap_slot: Vec<Option<usize>>,
    n_caps: usize,
}

impl StateLayout {
    pub fn new(params: &SystemParams) -> Self {
        let mut n_caps = 0;
        let cap_slot = params
            .units
            .iter()
            .map(|u| {
                (u.kind == UnitKind::Sc).then(|| {
                    n_caps += 1;
                    n_caps - 1
                })
            })
            .collect();
        Self {
            n_units: params.units.len(),
            cap_slot,
            n_caps,
        }
    }

    pub fn dim(&self) -> usize {
        2 + self.n_units + self.n_caps
    }

    pub fn sigma_index(&self) -> usize {
        self.dim() - 1
    }

    pub fn current_index(&self, unit: usize) -> usize {
        1 + unit
    }

    /// Right-hand side on flat slices; `params.units` must match the layout.
    pub fn rhs(&self, params: &SystemParams, x: &[f64], dx: &mut [f64]) -> Result<(), PlantError> {
        let v = x[0];
        let floor = params.floor_voltage();
        if !(v > floor) {
            return Err(PlantError::VoltageFloor { v_t: v, floor });
        }
        let sigma = x[self.sigma_index()];
        let delta = pi_correction(params, v, sigma);
        let cap_base = 1 + self.n_units;

        let mut injected = 0.0;
        for (k, unit) in params.units.iter().enumerate() {
            let i = x[1 + k];
            let slot = self.cap_slot[k];
            if !unit.online {
                dx[1 + k] = 0.0;
                if let Some(s) = slot {
                    dx[cap_base + s] = 0.0;
                }
                continue;
            }
            injected += i;
            let drive = match slot {
                Some(s) => {
                    let c = unit.capacitance.unwrap_or(f64::INFINITY);
                    dx[cap_base + s] = i / c;
                    params.v_ref - unit.resistance * i - x[cap_base + s] - v
                }
                None => params.v_ref - unit.resistance * i - v + delta,
            };
            dx[1 + k] = drive / unit.inductance;
        }
        dx[0] = (injected - params.p_cpl / v - params.p_ppl / v) / params.c_eq;
        dx[self.sigma_index()] = params.v_ref - v;
        Ok(())
    }
}
