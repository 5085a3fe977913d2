//! Fixed-step RK4 integration with a timed event queue.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{PlantError, PlantState, StateLayout, SystemParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("t = {t} s: {source}")]
    Plant {
        t: f64,
        #[source]
        source: PlantError,
    },
    #[error("time step must be > 0 (got {0})")]
    BadStep(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    /// Replace the constant-power load (W).
    LoadStep {
        power: f64,
    },
    /// Switch on a pulsed-power load (W).
    PulseStart {
        power: f64,
    },
    PulseEnd,
    UnitTrip {
        unit: String,
    },
    UnitRestore {
        unit: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at: f64,
    pub kind: EventKind,
}

/// Applies one disturbance. Trips zero the branch current instantly.
pub fn apply_event(
    params: &mut SystemParams,
    state: &mut PlantState,
    kind: &EventKind,
) -> Result<(), SimError> {
    match kind {
        EventKind::LoadStep { power } => {
            if !(*power >= 0.0) {
                return Err(SimError::InvalidEvent(format!("negative load {power} W")));
            }
            params.p_cpl = *power;
        }
        EventKind::PulseStart { power } => {
            if !(*power >= 0.0) {
                return Err(SimError::InvalidEvent(format!("negative pulse {power} W")));
            }
            params.p_ppl = *power;
        }
        EventKind::PulseEnd => params.p_ppl = 0.0,
        EventKind::UnitTrip { unit } => {
            let k = params
                .unit_index(unit)
                .ok_or_else(|| SimError::InvalidEvent(format!("unknown unit '{unit}'")))?;
            if !params.units[k].online {
                return Err(SimError::InvalidEvent(format!(
                    "unit '{unit}' is already offline"
                )));
            }
            let sources_left = params
                .units
                .iter()
                .enumerate()
                .filter(|(j, u)| *j != k && u.online && u.kind.is_droop_source())
                .count();
            if params.units[k].kind.is_droop_source() && sources_left == 0 {
                return Err(SimError::InvalidEvent(format!(
                    "tripping '{unit}' leaves no online sg/bess unit"
                )));
            }
            params.units[k].online = false;
            state.currents[k] = 0.0;
        }
        EventKind::UnitRestore { unit } => {
            let k = params
                .unit_index(unit)
                .ok_or_else(|| SimError::InvalidEvent(format!("unknown unit '{unit}'")))?;
            if params.units[k].online {
                return Err(SimError::InvalidEvent(format!(
                    "unit '{unit}' is already online"
                )));
            }
            params.units[k].online = true;
            state.currents[k] = 0.0;
        }
    }
    Ok(())
}

/// Scratch buffers for classical RK4 on the flat state.
#[derive(Debug, Clone)]
struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
        }
    }

    fn step(
        &mut self,
        layout: &StateLayout,
        params: &SystemParams,
        x: &mut [f64],
        dt: f64,
    ) -> Result<(), PlantError> {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        layout.rhs(params, x, k1)?;
        for j in 0..x.len() {
            tmp[j] = x[j] + 0.5 * dt * k1[j];
        }
        layout.rhs(params, tmp, k2)?;
        for j in 0..x.len() {
            tmp[j] = x[j] + 0.5 * dt * k2[j];
        }
        layout.rhs(params, tmp, k3)?;
        for j in 0..x.len() {
            tmp[j] = x[j] + dt * k3[j];
        }
        layout.rhs(params, tmp, k4)?;
        for j in 0..x.len() {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        Ok(())
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn step(state: &PlantState, params: &SystemParams, dt: f64) -> Result<PlantState, PlantError> {
    let layout = StateLayout::new(params);
    let mut x = state.to_vec();
    if x.len() != layout.dim() {
        return Err(PlantError::ShapeMismatch(format!(
            "state has {} entries, params need {}",
            x.len(),
            layout.dim()
        )));
    }
    Rk4::new(x.len()).step(&layout, params, &mut x, dt)?;
    PlantState::from_slice(&x, params.units.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Grid index `k`; `t = k·dt`.
    pub step: u64,
    pub t: f64,
    pub v_t: f64,
    pub state: PlantState,
    pub p_cpl: f64,
    pub p_ppl: f64,
}

/// Number of grid points in `[0, horizon]` at spacing `dt`.
pub fn grid_len(horizon: f64, dt: f64) -> u64 {
    (horizon / dt + 1e-9).floor() as u64 + 1
}

/// First grid index at or after `at`.
fn event_index(at: f64, dt: f64) -> u64 {
    (at / dt - 1e-9).ceil().max(0.0) as u64
}

/// Streams samples `t_k = k·dt` for `k = 0..=floor(horizon/dt)`.
///
/// Events due at grid point `k` are applied before sample `k` is emitted and
/// before the step out of `t_k` is taken. After an error the iterator is
/// fused.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: SystemParams,
    layout: StateLayout,
    x: Vec<f64>,
    queue: Vec<(u64, Event)>,
    next_event: usize,
    dt: f64,
    last_step: u64,
    step: u64,
    rk: Rk4,
    failed: bool,
}

impl Simulator {
    pub fn new(
        params: SystemParams,
        initial: PlantState,
        mut events: Vec<Event>,
        horizon: f64,
        dt: f64,
    ) -> Result<Self, SimError> {
        if !(dt > 0.0) {
            return Err(SimError::BadStep(dt));
        }
        let layout = StateLayout::new(&params);
        let x = initial.to_vec();
        if x.len() != layout.dim() {
            return Err(SimError::Plant {
                t: 0.0,
                source: PlantError::ShapeMismatch("initial state".into()),
            });
        }
        // stable sort keeps declaration order for ties
        events.sort_by(|a, b| a.at.total_cmp(&b.at));
        let last_step = grid_len(horizon, dt) - 1;
        let queue = events
            .into_iter()
            .map(|e| (event_index(e.at, dt), e))
            .filter(|(k, _)| *k <= last_step)
            .collect();
        let dim = x.len();
        Ok(Self {
            params,
            layout,
            x,
            queue,
            next_event: 0,
            dt,
            last_step,
            step: 0,
            rk: Rk4::new(dim),
            failed: false,
        })
    }

    /// Starts from the operating point of `params`.
    pub fn from_equilibrium(
        params: SystemParams,
        events: Vec<Event>,
        horizon: f64,
        dt: f64,
    ) -> Result<Self, SimError> {
        let eq = PlantState::equilibrium(&params)
            .map_err(|source| SimError::Plant { t: 0.0, source })?;
        Self::new(params, eq, events, horizon, dt)
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn events_applied(&self) -> usize {
        self.next_event
    }

    pub fn events_scheduled(&self) -> usize {
        self.queue.len()
    }

    pub fn len(&self) -> u64 {
        self.last_step + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn time(&self, k: u64) -> f64 {
        k as f64 * self.dt
    }

    fn advance(&mut self) -> Result<Sample, SimError> {
        let k = self.step;
        let t = self.time(k);
        while let Some((at, ev)) = self.queue.get(self.next_event) {
            if *at > k {
                break;
            }
            let kind = ev.kind.clone();
            let mut state = PlantState::from_slice(&self.x, self.params.units.len())
                .map_err(|source| SimError::Plant { t, source })?;
            apply_event(&mut self.params, &mut state, &kind)?;
            self.x = state.to_vec();
            self.next_event += 1;
        }
        let state = PlantState::from_slice(&self.x, self.params.units.len())
            .map_err(|source| SimError::Plant { t, source })?;
        let sample = Sample {
            step: k,
            t,
            v_t: state.v_t,
            state,
            p_cpl: self.params.p_cpl,
            p_ppl: self.params.p_ppl,
        };
        if k < self.last_step {
            self.rk
                .step(&self.layout, &self.params, &mut self.x, self.dt)
                .map_err(|source| SimError::Plant { t, source })?;
        }
        self.step += 1;
        Ok(sample)
    }
}

impl Iterator for Simulator {
    type Item = Result<Sample, SimError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.step > self.last_step {
            return None;
        }
        let out = self.advance();
        if out.is_err() {
            self.failed = true;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_params;

    #[test]
    fn equilibrium_is_preserved_by_a_step() {
        let p = default_params();
        let s = PlantState::equilibrium(&p).unwrap();
        let n = step(&s, &p, 50e-6).unwrap();
        assert!((n.v_t - s.v_t).abs() <= 1e-12 * s.v_t);
        for (a, b) in n.currents.iter().zip(&s.currents) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_dynamics_without_load() {
        let mut p = default_params();
        p.p_cpl = 0.0;
        let s = PlantState::equilibrium(&p).unwrap();
        assert!(s.currents.iter().all(|&i| i == 0.0));
        let n = step(&s, &p, 50e-6).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn load_step_changes_params_only() {
        let mut p = default_params();
        let mut s = PlantState::equilibrium(&p).unwrap();
        let before = s.clone();
        apply_event(&mut p, &mut s, &EventKind::LoadStep { power: 15e6 }).unwrap();
        assert_eq!(p.p_cpl, 15e6);
        assert_eq!(s, before);
    }

    #[test]
    fn trip_zeroes_the_branch() {
        let mut p = default_params();
        let mut s = PlantState::equilibrium(&p).unwrap();
        let trip = EventKind::UnitTrip {
            unit: "sg_b".into(),
        };
        apply_event(&mut p, &mut s, &trip).unwrap();
        let k = p.unit_index("sg_b").unwrap();
        assert_eq!(s.currents[k], 0.0);
        assert!(!p.units[k].online);
        assert!(matches!(
            apply_event(&mut p, &mut s, &trip),
            Err(SimError::InvalidEvent(_))
        ));
        assert!(matches!(
            apply_event(
                &mut p,
                &mut s,
                &EventKind::UnitTrip {
                    unit: "nope".into()
                }
            ),
            Err(SimError::InvalidEvent(_))
        ));
    }

    #[test]
    fn restore_brings_unit_back_at_zero_current() {
        let mut p = default_params();
        let mut s = PlantState::equilibrium(&p).unwrap();
        apply_event(&mut p, &mut s, &EventKind::UnitTrip { unit: "b_a".into() }).unwrap();
        apply_event(
            &mut p,
            &mut s,
            &EventKind::UnitRestore { unit: "b_a".into() },
        )
        .unwrap();
        let k = p.unit_index("b_a").unwrap();
        assert!(p.units[k].online);
        assert_eq!(s.currents[k], 0.0);
    }

    #[test]
    fn last_source_cannot_trip() {
        let mut p = default_params();
        let mut s = PlantState::equilibrium(&p).unwrap();
        for id in ["sg_a", "sg_b", "b_a"] {
            apply_event(&mut p, &mut s, &EventKind::UnitTrip { unit: id.into() }).unwrap();
        }
        assert!(apply_event(&mut p, &mut s, &EventKind::UnitTrip { unit: "b_b".into() }).is_err());
    }

    #[test]
    fn pulses() {
        let mut p = default_params();
        let mut s = PlantState::equilibrium(&p).unwrap();
        apply_event(&mut p, &mut s, &EventKind::PulseStart { power: 2e6 }).unwrap();
        assert_eq!(p.p_ppl, 2e6);
        apply_event(&mut p, &mut s, &EventKind::PulseEnd).unwrap();
        assert_eq!(p.p_ppl, 0.0);
    }

    #[test]
    fn grid_is_exact() {
        let sim = Simulator::from_equilibrium(default_params(), vec![], 0.01, 50e-6).unwrap();
        let samples: Vec<_> = sim.map(Result::unwrap).collect();
        assert_eq!(samples.len(), 201);
        for (k, s) in samples.iter().enumerate() {
            assert_eq!(s.t, k as f64 * 50e-6);
        }
    }

    #[test]
    fn events_snap_to_next_grid_point_in_order() {
        let events = vec![
            Event {
                at: 0.00012,
                kind: EventKind::LoadStep { power: 12e6 },
            },
            Event {
                at: 0.0001,
                kind: EventKind::LoadStep { power: 11e6 },
            },
            Event {
                at: 0.00012,
                kind: EventKind::LoadStep { power: 13e6 },
            },
            Event {
                at: 1.0,
                kind: EventKind::PulseEnd,
            },
        ];
        let mut sim = Simulator::from_equilibrium(default_params(), events, 0.001, 50e-6).unwrap();
        assert_eq!(sim.events_scheduled(), 3);
        let samples: Vec<_> = sim.by_ref().map(Result::unwrap).collect();
        assert_eq!(samples[1].p_cpl, 10e6);
        assert_eq!(samples[2].p_cpl, 11e6);
        // 0.00012 s snaps up to the grid point at 0.00015 s; ties keep file order
        assert_eq!(samples[3].p_cpl, 13e6);
        assert_eq!(sim.events_applied(), 3);
    }

    #[test]
    fn floor_violation_reports_time() {
        let mut p = default_params();
        p.voltage_floor = 0.999;
        let events = vec![Event {
            at: 0.0,
            kind: EventKind::LoadStep { power: 40e6 },
        }];
        let sim = Simulator::from_equilibrium(p, events, 1.0, 50e-6).unwrap();
        let last = sim.last().unwrap();
        match last {
            Err(SimError::Plant {
                t,
                source: PlantError::VoltageFloor { .. },
            }) => assert!(t < 1.0),
            other => panic!("{other:?}"),
        }
    }
}
