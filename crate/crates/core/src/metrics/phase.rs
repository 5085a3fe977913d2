//! Event phase detection on the bus voltage.
//!
//! ```text
//!  Steady ──|Δv| > deadband, not moving back──▶ Degrading   (t_d)
//!  Degrading ──first sample moving back──────▶ Recovering  (t_r, V_pe)
//!  Recovering ──|Δv| ≤ band for `hold`───────▶ Steady      (t_pr = band entry)
//! ```

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Steady = 0,
    Degrading = 1,
    Recovering = 2,
}

impl Phase {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transition {
    Onset { t_d: f64 },
    Turnaround { t_r: f64, v_pe: f64 },
    Restored { t_pr: f64 },
}

/// Absolute comparison slack for the hold timer, in seconds.
const HOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDetector {
    v_ref: f64,
    deadband: f64,
    band: f64,
    hold: f64,
    phase: Phase,
    prev: Option<(f64, f64)>,
    t_d: Option<f64>,
    t_r: Option<f64>,
    t_pr: Option<f64>,
    v_pe: Option<f64>,
    extremum: f64,
    band_entry: Option<f64>,
}

impl PhaseDetector {
    /// `deadband` and `band` are fractions of `v_ref`; `hold` is in seconds.
    pub fn new(v_ref: f64, deadband: f64, band: f64, hold: f64) -> Self {
        Self {
            v_ref,
            deadband: deadband * v_ref,
            band: band * v_ref,
            hold,
            phase: Phase::Steady,
            prev: None,
            t_d: None,
            t_r: None,
            t_pr: None,
            v_pe: None,
            extremum: v_ref,
            band_entry: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn t_d(&self) -> Option<f64> {
        self.t_d
    }

    pub fn t_r(&self) -> Option<f64> {
        self.t_r
    }

    pub fn t_pr(&self) -> Option<f64> {
        self.t_pr
    }

    pub fn v_pe(&self) -> Option<f64> {
        self.v_pe
    }

    /// Running extremum of the current degradation.
    pub fn extremum(&self) -> f64 {
        self.extremum
    }

    /// Start of the current in-band stretch while recovering.
    pub fn band_entry(&self) -> Option<f64> {
        self.band_entry
    }

    /// Sign-aware slope test: rising while below the reference or falling
    /// while above it.
    fn moving_back(&self, v: f64, prev_v: f64) -> bool {
        (v < self.v_ref && v > prev_v) || (v > self.v_ref && v < prev_v)
    }

    fn moving_away(&self, v: f64, prev_v: f64) -> bool {
        (v < self.v_ref && v < prev_v) || (v > self.v_ref && v > prev_v)
    }

    /// Feeds one sample. At most two transitions fire per sample (a
    /// turnaround whose extremum is already in the band can complete with a
    /// zero hold).
    pub fn update(&mut self, t: f64, v: f64) -> Vec<Transition> {
        let dev = (v - self.v_ref).abs();
        let prev = self.prev.replace((t, v));
        match self.phase {
            Phase::Steady => {
                // A restoration tail still outside the deadband does not
                // re-trigger while it keeps closing in on the reference.
                let returning = prev.is_some_and(|(_, pv)| self.moving_back(v, pv));
                if dev > self.deadband && !returning {
                    self.phase = Phase::Degrading;
                    self.t_d = Some(t);
                    self.t_r = None;
                    self.t_pr = None;
                    self.v_pe = None;
                    self.band_entry = None;
                    self.extremum = v;
                    return vec![Transition::Onset { t_d: t }];
                }
                Vec::new()
            }
            Phase::Degrading => {
                let (pt, pv) = prev.expect("degrading implies a previous sample");
                if self.moving_back(v, pv) {
                    self.phase = Phase::Recovering;
                    self.t_r = Some(pt);
                    self.v_pe = Some(self.extremum);
                    self.band_entry =
                        ((self.extremum - self.v_ref).abs() <= self.band).then_some(pt);
                    let mut out = vec![Transition::Turnaround {
                        t_r: pt,
                        v_pe: self.extremum,
                    }];
                    out.extend(self.recovering(t, dev));
                    return out;
                }
                if self.moving_away(v, pv) {
                    self.extremum = v;
                }
                Vec::new()
            }
            Phase::Recovering => self.recovering(t, dev).into_iter().collect(),
        }
    }

    fn recovering(&mut self, t: f64, dev: f64) -> Option<Transition> {
        if dev > self.band {
            self.band_entry = None;
            return None;
        }
        let entry = *self.band_entry.get_or_insert(t);
        if t - entry >= self.hold - HOLD_SLACK {
            self.phase = Phase::Steady;
            self.t_pr = Some(entry);
            self.band_entry = None;
            return Some(Transition::Restored { t_pr: entry });
        }
        None
    }
}
