//! The three voltage resilience indices as streaming trackers.

use super::phase::Phase;
use super::trapezoid::TrapezoidAccumulator;
use super::MetricsError;

/// Lifetime area between the reference and the bus voltage, `∫|v_ref − v| dt`.
///
/// Samples within the deadband contribute a zero integrand, so the total
/// only climbs while a disturbance is visible and never resets.
#[derive(Debug, Clone, PartialEq)]
pub struct RvTracker {
    v_ref: f64,
    deadband: f64,
    acc: TrapezoidAccumulator,
}

impl RvTracker {
    /// `deadband` is a fraction of `v_ref`.
    pub fn new(v_ref: f64, deadband: f64) -> Self {
        Self {
            v_ref,
            deadband: deadband * v_ref,
            acc: TrapezoidAccumulator::new(),
        }
    }

    pub fn integrand(&self, v: f64) -> f64 {
        let dev = (self.v_ref - v).abs();
        if dev > self.deadband {
            dev
        } else {
            0.0
        }
    }

    pub fn update(&mut self, t: f64, v: f64) -> Result<f64, MetricsError> {
        let f = self.integrand(v);
        self.acc.feed(t, f)
    }

    pub fn value(&self) -> f64 {
        self.acc.total()
    }
}

/// Normalized degradation index.
///
/// While the detector reports `Degrading`, the deviation area
/// `S_total = Σ|Δv|·δt` grows sample by sample and
/// `V_DI = k·S_total / (v_ref·(t − t_d))`. Any other phase clears the
/// accumulators and outputs zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VdiTracker {
    v_ref: f64,
    k: f64,
    last_t: Option<f64>,
    t_d: Option<f64>,
    s_total: f64,
    denom: f64,
    value: f64,
}

impl VdiTracker {
    pub fn new(v_ref: f64, k: f64) -> Self {
        Self {
            v_ref,
            k,
            last_t: None,
            t_d: None,
            s_total: 0.0,
            denom: 0.0,
            value: 0.0,
        }
    }

    /// `phase` is the detector phase after it has seen this sample.
    pub fn update(&mut self, t: f64, v: f64, phase: Phase) -> f64 {
        let dt = self.last_t.map_or(0.0, |last| (t - last).abs());
        self.last_t = Some(t);
        if phase != Phase::Degrading {
            self.t_d = None;
            self.s_total = 0.0;
            self.denom = 0.0;
            self.value = 0.0;
            return 0.0;
        }
        let t_d = *self.t_d.get_or_insert(t);
        self.s_total += (v - self.v_ref).abs() * dt;
        self.denom = self.v_ref * (t - t_d).abs();
        self.value = if self.denom > 0.0 {
            self.k * self.s_total / self.denom
        } else {
            0.0
        };
        self.value
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn s_total(&self) -> f64 {
        self.s_total
    }

    pub fn denom(&self) -> f64 {
        self.denom
    }
}

/// `∫(v − V_pe)dt / ((v_ref − V_pe)·(t_pr − t_r))` from its parts.
pub fn restoration_efficiency(
    numerator: f64,
    v_ref: f64,
    v_pe: f64,
    t_r: f64,
    t_pr: f64,
) -> Result<f64, MetricsError> {
    let den = (v_ref - v_pe) * (t_pr - t_r);
    if t_pr <= t_r || den == 0.0 {
        return Err(MetricsError::DegenerateEvent { t_r, t_pr });
    }
    Ok(numerator / den)
}

/// Restoration efficiency over `[t_r, t]`, evaluated online.
#[derive(Debug, Clone, PartialEq)]
pub struct VreiTracker {
    v_ref: f64,
    window: Option<(f64, f64)>,
    acc: TrapezoidAccumulator,
    value: f64,
}

impl VreiTracker {
    pub fn new(v_ref: f64) -> Self {
        Self {
            v_ref,
            window: None,
            acc: TrapezoidAccumulator::new(),
            value: 0.0,
        }
    }

    /// Opens the restoration window. The first sample fed at or after
    /// `t_r` becomes the lower limit of the integral.
    pub fn start(&mut self, t_r: f64, v_pe: f64) {
        self.window = Some((t_r, v_pe));
        self.acc.reset();
        self.value = 0.0;
    }

    /// Integral of `v − V_pe` accumulated so far.
    pub fn numerator(&self) -> f64 {
        self.acc.total()
    }

    /// Running index while the window is open; `None` before `start`.
    pub fn update(&mut self, t: f64, v: f64) -> Result<Option<f64>, MetricsError> {
        let Some((t_r, v_pe)) = self.window else {
            return Ok(None);
        };
        if t < t_r {
            return Err(MetricsError::NonMonotoneTime { t, last_t: t_r });
        }
        self.acc.feed(t, v - v_pe)?;
        if t > t_r {
            self.value = restoration_efficiency(self.acc.total(), self.v_ref, v_pe, t_r, t)?;
        }
        Ok(Some(self.value))
    }

    /// Closes the window, reporting the index at `t_pr` from the numerator
    /// recorded at band entry. Instantaneous recovery reports 1.
    pub fn finish(&mut self, numerator_at_t_pr: f64, t_pr: f64) -> Option<f64> {
        let (t_r, v_pe) = self.window.take()?;
        let v = match restoration_efficiency(numerator_at_t_pr, self.v_ref, v_pe, t_r, t_pr) {
            Ok(v) => v,
            Err(MetricsError::DegenerateEvent { .. }) => 1.0,
            Err(_) => unreachable!("restoration_efficiency only reports degenerate windows"),
        };
        self.value = v;
        Some(v)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn clear(&mut self) {
        self.window = None;
        self.acc.reset();
        self.value = 0.0;
    }
}
