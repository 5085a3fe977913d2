//! Streaming voltage resilience metrics over a uniform-rate bus voltage
//! stream: the cumulative deviation area R_V, the degradation index V_DI and
//! the restoration efficiency V_REI, plus per-event reports.

mod indices;
mod phase;
mod trapezoid;

pub use indices::{restoration_efficiency, RvTracker, VdiTracker, VreiTracker};
pub use phase::{Phase, PhaseDetector, Transition};
pub use trapezoid::TrapezoidAccumulator;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("sample time {t} does not advance past {last_t}")]
    NonMonotoneTime { t: f64, last_t: f64 },
    #[error("degenerate restoration window: t_r = {t_r}, t_pr = {t_pr}")]
    DegenerateEvent { t_r: f64, t_pr: f64 },
    #[error("event starting at t = {} is still open", .0.t_d)]
    IncompleteEvent(Box<EventReport>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Fraction of the reference below which deviations are ignored.
    pub deadband: f64,
    /// Fraction of the reference that counts as restored.
    pub restore_band: f64,
    /// Seconds the voltage must stay in the restore band.
    pub hold: f64,
    /// V_DI scaling; `None` means `1/v_ref`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            deadband: 0.0005,
            restore_band: 0.001,
            hold: 0.05,
            k: None,
        }
    }
}

impl MetricConfig {
    pub fn k_for(&self, v_ref: f64) -> f64 {
        self.k.unwrap_or(1.0 / v_ref)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.deadband >= 0.0 && self.deadband.is_finite()) {
            out.push(format!(
                "metrics.deadband must be >= 0, got {}",
                self.deadband
            ));
        }
        if !(self.restore_band >= 0.0 && self.restore_band.is_finite()) {
            out.push(format!(
                "metrics.restore_band must be >= 0, got {}",
                self.restore_band
            ));
        }
        if !(self.hold >= 0.0 && self.hold.is_finite()) {
            out.push(format!("metrics.hold must be >= 0, got {}", self.hold));
        }
        if let Some(k) = self.k {
            if !(k > 0.0 && k.is_finite()) {
                out.push(format!("metrics.k must be > 0, got {k}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Undershoot,
    Overshoot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub t_d: f64,
    pub t_r: Option<f64>,
    pub t_pr: Option<f64>,
    /// Peak excursion; the running extremum when the event is unresolved.
    pub v_pe: f64,
    pub delta_rv: f64,
    pub vdi_peak: f64,
    pub vrei: Option<f64>,
    pub direction: Direction,
    pub resolved: bool,
}

impl EventReport {
    pub fn depth(&self, v_ref: f64) -> f64 {
        (v_ref - self.v_pe).abs()
    }

    pub fn recovery_time(&self) -> Option<f64> {
        Some(self.t_pr? - self.t_r?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub t: f64,
    pub rv: f64,
    pub vdi: f64,
    pub vrei: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
struct OpenEvent {
    t_d: f64,
    rv_at_t_d: f64,
    direction: Direction,
    vdi_peak: f64,
    t_r: Option<f64>,
    v_pe: Option<f64>,
    /// `(t, V_REI numerator, R_V)` at the latest restore-band entry.
    entry: Option<(f64, f64, f64)>,
}

/// One pass over `(t, v)` samples producing all metric columns and the
/// per-event reports.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricEngine {
    v_ref: f64,
    rv: RvTracker,
    detector: PhaseDetector,
    vdi: VdiTracker,
    vrei: VreiTracker,
    vrei_out: f64,
    prev: Option<(f64, f64, f64)>,
    open: Option<OpenEvent>,
    reports: Vec<EventReport>,
}

impl MetricEngine {
    pub fn new(v_ref: f64, config: &MetricConfig) -> Self {
        Self {
            v_ref,
            rv: RvTracker::new(v_ref, config.deadband),
            detector: PhaseDetector::new(v_ref, config.deadband, config.restore_band, config.hold),
            vdi: VdiTracker::new(v_ref, config.k_for(v_ref)),
            vrei: VreiTracker::new(v_ref),
            vrei_out: 0.0,
            prev: None,
            open: None,
            reports: Vec::new(),
        }
    }

    pub fn v_ref(&self) -> f64 {
        self.v_ref
    }

    pub fn phase(&self) -> Phase {
        self.detector.phase()
    }

    pub fn reports(&self) -> &[EventReport] {
        &self.reports
    }

    pub fn update(&mut self, t: f64, v: f64) -> Result<MetricSample, MetricsError> {
        let rv = self.rv.update(t, v)?;
        if self.detector.phase() == Phase::Recovering {
            self.vrei_out = self.vrei.update(t, v)?.unwrap_or(0.0);
        }
        for tr in self.detector.update(t, v) {
            match tr {
                Transition::Onset { t_d } => {
                    self.vrei.clear();
                    self.vrei_out = 0.0;
                    self.open = Some(OpenEvent {
                        t_d,
                        rv_at_t_d: rv,
                        direction: if v < self.v_ref {
                            Direction::Undershoot
                        } else {
                            Direction::Overshoot
                        },
                        vdi_peak: 0.0,
                        t_r: None,
                        v_pe: None,
                        entry: None,
                    });
                }
                Transition::Turnaround { t_r, v_pe } => {
                    let (pt, pv, prv) = self.prev.expect("turnaround follows a sample");
                    self.vrei.start(t_r, v_pe);
                    self.vrei.update(pt, pv)?;
                    self.vrei_out = self.vrei.update(t, v)?.unwrap_or(0.0);
                    let ev = self.open.as_mut().expect("turnaround inside an event");
                    ev.t_r = Some(t_r);
                    ev.v_pe = Some(v_pe);
                    if self.detector.band_entry() == Some(pt) {
                        ev.entry = Some((pt, 0.0, prv));
                    }
                }
                Transition::Restored { t_pr } => {
                    let ev = self.open.take().expect("restoration closes an event");
                    let (t_r, v_pe) = (
                        ev.t_r.expect("restored after turnaround"),
                        ev.v_pe.unwrap_or(v),
                    );
                    let (_, num, rv_pr) = match ev.entry {
                        Some(e) if e.0 == t_pr => e,
                        _ if t_pr == t => (t, self.vrei.numerator(), rv),
                        _ => (t_r, 0.0, self.prev.map_or(rv, |p| p.2)),
                    };
                    let vrei = self.vrei.finish(num, t_pr).unwrap_or(1.0);
                    self.vrei_out = vrei;
                    self.reports.push(EventReport {
                        t_d: ev.t_d,
                        t_r: Some(t_r),
                        t_pr: Some(t_pr),
                        v_pe,
                        delta_rv: rv_pr - ev.rv_at_t_d,
                        vdi_peak: ev.vdi_peak,
                        vrei: Some(vrei),
                        direction: ev.direction,
                        resolved: true,
                    });
                }
            }
        }
        if let (Some(e), Some(ev)) = (self.detector.band_entry(), self.open.as_mut()) {
            if e == t && ev.entry.map(|x| x.0) != Some(t) {
                ev.entry = Some((t, self.vrei.numerator(), rv));
            }
        }
        let phase = self.detector.phase();
        let vdi = self.vdi.update(t, v, phase);
        if let Some(ev) = self.open.as_mut() {
            ev.vdi_peak = ev.vdi_peak.max(vdi);
        }
        self.prev = Some((t, v, rv));
        Ok(MetricSample {
            t,
            rv,
            vdi,
            vrei: if phase == Phase::Degrading {
                0.0
            } else {
                self.vrei_out
            },
            phase,
        })
    }

    fn partial(&self, ev: &OpenEvent) -> EventReport {
        EventReport {
            t_d: ev.t_d,
            t_r: ev.t_r,
            t_pr: None,
            v_pe: ev.v_pe.unwrap_or_else(|| self.detector.extremum()),
            delta_rv: self.rv.value() - ev.rv_at_t_d,
            vdi_peak: ev.vdi_peak,
            vrei: None,
            direction: ev.direction,
            resolved: false,
        }
    }

    /// Latest event report. An event still open at this point comes back as
    /// `IncompleteEvent` carrying its partial fields; `None` means no event
    /// was seen.
    pub fn finalize_event(&self) -> Result<Option<EventReport>, MetricsError> {
        if let Some(ev) = &self.open {
            return Err(MetricsError::IncompleteEvent(Box::new(self.partial(ev))));
        }
        Ok(self.reports.last().cloned())
    }

    /// All reports, with a trailing unresolved one if the stream ended
    /// mid-event.
    pub fn finish(self) -> Vec<EventReport> {
        let mut out = self.reports.clone();
        if let Some(ev) = &self.open {
            out.push(self.partial(ev));
        }
        out
    }
}
