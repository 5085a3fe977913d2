use super::MetricsError;

/// Running composite trapezoidal integral over a stream of `(t, f)` points.
///
/// Each new point moves the upper limit of integration forward, so after
/// `n` points `total()` equals the composite rule over the first `n`
/// abscissae. On a uniform grid this is the `Δx/2·[f₀ + 2Σf_k + f_N]` form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrapezoidAccumulator {
    last: Option<(f64, f64)>,
    total: f64,
}

impl TrapezoidAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a point and returns the integral so far. The first point only
    /// opens the interval.
    pub fn feed(&mut self, t: f64, f: f64) -> Result<f64, MetricsError> {
        if let Some((last_t, last_f)) = self.last {
            if !(t > last_t) {
                return Err(MetricsError::NonMonotoneTime { t, last_t });
            }
            self.total += 0.5 * (f + last_f) * (t - last_t);
        }
        self.last = Some((t, f));
        Ok(self.total)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn last_t(&self) -> Option<f64> {
        self.last.map(|(t, _)| t)
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}
