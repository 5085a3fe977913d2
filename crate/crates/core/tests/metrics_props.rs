use proptest::prelude::*;

use mvdc_resilience::metrics::{
    MetricConfig, MetricEngine, MetricSample, Phase, TrapezoidAccumulator, VreiTracker,
};

const V_REF: f64 = 6000.0;

fn cfg() -> MetricConfig {
    MetricConfig {
        deadband: 5e-4,
        restore_band: 1e-3,
        hold: 0.01,
        k: None,
    }
}

/// One degradation found by scanning the whole trace.
#[derive(Debug, Clone, PartialEq)]
struct Segment {
    d: usize,
    r: Option<usize>,
    v_pe: f64,
    entry: Option<usize>,
}

/// Offline segmentation with index arithmetic over the full trace.
fn segment(t: &[f64], v: &[f64], c: &MetricConfig) -> Vec<Segment> {
    let db = c.deadband * V_REF;
    let band = c.restore_band * V_REF;
    let back = |i: usize| {
        i > 0 && ((v[i] < V_REF && v[i] > v[i - 1]) || (v[i] > V_REF && v[i] < v[i - 1]))
    };
    let away = |i: usize| {
        i > 0 && ((v[i] < V_REF && v[i] < v[i - 1]) || (v[i] > V_REF && v[i] > v[i - 1]))
    };
    let n = v.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if (v[i] - V_REF).abs() <= db || back(i) {
            i += 1;
            continue;
        }
        let d = i;
        let mut ext = d;
        let mut j = d + 1;
        while j < n && !back(j) {
            if away(j) {
                ext = j;
            }
            j += 1;
        }
        if j == n {
            out.push(Segment {
                d,
                r: None,
                v_pe: v[ext],
                entry: None,
            });
            break;
        }
        let r = j - 1;
        let inb = |k: usize| (v[k] - V_REF).abs() <= band;
        // candidate in-band runs start at r (if the extremum is in band) or later
        let mut start = if inb(r) { Some(r) } else { None };
        let mut k = j;
        let mut done = None;
        loop {
            if k >= n {
                break;
            }
            if inb(k) {
                let s = *start.get_or_insert(k);
                if t[k] - t[s] >= c.hold - 1e-9 {
                    done = Some((s, k));
                    break;
                }
            } else {
                start = None;
            }
            k += 1;
        }
        match done {
            Some((s, k)) => {
                out.push(Segment {
                    d,
                    r: Some(r),
                    v_pe: v[ext],
                    entry: Some(s),
                });
                i = k + 1;
            }
            None => {
                out.push(Segment {
                    d,
                    r: Some(r),
                    v_pe: v[ext],
                    entry: None,
                });
                break;
            }
        }
    }
    out
}

fn batch_trapezoid(t: &[f64], f: &[f64]) -> f64 {
    (1..t.len())
        .map(|k| 0.5 * (f[k] + f[k - 1]) * (t[k] - t[k - 1]))
        .sum()
}

fn stream(
    t: &[f64],
    v: &[f64],
    c: &MetricConfig,
) -> (
    Vec<MetricSample>,
    Vec<mvdc_resilience::metrics::EventReport>,
) {
    let mut eng = MetricEngine::new(V_REF, c);
    let rows = t
        .iter()
        .zip(v)
        .map(|(&t, &v)| eng.update(t, v).unwrap())
        .collect();
    (rows, eng.finish())
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-300
}

/// Smooth traces: dips and overshoots with first-order recovery plus ripple.
fn smooth_trace() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let event = (0.0f64..1.0, -150.0f64..150.0, 0.005f64..0.1);
    (
        prop::collection::vec(event, 0..4),
        0.0f64..2.0,
        200usize..3000,
    )
        .prop_map(|(events, ripple, n)| {
            let dt = 1.0 / 1000.0;
            let t: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
            let v = t
                .iter()
                .map(|&t| {
                    let mut v = V_REF + ripple * (2000.0 * t).sin();
                    for &(at, amp, tau) in &events {
                        if t >= at {
                            let x = (t - at) / tau;
                            v += amp * x * (-x).exp() * std::f64::consts::E;
                        }
                    }
                    v
                })
                .collect();
            (t, v)
        })
}

/// Rough random walks around the reference.
fn rough_trace() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-4.0f64..4.0, 2..1500), 1e-4f64..1e-2).prop_map(|(steps, dt)| {
        let t: Vec<f64> = (0..steps.len()).map(|k| k as f64 * dt).collect();
        let mut v = Vec::with_capacity(steps.len());
        let mut x = V_REF;
        for s in steps {
            x += s - 0.05 * (x - V_REF);
            v.push(x);
        }
        (t, v)
    })
}

fn any_trace() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop_oneof![smooth_trace(), rough_trace()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rv_equals_batch_trapezoid((t, v) in any_trace()) {
        let c = cfg();
        let (rows, _) = stream(&t, &v, &c);
        let f: Vec<f64> = v
            .iter()
            .map(|v| { let d = (v - V_REF).abs(); if d > c.deadband * V_REF { d } else { 0.0 } })
            .collect();
        for k in [0, t.len() / 3, t.len() / 2, t.len() - 1] {
            let b = batch_trapezoid(&t[..=k], &f[..=k]);
            prop_assert!(close(rows[k].rv, b, 1e-12), "k={k}: {} vs {b}", rows[k].rv);
        }
    }

    #[test]
    fn phases_and_vdi_equal_batch((t, v) in any_trace()) {
        let c = cfg();
        let (rows, reports) = stream(&t, &v, &c);
        let segs = segment(&t, &v, &c);
        prop_assert_eq!(reports.len(), segs.len());
        let k = c.k_for(V_REF);
        for (seg, rep) in segs.iter().zip(&reports) {
            prop_assert_eq!(rep.t_d, t[seg.d]);
            prop_assert_eq!(rep.t_r, seg.r.map(|r| t[r]));
            prop_assert_eq!(rep.v_pe, seg.v_pe);
            prop_assert_eq!(rep.t_pr, seg.entry.map(|e| t[e]));
            let end = seg.r.unwrap_or(t.len() - 1);
            // V_DI over the degradation window: rectangle sum opened at t_d
            let mut s = 0.0;
            let mut peak: f64 = 0.0;
            for j in seg.d..=end {
                prop_assert_eq!(rows[j].phase, Phase::Degrading);
                if j > 0 {
                    s += (v[j] - V_REF).abs() * (t[j] - t[j - 1]);
                }
                let den = V_REF * (t[j] - t[seg.d]);
                let expect = if den > 0.0 { k * s / den } else { 0.0 };
                prop_assert!(close(rows[j].vdi, expect, 1e-12), "j={j}: {} vs {expect}", rows[j].vdi);
                peak = peak.max(expect);
            }
            prop_assert!(close(rep.vdi_peak, peak, 1e-12));
            if let (Some(r), Some(e)) = (seg.r, seg.entry) {
                let f: Vec<f64> = v[r..=e].iter().map(|v| v - seg.v_pe).collect();
                let num = batch_trapezoid(&t[r..=e], &f);
                let expect = if e == r { 1.0 } else { num / ((V_REF - seg.v_pe) * (t[e] - t[r])) };
                prop_assert!(close(rep.vrei.unwrap(), expect, 1e-12), "{:?} vs {expect}", rep.vrei);
                let rv_f: Vec<f64> = v[seg.d..=e]
                    .iter()
                    .map(|v| { let d = (v - V_REF).abs(); if d > c.deadband * V_REF { d } else { 0.0 } })
                    .collect();
                let drv = batch_trapezoid(&t[seg.d..=e], &rv_f);
                prop_assert!((rep.delta_rv - drv).abs() <= 1e-9 * drv.max(1.0), "{} vs {drv}", rep.delta_rv);
            }
        }
    }

    #[test]
    fn vdi_is_zero_outside_degradation((t, v) in any_trace()) {
        let (rows, _) = stream(&t, &v, &cfg());
        for r in rows.iter().filter(|r| r.phase != Phase::Degrading) {
            prop_assert_eq!(r.vdi, 0.0);
        }
    }

    #[test]
    fn reflection_symmetry((t, v) in any_trace()) {
        let c = cfg();
        let mirrored: Vec<f64> = v.iter().map(|v| 2.0 * V_REF - v).collect();
        let (a, ra) = stream(&t, &v, &c);
        let (b, rb) = stream(&t, &mirrored, &c);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(close(x.rv, y.rv, 1e-12));
            prop_assert!(close(x.vdi, y.vdi, 1e-12));
            prop_assert!(close(x.vrei, y.vrei, 1e-12) || (x.vrei - y.vrei).abs() < 1e-12);
            prop_assert_eq!(x.phase, y.phase);
        }
        prop_assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(&rb) {
            prop_assert_eq!((x.t_d, x.t_r, x.t_pr), (y.t_d, y.t_r, y.t_pr));
            prop_assert!(((V_REF - x.v_pe) + (V_REF - y.v_pe)).abs() < 1e-9);
        }
    }

    #[test]
    fn rv_is_monotone_and_flat_inside_deadband((t, v) in any_trace()) {
        let c = cfg();
        let (rows, _) = stream(&t, &v, &c);
        let db = c.deadband * V_REF;
        for k in 1..rows.len() {
            prop_assert!(rows[k].rv >= rows[k - 1].rv);
            if (v[k] - V_REF).abs() <= db && (v[k - 1] - V_REF).abs() <= db {
                prop_assert_eq!(rows[k].rv, rows[k - 1].rv);
            }
        }
    }

    #[test]
    fn chaining_blocks_equals_one_pass((t, v) in any_trace(), cut in 0.0f64..1.0) {
        let c = cfg();
        let split = ((t.len() as f64) * cut) as usize;
        let mut whole = MetricEngine::new(V_REF, &c);
        let a: Vec<_> = t.iter().zip(&v).map(|(&t, &v)| whole.update(t, v).unwrap()).collect();
        let mut first = MetricEngine::new(V_REF, &c);
        let mut b: Vec<_> = t[..split].iter().zip(&v[..split]).map(|(&t, &v)| first.update(t, v).unwrap()).collect();
        let mut second = first.clone();
        b.extend(t[split..].iter().zip(&v[split..]).map(|(&t, &v)| second.update(t, v).unwrap()));
        prop_assert_eq!(a, b);
        prop_assert_eq!(whole.finish(), second.finish());
    }

    #[test]
    fn reports_are_ordered((t, v) in any_trace()) {
        let (_, reports) = stream(&t, &v, &cfg());
        for r in &reports {
            prop_assert!(r.delta_rv >= 0.0);
            if let Some(t_r) = r.t_r {
                prop_assert!(r.t_d <= t_r);
                if let Some(t_pr) = r.t_pr {
                    prop_assert!(t_r <= t_pr);
                }
            }
            prop_assert_eq!(r.vrei.is_some(), r.t_pr.is_some());
        }
    }

    #[test]
    fn vrei_in_unit_interval_for_monotone_recovery(
        depth in 1.0f64..500.0,
        up in any::<bool>(),
        knots in prop::collection::vec(0.0f64..1.0, 1..20),
    ) {
        let v_pe = if up { V_REF + depth } else { V_REF - depth };
        let mut levels: Vec<f64> = knots;
        levels.sort_by(f64::total_cmp);
        levels.insert(0, 0.0);
        levels.push(1.0);
        let mut tr = VreiTracker::new(V_REF);
        tr.start(0.0, v_pe);
        let dt = 1e-3;
        let mut t = 0.0;
        for (k, f) in levels.iter().enumerate() {
            t = k as f64 * dt;
            tr.update(t, v_pe + f * (V_REF - v_pe)).unwrap();
        }
        let x = tr.finish(tr.numerator(), t).unwrap();
        prop_assert!((0.0..=1.0).contains(&x), "{x}");
    }

    #[test]
    fn trapezoid_streaming_matches_uniform_formula(
        f in prop::collection::vec(-1e3f64..1e3, 2..3000),
        dx in 1e-5f64..1.0,
    ) {
        let n = f.len() - 1;
        let inner: f64 = f[1..n].iter().sum();
        let batch = dx / 2.0 * (f[0] + 2.0 * inner + f[n]);
        let mut acc = TrapezoidAccumulator::new();
        for (k, &y) in f.iter().enumerate() {
            acc.feed(k as f64 * dx, y).unwrap();
        }
        let scale: f64 = dx * f.iter().map(|x| x.abs()).sum::<f64>();
        prop_assert!((acc.total() - batch).abs() <= 1e-12 * scale.max(1e-300));
    }
}

#[test]
fn vdi_ramp_example() {
    // 6000 → 5940 V linearly over 0.1 s, k = 1/6000
    let c = MetricConfig {
        deadband: 0.0,
        ..MetricConfig::default()
    };
    let dt = 50e-6;
    let mut eng = MetricEngine::new(V_REF, &c);
    let mut last = 0.0;
    for k in 0..=2000 {
        let t = k as f64 * dt;
        last = eng.update(t, V_REF - 600.0 * t).unwrap().vdi;
    }
    // S ≈ 3 V·s and Denom ≈ 600 V·s at the end of the window
    let expected = 3.0 / (600.0 * 6000.0);
    assert!(
        (last - expected).abs() / expected < 2e-3,
        "{last} vs {expected}"
    );
}
