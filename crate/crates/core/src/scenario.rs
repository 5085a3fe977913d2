//! Scenario files: plant parameters, disturbances, integration grid and
//! metric settings in one TOML document.
//!
//! Omitted sections fall back to [`default_params`] and
//! [`MetricConfig::default`]; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::MetricConfig;
use crate::plant::{PlantState, SystemParams, UnitKind, UnitParams};
use crate::sim::{apply_event, Event, EventKind};

pub const DEFAULT_DT: f64 = 50e-6;

const REFERENCE_SCENARIO: &str = include_str!("../fixtures/reference_scenario.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{}", fmt_parse(.line, .message))]
    Parse {
        line: Option<usize>,
        message: String,
    },
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

fn fmt_parse(line: &Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("line {l}: {}", message.trim_end()),
        None => message.trim_end().to_string(),
    }
}

impl ScenarioError {
    fn parse(message: impl Into<String>) -> Self {
        Self::Parse {
            line: None,
            message: message.into(),
        }
    }

    fn from_toml(text: &str, err: toml::de::Error) -> Self {
        let line = err
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Self::Parse {
            line,
            message: err.message().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    /// Dotted path of the swept field, e.g. `system.c_eq` or `units[1].resistance`.
    pub path: String,
    pub values: Vec<f64>,
}

/// One sweep value with its scenario, or the reason it is invalid.
pub type SweepVariant = (f64, Result<Scenario, ScenarioError>);

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: SystemParams,
    pub events: Vec<Event>,
    pub horizon: f64,
    pub dt: f64,
    pub metrics: MetricConfig,
    pub decimate: u64,
    pub sweep: Option<Sweep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileScenario {
    horizon: f64,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "one")]
    decimate: u64,
    #[serde(default)]
    system: FileSystem,
    #[serde(default = "default_units")]
    units: Vec<FileUnit>,
    #[serde(default)]
    secondary: FileSecondary,
    #[serde(default)]
    metrics: MetricConfig,
    #[serde(default)]
    events: Vec<FileEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep: Option<FileSweep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileSystem {
    v_ref: f64,
    c_eq: f64,
    p_cpl: f64,
    p_ppl: f64,
    voltage_floor: f64,
}

impl Default for FileSystem {
    fn default() -> Self {
        let p = default_params();
        Self {
            v_ref: p.v_ref,
            c_eq: p.c_eq,
            p_cpl: p.p_cpl,
            p_ppl: p.p_ppl,
            voltage_floor: p.voltage_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileSecondary {
    kp: f64,
    ki: f64,
}

impl Default for FileSecondary {
    fn default() -> Self {
        let p = default_params();
        Self { kp: p.kp, ki: p.ki }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileUnit {
    id: String,
    kind: UnitKind,
    inductance: f64,
    resistance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capacitance: Option<f64>,
    #[serde(default = "yes")]
    online: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FileEventKind {
    LoadStep,
    PulseStart,
    PulseEnd,
    UnitTrip,
    UnitRestore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEvent {
    at: f64,
    kind: FileEventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSweep {
    path: String,
    values: Vec<f64>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

fn default_units() -> Vec<FileUnit> {
    default_params()
        .units
        .into_iter()
        .map(FileUnit::from)
        .collect()
}

impl From<UnitParams> for FileUnit {
    fn from(u: UnitParams) -> Self {
        Self {
            id: u.id,
            kind: u.kind,
            inductance: u.inductance,
            resistance: u.resistance,
            capacitance: u.capacitance,
            online: u.online,
        }
    }
}

fn unit(
    id: &str,
    kind: UnitKind,
    inductance: f64,
    resistance: f64,
    capacitance: Option<f64>,
) -> UnitParams {
    UnitParams {
        id: id.into(),
        kind,
        inductance,
        resistance,
        capacitance,
        online: true,
    }
}

/// Two generators, two batteries and two supercapacitor branches on a 6 kV
/// bus carrying 10 MW of constant-power load.
pub fn default_params() -> SystemParams {
    SystemParams {
        v_ref: 6000.0,
        c_eq: 0.02,
        units: vec![
            unit("sg_a", UnitKind::Sg, 1e-3, 0.15, None),
            unit("sg_b", UnitKind::Sg, 1e-3, 0.15, None),
            unit("b_a", UnitKind::Bess, 1e-3, 0.3, None),
            unit("b_b", UnitKind::Bess, 1e-3, 0.3, None),
            unit("sc_a", UnitKind::Sc, 50e-6, 0.2, Some(1.0)),
            unit("sc_b", UnitKind::Sc, 50e-6, 0.2, Some(1.0)),
        ],
        kp: 9.0,
        ki: 20.0,
        p_cpl: 10e6,
        p_ppl: 0.0,
        voltage_floor: 0.2,
    }
}

/// Load step from 10 to 15 MW at 6 s and loss of `sg_b` at 10 s.
pub fn reference_scenario() -> Scenario {
    parse_scenario(REFERENCE_SCENARIO).expect("shipped fixture is valid")
}

pub fn reference_scenario_text() -> &'static str {
    REFERENCE_SCENARIO
}

fn event_from_file(n: usize, e: &FileEvent, errs: &mut Vec<String>) -> Event {
    let need_power = |errs: &mut Vec<String>| {
        if e.power.is_none() {
            errs.push(format!("events[{n}]: {:?} needs `power`", e.kind));
        }
        e.power.unwrap_or(0.0)
    };
    let need_unit = |errs: &mut Vec<String>| {
        if e.unit.is_none() {
            errs.push(format!("events[{n}]: {:?} needs `unit`", e.kind));
        }
        e.unit.clone().unwrap_or_default()
    };
    let (uses_power, uses_unit) = match e.kind {
        FileEventKind::LoadStep | FileEventKind::PulseStart => (true, false),
        FileEventKind::PulseEnd => (false, false),
        FileEventKind::UnitTrip | FileEventKind::UnitRestore => (false, true),
    };
    if !uses_power && e.power.is_some() {
        errs.push(format!("events[{n}]: `power` is not used by {:?}", e.kind));
    }
    if !uses_unit && e.unit.is_some() {
        errs.push(format!("events[{n}]: `unit` is not used by {:?}", e.kind));
    }
    let kind = match e.kind {
        FileEventKind::LoadStep => EventKind::LoadStep {
            power: need_power(errs),
        },
        FileEventKind::PulseStart => EventKind::PulseStart {
            power: need_power(errs),
        },
        FileEventKind::PulseEnd => EventKind::PulseEnd,
        FileEventKind::UnitTrip => EventKind::UnitTrip {
            unit: need_unit(errs),
        },
        FileEventKind::UnitRestore => EventKind::UnitRestore {
            unit: need_unit(errs),
        },
    };
    Event { at: e.at, kind }
}

fn event_to_file(e: &Event) -> FileEvent {
    let (kind, power, unit) = match &e.kind {
        EventKind::LoadStep { power } => (FileEventKind::LoadStep, Some(*power), None),
        EventKind::PulseStart { power } => (FileEventKind::PulseStart, Some(*power), None),
        EventKind::PulseEnd => (FileEventKind::PulseEnd, None, None),
        EventKind::UnitTrip { unit } => (FileEventKind::UnitTrip, None, Some(unit.clone())),
        EventKind::UnitRestore { unit } => (FileEventKind::UnitRestore, None, Some(unit.clone())),
    };
    FileEvent {
        at: e.at,
        kind,
        power,
        unit,
    }
}

impl FileScenario {
    fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let mut errs = Vec::new();
        let events = self
            .events
            .iter()
            .enumerate()
            .map(|(n, e)| event_from_file(n, e, &mut errs))
            .collect();
        let scenario = Scenario {
            params: SystemParams {
                v_ref: self.system.v_ref,
                c_eq: self.system.c_eq,
                units: self
                    .units
                    .into_iter()
                    .map(|u| UnitParams {
                        id: u.id,
                        kind: u.kind,
                        inductance: u.inductance,
                        resistance: u.resistance,
                        capacitance: u.capacitance,
                        online: u.online,
                    })
                    .collect(),
                kp: self.secondary.kp,
                ki: self.secondary.ki,
                p_cpl: self.system.p_cpl,
                p_ppl: self.system.p_ppl,
                voltage_floor: self.system.voltage_floor,
            },
            events,
            horizon: self.horizon,
            dt: self.dt,
            metrics: self.metrics,
            decimate: self.decimate,
            sweep: self.sweep.map(|s| Sweep {
                path: s.path,
                values: s.values,
            }),
        };
        errs.extend(scenario.violations());
        if errs.is_empty() {
            Ok(scenario)
        } else {
            Err(ScenarioError::Validation(errs))
        }
    }
}

fn parse_file(text: &str) -> Result<FileScenario, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::from_toml(text, e))
}

fn from_value(value: toml::Value) -> Result<FileScenario, ScenarioError> {
    FileScenario::deserialize(value).map_err(|e| ScenarioError::parse(e.message().to_string()))
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    parse_file(text)?.into_scenario()
}

/// Parses a scenario and applies `path=value` overrides before validation.
pub fn parse_with_overrides(
    text: &str,
    overrides: &[(String, String)],
) -> Result<Scenario, ScenarioError> {
    let file = parse_file(text)?;
    if overrides.is_empty() {
        return file.into_scenario();
    }
    let mut value =
        toml::Value::try_from(&file).map_err(|e| ScenarioError::parse(e.to_string()))?;
    for (path, raw) in overrides {
        set_path(&mut value, path, parse_override(raw))?;
    }
    from_value(value)?.into_scenario()
}

/// Splits `key=value`.
pub fn split_override(s: &str) -> Result<(String, String), ScenarioError> {
    let (k, v) = s.split_once('=').ok_or_else(|| {
        ScenarioError::parse(format!("override '{s}' is not of the form key=value"))
    })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_override(raw: &str) -> toml::Value {
    raw.parse::<toml::Value>()
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

#[derive(Debug, PartialEq)]
enum Segment<'a> {
    Key(&'a str),
    Index(usize),
}

fn segments(path: &str) -> Result<Vec<Segment<'_>>, ScenarioError> {
    let bad = || ScenarioError::parse(format!("malformed path '{path}'"));
    let mut out = Vec::new();
    for part in path.split('.') {
        let (key, rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if let Ok(i) = key.parse::<usize>() {
            out.push(Segment::Index(i));
        } else if key.is_empty() {
            return Err(bad());
        } else {
            out.push(Segment::Key(key));
        }
        let mut rest = rest;
        while !rest.is_empty() {
            let close = rest.find(']').ok_or_else(bad)?;
            if !rest.starts_with('[') {
                return Err(bad());
            }
            out.push(Segment::Index(rest[1..close].parse().map_err(|_| bad())?));
            rest = &rest[close + 1..];
        }
    }
    Ok(out)
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), ScenarioError> {
    let segs = segments(path)?;
    let missing = || ScenarioError::parse(format!("override path '{path}' does not exist"));
    let mut cur = root;
    for (n, seg) in segs.iter().enumerate() {
        let last = n + 1 == segs.len();
        match seg {
            Segment::Key(k) => {
                let table = cur.as_table_mut().ok_or_else(missing)?;
                if last {
                    table.insert(k.to_string(), value);
                    return Ok(());
                }
                if !table.contains_key(*k) && *k == "sweep" {
                    table.insert(k.to_string(), toml::Value::Table(Default::default()));
                }
                cur = table.get_mut(*k).ok_or_else(missing)?;
            }
            Segment::Index(i) => {
                let arr = cur.as_array_mut().ok_or_else(missing)?;
                let slot = arr.get_mut(*i).ok_or_else(missing)?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                cur = slot;
            }
        }
    }
    Err(missing())
}

impl Scenario {
    /// Default plant with the given disturbances.
    pub fn with_events(events: Vec<Event>, horizon: f64) -> Self {
        Self {
            params: default_params(),
            events,
            horizon,
            dt: DEFAULT_DT,
            metrics: MetricConfig::default(),
            decimate: 1,
            sweep: None,
        }
    }

    fn to_file(&self) -> FileScenario {
        let p = &self.params;
        FileScenario {
            horizon: self.horizon,
            dt: self.dt,
            decimate: self.decimate,
            system: FileSystem {
                v_ref: p.v_ref,
                c_eq: p.c_eq,
                p_cpl: p.p_cpl,
                p_ppl: p.p_ppl,
                voltage_floor: p.voltage_floor,
            },
            units: p.units.iter().cloned().map(FileUnit::from).collect(),
            secondary: FileSecondary { kp: p.kp, ki: p.ki },
            metrics: self.metrics.clone(),
            events: self.events.iter().map(event_to_file).collect(),
            sweep: self.sweep.as_ref().map(|s| FileSweep {
                path: s.path.clone(),
                values: s.values.clone(),
            }),
        }
    }

    /// Complete document with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("scenario serializes")
    }

    /// SHA-256 of the canonical document, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Returns a copy with overrides applied and re-validated.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, ScenarioError> {
        parse_with_overrides(&self.to_toml(), overrides)
    }

    /// One validated scenario per sweep value, without the sweep itself.
    pub fn sweep_variants(&self) -> Result<Vec<SweepVariant>, ScenarioError> {
        let sweep = self.sweep.as_ref().ok_or_else(|| {
            ScenarioError::Validation(vec!["scenario has no [sweep] section".into()])
        })?;
        let mut base = self.clone();
        base.sweep = None;
        let text = base.to_toml();
        Ok(sweep
            .values
            .iter()
            .map(|&x| {
                let r = parse_with_overrides(&text, &[(sweep.path.clone(), format!("{x:?}"))]);
                (x, r)
            })
            .collect())
    }

    /// Events in the order the simulator applies them.
    pub fn sorted_events(&self) -> Vec<Event> {
        let mut ev = self.events.clone();
        ev.sort_by(|a, b| a.at.total_cmp(&b.at));
        ev
    }

    /// Every violated invariant, empty when the scenario is runnable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            out.push(format!("dt must be > 0 (got {})", self.dt));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            out.push(format!("horizon must be > 0 (got {})", self.horizon));
        }
        if self.decimate == 0 {
            out.push("decimate must be >= 1".to_string());
        }
        for (n, e) in self.events.iter().enumerate() {
            if !(e.at >= 0.0 && e.at.is_finite()) {
                out.push(format!("events[{n}].at must be >= 0 (got {})", e.at));
            } else if e.at > self.horizon {
                out.push(format!(
                    "events[{n}].at = {} lies beyond the horizon {}",
                    e.at, self.horizon
                ));
            }
        }
        out.extend(self.metrics.violations());
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                out.push("sweep.values must not be empty".to_string());
            }
            if segments(&s.path).is_err() {
                out.push(format!("sweep.path '{}' is malformed", s.path));
            }
        }
        let param_errs = self.params.violations();
        let plant_ok = param_errs.is_empty();
        out.extend(param_errs);
        if plant_ok {
            self.check_event_sequence(&mut out);
        }
        out
    }

    /// Dry run of the disturbances against the parameter set.
    fn check_event_sequence(&self, out: &mut Vec<String>) {
        let mut params = self.params.clone();
        let Ok(mut state) = PlantState::equilibrium(&params) else {
            out.push("initial operating point has no equilibrium".to_string());
            return;
        };
        for e in self.sorted_events() {
            if let Err(err) = apply_event(&mut params, &mut state, &e.kind) {
                out.push(format!("event at t = {}: {err}", e.at));
            }
        }
    }
}
