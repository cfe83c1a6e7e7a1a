//! Microgrid scenario description: storage devices, dispatchable loads,
//! grid limits and the exogenous series they reference.
//!
//! Scenarios are written in a TOML file with sections `[time]`, `[grid]`,
//! `[prices]`, `[site]`, `[[storage]]`, `[[type1_load]]` and
//! `[[type2_load]]`. Series-valued fields accept an inline constant, an
//! inline array of per-step values, or a relative path to a series file
//! (see [`crate::timeseries::load_series`]). Wall-clock targets are
//! resolved to step-boundary indices while parsing, so the rest of the
//! pipeline is purely index-based.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::timeseries::{constant_series, load_series, Series, SeriesError, TimeGrid, Unit};

/// Inclusive range of step indices during which a load may run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepWindow {
    pub first: usize,
    pub last: usize,
}

impl StepWindow {
    pub fn whole_horizon(grid: &TimeGrid) -> Self {
        StepWindow { first: 0, last: grid.num_steps - 1 }
    }

    pub fn len(&self) -> usize {
        if self.last < self.first {
            0
        } else {
            self.last - self.first + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.first && t <= self.last
    }
}

/// A battery-like device (stationary storage or EV). SoC is tracked in
/// percent of rated capacity; powers in kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    pub name: String,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub capacity_kwh: f64,
    pub soc_min_pct: f64,
    pub soc_max_pct: f64,
    pub soc_initial_pct: f64,
    pub soc_target_pct: f64,
    /// Step-boundary index at which `soc_target_pct` must be reached.
    pub target_boundary: usize,
    pub charge_max_kw: f64,
    pub discharge_max_kw: f64,
    /// When false, the device may never discharge (vehicle-to-grid off).
    pub discharge_enabled: bool,
    /// Binary per-step series; 0 marks steps where the device is unplugged.
    pub availability: Series,
}

impl StorageSpec {
    /// SoC percent gained in one step of charging at `power_kw`.
    pub fn soc_gain_per_step(&self, power_kw: f64, delta_t_hours: f64) -> f64 {
        self.charge_efficiency * power_kw * 100.0 * delta_t_hours / self.capacity_kwh
    }
}

/// Interruptible appliance: must accumulate `duration_steps` on-steps inside
/// its window, in any pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type1LoadSpec {
    pub name: String,
    pub power_kw: f64,
    pub duration_steps: usize,
    pub window: StepWindow,
}

/// Non-interruptible appliance: must run one contiguous block of exactly
/// `duration_steps` steps inside its window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type2LoadSpec {
    pub name: String,
    pub power_kw: f64,
    pub duration_steps: usize,
    pub window: StepWindow,
}

impl Type1LoadSpec {
    /// Total energy implied by the duration, kWh.
    pub fn energy_kwh(&self, delta_t_hours: f64) -> f64 {
        self.power_kw * self.duration_steps as f64 * delta_t_hours
    }
}

impl Type2LoadSpec {
    pub fn energy_kwh(&self, delta_t_hours: f64) -> f64 {
        self.power_kw * self.duration_steps as f64 * delta_t_hours
    }
}

/// Grid-connection limits and exchange flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub import_max_kw: Series,
    pub export_max_kw: Series,
    pub export_enabled: bool,
    /// When true the model adds binaries forbidding simultaneous import and
    /// export. Off by default: with sell price <= buy price netting is
    /// already optimal.
    pub exclusive_exchange: bool,
}

/// A fully resolved microgrid description. All series share the same grid
/// and all clock labels have been converted to step indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub time: TimeGrid,
    pub grid_spec: GridSpec,
    pub import_price: Series,
    pub export_price: Series,
    pub pv: Series,
    pub base_load: Series,
    pub storages: Vec<StorageSpec>,
    pub type1_loads: Vec<Type1LoadSpec>,
    pub type2_loads: Vec<Type2LoadSpec>,
}

impl Scenario {
    pub fn num_steps(&self) -> usize {
        self.time.num_steps
    }

    /// Sum of dispatchable rated powers whose window covers step `t`.
    pub fn dispatchable_power_in_window(&self, t: usize) -> f64 {
        let mut total = 0.0;
        for l in &self.type1_loads {
            if l.window.contains(t) {
                total += l.power_kw;
            }
        }
        for l in &self.type2_loads {
            if l.window.contains(t) {
                total += l.power_kw;
            }
        }
        total
    }
}

// ---------------------------------------------------------------------------
// Violations (feasibility pre-screen)
// ---------------------------------------------------------------------------

/// Machine-readable violation codes emitted by [`validate_scenario`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    SocBoundsInverted,
    SocInitOutOfRange,
    TargetExceedsMax,
    TargetUnreachable,
    DurationExceedsWindow,
    RunDoesNotFit,
    WindowOutOfHorizon,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationCode::SocBoundsInverted => "SOC_BOUNDS_INVERTED",
            ViolationCode::SocInitOutOfRange => "SOC_INIT_OUT_OF_RANGE",
            ViolationCode::TargetExceedsMax => "TARGET_EXCEEDS_MAX",
            ViolationCode::TargetUnreachable => "TARGET_UNREACHABLE",
            ViolationCode::DurationExceedsWindow => "DURATION_EXCEEDS_WINDOW",
            ViolationCode::RunDoesNotFit => "RUN_DOES_NOT_FIT",
            ViolationCode::WindowOutOfHorizon => "WINDOW_OUT_OF_HORIZON",
        };
        f.write_str(s)
    }
}

/// One validation finding. Violations are data, not errors: a scenario with
/// violations can still be handed to the solver, which is the final word on
/// feasibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub device: String,
    pub code: ViolationCode,
    pub message: String,
}

/// Checks structural invariants plus per-device SoC-target reachability.
///
/// Reachability assumes charging at full power during every available step
/// before the target boundary, using the same SoC update arithmetic the
/// model encodes. The result is deterministic: devices in declaration
/// order, then codes in definition order.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let horizon = s.time.num_steps;
    for sto in &s.storages {
        let mut dev = Vec::new();
        if sto.soc_min_pct > sto.soc_max_pct {
            dev.push(Violation {
                device: sto.name.clone(),
                code: ViolationCode::SocBoundsInverted,
                message: format!(
                    "soc_min {} % exceeds soc_max {} %",
                    sto.soc_min_pct, sto.soc_max_pct
                ),
            });
        }
        if sto.soc_initial_pct < sto.soc_min_pct || sto.soc_initial_pct > sto.soc_max_pct {
            dev.push(Violation {
                device: sto.name.clone(),
                code: ViolationCode::SocInitOutOfRange,
                message: format!(
                    "initial SoC {} % outside [{}, {}] %",
                    sto.soc_initial_pct, sto.soc_min_pct, sto.soc_max_pct
                ),
            });
        }
        if sto.soc_target_pct > sto.soc_max_pct {
            dev.push(Violation {
                device: sto.name.clone(),
                code: ViolationCode::TargetExceedsMax,
                message: format!(
                    "target SoC {} % exceeds max SoC {} %",
                    sto.soc_target_pct, sto.soc_max_pct
                ),
            });
        }
        // Best-case SoC at the target boundary: charge at full power during
        // every available step before it.
        let reachable_gain: f64 = (0..sto.target_boundary.min(horizon))
            .map(|t| {
                sto.availability.values[t]
                    * sto.soc_gain_per_step(sto.charge_max_kw, s.time.delta_t_hours)
            })
            .sum();
        if sto.soc_initial_pct + reachable_gain + 1e-9 < sto.soc_target_pct {
            dev.push(Violation {
                device: sto.name.clone(),
                code: ViolationCode::TargetUnreachable,
                message: format!(
                    "target SoC {} % by boundary {} is unreachable: best case is {:.3} %",
                    sto.soc_target_pct,
                    sto.target_boundary,
                    sto.soc_initial_pct + reachable_gain
                ),
            });
        }
        dev.sort_by_key(|v| v.code);
        out.extend(dev);
    }
    for l in &s.type1_loads {
        let mut dev = Vec::new();
        if l.window.last >= horizon {
            dev.push(window_violation(&l.name, l.window, horizon));
        }
        if l.duration_steps > l.window.len() {
            dev.push(Violation {
                device: l.name.clone(),
                code: ViolationCode::DurationExceedsWindow,
                message: format!(
                    "duration {} steps exceeds window of {} steps",
                    l.duration_steps,
                    l.window.len()
                ),
            });
        }
        dev.sort_by_key(|v| v.code);
        out.extend(dev);
    }
    for l in &s.type2_loads {
        let mut dev = Vec::new();
        if l.window.last >= horizon {
            dev.push(window_violation(&l.name, l.window, horizon));
        }
        if l.duration_steps > l.window.len() {
            dev.push(Violation {
                device: l.name.clone(),
                code: ViolationCode::RunDoesNotFit,
                message: format!(
                    "contiguous run of {} steps cannot fit in window of {} steps",
                    l.duration_steps,
                    l.window.len()
                ),
            });
        }
        dev.sort_by_key(|v| v.code);
        out.extend(dev);
    }
    out
}

fn window_violation(name: &str, window: StepWindow, horizon: usize) -> Violation {
    Violation {
        device: name.to_string(),
        code: ViolationCode::WindowOutOfHorizon,
        message: format!(
            "window [{}, {}] extends past the last step {}",
            window.first,
            window.last,
            horizon - 1
        ),
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("unknown series reference `{path}`: {reason}")]
    UnknownSeriesRef { path: String, reason: String },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("i/o error reading `{path}`: {reason}")]
    Io { path: String, reason: String },
}

/// A series-valued field in the scenario file: inline constant, inline
/// per-step array, or relative path to a series file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SeriesSource {
    Constant(f64),
    Path(String),
    Values(Vec<f64>),
}

impl SeriesSource {
    fn resolve(
        &self,
        name: &str,
        unit: Unit,
        grid: &TimeGrid,
        base_dir: &Path,
    ) -> Result<Series, ScenarioError> {
        match self {
            SeriesSource::Constant(v) => Ok(constant_series(name, *v, unit, grid)?),
            SeriesSource::Values(vs) => Ok(Series::new(name, unit, vs.clone(), grid)?),
            SeriesSource::Path(rel) => {
                let path = base_dir.join(rel);
                let file = File::open(&path).map_err(|e| ScenarioError::UnknownSeriesRef {
                    path: rel.clone(),
                    reason: e.to_string(),
                })?;
                Ok(load_series(BufReader::new(file), name, unit, grid)?)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeFile {
    delta_t_hours: f64,
    num_steps: usize,
    start: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    import_max_kw: SeriesSource,
    export_max_kw: SeriesSource,
    #[serde(default = "default_true")]
    export_enabled: bool,
    #[serde(default)]
    exclusive_exchange: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PricesFile {
    import: SeriesSource,
    export: SeriesSource,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteFile {
    pv: SeriesSource,
    base_load: SeriesSource,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StorageFile {
    name: String,
    charge_efficiency: f64,
    discharge_efficiency: f64,
    capacity_kwh: f64,
    soc_min_pct: f64,
    soc_max_pct: f64,
    soc_initial_pct: f64,
    soc_target_pct: f64,
    target_time: Option<String>,
    target_step: Option<usize>,
    charge_max_kw: f64,
    discharge_max_kw: f64,
    #[serde(default = "default_true")]
    discharge_enabled: bool,
    availability: Option<SeriesSource>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadFile {
    name: String,
    power_kw: f64,
    duration_steps: usize,
    window: Option<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    time: TimeFile,
    grid: GridFile,
    prices: PricesFile,
    site: SiteFile,
    #[serde(default)]
    storage: Vec<StorageFile>,
    #[serde(default)]
    type1_load: Vec<LoadFile>,
    #[serde(default)]
    type2_load: Vec<LoadFile>,
}

fn default_true() -> bool {
    true
}

fn check_identifier(name: &str) -> Result<(), ScenarioError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(ScenarioError::Parse(format!(
            "device name `{name}` must be non-empty and use only [A-Za-z0-9_-]"
        )))
    }
}

fn check_positive(field: &str, device: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::Parse(format!("`{device}`: {field} must be positive, got {v}")))
    }
}

fn check_non_negative(field: &str, device: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::Parse(format!("`{device}`: {field} must be >= 0, got {v}")))
    }
}

fn check_efficiency(field: &str, device: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(ScenarioError::Parse(format!("`{device}`: {field} must be in (0, 1], got {v}")))
    }
}

/// Parses a scenario file. `base_dir` anchors relative series paths.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;

    let grid = TimeGrid::new(file.time.delta_t_hours, file.time.num_steps, file.time.start)?;

    let mut names = BTreeSet::new();
    for name in file
        .storage
        .iter()
        .map(|d| &d.name)
        .chain(file.type1_load.iter().map(|d| &d.name))
        .chain(file.type2_load.iter().map(|d| &d.name))
    {
        check_identifier(name)?;
        if !names.insert(name.clone()) {
            return Err(ScenarioError::Parse(format!("duplicate device name `{name}`")));
        }
    }

    let grid_spec = GridSpec {
        import_max_kw: file.grid.import_max_kw.resolve("import_max_kw", Unit::Kw, &grid, base_dir)?,
        export_max_kw: file.grid.export_max_kw.resolve("export_max_kw", Unit::Kw, &grid, base_dir)?,
        export_enabled: file.grid.export_enabled,
        exclusive_exchange: file.grid.exclusive_exchange,
    };
    let import_price =
        file.prices.import.resolve("import_price", Unit::CurrencyPerKwh, &grid, base_dir)?;
    let export_price =
        file.prices.export.resolve("export_price", Unit::CurrencyPerKwh, &grid, base_dir)?;
    let pv = file.site.pv.resolve("pv", Unit::Kw, &grid, base_dir)?;
    let base_load = file.site.base_load.resolve("base_load", Unit::Kw, &grid, base_dir)?;

    let mut storages = Vec::with_capacity(file.storage.len());
    for d in file.storage {
        check_efficiency("charge_efficiency", &d.name, d.charge_efficiency)?;
        check_efficiency("discharge_efficiency", &d.name, d.discharge_efficiency)?;
        check_positive("capacity_kwh", &d.name, d.capacity_kwh)?;
        check_non_negative("charge_max_kw", &d.name, d.charge_max_kw)?;
        check_non_negative("discharge_max_kw", &d.name, d.discharge_max_kw)?;
        for (field, v) in [
            ("soc_min_pct", d.soc_min_pct),
            ("soc_max_pct", d.soc_max_pct),
            ("soc_initial_pct", d.soc_initial_pct),
            ("soc_target_pct", d.soc_target_pct),
        ] {
            if !v.is_finite() || !(0.0..=100.0).contains(&v) {
                return Err(ScenarioError::Parse(format!(
                    "`{}`: {field} must be a percent in [0, 100], got {v}",
                    d.name
                )));
            }
        }
        let target_boundary = match (&d.target_time, d.target_step) {
            (Some(_), Some(_)) => {
                return Err(ScenarioError::Parse(format!(
                    "`{}`: give either target_time or target_step, not both",
                    d.name
                )))
            }
            (Some(label), None) => grid.step_of_clock(label)?,
            (None, Some(step)) => {
                if step > grid.num_steps {
                    return Err(ScenarioError::Parse(format!(
                        "`{}`: target_step {step} past final boundary {}",
                        d.name, grid.num_steps
                    )));
                }
                step
            }
            (None, None) => {
                return Err(ScenarioError::Parse(format!(
                    "`{}`: a storage needs target_time or target_step",
                    d.name
                )))
            }
        };
        let availability = match &d.availability {
            Some(src) => {
                src.resolve(&format!("availability_{}", d.name), Unit::Binary, &grid, base_dir)?
            }
            None => constant_series(format!("availability_{}", d.name), 1.0, Unit::Binary, &grid)?,
        };
        storages.push(StorageSpec {
            name: d.name,
            charge_efficiency: d.charge_efficiency,
            discharge_efficiency: d.discharge_efficiency,
            capacity_kwh: d.capacity_kwh,
            soc_min_pct: d.soc_min_pct,
            soc_max_pct: d.soc_max_pct,
            soc_initial_pct: d.soc_initial_pct,
            soc_target_pct: d.soc_target_pct,
            target_boundary,
            charge_max_kw: d.charge_max_kw,
            discharge_max_kw: d.discharge_max_kw,
            discharge_enabled: d.discharge_enabled,
            availability,
        });
    }

    let resolve_load = |d: &LoadFile| -> Result<(String, f64, usize, StepWindow), ScenarioError> {
        check_positive("power_kw", &d.name, d.power_kw)?;
        if d.duration_steps == 0 {
            return Err(ScenarioError::Parse(format!(
                "`{}`: duration_steps must be >= 1",
                d.name
            )));
        }
        let window = match d.window {
            Some([first, last]) => {
                if first > last {
                    return Err(ScenarioError::Parse(format!(
                        "`{}`: window [{first}, {last}] is inverted",
                        d.name
                    )));
                }
                StepWindow { first, last }
            }
            None => StepWindow::whole_horizon(&grid),
        };
        Ok((d.name.clone(), d.power_kw, d.duration_steps, window))
    };

    let mut type1_loads = Vec::with_capacity(file.type1_load.len());
    for d in &file.type1_load {
        let (name, power_kw, duration_steps, window) = resolve_load(d)?;
        type1_loads.push(Type1LoadSpec { name, power_kw, duration_steps, window });
    }
    let mut type2_loads = Vec::with_capacity(file.type2_load.len());
    for d in &file.type2_load {
        let (name, power_kw, duration_steps, window) = resolve_load(d)?;
        type2_loads.push(Type2LoadSpec { name, power_kw, duration_steps, window });
    }

    Ok(Scenario {
        time: grid,
        grid_spec,
        import_price,
        export_price,
        pv,
        base_load,
        storages,
        type1_loads,
        type2_loads,
    })
}

/// Reads and parses a scenario file from disk; series paths resolve
/// relative to the file's directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, base_dir)
}

/// Serializes a resolved scenario to canonical TOML: series become inline
/// arrays, targets become boundary indices. Parsing the output yields a
/// scenario equal to the input.
pub fn serialize_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    out.push_str("[time]\n");
    out.push_str(&format!("delta_t_hours = {}\n", float_toml(s.time.delta_t_hours)));
    out.push_str(&format!("num_steps = {}\n", s.time.num_steps));
    if let Some(start) = &s.time.start_label {
        out.push_str(&format!("start = \"{start}\"\n"));
    }
    out.push_str("\n[grid]\n");
    out.push_str(&format!("import_max_kw = {}\n", values_toml(&s.grid_spec.import_max_kw)));
    out.push_str(&format!("export_max_kw = {}\n", values_toml(&s.grid_spec.export_max_kw)));
    out.push_str(&format!("export_enabled = {}\n", s.grid_spec.export_enabled));
    out.push_str(&format!("exclusive_exchange = {}\n", s.grid_spec.exclusive_exchange));
    out.push_str("\n[prices]\n");
    out.push_str(&format!("import = {}\n", values_toml(&s.import_price)));
    out.push_str(&format!("export = {}\n", values_toml(&s.export_price)));
    out.push_str("\n[site]\n");
    out.push_str(&format!("pv = {}\n", values_toml(&s.pv)));
    out.push_str(&format!("base_load = {}\n", values_toml(&s.base_load)));
    for sto in &s.storages {
        out.push_str("\n[[storage]]\n");
        out.push_str(&format!("name = \"{}\"\n", sto.name));
        out.push_str(&format!("charge_efficiency = {}\n", float_toml(sto.charge_efficiency)));
        out.push_str(&format!(
            "discharge_efficiency = {}\n",
            float_toml(sto.discharge_efficiency)
        ));
        out.push_str(&format!("capacity_kwh = {}\n", float_toml(sto.capacity_kwh)));
        out.push_str(&format!("soc_min_pct = {}\n", float_toml(sto.soc_min_pct)));
        out.push_str(&format!("soc_max_pct = {}\n", float_toml(sto.soc_max_pct)));
        out.push_str(&format!("soc_initial_pct = {}\n", float_toml(sto.soc_initial_pct)));
        out.push_str(&format!("soc_target_pct = {}\n", float_toml(sto.soc_target_pct)));
        out.push_str(&format!("target_step = {}\n", sto.target_boundary));
        out.push_str(&format!("charge_max_kw = {}\n", float_toml(sto.charge_max_kw)));
        out.push_str(&format!("discharge_max_kw = {}\n", float_toml(sto.discharge_max_kw)));
        out.push_str(&format!("discharge_enabled = {}\n", sto.discharge_enabled));
        out.push_str(&format!("availability = {}\n", values_toml(&sto.availability)));
    }
    for (section, loads) in [
        ("type1_load", s.type1_loads.iter().map(load_fields).collect::<Vec<_>>()),
        ("type2_load", s.type2_loads.iter().map(load_fields2).collect::<Vec<_>>()),
    ] {
        for (name, power, dur, window) in loads {
            out.push_str(&format!("\n[[{section}]]\n"));
            out.push_str(&format!("name = \"{name}\"\n"));
            out.push_str(&format!("power_kw = {}\n", float_toml(power)));
            out.push_str(&format!("duration_steps = {dur}\n"));
            out.push_str(&format!("window = [{}, {}]\n", window.first, window.last));
        }
    }
    out
}

fn load_fields(l: &Type1LoadSpec) -> (&str, f64, usize, StepWindow) {
    (&l.name, l.power_kw, l.duration_steps, l.window)
}

fn load_fields2(l: &Type2LoadSpec) -> (&str, f64, usize, StepWindow) {
    (&l.name, l.power_kw, l.duration_steps, l.window)
}

/// TOML float literal that round-trips the exact f64 (shortest form, with a
/// decimal point so TOML keeps the float type).
fn float_toml(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn values_toml(series: &Series) -> String {
    let body: Vec<String> = series.values.iter().map(|v| float_toml(*v)).collect();
    format!("[{}]", body.join(", "))
}

/// Stable fingerprint of a resolved scenario (hex SHA-256 of the canonical
/// serialization), used to stamp outputs with their provenance.
pub fn scenario_hash(s: &Scenario) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(serialize_scenario(s).as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"
[time]
delta_t_hours = 0.5
num_steps = 4
start = "00:00"

[grid]
import_max_kw = 10.0
export_max_kw = 10.0

[prices]
import = [0.1, 0.2, 0.3, 0.4]
export = [0.1, 0.2, 0.3, 0.4]

[site]
pv = 0.0
base_load = 0.5

[[storage]]
name = "es"
charge_efficiency = 0.95
discharge_efficiency = 0.95
capacity_kwh = 12.0
soc_min_pct = 20.0
soc_max_pct = 100.0
soc_initial_pct = 20.0
soc_target_pct = 40.0
target_time = "02:00"
charge_max_kw = 4.0
discharge_max_kw = 4.0
discharge_enabled = false

[[type1_load]]
name = "cleaner"
power_kw = 0.6
duration_steps = 2

[[type2_load]]
name = "dishwasher"
power_kw = 1.0
duration_steps = 2
window = [1, 3]
"#;

    #[test]
    fn parses_mini_scenario() {
        let s = parse_scenario(MINI, Path::new(".")).unwrap();
        assert_eq!(s.num_steps(), 4);
        assert_eq!(s.storages.len(), 1);
        assert_eq!(s.storages[0].target_boundary, 4);
        assert_eq!(s.type1_loads[0].window, StepWindow { first: 0, last: 3 });
        assert_eq!(s.type2_loads[0].window, StepWindow { first: 1, last: 3 });
        assert!(s.grid_spec.export_enabled);
        assert!(!s.grid_spec.exclusive_exchange);
        assert_eq!(s.storages[0].availability.values, vec![1.0; 4]);
    }

    #[test]
    fn no_devices_is_a_valid_scenario() {
        let text = r#"
[time]
delta_t_hours = 1.0
num_steps = 2

[grid]
import_max_kw = 5.0
export_max_kw = 5.0

[prices]
import = 0.1
export = 0.1

[site]
pv = 0.0
base_load = 0.3
"#;
        let s = parse_scenario(text, Path::new(".")).unwrap();
        assert!(s.storages.is_empty());
        assert!(s.type1_loads.is_empty());
        assert!(s.type2_loads.is_empty());
        assert!(validate_scenario(&s).is_empty());
    }

    #[test]
    fn duplicate_device_name_is_parse_error() {
        let text = MINI.replace("name = \"dishwasher\"", "name = \"cleaner\"");
        let err = parse_scenario(&text, Path::new(".")).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse(_)), "{err}");
    }

    #[test]
    fn missing_series_file_is_unknown_ref() {
        let text = MINI.replace("import = [0.1, 0.2, 0.3, 0.4]", "import = \"nope.csv\"");
        let err = parse_scenario(&text, Path::new("/definitely/not/here")).unwrap_err();
        assert!(matches!(err, ScenarioError::UnknownSeriesRef { .. }), "{err}");
    }

    #[test]
    fn target_exceeding_max_is_flagged_not_rejected() {
        let text = MINI
            .replace("soc_max_pct = 100.0", "soc_max_pct = 80.0")
            .replace("soc_target_pct = 40.0", "soc_target_pct = 100.0");
        let s = parse_scenario(&text, Path::new(".")).unwrap();
        let violations = validate_scenario(&s);
        assert!(violations.iter().any(|v| v.code == ViolationCode::TargetExceedsMax));
    }

    #[test]
    fn reachability_accepts_table_like_storage() {
        // 12 kWh unit, init 20 %, target 100 % at boundary 46 of a 48-step
        // half-hour day: 46 steps at 4 kW and 0.95 efficiency gain far more
        // than the 80 % needed.
        let grid = TimeGrid::new(0.5, 48, Some("00:00".into())).unwrap();
        let sto = StorageSpec {
            name: "es".into(),
            charge_efficiency: 0.95,
            discharge_efficiency: 0.95,
            capacity_kwh: 12.0,
            soc_min_pct: 20.0,
            soc_max_pct: 100.0,
            soc_initial_pct: 20.0,
            soc_target_pct: 100.0,
            target_boundary: 46,
            charge_max_kw: 4.0,
            discharge_max_kw: 4.0,
            discharge_enabled: true,
            availability: constant_series("a", 1.0, Unit::Binary, &grid).unwrap(),
        };
        let s = Scenario {
            time: grid.clone(),
            grid_spec: GridSpec {
                import_max_kw: constant_series("i", 10.0, Unit::Kw, &grid).unwrap(),
                export_max_kw: constant_series("e", 10.0, Unit::Kw, &grid).unwrap(),
                export_enabled: true,
                exclusive_exchange: false,
            },
            import_price: constant_series("p", 0.1, Unit::CurrencyPerKwh, &grid).unwrap(),
            export_price: constant_series("r", 0.1, Unit::CurrencyPerKwh, &grid).unwrap(),
            pv: constant_series("pv", 0.0, Unit::Kw, &grid).unwrap(),
            base_load: constant_series("b", 0.0, Unit::Kw, &grid).unwrap(),
            storages: vec![sto],
            type1_loads: vec![],
            type2_loads: vec![],
        };
        assert!(validate_scenario(&s).is_empty());
    }

    #[test]
    fn unreachable_target_is_flagged() {
        // Only 2 steps available before the target boundary: 2 * 0.95 * 4 kW
        // * 0.5 h = 3.8 kWh = 31.67 % of 12 kWh; 20 % + 31.67 % < 90 %.
        let text = MINI
            .replace("soc_target_pct = 40.0", "soc_target_pct = 90.0")
            .replace("target_time = \"02:00\"", "target_time = \"01:00\"");
        let s = parse_scenario(&text, Path::new(".")).unwrap();
        let violations = validate_scenario(&s);
        assert!(violations.iter().any(|v| v.code == ViolationCode::TargetUnreachable));
    }

    #[test]
    fn run_does_not_fit_window() {
        let text = MINI.replace(
            "name = \"dishwasher\"\npower_kw = 1.0\nduration_steps = 2\nwindow = [1, 3]",
            "name = \"dishwasher\"\npower_kw = 1.0\nduration_steps = 5\nwindow = [1, 3]",
        );
        let s = parse_scenario(&text, Path::new(".")).unwrap();
        let violations = validate_scenario(&s);
        assert!(violations.iter().any(|v| v.code == ViolationCode::RunDoesNotFit));
    }

    #[test]
    fn validate_is_deterministic() {
        let text = MINI
            .replace("soc_max_pct = 100.0", "soc_max_pct = 80.0")
            .replace("soc_target_pct = 40.0", "soc_target_pct = 100.0");
        let s = parse_scenario(&text, Path::new(".")).unwrap();
        assert_eq!(validate_scenario(&s), validate_scenario(&s));
    }

    #[test]
    fn parse_serialize_parse_is_identity() {
        let s1 = parse_scenario(MINI, Path::new(".")).unwrap();
        let text = serialize_scenario(&s1);
        let s2 = parse_scenario(&text, Path::new(".")).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(scenario_hash(&s1), scenario_hash(&s2));
    }
}
