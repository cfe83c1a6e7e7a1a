//! Domain interpretation of solver output: schedules, independent
//! re-verification of every constraint family, cost accounting and
//! schedule comparison.
//!
//! Verification works from the scenario and raw series alone — it never
//! reads the generated model rows — so it is a genuinely independent check
//! on both the model builder and the solver.

use serde::Serialize;

use crate::model::{MilpModel, ModelVariant, VarId, VarKind};
use crate::scenario::{scenario_hash, Scenario};
use crate::solver::{MilpSolution, SolveStatus};
use crate::timeseries::{Series, TimeGrid};

/// Per-storage dispatch trajectory. SoC is reported on the `T + 1` step
/// boundaries; powers on the `T` steps.
#[derive(Debug, Clone, Serialize)]
pub struct StorageSchedule {
    pub name: String,
    pub charge_kw: Vec<f64>,
    pub discharge_kw: Vec<f64>,
    pub soc_pct: Vec<f64>,
}

/// Per-load on/off pattern (exact 0/1 after rounding within the solver's
/// integrality tolerance).
#[derive(Debug, Clone, Serialize)]
pub struct LoadSchedule {
    pub name: String,
    pub power_kw: f64,
    pub on_off: Vec<u8>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSchedule {
    pub import_kw: Vec<f64>,
    pub export_kw: Vec<f64>,
}

/// Provenance stamp carried by every schedule.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub scenario_hash: String,
    pub variant: ModelVariant,
}

/// A solved dispatch plan in domain terms.
#[derive(Debug, Clone, Serialize)]
pub struct Schedule {
    pub time: TimeGrid,
    pub storages: Vec<StorageSchedule>,
    pub loads: Vec<LoadSchedule>,
    pub grid: GridSchedule,
    pub provenance: Provenance,
}

#[derive(Debug, thiserror::Error)]
pub enum ScheduleError {
    #[error("solution status is {0}, expected optimal")]
    StatusNotOptimal(SolveStatus),
    #[error("model carries no variable layout; build it from a scenario")]
    ModelWithoutLayout,
    #[error("schedules live on different time grids")]
    GridMismatch,
    #[error("series `{0}` does not match the schedule grid")]
    SeriesMismatch(String),
}

/// Maps solver values back to named device trajectories. Binary variables
/// are rounded to exact 0/1 (the solver guarantees they are within its
/// integrality tolerance).
pub fn extract_schedule(
    model: &MilpModel,
    sol: &MilpSolution,
    scenario: &Scenario,
) -> Result<Schedule, ScheduleError> {
    if sol.status != SolveStatus::Optimal {
        return Err(ScheduleError::StatusNotOptimal(sol.status));
    }
    let layout = model.layout().ok_or(ScheduleError::ModelWithoutLayout)?;
    let t_steps = scenario.num_steps();
    let value = |kind: VarKind, device: Option<usize>, t: usize| -> f64 {
        layout
            .index(VarId { kind, device, t })
            .map(|idx| sol.values[idx])
            .unwrap_or(0.0)
    };

    let mut storages = Vec::with_capacity(scenario.storages.len());
    for (j, sto) in scenario.storages.iter().enumerate() {
        let d = Some(j);
        storages.push(StorageSchedule {
            name: sto.name.clone(),
            charge_kw: (0..t_steps).map(|t| value(VarKind::ChargePower, d, t)).collect(),
            discharge_kw: (0..t_steps).map(|t| value(VarKind::DischargePower, d, t)).collect(),
            soc_pct: (0..=t_steps).map(|t| value(VarKind::Soc, d, t)).collect(),
        });
    }

    let mut loads = Vec::new();
    let specs: Vec<(String, f64, crate::scenario::StepWindow)> = scenario
        .type1_loads
        .iter()
        .map(|l| (l.name.clone(), l.power_kw, l.window))
        .chain(scenario.type2_loads.iter().map(|l| (l.name.clone(), l.power_kw, l.window)))
        .collect();
    for (k, (name, power_kw, window)) in specs.into_iter().enumerate() {
        let on_off: Vec<u8> = match model.variant() {
            ModelVariant::Correct => (0..t_steps)
                .map(|t| value(VarKind::LoadOn, Some(k), t).round() as u8)
                .collect(),
            // The misformulated model has no load control: demand is the
            // rated power across the whole window.
            ModelVariant::Misformulated => {
                (0..t_steps).map(|t| u8::from(window.contains(t))).collect()
            }
        };
        loads.push(LoadSchedule { name, power_kw, on_off });
    }

    let grid = GridSchedule {
        import_kw: (0..t_steps).map(|t| value(VarKind::GridImport, None, t)).collect(),
        export_kw: (0..t_steps).map(|t| value(VarKind::GridExport, None, t)).collect(),
    };

    Ok(Schedule {
        time: scenario.time.clone(),
        storages,
        loads,
        grid,
        provenance: Provenance {
            scenario_hash: scenario_hash(scenario),
            variant: model.variant(),
        },
    })
}

impl Schedule {
    /// Dispatchable demand at step `t`, kW.
    pub fn dispatchable_demand_kw(&self, t: usize) -> f64 {
        self.loads.iter().map(|l| l.power_kw * l.on_off[t] as f64).sum()
    }

    /// Total site demand (base load plus dispatchable) at step `t`.
    pub fn total_demand_kw(&self, scenario: &Scenario, t: usize) -> f64 {
        scenario.base_load.values[t] + self.dispatchable_demand_kw(t)
    }
}

/// One verified constraint family.
#[derive(Debug, Clone, Serialize)]
pub struct FamilyCheck {
    pub family: String,
    pub max_residual: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Family-by-family residual report; `pass` iff every family is within
/// tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub tolerance: f64,
    pub pass: bool,
    pub families: Vec<FamilyCheck>,
}

impl VerificationReport {
    pub fn family(&self, name: &str) -> Option<&FamilyCheck> {
        self.families.iter().find(|f| f.family == name)
    }
}

struct FamilyAccumulator {
    family: &'static str,
    max_residual: f64,
    violations: usize,
}

impl FamilyAccumulator {
    fn new(family: &'static str) -> Self {
        FamilyAccumulator { family, max_residual: 0.0, violations: 0 }
    }

    fn record(&mut self, residual: f64, tol: f64) {
        if residual > self.max_residual {
            self.max_residual = residual;
        }
        if residual > tol {
            self.violations += 1;
        }
    }

    fn into_check(self, tol: f64) -> FamilyCheck {
        FamilyCheck {
            family: self.family.to_string(),
            max_residual: self.max_residual,
            violations: self.violations,
            pass: self.max_residual <= tol,
        }
    }
}

/// Re-derives every constraint family from the scenario and the schedule:
/// the SoC trajectory is recomputed from powers and compared, bounds and
/// caps are checked numerically, load totals exactly, and each
/// non-interruptible load must form a single contiguous run of its exact
/// duration.
pub fn verify_schedule(sch: &Schedule, scenario: &Scenario, tol: f64) -> VerificationReport {
    let t_steps = scenario.num_steps();
    let dt = scenario.time.delta_t_hours;

    let mut soc_recursion = FamilyAccumulator::new("soc_recursion");
    let mut charge_bound = FamilyAccumulator::new("charge_bound");
    let mut discharge_bound = FamilyAccumulator::new("discharge_bound");
    let mut mutual_exclusion = FamilyAccumulator::new("mutual_exclusion");
    let mut soc_bounds = FamilyAccumulator::new("soc_bounds");
    let mut soc_target = FamilyAccumulator::new("soc_target");
    let mut load_energy = FamilyAccumulator::new("load_energy");
    let mut load_duration = FamilyAccumulator::new("load_duration");
    let mut contiguity = FamilyAccumulator::new("type2_contiguity");
    let mut window = FamilyAccumulator::new("window");
    let mut balance = FamilyAccumulator::new("power_balance");
    let mut grid_import = FamilyAccumulator::new("grid_import");
    let mut grid_export = FamilyAccumulator::new("grid_export");

    for (j, sto) in scenario.storages.iter().enumerate() {
        let plan = &sch.storages[j];
        // SoC recomputed from scratch with the update rule.
        let mut soc = sto.soc_initial_pct;
        soc_recursion.record((plan.soc_pct[0] - soc).abs(), tol);
        for t in 0..t_steps {
            let charge = plan.charge_kw[t];
            let discharge = plan.discharge_kw[t];
            soc -= (discharge / sto.discharge_efficiency - sto.charge_efficiency * charge)
                * 100.0
                * dt
                / sto.capacity_kwh;
            soc_recursion.record((plan.soc_pct[t + 1] - soc).abs(), tol);

            let avail = sto.availability.values[t];
            charge_bound.record((charge - sto.charge_max_kw * avail).max(-charge).max(0.0), tol);
            let discharge_cap = if sto.discharge_enabled { sto.discharge_max_kw * avail } else { 0.0 };
            discharge_bound
                .record((discharge - discharge_cap).max(-discharge).max(0.0), tol);
            mutual_exclusion.record(charge.min(discharge).max(0.0), tol);
        }
        for b in 0..=t_steps {
            let v = plan.soc_pct[b];
            soc_bounds.record((sto.soc_min_pct - v).max(v - sto.soc_max_pct).max(0.0), tol);
        }
        soc_target
            .record((sto.soc_target_pct - plan.soc_pct[sto.target_boundary]).max(0.0), tol);
    }

    let load_specs: Vec<(usize, f64, usize, crate::scenario::StepWindow, bool)> = scenario
        .type1_loads
        .iter()
        .enumerate()
        .map(|(k, l)| (k, l.power_kw, l.duration_steps, l.window, false))
        .chain(
            scenario
                .type2_loads
                .iter()
                .enumerate()
                .map(|(k2, l)| {
                    (
                        scenario.type1_loads.len() + k2,
                        l.power_kw,
                        l.duration_steps,
                        l.window,
                        true,
                    )
                }),
        )
        .collect();
    for (k, power_kw, duration, win, contiguous) in load_specs {
        let on_off = &sch.loads[k].on_off;
        let on_total: usize = on_off.iter().map(|v| *v as usize).sum();
        load_duration.record((on_total as f64 - duration as f64).abs(), tol);
        let drawn: f64 = on_off.iter().map(|v| *v as f64 * power_kw * dt).sum();
        load_energy
            .record((drawn - power_kw * duration as f64 * dt).abs(), tol);
        for (t, v) in on_off.iter().enumerate() {
            if *v != 0 && !win.contains(t) {
                window.record(1.0, tol);
            }
        }
        if contiguous {
            // Exactly one maximal run, of exactly the required length.
            let mut runs = Vec::new();
            let mut current = 0usize;
            for &v in on_off {
                if v != 0 {
                    current += 1;
                } else if current > 0 {
                    runs.push(current);
                    current = 0;
                }
            }
            if current > 0 {
                runs.push(current);
            }
            let ok = runs.len() == 1 && runs[0] == duration;
            contiguity.record(if ok { 0.0 } else { 1.0 }, tol);
        }
    }

    for t in 0..t_steps {
        let storage_net: f64 = sch
            .storages
            .iter()
            .map(|p| p.discharge_kw[t] - p.charge_kw[t])
            .sum();
        let lhs = scenario.pv.values[t] + storage_net + sch.grid.import_kw[t]
            - sch.grid.export_kw[t];
        let rhs = scenario.base_load.values[t] + sch.dispatchable_demand_kw(t);
        balance.record((lhs - rhs).abs(), tol);

        let imp = sch.grid.import_kw[t];
        grid_import
            .record((imp - scenario.grid_spec.import_max_kw.values[t]).max(-imp).max(0.0), tol);
        let exp = sch.grid.export_kw[t];
        let cap = if scenario.grid_spec.export_enabled {
            scenario.grid_spec.export_max_kw.values[t]
        } else {
            0.0
        };
        grid_export.record((exp - cap).max(-exp).max(0.0), tol);
    }

    let families: Vec<FamilyCheck> = vec![
        soc_recursion.into_check(tol),
        charge_bound.into_check(tol),
        discharge_bound.into_check(tol),
        mutual_exclusion.into_check(tol),
        soc_bounds.into_check(tol),
        soc_target.into_check(tol),
        load_energy.into_check(tol),
        load_duration.into_check(tol),
        contiguity.into_check(tol),
        window.into_check(tol),
        balance.into_check(tol),
        grid_import.into_check(tol),
        grid_export.into_check(tol),
    ];
    VerificationReport { tolerance: tol, pass: families.iter().all(|f| f.pass), families }
}

/// Cost breakdown under the net-exchange objective.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub total_cost: f64,
    pub total_import_cost: f64,
    pub total_export_revenue: f64,
    pub per_step_import_cost: Vec<f64>,
    pub per_step_export_revenue: Vec<f64>,
}

/// Evaluates the operating cost of a schedule: per step, import power
/// times buy price minus export power times sell price, times the step
/// length.
pub fn cost_of(
    sch: &Schedule,
    import_price: &Series,
    export_price: &Series,
) -> Result<CostReport, ScheduleError> {
    let t_steps = sch.time.num_steps;
    if import_price.len() != t_steps {
        return Err(ScheduleError::SeriesMismatch(import_price.name.clone()));
    }
    if export_price.len() != t_steps {
        return Err(ScheduleError::SeriesMismatch(export_price.name.clone()));
    }
    let dt = sch.time.delta_t_hours;
    let mut per_step_import_cost = Vec::with_capacity(t_steps);
    let mut per_step_export_revenue = Vec::with_capacity(t_steps);
    let mut total_cost = 0.0;
    let mut total_import_cost = 0.0;
    let mut total_export_revenue = 0.0;
    for t in 0..t_steps {
        let ic = sch.grid.import_kw[t] * import_price.values[t] * dt;
        let er = sch.grid.export_kw[t] * export_price.values[t] * dt;
        per_step_import_cost.push(ic);
        per_step_export_revenue.push(er);
        total_cost += ic - er;
        total_import_cost += ic;
        total_export_revenue += er;
    }
    Ok(CostReport {
        total_cost,
        total_import_cost,
        total_export_revenue,
        per_step_import_cost,
        per_step_export_revenue,
    })
}

/// Per-step deltas between two schedules (a minus b).
#[derive(Debug, Clone, Serialize)]
pub struct StepDelta {
    pub step: usize,
    pub import_delta_kw: f64,
    pub export_delta_kw: f64,
    pub dispatchable_demand_delta_kw: f64,
}

/// Comparison of two schedules with their cost reports.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub cost_a: f64,
    pub cost_b: f64,
    /// `cost_a - cost_b`.
    pub cost_delta: f64,
    /// `(cost_a - cost_b) / cost_a * 100`; absent when `cost_a` is zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percent_reduction: Option<f64>,
    pub per_step: Vec<StepDelta>,
}

/// Percent reduction from `a` to `b`, the convention used in reports:
/// `(a - b) / a * 100`.
pub fn percent_reduction(cost_a: f64, cost_b: f64) -> Option<f64> {
    if cost_a == 0.0 {
        None
    } else {
        Some((cost_a - cost_b) / cost_a * 100.0)
    }
}

/// Compares schedule `a` (baseline) against `b`. Both must live on the
/// same time grid.
pub fn compare(
    a: (&Schedule, &CostReport),
    b: (&Schedule, &CostReport),
) -> Result<ComparisonReport, ScheduleError> {
    let (sa, ca) = a;
    let (sb, cb) = b;
    if sa.time != sb.time {
        return Err(ScheduleError::GridMismatch);
    }
    let per_step = (0..sa.time.num_steps)
        .map(|t| StepDelta {
            step: t,
            import_delta_kw: sa.grid.import_kw[t] - sb.grid.import_kw[t],
            export_delta_kw: sa.grid.export_kw[t] - sb.grid.export_kw[t],
            dispatchable_demand_delta_kw: sa.dispatchable_demand_kw(t)
                - sb.dispatchable_demand_kw(t),
        })
        .collect();
    Ok(ComparisonReport {
        cost_a: ca.total_cost,
        cost_b: cb.total_cost,
        cost_delta: ca.total_cost - cb.total_cost,
        percent_reduction: percent_reduction(ca.total_cost, cb.total_cost),
        per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::Unit;

    fn toy_schedule(import_kw: Vec<f64>, export_kw: Vec<f64>, dt: f64) -> Schedule {
        let t = import_kw.len();
        Schedule {
            time: TimeGrid::new(dt, t, None).unwrap(),
            storages: vec![],
            loads: vec![],
            grid: GridSchedule { import_kw, export_kw },
            provenance: Provenance {
                scenario_hash: "test".into(),
                variant: ModelVariant::Correct,
            },
        }
    }

    fn series(values: Vec<f64>, dt: f64) -> Series {
        let grid = TimeGrid::new(dt, values.len(), None).unwrap();
        Series::new("s", Unit::CurrencyPerKwh, values, &grid).unwrap()
    }

    #[test]
    fn cost_of_hand_example() {
        // imports [2, 0] at prices [0.10, 0.20], exports [0, 1] at
        // [0.05, 0.15], half-hour steps: (2*0.10)*0.5 - (1*0.15)*0.5 = 0.025.
        let sch = toy_schedule(vec![2.0, 0.0], vec![0.0, 1.0], 0.5);
        let report = cost_of(
            &sch,
            &series(vec![0.10, 0.20], 0.5),
            &series(vec![0.05, 0.15], 0.5),
        )
        .unwrap();
        assert!((report.total_cost - 0.025).abs() < 1e-12);
        assert!((report.total_import_cost - 0.1).abs() < 1e-12);
        assert!((report.total_export_revenue - 0.075).abs() < 1e-12);
    }

    #[test]
    fn cost_of_zero_flows() {
        let sch = toy_schedule(vec![0.0; 4], vec![0.0; 4], 0.5);
        let report = cost_of(&sch, &series(vec![0.3; 4], 0.5), &series(vec![0.3; 4], 0.5)).unwrap();
        assert_eq!(report.total_cost, 0.0);
    }

    #[test]
    fn total_matches_per_step_sum_exactly() {
        let sch = toy_schedule(vec![1.3, 0.7, 2.9], vec![0.2, 1.1, 0.0], 1.0);
        let r = cost_of(
            &sch,
            &series(vec![0.11, 0.23, 0.31], 1.0),
            &series(vec![0.07, 0.05, 0.31], 1.0),
        )
        .unwrap();
        let mut total = 0.0;
        for t in 0..3 {
            total += r.per_step_import_cost[t] - r.per_step_export_revenue[t];
        }
        assert_eq!(total.to_bits(), r.total_cost.to_bits());
    }

    #[test]
    fn percent_reduction_matches_reported_pair() {
        // 25.33 -> 23.27 is an 8.13 % reduction at two decimals.
        let pct = percent_reduction(25.33, 23.27).unwrap();
        assert!((pct * 100.0).round() / 100.0 == 8.13, "got {pct}");
    }

    #[test]
    fn compare_on_literal_pair_via_cost_reports() {
        let a = toy_schedule(vec![25.33], vec![0.0], 1.0);
        let b = toy_schedule(vec![23.27], vec![0.0], 1.0);
        let one = series(vec![1.0], 1.0);
        let ca = cost_of(&a, &one, &one).unwrap();
        let cb = cost_of(&b, &one, &one).unwrap();
        let cmp = compare((&a, &ca), (&b, &cb)).unwrap();
        let pct = cmp.percent_reduction.unwrap();
        assert!(((pct * 100.0).round() / 100.0 - 8.13).abs() < 1e-12);
        assert!((cmp.cost_delta - 2.06).abs() < 1e-9);
    }

    #[test]
    fn compare_identical_schedules_is_all_zero() {
        let a = toy_schedule(vec![1.0, 2.0], vec![0.5, 0.0], 0.5);
        let prices = series(vec![0.2, 0.3], 0.5);
        let ca = cost_of(&a, &prices, &prices).unwrap();
        let cmp = compare((&a, &ca), (&a, &ca)).unwrap();
        assert_eq!(cmp.cost_delta, 0.0);
        assert_eq!(cmp.percent_reduction, Some(0.0));
        assert!(cmp
            .per_step
            .iter()
            .all(|d| d.import_delta_kw == 0.0 && d.export_delta_kw == 0.0));
    }

    #[test]
    fn compare_rejects_grid_mismatch() {
        let a = toy_schedule(vec![1.0, 2.0], vec![0.0, 0.0], 0.5);
        let b = toy_schedule(vec![1.0], vec![0.0], 0.5);
        let p2 = series(vec![0.2, 0.3], 0.5);
        let p1 = series(vec![0.2], 0.5);
        let ca = cost_of(&a, &p2, &p2).unwrap();
        let cb = cost_of(&b, &p1, &p1).unwrap();
        assert!(matches!(
            compare((&a, &ca), (&b, &cb)),
            Err(ScheduleError::GridMismatch)
        ));
    }

    #[test]
    fn split_run_fails_contiguity() {
        // Hand-built schedule: a 2-step dishwasher split into two 1-step
        // runs must be flagged.
        let text = r#"
[time]
delta_t_hours = 0.5
num_steps = 4

[grid]
import_max_kw = 10.0
export_max_kw = 10.0

[prices]
import = 0.1
export = 0.1

[site]
pv = 0.0
base_load = 0.0

[[type2_load]]
name = "dishwasher"
power_kw = 1.0
duration_steps = 2
"#;
        let scenario = crate::scenario::parse_scenario(text, std::path::Path::new(".")).unwrap();
        let sch = Schedule {
            time: scenario.time.clone(),
            storages: vec![],
            loads: vec![LoadSchedule {
                name: "dishwasher".into(),
                power_kw: 1.0,
                on_off: vec![1, 0, 1, 0],
            }],
            grid: GridSchedule {
                import_kw: vec![1.0, 0.0, 1.0, 0.0],
                export_kw: vec![0.0; 4],
            },
            provenance: Provenance {
                scenario_hash: "hand".into(),
                variant: ModelVariant::Correct,
            },
        };
        let report = verify_schedule(&sch, &scenario, 1e-6);
        assert!(!report.pass);
        let fam = report.family("type2_contiguity").unwrap();
        assert_eq!(fam.violations, 1);
        // Totals are still right, so those families pass.
        assert!(report.family("load_duration").unwrap().pass);
        assert!(report.family("power_balance").unwrap().pass);
    }

    #[test]
    fn soc_recursion_hand_value() {
        // 12 kWh store at 20 %, one half-hour step of 4 kW charging at 0.95
        // efficiency: 20 + 0.95*4*100*0.5/12 = 35.8333... %.
        let text = r#"
[time]
delta_t_hours = 0.5
num_steps = 1

[grid]
import_max_kw = 10.0
export_max_kw = 10.0

[prices]
import = 0.1
export = 0.1

[site]
pv = 0.0
base_load = 0.0

[[storage]]
name = "es"
charge_efficiency = 0.95
discharge_efficiency = 0.95
capacity_kwh = 12.0
soc_min_pct = 0.0
soc_max_pct = 100.0
soc_initial_pct = 20.0
soc_target_pct = 20.0
target_step = 0
charge_max_kw = 4.0
discharge_max_kw = 4.0
"#;
        let scenario = crate::scenario::parse_scenario(text, std::path::Path::new(".")).unwrap();
        let expected = 20.0 + 0.95 * 4.0 * 100.0 * 0.5 / 12.0;
        let sch = Schedule {
            time: scenario.time.clone(),
            storages: vec![StorageSchedule {
                name: "es".into(),
                charge_kw: vec![4.0],
                discharge_kw: vec![0.0],
                soc_pct: vec![20.0, expected],
            }],
            loads: vec![],
            grid: GridSchedule { import_kw: vec![4.0], export_kw: vec![0.0] },
            provenance: Provenance {
                scenario_hash: "hand".into(),
                variant: ModelVariant::Correct,
            },
        };
        let report = verify_schedule(&sch, &scenario, 1e-6);
        let fam = report.family("soc_recursion").unwrap();
        assert_eq!(fam.max_residual, 0.0);
        assert!((expected - 35.83333333333333).abs() < 1e-10);
    }
}
