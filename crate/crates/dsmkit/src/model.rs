//! Translation of a [`Scenario`] into a concrete MILP.
//!
//! ## Variable layout
//!
//! Decision variables are flattened into one dense vector with a fixed,
//! documented bijection: kind-major, then device ordinal, then step. The
//! kinds, in block order:
//!
//! ```text
//! p_ch     charge power, kW          one per (storage, step)
//! p_disch  discharge power, kW       one per (storage, step)
//! mu_ch    charging flag             binary, one per (storage, step)
//! mu_disch discharging flag          binary, one per (storage, step)
//! soc      state of charge, percent  one per (storage, boundary 0..=T)
//! lambda   load on/off               binary, one per (load, step)
//! nu_s     run-start marker          binary, one per (type-2 load, step)
//! nu_e     run-end marker            binary, one per (type-2 load, step)
//! p_imp    grid import, kW           one per step
//! p_exp    grid export, kW           one per step
//! mu_imp   import flag               binary, per step, exclusive mode only
//! mu_exp   export flag               binary, per step, exclusive mode only
//! ```
//!
//! Load ordinals count Type 1 loads first, then Type 2; `nu_s`/`nu_e`
//! ordinals index the Type 2 list alone.
//!
//! ## Constraint encoding
//!
//! Multi-variable relations become tagged rows (`family[device][t]`).
//! Single-variable relations — SoC limits and the initial/target pins,
//! grid import/export caps, activation-window and availability masks —
//! are folded into the variable bounds, which the bundled solver treats
//! natively; they are still reported per family by [`model_stats`].
//! The deliberately misformulated variant drops grid export and all load
//! control: loads contribute their rated power across their whole windows
//! as fixed demand, and the objective prices imports only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::scenario::Scenario;

/// The role a decision variable plays. See the module docs for the block
/// order and per-kind index ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    ChargePower,
    DischargePower,
    ChargeFlag,
    DischargeFlag,
    Soc,
    LoadOn,
    RunStart,
    RunEnd,
    GridImport,
    GridExport,
    ImportFlag,
    ExportFlag,
}

impl VarKind {
    pub const ALL: [VarKind; 12] = [
        VarKind::ChargePower,
        VarKind::DischargePower,
        VarKind::ChargeFlag,
        VarKind::DischargeFlag,
        VarKind::Soc,
        VarKind::LoadOn,
        VarKind::RunStart,
        VarKind::RunEnd,
        VarKind::GridImport,
        VarKind::GridExport,
        VarKind::ImportFlag,
        VarKind::ExportFlag,
    ];

    /// Short label used in model dumps and variable names.
    pub fn label(self) -> &'static str {
        match self {
            VarKind::ChargePower => "p_ch",
            VarKind::DischargePower => "p_disch",
            VarKind::ChargeFlag => "mu_ch",
            VarKind::DischargeFlag => "mu_disch",
            VarKind::Soc => "soc",
            VarKind::LoadOn => "lambda",
            VarKind::RunStart => "nu_s",
            VarKind::RunEnd => "nu_e",
            VarKind::GridImport => "p_imp",
            VarKind::GridExport => "p_exp",
            VarKind::ImportFlag => "mu_imp",
            VarKind::ExportFlag => "mu_exp",
        }
    }

    fn ordinal(self) -> usize {
        VarKind::ALL.iter().position(|k| *k == self).unwrap()
    }
}

/// Identifies one decision variable: kind, device ordinal (none for grid
/// kinds) and step (or boundary, for SoC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId {
    pub kind: VarKind,
    pub device: Option<usize>,
    pub t: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    devices: usize,
    steps: usize,
    offset: usize,
}

/// Deterministic bijection between [`VarId`]s and dense indices for one
/// model instance.
#[derive(Debug, Clone)]
pub struct VarLayout {
    pub num_steps: usize,
    pub num_storages: usize,
    pub num_type1: usize,
    pub num_type2: usize,
    blocks: [Block; 12],
    total: usize,
}

impl VarLayout {
    fn new(
        num_steps: usize,
        num_storages: usize,
        num_type1: usize,
        num_type2: usize,
        with_export: bool,
        with_load_control: bool,
        with_exchange_flags: bool,
    ) -> Self {
        let t = num_steps;
        let num_loads = num_type1 + num_type2;
        let sizes: [(usize, usize); 12] = [
            (num_storages, t),
            (num_storages, t),
            (num_storages, t),
            (num_storages, t),
            (num_storages, t + 1),
            (if with_load_control { num_loads } else { 0 }, t),
            (if with_load_control { num_type2 } else { 0 }, t),
            (if with_load_control { num_type2 } else { 0 }, t),
            (1, t),
            (if with_export { 1 } else { 0 }, t),
            (if with_exchange_flags { 1 } else { 0 }, t),
            (if with_exchange_flags { 1 } else { 0 }, t),
        ];
        let mut blocks = [Block { devices: 0, steps: 0, offset: 0 }; 12];
        let mut offset = 0;
        for (i, (devices, steps)) in sizes.iter().enumerate() {
            blocks[i] = Block { devices: *devices, steps: *steps, offset };
            offset += devices * steps;
        }
        VarLayout {
            num_steps,
            num_storages,
            num_type1,
            num_type2,
            blocks,
            total: offset,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.total
    }

    /// Dense index of a variable, or `None` if the kind is absent from this
    /// model variant or the (device, t) pair is out of range.
    pub fn index(&self, id: VarId) -> Option<usize> {
        let block = &self.blocks[id.kind.ordinal()];
        let device = id.device.unwrap_or(0);
        if device >= block.devices || id.t >= block.steps {
            return None;
        }
        Some(block.offset + device * block.steps + id.t)
    }

    /// Inverse of [`VarLayout::index`].
    pub fn var_of(&self, index: usize) -> Option<VarId> {
        for (ord, block) in self.blocks.iter().enumerate() {
            let size = block.devices * block.steps;
            if index >= block.offset && index < block.offset + size {
                let within = index - block.offset;
                let kind = VarKind::ALL[ord];
                let device = within / block.steps;
                let t = within % block.steps;
                let device = match kind {
                    VarKind::GridImport
                    | VarKind::GridExport
                    | VarKind::ImportFlag
                    | VarKind::ExportFlag => None,
                    _ => Some(device),
                };
                return Some(VarId { kind, device, t });
            }
        }
        None
    }

    /// Count of variables of one kind in this layout.
    pub fn kind_count(&self, kind: VarKind) -> usize {
        let block = &self.blocks[kind.ordinal()];
        block.devices * block.steps
    }

    pub fn name(&self, id: VarId) -> String {
        match id.device {
            Some(d) => format!("{}[{}][{}]", id.kind.label(), d, id.t),
            None => format!("{}[{}]", id.kind.label(), id.t),
        }
    }
}

/// Which encoding a model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Correct,
    Misformulated,
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelVariant::Correct => f.write_str("correct"),
            ModelVariant::Misformulated => f.write_str("misformulated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Le => f.write_str("<="),
            Relation::Eq => f.write_str("="),
            Relation::Ge => f.write_str(">="),
        }
    }
}

/// One linear row: `sum(coef * var) REL rhs`, tagged with the constraint
/// family and the (device, step) it instantiates.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    pub tag: String,
}

impl LinearConstraint {
    /// Left-hand-side value under an assignment.
    pub fn lhs(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(j, c)| c * values[*j]).sum()
    }

    /// How far the assignment is from satisfying the row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.lhs(values);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }

    /// Family prefix of the tag (text before the first `[`).
    pub fn family(&self) -> &str {
        self.tag.split('[').next().unwrap_or(&self.tag)
    }
}

/// A mixed-integer linear program: boxed variables, some binary, linear
/// rows and a linear objective to minimize.
#[derive(Debug, Clone)]
pub struct MilpModel {
    bounds: Vec<(f64, f64)>,
    binary: Vec<bool>,
    names: Vec<String>,
    constraints: Vec<LinearConstraint>,
    objective: Vec<(usize, f64)>,
    tags: BTreeSet<String>,
    bound_families: BTreeMap<String, usize>,
    layout: Option<VarLayout>,
    variant: ModelVariant,
}

impl MilpModel {
    /// An empty model to be filled through `add_var` / `add_constraint`;
    /// used directly by solver tests and standalone MILP construction.
    pub fn new() -> Self {
        MilpModel {
            bounds: Vec::new(),
            binary: Vec::new(),
            names: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            tags: BTreeSet::new(),
            bound_families: BTreeMap::new(),
            layout: None,
            variant: ModelVariant::Correct,
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> usize {
        assert!(!lo.is_nan() && !hi.is_nan(), "variable bounds must not be NaN");
        self.bounds.push((lo, hi));
        self.binary.push(false);
        self.names.push(name.into());
        self.binary.len() - 1
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> usize {
        let j = self.add_var(name, 0.0, 1.0);
        self.binary[j] = true;
        j
    }

    /// Tightens a variable's bounds toward `[lo, hi]` (intersection).
    pub fn tighten_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        let (cur_lo, cur_hi) = self.bounds[var];
        self.bounds[var] = (cur_lo.max(lo), cur_hi.min(hi));
    }

    pub fn add_constraint(
        &mut self,
        tag: impl Into<String>,
        terms: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) {
        let tag = tag.into();
        assert!(self.tags.insert(tag.clone()), "duplicate constraint tag `{tag}`");
        let mut seen = BTreeSet::new();
        for (j, c) in &terms {
            assert!(*j < self.bounds.len(), "constraint `{tag}` references unknown var {j}");
            assert!(c.is_finite(), "constraint `{tag}` has non-finite coefficient");
            assert!(seen.insert(*j), "constraint `{tag}` repeats variable {j}");
        }
        assert!(rhs.is_finite(), "constraint `{tag}` has non-finite rhs");
        self.constraints.push(LinearConstraint { terms, relation, rhs, tag });
    }

    pub fn set_objective(&mut self, terms: Vec<(usize, f64)>) {
        for (j, c) in &terms {
            assert!(*j < self.bounds.len(), "objective references unknown var {j}");
            assert!(c.is_finite(), "objective has non-finite coefficient");
        }
        self.objective = terms;
    }

    fn note_bound_family(&mut self, family: &str, n: usize) {
        *self.bound_families.entry(family.to_string()).or_insert(0) += n;
    }

    pub fn num_vars(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn is_binary(&self, var: usize) -> bool {
        self.binary[var]
    }

    pub fn binary_vars(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.binary.len()).filter(|j| self.binary[*j])
    }

    pub fn num_binaries(&self) -> usize {
        self.binary.iter().filter(|b| **b).count()
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[(usize, f64)] {
        &self.objective
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|(j, c)| c * values[*j]).sum()
    }

    pub fn var_name(&self, var: usize) -> &str {
        &self.names[var]
    }

    pub fn layout(&self) -> Option<&VarLayout> {
        self.layout.as_ref()
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    /// Largest constraint violation of an assignment (bounds not included).
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.violation(values)).fold(0.0, f64::max)
    }

    /// Text dump for debugging and cross-checks: bounds, then one line per
    /// constraint sorted by tag, then the objective.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# vars: {} (binary: {})\n# bounds:\n",
            self.num_vars(),
            self.num_binaries()
        ));
        for (j, (lo, hi)) in self.bounds.iter().enumerate() {
            out.push_str(&format!("{} in [{}, {}]\n", self.names[j], lo, hi));
        }
        out.push_str("# constraints:\n");
        let mut rows: Vec<&LinearConstraint> = self.constraints.iter().collect();
        rows.sort_by(|a, b| a.tag.cmp(&b.tag));
        for row in rows {
            out.push_str(&format!("{}: {} {} {}\n", row.tag, self.terms_text(&row.terms), row.relation, row.rhs));
        }
        out.push_str(&format!("# objective: min {}\n", self.terms_text(&self.objective)));
        out
    }

    fn terms_text(&self, terms: &[(usize, f64)]) -> String {
        if terms.is_empty() {
            return "0".into();
        }
        terms
            .iter()
            .map(|(j, c)| format!("{}*{}", c, self.names[*j]))
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

impl Default for MilpModel {
    fn default() -> Self {
        Self::new()
    }
}

/// Summary counts for a model: variables by kind, rows by tag family, and
/// relations realized as variable bounds by family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelStats {
    pub num_vars: usize,
    pub num_binaries: usize,
    pub num_constraints: usize,
    pub vars_by_kind: BTreeMap<String, usize>,
    pub rows_by_family: BTreeMap<String, usize>,
    pub bounds_by_family: BTreeMap<String, usize>,
}

pub fn model_stats(m: &MilpModel) -> ModelStats {
    let mut vars_by_kind = BTreeMap::new();
    if let Some(layout) = m.layout() {
        for kind in VarKind::ALL {
            vars_by_kind.insert(kind.label().to_string(), layout.kind_count(kind));
        }
    }
    let mut rows_by_family = BTreeMap::new();
    for c in m.constraints() {
        *rows_by_family.entry(c.family().to_string()).or_insert(0) += 1;
    }
    ModelStats {
        num_vars: m.num_vars(),
        num_binaries: m.num_binaries(),
        num_constraints: m.constraints().len(),
        vars_by_kind,
        rows_by_family,
        bounds_by_family: m.bound_families.clone(),
    }
}

/// Builds the full MILP for a scenario: storage dynamics and limits,
/// load energy/duration and contiguity control, power balance, grid caps
/// and the net-cost objective.
pub fn build_model(s: &Scenario) -> MilpModel {
    build(s, ModelVariant::Correct)
}

/// Builds the deliberately flawed baseline: no export variables (and no
/// revenue term), and no load-control variables — dispatchable loads sit
/// in the balance as fixed demand across their windows.
pub fn build_misformulated_model(s: &Scenario) -> MilpModel {
    build(s, ModelVariant::Misformulated)
}

fn build(s: &Scenario, variant: ModelVariant) -> MilpModel {
    let t_steps = s.time.num_steps;
    let dt = s.time.delta_t_hours;
    let correct = variant == ModelVariant::Correct;
    let layout = VarLayout::new(
        t_steps,
        s.storages.len(),
        s.type1_loads.len(),
        s.type2_loads.len(),
        correct,
        correct,
        correct && s.grid_spec.exclusive_exchange,
    );

    let mut m = MilpModel::new();
    m.variant = variant;
    for idx in 0..layout.num_vars() {
        let id = layout.var_of(idx).expect("dense layout");
        let name = layout.name(id);
        let is_binary = matches!(
            id.kind,
            VarKind::ChargeFlag
                | VarKind::DischargeFlag
                | VarKind::LoadOn
                | VarKind::RunStart
                | VarKind::RunEnd
                | VarKind::ImportFlag
                | VarKind::ExportFlag
        );
        if is_binary {
            m.add_binary(name);
        } else {
            m.add_var(name, 0.0, f64::INFINITY);
        }
    }

    let var = |kind: VarKind, device: Option<usize>, t: usize| -> usize {
        layout.index(VarId { kind, device, t }).expect("variable present in layout")
    };

    // Storage devices.
    for (j, sto) in s.storages.iter().enumerate() {
        let d = Some(j);
        let k_charge = sto.charge_efficiency * 100.0 * dt / sto.capacity_kwh;
        let k_discharge = 100.0 * dt / (sto.discharge_efficiency * sto.capacity_kwh);
        for t in 0..t_steps {
            let available = sto.availability.values[t] > 0.5;
            let can_discharge = available && sto.discharge_enabled;

            let p_ch = var(VarKind::ChargePower, d, t);
            let p_disch = var(VarKind::DischargePower, d, t);
            let mu_ch = var(VarKind::ChargeFlag, d, t);
            let mu_disch = var(VarKind::DischargeFlag, d, t);

            m.tighten_bounds(p_ch, 0.0, if available { sto.charge_max_kw } else { 0.0 });
            m.tighten_bounds(p_disch, 0.0, if can_discharge { sto.discharge_max_kw } else { 0.0 });
            if !available {
                m.tighten_bounds(mu_ch, 0.0, 0.0);
                m.note_bound_family("availability_mask", 1);
            }
            if !can_discharge {
                m.tighten_bounds(mu_disch, 0.0, 0.0);
            }

            // Charge/discharge power capped by the flag (availability is
            // data, so it scales the cap rather than adding a variable).
            let charge_terms = if available {
                vec![(p_ch, 1.0), (mu_ch, -sto.charge_max_kw)]
            } else {
                vec![(p_ch, 1.0)]
            };
            m.add_constraint(format!("charge_bound[{}][{t}]", sto.name), charge_terms, Relation::Le, 0.0);
            let discharge_terms = if can_discharge {
                vec![(p_disch, 1.0), (mu_disch, -sto.discharge_max_kw)]
            } else {
                vec![(p_disch, 1.0)]
            };
            m.add_constraint(
                format!("discharge_bound[{}][{t}]", sto.name),
                discharge_terms,
                Relation::Le,
                0.0,
            );
            m.add_constraint(
                format!("mutual_exclusion[{}][{t}]", sto.name),
                vec![(mu_ch, 1.0), (mu_disch, 1.0)],
                Relation::Le,
                1.0,
            );

            // SoC update from boundary t to t+1.
            let soc_now = var(VarKind::Soc, d, t);
            let soc_next = var(VarKind::Soc, d, t + 1);
            m.add_constraint(
                format!("soc_recursion[{}][{t}]", sto.name),
                vec![
                    (soc_next, 1.0),
                    (soc_now, -1.0),
                    (p_disch, k_discharge),
                    (p_ch, -k_charge),
                ],
                Relation::Eq,
                0.0,
            );
        }

        // SoC box at every boundary, the initial pin and the target floor
        // are pure variable bounds.
        for b in 0..=t_steps {
            let soc = var(VarKind::Soc, d, b);
            m.tighten_bounds(soc, sto.soc_min_pct, sto.soc_max_pct);
            m.note_bound_family("soc_bounds", 1);
        }
        let soc0 = var(VarKind::Soc, d, 0);
        m.tighten_bounds(soc0, sto.soc_initial_pct, sto.soc_initial_pct);
        m.note_bound_family("soc_init", 1);
        let soc_req = var(VarKind::Soc, d, sto.target_boundary);
        m.tighten_bounds(soc_req, sto.soc_target_pct, f64::INFINITY);
        m.note_bound_family("soc_target", 1);
    }

    // Dispatchable loads (correct variant only; the misformulated one has
    // no control variables).
    if correct {
        let loads: Vec<(String, f64, usize, crate::scenario::StepWindow)> = s
            .type1_loads
            .iter()
            .map(|l| (l.name.clone(), l.power_kw, l.duration_steps, l.window))
            .chain(
                s.type2_loads
                    .iter()
                    .map(|l| (l.name.clone(), l.power_kw, l.duration_steps, l.window)),
            )
            .collect();

        for (k, (name, power_kw, duration, window)) in loads.iter().enumerate() {
            let energy_kwh = power_kw * *duration as f64 * dt;
            let mut energy_terms = Vec::with_capacity(t_steps);
            let mut duration_terms = Vec::with_capacity(t_steps);
            for t in 0..t_steps {
                let on = var(VarKind::LoadOn, Some(k), t);
                if !window.contains(t) {
                    m.tighten_bounds(on, 0.0, 0.0);
                    m.note_bound_family("window_mask", 1);
                }
                energy_terms.push((on, power_kw * dt));
                duration_terms.push((on, 1.0));
            }
            m.add_constraint(format!("load_energy[{name}]"), energy_terms, Relation::Eq, energy_kwh);
            m.add_constraint(
                format!("load_duration[{name}]"),
                duration_terms,
                Relation::Eq,
                *duration as f64,
            );
        }

        for (k2, l) in s.type2_loads.iter().enumerate() {
            let k = s.type1_loads.len() + k2; // combined load ordinal
            let h = l.duration_steps;
            let run_fits = |t: usize| -> bool {
                t + h <= t_steps && t >= l.window.first && t + h - 1 <= l.window.last
            };

            let mut start_terms = Vec::with_capacity(t_steps);
            for t in 0..t_steps {
                let nu_s = var(VarKind::RunStart, Some(k2), t);
                if !run_fits(t) {
                    m.tighten_bounds(nu_s, 0.0, 0.0);
                    m.note_bound_family("window_mask", 1);
                }
                let nu_e = var(VarKind::RunEnd, Some(k2), t);
                let end_ok = t + 1 >= h && run_fits(t + 1 - h);
                if !end_ok {
                    m.tighten_bounds(nu_e, 0.0, 0.0);
                    m.note_bound_family("window_mask", 1);
                }
                start_terms.push((nu_s, 1.0));
            }
            // Exactly one start over the horizon; infeasible by design when
            // no run of length H fits.
            m.add_constraint(format!("type2_start_once[{}]", l.name), start_terms, Relation::Eq, 1.0);

            for t in 0..t_steps.saturating_sub(h - 1) {
                // A start at t forces the next H on-steps.
                let mut terms: Vec<(usize, f64)> =
                    (0..h).map(|i| (var(VarKind::LoadOn, Some(k), t + i), 1.0)).collect();
                terms.push((var(VarKind::RunStart, Some(k2), t), -(h as f64)));
                m.add_constraint(format!("type2_run[{}][{t}]", l.name), terms, Relation::Ge, 0.0);

                // Matching end marker H-1 steps later.
                m.add_constraint(
                    format!("type2_link[{}][{t}]", l.name),
                    vec![
                        (var(VarKind::RunEnd, Some(k2), t + h - 1), 1.0),
                        (var(VarKind::RunStart, Some(k2), t), -1.0),
                    ],
                    Relation::Eq,
                    0.0,
                );
            }

            for t in 0..t_steps {
                // Operation only within H steps of a start.
                let mut terms = vec![(var(VarKind::LoadOn, Some(k), t), 1.0)];
                let from = t.saturating_sub(h - 1);
                for j in from..=t {
                    terms.push((var(VarKind::RunStart, Some(k2), j), -1.0));
                }
                m.add_constraint(
                    format!("type2_consistency[{}][{t}]", l.name),
                    terms,
                    Relation::Le,
                    0.0,
                );
            }
        }
    }

    // Grid exchange bounds and balance.
    for t in 0..t_steps {
        let p_imp = var(VarKind::GridImport, None, t);
        m.tighten_bounds(p_imp, 0.0, s.grid_spec.import_max_kw.values[t]);
        m.note_bound_family("grid_import", 1);

        if correct {
            let p_exp = var(VarKind::GridExport, None, t);
            let cap = if s.grid_spec.export_enabled {
                s.grid_spec.export_max_kw.values[t]
            } else {
                0.0
            };
            m.tighten_bounds(p_exp, 0.0, cap);
            m.note_bound_family("grid_export", 1);

            if s.grid_spec.exclusive_exchange {
                let mu_imp = var(VarKind::ImportFlag, None, t);
                let mu_exp = var(VarKind::ExportFlag, None, t);
                let imax = s.grid_spec.import_max_kw.values[t];
                let emax = cap;
                let import_terms = if imax > 0.0 {
                    vec![(p_imp, 1.0), (mu_imp, -imax)]
                } else {
                    vec![(p_imp, 1.0)]
                };
                m.add_constraint(format!("grid_import_excl[{t}]"), import_terms, Relation::Le, 0.0);
                let export_terms = if emax > 0.0 {
                    vec![(p_exp, 1.0), (mu_exp, -emax)]
                } else {
                    vec![(p_exp, 1.0)]
                };
                m.add_constraint(format!("grid_export_excl[{t}]"), export_terms, Relation::Le, 0.0);
                m.add_constraint(
                    format!("grid_exclusion[{t}]"),
                    vec![(mu_imp, 1.0), (mu_exp, 1.0)],
                    Relation::Le,
                    1.0,
                );
            }
        }

        // Balance: pv + sum(disch - ch) + imp - exp = base + dispatchable.
        let mut terms = Vec::new();
        for j in 0..s.storages.len() {
            terms.push((var(VarKind::DischargePower, Some(j), t), 1.0));
            terms.push((var(VarKind::ChargePower, Some(j), t), -1.0));
        }
        terms.push((p_imp, 1.0));
        let mut rhs = s.base_load.values[t] - s.pv.values[t];
        if correct {
            terms.push((var(VarKind::GridExport, None, t), -1.0));
            let num_loads = s.type1_loads.len() + s.type2_loads.len();
            let power_of = |k: usize| -> f64 {
                if k < s.type1_loads.len() {
                    s.type1_loads[k].power_kw
                } else {
                    s.type2_loads[k - s.type1_loads.len()].power_kw
                }
            };
            for k in 0..num_loads {
                terms.push((var(VarKind::LoadOn, Some(k), t), -power_of(k)));
            }
        } else {
            // Fixed demand: every load runs at rated power across its window.
            rhs += s.dispatchable_power_in_window(t);
        }
        m.add_constraint(format!("power_balance[{t}]"), terms, Relation::Eq, rhs);
    }

    // Objective: net cost of grid exchange.
    let mut objective = Vec::with_capacity(2 * t_steps);
    for t in 0..t_steps {
        objective.push((var(VarKind::GridImport, None, t), s.import_price.values[t] * dt));
        if correct {
            objective.push((var(VarKind::GridExport, None, t), -s.export_price.values[t] * dt));
        }
    }
    m.set_objective(objective);
    m.layout = Some(layout);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;
    use std::path::Path;

    fn table_like_scenario(exclusive: bool) -> Scenario {
        let text = format!(
            r#"
[time]
delta_t_hours = 0.5
num_steps = 48
start = "00:00"

[grid]
import_max_kw = 15.0
export_max_kw = 15.0
exclusive_exchange = {exclusive}

[prices]
import = 0.1
export = 0.1

[site]
pv = 0.0
base_load = 0.4

[[storage]]
name = "es"
charge_efficiency = 0.95
discharge_efficiency = 0.95
capacity_kwh = 12.0
soc_min_pct = 20.0
soc_max_pct = 100.0
soc_initial_pct = 20.0
soc_target_pct = 100.0
target_time = "23:00"
charge_max_kw = 4.0
discharge_max_kw = 4.0
discharge_enabled = false

[[storage]]
name = "ev"
charge_efficiency = 0.95
discharge_efficiency = 0.95
capacity_kwh = 40.0
soc_min_pct = 20.0
soc_max_pct = 100.0
soc_initial_pct = 20.0
soc_target_pct = 100.0
target_time = "07:30"
charge_max_kw = 7.0
discharge_max_kw = 7.0
discharge_enabled = false

[[type1_load]]
name = "cleaner"
power_kw = 0.6
duration_steps = 8

[[type2_load]]
name = "dishwasher"
power_kw = 1.0
duration_steps = 2
"#
        );
        parse_scenario(&text, Path::new(".")).unwrap()
    }

    #[test]
    fn layout_bijection_roundtrips() {
        let s = table_like_scenario(true);
        let m = build_model(&s);
        let layout = m.layout().unwrap();
        for idx in 0..layout.num_vars() {
            let id = layout.var_of(idx).unwrap();
            assert_eq!(layout.index(id), Some(idx));
        }
        // Kind-major, then device, then t: indices are strictly increasing
        // in that lexicographic order.
        let mut prev = None;
        for kind in VarKind::ALL {
            for d in 0..layout.kind_count(kind) / layout.num_steps.max(1) + 2 {
                for t in 0..layout.num_steps + 2 {
                    let device = match kind {
                        VarKind::GridImport
                        | VarKind::GridExport
                        | VarKind::ImportFlag
                        | VarKind::ExportFlag => None,
                        _ => Some(d),
                    };
                    if let Some(idx) = layout.index(VarId { kind, device, t }) {
                        if let Some(p) = prev {
                            assert!(idx > p, "layout order broken at {kind:?}[{d}][{t}]");
                        }
                        prev = Some(idx);
                    }
                }
            }
        }
    }

    #[test]
    fn binary_counts_match_layout_arithmetic() {
        // 2 storages * (mu_ch + mu_disch) * 48 + cleaner lambda * 48
        // + dishwasher (lambda + nu_s + nu_e) * 48 = 384.
        let s = table_like_scenario(false);
        let m = build_model(&s);
        assert_eq!(m.num_binaries(), 2 * 2 * 48 + 48 + 3 * 48);

        // Exclusive exchange adds mu_imp and mu_exp per step.
        let s = table_like_scenario(true);
        let m = build_model(&s);
        assert_eq!(m.num_binaries(), 2 * 2 * 48 + 48 + 3 * 48 + 2 * 48);
    }

    #[test]
    fn empty_scenario_has_only_balance_rows() {
        let text = r#"
[time]
delta_t_hours = 1.0
num_steps = 3

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
        let m = build_model(&s);
        let stats = model_stats(&m);
        assert_eq!(stats.num_constraints, 3);
        assert_eq!(stats.rows_by_family.get("power_balance"), Some(&3));
        assert_eq!(stats.num_binaries, 0);
        assert_eq!(stats.bounds_by_family.get("grid_import"), Some(&3));
    }

    #[test]
    fn export_disabled_fixes_export_bounds() {
        let s = {
            let text = r#"
[time]
delta_t_hours = 1.0
num_steps = 2

[grid]
import_max_kw = 5.0
export_max_kw = 5.0
export_enabled = false

[prices]
import = 0.1
export = 0.1

[site]
pv = 0.0
base_load = 0.3
"#;
            parse_scenario(text, Path::new(".")).unwrap()
        };
        let m = build_model(&s);
        let layout = m.layout().unwrap();
        for t in 0..2 {
            let j = layout.index(VarId { kind: VarKind::GridExport, device: None, t }).unwrap();
            assert_eq!(m.bounds()[j], (0.0, 0.0));
        }
    }

    #[test]
    fn misformulated_model_drops_export_and_load_control() {
        let s = table_like_scenario(false);
        let m = build_misformulated_model(&s);
        let layout = m.layout().unwrap();
        assert_eq!(layout.kind_count(VarKind::GridExport), 0);
        assert_eq!(layout.kind_count(VarKind::LoadOn), 0);
        assert_eq!(layout.kind_count(VarKind::RunStart), 0);
        assert_eq!(layout.kind_count(VarKind::RunEnd), 0);
        // Demand is fixed: balance rhs carries the always-on load power.
        let balance0 = m
            .constraints()
            .iter()
            .find(|c| c.tag == "power_balance[0]")
            .unwrap();
        // base 0.4 + cleaner 0.6 + dishwasher 1.0 - pv 0
        assert!((balance0.rhs - 2.0).abs() < 1e-12);
        // Objective only prices imports.
        assert!(m
            .objective()
            .iter()
            .all(|(j, c)| { layout.var_of(*j).unwrap().kind == VarKind::GridImport && *c > 0.0 }));
    }

    #[test]
    fn misformulated_demand_is_constant_function_of_scenario() {
        let s = table_like_scenario(false);
        let m = build_misformulated_model(&s);
        // No load variables exist, so per-step demand = rhs + pv - base is
        // fully determined by the scenario.
        for (t, c) in m
            .constraints()
            .iter()
            .filter(|c| c.family() == "power_balance")
            .enumerate()
        {
            let implied = c.rhs + s.pv.values[t] - s.base_load.values[t];
            assert!((implied - s.dispatchable_power_in_window(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn soc_recursion_rows_have_zero_residual_on_recursive_assignment() {
        use rand::{Rng, SeedableRng};
        let s = table_like_scenario(false);
        let m = build_model(&s);
        let layout = m.layout().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut values = vec![0.0; m.num_vars()];
        for (j, sto) in s.storages.iter().enumerate() {
            let mut soc = sto.soc_initial_pct;
            values[layout.index(VarId { kind: VarKind::Soc, device: Some(j), t: 0 }).unwrap()] =
                soc;
            for t in 0..s.num_steps() {
                let charge: f64 = rng.gen_range(0.0..sto.charge_max_kw);
                let discharge: f64 = rng.gen_range(0.0..sto.discharge_max_kw);
                values[layout
                    .index(VarId { kind: VarKind::ChargePower, device: Some(j), t })
                    .unwrap()] = charge;
                values[layout
                    .index(VarId { kind: VarKind::DischargePower, device: Some(j), t })
                    .unwrap()] = discharge;
                soc -= (discharge / sto.discharge_efficiency
                    - sto.charge_efficiency * charge)
                    * 100.0
                    * s.time.delta_t_hours
                    / sto.capacity_kwh;
                values[layout
                    .index(VarId { kind: VarKind::Soc, device: Some(j), t: t + 1 })
                    .unwrap()] = soc;
            }
        }
        let worst = m
            .constraints()
            .iter()
            .filter(|c| c.family() == "soc_recursion")
            .map(|c| c.violation(&values))
            .fold(0.0, f64::max);
        assert!(worst <= 1e-9, "soc recursion residual {worst}");
    }

    #[test]
    fn energy_rows_are_scalar_multiples_of_duration_rows() {
        // Derived energy makes the two families mutually consistent: any
        // on/off pattern meeting the duration row meets the energy row.
        let s = table_like_scenario(false);
        let m = build_model(&s);
        let dt = s.time.delta_t_hours;
        for l in s
            .type1_loads
            .iter()
            .map(|l| (&l.name, l.power_kw, l.duration_steps))
            .chain(s.type2_loads.iter().map(|l| (&l.name, l.power_kw, l.duration_steps)))
        {
            let (name, power, duration) = l;
            let energy = m
                .constraints()
                .iter()
                .find(|c| c.tag == format!("load_energy[{name}]"))
                .unwrap();
            let dur = m
                .constraints()
                .iter()
                .find(|c| c.tag == format!("load_duration[{name}]"))
                .unwrap();
            assert_eq!(energy.terms.len(), dur.terms.len());
            for ((j1, c1), (j2, c2)) in energy.terms.iter().zip(dur.terms.iter()) {
                assert_eq!(j1, j2);
                assert_eq!(*c1, c2 * power * dt);
            }
            assert_eq!(energy.rhs, duration as f64 * power * dt);
        }
    }

    #[test]
    fn dump_is_sorted_by_tag() {
        let s = table_like_scenario(false);
        let m = build_model(&s);
        let dump = m.dump();
        let lines: Vec<&str> = dump
            .lines()
            .skip_while(|l| *l != "# constraints:")
            .skip(1)
            .take_while(|l| !l.starts_with('#'))
            .collect();
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        assert!(lines.len() == m.constraints().len());
    }

    #[test]
    #[should_panic(expected = "duplicate constraint tag")]
    fn duplicate_tags_are_rejected() {
        let mut m = MilpModel::new();
        let x = m.add_var("x", 0.0, 1.0);
        m.add_constraint("a", vec![(x, 1.0)], Relation::Le, 1.0);
        m.add_constraint("a", vec![(x, 1.0)], Relation::Ge, 0.0);
    }
}
