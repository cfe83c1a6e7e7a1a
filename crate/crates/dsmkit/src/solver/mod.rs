//! Deterministic MILP solving: LP relaxation via the bounded-variable
//! simplex in [`simplex`], best-first branch-and-bound on binaries, and an
//! exhaustive enumeration oracle for small instances.
//!
//! Branching is on the most fractional binary (lowest index on ties);
//! nodes are explored best-first on their parent dual bound with creation
//! order as the tie-break, so repeated solves of the same model are
//! bit-identical. Each expanded node also tries a cheap rounding probe
//! (fix every binary to its rounded LP value, re-solve the LP) which
//! supplies incumbents early without affecting exactness.

mod simplex;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use crate::model::MilpModel;

/// Tolerances and budgets for [`solve_milp`]. The branch rule is fixed:
/// most-fractional binary, lowest index on ties.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// A binary counts as integral within this distance of 0 or 1.
    pub int_tol: f64,
    /// Relative optimality gap certified at `Optimal`.
    pub rel_gap: f64,
    /// Feasibility tolerance on constraint residuals.
    pub abs_feas_tol: f64,
    /// Branch-and-bound node budget.
    pub max_nodes: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            int_tol: 1e-6,
            rel_gap: 1e-6,
            abs_feas_tol: 1e-7,
            max_nodes: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NodeBudgetExceeded,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NodeBudgetExceeded => "node_budget_exceeded",
        };
        f.write_str(s)
    }
}

/// Solution of an LP relaxation.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: SolveStatus,
    /// Meaningful only when `status == Optimal`.
    pub objective: f64,
    /// Per-variable values in model order; empty unless `Optimal`.
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Solution of a MILP solve. `objective`/`values` describe the incumbent
/// and are meaningful when `status` is `Optimal`, or `NodeBudgetExceeded`
/// with a non-empty `values`.
#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    /// Branch-and-bound nodes whose LP was solved (1 for pure LPs).
    pub node_count: usize,
    /// Best dual bound at termination; equals `objective` when `Optimal`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("model has {count} free binaries, brute force cap is {cap}")]
    TooManyBinaries { count: usize, cap: usize },
}

/// Solves the LP relaxation of `model` (integrality ignored).
pub fn solve_lp(model: &MilpModel, opts: &SolverOptions) -> Result<LpSolution, SolverError> {
    let out = simplex::solve(model, model.bounds(), opts.abs_feas_tol)?;
    Ok(LpSolution {
        status: out.status,
        objective: out.objective,
        values: out.values,
        iterations: out.iterations,
    })
}

fn solve_lp_bounded(
    model: &MilpModel,
    bounds: &[(f64, f64)],
    opts: &SolverOptions,
) -> Result<simplex::SimplexOutcome, SolverError> {
    simplex::solve(model, bounds, opts.abs_feas_tol)
}

fn fractionality(v: f64) -> f64 {
    (v - v.round()).abs()
}

/// Most fractional binary (largest distance to an integer beyond
/// `int_tol`), lowest variable index on ties.
fn pick_branch_var(binaries: &[usize], values: &[f64], int_tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &j in binaries {
        let fr = fractionality(values[j]);
        if fr <= int_tol {
            continue;
        }
        match best {
            Some((_, bf)) if fr <= bf => {}
            _ => best = Some((j, fr)),
        }
    }
    best.map(|(j, _)| j)
}

struct Node {
    /// Chain of (binary var, fixed value) pairs from the root.
    fixes: Vec<(usize, f64)>,
    bound: f64,
    id: usize,
}

struct NodeKey {
    bound: f64,
    id: usize,
}

impl PartialEq for NodeKey {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for NodeKey {}
impl PartialOrd for NodeKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for NodeKey {
    // BinaryHeap is a max-heap; invert so the smallest bound (then the
    // oldest node) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Branch-and-bound over the model's binaries.
pub fn solve_milp(model: &MilpModel, opts: &SolverOptions) -> Result<MilpSolution, SolverError> {
    solve_milp_with_trace(model, opts, None)
}

/// Like [`solve_milp`], optionally writing a `node,bound,incumbent` line
/// per processed node.
pub fn solve_milp_with_trace(
    model: &MilpModel,
    opts: &SolverOptions,
    mut trace: Option<&mut dyn Write>,
) -> Result<MilpSolution, SolverError> {
    let binaries: Vec<usize> = model.binary_vars().collect();
    let base_bounds: Vec<(f64, f64)> = model.bounds().to_vec();

    let mut heap: BinaryHeap<NodeKey> = BinaryHeap::new();
    let mut nodes: Vec<Node> = Vec::new();
    nodes.push(Node { fixes: Vec::new(), bound: f64::NEG_INFINITY, id: 0 });
    heap.push(NodeKey { bound: f64::NEG_INFINITY, id: 0 });

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut processed = 0usize;
    let mut budget_hit = false;

    let prune_eps = |inc: f64| 1e-9 * inc.abs().max(1.0);

    while let Some(key) = heap.pop() {
        let node_id = key.id;
        if let Some((best, _)) = &incumbent {
            if key.bound >= best - prune_eps(*best) {
                continue;
            }
        }
        if processed >= opts.max_nodes {
            budget_hit = true;
            break;
        }
        processed += 1;

        let mut bounds = base_bounds.clone();
        for &(var, value) in &nodes[node_id].fixes {
            bounds[var] = (value, value);
        }

        let lp = solve_lp_bounded(model, &bounds, opts)?;
        if let Some(t) = trace.as_deref_mut() {
            let inc = incumbent.as_ref().map(|(v, _)| *v).unwrap_or(f64::INFINITY);
            let _ = writeln!(t, "{processed},{},{inc}", lp.objective);
        }
        match lp.status {
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded => {
                return Ok(MilpSolution {
                    status: SolveStatus::Unbounded,
                    objective: f64::NEG_INFINITY,
                    values: Vec::new(),
                    node_count: processed,
                    bound: f64::NEG_INFINITY,
                });
            }
            _ => {}
        }
        if let Some((best, _)) = &incumbent {
            if lp.objective >= best - prune_eps(*best) {
                continue;
            }
        }

        match pick_branch_var(&binaries, &lp.values, opts.int_tol) {
            None => {
                // Integral within tolerance. If any binary is not exactly
                // 0/1, clean up by fixing and re-solving.
                let exact = binaries.iter().all(|&j| {
                    let v = lp.values[j];
                    v == 0.0 || v == 1.0
                });
                let candidate = if exact {
                    Some((lp.objective, lp.values))
                } else {
                    let mut fixed = bounds.clone();
                    for &j in &binaries {
                        let v = lp.values[j].round();
                        fixed[j] = (v, v);
                    }
                    let clean = solve_lp_bounded(model, &fixed, opts)?;
                    if clean.status == SolveStatus::Optimal {
                        Some((clean.objective, clean.values))
                    } else {
                        None
                    }
                };
                match candidate {
                    Some((obj, values)) => {
                        if incumbent.as_ref().map_or(true, |(best, _)| obj < *best) {
                            incumbent = Some((obj, values));
                        }
                    }
                    None => {
                        // Rounding repair failed; force progress by fixing
                        // the first inexact binary both ways.
                        if let Some(&j) = binaries
                            .iter()
                            .find(|&&j| lp.values[j] != 0.0 && lp.values[j] != 1.0)
                        {
                            push_children(
                                &mut nodes,
                                &mut heap,
                                node_id,
                                j,
                                lp.objective,
                            );
                        }
                    }
                }
            }
            Some(branch_var) => {
                // Rounding probe: often lands on an optimal incumbent
                // immediately, which lets best-first prune everything else.
                let mut probe_bounds = bounds.clone();
                for &j in &binaries {
                    let v = lp.values[j].round();
                    probe_bounds[j] = (v, v);
                }
                let probe = solve_lp_bounded(model, &probe_bounds, opts)?;
                if probe.status == SolveStatus::Optimal
                    && incumbent.as_ref().map_or(true, |(best, _)| probe.objective < *best)
                {
                    incumbent = Some((probe.objective, probe.values));
                }

                let dominated = incumbent
                    .as_ref()
                    .map_or(false, |(best, _)| lp.objective >= best - prune_eps(*best));
                if !dominated {
                    push_children(&mut nodes, &mut heap, node_id, branch_var, lp.objective);
                }
            }
        }
    }

    let open_bound = heap
        .iter()
        .map(|k| k.bound)
        .fold(f64::INFINITY, f64::min);

    match incumbent {
        Some((objective, values)) => {
            let status =
                if budget_hit { SolveStatus::NodeBudgetExceeded } else { SolveStatus::Optimal };
            let bound = if budget_hit { open_bound.min(objective) } else { objective };
            debug_assert!(
                model.max_violation(&values) <= opts.abs_feas_tol * 10.0,
                "incumbent violates constraints by {}",
                model.max_violation(&values)
            );
            Ok(MilpSolution { status, objective, values, node_count: processed, bound })
        }
        None => {
            let status =
                if budget_hit { SolveStatus::NodeBudgetExceeded } else { SolveStatus::Infeasible };
            Ok(MilpSolution {
                status,
                objective: f64::INFINITY,
                values: Vec::new(),
                node_count: processed,
                bound: if budget_hit { open_bound } else { f64::INFINITY },
            })
        }
    }
}

fn push_children(
    nodes: &mut Vec<Node>,
    heap: &mut BinaryHeap<NodeKey>,
    parent: usize,
    var: usize,
    parent_bound: f64,
) {
    for value in [0.0, 1.0] {
        let mut fixes = nodes[parent].fixes.clone();
        fixes.push((var, value));
        let id = nodes.len();
        nodes.push(Node { fixes, bound: parent_bound, id });
        heap.push(NodeKey { bound: parent_bound, id });
    }
}

/// Exhaustive oracle: enumerates every assignment of the model's free
/// binaries (those not already fixed by bounds), solves the LP for each and
/// returns the best. Refuses models with more than `cap` free binaries.
pub fn brute_force_milp(
    model: &MilpModel,
    cap: usize,
    opts: &SolverOptions,
) -> Result<MilpSolution, SolverError> {
    let free: Vec<usize> = model
        .binary_vars()
        .filter(|&j| {
            let (lo, hi) = model.bounds()[j];
            lo < hi
        })
        .collect();
    if free.len() > cap {
        return Err(SolverError::TooManyBinaries { count: free.len(), cap });
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut any_unbounded = false;
    let count = 1usize << free.len();
    let mut bounds = model.bounds().to_vec();
    for assignment in 0..count {
        for (bit, &j) in free.iter().enumerate() {
            let v = ((assignment >> bit) & 1) as f64;
            bounds[j] = (v, v);
        }
        let lp = solve_lp_bounded(model, &bounds, opts)?;
        match lp.status {
            SolveStatus::Optimal => {
                if best.as_ref().map_or(true, |(obj, _)| lp.objective < *obj) {
                    best = Some((lp.objective, lp.values));
                }
            }
            SolveStatus::Unbounded => any_unbounded = true,
            _ => {}
        }
    }

    if any_unbounded {
        return Ok(MilpSolution {
            status: SolveStatus::Unbounded,
            objective: f64::NEG_INFINITY,
            values: Vec::new(),
            node_count: count,
            bound: f64::NEG_INFINITY,
        });
    }
    match best {
        Some((objective, values)) => Ok(MilpSolution {
            status: SolveStatus::Optimal,
            objective,
            values,
            node_count: count,
            bound: objective,
        }),
        None => Ok(MilpSolution {
            status: SolveStatus::Infeasible,
            objective: f64::INFINITY,
            values: Vec::new(),
            node_count: count,
            bound: f64::INFINITY,
        }),
    }
}
