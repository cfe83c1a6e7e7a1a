//! Primal simplex for linear programs with boxed variables.
//!
//! The solver works on the equality form `A x = b`, `l <= x <= u` obtained
//! by adding one slack per inequality row. Infeasible starting rows get an
//! artificial variable and a phase-1 objective (sum of artificials); no
//! big-M terms anywhere. The basis inverse is kept as a dense matrix and
//! updated per pivot; a refactorization from scratch only happens when a
//! pivot looks numerically unsafe or the final residual check fails.
//!
//! Pivoting is Dantzig (most negative reduced cost) with a switch to
//! Bland's rule after `5 * num_columns` iterations, which guarantees
//! termination on degenerate instances. All tie-breaks are by lowest
//! index, so identical inputs produce identical outputs bit for bit.

use crate::model::{MilpModel, Relation};

use super::{SolveStatus, SolverError};

const ZERO_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-9;
const PIVOT_MIN: f64 = 1e-9;
const RATIO_TIE_TOL: f64 = 1e-9;

/// Raw result of one simplex run on the equality form.
#[derive(Debug, Clone)]
pub(crate) struct SimplexOutcome {
    pub status: SolveStatus,
    /// Structural variable values (model variables only).
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Solves the LP relaxation of `model` under `bounds` (which may tighten
/// the model's own bounds, e.g. with branching fixations).
pub(crate) fn solve(
    model: &MilpModel,
    bounds: &[(f64, f64)],
    feas_tol: f64,
) -> Result<SimplexOutcome, SolverError> {
    let n_struct = model.num_vars();
    debug_assert_eq!(bounds.len(), n_struct);

    for (j, (lo, hi)) in bounds.iter().enumerate() {
        if lo.is_nan() || hi.is_nan() {
            return Err(SolverError::NumericalBreakdown(format!(
                "variable {j} has NaN bounds"
            )));
        }
        if *lo == f64::NEG_INFINITY {
            return Err(SolverError::NumericalBreakdown(format!(
                "variable {j} has no finite lower bound; boxed variables required"
            )));
        }
        if lo > hi {
            // Crossed bounds make the box empty.
            return Ok(SimplexOutcome {
                status: SolveStatus::Infeasible,
                values: Vec::new(),
                objective: f64::INFINITY,
                iterations: 0,
            });
        }
    }

    let mut sx = Simplex::build(model, bounds);
    let outcome = sx.run(feas_tol)?;
    Ok(outcome)
}

struct Simplex {
    n_struct: usize,
    n_rows: usize,
    /// Columns of the equality form, structural then slack then artificial.
    cols: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    art_start: usize,

    basis: Vec<usize>,
    row_of: Vec<usize>,
    at_upper: Vec<bool>,
    x: Vec<f64>,
    binv: Vec<f64>,
    iterations: usize,
}

const NOT_BASIC: usize = usize::MAX;

impl Simplex {
    fn build(model: &MilpModel, bounds: &[(f64, f64)]) -> Simplex {
        let n_struct = model.num_vars();
        let rows = model.constraints();
        let n_rows = rows.len();

        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_struct];
        let mut lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let mut upper: Vec<f64> = bounds.iter().map(|b| b.1).collect();
        let mut cost = vec![0.0; n_struct];
        for (j, c) in model.objective() {
            cost[*j] += *c;
        }
        let mut rhs = Vec::with_capacity(n_rows);

        for (i, row) in rows.iter().enumerate() {
            for (j, a) in &row.terms {
                if *a != 0.0 {
                    cols[*j].push((i, *a));
                }
            }
            rhs.push(row.rhs);
        }

        // Nonbasic start: everything at its (finite) lower bound.
        let mut x: Vec<f64> = lower.clone();
        let mut residual = rhs.clone();
        for j in 0..n_struct {
            if x[j] != 0.0 {
                for &(i, a) in &cols[j] {
                    residual[i] -= a * x[j];
                }
            }
        }

        // One slack per inequality; it becomes basic when that leaves it
        // inside its own bounds, otherwise an artificial takes the row.
        let mut basis = vec![NOT_BASIC; n_rows];
        let mut slack_of_row = vec![NOT_BASIC; n_rows];
        for (i, row) in rows.iter().enumerate() {
            let sign = match row.relation {
                Relation::Le => 1.0,
                Relation::Ge => -1.0,
                Relation::Eq => continue,
            };
            let j = cols.len();
            cols.push(vec![(i, sign)]);
            lower.push(0.0);
            upper.push(f64::INFINITY);
            cost.push(0.0);
            x.push(0.0);
            slack_of_row[i] = j;
        }
        let art_start = cols.len();
        let mut diag = vec![1.0; n_rows];
        for i in 0..n_rows {
            let slack = slack_of_row[i];
            let r = residual[i];
            let slack_value = match rows[i].relation {
                Relation::Le => r,
                Relation::Ge => -r,
                Relation::Eq => f64::NEG_INFINITY,
            };
            if slack != NOT_BASIC && slack_value >= 0.0 {
                basis[i] = slack;
                x[slack] = slack_value;
                diag[i] = match rows[i].relation {
                    Relation::Le => 1.0,
                    _ => -1.0,
                };
            } else {
                let sign = if r >= 0.0 { 1.0 } else { -1.0 };
                let j = cols.len();
                cols.push(vec![(i, sign)]);
                lower.push(0.0);
                upper.push(f64::INFINITY);
                cost.push(0.0);
                x.push(r.abs());
                basis[i] = j;
                diag[i] = sign;
            }
        }

        let n_total = cols.len();
        let mut row_of = vec![NOT_BASIC; n_total];
        for (i, &b) in basis.iter().enumerate() {
            row_of[b] = i;
        }
        // Initial basis is diagonal (+/-1 per row), so its inverse is too.
        let mut binv = vec![0.0; n_rows * n_rows];
        for i in 0..n_rows {
            binv[i * n_rows + i] = 1.0 / diag[i];
        }

        Simplex {
            n_struct,
            n_rows,
            cols,
            lower,
            upper,
            rhs,
            cost,
            art_start,
            basis,
            row_of,
            at_upper: vec![false; n_total],
            x,
            binv,
            iterations: 0,
        }
    }

    fn n_total(&self) -> usize {
        self.cols.len()
    }

    fn has_artificials(&self) -> bool {
        self.art_start < self.n_total()
    }

    fn run(&mut self, feas_tol: f64) -> Result<SimplexOutcome, SolverError> {
        if self.has_artificials() {
            let phase1_cost: Vec<f64> = (0..self.n_total())
                .map(|j| if j >= self.art_start { 1.0 } else { 0.0 })
                .collect();
            match self.optimize(&phase1_cost)? {
                RunEnd::Optimal => {}
                RunEnd::Unbounded => {
                    return Err(SolverError::NumericalBreakdown(
                        "phase-1 objective reported unbounded".into(),
                    ))
                }
            }
            let infeasibility: f64 =
                (self.art_start..self.n_total()).map(|j| self.x[j]).sum();
            if infeasibility > feas_tol {
                return Ok(SimplexOutcome {
                    status: SolveStatus::Infeasible,
                    values: Vec::new(),
                    objective: f64::INFINITY,
                    iterations: self.iterations,
                });
            }
            self.retire_artificials()?;
        }

        let cost = self.cost.clone();
        let status = match self.optimize(&cost)? {
            RunEnd::Optimal => SolveStatus::Optimal,
            RunEnd::Unbounded => SolveStatus::Unbounded,
        };
        if status == SolveStatus::Unbounded {
            return Ok(SimplexOutcome {
                status,
                values: Vec::new(),
                objective: f64::NEG_INFINITY,
                iterations: self.iterations,
            });
        }

        // Safety net: if the updated inverse drifted, refactor once and
        // re-optimize from the repaired state.
        self.recompute_basics();
        if self.max_row_residual() > 0.5 * feas_tol.max(1e-9) {
            self.refactor()?;
            self.recompute_basics();
            let cost = self.cost.clone();
            self.optimize(&cost)?;
            self.recompute_basics();
        }

        let values: Vec<f64> = self.x[..self.n_struct].to_vec();
        let objective = values
            .iter()
            .enumerate()
            .map(|(j, v)| self.cost[j] * v)
            .sum();
        Ok(SimplexOutcome {
            status: SolveStatus::Optimal,
            values,
            objective,
            iterations: self.iterations,
        })
    }

    /// Pivots basic artificials out where possible and pins all artificials
    /// to zero so phase 2 cannot reuse them.
    fn retire_artificials(&mut self) -> Result<(), SolverError> {
        for row in 0..self.n_rows {
            let b = self.basis[row];
            if b < self.art_start {
                continue;
            }
            // Any non-artificial column with a usable pivot element in this
            // row can take the basic slot (degenerate pivot, step 0).
            let mut entering = None;
            for j in 0..self.art_start {
                if self.row_of[j] != NOT_BASIC {
                    continue;
                }
                let alpha: f64 = self.cols[j]
                    .iter()
                    .map(|&(i, a)| self.binv[row * self.n_rows + i] * a)
                    .sum();
                if alpha.abs() > 1e-7 {
                    entering = Some(j);
                    break;
                }
            }
            if let Some(j) = entering {
                let w = self.ftran(j);
                // Degenerate pivot: the artificial sits at zero, its lower
                // bound, and stays there.
                self.pivot(j, row, &w, 0.0, self.at_upper[j], false);
            }
            // Rows without a replacement are redundant; the artificial
            // stays basic but is pinned at zero below.
        }
        for j in self.art_start..self.n_total() {
            self.lower[j] = 0.0;
            self.upper[j] = 0.0;
            if self.row_of[j] == NOT_BASIC {
                self.x[j] = 0.0;
            }
        }
        Ok(())
    }

    fn optimize(&mut self, cost: &[f64]) -> Result<RunEnd, SolverError> {
        let n_total = self.n_total();
        let dantzig_limit = 5 * n_total;
        let iter_cap = 20_000 + 200 * (n_total + self.n_rows);
        let mut local_iters = 0usize;
        let mut just_refactored = false;

        loop {
            if local_iters > iter_cap {
                return Err(SolverError::NumericalBreakdown(format!(
                    "simplex iteration cap {iter_cap} exceeded"
                )));
            }
            let bland = local_iters > dantzig_limit;

            // Pricing: y = B^-T c_B, then reduced costs on nonbasic columns.
            let mut y = vec![0.0; self.n_rows];
            for i in 0..self.n_rows {
                let cb = cost[self.basis[i]];
                if cb != 0.0 {
                    let row = &self.binv[i * self.n_rows..(i + 1) * self.n_rows];
                    for (k, &v) in row.iter().enumerate() {
                        y[k] += cb * v;
                    }
                }
            }

            let mut entering: Option<(usize, f64)> = None;
            for j in 0..n_total {
                if self.row_of[j] != NOT_BASIC || self.lower[j] >= self.upper[j] {
                    continue;
                }
                let mut d = cost[j];
                for &(i, a) in &self.cols[j] {
                    d -= y[i] * a;
                }
                let improving = if self.at_upper[j] { d > COST_TOL } else { d < -COST_TOL };
                if !improving {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                match entering {
                    Some((_, best)) if d.abs() <= best.abs() => {}
                    _ => entering = Some((j, d)),
                }
            }

            let Some((e, _)) = entering else {
                return Ok(RunEnd::Optimal);
            };

            let sigma = if self.at_upper[e] { -1.0 } else { 1.0 };
            let w = self.ftran(e);

            // Ratio test over basics plus the entering variable's own range.
            let own_limit = self.upper[e] - self.lower[e];
            let mut t_row = f64::INFINITY;
            // (row, |pivot|, leaving variable exits at its upper bound)
            let mut candidates: Vec<(usize, f64, bool)> = Vec::new();
            for r in 0..self.n_rows {
                let delta = sigma * w[r];
                if delta.abs() <= ZERO_TOL {
                    continue;
                }
                let b = self.basis[r];
                let (t, to_upper) = if delta > 0.0 {
                    ((self.x[b] - self.lower[b]) / delta, false)
                } else {
                    let ub = self.upper[b];
                    if ub == f64::INFINITY {
                        continue;
                    }
                    ((self.x[b] - ub) / delta, true)
                };
                let t = t.max(0.0);
                if t < t_row - RATIO_TIE_TOL {
                    t_row = t;
                    candidates.clear();
                    candidates.push((r, w[r].abs(), to_upper));
                } else if t <= t_row + RATIO_TIE_TOL {
                    t_row = t_row.min(t);
                    candidates.push((r, w[r].abs(), to_upper));
                }
            }

            if own_limit <= t_row {
                if own_limit == f64::INFINITY {
                    return Ok(RunEnd::Unbounded);
                }
                // Bound flip: the entering variable runs to its other bound
                // before any basic hits one.
                for r in 0..self.n_rows {
                    if w[r] != 0.0 {
                        let b = self.basis[r];
                        self.x[b] -= own_limit * sigma * w[r];
                    }
                }
                self.at_upper[e] = !self.at_upper[e];
                self.x[e] = if self.at_upper[e] { self.upper[e] } else { self.lower[e] };
                local_iters += 1;
                self.iterations += 1;
                continue;
            }

            let (leave_row, leave_at_upper) = if bland {
                let c = candidates
                    .iter()
                    .min_by_key(|c| self.basis[c.0])
                    .expect("ratio test found no row");
                (c.0, c.2)
            } else {
                let mut best = candidates[0];
                for c in &candidates[1..] {
                    if c.1 > best.1 + 1e-12
                        || (c.1 >= best.1 - 1e-12 && self.basis[c.0] < self.basis[best.0])
                    {
                        best = *c;
                    }
                }
                (best.0, best.2)
            };

            let alpha = w[leave_row];
            if alpha.abs() < PIVOT_MIN {
                if just_refactored {
                    return Err(SolverError::NumericalBreakdown(format!(
                        "pivot magnitude {alpha:e} below threshold"
                    )));
                }
                self.refactor()?;
                self.recompute_basics();
                just_refactored = true;
                continue;
            }
            just_refactored = false;

            self.pivot(e, leave_row, &w, t_row, self.at_upper[e], leave_at_upper);
            local_iters += 1;
            self.iterations += 1;

            if self.iterations % 64 == 0 {
                self.recompute_basics();
            }
        }
    }

    /// w = B^-1 A_e.
    fn ftran(&self, e: usize) -> Vec<f64> {
        let m = self.n_rows;
        let mut w = vec![0.0; m];
        for &(k, a) in &self.cols[e] {
            for i in 0..m {
                w[i] += self.binv[i * m + k] * a;
            }
        }
        w
    }

    /// Swaps `entering` into the basis at `row`, moving the leaving
    /// variable to the bound the ratio test selected.
    fn pivot(
        &mut self,
        entering: usize,
        row: usize,
        w: &[f64],
        t: f64,
        from_upper: bool,
        leave_at_upper: bool,
    ) {
        let m = self.n_rows;
        let sigma = if from_upper { -1.0 } else { 1.0 };
        let leaving = self.basis[row];

        for r in 0..m {
            if r != row && w[r] != 0.0 {
                let b = self.basis[r];
                self.x[b] -= t * sigma * w[r];
            }
        }
        self.x[leaving] =
            if leave_at_upper { self.upper[leaving] } else { self.lower[leaving] };
        self.at_upper[leaving] = leave_at_upper;
        let start = if from_upper { self.upper[entering] } else { self.lower[entering] };
        self.x[entering] = start + sigma * t;

        self.basis[row] = entering;
        self.row_of[entering] = row;
        self.row_of[leaving] = NOT_BASIC;

        // Elementary update of the dense inverse.
        let alpha = w[row];
        let inv_alpha = 1.0 / alpha;
        let (head, tail) = self.binv.split_at_mut(row * m);
        let (pivot_row, rest) = tail.split_at_mut(m);
        for v in pivot_row.iter_mut() {
            *v *= inv_alpha;
        }
        for (r, chunk) in head.chunks_exact_mut(m).enumerate() {
            let f = w[r];
            if f != 0.0 {
                for (v, p) in chunk.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * *p;
                }
            }
        }
        for (roff, chunk) in rest.chunks_exact_mut(m).enumerate() {
            let f = w[row + 1 + roff];
            if f != 0.0 {
                for (v, p) in chunk.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * *p;
                }
            }
        }
    }

    /// x_B = B^-1 (b - N x_N) with the current inverse.
    fn recompute_basics(&mut self) {
        let m = self.n_rows;
        let mut r = self.rhs.clone();
        for j in 0..self.n_total() {
            if self.row_of[j] == NOT_BASIC && self.x[j] != 0.0 {
                for &(i, a) in &self.cols[j] {
                    r[i] -= a * self.x[j];
                }
            }
        }
        for i in 0..m {
            let mut v = 0.0;
            let row = &self.binv[i * m..(i + 1) * m];
            for (k, &rk) in r.iter().enumerate() {
                if rk != 0.0 {
                    v += row[k] * rk;
                }
            }
            self.x[self.basis[i]] = v;
        }
    }

    /// Largest violation of the equality rows by the current point.
    fn max_row_residual(&self) -> f64 {
        let mut r = self.rhs.clone();
        for j in 0..self.n_total() {
            let v = self.x[j];
            if v != 0.0 {
                for &(i, a) in &self.cols[j] {
                    r[i] -= a * v;
                }
            }
        }
        r.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Rebuilds the dense inverse from the basis columns (Gauss-Jordan with
    /// partial pivoting).
    fn refactor(&mut self) -> Result<(), SolverError> {
        let m = self.n_rows;
        let mut mat = vec![0.0; m * m];
        for (r, &b) in self.basis.iter().enumerate() {
            for &(i, a) in &self.cols[b] {
                mat[i * m + r] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for k in 0..m {
            let mut p = k;
            let mut best = mat[k * m + k].abs();
            for r in k + 1..m {
                let v = mat[r * m + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < 1e-11 {
                return Err(SolverError::NumericalBreakdown(
                    "singular basis during refactorization".into(),
                ));
            }
            if p != k {
                for c in 0..m {
                    mat.swap(k * m + c, p * m + c);
                    inv.swap(k * m + c, p * m + c);
                }
            }
            let piv = mat[k * m + k];
            let inv_piv = 1.0 / piv;
            for c in 0..m {
                mat[k * m + c] *= inv_piv;
                inv[k * m + c] *= inv_piv;
            }
            for r in 0..m {
                if r == k {
                    continue;
                }
                let f = mat[r * m + k];
                if f != 0.0 {
                    for c in 0..m {
                        mat[r * m + c] -= f * mat[k * m + c];
                        inv[r * m + c] -= f * inv[k * m + c];
                    }
                }
            }
        }
        self.binv = inv;
        Ok(())
    }
}

enum RunEnd {
    Optimal,
    Unbounded,
}
