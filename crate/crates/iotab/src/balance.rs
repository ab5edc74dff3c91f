//! Cross-entropy matrix balancing with sign-preserving multipliers.
//!
//! Given a prior table (the estimate) and target gross outputs, the balanced
//! table minimizes the generalized cross-entropy
//!
//! ```text
//! G(p) = sum |p| * ln(|p| / (e * |p0|))
//! ```
//!
//! over tables `p` with the prior's sign pattern, subject to: every industry
//! row and column sums to its target, and, when a linked final-demand-column
//! / value-added-row pair is active, their totals agree. The first-order
//! conditions give each cell in closed form from one multiplier per row
//! (`a_i = e^lambda_i`), one per column (`b_j = e^tau_j`) and one for the
//! linked pair (`c = e^eta`): a cell is its prior times a product of these
//! factors when the prior is positive, and divided by that product when
//! negative. Zero cells stay exactly zero and signs never flip, whatever the
//! multipliers, so those two invariants hold by construction.
//!
//! The multiplier factor per block, for positive priors:
//!
//! ```text
//! intermediate (i,j):        a_i * b_j
//! final demand (i, non-link): a_i         linked column: a_i / c
//! value added  (non-link, j): b_j         linked row:    b_j * c
//! ```
//!
//! Negative priors divide by the same factor. The linked-pair multiplier has
//! a closed form given rows and columns (a positive root of a quadratic in
//! `c^2`), so the solver works in the 2K-dimensional log-multiplier space:
//! damped Newton steps on the row/column residuals, with the Jacobian by
//! central differences and a minimum-norm pseudo-inverse step. The
//! pseudo-inverse matters: when the prior has no mass outside the
//! intermediate block, a common factor can slide between rows and columns
//! (shift every lambda up and every tau down) and the Jacobian is singular
//! along that direction. If Newton stalls, a classic alternating-scaling
//! pass (closed-form row update, then columns, then the link) runs as a
//! fallback before giving up.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mat::{compensated_sum, Mat};
use crate::table::{CellGrid, IODimensions, IOTable};

/// Balancing problem in normalized units: all cells and targets divided by
/// the table total, so row/column targets sum to 1.
#[derive(Clone, Debug)]
pub struct BalanceProblem {
    pub dims: IODimensions,
    /// Prior cells over the combined frame, absent cells as 0.
    p0: Mat,
    /// Row/column targets for the K industries.
    y: Vec<f64>,
    /// Frame indices of the linked pair: (column, row), when active.
    phi: Option<(usize, usize)>,
    /// Original table total, kept to scale results back.
    total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Multipliers {
    /// Row factors `e^lambda`, one per industry; 1 for zero rows.
    pub row_factors: Vec<f64>,
    /// Column factors `e^tau`, one per industry; 1 for zero columns.
    pub col_factors: Vec<f64>,
    /// Linked-pair factor `e^eta`; 1 when the link is inactive.
    pub link_factor: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    /// Convergence threshold on the residual infinity norm (normalized
    /// units).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Step halvings per Newton iteration before declaring a stall.
    pub max_halvings: usize,
    /// Alternating-scaling sweeps tried after a Newton stall.
    pub fallback_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tolerance: 1e-10, max_iterations: 200, max_halvings: 30, fallback_sweeps: 50 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Diagnostics {
    /// Largest constraint residual of the reconstructed table (normalized).
    pub max_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Balanced table in normalized units plus solve diagnostics.
#[derive(Clone, Debug)]
pub struct BalancedTable {
    pub cells: Mat,
    pub diagnostics: Diagnostics,
}

impl BalanceProblem {
    pub fn industries(&self) -> usize {
        self.dims.industries
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn prior(&self) -> &Mat {
        &self.p0
    }

    /// Combined multiplier factor of a frame cell for a positive prior;
    /// negative priors divide by it. Encodes the five first-order cases.
    fn factor(&self, m: &Multipliers, i: usize, j: usize) -> f64 {
        let k = self.dims.industries;
        match (i < k, j < k) {
            (true, true) => m.row_factors[i] * m.col_factors[j],
            (true, false) => {
                if self.phi.map_or(false, |(col, _)| col == j) {
                    m.row_factors[i] / m.link_factor
                } else {
                    m.row_factors[i]
                }
            }
            (false, true) => {
                if self.phi.map_or(false, |(_, row)| row == i) {
                    m.col_factors[j] * m.link_factor
                } else {
                    m.col_factors[j]
                }
            }
            (false, false) => 1.0,
        }
    }

    /// Balanced value of one frame cell under the given multipliers.
    pub fn cell_value(&self, m: &Multipliers, i: usize, j: usize) -> f64 {
        let p = self.p0[(i, j)];
        if p == 0.0 {
            0.0
        } else if p > 0.0 {
            p * self.factor(m, i, j)
        } else {
            p / self.factor(m, i, j)
        }
    }

    /// Row and column constraint residuals (2K entries: rows then columns).
    /// Zero-target rows and columns contribute exact zeros.
    pub fn residuals(&self, m: &Multipliers) -> Vec<f64> {
        let k = self.dims.industries;
        let mut r = vec![0.0; 2 * k];
        for i in 0..k {
            if self.y[i] == 0.0 {
                continue;
            }
            let sum = compensated_sum((0..self.dims.frame_cols()).map(|j| self.cell_value(m, i, j)));
            r[i] = sum - self.y[i];
        }
        for j in 0..k {
            if self.y[j] == 0.0 {
                continue;
            }
            let sum = compensated_sum((0..self.dims.frame_rows()).map(|i| self.cell_value(m, i, j)));
            r[k + j] = sum - self.y[j];
        }
        r
    }

    /// Residual of the linked-pair constraint (row total minus column
    /// total); 0 when the link is inactive.
    pub fn link_residual(&self, m: &Multipliers) -> f64 {
        let Some((col, row)) = self.phi else { return 0.0 };
        let k = self.dims.industries;
        let row_total = compensated_sum((0..k).map(|j| self.cell_value(m, row, j)));
        let col_total = compensated_sum((0..k).map(|i| self.cell_value(m, i, col)));
        row_total - col_total
    }

    /// Closed form for the linked-pair factor given row and column factors:
    /// equating the two linked totals yields
    /// `c^2 = (Pc - Nr) / (Pr - Nc)` where `Pc`/`Nc` split the linked
    /// column's positive/negative mass (scaled by current row factors) and
    /// `Pr`/`Nr` the linked row's (scaled by column factors). Structural
    /// checks at build time guarantee numerator and denominator are either
    /// both zero (no linked mass; factor 1) or both positive.
    fn solve_link_factor(&self, row_factors: &[f64], col_factors: &[f64]) -> f64 {
        let Some((col, row)) = self.phi else { return 1.0 };
        let k = self.dims.industries;
        let mut pr = 0.0;
        let mut nr = 0.0;
        for j in 0..k {
            let p = self.p0[(row, j)];
            if p > 0.0 {
                pr += p * col_factors[j];
            } else if p < 0.0 {
                nr += p / col_factors[j];
            }
        }
        let mut pc = 0.0;
        let mut nc = 0.0;
        for i in 0..k {
            let p = self.p0[(i, col)];
            if p > 0.0 {
                pc += p * row_factors[i];
            } else if p < 0.0 {
                nc += p / row_factors[i];
            }
        }
        let numerator = pc - nr;
        let denominator = pr - nc;
        if numerator <= 0.0 || denominator <= 0.0 {
            return 1.0; // both structurally zero: no linked mass
        }
        (numerator / denominator).sqrt()
    }
}

/// Normalizes a prior table and targets into a solvable problem, checking
/// the structural feasibility conditions that multipliers cannot repair.
pub fn build_problem(
    prior: &IOTable,
    gross_outputs: &[f64],
    total: f64,
    use_phi: bool,
) -> Result<BalanceProblem> {
    let dims = prior.dims;
    dims.validate()?;
    let k = dims.industries;
    if gross_outputs.len() != k {
        return Err(Error::InvalidData(format!(
            "expected {k} gross outputs, got {}",
            gross_outputs.len()
        )));
    }
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidData(format!("table total must be positive, got {total}")));
    }
    let mut y = Vec::with_capacity(k);
    for (i, &g) in gross_outputs.iter().enumerate() {
        if !g.is_finite() || g < 0.0 {
            return Err(Error::Infeasible(format!("gross output {i} is {g}; targets must be nonnegative")));
        }
        y.push(g / total);
    }
    let y_sum = compensated_sum(y.iter().copied());
    if (y_sum - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidData(format!(
            "gross outputs sum to {} times the stated total; they must match it",
            y_sum
        )));
    }

    let mut p0 = Mat::zeros(dims.frame_rows(), dims.frame_cols());
    for i in 0..dims.frame_rows() {
        for j in 0..dims.frame_cols() {
            p0[(i, j)] = prior.frame_cell(i, j).unwrap_or(0.0) / total;
        }
    }

    let phi = match (use_phi, dims.phi_fd, dims.phi_gva) {
        (true, Some(f), Some(g)) => Some((k + f, k + g)),
        _ => None,
    };

    // Zero-target industries must be empty in the prior: a multiplier can
    // never move mass onto or off a zero target.
    for i in 0..k {
        if y[i] > 0.0 {
            let row_pos = (0..dims.frame_cols()).any(|j| p0[(i, j)] > 0.0);
            let col_pos = (0..dims.frame_rows()).any(|r| p0[(r, i)] > 0.0);
            if !row_pos || !col_pos {
                return Err(Error::Infeasible(format!(
                    "industry {i} has a positive target but no positive prior mass in its row or column"
                )));
            }
        } else {
            let row_zero = (0..dims.frame_cols()).all(|j| p0[(i, j)] == 0.0);
            let col_zero = (0..dims.frame_rows()).all(|r| p0[(r, i)] == 0.0);
            if !(row_zero && col_zero) {
                return Err(Error::Infeasible(format!(
                    "industry {i} has target 0 but nonzero prior cells in its row or column"
                )));
            }
        }
    }

    if let Some((col, row)) = phi {
        let mut pos_col = false;
        let mut neg_col = false;
        for i in 0..k {
            let p = p0[(i, col)];
            pos_col |= p > 0.0;
            neg_col |= p < 0.0;
        }
        let mut pos_row = false;
        let mut neg_row = false;
        for j in 0..k {
            let p = p0[(row, j)];
            pos_row |= p > 0.0;
            neg_row |= p < 0.0;
        }
        // c^2 = (Pc - Nr)/(Pr - Nc): one side structurally zero with the
        // other positive leaves the linked totals permanently unequal.
        let numerator_zero = !pos_col && !neg_row;
        let denominator_zero = !pos_row && !neg_col;
        if numerator_zero != denominator_zero {
            return Err(Error::Infeasible(
                "the linked column and row have sign structures that can never balance".into(),
            ));
        }
    }

    Ok(BalanceProblem { dims, p0, y, phi, total })
}

fn multipliers_from_log(problem: &BalanceProblem, active: &[bool], x: &[f64]) -> Multipliers {
    let k = problem.dims.industries;
    let mut row_factors = vec![1.0; k];
    let mut col_factors = vec![1.0; k];
    let mut t = 0;
    for i in 0..k {
        if active[i] {
            row_factors[i] = x[t].exp();
            t += 1;
        }
    }
    for j in 0..k {
        if active[j] {
            col_factors[j] = x[t].exp();
            t += 1;
        }
    }
    let link_factor = problem.solve_link_factor(&row_factors, &col_factors);
    Multipliers { row_factors, col_factors, link_factor }
}

fn active_residuals(problem: &BalanceProblem, active: &[bool], m: &Multipliers) -> DVector<f64> {
    let k = problem.dims.industries;
    let full = problem.residuals(m);
    let mut out = Vec::with_capacity(2 * active.iter().filter(|a| **a).count());
    for i in 0..k {
        if active[i] {
            out.push(full[i]);
        }
    }
    for j in 0..k {
        if active[j] {
            out.push(full[k + j]);
        }
    }
    DVector::from_vec(out)
}

/// One alternating-scaling sweep: closed-form row factors, then the link,
/// then column factors, then the link again. Each update solves its own
/// constraint exactly given the others, the positive root of
/// `P e^2 - y e + N = 0` in the factor `e`.
fn alternating_sweep(problem: &BalanceProblem, active: &[bool], m: &mut Multipliers) {
    let k = problem.dims.industries;
    let quadratic_root = |p: f64, n: f64, y: f64, current: f64| -> f64 {
        if p > 0.0 {
            (y + (y * y - 4.0 * p * n).sqrt()) / (2.0 * p)
        } else {
            current // no positive mass; leave unchanged (build forbids this for active lines)
        }
    };
    for i in 0..k {
        if !active[i] {
            continue;
        }
        // Row sum as a function of this row's factor e: P*e + N/e.
        let mut p_coef = 0.0;
        let mut n_coef = 0.0;
        for j in 0..problem.dims.frame_cols() {
            let p = problem.p0[(i, j)];
            if p == 0.0 {
                continue;
            }
            let other = problem.factor(m, i, j) / m.row_factors[i];
            if p > 0.0 {
                p_coef += p * other;
            } else {
                n_coef += p / other;
            }
        }
        m.row_factors[i] = quadratic_root(p_coef, n_coef, problem.y[i], m.row_factors[i]);
    }
    m.link_factor = problem.solve_link_factor(&m.row_factors, &m.col_factors);
    for j in 0..k {
        if !active[j] {
            continue;
        }
        let mut p_coef = 0.0;
        let mut n_coef = 0.0;
        for i in 0..problem.dims.frame_rows() {
            let p = problem.p0[(i, j)];
            if p == 0.0 {
                continue;
            }
            let other = problem.factor(m, i, j) / m.col_factors[j];
            if p > 0.0 {
                p_coef += p * other;
            } else {
                n_coef += p / other;
            }
        }
        m.col_factors[j] = quadratic_root(p_coef, n_coef, problem.y[j], m.col_factors[j]);
    }
    m.link_factor = problem.solve_link_factor(&m.row_factors, &m.col_factors);
}

struct SolveOutcome {
    multipliers: Multipliers,
    iterations: usize,
}

fn solve_inner(problem: &BalanceProblem, cfg: &SolverConfig) -> Result<SolveOutcome> {
    let k = problem.dims.industries;
    let active: Vec<bool> = (0..k).map(|i| problem.y[i] > 0.0).collect();
    let n_active = active.iter().filter(|a| **a).count();
    let n_unknowns = 2 * n_active;

    let mut x = vec![0.0; n_unknowns];
    let mut m = multipliers_from_log(problem, &active, &x);
    let mut r = active_residuals(problem, &active, &m);
    let mut best_norm = r.amax();
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        if best_norm < cfg.tolerance {
            return Ok(SolveOutcome { multipliers: m, iterations });
        }
        iterations += 1;

        // Central-difference Jacobian of the active residuals.
        let h = 1e-6;
        let mut jac = DMatrix::zeros(n_unknowns, n_unknowns);
        for c in 0..n_unknowns {
            let mut xp = x.clone();
            xp[c] += h;
            let rp = active_residuals(problem, &active, &multipliers_from_log(problem, &active, &xp));
            xp[c] -= 2.0 * h;
            let rm = active_residuals(problem, &active, &multipliers_from_log(problem, &active, &xp));
            for row in 0..n_unknowns {
                jac[(row, c)] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let svd = jac.svd(true, true);
        let Ok(step) = svd.solve(&(-&r), 1e-13) else { break };

        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, si)| xi + scale * si).collect();
            let tm = multipliers_from_log(problem, &active, &trial);
            let tr = active_residuals(problem, &active, &tm);
            let tn = tr.amax();
            if tn.is_finite() && tn < best_norm {
                x = trial;
                m = tm;
                r = tr;
                best_norm = tn;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break; // stalled; try alternating scaling
        }
    }

    if best_norm < cfg.tolerance {
        return Ok(SolveOutcome { multipliers: m, iterations });
    }
    for _ in 0..cfg.fallback_sweeps {
        iterations += 1;
        alternating_sweep(problem, &active, &mut m);
        let r = active_residuals(problem, &active, &m);
        let norm = r.amax().max(problem.link_residual(&m).abs());
        if norm < best_norm {
            best_norm = norm;
        }
        if norm < cfg.tolerance {
            return Ok(SolveOutcome { multipliers: m, iterations });
        }
    }
    Err(Error::NoConvergence { iterations, residual: best_norm })
}

/// Solves for the multipliers. Already-consistent priors return unit
/// multipliers without any Newton iteration.
pub fn solve(problem: &BalanceProblem, cfg: &SolverConfig) -> Result<Multipliers> {
    solve_inner(problem, cfg).map(|o| o.multipliers)
}

/// Applies multipliers to the prior, producing the balanced table in
/// normalized units together with the achieved residuals.
pub fn reconstruct(problem: &BalanceProblem, m: &Multipliers) -> BalancedTable {
    let mut cells = Mat::zeros(problem.dims.frame_rows(), problem.dims.frame_cols());
    for i in 0..problem.dims.frame_rows() {
        for j in 0..problem.dims.frame_cols() {
            cells[(i, j)] = problem.cell_value(m, i, j);
        }
    }
    let constraint = problem
        .residuals(m)
        .iter()
        .fold(0.0_f64, |acc, r| acc.max(r.abs()))
        .max(problem.link_residual(m).abs());
    BalancedTable {
        cells,
        diagnostics: Diagnostics { max_residual: constraint, iterations: 0, converged: constraint < 1e-8 },
    }
}

/// Value of the minimized cross-entropy at a candidate table (normalized
/// units). Cells with zero prior are excluded; they carry no entropy.
pub fn cross_entropy_objective(problem: &BalanceProblem, cells: &Mat) -> f64 {
    let mut total = 0.0;
    for i in 0..problem.dims.frame_rows() {
        for j in 0..problem.dims.frame_cols() {
            let p0 = problem.p0[(i, j)];
            let p = cells[(i, j)];
            if p0 != 0.0 && p != 0.0 {
                total += p.abs() * (p.abs() / (std::f64::consts::E * p0.abs())).ln();
            }
        }
    }
    total
}

#[derive(Clone, Debug)]
pub struct BalanceReport {
    pub iterations: usize,
    pub max_residual: f64,
    pub converged: bool,
    pub objective: f64,
}

/// End-to-end balancing: normalize, solve, reconstruct and scale back to
/// table units. The output keeps the prior's absence pattern and carries the
/// target gross outputs.
pub fn balance_with_report(
    prior: &IOTable,
    gross_outputs: &[f64],
    total: f64,
    use_phi: bool,
    cfg: &SolverConfig,
) -> Result<(IOTable, BalanceReport)> {
    let problem = build_problem(prior, gross_outputs, total, use_phi)?;
    let outcome = solve_inner(&problem, cfg)?;
    let balanced = reconstruct(&problem, &outcome.multipliers);

    let dims = problem.dims;
    let k = dims.industries;
    let grid = |i0: usize, j0: usize, rows: usize, cols: usize, source: &CellGrid| {
        CellGrid::from_fn(rows, cols, |i, j| {
            source.get(i, j)?;
            Some(balanced.cells[(i0 + i, j0 + j)] * total)
        })
    };
    let intermediate = grid(0, 0, k, k, &prior.intermediate);
    let final_demand = grid(0, k, k, dims.fd_cols, &prior.final_demand);
    let value_added = grid(k, 0, dims.gva_rows, k, &prior.value_added);
    let outputs = gross_outputs.iter().map(|g| Some(*g)).collect();
    let table = IOTable::new(dims, intermediate, final_demand, value_added, outputs)?;

    let report = BalanceReport {
        iterations: outcome.iterations,
        max_residual: balanced.diagnostics.max_residual,
        converged: true,
        objective: cross_entropy_objective(&problem, &balanced.cells),
    };
    Ok((table, report))
}

pub fn balance(
    prior: &IOTable,
    gross_outputs: &[f64],
    total: f64,
    use_phi: bool,
    cfg: &SolverConfig,
) -> Result<IOTable> {
    balance_with_report(prior, gross_outputs, total, use_phi, cfg).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::CellGrid;

    /// Balanced prior with a linked pair and negative cells: shares of each
    /// block sum to one, so rows and columns meet their targets exactly.
    fn structured_table(dims: IODimensions, total: f64, y: &[f64], delta: &[f64], nu: &[f64]) -> IOTable {
        let k = dims.industries;
        let c = 0.45;
        let a = CellGrid::from_fn(k, k, |i, j| Some(total * c * y[i] * y[j]));
        let d = CellGrid::from_fn(k, dims.fd_cols, |i, g| Some(total * (1.0 - c) * y[i] * delta[g]));
        let v = CellGrid::from_fn(dims.gva_rows, k, |h, j| Some(total * (1.0 - c) * y[j] * nu[h]));
        let yv = y.iter().map(|s| Some(total * s)).collect();
        IOTable::new(dims, a, d, v, yv).unwrap()
    }

    fn phi_fixture() -> (IOTable, Vec<f64>, f64) {
        let dims = IODimensions::new(3, 2, 3).with_phi(0, 0);
        let y = [0.5, 0.3, 0.2];
        let total = 1000.0;
        // Last final-demand column is negative (net exports); shares sum to 1.
        let delta = [0.4, 0.75, -0.15];
        let nu = [0.4, 0.6];
        let table = structured_table(dims, total, &y, &delta, &nu);
        let outputs: Vec<f64> = y.iter().map(|s| s * total).collect();
        (table, outputs, total)
    }

    #[test]
    fn consistent_prior_returns_unit_multipliers_immediately() {
        let (table, outputs, total) = phi_fixture();
        let problem = build_problem(&table, &outputs, total, true).unwrap();
        let outcome = solve_inner(&problem, &SolverConfig::default()).unwrap();
        assert!(outcome.iterations <= 2, "took {} iterations", outcome.iterations);
        for f in outcome.multipliers.row_factors.iter().chain(&outcome.multipliers.col_factors) {
            assert!((f - 1.0).abs() < 1e-8, "factor {f}");
        }
        assert!((outcome.multipliers.link_factor - 1.0).abs() < 1e-8);
    }

    fn perturb(table: &IOTable, magnitude: f64) -> IOTable {
        // Deterministic multiplicative perturbation preserving signs and
        // zeros; factors vary cell by cell.
        let mut out = table.clone();
        let mut state = 0.37_f64;
        let mut next = || {
            state = (state * 997.0 + 0.1234).fract();
            1.0 + magnitude * (2.0 * state - 1.0)
        };
        for i in 0..table.dims.frame_rows() {
            for j in 0..table.dims.frame_cols() {
                if let Some(v) = table.frame_cell(i, j) {
                    out.set_frame_cell(i, j, Some(v * next()));
                }
            }
        }
        out
    }

    #[test]
    fn perturbed_prior_balances_with_signs_and_zeros_preserved() {
        let (table, outputs, total) = phi_fixture();
        let mut prior = perturb(&table, 0.3);
        prior.intermediate.set(1, 2, Some(0.0));
        let (balanced, report) = balance_with_report(&prior, &outputs, total, true, &SolverConfig::default()).unwrap();

        assert!(report.converged);
        assert!(report.max_residual < 1e-10, "residual {}", report.max_residual);
        assert!(balanced.is_balanced(1e-8));
        // Zero stays exactly zero; signs match the prior everywhere.
        assert_eq!(balanced.intermediate.get(1, 2), Some(0.0));
        for i in 0..prior.dims.frame_rows() {
            for j in 0..prior.dims.frame_cols() {
                let (p, b) = (prior.frame_cell(i, j), balanced.frame_cell(i, j));
                match (p, b) {
                    (Some(p), Some(b)) => {
                        assert_eq!(p == 0.0, b == 0.0, "zero pattern at ({i},{j})");
                        assert!(p.signum() == b.signum() || p == 0.0, "sign at ({i},{j})");
                    }
                    (None, None) => {}
                    other => panic!("absence pattern changed at ({i},{j}): {other:?}"),
                }
            }
        }
        // The linked pair balances too.
        let k = table.dims.industries;
        let row_total: f64 = (0..k).map(|j| balanced.value_added.get(0, j).unwrap()).sum();
        let col_total: f64 = (0..k).map(|i| balanced.final_demand.get(i, 0).unwrap()).sum();
        assert!((row_total - col_total).abs() < 1e-6 * total);
    }

    #[test]
    fn all_positive_case_matches_iterative_proportional_fitting() {
        let dims = IODimensions::new(3, 1, 2);
        let y = [0.25, 0.45, 0.3];
        let total = 600.0;
        let table = structured_table(dims, total, &y, &[0.3, 0.7], &[1.0]);
        let prior = perturb(&table, 0.25);
        let outputs: Vec<f64> = y.iter().map(|s| s * total).collect();
        let (balanced, _) = balance_with_report(&prior, &outputs, total, false, &SolverConfig::default()).unwrap();

        // Plain row/column scaling on the full frame, the textbook method
        // for all-positive tables: only industry rows/columns are scaled.
        let (rows, cols) = (dims.frame_rows(), dims.frame_cols());
        let mut cells = vec![vec![0.0; cols]; rows];
        for i in 0..rows {
            for j in 0..cols {
                cells[i][j] = prior.frame_cell(i, j).unwrap_or(0.0);
            }
        }
        for _ in 0..500 {
            for i in 0..3 {
                let sum: f64 = cells[i].iter().sum();
                let f = outputs[i] / sum;
                cells[i].iter_mut().for_each(|c| *c *= f);
            }
            for j in 0..3 {
                let sum: f64 = (0..rows).map(|i| cells[i][j]).sum();
                let f = outputs[j] / sum;
                (0..rows).for_each(|i| cells[i][j] *= f);
            }
        }
        for i in 0..rows {
            for j in 0..cols {
                if let Some(b) = balanced.frame_cell(i, j) {
                    assert!(
                        (b - cells[i][j]).abs() < 1e-8 * total,
                        "cell ({i},{j}): {b} vs {}",
                        cells[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn zero_target_industry_passes_through_as_zeros() {
        let dims = IODimensions::new(3, 1, 2);
        let y = [0.6, 0.4, 0.0];
        let total = 100.0;
        // Build with a zero industry: its row and column are all zero.
        let mut table = structured_table(dims, total, &[0.6, 0.4, 0.0], &[0.4, 0.6], &[1.0]);
        for j in 0..dims.frame_cols() {
            table.set_frame_cell(2, j, Some(0.0));
        }
        for i in 0..dims.frame_rows() {
            table.set_frame_cell(i, 2, Some(0.0));
        }
        let outputs: Vec<f64> = y.iter().map(|s| s * total).collect();
        let prior = perturb(&table, 0.2);
        let (balanced, _) = balance_with_report(&prior, &outputs, total, false, &SolverConfig::default()).unwrap();
        for j in 0..dims.frame_cols() {
            assert_eq!(balanced.frame_cell(2, j), Some(0.0));
        }
        for i in 0..dims.frame_rows() {
            assert_eq!(balanced.frame_cell(i, 2), Some(0.0));
        }
    }

    #[test]
    fn zero_target_with_nonzero_prior_is_infeasible() {
        let dims = IODimensions::new(2, 1, 1);
        let table = IOTable::new(
            dims,
            CellGrid::from_fn(2, 2, |_, _| Some(1.0)),
            CellGrid::filled(2, 1, 1.0),
            CellGrid::filled(1, 2, 1.0),
            vec![Some(3.0), Some(3.0)],
        )
        .unwrap();
        let err = build_problem(&table, &[6.0, 0.0], 6.0, false).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
    }

    #[test]
    fn mismatched_totals_are_rejected() {
        let (table, outputs, total) = phi_fixture();
        let err = build_problem(&table, &outputs, total * 1.01, false).unwrap_err();
        assert!(matches!(err, Error::InvalidData(_)), "{err}");
    }

    #[test]
    fn solving_is_deterministic() {
        let (table, outputs, total) = phi_fixture();
        let prior = perturb(&table, 0.3);
        let problem = build_problem(&prior, &outputs, total, true).unwrap();
        let a = solve(&problem, &SolverConfig::default()).unwrap();
        let b = solve(&problem, &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn intermediate_only_prior_survives_the_gauge_direction() {
        // No final-demand or value-added mass: the log-multiplier system has
        // a free direction (lambda up, tau down). The pseudo-inverse step
        // must still converge to a balanced table.
        let dims = IODimensions::new(3, 1, 1);
        let k = 3;
        let weights = [0.5, 0.3, 0.2];
        let a = CellGrid::from_fn(k, k, |i, j| Some(100.0 * weights[i] * weights[j]));
        let d = CellGrid::filled(k, 1, 0.0);
        let v = CellGrid::filled(1, k, 0.0);
        let y = weights.iter().map(|w| Some(100.0 * w)).collect();
        let table = IOTable::new(dims, a, d, v, y).unwrap();
        let prior = perturb(&table, 0.2);
        let outputs: Vec<f64> = weights.iter().map(|w| w * 100.0).collect();
        let (balanced, report) =
            balance_with_report(&prior, &outputs, 100.0, false, &SolverConfig::default()).unwrap();
        assert!(report.max_residual < 1e-10, "residual {}", report.max_residual);
        assert!(balanced.is_balanced(1e-8));
    }
}
