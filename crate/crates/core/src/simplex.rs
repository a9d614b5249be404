//! Dense two-phase simplex for small equality-form linear programs,
//! `min c^T u` subject to `E u = b`, `u >= 0`.
//!
//! Pivoting uses Bland's smallest-index rule in both phases, which rules
//! out cycling on degenerate vertices at the cost of speed. Problem sizes
//! here are tiny (tens of rows), so the full tableau is kept explicitly.

use ndarray::{Array1, Array2};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;

#[derive(Debug)]
pub(crate) enum LpOutcome {
    Optimal {
        x: Array1<f64>,
        objective: f64,
        pivots: usize,
    },
    Infeasible,
    Unbounded,
    /// Pivot budget exhausted; with Bland's rule this should only happen
    /// on problems far larger than this solver is meant for.
    Stalled,
}

enum StepResult {
    Optimal,
    Unbounded,
    Budget,
}

struct Tableau {
    /// rows x (structural + artificial + rhs)
    t: Vec<Vec<f64>>,
    cost: Vec<f64>,
    cost_rhs: f64,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.t[0].len() - 1
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let rhs = self.rhs_col();
        let piv = self.t[row][col];
        for j in 0..=rhs {
            self.t[row][j] /= piv;
        }
        for i in 0..self.t.len() {
            if i == row {
                continue;
            }
            let factor = self.t[i][col];
            if factor != 0.0 {
                for j in 0..=rhs {
                    self.t[i][j] -= factor * self.t[row][j];
                }
                self.t[i][col] = 0.0;
            }
        }
        let factor = self.cost[col];
        if factor != 0.0 {
            for j in 0..=rhs {
                if j < self.cost.len() {
                    self.cost[j] -= factor * self.t[row][j];
                }
            }
            self.cost_rhs -= factor * self.t[row][rhs];
            self.cost[col] = 0.0;
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Bland ratio test: among rows with positive column entry, pick the
    /// smallest ratio, breaking ties by smallest basis index.
    fn leaving_row(&self, col: usize) -> Option<usize> {
        let rhs = self.rhs_col();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..self.t.len() {
            let a = self.t[i][col];
            if a > PIVOT_TOL {
                let ratio = self.t[i][rhs].max(0.0) / a;
                let key = (ratio, self.basis[i]);
                match best {
                    Some((r, b, _)) if (key.0, key.1) >= (r, b) => {}
                    _ => best = Some((key.0, key.1, i)),
                }
            }
        }
        best.map(|(_, _, i)| i)
    }

    /// Run simplex iterations restricted to columns `0..allowed`.
    fn optimize(&mut self, allowed: usize, max_pivots: usize) -> StepResult {
        for _ in 0..max_pivots {
            let entering = (0..allowed).find(|&j| self.cost[j] < -COST_TOL);
            let Some(col) = entering else {
                return StepResult::Optimal;
            };
            let Some(row) = self.leaving_row(col) else {
                return StepResult::Unbounded;
            };
            self.pivot(row, col);
        }
        StepResult::Budget
    }
}

pub(crate) fn solve_standard_lp(c: &Array1<f64>, e: &Array2<f64>, b: &Array1<f64>) -> LpOutcome {
    let (rows, cols) = e.dim();
    assert_eq!(c.len(), cols);
    assert_eq!(b.len(), rows);

    // Phase 1 tableau with artificial columns and nonnegative rhs.
    let mut t = vec![vec![0.0; cols + rows + 1]; rows];
    for i in 0..rows {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..cols {
            t[i][j] = flip * e[[i, j]];
        }
        t[i][cols + i] = 1.0;
        t[i][cols + rows] = flip * b[i];
    }
    // Reduced costs of min sum(artificials) with the artificial basis.
    let mut cost = vec![0.0; cols + rows];
    for j in 0..cols {
        cost[j] = -(0..rows).map(|i| t[i][j]).sum::<f64>();
    }
    let cost_rhs = -(0..rows).map(|i| t[i][cols + rows]).sum::<f64>();

    let mut tab = Tableau {
        t,
        cost,
        cost_rhs,
        basis: (cols..cols + rows).collect(),
        pivots: 0,
    };
    let max_pivots = 50_000 + 200 * (rows + cols);
    match tab.optimize(cols + rows, max_pivots) {
        StepResult::Optimal => {}
        StepResult::Unbounded => return LpOutcome::Unbounded,
        StepResult::Budget => return LpOutcome::Stalled,
    }
    let phase1 = -tab.cost_rhs;
    if phase1 > 1e-7 {
        return LpOutcome::Infeasible;
    }

    // Drive remaining artificials out of the basis; rows that cannot be
    // pivoted are redundant and get dropped.
    let mut drop_rows = Vec::new();
    for i in 0..tab.t.len() {
        if tab.basis[i] >= cols {
            let col = (0..cols).find(|&j| tab.t[i][j].abs() > PIVOT_TOL);
            match col {
                Some(j) => tab.pivot(i, j),
                None => drop_rows.push(i),
            }
        }
    }
    if !drop_rows.is_empty() {
        for &i in drop_rows.iter().rev() {
            tab.t.remove(i);
            tab.basis.remove(i);
        }
    }

    // Phase 2: original costs reduced against the current basis. The cost
    // vector only needs to cover structural columns; pivot updates guard
    // on its length.
    let rhs = tab.rhs_col();
    let mut cost2 = c.to_vec();
    let mut cost2_rhs = 0.0;
    for (i, &bi) in tab.basis.iter().enumerate() {
        let cb = if bi < cols { c[bi] } else { 0.0 };
        if cb != 0.0 {
            for (c2, t) in cost2.iter_mut().zip(&tab.t[i]) {
                *c2 -= cb * t;
            }
            cost2_rhs -= cb * tab.t[i][rhs];
        }
    }
    tab.cost = cost2;
    tab.cost_rhs = cost2_rhs;
    match tab.optimize(cols, max_pivots) {
        StepResult::Optimal => {}
        StepResult::Unbounded => return LpOutcome::Unbounded,
        StepResult::Budget => return LpOutcome::Stalled,
    }

    let mut x = Array1::zeros(cols);
    for (i, &bi) in tab.basis.iter().enumerate() {
        if bi < cols {
            x[bi] = tab.t[i][rhs].max(0.0);
        }
    }
    let objective = c.dot(&x);
    LpOutcome::Optimal {
        x,
        objective,
        pivots: tab.pivots,
    }
}
