//! Small dense two-phase simplex.
//!
//! Solves `max c·x` subject to linear rows of kind `<=`, `>=` or `=` with
//! `x >= 0`. Pivoting uses Bland's rule, so it cannot cycle. Problems here
//! have a handful of rows and at most a few thousand columns.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub kind: RowKind,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<f64>, kind: RowKind, rhs: f64) -> Self {
        Self { coeffs, kind, rhs }
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per row; `>= 0` for `Le`, `<= 0` for `Ge`, free for `Eq`.
    pub duals: Vec<f64>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LpError {
    #[error("row {0} has the wrong number of coefficients")]
    Shape(usize),
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
}

const EPS: f64 = 1e-10;
const MAX_PIVOTS: usize = 200_000;

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.width]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (i, r) in self.t.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                r[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Optimizes the objective row over columns `< allowed`.
    fn run(&mut self, allowed: usize) -> Result<(), LpError> {
        let m = self.basis.len();
        for _ in 0..MAX_PIVOTS {
            let obj = &self.t[m];
            let Some(col) = (0..allowed).find(|&j| obj[j] < -EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[i][col];
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - EPS || (ratio <= lr + EPS && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let (row, _) = leave.ok_or(LpError::Unbounded)?;
            self.pivot(row, col);
        }
        Err(LpError::IterationLimit)
    }

    fn set_objective(&mut self, cost: &[f64]) {
        let m = self.basis.len();
        let mut obj = vec![0.0; self.width + 1];
        for (j, c) in cost.iter().enumerate() {
            obj[j] = -c;
        }
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (o, v) in obj.iter_mut().zip(&self.t[i]) {
                    *o += cb * v;
                }
            }
        }
        self.t[m] = obj;
    }
}

/// Maximizes `c·x` over the rows with `x >= 0`.
pub fn maximize(c: &[f64], rows: &[Row]) -> Result<LpSolution, LpError> {
    let n = c.len();
    let m = rows.len();
    for (i, r) in rows.iter().enumerate() {
        if r.coeffs.len() != n {
            return Err(LpError::Shape(i));
        }
    }
    // normalize to nonnegative right-hand sides
    let mut sign = vec![1.0; m];
    let mut kinds = Vec::with_capacity(m);
    for (i, r) in rows.iter().enumerate() {
        let mut kind = r.kind;
        if r.rhs < 0.0 {
            sign[i] = -1.0;
            kind = match kind {
                RowKind::Le => RowKind::Ge,
                RowKind::Ge => RowKind::Le,
                RowKind::Eq => RowKind::Eq,
            };
        }
        kinds.push(kind);
    }
    let slack_count = kinds.iter().filter(|k| **k != RowKind::Eq).count();
    let art_count = kinds.iter().filter(|k| **k != RowKind::Le).count();
    let art_start = n + slack_count;
    let width = art_start + art_count;

    let mut t = vec![vec![0.0; width + 1]; m + 1];
    let mut basis = vec![0; m];
    // column in the tableau whose reduced cost reads off each row's dual, and its sign
    let mut dual_col = vec![(0usize, 1.0f64); m];
    let (mut next_slack, mut next_art) = (n, art_start);
    for i in 0..m {
        for j in 0..n {
            t[i][j] = sign[i] * rows[i].coeffs[j];
        }
        t[i][width] = sign[i] * rows[i].rhs;
        match kinds[i] {
            RowKind::Le => {
                t[i][next_slack] = 1.0;
                basis[i] = next_slack;
                dual_col[i] = (next_slack, 1.0);
                next_slack += 1;
            }
            RowKind::Ge => {
                t[i][next_slack] = -1.0;
                dual_col[i] = (next_slack, -1.0);
                next_slack += 1;
                t[i][next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
            RowKind::Eq => {
                t[i][next_art] = 1.0;
                basis[i] = next_art;
                dual_col[i] = (next_art, 1.0);
                next_art += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, width };

    if art_count > 0 {
        let mut phase1 = vec![0.0; width];
        for c in phase1.iter_mut().skip(art_start) {
            *c = -1.0;
        }
        tab.set_objective(&phase1);
        tab.run(width)?;
        let infeasibility = -tab.t[m][width];
        let scale = rows.iter().map(|r| r.rhs.abs()).fold(1.0, f64::max);
        if infeasibility > 1e-9 * scale {
            return Err(LpError::Infeasible);
        }
        // drive zero-valued artificials out of the basis where possible
        for i in 0..m {
            if tab.basis[i] >= art_start {
                if let Some(j) = (0..art_start).find(|&j| tab.t[i][j].abs() > EPS) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(c);
    tab.set_objective(&cost);
    tab.run(art_start)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.rhs(i);
        }
    }
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    let duals = (0..m)
        .map(|i| {
            let (col, s) = dual_col[i];
            sign[i] * s * tab.t[m][col]
        })
        .collect();
    Ok(LpSolution { x, objective, duals })
}
