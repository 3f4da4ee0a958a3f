//! Nash values and mixed strategies of finite zero-sum matrix games.
//!
//! The solver runs a dense primal simplex on the classical normalized form:
//! entries are shifted so the game value is strictly positive, the column
//! player's scaled strategy is the primal solution and the row player's falls
//! out of the dual prices. Matrices in this problem family are at most 9x5,
//! so a self-contained solver is both sufficient and deterministic: fixed
//! pivot rules make the returned vertex a pure function of the input matrix.

use thiserror::Error;

/// Default tolerance on the saddle-point residuals of a returned solution.
pub const DEFAULT_TOL: f64 = 1e-9;

const PIVOT_EPS: f64 = 1e-9;
const PIVOT_CAP: usize = 10_000;
// Consecutive stalled pivots before switching to Bland's anti-cycling rule.
const STALL_LIMIT: usize = 50;

/// Dense payoff matrix; rows belong to the maximizer, columns to the
/// minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl QMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MatrixGameError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(MatrixGameError::Empty);
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MatrixGameError::Empty);
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_flat(data.len() / cols, cols, data)
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatrixGameError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(MatrixGameError::Empty);
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(MatrixGameError::NonFinite);
        }
        Ok(QMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, MatrixGameError> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_flat(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// A probability vector over an action set.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPolicy {
    pub probs: Vec<f64>,
}

impl MixedPolicy {
    pub fn uniform(n: usize) -> Self {
        if n == 0 {
            return MixedPolicy { probs: Vec::new() };
        }
        MixedPolicy {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Entries nonnegative and summing to 1 within `tol`.
    pub fn is_distribution(&self, tol: f64) -> bool {
        if self.probs.is_empty() {
            return false;
        }
        let sum: f64 = self.probs.iter().sum();
        self.probs.iter().all(|&p| p >= -tol) && (sum - 1.0).abs() <= tol
    }

    /// Sample an index; consumes exactly one uniform draw from `rng`.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> usize {
        let r: f64 = rng.gen::<f64>();
        let mut cum = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            cum += p;
            if r < cum {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Value and equilibrium strategies of a matrix game.
#[derive(Debug, Clone)]
pub struct MatrixGameSolution {
    pub value: f64,
    pub row_policy: MixedPolicy,
    pub col_policy: MixedPolicy,
}

#[derive(Debug, Error)]
pub enum MatrixGameError {
    #[error("payoff matrix must have at least one row and one column")]
    Empty,
    #[error("payoff matrix contains a non-finite entry")]
    NonFinite,
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("simplex did not converge within {0} pivots")]
    PivotCap(usize),
    #[error("simplex produced no improving pivot on an unbounded column (internal error)")]
    Unbounded,
    #[error("returned strategies fail the saddle-point check: residual {residual:e} > tol {tol:e}")]
    SaddleCheck { residual: f64, tol: f64 },
}

/// Solve the zero-sum matrix game to its Nash value and a mixed-strategy
/// saddle point. The best pure deviation of either player against the
/// returned pair improves by at most `tol`.
pub fn solve_matrix_game(q: &QMatrix, tol: f64) -> Result<MatrixGameSolution, MatrixGameError> {
    if !(tol > 0.0) {
        return Err(MatrixGameError::BadTolerance(tol));
    }
    let (m, n) = (q.rows, q.cols);
    // Shift entries so the minimum is exactly 1: the shifted value is then
    // strictly positive and the normalized LP below is bounded and feasible.
    let min_entry = q.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min_entry;

    let mut tableau = Simplex::new(m, n, |i, j| q.get(i, j) + shift);
    tableau.run()?;

    let (scaled_col, scaled_row, objective) = tableau.extract();
    // objective = sum of the scaled column strategy = 1 / shifted value.
    let shifted_value = 1.0 / objective;
    let value = shifted_value - shift;

    let row_policy = normalize(scaled_row);
    let col_policy = normalize(scaled_col);

    // Saddle-point residuals on the original matrix.
    let mut worst_col = f64::INFINITY;
    for j in 0..n {
        let mut payoff = 0.0;
        for i in 0..m {
            payoff += row_policy.probs[i] * q.get(i, j);
        }
        worst_col = worst_col.min(payoff);
    }
    let mut worst_row = f64::NEG_INFINITY;
    for i in 0..m {
        let mut payoff = 0.0;
        for j in 0..n {
            payoff += col_policy.probs[j] * q.get(i, j);
        }
        worst_row = worst_row.max(payoff);
    }
    let residual = (value - worst_col).max(worst_row - value);
    if residual > tol {
        return Err(MatrixGameError::SaddleCheck { residual, tol });
    }

    Ok(MatrixGameSolution {
        value,
        row_policy,
        col_policy,
    })
}

/// Nash value of the matrix game at the default tolerance.
pub fn nash_value(q: &QMatrix) -> Result<f64, MatrixGameError> {
    Ok(solve_matrix_game(q, DEFAULT_TOL)?.value)
}

fn normalize(mut probs: Vec<f64>) -> MixedPolicy {
    for p in probs.iter_mut() {
        if *p <= 0.0 {
            *p = 0.0;
        }
    }
    let sum: f64 = probs.iter().sum();
    if sum > 0.0 {
        for p in probs.iter_mut() {
            *p /= sum;
        }
    } else {
        let n = probs.len();
        probs = vec![1.0 / n as f64; n];
    }
    MixedPolicy { probs }
}

/// Dense tableau for `max 1'y  s.t.  A y <= 1, y >= 0` with `A > 0`.
///
/// Columns `0..n` are the structural variables, `n..n+m` the slacks. The
/// initial slack basis is feasible, and positivity of `A` keeps every column
/// bounded, so phase one is never needed. Pivoting is Dantzig's rule with
/// lowest-index tie-breaks, falling back to Bland's rule after a run of
/// degenerate pivots.
struct Simplex {
    m: usize,
    n: usize,
    // m rows of n + m + 1 entries; the last entry is the right-hand side.
    rows: Vec<Vec<f64>>,
    // Reduced profit per column (length n + m).
    obj: Vec<f64>,
    basis: Vec<usize>,
    objective: f64,
}

impl Simplex {
    fn new(m: usize, n: usize, a: impl Fn(usize, usize) -> f64) -> Self {
        let width = n + m + 1;
        let mut rows = Vec::with_capacity(m);
        for i in 0..m {
            let mut row = vec![0.0; width];
            for j in 0..n {
                row[j] = a(i, j);
            }
            row[n + i] = 1.0;
            row[width - 1] = 1.0;
            rows.push(row);
        }
        let mut obj = vec![0.0; n + m];
        for j in 0..n {
            obj[j] = 1.0;
        }
        Simplex {
            m,
            n,
            rows,
            obj,
            basis: (n..n + m).collect(),
            objective: 0.0,
        }
    }

    fn run(&mut self) -> Result<(), MatrixGameError> {
        let mut bland = false;
        let mut stalled = 0usize;
        for _pivot in 0..PIVOT_CAP {
            let entering = if bland {
                self.obj.iter().position(|&c| c > PIVOT_EPS)
            } else {
                let mut best: Option<(usize, f64)> = None;
                for (j, &c) in self.obj.iter().enumerate() {
                    if c > PIVOT_EPS && best.map_or(true, |(_, bc)| c > bc) {
                        best = Some((j, c));
                    }
                }
                best.map(|(j, _)| j)
            };
            let Some(e) = entering else {
                return Ok(());
            };

            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let coef = self.rows[i][e];
                if coef > PIVOT_EPS {
                    let ratio = self.rows[i][self.n + self.m] / coef;
                    let better = match leaving {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - PIVOT_EPS
                                || (ratio < lr + PIVOT_EPS
                                    && if bland {
                                        self.basis[i] < self.basis[li]
                                    } else {
                                        i < li
                                    })
                        }
                    };
                    if better {
                        leaving = Some((i, ratio));
                    }
                }
            }
            let Some((l, _)) = leaving else {
                return Err(MatrixGameError::Unbounded);
            };

            let before = self.objective;
            self.pivot(l, e);
            if self.objective - before < 1e-12 {
                stalled += 1;
                if stalled > STALL_LIMIT {
                    bland = true;
                }
            } else {
                stalled = 0;
            }
        }
        Err(MatrixGameError::PivotCap(PIVOT_CAP))
    }

    fn pivot(&mut self, l: usize, e: usize) {
        let width = self.n + self.m + 1;
        let pivot = self.rows[l][e];
        for j in 0..width {
            self.rows[l][j] /= pivot;
        }
        for i in 0..self.m {
            if i == l {
                continue;
            }
            let factor = self.rows[i][e];
            if factor != 0.0 {
                for j in 0..width {
                    self.rows[i][j] -= factor * self.rows[l][j];
                }
            }
        }
        let factor = self.obj[e];
        if factor != 0.0 {
            for j in 0..self.n + self.m {
                self.obj[j] -= factor * self.rows[l][j];
            }
            self.objective += factor * self.rows[l][width - 1];
        }
        self.basis[l] = e;
    }

    /// (structural primal values, dual prices, objective value).
    fn extract(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let mut y = vec![0.0; self.n];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n {
                y[b] = self.rows[i][self.n + self.m];
            }
        }
        let mut duals = vec![0.0; self.m];
        for i in 0..self.m {
            duals[i] = -self.obj[self.n + i];
        }
        (y, duals, self.objective)
    }
}
