//! Dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 z' H z + f' z
//!     subject to  A z <= b
//! ```
//!
//! with a dual active-set method (Goldfarb-Idnani). Every iterate is the
//! minimizer over the current working set with non-negative multipliers, so
//! no feasible starting point is needed and an empty intersection of the
//! constraints is detected directly. Equality-constrained subproblems are
//! solved through the Cholesky factor of `H` and the Schur complement of the
//! working set.
//!
//! A warm start seeds the working set with a previous solution's active set;
//! rows whose multipliers come out negative are dropped before iterating.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    /// The constraint with this row index cannot be satisfied together with
    /// the current working set.
    Infeasible { row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multiplier per inequality row (zero for inactive rows).
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub max_violation: f64,
    /// Rows in the final working set, in insertion order.
    pub active: Vec<usize>,
    /// Objective after each constraint addition; non-decreasing for this method.
    pub objective_trace: Vec<f64>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Stationarity, primal feasibility and complementarity residuals (inf-norms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual: f64,
}

pub fn kkt_residuals(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    z: &DVector<f64>,
    multipliers: &DVector<f64>,
) -> KktResiduals {
    let grad = h * z + f + a.transpose() * multipliers;
    let slack = a * z - b;
    KktResiduals {
        stationarity: grad.amax(),
        primal: slack.iter().fold(0.0f64, |m, &s| m.max(s)),
        complementarity: slack
            .iter()
            .zip(multipliers.iter())
            .fold(0.0f64, |m, (s, l)| m.max((s * l).abs())),
        dual: multipliers.iter().fold(0.0f64, |m, &l| m.max(-l)),
    }
}

pub fn objective(h: &DMatrix<f64>, f: &DVector<f64>, z: &DVector<f64>) -> f64 {
    0.5 * z.dot(&(h * z)) + f.dot(z)
}

fn validate(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(), QpError> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(QpError::Dimension(format!("H is {}x{}", n, h.ncols())));
    }
    if f.len() != n {
        return Err(QpError::Dimension(format!("f has {} entries, H is {n}x{n}", f.len())));
    }
    if a.nrows() != b.len() || (a.nrows() > 0 && a.ncols() != n) {
        return Err(QpError::Dimension(format!(
            "A is {}x{}, b has {} entries, expected {} columns",
            a.nrows(),
            a.ncols(),
            b.len(),
            n
        )));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(QpError::NonFinite("H"));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(QpError::NonFinite("f"));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(QpError::NonFinite("A"));
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(QpError::NonFinite("b"));
    }
    Ok(())
}

/// Working set bookkeeping plus the factorization of `H`.
struct ActiveSet<'a> {
    chol: Cholesky<f64, Dyn>,
    a: &'a DMatrix<f64>,
    rows: Vec<usize>,
    /// `H^{-1} a_i` for each working row, same order as `rows`.
    hinv_rows: Vec<DVector<f64>>,
}

impl<'a> ActiveSet<'a> {
    fn row(&self, i: usize) -> DVector<f64> {
        self.a.row(i).transpose()
    }

    fn schur(&self) -> Option<Cholesky<f64, Dyn>> {
        let q = self.rows.len();
        let mut s = DMatrix::zeros(q, q);
        for (j, hj) in self.hinv_rows.iter().enumerate() {
            for (i, &ri) in self.rows.iter().enumerate() {
                s[(i, j)] = self.a.row(ri).transpose().dot(hj);
            }
        }
        s.cholesky()
    }

    /// Solves `H x + N y = g`, `N' x = h` for the working set `N`.
    fn kkt(&self, g: &DVector<f64>, h: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let x0 = self.chol.solve(g);
        if self.rows.is_empty() {
            return Some((x0, DVector::zeros(0)));
        }
        let schur = self.schur()?;
        let rhs = DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().zip(h.iter()).map(|(&r, hv)| self.a.row(r).transpose().dot(&x0) - hv),
        );
        let y = schur.solve(&rhs);
        let mut x = x0;
        for (yi, hi) in y.iter().zip(&self.hinv_rows) {
            x.axpy(-*yi, hi, 1.0);
        }
        Some((x, y))
    }

    fn push(&mut self, i: usize) {
        let ai = self.row(i);
        self.hinv_rows.push(self.chol.solve(&ai));
        self.rows.push(i);
    }

    fn remove(&mut self, pos: usize) {
        self.rows.remove(pos);
        self.hinv_rows.remove(pos);
    }

    fn rhs(&self, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&r| b[r]))
    }
}

/// Minimizer over the working set as equalities, with its multipliers.
fn equality_solve(
    set: &ActiveSet<'_>,
    f: &DVector<f64>,
    b: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    set.kkt(&(-f), &set.rhs(b))
}

pub fn solve(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    opts: &QpOptions,
) -> Result<QpSolution, QpError> {
    solve_warm(h, f, a, b, opts, &[])
}

pub fn solve_warm(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    opts: &QpOptions,
    warm_active: &[usize],
) -> Result<QpSolution, QpError> {
    validate(h, f, a, b)?;
    let n = h.nrows();
    let m = b.len();
    let chol = h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let mut set = ActiveSet {
        chol,
        a,
        rows: Vec::with_capacity(n),
        hinv_rows: Vec::with_capacity(n),
    };

    let (mut z, mut lam) = warm_start(&mut set, f, b, warm_active);
    let mut objective_trace = vec![objective(h, f, &z)];
    let mut iterations = 0;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        // most violated row; strict comparison keeps the lowest index on ties
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m {
            if set.rows.contains(&i) {
                continue;
            }
            let viol = a.row(i).transpose().dot(&z) - b[i];
            if viol > opts.feas_tol && worst.is_none_or(|(_, w)| viol > w) {
                worst = Some((i, viol));
            }
        }
        let Some((p, _)) = worst else {
            break;
        };
        if iterations >= opts.max_iter {
            status = QpStatus::MaxIter;
            break;
        }
        iterations += 1;

        let ap = set.row(p);
        let hinv_ap = set.chol.solve(&ap);
        let curvature_scale = ap.dot(&hinv_ap);
        let mut lam_p = 0.0;
        loop {
            let zeros = DVector::zeros(set.rows.len());
            let Some((dz, dlam)) = set.kkt(&(-&ap), &zeros) else {
                // working set lost independence numerically
                status = QpStatus::Infeasible { row: p };
                break 'outer;
            };
            // largest dual step keeping working multipliers non-negative
            let mut blocking: Option<(usize, f64)> = None;
            for (k, (&l, &d)) in lam.iter().zip(dlam.iter()).enumerate() {
                if d < 0.0 {
                    let t = l / -d;
                    if blocking.is_none_or(|(_, bt)| t < bt) {
                        blocking = Some((k, t));
                    }
                }
            }
            let descent = -ap.dot(&dz);
            if descent <= 1e-12 * curvature_scale {
                // a_p lies in the span of the working rows: only a dual step is possible
                let Some((k, t)) = blocking else {
                    status = QpStatus::Infeasible { row: p };
                    break 'outer;
                };
                lam.axpy(t, &dlam, 1.0);
                lam_p += t;
                set.remove(k);
                lam = remove_entry(&lam, k);
                continue;
            }
            let t_full = (ap.dot(&z) - b[p]) / descent;
            match blocking {
                Some((k, t)) if t < t_full => {
                    z.axpy(t, &dz, 1.0);
                    lam.axpy(t, &dlam, 1.0);
                    lam_p += t;
                    set.remove(k);
                    lam = remove_entry(&lam, k);
                }
                _ => {
                    lam.axpy(t_full, &dlam, 1.0);
                    set.push(p);
                    lam = lam.push(lam_p + t_full);
                    // re-solve exactly on the new working set to shed drift
                    match equality_solve(&set, f, b) {
                        Some((zn, ln)) => {
                            z = zn;
                            lam = ln.map(|x| x.max(0.0));
                        }
                        None => {
                            z.axpy(t_full, &dz, 1.0);
                        }
                    }
                    objective_trace.push(objective(h, f, &z));
                    break;
                }
            }
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (&r, &l) in set.rows.iter().zip(lam.iter()) {
        multipliers[r] = l;
    }
    let max_violation = if m == 0 {
        0.0
    } else {
        (a * &z - b).iter().fold(0.0f64, |acc, &s| acc.max(s))
    };
    Ok(QpSolution {
        objective: objective(h, f, &z),
        z,
        multipliers,
        status,
        iterations,
        max_violation,
        active: set.rows.clone(),
        objective_trace,
    })
}

fn remove_entry(v: &DVector<f64>, k: usize) -> DVector<f64> {
    v.clone().remove_row(k)
}

/// Seeds the working set from `warm`, keeping rows linearly independent and
/// dropping rows until every multiplier is non-negative.
fn warm_start(
    set: &mut ActiveSet<'_>,
    f: &DVector<f64>,
    b: &DVector<f64>,
    warm: &[usize],
) -> (DVector<f64>, DVector<f64>) {
    let n = set.chol.l_dirty().nrows();
    for &r in warm {
        if r >= b.len() || set.rows.contains(&r) || set.rows.len() >= n {
            continue;
        }
        set.push(r);
        let independent = set
            .schur()
            .map(|c| c.l().diagonal().iter().all(|d| *d > 1e-7))
            .unwrap_or(false);
        if !independent {
            set.remove(set.rows.len() - 1);
        }
    }
    loop {
        let Some((z, lam)) = equality_solve(set, f, b) else {
            set.rows.clear();
            set.hinv_rows.clear();
            return (set.chol.solve(&(-f)), DVector::zeros(0));
        };
        let most_negative = lam
            .iter()
            .enumerate()
            .filter(|(_, l)| **l < 0.0)
            .min_by(|x, y| x.1.partial_cmp(y.1).unwrap().then(x.0.cmp(&y.0)));
        match most_negative {
            Some((k, _)) => set.remove(k),
            None => return (z, lam),
        }
    }
}
