//! Dense/banded linear- and convex-quadratic-program solving.
//!
//! The solver is self-contained: problems are described by
//! [`LinearProgram`] / [`QuadraticProgram`] and solved by a single
//! primal-dual interior-point implementation with deterministic pivot and
//! step rules, so the same input always produces the same solution path.
//! Solvable-but-unsuccessful outcomes (infeasible, iteration budget
//! exhausted, numerical breakdown) are reported through
//! [`SolverStatus`], never as a silently wrong answer; malformed problem
//! descriptions are rejected up front with [`SolverError`].

mod ipm;
mod linalg;
pub mod sparse;

pub use sparse::{SparseMatrix, TripletBuilder};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("problem contains non-finite coefficients: {0}")]
    NonFinite(String),
    #[error("quadratic matrix is not symmetric")]
    NotSymmetric,
    #[error("quadratic matrix is not positive semidefinite")]
    NotPositiveSemidefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericFailure,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Primal and dual feasibility tolerance (relative).
    pub feasibility_tol: f64,
    /// Complementarity-gap tolerance, relative to the objective. The
    /// default sits above the feasibility tolerance because the
    /// regularized KKT system cannot certify gaps much below 1e-8
    /// without losing dual accuracy.
    pub optimality_tol: f64,
    /// Ceiling on the reported KKT residuals of an optimal solution.
    pub kkt_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-6,
            kkt_tol: 1e-6,
            max_iterations: 200,
        }
    }
}

/// min c'x  s.t.  A x <= b,  E x = f,  x >= lower (entrywise, -inf allowed).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub inequalities: SparseMatrix,
    pub rhs: Vec<f64>,
    pub equalities: SparseMatrix,
    pub eq_rhs: Vec<f64>,
    pub lower_bounds: Vec<f64>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            inequalities: SparseMatrix::zeros(0, n),
            rhs: Vec::new(),
            equalities: SparseMatrix::zeros(0, n),
            eq_rhs: Vec::new(),
            lower_bounds: vec![f64::NEG_INFINITY; n],
        }
    }

    pub fn num_variables(&self) -> usize {
        self.objective.len()
    }
}

/// min 0.5 x'Qx + c'x subject to the same constraint system as
/// [`LinearProgram`]. Q must be symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub quadratic: SparseMatrix,
    pub linear: Vec<f64>,
    pub inequalities: SparseMatrix,
    pub rhs: Vec<f64>,
    pub equalities: SparseMatrix,
    pub eq_rhs: Vec<f64>,
    pub lower_bounds: Vec<f64>,
}

impl QuadraticProgram {
    pub fn new(quadratic: SparseMatrix, linear: Vec<f64>) -> Self {
        let n = linear.len();
        QuadraticProgram {
            quadratic,
            linear,
            inequalities: SparseMatrix::zeros(0, n),
            rhs: Vec::new(),
            equalities: SparseMatrix::zeros(0, n),
            eq_rhs: Vec::new(),
            lower_bounds: vec![f64::NEG_INFINITY; n],
        }
    }

    pub fn num_variables(&self) -> usize {
        self.linear.len()
    }
}

#[derive(Debug, Clone)]
pub struct SolverSolution {
    pub objective: f64,
    pub variables: Vec<f64>,
    /// Positive residual parts, filled in by the estimator layer for
    /// problems that carry per-observation residuals.
    pub residuals_plus: Vec<f64>,
    pub residuals_minus: Vec<f64>,
    pub status: SolverStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
}

fn check_dims(
    n: usize,
    ineq: &SparseMatrix,
    rhs: &[f64],
    eq: &SparseMatrix,
    eq_rhs: &[f64],
    lower: &[f64],
) -> Result<(), SolverError> {
    if ineq.ncols() != n || eq.ncols() != n {
        return Err(SolverError::DimensionMismatch(format!(
            "constraint matrices expect {} variables",
            n
        )));
    }
    if ineq.nrows() != rhs.len() {
        return Err(SolverError::DimensionMismatch(format!(
            "{} inequality rows vs {} rhs entries",
            ineq.nrows(),
            rhs.len()
        )));
    }
    if eq.nrows() != eq_rhs.len() {
        return Err(SolverError::DimensionMismatch(format!(
            "{} equality rows vs {} rhs entries",
            eq.nrows(),
            eq_rhs.len()
        )));
    }
    if lower.len() != n {
        return Err(SolverError::DimensionMismatch(format!(
            "{} lower bounds for {} variables",
            lower.len(),
            n
        )));
    }
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<(), SolverError> {
    if values.iter().any(|v| v.is_nan() || v.is_infinite()) {
        return Err(SolverError::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Folds finite lower bounds into extra inequality rows -x_j <= -l_j.
fn fold_bounds(ineq: &SparseMatrix, rhs: &[f64], lower: &[f64]) -> (SparseMatrix, Vec<f64>) {
    let n = lower.len();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(ineq.nnz() + n);
    for (r, cols, vals) in ineq.iter_rows() {
        for (&c, &v) in cols.iter().zip(vals) {
            triplets.push((r, c, v));
        }
    }
    let mut b = rhs.to_vec();
    let mut row = ineq.nrows();
    for (j, &l) in lower.iter().enumerate() {
        if l.is_finite() {
            triplets.push((row, j, -1.0));
            b.push(-l);
            row += 1;
        }
    }
    (SparseMatrix::from_triplets(row, n, &triplets), b)
}

/// PSD test: diagonal matrices are checked directly; small general
/// matrices get a pivoted Cholesky probe. Tolerance is relative to the
/// largest entry.
fn check_psd(q: &SparseMatrix) -> Result<(), SolverError> {
    if !q.is_symmetric(1e-12 * (1.0 + q.max_abs())) {
        return Err(SolverError::NotSymmetric);
    }
    let n = q.nrows();
    let scale = q.max_abs().max(1.0);
    let tol = 1e-8 * scale;

    let diagonal_only = q
        .iter_rows()
        .all(|(r, cols, _)| cols.iter().all(|&c| c == r));
    if diagonal_only {
        for r in 0..n {
            if q.value_at(r, r) < -tol {
                return Err(SolverError::NotPositiveSemidefinite);
            }
        }
        return Ok(());
    }

    if n <= 800 {
        // Cholesky with complete diagonal pivoting; for a PSD matrix the
        // remaining diagonal stays nonnegative until it vanishes.
        let mut a = vec![0.0f64; n * n];
        for (r, cols, vals) in q.iter_rows() {
            for (&c, &v) in cols.iter().zip(vals) {
                a[r * n + c] = v;
            }
        }
        let mut active: Vec<usize> = (0..n).collect();
        for step in 0..n {
            let (best_pos, &best_idx) = match active[step..]
                .iter()
                .enumerate()
                .max_by(|x, y| a[*x.1 * n + *x.1].partial_cmp(&a[*y.1 * n + *y.1]).unwrap())
            {
                Some((p, i)) => (p + step, i),
                None => break,
            };
            active.swap(step, best_pos);
            let piv = a[best_idx * n + best_idx];
            if piv < -tol {
                return Err(SolverError::NotPositiveSemidefinite);
            }
            if piv <= tol {
                // remaining block must be negligible for PSD
                for &i in &active[step..] {
                    for &j in &active[step..] {
                        if a[i * n + j].abs() > 10.0 * tol {
                            return Err(SolverError::NotPositiveSemidefinite);
                        }
                    }
                }
                break;
            }
            for k in step + 1..n {
                let i = active[k];
                let lik = a[i * n + best_idx] / piv;
                for l in step + 1..n {
                    let j = active[l];
                    a[i * n + j] -= lik * a[j * n + best_idx];
                }
            }
            for k in step + 1..n {
                let i = active[k];
                a[i * n + best_idx] = 0.0;
                a[best_idx * n + i] = 0.0;
            }
        }
        return Ok(());
    }

    // Large non-diagonal Q: only the diagonal is sanity-checked; the
    // estimators in this crate never build such matrices.
    for r in 0..n {
        if q.value_at(r, r) < -tol {
            return Err(SolverError::NotPositiveSemidefinite);
        }
    }
    Ok(())
}

/// Solves a linear program. Infeasibility and iteration exhaustion are
/// reported in the returned status.
pub fn solve_lp(problem: &LinearProgram, config: &SolverConfig) -> Result<SolverSolution, SolverError> {
    let n = problem.num_variables();
    check_dims(
        n,
        &problem.inequalities,
        &problem.rhs,
        &problem.equalities,
        &problem.eq_rhs,
        &problem.lower_bounds,
    )?;
    check_finite(&problem.objective, "objective")?;
    check_finite(&problem.rhs, "inequality rhs")?;
    check_finite(&problem.eq_rhs, "equality rhs")?;
    if !problem.inequalities.is_finite() || !problem.equalities.is_finite() {
        return Err(SolverError::NonFinite("constraint matrix".to_string()));
    }

    let (a, b) = fold_bounds(&problem.inequalities, &problem.rhs, &problem.lower_bounds);
    let out = ipm::solve(
        &ipm::IpmInput {
            quadratic: None,
            linear: &problem.objective,
            a: &a,
            b: &b,
            e: &problem.equalities,
            f: &problem.eq_rhs,
        },
        config,
    );
    Ok(to_solution(out))
}

/// Solves a convex quadratic program. A non-PSD quadratic term is
/// rejected before any solving starts.
pub fn solve_qp(problem: &QuadraticProgram, config: &SolverConfig) -> Result<SolverSolution, SolverError> {
    let n = problem.num_variables();
    check_dims(
        n,
        &problem.inequalities,
        &problem.rhs,
        &problem.equalities,
        &problem.eq_rhs,
        &problem.lower_bounds,
    )?;
    if problem.quadratic.nrows() != n || problem.quadratic.ncols() != n {
        return Err(SolverError::DimensionMismatch(format!(
            "quadratic matrix is {}x{} for {} variables",
            problem.quadratic.nrows(),
            problem.quadratic.ncols(),
            n
        )));
    }
    check_finite(&problem.linear, "objective")?;
    check_finite(&problem.rhs, "inequality rhs")?;
    check_finite(&problem.eq_rhs, "equality rhs")?;
    if !problem.quadratic.is_finite()
        || !problem.inequalities.is_finite()
        || !problem.equalities.is_finite()
    {
        return Err(SolverError::NonFinite("problem matrices".to_string()));
    }
    check_psd(&problem.quadratic)?;

    let (a, b) = fold_bounds(&problem.inequalities, &problem.rhs, &problem.lower_bounds);
    // an all-zero quadratic is a linear program; solving it as one keeps
    // the zero-penalty case exactly on the LP solution path
    let quadratic = if problem.quadratic.nnz() > 0 {
        Some(&problem.quadratic)
    } else {
        None
    };
    let out = ipm::solve(
        &ipm::IpmInput {
            quadratic,
            linear: &problem.linear,
            a: &a,
            b: &b,
            e: &problem.equalities,
            f: &problem.eq_rhs,
        },
        config,
    );
    Ok(to_solution(out))
}

fn to_solution(out: ipm::IpmOutput) -> SolverSolution {
    SolverSolution {
        objective: out.objective,
        variables: out.x,
        residuals_plus: Vec::new(),
        residuals_minus: Vec::new(),
        status: out.status,
        iterations: out.iterations,
        primal_residual: out.primal_residual,
        dual_residual: out.dual_residual,
        complementarity: out.complementarity,
    }
}
