//! Constructs the optimization problems behind the estimators.
//!
//! Every problem fits one hyperplane (alpha_i, beta_i) per data point,
//! tied together by concavity constraints: the point's own plane must be
//! the minimum over all planes at that density. Two constraint
//! generators are available. The pairwise generator emits the full
//! n(n-1) system. The sorted generator exploits the univariate setting:
//! once points are ordered by density, supporting each plane against its
//! neighbours (plus, for tied densities, against the nearest distinct
//! neighbours) is equivalent to the full system and needs only O(n)
//! rows, which is what makes desk-scale fitting of thousands of points
//! tractable.
//!
//! Variables are laid out per observation, `[alpha_i, beta_i, eps_i]`
//! for least squares and `[alpha_i, beta_i, eps_plus_i, eps_minus_i]`
//! for the quantile problems, so the sorted system's normal matrix is
//! banded.

use super::EstimatorError;
use crate::solver::{sparse::TripletBuilder, LinearProgram, QuadraticProgram, SparseMatrix};
use crate::types::{AggregatedObservation, Bag};

/// A data point entering an estimation problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPoint {
    pub k: f64,
    pub q: f64,
    pub weight: f64,
}

impl WeightedPoint {
    pub fn from_observation(obs: &AggregatedObservation) -> Self {
        WeightedPoint {
            k: obs.k,
            q: obs.q,
            weight: 1.0,
        }
    }

    pub fn from_bag(bag: &Bag) -> Self {
        WeightedPoint {
            k: bag.k_centroid,
            q: bag.q_centroid,
            weight: bag.weight,
        }
    }
}

/// Maps solver variables back to per-point hyperplanes and residuals.
#[derive(Debug, Clone)]
pub struct ProblemLayout {
    pub n: usize,
    /// Variables per point: 3 for least squares, 4 for quantile problems.
    pub block: usize,
    /// Density of each point, in problem order.
    pub anchors: Vec<f64>,
    /// Weight of each point, in problem order.
    pub weights: Vec<f64>,
    /// problem position -> index in the caller's point list.
    pub source_index: Vec<usize>,
}

impl ProblemLayout {
    pub fn alpha_var(&self, i: usize) -> usize {
        self.block * i
    }
    pub fn beta_var(&self, i: usize) -> usize {
        self.block * i + 1
    }
    pub fn eps_plus_var(&self, i: usize) -> usize {
        debug_assert_eq!(self.block, 4);
        self.block * i + 2
    }
    pub fn eps_minus_var(&self, i: usize) -> usize {
        debug_assert_eq!(self.block, 4);
        self.block * i + 3
    }
    pub fn num_variables(&self) -> usize {
        self.block * self.n
    }
}

/// Generated problem plus the layout needed to read its solution.
#[derive(Debug, Clone)]
pub struct EstimationProblem<P> {
    pub program: P,
    pub layout: ProblemLayout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConcavityForm {
    /// Full n(n-1) pairwise system.
    Pairwise,
    /// Equivalent O(n) system on density-sorted points.
    SortedAdjacent,
}

pub(crate) fn validate_points(points: &[WeightedPoint]) -> Result<(), EstimatorError> {
    if points.len() < 2 {
        return Err(EstimatorError::TooFewPoints(points.len()));
    }
    if points.iter().any(|p| !(p.k.is_finite() && p.q.is_finite())) {
        return Err(EstimatorError::NonFiniteData);
    }
    let k0 = points[0].k;
    if points.iter().all(|p| p.k == k0) {
        return Err(EstimatorError::IdenticalDensities);
    }
    Ok(())
}

fn is_sorted_by_k(points: &[WeightedPoint]) -> bool {
    points.windows(2).all(|w| w[0].k <= w[1].k)
}

/// Stable (k, q) order used by the sorted constraint generator.
pub fn sort_points(points: &[WeightedPoint]) -> (Vec<WeightedPoint>, Vec<usize>) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .k
            .partial_cmp(&points[b].k)
            .unwrap()
            .then(points[a].q.partial_cmp(&points[b].q).unwrap())
    });
    let sorted = order.iter().map(|&i| points[i]).collect();
    (sorted, order)
}

/// Emits both support rows for the point pair (i, s):
/// plane s stays above point i's own plane at k_i, and vice versa.
fn emit_support_pair(
    tb: &mut TripletBuilder,
    block: usize,
    i: usize,
    s: usize,
    k_i: f64,
    k_s: f64,
) {
    tb.push_row(&[
        (block * i, 1.0),
        (block * i + 1, k_i),
        (block * s, -1.0),
        (block * s + 1, -k_i),
    ]);
    tb.push_row(&[
        (block * s, 1.0),
        (block * s + 1, k_s),
        (block * i, -1.0),
        (block * i + 1, -k_s),
    ]);
}

/// Concavity rows for density-sorted points. Consecutive points are
/// supported against each other; members of a run of equal densities are
/// additionally supported against the nearest distinct neighbours on
/// both sides, which restores equivalence with the pairwise system.
fn concavity_rows_sorted(points: &[WeightedPoint], block: usize) -> SparseMatrix {
    let n = points.len();
    let mut tb = TripletBuilder::new();
    for i in 1..n {
        emit_support_pair(&mut tb, block, i - 1, i, points[i - 1].k, points[i].k);
    }
    // tie runs
    let mut run_start = 0;
    for i in 1..=n {
        if i == n || points[i].k != points[run_start].k {
            let run_end = i - 1; // inclusive
            if run_end > run_start {
                if run_start > 0 {
                    let prev = run_start - 1;
                    for j in run_start + 1..=run_end {
                        emit_support_pair(&mut tb, block, prev, j, points[prev].k, points[j].k);
                    }
                }
                if i < n {
                    let next = i;
                    for j in run_start..run_end {
                        emit_support_pair(&mut tb, block, j, next, points[j].k, points[next].k);
                    }
                }
            }
            run_start = i;
        }
    }
    let rows = tb.nrows();
    tb.build(rows, block * n)
}

/// Full pairwise concavity system of the finite-dimensional problem.
fn concavity_rows_pairwise(points: &[WeightedPoint], block: usize) -> SparseMatrix {
    let n = points.len();
    let mut tb = TripletBuilder::new();
    for i in 0..n {
        for s in 0..n {
            if i == s {
                continue;
            }
            tb.push_row(&[
                (block * i, 1.0),
                (block * i + 1, points[i].k),
                (block * s, -1.0),
                (block * s + 1, -points[i].k),
            ]);
        }
    }
    let rows = tb.nrows();
    tb.build(rows, block * n)
}

fn concavity_rows(points: &[WeightedPoint], block: usize, form: ConcavityForm) -> SparseMatrix {
    match form {
        ConcavityForm::Pairwise => concavity_rows_pairwise(points, block),
        ConcavityForm::SortedAdjacent => concavity_rows_sorted(points, block),
    }
}

fn regression_equalities_ls(points: &[WeightedPoint]) -> (SparseMatrix, Vec<f64>) {
    let n = points.len();
    let mut tb = TripletBuilder::new();
    let mut rhs = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        tb.push_row(&[(3 * i, 1.0), (3 * i + 1, p.k), (3 * i + 2, 1.0)]);
        rhs.push(p.q);
    }
    (tb.build(n, 3 * n), rhs)
}

fn regression_equalities_quantile(points: &[WeightedPoint]) -> (SparseMatrix, Vec<f64>) {
    let n = points.len();
    let mut tb = TripletBuilder::new();
    let mut rhs = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        tb.push_row(&[
            (4 * i, 1.0),
            (4 * i + 1, p.k),
            (4 * i + 2, 1.0),
            (4 * i + 3, -1.0),
        ]);
        rhs.push(p.q);
    }
    (tb.build(n, 4 * n), rhs)
}

fn layout(points: &[WeightedPoint], block: usize, source_index: Vec<usize>) -> ProblemLayout {
    ProblemLayout {
        n: points.len(),
        block,
        anchors: points.iter().map(|p| p.k).collect(),
        weights: points.iter().map(|p| p.weight).collect(),
        source_index,
    }
}

/// Least-squares problem over concave piecewise-linear fits with one
/// hyperplane per point: minimize the sum of squared residuals subject
/// to the chosen concavity system. `monotone` additionally restricts
/// every slope to be nonnegative.
pub(crate) fn least_squares_problem(
    points: &[WeightedPoint],
    monotone: bool,
    form: ConcavityForm,
    source_index: Vec<usize>,
) -> Result<EstimationProblem<QuadraticProgram>, EstimatorError> {
    validate_points(points)?;
    let n = points.len();
    let nvar = 3 * n;

    let mut q_triplets = Vec::with_capacity(n);
    for i in 0..n {
        q_triplets.push((3 * i + 2, 3 * i + 2, 2.0));
    }
    let quadratic = SparseMatrix::from_triplets(nvar, nvar, &q_triplets);

    let (equalities, eq_rhs) = regression_equalities_ls(points);
    let inequalities = concavity_rows(points, 3, form);
    let rhs = vec![0.0; inequalities.nrows()];
    let mut lower_bounds = vec![f64::NEG_INFINITY; nvar];
    if monotone {
        for i in 0..n {
            lower_bounds[3 * i + 1] = 0.0;
        }
    }

    let mut program = QuadraticProgram::new(quadratic, vec![0.0; nvar]);
    program.inequalities = inequalities;
    program.rhs = rhs;
    program.equalities = equalities;
    program.eq_rhs = eq_rhs;
    program.lower_bounds = lower_bounds;

    Ok(EstimationProblem {
        program,
        layout: layout(points, 3, source_index),
    })
}

/// Weighted pinball-loss problem shared by the quantile estimators:
/// minimize tau * sum w_i eps_plus_i + (1 - tau) * sum w_i eps_minus_i,
/// optionally plus gamma * sum beta_i^2.
pub(crate) fn quantile_problem(
    points: &[WeightedPoint],
    tau: f64,
    gamma: f64,
    form: ConcavityForm,
    source_index: Vec<usize>,
) -> Result<EstimationProblem<QuadraticProgram>, EstimatorError> {
    validate_points(points)?;
    if !(0.0 < tau && tau < 1.0) {
        return Err(EstimatorError::BadTau(tau));
    }
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(EstimatorError::BadGamma(gamma));
    }
    let n = points.len();
    let nvar = 4 * n;

    let mut linear = vec![0.0; nvar];
    for (i, p) in points.iter().enumerate() {
        linear[4 * i + 2] = tau * p.weight;
        linear[4 * i + 3] = (1.0 - tau) * p.weight;
    }
    let mut q_triplets = Vec::new();
    if gamma > 0.0 {
        for i in 0..n {
            q_triplets.push((4 * i + 1, 4 * i + 1, 2.0 * gamma));
        }
    }
    let quadratic = SparseMatrix::from_triplets(nvar, nvar, &q_triplets);

    let (equalities, eq_rhs) = regression_equalities_quantile(points);
    let inequalities = concavity_rows(points, 4, form);
    let rhs = vec![0.0; inequalities.nrows()];
    let mut lower_bounds = vec![f64::NEG_INFINITY; nvar];
    for i in 0..n {
        lower_bounds[4 * i + 2] = 0.0;
        lower_bounds[4 * i + 3] = 0.0;
    }

    let mut program = QuadraticProgram::new(quadratic, linear);
    program.inequalities = inequalities;
    program.rhs = rhs;
    program.equalities = equalities;
    program.eq_rhs = eq_rhs;
    program.lower_bounds = lower_bounds;

    Ok(EstimationProblem {
        program,
        layout: layout(points, 4, source_index),
    })
}

/// Drops the quadratic part of a quantile problem, leaving the linear
/// program of the plain quantile estimator.
pub(crate) fn as_linear_program(problem: &EstimationProblem<QuadraticProgram>) -> EstimationProblem<LinearProgram> {
    let qp = &problem.program;
    let mut lp = LinearProgram::new(qp.linear.clone());
    lp.inequalities = qp.inequalities.clone();
    lp.rhs = qp.rhs.clone();
    lp.equalities = qp.equalities.clone();
    lp.eq_rhs = qp.eq_rhs.clone();
    lp.lower_bounds = qp.lower_bounds.clone();
    EstimationProblem {
        program: lp,
        layout: problem.layout.clone(),
    }
}

pub(crate) fn points_from_observations(obs: &[AggregatedObservation]) -> Vec<WeightedPoint> {
    obs.iter().map(WeightedPoint::from_observation).collect()
}

pub(crate) fn points_from_bags(bags: &[Bag]) -> Vec<WeightedPoint> {
    bags.iter().map(WeightedPoint::from_bag).collect()
}

pub(crate) fn check_sorted(points: &[WeightedPoint]) -> Result<(), EstimatorError> {
    if !is_sorted_by_k(points) {
        return Err(EstimatorError::UnsortedInput);
    }
    Ok(())
}

/// Multivariate data point for the general constraint generator.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPoint {
    pub k: Vec<f64>,
    pub q: f64,
}

/// Full pairwise least-squares problem for m >= 1 predictors: variables
/// per point are [alpha_i, beta_i1..beta_im, eps_i]. The traffic
/// pipeline itself is univariate; this generator exists for the general
/// formulation.
pub fn build_cnls_multi(
    points: &[MultiPoint],
    monotone: bool,
) -> Result<(QuadraticProgram, usize), EstimatorError> {
    if points.len() < 2 {
        return Err(EstimatorError::TooFewPoints(points.len()));
    }
    let m = points[0].k.len();
    if m == 0 || points.iter().any(|p| p.k.len() != m) {
        return Err(EstimatorError::NonFiniteData);
    }
    let n = points.len();
    let block = m + 2;
    let nvar = block * n;
    let eps = |i: usize| block * i + m + 1;

    let q_triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (eps(i), eps(i), 2.0)).collect();
    let quadratic = SparseMatrix::from_triplets(nvar, nvar, &q_triplets);

    let mut eq = TripletBuilder::new();
    let mut eq_rhs = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        let mut row: Vec<(usize, f64)> = vec![(block * i, 1.0)];
        for (j, &kj) in p.k.iter().enumerate() {
            row.push((block * i + 1 + j, kj));
        }
        row.push((eps(i), 1.0));
        eq.push_row(&row);
        eq_rhs.push(p.q);
    }

    let mut ineq = TripletBuilder::new();
    for i in 0..n {
        for s in 0..n {
            if i == s {
                continue;
            }
            let mut row: Vec<(usize, f64)> = vec![(block * i, 1.0), (block * s, -1.0)];
            for (j, &kj) in points[i].k.iter().enumerate() {
                row.push((block * i + 1 + j, kj));
                row.push((block * s + 1 + j, -kj));
            }
            ineq.push_row(&row);
        }
    }
    let n_ineq = ineq.nrows();

    let mut program = QuadraticProgram::new(quadratic, vec![0.0; nvar]);
    program.equalities = eq.build(n, nvar);
    program.eq_rhs = eq_rhs;
    program.inequalities = ineq.build(n_ineq, nvar);
    program.rhs = vec![0.0; n_ineq];
    if monotone {
        for i in 0..n {
            for j in 0..m {
                program.lower_bounds[block * i + 1 + j] = 0.0;
            }
        }
    }
    Ok((program, block))
}
