use super::problems::WeightedPoint;
use super::*;
use crate::curve::DedupTolerance;
use crate::solver::{solve_lp, solve_qp, SolverConfig};
use crate::synth;
use crate::types::AggregatedObservation;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn obs(data: &[(f64, f64)]) -> Vec<AggregatedObservation> {
    data.iter()
        .map(|&(k, q)| AggregatedObservation::synthetic(k, q))
        .collect()
}

fn fitted_values(solution: &crate::solver::SolverSolution, layout: &problems::ProblemLayout) -> Vec<f64> {
    let mut out = vec![0.0; layout.n];
    for i in 0..layout.n {
        let alpha = solution.variables[layout.alpha_var(i)];
        let beta = solution.variables[layout.beta_var(i)];
        out[layout.source_index[i]] = alpha + beta * layout.anchors[i];
    }
    out
}

// ---- independent oracles -------------------------------------------------

/// Gaussian elimination with partial pivoting; None when singular.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-11 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        for r in col + 1..n {
            let factor = a[r * n + col] / a[col * n + col];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= factor * a[col * n + c];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut v = b[r];
        for c in r + 1..n {
            v -= a[r * n + c] * x[c];
        }
        x[r] = v / a[r * n + r];
    }
    Some(x)
}

/// Exhaustive active-set oracle for concave least squares on distinct
/// sorted densities: enumerates every subset of the n-2 second-difference
/// constraints as the active set, solves the equality-constrained
/// projection through its KKT system, keeps feasible candidates and
/// returns the smallest sum of squared errors. Independent of the
/// hyperplane formulation the estimator solves.
fn concave_ls_oracle(k: &[f64], q: &[f64]) -> (Vec<f64>, f64) {
    let n = k.len();
    assert!(n >= 2);
    let m = n.saturating_sub(2);
    // constraint rows: (theta_i - theta_{i-1})/dk_i - (theta_{i+1} - theta_i)/dk_{i+1} >= 0
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    for i in 1..n - 1 {
        let dk_lo = k[i] - k[i - 1];
        let dk_hi = k[i + 1] - k[i];
        let mut row = vec![0.0; n];
        row[i - 1] = -1.0 / dk_lo;
        row[i] = 1.0 / dk_lo + 1.0 / dk_hi;
        row[i + 1] = -1.0 / dk_hi;
        rows.push(row);
    }
    let feasible = |theta: &[f64]| rows.iter().all(|r| {
        r.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() >= -1e-9
    });

    let mut best_sse = f64::INFINITY;
    let mut best = q.to_vec();
    for mask in 0u64..(1u64 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let na = active.len();
        let dim = n + na;
        // KKT of min ||theta - q||^2 s.t. C theta = 0:
        // [2I C'; C 0] [theta; lambda] = [2q; 0]
        let mut a = vec![0.0; dim * dim];
        let mut b = vec![0.0; dim];
        for i in 0..n {
            a[i * dim + i] = 2.0;
            b[i] = 2.0 * q[i];
        }
        for (j, &ci) in active.iter().enumerate() {
            for i in 0..n {
                a[i * dim + n + j] = rows[ci][i];
                a[(n + j) * dim + i] = rows[ci][i];
            }
        }
        if let Some(sol) = solve_dense(&mut a, &mut b, dim) {
            let theta = &sol[..n];
            if feasible(theta) {
                let sse: f64 = theta.iter().zip(q).map(|(t, y)| (t - y) * (t - y)).sum();
                if sse < best_sse {
                    best_sse = sse;
                    best = theta.to_vec();
                }
            }
        }
    }
    (best, best_sse)
}

/// Enumerates the basic feasible solutions of a small LP whose
/// constraints are the equality rows plus a choice of active inequality
/// rows, and returns the best feasible vertex objective.
fn lp_vertex_enumeration(lp: &crate::solver::LinearProgram) -> f64 {
    let n = lp.num_variables();
    let p = lp.equalities.nrows();
    let m = lp.inequalities.nrows();
    // bound rows x_j >= l_j as -x_j <= -l_j
    let bounded: Vec<usize> = (0..n).filter(|&j| lp.lower_bounds[j].is_finite()).collect();
    let total_ineq = m + bounded.len();
    let need = n - p;
    assert!(total_ineq >= need);

    let row_of = |idx: usize, row: &mut [f64]| -> f64 {
        row.iter_mut().for_each(|v| *v = 0.0);
        if idx < m {
            let (cols, vals) = lp.inequalities.row(idx);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
            lp.rhs[idx]
        } else {
            let j = bounded[idx - m];
            row[j] = -1.0;
            -lp.lower_bounds[j]
        }
    };

    let mut best = f64::INFINITY;
    let mut scratch = vec![0.0; n];
    // iterate all masks over total_ineq constraints with popcount == need
    for mask in 0u64..(1u64 << total_ineq) {
        if mask.count_ones() as usize != need {
            continue;
        }
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        for (r, (cols, vals)) in (0..p).map(|i| lp.equalities.row(i)).enumerate() {
            for (&c, &v) in cols.iter().zip(vals) {
                a[r * n + c] = v;
            }
            b[r] = lp.eq_rhs[r];
        }
        let mut r = p;
        for idx in 0..total_ineq {
            if mask & (1 << idx) != 0 {
                let rhs = row_of(idx, &mut scratch);
                a[r * n..(r + 1) * n].copy_from_slice(&scratch);
                b[r] = rhs;
                r += 1;
            }
        }
        if let Some(x) = solve_dense(&mut a, &mut b, n) {
            // feasibility of all inequality rows and bounds
            let mut ok = true;
            for idx in 0..total_ineq {
                let rhs = row_of(idx, &mut scratch);
                let lhs: f64 = scratch.iter().zip(&x).map(|(a, b)| a * b).sum();
                if lhs > rhs + 1e-7 {
                    ok = false;
                    break;
                }
            }
            if ok {
                let objective: f64 = lp.objective.iter().zip(&x).map(|(a, b)| a * b).sum();
                best = best.min(objective);
            }
        }
    }
    best
}

// ---- least squares -------------------------------------------------------

#[test]
fn cnls_two_points_interpolates() {
    let data = obs(&[(0.0, 0.0), (1.0, 1.0)]);
    let problem = build_cnls(&data, false).unwrap();
    let sol = solve_qp(&problem.program, &cfg()).unwrap();
    assert_eq!(sol.status, crate::solver::SolverStatus::Optimal);
    assert!(sol.objective.abs() < 1e-9, "SSE {}", sol.objective);
}

#[test]
fn cnls_three_point_projection() {
    // the least-squares concave fit of (0,0), (1,0), (2,1) is the line
    // through (-1/6, 1/3, 5/6) with SSE 1/6
    let data = obs(&[(0.0, 0.0), (1.0, 0.0), (2.0, 1.0)]);
    let problem = build_cnls(&data, false).unwrap();
    let sol = solve_qp(&problem.program, &cfg()).unwrap();
    assert_eq!(sol.status, crate::solver::SolverStatus::Optimal);
    let fitted = fitted_values(&sol, &problem.layout);
    assert!((fitted[0] + 1.0 / 6.0).abs() < 1e-6);
    assert!((fitted[1] - 1.0 / 3.0).abs() < 1e-6);
    assert!((fitted[2] - 5.0 / 6.0).abs() < 1e-6);
    assert!((sol.objective - 1.0 / 6.0).abs() < 1e-6);
}

#[test]
fn cnls_concave_exact_has_zero_sse() {
    let data = synth::concave_exact_observations(20);
    let problem = build_cnls(&data, false).unwrap();
    let sol = solve_qp(&problem.program, &cfg()).unwrap();
    assert!(sol.objective.abs() < 1e-7, "SSE {}", sol.objective);
}

#[test]
fn cnls_rejects_single_point() {
    let data = obs(&[(1.0, 1.0)]);
    assert!(matches!(
        build_cnls(&data, false),
        Err(EstimatorError::TooFewPoints(1))
    ));
}

#[test]
fn cnls_matches_active_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..10 {
        let n = 3 + (trial % 6);
        let mut k: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen_range(0.05..0.95)).collect();
        k.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q: Vec<f64> = k.iter().map(|_| rng.gen_range(-1.0..3.0)).collect();
        let data: Vec<AggregatedObservation> = k
            .iter()
            .zip(&q)
            .map(|(&k, &q)| AggregatedObservation::synthetic(k, q.max(0.0)))
            .collect();
        let q: Vec<f64> = data.iter().map(|o| o.q).collect();

        let (_, oracle_sse) = concave_ls_oracle(&k, &q);
        let problem = build_cnls(&data, false).unwrap();
        let sol = solve_qp(&problem.program, &cfg()).unwrap();
        assert!(
            (sol.objective - oracle_sse).abs() < 1e-6,
            "trial {trial}: solver {} vs oracle {}",
            sol.objective,
            oracle_sse
        );
    }
}

#[test]
fn monotone_flag_forces_nonnegative_slopes() {
    // a decreasing dataset fitted with nonnegative slopes cannot follow
    // the data down
    let data = obs(&[(0.5, 5.0), (1.0, 4.0), (2.0, 1.0)]);
    let free = build_cnls(&data, false).unwrap();
    let sol_free = solve_qp(&free.program, &cfg()).unwrap();
    assert!(sol_free.objective.abs() < 1e-7);

    let mono = build_cnls(&data, true).unwrap();
    let sol_mono = solve_qp(&mono.program, &cfg()).unwrap();
    assert!(sol_mono.objective > 1.0);
    for i in 0..mono.layout.n {
        assert!(sol_mono.variables[mono.layout.beta_var(i)] >= -1e-8);
    }
}

// ---- univariate reduction ------------------------------------------------

#[test]
fn univariate_matches_pairwise_on_three_points() {
    let data = obs(&[(0.0, 0.0), (1.0, 0.0), (2.0, 1.0)]);
    let full = build_cnls(&data, false).unwrap();
    let sorted = build_cnls_univariate(&data).unwrap();
    let sol_full = solve_qp(&full.program, &cfg()).unwrap();
    let sol_sorted = solve_qp(&sorted.program, &cfg()).unwrap();
    let f_full = fitted_values(&sol_full, &full.layout);
    let f_sorted = fitted_values(&sol_sorted, &sorted.layout);
    for (a, b) in f_full.iter().zip(&f_sorted) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn univariate_rejects_unsorted_input() {
    let data = obs(&[(2.0, 1.0), (0.0, 0.0), (1.0, 0.0)]);
    assert!(matches!(
        build_cnls_univariate(&data),
        Err(EstimatorError::UnsortedInput)
    ));
}

#[test]
fn univariate_concave_exact_zero_sse() {
    let data = synth::concave_exact_observations(30);
    let problem = build_cnls_univariate(&data).unwrap();
    let sol = solve_qp(&problem.program, &cfg()).unwrap();
    assert!(sol.objective.abs() < 1e-7);
}

#[test]
fn univariate_matches_pairwise_with_ties() {
    // duplicated densities exercise the tie-handling rows
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut config = cfg();
    config.optimality_tol = 1e-10;
    for trial in 0..6 {
        let ks = [0.5, 1.5, 1.5, 2.5, 2.5, 4.0];
        let data: Vec<AggregatedObservation> = ks
            .iter()
            .map(|&k| AggregatedObservation::synthetic(k, rng.gen_range(0.0..3.0)))
            .collect();
        let full = build_cnls(&data, false).unwrap();
        let sorted = build_cnls_univariate(&data).unwrap();
        let sol_full = solve_qp(&full.program, &config).unwrap();
        let sol_sorted = solve_qp(&sorted.program, &config).unwrap();
        assert!(
            (sol_full.objective - sol_sorted.objective).abs() < 1e-7,
            "trial {trial}: {} vs {}",
            sol_full.objective,
            sol_sorted.objective
        );
    }
}

// ---- quantile estimators -------------------------------------------------

#[test]
fn cqr_median_interpolates_concave_data() {
    let data = synth::concave_exact_observations(15);
    let problem = build_cqr(&data, 0.5).unwrap();
    let sol = solve_lp(&problem.program, &cfg()).unwrap();
    assert!(sol.objective.abs() < 1e-7, "objective {}", sol.objective);
}

#[test]
fn cqr_rejects_bad_tau() {
    let data = obs(&[(0.0, 0.0), (1.0, 1.0)]);
    assert!(matches!(
        build_cqr(&data, 0.0),
        Err(EstimatorError::BadTau(_))
    ));
    assert!(matches!(
        build_cqr(&data, 1.0),
        Err(EstimatorError::BadTau(_))
    ));
}

#[test]
fn cqr_lp_matches_vertex_enumeration() {
    let data = obs(&[(0.0, 0.0), (1.0, 0.0), (2.0, 1.0)]);
    let problem = build_cqr(&data, 0.5).unwrap();
    let sol = solve_lp(&problem.program, &cfg()).unwrap();
    assert_eq!(sol.status, crate::solver::SolverStatus::Optimal);
    let enumerated = lp_vertex_enumeration(&problem.program);
    assert!(
        (sol.objective - enumerated).abs() <= 1e-6 * (1.0 + enumerated.abs()),
        "solver {} vs enumeration {}",
        sol.objective,
        enumerated
    );
}

#[test]
fn cqr_coverage_respects_quantile() {
    for &tau in &[0.5, 0.75, 0.9] {
        let data = synth::concave_noisy_observations(60, 5);
        let points: Vec<WeightedPoint> = data
            .iter()
            .map(problems::WeightedPoint::from_observation)
            .collect();
        let result = fit_points(&points, &EstimatorSpec::cqr(tau), &cfg()).unwrap();
        let cov = coverage(&result.solution, &points);
        assert!(
            (cov.below - tau).abs() <= cov.on + 1e-9,
            "tau {tau}: below {} on {}",
            cov.below,
            cov.on
        );
    }
}

#[test]
fn pcqr_gamma_zero_collapses_to_cqr() {
    let data = synth::concave_noisy_observations(30, 9);
    let lp = build_cqr(&data, 0.75).unwrap();
    let qp = build_pcqr(&data, 0.75, 0.0).unwrap();
    assert_eq!(qp.program.quadratic.nnz(), 0);
    assert_eq!(lp.program.inequalities, qp.program.inequalities);
    assert_eq!(lp.program.equalities, qp.program.equalities);
    let sol_lp = solve_lp(&lp.program, &cfg()).unwrap();
    let sol_qp = solve_qp(&qp.program, &cfg()).unwrap();
    assert!(
        (sol_lp.objective - sol_qp.objective).abs() < 1e-8,
        "{} vs {}",
        sol_lp.objective,
        sol_qp.objective
    );
}

#[test]
fn pcqr_rejects_negative_gamma() {
    let data = obs(&[(0.0, 0.0), (1.0, 1.0)]);
    assert!(matches!(
        build_pcqr(&data, 0.5, -1.0),
        Err(EstimatorError::BadGamma(_))
    ));
}

#[test]
fn pcqr_penalty_shrinks_slopes_monotonically() {
    let data = synth::concave_noisy_observations(25, 21);
    let mut previous_sq_norm = f64::INFINITY;
    let mut previous_pinball = 0.0;
    for &gamma in &[0.0, 1.0, 100.0, 1e4, 1e6] {
        let problem = build_pcqr(&data, 0.75, gamma).unwrap();
        let sol = solve_qp(&problem.program, &cfg()).unwrap();
        assert_eq!(sol.status, crate::solver::SolverStatus::Optimal);
        let betas: Vec<f64> = (0..problem.layout.n)
            .map(|i| sol.variables[problem.layout.beta_var(i)])
            .collect();
        let sq_norm: f64 = betas.iter().map(|b| b * b).sum();
        let pinball = sol.objective - gamma * sq_norm;
        assert!(
            sq_norm <= previous_sq_norm + 1e-6,
            "gamma {gamma}: slope norm grew {sq_norm} > {previous_sq_norm}"
        );
        assert!(
            pinball >= previous_pinball - 1e-6 * (1.0 + previous_pinball),
            "gamma {gamma}: pinball loss shrank"
        );
        previous_sq_norm = sq_norm;
        previous_pinball = pinball;
        if gamma >= 1e6 {
            let max_beta = betas.iter().fold(0.0f64, |m, b| m.max(b.abs()));
            assert!(max_beta <= 1e-2, "beta not crushed: {max_beta}");
        }
    }
}

#[test]
fn pcqr_penalized_objective_dominates_cqr() {
    let data = obs(&[(0.0, 0.0), (1.0, 0.0), (2.0, 1.0)]);
    let base = solve_lp(&build_cqr(&data, 0.5).unwrap().program, &cfg()).unwrap();
    let pen = solve_qp(&build_pcqr(&data, 0.5, 1.0).unwrap().program, &cfg()).unwrap();
    assert!(pen.objective >= base.objective - 1e-9);
}

// ---- bagged estimator ----------------------------------------------------

fn singleton_bags(data: &[AggregatedObservation]) -> Vec<crate::types::Bag> {
    let n = data.len() as f64;
    data.iter()
        .enumerate()
        .map(|(i, o)| crate::types::Bag {
            k_centroid: o.k,
            q_centroid: o.q,
            weight: 1.0 / n,
            point_count: 1,
            cell: (i, 0),
        })
        .collect()
}

#[test]
fn cqrb_singleton_bags_match_raw_quantile_fit() {
    let data = synth::concave_noisy_observations(40, 13);
    let bags = singleton_bags(&data);

    let spec_bags = EstimatorSpec {
        anchor_origin: false,
        ..EstimatorSpec::cqrb(0.75, 0.0)
    };
    let fit_bags = fit(FitInput::Bags(&bags), &spec_bags, &cfg()).unwrap();
    let fit_raw = fit(
        FitInput::Observations(&data),
        &EstimatorSpec::cqr(0.75),
        &cfg(),
    )
    .unwrap();

    let k_max = data.iter().map(|o| o.k).fold(0.0f64, f64::max);
    for g in 0..=200 {
        let k = k_max * g as f64 / 200.0;
        let a = fit_bags.curve.evaluate(k).unwrap();
        let b = fit_raw.curve.evaluate(k).unwrap();
        assert!((a - b).abs() < 1e-6, "k={k}: {a} vs {b}");
    }
}

#[test]
fn cqrb_zero_objective_on_concave_bags() {
    let data = synth::concave_exact_observations(12);
    let bags = singleton_bags(&data);
    let problem = build_cqrb(&bags, 0.5, 0.0).unwrap();
    let sol = solve_qp(&problem.program, &cfg()).unwrap();
    assert!(sol.objective.abs() < 1e-8);
}

#[test]
fn cqrb_point_counts_do_not_matter_when_weights_fixed() {
    let data = synth::concave_noisy_observations(20, 17);
    let bags = singleton_bags(&data);
    let doubled: Vec<crate::types::Bag> = bags
        .iter()
        .map(|b| crate::types::Bag {
            point_count: b.point_count * 2,
            ..b.clone()
        })
        .collect();
    let spec = EstimatorSpec {
        anchor_origin: false,
        ..EstimatorSpec::cqrb(0.8, 0.01)
    };
    let a = fit(FitInput::Bags(&bags), &spec, &cfg()).unwrap();
    let b = fit(FitInput::Bags(&doubled), &spec, &cfg()).unwrap();
    assert_eq!(a.curve, b.curve);
}

#[test]
fn cqrb_rejects_bad_weight_sum() {
    let mut bags = singleton_bags(&synth::concave_exact_observations(5));
    bags[0].weight += 0.1;
    assert!(matches!(
        build_cqrb(&bags, 0.5, 0.0),
        Err(EstimatorError::BadWeightSum(_))
    ));
}

#[test]
fn cqrb_weighted_coverage() {
    let data = synth::concave_noisy_observations(80, 23);
    let (grid, bags) = {
        let grid = crate::bagging::make_grid(&data, 12, 12).unwrap();
        let bags = crate::bagging::bag_observations(&data, &grid).unwrap();
        (grid, bags)
    };
    let _ = grid;
    let points: Vec<WeightedPoint> = bags
        .iter()
        .map(problems::WeightedPoint::from_bag)
        .collect();
    for &tau in &[0.5, 0.8] {
        let spec = EstimatorSpec {
            anchor_origin: false,
            ..EstimatorSpec::cqrb(tau, 0.0)
        };
        let result = fit_points(&points, &spec, &cfg()).unwrap();
        let cov = coverage(&result.solution, &points);
        assert!(
            (cov.below - tau).abs() <= cov.on + 1e-9,
            "tau {tau}: below {} on {}",
            cov.below,
            cov.on
        );
    }
}

// ---- origin anchor ---------------------------------------------------------

#[test]
fn anchor_renormalizes_bag_weights() {
    let bags = vec![crate::types::Bag {
        k_centroid: 2.0,
        q_centroid: 20.0,
        weight: 1.0,
        point_count: 1,
        cell: (0, 0),
    }];
    let with_anchor = add_origin_anchor_bags(&bags);
    assert_eq!(with_anchor.len(), 2);
    assert!((with_anchor[0].weight - 0.5).abs() < 1e-12);
    assert!((with_anchor[1].weight - 0.5).abs() < 1e-12);
    let sum: f64 = with_anchor.iter().map(|b| b.weight).sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn anchor_is_idempotent() {
    let bags = singleton_bags(&synth::concave_exact_observations(4));
    let once = add_origin_anchor_bags(&bags);
    let twice = add_origin_anchor_bags(&once);
    assert_eq!(once, twice);

    let data = obs(&[(1.0, 2.0), (3.0, 4.0)]);
    let once = add_origin_anchor_observations(&data);
    let twice = add_origin_anchor_observations(&once);
    assert_eq!(once, twice);
}

#[test]
fn anchored_fit_passes_through_origin() {
    // data far from zero density; the anchor still pins the curve there
    let data: Vec<AggregatedObservation> = synth::concave_noisy_observations(50, 31)
        .into_iter()
        .filter(|o| o.k > 30.0)
        .collect();
    let bags = singleton_bags(&data);
    let spec = EstimatorSpec::cqrb(0.75, 0.0); // anchor_origin defaults on
    let result = fit(FitInput::Bags(&bags), &spec, &cfg()).unwrap();
    let at_zero = result.curve.evaluate(0.0).unwrap();
    assert!(at_zero <= 1e-5, "f(0) = {at_zero}");
}

// ---- curve extraction ------------------------------------------------------

#[test]
fn golden_mean_curve_has_six_pieces_and_published_breakpoints() {
    let curve = crate::curve::PiecewiseLinearCurve::from_hyperplanes(
        &synth::golden_mean_curve_planes(),
        None,
        DedupTolerance::default(),
        None,
    )
    .unwrap();
    assert_eq!(curve.piece_count(), 6);
    let expected = [38.29, 75.93, 83.54, 85.29, 89.07];
    let got = curve.breakpoints();
    assert_eq!(got.len(), 5);
    for (g, e) in got.iter().zip(&expected) {
        // published coefficients are rounded to two decimals, which moves
        // the recomputed intersections by up to ~0.1
        assert!((g - e).abs() < 0.15, "breakpoint {g} vs {e}");
    }
    assert!((curve.jam_density().unwrap() - 300.19).abs() < 0.05);
    assert!((curve.evaluate(0.0).unwrap() - 45.12).abs() < 1e-12);
}

#[test]
fn golden_quantile_curve_keeps_twelve_pieces() {
    let curve = crate::curve::PiecewiseLinearCurve::from_hyperplanes(
        &synth::golden_quantile_curve_planes(),
        Some(0.75),
        DedupTolerance::default(),
        None,
    )
    .unwrap();
    assert_eq!(curve.piece_count(), 12);
    assert_eq!(curve.evaluate(0.0).unwrap(), 0.0);
    let near_apex = curve.evaluate(34.02).unwrap();
    assert!((near_apex - 2108.8).abs() < 1.0, "apex flow {near_apex}");
    assert!((curve.jam_density().unwrap() - 135.0).abs() < 0.1);
}

#[test]
fn extract_curve_requires_optimal_solution() {
    let data = obs(&[(0.0, 0.0), (1.0, 1.0)]);
    let problem = build_cnls(&data, false).unwrap();
    let mut config = cfg();
    config.max_iterations = 1;
    let sol = solve_qp(&problem.program, &config).unwrap();
    assert!(matches!(
        extract_curve(&sol, &problem.layout, None),
        Err(EstimatorError::NotOptimal(_))
    ));
}

#[test]
fn fit_reports_residuals_in_input_order() {
    let data = obs(&[(2.0, 1.0), (0.0, 0.0), (1.0, 0.6)]);
    let result = fit(
        FitInput::Observations(&data),
        &EstimatorSpec::cqr(0.5),
        &cfg(),
    )
    .unwrap();
    for (i, o) in data.iter().enumerate() {
        let resid = result.solution.residuals_plus[i] - result.solution.residuals_minus[i];
        let fitted_at_k = o.q - resid;
        // curve evaluation must agree with the fitted value at the anchor
        let curve_val = result.curve.evaluate(o.k).unwrap();
        assert!(
            (fitted_at_k - curve_val).abs() < 1e-6,
            "obs {i}: fitted {fitted_at_k} vs curve {curve_val}"
        );
        assert!(result.solution.residuals_plus[i] >= -1e-9);
        assert!(result.solution.residuals_minus[i] >= -1e-9);
    }
}

// ---- penalty search --------------------------------------------------------

fn to_points(data: &[AggregatedObservation]) -> Vec<WeightedPoint> {
    data.iter()
        .map(problems::WeightedPoint::from_observation)
        .collect()
}

#[test]
fn min_gamma_single_tau_is_zero() {
    let points = to_points(&synth::concave_noisy_observations(20, 3));
    let search = find_min_gamma(&points, &[0.75], &[0.0, 1.0], &cfg()).unwrap();
    assert_eq!(search.gamma, 0.0);
    assert!(search.no_crossing);
}

#[test]
fn min_gamma_zero_when_quantiles_already_ordered() {
    let points = to_points(&synth::concave_noisy_observations(60, 29));
    let search = find_min_gamma(&points, &[0.25, 0.5, 0.75], &[0.0, 0.1, 1.0], &cfg()).unwrap();
    assert_eq!(search.gamma, 0.0, "crossing at gamma 0 was not expected");
    assert!(search.no_crossing);
    // the certificate: returned curves pass the same check they claim
    let k_max = points.iter().map(|p| p.k).fold(0.0f64, f64::max);
    let q_range = points.iter().map(|p| p.q).fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|p| p.q).fold(f64::INFINITY, f64::min);
    assert!(curves_non_crossing(&search.curves, k_max, 1e-6 * q_range));
}

#[test]
fn min_gamma_rejects_bad_grids() {
    let points = to_points(&synth::concave_exact_observations(5));
    assert!(matches!(
        find_min_gamma(&points, &[0.5], &[], &cfg()),
        Err(EstimatorError::BadGammaGrid)
    ));
    assert!(matches!(
        find_min_gamma(&points, &[0.5], &[0.1, 1.0], &cfg()),
        Err(EstimatorError::BadGammaGrid)
    ));
    assert!(matches!(
        find_min_gamma(&points, &[0.9, 0.5], &[0.0, 1.0], &cfg()),
        Err(EstimatorError::BadTauList)
    ));
}

// ---- constraint counting ---------------------------------------------------

#[test]
fn constraint_count_matches_published_table() {
    let c = count_constraints(3360, Method::Cqr);
    assert_eq!(c.equality, 3360);
    assert_eq!(c.concavity, 3360 * 3359);
    assert_eq!(c.nonneg_pairs, 3360);
    assert_eq!(c.total, 11_292_960);
}

#[test]
fn constraint_count_tiny() {
    assert_eq!(count_constraints(1, Method::Cqr).total, 2);
}

#[test]
fn constraint_count_for_bagged_size() {
    // the n^2 + n convention gives 414,092 rows for 643 points
    assert_eq!(count_constraints(643, Method::Cqrb).total, 414_092);
}

#[test]
fn estimator_spec_validation() {
    assert!(EstimatorSpec::cnls().validate().is_ok());
    assert!(EstimatorSpec::cqr(0.5).validate().is_ok());
    let mut bad = EstimatorSpec::cnls();
    bad.tau = Some(0.5);
    assert!(bad.validate().is_err());
    let mut bad = EstimatorSpec::cqr(0.5);
    bad.gamma = Some(1.0);
    assert!(bad.validate().is_err());
    assert!(EstimatorSpec::cqr(1.5).validate().is_err());
}
