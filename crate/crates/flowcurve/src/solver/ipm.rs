//! Primal-dual interior-point method for convex quadratic programs with
//! linear equality and inequality constraints (linear programs are the
//! zero-quadratic special case).
//!
//! The implementation is a Mehrotra predictor-corrector with Ruiz
//! equilibration, a regularized quasi-definite KKT system, and a choice
//! of dense or banded LDL' backend. The banded backend is picked when a
//! reverse Cuthill-McKee reordering yields a narrow band, which is the
//! case for the chain-structured concavity constraints produced by the
//! sorted univariate problem builders. Every pivot, step and summation
//! order is fixed, so a given problem always produces the same solution
//! path.

use super::linalg::{bandwidth, reverse_cuthill_mckee, BandedLdl, DenseLdl};
use super::sparse::SparseMatrix;
use super::{SolverConfig, SolverStatus};

pub(crate) struct IpmInput<'a> {
    /// Symmetric quadratic term (full pattern), or None for an LP.
    pub quadratic: Option<&'a SparseMatrix>,
    pub linear: &'a [f64],
    /// Inequalities a x <= b, with any variable bounds already folded in.
    pub a: &'a SparseMatrix,
    pub b: &'a [f64],
    /// Equalities e x = f.
    pub e: &'a SparseMatrix,
    pub f: &'a [f64],
}

pub(crate) struct IpmOutput {
    pub status: SolverStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
}

const RUIZ_ROUNDS: usize = 8;
const KKT_REG: f64 = 1e-9;
const PIVOT_FLOOR: f64 = 1e-12;
const REFINE_STEPS: usize = 2;
const DENSE_SIZE_CAP: usize = 6000;

/// Scaled copy of the problem plus the diagonal scalings needed to map
/// iterates back to original units.
struct Scaled {
    q: Option<SparseMatrix>,
    c: Vec<f64>,
    a: SparseMatrix,
    b: Vec<f64>,
    e: SparseMatrix,
    f: Vec<f64>,
    col: Vec<f64>,      // x = col .* x_scaled
    row_a: Vec<f64>,    // scaled row r of A was multiplied by row_a[r]
    row_e: Vec<f64>,
    cost: f64,          // objective was multiplied by cost
}

fn ruiz_equilibrate(input: &IpmInput) -> Scaled {
    let n = input.linear.len();
    let m = input.a.nrows();
    let p = input.e.nrows();

    let mut col = vec![1.0f64; n];
    let mut row_a = vec![1.0f64; m];
    let mut row_e = vec![1.0f64; p];

    for _ in 0..RUIZ_ROUNDS {
        let mut col_max = vec![0.0f64; n];
        let update_rows = |mat: &SparseMatrix, rows: &mut Vec<f64>, col: &[f64], col_max: &mut [f64]| {
            for (r, cols, vals) in mat.iter_rows() {
                let mut row_max = 0.0f64;
                for (&c, &v) in cols.iter().zip(vals) {
                    row_max = row_max.max((rows[r] * v * col[c]).abs());
                }
                if row_max > 0.0 {
                    rows[r] /= row_max.sqrt();
                }
                for (&c, &v) in cols.iter().zip(vals) {
                    col_max[c] = col_max[c].max((rows[r] * v * col[c]).abs());
                }
            }
        };
        update_rows(input.a, &mut row_a, &col, &mut col_max);
        update_rows(input.e, &mut row_e, &col, &mut col_max);
        if let Some(q) = input.quadratic {
            for (r, cols, vals) in q.iter_rows() {
                for (&c, &v) in cols.iter().zip(vals) {
                    col_max[c] = col_max[c].max((col[r] * v * col[c]).abs());
                }
            }
        }
        for j in 0..n {
            if col_max[j] > 0.0 {
                col[j] /= col_max[j].sqrt();
            }
        }
    }

    let mut a = input.a.clone();
    a.scale(&row_a, &col);
    let mut e = input.e.clone();
    e.scale(&row_e, &col);
    let q = input.quadratic.map(|q| {
        let mut q = q.clone();
        q.scale(&col, &col);
        q
    });
    let mut c: Vec<f64> = input
        .linear
        .iter()
        .zip(&col)
        .map(|(ci, di)| ci * di)
        .collect();
    let b: Vec<f64> = input.b.iter().zip(&row_a).map(|(bi, ri)| bi * ri).collect();
    let f: Vec<f64> = input.f.iter().zip(&row_e).map(|(fi, ri)| fi * ri).collect();

    let mut cost_scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(q) = &q {
        cost_scale = cost_scale.max(q.max_abs());
    }
    let cost = if cost_scale > 0.0 { 1.0 / cost_scale } else { 1.0 };
    c.iter_mut().for_each(|v| *v *= cost);
    let q = q.map(|mut q| {
        let s = vec![cost.sqrt(); q.nrows()];
        q.scale(&s, &s);
        q
    });

    Scaled {
        q,
        c,
        a,
        b,
        e,
        f,
        col,
        row_a,
        row_e,
        cost,
    }
}

enum Backend {
    Dense(DenseLdl),
    Banded(BandedLdl),
}

/// Precomputed KKT assembly: static entries (quadratic, equality blocks,
/// regularization) and per-inequality-row outer-product contributions
/// whose magnitude changes with the barrier scaling each iteration.
struct KktPlan {
    size: usize,
    neg: Vec<bool>,
    static_entries: Vec<(usize, f64)>,
    dynamic_entries: Vec<(usize, f64, usize)>,
    backend: Backend,
    perm: Vec<usize>,
}

impl KktPlan {
    fn build(sc: &Scaled) -> Result<KktPlan, SolverStatus> {
        let n = sc.c.len();
        let p = sc.e.nrows();
        let size = n + p;

        // adjacency of the KKT pattern for the ordering pass
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); size];
        let add_edge = |adj: &mut Vec<Vec<usize>>, i: usize, j: usize| {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        };
        if let Some(q) = &sc.q {
            for (r, cols, _) in q.iter_rows() {
                for &c in cols {
                    if c < r {
                        add_edge(&mut adj, r, c);
                    }
                }
            }
        }
        for (_, cols, _) in sc.a.iter_rows() {
            for (ia, &ca) in cols.iter().enumerate() {
                for &cb in &cols[ia + 1..] {
                    add_edge(&mut adj, ca, cb);
                }
            }
        }
        for (r, cols, _) in sc.e.iter_rows() {
            for &c in cols {
                add_edge(&mut adj, n + r, c);
            }
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        let edges: Vec<(usize, usize)> = adj
            .iter()
            .enumerate()
            .flat_map(|(u, l)| l.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect();

        let rcm = reverse_cuthill_mckee(&adj);
        let bw = bandwidth(&edges, &rcm);
        let banded_mem = size.saturating_mul(bw + 1);
        let dense_mem = size * (size + 1) / 2;

        let (perm, backend) = if banded_mem < dense_mem {
            (rcm, Backend::Banded(BandedLdl::new(size, bw)))
        } else if size <= DENSE_SIZE_CAP {
            ((0..size).collect(), Backend::Dense(DenseLdl::new(size)))
        } else {
            return Err(SolverStatus::NumericFailure);
        };

        let slot = |i: usize, j: usize| -> usize {
            let (pi, pj) = (perm[i], perm[j]);
            let (hi, lo) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            match &backend {
                Backend::Dense(_) => DenseLdl::slot(hi, lo),
                Backend::Banded(h) => h.slot(hi, lo),
            }
        };

        let mut static_entries: Vec<(usize, f64)> = Vec::new();
        if let Some(q) = &sc.q {
            for (r, cols, vals) in q.iter_rows() {
                for (&c, &v) in cols.iter().zip(vals) {
                    if c <= r {
                        static_entries.push((slot(r, c), v));
                    }
                }
            }
        }
        for (r, cols, vals) in sc.e.iter_rows() {
            for (&c, &v) in cols.iter().zip(vals) {
                static_entries.push((slot(n + r, c), v));
            }
        }
        for j in 0..n {
            static_entries.push((slot(j, j), KKT_REG));
        }
        for r in 0..p {
            static_entries.push((slot(n + r, n + r), -KKT_REG));
        }

        let mut dynamic_entries: Vec<(usize, f64, usize)> = Vec::new();
        for (r, cols, vals) in sc.a.iter_rows() {
            for (ia, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
                for (&cb, &vb) in cols.iter().zip(vals).skip(ia) {
                    dynamic_entries.push((slot(ca, cb), va * vb, r));
                }
            }
        }

        let mut neg = vec![false; size];
        for r in 0..p {
            neg[perm[n + r]] = true;
        }

        Ok(KktPlan {
            size,
            neg,
            static_entries,
            dynamic_entries,
            backend,
            perm,
        })
    }

    fn factor(&mut self, d: &[f64]) {
        match &mut self.backend {
            Backend::Dense(h) => {
                h.reset();
                for &(s, v) in &self.static_entries {
                    h.add(s, v);
                }
                for &(s, coeff, r) in &self.dynamic_entries {
                    h.add(s, coeff * d[r]);
                }
                h.factor(&self.neg, PIVOT_FLOOR);
            }
            Backend::Banded(h) => {
                h.reset();
                for &(s, v) in &self.static_entries {
                    h.add(s, v);
                }
                for &(s, coeff, r) in &self.dynamic_entries {
                    h.add(s, coeff * d[r]);
                }
                h.factor(&self.neg, PIVOT_FLOOR);
            }
        }
    }

    /// Solves the factored system for `[rhs_x; rhs_y]` with a couple of
    /// refinement sweeps against the unregularized KKT operator.
    fn solve(&self, sc: &Scaled, d: &[f64], rhs: &[f64]) -> Vec<f64> {
        let mut permuted = vec![0.0; self.size];
        for (i, &v) in rhs.iter().enumerate() {
            permuted[self.perm[i]] = v;
        }
        let mut sol_p = permuted.clone();
        self.raw_solve(&mut sol_p);

        let mut sol = vec![0.0; self.size];
        for i in 0..self.size {
            sol[i] = sol_p[self.perm[i]];
        }
        for _ in 0..REFINE_STEPS {
            let mut resid = rhs.to_vec();
            let applied = self.apply_unregularized(sc, d, &sol);
            for (r, a) in resid.iter_mut().zip(&applied) {
                *r -= a;
            }
            let mut corr_p = vec![0.0; self.size];
            for (i, &v) in resid.iter().enumerate() {
                corr_p[self.perm[i]] = v;
            }
            self.raw_solve(&mut corr_p);
            for i in 0..self.size {
                sol[i] += corr_p[self.perm[i]];
            }
        }
        sol
    }

    fn raw_solve(&self, v: &mut [f64]) {
        match &self.backend {
            Backend::Dense(h) => h.solve(v),
            Backend::Banded(h) => h.solve(v),
        }
    }

    /// [ (Q + A'DA) x + E'y ; E x ] without regularization terms.
    fn apply_unregularized(&self, sc: &Scaled, d: &[f64], v: &[f64]) -> Vec<f64> {
        let n = sc.c.len();
        let p = sc.e.nrows();
        let m = sc.a.nrows();
        let x = &v[..n];
        let y = &v[n..];
        let mut out = vec![0.0; self.size];
        if let Some(q) = &sc.q {
            let mut qx = vec![0.0; n];
            q.mul_vec(x, &mut qx);
            out[..n].copy_from_slice(&qx);
        }
        let mut ax = vec![0.0; m];
        sc.a.mul_vec(x, &mut ax);
        for (a, di) in ax.iter_mut().zip(d) {
            *a *= di;
        }
        sc.a.mul_transpose_add(&ax, &mut out[..n]);
        sc.e.mul_transpose_add(y, &mut out[..n]);
        let mut ex = vec![0.0; p];
        sc.e.mul_vec(x, &mut ex);
        out[n..].copy_from_slice(&ex);
        out
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves the full Newton system
///   Q dx + E'dy + A'dz = g1
///   E dx               = g2
///   A dx + ds          = g3
///   Z ds + S dz        = g4
/// through the condensed augmented form, then improves the direction
/// with `refine` rounds of full-system iterative refinement. The
/// refinement is what keeps the recovered dz (divided by tiny slacks)
/// from polluting the dual residual near convergence.
#[allow(clippy::too_many_arguments)]
fn newton_direction(
    plan: &KktPlan,
    sc: &Scaled,
    d: &[f64],
    s: &[f64],
    z: &[f64],
    g1: &[f64],
    g2: &[f64],
    g3: &[f64],
    g4: &[f64],
    refine: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = g1.len();
    let p = g2.len();
    let m = g3.len();

    let mut rhs = vec![0.0; n + p];
    let t: Vec<f64> = (0..m).map(|i| g4[i] / s[i] - d[i] * g3[i]).collect();
    let mut atv = vec![0.0; n];
    sc.a.mul_transpose_add(&t, &mut atv);
    for i in 0..n {
        rhs[i] = g1[i] - atv[i];
    }
    rhs[n..].copy_from_slice(g2);

    let sol = plan.solve(sc, d, &rhs);
    let (dx_s, dy_s) = sol.split_at(n);
    let mut dx = dx_s.to_vec();
    let mut dy = dy_s.to_vec();
    let mut adx = vec![0.0; m];
    sc.a.mul_vec(&dx, &mut adx);
    let mut ds: Vec<f64> = (0..m).map(|i| g3[i] - adx[i]).collect();
    let mut dz: Vec<f64> = (0..m).map(|i| (g4[i] - z[i] * ds[i]) / s[i]).collect();

    for _ in 0..refine {
        let mut r1 = g1.to_vec();
        if let Some(q) = &sc.q {
            let mut qdx = vec![0.0; n];
            q.mul_vec(&dx, &mut qdx);
            for i in 0..n {
                r1[i] -= qdx[i];
            }
        }
        let mut dual_terms = vec![0.0; n];
        sc.e.mul_transpose_add(&dy, &mut dual_terms);
        sc.a.mul_transpose_add(&dz, &mut dual_terms);
        for i in 0..n {
            r1[i] -= dual_terms[i];
        }
        let mut r2 = g2.to_vec();
        let mut edx = vec![0.0; p];
        sc.e.mul_vec(&dx, &mut edx);
        for i in 0..p {
            r2[i] -= edx[i];
        }
        let mut r3 = g3.to_vec();
        sc.a.mul_vec(&dx, &mut adx);
        for i in 0..m {
            r3[i] -= adx[i] + ds[i];
        }
        let r4: Vec<f64> = (0..m)
            .map(|i| g4[i] - z[i] * ds[i] - s[i] * dz[i])
            .collect();
        let worst = inf_norm(&r1).max(inf_norm(&r2)).max(inf_norm(&r3)).max(inf_norm(&r4));
        if worst < 1e-14 {
            break;
        }
        let (cx, cy, cs, cz) = newton_direction(plan, sc, d, s, z, &r1, &r2, &r3, &r4, 0);
        for i in 0..n {
            dx[i] += cx[i];
        }
        for i in 0..p {
            dy[i] += cy[i];
        }
        for i in 0..m {
            ds[i] += cs[i];
            dz[i] += cz[i];
        }
    }
    (dx, dy, ds, dz)
}

/// Largest alpha in (0, 1] with v + alpha * dv >= 0 componentwise.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = 1.0f64;
    for (&vi, &di) in v.iter().zip(dv) {
        if di < 0.0 {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

pub(crate) fn solve(input: &IpmInput, config: &SolverConfig) -> IpmOutput {
    let n = input.linear.len();
    let m = input.a.nrows();
    let p = input.e.nrows();

    let sc = ruiz_equilibrate(input);
    let mut plan = match KktPlan::build(&sc) {
        Ok(plan) => plan,
        Err(status) => {
            return IpmOutput {
                status,
                x: vec![0.0; n],
                objective: f64::NAN,
                iterations: 0,
                primal_residual: f64::NAN,
                dual_residual: f64::NAN,
                complementarity: f64::NAN,
            }
        }
    };

    // Unconstrained or equality-only problems reduce to one KKT solve.
    if m == 0 {
        return solve_equality_only(input, &sc, &mut plan, config);
    }

    let mut x = vec![0.0f64; n];
    let mut y = vec![0.0f64; p];
    let mut s: Vec<f64> = sc.b.iter().map(|bi| bi.abs().max(1.0)).collect();
    let mut z = vec![1.0f64; m];

    let norm_b = inf_norm(input.b).max(inf_norm(input.f));
    let norm_c = inf_norm(input.linear);

    // best iterate by worst-residual merit; returned if the final
    // iterations degrade numerically
    let mut best: Option<(f64, Vec<f64>, Diagnostics, usize)> = None;
    let mut tiny_steps = 0usize;
    let mut polish_attempts = 0usize;
    let mut budget_exhausted = false;
    let mut stalled = 0usize;

    for iter in 0..config.max_iterations {
        // scaled residuals
        let mut r_in = vec![0.0; m];
        sc.a.mul_vec(&x, &mut r_in);
        for i in 0..m {
            r_in[i] += s[i] - sc.b[i];
        }
        let mut r_eq = vec![0.0; p];
        sc.e.mul_vec(&x, &mut r_eq);
        for i in 0..p {
            r_eq[i] -= sc.f[i];
        }
        let mut r_d = sc.c.clone();
        if let Some(q) = &sc.q {
            let mut qx = vec![0.0; n];
            q.mul_vec(&x, &mut qx);
            for i in 0..n {
                r_d[i] += qx[i];
            }
        }
        sc.a.mul_transpose_add(&z, &mut r_d);
        sc.e.mul_transpose_add(&y, &mut r_d);

        let mu = s.iter().zip(&z).map(|(si, zi)| si * zi).sum::<f64>() / m as f64;

        // original-space convergence diagnostics
        let diag = original_diagnostics(input, &sc, &x, &y, &z, norm_b, norm_c);
        if diag.is_nan() {
            return finish(SolverStatus::NumericFailure, input, &sc, &x, iter, &diag);
        }
        if diag.primal <= config.feasibility_tol
            && diag.dual <= config.feasibility_tol
            && diag.gap <= config.optimality_tol
        {
            return finish(SolverStatus::Optimal, input, &sc, &x, iter, &diag);
        }
        if let Some(status) = infeasibility_check(input, &sc, &y, &z, &diag) {
            return finish(status, input, &sc, &x, iter, &diag);
        }
        let merit = diag.primal.max(diag.dual).max(diag.gap);
        if best.as_ref().map_or(true, |(m, _, _, _)| merit < *m) {
            best = Some((merit, x.clone(), diag, iter));
            stalled = 0;
        } else {
            stalled += 1;
        }
        // rescue: complementarity is resolved but the duals recovered
        // through 1/s have stopped improving short of the feasibility
        // tolerance; a direct solve on the identified active set can
        // finish what the barrier steps cannot
        if polish_attempts < 4 && stalled >= 3 && mu < 1e-6 {
            polish_attempts += 1;
            if let Some((px, pdiag)) = try_polish(input, &sc, &s, &z, norm_b, norm_c, config) {
                return finish(SolverStatus::Optimal, input, &sc, &px, iter, &pdiag);
            }
        }
        // numerical floor: once complementarity is at rounding level the
        // factorization noise dominates and further steps cannot help
        if mu < 1e-14 || tiny_steps >= 10 {
            break;
        }

        // assemble and factor
        let d: Vec<f64> = s.iter().zip(&z).map(|(si, zi)| zi / si).collect();
        plan.factor(&d);

        let g1: Vec<f64> = r_d.iter().map(|v| -v).collect();
        let g2: Vec<f64> = r_eq.iter().map(|v| -v).collect();
        let g3: Vec<f64> = r_in.iter().map(|v| -v).collect();

        // affine predictor
        let g4_aff: Vec<f64> = (0..m).map(|i| -s[i] * z[i]).collect();
        let (_, _, ds_aff, dz_aff) =
            newton_direction(&plan, &sc, &d, &s, &z, &g1, &g2, &g3, &g4_aff, 1);

        let alpha_p_aff = max_step(&s, &ds_aff);
        let alpha_d_aff = max_step(&z, &dz_aff);
        let alpha_aff = alpha_p_aff.min(alpha_d_aff);
        let mu_aff = (0..m)
            .map(|i| (s[i] + alpha_aff * ds_aff[i]) * (z[i] + alpha_aff * dz_aff[i]))
            .sum::<f64>()
            / m as f64;
        let sigma = ((mu_aff / mu).powi(3)).clamp(1e-8, 1.0 - 1e-8);

        // corrector with the second-order complementarity term
        let g4: Vec<f64> = (0..m)
            .map(|i| -s[i] * z[i] + sigma * mu - ds_aff[i] * dz_aff[i])
            .collect();
        let (dx, dy, ds, dz) = newton_direction(&plan, &sc, &d, &s, &z, &g1, &g2, &g3, &g4, 2);

        let eta = if iter < 3 { 0.99 } else { 0.9995 };
        let alpha_p = (eta * max_step(&s, &ds)).min(1.0);
        let alpha_d = (eta * max_step(&z, &dz)).min(1.0);
        let (alpha_p, alpha_d) = if sc.q.is_some() {
            let a = alpha_p.min(alpha_d);
            (a, a)
        } else {
            (alpha_p, alpha_d)
        };
        if std::env::var_os("FLOWCURVE_IPM_TRACE").is_some() {
            eprintln!(
                "iter {iter:3} mu {mu:9.2e} sigma {sigma:7.1e} alpha {alpha_p:7.1e}/{alpha_d:7.1e} pr {:9.2e} du {:9.2e} gap {:9.2e}",
                diag.primal, diag.dual, diag.gap
            );
        }

        for i in 0..n {
            x[i] += alpha_p * dx[i];
        }
        for i in 0..m {
            s[i] += alpha_p * ds[i];
            z[i] += alpha_d * dz[i];
        }
        for i in 0..p {
            y[i] += alpha_d * dy[i];
        }
        if alpha_p.max(alpha_d) < 1e-8 {
            tiny_steps += 1;
        } else {
            tiny_steps = 0;
        }
        if iter + 1 == config.max_iterations {
            budget_exhausted = true;
        }
    }

    // a numerical breakdown (not an exhausted budget) still ends with an
    // identified active set; one direct polish can finish the job
    if !budget_exhausted {
        if let Some((px, pdiag)) = try_polish(input, &sc, &s, &z, norm_b, norm_c, config) {
            let iters = best.as_ref().map_or(config.max_iterations, |b| b.3);
            return finish(SolverStatus::Optimal, input, &sc, &px, iters, &pdiag);
        }
    }
    match best {
        Some((_, bx, bdiag, biter))
            if bdiag.primal <= config.feasibility_tol
                && bdiag.dual <= config.feasibility_tol
                && bdiag.gap <= config.optimality_tol =>
        {
            finish(SolverStatus::Optimal, input, &sc, &bx, biter, &bdiag)
        }
        Some((_, bx, bdiag, biter)) => {
            finish(SolverStatus::IterationLimit, input, &sc, &bx, biter, &bdiag)
        }
        None => {
            let diag = original_diagnostics(input, &sc, &x, &y, &z, norm_b, norm_c);
            finish(
                SolverStatus::IterationLimit,
                input,
                &sc,
                &x,
                config.max_iterations,
                &diag,
            )
        }
    }
}

#[derive(Clone, Copy)]
struct Diagnostics {
    primal: f64,
    dual: f64,
    gap: f64,
}

impl Diagnostics {
    fn is_nan(&self) -> bool {
        self.primal.is_nan() || self.dual.is_nan() || self.gap.is_nan()
    }
}

/// Residuals in the original (unscaled) problem space.
fn original_diagnostics(
    input: &IpmInput,
    sc: &Scaled,
    x_s: &[f64],
    y_s: &[f64],
    z_s: &[f64],
    norm_b: f64,
    norm_c: f64,
) -> Diagnostics {
    let n = x_s.len();
    let m = input.a.nrows();
    let p = input.e.nrows();

    let x: Vec<f64> = (0..n).map(|i| sc.col[i] * x_s[i]).collect();
    let y: Vec<f64> = (0..p).map(|i| sc.row_e[i] * y_s[i] / sc.cost).collect();
    let z: Vec<f64> = (0..m).map(|i| sc.row_a[i] * z_s[i] / sc.cost).collect();

    let mut ax = vec![0.0; m];
    input.a.mul_vec(&x, &mut ax);
    let mut primal = 0.0f64;
    for i in 0..m {
        primal = primal.max(ax[i] - input.b[i]);
    }
    let mut ex = vec![0.0; p];
    input.e.mul_vec(&x, &mut ex);
    for i in 0..p {
        primal = primal.max((ex[i] - input.f[i]).abs());
    }
    let primal = primal / (1.0 + norm_b);

    let mut r_d = input.linear.to_vec();
    let mut obj = 0.0;
    let mut qx_norm = 0.0;
    if let Some(q) = input.quadratic {
        let mut qx = vec![0.0; n];
        q.mul_vec(&x, &mut qx);
        obj += 0.5 * x.iter().zip(&qx).map(|(a, b)| a * b).sum::<f64>();
        qx_norm = inf_norm(&qx);
        for i in 0..n {
            r_d[i] += qx[i];
        }
    }
    obj += input.linear.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    let mut atz = vec![0.0; n];
    input.a.mul_transpose_add(&z, &mut atz);
    let mut ety = vec![0.0; n];
    input.e.mul_transpose_add(&y, &mut ety);
    for i in 0..n {
        r_d[i] += atz[i] + ety[i];
    }
    // relative to the largest term entering the stationarity condition
    let dual_scale = norm_c
        .max(qx_norm)
        .max(inf_norm(&atz))
        .max(inf_norm(&ety));
    let dual = inf_norm(&r_d) / (1.0 + dual_scale);

    // complementarity via slacks in original units
    let mut gap = 0.0;
    for i in 0..m {
        let slack = (input.b[i] - ax[i]).max(0.0);
        gap += slack * z[i];
    }
    let gap = gap.abs() / (1.0 + obj.abs());

    Diagnostics { primal, dual, gap }
}

/// Active-set polish: once the barrier iterates identify which
/// inequality rows bind (z_i > s_i), the optimum solves the equality
/// KKT system with those rows pinned. Solving it directly gives
/// machine-precision primal and dual values; the result is accepted only
/// when the full original KKT conditions verify. This replaces the final
/// barrier iterations, where the 1/s recovery of the duals cannot reach
/// the feasibility tolerance in f64.
fn try_polish(
    input: &IpmInput,
    sc: &Scaled,
    s: &[f64],
    z: &[f64],
    norm_b: f64,
    norm_c: f64,
    config: &SolverConfig,
) -> Option<(Vec<f64>, Diagnostics)> {
    let n = sc.c.len();
    let p = sc.e.nrows();
    let m = sc.a.nrows();

    let active: Vec<usize> = (0..m).filter(|&i| z[i] > s[i]).collect();
    if n + p + active.len() > DENSE_SIZE_CAP + n {
        return None;
    }

    // stack active inequality rows under the equalities
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (r, cols, vals) in sc.e.iter_rows() {
        for (&c, &v) in cols.iter().zip(vals) {
            triplets.push((r, c, v));
        }
    }
    let mut stacked_f = sc.f.clone();
    for (slot, &row) in active.iter().enumerate() {
        let (cols, vals) = sc.a.row(row);
        for (&c, &v) in cols.iter().zip(vals) {
            triplets.push((p + slot, c, v));
        }
        stacked_f.push(sc.b[row]);
    }
    let stacked = SparseMatrix::from_triplets(p + active.len(), n, &triplets);

    let pseudo = Scaled {
        q: sc.q.clone(),
        c: sc.c.clone(),
        a: SparseMatrix::zeros(0, n),
        b: Vec::new(),
        e: stacked,
        f: stacked_f.clone(),
        col: sc.col.clone(),
        row_a: Vec::new(),
        row_e: Vec::new(),
        cost: sc.cost,
    };
    let mut plan = KktPlan::build(&pseudo).ok()?;
    plan.factor(&[]);
    let mut rhs = vec![0.0; n + p + active.len()];
    for i in 0..n {
        rhs[i] = -sc.c[i];
    }
    rhs[n..].copy_from_slice(&stacked_f);
    let sol = plan.solve(&pseudo, &[], &rhs);

    let x_s = &sol[..n];
    let y_s = &sol[n..n + p];
    let mut z_s = vec![0.0; m];
    for (slot, &row) in active.iter().enumerate() {
        // negative multipliers mean the active-set guess was wrong; tiny
        // ones are numerical noise on weakly-active rows
        z_s[row] = sol[n + p + slot].max(0.0);
    }
    let diag = original_diagnostics(input, sc, x_s, y_s, &z_s, norm_b, norm_c);
    if !diag.is_nan()
        && diag.primal <= config.feasibility_tol
        && diag.dual <= config.feasibility_tol
        && diag.gap <= config.optimality_tol
    {
        Some((x_s.to_vec(), diag))
    } else {
        None
    }
}

/// Farkas-style certificate: if the dual iterates, normalized, satisfy
/// E'y + A'z ~ 0 with z >= 0 and f'y + b'z < 0, no primal-feasible point
/// exists.
fn infeasibility_check(
    input: &IpmInput,
    sc: &Scaled,
    y_s: &[f64],
    z_s: &[f64],
    diag: &Diagnostics,
) -> Option<SolverStatus> {
    let m = input.a.nrows();
    let p = input.e.nrows();
    if diag.primal < 1e-6 {
        return None;
    }
    let y: Vec<f64> = (0..p).map(|i| sc.row_e[i] * y_s[i] / sc.cost).collect();
    let z: Vec<f64> = (0..m).map(|i| sc.row_a[i] * z_s[i] / sc.cost).collect();
    let norm = inf_norm(&y).max(inf_norm(&z));
    if norm < 1e4 {
        return None;
    }
    let n = input.linear.len();
    let mut ray = vec![0.0; n];
    let yn: Vec<f64> = y.iter().map(|v| v / norm).collect();
    let zn: Vec<f64> = z.iter().map(|v| v / norm).collect();
    input.a.mul_transpose_add(&zn, &mut ray);
    input.e.mul_transpose_add(&yn, &mut ray);
    let stationarity = inf_norm(&ray);
    let value = input.f.iter().zip(&yn).map(|(a, b)| a * b).sum::<f64>()
        + input.b.iter().zip(&zn).map(|(a, b)| a * b).sum::<f64>();
    if stationarity <= 1e-7 && value <= -1e-9 {
        return Some(SolverStatus::Infeasible);
    }
    if norm > 1e13 {
        return Some(SolverStatus::NumericFailure);
    }
    None
}

fn finish(
    status: SolverStatus,
    input: &IpmInput,
    sc: &Scaled,
    x_s: &[f64],
    iterations: usize,
    diag: &Diagnostics,
) -> IpmOutput {
    let n = x_s.len();
    let x: Vec<f64> = (0..n).map(|i| sc.col[i] * x_s[i]).collect();
    let mut obj = input.linear.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    if let Some(q) = input.quadratic {
        let mut qx = vec![0.0; n];
        q.mul_vec(&x, &mut qx);
        obj += 0.5 * x.iter().zip(&qx).map(|(a, b)| a * b).sum::<f64>();
    }
    IpmOutput {
        status,
        x,
        objective: obj,
        iterations,
        primal_residual: diag.primal,
        dual_residual: diag.dual,
        complementarity: diag.gap,
    }
}

fn solve_equality_only(
    input: &IpmInput,
    sc: &Scaled,
    plan: &mut KktPlan,
    config: &SolverConfig,
) -> IpmOutput {
    let n = sc.c.len();
    let p = sc.e.nrows();
    // stationarity: (Q + reg) x + E'y = -c, E x = f
    plan.factor(&[]);
    let mut rhs = vec![0.0; n + p];
    for i in 0..n {
        rhs[i] = -sc.c[i];
    }
    for i in 0..p {
        rhs[n + i] = sc.f[i];
    }
    let sol = plan.solve(sc, &[], &rhs);
    let (x_s, y_s) = sol.split_at(n);
    let diag = original_diagnostics(input, sc, x_s, y_s, &[], inf_norm(input.f), inf_norm(input.linear));
    let ok = diag.primal <= config.feasibility_tol && diag.dual <= config.feasibility_tol.max(1e-7);
    let status = if diag.is_nan() {
        SolverStatus::NumericFailure
    } else if ok {
        SolverStatus::Optimal
    } else {
        // a linear objective with no inequality constraints that fails
        // stationarity has no finite optimum
        SolverStatus::NumericFailure
    };
    finish(status, input, sc, x_s, 1, &diag)
}
