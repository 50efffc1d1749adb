use flowcurve::estimators::*;
use flowcurve::solver::{solve_qp, solve_lp, SolverConfig};
use flowcurve::synth;

fn main() {
    let data = synth::concave_noisy_observations(30, 9);
    let cfg = SolverConfig::default();
    let lp = build_cqr(&data, 0.75).unwrap();
    let qp = build_pcqr(&data, 0.75, 0.0).unwrap();
    let sol_lp = solve_lp(&lp.program, &cfg).unwrap();
    let sol_qp = solve_qp(&qp.program, &cfg).unwrap();
    println!("LP: status {:?} iters {} obj {:.12} pr {:.2e} du {:.2e} gap {:.2e}",
        sol_lp.status, sol_lp.iterations, sol_lp.objective, sol_lp.primal_residual, sol_lp.dual_residual, sol_lp.complementarity);
    println!("QP: status {:?} iters {} obj {:.12} pr {:.2e} du {:.2e} gap {:.2e}",
        sol_qp.status, sol_qp.iterations, sol_qp.objective, sol_qp.primal_residual, sol_qp.dual_residual, sol_qp.complementarity);

    for gamma in [1.0, 100.0, 1e4, 1e6] {
        let problem = build_pcqr(&data, 0.75, gamma).unwrap();
        let sol = solve_qp(&problem.program, &cfg).unwrap();
        println!("gamma {:>9}: status {:?} iters {} obj {:.6} pr {:.2e} du {:.2e} gap {:.2e}",
            gamma, sol.status, sol.iterations, sol.objective, sol.primal_residual, sol.dual_residual, sol.complementarity);
    }
}
