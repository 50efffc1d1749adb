use flowcurve::estimators::problems::WeightedPoint;
use flowcurve::estimators::*;
use flowcurve::solver::SolverConfig;
use flowcurve::synth;

fn main() {
    let cfg = SolverConfig::default();
    let mut failures = 0;
    let mut max_iters = 0;
    let mut sum_iters = 0usize;
    let mut count = 0usize;
    for seed in 1..80u64 {
        let data = synth::concave_noisy_observations(60, seed);
        let points: Vec<WeightedPoint> = data.iter().map(WeightedPoint::from_observation).collect();
        for tau in [0.25, 0.5, 0.75, 0.9] {
            for gamma in [0.0, 0.1, 1.0, 10.0] {
                let spec = EstimatorSpec { method: Method::Cqrb, tau: Some(tau), gamma: Some(gamma), monotone: false, anchor_origin: false };
                match fit_points(&points, &spec, &cfg) {
                    Ok(r) => { max_iters = max_iters.max(r.solution.iterations); sum_iters += r.solution.iterations; count += 1; }
                    Err(e) => { failures += 1; println!("seed {seed} tau {tau} gamma {gamma}: {e}"); }
                }
            }
        }
    }
    println!("failures {failures}/{} max_iters {max_iters} avg {:.1}", 79*16, sum_iters as f64 / count as f64);
}
