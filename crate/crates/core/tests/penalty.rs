use cosr_core::caching::AnchorStrategy;
use cosr_core::harness::{solve_instance, DeploymentConfig, InstanceSpec, Method};
use cosr_core::solver::{SolveOptions, SolverConfig};

// Unbounded residual balancing makes this window spiral outward.
#[test]
fn capped_penalty_adaptation_converges() {
    let dep = DeploymentConfig::default();
    let spec = InstanceSpec {
        seed: 1,
        end_time: 12,
        m: 10,
        q: 50,
        strategy: AnchorStrategy::PairwiseUnion,
    };
    let run = |cap| {
        let solver = SolverConfig {
            max_penalty_changes: cap,
            ..Default::default()
        };
        solve_instance(
            &dep,
            &solver,
            &spec,
            Method::CosrAa,
            &SolveOptions::default(),
        )
        .unwrap()
    };
    let capped = run(SolverConfig::default().max_penalty_changes);
    assert!(capped.converged);
    assert!(capped.nmse < 0.01, "nmse {}", capped.nmse);
    let unbounded = run(usize::MAX);
    assert!(!unbounded.converged);
    assert!(unbounded.nmse > 1.0);
}
