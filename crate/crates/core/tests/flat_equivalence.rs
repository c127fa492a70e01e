use std::path::Path;
use std::sync::Arc;

use palm::baselines::FlatRmax;
use palm::exec::{ExecConfig, ExecutionContext};
use palm::harness::make_task;
use palm::lamdp::load_hierarchy;
use palm::SeededRng;

/// A single-node hierarchy over the primitives behaves exactly like flat R-MAX.
fn lockstep(domain: &str, m: u64, episodes: usize, seed: u64) {
    let mut rng = SeededRng::new(seed);
    let task = make_task(domain, &mut rng).unwrap();
    let config = ExecConfig { m, ..ExecConfig::default() };
    let h = load_hierarchy(Path::new("builtin:flat-taxi")).unwrap();
    let mut palm = ExecutionContext::new(&h, Arc::clone(&task.env), config.clone(), SeededRng::new(seed + 100)).unwrap();
    let mut flat = FlatRmax::new(Arc::clone(&task.env), &config, SeededRng::new(seed + 100));
    for k in 0..episodes {
        let a = palm.run_episode(&task.start).unwrap();
        let b = flat.episode(&task.start).unwrap();
        assert_eq!(a.trace, b.trace, "{domain} episode {k}");
        assert_eq!(a.outcome, b.outcome);
        assert_eq!(a.unknown_total(), b.unknown_total(), "{domain} episode {k}");
    }
}

#[test]
fn deterministic_small_taxi() {
    for seed in 0..3 {
        lockstep("taxi-small", 1, 25, seed);
    }
}

#[test]
fn noisy_classic_taxi() {
    lockstep("taxi-classic", 5, 15, 4);
}
