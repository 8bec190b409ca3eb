#[path = "support/interleave.rs"]
mod interleave;

use proptest::prelude::*;

#[test]
fn five_hundred_ops_on_fifty_tasks() {
    for seed in 0..20 {
        let r = interleave::run(seed, 50, 500, true);
        assert!(r.safe(), "seed {seed}: {r:?}");
        assert!(r.accepted, "seed {seed}: batch never accepted");
        assert!(r.export.is_some());
    }
}

#[test]
fn rejections_actually_happen() {
    // the suite is only meaningful if some runs exercise the reset path
    let rejected: usize = (0..20).map(|s| interleave::run(s, 50, 500, false).rejections).sum();
    assert!(rejected > 0);
}

#[test]
fn export_is_reproducible() {
    for seed in [3, 11, 42] {
        let a = interleave::run(seed, 50, 500, true);
        let b = interleave::run(seed, 50, 500, true);
        assert_eq!(a.export, b.export, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn safety_holds_for_any_seed(seed in any::<u64>(), tasks in 2usize..30, ops in 50usize..400) {
        let r = interleave::run(seed, tasks, ops, true);
        prop_assert!(r.safe(), "{:?}", r);
        prop_assert!(r.accepted);
    }
}
