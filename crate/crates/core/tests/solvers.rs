use adfs_core::adfs::{run_adfs_efficient, run_ns_adfs_efficient, RunOptions};
use adfs_core::augmented::{build_augmented, build_augmented_ns};
use adfs_core::baselines::{ns_reference, point_saga, reference_optimum, FlatProblem};
use adfs_core::objective::{LocalObjective, LossKind, Sample};
use adfs_core::topology::{build_topology, TopologyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn objectives(n: usize, m: usize, d: usize, loss: LossKind, seed: u64) -> Vec<LocalObjective<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = (0..m)
                .map(|_| {
                    let x = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let y = match loss {
                        LossKind::Logistic => {
                            if rng.random_bool(0.5) {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                        _ => rng.random_range(-1.0..1.0),
                    };
                    Sample::new(x, y).unwrap()
                })
                .collect();
            LocalObjective::new(s, 1.0, loss).unwrap()
        })
        .collect()
}

#[test]
fn adfs_reaches_the_reference_optimum() {
    for loss in [LossKind::Logistic, LossKind::Squared] {
        let objs = objectives(4, 10, 5, loss, 1);
        let flat = FlatProblem::from_objectives(&objs).unwrap();
        let (theta, f_star) = reference_optimum(&flat, 1e-13).unwrap();
        let g = build_topology(&TopologyKind::Grid2d { rows: 2, cols: 2 }).unwrap();
        let p = build_augmented(g, objs, 1.0, None).unwrap();
        let mut opts = RunOptions::new(3000, 3, 1000);
        opts.f_star = Some(f_star);
        let rec = run_adfs_efficient(&p, &opts).unwrap();
        let last = rec.rows.last().unwrap();
        assert!(last.subopt.unwrap() < 1e-9, "{loss:?}: {:?}", last.subopt);
        let dist: f64 = rec.theta.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(dist.sqrt() < 1e-4);
    }
}

#[test]
fn ns_adfs_dual_gap_shrinks() {
    let objs = objectives(4, 5, 3, LossKind::Absolute, 1);
    let flat = FlatProblem::from_objectives(&objs).unwrap();
    let r = ns_reference(&flat, 1e-13).unwrap();
    let g = build_topology(&TopologyKind::Grid2d { rows: 2, cols: 2 }).unwrap();
    let p = build_augmented_ns(g, objs, 1.0, None).unwrap();
    let rec = run_ns_adfs_efficient(&p, &RunOptions::new(800, 0, 100)).unwrap();
    let gaps: Vec<f64> = rec.rows.iter().map(|row| row.dual_value.unwrap() - r.dual_value).collect();
    assert!(gaps.iter().all(|&g| g > -1e-9));
    assert!(gaps[8] < 0.05 * gaps[1]);
}

#[test]
fn runs_stop_at_the_target() {
    let objs = objectives(4, 10, 5, LossKind::Logistic, 2);
    let flat = FlatProblem::from_objectives(&objs).unwrap();
    let (_, f_star) = reference_optimum(&flat, 1e-13).unwrap();
    let g = build_topology(&TopologyKind::Grid2d { rows: 2, cols: 2 }).unwrap();
    let p = build_augmented(g, objs, 1.0, None).unwrap();
    let mut opts = RunOptions::new(100_000, 0, 10).with_target(1e-6);
    assert!(run_adfs_efficient(&p, &opts).is_err());
    opts.f_star = Some(f_star);
    for rec in [run_adfs_efficient(&p, &opts).unwrap(), point_saga(&flat, &opts).unwrap()] {
        let last = rec.rows.last().unwrap();
        assert!(last.subopt.unwrap() <= 1e-6);
        assert!(last.t < 100_000);
        let before = &rec.rows[rec.rows.len() - 2];
        assert!(before.subopt.unwrap() > 1e-6);
    }
}
