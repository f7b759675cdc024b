use dualgrad_core::dual::{dual_value, evaluate, project_onto_domain, weighted_step};
use dualgrad_core::errorbound::{check_descent_lemma, check_lemma4, check_prox_lipschitz3};
use dualgrad_core::gen::generate;
use dualgrad_core::model::{assemble_dense, validate};
use dualgrad_core::reference::solve_reference;
use dualgrad_core::{BlockProblem, DualPoint, StepData};
use nalgebra::DVector;
use proptest::prelude::*;

fn instance(seed: u64, gamma: bool) -> BlockProblem {
    generate(5, 3, 2, gamma, seed).unwrap()
}

fn point(problem: &BlockProblem, raw: &[f64]) -> DualPoint {
    let n = problem.graph().total_p() + problem.graph().total_q();
    let flat = DVector::from_fn(n, |k, _| raw[k % raw.len()] * (1.0 + k as f64 * 0.01));
    project_onto_domain(&DualPoint::from_flat(problem.graph(), &flat).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weak_duality(seed in 0u64..50, gamma: bool, raw in prop::collection::vec(-5.0f64..5.0, 8)) {
        let p = instance(seed, gamma);
        let r = solve_reference(&p).unwrap();
        let l = point(&p, &raw);
        prop_assert!(dual_value(&p, &l).unwrap() <= r.f_star + 1e-9 * r.f_star.abs().max(1.0));
    }

    #[test]
    fn flat_round_trip(seed in 0u64..50, raw in prop::collection::vec(-5.0f64..5.0, 8)) {
        let p = instance(seed, false);
        let l = point(&p, &raw);
        let back = DualPoint::from_flat(p.graph(), &l.to_flat()).unwrap();
        prop_assert_eq!(back.to_flat(), l.to_flat());
    }

    #[test]
    fn projection_is_idempotent_and_in_domain(seed in 0u64..50, raw in prop::collection::vec(-5.0f64..5.0, 8)) {
        let p = instance(seed, false);
        let flat = DVector::from_fn(p.graph().total_p() + p.graph().total_q(), |k, _| raw[k % raw.len()]);
        let once = project_onto_domain(&DualPoint::from_flat(p.graph(), &flat).unwrap());
        prop_assert!(once.in_domain());
        prop_assert_eq!(project_onto_domain(&once).to_flat(), once.to_flat());
    }

    #[test]
    fn step_never_decreases_dual(seed in 0u64..50, gamma: bool, raw in prop::collection::vec(-5.0f64..5.0, 8)) {
        let p = instance(seed, gamma);
        let w = StepData::compute(&p).unwrap().weights;
        let l = point(&p, &raw);
        let e = evaluate(&p, &l).unwrap();
        let next = weighted_step(&l, &e.grad, &w);
        prop_assert!(next.in_domain());
        let d_next = dual_value(&p, &next).unwrap();
        let half = 0.5 * next.distance_w(&l, &w).powi(2);
        prop_assert!(d_next >= e.value + half - 1e-9 * e.value.abs().max(1.0));
    }

    #[test]
    fn pairwise_inequalities_hold(
        seed in 0u64..50,
        gamma: bool,
        a in prop::collection::vec(-5.0f64..5.0, 8),
        b in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let p = instance(seed, gamma);
        let w = StepData::compute(&p).unwrap().weights;
        let (x, y) = (point(&p, &a), point(&p, &b));
        prop_assert!(check_lemma4(&p, &w, &x, &y).unwrap().holds(1e-8));
        prop_assert!(check_prox_lipschitz3(&p, &w, &x, &y).unwrap().holds(1e-8));
        prop_assert!(check_descent_lemma(&p, &w, &x, &y).unwrap().holds(1e-8));
    }

    #[test]
    fn weights_sum_neighbor_constants(seed in 0u64..50, omega in 1usize..5) {
        let p = generate(6, 2, omega, false, seed).unwrap();
        prop_assert!(validate(&p).is_valid());
        // independent oracle: SVD of the dense column block over the smallest Hessian eigenvalue
        let (g, _) = assemble_dense(&p);
        let n = p.graph().n(0);
        let l: Vec<f64> = (0..p.graph().primal_count())
            .map(|i| {
                let cols = g.columns(p.graph().n_offset(i), n).into_owned();
                let s = cols.singular_values().max();
                let sigma = p.objective(i).hessian().symmetric_eigenvalues().min();
                s * s / sigma
            })
            .collect();
        let w = StepData::compute(&p).unwrap().weights;
        for j in 0..p.graph().dual_count() {
            let expected: f64 = (0..p.graph().primal_count()).filter(|&i| p.graph().has_edge(j, i)).map(|i| l[i]).sum();
            // power iteration stops on a 1e-10 relative change, which can leave a slightly larger gap
            prop_assert!((w.block(j) - expected).abs() <= 1e-8 * expected, "{} vs {}", w.block(j), expected);
        }
    }
}
