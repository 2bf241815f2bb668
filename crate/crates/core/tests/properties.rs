mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_distribution, random_system};
use randcarpet::model::{parse_system, row_sum, serialize_system, validate_geometry, Constraint};
use randcarpet::moran::{
    family_f, family_g, lambda_of, lambda_upper_bound, phi, solve_alpha, solve_lambda, solve_t, t_bounds,
};
use randcarpet::optimizer::{maximize_structural_with, objective, StructuralOptions};
use randcarpet::CarpetError;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn row_sums_decrease_in_t(seed in any::<u64>(), t in 0.0f64..0.99) {
        let s = random_system(seed, 3);
        for i in 0..s.num_maps() {
            for j in 0..s.num_rows(i) {
                let a = row_sum(&s, i, j, t).unwrap();
                let b = row_sum(&s, i, j, t + 0.01).unwrap();
                prop_assert!(b < a);
            }
        }
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>()) {
        let s = random_system(seed, 3);
        let back = parse_system(&serialize_system(&s)).unwrap();
        prop_assert_eq!(back.to_doc(), s.to_doc());
    }

    #[test]
    fn overlapping_cells_are_rejected(seed in any::<u64>()) {
        let s = random_system(seed, 3);
        prop_assert!(validate_geometry(&s.to_doc()).ok);
        let mut doc = s.to_doc();
        let target = doc.maps.iter_mut().flat_map(|m| m.rows.iter_mut()).find(|r| r.cells.len() > 1);
        if let Some(row) = target {
            // slide the second cell onto the first
            row.cells[1].x_offset = row.cells[0].x_offset + 0.5 * row.cells[0].width;
            let report = validate_geometry(&doc);
            prop_assert!(!report.ok);
            prop_assert!(report.has(Constraint::CellGap));
            prop_assert!(matches!(
                randcarpet::RandomCarpetSystem::from_doc(doc),
                Err(CarpetError::Geometry(_))
            ));
        }
    }

    #[test]
    fn phi_decreases(seed in any::<u64>(), pseed in any::<u64>()) {
        let s = random_system(seed, 3);
        let p = random_distribution(&s, &mut ChaCha8Rng::seed_from_u64(pseed));
        let h = 1e-4;
        for k in 0..20 {
            let t = k as f64 / 20.0;
            let d = (phi(&s, &p, t + h) - phi(&s, &p, t)) / h;
            prop_assert!(d < 0.0, "phi'({}) = {}", t, d);
        }
    }

    #[test]
    fn t_and_lambda_within_bounds(seed in any::<u64>(), pseed in any::<u64>()) {
        let s = random_system(seed, 3);
        let b = t_bounds(&s, 1e-13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(pseed);
        for _ in 0..10 {
            let p = random_distribution(&s, &mut rng);
            let t = solve_t(&s, &p, 1e-13).unwrap();
            prop_assert!(t >= b.t_under - 1e-9 && t <= b.t_over + 1e-9);
            let l = lambda_of(&s, &p);
            prop_assert!(l >= -1e-12 && l <= lambda_upper_bound(&s) + 1e-12);
            prop_assert!(phi(&s, &p, t).abs() <= 1e-12 || t == 0.0 || t == 1.0);
        }
    }

    #[test]
    fn f_increases_and_g_decreases(seed in any::<u64>(), u in 0.05f64..0.95, lambda in 0.0f64..2.0) {
        let s = random_system(seed, 3);
        let b = t_bounds(&s, 1e-13).unwrap();
        prop_assume!(b.t_over - b.t_under > 1e-3);
        let t = b.t_under + u * (b.t_over - b.t_under);
        let h = 1e-3;
        for k in -10..=10 {
            let alpha = k as f64 * 0.5;
            let df = family_f(&s, alpha + h, lambda, t) - family_f(&s, alpha, lambda, t);
            prop_assert!(df >= -1e-14, "F not increasing at alpha={}", alpha);
            let dg = family_g(&s, alpha, lambda + h, t) - family_g(&s, alpha, lambda, t);
            prop_assert!(dg < 0.0, "G not decreasing at lambda={}", lambda);
        }
        let a = solve_alpha(&s, lambda, t, 1e-12);
        // alpha past the doubling cap is an accepted failure mode at the bracket ends
        if let Ok(a) = a {
            prop_assert!(family_f(&s, a, lambda, t).abs() <= 1e-12);
        }
    }

    #[test]
    fn family_point_consistent(seed in any::<u64>(), u in 0.05f64..0.95) {
        let tol = 1e-12;
        let s = random_system(seed, 3);
        let b = t_bounds(&s, tol).unwrap();
        prop_assume!(b.t_over - b.t_under > 1e-3);
        let t = b.t_under + u * (b.t_over - b.t_under);
        let sol = solve_lambda(&s, t, tol).unwrap();
        let tp = solve_t(&s, &sol.point.p, tol).unwrap();
        prop_assert!((tp - t).abs() <= 10.0 * tol, "t(P(t)) = {} vs {}", tp, t);
        prop_assert!((lambda_of(&s, &sol.point.p) - sol.lambda).abs() < 1e-9);
    }

    #[test]
    fn family_point_dominates_level_set(seed in any::<u64>(), pseed in any::<u64>()) {
        // any P is beaten by the family point at its own t
        let s = random_system(seed, 3);
        let b = t_bounds(&s, 1e-13).unwrap();
        let p = random_distribution(&s, &mut ChaCha8Rng::seed_from_u64(pseed));
        let t = solve_t(&s, &p, 1e-14).unwrap();
        prop_assume!(t - b.t_under > 1e-3 && b.t_over - t > 1e-3);
        let sol = solve_lambda(&s, t, 1e-13).unwrap();
        prop_assert!(lambda_of(&s, &p) <= sol.lambda + 1e-9);
    }

    #[test]
    fn structural_grid_independent(seed in any::<u64>()) {
        let s = random_system(seed, 2);
        let coarse = StructuralOptions { grid_points: 64, ..Default::default() };
        let fine = StructuralOptions { grid_points: 256, ..Default::default() };
        if let (Ok(a), Ok(b)) = (maximize_structural_with(&s, &coarse), maximize_structural_with(&s, &fine)) {
            prop_assert!((a.dimension - b.dimension).abs() < 1e-8, "{} vs {}", a.dimension, b.dimension);
        }
    }

    #[test]
    fn structural_maximizer_is_stationary(seed in any::<u64>(), pseed in any::<u64>()) {
        let s = random_system(seed, 2);
        if let Ok(r) = maximize_structural_with(&s, &StructuralOptions::default()) {
            let mut rng = ChaCha8Rng::seed_from_u64(pseed);
            let q = random_distribution(&s, &mut rng);
            for eps in [1e-3, 1e-2] {
                let blended: Vec<Vec<f64>> = r
                    .p_star
                    .weights()
                    .iter()
                    .zip(q.weights())
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - eps) * x + eps * y).collect())
                    .collect();
                let p = randcarpet::RowDistribution::new(&s, blended).unwrap();
                prop_assert!(objective(&s, &p, 1e-14).unwrap() <= r.dimension + 1e-9);
            }
        }
    }
}
