mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{all_paths, random_distribution, random_system};
use randcarpet::model::RandomCarpetSystem;
use randcarpet::sampler::{
    approximate_square, approximate_square_depth, approximate_square_threshold, cylinder_log_mass,
    cylinder_rectangle, generate_approximation, log_square_ratio, sample_environment, sample_path,
    BernoulliMeasure,
};

fn measure(s: &RandomCarpetSystem, pseed: u64) -> BernoulliMeasure {
    let p = random_distribution(s, &mut ChaCha8Rng::seed_from_u64(pseed));
    BernoulliMeasure::new(s, p, 1e-13).unwrap()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn square_ratio_bound_and_monotone_depth(seed in any::<u64>(), pseed in any::<u64>()) {
        let s = random_system(seed, 3);
        let m = measure(&s, pseed);
        let n_max = 2000;
        let env = sample_environment(&s, n_max, pseed).unwrap();
        let path = sample_path(&s, &m, &env, pseed).unwrap();
        let start = approximate_square_threshold(&s).ceil().max(1.0) as usize;
        let bound = -s.min_width().ln();
        let mut prev = 0;
        for n in (start..=n_max).step_by(7) {
            let r = log_square_ratio(&s, &env, &path, n).unwrap();
            prop_assert!(r >= -1e-9 && r <= bound + 1e-9, "n={} ratio {}", n, r);
            let l = approximate_square_depth(&s, &env, &path, n).unwrap();
            prop_assert!(l >= prev && l <= n && l >= 1);
            prev = l;
        }
    }

    #[test]
    fn square_log_ratio_tends_to_one(seed in any::<u64>(), pseed in any::<u64>()) {
        let s = random_system(seed, 3);
        let m = measure(&s, pseed);
        let n = 10_000;
        let env = sample_environment(&s, n, pseed).unwrap();
        let path = sample_path(&s, &m, &env, pseed).unwrap();
        let depth = approximate_square_depth(&s, &env, &path, n).unwrap();
        let rect_w = cylinder_rectangle(&s, &env, &path, depth).unwrap().log_w;
        let rect_h = cylinder_rectangle(&s, &env, &path, n).unwrap().log_h;
        let max_ln_a = -s.min_width().ln();
        let min_ln_b = -s.max_height().ln();
        let allowed = 2.0 * max_ln_a / (n as f64 * min_ln_b);
        prop_assert!((rect_w / rect_h - 1.0).abs() <= allowed);
    }

    #[test]
    fn cylinder_masses_sum_to_one(seed in any::<u64>(), pseed in any::<u64>(), n in 1usize..=6) {
        let s = random_system(seed, 3);
        let m = measure(&s, pseed);
        let env = sample_environment(&s, n, pseed).unwrap();
        let branching: usize = env.indices.iter().map(|&i| s.maps()[i].rows.iter().map(|r| r.cells.len()).sum::<usize>()).product();
        prop_assume!(branching <= 200_000);
        let logs: Vec<f64> = all_paths(&s, &m, &env, n)
            .iter()
            .map(|p| cylinder_log_mass(&s, &m, &env, p, n).unwrap())
            .collect();
        prop_assert!(log_sum_exp(&logs).abs() < 1e-10);
    }

    #[test]
    fn approximate_squares_nest(seed in any::<u64>(), pseed in any::<u64>()) {
        let s = random_system(seed, 3);
        let m = measure(&s, pseed);
        let n_max = 300;
        let env = sample_environment(&s, n_max, pseed).unwrap();
        let path = sample_path(&s, &m, &env, pseed).unwrap();
        let start = approximate_square_threshold(&s).ceil().max(1.0) as usize;
        let mut prev = approximate_square(&s, &env, &path, start).unwrap();
        for n in start + 1..=n_max {
            let b = approximate_square(&s, &env, &path, n).unwrap();
            prop_assert!(b.is_subset_of(&prev));
            prev = b;
        }
    }

    #[test]
    fn cylinder_rectangles_nest(seed in any::<u64>(), pseed in any::<u64>()) {
        let s = random_system(seed, 3);
        let m = measure(&s, pseed);
        let env = sample_environment(&s, 40, pseed).unwrap();
        let path = sample_path(&s, &m, &env, pseed).unwrap();
        let mut prev = cylinder_rectangle(&s, &env, &path, 0).unwrap();
        for n in 1..=40 {
            let r = cylinder_rectangle(&s, &env, &path, n).unwrap();
            prop_assert!(prev.contains(&r, 1e-12));
            prop_assert!(r.x >= 0.0 && r.y >= 0.0 && r.x + r.w <= 1.0 + 1e-12 && r.y + r.h <= 1.0 + 1e-12);
            prev = r;
        }
    }

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), pseed in any::<u64>()) {
        let s = random_system(seed, 3);
        let m = measure(&s, pseed);
        let env = sample_environment(&s, 200, pseed).unwrap();
        prop_assert_eq!(&env, &sample_environment(&s, 200, pseed).unwrap());
        let path = sample_path(&s, &m, &env, pseed).unwrap();
        prop_assert_eq!(&path, &sample_path(&s, &m, &env, pseed).unwrap());
        let a = generate_approximation(&s, &env, 8, 300).unwrap();
        let b = generate_approximation(&s, &env, 8, 300).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn approximation_rect_count_is_branching_product(seed in any::<u64>(), pseed in any::<u64>()) {
        let s = random_system(seed, 3);
        let env = sample_environment(&s, 5, pseed).unwrap();
        let set = generate_approximation(&s, &env, 5, 1 << 20).unwrap();
        let expected: usize = env.indices.iter().map(|&i| s.maps()[i].rows.iter().map(|r| r.cells.len()).sum::<usize>()).product();
        prop_assert!(!set.truncated);
        prop_assert_eq!(set.rects.len(), expected);
        // interiors are pairwise disjoint
        let small = if set.rects.len() <= 3000 { &set.rects[..] } else { &set.rects[..0] };
        for (a, ra) in small.iter().enumerate() {
            for rb in &small[a + 1..] {
                let ox = ra.x.max(rb.x) < (ra.x + ra.w).min(rb.x + rb.w) - 1e-12;
                let oy = ra.y.max(rb.y) < (ra.y + ra.h).min(rb.y + rb.h) - 1e-12;
                prop_assert!(!(ox && oy));
            }
        }
    }
}
