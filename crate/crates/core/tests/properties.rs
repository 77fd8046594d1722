use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robustfair::dataset::{read_csv, write_csv_to, CsvSchema, Dataset, Group};
use robustfair::objective::{branch_values, objective_l, TradeoffConfig};
use robustfair::point_attack::best_point;
use robustfair::rankone_attack::worst_case_value;

fn random_dataset(seed: u64, n: usize, m: usize, p: usize) -> (Dataset, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || rng.sample::<f64, _>(StandardNormal);
    let x = DMatrix::from_fn(n, p, |_, _| normal());
    let y = DVector::from_fn(n, |_, _| 2.0 * normal());
    let beta = DVector::from_fn(p, |_, _| normal());
    (Dataset::new(x, y, m).unwrap(), beta)
}

fn sizes() -> impl Strategy<Value = (usize, usize)> {
    (6usize..16).prop_flat_map(|n| (Just(n), 2..=n - 2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_max_of_branches(seed in any::<u64>(), (n, m) in sizes(), lambda in 0.0f64..5.0) {
        let (ds, beta) = random_dataset(seed, n, m, 3);
        let cfg = TradeoffConfig::new(lambda, 1.0).unwrap();
        let (g, h) = branch_values(&beta, &ds, lambda).unwrap();
        let l = objective_l(&beta, &ds, &cfg).unwrap();
        prop_assert!((l - g.max(h)).abs() <= 1e-10 * (1.0 + l.abs()));
    }

    #[test]
    fn best_point_beats_any_feasible_point(
        seed in any::<u64>(),
        (n, m) in sizes(),
        lambda in 0.0f64..3.0,
        eta in 0.1f64..5.0,
        dir in prop::collection::vec(-1.0f64..1.0, 4),
        radius in 0.0f64..=1.0,
        group_one in any::<bool>(),
    ) {
        let (ds, beta) = random_dataset(seed, n, m, 3);
        let cfg = TradeoffConfig::new(lambda, eta).unwrap();
        let best = best_point(&beta, &ds, &cfg).unwrap().achieved_value;
        let z = DVector::from_vec(dir);
        prop_assume!(z.norm() > 1e-6);
        let z = z.normalize() * (eta * radius);
        let x0 = z.rows(0, 3).into_owned();
        let group = if group_one { Group::One } else { Group::Two };
        let v = objective_l(&beta, &ds.insert_row(&x0, z[3], group).unwrap(), &cfg).unwrap();
        prop_assert!(v <= best + 1e-9 * (1.0 + best.abs()), "sample {v} > best {best}");
    }

    #[test]
    fn rankone_profile_beats_any_attack(
        seed in any::<u64>(),
        (n, m) in sizes(),
        lambda in 0.0f64..3.0,
        eta in 0.1f64..5.0,
        cseed in any::<u64>(),
        scale in 0.0f64..=1.0,
    ) {
        let (ds, beta) = random_dataset(seed, n, m, 3);
        let cfg = TradeoffConfig::new(lambda, eta).unwrap();
        let best = worst_case_value(&beta, &ds, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cseed);
        let c = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        prop_assume!(c.norm() > 1e-6 && d.norm() > 1e-6);
        let delta = c.normalize() * d.normalize().transpose() * (eta * scale);
        let v = objective_l(&beta, &ds.with_features(ds.features() + delta).unwrap(), &cfg).unwrap();
        prop_assert!(v <= best + 1e-9 * (1.0 + best.abs()), "sample {v} > profile {best}");
    }

    #[test]
    fn group_swap_preserves_losses(seed in any::<u64>(), (n, m) in sizes(), lambda in 0.0f64..3.0, eta in 0.1f64..5.0) {
        let (ds, beta) = random_dataset(seed, n, m, 3);
        let swapped = ds.swap_groups();
        let cfg = TradeoffConfig::new(lambda, eta).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs());
        prop_assert!(close(objective_l(&beta, &ds, &cfg).unwrap(), objective_l(&beta, &swapped, &cfg).unwrap()));
        prop_assert!(close(
            worst_case_value(&beta, &ds, &cfg).unwrap(),
            worst_case_value(&beta, &swapped, &cfg).unwrap()
        ));
        prop_assert!(close(
            best_point(&beta, &ds, &cfg).unwrap().achieved_value,
            best_point(&beta, &swapped, &cfg).unwrap().achieved_value
        ));
    }

    #[test]
    fn worst_cases_grow_with_budget(seed in any::<u64>(), (n, m) in sizes(), lambda in 0.0f64..3.0, eta in 0.1f64..5.0, more in 0.0f64..2.0) {
        let (ds, beta) = random_dataset(seed, n, m, 3);
        let small = TradeoffConfig::new(lambda, eta).unwrap();
        let large = TradeoffConfig::new(lambda, eta + more).unwrap();
        let clean = objective_l(&beta, &ds, &small).unwrap();
        let tol = |v: f64| 1e-9 * (1.0 + v.abs());
        let r_small = worst_case_value(&beta, &ds, &small).unwrap();
        let r_large = worst_case_value(&beta, &ds, &large).unwrap();
        prop_assert!(r_small >= clean - tol(clean));
        prop_assert!(r_large >= r_small - tol(r_small));
        let p_small = best_point(&beta, &ds, &small).unwrap().achieved_value;
        let p_large = best_point(&beta, &ds, &large).unwrap().achieved_value;
        prop_assert!(p_large >= p_small - tol(p_small));
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), (n, m) in sizes(), p in 1usize..5) {
        let (ds, _) = random_dataset(seed, n, m, p);
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        prop_assert_eq!(back.m(), ds.m());
        prop_assert_eq!(back.features(), ds.features());
        prop_assert_eq!(back.targets(), ds.targets());
        prop_assert_eq!(back.feature_names(), ds.feature_names());
    }
}
