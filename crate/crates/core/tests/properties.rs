mod oracles;

use adasplit_core::adasplit::convergence_metric;
use adasplit_core::multtest::{fisher_combine, holm};
use adasplit_core::nuisance::{
    certainty, fit_bar_learner, fit_rlearner_ols, marginalized_residual, posterior_e,
    scaled_residual,
};
use adasplit_core::randtest::{
    mc_pvalue, optimal_soft_inclusion, randomization_pvalue, soft_inclusion_items,
    TestStatisticSpec,
};
use adasplit_core::regress::{diversity_scores, fit_wls};
use adasplit_core::{
    closed_testing, partition_by_quantiles, validate_dataset, Dataset, Error, FoldState,
    GlobalTest, LinearModel, Matrix, SubgroupPartition,
};
use proptest::prelude::*;

fn dataset_strategy(max_n: usize, d: usize) -> impl Strategy<Value = Dataset> {
    (1..=max_n).prop_flat_map(move |n| {
        (
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n),
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0.05f64..0.95, n),
        )
            .prop_map(|(rows, y, z, e)| {
                let z = z.into_iter().map(|b| f64::from(u8::from(b))).collect();
                Dataset::new(Matrix::from_rows(&rows).unwrap(), y, z, Some(e)).unwrap()
            })
    })
}

fn cuts_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(1u32..100, 0..6)
        .prop_map(|s| s.into_iter().map(|v| f64::from(v) / 100.0).collect())
}

fn check_partition(p: &SubgroupPartition, n: usize) {
    let mut seen = vec![false; n];
    for g in p.groups() {
        assert!(!g.is_empty());
        for &i in g {
            assert!(!seen[i], "unit {i} in two groups");
            seen[i] = true;
        }
    }
    assert!(seen.into_iter().all(|s| s));
}

fn random_partition(n: usize, labels: &[usize]) -> SubgroupPartition {
    let k = labels.iter().take(n).max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (i, &l) in labels.iter().take(n).enumerate() {
        groups[l].push(i);
    }
    groups.retain(|g| !g.is_empty());
    SubgroupPartition::from_groups(groups, n).unwrap()
}

proptest! {
    #[test]
    fn quantile_partition_is_a_partition(n in 1usize..80, cuts in cuts_strategy(), seed in any::<u32>()) {
        // distinct values of the first column
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut s = u64::from(seed) | 1;
        for i in (1..n).rev() {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            vals.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let rows: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v, 0.0]).collect();
        let ds = Dataset::new(Matrix::from_rows(&rows).unwrap(), vec![0.0; n], vec![0.0; n], None).unwrap();
        match partition_by_quantiles(&ds, 0, &cuts) {
            Ok(p) => {
                check_partition(&p, n);
                prop_assert_eq!(p.k(), cuts.len() + 1);
            }
            Err(e) => prop_assert!(matches!(e, Error::EmptySubgroup { .. }), "{e}"),
        }
        // distinct inverted-CDF ranks below n leave every group nonempty
        let ranks: Vec<usize> = cuts
            .iter()
            .map(|&c| ((c * n as f64) - 1e-9).ceil().max(1.0) as usize)
            .collect();
        if ranks.windows(2).all(|w| w[0] < w[1]) && ranks.last().is_none_or(|&r| r < n) {
            prop_assert!(partition_by_quantiles(&ds, 0, &cuts).is_ok());
        }
    }

    #[test]
    fn validation_is_idempotent(ds in dataset_strategy(30, 3)) {
        let again = validate_dataset(ds.to_raw()).unwrap();
        prop_assert_eq!(&again, &ds);
        prop_assert_eq!(validate_dataset(again.to_raw()).unwrap(), ds);
    }

    #[test]
    fn fold_state_stays_consistent(
        labels in prop::collection::vec(0usize..4, 1..60),
        moves in prop::collection::vec(0usize..60, 0..80),
    ) {
        let n = labels.len();
        let partition = random_partition(n, &labels);
        let mut folds = FoldState::all_inference(&partition);
        let mut expected_nuisance = vec![false; n];
        for m in moves {
            let j = m % n;
            let moved = folds.move_to_nuisance(j);
            prop_assert_eq!(moved, !expected_nuisance[j]);
            expected_nuisance[j] = true;

            let mut count = vec![0usize; n];
            for &i in folds.nuisance() {
                count[i] += 1;
                prop_assert!(folds.is_nuisance(i));
            }
            for k in 0..partition.k() {
                for &i in folds.inference(k) {
                    count[i] += 1;
                    prop_assert_eq!(partition.group_of(i), k);
                    prop_assert!(!expected_nuisance[i]);
                }
                let pi = folds.inference(k).len() as f64 / partition.group(k).len() as f64;
                prop_assert_eq!(folds.proportion(k), pi);
            }
            prop_assert!(count.iter().all(|&c| c == 1));
            prop_assert_eq!(folds.nuisance().len(), expected_nuisance.iter().filter(|&&b| b).count());
        }
    }

    #[test]
    fn ols_residuals_are_orthogonal(ds in dataset_strategy(40, 2)) {
        prop_assume!(ds.n() >= 8);
        let Ok(model) = fit_wls(ds.x(), ds.y(), &vec![1.0; ds.n()], 0.0) else {
            return Ok(());
        };
        let r: Vec<f64> = (0..ds.n()).map(|i| ds.y()[i] - model.predict_row(ds.x().row(i))).collect();
        prop_assert!(r.iter().sum::<f64>().abs() <= 1e-8);
        for c in 0..ds.d() {
            let dot: f64 = (0..ds.n()).map(|i| r[i] * ds.x().get(i, c)).sum();
            prop_assert!(dot.abs() <= 1e-8, "column {} dot {}", c, dot);
        }
    }

    #[test]
    fn wls_is_locally_optimal(ds in dataset_strategy(40, 2), ridge in 0.0f64..1.0) {
        prop_assume!(ds.n() >= 6);
        let w: Vec<f64> = ds.design_probs().iter().map(|e| 1.0 / e).collect();
        let Ok(model) = fit_wls(ds.x(), ds.y(), &w, ridge) else {
            prop_assert!(ridge == 0.0);
            return Ok(());
        };
        let objective = |beta: &[f64]| {
            let m = LinearModel::new(beta.to_vec());
            let fit: f64 = (0..ds.n())
                .map(|i| w[i] * (ds.y()[i] - m.predict_row(ds.x().row(i))).powi(2))
                .sum();
            fit + ridge * beta.iter().map(|b| b * b).sum::<f64>()
        };
        let base = objective(model.coefficients());
        for c in 0..model.coefficients().len() {
            for delta in [-1e-3, 1e-3] {
                let mut b = model.coefficients().to_vec();
                b[c] += delta;
                prop_assert!(objective(&b) >= base - 1e-9);
            }
        }
    }

    #[test]
    fn diversity_scores_follow_row_permutations(ds in dataset_strategy(25, 2), shift in 1usize..25) {
        prop_assume!(ds.n() >= 5);
        let n = ds.n();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let permuted = ds.x().select_rows(&perm);
        let a = diversity_scores(ds.x(), 0.0).unwrap();
        let b = diversity_scores(&permuted, 0.0).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((b[i] - a[p]).abs() <= 1e-9 * a[p].abs().max(1.0));
        }
    }

    #[test]
    fn certainty_is_bounded_and_monotone(
        r in -20.0f64..20.0, t in -5.0f64..5.0, nu2 in 0.1f64..5.0, grow in 1.0f64..3.0,
    ) {
        let c = certainty(posterior_e(r, t, nu2));
        prop_assert!((0.0..1.0).contains(&c) || c == 1.0 && (r * t).abs() / nu2 > 30.0);
        let c2 = certainty(posterior_e(r * grow, t, nu2));
        prop_assert!(c2 >= c);
    }

    #[test]
    fn marginalized_residual_matches_in_mean(
        y in -10.0f64..10.0, mu in -3.0f64..3.0, e in 0.05f64..0.95, e_post in 0.0f64..1.0,
    ) {
        let expected = e_post * scaled_residual(y, mu, 1, e) + (1.0 - e_post) * scaled_residual(y, mu, 0, e);
        let got = marginalized_residual(y, mu, e, e_post);
        prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }

    #[test]
    fn bar_without_imputation_is_the_fold_rlearner(
        ds in dataset_strategy(40, 2), mask in prop::collection::vec(any::<bool>(), 40),
    ) {
        let raw = ds.to_raw();
        let ds = Dataset::new(ds.x().clone(), raw.y, raw.z, None).unwrap();
        let n = ds.n();
        let in_fold: Vec<bool> = (0..n).map(|i| mask[i] || i < 4).collect();
        let fold: Vec<usize> = (0..n).filter(|&i| in_fold[i]).collect();
        prop_assume!(fold.len() >= 6);
        let mu = vec![0.3; n];
        let e_hat = vec![0.5; n];
        let (Ok(bar), Ok(ols)) = (
            fit_bar_learner(&ds, &in_fold, &mu, &e_hat, 0.0, 0.0),
            fit_rlearner_ols(&ds, &fold, &mu, 0.0),
        ) else {
            return Ok(());
        };
        for (a, b) in bar.coefficients().iter().zip(ols.coefficients()) {
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{:?} vs {:?}", bar, ols);
        }
    }

    #[test]
    fn pvalues_are_bounded(ds in dataset_strategy(20, 1), draws in 1usize..200, seed in any::<u64>()) {
        let units: Vec<usize> = (0..ds.n()).collect();
        let p = mc_pvalue(&TestStatisticSpec::DifferenceInMeans, &ds, &units, 0, draws, seed);
        prop_assert!(p.value >= 1.0 / (draws as f64 + 1.0) && p.value <= 1.0);
    }

    #[test]
    fn pvalues_ignore_monotone_transforms(
        y in prop::collection::vec(-5.0f64..5.0, 1..15),
        bits in prop::collection::vec(any::<bool>(), 15),
        seed in any::<u64>(),
    ) {
        let z: Vec<u8> = y.iter().enumerate().map(|(i, _)| u8::from(bits[i])).collect();
        let e = vec![0.5; y.len()];
        let stat = |z: &[u8]| oracles::dm_statistic(&y, z);
        let (p1, _) = randomization_pvalue(stat, &z, &e, 300, seed, 0);
        let (p2, _) = randomization_pvalue(|z: &[u8]| (stat(z) / 3.0).exp() - 7.0, &z, &e, 300, seed, 0);
        prop_assert_eq!(p1, p2);
    }

    #[test]
    fn soft_inclusion_beats_random_feasible_points(
        r in prop::collection::vec(-3.0f64..3.0, 1..8),
        t in prop::collection::vec(-2.0f64..2.0, 8),
        frac in 0.05f64..1.0,
        seed in any::<u64>(),
    ) {
        let m = r.len();
        let t = &t[..m];
        let (a, b) = soft_inclusion_items(&r, t, 1.0);
        let budget = frac * b.iter().sum::<f64>() + 1e-6;
        let xi = optimal_soft_inclusion(&r, t, 1.0, budget).unwrap();
        prop_assert!(xi.iter().filter(|&&v| v > 0.0 && v < 1.0).count() <= 1);
        let value: f64 = xi.iter().zip(&a).map(|(x, a)| x * a).sum();
        let mut s = seed | 1;
        for _ in 0..1000 {
            let mut cand: Vec<f64> = (0..m).map(|_| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64
            }).collect();
            let cost: f64 = cand.iter().zip(&b).map(|(x, b)| x * b).sum();
            if cost > budget {
                let scale = budget / cost;
                cand.iter_mut().for_each(|x| *x *= scale);
            }
            let v: f64 = cand.iter().zip(&a).map(|(x, a)| x * a).sum();
            prop_assert!(value >= v - 1e-9);
        }
    }

    #[test]
    fn convergence_metric_is_nonnegative(
        old in prop::collection::vec(-5.0f64..5.0, 2..30),
        noise in prop::collection::vec(-1.0f64..1.0, 30),
    ) {
        prop_assume!(old.iter().any(|&v| (v - old[0]).abs() > 1e-3));
        let new: Vec<f64> = old.iter().zip(&noise).map(|(o, e)| o + e).collect();
        prop_assert!(convergence_metric(&new, &old).unwrap() >= 0.0);
    }

    #[test]
    fn closed_testing_is_monotone(
        p in prop::collection::vec(0.0001f64..1.0, 1..7),
        q in 0.01f64..0.5,
        which in 0usize..7,
        shrink in 0.0f64..1.0,
    ) {
        let k = p.len();
        let base = closed_testing(&p, q, GlobalTest::Fisher).unwrap();
        prop_assert!(base.rejected.iter().all(|&i| i < k));

        let looser = closed_testing(&p, (q * 1.5).min(0.99), GlobalTest::Fisher).unwrap();
        prop_assert!(base.rejected.iter().all(|i| looser.contains(*i)));

        let mut lowered = p.clone();
        lowered[which % k] *= shrink.max(1e-6);
        let after = closed_testing(&lowered, q, GlobalTest::Fisher).unwrap();
        prop_assert!(base.rejected.iter().all(|i| after.contains(*i)));

        let h = holm(&p, q).unwrap();
        let bonf = closed_testing(&p, q, GlobalTest::Bonferroni).unwrap();
        prop_assert!(h.rejected.iter().all(|i| bonf.contains(*i)));
    }

    #[test]
    fn fisher_is_symmetric(p in prop::collection::vec(0.0001f64..1.0, 1..8), rot in 0usize..8) {
        let mut q = p.clone();
        q.rotate_left(rot % p.len());
        q.reverse();
        let a = fisher_combine(&p).unwrap();
        let b = fisher_combine(&q).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}
