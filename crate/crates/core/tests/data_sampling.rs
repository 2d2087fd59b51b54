mod common;

use softq::benchmark::random_mdp;
use softq::data::{empirical_mean, moments, sample_dataset, DataError, SufficientStats};
use softq::mdp::{BehaviorSpec, Policy, RewardNoise, TabularMdp};
use softq::solvers::{empirical_lagrangian, lagrangian_tuples, residual, residual_tuples};
use softq::oracles::Backup;
use softq::SaTable;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn constant_mdp() -> (TabularMdp, BehaviorSpec) {
    let m = TabularMdp::new(1, 1, vec![1.0], SaTable::filled(1, 1, 1.0), RewardNoise::Deterministic, 0.5, vec![1.0], 0.0, 1.0)
        .unwrap();
    (m, BehaviorSpec::new(vec![1.0], Policy::uniform(1, 1)).unwrap())
}

#[test]
fn empty_and_constant_datasets() {
    let (m, b) = constant_mdp();
    assert!(sample_dataset(&m, &b, 0, 1, 0).unwrap().is_empty());
    let d = sample_dataset(&m, &b, 1000, 1, 0).unwrap();
    assert!(d.tuples.iter().all(|t| (t.s, t.a, t.r, t.s_next) == (0, 0, 1.0, 0)));
    assert_eq!(empirical_mean(&d, |_| 1.0).unwrap(), 1.0);
    assert_eq!(empirical_mean(&d, |t| t.r).unwrap(), 1.0);
    let empty = sample_dataset(&m, &b, 0, 1, 0).unwrap();
    assert!(matches!(empirical_mean(&empty, |_| 1.0), Err(DataError::Empty)));
}

#[test]
fn pair_frequencies_within_three_sigma() {
    let n = 100_000;
    for seed in [11u64, 12, 13] {
        let (m, b) = random_mdp(6, 3, 0.9, seed);
        let d = sample_dataset(&m, &b, n, seed, 0).unwrap();
        let mom = moments(&d);
        let joint = b.joint();
        for s in 0..6 {
            for a in 0..3 {
                let p = joint.get(s, a);
                let freq = mom.count(s, a) as f64 / n as f64;
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                assert!((freq - p).abs() <= 3.0 * sigma, "seed {seed} ({s},{a}): {freq} vs {p}");
            }
        }
    }
}

#[test]
fn identical_inputs_give_identical_datasets() {
    let (m, b) = random_mdp(5, 2, 0.9, 3);
    let x = sample_dataset(&m, &b, 20_000, 7, 4).unwrap();
    let y = sample_dataset(&m, &b, 20_000, 7, 4).unwrap();
    assert_eq!(x, y);
    // A shorter dataset is a prefix of a longer one.
    let z = sample_dataset(&m, &b, 5_000, 7, 4).unwrap();
    assert_eq!(&x.tuples[..5_000], &z.tuples[..]);
    assert_ne!(x.tuples, sample_dataset(&m, &b, 20_000, 7, 5).unwrap().tuples);
}

/// Pearson test of independence between the pair drawn at index `i` in
/// stream 1 and the pair drawn at index `i` in stream 2.
#[test]
fn distinct_streams_pass_chi_square_independence() {
    let (m, b) = random_mdp(3, 2, 0.9, 5);
    let n = 100_000;
    for (seed, (s1, s2)) in [(1u64, (0u64, 1u64)), (2, (500, 2000)), (3, (8000, 32000))] {
        let x = sample_dataset(&m, &b, n, seed, s1).unwrap();
        let y = sample_dataset(&m, &b, n, seed, s2).unwrap();
        let k = 6;
        let mut table = vec![0.0; k * k];
        for (u, v) in x.tuples.iter().zip(&y.tuples) {
            table[(u.s * 2 + u.a) as usize * k + (v.s * 2 + v.a) as usize] += 1.0;
        }
        let rows: Vec<f64> = (0..k).map(|i| (0..k).map(|j| table[i * k + j]).sum()).collect();
        let cols: Vec<f64> = (0..k).map(|j| (0..k).map(|i| table[i * k + j]).sum()).collect();
        let mut stat = 0.0;
        for i in 0..k {
            for j in 0..k {
                let e = rows[i] * cols[j] / n as f64;
                stat += (table[i * k + j] - e).powi(2) / e;
            }
        }
        let p = 1.0 - ChiSquared::new(((k - 1) * (k - 1)) as f64).unwrap().cdf(stat);
        assert!(p > 1e-3, "seed {seed}: chi2 = {stat}, p = {p}");
    }
}

#[test]
fn empirical_mean_matches_direct_sum() {
    let (m, b) = random_mdp(4, 3, 0.8, 9);
    let d = sample_dataset(&m, &b, 12_345, 2, 0).unwrap();
    let mut g = common::rng(4);
    let f = common::random_table(&mut g, 4, 3, -5.0, 5.0);
    let h = |t: &softq::data::Transition| f.get(t.s as usize, t.a as usize) * t.r + t.s_next as f64;
    let direct: f64 = d.tuples.iter().map(h).sum::<f64>() / d.len() as f64;
    let got = empirical_mean(&d, h).unwrap();
    assert!((got - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    // Linearity.
    let lhs = empirical_mean(&d, |t| 2.0 * h(t) - t.r).unwrap();
    let rhs = 2.0 * got - empirical_mean(&d, |t| t.r).unwrap();
    assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
}

#[test]
fn moments_reproduce_tuple_expectations() {
    let mut g = common::rng(21);
    for trial in 0..5u64 {
        let (m, b) = random_mdp(5, 3, 0.9, 100 + trial);
        let d = sample_dataset(&m, &b, 3_000, trial, 0).unwrap();
        let mom = moments(&d);
        assert_eq!(mom.counts.iter().sum::<u64>(), 3_000);
        let stats = SufficientStats::from_moments(&mom, m.gamma());
        let f = common::random_table(&mut g, 5, 3, -1.0, 1.0);
        let v: Vec<f64> = (0..5).map(|_| rand::Rng::random::<f64>(&mut g)).collect();
        // E_n[f(s,a)·r + v(s′)] two ways.
        let direct = empirical_mean(&d, |t| f.get(t.s as usize, t.a as usize) * t.r + v[t.s_next as usize]).unwrap();
        let mut via = 0.0;
        for s in 0..5 {
            for a in 0..3 {
                let w = stats.weight.get(s, a);
                if w > 0.0 {
                    let row_sum: f64 = stats.next_probs(s, a).iter().sum();
                    assert!((row_sum - 1.0).abs() < 1e-12);
                    let ev: f64 = stats.next_probs(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                    via += w * (f.get(s, a) * stats.mean_reward.get(s, a) + ev);
                }
            }
        }
        assert!((direct - via).abs() <= 1e-12, "{direct} vs {via}");
    }
}

/// Twenty random `(q, l, dataset)` triples: the moments path and the tuple
/// loop give the same Lagrangian and residuals.
#[test]
fn moments_and_tuple_losses_agree() {
    let mut g = common::rng(77);
    for trial in 0..20u64 {
        let (m, b) = random_mdp(6, 3, 0.9, 200 + trial);
        let d = sample_dataset(&m, &b, 2_000 + 100 * trial as usize, trial, 1).unwrap();
        let stats = SufficientStats::from_dataset(&d, m.gamma());
        let q = common::random_table(&mut g, 6, 3, 0.0, 10.0);
        let l = common::random_table(&mut g, 6, 3, 0.0, 50.0);
        let pi_b = &b.behavior_policy;
        for backup in [Backup::Hard, Backup::Soft { alpha: 0.1, pi_b }, Backup::Soft { alpha: 1.0, pi_b }] {
            let a = empirical_lagrangian(&q, &l, &stats, backup);
            let t = lagrangian_tuples(&q, &l, &d, m.gamma(), backup);
            assert!((a - t).abs() <= 1e-12 * a.abs().max(1.0), "trial {trial}: {a} vs {t}");
            let gm = residual(&q, &stats, backup);
            let gt = residual_tuples(&q, &d, m.gamma(), backup);
            assert!(gm.sup_distance(&gt) <= 1e-12, "trial {trial}");
        }
    }
}
