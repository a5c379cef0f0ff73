use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use marro::annotation::pair_agreement;
use marro::corpus::{make_folds, Corpus, Document};
use marro::crf::{brute_force_oracle, forward_backward, log_partition, nll, path_score, viterbi, CrfParams};
use marro::metrics::{evaluate_labels, LabelUniverse};
use marro::stats::{regularized_incomplete_beta, t_test, two_tailed_p};
use marro::tensor::{logsumexp, Tensor};
use marro::RhetoricalRole;

fn crf_instance() -> impl Strategy<Value = (CrfParams, Tensor)> {
    (1usize..=5, 1usize..=4).prop_flat_map(|(n, l)| {
        let v = |k| prop::collection::vec(-3.0f64..3.0, k);
        (v(l * l), v(l), v(l), v(n * l)).prop_map(move |(t, s, e, em)| {
            (CrfParams::new(l, t, s, e).unwrap(), Tensor::matrix(n, l, em).unwrap())
        })
    })
}

fn all_paths(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..l).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn path_probabilities_sum_to_one((p, e) in crf_instance()) {
        let z = log_partition(&p, &e).unwrap();
        let total: f64 = all_paths(e.rows(), e.cols())
            .iter()
            .map(|y| {
                let s = path_score(&p, &e, y).unwrap();
                prop_assert!(s <= z + 1e-12);
                Ok((s - z).exp())
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nll_matches_enumerated_probability((p, e) in crf_instance(), pick in 0usize..1024) {
        let paths = all_paths(e.rows(), e.cols());
        let y = &paths[pick % paths.len()];
        let oracle = brute_force_oracle(&p, &e).unwrap();
        let expect = oracle.log_z - path_score(&p, &e, y).unwrap();
        let got = nll(&p, &e, y).unwrap();
        prop_assert!(got >= 0.0);
        prop_assert!((got - expect.max(0.0)).abs() < 1e-9);
    }

    #[test]
    fn constant_emission_shift((p, e) in crf_instance(), c in -5.0f64..5.0) {
        let n = e.rows() as f64;
        let shifted = Tensor::new(e.shape().to_vec(), e.data().iter().map(|v| v + c).collect()).unwrap();
        let (z0, z1) = (log_partition(&p, &e).unwrap(), log_partition(&p, &shifted).unwrap());
        prop_assert!((z1 - z0 - n * c).abs() < 1e-9);
        prop_assert_eq!(viterbi(&p, &e).unwrap().0, viterbi(&p, &shifted).unwrap().0);
    }

    #[test]
    fn marginals_match_enumeration((p, e) in crf_instance()) {
        let fb = forward_backward(&p, &e).unwrap();
        let (n, l) = (e.rows(), e.cols());
        let mut m = vec![0.0; n * l];
        for y in all_paths(n, l) {
            let w = (path_score(&p, &e, &y).unwrap() - fb.log_z).exp();
            for (t, &yt) in y.iter().enumerate() {
                m[t * l + yt] += w;
            }
        }
        for (a, b) in fb.marginals.iter().zip(&m) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn logsumexp_is_exact(x in prop::collection::vec(-30.0f64..30.0, 1..8)) {
        let direct = x.iter().map(|v| v.exp()).sum::<f64>().ln();
        prop_assert!((logsumexp(&x).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn metrics_counts_are_consistent(
        pairs in prop::collection::vec(prop::collection::vec((0usize..7, 0usize..7), 1..20), 1..5)
    ) {
        let gold: Vec<Vec<usize>> = pairs.iter().map(|d| d.iter().map(|p| p.0).collect()).collect();
        let pred: Vec<Vec<usize>> = pairs.iter().map(|d| d.iter().map(|p| p.1).collect()).collect();
        let r = evaluate_labels(&gold, &pred, LabelUniverse::Observed).unwrap();
        for (role, m) in &r.per_label {
            let c = role.code();
            let tp = r.confusion[c][c] as f64;
            prop_assert!((m.precision * m.predicted as f64 - tp).abs() < 1e-9);
            prop_assert!((m.recall * m.support as f64 - tp).abs() < 1e-9);
            prop_assert_eq!(r.confusion[c].iter().sum::<usize>(), m.support);
            prop_assert!((0.0..=1.0).contains(&m.f1));
        }
        let mean = r.per_label.values().map(|m| m.f1).sum::<f64>() / r.per_label.len() as f64;
        prop_assert!((r.macro_f1 - mean).abs() < 1e-15);
        prop_assert_eq!(&r, &evaluate_labels(&gold, &pred, LabelUniverse::Observed).unwrap());
    }

    #[test]
    fn p_values_match_statrs(t in -8.0f64..8.0, df in 0.5f64..60.0) {
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        let oracle = 2.0 * (1.0 - dist.cdf(t.abs()));
        let got = two_tailed_p(t, df).unwrap();
        prop_assert!((got - oracle).abs() < 1e-9, "t={} df={} got={} oracle={}", t, df, got, oracle);
    }

    #[test]
    fn incomplete_beta_matches_statrs(a in 0.2f64..20.0, b in 0.2f64..20.0, x in 0.0f64..1.0) {
        let oracle = statrs::function::beta::beta_reg(a, b, x);
        prop_assert!((regularized_incomplete_beta(a, b, x) - oracle).abs() < 1e-9);
    }

    #[test]
    fn t_test_is_antisymmetric(
        a in prop::collection::vec(0.0f64..1.0, 2..10),
        noise in prop::collection::vec(-0.2f64..0.2, 10),
        paired in any::<bool>(),
    ) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
        if let (Ok(ab), Ok(ba)) = (t_test(&a, &b, paired), t_test(&b, &a, paired)) {
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }
    }

    #[test]
    fn agreement_is_symmetric(pairs in prop::collection::vec((0usize..7, 0usize..7), 1..40)) {
        let a: Vec<RhetoricalRole> = pairs.iter().map(|p| RhetoricalRole::ALL[p.0]).collect();
        let b: Vec<RhetoricalRole> = pairs.iter().map(|p| RhetoricalRole::ALL[p.1]).collect();
        let ab = pair_agreement(&a, &b).unwrap();
        let ba = pair_agreement(&b, &a).unwrap();
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.precision, ab.f_score);
    }

    #[test]
    fn folds_partition_documents(n in 2usize..30, k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let docs = (0..n)
            .map(|i| Document::new(format!("d{i:02}"), None, [("s".to_string(), Some(RhetoricalRole::Fac))]))
            .collect();
        let c = Corpus::new("c", docs).unwrap();
        let f = make_folds(&c, k, seed).unwrap();
        prop_assert_eq!(f.assignment.len(), n);
        let sizes = f.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(&f, &make_folds(&c, k, seed).unwrap());
    }
}
