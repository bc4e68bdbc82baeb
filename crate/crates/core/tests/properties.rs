mod common;

use common::*;
use ctmc_evidence::imdp::abstract_imdp;
use ctmc_evidence::oracle::sample_envelope;
use ctmc_evidence::refine::{analyze, AnalysisConfig, RefinementMode, Refiner};
use ctmc_evidence::solver::{greedy_distribution, Opt};
use ctmc_evidence::unfolding::{bayes_quotient, conditional_weight};
use ctmc_evidence::{Ctmc, ImpreciseEvidence, PreciseEvidence, WeightVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn chain(seed: u64, n: usize) -> Ctmc {
    random_ctmc(&mut ChaCha8Rng::seed_from_u64(seed), n, 10.0)
}

fn windows_evidence(formulas: &[&str], widths: &[f64]) -> ImpreciseEvidence {
    let mut text = String::from("evidence\n");
    for (k, (f, w)) in formulas.iter().zip(widths).enumerate() {
        let start = 0.3 + 0.8 * k as f64;
        text += &format!("obs {f} @ {start}..{}\n", start + w);
    }
    ImpreciseEvidence::parse(&text).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transient_matches_dense_exponential(seed in any::<u64>(), n in 1usize..=8, t in 0.0f64..4.0) {
        let c = chain(seed, n);
        let dense = expm(&c, t);
        for s in 0..n {
            let p = c.transient(s, t, 1e-12);
            for d in 0..n {
                prop_assert!((p[d] - dense[(s, d)]).abs() < 1e-8, "s={s} d={d}: {} vs {}", p[d], dense[(s, d)]);
            }
        }
    }

    #[test]
    fn transient_semigroup(seed in any::<u64>(), n in 1usize..=6, t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
        let c = chain(seed, n);
        let s = c.initial();
        let direct = c.transient(s, t1 + t2, 1e-13);
        let mid = c.transient(s, t1, 1e-13);
        let two = c.transient_from(&mid.probs, t2, 1e-13);
        for d in 0..n {
            prop_assert!((direct[d] - two[d]).abs() < 1e-9);
        }
        prop_assert!((direct.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bounded_reachability_monotone(seed in any::<u64>(), n in 2usize..=6, a in 0.0f64..1.0, b in 0.0f64..1.0, extra in 0.0f64..1.0) {
        let c = chain(seed, n);
        let target: Vec<bool> = (0..n).map(|s| c.has_label(s, "a")).collect();
        let (a, b) = (a.min(b), a.max(b));
        let all = c.bounded_reachability_all(&target, a, b, 1e-12);
        let wider = c.bounded_reachability_all(&target, a, b + extra, 1e-12);
        for s in 0..n {
            let fwd = c.bounded_reachability(s, &target, a, b, 1e-12);
            prop_assert!((fwd - all[s]).abs() < 1e-9);
            prop_assert!(wider[s] >= all[s] - 1e-10);
            // being in the target at time a or at time b implies reaching it within [a, b]
            let pa: f64 = (0..n).filter(|&d| target[d]).map(|d| c.transient(s, a, 1e-12)[d]).sum();
            let pb: f64 = (0..n).filter(|&d| target[d]).map(|d| c.transient(s, b, 1e-12)[d]).sum();
            prop_assert!(all[s] >= pa.max(pb) - 1e-9);
        }
    }

    #[test]
    fn model_round_trip(seed in any::<u64>(), n in 1usize..=8) {
        let c = chain(seed, n);
        let again = Ctmc::parse(&c.to_string()).unwrap();
        prop_assert_eq!(&again, &c);
        prop_assert_eq!(again.to_string(), c.to_string());
    }

    #[test]
    fn evidence_round_trip(w1 in 0.0f64..0.5, w2 in 0.0f64..0.5, neg in any::<bool>()) {
        let f = if neg { "!a" } else { "a" };
        let omega = windows_evidence(&[f, "true"], &[w1, w2]);
        let again = ImpreciseEvidence::parse(&omega.to_string()).unwrap();
        prop_assert_eq!(again, omega);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn greedy_is_optimal(
        raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -1.0f64..1.0), 1..=3),
        maximize in any::<bool>(),
    ) {
        let n = raw.len();
        let mut lo: Vec<f64> = raw.iter().map(|r| r.0.min(r.1)).collect();
        let mut hi: Vec<f64> = raw.iter().map(|r| r.0.max(r.1)).collect();
        // rescale into a feasible box
        let sl: f64 = lo.iter().sum();
        if sl > 1.0 {
            lo.iter_mut().for_each(|x| *x /= sl);
        }
        let sh: f64 = hi.iter().sum();
        if sh < 1.0 {
            let need = (1.0 - sh) / n as f64;
            hi.iter_mut().for_each(|x| *x = (*x + need).min(1.0));
        }
        for i in 0..n {
            hi[i] = hi[i].max(lo[i]);
        }
        prop_assume!(hi.iter().sum::<f64>() >= 1.0 && lo.iter().sum::<f64>() <= 1.0);
        let v: Vec<f64> = raw.iter().map(|r| r.2).collect();
        let opt = if maximize { Opt::Max } else { Opt::Min };
        let p = greedy_distribution(&lo, &hi, &v, opt);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let got: f64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
        let best = brute_force_optimum(&lo, &hi, &v, maximize);
        prop_assert!((got - best).abs() < 1e-9, "{got} vs {best}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn refinement_nests(seed in any::<u64>(), f1 in 0usize..3, f2 in 0usize..3) {
        let forms = ["a", "!a", "true"];
        let c = chain(seed, 5);
        let omega = windows_evidence(&[forms[f1], forms[f2], "true"], &[0.4, 0.3, 0.2]);
        let w = WeightVector::indicator(&(0..5).map(|s| c.has_label(s, "a")).collect::<Vec<_>>());
        let config = AnalysisConfig { mode: RefinementMode::Guided, ..AnalysisConfig::default() };
        let mut refiner = Refiner::new(&c, &omega, &w, config).unwrap();
        let mut prev = abstract_imdp(&c, &omega, refiner.partition(), 1e-10, None).unwrap();
        for _ in 0..5 {
            let round = refiner.round().unwrap();
            let mut targets = round.targets.clone();
            if targets.is_empty() {
                targets = refiner.partition().splittable();
            }
            let before = refiner.partition().clone();
            refiner.refine(&targets).unwrap();
            prop_assert!(refiner.partition().is_refinement_of(&before));
            let next = abstract_imdp(&c, &omega, refiner.partition(), 1e-10, None).unwrap();
            check_nesting(&prev, &next, 1e-9).map_err(TestCaseError::fail)?;
            prev = next;
        }
    }

    #[test]
    fn bounds_sandwich_sampled_instances(seed in any::<u64>(), f1 in 0usize..3, w1 in 0.05f64..0.5, w2 in 0.05f64..0.5) {
        let forms = ["a", "!a", "true"];
        let c = chain(seed, 4);
        let omega = windows_evidence(&[forms[f1], "true"], &[w1, w2]);
        let w = WeightVector::new((0..4).map(|s| s as f64 / 3.0).collect()).unwrap();
        let config = AnalysisConfig { max_iters: Some(4), ..AnalysisConfig::default() };
        let trace = analyze(&c, &omega, &w, &config).unwrap();
        let (lo, hi) = trace.bounds();
        prop_assert!(lo <= hi + 1e-12);
        let env = sample_envelope(&c, &omega, &w, 40, seed, 1e-10);
        prop_assert!(env.max <= hi + 1e-9, "sample {} above upper {hi}", env.max);
    }

    #[test]
    fn conditional_weight_equals_bayes_quotient(seed in any::<u64>(), t1 in 0.1f64..1.0, gap in 0.1f64..1.0) {
        let c = chain(seed, 5);
        let rho = PreciseEvidence::new(vec![
            (t1, "a".parse().unwrap()),
            (t1 + gap, "true".parse().unwrap()),
        ]).unwrap();
        let w = WeightVector::new((0..5).map(|s| (s % 2) as f64).collect()).unwrap();
        let cw = conditional_weight(&c, &rho, &w, 1e-12);
        let bq = bayes_quotient(&c, &rho, &w, 1e-12);
        prop_assert!((cw.value - bq).abs() < 1e-9);
    }
}

#[test]
fn envelope_csv_is_deterministic() {
    let c = Ctmc::parse(INVENT).unwrap();
    let omega = ImpreciseEvidence::parse(&fixture("invent-2.evidence")).unwrap();
    let w = c.weight_from_property(&[true, false, false], 0.1, 1e-10);
    let a = sample_envelope(&c, &omega, &w, 50, 11, 1e-10).to_csv();
    let b = sample_envelope(&c, &omega, &w, 50, 11, 1e-10).to_csv();
    assert_eq!(a, b);
    let other = sample_envelope(&c, &omega, &w, 50, 12, 1e-10).to_csv();
    assert_ne!(a, other);
}

#[test]
fn trace_is_deterministic_apart_from_timing() {
    let c = Ctmc::parse(INVENT).unwrap();
    let omega = ImpreciseEvidence::parse(&fixture("invent-1.evidence")).unwrap();
    let w = c.weight_from_property(&[true, false, false], 0.1, 1e-10);
    let config = AnalysisConfig { max_iters: Some(8), ..AnalysisConfig::default() };
    let strip = |csv: String| -> Vec<String> {
        csv.lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                // drop elapsed_s, unfold_s and solve_s
                [&f[0..1], &f[2..8]].concat().join(",")
            })
            .collect()
    };
    let a = strip(analyze(&c, &omega, &w, &config).unwrap().to_csv());
    let b = strip(analyze(&c, &omega, &w, &config).unwrap().to_csv());
    assert_eq!(a, b);
}

#[test]
fn tandem_fixture_matches_published_size() {
    let c = Ctmc::parse(TANDEM).unwrap();
    assert_eq!(c.num_states(), 120);
    let rates: usize = (0..c.num_states()).map(|s| c.rate_entries(s).len()).sum();
    assert_eq!(rates, 363);
}
