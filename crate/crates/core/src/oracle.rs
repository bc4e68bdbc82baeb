//! Sampling baselines: envelopes over sampled precise instances and Monte-Carlo path simulation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ctmc::{Ctmc, WeightVector};
use crate::evidence::{ImpreciseEvidence, PreciseEvidence};
use crate::unfolding::conditional_weight;

/// Paths simulated per rng stream; results are merged in stream order.
const CHUNK: usize = 1 << 14;

/// Exact values of sampled precise instances.
#[derive(Debug, Clone)]
pub struct SampleEnvelope {
    pub samples: Vec<(PreciseEvidence, f64)>,
    pub min: f64,
    pub max: f64,
}

impl SampleEnvelope {
    /// `sample_idx,t_1,...,t_d,value`, one row per instance.
    pub fn to_csv(&self) -> String {
        let d = self.samples.first().map_or(0, |(r, _)| r.len());
        let mut out = String::from("sample_idx");
        for i in 1..=d {
            let _ = write!(out, ",t_{i}");
        }
        out.push_str(",value\n");
        for (k, (rho, v)) in self.samples.iter().enumerate() {
            let _ = write!(out, "{k}");
            for t in rho.times() {
                let _ = write!(out, ",{t}");
            }
            let _ = writeln!(out, ",{v}");
        }
        out
    }
}

/// Draws `n` instances of `omega` and evaluates each exactly.
pub fn sample_envelope(
    ctmc: &Ctmc,
    omega: &ImpreciseEvidence,
    w: &WeightVector,
    n: usize,
    seed: u64,
    eps: f64,
) -> SampleEnvelope {
    assert!(n >= 1, "at least one sample is required");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances: Vec<PreciseEvidence> = (0..n).map(|_| omega.sample_instance(&mut rng)).collect();
    let samples: Vec<(PreciseEvidence, f64)> = instances
        .into_par_iter()
        .map(|rho| {
            let v = conditional_weight(ctmc, &rho, w, eps).value;
            (rho, v)
        })
        .collect();
    let min = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let max = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    SampleEnvelope { samples, min, max }
}

fn stream(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

fn successor<R: Rng>(ctmc: &Ctmc, s: usize, rng: &mut R) -> usize {
    let jumps = ctmc.jumps(s);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(t, p) in jumps {
        acc += p;
        if u < acc {
            return t;
        }
    }
    jumps.last().map_or(s, |&(t, _)| t)
}

/// Walks one path, calling `visit(state, until)` for each sojourn that starts before `horizon`.
fn walk<R: Rng>(ctmc: &Ctmc, horizon: f64, rng: &mut R, mut visit: impl FnMut(usize, f64)) {
    let mut s = ctmc.initial();
    let mut t = 0.0;
    loop {
        let e = ctmc.exit_rate(s);
        if e == 0.0 {
            visit(s, f64::INFINITY);
            return;
        }
        // self-loop jumps extend the current sojourn
        let mut until = t;
        let next = loop {
            until += -(1.0 - rng.gen::<f64>()).ln() / e;
            if until > horizon {
                break None;
            }
            let n = successor(ctmc, s, rng);
            if n != s {
                break Some(n);
            }
        };
        match next {
            None => {
                visit(s, f64::INFINITY);
                return;
            }
            Some(n) => {
                visit(s, until);
                s = n;
                t = until;
            }
        }
    }
}

/// Simulated paths stored as sojourn sequences.
#[derive(Debug, Clone)]
pub struct PathSet {
    offsets: Vec<usize>,
    states: Vec<usize>,
    // exit time of each sojourn; the last one of a path is infinite
    until: Vec<f64>,
    horizon: f64,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// State of path `k` at time `t ≤ horizon`.
    pub fn state_at(&self, k: usize, t: f64) -> usize {
        assert!(t <= self.horizon, "time {t} is beyond the simulated horizon");
        let range = self.offsets[k]..self.offsets[k + 1];
        let until = &self.until[range.clone()];
        let pos = until.partition_point(|&u| u <= t);
        self.states[range.start + pos]
    }

    /// Number of jumps of path `k` that change the state.
    pub fn jumps(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k] - 1
    }
}

/// `n` independent paths up to `horizon`.
pub fn simulate_paths(ctmc: &Ctmc, horizon: f64, n: usize, seed: u64) -> PathSet {
    assert!(horizon > 0.0 && n >= 1, "need a positive horizon and at least one path");
    let chunks: Vec<(Vec<usize>, Vec<usize>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k);
            let count = CHUNK.min(n - k * CHUNK);
            let (mut lens, mut states, mut until) = (Vec::with_capacity(count), Vec::new(), Vec::new());
            for _ in 0..count {
                let before = states.len();
                walk(ctmc, horizon, &mut rng, |s, u| {
                    states.push(s);
                    until.push(u);
                });
                lens.push(states.len() - before);
            }
            (lens, states, until)
        })
        .collect();
    let mut set = PathSet {
        offsets: vec![0],
        states: Vec::new(),
        until: Vec::new(),
        horizon,
    };
    for (lens, states, until) in chunks {
        for l in lens {
            let last = *set.offsets.last().unwrap();
            set.offsets.push(last + l);
        }
        set.states.extend(states);
        set.until.extend(until);
    }
    set
}

/// Rejection-sampling estimate of the likelihood and the conditional weight of `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionEstimate {
    pub paths: usize,
    pub accepted: usize,
    pub likelihood: f64,
    pub likelihood_sigma: f64,
    pub value: f64,
    pub value_sigma: f64,
}

/// Simulates `n` paths, keeps those matching every observation of `rho` and averages `w` at the last time.
pub fn rejection_estimate(ctmc: &Ctmc, rho: &PreciseEvidence, w: &WeightVector, n: usize, seed: u64) -> RejectionEstimate {
    assert!(n >= 1, "at least one path is required");
    let entries = rho.entries();
    let horizon = entries.last().map(|e| e.0).unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let masks: Vec<Vec<bool>> = entries.iter().map(|(_, o)| o.mask(ctmc)).collect();
    let partial: Vec<(usize, f64, f64)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k);
            let count = CHUNK.min(n - k * CHUNK);
            let (mut acc, mut sum, mut sq) = (0usize, 0.0, 0.0);
            for _ in 0..count {
                let mut next = 0;
                let mut ok = true;
                let mut last_state = ctmc.initial();
                walk(ctmc, horizon, &mut rng, |s, until| {
                    while ok && next < entries.len() && entries[next].0 < until {
                        ok = masks[next][s];
                        last_state = s;
                        next += 1;
                    }
                });
                if ok && next == entries.len() {
                    acc += 1;
                    let x = w[last_state];
                    sum += x;
                    sq += x * x;
                }
            }
            (acc, sum, sq)
        })
        .collect();
    let (accepted, sum, sq) = partial
        .into_iter()
        .fold((0, 0.0, 0.0), |(a, s, q), (a2, s2, q2)| (a + a2, s + s2, q + q2));
    let p = accepted as f64 / n as f64;
    let (value, value_sigma) = if accepted > 0 {
        let m = sum / accepted as f64;
        let var = (sq / accepted as f64 - m * m).max(0.0);
        (m, (var / accepted as f64).sqrt())
    } else {
        (0.0, 0.0)
    };
    RejectionEstimate {
        paths: n,
        accepted,
        likelihood: p,
        likelihood_sigma: (p * (1.0 - p) / n as f64).sqrt(),
        value,
        value_sigma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::ObservationFormula;
    use crate::unfolding::evidence_likelihood;

    #[test]
    fn absorbing_paths_are_constant() {
        let c = Ctmc::parse("ctmc\nstate x\ninit x\n").unwrap();
        let paths = simulate_paths(&c, 2.0, 100, 1);
        assert!((0..100).all(|k| paths.jumps(k) == 0 && paths.state_at(k, 1.5) == 0));
    }

    #[test]
    fn two_state_survival() {
        let c = Ctmc::parse("ctmc\nstate a\nstate b\ninit a\nrate a b 3\n").unwrap();
        let n = 200_000;
        let paths = simulate_paths(&c, 0.5, n, 5);
        let stay = (0..n).filter(|&k| paths.state_at(k, 0.5) == 0).count() as f64 / n as f64;
        let p = (-1.5f64).exp();
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((stay - p).abs() < 3.0 * sigma, "{stay} vs {p}");
    }

    #[test]
    fn deterministic_under_seed() {
        let c = Ctmc::parse(include_str!("../../../fixtures/invent.ctmc")).unwrap();
        let a = simulate_paths(&c, 3.0, 40_000, 9);
        let b = simulate_paths(&c, 3.0, 40_000, 9);
        assert!((0..a.len()).all(|k| a.state_at(k, 2.5) == b.state_at(k, 2.5)));
        let omega = ImpreciseEvidence::parse(include_str!("../../../fixtures/invent-1.evidence")).unwrap();
        let w = c.weight_from_property(&[true, false, false], 0.1, 1e-10);
        let e1 = sample_envelope(&c, &omega, &w, 20, 4, 1e-10);
        let e2 = sample_envelope(&c, &omega, &w, 20, 4, 1e-10);
        assert_eq!(e1.to_csv(), e2.to_csv());
        assert!(e1.min <= e1.max);
        assert!(e1.to_csv().starts_with("sample_idx,t_1,t_2,t_3,t_4,value\n"));
    }

    #[test]
    fn singleton_envelope_has_zero_width() {
        let c = Ctmc::parse(include_str!("../../../fixtures/invent.ctmc")).unwrap();
        let omega = ImpreciseEvidence::parse("evidence\nobs !empty @ 1\nobs empty @ 2\n").unwrap();
        let w = WeightVector::new(vec![0.0, 1.0, 0.5]).unwrap();
        let e = sample_envelope(&c, &omega, &w, 5, 1, 1e-10);
        assert_eq!(e.min, e.max);
        let one = sample_envelope(&c, &omega, &w, 1, 1, 1e-10);
        assert_eq!(one.min, one.max);
    }

    #[test]
    fn rejection_matches_likelihood() {
        let c = Ctmc::parse(include_str!("../../../fixtures/invent.ctmc")).unwrap();
        let rho = PreciseEvidence::new(vec![
            (0.4, "empty".parse::<ObservationFormula>().unwrap()),
            (1.9, "!empty".parse().unwrap()),
        ])
        .unwrap();
        let w = WeightVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        let est = rejection_estimate(&c, &rho, &w, 200_000, 3);
        let exact = evidence_likelihood(&c, &rho, 1e-12);
        assert!((est.likelihood - exact).abs() < 3.0 * est.likelihood_sigma, "{est:?} vs {exact}");
    }
}
