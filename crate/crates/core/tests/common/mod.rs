#![allow(dead_code)]

use std::collections::BTreeSet;

use ctmc_evidence::imdp::{Behavior, IntervalMdp};
use ctmc_evidence::Ctmc;
use nalgebra::DMatrix;
use rand::Rng;

pub const INVENT: &str = include_str!("../../../../fixtures/invent.ctmc");
pub const TANDEM: &str = include_str!("../../../../fixtures/tandem.ctmc");

pub fn fixture(name: &str) -> String {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/");
    std::fs::read_to_string(format!("{path}{name}")).unwrap()
}

pub fn fixture_path(name: &str) -> String {
    format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Random chain on `n` states; roughly half the states carry label `a`, at least one of each kind.
pub fn random_ctmc<R: Rng>(rng: &mut R, n: usize, max_rate: f64) -> Ctmc {
    let names = (0..n).map(|i| format!("x{i}")).collect();
    let labels = (0..n)
        .map(|i| {
            let on = if i == 0 { true } else if i == 1 { false } else { rng.gen_bool(0.5) };
            if on {
                BTreeSet::from(["a".to_string()])
            } else {
                BTreeSet::new()
            }
        })
        .collect();
    let mut entries = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if s != t && rng.gen_bool(0.5) {
                // rates in (0, max_rate]
                entries.push((s, t, max_rate * (1.0 - rng.gen::<f64>())));
            }
        }
    }
    Ctmc::new(names, labels, rng.gen_range(0..n), &entries).unwrap()
}

/// exp(Q t) by the dense oracle.
pub fn expm(ctmc: &Ctmc, t: f64) -> DMatrix<f64> {
    let n = ctmc.num_states();
    let mut q = DMatrix::zeros(n, n);
    for s in 0..n {
        for &(d, r) in ctmc.rate_entries(s) {
            q[(s, d)] += r;
        }
        q[(s, s)] -= ctmc.exit_rate(s);
    }
    (q * t).exp()
}

/// Child intervals must lie inside the parent interval of the same (state, parent cells, successor).
/// Returns the number of child transitions checked.
pub fn check_nesting(parent: &IntervalMdp, child: &IntervalMdp, tol: f64) -> Result<usize, String> {
    let parent_cell = |layer: usize, cell: usize| -> Result<usize, String> {
        let c = child.layer_cells(layer)[cell];
        parent
            .layer_cells(layer)
            .iter()
            .position(|p| c.within(p))
            .ok_or_else(|| format!("cell {c} of layer {layer} has no parent"))
    };
    let mut checked = 0;
    for id in 0..child.num_states() {
        let st = child.state(id);
        let Behavior::Actions { .. } = child.behavior(id) else { continue };
        let pj = parent_cell(st.layer, st.cell)?;
        let pid = parent
            .find(st.state, st.layer, pj)
            .ok_or_else(|| format!("parent of {st:?} missing"))?;
        for a in child.actions_of(id) {
            let act = child.action(a);
            let pk = parent_cell(st.layer + 1, act.cell)?;
            let pa = parent
                .actions_of(pid)
                .find(|&b| parent.action(b).cell == pk)
                .ok_or_else(|| format!("parent action {pk} missing at {st:?}"))?;
            let ptrans = parent.action_transitions(parent.action(pa));
            for t in child.action_transitions(act) {
                let succ = child.state(t.succ).state;
                let (plo, phi) = ptrans
                    .iter()
                    .find(|p| parent.state(p.succ).state == succ)
                    .map_or((0.0, 0.0), |p| (p.lo, p.hi));
                if t.lo < plo - tol || t.hi > phi + tol {
                    return Err(format!(
                        "{st:?} cell {} -> {succ}: child [{}, {}] not in parent [{plo}, {phi}]",
                        act.cell, t.lo, t.hi
                    ));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Samples `pairs` time pairs per transition and checks the transient kernel against the interval.
/// Successors absent from an action must be unreachable. Returns the number of checks.
pub fn check_interval_soundness<R: Rng>(
    ctmc: &Ctmc,
    imdp: &IntervalMdp,
    pairs: usize,
    eps: f64,
    tol: f64,
    rng: &mut R,
) -> Result<usize, String> {
    let n = ctmc.num_states();
    let last = imdp.num_layers() - 1;
    let sample = |c: ctmc_evidence::Cell, rng: &mut R| if c.is_point() { c.lo } else { rng.gen_range(c.lo..=c.hi) };
    let mut checked = 0;
    for id in 0..imdp.num_states() {
        let st = imdp.state(id);
        if st.layer + 1 >= last {
            continue;
        }
        for a in imdp.actions_of(id) {
            let act = imdp.action(a);
            let from = imdp.layer_cells(st.layer)[st.cell];
            let to = imdp.layer_cells(st.layer + 1)[act.cell];
            let mut lo = vec![0.0; n];
            let mut hi = vec![0.0; n];
            for t in imdp.action_transitions(act) {
                let s = imdp.state(t.succ).state;
                lo[s] = t.lo;
                hi[s] = t.hi;
            }
            for _ in 0..pairs {
                let t0 = sample(from, rng);
                let t1 = sample(to, rng);
                let p = ctmc.transient(st.state, t1 - t0, eps);
                for s in 0..n {
                    if p[s] < lo[s] - tol || p[s] > hi[s] + tol {
                        return Err(format!(
                            "{st:?} -> {s} over gap {}: {} outside [{}, {}]",
                            t1 - t0,
                            p[s],
                            lo[s],
                            hi[s]
                        ));
                    }
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Exact optimum of `sum p v` over `{lo <= p <= hi, sum p = 1}` by vertex enumeration.
pub fn brute_force_optimum(lo: &[f64], hi: &[f64], v: &[f64], maximize: bool) -> f64 {
    let n = lo.len();
    let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    for free in 0..n {
        for mask in 0..(1u32 << n) {
            let mut p = vec![0.0; n];
            let mut rest = 1.0;
            for i in (0..n).filter(|&i| i != free) {
                p[i] = if mask & (1 << i) != 0 { hi[i] } else { lo[i] };
                rest -= p[i];
            }
            if rest < lo[free] - 1e-12 || rest > hi[free] + 1e-12 {
                continue;
            }
            p[free] = rest;
            let val: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
            best = if maximize { best.max(val) } else { best.min(val) };
        }
    }
    best
}
