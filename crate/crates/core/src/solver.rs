//! Robust value iteration on the layered iMDP, scheduler repair and the bound pair.
//!
//! Apart from the reset arcs every action moves one layer forward, so one backward
//! sweep evaluates all states once the value `v` of the initial state is fixed. Writing
//! `g(v)` for the initial state's value after that sweep, the solution is the least
//! fixpoint of the monotone piecewise-linear map `g`, found by Newton steps on
//! `g(v) - v` inside a shrinking bracket.

use crate::ctmc::WeightVector;
use crate::error::{Error, Result};
use crate::evidence::TimePartition;
use crate::imdp::{Behavior, IntervalMdp, Transition};

const MAX_NEWTON_STEPS: usize = 500;

/// Optimization direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opt {
    Max,
    Min,
}

impl Opt {
    pub fn flip(self) -> Self {
        match self {
            Opt::Max => Opt::Min,
            Opt::Min => Opt::Max,
        }
    }

    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Opt::Max => a > b,
            Opt::Min => a < b,
        }
    }
}

/// Memoryless scheduler: a global action id per abstract state with a choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scheduler {
    choices: Vec<Option<usize>>,
}

impl Scheduler {
    /// The first action everywhere.
    pub fn first_actions(imdp: &IntervalMdp) -> Self {
        Scheduler {
            choices: (0..imdp.num_states())
                .map(|id| {
                    let r = imdp.actions_of(id);
                    (!r.is_empty()).then_some(r.start)
                })
                .collect(),
        }
    }

    pub fn choice(&self, id: usize) -> Option<usize> {
        self.choices[id]
    }

    /// Chosen next-layer cell of `id`.
    pub fn chosen_cell(&self, imdp: &IntervalMdp, id: usize) -> Option<usize> {
        self.choices[id].map(|a| imdp.action(a).cell)
    }

    /// Selects the action of `id` that targets `cell`.
    pub fn set_cell(&mut self, imdp: &IntervalMdp, id: usize, cell: usize) {
        let r = imdp.actions_of(id);
        assert!(cell < r.len(), "cell {cell} not enabled in state {id}");
        self.choices[id] = Some(r.start + cell);
    }
}

/// Per abstract state values.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector {
    pub values: Vec<f64>,
}

/// Result of [`compute_bounds`].
#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper: f64,
    /// Scheduler attaining the optimistic bound over all schedulers.
    pub bound_scheduler: Scheduler,
    /// Unrepaired scheduler of the pessimistic-nature problem.
    pub raw_scheduler: Scheduler,
    /// Consistent scheduler evaluated for the other bound.
    pub repaired_scheduler: Scheduler,
    /// Whether the repaired scheduler passed the consistency audit.
    pub consistent: bool,
}

/// Feasible point in `[lo, hi]` with unit mass that optimizes `Σ p·v`.
///
/// Everything starts at its lower bound; the remaining mass goes to the best
/// successors first (highest values for `Max`, lowest for `Min`).
pub fn greedy_distribution(lo: &[f64], hi: &[f64], values: &[f64], opt: Opt) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    sort_by_value(&mut order, values, opt);
    let mut p = lo.to_vec();
    let mut rest = (1.0 - lo.iter().sum::<f64>()).max(0.0);
    for &j in &order {
        if rest <= 0.0 {
            break;
        }
        let add = (hi[j] - lo[j]).min(rest);
        p[j] += add;
        rest -= add;
    }
    p
}

fn sort_by_value(order: &mut [usize], values: &[f64], opt: Opt) {
    match opt {
        Opt::Max => order.sort_by(|&a, &b| values[b].total_cmp(&values[a])),
        Opt::Min => order.sort_by(|&a, &b| values[a].total_cmp(&values[b])),
    }
}

/// Inner optimum of one action: value and derivative with respect to the reset value.
fn inner(trans: &[Transition], vals: &[f64], ders: &[f64], opt: Opt, order: &mut Vec<usize>) -> (f64, f64) {
    if let [t] = trans {
        return (vals[t.succ], ders[t.succ]);
    }
    order.clear();
    order.extend(0..trans.len());
    match opt {
        Opt::Max => order.sort_by(|&a, &b| vals[trans[b].succ].total_cmp(&vals[trans[a].succ])),
        Opt::Min => order.sort_by(|&a, &b| vals[trans[a].succ].total_cmp(&vals[trans[b].succ])),
    }
    let mut rest = 1.0;
    let (mut value, mut der) = (0.0, 0.0);
    for t in trans {
        rest -= t.lo;
        value += t.lo * vals[t.succ];
        der += t.lo * ders[t.succ];
    }
    for &j in order.iter() {
        if rest <= 0.0 {
            break;
        }
        let t = &trans[j];
        let add = (t.hi - t.lo).min(rest);
        value += add * vals[t.succ];
        der += add * ders[t.succ];
        rest -= add;
    }
    (value, der)
}

struct Sweep {
    values: Vec<f64>,
    ders: Vec<f64>,
    choices: Vec<Option<usize>>,
}

/// One backward sweep with the reset value fixed to `v`.
fn sweep(
    imdp: &IntervalMdp,
    w: &WeightVector,
    outer: Opt,
    inner_opt: Opt,
    fixed: Option<&Scheduler>,
    v: f64,
) -> Sweep {
    let n = imdp.num_states();
    let mut values = vec![0.0; n];
    let mut ders = vec![0.0; n];
    let mut choices = vec![None; n];
    let mut order = Vec::new();
    for id in (0..n).rev() {
        match imdp.behavior(id) {
            Behavior::Terminal => values[id] = w[imdp.state(id).state],
            Behavior::Reset => {
                values[id] = v;
                ders[id] = 1.0;
            }
            Behavior::Actions { first, count } => {
                let eval = |a: usize, order: &mut Vec<usize>| {
                    inner(imdp.action_transitions(imdp.action(a)), &values, &ders, inner_opt, order)
                };
                let (best, (val, der)) = match fixed.and_then(|s| s.choice(id)) {
                    Some(a) => (a, eval(a, &mut order)),
                    None => {
                        let mut best = (first, eval(first, &mut order));
                        for a in first + 1..first + count {
                            let r = eval(a, &mut order);
                            if outer.better(r.0, best.1 .0) {
                                best = (a, r);
                            }
                        }
                        best
                    }
                };
                values[id] = val;
                ders[id] = der;
                choices[id] = Some(best);
            }
        }
    }
    Sweep { values, ders, choices }
}

fn solve(
    imdp: &IntervalMdp,
    w: &WeightVector,
    outer: Opt,
    inner_opt: Opt,
    fixed: Option<&Scheduler>,
    tol: f64,
) -> Result<(ValueVector, Scheduler)> {
    assert!(tol > 0.0, "tolerance must be positive");
    let init = imdp.initial();
    let finish = |s: Sweep| {
        (
            ValueVector { values: s.values },
            Scheduler { choices: s.choices },
        )
    };
    let at_zero = sweep(imdp, w, outer, inner_opt, fixed, 0.0);
    let g0 = at_zero.values[init];
    if g0 <= 0.0 {
        // zero is already a fixpoint: the conditional value is 0/0 = 0
        return Ok(finish(at_zero));
    }
    let scale = w.max().max(f64::MIN_POSITIVE);
    let exact = 1e-14 * scale;
    let (mut lo, mut hi) = (0.0, scale);
    let (mut v, mut h, mut slope) = (0.0, g0, at_zero.ders[init]);
    let mut last = at_zero;
    for _ in 0..MAX_NEWTON_STEPS {
        if h.abs() <= exact || hi - lo <= tol * 1e-3 {
            return Ok(finish(last));
        }
        let step = if slope < 1.0 { h / (1.0 - slope) } else { f64::NAN };
        let mut next = v + step;
        if !(next.is_finite() && next > lo && next < hi) || next == v {
            next = 0.5 * (lo + hi);
        }
        v = next;
        last = sweep(imdp, w, outer, inner_opt, fixed, v);
        h = last.values[init] - v;
        slope = last.ders[init];
        if h > exact {
            lo = v;
        } else if h < -exact {
            hi = v;
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_NEWTON_STEPS,
        residual: h.abs(),
    })
}

/// Values and optimal scheduler for `outer` choice against `inner` nature.
pub fn robust_value_iteration(
    imdp: &IntervalMdp,
    w: &WeightVector,
    outer: Opt,
    inner_opt: Opt,
    tol: f64,
) -> Result<(ValueVector, Scheduler)> {
    solve(imdp, w, outer, inner_opt, None, tol)
}

/// Values of a fixed scheduler against `inner` nature.
pub fn evaluate_scheduler(
    imdp: &IntervalMdp,
    w: &WeightVector,
    sched: &Scheduler,
    inner_opt: Opt,
    tol: f64,
) -> Result<ValueVector> {
    solve(imdp, w, Opt::Max, inner_opt, Some(sched), tol).map(|(v, _)| v)
}

/// States reachable from the initial state along chosen actions and positive upper bounds.
pub fn reachable_under(imdp: &IntervalMdp, sched: &Scheduler) -> Vec<bool> {
    let mut chosen = vec![false; imdp.num_actions()];
    for a in sched.choices.iter().flatten() {
        chosen[*a] = true;
    }
    imdp.reachable(|a| chosen[a])
}

/// Cells `(layer, cell)` whose reachable states disagree on the chosen action.
pub fn audit_consistency(imdp: &IntervalMdp, sched: &Scheduler) -> Vec<(usize, usize)> {
    let reach = reachable_under(imdp, sched);
    let mut seen: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
    let mut bad = std::collections::BTreeSet::new();
    for id in 0..imdp.num_states() {
        if !reach[id] {
            continue;
        }
        if let Some(cell) = sched.chosen_cell(imdp, id) {
            let st = imdp.state(id);
            let prev = *seen.entry((st.layer, st.cell)).or_insert(cell);
            if prev != cell {
                bad.insert((st.layer, st.cell));
            }
        }
    }
    bad.into_iter().collect()
}

/// Majority-vote repair, layer by layer from the front, voting over reachable states.
pub fn repair_consistency(imdp: &IntervalMdp, sched: &Scheduler) -> Scheduler {
    let mut out = sched.clone();
    let layers = imdp.num_layers();
    for layer in 0..layers.saturating_sub(1) {
        let reach = reachable_under(imdp, &out);
        let cells = imdp.layer_cells(layer).len();
        let next_cells = imdp.layer_cells(layer + 1).len();
        let mut votes = vec![vec![0usize; next_cells]; cells];
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); cells];
        for id in 0..imdp.num_states() {
            let st = imdp.state(id);
            if st.layer != layer || imdp.actions_of(id).is_empty() {
                continue;
            }
            members[st.cell].push(id);
            if reach[id] {
                if let Some(c) = out.chosen_cell(imdp, id) {
                    votes[st.cell][c] += 1;
                }
            }
        }
        for (cell, tally) in votes.iter().enumerate() {
            let total: usize = tally.iter().sum();
            if total == 0 {
                continue;
            }
            let mut winner = 0;
            for (c, &count) in tally.iter().enumerate() {
                if count > tally[winner] {
                    winner = c;
                }
            }
            for &id in &members[cell] {
                out.set_cell(imdp, id, winner);
            }
        }
    }
    out
}

/// Sound bounds on the optimal conditional weight over all instances.
///
/// For `Max` the upper bound optimizes over all schedulers and nature, the lower
/// bound evaluates the repaired pessimistic-nature scheduler against adversarial
/// nature. `Min` swaps every direction.
pub fn compute_bounds(imdp: &IntervalMdp, w: &WeightVector, tol: f64, direction: Opt) -> Result<BoundsReport> {
    let init = imdp.initial();
    let optimistic = direction;
    let (bound_values, bound_scheduler) = robust_value_iteration(imdp, w, direction, optimistic, tol)?;
    let (_, raw_scheduler) = robust_value_iteration(imdp, w, direction, optimistic.flip(), tol)?;
    let repaired_scheduler = repair_consistency(imdp, &raw_scheduler);
    let consistent = audit_consistency(imdp, &repaired_scheduler).is_empty();
    let repaired_values = evaluate_scheduler(imdp, w, &repaired_scheduler, optimistic.flip(), tol)?;
    let (bound, achieved) = (bound_values.values[init], repaired_values.values[init]);
    let (lower, upper) = match direction {
        Opt::Max => (achieved, bound),
        Opt::Min => (bound, achieved),
    };
    if lower > upper + 1e-9 {
        return Err(Error::InvertedBounds { lower, upper });
    }
    Ok(BoundsReport {
        lower,
        upper,
        bound_scheduler,
        raw_scheduler,
        repaired_scheduler,
        consistent,
    })
}

/// Positive-width partition cells `(index, cell)` touched by the reachable set.
pub fn guided_split_targets(psi: &TimePartition, imdp: &IntervalMdp, reachable: &[bool]) -> Vec<(usize, usize)> {
    let d = psi.num_indices();
    let mut out: Vec<(usize, usize)> = (0..imdp.num_states())
        .filter(|&id| reachable[id])
        .map(|id| imdp.state(id))
        .filter(|st| st.layer >= 1 && st.layer <= d)
        .map(|st| (st.layer - 1, st.cell))
        .filter(|&(i, j)| !psi.cell(i, j).is_point())
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}
