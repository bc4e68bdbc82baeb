//! Interval MDP abstraction of the conditioned unfolding over a time partition.
//!
//! Abstract states are `⟨s, layer, cell⟩`. Layer 0 is the anchor {0}, layers `1..=d`
//! hold the partition cells of the observations and layer `d + 1` is t⋆. Every
//! action moves one layer forward, so a state's successors always have larger ids;
//! the only back-edge is the reset arc to the initial state.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use crate::ctmc::Ctmc;
use crate::error::{Error, Result};
use crate::evidence::{Cell, ImpreciseEvidence, TimePartition};

const ABSENT: usize = usize::MAX;
/// Gaps are snapped to this grid before bounds are computed so equal gaps share cache entries.
const GAP_GRID: f64 = 1e12;
/// Lower bounds may exceed upper bounds by this much before construction fails.
const COLLAPSE_TOL: f64 = 1e-9;
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AbstractState {
    pub state: usize,
    pub layer: usize,
    pub cell: usize,
}

/// What an abstract state can do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    /// Choice among `count` actions stored from `first`.
    Actions { first: usize, count: usize },
    /// The state violates its observation; all mass returns to the initial state.
    Reset,
    /// Layer t⋆.
    Terminal,
}

/// Choosing the next-layer cell `cell`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub cell: usize,
    pub first: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub succ: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMdp {
    state_names: Vec<String>,
    layer_cells: Vec<Vec<Cell>>,
    states: Vec<AbstractState>,
    behavior: Vec<Behavior>,
    actions: Vec<Action>,
    transitions: Vec<Transition>,
    // per layer, cell * n + s -> id
    index: Vec<Vec<usize>>,
    initial: usize,
}

/// Snapped gap pair `(min gap, max gap)` in units of 1e-12.
pub type GapKey = (i64, i64);

/// Lower and upper bound matrices for one gap window, row-major `[s * n + s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundMatrix {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Memo of bound matrices keyed by gap window. Tied to one CTMC and tolerance.
#[derive(Debug, Default)]
pub struct TransientBoundCache {
    entries: RwLock<HashMap<GapKey, Arc<BoundMatrix>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl TransientBoundCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

pub fn gap_key(min_gap: f64, max_gap: f64) -> GapKey {
    ((min_gap * GAP_GRID).round() as i64, (max_gap * GAP_GRID).round() as i64)
}

/// Bounds on Pr_s(δ)(s') over all δ in the snapped window of `key`.
///
/// Upper: reach s' at some time in the window. Lower: be in s' at the earliest
/// time and stay for the rest of the window.
pub fn bound_matrix(ctmc: &Ctmc, key: GapKey, eps: f64) -> Result<BoundMatrix> {
    let n = ctmc.num_states();
    let dmin = key.0 as f64 / GAP_GRID;
    let dmax = key.1 as f64 / GAP_GRID;
    let columns: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut target = vec![false; n];
            target[t] = true;
            let mut unit = vec![0.0; n];
            unit[t] = 1.0;
            let at_min = ctmc.expect_at(&unit, dmin, eps);
            let stay = ctmc.invariance(t, dmax - dmin);
            let lower: Vec<f64> = at_min.iter().map(|p| p * stay).collect();
            let upper = if dmax == dmin {
                at_min
            } else {
                ctmc.bounded_reachability_all(&target, dmin, dmax, eps)
            };
            (lower, upper)
        })
        .collect();
    let mut lower = vec![0.0; n * n];
    let mut upper = vec![0.0; n * n];
    for (t, (lo_col, hi_col)) in columns.iter().enumerate() {
        for s in 0..n {
            let mut lo = lo_col[s].max(0.0);
            let mut hi = hi_col[s].min(1.0);
            if lo > hi {
                if lo - hi > COLLAPSE_TOL {
                    return Err(Error::InfeasibleBounds {
                        state: ctmc.name(s).to_string(),
                        action: format!("gap [{dmin},{dmax}]"),
                        detail: format!("lower {lo} exceeds upper {hi} for successor {}", ctmc.name(t)),
                    });
                }
                let mid = 0.5 * (lo + hi);
                lo = mid;
                hi = mid;
            }
            lower[s * n + t] = lo;
            upper[s * n + t] = hi;
        }
    }
    Ok(BoundMatrix { lower, upper })
}

fn fetch_matrices(
    ctmc: &Ctmc,
    keys: &[GapKey],
    eps: f64,
    cache: Option<&TransientBoundCache>,
) -> Result<HashMap<GapKey, Arc<BoundMatrix>>> {
    let mut out = HashMap::with_capacity(keys.len());
    let mut missing = Vec::new();
    match cache {
        Some(c) => {
            let map = c.entries.read().unwrap();
            for k in keys {
                match map.get(k) {
                    Some(m) => {
                        out.insert(*k, m.clone());
                    }
                    None => missing.push(*k),
                }
            }
            c.hits.fetch_add(keys.len() - missing.len(), Ordering::Relaxed);
            c.misses.fetch_add(missing.len(), Ordering::Relaxed);
        }
        None => missing.extend_from_slice(keys),
    }
    let computed: Vec<(GapKey, Result<BoundMatrix>)> =
        missing.par_iter().map(|&k| (k, bound_matrix(ctmc, k, eps))).collect();
    let mut fresh = Vec::with_capacity(computed.len());
    for (k, m) in computed {
        let m = Arc::new(m?);
        out.insert(k, m.clone());
        fresh.push((k, m));
    }
    if let Some(c) = cache {
        let mut map = c.entries.write().unwrap();
        for (k, m) in fresh {
            map.entry(k).or_insert(m);
        }
    }
    Ok(out)
}

/// Builds the iMDP over `psi`; with `prune` only states reachable from the initial state are created.
pub fn build(
    ctmc: &Ctmc,
    omega: &ImpreciseEvidence,
    psi: &TimePartition,
    eps: f64,
    cache: Option<&TransientBoundCache>,
    prune: bool,
) -> Result<IntervalMdp> {
    if !psi.covers(omega) {
        return Err(Error::Semantic("time partition does not cover the evidence".into()));
    }
    omega.check_against(ctmc)?;
    let n = ctmc.num_states();
    let d = omega.len();
    let mut layer_cells: Vec<Vec<Cell>> = Vec::with_capacity(d + 2);
    layer_cells.push(vec![Cell { lo: 0.0, hi: 0.0 }]);
    for i in 0..d {
        layer_cells.push(psi.cells(i).to_vec());
    }
    layer_cells.push(vec![Cell {
        lo: f64::INFINITY,
        hi: f64::INFINITY,
    }]);
    let masks: Vec<Vec<bool>> = (0..d).map(|i| omega.observation(i).mask(ctmc)).collect();

    let mut mdp = IntervalMdp {
        state_names: (0..n).map(|s| ctmc.name(s).to_string()).collect(),
        layer_cells,
        states: Vec::new(),
        behavior: Vec::new(),
        actions: Vec::new(),
        transitions: Vec::new(),
        index: Vec::with_capacity(d + 2),
        initial: 0,
    };

    // active[c * n + s] for the current layer
    let mut active = vec![false; n];
    active[ctmc.initial()] = true;
    // transitions whose `succ` still holds a `cell * n + s` key of the layer being created
    let mut pending_from = 0;
    for layer in 0..=d + 1 {
        let layer_start = mdp.states.len();
        let cells = mdp.layer_cells[layer].len();
        if !prune {
            active = vec![true; cells * n];
        }
        let mut index = vec![ABSENT; cells * n];
        for c in 0..cells {
            for s in 0..n {
                if active[c * n + s] {
                    index[c * n + s] = mdp.states.len();
                    mdp.states.push(AbstractState { state: s, layer, cell: c });
                    mdp.behavior.push(Behavior::Terminal);
                }
            }
        }
        for t in &mut mdp.transitions[pending_from..] {
            t.succ = index[t.succ];
        }
        mdp.index.push(index);
        pending_from = mdp.transitions.len();
        if layer == d + 1 {
            break;
        }
        let next_cells = mdp.layer_cells[layer + 1].len();
        let mut next_active = vec![false; next_cells * n];
        let ids: Vec<usize> = (layer_start..mdp.states.len()).collect();
        if layer == d {
            for &id in &ids {
                let s = mdp.states[id].state;
                if !masks[d - 1][s] {
                    mdp.behavior[id] = Behavior::Reset;
                    continue;
                }
                mdp.behavior[id] = Behavior::Actions {
                    first: mdp.actions.len(),
                    count: 1,
                };
                mdp.actions.push(Action {
                    cell: 0,
                    first: mdp.transitions.len(),
                    count: 1,
                });
                mdp.transitions.push(Transition { succ: s, lo: 1.0, hi: 1.0 });
                next_active[s] = true;
            }
        } else {
            let here = &mdp.layer_cells[layer];
            let there = &mdp.layer_cells[layer + 1];
            let mut keys: Vec<GapKey> = Vec::new();
            let mut pair_key = vec![(0i64, 0i64); here.len() * there.len()];
            let mut used_cells = vec![false; here.len()];
            for &id in &ids {
                used_cells[mdp.states[id].cell] = true;
            }
            for (c, from) in here.iter().enumerate() {
                if !used_cells[c] {
                    continue;
                }
                for (c2, to) in there.iter().enumerate() {
                    let k = gap_key(to.lo - from.hi, to.hi - from.lo);
                    pair_key[c * there.len() + c2] = k;
                    keys.push(k);
                }
            }
            keys.sort_unstable();
            keys.dedup();
            let matrices = fetch_matrices(ctmc, &keys, eps, cache)?;
            for &id in &ids {
                let AbstractState { state: s, cell: c, .. } = mdp.states[id];
                if layer > 0 && !masks[layer - 1][s] {
                    mdp.behavior[id] = Behavior::Reset;
                    continue;
                }
                let first_action = mdp.actions.len();
                for c2 in 0..there.len() {
                    let m = &matrices[&pair_key[c * there.len() + c2]];
                    let first = mdp.transitions.len();
                    let (mut sum_lo, mut sum_hi) = (0.0, 0.0);
                    for t in 0..n {
                        let hi = m.upper[s * n + t];
                        if hi <= 0.0 {
                            continue;
                        }
                        let lo = m.lower[s * n + t];
                        sum_lo += lo;
                        sum_hi += hi;
                        mdp.transitions.push(Transition { succ: c2 * n + t, lo, hi });
                        next_active[c2 * n + t] = true;
                    }
                    if sum_lo > 1.0 + FEASIBILITY_TOL || sum_hi < 1.0 - FEASIBILITY_TOL {
                        return Err(Error::InfeasibleBounds {
                            state: format!("⟨{},{},{}⟩", ctmc.name(s), layer, c),
                            action: there[c2].to_string(),
                            detail: format!("lower sum {sum_lo}, upper sum {sum_hi}"),
                        });
                    }
                    mdp.actions.push(Action {
                        cell: c2,
                        first,
                        count: mdp.transitions.len() - first,
                    });
                }
                mdp.behavior[id] = Behavior::Actions {
                    first: first_action,
                    count: there.len(),
                };
            }
        }
        active = next_active;
    }
    mdp.initial = mdp.index[0][ctmc.initial()];
    Ok(mdp)
}

/// Full abstraction over `psi`, including unreachable states.
pub fn abstract_imdp(
    ctmc: &Ctmc,
    omega: &ImpreciseEvidence,
    psi: &TimePartition,
    eps: f64,
    cache: Option<&TransientBoundCache>,
) -> Result<IntervalMdp> {
    build(ctmc, omega, psi, eps, cache, false)
}

/// Drops states unreachable from the initial state under every choice.
pub fn restrict_reachable(imdp: &IntervalMdp) -> IntervalMdp {
    let reach = imdp.reachable(|_| true);
    let mut remap = vec![ABSENT; imdp.states.len()];
    let mut out = IntervalMdp {
        state_names: imdp.state_names.clone(),
        layer_cells: imdp.layer_cells.clone(),
        states: Vec::new(),
        behavior: Vec::new(),
        actions: Vec::new(),
        transitions: Vec::new(),
        index: imdp.index.iter().map(|v| vec![ABSENT; v.len()]).collect(),
        initial: 0,
    };
    for (id, st) in imdp.states.iter().enumerate() {
        if reach[id] {
            remap[id] = out.states.len();
            out.index[st.layer][st.cell * imdp.num_ctmc_states() + st.state] = out.states.len();
            out.states.push(*st);
        }
    }
    for (id, _) in imdp.states.iter().enumerate().filter(|(id, _)| reach[*id]) {
        let b = match imdp.behavior[id] {
            Behavior::Actions { first, count } => {
                let new_first = out.actions.len();
                for a in &imdp.actions[first..first + count] {
                    let t_first = out.transitions.len();
                    for t in imdp.action_transitions(a) {
                        out.transitions.push(Transition {
                            succ: remap[t.succ],
                            ..*t
                        });
                    }
                    out.actions.push(Action {
                        cell: a.cell,
                        first: t_first,
                        count: a.count,
                    });
                }
                Behavior::Actions {
                    first: new_first,
                    count,
                }
            }
            other => other,
        };
        out.behavior.push(b);
    }
    out.initial = remap[imdp.initial];
    out
}

impl IntervalMdp {
    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_ctmc_states(&self) -> usize {
        self.state_names.len()
    }

    /// Number of choices, counting a reset as one action.
    pub fn num_actions(&self) -> usize {
        self.actions.len() + self.behavior.iter().filter(|b| matches!(b, Behavior::Reset)).count()
    }

    /// Number of interval transitions, counting a reset arc as one.
    pub fn num_transitions(&self) -> usize {
        self.transitions.len() + self.behavior.iter().filter(|b| matches!(b, Behavior::Reset)).count()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_cells.len()
    }

    pub fn layer_cells(&self, layer: usize) -> &[Cell] {
        &self.layer_cells[layer]
    }

    pub fn state(&self, id: usize) -> AbstractState {
        self.states[id]
    }

    pub fn behavior(&self, id: usize) -> Behavior {
        self.behavior[id]
    }

    pub fn action(&self, a: usize) -> &Action {
        &self.actions[a]
    }

    pub fn action_transitions(&self, a: &Action) -> &[Transition] {
        &self.transitions[a.first..a.first + a.count]
    }

    /// Actions enabled in `id` (empty for reset and terminal states).
    pub fn actions_of(&self, id: usize) -> std::ops::Range<usize> {
        match self.behavior[id] {
            Behavior::Actions { first, count } => first..first + count,
            _ => 0..0,
        }
    }

    /// Id of `⟨state, layer, cell⟩` if it exists.
    pub fn find(&self, state: usize, layer: usize, cell: usize) -> Option<usize> {
        let n = self.num_ctmc_states();
        self.index
            .get(layer)
            .and_then(|v| v.get(cell * n + state))
            .copied()
            .filter(|&id| id != ABSENT)
    }

    /// Forward closure from the initial state over actions accepted by `allow`.
    pub(crate) fn reachable(&self, allow: impl Fn(usize) -> bool) -> Vec<bool> {
        let mut seen = vec![false; self.states.len()];
        let mut stack = vec![self.initial()];
        seen[self.initial()] = true;
        while let Some(id) = stack.pop() {
            let mut visit = |succ: usize, seen: &mut Vec<bool>| {
                if !seen[succ] {
                    seen[succ] = true;
                    stack.push(succ);
                }
            };
            match self.behavior[id] {
                Behavior::Actions { first, count } => {
                    for a in (first..first + count).filter(|&a| allow(a)) {
                        for t in self.action_transitions(&self.actions[a]) {
                            if t.hi > 0.0 {
                                visit(t.succ, &mut seen);
                            }
                        }
                    }
                }
                Behavior::Reset => visit(self.initial(), &mut seen),
                Behavior::Terminal => {}
            }
        }
        seen
    }

    fn label(&self, id: usize) -> String {
        let st = self.states[id];
        format!("⟨{},{},{}⟩", self.state_names[st.state], st.layer, st.cell)
    }

    fn cell_label(&self, layer: usize, cell: usize) -> String {
        if layer + 1 == self.layer_cells.len() {
            "t*".to_string()
        } else {
            self.layer_cells[layer][cell].to_string()
        }
    }

    /// One line per transition in id order: `⟨s,i,j⟩ --cell--> ⟨s',i',j'⟩ [lo,hi]`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for id in 0..self.states.len() {
            match self.behavior[id] {
                Behavior::Actions { first, count } => {
                    let layer = self.states[id].layer;
                    for a in &self.actions[first..first + count] {
                        let cell = self.cell_label(layer + 1, a.cell);
                        for t in self.action_transitions(a) {
                            let _ = writeln!(out, "{} --{}--> {} [{},{}]", self.label(id), cell, self.label(t.succ), t.lo, t.hi);
                        }
                    }
                }
                Behavior::Reset => {
                    let _ = writeln!(out, "{} --reset--> {} [1,1]", self.label(id), self.label(self.initial()));
                }
                Behavior::Terminal => {}
            }
        }
        out
    }
}
