//! Exact analysis for precisely timed evidence via the layered unfolding.
//!
//! Layer 0 sits at time 0, layers `1..=d` at the observation times and layer `d + 1`
//! is the terminal layer t⋆. Every layer materializes all CTMC states.

use rayon::prelude::*;

use crate::ctmc::{Ctmc, WeightVector};
use crate::evidence::PreciseEvidence;

/// Outgoing behaviour of one node of the layered chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    /// Dense distribution over the states of the next layer.
    Step(Vec<f64>),
    /// Conditioned variant: all mass returns to the initial node.
    Reset,
    /// Path-probability variant: the node absorbs its mass.
    SelfLoop,
    /// Terminal layer.
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredChain {
    times: Vec<f64>,
    rows: Vec<Vec<Row>>,
    reset: Vec<Vec<bool>>,
    initial: usize,
}

/// Result of [`conditional_weight`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalWeight {
    pub value: f64,
    /// Probability of the evidence, i.e. mass reaching t⋆ in a single pass.
    pub likelihood: f64,
    /// Set when the evidence has probability 0 and the value defaults to 0.
    pub zero_likelihood: bool,
}

impl LayeredChain {
    /// Number of layers, including layer 0 and t⋆.
    pub fn num_layers(&self) -> usize {
        self.rows.len()
    }

    pub fn num_states(&self) -> usize {
        self.rows[0].len()
    }

    /// Time stamp of a layer; the terminal layer reports `f64::INFINITY`.
    pub fn time(&self, layer: usize) -> f64 {
        self.times.get(layer).copied().unwrap_or(f64::INFINITY)
    }

    pub fn row(&self, layer: usize, state: usize) -> &Row {
        &self.rows[layer][state]
    }

    pub fn is_reset(&self, layer: usize, state: usize) -> bool {
        self.reset[layer][state]
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    fn with_reset_rows(&self, row: Row) -> Self {
        let mut out = self.clone();
        for (layer, flags) in self.reset.iter().enumerate() {
            for (s, &r) in flags.iter().enumerate() {
                if r {
                    out.rows[layer][s] = row.clone();
                }
            }
        }
        out
    }

    /// Conditioned chain: reset nodes send all mass back to the initial node.
    pub fn condition(&self) -> Self {
        self.with_reset_rows(Row::Reset)
    }

    /// Path-probability chain: reset nodes become absorbing.
    pub fn path_probability_variant(&self) -> Self {
        self.with_reset_rows(Row::SelfLoop)
    }

    /// Backward pass returning, at the initial node, the weighted terminal mass per pass
    /// and the terminal mass per pass. `Reset` and `SelfLoop` rows contribute nothing.
    fn single_pass(&self, w: &WeightVector) -> (f64, f64) {
        let n = self.num_states();
        let last = self.num_layers() - 1;
        let mut a = w.weights.clone();
        let mut c = vec![1.0; n];
        for layer in (0..last).rev() {
            let (mut na, mut nc) = (vec![0.0; n], vec![0.0; n]);
            for s in 0..n {
                if let Row::Step(p) = &self.rows[layer][s] {
                    na[s] = p.iter().zip(&a).map(|(p, v)| p * v).sum();
                    nc[s] = p.iter().zip(&c).map(|(p, v)| p * v).sum();
                }
            }
            a = na;
            c = nc;
        }
        (a[self.initial], c[self.initial])
    }

    /// Σ_s P(◇⟨s,t⋆⟩)·w(s) on a conditioned chain, solving the single back-edge in closed form.
    pub fn conditioned_value(&self, w: &WeightVector) -> f64 {
        let (a, c) = self.single_pass(w);
        if c > 0.0 {
            a / c
        } else {
            0.0
        }
    }

    /// Terminal mass distribution from a forward pass; reset and self-loop nodes keep their mass.
    pub fn terminal_mass(&self) -> Vec<f64> {
        let n = self.num_states();
        let last = self.num_layers() - 1;
        let mut mass = vec![0.0; n];
        mass[self.initial] = 1.0;
        for layer in 0..last {
            let mut next = vec![0.0; n];
            for (s, &m) in mass.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                if let Row::Step(p) = &self.rows[layer][s] {
                    next.iter_mut().zip(p).for_each(|(x, q)| *x += m * q);
                }
            }
            mass = next;
        }
        mass
    }
}

/// Builds the plain layered unfolding of `ctmc` along `rho`.
pub fn unfold_precise(ctmc: &Ctmc, rho: &PreciseEvidence, eps: f64) -> LayeredChain {
    let n = ctmc.num_states();
    let d = rho.len();
    let mut times = vec![0.0];
    times.extend(rho.times());
    let mut rows = Vec::with_capacity(d + 2);
    for layer in 0..d {
        let gap = times[layer + 1] - times[layer];
        let layer_rows: Vec<Row> = (0..n)
            .into_par_iter()
            .map(|s| Row::Step(ctmc.transient(s, gap, eps).probs))
            .collect();
        rows.push(layer_rows);
    }
    rows.push(
        (0..n)
            .map(|s| {
                let mut p = vec![0.0; n];
                p[s] = 1.0;
                Row::Step(p)
            })
            .collect(),
    );
    rows.push(vec![Row::Terminal; n]);
    let mut reset = vec![vec![false; n]; d + 2];
    for (i, (_, obs)) in rho.entries().iter().enumerate() {
        for (s, flag) in reset[i + 1].iter_mut().enumerate() {
            *flag = !obs.holds(ctmc, s);
        }
    }
    LayeredChain {
        times,
        rows,
        reset,
        initial: ctmc.initial(),
    }
}

/// Backward vector pass over the unfolding without materializing it:
/// returns (weighted terminal mass, terminal mass) per pass from the initial state.
fn backward_pass(ctmc: &Ctmc, rho: &PreciseEvidence, w: &WeightVector, eps: f64) -> (f64, f64) {
    let n = ctmc.num_states();
    let mut a = w.weights.clone();
    let mut c = vec![1.0; n];
    let entries = rho.entries();
    for i in (0..entries.len()).rev() {
        let (t, obs) = &entries[i];
        for s in 0..n {
            if !obs.holds(ctmc, s) {
                a[s] = 0.0;
                c[s] = 0.0;
            }
        }
        let prev = if i == 0 { 0.0 } else { entries[i - 1].0 };
        a = ctmc.expect_at(&a, t - prev, eps);
        c = ctmc.expect_at(&c, t - prev, eps);
    }
    let s = ctmc.initial();
    (a[s].max(0.0), c[s].clamp(0.0, 1.0))
}

/// Exact conditional expected weight at the last observation given `rho`.
pub fn conditional_weight(ctmc: &Ctmc, rho: &PreciseEvidence, w: &WeightVector, eps: f64) -> ConditionalWeight {
    let (a, c) = backward_pass(ctmc, rho, w, eps);
    if c > 0.0 {
        ConditionalWeight {
            value: (a / c).min(w.max()),
            likelihood: c,
            zero_likelihood: false,
        }
    } else {
        ConditionalWeight {
            value: 0.0,
            likelihood: 0.0,
            zero_likelihood: true,
        }
    }
}

/// Probability that the CTMC produces the evidence, from a forward pass over the self-loop chain.
pub fn evidence_likelihood(ctmc: &Ctmc, rho: &PreciseEvidence, eps: f64) -> f64 {
    let chain = unfold_precise(ctmc, rho, eps).path_probability_variant();
    chain.terminal_mass().iter().sum::<f64>().clamp(0.0, 1.0)
}

/// Weighted terminal mass over terminal mass on the self-loop chain.
pub fn bayes_quotient(ctmc: &Ctmc, rho: &PreciseEvidence, w: &WeightVector, eps: f64) -> f64 {
    let chain = unfold_precise(ctmc, rho, eps).path_probability_variant();
    let mass = chain.terminal_mass();
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        mass.iter().zip(&w.weights).map(|(m, w)| m * w).sum::<f64>() / total
    } else {
        0.0
    }
}
