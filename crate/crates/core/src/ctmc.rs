//! Labeled continuous-time Markov chains and their transient analysis.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Index;

use crate::error::{Error, Result};
use crate::poisson::poisson_weights;

/// Default truncation tolerance for uniformization.
pub const DEFAULT_TRANSIENT_EPS: f64 = 1e-10;

/// Probability distribution over the states of a CTMC.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn dirac(n: usize, state: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[state] = 1.0;
        Distribution { probs }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl Index<usize> for Distribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// Nonnegative weight per CTMC state.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Semantic(format!("weight {w} is not a finite nonnegative number")));
        }
        Ok(WeightVector { weights })
    }

    /// Weight 1 on the marked states, 0 elsewhere.
    pub fn indicator(mask: &[bool]) -> Self {
        WeightVector {
            weights: mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.weights[i]
    }
}

/// A finite labeled CTMC.
///
/// The rate entries are kept as given so that serialization round-trips exactly;
/// exit rates, jump probabilities and the uniformized matrix are derived once.
#[derive(Debug, Clone)]
pub struct Ctmc {
    names: Vec<String>,
    index: HashMap<String, usize>,
    labels: Vec<BTreeSet<String>>,
    initial: usize,
    rates: Vec<Vec<(usize, f64)>>,
    exit_rates: Vec<f64>,
    jumps: Vec<Vec<(usize, f64)>>,
    lambda: f64,
    // rows of I + (R - diag E) / lambda
    uniform: Vec<Vec<(usize, f64)>>,
}

impl PartialEq for Ctmc {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self.labels == other.labels
            && self.initial == other.initial
            && self.rates == other.rates
    }
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty()
        && s != "true"
        && s.chars().all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':' | '\''))
}

impl Ctmc {
    /// Builds a chain from explicit rate entries `(src, dst, rate)`.
    pub fn new(
        names: Vec<String>,
        labels: Vec<BTreeSet<String>>,
        initial: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::Semantic("a CTMC needs at least one state".into()));
        }
        if labels.len() != n {
            return Err(Error::Semantic("one label set per state is required".into()));
        }
        if initial >= n {
            return Err(Error::Semantic(format!("initial state {initial} out of range")));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Semantic(format!("duplicate state '{name}'")));
            }
        }
        let mut rates: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(s, t, r) in entries {
            if s >= n || t >= n {
                return Err(Error::Semantic(format!("rate entry {s} -> {t} references an unknown state")));
            }
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Semantic(format!("rate {r} from '{}' to '{}' is not positive", names[s], names[t])));
            }
            if rates[s].iter().any(|&(u, _)| u == t) {
                return Err(Error::Semantic(format!("duplicate transition '{}' -> '{}'", names[s], names[t])));
            }
            rates[s].push((t, r));
        }
        for row in &mut rates {
            row.sort_by_key(|&(t, _)| t);
        }
        let exit_rates: Vec<f64> = rates.iter().map(|row| row.iter().map(|&(_, r)| r).sum()).collect();
        let jumps: Vec<Vec<(usize, f64)>> = rates
            .iter()
            .zip(&exit_rates)
            .map(|(row, &e)| row.iter().map(|&(t, r)| (t, r / e)).collect())
            .collect();
        let lambda = exit_rates.iter().copied().fold(0.0, f64::max) * (1.0 + 1e-6);
        let uniform = (0..n)
            .map(|s| {
                if lambda == 0.0 {
                    return vec![(s, 1.0)];
                }
                let mut row: Vec<(usize, f64)> = rates[s].iter().map(|&(t, r)| (t, r / lambda)).collect();
                let stay = 1.0 - exit_rates[s] / lambda;
                match row.iter_mut().find(|(t, _)| *t == s) {
                    Some(entry) => entry.1 += stay,
                    None => {
                        row.push((s, stay));
                        row.sort_by_key(|&(t, _)| t);
                    }
                }
                row
            })
            .collect();
        Ok(Ctmc {
            names,
            index,
            labels,
            initial,
            rates,
            exit_rates,
            jumps,
            lambda,
            uniform,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = false;
        let mut names = Vec::new();
        let mut labels = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut init: Option<(usize, String)> = None;
        let mut rate_lines = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let kw = tok.next().unwrap_or_default();
            if !header {
                if kw != "ctmc" || tok.next().is_some() {
                    return Err(Error::parse(line_no, "expected 'ctmc' header"));
                }
                header = true;
                continue;
            }
            match kw {
                "state" => {
                    let id = tok.next().ok_or_else(|| Error::parse(line_no, "state id missing"))?;
                    if !valid_ident(id) {
                        return Err(Error::parse(line_no, format!("invalid state id '{id}'")));
                    }
                    let mut set = BTreeSet::new();
                    for l in tok {
                        if !valid_ident(l) {
                            return Err(Error::parse(line_no, format!("invalid label '{l}'")));
                        }
                        set.insert(l.to_string());
                    }
                    if index.insert(id.to_string(), names.len()).is_some() {
                        return Err(Error::parse(line_no, format!("duplicate state '{id}'")));
                    }
                    names.push(id.to_string());
                    labels.push(set);
                }
                "init" => {
                    let id = tok.next().ok_or_else(|| Error::parse(line_no, "init state missing"))?;
                    if tok.next().is_some() {
                        return Err(Error::parse(line_no, "trailing tokens after init"));
                    }
                    if init.is_some() {
                        return Err(Error::parse(line_no, "duplicate init line"));
                    }
                    init = Some((line_no, id.to_string()));
                }
                "rate" => {
                    let parts: Vec<&str> = tok.collect();
                    if parts.len() != 3 {
                        return Err(Error::parse(line_no, "expected 'rate <src> <dst> <value>'"));
                    }
                    let value: f64 = parts[2]
                        .parse()
                        .map_err(|_| Error::parse(line_no, format!("invalid rate '{}'", parts[2])))?;
                    if !value.is_finite() {
                        return Err(Error::parse(line_no, format!("invalid rate '{}'", parts[2])));
                    }
                    if value < 0.0 {
                        return Err(Error::parse(line_no, format!("negative rate {}", parts[2])));
                    }
                    if value == 0.0 {
                        return Err(Error::parse(line_no, "rates must be positive"));
                    }
                    rate_lines.push((line_no, parts[0].to_string(), parts[1].to_string(), value));
                }
                other => return Err(Error::parse(line_no, format!("unknown directive '{other}'"))),
            }
        }
        if !header {
            return Err(Error::parse(1, "expected 'ctmc' header"));
        }
        let last_line = text.lines().count().max(1);
        let (init_line, init_name) = init.ok_or_else(|| Error::parse(last_line, "missing init line"))?;
        let initial = *index
            .get(&init_name)
            .ok_or_else(|| Error::parse(init_line, format!("unknown state '{init_name}'")))?;
        let mut entries = Vec::with_capacity(rate_lines.len());
        let mut seen = std::collections::HashSet::new();
        for (line_no, src, dst, value) in rate_lines {
            let s = *index.get(&src).ok_or_else(|| Error::parse(line_no, format!("unknown state '{src}'")))?;
            let t = *index.get(&dst).ok_or_else(|| Error::parse(line_no, format!("unknown state '{dst}'")))?;
            if !seen.insert((s, t)) {
                return Err(Error::parse(line_no, format!("duplicate transition '{src}' -> '{dst}'")));
            }
            entries.push((s, t, value));
        }
        Ctmc::new(names, labels, initial, &entries)
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn name(&self, s: usize) -> &str {
        &self.names[s]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn labels(&self, s: usize) -> &BTreeSet<String> {
        &self.labels[s]
    }

    pub fn has_label(&self, s: usize, ap: &str) -> bool {
        self.labels[s].contains(ap)
    }

    /// True if some state carries the proposition.
    pub fn knows_label(&self, ap: &str) -> bool {
        self.labels.iter().any(|l| l.contains(ap))
    }

    pub fn exit_rate(&self, s: usize) -> f64 {
        self.exit_rates[s]
    }

    /// Jump distribution of `s` as sorted `(successor, probability)` pairs.
    pub fn jumps(&self, s: usize) -> &[(usize, f64)] {
        &self.jumps[s]
    }

    pub fn jump_prob(&self, s: usize, t: usize) -> f64 {
        self.jumps[s].iter().find(|&&(u, _)| u == t).map_or(0.0, |&(_, p)| p)
    }

    /// R(s, t) as given in the model.
    pub fn rate(&self, s: usize, t: usize) -> f64 {
        self.rates[s].iter().find(|&&(u, _)| u == t).map_or(0.0, |&(_, r)| r)
    }

    pub fn rate_entries(&self, s: usize) -> &[(usize, f64)] {
        &self.rates[s]
    }

    pub fn uniformization_rate(&self) -> f64 {
        self.lambda
    }

    fn step_forward(&self, v: &[f64], out: &mut [f64], absorbing: Option<&[bool]>) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (s, &mass) in v.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            if absorbing.is_some_and(|a| a[s]) {
                out[s] += mass;
                continue;
            }
            for &(t, p) in &self.uniform[s] {
                out[t] += mass * p;
            }
        }
    }

    fn step_backward(&self, v: &[f64], out: &mut [f64], absorbing: Option<&[bool]>) {
        for (s, o) in out.iter_mut().enumerate() {
            *o = if absorbing.is_some_and(|a| a[s]) {
                v[s]
            } else {
                self.uniform[s].iter().map(|&(t, p)| p * v[t]).sum()
            };
        }
    }

    fn uniformize(
        &self,
        start: &[f64],
        t: f64,
        eps: f64,
        absorbing: Option<&[bool]>,
        forward: bool,
    ) -> Vec<f64> {
        assert!(t >= 0.0 && t.is_finite(), "time must be finite and nonnegative, got {t}");
        assert!(eps > 0.0, "truncation tolerance must be positive");
        if t == 0.0 || self.lambda == 0.0 {
            return start.to_vec();
        }
        let pw = poisson_weights(self.lambda * t, eps);
        let n = start.len();
        let mut v = start.to_vec();
        let mut next = vec![0.0; n];
        let mut acc = vec![0.0; n];
        for k in 0..=pw.right() {
            if k >= pw.left {
                let w = pw.weights[k - pw.left];
                acc.iter_mut().zip(&v).for_each(|(a, x)| *a += w * x);
            }
            if k < pw.right() {
                if forward {
                    self.step_forward(&v, &mut next, absorbing);
                } else {
                    self.step_backward(&v, &mut next, absorbing);
                }
                std::mem::swap(&mut v, &mut next);
            }
        }
        acc
    }

    /// Row vector `start · exp(Q t)`.
    pub fn transient_from(&self, start: &[f64], t: f64, eps: f64) -> Vec<f64> {
        self.uniformize(start, t, eps, None, true)
    }

    /// Column vector `exp(Q t) · values`: expected value of `values` at time `t` per start state.
    pub fn expect_at(&self, values: &[f64], t: f64, eps: f64) -> Vec<f64> {
        self.uniformize(values, t, eps, None, false)
    }

    /// Transient distribution Pr_source(t).
    pub fn transient(&self, source: usize, t: f64, eps: f64) -> Distribution {
        let start = Distribution::dirac(self.num_states(), source);
        let mut probs = self.transient_from(&start.probs, t, eps);
        for p in &mut probs {
            *p = p.clamp(0.0, 1.0);
        }
        Distribution { probs }
    }

    /// Probability of occupying a target state at some time in `[a, b]`, starting from `source`.
    pub fn bounded_reachability(&self, source: usize, target: &[bool], a: f64, b: f64, eps: f64) -> f64 {
        assert!(0.0 <= a && a <= b, "window [{a}, {b}] is not ordered");
        if !target.iter().any(|&x| x) {
            return 0.0;
        }
        let at_a = self.transient(source, a, eps).probs;
        let end = self.uniformize(&at_a, b - a, eps, Some(target), true);
        end.iter()
            .zip(target)
            .filter(|(_, &t)| t)
            .map(|(p, _)| p)
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// `bounded_reachability` for every source at once, by two backward passes.
    pub fn bounded_reachability_all(&self, target: &[bool], a: f64, b: f64, eps: f64) -> Vec<f64> {
        assert!(0.0 <= a && a <= b, "window [{a}, {b}] is not ordered");
        let indicator: Vec<f64> = target.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
        let within = self.uniformize(&indicator, b - a, eps, Some(target), false);
        let mut out = self.expect_at(&within, a, eps);
        for p in &mut out {
            *p = p.clamp(0.0, 1.0);
        }
        out
    }

    /// Probability that no state-changing jump leaves `s` within `tau`.
    pub fn invariance(&self, s: usize, tau: f64) -> f64 {
        assert!(tau >= 0.0, "duration must be nonnegative");
        let leave = self.exit_rates[s] - self.rate(s, s);
        (-leave * tau).exp()
    }

    /// w(s) = probability of reaching the target within `horizon` from s.
    pub fn weight_from_property(&self, target: &[bool], horizon: f64, eps: f64) -> WeightVector {
        assert!(horizon >= 0.0, "horizon must be nonnegative");
        let mut weights = self.bounded_reachability_all(target, 0.0, horizon, eps);
        for (w, &t) in weights.iter_mut().zip(target) {
            if t {
                *w = 1.0;
            }
        }
        WeightVector { weights }
    }
}

impl fmt::Display for Ctmc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ctmc")?;
        for (name, labels) in self.names.iter().zip(&self.labels) {
            write!(f, "state {name}")?;
            for l in labels {
                write!(f, " {l}")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "init {}", self.names[self.initial])?;
        for (s, row) in self.rates.iter().enumerate() {
            for &(t, r) in row {
                writeln!(f, "rate {} {} {}", self.names[s], self.names[t], r)?;
            }
        }
        Ok(())
    }
}
