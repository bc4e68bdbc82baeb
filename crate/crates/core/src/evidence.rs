//! Observation formulas, precise and imprecise evidence, and time partitions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::ctmc::Ctmc;
use crate::error::{Error, Result};

/// Conjunction of literals over atomic propositions. The empty conjunction is `true`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObservationFormula {
    literals: Vec<(String, bool)>,
}

impl ObservationFormula {
    pub fn truth() -> Self {
        ObservationFormula { literals: Vec::new() }
    }

    pub fn literal(ap: &str, positive: bool) -> Self {
        ObservationFormula {
            literals: vec![(ap.to_string(), positive)],
        }
    }

    pub fn literals(&self) -> &[(String, bool)] {
        &self.literals
    }

    pub fn is_true(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn holds(&self, ctmc: &Ctmc, s: usize) -> bool {
        self.literals.iter().all(|(ap, pos)| ctmc.has_label(s, ap) == *pos)
    }

    /// Satisfaction mask over the states of `ctmc`.
    pub fn mask(&self, ctmc: &Ctmc) -> Vec<bool> {
        (0..ctmc.num_states()).map(|s| self.holds(ctmc, s)).collect()
    }

    /// Fails if a proposition is not used by any state of the model.
    pub fn check_against(&self, ctmc: &Ctmc) -> Result<()> {
        for (ap, _) in &self.literals {
            if !ctmc.knows_label(ap) {
                return Err(Error::Semantic(format!("unknown atomic proposition '{ap}'")));
            }
        }
        Ok(())
    }
}

impl FromStr for ObservationFormula {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.is_empty() {
            return Err("empty formula".into());
        }
        if s == "true" {
            return Ok(ObservationFormula::truth());
        }
        let mut literals = Vec::new();
        for part in s.split('&') {
            let part = part.trim();
            let (ap, positive) = match part.strip_prefix('!') {
                Some(rest) => (rest.trim(), false),
                None => (part, true),
            };
            let ok = !ap.is_empty()
                && ap != "true"
                && ap.chars().all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':' | '\''));
            if !ok {
                return Err(format!("invalid literal '{part}'"));
            }
            literals.push((ap.to_string(), positive));
        }
        Ok(ObservationFormula { literals })
    }
}

impl fmt::Display for ObservationFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.literals.is_empty() {
            return write!(f, "true");
        }
        for (i, (ap, pos)) in self.literals.iter().enumerate() {
            if i > 0 {
                write!(f, " & ")?;
            }
            if !pos {
                write!(f, "!")?;
            }
            write!(f, "{ap}")?;
        }
        Ok(())
    }
}

/// Finite union of closed intervals, sorted and disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSet {
    intervals: Vec<(f64, f64)>,
}

impl TimeSet {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::Semantic("empty time set".into()));
        }
        for &(a, b) in &intervals {
            if !(a.is_finite() && b.is_finite()) || a < 0.0 || a > b {
                return Err(Error::Semantic(format!("invalid time interval {a}..{b}")));
            }
        }
        intervals.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (a, b) in intervals {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        Ok(TimeSet { intervals: merged })
    }

    pub fn point(t: f64) -> Result<Self> {
        TimeSet::new(vec![(t, t)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn min(&self) -> f64 {
        self.intervals[0].0
    }

    pub fn max(&self) -> f64 {
        self.intervals[self.intervals.len() - 1].1
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= t && t <= b)
    }

    pub fn length(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn is_point(&self) -> bool {
        self.intervals.len() == 1 && self.intervals[0].0 == self.intervals[0].1
    }

    /// Uniform draw with respect to length; a set of isolated points is sampled uniformly by point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let len = self.length();
        if len == 0.0 {
            return self.intervals[rng.gen_range(0..self.intervals.len())].0;
        }
        let mut u = rng.gen::<f64>() * len;
        for &(a, b) in &self.intervals {
            let w = b - a;
            if u <= w && w > 0.0 {
                return (a + u).min(b);
            }
            u -= w;
        }
        self.max()
    }
}

fn fmt_time(f: &mut fmt::Formatter<'_>, a: f64, b: f64) -> fmt::Result {
    if a == b {
        write!(f, "{a}")
    } else {
        write!(f, "{a}..{b}")
    }
}

impl fmt::Display for TimeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &(a, b)) in self.intervals.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            fmt_time(f, a, b)?;
        }
        Ok(())
    }
}

/// Evidence with exact observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct PreciseEvidence {
    entries: Vec<(f64, ObservationFormula)>,
}

impl PreciseEvidence {
    pub fn new(entries: Vec<(f64, ObservationFormula)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Semantic("evidence needs at least one observation".into()));
        }
        let mut prev = None;
        for (t, _) in &entries {
            if !t.is_finite() || *t < 0.0 {
                return Err(Error::Semantic(format!("invalid observation time {t}")));
            }
            if prev.is_some_and(|p| p >= *t) {
                return Err(Error::Semantic("observation times must strictly increase".into()));
            }
            prev = Some(*t);
        }
        Ok(PreciseEvidence { entries })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let imprecise = ImpreciseEvidence::parse(text)?;
        imprecise
            .as_precise()
            .ok_or_else(|| Error::Semantic("precise evidence requires a single time point per observation".into()))
    }

    pub fn entries(&self) -> &[(f64, ObservationFormula)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.entries.iter().map(|(t, _)| *t).collect()
    }

    pub fn check_against(&self, ctmc: &Ctmc) -> Result<()> {
        self.entries.iter().try_for_each(|(_, o)| o.check_against(ctmc))
    }

    /// The degenerate imprecise evidence with singleton time sets.
    pub fn to_imprecise(&self) -> ImpreciseEvidence {
        ImpreciseEvidence {
            entries: self
                .entries
                .iter()
                .map(|(t, o)| (TimeSet::point(*t).expect("validated time"), o.clone()))
                .collect(),
        }
    }

    pub fn is_instance_of(&self, omega: &ImpreciseEvidence) -> bool {
        is_instance(self, omega)
    }
}

impl fmt::Display for PreciseEvidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "evidence")?;
        for (t, o) in &self.entries {
            writeln!(f, "obs {o} @ {t}")?;
        }
        Ok(())
    }
}

/// Ordered observations whose times are only known to lie in time sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpreciseEvidence {
    entries: Vec<(TimeSet, ObservationFormula)>,
}

impl ImpreciseEvidence {
    pub fn new(entries: Vec<(TimeSet, ObservationFormula)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Semantic("evidence needs at least one observation".into()));
        }
        for w in entries.windows(2) {
            if w[0].0.max() >= w[1].0.min() {
                return Err(Error::Semantic(format!(
                    "observation windows must be strictly ordered: {} is not before {}",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(ImpreciseEvidence { entries })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = false;
        let mut entries: Vec<(TimeSet, ObservationFormula)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if !header {
                if line != "evidence" {
                    return Err(Error::parse(line_no, "expected 'evidence' header"));
                }
                header = true;
                continue;
            }
            let rest = line
                .strip_prefix("obs")
                .filter(|r| r.starts_with(char::is_whitespace))
                .ok_or_else(|| Error::parse(line_no, "expected 'obs <formula> @ <times>'"))?;
            let (formula, times) = rest
                .split_once('@')
                .ok_or_else(|| Error::parse(line_no, "missing '@' before the observation times"))?;
            let formula: ObservationFormula = formula.parse().map_err(|e: String| Error::parse(line_no, e))?;
            let mut intervals = Vec::new();
            for piece in times.split('+') {
                let piece = piece.trim();
                let (a, b) = match piece.split_once("..") {
                    Some((a, b)) => (a.trim(), b.trim()),
                    None => (piece, piece),
                };
                let a: f64 = a.parse().map_err(|_| Error::parse(line_no, format!("invalid time '{a}'")))?;
                let b: f64 = b.parse().map_err(|_| Error::parse(line_no, format!("invalid time '{b}'")))?;
                if !(a.is_finite() && b.is_finite()) || a < 0.0 || a > b {
                    return Err(Error::parse(line_no, format!("invalid time interval '{piece}'")));
                }
                intervals.push((a, b));
            }
            let set = TimeSet::new(intervals).map_err(|e| Error::parse(line_no, e.to_string()))?;
            if let Some((prev, _)) = entries.last() {
                if prev.max() >= set.min() {
                    return Err(Error::parse(line_no, "observation windows must be strictly ordered and must not touch"));
                }
            }
            entries.push((set, formula));
        }
        if !header {
            return Err(Error::parse(1, "expected 'evidence' header"));
        }
        if entries.is_empty() {
            return Err(Error::parse(text.lines().count().max(1), "evidence needs at least one observation"));
        }
        ImpreciseEvidence::new(entries)
    }

    pub fn entries(&self) -> &[(TimeSet, ObservationFormula)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn time_set(&self, i: usize) -> &TimeSet {
        &self.entries[i].0
    }

    pub fn observation(&self, i: usize) -> &ObservationFormula {
        &self.entries[i].1
    }

    pub fn check_against(&self, ctmc: &Ctmc) -> Result<()> {
        self.entries.iter().try_for_each(|(_, o)| o.check_against(ctmc))
    }

    pub fn as_precise(&self) -> Option<PreciseEvidence> {
        if !self.entries.iter().all(|(t, _)| t.is_point()) {
            return None;
        }
        PreciseEvidence::new(self.entries.iter().map(|(t, o)| (t.min(), o.clone())).collect()).ok()
    }

    pub fn sample_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> PreciseEvidence {
        let entries = self.entries.iter().map(|(t, o)| (t.sample(rng), o.clone())).collect();
        PreciseEvidence::new(entries).expect("windows are strictly ordered")
    }
}

impl fmt::Display for ImpreciseEvidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "evidence")?;
        for (t, o) in &self.entries {
            writeln!(f, "obs {o} @ {t}")?;
        }
        Ok(())
    }
}

/// True iff `rho` has the same length and observations as `omega` and each time lies in its set.
pub fn is_instance(rho: &PreciseEvidence, omega: &ImpreciseEvidence) -> bool {
    rho.entries.len() == omega.entries.len()
        && rho
            .entries
            .iter()
            .zip(&omega.entries)
            .all(|((t, o), (set, o2))| o == o2 && set.contains(*t))
}

/// Closed time interval `[lo, hi]` belonging to one observation index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub lo: f64,
    pub hi: f64,
}

impl Cell {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, t: f64) -> bool {
        self.lo <= t && t <= self.hi
    }

    pub fn within(&self, other: &Cell) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.lo, self.hi)
    }
}

/// Location of a time in a partition, including the synthetic anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellRef {
    Anchor,
    Cell { index: usize, cell: usize },
    Terminal,
}

/// Per observation index, the cells partitioning its time set (anchors 0 and t⋆ are implicit).
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    cells: Vec<Vec<Cell>>,
}

impl TimePartition {
    /// One cell per maximal interval of each time set.
    pub fn coarsest(omega: &ImpreciseEvidence) -> Self {
        let cells = omega
            .entries
            .iter()
            .map(|(set, _)| set.intervals().iter().map(|&(lo, hi)| Cell { lo, hi }).collect())
            .collect();
        TimePartition { cells }
    }

    pub fn num_indices(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self, index: usize) -> &[Cell] {
        &self.cells[index]
    }

    pub fn cell(&self, index: usize, cell: usize) -> Cell {
        self.cells[index][cell]
    }

    pub fn total_cells(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub fn split_cell(&self, index: usize, cell: usize) -> Result<Self> {
        self.split_cells(&[(index, cell)])
    }

    /// Bisects every listed cell (duplicates ignored).
    pub fn split_cells(&self, targets: &[(usize, usize)]) -> Result<Self> {
        let mut marked: Vec<Vec<bool>> = self.cells.iter().map(|c| vec![false; c.len()]).collect();
        for &(i, j) in targets {
            let c = self
                .cells
                .get(i)
                .and_then(|row| row.get(j))
                .ok_or_else(|| Error::Semantic(format!("no cell {j} at index {i}")))?;
            if c.is_point() {
                return Err(Error::Semantic(format!("cannot split point cell {c}")));
            }
            marked[i][j] = true;
        }
        let cells = self
            .cells
            .iter()
            .zip(&marked)
            .map(|(row, mark)| {
                let mut out = Vec::with_capacity(row.len());
                for (c, &m) in row.iter().zip(mark) {
                    if m {
                        let mid = (c.lo + c.hi) / 2.0;
                        out.push(Cell { lo: c.lo, hi: mid });
                        out.push(Cell { lo: mid, hi: c.hi });
                    } else {
                        out.push(*c);
                    }
                }
                out
            })
            .collect();
        Ok(TimePartition { cells })
    }

    /// Cells of positive width, as `(index, cell)` pairs.
    pub fn splittable(&self) -> Vec<(usize, usize)> {
        self.cells
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(|(_, c)| !c.is_point()).map(move |(j, _)| (i, j)))
            .collect()
    }

    /// Cell containing `t`; 0 is the anchor and shared boundaries go to the lower cell.
    pub fn lookup(&self, t: f64) -> Result<CellRef> {
        if t == 0.0 {
            return Ok(CellRef::Anchor);
        }
        for (i, row) in self.cells.iter().enumerate() {
            if let Some(j) = row.iter().position(|c| c.contains(t)) {
                return Ok(CellRef::Cell { index: i, cell: j });
            }
        }
        Err(Error::Semantic(format!("time {t} lies outside every cell")))
    }

    /// Index of the parent cell in `parent` that contains cell `(index, cell)`.
    pub fn parent_cell(&self, parent: &TimePartition, index: usize, cell: usize) -> Option<usize> {
        let c = self.cells[index][cell];
        parent.cells.get(index)?.iter().position(|p| c.within(p))
    }

    /// Structural nesting check: every cell lies inside a parent cell and both cover the same set.
    pub fn is_refinement_of(&self, parent: &TimePartition) -> bool {
        if self.cells.len() != parent.cells.len() {
            return false;
        }
        for (i, row) in self.cells.iter().enumerate() {
            if (0..row.len()).any(|j| self.parent_cell(parent, i, j).is_none()) {
                return false;
            }
            if union_of(row) != union_of(&parent.cells[i]) {
                return false;
            }
        }
        true
    }

    /// True iff the cells of each index cover exactly the evidence's time set.
    pub fn covers(&self, omega: &ImpreciseEvidence) -> bool {
        self.cells.len() == omega.len()
            && self
                .cells
                .iter()
                .zip(&omega.entries)
                .all(|(row, (set, _))| union_of(row) == set.intervals())
    }
}

fn union_of(cells: &[Cell]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for c in cells {
        match out.last_mut() {
            Some(last) if c.lo <= last.1 => last.1 = last.1.max(c.hi),
            _ => out.push((c.lo, c.hi)),
        }
    }
    out
}
