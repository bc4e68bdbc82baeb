//! The abstraction-refinement loop: abstract, solve, record, split, repeat.

use std::fmt::Write as _;
use std::time::Instant;

use crate::ctmc::{Ctmc, WeightVector, DEFAULT_TRANSIENT_EPS};
use crate::error::{Error, Result};
use crate::evidence::{ImpreciseEvidence, TimePartition};
use crate::imdp::{build, IntervalMdp, TransientBoundCache};
use crate::solver::{compute_bounds, guided_split_targets, reachable_under, BoundsReport, Opt};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefinementMode {
    /// Split only cells reachable under the scheduler attaining the optimistic bound.
    Guided,
    /// Split every cell of positive width.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    /// Wall-clock budget in seconds, checked after each iteration.
    pub time_limit: f64,
    pub max_iters: Option<usize>,
    pub width_target: Option<f64>,
    pub transient_eps: f64,
    pub vi_tol: f64,
    pub mode: RefinementMode,
    pub direction: Opt,
    /// Only used by sampling baselines; the analysis itself is deterministic.
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            time_limit: 600.0,
            max_iters: None,
            width_target: None,
            transient_eps: DEFAULT_TRANSIENT_EPS,
            vi_tol: 1e-9,
            mode: RefinementMode::Guided,
            direction: Opt::Max,
            seed: 0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_limit > 0.0) {
            return Err(Error::Semantic("time limit must be positive".into()));
        }
        if !(self.transient_eps > 0.0) || !(self.vi_tol > 0.0) {
            return Err(Error::Semantic("tolerances must be positive".into()));
        }
        if self.width_target.is_some_and(|w| !(w >= 0.0)) {
            return Err(Error::Semantic("width target must be nonnegative".into()));
        }
        if self.max_iters == Some(0) {
            return Err(Error::Semantic("at least one iteration is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Cumulative wall time at the end of the iteration.
    pub elapsed_s: f64,
    pub lower: f64,
    pub upper: f64,
    /// Cells bisected at the end of this iteration.
    pub splits: usize,
    pub imdp_states: usize,
    pub imdp_actions: usize,
    pub imdp_transitions: usize,
    pub unfold_s: f64,
    pub solve_s: f64,
    /// Outcome of the consistency audit of the repaired scheduler.
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    TimeLimit,
    WidthTarget,
    IterationCap,
    /// No cell of positive width is left to split.
    Converged,
    Cancelled,
}

#[derive(Debug, Clone)]
pub struct AnalysisTrace {
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    pub final_partition: TimePartition,
}

pub const TRACE_HEADER: &str = "iter,elapsed_s,lower,upper,splits,imdp_states,imdp_actions,imdp_transitions,unfold_s,solve_s";

impl AnalysisTrace {
    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("at least one iteration runs")
    }

    /// Best bounds over all iterations; each iteration's pair is sound on its own.
    pub fn bounds(&self) -> (f64, f64) {
        let lower = self.records.iter().map(|r| r.lower).fold(f64::NEG_INFINITY, f64::max);
        let upper = self.records.iter().map(|r| r.upper).fold(f64::INFINITY, f64::min);
        (lower, upper)
    }

    pub fn total_s(&self) -> f64 {
        self.last().elapsed_s
    }

    /// Iterations whose lower bound dropped or upper bound rose by more than `slack`.
    pub fn monotonicity_violations(&self, slack: f64) -> Vec<usize> {
        self.records
            .windows(2)
            .filter(|w| w[1].lower < w[0].lower - slack || w[1].upper > w[0].upper + slack)
            .map(|w| w[1].iter)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.6},{},{},{},{},{},{},{:.6},{:.6}",
                r.iter,
                r.elapsed_s,
                r.lower,
                r.upper,
                r.splits,
                r.imdp_states,
                r.imdp_actions,
                r.imdp_transitions,
                r.unfold_s,
                r.solve_s
            );
        }
        out
    }
}

/// Output of one abstraction-and-solve round.
pub struct Round {
    pub imdp: IntervalMdp,
    pub report: BoundsReport,
    /// Cells the configured mode would split next.
    pub targets: Vec<(usize, usize)>,
    pub unfold_s: f64,
    pub solve_s: f64,
}

/// Stepwise access to the refinement loop.
pub struct Refiner<'a> {
    ctmc: &'a Ctmc,
    omega: &'a ImpreciseEvidence,
    weights: &'a WeightVector,
    config: AnalysisConfig,
    cache: TransientBoundCache,
    partition: TimePartition,
}

impl<'a> Refiner<'a> {
    pub fn new(
        ctmc: &'a Ctmc,
        omega: &'a ImpreciseEvidence,
        weights: &'a WeightVector,
        config: AnalysisConfig,
    ) -> Result<Self> {
        config.validate()?;
        omega.check_against(ctmc)?;
        if weights.len() != ctmc.num_states() {
            return Err(Error::Semantic(format!(
                "{} weights given for {} states",
                weights.len(),
                ctmc.num_states()
            )));
        }
        Ok(Refiner {
            ctmc,
            omega,
            weights,
            partition: TimePartition::coarsest(omega),
            config,
            cache: TransientBoundCache::new(),
        })
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn cache(&self) -> &TransientBoundCache {
        &self.cache
    }

    /// Abstracts and solves the current partition.
    pub fn round(&self) -> Result<Round> {
        let t0 = Instant::now();
        let imdp = build(self.ctmc, self.omega, &self.partition, self.config.transient_eps, Some(&self.cache), true)?;
        let unfold_s = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let report = compute_bounds(&imdp, self.weights, self.config.vi_tol, self.config.direction)?;
        let solve_s = t1.elapsed().as_secs_f64();
        let targets = match self.config.mode {
            RefinementMode::Full => self.partition.splittable(),
            RefinementMode::Guided => {
                let reach = reachable_under(&imdp, &report.bound_scheduler);
                guided_split_targets(&self.partition, &imdp, &reach)
            }
        };
        Ok(Round {
            imdp,
            report,
            targets,
            unfold_s,
            solve_s,
        })
    }

    /// Bisects the given cells.
    pub fn refine(&mut self, targets: &[(usize, usize)]) -> Result<()> {
        self.partition = self.partition.split_cells(targets)?;
        Ok(())
    }
}

/// Runs the loop until a stop condition holds.
pub fn analyze(ctmc: &Ctmc, omega: &ImpreciseEvidence, weights: &WeightVector, config: &AnalysisConfig) -> Result<AnalysisTrace> {
    analyze_with(ctmc, omega, weights, config, |_| true)
}

/// Like [`analyze`]; `keep_going` sees every record and may cancel between iterations.
pub fn analyze_with(
    ctmc: &Ctmc,
    omega: &ImpreciseEvidence,
    weights: &WeightVector,
    config: &AnalysisConfig,
    mut keep_going: impl FnMut(&IterationRecord) -> bool,
) -> Result<AnalysisTrace> {
    let start = Instant::now();
    let mut refiner = Refiner::new(ctmc, omega, weights, config.clone())?;
    let mut records: Vec<IterationRecord> = Vec::new();
    let (mut best_lo, mut best_hi) = (f64::NEG_INFINITY, f64::INFINITY);
    loop {
        let round = refiner.round()?;
        let iter = records.len() + 1;
        best_lo = best_lo.max(round.report.lower);
        best_hi = best_hi.min(round.report.upper);
        let mut record = IterationRecord {
            iter,
            elapsed_s: 0.0,
            lower: round.report.lower,
            upper: round.report.upper,
            splits: 0,
            imdp_states: round.imdp.num_states(),
            imdp_actions: round.imdp.num_actions(),
            imdp_transitions: round.imdp.num_transitions(),
            unfold_s: round.unfold_s,
            solve_s: round.solve_s,
            consistent: round.report.consistent,
        };
        let elapsed = start.elapsed().as_secs_f64();
        let stop = if elapsed >= config.time_limit {
            Some(StopReason::TimeLimit)
        } else if config.width_target.is_some_and(|t| best_hi - best_lo <= t) {
            Some(StopReason::WidthTarget)
        } else if config.max_iters.is_some_and(|m| iter >= m) {
            Some(StopReason::IterationCap)
        } else if round.targets.is_empty() {
            Some(StopReason::Converged)
        } else {
            None
        };
        if stop.is_none() {
            record.splits = round.targets.len();
            refiner.refine(&round.targets)?;
        }
        record.elapsed_s = start.elapsed().as_secs_f64();
        if let Some(prev) = records.last() {
            if record.elapsed_s <= prev.elapsed_s {
                record.elapsed_s = prev.elapsed_s + 1e-9;
            }
        }
        let go_on = keep_going(&record);
        records.push(record);
        let stop = match (stop, go_on) {
            (Some(s), _) => s,
            (None, false) => StopReason::Cancelled,
            (None, true) => continue,
        };
        return Ok(AnalysisTrace {
            records,
            stop,
            final_partition: refiner.partition.clone(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INVENT: &str = include_str!("../../../fixtures/invent.ctmc");
    const INVENT1: &str = include_str!("../../../fixtures/invent-1.evidence");

    fn setup() -> (Ctmc, ImpreciseEvidence, WeightVector) {
        let c = Ctmc::parse(INVENT).unwrap();
        let omega = ImpreciseEvidence::parse(INVENT1).unwrap();
        let w = c.weight_from_property(&[true, false, false], 0.1, 1e-10);
        (c, omega, w)
    }

    #[test]
    fn precise_evidence_single_iteration() {
        let (c, _, w) = setup();
        let omega = ImpreciseEvidence::parse("evidence\nobs !empty @ 0.5\nobs empty @ 1.5\n").unwrap();
        let trace = analyze(&c, &omega, &w, &AnalysisConfig::default()).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.stop, StopReason::Converged);
        let r = trace.last();
        assert!((r.upper - r.lower).abs() < 1e-9);
    }

    #[test]
    fn iteration_cap_and_csv() {
        let (c, omega, w) = setup();
        let config = AnalysisConfig {
            max_iters: Some(3),
            ..Default::default()
        };
        let trace = analyze(&c, &omega, &w, &config).unwrap();
        assert_eq!(trace.records.len(), 3);
        assert_eq!(trace.stop, StopReason::IterationCap);
        assert_eq!(trace.last().splits, 0);
        assert!(trace.records.windows(2).all(|p| p[1].elapsed_s > p[0].elapsed_s));
        assert!(trace.records.iter().all(|r| r.consistent && r.lower <= r.upper));
        let csv = trace.to_csv();
        assert!(csv.starts_with(TRACE_HEADER));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn guided_is_smaller_than_full() {
        let (c, omega, w) = setup();
        let run = |mode| {
            let config = AnalysisConfig {
                max_iters: Some(3),
                mode,
                ..Default::default()
            };
            analyze(&c, &omega, &w, &config).unwrap()
        };
        let guided = run(RefinementMode::Guided);
        let full = run(RefinementMode::Full);
        assert!(guided.last().imdp_states < full.last().imdp_states);
        let (gl, gu) = guided.bounds();
        let (fl, fu) = full.bounds();
        assert!(gl <= fu + 1e-9 && fl <= gu + 1e-9);
    }

    #[test]
    fn cancellation() {
        let (c, omega, w) = setup();
        let trace = analyze_with(&c, &omega, &w, &AnalysisConfig::default(), |r| r.iter < 2).unwrap();
        assert_eq!(trace.records.len(), 2);
        assert_eq!(trace.stop, StopReason::Cancelled);
    }

    #[test]
    fn toy_model_converges_in_full_mode() {
        let c = Ctmc::parse("ctmc\nstate a up\nstate b\ninit a\nrate a b 1\nrate b a 2\n").unwrap();
        let omega = ImpreciseEvidence::parse("evidence\nobs up @ 0.5..1\nobs true @ 2..2.5\n").unwrap();
        let w = WeightVector::new(vec![1.0, 0.0]).unwrap();
        let config = AnalysisConfig {
            mode: RefinementMode::Full,
            width_target: Some(1e-3),
            max_iters: Some(12),
            ..Default::default()
        };
        let trace = analyze(&c, &omega, &w, &config).unwrap();
        let (lo, hi) = trace.bounds();
        assert!(hi - lo <= 1e-3, "width {} after {} iterations", hi - lo, trace.records.len());
    }
}
