//! Checking that tagged data never influences what an observer without
//! access to it can see.
//!
//! Two memories are *blinded-equivalent* when they carry the same tags
//! everywhere and agree on every public word. Running the same commands on
//! both must produce identical observations: public words, tag map, access
//! trace, cycle count and fault.

pub mod oracle;
pub mod templates;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::command::Command;
use crate::controller::{simulate, AccelConfig, SimObservation};
use crate::memory::TaggedMemory;
use crate::tag::TagPolicy;

pub use templates::{Expect, Instance, Template, UnknownTemplate};

pub fn blinded_equivalent(m1: &TaggedMemory, m2: &TaggedMemory) -> bool {
    m1.size() == m2.size()
        && m1
            .words()
            .iter()
            .zip(m2.words())
            .all(|(a, b)| a.tag == b.tag && (a.tag.is_blinded() || a.data == b.data))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NiOutcome {
    Pass,
    /// The first observation field that differed, with where it differed.
    CounterExample {
        field: &'static str,
        detail: String,
    },
    PreconditionViolation(String),
}

impl NiOutcome {
    pub fn is_pass(&self) -> bool {
        matches!(self, NiOutcome::Pass)
    }
}

/// The first field in which two observations differ.
pub fn compare_observations(o1: &SimObservation, o2: &SimObservation) -> Option<(&'static str, String)> {
    let fault_key = |o: &SimObservation| o.fault.as_ref().map(|f| (f.kind, f.cycle, f.command));
    if fault_key(o1) != fault_key(o2) {
        return Some(("fault", format!("{:?} vs {:?}", fault_key(o1), fault_key(o2))));
    }
    if o1.total_cycles != o2.total_cycles {
        return Some(("total_cycles", format!("{} vs {}", o1.total_cycles, o2.total_cycles)));
    }
    if o1.tag_map != o2.tag_map {
        let addr = o1
            .tag_map
            .iter()
            .zip(&o2.tag_map)
            .position(|(a, b)| a != b)
            .unwrap_or(o1.tag_map.len().min(o2.tag_map.len()));
        return Some(("tag_map", format!("addr {addr}")));
    }
    if o1.public_words != o2.public_words {
        let addr = o1
            .public_words
            .iter()
            .zip(&o2.public_words)
            .find(|(a, b)| a != b)
            .map(|((a, _), _)| *a);
        return Some(("public_words", format!("addr {addr:?}")));
    }
    if o1.access_trace != o2.access_trace {
        let e1 = o1.access_trace.entries();
        let e2 = o2.access_trace.entries();
        let at = e1
            .iter()
            .zip(e2)
            .position(|(a, b)| a != b)
            .unwrap_or(e1.len().min(e2.len()));
        return Some(("access_trace", format!("entry {at}")));
    }
    None
}

/// Run `commands` on both memories and compare what an observer sees.
pub fn check_noninterference(
    config: AccelConfig,
    commands: &[Command],
    mem1: &TaggedMemory,
    mem2: &TaggedMemory,
) -> NiOutcome {
    if !blinded_equivalent(mem1, mem2) {
        return NiOutcome::PreconditionViolation("memories are not blinded-equivalent".into());
    }
    let (mut m1, mut m2) = (mem1.clone(), mem2.clone());
    let (o1, _) = simulate(config, commands, &mut m1);
    let (o2, _) = simulate(config, commands, &mut m2);
    match compare_observations(&o1, &o2) {
        None => NiOutcome::Pass,
        Some((field, detail)) => NiOutcome::CounterExample { field, detail },
    }
}

/// A copy of `mem` with the data of every tagged word replaced.
pub fn blind<R: Rng + ?Sized>(mem: &TaggedMemory, rng: &mut R) -> TaggedMemory {
    let mut out = mem.clone();
    for (addr, w) in mem.words().iter().enumerate() {
        if w.tag.is_blinded() {
            let mut v = *w;
            v.data = rng.random();
            out.poke(addr as u64, v).expect("same size");
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrialOutcome {
    Pass,
    CounterExample {
        field: &'static str,
        detail: String,
    },
    /// Observations agreed but the first run did not do what the reference
    /// model predicts.
    OracleMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialResult {
    pub trial: u64,
    pub outcome: TrialOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuzzReport {
    pub template: Template,
    pub seed: u64,
    pub results: Vec<TrialResult>,
}

impl FuzzReport {
    pub fn counterexamples(&self) -> usize {
        self.results
            .iter()
            .filter(|r| matches!(r.outcome, TrialOutcome::CounterExample { .. }))
            .count()
    }

    pub fn oracle_mismatches(&self) -> usize {
        self.results
            .iter()
            .filter(|r| matches!(r.outcome, TrialOutcome::OracleMismatch(_)))
            .count()
    }

    pub fn first_counterexample(&self) -> Option<&TrialResult> {
        self.results
            .iter()
            .find(|r| matches!(r.outcome, TrialOutcome::CounterExample { .. }))
    }

    pub fn is_clean(&self) -> bool {
        self.counterexamples() == 0 && self.oracle_mismatches() == 0
    }

    pub fn summary(&self) -> String {
        format!(
            "template {} seed {} trials {}: {} counterexamples, {} oracle mismatches",
            self.template,
            self.seed,
            self.results.len(),
            self.counterexamples(),
            self.oracle_mismatches()
        )
    }
}

impl fmt::Display for FuzzReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            match &r.outcome {
                TrialOutcome::Pass => writeln!(f, "trial {}: PASS", r.trial)?,
                TrialOutcome::CounterExample { field, detail } => {
                    writeln!(f, "trial {}: FAIL {field} ({detail})", r.trial)?
                }
                TrialOutcome::OracleMismatch(why) => writeln!(f, "trial {}: FAIL oracle ({why})", r.trial)?,
            }
        }
        writeln!(f, "{}", self.summary())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FuzzError {
    #[error("at least one trial is required")]
    NoTrials,
    #[error("at least one job is required")]
    NoJobs,
}

/// The generator for one trial. Trials draw from independent streams of one
/// seed, so a trial's instance does not depend on how trials are split
/// across jobs.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub fn run_trial(template: Template, seed: u64, trial: u64, policy: TagPolicy) -> TrialResult {
    let mut rng = trial_rng(seed, trial);
    let inst = template.instantiate(&mut rng);
    let config = inst.workload.config.with_policy(policy);
    let mem1 = inst.workload.build_memory().expect("generated workloads are valid");
    let mem2 = blind(&mem1, &mut rng);

    let (mut m1, mut m2) = (mem1.clone(), mem2);
    let (o1, _) = simulate(config, &inst.workload.commands, &mut m1);
    let (o2, _) = simulate(config, &inst.workload.commands, &mut m2);
    let outcome = if let Some((field, detail)) = compare_observations(&o1, &o2) {
        TrialOutcome::CounterExample { field, detail }
    } else {
        match (inst.expect, &o1.fault) {
            (Expect::SecurityFault, Some(f)) if f.kind.is_security() => TrialOutcome::Pass,
            (Expect::SecurityFault, other) => {
                TrialOutcome::OracleMismatch(format!("expected a security fault, got {other:?}"))
            }
            (Expect::Memory, Some(f)) => TrialOutcome::OracleMismatch(format!("unexpected fault: {f}")),
            (Expect::Memory, None) => match inst.workload.check_expected(&m1).first() {
                None => TrialOutcome::Pass,
                Some(m) => TrialOutcome::OracleMismatch(format!(
                    "addr {}: expected {:#x}/{} got {:#x}/{}",
                    m.addr, m.expected.data, m.expected.tag, m.actual.data, m.actual.tag
                )),
            },
        }
    };
    TrialResult { trial, outcome }
}

/// Run `trials` randomised non-interference trials of `template`.
pub fn fuzz_noninterference(
    template: Template,
    seed: u64,
    trials: u64,
    jobs: usize,
    policy: TagPolicy,
) -> Result<FuzzReport, FuzzError> {
    if trials == 0 {
        return Err(FuzzError::NoTrials);
    }
    if jobs == 0 {
        return Err(FuzzError::NoJobs);
    }
    let jobs = jobs.min(trials as usize) as u64;
    let mut results: Vec<TrialResult> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                s.spawn(move || {
                    (j..trials)
                        .step_by(jobs as usize)
                        .map(|t| run_trial(template, seed, t, policy))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("fuzz worker panicked"))
            .collect()
    });
    results.sort_by_key(|r| r.trial);
    Ok(FuzzReport {
        template,
        seed,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::TaggedWord;
    use crate::tag::Tag;

    #[test]
    fn equivalence_ignores_tagged_data_only() {
        let mut m1 = TaggedMemory::new(4);
        m1.poke(1, TaggedWord::new(7, Tag::new(2))).unwrap();
        let mut m2 = m1.clone();
        m2.poke(1, TaggedWord::new(9, Tag::new(2))).unwrap();
        assert!(blinded_equivalent(&m1, &m2));
        m2.poke(0, TaggedWord::public(1)).unwrap();
        assert!(!blinded_equivalent(&m1, &m2));
        let mut m3 = m1.clone();
        m3.poke(1, TaggedWord::new(7, Tag::new(3))).unwrap();
        assert!(!blinded_equivalent(&m1, &m3));
    }

    #[test]
    fn precondition_is_checked() {
        let m1 = TaggedMemory::new(2);
        let mut m2 = m1.clone();
        m2.poke(0, TaggedWord::public(5)).unwrap();
        let out = check_noninterference(AccelConfig::new(2), &[], &m1, &m2);
        assert!(matches!(out, NiOutcome::PreconditionViolation(_)));
    }

    #[test]
    fn zero_trials_is_an_error() {
        assert_eq!(
            fuzz_noninterference(Template::PartialWrite, 1, 0, 1, TagPolicy::Enforce),
            Err(FuzzError::NoTrials)
        );
    }

    #[test]
    fn report_does_not_depend_on_jobs() {
        let one = fuzz_noninterference(Template::Matmul(Some(2)), 9, 12, 1, TagPolicy::Enforce).unwrap();
        let four = fuzz_noninterference(Template::Matmul(Some(2)), 9, 12, 4, TagPolicy::Enforce).unwrap();
        assert_eq!(one, four);
        assert!(one.is_clean(), "{one}");
        assert!(one.to_string().ends_with(&format!("{}\n", one.summary())));
    }

    #[test]
    fn template_names_parse() {
        for name in Template::NAMES {
            let t: Template = name.parse().unwrap();
            assert_eq!(t.to_string(), *name);
        }
        assert_eq!("fault".parse::<Template>().unwrap(), Template::FaultInducing);
        assert!("nope".parse::<Template>().is_err());
    }
}
