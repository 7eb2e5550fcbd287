//! Seeded random exploration of models.
//!
//! Each test starts from the root model's constructor and then repeatedly
//! picks one enabled `(instance, transition)` pair across all live
//! instances, with probability proportional to transition weight. A test
//! ends when nothing is enabled, when the step budget is spent, or on the
//! first failure.

pub mod coverage;
pub mod dot;
pub mod trace;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::efsm::{instantiate, IdAllocator, Launched, ModelInstance, ModelSpec, StepKind, Vars};
use crate::portman::PortRange;
use crate::rng::{derive_test_seed, SeededRng, EXPLORER_STREAM};
use crate::sut::BackendKind;

pub use coverage::{Coverage, ModelCoverage, ModelShape};
pub use dot::export_dot;
pub use trace::{parse_traces, Outcome, StepRecord, Trace, TraceParseError, Verdict, INIT_LABEL};

/// Suite parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub num_tests: u64,
    pub max_steps: usize,
    pub backend: BackendKind,
    pub abort_on_first_failure: bool,
    /// Every trace of the suite is written here, in test order.
    pub trace_path: Option<PathBuf>,
    /// Listen ports handed out on the real backend.
    pub port_range: Option<PortRange>,
}

impl SuiteConfig {
    pub const DEFAULT_TESTS: u64 = 100;
    pub const DEFAULT_MAX_STEPS: usize = 100;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            num_tests: Self::DEFAULT_TESTS,
            max_steps: Self::DEFAULT_MAX_STEPS,
            backend: BackendKind::Sim,
            abort_on_first_failure: false,
            trace_path: None,
            port_range: None,
        }
    }

    pub fn tests(mut self, n: u64) -> Self {
        self.num_tests = n;
        self
    }

    pub fn max_steps(mut self, n: usize) -> Self {
        self.max_steps = n;
        self
    }

    pub fn backend(mut self, backend: BackendKind) -> Self {
        self.backend = backend;
        if backend == BackendKind::Real && self.port_range.is_none() {
            self.port_range = Some(PortRange::default());
        }
        self
    }

    pub fn validate(&self) -> Result<(), SuiteError> {
        if self.num_tests == 0 {
            return Err(SuiteError::Config(
                "number of tests must be at least 1".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(SuiteError::Config("max steps must be at least 1".into()));
        }
        if self.backend == BackendKind::Real && self.port_range.is_none_or(|r| r.is_empty()) {
            return Err(SuiteError::Config(
                "the real backend needs a non-empty port range".into(),
            ));
        }
        Ok(())
    }
}

/// Problems that stop a suite, as opposed to failing tests.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SuiteError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Per-test world the models act on.
pub trait Environment {
    /// Called before every scheduling decision.
    fn begin_step(&mut self) {}
    /// Called once after every fired transition.
    fn end_step(&mut self) {}
    /// Force-closes everything the test opened.
    fn teardown(&mut self) {}
    /// Extra context for failure reports; not part of the trace.
    fn diagnostics(&self) -> Vec<String> {
        Vec::new()
    }
}

impl Environment for () {}

/// Builds a fresh environment for every test.
pub trait EnvFactory<E> {
    fn backend(&self) -> BackendKind;
    fn create(&mut self, test_index: u64, test_seed: u64) -> Result<E, SuiteError>;
    /// Takes the environment back after teardown.
    fn recycle(&mut self, env: E) {
        drop(env);
    }
}

/// Factory for environments that need nothing per test.
#[derive(Debug, Clone, Copy)]
pub struct DefaultFactory(pub BackendKind);

impl<E: Environment + Default> EnvFactory<E> for DefaultFactory {
    fn backend(&self) -> BackendKind {
        self.0
    }

    fn create(&mut self, _: u64, _: u64) -> Result<E, SuiteError> {
        Ok(E::default())
    }
}

/// Result of one test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestRun {
    pub trace: Trace,
    pub diagnostics: Vec<String>,
}

/// Aggregate over a suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub seed: u64,
    pub backend: BackendKind,
    pub tests_run: u64,
    pub passed: u64,
    pub failed: u64,
    pub total_steps: u64,
    pub max_steps_in_a_test: usize,
    pub failures: Vec<TestRun>,
    pub coverage: Coverage,
    pub elapsed: Duration,
    pub aborted_early: bool,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "suite seed={} backend={}: {} tests, {} passed, {} failed, {} steps ({:.2}s){}",
            self.seed,
            self.backend,
            self.tests_run,
            self.passed,
            self.failed,
            self.total_steps,
            self.elapsed.as_secs_f64(),
            if self.aborted_early {
                " [stopped at first failure]"
            } else {
                ""
            }
        )?;
        for m in self.coverage.models() {
            write!(
                f,
                "  {:<20} states {:>3}/{:<3} ({:5.1}%)  transitions {:>3}/{:<3} ({:5.1}%)",
                m.shape.name,
                m.states_covered(),
                m.shape.states.len(),
                m.state_percent(),
                m.transitions_covered(),
                m.shape.transitions.len(),
                m.transition_percent()
            )?;
            let missing: Vec<String> = m
                .unvisited_states()
                .into_iter()
                .map(str::to_owned)
                .chain(m.unfired_transitions())
                .collect();
            if !missing.is_empty() {
                write!(f, "  missing: {}", missing.join(", "))?;
            }
            writeln!(f)?;
        }
        for run in self.failures.iter().take(5) {
            let step = match &run.trace.verdict {
                Verdict::Fail {
                    failing_step: Some(s),
                    ..
                } => format!(" at step {s}"),
                _ => String::new(),
            };
            let msg = match &run.trace.verdict {
                Verdict::Fail { message, .. } => message.as_str(),
                Verdict::Pass => "",
            };
            writeln!(f, "  FAIL test {}{step}: {msg}", run.trace.test_index)?;
            for d in &run.diagnostics {
                writeln!(f, "    {d}")?;
            }
        }
        if self.failures.len() > 5 {
            writeln!(f, "  ... {} more failures", self.failures.len() - 5)?;
        }
        Ok(())
    }
}

/// All enabled `(instance position, transition index)` pairs with their
/// weights, in instance order then declaration order.
pub fn enabled_pairs<E>(instances: &[ModelInstance<E>], env: &E) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for (pos, inst) in instances.iter().enumerate() {
        for t in inst.enabled_indices(env) {
            pairs.push((pos, t, inst.spec().transitions()[t].transition_weight()));
        }
    }
    pairs
}

/// Picks one enabled pair, weight-proportionally. Always consumes exactly
/// one draw from `rng`, even when nothing is enabled.
pub fn pick_next<E>(
    instances: &[ModelInstance<E>],
    env: &E,
    rng: &mut SeededRng,
) -> Option<(usize, usize)> {
    let u = rng.next_f64();
    let pairs = enabled_pairs(instances, env);
    let total: f64 = pairs.iter().map(|p| p.2).sum();
    let mut threshold = u * total;
    for &(pos, t, w) in &pairs {
        if threshold < w {
            return Some((pos, t));
        }
        threshold -= w;
    }
    // Rounding can leave a sliver past the last weight.
    pairs.last().map(|&(pos, t, _)| (pos, t))
}

struct TestState<'a, E> {
    records: Vec<StepRecord>,
    instances: Vec<ModelInstance<E>>,
    shapes: &'a mut BTreeMap<String, ModelShape>,
}

impl<E> TestState<'_, E> {
    fn push(&mut self, instance: u32, model: &str, label: &str, outcome: Outcome, state: &str) {
        let index = self.records.len() as u64;
        self.records.push(StepRecord {
            index,
            instance,
            model: model.to_owned(),
            label: label.to_owned(),
            outcome,
            state: state.to_owned(),
        });
    }

    fn adopt(&mut self, launched: Vec<Launched<E>>) {
        for l in launched {
            let inst = l.instance;
            let outcome = match l.raised {
                Some(k) => Outcome::Raised(k),
                None => Outcome::None,
            };
            let spec = inst.spec();
            if !self.shapes.contains_key(spec.name()) {
                self.shapes
                    .insert(spec.name().to_owned(), ModelShape::of(spec));
            }
            let (id, model, state) = (
                inst.id().0,
                spec.name().to_owned(),
                inst.current_state().to_string(),
            );
            self.push(id, &model, INIT_LABEL, outcome, &state);
            if inst.is_alive() {
                self.instances.push(inst);
            }
        }
    }
}

fn fail(message: impl AsRef<str>, records: &[StepRecord]) -> Verdict {
    Verdict::Fail {
        message: trace::one_line(message.as_ref()),
        failing_step: records.last().map(|r| r.index),
    }
}

fn execute_test<E: Environment, F: EnvFactory<E>>(
    spec: &ModelSpec<E>,
    config: &SuiteConfig,
    factory: &mut F,
    test_index: u64,
    shapes: &mut BTreeMap<String, ModelShape>,
) -> Result<TestRun, SuiteError> {
    let test_seed = derive_test_seed(config.seed, test_index);
    let mut env = factory.create(test_index, test_seed)?;
    let mut rng = SeededRng::with_stream(test_seed, EXPLORER_STREAM);
    let mut ids = IdAllocator::new();
    let mut st = TestState {
        records: Vec::new(),
        instances: Vec::new(),
        shapes,
    };

    env.begin_step();
    let verdict = match instantiate(spec, Vars::new(), &mut env, &mut rng, &mut ids) {
        Ok(launched) => {
            st.adopt(launched);
            run_steps(&mut st, &mut env, &mut rng, &mut ids, config.max_steps)
        }
        Err(crate::efsm::ActionError::Backend(m)) => Err(m),
        Err(crate::efsm::ActionError::Watchdog(m)) => Ok(fail(format!("watchdog: {m}"), &[])),
        Err(e) => Ok(fail(e.to_string(), &[])),
    };
    let diagnostics = env.diagnostics();
    env.teardown();
    factory.recycle(env);
    let verdict = verdict.map_err(SuiteError::Backend)?;
    Ok(TestRun {
        trace: Trace {
            suite_seed: config.seed,
            test_index,
            backend: factory.backend(),
            records: st.records,
            verdict,
        },
        diagnostics,
    })
}

fn run_steps<E: Environment>(
    st: &mut TestState<'_, E>,
    env: &mut E,
    rng: &mut SeededRng,
    ids: &mut IdAllocator,
    max_steps: usize,
) -> Result<Verdict, String> {
    for _ in 0..max_steps {
        env.begin_step();
        let Some((pos, t)) = pick_next(&st.instances, env, rng) else {
            break;
        };
        let outcome = st.instances[pos].fire(t, env, rng, ids);
        env.end_step();
        let inst = &st.instances[pos];
        let id = inst.id().0;
        let model = inst.spec().name().to_owned();
        let label = inst.spec().transitions()[t].label().to_owned();
        let state = inst.current_state().to_string();
        let alive = inst.is_alive();
        let recorded = match (outcome.raised, &outcome.tag) {
            (Some(k), _) => Outcome::Raised(k),
            (None, Some(tag)) => Outcome::Tag(tag.to_string()),
            (None, None) => Outcome::None,
        };
        match outcome.kind {
            StepKind::Completed(_) => {
                st.adopt(outcome.launched);
                st.push(id, &model, &label, recorded, &state);
                if !alive {
                    st.instances.remove(pos);
                }
            }
            StepKind::Violation(msg) => {
                st.push(id, &model, &label, recorded, &state);
                return Ok(fail(msg, &st.records));
            }
            StepKind::Watchdog(msg) => {
                st.push(id, &model, &label, recorded, &state);
                return Ok(fail(format!("watchdog: {msg}"), &st.records));
            }
            StepKind::BackendFailure(msg) => return Err(msg),
        }
    }
    Ok(Verdict::Pass)
}

/// Runs test `test_index` of the suite described by `config` on its own.
pub fn run_test<E: Environment, F: EnvFactory<E>>(
    spec: &ModelSpec<E>,
    config: &SuiteConfig,
    factory: &mut F,
    test_index: u64,
) -> Result<TestRun, SuiteError> {
    config.validate()?;
    let mut shapes = BTreeMap::new();
    execute_test(spec, config, factory, test_index, &mut shapes)
}

/// Runs the whole suite.
pub fn run_suite<E: Environment, F: EnvFactory<E>>(
    spec: &ModelSpec<E>,
    config: &SuiteConfig,
    factory: &mut F,
) -> Result<SuiteReport, SuiteError> {
    config.validate()?;
    if factory.backend() != config.backend {
        return Err(SuiteError::Config(format!(
            "suite configured for {} but the environment is {}",
            config.backend,
            factory.backend()
        )));
    }
    let started = Instant::now();
    let mut out = match &config.trace_path {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| {
            SuiteError::Io(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => None,
    };
    let mut shapes = BTreeMap::new();
    shapes.insert(spec.name().to_owned(), ModelShape::of(spec));
    let mut coverage = Coverage::new();
    let mut report = SuiteReport {
        seed: config.seed,
        backend: config.backend,
        tests_run: 0,
        passed: 0,
        failed: 0,
        total_steps: 0,
        max_steps_in_a_test: 0,
        failures: Vec::new(),
        coverage: Coverage::new(),
        elapsed: Duration::ZERO,
        aborted_early: false,
    };
    for i in 0..config.num_tests {
        let run = execute_test(spec, config, factory, i, &mut shapes)?;
        for shape in shapes.values() {
            if coverage.model(&shape.name).is_none() {
                coverage.declare(shape.clone());
            }
        }
        coverage.add_trace(&run.trace);
        if let Some(w) = out.as_mut() {
            write!(w, "{}", run.trace).map_err(|e| SuiteError::Io(e.to_string()))?;
        }
        let steps = run.trace.step_count();
        report.tests_run += 1;
        report.total_steps += steps as u64;
        report.max_steps_in_a_test = report.max_steps_in_a_test.max(steps);
        if run.trace.verdict.is_pass() {
            report.passed += 1;
        } else {
            report.failed += 1;
            report.failures.push(run);
            if config.abort_on_first_failure {
                report.aborted_early = i + 1 < config.num_tests;
                break;
            }
        }
    }
    if let Some(mut w) = out {
        w.flush().map_err(|e| SuiteError::Io(e.to_string()))?;
    }
    report.coverage = coverage;
    report.elapsed = started.elapsed();
    Ok(report)
}

/// First point where a replay departed from its recording.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("replay diverged at step {step}: expected `{expected}`, got `{actual}`")]
pub struct DivergenceError {
    pub step: u64,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    Suite(#[from] SuiteError),
}

/// Compares two traces record by record, then by verdict.
pub fn compare_traces(expected: &Trace, actual: &Trace) -> Result<(), DivergenceError> {
    let n = expected.records.len().max(actual.records.len());
    let show = |r: Option<&StepRecord>| r.map_or("<end of trace>".to_owned(), |r| r.to_string());
    for i in 0..n {
        let (e, a) = (expected.records.get(i), actual.records.get(i));
        if e != a {
            return Err(DivergenceError {
                step: i as u64,
                expected: show(e),
                actual: show(a),
            });
        }
    }
    if expected.verdict != actual.verdict {
        return Err(DivergenceError {
            step: n as u64,
            expected: expected.verdict.to_string(),
            actual: actual.verdict.to_string(),
        });
    }
    Ok(())
}

/// Re-executes the test recorded in `trace` with the seed from `config`
/// and checks every step against the recording. On the real backend the
/// comparison is advisory: timing can legitimately change outcomes.
pub fn replay<E: Environment, F: EnvFactory<E>>(
    trace: &Trace,
    spec: &ModelSpec<E>,
    config: &SuiteConfig,
    factory: &mut F,
) -> Result<TestRun, ReplayError> {
    let run = run_test(spec, config, factory, trace.test_index)?;
    compare_traces(trace, &run.trace)?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efsm::{define_model, Transition, Value};

    #[test]
    fn pick_next_single_pair_and_determinism() {
        let spec = define_model::<()>(
            "one",
            &["a"],
            "a",
            vec![Transition::new("a", "only", "a")],
            None,
        )
        .unwrap();
        let mut ids = IdAllocator::new();
        let mut rng = SeededRng::new(3);
        let inst = instantiate(&spec, Vars::new(), &mut (), &mut rng, &mut ids)
            .unwrap()
            .pop()
            .unwrap()
            .instance;
        let insts = vec![inst];
        for _ in 0..100 {
            assert_eq!(pick_next(&insts, &(), &mut rng), Some((0, 0)));
        }
        let mut r1 = SeededRng::new(9);
        let mut r2 = SeededRng::new(9);
        let before = r1.draws();
        assert_eq!(
            pick_next(&insts, &(), &mut r1),
            pick_next(&insts, &(), &mut r2)
        );
        assert_eq!(r1.draws(), before + 1);
        let mut r3 = SeededRng::new(9);
        assert_eq!(pick_next::<()>(&[], &(), &mut r3), None);
        assert_eq!(r3.draws(), 1);
    }

    #[test]
    fn empty_spec_suite_passes_with_no_steps() {
        let spec = define_model::<()>("empty", &["s0"], "s0", vec![], None).unwrap();
        let config = SuiteConfig::new(1).tests(5);
        let report = run_suite(&spec, &config, &mut DefaultFactory(BackendKind::Sim)).unwrap();
        assert_eq!((report.passed, report.failed), (5, 0));
        assert_eq!(report.total_steps, 0);
        for i in 0..5 {
            let run = run_test(&spec, &config, &mut DefaultFactory(BackendKind::Sim), i).unwrap();
            assert_eq!(run.trace.step_count(), 0);
        }
    }

    #[test]
    fn budget_and_failure_reporting() {
        let spec = define_model::<()>(
            "loop",
            &["a"],
            "a",
            vec![Transition::new("a", "tick", "a").action(|ctx| {
                let n = ctx.vars.int_or_zero("n") + 1;
                ctx.vars.set("n", Value::Int(n));
                crate::efsm::check(n < 30, || format!("counter reached {n}"))
            })],
            None,
        )
        .unwrap();
        let mut f = DefaultFactory(BackendKind::Sim);
        let ok = run_test(&spec, &SuiteConfig::new(0).max_steps(10), &mut f, 0).unwrap();
        assert_eq!(ok.trace.step_count(), 10);
        assert!(ok.trace.verdict.is_pass());
        let bad = run_test(&spec, &SuiteConfig::new(0).max_steps(50), &mut f, 0).unwrap();
        assert_eq!(bad.trace.step_count(), 30);
        assert_eq!(
            bad.trace.verdict,
            Verdict::Fail {
                message: "counter reached 30".into(),
                failing_step: Some(30),
            }
        );
    }

    #[test]
    fn config_validation() {
        assert!(SuiteConfig::new(0).tests(0).validate().is_err());
        assert!(SuiteConfig::new(0).max_steps(0).validate().is_err());
        let mut real = SuiteConfig::new(0).backend(BackendKind::Real);
        assert!(real.validate().is_ok());
        real.port_range = None;
        assert!(real.validate().is_err());
    }
}
