//! Extended finite-state machine models.
//!
//! A [`ModelSpec`] declares states and guarded transitions. Each transition
//! carries an action that runs against an environment `E` (for the socket
//! models, the API under test plus the oracle ledger). An action may:
//!
//! * raise an [`ErrorKind`], which redirects the transition to the state
//!   mapped in its exception overrides (or fails the test when unmapped);
//! * emit an [`OutcomeTag`], which selects among declared outcome branches;
//! * launch child models, whose constructors run to completion before the
//!   action continues.
//!
//! Guards are pure: they read instance variables and the environment but
//! never change either, so the set of enabled transitions is repeatable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::rng::SeededRng;
use crate::sut::{ConnId, ErrorKind, SelectionKey, SelectorId, ServerId, SutError};

/// Name of a state, unique within its model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(String);

impl StateId {
    pub fn new(name: impl Into<String>) -> Self {
        StateId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StateId {
    fn from(s: &str) -> Self {
        StateId(s.to_owned())
    }
}

/// Label an action attaches to its result to pick an outcome branch.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutcomeTag(String);

impl OutcomeTag {
    pub fn new(name: impl Into<String>) -> Self {
        OutcomeTag(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for OutcomeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for OutcomeTag {
    fn from(s: &str) -> Self {
        OutcomeTag(s.to_owned())
    }
}

/// Identifier of a model instance within one test, starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceId(pub u32);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Scalar or handle stored in an instance variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Text(String),
    Port(u16),
    Server(ServerId),
    Conn(ConnId),
    Selector(SelectorId),
    Key(SelectionKey),
}

/// Instance-local variable store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vars(BTreeMap<String, Value>);

macro_rules! typed_getter {
    ($fn:ident, $variant:ident, $ty:ty) => {
        pub fn $fn(&self, name: &str) -> Result<$ty, ActionError> {
            match self.0.get(name) {
                Some(Value::$variant(v)) => Ok(v.clone()),
                Some(other) => Err(ActionError::Violation(format!(
                    "variable `{name}` holds {other:?}, expected {}",
                    stringify!($variant)
                ))),
                None => Err(ActionError::Violation(format!("missing variable `{name}`"))),
            }
        }
    };
}

impl Vars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: Value) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: Value) {
        self.0.insert(name.to_owned(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Value> {
        self.0.remove(name)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Integer value, or 0 when unset. Handy in guards.
    pub fn int_or_zero(&self, name: &str) -> i64 {
        match self.0.get(name) {
            Some(Value::Int(v)) => *v,
            _ => 0,
        }
    }

    pub fn flag(&self, name: &str) -> bool {
        matches!(self.0.get(name), Some(Value::Bool(true)))
    }

    typed_getter!(int, Int, i64);
    typed_getter!(boolean, Bool, bool);
    typed_getter!(text, Text, String);
    typed_getter!(port, Port, u16);
    typed_getter!(server, Server, ServerId);
    typed_getter!(conn, Conn, ConnId);
    typed_getter!(selector, Selector, SelectorId);
    typed_getter!(key, Key, SelectionKey);
}

/// Why an action did not complete normally.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionError {
    /// The SUT raised an API exception.
    #[error("{kind} raised: {detail}")]
    Raised { kind: ErrorKind, detail: String },
    /// An assertion failed.
    #[error("{0}")]
    Violation(String),
    /// A blocking call could not complete.
    #[error("watchdog: {0}")]
    Watchdog(String),
    /// The backend is broken; aborts the whole suite.
    #[error("backend failure: {0}")]
    Backend(String),
}

impl From<SutError> for ActionError {
    fn from(e: SutError) -> Self {
        match e {
            SutError::Raised { kind, detail } => ActionError::Raised { kind, detail },
            SutError::Watchdog(m) => ActionError::Watchdog(m),
            SutError::Backend(m) => ActionError::Backend(m),
        }
    }
}

pub type ActionResult = Result<(), ActionError>;

/// Fails the current action with a property violation unless `cond` holds.
pub fn check(cond: bool, msg: impl FnOnce() -> String) -> ActionResult {
    if cond {
        Ok(())
    } else {
        Err(ActionError::Violation(msg()))
    }
}

pub type Action<E> = Arc<dyn Fn(&mut ActionCtx<'_, E>) -> ActionResult>;
pub type Guard<E> = Arc<dyn Fn(&Vars, &E) -> bool>;

/// Hands out instance ids in launch order.
#[derive(Debug, Clone, Default)]
pub struct IdAllocator {
    next: u32,
}

impl IdAllocator {
    pub fn new() -> Self {
        Self { next: 1 }
    }

    fn next(&mut self) -> InstanceId {
        if self.next == 0 {
            self.next = 1;
        }
        let id = InstanceId(self.next);
        self.next += 1;
        id
    }
}

/// A child created by a launch, with the exception (if any) that
/// redirected its constructor.
pub struct Launched<E> {
    pub instance: ModelInstance<E>,
    pub raised: Option<ErrorKind>,
}

/// What an action sees while it runs.
pub struct ActionCtx<'a, E> {
    pub vars: &'a mut Vars,
    pub env: &'a mut E,
    pub rng: &'a mut SeededRng,
    instance: InstanceId,
    tag: Option<OutcomeTag>,
    launched: &'a mut Vec<Launched<E>>,
    ids: &'a mut IdAllocator,
}

impl<'a, E> ActionCtx<'a, E> {
    pub fn instance_id(&self) -> InstanceId {
        self.instance
    }

    /// Selects the outcome branch of the running transition.
    pub fn emit(&mut self, tag: impl Into<OutcomeTag>) {
        self.tag = Some(tag.into());
    }

    /// True with `probability`, one draw from the test generator.
    pub fn maybe(&mut self, probability: f64) -> bool {
        self.rng.maybe(probability)
    }

    /// Starts a child model. Its constructor runs now, so its effects are
    /// visible to the rest of this action; the child is scheduled once
    /// this step completes.
    pub fn launch(&mut self, spec: &ModelSpec<E>, args: Vars) -> Result<InstanceId, ActionError> {
        instantiate_into(spec, args, self.env, self.rng, self.ids, self.launched)
    }
}

/// One guarded transition.
pub struct Transition<E> {
    source: StateId,
    label: String,
    target: StateId,
    guard: Option<Guard<E>>,
    action: Option<Action<E>>,
    weight: f64,
    overrides: BTreeMap<ErrorKind, StateId>,
    branches: BTreeMap<OutcomeTag, StateId>,
    emits: BTreeSet<OutcomeTag>,
}

impl<E> Clone for Transition<E> {
    fn clone(&self) -> Self {
        Self {
            source: self.source.clone(),
            label: self.label.clone(),
            target: self.target.clone(),
            guard: self.guard.clone(),
            action: self.action.clone(),
            weight: self.weight,
            overrides: self.overrides.clone(),
            branches: self.branches.clone(),
            emits: self.emits.clone(),
        }
    }
}

impl<E> fmt::Debug for Transition<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Transition")
            .field("source", &self.source)
            .field("label", &self.label)
            .field("target", &self.target)
            .field("weight", &self.weight)
            .field("overrides", &self.overrides)
            .field("branches", &self.branches)
            .finish()
    }
}

impl<E> Transition<E> {
    pub fn new(source: impl Into<StateId>, label: &str, target: impl Into<StateId>) -> Self {
        Self {
            source: source.into(),
            label: label.to_owned(),
            target: target.into(),
            guard: None,
            action: None,
            weight: 1.0,
            overrides: BTreeMap::new(),
            branches: BTreeMap::new(),
            emits: BTreeSet::new(),
        }
    }

    pub fn action(mut self, f: impl Fn(&mut ActionCtx<'_, E>) -> ActionResult + 'static) -> Self {
        self.action = Some(Arc::new(f));
        self
    }

    pub fn guard(mut self, f: impl Fn(&Vars, &E) -> bool + 'static) -> Self {
        self.guard = Some(Arc::new(f));
        self
    }

    pub fn weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    /// Redirects the transition to `target` when the action raises `kind`.
    pub fn on_error(mut self, kind: ErrorKind, target: impl Into<StateId>) -> Self {
        self.overrides.insert(kind, target.into());
        self
    }

    /// Declares that the action may emit `tag`.
    pub fn emits(mut self, tag: impl Into<OutcomeTag>) -> Self {
        self.emits.insert(tag.into());
        self
    }

    /// Declares `tag` and routes it to `target`.
    pub fn branch(mut self, tag: impl Into<OutcomeTag>, target: impl Into<StateId>) -> Self {
        let tag = tag.into();
        self.emits.insert(tag.clone());
        self.branches.insert(tag, target.into());
        self
    }

    pub fn source(&self) -> &StateId {
        &self.source
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn target(&self) -> &StateId {
        &self.target
    }

    pub fn transition_weight(&self) -> f64 {
        self.weight
    }

    pub fn overrides(&self) -> &BTreeMap<ErrorKind, StateId> {
        &self.overrides
    }

    pub fn branches(&self) -> &BTreeMap<OutcomeTag, StateId> {
        &self.branches
    }

    pub fn declared_tags(&self) -> &BTreeSet<OutcomeTag> {
        &self.emits
    }

    pub fn is_enabled(&self, vars: &Vars, env: &E) -> bool {
        self.guard.as_ref().is_none_or(|g| g(vars, env))
    }
}

/// Structural problems found when a model is defined.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("model `{model}`: {context} refers to undeclared state `{state}`")]
    Dangling {
        model: String,
        state: String,
        context: String,
    },
    #[error("model `{model}`: duplicate transition `{label}` from `{source_state}`")]
    DuplicateLabel {
        model: String,
        source_state: String,
        label: String,
    },
    #[error("model `{model}`: transition `{label}` has non-positive weight {weight}")]
    NonPositiveWeight {
        model: String,
        label: String,
        weight: String,
    },
    #[error("model `{model}`: transition `{label}` emits `{tag}` without a branch for it")]
    UncoveredOutcome {
        model: String,
        label: String,
        tag: String,
    },
    #[error("model `{model}`: state `{state}` declared twice")]
    DuplicateState { model: String, state: String },
    #[error("invalid name `{0}`: names must be non-empty and use only [A-Za-z0-9_.:-]")]
    InvalidName(String),
}

/// Names appear in space-separated trace files.
pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ':'))
}

struct SpecInner<E> {
    name: String,
    states: Vec<StateId>,
    initial: usize,
    transitions: Vec<Transition<E>>,
    /// Per state index: transition indices in declaration order.
    outgoing: Vec<Vec<usize>>,
    /// Per transition: (source, target, override targets, branch targets).
    targets: Vec<ResolvedTargets>,
    constructor: Option<Action<E>>,
    constructor_overrides: BTreeMap<ErrorKind, usize>,
}

struct ResolvedTargets {
    target: usize,
    overrides: BTreeMap<ErrorKind, usize>,
    branches: BTreeMap<OutcomeTag, usize>,
}

/// A validated model definition. Cheap to clone.
pub struct ModelSpec<E> {
    inner: Arc<SpecInner<E>>,
}

impl<E> Clone for ModelSpec<E> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<E> fmt::Debug for ModelSpec<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.inner.name)
            .field("states", &self.inner.states)
            .field("transitions", &self.inner.transitions)
            .finish()
    }
}

/// Incremental construction of a [`ModelSpec`].
pub struct ModelBuilder<E> {
    name: String,
    states: Vec<StateId>,
    initial: Option<StateId>,
    transitions: Vec<Transition<E>>,
    constructor: Option<Action<E>>,
    constructor_overrides: BTreeMap<ErrorKind, StateId>,
}

impl<E> ModelBuilder<E> {
    pub fn state(mut self, name: impl Into<StateId>) -> Self {
        self.states.push(name.into());
        self
    }

    pub fn states<S: Into<StateId>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.states.extend(names.into_iter().map(Into::into));
        self
    }

    /// Defaults to the first declared state.
    pub fn initial(mut self, name: impl Into<StateId>) -> Self {
        self.initial = Some(name.into());
        self
    }

    pub fn transition(mut self, t: Transition<E>) -> Self {
        self.transitions.push(t);
        self
    }

    pub fn constructor(
        mut self,
        f: impl Fn(&mut ActionCtx<'_, E>) -> ActionResult + 'static,
    ) -> Self {
        self.constructor = Some(Arc::new(f));
        self
    }

    /// Start in `state` instead of the initial state when the constructor
    /// raises `kind`.
    pub fn constructor_on_error(mut self, kind: ErrorKind, state: impl Into<StateId>) -> Self {
        self.constructor_overrides.insert(kind, state.into());
        self
    }

    pub fn build(self) -> Result<ModelSpec<E>, SpecError> {
        let model = self.name.clone();
        if !is_valid_name(&model) {
            return Err(SpecError::InvalidName(model));
        }
        let mut index = BTreeMap::new();
        for (i, s) in self.states.iter().enumerate() {
            if !is_valid_name(s.as_str()) {
                return Err(SpecError::InvalidName(s.to_string()));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(SpecError::DuplicateState {
                    model,
                    state: s.to_string(),
                });
            }
        }
        let resolve = |s: &StateId, context: String| {
            index.get(s).copied().ok_or_else(|| SpecError::Dangling {
                model: model.clone(),
                state: s.to_string(),
                context,
            })
        };
        let initial = match &self.initial {
            Some(s) => resolve(s, "initial state".into())?,
            None => {
                if self.states.is_empty() {
                    return Err(SpecError::Dangling {
                        model: model.clone(),
                        state: String::new(),
                        context: "initial state".into(),
                    });
                }
                0
            }
        };
        let mut outgoing = vec![Vec::new(); self.states.len()];
        let mut targets = Vec::with_capacity(self.transitions.len());
        let mut seen = BTreeSet::new();
        for (i, t) in self.transitions.iter().enumerate() {
            if !is_valid_name(&t.label) {
                return Err(SpecError::InvalidName(t.label.clone()));
            }
            let ctx = |what: &str| format!("transition `{}` {what}", t.label);
            let src = resolve(&t.source, ctx("source"))?;
            let target = resolve(&t.target, ctx("target"))?;
            if !(t.weight.is_finite() && t.weight > 0.0) {
                return Err(SpecError::NonPositiveWeight {
                    model: model.clone(),
                    label: t.label.clone(),
                    weight: t.weight.to_string(),
                });
            }
            if !seen.insert((src, t.label.clone())) {
                return Err(SpecError::DuplicateLabel {
                    model: model.clone(),
                    source_state: t.source.to_string(),
                    label: t.label.clone(),
                });
            }
            let mut overrides = BTreeMap::new();
            for (k, s) in &t.overrides {
                overrides.insert(*k, resolve(s, ctx(&format!("override for {k}")))?);
            }
            let mut branches = BTreeMap::new();
            for (tag, s) in &t.branches {
                if !is_valid_name(tag.as_str()) {
                    return Err(SpecError::InvalidName(tag.to_string()));
                }
                branches.insert(tag.clone(), resolve(s, ctx(&format!("branch `{tag}`")))?);
            }
            if !branches.is_empty() {
                if let Some(tag) = t.emits.iter().find(|tag| !branches.contains_key(*tag)) {
                    return Err(SpecError::UncoveredOutcome {
                        model: model.clone(),
                        label: t.label.clone(),
                        tag: tag.to_string(),
                    });
                }
            }
            outgoing[src].push(i);
            targets.push(ResolvedTargets {
                target,
                overrides,
                branches,
            });
        }
        let mut constructor_overrides = BTreeMap::new();
        for (k, s) in &self.constructor_overrides {
            constructor_overrides.insert(*k, resolve(s, format!("constructor override for {k}"))?);
        }
        Ok(ModelSpec {
            inner: Arc::new(SpecInner {
                name: self.name,
                states: self.states,
                initial,
                transitions: self.transitions,
                outgoing,
                targets,
                constructor: self.constructor,
                constructor_overrides,
            }),
        })
    }
}

/// Defines a model from its parts; see [`ModelSpec::builder`].
pub fn define_model<E>(
    name: &str,
    states: &[&str],
    initial: &str,
    transitions: Vec<Transition<E>>,
    constructor: Option<Action<E>>,
) -> Result<ModelSpec<E>, SpecError> {
    let mut b = ModelSpec::builder(name)
        .states(states.iter().copied())
        .initial(initial);
    for t in transitions {
        b = b.transition(t);
    }
    b.constructor = constructor;
    b.build()
}

impl<E> ModelSpec<E> {
    pub fn builder(name: &str) -> ModelBuilder<E> {
        ModelBuilder {
            name: name.to_owned(),
            states: Vec::new(),
            initial: None,
            transitions: Vec::new(),
            constructor: None,
            constructor_overrides: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn states(&self) -> &[StateId] {
        &self.inner.states
    }

    pub fn initial(&self) -> &StateId {
        &self.inner.states[self.inner.initial]
    }

    pub fn transitions(&self) -> &[Transition<E>] {
        &self.inner.transitions
    }

    pub fn constructor_overrides(&self) -> impl Iterator<Item = (ErrorKind, &StateId)> {
        self.inner
            .constructor_overrides
            .iter()
            .map(|(k, s)| (*k, &self.inner.states[*s]))
    }

    pub fn state_index(&self, state: &str) -> Option<usize> {
        self.inner.states.iter().position(|s| s.as_str() == state)
    }

    pub fn has_outgoing(&self, state: usize) -> bool {
        !self.inner.outgoing[state].is_empty()
    }

    /// `(source, label)` of every transition, in declaration order.
    pub fn transition_keys(&self) -> Vec<(String, String)> {
        self.inner
            .transitions
            .iter()
            .map(|t| (t.source.to_string(), t.label.clone()))
            .collect()
    }

    /// Whether two handles refer to the same definition.
    pub fn same_as(&self, other: &ModelSpec<E>) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

/// A live execution of a model.
pub struct ModelInstance<E> {
    id: InstanceId,
    spec: ModelSpec<E>,
    current: usize,
    vars: Vars,
    alive: bool,
}

impl<E> fmt::Debug for ModelInstance<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelInstance")
            .field("id", &self.id)
            .field("model", &self.spec.name())
            .field("current", &self.current_state())
            .field("vars", &self.vars)
            .field("alive", &self.alive)
            .finish()
    }
}

impl<E> ModelInstance<E> {
    pub fn id(&self) -> InstanceId {
        self.id
    }

    pub fn spec(&self) -> &ModelSpec<E> {
        &self.spec
    }

    pub fn current_state(&self) -> &StateId {
        &self.spec.inner.states[self.current]
    }

    pub fn vars(&self) -> &Vars {
        &self.vars
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    /// Marks the instance dead; it will not be scheduled again.
    pub fn terminate(&mut self) {
        self.alive = false;
    }

    fn enter(&mut self, state: usize) {
        self.current = state;
        self.alive = self.spec.has_outgoing(state);
    }

    /// Indices of enabled transitions, in declaration order.
    pub fn enabled_indices(&self, env: &E) -> Vec<usize> {
        if !self.alive {
            return Vec::new();
        }
        self.spec.inner.outgoing[self.current]
            .iter()
            .copied()
            .filter(|&i| self.spec.inner.transitions[i].is_enabled(&self.vars, env))
            .collect()
    }

    /// Enabled transitions in declaration order.
    pub fn enabled_transitions(&self, env: &E) -> Vec<&Transition<E>> {
        self.enabled_indices(env)
            .into_iter()
            .map(|i| &self.spec.inner.transitions[i])
            .collect()
    }

    /// Runs transition `index` (which must be enabled) once.
    pub fn fire(
        &mut self,
        index: usize,
        env: &mut E,
        rng: &mut SeededRng,
        ids: &mut IdAllocator,
    ) -> StepOutcome<E> {
        let spec = self.spec.clone();
        let t = &spec.inner.transitions[index];
        let resolved = &spec.inner.targets[index];
        debug_assert!(
            spec.inner.outgoing[self.current].contains(&index),
            "transition not outgoing from the current state"
        );
        let mut launched = Vec::new();
        let mut ctx = ActionCtx {
            vars: &mut self.vars,
            env,
            rng,
            instance: self.id,
            tag: None,
            launched: &mut launched,
            ids,
        };
        let result = match &t.action {
            Some(action) => action(&mut ctx),
            None => Ok(()),
        };
        let tag = ctx.tag.take();
        let mut outcome = StepOutcome {
            kind: StepKind::Completed(self.current_state().clone()),
            raised: None,
            tag: tag.clone(),
            launched,
        };
        let next = match result {
            Ok(()) => match &tag {
                None => Ok(resolved.target),
                Some(tag) if !t.emits.contains(tag) => Err(format!(
                    "transition `{}` emitted undeclared outcome `{tag}`",
                    t.label
                )),
                Some(tag) => Ok(resolved
                    .branches
                    .get(tag)
                    .copied()
                    .unwrap_or(resolved.target)),
            },
            Err(ActionError::Raised { kind, detail }) => {
                outcome.raised = Some(kind);
                match resolved.overrides.get(&kind) {
                    Some(&s) => Ok(s),
                    None => Err(format!(
                        "unexpected exception {kind} in `{}`: {detail}",
                        t.label
                    )),
                }
            }
            Err(ActionError::Violation(m)) => Err(m),
            Err(ActionError::Watchdog(m)) => {
                outcome.kind = StepKind::Watchdog(m);
                return outcome;
            }
            Err(ActionError::Backend(m)) => {
                outcome.kind = StepKind::BackendFailure(m);
                return outcome;
            }
        };
        match next {
            Ok(state) => {
                self.enter(state);
                outcome.kind = StepKind::Completed(self.current_state().clone());
            }
            Err(msg) => outcome.kind = StepKind::Violation(msg),
        }
        outcome
    }
}

/// How a step ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepKind {
    Completed(StateId),
    Violation(String),
    Watchdog(String),
    BackendFailure(String),
}

/// Result of firing one transition.
pub struct StepOutcome<E> {
    pub kind: StepKind,
    pub raised: Option<ErrorKind>,
    pub tag: Option<OutcomeTag>,
    /// Children created during the step, in order of constructor
    /// completion.
    pub launched: Vec<Launched<E>>,
}

impl<E> fmt::Debug for StepOutcome<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StepOutcome")
            .field("kind", &self.kind)
            .field("raised", &self.raised)
            .field("tag", &self.tag)
            .field("launched", &self.launched.len())
            .finish()
    }
}

/// Creates an instance of `spec`, running its constructor. Returns every
/// instance created, children launched by the constructor first and the
/// new instance last.
pub fn instantiate<E>(
    spec: &ModelSpec<E>,
    args: Vars,
    env: &mut E,
    rng: &mut SeededRng,
    ids: &mut IdAllocator,
) -> Result<Vec<Launched<E>>, ActionError> {
    let mut out = Vec::new();
    instantiate_into(spec, args, env, rng, ids, &mut out)?;
    Ok(out)
}

fn instantiate_into<E>(
    spec: &ModelSpec<E>,
    args: Vars,
    env: &mut E,
    rng: &mut SeededRng,
    ids: &mut IdAllocator,
    out: &mut Vec<Launched<E>>,
) -> Result<InstanceId, ActionError> {
    let id = ids.next();
    let mut instance = ModelInstance {
        id,
        spec: spec.clone(),
        current: spec.inner.initial,
        vars: args,
        alive: false,
    };
    let mut raised = None;
    if let Some(ctor) = &spec.inner.constructor {
        let mut ctx = ActionCtx {
            vars: &mut instance.vars,
            env,
            rng,
            instance: id,
            tag: None,
            launched: out,
            ids,
        };
        match ctor(&mut ctx) {
            Ok(()) => {}
            Err(ActionError::Raised { kind, detail }) => {
                match spec.inner.constructor_overrides.get(&kind) {
                    Some(&s) => {
                        instance.current = s;
                        raised = Some(kind);
                    }
                    None => {
                        return Err(ActionError::Violation(format!(
                            "constructor of `{}` raised {kind}: {detail}",
                            spec.name()
                        )))
                    }
                }
            }
            Err(other) => return Err(other),
        }
    }
    let current = instance.current;
    instance.enter(current);
    out.push(Launched { instance, raised });
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Counter {
        hits: u32,
        fail_with: Option<ErrorKind>,
    }

    type T = Transition<Counter>;

    fn counter_model() -> ModelSpec<Counter> {
        ModelSpec::builder("counter")
            .states(["idle", "busy", "err", "done"])
            .transition(T::new("idle", "start", "busy").action(|ctx| {
                ctx.env.hits += 1;
                match ctx.env.fail_with {
                    Some(kind) => Err(ActionError::Raised {
                        kind,
                        detail: "forced".into(),
                    }),
                    None => Ok(()),
                }
            }))
            .transition(
                T::new("idle", "guarded", "done").guard(|vars, _| vars.int_or_zero("n") > 2),
            )
            .transition(
                T::new("busy", "poll", "busy")
                    .branch("ready", "done")
                    .branch("notReady", "busy")
                    .action(|ctx| {
                        if ctx.env.hits > 1 {
                            ctx.emit("ready");
                        } else {
                            ctx.emit("notReady");
                            ctx.env.hits += 1;
                        }
                        Ok(())
                    }),
            )
            .transition(
                T::new("idle", "startMapped", "busy")
                    .on_error(ErrorKind::ClosedChannel, "err")
                    .action(|_| {
                        Err(ActionError::Raised {
                            kind: ErrorKind::ClosedChannel,
                            detail: String::new(),
                        })
                    }),
            )
            .build()
            .unwrap()
    }

    fn new_instance(spec: &ModelSpec<Counter>, env: &mut Counter) -> ModelInstance<Counter> {
        let mut rng = SeededRng::new(0);
        let mut ids = IdAllocator::new();
        instantiate(spec, Vars::new(), env, &mut rng, &mut ids)
            .unwrap()
            .pop()
            .unwrap()
            .instance
    }

    #[test]
    fn empty_model_is_dead_on_arrival() {
        let spec: ModelSpec<()> = define_model("empty", &["s0"], "s0", vec![], None).unwrap();
        assert_eq!(spec.states().len(), 1);
        assert!(spec.transitions().is_empty());
        let mut rng = SeededRng::new(1);
        let mut ids = IdAllocator::new();
        let a = instantiate(&spec, Vars::new(), &mut (), &mut rng, &mut ids).unwrap();
        let b = instantiate(&spec, Vars::new(), &mut (), &mut rng, &mut ids).unwrap();
        assert!(!a[0].instance.is_alive());
        assert_eq!(a[0].instance.id(), InstanceId(1));
        assert_eq!(b[0].instance.id(), InstanceId(2));
    }

    #[test]
    fn dangling_target_is_rejected() {
        let err = define_model::<()>(
            "m",
            &["a"],
            "a",
            vec![Transition::new("a", "go", "X")],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, SpecError::Dangling { ref state, .. } if state == "X"));
        let err = define_model::<()>(
            "m",
            &["a"],
            "a",
            vec![Transition::new("a", "go", "a").on_error(ErrorKind::ClosedChannel, "gone")],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, SpecError::Dangling { .. }));
        assert!(matches!(
            define_model::<()>("m", &["a"], "nope", vec![], None),
            Err(SpecError::Dangling { .. })
        ));
    }

    #[test]
    fn duplicate_labels_and_bad_weights() {
        let dup = define_model::<()>(
            "m",
            &["a", "b"],
            "a",
            vec![
                Transition::new("a", "go", "a"),
                Transition::new("a", "go", "b"),
            ],
            None,
        );
        assert!(matches!(dup, Err(SpecError::DuplicateLabel { .. })));
        // Same label from different sources is fine.
        assert!(define_model::<()>(
            "m",
            &["a", "b"],
            "a",
            vec![
                Transition::new("a", "go", "b"),
                Transition::new("b", "go", "a")
            ],
            None,
        )
        .is_ok());
        for w in [0.0, -1.0, f64::NAN] {
            let bad = define_model::<()>(
                "m",
                &["a"],
                "a",
                vec![Transition::new("a", "go", "a").weight(w)],
                None,
            );
            assert!(matches!(bad, Err(SpecError::NonPositiveWeight { .. })));
        }
    }

    #[test]
    fn outcome_branches_must_cover_declared_tags() {
        let bad = define_model::<()>(
            "m",
            &["a", "b"],
            "a",
            vec![Transition::new("a", "go", "a").branch("x", "b").emits("y")],
            None,
        );
        assert!(matches!(bad, Err(SpecError::UncoveredOutcome { ref tag, .. }) if tag == "y"));
    }

    #[test]
    fn guards_filter_in_declaration_order() {
        let spec = counter_model();
        let mut env = Counter::default();
        let mut inst = new_instance(&spec, &mut env);
        let labels: Vec<_> = inst
            .enabled_transitions(&env)
            .iter()
            .map(|t| t.label().to_owned())
            .collect();
        assert_eq!(labels, ["start", "startMapped"]);
        inst.vars.set("n", Value::Int(3));
        let labels: Vec<_> = inst
            .enabled_transitions(&env)
            .iter()
            .map(|t| t.label().to_owned())
            .collect();
        assert_eq!(labels, ["start", "guarded", "startMapped"]);
    }

    #[test]
    fn outcome_tags_select_branches() {
        let spec = counter_model();
        let mut env = Counter::default();
        let mut inst = new_instance(&spec, &mut env);
        let mut rng = SeededRng::new(0);
        let mut ids = IdAllocator::new();
        let out = inst.fire(0, &mut env, &mut rng, &mut ids);
        assert_eq!(out.kind, StepKind::Completed("busy".into()));
        let out = inst.fire(2, &mut env, &mut rng, &mut ids);
        assert_eq!(out.tag, Some("notReady".into()));
        assert_eq!(out.kind, StepKind::Completed("busy".into()));
        let out = inst.fire(2, &mut env, &mut rng, &mut ids);
        assert_eq!(out.kind, StepKind::Completed("done".into()));
        assert!(!inst.is_alive());
    }

    #[test]
    fn exceptions_follow_overrides_or_fail() {
        let spec = counter_model();
        let mut rng = SeededRng::new(0);
        let mut ids = IdAllocator::new();

        let mut env = Counter::default();
        let mut inst = new_instance(&spec, &mut env);
        let out = inst.fire(3, &mut env, &mut rng, &mut ids);
        assert_eq!(out.raised, Some(ErrorKind::ClosedChannel));
        assert_eq!(out.kind, StepKind::Completed("err".into()));

        let mut env = Counter {
            fail_with: Some(ErrorKind::InputShutdown),
            ..Counter::default()
        };
        let mut inst = new_instance(&spec, &mut env);
        let out = inst.fire(0, &mut env, &mut rng, &mut ids);
        assert_eq!(out.raised, Some(ErrorKind::InputShutdown));
        assert!(
            matches!(out.kind, StepKind::Violation(ref m) if m.contains("unexpected exception"))
        );
        assert_eq!(inst.current_state().as_str(), "idle");
    }

    #[test]
    fn launch_runs_child_constructor_immediately() {
        #[derive(Default)]
        struct Log(Vec<String>);
        let child: ModelSpec<Log> = ModelSpec::builder("child")
            .state("c")
            .constructor(|ctx: &mut ActionCtx<Log>| {
                let tag = ctx.vars.int("k")?;
                ctx.env.0.push(format!("ctor {tag}"));
                Ok(())
            })
            .build()
            .unwrap();
        let c2 = child.clone();
        let parent: ModelSpec<Log> = ModelSpec::builder("parent")
            .state("p")
            .transition(Transition::new("p", "spawn", "p").action(move |ctx| {
                ctx.launch(&c2, Vars::new().with("k", Value::Int(7)))?;
                ctx.env.0.push("after launch".into());
                Ok(())
            }))
            .build()
            .unwrap();
        let mut env = Log::default();
        let mut rng = SeededRng::new(0);
        let mut ids = IdAllocator::new();
        let mut p = instantiate(&parent, Vars::new(), &mut env, &mut rng, &mut ids)
            .unwrap()
            .pop()
            .unwrap()
            .instance;
        let out = p.fire(0, &mut env, &mut rng, &mut ids);
        assert_eq!(env.0, ["ctor 7", "after launch"]);
        assert_eq!(out.launched.len(), 1);
        assert_eq!(out.launched[0].instance.id(), InstanceId(2));
        assert!(!out.launched[0].instance.is_alive());
    }

    #[test]
    fn constructor_errors() {
        let failing = |with_override: bool| {
            let mut b = ModelSpec::<()>::builder("m")
                .states(["ok", "bad"])
                .transition(Transition::new("bad", "x", "bad"))
                .constructor(|_| {
                    Err(ActionError::Raised {
                        kind: ErrorKind::ConnectionRefused,
                        detail: String::new(),
                    })
                });
            if with_override {
                b = b.constructor_on_error(ErrorKind::ConnectionRefused, "bad");
            }
            b.build().unwrap()
        };
        let mut rng = SeededRng::new(0);
        let mut ids = IdAllocator::new();
        let err = instantiate(&failing(false), Vars::new(), &mut (), &mut rng, &mut ids);
        assert!(matches!(err, Err(ActionError::Violation(_))));
        let ok = instantiate(&failing(true), Vars::new(), &mut (), &mut rng, &mut ids).unwrap();
        assert_eq!(ok[0].instance.current_state().as_str(), "bad");
        assert_eq!(ok[0].raised, Some(ErrorKind::ConnectionRefused));
    }
}
