//! State and transition coverage, recomputable from traces.

use std::collections::BTreeMap;
use std::fmt;

use super::trace::Trace;
use crate::efsm::ModelSpec;

/// The declared states and transitions of a model, without its actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    pub name: String,
    pub states: Vec<String>,
    /// `(source, label)` pairs in declaration order.
    pub transitions: Vec<(String, String)>,
}

impl ModelShape {
    pub fn of<E>(spec: &ModelSpec<E>) -> Self {
        Self {
            name: spec.name().to_owned(),
            states: spec.states().iter().map(|s| s.to_string()).collect(),
            transitions: spec.transition_keys(),
        }
    }
}

/// Visit counts for one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelCoverage {
    pub shape: ModelShape,
    pub states: BTreeMap<String, u64>,
    pub transitions: BTreeMap<(String, String), u64>,
}

impl ModelCoverage {
    fn new(shape: ModelShape) -> Self {
        Self {
            shape,
            states: BTreeMap::new(),
            transitions: BTreeMap::new(),
        }
    }

    pub fn states_covered(&self) -> usize {
        self.shape
            .states
            .iter()
            .filter(|s| self.states.contains_key(*s))
            .count()
    }

    pub fn transitions_covered(&self) -> usize {
        self.shape
            .transitions
            .iter()
            .filter(|t| self.transitions.contains_key(*t))
            .count()
    }

    pub fn unvisited_states(&self) -> Vec<&str> {
        self.shape
            .states
            .iter()
            .filter(|s| !self.states.contains_key(*s))
            .map(String::as_str)
            .collect()
    }

    pub fn unfired_transitions(&self) -> Vec<String> {
        self.shape
            .transitions
            .iter()
            .filter(|t| !self.transitions.contains_key(*t))
            .map(|(s, l)| format!("{s}/{l}"))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.states_covered() == self.shape.states.len()
            && self.transitions_covered() == self.shape.transitions.len()
    }

    fn percent(hit: usize, total: usize) -> f64 {
        if total == 0 {
            100.0
        } else {
            100.0 * hit as f64 / total as f64
        }
    }

    pub fn state_percent(&self) -> f64 {
        Self::percent(self.states_covered(), self.shape.states.len())
    }

    pub fn transition_percent(&self) -> f64 {
        Self::percent(self.transitions_covered(), self.shape.transitions.len())
    }
}

/// Coverage across every model seen by a suite.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Coverage {
    models: BTreeMap<String, ModelCoverage>,
}

impl Coverage {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts tracking `shape` even before anything of it is visited.
    pub fn declare(&mut self, shape: ModelShape) {
        self.models
            .entry(shape.name.clone())
            .or_insert_with(|| ModelCoverage::new(shape));
    }

    pub fn model(&self, name: &str) -> Option<&ModelCoverage> {
        self.models.get(name)
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelCoverage> {
        self.models.values()
    }

    /// Adds one trace. Each record's source state is the state its
    /// instance was last seen in; the `<init>` record supplies the first.
    /// Records of undeclared models are ignored.
    pub fn add_trace(&mut self, trace: &Trace) {
        let mut position: BTreeMap<u32, String> = BTreeMap::new();
        for r in &trace.records {
            let Some(m) = self.models.get_mut(&r.model) else {
                continue;
            };
            if !r.is_init() {
                if let Some(src) = position.get(&r.instance) {
                    *m.transitions
                        .entry((src.clone(), r.label.clone()))
                        .or_insert(0) += 1;
                }
            }
            *m.states.entry(r.state.clone()).or_insert(0) += 1;
            position.insert(r.instance, r.state.clone());
        }
    }

    pub fn from_traces<'a>(
        shapes: impl IntoIterator<Item = ModelShape>,
        traces: impl IntoIterator<Item = &'a Trace>,
    ) -> Self {
        let mut c = Self::new();
        for s in shapes {
            c.declare(s);
        }
        for t in traces {
            c.add_trace(t);
        }
        c
    }

    pub fn is_complete(&self) -> bool {
        self.models.values().all(ModelCoverage::is_complete)
    }
}

impl fmt::Display for Coverage {
    /// One line per model: `coverage <model> states=<hit>/<n> transitions=<hit>/<n>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in self.models.values() {
            writeln!(
                f,
                "coverage {} states={}/{} transitions={}/{}",
                m.shape.name,
                m.states_covered(),
                m.shape.states.len(),
                m.transitions_covered(),
                m.shape.transitions.len()
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explorer::trace::parse_traces;

    #[test]
    fn rebuilds_sources_per_instance() {
        let shape = ModelShape {
            name: "m".into(),
            states: vec!["a".into(), "b".into(), "c".into()],
            transitions: vec![
                ("a".into(), "go".into()),
                ("b".into(), "go".into()),
                ("b".into(), "stop".into()),
            ],
        };
        let text = "netmbt-trace v1 seed=1 test=0 backend=sim\n\
                    0 1 m <init> - a\n\
                    1 2 m <init> - a\n\
                    2 1 m go - b\n\
                    3 2 m go - b\n\
                    4 1 m go - b\n\
                    verdict PASS\n";
        let traces = parse_traces(text).unwrap();
        let c = Coverage::from_traces([shape], &traces);
        let m = c.model("m").unwrap();
        assert_eq!(m.transitions[&("a".into(), "go".into())], 2);
        assert_eq!(m.transitions[&("b".into(), "go".into())], 1);
        assert_eq!(m.unvisited_states(), ["c"]);
        assert_eq!(m.unfired_transitions(), ["b/stop"]);
        assert!(!c.is_complete());
        assert_eq!(c.to_string(), "coverage m states=2/3 transitions=2/3\n");
    }
}
