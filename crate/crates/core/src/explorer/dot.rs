//! Graphviz export.
//!
//! States become nodes in declaration order. A transition is a solid
//! labeled edge to its target; its outcome branches are dashed edges and
//! its exception overrides are red edges, each labeled
//! `label [tag-or-error]`. When a transition has outcome branches the
//! plain target edge is omitted.

use std::fmt::Write;

use crate::efsm::ModelSpec;

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

pub fn export_dot<E>(spec: &ModelSpec<E>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(spec.name()));
    let _ = writeln!(out, "  rankdir=LR;");
    for s in spec.states() {
        let shape = if s == spec.initial() {
            "doublecircle"
        } else {
            "circle"
        };
        let _ = writeln!(out, "  {} [shape={shape}];", quote(s.as_str()));
    }
    for t in spec.transitions() {
        let src = quote(t.source().as_str());
        if t.branches().is_empty() {
            let _ = writeln!(
                out,
                "  {src} -> {} [label={}];",
                quote(t.target().as_str()),
                quote(t.label())
            );
        }
        for (tag, target) in t.branches() {
            let _ = writeln!(
                out,
                "  {src} -> {} [label={}, style=dashed];",
                quote(target.as_str()),
                quote(&format!("{} [{tag}]", t.label()))
            );
        }
        for (kind, target) in t.overrides() {
            let _ = writeln!(
                out,
                "  {src} -> {} [label={}, color=red];",
                quote(target.as_str()),
                quote(&format!("{} [{kind}]", t.label()))
            );
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efsm::{define_model, Transition};
    use crate::sut::ErrorKind;

    #[test]
    fn single_state_no_edges() {
        let spec = define_model::<()>("empty", &["s0"], "s0", vec![], None).unwrap();
        let dot = export_dot(&spec);
        assert_eq!(
            dot,
            "digraph \"empty\" {\n  rankdir=LR;\n  \"s0\" [shape=doublecircle];\n}\n"
        );
    }

    #[test]
    fn edge_styles() {
        let spec = define_model::<()>(
            "m",
            &["a", "b", "err"],
            "a",
            vec![
                Transition::new("a", "accept", "a")
                    .branch("nullResult", "a")
                    .branch("connected", "b"),
                Transition::new("b", "close", "a").on_error(ErrorKind::ClosedChannel, "err"),
            ],
            None,
        )
        .unwrap();
        let dot = export_dot(&spec);
        assert!(dot.contains("\"a\" -> \"b\" [label=\"accept [connected]\", style=dashed];"));
        assert!(dot.contains("\"b\" -> \"a\" [label=\"close\"];"));
        assert!(dot.contains("\"b\" -> \"err\" [label=\"close [ClosedChannel]\", color=red];"));
        assert!(!dot.contains("[label=\"accept\"]"));
    }
}
