//! Line-oriented trace files.
//!
//! ```text
//! netmbt-trace v1 seed=7 test=3 backend=sim
//! 0 1 server-main <init> - bound
//! 1 1 server-main configureSelector - selectorConfigured
//! 2 2 client <init> - connected
//! 3 1 server-main launchClient - selectorConfigured
//! verdict PASS
//! ```
//!
//! A file may hold several traces back to back. `<init>` records mark
//! instance creation; they share the step numbering but do not count
//! against the step budget.

use std::fmt;
use std::str::FromStr;

use crate::sut::{BackendKind, ErrorKind};

pub const HEADER_MAGIC: &str = "netmbt-trace";
pub const FORMAT_VERSION: &str = "v1";
pub const INIT_LABEL: &str = "<init>";

/// What a step produced besides its resulting state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    None,
    Tag(String),
    Raised(ErrorKind),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::None => f.write_str("-"),
            Outcome::Tag(t) => write!(f, "tag:{t}"),
            Outcome::Raised(k) => write!(f, "err:{k}"),
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "-" {
            return Ok(Outcome::None);
        }
        if let Some(tag) = s.strip_prefix("tag:") {
            if !tag.is_empty() {
                return Ok(Outcome::Tag(tag.to_owned()));
            }
        }
        if let Some(kind) = s.strip_prefix("err:") {
            if let Some(k) = ErrorKind::from_name(kind) {
                return Ok(Outcome::Raised(k));
            }
        }
        Err(format!("bad outcome field `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub index: u64,
    pub instance: u32,
    pub model: String,
    pub label: String,
    pub outcome: Outcome,
    pub state: String,
}

impl StepRecord {
    pub fn is_init(&self) -> bool {
        self.label == INIT_LABEL
    }
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.index, self.instance, self.model, self.label, self.outcome, self.state
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail {
        message: String,
        /// Index of the last record, when there is one.
        failing_step: Option<u64>,
    },
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => f.write_str("verdict PASS"),
            Verdict::Fail { message, .. } if message.is_empty() => f.write_str("verdict FAIL"),
            Verdict::Fail { message, .. } => write!(f, "verdict FAIL {message}"),
        }
    }
}

/// Record of one test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub suite_seed: u64,
    pub test_index: u64,
    pub backend: BackendKind,
    pub records: Vec<StepRecord>,
    pub verdict: Verdict,
}

impl Trace {
    /// Seed the test ran with.
    pub fn test_seed(&self) -> u64 {
        crate::rng::derive_test_seed(self.suite_seed, self.test_index)
    }

    /// Fired transitions, excluding `<init>` records.
    pub fn step_count(&self) -> usize {
        self.records.iter().filter(|r| !r.is_init()).count()
    }

    /// Model of instance 1, the test's root.
    pub fn root_model(&self) -> Option<&str> {
        self.records
            .iter()
            .find(|r| r.instance == 1)
            .map(|r| r.model.as_str())
    }

    pub fn header(&self) -> String {
        format!(
            "{HEADER_MAGIC} {FORMAT_VERSION} seed={} test={} backend={}",
            self.suite_seed, self.test_index, self.backend
        )
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.header())?;
        for r in &self.records {
            writeln!(f, "{r}")?;
        }
        writeln!(f, "{}", self.verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

/// Collapses whitespace so a message stays on one line.
pub fn one_line(message: &str) -> String {
    message.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_header(line: &str) -> Result<(u64, u64, BackendKind), String> {
    let mut parts = line.split(' ');
    if parts.next() != Some(HEADER_MAGIC) {
        return Err("missing `netmbt-trace` header".into());
    }
    if parts.next() != Some(FORMAT_VERSION) {
        return Err("unsupported trace version".into());
    }
    let mut field = |key: &str| -> Result<String, String> {
        parts
            .next()
            .and_then(|p| p.strip_prefix(key))
            .and_then(|p| p.strip_prefix('='))
            .map(str::to_owned)
            .ok_or_else(|| format!("expected `{key}=` in header"))
    };
    let seed = field("seed")?.parse().map_err(|e| format!("seed: {e}"))?;
    let test = field("test")?.parse().map_err(|e| format!("test: {e}"))?;
    let backend = field("backend")?.parse()?;
    if parts.next().is_some() {
        return Err("trailing header fields".into());
    }
    Ok((seed, test, backend))
}

fn parse_record(line: &str) -> Result<StepRecord, String> {
    let fields: Vec<&str> = line.split(' ').collect();
    let [index, instance, model, label, outcome, state] = fields[..] else {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    };
    Ok(StepRecord {
        index: index.parse().map_err(|e| format!("step index: {e}"))?,
        instance: instance.parse().map_err(|e| format!("instance id: {e}"))?,
        model: model.to_owned(),
        label: label.to_owned(),
        outcome: outcome.parse()?,
        state: state.to_owned(),
    })
}

/// Parses every trace in `text`.
pub fn parse_traces(text: &str) -> Result<Vec<Trace>, TraceParseError> {
    let mut traces = Vec::new();
    let mut current: Option<Trace> = None;
    for (n, line) in text.lines().enumerate() {
        let err = |message: String| TraceParseError {
            line: n + 1,
            message,
        };
        if line.is_empty() {
            continue;
        }
        match current.as_mut() {
            None => {
                let (suite_seed, test_index, backend) = parse_header(line).map_err(err)?;
                current = Some(Trace {
                    suite_seed,
                    test_index,
                    backend,
                    records: Vec::new(),
                    verdict: Verdict::Pass,
                });
            }
            Some(trace) => {
                if let Some(rest) = line.strip_prefix("verdict ") {
                    let failing_step = trace.records.last().map(|r| r.index);
                    trace.verdict = match rest {
                        "PASS" => Verdict::Pass,
                        "FAIL" => Verdict::Fail {
                            message: String::new(),
                            failing_step,
                        },
                        _ => match rest.strip_prefix("FAIL ") {
                            Some(message) => Verdict::Fail {
                                message: message.to_owned(),
                                failing_step,
                            },
                            None => return Err(err(format!("bad verdict `{rest}`"))),
                        },
                    };
                    traces.push(current.take().expect("trace in progress"));
                } else {
                    let record = parse_record(line).map_err(err)?;
                    let expected = trace.records.last().map_or(0, |r| r.index + 1);
                    if record.index != expected {
                        return Err(err(format!(
                            "step index {} out of sequence (expected {expected})",
                            record.index
                        )));
                    }
                    trace.records.push(record);
                }
            }
        }
    }
    if current.is_some() {
        return Err(TraceParseError {
            line: text.lines().count(),
            message: "trace ends without a verdict line".into(),
        });
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        Trace {
            suite_seed: 42,
            test_index: 3,
            backend: BackendKind::Sim,
            records: vec![
                StepRecord {
                    index: 0,
                    instance: 1,
                    model: "server-main".into(),
                    label: INIT_LABEL.into(),
                    outcome: Outcome::None,
                    state: "bound".into(),
                },
                StepRecord {
                    index: 1,
                    instance: 1,
                    model: "server-main".into(),
                    label: "bindAgain".into(),
                    outcome: Outcome::Raised(ErrorKind::AlreadyBound),
                    state: "bound".into(),
                },
                StepRecord {
                    index: 2,
                    instance: 1,
                    model: "server-main".into(),
                    label: "accept".into(),
                    outcome: Outcome::Tag("nullResult".into()),
                    state: "accepting".into(),
                },
            ],
            verdict: Verdict::Fail {
                message: "ledger: server read 9 bytes but client wrote 4".into(),
                failing_step: Some(2),
            },
        }
    }

    #[test]
    fn exact_text_layout() {
        let text = sample().to_string();
        assert_eq!(
            text,
            "netmbt-trace v1 seed=42 test=3 backend=sim\n\
             0 1 server-main <init> - bound\n\
             1 1 server-main bindAgain err:AlreadyBound bound\n\
             2 1 server-main accept tag:nullResult accepting\n\
             verdict FAIL ledger: server read 9 bytes but client wrote 4\n"
        );
    }

    #[test]
    fn parse_inverts_display() {
        let mut t = sample();
        let mut pass = sample();
        pass.test_index = 4;
        pass.verdict = Verdict::Pass;
        let text = format!("{t}{pass}");
        let parsed = parse_traces(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1], pass);
        // failing_step is recomputed from the last record.
        t.verdict = Verdict::Fail {
            message: "ledger: server read 9 bytes but client wrote 4".into(),
            failing_step: Some(2),
        };
        assert_eq!(parsed[0], t);
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in [
            "hello\n",
            "netmbt-trace v2 seed=1 test=0 backend=sim\nverdict PASS\n",
            "netmbt-trace v1 seed=1 test=0 backend=tcp\nverdict PASS\n",
            "netmbt-trace v1 seed=1 test=0 backend=sim\n1 1 m a - s\nverdict PASS\n",
            "netmbt-trace v1 seed=1 test=0 backend=sim\n0 1 m a - s\n",
            "netmbt-trace v1 seed=1 test=0 backend=sim\n0 1 m a err:Nope s\nverdict PASS\n",
        ] {
            assert!(parse_traces(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn one_line_collapses_whitespace() {
        assert_eq!(one_line("a\n b\t c"), "a b c");
    }
}
