//! Solution pathways: data model, JSONL ingestion with the length/duplicate
//! filters, efficiency labels, and the synthetic corpus generator.

pub mod actions;
pub mod bfs;
pub mod generate;

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{canonicalize, parse};

pub use actions::{apply_action, enumerate_actions, ActionError, ActionInstance, ActionKind};
pub use bfs::{bfs_min_steps, BfsError, ShortestPaths};
pub use generate::{generate_corpus, GeneratedCorpus, PolicyMix, StudentProfile};

/// Longest retained pathway, in states.
pub const MAX_STATES: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pathway {
    pub problem_id: String,
    pub student_id: String,
    pub attempt_id: String,
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<String>>,
    pub completed: bool,
}

impl Pathway {
    /// Number of states (T).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn transitions(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Key shared by duplicate pathways: problem plus state sequence.
    pub fn dedupe_key(&self) -> (String, Vec<String>) {
        (self.problem_id.clone(), self.states.clone())
    }

    pub fn action_kinds(&self) -> Option<Result<Vec<ActionKind>, ActionError>> {
        self.actions
            .as_ref()
            .map(|a| a.iter().map(|s| s.parse()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub problem_id: String,
    pub start: String,
    pub goal: String,
    pub min_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EfficiencyLabel {
    Optimal,
    Suboptimal,
    Incomplete,
}

impl EfficiencyLabel {
    pub const ALL: [EfficiencyLabel; 3] = [
        EfficiencyLabel::Optimal,
        EfficiencyLabel::Suboptimal,
        EfficiencyLabel::Incomplete,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("format error at line {line_no}: {message}")]
    FormatError { line_no: usize, message: String },
    #[error("invalid pathway {attempt_id}: {message}")]
    InvalidPathway { attempt_id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_error(line_no: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::FormatError {
        line_no,
        message: message.into(),
    }
}

/// Reads pathways JSONL, canonicalizes states, drops pathways longer than
/// [`MAX_STATES`] and exact duplicates (first occurrence wins).
pub fn ingest<R: BufRead>(reader: R) -> Result<Vec<Pathway>, CorpusError> {
    read_pathways(reader, true)
}

/// Like [`ingest`] but keeps every attempt, duplicates included.
pub fn ingest_attempts<R: BufRead>(reader: R) -> Result<Vec<Pathway>, CorpusError> {
    read_pathways(reader, false)
}

fn read_pathways<R: BufRead>(reader: R, dedupe: bool) -> Result<Vec<Pathway>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut p: Pathway =
            serde_json::from_str(&line).map_err(|e| format_error(line_no, e.to_string()))?;
        if p.states.len() < 2 {
            return Err(format_error(line_no, "a pathway needs at least two states"));
        }
        for s in p.states.iter_mut() {
            *s = canonicalize(s).map_err(|e| format_error(line_no, format!("state {s:?}: {e}")))?;
        }
        if let Some(actions) = &p.actions {
            if actions.len() + 1 != p.states.len() {
                return Err(format_error(line_no, "actions must have one entry per transition"));
            }
        }
        if p.states.len() > MAX_STATES {
            continue;
        }
        if !dedupe || seen.insert(p.dedupe_key()) {
            out.push(p);
        }
    }
    Ok(out)
}

pub fn ingest_path(path: &std::path::Path) -> Result<Vec<Pathway>, CorpusError> {
    let file = std::fs::File::open(path)?;
    ingest(std::io::BufReader::new(file))
}

pub fn read_problems<R: BufRead>(reader: R) -> Result<Vec<Problem>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut p: Problem =
            serde_json::from_str(&line).map_err(|e| format_error(idx + 1, e.to_string()))?;
        p.start = canonicalize(&p.start).map_err(|e| format_error(idx + 1, e.to_string()))?;
        p.goal = canonicalize(&p.goal).map_err(|e| format_error(idx + 1, e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn efficiency_label(p: &Pathway, prob: &Problem) -> Result<EfficiencyLabel, CorpusError> {
    if !p.completed {
        return Ok(EfficiencyLabel::Incomplete);
    }
    let steps = p.transitions();
    if steps < prob.min_steps {
        return Err(CorpusError::InvalidPathway {
            attempt_id: p.attempt_id.clone(),
            message: format!(
                "{steps} steps is shorter than the minimum {} for {}",
                prob.min_steps, prob.problem_id
            ),
        });
    }
    Ok(if steps == prob.min_steps {
        EfficiencyLabel::Optimal
    } else {
        EfficiencyLabel::Suboptimal
    })
}

/// Checks that each labelled action rewrites state t into state t+1.
pub fn replay_check(p: &Pathway) -> Result<(), CorpusError> {
    let invalid = |message: String| CorpusError::InvalidPathway {
        attempt_id: p.attempt_id.clone(),
        message,
    };
    let Some(kinds) = p.action_kinds() else {
        return Ok(());
    };
    let kinds = kinds.map_err(|e| invalid(e.to_string()))?;
    for (t, kind) in kinds.iter().enumerate() {
        let from = parse(&p.states[t]).map_err(|e| invalid(e.to_string()))?;
        let to = parse(&p.states[t + 1]).map_err(|e| invalid(e.to_string()))?;
        if !actions::replays(&from, *kind, &to) {
            return Err(invalid(format!(
                "step {t}: {kind} does not rewrite {} into {}",
                p.states[t],
                p.states[t + 1]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(problem: &str, student: &str, states: &[&str]) -> String {
        serde_json::to_string(&Pathway {
            problem_id: problem.into(),
            student_id: student.into(),
            attempt_id: format!("{student}-{problem}"),
            states: states.iter().map(|s| s.to_string()).collect(),
            actions: None,
            completed: true,
        })
        .unwrap()
    }

    #[test]
    fn dedupes_identical_sequences_per_problem() {
        let text = [
            line("p1", "s1", &["1+2", "3"]),
            line("p1", "s2", &["1 + 2", "3"]),
            line("p2", "s2", &["1+2", "3"]),
        ]
        .join("\n");
        let out = ingest(text.as_bytes()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].student_id, "s1");
        assert_eq!(out[1].problem_id, "p2");
    }

    #[test]
    fn length_filter_boundary() {
        let fifteen: Vec<String> = (0..15).map(|i| format!("x+{i}")).collect();
        let sixteen: Vec<String> = (0..16).map(|i| format!("x+{i}")).collect();
        let a: Vec<&str> = fifteen.iter().map(|s| s.as_str()).collect();
        let b: Vec<&str> = sixteen.iter().map(|s| s.as_str()).collect();
        let text = [line("p", "a", &a), line("p", "b", &b)].join("\n");
        let out = ingest(text.as_bytes()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].states.len(), 15);
    }

    #[test]
    fn format_errors_carry_line_numbers() {
        let text = format!("{}\n{{not json", line("p", "a", &["x", "x+0"]));
        match ingest(text.as_bytes()) {
            Err(CorpusError::FormatError { line_no, .. }) => assert_eq!(line_no, 2),
            other => panic!("unexpected {other:?}"),
        }
        let bad_state = line("p", "a", &["x+", "x"]);
        assert!(matches!(
            ingest(bad_state.as_bytes()),
            Err(CorpusError::FormatError { line_no: 1, .. })
        ));
    }

    #[test]
    fn ingest_is_idempotent() {
        let text = [
            line("p1", "s1", &["1+2", "3"]),
            line("p1", "s2", &["1+2", "3"]),
            line("p1", "s3", &["2+1", "3"]),
        ]
        .join("\n");
        let once = ingest(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &once).unwrap();
        assert_eq!(ingest(buf.as_slice()).unwrap(), once);
    }

    #[test]
    fn efficiency_labels() {
        let prob = Problem {
            problem_id: "p7".into(),
            start: "11+55+y+89+45".into(),
            goal: "100+y+100".into(),
            min_steps: 2,
        };
        let mut p = Pathway {
            problem_id: "p7".into(),
            student_id: "s".into(),
            attempt_id: "a".into(),
            states: vec!["11+55+y+89+45".into(), "100+55+y+45".into(), "100+y+100".into()],
            actions: None,
            completed: true,
        };
        assert_eq!(efficiency_label(&p, &prob).unwrap(), EfficiencyLabel::Optimal);
        p.states = vec!["a".into(); 5];
        assert_eq!(efficiency_label(&p, &prob).unwrap(), EfficiencyLabel::Suboptimal);
        p.completed = false;
        assert_eq!(efficiency_label(&p, &prob).unwrap(), EfficiencyLabel::Incomplete);
        p.completed = true;
        p.states.truncate(2);
        assert!(matches!(
            efficiency_label(&p, &prob),
            Err(CorpusError::InvalidPathway { .. })
        ));
    }
}
