//! State encoders: a deterministic structural featurizer and a lookup table
//! of precomputed vectors.
//!
//! The structural vector has twelve count slots followed by signed hashed
//! counts of parent→child AST paths of length 2 and 3. The whole vector is
//! L2-normalized.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::expr::{operator_token_histogram, parse, token_count, Expression, SyntaxError};

pub const MIN_STRUCTURAL_DIM: usize = 16;
/// Number of fixed count slots ahead of the hashed n-gram slots.
pub const FIXED_SLOTS: usize = 12;

pub const SLOT_TOKENS: usize = 0;
pub const SLOT_DEPTH: usize = 1;
pub const SLOT_OPERATORS: usize = 2;
pub const SLOT_LITERALS: usize = 9;
pub const SLOT_VARIABLES: usize = 10;
pub const SLOT_DIGITS: usize = 11;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("state not in embedding table: {0}")]
    MissingState(String),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("format error at line {line_no}: {message}")]
    FormatError { line_no: usize, message: String },
    #[error("dimension mismatch at line {line_no}: expected {expected}, found {found}")]
    DimensionMismatch {
        line_no: usize,
        expected: usize,
        found: usize,
    },
    #[error("structural encoder needs d >= {MIN_STRUCTURAL_DIM}, got {0}")]
    DimensionTooSmall(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateEncoder {
    Structural { d: usize, hash_seed: u64 },
    Table { entries: HashMap<String, Vec<f64>>, d: usize },
}

impl StateEncoder {
    pub fn structural(d: usize, hash_seed: u64) -> Result<Self, EncodeError> {
        if d < MIN_STRUCTURAL_DIM {
            return Err(EncodeError::DimensionTooSmall(d));
        }
        Ok(StateEncoder::Structural { d, hash_seed })
    }

    pub fn dim(&self) -> usize {
        match self {
            StateEncoder::Structural { d, .. } | StateEncoder::Table { d, .. } => *d,
        }
    }

    pub fn encode(&self, s: &str) -> Result<Vec<f64>, EncodeError> {
        let e = parse(s)?;
        match self {
            StateEncoder::Structural { d, hash_seed } => Ok(structural_vector(&e, *d, *hash_seed)),
            StateEncoder::Table { entries, .. } => {
                let key = e.canonical_string();
                entries.get(&key).cloned().ok_or(EncodeError::MissingState(key))
            }
        }
    }

    pub fn encode_all(&self, states: &[String]) -> Result<Vec<Vec<f64>>, EncodeError> {
        states.iter().map(|s| self.encode(s)).collect()
    }
}

pub fn encode_state(enc: &StateEncoder, s: &str) -> Result<Vec<f64>, EncodeError> {
    enc.encode(s)
}

/// The twelve count features before normalization.
pub fn fixed_features(e: &Expression) -> [f64; FIXED_SLOTS] {
    let mut out = [0.0; FIXED_SLOTS];
    out[SLOT_TOKENS] = token_count(e) as f64;
    out[SLOT_DEPTH] = e.depth() as f64;
    for (i, c) in operator_token_histogram(e).iter().enumerate() {
        out[SLOT_OPERATORS + i] = *c as f64;
    }
    let mut literals = 0usize;
    let mut variables = 0usize;
    let mut digits = 0usize;
    visit(e, &mut |node| match node {
        Expression::Integer(v) => {
            literals += 1;
            digits += v.magnitude().to_string().len();
        }
        Expression::Variable(_) => variables += 1,
        _ => {}
    });
    out[SLOT_LITERALS] = literals as f64;
    out[SLOT_VARIABLES] = variables as f64;
    out[SLOT_DIGITS] = digits as f64;
    out
}

fn visit(e: &Expression, f: &mut impl FnMut(&Expression)) {
    f(e);
    for c in e.children() {
        visit(c, f);
    }
}

fn node_label(e: &Expression) -> String {
    match e {
        Expression::Integer(v) => format!("int:{v}"),
        Expression::Variable(c) => format!("var:{c}"),
        Expression::Add(_) => "add".into(),
        Expression::Mul(_) => "mul".into(),
        Expression::Div(..) => "div".into(),
        Expression::Pow(..) => "pow".into(),
        Expression::Neg(_) => "neg".into(),
    }
}

/// Root-to-node label chains of length 2 and 3; each step records the child
/// position so reordering operands changes the features.
pub fn path_ngrams(e: &Expression) -> Vec<String> {
    fn walk(e: &Expression, stack: &mut Vec<String>, out: &mut Vec<String>) {
        let n = stack.len();
        if n >= 2 {
            out.push(stack[n - 2..].join("/"));
        }
        if n >= 3 {
            out.push(stack[n - 3..].join("/"));
        }
        for (i, c) in e.children().into_iter().enumerate() {
            stack.push(format!("{i}:{}", node_label(c)));
            walk(c, stack, out);
            stack.pop();
        }
    }
    let mut out = Vec::new();
    let mut stack = vec![format!("r:{}", node_label(e))];
    walk(e, &mut stack, &mut out);
    out
}

fn seeded_hash(seed: u64, text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(text.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    // final avalanche so nearby labels spread over buckets
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^ (h >> 33)
}

/// Unnormalized feature vector; useful for inspecting the count slots.
pub fn raw_structural_features(e: &Expression, d: usize, hash_seed: u64) -> Vec<f64> {
    assert!(d >= MIN_STRUCTURAL_DIM);
    let mut v = vec![0.0; d];
    v[..FIXED_SLOTS].copy_from_slice(&fixed_features(e));
    let buckets = (d - FIXED_SLOTS) as u64;
    for gram in path_ngrams(e) {
        let h = seeded_hash(hash_seed, &gram);
        let slot = FIXED_SLOTS + (h % buckets) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[slot] += sign;
    }
    v
}

pub fn structural_vector(e: &Expression, d: usize, hash_seed: u64) -> Vec<f64> {
    let mut v = raw_structural_features(e, d, hash_seed);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // token count is at least 1, so the norm is positive
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

/// Pairs of distinct canonical states that encode to identical vectors.
pub fn find_collisions(enc: &StateEncoder, states: &[String]) -> Result<Vec<(String, String)>, EncodeError> {
    let mut seen: HashMap<Vec<u64>, String> = HashMap::new();
    let mut out = Vec::new();
    for s in states {
        let canon = parse(s)?.canonical_string();
        let key: Vec<u64> = enc.encode(&canon)?.iter().map(|x| x.to_bits()).collect();
        match seen.get(&key) {
            Some(prev) if *prev != canon => out.push((prev.clone(), canon)),
            Some(_) => {}
            None => {
                seen.insert(key, canon);
            }
        }
    }
    Ok(out)
}

/// Reads a `#dim=<d>` headed TSV of `state<TAB>v1 v2 ... vd` rows.
pub fn load_table<R: BufRead>(reader: R) -> Result<StateEncoder, EncodeError> {
    let fmt = |line_no: usize, message: &str| EncodeError::FormatError {
        line_no,
        message: message.to_string(),
    };
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => return Err(fmt(1, "empty file")),
    };
    let d: usize = header
        .trim()
        .strip_prefix("#dim=")
        .and_then(|v| v.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| fmt(1, "expected header #dim=<d>"))?;
    let mut entries = HashMap::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (state, values) = line
            .split_once('\t')
            .ok_or_else(|| fmt(line_no, "expected state<TAB>values"))?;
        let vec: Vec<f64> = values
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| fmt(line_no, &e.to_string()))?;
        if vec.len() != d {
            return Err(EncodeError::DimensionMismatch {
                line_no,
                expected: d,
                found: vec.len(),
            });
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(fmt(line_no, "non-finite value"));
        }
        let key = parse(state)
            .map_err(|e| fmt(line_no, &e.to_string()))?
            .canonical_string();
        entries.insert(key, vec);
    }
    Ok(StateEncoder::Table { entries, d })
}

pub fn load_table_path(path: &std::path::Path) -> Result<StateEncoder, EncodeError> {
    let f = std::fs::File::open(path)?;
    load_table(std::io::BufReader::new(f))
}

/// Writes rows in the order given; values use the shortest round-trip format.
pub fn write_table<W: Write>(mut w: W, d: usize, rows: &[(String, Vec<f64>)]) -> std::io::Result<()> {
    writeln!(w, "#dim={d}")?;
    for (state, v) in rows {
        write!(w, "{state}\t")?;
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                w.write_all(b" ")?;
            }
            write!(w, "{x:?}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structural_is_deterministic_and_unit_norm() {
        let enc = StateEncoder::structural(32, 5).unwrap();
        let a = enc.encode("2*(x+3)-4").unwrap();
        let b = enc.encode("2 * (x + 3) - 4").unwrap();
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_slots_for_simple_states() {
        let raw = raw_structural_features(&parse("x").unwrap(), 32, 0);
        assert_eq!(raw[SLOT_TOKENS], 1.0);
        assert_eq!(raw[SLOT_VARIABLES], 1.0);
        assert_eq!(raw[SLOT_DEPTH], 1.0);
        let f = fixed_features(&parse("(12+x)*305").unwrap());
        assert_eq!(f[SLOT_LITERALS], 2.0);
        assert_eq!(f[SLOT_DIGITS], 5.0);
        assert_eq!(f[SLOT_OPERATORS], 1.0);
        assert_eq!(f[SLOT_OPERATORS + 2], 1.0);
        assert_eq!(f[SLOT_OPERATORS + 5], 1.0);
        assert_eq!(f[SLOT_TOKENS], 7.0);
    }

    #[test]
    fn operand_order_changes_vector() {
        let enc = StateEncoder::structural(64, 1).unwrap();
        assert_ne!(enc.encode("x+2").unwrap(), enc.encode("2+x").unwrap());
    }

    #[test]
    fn dimension_floor() {
        assert!(matches!(StateEncoder::structural(15, 0), Err(EncodeError::DimensionTooSmall(15))));
    }

    #[test]
    fn table_round_trip_and_miss() {
        let rows = vec![
            ("x+1".to_string(), vec![0.5, -1.0, 2.0, 0.1]),
            ("2*y".to_string(), vec![1.0, 0.0, 0.0, 0.0]),
            ("3".to_string(), vec![0.0, 0.0, 0.0, 1e-300]),
        ];
        let mut buf = Vec::new();
        write_table(&mut buf, 4, &rows).unwrap();
        let enc = load_table(buf.as_slice()).unwrap();
        match &enc {
            StateEncoder::Table { entries, d } => {
                assert_eq!(*d, 4);
                assert_eq!(entries.len(), 3);
            }
            _ => unreachable!(),
        }
        assert_eq!(enc.encode("x + 1").unwrap(), rows[0].1);
        assert_eq!(enc.encode("3").unwrap(), rows[2].1);
        assert!(matches!(enc.encode("x+2"), Err(EncodeError::MissingState(s)) if s == "x+2"));
    }

    #[test]
    fn table_errors() {
        let bad = "#dim=4\nx\t1 2 3 4\ny\t1 2 3 4 5\n";
        assert!(matches!(
            load_table(bad.as_bytes()),
            Err(EncodeError::DimensionMismatch { line_no: 3, found: 5, .. })
        ));
        assert!(matches!(load_table("".as_bytes()), Err(EncodeError::FormatError { line_no: 1, .. })));
        assert!(matches!(
            load_table("#dim=2\nx\t1 oops\n".as_bytes()),
            Err(EncodeError::FormatError { line_no: 2, .. })
        ));
    }

    #[test]
    fn generated_states_rarely_collide() {
        let corpus = crate::corpus::generate_corpus(3, 4, 6, 2, crate::corpus::PolicyMix::default());
        let mut states: Vec<String> = corpus.pathways.iter().flat_map(|p| p.states.clone()).collect();
        states.sort();
        states.dedup();
        let enc = StateEncoder::structural(64, 0).unwrap();
        let collisions = find_collisions(&enc, &states).unwrap();
        assert!(collisions.is_empty(), "{collisions:?}");
    }
}
