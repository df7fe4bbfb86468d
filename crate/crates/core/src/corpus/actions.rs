//! The ten-action rewrite taxonomy used by the synthetic corpus.
//!
//! Every action rewrites one node (its *site*, addressed by a child-index path
//! from the root) into a mathematically equivalent subtree. Results are always
//! returned in canonical form.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expression;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    AddSubNumbers,
    MultiplyNumbers,
    Commute,
    Associate,
    Distribute,
    Factor,
    CombineLikeTerms,
    SplitNumber,
    CancelDivision,
    IdentityRemove,
}

impl ActionKind {
    pub const ALL: [ActionKind; 10] = [
        ActionKind::AddSubNumbers,
        ActionKind::MultiplyNumbers,
        ActionKind::Commute,
        ActionKind::Associate,
        ActionKind::Distribute,
        ActionKind::Factor,
        ActionKind::CombineLikeTerms,
        ActionKind::SplitNumber,
        ActionKind::CancelDivision,
        ActionKind::IdentityRemove,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::AddSubNumbers => "AddSubNumbers",
            ActionKind::MultiplyNumbers => "MultiplyNumbers",
            ActionKind::Commute => "Commute",
            ActionKind::Associate => "Associate",
            ActionKind::Distribute => "Distribute",
            ActionKind::Factor => "Factor",
            ActionKind::CombineLikeTerms => "CombineLikeTerms",
            ActionKind::SplitNumber => "SplitNumber",
            ActionKind::CancelDivision => "CancelDivision",
            ActionKind::IdentityRemove => "IdentityRemove",
        }
    }

    pub fn index(self) -> usize {
        ActionKind::ALL.iter().position(|&k| k == self).unwrap()
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = ActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| ActionError::UnknownAction(s.to_string()))
    }
}

/// A concrete application site for an action.
///
/// `first`/`second` are child positions inside the site node; their meaning
/// depends on the kind (operand pair, swap position, factor index...).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionInstance {
    pub kind: ActionKind,
    pub path: Vec<usize>,
    pub first: usize,
    pub second: usize,
}

impl ActionInstance {
    pub fn new(kind: ActionKind, path: Vec<usize>, first: usize, second: usize) -> Self {
        Self {
            kind,
            path,
            first,
            second,
        }
    }

    /// Instance at the root with a pair of child positions.
    pub fn at_root(kind: ActionKind, first: usize, second: usize) -> Self {
        Self::new(kind, Vec::new(), first, second)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("action {0} has no valid site")]
    InapplicableAction(ActionKind),
    #[error("unknown action label {0:?}")]
    UnknownAction(String),
}

pub fn apply_action(e: &Expression, action: &ActionInstance) -> Result<Expression, ActionError> {
    let inapplicable = || ActionError::InapplicableAction(action.kind);
    let site = e.at_path(&action.path).ok_or_else(inapplicable)?;
    let rewritten = rewrite(site, action).ok_or_else(inapplicable)?;
    let mut out = e.clone();
    *out.at_path_mut(&action.path).ok_or_else(inapplicable)? = rewritten;
    Ok(out.canonical())
}

/// Every applicable instance with its result, in a fixed order: pre-order over
/// nodes, then taxonomy order, then ascending child positions.
pub fn enumerate_actions(e: &Expression) -> Vec<(ActionInstance, Expression)> {
    let mut out = Vec::new();
    let mut path = Vec::new();
    collect(e, e, &mut path, &mut out);
    out
}

fn collect(
    root: &Expression,
    node: &Expression,
    path: &mut Vec<usize>,
    out: &mut Vec<(ActionInstance, Expression)>,
) {
    for kind in ActionKind::ALL {
        for (first, second) in candidate_positions(kind, node) {
            let inst = ActionInstance::new(kind, path.clone(), first, second);
            if let Some(rewritten) = rewrite(node, &inst) {
                let mut result = root.clone();
                *result.at_path_mut(path).expect("valid path") = rewritten;
                out.push((inst, result.canonical()));
            }
        }
    }
    for (i, child) in node.children().into_iter().enumerate() {
        path.push(i);
        collect(root, child, path, out);
        path.pop();
    }
}

fn candidate_positions(kind: ActionKind, node: &Expression) -> Vec<(usize, usize)> {
    let n = match node {
        Expression::Add(c) | Expression::Mul(c) => c.len(),
        Expression::Div(..) | Expression::Pow(..) => 2,
        _ => 0,
    };
    match kind {
        // ordered pairs: the combined value lands at `first`, `second` is removed
        ActionKind::AddSubNumbers | ActionKind::MultiplyNumbers | ActionKind::CombineLikeTerms => (0
            ..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect(),
        ActionKind::Factor => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect(),
        ActionKind::Commute => (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        ActionKind::Associate | ActionKind::Distribute | ActionKind::SplitNumber => {
            (0..n).map(|i| (i, 0)).collect()
        }
        ActionKind::IdentityRemove => (0..n).map(|i| (i, 0)).collect(),
        ActionKind::CancelDivision => {
            if matches!(node, Expression::Div(..)) {
                vec![(0, 0)]
            } else {
                Vec::new()
            }
        }
    }
}

fn remove_and_collapse(mut children: Vec<Expression>, j: usize, add: bool) -> Expression {
    children.remove(j);
    match children.len() {
        1 => children.pop().unwrap(),
        _ if add => Expression::Add(children),
        _ => Expression::Mul(children),
    }
}

/// Coefficient/variable view of a like term: `v`, `c*v`, `-v`, `-(c*v)`.
fn like_term(e: &Expression) -> Option<(BigInt, char)> {
    match e {
        Expression::Variable(v) => Some((BigInt::one(), *v)),
        Expression::Mul(f) if f.len() == 2 => match (&f[0], &f[1]) {
            (Expression::Integer(c), Expression::Variable(v)) => Some((c.clone(), *v)),
            _ => None,
        },
        Expression::Neg(inner) => {
            let (c, v) = like_term(inner)?;
            matches!(inner.as_ref(), Expression::Variable(_) | Expression::Mul(_)).then_some((-c, v))
        }
        _ => None,
    }
}

fn like_term_expr(coef: BigInt, v: char) -> Expression {
    let var = Expression::var(v);
    if coef.is_zero() {
        Expression::int(0)
    } else if coef.is_one() {
        var
    } else if coef == -BigInt::one() {
        Expression::neg(var)
    } else if coef > BigInt::zero() {
        Expression::Mul(vec![Expression::Integer(coef), var])
    } else {
        Expression::neg(Expression::Mul(vec![Expression::Integer(-coef), var]))
    }
}

fn is_int(e: &Expression, v: i64) -> bool {
    matches!(e, Expression::Integer(x) if *x == BigInt::from(v))
}

fn rewrite(node: &Expression, a: &ActionInstance) -> Option<Expression> {
    let (i, j) = (a.first, a.second);
    match a.kind {
        ActionKind::AddSubNumbers | ActionKind::MultiplyNumbers => {
            let (children, add) = match (node, a.kind) {
                (Expression::Add(c), ActionKind::AddSubNumbers) => (c, true),
                (Expression::Mul(c), ActionKind::MultiplyNumbers) => (c, false),
                _ => return None,
            };
            if i == j || i.max(j) >= children.len() {
                return None;
            }
            let x = children[i].as_literal()?;
            let y = children[j].as_literal()?;
            let mut out = children.clone();
            out[i] = Expression::literal(if add { x + y } else { x * y });
            Some(remove_and_collapse(out, j, add))
        }
        ActionKind::Commute => {
            let children = match node {
                Expression::Add(c) | Expression::Mul(c) => c,
                _ => return None,
            };
            if j != i + 1 || j >= children.len() || children[i] == children[j] {
                return None;
            }
            let mut out = children.clone();
            out.swap(i, j);
            Some(match node {
                Expression::Add(_) => Expression::Add(out),
                _ => Expression::Mul(out),
            })
        }
        ActionKind::Associate => {
            // (x1*...*xn)/c -> x1*...*(xi/c)*...*xn
            let Expression::Div(num, den) = node else {
                return None;
            };
            let Expression::Mul(factors) = num.as_ref() else {
                return None;
            };
            if i >= factors.len() {
                return None;
            }
            let mut out = factors.clone();
            out[i] = Expression::div(factors[i].clone(), den.as_ref().clone());
            Some(Expression::Mul(out))
        }
        ActionKind::Distribute => {
            // a*(b1+...+bn) or (b1+...+bn)*a with exactly two factors
            let Expression::Mul(factors) = node else {
                return None;
            };
            if factors.len() != 2 || i > 1 {
                return None;
            }
            let Expression::Add(terms) = &factors[i] else {
                return None;
            };
            let other = &factors[1 - i];
            let product = |t: &Expression| {
                if i == 1 {
                    Expression::Mul(vec![other.clone(), t.clone()])
                } else {
                    Expression::Mul(vec![t.clone(), other.clone()])
                }
            };
            let out = terms
                .iter()
                .map(|t| match t {
                    Expression::Neg(inner) => Expression::neg(product(inner)),
                    _ => product(t),
                })
                .collect();
            Some(Expression::Add(out))
        }
        ActionKind::Factor => {
            // a*b + a*c -> a*(b+c) for two binary products sharing the first factor
            let Expression::Add(terms) = node else {
                return None;
            };
            if i >= j || j >= terms.len() {
                return None;
            }
            match (&terms[i], &terms[j]) {
                (Expression::Mul(p), Expression::Mul(q))
                    if p.len() == 2 && q.len() == 2 && p[0] == q[0] =>
                {
                    let mut out = terms.clone();
                    out[i] = Expression::Mul(vec![
                        p[0].clone(),
                        Expression::Add(vec![p[1].clone(), q[1].clone()]),
                    ]);
                    Some(remove_and_collapse(out, j, true))
                }
                _ => None,
            }
        }
        ActionKind::CombineLikeTerms => {
            let Expression::Add(terms) = node else {
                return None;
            };
            if i == j || i.max(j) >= terms.len() {
                return None;
            }
            let (c1, v1) = like_term(&terms[i])?;
            let (c2, v2) = like_term(&terms[j])?;
            if v1 != v2 {
                return None;
            }
            let mut out = terms.clone();
            out[i] = like_term_expr(c1 + c2, v1);
            Some(remove_and_collapse(out, j, true))
        }
        ActionKind::SplitNumber => {
            // n -> (n - n mod 10) + (n mod 10) for n >= 10 inside a sum
            let Expression::Add(terms) = node else {
                return None;
            };
            let Expression::Integer(n) = terms.get(i)? else {
                return None;
            };
            let ten = BigInt::from(10);
            let units = n % &ten;
            if *n < ten || units.is_zero() {
                return None;
            }
            let mut out = terms.clone();
            out[i] = Expression::Integer(n - &units);
            out.insert(i + 1, Expression::Integer(units));
            Some(Expression::Add(out))
        }
        ActionKind::CancelDivision => {
            let Expression::Div(num, den) = node else {
                return None;
            };
            if let (Some(n), Some(d)) = (num.as_literal(), den.as_literal()) {
                if d.is_zero() || !(&n % &d).is_zero() {
                    return None;
                }
                return Some(Expression::literal(n / d));
            }
            if num == den {
                return Some(Expression::int(1));
            }
            if let Expression::Mul(factors) = num.as_ref() {
                let k = factors.iter().position(|f| f == den.as_ref())?;
                return Some(remove_and_collapse(factors.clone(), k, false));
            }
            None
        }
        ActionKind::IdentityRemove => match node {
            Expression::Add(terms) if is_int(terms.get(i)?, 0) => {
                Some(remove_and_collapse(terms.clone(), i, true))
            }
            Expression::Mul(factors) if is_int(factors.get(i)?, 1) => {
                Some(remove_and_collapse(factors.clone(), i, false))
            }
            Expression::Pow(b, x) if i == 0 && is_int(x, 1) => Some(b.as_ref().clone()),
            Expression::Div(n, d) if i == 0 && is_int(d, 1) => Some(n.as_ref().clone()),
            _ => None,
        },
    }
}

/// Whether some instance of `kind` rewrites `from` into `to` (canonical compare).
pub fn replays(from: &Expression, kind: ActionKind, to: &Expression) -> bool {
    let target = to.canonical();
    enumerate_actions(from)
        .into_iter()
        .any(|(inst, result)| inst.kind == kind && result == target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn apply_root(s: &str, kind: ActionKind, i: usize, j: usize) -> Result<String, ActionError> {
        let e = parse(s).unwrap();
        apply_action(&e, &ActionInstance::at_root(kind, i, j)).map(|r| r.canonical_string())
    }

    #[test]
    fn add_sub_numbers_matches_fh2t_example() {
        assert_eq!(
            apply_root("11+55+y+89+45", ActionKind::AddSubNumbers, 0, 3).unwrap(),
            "100+55+y+45"
        );
        assert_eq!(
            apply_root("100+55+y+45", ActionKind::AddSubNumbers, 1, 3).unwrap(),
            "100+100+y"
        );
        assert_eq!(apply_root("x-3+1", ActionKind::AddSubNumbers, 1, 2).unwrap(), "x-2");
        assert_eq!(apply_root("2+3", ActionKind::AddSubNumbers, 0, 1).unwrap(), "5");
        // dropping 55 onto 45 keeps the sum in 45's slot
        assert_eq!(
            apply_root("100+55+y+45", ActionKind::AddSubNumbers, 3, 1).unwrap(),
            "100+y+100"
        );
    }

    #[test]
    fn commute_and_identity() {
        assert_eq!(apply_root("x+1", ActionKind::Commute, 0, 1).unwrap(), "1+x");
        assert_eq!(apply_root("x+0", ActionKind::IdentityRemove, 1, 0).unwrap(), "x");
        assert_eq!(apply_root("1*x*y", ActionKind::IdentityRemove, 0, 0).unwrap(), "x*y");
        assert_eq!(apply_root("x^1", ActionKind::IdentityRemove, 0, 0).unwrap(), "x");
        assert!(matches!(
            apply_root("x+x", ActionKind::Commute, 0, 1),
            Err(ActionError::InapplicableAction(ActionKind::Commute))
        ));
    }

    #[test]
    fn distribute_and_factor_are_inverse() {
        let d = apply_root("3*(x+2)", ActionKind::Distribute, 1, 0).unwrap();
        assert_eq!(d, "3*x+3*2");
        assert_eq!(apply_root(&d, ActionKind::Factor, 0, 1).unwrap(), "3*(x+2)");
        assert_eq!(
            apply_root("2*(x-1)", ActionKind::Distribute, 1, 0).unwrap(),
            "2*x-2*1"
        );
        assert_eq!(
            apply_root("(x+1)*4", ActionKind::Distribute, 0, 0).unwrap(),
            "x*4+1*4"
        );
    }

    #[test]
    fn combine_split_multiply() {
        assert_eq!(
            apply_root("2*x+5+3*x", ActionKind::CombineLikeTerms, 0, 2).unwrap(),
            "5*x+5"
        );
        assert_eq!(apply_root("x-x", ActionKind::CombineLikeTerms, 0, 1).unwrap(), "0");
        assert_eq!(apply_root("y+55", ActionKind::SplitNumber, 1, 0).unwrap(), "y+50+5");
        assert!(apply_root("y+50", ActionKind::SplitNumber, 1, 0).is_err());
        assert_eq!(apply_root("2*x*3", ActionKind::MultiplyNumbers, 0, 2).unwrap(), "6*x");
    }

    #[test]
    fn division_actions() {
        assert_eq!(
            apply_root("2*x*6/3", ActionKind::Associate, 2, 0).unwrap(),
            "2*x*(6/3)"
        );
        assert_eq!(apply_root("12/4", ActionKind::CancelDivision, 0, 0).unwrap(), "3");
        assert!(apply_root("12/5", ActionKind::CancelDivision, 0, 0).is_err());
        assert_eq!(apply_root("3*x/3", ActionKind::CancelDivision, 0, 0).unwrap(), "x");
        assert_eq!(apply_root("x/1", ActionKind::IdentityRemove, 0, 0).unwrap(), "x");
    }

    #[test]
    fn nested_sites_and_enumeration() {
        let e = parse("y+2*(3+4)").unwrap();
        let inst = ActionInstance::new(ActionKind::AddSubNumbers, vec![1, 1], 0, 1);
        assert_eq!(apply_action(&e, &inst).unwrap().canonical_string(), "y+2*7");
        let all = enumerate_actions(&e);
        assert!(all.iter().any(|(a, _)| *a == inst));
        // enumeration is deterministic
        assert_eq!(all, enumerate_actions(&e));
        for (inst, result) in &all {
            assert_eq!(&apply_action(&e, inst).unwrap(), result);
        }
    }

    #[test]
    fn labels_round_trip() {
        for k in ActionKind::ALL {
            assert_eq!(k.name().parse::<ActionKind>().unwrap(), k);
        }
        assert!("Nope".parse::<ActionKind>().is_err());
    }
}
