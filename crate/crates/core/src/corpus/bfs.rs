//! Breadth-first search over the action closure, keyed on canonical strings.

use std::collections::HashMap;

use thiserror::Error;

use super::actions::{enumerate_actions, ActionKind};
use crate::expr::Expression;
use crate::nn::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BfsError {
    #[error("goal not reachable within {0} steps")]
    NotReachable(usize),
}

/// Layered BFS from a start state until the goal layer is complete.
///
/// Every node records all of its predecessors in the previous layer, so the
/// structure contains every shortest path from `start` to `goal`.
#[derive(Debug, Clone)]
pub struct ShortestPaths {
    nodes: Vec<Expression>,
    preds: Vec<Vec<(usize, ActionKind)>>,
    goal: usize,
    distance: usize,
}

impl ShortestPaths {
    pub fn search(start: &Expression, goal: &Expression, max_depth: usize) -> Result<Self, BfsError> {
        let start = start.canonical();
        let goal_key = goal.canonical_string();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut nodes = vec![start.clone()];
        let mut depth = vec![0usize];
        let mut preds: Vec<Vec<(usize, ActionKind)>> = vec![Vec::new()];
        index.insert(start.canonical_string(), 0);
        if start.canonical_string() == goal_key {
            return Ok(Self {
                nodes,
                preds,
                goal: 0,
                distance: 0,
            });
        }
        let mut frontier = vec![0usize];
        let mut level = 0;
        while level < max_depth && !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                for (inst, result) in enumerate_actions(&nodes[u]) {
                    let key = result.canonical_string();
                    match index.get(&key) {
                        Some(&v) => {
                            if depth[v] == level + 1 && !preds[v].contains(&(u, inst.kind)) {
                                preds[v].push((u, inst.kind));
                            }
                        }
                        None => {
                            let v = nodes.len();
                            index.insert(key, v);
                            nodes.push(result);
                            depth.push(level + 1);
                            preds.push(vec![(u, inst.kind)]);
                            next.push(v);
                        }
                    }
                }
            }
            level += 1;
            if let Some(&g) = index.get(&goal_key) {
                return Ok(Self {
                    nodes,
                    preds,
                    goal: g,
                    distance: level,
                });
            }
            frontier = next;
        }
        Err(BfsError::NotReachable(max_depth))
    }

    pub fn distance(&self) -> usize {
        self.distance
    }

    pub fn explored(&self) -> usize {
        self.nodes.len()
    }

    /// Walks back from the goal picking a uniformly random predecessor at each
    /// layer. Returns the state sequence (start..=goal) and the action labels.
    pub fn sample_path(&self, rng: &mut Rng) -> (Vec<Expression>, Vec<ActionKind>) {
        let mut states = vec![self.nodes[self.goal].clone()];
        let mut actions = Vec::new();
        let mut cur = self.goal;
        while !self.preds[cur].is_empty() {
            let &(prev, kind) = rng.choose(&self.preds[cur]).expect("non-empty");
            states.push(self.nodes[prev].clone());
            actions.push(kind);
            cur = prev;
        }
        states.reverse();
        actions.reverse();
        (states, actions)
    }

    /// All shortest paths as (states, actions); exponential, for tests and small cases.
    pub fn all_paths(&self) -> Vec<(Vec<Expression>, Vec<ActionKind>)> {
        fn walk(
            sp: &ShortestPaths,
            node: usize,
            states: &mut Vec<Expression>,
            actions: &mut Vec<ActionKind>,
            out: &mut Vec<(Vec<Expression>, Vec<ActionKind>)>,
        ) {
            states.push(sp.nodes[node].clone());
            if sp.preds[node].is_empty() {
                let mut s = states.clone();
                let mut a = actions.clone();
                s.reverse();
                a.reverse();
                out.push((s, a));
            } else {
                for &(prev, kind) in &sp.preds[node] {
                    actions.push(kind);
                    walk(sp, prev, states, actions, out);
                    actions.pop();
                }
            }
            states.pop();
        }
        let mut out = Vec::new();
        walk(self, self.goal, &mut Vec::new(), &mut Vec::new(), &mut out);
        out
    }
}

pub fn bfs_min_steps(start: &Expression, goal: &Expression, max_depth: usize) -> Result<usize, BfsError> {
    ShortestPaths::search(start, goal, max_depth).map(|sp| sp.distance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::actions::{apply_action, enumerate_actions};
    use crate::expr::parse;

    #[test]
    fn fh2t_problem_takes_two_steps() {
        let s = parse("11+55+y+89+45").unwrap();
        let g = parse("100+y+100").unwrap();
        assert_eq!(bfs_min_steps(&s, &g, 6), Ok(2));
    }

    #[test]
    fn identity_is_zero_steps() {
        let e = parse("3*(x+2)").unwrap();
        assert_eq!(bfs_min_steps(&e, &e, 0), Ok(0));
    }

    /// Exhaustive enumeration of every one-step successor: "6" is not among them.
    #[test]
    fn one_two_three_needs_two_steps() {
        let s = parse("1+2+3").unwrap();
        let g = parse("6").unwrap();
        let one_step: Vec<String> = enumerate_actions(&s)
            .into_iter()
            .map(|(_, r)| r.canonical_string())
            .collect();
        assert!(!one_step.contains(&"6".to_string()));
        let two_step = one_step
            .iter()
            .flat_map(|m| enumerate_actions(&parse(m).unwrap()))
            .any(|(_, r)| r.canonical_string() == "6");
        assert!(two_step);
        assert_eq!(bfs_min_steps(&s, &g, 6), Ok(2));
    }

    #[test]
    fn not_reachable_within_depth() {
        let s = parse("1+2+3").unwrap();
        let g = parse("6").unwrap();
        assert_eq!(bfs_min_steps(&s, &g, 1), Err(BfsError::NotReachable(1)));
        let x = parse("x").unwrap();
        assert_eq!(bfs_min_steps(&x, &g, 3), Err(BfsError::NotReachable(3)));
    }

    #[test]
    fn sampled_paths_replay_and_are_shortest() {
        let s = parse("11+55+y+89+45").unwrap();
        let g = parse("100+y+100").unwrap();
        let sp = ShortestPaths::search(&s, &g, 6).unwrap();
        let all = sp.all_paths();
        assert!(all.len() >= 2);
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let (states, actions) = sp.sample_path(&mut rng);
            assert_eq!(states.len(), 3);
            assert_eq!(actions, vec![ActionKind::AddSubNumbers; 2]);
            for w in states.windows(2) {
                assert!(enumerate_actions(&w[0]).iter().any(|(_, r)| *r == w[1]));
            }
            assert!(all.iter().any(|(p, _)| *p == states));
        }
        let _ = apply_action;
    }
}
