//! Synthetic corpus: problems built backwards from goal expressions, and
//! student attempts sampled from three policies.
//!
//! * optimal: a uniformly sampled BFS-shortest path
//! * noisy: shortest-path steps with one or more random detour actions
//! * abandoning: a prefix of an optimal or noisy attempt, `completed = false`

use std::collections::HashMap;
use std::rc::Rc;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use super::actions::{enumerate_actions, ActionKind};
use super::bfs::ShortestPaths;
use super::{Pathway, Problem, MAX_STATES};
use crate::expr::Expression;
use crate::nn::rng::Rng;

/// BFS depth bound used while generating.
pub const GEN_MAX_DEPTH: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyMix {
    pub optimal: f64,
    pub noisy: f64,
    pub abandoning: f64,
}

impl PolicyMix {
    pub fn new(optimal: f64, noisy: f64, abandoning: f64) -> Self {
        Self {
            optimal,
            noisy,
            abandoning,
        }
    }

    pub fn optimal_only() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.optimal, self.noisy, self.abandoning]
    }

    pub fn is_valid(&self) -> bool {
        let a = self.as_array();
        a.iter().all(|p| p.is_finite() && *p >= 0.0) && (a.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }
}

impl Default for PolicyMix {
    fn default() -> Self {
        Self::new(0.5, 0.35, 0.15)
    }
}

/// Latent per-student parameters and the outcomes derived from them.
///
/// `post_score` depends linearly on the optimal-policy rate and
/// `flex_score` on the noisy-policy (exploration) rate, each plus Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentProfile {
    pub student_id: String,
    pub p_optimal: f64,
    pub p_noisy: f64,
    pub p_abandoning: f64,
    pub post_score: f64,
    pub flex_score: f64,
}

pub const POST_SCORE_INTERCEPT: f64 = 5.0;
pub const POST_SCORE_SLOPE: f64 = 4.0;
pub const FLEX_SCORE_INTERCEPT: f64 = 3.0;
pub const FLEX_SCORE_SLOPE: f64 = 4.0;
pub const OUTCOME_NOISE_SD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub problems: Vec<Problem>,
    pub pathways: Vec<Pathway>,
    pub students: Vec<StudentProfile>,
}

#[derive(Clone, Copy)]
enum Policy {
    Optimal,
    Noisy,
    Abandoning,
}

pub fn generate_corpus(
    seed: u64,
    n_problems: usize,
    n_students: usize,
    attempts_per_student: usize,
    mix: PolicyMix,
) -> GeneratedCorpus {
    assert!(mix.is_valid(), "policy mix must be a probability vector");
    let root = Rng::new(seed);

    let problems: Vec<(Problem, Expression, Expression)> = (0..n_problems)
        .map(|i| build_problem(i, &mut root.split_str(&format!("problem:{i}"))))
        .collect();

    let students: Vec<StudentProfile> = (0..n_students)
        .map(|s| sample_student(s, mix, &mut root.split_str(&format!("student:{s}"))))
        .collect();

    let mut pathways = Vec::new();
    for (p_idx, (problem, start, goal)) in problems.iter().enumerate() {
        let mut planner = Planner::new(goal.clone());
        for (s_idx, student) in students.iter().enumerate() {
            let weights = [student.p_optimal, student.p_noisy, student.p_abandoning];
            for a in 0..attempts_per_student {
                let mut rng = root.split_str(&format!("attempt:{s_idx}:{p_idx}:{a}"));
                let policy = match rng.categorical(&weights) {
                    0 => Policy::Optimal,
                    1 => Policy::Noisy,
                    _ => Policy::Abandoning,
                };
                let (states, actions, completed) = planner.attempt(start, policy, &mut rng);
                pathways.push(Pathway {
                    problem_id: problem.problem_id.clone(),
                    student_id: student.student_id.clone(),
                    attempt_id: format!("{}-{}-a{a}", student.student_id, problem.problem_id),
                    states: states.iter().map(|e| e.canonical_string()).collect(),
                    actions: Some(actions.iter().map(|k| k.name().to_string()).collect()),
                    completed,
                });
            }
        }
    }

    GeneratedCorpus {
        problems: problems.into_iter().map(|(p, _, _)| p).collect(),
        pathways,
        students,
    }
}

fn sample_student(index: usize, mix: PolicyMix, rng: &mut Rng) -> StudentProfile {
    const CONCENTRATION: f64 = 3.0;
    let base = mix.as_array();
    let active: Vec<usize> = (0..3).filter(|&i| base[i] > 0.0).collect();
    let alphas: Vec<f64> = active.iter().map(|&i| CONCENTRATION * 3.0 * base[i]).collect();
    let draw = rng.dirichlet(&alphas);
    let mut p = [0.0; 3];
    for (slot, &i) in active.iter().enumerate() {
        p[i] = draw[slot];
    }
    let post = POST_SCORE_INTERCEPT + POST_SCORE_SLOPE * p[0] + OUTCOME_NOISE_SD * rng.normal();
    let flex = FLEX_SCORE_INTERCEPT + FLEX_SCORE_SLOPE * p[1] + OUTCOME_NOISE_SD * rng.normal();
    StudentProfile {
        student_id: format!("s{index:03}"),
        p_optimal: p[0],
        p_noisy: p[1],
        p_abandoning: p[2],
        post_score: post,
        flex_score: flex,
    }
}

const VARIABLES: [char; 10] = ['x', 'y', 'z', 'a', 'b', 'm', 'n', 'p', 'q', 'w'];

fn goal_template(index: usize, rng: &mut Rng) -> Expression {
    let v = Expression::var(VARIABLES[index % VARIABLES.len()]);
    let mut num = |lo: i64, hi: i64| Expression::int(rng.range(lo, hi));
    match index % 6 {
        0 => Expression::Add(vec![num(10, 60), v, num(10, 60)]),
        1 => Expression::Add(vec![Expression::Mul(vec![num(2, 9), v]), num(2, 30)]),
        2 => Expression::Mul(vec![num(2, 6), Expression::Add(vec![v, num(2, 12)])]),
        3 => Expression::Mul(vec![num(2, 12), v]),
        4 => Expression::Add(vec![v, num(12, 40)]),
        _ => Expression::Add(vec![
            Expression::Mul(vec![num(2, 6), v.clone()]),
            Expression::Mul(vec![num(2, 6), Expression::var('k')]),
        ]),
    }
}

/// One-step predecessors of `target`: states from which a single forward
/// action reaches `target`.
pub fn inverse_moves(target: &Expression, rng: &mut Rng) -> Vec<Expression> {
    let mut candidates = Vec::new();
    let mut paths = Vec::new();
    collect_paths(target, &mut Vec::new(), &mut paths);
    for path in &paths {
        let node = target.at_path(path).expect("path from traversal");
        let mut replace = |with: Expression| {
            let mut e = target.clone();
            *e.at_path_mut(path).expect("valid") = with;
            candidates.push(e.canonical());
        };
        if let Some(n) = node.as_literal().and_then(|v| v.to_i64()) {
            if n >= 2 {
                let a = rng.range(1, n - 1);
                replace(Expression::Add(vec![Expression::int(a), Expression::int(n - a)]));
                let divisors: Vec<i64> = (2..n).filter(|d| n % d == 0).collect();
                if let Some(&d) = rng.choose(&divisors) {
                    replace(Expression::Mul(vec![Expression::int(d), Expression::int(n / d)]));
                }
                let m = rng.range(2, 4);
                replace(Expression::div(Expression::int(n * m), Expression::int(m)));
            }
        }
        if let Expression::Mul(f) = node {
            if let [Expression::Integer(c), Expression::Variable(v)] = f.as_slice() {
                let c = c.to_i64().unwrap_or(0);
                if c >= 2 {
                    let a = rng.range(1, c - 1);
                    let term = |k: i64| {
                        if k == 1 {
                            Expression::var(*v)
                        } else {
                            Expression::Mul(vec![Expression::int(k), Expression::var(*v)])
                        }
                    };
                    replace(Expression::Add(vec![term(a), term(c - a)]));
                }
            }
            if let Some(i) = f.iter().position(|c| matches!(c, Expression::Div(..))) {
                if let Expression::Div(num, den) = &f[i] {
                    let mut inner = f.clone();
                    inner[i] = num.as_ref().clone();
                    replace(Expression::div(Expression::Mul(inner), den.as_ref().clone()));
                }
            }
        }
        match node {
            Expression::Add(c) => {
                let mut with_zero = c.clone();
                with_zero.insert(rng.below(c.len() + 1), Expression::int(0));
                replace(Expression::Add(with_zero));
            }
            Expression::Mul(c) => {
                let mut with_one = c.clone();
                with_one.insert(rng.below(c.len() + 1), Expression::int(1));
                replace(Expression::Mul(with_one));
            }
            _ => {}
        }
    }
    // Commute, Factor and Distribute undo one another in a single step.
    for (inst, result) in enumerate_actions(target) {
        if matches!(
            inst.kind,
            ActionKind::Commute | ActionKind::Factor | ActionKind::Distribute
        ) {
            candidates.push(result);
        }
    }
    let goal = target.canonical();
    candidates.retain(|c| *c != goal && enumerate_actions(c).iter().any(|(_, r)| *r == goal));
    candidates.sort_by_key(|c| c.canonical_string());
    candidates.dedup();
    candidates
}

fn collect_paths(e: &Expression, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(path.clone());
    for (i, c) in e.children().into_iter().enumerate() {
        path.push(i);
        collect_paths(c, path, out);
        path.pop();
    }
}

fn leaf_count(e: &Expression) -> usize {
    let children = e.children();
    if children.is_empty() {
        1
    } else {
        children.into_iter().map(leaf_count).sum()
    }
}

fn build_problem(index: usize, rng: &mut Rng) -> (Problem, Expression, Expression) {
    const MAX_LEAVES: usize = 7;
    const MAX_EXPLORED: usize = 60_000;
    loop {
        let goal = goal_template(index, rng).canonical();
        let backward_steps = 2 + rng.below(2);
        let mut start = goal.clone();
        let mut ok = true;
        for _ in 0..backward_steps {
            let moves: Vec<Expression> = inverse_moves(&start, rng)
                .into_iter()
                .filter(|m| leaf_count(m) <= MAX_LEAVES)
                .collect();
            match rng.choose(&moves) {
                Some(m) => start = m.clone(),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let Ok(sp) = ShortestPaths::search(&start, &goal, GEN_MAX_DEPTH) else {
            continue;
        };
        if sp.distance() < 2 || sp.explored() > MAX_EXPLORED {
            continue;
        }
        let problem = Problem {
            problem_id: format!("p{index:03}"),
            start: start.canonical_string(),
            goal: goal.canonical_string(),
            min_steps: sp.distance(),
        };
        return (problem, start, goal);
    }
}

/// Per-problem BFS cache keyed on the canonical string of the search origin.
struct Planner {
    goal: Expression,
    cache: HashMap<String, Option<Rc<ShortestPaths>>>,
}

impl Planner {
    fn new(goal: Expression) -> Self {
        Self {
            goal,
            cache: HashMap::new(),
        }
    }

    fn plan(&mut self, from: &Expression) -> Option<Rc<ShortestPaths>> {
        let key = from.canonical_string();
        if let Some(hit) = self.cache.get(&key) {
            return hit.clone();
        }
        let found = ShortestPaths::search(from, &self.goal, GEN_MAX_DEPTH)
            .ok()
            .map(Rc::new);
        self.cache.insert(key, found.clone());
        found
    }

    fn optimal_path(&mut self, start: &Expression, rng: &mut Rng) -> (Vec<Expression>, Vec<ActionKind>) {
        let sp = self.plan(start).expect("problem start reaches its goal");
        sp.sample_path(rng)
    }

    /// Shortest-path walk with `detours` random off-path actions inserted.
    fn noisy_path(
        &mut self,
        start: &Expression,
        detours: usize,
        rng: &mut Rng,
    ) -> (Vec<Expression>, Vec<ActionKind>) {
        let (base, _) = self.optimal_path(start, rng);
        let min_steps = base.len() - 1;
        let mut detour_at: Vec<usize> = (0..detours).map(|_| rng.below(min_steps)).collect();
        detour_at.sort_unstable();

        let mut states = vec![start.clone()];
        let mut actions = Vec::new();
        let mut cur = start.clone();
        let mut step = 0;
        let mut pending = detour_at.into_iter().peekable();
        while cur != self.goal && actions.len() < MAX_STATES - 1 {
            let wants_detour = pending.peek().is_some_and(|&d| d <= step);
            let mut moved = false;
            if wants_detour {
                pending.next();
                if let Some((kind, next)) = self.detour(&cur, MAX_STATES - 1 - actions.len(), rng) {
                    actions.push(kind);
                    states.push(next.clone());
                    cur = next;
                    moved = true;
                }
            }
            if !moved {
                let sp = self.plan(&cur).expect("walk stays solvable");
                let (path, kinds) = sp.sample_path(rng);
                actions.push(kinds[0]);
                states.push(path[1].clone());
                cur = path[1].clone();
                step += 1;
            }
        }
        (states, actions)
    }

    /// A random non-goal action (uniform over kinds, then sites) whose result
    /// can still reach the goal within `budget - 1` further steps.
    fn detour(&mut self, cur: &Expression, budget: usize, rng: &mut Rng) -> Option<(ActionKind, Expression)> {
        let options: Vec<(ActionKind, Expression)> = enumerate_actions(cur)
            .into_iter()
            .filter(|(_, r)| *r != self.goal)
            .map(|(inst, r)| (inst.kind, r))
            .collect();
        let mut kinds: Vec<ActionKind> = options.iter().map(|(k, _)| *k).collect();
        kinds.sort();
        kinds.dedup();
        for _ in 0..6 {
            let kind = *rng.choose(&kinds)?;
            let sites: Vec<&(ActionKind, Expression)> =
                options.iter().filter(|(k, _)| *k == kind).collect();
            let (k, next) = (*rng.choose(&sites)?).clone();
            if let Some(sp) = self.plan(&next) {
                if sp.distance() < budget {
                    return Some((k, next));
                }
            }
        }
        None
    }

    fn attempt(
        &mut self,
        start: &Expression,
        policy: Policy,
        rng: &mut Rng,
    ) -> (Vec<Expression>, Vec<ActionKind>, bool) {
        match policy {
            Policy::Optimal => {
                let (s, a) = self.optimal_path(start, rng);
                (s, a, true)
            }
            Policy::Noisy => {
                let detours = 1 + rng.below(2);
                let (s, a) = self.noisy_path(start, detours, rng);
                (s, a, true)
            }
            Policy::Abandoning => {
                let (mut s, mut a) = if rng.bernoulli(0.5) {
                    self.optimal_path(start, rng)
                } else {
                    self.noisy_path(start, 1, rng)
                };
                if s.len() > 2 {
                    // keep 2..=T-1 states so the goal is never reached
                    let keep = 2 + rng.below(s.len() - 2);
                    s.truncate(keep);
                    a.truncate(keep - 1);
                } else {
                    s.truncate(1);
                    a.clear();
                    match self.detour(start, MAX_STATES, rng) {
                        Some((k, next)) => {
                            s.push(next);
                            a.push(k);
                        }
                        None => {
                            let (opt_s, opt_a) = self.optimal_path(start, rng);
                            return (opt_s, opt_a, true);
                        }
                    }
                }
                (s, a, false)
            }
        }
    }
}
