//! Brute-force references: exhaustive enumeration of small ground MDPs,
//! exact policy iteration, random MDPs, and the true abstract MDP a grounded
//! AMDP faces once its children have converged.
//!
//! Nothing here reuses the planner's backup code.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::{ExecutionContext, Outcome};
use crate::lamdp::{abstract_state, eval_fail, eval_goal, pseudo_reward, ActionTarget};
use crate::mdp::{Environment, GroundState, SeededRng, Terminal};
use crate::planner::PlanState;
use crate::rmax::TabularModel;
use crate::scalar::Scalar;

/// Refuse to enumerate more states than this.
pub const ENUMERATION_LIMIT: usize = 100_000;

/// Above this many states policy evaluation iterates instead of factorizing.
const DIRECT_SOLVE_LIMIT: usize = 1_200;

/// Explicit finite MDP with sparse transition rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedMdp<F> {
    pub states: Vec<String>,
    /// Ground states behind `states`; empty for synthetic MDPs.
    pub ground: Vec<GroundState>,
    pub actions: Vec<String>,
    /// `transitions[s][a]` lists `(next, probability, reward)`.
    pub transitions: Vec<Vec<Vec<(usize, F, F)>>>,
    pub terminal: Vec<bool>,
}

impl<F: Scalar> EnumeratedMdp<F> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.states.iter().position(|k| k == key)
    }

    /// Largest deviation of a transition row's total probability from 1.
    pub fn max_row_error(&self) -> f64 {
        self.transitions
            .iter()
            .flatten()
            .map(|row| (row.iter().map(|t| t.1.as_f64()).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Breadth-first closure of `starts` under every primitive, expanding each
/// declared outcome. Terminal states are absorbing.
pub fn enumerate(env: &dyn Environment, starts: &[GroundState]) -> Result<EnumeratedMdp<f64>> {
    let actions = env.primitive_actions().to_vec();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut mdp = EnumeratedMdp {
        states: Vec::new(),
        ground: Vec::new(),
        actions: actions.iter().map(|a| a.id.clone()).collect(),
        transitions: Vec::new(),
        terminal: Vec::new(),
    };
    let mut queue = VecDeque::new();
    let mut admit = |s: GroundState, mdp: &mut EnumeratedMdp<f64>, queue: &mut VecDeque<usize>| -> Result<usize> {
        let key = s.canonical_key();
        if let Some(&i) = index.get(&key) {
            return Ok(i);
        }
        if mdp.states.len() >= ENUMERATION_LIMIT {
            return Err(Error::Oracle(format!("more than {ENUMERATION_LIMIT} reachable states")));
        }
        let i = mdp.states.len();
        index.insert(key.clone(), i);
        mdp.terminal.push(env.terminal(&s) != Terminal::None);
        mdp.states.push(key);
        mdp.ground.push(s);
        mdp.transitions.push(Vec::new());
        queue.push_back(i);
        Ok(i)
    };
    for s in starts {
        admit(s.clone(), &mut mdp, &mut queue)?;
    }
    while let Some(i) = queue.pop_front() {
        let mut rows = Vec::with_capacity(actions.len());
        for a in &actions {
            if mdp.terminal[i] {
                rows.push(vec![(i, 1.0, 0.0)]);
                continue;
            }
            let state = mdp.ground[i].clone();
            let mut row = Vec::new();
            for (p, o) in env.outcomes(&state, a)? {
                let j = admit(o.next_state, &mut mdp, &mut queue)?;
                row.push((j, p, o.reward));
            }
            rows.push(row);
        }
        mdp.transitions[i] = rows;
    }
    Ok(mdp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<F> {
    pub values: Vec<F>,
    pub policy: Vec<usize>,
}

fn q_row(mdp: &EnumeratedMdp<f64>, values: &[f64], gamma: f64, s: usize) -> Vec<f64> {
    mdp.transitions[s]
        .iter()
        .map(|row| row.iter().map(|&(j, p, r)| p * (r + gamma * values[j])).sum())
        .collect()
}

fn to_f64<F: Scalar>(mdp: &EnumeratedMdp<F>) -> EnumeratedMdp<f64> {
    EnumeratedMdp {
        states: mdp.states.clone(),
        ground: mdp.ground.clone(),
        actions: mdp.actions.clone(),
        transitions: mdp
            .transitions
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|row| row.iter().map(|&(j, p, r)| (j, p.as_f64(), r.as_f64())).collect())
                    .collect()
            })
            .collect(),
        terminal: mdp.terminal.clone(),
    }
}

/// Value of a fixed policy; terminal states are worth 0. With `gamma = 1`
/// the policy must reach a terminal state with probability 1.
fn evaluate(mdp: &EnumeratedMdp<f64>, policy: &[usize], gamma: f64) -> Vec<f64> {
    let n = mdp.len();
    if n <= DIRECT_SOLVE_LIMIT {
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for s in 0..n {
            if mdp.terminal[s] {
                continue;
            }
            for &(j, p, r) in &mdp.transitions[s][policy[s]] {
                b[s] += p * r;
                if !mdp.terminal[j] {
                    a[(s, j)] -= gamma * p;
                }
            }
        }
        if let Some(x) = a.lu().solve(&b) {
            if x.iter().all(|v| v.is_finite()) {
                return x.iter().copied().collect();
            }
        }
    }
    // Gauss-Seidel sweeps
    let mut v = vec![0.0; n];
    for _ in 0..1_000_000 {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            if mdp.terminal[s] {
                continue;
            }
            let new: f64 = mdp.transitions[s][policy[s]]
                .iter()
                .map(|&(j, p, r)| p * (r + if mdp.terminal[j] { 0.0 } else { gamma * v[j] }))
                .sum();
            delta = delta.max((new - v[s]).abs());
            v[s] = new;
        }
        if delta < 1e-12 {
            break;
        }
    }
    v
}

fn policy_iteration(mdp: &EnumeratedMdp<f64>, gamma: f64) -> Solution<f64> {
    let n = mdp.len();
    let mut policy = vec![0usize; n];
    loop {
        let values = evaluate(mdp, &policy, gamma);
        let mut stable = true;
        for s in 0..n {
            if mdp.terminal[s] {
                continue;
            }
            let q = q_row(mdp, &values, gamma, s);
            let current = q[policy[s]];
            let (best, bq) = q
                .iter()
                .enumerate()
                .fold((policy[s], current), |(ba, bq), (a, &v)| if v > bq { (a, v) } else { (ba, bq) });
            if bq > current + 1e-10 * current.abs().max(1.0) {
                policy[s] = best;
                stable = false;
            }
        }
        if stable {
            return Solution { values, policy };
        }
    }
}

/// Optimal values and a deterministic optimal policy by policy iteration
/// with exact (linear-system) evaluation.
pub fn exact_solve<F: Scalar>(mdp: &EnumeratedMdp<F>, gamma: F) -> Solution<F> {
    let sol = policy_iteration(&to_f64(mdp), gamma.as_f64());
    Solution {
        values: sol.values.into_iter().map(F::lit).collect(),
        policy: sol.policy,
    }
}

/// Expected return of every state under `policy`.
pub fn policy_values<F: Scalar>(mdp: &EnumeratedMdp<F>, policy: &[usize], gamma: F) -> Vec<F> {
    evaluate(&to_f64(mdp), policy, gamma.as_f64())
        .into_iter()
        .map(F::lit)
        .collect()
}

/// Actions whose one-step backup under `values` is within `eps` of the best.
pub fn optimal_actions<F: Scalar>(mdp: &EnumeratedMdp<F>, values: &[F], gamma: F, eps: f64) -> Vec<Vec<usize>> {
    let m = to_f64(mdp);
    let v: Vec<f64> = values.iter().map(|x| x.as_f64()).collect();
    (0..m.len())
        .map(|s| {
            if m.terminal[s] {
                return Vec::new();
            }
            let q = q_row(&m, &v, gamma.as_f64(), s);
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (0..q.len()).filter(|&a| q[a] >= best - eps).collect()
        })
        .collect()
}

/// Minimal expected number of steps to a terminal state from every state:
/// a policy is optimized for −1 per step under a discount close to 1 and
/// then evaluated undiscounted.
pub fn expected_optimal_steps(mdp: &EnumeratedMdp<f64>) -> Vec<f64> {
    let mut steps = mdp.clone();
    for rows in &mut steps.transitions {
        for row in rows {
            for t in row {
                t.2 = 1.0;
            }
        }
    }
    for (s, rows) in steps.transitions.iter_mut().enumerate() {
        if mdp.terminal[s] {
            for row in rows {
                for t in row {
                    t.2 = 0.0;
                }
            }
        }
    }
    let mut negated = steps.clone();
    for rows in &mut negated.transitions {
        for row in rows {
            for t in row {
                t.2 = -t.2;
            }
        }
    }
    let sol = policy_iteration(&negated, 0.9999);
    evaluate(&steps, &sol.policy, 1.0)
}

/// Fewest transitions from `from` to a terminal state along positive-probability edges.
pub fn shortest_steps<F: Scalar>(mdp: &EnumeratedMdp<F>, from: usize) -> Option<usize> {
    let mut dist = vec![usize::MAX; mdp.len()];
    let mut queue = VecDeque::from([from]);
    dist[from] = 0;
    while let Some(s) = queue.pop_front() {
        if mdp.terminal[s] {
            return Some(dist[s]);
        }
        for row in &mdp.transitions[s] {
            for &(j, p, _) in row {
                if p > F::zero() && dist[j] == usize::MAX {
                    dist[j] = dist[s] + 1;
                    queue.push_back(j);
                }
            }
        }
    }
    None
}

/// A random finite MDP whose probabilities are ratios of small integer counts,
/// so that a tabular model fed those counts predicts it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMdp<F> {
    pub mdp: EnumeratedMdp<F>,
    /// `counts[s][a]` lists `(next, count)`, parallel to the transition rows.
    pub counts: Vec<Vec<Vec<(usize, u64)>>>,
}

pub fn random_mdp<F: Scalar>(rng: &mut SeededRng, states: usize, actions: usize) -> RandomMdp<F> {
    let terminal: Vec<bool> = (0..states).map(|s| s > 0 && rng.gen_bool(0.1)).collect();
    let mut transitions = Vec::with_capacity(states);
    let mut counts = Vec::with_capacity(states);
    for s in 0..states {
        let mut rows = Vec::with_capacity(actions);
        let mut crow = Vec::with_capacity(actions);
        for _ in 0..actions {
            if terminal[s] {
                rows.push(vec![(s, F::one(), F::zero())]);
                crow.push(vec![(s, 1)]);
                continue;
            }
            let support = rng.gen_range(1..=3.min(states));
            let mut picked: Vec<(usize, u64)> = Vec::new();
            while picked.len() < support {
                let j = rng.gen_range(0..states);
                if picked.iter().all(|&(k, _)| k != j) {
                    picked.push((j, rng.gen_range(1..=5)));
                }
            }
            let total: u64 = picked.iter().map(|p| p.1).sum();
            rows.push(
                picked
                    .iter()
                    .map(|&(j, c)| (j, F::lit(c as f64) / F::lit(total as f64), F::lit(rng.gen_range(-1.0..1.0))))
                    .collect(),
            );
            crow.push(picked);
        }
        transitions.push(rows);
        counts.push(crow);
    }
    RandomMdp {
        mdp: EnumeratedMdp {
            states: (0..states).map(|s| format!("s{s}")).collect(),
            ground: Vec::new(),
            actions: (0..actions).map(|a| format!("a{a}")).collect(),
            transitions,
            terminal,
        },
        counts,
    }
}

impl<F: Scalar> RandomMdp<F> {
    /// A fully known model of this MDP with its planning states.
    pub fn model(&self, gamma: F) -> (TabularModel<F>, Vec<PlanState>) {
        let mut model = TabularModel::new("random", "random", 1, gamma, F::one() / (F::one() - gamma));
        let ids: Vec<u32> = self.mdp.states.iter().map(|k| model.intern_state(k)).collect();
        let acts: Vec<u32> = self.mdp.actions.iter().map(|k| model.intern_action(k)).collect();
        for s in 0..self.mdp.len() {
            for (a, row) in self.counts[s].iter().enumerate() {
                for (&(j, c), &(_, _, r)) in row.iter().zip(&self.mdp.transitions[s][a]) {
                    for _ in 0..c {
                        model.observe(ids[s], acts[a], ids[j], r, true);
                    }
                }
            }
        }
        let states = (0..self.mdp.len())
            .map(|s| PlanState {
                id: ids[s],
                terminal: self.mdp.terminal[s],
                actions: acts.clone(),
            })
            .collect();
        (model, states)
    }
}

/// The abstract MDP grounding `grounding` of node `node` actually faces on
/// `ground_states`, with composite children executed by their current greedy
/// policies (no learning). Ground states sharing an abstract state weigh
/// equally in its transition rows. Children that still choose unknown pairs
/// or run out of budget make the construction refuse; it also assumes
/// deterministic dynamics inside composite children.
pub fn true_abstract_mdp(
    ctx: &ExecutionContext,
    node: usize,
    grounding: usize,
    ground_states: &[GroundState],
) -> Result<EnumeratedMdp<f64>> {
    if ctx.hierarchy().shielded {
        return Err(Error::Oracle("shielded hierarchies are not supported".into()));
    }
    let mut sim = ctx.clone();
    sim.set_learning(false);
    sim.set_audit(false);
    let env = ctx.env().clone();
    let gh = ctx.grounded();
    let amdp = gh.amdp(node, grounding);
    let primitives = env.primitive_actions().to_vec();

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut mdp = EnumeratedMdp {
        states: Vec::new(),
        ground: Vec::new(),
        actions: amdp.actions.iter().map(|a| a.key.clone()).collect(),
        transitions: Vec::new(),
        terminal: Vec::new(),
    };
    let mut members: Vec<usize> = Vec::new();
    // per abstract state and action: next abstract key -> (weight, reward)
    let mut acc: Vec<Vec<HashMap<String, (f64, f64)>>> = Vec::new();
    let mut intern = |key: &str, terminal: bool, mdp: &mut EnumeratedMdp<f64>, acc: &mut Vec<Vec<HashMap<String, (f64, f64)>>>, members: &mut Vec<usize>| {
        if let Some(&i) = index.get(key) {
            return i;
        }
        let i = mdp.states.len();
        index.insert(key.to_string(), i);
        mdp.states.push(key.to_string());
        mdp.terminal.push(terminal);
        acc.push(vec![HashMap::new(); mdp.actions.len()]);
        members.push(0);
        i
    };

    for g in ground_states {
        let s = abstract_state(amdp, env.as_ref(), g)?;
        let terminal = eval_goal(amdp, &s) || eval_fail(amdp, &s) || env.terminal(g) != Terminal::None;
        let i = intern(&s.key, terminal, &mut mdp, &mut acc, &mut members);
        if terminal {
            continue;
        }
        members[i] += 1;
        for (a, action) in amdp.actions.iter().enumerate() {
            let outcomes: Vec<(f64, GroundState)> = match action.target {
                ActionTarget::Primitive { action: p, .. } => env
                    .outcomes(g, &primitives[p])?
                    .into_iter()
                    .map(|(p, o)| (p, o.next_state))
                    .collect(),
                ActionTarget::Node { node: cn, grounding: cg } => {
                    let (ret, unknown) = sim.run_subtask(cn, cg, g)?;
                    if unknown > 0 || ret.outcome == Outcome::BudgetExhausted {
                        return Err(Error::Oracle(format!(
                            "child `{}` has not converged from `{}`",
                            action.key,
                            g.canonical_key()
                        )));
                    }
                    vec![(1.0, sim.state().clone())]
                }
            };
            for (p, next) in outcomes {
                let s2 = abstract_state(amdp, env.as_ref(), &next)?;
                let r = pseudo_reward(amdp, &s, action, &s2);
                let t2 = eval_goal(amdp, &s2) || eval_fail(amdp, &s2) || env.terminal(&next) != Terminal::None;
                intern(&s2.key, t2, &mut mdp, &mut acc, &mut members);
                let e = acc[i][a].entry(s2.key.clone()).or_insert((0.0, r));
                e.0 += p;
            }
        }
    }

    for (i, rows) in acc.iter().enumerate() {
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            if mdp.terminal[i] || members[i] == 0 {
                out.push(vec![(i, 1.0, 0.0)]);
                continue;
            }
            let mut entries: Vec<(usize, f64, f64)> = row
                .iter()
                .map(|(k, &(w, r))| (index[k], w / members[i] as f64, r))
                .collect();
            entries.sort_by_key(|e| e.0);
            out.push(entries);
        }
        mdp.transitions.push(out);
    }
    Ok(mdp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(k: usize) -> EnumeratedMdp<f64> {
        // states 0..k, state k is the goal; reward 1 on entering it
        let mut transitions = Vec::new();
        for s in 0..=k {
            if s == k {
                transitions.push(vec![vec![(s, 1.0, 0.0)]]);
            } else {
                let r = if s + 1 == k { 1.0 } else { 0.0 };
                transitions.push(vec![vec![(s + 1, 1.0, r)]]);
            }
        }
        EnumeratedMdp {
            states: (0..=k).map(|s| s.to_string()).collect(),
            ground: Vec::new(),
            actions: vec!["go".into()],
            transitions,
            terminal: (0..=k).map(|s| s == k).collect(),
        }
    }

    #[test]
    fn chain_value_is_geometric() {
        let sol = exact_solve(&chain(4), 0.9);
        assert!((sol.values[0] - 0.9f64.powi(3)).abs() < 1e-12);
        assert_eq!(sol.values[4], 0.0);
        assert_eq!(shortest_steps(&chain(4), 0), Some(4));
        assert!((expected_optimal_steps(&chain(4))[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn absorbing_zero_state() {
        let mdp = EnumeratedMdp {
            states: vec!["s".into()],
            ground: Vec::new(),
            actions: vec!["stay".into()],
            transitions: vec![vec![vec![(0, 1.0, 0.0)]]],
            terminal: vec![false],
        };
        assert_eq!(exact_solve(&mdp, 0.95).values, vec![0.0]);
    }

    #[test]
    fn random_rows_are_normalized() {
        let mut rng = SeededRng::new(2);
        let r = random_mdp::<f64>(&mut rng, 20, 4);
        assert!(r.mdp.max_row_error() < 1e-12);
        let (model, _) = r.model(0.9);
        assert!(model.counts_consistent());
    }
}
