//! Value iteration over the discovered abstract states of one grounded AMDP.
//!
//! [`solve`] is the plain synchronous solver. [`IncrementalPlanner`] keeps a
//! value table alive across model updates and only revisits states whose
//! backups can have changed.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::rmax::{Prediction, TabularModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanParams<F> {
    pub gamma: F,
    pub tolerance: F,
    pub max_iterations: usize,
    /// Reward of the self-loop assumed for unrecorded pairs of frozen models.
    pub default_reward: F,
}

impl<F: Scalar> PlanParams<F> {
    pub fn new(gamma: F) -> Self {
        PlanParams {
            gamma,
            tolerance: F::lit(1e-6),
            max_iterations: 10_000,
            default_reward: F::zero(),
        }
    }
}

/// One state of a planning problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanState {
    pub id: u32,
    /// Goal or failure state: value fixed at 0.
    pub terminal: bool,
    /// Model action ids available here, in stable order.
    pub actions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable<F> {
    /// Local index per model state id (`u32::MAX` when absent).
    index: Vec<u32>,
    ids: Vec<u32>,
    terminal: Vec<bool>,
    values: Vec<F>,
    pub residual: F,
    pub iterations: usize,
    pub converged: bool,
}

impl<F: Scalar> ValueTable<F> {
    fn empty() -> Self {
        ValueTable {
            index: Vec::new(),
            ids: Vec::new(),
            terminal: Vec::new(),
            values: Vec::new(),
            residual: F::zero(),
            iterations: 0,
            converged: true,
        }
    }

    fn local(&self, id: u32) -> Option<usize> {
        match self.index.get(id as usize) {
            Some(&l) if l != u32::MAX => Some(l as usize),
            _ => None,
        }
    }

    fn insert(&mut self, id: u32, terminal: bool) -> usize {
        if let Some(l) = self.local(id) {
            return l;
        }
        if self.index.len() <= id as usize {
            self.index.resize(id as usize + 1, u32::MAX);
        }
        let l = self.ids.len();
        self.index[id as usize] = l as u32;
        self.ids.push(id);
        self.terminal.push(terminal);
        self.values.push(F::zero());
        l
    }

    /// Value of a model state: 0 for terminal or undiscovered states.
    pub fn value(&self, id: u32) -> F {
        match self.local(id) {
            Some(l) if !self.terminal[l] => self.values[l],
            _ => F::zero(),
        }
    }

    pub fn contains(&self, id: u32) -> bool {
        self.local(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `(model state id, value)` in discovery order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, F)> + '_ {
        self.ids.iter().map(move |&id| (id, self.value(id)))
    }
}

/// One-step backup of `a` at `s` under the model and current values.
pub fn backup<F: Scalar>(model: &TabularModel<F>, table: &ValueTable<F>, s: u32, a: u32, p: &PlanParams<F>) -> F {
    match model.predicted(s, a) {
        Prediction::Optimistic => p.gamma * model.value_max(),
        Prediction::Unrecorded => p.default_reward + p.gamma * table.value(s),
        Prediction::Known { n, outcomes } => {
            let n = F::lit(n as f64);
            let mut q = F::zero();
            for o in outcomes {
                let c = F::lit(o.count as f64);
                q = q + (c / n) * (o.reward_sum / c + p.gamma * table.value(o.next));
            }
            q
        }
    }
}

fn best<F: Scalar>(model: &TabularModel<F>, table: &ValueTable<F>, s: u32, actions: &[u32], p: &PlanParams<F>) -> F {
    actions
        .iter()
        .map(|&a| backup(model, table, s, a, p))
        .fold(None, |acc: Option<F>, q| Some(acc.map_or(q, |b| if q > b { q } else { b })))
        .unwrap_or_else(F::zero)
}

/// Synchronous (Jacobi) value iteration until the max-norm change drops
/// below the tolerance or the iteration cap is reached.
pub fn solve<F: Scalar>(model: &TabularModel<F>, states: &[PlanState], p: &PlanParams<F>) -> ValueTable<F> {
    let mut table = ValueTable::empty();
    for s in states {
        table.insert(s.id, s.terminal);
    }
    table.converged = false;
    let mut next = table.values.clone();
    while table.iterations < p.max_iterations {
        let mut residual = F::zero();
        for (l, s) in states.iter().enumerate() {
            let l = table.local(s.id).unwrap_or(l);
            if s.terminal {
                continue;
            }
            let v = best(model, &table, s.id, &s.actions, p);
            residual = residual.max((v - table.values[l]).abs());
            next[l] = v;
        }
        std::mem::swap(&mut table.values, &mut next);
        next.copy_from_slice(&table.values);
        table.iterations += 1;
        table.residual = residual;
        if residual < p.tolerance {
            table.converged = true;
            break;
        }
    }
    table
}

/// Argmax of the one-step backup over `available`; the first maximiser wins.
pub fn greedy_action<F: Scalar>(
    table: &ValueTable<F>,
    model: &TabularModel<F>,
    s: u32,
    available: &[u32],
    p: &PlanParams<F>,
) -> Result<u32> {
    let mut choice: Option<(u32, F)> = None;
    for &a in available {
        let q = backup(model, table, s, a, p);
        if choice.map_or(true, |(_, b)| q > b) {
            choice = Some((a, q));
        }
    }
    choice
        .map(|(a, _)| a)
        .ok_or_else(|| Error::DeadEnd(model.state_key(s).to_string()))
}

/// Value table maintained across model changes.
///
/// States whose predictions changed (read from the model's change log),
/// newly discovered states and states with a changed action set are queued;
/// a state whose value moves by more than the tolerance queues its recorded
/// predecessors. At quiescence every discovered state's Bellman residual is
/// below the tolerance, as after a full solve.
#[derive(Debug, Clone)]
pub struct IncrementalPlanner<F> {
    table: ValueTable<F>,
    actions: Vec<Vec<u32>>,
    cursor: usize,
    queue: VecDeque<u32>,
    queued: Vec<bool>,
    /// Discovered states whose recorded successors are still to be followed.
    frontier: Vec<u32>,
}

impl<F: Scalar> Default for IncrementalPlanner<F> {
    fn default() -> Self {
        IncrementalPlanner {
            table: ValueTable::empty(),
            actions: Vec::new(),
            cursor: 0,
            queue: VecDeque::new(),
            queued: Vec::new(),
            frontier: Vec::new(),
        }
    }
}

impl<F: Scalar> IncrementalPlanner<F> {
    pub fn table(&self) -> &ValueTable<F> {
        &self.table
    }

    /// Discovered states with their latest action sets.
    pub fn states(&self) -> Vec<PlanState> {
        self.table
            .ids
            .iter()
            .enumerate()
            .map(|(l, &id)| PlanState {
                id,
                terminal: self.table.terminal[l],
                actions: self.actions[l].clone(),
            })
            .collect()
    }

    pub fn is_discovered(&self, id: u32) -> bool {
        self.table.contains(id)
    }

    pub fn actions_at(&self, id: u32) -> Option<&[u32]> {
        self.table.local(id).map(|l| self.actions[l].as_slice())
    }

    fn enqueue(&mut self, l: usize) {
        if !self.queued[l] {
            self.queued[l] = true;
            self.queue.push_back(l as u32);
        }
    }

    /// Adds `id` to the discovered set or refreshes its available actions.
    pub fn discover(&mut self, id: u32, terminal: bool, actions: &[u32]) {
        let before = self.table.len();
        let l = self.table.insert(id, terminal);
        if l == before {
            self.actions.push(actions.to_vec());
            self.queued.push(false);
            self.enqueue(l);
            self.frontier.push(id);
        } else if self.actions[l] != actions {
            self.actions[l] = actions.to_vec();
            self.enqueue(l);
        }
    }

    /// Follows recorded transitions out of the frontier. A successor the
    /// model has acted from is not terminal; it joins with the actions
    /// recorded there until a visit supplies its real action set. Successors
    /// without data stay out and are valued 0.
    fn expand(&mut self, model: &TabularModel<F>) {
        while let Some(id) = self.frontier.pop() {
            let Some(l) = self.table.local(id) else { continue };
            for ai in 0..self.actions[l].len() {
                let a = self.actions[l][ai];
                for next in model.successors(id, a).iter().map(|o| o.next) {
                    if self.table.contains(next) {
                        continue;
                    }
                    let recorded: Vec<u32> = model.recorded_actions(next).collect();
                    if !recorded.is_empty() {
                        self.discover(next, false, &recorded);
                    }
                }
            }
        }
    }

    /// Brings values up to date with the model.
    pub fn sync(&mut self, model: &TabularModel<F>, p: &PlanParams<F>) {
        let log = model.change_log();
        for &s in &log[self.cursor.min(log.len())..] {
            if let Some(l) = self.table.local(s) {
                self.enqueue(l);
                self.frontier.push(s);
            }
        }
        self.cursor = log.len();
        self.expand(model);
        let cap = p.max_iterations.saturating_mul(self.table.len().max(1));
        let mut updates = 0;
        self.table.residual = F::zero();
        while let Some(l) = self.queue.pop_front() {
            let l = l as usize;
            self.queued[l] = false;
            if self.table.terminal[l] {
                continue;
            }
            let id = self.table.ids[l];
            let v = best(model, &self.table, id, &self.actions[l], p);
            let delta = (v - self.table.values[l]).abs();
            self.table.values[l] = v;
            updates += 1;
            if delta > p.tolerance {
                for &(pred, _) in model.predecessors(id) {
                    if let Some(pl) = self.table.local(pred) {
                        self.enqueue(pl);
                    }
                }
            }
            if updates >= cap {
                self.table.residual = delta;
                self.table.converged = false;
                for &q in &self.queue {
                    self.queued[q as usize] = false;
                }
                self.queue.clear();
                return;
            }
        }
        self.table.iterations += updates;
        self.table.converged = true;
    }

    pub fn greedy(&self, model: &TabularModel<F>, id: u32, available: &[u32], p: &PlanParams<F>) -> Result<u32> {
        greedy_action(&self.table, model, id, available, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> (TabularModel<f64>, Vec<PlanState>) {
        let mut m = TabularModel::new("chain", "x", 1, 0.95, 20.0);
        let (a, b, g) = (m.intern_state("A"), m.intern_state("B"), m.intern_state("G"));
        let go = m.intern_action("go");
        m.observe(a, go, b, 0.0, true);
        m.observe(b, go, g, 1.0, true);
        let states = vec![
            PlanState { id: a, terminal: false, actions: vec![go] },
            PlanState { id: b, terminal: false, actions: vec![go] },
            PlanState { id: g, terminal: true, actions: vec![] },
        ];
        (m, states)
    }

    #[test]
    fn chain_values_discount_geometrically() {
        let (m, states) = chain();
        let t = solve(&m, &states, &PlanParams::new(0.95));
        assert!(t.converged);
        assert!((t.value(0) - 0.95).abs() < 1e-12);
        assert!((t.value(1) - 1.0).abs() < 1e-12);
        assert_eq!(t.value(2), 0.0);
    }

    #[test]
    fn unknown_action_wins_under_optimism() {
        let (mut m, mut states) = chain();
        let explore = m.intern_action("explore");
        states[0].actions.push(explore);
        let p = PlanParams::new(0.95);
        let t = solve(&m, &states, &p);
        assert_eq!(greedy_action(&t, &m, 0, &states[0].actions, &p).unwrap(), explore);
        assert!(t.value(0) >= 0.95 * 20.0 - 1e-6);
    }

    #[test]
    fn ties_go_to_the_first_action() {
        let mut m = TabularModel::<f64>::new("t", "x", 1, 0.9, 10.0);
        let s = m.intern_state("s");
        let (a, b) = (m.intern_action("a"), m.intern_action("b"));
        let p = PlanParams::new(0.9);
        let t = solve(&m, &[PlanState { id: s, terminal: false, actions: vec![b, a] }], &p);
        assert_eq!(greedy_action(&t, &m, s, &[b, a], &p).unwrap(), b);
        assert!(matches!(greedy_action(&t, &m, s, &[], &p), Err(Error::DeadEnd(_))));
    }

    #[test]
    fn frozen_unrecorded_pairs_are_neutral_self_loops() {
        let (mut m, mut states) = chain();
        let other = m.intern_action("other");
        states[0].actions.insert(0, other);
        m.freeze();
        let p = PlanParams::new(0.95);
        let t = solve(&m, &states, &p);
        assert!((t.value(0) - 0.95).abs() < 1e-9);
        assert_eq!(greedy_action(&t, &m, 0, &states[0].actions, &p).unwrap(), 0);
    }

    #[test]
    fn incremental_matches_full_solve() {
        let (m, states) = chain();
        let p = PlanParams::new(0.95);
        let mut inc = IncrementalPlanner::default();
        for s in &states {
            inc.discover(s.id, s.terminal, &s.actions);
        }
        inc.sync(&m, &p);
        let full = solve(&m, &states, &p);
        for s in &states {
            assert!((inc.table().value(s.id) - full.value(s.id)).abs() < 1e-5);
        }
    }

    #[test]
    fn recorded_successors_join_the_discovered_set() {
        let (mut m, _) = chain();
        m.freeze();
        let p = PlanParams::new(0.95);
        let mut inc = IncrementalPlanner::default();
        inc.discover(0, false, &[0]);
        inc.sync(&m, &p);
        assert!(inc.is_discovered(1));
        // the goal has no data and stays out, valued 0
        assert!(!inc.is_discovered(2));
        assert!((inc.table().value(0) - 0.95).abs() < 1e-5);
    }
}
