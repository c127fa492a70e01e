//! Flat agents on the ground MDP: ε-greedy Q-learning and R-MAX over
//! canonical state keys.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use crate::error::Result;
use crate::exec::{EpisodeRecord, ExecConfig, Outcome};
use crate::mdp::{Action, Environment, GroundState, SeededRng, Terminal};
use crate::planner::{IncrementalPlanner, PlanParams};
use crate::rmax::TabularModel;

fn outcome_of(env: &dyn Environment, s: &GroundState) -> Outcome {
    match env.terminal(s) {
        Terminal::Goal => Outcome::Goal,
        Terminal::Fail => Outcome::Fail,
        Terminal::None => Outcome::BudgetExhausted,
    }
}

/// Tabular action values; unseen pairs are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub q: HashMap<String, Vec<f64>>,
    pub alpha: f64,
    pub epsilon: f64,
    actions: usize,
}

impl QTable {
    pub fn new(actions: usize, alpha: f64, epsilon: f64) -> Self {
        QTable {
            q: HashMap::new(),
            alpha,
            epsilon,
            actions,
        }
    }

    pub fn value(&self, key: &str, action: usize) -> f64 {
        self.q.get(key).map_or(0.0, |row| row[action])
    }

    fn max(&self, key: &str) -> f64 {
        self.q
            .get(key)
            .map_or(0.0, |row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// One-step update; `next = None` marks a terminal transition.
    pub fn update(&mut self, key: &str, action: usize, reward: f64, next: Option<&str>, gamma: f64) {
        let bootstrap = next.map_or(0.0, |k| self.max(k));
        let alpha = self.alpha;
        let row = self
            .q
            .entry(key.to_string())
            .or_insert_with(|| vec![0.0; self.actions]);
        row[action] += alpha * (reward + gamma * bootstrap - row[action]);
    }

    /// ε-greedy choice; ties among maximal actions are broken uniformly.
    pub fn choose(&self, key: &str, rng: &mut SeededRng) -> usize {
        if rng.gen::<f64>() < self.epsilon {
            return rng.gen_range(0..self.actions);
        }
        let Some(row) = self.q.get(key) else {
            return rng.gen_range(0..self.actions);
        };
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..self.actions).filter(|&a| row[a] == best).collect();
        ties[rng.gen_range(0..ties.len())]
    }
}

pub fn qlearning_episode(
    env: &dyn Environment,
    table: &mut QTable,
    gamma: f64,
    rng: &mut SeededRng,
    budget: usize,
    s0: &GroundState,
    episode: usize,
) -> Result<EpisodeRecord> {
    let started = Instant::now();
    let actions: Vec<Action> = env.primitive_actions().to_vec();
    let mut s = s0.clone();
    let mut key = s.canonical_key();
    let mut reward = 0.0;
    let mut trace = Vec::new();
    while env.terminal(&s) == Terminal::None && trace.len() < budget {
        let a = table.choose(&key, rng);
        let out = env.step(&s, &actions[a], rng)?;
        let next_key = out.next_state.canonical_key();
        let next = (out.terminal == Terminal::None).then_some(next_key.as_str());
        table.update(&key, a, out.reward, next, gamma);
        reward += out.reward;
        trace.push(a);
        s = out.next_state;
        key = next_key;
    }
    Ok(EpisodeRecord {
        episode,
        steps: trace.len(),
        reward,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        unknown: Vec::new(),
        unknown_selections: Vec::new(),
        outcome: outcome_of(env, &s),
        trace,
    })
}

/// R-MAX on ground states: goal entry is worth 1, everything else 0.
pub struct FlatRmax {
    env: Arc<dyn Environment>,
    model: TabularModel<f64>,
    planner: IncrementalPlanner<f64>,
    params: PlanParams<f64>,
    actions: Vec<u32>,
    budget: usize,
    rng: SeededRng,
    episodes: usize,
}

impl FlatRmax {
    pub fn new(env: Arc<dyn Environment>, config: &ExecConfig, rng: SeededRng) -> Self {
        let mut model = TabularModel::new("flat", "ground", config.m, config.gamma, 1.0 / (1.0 - config.gamma));
        let actions = env.primitive_actions().iter().map(|a| model.intern_action(&a.id)).collect();
        FlatRmax {
            env,
            model,
            planner: IncrementalPlanner::default(),
            params: PlanParams {
                gamma: config.gamma,
                tolerance: config.tolerance,
                max_iterations: config.max_iterations,
                default_reward: 0.0,
            },
            actions,
            budget: config.episode_budget,
            rng,
            episodes: 0,
        }
    }

    pub fn model(&self) -> &TabularModel<f64> {
        &self.model
    }

    pub fn episode(&mut self, s0: &GroundState) -> Result<EpisodeRecord> {
        let started = Instant::now();
        let env = Arc::clone(&self.env);
        let primitives = env.primitive_actions();
        let mut s = s0.clone();
        let mut reward = 0.0;
        let mut trace = Vec::new();
        let mut selections = 0;
        while env.terminal(&s) == Terminal::None && trace.len() < self.budget {
            let sid = self.model.intern_state(&s.canonical_key());
            self.planner.discover(sid, false, &self.actions);
            self.planner.sync(&self.model, &self.params);
            let chosen = self.planner.greedy(&self.model, sid, &self.actions, &self.params)?;
            if !self.model.is_known(sid, chosen) {
                selections += 1;
            }
            let index = self.actions.iter().position(|&a| a == chosen).unwrap_or(0);
            let out = env.step(&s, &primitives[index], &mut self.rng)?;
            let r = if out.terminal == Terminal::Goal { 1.0 } else { 0.0 };
            let nid = self.model.intern_state(&out.next_state.canonical_key());
            self.model.observe(sid, chosen, nid, r, true);
            reward += out.reward;
            trace.push(index);
            s = out.next_state;
        }
        let unknown = self
            .planner
            .states()
            .iter()
            .map(|st| st.actions.iter().filter(|&&a| !self.model.is_known(st.id, a)).count())
            .sum();
        let record = EpisodeRecord {
            episode: self.episodes,
            steps: trace.len(),
            reward,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            unknown: vec![("flat".into(), unknown)],
            unknown_selections: vec![("flat".into(), selections)],
            outcome: outcome_of(env.as_ref(), &s),
            trace,
        };
        self.episodes += 1;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxi::{TaxiEnv, TaxiVariant};

    #[test]
    fn update_arithmetic() {
        let mut t = QTable::new(2, 0.1, 0.1);
        t.update("s", 1, 1.0, None, 0.95);
        assert!((t.value("s", 1) - 0.1).abs() < 1e-15);
        assert_eq!(t.value("s", 0), 0.0);
        assert_eq!(t.value("unseen", 0), 0.0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let t = QTable::new(6, 0.1, 1.0);
        let mut rng = SeededRng::new(5);
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[t.choose("s", &mut rng)] += 1;
        }
        let p = 1.0 / 6.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn flat_rmax_solves_small_taxi() {
        let env: Arc<dyn Environment> = Arc::new(TaxiEnv::new(TaxiVariant::small()).unwrap());
        let taxi = TaxiEnv::new(TaxiVariant::small()).unwrap();
        let s0 = taxi.state_from(0, 0, &[(0, 1)]).unwrap();
        let mut agent = FlatRmax::new(env, &ExecConfig::default(), SeededRng::new(1));
        let first = agent.episode(&s0).unwrap();
        assert_eq!(first.outcome, Outcome::Goal);
        let mut last = first;
        for _ in 0..10 {
            last = agent.episode(&s0).unwrap();
        }
        // taxi at Y(0,0), passenger at R(0,4) bound for G(0,3): 4 up, pickup, 1 down, putdown
        assert_eq!(last.steps, 7);
        assert_eq!(last.unknown_selections[0].1, 0);
    }
}
