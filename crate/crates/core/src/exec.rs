//! Recursive plan/execute/update loop over a grounded hierarchy.
//!
//! Every L-AMDP owns one R-MAX model shared by its groundings; every
//! grounding owns an incremental value table. A call on a grounded AMDP
//! abstracts the ground state, plans, runs the chosen child (a primitive
//! step or a recursive call), and records the abstract transition, gated on
//! the child having reported its own model as known.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::lamdp::{
    abstract_state, child_actions, eval_fail, eval_goal, ground, pseudo_reward, ActionTarget, GroundedHierarchy,
    Hierarchy,
};
use crate::mdp::{Action, Environment, GroundState, SeededRng, Terminal};
use crate::planner::{IncrementalPlanner, PlanParams};
use crate::rmax::{phi_hash, TabularModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecConfig {
    pub gamma: f64,
    /// Known threshold.
    pub m: u64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Ground steps per episode.
    pub episode_budget: usize,
    /// Loop iterations per non-root subtask call.
    pub call_budget: usize,
    pub gating: bool,
    /// When false, models are never updated (policy rollouts).
    pub learning: bool,
    pub audit: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            gamma: 0.95,
            m: 1,
            tolerance: 1e-6,
            max_iterations: 10_000,
            episode_budget: 2_000,
            call_budget: 500,
            gating: true,
            learning: true,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Goal,
    Fail,
    BudgetExhausted,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Goal => "goal",
            Outcome::Fail => "fail",
            Outcome::BudgetExhausted => "budget_exhausted",
        })
    }
}

impl std::str::FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "goal" => Ok(Outcome::Goal),
            "fail" => Ok(Outcome::Fail),
            "budget_exhausted" => Ok(Outcome::BudgetExhausted),
            _ => Err(Error::Aggregation(format!("unknown outcome `{s}`"))),
        }
    }
}

/// Result of one subtask call; the final ground state is the context's current state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubtaskReturn {
    pub all_known: bool,
    pub outcome: Outcome,
}

/// One abstract transition seen by a grounded AMDP.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub depth: usize,
    pub amdp: String,
    pub state: String,
    pub action: String,
    pub next: String,
    pub reward: f64,
    pub was_known: bool,
    pub child_known: bool,
    /// Whether the observation changed the counts.
    pub counted: bool,
    /// Ground state the choice was made in.
    pub ground: GroundState,
}

impl fmt::Display for AuditRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.depth,
            self.amdp,
            self.state,
            self.action,
            self.next,
            self.reward,
            self.was_known,
            self.child_known,
            self.counted
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: usize,
    pub reward: f64,
    pub wall_ms: f64,
    /// Unknown available pairs over all discovered states, per L-AMDP, at episode end.
    pub unknown: Vec<(String, usize)>,
    /// Times an unknown pair was chosen during the episode, per L-AMDP.
    pub unknown_selections: Vec<(String, u64)>,
    pub outcome: Outcome,
    /// Indices into the environment's primitive list, in execution order.
    pub trace: Vec<usize>,
}

impl EpisodeRecord {
    pub fn unknown_total(&self) -> usize {
        self.unknown.iter().map(|(_, n)| n).sum()
    }

    pub fn selections_in(&self, lamdp: &str) -> u64 {
        self.unknown_selections
            .iter()
            .filter(|(n, _)| n == lamdp)
            .map(|(_, c)| c)
            .sum()
    }
}

/// Optimistic value bound of an L-AMDP: its best pseudo-reward over 1 − γ.
pub fn value_max(reward: &crate::lamdp::PseudoReward, gamma: f64) -> f64 {
    reward.goal.max(reward.default).max(reward.fail).max(0.0) / (1.0 - gamma)
}

#[derive(Clone)]
pub struct ExecutionContext {
    gh: Arc<GroundedHierarchy>,
    env: Arc<dyn Environment>,
    primitives: Vec<Action>,
    config: ExecConfig,
    params: PlanParams<f64>,
    models: Vec<TabularModel<f64>>,
    planners: Vec<Vec<IncrementalPlanner<f64>>>,
    /// Model action id of each grounded action, per node and grounding.
    action_ids: Vec<Vec<Vec<u32>>>,
    state: GroundState,
    t: usize,
    reward: f64,
    trace: Vec<usize>,
    selections: Vec<u64>,
    audit: Vec<AuditRecord>,
    rng: SeededRng,
    episodes: usize,
}

impl ExecutionContext {
    /// Grounds `hierarchy` on `env` and initializes fresh models.
    pub fn new(hierarchy: &Hierarchy, env: Arc<dyn Environment>, config: ExecConfig, rng: SeededRng) -> Result<Self> {
        if hierarchy.domain != env.domain() {
            return Err(Error::Config(format!(
                "hierarchy is for {} but the environment is {}",
                hierarchy.domain,
                env.domain()
            )));
        }
        let gh = Arc::new(ground(hierarchy, env.as_ref())?);
        let primitives = env.primitive_actions().to_vec();
        let models = hierarchy
            .nodes
            .iter()
            .map(|n| {
                TabularModel::new(
                    &n.name,
                    &n.phi_signature(),
                    config.m,
                    config.gamma,
                    value_max(&n.reward, config.gamma),
                )
            })
            .collect();
        let params = PlanParams {
            gamma: config.gamma,
            tolerance: config.tolerance,
            max_iterations: config.max_iterations,
            default_reward: 0.0,
        };
        let mut ctx = ExecutionContext {
            planners: gh.nodes.iter().map(|g| vec![IncrementalPlanner::default(); g.len()]).collect(),
            action_ids: vec![Vec::new(); hierarchy.nodes.len()],
            selections: vec![0; hierarchy.nodes.len()],
            gh,
            state: GroundState::from_objects(Vec::<(String, String, Vec<(String, crate::AttrValue)>)>::new())?,
            env,
            primitives,
            config,
            params,
            models,
            t: 0,
            reward: 0.0,
            trace: Vec::new(),
            audit: Vec::new(),
            rng,
            episodes: 0,
        };
        for node in 0..ctx.models.len() {
            ctx.intern_actions(node);
        }
        Ok(ctx)
    }

    fn intern_actions(&mut self, node: usize) {
        let model = &mut self.models[node];
        self.action_ids[node] = self.gh.nodes[node]
            .iter()
            .map(|g| g.actions.iter().map(|a| model.intern_action(&a.key)).collect())
            .collect();
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.gh.hierarchy
    }

    pub fn grounded(&self) -> &GroundedHierarchy {
        &self.gh
    }

    pub fn env(&self) -> &Arc<dyn Environment> {
        &self.env
    }

    pub fn config(&self) -> &ExecConfig {
        &self.config
    }

    pub fn set_learning(&mut self, learning: bool) {
        self.config.learning = learning;
    }

    pub fn set_audit(&mut self, audit: bool) {
        self.config.audit = audit;
    }

    pub fn state(&self) -> &GroundState {
        &self.state
    }

    /// Ground steps taken in the current episode.
    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn model(&self, lamdp: &str) -> Option<&TabularModel<f64>> {
        self.gh.hierarchy.node_index(lamdp).map(|i| &self.models[i])
    }

    /// `(L-AMDP name, model)` in hierarchy order.
    pub fn models(&self) -> impl Iterator<Item = (&str, &TabularModel<f64>)> {
        self.gh
            .hierarchy
            .nodes
            .iter()
            .zip(&self.models)
            .map(|(n, m)| (n.name.as_str(), m))
    }

    pub fn planner(&self, node: usize, grounding: usize) -> &IncrementalPlanner<f64> {
        &self.planners[node][grounding]
    }

    pub fn plan_params(&self) -> &PlanParams<f64> {
        &self.params
    }

    /// Model action ids of a grounding's actions, parallel to `GroundedAmdp::actions`.
    pub fn action_ids(&self, node: usize, grounding: usize) -> &[u32] {
        &self.action_ids[node][grounding]
    }

    /// Installs a model for `lamdp`, replacing the current one.
    pub fn attach_transferred_model(&mut self, lamdp: &str, mut model: TabularModel<f64>, frozen: bool) -> Result<()> {
        let node = self
            .gh
            .hierarchy
            .node_index(lamdp)
            .ok_or_else(|| Error::Transfer(format!("hierarchy has no L-AMDP `{lamdp}`")))?;
        let expected = phi_hash(&self.gh.hierarchy.nodes[node].phi_signature());
        if model.phi_hash() != expected || model.lamdp() != lamdp {
            return Err(Error::Transfer(format!(
                "model for `{}` does not match the abstraction of `{lamdp}`",
                model.lamdp()
            )));
        }
        if frozen {
            model.freeze();
        }
        self.models[node] = model;
        self.planners[node] = vec![IncrementalPlanner::default(); self.gh.nodes[node].len()];
        self.intern_actions(node);
        Ok(())
    }

    /// Runs one episode from `s0`, keeping models from earlier episodes.
    pub fn run_episode(&mut self, s0: &GroundState) -> Result<EpisodeRecord> {
        let started = Instant::now();
        self.state = s0.clone();
        self.t = 0;
        self.reward = 0.0;
        self.trace.clear();
        self.audit.clear();
        self.selections.iter_mut().for_each(|c| *c = 0);
        let root = self.gh.root;
        let ret = if self.env.terminal(&self.state) == Terminal::None {
            Some(self.palm(root, 0, 0)?)
        } else {
            None
        };
        let outcome = match self.env.terminal(&self.state) {
            Terminal::Goal => Outcome::Goal,
            Terminal::Fail => Outcome::Fail,
            Terminal::None => ret.map_or(Outcome::Fail, |r| r.outcome),
        };
        let record = EpisodeRecord {
            episode: self.episodes,
            steps: self.t,
            reward: self.reward,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            unknown: self.unknown_pairs(),
            unknown_selections: self
                .gh
                .hierarchy
                .nodes
                .iter()
                .zip(&self.selections)
                .map(|(n, &c)| (n.name.clone(), c))
                .collect(),
            outcome,
            trace: self.trace.clone(),
        };
        self.episodes += 1;
        Ok(record)
    }

    /// Unknown available pairs over discovered non-terminal states, per L-AMDP.
    pub fn unknown_pairs(&self) -> Vec<(String, usize)> {
        self.gh
            .hierarchy
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let model = &self.models[i];
                let count = self.planners[i]
                    .iter()
                    .flat_map(|p| p.states())
                    .filter(|s| !s.terminal)
                    .map(|s| s.actions.iter().filter(|&&a| !model.is_known(s.id, a)).count())
                    .sum();
                (n.name.clone(), count)
            })
            .collect()
    }

    /// Runs one grounded AMDP from `from` as a fresh episode would, returning
    /// how it ended and how many unknown pairs were chosen on the way.
    pub fn run_subtask(&mut self, node: usize, grounding: usize, from: &GroundState) -> Result<(SubtaskReturn, u64)> {
        self.state = from.clone();
        self.t = 0;
        self.reward = 0.0;
        self.trace.clear();
        self.selections.iter_mut().for_each(|c| *c = 0);
        let ret = self.palm(node, grounding, 0)?;
        Ok((ret, self.selections.iter().sum()))
    }

    /// Greedy choice at every discovered non-terminal state of a grounding,
    /// after bringing its values up to date: `(state key, action key)`.
    pub fn greedy_policy(&self, node: usize, grounding: usize) -> Result<Vec<(String, String)>> {
        let model = &self.models[node];
        let mut planner = self.planners[node][grounding].clone();
        planner.sync(model, &self.params);
        let mut out = Vec::new();
        for s in planner.states() {
            if s.terminal || s.actions.is_empty() {
                continue;
            }
            let a = planner.greedy(model, s.id, &s.actions, &self.params)?;
            out.push((model.state_key(s.id).to_string(), model.action_key(a).to_string()));
        }
        Ok(out)
    }

    /// One environment step with the `index`-th primitive.
    pub fn execute_primitive(&mut self, index: usize) -> Result<SubtaskReturn> {
        if self.t >= self.config.episode_budget {
            return Ok(SubtaskReturn {
                all_known: false,
                outcome: Outcome::BudgetExhausted,
            });
        }
        let out = self.env.step(&self.state, &self.primitives[index], &mut self.rng)?;
        self.state = out.next_state;
        self.reward += out.reward;
        self.t += 1;
        self.trace.push(index);
        Ok(SubtaskReturn {
            all_known: true,
            outcome: match out.terminal {
                Terminal::Fail => Outcome::Fail,
                _ => Outcome::Goal,
            },
        })
    }

    /// Runs grounding `grounding` of node `node` from the current state until
    /// its abstract goal or failure holds, a budget runs out, or the ground
    /// state becomes terminal.
    pub fn palm(&mut self, node: usize, grounding: usize, depth: usize) -> Result<SubtaskReturn> {
        let gh = Arc::clone(&self.gh);
        let env = Arc::clone(&self.env);
        let amdp = gh.amdp(node, grounding);
        let is_root = node == gh.root;
        let mut s = abstract_state(amdp, env.as_ref(), &self.state)?;
        let mut all_known = true;
        let mut iterations = 0;
        // the root has no call budget, only a cap on calls that take no step
        let mut idle = 0;
        loop {
            let from = self.config.audit.then(|| self.state.clone());
            let outcome = if eval_goal(amdp, &s) {
                Some(Outcome::Goal)
            } else if eval_fail(amdp, &s) || env.terminal(&self.state) != Terminal::None {
                Some(Outcome::Fail)
            } else if self.t >= self.config.episode_budget
                || (!is_root && iterations >= self.config.call_budget)
                || idle >= self.config.call_budget
            {
                all_known = false;
                Some(Outcome::BudgetExhausted)
            } else {
                None
            };
            if let Some(outcome) = outcome {
                return Ok(SubtaskReturn { all_known, outcome });
            }
            iterations += 1;

            let offered = match child_actions(&gh, amdp, env.as_ref(), &self.state) {
                Ok(o) => o,
                Err(Error::DeadEnd(_)) => {
                    return Ok(SubtaskReturn {
                        all_known,
                        outcome: Outcome::Fail,
                    })
                }
                Err(e) => return Err(e),
            };
            let ids = &self.action_ids[node][grounding];
            let available: Vec<u32> = offered.iter().map(|&i| ids[i]).collect();
            let model = &mut self.models[node];
            let sid = model.intern_state(&s.key);
            let planner = &mut self.planners[node][grounding];
            planner.discover(sid, false, &available);
            planner.sync(model, &self.params);
            let chosen = planner.greedy(model, sid, &available, &self.params)?;
            let index = offered[available.iter().position(|&a| a == chosen).unwrap_or(0)];
            if !model.is_known(sid, chosen) {
                self.selections[node] += 1;
            }

            let action = &amdp.actions[index];
            let t_before = self.t;
            let child = match action.target {
                ActionTarget::Primitive { action, .. } => self.execute_primitive(action)?,
                ActionTarget::Node { node: cn, grounding: cg } => self.palm(cn, cg, depth + 1)?,
            };

            idle = if self.t == t_before { idle + 1 } else { 0 };
            let next = abstract_state(amdp, env.as_ref(), &self.state)?;
            let r = pseudo_reward(amdp, &s, action, &next);
            let model = &mut self.models[node];
            let nid = model.intern_state(&next.key);
            let (was_known, counted) = if self.config.learning {
                let admit = child.all_known || !self.config.gating;
                let counted = admit && !model.is_frozen();
                (model.observe(sid, chosen, nid, r, admit), counted)
            } else {
                (model.is_known(sid, chosen), false)
            };
            all_known &= was_known;
            if self.config.audit {
                self.audit.push(AuditRecord {
                    depth,
                    amdp: amdp.label.clone(),
                    state: s.key.clone(),
                    action: action.key.clone(),
                    next: next.key.clone(),
                    reward: r,
                    was_known,
                    child_known: child.all_known,
                    counted,
                    ground: from.expect("audit snapshot"),
                });
            }
            s = next;
        }
    }
}
