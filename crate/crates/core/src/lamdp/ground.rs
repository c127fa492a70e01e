use std::fmt::Write;

use super::{Hierarchy, PseudoReward};
use crate::error::{Error, Result};
use crate::mdp::{AttrValue, Environment, GroundState, Terminal};

/// Where an abstract action leads when executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionTarget {
    /// A wrapped primitive (index into the environment's action list),
    /// optionally tied to an agent displacement.
    Primitive { action: usize, offset: Option<(i64, i64)> },
    /// A grounding of a composite child.
    Node { node: usize, grounding: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractAction {
    /// Child name with its binding, e.g. `Navigate(loc=R)` or `goNorth(dx=0,dy=1)`.
    pub key: String,
    pub child: String,
    pub target: ActionTarget,
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Param(AttrValue),
    Always,
    DomainGoal,
    Identity,
    Domain { name: String, args: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
struct CompiledFeature {
    label: String,
    source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CompiledLiteral {
    phi_index: usize,
    negated: bool,
}

/// One binding of an L-AMDP's parameters on a concrete task.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedAmdp {
    pub node: usize,
    pub grounding: usize,
    pub lamdp: String,
    pub binding: Vec<(String, String)>,
    /// `lamdp(name=value,...)`, or the bare name when unparameterized.
    pub label: String,
    /// Full grounded action set Ã in stable order.
    pub actions: Vec<AbstractAction>,
    pub reward: PseudoReward,
    phi: Vec<CompiledFeature>,
    goal: Vec<CompiledLiteral>,
    fail: Vec<CompiledLiteral>,
}

/// Abstract state: feature values in φ order plus a canonical key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractState {
    pub values: Vec<AttrValue>,
    /// `offsets[i]..offsets[i + 1]` are the values of the i-th feature.
    offsets: Vec<usize>,
    pub key: String,
}

impl AbstractState {
    pub fn feature(&self, i: usize) -> &[AttrValue] {
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// All groundings of a hierarchy on one task, indexed like `Hierarchy::nodes`.
#[derive(Debug, Clone)]
pub struct GroundedHierarchy {
    pub hierarchy: Hierarchy,
    pub nodes: Vec<Vec<GroundedAmdp>>,
    pub root: usize,
}

impl GroundedHierarchy {
    pub fn groundings(&self, name: &str) -> &[GroundedAmdp] {
        match self.hierarchy.node_index(name) {
            Some(i) => &self.nodes[i],
            None => &[],
        }
    }

    pub fn amdp(&self, node: usize, grounding: usize) -> &GroundedAmdp {
        &self.nodes[node][grounding]
    }

    pub fn root_amdp(&self) -> &GroundedAmdp {
        &self.nodes[self.root][0]
    }
}

fn format_binding(name: &str, binding: &[(String, String)]) -> String {
    if binding.is_empty() {
        return name.to_string();
    }
    let parts: Vec<String> = binding.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{name}({})", parts.join(","))
}

/// Grounds every node once per parameter binding, children before parents, so
/// each parent's action set can reference all groundings of its children.
pub fn ground(h: &Hierarchy, env: &dyn Environment) -> Result<GroundedHierarchy> {
    if env.domain() != h.domain {
        return Err(Error::Config(format!(
            "hierarchy is for {}, task is {}",
            h.domain,
            env.domain()
        )));
    }
    let primitives = env.primitive_actions();
    let mut nodes: Vec<Vec<GroundedAmdp>> = Vec::with_capacity(h.nodes.len());
    for (ni, node) in h.nodes.iter().enumerate() {
        let mut bindings: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for p in &node.params {
            let values = env.param_domain(&p.kind)?;
            if values.is_empty() {
                return Err(Error::Grounding(format!(
                    "parameter `{}` of `{}` has an empty domain",
                    p.name, node.name
                )));
            }
            bindings = bindings
                .into_iter()
                .flat_map(|b| {
                    values.iter().map(move |v| {
                        let mut b = b.clone();
                        b.push((p.name.clone(), v.clone()));
                        b
                    })
                })
                .collect();
        }

        let mut actions = Vec::new();
        for child in &node.children {
            if let Some(w) = h.wrapper(child) {
                let action = primitives
                    .iter()
                    .position(|a| a.id == w.action)
                    .ok_or_else(|| Error::Grounding(format!("task lacks primitive `{}`", w.action)))?;
                if w.offset {
                    let mut seen = Vec::new();
                    for d in env.displacements(&w.action) {
                        if seen.contains(&d) {
                            continue;
                        }
                        seen.push(d);
                        actions.push(AbstractAction {
                            key: format!("{}(dx={},dy={})", w.name, d.0, d.1),
                            child: w.name.clone(),
                            target: ActionTarget::Primitive {
                                action,
                                offset: Some(d),
                            },
                        });
                    }
                } else {
                    actions.push(AbstractAction {
                        key: w.name.clone(),
                        child: w.name.clone(),
                        target: ActionTarget::Primitive { action, offset: None },
                    });
                }
            } else {
                let ci = h
                    .node_index(child)
                    .ok_or_else(|| Error::Grounding(format!("unresolved child `{child}`")))?;
                let Some(groundings) = nodes.get(ci) else {
                    return Err(Error::Grounding(format!("child `{child}` grounded after its parent")));
                };
                for g in groundings {
                    actions.push(AbstractAction {
                        key: g.label.clone(),
                        child: child.clone(),
                        target: ActionTarget::Node {
                            node: ci,
                            grounding: g.grounding,
                        },
                    });
                }
            }
        }

        let mut grounded = Vec::with_capacity(bindings.len());
        for (gi, binding) in bindings.into_iter().enumerate() {
            let lookup = |name: &str| -> Result<String> {
                binding
                    .iter()
                    .find(|(k, _)| k == name)
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| Error::Grounding(format!("`{name}` is not a parameter of `{}`", node.name)))
            };
            let mut phi = Vec::with_capacity(node.phi.len());
            for f in &node.phi {
                let source = match f.name.as_str() {
                    "param" => Source::Param(AttrValue::tag(&lookup(&f.args[0])?)),
                    "always" => Source::Always,
                    "domain_goal" => Source::DomainGoal,
                    "identity" => Source::Identity,
                    name => Source::Domain {
                        name: name.to_string(),
                        args: f.args.iter().map(|a| lookup(a)).collect::<Result<_>>()?,
                    },
                };
                phi.push(CompiledFeature {
                    label: f.to_string(),
                    source,
                });
            }
            let compile = |lits: &[super::Literal]| -> Result<Vec<CompiledLiteral>> {
                lits.iter()
                    .map(|l| {
                        let phi_index = node.phi.iter().position(|f| *f == l.feature).ok_or_else(|| {
                            Error::Grounding(format!(
                                "predicate feature `{}` of `{}` is missing from its abstraction",
                                l.feature, node.name
                            ))
                        })?;
                        Ok(CompiledLiteral {
                            phi_index,
                            negated: l.negated,
                        })
                    })
                    .collect()
            };
            grounded.push(GroundedAmdp {
                node: ni,
                grounding: gi,
                lamdp: node.name.clone(),
                label: format_binding(&node.name, &binding),
                binding,
                actions: actions.clone(),
                reward: node.reward,
                goal: compile(&node.goal)?,
                fail: compile(&node.fail)?,
                phi,
            });
        }
        nodes.push(grounded);
    }
    let root = h
        .node_index(&h.root)
        .ok_or_else(|| Error::Grounding("root missing".into()))?;
    Ok(GroundedHierarchy {
        hierarchy: h.clone(),
        nodes,
        root,
    })
}

/// Projects a ground state through the grounding's abstraction.
pub fn abstract_state(amdp: &GroundedAmdp, env: &dyn Environment, state: &GroundState) -> Result<AbstractState> {
    let mut values = Vec::with_capacity(amdp.phi.len() + 2);
    let mut offsets = Vec::with_capacity(amdp.phi.len() + 1);
    let mut key = String::with_capacity(16 * amdp.phi.len());
    for (i, f) in amdp.phi.iter().enumerate() {
        let start = values.len();
        offsets.push(start);
        match &f.source {
            Source::Param(v) => values.push(v.clone()),
            Source::Always => values.push(AttrValue::Bool(true)),
            Source::DomainGoal => values.push(AttrValue::Bool(env.terminal(state) == Terminal::Goal)),
            Source::Identity => values.push(AttrValue::Tag(state.canonical_key().into())),
            Source::Domain { name, args } => {
                let args: Vec<&str> = args.iter().map(String::as_str).collect();
                env.eval_feature(name, &args, state, &mut values)?;
            }
        }
        if i > 0 {
            key.push(',');
        }
        key.push_str(&f.label);
        key.push('=');
        for (j, v) in values[start..].iter().enumerate() {
            if j > 0 {
                key.push('|');
            }
            let _ = write!(key, "{v}");
        }
    }
    offsets.push(values.len());
    Ok(AbstractState { values, offsets, key })
}

fn holds(lits: &[CompiledLiteral], s: &AbstractState) -> bool {
    !lits.is_empty()
        && lits.iter().all(|l| {
            let v = s.feature(l.phi_index).first().and_then(AttrValue::as_bool).unwrap_or(false);
            v != l.negated
        })
}

pub fn eval_goal(amdp: &GroundedAmdp, s: &AbstractState) -> bool {
    holds(&amdp.goal, s)
}

pub fn eval_fail(amdp: &GroundedAmdp, s: &AbstractState) -> bool {
    holds(&amdp.fail, s)
}

/// Goal value on entering a goal state, fail value on entering a failure
/// state, default otherwise. Only the destination matters.
pub fn pseudo_reward(amdp: &GroundedAmdp, _s: &AbstractState, _a: &AbstractAction, next: &AbstractState) -> f64 {
    if eval_goal(amdp, next) {
        amdp.reward.goal
    } else if eval_fail(amdp, next) {
        amdp.reward.fail
    } else {
        amdp.reward.default
    }
}

/// Indices into `amdp.actions` offered at `state`.
///
/// Unshielded hierarchies offer the full grounded set. Shielded ones drop
/// wrappers whose every outcome leaves the state unchanged or displaces the
/// agent differently from the wrapper's offset, and composite children that
/// would terminate before taking a step.
pub fn child_actions(
    gh: &GroundedHierarchy,
    amdp: &GroundedAmdp,
    env: &dyn Environment,
    state: &GroundState,
) -> Result<Vec<usize>> {
    if !gh.hierarchy.shielded {
        return Ok((0..amdp.actions.len()).collect());
    }
    let primitives = env.primitive_actions();
    let here = env.agent_position(state);
    let mut offered = Vec::with_capacity(amdp.actions.len());
    for (i, a) in amdp.actions.iter().enumerate() {
        let keep = match a.target {
            ActionTarget::Primitive { action, offset } => {
                let outcomes = env.outcomes(state, &primitives[action])?;
                outcomes.iter().all(|(_, o)| {
                    let moved = o.next_state != *state;
                    match offset {
                        Some((dx, dy)) => {
                            let (x, y) = env.agent_position(&o.next_state);
                            moved && (x - here.0, y - here.1) == (dx, dy)
                        }
                        None => moved,
                    }
                })
            }
            ActionTarget::Node { node, grounding } => {
                let child = gh.amdp(node, grounding);
                let s = abstract_state(child, env, state)?;
                !eval_goal(child, &s) && !eval_fail(child, &s)
            }
        };
        if keep {
            offered.push(i);
        }
    }
    if offered.is_empty() {
        return Err(Error::DeadEnd(amdp.label.clone()));
    }
    Ok(offered)
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;
    use crate::cleanup::{CleanupEnv, CleanupLayout};
    use crate::lamdp::load_hierarchy;
    use crate::mdp::{Action, SeededRng};
    use crate::taxi::{TaxiEnv, TaxiVariant};

    fn et_classic() -> (TaxiEnv, GroundedHierarchy) {
        let env = TaxiEnv::new(TaxiVariant::classic()).unwrap();
        let h = load_hierarchy(Path::new("builtin:et")).unwrap();
        let gh = ground(&h, &env).unwrap();
        (env, gh)
    }

    #[test]
    fn navigate_grounds_once_per_depot() {
        let (_, gh) = et_classic();
        let labels: Vec<&str> = gh.groundings("Navigate").iter().map(|g| g.label.as_str()).collect();
        assert_eq!(labels, ["Navigate(loc=R)", "Navigate(loc=G)", "Navigate(loc=Y)", "Navigate(loc=B)"]);
        assert_eq!(gh.groundings("Root").len(), 1);
        let get = &gh.groundings("Get")[0];
        let keys: Vec<&str> = get.actions.iter().map(|a| a.key.as_str()).collect();
        assert_eq!(keys[0], "pickup");
        assert_eq!(keys.len(), 5);
    }

    #[test]
    fn root_offers_get_and_put() {
        let (env, gh) = et_classic();
        let s = env.state_from(2, 2, &[(0, 1)]).unwrap();
        let root = gh.root_amdp();
        let offered = child_actions(&gh, root, &env, &s).unwrap();
        let keys: Vec<&str> = offered.iter().map(|&i| root.actions[i].key.as_str()).collect();
        assert_eq!(keys, ["Get(p=passenger0)", "Put(p=passenger0)"]);
    }

    #[test]
    fn navigate_abstraction_projects_position_and_target() {
        let (env, gh) = et_classic();
        let s = env.state_from(0, 3, &[(0, 1)]).unwrap();
        let nav_r = &gh.groundings("Navigate")[0];
        let a = abstract_state(nav_r, &env, &s).unwrap();
        assert_eq!(a.key, "taxi_x=0,taxi_y=3,param(loc)=R,at(loc)=false");
        assert!(!eval_goal(nav_r, &a));
        // passenger elsewhere: same abstraction
        let s2 = env.state_from(0, 3, &[(2, 3)]).unwrap();
        assert_eq!(abstract_state(nav_r, &env, &s2).unwrap(), a);
        // different binding differs only through the parameterized features
        let nav_g = &gh.groundings("Navigate")[1];
        let b = abstract_state(nav_g, &env, &s).unwrap();
        assert_ne!(a.key, b.key);
        let at_r = env.state_from(0, 4, &[(0, 1)]).unwrap();
        assert!(eval_goal(nav_r, &abstract_state(nav_r, &env, &at_r).unwrap()));
    }

    #[test]
    fn get_reaches_goal_after_scripted_pickup() {
        let (env, gh) = et_classic();
        let get = &gh.groundings("Get")[0];
        let s = env.state_from(0, 4, &[(0, 1)]).unwrap();
        let a = abstract_state(get, &env, &s).unwrap();
        assert!(!eval_goal(get, &a) && !eval_fail(get, &a));
        let next = env.step(&s, &Action::primitive("pickup"), &mut SeededRng::new(0)).unwrap().next_state;
        let b = abstract_state(get, &env, &next).unwrap();
        assert!(eval_goal(get, &b));
        assert_eq!(pseudo_reward(get, &a, &get.actions[0], &b), 1.0);
        assert_eq!(pseudo_reward(get, &a, &get.actions[0], &a), 0.0);
        let put = &gh.groundings("Put")[0];
        let c = abstract_state(put, &env, &s).unwrap();
        assert!(eval_fail(put, &c));
        assert_eq!(pseudo_reward(put, &c, &put.actions[0], &c), -1.0);
    }

    #[test]
    fn shielding_drops_blocked_offsets() {
        let layout = CleanupLayout::named("cleanup-small").unwrap().unwrap();
        let env = CleanupEnv::new(layout).unwrap();
        let h = load_hierarchy(Path::new("builtin:ac")).unwrap();
        let gh = ground(&h, &env).unwrap();
        let root = gh.root_amdp();
        let north: Vec<&AbstractAction> = root.actions.iter().filter(|a| a.child == "goNorth").collect();
        assert_eq!(north.len(), 1);
        assert_eq!(north[0].key, "goNorth(dx=0,dy=1)");
        // agent against the north edge of room B
        let s = env.state_from((0, 4), "north", &[((1, 0), "blue".into())]).unwrap();
        let offered = child_actions(&gh, root, &env, &s).unwrap();
        let keys: Vec<&str> = offered.iter().map(|&i| root.actions[i].key.as_str()).collect();
        assert!(!keys.iter().any(|k| k.starts_with("goNorth")));
        assert!(!keys.iter().any(|k| k.starts_with("goWest")));
        assert!(keys.contains(&"goSouth(dx=0,dy=-1)"));
        assert!(!keys.iter().any(|k| k.starts_with("pullBack")));
        // already facing north: look(north) would terminate immediately
        assert!(!keys.contains(&"look(dir=north)"));
        assert!(keys.contains(&"look(dir=south)"));
    }

    #[test]
    fn unshielded_offers_everything() {
        let (env, gh) = et_classic();
        let nav = &gh.groundings("Navigate")[0];
        let s = env.state_from(0, 0, &[(0, 1)]).unwrap();
        assert_eq!(child_actions(&gh, nav, &env, &s).unwrap(), [0, 1, 2, 3]);
    }

    #[test]
    fn domain_mismatch_rejected() {
        let env = TaxiEnv::new(TaxiVariant::small()).unwrap();
        let h = load_hierarchy(Path::new("builtin:ac")).unwrap();
        assert!(matches!(ground(&h, &env), Err(Error::Config(_))));
    }
}
