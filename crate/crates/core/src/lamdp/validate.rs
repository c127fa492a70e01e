use std::fmt;

use rand::seq::SliceRandom;

use super::ground::{abstract_state, eval_fail, eval_goal, ground};
use super::{domain_goal_features, Hierarchy};
use crate::error::Result;
use crate::mdp::{Environment, GroundState, SeededRng, Terminal};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.node, self.message)
    }
}

/// Structural and semantic checks of `h` against a task.
///
/// `samples` are ground states used for the checks that need states: goal and
/// fail never holding together, and the root goal agreeing with the task goal.
pub fn validate_hierarchy(h: &Hierarchy, env: &dyn Environment, samples: &[GroundState]) -> Vec<Violation> {
    let mut out = Vec::new();
    let flag = |out: &mut Vec<Violation>, node: &str, message: String| {
        out.push(Violation {
            node: node.to_string(),
            message,
        })
    };

    if h.domain != env.domain() {
        flag(&mut out, &h.root, format!("hierarchy is for {}, task is {}", h.domain, env.domain()));
        return out;
    }

    // every child precedes its parent, which rules out cycles
    for (i, n) in h.nodes.iter().enumerate() {
        for c in &n.children {
            if let Some(j) = h.node_index(c) {
                if j >= i {
                    flag(&mut out, &n.name, format!("child `{c}` does not precede its parent"));
                }
            }
        }
    }

    for n in &h.nodes {
        for l in n.goal.iter().chain(&n.fail) {
            if !n.phi.contains(&l.feature) {
                flag(&mut out, &n.name, format!("φ must include all predicate features; `{}` is missing", l.feature));
            }
        }
        for p in &n.params {
            if !n.phi.iter().any(|f| f.args.contains(&p.name)) {
                flag(&mut out, &n.name, format!("φ must cover parameter `{}`", p.name));
            }
        }
    }

    let root = h.root_node();
    let goal_features = domain_goal_features(h.domain);
    let root_goal_ok = !root.goal.is_empty()
        && root
            .goal
            .iter()
            .all(|l| !l.negated && l.feature.args.is_empty() && goal_features.contains(&l.feature.name.as_str()));
    if !root_goal_ok {
        flag(&mut out, &root.name, "root goal must be the task's goal".into());
    }
    if !root.fail.is_empty() {
        flag(&mut out, &root.name, "root must not fail where the task does not".into());
    }

    if out.iter().any(|v| v.message.starts_with("φ must include")) {
        return out;
    }
    let gh = match ground(h, env) {
        Ok(gh) => gh,
        Err(e) => {
            flag(&mut out, &h.root, format!("grounding failed: {e}"));
            return out;
        }
    };
    for s in samples {
        for groundings in &gh.nodes {
            for g in groundings {
                match abstract_state(g, env, s) {
                    Ok(a) => {
                        let (goal, fail) = (eval_goal(g, &a), eval_fail(g, &a));
                        if goal && fail {
                            flag(&mut out, &g.label, format!("goal and fail both hold at {}", a.key));
                        }
                        if g.node == gh.root && goal != (env.terminal(s) == Terminal::Goal) {
                            flag(&mut out, &g.label, format!("root goal disagrees with the task at {}", s.canonical_key()));
                        }
                    }
                    Err(e) => flag(&mut out, &g.label, format!("abstraction failed: {e}")),
                }
            }
        }
    }
    out.sort_by(|a, b| (&a.node, &a.message).cmp(&(&b.node, &b.message)));
    out.dedup();
    out
}

/// States visited by a uniformly random walk of `steps` primitives from `start`.
pub fn sample_states(env: &dyn Environment, start: &GroundState, steps: usize, rng: &mut SeededRng) -> Result<Vec<GroundState>> {
    let mut out = vec![start.clone()];
    let mut s = start.clone();
    for _ in 0..steps {
        let a = env.primitive_actions().choose(rng).expect("domains have actions").clone();
        let o = env.step(&s, &a, rng)?;
        if o.terminal == Terminal::None {
            s = o.next_state;
            out.push(s.clone());
        } else {
            out.push(o.next_state);
            s = start.clone();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;
    use crate::cleanup::{make_cleanup_task, CleanupLayout};
    use crate::lamdp::{load_hierarchy, load_hierarchy_str, BUILTIN_HIERARCHIES};
    use crate::taxi::{make_taxi_task, TaxiVariant};

    fn taxi_samples() -> (crate::taxi::TaxiEnv, Vec<GroundState>) {
        let mut rng = SeededRng::new(5);
        let (env, s0) = make_taxi_task(&TaxiVariant::classic_two_passengers(), &mut rng).unwrap();
        let samples = sample_states(&env, &s0, 3000, &mut rng).unwrap();
        (env, samples)
    }

    #[test]
    fn shipped_hierarchies_have_no_violations() {
        let (taxi, taxi_samples) = taxi_samples();
        let mut rng = SeededRng::new(9);
        let layout = CleanupLayout::named("cleanup-2r2b2t-5x5").unwrap().unwrap();
        let (cleanup, c0) = make_cleanup_task(&layout, &mut rng).unwrap();
        let cleanup_samples = sample_states(&cleanup, &c0, 3000, &mut rng).unwrap();
        for (name, _) in BUILTIN_HIERARCHIES {
            let h = load_hierarchy(Path::new(&format!("builtin:{name}"))).unwrap();
            let v = match h.domain {
                crate::mdp::Domain::Taxi => validate_hierarchy(&h, &taxi, &taxi_samples),
                crate::mdp::Domain::Cleanup => validate_hierarchy(&h, &cleanup, &cleanup_samples),
            };
            assert!(v.is_empty(), "{name}: {v:?}");
        }
    }

    #[test]
    fn phi_missing_goal_feature_is_reported() {
        let text = "palm-hierarchy 1\ndomain taxi\nroot Root\n\
            node Root\n goal all_delivered\n phi passenger_flags\n children north\n";
        let h = load_hierarchy_str(text).unwrap();
        let (env, samples) = taxi_samples();
        let v = validate_hierarchy(&h, &env, &samples);
        assert!(v.iter().any(|v| v.message.contains("φ must include all predicate features")), "{v:?}");
    }

    #[test]
    fn root_goal_must_match_domain() {
        let text = "palm-hierarchy 1\ndomain taxi\nroot Root\n\
            node Root\n params p:passenger\n goal in_taxi(p)\n phi in_taxi(p)\n children pickup\n";
        let h = load_hierarchy_str(text).unwrap();
        let (env, samples) = taxi_samples();
        let v = validate_hierarchy(&h, &env, &samples);
        assert!(v.iter().any(|v| v.message.contains("root goal")), "{v:?}");
    }

    #[test]
    fn overlapping_goal_and_fail_detected() {
        let text = "palm-hierarchy 1\ndomain taxi\nroot Root\n\
            node Root\n goal all_delivered\n phi all_delivered\n children Nav\n\
            node Nav\n params loc:depot\n goal at(loc)\n fail at(loc)\n phi at(loc)\n children north\n";
        let h = load_hierarchy_str(text).unwrap();
        let (env, samples) = taxi_samples();
        let v = validate_hierarchy(&h, &env, &samples);
        assert!(v.iter().any(|v| v.message.contains("goal and fail both hold")), "{v:?}");
    }
}
