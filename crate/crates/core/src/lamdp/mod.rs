//! Lifted abstract MDP subtasks and the hierarchies built from them.
//!
//! A hierarchy file names the domain, the root, and a set of composite nodes
//! and primitive wrappers. Composite nodes carry parameters, goal and fail
//! predicates (conjunctions of boolean feature literals), a state abstraction
//! (an ordered feature list) and children. Wrappers execute one primitive.

mod build;
mod edit;
mod ground;
mod parse;
mod validate;

pub use build::{build_hierarchy, load_hierarchy, load_hierarchy_str, BUILTIN_HIERARCHIES};
pub use edit::{add_subtask, prune_subtask};
pub use ground::{
    abstract_state, child_actions, eval_fail, eval_goal, ground, pseudo_reward, AbstractAction, AbstractState,
    ActionTarget, GroundedAmdp, GroundedHierarchy,
};
pub use parse::{parse_task_graph, TaskGraphSpec};
pub use validate::{sample_states, validate_hierarchy, Violation};

use std::fmt;

use crate::mdp::{Domain, FeatureSig};

/// A feature reference such as `at(loc)`; arguments name node parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureRef {
    pub name: String,
    pub args: Vec<String>,
}

impl fmt::Display for FeatureRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.args.is_empty() {
            write!(f, "({})", self.args.join(","))?;
        }
        Ok(())
    }
}

/// A possibly negated boolean feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literal {
    pub negated: bool,
    pub feature: FeatureRef,
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("!")?;
        }
        write!(f, "{}", self.feature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Param {
    pub name: String,
    pub kind: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoReward {
    pub goal: f64,
    pub fail: f64,
    pub default: f64,
}

impl Default for PseudoReward {
    fn default() -> Self {
        PseudoReward {
            goal: 1.0,
            fail: -1.0,
            default: 0.0,
        }
    }
}

/// A composite subtask template.
#[derive(Debug, Clone, PartialEq)]
pub struct LAmdp {
    pub name: String,
    pub params: Vec<Param>,
    /// Conjunction; empty never holds.
    pub goal: Vec<Literal>,
    /// Conjunction; empty never holds.
    pub fail: Vec<Literal>,
    pub phi: Vec<FeatureRef>,
    pub children: Vec<String>,
    pub reward: PseudoReward,
}

impl LAmdp {
    /// Stable text form of the abstraction, hashed into model files.
    pub fn phi_signature(&self) -> String {
        let params: Vec<String> = self.params.iter().map(|p| format!("{}:{}", p.name, p.kind)).collect();
        let phi: Vec<String> = self.phi.iter().map(|f| f.to_string()).collect();
        format!("params {}; phi {}", params.join(" "), phi.join(" "))
    }
}

/// A subtask that executes exactly one primitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wrapper {
    pub name: String,
    pub action: String,
    /// Grounded once per agent displacement the primitive can produce (`dx`, `dy`).
    pub offset: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub domain: Domain,
    pub root: String,
    /// Offer only children that provably change the state.
    pub shielded: bool,
    /// Composite nodes in reverse topological order: children before parents, root last.
    pub nodes: Vec<LAmdp>,
    pub wrappers: Vec<Wrapper>,
}

impl Hierarchy {
    pub fn node(&self, name: &str) -> Option<&LAmdp> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn wrapper(&self, name: &str) -> Option<&Wrapper> {
        self.wrappers.iter().find(|w| w.name == name)
    }

    pub fn root_node(&self) -> &LAmdp {
        self.node(&self.root).expect("root exists by construction")
    }

    pub fn is_primitive(&self, name: &str) -> bool {
        primitive_ids(self.domain).contains(&name)
    }
}

pub(crate) fn primitive_ids(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Taxi => &crate::taxi::ACTION_IDS,
        Domain::Cleanup => &crate::cleanup::ACTION_IDS,
    }
}

pub(crate) fn domain_features(domain: Domain) -> &'static [FeatureSig] {
    match domain {
        Domain::Taxi => crate::taxi::TAXI_FEATURES,
        Domain::Cleanup => crate::cleanup::CLEANUP_FEATURES,
    }
}

pub(crate) fn param_kinds(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Taxi => &["depot", "passenger", "direction"],
        Domain::Cleanup => &["block", "target", "room", "direction"],
    }
}

/// Features every domain understands.
pub(crate) static GENERIC_FEATURES: &[FeatureSig] = &[
    FeatureSig { name: "always", args: &[], boolean: true },
    FeatureSig { name: "domain_goal", args: &[], boolean: true },
    FeatureSig { name: "identity", args: &[], boolean: false },
];

/// Signature of `name`, including the generic ones; `param` is handled by callers.
pub(crate) fn feature_sig(domain: Domain, name: &str) -> Option<&'static FeatureSig> {
    GENERIC_FEATURES
        .iter()
        .chain(domain_features(domain))
        .find(|f| f.name == name)
}

/// Whether a parameter of kind `param` may fill an argument slot of kind `slot`.
pub(crate) fn kind_fits(slot: &str, param: &str) -> bool {
    slot == param || (slot == "block" && param == "target")
}

/// Features that hold exactly when the domain reports its goal.
pub(crate) fn domain_goal_features(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Taxi => &["domain_goal", "all_delivered"],
        Domain::Cleanup => &["domain_goal", "all_targets_home"],
    }
}
