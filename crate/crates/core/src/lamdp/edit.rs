use std::collections::HashMap;

use super::build::build_hierarchy;
use super::parse::TaskGraphSpec;
use super::{Hierarchy, LAmdp};
use crate::error::{Error, Result};

/// Back to a task-graph spec; implicit primitive wrappers are dropped and
/// regenerated by construction.
fn to_spec(h: &Hierarchy, nodes: Vec<LAmdp>) -> TaskGraphSpec {
    TaskGraphSpec {
        domain: h.domain,
        root: h.root.clone(),
        shielded: h.shielded,
        nodes,
        wrappers: h
            .wrappers
            .iter()
            .filter(|w| !(w.name == w.action && !w.offset && h.is_primitive(&w.name)))
            .cloned()
            .collect(),
        lines: HashMap::new(),
    }
}

/// Links `new` under `parent`. Other nodes are carried over unchanged.
pub fn add_subtask(h: &Hierarchy, new: LAmdp, parent: &str) -> Result<Hierarchy> {
    if h.node(&new.name).is_some() || h.wrapper(&new.name).is_some() || h.is_primitive(&new.name) {
        return Err(Error::Construction(format!("`{}` already exists", new.name)));
    }
    if h.node(parent).is_none() {
        return Err(Error::Construction(format!("parent `{parent}` is not a composite node")));
    }
    for c in &new.children {
        let known = h.node(c).is_some() || h.wrapper(c).is_some() || h.is_primitive(c);
        if !known {
            return Err(Error::Construction(format!("child `{c}` of `{}` does not exist", new.name)));
        }
    }
    let mut nodes = h.nodes.clone();
    for n in &mut nodes {
        if n.name == parent {
            n.children.push(new.name.clone());
        }
    }
    nodes.push(new);
    build_hierarchy(&to_spec(h, nodes))
}

/// Removes `name` from every parent's children and drops nodes left unreachable.
pub fn prune_subtask(h: &Hierarchy, name: &str) -> Result<Hierarchy> {
    if name == h.root {
        return Err(Error::Construction("the root cannot be pruned".into()));
    }
    let exists = h.node(name).is_some() || h.wrapper(name).is_some();
    if !exists {
        return Err(Error::Construction(format!("no subtask `{name}`")));
    }
    let mut nodes: Vec<LAmdp> = h.nodes.iter().filter(|n| n.name != name).cloned().collect();
    for n in &mut nodes {
        n.children.retain(|c| c != name);
        if n.children.is_empty() {
            return Err(Error::Construction(format!("pruning `{name}` leaves `{}` without children", n.name)));
        }
    }
    // keep only what the root still reaches
    let mut reachable = vec![h.root.clone()];
    let mut i = 0;
    while i < reachable.len() {
        if let Some(n) = nodes.iter().find(|n| n.name == reachable[i]) {
            for c in &n.children {
                if !reachable.contains(c) {
                    reachable.push(c.clone());
                }
            }
        }
        i += 1;
    }
    nodes.retain(|n| reachable.contains(&n.name));
    let mut spec = to_spec(h, nodes);
    spec.wrappers.retain(|w| w.name != name);
    build_hierarchy(&spec)
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;
    use crate::lamdp::{load_hierarchy, FeatureRef, Literal, PseudoReward};

    fn noop() -> LAmdp {
        let always = FeatureRef {
            name: "always".into(),
            args: vec![],
        };
        LAmdp {
            name: "NoOp".into(),
            params: vec![],
            goal: vec![Literal {
                negated: false,
                feature: always.clone(),
            }],
            fail: vec![],
            phi: vec![always],
            children: vec!["north".into()],
            reward: PseudoReward::default(),
        }
    }

    #[test]
    fn add_leaves_other_nodes_untouched() {
        let et = load_hierarchy(Path::new("builtin:et")).unwrap();
        let edited = add_subtask(&et, noop(), "Root").unwrap();
        for name in ["Get", "Put", "Navigate"] {
            assert_eq!(et.node(name), edited.node(name));
        }
        assert_eq!(edited.root_node().children, ["Get", "Put", "NoOp"]);
        assert!(matches!(add_subtask(&et, noop(), "Nowhere"), Err(Error::Construction(_))));
    }

    #[test]
    fn add_with_existing_child_grows_root() {
        let et = load_hierarchy(Path::new("builtin:et")).unwrap();
        let mut refuel = noop();
        refuel.name = "Refuel".into();
        refuel.children = vec!["Navigate".into()];
        let edited = add_subtask(&et, refuel, "Root").unwrap();
        assert_eq!(edited.root_node().children.len(), et.root_node().children.len() + 1);
    }

    #[test]
    fn add_creating_cycle_rejected() {
        let et = load_hierarchy(Path::new("builtin:et")).unwrap();
        let mut looped = noop();
        looped.children = vec!["Get".into()];
        // NoOp -> Get, then Navigate -> NoOp closes Get -> Navigate -> NoOp -> Get
        let edited = add_subtask(&et, looped, "Root").unwrap();
        let mut nodes = edited.nodes.clone();
        nodes.iter_mut().find(|n| n.name == "Navigate").unwrap().children.push("NoOp".into());
        assert!(matches!(build_hierarchy(&to_spec(&edited, nodes)), Err(Error::Construction(_))));
    }

    #[test]
    fn prune_removes_from_parents() {
        let et = load_hierarchy(Path::new("builtin:et")).unwrap();
        let with_noop = add_subtask(&et, noop(), "Root").unwrap();
        let pruned = prune_subtask(&with_noop, "Put").unwrap();
        assert_eq!(pruned.root_node().children, ["Get", "NoOp"]);
        assert_eq!(pruned.node("Navigate"), et.node("Navigate"));
        assert!(pruned.node("Put").is_none());
        let back = prune_subtask(&with_noop, "NoOp").unwrap();
        for n in &et.nodes {
            assert_eq!(back.node(&n.name), Some(n));
        }
        assert!(matches!(prune_subtask(&et, "Root"), Err(Error::Construction(_))));
    }
}
