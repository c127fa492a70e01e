use std::collections::HashSet;
use std::path::Path;

use super::parse::{parse_task_graph, TaskGraphSpec};
use super::{feature_sig, kind_fits, param_kinds, primitive_ids, FeatureRef, Hierarchy, LAmdp, Wrapper};
use crate::error::{Error, Result};

/// Hierarchies shipped with the crate, addressable as `builtin:<name>`.
pub const BUILTIN_HIERARCHIES: &[(&str, &str)] = &[
    ("et", include_str!("../../hierarchies/et.hier")),
    ("ec", include_str!("../../hierarchies/ec.hier")),
    ("ac", include_str!("../../hierarchies/ac.hier")),
    ("ht", include_str!("../../hierarchies/ht.hier")),
    ("flat-taxi", include_str!("../../hierarchies/flat-taxi.hier")),
    ("flat-cleanup", include_str!("../../hierarchies/flat-cleanup.hier")),
];

pub fn load_hierarchy(path: &Path) -> Result<Hierarchy> {
    if let Some(name) = path.to_str().and_then(|p| p.strip_prefix("builtin:")) {
        let text = BUILTIN_HIERARCHIES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Config(format!("no builtin hierarchy `{name}`")))?;
        return load_hierarchy_str(text);
    }
    let text = std::fs::read_to_string(path).map_err(|source| Error::MissingFile {
        path: path.display().to_string(),
        source,
    })?;
    load_hierarchy_str(&text)
}

pub fn load_hierarchy_str(text: &str) -> Result<Hierarchy> {
    build_hierarchy(&parse_task_graph(text)?)
}

/// Phase-2 construction: wraps primitive leaves, then emits composite nodes
/// in reverse topological order so every child precedes its parents.
pub fn build_hierarchy(spec: &TaskGraphSpec) -> Result<Hierarchy> {
    let primitives = primitive_ids(spec.domain);
    let err = |msg: String| Err(Error::Construction(msg));

    let mut wrappers: Vec<Wrapper> = Vec::new();
    let mut nodes: Vec<LAmdp> = spec.nodes.clone();
    for node in &mut nodes {
        if let Some(pos) = node.children.iter().position(|c| c == "@primitives") {
            node.children.splice(pos..=pos, primitives.iter().map(|p| p.to_string()));
        }
    }

    let mut names = HashSet::new();
    for name in nodes.iter().map(|n| &n.name).chain(spec.wrappers.iter().map(|w| &w.name)) {
        if primitives.contains(&name.as_str()) {
            return err(format!("`{name}` shadows a primitive action"));
        }
        if !names.insert(name.as_str()) {
            return err(format!("`{name}` declared twice"));
        }
    }
    for w in &spec.wrappers {
        if !primitives.contains(&w.action.as_str()) {
            return err(format!("wrapper `{}` wraps unknown primitive `{}`", w.name, w.action));
        }
    }

    // leaves first: implicit wrappers for primitives named directly as children
    let mut leaf_order: Vec<&str> = Vec::new();
    for node in &nodes {
        for c in &node.children {
            if primitives.contains(&c.as_str()) && !leaf_order.contains(&c.as_str()) {
                leaf_order.push(c);
            }
        }
    }
    leaf_order.sort_by_key(|c| primitives.iter().position(|p| p == c));
    for p in leaf_order {
        wrappers.push(Wrapper {
            name: p.to_string(),
            action: p.to_string(),
            offset: false,
        });
    }
    wrappers.extend(spec.wrappers.iter().cloned());

    for node in &nodes {
        check_node(spec, node, &nodes, &wrappers)?;
    }

    let Some(root) = nodes.iter().position(|n| n.name == spec.root) else {
        return err(format!("root `{}` is not a declared node", spec.root));
    };

    // depth-first post-order from the root; grey marks detect cycles
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut marks = vec![Mark::White; nodes.len()];
    let mut order = Vec::with_capacity(nodes.len());
    fn visit(i: usize, nodes: &[LAmdp], marks: &mut [Mark], order: &mut Vec<usize>, path: &mut Vec<String>) -> Result<()> {
        match marks[i] {
            Mark::Black => return Ok(()),
            Mark::Grey => {
                path.push(nodes[i].name.clone());
                return Err(Error::Construction(format!("cycle through {}", path.join(" -> "))));
            }
            Mark::White => {}
        }
        marks[i] = Mark::Grey;
        path.push(nodes[i].name.clone());
        for c in &nodes[i].children {
            if let Some(j) = nodes.iter().position(|n| &n.name == c) {
                visit(j, nodes, marks, order, path)?;
            }
        }
        path.pop();
        marks[i] = Mark::Black;
        order.push(i);
        Ok(())
    }
    visit(root, &nodes, &mut marks, &mut order, &mut Vec::new())?;
    if let Some(i) = marks.iter().position(|m| *m == Mark::White) {
        return err(format!("node `{}` is unreachable from the root", nodes[i].name));
    }

    let ordered = order.into_iter().map(|i| nodes[i].clone()).collect();
    Ok(Hierarchy {
        domain: spec.domain,
        root: spec.root.clone(),
        shielded: spec.shielded,
        nodes: ordered,
        wrappers,
    })
}

fn check_node(spec: &TaskGraphSpec, node: &LAmdp, nodes: &[LAmdp], wrappers: &[Wrapper]) -> Result<()> {
    let err = |msg: String| Err(Error::Construction(format!("node `{}`: {msg}", node.name)));
    if node.children.is_empty() {
        return err("no children".into());
    }
    let mut seen = HashSet::new();
    for c in &node.children {
        if c == &node.name {
            return err("lists itself as a child".into());
        }
        if !seen.insert(c) {
            return err(format!("child `{c}` listed twice"));
        }
        if !nodes.iter().any(|n| &n.name == c) && !wrappers.iter().any(|w| &w.name == c) {
            return err(format!("unresolved child `{c}`"));
        }
    }
    for p in &node.params {
        if !param_kinds(spec.domain).contains(&p.kind.as_str()) {
            return err(format!("parameter kind `{}` unknown in {}", p.kind, spec.domain));
        }
    }
    for f in &node.phi {
        check_feature(spec, node, f, false)?;
    }
    for l in node.goal.iter().chain(&node.fail) {
        check_feature(spec, node, &l.feature, true)?;
    }
    Ok(())
}

fn check_feature(spec: &TaskGraphSpec, node: &LAmdp, f: &FeatureRef, must_be_boolean: bool) -> Result<()> {
    let err = |msg: String| Err(Error::Construction(format!("node `{}`, feature `{f}`: {msg}", node.name)));
    let param = |name: &str| node.params.iter().find(|p| p.name == name);
    if f.name == "param" {
        if must_be_boolean {
            return err("not boolean".into());
        }
        return match f.args.as_slice() {
            [a] if param(a).is_some() => Ok(()),
            _ => err("takes exactly one parameter name".into()),
        };
    }
    let Some(sig) = feature_sig(spec.domain, &f.name) else {
        return err(format!("unresolved feature in {}", spec.domain));
    };
    if must_be_boolean && !sig.boolean {
        return err("predicates need boolean features".into());
    }
    if sig.args.len() != f.args.len() {
        return err(format!("expects {} argument(s)", sig.args.len()));
    }
    for (slot, a) in sig.args.iter().zip(&f.args) {
        match param(a) {
            Some(p) if kind_fits(slot, &p.kind) => {}
            Some(p) => return err(format!("argument `{a}` has kind `{}`, expected `{slot}`", p.kind)),
            None => return err(format!("argument `{a}` is not a parameter")),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CYCLIC: &str = "palm-hierarchy 1\ndomain taxi\nroot A\n\
        node A\n goal all_delivered\n phi all_delivered\n children B\n\
        node B\n goal always\n phi always\n children C north\n\
        node C\n goal always\n phi always\n children B\n";

    #[test]
    fn cycle_is_a_construction_error() {
        assert!(matches!(load_hierarchy_str(CYCLIC), Err(Error::Construction(m)) if m.contains("cycle")));
    }

    #[test]
    fn unresolved_references_rejected() {
        let bad_child = "palm-hierarchy 1\ndomain taxi\nroot A\nnode A\n goal all_delivered\n phi all_delivered\n children Fly\n";
        assert!(matches!(load_hierarchy_str(bad_child), Err(Error::Construction(_))));
        let bad_feature = "palm-hierarchy 1\ndomain taxi\nroot A\nnode A\n goal fuel_full\n phi fuel_full\n children north\n";
        assert!(matches!(load_hierarchy_str(bad_feature), Err(Error::Construction(_))));
        let bad_arg = "palm-hierarchy 1\ndomain taxi\nroot A\nnode A\n goal at(loc)\n phi at(loc)\n children north\n";
        assert!(matches!(load_hierarchy_str(bad_arg), Err(Error::Construction(_))));
    }

    #[test]
    fn et_is_built_children_first() {
        let h = load_hierarchy(Path::new("builtin:et")).unwrap();
        let order: Vec<&str> = h.nodes.iter().map(|n| n.name.as_str()).collect();
        assert_eq!(order.last(), Some(&"Root"));
        let pos = |n: &str| order.iter().position(|o| *o == n).unwrap();
        assert!(pos("Navigate") < pos("Get"));
        assert!(pos("Navigate") < pos("Put"));
        assert_eq!(h.root_node().children, ["Get", "Put"]);
        assert_eq!(h.node("Get").unwrap().children, ["pickup", "Navigate"]);
        assert_eq!(h.node("Put").unwrap().children, ["putdown", "Navigate"]);
        assert_eq!(h.node("Navigate").unwrap().children, ["north", "south", "east", "west"]);
        let wrapped: Vec<&str> = h.wrappers.iter().map(|w| w.name.as_str()).collect();
        assert_eq!(wrapped, ["north", "south", "east", "west", "pickup", "putdown"]);
    }

    #[test]
    fn flat_is_a_single_node() {
        for name in ["builtin:flat-taxi", "builtin:flat-cleanup"] {
            let h = load_hierarchy(Path::new(name)).unwrap();
            assert_eq!(h.nodes.len(), 1);
            assert!(h.root_node().children.iter().all(|c| h.is_primitive(c)));
        }
    }

    #[test]
    fn construction_is_deterministic() {
        for (name, text) in BUILTIN_HIERARCHIES {
            let a = load_hierarchy_str(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            let b = load_hierarchy_str(text).unwrap();
            assert_eq!(a, b);
        }
    }
}
