use std::collections::HashMap;

use super::{FeatureRef, LAmdp, Literal, Param, PseudoReward, Wrapper};
use crate::error::{Error, Result};
use crate::mdp::{is_plain_token, Domain};

/// A hierarchy file as written, before Phase-2 ordering and reference checks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraphSpec {
    pub domain: Domain,
    pub root: String,
    pub shielded: bool,
    pub nodes: Vec<LAmdp>,
    pub wrappers: Vec<Wrapper>,
    /// Declaration line of each node and wrapper, for diagnostics.
    pub lines: HashMap<String, usize>,
}

enum Block {
    None,
    Node(LAmdp),
    Wrapper(Wrapper),
}

pub fn parse_task_graph(text: &str) -> Result<TaskGraphSpec> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, "palm-hierarchy 1")) => {}
        Some((n, other)) => {
            return Err(Error::parse(n, "header", format!("expected `palm-hierarchy 1`, got `{other}`")))
        }
        None => return Err(Error::parse(0, "header", "empty hierarchy file")),
    }

    let mut domain = None;
    let mut root = None;
    let mut shielded = false;
    let mut nodes = Vec::new();
    let mut wrappers = Vec::new();
    let mut decl_lines = HashMap::new();
    let mut current = Block::None;

    for (n, line) in lines {
        let (keyword, rest) = match line.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (line, ""),
        };
        let words: Vec<&str> = rest.split_whitespace().collect();
        match keyword {
            "domain" => {
                domain = Some(
                    Domain::parse(rest).ok_or_else(|| Error::parse(n, "domain", format!("unknown domain `{rest}`")))?,
                )
            }
            "root" => root = Some(single_name(n, "root", &words)?),
            "shield" => {
                shielded = match rest {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::parse(n, "shield", "expected `true` or `false`")),
                }
            }
            "node" | "wrapper" => {
                let name = single_name(n, keyword, &words)?;
                if decl_lines.insert(name.clone(), n).is_some() {
                    return Err(Error::parse(n, keyword, format!("`{name}` declared twice")));
                }
                let block = std::mem::replace(
                    &mut current,
                    if keyword == "node" {
                        Block::Node(LAmdp {
                            name,
                            params: Vec::new(),
                            goal: Vec::new(),
                            fail: Vec::new(),
                            phi: Vec::new(),
                            children: Vec::new(),
                            reward: PseudoReward::default(),
                        })
                    } else {
                        Block::Wrapper(Wrapper {
                            name,
                            action: String::new(),
                            offset: false,
                        })
                    },
                );
                close(block, &mut nodes, &mut wrappers);
            }
            field => match &mut current {
                Block::Node(node) => node_field(n, node, field, &words)?,
                Block::Wrapper(w) => match field {
                    "action" => w.action = single_name(n, "action", &words)?,
                    "offset" if words.is_empty() => w.offset = true,
                    _ => return Err(Error::parse(n, field, "unknown wrapper field")),
                },
                Block::None => return Err(Error::parse(n, field, "field outside of a node or wrapper block")),
            },
        }
    }
    close(current, &mut nodes, &mut wrappers);

    let domain = domain.ok_or_else(|| Error::parse(0, "domain", "missing `domain` line"))?;
    let root = root.ok_or_else(|| Error::parse(0, "root", "missing `root` line"))?;
    for w in &wrappers {
        if w.action.is_empty() {
            return Err(Error::parse(decl_lines[&w.name], "action", format!("wrapper `{}` names no action", w.name)));
        }
    }
    Ok(TaskGraphSpec {
        domain,
        root,
        shielded,
        nodes,
        wrappers,
        lines: decl_lines,
    })
}

fn close(block: Block, nodes: &mut Vec<LAmdp>, wrappers: &mut Vec<Wrapper>) {
    match block {
        Block::None => {}
        Block::Node(n) => nodes.push(n),
        Block::Wrapper(w) => wrappers.push(w),
    }
}

fn single_name(line: usize, field: &str, words: &[&str]) -> Result<String> {
    match words {
        [name] if is_plain_token(name) => Ok(name.to_string()),
        _ => Err(Error::parse(line, field, "expected a single plain name")),
    }
}

fn node_field(line: usize, node: &mut LAmdp, field: &str, words: &[&str]) -> Result<()> {
    match field {
        "params" => {
            for w in words {
                let Some((name, kind)) = w.split_once(':') else {
                    return Err(Error::parse(line, "params", format!("`{w}` is not `name:kind`")));
                };
                if !is_plain_token(name) || !is_plain_token(kind) {
                    return Err(Error::parse(line, "params", format!("bad parameter `{w}`")));
                }
                if node.params.iter().any(|p| p.name == name) {
                    return Err(Error::parse(line, "params", format!("parameter `{name}` repeated")));
                }
                node.params.push(Param {
                    name: name.into(),
                    kind: kind.into(),
                });
            }
        }
        "goal" => node.goal = words.iter().map(|w| parse_literal(line, "goal", w)).collect::<Result<_>>()?,
        "fail" => node.fail = words.iter().map(|w| parse_literal(line, "fail", w)).collect::<Result<_>>()?,
        "phi" => node.phi = words.iter().map(|w| parse_feature(line, "phi", w)).collect::<Result<_>>()?,
        "children" => {
            node.children = words
                .iter()
                .map(|w| match *w {
                    "@primitives" => Ok(w.to_string()),
                    _ => single_name(line, "children", &[w]),
                })
                .collect::<Result<_>>()?
        }
        "reward" => {
            for w in words {
                let parsed = w.split_once('=').and_then(|(k, v)| v.parse::<f64>().ok().map(|v| (k, v)));
                match parsed {
                    Some(("goal", v)) => node.reward.goal = v,
                    Some(("fail", v)) => node.reward.fail = v,
                    Some(("default", v)) => node.reward.default = v,
                    _ => return Err(Error::parse(line, "reward", format!("bad reward entry `{w}`"))),
                }
            }
        }
        other => return Err(Error::parse(line, other, "unknown node field")),
    }
    Ok(())
}

pub(crate) fn parse_feature(line: usize, field: &str, text: &str) -> Result<FeatureRef> {
    let (name, args) = match text.split_once('(') {
        None => (text, Vec::new()),
        Some((name, rest)) => {
            let Some(inner) = rest.strip_suffix(')') else {
                return Err(Error::parse(line, field, format!("unclosed argument list in `{text}`")));
            };
            let args: Vec<String> = inner.split(',').map(|a| a.trim().to_string()).collect();
            (name, args)
        }
    };
    if !is_plain_token(name) || args.iter().any(|a| !is_plain_token(a)) {
        return Err(Error::parse(line, field, format!("malformed feature `{text}`")));
    }
    Ok(FeatureRef {
        name: name.to_string(),
        args,
    })
}

fn parse_literal(line: usize, field: &str, text: &str) -> Result<Literal> {
    let (negated, rest) = match text.strip_prefix('!') {
        Some(r) => (true, r),
        None => (false, text),
    };
    Ok(Literal {
        negated,
        feature: parse_feature(line, field, rest)?,
    })
}
