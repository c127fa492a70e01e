//! Tabular R-MAX model over abstract states of one L-AMDP.
//!
//! States and actions are interned to dense ids. A pair is known once it has
//! been counted `m` times; unknown pairs are predicted optimistically. The
//! model keeps a change log of states whose predictions changed so planners
//! can update incrementally.

use std::collections::HashMap;
use std::fmt::Write;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT_HEADER: &str = "palm-model 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Successor<F> {
    pub next: u32,
    pub count: u64,
    pub reward_sum: F,
}

#[derive(Debug, Clone, PartialEq)]
struct PairStats<F> {
    action: u32,
    n: u64,
    outcomes: Vec<Successor<F>>,
}

/// What the model predicts for a state-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction<'a, F> {
    /// Fewer than `m` observations: leads to an absorbing state worth `value_max`.
    Optimistic,
    /// Empirical distribution; `n` is the total count.
    Known { n: u64, outcomes: &'a [Successor<F>] },
    /// Frozen model without data for the pair: a self-loop with default reward.
    Unrecorded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel<F> {
    lamdp: String,
    phi_hash: String,
    m: u64,
    gamma: F,
    value_max: F,
    frozen: bool,
    state_keys: Vec<String>,
    state_ids: HashMap<String, u32>,
    action_keys: Vec<String>,
    action_ids: HashMap<String, u32>,
    pairs: Vec<Vec<PairStats<F>>>,
    preds: Vec<Vec<(u32, u32)>>,
    changes: Vec<u32>,
}

/// Hex SHA-256 of an abstraction signature.
pub fn phi_hash(signature: &str) -> String {
    hex(&Sha256::digest(signature.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

impl<F: Scalar> TabularModel<F> {
    /// `value_max` is the optimistic bound, usually goal reward / (1 − γ).
    pub fn new(lamdp: &str, phi_signature: &str, m: u64, gamma: F, value_max: F) -> Self {
        TabularModel {
            lamdp: lamdp.to_string(),
            phi_hash: phi_hash(phi_signature),
            m: m.max(1),
            gamma,
            value_max,
            frozen: false,
            state_keys: Vec::new(),
            state_ids: HashMap::new(),
            action_keys: Vec::new(),
            action_ids: HashMap::new(),
            pairs: Vec::new(),
            preds: Vec::new(),
            changes: Vec::new(),
        }
    }

    pub fn lamdp(&self) -> &str {
        &self.lamdp
    }

    pub fn phi_hash(&self) -> &str {
        &self.phi_hash
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn gamma(&self) -> F {
        self.gamma
    }

    pub fn value_max(&self) -> F {
        self.value_max
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
        self.changes.extend(0..self.state_keys.len() as u32);
    }

    pub fn intern_state(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.state_ids.get(key) {
            return id;
        }
        let id = self.state_keys.len() as u32;
        self.state_keys.push(key.to_string());
        self.state_ids.insert(key.to_string(), id);
        self.pairs.push(Vec::new());
        self.preds.push(Vec::new());
        id
    }

    pub fn intern_action(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.action_ids.get(key) {
            return id;
        }
        let id = self.action_keys.len() as u32;
        self.action_keys.push(key.to_string());
        self.action_ids.insert(key.to_string(), id);
        id
    }

    pub fn state_id(&self, key: &str) -> Option<u32> {
        self.state_ids.get(key).copied()
    }

    pub fn action_id(&self, key: &str) -> Option<u32> {
        self.action_ids.get(key).copied()
    }

    pub fn state_key(&self, id: u32) -> &str {
        &self.state_keys[id as usize]
    }

    pub fn action_key(&self, id: u32) -> &str {
        &self.action_keys[id as usize]
    }

    pub fn state_count(&self) -> usize {
        self.state_keys.len()
    }

    fn stats(&self, s: u32, a: u32) -> Option<&PairStats<F>> {
        self.pairs.get(s as usize)?.iter().find(|p| p.action == a)
    }

    pub fn count(&self, s: u32, a: u32) -> u64 {
        self.stats(s, a).map_or(0, |p| p.n)
    }

    /// Count of `s → s2` under `a`.
    pub fn transition_count(&self, s: u32, a: u32, s2: u32) -> u64 {
        self.stats(s, a)
            .and_then(|p| p.outcomes.iter().find(|o| o.next == s2))
            .map_or(0, |o| o.count)
    }

    pub fn is_known(&self, s: u32, a: u32) -> bool {
        self.frozen || self.count(s, a) >= self.m
    }

    pub fn predicted(&self, s: u32, a: u32) -> Prediction<'_, F> {
        match self.stats(s, a) {
            Some(p) if p.n >= self.m || (self.frozen && p.n > 0) => Prediction::Known {
                n: p.n,
                outcomes: &p.outcomes,
            },
            _ if self.frozen => Prediction::Unrecorded,
            _ => Prediction::Optimistic,
        }
    }

    /// `(next, probability, mean reward)` of a known pair; empty otherwise.
    pub fn distribution(&self, s: u32, a: u32) -> Vec<(u32, F, F)> {
        match self.predicted(s, a) {
            Prediction::Known { n, outcomes } => {
                let n = F::lit(n as f64);
                outcomes
                    .iter()
                    .map(|o| {
                        let c = F::lit(o.count as f64);
                        (o.next, c / n, o.reward_sum / c)
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// Records `s --a--> s2` with reward `r` unless gated by `child_known = false`.
    /// Returns whether the pair was known before this observation.
    pub fn observe(&mut self, s: u32, a: u32, s2: u32, r: F, child_known: bool) -> bool {
        if self.frozen {
            return true;
        }
        let m = self.m;
        let pairs = &mut self.pairs[s as usize];
        let idx = match pairs.iter().position(|p| p.action == a) {
            Some(i) => i,
            None => {
                pairs.push(PairStats {
                    action: a,
                    n: 0,
                    outcomes: Vec::new(),
                });
                pairs.len() - 1
            }
        };
        let stats = &mut pairs[idx];
        let known_before = stats.n >= m;
        if !child_known {
            return known_before;
        }
        let changed = match stats.outcomes.iter_mut().find(|o| o.next == s2) {
            Some(o) => {
                let single = stats.n == o.count;
                let old_mean = o.reward_sum / F::lit(o.count as f64);
                o.count += 1;
                o.reward_sum = o.reward_sum + r;
                let new_mean = o.reward_sum / F::lit(o.count as f64);
                !(single && old_mean == new_mean)
            }
            None => {
                stats.outcomes.push(Successor {
                    next: s2,
                    count: 1,
                    reward_sum: r,
                });
                self.preds[s2 as usize].push((s, a));
                true
            }
        };
        stats.n += 1;
        if stats.n == m || (stats.n > m && changed) {
            self.changes.push(s);
        }
        known_before
    }

    /// States whose predictions changed, in order; planners keep a cursor.
    pub fn change_log(&self) -> &[u32] {
        &self.changes
    }

    /// Pairs `(s, a)` with at least one recorded transition into `s2`.
    pub fn predecessors(&self, s2: u32) -> &[(u32, u32)] {
        &self.preds[s2 as usize]
    }

    /// Actions with at least one counted observation from `s`.
    pub fn recorded_actions(&self, s: u32) -> impl Iterator<Item = u32> + '_ {
        self.pairs
            .get(s as usize)
            .into_iter()
            .flatten()
            .filter(|p| p.n > 0)
            .map(|p| p.action)
    }

    /// Successors recorded for `(s, a)`.
    pub fn successors(&self, s: u32, a: u32) -> &[Successor<F>] {
        self.stats(s, a).map_or(&[], |p| &p.outcomes)
    }

    /// Number of recorded `(s, a, s')` rows.
    pub fn row_count(&self) -> usize {
        self.pairs.iter().flatten().map(|p| p.outcomes.len()).sum()
    }

    /// `(s, a)` pairs with any data, in id order.
    pub fn recorded_pairs(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for (s, pairs) in self.pairs.iter().enumerate() {
            for p in pairs {
                out.push((s as u32, p.action));
            }
        }
        out
    }

    /// Drops all data about actions whose key satisfies `pred`.
    pub fn prune_actions(&mut self, pred: impl Fn(&str) -> bool) {
        let keys = &self.action_keys;
        for (s, pairs) in self.pairs.iter_mut().enumerate() {
            let before = pairs.len();
            pairs.retain(|p| !pred(&keys[p.action as usize]));
            if pairs.len() != before {
                self.changes.push(s as u32);
            }
        }
        for preds in &mut self.preds {
            preds.retain(|&(_, a)| !pred(&keys[a as usize]));
        }
    }

    /// Checks `Σ_{s'} n(s,a,s') = n(s,a)` everywhere.
    pub fn counts_consistent(&self) -> bool {
        self.pairs
            .iter()
            .flatten()
            .all(|p| p.outcomes.iter().map(|o| o.count).sum::<u64>() == p.n)
    }

    pub fn serialize(&self) -> String {
        let mut rows: Vec<(&str, &str, &str, u64, F)> = Vec::with_capacity(self.row_count());
        for (s, pairs) in self.pairs.iter().enumerate() {
            for p in pairs {
                for o in &p.outcomes {
                    rows.push((
                        &self.state_keys[s],
                        &self.action_keys[p.action as usize],
                        &self.state_keys[o.next as usize],
                        o.count,
                        o.reward_sum,
                    ));
                }
            }
        }
        rows.sort_by(|x, y| (x.0, x.1, x.2).cmp(&(y.0, y.1, y.2)));
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "lamdp {}", self.lamdp);
        let _ = writeln!(out, "phi {}", self.phi_hash);
        let _ = writeln!(out, "m {}", self.m);
        let _ = writeln!(out, "gamma {}", self.gamma);
        let _ = writeln!(out, "value_max {}", self.value_max);
        let _ = writeln!(out, "frozen {}", self.frozen);
        let _ = writeln!(out, "rows {}", rows.len());
        for (s, a, s2, c, r) in rows {
            let _ = writeln!(out, "{s}\t{a}\t{s2}\t{c}\t{r}");
        }
        let sum = hex(&Sha256::digest(out.as_bytes()));
        let _ = writeln!(out, "checksum {sum}");
        out
    }

    pub fn deserialize(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::ModelLoad(msg);
        let body_end = text
            .rfind("checksum ")
            .ok_or_else(|| bad("missing checksum".into()))?;
        let (body, tail) = text.split_at(body_end);
        let expected = tail.trim_start_matches("checksum ").trim();
        if hex(&Sha256::digest(body.as_bytes())) != expected {
            return Err(bad("checksum mismatch".into()));
        }
        let mut lines = body.lines();
        match lines.next() {
            Some(FORMAT_HEADER) => {}
            Some(other) => return Err(bad(format!("unsupported model format `{other}`"))),
            None => return Err(bad("empty model file".into())),
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{name}`")))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{name}`, got `{line}`")))
        };
        let lamdp = field("lamdp")?;
        let phi = field("phi")?;
        let num = |v: String, name: &str| -> Result<F> {
            v.parse::<F>().map_err(|_| bad(format!("bad `{name}` value `{v}`")))
        };
        let m: u64 = field("m")?.parse().map_err(|_| bad("bad `m`".into()))?;
        let gamma = num(field("gamma")?, "gamma")?;
        let value_max = num(field("value_max")?, "value_max")?;
        let frozen = match field("frozen")?.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(bad(format!("bad `frozen` value `{other}`"))),
        };
        let rows: usize = field("rows")?.parse().map_err(|_| bad("bad `rows`".into()))?;
        let mut model = TabularModel {
            lamdp,
            phi_hash: phi,
            m: m.max(1),
            gamma,
            value_max,
            frozen: false,
            state_keys: Vec::new(),
            state_ids: HashMap::new(),
            action_keys: Vec::new(),
            action_ids: HashMap::new(),
            pairs: Vec::new(),
            preds: Vec::new(),
            changes: Vec::new(),
        };
        let mut read = 0;
        for line in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            let [s, a, s2, c, r] = cols[..] else {
                return Err(bad(format!("malformed row `{line}`")));
            };
            let count: u64 = c.parse().map_err(|_| bad(format!("bad count `{c}`")))?;
            let reward_sum = num(r.to_string(), "reward_sum")?;
            let (s, a, s2) = (model.intern_state(s), model.intern_action(a), model.intern_state(s2));
            let pairs = &mut model.pairs[s as usize];
            let idx = match pairs.iter().position(|p| p.action == a) {
                Some(i) => i,
                None => {
                    pairs.push(PairStats {
                        action: a,
                        n: 0,
                        outcomes: Vec::new(),
                    });
                    pairs.len() - 1
                }
            };
            pairs[idx].n += count;
            pairs[idx].outcomes.push(Successor {
                next: s2,
                count,
                reward_sum,
            });
            model.preds[s2 as usize].push((s, a));
            read += 1;
        }
        if read != rows {
            return Err(bad(format!("expected {rows} rows, found {read}")));
        }
        model.frozen = frozen;
        model.changes.extend(0..model.state_keys.len() as u32);
        Ok(model)
    }
}
