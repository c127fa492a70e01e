//! Factored ground states, actions, and the environment stepping contract.
//!
//! A [`GroundState`] is an object-attribute map. Objects and attributes are
//! stored sorted, so the canonical key is a pure function of content and does
//! not depend on the order in which a state was assembled.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Attribute value. Ground states carry no reals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttrValue {
    Int(i64),
    Bool(bool),
    Tag(Arc<str>),
}

impl AttrValue {
    pub fn tag(s: &str) -> Self {
        AttrValue::Tag(Arc::from(s))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttrValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_tag(&self) -> Option<&str> {
        match self {
            AttrValue::Tag(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Int(v) => write!(f, "{v}"),
            AttrValue::Bool(v) => write!(f, "{v}"),
            AttrValue::Tag(v) => f.write_str(v),
        }
    }
}

/// Identifiers, attribute names and tags are restricted so that keys stay injective.
pub(crate) fn is_plain_token(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSchema {
    pub id: String,
    pub class: String,
    pub attrs: Vec<String>,
}

/// Object layout shared by every state of one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    objects: Vec<ObjectSchema>,
    offsets: Vec<usize>,
    len: usize,
}

impl Schema {
    /// Builds a schema; objects and attributes are sorted, and attribute sets
    /// must agree across objects of the same class.
    pub fn new(mut objects: Vec<ObjectSchema>) -> Result<Self> {
        objects.sort_by(|a, b| a.id.cmp(&b.id));
        let mut class_attrs: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for w in objects.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::DomainContract(format!("duplicate object id `{}`", w[0].id)));
            }
        }
        for obj in &mut objects {
            obj.attrs.sort();
            obj.attrs.dedup();
            if !is_plain_token(&obj.id) || obj.attrs.iter().any(|a| !is_plain_token(a)) {
                return Err(Error::DomainContract(format!(
                    "object `{}` has an id or attribute name with reserved characters",
                    obj.id
                )));
            }
            match class_attrs.get(&obj.class) {
                Some(attrs) if attrs != &obj.attrs => {
                    return Err(Error::DomainContract(format!(
                        "object `{}` of class `{}` has a different attribute set than its class",
                        obj.id, obj.class
                    )))
                }
                Some(_) => {}
                None => {
                    class_attrs.insert(obj.class.clone(), obj.attrs.clone());
                }
            }
        }
        let mut offsets = Vec::with_capacity(objects.len());
        let mut len = 0;
        for obj in &objects {
            offsets.push(len);
            len += obj.attrs.len();
        }
        Ok(Schema { objects, offsets, len })
    }

    pub fn objects(&self) -> &[ObjectSchema] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Flat slot index of `object.attr`.
    pub fn slot(&self, object: &str, attr: &str) -> Option<usize> {
        let i = self.objects.binary_search_by(|o| o.id.as_str().cmp(object)).ok()?;
        let j = self.objects[i].attrs.binary_search_by(|a| a.as_str().cmp(attr)).ok()?;
        Some(self.offsets[i] + j)
    }

    pub fn object_ids_of_class<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.objects
            .iter()
            .filter(move |o| o.class == class)
            .map(|o| o.id.as_str())
    }
}

/// A concrete environment state.
#[derive(Clone)]
pub struct GroundState {
    schema: Arc<Schema>,
    values: Vec<AttrValue>,
}

impl GroundState {
    pub fn new(schema: Arc<Schema>, values: Vec<AttrValue>) -> Result<Self> {
        if values.len() != schema.len() {
            return Err(Error::DomainContract(format!(
                "state has {} values, schema expects {}",
                values.len(),
                schema.len()
            )));
        }
        for v in &values {
            if let AttrValue::Tag(t) = v {
                if !is_plain_token(t) {
                    return Err(Error::DomainContract(format!("tag `{t}` has reserved characters")));
                }
            }
        }
        Ok(GroundState { schema, values })
    }

    /// Assembles a state from an object map given in any order.
    pub fn from_objects<I, J>(objects: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, J)>,
        J: IntoIterator<Item = (String, AttrValue)>,
    {
        let mut collected: BTreeMap<String, (String, BTreeMap<String, AttrValue>)> = BTreeMap::new();
        for (id, class, attrs) in objects {
            let attrs: BTreeMap<String, AttrValue> = attrs.into_iter().collect();
            if collected.insert(id.clone(), (class, attrs)).is_some() {
                return Err(Error::DomainContract(format!("duplicate object id `{id}`")));
            }
        }
        let schema = Schema::new(
            collected
                .iter()
                .map(|(id, (class, attrs))| ObjectSchema {
                    id: id.clone(),
                    class: class.clone(),
                    attrs: attrs.keys().cloned().collect(),
                })
                .collect(),
        )?;
        let values = collected
            .into_values()
            .flat_map(|(_, attrs)| attrs.into_values())
            .collect();
        GroundState::new(Arc::new(schema), values)
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    #[inline]
    pub fn value(&self, slot: usize) -> &AttrValue {
        &self.values[slot]
    }

    #[inline]
    pub fn int(&self, slot: usize) -> i64 {
        match &self.values[slot] {
            AttrValue::Int(v) => *v,
            other => panic!("slot {slot} holds {other:?}, expected int"),
        }
    }

    #[inline]
    pub fn flag(&self, slot: usize) -> bool {
        match &self.values[slot] {
            AttrValue::Bool(v) => *v,
            other => panic!("slot {slot} holds {other:?}, expected bool"),
        }
    }

    #[inline]
    pub fn tag(&self, slot: usize) -> &str {
        match &self.values[slot] {
            AttrValue::Tag(v) => v,
            other => panic!("slot {slot} holds {other:?}, expected tag"),
        }
    }

    #[inline]
    pub fn set(&mut self, slot: usize, value: AttrValue) {
        self.values[slot] = value;
    }

    pub fn get(&self, object: &str, attr: &str) -> Option<&AttrValue> {
        self.schema.slot(object, attr).map(|s| &self.values[s])
    }

    /// Iterates `(object id, class, [(attr, value)])` in canonical order.
    pub fn objects(&self) -> impl Iterator<Item = (&str, &str, Vec<(&str, &AttrValue)>)> + '_ {
        self.schema
            .objects
            .iter()
            .zip(&self.schema.offsets)
            .map(move |(obj, &off)| {
                let attrs = obj
                    .attrs
                    .iter()
                    .enumerate()
                    .map(|(j, a)| (a.as_str(), &self.values[off + j]))
                    .collect();
                (obj.id.as_str(), obj.class.as_str(), attrs)
            })
    }

    pub fn canonical_key(&self) -> String {
        canonical_key(self)
    }
}

/// Deterministic, injective serialization: objects and attributes in sorted order.
pub fn canonical_key(state: &GroundState) -> String {
    let mut out = String::with_capacity(state.values.len() * 8);
    for (i, (obj, &off)) in state.schema.objects.iter().zip(&state.schema.offsets).enumerate() {
        if i > 0 {
            out.push(';');
        }
        out.push_str(&obj.id);
        out.push('{');
        for (j, attr) in obj.attrs.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(attr);
            out.push('=');
            push_value(&mut out, &state.values[off + j]);
        }
        out.push('}');
    }
    out
}

pub(crate) fn push_value(out: &mut String, v: &AttrValue) {
    use std::fmt::Write;
    match v {
        AttrValue::Int(x) => {
            let _ = write!(out, "{x}");
        }
        AttrValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        AttrValue::Tag(t) => out.push_str(t),
    }
}

impl PartialEq for GroundState {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
            && (Arc::ptr_eq(&self.schema, &other.schema) || self.schema == other.schema)
    }
}

impl Eq for GroundState {}

impl Hash for GroundState {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.values.hash(state);
    }
}

impl fmt::Debug for GroundState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical_key(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Primitive,
    AbstractRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    pub id: String,
    pub kind: ActionKind,
}

impl Action {
    pub fn primitive(id: &str) -> Self {
        Action {
            id: id.to_string(),
            kind: ActionKind::Primitive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    None,
    Goal,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: GroundState,
    pub reward: f64,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Taxi,
    Cleanup,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Taxi => "taxi",
            Domain::Cleanup => "cleanup",
        }
    }

    pub fn parse(s: &str) -> Option<Domain> {
        match s {
            "taxi" => Some(Domain::Taxi),
            "cleanup" => Some(Domain::Cleanup),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Signature of a domain-registered state feature.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSig {
    pub name: &'static str,
    /// Parameter kinds of the arguments, in order.
    pub args: &'static [&'static str],
    /// Boolean features can serve as predicate literals.
    pub boolean: bool,
}

/// Splittable seeded random source; every stochastic call receives one explicitly.
#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream `stream` of seed `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng(inner)
    }

    /// Derives a child generator; the parent advances by one draw.
    pub fn split(&mut self) -> Self {
        SeededRng(ChaCha8Rng::seed_from_u64(self.0.next_u64()))
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// A task MDP: dynamics, rewards, terminal structure, and the feature
/// vocabulary that hierarchies use to abstract its states.
pub trait Environment: Send + Sync {
    fn domain(&self) -> Domain;

    /// Complete, ordered, duplicate-free primitive action list.
    fn primitive_actions(&self) -> &[Action];

    /// Samples a transition.
    fn step(&self, state: &GroundState, action: &Action, rng: &mut SeededRng) -> Result<StepOutcome>;

    /// Declared outcome distribution of `step`, merged by next state.
    fn outcomes(&self, state: &GroundState, action: &Action) -> Result<Vec<(f64, StepOutcome)>>;

    fn terminal(&self, state: &GroundState) -> Terminal;

    /// Values of a parameter kind (depot ids, block ids, ...) in this task.
    fn param_domain(&self, kind: &str) -> Result<Vec<String>>;

    fn features(&self) -> &'static [FeatureSig];

    /// Appends the values of feature `name(args)` on `state` to `out`.
    fn eval_feature(
        &self,
        name: &str,
        args: &[&str],
        state: &GroundState,
        out: &mut Vec<AttrValue>,
    ) -> Result<()>;

    /// Grid position of the acting agent.
    fn agent_position(&self, state: &GroundState) -> (i64, i64);

    /// Agent displacements a primitive can produce; used for offset parameters.
    fn displacements(&self, action: &str) -> Vec<(i64, i64)>;

    /// Grid extent `(width, height)`.
    fn grid(&self) -> (i64, i64);
}

/// Stable primitive action list of an environment.
pub fn primitive_actions(env: &dyn Environment) -> Vec<Action> {
    env.primitive_actions().to_vec()
}

pub(crate) fn lookup_action<'a>(actions: &'a [Action], id: &str) -> Result<&'a Action> {
    actions
        .iter()
        .find(|a| a.id == id)
        .ok_or_else(|| Error::InvalidAction(id.to_string()))
}

/// Merges outcomes that lead to the same next state.
pub(crate) fn merge_outcomes(raw: Vec<(f64, StepOutcome)>) -> Vec<(f64, StepOutcome)> {
    let mut merged: Vec<(f64, StepOutcome)> = Vec::with_capacity(raw.len());
    for (p, o) in raw {
        if p <= 0.0 {
            continue;
        }
        if let Some(existing) = merged.iter_mut().find(|(_, m)| m.next_state == o.next_state) {
            existing.0 += p;
        } else {
            merged.push((p, o));
        }
    }
    merged
}
