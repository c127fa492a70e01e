//! The Taxi family: deterministic corridor, classic fickle 5×5, multi-passenger and 20×20 variants.
//!
//! Coordinates grow north (`y + 1`) and east (`x + 1`). Walls are blocked
//! edges between neighbouring cells and belong to the task, not the state.

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{
    lookup_action, merge_outcomes, Action, AttrValue, Domain, Environment, FeatureSig, GroundState,
    ObjectSchema, Schema, SeededRng, StepOutcome, Terminal,
};

pub const STEP_REWARD: f64 = -1.0;
pub const DELIVERY_REWARD: f64 = 20.0;
pub const ILLEGAL_REWARD: f64 = -10.0;

pub(crate) const ACTION_IDS: [&str; 6] = ["north", "south", "east", "west", "pickup", "putdown"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WallLayout {
    /// No interior walls.
    Open,
    /// The three interior segments of the classic 5×5 map.
    Classic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxiVariant {
    pub width: i64,
    pub height: i64,
    pub passengers: usize,
    pub movement_noise: f64,
    pub fickle_probability: f64,
    pub walls: WallLayout,
}

impl TaxiVariant {
    /// 1×5 corridor, deterministic, one passenger.
    pub fn small() -> Self {
        TaxiVariant {
            width: 1,
            height: 5,
            passengers: 1,
            movement_noise: 0.0,
            fickle_probability: 0.0,
            walls: WallLayout::Open,
        }
    }

    /// Classic fickle 5×5 with noisy movement.
    pub fn classic() -> Self {
        TaxiVariant {
            width: 5,
            height: 5,
            passengers: 1,
            movement_noise: 0.2,
            fickle_probability: 0.3,
            walls: WallLayout::Classic,
        }
    }

    pub fn classic_two_passengers() -> Self {
        TaxiVariant {
            passengers: 2,
            ..TaxiVariant::classic()
        }
    }

    /// Classic map without any stochasticity.
    pub fn classic_deterministic() -> Self {
        TaxiVariant {
            movement_noise: 0.0,
            fickle_probability: 0.0,
            ..TaxiVariant::classic()
        }
    }

    /// 20×20, one passenger, depots in the corners, deterministic.
    pub fn large() -> Self {
        TaxiVariant {
            width: 20,
            height: 20,
            passengers: 1,
            movement_noise: 0.0,
            fickle_probability: 0.0,
            walls: WallLayout::Open,
        }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "taxi-small" => Some(Self::small()),
            "taxi-classic" => Some(Self::classic()),
            "taxi-classic-2p" => Some(Self::classic_two_passengers()),
            "taxi-classic-det" => Some(Self::classic_deterministic()),
            "taxi-large" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.movement_noise == 0.0 && self.fickle_probability == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Depot {
    pub name: String,
    pub x: i64,
    pub y: i64,
    pub color: String,
}

#[derive(Debug, Clone, Copy)]
struct PassengerSlots {
    x: usize,
    y: usize,
    in_taxi: usize,
    goal: usize,
    fickle: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    North,
    South,
    East,
    West,
}

impl Dir {
    fn delta(self) -> (i64, i64) {
        match self {
            Dir::North => (0, 1),
            Dir::South => (0, -1),
            Dir::East => (1, 0),
            Dir::West => (-1, 0),
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn perpendicular(self) -> [Dir; 2] {
        match self {
            Dir::North | Dir::South => [Dir::East, Dir::West],
            Dir::East | Dir::West => [Dir::North, Dir::South],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Move(Dir),
    Pickup,
    Putdown,
}

/// A sampled Taxi task.
#[derive(Debug, Clone)]
pub struct TaxiEnv {
    variant: TaxiVariant,
    depots: Vec<Depot>,
    /// `blocked[cell][dir]`: leaving `cell` in `dir` is impossible.
    blocked: Vec<[bool; 4]>,
    schema: Arc<Schema>,
    taxi_x: usize,
    taxi_y: usize,
    passengers: Vec<PassengerSlots>,
    passenger_ids: Vec<String>,
    actions: Vec<Action>,
}

fn classic_walls() -> Vec<((i64, i64), (i64, i64))> {
    vec![
        ((1, 4), (2, 4)),
        ((1, 3), (2, 3)),
        ((0, 1), (1, 1)),
        ((0, 0), (1, 0)),
        ((2, 1), (3, 1)),
        ((2, 0), (3, 0)),
    ]
}

fn depots_for(variant: &TaxiVariant) -> Vec<Depot> {
    let d = |name: &str, x, y, color: &str| Depot {
        name: name.into(),
        x,
        y,
        color: color.into(),
    };
    let (w, h) = (variant.width, variant.height);
    if w == 1 {
        // corridor: four of the five cells carry a depot
        vec![
            d("R", 0, h - 1, "red"),
            d("G", 0, (h - 2).max(0), "green"),
            d("Y", 0, 0, "yellow"),
            d("B", 0, 1.min(h - 1), "blue"),
        ]
    } else if variant.walls == WallLayout::Classic && w == 5 && h == 5 {
        vec![
            d("R", 0, 4, "red"),
            d("G", 4, 4, "green"),
            d("Y", 0, 0, "yellow"),
            d("B", 3, 0, "blue"),
        ]
    } else {
        vec![
            d("R", 0, h - 1, "red"),
            d("G", w - 1, h - 1, "green"),
            d("Y", 0, 0, "yellow"),
            d("B", w - 1, 0, "blue"),
        ]
    }
}

/// Samples a task: passengers at uniform depots with distinct uniform goals, taxi at a uniform cell.
pub fn make_taxi_task(variant: &TaxiVariant, rng: &mut SeededRng) -> Result<(TaxiEnv, GroundState)> {
    let env = TaxiEnv::new(variant.clone())?;
    let n = env.depots.len();
    let mut placements = Vec::with_capacity(variant.passengers);
    for _ in 0..variant.passengers {
        let start = rng.gen_range(0..n);
        let mut goal = rng.gen_range(0..n - 1);
        if goal >= start {
            goal += 1;
        }
        placements.push((start, goal));
    }
    let tx = rng.gen_range(0..variant.width);
    let ty = rng.gen_range(0..variant.height);
    let state = env.state_from(tx, ty, &placements)?;
    Ok((env, state))
}

impl TaxiEnv {
    pub fn new(variant: TaxiVariant) -> Result<Self> {
        if variant.width < 1 || variant.height < 1 {
            return Err(Error::Config("taxi grid dimensions must be positive".into()));
        }
        if variant.passengers < 1 {
            return Err(Error::Config("taxi needs at least one passenger".into()));
        }
        if !(0.0..=1.0).contains(&variant.movement_noise) || !(0.0..=1.0).contains(&variant.fickle_probability) {
            return Err(Error::Config("taxi probabilities must lie in [0,1]".into()));
        }
        let depots = depots_for(&variant);
        if variant.passengers > depots.len() {
            return Err(Error::Config(format!(
                "{} passengers but only {} depots",
                variant.passengers,
                depots.len()
            )));
        }
        let (w, h) = (variant.width, variant.height);
        let mut blocked = vec![[false; 4]; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                for dir in [Dir::North, Dir::South, Dir::East, Dir::West] {
                    let (dx, dy) = dir.delta();
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        blocked[(y * w + x) as usize][dir.index()] = true;
                    }
                }
            }
        }
        let walls: HashSet<((i64, i64), (i64, i64))> = match variant.walls {
            WallLayout::Classic if w == 5 && h == 5 => classic_walls().into_iter().collect(),
            WallLayout::Classic => return Err(Error::Config("classic walls need a 5×5 grid".into())),
            WallLayout::Open => HashSet::new(),
        };
        for &((ax, ay), (bx, by)) in &walls {
            let dir_ab = match (bx - ax, by - ay) {
                (1, 0) => Dir::East,
                (-1, 0) => Dir::West,
                (0, 1) => Dir::North,
                (0, -1) => Dir::South,
                _ => return Err(Error::Config("wall between non-adjacent cells".into())),
            };
            let dir_ba = match dir_ab {
                Dir::East => Dir::West,
                Dir::West => Dir::East,
                Dir::North => Dir::South,
                Dir::South => Dir::North,
            };
            blocked[(ay * w + ax) as usize][dir_ab.index()] = true;
            blocked[(by * w + bx) as usize][dir_ba.index()] = true;
        }

        let passenger_ids: Vec<String> = (0..variant.passengers).map(|i| format!("passenger{i}")).collect();
        let mut objects = vec![ObjectSchema {
            id: "taxi".into(),
            class: "taxi".into(),
            attrs: vec!["x".into(), "y".into()],
        }];
        for id in &passenger_ids {
            objects.push(ObjectSchema {
                id: id.clone(),
                class: "passenger".into(),
                attrs: vec!["x".into(), "y".into(), "in_taxi".into(), "goal".into(), "fickle".into()],
            });
        }
        for d in &depots {
            objects.push(ObjectSchema {
                id: format!("depot_{}", d.name),
                class: "depot".into(),
                attrs: vec!["x".into(), "y".into(), "color".into()],
            });
        }
        let schema = Arc::new(Schema::new(objects)?);
        let slot = |o: &str, a: &str| schema.slot(o, a).expect("slot exists");
        let passengers = passenger_ids
            .iter()
            .map(|id| PassengerSlots {
                x: slot(id, "x"),
                y: slot(id, "y"),
                in_taxi: slot(id, "in_taxi"),
                goal: slot(id, "goal"),
                fickle: slot(id, "fickle"),
            })
            .collect();
        Ok(TaxiEnv {
            taxi_x: slot("taxi", "x"),
            taxi_y: slot("taxi", "y"),
            passengers,
            passenger_ids,
            depots,
            blocked,
            actions: ACTION_IDS.iter().map(|a| Action::primitive(a)).collect(),
            schema,
            variant,
        })
    }

    pub fn variant(&self) -> &TaxiVariant {
        &self.variant
    }

    pub fn depots(&self) -> &[Depot] {
        &self.depots
    }

    pub fn passenger_ids(&self) -> &[String] {
        &self.passenger_ids
    }

    /// Builds a state with the taxi at `(tx, ty)` and passengers waiting at
    /// `(start depot, goal depot)` index pairs.
    pub fn state_from(&self, tx: i64, ty: i64, passengers: &[(usize, usize)]) -> Result<GroundState> {
        if passengers.len() != self.passengers.len() {
            return Err(Error::DomainContract("passenger count mismatch".into()));
        }
        if !self.in_grid(tx, ty) {
            return Err(Error::DomainContract(format!("taxi at ({tx},{ty}) is off the grid")));
        }
        let mut values = vec![AttrValue::Int(0); self.schema.len()];
        values[self.taxi_x] = AttrValue::Int(tx);
        values[self.taxi_y] = AttrValue::Int(ty);
        for (slots, &(start, goal)) in self.passengers.iter().zip(passengers) {
            let (s, g) = (self.depot(start)?, self.depot(goal)?);
            values[slots.x] = AttrValue::Int(s.x);
            values[slots.y] = AttrValue::Int(s.y);
            values[slots.in_taxi] = AttrValue::Bool(false);
            values[slots.goal] = AttrValue::tag(&g.name);
            values[slots.fickle] = AttrValue::Bool(false);
        }
        for d in &self.depots {
            let id = format!("depot_{}", d.name);
            values[self.schema.slot(&id, "x").unwrap()] = AttrValue::Int(d.x);
            values[self.schema.slot(&id, "y").unwrap()] = AttrValue::Int(d.y);
            values[self.schema.slot(&id, "color").unwrap()] = AttrValue::tag(&d.color);
        }
        GroundState::new(self.schema.clone(), values)
    }

    fn depot(&self, i: usize) -> Result<&Depot> {
        self.depots
            .get(i)
            .ok_or_else(|| Error::DomainContract(format!("no depot #{i}")))
    }

    fn depot_index(&self, name: &str) -> Option<usize> {
        self.depots.iter().position(|d| d.name == name)
    }

    fn depot_at(&self, x: i64, y: i64) -> Option<&Depot> {
        self.depots.iter().find(|d| d.x == x && d.y == y)
    }

    fn in_grid(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.variant.width && y < self.variant.height
    }

    fn check(&self, state: &GroundState) -> Result<()> {
        if !Arc::ptr_eq(state.schema(), &self.schema) && **state.schema() != *self.schema {
            return Err(Error::DomainContract("state does not follow this taxi task's schema".into()));
        }
        Ok(())
    }

    fn parse_action(&self, action: &Action) -> Result<Act> {
        lookup_action(&self.actions, &action.id)?;
        Ok(match action.id.as_str() {
            "north" => Act::Move(Dir::North),
            "south" => Act::Move(Dir::South),
            "east" => Act::Move(Dir::East),
            "west" => Act::Move(Dir::West),
            "pickup" => Act::Pickup,
            _ => Act::Putdown,
        })
    }

    fn carried(&self, state: &GroundState) -> Option<usize> {
        self.passengers.iter().position(|p| state.flag(p.in_taxi))
    }

    fn delivered(&self, state: &GroundState, i: usize) -> bool {
        let p = &self.passengers[i];
        if state.flag(p.in_taxi) {
            return false;
        }
        let goal = state.tag(p.goal);
        match self.depot_index(goal) {
            Some(g) => {
                let d = &self.depots[g];
                state.int(p.x) == d.x && state.int(p.y) == d.y
            }
            None => false,
        }
    }

    fn all_delivered(&self, state: &GroundState) -> bool {
        (0..self.passengers.len()).all(|i| self.delivered(state, i))
    }

    fn moved(&self, state: &GroundState, dir: Dir) -> GroundState {
        let (x, y) = (state.int(self.taxi_x), state.int(self.taxi_y));
        let cell = (y * self.variant.width + x) as usize;
        let mut next = state.clone();
        if !self.blocked[cell][dir.index()] {
            let (dx, dy) = dir.delta();
            next.set(self.taxi_x, AttrValue::Int(x + dx));
            next.set(self.taxi_y, AttrValue::Int(y + dy));
            if let Some(i) = self.carried(state) {
                let p = &self.passengers[i];
                next.set(p.x, AttrValue::Int(x + dx));
                next.set(p.y, AttrValue::Int(y + dy));
            }
        }
        next
    }

    /// Pickup/putdown result (deterministic); `None` when illegal.
    fn manipulate(&self, state: &GroundState, act: Act) -> Option<GroundState> {
        let (x, y) = (state.int(self.taxi_x), state.int(self.taxi_y));
        match act {
            Act::Pickup => {
                if self.carried(state).is_some() {
                    return None;
                }
                let i = (0..self.passengers.len()).find(|&i| {
                    let p = &self.passengers[i];
                    state.int(p.x) == x && state.int(p.y) == y && !self.delivered(state, i)
                })?;
                let p = &self.passengers[i];
                let mut next = state.clone();
                next.set(p.in_taxi, AttrValue::Bool(true));
                next.set(p.fickle, AttrValue::Bool(self.variant.fickle_probability > 0.0));
                Some(next)
            }
            Act::Putdown => {
                let i = self.carried(state)?;
                self.depot_at(x, y)?;
                let p = &self.passengers[i];
                let mut next = state.clone();
                next.set(p.in_taxi, AttrValue::Bool(false));
                next.set(p.fickle, AttrValue::Bool(false));
                Some(next)
            }
            Act::Move(_) => None,
        }
    }

    fn finish(&self, next: GroundState, reward: f64) -> StepOutcome {
        let terminal = self.terminal(&next);
        StepOutcome {
            next_state: next,
            reward,
            terminal,
        }
    }

    /// Reward of a legal putdown into `next`.
    fn putdown_reward(&self, next: &GroundState) -> f64 {
        if self.all_delivered(next) {
            DELIVERY_REWARD
        } else {
            STEP_REWARD
        }
    }

    /// Index of the carried passenger whose destination is still in play.
    fn fickle_pending(&self, state: &GroundState) -> Option<usize> {
        self.carried(state).filter(|&i| state.flag(self.passengers[i].fickle))
    }

    fn with_goal(&self, state: &GroundState, i: usize, goal: Option<usize>) -> GroundState {
        let p = &self.passengers[i];
        let mut next = state.clone();
        next.set(p.fickle, AttrValue::Bool(false));
        if let Some(g) = goal {
            next.set(p.goal, AttrValue::tag(&self.depots[g].name));
        }
        next
    }

    fn other_depots(&self, state: &GroundState, i: usize) -> Vec<usize> {
        let current = self.depot_index(state.tag(self.passengers[i].goal));
        (0..self.depots.len()).filter(|&d| Some(d) != current).collect()
    }
}

impl Environment for TaxiEnv {
    fn domain(&self) -> Domain {
        Domain::Taxi
    }

    fn primitive_actions(&self) -> &[Action] {
        &self.actions
    }

    fn step(&self, state: &GroundState, action: &Action, rng: &mut SeededRng) -> Result<StepOutcome> {
        self.check(state)?;
        let act = self.parse_action(action)?;
        match act {
            Act::Move(dir) => {
                let realized = if self.variant.movement_noise > 0.0 {
                    let u: f64 = rng.gen();
                    let noise = self.variant.movement_noise;
                    let [left, right] = dir.perpendicular();
                    if u < 1.0 - noise {
                        dir
                    } else if u < 1.0 - noise / 2.0 {
                        left
                    } else {
                        right
                    }
                } else {
                    dir
                };
                let mut next = self.moved(state, realized);
                if let Some(i) = self.fickle_pending(state) {
                    let change = rng.gen::<f64>() < self.variant.fickle_probability;
                    let goal = if change {
                        let others = self.other_depots(state, i);
                        Some(others[rng.gen_range(0..others.len())])
                    } else {
                        None
                    };
                    next = self.with_goal(&next, i, goal);
                }
                Ok(self.finish(next, STEP_REWARD))
            }
            Act::Pickup | Act::Putdown => Ok(match self.manipulate(state, act) {
                Some(next) => {
                    let reward = if act == Act::Putdown {
                        self.putdown_reward(&next)
                    } else {
                        STEP_REWARD
                    };
                    self.finish(next, reward)
                }
                None => self.finish(state.clone(), ILLEGAL_REWARD),
            }),
        }
    }

    fn outcomes(&self, state: &GroundState, action: &Action) -> Result<Vec<(f64, StepOutcome)>> {
        self.check(state)?;
        let act = self.parse_action(action)?;
        let raw = match act {
            Act::Move(dir) => {
                let noise = self.variant.movement_noise;
                let [left, right] = dir.perpendicular();
                let mut moves = vec![(1.0 - noise, dir)];
                if noise > 0.0 {
                    moves.push((noise / 2.0, left));
                    moves.push((noise / 2.0, right));
                }
                let mut raw = Vec::new();
                for (p, d) in moves {
                    let next = self.moved(state, d);
                    match self.fickle_pending(state) {
                        Some(i) => {
                            let fp = self.variant.fickle_probability;
                            raw.push((p * (1.0 - fp), self.finish(self.with_goal(&next, i, None), STEP_REWARD)));
                            let others = self.other_depots(state, i);
                            for g in &others {
                                raw.push((
                                    p * fp / others.len() as f64,
                                    self.finish(self.with_goal(&next, i, Some(*g)), STEP_REWARD),
                                ));
                            }
                        }
                        None => raw.push((p, self.finish(next, STEP_REWARD))),
                    }
                }
                raw
            }
            Act::Pickup | Act::Putdown => {
                let mut rng = SeededRng::new(0);
                vec![(1.0, self.step(state, action, &mut rng)?)]
            }
        };
        Ok(merge_outcomes(raw))
    }

    fn terminal(&self, state: &GroundState) -> Terminal {
        if self.all_delivered(state) {
            Terminal::Goal
        } else {
            Terminal::None
        }
    }

    fn param_domain(&self, kind: &str) -> Result<Vec<String>> {
        match kind {
            "depot" => Ok(self.depots.iter().map(|d| d.name.clone()).collect()),
            "passenger" => Ok(self.passenger_ids.clone()),
            "direction" => Ok(vec!["north".into(), "south".into(), "east".into(), "west".into()]),
            other => Err(Error::Grounding(format!("taxi has no parameter kind `{other}`"))),
        }
    }

    fn features(&self) -> &'static [FeatureSig] {
        TAXI_FEATURES
    }

    fn eval_feature(&self, name: &str, args: &[&str], state: &GroundState, out: &mut Vec<AttrValue>) -> Result<()> {
        let passenger = |i: usize| -> Result<usize> {
            let id = args.get(i).ok_or_else(|| Error::Abstraction(format!("`{name}` needs an argument")))?;
            self.passenger_ids
                .iter()
                .position(|p| p == id)
                .ok_or_else(|| Error::Abstraction(format!("no passenger `{id}`")))
        };
        let (tx, ty) = (state.int(self.taxi_x), state.int(self.taxi_y));
        match name {
            "taxi_x" => out.push(AttrValue::Int(tx)),
            "taxi_y" => out.push(AttrValue::Int(ty)),
            "at" => {
                let id = args.first().ok_or_else(|| Error::Abstraction("`at` needs a depot".into()))?;
                let d = self
                    .depot_index(id)
                    .map(|i| &self.depots[i])
                    .ok_or_else(|| Error::Abstraction(format!("no depot `{id}`")))?;
                out.push(AttrValue::Bool(d.x == tx && d.y == ty));
            }
            "taxi_depot" => out.push(match self.depot_at(tx, ty) {
                Some(d) => AttrValue::tag(&d.name),
                None => AttrValue::tag("none"),
            }),
            "in_taxi" => out.push(AttrValue::Bool(state.flag(self.passengers[passenger(0)?].in_taxi))),
            "delivered" => out.push(AttrValue::Bool(self.delivered(state, passenger(0)?))),
            "carrying_other" => {
                let i = passenger(0)?;
                out.push(AttrValue::Bool(matches!(self.carried(state), Some(j) if j != i)));
            }
            "get_blocked" => {
                let i = passenger(0)?;
                let other = matches!(self.carried(state), Some(j) if j != i);
                out.push(AttrValue::Bool(other || self.delivered(state, i)));
            }
            "passenger_at" => {
                let p = &self.passengers[passenger(0)?];
                out.push(if state.flag(p.in_taxi) {
                    AttrValue::tag("taxi")
                } else {
                    match self.depot_at(state.int(p.x), state.int(p.y)) {
                        Some(d) => AttrValue::tag(&d.name),
                        None => AttrValue::tag("none"),
                    }
                });
            }
            "goal_of" => out.push(state.value(self.passengers[passenger(0)?].goal).clone()),
            "may_change_goal" => out.push(AttrValue::Bool(state.flag(self.passengers[passenger(0)?].fickle))),
            "passenger_flags" => {
                for i in 0..self.passengers.len() {
                    out.push(AttrValue::Bool(state.flag(self.passengers[i].in_taxi)));
                    out.push(AttrValue::Bool(self.delivered(state, i)));
                }
            }
            "all_delivered" => out.push(AttrValue::Bool(self.all_delivered(state))),
            other => return Err(Error::Abstraction(format!("taxi has no feature `{other}`"))),
        }
        Ok(())
    }

    fn agent_position(&self, state: &GroundState) -> (i64, i64) {
        (state.int(self.taxi_x), state.int(self.taxi_y))
    }

    fn displacements(&self, action: &str) -> Vec<(i64, i64)> {
        match action {
            "north" => vec![(0, 1)],
            "south" => vec![(0, -1)],
            "east" => vec![(1, 0)],
            "west" => vec![(-1, 0)],
            _ => vec![(0, 0)],
        }
    }

    fn grid(&self) -> (i64, i64) {
        (self.variant.width, self.variant.height)
    }
}

pub(crate) static TAXI_FEATURES: &[FeatureSig] = &[
    FeatureSig { name: "taxi_x", args: &[], boolean: false },
    FeatureSig { name: "taxi_y", args: &[], boolean: false },
    FeatureSig { name: "at", args: &["depot"], boolean: true },
    FeatureSig { name: "taxi_depot", args: &[], boolean: false },
    FeatureSig { name: "in_taxi", args: &["passenger"], boolean: true },
    FeatureSig { name: "delivered", args: &["passenger"], boolean: true },
    FeatureSig { name: "carrying_other", args: &["passenger"], boolean: true },
    FeatureSig { name: "get_blocked", args: &["passenger"], boolean: true },
    FeatureSig { name: "passenger_at", args: &["passenger"], boolean: false },
    FeatureSig { name: "goal_of", args: &["passenger"], boolean: false },
    FeatureSig { name: "may_change_goal", args: &["passenger"], boolean: true },
    FeatureSig { name: "passenger_flags", args: &[], boolean: false },
    FeatureSig { name: "all_delivered", args: &[], boolean: true },
];

#[cfg(test)]
mod tests {
    use super::*;

    fn act(id: &str) -> Action {
        Action::primitive(id)
    }

    fn small_env() -> TaxiEnv {
        TaxiEnv::new(TaxiVariant::small()).unwrap()
    }

    #[test]
    fn action_order_is_stable() {
        let env = small_env();
        let ids: Vec<_> = env.primitive_actions().iter().map(|a| a.id.clone()).collect();
        assert_eq!(ids, ["north", "south", "east", "west", "pickup", "putdown"]);
        assert_eq!(env.primitive_actions(), env.primitive_actions());
    }

    #[test]
    fn deterministic_move_and_wall() {
        let env = small_env();
        let s = env.state_from(0, 0, &[(0, 2)]).unwrap();
        let mut rng = SeededRng::new(1);
        let o = env.step(&s, &act("north"), &mut rng).unwrap();
        assert_eq!(env.agent_position(&o.next_state), (0, 1));
        assert_eq!(o.reward, STEP_REWARD);
        assert_eq!(o.terminal, Terminal::None);
        let o = env.step(&s, &act("south"), &mut rng).unwrap();
        assert_eq!(o.next_state, s);
        assert_eq!(o.terminal, Terminal::None);
    }

    #[test]
    fn unknown_action_rejected() {
        let env = small_env();
        let s = env.state_from(0, 0, &[(0, 2)]).unwrap();
        let err = env.step(&s, &act("refuel"), &mut SeededRng::new(0));
        assert!(matches!(err, Err(Error::InvalidAction(_))));
    }

    #[test]
    fn foreign_state_rejected() {
        let env = small_env();
        let other = TaxiEnv::new(TaxiVariant::classic_two_passengers()).unwrap();
        let s = other.state_from(0, 0, &[(0, 1), (1, 2)]).unwrap();
        assert!(matches!(
            env.step(&s, &act("north"), &mut SeededRng::new(0)),
            Err(Error::DomainContract(_))
        ));
    }

    #[test]
    fn pickup_putdown_delivery() {
        let env = small_env();
        // passenger waits at Y (0,0), goal R (0,4)
        let s = env.state_from(0, 0, &[(2, 0)]).unwrap();
        let mut rng = SeededRng::new(0);
        let o = env.step(&s, &act("putdown"), &mut rng).unwrap();
        assert_eq!(o.reward, ILLEGAL_REWARD);
        assert_eq!(o.next_state, s);
        let o = env.step(&s, &act("pickup"), &mut rng).unwrap();
        assert_eq!(o.reward, STEP_REWARD);
        let mut cur = o.next_state;
        for _ in 0..4 {
            cur = env.step(&cur, &act("north"), &mut rng).unwrap().next_state;
        }
        assert_eq!(env.agent_position(&cur), (0, 4));
        assert_eq!(cur.get("passenger0", "y"), Some(&AttrValue::Int(4)));
        let o = env.step(&cur, &act("pickup"), &mut rng).unwrap();
        assert_eq!(o.reward, ILLEGAL_REWARD);
        let o = env.step(&cur, &act("putdown"), &mut rng).unwrap();
        assert_eq!(o.reward, DELIVERY_REWARD);
        assert_eq!(o.terminal, Terminal::Goal);
    }

    #[test]
    fn putdown_at_other_depot_is_legal_but_not_terminal() {
        let env = small_env();
        let s = env.state_from(0, 0, &[(2, 0)]).unwrap();
        let mut rng = SeededRng::new(0);
        let s = env.step(&s, &act("pickup"), &mut rng).unwrap().next_state;
        let s = env.step(&s, &act("north"), &mut rng).unwrap().next_state; // B at (0,1)
        let o = env.step(&s, &act("putdown"), &mut rng).unwrap();
        assert_eq!(o.reward, STEP_REWARD);
        assert_eq!(o.terminal, Terminal::None);
        // not a depot: (0,2)
        let s = env.step(&s, &act("north"), &mut rng).unwrap().next_state;
        let o = env.step(&s, &act("putdown"), &mut rng).unwrap();
        assert_eq!(o.reward, ILLEGAL_REWARD);
    }

    #[test]
    fn classic_walls_block() {
        let env = TaxiEnv::new(TaxiVariant::classic_deterministic()).unwrap();
        let mut rng = SeededRng::new(0);
        let s = env.state_from(0, 0, &[(0, 1)]).unwrap();
        let o = env.step(&s, &act("east"), &mut rng).unwrap();
        assert_eq!(env.agent_position(&o.next_state), (0, 0));
        let s = env.state_from(1, 4, &[(0, 1)]).unwrap();
        let o = env.step(&s, &act("east"), &mut rng).unwrap();
        assert_eq!(env.agent_position(&o.next_state), (1, 4));
        let s = env.state_from(1, 2, &[(0, 1)]).unwrap();
        let o = env.step(&s, &act("east"), &mut rng).unwrap();
        assert_eq!(env.agent_position(&o.next_state), (2, 2));
    }

    #[test]
    fn outcome_distribution_sums_to_one() {
        let env = TaxiEnv::new(TaxiVariant::classic()).unwrap();
        let s = env.state_from(2, 2, &[(0, 1)]).unwrap();
        for a in env.primitive_actions() {
            let total: f64 = env.outcomes(&s, a).unwrap().iter().map(|(p, _)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // right after a pickup: noise × fickle branches
        let s = env.state_from(0, 4, &[(0, 1)]).unwrap();
        let s = env.step(&s, &act("pickup"), &mut SeededRng::new(0)).unwrap().next_state;
        let outs = env.outcomes(&s, &act("south")).unwrap();
        let total: f64 = outs.iter().map(|(p, _)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(outs.len() > 3);
    }

    #[test]
    fn too_many_passengers_is_config_error() {
        let v = TaxiVariant {
            passengers: 5,
            ..TaxiVariant::classic()
        };
        assert!(matches!(make_taxi_task(&v, &mut SeededRng::new(0)), Err(Error::Config(_))));
    }

    #[test]
    fn named_variants() {
        let small = TaxiVariant::named("taxi-small").unwrap();
        assert_eq!((small.width, small.height, small.passengers), (1, 5, 1));
        assert!(small.is_deterministic());
        let classic = TaxiVariant::named("taxi-classic").unwrap();
        assert_eq!((classic.width, classic.height, classic.passengers), (5, 5, 1));
        assert_eq!(classic.movement_noise, 0.2);
        assert_eq!(classic.fickle_probability, 0.3);
        let env = TaxiEnv::new(classic).unwrap();
        assert_eq!(env.depots().len(), 4);
        let large = TaxiVariant::named("taxi-large").unwrap();
        assert_eq!((large.width, large.height, large.passengers), (20, 20, 1));
        assert_eq!(TaxiVariant::named("taxi-classic-2p").unwrap().passengers, 2);
    }

    #[test]
    fn sampled_task_respects_invariants() {
        let v = TaxiVariant::classic_two_passengers();
        for seed in 0..50 {
            let (env, s) = make_taxi_task(&v, &mut SeededRng::new(seed)).unwrap();
            assert_eq!(env.terminal(&s), Terminal::None);
            for id in env.passenger_ids() {
                let x = s.get(id, "x").unwrap().as_int().unwrap();
                let y = s.get(id, "y").unwrap().as_int().unwrap();
                let goal = s.get(id, "goal").unwrap().as_tag().unwrap().to_string();
                let depot = env.depot_at(x, y).unwrap();
                assert_ne!(depot.name, goal);
            }
        }
    }
}
