//! Cleanup: an agent pushes and pulls colored blocks between rooms joined by doors.
//!
//! Layouts are text files. Grid rows are listed north to south; each cell is
//! a room letter, `D` for a door or `#` for a solid cell. Passage between two
//! neighbouring cells is open iff both are in the same room or one is a door.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{
    lookup_action, merge_outcomes, Action, AttrValue, Domain, Environment, FeatureSig, GroundState,
    ObjectSchema, Schema, SeededRng, StepOutcome, Terminal,
};

pub const GOAL_REWARD: f64 = 1.0;

pub(crate) const ACTION_IDS: [&str; 5] = ["north", "south", "east", "west", "pull"];
const DIRECTIONS: [&str; 4] = ["north", "south", "east", "west"];

/// Layouts shipped with the crate, addressable by name.
pub const NAMED_LAYOUTS: &[(&str, &str)] = &[
    ("cleanup-small", include_str!("../layouts/cleanup-small.layout")),
    ("cleanup-3r1b-5x7", include_str!("../layouts/cleanup-3r1b-5x7.layout")),
    ("cleanup-3r1b-7x7", include_str!("../layouts/cleanup-3r1b-7x7.layout")),
    ("cleanup-2r2b1t-5x5", include_str!("../layouts/cleanup-2r2b1t-5x5.layout")),
    ("cleanup-2r2b2t-5x5", include_str!("../layouts/cleanup-2r2b2t-5x5.layout")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Room(usize),
    Door,
    Solid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Room {
    pub name: String,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub id: String,
    pub target: bool,
    pub color: Option<String>,
    pub position: Option<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanupLayout {
    pub width: i64,
    pub height: i64,
    /// Row-major from `y = 0` (south) upward.
    pub cells: Vec<Cell>,
    pub rooms: Vec<Room>,
    pub blocks: Vec<BlockSpec>,
    pub agent: Option<(i64, i64)>,
    pub movement_noise: f64,
}

impl CleanupLayout {
    pub fn named(name: &str) -> Option<Result<Self>> {
        NAMED_LAYOUTS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| CleanupLayout::parse(text))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::MissingFile {
            path: path.display().to_string(),
            source,
        })?;
        CleanupLayout::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !(l.starts_with('#') && l.contains(char::is_whitespace)))
            .peekable();
        match lines.next() {
            Some((_, "cleanup-layout 1")) => {}
            Some((n, other)) => return Err(Error::parse(n, "header", format!("expected `cleanup-layout 1`, got `{other}`"))),
            None => return Err(Error::parse(0, "header", "empty layout")),
        }
        let mut rows: Vec<(usize, String)> = Vec::new();
        let mut room_decls: Vec<(usize, char, String)> = Vec::new();
        let mut blocks = Vec::new();
        let mut agent = None;
        let mut movement_noise = 0.0;
        while let Some((n, line)) = lines.next() {
            if line == "grid" {
                while let Some(&(m, row)) = lines.peek() {
                    if row.contains(char::is_whitespace) || row == "grid" {
                        break;
                    }
                    rows.push((m, row.to_string()));
                    lines.next();
                }
                continue;
            }
            let mut words = line.split_whitespace();
            let keyword = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            match keyword {
                "room" => {
                    let [letter, color] = rest[..] else {
                        return Err(Error::parse(n, "room", "expected `room <letter> <color>`"));
                    };
                    let mut chars = letter.chars();
                    let (Some(c), None) = (chars.next(), chars.next()) else {
                        return Err(Error::parse(n, "room", "room name must be one letter"));
                    };
                    if !c.is_ascii_uppercase() || c == 'D' {
                        return Err(Error::parse(n, "room", "room letters are A-Z except D"));
                    }
                    room_decls.push((n, c, color.to_string()));
                }
                "block" => {
                    let Some(id) = rest.first() else {
                        return Err(Error::parse(n, "block", "missing block id"));
                    };
                    let mut spec = BlockSpec {
                        id: id.to_string(),
                        target: false,
                        color: None,
                        position: None,
                    };
                    let (mut x, mut y) = (None, None);
                    for opt in &rest[1..] {
                        match opt.split_once('=') {
                            None if *opt == "target" => spec.target = true,
                            Some(("color", c)) => spec.color = Some(c.to_string()),
                            Some(("x", v)) => x = Some(parse_int(n, "block.x", v)?),
                            Some(("y", v)) => y = Some(parse_int(n, "block.y", v)?),
                            _ => return Err(Error::parse(n, "block", format!("unknown option `{opt}`"))),
                        }
                    }
                    spec.position = match (x, y) {
                        (Some(x), Some(y)) => Some((x, y)),
                        (None, None) => None,
                        _ => return Err(Error::parse(n, "block", "give both x and y or neither")),
                    };
                    blocks.push(spec);
                }
                "agent" => {
                    let (mut x, mut y) = (None, None);
                    for opt in &rest {
                        match opt.split_once('=') {
                            Some(("x", v)) => x = Some(parse_int(n, "agent.x", v)?),
                            Some(("y", v)) => y = Some(parse_int(n, "agent.y", v)?),
                            _ => return Err(Error::parse(n, "agent", format!("unknown option `{opt}`"))),
                        }
                    }
                    match (x, y) {
                        (Some(x), Some(y)) => agent = Some((x, y)),
                        _ => return Err(Error::parse(n, "agent", "expected `agent x=<int> y=<int>`")),
                    }
                }
                "noise" => {
                    let [v] = rest[..] else {
                        return Err(Error::parse(n, "noise", "expected `noise <probability>`"));
                    };
                    movement_noise = v
                        .parse()
                        .map_err(|_| Error::parse(n, "noise", format!("`{v}` is not a number")))?;
                }
                other => return Err(Error::parse(n, "keyword", format!("unknown keyword `{other}`"))),
            }
        }
        if rows.is_empty() {
            return Err(Error::parse(0, "grid", "layout has no grid"));
        }
        let width = rows[0].1.chars().count();
        let height = rows.len();
        let mut room_index: BTreeMap<char, usize> = BTreeMap::new();
        let mut rooms = Vec::new();
        for (n, c, color) in room_decls {
            if room_index.insert(c, rooms.len()).is_some() {
                return Err(Error::parse(n, "room", format!("room `{c}` declared twice")));
            }
            rooms.push(Room {
                name: c.to_string(),
                color,
            });
        }
        let mut cells = vec![Cell::Solid; width * height];
        for (r, (n, row)) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::parse(*n, "grid", "grid rows differ in length"));
            }
            let y = height - 1 - r;
            for (x, ch) in row.chars().enumerate() {
                cells[y * width + x] = match ch {
                    'D' => Cell::Door,
                    '#' => Cell::Solid,
                    c => match room_index.get(&c) {
                        Some(&i) => Cell::Room(i),
                        None => return Err(Error::parse(*n, "grid", format!("cell `{c}` names no declared room"))),
                    },
                };
            }
        }
        let layout = CleanupLayout {
            width: width as i64,
            height: height as i64,
            cells,
            rooms,
            blocks,
            agent,
            movement_noise,
        };
        layout.check()?;
        Ok(layout)
    }

    fn cell(&self, x: i64, y: i64) -> Cell {
        if x < 0 || y < 0 || x >= self.width || y >= self.height {
            Cell::Solid
        } else {
            self.cells[(y * self.width + x) as usize]
        }
    }

    /// Whether one step from `a` to the neighbouring `b` is open.
    pub fn passable(&self, a: (i64, i64), b: (i64, i64)) -> bool {
        match (self.cell(a.0, a.1), self.cell(b.0, b.1)) {
            (Cell::Solid, _) | (_, Cell::Solid) => false,
            (Cell::Door, _) | (_, Cell::Door) => true,
            (Cell::Room(i), Cell::Room(j)) => i == j,
        }
    }

    pub fn room_of(&self, x: i64, y: i64) -> Option<usize> {
        match self.cell(x, y) {
            Cell::Room(i) => Some(i),
            _ => None,
        }
    }

    fn free_cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| (x, y))).filter(|&(x, y)| self.cell(x, y) != Cell::Solid)
    }

    fn check(&self) -> Result<()> {
        if self.rooms.is_empty() {
            return Err(Error::Config("layout declares no rooms".into()));
        }
        for (i, room) in self.rooms.iter().enumerate() {
            if !self.cells.contains(&Cell::Room(i)) {
                return Err(Error::Config(format!("room `{}` has no cells", room.name)));
            }
            if !crate::mdp::is_plain_token(&room.color) {
                return Err(Error::Config(format!("room color `{}` has reserved characters", room.color)));
            }
        }
        for y in 0..self.height {
            for x in 0..self.width {
                if self.cell(x, y) != Cell::Door {
                    continue;
                }
                let mut adjoining: Vec<usize> = [(0, 1), (0, -1), (1, 0), (-1, 0)]
                    .iter()
                    .filter_map(|(dx, dy)| self.room_of(x + dx, y + dy))
                    .collect();
                adjoining.sort_unstable();
                adjoining.dedup();
                if adjoining.len() != 2 {
                    return Err(Error::Config(format!(
                        "door at ({x},{y}) adjoins {} rooms, expected 2",
                        adjoining.len()
                    )));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.movement_noise) {
            return Err(Error::Config("movement noise must lie in [0,1]".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("layout has no blocks".into()));
        }
        if !self.blocks.iter().any(|b| b.target) {
            return Err(Error::Config("layout has no target block".into()));
        }
        let mut fixed: Vec<(i64, i64)> = Vec::new();
        for b in &self.blocks {
            if !crate::mdp::is_plain_token(&b.id) {
                return Err(Error::Config(format!("block id `{}` has reserved characters", b.id)));
            }
            if let Some(c) = &b.color {
                if !self.rooms.iter().any(|r| &r.color == c) && b.target {
                    return Err(Error::Config(format!("target block `{}` has color `{c}` of no room", b.id)));
                }
            }
            if let Some(p) = b.position {
                if self.cell(p.0, p.1) == Cell::Solid {
                    return Err(Error::Config(format!("block `{}` placed on a solid cell", b.id)));
                }
                if fixed.contains(&p) {
                    return Err(Error::Config(format!("two blocks placed at ({},{})", p.0, p.1)));
                }
                fixed.push(p);
            }
        }
        let mut ids: Vec<&str> = self.blocks.iter().map(|b| b.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate block id".into()));
        }
        if let Some(p) = self.agent {
            if self.cell(p.0, p.1) == Cell::Solid || fixed.contains(&p) {
                return Err(Error::Config("agent placed on a solid or occupied cell".into()));
            }
        }
        Ok(())
    }
}

fn parse_int(line: usize, field: &str, v: &str) -> Result<i64> {
    v.parse()
        .map_err(|_| Error::parse(line, field, format!("`{v}` is not an integer")))
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

    fn parse(s: &str) -> Option<Dir> {
        match s {
            "north" => Some(Dir::North),
            "south" => Some(Dir::South),
            "east" => Some(Dir::East),
            "west" => Some(Dir::West),
            _ => None,
        }
    }

    fn perpendicular(self) -> [Dir; 2] {
        match self {
            Dir::North | Dir::South => [Dir::East, Dir::West],
            Dir::East | Dir::West => [Dir::North, Dir::South],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockSlots {
    x: usize,
    y: usize,
    color: usize,
}

/// A sampled Cleanup task.
#[derive(Debug, Clone)]
pub struct CleanupEnv {
    layout: CleanupLayout,
    schema: Arc<Schema>,
    agent_x: usize,
    agent_y: usize,
    facing: usize,
    blocks: Vec<BlockSlots>,
    block_ids: Vec<String>,
    targets: Vec<usize>,
    actions: Vec<Action>,
    dir_tags: [AttrValue; 4],
    room_tags: Vec<AttrValue>,
}

/// Samples a task from a layout: unplaced blocks go to uniform free non-door
/// cells; a target block without a color gets the color of a room it does not
/// start in; the agent starts on a free cell facing north.
pub fn make_cleanup_task(layout: &CleanupLayout, rng: &mut SeededRng) -> Result<(CleanupEnv, GroundState)> {
    layout.check()?;
    let env = CleanupEnv::new(layout.clone())?;
    let mut taken: Vec<(i64, i64)> = layout.blocks.iter().filter_map(|b| b.position).collect();
    if let Some(a) = layout.agent {
        taken.push(a);
    }
    let mut placed = Vec::with_capacity(layout.blocks.len());
    for b in &layout.blocks {
        let pos = match b.position {
            Some(p) => p,
            None => {
                let options: Vec<(i64, i64)> = layout
                    .free_cells()
                    .filter(|&(x, y)| layout.cell(x, y) != Cell::Door && !taken.contains(&(x, y)))
                    .collect();
                let p = *options
                    .choose(rng)
                    .ok_or_else(|| Error::Config("no free cell left for a block".into()))?;
                taken.push(p);
                p
            }
        };
        let color = match &b.color {
            Some(c) => c.clone(),
            None => {
                let start = layout.room_of(pos.0, pos.1);
                let mut options: Vec<&Room> = layout
                    .rooms
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !b.target || Some(*i) != start)
                    .map(|(_, r)| r)
                    .collect();
                if options.is_empty() {
                    options = layout.rooms.iter().collect();
                }
                options
                    .choose(rng)
                    .ok_or_else(|| Error::Config(format!("no room color available for block `{}`", b.id)))?
                    .color
                    .clone()
            }
        };
        placed.push((pos, color));
    }
    let agent = match layout.agent {
        Some(a) => a,
        None => {
            let options: Vec<(i64, i64)> = layout.free_cells().filter(|c| !taken.contains(c)).collect();
            *options
                .choose(rng)
                .ok_or_else(|| Error::Config("no free cell left for the agent".into()))?
        }
    };
    let state = env.state_from(agent, "north", &placed)?;
    Ok((env, state))
}

impl CleanupEnv {
    pub fn new(layout: CleanupLayout) -> Result<Self> {
        let block_ids: Vec<String> = layout.blocks.iter().map(|b| b.id.clone()).collect();
        let mut objects = vec![ObjectSchema {
            id: "agent".into(),
            class: "agent".into(),
            attrs: vec!["x".into(), "y".into(), "facing".into()],
        }];
        for id in &block_ids {
            if id == "agent" {
                return Err(Error::Config("`agent` is reserved".into()));
            }
            objects.push(ObjectSchema {
                id: id.clone(),
                class: "block".into(),
                attrs: vec!["x".into(), "y".into(), "color".into()],
            });
        }
        let schema = Arc::new(Schema::new(objects)?);
        let slot = |o: &str, a: &str| schema.slot(o, a).expect("slot exists");
        let blocks = block_ids
            .iter()
            .map(|id| BlockSlots {
                x: slot(id, "x"),
                y: slot(id, "y"),
                color: slot(id, "color"),
            })
            .collect();
        let targets = layout
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.target)
            .map(|(i, _)| i)
            .collect();
        let room_tags = layout.rooms.iter().map(|r| AttrValue::tag(&r.name)).collect();
        Ok(CleanupEnv {
            agent_x: slot("agent", "x"),
            agent_y: slot("agent", "y"),
            facing: slot("agent", "facing"),
            blocks,
            block_ids,
            targets,
            actions: ACTION_IDS.iter().map(|a| Action::primitive(a)).collect(),
            dir_tags: DIRECTIONS.map(AttrValue::tag),
            room_tags,
            schema,
            layout,
        })
    }

    pub fn layout(&self) -> &CleanupLayout {
        &self.layout
    }

    pub fn block_ids(&self) -> &[String] {
        &self.block_ids
    }

    pub fn target_ids(&self) -> Vec<String> {
        self.targets.iter().map(|&i| self.block_ids[i].clone()).collect()
    }

    /// Builds a state from an agent cell, facing, and `(cell, color)` per block in layout order.
    pub fn state_from(&self, agent: (i64, i64), facing: &str, blocks: &[((i64, i64), String)]) -> Result<GroundState> {
        if blocks.len() != self.blocks.len() {
            return Err(Error::DomainContract("block count mismatch".into()));
        }
        let Some(dir) = Dir::parse(facing) else {
            return Err(Error::DomainContract(format!("`{facing}` is not a direction")));
        };
        let mut seen = vec![agent];
        for (p, _) in blocks {
            if seen.contains(p) {
                return Err(Error::DomainContract(format!("cell ({},{}) occupied twice", p.0, p.1)));
            }
            seen.push(*p);
        }
        if seen.iter().any(|&(x, y)| self.layout.cell(x, y) == Cell::Solid) {
            return Err(Error::DomainContract("object on a solid cell".into()));
        }
        let mut values = vec![AttrValue::Int(0); self.schema.len()];
        values[self.agent_x] = AttrValue::Int(agent.0);
        values[self.agent_y] = AttrValue::Int(agent.1);
        values[self.facing] = self.dir_tags[dir as usize].clone();
        for (slots, ((x, y), color)) in self.blocks.iter().zip(blocks) {
            values[slots.x] = AttrValue::Int(*x);
            values[slots.y] = AttrValue::Int(*y);
            values[slots.color] = AttrValue::tag(color);
        }
        GroundState::new(self.schema.clone(), values)
    }

    fn check(&self, state: &GroundState) -> Result<()> {
        if !Arc::ptr_eq(state.schema(), &self.schema) && **state.schema() != *self.schema {
            return Err(Error::DomainContract("state does not follow this cleanup task's schema".into()));
        }
        Ok(())
    }

    fn agent(&self, state: &GroundState) -> (i64, i64) {
        (state.int(self.agent_x), state.int(self.agent_y))
    }

    fn block_pos(&self, state: &GroundState, i: usize) -> (i64, i64) {
        let b = &self.blocks[i];
        (state.int(b.x), state.int(b.y))
    }

    fn block_at(&self, state: &GroundState, p: (i64, i64)) -> Option<usize> {
        (0..self.blocks.len()).find(|&i| self.block_pos(state, i) == p)
    }

    fn facing_dir(&self, state: &GroundState) -> Dir {
        Dir::parse(state.tag(self.facing)).expect("facing holds a direction")
    }

    fn block_home(&self, state: &GroundState, i: usize) -> bool {
        let (x, y) = self.block_pos(state, i);
        match self.layout.room_of(x, y) {
            Some(r) => self.layout.rooms[r].color == state.tag(self.blocks[i].color),
            None => false,
        }
    }

    fn all_targets_home(&self, state: &GroundState) -> bool {
        self.targets.iter().all(|&i| self.block_home(state, i))
    }

    fn set_agent(&self, next: &mut GroundState, p: (i64, i64)) {
        next.set(self.agent_x, AttrValue::Int(p.0));
        next.set(self.agent_y, AttrValue::Int(p.1));
    }

    fn set_block(&self, next: &mut GroundState, i: usize, p: (i64, i64)) {
        next.set(self.blocks[i].x, AttrValue::Int(p.0));
        next.set(self.blocks[i].y, AttrValue::Int(p.1));
    }

    /// Deterministic effect of moving in `dir`, pushing at most one block.
    fn moved(&self, state: &GroundState, dir: Dir) -> GroundState {
        let pos = self.agent(state);
        let (dx, dy) = dir.delta();
        let ahead = (pos.0 + dx, pos.1 + dy);
        if !self.layout.passable(pos, ahead) {
            return state.clone();
        }
        let mut next = state.clone();
        if let Some(b) = self.block_at(state, ahead) {
            let beyond = (ahead.0 + dx, ahead.1 + dy);
            if !self.layout.passable(ahead, beyond) || self.block_at(state, beyond).is_some() {
                return state.clone();
            }
            self.set_block(&mut next, b, beyond);
        }
        self.set_agent(&mut next, ahead);
        next.set(self.facing, self.dir_tags[dir as usize].clone());
        next
    }

    fn pulled(&self, state: &GroundState) -> GroundState {
        let pos = self.agent(state);
        let (dx, dy) = self.facing_dir(state).delta();
        let front = (pos.0 + dx, pos.1 + dy);
        let back = (pos.0 - dx, pos.1 - dy);
        let Some(b) = self.block_at(state, front) else {
            return state.clone();
        };
        if !self.layout.passable(front, pos)
            || !self.layout.passable(pos, back)
            || self.block_at(state, back).is_some()
        {
            return state.clone();
        }
        let mut next = state.clone();
        self.set_agent(&mut next, back);
        self.set_block(&mut next, b, pos);
        next
    }

    fn finish(&self, state: &GroundState, next: GroundState) -> StepOutcome {
        let terminal = self.terminal(&next);
        let reward = if terminal == Terminal::Goal && self.terminal(state) != Terminal::Goal {
            GOAL_REWARD
        } else {
            0.0
        };
        StepOutcome {
            next_state: next,
            reward,
            terminal,
        }
    }

    fn parse_action(&self, action: &Action) -> Result<Option<Dir>> {
        lookup_action(&self.actions, &action.id)?;
        Ok(Dir::parse(&action.id))
    }

    fn block_index(&self, id: &str) -> Result<usize> {
        self.block_ids
            .iter()
            .position(|b| b == id)
            .ok_or_else(|| Error::Abstraction(format!("no block `{id}`")))
    }
}

impl Environment for CleanupEnv {
    fn domain(&self) -> Domain {
        Domain::Cleanup
    }

    fn primitive_actions(&self) -> &[Action] {
        &self.actions
    }

    fn step(&self, state: &GroundState, action: &Action, rng: &mut SeededRng) -> Result<StepOutcome> {
        self.check(state)?;
        let next = match self.parse_action(action)? {
            Some(dir) => {
                let noise = self.layout.movement_noise;
                let realized = if noise > 0.0 {
                    let u: f64 = rng.gen();
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
                self.moved(state, realized)
            }
            None => self.pulled(state),
        };
        Ok(self.finish(state, next))
    }

    fn outcomes(&self, state: &GroundState, action: &Action) -> Result<Vec<(f64, StepOutcome)>> {
        self.check(state)?;
        let raw = match self.parse_action(action)? {
            Some(dir) => {
                let noise = self.layout.movement_noise;
                let mut raw = vec![(1.0 - noise, self.finish(state, self.moved(state, dir)))];
                if noise > 0.0 {
                    for d in dir.perpendicular() {
                        raw.push((noise / 2.0, self.finish(state, self.moved(state, d))));
                    }
                }
                raw
            }
            None => vec![(1.0, self.finish(state, self.pulled(state)))],
        };
        Ok(merge_outcomes(raw))
    }

    fn terminal(&self, state: &GroundState) -> Terminal {
        if self.all_targets_home(state) {
            Terminal::Goal
        } else {
            Terminal::None
        }
    }

    fn param_domain(&self, kind: &str) -> Result<Vec<String>> {
        match kind {
            "block" => Ok(self.block_ids.clone()),
            "target" => Ok(self.target_ids()),
            "room" => Ok(self.layout.rooms.iter().map(|r| r.name.clone()).collect()),
            "direction" => Ok(DIRECTIONS.iter().map(|d| d.to_string()).collect()),
            other => Err(Error::Grounding(format!("cleanup has no parameter kind `{other}`"))),
        }
    }

    fn features(&self) -> &'static [FeatureSig] {
        CLEANUP_FEATURES
    }

    fn eval_feature(&self, name: &str, args: &[&str], state: &GroundState, out: &mut Vec<AttrValue>) -> Result<()> {
        let arg = |i: usize| -> Result<&str> {
            args.get(i)
                .copied()
                .ok_or_else(|| Error::Abstraction(format!("`{name}` needs {} argument(s)", i + 1)))
        };
        let (ax, ay) = self.agent(state);
        match name {
            "agent_x" => out.push(AttrValue::Int(ax)),
            "agent_y" => out.push(AttrValue::Int(ay)),
            "facing" => out.push(state.value(self.facing).clone()),
            "facing_is" => {
                let want = arg(0)?;
                if Dir::parse(want).is_none() {
                    return Err(Error::Abstraction(format!("`{want}` is not a direction")));
                }
                out.push(AttrValue::Bool(state.tag(self.facing) == want));
            }
            "agent_room" => out.push(match self.layout.room_of(ax, ay) {
                Some(r) => self.room_tags[r].clone(),
                None => AttrValue::tag("none"),
            }),
            "block_x" => out.push(AttrValue::Int(self.block_pos(state, self.block_index(arg(0)?)?).0)),
            "block_y" => out.push(AttrValue::Int(self.block_pos(state, self.block_index(arg(0)?)?).1)),
            "block_xy" => {
                let (x, y) = self.block_pos(state, self.block_index(arg(0)?)?);
                out.push(AttrValue::Int(x));
                out.push(AttrValue::Int(y));
            }
            "block_room" => {
                let (x, y) = self.block_pos(state, self.block_index(arg(0)?)?);
                out.push(match self.layout.room_of(x, y) {
                    Some(r) => self.room_tags[r].clone(),
                    None => AttrValue::tag("none"),
                });
            }
            "block_in_room" => {
                let (x, y) = self.block_pos(state, self.block_index(arg(0)?)?);
                let room = arg(1)?;
                let r = self
                    .layout
                    .rooms
                    .iter()
                    .position(|r| r.name == room)
                    .ok_or_else(|| Error::Abstraction(format!("no room `{room}`")))?;
                out.push(AttrValue::Bool(self.layout.room_of(x, y) == Some(r)));
            }
            "block_home" => out.push(AttrValue::Bool(self.block_home(state, self.block_index(arg(0)?)?))),
            "adjacent" => {
                let (bx, by) = self.block_pos(state, self.block_index(arg(0)?)?);
                out.push(AttrValue::Bool((bx - ax).abs() + (by - ay).abs() == 1));
            }
            "targets_xy" => {
                for &i in &self.targets {
                    let (x, y) = self.block_pos(state, i);
                    out.push(AttrValue::Int(x));
                    out.push(AttrValue::Int(y));
                }
            }
            "blocks_xy" => {
                for i in 0..self.blocks.len() {
                    let (x, y) = self.block_pos(state, i);
                    out.push(AttrValue::Int(x));
                    out.push(AttrValue::Int(y));
                }
            }
            "target_rooms" => {
                for &i in &self.targets {
                    let (x, y) = self.block_pos(state, i);
                    out.push(match self.layout.room_of(x, y) {
                        Some(r) => self.room_tags[r].clone(),
                        None => AttrValue::tag("none"),
                    });
                }
            }
            "all_targets_home" => out.push(AttrValue::Bool(self.all_targets_home(state))),
            other => return Err(Error::Abstraction(format!("cleanup has no feature `{other}`"))),
        }
        Ok(())
    }

    fn agent_position(&self, state: &GroundState) -> (i64, i64) {
        self.agent(state)
    }

    fn displacements(&self, action: &str) -> Vec<(i64, i64)> {
        match Dir::parse(action) {
            Some(d) => vec![d.delta()],
            // pull steps backward, away from whichever way the agent faces
            None => [Dir::North, Dir::South, Dir::East, Dir::West]
                .iter()
                .map(|d| {
                    let (dx, dy) = d.delta();
                    (-dx, -dy)
                })
                .collect(),
        }
    }

    fn grid(&self) -> (i64, i64) {
        (self.layout.width, self.layout.height)
    }
}

pub(crate) static CLEANUP_FEATURES: &[FeatureSig] = &[
    FeatureSig { name: "agent_x", args: &[], boolean: false },
    FeatureSig { name: "agent_y", args: &[], boolean: false },
    FeatureSig { name: "facing", args: &[], boolean: false },
    FeatureSig { name: "facing_is", args: &["direction"], boolean: true },
    FeatureSig { name: "agent_room", args: &[], boolean: false },
    FeatureSig { name: "block_x", args: &["block"], boolean: false },
    FeatureSig { name: "block_y", args: &["block"], boolean: false },
    FeatureSig { name: "block_xy", args: &["block"], boolean: false },
    FeatureSig { name: "block_room", args: &["block"], boolean: false },
    FeatureSig { name: "block_in_room", args: &["block", "room"], boolean: true },
    FeatureSig { name: "block_home", args: &["block"], boolean: true },
    FeatureSig { name: "adjacent", args: &["block"], boolean: true },
    FeatureSig { name: "targets_xy", args: &[], boolean: false },
    FeatureSig { name: "blocks_xy", args: &[], boolean: false },
    FeatureSig { name: "target_rooms", args: &[], boolean: false },
    FeatureSig { name: "all_targets_home", args: &[], boolean: true },
];

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CleanupEnv {
        CleanupEnv::new(CleanupLayout::named("cleanup-small").unwrap().unwrap()).unwrap()
    }

    fn act(id: &str) -> Action {
        Action::primitive(id)
    }

    fn run(env: &CleanupEnv, s: &GroundState, a: &str) -> StepOutcome {
        env.step(s, &act(a), &mut SeededRng::new(0)).unwrap()
    }

    #[test]
    fn named_layouts_parse() {
        for (name, _) in NAMED_LAYOUTS {
            let layout = CleanupLayout::named(name).unwrap().unwrap();
            assert!(layout.width > 0 && layout.height > 0, "{name}");
        }
        let l = CleanupLayout::named("cleanup-3r1b-5x7").unwrap().unwrap();
        assert_eq!((l.width, l.height, l.rooms.len(), l.blocks.len()), (5, 7, 3, 1));
        let l = CleanupLayout::named("cleanup-2r2b1t-5x5").unwrap().unwrap();
        assert_eq!((l.width, l.height, l.rooms.len(), l.blocks.len()), (5, 5, 2, 2));
        assert_eq!(l.blocks.iter().filter(|b| b.target).count(), 1);
        let l = CleanupLayout::named("cleanup-small").unwrap().unwrap();
        assert_eq!((l.width, l.height, l.rooms.len(), l.blocks.len()), (3, 5, 2, 1));
    }

    #[test]
    fn action_order_is_stable() {
        let env = small();
        let ids: Vec<_> = env.primitive_actions().iter().map(|a| a.id.as_str()).collect();
        assert_eq!(ids, ["north", "south", "east", "west", "pull"]);
    }

    #[test]
    fn push_moves_agent_and_block() {
        let env = small();
        let s = env.state_from((0, 0), "north", &[((1, 0), "blue".into())]).unwrap();
        // block at (1,0), agent west of it; beyond is (2,0)
        let o = run(&env, &s, "east");
        assert_eq!(env.agent(&o.next_state), (1, 0));
        assert_eq!(env.block_pos(&o.next_state, 0), (2, 0));
        assert_eq!(o.next_state.get("agent", "facing"), Some(&AttrValue::tag("east")));
        // block now in the corner: pushing again is a self-transition
        let o2 = run(&env, &o.next_state, "east");
        assert_eq!(o2.next_state, o.next_state);
    }

    #[test]
    fn walls_between_rooms_block_movement() {
        let env = small();
        let s = env.state_from((0, 2), "north", &[((2, 0), "blue".into())]).unwrap();
        // (0,2) is room A, (0,3) is room B, no door between
        assert_eq!(run(&env, &s, "north").next_state, s);
        let s = env.state_from((1, 1), "north", &[((2, 0), "blue".into())]).unwrap();
        let o = run(&env, &s, "north");
        assert_eq!(env.agent(&o.next_state), (1, 2));
        let o = run(&env, &o.next_state, "north");
        assert_eq!(env.agent(&o.next_state), (1, 3));
    }

    #[test]
    fn pull_drags_faced_block() {
        let env = small();
        let s = env.state_from((1, 1), "north", &[((1, 2), "blue".into())]).unwrap();
        let o = run(&env, &s, "pull");
        assert_eq!(env.agent(&o.next_state), (1, 0));
        assert_eq!(env.block_pos(&o.next_state, 0), (1, 1));
        assert_eq!(o.next_state.get("agent", "facing"), Some(&AttrValue::tag("north")));
        // backward cell off-grid: no effect
        let o2 = run(&env, &o.next_state, "pull");
        assert_eq!(o2.next_state, o.next_state);
        // not facing a block: no effect
        let s = env.state_from((0, 0), "east", &[((1, 2), "blue".into())]).unwrap();
        assert_eq!(run(&env, &s, "pull").next_state, s);
    }

    #[test]
    fn goal_reward_is_exactly_one() {
        let env = small();
        let s = env.state_from((1, 1), "north", &[((1, 2), "blue".into())]).unwrap();
        let o = run(&env, &s, "north");
        assert_eq!(o.terminal, Terminal::Goal);
        assert_eq!(o.reward, 1.0);
        assert_eq!(env.block_pos(&o.next_state, 0), (1, 3));
    }

    #[test]
    fn door_is_in_no_room() {
        let env = small();
        let s = env.state_from((0, 0), "north", &[((1, 2), "blue".into())]).unwrap();
        let mut out = Vec::new();
        env.eval_feature("block_room", &["b0"], &s, &mut out).unwrap();
        assert_eq!(out, [AttrValue::tag("none")]);
        assert_eq!(env.terminal(&s), Terminal::None);
    }

    #[test]
    fn overlapping_and_inconsistent_layouts_rejected() {
        let bad_door = "cleanup-layout 1\ngrid\nAAA\nADA\nAAA\nroom A red\nblock b0 target\n";
        assert!(matches!(CleanupLayout::parse(bad_door), Err(Error::Config(_))));
        let overlap = "cleanup-layout 1\ngrid\nAA\nAA\nroom A red\nblock b0 target x=0 y=0\nblock b1 x=0 y=0\n";
        assert!(matches!(CleanupLayout::parse(overlap), Err(Error::Config(_))));
        let undeclared = "cleanup-layout 1\ngrid\nAX\nroom A red\nblock b0 target\n";
        assert!(matches!(CleanupLayout::parse(undeclared), Err(Error::Parse { .. })));
    }

    #[test]
    fn single_room_task_is_valid() {
        let text = "cleanup-layout 1\ngrid\nAAA\nAAA\nroom A red\nblock b0 target\n";
        let layout = CleanupLayout::parse(text).unwrap();
        let (env, s) = make_cleanup_task(&layout, &mut SeededRng::new(3)).unwrap();
        // the only color available is the room's own, so the task starts solved
        assert_eq!(env.terminal(&s), Terminal::Goal);
    }

    #[test]
    fn sampled_tasks_start_unsolved_and_disjoint() {
        let layout = CleanupLayout::named("cleanup-2r2b2t-5x5").unwrap().unwrap();
        for seed in 0..100 {
            let (env, s) = make_cleanup_task(&layout, &mut SeededRng::new(seed)).unwrap();
            assert_eq!(env.terminal(&s), Terminal::None);
            assert_eq!(s.get("agent", "facing"), Some(&AttrValue::tag("north")));
            let a = env.agent(&s);
            let b0 = env.block_pos(&s, 0);
            let b1 = env.block_pos(&s, 1);
            assert!(a != b0 && a != b1 && b0 != b1);
        }
    }

    #[test]
    fn noisy_outcomes_sum_to_one() {
        let mut layout = CleanupLayout::named("cleanup-3r1b-7x7").unwrap().unwrap();
        layout.movement_noise = 0.2;
        let (env, s) = make_cleanup_task(&layout, &mut SeededRng::new(0)).unwrap();
        for a in env.primitive_actions() {
            let total: f64 = env.outcomes(&s, a).unwrap().iter().map(|(p, _)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
