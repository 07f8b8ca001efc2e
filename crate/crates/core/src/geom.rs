//! Grid geometry: macro libraries, row placement, and maze routing.
//!
//! All coordinates are fine-grid integers. Metal 1 runs horizontally,
//! metal 2 vertically. Fat designs draw width-2 wires aligned to even
//! tracks so that a coarse track t owns the fine track pair (2t, 2t+1);
//! the interconnect decomposition later drops a width-1 wire on each of
//! the two fine tracks. Macro pins sit on even coordinates for the same
//! reason.
//!
//! Rows sit at the top of their region with a routing channel below, so
//! every pin (macros keep them on the bottom edge, every fourth track)
//! drops straight down into open channel. Row crossings happen on the
//! odd columns, which no pin ever occupies. The fill factor sets the
//! channel height via the row pitch. The clock is an ideal global
//! signal and is never routed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::cells::CellFunction;
use crate::dualrail::{rail_name, WddlLibrary};
use crate::netlist::{NetId, Netlist};

/// Cell height in fine grid units. All macros share it.
pub const ROW_HEIGHT: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Fat,
    Differential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub horizontal: bool,
    /// Wire width in fine tracks: 2 for fat, 1 for differential.
    pub width: i64,
    pub pitch: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroPin {
    pub name: String,
    pub x: i64,
    pub y: i64,
    /// Cell input pins carry load capacitance; outputs do not. Not part
    /// of the LEF text, which only records geometry.
    pub is_input: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroGeom {
    pub name: String,
    pub width: i64,
    pub height: i64,
    pub pins: Vec<MacroPin>,
}

impl MacroGeom {
    pub fn pin(&self, name: &str) -> Option<&MacroPin> {
        self.pins.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryGeometry {
    pub layers: Vec<Layer>,
    pub macros: BTreeMap<String, MacroGeom>,
    pub variant: Variant,
}

impl LibraryGeometry {
    pub fn wire_width(&self) -> i64 {
        match self.variant {
            Variant::Fat => 2,
            Variant::Differential => 1,
        }
    }
}

fn quad_ceil(a: f64) -> i64 {
    let c = a.ceil() as i64;
    if c <= 0 {
        4
    } else {
        (c + 3) / 4 * 4
    }
}

/// Pins go on the bottom edge at every fourth grid point so that every
/// other coarse routing column stays clear of pins; the width must cover
/// them all and at least the cell's area at the shared height. Keeping
/// widths multiples of 4 keeps pin columns aligned across abutted cells.
fn macro_for(cell: &CellFunction) -> MacroGeom {
    let pins: Vec<&str> = cell.pins().collect();
    let width = quad_ceil(cell.area).max(4 * pins.len() as i64);
    let pins = pins
        .iter()
        .enumerate()
        .map(|(j, name)| MacroPin {
            name: name.to_string(),
            x: 4 * j as i64,
            y: 0,
            is_input: cell.inputs.iter().any(|i| i == name),
        })
        .collect();
    MacroGeom {
        name: cell.name.clone(),
        width,
        height: ROW_HEIGHT,
        pins,
    }
}

fn layers(width: i64) -> Vec<Layer> {
    vec![
        Layer {
            name: "M1".to_string(),
            horizontal: true,
            width,
            pitch: 1,
        },
        Layer {
            name: "M2".to_string(),
            horizontal: false,
            width,
            pitch: 1,
        },
    ]
}

/// Paired geometry libraries. The fat library has one macro per compound
/// with the base pin names; the differential one keeps the same outlines
/// but splits every data pin p at (x,y) into p_t at (x,y) and p_f at
/// (x+1,y+1). Clock pins stay single. Base cells are carried in the
/// differential library too so a single-ended reference design can be
/// placed and routed with normal-width wires.
pub fn build_libraries(wlib: &WddlLibrary) -> (LibraryGeometry, LibraryGeometry) {
    let fat_cells = wlib.fat_cells();
    let mut fat_macros = BTreeMap::new();
    let mut diff_macros = BTreeMap::new();
    for cell in fat_cells.iter() {
        let fat = macro_for(cell);
        let clock = if cell.sequential {
            Some(cell.clock_pin().to_string())
        } else {
            None
        };
        let mut pins = Vec::new();
        for pin in &fat.pins {
            if clock.as_deref() == Some(pin.name.as_str()) {
                pins.push(pin.clone());
                continue;
            }
            pins.push(MacroPin {
                name: rail_name(&pin.name, true),
                x: pin.x,
                y: pin.y,
                is_input: pin.is_input,
            });
            pins.push(MacroPin {
                name: rail_name(&pin.name, false),
                x: pin.x + 1,
                y: pin.y + 1,
                is_input: pin.is_input,
            });
        }
        diff_macros.insert(
            fat.name.clone(),
            MacroGeom {
                name: fat.name.clone(),
                width: fat.width,
                height: fat.height,
                pins,
            },
        );
        fat_macros.insert(fat.name.clone(), fat);
    }
    for cell in wlib.base.iter() {
        let m = macro_for(cell);
        diff_macros.insert(m.name.clone(), m);
    }
    (
        LibraryGeometry {
            layers: layers(2),
            macros: fat_macros,
            variant: Variant::Fat,
        },
        LibraryGeometry {
            layers: layers(1),
            macros: diff_macros,
            variant: Variant::Differential,
        },
    )
}

#[derive(Debug, Error, PartialEq)]
pub enum PlaceError {
    #[error("no macro for cell {0}")]
    UnknownMacro(String),
    #[error("fill factor {0} outside (0, 1]")]
    BadFill(f64),
    #[error("cell {cell} ({width} units) is wider than the die ({die} units)")]
    CellWiderThanDie { cell: String, width: i64, die: i64 },
    #[error("could not pack components into any candidate die")]
    Unplaceable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub inst: String,
    pub cell: String,
    pub x: i64,
    pub y: i64,
}

#[derive(Debug, Clone)]
pub struct PlacedDesign {
    /// Die extent: x in [0, die.0), y in [0, die.1).
    pub die: (i64, i64),
    pub rows: Vec<i64>,
    pub components: Vec<Component>,
    pub netlist: Netlist,
}

impl PlacedDesign {
    pub fn component(&self, inst: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.inst == inst)
    }
}

///// Instance order that keeps connected cells close: depth-first over
/// the shared-net graph, seeded from the highest-degree instance. Depth
/// first matters: it lays out each cone of logic as one contiguous run,
/// where a breadth-first walk would interleave the levels of every cone
/// and scatter tightly coupled gates across the die. The clock net is
/// ignored since it touches every register.
fn connectivity_order(n: &Netlist) -> Vec<usize> {
    let clock = n.clock.as_ref().and_then(|c| n.net(c)).map(|id| n.canonical(id));
    let mut by_net: HashMap<NetId, Vec<usize>> = HashMap::new();
    for (i, inst) in n.instances.iter().enumerate() {
        for (_, id) in &inst.conns {
            let id = n.canonical(*id);
            if Some(id) == clock {
                continue;
            }
            by_net.entry(id).or_default().push(i);
        }
    }
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n.instances.len()];
    for members in by_net.values() {
        // High-fanout nets span the whole design; letting them define
        // adjacency would glue unrelated logic together and destroy the
        // locality this ordering exists to create.
        if members.len() > 8 {
            continue;
        }
        for &a in members {
            for &b in members {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
    }
    let rank = |i: usize| (usize::MAX - adj[i].len(), &n.instances[i].name);
    let mut order = Vec::with_capacity(n.instances.len());
    let mut seen = vec![false; n.instances.len()];
    let mut seeds: Vec<usize> = (0..n.instances.len()).collect();
    seeds.sort_by_key(|&i| rank(i));
    for seed in seeds {
        if seen[seed] {
            continue;
        }
        let mut stack = vec![seed];
        while let Some(i) = stack.pop() {
            if seen[i] {
                continue;
            }
            seen[i] = true;
            order.push(i);
            let mut next: Vec<usize> = adj[i].iter().copied().filter(|&j| !seen[j]).collect();
            next.sort_by_key(|&j| rank(j));
            for j in next.into_iter().rev() {
                stack.push(j);
            }
        }
    }
    order
}

/// Rows fitting a die of the given height, bottom to top. Each row sits
/// at the top of its region with the routing channel below it, so cell
/// pins (always on the macro's bottom edge) face straight into their
/// channel.
fn row_origins(height: i64, pitch: i64) -> Vec<i64> {
    let mut rows = Vec::new();
    let mut y = pitch - ROW_HEIGHT;
    while y + ROW_HEIGHT <= height {
        rows.push(y);
        y += pitch;
    }
    rows
}

/// Row pitch giving each channel enough tracks to hold the fill factor:
/// cells occupy ROW_HEIGHT of every pitch-worth of die height, so the
/// pitch is the smallest even value with ROW_HEIGHT/pitch <= fill.
fn row_pitch(fill: f64) -> i64 {
    2 * (1.0 / fill).ceil() as i64
}

/// Greedy row placement. The die starts at the smallest rectangle whose
/// area covers the cell area divided by the fill factor at the requested
/// aspect ratio, then grows one grid unit at a time until the greedy
/// packing fits.
pub fn place(
    n: &Netlist,
    lib: &LibraryGeometry,
    aspect: f64,
    fill: f64,
) -> Result<PlacedDesign, PlaceError> {
    if !(fill > 0.0 && fill <= 1.0) {
        return Err(PlaceError::BadFill(fill));
    }
    let mut widths = Vec::with_capacity(n.instances.len());
    for inst in &n.instances {
        let m = lib
            .macros
            .get(&inst.cell)
            .ok_or_else(|| PlaceError::UnknownMacro(inst.cell.clone()))?;
        widths.push(m.width);
    }
    if n.instances.is_empty() {
        return Ok(PlacedDesign {
            die: (2, 2),
            rows: Vec::new(),
            components: Vec::new(),
            netlist: n.clone(),
        });
    }

    let pitch = row_pitch(fill);
    let total: i64 = widths.iter().map(|w| w * pitch).sum();
    let side = (total as f64 / aspect).sqrt().ceil() as i64;
    // Heights stay whole row regions so every row keeps its channel.
    let h0 = (side.max(1) + pitch - 1).div_euclid(pitch) * pitch;
    let w0 = ((aspect * h0 as f64).ceil() as i64).max(2);
    if let Some(i) = (0..widths.len()).max_by_key(|&i| widths[i]) {
        if widths[i] > w0 {
            return Err(PlaceError::CellWiderThanDie {
                cell: n.instances[i].cell.clone(),
                width: widths[i],
                die: w0,
            });
        }
    }

    let order = connectivity_order(n);
    let nets = placement_nets(n);
    for grow in 0..=256 {
        let h = h0 + grow * pitch;
        let w = ((aspect * h as f64).ceil() as i64).max(w0);
        let rows = row_origins(h, pitch);
        let Some(init) = pack_rows(&order, &widths, w, rows.len()) else {
            continue;
        };
        let packed = refine_rows(&nets, &widths, &rows, init);
        let mut components = Vec::with_capacity(order.len());
        for (r, members) in packed.iter().enumerate() {
            let mut x = 0i64;
            for &i in members {
                components.push(Component {
                    inst: n.instances[i].name.clone(),
                    cell: n.instances[i].cell.clone(),
                    x,
                    y: rows[r],
                });
                x += widths[i];
            }
        }
        return Ok(PlacedDesign {
            die: (w, h),
            rows,
            components,
            netlist: n.clone(),
        });
    }
    Err(PlaceError::Unplaceable)
}

/// Shared-net instance groups for placement, one sorted member list per
/// multi-instance net, clock excluded, in net order.
fn placement_nets(n: &Netlist) -> Vec<Vec<usize>> {
    let clock = n.clock.as_ref().and_then(|c| n.net(c)).map(|id| n.canonical(id));
    let mut by_net: BTreeMap<NetId, BTreeSet<usize>> = BTreeMap::new();
    for (i, inst) in n.instances.iter().enumerate() {
        for (_, id) in &inst.conns {
            let id = n.canonical(*id);
            if Some(id) == clock {
                continue;
            }
            by_net.entry(id).or_default().insert(i);
        }
    }
    by_net
        .into_values()
        .filter(|m| m.len() >= 2)
        .map(|m| m.into_iter().collect())
        .collect()
}

/// Greedy left-to-right packing of `order` into equal-width rows, bottom
/// row first. None when the cells overflow the row supply.
fn pack_rows(order: &[usize], widths: &[i64], w: i64, nrows: usize) -> Option<Vec<Vec<usize>>> {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new()];
    let mut x = 0i64;
    for &i in order {
        if x + widths[i] > w {
            rows.push(Vec::new());
            x = 0;
        }
        if rows.len() > nrows {
            return None;
        }
        rows.last_mut().unwrap().push(i);
        x += widths[i];
    }
    Some(rows)
}

/// Local wirelength refinement of a row packing. The connectivity order
/// already gives good chains, so refinement only smooths them out: the
/// snake variant (odd rows reversed) is tried first since it keeps
/// chain neighbors together at row wraps, then adjacent cells within a
/// row are swapped greedily while total net bounding-box length drops.
/// Swapping row neighbors shifts no other cell, so each trial costs only
/// the nets touching the two cells. Coordinates are doubled to keep cell
/// centers integral.
fn refine_rows(
    nets: &[Vec<usize>],
    widths: &[i64],
    rows_y: &[i64],
    init: Vec<Vec<usize>>,
) -> Vec<Vec<usize>> {
    let ncells = widths.len();
    let positions = |rows: &[Vec<usize>]| -> Vec<(i64, i64)> {
        let mut pos = vec![(0, 0); ncells];
        for (r, members) in rows.iter().enumerate() {
            let mut x = 0i64;
            for &c in members {
                pos[c] = (2 * x + widths[c], 2 * rows_y[r]);
                x += widths[c];
            }
        }
        pos
    };
    let bbox = |m: &[usize], pos: &[(i64, i64)]| -> i64 {
        let xs = m.iter().map(|&c| pos[c].0);
        let ys = m.iter().map(|&c| pos[c].1);
        (xs.clone().max().unwrap() - xs.min().unwrap())
            + (ys.clone().max().unwrap() - ys.min().unwrap())
    };
    let score =
        |rows: &[Vec<usize>]| -> i64 { nets.iter().map(|m| bbox(m, &positions(rows))).sum() };

    let snake: Vec<Vec<usize>> = init
        .iter()
        .enumerate()
        .map(|(r, row)| {
            if r % 2 == 1 {
                row.iter().rev().copied().collect()
            } else {
                row.clone()
            }
        })
        .collect();
    let mut cur = if score(&snake) < score(&init) { snake } else { init };

    let mut nets_of: Vec<Vec<usize>> = vec![Vec::new(); ncells];
    for (k, m) in nets.iter().enumerate() {
        for &c in m {
            nets_of[c].push(k);
        }
    }
    let mut pos = positions(&cur);
    for _ in 0..24 {
        let mut improved = false;
        for r in 0..cur.len() {
            for k in 0..cur[r].len().saturating_sub(1) {
                let (a, b) = (cur[r][k], cur[r][k + 1]);
                let touched: BTreeSet<usize> =
                    nets_of[a].iter().chain(nets_of[b].iter()).copied().collect();
                let before: i64 = touched.iter().map(|&t| bbox(&nets[t], &pos)).sum();
                // Swapping neighbors moves only their own centers: the
                // pair occupies the same span either way.
                let ax = pos[a].0 + 2 * widths[b];
                let bx = pos[b].0 - 2 * widths[a];
                let (olda, oldb) = (pos[a], pos[b]);
                pos[a].0 = ax;
                pos[b].0 = bx;
                let after: i64 = touched.iter().map(|&t| bbox(&nets[t], &pos)).sum();
                if after < before {
                    cur[r].swap(k, k + 1);
                    improved = true;
                } else {
                    pos[a] = olda;
                    pos[b] = oldb;
                }
            }
        }
        if !improved {
            break;
        }
    }
    cur
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    /// Index into the library layer list.
    pub layer: u8,
    pub width: i64,
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl Segment {
    pub fn length(&self) -> i64 {
        (self.x2 - self.x1).abs() + (self.y2 - self.y1).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Via {
    pub x: i64,
    pub y: i64,
}

#[derive(Debug, Clone, Default)]
pub struct NetRoute {
    /// Instance pins on the net, sorted.
    pub pins: Vec<(String, String)>,
    pub segments: Vec<Segment>,
    pub vias: Vec<Via>,
}

impl NetRoute {
    pub fn wire_length(&self) -> i64 {
        self.segments.iter().map(|s| s.length()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RoutedDesign {
    pub placed: PlacedDesign,
    pub variant: Variant,
    pub nets: BTreeMap<String, NetRoute>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("no macro for cell {0}")]
    UnknownMacro(String),
    #[error("pin {inst}.{pin} not on the routing grid")]
    OffGridPin { inst: String, pin: String },
    #[error("net {net} is unroutable within the retry budget")]
    Unroutable { net: String },
}

#[derive(Debug, Clone, Copy)]
pub struct RouteOpts {
    /// Coarse tracks kept clear on both sides of every wire.
    pub spacing: i64,
    /// Full reroute passes before giving up.
    pub passes: usize,
}

impl Default for RouteOpts {
    fn default() -> Self {
        RouteOpts {
            spacing: 0,
            passes: 5,
        }
    }
}

const VIA_COST: u64 = 2;

/// Owner id for cells nothing may ever cross (clock pin metal).
const BLOCKED: i32 = i32::MIN;

///// Reserves the vertical stub each pin needs to drop into the channel
/// below its row: the via cell over the pin plus one channel cell
/// underneath. Without this, through-traffic in a busy channel can box
/// a pin in before its net gets a turn. Cells already owned (a pin of
/// another net in a hand-built design) are left alone; the router falls
/// back to side access.
fn claim_pin_escapes(grid: &mut CoarseGrid, task: &NetTask, me: i32) {
    for &(x, y) in &task.terminals {
        let mut stub = vec![(1, x, y)];
        if y > 0 {
            stub.push((1, x, y - 1));
        }
        for (l, x, y) in stub {
            let at = grid.idx(l, x, y);
            if grid.cells[at] == 0 {
                grid.cells[at] = me + 1;
                grid.hard[at] = true;
            }
        }
    }
}

struct CoarseGrid {
    w: i64,
    h: i64,
    /// 0 free, id+1 owned wire, -(id+1) owned clearance.
    cells: Vec<i32>,
    /// Pin metal and escape stubs; never crossable by other nets, not
    /// even when shoving.
    hard: Vec<bool>,
    /// Congestion memory: grows every time a cell is fought over, so
    /// repeated rip-up wars drift apart instead of repeating verbatim.
    history: Vec<u32>,
}

impl CoarseGrid {
    fn new(w: i64, h: i64) -> Self {
        CoarseGrid {
            w,
            h,
            cells: vec![0; (2 * w * h) as usize],
            hard: vec![false; (2 * w * h) as usize],
            history: vec![0; (2 * w * h) as usize],
        }
    }
    fn idx(&self, l: i64, x: i64, y: i64) -> usize {
        ((l * self.h + y) * self.w + x) as usize
    }
    fn node(&self, l: i64, x: i64, y: i64) -> u32 {
        self.idx(l, x, y) as u32
    }
    fn coords(&self, node: u32) -> (i64, i64, i64) {
        let i = node as i64;
        let l = i / (self.w * self.h);
        let r = i % (self.w * self.h);
        (l, r % self.w, r / self.w)
    }
    fn mine(&self, node: u32, me: i32) -> bool {
        let c = self.cells[node as usize];
        c == 0 || c == me + 1 || c == -(me + 1)
    }
    /// Foreign wire or clearance that rip-up may reclaim.
    fn soft(&self, node: u32, me: i32) -> bool {
        !self.hard[node as usize] && !self.mine(node, me) && self.cells[node as usize] != BLOCKED
    }
}

struct NetTask {
    name: String,
    /// Coarse pin cells, deduplicated.
    terminals: Vec<(i64, i64)>,
    pins: Vec<(String, String)>,
    hpwl: i64,
}

fn pin_location(
    placed: &PlacedDesign,
    lib: &LibraryGeometry,
    comp: &Component,
    pin: &str,
) -> Result<(i64, i64), RouteError> {
    let m = lib
        .macros
        .get(&comp.cell)
        .ok_or_else(|| RouteError::UnknownMacro(comp.cell.clone()))?;
    let p = m.pin(pin).ok_or_else(|| RouteError::OffGridPin {
        inst: comp.inst.clone(),
        pin: pin.to_string(),
    })?;
    let (x, y) = (comp.x + p.x, comp.y + p.y);
    if x % 2 != 0 || y % 2 != 0 || x < 0 || y < 0 || x >= placed.die.0 || y >= placed.die.1 {
        return Err(RouteError::OffGridPin {
            inst: comp.inst.clone(),
            pin: pin.to_string(),
        });
    }
    Ok((x / 2, y / 2))
}

fn net_tasks(
    placed: &PlacedDesign,
    lib: &LibraryGeometry,
) -> Result<Vec<NetTask>, RouteError> {
    let n = &placed.netlist;
    let comps: HashMap<&str, &Component> = placed
        .components
        .iter()
        .map(|c| (c.inst.as_str(), c))
        .collect();
    let mut by_net: BTreeMap<String, NetTask> = BTreeMap::new();
    for inst in &n.instances {
        let comp = comps[inst.name.as_str()];
        for (pin, id) in &inst.conns {
            let name = n.net_name(n.canonical(*id)).to_string();
            let task = by_net.entry(name.clone()).or_insert_with(|| NetTask {
                name,
                terminals: Vec::new(),
                pins: Vec::new(),
                hpwl: 0,
            });
            task.pins.push((inst.name.clone(), pin.clone()));
            let at = pin_location(placed, lib, comp, pin)?;
            if !task.terminals.contains(&at) {
                task.terminals.push(at);
            }
        }
    }
    let mut tasks: Vec<NetTask> = by_net.into_values().collect();
    for t in &mut tasks {
        t.pins.sort();
        t.terminals.sort();
        if let (Some(xmin), Some(xmax)) = (
            t.terminals.iter().map(|p| p.0).min(),
            t.terminals.iter().map(|p| p.0).max(),
        ) {
            let ymin = t.terminals.iter().map(|p| p.1).min().unwrap();
            let ymax = t.terminals.iter().map(|p| p.1).max().unwrap();
            t.hpwl = (xmax - xmin) + (ymax - ymin);
        }
    }
    Ok(tasks)
}

/// Maze-routes every multi-terminal net of the placed design. Nets are
/// attempted in decreasing half-perimeter order; when some fail, the
/// whole design is rerouted with the failures moved to the front, up to
/// the pass budget. Deterministic: ties everywhere break on (layer, y,
/// x) node order and net name.
pub fn route(
    placed: &PlacedDesign,
    lib: &LibraryGeometry,
    opts: &RouteOpts,
) -> Result<RoutedDesign, RouteError> {
    let n = &placed.netlist;
    let clock_net = n
        .clock
        .as_ref()
        .and_then(|c| n.net(c))
        .map(|id| n.net_name(n.canonical(id)).to_string());
    let mut tasks = net_tasks(placed, lib)?;
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let routable = |t: &NetTask| Some(&t.name) != clock_net.as_ref() && t.terminals.len() >= 2;
    order.sort_by(|&a, &b| {
        tasks[b]
            .hpwl
            .cmp(&tasks[a].hpwl)
            .then_with(|| tasks[a].name.cmp(&tasks[b].name))
    });

    let (w2, h2) = (placed.die.0.div_euclid(2), placed.die.1.div_euclid(2));
    let pin_cells: HashSet<(i64, i64)> = tasks
        .iter()
        .flat_map(|t| t.terminals.iter().copied())
        .collect();
    let rip_cost = rip_costs(&tasks);

    let mut cells: Vec<BTreeSet<u32>> = Vec::new();
    let mut vias: Vec<BTreeSet<(i64, i64)>> = Vec::new();
    let passes = opts.passes.max(1);
    let mut history: Vec<u32> = Vec::new();
    for pass in 0..passes {
        let mut grid = CoarseGrid::new(w2, h2);
        if history.len() == grid.history.len() {
            // Congestion memory carries across passes so each retry
            // explores genuinely different territory.
            grid.history = std::mem::take(&mut history);
        }
        cells = vec![BTreeSet::new(); tasks.len()];
        vias = vec![BTreeSet::new(); tasks.len()];
        for (i, t) in tasks.iter().enumerate() {
            let block = Some(&t.name) == clock_net.as_ref();
            for &(x, y) in &t.terminals {
                let at = grid.idx(0, x, y);
                // Clock pins are never routed but their metal is real:
                // nothing may run over them.
                grid.cells[at] = if block { BLOCKED } else { i as i32 + 1 };
                grid.hard[at] = true;
            }
        }
        for (i, t) in tasks.iter().enumerate() {
            if routable(t) {
                claim_pin_escapes(&mut grid, t, i as i32);
            }
        }

        let mut queue: std::collections::VecDeque<usize> =
            order.iter().copied().filter(|&i| routable(&tasks[i])).collect();
        let mut in_queue = vec![false; tasks.len()];
        let mut failed: BTreeSet<usize> = BTreeSet::new();
        // Shoving requeues its victims, so bound the total work; anything
        // that cannot route once the budget runs out waits for the next
        // pass. A failure while shoving was still allowed means the net
        // is sealed off by pins or blocked cells, which no retry fixes.
        let mut budget = 32 * queue.len();
        while let Some(i) = queue.pop_front() {
            in_queue[i] = false;
            let allow_shove = budget > 0;
            budget = budget.saturating_sub(1);
            match route_net(
                &mut grid,
                &tasks,
                i,
                opts.spacing,
                allow_shove,
                &rip_cost,
                &pin_cells,
                &mut cells,
                &mut vias,
            ) {
                Ok(ripped) => {
                    for v in ripped {
                        if !in_queue[v] {
                            in_queue[v] = true;
                            queue.push_back(v);
                        }
                    }
                }
                Err(()) => {
                    failed.insert(i);
                }
            }
        }
        if failed.is_empty() {
            break;
        }
        if pass + 1 == passes {
            return Err(RouteError::Unroutable {
                net: tasks[*failed.iter().next().unwrap()].name.clone(),
            });
        }
        history = std::mem::take(&mut grid.history);
        let mut next: Vec<usize> = failed.iter().copied().collect();
        next.extend(order.iter().copied().filter(|i| !failed.contains(i)));
        order = next;
    }

    let grid = CoarseGrid::new(w2, h2);
    let width = lib.wire_width();
    let mut nets = BTreeMap::new();
    for (i, t) in tasks.iter_mut().enumerate() {
        let segments = cells_to_segments(&grid, &cells[i], width);
        let route = NetRoute {
            pins: std::mem::take(&mut t.pins),
            segments,
            vias: vias[i].iter().map(|&(x, y)| Via { x: 2 * x, y: 2 * y }).collect(),
        };
        nets.insert(t.name.clone(), route);
    }
    Ok(RoutedDesign {
        placed: placed.clone(),
        variant: lib.variant,
        nets,
    })
}

/// Splits a net's surviving metal into connected components so a reroute
/// can start from what is already in place. Two cells on the same layer
/// join when adjacent along the layer's direction; layers join only
/// through a recorded via. Returns each node's component root, keyed by
/// node.
fn metal_components(
    grid: &CoarseGrid,
    nodes: &BTreeSet<u32>,
    vias: &BTreeSet<(i64, i64)>,
) -> BTreeMap<u32, usize> {
    let index: BTreeMap<u32, usize> = nodes.iter().copied().zip(0..).collect();
    let mut uf = UnionFind::new(index.len());
    for (&n, &k) in &index {
        let (l, x, y) = grid.coords(n);
        let along = if l == 0 {
            grid.node(0, x + 1, y)
        } else {
            grid.node(1, x, y + 1)
        };
        if (l == 0 && x + 1 < grid.w || l == 1 && y + 1 < grid.h)
            && index.contains_key(&along)
        {
            uf.union(k, index[&along]);
        }
        if l == 0 && vias.contains(&(x, y)) {
            let up = grid.node(1, x, y);
            if let Some(&j) = index.get(&up) {
                uf.union(k, j);
            }
        }
    }
    index.iter().map(|(&n, &k)| (n, uf.find(k))).collect()
}

/// Grows one net's route tree, one shortest path per terminal, reusing
/// any of its own metal that is still connected to a terminal. When no
/// clean path exists and shoving is allowed, the cheapest path through
/// foreign wires is taken; the crossed cells are carved out of their
/// owners, which are returned for requeueing so they can patch
/// themselves back together. On failure the net's own partial route is
/// ripped before returning.
fn route_net(
    grid: &mut CoarseGrid,
    tasks: &[NetTask],
    i: usize,
    spacing: i64,
    allow_shove: bool,
    rip_cost: &[u64],
    pin_cells: &HashSet<(i64, i64)>,
    cells: &mut [BTreeSet<u32>],
    vias: &mut [BTreeSet<(i64, i64)>],
) -> Result<BTreeSet<usize>, ()> {
    let me = i as i32;
    let task = &tasks[i];
    let terms: Vec<u32> = task
        .terminals
        .iter()
        .map(|&(x, y)| grid.node(0, x, y))
        .collect();

    let mut nodes: BTreeSet<u32> = cells[i].iter().copied().collect();
    nodes.extend(terms.iter().copied());
    let comp = metal_components(grid, &nodes, &vias[i]);
    let live: BTreeSet<usize> = terms.iter().map(|t| comp[t]).collect();
    for (&n, r) in &comp {
        // Metal stranded with no terminal attached is dead weight from an
        // earlier shove; release it.
        if !live.contains(r) && cells[i].remove(&n) {
            grid.cells[n as usize] = 0;
        }
    }
    vias[i].retain(|&(x, y)| {
        cells[i].contains(&grid.node(0, x, y)) && cells[i].contains(&grid.node(1, x, y))
    });

    let root0 = comp[&terms[0]];
    let mut tree: BTreeSet<u32> = comp
        .iter()
        .filter(|(_, &r)| r == root0)
        .map(|(&n, _)| n)
        .collect();
    let mut remaining: BTreeSet<u32> = terms
        .iter()
        .copied()
        .filter(|t| comp[t] != root0)
        .collect();
    let mut ripped = BTreeSet::new();

    while !remaining.is_empty() {
        let path = shortest_path(grid, me, &tree, &remaining, false, rip_cost).or_else(|| {
            if allow_shove {
                shortest_path(grid, me, &tree, &remaining, true, rip_cost)
            } else {
                None
            }
        });
        let Some(path) = path else {
            rip_net(grid, task, me, &mut cells[i], &mut vias[i]);
            return Err(());
        };
        let mut taken: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        let mut shield: BTreeSet<usize> = BTreeSet::new();
        for &n in &path {
            let c = grid.cells[n as usize];
            if c == 0 || c == me + 1 || c == -(me + 1) {
                continue;
            }
            grid.history[n as usize] += 8;
            if c > 0 {
                taken.entry((c - 1) as usize).or_default().push(n);
            } else {
                shield.insert((-c - 1) as usize);
            }
        }
        // A pierced shield invalidates the whole route that reserved it,
        // so those owners restart from scratch; wire crossings only carve
        // out the crossed cells and the owner reconnects around them.
        for &v in &shield {
            rip_net(grid, &tasks[v], v as i32, &mut cells[v], &mut vias[v]);
            ripped.insert(v);
        }
        for (&v, cut) in &taken {
            if shield.contains(&v) {
                continue;
            }
            for n in cut {
                cells[v].remove(n);
            }
            vias[v].retain(|&(x, y)| {
                cells[v].contains(&grid.node(0, x, y)) && cells[v].contains(&grid.node(1, x, y))
            });
            ripped.insert(v);
        }
        let target = *path.last().unwrap();
        let reached = comp[&target];
        for (&n, &r) in &comp {
            if r == reached && cells[i].contains(&n) {
                tree.insert(n);
            }
        }
        remaining.retain(|t| comp[t] != reached);
        remaining.remove(&target);
        for pair in path.windows(2) {
            let (l1, x1, y1) = grid.coords(pair[0]);
            let (l2, x2, y2) = grid.coords(pair[1]);
            if l1 != l2 {
                debug_assert!((x1, y1) == (x2, y2));
                vias[i].insert((x1, y1));
            }
        }
        for &node in &path {
            grid.cells[node as usize] = me + 1;
            cells[i].insert(node);
            tree.insert(node);
            if spacing > 0 {
                reserve_clearance(grid, node, me, spacing, pin_cells);
            }
        }
    }
    Ok(ripped)
}

fn reserve_clearance(
    grid: &mut CoarseGrid,
    node: u32,
    me: i32,
    spacing: i64,
    pin_cells: &HashSet<(i64, i64)>,
) {
    let (l, x, y) = grid.coords(node);
    for d in 1..=spacing {
        let side: [(i64, i64); 2] = if l == 0 {
            [(x, y - d), (x, y + d)]
        } else {
            [(x - d, y), (x + d, y)]
        };
        for (nx, ny) in side {
            if nx < 0 || ny < 0 || nx >= grid.w || ny >= grid.h {
                continue;
            }
            if pin_cells.contains(&(nx, ny)) {
                continue;
            }
            let i = grid.idx(l, nx, ny);
            if grid.cells[i] == 0 {
                grid.cells[i] = -(me + 1);
            }
        }
    }
}

fn rip_net(
    grid: &mut CoarseGrid,
    task: &NetTask,
    me: i32,
    cells: &mut BTreeSet<u32>,
    net_vias: &mut BTreeSet<(i64, i64)>,
) {
    for &node in cells.iter() {
        grid.cells[node as usize] = 0;
    }
    for c in grid.cells.iter_mut() {
        if *c == -(me + 1) {
            *c = 0;
        }
    }
    cells.clear();
    net_vias.clear();
    // Pins and their escape stubs stay claimed so other nets keep
    // avoiding them until this one gets another turn.
    for &(x, y) in &task.terminals {
        let at = grid.idx(0, x, y);
        grid.cells[at] = me + 1;
    }
    claim_pin_escapes(grid, task, me);
}

/// Base cost added per foreign cell a shoved path crosses. High enough
/// that an ordinary detour wins when one exists, low enough that a
/// walled-in pin rips its wall instead of failing. The per-net rip cost
/// grows with the victim's terminal count: displacing a huge fanout
/// tree forces a full reroute of it, so huge trees are shoved only as a
/// last resort while two-pin nets move freely.
const SHOVE_COST: u64 = 40;

fn rip_costs(tasks: &[NetTask]) -> Vec<u64> {
    tasks
        .iter()
        .map(|t| SHOVE_COST + 24 * t.terminals.len().saturating_sub(2) as u64)
        .collect()
}

/// Multi-source Dijkstra from the route tree to the nearest remaining
/// terminal. Returns the node path from a tree cell to that terminal.
/// With `shove` set, foreign soft cells are crossable at their owner's
/// rip cost; the caller must rip their owners before carving the path.
fn shortest_path(
    grid: &CoarseGrid,
    me: i32,
    tree: &BTreeSet<u32>,
    targets: &BTreeSet<u32>,
    shove: bool,
    rip_cost: &[u64],
) -> Option<Vec<u32>> {
    const UNSEEN: u64 = u64::MAX;
    let mut dist = vec![UNSEEN; grid.cells.len()];
    let mut prev = vec![u32::MAX; grid.cells.len()];
    let mut heap = std::collections::BinaryHeap::new();
    for &n in tree {
        dist[n as usize] = 0;
        heap.push(std::cmp::Reverse(((0u64) << 32 | n as u64, n)));
    }
    while let Some(std::cmp::Reverse((key, node))) = heap.pop() {
        let d = key >> 32;
        if d > dist[node as usize] {
            continue;
        }
        if targets.contains(&node) {
            let mut path = vec![node];
            let mut cur = node;
            while prev[cur as usize] != u32::MAX {
                cur = prev[cur as usize];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        let (l, x, y) = grid.coords(node);
        let mut step = |l2: i64, x2: i64, y2: i64, cost: u64| {
            if x2 < 0 || y2 < 0 || x2 >= grid.w || y2 >= grid.h {
                return;
            }
            let next = grid.node(l2, x2, y2);
            let cost = if grid.mine(next, me) {
                cost + grid.history[next as usize] as u64
            } else if shove && grid.soft(next, me) {
                let owner = (grid.cells[next as usize].unsigned_abs() - 1) as usize;
                cost + rip_cost[owner] + grid.history[next as usize] as u64
            } else {
                return;
            };
            let nd = d + cost;
            if nd < dist[next as usize] {
                dist[next as usize] = nd;
                prev[next as usize] = node;
                heap.push(std::cmp::Reverse((nd << 32 | next as u64, next)));
            }
        };
        if l == 0 {
            step(0, x - 1, y, 1);
            step(0, x + 1, y, 1);
        } else {
            step(1, x, y - 1, 1);
            step(1, x, y + 1, 1);
        }
        step(1 - l, x, y, VIA_COST);
    }
    None
}

/// Canonical segments from a net's coarse cell set: maximal runs per
/// track, drawn in fine units on the even track of each coarse track.
fn cells_to_segments(grid: &CoarseGrid, cells: &BTreeSet<u32>, width: i64) -> Vec<Segment> {
    let mut h: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
    let mut v: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
    for &node in cells {
        let (l, x, y) = grid.coords(node);
        if l == 0 {
            h.entry(y).or_default().push(x);
        } else {
            v.entry(x).or_default().push(y);
        }
    }
    let mut segs = Vec::new();
    for (y, mut xs) in h {
        xs.sort_unstable();
        for (a, b) in runs(&xs) {
            if b > a {
                segs.push(Segment {
                    layer: 0,
                    width,
                    x1: 2 * a,
                    y1: 2 * y,
                    x2: 2 * b,
                    y2: 2 * y,
                });
            }
        }
    }
    for (x, mut ys) in v {
        ys.sort_unstable();
        for (a, b) in runs(&ys) {
            if b > a {
                segs.push(Segment {
                    layer: 1,
                    width,
                    x1: 2 * x,
                    y1: 2 * a,
                    x2: 2 * x,
                    y2: 2 * b,
                });
            }
        }
    }
    segs
}

fn runs(sorted: &[i64]) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let mut it = sorted.iter().copied();
    let Some(first) = it.next() else {
        return out;
    };
    let (mut a, mut b) = (first, first);
    for x in it {
        if x == b + 1 {
            b = x;
        } else if x > b {
            out.push((a, b));
            a = x;
            b = x;
        }
    }
    out.push((a, b));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrcKind {
    Overlap,
    OffGrid,
    Open,
}

#[derive(Debug, Clone)]
pub struct DrcDiag {
    pub kind: DrcKind,
    pub net: String,
    pub message: String,
}

/// Fine cells a segment occupies, including the width expansion: a
/// width-w wire at track t covers tracks t..t+w-1, and its interval is
/// padded by w-1 so a fat wire owns its whole coarse cell.
fn occupied_cells(seg: &Segment) -> Vec<(u8, i64, i64)> {
    let mut out = Vec::new();
    if seg.y1 == seg.y2 {
        let (xa, xb) = (seg.x1.min(seg.x2), seg.x1.max(seg.x2) + seg.width - 1);
        for y in seg.y1..seg.y1 + seg.width {
            for x in xa..=xb {
                out.push((seg.layer, x, y));
            }
        }
    } else {
        let (ya, yb) = (seg.y1.min(seg.y2), seg.y1.max(seg.y2) + seg.width - 1);
        for x in seg.x1..seg.x1 + seg.width {
            for y in ya..=yb {
                out.push((seg.layer, x, y));
            }
        }
    }
    out
}

/// Points on a segment's drawn line, used for connectivity.
fn line_points(seg: &Segment) -> Vec<(u8, i64, i64)> {
    let mut out = Vec::new();
    if seg.y1 == seg.y2 {
        for x in seg.x1.min(seg.x2)..=seg.x1.max(seg.x2) {
            out.push((seg.layer, x, seg.y1));
        }
    } else {
        for y in seg.y1.min(seg.y2)..=seg.y1.max(seg.y2) {
            out.push((seg.layer, seg.x1, y));
        }
    }
    out
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let r = self.find(self.0[i]);
            self.0[i] = r;
        }
        self.0[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra] = rb;
    }
}

/// Checks the routed-design invariants: axis-parallel in-die geometry,
/// one owner per (layer, track, interval), and one connected component
/// per net. The clock net is exempt from the open check since it is an
/// ideal global signal.
pub fn check_drc(d: &RoutedDesign, lib: &LibraryGeometry) -> Vec<DrcDiag> {
    let mut diags = Vec::new();
    let n = &d.placed.netlist;
    let clock_net = n
        .clock
        .as_ref()
        .and_then(|c| n.net(c))
        .map(|id| n.net_name(n.canonical(id)).to_string());
    let comps: HashMap<&str, &Component> = d
        .placed
        .components
        .iter()
        .map(|c| (c.inst.as_str(), c))
        .collect();
    let pin_point = |inst: &str, pin: &str| -> Option<(i64, i64)> {
        let c = comps.get(inst)?;
        let p = lib.macros.get(&c.cell)?.pin(pin)?;
        Some((c.x + p.x, c.y + p.y))
    };

    let mut occupancy: HashMap<(u8, i64, i64), &str> = HashMap::new();
    let mut reported: HashSet<(String, String)> = HashSet::new();
    let mut overlap = |cell: (u8, i64, i64),
                       net: &str,
                       occupancy: &mut HashMap<(u8, i64, i64), &str>,
                       diags: &mut Vec<DrcDiag>| {
        if let Some(&other) = occupancy.get(&cell) {
            if other != net {
                let key = if other < net {
                    (other.to_string(), net.to_string())
                } else {
                    (net.to_string(), other.to_string())
                };
                if reported.insert(key) {
                    diags.push(DrcDiag {
                        kind: DrcKind::Overlap,
                        net: net.to_string(),
                        message: format!(
                            "nets {net} and {other} overlap on layer {} track {} at {}",
                            cell.0, cell.2, cell.1
                        ),
                    });
                }
            }
        }
    };

    for (name, route) in &d.nets {
        let via_w = route
            .segments
            .first()
            .map(|s| s.width)
            .unwrap_or_else(|| lib.wire_width());
        let mut claimed: Vec<(u8, i64, i64)> = Vec::new();
        for seg in &route.segments {
            let diagonal = seg.x1 != seg.x2 && seg.y1 != seg.y2;
            let out = occupied_cells(seg).into_iter().any(|(_, x, y)| {
                x < 0 || y < 0 || x >= d.placed.die.0 || y >= d.placed.die.1
            });
            if diagonal || out || seg.layer as usize >= lib.layers.len() {
                diags.push(DrcDiag {
                    kind: DrcKind::OffGrid,
                    net: name.clone(),
                    message: format!(
                        "net {name} segment ({},{})-({},{}) leaves the grid",
                        seg.x1, seg.y1, seg.x2, seg.y2
                    ),
                });
                if diagonal {
                    continue;
                }
            }
            for cell in occupied_cells(seg) {
                overlap(cell, name, &mut occupancy, &mut diags);
                claimed.push(cell);
            }
        }
        for via in &route.vias {
            for dx in 0..via_w {
                for dy in 0..via_w {
                    for l in 0..2u8 {
                        let cell = (l, via.x + dx, via.y + dy);
                        overlap(cell, name, &mut occupancy, &mut diags);
                        claimed.push(cell);
                    }
                }
            }
        }
        // Claim cells only after checking, so a net never conflicts with
        // itself.
        for cell in claimed {
            occupancy.insert(cell, name);
        }
    }

    // Foreign wires over pin points. Clock pins are exempt: the clock
    // has no physical wire in this model.
    for (name, route) in &d.nets {
        if Some(name) == clock_net.as_ref() {
            continue;
        }
        for (inst, pin) in &route.pins {
            if let Some((x, y)) = pin_point(inst, pin) {
                overlap((0, x, y), name, &mut occupancy, &mut diags);
            }
        }
    }

    for (name, route) in &d.nets {
        if Some(name) == clock_net.as_ref() {
            continue;
        }
        let mut points: Vec<(u8, i64, i64)> = Vec::new();
        for seg in &route.segments {
            points.extend(line_points(seg));
        }
        for via in &route.vias {
            points.push((0, via.x, via.y));
            points.push((1, via.x, via.y));
        }
        let mut pin_pts = Vec::new();
        for (inst, pin) in &route.pins {
            if let Some((x, y)) = pin_point(inst, pin) {
                points.push((0, x, y));
                pin_pts.push((x, y));
            }
        }
        if points.is_empty() {
            continue;
        }
        let index: HashMap<(u8, i64, i64), usize> = {
            let mut m = HashMap::new();
            for p in &points {
                let next = m.len();
                m.entry(*p).or_insert(next);
            }
            m
        };
        let mut uf = UnionFind::new(index.len());
        for seg in &route.segments {
            let pts = line_points(seg);
            for pair in pts.windows(2) {
                uf.union(index[&pair[0]], index[&pair[1]]);
            }
        }
        for via in &route.vias {
            uf.union(index[&(0, via.x, via.y)], index[&(1, via.x, via.y)]);
        }
        let roots: HashSet<usize> = index.values().map(|&i| uf.find(i)).collect();
        if roots.len() > 1 {
            diags.push(DrcDiag {
                kind: DrcKind::Open,
                net: name.clone(),
                message: format!(
                    "net {name} splits into {} pieces ({} pins, {} segments)",
                    roots.len(),
                    pin_pts.len(),
                    route.segments.len()
                ),
            });
        }
    }
    diags
}

pub fn layer_name(lib: &LibraryGeometry, idx: u8) -> &str {
    &lib.layers[idx as usize].name
}

/// LEF-lite text for a geometry library.
pub fn to_lef(lib: &LibraryGeometry) -> String {
    let mut out = String::new();
    for l in &lib.layers {
        out.push_str(&format!(
            "LAYER {} ; DIRECTION {} ; WIDTH {} ; PITCH {} ; END\n",
            l.name,
            if l.horizontal { "H" } else { "V" },
            l.width,
            l.pitch
        ));
    }
    for m in lib.macros.values() {
        out.push_str(&format!("MACRO {} ; SIZE {} BY {} ;", m.name, m.width, m.height));
        for p in &m.pins {
            out.push_str(&format!(" PIN {} ( {} {} ) ;", p.name, p.x, p.y));
        }
        out.push_str(" END\n");
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum GeomParseError {
    #[error("line {line}: expected {expected}, found {found}")]
    Unexpected {
        line: usize,
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: bad number {token}")]
    BadNumber { line: usize, token: String },
}

struct Tokens<'a> {
    toks: Vec<(usize, &'a str)>,
    at: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut toks = Vec::new();
        for (i, line) in text.lines().enumerate() {
            for t in line.split_whitespace() {
                toks.push((i + 1, t));
            }
        }
        Tokens { toks, at: 0 }
    }
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.at).map(|&(_, t)| t)
    }
    fn line(&self) -> usize {
        self.toks
            .get(self.at.min(self.toks.len().saturating_sub(1)))
            .map(|&(l, _)| l)
            .unwrap_or(0)
    }
    fn next(&mut self, expected: &'static str) -> Result<&'a str, GeomParseError> {
        let line = self.line();
        let t = self.toks.get(self.at).map(|&(_, t)| t).ok_or(GeomParseError::Unexpected {
            line,
            expected,
            found: "end of file".to_string(),
        })?;
        self.at += 1;
        Ok(t)
    }
    fn expect(&mut self, token: &'static str) -> Result<(), GeomParseError> {
        let line = self.line();
        let t = self.next(token)?;
        if t != token {
            return Err(GeomParseError::Unexpected {
                line,
                expected: token,
                found: t.to_string(),
            });
        }
        Ok(())
    }
    fn int(&mut self) -> Result<i64, GeomParseError> {
        let line = self.line();
        let t = self.next("number")?;
        t.parse().map_err(|_| GeomParseError::BadNumber {
            line,
            token: t.to_string(),
        })
    }
}

/// Parses LEF-lite text. Pin directions are not part of the format, so
/// every parsed pin reads as an input; parsed libraries serve geometry
/// queries, not extraction.
pub fn from_lef(text: &str) -> Result<LibraryGeometry, GeomParseError> {
    let mut t = Tokens::new(text);
    let mut layers = Vec::new();
    let mut macros = BTreeMap::new();
    while let Some(tok) = t.peek() {
        match tok {
            "LAYER" => {
                t.expect("LAYER")?;
                let name = t.next("layer name")?.to_string();
                t.expect(";")?;
                t.expect("DIRECTION")?;
                let dir = t.next("H or V")?;
                t.expect(";")?;
                t.expect("WIDTH")?;
                let width = t.int()?;
                t.expect(";")?;
                t.expect("PITCH")?;
                let pitch = t.int()?;
                t.expect(";")?;
                t.expect("END")?;
                layers.push(Layer {
                    name,
                    horizontal: dir == "H",
                    width,
                    pitch,
                });
            }
            "MACRO" => {
                t.expect("MACRO")?;
                let name = t.next("macro name")?.to_string();
                t.expect(";")?;
                t.expect("SIZE")?;
                let width = t.int()?;
                t.expect("BY")?;
                let height = t.int()?;
                t.expect(";")?;
                let mut pins = Vec::new();
                while t.peek() == Some("PIN") {
                    t.expect("PIN")?;
                    let pname = t.next("pin name")?.to_string();
                    t.expect("(")?;
                    let x = t.int()?;
                    let y = t.int()?;
                    t.expect(")")?;
                    t.expect(";")?;
                    pins.push(MacroPin {
                        name: pname,
                        x,
                        y,
                        is_input: true,
                    });
                }
                t.expect("END")?;
                macros.insert(
                    name.clone(),
                    MacroGeom {
                        name,
                        width,
                        height,
                        pins,
                    },
                );
            }
            other => {
                return Err(GeomParseError::Unexpected {
                    line: t.line(),
                    expected: "LAYER or MACRO",
                    found: other.to_string(),
                })
            }
        }
    }
    let variant = if layers.iter().any(|l| l.width > 1) {
        Variant::Fat
    } else {
        Variant::Differential
    };
    Ok(LibraryGeometry {
        layers,
        macros,
        variant,
    })
}

/// DEF-lite text for a routed design.
pub fn to_def(d: &RoutedDesign, lib: &LibraryGeometry) -> String {
    let mut out = String::new();
    out.push_str(&format!("DESIGN {} ;\n", d.placed.netlist.name));
    out.push_str(&format!(
        "DIEAREA ( 0 0 ) ( {} {} ) ;\n",
        d.placed.die.0, d.placed.die.1
    ));
    out.push_str(&format!("COMPONENTS {} ;\n", d.placed.components.len()));
    for c in &d.placed.components {
        out.push_str(&format!(
            "- {} {} + PLACED ( {} {} ) N ;\n",
            c.inst, c.cell, c.x, c.y
        ));
    }
    out.push_str("END COMPONENTS\n");
    out.push_str(&format!("NETS {} ;\n", d.nets.len()));
    for (name, route) in &d.nets {
        out.push_str(&format!("- {name}"));
        for (inst, pin) in &route.pins {
            out.push_str(&format!(" ( {inst} {pin} )"));
        }
        for s in &route.segments {
            out.push_str(&format!(
                " + ROUTED {} {} ( {} {} ) ( {} {} )",
                layer_name(lib, s.layer),
                s.width,
                s.x1,
                s.y1,
                s.x2,
                s.y2
            ));
        }
        for v in &route.vias {
            out.push_str(&format!(
                " VIA ( {} {} ) {} {}",
                v.x,
                v.y,
                layer_name(lib, 0),
                layer_name(lib, 1)
            ));
        }
        out.push_str(" ;\n");
    }
    out.push_str("END NETS\n");
    out
}

/// Parsed DEF-lite file: geometry only, no netlist semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct DefFile {
    pub design: String,
    pub die: (i64, i64),
    pub components: Vec<Component>,
    pub nets: Vec<DefNet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefNet {
    pub name: String,
    pub pins: Vec<(String, String)>,
    pub segments: Vec<(String, i64, i64, i64, i64, i64)>,
    pub vias: Vec<(i64, i64, String, String)>,
}

pub fn from_def(text: &str) -> Result<DefFile, GeomParseError> {
    let mut t = Tokens::new(text);
    t.expect("DESIGN")?;
    let design = t.next("design name")?.to_string();
    t.expect(";")?;
    t.expect("DIEAREA")?;
    t.expect("(")?;
    t.int()?;
    t.int()?;
    t.expect(")")?;
    t.expect("(")?;
    let dw = t.int()?;
    let dh = t.int()?;
    t.expect(")")?;
    t.expect(";")?;
    t.expect("COMPONENTS")?;
    let ncomp = t.int()?;
    t.expect(";")?;
    let mut components = Vec::new();
    for _ in 0..ncomp {
        t.expect("-")?;
        let inst = t.next("instance name")?.to_string();
        let cell = t.next("macro name")?.to_string();
        t.expect("+")?;
        t.expect("PLACED")?;
        t.expect("(")?;
        let x = t.int()?;
        let y = t.int()?;
        t.expect(")")?;
        t.expect("N")?;
        t.expect(";")?;
        components.push(Component { inst, cell, x, y });
    }
    t.expect("END")?;
    t.expect("COMPONENTS")?;
    t.expect("NETS")?;
    let nnets = t.int()?;
    t.expect(";")?;
    let mut nets = Vec::new();
    for _ in 0..nnets {
        t.expect("-")?;
        let name = t.next("net name")?.to_string();
        let mut pins = Vec::new();
        let mut segments = Vec::new();
        let mut vias = Vec::new();
        loop {
            match t.peek() {
                Some("(") => {
                    t.expect("(")?;
                    let inst = t.next("instance name")?.to_string();
                    let pin = t.next("pin name")?.to_string();
                    t.expect(")")?;
                    pins.push((inst, pin));
                }
                Some("+") => {
                    t.expect("+")?;
                    t.expect("ROUTED")?;
                    let layer = t.next("layer name")?.to_string();
                    let width = t.int()?;
                    t.expect("(")?;
                    let x1 = t.int()?;
                    let y1 = t.int()?;
                    t.expect(")")?;
                    t.expect("(")?;
                    let x2 = t.int()?;
                    let y2 = t.int()?;
                    t.expect(")")?;
                    segments.push((layer, width, x1, y1, x2, y2));
                }
                Some("VIA") => {
                    t.expect("VIA")?;
                    t.expect("(")?;
                    let x = t.int()?;
                    let y = t.int()?;
                    t.expect(")")?;
                    let l1 = t.next("layer name")?.to_string();
                    let l2 = t.next("layer name")?.to_string();
                    vias.push((x, y, l1, l2));
                }
                Some(";") => {
                    t.expect(";")?;
                    break;
                }
                other => {
                    return Err(GeomParseError::Unexpected {
                        line: t.line(),
                        expected: "pin, + ROUTED, VIA, or ;",
                        found: other.unwrap_or("end of file").to_string(),
                    })
                }
            }
        }
        nets.push(DefNet {
            name,
            pins,
            segments,
            vias,
        });
    }
    t.expect("END")?;
    t.expect("NETS")?;
    Ok(DefFile {
        design,
        die: (dw, dh),
        components,
        nets,
    })
}

/// Rebuilds a routed design from parsed DEF geometry plus the matching
/// netlist (for names, the clock, and row bookkeeping).
pub fn routed_from_def(
    def: &DefFile,
    netlist: Netlist,
    lib: &LibraryGeometry,
) -> Result<RoutedDesign, GeomParseError> {
    let mut rows: Vec<i64> = def.components.iter().map(|c| c.y).collect();
    rows.sort_unstable();
    rows.dedup();
    let layer_idx = |name: &str| -> u8 {
        lib.layers
            .iter()
            .position(|l| l.name == name)
            .unwrap_or(0) as u8
    };
    let mut nets = BTreeMap::new();
    for n in &def.nets {
        let route = NetRoute {
            pins: n.pins.clone(),
            segments: n
                .segments
                .iter()
                .map(|(l, w, x1, y1, x2, y2)| Segment {
                    layer: layer_idx(l),
                    width: *w,
                    x1: *x1,
                    y1: *y1,
                    x2: *x2,
                    y2: *y2,
                })
                .collect(),
            vias: n.vias.iter().map(|&(x, y, _, _)| Via { x, y }).collect(),
        };
        nets.insert(n.name.clone(), route);
    }
    Ok(RoutedDesign {
        placed: PlacedDesign {
            die: def.die,
            rows,
            components: def.components.clone(),
            netlist,
        },
        variant: lib.variant,
        nets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellLibrary;
    use crate::dualrail::{abstract_fat, substitute_cells};
    use crate::dut::{build_des_module, DutConfig};

    fn tiny_lib(macros: Vec<MacroGeom>) -> LibraryGeometry {
        LibraryGeometry {
            layers: layers(2),
            macros: macros.into_iter().map(|m| (m.name.clone(), m)).collect(),
            variant: Variant::Fat,
        }
    }

    fn unit_macro(name: &str, width: i64, height: i64, pins: &[(&str, i64, i64)]) -> MacroGeom {
        MacroGeom {
            name: name.to_string(),
            width,
            height,
            pins: pins
                .iter()
                .map(|&(n, x, y)| MacroPin {
                    name: n.to_string(),
                    x,
                    y,
                    is_input: true,
                })
                .collect(),
        }
    }

    fn des_fat() -> (Netlist, LibraryGeometry, LibraryGeometry, WddlLibrary) {
        let base = CellLibrary::standard();
        let wlib = WddlLibrary::derive(&base);
        let des = build_des_module(&DutConfig::default()).unwrap();
        let dual = substitute_cells(&des, &wlib).unwrap();
        let fat = abstract_fat(&dual, &wlib);
        let (fat_lib, diff_lib) = build_libraries(&wlib);
        (fat.netlist, fat_lib, diff_lib, wlib)
    }

    #[test]
    fn differential_pins_sit_one_over_from_fat_pins() {
        let base = CellLibrary::standard();
        let wlib = WddlLibrary::derive(&base);
        let (fat, diff) = build_libraries(&wlib);
        assert_eq!(fat.layers, diff.layers.iter().map(|l| Layer { width: 2, ..l.clone() }).collect::<Vec<_>>());
        assert_eq!(fat.layers[0].horizontal, true);
        assert_eq!(fat.layers[1].horizontal, false);
        assert_eq!(fat.wire_width(), 2);
        assert_eq!(diff.wire_width(), 1);
        let fand = &fat.macros["W_AND2"];
        let dand = &diff.macros["W_AND2"];
        assert_eq!((fand.width, fand.height), (dand.width, dand.height));
        for pin in &fand.pins {
            let t = dand.pin(&rail_name(&pin.name, true)).unwrap();
            let f = dand.pin(&rail_name(&pin.name, false)).unwrap();
            assert_eq!((t.x, t.y), (pin.x, pin.y));
            assert_eq!((f.x, f.y), (pin.x + 1, pin.y + 1));
        }
        let dreg = &diff.macros["W_DFF"];
        assert!(dreg.pin("CK").is_some(), "clock pin stays single-ended");
        assert!(dreg.pin("CK_t").is_none());
        assert!(diff.macros.contains_key("INV"), "base cells ride along");
        assert!(!fat.macros.contains_key("W_INV"), "rail swaps have no macro");
    }

    #[test]
    fn every_macro_pin_is_even_and_inside() {
        let base = CellLibrary::standard();
        let wlib = WddlLibrary::derive(&base);
        let (fat, _) = build_libraries(&wlib);
        for m in fat.macros.values() {
            assert!(m.width % 2 == 0);
            for p in &m.pins {
                assert_eq!(p.x % 2, 0, "{}.{}", m.name, p.name);
                assert_eq!(p.y % 2, 0);
                assert!(p.x + 1 < m.width, "{}.{} too close to the edge", m.name, p.name);
            }
        }
    }

    #[test]
    fn single_cell_die_comes_from_the_fill_formula() {
        let lib = tiny_lib(vec![unit_macro("X", 2, 2, &[("P", 0, 0)])]);
        let mut n = Netlist::new("one");
        let a = n.add_net("a").unwrap();
        n.add_instance("u1", "X", vec![("P".to_string(), a)]).unwrap();
        let p = place(&n, &lib, 1.0, 0.8).unwrap();
        // Area 4 at fill 0.8 needs die area of at least 5.
        assert!(p.die.0 * p.die.1 >= 5, "die {:?}", p.die);
        assert_eq!(p.components.len(), 1);
        let rows_used: HashSet<i64> = p.components.iter().map(|c| c.y).collect();
        assert_eq!(rows_used.len(), 1);
        let c = &p.components[0];
        assert!(c.x >= 0 && c.x + 2 <= p.die.0 && c.y >= 0 && c.y + 2 <= p.die.1);
    }

    #[test]
    fn empty_netlist_gets_a_minimal_die() {
        let lib = tiny_lib(vec![]);
        let n = Netlist::new("none");
        let p = place(&n, &lib, 1.0, 0.8).unwrap();
        assert_eq!(p.die, (2, 2));
        assert!(p.components.is_empty());
    }

    #[test]
    fn die_area_respects_the_fill_factor() {
        let lib = tiny_lib(vec![unit_macro("X", 2, 2, &[("P", 0, 0)])]);
        let mut n = Netlist::new("many");
        for i in 0..16 {
            let id = n.add_net(&format!("n{i}")).unwrap();
            n.add_instance(&format!("u{i}"), "X", vec![("P".to_string(), id)])
                .unwrap();
        }
        let p = place(&n, &lib, 1.0, 0.8).unwrap();
        assert!(p.die.0 * p.die.1 >= 80, "die {:?}", p.die);
        // Non-overlap and containment.
        let mut seen = HashSet::new();
        for c in &p.components {
            assert!(c.x >= 0 && c.x + 2 <= p.die.0);
            assert!(c.y >= 0 && c.y + 2 <= p.die.1);
            assert!(seen.insert((c.x, c.y)));
        }
    }

    #[test]
    fn oversized_cell_is_rejected() {
        let lib = tiny_lib(vec![
            unit_macro("X", 2, 2, &[("P", 0, 0)]),
            unit_macro("WIDE", 64, 2, &[("P", 0, 0)]),
        ]);
        let mut n = Netlist::new("wide");
        let a = n.add_net("a").unwrap();
        n.add_instance("u1", "WIDE", vec![("P".to_string(), a)]).unwrap();
        match place(&n, &lib, 1.0, 0.8) {
            Err(PlaceError::CellWiderThanDie { cell, .. }) => assert_eq!(cell, "WIDE"),
            other => panic!("expected width error, got {other:?}"),
        }
    }

    fn two_pin_design() -> (PlacedDesign, LibraryGeometry) {
        let lib = tiny_lib(vec![unit_macro("P2", 4, 2, &[("L", 0, 0), ("R", 2, 0)])]);
        let mut n = Netlist::new("pair");
        let w = n.add_net("w").unwrap();
        let u = n.add_net("u").unwrap();
        let v = n.add_net("v").unwrap();
        n.add_instance("u1", "P2", vec![("L".to_string(), u), ("R".to_string(), w)])
            .unwrap();
        n.add_instance("u2", "P2", vec![("L".to_string(), w), ("R".to_string(), v)])
            .unwrap();
        let placed = PlacedDesign {
            die: (16, 4),
            rows: vec![0],
            components: vec![
                Component {
                    inst: "u1".to_string(),
                    cell: "P2".to_string(),
                    x: 0,
                    y: 0,
                },
                Component {
                    inst: "u2".to_string(),
                    cell: "P2".to_string(),
                    x: 8,
                    y: 0,
                },
            ],
            netlist: n,
        };
        (placed, lib)
    }

    #[test]
    fn clear_straight_shot_is_one_manhattan_segment() {
        let (placed, lib) = two_pin_design();
        let routed = route(&placed, &lib, &RouteOpts::default()).unwrap();
        let w = &routed.nets["w"];
        assert_eq!(w.segments.len(), 1);
        // Pins at fine (2,0) and (8,0): Manhattan distance 6.
        assert_eq!(w.wire_length(), 6);
        assert!(w.vias.is_empty());
        assert!(check_drc(&routed, &lib).is_empty());
    }

    #[test]
    fn blocked_path_detours_past_the_obstacle() {
        let lib = tiny_lib(vec![
            unit_macro("P1", 2, 2, &[("P", 0, 0)]),
            unit_macro("V2", 2, 4, &[("D", 0, 0), ("U", 0, 2)]),
        ]);
        let mut n = Netlist::new("detour");
        let a = n.add_net("a").unwrap();
        let b = n.add_net("b").unwrap();
        n.add_instance("c1", "P1", vec![("P".to_string(), a)]).unwrap();
        n.add_instance("c2", "P1", vec![("P".to_string(), a)]).unwrap();
        n.add_instance("c3", "V2", vec![("D".to_string(), b), ("U".to_string(), b)])
            .unwrap();
        let placed = PlacedDesign {
            die: (22, 8),
            rows: vec![0],
            components: vec![
                Component { inst: "c1".to_string(), cell: "P1".to_string(), x: 0, y: 0 },
                Component { inst: "c2".to_string(), cell: "P1".to_string(), x: 20, y: 0 },
                Component { inst: "c3".to_string(), cell: "V2".to_string(), x: 8, y: 0 },
            ],
            netlist: n,
        };
        let routed = route(&placed, &lib, &RouteOpts::default()).unwrap();
        let a = &routed.nets["a"];
        // Pins at fine (0,0) and (20,0): Manhattan distance 20, but the
        // foreign pin column at x=8 forces a detour.
        assert!(a.wire_length() > 20, "length {}", a.wire_length());
        assert!(!a.vias.is_empty());
        assert!(check_drc(&routed, &lib).is_empty());
    }

    #[test]
    fn overfull_die_names_an_unroutable_net() {
        let lib = tiny_lib(vec![unit_macro(
            "T3",
            2,
            6,
            &[("P0", 0, 0), ("P1", 0, 2), ("P2", 0, 4)],
        )]);
        let mut n = Netlist::new("jam");
        let a = n.add_net("a").unwrap();
        let b = n.add_net("b").unwrap();
        let c = n.add_net("c").unwrap();
        n.add_instance(
            "u1",
            "T3",
            vec![("P0".to_string(), a), ("P1".to_string(), b), ("P2".to_string(), c)],
        )
        .unwrap();
        n.add_instance(
            "u2",
            "T3",
            vec![("P0".to_string(), b), ("P1".to_string(), c), ("P2".to_string(), a)],
        )
        .unwrap();
        let placed = PlacedDesign {
            die: (4, 8),
            rows: vec![0],
            components: vec![
                Component { inst: "u1".to_string(), cell: "T3".to_string(), x: 0, y: 0 },
                Component { inst: "u2".to_string(), cell: "T3".to_string(), x: 2, y: 0 },
            ],
            netlist: n,
        };
        match route(&placed, &lib, &RouteOpts::default()) {
            Err(RouteError::Unroutable { net }) => {
                assert!(["a", "b", "c"].contains(&net.as_str()), "net {net}")
            }
            other => panic!("expected congestion failure, got {other:?}"),
        }
    }

    #[test]
    fn drc_flags_shorts_opens_and_strays() {
        let (placed, lib) = two_pin_design();
        let mut routed = route(&placed, &lib, &RouteOpts::default()).unwrap();
        // Overlap: drop net u's wire onto net w's track.
        routed.nets.get_mut("u").unwrap().segments.push(Segment {
            layer: 0,
            width: 2,
            x1: 2,
            y1: 0,
            x2: 8,
            y2: 0,
        });
        let diags = check_drc(&routed, &lib);
        assert!(diags.iter().any(|d| d.kind == DrcKind::Overlap));
        // The stray segment also detaches from u's pin.
        assert!(diags.iter().any(|d| d.kind == DrcKind::Open && d.net == "u"));

        let mut routed2 = route(&placed, &lib, &RouteOpts::default()).unwrap();
        routed2.nets.get_mut("v").unwrap().segments.push(Segment {
            layer: 1,
            width: 2,
            x1: 40,
            y1: 0,
            x2: 40,
            y2: 2,
        });
        let diags2 = check_drc(&routed2, &lib);
        assert!(diags2.iter().any(|d| d.kind == DrcKind::OffGrid && d.net == "v"));
    }

    #[test]
    fn des_fat_design_routes_clean_and_reproducibly() {
        let (fat, fat_lib, _, _) = des_fat();
        let placed = place(&fat, &fat_lib, 1.0, 0.1).unwrap();
        let routed = route(&placed, &fat_lib, &RouteOpts::default()).unwrap();
        let diags = check_drc(&routed, &fat_lib);
        assert!(diags.is_empty(), "{:?}", diags.first());
        let clk = &routed.nets["clk"];
        assert!(clk.segments.is_empty(), "clock is ideal, never routed");
        assert!(!clk.pins.is_empty());

        let placed2 = place(&fat, &fat_lib, 1.0, 0.1).unwrap();
        let routed2 = route(&placed2, &fat_lib, &RouteOpts::default()).unwrap();
        assert_eq!(to_def(&routed, &fat_lib), to_def(&routed2, &fat_lib));
    }

    #[test]
    fn def_and_lef_survive_a_round_trip() {
        let (placed, lib) = two_pin_design();
        let routed = route(&placed, &lib, &RouteOpts::default()).unwrap();
        let def_text = to_def(&routed, &lib);
        let parsed = from_def(&def_text).unwrap();
        assert_eq!(parsed.design, "pair");
        assert_eq!(parsed.die, routed.placed.die);
        let rebuilt = routed_from_def(&parsed, routed.placed.netlist.clone(), &lib).unwrap();
        assert_eq!(to_def(&rebuilt, &lib), def_text);

        let base = CellLibrary::standard();
        let wlib = WddlLibrary::derive(&base);
        let (fat_lib, diff_lib) = build_libraries(&wlib);
        for l in [&fat_lib, &diff_lib] {
            let text = to_lef(l);
            let parsed = from_lef(&text).unwrap();
            assert_eq!(parsed.variant, l.variant);
            assert_eq!(parsed.layers, l.layers);
            assert_eq!(parsed.macros.len(), l.macros.len());
            for (name, m) in &l.macros {
                let pm = &parsed.macros[name];
                assert_eq!((pm.width, pm.height), (m.width, m.height));
                let pts: Vec<(i64, i64)> = pm.pins.iter().map(|p| (p.x, p.y)).collect();
                let ots: Vec<(i64, i64)> = m.pins.iter().map(|p| (p.x, p.y)).collect();
                assert_eq!(pts, ots);
            }
            assert_eq!(to_lef(&parsed), text);
        }
    }

    #[test]
    fn placement_keeps_connected_cells_on_nearby_rows() {
        let (fat, fat_lib, _, _) = des_fat();
        let placed = place(&fat, &fat_lib, 1.0, 0.5).unwrap();
        assert_eq!(placed.components.len(), fat.instances.len());
        let mut spans = Vec::new();
        for inst in &fat.instances {
            let c = placed.component(&inst.name).unwrap();
            let m = &fat_lib.macros[&c.cell];
            assert!(c.x >= 0 && c.x + m.width <= placed.die.0);
            assert!(c.y >= 0 && c.y + m.height <= placed.die.1);
            spans.push((c.y, c.x, c.x + m.width));
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[0].0 == w[1].0 {
                assert!(w[0].2 <= w[1].1, "row overlap: {:?} vs {:?}", w[0], w[1]);
            }
        }
    }
}
