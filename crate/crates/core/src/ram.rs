//! Spectral memory cells, random-access scheduling of multitone RAP events, and simulation of
//! schedules and multimode scenarios.
//!
//! Scheduling works on integer nanoseconds. A cell stored at `t_in` and recalled at `t_out` needs
//! a RAP pair whose starts are exactly `D = (t_out − t_in)/2` apart; only the first start (τ₁)
//! is free. One physical event may carry tones for several cells and may serve as RAP1 for one
//! cell and RAP2 for another.
//!
//! Simulation is done per cell in a frame centered on the cell, including only tones within
//! `neighbor_reach·Δ` of it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{build_grid, run_sequence, EnsembleError, EnsembleSpec, EnsembleTrace, Event, SequenceOptions};
use crate::pulse::{probe_fwhm_hz, synthesize, PulseError, PulseShape, PulseSpec, SampledEnvelope, TimeGrid};
use crate::real::{mhz, us};

/// Cells above this count are outside the supported regime.
pub const MAX_CELLS: usize = 16;

/// Search nodes shared by all orderings tried by [`schedule`].
const SEARCH_BUDGET: usize = 400_000;
const MIN_ORDER_BUDGET: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RamError {
    #[error("invalid cell {id}: {reason}")]
    InvalidCell { id: usize, reason: String },
    #[error("cells {a} and {b} are {separation_mhz:.3} MHz apart, closer than the guard spacing {guard_mhz:.3} MHz")]
    CellsTooClose {
        a: usize,
        b: usize,
        separation_mhz: f64,
        guard_mhz: f64,
    },
    #[error("request for unknown cell {0}")]
    UnknownCell(usize),
    #[error("more than one request for cell {0}")]
    DuplicateRequest(usize),
    #[error("too many cells: {0} (at most {MAX_CELLS})")]
    TooManyCells(usize),
    #[error("request for cell {cell} is infeasible: {reason}")]
    InfeasibleRequest { cell: usize, reason: String },
    #[error("request file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mode train collides with control events: {0}")]
    TrainCollision(String),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// A disjoint spectral band addressed by one RAP tone. Frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryCell {
    pub id: usize,
    pub center: f64,
    /// Swept span of the cell's tone.
    pub span: f64,
    /// Minimum spacing Δ to any other cell.
    pub guard: f64,
}

impl MemoryCell {
    /// `count` cells spaced by `delta` and centered on zero.
    pub fn comb(count: usize, delta: f64, span: f64) -> Vec<MemoryCell> {
        let mid = (count as f64 - 1.0) / 2.0;
        (0..count)
            .map(|i| MemoryCell {
                id: i,
                center: (i as f64 - mid) * delta,
                span,
                guard: delta,
            })
            .collect()
    }
}

/// Checks ids are unique, spans fit inside the guard and centers are at least Δ apart.
pub fn validate_cells(cells: &[MemoryCell]) -> Result<(), RamError> {
    if cells.len() > MAX_CELLS {
        return Err(RamError::TooManyCells(cells.len()));
    }
    let mut ids = BTreeSet::new();
    for c in cells {
        if !ids.insert(c.id) {
            return Err(RamError::InvalidCell {
                id: c.id,
                reason: "duplicate id".into(),
            });
        }
        if !(c.span > 0.0 && c.guard > 0.0) {
            return Err(RamError::InvalidCell {
                id: c.id,
                reason: "span and guard must be positive".into(),
            });
        }
        if c.span > c.guard * (1.0 + 1e-9) {
            return Err(RamError::InvalidCell {
                id: c.id,
                reason: format!(
                    "tone span {:.3} MHz exceeds the guard spacing {:.3} MHz",
                    c.span / mhz::<f64>(1.0),
                    c.guard / mhz::<f64>(1.0)
                ),
            });
        }
    }
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            let guard = a.guard.max(b.guard);
            let sep = (a.center - b.center).abs();
            if sep < guard * (1.0 - 1e-9) {
                return Err(RamError::CellsTooClose {
                    a: a.id,
                    b: b.id,
                    separation_mhz: sep / mhz::<f64>(1.0),
                    guard_mhz: guard / mhz::<f64>(1.0),
                });
            }
        }
    }
    Ok(())
}

/// Store at `t_in` (probe center), recall at `t_out` (echo center), both in ns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RamRequest {
    pub cell: usize,
    pub t_in_ns: i64,
    pub t_out_ns: i64,
}

impl RamRequest {
    pub fn from_us(cell: usize, t_in_us: f64, t_out_us: f64) -> Self {
        Self {
            cell,
            t_in_ns: (t_in_us * 1e3).round() as i64,
            t_out_ns: (t_out_us * 1e3).round() as i64,
        }
    }

    /// Rigid start offset between the cell's two RAP events.
    pub fn pair_offset_ns(&self) -> i64 {
        (self.t_out_ns - self.t_in_ns) / 2
    }
}

#[derive(Debug, Deserialize)]
struct RequestRow {
    cell: usize,
    t_in_us: f64,
    t_out_us: f64,
}

/// Parses `cell,t_in_us,t_out_us` lines. A header row with those names is required; lines
/// starting with `#` are skipped.
pub fn parse_requests<R: Read>(reader: R) -> Result<Vec<RamRequest>, RamError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| RamError::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let expected = ["cell", "t_in_us", "t_out_us"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(RamError::Parse {
            line: 1,
            reason: format!("expected header `cell,t_in_us,t_out_us`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize::<RequestRow>() {
        let row = rec.map_err(|e| RamError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        if !row.t_in_us.is_finite() || !row.t_out_us.is_finite() {
            return Err(RamError::Parse {
                line: out.len() + 2,
                reason: "times must be finite".into(),
            });
        }
        out.push(RamRequest::from_us(row.cell, row.t_in_us, row.t_out_us));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// RAP duration τ_R.
    pub tau_r_ns: i64,
    pub probe_ns: i64,
    /// Extra clearance around every probe and echo window. The default also covers the tails
    /// of a Gaussian probe, which extend to ±2 τ_probe.
    pub guard_ns: i64,
    /// Resolution of each cell's RAP1 start.
    pub grid_ns: i64,
    /// Shuffled orderings tried in addition to the fixed ones.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            tau_r_ns: 50_000,
            probe_ns: 2_000,
            guard_ns: 3_000,
            grid_ns: 1_000,
            restarts: 256,
            seed: 0,
        }
    }
}

impl SchedulerConfig {
    /// Half-width of the protected window around each t_in and t_out.
    pub fn window_ns(&self) -> i64 {
        self.probe_ns + self.guard_ns
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RamEvent {
    pub start_ns: i64,
    pub duration_ns: i64,
    /// Cell ids whose tone the event carries.
    pub tones: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub cell: usize,
    /// Indices into the event list.
    pub event1: usize,
    pub event2: usize,
    pub tau1_ns: i64,
    pub tau2_ns: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    /// An event of `cell` overlaps the protected window around `time_ns`.
    WindowCollision { cell: usize, start_ns: i64, time_ns: i64 },
    /// An event of `cell` overlaps another event.
    EventOverlap { cell: usize, start_ns: i64, other_start_ns: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RamSchedule {
    pub events: Vec<RamEvent>,
    pub assignments: Vec<Assignment>,
    pub violations: Vec<Violation>,
    pub feasible: bool,
}

/// JSON form: `{events:[{t_start_us, tones}], assignments, violations}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub events: Vec<EventReport>,
    pub assignments: Vec<AssignmentReport>,
    pub violations: Vec<Violation>,
    pub feasible: bool,
    pub event_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventReport {
    pub t_start_us: f64,
    pub duration_us: f64,
    pub tones: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssignmentReport {
    pub cell: usize,
    pub event1: usize,
    pub event2: usize,
    pub tau1_us: f64,
    pub tau2_us: f64,
}

impl RamSchedule {
    pub fn report(&self) -> ScheduleReport {
        ScheduleReport {
            events: self
                .events
                .iter()
                .map(|e| EventReport {
                    t_start_us: e.start_ns as f64 / 1e3,
                    duration_us: e.duration_ns as f64 / 1e3,
                    tones: e.tones.clone(),
                })
                .collect(),
            assignments: self
                .assignments
                .iter()
                .map(|a| AssignmentReport {
                    cell: a.cell,
                    event1: a.event1,
                    event2: a.event2,
                    tau1_us: a.tau1_ns as f64 / 1e3,
                    tau2_us: a.tau2_ns as f64 / 1e3,
                })
                .collect(),
            violations: self.violations.clone(),
            feasible: self.feasible,
            event_count: self.events.len(),
        }
    }

    pub fn assignment(&self, cell: usize) -> Option<&Assignment> {
        self.assignments.iter().find(|a| a.cell == cell)
    }
}

/// Per-request constants for the search.
#[derive(Debug, Clone, Copy)]
struct Req {
    cell: usize,
    t_in: i64,
    d: i64,
    lo: i64,
    hi: i64,
}

struct Problem<'a> {
    reqs: Vec<Req>,
    windows: Vec<i64>,
    cfg: &'a SchedulerConfig,
}

#[derive(Clone, Default)]
struct State {
    starts: BTreeMap<i64, Vec<usize>>,
    placed: Vec<Option<i64>>,
    violations: Vec<Violation>,
}

impl Problem<'_> {
    fn collides_window(&self, s: i64) -> Option<i64> {
        let w = self.cfg.window_ns();
        let e = s + self.cfg.tau_r_ns;
        self.windows.iter().copied().find(|&t| s < t + w && e > t - w)
    }

    fn overlaps(&self, st: &State, s: i64) -> Option<i64> {
        let tr = self.cfg.tau_r_ns;
        st.starts
            .range(s - tr + 1..s + tr)
            .map(|(k, _)| *k)
            .find(|&k| k != s)
    }

    /// Number of new events if request `r` starts RAP1 at `s1`, or `None` if it would collide.
    fn cost(&self, st: &State, r: &Req, s1: i64) -> Option<usize> {
        let mut new = 0;
        for s in [s1, s1 + r.d] {
            if st.starts.contains_key(&s) {
                continue;
            }
            if self.overlaps(st, s).is_some() || self.collides_window(s).is_some() {
                return None;
            }
            new += 1;
        }
        Some(new)
    }

    fn snap_up(&self, x: i64) -> i64 {
        let g = self.cfg.grid_ns;
        x.div_euclid(g) * g + if x.rem_euclid(g) == 0 { 0 } else { g }
    }

    fn aligned(&self, st: &State, r: &Req) -> Vec<i64> {
        let mut v: Vec<i64> = st
            .starts
            .keys()
            .flat_map(|&e| [e, e - r.d])
            .filter(|&s| s >= r.lo && s <= r.hi && s.rem_euclid(self.cfg.grid_ns) == 0)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Largest event saving any unplaced request could still get by aligning with `st`.
    fn potential(&self, st: &State, unplaced: &[usize]) -> usize {
        unplaced
            .iter()
            .map(|&i| {
                let r = &self.reqs[i];
                self.aligned(st, r)
                    .into_iter()
                    .filter_map(|s| self.cost(st, r, s))
                    .map(|c| 2 - c)
                    .max()
                    .unwrap_or(0)
            })
            .sum()
    }

    fn place(&self, st: &mut State, i: usize, s1: i64) {
        let r = &self.reqs[i];
        for s in [s1, s1 + r.d] {
            st.starts.entry(s).or_default().push(r.cell);
        }
        st.placed[i] = Some(s1);
    }

    /// Candidate RAP1 starts with no alignment: both ends of the cell's own range and points
    /// that line the new events up with the ranges of unplaced requests.
    fn anchors(&self, r: &Req, unplaced: &[usize]) -> Vec<i64> {
        let g = self.cfg.grid_ns;
        let mut raw = vec![r.lo, r.hi];
        for &j in unplaced {
            let o = &self.reqs[j];
            for x in [o.lo, o.hi, o.lo + o.d, o.hi + o.d] {
                raw.push(x);
                raw.push(x - r.d);
            }
        }
        let mut v: Vec<i64> = raw
            .into_iter()
            .flat_map(|x| [self.snap_up(x), x.div_euclid(g) * g])
            .filter(|&s| s >= r.lo && s <= r.hi)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn greedy(&self, order: &[usize]) -> State {
        let mut st = State {
            placed: vec![None; self.reqs.len()],
            ..State::default()
        };
        for (k, &i) in order.iter().enumerate() {
            let r = self.reqs[i];
            let unplaced = &order[k + 1..];
            let mut cands: Vec<(usize, i64)> = self
                .aligned(&st, &r)
                .into_iter()
                .chain(self.anchors(&r, unplaced))
                .filter_map(|s| self.cost(&st, &r, s).map(|c| (c, s)))
                .collect();
            if cands.is_empty() {
                // slide along the grid for the first collision-free start
                let mut s = self.snap_up(r.lo);
                while s <= r.hi {
                    if let Some(c) = self.cost(&st, &r, s) {
                        cands.push((c, s));
                        break;
                    }
                    s += self.cfg.grid_ns;
                }
            }
            if cands.is_empty() {
                let s = self.least_bad(&st, &r);
                self.record_violations(&mut st, &r, s);
                self.place(&mut st, i, s);
                continue;
            }
            let best_new = cands.iter().map(|c| c.0).min().unwrap_or(2);
            let mut best: Option<(usize, i64)> = None;
            for &(_, s) in cands.iter().filter(|c| c.0 == best_new) {
                let mut trial = st.clone();
                self.place(&mut trial, i, s);
                let p = self.potential(&trial, unplaced);
                best = match best {
                    Some((bp, bs)) if bp > p || (bp == p && bs <= s) => Some((bp, bs)),
                    _ => Some((p, s)),
                };
            }
            let (_, s) = best.expect("non-empty candidate set");
            self.place(&mut st, i, s);
        }
        st
    }

    /// Collision-free RAP1 starts for `r`: the greedy choice first (fewest new events, then most
    /// sharing left for unplaced cells, then earliest), then every other grid start by
    /// (new events, start).
    fn ranked(&self, st: &State, r: &Req, unplaced: &[usize]) -> Vec<(usize, i64)> {
        let mut pool: Vec<i64> = self.aligned(st, r);
        pool.extend(self.anchors(r, unplaced));
        pool.sort_unstable();
        pool.dedup();
        let scored: Vec<(usize, i64)> = pool.iter().filter_map(|&s| self.cost(st, r, s).map(|c| (c, s))).collect();
        let mut out = Vec::new();
        if let Some(min) = scored.iter().map(|c| c.0).min() {
            let mut tier: Vec<(usize, usize, i64)> = scored
                .iter()
                .filter(|c| c.0 == min)
                .map(|&(c, s)| {
                    let mut trial = st.clone();
                    trial.starts.entry(s).or_default();
                    trial.starts.entry(s + r.d).or_default();
                    (c, usize::MAX - self.potential(&trial, unplaced), s)
                })
                .collect();
            tier.sort_unstable_by_key(|t| (t.1, t.2));
            out.extend(tier.into_iter().map(|t| (t.0, t.2)));
        }
        let mut rest: Vec<(usize, i64)> = Vec::new();
        let mut s = self.snap_up(r.lo);
        while s <= r.hi {
            if !out.iter().any(|o| o.1 == s) {
                if let Some(c) = self.cost(st, r, s) {
                    rest.push((c, s));
                }
            }
            s += self.cfg.grid_ns;
        }
        rest.sort_unstable();
        out.extend(rest);
        out
    }

    /// Depth-first search over `order` starting from the greedy path, backtracking out of dead
    /// ends and pruning branches that cannot beat `best`.
    fn search(&self, order: &[usize], k: usize, st: &mut State, best: &mut Option<State>, budget: &mut usize) {
        if *budget == 0 {
            return;
        }
        *budget -= 1;
        if k == order.len() {
            let better = match best {
                None => true,
                Some(b) => {
                    (st.starts.len(), &st.placed) < (b.starts.len(), &b.placed)
                }
            };
            if better {
                *best = Some(st.clone());
            }
            return;
        }
        let i = order[k];
        let r = self.reqs[i];
        for (c, s) in self.ranked(st, &r, &order[k + 1..]) {
            if let Some(b) = best {
                if st.starts.len() + c >= b.starts.len() {
                    continue;
                }
            }
            let saved = st.clone();
            self.place(st, i, s);
            self.search(order, k + 1, st, best, budget);
            *st = saved;
            if *budget == 0 {
                return;
            }
        }
    }

    /// Grid start with the fewest collisions when none is clean.
    fn least_bad(&self, st: &State, r: &Req) -> i64 {
        let mut best = (usize::MAX, self.snap_up(r.lo));
        let mut s = self.snap_up(r.lo);
        while s <= r.hi {
            let bad = [s, s + r.d]
                .iter()
                .filter(|&&x| {
                    !st.starts.contains_key(&x) && (self.overlaps(st, x).is_some() || self.collides_window(x).is_some())
                })
                .count();
            if bad < best.0 {
                best = (bad, s);
            }
            s += self.cfg.grid_ns;
        }
        best.1
    }

    fn record_violations(&self, st: &mut State, r: &Req, s1: i64) {
        for s in [s1, s1 + r.d] {
            if st.starts.contains_key(&s) {
                continue;
            }
            if let Some(t) = self.collides_window(s) {
                st.violations.push(Violation::WindowCollision {
                    cell: r.cell,
                    start_ns: s,
                    time_ns: t,
                });
            }
            if let Some(o) = self.overlaps(st, s) {
                st.violations.push(Violation::EventOverlap {
                    cell: r.cell,
                    start_ns: s,
                    other_start_ns: o,
                });
            }
        }
    }
}

fn build_problem<'a>(
    requests: &[RamRequest],
    cells: &[MemoryCell],
    cfg: &'a SchedulerConfig,
) -> Result<Problem<'a>, RamError> {
    if cfg.tau_r_ns <= 0 || cfg.grid_ns <= 0 || cfg.probe_ns <= 0 || cfg.guard_ns < 0 {
        return Err(RamError::Config(
            "tau_R, grid and probe durations must be positive and the guard non-negative".into(),
        ));
    }
    validate_cells(cells)?;
    let mut seen = BTreeSet::new();
    let w = cfg.window_ns();
    let mut reqs = Vec::with_capacity(requests.len());
    for q in requests {
        if !cells.iter().any(|c| c.id == q.cell) {
            return Err(RamError::UnknownCell(q.cell));
        }
        if !seen.insert(q.cell) {
            return Err(RamError::DuplicateRequest(q.cell));
        }
        let d = q.pair_offset_ns();
        let lo = q.t_in_ns + w;
        let hi = q.t_in_ns + d - cfg.tau_r_ns - w;
        let lo_grid = lo.div_euclid(cfg.grid_ns) * cfg.grid_ns + if lo.rem_euclid(cfg.grid_ns) == 0 { 0 } else { cfg.grid_ns };
        if lo_grid > hi {
            return Err(RamError::InfeasibleRequest {
                cell: q.cell,
                reason: format!(
                    "t_out - t_in = {} us leaves no room for two {} us RAPs with {} us clearance around probe and echo",
                    (q.t_out_ns - q.t_in_ns) as f64 / 1e3,
                    cfg.tau_r_ns as f64 / 1e3,
                    w as f64 / 1e3
                ),
            });
        }
        reqs.push(Req {
            cell: q.cell,
            t_in: q.t_in_ns,
            d,
            lo,
            hi,
        });
    }
    let windows = requests.iter().flat_map(|q| [q.t_in_ns, q.t_out_ns]).collect();
    Ok(Problem { reqs, windows, cfg })
}

fn orderings(n: usize, cfg: &SchedulerConfig, reqs: &[Req]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n <= 6 {
        let mut idx: Vec<usize> = (0..n).collect();
        permutations(&mut idx, 0, &mut out);
        return out;
    }
    let base: Vec<usize> = (0..n).collect();
    let keyed = |f: &dyn Fn(&Req) -> i64| {
        let mut v = base.clone();
        v.sort_by_key(|&i| (f(&reqs[i]), i));
        v
    };
    for v in [
        keyed(&|r| r.t_in),
        keyed(&|r| r.lo),
        keyed(&|r| r.d),
        keyed(&|r| -r.d),
        keyed(&|r| r.hi - r.lo),
    ] {
        let mut rev = v.clone();
        rev.reverse();
        out.push(v);
        out.push(rev);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.restarts {
        let mut v = base.clone();
        v.shuffle(&mut rng);
        out.push(v);
    }
    out
}

fn permutations(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == v.len() {
        out.push(v.clone());
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, out);
        v.swap(k, i);
    }
}

/// Schedules the requests into as few RAP events as the greedy search finds. Every ordering of
/// the requests (or a fixed set plus seeded shuffles above six cells) is placed greedily: each
/// cell takes the RAP1 start that adds the fewest new events, then the one leaving the most
/// sharing for unplaced cells, then the earliest. When a cell is left with no collision-free
/// start the search backtracks into the other grid starts of earlier cells, within a fixed node
/// budget. Collisions with probe/echo windows or other events are avoided when possible and
/// otherwise reported.
pub fn schedule(
    requests: &[RamRequest],
    cells: &[MemoryCell],
    cfg: &SchedulerConfig,
) -> Result<RamSchedule, RamError> {
    let prob = build_problem(requests, cells, cfg)?;
    let n = prob.reqs.len();
    let orders = orderings(n, cfg, &prob.reqs);
    let per_order = (SEARCH_BUDGET / orders.len().max(1)).max(MIN_ORDER_BUDGET);
    let mut clean: Option<State> = None;
    for order in &orders {
        let mut st = State {
            placed: vec![None; n],
            ..State::default()
        };
        let mut budget = per_order;
        prob.search(order, 0, &mut st, &mut clean, &mut budget);
    }
    let st = match clean {
        Some(st) => st,
        None => {
            // no collision-free assignment found: keep the greedy result with the fewest violations
            let mut best: Option<(usize, usize, Vec<i64>, State)> = None;
            for order in &orders {
                let st = prob.greedy(order);
                let key_starts: Vec<i64> = st.placed.iter().map(|p| p.unwrap_or(i64::MAX)).collect();
                let key = (st.violations.len(), st.starts.len(), key_starts);
                let better = match &best {
                    None => true,
                    Some((v, e, s, _)) => (key.0, key.1, &key.2) < (*v, *e, s),
                };
                if better {
                    best = Some((key.0, key.1, key.2, st));
                }
            }
            best.map(|b| b.3).unwrap_or_default()
        }
    };
    let events: Vec<RamEvent> = st
        .starts
        .iter()
        .map(|(&s, cells)| {
            let mut tones = cells.clone();
            tones.sort_unstable();
            RamEvent {
                start_ns: s,
                duration_ns: cfg.tau_r_ns,
                tones,
            }
        })
        .collect();
    let index = |s: i64| events.iter().position(|e| e.start_ns == s).expect("event exists");
    let mut assignments: Vec<Assignment> = prob
        .reqs
        .iter()
        .zip(&st.placed)
        .filter_map(|(r, p)| {
            p.map(|s1| Assignment {
                cell: r.cell,
                event1: index(s1),
                event2: index(s1 + r.d),
                tau1_ns: s1 - r.t_in,
                tau2_ns: r.d - cfg.tau_r_ns,
            })
        })
        .collect();
    assignments.sort_by_key(|a| a.cell);
    Ok(RamSchedule {
        feasible: st.violations.is_empty(),
        violations: st.violations,
        events,
        assignments,
    })
}

/// Checks the structural invariants of a schedule: two events per cell at the rigid offset,
/// no overlapping events, no event inside a protected window.
pub fn check_schedule(
    sched: &RamSchedule,
    requests: &[RamRequest],
    cfg: &SchedulerConfig,
) -> Vec<String> {
    let mut issues = Vec::new();
    for w in sched.events.windows(2) {
        if w[1].start_ns < w[0].start_ns + w[0].duration_ns {
            issues.push(format!("events at {} and {} ns overlap", w[0].start_ns, w[1].start_ns));
        }
    }
    let win = cfg.window_ns();
    for q in requests {
        let Some(a) = sched.assignment(q.cell) else {
            issues.push(format!("cell {} unassigned", q.cell));
            continue;
        };
        let (e1, e2) = (&sched.events[a.event1], &sched.events[a.event2]);
        if e2.start_ns - e1.start_ns != q.pair_offset_ns() {
            issues.push(format!("cell {} pair offset broken", q.cell));
        }
        let count = sched.events.iter().filter(|e| e.tones.contains(&q.cell)).count();
        if count != 2 {
            issues.push(format!("cell {} appears in {count} events", q.cell));
        }
        for r in requests {
            for t in [r.t_in_ns, r.t_out_ns] {
                for e in [e1, e2] {
                    if e.start_ns < t + win && e.start_ns + e.duration_ns > t - win {
                        issues.push(format!("event at {} ns covers window at {t} ns", e.start_ns));
                    }
                }
            }
        }
    }
    issues.sort();
    issues.dedup();
    issues
}

/// Physical parameters for simulating cells. Times in seconds, frequencies in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsConfig {
    pub tau_r: f64,
    /// Probe template, centered on its cell; its center time is ignored.
    pub probe: PulseSpec<f64>,
    /// Peak Rabi frequency of every tone.
    pub rabi: f64,
    /// Bins per cell; `None` picks the smallest odd count whose revival time exceeds 2.2× the
    /// simulated span.
    pub atoms: Option<usize>,
    pub t2: f64,
    pub dt: Option<f64>,
    pub trace_dt: Option<f64>,
    /// Tones further than this many guard spacings from a cell are left out of its simulation.
    pub neighbor_reach: f64,
    pub crosstalk_threshold: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            tau_r: us::<f64>(50.0),
            probe: PulseSpec::probe_with_area(PulseShape::ProbeGaussian, 0.0, us::<f64>(2.0), 0.01),
            rabi: mhz::<f64>(0.35),
            atoms: None,
            t2: f64::INFINITY,
            dt: None,
            trace_dt: None,
            neighbor_reach: 1.5,
            crosstalk_threshold: 0.01,
        }
    }
}

/// Control event in seconds, carrying tones for the listed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEvent {
    pub start: f64,
    pub tones: Vec<usize>,
}

impl ControlEvent {
    pub fn from_schedule(sched: &RamSchedule) -> Vec<ControlEvent> {
        sched
            .events
            .iter()
            .map(|e| ControlEvent {
                start: e.start_ns as f64 * 1e-9,
                tones: e.tones.clone(),
            })
            .collect()
    }
}

/// Ensemble trace of one cell in its own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRun {
    pub cell: usize,
    pub trace: EnsembleTrace<f64>,
    pub atoms: usize,
    /// Indices of the control events that touched the cell.
    pub events_used: Vec<usize>,
}

impl PhysicsConfig {
    fn probe_fwhm(&self) -> Result<f64, RamError> {
        let mut unit = self.probe.clone();
        for t in &mut unit.tones {
            t.peak_rabi = 1.0;
        }
        Ok(probe_fwhm_hz(&unit)? * std::f64::consts::TAU)
    }

    fn trace_dt(&self) -> f64 {
        self.trace_dt.unwrap_or(self.probe.duration / 20.0)
    }
}

/// Simulates the atoms of `cell` probed at each of `t_in`, under every tone of `events` within
/// reach. With `include_own = false` the cell's own tones are dropped.
pub fn simulate_band(
    cell: &MemoryCell,
    cells: &[MemoryCell],
    t_in: &[f64],
    events: &[ControlEvent],
    phys: &PhysicsConfig,
    t_end: f64,
    include_own: bool,
) -> Result<BandRun, RamError> {
    let fwhm = phys.probe_fwhm()?;
    let window = cell.span + 4.0 * fwhm;
    let (p_lo, _) = phys.probe.at(0.0).support();
    let reach = phys.neighbor_reach * cell.guard * (1.0 + 1e-9);
    let mut relevant: Vec<(usize, Vec<(f64, f64)>)> = Vec::new();
    for (k, ev) in events.iter().enumerate() {
        let tones: Vec<(f64, f64)> = ev
            .tones
            .iter()
            .filter_map(|id| cells.iter().find(|c| c.id == *id))
            .filter(|c| (c.center - cell.center).abs() <= reach)
            .filter(|c| include_own || c.id != cell.id)
            .map(|c| (c.center - cell.center, c.span / phys.tau_r))
            .collect();
        if !tones.is_empty() && ev.start < t_end {
            relevant.push((k, tones));
        }
    }
    let first_event = relevant.first().map_or(f64::INFINITY, |r| events[r.0].start);
    let t_start = (t_in.iter().copied().fold(f64::INFINITY, f64::min) + p_lo).min(first_event);
    let span = t_end - t_start;
    let n = phys.atoms.unwrap_or_else(|| EnsembleSpec::auto_bins(window, span));
    // atoms are placed at offsets from the cell center (cell frame)
    let spec = EnsembleSpec::uniform(n, window).with_t2(phys.t2);
    let grid = build_grid(&spec, span)?;
    let f_edge = window / 2.0 / std::f64::consts::TAU;
    let f_tone = relevant
        .iter()
        .flat_map(|(_, t)| t.iter().map(|(d, r)| (d.abs() + r.abs() * phys.tau_r / 2.0) / std::f64::consts::TAU))
        .fold(0.0, f64::max);
    let dt = phys
        .dt
        .unwrap_or_else(|| (phys.probe.duration / 40.0).min(1.0 / (24.0 * f_tone.max(f_edge))));

    let mut timed: Vec<(f64, Event<f64>)> = Vec::new();
    for &t in t_in {
        let p = phys.probe.at(t);
        timed.push((p.support().0, Event::Probe(p)));
    }
    for (k, tones) in &relevant {
        let start = events[*k].start;
        let center = start + phys.tau_r / 2.0;
        let mut env: Option<SampledEnvelope<f64>> = None;
        for &(det, rate) in tones {
            let spec = PulseSpec::rap(center, phys.tau_r, phys.rabi, rate, det);
            let e = synthesize(&spec, TimeGrid::for_pulse(&spec, dt))?;
            env = Some(match env {
                None => e,
                Some(acc) => acc.add(&e)?,
            });
        }
        timed.push((start, Event::Envelope(env.expect("at least one tone"))));
    }
    timed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let events_list: Vec<Event<f64>> = timed.into_iter().map(|(_, e)| e).collect();
    let opts = SequenceOptions::new(dt)
        .with_span(t_start, t_end)
        .with_trace(phys.trace_dt());
    let res = run_sequence(&grid.atoms, &events_list, &opts)?;
    Ok(BandRun {
        cell: cell.id,
        trace: res.trace.expect("trace requested"),
        atoms: n,
        events_used: relevant.iter().map(|r| r.0).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub cell: usize,
    pub t_out_us: f64,
    pub echo_peak_us: f64,
    pub timing_ok: bool,
    pub on_target_energy: f64,
    pub off_target_energy: f64,
    pub crosstalk_ratio: f64,
    pub crosstalk_ok: bool,
    /// Foreign events included in the cell's simulation.
    pub foreign_events: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub cells: Vec<CellReport>,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Simulates every scheduled cell under all events within reach. The echo peak must lie within
/// τ_probe of `t_out`. Off-target energy is what a cell emits after its probe when only foreign
/// tones are applied, in excess of what it emits with no controls at all; it must stay below
/// `crosstalk_threshold` of the on-target echo energy.
pub fn verify_schedule(
    sched: &RamSchedule,
    requests: &[RamRequest],
    cells: &[MemoryCell],
    phys: &PhysicsConfig,
) -> Result<VerificationReport, RamError> {
    if !sched.feasible {
        return Err(RamError::Config("schedule is flagged infeasible".into()));
    }
    let events = ControlEvent::from_schedule(sched);
    let tp = phys.probe.duration;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for q in requests {
        let cell = cells
            .iter()
            .find(|c| c.id == q.cell)
            .ok_or(RamError::UnknownCell(q.cell))?;
        let t_in = q.t_in_ns as f64 * 1e-9;
        let t_out = q.t_out_ns as f64 * 1e-9;
        let t_end = t_out + 2.0 * tp + 2.0 * phys.trace_dt();
        let own = simulate_band(cell, cells, &[t_in], &events, phys, t_end, true)?;
        let hi = t_out + 2.0 * tp;
        let (peak_t, _) = own.trace.echo_peak(t_out - 2.0 * tp, hi)?;
        let on = own.trace.proxy_energy(t_out - 2.0 * tp, hi)?;
        let own_events: Vec<usize> = events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.tones.contains(&cell.id))
            .map(|(k, _)| k)
            .collect();
        let foreign: Vec<usize> = own.events_used.iter().copied().filter(|k| !own_events.contains(k)).collect();
        let off = if foreign.is_empty() {
            0.0
        } else {
            let f = simulate_band(cell, cells, &[t_in], &events, phys, t_end, false)?;
            let free = simulate_band(cell, cells, &[t_in], &[], phys, t_end, false)?;
            let (_, p_hi) = phys.probe.at(t_in).support();
            // the probe's own free decay is common to both runs
            (f.trace.proxy_energy(p_hi, hi)? - free.trace.proxy_energy(p_hi, hi)?).max(0.0)
        };
        let ratio = if on > 0.0 { off / on } else { f64::INFINITY };
        let timing_ok = (peak_t - t_out).abs() <= tp;
        let crosstalk_ok = ratio < phys.crosstalk_threshold;
        if !timing_ok {
            failures.push(format!(
                "cell {}: echo peak at {:.3} us, requested {:.3} us",
                cell.id,
                peak_t * 1e6,
                t_out * 1e6
            ));
        }
        if !crosstalk_ok {
            failures.push(format!(
                "cell {}: cross-talk ratio {:.4} from events {:?}",
                cell.id, ratio, foreign
            ));
        }
        reports.push(CellReport {
            cell: cell.id,
            t_out_us: t_out * 1e6,
            echo_peak_us: peak_t * 1e6,
            timing_ok,
            on_target_energy: on,
            off_target_energy: off,
            crosstalk_ratio: ratio,
            crosstalk_ok,
            foreign_events: foreign,
        });
    }
    Ok(VerificationReport {
        passed: failures.is_empty(),
        cells: reports,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultimodeKind {
    Temporal,
    Spectral,
    SpectroTemporal,
}

/// Tone-level recall patterns over three cells (ω₀−Δ, ω₀, ω₀+Δ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// (i) all tones stored and recalled together.
    Simultaneous,
    /// (ii) tones stored one after another and recalled in the same order.
    Fifo,
    /// (iii) the central tone recalled early, the outer two later in FIFO order.
    SelectiveEarly,
    /// (iv) each tone recalled by its own single-tone RAP: ω₀+Δ, then ω₀, then ω₀−Δ.
    OnDemand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodeConfig {
    pub kind: MultimodeKind,
    pub scenario: Scenario,
    /// Probes per cell for temporal and spectro-temporal trains.
    pub modes: usize,
    pub probe_spacing: f64,
    pub cells: Vec<MemoryCell>,
    pub phys: PhysicsConfig,
}

impl MultimodeConfig {
    /// 26 square 1 µs probes every 2 µs under a single 4 MHz RAP tone swept at 2π·80 MHz/ms.
    pub fn temporal_train() -> Self {
        let tau_r = mhz::<f64>(4.0) / crate::real::mhz_per_ms::<f64>(80.0);
        Self {
            kind: MultimodeKind::Temporal,
            scenario: Scenario::Simultaneous,
            modes: 26,
            probe_spacing: us::<f64>(2.0),
            cells: vec![MemoryCell {
                id: 0,
                center: 0.0,
                span: mhz::<f64>(4.0),
                guard: mhz::<f64>(4.0),
            }],
            phys: PhysicsConfig {
                tau_r,
                probe: PulseSpec::probe_with_area(PulseShape::ProbeSquare, 0.0, us::<f64>(1.0), 0.01),
                rabi: mhz::<f64>(0.5),
                ..PhysicsConfig::default()
            },
        }
    }

    /// Three cells at Δ = 2π·3.5 MHz with 1.5 MHz tones and paper RAP parameters.
    pub fn spectral(scenario: Scenario) -> Self {
        Self {
            kind: MultimodeKind::Spectral,
            scenario,
            modes: 1,
            probe_spacing: us::<f64>(6.0),
            cells: MemoryCell::comb(3, mhz::<f64>(3.5), mhz::<f64>(1.5)),
            phys: PhysicsConfig::default(),
        }
    }

    /// Three cells, each with a probe train at 10 µs spacing, stored and recalled together.
    pub fn spectro_temporal(modes: usize) -> Self {
        Self {
            kind: MultimodeKind::SpectroTemporal,
            modes,
            probe_spacing: us::<f64>(10.0),
            ..Self::spectral(Scenario::Simultaneous)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeResult {
    pub cell: usize,
    pub t_in_us: f64,
    pub expected_us: f64,
    pub echo_peak_us: f64,
    /// Energy-weighted mean time of the echo window; flat-topped echoes have no sharp peak.
    pub echo_centroid_us: f64,
    pub energy: f64,
    pub peak_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodeResult {
    pub modes: Vec<ModeResult>,
    /// Mode indices sorted by echo centroid.
    pub order: Vec<usize>,
    pub traces: Vec<BandRun>,
    pub events: Vec<ControlEvent>,
}

impl MultimodeResult {
    /// Echo energy of `cell` in `[lo, hi]` seconds.
    pub fn band_energy(&self, cell: usize, lo: f64, hi: f64) -> Option<f64> {
        let run = self.traces.iter().find(|r| r.cell == cell)?;
        run.trace.proxy_energy(lo, hi).ok()
    }

    /// True when echoes emerge in the order the modes were stored.
    pub fn is_fifo(&self) -> bool {
        let mut by_input: Vec<usize> = (0..self.modes.len()).collect();
        by_input.sort_by(|&a, &b| {
            self.modes[a]
                .t_in_us
                .partial_cmp(&self.modes[b].t_in_us)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        by_input == self.order
    }

    /// Largest deviation of successive echo-centroid spacings from the input spacings of the
    /// same cell, in µs.
    pub fn spacing_error_us(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for p in self.modes.windows(2) {
            if p[0].cell == p[1].cell {
                let out = p[1].echo_centroid_us - p[0].echo_centroid_us;
                let inp = p[1].t_in_us - p[0].t_in_us;
                worst = worst.max((out - inp).abs());
            }
        }
        worst
    }

    /// (max − min)/mean of the per-mode energies.
    pub fn energy_spread(&self) -> f64 {
        let e: Vec<f64> = self.modes.iter().map(|m| m.energy).collect();
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let max = e.iter().copied().fold(f64::MIN, f64::max);
        let min = e.iter().copied().fold(f64::MAX, f64::min);
        (max - min) / mean
    }
}

struct Plan {
    inputs: Vec<(usize, f64)>,
    events: Vec<ControlEvent>,
}

fn plan_multimode(cfg: &MultimodeConfig) -> Result<Plan, RamError> {
    let tr = cfg.phys.tau_r;
    let ids: Vec<usize> = cfg.cells.iter().map(|c| c.id).collect();
    match cfg.kind {
        MultimodeKind::Temporal => {
            let cell = ids[0];
            let inputs: Vec<(usize, f64)> = (0..cfg.modes).map(|k| (cell, k as f64 * cfg.probe_spacing)).collect();
            let last = inputs.last().map_or(0.0, |x| x.1);
            let s1 = last + cfg.probe_spacing.max(cfg.phys.probe.duration) + us::<f64>(2.0);
            // τ₂ must exceed τ₁ of the earliest mode and clear the last echo window
            let tau1_first = s1;
            let tau2 = tau1_first + us::<f64>(16.0);
            let s2 = s1 + tr + tau2;
            Ok(Plan {
                inputs,
                events: vec![
                    ControlEvent { start: s1, tones: vec![cell] },
                    ControlEvent { start: s2, tones: vec![cell] },
                ],
            })
        }
        MultimodeKind::Spectral | MultimodeKind::SpectroTemporal => {
            if cfg.cells.len() != 3 {
                return Err(RamError::Config("spectral scenarios use exactly three cells".into()));
            }
            let per_cell = if cfg.kind == MultimodeKind::Spectral { 1 } else { cfg.modes.max(1) };
            let staggered = cfg.scenario != Scenario::Simultaneous;
            let gap = cfg.probe_spacing;
            let mut inputs = Vec::new();
            // cell order of storage: low, center, high
            for (ci, &id) in ids.iter().enumerate() {
                for m in 0..per_cell {
                    let slot = if staggered { ci * per_cell + m } else { m };
                    inputs.push((id, slot as f64 * gap));
                }
            }
            let last = inputs.iter().map(|x| x.1).fold(0.0, f64::max);
            let clear: f64 = 2.0 * cfg.phys.probe.duration + us::<f64>(2.0);
            let s1: f64 = last + clear + us::<f64>(2.0);
            let tau1_first = s1;
            let base_tau2: f64 = tau1_first + us::<f64>(10.0);
            let d = tr + base_tau2;
            let all = ids.clone();
            let events = match cfg.scenario {
                Scenario::Simultaneous | Scenario::Fifo => vec![
                    ControlEvent { start: s1, tones: all.clone() },
                    ControlEvent { start: s1 + d, tones: all },
                ],
                Scenario::SelectiveEarly => {
                    let center_echo: f64 = inputs.iter().filter(|x| x.0 == ids[1]).map(|x| x.1).fold(0.0, f64::max) + 2.0 * d;
                    let s2b: f64 = (center_echo + clear).max(s1 + d + tr);
                    vec![
                        ControlEvent { start: s1, tones: all },
                        ControlEvent { start: s1 + d, tones: vec![ids[1]] },
                        ControlEvent { start: s2b, tones: vec![ids[0], ids[2]] },
                    ]
                }
                Scenario::OnDemand => {
                    let mut evs = vec![ControlEvent { start: s1, tones: all }];
                    let mut next = s1 + d;
                    let mut last_echo = f64::MIN;
                    for &id in [ids[2], ids[1], ids[0]].iter() {
                        let start = next.max(last_echo + clear);
                        evs.push(ControlEvent { start, tones: vec![id] });
                        let dd = start - s1;
                        let echo = inputs.iter().filter(|x| x.0 == id).map(|x| x.1).fold(0.0, f64::max) + 2.0 * dd;
                        last_echo = echo;
                        next = start + tr;
                    }
                    evs
                }
            };
            Ok(Plan { inputs, events })
        }
    }
}

/// Runs a multimode scenario and reports each stored mode's recall.
pub fn multimode_run(cfg: &MultimodeConfig) -> Result<MultimodeResult, RamError> {
    validate_cells(&cfg.cells)?;
    let plan = plan_multimode(cfg)?;
    let tp = cfg.phys.probe.duration;
    let tr = cfg.phys.tau_r;
    // echo of each mode: t_in + 2·(RAP2 start − RAP1 start) of its cell
    let mut expected = Vec::new();
    for &(cell, t) in &plan.inputs {
        let starts: Vec<f64> = plan.events.iter().filter(|e| e.tones.contains(&cell)).map(|e| e.start).collect();
        if starts.len() != 2 {
            return Err(RamError::Config(format!("cell {cell} has {} events", starts.len())));
        }
        expected.push(t + 2.0 * (starts[1] - starts[0]));
    }
    // trains and echoes must stay clear of every event
    let (p_lo, p_hi) = cfg.phys.probe.at(0.0).support();
    for (k, &(cell, t)) in plan.inputs.iter().enumerate() {
        for e in &plan.events {
            for (lo, hi, what) in [
                (t + p_lo, t + p_hi, "probe"),
                (expected[k] + p_lo, expected[k] + p_hi, "echo"),
            ] {
                if lo < e.start + tr && hi > e.start {
                    return Err(RamError::TrainCollision(format!(
                        "{what} of cell {cell} at {:.2} us overlaps the event at {:.2} us",
                        (lo + hi) / 2.0 * 1e6,
                        e.start * 1e6
                    )));
                }
            }
        }
    }
    for cell in &cfg.cells {
        let mut t: Vec<f64> = plan.inputs.iter().filter(|x| x.0 == cell.id).map(|x| x.1).collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        if let Some(p) = t.windows(2).find(|p| p[1] - p[0] < p_hi - p_lo) {
            return Err(RamError::TrainCollision(format!(
                "probes of cell {} at {:.2} and {:.2} us overlap",
                cell.id,
                p[0] * 1e6,
                p[1] * 1e6
            )));
        }
    }
    let half = (cfg.probe_spacing / 2.0).min(2.0 * tp);
    let mut traces = Vec::new();
    for cell in &cfg.cells {
        let t_in: Vec<f64> = plan.inputs.iter().filter(|x| x.0 == cell.id).map(|x| x.1).collect();
        if t_in.is_empty() {
            continue;
        }
        let t_end = plan
            .inputs
            .iter()
            .zip(&expected)
            .map(|(_, e)| *e)
            .fold(0.0, f64::max)
            + 2.0 * tp
            + 2.0 * cfg.phys.trace_dt();
        traces.push(simulate_band(cell, &cfg.cells, &t_in, &plan.events, &cfg.phys, t_end, true)?);
    }
    let mut modes = Vec::new();
    for (k, &(cell, t)) in plan.inputs.iter().enumerate() {
        let run = traces.iter().find(|r| r.cell == cell).expect("band simulated");
        let (lo, hi) = (expected[k] - half, expected[k] + half);
        let (pt, amp) = run.trace.echo_peak(lo, hi)?;
        let energy = run.trace.proxy_energy(lo, hi)?;
        let (mut m0, mut m1) = (0.0, 0.0);
        for (ti, p) in run.trace.t.iter().zip(&run.trace.proxy) {
            if *ti >= lo && *ti <= hi {
                m0 += p.norm_sqr();
                m1 += p.norm_sqr() * ti;
            }
        }
        modes.push(ModeResult {
            cell,
            t_in_us: t * 1e6,
            expected_us: expected[k] * 1e6,
            echo_peak_us: pt * 1e6,
            echo_centroid_us: if m0 > 0.0 { m1 / m0 * 1e6 } else { f64::NAN },
            energy,
            peak_amplitude: amp,
        });
    }
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| {
        modes[a]
            .echo_centroid_us
            .partial_cmp(&modes[b].echo_centroid_us)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(MultimodeResult {
        modes,
        order,
        traces,
        events: plan.events,
    })
}

/// Bundled 8-cell request set (µs): staggered stores and recalls that fit six shared events.
pub fn fixture_requests() -> Vec<RamRequest> {
    [
        (0, 95.0, 335.0),
        (1, 95.0, 455.0),
        (2, 155.0, 395.0),
        (3, 155.0, 515.0),
        (4, 215.0, 455.0),
        (5, 215.0, 575.0),
        (6, 275.0, 515.0),
        (7, 95.0, 575.0),
    ]
    .iter()
    .map(|&(c, a, b)| RamRequest::from_us(c, a, b))
    .collect()
}

/// Cells for [`fixture_requests`]: Δ = 2π·3.5 MHz, 1.5 MHz tone spans.
pub fn fixture_cells() -> Vec<MemoryCell> {
    MemoryCell::comb(8, mhz::<f64>(3.5), mhz::<f64>(1.5))
}
