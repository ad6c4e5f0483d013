//! Coarse queue/occupancy road model on an N×M grid.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Node {
    pub r: usize,
    pub c: usize,
}

impl Node {
    pub fn id(&self) -> String {
        format!("r{}c{}", self.r, self.c)
    }

    fn distance(&self, o: &Node) -> usize {
        self.r.abs_diff(o.r) + self.c.abs_diff(o.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    NorthSouth,
    EastWest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadParams {
    pub length_m: f64,
    /// Cars per segment at occupancy 1.
    pub capacity: u32,
    pub free_speed_mps: f64,
    /// Seconds between departures from one approach on green.
    pub headway_s: f64,
    /// All-red time at the start of each phase.
    pub lost_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    /// Green share of the north-south axis; east-west gets the rest.
    pub ns_split: f64,
    pub cycle_s: f64,
}

impl SignalPlan {
    pub fn fixed(split: f64, cycle_s: f64) -> Self {
        Self { ns_split: split, cycle_s }
    }

    pub fn ew_split(&self) -> f64 {
        1.0 - self.ns_split
    }

    fn green(&self, axis: Axis, t_s: f64, lost: f64) -> bool {
        let u = t_s.rem_euclid(self.cycle_s);
        let ns_end = self.ns_split * self.cycle_s;
        match axis {
            Axis::NorthSouth => u >= lost && u < ns_end,
            Axis::EastWest => u >= ns_end + lost && u < self.cycle_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub from: Node,
    pub to: Node,
    pub axis: Axis,
    /// Cars in entry order; the front is furthest along.
    pub cars: VecDeque<u64>,
    credit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Car {
    pub id: u64,
    pub origin: Node,
    pub dest: Node,
    pub participant: bool,
    /// Follows announcement boards when they are active.
    pub heeds_boards: bool,
    pub requested_at: f64,
    pub position_m: f64,
    pub segment: Option<usize>,
    pub idle_s: f64,
    pub free_flow_s: f64,
    pub done_at: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldStats {
    pub requested: u64,
    pub spawned: u64,
    pub despawned: u64,
    pub idle_car_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RoadWorld {
    pub rows: usize,
    pub cols: usize,
    pub params: RoadParams,
    pub segments: Vec<Segment>,
    index: BTreeMap<(Node, Node), usize>,
    pub cars: BTreeMap<u64, Car>,
    pending: VecDeque<u64>,
    pub plans: Vec<SignalPlan>,
    /// Occupancy figures drivers may route by; empty means nobody is advised.
    pub advice: BTreeMap<String, f64>,
    pub clock_s: f64,
    pub stats: WorldStats,
    finished: Vec<Car>,
    next_car: u64,
}

impl RoadWorld {
    pub fn new(rows: usize, cols: usize, params: RoadParams, plan: SignalPlan) -> Self {
        let mut segments = Vec::new();
        let mut index = BTreeMap::new();
        for r in 0..rows {
            for c in 0..cols {
                let from = Node { r, c };
                let mut next = Vec::new();
                if r > 0 {
                    next.push((Node { r: r - 1, c }, Axis::NorthSouth));
                }
                if r + 1 < rows {
                    next.push((Node { r: r + 1, c }, Axis::NorthSouth));
                }
                if c > 0 {
                    next.push((Node { r, c: c - 1 }, Axis::EastWest));
                }
                if c + 1 < cols {
                    next.push((Node { r, c: c + 1 }, Axis::EastWest));
                }
                for (to, axis) in next {
                    index.insert((from, to), segments.len());
                    segments.push(Segment {
                        id: format!("{}>{}", from.id(), to.id()),
                        from,
                        to,
                        axis,
                        cars: VecDeque::new(),
                        credit: 0.0,
                    });
                }
            }
        }
        Self {
            rows,
            cols,
            params,
            segments,
            index,
            cars: BTreeMap::new(),
            pending: VecDeque::new(),
            plans: vec![plan; rows * cols],
            advice: BTreeMap::new(),
            clock_s: 0.0,
            stats: WorldStats::default(),
            finished: Vec::new(),
            next_car: 0,
        }
    }

    pub fn node_index(&self, n: Node) -> usize {
        n.r * self.cols + n.c
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| Node { r, c }))
    }

    pub fn occupancy(&self, seg: usize) -> f64 {
        let s = &self.segments[seg];
        (s.cars.len() as f64 / f64::from(self.params.capacity.max(1))).min(1.0)
    }

    /// Segments entering `n`, split by axis.
    pub fn approaches(&self, n: Node) -> (Vec<usize>, Vec<usize>) {
        let mut ns = Vec::new();
        let mut ew = Vec::new();
        for (i, s) in self.segments.iter().enumerate().filter(|(_, s)| s.to == n) {
            match s.axis {
                Axis::NorthSouth => ns.push(i),
                Axis::EastWest => ew.push(i),
            }
        }
        (ns, ew)
    }

    /// Cars waiting at the stop line of each axis at `n`.
    pub fn queues(&self, n: Node) -> (usize, usize) {
        let l = self.params.length_m;
        let count = |segs: Vec<usize>| -> usize {
            segs.iter()
                .map(|&i| self.segments[i].cars.iter().filter(|id| self.cars[*id].position_m >= l).count())
                .sum()
        };
        let (ns, ew) = self.approaches(n);
        (count(ns), count(ew))
    }

    pub fn in_flight(&self) -> usize {
        self.cars.values().filter(|c| c.segment.is_some()).count()
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn finished(&self) -> &[Car] {
        &self.finished
    }

    /// A trip request; the car enters the network as soon as there is room.
    pub fn request(&mut self, origin: Node, dest: Node, participant: bool, heeds_boards: bool) -> u64 {
        self.next_car += 1;
        let id = self.next_car;
        let free_flow_s = origin.distance(&dest) as f64 * self.params.length_m / self.params.free_speed_mps;
        self.cars.insert(
            id,
            Car {
                id,
                origin,
                dest,
                participant,
                heeds_boards,
                requested_at: self.clock_s,
                position_m: 0.0,
                segment: None,
                idle_s: 0.0,
                free_flow_s,
                done_at: None,
            },
        );
        self.stats.requested += 1;
        if origin == dest {
            self.finish(id);
        } else {
            self.pending.push_back(id);
        }
        id
    }

    fn finish(&mut self, id: u64) {
        let mut car = self.cars.remove(&id).expect("finishing a known car");
        car.done_at = Some(self.clock_s);
        car.segment = None;
        self.finished.push(car);
    }

    fn segment_time(&self, seg: usize, occ: f64) -> f64 {
        let _ = seg;
        self.params.length_m / (self.params.free_speed_mps * (1.0 - occ).max(0.05))
    }

    /// Next segment for a car standing at `at`.
    fn route(&self, car: &Car, at: Node) -> usize {
        let d = car.dest;
        let vertical = (d.r != at.r).then(|| Node { r: if d.r > at.r { at.r + 1 } else { at.r - 1 }, c: at.c });
        let horizontal = (d.c != at.c).then(|| Node { r: at.r, c: if d.c > at.c { at.c + 1 } else { at.c - 1 } });
        let seg = |n: Node| self.index[&(at, n)];
        match (vertical, horizontal) {
            (Some(v), None) => seg(v),
            (None, Some(h)) => seg(h),
            (Some(v), Some(h)) => {
                let (sv, sh) = (seg(v), seg(h));
                let static_pick = if at.r.abs_diff(d.r) >= at.c.abs_diff(d.c) { sv } else { sh };
                let advised = (car.participant || car.heeds_boards) && !self.advice.is_empty();
                if !advised {
                    return static_pick;
                }
                let est = |s: usize| self.advice.get(&self.segments[s].id).copied();
                match (est(sv), est(sh)) {
                    (Some(a), Some(b)) => {
                        let (ta, tb) = (self.segment_time(sv, a), self.segment_time(sh, b));
                        if (ta - tb).abs() < 1e-9 {
                            static_pick
                        } else if ta < tb {
                            sv
                        } else {
                            sh
                        }
                    }
                    _ => static_pick,
                }
            }
            (None, None) => unreachable!("routing a car that has arrived"),
        }
    }

    fn has_room(&self, seg: usize) -> bool {
        (self.segments[seg].cars.len() as u32) < self.params.capacity
    }

    fn enter(&mut self, id: u64, seg: usize) {
        self.segments[seg].cars.push_back(id);
        let c = self.cars.get_mut(&id).expect("entering a known car");
        c.segment = Some(seg);
        c.position_m = 0.0;
    }

    /// Advances the world by `dt_s` seconds.
    pub fn step(&mut self, dt_s: f64) {
        assert!(dt_s > 0.0, "step needs a positive dt");
        let l = self.params.length_m;
        let lost = self.params.lost_time_s;
        let mut moved: BTreeMap<u64, bool> = BTreeMap::new();

        // Intersections discharge queued heads.
        for seg in 0..self.segments.len() {
            loop {
                let Some(&head) = self.segments[seg].cars.front() else { break };
                if self.cars[&head].position_m < l {
                    break;
                }
                let at = self.segments[seg].to;
                if self.cars[&head].dest == at {
                    self.segments[seg].cars.pop_front();
                    self.stats.despawned += 1;
                    self.finish(head);
                    continue;
                }
                break;
            }
            let s = &self.segments[seg];
            let plan = self.plans[self.node_index(s.to)];
            if !plan.green(s.axis, self.clock_s, lost) {
                self.segments[seg].credit = 0.0;
                continue;
            }
            let credit = (self.segments[seg].credit + dt_s / self.params.headway_s).min(1.0 + dt_s / self.params.headway_s);
            self.segments[seg].credit = credit;
            while self.segments[seg].credit >= 1.0 {
                let Some(&head) = self.segments[seg].cars.front() else { break };
                if self.cars[&head].position_m < l || moved.contains_key(&head) {
                    break;
                }
                let at = self.segments[seg].to;
                let next = self.route(&self.cars[&head], at);
                if !self.has_room(next) {
                    break;
                }
                self.segments[seg].cars.pop_front();
                self.enter(head, next);
                moved.insert(head, true);
                self.segments[seg].credit -= 1.0;
            }
        }

        // Waiting trips enter where there is room.
        let waiting: Vec<u64> = self.pending.drain(..).collect();
        for id in waiting {
            let origin = self.cars[&id].origin;
            let first = self.route(&self.cars[&id], origin);
            if self.has_room(first) {
                self.enter(id, first);
                self.stats.spawned += 1;
                moved.insert(id, true);
            } else {
                self.pending.push_back(id);
            }
        }

        // Cars roll at a speed scaled by their segment's occupancy.
        for seg in 0..self.segments.len() {
            let speed = self.params.free_speed_mps * (1.0 - self.occupancy(seg));
            let ids: Vec<u64> = self.segments[seg].cars.iter().copied().collect();
            for id in ids {
                let c = self.cars.get_mut(&id).expect("segment cars exist");
                let before = c.position_m;
                c.position_m = (c.position_m + speed * dt_s).min(l);
                let advanced = c.position_m - before;
                if advanced < 0.1 * self.params.free_speed_mps * dt_s && !moved.contains_key(&id) {
                    c.idle_s += dt_s;
                    self.stats.idle_car_seconds += dt_s;
                }
            }
        }
        for id in &self.pending {
            self.cars.get_mut(id).expect("pending cars exist").idle_s += dt_s;
            self.stats.idle_car_seconds += dt_s;
        }
        self.clock_s += dt_s;
    }
}
