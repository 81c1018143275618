//! Agent–entity graph: which entities each UAV senses, which UAVs it can
//! talk to, and the per-UAV observation features built from both.

use serde::{Deserialize, Serialize};

use crate::world::{CommMode, ObsMode, Vec2, WorldConfig, WorldState};

/// Width of [`EntityFeature::to_vec`].
pub const ENTITY_DIM: usize = 9;
/// Width of the DroneConnect self state `[px, py, vx, vy]`.
pub const CONNECT_SELF_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityKind {
    Node,
    Uav,
    Obstacle,
    Opponent,
}

impl EntityKind {
    fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self as usize] = 1.0;
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityRef {
    Node(usize),
    Uav(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityFeature {
    /// `(entity - observer) / arena_side`.
    pub relative_position: Vec2,
    /// Entity velocity divided by the UAV speed limit.
    pub velocity: Vec2,
    pub kind: EntityKind,
    pub weight: f64,
}

impl EntityFeature {
    pub fn to_vec(&self) -> [f64; ENTITY_DIM] {
        let k = self.kind.one_hot();
        [
            self.relative_position.x,
            self.relative_position.y,
            self.velocity.x,
            self.velocity.y,
            k[0],
            k[1],
            k[2],
            k[3],
            self.weight,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentObservation {
    /// Identifier of the agent in its environment.
    pub id: usize,
    pub self_state: Vec<f64>,
    pub sensed: Vec<EntityFeature>,
    pub sensed_ids: Vec<EntityRef>,
    /// Positions in [`ObservationSet::agents`] of the agents this one can
    /// exchange messages with. Never contains the agent itself.
    pub comm_neighbors: Vec<usize>,
}

/// Everything the decentralized policy may read at one timestep.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub agents: Vec<AgentObservation>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Undirected communication edges `(i, j)` with `i < j`.
    pub fn comm_edges(&self) -> Vec<[usize; 2]> {
        let mut edges = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            for &j in &a.comm_neighbors {
                if i < j {
                    edges.push([i, j]);
                }
            }
        }
        edges
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        self.agents.iter().map(|a| a.comm_neighbors.clone()).collect()
    }
}

/// Indices `j != i` with `|p_i - p_j| <= radius`, ascending.
pub fn radius_neighbors(positions: &[Vec2], i: usize, radius: f64) -> Vec<usize> {
    positions.iter().enumerate().filter(|(j, p)| *j != i && positions[i].dist(**p) <= radius).map(|(j, _)| j).collect()
}

/// Ground nodes sensed by UAV `i`: all of them under FO, those within the
/// sensing radius (inclusive) under PO.
pub fn sensed_set(state: &WorldState, i: usize, config: &WorldConfig) -> Vec<usize> {
    let p = state.uavs[i].pos;
    state
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| config.obs_mode == ObsMode::Full || n.pos.dist(p) <= config.sensing_radius)
        .map(|(j, _)| j)
        .collect()
}

/// Other UAVs exposed to UAV `i` as entities, under the same rule.
pub fn sensed_uavs(state: &WorldState, i: usize, config: &WorldConfig) -> Vec<usize> {
    match config.obs_mode {
        ObsMode::Full => (0..state.uavs.len()).filter(|j| *j != i).collect(),
        ObsMode::Partial => radius_neighbors(&state.uav_positions(), i, config.sensing_radius),
    }
}

/// Communication neighbors of UAV `i`, excluding `i`.
pub fn comm_set(state: &WorldState, i: usize, config: &WorldConfig) -> Vec<usize> {
    match config.comm_mode {
        CommMode::Unrestricted => (0..state.uavs.len()).filter(|j| *j != i).collect(),
        CommMode::Restricted => radius_neighbors(&state.uav_positions(), i, config.comm_radius),
    }
}

pub fn self_state(pos: Vec2, vel: Vec2, arena_side: f64, max_speed: f64) -> Vec<f64> {
    vec![pos.x / arena_side, pos.y / arena_side, vel.x / max_speed, vel.y / max_speed]
}

pub fn build_observations(state: &WorldState, config: &WorldConfig) -> ObservationSet {
    let side = config.arena_side;
    let vmax = config.max_speed;
    let agents = (0..state.uavs.len())
        .map(|i| {
            let me = state.uavs[i];
            let mut sensed = Vec::new();
            let mut sensed_ids = Vec::new();
            for j in sensed_set(state, i, config) {
                let n = &state.nodes[j];
                sensed.push(EntityFeature {
                    relative_position: (n.pos - me.pos) * (1.0 / side),
                    velocity: n.vel * (1.0 / vmax),
                    kind: EntityKind::Node,
                    weight: n.weight,
                });
                sensed_ids.push(EntityRef::Node(j));
            }
            for j in sensed_uavs(state, i, config) {
                let u = &state.uavs[j];
                sensed.push(EntityFeature {
                    relative_position: (u.pos - me.pos) * (1.0 / side),
                    velocity: u.vel * (1.0 / vmax),
                    kind: EntityKind::Uav,
                    weight: 1.0,
                });
                sensed_ids.push(EntityRef::Uav(j));
            }
            AgentObservation {
                id: i,
                self_state: self_state(me.pos, me.vel, side, vmax),
                sensed,
                sensed_ids,
                comm_neighbors: comm_set(state, i, config),
            }
        })
        .collect();
    ObservationSet { agents }
}

/// Disjoint-set forest with path compression and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Connected components of an undirected adjacency list. Components are
/// listed by their smallest member, each sorted ascending.
pub fn connected_components(adjacency: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adjacency.len();
    let mut uf = UnionFind::new(n);
    for (i, nbrs) in adjacency.iter().enumerate() {
        for &j in nbrs {
            uf.union(i, j);
        }
    }
    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        by_root.entry(uf.find(i)).or_default().push(i);
    }
    let mut comps: Vec<Vec<usize>> = by_root.into_values().collect();
    comps.sort_by_key(|c| c[0]);
    comps
}

/// Hop distance from `src` to every agent (`None` when unreachable).
pub fn hop_distances(adjacency: &[Vec<usize>], src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adjacency.len()];
    let mut queue = std::collections::VecDeque::new();
    dist[src] = Some(0);
    queue.push_back(src);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &adjacency[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{reset, GroundNode, Uav};
    use proptest::prelude::*;

    fn state_with(uavs: &[(f64, f64)], nodes: &[(f64, f64)]) -> (WorldState, WorldConfig) {
        let config = WorldConfig { num_uavs: uavs.len(), num_nodes: nodes.len(), ..WorldConfig::default() };
        let mut s = reset(&config).unwrap();
        s.uavs = uavs.iter().map(|&(x, y)| Uav { pos: Vec2::new(x, y), vel: Vec2::ZERO }).collect();
        s.nodes = nodes
            .iter()
            .map(|&(x, y)| GroundNode { pos: Vec2::new(x, y), vel: Vec2::ZERO, weight: 1.0, waypoint: Vec2::new(x, y) })
            .collect();
        (s, config)
    }

    #[test]
    fn fo_senses_every_node() {
        let (s, mut c) = state_with(&[(0.0, 0.0)], &[(99.0, 99.0), (50.0, 0.0)]);
        c.obs_mode = ObsMode::Full;
        assert_eq!(sensed_set(&s, 0, &c), vec![0, 1]);
    }

    #[test]
    fn po_far_nodes_and_boundary() {
        let (s, c) = state_with(&[(0.0, 0.0)], &[(99.0, 99.0), (60.0, 0.0)]);
        assert!(sensed_set(&s, 0, &c).is_empty());
        let (s, c) = state_with(&[(10.0, 10.0)], &[(10.0, 35.0)]);
        assert_eq!(sensed_set(&s, 0, &c), vec![0]);
    }

    #[test]
    fn comm_set_modes() {
        let (s, mut c) = state_with(&[(0.0, 0.0), (90.0, 0.0), (0.0, 90.0)], &[(1.0, 1.0)]);
        c.comm_mode = CommMode::Unrestricted;
        assert_eq!(comm_set(&s, 0, &c), vec![1, 2]);
        c.comm_mode = CommMode::Restricted;
        assert!(comm_set(&s, 0, &c).is_empty());
    }

    #[test]
    fn colocated_entity_has_zero_relative_position() {
        let (s, c) = state_with(&[(40.0, 40.0)], &[(40.0, 40.0)]);
        let obs = build_observations(&s, &c);
        assert_eq!(obs.agents[0].sensed[0].relative_position, Vec2::ZERO);
    }

    #[test]
    fn fo_uc_feature_table_for_two_by_two() {
        let (mut s, mut c) = state_with(&[(10.0, 20.0), (60.0, 20.0)], &[(10.0, 30.0), (80.0, 90.0)]);
        c.obs_mode = ObsMode::Full;
        c.comm_mode = CommMode::Unrestricted;
        s.uavs[1].vel = Vec2::new(5.0, 0.0);
        s.nodes[1].vel = Vec2::new(0.0, -2.0);
        let obs = build_observations(&s, &c);
        // assembled by hand: positions / 100, velocities / 10
        let a0 = &obs.agents[0];
        assert_eq!(a0.self_state, vec![0.1, 0.2, 0.0, 0.0]);
        assert_eq!(a0.sensed_ids, vec![EntityRef::Node(0), EntityRef::Node(1), EntityRef::Uav(1)]);
        let rows: Vec<[f64; ENTITY_DIM]> = a0.sensed.iter().map(EntityFeature::to_vec).collect();
        let expect = [
            [0.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            [0.7, 0.7, 0.0, -0.2, 1.0, 0.0, 0.0, 0.0, 1.0],
            [0.5, 0.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
        ];
        for (r, e) in rows.iter().zip(&expect) {
            for (a, b) in r.iter().zip(e) {
                assert!((a - b).abs() < 1e-12, "{rows:?}");
            }
        }
        let a1 = &obs.agents[1];
        assert_eq!(a1.self_state, vec![0.6, 0.2, 0.5, 0.0]);
        assert_eq!(a1.comm_neighbors, vec![0]);
        assert_eq!(a1.sensed.len(), 3);
        assert!((a1.sensed[0].relative_position.x + 0.5).abs() < 1e-12);
    }

    #[test]
    fn permuting_node_storage_permutes_sensed_entities() {
        let (s, c) = state_with(&[(50.0, 50.0)], &[(45.0, 50.0), (60.0, 55.0), (50.0, 40.0)]);
        let mut p = s.clone();
        p.nodes = vec![s.nodes[2], s.nodes[0], s.nodes[1]];
        let a = build_observations(&s, &c).agents.remove(0).sensed;
        let b = build_observations(&p, &c).agents.remove(0).sensed;
        assert_eq!(b, vec![a[2], a[0], a[1]]);
    }

    #[test]
    fn components_examples() {
        let full: Vec<Vec<usize>> = (0..4).map(|i| (0..4).filter(|j| *j != i).collect()).collect();
        assert_eq!(connected_components(&full), vec![vec![0, 1, 2, 3]]);
        let none = vec![vec![]; 3];
        assert_eq!(connected_components(&none).len(), 3);
        let (s, c) = state_with(&[(0.0, 0.0), (10.0, 0.0), (90.0, 90.0), (95.0, 90.0)], &[(1.0, 1.0)]);
        let obs = build_observations(&s, &c);
        assert_eq!(connected_components(&obs.adjacency()), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn hop_distances_on_a_path() {
        let adj = vec![vec![1], vec![0, 2], vec![1], vec![]];
        assert_eq!(hop_distances(&adj, 0), vec![Some(0), Some(1), Some(2), None]);
    }

    proptest! {
        #[test]
        fn graph_properties_on_random_states(seed in 0u64..10_000, rc in 5.0f64..60.0, extra in 0.0f64..30.0) {
            let c = WorldConfig { seed, num_uavs: 6, num_nodes: 8, comm_radius: rc, ..WorldConfig::default() };
            let s = reset(&c).unwrap();
            for i in 0..6 {
                let nc = comm_set(&s, i, &c);
                prop_assert!(!nc.contains(&i));
                for &j in &nc {
                    prop_assert!(comm_set(&s, j, &c).contains(&i));
                    prop_assert!(s.uavs[i].pos.dist(s.uavs[j].pos) <= rc);
                }
                let wider = WorldConfig { comm_radius: rc + extra, ..c.clone() };
                let nw = comm_set(&s, i, &wider);
                prop_assert!(nc.iter().all(|j| nw.contains(j)));
                let fo = WorldConfig { obs_mode: ObsMode::Full, ..c.clone() };
                let po_set = sensed_set(&s, i, &c);
                let fo_set = sensed_set(&s, i, &fo);
                prop_assert_eq!(fo_set.len(), 8);
                prop_assert!(po_set.iter().all(|j| fo_set.contains(j)));
                for f in build_observations(&s, &c).agents[i].sensed.iter() {
                    prop_assert!(f.relative_position.norm() * c.arena_side <= c.sensing_radius + 1e-9);
                }
            }
        }
    }
}
