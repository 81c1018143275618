//! Static placement view of coverage: choose one candidate grid point per
//! UAV to maximize covered node weight minus a relocation penalty.
//!
//! [`solve_exact`] is a depth-first branch and bound over UAVs in index
//! order; [`solve_greedy`] adds the best (UAV, point) pair one at a time.
//! Both break ties toward the lowest indices, so results are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Vec2, WorldConfig, WorldState};

/// Default node-expansion budget of the exact solver.
pub const DEFAULT_BUDGET: u64 = 20_000_000;

/// Improvements smaller than this are treated as ties.
const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageInstance {
    pub node_positions: Vec<Vec2>,
    pub node_weights: Vec<f64>,
    pub uav_origins: Vec<Vec2>,
    pub candidate_grid: Vec<Vec2>,
    pub coverage_radius: f64,
    pub relocation_weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimality {
    Exact,
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementSolution {
    pub placements: Vec<Vec2>,
    /// Index into the candidate grid for every UAV.
    pub grid_indices: Vec<usize>,
    pub objective: f64,
    pub covered_mask: Vec<bool>,
    pub optimality: Optimality,
}

impl CoverageInstance {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.candidate_grid.is_empty() {
            return Err(Error::Domain("candidate grid is empty".into()));
        }
        if self.node_weights.len() != self.node_positions.len() {
            return Err(Error::Dimension {
                op: "coverage instance weights",
                lhs: vec![self.node_positions.len()],
                rhs: vec![self.node_weights.len()],
            });
        }
        if self.uav_origins.len() != m {
            return Err(Error::Dimension {
                op: "coverage instance origins",
                lhs: vec![m],
                rhs: vec![self.uav_origins.len()],
            });
        }
        if self.node_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("node weights must be finite and >= 0".into()));
        }
        if !(self.relocation_weight >= 0.0) || !(self.coverage_radius > 0.0) {
            return Err(Error::Domain("relocation weight must be >= 0 and coverage radius > 0".into()));
        }
        Ok(())
    }

    /// Nodes within the coverage radius of candidate `g`.
    fn cover_sets(&self) -> Vec<Bits> {
        self.candidate_grid
            .iter()
            .map(|g| {
                let mut b = Bits::new(self.node_positions.len());
                for (j, u) in self.node_positions.iter().enumerate() {
                    if u.dist(*g) <= self.coverage_radius {
                        b.set(j);
                    }
                }
                b
            })
            .collect()
    }

    fn relocation(&self, uav: usize, g: usize) -> f64 {
        self.relocation_weight * self.candidate_grid[g].dist(self.uav_origins[uav])
    }

    /// Objective and coverage mask of an assignment, computed from scratch.
    pub fn evaluate(&self, grid_indices: &[usize]) -> (f64, Vec<bool>) {
        let placements: Vec<Vec2> = grid_indices.iter().map(|&g| self.candidate_grid[g]).collect();
        self.evaluate_placements(&placements)
    }

    /// `sum_j w_j z_j - relocation_weight * sum_i |p_i - p_i^0|`.
    pub fn evaluate_placements(&self, placements: &[Vec2]) -> (f64, Vec<bool>) {
        let mask: Vec<bool> =
            self.node_positions.iter().map(|u| placements.iter().any(|p| u.dist(*p) <= self.coverage_radius)).collect();
        let covered: f64 = mask.iter().zip(&self.node_weights).filter(|(c, _)| **c).map(|(_, w)| w).sum();
        let moved: f64 = placements.iter().zip(&self.uav_origins).map(|(p, o)| p.dist(*o)).sum();
        (covered - self.relocation_weight * moved, mask)
    }

    fn solution(&self, grid_indices: Vec<usize>, optimality: Optimality) -> PlacementSolution {
        let (objective, covered_mask) = self.evaluate(&grid_indices);
        PlacementSolution {
            placements: grid_indices.iter().map(|&g| self.candidate_grid[g]).collect(),
            grid_indices,
            objective,
            covered_mask,
            optimality,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn set(&mut self, j: usize) {
        self.0[j / 64] |= 1 << (j % 64);
    }

    fn union(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a | b).collect())
    }

    /// Weight of the members of `self` that are not in `base`.
    fn gain(&self, base: &Bits, weights: &[f64]) -> f64 {
        let mut total = 0.0;
        for (w, (a, b)) in self.0.iter().zip(&base.0).enumerate() {
            let mut fresh = a & !b;
            while fresh != 0 {
                let bit = fresh.trailing_zeros() as usize;
                total += weights[w * 64 + bit];
                fresh &= fresh - 1;
            }
        }
        total
    }
}

struct Search<'a> {
    inst: &'a CoverageInstance,
    m: usize,
    covers: Vec<Bits>,
    /// Cheapest possible relocation of UAVs `i..`.
    min_reloc_suffix: Vec<f64>,
    symmetric: bool,
    budget: u64,
    expanded: u64,
    best: f64,
    best_assign: Option<Vec<usize>>,
    assign: Vec<usize>,
    gains: Vec<f64>,
}

impl Search<'_> {
    fn dfs(&mut self, covered: &Bits, covered_w: f64, reloc: f64) -> Result<()> {
        self.expanded += 1;
        if self.expanded > self.budget {
            return Err(Error::BudgetExceeded { budget: self.budget });
        }
        let i = self.assign.len();
        if i == self.m {
            let value = covered_w - reloc;
            if self.best_assign.is_none() || value > self.best + TIE_EPS {
                self.best = value;
                self.best_assign = Some(self.assign.clone());
            }
            return Ok(());
        }
        let weights = &self.inst.node_weights;
        let start = if self.symmetric { self.assign.last().copied().unwrap_or(0) } else { 0 };
        let remaining = self.m - i;
        if self.best_assign.is_some() {
            // Optimistic completion: the `remaining` largest single-point gains,
            // capped by the uncovered weight, minus the cheapest relocation.
            self.gains.clear();
            self.gains.extend(self.covers[start..].iter().map(|c| c.gain(covered, weights)));
            self.gains.sort_unstable_by(|a, b| b.total_cmp(a));
            let uncovered = full_gain(covered, weights);
            let optimistic: f64 = self.gains.iter().take(remaining).sum::<f64>().min(uncovered);
            let bound = covered_w + optimistic - reloc - self.min_reloc_suffix[i];
            if bound <= self.best + TIE_EPS {
                return Ok(());
            }
        }
        for g in start..self.covers.len() {
            let gain = self.covers[g].gain(covered, weights);
            let next = self.covers[g].union(covered);
            self.assign.push(g);
            let r = self.inst.relocation(i, g);
            self.dfs(&next, covered_w + gain, reloc + r)?;
            self.assign.pop();
        }
        Ok(())
    }
}

/// Weight of every node not in `covered`.
fn full_gain(covered: &Bits, weights: &[f64]) -> f64 {
    weights.iter().enumerate().filter(|(j, _)| covered.0[j / 64] & (1 << (j % 64)) == 0).map(|(_, w)| w).sum()
}

/// Optimal grid-restricted placement of `m` UAVs.
///
/// When `relocation_weight` is zero the UAVs are interchangeable and only
/// nondecreasing index assignments are searched. Fails with
/// [`Error::BudgetExceeded`] after `budget` search-node expansions.
pub fn solve_exact_with_budget(inst: &CoverageInstance, m: usize, budget: u64) -> Result<PlacementSolution> {
    inst.validate(m)?;
    let min_reloc: Vec<f64> = (0..m)
        .map(|i| (0..inst.candidate_grid.len()).map(|g| inst.relocation(i, g)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut min_reloc_suffix = vec![0.0; m + 1];
    for i in (0..m).rev() {
        min_reloc_suffix[i] = min_reloc_suffix[i + 1] + min_reloc[i];
    }
    let mut search = Search {
        inst,
        m,
        covers: inst.cover_sets(),
        min_reloc_suffix,
        symmetric: inst.relocation_weight == 0.0,
        budget,
        expanded: 0,
        best: f64::NEG_INFINITY,
        best_assign: None,
        assign: Vec::with_capacity(m),
        gains: Vec::new(),
    };
    search.dfs(&Bits::new(inst.node_positions.len()), 0.0, 0.0)?;
    let assign = search.best_assign.expect("at least one complete assignment");
    Ok(inst.solution(assign, Optimality::Exact))
}

pub fn solve_exact(inst: &CoverageInstance, m: usize) -> Result<PlacementSolution> {
    solve_exact_with_budget(inst, m, DEFAULT_BUDGET)
}

/// Repeatedly assigns the unplaced UAV and grid point with the largest
/// marginal objective gain.
pub fn solve_greedy(inst: &CoverageInstance, m: usize) -> Result<PlacementSolution> {
    inst.validate(m)?;
    let covers = inst.cover_sets();
    let weights = &inst.node_weights;
    let mut covered = Bits::new(inst.node_positions.len());
    let mut assign: Vec<Option<usize>> = vec![None; m];
    for _ in 0..m {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, slot) in assign.iter().enumerate() {
            if slot.is_some() {
                continue;
            }
            for (g, c) in covers.iter().enumerate() {
                let gain = c.gain(&covered, weights) - inst.relocation(i, g);
                if best.is_none_or(|(b, _, _)| gain > b + TIE_EPS) {
                    best = Some((gain, i, g));
                }
            }
        }
        let (_, i, g) = best.expect("an unplaced UAV remains");
        assign[i] = Some(g);
        covered = covered.union(&covers[g]);
    }
    Ok(inst.solution(assign.into_iter().map(|g| g.unwrap()).collect(), Optimality::Greedy))
}

/// Centers of a `res × res` partition of the arena.
pub fn grid_points(arena_side: f64, res: usize) -> Vec<Vec2> {
    let cell = arena_side / res as f64;
    (0..res).flat_map(|r| (0..res).map(move |c| Vec2::new((c as f64 + 0.5) * cell, (r as f64 + 0.5) * cell))).collect()
}

/// Index of the grid point nearest to `p` (lowest index on ties).
pub fn snap_to_grid(p: Vec2, grid: &[Vec2]) -> usize {
    let mut best = 0;
    for (g, q) in grid.iter().enumerate() {
        if p.dist(*q) < p.dist(grid[best]) {
            best = g;
        }
    }
    best
}

/// Pure-coverage instance for a simulator snapshot: unit weights, no
/// relocation penalty, so the objective counts covered nodes.
pub fn snapshot_instance(state: &WorldState, config: &WorldConfig, grid_res: usize) -> CoverageInstance {
    CoverageInstance {
        node_positions: state.node_positions(),
        node_weights: vec![1.0; state.nodes.len()],
        uav_origins: state.uav_positions(),
        candidate_grid: grid_points(config.arena_side, grid_res),
        coverage_radius: config.coverage_radius,
        relocation_weight: 0.0,
    }
}

/// Best achievable covered-node ratio over grid placements of the snapshot's
/// UAVs.
pub fn coverage_upper_bound(state: &WorldState, config: &WorldConfig, grid_res: usize) -> Result<f64> {
    let inst = snapshot_instance(state, config, grid_res);
    let sol = solve_exact(&inst, state.uavs.len())?;
    Ok(sol.objective / state.nodes.len() as f64)
}
