//! Budget-constrained token allocation across a batch.
//!
//! Four strategies over the same problem shape (one score row per sample,
//! one column per candidate length):
//!
//! * `Fixed` gives every sample the target `N_b`.
//! * `Ilp` minimizes the total score subject to exactly one candidate per
//!   sample and an exact batch total of `B * N_b`. The problem is a
//!   multiple-choice knapsack with an equality budget and is solved exactly
//!   by dynamic programming over (sample, consumed budget); no external
//!   solver is involved, so results are deterministic and reproducible.
//! * `BiThr` binary-searches a global score threshold; each sample takes
//!   the smallest candidate whose score drops strictly below it.
//! * `BiDelta` runs the same search over consecutive-difference (marginal
//!   improvement) curves.
//!
//! Objectives are accumulated by folding chosen scores from the last
//! sample to the first. The DP's suffix values use the same expression
//! tree, so DP optima and brute-force optima over identical instances
//! compare bit-for-bit equal, which the exhaustive verifier relies on.

use crate::error::{Error, Result};

/// One allocation instance: per-sample score curves over a shared grid and
/// the per-sample token target.
#[derive(Debug, Clone)]
pub struct AllocationProblem {
    /// `B x |grid|`, lower is better.
    pub scores: Vec<Vec<f64>>,
    /// Strictly increasing candidate token lengths.
    pub grid: Vec<usize>,
    /// Average tokens per sample; the batch total is `B * n_b`.
    pub n_b: usize,
}

impl AllocationProblem {
    pub fn new(scores: Vec<Vec<f64>>, grid: Vec<usize>, n_b: usize) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidParam("batch must hold at least one sample".into()));
        }
        if grid.is_empty() {
            return Err(Error::InvalidParam("candidate grid is empty".into()));
        }
        for pair in grid.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidParam(
                    "candidate grid must be strictly increasing".into(),
                ));
            }
        }
        for (i, row) in scores.iter().enumerate() {
            if row.len() != grid.len() {
                return Err(Error::ShapeMismatch(format!(
                    "score row {i} has {} entries, grid has {}",
                    row.len(),
                    grid.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParam(format!("score row {i} holds non-finite values")));
            }
        }
        if n_b < grid[0] || n_b > *grid.last().unwrap() {
            return Err(Error::InvalidParam(format!(
                "target {n_b} outside grid range [{}, {}]",
                grid[0],
                grid.last().unwrap()
            )));
        }
        Ok(AllocationProblem { scores, grid, n_b })
    }

    pub fn batch(&self) -> usize {
        self.scores.len()
    }

    fn grid_index(&self, tokens: usize) -> Option<usize> {
        self.grid.binary_search(&tokens).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Fixed,
    BiThr,
    BiDelta,
    Ilp,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Fixed, Strategy::BiThr, Strategy::BiDelta, Strategy::Ilp];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Fixed => "fixed",
            Strategy::BiThr => "bithr",
            Strategy::BiDelta => "bidelta",
            Strategy::Ilp => "ilp",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "fixed" => Ok(Strategy::Fixed),
            "bithr" => Ok(Strategy::BiThr),
            "bidelta" => Ok(Strategy::BiDelta),
            "ilp" => Ok(Strategy::Ilp),
            other => Err(Error::InvalidParam(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Chosen token counts for the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub tokens: Vec<usize>,
    pub strategy: Strategy,
    /// Total of the chosen scores (right-fold).
    pub objective: f64,
    pub realized_budget: usize,
}

/// Default iteration count for the binary-search strategies.
pub const DEFAULT_SEARCH_ITERS: usize = 30;

/// Fold chosen scores from the last sample to the first. This matches the
/// suffix construction of the ILP dynamic program term for term.
fn fold_objective(problem: &AllocationProblem, tokens: &[usize]) -> f64 {
    let mut obj = 0.0;
    for (row, &tok) in problem.scores.iter().zip(tokens).rev() {
        let idx = problem.grid.binary_search(&tok).expect("token on grid");
        obj = row[idx] + obj;
    }
    obj
}

/// Every sample takes exactly `N_b` tokens.
pub fn allocate_fixed(problem: &AllocationProblem) -> Result<Allocation> {
    if problem.grid_index(problem.n_b).is_none() {
        return Err(Error::InvalidParam(format!(
            "fixed target {} is not on the candidate grid",
            problem.n_b
        )));
    }
    let tokens = vec![problem.n_b; problem.batch()];
    let objective = fold_objective(problem, &tokens);
    Ok(Allocation {
        tokens,
        strategy: Strategy::Fixed,
        objective,
        realized_budget: problem.n_b * problem.batch(),
    })
}

/// Exact totals reachable by summing one grid value per sample.
fn reachable_totals(problem: &AllocationProblem) -> Vec<bool> {
    let max_total = problem.batch() * problem.grid.last().unwrap();
    let mut reach = vec![false; max_total + 1];
    reach[0] = true;
    for _ in 0..problem.batch() {
        let mut next = vec![false; max_total + 1];
        for (w, &ok) in reach.iter().enumerate() {
            if !ok {
                continue;
            }
            for &g in &problem.grid {
                if w + g <= max_total {
                    next[w + g] = true;
                }
            }
        }
        reach = next;
    }
    reach
}

fn infeasible_error(problem: &AllocationProblem, requested: usize) -> Error {
    let reach = reachable_totals(problem);
    let nearest_below = (0..requested.min(reach.len())).rev().find(|&w| reach[w]);
    let nearest_above = (requested + 1..reach.len()).find(|&w| reach[w]);
    Error::InfeasibleBudget { requested, nearest_below, nearest_above }
}

/// Exact multiple-choice knapsack: minimize total score with one candidate
/// per sample and `sum(tokens) == B * N_b`. Ties break to the
/// lexicographically smallest token vector.
pub fn allocate_ilp(problem: &AllocationProblem) -> Result<Allocation> {
    allocate_ilp_with(problem, false)
}

/// ILP with an optional relaxed budget: when `relax` is set the constraint
/// becomes `sum(tokens) <= B * N_b`, taking the highest total usage among
/// score-optimal totals.
pub fn allocate_ilp_with(problem: &AllocationProblem, relax: bool) -> Result<Allocation> {
    let b = problem.batch();
    let budget = b * problem.n_b;
    // suffix[k][w]: minimal cost of assigning samples k.. with exactly w
    // tokens; INFINITY where unreachable.
    let width = budget + 1;
    let mut suffix = vec![f64::INFINITY; (b + 1) * width];
    suffix[b * width] = 0.0;
    for k in (0..b).rev() {
        for w in 0..width {
            let mut best = f64::INFINITY;
            for (gi, &g) in problem.grid.iter().enumerate() {
                if g > w {
                    break;
                }
                let below = suffix[(k + 1) * width + (w - g)];
                if below.is_finite() {
                    let cost = problem.scores[k][gi] + below;
                    if cost < best {
                        best = cost;
                    }
                }
            }
            suffix[k * width + w] = best;
        }
    }

    let start_w = if relax {
        // Highest-usage total among the score-optimal reachable totals.
        let mut best_w = None;
        let mut best_cost = f64::INFINITY;
        for w in 0..width {
            let cost = suffix[w];
            if cost.is_finite() && (cost < best_cost || (cost == best_cost && Some(w) > best_w)) {
                best_cost = cost;
                best_w = Some(w);
            }
        }
        best_w.ok_or_else(|| infeasible_error(problem, budget))?
    } else {
        if !suffix[budget].is_finite() {
            return Err(infeasible_error(problem, budget));
        }
        budget
    };

    // Greedy front-to-back reconstruction; picking the smallest grid value
    // that preserves optimality yields the lexicographically smallest vector.
    let mut tokens = Vec::with_capacity(b);
    let mut w = start_w;
    for k in 0..b {
        let target = suffix[k * width + w];
        let mut chosen = None;
        for (gi, &g) in problem.grid.iter().enumerate() {
            if g > w {
                break;
            }
            let below = suffix[(k + 1) * width + (w - g)];
            if below.is_finite() && problem.scores[k][gi] + below == target {
                chosen = Some(g);
                break;
            }
        }
        let g = chosen.expect("reconstruction follows finite DP values");
        tokens.push(g);
        w -= g;
    }
    debug_assert_eq!(w, 0);

    let objective = fold_objective(problem, &tokens);
    Ok(Allocation {
        tokens,
        strategy: Strategy::Ilp,
        objective,
        realized_budget: start_w,
    })
}

/// Smallest candidate whose score drops strictly below the threshold;
/// falls back to the largest candidate when none qualifies.
fn first_below(curve: &[f64], grid: &[usize], threshold: f64) -> usize {
    for (i, &s) in curve.iter().enumerate() {
        if s < threshold {
            return grid[i];
        }
    }
    *grid.last().unwrap()
}

fn binary_search_allocate(
    problem: &AllocationProblem,
    curves: &[Vec<f64>],
    curve_grid: &[usize],
    max_iters: usize,
    strategy: Strategy,
) -> Result<Allocation> {
    if max_iters == 0 {
        return Err(Error::InvalidParam("max_iters must be at least 1".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for curve in curves {
        for &s in curve {
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        // Single-candidate grids have empty delta curves; everyone takes
        // the only choice.
        let tokens = vec![*curve_grid.last().unwrap(); problem.batch()];
        let realized = tokens.iter().sum();
        let objective = fold_objective(problem, &tokens);
        return Ok(Allocation { tokens, strategy, objective, realized_budget: realized });
    }

    let mut tokens = vec![*curve_grid.last().unwrap(); problem.batch()];
    for _ in 0..max_iters {
        let mid = (lo + hi) / 2.0;
        for (t, curve) in tokens.iter_mut().zip(curves) {
            *t = first_below(curve, curve_grid, mid);
        }
        let mean = tokens.iter().sum::<usize>() as f64 / problem.batch() as f64;
        if mean > problem.n_b as f64 {
            // Too many tokens: a higher threshold trips earlier.
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let realized = tokens.iter().sum();
    let objective = fold_objective(problem, &tokens);
    Ok(Allocation { tokens, strategy, objective, realized_budget: realized })
}

/// Binary search on a global score threshold.
pub fn allocate_bithr(problem: &AllocationProblem, max_iters: usize) -> Result<Allocation> {
    binary_search_allocate(problem, &problem.scores, &problem.grid, max_iters, Strategy::BiThr)
}

/// Binary search on consecutive-difference (marginal improvement) curves:
/// each sample stops at the first candidate whose marginal gain falls
/// below the searched delta.
pub fn allocate_bidelta(problem: &AllocationProblem, max_iters: usize) -> Result<Allocation> {
    let deltas: Vec<Vec<f64>> = problem
        .scores
        .iter()
        .map(|row| row.windows(2).map(|w| w[0] - w[1]).collect())
        .collect();
    binary_search_allocate(problem, &deltas, &problem.grid, max_iters, Strategy::BiDelta)
}

/// Brute-force optimality check: enumerate every on-budget assignment and
/// compare objectives exactly. `limit` caps the batch size.
pub fn verify_optimal(
    problem: &AllocationProblem,
    alloc: &Allocation,
    limit: usize,
) -> Result<bool> {
    let b = problem.batch();
    if b > limit {
        return Err(Error::ExhaustiveLimit { batch: b, limit });
    }
    let budget = b * problem.n_b;
    let best = brute_force_min(problem, budget)
        .ok_or_else(|| infeasible_error(problem, budget))?;
    Ok(alloc.objective == best)
}

/// Minimal right-fold objective over all assignments totalling `budget`.
fn brute_force_min(problem: &AllocationProblem, budget: usize) -> Option<f64> {
    fn recurse(
        problem: &AllocationProblem,
        k: usize,
        remaining: usize,
        best: &mut Option<f64>,
        partial: &mut Vec<usize>,
    ) {
        if k == problem.batch() {
            if remaining == 0 {
                // Right-fold, matching fold_objective.
                let mut obj = 0.0;
                for (row, &gi) in problem.scores.iter().zip(partial.iter()).rev() {
                    obj = row[gi] + obj;
                }
                if best.is_none_or(|b| obj < b) {
                    *best = Some(obj);
                }
            }
            return;
        }
        for (gi, &g) in problem.grid.iter().enumerate() {
            if g > remaining {
                break;
            }
            partial.push(gi);
            recurse(problem, k + 1, remaining - g, best, partial);
            partial.pop();
        }
    }
    let mut best = None;
    recurse(problem, 0, budget, &mut best, &mut Vec::new());
    best
}
