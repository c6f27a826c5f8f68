//! Nonlinear branch-and-bound and a brute-force enumerator.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::logic::{polish_indicators, IndicatorRecord, INTEGRALITY_TOL};
use crate::nlp::{solve_nlp, IpmOptions, NlpProblem, NlpSolution, NlpStatus};
use crate::transcription::TranscribedNlp;

/// An NLP with variables marked binary. Marked variables must be boxed in [0, 1].
#[derive(Debug, Clone)]
pub struct MinlpProblem {
    pub nlp: NlpProblem,
    pub integer_vars: Vec<usize>,
    /// Indicators eligible for polishing of accepted points.
    pub indicators: Vec<IndicatorRecord>,
}

impl MinlpProblem {
    pub fn new(nlp: NlpProblem, integer_vars: Vec<usize>) -> Result<MinlpProblem, SolveError> {
        for &i in &integer_vars {
            if i >= nlp.num_vars() || nlp.lower()[i] < 0.0 || nlp.upper()[i] > 1.0 {
                return Err(SolveError::InvalidProblem(format!("binary variable {i} is not boxed in [0, 1]")));
            }
        }
        Ok(MinlpProblem {
            nlp,
            integer_vars,
            indicators: Vec::new(),
        })
    }
}

impl From<&TranscribedNlp> for MinlpProblem {
    fn from(t: &TranscribedNlp) -> Self {
        MinlpProblem {
            nlp: t.problem.clone(),
            integer_vars: t.integer_vars.clone(),
            indicators: t.indicators.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnbOptions {
    pub ipm: IpmOptions,
    pub integrality_tol: f64,
    pub feasibility_tol: f64,
    pub node_limit: usize,
    pub prune_tol: f64,
    pub polish: bool,
    /// Depth-first until the first incumbent, then best-bound.
    pub dive_until_incumbent: bool,
    /// Run the membership heuristic at the root and then every this many
    /// solved nodes; 0 disables it.
    pub heuristic_interval: usize,
    /// Barrier parameter for a second attempt at nodes whose solve fails.
    pub retry_mu_init: Option<f64>,
}

impl Default for BnbOptions {
    fn default() -> Self {
        BnbOptions {
            ipm: IpmOptions::default(),
            integrality_tol: INTEGRALITY_TOL,
            feasibility_tol: 1e-6,
            node_limit: 20_000,
            prune_tol: 1e-9,
            polish: true,
            dive_until_incumbent: true,
            heuristic_interval: 10,
            retry_mu_init: Some(1e-3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinlpStatus {
    OptimalWithinTree,
    Feasible,
    Infeasible,
    NodeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "var")]
pub enum NodeAction {
    /// Parent bound already no better than the incumbent; not solved.
    PrunedByParentBound,
    PrunedByBound,
    Integral,
    /// Integral relaxation whose rounded point could not be made feasible.
    Rejected,
    Branched(usize),
    /// Relaxation failed; branched anyway on the lowest unfixed binary.
    BranchedAfterFailure(usize),
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub seq: usize,
    pub depth: usize,
    pub fixings: Vec<(usize, u8)>,
    pub parent_bound: f64,
    pub status: Option<NlpStatus>,
    pub objective: Option<f64>,
    pub incumbent: Option<f64>,
    pub action: NodeAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub x: Vec<f64>,
    pub objective: f64,
    pub binaries: Vec<f64>,
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct MinlpSolution {
    pub status: MinlpStatus,
    pub best: Option<Incumbent>,
    /// `(node sequence number, objective)` each time the incumbent improved.
    pub incumbent_history: Vec<(usize, f64)>,
    pub nodes: usize,
    pub node_log: Vec<NodeRecord>,
}

impl MinlpSolution {
    pub fn objective(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.objective)
    }
}

/// Write one JSON object per line.
pub fn write_node_log<W: Write>(log: &[NodeRecord], mut w: W) -> std::io::Result<()> {
    for r in log {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

fn fractionality(v: f64) -> f64 {
    (v - v.round()).abs()
}

/// Most fractional marked variable (closest to 0.5), lowest index on ties.
/// `None` when every marked variable is integral within `tol`.
pub fn select_branch_variable(x: &[f64], marks: &[usize], tol: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &i in marks {
        if fractionality(x[i]) <= tol {
            continue;
        }
        let score = (x[i] - 0.5).abs();
        best = match best {
            Some((s, j)) if s < score || (s == score && j < i) => Some((s, j)),
            _ => Some((score, i)),
        };
    }
    best.map(|(_, i)| i)
}

struct Node {
    seq: usize,
    depth: usize,
    fixings: Vec<(usize, u8)>,
    bound: f64,
    warm: Arc<Vec<f64>>,
    /// Ancestors that were branched after a failed relaxation.
    failures: usize,
    dive: bool,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Max-heap order: fewest failed ancestors first; then lowest bound (or
    // deepest when diving), then deepest, then newest.
    fn cmp(&self, other: &Self) -> Ordering {
        let by_bound = other.bound.total_cmp(&self.bound);
        let by_depth = self.depth.cmp(&other.depth);
        let primary = if self.dive && other.dive { by_depth.then(by_bound) } else { by_bound.then(by_depth) };
        other.failures.cmp(&self.failures).then(primary).then(self.seq.cmp(&other.seq))
    }
}

fn end_dive(heap: BinaryHeap<Node>) -> BinaryHeap<Node> {
    heap.into_iter().map(|n| Node { dive: false, ..n }).collect()
}

fn fixed_problem(p: &MinlpProblem, fixings: &[(usize, u8)]) -> Result<NlpProblem, SolveError> {
    let mut lo = p.nlp.lower().to_vec();
    let mut hi = p.nlp.upper().to_vec();
    for &(i, v) in fixings {
        lo[i] = v as f64;
        hi[i] = v as f64;
    }
    Ok(p.nlp.with_bounds(lo, hi)?)
}

fn clamp_guess(x: &[f64], fixings: &[(usize, u8)]) -> Vec<f64> {
    let mut z = x.to_vec();
    for &(i, v) in fixings {
        z[i] = v as f64;
    }
    z
}

fn solve_node(nlp: &NlpProblem, guess: &[f64], opts: &BnbOptions) -> Option<NlpSolution> {
    let run = |o: &IpmOptions| match solve_nlp(nlp, guess, o) {
        Ok(s) => Some(s),
        Err(e) => {
            debug!("node solve error: {e}");
            None
        }
    };
    let first = run(&opts.ipm);
    let Some(mu) = opts.retry_mu_init else {
        return first;
    };
    if first.as_ref().is_some_and(|s| s.status == NlpStatus::Optimal) {
        return first;
    }
    // Warm start close to the central path; helps from near-feasible guesses.
    let retry = run(&IpmOptions {
        mu_init: mu,
        ..opts.ipm.clone()
    });
    match (&first, &retry) {
        (_, Some(r)) if r.status == NlpStatus::Optimal => retry,
        (None, _) => retry,
        _ => first,
    }
}

/// Round the marked variables of a (near-)integral point and make it
/// feasible, re-solving with all binaries fixed if rounding alone breaks
/// feasibility. Optionally polishes indicators.
fn accept_integral(p: &MinlpProblem, x: &[f64], opts: &BnbOptions) -> Result<Option<Incumbent>, SolveError> {
    let mut z = x.to_vec();
    for &i in &p.integer_vars {
        z[i] = z[i].round();
    }
    let mut viol = p.nlp.max_violation(&z)?;
    if viol > opts.feasibility_tol {
        let fix: Vec<(usize, u8)> = p.integer_vars.iter().map(|&i| (i, z[i] as u8)).collect();
        let nlp = fixed_problem(p, &fix)?;
        let sol = solve_node(&nlp, &z, opts);
        debug!("integral re-solve: {:?}", sol.as_ref().map(|s| (s.status, s.max_violation)));
        match sol {
            Some(s) if s.status == NlpStatus::Optimal => {
                z = clamp_guess(&s.x, &fix);
                viol = p.nlp.max_violation(&z)?;
                if viol > opts.feasibility_tol {
                    return Ok(None);
                }
            }
            _ => return Ok(None),
        }
    }
    let mut objective = p.nlp.evaluate(&z)?.objective;
    if opts.polish && !p.indicators.is_empty() {
        let q = polish_indicators(&z, &p.indicators);
        let qv = p.nlp.max_violation(&q)?;
        let qo = p.nlp.evaluate(&q)?.objective;
        if qv <= opts.feasibility_tol && qo <= objective {
            z = q;
            viol = qv;
            objective = qo;
        }
    }
    let binaries = p.integer_vars.iter().map(|&i| z[i]).collect();
    Ok(Some(Incumbent {
        x: z,
        objective,
        binaries,
        max_violation: viol,
    }))
}

const HEURISTIC_MARGIN: f64 = 0.1;
const HEURISTIC_ROUNDS: usize = 5;

/// Fix every free indicator to whether its consequence holds at `x` up to a
/// margin, round the remaining binaries, and solve the continuous problem
/// that is left. Repeated from each improved point while it keeps improving.
fn membership_heuristic(p: &MinlpProblem, x: &[f64], fixings: &[(usize, u8)], opts: &BnbOptions) -> Result<Option<Incumbent>, SolveError> {
    let assign = |x: &[f64]| {
        let mut z = x.to_vec();
        for &i in &p.integer_vars {
            z[i] = z[i].round();
        }
        for r in &p.indicators {
            if fixings.iter().any(|(j, _)| *j == r.delta) {
                continue;
            }
            let on = match &r.trigger {
                // trigger modes tie δ to the sign of H
                Some(h) => h.eval(x).map(|v| v >= 0.5 * r.epsilon).unwrap_or(false),
                None => r.consequence.iter().all(|g| g.eval(x).map(|v| v <= HEURISTIC_MARGIN).unwrap_or(false)),
            };
            z[r.delta] = if on { 1.0 } else { 0.0 };
        }
        for &(i, v) in fixings {
            z[i] = v as f64;
        }
        z
    };
    let Some(mut best) = accept_integral(p, &assign(x), opts)? else {
        return Ok(None);
    };
    for _ in 0..HEURISTIC_ROUNDS {
        let z = assign(&best.x);
        if p.integer_vars.iter().all(|&i| z[i] == best.x[i]) {
            break;
        }
        match accept_integral(p, &z, opts)? {
            Some(c) if c.objective < best.objective - opts.prune_tol => best = c,
            _ => break,
        }
    }
    Ok(Some(best))
}

/// Best-bound nonlinear branch-and-bound over the binary-marked variables.
pub fn solve_bnb(p: &MinlpProblem, guess: &[f64], opts: &BnbOptions) -> Result<MinlpSolution, SolveError> {
    if guess.len() != p.nlp.num_vars() {
        return Err(SolveError::InvalidProblem(format!(
            "guess has length {}, expected {}",
            guess.len(),
            p.nlp.num_vars()
        )));
    }
    let nbin = p.integer_vars.len();
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    heap.push(Node {
        seq,
        depth: 0,
        fixings: Vec::new(),
        bound: f64::NEG_INFINITY,
        warm: Arc::new(guess.to_vec()),
        failures: 0,
        dive: opts.dive_until_incumbent,
    });
    seq += 1;
    let mut best: Option<Incumbent> = None;
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut nodes = 0usize;
    let mut unreliable = false;
    let mut hit_limit = false;

    while let Some(node) = heap.pop() {
        if nodes >= opts.node_limit {
            hit_limit = true;
            break;
        }
        let inc = best.as_ref().map(|b| b.objective);
        let mut record = NodeRecord {
            seq: node.seq,
            depth: node.depth,
            fixings: node.fixings.clone(),
            parent_bound: node.bound,
            status: None,
            objective: None,
            incumbent: inc,
            action: NodeAction::PrunedByParentBound,
        };
        if let Some(ub) = inc {
            if node.bound >= ub - opts.prune_tol {
                log.push(record);
                continue;
            }
        }
        nodes += 1;
        let nlp = fixed_problem(p, &node.fixings)?;
        let z0 = clamp_guess(&node.warm, &node.fixings);
        let sol = solve_node(&nlp, &z0, opts);
        record.status = sol.as_ref().map(|s| s.status);
        let ok = sol
            .as_ref()
            .filter(|s| s.status == NlpStatus::Optimal && s.max_violation <= opts.feasibility_tol);
        let Some(s) = ok else {
            if !matches!(record.status, Some(NlpStatus::LocallyInfeasible)) {
                unreliable = true;
            }
            let unfixed = p.integer_vars.iter().copied().find(|i| !node.fixings.iter().any(|(j, _)| j == i));
            match unfixed {
                Some(v) if node.depth < nbin => {
                    record.action = NodeAction::BranchedAfterFailure(v);
                    let warm = node.warm.clone();
                    for val in [0u8, 1] {
                        let mut f = node.fixings.clone();
                        f.push((v, val));
                        heap.push(Node {
                            seq,
                            depth: node.depth + 1,
                            fixings: f,
                            bound: node.bound,
                            warm: warm.clone(),
                            failures: node.failures + 1,
                            dive: best.is_none() && opts.dive_until_incumbent,
                        });
                        seq += 1;
                    }
                }
                _ => record.action = NodeAction::Infeasible,
            }
            log.push(record);
            continue;
        };
        record.objective = Some(s.objective);
        if opts.heuristic_interval > 0 && (nodes - 1) % opts.heuristic_interval == 0 {
            if let Some(c) = membership_heuristic(p, &s.x, &node.fixings, opts)? {
                if best.as_ref().map_or(true, |b| c.objective < b.objective) {
                    history.push((node.seq, c.objective));
                    debug!("heuristic incumbent {} at node {}", c.objective, node.seq);
                    if best.is_none() && opts.dive_until_incumbent {
                        heap = end_dive(heap);
                    }
                    best = Some(c);
                }
            }
        }
        let inc = best.as_ref().map(|b| b.objective);
        if let Some(ub) = inc {
            if s.objective >= ub - opts.prune_tol {
                record.action = NodeAction::PrunedByBound;
                log.push(record);
                continue;
            }
        }
        match select_branch_variable(&s.x, &p.integer_vars, opts.integrality_tol) {
            None => {
                match accept_integral(p, &s.x, opts)? {
                    Some(c) => {
                        record.action = NodeAction::Integral;
                        if inc.map_or(true, |ub| c.objective < ub) {
                            history.push((node.seq, c.objective));
                            debug!("incumbent {} at node {}", c.objective, node.seq);
                            if best.is_none() && opts.dive_until_incumbent {
                                heap = end_dive(heap);
                            }
                            best = Some(c);
                        }
                    }
                    None => {
                        record.action = NodeAction::Rejected;
                        unreliable = true;
                    }
                }
            }
            Some(v) => {
                record.action = NodeAction::Branched(v);
                let warm = Arc::new(s.x.clone());
                // The child on the side the relaxation leans to is pushed last,
                // so it is explored first among equal bounds.
                let order: [u8; 2] = if s.x[v] >= 0.5 { [0, 1] } else { [1, 0] };
                for val in order {
                    let mut f = node.fixings.clone();
                    f.push((v, val));
                    heap.push(Node {
                        seq,
                        depth: node.depth + 1,
                        fixings: f,
                        bound: s.objective,
                        warm: warm.clone(),
                        failures: node.failures,
                        dive: best.is_none() && opts.dive_until_incumbent,
                    });
                    seq += 1;
                }
            }
        }
        log.push(record);
    }
    let status = if hit_limit {
        MinlpStatus::NodeLimit
    } else if best.is_none() {
        MinlpStatus::Infeasible
    } else if unreliable {
        MinlpStatus::Feasible
    } else {
        MinlpStatus::OptimalWithinTree
    };
    Ok(MinlpSolution {
        status,
        best,
        incumbent_history: history,
        nodes,
        node_log: log,
    })
}

/// Solve one NLP per binary assignment and keep the best feasible one.
pub fn enumerate_exhaustive(p: &MinlpProblem, guess: &[f64], cap: usize, opts: &BnbOptions) -> Result<MinlpSolution, SolveError> {
    let nbin = p.integer_vars.len();
    if nbin > cap {
        return Err(SolveError::CapExceeded { count: nbin, cap });
    }
    let mut best: Option<Incumbent> = None;
    let mut history = Vec::new();
    let mut log = Vec::new();
    let total = 1usize << nbin;
    for mask in 0..total {
        let fix: Vec<(usize, u8)> = p
            .integer_vars
            .iter()
            .enumerate()
            .map(|(b, &i)| (i, ((mask >> b) & 1) as u8))
            .collect();
        let nlp = fixed_problem(p, &fix)?;
        let z0 = clamp_guess(guess, &fix);
        let sol = solve_node(&nlp, &z0, opts);
        let mut record = NodeRecord {
            seq: mask,
            depth: nbin,
            fixings: fix.clone(),
            parent_bound: f64::NEG_INFINITY,
            status: sol.as_ref().map(|s| s.status),
            objective: None,
            incumbent: best.as_ref().map(|b| b.objective),
            action: NodeAction::Infeasible,
        };
        if let Some(s) = sol.filter(|s| s.status == NlpStatus::Optimal) {
            let z = clamp_guess(&s.x, &fix);
            let viol = p.nlp.max_violation(&z)?;
            if viol <= opts.feasibility_tol {
                let objective = p.nlp.evaluate(&z)?.objective;
                record.objective = Some(objective);
                record.action = NodeAction::Integral;
                if best.as_ref().map_or(true, |b| objective < b.objective) {
                    history.push((mask, objective));
                    best = Some(Incumbent {
                        binaries: p.integer_vars.iter().map(|&i| z[i]).collect(),
                        x: z,
                        objective,
                        max_violation: viol,
                    });
                }
            }
        }
        log.push(record);
    }
    Ok(MinlpSolution {
        status: if best.is_some() {
            MinlpStatus::OptimalWithinTree
        } else {
            MinlpStatus::Infeasible
        },
        best,
        incumbent_history: history,
        nodes: total,
        node_log: log,
    })
}
