//! HMM map matching: snap a trip's GPS sequence to the most likely
//! road-edge sequence with the Viterbi algorithm.
//!
//! Consecutive duplicate coordinates collapse into one observation (the
//! first record is `Matched`, the rest `Interpolated`); observations with
//! no nearby road and long time gaps split the trip into independently
//! solved chains.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geo::{great_circle_distance, GeoPoint};
use crate::network::{EdgeCandidate, EdgeId, RoadNetwork};
use crate::scalar::{cast, Scalar};
use crate::trace::TracePoint;

/// Matcher parameters. All values are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    /// GPS noise standard deviation in meters.
    pub sigma_z_m: f64,
    /// Transition discrepancy scale in meters.
    pub beta_m: f64,
    /// Candidate search radius around each observation, meters.
    pub candidate_radius_m: f64,
    /// Route search cutoff between consecutive candidates, meters.
    pub route_search_limit_m: f64,
    /// Time gap that splits a trip into independent chains, seconds.
    pub break_gap_s: f64,
}

impl Default for HmmParams {
    fn default() -> Self {
        Self {
            sigma_z_m: 4.07,
            beta_m: 20.0,
            candidate_radius_m: 50.0,
            route_search_limit_m: 2_000.0,
            break_gap_s: 120.0,
        }
    }
}

impl HmmParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("sigma_z_m", self.sigma_z_m),
            ("beta_m", self.beta_m),
            ("candidate_radius_m", self.candidate_radius_m),
            ("route_search_limit_m", self.route_search_limit_m),
            ("break_gap_s", self.break_gap_s),
        ] {
            if !(value > 0.0) {
                return Err(Error::InvalidParam { name });
            }
        }
        Ok(())
    }
}

/// Match label carried by every output point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchStatus {
    Matched,
    Interpolated,
    Unmatched,
}

impl MatchStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Matched => "matched",
            Self::Interpolated => "interpolated",
            Self::Unmatched => "unmatched",
        }
    }
}

/// One matched output record.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPoint {
    /// Index of the source record within the input trace.
    pub source_index: usize,
    /// Snapped coordinate; equals the raw coordinate when unmatched.
    pub snapped: GeoPoint,
    pub status: MatchStatus,
    pub edge_id: Option<EdgeId>,
    pub offset_m: Option<f64>,
}

/// Log-likelihood of observing a GPS fix `distance_m` away from the true
/// road position: `-0.5 (d/sigma)^2 - ln(sigma sqrt(2 pi))`.
pub fn emission_log_prob<F: Scalar>(distance_m: F, sigma_z_m: F) -> F {
    let r = distance_m / sigma_z_m;
    let half = cast::<F>(0.5);
    let sqrt_two_pi = cast::<F>((2.0 * std::f64::consts::PI).sqrt());
    -(half * r * r) - (sigma_z_m * sqrt_two_pi).ln()
}

/// Log-likelihood of a transition whose on-road route length is `route_m`
/// while the observations moved `great_circle_m` in a straight line:
/// `-|route - gc| / beta - ln(beta)`. An unreachable route forbids the
/// transition with negative infinity.
pub fn transition_log_prob<F: Scalar>(great_circle_m: F, route_m: Option<F>, beta_m: F) -> F {
    match route_m {
        None => F::neg_infinity(),
        Some(route) => -((route - great_circle_m).abs() / beta_m) - beta_m.ln(),
    }
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    cost: f64,
    node: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cost == other.cost && self.node == other.node
    }
}
impl Eq for HeapEntry {}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost; node id for determinism
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap()
            .then(other.node.cmp(&self.node))
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest drivable distance between two on-edge anchors, respecting
/// one-way edges, or `None` when no route within `limit_m` exists.
///
/// Uniform-cost search over graph nodes with the two offsets as virtual
/// endpoints; a same-edge move in geometry order (or against it on a
/// two-way edge) is also considered directly.
pub fn route_distance(
    network: &RoadNetwork,
    from: (EdgeId, f64),
    to: (EdgeId, f64),
    limit_m: f64,
) -> Option<f64> {
    let fe = network.edge(from.0);
    let te = network.edge(to.0);
    let from_off = from.1.clamp(0.0, fe.length_m);
    let to_off = to.1.clamp(0.0, te.length_m);

    let mut best = f64::INFINITY;
    if from.0 == to.0 {
        if to_off >= from_off {
            best = to_off - from_off;
        } else if !fe.oneway {
            best = from_off - to_off;
        }
    }

    // cost to finish at the target offset after arriving at a node
    let mut target_costs: Vec<(u32, f64)> = vec![(te.from_node, to_off)];
    if !te.oneway {
        target_costs.push((te.to_node, te.length_m - to_off));
    }

    let mut dist = vec![f64::INFINITY; network.node_count()];
    let mut heap = BinaryHeap::new();
    let push = |heap: &mut BinaryHeap<HeapEntry>, dist: &mut Vec<f64>, node: u32, cost: f64| {
        if cost < dist[node as usize] {
            dist[node as usize] = cost;
            heap.push(HeapEntry { cost, node });
        }
    };
    push(&mut heap, &mut dist, fe.to_node, fe.length_m - from_off);
    if !fe.oneway {
        push(&mut heap, &mut dist, fe.from_node, from_off);
    }

    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if cost > dist[node as usize] || cost > limit_m || cost >= best {
            continue;
        }
        for &(t_node, t_cost) in &target_costs {
            if t_node == node {
                best = best.min(cost + t_cost);
            }
        }
        for &(ei, forward) in network.outgoing(node) {
            let e = network.edge(EdgeId(ei));
            let next = if forward { e.to_node } else { e.from_node };
            let next_cost = cost + e.length_m;
            if next_cost <= limit_m {
                push(&mut heap, &mut dist, next, next_cost);
            }
        }
    }

    (best <= limit_m).then_some(best)
}

/// Viterbi decoding over precomputed log-probability tables.
///
/// `emissions[t][s]` scores state `s` at step `t`; `transitions[t-1][p][s]`
/// scores moving from `p` to `s`. Returns the argmax state sequence; exact
/// score ties resolve to the lexicographically smallest index sequence.
/// When every sequence is forbidden (all scores negative infinity) they
/// all tie, so the all-zeros sequence is returned.
pub fn viterbi_solve(emissions: &[Vec<f64>], transitions: &[Vec<Vec<f64>>]) -> Vec<usize> {
    let steps = emissions.len();
    assert!(steps > 0, "viterbi_solve requires at least one step");
    assert_eq!(transitions.len(), steps - 1);

    let mut score: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(steps);
    score.push(emissions[0].clone());
    back.push(vec![0; emissions[0].len()]);

    // index path ending at state `s` of step `t`, front to back
    let path_of = |back: &[Vec<usize>], t: usize, s: usize| -> Vec<usize> {
        let mut path = vec![0; t + 1];
        let mut cur = s;
        for i in (0..=t).rev() {
            path[i] = cur;
            cur = back[i][cur];
        }
        path
    };

    for t in 1..steps {
        let prev_n = emissions[t - 1].len();
        let cur_n = emissions[t].len();
        let mut row_score = Vec::with_capacity(cur_n);
        let mut row_back = Vec::with_capacity(cur_n);
        for s in 0..cur_n {
            let mut best_p = 0usize;
            let mut best_v = score[t - 1][0] + transitions[t - 1][0][s];
            for p in 1..prev_n {
                let v = score[t - 1][p] + transitions[t - 1][p][s];
                if v > best_v {
                    best_v = v;
                    best_p = p;
                } else if v == best_v
                    && path_of(&back, t - 1, p) < path_of(&back, t - 1, best_p)
                {
                    best_p = p;
                }
            }
            row_score.push(best_v + emissions[t][s]);
            row_back.push(best_p);
        }
        score.push(row_score);
        back.push(row_back);
    }

    let last = steps - 1;
    let mut best_s = 0usize;
    for s in 1..emissions[last].len() {
        let (a, b) = (score[last][s], score[last][best_s]);
        if a > b || (a == b && path_of(&back, last, s) < path_of(&back, last, best_s)) {
            best_s = s;
        }
    }
    if score[last][best_s] == f64::NEG_INFINITY {
        // every sequence is forbidden and ties at -inf; a suboptimal
        // prefix followed by a forbidden move ties the optimal one, so
        // the lexicographic rule picks the all-zeros sequence
        return vec![0; steps];
    }
    path_of(&back, last, best_s)
}

/// One HMM observation: a distinct raw coordinate plus the indices of the
/// consecutive duplicate records it absorbed.
struct Observation {
    head_index: usize,
    duplicate_indices: Vec<usize>,
    point: GeoPoint,
    t_first_ms: i64,
    t_last_ms: i64,
    candidates: Vec<EdgeCandidate>,
}

/// Snaps one trip's trace to the road network.
///
/// The trace must be timestamp-sorted. Output length equals input length
/// and every record carries exactly one [`MatchStatus`].
pub fn viterbi_match(
    trace: &[TracePoint],
    network: &RoadNetwork,
    params: &HmmParams,
) -> Result<Vec<MatchedPoint>> {
    params.validate()?;
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    for i in 1..trace.len() {
        if trace[i].timestamp_ms < trace[i - 1].timestamp_ms {
            return Err(Error::OutOfOrder {
                veh_id: trace[i].veh_id,
                trip: trace[i].trip,
                index: i,
            });
        }
    }

    // collapse consecutive duplicate coordinates (exact equality)
    let mut observations: Vec<Observation> = Vec::new();
    for (i, rec) in trace.iter().enumerate() {
        match observations.last_mut() {
            Some(obs) if obs.point == rec.position => {
                obs.duplicate_indices.push(i);
                obs.t_last_ms = rec.timestamp_ms;
            }
            _ => observations.push(Observation {
                head_index: i,
                duplicate_indices: Vec::new(),
                point: rec.position,
                t_first_ms: rec.timestamp_ms,
                t_last_ms: rec.timestamp_ms,
                candidates: network.nearest_edges(rec.position, params.candidate_radius_m),
            }),
        }
    }

    // chains of consecutive matchable observations
    let break_gap_ms = (params.break_gap_s * 1000.0) as i64;
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for (oi, obs) in observations.iter().enumerate() {
        if obs.candidates.is_empty() {
            if !current.is_empty() {
                chains.push(std::mem::take(&mut current));
            }
            continue;
        }
        if let Some(&prev) = current.last() {
            if obs.t_first_ms - observations[prev].t_last_ms > break_gap_ms {
                chains.push(std::mem::take(&mut current));
            }
        }
        current.push(oi);
    }
    if !current.is_empty() {
        chains.push(current);
    }

    // solve each chain independently
    let mut chosen: Vec<Option<usize>> = vec![None; observations.len()];
    for chain in &chains {
        let emissions: Vec<Vec<f64>> = chain
            .iter()
            .map(|&oi| {
                observations[oi]
                    .candidates
                    .iter()
                    .map(|c| emission_log_prob(c.distance_m, params.sigma_z_m))
                    .collect()
            })
            .collect();
        let mut transitions: Vec<Vec<Vec<f64>>> = Vec::with_capacity(chain.len().saturating_sub(1));
        for w in chain.windows(2) {
            let (a, b) = (&observations[w[0]], &observations[w[1]]);
            let gc = great_circle_distance(a.point, b.point).meters();
            let table: Vec<Vec<f64>> = a
                .candidates
                .iter()
                .map(|ca| {
                    b.candidates
                        .iter()
                        .map(|cb| {
                            let route = route_distance(
                                network,
                                (ca.edge, ca.offset_m),
                                (cb.edge, cb.offset_m),
                                params.route_search_limit_m,
                            );
                            transition_log_prob(gc, route, params.beta_m)
                        })
                        .collect()
                })
                .collect();
            transitions.push(table);
        }
        let path = viterbi_solve(&emissions, &transitions);
        for (pos, &oi) in chain.iter().enumerate() {
            chosen[oi] = Some(path[pos]);
        }
    }

    // assemble one output per input record
    let mut out: Vec<MatchedPoint> = Vec::with_capacity(trace.len());
    for (oi, obs) in observations.iter().enumerate() {
        match chosen[oi] {
            Some(ci) => {
                let c = &obs.candidates[ci];
                out.push(MatchedPoint {
                    source_index: obs.head_index,
                    snapped: c.point,
                    status: MatchStatus::Matched,
                    edge_id: Some(c.edge),
                    offset_m: Some(c.offset_m),
                });
                for &di in &obs.duplicate_indices {
                    out.push(MatchedPoint {
                        source_index: di,
                        snapped: c.point,
                        status: MatchStatus::Interpolated,
                        edge_id: Some(c.edge),
                        offset_m: Some(c.offset_m),
                    });
                }
            }
            None => {
                out.push(MatchedPoint {
                    source_index: obs.head_index,
                    snapped: obs.point,
                    status: MatchStatus::Unmatched,
                    edge_id: None,
                    offset_m: None,
                });
                for &di in &obs.duplicate_indices {
                    out.push(MatchedPoint {
                        source_index: di,
                        snapped: obs.point,
                        status: MatchStatus::Unmatched,
                        edge_id: None,
                        offset_m: None,
                    });
                }
            }
        }
    }
    debug_assert_eq!(out.len(), trace.len());
    Ok(out)
}

/// Fraction of records labeled matched or interpolated.
pub fn match_rate(results: &[MatchedPoint]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let snapped = results
        .iter()
        .filter(|r| r.status != MatchStatus::Unmatched)
        .count();
    Ok(snapped as f64 / results.len() as f64)
}
