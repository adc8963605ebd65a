//! Decentralized estimation of lambda2 and each robot's own Fiedler component.
//!
//! Robots run synchronous rounds. In each round every robot publishes one
//! message, then reads only the messages of robots it shares a positive edge
//! weight with. The epoch runner owns the routing, so an estimator cannot see
//! anything beyond its own state and its neighbors' messages.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::weighted_graph::{fiedler_oracle, laplacian};

/// What robot i knows locally at the start of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalView {
    pub id: usize,
    pub team_size: usize,
    /// `(j, a_ij)` for every j with `a_ij > 0`, ascending in j.
    pub neighbors: Vec<(usize, f64)>,
}

impl LocalView {
    pub fn from_adjacency(id: usize, a: &DMatrix<f64>) -> Self {
        let neighbors = (0..a.ncols())
            .filter(|&j| j != id && a[(id, j)] > 0.0)
            .map(|j| (j, a[(id, j)]))
            .collect();
        LocalView {
            id,
            team_size: a.nrows(),
            neighbors,
        }
    }

    pub fn degree(&self) -> f64 {
        self.neighbors.iter().map(|&(_, w)| w).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub lambda2: f64,
    /// This robot's own Fiedler-vector component.
    pub e2: f64,
}

/// One robot's estimator. The runner calls `begin_epoch` once per control
/// step, then alternates `message` (for all robots) and `round`.
pub trait Estimator: Send {
    type Message: Clone + Send + Sync;

    fn begin_epoch(&mut self, local: &LocalView);
    fn message(&self) -> Self::Message;
    /// `inbox` holds `(sender, a_ij, message)` for exactly the current
    /// neighbors, ascending by sender. Returns whether the state changed.
    fn round(&mut self, local: &LocalView, inbox: &[(usize, f64, &Self::Message)]) -> bool;
    fn estimate(&self) -> Estimate;
}

/// Runs up to `rounds` synchronous rounds and returns every robot's estimate.
/// Stops early once a full round leaves every robot unchanged, which is a
/// fixed point, so the result is the same as running all rounds.
pub fn run_consensus_epoch<E: Estimator>(
    robots: &mut [E],
    adjacency: &DMatrix<f64>,
    rounds: usize,
) -> Vec<Estimate> {
    assert!(rounds >= 1, "rounds must be >= 1");
    assert_eq!(robots.len(), adjacency.nrows());
    let views: Vec<LocalView> = (0..robots.len())
        .map(|i| LocalView::from_adjacency(i, adjacency))
        .collect();
    for (r, v) in robots.iter_mut().zip(&views) {
        r.begin_epoch(v);
    }
    for _ in 0..rounds {
        // barrier: every robot reads messages written in the previous round
        let outbox: Vec<E::Message> = robots.iter().map(|r| r.message()).collect();
        let mut changed = false;
        for (r, v) in robots.iter_mut().zip(&views) {
            let inbox: Vec<(usize, f64, &E::Message)> =
                v.neighbors.iter().map(|&(j, w)| (j, w, &outbox[j])).collect();
            changed |= r.round(v, &inbox);
        }
        if !changed {
            break;
        }
    }
    robots.iter().map(|r| r.estimate()).collect()
}

/// Known undirected edges keyed by `(min, max)` endpoint.
pub type EdgeTable = BTreeMap<(usize, usize), f64>;

/// Topology flooding: each robot relays the weighted edges it knows to its
/// neighbors. Once its table stops growing it solves the Laplacian of the
/// known graph locally. A table that does not reach the whole team means the
/// team graph is disconnected, and the estimate is zero.
#[derive(Debug, Clone, Default)]
pub struct Flooding {
    id: usize,
    team_size: usize,
    table: Arc<EdgeTable>,
}

impl Flooding {
    pub fn new(id: usize) -> Self {
        Flooding {
            id,
            ..Default::default()
        }
    }

    pub fn known_edges(&self) -> &EdgeTable {
        &self.table
    }

    fn solve(&self) -> Estimate {
        let n = self.team_size;
        if n < 2 {
            return Estimate { lambda2: 0.0, e2: 0.0 };
        }
        let mut a = DMatrix::zeros(n, n);
        for (&(i, j), &w) in self.table.iter() {
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        if !spans_team(&a) {
            return Estimate { lambda2: 0.0, e2: 0.0 };
        }
        let l = laplacian(&a).expect("edge table is symmetric by construction");
        let f = fiedler_oracle(&l);
        Estimate {
            lambda2: f.lambda2.max(0.0),
            e2: f.vector[self.id],
        }
    }
}

fn spans_team(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if !seen[v] && a[(u, v)] > 0.0 {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

impl Estimator for Flooding {
    type Message = Arc<EdgeTable>;

    fn begin_epoch(&mut self, local: &LocalView) {
        self.id = local.id;
        self.team_size = local.team_size;
        let mut t = EdgeTable::new();
        for &(j, w) in &local.neighbors {
            t.insert((local.id.min(j), local.id.max(j)), w);
        }
        self.table = Arc::new(t);
    }

    fn message(&self) -> Self::Message {
        Arc::clone(&self.table)
    }

    fn round(&mut self, _local: &LocalView, inbox: &[(usize, f64, &Self::Message)]) -> bool {
        let grows = inbox
            .iter()
            .any(|(_, _, t)| t.keys().any(|k| !self.table.contains_key(k)));
        if !grows {
            return false;
        }
        let mut merged = (*self.table).clone();
        for (_, _, t) in inbox {
            for (&k, &w) in t.iter() {
                merged.entry(k).or_insert(w);
            }
        }
        self.table = Arc::new(merged);
        true
    }

    fn estimate(&self) -> Estimate {
        self.solve()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIterationGains {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k_pi: f64,
    /// Round period, s.
    pub dt_c: f64,
}

impl Default for PowerIterationGains {
    fn default() -> Self {
        PowerIterationGains {
            k1: 6.0,
            k2: 1.0,
            k3: 20.0,
            k_pi: 10.0,
            dt_c: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIterationMessage {
    pub x_tilde: f64,
    pub avg_mean: f64,
    pub avg_sq: f64,
}

/// Deflated continuous-time power iteration with two PI average-consensus
/// trackers, one for the team mean of `x` and one for the mean of `x^2`.
/// State persists across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerIteration {
    pub gains: PowerIterationGains,
    pub x_tilde: f64,
    pub avg_mean: f64,
    pub avg_sq: f64,
    pub pi_integral_mean: f64,
    pub pi_integral_sq: f64,
    isolated: bool,
}

impl PowerIteration {
    /// `x_tilde` starts from a unit normal drawn on stream `id` of `seed`.
    pub fn new(id: usize, seed: u64, gains: PowerIterationGains) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let x: f64 = StandardNormal.sample(&mut rng);
        PowerIteration {
            gains,
            x_tilde: x,
            avg_mean: x,
            avg_sq: x * x,
            pi_integral_mean: 0.0,
            pi_integral_sq: 0.0,
            isolated: false,
        }
    }
}

impl Estimator for PowerIteration {
    type Message = PowerIterationMessage;

    fn begin_epoch(&mut self, local: &LocalView) {
        self.isolated = local.team_size > 1 && local.neighbors.is_empty();
    }

    fn message(&self) -> Self::Message {
        PowerIterationMessage {
            x_tilde: self.x_tilde,
            avg_mean: self.avg_mean,
            avg_sq: self.avg_sq,
        }
    }

    fn round(&mut self, _local: &LocalView, inbox: &[(usize, f64, &Self::Message)]) -> bool {
        let g = self.gains;
        let mut lx = 0.0;
        let mut lm = 0.0;
        let mut ls = 0.0;
        for &(_, w, m) in inbox {
            if !(m.x_tilde.is_finite() && m.avg_mean.is_finite() && m.avg_sq.is_finite()) {
                continue;
            }
            lx += w * (self.x_tilde - m.x_tilde);
            lm += w * (self.avg_mean - m.avg_mean);
            ls += w * (self.avg_sq - m.avg_sq);
        }
        let x = self.x_tilde;
        let nx = x + g.dt_c * (-g.k1 * self.avg_mean - g.k2 * lx - g.k3 * (self.avg_sq - 1.0) * x);
        self.pi_integral_mean -= g.dt_c * g.k_pi * lm;
        self.pi_integral_sq -= g.dt_c * g.k_pi * ls;
        self.x_tilde = nx;
        self.avg_mean = nx + self.pi_integral_mean;
        self.avg_sq = nx * nx + self.pi_integral_sq;
        true
    }

    fn estimate(&self) -> Estimate {
        let g = self.gains;
        let lambda2 = if self.isolated {
            0.0
        } else {
            ((g.k3 / g.k2) * (1.0 - self.avg_sq)).max(0.0)
        };
        Estimate {
            lambda2,
            e2: self.x_tilde,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Mutex;

    fn sym(n: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(n, n);
        for &(i, j, w) in edges {
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        a
    }

    fn oracle(a: &DMatrix<f64>) -> f64 {
        fiedler_oracle(&laplacian(a).unwrap()).lambda2
    }

    fn flood(a: &DMatrix<f64>, rounds: usize) -> Vec<Estimate> {
        let mut robots: Vec<Flooding> = (0..a.nrows()).map(Flooding::new).collect();
        run_consensus_epoch(&mut robots, a, rounds)
    }

    #[test]
    fn flooding_k2() {
        let a = sym(2, &[(0, 1, 1.0)]);
        for e in flood(&a, 200) {
            assert!((e.lambda2 - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flooding_path_matches_oracle() {
        let a = sym(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let est = flood(&a, 200);
        let l2 = oracle(&a);
        for e in &est {
            assert!((e.lambda2 - l2).abs() <= 0.05 * l2.max(0.01));
        }
        // own components line up with the oracle Fiedler vector
        let f = fiedler_oracle(&laplacian(&a).unwrap());
        for (e, want) in est.iter().zip(&f.vector) {
            assert_eq!(e.e2, *want);
        }
    }

    #[test]
    fn flooding_needs_diameter_rounds() {
        let a = sym(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]);
        // after one round the end robots do not yet see the far edge
        let est = flood(&a, 1);
        assert_eq!(est[0].lambda2, 0.0);
        let est = flood(&a, 2);
        assert!(est.iter().all(|e| e.lambda2 > 0.0));
    }

    #[test]
    fn single_robot_reports_zero() {
        let a = DMatrix::zeros(1, 1);
        assert_eq!(flood(&a, 200)[0].lambda2, 0.0);
        let mut pi = vec![PowerIteration::new(0, 3, PowerIterationGains::default())];
        let e = run_consensus_epoch(&mut pi, &a, 200);
        assert!(e[0].lambda2.is_finite());
    }

    #[test]
    fn disconnected_team_reports_zero() {
        let a = sym(4, &[(0, 1, 1.0), (2, 3, 0.5)]);
        for e in flood(&a, 200) {
            assert_eq!(e.lambda2, 0.0);
        }
        let mut pi: Vec<PowerIteration> =
            (0..4).map(|i| PowerIteration::new(i, 1, PowerIterationGains::default())).collect();
        let a = sym(3, &[(0, 1, 1.0)]);
        let e = run_consensus_epoch(&mut pi[..3], &a, 200);
        assert_eq!(e[2].lambda2, 0.0);
    }

    #[test]
    fn repeated_epochs_are_deterministic() {
        let a = sym(4, &[(0, 1, 0.3), (1, 2, 1.0), (2, 3, 0.7), (0, 3, 0.2)]);
        assert_eq!(flood(&a, 200), flood(&a, 200));
        let run = || {
            let mut pi: Vec<PowerIteration> =
                (0..4).map(|i| PowerIteration::new(i, 9, PowerIterationGains::default())).collect();
            run_consensus_epoch(&mut pi, &a, 200)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn power_iteration_converges_on_long_horizon() {
        let a = sym(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let mut pi: Vec<PowerIteration> =
            (0..3).map(|i| PowerIteration::new(i, 5, PowerIterationGains::default())).collect();
        let mut est = Vec::new();
        for _ in 0..500 {
            est = run_consensus_epoch(&mut pi, &a, 200);
        }
        for e in &est {
            assert!((e.lambda2 - 1.0).abs() < 0.05, "{e:?}");
        }
        let f = fiedler_oracle(&laplacian(&a).unwrap()).vector;
        let x: Vec<f64> = est.iter().map(|e| e.e2).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos: f64 = x.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() / norm;
        assert!(cos.abs() >= 0.95);
    }

    #[test]
    fn power_iteration_stays_bounded() {
        let a = sym(5, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (0, 4, 1.0), (1, 2, 1.0), (3, 4, 0.5)]);
        let mut pi: Vec<PowerIteration> =
            (0..5).map(|i| PowerIteration::new(i, 11, PowerIterationGains::default())).collect();
        for _ in 0..50 {
            for e in run_consensus_epoch(&mut pi, &a, 200) {
                assert!(e.lambda2.is_finite() && e.lambda2 <= 20.0);
            }
        }
    }

    /// Records which senders each robot hears from, to audit routing.
    struct Audited {
        id: usize,
        heard: Arc<Mutex<Vec<(usize, usize)>>>,
    }

    impl Estimator for Audited {
        type Message = usize;
        fn begin_epoch(&mut self, local: &LocalView) {
            self.id = local.id;
        }
        fn message(&self) -> usize {
            self.id
        }
        fn round(&mut self, _l: &LocalView, inbox: &[(usize, f64, &usize)]) -> bool {
            let mut h = self.heard.lock().unwrap();
            for &(j, _, m) in inbox {
                assert_eq!(j, *m);
                h.push((self.id, j));
            }
            true
        }
        fn estimate(&self) -> Estimate {
            Estimate { lambda2: 0.0, e2: 0.0 }
        }
    }

    proptest! {
        #[test]
        fn messages_only_cross_positive_edges(
            n in 2usize..7,
            ws in prop::collection::vec(prop::option::of(0.01..1.0f64), 15),
        ) {
            let mut a = DMatrix::zeros(n, n);
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if let Some(w) = ws[k] {
                        a[(i, j)] = w;
                        a[(j, i)] = w;
                    }
                    k += 1;
                }
            }
            let heard = Arc::new(Mutex::new(Vec::new()));
            let mut robots: Vec<Audited> =
                (0..n).map(|id| Audited { id, heard: Arc::clone(&heard) }).collect();
            run_consensus_epoch(&mut robots, &a, 3);
            for &(i, j) in heard.lock().unwrap().iter() {
                prop_assert!(a[(i, j)] > 0.0);
            }
        }

        #[test]
        fn flooding_matches_oracle_on_connected_graphs(
            n in 2usize..7,
            ws in prop::collection::vec(prop::option::weighted(0.6, 0.05..1.0f64), 15),
        ) {
            let mut a = DMatrix::zeros(n, n);
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if let Some(w) = ws[k] {
                        a[(i, j)] = w;
                        a[(j, i)] = w;
                    }
                    k += 1;
                }
            }
            let l2 = oracle(&a);
            let est = flood(&a, 200);
            for e in &est {
                if l2 > 1e-9 {
                    prop_assert!((e.lambda2 - l2).abs() < 1e-12);
                } else {
                    prop_assert_eq!(e.lambda2, 0.0);
                }
            }
        }
    }
}
