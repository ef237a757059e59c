//! Log-normal multiplicative random walks and the anomaly test built on them.
//!
//! A signal is modelled as `f(i) = e^{φ(i) + ν(i)}` where, along each chain
//! `i_0 < i_1 < …`, `ν` has independent Gaussian increments with
//! `E[e^{ν(j) − ν(i)}] = 1`. Each chain starts from `ν = 0` before its first
//! vertex. Distinct chains are independent realizations.
//!
//! Random numbers come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`; independent streams are split off with `set_stream`, so a
//! `(seed, stream)` pair always reproduces the same draws.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{check_len, DirectedGraph, Edge, EdgeFields, EdgeSubset};
use crate::laplacian::quadratic_form;
use crate::scattering::scatter;
use crate::semigroup::FilterPair;

/// Denominators of the adapted weights are floored at this value.
pub const WEIGHT_DENOMINATOR_FLOOR: f64 = 1e-12;

/// The generator used for every simulation in this crate.
pub type WalkRng = ChaCha8Rng;

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> WalkRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `E[e^{nν}] = e^{n(n−1)σ²/2}` for `ν ~ N(−σ²/2, σ²)`.
pub fn lognormal_moment(n: u32, sigma2: f64) -> f64 {
    let n = f64::from(n);
    (n * (n - 1.0) * sigma2 / 2.0).exp()
}

/// `E[|M_{√w} D_a f|⁴]` on a chain edge with `σ_i² < σ_j²`:
/// `e^{4σ_j²} + 2e^{3σ_j²+σ_i²} + 3e^{2σ_j²+2σ_i²} − 3e^{4σ_i²}`.
pub fn fourth_moment_edge(sigma2_i: f64, sigma2_j: f64) -> f64 {
    let (x, y) = (sigma2_j, sigma2_i);
    (4.0 * x).exp() + 2.0 * (3.0 * x + y).exp() + 3.0 * (2.0 * x + 2.0 * y).exp()
        - 3.0 * (4.0 * y).exp()
}

/// `E[|M_{√w} D_a f|⁴]` on an edge joining two independent realizations.
///
/// With `Y = e^ν`, `E[Y^k] = e^{k(k−1)σ²/2}` and the fourth moment of
/// `Y_j − Y_i` expands binomially; the weight normalizes the second moment.
pub fn fourth_moment_independent_edge(sigma2_i: f64, sigma2_j: f64) -> f64 {
    let m = |k: u32, s: f64| lognormal_moment(k, s);
    let fourth = m(4, sigma2_j) - 4.0 * m(3, sigma2_j) + 6.0 * m(2, sigma2_j) * m(2, sigma2_i)
        - 4.0 * m(3, sigma2_i)
        + m(4, sigma2_i);
    let second = independent_edge_variance(sigma2_i, sigma2_j);
    fourth / (second * second)
}

fn independent_edge_variance(sigma2_i: f64, sigma2_j: f64) -> f64 {
    sigma2_i.exp_m1() + sigma2_j.exp_m1()
}

/// `U = e^{4σ_n²} + Σ_{j=1}^{n} (3e^{4σ_j²} − 1) − 3` for a chain `σ_0² ≤ … ≤ σ_n²`.
pub fn variance_bound_u(sigma2: &[f64]) -> Result<f64> {
    if let Some(pos) = sigma2.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::DecreasingVariance(pos + 1));
    }
    if sigma2.len() < 2 {
        return Ok(0.0);
    }
    let n = sigma2.len() - 1;
    let sum: f64 = sigma2[1..].iter().map(|s| 3.0 * (4.0 * s).exp() - 1.0).sum();
    Ok(((4.0 * sigma2[n]).exp() + sum - 3.0).max(0.0))
}

/// Cantelli bound `U / (U + δ²)` on `P[S_F ≥ |F| + δ]`.
pub fn cantelli_p(u: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveDelta(delta));
    }
    Ok(u / (u + delta * delta))
}

/// Squared-norm thresholds `t (1 − e^{−tλmax})^{k−1} (|F| + δ)` for `k = 1..=K`.
pub fn layer_thresholds(t: f64, lambda_max: f64, n_edges: usize, delta: f64, layers: usize) -> Vec<f64> {
    let decay = -(-t * lambda_max).exp_m1();
    let base = t * (n_edges as f64 + delta);
    (0..layers).map(|k| base * decay.powi(k as i32)).collect()
}

/// Potential, marginal log-variances and chain structure of a log-normal
/// multiplicative random walk over vertices `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkModel {
    potential: Vec<f64>,
    sigma2: Vec<f64>,
    chains: Vec<Vec<usize>>,
    /// `(chain, position)` per vertex.
    membership: Vec<(usize, usize)>,
}

impl WalkModel {
    /// Each vertex must appear in exactly one chain; chains are increasing
    /// vertex sequences with nondecreasing `σ²`.
    pub fn new(potential: Vec<f64>, sigma2: Vec<f64>, chains: Vec<Vec<usize>>) -> Result<Self> {
        let n = potential.len();
        check_len("sigma2", n, sigma2.len())?;
        if let Some((i, &s)) = sigma2.iter().enumerate().find(|(_, s)| !(**s >= 0.0)) {
            return Err(Error::Model(format!("sigma2[{i}] = {s} must be nonnegative")));
        }
        let mut membership = vec![(usize::MAX, 0); n];
        for (c, chain) in chains.iter().enumerate() {
            for (pos, &v) in chain.iter().enumerate() {
                if v >= n {
                    return Err(Error::Model(format!("chain {c} references vertex {v} >= {n}")));
                }
                if membership[v].0 != usize::MAX {
                    return Err(Error::Model(format!("vertex {v} appears in two chains")));
                }
                membership[v] = (c, pos);
                if pos > 0 {
                    let prev = chain[pos - 1];
                    if prev >= v {
                        return Err(Error::Model(format!("chain {c} is not increasing at vertex {v}")));
                    }
                    if sigma2[v] < sigma2[prev] {
                        return Err(Error::DecreasingVariance(v));
                    }
                }
            }
        }
        if let Some(v) = membership.iter().position(|m| m.0 == usize::MAX) {
            return Err(Error::Model(format!("vertex {v} belongs to no chain")));
        }
        Ok(Self {
            potential,
            sigma2,
            chains,
            membership,
        })
    }

    /// One chain through all vertices in increasing order.
    pub fn single_chain(potential: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        let chain = (0..potential.len()).collect();
        Self::new(potential, sigma2, vec![chain])
    }

    pub fn n(&self) -> usize {
        self.potential.len()
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn chains(&self) -> &[Vec<usize>] {
        &self.chains
    }

    /// `μ_i = −σ_i²/2`.
    pub fn mean(&self, vertex: usize) -> f64 {
        -self.sigma2[vertex] / 2.0
    }

    pub fn same_chain(&self, i: usize, j: usize) -> bool {
        self.membership[i].0 == self.membership[j].0
    }

    /// `e^φ`, the expected signal.
    pub fn expected_signal(&self) -> Vec<f64> {
        self.potential.iter().map(|p| p.exp()).collect()
    }

    /// The model seen through an edge subset: vertices relabelled to `∂F`,
    /// chains intersected with `∂F`.
    pub fn restrict(&self, subset: &EdgeSubset<'_>) -> Result<Self> {
        check_len("model vertices", subset.parent().n_vertices(), self.n())?;
        let boundary = subset.boundary_vertices();
        let potential = boundary.iter().map(|&v| self.potential[v]).collect();
        let sigma2 = boundary.iter().map(|&v| self.sigma2[v]).collect();
        let mut chains: Vec<Vec<usize>> = vec![Vec::new(); self.chains.len()];
        for (local, &v) in boundary.iter().enumerate() {
            chains[self.membership[v].0].push(local);
        }
        chains.retain(|c| !c.is_empty());
        Self::new(potential, sigma2, chains)
    }

    /// `E|D_a f(i,j)|²` without the `e^{2φ(j)}` factor.
    fn edge_variance(&self, i: usize, j: usize) -> f64 {
        let (si, sj) = (self.sigma2[i], self.sigma2[j]);
        if self.same_chain(i, j) {
            (sj.exp() - si.exp()).abs()
        } else {
            independent_edge_variance(si, sj)
        }
    }
}

/// Draws `f = e^{φ + ν}` from the model.
pub fn simulate_walk<R: Rng + ?Sized>(model: &WalkModel, rng: &mut R) -> Vec<f64> {
    let mut nu = vec![0.0; model.n()];
    for chain in &model.chains {
        let mut level = 0.0;
        let mut prev_var = 0.0;
        for &v in chain {
            let step = model.sigma2[v] - prev_var;
            let z: f64 = rng.sample(StandardNormal);
            level += step.sqrt() * z - step / 2.0;
            nu[v] = level;
            prev_var = model.sigma2[v];
        }
    }
    nu.iter()
        .zip(&model.potential)
        .map(|(n, p)| (p + n).exp())
        .collect()
}

/// [`simulate_walk`] with a fresh generator for `(seed, stream)`.
pub fn simulate_walk_seeded(model: &WalkModel, seed: u64, stream: u64) -> Vec<f64> {
    simulate_walk(model, &mut stream_rng(seed, stream))
}

/// `w(i,j) = 1 / E[|D_a f(i,j)|²]` per edge of `g`.
///
/// Same-chain edges use `e^{2φ(j)} |e^{σ_j²} − e^{σ_i²}|`; edges joining
/// independent chains use `e^{2φ(j)} (e^{σ_i²} + e^{σ_j²} − 2)`. Denominators
/// are floored at [`WEIGHT_DENOMINATOR_FLOOR`]. An independent edge whose two
/// endpoints are both deterministic gets `None`.
pub fn adapted_weights(model: &WalkModel, g: &DirectedGraph) -> Result<Vec<Option<f64>>> {
    check_len("model vertices", g.n_vertices(), model.n())?;
    Ok(g.edges()
        .iter()
        .map(|&(i, j)| {
            if !model.same_chain(i, j) && model.sigma2[i] == 0.0 && model.sigma2[j] == 0.0 {
                warn!("dropping edge ({i}, {j}): both endpoints are deterministic");
                return None;
            }
            let denom = (2.0 * model.potential[j]).exp() * model.edge_variance(i, j);
            Some(1.0 / denom.max(WEIGHT_DENOMINATOR_FLOOR))
        })
        .collect())
}

/// A graph carrying adapted weights and the gradient drift of the model's
/// potential. Edges without a usable weight are removed.
#[derive(Debug, Clone)]
pub struct AdaptedGraph {
    pub graph: DirectedGraph,
    pub fields: EdgeFields,
    pub dropped: Vec<Edge>,
}

pub fn adapted_fields(model: &WalkModel, g: &DirectedGraph) -> Result<AdaptedGraph> {
    let weights = adapted_weights(model, g)?;
    let mut kept = Vec::with_capacity(g.n_edges());
    let mut kept_weights = Vec::with_capacity(g.n_edges());
    let mut dropped = Vec::new();
    for (&e, w) in g.edges().iter().zip(weights) {
        match w {
            Some(w) => {
                kept.push(e);
                kept_weights.push(w);
            }
            None => dropped.push(e),
        }
    }
    let graph = DirectedGraph::new(g.n_vertices(), kept)?;
    let fields = EdgeFields::from_potential(&graph, kept_weights, model.potential.clone())?;
    Ok(AdaptedGraph {
        graph,
        fields,
        dropped,
    })
}

/// Variance proxy for `S_F = Q^F(f)` over the edges of `g` (all of which
/// form `F`).
///
/// Same-chain edges are grouped into maximal paths `i_0 < i_1 < …` of
/// consecutive edges, each contributing its chain bound `U`; every edge
/// joining independent chains contributes its exact variance `E[X²] − 1`
/// with `X = w|D_a f|²`. Contributions are summed.
pub fn window_variance_bound(model: &WalkModel, g: &DirectedGraph) -> Result<f64> {
    check_len("model vertices", g.n_vertices(), model.n())?;
    let mut total = 0.0;
    let mut next: Vec<Option<usize>> = vec![None; g.n_vertices()];
    let mut has_prev = vec![false; g.n_vertices()];
    let mut extra_paths: Vec<Vec<usize>> = Vec::new();
    for &(i, j) in g.edges() {
        if model.same_chain(i, j) {
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            if next[lo].is_none() && !has_prev[hi] {
                next[lo] = Some(hi);
                has_prev[hi] = true;
            } else {
                // branching inside a chain: treat the edge as its own path
                extra_paths.push(vec![lo, hi]);
            }
        } else {
            total += fourth_moment_independent_edge(model.sigma2[i], model.sigma2[j]) - 1.0;
        }
    }
    for start in 0..g.n_vertices() {
        if has_prev[start] || next[start].is_none() {
            continue;
        }
        let mut path = vec![start];
        let mut v = start;
        while let Some(u) = next[v] {
            path.push(u);
            v = u;
        }
        extra_paths.push(path);
    }
    for path in extra_paths {
        let s: Vec<f64> = path.iter().map(|&v| model.sigma2[v]).collect();
        total += variance_bound_u(&s)?;
    }
    Ok(total)
}

/// `E[e^{Σ m_v ν_v}]` for the model's jointly Gaussian `ν`:
/// `Cov(ν_u, ν_v) = min(σ_u², σ_v²)` on one chain, zero across chains.
fn joint_moment(model: &WalkModel, powers: &[(usize, f64)]) -> f64 {
    let mut exponent = 0.0;
    for (a, &(u, mu)) in powers.iter().enumerate() {
        exponent += mu * model.mean(u);
        for &(v, mv) in &powers[a..] {
            if !model.same_chain(u, v) {
                continue;
            }
            let cov = model.sigma2[u].min(model.sigma2[v]);
            let pair = if u == v { 0.5 } else { 1.0 };
            exponent += pair * mu * mv * cov;
        }
    }
    exponent.exp()
}

/// `(Y_j − Y_i)² = Y_j² − 2 Y_i Y_j + Y_i²` as `(coefficient, powers)` terms.
fn squared_difference(i: usize, j: usize) -> [(f64, [(usize, f64); 2]); 3] {
    [(1.0, [(j, 2.0), (j, 0.0)]), (-2.0, [(i, 1.0), (j, 1.0)]), (1.0, [(i, 2.0), (i, 0.0)])]
}

fn merge_powers(a: &[(usize, f64); 2], b: &[(usize, f64); 2]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(4);
    for &(v, m) in a.iter().chain(b) {
        if m == 0.0 {
            continue;
        }
        match out.iter_mut().find(|(u, _)| *u == v) {
            Some(slot) => slot.1 += m,
            None => out.push((v, m)),
        }
    }
    out
}

/// Exact mean and variance of `S_F = Σ_e w_e |D_a f(e)|²` under `model`.
///
/// `fields` must carry the gradient drift of the model's potential, so that
/// `|D_a f(i,j)|² = e^{2φ(j)} (Y_j − Y_i)²` with `Y = e^ν`. Every moment is a
/// Gaussian moment generating function; pairs of edges on disjoint chains
/// are independent and skipped.
pub fn exact_statistic_moments(model: &WalkModel, g: &DirectedGraph, fields: &EdgeFields) -> Result<(f64, f64)> {
    check_len("model vertices", g.n_vertices(), model.n())?;
    check_len("weight", g.n_edges(), fields.weight().len())?;
    let edges = g.edges();
    let scale: Vec<f64> = edges
        .iter()
        .zip(fields.weight())
        .map(|(&(_, j), w)| w * (2.0 * model.potential[j]).exp())
        .collect();
    let means: Vec<f64> = edges
        .iter()
        .map(|&(i, j)| {
            squared_difference(i, j)
                .iter()
                .map(|(c, p)| c * joint_moment(model, &merge_powers(p, &[(0, 0.0), (0, 0.0)])))
                .sum()
        })
        .collect();
    let chain = |v: usize| model.membership[v].0;
    let mut variance = 0.0;
    for (e, &(i, j)) in edges.iter().enumerate() {
        let (ci, cj) = (chain(i), chain(j));
        let left = squared_difference(i, j);
        for (f, &(k, l)) in edges.iter().enumerate().skip(e) {
            let (ck, cl) = (chain(k), chain(l));
            if ci != ck && ci != cl && cj != ck && cj != cl {
                continue;
            }
            let right = squared_difference(k, l);
            let mut second = 0.0;
            for (ca, pa) in &left {
                for (cb, pb) in &right {
                    second += ca * cb * joint_moment(model, &merge_powers(pa, pb));
                }
            }
            let cov = scale[e] * scale[f] * (second - means[e] * means[f]);
            variance += if e == f { cov } else { 2.0 * cov };
        }
    }
    let mean = scale.iter().zip(&means).map(|(s, m)| s * m).sum();
    Ok((mean, variance.max(0.0)))
}

/// Which variance figure enters Cantelli's inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceModel {
    /// The exact `Var(S_F)` under the model, covariances included.
    #[default]
    Exact,
    /// The chain bound `U` summed over the window's parts
    /// ([`window_variance_bound`]).
    ChainBound,
}

/// How the excess threshold `δ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaPolicy {
    /// `δ = c·√U`.
    ScaledSqrtU(f64),
    Fixed(f64),
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        DeltaPolicy::ScaledSqrtU(3.0)
    }
}

impl DeltaPolicy {
    pub fn resolve(self, u: f64) -> f64 {
        match self {
            DeltaPolicy::ScaledSqrtU(c) => c * u.sqrt(),
            DeltaPolicy::Fixed(d) => d,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnomalyVerdict {
    /// `S_F = ⟨Δ^F f, f⟩`.
    pub statistic: f64,
    /// `|F|`.
    pub expected: f64,
    /// Variance figure `U` chosen by the [`VarianceModel`].
    pub u: f64,
    pub delta: f64,
    /// `U / (U + δ²)`.
    pub p_bound: f64,
    /// `‖g_k‖`, `k = 1..=K`.
    pub layer_norms: Vec<f64>,
    /// Thresholds on `‖g_k‖²`.
    pub thresholds: Vec<f64>,
    pub layer_flags: Vec<bool>,
    /// `g_1` on the window's vertices.
    pub first_layer: Vec<f64>,
}

impl AnomalyVerdict {
    pub fn is_anomalous(&self) -> bool {
        self.layer_flags.iter().any(|&b| b)
    }
}

/// Tests `f` (on the window's vertices) against `model` (restricted to the
/// same vertices) using the scattering transform of the windowed Laplacian
/// carried by `filters`.
pub fn anomaly_test(
    filters: &FilterPair<'_>,
    model: &WalkModel,
    f: &[f64],
    delta: DeltaPolicy,
    variance: VarianceModel,
    layers: usize,
) -> Result<AnomalyVerdict> {
    let lap = filters.source();
    let u = statistic_variance(model, lap.graph(), lap.fields(), variance)?;
    anomaly_test_with_variance(filters, f, u, delta, layers)
}

/// The variance figure `U` for `S_F` on `g` under `model`.
pub fn statistic_variance(model: &WalkModel, g: &DirectedGraph, fields: &EdgeFields, variance: VarianceModel) -> Result<f64> {
    match variance {
        VarianceModel::Exact => Ok(exact_statistic_moments(model, g, fields)?.1),
        VarianceModel::ChainBound => window_variance_bound(model, g),
    }
}

/// [`anomaly_test`] with a precomputed variance figure `u`.
pub fn anomaly_test_with_variance(
    filters: &FilterPair<'_>,
    f: &[f64],
    u: f64,
    delta: DeltaPolicy,
    layers: usize,
) -> Result<AnomalyVerdict> {
    let lap = filters.source();
    check_len("signal", lap.n(), f.len())?;
    if let Some((index, &value)) = f.iter().enumerate().find(|(_, x)| !(**x > 0.0)) {
        return Err(Error::NonPositiveSignal { index, value });
    }
    let statistic = quadratic_form(lap.graph(), lap.fields(), f)?;
    let delta = delta.resolve(u);
    let p_bound = cantelli_p(u, delta)?;
    let n_edges = lap.graph().n_edges();
    let out = scatter(filters, f, layers)?;
    let thresholds = layer_thresholds(filters.t(), lap.lambda_max(), n_edges, delta, layers);
    let layer_flags = out
        .layer_norms
        .iter()
        .zip(&thresholds)
        .map(|(g, th)| g * g >= *th)
        .collect();
    Ok(AnomalyVerdict {
        statistic,
        expected: n_edges as f64,
        u,
        delta,
        p_bound,
        layer_norms: out.layer_norms,
        thresholds,
        layer_flags,
        first_layer: out.layers[0].high.iter().copied().collect(),
    })
}
