//! Randomized invariant suites, shared by the `selftest` subcommand.
//!
//! Algebraic checks always use [`ALGEBRAIC_SEED`]; only the Monte Carlo
//! checks follow the caller's seed.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::Result;
use crate::graph::{orient_by_order, DirectedGraph, EdgeFields};
use crate::laplacian::{quadratic_form, SpectralLaplacian};
use crate::scattering::{beurling_deny_check, scatter};
use crate::semigroup::{heat_operator, make_filters, semigroup_defect};
use crate::stochastic::{
    adapted_fields, cantelli_p, lognormal_moment, simulate_walk_seeded, stream_rng, variance_bound_u, WalkModel,
};

pub const ALGEBRAIC_SEED: u64 = 0x5eed_cafe;

/// A weakly connected graph oriented by vertex order, with a gradient drift.
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: DirectedGraph,
    pub fields: EdgeFields,
    pub phi: Vec<f64>,
}

/// Random tree on `n` vertices plus each remaining pair with probability
/// `extra`; `w ∈ (0, 2]`, `|φ| ≤ 2`.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, n: usize, extra: f64) -> Instance {
    let mut pairs = Vec::new();
    for v in 1..n {
        pairs.push((rng.random_range(0..v), v));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !pairs.contains(&(i, j)) && rng.random::<f64>() < extra {
                pairs.push((i, j));
            }
        }
    }
    let graph = orient_by_order(n, pairs).expect("distinct ordered pairs");
    let weight = (0..graph.n_edges()).map(|_| 2.0 - 2.0 * rng.random::<f64>()).collect();
    let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect();
    let fields = EdgeFields::from_potential(&graph, weight, phi.clone()).expect("gradient drift");
    Instance { graph, fields, phi }
}

/// A signed signal with standard normal entries.
pub fn random_signal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<24} {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelftestConfig {
    pub seed: u64,
    /// Skip the Monte Carlo checks.
    pub quick: bool,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self { seed: 42, quick: false }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

const TIMES: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

pub fn positivity(seed: u64, graphs: usize) -> Result<Check> {
    let mut rng = stream_rng(seed, 1);
    let mut worst = f64::INFINITY;
    for _ in 0..graphs {
        let n = rng.random_range(2..=30);
        let inst = random_instance(&mut rng, n, 0.1);
        let lap = SpectralLaplacian::build(&inst.graph, &inst.fields)?;
        for t in TIMES {
            worst = worst.min(heat_operator(&lap, t)?.min());
        }
    }
    Ok(check("positivity", worst >= -1e-10, format!("min entry {worst:.3e} over {graphs} graphs")))
}

pub fn semigroup(seed: u64, graphs: usize) -> Result<Check> {
    let mut rng = stream_rng(seed, 2);
    let mut worst = 0.0f64;
    for _ in 0..graphs {
        let n = rng.random_range(2..=15);
        let inst = random_instance(&mut rng, n, 0.2);
        let lap = SpectralLaplacian::build(&inst.graph, &inst.fields)?;
        let (t, s) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        worst = worst.max(semigroup_defect(&lap, t, s)?);
    }
    Ok(check("semigroup", worst <= 1e-10, format!("max defect {worst:.3e}")))
}

/// Pythagoras per layer, the two decay bounds, and Beurling–Deny, all on the
/// same random instances.
pub fn layer_invariants(seed: u64, instances: usize, layers: usize) -> Result<Vec<Check>> {
    let mut rng = stream_rng(seed, 3);
    let (mut pyth, mut decay, mut refined, mut bd) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..instances {
        let n = rng.random_range(2..=20);
        let inst = random_instance(&mut rng, n, 0.15);
        let lap = SpectralLaplacian::build(&inst.graph, &inst.fields)?;
        let t = TIMES[rng.random_range(0..TIMES.len())];
        let filters = make_filters(&lap, t)?;
        let f = random_signal(&mut rng, n);
        let out = scatter(&filters, &f, layers)?;
        let mut prev = out.g0_norm;
        for k in 0..layers {
            let (fk, gk) = (out.low_norms[k], out.layer_norms[k]);
            let rel = (fk * fk + gk * gk - prev * prev).abs() / (prev * prev).max(f64::MIN_POSITIVE);
            pyth = pyth.max(if prev > 0.0 { rel } else { 0.0 });
            decay = decay.max(gk - out.bound_curve[k]);
            refined = refined.max(gk - out.refined_bound[k]);
            prev = gk;
        }
        let (rectified, signed) = beurling_deny_check(&filters, &f)?;
        bd = bd.max(rectified - signed);
    }
    Ok(vec![
        check("pythagoras", pyth <= 1e-8, format!("max relative defect {pyth:.3e}")),
        check("beurling-deny", bd <= 1e-10, format!("max ‖S|f|‖ − ‖Sf‖ = {bd:.3e}")),
        check("decay bound", decay <= 1e-8, format!("max excess {decay:.3e}")),
        check("refined decay bound", refined <= 1e-8, format!("max excess {refined:.3e}")),
    ])
}

pub fn kernel_suppression(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = stream_rng(seed, 4);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(2..=20);
        let inst = random_instance(&mut rng, n, 0.15);
        let lap = SpectralLaplacian::build(&inst.graph, &inst.fields)?;
        let c = rng.random_range(-5.0..5.0);
        let f: Vec<f64> = inst.phi.iter().map(|p| c * p.exp()).collect();
        let scale = c.abs() * inst.phi.iter().map(|p| (2.0 * p).exp()).sum::<f64>().sqrt();
        let out = scatter(&make_filters(&lap, 1.0)?, &f, 5)?;
        worst = worst.max(out.layer_norms.iter().sum::<f64>() / scale);
    }
    Ok(check("kernel suppression", worst <= 1e-7, format!("max Σ‖g_k‖ / ‖c e^φ‖ = {worst:.3e}")))
}

/// Empirical `E[e^{nν}]` against the closed form, `samples` draws per `σ²`.
pub fn moments(seed: u64, samples: usize) -> Check {
    let mut worst = (0.0f64, 0.0f64);
    for (s, sigma2) in [0.05f64, 0.2].into_iter().enumerate() {
        let chunks = 64usize;
        let per = samples.div_ceil(chunks);
        let sums = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(seed, 100 + (s * chunks + c) as u64);
                let mut acc = [0.0f64; 4];
                for _ in 0..per {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let y = (sigma2.sqrt() * z - sigma2 / 2.0).exp();
                    let mut p = 1.0;
                    for a in acc.iter_mut() {
                        p *= y;
                        *a += p;
                    }
                }
                acc
            })
            .reduce(|| [0.0; 4], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]);
        for (k, sum) in sums.iter().enumerate() {
            let n = k as u32 + 1;
            let rel = (sum / (per * chunks) as f64 / lognormal_moment(n, sigma2) - 1.0).abs();
            if n <= 2 {
                worst.0 = worst.0.max(rel);
            } else {
                worst.1 = worst.1.max(rel);
            }
        }
    }
    check(
        "lognormal moments",
        worst.0 <= 0.01 && worst.1 <= 0.05,
        format!("max relative error {:.2e} (n ≤ 2), {:.2e} (n = 3, 4)", worst.0, worst.1),
    )
}

/// Chain model on `n + 1` vertices with `σ²` ramping up to `top`.
pub fn ramp_chain(n: usize, top: f64) -> WalkModel {
    let sigma2 = (0..=n).map(|j| top * (j + 1) as f64 / (n + 1) as f64).collect();
    let phi = (0..=n).map(|j| 0.3 * (j as f64).sin() + 3.0).collect();
    WalkModel::single_chain(phi, sigma2).expect("ramp is increasing")
}

/// `S_F` over `sims` independent walks on a chain model.
pub fn chain_statistics(model: &WalkModel, seed: u64, sims: usize) -> Result<Vec<f64>> {
    let n = model.n();
    let g = DirectedGraph::new(n, (0..n - 1).map(|i| (i, i + 1)))?;
    let adapted = adapted_fields(model, &g)?;
    (0..sims)
        .into_par_iter()
        .map(|s| {
            let f = simulate_walk_seeded(model, seed, s as u64);
            quadratic_form(&adapted.graph, &adapted.fields, &f)
        })
        .collect()
}

pub fn chain_mean_and_coverage(seed: u64, sims: usize) -> Result<Vec<Check>> {
    let model = ramp_chain(5, 0.2);
    let s = chain_statistics(&model, seed, sims)?;
    let m = s.len() as f64;
    let mean = s.iter().sum::<f64>() / m;
    let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let se = (var / m).sqrt();
    let edges = 5.0;
    let mean_ok = (mean - edges).abs() <= 4.0 * se;
    let u = variance_bound_u(model.sigma2())?;
    let mut cover_ok = true;
    let mut parts = Vec::new();
    for c in [1.0, 2.0, 5.0] {
        let delta = c * u.sqrt();
        let p = cantelli_p(u, delta)?;
        let hits = s.iter().filter(|&&x| x >= edges + delta).count() as f64 / m;
        let bin_se = (p * (1.0 - p) / m).sqrt();
        cover_ok &= hits <= p + 3.0 * bin_se;
        parts.push(format!("{hits:.4}≤{p:.4}"));
    }
    Ok(vec![
        check("mean of S_F", mean_ok, format!("mean {mean:.4} vs |F| = 5, SE {se:.4}")),
        check("cantelli coverage", cover_ok, parts.join(", ")),
    ])
}

pub fn run(config: SelftestConfig) -> Result<Report> {
    let mut checks = vec![
        positivity(ALGEBRAIC_SEED, 200)?,
        semigroup(ALGEBRAIC_SEED, 100)?,
    ];
    checks.extend(layer_invariants(ALGEBRAIC_SEED, 500, 8)?);
    checks.push(kernel_suppression(ALGEBRAIC_SEED, 100)?);
    if !config.quick {
        checks.push(moments(config.seed, 1_000_000));
        checks.extend(chain_mean_and_coverage(config.seed, 100_000)?);
    }
    Ok(Report { checks })
}
