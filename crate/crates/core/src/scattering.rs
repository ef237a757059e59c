//! The iterated transform `f_{k+1} = T_t|g_k|`, `g_{k+1} = S_t|g_k|`, `g_0 = f`.

use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::graph::check_len;
use crate::laplacian::weighted_incidence_norm;
use crate::semigroup::FilterPair;

/// One layer: the low-pass output `f_k` and the high-pass output `g_k`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub low: DVector<f64>,
    pub high: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ScatteringOutput {
    pub t: f64,
    pub decay_factor: f64,
    /// `‖f‖`.
    pub g0_norm: f64,
    /// Layers `k = 1..=K`.
    pub layers: Vec<Layer>,
    /// `‖g_k‖`.
    pub layer_norms: Vec<f64>,
    /// `‖f_k‖`.
    pub low_norms: Vec<f64>,
    /// `(1 − e^{−tλmax})^{k/2} ‖f‖`.
    pub bound_curve: Vec<f64>,
    /// `√t (1 − e^{−tλmax})^{(k−1)/2} ‖M_{√w} D_a f‖`.
    pub refined_bound: Vec<f64>,
}

impl ScatteringOutput {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Writes `k,g_norm,bound,refined_bound`, one row per layer.
    pub fn write_norms_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,g_norm,bound,refined_bound")?;
        for k in 0..self.n_layers() {
            writeln!(
                out,
                "{},{:.12e},{:.12e},{:.12e}",
                k + 1,
                self.layer_norms[k],
                self.bound_curve[k],
                self.refined_bound[k]
            )?;
        }
        Ok(())
    }

    /// Writes `vertex,value` for `g_k` (`high = true`) or `f_k`; `k` is 1-based.
    pub fn write_layer_csv<W: Write>(&self, k: usize, high: bool, mut out: W) -> std::io::Result<()> {
        let layer = &self.layers[k - 1];
        let signal = if high { &layer.high } else { &layer.low };
        writeln!(out, "vertex,value")?;
        for (v, x) in signal.iter().enumerate() {
            writeln!(out, "{v},{x:.12e}")?;
        }
        Ok(())
    }
}

/// Runs `layers` scattering layers on `f`.
pub fn scatter(filters: &FilterPair<'_>, f: &[f64], layers: usize) -> Result<ScatteringOutput> {
    if layers == 0 {
        return Err(Error::ZeroLayers);
    }
    check_len("signal", filters.n(), f.len())?;
    let first = refined_first_layer_bound(filters, f)?;
    let decay = filters.decay_factor();
    let g0_norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut current = DVector::from_column_slice(f);
    let mut out = ScatteringOutput {
        t: filters.t(),
        decay_factor: decay,
        g0_norm,
        layers: Vec::with_capacity(layers),
        layer_norms: Vec::with_capacity(layers),
        low_norms: Vec::with_capacity(layers),
        bound_curve: Vec::with_capacity(layers),
        refined_bound: Vec::with_capacity(layers),
    };
    for k in 1..=layers {
        let rectified = current.abs();
        let low = filters.apply_low(&rectified);
        let high = filters.apply_high(&rectified);
        out.low_norms.push(low.norm());
        out.layer_norms.push(high.norm());
        out.bound_curve.push(decay.powf(k as f64 / 2.0) * g0_norm);
        out.refined_bound.push(first * decay.powf((k - 1) as f64 / 2.0));
        current = high.clone();
        out.layers.push(Layer { low, high });
    }
    Ok(out)
}

/// `‖f‖² − Σ_{k≤K} ‖g_k‖²`.
///
/// Layer-wise Pythagoras telescopes to `‖f‖² = Σ_{k≤K} ‖f_k‖² + ‖g_K‖²`, so this
/// residual equals `Σ_{k≤K} ‖f_k‖² + ‖g_K‖² − Σ_{k≤K} ‖g_k‖²`; it is not small
/// in general (the kernel component of `f` stays in `f_1`).
pub fn energy_identity_defect(out: &ScatteringOutput, layers: usize) -> f64 {
    let k = layers.min(out.n_layers());
    out.g0_norm.powi(2) - out.layer_norms[..k].iter().map(|x| x * x).sum::<f64>()
}

/// `‖f‖² − Σ_{k≤K} ‖f_k‖² − ‖g_K‖²`, zero up to roundoff.
pub fn telescoped_energy_defect(out: &ScatteringOutput, layers: usize) -> f64 {
    let k = layers.min(out.n_layers());
    let low: f64 = out.low_norms[..k].iter().map(|x| x * x).sum();
    out.g0_norm.powi(2) - low - out.layer_norms[k - 1].powi(2)
}

/// `(‖S_t|f|‖, ‖S_t f‖)`; the first never exceeds the second.
pub fn beurling_deny_check(filters: &FilterPair<'_>, f: &[f64]) -> Result<(f64, f64)> {
    check_len("signal", filters.n(), f.len())?;
    let f = DVector::from_column_slice(f);
    Ok((filters.apply_high(&f.abs()).norm(), filters.apply_high(&f).norm()))
}

/// `√t ‖M_{√w} D_a f‖`, an upper bound on `‖S_t f‖` and hence on `‖g_1‖`.
pub fn refined_first_layer_bound(filters: &FilterPair<'_>, f: &[f64]) -> Result<f64> {
    let lap = filters.source();
    Ok(filters.t().sqrt() * weighted_incidence_norm(lap.graph(), lap.fields(), f)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DirectedGraph, EdgeFields};
    use crate::laplacian::SpectralLaplacian;
    use crate::semigroup::make_filters;

    fn single_edge() -> SpectralLaplacian {
        let g = DirectedGraph::new(2, [(0, 1)]).unwrap();
        SpectralLaplacian::build(&g, &EdgeFields::uniform(&g)).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_layers() {
        let lap = single_edge();
        let fp = make_filters(&lap, 1.0).unwrap();
        let out = scatter(&fp, &[0.0, 0.0], 4).unwrap();
        assert!(out.layer_norms.iter().chain(&out.low_norms).all(|&x| x == 0.0));
        assert_eq!(energy_identity_defect(&out, 4), 0.0);
    }

    #[test]
    fn edgeless_graph_keeps_all_energy_low_pass() {
        let g = DirectedGraph::edgeless(3).unwrap();
        let lap = SpectralLaplacian::build(&g, &EdgeFields::uniform(&g)).unwrap();
        let fp = make_filters(&lap, 0.5).unwrap();
        let f = [2.0, 2.0, 2.0];
        let out = scatter(&fp, &f, 3).unwrap();
        assert!(out.layer_norms.iter().all(|&x| x == 0.0));
        for k in 1..=3 {
            assert!((energy_identity_defect(&out, k) - 12.0).abs() < 1e-12);
        }
    }

    /// Straight-line 2×2 reimplementation for the single edge with w=1, a=0:
    /// eigenpairs (0, (1,1)/√2) and (2, (1,−1)/√2).
    fn two_by_two_oracle(f: [f64; 2], t: f64, layers: usize) -> Vec<f64> {
        let hi = (1.0 - (-2.0 * t).exp()).sqrt();
        let mut g = f;
        let mut norms = Vec::new();
        for _ in 0..layers {
            // S kills the mean and scales the antisymmetric part by `hi`
            let half_diff = (g[0].abs() - g[1].abs()) / 2.0;
            g = [hi * half_diff, -hi * half_diff];
            norms.push((g[0] * g[0] + g[1] * g[1]).sqrt());
        }
        norms
    }

    #[test]
    fn single_edge_matches_hand_iteration() {
        let lap = single_edge();
        let t = std::f64::consts::LN_2;
        let fp = make_filters(&lap, t).unwrap();
        let out = scatter(&fp, &[1.0, 0.0], 3).unwrap();
        let oracle = two_by_two_oracle([1.0, 0.0], t, 3);
        for (a, b) in out.layer_norms.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        // first layer: hi·|1/2|·√2 = √(3/4)·√2/2
        assert!((oracle[0] - (0.75f64).sqrt() / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pythagoras_and_telescoping() {
        let g = DirectedGraph::new(4, [(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
        let fields =
            EdgeFields::from_potential(&g, vec![0.5, 1.0, 1.5, 0.7], vec![0.0, 0.3, -0.2, 0.4]).unwrap();
        let lap = SpectralLaplacian::build(&g, &fields).unwrap();
        let fp = make_filters(&lap, 0.4).unwrap();
        let out = scatter(&fp, &[1.0, -2.0, 0.5, 3.0], 6).unwrap();
        let mut prev = out.g0_norm;
        for k in 0..6 {
            let lhs = out.low_norms[k].powi(2) + out.layer_norms[k].powi(2);
            assert!((lhs - prev * prev).abs() <= 1e-12 * prev * prev);
            prev = out.layer_norms[k];
        }
        for k in 1..=6 {
            assert!(telescoped_energy_defect(&out, k).abs() < 1e-12);
            let tail = out.layer_norms[k - 1].powi(2);
            assert!(tail <= out.decay_factor.powi(k as i32) * out.g0_norm.powi(2) + 1e-12);
        }
    }

    #[test]
    fn beurling_deny_examples() {
        let lap = single_edge();
        let fp = make_filters(&lap, 1.0).unwrap();
        let (a, b) = beurling_deny_check(&fp, &[0.3, 2.0]).unwrap();
        assert_eq!(a, b);
        let (a, b) = beurling_deny_check(&fp, &[1.0, -1.0]).unwrap();
        // |f| = (1,1) is in the kernel, so S|f| = 0 while S f = hi·f
        assert!(a < 1e-15);
        assert!((b - (1.0 - (-2.0f64).exp()).sqrt() * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn refined_bound_examples() {
        let lap = single_edge();
        let fp = make_filters(&lap, 1.0).unwrap();
        assert!((refined_first_layer_bound(&fp, &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);

        let g = DirectedGraph::new(3, [(0, 1), (1, 2)]).unwrap();
        let phi = vec![0.0, 0.8, -0.4];
        let fields = EdgeFields::from_potential(&g, vec![1.0, 2.0], phi.clone()).unwrap();
        let lap = SpectralLaplacian::build(&g, &fields).unwrap();
        let fp = make_filters(&lap, 0.3).unwrap();
        let kernel: Vec<f64> = phi.iter().map(|p| 3.0 * p.exp()).collect();
        assert!(refined_first_layer_bound(&fp, &kernel).unwrap() < 1e-14);
        let h = [0.1, -0.2, 0.05];
        let shifted: Vec<f64> = kernel.iter().zip(&h).map(|(a, b)| a + b).collect();
        let lhs = refined_first_layer_bound(&fp, &shifted).unwrap();
        let rhs = refined_first_layer_bound(&fp, &h).unwrap();
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_input() {
        let lap = single_edge();
        let fp = make_filters(&lap, 1.0).unwrap();
        assert!(matches!(scatter(&fp, &[1.0], 2), Err(Error::LengthMismatch { .. })));
        assert!(matches!(scatter(&fp, &[1.0, 2.0], 0), Err(Error::ZeroLayers)));
    }

    #[test]
    fn norms_csv_layout() {
        let lap = single_edge();
        let fp = make_filters(&lap, 1.0).unwrap();
        let out = scatter(&fp, &[1.0, 0.0], 2).unwrap();
        let mut buf = Vec::new();
        out.write_norms_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,g_norm,bound,refined_bound");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2,"));
        let mut buf = Vec::new();
        out.write_layer_csv(1, true, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
