//! Heat semigroup `G_t = e^{−tΔ}` and the low/high-pass filter pair
//! `T_t = e^{−tΔ/2}`, `S_t = (I − e^{−tΔ})^{1/2}`, all evaluated by spectral
//! mapping on the cached eigendecomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::laplacian::SpectralLaplacian;

/// `e^{−tΔ}`.
pub fn heat_operator(lap: &SpectralLaplacian, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidTime {
            expected: ">= 0",
            actual: t,
        });
    }
    Ok(lap.eigen().spectral_map(|lambda| (-t * lambda).exp()))
}

/// `‖G_t G_{t'} − G_{t+t'}‖_max`.
pub fn semigroup_defect(lap: &SpectralLaplacian, t: f64, t_prime: f64) -> Result<f64> {
    let product = heat_operator(lap, t)? * heat_operator(lap, t_prime)?;
    Ok((product - heat_operator(lap, t + t_prime)?).amax())
}

/// The diffusion time at which `1 − e^{−tλmax} = 1/2`.
pub fn default_time(lap: &SpectralLaplacian) -> Result<f64> {
    if lap.lambda_max() <= 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    Ok(std::f64::consts::LN_2 / lap.lambda_max())
}

/// Low-pass `T_t` and high-pass `S_t` for one Laplacian and one time.
#[derive(Debug, Clone)]
pub struct FilterPair<'a> {
    source: &'a SpectralLaplacian,
    t: f64,
    low_pass: DMatrix<f64>,
    high_pass: DMatrix<f64>,
    decay_factor: f64,
}

impl<'a> FilterPair<'a> {
    pub fn new(lap: &'a SpectralLaplacian, t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidTime {
                expected: "> 0",
                actual: t,
            });
        }
        let eigen = lap.eigen();
        let low_pass = eigen.spectral_map(|lambda| (-0.5 * t * lambda).exp());
        // 1 − e^{−tλ} can round to a tiny negative for λ = 0
        let high_pass = eigen.spectral_map(|lambda| (-(-t * lambda).exp_m1()).clamp(0.0, 1.0).sqrt());
        let decay_factor = -(-t * lap.lambda_max()).exp_m1();
        Ok(Self {
            source: lap,
            t,
            low_pass,
            high_pass,
            decay_factor,
        })
    }

    pub fn source(&self) -> &'a SpectralLaplacian {
        self.source
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// `T_t`.
    pub fn low_pass(&self) -> &DMatrix<f64> {
        &self.low_pass
    }

    /// `S_t`.
    pub fn high_pass(&self) -> &DMatrix<f64> {
        &self.high_pass
    }

    /// `1 − e^{−tλmax}`.
    pub fn decay_factor(&self) -> f64 {
        self.decay_factor
    }

    pub fn n(&self) -> usize {
        self.low_pass.nrows()
    }

    pub fn apply_low(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.low_pass * f
    }

    pub fn apply_high(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.high_pass * f
    }
}

/// Builds the filter pair at diffusion time `t > 0`.
pub fn make_filters(lap: &SpectralLaplacian, t: f64) -> Result<FilterPair<'_>> {
    FilterPair::new(lap, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DirectedGraph, EdgeFields};

    fn single_edge() -> SpectralLaplacian {
        let g = DirectedGraph::new(2, [(0, 1)]).unwrap();
        SpectralLaplacian::build(&g, &EdgeFields::uniform(&g)).unwrap()
    }

    #[test]
    fn heat_operator_two_by_two_closed_form() {
        let lap = single_edge();
        for t in [0.0, 0.1, 1.0, 3.0] {
            let g = heat_operator(&lap, t).unwrap();
            let e = (-2.0 * t).exp();
            let expected = DMatrix::from_row_slice(2, 2, &[(1.0 + e) / 2.0, (1.0 - e) / 2.0, (1.0 - e) / 2.0, (1.0 + e) / 2.0]);
            assert!((g - expected).amax() < 1e-14, "t={t}");
        }
    }

    #[test]
    fn heat_operator_at_zero_is_identity() {
        let g = DirectedGraph::new(4, [(0, 1), (1, 2), (0, 3)]).unwrap();
        let fields = EdgeFields::from_potential(&g, vec![0.3, 1.2, 2.0], vec![0.0, 0.5, -1.0, 0.2]).unwrap();
        let lap = SpectralLaplacian::build(&g, &fields).unwrap();
        let g0 = heat_operator(&lap, 0.0).unwrap();
        assert!((g0 - DMatrix::identity(4, 4)).amax() < 1e-13);
    }

    #[test]
    fn heat_operator_rejects_negative_time() {
        assert!(heat_operator(&single_edge(), -0.1).is_err());
    }

    #[test]
    fn long_time_limit_is_averaging() {
        let g = DirectedGraph::new(4, [(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let lap = SpectralLaplacian::build(&g, &EdgeFields::uniform(&g)).unwrap();
        let g_inf = heat_operator(&lap, 50.0).unwrap();
        assert!((g_inf - DMatrix::from_element(4, 4, 0.25)).amax() < 1e-12);
    }

    #[test]
    fn semigroup_defect_single_edge() {
        let lap = single_edge();
        assert!(semigroup_defect(&lap, 0.0, 0.0).unwrap() < 1e-15);
        assert!(semigroup_defect(&lap, 1.0, 1.0).unwrap() <= 1e-12);
    }

    #[test]
    fn filters_on_edgeless_graph() {
        let g = DirectedGraph::edgeless(3).unwrap();
        let lap = SpectralLaplacian::build(&g, &EdgeFields::uniform(&g)).unwrap();
        let fp = make_filters(&lap, 0.7).unwrap();
        assert!((fp.low_pass() - DMatrix::identity(3, 3)).amax() < 1e-15);
        assert!(fp.high_pass().amax() < 1e-15);
        assert_eq!(fp.decay_factor(), 0.0);
    }

    #[test]
    fn filters_single_edge_at_ln2() {
        let lap = single_edge();
        let fp = make_filters(&lap, std::f64::consts::LN_2).unwrap();
        // λ = 2: 1 − e^{−2 ln 2} = 3/4
        let s2 = fp.high_pass() * fp.high_pass();
        let eig = crate::eigen::SymmetricEigen::new(&s2).unwrap();
        assert!(eig.values[0].abs() < 1e-14);
        assert!((eig.values[1] - 0.75).abs() < 1e-14);
        assert!((fp.decay_factor() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn filters_reject_nonpositive_time() {
        let lap = single_edge();
        assert!(make_filters(&lap, 0.0).is_err());
        assert!(make_filters(&lap, -1.0).is_err());
        assert!(make_filters(&lap, f64::NAN).is_err());
    }

    #[test]
    fn default_time_halves_the_top_mode() {
        let lap = single_edge();
        let t = default_time(&lap).unwrap();
        assert!((t - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
        assert!((make_filters(&lap, t).unwrap().decay_factor() - 0.5).abs() < 1e-15);

        let g = DirectedGraph::new(2, [(0, 1)]).unwrap();
        let lap = SpectralLaplacian::build(&g, &EdgeFields::new(&g, vec![1.0], vec![2f64.ln()]).unwrap()).unwrap();
        assert!((default_time(&lap).unwrap() - std::f64::consts::LN_2 / 5.0).abs() < 1e-14);

        let g = DirectedGraph::edgeless(2).unwrap();
        let lap = SpectralLaplacian::build(&g, &EdgeFields::uniform(&g)).unwrap();
        assert!(matches!(default_time(&lap), Err(Error::ZeroSpectrum)));
    }

    #[test]
    fn default_time_for_lambda_max_ln2_is_one() {
        // w chosen so that λmax = 2w = ln 2
        let g = DirectedGraph::new(2, [(0, 1)]).unwrap();
        let fields = EdgeFields::new(&g, vec![std::f64::consts::LN_2 / 2.0], vec![0.0]).unwrap();
        let lap = SpectralLaplacian::build(&g, &fields).unwrap();
        assert!((default_time(&lap).unwrap() - 1.0).abs() < 1e-14);
    }
}
