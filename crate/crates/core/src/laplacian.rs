//! The drift-weighted Laplacian `Δ_{w,a} = D_a* M_w D_a`.

use nalgebra::{DMatrix, DVector};

use crate::eigen::SymmetricEigen;
use crate::error::{Error, Result};
use crate::graph::{check_len, DirectedGraph, EdgeFields};

/// Eigenvalues at or above `-NEGATIVE_CLAMP · max(1, λmax)` but below zero are
/// treated as roundoff and set to zero.
pub const NEGATIVE_CLAMP: f64 = 1e-10;
/// Eigenvalues within `ROUNDOFF_SNAP · max(1, λmax)` of zero are set to zero;
/// `√(1 − e^{−tλ})` would otherwise amplify roundoff in the kernel.
pub const ROUNDOFF_SNAP: f64 = 1e-12;

/// `(D_a f)(i,j) = f(j) − e^{a(i,j)} f(i)`, one value per edge.
pub fn apply_incidence(g: &DirectedGraph, drift: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    check_len("drift", g.n_edges(), drift.len())?;
    check_len("signal", g.n_vertices(), f.len())?;
    Ok(g.edges()
        .iter()
        .zip(drift)
        .map(|(&(i, j), &a)| f[j] - a.exp() * f[i])
        .collect())
}

/// `Q_{w,a}(f) = Σ w(i,j) |e^{a(i,j)} f(i) − f(j)|²`.
pub fn quadratic_form(g: &DirectedGraph, fields: &EdgeFields, f: &[f64]) -> Result<f64> {
    let diff = apply_incidence(g, fields.drift(), f)?;
    Ok(diff.iter().zip(fields.weight()).map(|(d, w)| w * d * d).sum())
}

/// `‖M_{√w} D_a f‖`, the square root of the quadratic form.
pub fn weighted_incidence_norm(g: &DirectedGraph, fields: &EdgeFields, f: &[f64]) -> Result<f64> {
    quadratic_form(g, fields, f).map(f64::sqrt)
}

/// Assembles the dense matrix of `Δ_{w,a}`.
pub fn assemble(g: &DirectedGraph, fields: &EdgeFields) -> Result<DMatrix<f64>> {
    check_len("weight", g.n_edges(), fields.weight().len())?;
    let n = g.n_vertices();
    let mut m = DMatrix::zeros(n, n);
    for ((&(i, j), &w), &a) in g.edges().iter().zip(fields.weight()).zip(fields.drift()) {
        if !(w > 0.0) {
            return Err(Error::NonPositiveWeight(i, j, w));
        }
        let ea = a.exp();
        m[(i, i)] += w * ea * ea;
        m[(j, j)] += w;
        m[(i, j)] -= w * ea;
        m[(j, i)] -= w * ea;
    }
    Ok(m)
}

/// `Δ_{w,a}` with its eigendecomposition computed at construction.
#[derive(Debug, Clone)]
pub struct SpectralLaplacian {
    graph: DirectedGraph,
    fields: EdgeFields,
    matrix: DMatrix<f64>,
    eigen: SymmetricEigen,
    lambda_max: f64,
    lambda_1: Option<f64>,
}

impl SpectralLaplacian {
    pub fn build(g: &DirectedGraph, fields: &EdgeFields) -> Result<Self> {
        let matrix = assemble(g, fields)?;
        let mut eigen = SymmetricEigen::new(&matrix)?;
        let lambda_max = eigen.values.iter().copied().fold(0.0, f64::max);
        let floor = -NEGATIVE_CLAMP * lambda_max.max(1.0);
        let snap = ROUNDOFF_SNAP * lambda_max.max(1.0);
        for x in eigen.values.iter_mut() {
            if *x < floor {
                return Err(Error::NegativeEigenvalue(*x));
            }
            if *x <= snap {
                *x = 0.0;
            }
        }
        let mut lap = Self {
            graph: g.clone(),
            fields: fields.clone(),
            matrix,
            eigen,
            lambda_max,
            lambda_1: None,
        };
        if lap.kernel_dimension(lap.default_zero_tol()) == 1 && g.n_vertices() > 1 {
            lap.lambda_1 = Some(lap.eigen.values[1]);
        }
        Ok(lap)
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn fields(&self) -> &EdgeFields {
        &self.fields
    }

    pub fn n(&self) -> usize {
        self.graph.n_vertices()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Nondecreasing eigenvalues.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigen.values
    }

    /// Orthonormal eigenvectors as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigen.vectors
    }

    pub fn eigen(&self) -> &SymmetricEigen {
        &self.eigen
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `1e-9 · max(1, λmax)`.
    pub fn default_zero_tol(&self) -> f64 {
        1e-9 * self.lambda_max.max(1.0)
    }

    /// Number of eigenvalues at or below `zero_tol`.
    pub fn kernel_dimension(&self, zero_tol: f64) -> usize {
        self.eigen.values.iter().filter(|&&x| x <= zero_tol).count()
    }

    /// The smallest nonzero eigenvalue; defined only when the kernel is
    /// one-dimensional.
    pub fn lambda_1(&self) -> Result<f64> {
        self.lambda_1
            .ok_or_else(|| Error::DegenerateKernel(self.kernel_dimension(self.default_zero_tol())))
    }

    /// `Δ f`.
    pub fn apply(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.matrix * f
    }

    pub fn quadratic_form(&self, f: &[f64]) -> Result<f64> {
        quadratic_form(&self.graph, &self.fields, f)
    }

    /// Writes the matrix as comma-separated rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.matrix.row_iter() {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_edge(w: f64, a: f64) -> (DirectedGraph, EdgeFields) {
        let g = DirectedGraph::new(2, [(0, 1)]).unwrap();
        let fields = EdgeFields::new(&g, vec![w], vec![a]).unwrap();
        (g, fields)
    }

    fn path(n: usize) -> DirectedGraph {
        DirectedGraph::new(n, (0..n - 1).map(|i| (i, i + 1))).unwrap()
    }

    #[test]
    fn incidence_examples() {
        let (g, _) = single_edge(1.0, 0.0);
        assert_eq!(apply_incidence(&g, &[0.0], &[1.0, 1.0]).unwrap(), vec![0.0]);
        assert_eq!(apply_incidence(&g, &[0.0], &[1.0, 3.0]).unwrap(), vec![2.0]);
        let d = apply_incidence(&g, &[2f64.ln()], &[1.0, 2.0]).unwrap();
        assert!(d[0].abs() < 1e-15);
    }

    #[test]
    fn quadratic_form_on_path() {
        let g = path(3);
        let q = quadratic_form(&g, &EdgeFields::uniform(&g), &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(q, 2.0);
    }

    #[test]
    fn quadratic_form_vanishes_on_kernel_vector() {
        let g = DirectedGraph::new(4, [(0, 1), (1, 2), (0, 3), (2, 3)]).unwrap();
        let phi = vec![0.3, -0.7, 1.1, 0.2];
        let fields = EdgeFields::from_potential(&g, vec![0.5, 1.5, 2.0, 0.1], phi.clone()).unwrap();
        let f: Vec<f64> = phi.iter().map(|p| 2.5 * p.exp()).collect();
        assert!(quadratic_form(&g, &fields, &f).unwrap() < 1e-24);
    }

    #[test]
    fn build_single_edge_plain() {
        let (g, fields) = single_edge(1.0, 0.0);
        let lap = SpectralLaplacian::build(&g, &fields).unwrap();
        assert_eq!(lap.matrix().as_slice(), &[1.0, -1.0, -1.0, 1.0]);
        assert!(lap.eigenvalues()[0].abs() < 1e-15);
        assert!((lap.eigenvalues()[1] - 2.0).abs() < 1e-14);
        assert!((lap.lambda_1().unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn build_single_edge_with_drift() {
        let (g, fields) = single_edge(1.0, 2f64.ln());
        let lap = SpectralLaplacian::build(&g, &fields).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -2.0, 1.0]);
        assert!((lap.matrix() - expected).amax() < 1e-14);
        assert!((lap.eigenvalues()[1] - 5.0).abs() < 1e-13);
        assert!((lap.lambda_1().unwrap() - 5.0).abs() < 1e-13);
        assert_eq!(lap.kernel_dimension(lap.default_zero_tol()), 1);
    }

    #[test]
    fn edgeless_graph() {
        let g = DirectedGraph::edgeless(3).unwrap();
        let lap = SpectralLaplacian::build(&g, &EdgeFields::uniform(&g)).unwrap();
        assert!(lap.matrix().iter().all(|&x| x == 0.0));
        assert_eq!(lap.kernel_dimension(lap.default_zero_tol()), 3);
        assert_eq!(lap.lambda_max(), 0.0);
        assert!(matches!(lap.lambda_1(), Err(Error::DegenerateKernel(3))));
    }

    #[test]
    fn three_path_spectrum() {
        let g = path(3);
        let lap = SpectralLaplacian::build(&g, &EdgeFields::uniform(&g)).unwrap();
        assert!((lap.lambda_1().unwrap() - 1.0).abs() < 1e-13);
        assert!((lap.lambda_max() - 3.0).abs() < 1e-13);
    }

    #[test]
    fn kernel_dimension_counts_components() {
        let g = DirectedGraph::new(4, [(0, 1), (2, 3)]).unwrap();
        let lap = SpectralLaplacian::build(&g, &EdgeFields::uniform(&g)).unwrap();
        assert_eq!(lap.kernel_dimension(lap.default_zero_tol()), 2);

        let g = path(5);
        let fields =
            EdgeFields::from_potential(&g, vec![1.0; 4], vec![0.0, 0.4, -0.3, 0.9, 0.1]).unwrap();
        let lap = SpectralLaplacian::build(&g, &fields).unwrap();
        assert_eq!(lap.kernel_dimension(lap.default_zero_tol()), 1);
    }

    #[test]
    fn csv_dump_has_one_row_per_vertex() {
        let g = path(3);
        let lap = SpectralLaplacian::build(&g, &EdgeFields::uniform(&g)).unwrap();
        let mut buf = Vec::new();
        lap.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
    }
}
