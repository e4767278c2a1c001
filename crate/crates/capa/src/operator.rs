//! Singular system of the CAPA-to-CAPA radiation operator.
//!
//! Two interchangeable backends: Nystrom (symmetrized quadrature weighting,
//! dense SVD) and degenerate-kernel (Fourier coefficient matrix). Both return
//! the same `OperatorSVD` shape with node-sampled singular functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{check_resolution, green, BandlimitIndexSet};
use crate::error::{Error, Result};
use crate::geometry::QuadratureGrid;
use crate::linalg::complex_svd;

/// Default relative threshold locating the step transition of the spectrum.
pub const DEFAULT_EDOF_THRESHOLD: f64 = 1e-2;

/// Kernel samples K(r_i, s_j) on rx-grid x tx-grid nodes.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    values: DMatrix<Complex64>,
    tx_grid: Arc<QuadratureGrid>,
    rx_grid: Arc<QuadratureGrid>,
}

impl KernelMatrix {
    pub fn values(&self) -> &DMatrix<Complex64> {
        &self.values
    }

    pub fn tx_grid(&self) -> &Arc<QuadratureGrid> {
        &self.tx_grid
    }

    pub fn rx_grid(&self) -> &Arc<QuadratureGrid> {
        &self.rx_grid
    }

    /// Quadrature image of the squared Hilbert-Schmidt norm, the double
    /// integral of |K|^2 over both apertures.
    pub fn hs_norm_sq(&self) -> f64 {
        let wr = self.rx_grid.weights();
        let wt = self.tx_grid.weights();
        let mut sum = 0.0;
        for i in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                sum += wr[i] * wt[j] * self.values[(i, j)].norm_sqr();
            }
        }
        sum
    }
}

/// Assembles the LoS kernel between two disjoint apertures.
pub fn build_kernel(
    tx_grid: &Arc<QuadratureGrid>,
    rx_grid: &Arc<QuadratureGrid>,
) -> Result<KernelMatrix> {
    let lambda = tx_grid.aperture().wavelength();
    let min_sep = 1e-9 * lambda;
    let mut values = DMatrix::zeros(rx_grid.len(), tx_grid.len());
    for (i, r) in rx_grid.nodes().iter().enumerate() {
        for (j, s) in tx_grid.nodes().iter().enumerate() {
            if (r - s).norm() < min_sep {
                return Err(Error::Singularity(
                    "tx and rx apertures overlap at a node pair".into(),
                ));
            }
            values[(i, j)] = green(r, s, lambda)?;
        }
    }
    Ok(KernelMatrix {
        values,
        tx_grid: Arc::clone(tx_grid),
        rx_grid: Arc::clone(rx_grid),
    })
}

/// Singular system of a radiation operator. Functions are stored as node
/// samples on the rx (left) and tx (right) grids and are orthonormal under
/// the respective quadrature inner products.
#[derive(Clone, Debug)]
pub struct OperatorSVD {
    singular_values: Vec<f64>,
    /// Column i holds left singular-function samples on the rx grid.
    left: DMatrix<Complex64>,
    /// Column i holds right singular-function samples on the tx grid.
    right: DMatrix<Complex64>,
    tx_grid: Arc<QuadratureGrid>,
    rx_grid: Arc<QuadratureGrid>,
    edof: usize,
}

impl OperatorSVD {
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn left_function(&self, i: usize) -> DVector<Complex64> {
        self.left.column(i).into_owned()
    }

    pub fn right_function(&self, i: usize) -> DVector<Complex64> {
        self.right.column(i).into_owned()
    }

    pub fn tx_grid(&self) -> &Arc<QuadratureGrid> {
        &self.tx_grid
    }

    pub fn rx_grid(&self) -> &Arc<QuadratureGrid> {
        &self.rx_grid
    }

    /// EDoF at the default threshold, fixed at construction.
    pub fn edof(&self) -> usize {
        self.edof
    }

    pub fn operator_norm(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn hs_norm_sq(&self) -> f64 {
        self.singular_values.iter().map(|s| s * s).sum()
    }
}

/// Nystrom backend: SVD of `W_r^{1/2} K W_t^{1/2}`, with singular functions
/// recovered by unweighting, so they are orthonormal in the continuous inner
/// product rather than the Euclidean one.
pub fn operator_svd_nystrom(kernel: &KernelMatrix) -> Result<OperatorSVD> {
    let wr_sqrt: Vec<f64> = kernel.rx_grid.weights().iter().map(|w| w.sqrt()).collect();
    let wt_sqrt: Vec<f64> = kernel.tx_grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut a = kernel.values.clone();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            a[(i, j)] *= Complex64::new(wr_sqrt[i] * wt_sqrt[j], 0.0);
        }
    }
    let (mut u, sigma, mut v) = complex_svd(&a);
    for i in 0..u.nrows() {
        for c in 0..u.ncols() {
            u[(i, c)] /= Complex64::new(wr_sqrt[i], 0.0);
        }
    }
    for j in 0..v.nrows() {
        for c in 0..v.ncols() {
            v[(j, c)] /= Complex64::new(wt_sqrt[j], 0.0);
        }
    }
    finish_svd(sigma, u, v, &kernel.tx_grid, &kernel.rx_grid)
}

/// Fourier modes at half the fundamental wavenumber spacing of the aperture
/// (period 2L per dimension). Restricted to the aperture these are no longer
/// orthogonal, so compressions through them carry a Gram correction.
struct OversampledModes {
    /// Spatial frequencies (cycles/m) per dimension.
    freqs: Vec<(f64, f64)>,
    norm: f64,
}

impl OversampledModes {
    fn from_basis(basis: &BandlimitIndexSet, len_x: f64, len_y: f64, linear: bool) -> Self {
        let (nmax, mmax) = basis.max_abs_index();
        let mut freqs = Vec::new();
        if linear {
            for n in -2 * nmax..=2 * nmax {
                freqs.push((n as f64 / (2.0 * len_x), 0.0));
            }
            Self { freqs, norm: (2.0 * len_x).sqrt() }
        } else {
            let (ax, ay) = ((2 * nmax.max(1)) as f64, (2 * mmax.max(1)) as f64);
            for n in -2 * nmax..=2 * nmax {
                for m in -2 * mmax..=2 * mmax {
                    if (n as f64 / ax).powi(2) + (m as f64 / ay).powi(2) <= 1.0 + 1e-12 {
                        freqs.push((n as f64 / (2.0 * len_x), m as f64 / (2.0 * len_y)));
                    }
                }
            }
            Self {
                freqs,
                norm: (4.0 * len_x * len_y).sqrt(),
            }
        }
    }

    fn sample_matrix(&self, grid: &QuadratureGrid) -> DMatrix<Complex64> {
        DMatrix::from_fn(grid.len(), self.freqs.len(), |i, c| {
            let [x, y] = grid.local_coords()[i];
            let (fx, fy) = self.freqs[c];
            let phase = 2.0 * std::f64::consts::PI * (fx * x + fy * y);
            Complex64::new(0.0, phase).exp() / self.norm
        })
    }
}

/// Whitening factor `Phi M^{-1/2}` of a mode family under the grid inner
/// product, dropping directions below a relative eigenvalue cutoff.
fn whitened_modes(
    modes: &OversampledModes,
    grid: &QuadratureGrid,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let phi = modes.sample_matrix(grid);
    let w = DVector::from_iterator(
        grid.len(),
        grid.weights().iter().map(|&w| Complex64::new(w, 0.0)),
    );
    let mut wphi = phi.clone();
    for i in 0..wphi.nrows() {
        for j in 0..wphi.ncols() {
            wphi[(i, j)] *= w[i];
        }
    }
    let gram = phi.adjoint() * &wphi;
    let n_modes = gram.nrows();
    let eig = gram.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if max_ev <= 0.0 {
        return Err(Error::Numerical("degenerate mode Gram matrix is zero".into()));
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-10 * max_ev)
        .collect();
    let mut inv_half = DMatrix::zeros(n_modes, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let scale = Complex64::new(eig.eigenvalues[i].powf(-0.5), 0.0);
        for r in 0..n_modes {
            inv_half[(r, c)] = eig.eigenvectors[(r, i)] * scale;
        }
    }
    Ok((phi * &inv_half, wphi * &inv_half))
}

/// Degenerate-kernel backend: Galerkin compression of the operator onto a
/// band-limited Fourier family, with the wavenumber axis sampled at half the
/// fundamental spacing (period 2L) and Gram-corrected for the restriction to
/// the aperture. Reduces the SVD to a dense linear-algebra problem on the
/// coefficient matrix; singular functions come back as Fourier combinations.
pub fn operator_svd_degenerate(
    kernel: &KernelMatrix,
    tx_basis: &BandlimitIndexSet,
    rx_basis: &BandlimitIndexSet,
) -> Result<OperatorSVD> {
    check_resolution(&kernel.tx_grid, tx_basis)?;
    check_resolution(&kernel.rx_grid, rx_basis)?;
    let tx_ap = kernel.tx_grid.aperture();
    let rx_ap = kernel.rx_grid.aperture();
    let tx_modes = OversampledModes::from_basis(
        tx_basis,
        tx_ap.len_x(),
        tx_ap.len_y(),
        matches!(tx_ap.kind(), crate::geometry::ApertureKind::Linear),
    );
    let rx_modes = OversampledModes::from_basis(
        rx_basis,
        rx_ap.len_x(),
        rx_ap.len_y(),
        matches!(rx_ap.kind(), crate::geometry::ApertureKind::Linear),
    );
    // Psi = Phi M^{-1/2} is orthonormal under the grid inner product;
    // WPsi = W Phi M^{-1/2} carries the quadrature weights.
    let (psi_t, wpsi_t) = whitened_modes(&tx_modes, &kernel.tx_grid)?;
    let (psi_r, wpsi_r) = whitened_modes(&rx_modes, &kernel.rx_grid)?;
    // Coefficient matrix B = Psi_r^H W_r K W_t Psi_t.
    let b = wpsi_r.adjoint() * &kernel.values * &wpsi_t;

    let (ub, sigma, vb) = complex_svd(&b);
    let u = &psi_r * ub;
    let v = &psi_t * vb;
    finish_svd(sigma, u, v, &kernel.tx_grid, &kernel.rx_grid)
}

fn finish_svd(
    sigma: Vec<f64>,
    left: DMatrix<Complex64>,
    right: DMatrix<Complex64>,
    tx_grid: &Arc<QuadratureGrid>,
    rx_grid: &Arc<QuadratureGrid>,
) -> Result<OperatorSVD> {
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite singular values".into()));
    }
    let mut svd = OperatorSVD {
        singular_values: sigma,
        left,
        right,
        tx_grid: Arc::clone(tx_grid),
        rx_grid: Arc::clone(rx_grid),
        edof: 0,
    };
    svd.edof = edof(&svd, DEFAULT_EDOF_THRESHOLD)?;
    Ok(svd)
}

/// Count of singular values at or above `threshold * sigma_1`; the index of
/// the step-like transition of the spectrum.
pub fn edof(svd: &OperatorSVD, threshold: f64) -> Result<usize> {
    let s1 = svd.operator_norm();
    if s1 <= 0.0 {
        return Err(Error::Numerical(
            "all-zero singular spectrum has no EDoF".into(),
        ));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    Ok(svd
        .singular_values
        .iter()
        .take_while(|&&s| s >= threshold * s1)
        .count())
}
