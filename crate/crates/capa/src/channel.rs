//! Continuous spatial responses and their wavenumber-domain representation.
//!
//! The line-of-sight kernel is the scalar free-space Green's function
//! `exp(-j 2 pi d / lambda) / (4 pi d)`. Wavenumber-domain vectors use the
//! periodic Fourier basis on the aperture, truncated to the physical band
//! limit `(n / L_x)^2 + (m / L_y)^2 <= 1 / lambda^2`.

use std::sync::Arc;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{same_grid, Aperture, ApertureKind, QuadratureGrid};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Scalar free-space Green's function between two points.
pub fn green(a: &Vector3<f64>, b: &Vector3<f64>, wavelength: f64) -> Result<Complex64> {
    let d = (a - b).norm();
    if d <= 0.0 {
        return Err(Error::Singularity(
            "coincident source and observation points".into(),
        ));
    }
    let phase = -TWO_PI * d / wavelength;
    Ok(Complex64::new(0.0, phase).exp() / (4.0 * std::f64::consts::PI * d))
}

/// A user's continuous channel H(r) sampled on a quadrature grid.
#[derive(Clone, Debug)]
pub struct SpatialResponse {
    grid: Arc<QuadratureGrid>,
    samples: Vec<Complex64>,
    user_position: Vector3<f64>,
}

impl SpatialResponse {
    /// Wraps externally computed channel samples (synthetic channels, fading
    /// realizations) as a response on `grid`. `user_position` is carried as
    /// metadata only.
    pub fn from_samples(
        grid: Arc<QuadratureGrid>,
        samples: Vec<Complex64>,
        user_position: Vector3<f64>,
    ) -> Result<Self> {
        grid.norm_sq(&samples)?;
        Ok(Self {
            grid,
            samples,
            user_position,
        })
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid> {
        &self.grid
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn user_position(&self) -> Vector3<f64> {
        self.user_position
    }

    pub fn norm_sq(&self) -> f64 {
        self.grid.norm_sq(&self.samples).expect("finite by construction")
    }
}

/// Line-of-sight response of a user at `user_position` seen from every grid
/// node.
pub fn los_response(
    user_position: Vector3<f64>,
    grid: &Arc<QuadratureGrid>,
) -> Result<SpatialResponse> {
    let lambda = grid.aperture().wavelength();
    let samples = grid
        .nodes()
        .iter()
        .map(|r| green(&user_position, r, lambda))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpatialResponse {
        grid: Arc::clone(grid),
        samples,
        user_position,
    })
}

/// Gram matrix G[i][j] = <H_i, H_j> of a user set sharing one grid.
pub fn gram_matrix(responses: &[SpatialResponse]) -> Result<DMatrix<Complex64>> {
    if responses.is_empty() {
        return Err(Error::InvalidArgument("no responses given".into()));
    }
    let grid = responses[0].grid();
    if !responses.iter().all(|r| same_grid(r.grid(), grid)) {
        return Err(Error::GridMismatch);
    }
    let k = responses.len();
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = grid.inner_product(responses[i].samples(), responses[j].samples())?;
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
        // Diagonal is real by construction.
        g[(i, i)] = Complex64::new(g[(i, i)].re, 0.0);
    }
    Ok(g)
}

/// Retained Fourier index pairs inside the elliptical wavenumber band limit.
#[derive(Clone, Debug, PartialEq)]
pub struct BandlimitIndexSet {
    indices: Vec<(i64, i64)>,
    linear: bool,
    len_x: f64,
    len_y: f64,
}

impl BandlimitIndexSet {
    pub fn indices(&self) -> &[(i64, i64)] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_abs_index(&self) -> (i64, i64) {
        let n = self.indices.iter().map(|&(n, _)| n.abs()).max().unwrap_or(0);
        let m = self.indices.iter().map(|&(_, m)| m.abs()).max().unwrap_or(0);
        (n, m)
    }

    /// Orthonormal basis function phi_{nm} evaluated at a local coordinate.
    pub fn mode_value(&self, idx: usize, local: [f64; 2]) -> Complex64 {
        let (n, m) = self.indices[idx];
        let mut phase = n as f64 * local[0] / self.len_x;
        let mut norm = self.len_x;
        if !self.linear {
            phase += m as f64 * local[1] / self.len_y;
            norm *= self.len_y;
        }
        Complex64::new(0.0, TWO_PI * phase).exp() / norm.sqrt()
    }

    /// Index set enlarged by an integer factor in each dimension, keeping the
    /// elliptical shape. Degenerate-kernel SVD uses a 2x enlargement to absorb
    /// the spectral leakage of the periodic basis on a finite aperture.
    pub fn expand(&self, factor: i64) -> BandlimitIndexSet {
        assert!(factor >= 1);
        let (nmax, mmax) = self.max_abs_index();
        let (nmax, mmax) = (nmax * factor, mmax * factor);
        let mut indices = Vec::new();
        if self.linear {
            for n in -nmax..=nmax {
                indices.push((n, 0));
            }
        } else {
            let (ax, ay) = (nmax.max(1) as f64, mmax.max(1) as f64);
            for n in -nmax..=nmax {
                for m in -mmax..=mmax {
                    if (n as f64 / ax).powi(2) + (m as f64 / ay).powi(2) <= 1.0 + 1e-12 {
                        indices.push((n, m));
                    }
                }
            }
        }
        BandlimitIndexSet {
            indices,
            linear: self.linear,
            len_x: self.len_x,
            len_y: self.len_y,
        }
    }

    /// Samples of mode `idx` on a grid.
    pub fn mode_samples(&self, idx: usize, grid: &QuadratureGrid) -> Vec<Complex64> {
        grid.local_coords()
            .iter()
            .map(|&xy| self.mode_value(idx, xy))
            .collect()
    }
}

/// Elliptical band-limit index set for an aperture: linear apertures keep
/// |n| <= L_x / lambda; planar ones keep (n lambda / L_x)^2 +
/// (m lambda / L_y)^2 <= 1. Boundary ties are retained.
pub fn bandlimit_basis(aperture: &Aperture) -> BandlimitIndexSet {
    let lambda = aperture.wavelength();
    let lx = aperture.len_x();
    let mut indices = Vec::new();
    match aperture.kind() {
        ApertureKind::Linear => {
            let nmax = (lx / lambda + 1e-12).floor() as i64;
            for n in -nmax..=nmax {
                indices.push((n, 0));
            }
            BandlimitIndexSet {
                indices,
                linear: true,
                len_x: lx,
                len_y: 1.0,
            }
        }
        ApertureKind::PlanarRectangular => {
            let ly = aperture.len_y();
            let (ax, ay) = (lx / lambda, ly / lambda);
            let (nmax, mmax) = ((ax + 1e-12).floor() as i64, (ay + 1e-12).floor() as i64);
            for n in -nmax..=nmax {
                for m in -mmax..=mmax {
                    let e = (n as f64 / ax).powi(2) + (m as f64 / ay).powi(2);
                    if e <= 1.0 + 1e-12 {
                        indices.push((n, m));
                    }
                }
            }
            BandlimitIndexSet {
                indices,
                linear: false,
                len_x: lx,
                len_y: ly,
            }
        }
    }
}

/// Wavenumber-domain coefficients of a spatial response.
#[derive(Clone, Debug)]
pub struct WavenumberVector {
    coefficients: Vec<Complex64>,
    basis: BandlimitIndexSet,
}

impl WavenumberVector {
    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn basis(&self) -> &BandlimitIndexSet {
        &self.basis
    }

    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Projects a response onto the band-limited Fourier basis:
/// c_{nm} = <phi_{nm}, H>.
pub fn fourier_coefficients(
    response: &SpatialResponse,
    basis: &BandlimitIndexSet,
) -> Result<WavenumberVector> {
    check_resolution(response.grid(), basis)?;
    let grid = response.grid();
    let coefficients = (0..basis.len())
        .map(|i| {
            let phi = basis.mode_samples(i, grid);
            grid.inner_product(&phi, response.samples())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WavenumberVector {
        coefficients,
        basis: basis.clone(),
    })
}

/// Requires at least 4 grid nodes per period of the fastest retained mode.
pub fn check_resolution(grid: &QuadratureGrid, basis: &BandlimitIndexSet) -> Result<()> {
    let (nmax, mmax) = basis.max_abs_index();
    let [gx, gy] = grid.nodes_per_dim();
    let need_x = (4 * nmax.max(1)) as usize;
    if gx < need_x {
        return Err(Error::UnderResolved(format!(
            "mode |n| = {nmax} needs >= {need_x} nodes per dim, grid has {gx}"
        )));
    }
    if !basis.linear {
        let need_y = (4 * mmax.max(1)) as usize;
        if gy < need_y {
            return Err(Error::UnderResolved(format!(
                "mode |m| = {mmax} needs >= {need_y} nodes per dim, grid has {gy}"
            )));
        }
    }
    Ok(())
}

/// Transmit power budget and noise level shared by all SNR-dependent results.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBudget {
    /// Total transmit power P (W).
    pub total_power: f64,
    /// Noise variance sigma^2 (W).
    pub noise_power: f64,
    /// Optional per-user powers; defaults to an equal split of `total_power`.
    #[serde(default)]
    pub per_user_power: Option<Vec<f64>>,
}

impl LinkBudget {
    pub fn new(total_power: f64, noise_power: f64) -> Result<Self> {
        let b = Self {
            total_power,
            noise_power,
            per_user_power: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_power > 0.0 && self.total_power.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "total power must be > 0, got {}",
                self.total_power
            )));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise power must be > 0, got {}",
                self.noise_power
            )));
        }
        if let Some(p) = &self.per_user_power {
            if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidArgument("per-user powers must be >= 0".into()));
            }
            let sum: f64 = p.iter().sum();
            if sum > self.total_power * (1.0 + 1e-9) {
                return Err(Error::InvalidArgument(format!(
                    "per-user powers sum to {sum}, exceeding total power {}",
                    self.total_power
                )));
            }
        }
        Ok(())
    }

    /// Power share of user `k` out of `n_users`.
    pub fn user_power(&self, k: usize, n_users: usize) -> f64 {
        match &self.per_user_power {
            Some(p) => p[k],
            None => self.total_power / n_users as f64,
        }
    }
}
