//! Apertures and quadrature grids.
//!
//! Every continuous integral over an aperture is evaluated as a weighted sum
//! over a Gauss-Legendre tensor grid. Discrete arrays (SPDAs) reuse the same
//! grid type with lattice nodes and per-element measure weights, so both
//! array kinds flow through identical inner-product machinery.

use std::sync::Arc;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApertureKind {
    Linear,
    PlanarRectangular,
}

/// A flat radiating aperture: a segment (linear) or rectangle (planar) with a
/// local orthonormal frame `(axis_x, axis_y, normal)`.
#[derive(Clone, Debug)]
pub struct Aperture {
    kind: ApertureKind,
    center: Vector3<f64>,
    len_x: f64,
    len_y: f64,
    axis_x: Vector3<f64>,
    axis_y: Vector3<f64>,
    normal: Vector3<f64>,
    wavelength: f64,
}

impl Aperture {
    /// Linear aperture along the global x axis, normal along +z.
    pub fn linear(center: Vector3<f64>, len_x: f64, wavelength: f64) -> Result<Self> {
        Self::new(
            ApertureKind::Linear,
            center,
            len_x,
            0.0,
            Vector3::x(),
            Vector3::y(),
            Vector3::z(),
            wavelength,
        )
    }

    /// Planar rectangular aperture in the global xy plane, normal along +z.
    pub fn planar(center: Vector3<f64>, len_x: f64, len_y: f64, wavelength: f64) -> Result<Self> {
        Self::new(
            ApertureKind::PlanarRectangular,
            center,
            len_x,
            len_y,
            Vector3::x(),
            Vector3::y(),
            Vector3::z(),
            wavelength,
        )
    }

    /// Fully specified aperture with an explicit local frame.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: ApertureKind,
        center: Vector3<f64>,
        len_x: f64,
        len_y: f64,
        axis_x: Vector3<f64>,
        axis_y: Vector3<f64>,
        normal: Vector3<f64>,
        wavelength: f64,
    ) -> Result<Self> {
        if !(len_x.is_finite() && len_y.is_finite() && wavelength.is_finite()) {
            return Err(Error::Geometry("non-finite aperture dimensions".into()));
        }
        if len_x <= 0.0 {
            return Err(Error::Geometry(format!("len_x must be > 0, got {len_x}")));
        }
        if wavelength <= 0.0 {
            return Err(Error::Geometry(format!(
                "wavelength must be > 0, got {wavelength}"
            )));
        }
        match kind {
            ApertureKind::Linear if len_y != 0.0 => {
                return Err(Error::Geometry("linear aperture requires len_y = 0".into()));
            }
            ApertureKind::PlanarRectangular if len_y <= 0.0 => {
                return Err(Error::Geometry(format!(
                    "planar aperture requires len_y > 0, got {len_y}"
                )));
            }
            _ => {}
        }
        for (name, v) in [("axis_x", &axis_x), ("axis_y", &axis_y), ("normal", &normal)] {
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Geometry(format!("{name} must have unit norm")));
            }
        }
        if axis_x.dot(&axis_y).abs() > 1e-12
            || axis_x.dot(&normal).abs() > 1e-12
            || axis_y.dot(&normal).abs() > 1e-12
        {
            return Err(Error::Geometry("local frame must be orthonormal".into()));
        }
        Ok(Self {
            kind,
            center,
            len_x,
            len_y,
            axis_x,
            axis_y,
            normal,
            wavelength,
        })
    }

    pub fn kind(&self) -> ApertureKind {
        self.kind
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn len_x(&self) -> f64 {
        self.len_x
    }

    pub fn len_y(&self) -> f64 {
        self.len_y
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Length (m) for linear apertures, area (m^2) for planar ones.
    pub fn measure(&self) -> f64 {
        match self.kind {
            ApertureKind::Linear => self.len_x,
            ApertureKind::PlanarRectangular => self.len_x * self.len_y,
        }
    }

    /// Global position of the local coordinate `(x, y)`, where x spans
    /// `[-len_x/2, len_x/2]` and y likewise.
    pub fn point_at(&self, x: f64, y: f64) -> Vector3<f64> {
        self.center + self.axis_x * x + self.axis_y * y
    }

    /// Default quadrature resolution: `max(16, ceil(6 L / lambda))` per
    /// dimension, so the fastest Green's-kernel oscillation across the
    /// aperture is resolved by several nodes per period.
    pub fn default_nodes_per_dim(&self) -> usize {
        let longest = self.len_x.max(self.len_y);
        16usize.max((6.0 * longest / self.wavelength).ceil() as usize)
    }
}

/// Uniform lattice layout for a spatially discrete array.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpdaConfig {
    /// Element spacing per dimension (m).
    pub spacing: f64,
    /// Elements along the aperture x axis.
    pub count_x: usize,
    /// Elements along the aperture y axis (1 for linear apertures).
    pub count_y: usize,
}

impl SpdaConfig {
    pub fn linear(spacing: f64, count: usize) -> Self {
        Self {
            spacing,
            count_x: count,
            count_y: 1,
        }
    }

    /// Densest lattice with the given spacing that fits inside the aperture.
    /// Counts come out as `floor(L/d)`, dropping to fewer elements whenever
    /// the symmetric lattice extent would exceed the aperture.
    pub fn fill(aperture: &Aperture, spacing: f64) -> Result<Self> {
        if spacing <= 0.0 || !spacing.is_finite() {
            return Err(Error::Geometry(format!("spacing must be > 0, got {spacing}")));
        }
        let fit = |len: f64| -> usize {
            let mut n = (len / spacing).floor() as usize;
            while n > 1 && (n - 1) as f64 * spacing > len {
                n -= 1;
            }
            n.max(1)
        };
        let count_x = fit(aperture.len_x);
        let count_y = match aperture.kind {
            ApertureKind::Linear => 1,
            ApertureKind::PlanarRectangular => fit(aperture.len_y),
        };
        Ok(Self {
            spacing,
            count_x,
            count_y,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    /// Gauss-Legendre tensor-product rule; weights sum to the aperture measure.
    Gauss,
    /// SPDA lattice; one node per element, weight = element effective measure
    /// (`d` for linear, `d^2` for planar).
    SpdaLattice,
}

/// Nodes and weights discretizing an aperture. All integrals, inner products,
/// and kernel assemblies in the crate run over one of these.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    aperture: Aperture,
    kind: GridKind,
    nodes: Vec<Vector3<f64>>,
    /// Local (x, y) coordinate of each node on the aperture.
    local: Vec<[f64; 2]>,
    weights: Vec<f64>,
    nodes_per_dim: [usize; 2],
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Builds a Gauss-Legendre tensor grid on the aperture. The weight sum
/// reproduces the aperture measure to round-off.
pub fn build_quadrature(aperture: &Aperture, nodes_per_dim: usize) -> Result<Arc<QuadratureGrid>> {
    if nodes_per_dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "nodes_per_dim must be >= 2, got {nodes_per_dim}"
        )));
    }
    let (x1, w1) = gauss_legendre(nodes_per_dim);
    let mut nodes = Vec::new();
    let mut local = Vec::new();
    let mut weights = Vec::new();
    let hx = aperture.len_x / 2.0;
    match aperture.kind {
        ApertureKind::Linear => {
            for (&xi, &wi) in x1.iter().zip(&w1) {
                let x = xi * hx;
                nodes.push(aperture.point_at(x, 0.0));
                local.push([x, 0.0]);
                weights.push(wi * hx);
            }
        }
        ApertureKind::PlanarRectangular => {
            let hy = aperture.len_y / 2.0;
            for (&xi, &wxi) in x1.iter().zip(&w1) {
                for (&yi, &wyi) in x1.iter().zip(&w1) {
                    let (x, y) = (xi * hx, yi * hy);
                    nodes.push(aperture.point_at(x, y));
                    local.push([x, y]);
                    weights.push(wxi * hx * wyi * hy);
                }
            }
        }
    }
    let ny = match aperture.kind {
        ApertureKind::Linear => 1,
        ApertureKind::PlanarRectangular => nodes_per_dim,
    };
    Ok(Arc::new(QuadratureGrid {
        aperture: aperture.clone(),
        kind: GridKind::Gauss,
        nodes,
        local,
        weights,
        nodes_per_dim: [nodes_per_dim, ny],
    }))
}

/// Element positions of a centered uniform SPDA lattice inside the aperture.
pub fn sample_spda(aperture: &Aperture, cfg: &SpdaConfig) -> Result<Vec<Vector3<f64>>> {
    Ok(spda_grid(aperture, cfg)?.nodes().to_vec())
}

/// SPDA lattice as a grid: nodes at the element positions, each weighted by
/// its element measure, so SPDA inner products are a sampling of the same
/// continuous ones. The per-dimension element extent is the lattice cell
/// size capped at half a wavelength: a dense lattice tiles the aperture,
/// while sparse elements keep their physical size instead of inheriting the
/// uncovered aperture between them.
pub fn spda_grid(aperture: &Aperture, cfg: &SpdaConfig) -> Result<Arc<QuadratureGrid>> {
    if cfg.spacing <= 0.0 || !cfg.spacing.is_finite() {
        return Err(Error::Geometry(format!(
            "spacing must be > 0, got {}",
            cfg.spacing
        )));
    }
    if cfg.count_x == 0 || cfg.count_y == 0 {
        return Err(Error::Geometry("element counts must be >= 1".into()));
    }
    if matches!(aperture.kind, ApertureKind::Linear) && cfg.count_y != 1 {
        return Err(Error::Geometry("linear aperture requires count_y = 1".into()));
    }
    let extent = |n: usize| (n - 1) as f64 * cfg.spacing;
    let tol = 1e-12 * aperture.len_x.max(1.0);
    if extent(cfg.count_x) > aperture.len_x + tol {
        return Err(Error::Geometry(format!(
            "lattice extent {:.6} m exceeds aperture len_x {:.6} m",
            extent(cfg.count_x),
            aperture.len_x
        )));
    }
    if cfg.count_y > 1 && extent(cfg.count_y) > aperture.len_y + tol {
        return Err(Error::Geometry(format!(
            "lattice extent {:.6} m exceeds aperture len_y {:.6} m",
            extent(cfg.count_y),
            aperture.len_y
        )));
    }
    let extent_cap = aperture.wavelength / 2.0;
    let dim_measure = |len: f64, n: usize| (len / n as f64).min(extent_cap);
    let measure = match aperture.kind {
        ApertureKind::Linear => dim_measure(aperture.len_x, cfg.count_x),
        ApertureKind::PlanarRectangular => {
            dim_measure(aperture.len_x, cfg.count_x) * dim_measure(aperture.len_y, cfg.count_y)
        }
    };
    let offset = |i: usize, n: usize| (i as f64 - (n - 1) as f64 / 2.0) * cfg.spacing;
    let mut nodes = Vec::new();
    let mut local = Vec::new();
    let mut weights = Vec::new();
    for ix in 0..cfg.count_x {
        for iy in 0..cfg.count_y {
            let (x, y) = (offset(ix, cfg.count_x), offset(iy, cfg.count_y));
            nodes.push(aperture.point_at(x, y));
            local.push([x, y]);
            weights.push(measure);
        }
    }
    Ok(Arc::new(QuadratureGrid {
        aperture: aperture.clone(),
        kind: GridKind::SpdaLattice,
        nodes,
        local,
        weights,
        nodes_per_dim: [cfg.count_x, cfg.count_y],
    }))
}

impl QuadratureGrid {
    pub fn aperture(&self) -> &Aperture {
        &self.aperture
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.nodes
    }

    pub fn local_coords(&self) -> &[[f64; 2]] {
        &self.local
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nodes_per_dim(&self) -> [usize; 2] {
        self.nodes_per_dim
    }

    /// `sum_i w_i f(r_i)`, the quadrature image of the aperture integral.
    pub fn integrate_fn(&self, f: impl Fn(&Vector3<f64>) -> Complex64) -> Result<Complex64> {
        let samples: Vec<Complex64> = self.nodes.iter().map(f).collect();
        self.integrate(&samples)
    }

    /// Integrates samples given per node.
    pub fn integrate(&self, samples: &[Complex64]) -> Result<Complex64> {
        self.check_samples(samples, "integrand")?;
        Ok(self
            .weights
            .iter()
            .zip(samples)
            .map(|(&w, &s)| s * w)
            .sum())
    }

    /// `<f, g> = sum_i w_i conj(f_i) g_i`.
    pub fn inner_product(&self, f: &[Complex64], g: &[Complex64]) -> Result<Complex64> {
        self.check_samples(f, "left argument")?;
        self.check_samples(g, "right argument")?;
        Ok(self
            .weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(&w, (&fi, &gi))| fi.conj() * gi * w)
            .sum())
    }

    /// `<f, f>`, real and nonnegative.
    pub fn norm_sq(&self, f: &[Complex64]) -> Result<f64> {
        self.check_samples(f, "argument")?;
        Ok(self
            .weights
            .iter()
            .zip(f)
            .map(|(&w, &fi)| w * fi.norm_sqr())
            .sum())
    }

    fn check_samples(&self, samples: &[Complex64], context: &str) -> Result<()> {
        if samples.len() != self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} has {} samples, grid has {} nodes",
                context,
                samples.len(),
                self.nodes.len()
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.re.is_finite() || !s.im.is_finite() {
                return Err(Error::NonFinite {
                    index: i,
                    context: context.into(),
                });
            }
        }
        Ok(())
    }
}

/// True when two responses/beamformers live on the same grid instance.
pub fn same_grid(a: &Arc<QuadratureGrid>, b: &Arc<QuadratureGrid>) -> bool {
    Arc::ptr_eq(a, b)
}
