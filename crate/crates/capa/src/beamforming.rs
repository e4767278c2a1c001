//! Continuous beamformer design for the multiuser downlink.
//!
//! Three design routes produce `BeamformerSet`s: the reduced subspace problem
//! (coefficients over the span of the user responses), projected functional
//! gradient ascent on grid samples, and wavenumber-domain discretization.
//! Closed-form MRT/ZF/MMSE beamformers serve as heuristics and starting
//! points.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{
    check_resolution, fourier_coefficients, gram_matrix, BandlimitIndexSet, LinkBudget,
    SpatialResponse,
};
use crate::error::{Error, Result};
use crate::geometry::{same_grid, QuadratureGrid};

const LN2: f64 = std::f64::consts::LN_2;

/// A continuous transmit current J(r): grid samples plus, when produced by a
/// subspace method, its coefficients over the user-response basis.
#[derive(Clone, Debug)]
pub struct CurrentDistribution {
    grid: Arc<QuadratureGrid>,
    samples: Vec<Complex64>,
    coefficients: Option<DVector<Complex64>>,
}

impl CurrentDistribution {
    pub fn from_samples(grid: Arc<QuadratureGrid>, samples: Vec<Complex64>) -> Result<Self> {
        grid.norm_sq(&samples)?;
        Ok(Self {
            grid,
            samples,
            coefficients: None,
        })
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid> {
        &self.grid
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    /// Coefficients over the subspace basis, when this beamformer was built
    /// from one.
    pub fn coefficients(&self) -> Option<&DVector<Complex64>> {
        self.coefficients.as_ref()
    }

    /// Radiated power <J, J> (W).
    pub fn power(&self) -> f64 {
        self.grid.norm_sq(&self.samples).expect("finite by construction")
    }
}

/// The span of the user responses {H_j} with its Gram matrix; the signal
/// subspace that optimal beamformers live in.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    responses: Vec<SpatialResponse>,
    gram: DMatrix<Complex64>,
}

impl SubspaceBasis {
    pub fn new(responses: Vec<SpatialResponse>) -> Result<Self> {
        let gram = gram_matrix(&responses)?;
        Ok(Self { responses, gram })
    }

    pub fn responses(&self) -> &[SpatialResponse] {
        &self.responses
    }

    pub fn gram(&self) -> &DMatrix<Complex64> {
        &self.gram
    }

    pub fn n_users(&self) -> usize {
        self.responses.len()
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid> {
        self.responses[0].grid()
    }

    /// Expands subspace coefficients to grid samples: J = sum_j a_j H_j.
    pub fn expand(&self, coefficients: &DVector<Complex64>) -> CurrentDistribution {
        let n = self.grid().len();
        let mut samples = vec![Complex64::default(); n];
        for (j, resp) in self.responses.iter().enumerate() {
            let a = coefficients[j];
            for (s, &h) in samples.iter_mut().zip(resp.samples()) {
                *s += a * h;
            }
        }
        CurrentDistribution {
            grid: Arc::clone(self.grid()),
            samples,
            coefficients: Some(coefficients.clone()),
        }
    }

    /// Power a^H G a of a coefficient vector.
    pub fn coefficient_power(&self, coefficients: &DVector<Complex64>) -> f64 {
        (coefficients.adjoint() * &self.gram * coefficients)[(0, 0)].re
    }

    fn scaled_to_power(&self, coefficients: DVector<Complex64>, power: f64) -> Result<CurrentDistribution> {
        let p = self.coefficient_power(&coefficients);
        if p <= 0.0 {
            return Err(Error::Numerical("beamformer has zero power".into()));
        }
        Ok(self.expand(&(coefficients * Complex64::new((power / p).sqrt(), 0.0))))
    }
}

/// One beamformer per user plus the spectral efficiencies they achieve.
#[derive(Clone, Debug)]
pub struct BeamformerSet {
    pub beams: Vec<CurrentDistribution>,
    /// Per-user spectral efficiency (bit/s/Hz).
    pub per_user_se: Vec<f64>,
    /// Sum spectral efficiency (bit/s/Hz).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BeamformerSet {
    pub fn total_power(&self) -> f64 {
        self.beams.iter().map(|b| b.power()).sum()
    }
}

/// Per-user SINR and SE of a beamformer set against the true responses:
/// SINR_k = |<H_k, w_k>|^2 / (sum_{j != k} |<H_k, w_j>|^2 + sigma^2).
pub fn evaluate_se(
    beams: &[CurrentDistribution],
    responses: &[SpatialResponse],
    budget: &LinkBudget,
) -> Result<Vec<f64>> {
    budget.validate()?;
    if beams.len() != responses.len() {
        return Err(Error::InvalidArgument(
            "one beamformer per user is required".into(),
        ));
    }
    let grid = responses[0].grid();
    if !responses.iter().all(|r| same_grid(r.grid(), grid))
        || !beams.iter().all(|b| same_grid(b.grid(), grid))
    {
        return Err(Error::GridMismatch);
    }
    let k = beams.len();
    let mut couplings = DMatrix::<Complex64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            couplings[(i, j)] = grid.inner_product(responses[i].samples(), beams[j].samples())?;
        }
    }
    Ok(se_from_couplings(&couplings, budget.noise_power))
}

fn se_from_couplings(couplings: &DMatrix<Complex64>, noise: f64) -> Vec<f64> {
    let k = couplings.nrows();
    (0..k)
        .map(|i| {
            let signal = couplings[(i, i)].norm_sqr();
            let interference: f64 = (0..k)
                .filter(|&j| j != i)
                .map(|j| couplings[(i, j)].norm_sqr())
                .sum();
            (1.0 + signal / (interference + noise)).log2()
        })
        .collect()
}

/// Matched beamformer w = sqrt(power) H / ||H||.
pub fn mrt(response: &SpatialResponse, power: f64) -> Result<CurrentDistribution> {
    let norm_sq = response.norm_sq();
    if norm_sq <= 0.0 {
        return Err(Error::InvalidArgument(
            "MRT needs a nonzero response".into(),
        ));
    }
    if power <= 0.0 {
        return Err(Error::InvalidArgument("power must be > 0".into()));
    }
    let scale = Complex64::new((power / norm_sq).sqrt(), 0.0);
    let samples = response.samples().iter().map(|&h| h * scale).collect();
    Ok(CurrentDistribution {
        grid: Arc::clone(response.grid()),
        samples,
        coefficients: None,
    })
}

/// MRT for user `k` of a basis, with its coefficient representation.
pub fn mrt_in_basis(basis: &SubspaceBasis, k: usize, power: f64) -> Result<CurrentDistribution> {
    let mut a = DVector::zeros(basis.n_users());
    a[k] = Complex64::new(1.0, 0.0);
    basis.scaled_to_power(a, power)
}

/// Zero-forcing beamformer for user `k`: coefficients G^{-1} e_k, so every
/// cross coupling <H_j, w_k> with j != k vanishes.
pub fn zf(basis: &SubspaceBasis, k: usize, power: f64) -> Result<CurrentDistribution> {
    let evs = basis.gram.clone().symmetric_eigen().eigenvalues;
    let max_ev = evs.iter().cloned().fold(0.0, f64::max);
    if evs.iter().any(|&l| l <= 1e-12 * max_ev) {
        return Err(Error::Numerical(
            "Gram matrix is singular (coincident or dependent users); reduce the user set".into(),
        ));
    }
    let chol = basis.gram.clone().cholesky().ok_or_else(|| {
        Error::Numerical(
            "Gram matrix is singular (coincident or dependent users); reduce the user set".into(),
        )
    })?;
    let mut e = DVector::zeros(basis.n_users());
    e[k] = Complex64::new(1.0, 0.0);
    let a = chol.solve(&e);
    basis.scaled_to_power(a, power)
}

/// Regularized beamformer for user `k`: coefficients
/// (sigma^2 I + G diag(p))^{-1} e_k, the closed-form solution of the K-term
/// separable Fredholm equation, scaled to the user's power share.
pub fn mmse(basis: &SubspaceBasis, budget: &LinkBudget, k: usize) -> Result<CurrentDistribution> {
    budget.validate()?;
    let n = basis.n_users();
    let mut m = basis.gram.clone();
    for j in 0..n {
        let p = budget.user_power(j, n);
        for i in 0..n {
            m[(i, j)] *= Complex64::new(p, 0.0);
        }
    }
    for i in 0..n {
        m[(i, i)] += Complex64::new(budget.noise_power, 0.0);
    }
    let lu = m.lu();
    let mut e = DVector::zeros(n);
    e[k] = Complex64::new(1.0, 0.0);
    let a = lu
        .solve(&e)
        .ok_or_else(|| Error::Numerical("MMSE system solve failed".into()))?;
    basis.scaled_to_power(a, budget.user_power(k, n))
}

/// Convergence controls shared by the iterative designs.
#[derive(Clone, Copy, Debug)]
pub struct OptimizerConfig {
    /// Relative objective-change stopping tolerance.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 500,
        }
    }
}

/// Solution of the reduced sum-SE problem in an abstract coefficient space.
pub(crate) struct ReducedSolution {
    pub coeffs: Vec<DVector<Complex64>>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternating weighted-MMSE updates for the K-user downlink with channel
/// vectors `h_k`, effective coupling h_k^H b_j, and total power constraint
/// sum ||b_j||^2 <= P. Monotone in the sum spectral efficiency.
pub(crate) fn wmmse_sum_rate(
    channels: &[DVector<Complex64>],
    total_power: f64,
    noise: f64,
    cfg: &OptimizerConfig,
) -> Result<ReducedSolution> {
    let k = channels.len();
    let dim = channels[0].len();
    if channels.iter().any(|h| h.len() != dim) {
        return Err(Error::InvalidArgument("channel dimensions disagree".into()));
    }
    let objective = |b: &[DVector<Complex64>]| -> f64 {
        (0..k)
            .map(|i| {
                let signal = (channels[i].adjoint() * &b[i])[(0, 0)].norm_sqr();
                let interference: f64 = (0..k)
                    .filter(|&j| j != i)
                    .map(|j| (channels[i].adjoint() * &b[j])[(0, 0)].norm_sqr())
                    .sum();
                (1.0 + signal / (interference + noise)).log2()
            })
            .sum()
    };

    // MRT start: equal power split along each user's own channel.
    let mut b: Vec<DVector<Complex64>> = channels
        .iter()
        .map(|h| {
            let n = h.norm();
            if n <= 0.0 {
                return Err(Error::InvalidArgument("a user has a zero channel".into()));
            }
            Ok(h * Complex64::new((total_power / k as f64).sqrt() / n, 0.0))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = ReducedSolution {
        coeffs: b.clone(),
        objective: objective(&b),
        iterations: 0,
        converged: false,
    };
    let mut prev_obj = best.objective;
    let mut iterations = 0;
    let mut converged = false;

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        // MMSE receivers and MSE weights.
        let mut u = vec![Complex64::default(); k];
        let mut w = vec![0.0f64; k];
        for i in 0..k {
            let own = (channels[i].adjoint() * &b[i])[(0, 0)];
            let total: f64 = (0..k)
                .map(|j| (channels[i].adjoint() * &b[j])[(0, 0)].norm_sqr())
                .sum::<f64>()
                + noise;
            u[i] = own / total;
            let mse = 1.0 - own.norm_sqr() / total;
            w[i] = 1.0 / mse.max(1e-300);
        }
        // Transmit update with water-level multiplier mu on the power budget.
        let mut m0 = DMatrix::<Complex64>::zeros(dim, dim);
        for i in 0..k {
            let scale = Complex64::new(w[i] * u[i].norm_sqr(), 0.0);
            m0 += &channels[i] * channels[i].adjoint() * scale;
        }
        // Solving at a given multiplier can fail when M(mu) is numerically
        // singular (mu too small for a rank-deficient m0); treat that the
        // same as exceeding the power budget and raise mu.
        let beams_at = |mu: f64| -> Option<Vec<DVector<Complex64>>> {
            let mut m = m0.clone();
            for d in 0..dim {
                m[(d, d)] += Complex64::new(mu, 0.0);
            }
            let chol = m.cholesky()?;
            Some(
                (0..k)
                    .map(|i| {
                        let rhs = &channels[i] * (u[i].conj() * Complex64::new(w[i], 0.0));
                        chol.solve(&rhs)
                    })
                    .collect(),
            )
        };
        let power_of = |bs: &[DVector<Complex64>]| bs.iter().map(|x| x.norm_squared()).sum::<f64>();
        let within = |mu: f64| -> Option<Vec<DVector<Complex64>>> {
            beams_at(mu).filter(|bs| power_of(bs) <= total_power)
        };

        let scale_ref = m0.trace().re.max(f64::MIN_POSITIVE) / dim as f64;
        b = if let Some(sol) = within(0.0) {
            sol
        } else {
            let mut hi = 1e-12 * scale_ref;
            while within(hi).is_none() {
                hi *= 4.0;
                if hi > 1e30 * scale_ref {
                    return Err(Error::Numerical("WMMSE power bisection diverged".into()));
                }
            }
            let mut lo = 0.0;
            for _ in 0..120 {
                let mid = 0.5 * (lo + hi);
                if within(mid).is_some() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let sol = within(hi).expect("feasible by bisection invariant");
            // Land exactly on the budget.
            let scale = (total_power / power_of(&sol)).sqrt();
            sol.into_iter().map(|x| x * Complex64::new(scale, 0.0)).collect()
        };

        let obj = objective(&b);
        if obj > best.objective {
            best.coeffs = b.clone();
            best.objective = obj;
        }
        if (obj - prev_obj).abs() <= cfg.tol * prev_obj.abs().max(1.0) {
            converged = true;
            break;
        }
        prev_obj = obj;
    }
    best.iterations = iterations;
    best.converged = converged;
    Ok(best)
}

/// Square root of the Gram matrix: G = L L^H, via Cholesky with an
/// eigenvalue-clipped fallback for rank-deficient user sets. Returns (L,
/// solve) where `solve` maps b back to coefficients a with L^H a = b.
fn gram_factor(gram: &DMatrix<Complex64>) -> (DMatrix<Complex64>, Box<dyn Fn(&DVector<Complex64>) -> DVector<Complex64>>) {
    let n = gram.nrows();
    if let Some(chol) = gram.clone().cholesky() {
        let l = chol.l();
        let lh = l.adjoint();
        let solve = move |b: &DVector<Complex64>| -> DVector<Complex64> {
            // Back-substitute the upper-triangular system L^H a = b.
            let mut a = DVector::zeros(n);
            for i in (0..n).rev() {
                let mut s = b[i];
                for j in i + 1..n {
                    s -= lh[(i, j)] * a[j];
                }
                a[i] = s / lh[(i, i)];
            }
            a
        };
        (l, Box::new(solve))
    } else {
        let eig = gram.clone().symmetric_eigen();
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let clipped: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| if l > 1e-14 * max_ev { l } else { 0.0 })
            .collect();
        let q = eig.eigenvectors.clone();
        let mut l = q.clone();
        for c in 0..n {
            let s = Complex64::new(clipped[c].sqrt(), 0.0);
            for r in 0..n {
                l[(r, c)] *= s;
            }
        }
        let solve = move |b: &DVector<Complex64>| -> DVector<Complex64> {
            // Pseudo-inverse of L^H = Lambda^{1/2} Q^H: a = Q Lambda^{-1/2} b.
            let mut scaled = b.clone();
            for c in 0..n {
                scaled[c] = if clipped[c] > 0.0 {
                    scaled[c] / Complex64::new(clipped[c].sqrt(), 0.0)
                } else {
                    Complex64::default()
                };
            }
            &q * scaled
        };
        (l, Box::new(solve))
    }
}

/// Sum-SE beamforming over the user-response subspace: the continuous problem
/// reduced to K x K coefficients through the Gram matrix.
pub fn optimize_subspace(
    basis: &SubspaceBasis,
    budget: &LinkBudget,
    cfg: &OptimizerConfig,
) -> Result<BeamformerSet> {
    budget.validate()?;
    let k = basis.n_users();
    let (l, solve) = gram_factor(&basis.gram);
    // Effective channel of user i is the i-th row of L, conjugated.
    let channels: Vec<DVector<Complex64>> = (0..k)
        .map(|i| DVector::from_fn(k, |j, _| l[(i, j)].conj()))
        .collect();
    let sol = wmmse_sum_rate(&channels, budget.total_power, budget.noise_power, cfg)?;
    let beams: Vec<CurrentDistribution> = sol
        .coeffs
        .iter()
        .map(|b| basis.expand(&solve(b)))
        .collect();
    let per_user_se = evaluate_se(&beams, basis.responses(), budget)?;
    Ok(BeamformerSet {
        beams,
        objective: per_user_se.iter().sum(),
        per_user_se,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Sum-SE beamforming in the wavenumber domain: channels are projected onto
/// the band-limited Fourier basis, the reduced problem is solved on the
/// coefficient vectors, and beams are lifted back to grid samples.
pub fn optimize_discretized(
    responses: &[SpatialResponse],
    budget: &LinkBudget,
    basis: &BandlimitIndexSet,
    cfg: &OptimizerConfig,
) -> Result<BeamformerSet> {
    budget.validate()?;
    if responses.is_empty() {
        return Err(Error::InvalidArgument("no users given".into()));
    }
    let grid = responses[0].grid();
    check_resolution(grid, basis)?;
    let channels: Vec<DVector<Complex64>> = responses
        .iter()
        .map(|r| {
            let wv = fourier_coefficients(r, basis)?;
            Ok(DVector::from_column_slice(wv.coefficients()))
        })
        .collect::<Result<Vec<_>>>()?;
    let sol = wmmse_sum_rate(&channels, budget.total_power, budget.noise_power, cfg)?;
    // Lift wavenumber coefficients to grid samples.
    let mut beams: Vec<CurrentDistribution> = sol
        .coeffs
        .iter()
        .map(|b| {
            let mut samples = vec![Complex64::default(); grid.len()];
            for (m, &coef) in b.iter().enumerate() {
                let phi = basis.mode_samples(m, grid);
                for (s, p) in samples.iter_mut().zip(phi) {
                    *s += coef * p;
                }
            }
            CurrentDistribution {
                grid: Arc::clone(grid),
                samples,
                coefficients: None,
            }
        })
        .collect();
    // Quadrature orthonormality is approximate; rescale if the lifted set
    // overshoots the budget.
    let total: f64 = beams.iter().map(|b| b.power()).sum();
    if total > budget.total_power {
        let scale = Complex64::new((budget.total_power / total).sqrt(), 0.0);
        for b in &mut beams {
            for s in &mut b.samples {
                *s *= scale;
            }
        }
    }
    let per_user_se = evaluate_se(&beams, responses, budget)?;
    Ok(BeamformerSet {
        beams,
        objective: per_user_se.iter().sum(),
        per_user_se,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Functional-gradient view of the sum-SE objective: returns the ascent
/// directions g_j(r) = sum_k D_kj H_k(r) such that
/// df = 2 Re <dw_j, g_j> for perturbations dw_j.
fn functional_gradient(
    couplings: &DMatrix<Complex64>,
    responses: &[SpatialResponse],
    noise: f64,
) -> Vec<Vec<Complex64>> {
    let k = responses.len();
    let n = responses[0].grid().len();
    let mut interference = vec![0.0f64; k];
    for i in 0..k {
        interference[i] = (0..k)
            .filter(|&j| j != i)
            .map(|j| couplings[(i, j)].norm_sqr())
            .sum::<f64>()
            + noise;
    }
    let mut grads = vec![vec![Complex64::default(); n]; k];
    for j in 0..k {
        for kk in 0..k {
            let own = couplings[(kk, kk)].norm_sqr();
            let denom = interference[kk] * (interference[kk] + own);
            let d = if kk == j {
                couplings[(kk, kk)] / (LN2 * (interference[kk] + own))
            } else {
                -couplings[(kk, j)] * (own / (LN2 * denom))
            };
            for (g, &h) in grads[j].iter_mut().zip(responses[kk].samples()) {
                *g += d * h;
            }
        }
    }
    grads
}

/// Sum-SE beamforming by projected functional-gradient ascent on grid-sampled
/// beamformers: nodewise gradient of the SE functional, backtracking line
/// search, and projection onto the total-power sphere each step.
pub fn optimize_cov(
    responses: &[SpatialResponse],
    budget: &LinkBudget,
    cfg: &OptimizerConfig,
) -> Result<BeamformerSet> {
    budget.validate()?;
    if responses.is_empty() {
        return Err(Error::InvalidArgument("no users given".into()));
    }
    let grid = responses[0].grid();
    if !responses.iter().all(|r| same_grid(r.grid(), grid)) {
        return Err(Error::GridMismatch);
    }
    let k = responses.len();
    let p_total = budget.total_power;
    let noise = budget.noise_power;

    let couplings_of = |w: &[Vec<Complex64>]| -> Result<DMatrix<Complex64>> {
        let mut c = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                c[(i, j)] = grid.inner_product(responses[i].samples(), &w[j])?;
            }
        }
        Ok(c)
    };
    let objective_of = |c: &DMatrix<Complex64>| -> f64 { se_from_couplings(c, noise).iter().sum() };
    let project = |w: &mut [Vec<Complex64>]| {
        let total: f64 = w.iter().map(|wj| grid.norm_sq(wj).unwrap()).sum();
        if total > 0.0 {
            let scale = Complex64::new((p_total / total).sqrt(), 0.0);
            for wj in w.iter_mut() {
                for s in wj.iter_mut() {
                    *s *= scale;
                }
            }
        }
    };

    // MRT start at full power.
    let mut w: Vec<Vec<Complex64>> = responses
        .iter()
        .map(|r| mrt(r, p_total / k as f64).map(|b| b.samples().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mut couplings = couplings_of(&w)?;
    let mut obj = objective_of(&couplings);

    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    const ARMIJO: f64 = 1e-4;

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let grads = functional_gradient(&couplings, responses, noise);
        let grad_norm_sq: f64 = grads.iter().map(|g| grid.norm_sq(g).unwrap()).sum();
        if grad_norm_sq <= 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while step > 1e-16 {
            let mut trial: Vec<Vec<Complex64>> = w
                .iter()
                .zip(&grads)
                .map(|(wj, gj)| {
                    wj.iter()
                        .zip(gj)
                        .map(|(&a, &g)| a + g * step)
                        .collect::<Vec<_>>()
                })
                .collect();
            project(&mut trial);
            let trial_couplings = couplings_of(&trial)?;
            let trial_obj = objective_of(&trial_couplings);
            if trial_obj >= obj + ARMIJO * step * grad_norm_sq {
                w = trial;
                couplings = trial_couplings;
                let delta = trial_obj - obj;
                obj = trial_obj;
                accepted = true;
                step *= 2.0;
                if delta <= cfg.tol * obj.abs().max(1.0) {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }

    let beams: Vec<CurrentDistribution> = w
        .into_iter()
        .map(|samples| CurrentDistribution {
            grid: Arc::clone(grid),
            samples,
            coefficients: None,
        })
        .collect();
    let per_user_se = se_from_couplings(&couplings, noise);
    Ok(BeamformerSet {
        beams,
        objective: per_user_se.iter().sum(),
        per_user_se,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{bandlimit_basis, los_response};
    use crate::geometry::{build_quadrature, Aperture, SPEED_OF_LIGHT};
    use nalgebra::Vector3;

    fn scene_4user() -> (SubspaceBasis, LinkBudget) {
        let lambda = SPEED_OF_LIGHT / 2.4e9;
        let ap = Aperture::planar(Vector3::zeros(), 0.2, 0.2, lambda).unwrap();
        let grid = build_quadrature(&ap, 16).unwrap();
        let users = [
            Vector3::new(0.8, 0.3, 2.0),
            Vector3::new(-0.5, 0.7, 2.5),
            Vector3::new(0.2, -0.9, 3.0),
            Vector3::new(-0.6, -0.4, 2.2),
        ];
        let responses: Vec<_> = users
            .iter()
            .map(|&u| los_response(u, &grid).unwrap())
            .collect();
        let basis = SubspaceBasis::new(responses).unwrap();
        // Noise scaled to the channel strength so SINRs are moderate.
        let g = basis.gram()[(0, 0)].re;
        let budget = LinkBudget::new(1.0, 1e-2 * g).unwrap();
        (basis, budget)
    }

    fn cosine(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
        (a.adjoint() * b)[(0, 0)].norm() / (a.norm() * b.norm())
    }

    #[test]
    fn mrt_maximizes_coupling() {
        let (basis, _) = scene_4user();
        let h = &basis.responses()[0];
        let grid = basis.grid();
        let power = 0.7;
        let w = mrt(h, power).unwrap();
        let c = grid.inner_product(h.samples(), w.samples()).unwrap();
        let norm = h.norm_sq().sqrt();
        assert!((c.re - power.sqrt() * norm).abs() < 1e-12 * c.re);
        assert!(c.im.abs() < 1e-12 * c.re);
        assert!((w.power() - power).abs() < 1e-12);

        // Cauchy-Schwarz: any unit-power competitor couples no harder.
        let competitor = mrt(&basis.responses()[1], 1.0).unwrap();
        let cc = grid
            .inner_product(h.samples(), competitor.samples())
            .unwrap();
        assert!(cc.norm() <= norm + 1e-12);

        // Coefficient form is a scaled unit vector on the own response.
        let wb = mrt_in_basis(&basis, 2, power).unwrap();
        let a = wb.coefficients().unwrap();
        for j in 0..4 {
            if j != 2 {
                assert_eq!(a[j], Complex64::default());
            }
        }
    }

    #[test]
    fn zf_annihilates_interference() {
        let (basis, _) = scene_4user();
        let grid = basis.grid();
        let power = 0.25;
        for k in 0..4 {
            let w = zf(&basis, k, power).unwrap();
            for j in 0..4 {
                if j == k {
                    continue;
                }
                let c = grid
                    .inner_product(basis.responses()[j].samples(), w.samples())
                    .unwrap();
                let scale = basis.responses()[j].norm_sq().sqrt() * power.sqrt();
                assert!(c.norm() < 1e-8 * scale, "user {k} leaks into {j}: {}", c.norm());
            }
        }
    }

    #[test]
    fn zf_reduces_to_mrt_without_interference() {
        let lambda = 0.125;
        let ap = Aperture::linear(Vector3::zeros(), 0.5, lambda).unwrap();
        let grid = build_quadrature(&ap, 32).unwrap();
        let h = los_response(Vector3::new(0.3, 0.0, 2.0), &grid).unwrap();
        let single = SubspaceBasis::new(vec![h.clone()]).unwrap();
        let a = zf(&single, 0, 1.0).unwrap();
        let b = mrt(&h, 1.0).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((x - y).norm() < 1e-10 * y.norm().max(1e-30));
        }
    }

    #[test]
    fn zf_rejects_coincident_users() {
        let lambda = 0.125;
        let ap = Aperture::linear(Vector3::zeros(), 0.5, lambda).unwrap();
        let grid = build_quadrature(&ap, 32).unwrap();
        let h = los_response(Vector3::new(0.3, 0.0, 2.0), &grid).unwrap();
        let basis = SubspaceBasis::new(vec![h.clone(), h]).unwrap();
        assert!(zf(&basis, 0, 1.0).is_err());
    }

    #[test]
    fn mmse_interpolates_between_mrt_and_zf() {
        let (basis, _) = scene_4user();
        let g = basis.gram()[(0, 0)].re;

        // Huge noise: MRT direction.
        let mut loud = LinkBudget::new(1.0, 1e12 * g).unwrap();
        loud.per_user_power = Some(vec![0.25; 4]);
        let w = mmse(&basis, &loud, 1).unwrap();
        let mut e = DVector::zeros(4);
        e[1] = Complex64::new(1.0, 0.0);
        assert!(cosine(w.coefficients().unwrap(), &e) >= 1.0 - 1e-6);

        // Vanishing noise: ZF direction.
        let quiet = LinkBudget::new(1.0, 1e-14 * g).unwrap();
        let w = mmse(&basis, &quiet, 1).unwrap();
        let zf_a = basis.gram().clone().cholesky().unwrap().solve(&e);
        assert!(cosine(w.coefficients().unwrap(), &zf_a) >= 1.0 - 1e-6);
    }

    #[test]
    fn evaluate_se_matched_filter_closed_form() {
        let lambda = 0.125;
        let ap = Aperture::linear(Vector3::zeros(), 0.5, lambda).unwrap();
        let grid = build_quadrature(&ap, 32).unwrap();
        let h = los_response(Vector3::new(0.0, 0.0, 2.5), &grid).unwrap();
        let budget = LinkBudget::new(2.0, 1e-6).unwrap();
        let w = mrt(&h, budget.total_power).unwrap();
        let se = evaluate_se(
            std::slice::from_ref(&w),
            std::slice::from_ref(&h),
            &budget,
        )
        .unwrap();
        let expected = (1.0 + budget.total_power * h.norm_sq() / budget.noise_power).log2();
        assert!((se[0] - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn evaluate_se_zero_beams() {
        let (basis, budget) = scene_4user();
        let zeros: Vec<CurrentDistribution> = (0..4)
            .map(|_| {
                CurrentDistribution::from_samples(
                    Arc::clone(basis.grid()),
                    vec![Complex64::default(); basis.grid().len()],
                )
                .unwrap()
            })
            .collect();
        let se = evaluate_se(&zeros, basis.responses(), &budget).unwrap();
        assert!(se.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn evaluate_se_rejects_bad_noise() {
        let (basis, _) = scene_4user();
        let w: Vec<_> = (0..4).map(|k| mrt_in_basis(&basis, k, 0.25).unwrap()).collect();
        let bad = LinkBudget {
            total_power: 1.0,
            noise_power: 0.0,
            per_user_power: None,
        };
        assert!(evaluate_se(&w, basis.responses(), &bad).is_err());
    }

    #[test]
    fn subspace_single_user_is_matched_filter() {
        let lambda = 0.125;
        let ap = Aperture::linear(Vector3::zeros(), 0.5, lambda).unwrap();
        let grid = build_quadrature(&ap, 32).unwrap();
        let h = los_response(Vector3::new(0.1, 0.0, 2.0), &grid).unwrap();
        let norm_sq = h.norm_sq();
        let basis = SubspaceBasis::new(vec![h]).unwrap();
        let budget = LinkBudget::new(1.5, 1e-3 * norm_sq).unwrap();
        let set = optimize_subspace(&basis, &budget, &OptimizerConfig::default()).unwrap();
        let expected = (1.0 + budget.total_power * norm_sq / budget.noise_power).log2();
        assert!(
            (set.objective - expected).abs() < 1e-10 * expected,
            "{} vs {expected}",
            set.objective
        );
        assert!((set.total_power() - budget.total_power).abs() < 1e-9);
    }

    #[test]
    fn subspace_dominates_mmse_heuristic() {
        let (basis, budget) = scene_4user();
        let heur: Vec<_> = (0..4).map(|k| mmse(&basis, &budget, k).unwrap()).collect();
        let heur_se: f64 = evaluate_se(&heur, basis.responses(), &budget)
            .unwrap()
            .iter()
            .sum();
        let opt = optimize_subspace(&basis, &budget, &OptimizerConfig::default()).unwrap();
        assert!(
            opt.objective >= heur_se - 1e-9,
            "optimizer {} below heuristic {heur_se}",
            opt.objective
        );
        assert!(opt.total_power() <= budget.total_power * (1.0 + 1e-9));
    }

    #[test]
    fn subspace_symmetric_users_get_symmetric_rates() {
        let lambda = 0.125;
        let ap = Aperture::linear(Vector3::zeros(), 0.5, lambda).unwrap();
        let grid = build_quadrature(&ap, 48).unwrap();
        let h1 = los_response(Vector3::new(0.7, 0.0, 2.0), &grid).unwrap();
        let h2 = los_response(Vector3::new(-0.7, 0.0, 2.0), &grid).unwrap();
        let norm_sq = h1.norm_sq();
        let basis = SubspaceBasis::new(vec![h1, h2]).unwrap();
        let budget = LinkBudget::new(1.0, 1e-2 * norm_sq).unwrap();
        let set = optimize_subspace(&basis, &budget, &OptimizerConfig::default()).unwrap();
        assert!(
            (set.per_user_se[0] - set.per_user_se[1]).abs() < 1e-5 * set.per_user_se[0],
            "rates {:?}",
            set.per_user_se
        );
    }

    #[test]
    fn cov_single_user_converges_to_mrt() {
        let lambda = 0.125;
        let ap = Aperture::linear(Vector3::zeros(), 0.5, lambda).unwrap();
        let grid = build_quadrature(&ap, 32).unwrap();
        let h = los_response(Vector3::new(0.1, 0.0, 2.0), &grid).unwrap();
        let norm_sq = h.norm_sq();
        let budget = LinkBudget::new(1.0, 1e-2 * norm_sq).unwrap();
        let set = optimize_cov(
            std::slice::from_ref(&h),
            &budget,
            &OptimizerConfig::default(),
        )
        .unwrap();
        let w = &set.beams[0];
        let c = grid.inner_product(h.samples(), w.samples()).unwrap();
        let cos = c.norm() / (norm_sq.sqrt() * w.power().sqrt());
        assert!(cos >= 1.0 - 1e-8, "cosine to MRT {cos}");
    }

    #[test]
    fn cov_matches_subspace_objective() {
        let (basis, budget) = scene_4user();
        let sub = optimize_subspace(&basis, &budget, &OptimizerConfig::default()).unwrap();
        let cov = optimize_cov(basis.responses(), &budget, &OptimizerConfig::default()).unwrap();
        let rel = (cov.objective - sub.objective).abs() / sub.objective;
        assert!(rel < 5e-3, "cov {} vs subspace {}: rel {rel}", cov.objective, sub.objective);
        // Converged beams stay inside the response span: project out the span
        // and check the residual energy.
        let grid = basis.grid();
        let chol = basis.gram().clone().cholesky().unwrap();
        for b in &cov.beams {
            let c = DVector::from_fn(4, |i, _| {
                grid.inner_product(basis.responses()[i].samples(), b.samples())
                    .unwrap()
            });
            let a = chol.solve(&c);
            let in_span = (a.adjoint() * &c)[(0, 0)].re;
            let total = b.power();
            assert!(
                (total - in_span) <= 1e-6 * total,
                "orthogonal-complement energy {} of {total}",
                total - in_span
            );
        }
    }

    #[test]
    fn cov_gradient_matches_finite_differences() {
        let (basis, budget) = scene_4user();
        let responses = basis.responses();
        let grid = basis.grid();
        let k = responses.len();
        // A deterministic non-MRT iterate.
        let w: Vec<Vec<Complex64>> = (0..k)
            .map(|j| {
                responses[j]
                    .samples()
                    .iter()
                    .enumerate()
                    .map(|(i, &h)| {
                        h * Complex64::new(1.0 + 0.1 * (i as f64 * 0.37).sin(), 0.05 * j as f64)
                    })
                    .collect()
            })
            .collect();
        let couplings = {
            let mut c = DMatrix::zeros(k, k);
            for i in 0..k {
                for j in 0..k {
                    c[(i, j)] = grid.inner_product(responses[i].samples(), &w[j]).unwrap();
                }
            }
            c
        };
        let objective = |w: &[Vec<Complex64>]| -> f64 {
            let mut c = DMatrix::zeros(k, k);
            for i in 0..k {
                for j in 0..k {
                    c[(i, j)] = grid.inner_product(responses[i].samples(), &w[j]).unwrap();
                }
            }
            se_from_couplings(&c, budget.noise_power).iter().sum()
        };
        let grads = functional_gradient(&couplings, responses, budget.noise_power);
        let scale = w[0].iter().map(|x| x.norm()).fold(0.0, f64::max);
        let eps = 1e-6 * scale;
        // Five probe perturbations: (user, node, re/im).
        for &(j, node, imag) in &[(0usize, 3usize, false), (1, 17, true), (2, 40, false), (3, 8, true), (0, 100, true)] {
            let mut wp = w.clone();
            let mut wm = w.clone();
            let delta = if imag {
                Complex64::new(0.0, eps)
            } else {
                Complex64::new(eps, 0.0)
            };
            wp[j][node] += delta;
            wm[j][node] -= delta;
            let fd = (objective(&wp) - objective(&wm)) / (2.0 * eps);
            let g = grads[j][node];
            let analytic = 2.0 * grid.weights()[node] * if imag { g.im } else { g.re };
            let rel = (fd - analytic).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-4, "probe ({j},{node},imag={imag}): fd {fd} vs {analytic}");
        }
    }

    #[test]
    fn discretized_never_beats_subspace() {
        let (basis, budget) = scene_4user();
        let band = bandlimit_basis(basis.grid().aperture());
        let sub = optimize_subspace(&basis, &budget, &OptimizerConfig::default()).unwrap();
        let dis =
            optimize_discretized(basis.responses(), &budget, &band, &OptimizerConfig::default())
                .unwrap();
        assert!(
            dis.objective <= sub.objective + 1e-9,
            "discretized {} exceeds subspace {}",
            dis.objective,
            sub.objective
        );
        // The physical band limit keeps most of the LoS signal energy.
        assert!(
            dis.objective >= 0.85 * sub.objective,
            "discretized {} far below subspace {}",
            dis.objective,
            sub.objective
        );
    }

    #[test]
    fn discretized_lossless_for_bandlimited_channels() {
        // Channels synthesized inside the band-limited span: projecting onto
        // the Fourier basis is lossless, so both routes solve the same
        // problem.
        let lambda = SPEED_OF_LIGHT / 2.4e9;
        let ap = Aperture::planar(Vector3::zeros(), 0.2, 0.2, lambda).unwrap();
        let grid = build_quadrature(&ap, 24).unwrap();
        let band = bandlimit_basis(&ap);
        let n_modes = band.len();
        let responses: Vec<SpatialResponse> = (0..3)
            .map(|k| {
                let mut samples = vec![Complex64::default(); grid.len()];
                for m in 0..n_modes {
                    let c = Complex64::new(
                        (0.7 * (k * n_modes + m) as f64).sin(),
                        (1.3 * (k + 2 * m) as f64).cos(),
                    );
                    let phi = band.mode_samples(m, &grid);
                    for (s, p) in samples.iter_mut().zip(phi) {
                        *s += c * p;
                    }
                }
                SpatialResponse::from_samples(Arc::clone(&grid), samples, Vector3::zeros())
                    .unwrap()
            })
            .collect();
        let budget = LinkBudget::new(1.0, 0.5).unwrap();
        let basis = SubspaceBasis::new(responses.clone()).unwrap();
        let sub = optimize_subspace(&basis, &budget, &OptimizerConfig::default()).unwrap();
        let dis =
            optimize_discretized(&responses, &budget, &band, &OptimizerConfig::default()).unwrap();
        let rel = (sub.objective - dis.objective).abs() / sub.objective;
        assert!(
            rel < 1e-6,
            "discretized {} vs subspace {}: rel {rel}",
            dis.objective,
            sub.objective
        );
    }

    #[test]
    fn subspace_sufficiency_of_orthogonal_components() {
        let (basis, budget) = scene_4user();
        let set = optimize_subspace(&basis, &budget, &OptimizerConfig::default()).unwrap();
        let grid = basis.grid();
        // Build a grid function orthogonal to all responses: project a probe
        // onto the span (via the Gram system) and subtract that component.
        let mut probe: Vec<Complex64> = (0..grid.len())
            .map(|i| Complex64::new((0.13 * i as f64).sin(), (0.29 * i as f64).cos()))
            .collect();
        let c = DVector::from_fn(4, |i, _| {
            grid.inner_product(basis.responses()[i].samples(), &probe)
                .unwrap()
        });
        let a = basis.gram().clone().cholesky().unwrap().solve(&c);
        for (j, r) in basis.responses().iter().enumerate() {
            for (p, &h) in probe.iter_mut().zip(r.samples()) {
                *p -= a[j] * h;
            }
        }
        // Tiny orthogonal addition to beam 0 leaves every SINR unchanged.
        let mut perturbed: Vec<CurrentDistribution> = set.beams.clone();
        let scale = Complex64::new(1e-3 * set.beams[0].power().sqrt(), 0.0);
        let mut samples = perturbed[0].samples().to_vec();
        for (s, &p) in samples.iter_mut().zip(&probe) {
            *s += p * scale;
        }
        perturbed[0] = CurrentDistribution::from_samples(Arc::clone(grid), samples).unwrap();
        let se0 = evaluate_se(&set.beams, basis.responses(), &budget).unwrap();
        let se1 = evaluate_se(&perturbed, basis.responses(), &budget).unwrap();
        for (a, b) in se0.iter().zip(&se1) {
            assert!((a - b).abs() < 1e-10 * a.max(1.0), "{a} vs {b}");
        }
    }
}
