//! Wavenumber-domain Rayleigh fading: Monte-Carlo outage probability,
//! ergodic channel capacity, and finite-SNR diversity-multiplexing estimates
//! for aperture-to-aperture links, with lattice (SPDA) baselines observing
//! the same band-limited random field.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::BandlimitIndexSet;
use crate::error::{Error, Result};
use crate::geometry::QuadratureGrid;

/// Fixed outage target rate (bit/s/Hz) used for the r = 0 multiplexing point,
/// where the scaled target r*log2(1+rho) degenerates to zero.
pub const R0_TARGET_RATE: f64 = 4.0;

/// An ensemble of i.i.d. CN(0,1) wavenumber-domain channel matrices.
///
/// Fading is generated directly on the retained Fourier modes with flat unit
/// power per mode (isotropic Rayleigh). The mode index sets are carried when
/// the ensemble is tied to physical apertures so lattice arrays can observe
/// the same field.
#[derive(Clone, Debug)]
pub struct FadingEnsembleSpec {
    pub m_tx: usize,
    pub m_rx: usize,
    pub trials: usize,
    pub seed: u64,
    pub tx_basis: Option<BandlimitIndexSet>,
    pub rx_basis: Option<BandlimitIndexSet>,
}

impl FadingEnsembleSpec {
    /// Ensemble over abstract mode counts, no aperture attached.
    pub fn iid(m_tx: usize, m_rx: usize, trials: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            m_tx,
            m_rx,
            trials,
            seed,
            tx_basis: None,
            rx_basis: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Ensemble whose mode counts come from physical band-limit index sets.
    pub fn from_bases(
        tx_basis: BandlimitIndexSet,
        rx_basis: BandlimitIndexSet,
        trials: usize,
        seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            m_tx: tx_basis.len(),
            m_rx: rx_basis.len(),
            trials,
            seed,
            tx_basis: Some(tx_basis),
            rx_basis: Some(rx_basis),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_tx < 1 || self.m_rx < 1 {
            return Err(Error::InvalidArgument(
                "mode counts must be at least 1".into(),
            ));
        }
        if self.trials < 1 {
            return Err(Error::InvalidArgument("trial count must be >= 1".into()));
        }
        if let Some(b) = &self.tx_basis {
            if b.len() != self.m_tx {
                return Err(Error::InvalidArgument("tx basis size != m_tx".into()));
            }
        }
        if let Some(b) = &self.rx_basis {
            if b.len() != self.m_rx {
                return Err(Error::InvalidArgument("rx basis size != m_rx".into()));
            }
        }
        Ok(())
    }
}

/// One M_r x M_t realization with i.i.d. CN(0,1) entries, keyed by
/// (seed, trial_index): the generator is re-seeded per trial, so any
/// evaluation order (or parallel schedule) reproduces identical matrices.
pub fn sample_wavenumber_channel(spec: &FadingEnsembleSpec, trial_index: u64) -> DMatrix<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(trial_index);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    // Row-major fill order is part of the determinism contract.
    let mut entries = Vec::with_capacity(spec.m_rx * spec.m_tx);
    for _ in 0..spec.m_rx * spec.m_tx {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        entries.push(Complex64::new(re * scale, im * scale));
    }
    DMatrix::from_fn(spec.m_rx, spec.m_tx, |r, c| entries[r * spec.m_tx + c])
}

/// Fourier-mode evaluation matrix of a lattice: F[n][m] = sqrt(w_n) phi_m(r_n),
/// the element-measure-weighted samples of each retained mode.
fn mode_evaluation_matrix(grid: &QuadratureGrid, basis: &BandlimitIndexSet) -> DMatrix<Complex64> {
    DMatrix::from_fn(grid.len(), basis.len(), |n, m| {
        basis.mode_value(m, grid.local_coords()[n]) * Complex64::new(grid.weights()[n].sqrt(), 0.0)
    })
}

/// Channel matrix seen by transmit/receive lattices observing a band-limited
/// wavenumber field: h = F_r Hw F_t^H.
pub fn spda_channel_from_field(
    wavenumber: &DMatrix<Complex64>,
    tx_grid: &QuadratureGrid,
    rx_grid: &QuadratureGrid,
    tx_basis: &BandlimitIndexSet,
    rx_basis: &BandlimitIndexSet,
) -> Result<DMatrix<Complex64>> {
    if wavenumber.nrows() != rx_basis.len() || wavenumber.ncols() != tx_basis.len() {
        return Err(Error::InvalidArgument(format!(
            "wavenumber matrix is {}x{} but bases have {} rx and {} tx modes",
            wavenumber.nrows(),
            wavenumber.ncols(),
            rx_basis.len(),
            tx_basis.len()
        )));
    }
    let f_t = mode_evaluation_matrix(tx_grid, tx_basis);
    let f_r = mode_evaluation_matrix(rx_grid, rx_basis);
    Ok(&f_r * wavenumber * f_t.adjoint())
}

/// Eigenvalues of H H^H (computed on the smaller Gram side), reused across an
/// SNR sweep: I(rho) = sum_i log2(1 + (rho / n_t) lambda_i).
fn channel_eigenvalues(h: &DMatrix<Complex64>) -> Vec<f64> {
    let gram = if h.ncols() <= h.nrows() {
        h.adjoint() * h
    } else {
        h * h.adjoint()
    };
    gram.symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0))
        .collect()
}

fn mi_from_eigenvalues(eigs: &[f64], rho: f64, n_tx: usize) -> f64 {
    let scale = rho / n_tx as f64;
    eigs.iter().map(|&l| (1.0 + scale * l).log2()).sum()
}

/// Mutual information log2 det(I + (rho/n_t) H H^H) of one realization, with
/// equal power per transmit dimension.
pub fn mutual_information(h: &DMatrix<Complex64>, rho: f64) -> f64 {
    mi_from_eigenvalues(&channel_eigenvalues(h), rho, h.ncols())
}

/// Outage estimate with a 95% Wilson score interval.
#[derive(Clone, Copy, Debug)]
pub struct OutageEstimate {
    pub probability: f64,
    pub events: u64,
    pub trials: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn wilson_interval(events: u64, trials: u64) -> (f64, f64) {
    const Z: f64 = 1.959963984540054;
    let n = trials as f64;
    let p = events as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The analytic bounds at p = 0 and p = 1 are exactly 0 and 1; keep the
    // estimate inside the interval despite roundoff.
    let lo = if events == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if events == trials {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    (lo, hi)
}

/// Fraction of trials with mutual information below `target_rate` at SNR
/// `rho` (linear).
pub fn outage_probability(
    spec: &FadingEnsembleSpec,
    rho: f64,
    target_rate: f64,
) -> Result<OutageEstimate> {
    spec.validate()?;
    if rho <= 0.0 {
        return Err(Error::InvalidArgument("rho must be > 0".into()));
    }
    let mut events = 0u64;
    for trial in 0..spec.trials as u64 {
        let h = sample_wavenumber_channel(spec, trial);
        if mutual_information(&h, rho) < target_rate {
            events += 1;
        }
    }
    let trials = spec.trials as u64;
    let (lo, hi) = wilson_interval(events, trials);
    Ok(OutageEstimate {
        probability: events as f64 / trials as f64,
        events,
        trials,
        ci_low: lo,
        ci_high: hi,
    })
}

/// Finite-SNR diversity estimates: for each multiplexing gain, the negative
/// least-squares slope of log10 OP against log10 rho.
#[derive(Clone, Debug)]
pub struct DmtCurve {
    /// Multiplexing gains.
    pub r: Vec<f64>,
    /// Estimated diversity gains, clamped at zero.
    pub d: Vec<f64>,
    /// Coefficient of determination of each slope fit.
    pub r_squared: Vec<f64>,
    /// Number of SNR points admitted to each fit.
    pub points_used: Vec<usize>,
    /// The SNR grid the outage sweep ran over (dB).
    pub snr_db: Vec<f64>,
}

/// Estimates the diversity-multiplexing curve by sweeping outage probability
/// over `snr_db_grid` and slope-fitting in log-log coordinates.
///
/// The target rate at multiplexing gain r > 0 is r*log2(1+rho); at r = 0 the
/// fixed rate [`R0_TARGET_RATE`] is used. SNR points with fewer than 10
/// outage events are excluded from the fit as rare-event noise.
pub fn estimate_dmt(
    spec: &FadingEnsembleSpec,
    r_list: &[f64],
    snr_db_grid: &[f64],
) -> Result<DmtCurve> {
    spec.validate()?;
    if r_list.is_empty() || snr_db_grid.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one multiplexing gain and one SNR point".into(),
        ));
    }
    if r_list.iter().any(|&r| r < 0.0) {
        return Err(Error::InvalidArgument("multiplexing gains must be >= 0".into()));
    }
    let span = snr_db_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - snr_db_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    if span < 15.0 {
        return Err(Error::InvalidArgument(format!(
            "SNR grid spans {span:.1} dB; slope fitting needs at least 15 dB"
        )));
    }

    let rhos: Vec<f64> = snr_db_grid.iter().map(|db| 10f64.powf(db / 10.0)).collect();
    let n_snr = rhos.len();
    let n_r = r_list.len();
    let mut events = vec![vec![0u64; n_snr]; n_r];

    // One channel draw serves every (r, SNR) cell: eigenvalues are computed
    // once per trial and the MI sweep reuses them.
    for trial in 0..spec.trials as u64 {
        let h = sample_wavenumber_channel(spec, trial);
        let eigs = channel_eigenvalues(&h);
        for (i, &rho) in rhos.iter().enumerate() {
            let mi = mi_from_eigenvalues(&eigs, rho, spec.m_tx);
            for (j, &r) in r_list.iter().enumerate() {
                let target = if r > 0.0 {
                    r * (1.0 + rho).log2()
                } else {
                    R0_TARGET_RATE
                };
                if mi < target {
                    events[j][i] += 1;
                }
            }
        }
    }

    let trials = spec.trials as f64;
    let mut d = Vec::with_capacity(n_r);
    let mut r2 = Vec::with_capacity(n_r);
    let mut used = Vec::with_capacity(n_r);
    for (j, &r) in r_list.iter().enumerate() {
        let points: Vec<(f64, f64)> = (0..n_snr)
            .filter(|&i| events[j][i] >= 10)
            .map(|i| (rhos[i].log10(), (events[j][i] as f64 / trials).log10()))
            .collect();
        if points.len() < 2 {
            return Err(Error::UnderResolved(format!(
                "multiplexing gain {r}: fewer than two SNR points with >= 10 outage events; \
                 lower the SNR grid or increase the trial count"
            )));
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
        let ss_res: f64 = points
            .iter()
            .map(|p| (p.1 - (my + slope * (p.0 - mx))).powi(2))
            .sum();
        d.push((-slope).max(0.0));
        r2.push(if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 });
        used.push(points.len());
    }
    Ok(DmtCurve {
        r: r_list.to_vec(),
        d,
        r_squared: r2,
        points_used: used,
        snr_db: snr_db_grid.to_vec(),
    })
}

/// Monte-Carlo mean and standard error of the mutual information.
#[derive(Clone, Copy, Debug)]
pub struct ErgodicCapacity {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u64,
}

fn ergodic_from_samples(samples: &[f64]) -> ErgodicCapacity {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    ErgodicCapacity {
        mean,
        std_error: (var / n).sqrt(),
        trials: samples.len() as u64,
    }
}

/// Ergodic capacity of the full band-limited (CAPA) channel: the wavenumber
/// matrix is the channel in the orthonormal mode basis.
pub fn ergodic_capacity(spec: &FadingEnsembleSpec, rho: f64) -> Result<ErgodicCapacity> {
    spec.validate()?;
    if rho <= 0.0 {
        return Err(Error::InvalidArgument("rho must be > 0".into()));
    }
    let samples: Vec<f64> = (0..spec.trials as u64)
        .map(|t| mutual_information(&sample_wavenumber_channel(spec, t), rho))
        .collect();
    Ok(ergodic_from_samples(&samples))
}

/// Ergodic capacity seen by transmit/receive lattices observing the same
/// band-limited field; the spec must carry both index sets.
pub fn ergodic_capacity_spda(
    spec: &FadingEnsembleSpec,
    rho: f64,
    tx_grid: &QuadratureGrid,
    rx_grid: &QuadratureGrid,
) -> Result<ErgodicCapacity> {
    spec.validate()?;
    if rho <= 0.0 {
        return Err(Error::InvalidArgument("rho must be > 0".into()));
    }
    let (tx_basis, rx_basis) = match (&spec.tx_basis, &spec.rx_basis) {
        (Some(t), Some(r)) => (t, r),
        _ => {
            return Err(Error::InvalidArgument(
                "SPDA evaluation needs an ensemble built from band-limit bases".into(),
            ))
        }
    };
    let samples: Vec<f64> = (0..spec.trials as u64)
        .map(|t| {
            let hw = sample_wavenumber_channel(spec, t);
            let h = spda_channel_from_field(&hw, tx_grid, rx_grid, tx_basis, rx_basis)?;
            Ok(mutual_information(&h, rho))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ergodic_from_samples(&samples))
}
