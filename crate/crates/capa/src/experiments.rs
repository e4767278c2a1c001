//! Reproducible experiment runner behind the CLI: JSON configs in, schema-
//! versioned CSV plus a JSON summary out.
//!
//! Every run is deterministic given (config, seed): numeric output uses fixed
//! formatting, fading uses per-trial counter seeding, and reruns produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::beamforming::{
    evaluate_se, mmse, mrt_in_basis, optimize_cov, optimize_discretized, optimize_subspace,
    zf, BeamformerSet, OptimizerConfig, SubspaceBasis,
};
use crate::capacity::{bc_region_two_user, mac_region, p2p_capacity, CapacityRegion};
use crate::channel::{bandlimit_basis, gram_matrix, los_response, LinkBudget, SpatialResponse};
use crate::error::{Error, Result};
use crate::fading::{
    ergodic_capacity, ergodic_capacity_spda, estimate_dmt, FadingEnsembleSpec,
};
use crate::geometry::{
    build_quadrature, spda_grid, Aperture, QuadratureGrid, SpdaConfig, SPEED_OF_LIGHT,
};
use crate::operator::{build_kernel, operator_svd_nystrom, OperatorSVD};

/// CSV schema version stamped as the first line of every output.
pub const CSV_SCHEMA_VERSION: u32 = 1;
/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CAPA_KIT_OUT";

const VALID_METHODS: [&str; 6] = ["mrt", "zf", "mmse", "subspace", "cov", "discretized"];
const DEFAULT_TRIALS: usize = 10_000;
const DEFAULT_MULTIPLEXING_GAINS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
const REGION_TIMESHARE: usize = 32;

/// The four figure-style studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "beamforming-se")]
    BeamformingSe,
    #[serde(rename = "p2p-capacity")]
    P2pCapacity,
    #[serde(rename = "mac-bc-regions")]
    MacBcRegions,
    #[serde(rename = "dmt-ecc")]
    DmtEcc,
}

impl ExperimentId {
    fn as_str(self) -> &'static str {
        match self {
            Self::BeamformingSe => "beamforming-se",
            Self::P2pCapacity => "p2p-capacity",
            Self::MacBcRegions => "mac-bc-regions",
            Self::DmtEcc => "dmt-ecc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApertureShape {
    Linear,
    Planar,
}

/// Aperture geometry as configured; lengths in meters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApertureConfig {
    pub kind: ApertureShape,
    pub len_x: f64,
    #[serde(default)]
    pub len_y: Option<f64>,
    #[serde(default)]
    pub center: [f64; 3],
}

impl ApertureConfig {
    fn build(&self, wavelength: f64) -> Result<Aperture> {
        let center = Vector3::from_column_slice(&self.center);
        match self.kind {
            ApertureShape::Linear => Aperture::linear(center, self.len_x, wavelength),
            ApertureShape::Planar => Aperture::planar(
                center,
                self.len_x,
                self.len_y.unwrap_or(self.len_x),
                wavelength,
            ),
        }
    }

    fn with_side(&self, side: f64) -> ApertureConfig {
        ApertureConfig {
            len_x: side,
            len_y: self.len_y.map(|_| side),
            ..self.clone()
        }
    }
}

/// Physical scene: apertures, users, and discretization choices.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub frequency_hz: f64,
    pub tx_aperture: ApertureConfig,
    #[serde(default)]
    pub rx_aperture: Option<ApertureConfig>,
    /// User positions in meters.
    #[serde(default)]
    pub users: Vec<[f64; 3]>,
    /// Tx-to-rx center separation along the aperture normal (meters).
    #[serde(default)]
    pub distance_m: Option<f64>,
    /// Quadrature nodes per dimension; defaults to the resolution rule.
    #[serde(default)]
    pub nodes_per_dim: Option<usize>,
    /// SPDA element pitch in wavelengths (default 2).
    #[serde(default)]
    pub spda_spacing_wavelengths: Option<f64>,
    /// Abstract wavenumber mode counts [m_tx, m_rx] for fading studies; when
    /// absent they derive from the aperture band limits.
    #[serde(default)]
    pub modes: Option<[usize; 2]>,
    /// Multiplexing gains for DMT estimation.
    #[serde(default)]
    pub multiplexing_gains: Option<Vec<f64>>,
}

impl SceneConfig {
    fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: String,
    pub grid: Vec<f64>,
}

/// A full experiment description as read from JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub scene: SceneConfig,
    pub budget: LinkBudget,
    #[serde(default)]
    pub methods: Vec<String>,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Command-line overrides layered on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// Which output the CLI asked for; several map onto one experiment id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Beamform,
    Capacity,
    Region,
    Dmt,
    Ecc,
    Spectrum,
}

impl Task {
    fn expected_experiment(self) -> ExperimentId {
        match self {
            Task::Beamform => ExperimentId::BeamformingSe,
            Task::Capacity | Task::Spectrum => ExperimentId::P2pCapacity,
            Task::Region => ExperimentId::MacBcRegions,
            Task::Dmt | Task::Ecc => ExperimentId::DmtEcc,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Task::Beamform => "beamform",
            Task::Capacity => "capacity",
            Task::Region => "region",
            Task::Dmt => "dmt",
            Task::Ecc => "ecc",
            Task::Spectrum => "spectrum",
        }
    }
}

/// Validation outcome: hard errors plus advisory warnings.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Parses a config file, surfacing unknown keys as hard errors.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Vec<u8>)> {
    let raw = std::fs::read(path)?;
    let cfg: ExperimentConfig = serde_json::from_slice(&raw)?;
    Ok((cfg, raw))
}

/// Full schema and physics checks without running anything.
pub fn validate_config(cfg: &ExperimentConfig) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let err = |rep: &mut ValidationReport, m: String| rep.errors.push(m);

    if !(cfg.scene.frequency_hz.is_finite() && cfg.scene.frequency_hz > 0.0) {
        err(&mut rep, "frequency_hz must be positive and finite".into());
        return rep;
    }
    let lambda = cfg.scene.wavelength();

    if let Err(e) = cfg.budget.validate() {
        err(&mut rep, e.to_string());
    }
    if cfg.sweep.grid.is_empty() {
        err(&mut rep, "sweep grid must be nonempty".into());
    }
    if cfg.sweep.grid.windows(2).any(|w| w[0] >= w[1]) {
        err(&mut rep, "sweep grid must be strictly increasing".into());
    }
    for m in &cfg.methods {
        if !VALID_METHODS.contains(&m.as_str()) {
            err(
                &mut rep,
                format!("unknown method \"{m}\"; valid methods: {}", VALID_METHODS.join(", ")),
            );
        }
    }
    if let Err(e) = cfg.scene.tx_aperture.build(lambda) {
        err(&mut rep, format!("tx aperture: {e}"));
    }
    if let Some(rx) = &cfg.scene.rx_aperture {
        if let Err(e) = rx.build(lambda) {
            err(&mut rep, format!("rx aperture: {e}"));
        }
    }

    let sweep_var = cfg.sweep.variable.as_str();
    match cfg.experiment {
        ExperimentId::BeamformingSe => {
            if cfg.scene.users.is_empty() {
                err(&mut rep, "beamforming-se needs at least one user".into());
            }
            if cfg.methods.is_empty() {
                err(&mut rep, "beamforming-se needs at least one method".into());
            }
            if sweep_var != "aperture_side" {
                err(
                    &mut rep,
                    format!("beamforming-se sweeps \"aperture_side\", got \"{sweep_var}\""),
                );
            }
            // Users on the aperture plane make the LoS kernel singular.
            if let Ok(ap) = cfg.scene.tx_aperture.build(lambda) {
                for (k, u) in cfg.scene.users.iter().enumerate() {
                    let rel = Vector3::from_column_slice(u) - ap.center();
                    if rel.dot(&ap.normal()).abs() < 1e-9 {
                        err(
                            &mut rep,
                            format!("singular geometry: user {k} lies on the aperture plane"),
                        );
                    }
                }
            }
        }
        ExperimentId::P2pCapacity => {
            if cfg.scene.rx_aperture.is_none() {
                err(&mut rep, "p2p-capacity needs an rx_aperture".into());
            }
            if cfg.scene.distance_m.is_none() && sweep_var != "distance" {
                err(&mut rep, "p2p-capacity needs distance_m".into());
            }
            if let Some(d) = cfg.scene.distance_m {
                if d <= 0.0 {
                    err(&mut rep, "distance_m must be positive".into());
                }
            }
            if !matches!(sweep_var, "aperture_length" | "distance" | "snr_db") {
                err(
                    &mut rep,
                    format!(
                        "p2p-capacity sweeps aperture_length, distance, or snr_db; got \"{sweep_var}\""
                    ),
                );
            }
        }
        ExperimentId::MacBcRegions => {
            if cfg.scene.users.len() != 2 {
                err(&mut rep, "mac-bc-regions needs exactly two users".into());
            }
            if sweep_var != "n_power_splits" {
                err(
                    &mut rep,
                    format!("mac-bc-regions sweeps \"n_power_splits\", got \"{sweep_var}\""),
                );
            }
            if cfg
                .sweep
                .grid
                .iter()
                .any(|&v| v < 1.0 || v.fract() != 0.0)
            {
                err(&mut rep, "n_power_splits values must be positive integers".into());
            }
        }
        ExperimentId::DmtEcc => {
            if sweep_var != "snr_db" {
                err(
                    &mut rep,
                    format!("dmt-ecc sweeps \"snr_db\", got \"{sweep_var}\""),
                );
            }
            if let Some(t) = cfg.trials {
                if t == 0 {
                    err(&mut rep, "trials must be at least 1".into());
                }
            }
            if let Some([mt, mr]) = cfg.scene.modes {
                if mt == 0 || mr == 0 {
                    err(&mut rep, "mode counts must be at least 1".into());
                }
            }
            if let Some(gains) = &cfg.scene.multiplexing_gains {
                if gains.iter().any(|&r| r < 0.0) {
                    err(&mut rep, "multiplexing gains must be >= 0".into());
                }
            }
        }
    }

    // Resolution rule: the quadrature needs ~6 nodes per wavelength of
    // aperture to resolve the fastest retained mode.
    if let Some(n) = cfg.scene.nodes_per_dim {
        let mut max_len: f64 = cfg.scene.tx_aperture.len_x;
        if cfg.sweep.variable.starts_with("aperture") {
            max_len = max_len.max(cfg.sweep.grid.iter().cloned().fold(0.0, f64::max));
        }
        let needed = (6.0 * max_len / lambda).ceil() as usize;
        if n < needed {
            rep.warnings.push(format!(
                "nodes_per_dim = {n} is below the resolution rule ceil(6 L / lambda) = {needed}"
            ));
        }
    }
    rep
}

fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

struct Csv {
    text: String,
    rows: usize,
}

impl Csv {
    fn new(header: &str) -> Self {
        Self {
            text: format!("# schema_version={CSV_SCHEMA_VERSION}\n{header}\n"),
            rows: 0,
        }
    }

    fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
        self.rows += 1;
    }
}

/// One produced artifact: file name plus byte content.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// In-memory result of an experiment run, before any file is written.
pub struct RunResult {
    pub artifacts: Vec<Artifact>,
    pub summary: Value,
}

/// Files written by [`run_to_files`].
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

fn resolved_config(
    mut cfg: ExperimentConfig,
    overrides: &RunOverrides,
) -> ExperimentConfig {
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(t) = overrides.trials {
        cfg.trials = Some(t);
    }
    if let Some(dir) = &overrides.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    cfg
}

fn scene_quadrature(aperture: &Aperture, scene: &SceneConfig) -> Result<Arc<QuadratureGrid>> {
    let n = scene
        .nodes_per_dim
        .unwrap_or_else(|| aperture.default_nodes_per_dim());
    build_quadrature(aperture, n)
}

fn user_responses(
    grid: &Arc<QuadratureGrid>,
    users: &[[f64; 3]],
) -> Result<Vec<SpatialResponse>> {
    users
        .iter()
        .map(|u| los_response(Vector3::from_column_slice(u), grid))
        .collect()
}

fn beamformer_sum_se(
    method: &str,
    basis: &SubspaceBasis,
    budget: &LinkBudget,
) -> Result<(f64, Vec<f64>)> {
    let k = basis.n_users();
    let opt = OptimizerConfig::default();
    let set: BeamformerSet = match method {
        "subspace" => optimize_subspace(basis, budget, &opt)?,
        "cov" => optimize_cov(basis.responses(), budget, &opt)?,
        "discretized" => {
            let band = bandlimit_basis(basis.grid().aperture());
            optimize_discretized(basis.responses(), budget, &band, &opt)?
        }
        heuristic => {
            let beams = (0..k)
                .map(|i| match heuristic {
                    "mrt" => mrt_in_basis(basis, i, budget.user_power(i, k)),
                    "zf" => zf(basis, i, budget.user_power(i, k)),
                    "mmse" => mmse(basis, budget, i),
                    other => Err(Error::InvalidArgument(format!(
                        "unknown method \"{other}\"; valid methods: {}",
                        VALID_METHODS.join(", ")
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            let per_user = evaluate_se(&beams, basis.responses(), budget)?;
            return Ok((per_user.iter().sum(), per_user));
        }
    };
    Ok((set.objective, set.per_user_se))
}

fn run_beamforming(cfg: &ExperimentConfig) -> Result<RunResult> {
    let lambda = cfg.scene.wavelength();
    let n_users = cfg.scene.users.len();
    let mut header = vec!["aperture_side_m".to_string()];
    for m in &cfg.methods {
        header.push(format!("{m}_sum_se"));
        for k in 0..n_users {
            header.push(format!("{m}_se_user{k}"));
        }
    }
    let mut csv = Csv::new(&header.join(","));
    // Per-method sum SE over the sweep, for headline metrics.
    let mut sums: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    for &side in &cfg.sweep.grid {
        let ap = cfg.scene.tx_aperture.with_side(side).build(lambda)?;
        let grid = scene_quadrature(&ap, &cfg.scene)?;
        let responses = user_responses(&grid, &cfg.scene.users)?;
        let basis = SubspaceBasis::new(responses)?;
        let mut fields = vec![fmt(side)];
        for m in &cfg.methods {
            let (sum, per_user) = beamformer_sum_se(m, &basis, &cfg.budget)?;
            fields.push(fmt(sum));
            fields.extend(per_user.iter().map(|&x| fmt(x)));
            sums.entry(m.clone()).or_default().push(sum);
        }
        csv.row(&fields);
    }

    let mut headline = serde_json::Map::new();
    for (m, v) in &sums {
        headline.insert(format!("sum_se_{m}"), json!(v));
    }
    if let (Some(sub), Some(cov)) = (sums.get("subspace"), sums.get("cov")) {
        let max_rel = sub
            .iter()
            .zip(cov)
            .map(|(s, c)| (s - c).abs() / s)
            .fold(0.0, f64::max);
        headline.insert("max_rel_diff_cov_vs_subspace".into(), json!(max_rel));
    }
    Ok(RunResult {
        artifacts: vec![Artifact {
            name: "beamform.csv".into(),
            bytes: csv.text.into_bytes(),
        }],
        summary: Value::Object(headline),
    })
}

fn p2p_scene_svd(cfg: &ExperimentConfig, length: f64, distance: f64) -> Result<OperatorSVD> {
    let lambda = cfg.scene.wavelength();
    let tx_cfg = if cfg.sweep.variable == "aperture_length" {
        cfg.scene.tx_aperture.with_side(length)
    } else {
        cfg.scene.tx_aperture.clone()
    };
    let rx_cfg0 = cfg
        .scene
        .rx_aperture
        .clone()
        .ok_or_else(|| Error::InvalidArgument("p2p-capacity needs an rx_aperture".into()))?;
    let mut rx_cfg = if cfg.sweep.variable == "aperture_length" {
        rx_cfg0.with_side(length)
    } else {
        rx_cfg0
    };
    let tx_ap = tx_cfg.build(lambda)?;
    // Separate the apertures along the tx normal.
    let rx_center = tx_ap.center() + tx_ap.normal() * distance;
    rx_cfg.center = [rx_center.x, rx_center.y, rx_center.z];
    let rx_ap = rx_cfg.build(lambda)?;
    let tx_grid = scene_quadrature(&tx_ap, &cfg.scene)?;
    let rx_grid = scene_quadrature(&rx_ap, &cfg.scene)?;
    let kernel = build_kernel(&tx_grid, &rx_grid)?;
    operator_svd_nystrom(&kernel)
}

fn run_capacity(cfg: &ExperimentConfig) -> Result<RunResult> {
    let mut csv = Csv::new(&format!(
        "{},capacity_bit_s_hz,edof,hs_norm_sq",
        cfg.sweep.variable
    ));
    let base_distance = cfg.scene.distance_m.unwrap_or(0.0);
    let mut capacities = Vec::new();
    // For SNR sweeps the geometry is fixed; factor the operator once.
    let fixed_svd = if cfg.sweep.variable == "snr_db" {
        Some(p2p_scene_svd(cfg, cfg.scene.tx_aperture.len_x, base_distance)?)
    } else {
        None
    };
    for &v in &cfg.sweep.grid {
        let (svd, power, noise);
        match cfg.sweep.variable.as_str() {
            "snr_db" => {
                svd = fixed_svd.clone().expect("precomputed above");
                noise = cfg.budget.noise_power;
                power = noise * 10f64.powf(v / 10.0);
            }
            "distance" => {
                svd = p2p_scene_svd(cfg, cfg.scene.tx_aperture.len_x, v)?;
                power = cfg.budget.total_power;
                noise = cfg.budget.noise_power;
            }
            _ => {
                svd = p2p_scene_svd(cfg, v, base_distance)?;
                power = cfg.budget.total_power;
                noise = cfg.budget.noise_power;
            }
        }
        let c = p2p_capacity(&svd, power, noise)?;
        capacities.push(c);
        csv.row(&[
            fmt(v),
            fmt(c),
            svd.edof().to_string(),
            fmt(svd.hs_norm_sq()),
        ]);
    }
    let summary = json!({
        "capacity_first": capacities.first(),
        "capacity_last": capacities.last(),
    });
    Ok(RunResult {
        artifacts: vec![Artifact {
            name: "capacity.csv".into(),
            bytes: csv.text.into_bytes(),
        }],
        summary,
    })
}

fn run_spectrum(cfg: &ExperimentConfig) -> Result<RunResult> {
    let svd = p2p_scene_svd(
        cfg,
        cfg.scene.tx_aperture.len_x,
        cfg.scene.distance_m.unwrap_or(1.0),
    )?;
    let total: f64 = svd.hs_norm_sq();
    let mut csv = Csv::new("index,sigma,cumulative_energy");
    let mut cum = 0.0;
    for (i, &s) in svd.singular_values().iter().enumerate() {
        cum += s * s;
        csv.row(&[i.to_string(), fmt(s), fmt(cum / total)]);
    }
    let summary = json!({
        "edof": svd.edof(),
        "operator_norm": svd.operator_norm(),
        "hs_norm_sq": total,
    });
    Ok(RunResult {
        artifacts: vec![Artifact {
            name: "spectrum.csv".into(),
            bytes: csv.text.into_bytes(),
        }],
        summary,
    })
}

fn emit_region(csv: &mut Csv, n_splits: usize, name: &str, region: &CapacityRegion) {
    for (i, p) in region.boundary.iter().enumerate() {
        csv.row(&[
            n_splits.to_string(),
            name.to_string(),
            i.to_string(),
            fmt(p[0]),
            fmt(p[1]),
        ]);
    }
}

fn run_regions(cfg: &ExperimentConfig) -> Result<RunResult> {
    let lambda = cfg.scene.wavelength();
    let ap = cfg.scene.tx_aperture.build(lambda)?;
    let grid = scene_quadrature(&ap, &cfg.scene)?;
    let responses = user_responses(&grid, &cfg.scene.users)?;
    let gram = gram_matrix(&responses)?;
    let powers: Vec<f64> = (0..2).map(|k| cfg.budget.user_power(k, 2)).collect();

    let spacing = cfg.scene.spda_spacing_wavelengths.unwrap_or(2.0) * lambda;
    let spda = spda_grid(&ap, &SpdaConfig::fill(&ap, spacing)?)?;
    let spda_responses = user_responses(&spda, &cfg.scene.users)?;
    let spda_gram = gram_matrix(&spda_responses)?;

    let noise = cfg.budget.noise_power;
    let mut csv = Csv::new("n_power_splits,region,point_index,r1,r2");
    let mut bc_regions = Vec::new();
    for &v in &cfg.sweep.grid {
        let n_splits = v as usize;
        let mac = mac_region(&gram, &powers, noise, REGION_TIMESHARE)?;
        let bc = bc_region_two_user(&gram, cfg.budget.total_power, noise, n_splits, REGION_TIMESHARE)?;
        let mac_spda = mac_region(&spda_gram, &powers, noise, REGION_TIMESHARE)?;
        emit_region(&mut csv, n_splits, "mac", &mac);
        emit_region(&mut csv, n_splits, "bc", &bc);
        emit_region(&mut csv, n_splits, "mac_spda", &mac_spda);
        bc_regions.push(bc);
    }
    let sum_rate = bc_regions
        .last()
        .map(|r| r.support(std::f64::consts::FRAC_PI_4) * std::f64::consts::SQRT_2);
    let hull_drift = bc_regions
        .windows(2)
        .map(|w| w[0].hausdorff(&w[1]))
        .fold(0.0, f64::max);
    let summary = json!({
        "bc_sum_rate": sum_rate,
        "bc_hull_hausdorff_across_splits": if bc_regions.len() > 1 { Some(hull_drift) } else { None },
    });
    Ok(RunResult {
        artifacts: vec![Artifact {
            name: "region.csv".into(),
            bytes: csv.text.into_bytes(),
        }],
        summary,
    })
}

fn fading_spec_for(cfg: &ExperimentConfig, need_bases: bool) -> Result<FadingEnsembleSpec> {
    let trials = cfg.trials.unwrap_or(DEFAULT_TRIALS);
    if let (Some([mt, mr]), false) = (cfg.scene.modes, need_bases) {
        return FadingEnsembleSpec::iid(mt, mr, trials, cfg.seed);
    }
    let lambda = cfg.scene.wavelength();
    let tx_ap = cfg.scene.tx_aperture.build(lambda)?;
    let rx_cfg = cfg.scene.rx_aperture.clone().unwrap_or_else(|| cfg.scene.tx_aperture.clone());
    let rx_ap = rx_cfg.build(lambda)?;
    FadingEnsembleSpec::from_bases(
        bandlimit_basis(&tx_ap),
        bandlimit_basis(&rx_ap),
        trials,
        cfg.seed,
    )
}

fn run_dmt(cfg: &ExperimentConfig) -> Result<RunResult> {
    let spec = fading_spec_for(cfg, false)?;
    let gains = cfg
        .scene
        .multiplexing_gains
        .clone()
        .unwrap_or_else(|| DEFAULT_MULTIPLEXING_GAINS.to_vec());
    let curve = estimate_dmt(&spec, &gains, &cfg.sweep.grid)?;
    let snr_min = cfg.sweep.grid.first().copied().unwrap_or(f64::NAN);
    let snr_max = cfg.sweep.grid.last().copied().unwrap_or(f64::NAN);
    let mut csv = Csv::new("r,d_hat,r_squared,points_used,snr_min_db,snr_max_db");
    for i in 0..curve.r.len() {
        csv.row(&[
            fmt(curve.r[i]),
            fmt(curve.d[i]),
            fmt(curve.r_squared[i]),
            curve.points_used[i].to_string(),
            fmt(snr_min),
            fmt(snr_max),
        ]);
    }
    let summary = json!({
        "d_at_zero": curve.d.first(),
        "diversity_gains": curve.d,
        "trials": spec.trials,
    });
    Ok(RunResult {
        artifacts: vec![Artifact {
            name: "dmt.csv".into(),
            bytes: csv.text.into_bytes(),
        }],
        summary,
    })
}

fn run_ecc(cfg: &ExperimentConfig) -> Result<RunResult> {
    let spec = fading_spec_for(cfg, true)?;
    let lambda = cfg.scene.wavelength();
    let tx_ap = cfg.scene.tx_aperture.build(lambda)?;
    let rx_cfg = cfg.scene.rx_aperture.clone().unwrap_or_else(|| cfg.scene.tx_aperture.clone());
    let rx_ap = rx_cfg.build(lambda)?;
    let spacing = cfg.scene.spda_spacing_wavelengths.unwrap_or(2.0) * lambda;
    let tx_lattice = spda_grid(&tx_ap, &SpdaConfig::fill(&tx_ap, spacing)?)?;
    let rx_lattice = spda_grid(&rx_ap, &SpdaConfig::fill(&rx_ap, spacing)?)?;

    let mut csv = Csv::new("snr_db,ecc_capa,stderr_capa,ecc_spda,stderr_spda");
    let mut capa_vals = Vec::new();
    let mut spda_vals = Vec::new();
    for &db in &cfg.sweep.grid {
        let rho = 10f64.powf(db / 10.0);
        let capa = ergodic_capacity(&spec, rho)?;
        let spda = ergodic_capacity_spda(&spec, rho, &tx_lattice, &rx_lattice)?;
        capa_vals.push(capa.mean);
        spda_vals.push(spda.mean);
        csv.row(&[
            fmt(db),
            fmt(capa.mean),
            fmt(capa.std_error),
            fmt(spda.mean),
            fmt(spda.std_error),
        ]);
    }
    let summary = json!({
        "ecc_capa": capa_vals,
        "ecc_spda": spda_vals,
        "trials": spec.trials,
    });
    Ok(RunResult {
        artifacts: vec![Artifact {
            name: "ecc.csv".into(),
            bytes: csv.text.into_bytes(),
        }],
        summary,
    })
}

/// Runs one task fully in memory: validates, computes, and assembles the
/// summary document (config echo, content hash, seed, headline metrics).
pub fn run_task(
    cfg: &ExperimentConfig,
    raw_config: &[u8],
    task: Task,
) -> Result<RunResult> {
    if cfg.experiment != task.expected_experiment() {
        return Err(Error::InvalidArgument(format!(
            "subcommand \"{}\" expects experiment \"{}\", config declares \"{}\"",
            task.name(),
            task.expected_experiment().as_str(),
            cfg.experiment.as_str()
        )));
    }
    let report = validate_config(cfg);
    if !report.is_ok() {
        return Err(Error::Validation(report.errors));
    }
    let mut result = match task {
        Task::Beamform => run_beamforming(cfg),
        Task::Capacity => run_capacity(cfg),
        Task::Region => run_regions(cfg),
        Task::Dmt => run_dmt(cfg),
        Task::Ecc => run_ecc(cfg),
        Task::Spectrum => run_spectrum(cfg),
    }?;

    let mut hasher = Sha256::new();
    hasher.update(raw_config);
    let hash = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    let summary = json!({
        "schema_version": CSV_SCHEMA_VERSION,
        "task": task.name(),
        "experiment": cfg.experiment.as_str(),
        "seed": cfg.seed,
        "config_sha256": hash,
        "config": serde_json::to_value(cfg)?,
        "warnings": report.warnings,
        "outputs": result.artifacts.iter().map(|a| a.name.clone()).collect::<Vec<_>>(),
        "headline": result.summary,
    });
    result.artifacts.push(Artifact {
        name: format!("{}_summary.json", task.name()),
        bytes: serde_json::to_vec_pretty(&summary)?,
    });
    Ok(RunResult {
        artifacts: result.artifacts,
        summary,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// End-to-end entry point: load, override, validate, run, and write outputs
/// atomically. On any write failure, files from this run are removed.
pub fn run_to_files(
    config_path: &Path,
    task: Task,
    overrides: &RunOverrides,
) -> Result<RunOutput> {
    let (cfg, raw) = load_config(config_path)?;
    let cfg = resolved_config(cfg, overrides);
    let out_dir = cfg
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let result = run_task(&cfg, &raw, task)?;

    std::fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();
    for artifact in &result.artifacts {
        let path = out_dir.join(&artifact.name);
        if let Err(e) = write_atomic(&path, &artifact.bytes) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(RunOutput {
        files: written,
        summary: result.summary,
    })
}
