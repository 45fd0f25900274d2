//! Configuration-driven experiment runner: strict TOML configs, the four
//! subcommands (geometry, spectrum, simulate, verify), run manifests with
//! file checksums, and optional SVG decay plots. Exit codes are stable:
//! 0 success, 2 config parse, 3 geometry validity, 4 eigensolver failure,
//! 5 decay-check fail, 6 instability abort, 7 hypothesis fail, 8 bound fail.

use crate::basis::{build_basis, BasisError, QuadratureGrid, SampledBasis};
use crate::dynamics::{
    self, convex_combination_check, decay_analysis, integrate, DecayTarget, DynamicsError,
    EigenOperators, InitialCondition, Integrator, SimulationConfig, TimeSeries,
};
use crate::geometry::{GeometryDescriptor, GeometryError, GeometryKind};
use crate::gronwall::{self, GronwallError, SampledTrajectory};
use crate::operators::{
    symmetric_poincare_constant, FrictionSpec, OperatorError, OperatorSet, PoincareConstants,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GEOMETRY: i32 = 3;
pub const EXIT_EIGEN: i32 = 4;
pub const EXIT_DECAY_FAIL: i32 = 5;
pub const EXIT_INSTABILITY: i32 = 6;
pub const EXIT_HYPOTHESIS_FAIL: i32 = 7;
pub const EXIT_BOUND_FAIL: i32 = 8;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(#[from] GeometryError),
    #[error("basis error: {0}")]
    Basis(BasisError),
    #[error("operator error: {0}")]
    Operator(OperatorError),
    #[error("dynamics error: {0}")]
    Dynamics(DynamicsError),
    #[error("gronwall error: {0}")]
    Gronwall(#[from] GronwallError),
    #[error("decay check failed: fitted rate {fitted:.6}, predicted {predicted:.6}, pointwise ok {pointwise}")]
    DecayFailed {
        fitted: f64,
        predicted: f64,
        pointwise: bool,
    },
    #[error("hypothesis check failed at pair ({0:.3e}, {1:.3e})")]
    HypothesisFailed(f64, f64),
    #[error("exponential bound not certified (worst margin {0:.6e})")]
    BoundFailed(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<BasisError> for CliError {
    fn from(e: BasisError) -> Self {
        CliError::Basis(e)
    }
}

impl From<OperatorError> for CliError {
    fn from(e: OperatorError) -> Self {
        match e {
            OperatorError::UnsupportedGeometry => {
                CliError::Config("this command requires a ball centered at the origin".into())
            }
            other => CliError::Operator(other),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        CliError::Dynamics(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Geometry(_) => EXIT_GEOMETRY,
            CliError::Basis(_) => EXIT_CONFIG,
            CliError::Operator(OperatorError::EigenFailure(_))
            | CliError::Operator(OperatorError::EigenResidual(_)) => EXIT_EIGEN,
            CliError::Operator(_) => EXIT_CONFIG,
            CliError::Dynamics(DynamicsError::Instability { .. })
            | CliError::Dynamics(DynamicsError::NonFinite { .. }) => EXIT_INSTABILITY,
            CliError::Dynamics(_) => EXIT_CONFIG,
            CliError::Gronwall(_) => EXIT_CONFIG,
            CliError::DecayFailed { .. } => EXIT_DECAY_FAIL,
            CliError::HypothesisFailed(_, _) => EXIT_HYPOTHESIS_FAIL,
            CliError::BoundFailed(_) => EXIT_BOUND_FAIL,
            CliError::Io { .. } => EXIT_CONFIG,
        }
    }
}

// --- configuration -----------------------------------------------------

fn default_center() -> [f64; 3] {
    [0.0; 3]
}
fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn default_samples() -> usize {
    200
}
fn default_radius() -> f64 {
    1.0
}
fn default_l_max() -> usize {
    4
}
fn default_n_max() -> usize {
    2
}
fn default_cubic_factor() -> f64 {
    1.5
}
fn default_nu() -> f64 {
    0.1
}
fn default_alpha_kind() -> String {
    "constant".into()
}
fn default_u0() -> String {
    "random".into()
}
fn default_energy() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    42
}
fn default_dt() -> f64 {
    1e-3
}
fn default_t_final() -> f64 {
    5.0
}
fn default_integrator() -> String {
    "rk4".into()
}
fn default_cadence() -> usize {
    10
}
fn default_decay_target() -> String {
    "none".into()
}
fn default_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    /// ball | spheroid | revolution | triaxial
    pub kind: String,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_center")]
    pub center: [f64; 3],
    #[serde(default)]
    pub equatorial: Option<f64>,
    #[serde(default)]
    pub polar: Option<f64>,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    #[serde(default)]
    pub semi_axes: Option<[f64; 3]>,
    #[serde(default)]
    pub radial_poly: Option<Vec<f64>>,
    #[serde(default)]
    pub axial_poly: Option<Vec<f64>>,
    #[serde(default = "default_samples")]
    pub samples_theta: usize,
    #[serde(default = "default_samples")]
    pub samples_phi: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            kind: "ball".into(),
            radius: default_radius(),
            center: default_center(),
            equatorial: None,
            polar: None,
            axis: default_axis(),
            semi_axes: None,
            radial_poly: None,
            axial_poly: None,
            samples_theta: default_samples(),
            samples_phi: default_samples(),
        }
    }
}

impl GeometrySection {
    pub fn to_descriptor(&self) -> Result<GeometryDescriptor, CliError> {
        let kind = match self.kind.as_str() {
            "ball" => GeometryKind::Ball {
                radius: self.radius,
            },
            "spheroid" => GeometryKind::Spheroid {
                equatorial: self
                    .equatorial
                    .ok_or_else(|| CliError::Config("spheroid requires `equatorial`".into()))?,
                polar: self
                    .polar
                    .ok_or_else(|| CliError::Config("spheroid requires `polar`".into()))?,
                axis: self.axis,
            },
            "revolution" => {
                GeometryKind::RevolutionProfile {
                    radial_poly: self.radial_poly.clone().ok_or_else(|| {
                        CliError::Config("revolution requires `radial_poly`".into())
                    })?,
                    axial_poly: self.axial_poly.clone().ok_or_else(|| {
                        CliError::Config("revolution requires `axial_poly`".into())
                    })?,
                    axis: self.axis,
                }
            }
            "triaxial" => GeometryKind::TriaxialEllipsoid {
                semi_axes: self
                    .semi_axes
                    .ok_or_else(|| CliError::Config("triaxial requires `semi_axes`".into()))?,
            },
            other => return Err(CliError::Config(format!(
                "unknown geometry kind `{other}` (expected ball, spheroid, revolution or triaxial)"
            ))),
        };
        Ok(GeometryDescriptor {
            kind,
            center: self.center,
            samples_theta: self.samples_theta,
            samples_phi: self.samples_phi,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSection {
    #[serde(default = "default_l_max")]
    pub l_max: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Radial quadrature order override; 0 keeps the automatic choice.
    #[serde(default)]
    pub quad_radial: usize,
    /// Angular exactness degree override; 0 keeps the automatic choice.
    #[serde(default)]
    pub quad_angular: usize,
    #[serde(default = "default_cubic_factor")]
    pub cubic_factor: f64,
}

impl Default for DiscretizationSection {
    fn default() -> Self {
        Self {
            l_max: default_l_max(),
            n_max: default_n_max(),
            quad_radial: 0,
            quad_angular: 0,
            cubic_factor: default_cubic_factor(),
        }
    }
}

impl DiscretizationSection {
    pub fn bilinear_grid(&self, radius: f64) -> QuadratureGrid {
        if self.quad_radial > 0 || self.quad_angular > 0 {
            let auto_r = 2 * (self.l_max + self.n_max) + 6;
            let auto_a = 2 * self.l_max + 4;
            QuadratureGrid::new(
                radius,
                if self.quad_radial > 0 {
                    self.quad_radial
                } else {
                    auto_r
                },
                if self.quad_angular > 0 {
                    self.quad_angular
                } else {
                    auto_a
                },
            )
        } else {
            QuadratureGrid::for_bilinear(radius, self.l_max, self.n_max)
        }
    }

    pub fn cubic_grid(&self, radius: f64) -> QuadratureGrid {
        QuadratureGrid::for_cubic(radius, self.l_max, self.n_max, self.cubic_factor)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// constant | cos2
    #[serde(default = "default_alpha_kind")]
    pub alpha_kind: String,
    #[serde(default)]
    pub alpha_value: f64,
    #[serde(default)]
    pub alpha_amplitude: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            nu: default_nu(),
            alpha_kind: default_alpha_kind(),
            alpha_value: 0.0,
            alpha_amplitude: 0.0,
        }
    }
}

impl PhysicsSection {
    pub fn friction(&self) -> Result<FrictionSpec, CliError> {
        let spec = match self.alpha_kind.as_str() {
            "constant" => FrictionSpec::Constant(self.alpha_value),
            "cos2" => FrictionSpec::CosSquared {
                base: self.alpha_value,
                amplitude: self.alpha_amplitude,
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown alpha_kind `{other}` (expected constant or cos2)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// random | y1 | y2 | y3 | eigenmode
    #[serde(default = "default_u0")]
    pub u0: String,
    /// Offset into the nonzero part of the spectrum for `eigenmode`.
    #[serde(default)]
    pub u0_index: usize,
    #[serde(default = "default_energy")]
    pub u0_energy: f64,
    /// Spectral scale of the random draw (0 = flat spectrum).
    #[serde(default)]
    pub u0_spectral_scale: f64,
    #[serde(default)]
    pub deflate_kernel: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    /// rk4 | rk2
    #[serde(default = "default_integrator")]
    pub integrator: String,
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    /// none | zero | proj_kernel
    #[serde(default = "default_decay_target")]
    pub decay_target: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            u0: default_u0(),
            u0_index: 0,
            u0_energy: default_energy(),
            u0_spectral_scale: 0.0,
            deflate_kernel: false,
            seed: default_seed(),
            dt: default_dt(),
            t_final: default_t_final(),
            integrator: default_integrator(),
            cadence: default_cadence(),
            decay_target: default_decay_target(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default)]
    pub plot: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            plot: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub discretization: DiscretizationSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Strict parse: unknown or misspelled keys abort with the key named in
    /// the error message.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

// --- output helpers -----------------------------------------------------

struct OutputDir {
    dir: PathBuf,
    files: Vec<(String, String)>, // (name, sha256)
}

impl OutputDir {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        let mut hasher = Sha256::new();
        hasher.update(contents.as_bytes());
        self.files.push((name.to_string(), hex_digest(hasher)));
        Ok(())
    }

    /// Manifest written last, atomically (temp file + rename), listing every
    /// produced file with its checksum.
    fn write_manifest(&self, body: &str) -> Result<(), CliError> {
        let mut text = body.to_string();
        text.push_str("\n[files]\n");
        for (name, digest) in &self.files {
            let _ = writeln!(text, "\"{name}\" = \"{digest}\"");
        }
        let tmp = self.dir.join("manifest.toml.tmp");
        let path = self.dir.join("manifest.toml");
        fs::write(&tmp, &text).map_err(|source| CliError::Io {
            path: tmp.clone(),
            source,
        })?;
        fs::rename(&tmp, &path).map_err(|source| CliError::Io { path, source })?;
        Ok(())
    }
}

fn hex_digest(hasher: Sha256) -> String {
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_digest(hasher))
}

// --- subcommands ----------------------------------------------------------

/// `geometry`: classification report for the configured domain.
pub fn run_geometry(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let geom = config.geometry.to_descriptor()?;
    geom.validate()?;
    let classification = geom.ker_s_classification()?;
    let lambda = geom.curvature_bound_lambda()?;
    let (k_min, k_max) = geom.curvature_extrema()?;

    let mut report = String::new();
    let _ = writeln!(report, "kind = {}", config.geometry.kind);
    let _ = writeln!(report, "ker_s_dimension = {}", classification.dimension);
    match &classification.axis {
        Some((point, dir)) => {
            let _ = writeln!(
                report,
                "axis_point = [{:.12e}, {:.12e}, {:.12e}]",
                point[0], point[1], point[2]
            );
            let _ = writeln!(
                report,
                "axis_direction = [{:.12e}, {:.12e}, {:.12e}]",
                dir[0], dir[1], dir[2]
            );
        }
        None => {
            let _ = writeln!(report, "axis_point = -");
            let _ = writeln!(report, "axis_direction = -");
        }
    }
    match &classification.center {
        Some(c) => {
            let _ = writeln!(
                report,
                "center = [{:.12e}, {:.12e}, {:.12e}]",
                c[0], c[1], c[2]
            );
        }
        None => {
            let _ = writeln!(report, "center = -");
        }
    }
    let _ = writeln!(report, "lambda_bound = {:.17e}", lambda);
    let _ = writeln!(report, "curvature_min = {:.17e}", k_min);
    let _ = writeln!(report, "curvature_max = {:.17e}", k_max);
    for (i, g) in classification.generators.iter().enumerate() {
        let t = geom.rigid_field_tangency(g)?;
        let _ = writeln!(
            report,
            "generator_{i} = (a = [{:.6e}, {:.6e}, {:.6e}], b = [{:.6e}, {:.6e}, {:.6e}], tangency_violation = {:.3e})",
            g.translation[0], g.translation[1], g.translation[2],
            g.angular[0], g.angular[1], g.angular[2],
            t.max_violation
        );
    }

    let mut out = OutputDir::new(out_dir)?;
    out.write("geometry_report.txt", &report)?;
    out.write_manifest(&manifest_header(config, "geometry")?)?;
    Ok(())
}

/// Assembled data shared by `spectrum` and `simulate`.
struct SolverSetup {
    ops: OperatorSet,
    poincare: PoincareConstants,
    kernel: Vec<DVector<f64>>,
}

fn build_solver(config: &ExperimentConfig, with_advection: bool) -> Result<SolverSetup, CliError> {
    let geom = config.geometry.to_descriptor()?;
    geom.validate()?;
    let radius = match geom.kind {
        GeometryKind::Ball { radius } if geom.center == [0.0; 3] => radius,
        _ => {
            return Err(CliError::Config(
                "spectrum and simulate require a ball centered at the origin".into(),
            ))
        }
    };
    let disc = &config.discretization;
    let basis = build_basis(radius, disc.l_max, disc.n_max)?;
    let sampled = SampledBasis::new(&basis, &disc.bilinear_grid(radius));
    let cubic_sampled;
    let cubic_ref = if with_advection {
        cubic_sampled = SampledBasis::new(&basis, &disc.cubic_grid(radius));
        Some(&cubic_sampled)
    } else {
        None
    };
    let alpha = config.physics.friction()?;
    let ops = OperatorSet::assemble(&basis, &sampled, cubic_ref, &alpha)?;
    let kernel: Vec<DVector<f64>> = basis
        .rigid_rotation_coefficients()?
        .iter()
        .map(|c| DVector::from_vec(c.clone()))
        .collect();
    let poincare =
        symmetric_poincare_constant(&ops.strain_energy, &ops.gradient_energy, &ops.mass, &kernel)?;
    Ok(SolverSetup {
        ops,
        poincare,
        kernel,
    })
}

fn constants_report(setup: &SolverSetup, nu: f64) -> String {
    let sigma1 = setup.ops.eigen.eigenvalues[0];
    let mut s = String::new();
    let _ = writeln!(s, "mu1 = {:.17e}", setup.poincare.mu1);
    let _ = writeln!(s, "C = {:.17e}", setup.poincare.poincare_c);
    let _ = writeln!(s, "C_beta = {:.17e}", setup.ops.coercivity_shift);
    let _ = writeln!(s, "sigma1 = {:.17e}", sigma1);
    let _ = writeln!(s, "lambda_bound = {:.17e}", setup.ops.lambda_bound);
    let _ = writeln!(s, "min_alpha = {:.17e}", setup.ops.alpha.min_value());
    let _ = writeln!(s, "max_alpha = {:.17e}", setup.ops.alpha.max_value());
    let _ = writeln!(s, "classical_mu = {:.17e}", setup.poincare.classical_mu);
    let _ = writeln!(s, "classical_c = {:.17e}", setup.poincare.classical_c);
    let _ = writeln!(s, "korn_sup = {:.17e}", setup.poincare.korn_sup);
    let _ = writeln!(s, "mass_condition = {:.6e}", setup.ops.mass_condition);
    let _ = writeln!(s, "null_dimension = {}", setup.ops.null_space_dimension());
    let _ = writeln!(s, "nu = {:.17e}", nu);
    let _ = writeln!(s, "rate_mu = {:.17e}", 4.0 * nu * setup.poincare.mu1);
    let _ = writeln!(s, "rate_sigma = {:.17e}", 2.0 * nu * sigma1);
    s
}

/// `spectrum`: eigenvalue CSV, constants report and basis inventory.
pub fn run_spectrum(config: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let setup = build_solver(config, false)?;
    if setup.ops.mass_condition > 1e10 {
        eprintln!(
            "warning: mass matrix condition number {:.3e} exceeds 1e10",
            setup.ops.mass_condition
        );
    }
    let mut csv = String::from("index,eigenvalue\n");
    for (i, l) in setup.ops.eigen.eigenvalues.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l:.16e}");
    }

    let disc = &config.discretization;
    let basis = build_basis(setup.ops.radius, disc.l_max, disc.n_max)?;
    let mut inventory = format!(
        "fields = {}\nmass_condition = {:.6e}\n\nindex kind l m n raw_l2_norm\n",
        basis.len(),
        setup.ops.mass_condition
    );
    for (i, f) in basis.fields.iter().enumerate() {
        let kind = match f.index.kind {
            crate::basis::FieldKind::Toroidal => "toroidal",
            crate::basis::FieldKind::Poloidal => "poloidal",
        };
        let _ = writeln!(
            inventory,
            "{i} {kind} {} {} {} {:.12e}",
            f.index.l, f.index.m, f.index.n, f.raw_l2_norm
        );
    }

    let mut out = OutputDir::new(out_dir)?;
    out.write("spectrum.csv", &csv)?;
    out.write(
        "constants.txt",
        &constants_report(&setup, config.physics.nu),
    )?;
    out.write("basis_inventory.txt", &inventory)?;
    out.write_manifest(&manifest_header(config, "spectrum")?)?;
    Ok(())
}

fn parse_initial(run: &RunSection, eig: &EigenOperators) -> Result<InitialCondition, CliError> {
    Ok(match run.u0.as_str() {
        "random" => InitialCondition::Random {
            energy: run.u0_energy,
            deflate_kernel: run.deflate_kernel,
            spectral_scale: (run.u0_spectral_scale > 0.0).then_some(run.u0_spectral_scale),
        },
        "y1" => InitialCondition::KernelMode {
            axis: 0,
            energy: run.u0_energy,
        },
        "y2" => InitialCondition::KernelMode {
            axis: 1,
            energy: run.u0_energy,
        },
        "y3" => InitialCondition::KernelMode {
            axis: 2,
            energy: run.u0_energy,
        },
        "eigenmode" => InitialCondition::Eigenmode {
            index: eig.first_nonzero_mode() + run.u0_index,
            amplitude: run.u0_energy.sqrt(),
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown u0 `{other}` (expected random, y1, y2, y3 or eigenmode)"
            )))
        }
    })
}

pub struct SimulateOutcome {
    pub series: TimeSeries,
    pub decay: Option<dynamics::DecayReport>,
    pub predicted_rate: Option<f64>,
}

/// `simulate`: integrate, write the series CSV, run the decay analysis when
/// a target is configured, and record everything in the manifest.
pub fn run_simulate(
    config: &ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
    plot_override: bool,
) -> Result<SimulateOutcome, CliError> {
    let setup = build_solver(config, true)?;
    let eig = EigenOperators::new(&setup.ops, &setup.kernel)?;
    let run = &config.run;
    let sim_config = SimulationConfig {
        nu: config.physics.nu,
        dt: run.dt,
        t_final: run.t_final,
        integrator: match run.integrator.as_str() {
            "rk4" => Integrator::Rk4,
            "rk2" => Integrator::Rk2,
            other => {
                return Err(CliError::Config(format!(
                    "unknown integrator `{other}` (expected rk4 or rk2)"
                )))
            }
        },
        cadence: run.cadence,
        initial: parse_initial(run, &eig)?,
        seed: seed_override.unwrap_or(run.seed),
    };

    let series = integrate(&sim_config, &eig)?;
    let csv = dynamics::series_to_csv(&series);

    // Decay target and the predicted rate derived from this run's operators.
    let min_alpha = setup.ops.alpha.min_value();
    let sigma1 = setup.ops.eigen.eigenvalues[0];
    let nu = config.physics.nu;
    let (target, predicted_rate) = match run.decay_target.as_str() {
        "none" => (None, None),
        "zero" => {
            let rate = if min_alpha > 0.0 {
                2.0 * nu * sigma1
            } else {
                4.0 * nu * setup.poincare.mu1
            };
            (Some(DecayTarget::Zero), Some(rate))
        }
        "proj_kernel" => (
            Some(DecayTarget::KernelProjection),
            Some(4.0 * nu * setup.poincare.mu1),
        ),
        other => {
            return Err(CliError::Config(format!(
                "unknown decay_target `{other}` (expected none, zero or proj_kernel)"
            )))
        }
    };

    let decay = match (target, predicted_rate) {
        (Some(t), Some(rate)) => Some(decay_analysis(&series, t, rate)?),
        _ => None,
    };

    let mut out = OutputDir::new(out_dir)?;
    out.write("series.csv", &csv)?;

    let mut report = constants_report(&setup, nu);
    let residuals = dynamics::energy_inequality_residuals(&series);
    let max_rsu = residuals.iter().map(|r| r.r_su.abs()).fold(0.0, f64::max);
    let max_rdu = dynamics::max_pair_residual_du(&series);
    let _ = writeln!(report, "max_interval_r_su = {:.6e}", max_rsu);
    let _ = writeln!(report, "max_pair_r_du = {:.6e}", max_rdu);
    if min_alpha > 0.0 {
        let convex = convex_combination_check(&series)?;
        let _ = writeln!(report, "eta = {:.17e}", convex.eta);
        let _ = writeln!(report, "convex_ok = {}", convex.passed);
        let _ = writeln!(report, "convex_worst = {:.6e}", convex.worst_violation);
    }
    if let (Some(d), Some(rate)) = (&decay, predicted_rate) {
        let _ = writeln!(report, "predicted_rate = {:.17e}", rate);
        let _ = writeln!(report, "fitted_rate = {:.17e}", d.fitted_rate);
        let _ = writeln!(report, "decay_rate_ok = {}", d.rate_ok);
        let _ = writeln!(report, "decay_pointwise_ok = {}", d.pointwise_ok);
        let _ = writeln!(
            report,
            "decay_worst_margin = {:.17e}",
            d.worst_pointwise_margin
        );
        let _ = writeln!(report, "decay_pass = {}", d.passed);
    }
    out.write("run_report.txt", &report)?;

    if config.output.plot || plot_override {
        let target_for_plot = target.unwrap_or(DecayTarget::Zero);
        let svg = decay_plot_svg(&series, target_for_plot, predicted_rate);
        out.write("decay.svg", &svg)?;
    }

    out.write_manifest(&manifest_header(config, "simulate")?)?;

    if let Some(d) = &decay {
        if !d.passed {
            return Err(CliError::DecayFailed {
                fitted: d.fitted_rate,
                predicted: d.predicted_rate,
                pointwise: d.pointwise_ok,
            });
        }
    }

    Ok(SimulateOutcome {
        series,
        decay,
        predicted_rate,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum CurvatureAllowance {
    None,
    /// Estimate max |y''| from second differences of the series itself.
    Auto,
    Value(f64),
}

/// Column extraction for `verify`: any raw CSV column by name, or the
/// derived deviation energy `E_dev` built from E and the kernel pairings.
pub fn extract_column(csv: &str, column: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut lines = csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config("empty CSV".into()))?;
    let names: Vec<&str> = header.split(',').collect();
    let find = |name: &str| -> Result<usize, CliError> {
        names
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| CliError::Config(format!("column `{name}` not found in CSV header")))
    };
    let t_idx = find("t")?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    if column == "E_dev" {
        let e_idx = find("E")?;
        let p_idx = [
            find("pairing_Y1")?,
            find("pairing_Y2")?,
            find("pairing_Y3")?,
        ];
        let mut p0: Option<[f64; 3]> = None;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse = |i: usize| -> Result<f64, CliError> {
                fields
                    .get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| CliError::Config(format!("bad CSV field {i} in line `{line}`")))
            };
            let p = [parse(p_idx[0])?, parse(p_idx[1])?, parse(p_idx[2])?];
            let p0v = *p0.get_or_insert(p);
            let cross: f64 = p.iter().zip(&p0v).map(|(a, b)| a * b).sum();
            let p0_sq: f64 = p0v.iter().map(|x| x * x).sum();
            times.push(parse(t_idx)?);
            values.push((parse(e_idx)? - 2.0 * cross + p0_sq).max(0.0));
        }
    } else {
        let v_idx = find(column)?;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse = |i: usize| -> Result<f64, CliError> {
                fields
                    .get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| CliError::Config(format!("bad CSV field {i} in line `{line}`")))
            };
            times.push(parse(t_idx)?);
            values.push(parse(v_idx)?);
        }
    }
    Ok((times, values))
}

/// max |y''| estimate by second differences, with a factor-2 safety margin.
fn estimate_curvature(times: &[f64], values: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for i in 1..times.len().saturating_sub(1) {
        let h1 = times[i] - times[i - 1];
        let h2 = times[i + 1] - times[i];
        let d2 = 2.0 * (values[i + 1] * h1 - values[i] * (h1 + h2) + values[i - 1] * h2)
            / (h1 * h2 * (h1 + h2));
        worst = worst.max(d2.abs());
    }
    2.0 * worst
}

/// `verify`: read a trajectory column from a series CSV and run the
/// integral-inequality verifier at the given rate.
pub fn run_verify(
    series_path: &Path,
    column: &str,
    rate: f64,
    allowance: CurvatureAllowance,
    out_dir: &Path,
) -> Result<gronwall::GronwallReport, CliError> {
    let csv = fs::read_to_string(series_path).map_err(|source| CliError::Io {
        path: series_path.to_path_buf(),
        source,
    })?;
    let (times, values) = extract_column(&csv, column)?;
    let traj = SampledTrajectory::new(times, values)?;
    let curvature = match allowance {
        CurvatureAllowance::None => None,
        CurvatureAllowance::Value(v) => Some(v),
        CurvatureAllowance::Auto => Some(estimate_curvature(traj.times(), traj.values())),
    };
    let report = gronwall::verify(&traj, rate, curvature)?;

    let mut out = OutputDir::new(out_dir)?;
    out.write("gronwall_report.txt", &report.to_text())?;
    out.write("gronwall.csv", &report.to_csv())?;
    let header = format!(
        "[manifest]\ncommand = \"verify\"\nversion = \"{}\"\nseries = \"{}\"\ncolumn = \"{}\"\nrate = {:.17e}\n",
        env!("CARGO_PKG_VERSION"),
        series_path.display(),
        column,
        rate
    );
    out.write_manifest(&header)?;

    if !report.hypothesis_ok() {
        let (s, t, _) = report.hypothesis.first_violation.unwrap_or((0.0, 0.0, 0.0));
        return Err(CliError::HypothesisFailed(s, t));
    }
    if !report.bound_ok() {
        let margin = report
            .certificate
            .as_ref()
            .map(|c| c.worst_margin)
            .unwrap_or(f64::INFINITY);
        return Err(CliError::BoundFailed(margin));
    }
    Ok(report)
}

fn manifest_header(config: &ExperimentConfig, command: &str) -> Result<String, CliError> {
    let echo = toml::to_string(config).map_err(|e| CliError::Config(e.to_string()))?;
    let mut s = format!(
        "[manifest]\ncommand = \"{command}\"\nversion = \"{}\"\n\n",
        env!("CARGO_PKG_VERSION")
    );
    // Echo the resolved config under its own table prefix.
    s.push_str("[config]\n");
    for line in echo.lines() {
        if let Some(section) = line.strip_prefix('[') {
            s.push_str(&format!("[config.{section}"));
            s.push('\n');
        } else {
            s.push_str(line);
            s.push('\n');
        }
    }
    s.push('\n');
    Ok(s)
}

/// Log-linear SVG plot of the deviation energy with the certified bound.
fn decay_plot_svg(series: &TimeSeries, target: DecayTarget, predicted_rate: Option<f64>) -> String {
    let dev = dynamics::deviation_energy(series, target);
    let e0 = dev[0].max(1e-300);
    let t_max = series.records.last().map(|r| r.t).unwrap_or(1.0).max(1e-12);
    let floor = 1e-16_f64;
    let log0 = (e0 * 10.0).log10();
    let log_min = dev
        .iter()
        .map(|&e| (e.max(floor * e0)).log10())
        .fold(f64::INFINITY, f64::min)
        .min(log0 - 1.0);

    let (w, h, ml, mb) = (640.0, 420.0, 60.0, 40.0);
    let x = |t: f64| ml + (t / t_max) * (w - ml - 20.0);
    let y = |le: f64| 20.0 + (log0 - le) / (log0 - log_min) * (h - mb - 20.0);

    let mut line = String::new();
    for (r, &e) in series.records.iter().zip(&dev) {
        let le = e.max(floor * e0).log10();
        let _ = write!(line, "{:.2},{:.2} ", x(r.t), y(le));
    }
    let mut bound_line = String::new();
    if let Some(rate) = predicted_rate {
        for r in &series.records {
            let le = (e0 * (-rate * r.t).exp()).max(floor * e0).log10();
            let _ = write!(bound_line, "{:.2},{:.2} ", x(r.t), y(le));
        }
    }

    let axis_y = h - mb;
    let axis_x_end = w - 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"20\" x2=\"{ml}\" y2=\"{axis_y}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{axis_y}\" x2=\"{axis_x_end}\" y2=\"{axis_y}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "<polyline points=\"{line}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>"
    );
    if !bound_line.is_empty() {
        let _ = writeln!(
            svg,
            "<polyline points=\"{bound_line}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1\" stroke-dasharray=\"6 4\"/>"
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">t</text>",
        w - 16.0,
        axis_y + 16.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"8\" y=\"24\" font-size=\"12\">log10 energy</text>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{ml}\" y=\"{}\" font-size=\"10\">0</text>",
        axis_y + 14.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"10\">{t_max:.2}</text>",
        axis_x_end - 24.0,
        axis_y + 14.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_schema_names_the_bad_key() {
        let err = ExperimentConfig::from_toml("[physics]\nnuu = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nuu"), "error should name the key: {msg}");
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.discretization.l_max, 4);
        assert_eq!(cfg.discretization.n_max, 2);
        assert_eq!(cfg.physics.nu, 0.1);
        assert_eq!(cfg.run.dt, 1e-3);
        assert_eq!(cfg.geometry.kind, "ball");
        let geom = cfg.geometry.to_descriptor().unwrap();
        geom.validate().unwrap();
    }

    #[test]
    fn geometry_sections_build_descriptors() {
        let cfg = ExperimentConfig::from_toml(
            "[geometry]\nkind = \"spheroid\"\nequatorial = 1.0\npolar = 2.0\n",
        )
        .unwrap();
        let geom = cfg.geometry.to_descriptor().unwrap();
        assert!(matches!(geom.kind, GeometryKind::Spheroid { .. }));

        let bad = ExperimentConfig::from_toml("[geometry]\nkind = \"cube\"\n").unwrap();
        assert!(bad.geometry.to_descriptor().is_err());
    }

    #[test]
    fn friction_parse() {
        let cfg = ExperimentConfig::from_toml(
            "[physics]\nalpha_kind = \"cos2\"\nalpha_value = 0.5\nalpha_amplitude = 1.0\n",
        )
        .unwrap();
        let f = cfg.physics.friction().unwrap();
        assert_eq!(
            f,
            FrictionSpec::CosSquared {
                base: 0.5,
                amplitude: 1.0
            }
        );
    }

    #[test]
    fn column_extraction_including_derived_deviation() {
        let csv = "t,E,pairing_Y1,pairing_Y2,pairing_Y3\n\
                   0.0,2.0,1.0,0.0,0.0\n\
                   1.0,1.5,1.0,0.0,0.0\n";
        let (t, e) = extract_column(csv, "E").unwrap();
        assert_eq!(t, vec![0.0, 1.0]);
        assert_eq!(e, vec![2.0, 1.5]);
        // E_dev = E - 2 p.p0 + |p0|^2 with conserved pairing 1.0.
        let (_, dev) = extract_column(csv, "E_dev").unwrap();
        assert_eq!(dev, vec![1.0, 0.5]);
        assert!(extract_column(csv, "nope").is_err());
    }

    #[test]
    fn exit_code_mapping_is_stable() {
        use crate::dynamics::DynamicsError;
        use crate::operators::OperatorError;
        assert_eq!(CliError::Config("x".into()).exit_code(), EXIT_CONFIG);
        assert_eq!(
            CliError::Geometry(GeometryError::Invalid("x".into())).exit_code(),
            EXIT_GEOMETRY
        );
        assert_eq!(
            CliError::Operator(OperatorError::EigenResidual(1.0)).exit_code(),
            EXIT_EIGEN
        );
        assert_eq!(
            CliError::DecayFailed {
                fitted: 0.0,
                predicted: 1.0,
                pointwise: false
            }
            .exit_code(),
            EXIT_DECAY_FAIL
        );
        assert_eq!(
            CliError::Dynamics(DynamicsError::Instability {
                t: 1.0,
                growth: 1.0
            })
            .exit_code(),
            EXIT_INSTABILITY
        );
        assert_eq!(
            CliError::HypothesisFailed(0.0, 1.0).exit_code(),
            EXIT_HYPOTHESIS_FAIL
        );
        assert_eq!(CliError::BoundFailed(2.0).exit_code(), EXIT_BOUND_FAIL);
    }

    #[test]
    fn curvature_estimate_on_quadratic() {
        // y = t^2 has y'' = 2; the estimator reports 2 * safety factor 2.
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let values: Vec<f64> = times.iter().map(|t| t * t).collect();
        let est = estimate_curvature(&times, &values);
        assert!((est - 4.0).abs() < 1e-6, "estimate {est}");
    }
}
