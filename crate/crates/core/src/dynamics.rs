//! Galerkin dynamics in the Stokes eigenbasis: the quadratic ODE system for
//! the coefficient vector, fixed-step explicit integration with energy
//! diagnostics, energy-inequality residuals, the convex-combination check
//! with the friction-dependent weight, and exponential-decay certification.

use crate::linalg::m_orthonormalize;
use crate::operators::{FrictionSpec, OperatorSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("stability guard violated: dt {dt} > 0.5 / (nu * lambda_max) = {limit}")]
    StabilityGuard { dt: f64, limit: f64 },
    #[error("instability abort at t = {t}: recorded energy grew by {growth:.3e} relative")]
    Instability { t: f64, growth: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("operator set was assembled without the advection tensor")]
    MissingAdvection,
    #[error("decay window too short: E_dev(T)/E_dev(0) = {ratio:.3e} > 1e-4")]
    WindowTooShort { ratio: f64 },
    #[error("kernel-projection decay target requires alpha = 0")]
    KernelTargetNeedsZeroFriction,
    #[error("convex combination check requires min alpha > 0")]
    ZeroMinFriction,
}

/// Operator data rotated once into the M-orthonormal Stokes eigenbasis.
/// With u = sum_k g_k w_k the energy is |g|^2 and the viscous term is
/// diagonal in the Stokes eigenvalues.
pub struct EigenOperators {
    pub n: usize,
    /// Eigenvalues of the Stokes form pencil, ascending.
    pub eigenvalues: DVector<f64>,
    /// Advection in eigen coordinates, laid out as TM[a, b*n + c].
    advection: DMatrix<f64>,
    pub grad_energy: DMatrix<f64>,
    pub strain_energy: DMatrix<f64>,
    pub boundary_mass: DMatrix<f64>,
    pub boundary_alpha: DMatrix<f64>,
    /// M-orthonormalized rigid rotations expressed in eigen coordinates.
    pub kernel: Vec<DVector<f64>>,
    pub radius: f64,
    pub lambda_bound: f64,
    pub min_alpha: f64,
    pub alpha: FrictionSpec,
}

impl EigenOperators {
    pub fn new(ops: &OperatorSet, kernel_coeffs: &[DVector<f64>]) -> Result<Self, DynamicsError> {
        let adv = ops
            .advection
            .as_ref()
            .ok_or(DynamicsError::MissingAdvection)?;
        let w = &ops.eigen.eigenvectors;
        let advection = adv.rotate(w);
        let rot = |m: &DMatrix<f64>| w.tr_mul(&(m * w));
        let kernel_on = m_orthonormalize(kernel_coeffs, &ops.mass);
        let kernel = kernel_on
            .iter()
            .map(|k| w.tr_mul(&(&ops.mass * k)))
            .collect();
        Ok(Self {
            n: ops.mass.nrows(),
            eigenvalues: ops.eigen.eigenvalues.clone(),
            advection,
            grad_energy: rot(&ops.gradient_energy),
            strain_energy: rot(&ops.strain_energy),
            boundary_mass: rot(&ops.boundary_mass),
            boundary_alpha: rot(&ops.boundary_alpha),
            kernel,
            radius: ops.radius,
            lambda_bound: ops.lambda_bound,
            min_alpha: ops.alpha.min_value(),
            alpha: ops.alpha.clone(),
        })
    }

    /// Index of the first eigenmode with eigenvalue above the null threshold.
    pub fn first_nonzero_mode(&self) -> usize {
        self.eigenvalues.iter().position(|&l| l > 1e-9).unwrap_or(0)
    }

    /// Galerkin projection of the advection term:
    /// out[c] = sum_{a,b} TM[a, b*n + c] g_a g_b.
    pub fn nonlinear_term(&self, g: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let cols = self.advection.ncols();
        let data = self.advection.as_slice();
        let gs = g.as_slice();
        // y[bc] = column(bc) . g, each column summed sequentially so the
        // result does not depend on the parallel split.
        let y: Vec<f64> = (0..cols)
            .into_par_iter()
            .map(|c| {
                let col = &data[c * n..(c + 1) * n];
                col.iter().zip(gs).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let mut out = vec![0.0; n];
        for b in 0..n {
            let gb = gs[b];
            let block = &y[b * n..(b + 1) * n];
            for c in 0..n {
                out[c] += block[c] * gb;
            }
        }
        DVector::from_vec(out)
    }

    /// Right-hand side dg/dt = -P[(u.grad)u] - nu A u in eigen coordinates.
    pub fn rhs(&self, g: &DVector<f64>, nu: f64) -> DVector<f64> {
        let mut out = -self.nonlinear_term(g);
        for k in 0..self.n {
            out[k] -= nu * self.eigenvalues[k] * g[k];
        }
        out
    }

    pub fn quadratic(&self, form: &DMatrix<f64>, g: &DVector<f64>) -> f64 {
        g.dot(&(form * g))
    }

    pub fn diagnostics(&self, t: f64, g: &DVector<f64>) -> DiagnosticsRecord {
        let mut pairings = [0.0; 3];
        for (i, k) in self.kernel.iter().enumerate().take(3) {
            pairings[i] = k.dot(g);
        }
        DiagnosticsRecord {
            t,
            energy: g.dot(g),
            grad_sq: self.quadratic(&self.grad_energy, g),
            strain_sq: self.quadratic(&self.strain_energy, g),
            bnd_alpha: self.quadratic(&self.boundary_alpha, g),
            bnd_u2: self.quadratic(&self.boundary_mass, g),
            pairings,
            r_su: 0.0,
            r_du: 0.0,
            inst_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    Rk2,
}

#[derive(Debug, Clone)]
pub enum InitialCondition {
    /// Rigid rotation about one of the three coordinate axes, scaled to the
    /// requested energy.
    KernelMode { axis: usize, energy: f64 },
    /// A single Stokes eigenmode (index into the ascending spectrum).
    Eigenmode { index: usize, amplitude: f64 },
    /// Explicit coefficients in the eigenbasis.
    Coefficients(Vec<f64>),
    /// Seeded Gaussian draw scaled to the requested energy, optionally with
    /// the rigid-rotation components removed first. A spectral scale, when
    /// set, damps mode k by exp(-lambda_k / (2 scale)) so the draw has a
    /// decaying energy spectrum instead of equipartition.
    Random {
        energy: f64,
        deflate_kernel: bool,
        spectral_scale: Option<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub nu: f64,
    pub dt: f64,
    pub t_final: f64,
    pub integrator: Integrator,
    /// Record diagnostics every `cadence` steps.
    pub cadence: usize,
    pub initial: InitialCondition,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn validate(&self, eig: &EigenOperators) -> Result<(), DynamicsError> {
        if !(self.dt > 0.0) {
            return Err(DynamicsError::InvalidConfig("dt must be positive".into()));
        }
        if self.t_final < self.dt {
            return Err(DynamicsError::InvalidConfig(
                "t_final must be at least dt".into(),
            ));
        }
        if self.cadence == 0 {
            return Err(DynamicsError::InvalidConfig(
                "cadence must be positive".into(),
            ));
        }
        if !(self.nu > 0.0) {
            return Err(DynamicsError::InvalidConfig("nu must be positive".into()));
        }
        let stiff = self.nu * eig.eigenvalues.max();
        if stiff > 0.0 {
            let limit = 0.5 / stiff;
            if self.dt > limit {
                return Err(DynamicsError::StabilityGuard { dt: self.dt, limit });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub t: f64,
    pub coeffs: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// ||u||^2.
    pub energy: f64,
    /// ||Du||^2.
    pub grad_sq: f64,
    /// ||Su||^2.
    pub strain_sq: f64,
    /// Boundary integral of alpha |u|^2.
    pub bnd_alpha: f64,
    /// Boundary integral of |u|^2.
    pub bnd_u2: f64,
    /// L2 pairings with the unit-normalized rigid rotations.
    pub pairings: [f64; 3],
    /// Strain-form energy residual over the last record interval (trapezoid).
    pub r_su: f64,
    /// Gradient-form energy residual over the last interval; nonpositive
    /// values certify the gradient-form inequality.
    pub r_du: f64,
    /// Instantaneous decay rate -d(log E)/dt by finite differences.
    pub inst_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub records: Vec<DiagnosticsRecord>,
    pub initial_coeffs: DVector<f64>,
    pub final_state: SimulationState,
    pub nu: f64,
    pub lambda_bound: f64,
    pub min_alpha: f64,
}

pub fn build_initial(
    config: &SimulationConfig,
    eig: &EigenOperators,
) -> Result<DVector<f64>, DynamicsError> {
    let n = eig.n;
    match &config.initial {
        InitialCondition::KernelMode { axis, energy } => {
            if *axis >= eig.kernel.len() {
                return Err(DynamicsError::InvalidConfig(format!(
                    "kernel axis {axis} out of range"
                )));
            }
            Ok(&eig.kernel[*axis] * energy.sqrt())
        }
        InitialCondition::Eigenmode { index, amplitude } => {
            if *index >= n {
                return Err(DynamicsError::InvalidConfig(format!(
                    "eigenmode index {index} out of range for {n} modes"
                )));
            }
            let mut g = DVector::zeros(n);
            g[*index] = *amplitude;
            Ok(g)
        }
        InitialCondition::Coefficients(c) => {
            if c.len() != n {
                return Err(DynamicsError::InvalidConfig(format!(
                    "coefficient vector length {} does not match mode count {n}",
                    c.len()
                )));
            }
            Ok(DVector::from_vec(c.clone()))
        }
        InitialCondition::Random {
            energy,
            deflate_kernel,
            spectral_scale,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            // Box-Muller over the seeded stream keeps draws reproducible.
            let mut g = DVector::zeros(n);
            let mut i = 0;
            while i < n {
                let u1: f64 = rng.random::<f64>().max(1e-300);
                let u2: f64 = rng.random();
                let r = (-2.0 * u1.ln()).sqrt();
                let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
                g[i] = r * c;
                i += 1;
                if i < n {
                    g[i] = r * s;
                    i += 1;
                }
            }
            if let Some(scale) = spectral_scale {
                for k in 0..n {
                    g[k] *= (-eig.eigenvalues[k].max(0.0) / (2.0 * scale)).exp();
                }
            }
            if *deflate_kernel {
                for k in &eig.kernel {
                    let proj = k.dot(&g);
                    g -= k * proj;
                }
            }
            let norm = g.norm();
            if norm == 0.0 {
                return Err(DynamicsError::InvalidConfig("zero random draw".into()));
            }
            Ok(g * (energy.sqrt() / norm))
        }
    }
}

/// Fixed-step integration with diagnostics at the configured cadence.
pub fn integrate(
    config: &SimulationConfig,
    eig: &EigenOperators,
) -> Result<TimeSeries, DynamicsError> {
    config.validate(eig)?;
    let g0 = build_initial(config, eig)?;
    let steps = (config.t_final / config.dt).round() as usize;
    let dt = config.dt;
    let nu = config.nu;

    let mut g = g0.clone();
    let mut records = Vec::with_capacity(steps / config.cadence + 2);
    records.push(eig.diagnostics(0.0, &g));

    let mut prev = records[0].clone();
    for step in 1..=steps {
        g = match config.integrator {
            Integrator::Rk4 => rk4_step(eig, &g, dt, nu),
            Integrator::Rk2 => rk2_step(eig, &g, dt, nu),
        };
        let t = step as f64 * dt;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFinite { t });
        }
        if step % config.cadence == 0 || step == steps {
            let mut rec = eig.diagnostics(t, &g);
            let growth = rec.energy / prev.energy.max(1e-300) - 1.0;
            if growth > 1e-6 {
                return Err(DynamicsError::Instability { t, growth });
            }
            let h = rec.t - prev.t;
            // Trapezoid residuals of the two energy identities on [prev, rec].
            rec.r_su = rec.energy - prev.energy
                + 4.0 * nu * 0.5 * h * (rec.strain_sq + prev.strain_sq)
                + 2.0 * nu * 0.5 * h * (rec.bnd_alpha + prev.bnd_alpha);
            let shed = |r: &DiagnosticsRecord| eig.lambda_bound * r.bnd_u2 - r.bnd_alpha;
            rec.r_du = rec.energy - prev.energy + 2.0 * nu * 0.5 * h * (rec.grad_sq + prev.grad_sq)
                - 2.0 * nu * 0.5 * h * (shed(&rec) + shed(&prev));
            prev = rec.clone();
            records.push(rec);
        }
    }

    fill_instantaneous_rates(&mut records);

    Ok(TimeSeries {
        records,
        initial_coeffs: g0,
        final_state: SimulationState {
            t: steps as f64 * dt,
            coeffs: g,
        },
        nu,
        lambda_bound: eig.lambda_bound,
        min_alpha: eig.min_alpha,
    })
}

fn rk4_step(eig: &EigenOperators, g: &DVector<f64>, dt: f64, nu: f64) -> DVector<f64> {
    let k1 = eig.rhs(g, nu);
    let k2 = eig.rhs(&(g + &k1 * (dt / 2.0)), nu);
    let k3 = eig.rhs(&(g + &k2 * (dt / 2.0)), nu);
    let k4 = eig.rhs(&(g + &k3 * dt), nu);
    g + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

fn rk2_step(eig: &EigenOperators, g: &DVector<f64>, dt: f64, nu: f64) -> DVector<f64> {
    let k1 = eig.rhs(g, nu);
    let k2 = eig.rhs(&(g + &k1 * dt), nu);
    g + (k1 + k2) * (dt / 2.0)
}

fn fill_instantaneous_rates(records: &mut [DiagnosticsRecord]) {
    let n = records.len();
    if n < 2 {
        return;
    }
    let log_e: Vec<f64> = records
        .iter()
        .map(|r| {
            if r.energy > 0.0 {
                r.energy.ln()
            } else {
                f64::NAN
            }
        })
        .collect();
    for i in 0..n {
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        let dt = records[b].t - records[a].t;
        let slope = (log_e[b] - log_e[a]) / dt;
        records[i].inst_rate = if slope.is_finite() { -slope } else { 0.0 };
    }
}

#[derive(Debug, Clone)]
pub struct IntervalResidual {
    pub s: f64,
    pub t: f64,
    pub r_su: f64,
    pub r_du: f64,
}

/// Residuals of both energy identities on every consecutive record interval,
/// recomputed from the diagnostics with trapezoid time quadrature.
pub fn energy_inequality_residuals(series: &TimeSeries) -> Vec<IntervalResidual> {
    let nu = series.nu;
    let lb = series.lambda_bound;
    series
        .records
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let h = b.t - a.t;
            let r_su = b.energy - a.energy
                + 4.0 * nu * 0.5 * h * (a.strain_sq + b.strain_sq)
                + 2.0 * nu * 0.5 * h * (a.bnd_alpha + b.bnd_alpha);
            let shed = |r: &DiagnosticsRecord| lb * r.bnd_u2 - r.bnd_alpha;
            let r_du = b.energy - a.energy + 2.0 * nu * 0.5 * h * (a.grad_sq + b.grad_sq)
                - 2.0 * nu * 0.5 * h * (shed(a) + shed(b));
            IntervalResidual {
                s: a.t,
                t: b.t,
                r_su,
                r_du,
            }
        })
        .collect()
}

/// Maximum of the gradient-form residual over all record pairs s < t.
/// Residuals are additive over adjacent intervals, so the all-pairs maximum
/// is a maximum subarray sum over the consecutive residuals.
pub fn max_pair_residual_du(series: &TimeSeries) -> f64 {
    let intervals = energy_inequality_residuals(series);
    let mut best = f64::NEG_INFINITY;
    let mut running = 0.0_f64;
    for r in &intervals {
        running = r.r_du.max(running + r.r_du);
        best = best.max(running);
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Maximum over t of |r_Su(0, t)| with 4th-order time quadrature, so that
/// both the quadrature and the integrator error scale as dt^4 and halving
/// dt contracts the residual by a factor near 16.
pub fn cumulative_su_residual(series: &TimeSeries) -> f64 {
    let nu = series.nu;
    let recs = &series.records;
    if recs.len() < 3 {
        return 0.0;
    }
    let f: Vec<f64> = recs
        .iter()
        .map(|r| 4.0 * nu * r.strain_sq + 2.0 * nu * r.bnd_alpha)
        .collect();
    let cumulative = cumulative_integral_order4(&f, recs[1].t - recs[0].t);
    recs.iter()
        .zip(&cumulative)
        .map(|(r, &integral)| (r.energy - recs[0].energy + integral).abs())
        .fold(0.0, f64::max)
}

/// Cumulative integral of uniformly sampled values: Simpson pairs reaching
/// back two intervals, with a 3-point one-sided rule for the first prefix.
fn cumulative_integral_order4(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (f[0] + f[1]);
        return out;
    }
    out[1] = h * (5.0 * f[0] + 8.0 * f[1] - f[2]) / 12.0;
    for k in 2..n {
        out[k] = out[k - 2] + h * (f[k - 2] + 4.0 * f[k - 1] + f[k]) / 3.0;
    }
    out
}

#[derive(Debug, Clone)]
pub struct ConvexCombinationReport {
    pub eta: f64,
    /// Worst per-interval residual (nonpositive up to tolerance when the
    /// combined inequality holds).
    pub worst_violation: f64,
    /// Worst residual over all record pairs; informational, since the
    /// one-sided trapezoid bias accumulates over long windows when the
    /// combined inequality is saturated (eta * lambda_bound = min alpha).
    pub worst_pair_violation: f64,
    pub passed: bool,
}

/// Convex combination of the two energy inequalities with the weight
/// eta = min(min_alpha / lambda_bound, 1/2); verified with slack 1e-9
/// on every record interval.
pub fn convex_combination_check(
    series: &TimeSeries,
) -> Result<ConvexCombinationReport, DynamicsError> {
    if !(series.min_alpha > 0.0) {
        return Err(DynamicsError::ZeroMinFriction);
    }
    let eta = (series.min_alpha / series.lambda_bound).min(0.5);
    let nu = series.nu;
    // Per-interval residual of
    // E(t) - E(s) + 2 nu eta int Dsq + 4 nu (1 - eta) int Ssq <= 0,
    // additive over intervals.
    let residuals: Vec<f64> = series
        .records
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let h = b.t - a.t;
            b.energy - a.energy
                + 2.0 * nu * eta * 0.5 * h * (a.grad_sq + b.grad_sq)
                + 4.0 * nu * (1.0 - eta) * 0.5 * h * (a.strain_sq + b.strain_sq)
        })
        .collect();
    let worst = residuals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let worst = if worst.is_finite() { worst } else { 0.0 };
    let mut best_pair = f64::NEG_INFINITY;
    let mut running = 0.0_f64;
    for &r in &residuals {
        running = r.max(running + r);
        best_pair = best_pair.max(running);
    }
    Ok(ConvexCombinationReport {
        eta,
        worst_violation: worst,
        worst_pair_violation: if best_pair.is_finite() {
            best_pair
        } else {
            0.0
        },
        passed: worst <= 1e-9,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayTarget {
    Zero,
    /// Projection of the initial data onto the rigid-rotation kernel.
    KernelProjection,
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub target: DecayTarget,
    pub predicted_rate: f64,
    pub fitted_rate: f64,
    pub rate_ok: bool,
    pub pointwise_ok: bool,
    pub worst_pointwise_margin: f64,
    pub window: (f64, f64),
    pub passed: bool,
}

/// Deviation energy ||u(t) - target||^2 per record.
pub fn deviation_energy(series: &TimeSeries, target: DecayTarget) -> Vec<f64> {
    match target {
        DecayTarget::Zero => series.records.iter().map(|r| r.energy).collect(),
        DecayTarget::KernelProjection => {
            let p0 = series.records[0].pairings;
            series
                .records
                .iter()
                .map(|r| {
                    let cross: f64 = r.pairings.iter().zip(&p0).map(|(a, b)| a * b).sum();
                    let p0_sq: f64 = p0.iter().map(|x| x * x).sum();
                    (r.energy - 2.0 * cross + p0_sq).max(0.0)
                })
                .collect()
        }
    }
}

/// Least-squares exponential fit and pointwise certification of
/// E_dev(t) <= E_dev(0) exp(-rate t).
pub fn decay_analysis(
    series: &TimeSeries,
    target: DecayTarget,
    predicted_rate: f64,
) -> Result<DecayReport, DynamicsError> {
    if target == DecayTarget::KernelProjection && series.min_alpha != 0.0 {
        return Err(DynamicsError::KernelTargetNeedsZeroFriction);
    }
    let dev = deviation_energy(series, target);
    let e0 = dev[0];
    let ratio = dev.last().unwrap() / e0;
    if ratio > 1e-4 {
        return Err(DynamicsError::WindowTooShort { ratio });
    }

    // Fit window: E_dev / E_dev(0) within [1e-8, 1e-1].
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (r, &e) in series.records.iter().zip(&dev) {
        let rel = e / e0;
        if (1e-8..=1e-1).contains(&rel) && e > 0.0 {
            ts.push(r.t);
            ys.push(e.ln());
        }
    }
    if ts.len() < 8 {
        return Err(DynamicsError::WindowTooShort { ratio });
    }
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    let slope = sxy / sxx;
    let fitted_rate = -slope;

    let rate_ok = slope <= -predicted_rate * (1.0 - 0.02);
    let mut worst_margin = 0.0_f64;
    for (r, &e) in series.records.iter().zip(&dev) {
        let bound = e0 * (-predicted_rate * r.t).exp();
        let margin = if bound > 0.0 { e / bound } else { 1.0 };
        worst_margin = worst_margin.max(margin);
    }
    let pointwise_ok = worst_margin <= 1.0 + 1e-6;

    Ok(DecayReport {
        target,
        predicted_rate,
        fitted_rate,
        rate_ok,
        pointwise_ok,
        worst_pointwise_margin: worst_margin,
        window: (*ts.first().unwrap(), *ts.last().unwrap()),
        passed: rate_ok && pointwise_ok,
    })
}

/// M-orthogonal projection onto the span of the kernel vectors (given in
/// arbitrary basis coordinates together with the mass matrix).
pub fn project_kernel(
    u: &DVector<f64>,
    kernel: &[DVector<f64>],
    mass: &DMatrix<f64>,
) -> DVector<f64> {
    let kernel_on = m_orthonormalize(kernel, mass);
    let mut out = DVector::zeros(u.len());
    for k in &kernel_on {
        let proj = k.dot(&(mass * u));
        out += k * proj;
    }
    out
}

/// CSV with the pinned column set and 17-significant-digit formatting.
pub fn series_to_csv(series: &TimeSeries) -> String {
    let mut out = String::with_capacity(series.records.len() * 256);
    out.push_str(
        "t,E,Dsq,Ssq,bnd_alpha,bnd_u2,pairing_Y1,pairing_Y2,pairing_Y3,r_Su,r_Du,inst_rate\n",
    );
    for r in &series.records {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.t,
            r.energy,
            r.grad_sq,
            r.strain_sq,
            r.bnd_alpha,
            r.bnd_u2,
            r.pairings[0],
            r.pairings[1],
            r.pairings[2],
            r.r_su,
            r.r_du,
            r.inst_rate
        ));
    }
    out
}
