//! Verified numerics for the integral Gronwall inequality: from
//! y(t) <= y(s) - K * integral of y over [s, t] (checked on all sample
//! pairs) conclude y(t) <= y(0) exp(-K t). The staircase bound
//! (1 + K d)^{-t/d} (1 + K d) y(0) from the iteration proof is exposed as
//! an oracle that dominates the exponential and converges to it as d -> 0.
//!
//! The continuous statement only requires the hypothesis for almost every
//! s; sampled data cannot represent null sets, so the discrete check is the
//! strengthening to every sample pair.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GronwallError {
    #[error("trajectory must contain at least two samples")]
    TooShort,
    #[error("times must be strictly increasing (violation at index {0})")]
    TimesNotIncreasing(usize),
    #[error("values must be nonnegative (y[{0}] = {1})")]
    NegativeValue(usize, f64),
    #[error("decay rate K must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("cannot certify the exponential bound: the hypothesis check failed first")]
    HypothesisFailed,
}

/// A nonnegative trajectory sampled on a strictly increasing time grid;
/// integrals are evaluated by the trapezoid rule.
#[derive(Debug, Clone)]
pub struct SampledTrajectory {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledTrajectory {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, GronwallError> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(GronwallError::TooShort);
        }
        for i in 1..times.len() {
            if !(times[i] > times[i - 1]) {
                return Err(GronwallError::TimesNotIncreasing(i));
            }
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v >= 0.0) {
                return Err(GronwallError::NegativeValue(i, v));
            }
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Cumulative trapezoid integral; entry j holds the integral over
    /// [t_0, t_j], so integrals over [t_i, t_j] are differences.
    pub fn cumulative_integral(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for i in 1..self.len() {
            let h = self.times[i] - self.times[i - 1];
            out[i] = out[i - 1] + 0.5 * h * (self.values[i] + self.values[i - 1]);
        }
        out
    }

    /// Largest grid spacing (enters the quadrature-error allowance).
    pub fn max_step(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub holds: bool,
    /// First violating pair (s, t) with its margin, when the check fails.
    pub first_violation: Option<(f64, f64, f64)>,
    /// Worst violation margin over all pairs (negative slack means a pass).
    pub worst_margin: f64,
}

/// Check y(t_j) <= y(t_i) - K * trapezoid integral + tol for all i < j.
///
/// The tolerance is 1e-9 * y(0), plus the trapezoid-error allowance
/// K * max|y''| * h^2 * (t_j - t_i) / 12 when a curvature bound for the
/// underlying smooth trajectory is supplied. Exact solutions of
/// y' = -K y sampled at step h would otherwise be rejected, because the
/// trapezoid rule overestimates the integral of a convex function.
pub fn check_hypothesis(
    traj: &SampledTrajectory,
    rate: f64,
    curvature_bound: Option<f64>,
) -> Result<HypothesisReport, GronwallError> {
    if !(rate > 0.0) {
        return Err(GronwallError::NonPositiveRate(rate));
    }
    let cumulative = traj.cumulative_integral();
    let base_tol = 1e-9 * traj.values[0];
    let h2 = traj.max_step().powi(2);
    let n = traj.len();
    let mut first_violation = None;
    let mut worst: f64 = f64::NEG_INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let integral = cumulative[j] - cumulative[i];
            let allowance = match curvature_bound {
                Some(m2) => rate * m2 * h2 * (traj.times[j] - traj.times[i]) / 12.0,
                None => 0.0,
            };
            let margin = traj.values[j] - (traj.values[i] - rate * integral) - base_tol - allowance;
            if margin > worst {
                worst = margin;
            }
            if margin > 0.0 && first_violation.is_none() {
                first_violation = Some((traj.times[i], traj.times[j], margin));
            }
        }
    }
    Ok(HypothesisReport {
        holds: first_violation.is_none(),
        first_violation,
        worst_margin: worst,
    })
}

/// The staircase bound (1 + K d)^{-t/d} (1 + K d) y0 from the iteration
/// proof; nonincreasing in t and converging to y0 e^{-K t} as d -> 0.
pub fn staircase_bound(y0: f64, rate: f64, delta: f64, t: f64) -> f64 {
    let base = 1.0 + rate * delta;
    base.powf(-t / delta) * base * y0
}

#[derive(Debug, Clone)]
pub struct ExponentialCertificate {
    pub certified: bool,
    /// max over samples of y(t) e^{K t} / y(0); at most 1 + 1e-9 when
    /// certified.
    pub worst_margin: f64,
}

/// Certify y(t_j) <= y(0) e^{-K t_j} (1 + 1e-9) on every sample. Refuses to
/// run when the hypothesis check failed: the conclusion is not contractual
/// then.
pub fn certify_exponential(
    traj: &SampledTrajectory,
    rate: f64,
    hypothesis: &HypothesisReport,
) -> Result<ExponentialCertificate, GronwallError> {
    if !(rate > 0.0) {
        return Err(GronwallError::NonPositiveRate(rate));
    }
    if !hypothesis.holds {
        return Err(GronwallError::HypothesisFailed);
    }
    let y0 = traj.values[0];
    let mut worst = 0.0_f64;
    for (t, y) in traj.times.iter().zip(&traj.values) {
        let margin = if y0 > 0.0 {
            y * (rate * t).exp() / y0
        } else if *y == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(margin);
    }
    Ok(ExponentialCertificate {
        certified: worst <= 1.0 + 1e-9,
        worst_margin: worst,
    })
}

/// Full verification report for one trajectory and rate.
#[derive(Debug, Clone)]
pub struct GronwallReport {
    pub rate: f64,
    pub hypothesis: HypothesisReport,
    pub certificate: Option<ExponentialCertificate>,
    /// Staircase parameters echoed for the report: theta = 1 / (1 + K d)
    /// at d equal to the largest grid step.
    pub delta: f64,
    pub theta: f64,
}

pub fn verify(
    traj: &SampledTrajectory,
    rate: f64,
    curvature_bound: Option<f64>,
) -> Result<GronwallReport, GronwallError> {
    let hypothesis = check_hypothesis(traj, rate, curvature_bound)?;
    let certificate = if hypothesis.holds {
        Some(certify_exponential(traj, rate, &hypothesis)?)
    } else {
        None
    };
    let delta = traj.max_step();
    Ok(GronwallReport {
        rate,
        hypothesis,
        certificate,
        delta,
        theta: 1.0 / (1.0 + rate * delta),
    })
}

impl GronwallReport {
    pub fn hypothesis_ok(&self) -> bool {
        self.hypothesis.holds
    }

    pub fn bound_ok(&self) -> bool {
        self.certificate
            .as_ref()
            .map(|c| c.certified)
            .unwrap_or(false)
    }

    /// Key-value text block for the report file.
    pub fn to_text(&self) -> String {
        let (s, t) = match self.hypothesis.first_violation {
            Some((s, t, _)) => (format!("{s:.6e}"), format!("{t:.6e}")),
            None => ("-".to_string(), "-".to_string()),
        };
        let worst = self
            .certificate
            .as_ref()
            .map(|c| format!("{:.17e}", c.worst_margin))
            .unwrap_or_else(|| "-".to_string());
        format!(
            "K = {:.17e}\nhypothesis_ok = {}\nbound_ok = {}\nworst_margin = {}\n\
             hypothesis_worst_margin = {:.6e}\nfirst_violation_s = {}\nfirst_violation_t = {}\n\
             delta = {:.6e}\ntheta = {:.17e}\n",
            self.rate,
            self.hypothesis_ok(),
            self.bound_ok(),
            worst,
            self.hypothesis.worst_margin,
            s,
            t,
            self.delta,
            self.theta,
        )
    }

    /// Machine-readable CSV row (with header).
    pub fn to_csv(&self) -> String {
        let (s, t) = match self.hypothesis.first_violation {
            Some((s, t, _)) => (format!("{s:.16e}"), format!("{t:.16e}")),
            None => (String::new(), String::new()),
        };
        let worst = self
            .certificate
            .as_ref()
            .map(|c| format!("{:.16e}", c.worst_margin))
            .unwrap_or_default();
        format!(
            "K,hypothesis_ok,bound_ok,worst_margin,first_violation_s,first_violation_t\n\
             {:.16e},{},{},{},{},{}\n",
            self.rate,
            self.hypothesis_ok(),
            self.bound_ok(),
            worst,
            s,
            t
        )
    }
}
