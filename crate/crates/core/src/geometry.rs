//! Bounded smooth domains and their boundary differential geometry: Gauss
//! map differential (shape operator), principal curvature bounds, and the
//! rigid-field classification that detects solids of revolution.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod vec3 {
    pub type V3 = [f64; 3];

    pub fn dot(a: V3, b: V3) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    pub fn cross(a: V3, b: V3) -> V3 {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    pub fn add(a: V3, b: V3) -> V3 {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    pub fn sub(a: V3, b: V3) -> V3 {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    pub fn scale(a: V3, s: f64) -> V3 {
        [a[0] * s, a[1] * s, a[2] * s]
    }

    pub fn norm(a: V3) -> f64 {
        dot(a, a).sqrt()
    }

    pub fn normalize(a: V3) -> V3 {
        scale(a, 1.0 / norm(a))
    }

    /// Any unit vector orthogonal to `a` (assumed unit).
    pub fn orthogonal(a: V3) -> V3 {
        let trial = if a[0].abs() < 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        normalize(cross(a, trial))
    }
}

use vec3::*;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    Invalid(String),
    #[error("point is off the surface (residual {residual:.3e} > 1e-10)")]
    PointOffSurface { residual: f64 },
    #[error("vector is not tangent (normal component {normal_part:.3e} > 1e-10)")]
    NotTangent { normal_part: f64 },
    #[error("operation requires a ball geometry")]
    UnsupportedGeometry,
}

/// Shape of the domain boundary.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum GeometryKind {
    /// Sphere of the given radius.
    Ball { radius: f64 },
    /// Ellipsoid of revolution: semi-axis `equatorial` in the two directions
    /// orthogonal to `axis` and `polar` along it.
    Spheroid {
        equatorial: f64,
        polar: f64,
        axis: [f64; 3],
    },
    /// General smooth solid of revolution. With u = cos t, t in [0, pi], the
    /// meridian is (rho, zeta)(t) = (sin t * p(u), q(u)) in cylindrical
    /// coordinates about `axis`; coefficients ascend in powers of u.
    /// Smooth closed caps require p > 0 on [-1, 1] and q strictly monotone.
    RevolutionProfile {
        radial_poly: Vec<f64>,
        axial_poly: Vec<f64>,
        axis: [f64; 3],
    },
    /// Ellipsoid with three distinct semi-axes along the coordinate axes.
    TriaxialEllipsoid { semi_axes: [f64; 3] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryDescriptor {
    pub kind: GeometryKind,
    pub center: [f64; 3],
    /// Boundary sampling resolution (colatitude-like x azimuth).
    pub samples_theta: usize,
    pub samples_phi: usize,
}

/// Shape operator data at one boundary sample.
#[derive(Debug, Clone)]
pub struct ShapeOperatorSample {
    pub point: V3,
    pub normal: V3,
    /// Orthonormal tangent pair at the point.
    pub tangent1: V3,
    pub tangent2: V3,
    /// Matrix of the Gauss map differential dn in the (tangent1, tangent2)
    /// frame; symmetric, with eigenvalues -k1, -k2.
    pub dn_matrix: [[f64; 2]; 2],
    /// Principal curvatures (eigenvalues of -dn, outward normal).
    pub k1: f64,
    pub k2: f64,
    /// Area weight of the sample in the parameter grid.
    pub area_weight: f64,
}

/// Infinitesimal rigid motion w(x) = translation + angular ∧ (x - center).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidField {
    pub translation: V3,
    pub angular: V3,
    pub center: V3,
}

impl RigidField {
    pub fn eval(&self, x: V3) -> V3 {
        add(self.translation, cross(self.angular, sub(x, self.center)))
    }

    pub fn magnitude_scale(&self) -> f64 {
        norm(self.translation) + norm(self.angular)
    }
}

#[derive(Debug, Clone)]
pub struct TangencyReport {
    pub tangent: bool,
    pub max_violation: f64,
}

/// Result of the rigid-field kernel classification.
#[derive(Debug, Clone)]
pub struct KernelClassification {
    /// 3 for spheres, 1 for non-spherical solids of revolution, 0 otherwise.
    pub dimension: usize,
    pub generators: Vec<RigidField>,
    /// Axis (point, direction) when dimension is 1.
    pub axis: Option<(V3, V3)>,
    /// Center when dimension is 3.
    pub center: Option<V3>,
}

impl GeometryDescriptor {
    pub fn ball(radius: f64) -> Self {
        Self {
            kind: GeometryKind::Ball { radius },
            center: [0.0; 3],
            samples_theta: 200,
            samples_phi: 200,
        }
    }

    pub fn spheroid(equatorial: f64, polar: f64) -> Self {
        Self {
            kind: GeometryKind::Spheroid {
                equatorial,
                polar,
                axis: [0.0, 0.0, 1.0],
            },
            center: [0.0; 3],
            samples_theta: 200,
            samples_phi: 200,
        }
    }

    pub fn triaxial(semi_axes: [f64; 3]) -> Self {
        Self {
            kind: GeometryKind::TriaxialEllipsoid { semi_axes },
            center: [0.0; 3],
            samples_theta: 200,
            samples_phi: 200,
        }
    }

    pub fn with_center(mut self, center: V3) -> Self {
        self.center = center;
        self
    }

    pub fn with_sampling(mut self, n_theta: usize, n_phi: usize) -> Self {
        self.samples_theta = n_theta;
        self.samples_phi = n_phi;
        self
    }

    /// Characteristic length used to scale residual tolerances.
    pub fn length_scale(&self) -> f64 {
        match &self.kind {
            GeometryKind::Ball { radius } => *radius,
            GeometryKind::Spheroid {
                equatorial, polar, ..
            } => equatorial.max(*polar),
            GeometryKind::RevolutionProfile {
                radial_poly,
                axial_poly,
                ..
            } => {
                let p_max = radial_poly.iter().map(|c| c.abs()).sum::<f64>();
                let q_max = axial_poly.iter().map(|c| c.abs()).sum::<f64>();
                p_max.max(q_max).max(1e-12)
            }
            GeometryKind::TriaxialEllipsoid { semi_axes } => {
                semi_axes.iter().cloned().fold(0.0, f64::max)
            }
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.samples_theta < 4 || self.samples_phi < 4 {
            return Err(GeometryError::Invalid(
                "boundary sampling must be at least 4 x 4".into(),
            ));
        }
        match &self.kind {
            GeometryKind::Ball { radius } => {
                if !(*radius > 0.0) {
                    return Err(GeometryError::Invalid(format!(
                        "ball radius must be positive, got {radius}"
                    )));
                }
            }
            GeometryKind::Spheroid {
                equatorial,
                polar,
                axis,
            } => {
                if !(*equatorial > 0.0) || !(*polar > 0.0) {
                    return Err(GeometryError::Invalid(
                        "spheroid semi-axes must be positive".into(),
                    ));
                }
                if norm(*axis) <= 0.0 {
                    return Err(GeometryError::Invalid(
                        "spheroid axis must be nonzero".into(),
                    ));
                }
            }
            GeometryKind::RevolutionProfile {
                radial_poly,
                axial_poly,
                axis,
            } => {
                if norm(*axis) <= 0.0 {
                    return Err(GeometryError::Invalid(
                        "revolution axis must be nonzero".into(),
                    ));
                }
                if radial_poly.is_empty() || axial_poly.is_empty() {
                    return Err(GeometryError::Invalid(
                        "profile polynomials must be nonempty".into(),
                    ));
                }
                // p > 0 on [-1,1] keeps the caps smooth; the meridian must be
                // regular: (rho', zeta') never vanishes.
                for k in 0..=256 {
                    let u = -1.0 + 2.0 * k as f64 / 256.0;
                    if poly_eval(radial_poly, u) <= 0.0 {
                        return Err(GeometryError::Invalid(format!(
                            "radial profile must stay positive on [-1,1]; p({u}) <= 0"
                        )));
                    }
                    let t = u.acos();
                    let m = meridian(radial_poly, axial_poly, t);
                    if m.d_rho * m.d_rho + m.d_zeta * m.d_zeta <= 1e-20 {
                        return Err(GeometryError::Invalid(
                            "degenerate meridian tangent (rho', zeta') = 0".into(),
                        ));
                    }
                }
            }
            GeometryKind::TriaxialEllipsoid { semi_axes } => {
                if semi_axes.iter().any(|&a| !(a > 0.0)) {
                    return Err(GeometryError::Invalid(
                        "ellipsoid semi-axes must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn axis_frame(&self) -> (V3, V3, V3) {
        match &self.kind {
            GeometryKind::Spheroid { axis, .. } | GeometryKind::RevolutionProfile { axis, .. } => {
                let a = normalize(*axis);
                if (a[0] == 0.0 && a[1] == 0.0) || norm(sub(a, [0.0, 0.0, 1.0])) < 1e-14 {
                    // Keep the canonical frame when the axis is e3.
                    ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, a[2].signum()])
                } else {
                    let e1 = orthogonal(a);
                    let e2 = cross(a, e1);
                    (e1, e2, a)
                }
            }
            _ => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
        }
    }

    /// Implicit quadric data (Hessian diagonal in the local frame) for the
    /// geometries that admit one.
    fn quadric_semi_axes(&self) -> Option<[f64; 3]> {
        match &self.kind {
            GeometryKind::Ball { radius } => Some([*radius; 3]),
            GeometryKind::Spheroid {
                equatorial, polar, ..
            } => Some([*equatorial, *equatorial, *polar]),
            GeometryKind::TriaxialEllipsoid { semi_axes } => Some(*semi_axes),
            GeometryKind::RevolutionProfile { .. } => None,
        }
    }

    /// Local coordinates of a point in the (e1, e2, axis) frame at the center.
    fn to_local(&self, p: V3) -> V3 {
        let (e1, e2, e3) = self.axis_frame();
        let w = sub(p, self.center);
        [dot(w, e1), dot(w, e2), dot(w, e3)]
    }

    fn local_dir_to_world(&self, d: V3) -> V3 {
        let (e1, e2, e3) = self.axis_frame();
        add(add(scale(e1, d[0]), scale(e2, d[1])), scale(e3, d[2]))
    }

    /// First-order estimate of the distance from `p` to the surface,
    /// relative to the geometry scale.
    pub fn surface_residual(&self, p: V3) -> f64 {
        let scale_len = self.length_scale();
        if let Some(sa) = self.quadric_semi_axes() {
            let x = self.to_local(p);
            let f = (x[0] / sa[0]).powi(2) + (x[1] / sa[1]).powi(2) + (x[2] / sa[2]).powi(2) - 1.0;
            let g = [
                2.0 * x[0] / (sa[0] * sa[0]),
                2.0 * x[1] / (sa[1] * sa[1]),
                2.0 * x[2] / (sa[2] * sa[2]),
            ];
            (f / norm(g).max(1e-300)).abs() / scale_len
        } else if let GeometryKind::RevolutionProfile {
            radial_poly,
            axial_poly,
            ..
        } = &self.kind
        {
            let x = self.to_local(p);
            let r_loc = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let (t, d2) = nearest_meridian_parameter(radial_poly, axial_poly, r_loc, x[2]);
            let _ = t;
            d2.sqrt() / scale_len
        } else {
            unreachable!()
        }
    }

    /// Outward unit normal at a surface point.
    pub fn normal_at(&self, p: V3) -> Result<V3, GeometryError> {
        self.check_on_surface(p)?;
        if let Some(sa) = self.quadric_semi_axes() {
            let x = self.to_local(p);
            let g = [
                2.0 * x[0] / (sa[0] * sa[0]),
                2.0 * x[1] / (sa[1] * sa[1]),
                2.0 * x[2] / (sa[2] * sa[2]),
            ];
            Ok(self.local_dir_to_world(normalize(g)))
        } else if let GeometryKind::RevolutionProfile {
            radial_poly,
            axial_poly,
            ..
        } = &self.kind
        {
            let x = self.to_local(p);
            let r_loc = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let (t, _) = nearest_meridian_parameter(radial_poly, axial_poly, r_loc, x[2]);
            let m = meridian(radial_poly, axial_poly, t);
            // Outward normal in the meridian half-plane: (zeta', -rho') rotated
            // so that it points away from the axis for convex caps.
            let speed = (m.d_rho * m.d_rho + m.d_zeta * m.d_zeta).sqrt();
            let nr = -m.d_zeta / speed;
            let nz = m.d_rho / speed;
            let (cos_phi, sin_phi) = if r_loc > 1e-14 {
                (x[0] / r_loc, x[1] / r_loc)
            } else {
                (1.0, 0.0)
            };
            Ok(self.local_dir_to_world([nr * cos_phi, nr * sin_phi, nz]))
        } else {
            unreachable!()
        }
    }

    fn check_on_surface(&self, p: V3) -> Result<(), GeometryError> {
        let residual = self.surface_residual(p);
        if residual > 1e-10 {
            return Err(GeometryError::PointOffSurface { residual });
        }
        Ok(())
    }

    /// Differential of the Gauss map applied to a tangent vector at `p`.
    pub fn gauss_map_differential(&self, p: V3, v: V3) -> Result<V3, GeometryError> {
        self.check_on_surface(p)?;
        let n = self.normal_at(p)?;
        let v_norm = norm(v);
        if v_norm > 0.0 {
            let normal_part = dot(v, n).abs() / v_norm;
            if normal_part > 1e-10 {
                return Err(GeometryError::NotTangent { normal_part });
            }
        }
        if let Some(sa) = self.quadric_semi_axes() {
            // n = grad F / |grad F| with constant Hessian H; for tangent v,
            // dn(v) = (I - n n^T) H v / |grad F|.
            let x = self.to_local(p);
            let vl = {
                let (e1, e2, e3) = self.axis_frame();
                [dot(v, e1), dot(v, e2), dot(v, e3)]
            };
            let g = [
                2.0 * x[0] / (sa[0] * sa[0]),
                2.0 * x[1] / (sa[1] * sa[1]),
                2.0 * x[2] / (sa[2] * sa[2]),
            ];
            let g_norm = norm(g);
            let nl = normalize(g);
            let hv = [
                2.0 * vl[0] / (sa[0] * sa[0]),
                2.0 * vl[1] / (sa[1] * sa[1]),
                2.0 * vl[2] / (sa[2] * sa[2]),
            ];
            let proj = sub(hv, scale(nl, dot(nl, hv)));
            Ok(self.local_dir_to_world(scale(proj, 1.0 / g_norm)))
        } else if let GeometryKind::RevolutionProfile {
            radial_poly,
            axial_poly,
            ..
        } = &self.kind
        {
            let x = self.to_local(p);
            let r_loc = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let (t, _) = nearest_meridian_parameter(radial_poly, axial_poly, r_loc, x[2]);
            let phi = x[1].atan2(x[0]);
            let sample = revolution_shape_sample(self, radial_poly, axial_poly, t, phi, 0.0);
            let a = dot(v, sample.tangent1);
            let b = dot(v, sample.tangent2);
            let m = sample.dn_matrix;
            let out = add(
                scale(sample.tangent1, m[0][0] * a + m[0][1] * b),
                scale(sample.tangent2, m[1][0] * a + m[1][1] * b),
            );
            Ok(out)
        } else {
            unreachable!()
        }
    }

    /// Dense boundary sampling with normals and area weights (midpoint rule
    /// in colatitude x uniform azimuth).
    pub fn boundary_samples(&self) -> Result<Vec<ShapeOperatorSample>, GeometryError> {
        self.validate()?;
        let nt = self.samples_theta;
        let np = self.samples_phi;
        let mut out = Vec::with_capacity(nt * np);
        let dt = std::f64::consts::PI / nt as f64;
        let dphi = 2.0 * std::f64::consts::PI / np as f64;
        for i in 0..nt {
            let t = (i as f64 + 0.5) * dt;
            for k in 0..np {
                let phi = k as f64 * dphi;
                out.push(self.shape_sample_at(t, phi, dt * dphi)?);
            }
        }
        Ok(out)
    }

    /// Shape operator sample at surface parameters (t, phi); `cell` is the
    /// parameter-space cell measure used to form the area weight.
    fn shape_sample_at(
        &self,
        t: f64,
        phi: f64,
        cell: f64,
    ) -> Result<ShapeOperatorSample, GeometryError> {
        match &self.kind {
            GeometryKind::Ball { radius } => {
                let r = *radius;
                let dir = [t.sin() * phi.cos(), t.sin() * phi.sin(), t.cos()];
                let point = add(self.center, scale(dir, r));
                let t1 = [t.cos() * phi.cos(), t.cos() * phi.sin(), -t.sin()];
                let t2 = [-phi.sin(), phi.cos(), 0.0];
                Ok(ShapeOperatorSample {
                    point,
                    normal: dir,
                    tangent1: t1,
                    tangent2: t2,
                    dn_matrix: [[1.0 / r, 0.0], [0.0, 1.0 / r]],
                    k1: -1.0 / r,
                    k2: -1.0 / r,
                    area_weight: r * r * t.sin() * cell,
                })
            }
            GeometryKind::Spheroid {
                equatorial, polar, ..
            } => {
                // Treated as a revolution surface with p = a, q = c u.
                let p_poly = vec![*equatorial];
                let q_poly = vec![0.0, *polar];
                Ok(revolution_shape_sample(
                    self, &p_poly, &q_poly, t, phi, cell,
                ))
            }
            GeometryKind::RevolutionProfile {
                radial_poly,
                axial_poly,
                ..
            } => Ok(revolution_shape_sample(
                self,
                radial_poly,
                axial_poly,
                t,
                phi,
                cell,
            )),
            GeometryKind::TriaxialEllipsoid { semi_axes } => {
                Ok(triaxial_shape_sample(self, *semi_axes, t, phi, cell))
            }
        }
    }

    /// Supremum over boundary samples of max(|k1|, |k2|).
    pub fn curvature_bound_lambda(&self) -> Result<f64, GeometryError> {
        if let GeometryKind::Ball { radius } = self.kind {
            return Ok(1.0 / radius);
        }
        let samples = self.boundary_samples()?;
        Ok(samples
            .iter()
            .map(|s| s.k1.abs().max(s.k2.abs()))
            .fold(0.0, f64::max))
    }

    /// Curvature extrema (min and max of the signed principal curvatures).
    pub fn curvature_extrema(&self) -> Result<(f64, f64), GeometryError> {
        let samples = self.boundary_samples()?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &samples {
            lo = lo.min(s.k1.min(s.k2));
            hi = hi.max(s.k1.max(s.k2));
        }
        Ok((lo, hi))
    }

    /// True when the rigid field is tangent to the boundary everywhere:
    /// max over samples of |w.n| / (1 + |w|) stays below 1e-9.
    pub fn rigid_field_tangency(&self, w: &RigidField) -> Result<TangencyReport, GeometryError> {
        let samples = self.boundary_samples()?;
        let mut max_violation = 0.0_f64;
        for s in &samples {
            let val = w.eval(s.point);
            let viol = dot(val, s.normal).abs() / (1.0 + norm(val));
            max_violation = max_violation.max(viol);
        }
        Ok(TangencyReport {
            tangent: max_violation <= 1e-9,
            max_violation,
        })
    }

    /// Classify the space of rigid fields tangent to the boundary by a
    /// least-squares problem over (translation, angular) in R^6: the Gram
    /// matrix of the normal traces is assembled on the sample grid and its
    /// near-null eigenvectors (relative threshold 1e-7) are the generators.
    pub fn ker_s_classification(&self) -> Result<KernelClassification, GeometryError> {
        let samples = self.boundary_samples()?;
        let mut gram = DMatrix::<f64>::zeros(6, 6);
        for s in &samples {
            // w.n = a.n + b.((x-c) ∧ n)
            let arm = cross(sub(s.point, self.center), s.normal);
            let phi = [
                s.normal[0],
                s.normal[1],
                s.normal[2],
                arm[0],
                arm[1],
                arm[2],
            ];
            for i in 0..6 {
                for j in 0..6 {
                    gram[(i, j)] += s.area_weight * phi[i] * phi[j];
                }
            }
        }
        let eig = gram.symmetric_eigen();
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let threshold = 1e-7 * max_ev;
        let mut generators = Vec::new();
        for j in 0..6 {
            if eig.eigenvalues[j] < threshold {
                let col = eig.eigenvectors.column(j);
                generators.push(RigidField {
                    translation: [col[0], col[1], col[2]],
                    angular: [col[3], col[4], col[5]],
                    center: self.center,
                });
            }
        }
        let dimension = generators.len();
        let mut axis = None;
        let mut center = None;
        match dimension {
            1 => {
                let g = &generators[0];
                let b = g.angular;
                let b2 = dot(b, b);
                if b2 > 0.0 {
                    let dir = normalize(b);
                    let point = add(g.center, scale(cross(b, g.translation), 1.0 / b2));
                    axis = Some((point, dir));
                }
            }
            3 => center = Some(self.center),
            _ => {}
        }
        Ok(KernelClassification {
            dimension,
            generators,
            axis,
            center,
        })
    }
}

fn poly_eval(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
}

fn poly_deriv(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Meridian curve data at parameter t: rho = sin t * p(cos t), zeta = q(cos t)
/// with first and second derivatives in t.
struct Meridian {
    rho: f64,
    zeta: f64,
    d_rho: f64,
    d_zeta: f64,
    dd_rho: f64,
    dd_zeta: f64,
}

fn meridian(p_coeffs: &[f64], q_coeffs: &[f64], t: f64) -> Meridian {
    let (st, ct) = t.sin_cos();
    let u = ct;
    let dp = poly_deriv(p_coeffs);
    let ddp = poly_deriv(&dp);
    let dq = poly_deriv(q_coeffs);
    let ddq = poly_deriv(&dq);
    let p = poly_eval(p_coeffs, u);
    let p1 = poly_eval(&dp, u);
    let p2 = poly_eval(&ddp, u);
    let q1 = poly_eval(&dq, u);
    let q2 = poly_eval(&ddq, u);
    Meridian {
        rho: st * p,
        zeta: poly_eval(q_coeffs, u),
        d_rho: ct * p - st * st * p1,
        d_zeta: -st * q1,
        dd_rho: -st * p - 3.0 * st * ct * p1 + st * st * st * p2,
        dd_zeta: -ct * q1 + st * st * q2,
    }
}

/// Parameter of the meridian point nearest to (r_loc, z_loc); returns the
/// parameter and the squared distance. Dense scan plus Newton refinement.
fn nearest_meridian_parameter(
    p_coeffs: &[f64],
    q_coeffs: &[f64],
    r_loc: f64,
    z_loc: f64,
) -> (f64, f64) {
    let scan = 512;
    let mut best_t = 0.0;
    let mut best_d2 = f64::INFINITY;
    for k in 0..=scan {
        let t = std::f64::consts::PI * k as f64 / scan as f64;
        let m = meridian(p_coeffs, q_coeffs, t);
        let d2 = (m.rho - r_loc).powi(2) + (m.zeta - z_loc).powi(2);
        if d2 < best_d2 {
            best_d2 = d2;
            best_t = t;
        }
    }
    // Newton on g(t) = d/dt of the squared distance.
    let mut t = best_t;
    for _ in 0..60 {
        let m = meridian(p_coeffs, q_coeffs, t);
        let er = m.rho - r_loc;
        let ez = m.zeta - z_loc;
        let g = er * m.d_rho + ez * m.d_zeta;
        let dg = m.d_rho * m.d_rho + m.d_zeta * m.d_zeta + er * m.dd_rho + ez * m.dd_zeta;
        if dg.abs() < 1e-300 {
            break;
        }
        let step = g / dg;
        t = (t - step).clamp(0.0, std::f64::consts::PI);
        if step.abs() < 1e-15 {
            break;
        }
    }
    let m = meridian(p_coeffs, q_coeffs, t);
    let d2 = (m.rho - r_loc).powi(2) + (m.zeta - z_loc).powi(2);
    if d2 < best_d2 {
        (t, d2)
    } else {
        (best_t, best_d2)
    }
}

/// Shape operator of a surface of revolution from its fundamental forms.
/// The first/second forms are diagonal in the (meridian, azimuth) frame, so
/// the principal directions are the frame itself.
fn revolution_shape_sample(
    geom: &GeometryDescriptor,
    p_coeffs: &[f64],
    q_coeffs: &[f64],
    t: f64,
    phi: f64,
    cell: f64,
) -> ShapeOperatorSample {
    let m = meridian(p_coeffs, q_coeffs, t);
    let (sp, cp) = phi.sin_cos();
    let speed2 = m.d_rho * m.d_rho + m.d_zeta * m.d_zeta;
    let speed = speed2.sqrt();

    let point_local = [m.rho * cp, m.rho * sp, m.zeta];
    // Outward when zeta decreases with t (q' > 0 in u means zeta' < 0 in t).
    let orient = if m.d_zeta <= 0.0 { 1.0 } else { -1.0 };
    let n_local = [
        orient * -m.d_zeta / speed * cp,
        orient * -m.d_zeta / speed * sp,
        orient * m.d_rho / speed,
    ];
    let t1_local = [m.d_rho / speed * cp, m.d_rho / speed * sp, m.d_zeta / speed];
    let t2_local = [-sp, cp, 0.0];

    // Fundamental forms: E = speed^2, G = rho^2, F = f = 0,
    // e = (rho' zeta'' - zeta' rho'')/speed, g = rho zeta' / speed.
    let e2 = orient * (m.d_rho * m.dd_zeta - m.d_zeta * m.dd_rho) / speed;
    let g2 = orient * m.rho * m.d_zeta / speed;
    let k_meridian = e2 / speed2;
    let k_parallel = g2 / (m.rho * m.rho);

    ShapeOperatorSample {
        point: add(geom.center, geom.local_dir_to_world(point_local)),
        normal: geom.local_dir_to_world(n_local),
        tangent1: geom.local_dir_to_world(t1_local),
        tangent2: geom.local_dir_to_world(t2_local),
        dn_matrix: [[-k_meridian, 0.0], [0.0, -k_parallel]],
        k1: k_meridian,
        k2: k_parallel,
        area_weight: m.rho * speed * cell,
    }
}

/// Shape operator of the triaxial ellipsoid via the implicit quadric.
fn triaxial_shape_sample(
    geom: &GeometryDescriptor,
    sa: [f64; 3],
    t: f64,
    phi: f64,
    cell: f64,
) -> ShapeOperatorSample {
    let (st, ct) = t.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let x = [sa[0] * st * cp, sa[1] * st * sp, sa[2] * ct];
    let g = [
        2.0 * x[0] / (sa[0] * sa[0]),
        2.0 * x[1] / (sa[1] * sa[1]),
        2.0 * x[2] / (sa[2] * sa[2]),
    ];
    let g_norm = norm(g);
    let n = normalize(g);
    let t1 = orthogonal(n);
    let t2 = cross(n, t1);
    let h_over = |v: V3| -> V3 {
        [
            2.0 * v[0] / (sa[0] * sa[0]) / g_norm,
            2.0 * v[1] / (sa[1] * sa[1]) / g_norm,
            2.0 * v[2] / (sa[2] * sa[2]) / g_norm,
        ]
    };
    let dn = |v: V3| -> V3 {
        let hv = h_over(v);
        sub(hv, scale(n, dot(n, hv)))
    };
    let d1 = dn(t1);
    let d2 = dn(t2);
    let m = [[dot(d1, t1), dot(d2, t1)], [dot(d1, t2), dot(d2, t2)]];
    // Principal curvatures: eigenvalues of -dn (2x2 closed form).
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let mu1 = tr / 2.0 + disc;
    let mu2 = tr / 2.0 - disc;

    // Area weight from the parametrization x(t,phi).
    let xt = [sa[0] * ct * cp, sa[1] * ct * sp, -sa[2] * st];
    let xp = [-sa[0] * st * sp, sa[1] * st * cp, 0.0];
    let area = norm(cross(xt, xp)) * cell;

    ShapeOperatorSample {
        point: add(geom.center, x),
        normal: n,
        tangent1: t1,
        tangent2: t2,
        dn_matrix: m,
        k1: -mu1,
        k2: -mu2,
        area_weight: area,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ball_gauss_map_is_identity_over_radius() {
        let geom = GeometryDescriptor::ball(2.0);
        let p = [0.0, 0.0, 2.0];
        let v = [1.0, 0.0, 0.0];
        let dn = geom.gauss_map_differential(p, v).unwrap();
        assert_relative_eq!(dn[0], 0.5, max_relative = 1e-12);
        assert!(dn[1].abs() < 1e-13 && dn[2].abs() < 1e-13);
        // Linearity at v = 0.
        let z = geom.gauss_map_differential(p, [0.0; 3]).unwrap();
        assert_eq!(z, [0.0; 3]);
    }

    #[test]
    fn gauss_map_rejects_bad_inputs() {
        let geom = GeometryDescriptor::ball(1.0);
        let off = geom.gauss_map_differential([0.0, 0.0, 1.5], [1.0, 0.0, 0.0]);
        assert!(matches!(off, Err(GeometryError::PointOffSurface { .. })));
        let not_tan = geom.gauss_map_differential([0.0, 0.0, 1.0], [0.0, 0.1, 1.0]);
        assert!(matches!(not_tan, Err(GeometryError::NotTangent { .. })));
    }

    #[test]
    fn curvature_bound_on_balls() {
        assert_relative_eq!(
            GeometryDescriptor::ball(2.0)
                .curvature_bound_lambda()
                .unwrap(),
            0.5,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            GeometryDescriptor::ball(1.0)
                .curvature_bound_lambda()
                .unwrap(),
            1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn ball_shape_samples_are_spherical() {
        let geom = GeometryDescriptor::ball(1.5).with_sampling(24, 24);
        for s in geom.boundary_samples().unwrap() {
            assert_relative_eq!(norm(s.normal), 1.0, max_relative = 1e-12);
            assert_relative_eq!(s.k1, -1.0 / 1.5, max_relative = 1e-12);
            assert_relative_eq!(s.k2, -1.0 / 1.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn shape_operator_is_self_adjoint_and_tangential() {
        let geoms = [
            GeometryDescriptor::spheroid(1.0, 2.0).with_sampling(40, 40),
            GeometryDescriptor::triaxial([1.0, 1.3, 1.7]).with_sampling(40, 40),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for geom in geoms {
            let samples = geom.boundary_samples().unwrap();
            for _ in 0..50 {
                let s = &samples[rng.random_range(0..samples.len())];
                assert_relative_eq!(norm(s.normal), 1.0, max_relative = 1e-12);
                // dn matrix symmetric.
                assert!((s.dn_matrix[0][1] - s.dn_matrix[1][0]).abs() <= 1e-10);
                // random tangents: self-adjointness and tangency of dn(v).
                let a = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
                let b = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
                let v = add(scale(s.tangent1, a[0]), scale(s.tangent2, a[1]));
                let w = add(scale(s.tangent1, b[0]), scale(s.tangent2, b[1]));
                let dv = geom.gauss_map_differential(s.point, v).unwrap();
                let dw = geom.gauss_map_differential(s.point, w).unwrap();
                assert!(dot(dv, s.normal).abs() <= 1e-10 * norm(dv).max(1.0));
                assert!((dot(dv, w) - dot(v, dw)).abs() <= 1e-10 * (norm(v) * norm(w)).max(1.0));
            }
        }
    }

    #[test]
    fn shape_matrix_eigenvalues_match_negated_curvatures() {
        let geom = GeometryDescriptor::spheroid(1.0, 2.0).with_sampling(30, 30);
        for s in geom.boundary_samples().unwrap() {
            let tr = s.dn_matrix[0][0] + s.dn_matrix[1][1];
            let det = s.dn_matrix[0][0] * s.dn_matrix[1][1] - s.dn_matrix[0][1] * s.dn_matrix[1][0];
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            let mut evs = [tr / 2.0 + disc, tr / 2.0 - disc];
            let mut neg = [-s.k1, -s.k2];
            evs.sort_by(f64::total_cmp);
            neg.sort_by(f64::total_cmp);
            assert!((evs[0] - neg[0]).abs() <= 1e-10);
            assert!((evs[1] - neg[1]).abs() <= 1e-10);
        }
    }

    #[test]
    fn spheroid_gauss_map_matches_finite_difference_of_normal() {
        // Oracle: central finite difference of the normal field along a
        // parameter curve through p with the requested initial velocity.
        let geom = GeometryDescriptor::spheroid(1.0, 2.0);
        let (a, c) = (1.0, 2.0);
        let surf = |t: f64, phi: f64| -> V3 {
            [
                a * t.sin() * phi.cos(),
                a * t.sin() * phi.sin(),
                c * t.cos(),
            ]
        };
        let normal = |t: f64, phi: f64| -> V3 {
            let x = surf(t, phi);
            normalize([
                2.0 * x[0] / (a * a),
                2.0 * x[1] / (a * a),
                2.0 * x[2] / (c * c),
            ])
        };
        let (t0, phi0) = (std::f64::consts::FRAC_PI_2, 0.3);
        let p = surf(t0, phi0);
        // Meridian direction with unit speed: dx/dt scaled.
        let h = 1e-6;
        let xt = scale(sub(surf(t0 + h, phi0), surf(t0 - h, phi0)), 1.0 / (2.0 * h));
        let speed = norm(xt);
        let v = scale(xt, 1.0 / speed);
        let fd_h = 1e-5;
        let dn_fd = scale(
            sub(
                normal(t0 + fd_h / speed, phi0),
                normal(t0 - fd_h / speed, phi0),
            ),
            1.0 / (2.0 * fd_h),
        );
        let dn = geom.gauss_map_differential(p, v).unwrap();
        for i in 0..3 {
            assert!(
                (dn[i] - dn_fd[i]).abs() <= 1e-7,
                "component {i}: {} vs oracle {}",
                dn[i],
                dn_fd[i]
            );
        }
    }

    #[test]
    fn spheroid_curvature_bound_matches_closed_form_oracle() {
        // Oracle: principal curvatures of an ellipse meridian, evaluated on
        // a dense 400x400 parameter grid from the explicit formulas
        // k_meridian = a c / w^3, k_parallel = c / (a w), w^2 = a^2 cos^2 t + c^2 sin^2 t.
        let (a, c) = (1.0_f64, 2.0_f64);
        let mut oracle: f64 = 0.0;
        let nt = 400;
        for i in 0..nt {
            let t = (i as f64 + 0.5) * std::f64::consts::PI / nt as f64;
            let w = (a * a * t.cos().powi(2) + c * c * t.sin().powi(2)).sqrt();
            let km = a * c / w.powi(3);
            let kp = c / (a * w);
            oracle = oracle.max(km.abs().max(kp.abs()));
        }
        let geom = GeometryDescriptor::spheroid(a, c).with_sampling(400, 8);
        let lambda = geom.curvature_bound_lambda().unwrap();
        assert_relative_eq!(lambda, oracle, max_relative = 1e-10);
        // Pole curvature c/a^2 = 2 bounds the supremum from below.
        assert!(lambda <= c / (a * a) + 1e-9);
        assert!(lambda > 0.99 * c / (a * a));
    }

    #[test]
    fn curvature_bound_monotone_under_refinement() {
        let coarse = GeometryDescriptor::spheroid(1.0, 2.0)
            .with_sampling(50, 8)
            .curvature_bound_lambda()
            .unwrap();
        let fine = GeometryDescriptor::spheroid(1.0, 2.0)
            .with_sampling(200, 8)
            .curvature_bound_lambda()
            .unwrap();
        assert!(fine >= coarse - 1e-13);
    }

    #[test]
    fn rigid_field_tangency_cases() {
        let ball = GeometryDescriptor::ball(1.0).with_sampling(60, 60);
        let rot = RigidField {
            translation: [0.0; 3],
            angular: [0.0, 0.0, 1.0],
            center: [0.0; 3],
        };
        assert!(ball.rigid_field_tangency(&rot).unwrap().tangent);
        let shift = RigidField {
            translation: [1.0, 0.0, 0.0],
            angular: [0.0; 3],
            center: [0.0; 3],
        };
        let rep = ball.rigid_field_tangency(&shift).unwrap();
        assert!(!rep.tangent);
        assert!(rep.max_violation > 1e-3);

        let spheroid = GeometryDescriptor::spheroid(1.0, 2.0).with_sampling(60, 60);
        let about_axis = RigidField {
            translation: [0.0; 3],
            angular: [0.0, 0.0, 1.0],
            center: [0.0; 3],
        };
        let about_e1 = RigidField {
            translation: [0.0; 3],
            angular: [1.0, 0.0, 0.0],
            center: [0.0; 3],
        };
        assert!(spheroid.rigid_field_tangency(&about_axis).unwrap().tangent);
        assert!(!spheroid.rigid_field_tangency(&about_e1).unwrap().tangent);
    }

    #[test]
    fn kernel_classification_dimensions() {
        let ball = GeometryDescriptor::ball(1.0).with_sampling(80, 80);
        let cls = ball.ker_s_classification().unwrap();
        assert_eq!(cls.dimension, 3);
        assert!(cls.center.is_some());
        for g in &cls.generators {
            assert!(ball.rigid_field_tangency(g).unwrap().tangent);
        }

        let spheroid = GeometryDescriptor::spheroid(1.0, 2.0).with_sampling(80, 80);
        let cls = spheroid.ker_s_classification().unwrap();
        assert_eq!(cls.dimension, 1);
        let (point, dir) = cls.axis.unwrap();
        assert!(norm(cross(dir, [0.0, 0.0, 1.0])) < 1e-6);
        assert!(norm(sub(point, [0.0; 3])) < 1e-6);
        for g in &cls.generators {
            assert!(spheroid.rigid_field_tangency(g).unwrap().tangent);
        }

        let triaxial = GeometryDescriptor::triaxial([1.0, 1.3, 1.7]).with_sampling(80, 80);
        let cls = triaxial.ker_s_classification().unwrap();
        assert_eq!(cls.dimension, 0);
    }

    #[test]
    fn triaxial_rejects_every_random_rigid_field() {
        let geom = GeometryDescriptor::triaxial([1.0, 1.3, 1.7]).with_sampling(60, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let w = RigidField {
                translation: [
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                ],
                angular: [
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                ],
                center: [0.0; 3],
            };
            if w.magnitude_scale() < 1e-3 {
                continue;
            }
            assert!(!geom.rigid_field_tangency(&w).unwrap().tangent);
        }
    }

    #[test]
    fn rigid_field_sym_grad_vanishes() {
        // S w = 0 for w = a + b ∧ (x - c): finite-difference check.
        let w = RigidField {
            translation: [0.3, -0.2, 0.9],
            angular: [1.0, 2.0, -0.5],
            center: [0.1, 0.0, -0.4],
        };
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let x = [
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            ];
            for a in 0..3 {
                for b in 0..3 {
                    let mut xp = x;
                    xp[b] += h;
                    let mut xm = x;
                    xm[b] -= h;
                    let dab = (w.eval(xp)[a] - w.eval(xm)[a]) / (2.0 * h);
                    let mut yp = x;
                    yp[a] += h;
                    let mut ym = x;
                    ym[a] -= h;
                    let dba = (w.eval(yp)[b] - w.eval(ym)[b]) / (2.0 * h);
                    assert!((dab + dba).abs() / 2.0 <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn revolution_profile_matches_spheroid() {
        // p(u) = a, q(u) = c u reproduces the spheroid exactly.
        let rev = GeometryDescriptor {
            kind: GeometryKind::RevolutionProfile {
                radial_poly: vec![1.0],
                axial_poly: vec![0.0, 2.0],
                axis: [0.0, 0.0, 1.0],
            },
            center: [0.0; 3],
            samples_theta: 60,
            samples_phi: 30,
        };
        let sph = GeometryDescriptor::spheroid(1.0, 2.0).with_sampling(60, 30);
        let a = rev.boundary_samples().unwrap();
        let b = sph.boundary_samples().unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            assert!(norm(sub(sa.point, sb.point)) < 1e-12);
            assert!(norm(sub(sa.normal, sb.normal)) < 1e-12);
            assert!((sa.k1 - sb.k1).abs() < 1e-10);
            assert!((sa.k2 - sb.k2).abs() < 1e-10);
        }
        let cls = rev.ker_s_classification().unwrap();
        assert_eq!(cls.dimension, 1);
    }

    #[test]
    fn egg_profile_classifies_as_one_dimensional() {
        // Non-spherical, non-ellipsoidal smooth solid of revolution.
        let egg = GeometryDescriptor {
            kind: GeometryKind::RevolutionProfile {
                radial_poly: vec![1.0, 0.15],
                axial_poly: vec![0.0, 1.3, 0.1],
                axis: [0.0, 0.0, 1.0],
            },
            center: [0.0; 3],
            samples_theta: 80,
            samples_phi: 40,
        };
        egg.validate().unwrap();
        let cls = egg.ker_s_classification().unwrap();
        assert_eq!(cls.dimension, 1);
        for g in &cls.generators {
            assert!(egg.rigid_field_tangency(g).unwrap().tangent);
        }
    }
}
