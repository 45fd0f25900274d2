//! Divergence-free, boundary-tangent vector fields on the ball.
//!
//! Each field comes from a toroidal or poloidal scalar generator built on a
//! real solid harmonic: with f = r^{2n} H_lm the toroidal field is
//! grad f ∧ x, and with f = r^{2n} (R^2 - r^2) H_lm the poloidal field is
//! curl(grad f ∧ x). Both are polynomial vector fields, exactly solenoidal
//! by construction and tangent to the sphere r = R (the toroidal family is
//! tangent to every sphere; the poloidal one because its generator vanishes
//! at r = R). Fields are scaled to unit L^2 norm over the ball using the
//! closed-form monomial integrals from [`crate::poly`].

use crate::poly::{
    cross, curl, divergence, gradient, harmonic_order_offset, jacobian, real_solid_harmonics,
    Poly3, PowerTable, VecPoly,
};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("invalid basis request: {0}")]
    InvalidRequest(String),
    #[error("basis size {requested} exceeds the configured maximum {max}")]
    TooLarge { requested: usize, max: usize },
    #[error("basis does not contain the toroidal l=1 fields (l_max < 1)")]
    MissingRigidModes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FieldKind {
    Toroidal,
    Poloidal,
}

/// Index of one basis field: (kind, degree l, order m, radial index n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisIndex {
    pub kind: FieldKind,
    pub l: usize,
    pub m: i32,
    pub n: usize,
}

/// One basis field with its exact polynomial velocity and Jacobian.
#[derive(Debug, Clone)]
pub struct BasisField {
    pub index: BasisIndex,
    pub velocity: VecPoly,
    pub jacobian: [[Poly3; 3]; 3],
    /// L^2(ball) norm of the generator field before unit normalization.
    pub raw_l2_norm: f64,
}

/// The ordered family of fields for a truncation (l_max, n_max).
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub radius: f64,
    pub l_max: usize,
    pub n_max: usize,
    pub fields: Vec<BasisField>,
}

pub const DEFAULT_MAX_FIELDS: usize = 512;

/// Number of fields produced by [`build_basis`]: both kinds carry
/// n_max + 1 radial indices per spherical harmonic with 1 <= l <= l_max.
pub fn basis_count(l_max: usize, n_max: usize) -> usize {
    2 * (n_max + 1) * ((l_max + 1) * (l_max + 1) - 1)
}

pub fn build_basis(radius: f64, l_max: usize, n_max: usize) -> Result<BasisSet, BasisError> {
    build_basis_with_limit(radius, l_max, n_max, DEFAULT_MAX_FIELDS)
}

pub fn build_basis_with_limit(
    radius: f64,
    l_max: usize,
    n_max: usize,
    max_fields: usize,
) -> Result<BasisSet, BasisError> {
    if !(radius > 0.0) {
        return Err(BasisError::InvalidRequest(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if l_max < 1 {
        return Err(BasisError::InvalidRequest(
            "l_max must be at least 1".into(),
        ));
    }
    let count = basis_count(l_max, n_max);
    if count > max_fields {
        return Err(BasisError::TooLarge {
            requested: count,
            max: max_fields,
        });
    }

    let harmonics = real_solid_harmonics(l_max);
    let r2 = Poly3::r_squared();
    let cap = Poly3::constant(radius * radius).sub(&r2); // R^2 - r^2
    let x_field: VecPoly = [Poly3::var(0), Poly3::var(1), Poly3::var(2)];

    let mut indices = Vec::with_capacity(count);
    for kind in [FieldKind::Toroidal, FieldKind::Poloidal] {
        for l in 1..=l_max {
            for m in -(l as i32)..=(l as i32) {
                for n in 0..=n_max {
                    indices.push(BasisIndex { kind, l, m, n });
                }
            }
        }
    }

    let fields: Vec<BasisField> = indices
        .into_par_iter()
        .map(|index| {
            let h = &harmonics[index.l][harmonic_order_offset(index.l, index.m)];
            let mut f = h.clone();
            for _ in 0..index.n {
                f = f.mul(&r2);
            }
            let toroidal = cross(&gradient(&f), &x_field);
            let velocity = match index.kind {
                FieldKind::Toroidal => toroidal,
                FieldKind::Poloidal => {
                    let fp = f.mul(&cap);
                    curl(&cross(&gradient(&fp), &x_field))
                }
            };
            let norm_sq: f64 = velocity
                .iter()
                .map(|c| c.mul(c).ball_integral(radius))
                .sum();
            let raw_l2_norm = norm_sq.sqrt();
            let velocity = [
                velocity[0].scale(1.0 / raw_l2_norm),
                velocity[1].scale(1.0 / raw_l2_norm),
                velocity[2].scale(1.0 / raw_l2_norm),
            ];
            let jac = jacobian(&velocity);
            debug_assert!(divergence(&velocity).max_abs_coeff() <= 1e-10);
            BasisField {
                index,
                velocity,
                jacobian: jac,
                raw_l2_norm,
            }
        })
        .collect();

    Ok(BasisSet {
        radius,
        l_max,
        n_max,
        fields,
    })
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn position(&self, kind: FieldKind, l: usize, m: i32, n: usize) -> Option<usize> {
        self.fields.iter().position(|f| {
            f.index.kind == kind && f.index.l == l && f.index.m == m && f.index.n == n
        })
    }

    /// Exact expansion coefficients of the rigid rotations
    /// Y_1 = (0,-z,y), Y_2 = (z,0,-x), Y_3 = (-y,x,0) in this basis.
    ///
    /// Each Y_i is a single toroidal l=1, n=0 mode: the unnormalized
    /// generators grad{x,y,z} ∧ x are exactly Y_1, Y_2, Y_3, so the
    /// coefficient is the recorded raw norm.
    pub fn rigid_rotation_coefficients(&self) -> Result<[Vec<f64>; 3], BasisError> {
        let slots = [(1, 0), (-1, 1), (0, 2)]; // (m, target Y index)
        let mut out = [
            vec![0.0; self.len()],
            vec![0.0; self.len()],
            vec![0.0; self.len()],
        ];
        for (m, target) in slots {
            let pos = self
                .position(FieldKind::Toroidal, 1, m, 0)
                .ok_or(BasisError::MissingRigidModes)?;
            out[target][pos] = self.fields[pos].raw_l2_norm;
        }
        Ok(out)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
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
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Product quadrature on the ball of radius R and its boundary sphere.
///
/// Radial Gauss-Legendre on [0, R]; angular rule Gauss-Legendre in cos(theta)
/// times uniform azimuth, exact for spherical polynomials through
/// `angular_degree`. Volume weights include the r^2 Jacobian.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub radius: f64,
    pub radial_order: usize,
    pub angular_degree: usize,
    pub volume_nodes: Vec<[f64; 3]>,
    pub volume_weights: Vec<f64>,
    pub boundary_nodes: Vec<[f64; 3]>,
    pub boundary_weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(radius: f64, radial_order: usize, angular_degree: usize) -> Self {
        let (rn, rw) = gauss_legendre(radial_order);
        let radial: Vec<(f64, f64)> = rn
            .iter()
            .zip(&rw)
            .map(|(&t, &w)| (0.5 * radius * (t + 1.0), 0.5 * radius * w))
            .collect();

        let n_theta = angular_degree / 2 + 1; // exact through 2*n_theta - 1 >= angular_degree
        let n_phi = angular_degree + 1;
        let (ct, ctw) = gauss_legendre(n_theta);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;

        let mut directions = Vec::with_capacity(n_theta * n_phi);
        let mut dir_weights = Vec::with_capacity(n_theta * n_phi);
        for (u, wu) in ct.iter().zip(&ctw) {
            let sin_t = (1.0 - u * u).sqrt();
            for k in 0..n_phi {
                let phi = dphi * k as f64;
                directions.push([sin_t * phi.cos(), sin_t * phi.sin(), *u]);
                dir_weights.push(wu * dphi);
            }
        }

        let mut volume_nodes = Vec::with_capacity(radial.len() * directions.len());
        let mut volume_weights = Vec::with_capacity(radial.len() * directions.len());
        for &(r, wr) in &radial {
            for (d, wd) in directions.iter().zip(&dir_weights) {
                volume_nodes.push([r * d[0], r * d[1], r * d[2]]);
                volume_weights.push(wr * r * r * wd);
            }
        }

        let boundary_nodes: Vec<[f64; 3]> = directions
            .iter()
            .map(|d| [radius * d[0], radius * d[1], radius * d[2]])
            .collect();
        let boundary_weights: Vec<f64> = dir_weights.iter().map(|w| w * radius * radius).collect();

        Self {
            radius,
            radial_order,
            angular_degree,
            volume_nodes,
            volume_weights,
            boundary_nodes,
            boundary_weights,
        }
    }

    /// Grid exact for all products of two basis fields (and their Jacobians).
    pub fn for_bilinear(radius: f64, l_max: usize, n_max: usize) -> Self {
        Self::new(radius, 2 * (l_max + n_max) + 6, 2 * l_max + 4)
    }

    /// Higher-order grid covering the cubic advection integrands.
    pub fn for_cubic(radius: f64, l_max: usize, n_max: usize, factor: f64) -> Self {
        let radial = ((2 * (l_max + n_max) + 6) as f64 * factor).ceil() as usize;
        let angular = ((2 * l_max + 4) as f64 * factor).ceil() as usize;
        Self::new(radius, radial, angular)
    }
}

/// Sampled values of one field on a quadrature grid.
#[derive(Debug, Clone)]
pub struct FieldSample {
    /// Velocity at each volume node.
    pub values: Vec<[f64; 3]>,
    /// Jacobian (row a, col b) = d v_a / d x_b at each volume node.
    pub jacobians: Vec<[[f64; 3]; 3]>,
    /// Symmetric part of the Jacobian at each volume node.
    pub sym_grads: Vec<[[f64; 3]; 3]>,
    /// Velocity trace at each boundary node.
    pub boundary_values: Vec<[f64; 3]>,
}

pub fn evaluate_field(field: &BasisField, grid: &QuadratureGrid) -> FieldSample {
    let max_deg = field
        .velocity
        .iter()
        .map(|p| p.degree())
        .chain(field.jacobian.iter().flatten().map(|p| p.degree()))
        .max()
        .unwrap_or(0);

    let eval_nodes = |nodes: &[[f64; 3]]| -> (Vec<[f64; 3]>, Vec<[[f64; 3]; 3]>) {
        nodes
            .par_iter()
            .map_init(
                || PowerTable::new(max_deg),
                |pows, &p| {
                    pows.set_point(p);
                    let v = [
                        field.velocity[0].eval_with(pows),
                        field.velocity[1].eval_with(pows),
                        field.velocity[2].eval_with(pows),
                    ];
                    let mut jac = [[0.0; 3]; 3];
                    for a in 0..3 {
                        for b in 0..3 {
                            jac[a][b] = field.jacobian[a][b].eval_with(pows);
                        }
                    }
                    (v, jac)
                },
            )
            .unzip()
    };

    let (values, jacobians) = eval_nodes(&grid.volume_nodes);
    let sym_grads = jacobians
        .iter()
        .map(|j| {
            let mut s = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    s[a][b] = 0.5 * (j[a][b] + j[b][a]);
                }
            }
            s
        })
        .collect();
    let (boundary_values, _) = eval_nodes(&grid.boundary_nodes);

    FieldSample {
        values,
        jacobians,
        sym_grads,
        boundary_values,
    }
}

/// All basis fields evaluated on one grid, with stacked matrices used by the
/// operator assembly. Immutable after construction.
pub struct SampledBasis {
    pub samples: Vec<FieldSample>,
    pub grid: QuadratureGrid,
    pub radius: f64,
}

impl SampledBasis {
    pub fn new(basis: &BasisSet, grid: &QuadratureGrid) -> Self {
        let samples = basis
            .fields
            .iter()
            .map(|f| evaluate_field(f, grid))
            .collect();
        Self {
            samples,
            grid: grid.clone(),
            radius: basis.radius,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
