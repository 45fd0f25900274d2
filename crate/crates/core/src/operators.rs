//! Assembly of the mass matrix, the two equivalent Stokes bilinear forms,
//! the advection tensor, and the derived spectral quantities: the shifted
//! generalized eigenproblem, the symmetric Poincare constant on the
//! complement of the rigid-rotation kernel, and the full-gradient identity
//! check on the ball.

use crate::basis::SampledBasis;
use crate::geometry::{GeometryDescriptor, GeometryKind};
use crate::linalg::{self, sym_generalized_eigen, GeneralizedEigen, LinalgError};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("friction coefficient must be nonnegative ({0})")]
    NegativeFriction(String),
    #[error("operation requires a ball centered at the origin")]
    UnsupportedGeometry,
    #[error("advection tensor size {0} exceeds the dense-storage limit {1}")]
    AdvectionTooLarge(usize, usize),
    #[error("eigensolver failure: {0}")]
    EigenFailure(#[from] LinalgError),
    #[error("eigen residual {0:.3e} exceeds 1e-8 of the form norm")]
    EigenResidual(f64),
    #[error("kernel deflation failure: supplied vectors are not strain-free (residual {0:.3e})")]
    KernelDeflation(f64),
}

/// Boundary friction coefficient: constant or a function of colatitude.
#[derive(Debug, Clone, PartialEq)]
pub enum FrictionSpec {
    Constant(f64),
    /// alpha(theta) = base + amplitude * cos^2(theta).
    CosSquared {
        base: f64,
        amplitude: f64,
    },
}

impl FrictionSpec {
    pub fn validate(&self) -> Result<(), OperatorError> {
        match self {
            FrictionSpec::Constant(c) => {
                if *c < 0.0 {
                    return Err(OperatorError::NegativeFriction(format!("constant {c}")));
                }
            }
            FrictionSpec::CosSquared { base, amplitude } => {
                let min = self.min_value();
                if min < 0.0 {
                    return Err(OperatorError::NegativeFriction(format!(
                        "base {base}, amplitude {amplitude} gives min {min}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Value at a boundary point of the origin-centered ball; colatitude is
    /// measured from the +z axis.
    pub fn eval(&self, point: [f64; 3]) -> f64 {
        match self {
            FrictionSpec::Constant(c) => *c,
            FrictionSpec::CosSquared { base, amplitude } => {
                let r = (point[0] * point[0] + point[1] * point[1] + point[2] * point[2]).sqrt();
                let cos_t = if r > 0.0 { point[2] / r } else { 1.0 };
                base + amplitude * cos_t * cos_t
            }
        }
    }

    /// Minimum over the boundary (attained at the equator or a pole).
    pub fn min_value(&self) -> f64 {
        match self {
            FrictionSpec::Constant(c) => *c,
            FrictionSpec::CosSquared { base, amplitude } => base.min(base + amplitude),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            FrictionSpec::Constant(c) => *c,
            FrictionSpec::CosSquared { base, amplitude } => base.max(base + amplitude),
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Gram matrix A A^T of a stacked sample matrix with sqrt-weights folded in.
fn gram(stack: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = stack * stack.transpose();
    symmetrize(&mut g);
    g
}

/// Stacked (N x 3Q) matrix of field values with per-node weights folded in.
fn value_stack(s: &SampledBasis, boundary: bool, weight_fn: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let n = s.len();
    let q = if boundary {
        s.grid.boundary_nodes.len()
    } else {
        s.grid.volume_nodes.len()
    };
    let mut m = DMatrix::zeros(n, 3 * q);
    for (i, sample) in s.samples.iter().enumerate() {
        let vals = if boundary {
            &sample.boundary_values
        } else {
            &sample.values
        };
        for (qi, v) in vals.iter().enumerate() {
            let w = weight_fn(qi);
            for a in 0..3 {
                m[(i, 3 * qi + a)] = v[a] * w;
            }
        }
    }
    m
}

/// Stacked (N x 9Q) matrix of Jacobians or symmetric gradients.
fn matrix_stack(s: &SampledBasis, symmetric: bool) -> DMatrix<f64> {
    let n = s.len();
    let q = s.grid.volume_nodes.len();
    let mut m = DMatrix::zeros(n, 9 * q);
    for (i, sample) in s.samples.iter().enumerate() {
        let mats = if symmetric {
            &sample.sym_grads
        } else {
            &sample.jacobians
        };
        for (qi, mat) in mats.iter().enumerate() {
            let w = s.grid.volume_weights[qi].sqrt();
            for a in 0..3 {
                for b in 0..3 {
                    m[(i, 9 * qi + 3 * a + b)] = mat[a][b] * w;
                }
            }
        }
    }
    m
}

/// Mass matrix M[i][j] = integral of v_i . v_j over the ball.
pub fn assemble_mass(s: &SampledBasis) -> DMatrix<f64> {
    let w = s.grid.volume_weights.clone();
    gram(&value_stack(s, false, |q| w[q].sqrt()))
}

/// Volume strain product S[i][j] = integral of Sv_i : Sv_j (no factor 2).
pub fn assemble_strain_energy(s: &SampledBasis) -> DMatrix<f64> {
    gram(&matrix_stack(s, true))
}

/// Volume gradient product D[i][j] = integral of Dv_i : Dv_j.
pub fn assemble_gradient_energy(s: &SampledBasis) -> DMatrix<f64> {
    gram(&matrix_stack(s, false))
}

/// Boundary mass: integral over the sphere of v_i . v_j.
pub fn assemble_boundary_mass(s: &SampledBasis) -> DMatrix<f64> {
    let w = s.grid.boundary_weights.clone();
    gram(&value_stack(s, true, |q| w[q].sqrt()))
}

/// Boundary friction form: integral over the sphere of alpha v_i . v_j.
pub fn assemble_boundary_alpha(
    s: &SampledBasis,
    alpha: &FrictionSpec,
) -> Result<DMatrix<f64>, OperatorError> {
    alpha.validate()?;
    let nodes = s.grid.boundary_nodes.clone();
    let weights = s.grid.boundary_weights.clone();
    let stack = value_stack(s, true, |q| (alpha.eval(nodes[q]) * weights[q]).sqrt());
    Ok(gram(&stack))
}

/// Symmetric-gradient form of the Stokes operator:
/// 2 integral Sv_i : Sv_j + boundary integral alpha v_i . v_j.
pub fn assemble_form_su(
    s: &SampledBasis,
    alpha: &FrictionSpec,
) -> Result<DMatrix<f64>, OperatorError> {
    let strain = assemble_strain_energy(s);
    let bnd = assemble_boundary_alpha(s, alpha)?;
    Ok(strain * 2.0 + bnd)
}

/// Full-gradient form with the shape-operator boundary term, valid on the
/// ball where dn = Id/R on the tangent space:
/// integral Dv_i : Dv_j + boundary integral v_i . [alpha v_j - v_j / R].
pub fn assemble_form_du(
    s: &SampledBasis,
    alpha: &FrictionSpec,
    geom: &GeometryDescriptor,
) -> Result<DMatrix<f64>, OperatorError> {
    let radius = match geom.kind {
        GeometryKind::Ball { radius } if geom.center == [0.0; 3] => radius,
        _ => return Err(OperatorError::UnsupportedGeometry),
    };
    let grad = assemble_gradient_energy(s);
    let bnd_alpha = assemble_boundary_alpha(s, alpha)?;
    let bnd_mass = assemble_boundary_mass(s);
    Ok(grad + bnd_alpha - bnd_mass / radius)
}

/// Dense advection tensor T[i][j][k] = integral (v_i . grad) v_j . v_k.
#[derive(Debug, Clone)]
pub struct AdvectionTensor {
    pub n: usize,
    data: Vec<f64>,
}

impl AdvectionTensor {
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// max over (i,j,k) of |T[i][j][k] + T[i][k][j]| / (1 + max |T|).
    pub fn antisymmetry_violation(&self) -> f64 {
        let n = self.n;
        let scale = 1.0 + self.max_abs();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..=j {
                    let v = (self.get(i, j, k) + self.get(i, k, j)).abs();
                    worst = worst.max(v);
                }
            }
        }
        worst / scale
    }

    /// Flat (N^2 x N) view with row (i*n + j) and column k.
    fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n * self.n, self.n, &self.data)
    }

    /// Rotate into coordinates u = W g: returns the matrix
    /// TM[a, b*n + c] = sum_{ijk} W[i,a] W[j,b] W[k,c] T[i][j][k].
    pub fn rotate(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let t1 = self.as_matrix() * w; // contract k
        let slices: Vec<DMatrix<f64>> = (0..n)
            .into_par_iter()
            .map(|i| w.tr_mul(&t1.rows(i * n, n).into_owned())) // contract j
            .collect();
        let mut m2 = DMatrix::zeros(n, n * n);
        for (i, t2) in slices.iter().enumerate() {
            for b in 0..n {
                for c in 0..n {
                    m2[(i, b * n + c)] = t2[(b, c)];
                }
            }
        }
        w.tr_mul(&m2) // contract i
    }
}

pub const ADVECTION_SIZE_LIMIT: usize = 512;

pub fn assemble_advection(s: &SampledBasis) -> Result<AdvectionTensor, OperatorError> {
    let n = s.len();
    if n > ADVECTION_SIZE_LIMIT {
        return Err(OperatorError::AdvectionTooLarge(n, ADVECTION_SIZE_LIMIT));
    }
    let q = s.grid.volume_nodes.len();

    // vals[(3q + b), i] = v_i[b](x_q); the weighted twin carries w_q.
    let mut vals = DMatrix::<f64>::zeros(3 * q, n);
    let mut vals_w = DMatrix::<f64>::zeros(3 * q, n);
    for (i, sample) in s.samples.iter().enumerate() {
        for (qi, v) in sample.values.iter().enumerate() {
            let w = s.grid.volume_weights[qi];
            for b in 0..3 {
                vals[(3 * qi + b, i)] = v[b];
                vals_w[(3 * qi + b, i)] = v[b] * w;
            }
        }
    }

    // For fixed j: G[(3q + a), i] = sum_b Dv_j[a][b](x_q) v_i[b](x_q),
    // then T[i][j][k] = sum_{q,a} G[(3q+a), i] * w_q v_k[a](x_q).
    let slices: Vec<DMatrix<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let jac = &s.samples[j].jacobians;
            let mut g = DMatrix::<f64>::zeros(3 * q, n);
            for qi in 0..q {
                let jm = &jac[qi];
                for i in 0..n {
                    let v0 = vals[(3 * qi, i)];
                    let v1 = vals[(3 * qi + 1, i)];
                    let v2 = vals[(3 * qi + 2, i)];
                    g[(3 * qi, i)] = jm[0][0] * v0 + jm[0][1] * v1 + jm[0][2] * v2;
                    g[(3 * qi + 1, i)] = jm[1][0] * v0 + jm[1][1] * v1 + jm[1][2] * v2;
                    g[(3 * qi + 2, i)] = jm[2][0] * v0 + jm[2][1] * v1 + jm[2][2] * v2;
                }
            }
            g.tr_mul(&vals_w) // (N x N): rows i, cols k
        })
        .collect();

    let mut data = vec![0.0; n * n * n];
    for (j, t) in slices.iter().enumerate() {
        for i in 0..n {
            for k in 0..n {
                data[(i * n + j) * n + k] = t[(i, k)];
            }
        }
    }
    Ok(AdvectionTensor { n, data })
}

/// Smallest c >= 0 such that B + c M is positive semidefinite with margin
/// 1e-9 on the generalized spectrum, located by bisection to 1e-6.
pub fn coercivity_shift(b: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64, OperatorError> {
    let margin = 1e-9;
    let min_gen = |c: f64| -> Result<f64, OperatorError> {
        let shifted = b + m * c;
        let chol = m.clone().cholesky().ok_or(OperatorError::EigenFailure(
            LinalgError::NotPositiveDefinite,
        ))?;
        let l = chol.l();
        let t = l
            .solve_lower_triangular(&shifted)
            .ok_or(OperatorError::EigenFailure(
                LinalgError::NotPositiveDefinite,
            ))?;
        let a = l
            .solve_lower_triangular(&t.transpose())
            .ok_or(OperatorError::EigenFailure(
                LinalgError::NotPositiveDefinite,
            ))?;
        let a = (&a + a.transpose()) * 0.5;
        Ok(linalg::sym_min_eigenvalue(&a))
    };

    let base = min_gen(0.0)?;
    if base >= -margin {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = -base + 1.0;
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if min_gen(mid)? >= -margin {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Generalized eigenpairs of B w = lambda M w: ascending eigenvalues,
/// M-orthonormal eigenvectors, residual bounded by 1e-8 of the form norm.
pub fn solve_stokes_eigenproblem(
    b: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<GeneralizedEigen, OperatorError> {
    let eig = sym_generalized_eigen(b, m)?;
    if eig.max_residual > 1e-8 {
        return Err(OperatorError::EigenResidual(eig.max_residual));
    }
    Ok(eig)
}

/// Poincare-type constants of the truncated space.
#[derive(Debug, Clone)]
pub struct PoincareConstants {
    /// Smallest Rayleigh quotient of integral |Su|^2 / integral |u|^2 over
    /// the M-orthogonal complement of the rigid-rotation kernel. Note the
    /// bookkeeping: the quotient uses the plain strain product (half of the
    /// alpha = 0 Stokes form), so the energy decay rate carries an explicit
    /// factor 4 nu mu1.
    pub mu1: f64,
    /// C = 1 / sqrt(mu1) in ||u|| <= C ||Su||.
    pub poincare_c: f64,
    /// Smallest Rayleigh quotient of the full-gradient product over the
    /// whole truncated space (classical Poincare constant, discrete sharp).
    pub classical_mu: f64,
    pub classical_c: f64,
    /// Discrete sharp Korn ratio: sup ||Du|| / ||Su|| over the deflated
    /// complement.
    pub korn_sup: f64,
}

/// mu1 and companions by explicit deflation of a known kernel basis.
pub fn symmetric_poincare_constant(
    strain_energy: &DMatrix<f64>,
    gradient_energy: &DMatrix<f64>,
    mass: &DMatrix<f64>,
    kernel: &[DVector<f64>],
) -> Result<PoincareConstants, OperatorError> {
    let n = mass.nrows();
    // The supplied kernel vectors must actually annihilate the strain form.
    let s_norm = strain_energy.norm();
    for k in kernel {
        let res = (strain_energy * k).norm() / (s_norm * k.norm()).max(1e-300);
        if res > 1e-9 {
            return Err(OperatorError::KernelDeflation(res));
        }
    }

    let chol = mass.clone().cholesky().ok_or(OperatorError::EigenFailure(
        LinalgError::NotPositiveDefinite,
    ))?;
    let l = chol.l();
    let to_std = |form: &DMatrix<f64>| -> Result<DMatrix<f64>, OperatorError> {
        let t = l
            .solve_lower_triangular(form)
            .ok_or(OperatorError::EigenFailure(
                LinalgError::NotPositiveDefinite,
            ))?;
        let a = l
            .solve_lower_triangular(&t.transpose())
            .ok_or(OperatorError::EigenFailure(
                LinalgError::NotPositiveDefinite,
            ))?;
        Ok((&a + a.transpose()) * 0.5)
    };
    let s_std = to_std(strain_energy)?;
    let d_std = to_std(gradient_energy)?;

    // Transformed kernel directions y = L^T k, orthonormalized; the
    // complement basis comes from the eigenvectors of I - Y Y^T.
    let lt = l.transpose();
    let ys: Vec<DVector<f64>> = kernel.iter().map(|k| &lt * k).collect();
    let eye = DMatrix::identity(n, n);
    let ys = linalg::m_orthonormalize(&ys, &eye);
    let mut proj = DMatrix::<f64>::identity(n, n);
    for y in &ys {
        proj -= y * y.transpose();
    }
    let eig = proj.symmetric_eigen();
    let mut comp_cols = Vec::new();
    for j in 0..n {
        if eig.eigenvalues[j] > 0.5 {
            comp_cols.push(eig.eigenvectors.column(j).into_owned());
        }
    }
    let u = DMatrix::from_columns(&comp_cols);

    let s_c = {
        let mut m = u.tr_mul(&(&s_std * &u));
        symmetrize(&mut m);
        m
    };
    let d_c = {
        let mut m = u.tr_mul(&(&d_std * &u));
        symmetrize(&mut m);
        m
    };

    let mu1 = linalg::sym_min_eigenvalue(&s_c);
    let classical_mu = linalg::sym_min_eigenvalue(&d_std);
    let korn = sym_generalized_eigen(&d_c, &s_c)?;
    let korn_sup = korn.eigenvalues.max().max(0.0).sqrt();

    Ok(PoincareConstants {
        mu1,
        poincare_c: 1.0 / mu1.sqrt(),
        classical_mu,
        classical_c: 1.0 / classical_mu.sqrt(),
        korn_sup,
    })
}

/// Residual of the ball identity ||Du||^2 = 2 ||Su||^2 + (1/R) * boundary
/// integral of |u|^2, maximized over random coefficient vectors.
pub fn korn_step1_check(
    gradient_energy: &DMatrix<f64>,
    strain_energy: &DMatrix<f64>,
    boundary_mass: &DMatrix<f64>,
    radius: f64,
    trials: usize,
    seed: u64,
) -> f64 {
    let n = gradient_energy.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let u = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let dsq = u.dot(&(gradient_energy * &u));
        let ssq = u.dot(&(strain_energy * &u));
        let bnd = u.dot(&(boundary_mass * &u));
        let res = (dsq - 2.0 * ssq - bnd / radius).abs() / dsq;
        worst = worst.max(res);
    }
    worst
}

/// Everything the dynamics module needs, assembled on a ball at the origin.
pub struct OperatorSet {
    pub mass: DMatrix<f64>,
    pub strain_form: DMatrix<f64>,
    pub gradient_form: DMatrix<f64>,
    pub strain_energy: DMatrix<f64>,
    pub gradient_energy: DMatrix<f64>,
    pub boundary_mass: DMatrix<f64>,
    pub boundary_alpha: DMatrix<f64>,
    pub advection: Option<AdvectionTensor>,
    pub coercivity_shift: f64,
    pub eigen: GeneralizedEigen,
    pub mass_condition: f64,
    pub radius: f64,
    pub lambda_bound: f64,
    pub alpha: FrictionSpec,
}

impl OperatorSet {
    pub fn assemble(
        basis: &crate::basis::BasisSet,
        sampled: &SampledBasis,
        cubic: Option<&SampledBasis>,
        alpha: &FrictionSpec,
    ) -> Result<Self, OperatorError> {
        let advection = cubic.map(assemble_advection).transpose()?;
        Self::assemble_with_advection(basis, sampled, advection, alpha)
    }

    /// Assembly with a pre-built advection tensor; the tensor depends only
    /// on the basis, so friction variants can share it.
    pub fn assemble_with_advection(
        basis: &crate::basis::BasisSet,
        sampled: &SampledBasis,
        advection: Option<AdvectionTensor>,
        alpha: &FrictionSpec,
    ) -> Result<Self, OperatorError> {
        alpha.validate()?;
        let radius = basis.radius;
        let mass = assemble_mass(sampled);
        let strain_energy = assemble_strain_energy(sampled);
        let gradient_energy = assemble_gradient_energy(sampled);
        let boundary_mass = assemble_boundary_mass(sampled);
        let boundary_alpha = assemble_boundary_alpha(sampled, alpha)?;
        let strain_form = &strain_energy * 2.0 + &boundary_alpha;
        let gradient_form = &gradient_energy + &boundary_alpha - &boundary_mass / radius;
        let coercivity_shift = coercivity_shift(&strain_form, &mass)?;
        let eigen = solve_stokes_eigenproblem(&strain_form, &mass)?;
        let mass_condition = linalg::spd_condition_number(&mass);
        Ok(Self {
            mass,
            strain_form,
            gradient_form,
            strain_energy,
            gradient_energy,
            boundary_mass,
            boundary_alpha,
            advection,
            coercivity_shift,
            eigen,
            mass_condition,
            radius,
            lambda_bound: 1.0 / radius,
            alpha: alpha.clone(),
        })
    }

    /// Number of eigenvalues below the null threshold 1e-9.
    pub fn null_space_dimension(&self) -> usize {
        self.eigen
            .eigenvalues
            .iter()
            .filter(|&&l| l.abs() <= 1e-9)
            .count()
    }
}
