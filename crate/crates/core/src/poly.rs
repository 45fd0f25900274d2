//! Exact trivariate polynomial arithmetic.
//!
//! All basis vector fields on the ball are polynomial in Cartesian
//! coordinates, so values, Jacobians and integrals never require numerical
//! differentiation. Monomial integrals over the ball and the sphere have
//! closed forms, which keeps field normalization exact to rounding.

/// A polynomial in (x, y, z) stored as a sorted, merged monomial list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly3 {
    terms: Vec<Term>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Term {
    ex: [u8; 3],
    c: f64,
}

impl Poly3 {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        let mut p = Self::zero();
        if c != 0.0 {
            p.terms.push(Term { ex: [0, 0, 0], c });
        }
        p
    }

    /// The coordinate polynomial x, y or z for axis 0, 1 or 2.
    pub fn var(axis: usize) -> Self {
        let mut ex = [0u8; 3];
        ex[axis] = 1;
        Self {
            terms: vec![Term { ex, c: 1.0 }],
        }
    }

    /// x^2 + y^2 + z^2.
    pub fn r_squared() -> Self {
        Self {
            terms: vec![
                Term {
                    ex: [2, 0, 0],
                    c: 1.0,
                },
                Term {
                    ex: [0, 2, 0],
                    c: 1.0,
                },
                Term {
                    ex: [0, 0, 2],
                    c: 1.0,
                },
            ],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn degree(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.ex[0] as usize + t.ex[1] as usize + t.ex[2] as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.iter().map(|t| t.c.abs()).fold(0.0, f64::max)
    }

    fn normalize(mut terms: Vec<Term>) -> Self {
        terms.sort_by_key(|t| t.ex);
        let mut merged: Vec<Term> = Vec::with_capacity(terms.len());
        for t in terms {
            match merged.last_mut() {
                Some(last) if last.ex == t.ex => last.c += t.c,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.c != 0.0);
        Self { terms: merged }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Self::normalize(terms)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::zero();
        }
        Self {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    ex: t.ex,
                    c: t.c * s,
                })
                .collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(Term {
                    ex: [a.ex[0] + b.ex[0], a.ex[1] + b.ex[1], a.ex[2] + b.ex[2]],
                    c: a.c * b.c,
                });
            }
        }
        Self::normalize(terms)
    }

    /// Partial derivative along the given axis.
    pub fn diff(&self, axis: usize) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let e = t.ex[axis];
            if e > 0 {
                let mut ex = t.ex;
                ex[axis] = e - 1;
                terms.push(Term {
                    ex,
                    c: t.c * e as f64,
                });
            }
        }
        Self::normalize(terms)
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        let mut pows = PowerTable::new(self.degree());
        pows.set_point(p);
        self.eval_with(&pows)
    }

    /// Evaluation against a precomputed power table (hot path).
    pub fn eval_with(&self, pows: &PowerTable) -> f64 {
        let mut acc = 0.0;
        for t in &self.terms {
            acc += t.c
                * pows.x[t.ex[0] as usize]
                * pows.y[t.ex[1] as usize]
                * pows.z[t.ex[2] as usize];
        }
        acc
    }

    /// Exact integral over the ball of radius `r` centered at the origin.
    pub fn ball_integral(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let s = t.ex[0] as u32 + t.ex[1] as u32 + t.ex[2] as u32;
                let ang = sphere_monomial_integral(t.ex);
                if ang == 0.0 {
                    0.0
                } else {
                    t.c * ang * r.powi(s as i32 + 3) / (s as f64 + 3.0)
                }
            })
            .sum()
    }

    /// Exact integral over the sphere of radius `r` centered at the origin.
    pub fn sphere_integral(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let s = t.ex[0] as u32 + t.ex[1] as u32 + t.ex[2] as u32;
                let ang = sphere_monomial_integral(t.ex);
                if ang == 0.0 {
                    0.0
                } else {
                    t.c * ang * r.powi(s as i32 + 2)
                }
            })
            .sum()
    }
}

/// Integral of the unit-sphere restriction of the monomial x^a y^b z^c:
/// zero when any exponent is odd, else 4π (a-1)!!(b-1)!!(c-1)!!/(a+b+c+1)!!.
fn sphere_monomial_integral(ex: [u8; 3]) -> f64 {
    if ex.iter().any(|&e| e % 2 == 1) {
        return 0.0;
    }
    let s = ex[0] as u32 + ex[1] as u32 + ex[2] as u32;
    let num = double_factorial(ex[0] as i64 - 1)
        * double_factorial(ex[1] as i64 - 1)
        * double_factorial(ex[2] as i64 - 1);
    4.0 * std::f64::consts::PI * num / double_factorial(s as i64 + 1)
}

fn double_factorial(n: i64) -> f64 {
    let mut acc = 1.0;
    let mut k = n;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// Per-point powers of x, y, z up to a fixed degree, reused across polynomials.
pub struct PowerTable {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl PowerTable {
    pub fn new(max_degree: usize) -> Self {
        Self {
            x: vec![1.0; max_degree + 1],
            y: vec![1.0; max_degree + 1],
            z: vec![1.0; max_degree + 1],
        }
    }

    pub fn set_point(&mut self, p: [f64; 3]) {
        for k in 1..self.x.len() {
            self.x[k] = self.x[k - 1] * p[0];
            self.y[k] = self.y[k - 1] * p[1];
            self.z[k] = self.z[k - 1] * p[2];
        }
    }
}

/// A polynomial vector field.
pub type VecPoly = [Poly3; 3];

pub fn gradient(f: &Poly3) -> VecPoly {
    [f.diff(0), f.diff(1), f.diff(2)]
}

pub fn cross(a: &VecPoly, b: &VecPoly) -> VecPoly {
    [
        a[1].mul(&b[2]).sub(&a[2].mul(&b[1])),
        a[2].mul(&b[0]).sub(&a[0].mul(&b[2])),
        a[0].mul(&b[1]).sub(&a[1].mul(&b[0])),
    ]
}

pub fn curl(v: &VecPoly) -> VecPoly {
    [
        v[2].diff(1).sub(&v[1].diff(2)),
        v[0].diff(2).sub(&v[2].diff(0)),
        v[1].diff(0).sub(&v[0].diff(1)),
    ]
}

pub fn divergence(v: &VecPoly) -> Poly3 {
    v[0].diff(0).add(&v[1].diff(1)).add(&v[2].diff(2))
}

/// Jacobian matrix of polynomials, entry [a][b] = d v_a / d x_b.
pub fn jacobian(v: &VecPoly) -> [[Poly3; 3]; 3] {
    [
        [v[0].diff(0), v[0].diff(1), v[0].diff(2)],
        [v[1].diff(0), v[1].diff(1), v[1].diff(2)],
        [v[2].diff(0), v[2].diff(1), v[2].diff(2)],
    ]
}

/// Real solid harmonics r^l Y_lm as polynomials, unnormalized.
///
/// Returns, for each l in 0..=l_max, the list over m = -l..=l where negative
/// m holds the sin-type harmonic of order |m|, m = 0 the zonal one and
/// positive m the cos-type harmonic. Built from the standard recurrences
/// on sectoral and zonal families; every entry is a harmonic polynomial of
/// degree l.
pub fn real_solid_harmonics(l_max: usize) -> Vec<Vec<Poly3>> {
    let x = Poly3::var(0);
    let y = Poly3::var(1);
    let z = Poly3::var(2);
    let r2 = Poly3::r_squared();

    // Sectorals: c[m] + i s[m] = (x + i y)^m.
    let mut c = vec![Poly3::constant(1.0)];
    let mut s = vec![Poly3::zero()];
    for m in 1..=l_max {
        c.push(c[m - 1].mul(&x).sub(&s[m - 1].mul(&y)));
        s.push(s[m - 1].mul(&x).add(&c[m - 1].mul(&y)));
    }

    // family[m][k] = R_{m+k, m} built over the chosen sectoral seed.
    let build_family = |seed: &Poly3, m: usize| -> Vec<Poly3> {
        let mut fam = vec![seed.clone()];
        if m + 1 <= l_max {
            fam.push(z.scale(2.0 * m as f64 + 1.0).mul(seed));
        }
        for l in (m + 2)..=l_max {
            let k = l - m;
            let a = z.scale(2.0 * l as f64 - 1.0).mul(&fam[k - 1]);
            let b = r2.scale(l as f64 - 1.0 + m as f64).mul(&fam[k - 2]);
            fam.push(a.sub(&b).scale(1.0 / k as f64));
        }
        fam
    };

    let cos_families: Vec<Vec<Poly3>> = (0..=l_max).map(|m| build_family(&c[m], m)).collect();
    let sin_families: Vec<Vec<Poly3>> = (1..=l_max).map(|m| build_family(&s[m], m)).collect();

    (0..=l_max)
        .map(|l| {
            let mut row = Vec::with_capacity(2 * l + 1);
            for m in (1..=l).rev() {
                row.push(sin_families[m - 1][l - m].clone());
            }
            for m in 0..=l {
                row.push(cos_families[m][l - m].clone());
            }
            row
        })
        .collect()
}

/// Index of order m in the row returned by [`real_solid_harmonics`].
pub fn harmonic_order_offset(l: usize, m: i32) -> usize {
    (m + l as i32) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laplacian(p: &Poly3) -> Poly3 {
        p.diff(0)
            .diff(0)
            .add(&p.diff(1).diff(1))
            .add(&p.diff(2).diff(2))
    }

    #[test]
    fn arithmetic_and_eval() {
        let x = Poly3::var(0);
        let y = Poly3::var(1);
        let p = x.mul(&x).add(&y.scale(3.0)); // x^2 + 3y
        assert_eq!(p.eval([2.0, 1.0, 7.0]), 7.0);
        assert_eq!(p.diff(0).eval([2.0, 0.0, 0.0]), 4.0);
        assert_eq!(p.degree(), 2);
        assert!(p.sub(&p).is_zero());
    }

    #[test]
    fn ball_and_sphere_monomial_integrals() {
        let one = Poly3::constant(1.0);
        let r = 2.0_f64;
        assert_relative_eq!(
            one.ball_integral(r),
            4.0 / 3.0 * std::f64::consts::PI * r.powi(3),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            one.sphere_integral(r),
            4.0 * std::f64::consts::PI * r.powi(2),
            max_relative = 1e-14
        );
        // integral of x^2 over unit ball = 4*pi/15
        let x2 = Poly3::var(0).mul(&Poly3::var(0));
        assert_relative_eq!(
            x2.ball_integral(1.0),
            4.0 * std::f64::consts::PI / 15.0,
            max_relative = 1e-14
        );
        // odd monomials vanish
        assert_eq!(Poly3::var(2).ball_integral(1.0), 0.0);
    }

    #[test]
    fn solid_harmonics_are_harmonic_and_match_low_orders() {
        let h = real_solid_harmonics(6);
        assert_eq!(h[0].len(), 1);
        assert_eq!(h[3].len(), 7);
        // l = 1 row is (y, z, x) in m = (-1, 0, 1) order.
        assert_eq!(h[1][harmonic_order_offset(1, -1)], Poly3::var(1));
        assert_eq!(h[1][harmonic_order_offset(1, 0)], Poly3::var(2));
        assert_eq!(h[1][harmonic_order_offset(1, 1)], Poly3::var(0));
        for row in &h {
            for p in row {
                let lap = laplacian(p);
                assert!(
                    lap.max_abs_coeff() <= 1e-10 * p.max_abs_coeff().max(1.0),
                    "harmonic residual {}",
                    lap.max_abs_coeff()
                );
            }
        }
    }

    #[test]
    fn vector_calculus_identities() {
        // div(grad f ∧ x) = 0 for arbitrary polynomial f.
        let f = Poly3::var(0)
            .mul(&Poly3::var(1))
            .add(&Poly3::r_squared().mul(&Poly3::var(2)));
        let x_field = [Poly3::var(0), Poly3::var(1), Poly3::var(2)];
        let v = cross(&gradient(&f), &x_field);
        assert!(divergence(&v).is_zero());
        // div curl w = 0
        let w = [f.clone(), Poly3::var(2).mul(&f), Poly3::var(0)];
        assert!(divergence(&curl(&w)).max_abs_coeff() <= 1e-12);
    }

    mod properties {
        use super::super::*;
        use proptest::prelude::*;

        fn arb_poly() -> impl Strategy<Value = Poly3> {
            prop::collection::vec(((0u8..5, 0u8..5, 0u8..5), -2.0..2.0f64), 1..8).prop_map(
                |terms| {
                    let mut p = Poly3::zero();
                    for ((a, b, c), coeff) in terms {
                        let mono = mono_pow(0, a)
                            .mul(&mono_pow(1, b))
                            .mul(&mono_pow(2, c))
                            .scale(coeff);
                        p = p.add(&mono);
                    }
                    p
                },
            )
        }

        fn mono_pow(axis: usize, e: u8) -> Poly3 {
            let mut p = Poly3::constant(1.0);
            for _ in 0..e {
                p = p.mul(&Poly3::var(axis));
            }
            p
        }

        fn arb_point() -> impl Strategy<Value = [f64; 3]> {
            [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
        }

        proptest! {
            #[test]
            fn product_rule_holds(p in arb_poly(), q in arb_poly(), x in arb_point()) {
                for axis in 0..3 {
                    let lhs = p.mul(&q).diff(axis).eval(x);
                    let rhs = p.diff(axis).eval(x) * q.eval(x) + p.eval(x) * q.diff(axis).eval(x);
                    let scale = 1.0 + lhs.abs().max(rhs.abs());
                    prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
                }
            }

            #[test]
            fn evaluation_is_ring_homomorphism(p in arb_poly(), q in arb_poly(), x in arb_point()) {
                let sum = p.add(&q).eval(x);
                prop_assert!((sum - (p.eval(x) + q.eval(x))).abs() <= 1e-10 * (1.0 + sum.abs()));
                let prod = p.mul(&q).eval(x);
                let direct = p.eval(x) * q.eval(x);
                prop_assert!((prod - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
            }

            #[test]
            fn ball_integral_is_linear(p in arb_poly(), q in arb_poly(), s in -3.0..3.0f64) {
                let lhs = p.scale(s).add(&q).ball_integral(1.3);
                let rhs = s * p.ball_integral(1.3) + q.ball_integral(1.3);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
            }
        }
    }
}
