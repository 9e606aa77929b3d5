//! Forward-mode differentiation scalars.
//!
//! [`Hyperdual`] carries a value, two independent first-order seeds and the
//! mixed second-order term, which is enough for gradients and exact
//! Hessian-vector products without a tape. [`Dual`] is a plain first-order
//! dual number generic over any [`Scalar`]; nesting `Dual<Hyperdual>` gives a
//! directional derivative whose components are themselves differentiable,
//! which is how velocity pairings `<d chi(x), v>` are evaluated.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric type the expression evaluator can run over.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    /// The real (primal) part.
    fn value(&self) -> f64;
    /// True when every derivative component is zero.
    fn is_constant(&self) -> bool;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    /// `self ^ e`. Callers are responsible for domain checks on the values.
    fn pow(self, e: Self) -> Self;
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn pow(self, e: Self) -> Self {
        self.powf(e)
    }
}

/// sign(x) with sign(0) = 0.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Coefficients of the power rule `a^n` for constant `n`: (f, f', f'').
/// Zero coefficients are returned exactly so that `0 * inf` never appears.
fn power_rule(a: f64, n: f64) -> (f64, f64, f64) {
    let f = a.powf(n);
    let d1 = if n == 0.0 { 0.0 } else { n * a.powf(n - 1.0) };
    let d2 = if n == 0.0 || n == 1.0 {
        0.0
    } else {
        n * (n - 1.0) * a.powf(n - 2.0)
    };
    (f, d1, d2)
}

// ---------------------------------------------------------------------------
// Hyperdual
// ---------------------------------------------------------------------------

/// Truncated two-seed Taylor number `val + d1 e1 + d2 e2 + d12 e1 e2` with
/// `e1^2 = e2^2 = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Hyperdual {
    pub val: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

impl Hyperdual {
    pub const fn new(val: f64, d1: f64, d2: f64, d12: f64) -> Self {
        Self { val, d1, d2, d12 }
    }

    pub const fn lift_const(c: f64) -> Self {
        Self::new(c, 0.0, 0.0, 0.0)
    }

    pub const fn lift_seed(c: f64, s1: f64, s2: f64) -> Self {
        Self::new(c, s1, s2, 0.0)
    }

    /// Applies a scalar function given its value and first two derivatives at `val`.
    #[inline]
    fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        Self {
            val: f,
            d1: df * self.d1,
            d2: df * self.d2,
            d12: df * self.d12 + ddf * self.d1 * self.d2,
        }
    }
}

impl Add for Hyperdual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.val + o.val, self.d1 + o.d1, self.d2 + o.d2, self.d12 + o.d12)
    }
}

impl Sub for Hyperdual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.val - o.val, self.d1 - o.d1, self.d2 - o.d2, self.d12 - o.d12)
    }
}

impl Mul for Hyperdual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.val * o.val,
            self.val * o.d1 + self.d1 * o.val,
            self.val * o.d2 + self.d2 * o.val,
            self.val * o.d12 + self.d1 * o.d2 + self.d2 * o.d1 + self.d12 * o.val,
        )
    }
}

impl Div for Hyperdual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.val;
        let recip = o.chain(inv, -inv * inv, 2.0 * inv * inv * inv);
        let mut q = self * recip;
        q.val = self.val / o.val;
        q
    }
}

impl Neg for Hyperdual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.val, -self.d1, -self.d2, -self.d12)
    }
}

impl Scalar for Hyperdual {
    fn constant(c: f64) -> Self {
        Self::lift_const(c)
    }
    fn value(&self) -> f64 {
        self.val
    }
    fn is_constant(&self) -> bool {
        self.d1 == 0.0 && self.d2 == 0.0 && self.d12 == 0.0
    }
    fn sin(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(c, -s, -c)
    }
    fn tan(self) -> Self {
        let t = self.val.tan();
        let sec2 = 1.0 + t * t;
        self.chain(t, sec2, 2.0 * t * sec2)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let inv = 1.0 / self.val;
        self.chain(self.val.ln(), inv, -inv * inv)
    }
    fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.val))
    }
    fn abs(self) -> Self {
        self.chain(self.val.abs(), sign(self.val), 0.0)
    }
    fn pow(self, e: Self) -> Self {
        if e.is_constant() {
            let (f, df, ddf) = power_rule(self.val, e.val);
            return self.chain(f, df, ddf);
        }
        // General two-argument chain rule for g(a, b) = a^b, a > 0.
        let (a, b) = (self.val, e.val);
        let f = a.powf(b);
        let la = a.ln();
        let ga = b * a.powf(b - 1.0);
        let gb = f * la;
        let gaa = b * (b - 1.0) * a.powf(b - 2.0);
        let gab = a.powf(b - 1.0) * (1.0 + b * la);
        let gbb = f * la * la;
        Self {
            val: f,
            d1: ga * self.d1 + gb * e.d1,
            d2: ga * self.d2 + gb * e.d2,
            d12: ga * self.d12
                + gb * e.d12
                + gaa * self.d1 * self.d2
                + gab * (self.d1 * e.d2 + self.d2 * e.d1)
                + gbb * e.d1 * e.d2,
        }
    }
}

// ---------------------------------------------------------------------------
// Dual<S>
// ---------------------------------------------------------------------------

/// First-order dual number `re + eps * e` over an arbitrary scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Self { re, eps }
    }

    #[inline]
    fn chain(self, f: S, df: S) -> Self {
        Self::new(f, df * self.eps)
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn constant(c: f64) -> Self {
        Self::new(S::constant(c), S::constant(0.0))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn is_constant(&self) -> bool {
        self.re.is_constant() && self.eps.is_constant() && self.eps.value() == 0.0
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, S::constant(1.0) + t * t)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), S::constant(1.0) / self.re)
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.chain(r, S::constant(0.5) / r)
    }
    fn abs(self) -> Self {
        self.chain(self.re.abs(), S::constant(sign(self.re.value())))
    }
    fn pow(self, e: Self) -> Self {
        if e.is_constant() {
            let n = e.re.value();
            let f = self.re.pow(e.re);
            if n == 0.0 {
                return Self::new(f, S::constant(0.0));
            }
            let df = e.re * self.re.pow(e.re - S::constant(1.0));
            return self.chain(f, df);
        }
        let f = self.re.pow(e.re);
        let la = self.re.ln();
        let eps = f * (e.eps * la + e.re * self.eps / self.re);
        Self::new(f, eps)
    }
}

// ---------------------------------------------------------------------------
// Derivative drivers
// ---------------------------------------------------------------------------

/// Gradient of `f` at `p`: component `i` is `f` evaluated with seed 1 on
/// coordinate `i`, read from `d1`.
pub fn gradient<F, E>(f: F, p: &[f64]) -> Result<Vec<f64>, E>
where
    F: Fn(&[Hyperdual]) -> Result<Hyperdual, E>,
{
    let mut args: Vec<Hyperdual> = p.iter().map(|&c| Hyperdual::lift_const(c)).collect();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        args[i].d1 = 1.0;
        out.push(f(&args)?.d1);
        args[i].d1 = 0.0;
    }
    Ok(out)
}

/// `H(f)(p) . w`, seeding direction 1 with `e_i` and direction 2 with `w`.
pub fn hessian_vector<F, E>(f: F, p: &[f64], w: &[f64]) -> Result<Vec<f64>, E>
where
    F: Fn(&[Hyperdual]) -> Result<Hyperdual, E>,
{
    let rows: Vec<usize> = (0..p.len()).collect();
    hessian_vector_rows(f, p, w, &rows).map(|rs| rs.into_iter().map(|r| r.1).collect())
}

/// Selected rows of the Hessian-vector product. Each entry is `(df/dp_i, (H w)_i)`;
/// the first derivative comes for free from the same evaluation.
pub fn hessian_vector_rows<F, E>(
    f: F,
    p: &[f64],
    w: &[f64],
    rows: &[usize],
) -> Result<Vec<(f64, f64)>, E>
where
    F: Fn(&[Hyperdual]) -> Result<Hyperdual, E>,
{
    assert_eq!(p.len(), w.len(), "point and direction dimensions differ");
    let mut args: Vec<Hyperdual> = p
        .iter()
        .zip(w)
        .map(|(&c, &wi)| Hyperdual::lift_seed(c, 0.0, wi))
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    for &i in rows {
        args[i].d1 = 1.0;
        let r = f(&args)?;
        out.push((r.d1, r.d12));
        args[i].d1 = 0.0;
    }
    Ok(out)
}

/// Full Hessian of `f` at `p` (symmetric, both triangles evaluated once each).
pub fn hessian<F, E>(f: F, p: &[f64]) -> Result<Vec<Vec<f64>>, E>
where
    F: Fn(&[Hyperdual]) -> Result<Hyperdual, E>,
{
    let n = p.len();
    let mut h = vec![vec![0.0; n]; n];
    let mut args: Vec<Hyperdual> = p.iter().map(|&c| Hyperdual::lift_const(c)).collect();
    for i in 0..n {
        for j in i..n {
            args[i].d1 = 1.0;
            args[j].d2 = 1.0;
            let r = f(&args)?;
            args[i].d1 = 0.0;
            args[j].d2 = 0.0;
            h[i][j] = r.d12;
            h[j][i] = r.d12;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    type R = Result<Hyperdual, ()>;

    #[test]
    fn lifting() {
        assert_eq!(Hyperdual::lift_const(5.0), Hyperdual::new(5.0, 0.0, 0.0, 0.0));
        assert_eq!(Hyperdual::lift_const(0.0), Hyperdual::new(0.0, 0.0, 0.0, 0.0));
        assert_eq!(Hyperdual::lift_const(-1.0), Hyperdual::new(-1.0, 0.0, 0.0, 0.0));
        assert_eq!(Hyperdual::lift_seed(3.0, 0.0, 0.0), Hyperdual::lift_const(3.0));
    }

    #[test]
    fn square_of_double_seed() {
        let x = Hyperdual::lift_seed(2.0, 1.0, 1.0);
        assert_eq!(x * x, Hyperdual::new(4.0, 4.0, 4.0, 2.0));
    }

    #[test]
    fn product_rule_for_mixed_term() {
        let a = Hyperdual::new(1.5, 0.3, -0.2, 0.7);
        let b = Hyperdual::new(-0.4, 1.1, 0.9, -0.6);
        let p = a * b;
        let expected = a.val * b.d12 + a.d1 * b.d2 + a.d2 * b.d1 + a.d12 * b.val;
        assert_eq!(p.d12, expected);
    }

    #[test]
    fn gradients_of_simple_functions() {
        let g = gradient(|x: &[Hyperdual]| -> R { Ok(x[0] * x[0]) }, &[3.0]).unwrap();
        assert_eq!(g, vec![6.0]);
        let g = gradient(|x: &[Hyperdual]| -> R { Ok(x[0] * x[1]) }, &[2.0, 5.0]).unwrap();
        assert_eq!(g, vec![5.0, 2.0]);
        let g = gradient(|x: &[Hyperdual]| -> R { Ok(x[0].sin()) }, &[0.7]).unwrap();
        assert_relative_eq!(g[0], 0.7f64.cos(), epsilon = 1e-15);
    }

    #[test]
    fn hessian_vector_products() {
        let half_norm = |x: &[Hyperdual]| -> R {
            Ok(x.iter().fold(Hyperdual::lift_const(0.0), |acc, &xi| acc + xi * xi)
                * Hyperdual::lift_const(0.5))
        };
        let hv = hessian_vector(half_norm, &[0.3, -1.2, 4.0], &[1.0, 2.5, -0.5]).unwrap();
        assert_eq!(hv, vec![1.0, 2.5, -0.5]);

        // Hessian of x1^2 x2 is [[2 x2, 2 x1], [2 x1, 0]]; at (1,1) times (1,0) gives (2,2).
        let f = |x: &[Hyperdual]| -> R { Ok(x[0] * x[0] * x[1]) };
        assert_eq!(hessian_vector(f, &[1.0, 1.0], &[1.0, 0.0]).unwrap(), vec![2.0, 2.0]);

        let lin = |x: &[Hyperdual]| -> R {
            Ok(Hyperdual::lift_const(3.0) * x[0] - Hyperdual::lift_const(2.0) * x[1])
        };
        assert_eq!(hessian_vector(lin, &[0.1, 0.2], &[5.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn abs_has_zero_slope_at_kink() {
        let g = gradient(|x: &[Hyperdual]| -> R { Ok(x[0].abs()) }, &[0.0]).unwrap();
        assert_eq!(g, vec![0.0]);
        let g = gradient(|x: &[Hyperdual]| -> R { Ok(x[0].abs()) }, &[-2.0]).unwrap();
        assert_eq!(g, vec![-1.0]);
    }

    #[test]
    fn power_with_integer_exponent_of_zero_base() {
        let x = Hyperdual::lift_seed(0.0, 1.0, 1.0);
        let y = x.pow(Hyperdual::lift_const(1.0));
        assert_eq!(y, Hyperdual::new(0.0, 1.0, 1.0, 0.0));
        let y = x.pow(Hyperdual::lift_const(2.0));
        assert_eq!(y, Hyperdual::new(0.0, 0.0, 0.0, 2.0));
    }

    #[test]
    fn variable_exponent_matches_exp_log() {
        // x^y against exp(y ln x), all second derivatives.
        let f = |z: &[Hyperdual]| -> R { Ok(z[0].pow(z[1])) };
        let g = |z: &[Hyperdual]| -> R { Ok((z[1] * z[0].ln()).exp()) };
        let p = [1.7, 0.6];
        let hf = hessian(f, &p).unwrap();
        let hg = hessian(g, &p).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(hf[i][j], hg[i][j], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn nested_dual_gives_directional_derivative() {
        // d/ds sin(x + s v) = cos(x) v, and its derivative in x is -sin(x) v.
        let x = Hyperdual::lift_seed(0.4, 1.0, 0.0);
        let v = Hyperdual::lift_seed(2.0, 0.0, 1.0);
        let d = Dual::new(x, v).sin().eps;
        assert_relative_eq!(d.val, 0.4f64.cos() * 2.0, epsilon = 1e-15);
        assert_relative_eq!(d.d1, -0.4f64.sin() * 2.0, epsilon = 1e-15);
        assert_relative_eq!(d.d2, 0.4f64.cos(), epsilon = 1e-15);
        assert_relative_eq!(d.d12, -0.4f64.sin(), epsilon = 1e-15);
    }

    fn hyperdual() -> impl Strategy<Value = Hyperdual> {
        (-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0)
            .prop_map(|(v, a, b, c)| Hyperdual::new(v, a, b, c))
    }

    proptest! {
        #[test]
        fn product_follows_truncated_taylor_rule(a in hyperdual(), b in hyperdual()) {
            let p = a * b;
            prop_assert_eq!(p.val, a.val * b.val);
            prop_assert!((p.d1 - (a.val * b.d1 + a.d1 * b.val)).abs() <= 1e-12);
            prop_assert!((p.d2 - (a.val * b.d2 + a.d2 * b.val)).abs() <= 1e-12);
            let mixed = a.val * b.d12 + a.d1 * b.d2 + a.d2 * b.d1 + a.d12 * b.val;
            prop_assert!((p.d12 - mixed).abs() <= 1e-12);
        }
    }
}
