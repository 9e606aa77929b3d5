//! The affine action along a curve, built two ways, and the pairing of its
//! differential with a variation field.

use crate::affine::{box_minus, AffineScalar, FiberPoint};
use crate::dynamics::{AffineCovector, GaugeClassLagrangian, SecondOrderPoint};
use crate::error::{Error, Result};
use crate::exprlang::{parse, Ast, Expr};
use crate::geometry::{panels_for, segmented_integral, simpson, CurveSpec};

pub use crate::dynamics::Trajectory;

/// Default finite-difference step for [`variation_derivative`].
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Quadrature of the chart representatives along `gamma`, with junction
/// offsets applied, as an element of `Z_{gamma(b)} (-) Z_{gamma(a)}`.
pub fn action_quadrature(lagrangian: &GaugeClassLagrangian, gamma: &CurveSpec, panels: usize) -> Result<AffineScalar> {
    if panels == 0 {
        return Err(Error::InvalidInput("panels must be at least 1".into()));
    }
    segmented_integral(lagrangian.atlas(), gamma, panels, |jet| {
        lagrangian.value(jet.chart, &jet.x, &jet.v)
    })
}

/// Integral curve of `s' = L(gamma, gamma')` on the pulled-back fiber,
/// started at fiber value `initial` over `gamma(a)`, by RK4.
pub fn action_lift(
    lagrangian: &GaugeClassLagrangian,
    gamma: &CurveSpec,
    steps: usize,
    initial: f64,
) -> Result<AffineScalar> {
    if steps == 0 {
        return Err(Error::InvalidInput("steps must be at least 1".into()));
    }
    let atlas = lagrangian.atlas();
    let segments = gamma.segments();
    let start = gamma.jet_in(0, gamma.start())?;
    let origin = FiberPoint::new(atlas, gamma.first_chart(), start.x, initial)?;
    let mut point = origin.clone();
    for (idx, seg) in segments.iter().enumerate() {
        if idx > 0 {
            point = point.to_chart(seg.chart, atlas)?;
        }
        let field = |t: f64, _s: f64| -> Result<f64> {
            let jet = gamma.jet_in(idx, t)?;
            atlas.check_in_chart(seg.chart, &jet.x)?;
            lagrangian.value(seg.chart, &jet.x, &jet.v)
        };
        let n = panels_for(gamma, seg, steps);
        let h = (seg.t1 - seg.t0) / n as f64;
        let mut s = point.value;
        for k in 0..n {
            let t = seg.t0 + k as f64 * h;
            let k1 = field(t, s)?;
            let k2 = field(t + 0.5 * h, s + 0.5 * h * k1)?;
            let k3 = field(t + 0.5 * h, s + 0.5 * h * k2)?;
            let k4 = field(t + h, s + h * k3)?;
            s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let end = gamma.jet_in(idx, seg.t1)?;
        point = FiberPoint::new(atlas, seg.chart, end.x, s)?;
    }
    Ok(box_minus(point, origin))
}

/// Components `w(t)` of a variation along a curve, each read in the chart of
/// the curve segment it is evaluated on.
#[derive(Clone, Debug)]
pub struct VariationField {
    components: Vec<Ast>,
    compiled: Vec<Expr>,
}

impl VariationField {
    pub fn new(components: Vec<Ast>) -> Result<Self> {
        let consts = crate::exprlang::Constants::new();
        let compiled = components
            .iter()
            .map(|c| Expr::compile(c.clone(), &["t"], &consts))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { components, compiled })
    }

    pub fn parse(components: &[&str]) -> Result<Self> {
        let asts = components
            .iter()
            .map(|c| parse(c).map_err(|e| Error::InvalidInput(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(asts)
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(vec![Ast::Number(0.0); dim]).expect("constant field compiles")
    }

    pub fn components(&self) -> &[Ast] {
        &self.components
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.compiled.iter().map(|c| c.eval(&[t])).collect::<Result<_, _>>()?)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.components.len() != dim {
            return Err(Error::InvalidInput(format!(
                "variation field has {} components, expected {dim}",
                self.components.len()
            )));
        }
        Ok(())
    }
}

/// Central difference of the real part of the action along `gamma + s w`.
pub fn variation_derivative(
    lagrangian: &GaugeClassLagrangian,
    gamma: &CurveSpec,
    w: &VariationField,
    epsilon: f64,
    panels: usize,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    w.check_dim(lagrangian.dim())?;
    let atlas = lagrangian.atlas();
    let forward = gamma.displaced(atlas, w.components(), epsilon)?;
    let backward = gamma.displaced(atlas, w.components(), -epsilon)?;
    let up = action_quadrature(lagrangian, &forward, panels)?.real_part();
    let down = action_quadrature(lagrangian, &backward, panels)?.real_part();
    Ok((up - down) / (2.0 * epsilon))
}

/// The terms of the boundary-plus-bulk pairing.
#[derive(Clone, Debug)]
pub struct PairingTerms {
    /// Momentum at `gamma(a)` in the first chart.
    pub start_momentum: AffineCovector,
    /// Momentum at `gamma(b)` in the last chart.
    pub end_momentum: AffineCovector,
    /// `<P(b), w(b)> - <P(a), w(a)>`.
    pub boundary: f64,
    /// `integral of <E(gamma''), w>`.
    pub bulk: f64,
}

impl PairingTerms {
    pub fn total(&self) -> f64 {
        self.boundary + self.bulk
    }
}

/// Boundary momenta and Euler-Lagrange bulk term of the first variation.
pub fn variation_pairing_terms(
    lagrangian: &GaugeClassLagrangian,
    gamma: &CurveSpec,
    w: &VariationField,
    panels: usize,
) -> Result<PairingTerms> {
    if panels == 0 {
        return Err(Error::InvalidInput("panels must be at least 1".into()));
    }
    w.check_dim(lagrangian.dim())?;
    let last = gamma.segments().len() - 1;
    let a = gamma.jet_in(0, gamma.start())?;
    let b = gamma.jet_in(last, gamma.end())?;
    let start_momentum = lagrangian.legendre(&a.x, &a.v, a.chart)?;
    let end_momentum = lagrangian.legendre(&b.x, &b.v, b.chart)?;
    let boundary = end_momentum.pair(&w.eval(gamma.end())?) - start_momentum.pair(&w.eval(gamma.start())?);
    let mut bulk = 0.0;
    for (idx, seg) in gamma.segments().iter().enumerate() {
        bulk += simpson(
            |t| {
                let jet = gamma.jet_in(idx, t)?;
                let q = SecondOrderPoint { x: jet.x, v: jet.v, a: jet.a };
                let e = lagrangian.euler_lagrange(&q, seg.chart)?;
                Ok(e.p.iter().zip(w.eval(t)?).map(|(ei, wi)| ei * wi).sum())
            },
            seg.t0,
            seg.t1,
            panels_for(gamma, seg, panels),
        )?;
    }
    Ok(PairingTerms { start_momentum, end_momentum, boundary, bulk })
}

/// `<P(b), w(b)> - <P(a), w(a)> + integral of <E(gamma''), w>`.
pub fn variation_pairing(
    lagrangian: &GaugeClassLagrangian,
    gamma: &CurveSpec,
    w: &VariationField,
    panels: usize,
) -> Result<f64> {
    Ok(variation_pairing_terms(lagrangian, gamma, w, panels)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::affine_scalar_diff;
    use crate::exprlang::Constants;
    use crate::geometry::{AVSection, Atlas, GaugeFunction};
    use std::sync::Arc;

    fn p(s: &str) -> Ast {
        parse(s).unwrap()
    }

    fn euclid(n: usize) -> Arc<Atlas> {
        Arc::new(Atlas::euclidean(n, Constants::new()).unwrap())
    }

    fn lag(atlas: &Arc<Atlas>, src: &str) -> GaugeClassLagrangian {
        GaugeClassLagrangian::new(atlas.clone(), vec![p(src)]).unwrap()
    }

    fn line(atlas: &Atlas, coords: &[&str], t0: f64, t1: f64) -> CurveSpec {
        CurveSpec::single(atlas, 0, t0, t1, coords.iter().map(|c| p(c)).collect()).unwrap()
    }

    fn circle() -> (Arc<Atlas>, GaugeClassLagrangian, CurveSpec) {
        let atlas = Arc::new(Atlas::circle(&p("0.3*sin(x1)"), None, Constants::new()).unwrap());
        let l = GaugeClassLagrangian::new(
            atlas.clone(),
            vec![p("0.5*v1^2 - cos(x1) + 0.3*cos(x1)*v1"), p("0.5*v1^2 - cos(x1)")],
        )
        .unwrap();
        let curve = CurveSpec::new(
            &atlas,
            vec![(0, 0.0, 2.0, vec![p("t - 1 + 0.1*t^2")]), (1, 2.0, 3.0, vec![p("t - 1 + 0.1*t^2")])],
        )
        .unwrap();
        (atlas, l, curve)
    }

    #[test]
    fn zero_lagrangian_has_zero_action() {
        let atlas = euclid(1);
        let l = lag(&atlas, "0");
        let gamma = line(&atlas, &["t^2"], 0.0, 1.0);
        assert_eq!(action_quadrature(&l, &gamma, 10).unwrap().real_part(), 0.0);
        assert_eq!(action_lift(&l, &gamma, 10, 0.0).unwrap().real_part(), 0.0);
    }

    #[test]
    fn free_particle_action_on_unit_line() {
        let atlas = euclid(1);
        let l = lag(&atlas, "0.5*v1^2");
        let gamma = line(&atlas, &["t"], 0.0, 1.0);
        assert!((action_quadrature(&l, &gamma, 1000).unwrap().real_part() - 0.5).abs() <= 1e-10);
        assert!((action_lift(&l, &gamma, 1000, 0.0).unwrap().real_part() - 0.5).abs() <= 1e-10);
    }

    #[test]
    fn lift_class_ignores_initial_value() {
        let atlas = euclid(1);
        let l = lag(&atlas, "0.5*v1^2 - x1");
        let gamma = line(&atlas, &["sin(t)"], 0.0, 1.0);
        let s0 = action_lift(&l, &gamma, 200, 0.0).unwrap();
        let s1 = action_lift(&l, &gamma, 200, 3.25).unwrap();
        assert!((s1.plus.value - s0.plus.value - 3.25).abs() < 1e-12);
        assert!(affine_scalar_diff(&s0, &s1, &atlas).unwrap().abs() < 1e-12);
    }

    #[test]
    fn quadrature_and_lift_agree_across_circle_junction() {
        let (atlas, l, gamma) = circle();
        let q = action_quadrature(&l, &gamma, 1000).unwrap();
        let r = action_lift(&l, &gamma, 1000, 0.0).unwrap();
        assert!(affine_scalar_diff(&q, &r, &atlas).unwrap().abs() <= 1e-8);
    }

    #[test]
    fn exact_lagrangian_action_is_section_difference() {
        let (atlas, _, gamma) = circle();
        let phi = AVSection::new(&atlas, vec![p("sin(x1) + 0.3*sin(x1)"), p("sin(x1)")]).unwrap();
        assert!(phi.compatibility_defect(&atlas, 32).unwrap() < 1e-12);
        let l = GaugeClassLagrangian::exact(atlas.clone(), &phi).unwrap();
        let s = action_quadrature(&l, &gamma, 1000).unwrap();
        let a = gamma.jet_in(0, gamma.start()).unwrap();
        let b = gamma.jet_in(1, gamma.end()).unwrap();
        let reference = box_minus(
            phi.value(&atlas, b.chart, &b.x).unwrap(),
            phi.value(&atlas, a.chart, &a.x).unwrap(),
        );
        assert!(affine_scalar_diff(&s, &reference, &atlas).unwrap().abs() <= 1e-8);
    }

    #[test]
    fn gauge_shift_moves_action_by_endpoint_values() {
        let atlas = euclid(2);
        let l = lag(&atlas, "0.5*(v1^2+v2^2) - x1*x2");
        let chi = GaugeFunction::new(&atlas, vec![p("sin(x1)*cos(x2)")]).unwrap();
        let gamma = line(&atlas, &["t", "t^2 - 0.5"], -0.5, 1.0);
        let s0 = action_quadrature(&l, &gamma, 1000).unwrap().real_part();
        let s1 = action_quadrature(&l.with_gauge_shift(&chi), &gamma, 1000).unwrap().real_part();
        let chi_b = chi.eval(0, &[1.0, 0.5]).unwrap();
        let chi_a = chi.eval(0, &[-0.5, -0.25]).unwrap();
        assert!((s1 - s0 - (chi_b - chi_a)).abs() <= 1e-9);
    }

    #[test]
    fn zero_variation() {
        let atlas = euclid(1);
        let l = lag(&atlas, "0.5*v1^2 - x1");
        let gamma = line(&atlas, &["t^3"], 0.0, 1.0);
        let w = VariationField::zero(1);
        assert_eq!(variation_derivative(&l, &gamma, &w, 1e-5, 100).unwrap(), 0.0);
        assert_eq!(variation_pairing(&l, &gamma, &w, 100).unwrap(), 0.0);
    }

    #[test]
    fn stationary_on_solutions_for_vanishing_fields() {
        let atlas = euclid(1);
        let l = lag(&atlas, "0.5*v1^2");
        let gamma = line(&atlas, &["2*t + 1"], 0.0, 1.0);
        let w = VariationField::parse(&["sin(pi*t)"]).unwrap();
        assert!(variation_derivative(&l, &gamma, &w, 1e-5, 1000).unwrap().abs() <= 1e-6);
        assert!(variation_pairing(&l, &gamma, &w, 1000).unwrap().abs() <= 1e-8);
    }

    #[test]
    fn pairing_matches_finite_difference() {
        let (_, l, gamma) = circle();
        let w = VariationField::parse(&["0.3 + t - 0.2*t^2"]).unwrap();
        let fd = variation_derivative(&l, &gamma, &w, DEFAULT_EPSILON, 1000).unwrap();
        let pairing = variation_pairing(&l, &gamma, &w, 1000).unwrap();
        assert!((fd - pairing).abs() <= 1e-4, "{fd} vs {pairing}");
    }

    #[test]
    fn vanishing_pairing_is_gauge_invariant() {
        let atlas = euclid(2);
        let l = lag(&atlas, "0.5*(v1^2+v2^2) + 0.5*(x1*v2 - x2*v1)");
        let chi = GaugeFunction::new(&atlas, vec![p("exp(-x1^2)")]).unwrap();
        let gamma = line(&atlas, &["cos(t)", "t^2"], 0.0, 1.0);
        let w = VariationField::parse(&["t*(1-t)", "t^2*(1-t)"]).unwrap();
        let a = variation_pairing(&l, &gamma, &w, 1000).unwrap();
        let b = variation_pairing(&l.with_gauge_shift(&chi), &gamma, &w, 1000).unwrap();
        assert!((a - b).abs() <= 1e-9);
    }
}
