//! Sampled invariant checks over a system definition.
//!
//! Every check reports its worst observed defect next to the tolerance it is
//! held to. Sampling is seeded, so repeated runs report identical numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::{
    action_lift, action_quadrature, variation_derivative, variation_pairing, VariationField,
};
use crate::affine::{affine_scalar_diff, box_minus};
use crate::config::SystemConfig;
use crate::dynamics::{integrate_trajectory, GaugeClassLagrangian, SecondOrderPoint};
use crate::error::{Error, Result};
use crate::exprlang::{parse, Ast, EvalError};
use crate::geometry::{affine_differential, affine_integral, AVSection, Atlas, CurveSpec, GaugeFunction};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub defect: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    fn new(name: impl Into<String>, defect: f64, tolerance: f64) -> Self {
        Self { name: name.into(), defect, tolerance }
    }

    pub fn passed(&self) -> bool {
        self.defect <= self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct Tolerances {
    pub atlas: f64,
    pub lagrangian: f64,
    pub gauge_el: f64,
    pub legendre: f64,
    pub consistency: f64,
    pub trajectory: f64,
    pub action: f64,
    pub action_gauge: f64,
    pub exact: f64,
    pub variation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            atlas: 1e-12,
            lagrangian: 1e-10,
            gauge_el: 1e-9,
            legendre: 1e-12,
            consistency: 1e-10,
            trajectory: 1e-9,
            action: 1e-8,
            action_gauge: 1e-9,
            exact: 1e-8,
            variation: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    /// Random second-order points per gauge function.
    pub points: usize,
    /// Velocities per base point in the Legendre check.
    pub velocities: usize,
    /// Random variation fields of each kind.
    pub fields: usize,
    pub panels: usize,
    pub epsilon: f64,
    pub trajectory_steps: usize,
    pub overlap_samples: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            points: 100,
            velocities: 10,
            fields: 10,
            panels: 1000,
            epsilon: 1e-5,
            trajectory_steps: 1000,
            overlap_samples: crate::geometry::DEFAULT_OVERLAP_SAMPLES,
            seed: 0x5eed,
            tolerances: Tolerances::default(),
        }
    }
}

/// The standard gauge functions; in one dimension `x2` is replaced by `x1`.
pub fn gauge_test_set(dim: usize) -> Vec<(String, Ast)> {
    let srcs: [&str; 3] = if dim >= 2 {
        ["sin(x1)*cos(x2)", "x1*x2", "exp(-x1^2)"]
    } else {
        ["sin(x1)*cos(x1)", "x1*x1", "exp(-x1^2)"]
    };
    srcs.iter().map(|s| (s.to_string(), parse(s).expect("test gauge parses"))).collect()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// A point of `[-1, 1]^n` inside `chart` at which `lagrangian` is defined.
fn sample_base(rng: &mut ChaCha8Rng, atlas: &Atlas, chart: usize) -> Vec<f64> {
    let c = &atlas.charts()[chart];
    loop {
        let x: Vec<f64> = (0..atlas.dim())
            .map(|i| {
                let lo = c.lower[i].max(-1.0);
                let hi = c.upper[i].min(1.0);
                lo + (hi - lo) * rng.gen::<f64>()
            })
            .collect();
        if c.contains(&x) {
            return x;
        }
    }
}

fn is_domain(e: &Error) -> bool {
    matches!(e, Error::Eval(EvalError::Domain(_)))
}

/// Draws `(chart, x, v, a)` with the Lagrangian defined at `(x, v)`.
fn sample_point(rng: &mut ChaCha8Rng, lagrangian: &GaugeClassLagrangian, k: usize) -> Result<(usize, SecondOrderPoint)> {
    let atlas = lagrangian.atlas();
    let n = atlas.dim();
    let chart = k % atlas.charts().len();
    for _ in 0..10_000 {
        let x = sample_base(rng, atlas, chart);
        let v = uniform(rng, n);
        let a = uniform(rng, n);
        match lagrangian.value(chart, &x, &v) {
            Ok(l) if l.is_finite() => return Ok((chart, SecondOrderPoint { x, v, a })),
            Ok(_) => continue,
            Err(e) if is_domain(&e) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::InvalidInput("no sample point in the Lagrangian's domain".into()))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst component of `E(L + <d chi, v>) - E(L)`.
pub fn euler_lagrange_gauge_defect(
    lagrangian: &GaugeClassLagrangian,
    chi: &GaugeFunction,
    points: usize,
    seed: u64,
) -> Result<f64> {
    let shifted = lagrangian.with_gauge_shift(chi);
    let mut rng = rng_for(seed, 1);
    let mut worst: f64 = 0.0;
    for k in 0..points {
        let (chart, q) = sample_point(&mut rng, lagrangian, k)?;
        let e0 = lagrangian.euler_lagrange(&q, chart)?;
        let e1 = shifted.euler_lagrange(&q, chart)?;
        worst = worst.max(max_diff(&e0.p, &e1.p));
    }
    Ok(worst)
}

/// `(shift, velocity dependence)`: the worst deviation of
/// `P(L + <d chi, v>) - P(L)` from `d chi(x)`, and its spread over velocities
/// at a fixed base point.
pub fn legendre_covariance_defect(
    lagrangian: &GaugeClassLagrangian,
    chi: &GaugeFunction,
    points: usize,
    velocities: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let shifted = lagrangian.with_gauge_shift(chi);
    let mut rng = rng_for(seed, 2);
    let (mut shift, mut spread) = (0.0f64, 0.0f64);
    for k in 0..points {
        let (chart, q) = sample_point(&mut rng, lagrangian, k)?;
        let dchi = chi.gradient(chart, &q.x)?;
        let mut first: Option<Vec<f64>> = None;
        let mut drawn = 0;
        while drawn < velocities.max(1) {
            let v = uniform(&mut rng, q.x.len());
            let p0 = match lagrangian.legendre(&q.x, &v, chart) {
                Ok(p) => p.p,
                Err(e) if is_domain(&e) => continue,
                Err(e) => return Err(e),
            };
            drawn += 1;
            let p1 = shifted.legendre(&q.x, &v, chart)?.p;
            let diff: Vec<f64> = p1.iter().zip(&p0).map(|(a, b)| a - b).collect();
            shift = shift.max(max_diff(&diff, &dchi));
            match &first {
                Some(f) => spread = spread.max(max_diff(&diff, f)),
                None => first = Some(diff),
            }
        }
    }
    Ok((shift, spread))
}

/// Worst `|E(x, v, solve_accelerations(x, v, f)) - f|` for random forcings.
pub fn consistency_defect(lagrangian: &GaugeClassLagrangian, points: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 3);
    let mut worst: f64 = 0.0;
    for k in 0..points {
        let (chart, mut q) = sample_point(&mut rng, lagrangian, k)?;
        let f = uniform(&mut rng, q.x.len());
        q.a = lagrangian.solve_accelerations(&q.x, &q.v, &f, chart)?;
        worst = worst.max(max_diff(&lagrangian.euler_lagrange(&q, chart)?.p, &f));
    }
    Ok(worst)
}

/// Worst deviation between trajectories of `L` and `L + <d chi, v>` over `[0, 1]`.
pub fn trajectory_gauge_defect(
    lagrangian: &GaugeClassLagrangian,
    chi: &GaugeFunction,
    start: (usize, &[f64], &[f64]),
    steps: usize,
) -> Result<f64> {
    let (chart, x0, v0) = start;
    let a = integrate_trajectory(lagrangian, x0, v0, chart, 0.0, 1.0, steps, None)?;
    let b = integrate_trajectory(&lagrangian.with_gauge_shift(chi), x0, v0, chart, 0.0, 1.0, steps, None)?;
    Ok(a.max_deviation(&b))
}

/// Real difference between the quadrature and lifted constructions of the action.
pub fn action_equality_gap(lagrangian: &GaugeClassLagrangian, gamma: &CurveSpec, panels: usize) -> Result<f64> {
    let q = action_quadrature(lagrangian, gamma, panels)?;
    let l = action_lift(lagrangian, gamma, panels, 0.0)?;
    Ok(affine_scalar_diff(&q, &l, lagrangian.atlas())?.abs())
}

/// `|S(L + <d chi, v>) - S(L) - (chi(b) - chi(a))|` in the curve's trivializations.
pub fn action_gauge_gap(
    lagrangian: &GaugeClassLagrangian,
    chi: &GaugeFunction,
    gamma: &CurveSpec,
    panels: usize,
) -> Result<f64> {
    let s0 = action_quadrature(lagrangian, gamma, panels)?.real_part();
    let s1 = action_quadrature(&lagrangian.with_gauge_shift(chi), gamma, panels)?.real_part();
    let last = gamma.segments().len() - 1;
    let a = gamma.jet_in(0, gamma.start())?;
    let b = gamma.jet_in(last, gamma.end())?;
    let jump = chi.eval(b.chart, &b.x)? - chi.eval(a.chart, &a.x)?;
    Ok((s1 - s0 - jump).abs())
}

fn section_endpoints(atlas: &Atlas, phi: &AVSection, gamma: &CurveSpec) -> Result<crate::affine::AffineScalar> {
    let last = gamma.segments().len() - 1;
    let a = gamma.jet_in(0, gamma.start())?;
    let b = gamma.jet_in(last, gamma.end())?;
    Ok(box_minus(phi.value(atlas, b.chart, &b.x)?, phi.value(atlas, a.chart, &a.x)?))
}

/// Action of the exact Lagrangian `<d phi, v>` against `phi(b) (-) phi(a)`.
pub fn exact_action_gap(atlas: &std::sync::Arc<Atlas>, phi: &AVSection, gamma: &CurveSpec, panels: usize) -> Result<f64> {
    let lagrangian = GaugeClassLagrangian::exact(atlas.clone(), phi)?;
    let s = action_quadrature(&lagrangian, gamma, panels)?;
    Ok(affine_scalar_diff(&s, &section_endpoints(atlas, phi, gamma)?, atlas)?.abs())
}

/// Integral of the pulled-back differential of `phi` against `phi(b) (-) phi(a)`.
pub fn pullback_gap(atlas: &Atlas, phi: &AVSection, gamma: &CurveSpec, panels: usize) -> Result<f64> {
    let s = affine_integral(&affine_differential(phi), gamma, atlas, panels)?;
    Ok(affine_scalar_diff(&s, &section_endpoints(atlas, phi, gamma)?, atlas)?.abs())
}

/// A cubic in the normalized parameter of `gamma` with coefficients in
/// `[-1, 1]`, multiplied by `4 s (1 - s)` when `vanishing`.
pub fn random_polynomial_field(rng: &mut ChaCha8Rng, dim: usize, gamma: &CurveSpec, vanishing: bool) -> VariationField {
    let (a, b) = (gamma.start(), gamma.end());
    let s = format!("((t - ({a:?})) / ({:?}))", b - a);
    let comps = (0..dim)
        .map(|_| {
            let c = uniform(rng, 4);
            let poly = format!("(({:?}) + ({:?})*{s} + ({:?})*{s}^2 + ({:?})*{s}^3)", c[0], c[1], c[2], c[3]);
            let src = if vanishing { format!("4*{s}*(1 - {s})*{poly}") } else { poly };
            parse(&src).expect("generated field parses")
        })
        .collect();
    VariationField::new(comps).expect("generated field compiles")
}

/// Worst `|variation_derivative - variation_pairing|` over random fields of one kind.
pub fn variation_identity_gap(
    lagrangian: &GaugeClassLagrangian,
    gamma: &CurveSpec,
    fields: usize,
    vanishing: bool,
    epsilon: f64,
    panels: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng_for(seed, if vanishing { 4 } else { 5 });
    let mut worst: f64 = 0.0;
    for _ in 0..fields {
        let w = random_polynomial_field(&mut rng, lagrangian.dim(), gamma, vanishing);
        let fd = variation_derivative(lagrangian, gamma, &w, epsilon, panels)?;
        let pairing = variation_pairing(lagrangian, gamma, &w, panels)?;
        worst = worst.max((fd - pairing).abs());
    }
    Ok(worst)
}

/// Worst change of the pairing with endpoint-vanishing fields under a gauge shift.
pub fn variation_gauge_defect(
    lagrangian: &GaugeClassLagrangian,
    chi: &GaugeFunction,
    gamma: &CurveSpec,
    fields: usize,
    panels: usize,
    seed: u64,
) -> Result<f64> {
    let shifted = lagrangian.with_gauge_shift(chi);
    let mut rng = rng_for(seed, 6);
    let mut worst: f64 = 0.0;
    for _ in 0..fields {
        let w = random_polynomial_field(&mut rng, lagrangian.dim(), gamma, true);
        let a = variation_pairing(lagrangian, gamma, &w, panels)?;
        let b = variation_pairing(&shifted, gamma, &w, panels)?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

fn trajectory_start(cfg: &SystemConfig) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    match &cfg.curve {
        Some(gamma) => {
            let jet = gamma.jet_in(0, gamma.start())?;
            Ok((jet.chart, jet.x, jet.v))
        }
        None => {
            let mut v = vec![0.0; cfg.dim];
            v[0] = 0.5;
            Ok((0, vec![0.0; cfg.dim], v))
        }
    }
}

/// Gauge-invariance checks for one gauge function.
pub fn check_gauge(cfg: &SystemConfig, label: &str, chi: &GaugeFunction, opts: &SuiteOptions) -> Result<Vec<SuiteResult>> {
    let tol = &opts.tolerances;
    let l = &cfg.lagrangian;
    let mut out = vec![SuiteResult::new(
        format!("gauge-el[{label}]"),
        euler_lagrange_gauge_defect(l, chi, opts.points, opts.seed)?,
        tol.gauge_el,
    )];
    let (shift, spread) = legendre_covariance_defect(l, chi, opts.points, opts.velocities, opts.seed)?;
    out.push(SuiteResult::new(format!("legendre-shift[{label}]"), shift, tol.legendre));
    out.push(SuiteResult::new(format!("legendre-velocity[{label}]"), spread, tol.legendre));
    let (chart, x0, v0) = trajectory_start(cfg)?;
    out.push(SuiteResult::new(
        format!("trajectory-gauge[{label}]"),
        trajectory_gauge_defect(l, chi, (chart, &x0, &v0), opts.trajectory_steps)?,
        tol.trajectory,
    ));
    // Action-level checks need chi to be one function on the whole manifold.
    let global = chi.compatibility_defect(&cfg.atlas, opts.overlap_samples)? <= tol.lagrangian;
    if let (Some(gamma), true) = (&cfg.curve, global) {
        out.push(SuiteResult::new(
            format!("action-gauge[{label}]"),
            action_gauge_gap(l, chi, gamma, opts.panels)?,
            tol.action_gauge,
        ));
        out.push(SuiteResult::new(
            format!("variation-gauge[{label}]"),
            variation_gauge_defect(l, chi, gamma, opts.fields, opts.panels, opts.seed)?,
            tol.action_gauge,
        ));
    }
    Ok(out)
}

/// Every suite, in a fixed order.
pub fn check_all(cfg: &SystemConfig, opts: &SuiteOptions) -> Result<Vec<SuiteResult>> {
    let tol = &opts.tolerances;
    let atlas = &cfg.atlas;
    let l = &cfg.lagrangian;
    let report = atlas.integrity(opts.overlap_samples)?;
    let mut out = vec![
        SuiteResult::new("atlas-antisymmetry", report.antisymmetry, tol.atlas),
        SuiteResult::new("atlas-cocycle", report.cocycle, tol.atlas),
        SuiteResult::new("lagrangian-overlap", l.compatibility_defect(opts.overlap_samples)?, tol.lagrangian),
    ];
    let mut gauges: Vec<(String, GaugeFunction)> = gauge_test_set(cfg.dim)
        .into_iter()
        .map(|(name, ast)| Ok((name, GaugeFunction::new(atlas, vec![ast])?)))
        .collect::<Result<_>>()?;
    gauges.extend(cfg.gauges.iter().map(|g| (g.name.clone(), g.function.clone())));
    for (name, chi) in &gauges {
        out.extend(check_gauge(cfg, name, chi, opts)?);
    }
    out.push(SuiteResult::new("el-consistency", consistency_defect(l, opts.points, opts.seed)?, tol.consistency));
    if let Some(gamma) = &cfg.curve {
        out.push(SuiteResult::new("action-equality", action_equality_gap(l, gamma, opts.panels)?, tol.action));
        for vanishing in [true, false] {
            let name = if vanishing { "variation-identity[vanishing]" } else { "variation-identity[free]" };
            let gap = variation_identity_gap(l, gamma, opts.fields, vanishing, opts.epsilon, opts.panels, opts.seed)?;
            out.push(SuiteResult::new(name, gap, tol.variation));
        }
        if let Some(phi) = &cfg.section {
            out.push(SuiteResult::new("section-overlap", phi.compatibility_defect(atlas, opts.overlap_samples)?, tol.lagrangian));
            out.push(SuiteResult::new("exact-action", exact_action_gap(atlas, phi, gamma, opts.panels)?, tol.exact));
            out.push(SuiteResult::new("pullback-commutation", pullback_gap(atlas, phi, gamma, opts.panels)?, tol.exact));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn gauge_set_in_one_dimension_uses_x1_only() {
        for (_, ast) in gauge_test_set(1) {
            assert!(ast.free_variables().iter().all(|v| v == "x1"));
        }
    }

    #[test]
    fn failing_result_is_reported() {
        assert!(!SuiteResult::new("x", f64::NAN, 1.0).passed());
        assert!(!SuiteResult::new("x", 2.0, 1.0).passed());
        assert!(SuiteResult::new("x", 1.0, 1.0).passed());
    }

    #[test]
    fn random_fields_vanish_at_endpoints() {
        let cfg = bundled::load("charged").unwrap().unwrap();
        let gamma = cfg.curve.unwrap();
        let mut rng = rng_for(1, 0);
        let w = random_polynomial_field(&mut rng, 3, &gamma, true);
        for t in [gamma.start(), gamma.end()] {
            assert!(w.eval(t).unwrap().iter().all(|c| c.abs() < 1e-15));
        }
    }

    #[test]
    fn relativistic_samples_stay_subluminal() {
        let cfg = bundled::load("relativistic").unwrap().unwrap();
        let mut rng = rng_for(7, 0);
        for k in 0..50 {
            let (_, q) = sample_point(&mut rng, &cfg.lagrangian, k).unwrap();
            assert!(q.v.iter().map(|c| c * c).sum::<f64>() < 1.0);
        }
    }

    #[test]
    fn free_particle_suites_pass() {
        let cfg = bundled::load("free").unwrap().unwrap();
        let opts = SuiteOptions { points: 20, fields: 3, ..Default::default() };
        for r in check_all(&cfg, &opts).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }
}
