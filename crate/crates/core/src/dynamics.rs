//! Lagrangians with affine values, their Euler-Lagrange operator and
//! Legendre map, and trajectory integration.
//!
//! A [`GaugeClassLagrangian`] holds one ordinary representative `L_i(x, v)`
//! per chart. Representatives on overlapping charts differ by the pairing of
//! the transition differential with the velocity,
//! `L_i(x, v) - L_j(x', J v) = <d g_ij(x), v>`, which is exactly the freedom
//! that leaves the Euler-Lagrange covector unchanged and shifts momenta
//! affinely.
//!
//! In a chart, with all derivatives taken at `(x, v)`:
//!
//! ```text
//! E_i = dL/dx^i - (d2L/dx^j dv^i) v^j - (d2L/dv^j dv^i) a^j
//! P_i = dL/dv^i
//! ```

use std::sync::Arc;

use crate::autodiff::{hessian_vector_rows, Dual, Hyperdual, Scalar};
use crate::error::{Error, Result};
use crate::exprlang::{as_strs, phase_names, Ast, EvalError, Expr};
use crate::geometry::{push_forward, Atlas, AVSection, GaugeFunction};
use crate::linalg;

#[derive(Clone, Debug)]
struct ChartLagrangian {
    /// Representative over `x1..xn, v1..vn`.
    base: Expr,
    /// Functions `chi` over `x1..xn` whose velocity pairing `<d chi, v>` is
    /// added to `base`.
    exact: Vec<Expr>,
}

/// An affine Lagrangian: chart representatives glued by the atlas transitions.
#[derive(Clone, Debug)]
pub struct GaugeClassLagrangian {
    atlas: Arc<Atlas>,
    charts: Vec<ChartLagrangian>,
}

/// A point of the second-order tangent bundle, in chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrderPoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Covector {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

/// A point of the phase bundle: momentum components in the trivialization of `chart`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineCovector {
    pub chart: usize,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl AffineCovector {
    /// Re-expresses the momentum in another chart:
    /// `p_target = J^{-T} (p - d g_{self,target})`.
    pub fn to_chart(&self, target: usize, atlas: &Atlas) -> Result<Self> {
        if target == self.chart {
            return Ok(self.clone());
        }
        let x = atlas.change_coordinates(self.chart, target, &self.x)?;
        let jac = atlas.jacobian(self.chart, target, &self.x)?;
        let dg = atlas.transition_gauge_gradient(self.chart, target, &self.x)?;
        let rhs: Vec<f64> = self.p.iter().zip(&dg).map(|(p, g)| p - g).collect();
        let jt: Vec<Vec<f64>> =
            (0..jac.len()).map(|i| (0..jac.len()).map(|j| jac[j][i]).collect()).collect();
        let p = linalg::solve(&jt, &rhs)?;
        Ok(Self { chart: target, x, p })
    }

    /// `<p, w>`.
    pub fn pair(&self, w: &[f64]) -> f64 {
        self.p.iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

impl GaugeClassLagrangian {
    /// One representative per chart, or a single representative used in every
    /// chart. Overlap compatibility is not checked here; see
    /// [`GaugeClassLagrangian::validate`].
    pub fn new(atlas: Arc<Atlas>, reps: Vec<Ast>) -> Result<Self> {
        let count = atlas.charts().len();
        let reps = match reps.len() {
            1 => vec![reps[0].clone(); count],
            n if n == count => reps,
            n => {
                return Err(Error::InvalidInput(format!(
                    "expected 1 or {count} Lagrangian representatives, got {n}"
                )))
            }
        };
        let names = phase_names(atlas.dim());
        let charts = reps
            .into_iter()
            .map(|ast| {
                Ok(ChartLagrangian {
                    base: Expr::compile(ast, &as_strs(&names), atlas.constants())?,
                    exact: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { atlas, charts })
    }

    /// The exact Lagrangian `<d phi, v>` of a section.
    pub fn exact(atlas: Arc<Atlas>, phi: &AVSection) -> Result<Self> {
        let mut lag = Self::new(atlas, vec![Ast::Number(0.0)])?;
        for (i, c) in lag.charts.iter_mut().enumerate() {
            c.exact.push(phi.representative(i).clone());
        }
        Ok(lag)
    }

    /// `L + <d chi, v>` in every chart.
    pub fn with_gauge_shift(&self, chi: &GaugeFunction) -> Self {
        let mut out = self.clone();
        for (i, c) in out.charts.iter_mut().enumerate() {
            c.exact.push(chi.representative(i).clone());
        }
        out
    }

    pub fn atlas(&self) -> &Arc<Atlas> {
        &self.atlas
    }

    pub fn dim(&self) -> usize {
        self.atlas.dim()
    }

    /// `L_chart(x, v)` over any scalar type.
    pub fn eval<S: Scalar>(&self, chart: usize, x: &[S], v: &[S]) -> Result<S, EvalError> {
        let c = &self.charts[chart];
        let args: Vec<S> = x.iter().chain(v).copied().collect();
        let mut total = c.base.eval(&args)?;
        if !c.exact.is_empty() {
            // <d chi(x), v> is the derivative of chi along x + s v at s = 0.
            let moving: Vec<Dual<S>> = x.iter().zip(v).map(|(&xi, &vi)| Dual::new(xi, vi)).collect();
            for chi in &c.exact {
                total = total + chi.eval(&moving)?.eps;
            }
        }
        Ok(total)
    }

    pub fn value(&self, chart: usize, x: &[f64], v: &[f64]) -> Result<f64> {
        Ok(self.eval(chart, x, v)?)
    }

    fn phase_fn(&self, chart: usize) -> impl Fn(&[Hyperdual]) -> Result<Hyperdual, EvalError> + '_ {
        let n = self.dim();
        move |z: &[Hyperdual]| self.eval(chart, &z[..n], &z[n..])
    }

    fn check_point(&self, chart: usize, x: &[f64], v: &[f64]) -> Result<()> {
        let n = self.dim();
        if x.len() != n || v.len() != n {
            return Err(Error::InvalidInput(format!("expected {n} coordinates and {n} velocities")));
        }
        self.atlas.check_in_chart(chart, x)
    }

    /// The Euler-Lagrange covector at second-order data `q`.
    pub fn euler_lagrange(&self, q: &SecondOrderPoint, chart: usize) -> Result<Covector> {
        self.check_point(chart, &q.x, &q.v)?;
        let n = self.dim();
        if q.a.len() != n {
            return Err(Error::InvalidInput(format!("expected {n} accelerations")));
        }
        let point: Vec<f64> = q.x.iter().chain(&q.v).copied().collect();
        // Direction (v, a): the v-rows of H.(v, a) are d/dt of dL/dv along the jet.
        let dir: Vec<f64> = q.v.iter().chain(&q.a).copied().collect();
        let rows: Vec<usize> = (0..2 * n).collect();
        let r = hessian_vector_rows(self.phase_fn(chart), &point, &dir, &rows)?;
        let p = (0..n).map(|i| r[i].0 - r[n + i].1).collect();
        Ok(Covector { x: q.x.clone(), p })
    }

    /// The affine Legendre map: momenta `dL/dv` in the trivialization of `chart`.
    pub fn legendre(&self, x: &[f64], v: &[f64], chart: usize) -> Result<AffineCovector> {
        self.check_point(chart, x, v)?;
        let n = self.dim();
        let point: Vec<f64> = x.iter().chain(v).copied().collect();
        let rows: Vec<usize> = (n..2 * n).collect();
        let r = hessian_vector_rows(self.phase_fn(chart), &point, &vec![0.0; 2 * n], &rows)?;
        Ok(AffineCovector { chart, x: x.to_vec(), p: r.into_iter().map(|(d, _)| d).collect() })
    }

    /// `d2L/dv dv` at `(x, v)`.
    pub fn velocity_hessian(&self, x: &[f64], v: &[f64], chart: usize) -> Result<Vec<Vec<f64>>> {
        self.check_point(chart, x, v)?;
        let n = self.dim();
        let f = self.phase_fn(chart);
        let mut args: Vec<Hyperdual> =
            x.iter().chain(v).map(|&c| Hyperdual::lift_const(c)).collect();
        let mut h = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                args[n + i].d1 = 1.0;
                args[n + j].d2 = 1.0;
                let r = f(&args)?;
                args[n + i].d1 = 0.0;
                args[n + j].d2 = 0.0;
                h[i][j] = r.d12;
                h[j][i] = r.d12;
            }
        }
        Ok(h)
    }

    /// Accelerations `a` with `E(x, v, a) = f`.
    pub fn solve_accelerations(&self, x: &[f64], v: &[f64], f: &[f64], chart: usize) -> Result<Vec<f64>> {
        let n = self.dim();
        if f.len() != n {
            return Err(Error::InvalidInput(format!("forcing must have {n} components")));
        }
        let m = self.velocity_hessian(x, v, chart)?;
        let free = self.euler_lagrange(
            &SecondOrderPoint { x: x.to_vec(), v: v.to_vec(), a: vec![0.0; n] },
            chart,
        )?;
        // E(a) = E(0) - M a, so M a = E(0) - f.
        let rhs: Vec<f64> = free.p.iter().zip(f).map(|(e, fi)| e - fi).collect();
        linalg::solve(&m, &rhs)
    }

    /// Largest sampled overlap defect of
    /// `L_i(x, v) - L_j(x', J v) - <d g_ij(x), v>`; velocities are drawn from `[-1, 1]^n`.
    pub fn compatibility_defect(&self, samples: usize) -> Result<f64> {
        let atlas = &self.atlas;
        let mut worst: f64 = 0.0;
        for (i, j) in atlas.overlapping_pairs() {
            for (k, x) in atlas.overlap_samples(i, j, samples).into_iter().enumerate() {
                let v = crate::geometry::halton_point(k + 1, atlas.dim(), atlas.dim());
                let y = atlas.change_coordinates(i, j, &x)?;
                let w = push_forward(&atlas.jacobian(i, j, &x)?, &v);
                let dg = atlas.transition_gauge_gradient(i, j, &x)?;
                let pairing: f64 = dg.iter().zip(&v).map(|(a, b)| a * b).sum();
                let defect = self.value(i, &x, &v)? - self.value(j, &y, &w)? - pairing;
                worst = worst.max(defect.abs());
            }
        }
        Ok(worst)
    }

    pub fn validate(&self, samples: usize, tol: f64) -> Result<f64> {
        let defect = self.compatibility_defect(samples)?;
        if defect > tol {
            return Err(Error::Validation {
                invariant: "Lagrangian overlap compatibility".into(),
                location: "chart overlaps".into(),
                defect,
            });
        }
        Ok(defect)
    }
}

/// External forcing covector `f(x, v)`, the right-hand side of `E = f`.
#[derive(Clone, Debug)]
pub struct Forcing {
    components: Vec<Expr>,
}

impl Forcing {
    pub fn new(atlas: &Atlas, components: Vec<Ast>) -> Result<Self> {
        if components.len() != atlas.dim() {
            return Err(Error::InvalidInput(format!(
                "forcing needs {} components, got {}",
                atlas.dim(),
                components.len()
            )));
        }
        let names = phase_names(atlas.dim());
        let components = components
            .into_iter()
            .map(|a| Expr::compile(a, &as_strs(&names), atlas.constants()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { components })
    }

    pub fn eval(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let args: Vec<f64> = x.iter().chain(v).copied().collect();
        Ok(self.components.iter().map(|c| c.eval(&args)).collect::<Result<_, _>>()?)
    }
}

/// State on a trajectory, written in `chart`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub chart: usize,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// A discrete solution curve: strictly increasing times and the state at each.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
}

impl Trajectory {
    /// `(chart, first index)` for every maximal run of samples in one chart.
    pub fn chart_schedule(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (k, s) in self.states.iter().enumerate() {
            if out.last().is_none_or(|&(c, _)| c != s.chart) {
                out.push((s.chart, k));
            }
        }
        out
    }

    /// Largest component difference between two trajectories on the same grid.
    pub fn max_deviation(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .flat_map(|(a, b)| {
                a.x.iter().zip(&b.x).chain(a.v.iter().zip(&b.v)).map(|(p, q)| (p - q).abs())
            })
            .fold(0.0, f64::max)
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn depth_in(chart: &crate::geometry::Chart, x: &[f64]) -> f64 {
    x.iter()
        .zip(chart.lower.iter().zip(&chart.upper))
        .map(|(&c, (&lo, &hi))| (c - lo).min(hi - c))
        .fold(f64::INFINITY, f64::min)
}

/// Fixed-step RK4 integration of `E(x, v, a) = f(x, v)` from `(x0, v0)` at
/// `t0` to `t1`. When a step would leave the current chart the state is moved
/// to the neighbouring chart where it sits deepest and the step is retried.
#[allow(clippy::too_many_arguments)]
pub fn integrate_trajectory(
    lagrangian: &GaugeClassLagrangian,
    x0: &[f64],
    v0: &[f64],
    chart: usize,
    t0: f64,
    t1: f64,
    steps: usize,
    forcing: Option<&Forcing>,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidInput("steps must be at least 1".into()));
    }
    if !(t1 > t0) {
        return Err(Error::InvalidInput(format!("empty time interval [{t0}, {t1}]")));
    }
    let atlas = lagrangian.atlas().clone();
    let n = lagrangian.dim();
    lagrangian.check_point(chart, x0, v0)?;
    let h = (t1 - t0) / steps as f64;
    let accel = |c: usize, x: &[f64], v: &[f64]| -> Result<Vec<f64>> {
        let f = match forcing {
            Some(f) => f.eval(x, v)?,
            None => vec![0.0; n],
        };
        lagrangian.solve_accelerations(x, v, &f, c)
    };
    let step = |s: &PhaseState| -> Result<PhaseState> {
        let c = s.chart;
        let k1x = s.v.clone();
        let k1v = accel(c, &s.x, &s.v)?;
        let (x2, v2) = (axpy(&s.x, 0.5 * h, &k1x), axpy(&s.v, 0.5 * h, &k1v));
        let k2v = accel(c, &x2, &v2)?;
        let (x3, v3) = (axpy(&s.x, 0.5 * h, &v2), axpy(&s.v, 0.5 * h, &k2v));
        let k3v = accel(c, &x3, &v3)?;
        let (x4, v4) = (axpy(&s.x, h, &v3), axpy(&s.v, h, &k3v));
        let k4v = accel(c, &x4, &v4)?;
        let x = (0..n)
            .map(|i| s.x[i] + h / 6.0 * (k1x[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]))
            .collect();
        let v = (0..n)
            .map(|i| s.v[i] + h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]))
            .collect();
        Ok(PhaseState { chart: c, x, v })
    };
    let rechart = |s: &PhaseState| -> Option<PhaseState> {
        let mut best: Option<(f64, PhaseState)> = None;
        for target in 0..atlas.charts().len() {
            if target == s.chart {
                continue;
            }
            let Ok(x) = atlas.change_coordinates(s.chart, target, &s.x) else { continue };
            let Ok(jac) = atlas.jacobian(s.chart, target, &s.x) else { continue };
            let depth = depth_in(&atlas.charts()[target], &x);
            if best.as_ref().is_none_or(|(d, _)| depth > *d) {
                let v = push_forward(&jac, &s.v);
                best = Some((depth, PhaseState { chart: target, x, v }));
            }
        }
        best.map(|(_, s)| s)
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(t0);
    states.push(PhaseState { chart, x: x0.to_vec(), v: v0.to_vec() });
    for k in 1..=steps {
        let current = states.last().expect("non-empty").clone();
        let inside = |s: &PhaseState| atlas.charts()[s.chart].contains(&s.x);
        let next = match step(&current) {
            Ok(s) if inside(&s) => s,
            _ => {
                let t = times.last().copied().unwrap_or(t0);
                let moved =
                    rechart(&current).ok_or(Error::ChartExit { chart: current.chart, t })?;
                let s = step(&moved)?;
                if !inside(&s) {
                    return Err(Error::ChartExit { chart: moved.chart, t });
                }
                s
            }
        };
        times.push(if k == steps { t1 } else { t0 + k as f64 * h });
        states.push(next);
    }
    Ok(Trajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::{parse, Constants};
    use proptest::prelude::*;

    fn euclid(n: usize) -> Arc<Atlas> {
        Arc::new(Atlas::euclidean(n, Constants::new()).unwrap())
    }

    fn lag(n: usize, src: &str) -> GaugeClassLagrangian {
        GaugeClassLagrangian::new(euclid(n), vec![parse(src).unwrap()]).unwrap()
    }

    fn q(x: &[f64], v: &[f64], a: &[f64]) -> SecondOrderPoint {
        SecondOrderPoint { x: x.to_vec(), v: v.to_vec(), a: a.to_vec() }
    }

    #[test]
    fn free_particle_has_zero_covector_on_straight_lines() {
        let l = lag(2, "0.5*(v1^2+v2^2)");
        let e = l.euler_lagrange(&q(&[0.3, -0.2], &[1.0, 2.0], &[0.0, 0.0]), 0).unwrap();
        assert_eq!(e.p, vec![0.0, 0.0]);
    }

    #[test]
    fn uniform_field_hand_formula() {
        // E = -1 - a1.
        let l = lag(1, "0.5*v1^2 - x1");
        assert_eq!(l.euler_lagrange(&q(&[0.7], &[-0.4], &[-1.0]), 0).unwrap().p, vec![0.0]);
        assert_eq!(l.euler_lagrange(&q(&[0.7], &[-0.4], &[0.0]), 0).unwrap().p, vec![-1.0]);
    }

    #[test]
    fn legendre_examples() {
        let l = lag(2, "0.5*(v1^2+v2^2)");
        assert_eq!(l.legendre(&[0.1, 0.2], &[0.3, -0.4], 0).unwrap().p, vec![0.3, -0.4]);
        // Minimal coupling with A = (sin x2, x1^2): p = v + A.
        let l = lag(2, "0.5*(v1^2+v2^2) + sin(x2)*v1 + x1^2*v2");
        let p = l.legendre(&[0.5, 0.25], &[0.3, -0.4], 0).unwrap().p;
        assert!((p[0] - (0.3 + 0.25f64.sin())).abs() < 1e-15);
        assert!((p[1] - (-0.4 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn solve_accelerations_examples() {
        let l = lag(2, "0.5*(v1^2+v2^2)");
        assert_eq!(l.solve_accelerations(&[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], 0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(l.solve_accelerations(&[0.0, 0.0], &[1.0, 1.0], &[1.0, 0.0], 0).unwrap(), vec![-1.0, 0.0]);
        // Constant B = e3, A = B x x / 2: a = v x B.
        let l = lag(3, "0.5*(v1^2+v2^2+v3^2) + 0.5*(x1*v2 - x2*v1)");
        let v = [0.3, -0.7, 0.2];
        let a = l.solve_accelerations(&[0.1, 0.2, 0.3], &v, &[0.0; 3], 0).unwrap();
        let lorentz = [v[1], -v[0], 0.0];
        for i in 0..3 {
            assert!((a[i] - lorentz[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_lagrangian_is_rejected() {
        let l = lag(2, "0.5*v1^2 + x2*v2");
        assert!(matches!(
            l.solve_accelerations(&[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], 0),
            Err(Error::SingularLagrangian { .. })
        ));
    }

    #[test]
    fn gauge_shift_is_invisible_to_euler_lagrange() {
        let atlas = euclid(2);
        let l = lag(2, "0.5*(v1^2+v2^2) - cos(x1)*x2");
        let chi = GaugeFunction::new(&atlas, vec![parse("sin(x1)*cos(x2)").unwrap()]).unwrap();
        let shifted = l.with_gauge_shift(&chi);
        let pt = q(&[0.4, -0.3], &[0.9, 0.2], &[-0.5, 0.7]);
        let e0 = l.euler_lagrange(&pt, 0).unwrap().p;
        let e1 = shifted.euler_lagrange(&pt, 0).unwrap().p;
        for i in 0..2 {
            assert!((e0[i] - e1[i]).abs() <= 1e-12);
        }
        let p0 = l.legendre(&pt.x, &pt.v, 0).unwrap().p;
        let p1 = shifted.legendre(&pt.x, &pt.v, 0).unwrap().p;
        let dchi = chi.gradient(0, &pt.x).unwrap();
        for i in 0..2 {
            assert!((p1[i] - p0[i] - dchi[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn free_particle_trajectory_is_exact() {
        let l = lag(1, "0.5*v1^2");
        let tr = integrate_trajectory(&l, &[0.0], &[1.0], 0, 0.0, 1.0, 100, None).unwrap();
        assert_eq!(tr.times.len(), 101);
        assert!((tr.states[100].x[0] - 1.0).abs() <= 1e-13);
    }

    #[test]
    fn uniform_field_trajectory_matches_parabola() {
        let l = lag(1, "0.5*v1^2 - x1");
        let (x0, v0) = (0.3, 1.2);
        let tr = integrate_trajectory(&l, &[x0], &[v0], 0, 0.0, 1.0, 100, None).unwrap();
        for (t, s) in tr.times.iter().zip(&tr.states) {
            assert!((s.x[0] - (x0 + v0 * t - 0.5 * t * t)).abs() <= 1e-10);
        }
    }

    #[test]
    fn forcing_enters_right_hand_side() {
        // E = -a = f = 2 gives a = -2.
        let atlas = euclid(1);
        let l = lag(1, "0.5*v1^2");
        let f = Forcing::new(&atlas, vec![parse("2").unwrap()]).unwrap();
        let tr = integrate_trajectory(&l, &[0.0], &[0.0], 0, 0.0, 1.0, 10, Some(&f)).unwrap();
        assert!((tr.states[10].x[0] + 1.0).abs() < 1e-13);
    }

    #[test]
    fn trajectory_switches_charts_on_the_circle() {
        let atlas = Arc::new(Atlas::circle(&parse("0.2*sin(x1)").unwrap(), None, Constants::new()).unwrap());
        let l = GaugeClassLagrangian::new(
            atlas.clone(),
            vec![parse("0.5*v1^2 + 0.2*cos(x1)*v1").unwrap(), parse("0.5*v1^2").unwrap()],
        )
        .unwrap();
        l.validate(32, 1e-10).unwrap();
        // Uniform rotation once around: leaves chart 0 through pi.
        let tr = integrate_trajectory(&l, &[0.0], &[1.0], 0, 0.0, 7.0, 700, None).unwrap();
        let schedule = tr.chart_schedule();
        assert!(schedule.len() >= 2, "{schedule:?}");
        let last = tr.states.last().unwrap();
        let angle = if last.chart == 1 { last.x[0] } else { last.x[0] + 2.0 * std::f64::consts::PI };
        assert!((angle - 7.0).abs() < 1e-9, "{last:?}");
    }

    #[test]
    fn momentum_rechart_applies_transition_differential() {
        let atlas = Arc::new(Atlas::circle(&parse("0.2*sin(x1)").unwrap(), None, Constants::new()).unwrap());
        let l = GaugeClassLagrangian::new(
            atlas.clone(),
            vec![parse("0.5*v1^2 + 0.2*cos(x1)*v1").unwrap(), parse("0.5*v1^2").unwrap()],
        )
        .unwrap();
        let p0 = l.legendre(&[-1.0], &[0.4], 0).unwrap();
        let p1 = l.legendre(&[-1.0 + 2.0 * std::f64::consts::PI], &[0.4], 1).unwrap();
        let moved = p0.to_chart(1, &atlas).unwrap();
        assert!((moved.p[0] - p1.p[0]).abs() < 1e-12);
    }

    #[test]
    fn trajectory_input_errors() {
        let l = lag(1, "0.5*v1^2");
        assert!(matches!(
            integrate_trajectory(&l, &[0.0], &[1.0], 0, 0.0, 1.0, 0, None),
            Err(Error::InvalidInput(_))
        ));
    }

    proptest! {
        #[test]
        fn euler_lagrange_ignores_random_gauge_terms(
            c in prop::array::uniform4(-2.0f64..2.0),
            x in prop::array::uniform2(-1.0f64..1.0),
            v in prop::array::uniform2(-1.0f64..1.0),
            a in prop::array::uniform2(-1.0f64..1.0),
        ) {
            let atlas = euclid(2);
            let l = lag(2, "0.5*(v1^2+v2^2) + 0.5*(x1*v2 - x2*v1) - x1^2*x2");
            let src = format!("{}*x1^3 + {}*x1*x2^2 + {}*sin({}*x2)", c[0], c[1], c[2], c[3]);
            let chi = GaugeFunction::new(&atlas, vec![parse(&src).unwrap()]).unwrap();
            let pt = q(&x, &v, &a);
            let e0 = l.euler_lagrange(&pt, 0).unwrap().p;
            let e1 = l.with_gauge_shift(&chi).euler_lagrange(&pt, 0).unwrap().p;
            for i in 0..2 {
                prop_assert!((e0[i] - e1[i]).abs() <= 1e-9);
            }
        }
    }
}
