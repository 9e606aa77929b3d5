//! Charted manifolds carrying a bundle of affine values.
//!
//! Each chart trivializes the bundle, so a fiber point is a real number per
//! chart. On an overlap the trivializations differ by the transition function
//! `g_ij`: a point with coordinate `z_j` in chart `j` has coordinate
//! `z_i = z_j + g_ij(x_i)` in chart `i`, where `x_i` are chart-`i` coordinates
//! of the base point.

use std::collections::BTreeMap;

use crate::affine::{AffineScalar, FiberPoint};
use crate::autodiff::{self, Hyperdual};
use crate::error::{Error, Result};
use crate::exprlang::{as_strs, coordinate_names, Ast, Constants, EvalError, Expr, ExprError};

/// Default number of quasi-random samples per overlap.
pub const DEFAULT_OVERLAP_SAMPLES: usize = 32;

/// Coordinate box of a chart; membership is strict on both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Chart {
    pub fn unbounded(dim: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lower.len()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&c, (&lo, &hi))| c > lo && c < hi)
    }
}

/// One connected piece of the overlap of charts `from` and `to`, described in
/// `from` coordinates.
#[derive(Clone, Debug)]
pub struct OverlapPiece {
    pub region: Chart,
    /// `to` coordinates as functions of `x1..xn` in `from` coordinates.
    pub coord_change: Vec<Expr>,
    /// `g_{from,to}` in `from` coordinates.
    pub gauge: Expr,
}

#[derive(Clone, Debug)]
pub struct Atlas {
    dim: usize,
    charts: Vec<Chart>,
    transitions: BTreeMap<(usize, usize), Vec<OverlapPiece>>,
    constants: Constants,
}

/// Worst antisymmetry and cocycle defects observed on the sampled overlaps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntegrityReport {
    pub antisymmetry: f64,
    pub antisymmetry_at: Option<(usize, usize, Vec<f64>)>,
    pub cocycle: f64,
    pub cocycle_at: Option<(usize, usize, usize, Vec<f64>)>,
    pub samples: usize,
}

impl Atlas {
    pub fn new(
        dim: usize,
        charts: Vec<Chart>,
        transitions: BTreeMap<(usize, usize), Vec<OverlapPiece>>,
        constants: Constants,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if charts.is_empty() {
            return Err(Error::InvalidInput("atlas needs at least one chart".into()));
        }
        for (i, c) in charts.iter().enumerate() {
            if c.lower.len() != dim || c.upper.len() != dim {
                return Err(Error::InvalidInput(format!("chart {i} box has wrong dimension")));
            }
        }
        for (&(i, j), pieces) in &transitions {
            if i == j || i >= charts.len() || j >= charts.len() {
                return Err(Error::InvalidInput(format!("bad transition index ({i}, {j})")));
            }
            for p in pieces {
                if p.coord_change.len() != dim || p.region.lower.len() != dim {
                    return Err(Error::InvalidInput(format!(
                        "transition ({i}, {j}) has wrong dimension"
                    )));
                }
            }
        }
        Ok(Self { dim, charts, transitions, constants })
    }

    /// `R^n` covered by a single unbounded chart.
    pub fn euclidean(dim: usize, constants: Constants) -> Result<Self> {
        Self::new(dim, vec![Chart::unbounded(dim)], BTreeMap::new(), constants)
    }

    /// The circle covered by two angle charts: chart 0 is `(-pi, pi)`, chart 1
    /// is `(0, 2 pi)`. The overlap has an upper piece where the angles agree and
    /// a lower piece where they differ by `2 pi`. `g01` is the gauge transition
    /// in chart-0 coordinates; `g10` defaults to `-g01` expressed in chart-1
    /// coordinates.
    pub fn circle(g01: &Ast, g10: Option<&Ast>, constants: Constants) -> Result<Self, ExprError> {
        use std::f64::consts::PI;
        let x = ["x1"];
        let compile = |ast: Ast| Expr::compile(ast, &x, &constants);
        let var = Ast::Var("x1".into());
        let shift = |by: f64| {
            if by >= 0.0 {
                var.clone() + Ast::Number(by)
            } else {
                var.clone() + -Ast::Number(-by)
            }
        };
        let g10_on = |back: Ast| match g10 {
            Some(g) => g.clone(),
            None => -g01.substitute("x1", &back),
        };
        let upper = Chart { lower: vec![0.0], upper: vec![PI] };
        let t01 = vec![
            OverlapPiece {
                region: upper.clone(),
                coord_change: vec![compile(var.clone())?],
                gauge: compile(g01.clone())?,
            },
            OverlapPiece {
                region: Chart { lower: vec![-PI], upper: vec![0.0] },
                coord_change: vec![compile(shift(2.0 * PI))?],
                gauge: compile(g01.clone())?,
            },
        ];
        let t10 = vec![
            OverlapPiece {
                region: upper,
                coord_change: vec![compile(var.clone())?],
                gauge: compile(g10_on(var.clone()))?,
            },
            OverlapPiece {
                region: Chart { lower: vec![PI], upper: vec![2.0 * PI] },
                coord_change: vec![compile(shift(-2.0 * PI))?],
                gauge: compile(g10_on(shift(-2.0 * PI)))?,
            },
        ];
        let charts = vec![
            Chart { lower: vec![-PI], upper: vec![PI] },
            Chart { lower: vec![0.0], upper: vec![2.0 * PI] },
        ];
        let transitions = BTreeMap::from([((0, 1), t01), ((1, 0), t10)]);
        Ok(Self::new(1, charts, transitions, constants).expect("circle atlas is well formed"))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn chart(&self, id: usize) -> Result<&Chart> {
        self.charts
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("no chart with id {id}")))
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    /// Ordered chart pairs that have a stored transition.
    pub fn overlapping_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.transitions.keys().copied()
    }

    pub fn has_transition(&self, from: usize, to: usize) -> bool {
        self.transitions.contains_key(&(from, to))
    }

    /// Compiles a per-chart scalar over `x1..xn` against this atlas' constants.
    pub fn compile_coordinate_expr(&self, ast: Ast) -> Result<Expr, EvalError> {
        let names = coordinate_names(self.dim);
        Expr::compile(ast, &as_strs(&names), &self.constants)
    }

    pub fn check_in_chart(&self, chart: usize, x: &[f64]) -> Result<()> {
        if self.chart(chart)?.contains(x) {
            Ok(())
        } else {
            Err(Error::ChartSchedule(format!("point {x:?} is outside chart {chart}")))
        }
    }

    fn piece(&self, from: usize, to: usize, x: &[f64]) -> Result<&OverlapPiece> {
        let disjoint = || Error::ChartDisjoint { from, to, base: x.to_vec() };
        let pieces = self.transitions.get(&(from, to)).ok_or_else(disjoint)?;
        if !self.chart(from)?.contains(x) {
            return Err(disjoint());
        }
        pieces.iter().find(|p| p.region.contains(x)).ok_or_else(disjoint)
    }

    /// Coordinates in chart `to` of the point with coordinates `x` in chart `from`.
    pub fn change_coordinates(&self, from: usize, to: usize, x: &[f64]) -> Result<Vec<f64>> {
        if from == to {
            return Ok(x.to_vec());
        }
        let piece = self.piece(from, to, x)?;
        let y = piece.coord_change.iter().map(|e| e.eval(x)).collect::<Result<Vec<_>, _>>()?;
        if !self.chart(to)?.contains(&y) {
            return Err(Error::ChartDisjoint { from, to, base: x.to_vec() });
        }
        Ok(y)
    }

    /// `g_{from,to}(x)` with `x` in `from` coordinates; zero when `from == to`.
    pub fn transition_gauge(&self, from: usize, to: usize, x: &[f64]) -> Result<f64> {
        if from == to {
            return Ok(0.0);
        }
        Ok(self.piece(from, to, x)?.gauge.eval(x)?)
    }

    /// Gradient of `g_{from,to}` at `x` (in `from` coordinates).
    pub fn transition_gauge_gradient(&self, from: usize, to: usize, x: &[f64]) -> Result<Vec<f64>> {
        if from == to {
            return Ok(vec![0.0; self.dim]);
        }
        let piece = self.piece(from, to, x)?;
        Ok(autodiff::gradient(|z: &[Hyperdual]| piece.gauge.eval(z), x)?)
    }

    /// Jacobian `J[l][k] = d y_l / d x_k` of the coordinate change at `x`.
    pub fn jacobian(&self, from: usize, to: usize, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if from == to {
            return Ok(identity(self.dim));
        }
        let piece = self.piece(from, to, x)?;
        piece
            .coord_change
            .iter()
            .map(|e| autodiff::gradient(|z: &[Hyperdual]| e.eval(z), x).map_err(Error::from))
            .collect()
    }

    /// Quasi-random points in the overlap of `from` and `to` (in `from`
    /// coordinates), spread evenly over the overlap pieces.
    pub fn overlap_samples(&self, from: usize, to: usize, count: usize) -> Vec<Vec<f64>> {
        let Some(pieces) = self.transitions.get(&(from, to)) else {
            return Vec::new();
        };
        let own = &self.charts[from];
        (0..count)
            .map(|k| {
                let piece = &pieces[k % pieces.len()];
                let index = k / pieces.len() + 1;
                (0..self.dim)
                    .map(|d| {
                        let lo = piece.region.lower[d].max(own.lower[d]).max(-SAMPLE_CLAMP);
                        let hi = piece.region.upper[d].min(own.upper[d]).min(SAMPLE_CLAMP);
                        lo + (hi - lo) * halton(index, PRIMES[d % PRIMES.len()])
                    })
                    .collect()
            })
            .collect()
    }

    /// Measures antisymmetry `g_ij(x) + g_ji(x') = 0` and the cocycle condition
    /// `g_ij + g_jk + g_ki = 0` on sampled overlaps.
    pub fn integrity(&self, samples: usize) -> Result<IntegrityReport> {
        let mut report = IntegrityReport { samples, ..Default::default() };
        for (i, j) in self.overlapping_pairs() {
            for x in self.overlap_samples(i, j, samples) {
                let y = self.change_coordinates(i, j, &x)?;
                let defect =
                    (self.transition_gauge(i, j, &x)? + self.transition_gauge(j, i, &y)?).abs();
                if defect > report.antisymmetry || report.antisymmetry_at.is_none() {
                    report.antisymmetry = report.antisymmetry.max(defect);
                    report.antisymmetry_at = Some((i, j, x.clone()));
                }
                for k in 0..self.charts.len() {
                    if k == i || k == j || !self.has_transition(j, k) {
                        continue;
                    }
                    // Not every point of U_i n U_j lies in U_k.
                    let Ok(z) = self.change_coordinates(j, k, &y) else { continue };
                    let Ok(back) = self.transition_gauge(k, i, &z) else { continue };
                    let defect = (self.transition_gauge(i, j, &x)?
                        + self.transition_gauge(j, k, &y)?
                        + back)
                        .abs();
                    if defect > report.cocycle || report.cocycle_at.is_none() {
                        report.cocycle = report.cocycle.max(defect);
                        report.cocycle_at = Some((i, j, k, x.clone()));
                    }
                }
            }
        }
        Ok(report)
    }

    /// Fails with [`Error::Validation`] when a sampled defect exceeds `tol`.
    pub fn validate(&self, samples: usize, tol: f64) -> Result<IntegrityReport> {
        let report = self.integrity(samples)?;
        if report.antisymmetry > tol {
            let (i, j, x) = report.antisymmetry_at.clone().unwrap_or_default();
            return Err(Error::Validation {
                invariant: format!("cocycle g_{i}{j} + g_{j}{i} = 0"),
                location: format!("x = {x:?} in chart {i}"),
                defect: report.antisymmetry,
            });
        }
        if report.cocycle > tol {
            let (i, j, k, x) = report.cocycle_at.clone().unwrap_or_default();
            return Err(Error::Validation {
                invariant: format!("cocycle g_{i}{j} + g_{j}{k} + g_{k}{i} = 0"),
                location: format!("x = {x:?} in chart {i}"),
                defect: report.cocycle,
            });
        }
        Ok(report)
    }
}

const SAMPLE_CLAMP: f64 = 10.0;
const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base`; lies in (0, 1) for `index >= 1`.
pub(crate) fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Quasi-random point in `[-1, 1]^dims` using Halton bases from `first_prime` on.
pub(crate) fn halton_point(index: usize, dims: usize, first_prime: usize) -> Vec<f64> {
    (0..dims)
        .map(|d| 2.0 * halton(index, PRIMES[(first_prime + d) % PRIMES.len()]) - 1.0)
        .collect()
}

pub(crate) fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// `J^T p`, pulling a covector in the target chart back to the source chart.
pub(crate) fn pull_back_covector(jac: &[Vec<f64>], p: &[f64]) -> Vec<f64> {
    let n = jac.first().map_or(0, Vec::len);
    (0..n).map(|k| jac.iter().zip(p).map(|(row, pl)| row[k] * pl).sum()).collect()
}

/// `J v`, pushing a tangent vector forward to the target chart.
pub(crate) fn push_forward(jac: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    jac.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Per-chart scalar fields: sections and gauge functions
// ---------------------------------------------------------------------------

fn compile_per_chart(atlas: &Atlas, reps: Vec<Ast>) -> Result<Vec<Expr>> {
    let count = atlas.charts().len();
    let reps = match reps.len() {
        1 => vec![reps[0].clone(); count],
        n if n == count => reps,
        n => {
            return Err(Error::InvalidInput(format!(
                "expected 1 or {count} chart representatives, got {n}"
            )))
        }
    };
    reps.into_iter()
        .map(|a| atlas.compile_coordinate_expr(a).map_err(Error::from))
        .collect()
}

/// A real function on the manifold given by compatible chart representatives
/// `f_i(x) = f_j(x'(x))`.
#[derive(Clone, Debug)]
pub struct GaugeFunction {
    reps: Vec<Expr>,
}

impl GaugeFunction {
    /// One representative per chart, or a single one shared by every chart.
    pub fn new(atlas: &Atlas, reps: Vec<Ast>) -> Result<Self> {
        Ok(Self { reps: compile_per_chart(atlas, reps)? })
    }

    pub fn parse(atlas: &Atlas, src: &str) -> Result<Self, ExprError> {
        let ast = crate::exprlang::parse(src)?;
        Self::new(atlas, vec![ast]).map_err(|e| match e {
            Error::Eval(ev) => ExprError::Eval(ev),
            other => ExprError::Eval(EvalError::Domain(other.to_string())),
        })
    }

    pub fn representative(&self, chart: usize) -> &Expr {
        &self.reps[chart]
    }

    pub fn eval(&self, chart: usize, x: &[f64]) -> Result<f64> {
        Ok(self.reps[chart].eval(x)?)
    }

    pub fn gradient(&self, chart: usize, x: &[f64]) -> Result<Vec<f64>> {
        let e = &self.reps[chart];
        Ok(autodiff::gradient(|z: &[Hyperdual]| e.eval(z), x)?)
    }

    /// Max `|f_i(x) - f_j(x')|` over sampled overlaps.
    pub fn compatibility_defect(&self, atlas: &Atlas, samples: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, j) in atlas.overlapping_pairs() {
            for x in atlas.overlap_samples(i, j, samples) {
                let y = atlas.change_coordinates(i, j, &x)?;
                worst = worst.max((self.eval(i, &x)? - self.eval(j, &y)?).abs());
            }
        }
        Ok(worst)
    }
}

/// A section of the bundle of affine values, one representative per chart.
/// Compatibility: `phi_i(x) - phi_j(x'(x)) = g_ij(x)`.
#[derive(Clone, Debug)]
pub struct AVSection {
    reps: Vec<Expr>,
}

impl AVSection {
    pub fn new(atlas: &Atlas, reps: Vec<Ast>) -> Result<Self> {
        Ok(Self { reps: compile_per_chart(atlas, reps)? })
    }

    pub fn representative(&self, chart: usize) -> &Expr {
        &self.reps[chart]
    }

    pub fn value(&self, atlas: &Atlas, chart: usize, x: &[f64]) -> Result<FiberPoint> {
        FiberPoint::new(atlas, chart, x.to_vec(), self.reps[chart].eval(x)?)
    }

    pub fn compatibility_defect(&self, atlas: &Atlas, samples: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, j) in atlas.overlapping_pairs() {
            for x in atlas.overlap_samples(i, j, samples) {
                let y = atlas.change_coordinates(i, j, &x)?;
                let lhs = self.reps[i].eval(&x)? - self.reps[j].eval(&y)?;
                worst = worst.max((lhs - atlas.transition_gauge(i, j, &x)?).abs());
            }
        }
        Ok(worst)
    }

    /// `phi + f`, chart by chart.
    pub fn gauge_transform(&self, atlas: &Atlas, f: &GaugeFunction) -> Result<Self> {
        let reps = self
            .reps
            .iter()
            .zip(&f.reps)
            .map(|(p, g)| atlas.compile_coordinate_expr(p.ast().clone() + g.ast().clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { reps })
    }
}

/// `phi -> phi + f`.
pub fn gauge_transform_section(atlas: &Atlas, phi: &AVSection, f: &GaugeFunction) -> Result<AVSection> {
    phi.gauge_transform(atlas, f)
}

// ---------------------------------------------------------------------------
// Affine 1-forms
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum OneFormRep {
    Components(Vec<Expr>),
    /// The differential of a chart representative, evaluated by autodiff.
    Differential(Expr),
}

/// A section of the phase bundle: per chart an ordinary 1-form `theta_i` with
/// `theta_i - J^T theta_j(x') = d g_ij` on overlaps.
#[derive(Clone, Debug)]
pub struct AffineOneForm {
    reps: Vec<OneFormRep>,
}

impl AffineOneForm {
    /// Explicit components, either one list per chart or a single shared list.
    pub fn from_components(atlas: &Atlas, reps: Vec<Vec<Ast>>) -> Result<Self> {
        let count = atlas.charts().len();
        let reps = match reps.len() {
            1 => vec![reps[0].clone(); count],
            n if n == count => reps,
            n => {
                return Err(Error::InvalidInput(format!(
                    "expected 1 or {count} chart representatives, got {n}"
                )))
            }
        };
        let reps = reps
            .into_iter()
            .map(|comps| {
                if comps.len() != atlas.dim() {
                    return Err(Error::InvalidInput("1-form has wrong number of components".into()));
                }
                comps
                    .into_iter()
                    .map(|a| atlas.compile_coordinate_expr(a).map_err(Error::from))
                    .collect::<Result<Vec<_>>>()
                    .map(OneFormRep::Components)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { reps })
    }

    pub fn eval(&self, chart: usize, x: &[f64]) -> Result<Vec<f64>> {
        match &self.reps[chart] {
            OneFormRep::Components(cs) => Ok(cs.iter().map(|c| c.eval(x)).collect::<Result<_, _>>()?),
            OneFormRep::Differential(e) => Ok(autodiff::gradient(|z: &[Hyperdual]| e.eval(z), x)?),
        }
    }

    /// `<theta_chart(x), v>`.
    pub fn pair(&self, chart: usize, x: &[f64], v: &[f64]) -> Result<f64> {
        Ok(self.eval(chart, x)?.iter().zip(v).map(|(a, b)| a * b).sum())
    }

    /// Max component defect of `theta_i - J^T theta_j(x') - d g_ij` on overlaps.
    pub fn compatibility_defect(&self, atlas: &Atlas, samples: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, j) in atlas.overlapping_pairs() {
            for x in atlas.overlap_samples(i, j, samples) {
                let y = atlas.change_coordinates(i, j, &x)?;
                let pulled = pull_back_covector(&atlas.jacobian(i, j, &x)?, &self.eval(j, &y)?);
                let dg = atlas.transition_gauge_gradient(i, j, &x)?;
                let expected: Vec<f64> = pulled.iter().zip(&dg).map(|(a, b)| a + b).collect();
                worst = worst.max(max_abs_diff(&self.eval(i, &x)?, &expected));
            }
        }
        Ok(worst)
    }

    /// `sigma - sigma'` must glue to an ordinary 1-form; returns the largest
    /// sampled gluing defect.
    pub fn difference_defect(&self, other: &AffineOneForm, atlas: &Atlas, samples: usize) -> Result<f64> {
        let diff = |chart: usize, x: &[f64]| -> Result<Vec<f64>> {
            let a = self.eval(chart, x)?;
            let b = other.eval(chart, x)?;
            Ok(a.iter().zip(&b).map(|(p, q)| p - q).collect())
        };
        let mut worst: f64 = 0.0;
        for (i, j) in atlas.overlapping_pairs() {
            for x in atlas.overlap_samples(i, j, samples) {
                let y = atlas.change_coordinates(i, j, &x)?;
                let pulled = pull_back_covector(&atlas.jacobian(i, j, &x)?, &diff(j, &y)?);
                worst = worst.max(max_abs_diff(&diff(i, &x)?, &pulled));
            }
        }
        Ok(worst)
    }
}

/// `d phi`: per chart, the ordinary differential of the representative.
pub fn affine_differential(phi: &AVSection) -> AffineOneForm {
    AffineOneForm { reps: phi.reps.iter().cloned().map(OneFormRep::Differential).collect() }
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

/// One piece of a curve, represented in a single chart.
#[derive(Clone, Debug)]
pub struct CurveSegment {
    pub chart: usize,
    pub t0: f64,
    pub t1: f64,
    /// Chart coordinates as functions of `t`.
    pub coords: Vec<Expr>,
}

/// Position, velocity and acceleration of a curve at one parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveJet {
    pub chart: usize,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

/// A curve `[a, b] -> M` with an explicit chart schedule.
#[derive(Clone, Debug)]
pub struct CurveSpec {
    segments: Vec<CurveSegment>,
}

const JUNCTION_TOL: f64 = 1e-12;

impl CurveSpec {
    /// Builds a curve from `(chart, t0, t1, coordinate expressions in t)`
    /// pieces listed in parameter order.
    pub fn new(atlas: &Atlas, pieces: Vec<(usize, f64, f64, Vec<Ast>)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::ChartSchedule("curve has no segments".into()));
        }
        let mut segments = Vec::with_capacity(pieces.len());
        for (chart, t0, t1, coords) in pieces {
            atlas.chart(chart)?;
            if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
                return Err(Error::ChartSchedule(format!("empty parameter interval [{t0}, {t1}]")));
            }
            if coords.len() != atlas.dim() {
                return Err(Error::InvalidInput(format!(
                    "curve has {} coordinates, manifold has dimension {}",
                    coords.len(),
                    atlas.dim()
                )));
            }
            let coords = coords
                .into_iter()
                .map(|a| Expr::compile(a, &["t"], atlas.constants()))
                .collect::<Result<Vec<_>, _>>()?;
            segments.push(CurveSegment { chart, t0, t1, coords });
        }
        let curve = Self { segments };
        for w in curve.segments.windows(2) {
            if w[0].t1 != w[1].t0 {
                return Err(Error::ChartSchedule(format!(
                    "segments [{}, {}] and [{}, {}] are not contiguous",
                    w[0].t0, w[0].t1, w[1].t0, w[1].t1
                )));
            }
            let t = w[0].t1;
            let left = curve.position(&w[0], t)?;
            let right = curve.position(&w[1], t)?;
            let mapped = atlas.change_coordinates(w[0].chart, w[1].chart, &left).map_err(|_| {
                Error::ChartSchedule(format!(
                    "junction at t = {t} is not in the overlap of charts {} and {}",
                    w[0].chart, w[1].chart
                ))
            })?;
            let scale = mapped.iter().fold(1.0f64, |m, c| m.max(c.abs()));
            if max_abs_diff(&mapped, &right) > JUNCTION_TOL * scale {
                return Err(Error::ChartSchedule(format!(
                    "segments disagree at junction t = {t}: {mapped:?} vs {right:?}"
                )));
            }
        }
        Ok(curve)
    }

    /// A curve represented in one chart throughout.
    pub fn single(atlas: &Atlas, chart: usize, t0: f64, t1: f64, coords: Vec<Ast>) -> Result<Self> {
        Self::new(atlas, vec![(chart, t0, t1, coords)])
    }

    pub fn segments(&self) -> &[CurveSegment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].t0
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].t1
    }

    pub fn first_chart(&self) -> usize {
        self.segments[0].chart
    }

    pub fn last_chart(&self) -> usize {
        self.segments[self.segments.len() - 1].chart
    }

    fn position(&self, seg: &CurveSegment, t: f64) -> Result<Vec<f64>> {
        Ok(seg.coords.iter().map(|c| c.eval(&[t])).collect::<Result<_, _>>()?)
    }

    /// Index of the segment representing `t`; junctions belong to the earlier segment.
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        self.segments
            .iter()
            .position(|s| t >= s.t0 && t <= s.t1)
            .ok_or_else(|| Error::ChartSchedule(format!("t = {t} is outside the curve's interval")))
    }

    /// Position, velocity and acceleration in the chart of segment `seg`,
    /// differentiated exactly in `t`.
    pub fn jet_in(&self, seg: usize, t: f64) -> Result<CurveJet> {
        let s = &self.segments[seg];
        let arg = [Hyperdual::lift_seed(t, 1.0, 1.0)];
        let mut jet = CurveJet { chart: s.chart, x: Vec::new(), v: Vec::new(), a: Vec::new() };
        for c in &s.coords {
            let h = c.eval(&arg)?;
            jet.x.push(h.val);
            jet.v.push(h.d1);
            jet.a.push(h.d12);
        }
        Ok(jet)
    }

    pub fn jet(&self, t: f64) -> Result<CurveJet> {
        self.jet_in(self.segment_index(t)?, t)
    }

    /// `gamma + s w`, where `w` lists displacement components (expressions in
    /// `t`) added in each segment's own chart coordinates.
    pub fn displaced(&self, atlas: &Atlas, w: &[Ast], s: f64) -> Result<Self> {
        if w.len() != atlas.dim() {
            return Err(Error::InvalidInput("displacement has wrong dimension".into()));
        }
        let scale = if s >= 0.0 { Ast::Number(s) } else { -Ast::Number(-s) };
        let pieces = self
            .segments
            .iter()
            .map(|seg| {
                let coords = seg
                    .coords
                    .iter()
                    .zip(w)
                    .map(|(c, wi)| c.ast().clone() + scale.clone() * wi.clone())
                    .collect();
                (seg.chart, seg.t0, seg.t1, coords)
            })
            .collect();
        Self::new(atlas, pieces)
    }
}

/// Number of panels given to one segment out of `total` for the whole curve.
pub(crate) fn panels_for(curve: &CurveSpec, seg: &CurveSegment, total: usize) -> usize {
    let frac = (seg.t1 - seg.t0) / (curve.end() - curve.start());
    ((total as f64 * frac).round() as usize).max(1)
}

/// Composite Simpson quadrature with `panels` panels (each with a midpoint node).
pub fn simpson<F>(mut f: F, t0: f64, t1: f64, panels: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let panels = panels.max(1);
    let h = (t1 - t0) / panels as f64;
    let mut ends = f(t0)? + f(t1)?;
    let mut mids = 0.0;
    for k in 0..panels {
        let left = t0 + k as f64 * h;
        mids += f(left + 0.5 * h)?;
        if k > 0 {
            ends += 2.0 * f(left)?;
        }
    }
    Ok(h / 6.0 * (ends + 4.0 * mids))
}

/// Integrates `integrand(chart, t, jet)` along the curve segment by segment and
/// assembles an affine scalar in `Z_{gamma(b)} (-) Z_{gamma(a)}`: the minus
/// anchor has value 0 in the first chart, the plus anchor carries the
/// accumulated value in the last chart, and each chart junction from `i` to `j`
/// re-expresses the running value through `z_j = z_i - g_ij`.
pub(crate) fn segmented_integral<F>(
    atlas: &Atlas,
    curve: &CurveSpec,
    panels: usize,
    mut integrand: F,
) -> Result<AffineScalar>
where
    F: FnMut(&CurveJet) -> Result<f64>,
{
    let mut total = 0.0;
    for (idx, seg) in curve.segments().iter().enumerate() {
        let n = panels_for(curve, seg, panels);
        total += simpson(
            |t| {
                let jet = curve.jet_in(idx, t)?;
                atlas.check_in_chart(seg.chart, &jet.x)?;
                integrand(&jet)
            },
            seg.t0,
            seg.t1,
            n,
        )?;
        if let Some(next) = curve.segments().get(idx + 1) {
            let x = curve.jet_in(idx, seg.t1)?.x;
            total -= atlas.transition_gauge(seg.chart, next.chart, &x)?;
        }
    }
    endpoint_scalar(atlas, curve, total)
}

pub(crate) fn endpoint_scalar(atlas: &Atlas, curve: &CurveSpec, value: f64) -> Result<AffineScalar> {
    let last = curve.segments().len() - 1;
    let end = curve.jet_in(last, curve.end())?;
    let start = curve.jet_in(0, curve.start())?;
    Ok(AffineScalar::new(
        FiberPoint::new(atlas, curve.last_chart(), end.x, value)?,
        FiberPoint::new(atlas, curve.first_chart(), start.x, 0.0)?,
    ))
}

/// The integrand `t -> <theta_chart(t)(gamma(t)), gamma'(t)>` of the affine
/// integral of `sigma` along `gamma`.
pub fn curve_pullback<'a>(
    sigma: &'a AffineOneForm,
    gamma: &'a CurveSpec,
    atlas: &'a Atlas,
) -> impl Fn(f64) -> Result<f64> + 'a {
    move |t| {
        let jet = gamma.jet(t)?;
        atlas.check_in_chart(jet.chart, &jet.x)?;
        sigma.pair(jet.chart, &jet.x, &jet.v)
    }
}

/// The affine integral of `sigma` along `gamma`, an element of
/// `Z_{gamma(b)} (-) Z_{gamma(a)}`.
pub fn affine_integral(
    sigma: &AffineOneForm,
    gamma: &CurveSpec,
    atlas: &Atlas,
    panels: usize,
) -> Result<AffineScalar> {
    segmented_integral(atlas, gamma, panels, |jet| sigma.pair(jet.chart, &jet.x, &jet.v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{affine_scalar_diff, box_minus};
    use crate::exprlang::parse;

    fn p(s: &str) -> Ast {
        parse(s).unwrap()
    }

    fn circle(g01: &str) -> Atlas {
        Atlas::circle(&p(g01), None, Constants::new()).unwrap()
    }

    #[test]
    fn halton_points_are_interior() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(3, 2), 0.75);
        assert!((1..100).all(|i| (0.0..1.0).contains(&halton(i, 3)) && halton(i, 3) > 0.0));
    }

    #[test]
    fn circle_atlas_is_consistent() {
        let atlas = circle("0.3*sin(x1) + 0.2");
        let report = atlas.validate(DEFAULT_OVERLAP_SAMPLES, 1e-12).unwrap();
        assert!(report.antisymmetry <= 1e-12);
        assert_eq!(atlas.change_coordinates(0, 1, &[-1.0]).unwrap()[0], -1.0 + 2.0 * std::f64::consts::PI);
        assert!(matches!(
            atlas.change_coordinates(0, 1, &[0.0]),
            Err(Error::ChartDisjoint { from: 0, to: 1, .. })
        ));
    }

    #[test]
    fn broken_antisymmetry_is_reported_with_its_size() {
        let atlas = Atlas::circle(&p("0.5"), Some(&p("-0.5 + 0.1")), Constants::new()).unwrap();
        match atlas.validate(DEFAULT_OVERLAP_SAMPLES, 1e-12) {
            Err(Error::Validation { defect, .. }) => assert!((defect - 0.1).abs() < 1e-12),
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn differential_of_constants_and_coordinates() {
        let atlas = Atlas::euclidean(2, Constants::new()).unwrap();
        let c = AVSection::new(&atlas, vec![p("4.2")]).unwrap();
        assert_eq!(affine_differential(&c).eval(0, &[0.3, 0.4]).unwrap(), vec![0.0, 0.0]);
        let x = AVSection::new(&atlas, vec![p("x1")]).unwrap();
        assert_eq!(affine_differential(&x).eval(0, &[0.3, 0.4]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn differential_on_circle_glues_with_transition() {
        let atlas = circle("0.7*sin(x1) + 0.4");
        // phi_0 - phi_1 = g_01 on both overlap pieces.
        let phi = AVSection::new(&atlas, vec![p("cos(x1) + 0.7*sin(x1) + 0.4"), p("cos(x1)")]).unwrap();
        assert!(phi.compatibility_defect(&atlas, 32).unwrap() <= 1e-12);
        let dphi = affine_differential(&phi);
        // Ten overlap points, checked by hand against d g_01 = 0.7 cos(x).
        for x in atlas.overlap_samples(0, 1, 10) {
            let y = atlas.change_coordinates(0, 1, &x).unwrap();
            let lhs = dphi.eval(0, &x).unwrap()[0] - dphi.eval(1, &y).unwrap()[0];
            assert!((lhs - 0.7 * x[0].cos()).abs() <= 1e-13);
        }
        assert!(dphi.compatibility_defect(&atlas, 32).unwrap() <= 1e-10);
    }

    #[test]
    fn difference_of_affine_forms_is_global() {
        let atlas = circle("0.7*sin(x1)");
        let a = affine_differential(
            &AVSection::new(&atlas, vec![p("sin(2*x1) + 0.7*sin(x1)"), p("sin(2*x1)")]).unwrap(),
        );
        let b = affine_differential(
            &AVSection::new(&atlas, vec![p("exp(cos(x1)) + 0.7*sin(x1)"), p("exp(cos(x1))")]).unwrap(),
        );
        assert!(a.difference_defect(&b, &atlas, 32).unwrap() <= 1e-12);
    }

    #[test]
    fn gauge_transform_of_section() {
        let atlas = Atlas::euclidean(2, Constants::new()).unwrap();
        let phi = AVSection::new(&atlas, vec![p("x1*x2 + sin(x2)")]).unwrap();
        let f = GaugeFunction::new(&atlas, vec![p("exp(-x1^2)*x2")]).unwrap();
        let zero = GaugeFunction::new(&atlas, vec![p("0")]).unwrap();
        let x = [0.3, -0.8];
        let same = phi.gauge_transform(&atlas, &zero).unwrap();
        assert_eq!(same.value(&atlas, 0, &x).unwrap().value, phi.value(&atlas, 0, &x).unwrap().value);

        let shifted = gauge_transform_section(&atlas, &phi, &f).unwrap();
        let d_new = affine_differential(&shifted).eval(0, &x).unwrap();
        let d_old = affine_differential(&phi).eval(0, &x).unwrap();
        let df = f.gradient(0, &x).unwrap();
        for k in 0..2 {
            assert!((d_new[k] - d_old[k] - df[k]).abs() <= 1e-13);
        }

        let minus_f = GaugeFunction::new(&atlas, vec![p("-(exp(-x1^2)*x2)")]).unwrap();
        let back = shifted.gauge_transform(&atlas, &minus_f).unwrap();
        let diff = back.value(&atlas, 0, &x).unwrap().value - phi.value(&atlas, 0, &x).unwrap().value;
        assert!(diff.abs() <= 1e-15);
    }

    #[test]
    fn pullback_of_zero_and_linear_forms() {
        let atlas = Atlas::euclidean(1, Constants::new()).unwrap();
        let gamma = CurveSpec::single(&atlas, 0, 0.0, 1.0, vec![p("t")]).unwrap();
        let zero = AffineOneForm::from_components(&atlas, vec![vec![p("0")]]).unwrap();
        let f = curve_pullback(&zero, &gamma, &atlas);
        assert_eq!(f(0.37).unwrap(), 0.0);

        let theta = AffineOneForm::from_components(&atlas, vec![vec![p("x1")]]).unwrap();
        let f = curve_pullback(&theta, &gamma, &atlas);
        assert_eq!(f(0.25).unwrap(), 0.25);
        let integral = affine_integral(&theta, &gamma, &atlas, 10).unwrap();
        assert!((integral.plus.value - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn exact_form_integrates_to_endpoint_difference_across_junction() {
        let atlas = circle("0.3*sin(x1) + 0.25");
        let phi = AVSection::new(&atlas, vec![p("sin(3*x1) + 0.3*sin(x1) + 0.25"), p("sin(3*x1)")])
            .unwrap();
        // Upper-piece junction at t = 2, lower-piece junction at t = 5.
        let gamma = CurveSpec::new(
            &atlas,
            vec![
                (0, 0.0, 2.0, vec![p("t - 1")]),
                (1, 2.0, 5.0, vec![p("t - 1")]),
                (0, 5.0, 6.0, vec![p("t - 1 - 2*pi")]),
            ],
        )
        .unwrap();
        let integral = affine_integral(&affine_differential(&phi), &gamma, &atlas, 1000).unwrap();
        let a = phi.value(&atlas, 0, &[-1.0]).unwrap();
        let b = phi.value(&atlas, 0, &[5.0 - 2.0 * std::f64::consts::PI]).unwrap();
        let gap = affine_scalar_diff(&integral, &box_minus(b, a), &atlas).unwrap();
        assert!(gap.abs() <= 1e-8, "gap {gap}");
    }

    #[test]
    fn curve_schedule_errors() {
        let atlas = circle("0");
        // Leaves chart 0 through pi.
        let gamma = CurveSpec::single(&atlas, 0, 0.0, 4.0, vec![p("t")]).unwrap();
        let theta = AffineOneForm::from_components(&atlas, vec![vec![p("1")]]).unwrap();
        assert!(matches!(affine_integral(&theta, &gamma, &atlas, 10), Err(Error::ChartSchedule(_))));
        assert!(matches!(curve_pullback(&theta, &gamma, &atlas)(3.5), Err(Error::ChartSchedule(_))));
        // Disagreeing junction.
        let bad = CurveSpec::new(&atlas, vec![(0, 0.0, 1.0, vec![p("t")]), (1, 1.0, 2.0, vec![p("t + 0.1")])]);
        assert!(matches!(bad, Err(Error::ChartSchedule(_))));
        // Gap in the schedule.
        let gap = CurveSpec::new(&atlas, vec![(0, 0.0, 1.0, vec![p("t")]), (1, 1.5, 2.0, vec![p("t")])]);
        assert!(matches!(gap, Err(Error::ChartSchedule(_))));
    }

    #[test]
    fn curve_jets_are_exact() {
        let atlas = Atlas::euclidean(2, Constants::new()).unwrap();
        let gamma = CurveSpec::single(&atlas, 0, 0.0, 1.0, vec![p("t^3"), p("sin(t)")]).unwrap();
        let jet = gamma.jet(0.5).unwrap();
        assert_eq!(jet.x[0], 0.125);
        assert_eq!(jet.v[0], 0.75);
        assert_eq!(jet.a[0], 3.0);
        assert!((jet.a[1] + 0.5f64.sin()).abs() <= 1e-16);
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = simpson(|t| Ok(t * t * t - 2.0 * t), 0.0, 2.0, 3).unwrap();
        assert!((v - 0.0).abs() <= 1e-14);
    }
}
