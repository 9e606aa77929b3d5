//! Points of fibers of a bundle of affine values and "affine numbers", the
//! formal differences `z1 (-) z2` of two such points.
//!
//! Nothing here has a canonical zero. An [`AffineScalar`] keeps its two anchor
//! points and is only ever compared with another scalar over the same pair of
//! base points, through [`affine_scalar_diff`].

use crate::error::{Error, Result};
use crate::geometry::Atlas;

const BASE_TOL: f64 = 1e-9;

/// A point of the fiber over `base`, written in the trivialization of `chart`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberPoint {
    pub chart: usize,
    pub base: Vec<f64>,
    pub value: f64,
}

impl FiberPoint {
    /// Fails unless `base` lies in the coordinate box of `chart`.
    pub fn new(atlas: &Atlas, chart: usize, base: Vec<f64>, value: f64) -> Result<Self> {
        if base.len() != atlas.dim() {
            return Err(Error::InvalidInput(format!(
                "base point has {} coordinates, atlas has dimension {}",
                base.len(),
                atlas.dim()
            )));
        }
        atlas.check_in_chart(chart, &base)?;
        Ok(Self { chart, base, value })
    }

    /// The same point written in the trivialization of `target`.
    pub fn to_chart(&self, target: usize, atlas: &Atlas) -> Result<Self> {
        if target == self.chart {
            return Ok(self.clone());
        }
        let base = atlas.change_coordinates(self.chart, target, &self.base)?;
        // z_target = z_self + g_{target,self}(base_target) = z_self - g_{self,target}(base_self)
        let value = self.value - atlas.transition_gauge(self.chart, target, &self.base)?;
        Ok(Self { chart: target, base, value })
    }
}

/// Translates the point along its fiber by `r`.
pub fn fiber_translate(z: &FiberPoint, r: f64) -> FiberPoint {
    FiberPoint { value: z.value + r, ..z.clone() }
}

/// `z1 - z2` for two points over the same base point, computed in the chart of `z1`.
pub fn fiber_diff(z1: &FiberPoint, z2: &FiberPoint, atlas: &Atlas) -> Result<f64> {
    let z2 = z2.to_chart(z1.chart, atlas)?;
    let scale = z1.base.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    let mismatch = z1
        .base
        .iter()
        .zip(&z2.base)
        .any(|(a, b)| (a - b).abs() > BASE_TOL * scale);
    if z1.base.len() != z2.base.len() || mismatch {
        return Err(Error::BaseMismatch(format!(
            "{:?} vs {:?} in chart {}",
            z1.base, z2.base, z1.chart
        )));
    }
    Ok(z1.value - z2.value)
}

/// An element of `Z_{m1} (-) Z_{m2}`, anchored by a representative pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineScalar {
    pub plus: FiberPoint,
    pub minus: FiberPoint,
}

impl AffineScalar {
    pub fn new(plus: FiberPoint, minus: FiberPoint) -> Self {
        Self { plus, minus }
    }

    /// Adds `r` to the class (through the plus slot).
    pub fn translate(&self, r: f64) -> Self {
        Self { plus: fiber_translate(&self.plus, r), minus: self.minus.clone() }
    }

    /// Real value of the class relative to the representative whose anchors
    /// both have value zero in their own charts.
    pub fn real_part(&self) -> f64 {
        self.plus.value - self.minus.value
    }
}

/// `z1 (-) z2`.
pub fn box_minus(z1: FiberPoint, z2: FiberPoint) -> AffineScalar {
    AffineScalar::new(z1, z2)
}

/// The real difference of two affine scalars over the same base points:
/// `(plus1 - plus2) - (minus1 - minus2)`.
pub fn affine_scalar_diff(s1: &AffineScalar, s2: &AffineScalar, atlas: &Atlas) -> Result<f64> {
    Ok(fiber_diff(&s1.plus, &s2.plus, atlas)? - fiber_diff(&s1.minus, &s2.minus, atlas)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::{parse, Constants};
    use proptest::prelude::*;

    fn line() -> Atlas {
        Atlas::euclidean(1, Constants::new()).unwrap()
    }

    fn circle() -> Atlas {
        Atlas::circle(&parse("0.5").unwrap(), None, Constants::new()).unwrap()
    }

    fn fp(atlas: &Atlas, chart: usize, base: f64, value: f64) -> FiberPoint {
        FiberPoint::new(atlas, chart, vec![base], value).unwrap()
    }

    #[test]
    fn translation_examples() {
        let a = line();
        assert_eq!(fiber_translate(&fp(&a, 0, 0.0, 2.0), 0.0).value, 2.0);
        assert_eq!(fiber_translate(&fp(&a, 0, 0.0, 2.0), -2.0).value, 0.0);
        let z = fiber_translate(&fp(&a, 0, 1.0, 0.5), 0.25);
        assert_eq!((z.chart, z.base.clone(), z.value), (0, vec![1.0], 0.75));
    }

    #[test]
    fn fiber_difference_examples() {
        let a = line();
        assert_eq!(fiber_diff(&fp(&a, 0, 0.3, 3.0), &fp(&a, 0, 0.3, 1.0), &a).unwrap(), 2.0);
        let z = fp(&a, 0, 0.3, 1.0);
        assert_eq!(fiber_diff(&z, &z, &a).unwrap(), 0.0);

        // z_0 = z_1 + g_01 with g_01 = 0.5, so value 1.0 in chart 1 reads 1.5 in chart 0.
        let c = circle();
        let d = fiber_diff(&fp(&c, 0, 1.0, 1.0), &fp(&c, 1, 1.0, 1.0), &c).unwrap();
        assert_eq!(d, -0.5);
        let d = fiber_diff(&fp(&c, 1, 1.0, 1.0), &fp(&c, 0, 1.0, 1.0), &c).unwrap();
        assert_eq!(d, 0.5);
    }

    #[test]
    fn fiber_difference_errors() {
        let a = line();
        assert!(matches!(
            fiber_diff(&fp(&a, 0, 0.3, 3.0), &fp(&a, 0, 0.4, 1.0), &a),
            Err(Error::BaseMismatch(_))
        ));
        let c = circle();
        // The same angle coordinate 1.0 in chart 0 and 3.0 in chart 1 are different points.
        assert!(matches!(
            fiber_diff(&fp(&c, 0, 1.0, 0.0), &fp(&c, 1, 3.0, 0.0), &c),
            Err(Error::BaseMismatch(_))
        ));
        // Base point 0 in chart 0 is not covered by chart 1.
        assert!(matches!(
            fp(&c, 0, 0.0, 0.0).to_chart(1, &c),
            Err(Error::ChartDisjoint { .. })
        ));
        assert!(FiberPoint::new(&c, 1, vec![-1.0], 0.0).is_err());
    }

    #[test]
    fn affine_scalar_examples() {
        let a = line();
        let z1 = fp(&a, 0, 1.0, 0.7);
        let z2 = fp(&a, 0, -2.0, 0.1);
        let s = box_minus(z1.clone(), z2.clone());
        assert_eq!(affine_scalar_diff(&s, &s, &a).unwrap(), 0.0);

        let plus_shift = box_minus(fiber_translate(&z1, 2.0), z2.clone());
        assert_eq!(affine_scalar_diff(&plus_shift, &s, &a).unwrap(), 2.0);

        let minus_shift = box_minus(z1.clone(), fiber_translate(&z2, 0.5));
        assert_eq!(affine_scalar_diff(&minus_shift, &s, &a).unwrap(), -0.5);
    }

    fn circle_point() -> impl Strategy<Value = (f64, f64)> {
        // Base angles inside the upper or lower overlap piece, in chart 0 coordinates.
        (prop_oneof![0.01f64..3.1, -3.1f64..-0.01], -10.0f64..10.0)
    }

    proptest! {
        #[test]
        fn translation_composes(v in -1e3f64..1e3, r in -1e3f64..1e3, s in -1e3f64..1e3) {
            let a = line();
            let z = fp(&a, 0, 0.0, v);
            let twice = fiber_translate(&fiber_translate(&z, r), s);
            prop_assert_eq!(twice.value, (v + r) + s);
            prop_assert_eq!(twice.chart, z.chart);
        }

        #[test]
        fn fiber_difference_is_antisymmetric((x, v1) in circle_point(), v2 in -10.0f64..10.0) {
            let c = circle();
            let z1 = fp(&c, 0, x, v1);
            let z2 = FiberPoint { value: v2, ..fp(&c, 0, x, 0.0).to_chart(1, &c).unwrap() };
            let d12 = fiber_diff(&z1, &z2, &c).unwrap();
            let d21 = fiber_diff(&z2, &z1, &c).unwrap();
            prop_assert!((d12 + d21).abs() <= 1e-15 * (1.0 + d12.abs()));
        }

        #[test]
        fn scalar_difference_ignores_rechart(
            (x1, v1) in circle_point(),
            (x2, v2) in circle_point(),
            dv in -5.0f64..5.0,
        ) {
            let c = circle();
            let s1 = box_minus(fp(&c, 0, x1, v1), fp(&c, 0, x2, v2));
            let s2 = box_minus(fp(&c, 0, x1, v1 + dv), fp(&c, 0, x2, v2 - dv));
            let reference = affine_scalar_diff(&s1, &s2, &c).unwrap();
            let moved = AffineScalar::new(s1.plus.to_chart(1, &c).unwrap(), s1.minus.to_chart(1, &c).unwrap());
            let recharted = affine_scalar_diff(&moved, &s2, &c).unwrap();
            prop_assert!((reference - recharted).abs() < 1e-12);
            let back = moved.plus.to_chart(0, &c).unwrap();
            prop_assert!((back.value - s1.plus.value).abs() <= 4.0 * f64::EPSILON * (1.0 + s1.plus.value.abs()));
        }

        #[test]
        fn scalar_differences_form_a_cocycle(
            (x1, v1) in circle_point(),
            (x2, v2) in circle_point(),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let c = circle();
            let s1 = box_minus(fp(&c, 0, x1, v1), fp(&c, 0, x2, v2));
            let s2 = box_minus(fp(&c, 0, x1, v1 + a).to_chart(1, &c).unwrap(), fp(&c, 0, x2, v2));
            let s3 = box_minus(fp(&c, 0, x1, v1), fp(&c, 0, x2, v2 + b).to_chart(1, &c).unwrap());
            let lhs = affine_scalar_diff(&s1, &s3, &c).unwrap();
            let rhs = affine_scalar_diff(&s1, &s2, &c).unwrap() + affine_scalar_diff(&s2, &s3, &c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }
}
