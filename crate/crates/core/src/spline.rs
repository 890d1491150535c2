//! Clamped B-spline basis over cumulative forward distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplineSpec {
    pub degree: usize,
    pub boundary_knots: [f64; 2],
    pub internal_knots: Vec<f64>,
}

impl Default for SplineSpec {
    fn default() -> Self {
        Self {
            degree: 3,
            boundary_knots: [0.0, 1650.0],
            internal_knots: vec![90.0, 250.0, 800.0, 1207.0, 1375.0],
        }
    }
}

impl SplineSpec {
    pub fn dimension(&self) -> usize {
        self.internal_knots.len() + self.degree + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree > 15 {
            return Err(Error::Spec(format!("degree {} is above 15", self.degree)));
        }
        let [lo, hi] = self.boundary_knots;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Spec(format!(
                "boundary knots [{lo}, {hi}] must be finite and increasing"
            )));
        }
        let mut prev = lo;
        for &k in &self.internal_knots {
            if !(k > prev) {
                return Err(Error::Spec(format!(
                    "internal knots must be strictly increasing and above {lo}; got {k} after {prev}"
                )));
            }
            prev = k;
        }
        if !(prev < hi) {
            return Err(Error::Spec(format!(
                "internal knot {prev} is not inside the boundary [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Nonzero block of one basis row: `values[i]` belongs to basis function
/// `start + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisRow {
    pub start: usize,
    pub values: Vec<f64>,
}

impl BasisRow {
    pub fn to_dense(&self, dimension: usize) -> Vec<f64> {
        let mut out = vec![0.0; dimension];
        out[self.start..self.start + self.values.len()].copy_from_slice(&self.values);
        out
    }

    pub fn dot(&self, coefficients: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(&coefficients[self.start..])
            .map(|(b, c)| b * c)
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct Basis {
    spec: SplineSpec,
    knots: Vec<f64>,
}

pub fn build_basis(spec: &SplineSpec) -> Result<Basis> {
    Basis::new(spec.clone())
}

impl Basis {
    pub fn new(spec: SplineSpec) -> Result<Self> {
        spec.validate()?;
        let p = spec.degree;
        let [lo, hi] = spec.boundary_knots;
        let mut knots = Vec::with_capacity(spec.internal_knots.len() + 2 * (p + 1));
        knots.extend(std::iter::repeat_n(lo, p + 1));
        knots.extend_from_slice(&spec.internal_knots);
        knots.extend(std::iter::repeat_n(hi, p + 1));
        Ok(Self { spec, knots })
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    pub fn degree(&self) -> usize {
        self.spec.degree
    }

    /// Knot span index `s` with `knots[s] <= j < knots[s + 1]`, using the
    /// last non-empty span at the right boundary.
    fn span(&self, j: f64) -> usize {
        let p = self.spec.degree;
        let n = self.dimension();
        if j >= self.knots[n] {
            return n - 1;
        }
        // knots[p..=n] is strictly increasing
        let interior = &self.knots[p..=n];
        let k = interior.partition_point(|&t| t <= j);
        p + k - 1
    }

    /// Writes the `degree + 1` nonzero values at `j` into `out` and returns
    /// the index of the first. `j` above the right boundary is clamped.
    pub fn eval_into(&self, j: f64, out: &mut [f64]) -> Result<usize> {
        if !(j >= self.spec.boundary_knots[0]) {
            return Err(Error::Range(format!(
                "spline evaluated at {j}, below the left boundary knot {}",
                self.spec.boundary_knots[0]
            )));
        }
        let j = j.min(self.spec.boundary_knots[1]);
        let p = self.spec.degree;
        let s = self.span(j);
        let u = &self.knots;
        let out = &mut out[..=p];
        // de Boor / Cox recursion, triangular form
        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        out[0] = 1.0;
        for d in 1..=p {
            left[d] = j - u[s + 1 - d];
            right[d] = u[s + d] - j;
            let mut saved = 0.0;
            for r in 0..d {
                let denom = right[r + 1] + left[d - r];
                let temp = if denom > 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            out[d] = saved;
        }
        Ok(s - p)
    }

    pub fn eval_basis_row(&self, j: f64) -> Result<BasisRow> {
        let mut values = vec![0.0; self.spec.degree + 1];
        let start = self.eval_into(j, &mut values)?;
        Ok(BasisRow { start, values })
    }

    /// Profile value `sum_b B_b(j) * coefficients[b]`.
    pub fn profile(&self, j: f64, coefficients: &[f64]) -> Result<f64> {
        Ok(self.eval_basis_row(j)?.dot(coefficients))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_basis() -> Basis {
        Basis::new(SplineSpec::default()).unwrap()
    }

    /// Recursive Cox-de Boor definition, evaluated per basis function.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64, n: usize) -> f64 {
        if p == 0 {
            let last = knots[n];
            let in_span = knots[i] <= x && x < knots[i + 1];
            let closes_last = x == last && knots[i + 1] == last && knots[i] < last;
            return if in_span || closes_last { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x, n);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x, n);
        }
        v
    }

    #[test]
    fn default_dimension_is_nine() {
        assert_eq!(default_basis().dimension(), 9);
    }

    #[test]
    fn no_internal_knots_is_bernstein() {
        let spec = SplineSpec {
            degree: 3,
            boundary_knots: [0.0, 1650.0],
            internal_knots: vec![],
        };
        let basis = Basis::new(spec).unwrap();
        assert_eq!(basis.dimension(), 4);
        let t: f64 = 0.3;
        let row = basis.eval_basis_row(t * 1650.0).unwrap().to_dense(4);
        let expected = [
            (1.0 - t).powi(3),
            3.0 * t * (1.0 - t).powi(2),
            3.0 * t * t * (1.0 - t),
            t.powi(3),
        ];
        for (a, b) in row.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_knots_rejected() {
        let dup = SplineSpec {
            internal_knots: vec![90.0, 250.0, 250.0],
            ..SplineSpec::default()
        };
        assert!(matches!(Basis::new(dup), Err(Error::Spec(_))));
        let outside = SplineSpec {
            internal_knots: vec![90.0, 1700.0],
            ..SplineSpec::default()
        };
        assert!(Basis::new(outside).is_err());
    }

    #[test]
    fn clamped_left_endpoint() {
        let row = default_basis().eval_basis_row(0.0).unwrap().to_dense(9);
        assert_eq!(row[0], 1.0);
        assert!(row[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clamped_right_endpoint_and_overrun() {
        let basis = default_basis();
        let row = basis.eval_basis_row(1650.0).unwrap().to_dense(9);
        assert!((row[8] - 1.0).abs() < 1e-15);
        let over = basis.eval_basis_row(1662.3).unwrap().to_dense(9);
        assert_eq!(row, over);
    }

    #[test]
    fn negative_distance_is_range_error() {
        assert!(matches!(
            default_basis().eval_basis_row(-0.5),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn local_support_below_first_knot() {
        let row = default_basis().eval_basis_row(50.0).unwrap().to_dense(9);
        assert!(row[..4].iter().all(|&v| v > 0.0));
        assert!(row[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_recursive_definition() {
        let basis = default_basis();
        let n = basis.dimension();
        for k in 0..=330 {
            let x = k as f64 * 5.0;
            let row = basis.eval_basis_row(x).unwrap().to_dense(n);
            for (i, v) in row.iter().enumerate() {
                let oracle = cox_de_boor(&basis.knots, i, 3, x, n);
                assert!((v - oracle).abs() < 1e-12, "x={x} i={i}: {v} vs {oracle}");
            }
        }
    }

    #[test]
    fn profile_at_zero_is_first_coefficient() {
        let coef = [2.1, 3.4, 4.2, 4.3, 4.2, 4.1, 4.0, 3.9, 3.8];
        assert_eq!(default_basis().profile(0.0, &coef).unwrap(), 2.1);
    }

    #[test]
    fn second_derivative_is_continuous() {
        let basis = default_basis();
        let coef = [2.1, 3.4, 4.2, 4.3, 4.2, 4.1, 4.0, 3.9, 3.8];
        let h = 0.5;
        let f = |x: f64| basis.profile(x, &coef).unwrap();
        let d2 = |x: f64| (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        // across each internal knot, the one-sided curvature estimates agree
        for &k in &[90.0, 250.0, 800.0, 1207.0, 1375.0] {
            let l = d2(k - 2.0 * h);
            let r = d2(k + 2.0 * h);
            assert!((l - r).abs() < 1e-3, "knot {k}: {l} vs {r}");
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(j in 0.0f64..=1650.0) {
            let row = default_basis().eval_basis_row(j).unwrap();
            let s: f64 = row.values.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(row.values.iter().all(|&v| v >= 0.0));
            prop_assert!(row.values.len() == 4);
        }
    }
}
