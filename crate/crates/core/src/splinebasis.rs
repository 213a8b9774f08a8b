//! Cubic B-spline basis on [0, 1]: knot construction, evaluation, the
//! second-derivative roughness penalty, and the per-subject SVD re-basis
//! used to stabilize conditional-moment computations.
//!
//! Boundary knots are replicated `degree + 1` times (clamped spline), so the
//! basis at the endpoints collapses to the unit vectors.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Knot layout and degree defining the `p` basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    degree: usize,
    knot_count: usize,
    knots: Vec<f64>,
}

impl BasisSpec {
    /// Basis of the given degree on `knot_count` evenly spaced knots
    /// (endpoints included) over [0, 1].
    pub fn new(knot_count: usize, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidBasisSpec(
                "degree must be at least 1".into(),
            ));
        }
        let knots = make_knots(knot_count, degree)?;
        Ok(Self {
            degree,
            knot_count,
            knots,
        })
    }

    /// Cubic basis on `knot_count` evenly spaced knots; `cubic(6)` gives the
    /// default eight-function basis.
    pub fn cubic(knot_count: usize) -> Result<Self> {
        Self::new(knot_count, 3)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions: `knot_count + degree - 1`.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Full clamped knot vector, boundary knots replicated `degree + 1` times.
    pub fn knot_vector(&self) -> &[f64] {
        &self.knots
    }

    /// The distinct knot positions {0, 1/(m-1), ..., 1}.
    pub fn distinct_knots(&self) -> &[f64] {
        &self.knots[self.degree..self.knots.len() - self.degree]
    }

    /// Index of the knot span containing `t` (clamped so t = 1 lands in the
    /// last non-degenerate span).
    fn find_span(&self, t: f64) -> usize {
        let p = self.num_basis();
        let d = self.degree;
        if t >= self.knots[p] {
            return p - 1;
        }
        let mut lo = d;
        let mut hi = p;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Evaluate all `p` basis functions at `t` in [0, 1].
    pub fn eval_basis(&self, t: f64) -> Result<DVector<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutsideDomain { what: "t", value: t });
        }
        let d = self.degree;
        let span = self.find_span(t);
        let mut out = DVector::zeros(self.num_basis());

        // Cox-de Boor recursion over the d + 1 functions supported on the span.
        let mut vals = vec![0.0; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        vals[0] = 1.0;
        for j in 1..=d {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        for (i, v) in vals.iter().enumerate() {
            out[span - d + i] = *v;
        }
        Ok(out)
    }

    /// Evaluate basis derivatives up to order `max_order` at `t`; row `k` of
    /// the result holds the k-th derivatives of all `p` functions.
    pub fn eval_basis_derivs(&self, t: f64, max_order: usize) -> Result<DMatrix<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutsideDomain { what: "t", value: t });
        }
        let d = self.degree;
        let n = max_order.min(d);
        let span = self.find_span(t);
        let knots = &self.knots;

        // Triangular table of all lower-degree basis values (NURBS book A2.3).
        let mut ndu = vec![vec![0.0; d + 1]; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        ndu[0][0] = 1.0;
        for j in 1..=d {
            left[j] = t - knots[span + 1 - j];
            right[j] = knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = DMatrix::zeros(max_order + 1, self.num_basis());
        for r in 0..=d {
            ders[(0, span - d + r)] = ndu[r][d];
        }

        let mut a = vec![vec![0.0; d + 1]; 2];
        for r in 0..=d {
            let mut s1 = 0;
            let mut s2 = 1;
            a[0][0] = 1.0;
            for k in 1..=n {
                let mut dval = 0.0;
                let rk = r as isize - k as isize;
                let pk = d - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    dval = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { d - r };
                for j in j1..=j2 {
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as isize) as usize];
                    dval += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
                }
                if r as isize <= pk as isize {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    dval += a[s2][k] * ndu[r][pk];
                }
                ders[(k, span - d + r)] = dval;
                std::mem::swap(&mut s1, &mut s2);
            }
        }

        let mut factor = d as f64;
        for k in 1..=n {
            for col in 0..self.num_basis() {
                ders[(k, col)] *= factor;
            }
            factor *= (d - k) as f64;
        }
        Ok(ders)
    }

    /// Gram matrix of the second-derivative roughness penalty,
    /// `P[a, b] = integral of phi_a''(t) phi_b''(t) dt` over [0, 1].
    pub fn second_derivative_penalty(&self) -> DMatrix<f64> {
        let p = self.num_basis();
        let mut pen = DMatrix::zeros(p, p);
        if self.degree < 2 {
            return pen;
        }
        // phi'' is a degree d-2 piecewise polynomial, so per-interval
        // Gauss-Legendre of order d-1 integrates the products exactly.
        let (nodes, weights) = gauss_legendre_unit(self.degree - 1);
        let distinct = self.distinct_knots().to_vec();
        for w in distinct.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let scale = b - a;
            for (x, wt) in nodes.iter().zip(weights.iter()) {
                let t = a + scale * x;
                let ders = self
                    .eval_basis_derivs(t, 2)
                    .expect("quadrature nodes lie inside the domain");
                let d2 = ders.row(2);
                for i in 0..p {
                    if d2[i] == 0.0 {
                        continue;
                    }
                    for j in 0..p {
                        pen[(i, j)] += wt * scale * d2[i] * d2[j];
                    }
                }
            }
        }
        pen
    }
}

/// Full clamped knot vector for `knot_count` evenly spaced distinct knots on
/// [0, 1]; the resulting basis has `knot_count + degree - 1` functions.
pub fn make_knots(knot_count: usize, degree: usize) -> Result<Vec<f64>> {
    if knot_count < 2 {
        return Err(Error::InvalidBasisSpec(format!(
            "need at least 2 knots (endpoints), got {knot_count}"
        )));
    }
    let mut knots = vec![0.0; degree];
    for r in 0..knot_count {
        knots.push(r as f64 / (knot_count - 1) as f64);
    }
    knots.resize(knots.len() + degree, 1.0);
    Ok(knots)
}

/// Gauss-Legendre nodes/weights on [0, 1] for orders 1..=5.
fn gauss_legendre_unit(order: usize) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights): (Vec<f64>, Vec<f64>) = match order.max(1) {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        _ => {
            let a = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
            let b = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
            let wa = (322.0 + 13.0 * 70f64.sqrt()) / 900.0;
            let wb = (322.0 - 13.0 * 70f64.sqrt()) / 900.0;
            (
                vec![-b, -a, 0.0, a, b],
                vec![wb, wa, 128.0 / 225.0, wa, wb],
            )
        }
    };
    // Map from [-1, 1] to [0, 1].
    (
        nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights.iter().map(|w| 0.5 * w).collect(),
    )
}

/// Basis functions evaluated along a subject's time grid, one row per time.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    matrix: DMatrix<f64>,
}

impl BasisMatrix {
    /// Evaluate the basis row-wise on `times` (all in [0, 1], nonempty).
    pub fn evaluate(times: &[f64], spec: &BasisSpec) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptyInput("times"));
        }
        let p = spec.num_basis();
        let mut matrix = DMatrix::zeros(times.len(), p);
        for (j, &t) in times.iter().enumerate() {
            let row = spec.eval_basis(t)?;
            matrix.row_mut(j).copy_from(&row.transpose());
        }
        Ok(Self { matrix })
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl std::ops::Deref for BasisMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &Self::Target {
        &self.matrix
    }
}

/// Evaluate the `n x p` basis matrix for a subject's time grid.
pub fn eval_basis_matrix(times: &[f64], spec: &BasisSpec) -> Result<BasisMatrix> {
    BasisMatrix::evaluate(times, spec)
}

/// Thin SVD of a subject's basis matrix, `phi = U diag(D) V^T`, giving the
/// orthonormal-column working basis U and the coefficient transforms
/// `beta = D V^T eta` and `eta = V D^-1 beta`.
#[derive(Debug, Clone)]
pub struct SvdRebasis {
    left_factor: DMatrix<f64>,
    singular_values: DVector<f64>,
    right_factor: DMatrix<f64>,
}

impl SvdRebasis {
    pub fn left_factor(&self) -> &DMatrix<f64> {
        &self.left_factor
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn right_factor(&self) -> &DMatrix<f64> {
        &self.right_factor
    }

    /// `U diag(D) V^T`, which reconstructs the original basis matrix.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.left_factor * DMatrix::from_diagonal(&self.singular_values) * self.right_factor.transpose()
    }

    /// `beta = D V^T eta`.
    pub fn coeffs_to_rebased(&self, eta: &DVector<f64>) -> DVector<f64> {
        let mut beta = self.right_factor.transpose() * eta;
        for i in 0..beta.len() {
            beta[i] *= self.singular_values[i];
        }
        beta
    }

    /// `eta = V D^-1 beta`.
    pub fn coeffs_from_rebased(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut scaled = beta.clone();
        for i in 0..scaled.len() {
            scaled[i] /= self.singular_values[i];
        }
        &self.right_factor * scaled
    }

    /// `T = diag(D) V^T`, the eta -> beta coefficient map.
    pub fn coeff_map(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.singular_values) * self.right_factor.transpose()
    }

    /// `T^-1 = V diag(D)^-1`.
    pub fn coeff_map_inverse(&self) -> DMatrix<f64> {
        let inv = DVector::from_iterator(
            self.singular_values.len(),
            self.singular_values.iter().map(|d| 1.0 / d),
        );
        &self.right_factor * DMatrix::from_diagonal(&inv)
    }
}

/// Compute the SVD re-basis of a full-column-rank basis matrix; `subject`
/// only labels the error when the matrix is rank deficient.
pub fn svd_rebasis(basis: &BasisMatrix, subject: &str) -> Result<SvdRebasis> {
    let m = basis.as_matrix();
    let (n, p) = (m.nrows(), m.ncols());
    if n < p {
        return Err(Error::RankDeficient {
            subject: subject.to_string(),
            rows: n,
            cols: p,
        });
    }
    let svd = m.clone().svd(true, true);
    let singular_values = svd.singular_values.clone();
    let max_sv = singular_values.max();
    let min_sv = singular_values.min();
    if !(min_sv > max_sv * 1e-12 && min_sv.is_finite() && min_sv > 0.0) {
        return Err(Error::RankDeficient {
            subject: subject.to_string(),
            rows: n,
            cols: p,
        });
    }
    let left_factor = svd.u.expect("svd computed with u");
    let right_factor = svd.v_t.expect("svd computed with v_t").transpose();
    Ok(SvdRebasis {
        left_factor,
        singular_values,
        right_factor,
    })
}
