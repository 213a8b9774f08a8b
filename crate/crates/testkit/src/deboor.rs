//! Textbook Cox-de Boor recursion computing every basis function from the
//! zeroth degree up, used as an oracle for the production evaluator.

/// Evaluate all B-spline basis functions of the given degree on `knots` at
/// `t`, by the plain recursive definition with the 0/0 := 0 convention.
pub fn naive_basis(knots: &[f64], degree: usize, t: f64) -> Vec<f64> {
    let num_basis = knots.len() - degree - 1;
    let right_end = knots[knots.len() - 1];

    // Degree 0: indicator of the half-open knot interval, closed on the right
    // for the final nonempty span so t = 1 is covered.
    let mut values: Vec<f64> = (0..knots.len() - 1)
        .map(|i| {
            let inside = if t >= right_end {
                knots[i] < right_end && knots[i + 1] >= right_end
            } else {
                knots[i] <= t && t < knots[i + 1]
            };
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    for k in 1..=degree {
        let mut next = vec![0.0; values.len() - 1];
        for i in 0..next.len() {
            let denom_left = knots[i + k] - knots[i];
            let denom_right = knots[i + k + 1] - knots[i + 1];
            let left = if denom_left > 0.0 {
                (t - knots[i]) / denom_left * values[i]
            } else {
                0.0
            };
            let right = if denom_right > 0.0 {
                (knots[i + k + 1] - t) / denom_right * values[i + 1]
            } else {
                0.0
            };
            next[i] = left + right;
        }
        values = next;
    }

    values.truncate(num_basis);
    values
}
