//! Composite Gauss-Legendre quadrature with nodes found by Newton iteration
//! on the Legendre polynomials.

/// Nodes and weights of n-point Gauss-Legendre quadrature on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Integrate `f` over [a, b] with 24 panels of 16-point Gauss-Legendre.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gauss_legendre(16);
    let panels = 24;
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for panel in 0..panels {
        let lo = a + panel as f64 * width;
        let mid = lo + 0.5 * width;
        let half = 0.5 * width;
        for (x, w) in nodes.iter().zip(weights.iter()) {
            total += w * half * f(mid + half * x);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let got = integrate(|x| 3.0 * x * x, 0.0, 2.0);
        assert!((got - 8.0).abs() < 1e-12);
    }
}
