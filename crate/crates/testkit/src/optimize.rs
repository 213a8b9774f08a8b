//! Generic numerical maximizers used to cross-check closed-form updates.

/// Maximize a unimodal function on [lo, hi] by golden-section search.
/// Regions where `f` is -inf (outside a feasible cone) are tolerated: ties,
/// including -inf against -inf, shrink the right end so a finite maximum
/// near the lower bound is never discarded.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Maximize over one scalar by expanding a bracket around `x0` until the
/// maximum is interior, then golden-section.
pub fn maximize_scalar(f: impl Fn(f64) -> f64, x0: f64, initial_span: f64) -> f64 {
    let mut span = initial_span.max(1e-8);
    for _ in 0..60 {
        let (lo, hi) = (x0 - span, x0 + span);
        let m = golden_section_max(&f, lo, hi, 120);
        if (m - lo).abs() > 0.02 * span && (hi - m).abs() > 0.02 * span {
            return m;
        }
        span *= 3.0;
    }
    x0
}

/// One exact Newton step for a coordinate along which `f` is quadratic,
/// via a three-point parabola fit; returns the vertex.
pub fn parabola_step(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let (fm, f0, fp) = (f(x - h), f(x), f(x + h));
    let denom = fp - 2.0 * f0 + fm;
    if denom >= 0.0 || denom.abs() < 1e-300 {
        return x;
    }
    x - h * (fp - fm) / (2.0 * denom)
}

/// Cyclic coordinate maximization for functions quadratic in each coordinate
/// (exact parabola steps), iterated until stable.
pub fn maximize_vector_quadratic(
    f: impl Fn(&[f64]) -> f64,
    start: &[f64],
    sweeps: usize,
) -> Vec<f64> {
    let mut x = start.to_vec();
    for _ in 0..sweeps {
        let mut moved = 0.0f64;
        for j in 0..x.len() {
            let xj = x[j];
            let g = |v: f64| {
                let mut y = x.clone();
                y[j] = v;
                f(&y)
            };
            let h = 0.5 * xj.abs().max(1.0);
            let next = parabola_step(g, xj, h);
            moved = moved.max((next - xj).abs());
            x[j] = next;
        }
        if moved < 1e-12 {
            break;
        }
    }
    x
}

/// Cyclic coordinate maximization for smooth concave functions that may
/// leave the feasible region (where `f` returns -inf): each coordinate first
/// tries exact parabola steps and falls back to bracket-expanding
/// golden-section when a step leaves the domain or loses ground. Strongly
/// coupled coordinates make plain sweeps crawl, so each sweep is followed by
/// a line search along the direction the sweep moved.
pub fn maximize_vector_adaptive(
    f: impl Fn(&[f64]) -> f64,
    start: &[f64],
    sweeps: usize,
    scale: f64,
) -> Vec<f64> {
    let mut x = start.to_vec();
    for _ in 0..sweeps {
        let before = x.clone();
        let mut moved = 0.0f64;
        for j in 0..x.len() {
            let g = |v: f64| {
                let mut y = x.clone();
                y[j] = v;
                f(&y)
            };
            let mut xj = x[j];
            let mut improved_by_parabola = false;
            for _ in 0..3 {
                let current = g(xj);
                let h = 1e-5 * (xj.abs().max(scale));
                let candidate = parabola_step(&g, xj, h);
                if candidate.is_finite() && g(candidate) > current {
                    xj = candidate;
                    improved_by_parabola = true;
                } else {
                    break;
                }
            }
            if !improved_by_parabola {
                xj = maximize_scalar(&g, x[j], scale);
            }
            moved = moved.max((xj - x[j]).abs());
            x[j] = xj;
        }
        // Accelerate along the sweep direction.
        let direction: Vec<f64> = x.iter().zip(before.iter()).map(|(a, b)| a - b).collect();
        if direction.iter().any(|d| d.abs() > 1e-14) {
            let along = |t: f64| {
                let y: Vec<f64> = x
                    .iter()
                    .zip(direction.iter())
                    .map(|(a, d)| a + t * d)
                    .collect();
                f(&y)
            };
            let t = golden_section_max(&along, 0.0, 16.0, 120);
            if along(t) > along(0.0) {
                for (a, d) in x.iter_mut().zip(direction.iter()) {
                    *a += t * d;
                }
                moved = moved.max(t * direction.iter().fold(0.0f64, |m, d| m.max(d.abs())));
            }
        }
        if moved < 1e-10 {
            break;
        }
    }
    x
}

/// Numerical central-difference gradient.
fn numerical_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut lo = x.to_vec();
        let mut hi = x.to_vec();
        lo[j] -= h;
        hi[j] += h;
        let (flo, fhi) = (f(&lo), f(&hi));
        grad[j] = if flo.is_finite() && fhi.is_finite() {
            (fhi - flo) / (2.0 * h)
        } else {
            0.0
        };
    }
    grad
}

/// Maximize along the ray `x + t d`, t >= 0, by bracket expansion plus
/// golden-section; -inf function values (outside the domain) are tolerated.
fn line_max(f: &impl Fn(&[f64]) -> f64, x: &[f64], d: &[f64]) -> f64 {
    let eval = |t: f64| {
        let y: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + t * b).collect();
        f(&y)
    };
    let f0 = eval(0.0);
    let mut t_hi = 1.0;
    let mut best = f0;
    for _ in 0..40 {
        let ft = eval(t_hi);
        if ft.is_finite() && ft > best {
            best = ft;
            t_hi *= 2.0;
        } else {
            break;
        }
    }
    let t = golden_section_max(eval, 0.0, t_hi, 140);
    if eval(t) > f0 {
        t
    } else {
        0.0
    }
}

/// Nonlinear conjugate-gradient maximization (Polak-Ribiere with restarts)
/// with numerical gradients; exact on quadratics within `dim` line searches
/// and reliable on the smooth concave objectives the oracles deal with.
pub fn maximize_cg(f: impl Fn(&[f64]) -> f64, start: &[f64], iterations: usize) -> Vec<f64> {
    let dim = start.len();
    if dim == 0 {
        return Vec::new();
    }
    let mut x = start.to_vec();
    let mut grad = numerical_gradient(&f, &x);
    let mut direction = grad.clone();
    for iter in 0..iterations {
        let norm = direction.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if norm < 1e-12 {
            break;
        }
        let unit: Vec<f64> = direction.iter().map(|d| d / norm).collect();
        let t = line_max(&f, &x, &unit);
        for (a, d) in x.iter_mut().zip(unit.iter()) {
            *a += t * d;
        }
        let new_grad = numerical_gradient(&f, &x);
        let new_norm = new_grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if new_norm < 1e-9 {
            break;
        }
        // Polak-Ribiere+, restarted every dim + 1 iterations.
        let beta = if (iter + 1) % (dim + 1) == 0 || t == 0.0 {
            0.0
        } else {
            let num: f64 = new_grad
                .iter()
                .zip(grad.iter())
                .map(|(n, o)| n * (n - o))
                .sum();
            let den: f64 = grad.iter().map(|g| g * g).sum();
            (num / den.max(1e-300)).max(0.0)
        };
        for j in 0..dim {
            direction[j] = new_grad[j] + beta * direction[j];
        }
        grad = new_grad;
    }
    x
}
