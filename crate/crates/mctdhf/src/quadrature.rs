//! Gauss-Lobatto and Gauss-Legendre rules on [-1, 1], plus Lagrange
//! interpolation utilities on arbitrary node sets.
//!
//! Gauss-Lobatto nodes double as the interpolation points of the finite
//! element basis, so quadrature and basis evaluation share one node set.

/// Legendre polynomial P_n and its first derivative at `x`, by recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
    }
    // (1 - x^2) P_n'(x) = n (P_{n-1}(x) - x P_n(x))
    let dp = if (1.0 - x * x).abs() < 1e-14 {
        // endpoint limit: P_n'(±1) = ±^{n+1} n(n+1)/2
        let sign = if x > 0.0 { 1.0 } else { (-1.0f64).powi(n as i32 + 1) };
        sign * (n * (n + 1)) as f64 / 2.0
    } else {
        (n as f64) * (p_prev - x * p) / (1.0 - x * x)
    };
    (p, dp)
}

/// n-point Gauss-Lobatto-Legendre rule on [-1, 1]; exact for polynomials of
/// degree <= 2n - 3. Nodes include both endpoints and are sorted ascending.
pub fn gauss_lobatto(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "Gauss-Lobatto rule needs at least 2 points");
    let m = n - 1;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[m] = 1.0;
    // interior nodes are the roots of P'_m; Newton from Chebyshev-Lobatto guesses
    for j in 1..m {
        let mut x = -(std::f64::consts::PI * j as f64 / m as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(m, x);
            // f = P'_m, f' = P''_m from the Legendre ODE
            let ddp = (2.0 * x * dp - (m * (m + 1)) as f64 * p) / (1.0 - x * x);
            let step = dp / ddp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes[j] = x;
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for j in 0..n {
        let (p, _) = legendre_with_deriv(m, nodes[j]);
        weights[j] = 2.0 / ((m * (m + 1)) as f64 * p * p);
    }
    (nodes, weights)
}

/// n-point Gauss-Legendre rule on [-1, 1]; exact for degree <= 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for j in 0..n {
        let mut x = (std::f64::consts::PI * (j as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        nodes[j] = x;
        weights[j] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Newton above walks j from the top end down
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Barycentric weights for Lagrange interpolation on `nodes`.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                w[j] /= nodes[j] - nodes[k];
            }
        }
    }
    w
}

/// Values of all Lagrange cardinal polynomials on `nodes` at `x`
/// (barycentric form; exact at the nodes themselves).
pub fn lagrange_all(nodes: &[f64], bary: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut out = vec![0.0; n];
    for j in 0..n {
        if (x - nodes[j]).abs() < 1e-14 {
            out[j] = 1.0;
            return out;
        }
    }
    let mut denom = 0.0;
    for j in 0..n {
        let t = bary[j] / (x - nodes[j]);
        out[j] = t;
        denom += t;
    }
    for v in out.iter_mut() {
        *v /= denom;
    }
    out
}

/// Differentiation matrix D[q][j] = L_j'(x_q) on `nodes`.
pub fn differentiation_matrix(nodes: &[f64]) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let bary = barycentric_weights(nodes);
    let mut d = vec![vec![0.0; n]; n];
    for q in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if j != q {
                d[q][j] = (bary[j] / bary[q]) / (nodes[q] - nodes[j]);
                diag -= d[q][j];
            }
        }
        d[q][q] = diag;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lobatto_matches_reference_tables() {
        let (x, w) = gauss_lobatto(2);
        assert_abs_diff_eq!(x[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-15);

        let (x, w) = gauss_lobatto(3);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 4.0 / 3.0, epsilon = 1e-14);

        let (x, w) = gauss_lobatto(4);
        let s5 = 5.0f64.sqrt();
        assert_abs_diff_eq!(x[1], -1.0 / 5.0 * s5, epsilon = 1e-13);
        assert_abs_diff_eq!(w[0], 1.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 5.0 / 6.0, epsilon = 1e-13);

        let (x, w) = gauss_lobatto(5);
        let s21 = 21.0f64.sqrt();
        assert_abs_diff_eq!(x[1], -1.0 / 7.0 * s21, epsilon = 1e-13);
        assert_abs_diff_eq!(x[2], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[0], 1.0 / 10.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 49.0 / 90.0, epsilon = 1e-13);
        assert_abs_diff_eq!(w[2], 32.0 / 45.0, epsilon = 1e-13);
    }

    #[test]
    fn lobatto_exactness_degree() {
        // n-point rule integrates x^k exactly for k <= 2n-3
        for n in 2..=9 {
            let (x, w) = gauss_lobatto(n);
            for k in 0..=(2 * n - 3) {
                let approx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(k as i32)).sum();
                let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
                assert_abs_diff_eq!(approx, exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn legendre_exactness_degree() {
        for n in 1..=10 {
            let (x, w) = gauss_legendre(n);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            for k in 0..=(2 * n - 1) {
                let approx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(k as i32)).sum();
                let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
                assert_abs_diff_eq!(approx, exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lagrange_cardinal_property() {
        let (x, _) = gauss_lobatto(6);
        let bary = barycentric_weights(&x);
        for (j, &xj) in x.iter().enumerate() {
            let vals = lagrange_all(&x, &bary, xj);
            for (k, v) in vals.iter().enumerate() {
                let expect = if k == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(*v, expect, epsilon = 1e-13);
            }
        }
        // partition of unity off-node
        let vals = lagrange_all(&x, &bary, 0.2345);
        assert_abs_diff_eq!(vals.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn differentiation_matrix_on_polynomial() {
        let (x, _) = gauss_lobatto(5);
        let d = differentiation_matrix(&x);
        // f = x^3 - 2x, f' = 3x^2 - 2, degree within the p=4 space
        let f: Vec<f64> = x.iter().map(|&t| t.powi(3) - 2.0 * t).collect();
        for q in 0..x.len() {
            let df: f64 = (0..x.len()).map(|j| d[q][j] * f[j]).sum();
            assert_abs_diff_eq!(df, 3.0 * x[q] * x[q] - 2.0, epsilon = 1e-12);
        }
    }
}
