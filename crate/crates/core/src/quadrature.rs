//! One-dimensional Gauss rules and Legendre polynomials on the reference
//! interval [-1, 1].

use std::f64::consts::PI;

/// Gauss–Legendre rule with `n` points, exact for polynomials of degree `2n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a Gauss rule needs at least one point");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..(n + 1) / 2 {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = -(PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_with_derivative(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = x;
            nodes[n - 1 - i] = -x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss–Lobatto–Legendre nodes for a degree-`degree` Lagrange basis
/// (endpoints included), ascending.
pub fn gauss_lobatto_nodes(degree: usize) -> Vec<f64> {
    assert!(degree >= 1);
    let n = degree + 1;
    let mut nodes = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[n - 1] = 1.0;
    // interior nodes are the roots of P'_degree
    for i in 1..n - 1 {
        let mut x = -(PI * i as f64 / degree as f64).cos();
        for _ in 0..100 {
            let (_, dp, d2p) = legendre_d2(degree, x);
            let dx = dp / d2p;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    nodes
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p0 = 1.0;
    let mut p1 = x;
    let mut d0 = 0.0;
    let mut d1 = 1.0;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        let d2 = d0 + (2.0 * kf - 1.0) * p1;
        p0 = p1;
        p1 = p2;
        d0 = d1;
        d1 = d2;
    }
    (p1, d1)
}

fn legendre_d2(n: usize, x: f64) -> (f64, f64, f64) {
    // second derivative from the Legendre ODE, valid off the endpoints
    let (p, dp) = legendre_with_derivative(n, x);
    let nf = n as f64;
    let d2p = (2.0 * x * dp - nf * (nf + 1.0) * p) / (1.0 - x * x);
    (p, dp, d2p)
}

/// Orthonormal Legendre polynomial `sqrt((2n+1)/2) P_n` on [-1, 1].
pub fn orthonormal_legendre(n: usize, x: f64) -> (f64, f64) {
    let (p, dp) = legendre_with_derivative(n, x);
    let c = ((2 * n + 1) as f64 / 2.0).sqrt();
    (c * p, c * dp)
}

/// Values and derivatives of the Lagrange basis through `nodes`, at `x`.
pub fn lagrange_basis(nodes: &[f64], x: f64) -> (Vec<f64>, Vec<f64>) {
    let n = nodes.len();
    let mut val = vec![0.0; n];
    let mut der = vec![0.0; n];
    for j in 0..n {
        let mut v = 1.0;
        for (m, &xm) in nodes.iter().enumerate() {
            if m != j {
                v *= (x - xm) / (nodes[j] - xm);
            }
        }
        val[j] = v;
        let mut d = 0.0;
        for (i, &xi) in nodes.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut prod = 1.0 / (nodes[j] - xi);
            for (m, &xm) in nodes.iter().enumerate() {
                if m != j && m != i {
                    prod *= (x - xm) / (nodes[j] - xm);
                }
            }
            d += prod;
        }
        der[j] = d;
    }
    (val, der)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        for n in 1..8 {
            let rule = GaussLegendre::new(n);
            for deg in 0..(2 * n) {
                let num: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| w * x.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((num - exact).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn lobatto_nodes_are_symmetric_and_include_endpoints() {
        let nodes = gauss_lobatto_nodes(4);
        assert_eq!(nodes.len(), 5);
        assert_eq!(nodes[0], -1.0);
        assert_eq!(nodes[4], 1.0);
        assert_eq!(nodes[2], 0.0);
        assert!((nodes[3] - (3.0f64 / 7.0).sqrt()).abs() < 1e-14);
        assert!((nodes[1] + nodes[3]).abs() < 1e-15);
    }

    #[test]
    fn lagrange_basis_is_a_partition_of_unity() {
        let nodes = gauss_lobatto_nodes(3);
        for &x in &[-0.9, -0.2, 0.33, 0.71] {
            let (v, d) = lagrange_basis(&nodes, x);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(d.iter().sum::<f64>().abs() < 1e-13);
        }
    }
}
