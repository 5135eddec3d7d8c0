//! Slow-time grids and cubic-spline interpolation on them.

/// Sorted slow-time nodes `τ_k` spanning `[−τ_tail, τ_tail]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauGrid {
    nodes: Vec<f64>,
}

/// Default node count for branch and series grids.
pub const DEFAULT_GRID_POINTS: usize = 4001;

impl TauGrid {
    pub fn from_nodes(nodes: Vec<f64>) -> Self {
        assert!(nodes.len() >= 4, "a grid needs at least four nodes");
        assert!(nodes.windows(2).all(|w| w[0] < w[1]), "grid nodes must be strictly increasing");
        TauGrid { nodes }
    }

    pub fn uniform(tau_tail: f64, points: usize) -> Self {
        let n = points.max(4) - 1;
        let nodes = (0..=n).map(|k| -tau_tail + 2.0 * tau_tail * k as f64 / n as f64).collect();
        Self::from_nodes(nodes)
    }

    /// `τ = s·sinh(u)` with `u` uniform: spacing `≈ s·du` near the origin and
    /// proportional to `|τ|` in the tails.
    pub fn graded(tau_tail: f64, points: usize, scale: f64) -> Self {
        let n = points.max(4) - 1;
        let u_max = (tau_tail / scale).asinh();
        let mut nodes: Vec<f64> = (0..=n)
            .map(|k| {
                let u = -u_max + 2.0 * u_max * k as f64 / n as f64;
                scale * u.sinh()
            })
            .collect();
        nodes[0] = -tau_tail;
        nodes[n] = tau_tail;
        if n % 2 == 0 {
            nodes[n / 2] = 0.0;
        }
        Self::from_nodes(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.nodes[0]
    }

    pub fn last(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn contains(&self, tau: f64) -> bool {
        tau >= self.first() && tau <= self.last()
    }
}

/// Natural cubic spline through `(x_k, y_k)` on non-uniform nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// second derivatives at the nodes
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n, "spline needs matching node and value arrays");
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations
            let mut c_prime = vec![0.0; n];
            let mut d_prime = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let a = h0 / 6.0;
                let b = (h0 + h1) / 3.0;
                let c = h1 / 6.0;
                let d = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
                let denom = b - a * c_prime[i - 1];
                c_prime[i] = c / denom;
                d_prime[i] = (d - a * d_prime[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = d_prime[i] - c_prime[i] * m[i + 1];
            }
        }
        CubicSpline { x: x.to_vec(), y: y.to_vec(), m }
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h + ((1.0 - 3.0 * a * a) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }

    /// Spline derivative at node `k`.
    pub fn deriv_at_node(&self, k: usize) -> f64 {
        let n = self.x.len();
        if k + 1 < n {
            let h = self.x[k + 1] - self.x[k];
            (self.y[k + 1] - self.y[k]) / h - (2.0 * self.m[k] + self.m[k + 1]) * h / 6.0
        } else {
            let h = self.x[k] - self.x[k - 1];
            (self.y[k] - self.y[k - 1]) / h + (self.m[k - 1] + 2.0 * self.m[k]) * h / 6.0
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }
}
