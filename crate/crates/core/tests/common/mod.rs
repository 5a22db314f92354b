//! Test-side oracles. Nothing here calls into the solver code it checks:
//! the Newton solvers work from the fixed-point equations written out by
//! hand, and the bridge coefficients are recomputed from the scheme.

#![allow(dead_code)]

use direct_pf::model::{
    linearize, wrap_angle, Displacement, ModelParams, ObsLinearization, ObservationModel, ShipState,
};
use direct_pf::Result;

/// Damped Newton with a forward-difference Jacobian on a 2-vector equation.
pub fn newton2(start: [f64; 2], scale: f64, mut f: impl FnMut([f64; 2]) -> [f64; 2]) -> [f64; 2] {
    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
    let mut x = start;
    let mut r = f(x);
    for _ in 0..100 {
        if norm(r) < 1e-300 {
            break;
        }
        let h = 1e-7 * scale;
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut xp = x;
            xp[j] += h;
            let rp = f(xp);
            for i in 0..2 {
                jac[i][j] = (rp[i] - r[i]) / h;
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let step = [
            (jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
            (-jac[1][0] * r[0] + jac[0][0] * r[1]) / det,
        ];
        let mut lambda = 1.0;
        loop {
            let xn = [x[0] - lambda * step[0], x[1] - lambda * step[1]];
            let rn = f(xn);
            if norm(rn) < norm(r) || lambda < 1e-6 {
                let done = norm(rn) >= norm(r);
                x = xn;
                r = rn;
                if done {
                    return x;
                }
                break;
            }
            lambda *= 0.5;
        }
    }
    x
}

fn unit(lin: &ObsLinearization) -> ([f64; 2], [f64; 2]) {
    let u = [lin.f_x / lin.r, lin.f_y / lin.r];
    (u, [-u[1], u[0]])
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Solves the forward-step equations directly:
///
/// along the gradient `v1 u.(d - d_prev) + sigma (f(X+d) - b)/r = sqrt(v1 sigma (v1 + sigma)) xi_x`
/// with `v1 = s / r^2`, and across it `w.(d - d_prev) = sqrt(sigma) xi_y`.
pub fn newton_forward(state: &ShipState, b: f64, p: &ModelParams, xi: [f64; 2]) -> Displacement {
    let dp = [state.dx, state.dy];
    let sol = newton2(dp, dp[0].abs().max(dp[1].abs()).max(1e-3), |d| {
        let lin = linearize(state.x + d[0], state.y + d[1]).unwrap();
        let (u, w) = unit(&lin);
        let v1 = p.s / (lin.r * lin.r);
        let diff = [d[0] - dp[0], d[1] - dp[1]];
        let res = wrap_angle(lin.f - b);
        [
            v1 * dot(u, diff) + p.sigma * res / lin.r
                - (v1 * p.sigma * (v1 + p.sigma)).sqrt() * xi[0],
            dot(w, diff) - p.sigma.sqrt() * xi[1],
        ]
    });
    Displacement::new(sol[0], sol[1])
}

/// Solves the backward-step equations directly. With `u`, `w` taken at the
/// midpoint `X + d/2`, the component of `d` along `u` must equal the
/// precision-weighted combination of the observation law
/// `N(u.d - 2 (f - b)/r, 4 s/r^2)`, the first-leg law `N(2 u.d_prev, 4 sigma)` and
/// the endpoint law `N(u.d_tot, sigma)`, shifted by `xi_x` standard deviations;
/// likewise across, without the observation.
pub fn newton_backward(
    state_prev: &ShipState,
    d_tot: Displacement,
    b: f64,
    p: &ModelParams,
    xi: [f64; 2],
) -> Displacement {
    let dp = [state_prev.dx, state_prev.dy];
    let tot = [d_tot.dx, d_tot.dy];
    let sol = newton2(
        [2.0 * dp[0], 2.0 * dp[1]],
        tot[0].abs().max(tot[1].abs()).max(1e-3),
        |d| {
            let lin = linearize(state_prev.x + 0.5 * d[0], state_prev.y + 0.5 * d[1]).unwrap();
            let (u, w) = unit(&lin);
            let res = wrap_angle(lin.f - b);
            let (a1, v1) = (dot(u, d) - 2.0 * res / lin.r, 4.0 * p.s / (lin.r * lin.r));
            let (a2, v2) = (2.0 * dot(u, dp), 4.0 * p.sigma);
            let (a3, v3) = (dot(u, tot), p.sigma);
            let prec = 1.0 / v1 + 1.0 / v2 + 1.0 / v3;
            let mean = (a1 / v1 + a2 / v2 + a3 / v3) / prec;
            let prec_plus = 1.0 / v2 + 1.0 / v3;
            let mean_plus = (2.0 * dot(w, dp) / v2 + dot(w, tot) / v3) / prec_plus;
            [
                dot(u, d) - mean - xi[0] / prec.sqrt(),
                dot(w, d) - mean_plus - xi[1] / prec_plus.sqrt(),
            ]
        },
    );
    Displacement::new(sol[0], sol[1])
}

/// A linear observation `c . (x, y)` with no angle wrapping.
pub struct LinearObs {
    pub c: [f64; 2],
}

impl ObservationModel for LinearObs {
    fn linearize(&self, x: f64, y: f64) -> Result<ObsLinearization> {
        Ok(ObsLinearization {
            f: self.c[0] * x + self.c[1] * y,
            f_x: self.c[0],
            f_y: self.c[1],
            r: self.c[0].hypot(self.c[1]),
        })
    }
}

/// Balanced implicit coefficients for a path, from the scheme's definition.
pub fn bridge_coefficients(
    path: &[f64],
    drift: impl Fn(f64, f64) -> f64,
    slope: impl Fn(f64, f64) -> f64,
    sigma: f64,
    horizon: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = path.len() - 1;
    let delta = horizon / n as f64;
    let mut a = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (k, &x) in path[..n].iter().enumerate() {
        let t = k as f64 * delta;
        let factor = 1.0 - delta * slope(x, t);
        a.push(delta * drift(x, t) / factor);
        v.push(sigma * delta / (factor * factor));
    }
    (a, v)
}

/// `(lhs, rhs)` of the bridge quadratic-form identity.
pub fn bridge_quadratic_form(path: &[f64], a: &[f64], v: &[f64], xi: &[f64]) -> (f64, f64) {
    let lhs: f64 = (0..a.len())
        .map(|k| (path[k + 1] - path[k] - a[k]).powi(2) / v[k])
        .sum();
    let gap = path[path.len() - 1] - path[0] - a.iter().sum::<f64>();
    let rhs = xi.iter().map(|x| x * x).sum::<f64>() + gap * gap / v.iter().sum::<f64>();
    (lhs, rhs)
}

/// Sample mean and sample variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}
