//! Mollified bumps, the temporal cutoff and the three families of
//! pathological trajectories with their explicit controls.

use crate::error::{invalid, KmpError, Result};
use crate::fields::{
    torus_delta, Atom, DensityPath, FieldKind, GridField, MeasureState, VectorField,
};
use crate::metric::{ball_modes, flat_from_coefficients, mode_norm, space_time_distance};
use crate::quad::GaussRule;
use crate::rng::seeded;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

const Q_SPLIT: f64 = 0.35;

#[inline]
fn zeta_of(q: f64) -> f64 {
    1.0 / (0.25 - q * q)
}

/// `1 / (1 + e^{-z})`.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

/// The radial bump `rho(x) = exp(-1/(1/4 - |x|^2)) / Z` on `|x| < 1/2`.
#[derive(Clone, Debug)]
pub struct Mollifier {
    dim: usize,
    log_norm: f64,
}

/// Fourier tables shared by all mollifiers of the same dimension.
static FT_TABLES: [OnceLock<Vec<f64>>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];

const FT_STEP: f64 = 0.02;
const FT_MAX: f64 = 40.0;

impl Mollifier {
    pub fn new(dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return invalid(format!("mollifier dimension must be 1, 2 or 3, got {dim}"));
        }
        let mut m = Mollifier { dim, log_norm: 0.0 };
        let z = m.radial(|_, zeta| (-zeta).exp(), 200.0);
        m.log_norm = z.ln();
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `log Z`.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn log_value(&self, q: f64) -> f64 {
        if q >= 0.5 {
            f64::NEG_INFINITY
        } else {
            -zeta_of(q) - self.log_norm
        }
    }

    pub fn value(&self, q: f64) -> f64 {
        self.log_value(q).exp()
    }

    /// `d/dq log rho(q)`.
    pub fn dlog(&self, q: f64) -> f64 {
        let z = zeta_of(q);
        -2.0 * q * z * z
    }

    /// `int_{|y|<1/2} f(|y|, zeta(|y|)) dy` for radial integrands; `zeta_max`
    /// bounds the region of `zeta = 1/(1/4 - q^2)` where `f` is not negligible.
    pub fn radial<F: Fn(f64, f64) -> f64>(&self, f: F, zeta_max: f64) -> f64 {
        let d = self.dim as i32;
        let omega = sphere_area(self.dim);
        let rule = GaussRule::new(8);
        let inner = |panels: usize| {
            rule.composite(0.0, Q_SPLIT, panels, |q| {
                f(q, zeta_of(q)) * omega * q.powi(d - 1)
            })
        };
        let z1 = zeta_of(Q_SPLIT);
        let zmax = zeta_max.max(z1 + 1.0);
        let outer = |panels: usize| {
            rule.composite(z1, zmax, panels, |z| {
                let q = (0.25 - 1.0 / z).sqrt();
                f(q, z) * omega * q.powi(d - 1) / (2.0 * q * z * z)
            })
        };
        let mut p1 = 16;
        let mut p2 = ((zmax - z1) / 2.0).ceil().max(8.0) as usize;
        let mut prev = inner(p1) + outer(p2);
        for _ in 0..8 {
            p1 *= 2;
            p2 *= 2;
            let next = inner(p1) + outer(p2);
            if (next - prev).abs() <= 1e-13 * next.abs().max(1e-300) {
                return next;
            }
            prev = next;
        }
        prev
    }

    /// `int |grad rho|^2 / rho^s dx`.
    pub fn power_integral(&self, s: f64) -> f64 {
        let rate = (2.0 - s).max(1e-3);
        let ln = self.log_norm;
        self.radial(
            |q, z| {
                let lr = -z - ln;
                let g = 2.0 * q * z * z;
                ((2.0 - s) * lr).exp() * g * g
            },
            4.0 + 80.0 / rate,
        )
    }

    /// `C_theta = int |grad rho|^2 / rho^{1+theta} dx`.
    pub fn c_theta(&self, theta: f64) -> f64 {
        self.power_integral(1.0 + theta)
    }

    /// Scaled bump `w r^{-d} rho(y / r)` at displacement `y`.
    pub fn scaled(&self, weight: f64, radius: f64, y: &[f64]) -> f64 {
        let r = norm(y);
        if radius <= 0.0 || r >= 0.5 * radius {
            return 0.0;
        }
        weight * (self.log_value(r / radius) - self.dim as f64 * radius.ln()).exp()
    }

    /// Value and gradient of the scaled bump.
    pub fn scaled_with_gradient(&self, weight: f64, radius: f64, y: &[f64]) -> (f64, [f64; 3]) {
        let r = norm(y);
        let mut g = [0.0; 3];
        if radius <= 0.0 || r >= 0.5 * radius {
            return (0.0, g);
        }
        let v = self.scaled(weight, radius, y);
        if r > 0.0 {
            let s = v * self.dlog(r / radius) / (radius * r);
            for (gi, yi) in g.iter_mut().zip(y) {
                *gi = s * yi;
            }
        }
        (v, g)
    }

    /// Energy of the control `g = v h / (c + v)` (power 2) or the weighted
    /// quantity `int v/(c+v) |h|^2` (power 1) for one bump of weight `w` and
    /// radius `R` over background `c`, with
    /// `h = (1/2) grad log v + (R'/R) y + s'`; `ds2 = |s'|^2`.
    pub fn bump_energy(
        &self,
        weight: f64,
        background: f64,
        radius: f64,
        dradius: f64,
        ds2: f64,
        power: i32,
    ) -> f64 {
        let d = self.dim as f64;
        let shift = weight.ln() - d * radius.ln() - background.ln() - self.log_norm;
        let ln = self.log_norm;
        let _ = ln;
        let integral = self.radial(
            |q, z| {
                let l = logistic(shift - z).powi(power);
                let a = 0.5 * (-2.0 * q * z * z) / radius + dradius * q;
                l * (a * a + ds2)
            },
            shift.max(4.0) + 60.0,
        );
        radius.powi(self.dim as i32) * integral
    }

    /// Fourier transform `rho_hat(kappa) = int rho(x) e^{-2 pi i kappa e_1 . x} dx`.
    pub fn fourier(&self, kappa: f64) -> f64 {
        let kappa = kappa.abs();
        if kappa >= FT_MAX - 2.0 * FT_STEP {
            return self.fourier_direct(kappa);
        }
        let table = FT_TABLES[self.dim - 1].get_or_init(|| {
            let m = (FT_MAX / FT_STEP) as usize + 1;
            (0..m)
                .map(|i| self.fourier_direct(i as f64 * FT_STEP))
                .collect()
        });
        let s = kappa / FT_STEP;
        let i = (s.floor() as usize).max(1).min(table.len() - 3);
        let t = s - i as f64;
        let (p0, p1, p2, p3) = (table[i - 1], table[i], table[i + 1], table[i + 2]);
        // Lagrange cubic on nodes -1, 0, 1, 2
        p0 * (-t * (t - 1.0) * (t - 2.0) / 6.0)
            + p1 * ((t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0)
            + p2 * (-(t + 1.0) * t * (t - 2.0) / 2.0)
            + p3 * ((t + 1.0) * t * (t - 1.0) / 6.0)
    }

    fn fourier_direct(&self, kappa: f64) -> f64 {
        if kappa == 0.0 {
            return 1.0;
        }
        let w = 2.0 * PI * kappa;
        let rule = GaussRule::new(8);
        let ln = self.log_norm;
        let rho = |r: f64| {
            if r >= 0.5 {
                0.0
            } else {
                (-zeta_of(r) - ln).exp()
            }
        };
        let panels = 40 + (kappa * 2.0) as usize;
        match self.dim {
            1 => 2.0 * rule.composite(0.0, 0.5, panels, |r| rho(r) * (w * r).cos()),
            2 => {
                let ang = GaussRule::new(96);
                let j0 =
                    |z: f64| ang.integrate(0.0, 0.5 * PI, |th| (z * th.sin()).cos()) * 2.0 / PI;
                2.0 * PI * rule.composite(0.0, 0.5, panels, |r| rho(r) * j0(w * r) * r)
            }
            _ => 4.0 * PI * rule.composite(0.0, 0.5, panels, |r| rho(r) * (w * r).sin() / w * r),
        }
    }
}

fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// The temporal cutoff: `psi = 1` on `t <= 3/2`, `psi(t) = t` on `t >= 2`,
/// nondecreasing and `C^3`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TemporalCutoff;

impl TemporalCutoff {
    pub fn value(&self, t: f64) -> f64 {
        if t <= 1.5 {
            1.0
        } else if t >= 2.0 {
            t
        } else {
            let s = 2.0 * (t - 1.5);
            let s4 = s.powi(4);
            let smooth = s.powi(6) - 3.0 * s.powi(5) + 2.5 * s4;
            let bump =
                210.0 * (s4 / 4.0 - 3.0 * s.powi(5) / 5.0 + s.powi(6) / 2.0 - s.powi(7) / 7.0);
            1.0 + 0.5 * (smooth + bump)
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if t <= 1.5 {
            0.0
        } else if t >= 2.0 {
            1.0
        } else {
            let s = 2.0 * (t - 1.5);
            let smooth = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
            smooth + 210.0 * (s * (1.0 - s)).powi(3)
        }
    }
}

/// `S(s) = f(s) / (f(s) + f(1-s))` with `f(s) = e^{-1/s}`; all derivatives
/// vanish at both ends.
pub fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        logistic(1.0 / (1.0 - s) - 1.0 / s)
    }
}

pub fn smoothstep_derivative(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let z = 1.0 / (1.0 - s) - 1.0 / s;
    let l = logistic(z);
    l * (1.0 - l) * (1.0 / (s * s) + 1.0 / ((1.0 - s) * (1.0 - s)))
}

/// `int_0^1 S'(s)^2 ds`.
pub fn smoothstep_energy() -> f64 {
    static E: OnceLock<f64> = OnceLock::new();
    *E.get_or_init(|| {
        GaussRule::new(16).composite(0.0, 1.0, 64, |s| smoothstep_derivative(s).powi(2))
    })
}

fn wrap(p: [f64; 3], dim: usize) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..dim {
        out[i] = p[i].rem_euclid(1.0);
    }
    out
}

fn torus_displacement(a: &[f64; 3], b: &[f64; 3], dim: usize) -> [f64; 3] {
    let mut d = [0.0; 3];
    for i in 0..dim {
        d[i] = torus_delta(b[i], a[i]);
    }
    d
}

pub fn torus_distance(a: &[f64; 3], b: &[f64; 3], dim: usize) -> f64 {
    norm(&torus_displacement(a, b, dim)[..dim])
}

/// Piecewise geodesic path on the torus through optional waypoints, each leg
/// reparametrized by the smoothstep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Route {
    pub dim: usize,
    pub start: [f64; 3],
    pub legs: Vec<[f64; 3]>,
}

impl Route {
    pub fn geodesic(a: [f64; 3], b: [f64; 3], dim: usize) -> Self {
        Route {
            dim,
            start: a,
            legs: vec![torus_displacement(&a, &b, dim)],
        }
    }

    pub fn via(a: [f64; 3], w: [f64; 3], b: [f64; 3], dim: usize) -> Self {
        Route {
            dim,
            start: a,
            legs: vec![
                torus_displacement(&a, &w, dim),
                torus_displacement(&w, &b, dim),
            ],
        }
    }

    fn leg(&self, s: f64) -> (usize, f64) {
        let n = self.legs.len() as f64;
        let x = (s.clamp(0.0, 1.0) * n).min(n - 1e-15);
        let i = (x.floor() as usize).min(self.legs.len() - 1);
        (i, x - i as f64)
    }

    pub fn position(&self, s: f64) -> [f64; 3] {
        let (i, q) = self.leg(s);
        let mut p = self.start;
        for l in &self.legs[..i] {
            for a in 0..3 {
                p[a] += l[a];
            }
        }
        let w = smoothstep(q);
        for a in 0..3 {
            p[a] += w * self.legs[i][a];
        }
        wrap(p, self.dim)
    }

    pub fn velocity(&self, s: f64) -> [f64; 3] {
        let (i, q) = self.leg(s);
        let w = self.legs.len() as f64 * smoothstep_derivative(q);
        let mut v = [0.0; 3];
        for a in 0..3 {
            v[a] = w * self.legs[i][a];
        }
        v
    }

    pub fn end(&self) -> [f64; 3] {
        self.position(1.0)
    }

    /// `int_0^1 |y'(s)|^2 ds`.
    pub fn energy(&self) -> f64 {
        let n = self.legs.len() as f64;
        self.legs
            .iter()
            .map(|l| n * (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]))
            .sum::<f64>()
            * smoothstep_energy()
    }
}

/// Centre and radius of a bump, with their time derivatives.
#[derive(Clone, Copy, Debug)]
pub struct TrackState {
    pub center: [f64; 3],
    pub radius: f64,
    pub dcenter: [f64; 3],
    pub dradius: f64,
}

/// How a bump moves and breathes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Track {
    /// Shrinks to radius `sigma0 tau` before `t0 - lambda`, is carried along
    /// `route` during `[t0 - lambda, t0)` and grows again after `t0`.
    Spike {
        t0: f64,
        tau: f64,
        lambda: f64,
        sigma0: f64,
        route: Route,
    },
    /// Radius `sigma0 |t - t0|^{1/2}`; a point mass at `t0`.
    SqrtLimit {
        t0: f64,
        sigma0: f64,
        before: [f64; 3],
        after: [f64; 3],
    },
    /// Static at `positions[j]` on `[j tau, (j+1) tau)` except for the last
    /// `tau_prime` of each interval, spent along `routes[j]`.
    Hopping {
        sigma: f64,
        tau: f64,
        tau_prime: f64,
        positions: Vec<[f64; 3]>,
        routes: Vec<Route>,
    },
    /// Fixed radius, constant velocity.
    Drift {
        start: [f64; 3],
        velocity: [f64; 3],
        radius: f64,
        dim: usize,
    },
}

impl Track {
    pub fn state(&self, t: f64) -> TrackState {
        let zero = [0.0; 3];
        match self {
            Track::Spike {
                t0,
                tau,
                lambda,
                sigma0,
                route,
            } => {
                let psi = TemporalCutoff;
                let t1 = t0 - lambda;
                if t < t1 {
                    let dt = t1 - t;
                    let z = dt.sqrt() / tau;
                    let dr = if dt > 0.0 {
                        -sigma0 * psi.derivative(z) / (2.0 * dt.sqrt())
                    } else {
                        0.0
                    };
                    TrackState {
                        center: route.start,
                        radius: sigma0 * tau * psi.value(z),
                        dcenter: zero,
                        dradius: dr,
                    }
                } else if t < *t0 {
                    let s = (t - t1) / lambda;
                    let mut v = route.velocity(s);
                    for c in v.iter_mut() {
                        *c /= lambda;
                    }
                    TrackState {
                        center: route.position(s),
                        radius: sigma0 * tau,
                        dcenter: v,
                        dradius: 0.0,
                    }
                } else {
                    let dt = t - t0;
                    let z = dt.sqrt() / tau;
                    let dr = if dt > 0.0 {
                        sigma0 * psi.derivative(z) / (2.0 * dt.sqrt())
                    } else {
                        0.0
                    };
                    TrackState {
                        center: route.end(),
                        radius: sigma0 * tau * psi.value(z),
                        dcenter: zero,
                        dradius: dr,
                    }
                }
            }
            Track::SqrtLimit {
                t0,
                sigma0,
                before,
                after,
            } => {
                let dt = (t - t0).abs();
                let c = if t < *t0 { *before } else { *after };
                let dr = if dt > 0.0 {
                    (t - t0).signum() * sigma0 / (2.0 * dt.sqrt())
                } else {
                    0.0
                };
                TrackState {
                    center: c,
                    radius: sigma0 * dt.sqrt(),
                    dcenter: zero,
                    dradius: dr,
                }
            }
            Track::Hopping {
                sigma,
                tau,
                tau_prime,
                positions,
                routes,
            } => {
                let n = positions.len();
                let j = ((t / tau).floor().max(0.0) as usize).min(n - 1);
                let end = (j + 1) as f64 * tau;
                if j + 1 < n && t > end - tau_prime {
                    let s = (t - end + tau_prime) / tau_prime;
                    let mut v = routes[j].velocity(s);
                    for c in v.iter_mut() {
                        *c /= tau_prime;
                    }
                    TrackState {
                        center: routes[j].position(s),
                        radius: *sigma,
                        dcenter: v,
                        dradius: 0.0,
                    }
                } else {
                    TrackState {
                        center: positions[j],
                        radius: *sigma,
                        dcenter: zero,
                        dradius: 0.0,
                    }
                }
            }
            Track::Drift {
                start,
                velocity,
                radius,
                dim,
            } => {
                let mut c = *start;
                for a in 0..3 {
                    c[a] += t * velocity[a];
                }
                TrackState {
                    center: wrap(c, *dim),
                    radius: *radius,
                    dcenter: *velocity,
                    dradius: 0.0,
                }
            }
        }
    }

    /// Times where the state changes regime.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Track::Spike {
                t0, tau, lambda, ..
            } => {
                let t1 = t0 - lambda;
                let (a, b) = ((1.5 * tau).powi(2), (2.0 * tau).powi(2));
                vec![t1 - b, t1 - a, t1, *t0, t0 + a, t0 + b]
            }
            Track::SqrtLimit { t0, .. } => vec![*t0],
            Track::Hopping {
                tau,
                tau_prime,
                positions,
                ..
            } => (1..positions.len())
                .flat_map(|j| [j as f64 * tau - tau_prime, j as f64 * tau])
                .collect(),
            Track::Drift { .. } => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bump {
    pub weight: f64,
    pub track: Track,
}

/// `u(t, x) = c + sum_k w_k rho_{r_k(t)}(x - s_k(t))` on the torus.
#[derive(Clone, Debug)]
pub struct BumpField {
    pub dim: usize,
    pub horizon: f64,
    pub background: f64,
    pub bumps: Vec<Bump>,
    mollifier: Arc<Mollifier>,
    bounds: (f64, f64),
}

impl BumpField {
    pub fn new(dim: usize, horizon: f64, background: f64, bumps: Vec<Bump>) -> Result<Self> {
        let mollifier = Arc::new(Mollifier::new(dim)?);
        let mut field = BumpField {
            dim,
            horizon,
            background,
            bumps,
            mollifier,
            bounds: (background, background),
        };
        let peak = field.mollifier.value(0.0);
        let mut hi = background;
        for b in &field.bumps {
            let rmin = field.min_radius(b);
            hi += if rmin > 0.0 {
                b.weight * peak / rmin.powi(dim as i32)
            } else {
                f64::INFINITY
            };
        }
        field.bounds = (background, hi);
        Ok(field)
    }

    fn min_radius(&self, b: &Bump) -> f64 {
        match &b.track {
            Track::Spike { tau, sigma0, .. } => sigma0 * tau,
            Track::SqrtLimit { .. } => 0.0,
            Track::Hopping { sigma, .. } => *sigma,
            Track::Drift { radius, .. } => *radius,
        }
    }

    pub fn mollifier(&self) -> &Mollifier {
        &self.mollifier
    }

    pub fn mass(&self) -> f64 {
        self.background + self.bumps.iter().map(|b| b.weight).sum::<f64>()
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .bumps
            .iter()
            .flat_map(|b| b.track.breakpoints())
            .filter(|t| *t > 0.0 && *t < self.horizon)
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        v
    }

    fn displacement(&self, x: &[f64], c: &[f64; 3]) -> [f64; 3] {
        let mut y = [0.0; 3];
        for a in 0..self.dim {
            y[a] = torus_delta(x[a], c[a]);
        }
        y
    }

    /// `(u, grad u, sum_k v_k b_k, du/dt)` at `(t, x)`.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> (f64, [f64; 3], [f64; 3], f64) {
        let d = self.dim;
        let mut u = self.background;
        let mut grad = [0.0; 3];
        let mut flux = [0.0; 3];
        let mut dt = 0.0;
        for b in &self.bumps {
            let s = b.track.state(t);
            if s.radius <= 0.0 {
                continue;
            }
            let y = self.displacement(x, &s.center);
            let (v, g) = self
                .mollifier
                .scaled_with_gradient(b.weight, s.radius, &y[..d]);
            if v == 0.0 {
                continue;
            }
            u += v;
            let rate = s.dradius / s.radius;
            let mut ydotg = 0.0;
            for a in 0..d {
                grad[a] += g[a];
                flux[a] += v * (rate * y[a] + s.dcenter[a]);
                ydotg += y[a] * g[a];
            }
            // d/dt v = -div(v b) with b = (r'/r) y + s'
            let cdotg: f64 = (0..d).map(|a| s.dcenter[a] * g[a]).sum();
            dt -= rate * (d as f64 * v + ydotg) + cdotg;
        }
        (u, grad, flux, dt)
    }

    /// The explicit control `g = (1/2) grad log u + (sum_k v_k b_k) / u`.
    pub fn control_at(&self, t: f64, x: &[f64]) -> [f64; 3] {
        let (u, grad, flux, _) = self.evaluate(t, x);
        let mut g = [0.0; 3];
        for a in 0..self.dim {
            g[a] = (0.5 * grad[a] + flux[a]) / u;
        }
        g
    }

    /// Measure at time `t`: smooth part on a grid of side `n`, zero-radius
    /// bumps as atoms.
    pub fn measure(&self, t: f64, n: usize) -> MeasureState {
        let density =
            GridField::from_fn(self.dim, n, FieldKind::Density, |x| self.evaluate(t, x).0);
        let atoms = self
            .bumps
            .iter()
            .filter_map(|b| {
                let s = b.track.state(t);
                (s.radius <= 0.0).then_some(Atom {
                    pos: s.center,
                    weight: b.weight,
                })
            })
            .collect();
        MeasureState {
            dim: self.dim,
            density: Some(density),
            atoms,
        }
    }

    /// Exact Fourier coefficients at time `t` on the given modes.
    pub fn fourier(&self, t: f64, modes: &[[i64; 3]]) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = modes
            .iter()
            .map(|k| {
                if mode_norm(k) == 0.0 {
                    Complex64::new(self.background, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        for b in &self.bumps {
            let s = b.track.state(t);
            for (o, k) in out.iter_mut().zip(modes) {
                let phase: f64 = (0..self.dim).map(|a| k[a] as f64 * s.center[a]).sum();
                let amp = b.weight * self.mollifier.fourier(s.radius * mode_norm(k));
                *o += Complex64::from_polar(amp, -2.0 * PI * phase);
            }
        }
        out
    }

    pub fn control(self: &Arc<Self>) -> BumpControl {
        BumpControl(self.clone())
    }
}

impl DensityPath for BumpField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.evaluate(t, x).0
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.evaluate(t, x).3
    }
    fn gradient(&self, t: f64, x: &[f64]) -> [f64; 3] {
        self.evaluate(t, x).1
    }
    fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
    fn singular_times(&self) -> Vec<f64> {
        self.bumps
            .iter()
            .filter_map(|b| match &b.track {
                Track::Spike { t0, lambda, .. } if *lambda == 0.0 => Some(*t0),
                Track::SqrtLimit { t0, .. } => Some(*t0),
                _ => None,
            })
            .collect()
    }
}

/// The explicit control of a bump field as a vector field.
pub struct BumpControl(pub Arc<BumpField>);

impl VectorField for BumpControl {
    fn dim(&self) -> usize {
        self.0.dim
    }
    fn value(&self, t: f64, x: &[f64]) -> [f64; 3] {
        self.0.control_at(t, x)
    }
}

/// Jump of the atomic part at time `t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomJump {
    pub t: f64,
    pub before: Vec<Atom>,
    pub after: Vec<Atom>,
}

/// A relaxed measure `dt xi_t(dx)` given by a bump field (possibly with
/// point masses) and its recorded jumps.
#[derive(Clone, Debug)]
pub struct RelaxedMeasure {
    pub field: BumpField,
    pub jumps: Vec<AtomJump>,
}

impl RelaxedMeasure {
    /// `(t_k, |xi_{t_k} - xi_{t_k-}|_TV)` from the atom lists.
    pub fn tv_jump_table(&self) -> Vec<(f64, f64)> {
        let dim = self.field.dim;
        self.jumps
            .iter()
            .map(|j| {
                let before = MeasureState {
                    dim,
                    density: None,
                    atoms: j.before.clone(),
                };
                let after = MeasureState {
                    dim,
                    density: None,
                    atoms: j.after.clone(),
                };
                (
                    j.t,
                    crate::fields::tv_distance(&after, &before).unwrap_or(f64::NAN),
                )
            })
            .collect()
    }
}

/// Data of the `d = 1` construction.
#[derive(Clone, Debug)]
pub struct SingularConstruction {
    pub path: Arc<BumpField>,
    pub limit: RelaxedMeasure,
}

/// `u^n = 1 + rho_{r_{n,t}}(x - x0)` with `r_{n,t} = sigma0 n^{-1} psi(n |t - t0|^{1/2})`.
pub fn build_singular_1d(
    n: usize,
    t0: f64,
    x0: f64,
    sigma0: f64,
    horizon: f64,
) -> Result<SingularConstruction> {
    if n == 0 {
        return invalid("n must be positive");
    }
    if !(sigma0 > 0.0 && sigma0 < 0.5 / horizon.sqrt()) {
        return invalid(format!(
            "sigma0 must lie in (0, 1/(2 sqrt T)), got {sigma0}"
        ));
    }
    if !(0.0..=horizon).contains(&t0) {
        return invalid("t0 must lie in [0, T]");
    }
    let c = [x0.rem_euclid(1.0), 0.0, 0.0];
    let tau = 1.0 / n as f64;
    let track = Track::Spike {
        t0,
        tau,
        lambda: 0.0,
        sigma0,
        route: Route::geodesic(c, c, 1),
    };
    let path = Arc::new(BumpField::new(
        1,
        horizon,
        1.0,
        vec![Bump { weight: 1.0, track }],
    )?);
    let limit_track = Track::SqrtLimit {
        t0,
        sigma0,
        before: c,
        after: c,
    };
    let limit = RelaxedMeasure {
        field: BumpField::new(
            1,
            horizon,
            1.0,
            vec![Bump {
                weight: 1.0,
                track: limit_track,
            }],
        )?,
        jumps: Vec::new(),
    };
    Ok(SingularConstruction { path, limit })
}

/// Parameters of the `d = 2` jump construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JumpSpec2D {
    pub eps: Vec<f64>,
    pub times: Vec<f64>,
    pub a: Vec<[f64; 2]>,
    pub b: Vec<[f64; 2]>,
    pub gamma: f64,
    /// Number of jumps kept.
    pub n: usize,
    pub m: f64,
    pub sigma0: f64,
    pub horizon: f64,
}

impl JumpSpec2D {
    pub fn theta(&self) -> f64 {
        1.0 - self.gamma
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.eps.len();
        if self.times.len() != k || self.a.len() != k || self.b.len() != k {
            return invalid("jump lists must have equal length");
        }
        if self.n == 0 || self.n > k {
            return invalid("number of kept jumps must be in 1..=list length");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return invalid("gamma must lie in (0, 1)");
        }
        if !(self.sigma0 > 0.0 && self.sigma0 < 0.5 / self.horizon.sqrt()) {
            return invalid("sigma0 must lie in (0, 1/(2 sqrt T))");
        }
        if !(self.m >= 1.0) {
            return invalid("m must be at least 1");
        }
        for i in 0..k {
            if !(self.eps[i] > 0.0) {
                return invalid("jump sizes must be positive");
            }
            if !(self.times[i] > 0.0 && self.times[i] < self.horizon) {
                return invalid("jump times must lie in (0, T)");
            }
            let (pa, pb) = (lift(self.a[i]), lift(self.b[i]));
            if torus_distance(&pa, &pb, 2) < 1e-12 {
                return invalid("jump endpoints must differ");
            }
            for j in 0..i {
                if (self.times[i] - self.times[j]).abs() < 1e-12 {
                    return invalid("jump times must be distinct");
                }
            }
        }
        Ok(())
    }

    /// `(tau_k, lambda_k)` for jump `k`.
    pub fn parameters(&self, k: usize) -> (f64, f64) {
        let th = self.theta();
        (
            1.0 / self.m,
            self.eps[k].powf((th - 1.0) / 2.0) / self.m.powf(2.0 - th),
        )
    }

    /// `sum_{k > n} eps_k^gamma` over the stored list.
    pub fn tail(&self) -> f64 {
        self.eps[self.n..].iter().map(|e| e.powf(self.gamma)).sum()
    }
}

fn lift(p: [f64; 2]) -> [f64; 3] {
    [p[0].rem_euclid(1.0), p[1].rem_euclid(1.0), 0.0]
}

/// Weighted cost bound for one spike (up to a constant).
pub fn spike_bound(eps: f64, tau: f64, lambda: f64, theta: f64) -> f64 {
    eps.powf(1.0 - theta) * (1.0 + lambda / tau.powf(2.0 - 2.0 * theta))
        + eps * (1.0 + eps.ln().abs())
        + tau * tau / lambda
}

/// Cost bound of one spike after the parameter choice in `m`.
pub fn spike_asymptotic(eps: f64, m: f64, theta: f64) -> f64 {
    eps.powf(1.0 - theta) * (1.0 + eps.powf((theta - 1.0) / 2.0) * m.powf(-theta))
        + eps * (1.0 + eps.ln().abs())
        + eps.powf((1.0 - theta) / 2.0) * m.powf(-theta)
}

#[derive(Clone, Debug)]
pub struct JumpConstruction {
    pub path: Arc<BumpField>,
    pub limit: RelaxedMeasure,
    /// `(tau_k, lambda_k)` per kept jump.
    pub parameters: Vec<(f64, f64)>,
    /// Pairs of bumps whose supports met at some sampled time.
    pub overlaps: usize,
    pub tail: f64,
}

pub fn build_jump_2d(spec: &JumpSpec2D) -> Result<JumpConstruction> {
    spec.validate()?;
    let mut bumps = Vec::new();
    let mut limit_bumps = Vec::new();
    let mut jumps = Vec::new();
    let mut parameters = Vec::new();
    for k in 0..spec.n {
        let (tau, lambda) = spec.parameters(k);
        let t0 = spec.times[k];
        if t0 - lambda - (2.0 * tau).powi(2) <= 0.0 {
            return invalid(format!(
                "m = {} too small: jump {k} transition starts before t = 0",
                spec.m
            ));
        }
        let (a, b) = (lift(spec.a[k]), lift(spec.b[k]));
        bumps.push(Bump {
            weight: spec.eps[k],
            track: Track::Spike {
                t0,
                tau,
                lambda,
                sigma0: spec.sigma0,
                route: Route::geodesic(a, b, 2),
            },
        });
        limit_bumps.push(Bump {
            weight: spec.eps[k],
            track: Track::SqrtLimit {
                t0,
                sigma0: spec.sigma0,
                before: a,
                after: b,
            },
        });
        jumps.push(AtomJump {
            t: t0,
            before: vec![Atom {
                pos: a,
                weight: spec.eps[k],
            }],
            after: vec![Atom {
                pos: b,
                weight: spec.eps[k],
            }],
        });
        parameters.push((tau, lambda));
    }
    let path = Arc::new(BumpField::new(2, spec.horizon, 1.0, bumps)?);
    let mut overlaps = 0;
    for i in 0..spec.n {
        for j in 0..i {
            let hit = (0..=512).any(|s| {
                let t = spec.horizon * s as f64 / 512.0;
                let (si, sj) = (path.bumps[i].track.state(t), path.bumps[j].track.state(t));
                torus_distance(&si.center, &sj.center, 2) < 0.5 * (si.radius + sj.radius)
            });
            if hit {
                overlaps += 1;
            }
        }
    }
    if overlaps > 0 {
        log::warn!("{overlaps} pairs of spikes overlap; the cost is bounded by convexity");
    }
    let limit = RelaxedMeasure {
        field: BumpField::new(2, spec.horizon, 1.0, limit_bumps)?,
        jumps,
    };
    Ok(JumpConstruction {
        path,
        limit,
        parameters,
        overlaps,
        tail: spec.tail(),
    })
}

/// Time integral of `bump_energy` along one bump's track, split at the
/// track's breakpoints and refined until the relative change is below `tol`.
pub fn track_energy(
    mol: &Mollifier,
    bump: &Bump,
    background: f64,
    horizon: f64,
    power: i32,
    tol: f64,
) -> f64 {
    let mut cuts: Vec<f64> = bump
        .track
        .breakpoints()
        .into_iter()
        .filter(|t| *t > 0.0 && *t < horizon)
        .collect();
    cuts.push(0.0);
    cuts.push(horizon);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let rule = GaussRule::new(8);
    let integrand = |t: f64| {
        let s = bump.track.state(t);
        let ds2: f64 = s.dcenter.iter().map(|v| v * v).sum();
        mol.bump_energy(bump.weight, background, s.radius, s.dradius, ds2, power)
    };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        // t = a + s^2 on the left half and t = b - s^2 on the right half
        // absorbs the inverse square-root growth of the radius derivative
        let seg = |panels: usize| {
            let mid = 0.5 * (a + b);
            let half = (mid - a).sqrt();
            let left = rule.composite(0.0, half, panels, |s| 2.0 * s * integrand(a + s * s));
            let right = rule.composite(0.0, half, panels, |s| 2.0 * s * integrand(b - s * s));
            left + right
        };
        let mut p = 8;
        let mut prev = seg(p);
        for _ in 0..8 {
            p *= 2;
            let next = seg(p);
            let done = (next - prev).abs() <= tol * next.abs().max(1e-300);
            prev = next;
            if done {
                break;
            }
        }
        total += prev;
    }
    total
}

/// Weak residual of `du = (1/2) Delta u - div(u g)` against Fourier test
/// functions: `max_k |<phi, u_T> - <phi, u_0> - int (1/2)<Delta phi, u> + <grad phi, u g> dt|`.
pub fn weak_skeleton_residual(
    field: &BumpField,
    n: usize,
    modes: &[[i64; 3]],
    panels: usize,
) -> f64 {
    let d = field.dim;
    let len = n.pow(d as u32);
    let horizon = field.horizon;
    let nodes: Vec<[f64; 3]> = (0..len)
        .map(|i| crate::fields::node_position(d, n, i))
        .collect();
    let waves: Vec<Vec<Complex64>> = modes
        .iter()
        .map(|k| {
            nodes
                .iter()
                .map(|x| {
                    Complex64::from_polar(
                        1.0,
                        2.0 * PI * (0..d).map(|a| k[a] as f64 * x[a]).sum::<f64>(),
                    )
                })
                .collect()
        })
        .collect();
    // (<e_k, u>, <(1/2) Delta e_k, u> + <grad e_k, u g>) with e_k = exp(2 pi i k.x)
    let pair = |t: f64| -> Vec<(Complex64, Complex64)> {
        let mut acc = vec![(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)); modes.len()];
        for (i, x) in nodes.iter().enumerate() {
            let (u, grad, flux, _) = field.evaluate(t, &x[..d]);
            for (m, k) in modes.iter().enumerate() {
                let e = waves[m][i];
                let k2: f64 = (0..d).map(|a| (k[a] as f64).powi(2)).sum();
                // u g = (1/2) grad u + flux
                let dot: f64 = (0..d)
                    .map(|a| k[a] as f64 * (0.5 * grad[a] + flux[a]))
                    .sum();
                acc[m].0 += e * u;
                acc[m].1 += e * Complex64::new(-2.0 * PI * PI * k2 * u, 2.0 * PI * dot);
            }
        }
        let w = 1.0 / len as f64;
        acc.into_iter().map(|(a, b)| (a * w, b * w)).collect()
    };
    let mut cuts = field.breakpoints();
    cuts.insert(0, 0.0);
    cuts.push(horizon);
    let rule = GaussRule::new(8);
    let mut times = Vec::new();
    for w in cuts.windows(2) {
        let h = (w[1] - w[0]) / panels as f64;
        for p in 0..panels {
            for (t, wt) in rule.mapped(w[0] + h * p as f64, w[0] + h * (p + 1) as f64) {
                times.push((t, wt));
            }
        }
    }
    let vals = crate::exec::map_replicas(crate::exec::ExecMode::default(), times.len(), |i| {
        pair(times[i].0)
    });
    let start = pair(0.0);
    let end = pair(horizon);
    let mut worst: f64 = 0.0;
    for m in 0..modes.len() {
        let integral: Complex64 = times.iter().zip(&vals).map(|((_, w), v)| v[m].1 * *w).sum();
        worst = worst.max((end[m].0 - start[m].0 - integral).norm());
    }
    worst
}

/// Parameters of the `d >= 3` construction.
#[derive(Clone, Debug)]
pub struct Relaxed3DSpec {
    pub target: BumpField,
    pub floor: f64,
    pub mass_cap: f64,
    /// `sigma_n = sigma_scale (2/n)^sigma_power`.
    pub sigma_scale: f64,
    pub sigma_power: f64,
    /// Spatial cutoff used by the greedy quantization.
    pub quant_k_max: usize,
    /// Candidate centres per axis.
    pub candidates: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Schedule {
    pub tau: f64,
    pub tau_prime: f64,
    pub points: usize,
    pub sigma: f64,
}

impl Relaxed3DSpec {
    pub fn new(target: BumpField, floor: f64, mass_cap: f64) -> Self {
        Relaxed3DSpec {
            target,
            floor,
            mass_cap,
            sigma_scale: 0.05,
            sigma_power: 6.0,
            quant_k_max: 4,
            candidates: 12,
            seed: 7,
        }
    }

    pub fn schedule(&self, n: usize) -> Schedule {
        let t = self.target.horizon;
        let nf = n as f64;
        Schedule {
            tau: t / nf,
            tau_prime: t / (nf * nf),
            points: n,
            sigma: self.sigma_scale * (2.0 / nf).powf(self.sigma_power),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.dim < 3 {
            return invalid("the relaxed construction needs d >= 3");
        }
        if !(self.floor > 0.0) || self.target.background + 1e-12 < self.floor {
            return invalid("target must dominate the floor c dt dx");
        }
        if self.target.mass() > self.mass_cap {
            return invalid("target energy exceeds the mass cap");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelaxedManifest {
    pub n: usize,
    pub schedule: Schedule,
    pub centers: Vec<Vec<[f64; 3]>>,
    pub reroutes: usize,
    pub min_separation: f64,
}

/// Costs of the `d >= 3` path: `lower` is the exact optimal cost of the
/// static phases, `upper` the cost of the explicit control over `[0, T]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RelaxedCost {
    pub lower: f64,
    pub upper: f64,
    pub static_rate: f64,
    pub transition: f64,
}

#[derive(Clone, Debug)]
pub struct RelaxedConstruction {
    pub path: Arc<BumpField>,
    pub manifest: RelaxedManifest,
}

/// Greedy choice of `count` centres of weight `w` from a candidate grid
/// minimizing the Fourier surrogate distance to `target` (mode zero ignored).
fn quantize(
    modes: &[[i64; 3]],
    target: &[Complex64],
    count: usize,
    weight: f64,
    candidates: &[[f64; 3]],
    dim: usize,
) -> Vec<[f64; 3]> {
    let phases: Vec<Vec<Complex64>> = candidates
        .iter()
        .map(|c| {
            modes
                .iter()
                .map(|k| {
                    let ph: f64 = (0..dim).map(|a| k[a] as f64 * c[a]).sum();
                    Complex64::from_polar(weight, -2.0 * PI * ph)
                })
                .collect()
        })
        .collect();
    let inv: Vec<f64> = modes
        .iter()
        .map(|k| {
            if mode_norm(k) == 0.0 {
                0.0
            } else {
                1.0 / (2.0 * PI * mode_norm(k))
            }
        })
        .collect();
    let mut residual = target.to_vec();
    let mut used = vec![false; candidates.len()];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let costs =
            crate::exec::map_replicas(crate::exec::ExecMode::default(), candidates.len(), |c| {
                if used[c] {
                    return f64::INFINITY;
                }
                residual
                    .iter()
                    .zip(&phases[c])
                    .zip(&inv)
                    .map(|((r, p), w)| (r - p).norm() * w)
                    .sum::<f64>()
            });
        let best = costs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        used[best] = true;
        for (r, p) in residual.iter_mut().zip(&phases[best]) {
            *r -= p;
        }
        out.push(candidates[best]);
    }
    out
}

/// Pair points of consecutive slices, nearest pairs first.
fn match_points(a: &[[f64; 3]], b: &[[f64; 3]], dim: usize) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            pairs.push((torus_distance(p, q, dim), i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut to = vec![usize::MAX; a.len()];
    let mut taken = vec![false; b.len()];
    for (_, i, j) in pairs {
        if to[i] == usize::MAX && !taken[j] {
            to[i] = j;
            taken[j] = true;
        }
    }
    to
}

fn min_route_separation(routes: &[Route], dim: usize) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut who = 0;
    for s in 0..=256 {
        let pts: Vec<[f64; 3]> = routes
            .iter()
            .map(|r| r.position(s as f64 / 256.0))
            .collect();
        for i in 0..pts.len() {
            for j in 0..i {
                let d = torus_distance(&pts[i], &pts[j], dim);
                if d < best {
                    best = d;
                    who = i;
                }
            }
        }
    }
    (best, who)
}

pub const REROUTE_CAP: usize = 100;

/// Build `u^n` for the relaxed target under the schedule at step `n`.
pub fn build_relaxed_3d(spec: &Relaxed3DSpec, n: usize) -> Result<RelaxedConstruction> {
    spec.validate()?;
    if n < 1 {
        return invalid("n must be positive");
    }
    let dim = spec.target.dim;
    let sch = spec.schedule(n);
    let horizon = spec.target.horizon;
    let extra = spec.target.mass() - spec.floor;
    let weight = extra / sch.points as f64;
    let modes = ball_modes(dim, spec.quant_k_max);
    let per_axis = spec.candidates;
    let cand: Vec<[f64; 3]> = (0..per_axis.pow(dim as u32))
        .map(|i| {
            let mut p = [0.0; 3];
            let mut r = i;
            for a in 0..dim {
                p[a] = ((r % per_axis) as f64 + 0.5) / per_axis as f64;
                r /= per_axis;
            }
            p
        })
        .collect();
    if sch.points > cand.len() {
        return invalid("more centres requested than candidate positions");
    }
    let rule = GaussRule::new(16);
    let mut centers: Vec<Vec<[f64; 3]>> = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b) = (k as f64 * sch.tau, ((k + 1) as f64 * sch.tau).min(horizon));
        let mut avg = vec![Complex64::new(0.0, 0.0); modes.len()];
        for (t, w) in rule.mapped(a, b) {
            for (o, c) in avg.iter_mut().zip(spec.target.fourier(t, &modes)) {
                *o += c * (w / (b - a));
            }
        }
        avg[0] = Complex64::new(0.0, 0.0);
        let mut pts = quantize(&modes, &avg, sch.points, weight, &cand, dim);
        if let Some(prev) = centers.last() {
            let to = match_points(prev, &pts, dim);
            pts = to.iter().map(|&j| pts[j]).collect();
        }
        centers.push(pts);
    }
    let mut rng = seeded(spec.seed ^ n as u64);
    let mut reroutes = 0;
    let mut routes_per_step: Vec<Vec<Route>> = Vec::new();
    let mut min_sep = f64::INFINITY;
    for k in 0..n.saturating_sub(1) {
        let mut routes: Vec<Route> = (0..sch.points)
            .map(|l| Route::geodesic(centers[k][l], centers[k + 1][l], dim))
            .collect();
        loop {
            let (sep, who) = if routes.len() > 1 {
                min_route_separation(&routes, dim)
            } else {
                (f64::INFINITY, 0)
            };
            if sep > 2.0 * sch.sigma {
                min_sep = min_sep.min(sep);
                break;
            }
            reroutes += 1;
            if reroutes > REROUTE_CAP {
                return Err(KmpError::NonConvergence {
                    iterations: reroutes,
                    residual: sep,
                });
            }
            let mut w = [0.0; 3];
            for c in w.iter_mut().take(dim) {
                *c = rng.gen::<f64>();
            }
            routes[who] = Route::via(centers[k][who], w, centers[k + 1][who], dim);
        }
        routes_per_step.push(routes);
    }
    for pts in &centers {
        for i in 0..pts.len() {
            for j in 0..i {
                min_sep = min_sep.min(torus_distance(&pts[i], &pts[j], dim));
            }
        }
    }
    if !(min_sep > 2.0 * sch.sigma) {
        return invalid(format!(
            "sigma {} too large for centre separation {min_sep}",
            sch.sigma
        ));
    }
    let bumps = (0..sch.points)
        .map(|l| Bump {
            weight,
            track: Track::Hopping {
                sigma: sch.sigma,
                tau: sch.tau,
                tau_prime: sch.tau_prime,
                positions: centers.iter().map(|c| c[l]).collect(),
                routes: routes_per_step.iter().map(|r| r[l].clone()).collect(),
            },
        })
        .collect();
    let path = Arc::new(BumpField::new(dim, horizon, spec.floor, bumps)?);
    let manifest = RelaxedManifest {
        n,
        schedule: sch,
        centers,
        reroutes,
        min_separation: min_sep,
    };
    Ok(RelaxedConstruction { path, manifest })
}

impl RelaxedConstruction {
    /// Static phases carry the optimal control `(1/2) grad log u`; during
    /// transitions the explicit control adds `sum v y' / (tau' u)`, whose
    /// cross term with the radial part integrates to zero.
    pub fn cost(&self) -> RelaxedCost {
        let p = &self.path;
        let sch = self.manifest.schedule;
        let mol = p.mollifier();
        let w = p.bumps.first().map_or(0.0, |b| b.weight);
        let static_rate =
            0.5 * p.bumps.len() as f64 * mol.bump_energy(w, p.background, sch.sigma, 0.0, 0.0, 2);
        let speed_weight = 0.5 * mol.bump_energy(w, p.background, sch.sigma, 0.0, 1.0, 2)
            - 0.5 * mol.bump_energy(w, p.background, sch.sigma, 0.0, 0.0, 2);
        let route_energy: f64 = p
            .bumps
            .iter()
            .map(|b| match &b.track {
                Track::Hopping { routes, .. } => routes.iter().map(|r| r.energy()).sum::<f64>(),
                _ => 0.0,
            })
            .sum();
        let transition = speed_weight * route_energy / sch.tau_prime;
        let n = self.manifest.n as f64;
        let static_time = p.horizon - (n - 1.0) * sch.tau_prime;
        RelaxedCost {
            lower: static_rate * static_time,
            upper: static_rate * p.horizon + transition,
            static_rate,
            transition,
        }
    }

    /// Space-time surrogate distance to the target with cutoffs `k_max`, `k0_max`.
    pub fn distance_to(
        &self,
        target: &BumpField,
        k_max: usize,
        k0_max: usize,
        time_nodes: usize,
    ) -> f64 {
        let modes = ball_modes(target.dim, k_max);
        space_time_distance(
            &modes,
            target.horizon,
            k0_max,
            time_nodes,
            |t| self.path.fourier(t, &modes),
            |t| target.fourier(t, &modes),
        )
    }
}

/// `W~` between two bump fields at a single time.
pub fn slice_distance(a: &BumpField, b: &BumpField, t: f64, k_max: usize) -> f64 {
    let modes = ball_modes(a.dim, k_max);
    flat_from_coefficients(&modes, &a.fourier(t, &modes), &b.fourier(t, &modes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mollifier_is_normalized() {
        for d in 1..=3 {
            let m = Mollifier::new(d).unwrap();
            let mass = m.radial(|q, _| m.value(q), 200.0);
            assert!((mass - 1.0).abs() < 1e-10, "d={d} {mass}");
            assert_eq!(m.value(0.5), 0.0);
            assert!((m.fourier(0.0) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mollifier_fourier_matches_grid_sum_in_1d() {
        let m = Mollifier::new(1).unwrap();
        let n = 4096;
        for &k in &[1.0, 3.0, 7.5, 20.0] {
            let direct: f64 = (0..n)
                .map(|i| {
                    let x = (i as f64 + 0.5) / n as f64 - 0.5;
                    m.value(x.abs()) * (2.0 * PI * k * x).cos()
                })
                .sum::<f64>()
                / n as f64;
            assert!((m.fourier(k) - direct).abs() < 1e-9, "{k}");
        }
    }

    #[test]
    fn power_integrals_converge() {
        let m = Mollifier::new(2).unwrap();
        for i in 1..10 {
            let th = i as f64 / 10.0;
            let v = m.power_integral(2.0 - th);
            assert!(v.is_finite() && v > 0.0);
        }
    }

    #[test]
    fn cutoff_shape() {
        let psi = TemporalCutoff;
        assert_eq!(psi.value(1.0), 1.0);
        assert_eq!(psi.value(1.5), 1.0);
        assert!((psi.value(2.0) - 2.0).abs() < 1e-14);
        assert_eq!(psi.value(3.0), 3.0);
        let mut prev = psi.value(1.4);
        for i in 0..=10_000 {
            let t = 1.4 + 0.7 * i as f64 / 10_000.0;
            let v = psi.value(t);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
        // derivative and its continuity at the junctions
        let h = 1e-6;
        for &t in &[1.6, 1.75, 1.9] {
            let fd = (psi.value(t + h) - psi.value(t - h)) / (2.0 * h);
            assert!((fd - psi.derivative(t)).abs() < 1e-7);
        }
        let second = |t: f64| (psi.derivative(t + h) - psi.derivative(t - h)) / (2.0 * h);
        assert!(second(1.5 + 2.0 * h).abs() < 1e-4 && second(2.0 - 2.0 * h).abs() < 1e-4);
        assert!(
            (psi.derivative(1.5) - 0.0).abs() < 1e-10 && (psi.derivative(2.0) - 1.0).abs() < 1e-10
        );
    }

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
        assert!(smoothstep_derivative(1e-3) < 1e-300);
        let h = 1e-6;
        let fd = (smoothstep(0.3 + h) - smoothstep(0.3 - h)) / (2.0 * h);
        assert!((fd - smoothstep_derivative(0.3)).abs() < 1e-7);
    }

    #[test]
    fn singular_path_basics() {
        let c = build_singular_1d(4, 0.5, 0.3, 0.45, 1.0).unwrap();
        let p = &c.path;
        for &t in &[0.0, 0.3, 0.49, 0.5, 0.52, 0.9] {
            let n = 2048;
            let mass: f64 = (0..n)
                .map(|i| p.value(t, &[i as f64 / n as f64]))
                .sum::<f64>()
                / n as f64;
            assert!((mass - 2.0).abs() < 1e-8, "{t} {mass}");
        }
        // exact agreement with the limit once |t - t0| >= 4/n^2
        for &t in &[0.0, 0.2, 0.75, 1.0] {
            for i in 0..50 {
                let x = [i as f64 / 50.0];
                assert!((p.value(t, &x) - c.limit.field.value(t, &x)).abs() < 1e-12);
            }
        }
        let m = c.limit.field.measure(0.5, 64);
        assert_eq!(m.atoms.len(), 1);
        assert!(build_singular_1d(4, 0.5, 0.3, 0.6, 1.0).is_err());
    }

    #[test]
    fn exact_time_derivative_matches_finite_difference() {
        let c = build_singular_1d(3, 0.5, 0.3, 0.45, 1.0).unwrap();
        let h = 1e-6;
        for &t in &[0.1, 0.2, 0.7] {
            for &x in &[0.28, 0.3, 0.33, 0.4] {
                let fd = (c.path.value(t + h, &[x]) - c.path.value(t - h, &[x])) / (2.0 * h);
                let ex = c.path.time_derivative(t, &[x]);
                assert!(
                    (fd - ex).abs() < 1e-5 * (1.0 + ex.abs()),
                    "{t} {x} {fd} {ex}"
                );
            }
        }
    }

    #[test]
    fn tv_table_cases() {
        let f = BumpField::new(2, 1.0, 1.0, Vec::new()).unwrap();
        let mut r = RelaxedMeasure {
            field: f,
            jumps: Vec::new(),
        };
        assert!(r.tv_jump_table().is_empty());
        let a = Atom {
            pos: [0.1, 0.2, 0.0],
            weight: 0.3,
        };
        let b = Atom {
            pos: [0.6, 0.2, 0.0],
            weight: 0.3,
        };
        r.jumps.push(AtomJump {
            t: 0.5,
            before: vec![a],
            after: vec![b],
        });
        r.jumps.push(AtomJump {
            t: 0.7,
            before: vec![a],
            after: vec![a],
        });
        let tab = r.tv_jump_table();
        assert_eq!(tab[0], (0.5, 0.6));
        assert_eq!(tab[1], (0.7, 0.0));
    }

    #[test]
    fn route_geodesic_wraps() {
        let r = Route::geodesic([0.9, 0.0, 0.0], [0.1, 0.0, 0.0], 1);
        assert!((r.legs[0][0] - 0.2).abs() < 1e-15);
        assert!(
            (r.position(0.5)[0] - 0.0).abs() < 1e-12 || (r.position(0.5)[0] - 1.0).abs() < 1e-12
        );
        let e = r.energy();
        let q = GaussRule::new(16).composite(0.0, 1.0, 64, |s| r.velocity(s)[0].powi(2));
        assert!((e - q).abs() < 1e-12);
    }
}
