//! Exponential tilt of the KMP dynamics with a cutoff, its simulation by
//! thinning, the Radon–Nikodym ledger and generator evaluation.

use crate::engine::{jump_values, EnergyConfig, FluxEvent, SimOptions, Trajectory};
use crate::error::{invalid, KmpError, Result};
use crate::fields::{ScalarField, SmoothPath};
use crate::lattice::{GreenKernel, Lattice};
use crate::moments;
use crate::quad::{cubic_stencil, GaussRule};
use crate::rng::KmpRng;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

/// `tau_K(r) = min(r, K)`.
#[inline]
pub fn tau(r: f64, k: f64) -> f64 {
    r.min(k)
}

/// `expm1(a)/a - 1`.
#[inline]
fn excess(a: f64) -> f64 {
    if a.abs() < 1e-3 {
        a / 2.0 + a * a / 6.0 + a * a * a / 24.0
    } else {
        a.exp_m1() / a - 1.0
    }
}

/// `phi(v) = v e^v - e^v + 1`.
fn phi(v: f64) -> f64 {
    if v.abs() < 0.5 {
        let mut term = v * v / 2.0;
        let mut sum = 0.0;
        let mut n = 2.0;
        while term.abs() > 1e-19 {
            sum += (n - 1.0) * term;
            n += 1.0;
            term *= v / n;
        }
        sum
    } else {
        v * v.exp() - v.exp_m1()
    }
}

/// `int_0^1 (e^{a p + b} - 1) dp`.
#[inline]
pub fn mean_rate_excess(a: f64, b: f64) -> f64 {
    b.exp_m1() + b.exp() * excess(a)
}

/// `int_0^1 phi(a p + b) dp` with `phi(v) = v e^v - e^v + 1`.
pub fn mean_entropy_density(a: f64, b: f64) -> f64 {
    if a.abs() <= 1.0 {
        let eb = b.exp();
        let mut sum = phi(b);
        let mut pow = 1.0;
        let mut fact = 1.0;
        for j in 1..40 {
            pow *= a;
            fact *= (j + 1) as f64;
            let term = eb * (b + j as f64 - 1.0) * pow / fact;
            sum += term;
            if term.abs() < 1e-19 {
                break;
            }
        }
        sum
    } else {
        let big = |v: f64| v * v.exp() - 2.0 * v.exp() + v;
        (big(a + b) - big(b)) / a
    }
}

/// Inverse-CDF sample from the density proportional to `e^{a p}` on [0, 1].
#[inline]
pub fn sample_fraction(a: f64, u: f64) -> f64 {
    if a.abs() < 1e-12 {
        u
    } else {
        ((u * a.exp_m1()).ln_1p() / a).clamp(0.0, 1.0)
    }
}

/// Weight of the initial law relative to the product equilibrium.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitialWeight {
    Finite(f64),
    /// The configuration violates the mass cap; the weight is `-inf`.
    Excluded,
}

/// Everything that defines the tilted dynamics.
#[derive(Clone)]
pub struct TiltSpec {
    pub lattice: Lattice,
    pub cutoff: f64,
    pub rho: f64,
    pub mass_cap: f64,
    pub delta: f64,
    pub bounds: (f64, f64),
    pub horizon: f64,
    /// `u_0` at the lattice sites.
    pub initial_profile: Vec<f64>,
    pub log_conditioning: f64,
    pub log_conditioning_se: f64,
    path: Option<SmoothPath>,
    slice_t0: f64,
    slice_dt: f64,
    /// `coef[s][e] = chi_K(t_s, m_e) (H(t_s, x_e) - H(t_s, y_e))`.
    coef: Vec<Vec<f64>>,
    /// Per-edge bound on `|coef|` valid for every `t` (cubic overshoot included).
    coef_bound: Vec<f64>,
}

impl std::fmt::Debug for TiltSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TiltSpec")
            .field("lattice", &self.lattice)
            .field("cutoff", &self.cutoff)
            .field("rho", &self.rho)
            .field("mass_cap", &self.mass_cap)
            .field("slices", &self.coef.len())
            .finish()
    }
}

/// Sum of absolute four-point Lagrange weights is at most 1.25 on the
/// interior interval; this factor turns slice maxima into bounds over time.
const CUBIC_OVERSHOOT: f64 = 1.25;

impl TiltSpec {
    /// Tilt towards the path `u` with control potential `H`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lattice: Lattice,
        path: SmoothPath,
        potential: &dyn ScalarField,
        cutoff: f64,
        rho: f64,
        mass_cap: f64,
        delta: f64,
        slices: usize,
    ) -> Result<Self> {
        if path.dim() != lattice.dim() || potential.dim() != lattice.dim() {
            return Err(KmpError::DimensionMismatch {
                expected: lattice.dim(),
                got: path.dim(),
            });
        }
        let bounds = path.bounds();
        if !(bounds.0 > 0.0) {
            return invalid("target path must be bounded away from zero");
        }
        if !(cutoff > 0.0 && rho > 0.0) {
            return invalid("cutoff and reference density must be positive");
        }
        let d = lattice.dim();
        let initial_profile: Vec<f64> = (0..lattice.num_sites())
            .map(|s| path.value(0.0, &lattice.position(s)[..d]))
            .collect();
        let mass0 = initial_profile.iter().sum::<f64>() * lattice.site_weight();
        if !(mass_cap > mass0) {
            return invalid(format!(
                "mass cap {mass_cap} must exceed the initial mass {mass0}"
            ));
        }
        let horizon = path.horizon();
        let slices = slices.max(2);
        let dt = horizon / (slices - 1) as f64;
        let coef: Vec<Vec<f64>> = (0..slices)
            .map(|s| {
                let t = dt * s as f64;
                let h: Vec<f64> = (0..lattice.num_sites())
                    .map(|x| potential.value(t, &lattice.position(x)[..d]))
                    .collect();
                (0..lattice.num_edges())
                    .map(|e| {
                        let (x, y) = lattice.edge(e);
                        let m = lattice.edge_midpoint(e);
                        let chi = moments::a_k(path.value(t, &m[..d]), cutoff);
                        chi * (h[x] - h[y])
                    })
                    .collect()
            })
            .collect();
        let mut spec = TiltSpec {
            lattice,
            cutoff,
            rho,
            mass_cap,
            delta,
            bounds,
            horizon,
            initial_profile,
            log_conditioning: 0.0,
            log_conditioning_se: 0.0,
            path: Some(path),
            slice_t0: 0.0,
            slice_dt: dt,
            coef,
            coef_bound: Vec::new(),
        };
        spec.coef_bound = spec.compute_bounds();
        Ok(spec)
    }

    /// Tilt given directly by edge coefficients on uniform time slices.
    pub fn from_coefficients(
        lattice: Lattice,
        initial_profile: Vec<f64>,
        cutoff: f64,
        rho: f64,
        mass_cap: f64,
        horizon: f64,
        coef: Vec<Vec<f64>>,
    ) -> Result<Self> {
        lattice.check_len(initial_profile.len())?;
        if coef.is_empty() || coef.iter().any(|c| c.len() != lattice.num_edges()) {
            return invalid("coefficient table must have one row of edge values per slice");
        }
        let dt = if coef.len() > 1 {
            horizon / (coef.len() - 1) as f64
        } else {
            1.0
        };
        let lo = initial_profile
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let hi = initial_profile.iter().cloned().fold(0.0, f64::max);
        let mut spec = TiltSpec {
            lattice,
            cutoff,
            rho,
            mass_cap,
            delta: 0.0,
            bounds: (lo, hi),
            horizon,
            initial_profile,
            log_conditioning: 0.0,
            log_conditioning_se: 0.0,
            path: None,
            slice_t0: 0.0,
            slice_dt: dt,
            coef,
            coef_bound: Vec::new(),
        };
        spec.coef_bound = spec.compute_bounds();
        Ok(spec)
    }

    fn compute_bounds(&self) -> Vec<f64> {
        let factor = if self.coef.len() >= 4 {
            CUBIC_OVERSHOOT
        } else {
            1.0
        };
        (0..self.lattice.num_edges())
            .map(|e| factor * self.coef.iter().map(|c| c[e].abs()).fold(0.0, f64::max))
            .collect()
    }

    pub fn path(&self) -> Option<&SmoothPath> {
        self.path.as_ref()
    }

    pub fn with_conditioning(mut self, log_prob: f64, std_err: f64) -> Self {
        self.log_conditioning = log_prob;
        self.log_conditioning_se = std_err;
        self
    }

    /// `C_{H,K}` such that `|vartheta| <= C / N`.
    pub fn theta_bound(&self) -> f64 {
        self.coef_bound.iter().cloned().fold(0.0, f64::max)
            * self.cutoff
            * self.lattice.side() as f64
    }

    /// Edge coefficient `chi_K (H(x) - H(y))` at time `t`.
    pub fn coefficient(&self, t: f64, e: usize) -> f64 {
        let (b, w, _) = cubic_stencil(self.slice_t0, self.slice_dt, self.coef.len(), t);
        let mut v = 0.0;
        for j in 0..4 {
            if w[j] != 0.0 && b + j < self.coef.len() {
                v += w[j] * self.coef[b + j][e];
            }
        }
        v
    }

    pub fn coefficients(&self, t: f64, out: &mut Vec<f64>) {
        let (b, w, _) = cubic_stencil(self.slice_t0, self.slice_dt, self.coef.len(), t);
        out.clear();
        out.resize(self.lattice.num_edges(), 0.0);
        for j in 0..4 {
            if w[j] != 0.0 && b + j < self.coef.len() {
                for (o, c) in out.iter_mut().zip(&self.coef[b + j]) {
                    *o += w[j] * c;
                }
            }
        }
    }

    /// `(alpha, beta)` with `vartheta = alpha p + beta`.
    #[inline]
    pub fn affine(&self, c: f64, a: f64, b: f64) -> (f64, f64) {
        let ta = tau(a, self.cutoff);
        let tb = tau(b, self.cutoff);
        (c * (ta + tb), -c * ta)
    }

    pub fn vartheta(&self, t: f64, e: usize, p: f64, xi: &[f64]) -> f64 {
        let (x, y) = self.lattice.edge(e);
        let c = self.coefficient(t, e);
        c * (p * tau(xi[y], self.cutoff) - (1.0 - p) * tau(xi[x], self.cutoff))
    }

    /// Jump rate of edge `e` at time `t`: `N^2 int_0^1 e^vartheta dp`.
    pub fn edge_rate(&self, t: f64, e: usize, xi: &[f64]) -> f64 {
        let (x, y) = self.lattice.edge(e);
        let (a, b) = self.affine(self.coefficient(t, e), xi[x], xi[y]);
        let n2 = (self.lattice.side() * self.lattice.side()) as f64;
        n2 * b.exp() * (1.0 + excess(a))
    }

    fn edge_bound(&self, e: usize, xi: &[f64]) -> f64 {
        let (x, y) = self.lattice.edge(e);
        let m = tau(xi[x], self.cutoff).max(tau(xi[y], self.cutoff));
        let n2 = (self.lattice.side() * self.lattice.side()) as f64;
        n2 * (self.coef_bound[e] * m).exp()
    }

    /// `log Y_0` of a configuration.
    pub fn log_y0(&self, xi: &[f64]) -> Result<InitialWeight> {
        self.lattice.check_len(xi.len())?;
        let mass = xi.iter().sum::<f64>() * self.lattice.site_weight();
        if mass > self.mass_cap {
            return Ok(InitialWeight::Excluded);
        }
        let s: f64 = xi
            .iter()
            .zip(&self.initial_profile)
            .map(|(&v, &u)| v / u - v / self.rho + (u / self.rho).ln())
            .sum();
        Ok(InitialWeight::Finite(-s - self.log_conditioning))
    }

    /// Exact mean of `log Y_0` when `xi_0` is drawn from the product law with
    /// the initial profile. `None` when a finite mass cap conditions that law.
    pub fn expected_log_y0(&self) -> Option<f64> {
        if self.mass_cap.is_finite() {
            return None;
        }
        let s: f64 = self
            .initial_profile
            .iter()
            .map(|&u| {
                let r = u / self.rho;
                r - 1.0 - r.ln()
            })
            .sum();
        Some(s - self.log_conditioning)
    }
}

/// Monte Carlo estimate of `log nu_u(mass <= a)` and its standard error.
pub fn estimate_log_conditioning(
    lattice: &Lattice,
    profile: &[f64],
    mass_cap: f64,
    samples: usize,
    rng: &mut KmpRng,
) -> (f64, f64) {
    if !mass_cap.is_finite() {
        return (0.0, 0.0);
    }
    let w = lattice.site_weight();
    let mut hits = 0usize;
    for _ in 0..samples {
        let m: f64 = profile
            .iter()
            .map(|&u| u * <Exp1 as Distribution<f64>>::sample(&Exp1, rng))
            .sum::<f64>()
            * w;
        if m <= mass_cap {
            hits += 1;
        }
    }
    let p = hits.max(1) as f64 / samples as f64;
    let se = (p * (1.0 - p) / samples as f64).sqrt() / p;
    (p.ln(), se)
}

/// Radon–Nikodym and entropy accumulators for one trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightLedger {
    #[serde(rename = "log_Y0")]
    pub log_y0: Option<f64>,
    #[serde(rename = "log_Z_jump")]
    pub log_z_jump: f64,
    #[serde(rename = "log_Z_comp")]
    pub log_z_comp: f64,
    pub entropy_integrand: f64,
    pub quadrature_error_bound: f64,
    pub accepted_jumps: u64,
    pub proposals: u64,
}

impl WeightLedger {
    pub fn log_z(&self) -> f64 {
        self.log_z_jump - self.log_z_comp
    }

    /// `log Y_0 + int N^2 sum int (r log r - r + 1) dp dt`, the quantity
    /// whose expectation under the tilt is the relative entropy.
    pub fn entropy(&self) -> Option<f64> {
        self.log_y0.map(|y| y + self.entropy_integrand)
    }
}

struct Accumulator<'a> {
    spec: &'a TiltSpec,
    n2: f64,
    coef: Vec<f64>,
    static_coef: bool,
}

impl<'a> Accumulator<'a> {
    fn new(spec: &'a TiltSpec) -> Self {
        let static_coef = spec.coef.windows(2).all(|w| w[0] == w[1]);
        let n = spec.lattice.side() as f64;
        Accumulator {
            spec,
            n2: n * n,
            coef: Vec::new(),
            static_coef,
        }
    }

    fn rates(&mut self, t: f64, xi: &[f64]) -> (f64, f64) {
        self.spec.coefficients(t, &mut self.coef);
        let mut comp = 0.0;
        let mut ent = 0.0;
        for (e, &c) in self.coef.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (x, y) = self.spec.lattice.edge(e);
            let (a, b) = self.spec.affine(c, xi[x], xi[y]);
            comp += mean_rate_excess(a, b);
            ent += mean_entropy_density(a, b);
        }
        (self.n2 * comp, self.n2 * ent)
    }

    /// Integrate compensator and entropy density over `[t0, t1]` with `xi`
    /// frozen: midpoint rule, subintervals no longer than `1/N^2`.
    fn frozen(&mut self, t0: f64, t1: f64, xi: &[f64], ledger: &mut WeightLedger) {
        if t1 <= t0 {
            return;
        }
        if self.static_coef {
            let (c, e) = self.rates(t0, xi);
            ledger.log_z_comp += c * (t1 - t0);
            ledger.entropy_integrand += e * (t1 - t0);
            return;
        }
        let pieces = ((t1 - t0) * self.n2).ceil().max(1.0) as usize;
        let h = (t1 - t0) / pieces as f64;
        let mut left = self.rates(t0, xi);
        for k in 0..pieces {
            let a = t0 + h * k as f64;
            let mid = self.rates(a + 0.5 * h, xi);
            let right = self.rates(a + h, xi);
            ledger.log_z_comp += h * mid.0;
            ledger.entropy_integrand += h * mid.1;
            ledger.quadrature_error_bound += h
                * ((mid.0 - 0.5 * (left.0 + right.0)).abs()
                    + (mid.1 - 0.5 * (left.1 + right.1)).abs())
                / 3.0;
            left = right;
        }
    }
}

/// Fenwick tree over nonnegative edge weights.
struct Fenwick {
    tree: Vec<f64>,
    values: Vec<f64>,
    updates: usize,
}

impl Fenwick {
    fn new(values: Vec<f64>) -> Self {
        let mut f = Fenwick {
            tree: vec![0.0; values.len() + 1],
            values,
            updates: 0,
        };
        f.rebuild();
        f
    }

    fn rebuild(&mut self) {
        let n = self.values.len();
        self.tree.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let mut j = i + 1;
            while j <= n {
                self.tree[j] += self.values[i];
                j += j & j.wrapping_neg();
            }
        }
        self.updates = 0;
    }

    fn set(&mut self, i: usize, v: f64) {
        let delta = v - self.values[i];
        self.values[i] = v;
        let n = self.values.len();
        let mut j = i + 1;
        while j <= n {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
        self.updates += 1;
        if self.updates > 50_000 {
            self.rebuild();
        }
    }

    fn total(&self) -> f64 {
        let n = self.values.len();
        let mut s = 0.0;
        let mut j = n;
        while j > 0 {
            s += self.tree[j];
            j -= j & j.wrapping_neg();
        }
        s
    }

    /// Smallest index whose prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.values.len();
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        let mut idx = pos.min(n - 1);
        while self.values[idx] == 0.0 && idx + 1 < n {
            idx += 1;
        }
        idx
    }
}

fn incident_edges(lattice: &Lattice, site: usize, out: &mut Vec<usize>) {
    let d = lattice.dim();
    for a in 0..d {
        out.push(site * d + a);
        out.push(lattice.shift(site, a, -1) * d + a);
    }
}

/// Simulate the tilted dynamics from `init`, returning the trajectory and
/// the weight ledger. With `track_compensator` off the compensator and
/// entropy integrals are skipped.
pub fn tilted_simulate(
    spec: &TiltSpec,
    init: &EnergyConfig,
    opts: &SimOptions,
    rng: &mut KmpRng,
    seed: u64,
    track_compensator: bool,
) -> Result<(Trajectory, WeightLedger)> {
    opts.validate()?;
    let lattice = spec.lattice;
    if init.lattice != lattice {
        return invalid("initial configuration lives on a different lattice");
    }
    let log_y0 = match spec.log_y0(&init.energies)? {
        InitialWeight::Finite(v) => v,
        InitialWeight::Excluded => return invalid("initial configuration violates the mass cap"),
    };
    let edges = lattice.num_edges();
    let mut xi = init.energies.clone();
    let mut ledger = WeightLedger {
        log_y0: Some(log_y0),
        ..Default::default()
    };
    let mut acc = Accumulator::new(spec);
    let mut times = Vec::new();
    let mut snapshots = Vec::new();
    let mut flux = if opts.record_flux {
        Some(Vec::new())
    } else {
        None
    };
    let mut next_snap = 0;
    if edges == 0 {
        for &s in &opts.snapshot_times {
            times.push(s);
            snapshots.push(xi.clone());
        }
        return Ok((
            Trajectory {
                lattice,
                seed,
                horizon: opts.horizon,
                times,
                snapshots,
                flux,
                events: 0,
            },
            ledger,
        ));
    }
    let mut fen = Fenwick::new((0..edges).map(|e| spec.edge_bound(e, &xi)).collect());
    let expected = fen.total() * opts.horizon;
    if expected > opts.event_budget as f64 {
        return Err(KmpError::BudgetExceeded {
            expected,
            budget: opts.event_budget,
        });
    }
    let cap = opts.event_budget.saturating_mul(2);
    let mut t = 0.0;
    let mut t_frozen = 0.0;
    let mut touched = Vec::with_capacity(4 * lattice.dim());
    loop {
        let total = fen.total();
        let dt = <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / total;
        let t_next = t + dt;
        while next_snap < opts.snapshot_times.len() && opts.snapshot_times[next_snap] < t_next {
            times.push(opts.snapshot_times[next_snap]);
            snapshots.push(xi.clone());
            next_snap += 1;
        }
        if t_next > opts.horizon {
            if track_compensator {
                acc.frozen(t_frozen, opts.horizon, &xi, &mut ledger);
            }
            break;
        }
        t = t_next;
        ledger.proposals += 1;
        if ledger.proposals > cap {
            return Err(KmpError::BudgetExceeded {
                expected: ledger.proposals as f64,
                budget: opts.event_budget,
            });
        }
        let e = fen.find(rng.gen::<f64>() * total);
        let (x, y) = lattice.edge(e);
        let (a, b) = spec.affine(spec.coefficient(t, e), xi[x], xi[y]);
        let n2 = (lattice.side() * lattice.side()) as f64;
        let rate = n2 * b.exp() * (1.0 + excess(a));
        let bound = fen.values[e];
        if rate > bound * (1.0 + 1e-9) {
            return Err(KmpError::Numerical(format!(
                "edge rate {rate} exceeds thinning bound {bound}"
            )));
        }
        if rate < bound && rng.gen::<f64>() * bound > rate {
            continue;
        }
        if track_compensator {
            acc.frozen(t_frozen, t, &xi, &mut ledger);
            t_frozen = t;
        }
        let p = sample_fraction(a, rng.gen());
        ledger.log_z_jump += a * p + b;
        ledger.accepted_jumps += 1;
        let (nx, ny) = jump_values(xi[x], xi[y], p);
        xi[x] = nx;
        xi[y] = ny;
        if let Some(f) = flux.as_mut() {
            f.push(FluxEvent { t, edge: e, p });
        }
        touched.clear();
        incident_edges(&lattice, x, &mut touched);
        incident_edges(&lattice, y, &mut touched);
        for &f in &touched {
            fen.set(f, spec.edge_bound(f, &xi));
        }
    }
    let traj = Trajectory {
        lattice,
        seed,
        horizon: opts.horizon,
        times,
        snapshots,
        flux,
        events: ledger.accepted_jumps,
    };
    Ok((traj, ledger))
}

/// Ledger of `log Z_T` along a recorded path (for instance an untilted one):
/// jump terms from the flux log and the compensator between events.
pub fn path_ledger(
    spec: &TiltSpec,
    init: &[f64],
    flux: &[FluxEvent],
    horizon: f64,
) -> Result<WeightLedger> {
    let log_y0 = match spec.log_y0(init)? {
        InitialWeight::Finite(v) => Some(v),
        InitialWeight::Excluded => None,
    };
    let mut ledger = WeightLedger {
        log_y0,
        ..Default::default()
    };
    let mut acc = Accumulator::new(spec);
    let mut xi = init.to_vec();
    let mut t_prev = 0.0;
    for ev in flux {
        acc.frozen(t_prev, ev.t, &xi, &mut ledger);
        let (x, y) = spec.lattice.edge(ev.edge);
        let (a, b) = spec.affine(spec.coefficient(ev.t, ev.edge), xi[x], xi[y]);
        ledger.log_z_jump += a * ev.p + b;
        ledger.accepted_jumps += 1;
        let (nx, ny) = jump_values(xi[x], xi[y], ev.p);
        xi[x] = nx;
        xi[y] = ny;
        t_prev = ev.t;
    }
    acc.frozen(t_prev, horizon, &xi, &mut ledger);
    Ok(ledger)
}

/// A function of the configuration that the generator can act on.
pub trait ConfigObservable: Sync {
    fn value(&self, xi: &[f64]) -> f64;

    /// Per-configuration auxiliary data reused across edges.
    fn aux(&self, _xi: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    /// `F(xi with xi(x)=nx, xi(y)=ny) - F(xi)`.
    fn increment(&self, xi: &[f64], _aux: &[f64], x: usize, y: usize, nx: f64, ny: f64) -> f64 {
        let mut w = xi.to_vec();
        w[x] = nx;
        w[y] = ny;
        self.value(&w) - self.value(xi)
    }
}

/// `<phi, pi_N(xi)>`.
pub struct LinearObservable {
    pub lattice: Lattice,
    pub phi: Vec<f64>,
}

impl ConfigObservable for LinearObservable {
    fn value(&self, xi: &[f64]) -> f64 {
        self.lattice.inner(&self.phi, xi)
    }
    fn increment(&self, xi: &[f64], _aux: &[f64], x: usize, y: usize, nx: f64, ny: f64) -> f64 {
        self.lattice.site_weight() * (self.phi[x] * (nx - xi[x]) + self.phi[y] * (ny - xi[y]))
    }
}

/// The quadratic functional `F_N`.
pub struct LyapunovObservable {
    pub kernel: GreenKernel,
}

impl ConfigObservable for LyapunovObservable {
    fn value(&self, xi: &[f64]) -> f64 {
        self.kernel.quadratic_form(xi)
    }
    fn aux(&self, xi: &[f64]) -> Vec<f64> {
        self.kernel.apply(xi)
    }
    fn increment(&self, xi: &[f64], aux: &[f64], x: usize, y: usize, nx: f64, ny: f64) -> f64 {
        let lat = self.kernel.lattice();
        let w = lat.site_weight();
        let dx = nx - xi[x];
        let dy = ny - xi[y];
        let g0 = self.kernel.value(0);
        let c = lat.coords(x);
        let cy = lat.coords(y);
        let mut off = [0i64; 3];
        for a in 0..lat.dim() {
            off[a] = cy[a] as i64 - c[a] as i64;
        }
        let gxy = self.kernel.value(lat.translate(0, &off));
        2.0 * w * (dx * aux[x] + dy * aux[y])
            + w * w * (g0 * (dx * dx + dy * dy) + 2.0 * gxy * dx * dy)
    }
}

/// Observable given by a closure (generic increments by re-evaluation).
pub struct FnObservable<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> ConfigObservable for FnObservable<F> {
    fn value(&self, xi: &[f64]) -> f64 {
        (self.0)(xi)
    }
}

/// `L F(xi) = N^2 sum_{x~y} int_0^1 r(p) [F(xi^{x,y,p}) - F(xi)] dp`, with
/// `r = 1` when no tilt is given; 32-node Gauss–Legendre in `p`.
pub fn generator_apply(
    obs: &dyn ConfigObservable,
    lattice: &Lattice,
    xi: &[f64],
    tilt: Option<(&TiltSpec, f64)>,
) -> Result<f64> {
    lattice.check_len(xi.len())?;
    let rule = GaussRule::new(32);
    let nodes: Vec<(f64, f64)> = rule.mapped(0.0, 1.0).collect();
    let aux = obs.aux(xi);
    let n2 = (lattice.side() * lattice.side()) as f64;
    let mut total = 0.0;
    for e in 0..lattice.num_edges() {
        let (x, y) = lattice.edge(e);
        let (a, b) = match tilt {
            Some((spec, t)) => spec.affine(spec.coefficient(t, e), xi[x], xi[y]),
            None => (0.0, 0.0),
        };
        let mut s = 0.0;
        for &(p, w) in &nodes {
            let (nx, ny) = jump_values(xi[x], xi[y], p);
            let r = if a == 0.0 && b == 0.0 {
                1.0
            } else {
                (a * p + b).exp()
            };
            s += w * r * obs.increment(xi, &aux, x, y, nx, ny);
        }
        total += s;
    }
    Ok(n2 * total)
}

/// Outcome of the drift inequality scan `L F <= C F - c |xi|^2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub samples: usize,
    pub fitted_c: f64,
    pub fitted_big_c: f64,
    pub ls_c: f64,
    pub ls_big_c: f64,
    pub violations: usize,
    pub feasible: bool,
    /// Rows `(L F, F, |xi|^2)`.
    #[serde(skip)]
    pub rows: Vec<(f64, f64, f64)>,
}

impl LyapunovReport {
    pub fn count_violations(&self, c: f64, big_c: f64) -> usize {
        count_violations(&self.rows, c, big_c)
    }
}

fn count_violations(rows: &[(f64, f64, f64)], c: f64, big_c: f64) -> usize {
    rows.iter()
        .filter(|(lf, f, s)| *lf > big_c * f - c * s + 1e-12 * (lf.abs() + f.abs() + s.abs()))
        .count()
}

/// Evaluate `L F_N` on the samples, fit `(C, c)` by least squares, halve the
/// fitted dissipation and raise `C` until no sample violates the inequality.
pub fn lyapunov_drift_check(
    kernel: &GreenKernel,
    samples: &[Vec<f64>],
    tilt: Option<(&TiltSpec, f64)>,
) -> Result<LyapunovReport> {
    let lattice = *kernel.lattice();
    let obs = LyapunovObservable {
        kernel: kernel.clone(),
    };
    let mut rows = Vec::with_capacity(samples.len());
    for xi in samples {
        let lf = generator_apply(&obs, &lattice, xi, tilt)?;
        let f = kernel.quadratic_form(xi);
        let s = lattice.inner(xi, xi);
        rows.push((lf, f, s));
    }
    // least squares lf = C f - c s
    let (mut aff, mut afs, mut ass, mut bf, mut bs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(lf, f, s) in &rows {
        aff += f * f;
        afs += f * s;
        ass += s * s;
        bf += lf * f;
        bs += lf * s;
    }
    let det = aff * ass - afs * afs;
    let (ls_big_c, ls_c) = if det.abs() > 1e-300 {
        let cc = (bf * ass - bs * afs) / det;
        let mc = (aff * bs - afs * bf) / det;
        (cc, -mc)
    } else {
        (0.0, 0.0)
    };
    let fitted_c = if ls_c > 0.0 { 0.5 * ls_c } else { 0.0 };
    let needed = rows
        .iter()
        .filter(|(_, f, _)| *f > 0.0)
        .map(|(lf, f, s)| (lf + fitted_c * s) / f)
        .fold(f64::NEG_INFINITY, f64::max);
    let fitted_big_c = ls_big_c.max(needed).max(0.0);
    let violations = count_violations(&rows, fitted_c, fitted_big_c);
    let feasible = fitted_c > 0.0 && fitted_big_c.is_finite() && violations == 0;
    Ok(LyapunovReport {
        samples: rows.len(),
        fitted_c,
        fitted_big_c,
        ls_c,
        ls_big_c,
        violations,
        feasible,
        rows,
    })
}
