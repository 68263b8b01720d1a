//! Event-driven simulation of the untilted KMP process, equilibrium
//! samplers and the empirical measure.

use crate::error::{invalid, KmpError, Result};
use crate::fields::{Atom, MeasureState};
use crate::lattice::Lattice;
use crate::rng::KmpRng;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Energies indexed by site, together with the lattice they live on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub lattice: Lattice,
    pub energies: Vec<f64>,
}

impl EnergyConfig {
    pub fn new(lattice: Lattice, energies: Vec<f64>) -> Result<Self> {
        lattice.check_len(energies.len())?;
        if let Some(v) = energies.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return invalid(format!(
                "energies must be finite and nonnegative, found {v}"
            ));
        }
        Ok(EnergyConfig { lattice, energies })
    }

    pub fn constant(lattice: Lattice, value: f64) -> Result<Self> {
        EnergyConfig::new(lattice, vec![value; lattice.num_sites()])
    }

    pub fn total_energy(&self) -> f64 {
        self.energies.iter().sum()
    }

    /// `<1, pi_N(xi)> = N^{-d} sum xi`.
    pub fn mass(&self) -> f64 {
        self.total_energy() * self.lattice.site_weight()
    }

    pub fn empirical_measure(&self) -> MeasureState {
        empirical_measure(&self.lattice, &self.energies)
    }
}

/// Atoms of weight `N^{-d} xi(x)` at the lattice points.
pub fn empirical_measure(lattice: &Lattice, xi: &[f64]) -> MeasureState {
    let w = lattice.site_weight();
    let atoms = xi
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(s, &v)| Atom {
            pos: lattice.position(s),
            weight: w * v,
        })
        .collect();
    MeasureState {
        dim: lattice.dim(),
        density: None,
        atoms,
    }
}

pub type Profile = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Product exponential laws: global mean, slowly varying profile, or a
/// profile conditioned on the total mass.
#[derive(Clone)]
pub enum Equilibrium {
    Uniform { rho: f64 },
    Profile { u: Profile },
    Conditioned { u: Profile, cap: f64 },
}

impl std::fmt::Debug for Equilibrium {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Equilibrium::Uniform { rho } => write!(f, "Uniform({rho})"),
            Equilibrium::Profile { .. } => write!(f, "Profile"),
            Equilibrium::Conditioned { cap, .. } => write!(f, "Conditioned(cap={cap})"),
        }
    }
}

impl Equilibrium {
    pub fn profile<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(u: F) -> Self {
        Equilibrium::Profile { u: Arc::new(u) }
    }

    pub fn conditioned<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(u: F, cap: f64) -> Self {
        Equilibrium::Conditioned {
            u: Arc::new(u),
            cap,
        }
    }

    /// Mean energy at each site.
    pub fn means(&self, lattice: &Lattice) -> Vec<f64> {
        (0..lattice.num_sites())
            .map(|s| match self {
                Equilibrium::Uniform { rho } => *rho,
                Equilibrium::Profile { u } | Equilibrium::Conditioned { u, .. } => {
                    u(&lattice.position(s)[..lattice.dim()])
                }
            })
            .collect()
    }
}

/// Rejection attempts allowed for the conditioned law.
pub const MAX_REJECTIONS: usize = 1_000_000;

pub fn sample_equilibrium(
    lattice: &Lattice,
    eq: &Equilibrium,
    rng: &mut KmpRng,
) -> Result<EnergyConfig> {
    let means = eq.means(lattice);
    if let Some(m) = means.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
        return invalid(format!(
            "equilibrium means must be finite and nonnegative, found {m}"
        ));
    }
    if let Equilibrium::Uniform { rho } = eq {
        if !(*rho > 0.0) {
            return invalid("global density must be positive");
        }
    }
    let draw = |rng: &mut KmpRng| -> Vec<f64> {
        means
            .iter()
            .map(|&m| {
                if m == 0.0 {
                    0.0
                } else {
                    m * <Exp1 as Distribution<f64>>::sample(&Exp1, rng)
                }
            })
            .collect()
    };
    match eq {
        Equilibrium::Conditioned { cap, .. } => {
            let mean_mass = means.iter().sum::<f64>() * lattice.site_weight();
            if !(*cap > mean_mass) {
                return invalid(format!(
                    "mass cap {cap} must exceed the profile mass {mean_mass}"
                ));
            }
            for _ in 0..MAX_REJECTIONS {
                let xi = draw(rng);
                if xi.iter().sum::<f64>() * lattice.site_weight() <= *cap {
                    return EnergyConfig::new(*lattice, xi);
                }
            }
            Err(KmpError::Numerical(
                "conditioned sampler exhausted its rejection budget".into(),
            ))
        }
        _ => EnergyConfig::new(*lattice, draw(rng)),
    }
}

/// Post-jump values `(p s, s - p s)` with `s = a + b`.
#[inline]
pub fn jump_values(a: f64, b: f64, p: f64) -> (f64, f64) {
    let s = a + b;
    let x = p * s;
    (x, s - x)
}

/// Redistribute the energy across `edge` with fraction `p`.
pub fn apply_jump(config: &mut EnergyConfig, edge: usize, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!(
            "redistribution fraction must lie in [0, 1], got {p}"
        ));
    }
    if edge >= config.lattice.num_edges() {
        return invalid(format!("edge {edge} out of range"));
    }
    let (x, y) = config.lattice.edge(edge);
    let (nx, ny) = jump_values(config.energies[x], config.energies[y], p);
    config.energies[x] = nx;
    config.energies[y] = ny;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxEvent {
    pub t: f64,
    pub edge: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub lattice: Lattice,
    pub seed: u64,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub flux: Option<Vec<FluxEvent>>,
    pub events: u64,
}

impl Trajectory {
    pub fn final_config(&self) -> Option<&[f64]> {
        self.snapshots.last().map(|s| s.as_slice())
    }

    /// Largest relative deviation of the total energy from the first snapshot.
    pub fn max_energy_drift(&self) -> f64 {
        let Some(first) = self.snapshots.first() else {
            return 0.0;
        };
        let e0: f64 = first.iter().sum();
        self.snapshots
            .iter()
            .map(|s| {
                let e: f64 = s.iter().sum();
                if e0 == 0.0 {
                    e.abs()
                } else {
                    ((e - e0) / e0).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon: f64,
    /// Sorted times in `[0, horizon]` at which to store the configuration.
    pub snapshot_times: Vec<f64>,
    pub record_flux: bool,
    /// Refuse runs whose expected event count exceeds this number.
    pub event_budget: u64,
}

impl SimOptions {
    pub fn new(horizon: f64) -> Self {
        SimOptions {
            horizon,
            snapshot_times: vec![0.0, horizon],
            record_flux: false,
            event_budget: 200_000_000,
        }
    }

    /// `count + 1` equally spaced snapshots.
    pub fn with_snapshots(mut self, count: usize) -> Self {
        let c = count.max(1);
        self.snapshot_times = (0..=c)
            .map(|i| self.horizon * i as f64 / c as f64)
            .collect();
        self
    }

    pub fn with_flux(mut self, on: bool) -> Self {
        self.record_flux = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return invalid("horizon must be finite and nonnegative");
        }
        let mut prev = f64::NEG_INFINITY;
        for &t in &self.snapshot_times {
            if !(t >= 0.0 && t <= self.horizon) || t < prev {
                return invalid("snapshot times must be sorted inside [0, horizon]");
            }
            prev = t;
        }
        Ok(())
    }
}

/// Expected number of clock rings: `d N^{d+2} T`.
pub fn expected_events(lattice: &Lattice, horizon: f64) -> f64 {
    let n = lattice.side() as f64;
    lattice.num_edges() as f64 * n * n * horizon
}

/// Simulate the untilted dynamics from `init` with a global exponential
/// clock of rate `d N^{d+2}` and uniformly chosen edges.
pub fn simulate(
    init: &EnergyConfig,
    opts: &SimOptions,
    rng: &mut KmpRng,
    seed: u64,
) -> Result<Trajectory> {
    opts.validate()?;
    let lattice = init.lattice;
    let expected = expected_events(&lattice, opts.horizon);
    if expected > opts.event_budget as f64 {
        return Err(KmpError::BudgetExceeded {
            expected,
            budget: opts.event_budget,
        });
    }
    let edges = lattice.num_edges();
    let n2 = (lattice.side() * lattice.side()) as f64;
    let rate = edges as f64 * n2;
    let mut xi = init.energies.clone();
    let mut times = Vec::with_capacity(opts.snapshot_times.len());
    let mut snapshots = Vec::with_capacity(opts.snapshot_times.len());
    let mut flux = if opts.record_flux {
        Some(Vec::new())
    } else {
        None
    };
    let mut next_snap = 0;
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        let dt = if rate > 0.0 {
            <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate
        } else {
            f64::INFINITY
        };
        let t_next = t + dt;
        while next_snap < opts.snapshot_times.len() && opts.snapshot_times[next_snap] < t_next {
            times.push(opts.snapshot_times[next_snap]);
            snapshots.push(xi.clone());
            next_snap += 1;
        }
        if t_next > opts.horizon {
            break;
        }
        t = t_next;
        let e = rng.gen_range(0..edges);
        let p: f64 = rng.gen();
        let (x, y) = lattice.edge(e);
        let (nx, ny) = jump_values(xi[x], xi[y], p);
        xi[x] = nx;
        xi[y] = ny;
        events += 1;
        if let Some(f) = flux.as_mut() {
            f.push(FluxEvent { t, edge: e, p });
        }
    }
    Ok(Trajectory {
        lattice,
        seed,
        horizon: opts.horizon,
        times,
        snapshots,
        flux,
        events,
    })
}

/// Rebuild the configuration at each event from a flux log.
pub fn replay<F: FnMut(&FluxEvent, &[f64])>(
    lattice: &Lattice,
    init: &[f64],
    flux: &[FluxEvent],
    mut visit: F,
) -> Vec<f64> {
    let mut xi = init.to_vec();
    for ev in flux {
        visit(ev, &xi);
        let (x, y) = lattice.edge(ev.edge);
        let (nx, ny) = jump_values(xi[x], xi[y], ev.p);
        xi[x] = nx;
        xi[y] = ny;
    }
    xi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn jump_examples() {
        let lat = Lattice::new(1, 3).unwrap();
        let mut c = EnergyConfig::new(lat, vec![2.0, 0.0, 1.0]).unwrap();
        apply_jump(&mut c, 0, 0.25).unwrap();
        assert_eq!(&c.energies[..2], &[0.5, 1.5]);
        apply_jump(&mut c, 0, 1.0).unwrap();
        assert_eq!(&c.energies[..2], &[2.0, 0.0]);
        assert_eq!(c.total_energy(), 3.0);
        assert!(apply_jump(&mut c, 0, 1.5).is_err());
    }

    #[test]
    fn zero_profile_gives_zero_energy() {
        let lat = Lattice::new(1, 8).unwrap();
        let eq = Equilibrium::profile(|x| if x[0] < 0.5 { 0.0 } else { 1.0 });
        let c = sample_equilibrium(&lat, &eq, &mut seeded(3)).unwrap();
        assert!(c.energies[..4].iter().all(|&v| v == 0.0));
        assert!(c.energies[4..].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let lat = Lattice::new(2, 5).unwrap();
        let eq = Equilibrium::Uniform { rho: 1.3 };
        let a = sample_equilibrium(&lat, &eq, &mut seeded(11)).unwrap();
        let b = sample_equilibrium(&lat, &eq, &mut seeded(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conditioned_cap_is_checked() {
        let lat = Lattice::new(1, 16).unwrap();
        let bad = Equilibrium::conditioned(|_| 1.0, 1.0);
        assert!(sample_equilibrium(&lat, &bad, &mut seeded(1)).is_err());
        let ok = Equilibrium::conditioned(|_| 1.0, 1.2);
        let c = sample_equilibrium(&lat, &ok, &mut seeded(1)).unwrap();
        assert!(c.mass() <= 1.2);
    }

    #[test]
    fn zero_horizon_returns_input() {
        let lat = Lattice::new(1, 8).unwrap();
        let c =
            sample_equilibrium(&lat, &Equilibrium::Uniform { rho: 1.0 }, &mut seeded(2)).unwrap();
        let tr = simulate(&c, &SimOptions::new(0.0), &mut seeded(5), 5).unwrap();
        assert_eq!(tr.events, 0);
        assert_eq!(tr.final_config().unwrap(), c.energies.as_slice());
    }

    #[test]
    fn budget_is_enforced() {
        let lat = Lattice::new(1, 64).unwrap();
        let c = EnergyConfig::constant(lat, 1.0).unwrap();
        let mut o = SimOptions::new(1.0);
        o.event_budget = 1000;
        assert!(matches!(
            simulate(&c, &o, &mut seeded(1), 1),
            Err(KmpError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn replay_reproduces_final_state() {
        let lat = Lattice::new(2, 4).unwrap();
        let c =
            sample_equilibrium(&lat, &Equilibrium::Uniform { rho: 1.0 }, &mut seeded(9)).unwrap();
        let tr = simulate(
            &c,
            &SimOptions::new(0.05).with_flux(true),
            &mut seeded(10),
            10,
        )
        .unwrap();
        let end = replay(&lat, &c.energies, tr.flux.as_ref().unwrap(), |_, _| {});
        assert_eq!(end.as_slice(), tr.final_config().unwrap());
    }

    #[test]
    fn empirical_pairing_matches_brute_force() {
        let lat = Lattice::new(2, 8).unwrap();
        let xi: Vec<f64> = (0..64).map(|i| (i % 7) as f64 * 0.3).collect();
        let f = |x: &[f64]| (x[0] * 6.0).sin() + x[1] * x[1];
        let brute: f64 = (0..64)
            .map(|s| f(&lat.position(s)[..2]) * xi[s])
            .sum::<f64>()
            / 64.0;
        let mu = empirical_measure(&lat, &xi);
        assert!((mu.pair(f) - brute).abs() < 1e-13);
        assert!((mu.total_mass() - xi.iter().sum::<f64>() / 64.0).abs() < 1e-14);
    }
}
