//! Measured conservation and decay figures of a finished run, with the
//! tolerances the acceptance scenario is held to.

use crate::diagnostics::{decay_fit, macro_micro_report, monotone_rise, monotone_ripple, DecayFit};
use crate::grid::{ksum, DistributionField};
use crate::solver::{Mode, RunOutput, Simulation};

pub const MASS_TOL: f64 = 1e-8;
pub const ENERGY_TOL: f64 = 1e-4;
pub const FLUX_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = -1e-12;
pub const RIPPLE_TOL: f64 = 0.01;
pub const ENTROPY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, serde::Serialize)]
pub struct RunAssessment {
    /// `max |mass(t) - mass(0)|` over `int int sqrt(mu) |f0|`.
    pub mass_drift: f64,
    /// `max |E(t) - E(0)|` over `|E(0)|` for kinetic + field energy.
    pub energy_drift: f64,
    /// The same drift over `int int |v|^2 sqrt(mu) |f0| + int |E0|^2`.
    pub energy_drift_abs_scale: f64,
    pub max_flux_step: f64,
    pub min_full: f64,
    /// Ripple of `W_theta` (first configured theta) for `t > 1`.
    pub w_ripple: f64,
    /// Ripple of `W_theta + |E|^2` for `t > 1`; at `theta = 0` this is
    /// `|f|^2 + 2 |E|^2`, which the linear dynamics dissipate.
    pub modified_ripple: f64,
    pub entropy_available: bool,
    pub entropy_rise: Option<f64>,
    pub decay: Option<DecayFit>,
    pub macro_micro_max: Option<f64>,
    pub picard_max_iterations: usize,
    pub picard_max_contraction: f64,
    pub splitting_error: Option<f64>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct Flag {
    pub name: &'static str,
    pub passed: bool,
    /// Failing an enforced flag marks the run as failed.
    pub enforced: bool,
}

impl RunAssessment {
    pub fn new(sim: &Simulation, f0: &DistributionField, out: &RunOutput) -> Self {
        let g = &sim.grid;
        let mesh = &sim.mesh;
        let cv = g.cell_volume();
        let cell_sum = |w: &dyn Fn(usize) -> f64| {
            ksum((0..f0.n_cells).map(|c| mesh.volumes[c] * cv * ksum(f0.cell(c).iter().enumerate().map(|(k, x)| (x * g.sqrt_mu[k]).abs() * w(k)))))
        };
        let mass_scale = cell_sum(&|_| 1.0);
        let ke_scale = cell_sum(&|k| {
            let v = g.nodes[k];
            v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        });
        let recs = &out.records;
        let r0 = &recs[0];
        let mass_drift = recs.iter().map(|r| (r.mass - r0.mass).abs()).fold(0.0, f64::max);
        let e0 = r0.total_energy();
        let ed = recs.iter().map(|r| (r.total_energy() - e0).abs()).fold(0.0, f64::max);
        let rel = |x: f64, s: f64| if s > 0.0 { x / s } else { x };
        let t: Vec<f64> = recs.iter().map(|r| r.t).collect();
        let w: Vec<f64> = recs.iter().map(|r| r.w_theta.first().copied().unwrap_or(0.0)).collect();
        let modified: Vec<f64> = recs.iter().map(|r| r.w_theta.first().copied().unwrap_or(0.0) + r.field_energy).collect();
        let entropy: Option<Vec<f64>> = recs.iter().map(|r| r.entropy_excess).collect();
        let picard_max_iterations = out.picard.iter().map(|p| p.iterations).max().unwrap_or(0);
        let picard_max_contraction = out.picard.iter().map(|p| p.max_contraction).fold(0.0, f64::max);
        let macro_micro_max = macro_micro_report(recs, 1)
            .ok()
            .and_then(|ws| ws.iter().filter_map(|w| w.ratio).reduce(f64::max));
        RunAssessment {
            mass_drift: rel(mass_drift, mass_scale),
            energy_drift: rel(ed, e0.abs()),
            energy_drift_abs_scale: rel(ed, ke_scale + r0.field_energy),
            max_flux_step: out.max_flux_step,
            min_full: out.min_full,
            w_ripple: monotone_ripple(&t, &w, 1.0),
            modified_ripple: monotone_ripple(&t, &modified, 1.0),
            entropy_available: entropy.is_some(),
            entropy_rise: entropy.as_deref().map(monotone_rise),
            decay: decay_fit(&t, &w).ok(),
            macro_micro_max,
            picard_max_iterations,
            picard_max_contraction,
            splitting_error: out.splitting_error,
        }
    }

    /// Pass/fail flags. Conservation and positivity are enforced; energy only
    /// in frozen mode, where the discrete identity is exact up to splitting.
    pub fn flags(&self, mode: Mode) -> Vec<Flag> {
        let decaying = self.decay.as_ref().is_some_and(|d| !d.non_decaying && d.k > 0.0);
        vec![
            Flag { name: "mass_conserved", passed: self.mass_drift <= MASS_TOL, enforced: true },
            Flag { name: "energy_conserved", passed: self.energy_drift <= ENERGY_TOL, enforced: mode == Mode::Frozen },
            Flag { name: "flux_constant", passed: self.max_flux_step <= FLUX_TOL, enforced: true },
            Flag { name: "positive", passed: self.min_full >= POSITIVITY_TOL, enforced: true },
            Flag { name: "w_non_increasing", passed: self.w_ripple <= RIPPLE_TOL, enforced: false },
            Flag { name: "decaying", passed: decaying, enforced: false },
            Flag { name: "entropy_available", passed: self.entropy_available, enforced: false },
            Flag { name: "entropy_non_increasing", passed: self.entropy_rise.is_some_and(|r| r <= ENTROPY_TOL), enforced: false },
        ]
    }
}
