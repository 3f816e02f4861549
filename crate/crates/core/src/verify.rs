//! Invariant suite behind `slp verify`: optimality certificates, the
//! ZFBF-equivalence condition, oracle agreement, power ordering and CI
//! feasibility, evaluated over a config's channels, slots and SINR points.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{db_to_linear, ScenarioConfig};
use crate::constellation::Constellation;
use crate::error::Result;
use crate::harness::{draw_channel, with_workers};
use crate::nnls::{nnls_oracle, ORACLE_MAX_VARS};
use crate::precoders::{cf_slp, opt_slp, slot_nnls, zfbf, SlotProblem};

pub const KKT_TOL: f64 = 1e-8;
pub const ZERO_DELTA_TOL: f64 = 1e-7;
pub const POWER_TOL: f64 = 1e-8;
pub const CI_TOL: f64 = 1e-8;
pub const ORACLE_DELTA_TOL: f64 = 1e-8;
pub const ORACLE_OBJ_TOL: f64 = 1e-10;

const NAMES: [&str; 8] = [
    "kkt_certificate",
    "zfbf_equivalence_sufficiency",
    "zfbf_equivalence_necessity",
    "oracle_agreement",
    "power_ordering",
    "ci_feasibility",
    "cf_noise_free_detection",
    "solver_converged",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub checked: usize,
    pub failures: usize,
    /// Largest violation seen (0 if none).
    pub worst: f64,
}

impl PropertyCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone)]
struct Tally {
    checked: [usize; 8],
    failures: [usize; 8],
    worst: [f64; 8],
}

impl Tally {
    fn new() -> Self {
        Self { checked: [0; 8], failures: [0; 8], worst: [0.0; 8] }
    }

    /// `excess > 0` counts as a failure of size `excess`.
    fn record(&mut self, i: usize, excess: f64) {
        self.checked[i] += 1;
        if excess > 0.0 || excess.is_nan() {
            self.failures[i] += 1;
            self.worst[i] = self.worst[i].max(if excess.is_nan() { f64::INFINITY } else { excess });
        }
    }

    fn merge(&mut self, o: &Tally) {
        for i in 0..8 {
            self.checked[i] += o.checked[i];
            self.failures[i] += o.failures[i];
            self.worst[i] = self.worst[i].max(o.worst[i]);
        }
    }
}

fn check_channel(cfg: &ScenarioConfig, c: &Constellation, channel_index: usize) -> Result<Tally> {
    let (ch, symbols) = draw_channel(cfg, channel_index)?;
    let sigma = cfg.sigmas();
    let mut t = Tally::new();
    for &db in &cfg.sinr_grid_db {
        let gamma = vec![db_to_linear(db); cfg.users];
        for sym in &symbols {
            let slot = SlotProblem::build(&ch, c, sym, &sigma, &gamma)?;
            let zf = zfbf(&slot);
            let cf = cf_slp(&slot);
            let opt = opt_slp(&slot)?;
            let vnorm = slot.v.norm();

            t.record(0, opt.kkt.max() - KKT_TOL * (1.0 + vnorm));

            let delta_inf = opt.delta.amax();
            if slot.v.iter().all(|&x| x >= 0.0) {
                let du = (&opt.u - &slot.u_zf).amax();
                t.record(1, (delta_inf - ZERO_DELTA_TOL).max(du - CI_TOL));
            }
            if opt.delta.iter().all(|&d| d == 0.0) {
                t.record(2, -slot.v.min() - KKT_TOL);
            }

            if slot.v.len() <= ORACLE_MAX_VARS {
                let p = slot_nnls(&slot)?;
                let o = nnls_oracle(&p)?;
                let dd = (&opt.delta - &o.delta).amax() - ORACLE_DELTA_TOL;
                let dobj = (p.objective(&opt.delta) - o.objective).abs() - ORACLE_OBJ_TOL;
                t.record(3, dd.max(dobj));
            }

            t.record(4, (opt.power - cf.power - POWER_TOL).max(opt.power - zf.power - POWER_TOL));

            let mut ci: f64 = f64::NEG_INFINITY;
            for r in [&zf, &cf, &opt] {
                ci = ci.max(slot.ci_violation(&r.u) - CI_TOL).max(r.ci_residual - CI_TOL);
                ci = ci.max(if r.delta.iter().all(|&d| d >= 0.0) { f64::NEG_INFINITY } else { 1.0 });
            }
            t.record(5, ci);

            let wrong = sym.iter().enumerate().filter(|(k, &i)| c.ml_detect(&ch.receive(*k, &cf.u)) != i).count();
            t.record(6, wrong as f64);

            t.record(7, if opt.flagged { 1.0 } else { f64::NEG_INFINITY });
        }
    }
    Ok(t)
}

/// Evaluates every property; all must report zero failures.
pub fn run_verify(cfg: &ScenarioConfig) -> Result<Vec<PropertyCheck>> {
    cfg.validate()?;
    let c = Constellation::psk(cfg.modulation_order)?;
    let per: Vec<Result<Tally>> =
        with_workers(|| (0..cfg.n_channels).into_par_iter().map(|i| check_channel(cfg, &c, i)).collect());
    let mut total = Tally::new();
    for t in per {
        total.merge(&t?);
    }
    Ok(NAMES
        .iter()
        .enumerate()
        .map(|(i, &name)| PropertyCheck {
            name,
            checked: total.checked[i],
            failures: total.failures[i],
            worst: total.worst[i],
        })
        .collect())
}

