//! Simulated 5.9 GHz link: propagation models, link budget, reception
//! decision, the deterministic scenario engine and a UDP transport for
//! multi-process demos.

pub mod scenario;
pub mod udp;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::link::{free_space_loss_db, wavelength_m, LinkError, PowerDb, PowerDbm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkBudgetConfig {
    pub tx_power_dbm: f64,
    pub tx_antenna_gain_dbi: f64,
    pub rx_antenna_gain_dbi: f64,
    pub cable_loss_db: f64,
    pub fc_hz: f64,
    pub sensitivity_dbm: f64,
    pub shadowing_sigma_db: f64,
    pub rng_seed: u64,
}

impl Default for LinkBudgetConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 26.0,
            tx_antenna_gain_dbi: 3.9,
            rx_antenna_gain_dbi: 3.9,
            cable_loss_db: 0.0,
            fc_hz: 5.9e9,
            sensitivity_dbm: -85.0,
            shadowing_sigma_db: 0.0,
            rng_seed: 0,
        }
    }
}

impl LinkBudgetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.sensitivity_dbm.is_finite() {
            return Err("sensitivity_dbm must be finite".into());
        }
        if !(self.shadowing_sigma_db >= 0.0) || !self.shadowing_sigma_db.is_finite() {
            return Err("shadowing_sigma_db must be >= 0".into());
        }
        if !(self.fc_hz > 0.0) {
            return Err("fc_hz must be > 0".into());
        }
        for (name, v) in [
            ("tx_power_dbm", self.tx_power_dbm),
            ("tx_antenna_gain_dbi", self.tx_antenna_gain_dbi),
            ("rx_antenna_gain_dbi", self.rx_antenna_gain_dbi),
            ("cable_loss_db", self.cable_loss_db),
        ] {
            if !v.is_finite() {
                return Err(format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    /// Sum of the distance-independent budget terms.
    pub fn fixed_budget_db(&self) -> f64 {
        self.tx_power_dbm + self.tx_antenna_gain_dbi + self.rx_antenna_gain_dbi - self.cable_loss_db
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PropagationModel {
    FreeSpace,
    TwoRay {
        h_tx_m: f64,
        h_rx_m: f64,
        #[serde(default = "default_reflection")]
        reflection_coeff: f64,
    },
}

fn default_reflection() -> f64 {
    -1.0
}

impl PropagationModel {
    pub fn two_ray(h_tx_m: f64, h_rx_m: f64) -> Self {
        PropagationModel::TwoRay {
            h_tx_m,
            h_rx_m,
            reflection_coeff: -1.0,
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if let PropagationModel::TwoRay { h_tx_m, h_rx_m, .. } = *self {
            for h in [h_tx_m, h_rx_m] {
                if !(h > 0.0) || !h.is_finite() {
                    return Err(LinkError::Height(h));
                }
            }
        }
        Ok(())
    }

    pub fn loss_db(&self, distance_m: f64, fc_hz: f64) -> Result<PowerDb, LinkError> {
        match *self {
            PropagationModel::FreeSpace => free_space_loss_db(distance_m, fc_hz),
            PropagationModel::TwoRay {
                h_tx_m,
                h_rx_m,
                reflection_coeff,
            } => two_ray_loss_db(distance_m, h_tx_m, h_rx_m, fc_hz, reflection_coeff),
        }
    }
}

/// Flat-earth two-path loss: direct ray plus a ground reflection with
/// coefficient `gamma`. Returns `+inf` at exact cancellation.
pub fn two_ray_loss_db(d_m: f64, h_tx_m: f64, h_rx_m: f64, fc_hz: f64, gamma: f64) -> Result<PowerDb, LinkError> {
    if !(d_m > 0.0) || !d_m.is_finite() {
        return Err(LinkError::Distance(d_m));
    }
    if !(fc_hz > 0.0) || !fc_hz.is_finite() {
        return Err(LinkError::Frequency(fc_hz));
    }
    for h in [h_tx_m, h_rx_m] {
        if !(h > 0.0) || !h.is_finite() {
            return Err(LinkError::Height(h));
        }
    }
    let lambda = wavelength_m(fc_hz);
    let d_los = d_m.hypot(h_tx_m - h_rx_m);
    let d_refl = d_m.hypot(h_tx_m + h_rx_m);
    let dphi = 2.0 * std::f64::consts::PI * (d_refl - d_los) / lambda;
    let magnitude = (Complex64::new(1.0, 0.0) + gamma * Complex64::from_polar(1.0, dphi)).norm();
    if magnitude == 0.0 {
        return Ok(PowerDb(f64::INFINITY));
    }
    let gain = lambda / (4.0 * std::f64::consts::PI * d_los) * magnitude;
    Ok(PowerDb(-20.0 * gain.log10()))
}

/// Seeded zero-mean Gaussian shadowing source.
#[derive(Debug, Clone)]
pub struct Shadowing {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl Shadowing {
    pub fn new(sigma_db: f64, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: (sigma_db > 0.0).then(|| Normal::new(0.0, sigma_db).expect("sigma validated")),
        }
    }

    /// Next shadowing term in dB; always 0 when sigma is 0.
    pub fn draw(&mut self) -> f64 {
        match &self.normal {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        }
    }
}

/// `P_rx = P_tx + G_tx + G_rx - L_cable - L_model(d) - shadowing`.
pub fn received_power_dbm(
    d_m: f64,
    cfg: &LinkBudgetConfig,
    model: &PropagationModel,
    shadowing_db: f64,
) -> Result<PowerDbm, LinkError> {
    let loss = model.loss_db(d_m, cfg.fc_hz)?;
    Ok(PowerDbm(cfg.fixed_budget_db() - loss.0 - shadowing_db))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    Received,
    Lost,
}

/// Hard threshold; the boundary counts as received.
pub fn reception_decision(p_rx: PowerDbm, cfg: &LinkBudgetConfig) -> Reception {
    if p_rx.0 >= cfg.sensitivity_dbm {
        Reception::Received
    } else {
        Reception::Lost
    }
}

/// Sensitivity that puts the free-space, no-shadowing crossover exactly at
/// `range_m`.
pub fn calibrate_sensitivity_dbm(cfg: &LinkBudgetConfig, range_m: f64) -> Result<f64, LinkError> {
    Ok(cfg.fixed_budget_db() - free_space_loss_db(range_m, cfg.fc_hz)?.0)
}

/// Largest distance at which a frame is still received under free space
/// without shadowing, found by bisection over `[lo_m, hi_m]`.
pub fn free_space_crossover_m(cfg: &LinkBudgetConfig, lo_m: f64, hi_m: f64) -> Option<f64> {
    let model = PropagationModel::FreeSpace;
    let received = |d: f64| {
        received_power_dbm(d, cfg, &model, 0.0)
            .map(|p| reception_decision(p, cfg) == Reception::Received)
            .unwrap_or(false)
    };
    if !received(lo_m) {
        return None;
    }
    if received(hi_m) {
        return Some(hi_m);
    }
    let (mut lo, mut hi) = (lo_m, hi_m);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if received(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    Some(lo)
}
