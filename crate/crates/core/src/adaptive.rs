//! Restart decisions and the step-size / primal-weight controller shared by
//! both Fisher solvers.
//!
//! Step sizes are parameterized as `τ = η/ω` and `σ = ηω`. `η` sets the
//! overall scale and is kept inside `[0.01, 3]·η_initial`; `ω` balances
//! primal against dual progress and is smoothed at every restart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestartParams {
    pub beta_sufficient: f64,
    pub beta_necessary: f64,
    pub beta_artificial: f64,
}

impl Default for RestartParams {
    fn default() -> Self {
        Self {
            beta_sufficient: 0.2,
            beta_necessary: 0.8,
            beta_artificial: 0.2,
        }
    }
}

impl RestartParams {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.beta_sufficient
            && self.beta_sufficient < self.beta_necessary
            && self.beta_necessary < 1.0
            && 0.0 < self.beta_artificial
            && self.beta_artificial <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid restart parameters {self:?}")))
        }
    }
}

/// Three-way restart test on the relative KKT error of the restart candidate.
///
/// Restarts on sufficient decay, on necessary decay once progress stalls, or
/// when the current inner loop has grown to a fixed fraction of all
/// iterations so far.
pub fn should_restart(
    metric_now: f64,
    metric_at_last_restart: f64,
    metric_previous: f64,
    inner_len: usize,
    total_iters: usize,
    params: &RestartParams,
) -> bool {
    let sufficient = metric_now <= params.beta_sufficient * metric_at_last_restart;
    let necessary = metric_now <= params.beta_necessary * metric_at_last_restart
        && metric_now > metric_previous;
    let artificial = inner_len as f64 >= params.beta_artificial * total_iters as f64;
    sufficient || necessary || artificial
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    /// `σ = τ = 1/(2L)`; requires fixed-length restarts to match the theory.
    Theory,
    /// Local step-size search with `η` clamped and `ω` smoothed at restarts.
    Adaptive,
    /// `η = η_initial` throughout, `ω` still adapted. Ablation mode.
    FixedEta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepParams {
    /// Smoothing weight of the newest primal-weight estimate.
    pub theta: f64,
    pub eta_min_factor: f64,
    pub eta_max_factor: f64,
    /// `ω` must stay within `[ω_init / f, ω_init · f]` at each check.
    pub omega_bound_factor: f64,
    pub omega_check_every: usize,
    /// `η_initial = eta_initial_scale / L̂`.
    pub eta_initial_scale: f64,
}

impl Default for StepParams {
    fn default() -> Self {
        Self {
            theta: 0.2,
            eta_min_factor: 0.01,
            eta_max_factor: 3.0,
            omega_bound_factor: 4.0,
            omega_check_every: 3,
            eta_initial_scale: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepController {
    pub eta: f64,
    pub eta_initial: f64,
    pub omega: f64,
    pub omega_initial: f64,
    pub params: StepParams,
    pub restarts_since_check: usize,
    /// Number of times `ω` was reset at a bound check.
    pub omega_resets: usize,
}

impl StepController {
    pub fn new(eta_initial: f64, omega_initial: f64, params: StepParams) -> Self {
        Self {
            eta: eta_initial,
            eta_initial,
            omega: omega_initial,
            omega_initial,
            params,
            restarts_since_check: 0,
            omega_resets: 0,
        }
    }

    pub fn tau(&self) -> f64 {
        self.eta / self.omega
    }

    pub fn sigma(&self) -> f64 {
        self.eta * self.omega
    }

    pub fn eta_bounds(&self) -> (f64, f64) {
        (
            self.params.eta_min_factor * self.eta_initial,
            self.params.eta_max_factor * self.eta_initial,
        )
    }

    pub fn omega_bounds(&self) -> (f64, f64) {
        let f = self.params.omega_bound_factor;
        (self.omega_initial / f, self.omega_initial * f)
    }

    pub fn clamp_eta(&self, proposal: f64) -> f64 {
        let (lo, hi) = self.eta_bounds();
        proposal.clamp(lo, hi)
    }

    pub fn at_eta_floor(&self) -> bool {
        self.eta <= self.eta_bounds().0
    }

    /// Next `η` after a step with local bound `eta_bar` at step count
    /// `k ≥ 1`: grows by at most `1 + k^-0.6`, stays below
    /// `(1 - k^-0.3)·η̄`, and is clamped to the allowed range.
    pub fn next_eta(&self, eta_bar: f64, k: usize) -> f64 {
        let k = k.max(1) as f64;
        let shrink = (1.0 - k.powf(-0.3)) * eta_bar;
        let grow = (1.0 + k.powf(-0.6)) * self.eta;
        let proposal = if eta_bar.is_finite() {
            // k = 1 gives a zero shrink cap; fall back to η̄ itself.
            if shrink > 0.0 {
                shrink.min(grow)
            } else {
                eta_bar.min(grow)
            }
        } else {
            grow
        };
        self.clamp_eta(proposal)
    }

    /// Restart-boundary update from the distances moved by the primal and
    /// dual restart points.
    pub fn update_weights(&mut self, primal_move: f64, dual_move: f64) {
        if primal_move > 0.0 && dual_move > 0.0 && primal_move.is_finite() && dual_move.is_finite()
        {
            let th = self.params.theta;
            self.omega = (th * (dual_move / primal_move).ln() + (1.0 - th) * self.omega.ln()).exp();
        }
        self.restarts_since_check += 1;
        if self.restarts_since_check >= self.params.omega_check_every {
            self.restarts_since_check = 0;
            let (lo, hi) = self.omega_bounds();
            if !(lo..=hi).contains(&self.omega) {
                self.omega = self.omega_initial;
                self.omega_resets += 1;
            }
        }
        self.eta = self.clamp_eta(self.eta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restart_examples() {
        let p = RestartParams::default();
        // sufficient decay
        assert!(should_restart(0.1, 1.0, 0.05, 10, 1000, &p));
        // 0.9x and still improving: none of the three
        assert!(!should_restart(0.9, 1.0, 0.95, 10, 1000, &p));
        // artificial
        assert!(should_restart(0.9, 1.0, 0.95, 250, 1000, &p));
        // necessary decay with a stall
        assert!(should_restart(0.7, 1.0, 0.6, 10, 1000, &p));
        assert!(!should_restart(0.85, 1.0, 0.6, 10, 1000, &p));
    }

    #[test]
    fn restart_params_validate() {
        assert!(RestartParams::default().validate().is_ok());
        let bad = RestartParams {
            beta_sufficient: 0.9,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn equal_moves_keep_omega() {
        let mut c = StepController::new(0.5, 1.0, StepParams::default());
        c.update_weights(0.3, 0.3);
        assert!((c.omega - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_moves_pull_omega_toward_one() {
        let mut c = StepController::new(0.5, 2.0, StepParams::default());
        c.update_weights(0.3, 0.3);
        assert!((c.omega - 2f64.powf(0.8)).abs() < 1e-14);
    }

    #[test]
    fn zero_moves_keep_omega() {
        let mut c = StepController::new(0.5, 2.0, StepParams::default());
        c.update_weights(0.0, 1.0);
        assert_eq!(c.omega, 2.0);
    }

    #[test]
    fn omega_reset_on_third_restart_check() {
        let mut c = StepController::new(0.5, 1.0, StepParams::default());
        // Pushes ω up by a factor 1e6^0.2 ≈ 15.8 per call, beyond the ×4 bound.
        c.update_weights(1.0, 1e6);
        assert!(c.omega > 4.0);
        c.update_weights(1.0, 1e6);
        assert!(c.omega > 4.0);
        c.update_weights(1.0, 1e6);
        assert_eq!(c.omega, c.omega_initial);
        assert_eq!(c.omega_resets, 1);
    }

    #[test]
    fn eta_clamped_to_range() {
        let c = StepController::new(0.5, 1.0, StepParams::default());
        assert_eq!(c.clamp_eta(10.0 * 0.5), 3.0 * 0.5);
        assert_eq!(c.clamp_eta(1e-9), 0.01 * 0.5);
        let mut c2 = c.clone();
        for k in 1..200 {
            c2.eta = c2.next_eta(f64::INFINITY, k);
        }
        assert_eq!(c2.eta, 1.5);
    }

    #[test]
    fn step_pair_product_is_eta_squared() {
        let c = StepController::new(0.37, 5.3, StepParams::default());
        assert!((c.tau() * c.sigma() - 0.37 * 0.37).abs() < 1e-15);
    }
}
