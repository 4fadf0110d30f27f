//! Bridge trajectories and their mean paths.
//!
//! The central object is the geodesic bridge: the mean path between the clean
//! state and the degraded observation is the constant-velocity line over a
//! horizon `t in [0, T0]`, and the stochastic state at time `t` mixes that
//! line with a terminal Gaussian draw using the schedule `alpha_t = 1 - t`,
//! `beta_t = t`:
//!
//! ```text
//! x_tilde(t) = (1 - t/T0) * x0 + (t/T0) * y
//! x(t)       = (1 - t) * x_tilde(t) + t * x_terminal
//! ```
//!
//! Baseline families (pure-noise rectified flow, arch-variance bridge,
//! mean-reverting exponential path) are provided for the energy comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{SeededRng, Tensor};

/// Trajectory family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Geodesic bridge over `[0, T0]`.
    EBridge,
    /// Rectified-flow line from the clean state to pure Gaussian noise; the
    /// degraded observation enters only as network conditioning.
    StandardDiffusion,
    /// Bridge with mean `(1-t) x0 + t y` and arch-shaped variance
    /// `sigma^2 t (1-t)`.
    I2sbBridge,
    /// Mean-reverting exponential path toward the degraded observation.
    OuMeanPath,
}

/// Trajectory family plus its parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub kind: TrajectoryKind,
    /// Horizon in `(0, 1]`.
    pub t0: f64,
    /// Noise scale of the arch-variance bridge.
    pub sigma: f64,
    /// Mean-reversion rate of the exponential path.
    pub theta: f64,
}

impl TrajectoryParams {
    pub fn e_bridge(t0: f64) -> Self {
        Self {
            kind: TrajectoryKind::EBridge,
            t0,
            sigma: 0.0,
            theta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0 <= 1.0) {
            return Err(Error::Domain(format!("t0 = {} outside (0, 1]", self.t0)));
        }
        if self.sigma < 0.0 {
            return Err(Error::Domain(format!(
                "sigma = {} must be >= 0",
                self.sigma
            )));
        }
        if self.kind == TrajectoryKind::OuMeanPath && self.theta <= 0.0 {
            return Err(Error::Domain(format!("theta = {} must be > 0", self.theta)));
        }
        Ok(())
    }
}

/// One training tuple: endpoints, terminal draw, time, and the two
/// trajectory states built from them.
#[derive(Debug, Clone)]
pub struct BridgeBatch {
    pub x0: Tensor,
    pub y: Tensor,
    pub x_terminal: Tensor,
    pub t: f64,
    pub t0: f64,
    pub x_tilde: Tensor,
    pub x_t: Tensor,
}

/// Point on the geodesic line: `(1 - t/T0) * x0 + (t/T0) * y`.
pub fn interp_geodesic(x0: &Tensor, y: &Tensor, t: f64, t0: f64) -> Result<Tensor> {
    check_horizon(t0)?;
    if !(0.0..=t0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {t0}]")));
    }
    let r = t / t0;
    Ok(x0.affine(1.0 - r, y, r))
}

/// Builds the full diffusion state at time `t in (0, T0]`.
///
/// `t = 0` is disallowed: training samples times from the half-open interval
/// excluding the clean endpoint.
pub fn diffuse_state(
    x0: &Tensor,
    y: &Tensor,
    x_terminal: &Tensor,
    t: f64,
    t0: f64,
) -> Result<BridgeBatch> {
    check_horizon(t0)?;
    if !(t > 0.0 && t <= t0) {
        return Err(Error::Domain(format!("t = {t} outside (0, {t0}]")));
    }
    let x_tilde = interp_geodesic(x0, y, t, t0)?;
    let x_t = x_tilde.affine(1.0 - t, x_terminal, t);
    Ok(BridgeBatch {
        x0: x0.clone(),
        y: y.clone(),
        x_terminal: x_terminal.clone(),
        t,
        t0,
        x_tilde,
        x_t,
    })
}

/// Draws the restoration starting point `(1 - T0) * y + T0 * x_terminal` with
/// `x_terminal ~ N(0, I)`. Returns `(start, x_terminal)` so the draw can be
/// logged for reproducibility.
pub fn start_point(y: &Tensor, t0: f64, rng: &mut SeededRng) -> Result<(Tensor, Tensor)> {
    check_horizon(t0)?;
    let x_terminal = rng.normal_tensor(y.len());
    let start = y.affine(1.0 - t0, &x_terminal, t0);
    Ok((start, x_terminal))
}

/// Mean path of the given family at time `t`.
pub fn mean_path(params: &TrajectoryParams, x0: &Tensor, y: &Tensor, t: f64) -> Result<Tensor> {
    params.validate()?;
    match params.kind {
        TrajectoryKind::EBridge => interp_geodesic(x0, y, t, params.t0),
        TrajectoryKind::StandardDiffusion => {
            check_unit_time(t)?;
            // Toward zero-mean noise: E[x_t] = (1 - t) x0.
            Ok(x0.scale(1.0 - t))
        }
        TrajectoryKind::I2sbBridge => {
            check_unit_time(t)?;
            Ok(x0.affine(1.0 - t, y, t))
        }
        TrajectoryKind::OuMeanPath => {
            if t < 0.0 {
                return Err(Error::Domain(format!("t = {t} must be >= 0")));
            }
            let decay = (-params.theta * t).exp();
            // y + (x0 - y) e^{-theta t}
            Ok(y.affine(1.0 - decay, x0, decay))
        }
    }
}

/// Sample from the arch-variance bridge:
/// mean `(1-t) x0 + t y`, standard deviation `sigma * sqrt(t (1-t))`.
pub fn i2sb_state(
    x0: &Tensor,
    y: &Tensor,
    t: f64,
    sigma: f64,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    check_unit_time(t)?;
    if sigma < 0.0 {
        return Err(Error::Domain(format!("sigma = {sigma} must be >= 0")));
    }
    let mean = x0.affine(1.0 - t, y, t);
    let std = sigma * (t * (1.0 - t)).sqrt();
    if std == 0.0 {
        return Ok(mean);
    }
    let noise = rng.normal_tensor(x0.len());
    Ok(mean.affine(1.0, &noise, std))
}

/// Probability-flow velocity of the bridge at time `t`, given the clean
/// estimate, the predicted terminal-noise vector, and the conditioning:
///
/// ```text
/// v = (x_terminal - x_tilde(t)) + ((1 - t)/T0) * (y - xhat0)
/// ```
///
/// with `x_terminal = eps + xhat0` and `x_tilde` rebuilt from
/// `(xhat0, y, t, T0)`. Equals the exact time derivative of
/// [`diffuse_state`] for fixed endpoints and terminal draw.
///
/// `T0 = 1` is permitted — the horizon caps `t`, so the value stays finite —
/// but the Lipschitz budget of the induced field diverges as `T0 -> 1`.
pub fn bridge_velocity(
    xhat0: &Tensor,
    eps: &Tensor,
    y: &Tensor,
    t: f64,
    t0: f64,
) -> Result<Tensor> {
    check_horizon(t0)?;
    if !(0.0..=t0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {t0}]")));
    }
    let x_terminal = eps.add(xhat0);
    let x_tilde = interp_geodesic(xhat0, y, t, t0)?;
    let pull = y.sub(xhat0).scale((1.0 - t) / t0);
    Ok(x_terminal.sub(&x_tilde).add(&pull))
}

fn check_horizon(t0: f64) -> Result<()> {
    if !(t0 > 0.0 && t0 <= 1.0) {
        return Err(Error::Domain(format!("t0 = {t0} outside (0, 1]")));
    }
    Ok(())
}

fn check_unit_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}
