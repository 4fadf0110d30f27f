//! Numerical evaluation of the trajectory energy functional and the
//! propositions behind it.
//!
//! The energy of a mean path splits into a kinetic term (integral of half the
//! squared velocity) and a control term (integral of half the squared gap
//! between the path velocity and the expected drift). Quadrature is composite
//! trapezoid over a uniform grid with velocities from central differences
//! (second-order one-sided stencils at the ends), which is exact for linear
//! paths and O(1/n^2) for smooth ones.

use crate::error::{Error, Result};
use crate::numcore::{SeededRng, Tensor};
use crate::trajectory::{diffuse_state, mean_path, TrajectoryKind, TrajectoryParams};

/// Default number of quadrature intervals.
pub const DEFAULT_QUADRATURE_N: usize = 2048;

/// Energy summary for one trajectory family between fixed endpoints.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnergyReport {
    pub kind: TrajectoryKind,
    /// Quadrature of half the squared mean-path velocity.
    pub kinetic_energy: f64,
    /// Quadrature of half the squared gap between the mean-path velocity and
    /// the constant-velocity transport between the realized endpoints.
    pub control_energy: f64,
    /// Squared realized displacement over twice the elapsed time.
    pub jensen_lower_bound: f64,
    /// `kinetic_energy - jensen_lower_bound`; nonnegative up to quadrature
    /// tolerance, zero exactly for constant-velocity paths.
    pub jensen_gap: f64,
    /// Closed-form kinetic energy where the family admits one.
    pub closed_form_reference: Option<f64>,
    pub n_quadrature: usize,
    pub passed: bool,
}

/// Result of a Jensen minimality check.
#[derive(Debug, Clone, Copy)]
pub struct JensenCheck {
    pub energy: f64,
    pub lower_bound: f64,
    pub gap: f64,
}

/// Quadrature of `1/2 * ||mu_dot(t)||^2` over `[t_start, t_end]`.
pub fn kinetic_energy<F>(mean_path_fn: F, t_start: f64, t_end: f64, n: usize) -> Result<f64>
where
    F: Fn(f64) -> Tensor,
{
    let (grid, values) = sample_path(&mean_path_fn, t_start, t_end, n)?;
    let vels = grid_velocities(&grid, &values);
    let integrand: Vec<f64> = vels.iter().map(|v| 0.5 * v.sq_norm()).collect();
    trapezoid(&grid, &integrand)
}

/// Quadrature of `1/2 * ||mu_dot(t) - drift(t)||^2` over a uniform grid.
pub fn control_energy<F, G>(mean_path_fn: F, drift_fn: G, t_grid: &[f64]) -> Result<f64>
where
    F: Fn(f64) -> Tensor,
    G: Fn(f64) -> Tensor,
{
    if t_grid.len() < 3 {
        return Err(Error::Domain(
            "control energy needs a grid of >= 3 nodes".into(),
        ));
    }
    let h = t_grid[1] - t_grid[0];
    if h <= 0.0 {
        return Err(Error::Domain("grid must be ascending".into()));
    }
    for w in t_grid.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::Domain("grid must be uniform".into()));
        }
    }
    let values: Vec<Tensor> = t_grid.iter().map(|&t| mean_path_fn(t)).collect();
    for (i, v) in values.iter().enumerate() {
        v.check_finite(&format!("mean path at node {i}"))?;
    }
    let vels = grid_velocities(t_grid, &values);
    let integrand: Vec<f64> = vels
        .iter()
        .zip(t_grid)
        .map(|(v, &t)| 0.5 * v.sub(&drift_fn(t)).sq_norm())
        .collect();
    trapezoid(t_grid, &integrand)
}

/// Kinetic energy against its displacement lower bound
/// `||mu(t_end) - mu(t_start)||^2 / (2 (t_end - t_start))`.
///
/// The gap is nonnegative up to quadrature tolerance and vanishes exactly for
/// constant-velocity paths.
pub fn jensen_check<F>(mean_path_fn: F, t_start: f64, t_end: f64, n: usize) -> Result<JensenCheck>
where
    F: Fn(f64) -> Tensor,
{
    let energy = kinetic_energy(&mean_path_fn, t_start, t_end, n)?;
    let disp = mean_path_fn(t_end).sub(&mean_path_fn(t_start));
    let lower_bound = disp.sq_norm() / (2.0 * (t_end - t_start));
    Ok(JensenCheck {
        energy,
        lower_bound,
        gap: energy - lower_bound,
    })
}

/// The adaptation-energy quadratic at one schedule point:
/// `C1 (alpha - (1-t))^2 + d (beta - t)^2`.
pub fn adaptation_energy(t: f64, alpha: f64, beta: f64, c1: f64, d: usize) -> f64 {
    let da = alpha - (1.0 - t);
    let db = beta - t;
    c1 * da * da + d as f64 * db * db
}

/// Uniform evaluation grid over the `(alpha, beta)` square.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            alpha_range: (0.0, 1.0),
            beta_range: (0.0, 1.0),
            resolution: 0.01,
        }
    }
}

/// The adaptation-energy quadratic evaluated on a grid, with its argmin.
#[derive(Debug, Clone)]
pub struct AdaptationEnergyGrid {
    pub t: f64,
    pub c1: f64,
    pub d: usize,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Row-major over `(alpha, beta)`.
    pub values: Vec<f64>,
    pub argmin: (f64, f64),
    pub min_value: f64,
}

/// Evaluates the adaptation-energy quadratic on the grid and locates its
/// minimum; the continuous minimizer is `(1 - t, t)` with value zero.
pub fn adaptation_energy_landscape(
    t: f64,
    c1: f64,
    d: usize,
    spec: &GridSpec,
) -> Result<AdaptationEnergyGrid> {
    if c1 <= 0.0 {
        return Err(Error::Domain(format!("c1 = {c1} must be > 0")));
    }
    if d == 0 {
        return Err(Error::Domain("d must be >= 1".into()));
    }
    if spec.resolution <= 0.0 {
        return Err(Error::Domain("grid resolution must be > 0".into()));
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let steps = ((hi - lo) / spec.resolution).round() as usize;
        (0..=steps)
            .map(|i| lo + i as f64 * spec.resolution)
            .collect()
    };
    let alphas = axis(spec.alpha_range);
    let betas = axis(spec.beta_range);
    let mut values = Vec::with_capacity(alphas.len() * betas.len());
    let mut argmin = (alphas[0], betas[0]);
    let mut min_value = f64::INFINITY;
    for &a in &alphas {
        for &b in &betas {
            let j = adaptation_energy(t, a, b, c1, d);
            if j < min_value {
                min_value = j;
                argmin = (a, b);
            }
            values.push(j);
        }
    }
    Ok(AdaptationEnergyGrid {
        t,
        c1,
        d,
        alphas,
        betas,
        values,
        argmin,
        min_value,
    })
}

/// Monte-Carlo estimate of the expected squared displacement between the
/// bridge state `alpha * s + beta * g` and the reference line state
/// `(1-t) * s + t * g`, with `s` a fixed signal of squared norm `c1` and
/// `g ~ N(0, I_d)`. Converges to [`adaptation_energy`].
pub fn mc_adaptation_energy(
    t: f64,
    alpha: f64,
    beta: f64,
    c1: f64,
    d: usize,
    n_draws: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    if c1 <= 0.0 || d == 0 || n_draws == 0 {
        return Err(Error::Domain("need c1 > 0, d >= 1, n_draws >= 1".into()));
    }
    let signal = Tensor::from_slice(&vec![(c1 / d as f64).sqrt(); d]);
    let da = alpha - (1.0 - t);
    let db = beta - t;
    let mut acc = 0.0;
    for _ in 0..n_draws {
        let g = rng.normal_tensor(d);
        let delta = signal.affine(da, &g, db);
        acc += delta.sq_norm();
    }
    Ok(acc / n_draws as f64)
}

/// Integrates the error-feedback dynamics `delta_dot = -alpha * delta` with
/// classic fourth-order Runge-Kutta and returns the maximum absolute
/// deviation from the closed-form decay `delta0 * exp(-alpha t)` over the
/// grid.
pub fn feedback_decay_check(
    delta0: &Tensor,
    alpha_gain: f64,
    t_end: f64,
    n_steps: usize,
) -> Result<f64> {
    if alpha_gain <= 0.0 {
        return Err(Error::Domain(format!(
            "alpha_gain = {alpha_gain} must be > 0"
        )));
    }
    if n_steps < 10 {
        return Err(Error::Domain("need n_steps >= 10".into()));
    }
    if t_end <= 0.0 {
        return Err(Error::Domain("t_end must be > 0".into()));
    }
    let h = t_end / n_steps as f64;
    let mut state = delta0.clone();
    let mut max_dev: f64 = 0.0;
    // Linear scalar field: RK4 multiplies the state by the same factor each
    // step, component-wise.
    let f = |v: f64| -alpha_gain * v;
    for k in 0..=n_steps {
        let t = k as f64 * h;
        let exact = delta0.scale((-alpha_gain * t).exp());
        let dev = state
            .data()
            .iter()
            .zip(exact.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        max_dev = max_dev.max(dev);
        if k < n_steps {
            let next: Vec<f64> = state
                .data()
                .iter()
                .map(|&v| {
                    let k1 = f(v);
                    let k2 = f(v + 0.5 * h * k1);
                    let k3 = f(v + 0.5 * h * k2);
                    let k4 = f(v + h * k3);
                    v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                })
                .collect();
            state = Tensor::new(vec![next.len()], next)?;
        }
    }
    Ok(max_dev)
}

/// Horizon-truncated Lipschitz budget of the bridge field.
#[derive(Debug, Clone, Copy)]
pub struct VelocityBudget {
    /// Quadrature of `1/(1-t)` over `[0, T0]`.
    pub integral: f64,
    /// `ln(1/(1-T0))`.
    pub analytic: f64,
    /// Largest sampled bridge-velocity norm.
    pub sup_velocity: f64,
    /// Envelope `C / (1 - T0)` with `C` calibrated from the sampled states.
    pub sup_bound: f64,
}

/// Integrates the field's Lipschitz density over the truncated horizon and
/// samples the realized bridge velocity to confirm it stays under the
/// `C / (1 - T0)` envelope. Diverges as `T0 -> 1`, hence the domain check.
pub fn velocity_budget(t0: f64, n: usize, rng: &mut SeededRng) -> Result<VelocityBudget> {
    if !(t0 > 0.0 && t0 < 1.0) {
        return Err(Error::Domain(format!(
            "t0 = {t0} outside (0, 1); the budget diverges at 1"
        )));
    }
    if n < 2 {
        return Err(Error::Domain("need n >= 2".into()));
    }
    let h = t0 / n as f64;
    let f = |t: f64| 1.0 / (1.0 - t);
    let mut integral = 0.5 * (f(0.0) + f(t0));
    for i in 1..n {
        integral += f(i as f64 * h);
    }
    integral *= h;
    let analytic = (1.0 / (1.0 - t0)).ln();

    // Sample realized velocities over random bounded states and a time grid.
    let dim = 4;
    let mut sup_velocity: f64 = 0.0;
    let mut calib: f64 = 0.0;
    for _ in 0..64 {
        let unit = |rng: &mut SeededRng| {
            Tensor::from_slice(
                &(0..dim)
                    .map(|_| rng.uniform_in(-1.0, 1.0))
                    .collect::<Vec<_>>(),
            )
        };
        let x0 = unit(rng);
        let y = unit(rng);
        let x_term = unit(rng);
        let eps = x_term.sub(&x0);
        for i in 0..=16 {
            let t = t0 * i as f64 / 16.0;
            let v = crate::trajectory::bridge_velocity(&x0, &eps, &y, t, t0)?;
            sup_velocity = sup_velocity.max(v.norm());
            let x_t = if t > 0.0 {
                diffuse_state(&x0, &y, &x_term, t, t0)?.x_t
            } else {
                x0.clone()
            };
            calib = calib.max(x_term.sub(&x_t).norm() + y.sub(&x0).norm() / t0);
        }
    }
    Ok(VelocityBudget {
        integral,
        analytic,
        sup_velocity,
        sup_bound: calib / (1.0 - t0),
    })
}

/// Builds the per-family energy summary between fixed endpoints.
///
/// The control term is measured against the constant-velocity transport
/// between the family's realized endpoints, so the geodesic family scores
/// zero and curved families score strictly positive.
pub fn energy_report(
    params: &TrajectoryParams,
    x0: &Tensor,
    y: &Tensor,
    n: usize,
) -> Result<EnergyReport> {
    params.validate()?;
    let t_end = match params.kind {
        TrajectoryKind::EBridge => params.t0,
        _ => 1.0,
    };
    let p = *params;
    let x0c = x0.clone();
    let yc = y.clone();
    let mean = move |t: f64| mean_path(&p, &x0c, &yc, t).expect("mean path in domain");

    let check = jensen_check(&mean, 0.0, t_end, n)?;
    let endpoints = (mean(0.0), mean(t_end));
    let const_drift = endpoints.1.sub(&endpoints.0).scale(1.0 / t_end);
    let grid: Vec<f64> = (0..=n).map(|i| t_end * i as f64 / n as f64).collect();
    let control = control_energy(&mean, |_| const_drift.clone(), &grid)?;

    let closed_form = match params.kind {
        TrajectoryKind::EBridge => Some(y.sub(x0).sq_norm() / (2.0 * params.t0)),
        TrajectoryKind::StandardDiffusion => Some(0.5 * x0.sq_norm()),
        TrajectoryKind::I2sbBridge => Some(0.5 * y.sub(x0).sq_norm()),
        TrajectoryKind::OuMeanPath => {
            let th = params.theta;
            Some(x0.sub(y).sq_norm() * th * (1.0 - (-2.0 * th).exp()) / 4.0)
        }
    };

    let gap_ok = check.gap >= -1e-9;
    let family_ok = match params.kind {
        TrajectoryKind::EBridge => {
            control <= 1e-10
                && closed_form
                    .map(|r| (check.energy - r).abs() <= 1e-6)
                    .unwrap_or(false)
                && check.gap <= 1e-8
        }
        TrajectoryKind::StandardDiffusion | TrajectoryKind::I2sbBridge => check.gap <= 1e-8,
        TrajectoryKind::OuMeanPath => check.gap > 1e-4,
    };

    Ok(EnergyReport {
        kind: params.kind,
        kinetic_energy: check.energy,
        control_energy: control,
        jensen_lower_bound: check.lower_bound,
        jensen_gap: check.gap,
        closed_form_reference: closed_form,
        n_quadrature: n,
        passed: gap_ok && family_ok,
    })
}

fn sample_path<F>(f: &F, t_start: f64, t_end: f64, n: usize) -> Result<(Vec<f64>, Vec<Tensor>)>
where
    F: Fn(f64) -> Tensor,
{
    if n < 2 {
        return Err(Error::Domain("quadrature needs n >= 2".into()));
    }
    if t_end <= t_start {
        return Err(Error::Domain(format!(
            "empty integration interval [{t_start}, {t_end}]"
        )));
    }
    let h = (t_end - t_start) / n as f64;
    let grid: Vec<f64> = (0..=n)
        .map(|i| {
            if i == n {
                t_end
            } else {
                t_start + i as f64 * h
            }
        })
        .collect();
    let values: Vec<Tensor> = grid.iter().map(|&t| f(t)).collect();
    for (i, v) in values.iter().enumerate() {
        v.check_finite(&format!("path value at node {i}"))?;
    }
    Ok((grid, values))
}

/// Central differences at interior nodes, second-order one-sided stencils at
/// the ends. Exact for paths affine in time.
fn grid_velocities(grid: &[f64], values: &[Tensor]) -> Vec<Tensor> {
    let n = grid.len() - 1;
    let h = (grid[n] - grid[0]) / n as f64;
    let mut vels = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let v = if i == 0 {
            values[0]
                .scale(-3.0)
                .affine(1.0, &values[1], 4.0)
                .affine(1.0, &values[2], -1.0)
                .scale(1.0 / (2.0 * h))
        } else if i == n {
            values[n]
                .scale(3.0)
                .affine(1.0, &values[n - 1], -4.0)
                .affine(1.0, &values[n - 2], 1.0)
                .scale(1.0 / (2.0 * h))
        } else {
            values[i + 1].sub(&values[i - 1]).scale(1.0 / (2.0 * h))
        };
        vels.push(v);
    }
    vels
}

fn trapezoid(grid: &[f64], integrand: &[f64]) -> Result<f64> {
    let n = grid.len() - 1;
    let h = (grid[n] - grid[0]) / n as f64;
    let mut sum = 0.5 * (integrand[0] + integrand[n]);
    for v in &integrand[1..n] {
        sum += v;
    }
    let out = sum * h;
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite quadrature value".into()));
    }
    Ok(out)
}
