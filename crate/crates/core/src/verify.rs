//! Numerical verification suite.
//!
//! Every proposition the trajectory and solver analysis rests on is checked
//! here with oracles only — no trained model is involved, so the suite runs
//! from a cold start in seconds. Each check reports a measured value, the
//! reference it is held against, the tolerance, and a pass flag; the pass
//! logic is one of:
//!
//! - two-sided: `|value - reference| <= tolerance`
//! - upper bound (names ending `_max`): `value <= reference + tolerance`
//! - lower bound (names ending `_min`): `value >= reference - tolerance`
//!
//! `perturb_coeffs` is a fault-injection hook: it multiplies the solver's `A`
//! coefficient by `1 + perturb` inside the inversion battery, which must make
//! the battery fail for any perturbation above the tolerance. A verification
//! suite that cannot detect a broken coefficient would be worthless.

use serde::Serialize;

use crate::energy::{
    adaptation_energy, adaptation_energy_landscape, control_energy, feedback_decay_check,
    jensen_check, kinetic_energy, mc_adaptation_energy, velocity_budget, GridSpec,
};
use crate::error::Result;
use crate::numcore::{Denoiser, Grads, OracleEps, SeededRng, Tensor};
use crate::solver::{solve_with_coeffs, solver_coeffs};
use crate::tasks::{gen_pairs, Degradation, DegradationParams, TaskKind, TaskSpec};
use crate::trajectory::{diffuse_state, mean_path, start_point, TrajectoryKind, TrajectoryParams};

/// One verified proposition.
#[derive(Debug, Clone, Serialize)]
pub struct PropositionResult {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropositionResult {
    fn two_sided(name: &str, value: f64, reference: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            reference,
            tolerance,
            passed: (value - reference).abs() <= tolerance,
        }
    }

    fn upper(name: &str, value: f64, reference: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            reference,
            tolerance,
            passed: value <= reference + tolerance,
        }
    }

    fn lower(name: &str, value: f64, reference: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            reference,
            tolerance,
            passed: value >= reference - tolerance,
        }
    }
}

/// Suite options.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Fault-injection factor applied to the solver coefficient `A`.
    pub perturb_coeffs: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            perturb_coeffs: 0.0,
            seed: 0xEB,
        }
    }
}

const INVERSION_HORIZONS: [f64; 7] = [0.2, 0.35, 0.5, 0.65, 0.8, 0.95, 1.0];

/// Runs the full proposition suite and returns one result per check.
pub fn run_verification(opts: &VerifyOptions) -> Result<Vec<PropositionResult>> {
    let mut results = Vec::new();
    let mut rng = SeededRng::new(opts.seed);

    // Closed-form solver inversion battery over random tuples.
    let mut max_rel = 0.0f64;
    let n_tuples = 10_000;
    for i in 0..n_tuples {
        let t0 = INVERSION_HORIZONS[i % INVERSION_HORIZONS.len()];
        let x0 = rng.normal_tensor(8);
        let y = rng.normal_tensor(8);
        let x_term = rng.normal_tensor(8);
        let t = t0 * (1.0 - rng.uniform());
        let batch = diffuse_state(&x0, &y, &x_term, t, t0)?;
        let mut coeffs = solver_coeffs(t, t0)?;
        if opts.perturb_coeffs != 0.0 {
            coeffs.a *= 1.0 + opts.perturb_coeffs;
            coeffs.c = 1.0 - coeffs.a;
        }
        let oracle = OracleEps::new(&x0, &x_term);
        let solved = solve_with_coeffs(&oracle, &batch.x_t, &y, &coeffs)?;
        let rel = solved.sub(&x0).norm() / (1.0 + x0.norm());
        max_rel = max_rel.max(rel);
    }
    results.push(PropositionResult::upper(
        "solver_inversion_rel_error_max",
        max_rel,
        0.0,
        1e-11,
    ));

    // Coefficient identities on a (t, T0) grid.
    let mut ident_dev = 0.0f64;
    let mut min_c = f64::INFINITY;
    for &t0 in &INVERSION_HORIZONS {
        for i in 0..=1000 {
            let t = t0 * i as f64 / 1000.0;
            let c = solver_coeffs(t, t0)?;
            ident_dev = ident_dev
                .max((c.c - (1.0 - c.a)).abs())
                .max((c.b - t).abs());
            min_c = min_c.min(c.c);
        }
    }
    results.push(PropositionResult::upper(
        "coeff_identities_dev_max",
        ident_dev,
        0.0,
        0.0,
    ));
    results.push(PropositionResult::lower(
        "coeff_c_grid_min",
        min_c,
        0.0,
        -f64::MIN_POSITIVE, // strictly positive
    ));
    let c0 = solver_coeffs(0.0, 1.0)?;
    results.push(PropositionResult::upper(
        "coeff_boundary_identity_dev_max",
        c0.a.abs().max(c0.b.abs()).max((c0.c - 1.0).abs()),
        0.0,
        0.0,
    ));
    // Minimum of C against its closed form, per horizon.
    let mut cmin_dev = 0.0f64;
    for &t0 in &INVERSION_HORIZONS {
        let analytic = if t0 >= 0.5 {
            1.0 - 1.0 / (4.0 * t0)
        } else {
            t0
        };
        let mut grid_min = f64::INFINITY;
        for i in 0..=4000 {
            grid_min = grid_min.min(solver_coeffs(t0 * i as f64 / 4000.0, t0)?.c);
        }
        cmin_dev = cmin_dev.max((grid_min - analytic).abs());
    }
    results.push(PropositionResult::upper(
        "coeff_c_min_closed_form_dev_max",
        cmin_dev,
        0.0,
        1e-6,
    ));

    // Geodesic kinetic energy against the closed form, and its Jensen gap.
    let x0 = Tensor::from_slice(&[0.4, -1.2, 0.9]);
    let y = Tensor::from_slice(&[-0.6, 0.8, 1.5]);
    let t0 = 0.8;
    let geod = TrajectoryParams::e_bridge(t0);
    let mean = |t: f64| mean_path(&geod, &x0, &y, t).unwrap();
    let e_quad = kinetic_energy(mean, 0.0, t0, 2048)?;
    let e_ref = y.sub(&x0).sq_norm() / (2.0 * t0);
    results.push(PropositionResult::two_sided(
        "jensen_geodesic_kinetic_closed_form",
        e_quad,
        e_ref,
        1e-6,
    ));
    let check = jensen_check(mean, 0.0, t0, 2048)?;
    results.push(PropositionResult::upper(
        "jensen_geodesic_gap_max",
        check.gap,
        0.0,
        1e-8,
    ));
    results.push(PropositionResult::lower(
        "jensen_geodesic_gap_min",
        check.gap,
        0.0,
        1e-9,
    ));

    // Exponential comparator: strictly positive gap at matched displacement.
    for &theta in &[0.5, 1.0, 2.0] {
        let ou = TrajectoryParams {
            kind: TrajectoryKind::OuMeanPath,
            t0: 1.0,
            sigma: 0.0,
            theta,
        };
        let mean = |t: f64| mean_path(&ou, &x0, &y, t).unwrap();
        let check = jensen_check(mean, 0.0, 1.0, 2048)?;
        results.push(PropositionResult::lower(
            &format!("jensen_exponential_gap_min_theta_{theta}"),
            check.gap,
            1e-4,
            0.0,
        ));
        // Quadrature against the closed-form exponential energy.
        let th = theta;
        let e_closed = x0.sub(&y).sq_norm() * th * (1.0 - (-2.0 * th).exp()) / 4.0;
        results.push(PropositionResult::two_sided(
            &format!("exponential_kinetic_closed_form_theta_{theta}"),
            check.energy,
            e_closed,
            1e-5 * e_closed.max(1.0),
        ));
    }

    // Zero control energy of the geodesic against its constant drift.
    let drift = y.sub(&x0).scale(1.0 / t0);
    let grid: Vec<f64> = (0..=2048).map(|i| t0 * i as f64 / 2048.0).collect();
    let mean = |t: f64| mean_path(&geod, &x0, &y, t).unwrap();
    let zero_control = control_energy(mean, |_| drift.clone(), &grid)?;
    results.push(PropositionResult::upper(
        "control_energy_geodesic_max",
        zero_control,
        0.0,
        1e-10,
    ));

    // Adaptation-energy landscape: argmin at the linear schedule.
    let mut argmin_dev = 0.0f64;
    for _ in 0..20 {
        let t = (rng.uniform_in(0.01, 0.99) * 100.0).round() / 100.0;
        let grid = adaptation_energy_landscape(t, 2.0, 8, &GridSpec::default())?;
        argmin_dev = argmin_dev
            .max((grid.argmin.0 - (1.0 - t)).abs())
            .max((grid.argmin.1 - t).abs());
    }
    results.push(PropositionResult::upper(
        "adaptation_argmin_dev_max",
        argmin_dev,
        0.0,
        1e-9,
    ));
    // Monte-Carlo expectation against the quadratic.
    let (t_mc, a_mc, b_mc, c1_mc, d_mc) = (0.5, 0.6, 0.3, 1.0, 16);
    let mc = mc_adaptation_energy(t_mc, a_mc, b_mc, c1_mc, d_mc, 100_000, &mut rng)?;
    let exact = adaptation_energy(t_mc, a_mc, b_mc, c1_mc, d_mc);
    results.push(PropositionResult::two_sided(
        "adaptation_mc_vs_analytic",
        mc,
        exact,
        0.02 * exact,
    ));

    // Error-feedback decay.
    let dev = feedback_decay_check(&Tensor::from_slice(&[1.0]), 2.0, 1.0, 1000)?;
    results.push(PropositionResult::upper(
        "feedback_decay_dev_max",
        dev,
        0.0,
        1e-8,
    ));
    let dev0 = feedback_decay_check(&Tensor::from_slice(&[0.0, 0.0]), 3.0, 1.0, 100)?;
    results.push(PropositionResult::upper(
        "feedback_zero_start_dev_max",
        dev0,
        0.0,
        0.0,
    ));

    // Horizon-truncated Lipschitz budget.
    for &b_t0 in &[0.5, 0.9, 0.95] {
        let budget = velocity_budget(b_t0, 1 << 20, &mut rng)?;
        results.push(PropositionResult::two_sided(
            &format!("velocity_budget_log_t0_{b_t0}"),
            budget.integral,
            budget.analytic,
            1e-6,
        ));
        results.push(PropositionResult::upper(
            &format!("velocity_sup_vs_envelope_t0_{b_t0}"),
            budget.sup_velocity,
            budget.sup_bound,
            0.0,
        ));
    }
    let mut mono_min = f64::INFINITY;
    let mut last = 0.0;
    for i in 0..=15 {
        let b_t0 = 0.2 + 0.05 * i as f64;
        let b = velocity_budget(b_t0, 1 << 14, &mut rng)?;
        if i > 0 {
            mono_min = mono_min.min(b.integral - last);
        }
        last = b.integral;
    }
    results.push(PropositionResult::lower(
        "velocity_budget_monotone_min_step",
        mono_min,
        0.0,
        -f64::MIN_POSITIVE,
    ));

    // Start-point mixture: distance to the observation grows with the horizon
    // at a fixed noise draw.
    let y_obs = rng.normal_tensor(8);
    let mut dist_last = 0.0;
    let mut dist_mono_min = f64::INFINITY;
    for (i, &m_t0) in [0.3, 0.5, 0.7, 0.9].iter().enumerate() {
        let mut draw = SeededRng::new(opts.seed ^ 0x5eed);
        let (start, _) = start_point(&y_obs, m_t0, &mut draw)?;
        let dist = start.sub(&y_obs).norm();
        if i > 0 {
            dist_mono_min = dist_mono_min.min(dist - dist_last);
        }
        dist_last = dist;
    }
    results.push(PropositionResult::lower(
        "start_mixture_distance_monotone_min_step",
        dist_mono_min,
        0.0,
        -f64::MIN_POSITIVE,
    ));

    Ok(results)
}

/// Per-family energy summaries at a fixed endpoint pair, for the report
/// emitted by the verification command.
pub fn family_energy_reports() -> Result<Vec<crate::energy::EnergyReport>> {
    use crate::energy::energy_report;
    let x0 = Tensor::from_slice(&[0.4, -1.2, 0.9]);
    let y = Tensor::from_slice(&[-0.6, 0.8, 1.5]);
    let families = [
        TrajectoryParams::e_bridge(0.8),
        TrajectoryParams {
            kind: TrajectoryKind::StandardDiffusion,
            t0: 1.0,
            sigma: 0.0,
            theta: 1.0,
        },
        TrajectoryParams {
            kind: TrajectoryKind::I2sbBridge,
            t0: 1.0,
            sigma: 1.0,
            theta: 1.0,
        },
        TrajectoryParams {
            kind: TrajectoryKind::OuMeanPath,
            t0: 1.0,
            sigma: 0.0,
            theta: 1.0,
        },
    ];
    families
        .iter()
        .map(|p| energy_report(p, &x0, &y, 2048))
        .collect()
}

/// Maximum relative error between reverse-mode parameter gradients of a
/// randomly initialized three-layer network and central finite differences
/// (step `1e-5`) of the scalarized output.
pub fn mlp_gradient_max_rel_error(seed: u64) -> Result<f64> {
    let mut net = Denoiser::init(&[7, 16, 8, 3], 2, seed)?;
    let mut rng = SeededRng::new(seed ^ 0xabcd);
    let x = rng.normal_tensor(3);
    let cond = rng.normal_tensor(2);
    let t = 0.4;
    let probe = rng.normal_tensor(3);

    let analytic = net.backward(&x, t, Some(&cond), &probe)?;
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let loss = |net: &Denoiser| -> f64 { net.forward(&x, t, Some(&cond)).unwrap().dot(&probe) };
    let n_layers = net.layer_dims().len() - 1;
    for k in 0..n_layers {
        for i in 0..net.params().weights[k].len() {
            let orig = net.params_mut().weights[k][i];
            net.params_mut().weights[k][i] = orig + h;
            let lp = loss(&net);
            net.params_mut().weights[k][i] = orig - h;
            let lm = loss(&net);
            net.params_mut().weights[k][i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic.weights[k][i];
            max_rel = max_rel.max((a - fd).abs() / fd.abs().max(a.abs()).max(1e-6));
        }
        for i in 0..net.params().biases[k].len() {
            let orig = net.params_mut().biases[k][i];
            net.params_mut().biases[k][i] = orig + h;
            let lp = loss(&net);
            net.params_mut().biases[k][i] = orig - h;
            let lm = loss(&net);
            net.params_mut().biases[k][i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic.biases[k][i];
            max_rel = max_rel.max((a - fd).abs() / fd.abs().max(a.abs()).max(1e-6));
        }
    }
    Ok(max_rel)
}

/// Maximum relative error between the analytic parameter gradient of the
/// frozen-tangent consistency surrogate and its central finite differences,
/// on a small unconditional network and a four-sample batch.
pub fn surrogate_gradient_max_rel_error(seed: u64) -> Result<f64> {
    use crate::solver::consistency_solve;
    use crate::training::total_derivative;

    let mut net = Denoiser::init(&[2, 8, 2], 0, seed)?;
    let mut rng = SeededRng::new(seed ^ 0x77);
    let mut batch = Vec::new();
    for _ in 0..4 {
        let x0 = rng.normal_tensor(2);
        let y = rng.normal_tensor(2);
        let x_term = rng.normal_tensor(2);
        let t0 = 0.8;
        let t = t0 * (1.0 - rng.uniform());
        batch.push(diffuse_state(&x0, &y, &x_term, t, t0)?);
    }
    let tangents: Vec<Tensor> = batch
        .iter()
        .map(|b| {
            total_derivative(
                &net.target(),
                &b.x0,
                &b.y,
                &b.x_terminal,
                b.t,
                b.t0,
                1e-3 * b.t0,
            )
        })
        .collect::<Result<_>>()?;

    let dim = 2;
    let scale = 1.0 / (batch.len() * dim) as f64;
    let surrogate = |net: &Denoiser| -> f64 {
        batch
            .iter()
            .zip(&tangents)
            .map(|(b, g)| {
                consistency_solve(&net.online(), &b.x_t, &b.y, b.t, b.t0)
                    .unwrap()
                    .dot(g)
                    * scale
            })
            .sum()
    };

    let mut analytic = Grads::zeros_like(net.params());
    for (b, g) in batch.iter().zip(&tangents) {
        let coeffs = solver_coeffs(b.t, b.t0)?;
        let cotangent = g.scale(-(coeffs.b / coeffs.c) * scale);
        let gb = net.backward(&b.x_t, b.t, Some(&b.y), &cotangent)?;
        analytic.add_scaled(&gb, 1.0);
    }

    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let n_layers = net.layer_dims().len() - 1;
    for k in 0..n_layers {
        for i in 0..net.params().weights[k].len() {
            let orig = net.params().weights[k][i];
            net.params_mut().weights[k][i] = orig + h;
            let lp = surrogate(&net);
            net.params_mut().weights[k][i] = orig - h;
            let lm = surrogate(&net);
            net.params_mut().weights[k][i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic.weights[k][i];
            max_rel = max_rel.max((a - fd).abs() / fd.abs().max(a.abs()).max(1e-6));
        }
    }
    Ok(max_rel)
}

/// Oracle fixed-point probe: tangent norm and consistency-gradient norm when
/// the tangent model is the exact predictor. Returns
/// `(max tangent norm, gradient norm)` over a fresh moons batch.
pub fn oracle_fixed_point_probe(seed: u64) -> Result<(f64, f64)> {
    use crate::training::{consistency_grads, sample_batch};

    let data = gen_pairs(&TaskSpec {
        kind: TaskKind::Moons2d,
        n_samples: 64,
        dim: 2,
        degradation: Degradation::GaussNoise,
        degradation_params: DegradationParams {
            noise_sigma: 0.3,
            ..Default::default()
        },
        seed,
    })?;
    let net = Denoiser::init(&[12, 32, 2], 8, seed)?;
    let mut rng = SeededRng::new(seed ^ 0x99);
    let batch = sample_batch(&data, (0.2, 0.95), 32, &mut rng)?;
    let mut grads = Grads::zeros_like(net.params());
    let mut max_tangent = 0.0f64;
    for b in &batch {
        let oracle = OracleEps::new(&b.x0, &b.x_terminal);
        let (g, _, tn) = consistency_grads(&net, &oracle, std::slice::from_ref(b), 1e-3)?;
        grads.add_scaled(&g, 1.0 / batch.len() as f64);
        max_tangent = max_tangent.max(tn);
    }
    Ok((max_tangent, grads.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes_everything() {
        let results = run_verification(&VerifyOptions::default()).unwrap();
        assert!(results.len() >= 15);
        for r in &results {
            assert!(
                r.passed,
                "{}: value {} vs reference {} (tol {})",
                r.name, r.value, r.reference, r.tolerance
            );
        }
    }

    #[test]
    fn perturbed_coefficients_break_inversion() {
        let results = run_verification(&VerifyOptions {
            perturb_coeffs: 1e-3,
            ..Default::default()
        })
        .unwrap();
        let inv = results
            .iter()
            .find(|r| r.name == "solver_inversion_rel_error_max")
            .unwrap();
        assert!(!inv.passed, "fault injection must be detected");
    }

    #[test]
    fn gradient_checks_meet_contract() {
        assert!(mlp_gradient_max_rel_error(3).unwrap() <= 1e-4);
        assert!(surrogate_gradient_max_rel_error(5).unwrap() <= 1e-3);
    }

    #[test]
    fn oracle_fixed_point_probe_is_tiny() {
        let (tangent, grad) = oracle_fixed_point_probe(11).unwrap();
        assert!(tangent <= 1e-8, "{tangent}");
        assert!(grad <= 1e-6, "{grad}");
    }
}
