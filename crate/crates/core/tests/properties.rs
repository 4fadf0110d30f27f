//! Property tests for the load-bearing invariants.

use proptest::prelude::*;

use ebridge_core::checkpoint;
use ebridge_core::numcore::{Denoiser, OracleEps, SeededRng, Tensor};
use ebridge_core::solver::{consistency_solve, solver_coeffs};
use ebridge_core::tasks::energy_distance;
use ebridge_core::trajectory::{diffuse_state, interp_geodesic, mean_path, TrajectoryParams};

fn finite_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, dim)
}

proptest! {
    /// Both trajectory identities hold exactly for any tuple in the domain.
    #[test]
    fn bridge_batch_identities(
        x0 in finite_vec(4),
        y in finite_vec(4),
        x_term in finite_vec(4),
        t0 in 0.05f64..1.0,
        u in 0.001f64..1.0,
    ) {
        let t = t0 * u;
        let x0 = Tensor::from_slice(&x0);
        let y = Tensor::from_slice(&y);
        let x_term = Tensor::from_slice(&x_term);
        let b = diffuse_state(&x0, &y, &x_term, t, t0).unwrap();
        let r = t / t0;
        let tilde = x0.affine(1.0 - r, &y, r);
        prop_assert!(tilde.sub(&b.x_tilde).norm() == 0.0);
        let xt = b.x_tilde.affine(1.0 - t, &x_term, t);
        prop_assert!(xt.sub(&b.x_t).norm() == 0.0);
    }

    /// Swapping endpoints and reflecting time lands on the same point.
    #[test]
    fn geodesic_endpoint_symmetry(
        x0 in finite_vec(3),
        y in finite_vec(3),
        t0 in 0.05f64..1.0,
        u in 0.0f64..1.0,
    ) {
        let t = t0 * u;
        let x0 = Tensor::from_slice(&x0);
        let y = Tensor::from_slice(&y);
        let a = interp_geodesic(&x0, &y, t, t0).unwrap();
        let b = interp_geodesic(&y, &x0, t0 - t, t0).unwrap();
        prop_assert!(a.sub(&b).norm() <= 1e-12 * (1.0 + a.norm()));
    }

    /// The geodesic mean has constant velocity: second differences vanish on
    /// any uniform grid.
    #[test]
    fn geodesic_second_difference_vanishes(
        x0 in finite_vec(3),
        y in finite_vec(3),
        t0 in 0.05f64..1.0,
        n in 4usize..64,
    ) {
        let x0 = Tensor::from_slice(&x0);
        let y = Tensor::from_slice(&y);
        let p = TrajectoryParams::e_bridge(t0);
        let h = t0 / n as f64;
        for i in 1..n {
            let prev = mean_path(&p, &x0, &y, (i - 1) as f64 * h).unwrap();
            let here = mean_path(&p, &x0, &y, i as f64 * h).unwrap();
            let next = mean_path(&p, &x0, &y, ((i + 1) as f64 * h).min(t0)).unwrap();
            let second = next.affine(1.0, &here, -2.0).affine(1.0, &prev, 1.0);
            prop_assert!(second.norm() <= 1e-12 * (1.0 + here.norm()));
        }
    }

    /// Coefficient identities across the full domain.
    #[test]
    fn coefficients_satisfy_identities(t0 in 0.001f64..1.0, u in 0.0f64..1.0) {
        let t = t0 * u;
        let c = solver_coeffs(t, t0).unwrap();
        prop_assert_eq!(c.c, 1.0 - c.a);
        prop_assert_eq!(c.b, t);
        prop_assert!(c.c > 0.0);
    }

    /// The closed-form solve inverts the trajectory exactly under the oracle.
    #[test]
    fn oracle_inversion(
        x0 in finite_vec(8),
        y in finite_vec(8),
        x_term in finite_vec(8),
        t0 in 0.05f64..1.0,
        u in 0.001f64..1.0,
    ) {
        let t = t0 * u;
        let x0 = Tensor::from_slice(&x0);
        let y = Tensor::from_slice(&y);
        let x_term = Tensor::from_slice(&x_term);
        let b = diffuse_state(&x0, &y, &x_term, t, t0).unwrap();
        let oracle = OracleEps::new(&x0, &x_term);
        let solved = consistency_solve(&oracle, &b.x_t, &y, t, t0).unwrap();
        prop_assert!(solved.sub(&x0).norm() <= 1e-11 * (1.0 + x0.norm()));
    }

    /// Energy distance is symmetric, nonnegative, and zero on identical sets.
    #[test]
    fn energy_distance_properties(
        a in prop::collection::vec(finite_vec(2), 2..40),
        b in prop::collection::vec(finite_vec(2), 2..40),
    ) {
        let a: Vec<Tensor> = a.iter().map(|v| Tensor::from_slice(v)).collect();
        let b: Vec<Tensor> = b.iter().map(|v| Tensor::from_slice(v)).collect();
        let ab = energy_distance(&a, &b);
        let ba = energy_distance(&b, &a);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
        prop_assert!(energy_distance(&a, &a) <= 1e-12);
    }

    /// Checkpoint serialization round-trips every finite parameter bit-exactly.
    #[test]
    fn checkpoint_float_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 6)) {
        let weights = vec![vals.clone()];
        let biases = vec![vec![0.0; 2]];
        let net = Denoiser::from_params(
            &[3, 2],
            0,
            ebridge_core::numcore::Activation::Silu,
            weights,
            biases,
        )
        .unwrap();
        let meta = checkpoint::CheckpointMeta { ema_decay: 0.5, trained_steps: 1, seed: 2 };
        let doc = checkpoint::to_json(&net, &meta);
        let (loaded, _) = checkpoint::from_json(&doc).unwrap();
        for (a, b) in loaded.params().weights[0].iter().zip(&net.params().weights[0]) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

/// The spec-level bulk check: ten thousand seeded draws across the horizon
/// grid satisfy both trajectory identities to machine precision.
#[test]
fn bridge_identities_bulk() {
    let mut rng = SeededRng::new(1234);
    let horizons = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    for i in 0..10_000 {
        let t0 = horizons[i % horizons.len()];
        let x0 = rng.normal_tensor(4);
        let y = rng.normal_tensor(4);
        let x_term = rng.normal_tensor(4);
        let t = t0 * (1.0 - rng.uniform());
        let b = diffuse_state(&x0, &y, &x_term, t, t0).unwrap();
        let r = t / t0;
        let tilde = x0.affine(1.0 - r, &y, r);
        assert_eq!(tilde.sub(&b.x_tilde).norm(), 0.0);
        let xt = b.x_tilde.affine(1.0 - t, &x_term, t);
        assert_eq!(xt.sub(&b.x_t).norm(), 0.0);
    }
}
