mod common;

use std::f64::consts::PI;

use flipst::dynamics::{build_transition, flipped_generator, matrix_exp};
use flipst::galerkin::{assemble_transition, Boundary, DiffusivityField, VelocityField};
use flipst::grid::{FlipVariant, GridSpec};
use flipst::simulate::{simulate_advection, NoiseModes, SimulationConfig};
use flipst::spectral::{analyze, flip_transfer, synthesize, ModeOrdering, SpectralState};
use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

#[test]
fn constant_velocity_matches_translation() {
    let g = GridSpec::square(32).unwrap();
    let ord = ModeOrdering::full_for(g);
    let v = (0.013, -0.021);
    let gen = assemble_transition(&ord, &VelocityField::constant(g, v.0, v.1), &DiffusivityField::zeros(g)).unwrap();
    let phi = build_transition(&gen, 1.0).unwrap().phi;
    let mut r = common::rng(3);
    let poly = common::TrigPoly::random(6, 8, &mut r);
    let mut a = analyze(&poly.field(g, (0.0, 0.0)), &ord).unwrap();
    for step in 1..=6 {
        a.alpha = &phi * &a.alpha;
        let want = poly.field(g, (v.0 * step as f64, v.1 * step as f64));
        let err = common::max_abs_diff(synthesize(&a).values(), want.values());
        assert!(err <= 1e-6, "step {step}: {err}");
    }
}

#[test]
fn constant_diffusion_decays_each_mode() {
    let g = GridSpec::new(16, 12).unwrap();
    let ord = ModeOrdering::full_for(g);
    let d = 2e-4;
    let gen = assemble_transition(&ord, &VelocityField::zeros(g), &DiffusivityField::isotropic_constant(g, d)).unwrap();
    let delta = 1.5;
    let phi = build_transition(&gen, delta).unwrap().phi;
    let mut r = common::rng(4);
    let a0 = DVector::from_fn(ord.len(), |_, _| r.random_range(-1.0..1.0));
    let a1 = &phi * &a0;
    for (i, c) in ord.coefficients().enumerate() {
        let k2 = (c.k.0 * c.k.0 + c.k.1 * c.k.1) as f64;
        let want = a0[i] * (-(2.0 * PI).powi(2) * d * k2 * delta).exp();
        assert!((a1[i] - want).abs() <= 1e-8, "mode {:?}", c.k);
    }
}

fn random_physics(g: GridSpec, seed: u64) -> (VelocityField, DiffusivityField) {
    let mut r = common::rng(seed);
    let vx = common::smooth_positive(g, -0.03, 0.03, &mut r);
    let vy = common::smooth_positive(g, -0.03, 0.03, &mut r);
    let d = common::smooth_positive(g, 1e-4, 6e-4, &mut r);
    (
        VelocityField::new(g, vx, vy).unwrap(),
        DiffusivityField::from_scalar(g, d, Boundary::Periodic).unwrap(),
    )
}

#[test]
fn flipped_evolution_commutes_with_the_transfer() {
    let g = GridSpec::square(8).unwrap();
    let ord = ModeOrdering::full_for(g);
    let ord_star = ModeOrdering::full_for(g.doubled());
    for seed in 0..3 {
        let (vel, dif) = random_physics(g, 100 + seed);
        let p = assemble_transition(&ord, &vel, &dif).unwrap();
        let h = flip_transfer(&ord, &ord_star, FlipVariant::default()).unwrap();
        let h_pinv = h.pseudo_inverse().unwrap();
        let hh = &h_pinv * &h.matrix;
        assert!((hh - DMatrix::<f64>::identity(ord.len(), ord.len())).amax() <= 1e-10);
        assert!((&h_pinv - common::svd_pinv(&h.matrix, 1e-10)).amax() <= 1e-10);

        let phi = matrix_exp(&p.matrix).unwrap();
        let phi_star = matrix_exp(&flipped_generator(&p, &h).unwrap().matrix).unwrap();
        let mut r = common::rng(seed);
        let mut a = analyze(&common::random_field(g, &mut r), &ord).unwrap().alpha;
        let mut a_star = &h.matrix * &a;
        for step in 1..=10 {
            a = &phi * &a;
            a_star = &phi_star * &a_star;
            let diff = (&h.matrix * &a - &a_star).amax();
            assert!(diff <= 1e-8, "seed {seed} step {step}: {diff}");
        }
    }
}

#[test]
fn flipped_generator_keeps_the_spectrum_on_range_h() {
    // K = 32 original modes; eigenvalues of P and of HPH+ on range(H)
    let g = GridSpec::new(4, 8).unwrap();
    let ord = ModeOrdering::full_for(g);
    let ord_star = ModeOrdering::full_for(g.doubled());
    let (vel, dif) = random_physics(g, 7);
    let p = assemble_transition(&ord, &vel, &dif).unwrap();
    let h = flip_transfer(&ord, &ord_star, FlipVariant::default()).unwrap();
    let p_star = flipped_generator(&p, &h).unwrap().matrix;
    let q = h.matrix.clone().qr().q();
    let restricted = q.transpose() * &p_star * &q;
    let mut want: Vec<Complex<f64>> = p.matrix.complex_eigenvalues().iter().copied().collect();
    let got: Vec<Complex<f64>> = restricted.complex_eigenvalues().iter().copied().collect();
    assert_eq!(got.len(), want.len());
    for z in got {
        let (pos, d) = want
            .iter()
            .enumerate()
            .map(|(i, w)| (i, (w - z).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(d <= 1e-8, "eigenvalue {z} unmatched ({d})");
        want.swap_remove(pos);
    }
}

#[test]
fn truncated_flipped_evolution_converges_as_k_grows() {
    let g = GridSpec::square(8).unwrap();
    let full = ModeOrdering::full_for(g);
    let full_star = ModeOrdering::full_for(g.doubled());
    let (vel, dif) = random_physics(g, 21);
    let phi_full = matrix_exp(&assemble_transition(&full, &vel, &dif).unwrap().matrix).unwrap();
    let h_full = flip_transfer(&full, &full_star, FlipVariant::default()).unwrap();
    let mut r = common::rng(22);
    let poly = common::TrigPoly::random(2, 4, &mut r);
    let a0 = analyze(&poly.field(g, (0.0, 0.0)), &full).unwrap().alpha;

    let mut last = f64::INFINITY;
    for k in [16, 36, 64] {
        let ord = ModeOrdering::truncated_for(g, k).unwrap();
        let ord_star = ModeOrdering::truncated_for(g.doubled(), 4 * ord.len()).unwrap();
        let p = assemble_transition(&ord, &vel, &dif).unwrap();
        let h = flip_transfer(&ord, &ord_star, FlipVariant::default()).unwrap();
        let phi_star = matrix_exp(&flipped_generator(&p, &h).unwrap().matrix).unwrap();
        let truth = |a: &DVector<f64>| {
            let s = SpectralState::new(full_star.clone(), &h_full.matrix * a).unwrap();
            s.restrict(&ord_star).unwrap().alpha
        };
        let mut a = a0.clone();
        let mut a_star = truth(&a);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            a = &phi_full * &a;
            a_star = &phi_star * &a_star;
            worst = worst.max((truth(&a) - &a_star).amax());
        }
        assert!(worst < last, "K = {k}: {worst} >= {last}");
        last = worst;
    }
    assert!(last <= 1e-8);
}

#[test]
fn matrix_exp_matches_taylor_oracle() {
    let mut r = common::rng(5);
    for case in 0..24 {
        let n = r.random_range(2..=64);
        let norm = r.random_range(0.0..50.0);
        let a = common::random_matrix(n, norm, &mut r);
        let e = matrix_exp(&a).unwrap();
        let t = common::taylor_exp(&a);
        let rel = (&e - &t).norm() / t.norm();
        assert!(rel <= 1e-10, "case {case}: n {n} norm {norm:.1}: {rel:e}");
    }
}

#[test]
fn noiseless_simulation_matches_semi_lagrangian_advection() {
    let cfg = SimulationConfig {
        grid: GridSpec::square(32).unwrap(),
        steps: 11,
        noise_alpha: 0.0,
        noise_beta: 0.0,
        noise_modes: NoiseModes::All,
        ..SimulationConfig::default()
    };
    let sim = simulate_advection(&cfg).unwrap();
    let q = flipst::simulate::forcing_field(&cfg);
    let mut xi = q.clone();
    for _ in 1..cfg.steps {
        let moved = common::semi_lagrangian_step(&xi, cfg.velocity, cfg.delta);
        xi = flipst::grid::Field::new(
            cfg.grid,
            moved.values().iter().zip(q.values()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
    }
    let last = &sim.fields[cfg.steps - 1];
    let mae = flipst::eval::mae(last, &xi, &flipst::eval::Region::whole()).unwrap();
    let peak = last.max_abs();
    assert!(mae <= 0.02 * peak, "MAE {mae} vs peak {peak}");
}
