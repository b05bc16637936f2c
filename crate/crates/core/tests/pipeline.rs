use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tatwave::norms::{inner_omega, norm_omega, norm_trace};
use tatwave::ops::{normal_op, pairing_defect, random_smooth_pair};
use tatwave::phantom::{add_noise, make_medium, make_phantom, measure_refined, observed_rms, MediumSpec, NoiseSpec};
use tatwave::recon::conjugate_gradient;
use tatwave::solver::measure;
use tatwave::*;

fn full_config(n: usize, tau: f64) -> WaveRunConfig {
    let g = Grid2D::unit_square(n).unwrap();
    let med = MediumParams::constant(g, 1.0, 0.0).unwrap();
    WaveRunConfig::for_window(med, BoundarySpec::uniform(g, 1.0).unwrap(), tau, 0.5).unwrap()
}

fn bump(g: Grid2D) -> ScalarField {
    make_phantom(&PhantomSpec::gaussian([0.45, 0.55], 0.08, 1.0), g).unwrap()
}

fn relative_replay(x: &ScalarField, d: &BoundaryTrace, cfg: &WaveRunConfig) -> f64 {
    let replay = measure(x, cfg).unwrap();
    norm_trace(&replay.axpy(-1.0, d).unwrap(), cfg.bnd()).unwrap() / norm_trace(d, cfg.bnd()).unwrap()
}

#[test]
fn reconstruction_reproduces_the_data() {
    let g = Grid2D::unit_square(41).unwrap();
    let ms = MediumSpec::two_lens();
    let lambda = LambdaSpec::full(1.0);
    let cfg = WaveRunConfig::for_window(
        make_medium(&ms, g).unwrap(),
        BoundarySpec::from_specs(g, &lambda, None).unwrap(),
        2.0,
        0.5,
    )
    .unwrap();
    let u0 = bump(g);
    let opts = CgOptions { max_iters: 60, ..Default::default() };
    let err = |x: &ScalarField| norm_omega(&x.sub(&u0).unwrap(), cfg.med()).unwrap() / norm_omega(&u0, cfg.med()).unwrap();

    let d = measure(&u0, &cfg).unwrap();
    let x = reconstruct_cg(&d, &cfg, &opts).unwrap().estimate;
    let (recon_err, trace_err) = (err(&x), relative_replay(&x, &d, &cfg));
    assert!(recon_err < 0.05, "reconstruction error {recon_err}");
    assert!(trace_err < 2.0 * recon_err, "trace error {trace_err} vs reconstruction error {recon_err}");

    // Finer-grid data: the replay misfit is bounded below by the forward-model
    // gap, so the estimate should fit the data about as well as the truth does.
    let fg = g.refined(2).unwrap();
    let d = measure_refined(&bump(fg), make_medium(&ms, fg).unwrap(), &lambda, None, &cfg, 2).unwrap();
    let x = reconstruct_cg(&d, &cfg, &opts).unwrap().estimate;
    assert!(err(&x) < 0.05);
    assert!(relative_replay(&x, &d, &cfg) < 1.1 * relative_replay(&u0, &d, &cfg));
}

#[test]
fn cg_error_norms_decrease_monotonically() {
    // Manufactured consistent system: CG errors shrink in both the energy norm
    // of SS* and the H⁰ norm (the residual need not).
    let cfg = full_config(13, 2.0);
    let x_true = bump(*cfg.grid()).add(&ScalarField::from_fn(*cfg.grid(), |x, _| 0.3 * x)).unwrap();
    let b = normal_op(&x_true, &cfg).unwrap();
    let med = cfg.med();
    let mut prev = (f64::INFINITY, f64::INFINITY);
    for k in 1..=12 {
        let opts = CgOptions { max_iters: k, rel_tol: 1e-14, ..Default::default() };
        let out = conjugate_gradient(|x| normal_op(x, &cfg), &b, None, med, &opts).unwrap();
        let e = x_true.sub(&out.x).unwrap();
        let energy = inner_omega(&e, &normal_op(&e, &cfg).unwrap(), med).unwrap().sqrt();
        let plain = norm_omega(&e, med).unwrap();
        assert!(energy <= prev.0 * (1.0 + 1e-9), "energy-norm error rose at iteration {k}");
        assert!(plain <= prev.1 * (1.0 + 1e-9), "H⁰ error rose at iteration {k}");
        prev = (energy, plain);
    }
}

#[test]
fn noise_level_matches_its_specification() {
    let cfg = full_config(33, 2.0);
    let d = measure(&bump(*cfg.grid()), &cfg).unwrap();
    let gamma = cfg.bnd().gamma();
    assert!(d.values().len() >= 10_000);
    for level in [0.01, 0.1, 0.5] {
        let noisy = add_noise(&d, &NoiseSpec { level, seed: 11 }, cfg.bnd()).unwrap();
        let added = noisy.axpy(-1.0, &d).unwrap();
        let measured = observed_rms(&added, gamma) / observed_rms(&d, gamma);
        assert!((measured / level - 1.0).abs() < 0.05, "level {level}: measured {measured}");
    }
}

#[test]
fn neumann_warns_when_the_observed_set_exceeds_the_absorbing_set() {
    let g = Grid2D::unit_square(17).unwrap();
    let med = MediumParams::constant(g, 1.0, 0.0).unwrap();
    let lam: LambdaSpec = "faces:left,bottom:1".parse().unwrap();
    let bnd = BoundarySpec::from_specs(g, &lam, Some(&GammaSpec::full())).unwrap();
    let cfg = WaveRunConfig::for_window(med, bnd, 2.0, 0.5).unwrap();
    let d = measure(&bump(g), &cfg).unwrap();
    let r = reconstruct_neumann(&d, &cfg, &NeumannOptions { max_terms: 3, ..Default::default() }).unwrap();
    assert!(r.warnings.iter().any(|w| w.contains("observed set")));
}

#[test]
fn pde_faithful_adjoint_converges_under_refinement() {
    let mut defects = Vec::new();
    for n in [17, 33] {
        let cfg = full_config(n, 1.5);
        let mut worst: f64 = 0.0;
        for seed in 0..3 {
            let (zeta, phi) = random_smooth_pair(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            worst = worst.max(pairing_defect(&zeta, &phi, &cfg, AdjointMode::PdeFaithful).unwrap());
            assert!(pairing_defect(&zeta, &phi, &cfg, AdjointMode::ExactDiscrete).unwrap() < 1e-12);
        }
        defects.push(worst);
    }
    assert!(defects[0] / defects[1] > 2.5, "{defects:?}");
}

fn lens_model(amplitude: f64) -> SpeedProfile {
    SpeedProfile::Lenses {
        background: 1.0,
        lenses: vec![
            Lens { center: [0.4, 0.55], amplitude, sigma: 0.2 },
            Lens { center: [0.7, 0.3], amplitude: -0.5 * amplitude, sigma: 0.15 },
        ],
    }
}

#[test]
fn rays_conserve_the_hamiltonian() {
    let g = Grid2D::unit_square(21).unwrap();
    let bnd = BoundarySpec::from_specs(g, &"faces:right:1".parse().unwrap(), None).unwrap();
    let model = lens_model(0.4);
    let ds = 1e-3 * g.diameter();
    for k in 0..8 {
        let a = k as f64 * std::f64::consts::TAU / 8.0 + 0.1;
        let rec = trace_ray(RayState::new([0.3, 0.4], [a.cos(), a.sin()], &model), &model, &bnd, 8.0, ds).unwrap();
        assert!(rec.max_hamiltonian < 1e-6, "direction {k}: |H| = {}", rec.max_hamiltonian);
    }
}

#[test]
fn ray_hit_times_converge_at_fourth_order() {
    let g = Grid2D::unit_square(21).unwrap();
    let bnd = BoundarySpec::from_specs(g, &"faces:right,top:1".parse().unwrap(), None).unwrap();
    let model = lens_model(0.3);
    let hit = |ds: f64, a: f64| {
        trace_ray(RayState::new([0.35, 0.3], [a.cos(), a.sin()], &model), &model, &bnd, 6.0, ds)
            .unwrap()
            .hit_time
            .unwrap()
    };
    for a in [0.3, 1.1, 2.5] {
        let ds = 0.04;
        let (t1, t2, t3) = (hit(ds, a), hit(ds / 2.0, a), hit(ds / 4.0, a));
        let ratio = (t1 - t2).abs() / (t2 - t3).abs();
        assert!(ratio > 10.0, "angle {a}: successive differences {:e}, {:e}", t1 - t2, t2 - t3);
    }
}
