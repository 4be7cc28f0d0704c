mod common;

use common::brute_force_displacement;
use ionarray::consts::TWO_PI;
use ionarray::dynamics::*;
use ionarray::trap::{eigenmodes, IonSpecies, RfDrive};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mg() -> IonSpecies {
    IonSpecies::mg25()
}

#[test]
fn displacement_elements_match_operator_exponential() {
    let eta = 0.23;
    let d = brute_force_displacement(eta, 320, 40);
    for m in 0..40 {
        for n in 0..40 {
            let a = displacement_element(eta, n, m);
            assert!((a - d[(m, n)]).abs() < 1e-10, "({m},{n}): {a} vs {}", d[(m, n)]);
        }
    }
}

#[test]
fn blue_sideband_matches_fock_sum_oracle() {
    let eta = 0.2;
    let d = brute_force_displacement(eta, 320, 202);
    let rabi0 = TWO_PI * 50e3;
    for nbar in [0.05, 0.3, 0.6] {
        let state = SpinMotionState::new(0.0, vec![ThermalMode::thermal(1.0, nbar).unwrap()]).unwrap();
        for k in 0..40 {
            let t = k as f64 * 10e-6;
            let model = flop_signal(&state, Transition::Blue(0), rabi0, &[eta], t).unwrap();
            // Explicit thermal sum to n = 200, no renormalization.
            let q = nbar / (1.0 + nbar);
            let oracle: f64 = (0..=200)
                .map(|n| {
                    let p = q.powi(n) / (1.0 + nbar);
                    let s = (0.5 * rabi0 * d[(n as usize + 1, n as usize)] * t).sin();
                    p * s * s
                })
                .sum();
            assert!((model - oracle).abs() < 1e-8, "n̄={nbar} t={t}: {model} vs {oracle}");
        }
    }
}

#[test]
fn carrier_with_spectator_matches_two_mode_oracle() {
    let (e1, e3) = (0.18, 0.09);
    let d1 = brute_force_displacement(e1, 200, 60);
    let d3 = brute_force_displacement(e3, 200, 60);
    let rabi0 = TWO_PI * 50e3;
    let (n1, n3) = (0.3, 0.6);
    let state =
        SpinMotionState::new(0.0, vec![ThermalMode::thermal(1.0, n1).unwrap(), ThermalMode::thermal(1.0, n3).unwrap()])
            .unwrap();
    for k in 0..25 {
        let t = k as f64 * 4e-6;
        let model = flop_signal(&state, Transition::Carrier, rabi0, &[e1, e3], t).unwrap();
        let model_sb = flop_signal(&state, Transition::Blue(1), rabi0, &[e1, e3], t).unwrap();
        let (q1, q3) = (n1 / (1.0 + n1), n3 / (1.0 + n3));
        let (mut oracle, mut oracle_sb) = (0.0, 0.0);
        for a in 0..55 {
            for b in 0..55 {
                let p = q1.powi(a) / (1.0 + n1) * q3.powi(b) / (1.0 + n3);
                let (a, b) = (a as usize, b as usize);
                let s = (0.5 * rabi0 * d1[(a, a)] * d3[(b, b)] * t).sin();
                oracle += p * s * s;
                let s = (0.5 * rabi0 * d1[(a, a)] * d3[(b + 1, b)] * t).sin();
                oracle_sb += p * s * s;
            }
        }
        assert!((model - oracle).abs() < 1e-8, "carrier t={t}: {model} vs {oracle}");
        assert!((model_sb - oracle_sb).abs() < 1e-8, "sideband t={t}: {model_sb} vs {oracle_sb}");
    }
}

#[test]
fn carrier_at_zero_eta_is_two_level_rabi() {
    let state = SpinMotionState::new(0.25, vec![ThermalMode::thermal(1.0, 0.4).unwrap()]).unwrap();
    let rabi0 = 2.0e5;
    for k in 0..30 {
        let t = k as f64 * 1.3e-6;
        let p = flop_signal(&state, Transition::Carrier, rabi0, &[0.0], t).unwrap();
        let s = (0.5 * rabi0 * t).sin().powi(2);
        let expected = 0.25 + (0.75 - 0.25) * s;
        assert!((p - expected).abs() < 1e-12);
    }
}

#[test]
fn flop_errors() {
    let state = SpinMotionState::new(0.0, vec![ThermalMode::thermal(1.0, 0.1).unwrap()]).unwrap();
    assert!(matches!(
        flop_signal(&state, Transition::Blue(3), 1.0, &[0.1], 1.0),
        Err(DynamicsError::UnknownTransition(_))
    ));
    let truncated = ThermalMode::fock(1.0, vec![0.5, 0.4]).unwrap();
    let state = SpinMotionState::new(0.0, vec![truncated]).unwrap();
    assert!(matches!(
        flop_signal(&state, Transition::Carrier, 1.0, &[0.1], 1.0),
        Err(DynamicsError::CutoffTooSmall { .. })
    ));
}

fn planar_model() -> PlanarFlopModel {
    let dk = 2f64.sqrt() * TWO_PI / 280e-9;
    let w = [TWO_PI * 5.3e6, TWO_PI * 4.1e6];
    PlanarFlopModel {
        eta_full: [lamb_dicke_full(dk, w[0], &mg()), lamb_dicke_full(dk, w[1], &mg())],
        mode_omegas: w,
        p_down_initial: 0.0,
    }
}

fn grid(tmax: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| tmax * k as f64 / n as f64).collect()
}

fn schedule() -> Vec<(Transition, Vec<f64>)> {
    vec![
        (Transition::Carrier, grid(100e-6, 50)),
        (Transition::Blue(0), grid(400e-6, 50)),
        (Transition::Blue(1), grid(400e-6, 50)),
        (Transition::Red(0), grid(400e-6, 50)),
        (Transition::Red(1), grid(400e-6, 50)),
    ]
}

fn initial_guess() -> FlopParameters {
    FlopParameters { rabi0: TWO_PI * 45e3, phi: 45f64.to_radians(), nbar: [0.2, 0.2] }
}

#[test]
fn noiseless_fit_recovers_parameters() {
    let model = planar_model();
    let truth = FlopParameters { rabi0: TWO_PI * 50e3, phi: 24.7f64.to_radians(), nbar: [0.3, 0.15] };
    let data: Vec<FlopDataset> = schedule()
        .into_iter()
        .map(|(tr, ts)| {
            let p = model.curve(&truth, tr, &ts).unwrap();
            FlopDataset { transition: tr, shots: vec![250; ts.len()], times: ts, p_down: p }
        })
        .collect();
    let fit = fit_flopping(&model, &data, &initial_guess()).unwrap();
    assert!((fit.params.rabi0 / truth.rabi0 - 1.0).abs() < 1e-6);
    assert!((fit.params.phi - truth.phi).abs() < 1e-6);
    assert!((fit.params.nbar[0] - 0.3).abs() < 1e-6 && (fit.params.nbar[1] - 0.15).abs() < 1e-6, "{:?}", fit.params);
    assert!(fit.chi2 < 1e-12);
}

#[test]
fn noisy_fit_round_trip() {
    let model = planar_model();
    for (seed, phi_deg) in [(1u64, 24.7f64), (2, 36.1)] {
        let truth = FlopParameters { rabi0: TWO_PI * 50e3, phi: phi_deg.to_radians(), nbar: [0.3, 0.3] };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<FlopDataset> = schedule()
            .iter()
            .map(|(tr, ts)| simulate_flop_data(&model, &truth, *tr, ts, 250, &mut rng).unwrap())
            .collect();
        let fit = fit_flopping(&model, &data, &initial_guess()).unwrap();
        assert!((fit.phi_deg() - phi_deg).abs() < 0.5, "{}", fit.phi_deg());
        for n in fit.params.nbar {
            assert!((n / 0.3 - 1.0).abs() < 0.1, "{:?}", fit.params.nbar);
        }
        assert!(fit.std_errors.iter().all(|e| e.is_finite() && *e > 0.0));
    }
}

#[test]
fn fit_rejects_degenerate_data() {
    let model = planar_model();
    let one = FlopDataset {
        transition: Transition::Carrier,
        times: vec![1e-6, 2e-6],
        p_down: vec![0.1, 0.2],
        shots: vec![10, 10],
    };
    assert!(matches!(
        fit_flopping(&model, std::slice::from_ref(&one), &initial_guess()),
        Err(DynamicsError::DegenerateData(_))
    ));
    let flat =
        |tr| FlopDataset { transition: tr, times: vec![1e-6, 2e-6], p_down: vec![0.0, 0.0], shots: vec![10, 10] };
    let r = fit_flopping(&model, &[flat(Transition::Carrier), flat(Transition::Blue(0))], &initial_guess());
    assert!(matches!(r, Err(DynamicsError::DegenerateData(_))));
}

#[test]
fn thermometry_and_heating() {
    assert_eq!(sideband_thermometry(0.0).unwrap(), 0.0);
    assert!((sideband_thermometry(1.0 / 11.0).unwrap() - 0.1).abs() < 1e-15);
    assert!((sideband_thermometry(0.5).unwrap() - 1.0).abs() < 1e-15);
    assert!(matches!(sideband_thermometry(1.0), Err(DynamicsError::Unphysical(_))));
    assert!((heating_evolution(0.1, 900.0, 1e-3).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(heating_evolution(0.1, 0.0, 5.0).unwrap(), 0.1);
    let at = |r| heating_evolution(0.1, r, 1e-3).unwrap();
    assert!(at(900.0) < at(2200.0) && at(2200.0) < at(4000.0));
    assert!(heating_evolution(0.1, -1.0, 1.0).is_err());
    let m = ThermalMode::thermal(1.0, 0.1).unwrap();
    let hot = heated_mode(&m, 900.0, 1e-3).unwrap();
    assert!((hot.nbar - 1.0).abs() < 1e-12);
    let mean: f64 = hot.populations().iter().enumerate().map(|(n, p)| n as f64 * p).sum();
    assert!((mean - 1.0).abs() < 1e-4);
}

#[test]
fn tickle_thresholds() {
    let omega = TWO_PI * 2.6e6;
    let t = 100e-6;
    let zero = tickle_response(0.0, omega, t, omega, &mg()).unwrap();
    assert_eq!(zero.amplitude, 0.0);
    let e = tickle_threshold_field(100e-9, omega, t, &mg());
    // Independent evaluation of E = 2mωA/(Qt).
    let oracle = 2.0 * mg().mass * omega * 100e-9 / (mg().charge * t);
    assert!((e - oracle).abs() < 1e-12 * oracle);
    assert!((e - 8e-3).abs() < 0.6e-3, "{e}");
    let on = tickle_response(1.01 * e, omega, t, omega, &mg()).unwrap();
    assert!(on.detectable);
    assert!((on.amplitude / on.resonant_limit - 1.0).abs() < 1e-3);
    // Ten Fourier widths (1/t) away.
    let off = tickle_response(1.01 * e, omega + TWO_PI * 10.0 / t, t, omega, &mg()).unwrap();
    assert!(!off.detectable && off.amplitude < 0.1 * on.amplitude);
    // Far detuned: the post-pulse amplitude is bounded by twice the steady amplitude.
    let far = tickle_response(1.0, 0.5 * omega, t, omega, &mg()).unwrap();
    assert!(far.amplitude <= 2.0 * far.steady_state * (1.0 + 1e-9));
}

#[test]
fn exchange_reference() {
    let rate = exchange_rate(40e-6, TWO_PI * 2e6, &mg()).unwrap();
    let khz = rate / TWO_PI / 1e3;
    assert!((0.85..1.25).contains(&khz), "{khz}");
    let oracle = mg().charge.powi(2)
        / (4.0 * std::f64::consts::PI * 8.854_187_812_8e-12 * mg().mass * TWO_PI * 2e6 * (40e-6f64).powi(3));
    assert!((rate - oracle).abs() < 1e-12 * oracle);
    assert!(exchange_rate(0.0, 1.0, &mg()).is_err());
}

fn diagonal_modes(freqs_hz: [f64; 3]) -> ionarray::trap::ModeStructure {
    let k = |f: f64| (TWO_PI * f).powi(2) / mg().charge_to_mass();
    eigenmodes(&Matrix3::from_diagonal(&Vector3::new(k(freqs_hz[0]), k(freqs_hz[1]), k(freqs_hz[2]))), &mg()).unwrap()
}

#[test]
fn micromotion_displacements() {
    let geometry = RamanGeometry::crossed_beams(280e-9, Vector3::x()).unwrap();
    let drive = RfDrive::default();
    let modes = diagonal_modes([2.6e6, 3.3e6, 4.1e6]);
    let none = micromotion_analysis(&Vector3::zeros(), &modes, &drive, &geometry).unwrap();
    assert_eq!(none.displacement.norm(), 0.0);
    assert_eq!(none.modulation_index, 0.0);
    let mx = micromotion_analysis(&Vector3::new(3.0, 0.0, 0.0), &modes, &drive, &geometry).unwrap();
    let oracle = 3.0 / (mg().mass * (TWO_PI * 2.6e6).powi(2) / mg().charge);
    assert!((mx.displacement.x - oracle).abs() < 1e-9 * oracle);
    assert!((mx.displacement.x - 43e-9).abs() < 2e-9, "{}", mx.displacement.x);
    let q = 2.0 * 2f64.sqrt() * TWO_PI * 2.6e6 / drive.omega_rf;
    assert!((mx.amplitude.x - 0.5 * q * oracle).abs() < 1e-9 * oracle);
    assert!((mx.modulation_index - geometry.delta_k.norm() * mx.amplitude.x).abs() < 1e-12);
    let mz = micromotion_analysis(&Vector3::new(0.0, 0.0, 900.0), &modes, &drive, &geometry).unwrap();
    assert!((mz.displacement.z - 5e-6).abs() < 1e-6, "{}", mz.displacement.z);
    assert_eq!(mz.z_sensitivity, -2.0 * mz.displacement.z);
    // Halving the frequency quadruples the displacement.
    let soft =
        micromotion_analysis(&Vector3::new(3.0, 0.0, 0.0), &diagonal_modes([1.3e6, 3.3e6, 4.1e6]), &drive, &geometry)
            .unwrap();
    assert!((soft.displacement.x / mx.displacement.x - 4.0).abs() < 1e-9);
}

#[test]
fn detection_statistics() {
    let model = DetectionModel::default();
    let n = 100_000u64;
    let bright = simulate_detection(1.0, &model, n, 7).unwrap();
    let f = model.bright_fidelity();
    let sigma = (f * (1.0 - f) / n as f64).sqrt();
    assert!((bright.inferred_p_down - f).abs() < 3.0 * sigma, "{} vs {f}", bright.inferred_p_down);
    let dark = simulate_detection(0.0, &model, n, 7).unwrap();
    assert!((dark.mean_counts - 0.8).abs() < 3.0 * (0.8 / n as f64).sqrt(), "{}", dark.mean_counts);
    let mixed = simulate_detection(0.37, &model, n, 11).unwrap();
    let expect = model.expected_inferred(0.37);
    assert!((mixed.inferred_p_down - expect).abs() < 3.0 * (expect * (1.0 - expect) / n as f64).sqrt());
    assert_eq!(simulate_detection(0.37, &model, n, 11).unwrap(), mixed);
    assert_eq!(mixed.histogram.iter().sum::<u64>(), n);
    assert!(DetectionModel::new(0.5, 0.8, 1e-4, 2).is_err());
}

#[test]
fn ramp_adiabaticity() {
    let omega0 = TWO_PI * 2.6e6;
    let c = 1.164e7;
    let flat = ramp_check(&[1.0; 50], 5e7, c, omega0, &mg()).unwrap();
    assert_eq!(flat.max_epsilon, 0.0);
    let linear = |n: usize| (0..n).map(|k| 2.3 * k as f64 / (n - 1) as f64).collect::<Vec<_>>();
    let fast = ramp_check(&linear(375), 5e7, c, omega0, &mg()).unwrap();
    let slow = ramp_check(&linear(6000), 5e7, c, omega0, &mg()).unwrap();
    assert!(fast.adiabatic && fast.max_epsilon < 0.01);
    let ratio = fast.max_epsilon / slow.max_epsilon;
    assert!((ratio / 16.0 - 1.0).abs() < 0.01, "{ratio}");
    assert!(matches!(ramp_check(&[-1e9], 5e7, c, omega0, &mg()), Err(DynamicsError::Unstable { .. })));
}

proptest! {
    #[test]
    fn flop_probabilities_stay_in_unit_interval(
        nbar in 0.0f64..2.0, eta in 0.0f64..0.4, p0 in 0.0f64..1.0, t in 0.0f64..1e-3, kind in 0usize..3,
    ) {
        let state = SpinMotionState::new(p0, vec![ThermalMode::thermal(1.0, nbar).unwrap()]).unwrap();
        let tr = [Transition::Carrier, Transition::Blue(0), Transition::Red(0)][kind];
        let p = flop_signal(&state, tr, TWO_PI * 40e3, &[eta], t).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn thermometry_inverts_sideband_ratio(nbar in 0.0f64..50.0) {
        let back = sideband_thermometry(sideband_ratio(nbar)).unwrap();
        prop_assert!((back - nbar).abs() <= 1e-9 * nbar.max(1.0));
    }

    #[test]
    fn scaling_laws(d in 5e-6f64..200e-6, w in 1e6f64..3e7) {
        let a = exchange_rate(d, w, &mg()).unwrap();
        prop_assert!((a / exchange_rate(2.0 * d, w, &mg()).unwrap() - 8.0).abs() < 1e-9);
        let g = RamanGeometry::crossed_beams(280e-9, Vector3::new(1.0, 1.0, 0.0)).unwrap();
        let u = Vector3::new(0.3, 0.8, 0.1);
        let e1 = lamb_dicke(&g, w, &u, &mg()).unwrap().eta;
        let e2 = lamb_dicke(&g, 2.0 * w, &u, &mg()).unwrap().eta;
        prop_assert!((e1 / e2 - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn drift_is_linear(slope in -10.0f64..10.0, t in 0.0f64..1e4) {
        let d = FrequencyDrift { slope };
        prop_assert_eq!(d.shift(t), slope * t);
    }
}
