use mdq_core::dataset::{builtin_profiles, find_profile};
use mdq_core::signal::{
    add_awgn, mm_sample, noise_only, noise_variance, synthesize_mm, Carrier, ComplexTimeSeries, RadarConfig,
    TargetGeometry,
};
use mdq_core::spectrogram::{autocorrelation, dominant_period, stft, StftConfig};
use num_complex::Complex64;
use proptest::prelude::*;

fn geometry(theta: f64, phi_p: f64, range_m: f64, v_rad: f64, rotor_phase: f64) -> TargetGeometry {
    TargetGeometry { theta, phi_p, range_m, v_rad, rotor_phase, amplitude: 1.0 }
}

#[test]
fn builtin_profile_table() {
    let p = builtin_profiles();
    assert_eq!(p.len(), 5);
    assert_eq!(p[4].f_rot, 40.0);
    assert_eq!(p[2].l2, 0.2665);
    assert!(p.iter().all(|d| d.n_blades == 2));
    let disco = find_profile("Parrot Disco").unwrap();
    assert_eq!(disco.flash_period(), 1.0 / 80.0);
}

#[test]
fn snr_calibration_over_long_series() {
    let radar = RadarConfig { duration_s: 10.0, ..RadarConfig::default() };
    let disco = find_profile("Parrot Disco").unwrap();
    let clean = synthesize_mm(&disco, &radar, &geometry(0.6, 0.2, 800.0, 4.0, 1.0), Carrier::Baseband).unwrap();
    assert_eq!(clean.len(), 100_000);
    for (i, snr) in [-5.0, -10.0, -15.0, -20.0].into_iter().enumerate() {
        let noisy = add_awgn(&clean, snr, 1.0, 40 + i as u64).unwrap();
        let measured = noisy.samples.iter().zip(&clean.samples).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
            / clean.len() as f64;
        let expected = noise_variance(1.0, snr);
        assert!((measured / expected - 1.0).abs() < 0.02, "{snr} dB: {measured} vs {expected}");
    }
    assert_eq!(noise_variance(1.0, -20.0), 100.0);
}

#[test]
fn noise_spectrum_is_flat() {
    // Per-bin energy of a single 500-frame record scatters by ~5%, so the
    // expectation is estimated from eight independent records.
    let records = 8;
    let mut per_bin = [0.0; 16];
    for seed in 0..records {
        let ts = noise_only(16 + 8 * 499, 1.0, 10e3, 11 + seed).unwrap();
        let spec = stft(&ts, StftConfig::default()).unwrap();
        assert_eq!(spec.n_frames, 500);
        for (b, acc) in per_bin.iter_mut().enumerate() {
            *acc += (0..500).map(|m| spec.value(b, m).norm_sqr()).sum::<f64>() / (500 * records) as f64;
        }
        if seed == 0 {
            // No periodic structure across frames (adjacent frames overlap).
            let r = autocorrelation(&spec.frame_energy());
            assert!(r[2..250].iter().all(|v| v.abs() < 0.25));
            assert_eq!(dominant_period(&spec.frame_energy()), None);
        }
    }
    let mean = per_bin.iter().sum::<f64>() / 16.0;
    for (b, e) in per_bin.iter().enumerate() {
        assert!((e / mean - 1.0).abs() < 0.10, "bin {b}: {e} vs mean {mean}");
    }
    // Expected per-bin energy: σ² Σ w².
    let w2: f64 = mdq_core::spectrogram::hamming(16).iter().map(|w| w * w).sum();
    assert!((mean / w2 - 1.0).abs() < 0.03);
}

#[test]
fn disco_flash_period_from_spectrogram_energy() {
    let disco = find_profile("Parrot Disco").unwrap();
    let radar = RadarConfig::default();
    let expected = disco.flash_period() * radar.prf_hz / 8.0;
    assert_eq!(expected, 15.625);
    let cases = [(0.5, 0.15, 500.0, 2.0, 0.3), (1.0, 0.1, 1500.0, -6.0, 2.0), (-0.8, 0.2, 300.0, 8.0, 4.5)];
    for (i, &(theta, phi_p, r, v, phase)) in cases.iter().enumerate() {
        let clean = synthesize_mm(&disco, &radar, &geometry(theta, phi_p, r, v, phase), Carrier::Baseband).unwrap();
        let noisy = add_awgn(&clean, 20.0, 1.0, i as u64).unwrap();
        let spec = stft(&noisy, StftConfig::default()).unwrap();
        let lag = dominant_period(&spec.frame_energy()).expect("periodic flashes") as f64;
        assert!((lag - expected).abs() <= 1.0, "case {i}: lag {lag}");
    }
}

#[test]
fn flash_periodicity_of_the_blade_sum() {
    // With V = 0 and R a whole number of half-wavelengths the range phase is
    // 1, leaving only the blade sum, which repeats every 1/(N f_rot).
    let radar = RadarConfig::default();
    for profile in builtin_profiles() {
        let g = geometry(0.7, 0.12, 150.0, 0.0, 0.9);
        let period = profile.flash_period();
        for k in 0..50 {
            let t = k as f64 * 3.1e-4;
            let a = mm_sample(&profile, &radar, &g, Carrier::Baseband, t);
            let b = mm_sample(&profile, &radar, &g, Carrier::Baseband, t + period);
            assert!((a - b).norm() < 1e-9, "{}: t={t}", profile.name);
        }
    }
}

#[test]
fn noise_seeds_and_errors() {
    let a = noise_only(2000, 1.0, 10e3, 1).unwrap();
    let b = noise_only(2000, 1.0, 10e3, 2).unwrap();
    assert_ne!(a.samples, b.samples);
    assert_eq!(a.samples, noise_only(2000, 1.0, 10e3, 1).unwrap().samples);
    assert!((a.mean_power() - 1.0).abs() < 0.05);
    assert!(noise_only(0, 1.0, 10e3, 1).is_err());
    assert!(noise_only(10, 0.0, 10e3, 1).is_err());
}

fn sum(a: &ComplexTimeSeries, b: &ComplexTimeSeries, ca: f64, cb: Complex64) -> ComplexTimeSeries {
    ComplexTimeSeries {
        samples: a.samples.iter().zip(&b.samples).map(|(x, y)| x * ca + y * cb).collect(),
        sample_rate: a.sample_rate,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthesis_is_finite_and_aspect_symmetric(
        theta in 0.05f64..1.3, phi_p in 0.087f64..0.26, r in 100.0f64..2000.0, v in -10.0f64..10.0,
        phase in 0.0f64..std::f64::consts::TAU, which in 0usize..5,
    ) {
        let profile = &builtin_profiles()[which];
        let radar = RadarConfig::default();
        let ts = synthesize_mm(profile, &radar, &geometry(theta, phi_p, r, v, phase), Carrier::Baseband).unwrap();
        prop_assert!(ts.samples.iter().all(|z| z.is_finite()));
        let (a, b) = geometry(theta, phi_p, r, v, phase).aspect_coefficients();
        let (a2, b2) = geometry(-theta, phi_p, r, v, phase).aspect_coefficients();
        prop_assert_eq!(a, a2);
        prop_assert_eq!(b, -b2);
    }

    #[test]
    fn amplitude_scales_linearly(amp in 0.1f64..10.0, theta in 0.05f64..1.3) {
        let profile = find_profile("DJI Mavic Air 2").unwrap();
        let radar = RadarConfig::default();
        let mut g = geometry(theta, 0.1, 700.0, 1.0, 0.4);
        let one = synthesize_mm(&profile, &radar, &g, Carrier::Baseband).unwrap();
        g.amplitude = amp;
        let scaled = synthesize_mm(&profile, &radar, &g, Carrier::Baseband).unwrap();
        for (x, y) in one.samples.iter().zip(&scaled.samples) {
            prop_assert!((x * amp - y).norm() <= 1e-12 * amp.max(1.0));
        }
    }

    #[test]
    fn stft_is_linear(seed_a in 0u64..1000, seed_b in 0u64..1000, ca in -3.0f64..3.0, cb_re in -2.0f64..2.0, cb_im in -2.0f64..2.0) {
        let a = noise_only(400, 1.0, 10e3, seed_a).unwrap();
        let b = noise_only(400, 2.0, 10e3, seed_b + 5000).unwrap();
        let cb = Complex64::new(cb_re, cb_im);
        let config = StftConfig::default();
        let (sa, sb) = (stft(&a, config).unwrap(), stft(&b, config).unwrap());
        let combined = stft(&sum(&a, &b, ca, cb), config).unwrap();
        for m in 0..sa.n_frames {
            for k in 0..16 {
                let expect = sa.value(k, m) * ca + sb.value(k, m) * cb;
                prop_assert!((combined.value(k, m) - expect).norm() < 1e-9);
            }
        }
    }
}
