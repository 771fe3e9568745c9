//! Fixtures shared by the benchmarks.

use mdq_core::autodiff::Array;
use mdq_core::signal::{synthesize_mm, Carrier, ComplexTimeSeries, RadarConfig, TargetGeometry};

pub fn disco_return() -> ComplexTimeSeries {
    let profile = mdq_core::dataset::find_profile("Parrot Disco").expect("builtin profile");
    let geom = TargetGeometry { theta: 0.5, phi_p: 0.15, range_m: 500.0, v_rad: 2.0, rotor_phase: 0.3, amplitude: 1.0 };
    synthesize_mm(&profile, &RadarConfig::default(), &geom, Carrier::Baseband).expect("valid fixture")
}

/// Deterministic pseudo-random batch in `[-1, 1)`.
pub fn input_batch(n: usize, shape: [usize; 3]) -> Array {
    let len = n * shape.iter().product::<usize>();
    let data = (0..len).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    Array::new(vec![n, shape[0], shape[1], shape[2]], data).expect("consistent shape")
}
