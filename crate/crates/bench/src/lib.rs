//! Shared fixtures for the kernel benchmarks.

use allencahn_core::*;

pub fn random_field(modes: usize, seed: u64) -> SpectralField {
    // Deterministic fixture without pulling a RNG dependency: a fixed
    // quasi-random sequence is plenty for timing purposes.
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    let coeffs = (0..modes)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    SpectralField { coeffs }
}

pub fn bench_tape(modes: usize, steps: usize, dt: f64) -> NoiseTape {
    let spectrum = LaplacianSpectrum::dirichlet(modes);
    NoiseTape::generate(
        &QSpec::White,
        &spectrum,
        steps,
        dt,
        &StreamKey::new(42, 0, StreamPurpose::Tape),
    )
    .unwrap()
}
