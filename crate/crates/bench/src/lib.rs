//! Shared fixtures for the benchmarks.

use vocemo_core::AudioClip;

/// Deterministic two-tone clip with a slow amplitude wobble.
pub fn test_clip(seconds: f64, rate: u32) -> AudioClip {
    let n = (seconds * f64::from(rate)) as usize;
    AudioClip::from_clamped(
        (0..n).map(|i| {
            let t = i as f64 / f64::from(rate);
            let env = 0.5 + 0.3 * (1.3 * t).sin();
            env * (0.4 * (2.0 * std::f64::consts::PI * 330.0 * t).sin() + 0.2 * (2.0 * std::f64::consts::PI * 1210.0 * t).sin())
        }),
        rate,
    )
    .expect("valid clip")
}
