#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocemo_core::audio::{write_wav, AudioClip};

pub const RATE: u32 = 22_050;

/// Harmonic tone with vibrato, a soft attack and a little noise.
pub fn sung_note(f0: f64, seconds: f64, brightness: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (seconds * f64::from(RATE)) as usize;
    let vib_rate = rng.gen_range(4.5..6.5);
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(RATE);
            let f = f0 * (1.0 + 0.01 * (2.0 * PI * vib_rate * t).sin());
            phase += 2.0 * PI * f / f64::from(RATE);
            let env = (t / 0.05).min(1.0) * (1.0 - (t / seconds).powi(4));
            let tone: f64 = (1..=6).map(|h| brightness.powi(h - 1) * (f64::from(h) * phase).sin()).sum();
            0.25 * env * tone / 2.0 + rng.gen_range(-0.005..0.005)
        })
        .collect()
}

/// Writes 12 song-channel clips named like the corpus (two per emotion,
/// different actors), each class with its own pitch and timbre.
pub fn write_toy_dataset(dir: &Path, seed: u64) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::new();
    for emotion in 1..=6u32 {
        for actor in [1u32, 2] {
            let f0 = 180.0 * 1.17f64.powi(emotion as i32) * if actor == 2 { 1.03 } else { 1.0 };
            let brightness = 0.2 + 0.12 * f64::from(emotion);
            let samples = sung_note(f0, 1.6, brightness, &mut rng);
            let clip = AudioClip::from_clamped(samples, RATE).unwrap();
            let intensity = if emotion == 1 { 1 } else { 2 };
            let name = format!("03-02-{emotion:02}-{intensity:02}-01-01-{actor:02}.wav");
            let actor_dir = dir.join(format!("Actor_{actor:02}"));
            std::fs::create_dir_all(&actor_dir).unwrap();
            let path = actor_dir.join(name);
            write_wav(&clip, &path).unwrap();
            paths.push(path);
        }
    }
    paths
}

/// A phrase of changing notes, long enough for several analysis windows.
pub fn melody(seconds: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    while (samples.len() as f64) < seconds * f64::from(RATE) {
        let f0 = rng.gen_range(150.0..600.0);
        let brightness = rng.gen_range(0.2..0.9);
        samples.extend(sung_note(f0, rng.gen_range(0.4..1.2), brightness, &mut rng));
    }
    samples.truncate((seconds * f64::from(RATE)) as usize);
    AudioClip::from_clamped(samples, RATE).unwrap()
}

pub fn write_clip(dir: &Path, name: &str, clip: &AudioClip) -> PathBuf {
    let path = dir.join(name);
    write_wav(clip, &path).unwrap();
    path
}
