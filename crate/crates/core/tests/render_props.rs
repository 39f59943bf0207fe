mod common;

use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use symtune_core::midi::{Note, Score, Tempo};
use symtune_core::render::{crop_audio, read_wav, release_samples, render_builtin, render_builtin_prefix, write_wav};

const SR: u32 = 8000;

fn with_tempo_scale(s: &Score, k: f64) -> Score {
    let mut t = s.clone();
    t.tempos = s.tempos.iter().map(|x| Tempo::from_bpm(x.tick, x.bpm() * k)).collect();
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn length_follows_the_tempo_map(s in common::arb_score(20)) {
        prop_assume!(!s.notes.is_empty());
        let clip = render_builtin(&s, SR).unwrap();
        let end = s.tick_to_seconds(s.end_tick());
        let body = clip.len() as f64 - release_samples(SR) as f64;
        prop_assert!((body - end * SR as f64).abs() <= 1.0);
    }

    #[test]
    fn doubling_tempo_halves_the_body(s in common::arb_score(20)) {
        prop_assume!(!s.notes.is_empty());
        let rel = release_samples(SR) as f64;
        let slow = render_builtin(&s, SR).unwrap().len() as f64 - rel;
        let fast = render_builtin(&with_tempo_scale(&s, 2.0), SR).unwrap().len() as f64 - rel;
        prop_assert!((fast - slow / 2.0).abs() <= 1.0, "{} vs {}", fast, slow);
    }

    #[test]
    fn rendering_is_pure_and_bounded(s in common::arb_score(30)) {
        let a = render_builtin(&s, SR).unwrap();
        prop_assert_eq!(&a.samples, &render_builtin(&s, SR).unwrap().samples);
        prop_assert!(a.samples.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn prefix_render_equals_crop(s in common::arb_score(20), secs in 0.1f64..6.0) {
        let full = render_builtin(&s, SR).unwrap();
        prop_assert_eq!(render_builtin_prefix(&s, SR, secs).unwrap().samples, crop_audio(&full, secs).samples);
    }
}

#[test]
fn three_hundred_note_chord_stays_in_range() {
    let mut s = Score::empty(480);
    s.notes = (0..300).map(|i| Note::new(30 + (i % 70) as u8, 127, (i / 70) as u64, 960).unwrap()).collect();
    s.normalize();
    let clip = render_builtin(&s, 22_050).unwrap();
    assert!(clip.peak() <= 1.0 && clip.peak() > 0.5);
}

#[test]
fn a4_spectrum_peaks_at_440_hz() {
    let mut s = Score::empty(480);
    s.notes.push(Note::new(69, 100, 0, 960).unwrap());
    let clip = render_builtin(&s, 22_050).unwrap();
    let n = 16_384;
    let mut buf: Vec<Complex<f64>> = clip.samples[..n].iter().map(|&x| Complex::new(x as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bin_hz = 22_050.0 / n as f64;
    let peak = (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
    assert!((peak as f64 * bin_hz - 440.0).abs() < 2.0 * bin_hz);
    let second = ((660.0 / bin_hz) as usize..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
    assert!((second as f64 * bin_hz - 880.0).abs() < 2.0 * bin_hz);
}

#[test]
fn wav_round_trip_within_quantization() {
    for s in common::seeded_scores(5, 20, 3) {
        let clip = render_builtin(&s, SR).unwrap();
        let back = read_wav(&write_wav(&clip)).unwrap();
        assert_eq!(back.sample_rate, SR);
        assert_eq!(back.len(), clip.len());
        assert!(clip.samples.iter().zip(&back.samples).all(|(a, b)| (a - b).abs() <= 1.0 / 32767.0 + 1e-6));
    }
}
