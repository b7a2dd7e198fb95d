use std::f64::consts::TAU;
use std::path::Path;

use cryforge::audio::{
    mel_spectrogram, prepare_corpus, read_manifest, read_wav, resample, write_wav, Resampler,
    MANIFEST_HEADER,
};
use cryforge::Waveform;

fn tone(freq: f64, rate: u32, n: usize, amp: f64) -> Waveform {
    let s = (0..n).map(|i| amp * (TAU * freq * i as f64 / rate as f64).sin()).collect();
    Waveform::new(s, rate).unwrap()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn write(path: &Path, w: &Waveform) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_wav(w, path).unwrap();
}

#[test]
fn resampled_length_is_rounded_ratio() {
    let five = Waveform::new(vec![0.0; 5 * 22050], 22050).unwrap();
    assert_eq!(resample(&five, 16000).len(), 80_000);
    let r = Resampler::new(48000, 16000);
    assert_eq!(r.output_len(48001), 16000);
    assert_eq!(r.output_len(48002), 16001);
}

#[test]
fn tones_above_the_new_nyquist_are_rejected() {
    for (src, freq) in [(44100, 9500.0), (22050, 9000.0), (48000, 12000.0)] {
        let w = tone(freq, src, src as usize, 0.9);
        let out = resample(&w, 16000);
        let mid = &out.samples()[2000..14000];
        let db = 20.0 * (rms(mid) / rms(w.samples())).log10();
        assert!(db < -40.0, "{freq} Hz from {src}: {db:.1} dB");
    }
}

#[test]
fn wav_round_trip_error_is_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sine.wav");
    let w = tone(1000.0, 16000, 16000, 0.7);
    write_wav(&w, &path).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate(), 16000);
    assert_eq!(back.len(), w.len());
    let err = back
        .samples()
        .iter()
        .zip(w.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1.0 / 32768.0, "error {err}");
}

#[test]
fn one_second_gives_the_standard_mel_grid() {
    let m = mel_spectrogram(&tone(440.0, 16000, 16000, 0.5)).unwrap();
    assert_eq!((m.channels(), m.frames), (80, 98));
    assert!(m.values.iter().flatten().all(|v| v.is_finite() && *v >= -5.0));
}

#[test]
fn corpus_cuts_normalizes_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    // 3.5 s at 22050 Hz becomes three 1 s clips and drops half a second
    write(&input.join("hungry/a.wav"), &tone(300.0, 22050, 77175, 0.2));
    write(&input.join("b.wav"), &tone(500.0, 16000, 16000, 0.99));
    std::fs::write(input.join("broken.wav"), b"not audio").unwrap();
    let out = dir.path().join("out");
    let manifest = out.join("manifest.csv");
    let report = prepare_corpus(&input, 1.0, 16000, &manifest).unwrap();
    assert_eq!(report.files_in, 3);
    assert_eq!(report.files_skipped, 1);
    assert_eq!(report.clips_out, 4);
    assert!((report.seconds_discarded - 0.5).abs() < 1e-3);
    assert_eq!(report.warnings.len(), 1);

    let rows = read_manifest(&manifest).unwrap();
    assert_eq!(rows.len(), 4);
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["", "hungry", "hungry", "hungry"]);
    for row in &rows {
        assert_eq!(row.num_samples, 16000);
        let clip = read_wav(&row.clip_path).unwrap();
        assert_eq!((clip.len(), clip.sample_rate()), (16000, 16000));
        let peak = clip.peak();
        assert!((0.90..=0.95).contains(&peak), "{}: peak {peak}", row.clip_path.display());
    }
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.starts_with(MANIFEST_HEADER));
    assert!(text.trim_end().ends_with("# skipped,1"));
}

#[test]
fn empty_directory_yields_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir_all(&input).unwrap();
    let manifest = dir.path().join("out/manifest.csv");
    let report = prepare_corpus(&input, 1.0, 16000, &manifest).unwrap();
    assert_eq!((report.files_in, report.clips_out), (0, 0));
    assert!(!report.warnings.is_empty());
    assert!(read_manifest(&manifest).unwrap().is_empty());
}

#[test]
fn manifest_rows_match_a_recount() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let mut expected = 0;
    for k in 0..10usize {
        // lengths 0.5 s .. 5 s in half-second steps
        let n = 8000 * (k + 1);
        expected += n / 16000;
        write(&input.join(format!("f{k}.wav")), &tone(200.0 + 50.0 * k as f64, 16000, n, 0.3));
    }
    let manifest = dir.path().join("out/manifest.csv");
    let report = prepare_corpus(&input, 1.0, 16000, &manifest).unwrap();
    let rows = read_manifest(&manifest).unwrap();
    assert_eq!(rows.len(), expected);
    assert_eq!(report.clips_out, expected);
    let on_disk = std::fs::read_dir(dir.path().join("out/clips")).unwrap().count();
    assert_eq!(on_disk, expected);
}

#[test]
fn silent_clips_stay_silent() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write(&input.join("zero.wav"), &Waveform::new(vec![0.0; 16000], 16000).unwrap());
    let manifest = dir.path().join("out/manifest.csv");
    prepare_corpus(&input, 1.0, 16000, &manifest).unwrap();
    let rows = read_manifest(&manifest).unwrap();
    assert_eq!(read_wav(&rows[0].clip_path).unwrap().peak(), 0.0);
}

#[test]
fn invalid_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.csv");
    assert!(prepare_corpus(dir.path(), 0.0, 16000, &manifest).is_err());
    assert!(prepare_corpus(dir.path(), 1.0, 0, &manifest).is_err());
    assert!(prepare_corpus(&dir.path().join("missing"), 1.0, 16000, &manifest).is_err());
}
