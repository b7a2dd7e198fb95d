//! Turns a directory of recordings into equal-length training clips.
//!
//! Files are visited in sorted path order. Each one is resampled, cut into
//! non-overlapping clips (a trailing partial clip is dropped), and every clip
//! is peak-normalized before being written as 16-bit PCM. Files in a
//! subdirectory inherit that subdirectory's name as their label.

use std::fs;
use std::path::{Path, PathBuf};

use super::{read_wav, resample, write_wav, AudioError, Waveform};

pub const MANIFEST_HEADER: &str = "source,clip_path,num_samples,label";

/// 0.95 rounded down onto the 16-bit grid, so the written peak never exceeds 0.95.
const PEAK_TARGET: f64 = 31129.0 / 32768.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub source: PathBuf,
    pub clip_path: PathBuf,
    pub num_samples: usize,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusReport {
    pub files_in: usize,
    pub files_skipped: usize,
    pub clips_out: usize,
    pub seconds_discarded: f64,
    pub rows: Vec<ManifestRow>,
    pub warnings: Vec<String>,
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Scales so that `max |x|` equals the target; all-zero input is left alone.
fn peak_normalize(samples: &mut [f64]) {
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let k = PEAK_TARGET / peak;
        samples.iter_mut().for_each(|v| *v *= k);
    }
}

/// Prepares clips of `clip_seconds` at `target_rate` from every WAV below
/// `input_dir`. Clips go to `clips/` next to `manifest_path`, and the CSV
/// manifest ends with a `# skipped,<n>` footer line. Unreadable files are
/// skipped and reported in [`CorpusReport::warnings`].
pub fn prepare_corpus(
    input_dir: &Path,
    clip_seconds: f64,
    target_rate: u32,
    manifest_path: &Path,
) -> Result<CorpusReport, AudioError> {
    if !(clip_seconds.is_finite() && clip_seconds > 0.0) {
        return Err(AudioError::InvalidClip(clip_seconds));
    }
    if target_rate == 0 {
        return Err(AudioError::InvalidRate);
    }
    let clip_len = (clip_seconds * target_rate as f64).round() as usize;
    if clip_len == 0 {
        return Err(AudioError::InvalidClip(clip_seconds));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AudioError::Io { path, source }
    };
    let mut files = Vec::new();
    collect_wavs(input_dir, &mut files).map_err(io(input_dir))?;
    files.sort();

    let out_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let clip_dir = out_dir.join("clips");
    fs::create_dir_all(&clip_dir).map_err(io(&clip_dir))?;

    let mut report = CorpusReport {
        files_in: files.len(),
        ..Default::default()
    };
    if files.is_empty() {
        report
            .warnings
            .push(format!("no WAV files found under {}", input_dir.display()));
    }
    for file in &files {
        let wave = match read_wav(file) {
            Ok(w) => w,
            Err(e) => {
                report.files_skipped += 1;
                report.warnings.push(format!("skipping {}: {e}", file.display()));
                continue;
            }
        };
        let wave = resample(&wave, target_rate);
        let rel = file.strip_prefix(input_dir).unwrap_or(file);
        let label = match rel.parent().and_then(|p| p.components().next()) {
            Some(c) => c.as_os_str().to_string_lossy().into_owned(),
            None => String::new(),
        };
        let stem = rel
            .with_extension("")
            .to_string_lossy()
            .replace(['/', '\\'], "__");
        let samples = wave.samples();
        let clips = samples.len() / clip_len;
        report.seconds_discarded +=
            (samples.len() - clips * clip_len) as f64 / target_rate as f64;
        for k in 0..clips {
            let mut clip = samples[k * clip_len..(k + 1) * clip_len].to_vec();
            peak_normalize(&mut clip);
            let name = format!("{stem}_{k:04}.wav");
            let path = clip_dir.join(&name);
            write_wav(&Waveform::new(clip, target_rate)?, &path)?;
            report.rows.push(ManifestRow {
                source: file.clone(),
                clip_path: PathBuf::from("clips").join(name),
                num_samples: clip_len,
                label: label.clone(),
            });
        }
        report.clips_out += clips;
    }

    let mut text = format!("{MANIFEST_HEADER}\n");
    for r in &report.rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&r.source.to_string_lossy()),
            csv_field(&r.clip_path.to_string_lossy()),
            r.num_samples,
            csv_field(&r.label)
        ));
    }
    text.push_str(&format!("# skipped,{}\n", report.files_skipped));
    fs::write(manifest_path, text).map_err(io(manifest_path))?;
    Ok(report)
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Parses a manifest written by [`prepare_corpus`]. Clip paths are resolved
/// against the manifest's directory.
pub fn read_manifest(manifest_path: &Path) -> Result<Vec<ManifestRow>, AudioError> {
    let text = fs::read_to_string(manifest_path).map_err(|source| AudioError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let malformed = |reason: String| AudioError::Malformed {
        path: manifest_path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(malformed("missing manifest header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f = split_csv_line(line);
        if f.len() != 4 {
            return Err(malformed(format!("line {}: expected 4 fields", i + 2)));
        }
        let num_samples = f[2]
            .parse()
            .map_err(|_| malformed(format!("line {}: bad sample count", i + 2)))?;
        rows.push(ManifestRow {
            source: PathBuf::from(&f[0]),
            clip_path: base.join(&f[1]),
            num_samples,
            label: f[3].clone(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_targets_grid_peak() {
        let mut x = vec![0.1, -0.4, 0.2];
        peak_normalize(&mut x);
        assert_eq!(x[1], -PEAK_TARGET);
        let mut z = vec![0.0; 4];
        peak_normalize(&mut z);
        assert_eq!(z, vec![0.0; 4]);
    }

    #[test]
    fn csv_quoting_round_trips() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
        let line = format!("{},{},3,{}", csv_field("x,\"y\""), csv_field("c.wav"), csv_field(""));
        assert_eq!(split_csv_line(&line), vec!["x,\"y\"", "c.wav", "3", ""]);
    }
}
