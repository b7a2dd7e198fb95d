use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::{AudioError, Waveform};

/// What the source file looked like before downmixing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub channels: u16,
    pub bits_per_sample: u16,
    pub float: bool,
}

pub fn read_wav(path: &Path) -> Result<Waveform, AudioError> {
    read_wav_with_info(path).map(|(w, _)| w)
}

/// Reads 16-bit PCM or 32-bit float WAV, mono or stereo. Stereo is averaged
/// to mono; 16-bit values are divided by 32768.
pub fn read_wav_with_info(path: &Path) -> Result<(Waveform, WavInfo), AudioError> {
    let mut reader = hound::WavReader::open(path).map_err(|e| convert(path, e))?;
    let spec = reader.spec();
    let info = WavInfo {
        channels: spec.channels,
        bits_per_sample: spec.bits_per_sample,
        float: spec.sample_format == SampleFormat::Float,
    };
    let unsupported = |reason: String| AudioError::Unsupported {
        path: path.to_path_buf(),
        reason,
    };
    if !(1..=2).contains(&spec.channels) {
        return Err(unsupported(format!("{} channels", spec.channels)));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| convert(path, e))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| convert(path, e))?,
        (fmt, bits) => return Err(unsupported(format!("{bits}-bit {fmt:?}"))),
    };
    let ch = spec.channels as usize;
    if interleaved.len() < ch {
        return Err(AudioError::Empty(path.to_path_buf()));
    }
    let mono = if ch == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(ch)
            .map(|f| f.iter().sum::<f64>() / ch as f64)
            .collect()
    };
    let wave = Waveform::new(mono, spec.sample_rate)?;
    Ok((wave, info))
}

/// Writes 16-bit PCM mono. Samples are limited to `[-1, 1]` and quantized
/// with rounding to the nearest step of 1/32768.
pub fn write_wav(w: &Waveform, path: &Path) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| convert(path, e))?;
    for &v in w.samples() {
        let q = (v.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| convert(path, e))?;
    }
    writer.finalize().map_err(|e| convert(path, e))
}

fn convert(path: &Path, e: hound::Error) -> AudioError {
    let path = path.to_path_buf();
    match e {
        hound::Error::IoError(source) if source.kind() == std::io::ErrorKind::UnexpectedEof => {
            AudioError::Malformed {
                path,
                reason: "unexpected end of file".into(),
            }
        }
        hound::Error::IoError(source) => AudioError::Io { path, source },
        hound::Error::FormatError(reason) => AudioError::Malformed {
            path,
            reason: reason.into(),
        },
        hound::Error::Unsupported => AudioError::Unsupported {
            path,
            reason: "codec not supported".into(),
        },
        other => AudioError::Malformed {
            path,
            reason: other.to_string(),
        },
    }
}
