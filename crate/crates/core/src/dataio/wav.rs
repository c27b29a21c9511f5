use std::io::Read;
use std::path::Path;

use crate::error::{KwsError, Result, WavProblem};
use crate::features::{AudioBuffer, SAMPLE_RATE};

fn wav_error(path: &Path, reason: WavProblem) -> KwsError {
    KwsError::Wav {
        path: path.to_path_buf(),
        reason,
    }
}

/// Reads a 16 kHz mono 16-bit PCM WAV file, scaling samples by 1/32768.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => KwsError::Io(io),
        hound::Error::Unsupported => wav_error(path, WavProblem::Format),
        other => wav_error(path, WavProblem::Malformed(other.to_string())),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(wav_error(path, WavProblem::Format));
    }
    if spec.channels != 1 {
        return Err(wav_error(path, WavProblem::Channels(spec.channels)));
    }
    if spec.bits_per_sample != 16 {
        return Err(wav_error(path, WavProblem::BitDepth(spec.bits_per_sample)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(wav_error(path, WavProblem::SampleRate(spec.sample_rate)));
    }
    let pcm = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<Vec<i16>, _>>()
        .map_err(|e| wav_error(path, WavProblem::Malformed(e.to_string())))?;
    Ok(AudioBuffer::from_pcm16(&pcm, spec.sample_rate))
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| wav_error(path, WavProblem::Malformed(e.to_string())))?;
    for s in audio.to_pcm16() {
        writer
            .write_sample(s)
            .map_err(|e| wav_error(path, WavProblem::Malformed(e.to_string())))?;
    }
    writer
        .finalize()
        .map_err(|e| wav_error(path, WavProblem::Malformed(e.to_string())))?;
    Ok(())
}

/// Headerless 16-bit little-endian mono PCM at 16 kHz; a trailing odd byte is dropped.
pub fn read_raw_pcm<R: Read>(mut input: R) -> Result<AudioBuffer> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let pcm: Vec<i16> = bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    Ok(AudioBuffer::from_pcm16(&pcm, SAMPLE_RATE))
}
