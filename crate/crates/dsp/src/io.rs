//! WAV (PCM 16-bit mono) and `SPEC1` grid dumps.
//!
//! `SPEC1` layout: the 6 magic bytes `SPEC1\n`, one flag byte (0 = magnitude
//! only, 1 = magnitude followed by phase), `u32` rows and `u32` cols, then
//! `rows * cols` little-endian `f32` values per block, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{invalid, DspError, Result};
use crate::grid::Grid;
use crate::stft::Waveform;

const PCM_SCALE: f64 = 32767.0;
pub const SPEC_MAGIC: &[u8; 6] = b"SPEC1\n";

/// Rounds a sample onto the 16-bit grid used by [`write_wav`], so values that
/// go through a WAV round trip come back unchanged.
pub fn quantize_pcm16(x: f64) -> f64 {
    pcm16(x) as f64 / PCM_SCALE
}

fn pcm16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * PCM_SCALE).round() as i16
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(invalid("read_wav", format!("expected mono, file has {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(invalid(
            "read_wav",
            format!("expected 16-bit PCM, file is {:?} at {} bits", spec.sample_format, spec.bits_per_sample),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes PCM 16-bit mono, clipping samples to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &x in &w.samples {
        writer.write_sample(pcm16(x))?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_spec1<W: Write>(mut out: W, mag: &Grid, phase: Option<&Grid>) -> Result<()> {
    if let Some(p) = phase {
        if !p.same_shape(mag) {
            return Err(invalid("write_spec1", "phase block shape differs from magnitude"));
        }
    }
    out.write_all(SPEC_MAGIC)?;
    out.write_all(&[phase.is_some() as u8])?;
    out.write_all(&(mag.rows as u32).to_le_bytes())?;
    out.write_all(&(mag.cols as u32).to_le_bytes())?;
    for block in std::iter::once(mag).chain(phase) {
        for &v in &block.data {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_spec1<R: Read>(mut input: R) -> Result<(Grid, Option<Grid>)> {
    let mut header = [0u8; 15];
    input.read_exact(&mut header).map_err(|_| DspError::Format("truncated header".into()))?;
    if &header[..6] != SPEC_MAGIC {
        return Err(DspError::Format("bad magic".into()));
    }
    let has_phase = match header[6] {
        0 => false,
        1 => true,
        f => return Err(DspError::Format(format!("unknown flag byte {f}"))),
    };
    let rows = u32::from_le_bytes(header[7..11].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[11..15].try_into().unwrap()) as usize;
    let mut block = || -> Result<Grid> {
        let mut bytes = vec![0u8; rows * cols * 4];
        input.read_exact(&mut bytes).map_err(|_| DspError::Format(format!("truncated {rows}x{cols} block")))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Grid::new(rows, cols, data)
    };
    let mag = block()?;
    let phase = if has_phase { Some(block()?) } else { None };
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(DspError::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok((mag, phase))
}

pub fn save_spec1(path: impl AsRef<Path>, mag: &Grid, phase: Option<&Grid>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_spec1(&mut w, mag, phase)?;
    w.flush()?;
    Ok(())
}

pub fn load_spec1(path: impl AsRef<Path>) -> Result<(Grid, Option<Grid>)> {
    read_spec1(BufReader::new(File::open(path)?))
}
