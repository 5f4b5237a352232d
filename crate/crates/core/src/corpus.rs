//! Synthetic audiovisual corpus: each class has a harmonic timbre and a
//! glyph that identifies it in the frame. Clips are solos or duets with
//! per-source stems.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use avsep_dsp::io::{quantize_pcm16, read_wav, write_wav};
use avsep_dsp::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{AudioConfig, CorpusCounts};
use crate::error::{data_err, AvError, Result};
use crate::image::Image;

/// Stem peak after normalization. Slightly under one half so two stems
/// always sum inside the 16-bit range.
pub const STEM_PEAK: f64 = 0.49998;
/// Pink noise level relative to the harmonic signal.
pub const NOISE_DB: f64 = -40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Envelope {
    Sustained,
    Plucked,
    Tremolo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Triangle,
    Square,
    Cross,
    Diamond,
    Ring,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub id: usize,
    pub name: &'static str,
    pub f0: (f64, f64),
    /// Relative harmonic amplitudes, unit energy.
    pub harmonics: Vec<f64>,
    pub envelope: Envelope,
    pub shape: Shape,
    pub color: [u8; 3],
}

const TABLE: [(&str, (f64, f64), &[f64], Envelope, Shape, [u8; 3]); 6] = [
    ("drone", (110.0, 150.0), &[1.0, 0.5, 0.33, 0.25, 0.2, 0.17, 0.14, 0.12], Envelope::Sustained, Shape::Circle, [230, 40, 40]),
    ("pluck", (250.0, 330.0), &[1.0, 0.0, 0.5, 0.0, 0.3, 0.0, 0.2], Envelope::Plucked, Shape::Triangle, [40, 210, 60]),
    ("flute", (520.0, 700.0), &[1.0, 0.3, 0.1], Envelope::Tremolo, Shape::Square, [60, 90, 240]),
    ("whistle", (1000.0, 1250.0), &[1.0, 0.0, 0.2], Envelope::Sustained, Shape::Cross, [240, 220, 40]),
    ("horn", (180.0, 220.0), &[0.6, 1.0, 0.7, 0.4, 0.2], Envelope::Tremolo, Shape::Diamond, [220, 60, 220]),
    ("chime", (400.0, 480.0), &[1.0, 0.0, 0.0, 0.4], Envelope::Plucked, Shape::Ring, [60, 220, 230]),
];

/// The first `n` built-in classes.
pub fn class_specs(n: usize) -> Result<Vec<ClassSpec>> {
    if n > TABLE.len() {
        return Err(AvError::Config(format!("at most {} classes are defined, asked for {n}", TABLE.len())));
    }
    Ok(TABLE[..n]
        .iter()
        .enumerate()
        .map(|(id, &(name, f0, h, envelope, shape, color))| {
            let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            ClassSpec { id, name, f0, harmonics: h.iter().map(|v| v / norm).collect(), envelope, shape, color }
        })
        .collect())
}

/// Amplitude envelope of `n` samples.
pub fn envelope(kind: Envelope, n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ramp = (0.02 * rate) as usize;
    let edges = |i: usize| ((i as f64 / ramp as f64).min(1.0)).min((n - i) as f64 / ramp as f64).min(1.0);
    match kind {
        Envelope::Sustained => (0..n).map(edges).collect(),
        Envelope::Plucked => {
            let attack = (0.005 * rate) as usize;
            let decay = rng.gen_range(0.10..0.20) * rate;
            (0..n)
                .map(|i| if i < attack { i as f64 / attack as f64 } else { (-((i - attack) as f64) / decay).exp() })
                .collect()
        }
        Envelope::Tremolo => {
            let f = rng.gen_range(6.0..9.0);
            let ph = rng.gen_range(0.0..2.0 * PI);
            (0..n).map(|i| edges(i) * (0.7 + 0.3 * (2.0 * PI * f * i as f64 / rate + ph).cos())).collect()
        }
    }
}

/// Pink noise from white noise through a fixed pole/zero filter bank.
fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    (0..n)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// One source: harmonics at a random fundamental inside the class range,
/// shaped by the class envelope, plus pink noise, peak-normalized and rounded
/// onto the 16-bit sample grid.
pub fn synth_stem(spec: &ClassSpec, audio: &AudioConfig, rng: &mut ChaCha8Rng) -> Waveform {
    let (n, rate) = (audio.clip_len, audio.sample_rate as f64);
    let f0 = rng.gen_range(spec.f0.0..spec.f0.1);
    let env = envelope(spec.envelope, n, rate, rng);
    let mut x = vec![0.0; n];
    for (h, &amp) in spec.harmonics.iter().enumerate() {
        let f = f0 * (h + 1) as f64;
        let phase = rng.gen_range(0.0..2.0 * PI);
        if amp == 0.0 || f >= 0.95 * rate / 2.0 {
            continue;
        }
        for (i, v) in x.iter_mut().enumerate() {
            *v += amp * (2.0 * PI * f * i as f64 / rate + phase).sin();
        }
    }
    for (v, e) in x.iter_mut().zip(&env) {
        *v *= e;
    }
    let noise = pink_noise(n, rng);
    let g = rms(&x) * 10f64.powf(NOISE_DB / 20.0) / rms(&noise).max(1e-12);
    for (v, e) in x.iter_mut().zip(&noise) {
        *v += g * e;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let samples = x.iter().map(|v| quantize_pcm16(v * STEM_PEAK / peak)).collect();
    Waveform { samples, sample_rate: audio.sample_rate }
}

fn inside(shape: Shape, dx: f64, dy: f64, r: f64) -> bool {
    let d = (dx * dx + dy * dy).sqrt();
    match shape {
        Shape::Circle => d <= r,
        Shape::Triangle => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0,
        Shape::Square => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
        Shape::Cross => (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r),
        Shape::Diamond => dx.abs() + dy.abs() <= r,
        Shape::Ring => d <= r && d >= 0.55 * r,
    }
}

/// Dim textured background with one glyph per class, glyphs never
/// overlapping.
pub fn render_frame(classes: &[&ClassSpec], size: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    if classes.is_empty() || classes.len() > 2 {
        return Err(data_err(format!("a frame holds 1 or 2 glyphs, got {}", classes.len())));
    }
    let mut img = Image::new(size, size);
    let tint: [f64; 3] = [rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)];
    for y in 0..size {
        for x in 0..size {
            let wave = 6.0 * (1.0 + ((x as f64) * 0.3 + tint[0]).sin() * ((y as f64) * 0.2 + tint[1]).cos());
            let px = [0, 1, 2].map(|c| (tint[c] + wave + rng.gen_range(0.0..12.0)).min(50.0) as u8);
            img.set(x, y, px);
        }
    }
    let (r_lo, r_hi) = (size as f64 * 0.12, size as f64 * 0.2);
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let centre = |r: f64, rng: &mut ChaCha8Rng| {
        (rng.gen_range(r + 1.0..size as f64 - r - 1.0), rng.gen_range(r + 1.0..size as f64 - r - 1.0))
    };
    let apart = |a: (f64, f64, f64), b: (f64, f64, f64)| (a.0 - b.0).abs() > a.2 + b.2 + 2.0 || (a.1 - b.1).abs() > a.2 + b.2 + 2.0;
    for _ in classes {
        let mut ok = false;
        for attempt in 0..100 {
            // small frames may need smaller glyphs, and room made by moving earlier ones
            let r = rng.gen_range(r_lo..r_hi) * 0.85f64.powi(attempt / 25);
            if attempt >= 25 {
                for p in placed.iter_mut() {
                    (p.0, p.1) = centre(p.2, rng);
                }
                if !placed.windows(2).all(|w| apart(w[0], w[1])) {
                    continue;
                }
            }
            let (cx, cy) = centre(r, rng);
            if placed.iter().all(|&p| apart(p, (cx, cy, r))) {
                placed.push((cx, cy, r));
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(data_err(format!("could not place {} glyphs without overlap on a {size}px frame", classes.len())));
        }
    }
    for (spec, &(cx, cy, r)) in classes.iter().zip(&placed) {
        for y in 0..size {
            for x in 0..size {
                if inside(spec.shape, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r) {
                    img.set(x, y, spec.color);
                }
            }
        }
    }
    Ok(img)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(data_err(format!("unknown split `{s}`"))),
        }
    }
}

/// One clip with its frame and per-class stems (same order as `classes`).
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    pub split: Split,
    pub classes: Vec<usize>,
    pub frame: Image,
    pub stems: Vec<Waveform>,
    pub mixture: Waveform,
}

impl Clip {
    pub fn is_duet(&self) -> bool {
        self.classes.len() > 1
    }

    pub fn label_vector(&self, classes: usize) -> Vec<f64> {
        let mut y = vec![0.0; classes];
        for &c in &self.classes {
            y[c] = 1.0;
        }
        y
    }
}

/// Sample-exact sum of stems on the 16-bit grid.
pub fn mix_stems(stems: &[Waveform]) -> Waveform {
    let n = stems[0].len();
    let samples = (0..n).map(|i| quantize_pcm16(stems.iter().map(|s| s.samples[i]).sum())).collect();
    Waveform { samples, sample_rate: stems[0].sample_rate }
}

fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Builds every clip in memory. Solo clips come first, grouped by split and
/// class, then duets split 80/10/10. Each clip draws from its own random
/// stream, so clips do not depend on one another.
pub fn generate_clips(
    audio: &AudioConfig,
    frame_size: usize,
    classes: usize,
    counts: &CorpusCounts,
    seed: u64,
) -> Result<Vec<Clip>> {
    let specs = class_specs(classes)?;
    let mut plan: Vec<(Split, Vec<usize>)> = Vec::new();
    for (split, n) in [(Split::Train, counts.train), (Split::Val, counts.val), (Split::Test, counts.test)] {
        for c in 0..classes {
            plan.extend((0..n).map(|_| (split, vec![c])));
        }
    }
    let n_val = counts.duets / 10;
    let n_train = counts.duets - 2 * n_val;
    for i in 0..counts.duets {
        let split = if i < n_train { Split::Train } else if i < n_train + n_val { Split::Val } else { Split::Test };
        plan.push((split, Vec::new()));
    }
    plan.into_iter()
        .enumerate()
        .map(|(index, (split, mut cls))| {
            let mut rng = clip_rng(seed, index);
            if cls.is_empty() {
                let a = rng.gen_range(0..classes);
                let b = (a + rng.gen_range(1..classes)) % classes;
                cls = vec![a.min(b), a.max(b)];
            }
            let picked: Vec<&ClassSpec> = cls.iter().map(|&c| &specs[c]).collect();
            let frame = render_frame(&picked, frame_size, &mut rng)?;
            let stems: Vec<Waveform> = picked.iter().map(|s| synth_stem(s, audio, &mut rng)).collect();
            let mixture = mix_stems(&stems);
            Ok(Clip { id: format!("c{index:05}"), split, classes: cls, frame, stems, mixture })
        })
        .collect()
}

pub const MANIFEST: &str = "manifest.tsv";

/// Writes frames, stems, mixtures and the manifest under `dir`. A non-empty
/// `dir` is refused unless `overwrite` is set.
pub fn write_corpus(dir: &Path, clips: &[Clip], overwrite: bool) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !overwrite {
            return Err(data_err(format!("{} is not empty; pass overwrite to replace it", dir.display())));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir.join("frames"))?;
    fs::create_dir_all(dir.join("audio"))?;
    let mut manifest = String::new();
    for clip in clips {
        let frame = format!("frames/{}.ppm", clip.id);
        let mix = format!("audio/{}_mix.wav", clip.id);
        clip.frame.save_ppm(dir.join(&frame))?;
        write_wav(dir.join(&mix), &clip.mixture)?;
        let mut stems = Vec::new();
        for (c, stem) in clip.classes.iter().zip(&clip.stems) {
            let p = format!("audio/{}_s{c}.wav", clip.id);
            write_wav(dir.join(&p), stem)?;
            stems.push(p);
        }
        let labels: Vec<String> = clip.classes.iter().map(|c| c.to_string()).collect();
        writeln!(manifest, "{}\t{}\t{}\t{frame}\t{mix}\t{}", clip.id, clip.split.name(), labels.join(","), stems.join(";"))
            .unwrap();
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// One parsed manifest line.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub classes: Vec<usize>,
    pub frame: PathBuf,
    pub mixture: PathBuf,
    pub stems: Vec<PathBuf>,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(data_err(format!("manifest line {}: expected 6 tab-separated fields, got {}", n + 1, f.len())));
            }
            let classes = f[2]
                .split(',')
                .map(|c| c.parse().map_err(|_| data_err(format!("manifest line {}: bad class id `{c}`", n + 1))))
                .collect::<Result<Vec<usize>>>()?;
            let stems: Vec<PathBuf> = f[5].split(';').map(|p| dir.join(p)).collect();
            if stems.len() != classes.len() {
                return Err(data_err(format!("manifest line {}: {} classes but {} stems", n + 1, classes.len(), stems.len())));
            }
            Ok(ManifestEntry {
                id: f[0].to_string(),
                split: Split::parse(f[1])?,
                classes,
                frame: dir.join(f[3]),
                mixture: dir.join(f[4]),
                stems,
            })
        })
        .collect()
}

pub fn load_corpus(dir: &Path) -> Result<Vec<Clip>> {
    read_manifest(dir)?
        .into_iter()
        .map(|e| {
            let stems = e.stems.iter().map(read_wav).collect::<avsep_dsp::Result<Vec<_>>>()?;
            Ok(Clip {
                frame: Image::load(&e.frame)?,
                mixture: read_wav(&e.mixture)?,
                stems,
                id: e.id,
                split: e.split,
                classes: e.classes,
            })
        })
        .collect()
}
