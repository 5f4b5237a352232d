//! Mix-and-separate pairs and batch assembly.

use avsep_dsp::{ComplexSpectrogram, Grid, Waveform};
use avsep_tensor::{Array, Real};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::MaskKind;
use crate::corpus::Clip;
use crate::error::{data_err, Result};
use crate::frontend::Frontend;
use crate::fusion::{gt_mask, GtMask};
use crate::model::{BatchInput, Object};

/// Attempts at drawing a class-disjoint partner before giving up.
pub const PAIR_RETRIES: usize = 200;

/// One ground-truth source inside a mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct Source {
    /// 0 or 1: which clip of the pair it comes from.
    pub slot: usize,
    pub class: usize,
    /// Stem after the pair gain.
    pub stem: Waveform,
}

/// Two clips mixed into one waveform. `mixture` is the exact sample sum of
/// the gain-scaled stems.
#[derive(Clone, Debug, PartialEq)]
pub struct MixItem {
    pub clips: [usize; 2],
    pub gain: f64,
    pub sources: Vec<Source>,
    pub mixture: Waveform,
}

impl MixItem {
    pub fn id(&self, clips: &[Clip]) -> String {
        format!("{}+{}", clips[self.clips[0]].id, clips[self.clips[1]].id)
    }

    pub fn references(&self) -> Vec<Vec<f64>> {
        self.sources.iter().map(|s| s.stem.samples.clone()).collect()
    }
}

/// Builds the pair `(a, b)`: stems of both clips share one gain that keeps
/// the mixture peak at or below one.
pub fn mix_pair(clips: &[Clip], a: usize, b: usize) -> MixItem {
    let raw: Vec<(usize, usize, &Waveform)> = [a, b]
        .iter()
        .enumerate()
        .flat_map(|(slot, &ci)| clips[ci].classes.iter().zip(&clips[ci].stems).map(move |(&c, s)| (slot, c, s)))
        .collect();
    let n = raw[0].2.len();
    let rate = raw[0].2.sample_rate;
    let peak = (0..n).map(|i| raw.iter().map(|(_, _, s)| s.samples[i]).sum::<f64>().abs()).fold(0.0, f64::max);
    let gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let sources: Vec<Source> = raw
        .iter()
        .map(|&(slot, class, s)| Source {
            slot,
            class,
            stem: Waveform { samples: s.samples.iter().map(|v| v * gain).collect(), sample_rate: rate },
        })
        .collect();
    let mut mix = vec![0.0; n];
    for s in &sources {
        for (m, v) in mix.iter_mut().zip(&s.stem.samples) {
            *m += v;
        }
    }
    MixItem { clips: [a, b], gain, sources, mixture: Waveform { samples: mix, sample_rate: rate } }
}

/// Draws two distinct clips from `pool` whose class sets are disjoint. Each
/// clip is drawn from the duets with probability `duet_fraction` (when the
/// pool has duets), otherwise from the solos.
pub fn sample_mix_pair<R: Rng>(clips: &[Clip], pool: &[usize], duet_fraction: f64, rng: &mut R) -> Result<MixItem> {
    let solos: Vec<usize> = pool.iter().copied().filter(|&i| !clips[i].is_duet()).collect();
    let duets: Vec<usize> = pool.iter().copied().filter(|&i| clips[i].is_duet()).collect();
    if pool.len() < 2 {
        return Err(data_err(format!("need at least 2 clips to mix, pool has {}", pool.len())));
    }
    let draw = |rng: &mut R| -> usize {
        let from_duets = !duets.is_empty() && (solos.is_empty() || rng.gen_bool(duet_fraction));
        *if from_duets { &duets } else { &solos }.choose(rng).unwrap()
    };
    for _ in 0..PAIR_RETRIES {
        let a = draw(rng);
        let b = draw(rng);
        if a != b && clips[a].classes.iter().all(|c| !clips[b].classes.contains(c)) {
            return Ok(mix_pair(clips, a, b));
        }
    }
    Err(data_err(format!("no class-disjoint pair found after {PAIR_RETRIES} draws")))
}

/// Per-clip data reused across steps: the frame planes and each stem's
/// spectrogram.
#[derive(Clone, Debug)]
pub struct ClipCache {
    pub frame: Vec<f64>,
    pub stem_specs: Vec<ComplexSpectrogram>,
}

impl ClipCache {
    pub fn build(clip: &Clip, frontend: &Frontend) -> Result<Self> {
        Ok(Self {
            frame: clip.frame.to_chw(),
            stem_specs: clip.stems.iter().map(|s| frontend.spectrogram(s)).collect::<Result<_>>()?,
        })
    }
}

/// A batch ready for the model plus its supervision.
#[derive(Clone, Debug)]
pub struct PreparedBatch<T> {
    pub input: BatchInput<T>,
    /// `frames x |C|` 0/1 labels.
    pub labels: Vec<T>,
    pub gt: Vec<GtMask>,
}

/// Assembles network inputs and ground-truth masks. Spectrograms come from
/// the cached stem spectrograms scaled by the pair gain, which by linearity
/// equals the spectrogram of the mixed waveform.
pub fn prepare_batch<T: Real>(
    items: &[MixItem],
    clips: &[Clip],
    cache: &[Option<ClipCache>],
    frontend: &Frontend,
    classes: usize,
    kind: MaskKind,
) -> Result<PreparedBatch<T>> {
    let mut frames = Vec::new();
    let mut specs = Vec::new();
    let mut labels = Vec::new();
    let mut objects = Vec::new();
    let mut gt = Vec::new();
    let mut frame_size = 0;
    for (m, item) in items.iter().enumerate() {
        let mut stem_specs: Vec<ComplexSpectrogram> = Vec::new();
        for &ci in &item.clips {
            let cc = cache[ci].as_ref().ok_or_else(|| data_err(format!("clip {} is not cached", clips[ci].id)))?;
            frames.extend(cc.frame.iter().map(|&v| T::lit(v)));
            frame_size = clips[ci].frame.width;
            labels.extend(clips[ci].label_vector(classes).into_iter().map(T::lit));
            stem_specs.extend(cc.stem_specs.iter().map(|s| s.scale(item.gain)));
        }
        let mut mix = stem_specs[0].clone();
        for s in &stem_specs[1..] {
            mix = mix.add(s)?;
        }
        specs.extend(frontend.network_input(&mix)?.data.iter().map(|&v| T::lit(v)));
        let warped: Vec<Grid> = stem_specs.iter().map(|s| frontend.warped_magnitude(s)).collect::<Result<_>>()?;
        let refs: Vec<&Grid> = warped.iter().collect();
        for (j, src) in item.sources.iter().enumerate() {
            objects.push(Object { frame: 2 * m + src.slot, class: src.class, mixture: m });
            gt.push(gt_mask(kind, &warped[j], &refs, j));
        }
    }
    let (bins, frames_n) = (frontend.audio.warped_bins, frontend.audio.frames());
    Ok(PreparedBatch {
        input: BatchInput {
            frames: Array::new([2 * items.len(), 3, frame_size, frame_size], frames)?,
            specs: Array::new([items.len(), 1, bins, frames_n], specs)?,
            objects,
        },
        labels,
        gt,
    })
}
