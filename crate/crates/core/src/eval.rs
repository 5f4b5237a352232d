//! Inference and the evaluation protocols: separation metrics in several
//! conditioning modes, the threshold sweep for classification, and
//! ideal-mask upper bounds.

use std::fmt::Write as _;

use avsep_dsp::{BssProjector, ComplexSpectrogram, Grid, Metrics, Waveform};
use avsep_tensor::{Array, Graph, Mode, Real};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::corpus::{Clip, Split};
use crate::error::{data_err, Result};
use crate::frontend::Frontend;
use crate::fusion::{gt_binary_mask, gt_ratio_mask};
use crate::image::Image;
use crate::mixing::{sample_mix_pair, MixItem};
use crate::model::{BatchInput, Model, Object};
use crate::vision::sigmoid;

/// Thresholds of the classification sweep.
pub const TAU_SWEEP: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Mixtures per forward pass during evaluation.
const EVAL_CHUNK: usize = 8;

fn frames_array<T: Real>(frames: &[&Image]) -> Result<Array<T>> {
    let size = frames.first().map_or(0, |f| f.width);
    let mut data = Vec::with_capacity(frames.len() * 3 * size * size);
    for f in frames {
        if f.width != size || f.height != size {
            return Err(data_err(format!("frame is {}x{}, expected {size}x{size}", f.width, f.height)));
        }
        data.extend(f.to_chw().into_iter().map(T::lit));
    }
    Ok(Array::new([frames.len(), 3, size, size], data)?)
}

/// Per-class sigmoid probabilities for each frame.
pub fn class_probabilities<T: Real>(model: &Model<T>, frames: &[&Image]) -> Result<Vec<Vec<f64>>> {
    let classes = model.arch.classes;
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(2 * EVAL_CHUNK) {
        let mut g = Graph::with_params(&model.store, Mode::Eval, 0);
        let x = g.input(frames_array(chunk)?)?;
        let v = model.vision.forward(&mut g, x)?;
        let s = g.value(v.scores).data();
        out.extend(s.chunks(classes).map(|row| row.iter().map(|v| sigmoid(v.as_f64())).collect()));
    }
    Ok(out)
}

/// Classes whose probability reaches `tau`.
pub fn detected(probabilities: &[f64], tau: f64) -> Vec<usize> {
    probabilities.iter().enumerate().filter(|(_, &p)| p >= tau).map(|(c, _)| c).collect()
}

/// One mixture to run through the model: its frames, its spectrogram, and
/// the `(frame, class)` pairs to separate.
pub struct MaskRequest<'a> {
    pub frames: Vec<&'a Image>,
    pub mixture: &'a ComplexSpectrogram,
    pub picks: Vec<(usize, usize)>,
}

/// Predicted warped masks in `[0, 1]`, one list per request in pick order.
pub fn predict_masks<T: Real>(model: &Model<T>, frontend: &Frontend, requests: &[MaskRequest<'_>]) -> Result<Vec<Vec<Grid>>> {
    let mut out: Vec<Vec<Grid>> = requests.iter().map(|_| Vec::new()).collect();
    let (bins, cols) = (frontend.audio.warped_bins, frontend.audio.frames());
    let live: Vec<usize> = (0..requests.len()).filter(|&i| !requests[i].picks.is_empty()).collect();
    for chunk in live.chunks(EVAL_CHUNK) {
        let mut frames = Vec::new();
        let mut specs = Vec::new();
        let mut objects = Vec::new();
        for (m, &ri) in chunk.iter().enumerate() {
            let r = &requests[ri];
            let base = frames.len();
            frames.extend(r.frames.iter().copied());
            specs.extend(frontend.network_input(r.mixture)?.data.into_iter().map(T::lit));
            for &(f, class) in &r.picks {
                if f >= r.frames.len() || class >= model.arch.classes {
                    return Err(data_err(format!("pick (frame {f}, class {class}) out of range")));
                }
                objects.push(Object { frame: base + f, class, mixture: m });
            }
        }
        let input = BatchInput {
            frames: frames_array(&frames)?,
            specs: Array::new([chunk.len(), 1, bins, cols], specs)?,
            objects,
        };
        let mut g = Graph::with_params(&model.store, Mode::Eval, 0);
        let fwd = model.forward(&mut g, &input)?;
        let logits = g.value(fwd.logits).data();
        let plane = bins * cols;
        let mut o = 0;
        for &ri in chunk {
            for _ in &requests[ri].picks {
                let data = logits[o * plane..(o + 1) * plane].iter().map(|v| sigmoid(v.as_f64())).collect();
                out[ri].push(Grid::new(bins, cols, data)?);
                o += 1;
            }
        }
    }
    Ok(out)
}

/// One separated source.
#[derive(Clone, Debug)]
pub struct SeparatedSource {
    pub class: usize,
    pub probability: f64,
    /// Predicted mask on the warped axis.
    pub warped_mask: Grid,
    /// Mask on the linear axis as applied to the mixture.
    pub linear_mask: Grid,
    pub waveform: Waveform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeparationStatus {
    Ok,
    /// No class reached the threshold, so nothing was separated.
    NothingDetected,
}

#[derive(Clone, Debug)]
pub struct Separation {
    pub status: SeparationStatus,
    pub probabilities: Vec<f64>,
    pub sources: Vec<SeparatedSource>,
}

/// Detects the classes visible in `frame` and separates one waveform per
/// detected class from `mixture`.
pub fn separate<T: Real>(
    model: &Model<T>,
    frontend: &Frontend,
    frame: &Image,
    mixture: &Waveform,
    tau: f64,
) -> Result<Separation> {
    let probabilities = class_probabilities(model, &[frame])?.remove(0);
    let classes = detected(&probabilities, tau);
    if classes.is_empty() {
        frontend.check_len(mixture)?;
        return Ok(Separation { status: SeparationStatus::NothingDetected, probabilities, sources: Vec::new() });
    }
    let sources = separate_classes(model, frontend, frame, mixture, &classes)?
        .into_iter()
        .map(|s| SeparatedSource { probability: probabilities[s.class], ..s })
        .collect();
    Ok(Separation { status: SeparationStatus::Ok, probabilities, sources })
}

/// Separates the given classes from `mixture` without detection.
pub fn separate_classes<T: Real>(
    model: &Model<T>,
    frontend: &Frontend,
    frame: &Image,
    mixture: &Waveform,
    classes: &[usize],
) -> Result<Vec<SeparatedSource>> {
    let spec = frontend.spectrogram(mixture)?;
    let req = MaskRequest { frames: vec![frame], mixture: &spec, picks: classes.iter().map(|&c| (0, c)).collect() };
    let masks = predict_masks(model, frontend, &[req])?.remove(0);
    classes
        .iter()
        .zip(masks)
        .map(|(&class, warped_mask)| {
            let linear_mask = frontend.linear_mask(&warped_mask)?;
            let waveform = frontend.resynthesize(&spec, &linear_mask)?;
            Ok(SeparatedSource { class, probability: f64::NAN, warped_mask, linear_mask, waveform })
        })
        .collect()
}

/// Exact-match multi-label accuracy (in percent) of the `split` frames at
/// each threshold.
pub fn evaluate_classification<T: Real>(model: &Model<T>, clips: &[Clip], split: Split, taus: &[f64]) -> Result<Vec<f64>> {
    let picked: Vec<&Clip> = clips.iter().filter(|c| c.split == split).collect();
    if picked.is_empty() {
        return Err(data_err(format!("{} split is empty", split.name())));
    }
    let frames: Vec<&Image> = picked.iter().map(|c| &c.frame).collect();
    let probs = class_probabilities(model, &frames)?;
    Ok(taus
        .iter()
        .map(|&tau| {
            let hits = picked
                .iter()
                .zip(&probs)
                .filter(|(clip, p)| {
                    let mut want = clip.classes.clone();
                    want.sort_unstable();
                    detected(p, tau) == want
                })
                .count();
            100.0 * hits as f64 / picked.len() as f64
        })
        .collect())
}

/// `model,0.1,...` header followed by one row per named model.
pub fn classification_csv(taus: &[f64], rows: &[(String, Vec<f64>)]) -> String {
    let mut s = String::from("model");
    for t in taus {
        write!(s, ",{t}").unwrap();
    }
    s.push('\n');
    for (name, acc) in rows {
        s.push_str(name);
        for a in acc {
            write!(s, ",{a:.2}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Fixed test mixtures with their cached projectors, so several models are
/// scored against identical pairs without refactoring the Gram matrices.
pub struct EvalSet {
    pub items: Vec<MixItem>,
    pub specs: Vec<ComplexSpectrogram>,
    pub projectors: Vec<BssProjector>,
    pub baseline: ModeReport,
}

impl EvalSet {
    /// Draws `count` class-disjoint mixtures from `split` with a dedicated
    /// pairing stream of `seed`.
    pub fn build(
        clips: &[Clip],
        split: Split,
        count: usize,
        duet_fraction: f64,
        seed: u64,
        frontend: &Frontend,
        filter_len: usize,
    ) -> Result<Self> {
        let pool: Vec<usize> = (0..clips.len()).filter(|&i| clips[i].split == split).collect();
        if pool.is_empty() {
            return Err(data_err(format!("{} split is empty", split.name())));
        }
        if count == 0 {
            return Err(data_err("evaluation needs at least one mixture"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(11);
        let items: Vec<MixItem> =
            (0..count).map(|_| sample_mix_pair(clips, &pool, duet_fraction, &mut rng)).collect::<Result<_>>()?;
        let specs = items.iter().map(|it| frontend.spectrogram(&it.mixture)).collect::<Result<Vec<_>>>()?;
        let projectors =
            items.iter().map(|it| BssProjector::new(&it.references(), filter_len)).collect::<std::result::Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        for (item, proj) in items.iter().zip(&projectors) {
            for (j, src) in item.sources.iter().enumerate() {
                let metrics = proj.score(&item.mixture.samples, j)?;
                rows.push(SourceRow { clip_id: item.id(clips), source_class: src.class, metrics, permutation: j.to_string() });
            }
        }
        let baseline = ModeReport { mode: EvalMode::Baseline, rows, misses: 0, false_alarms: 0 };
        Ok(Self { items, specs, projectors, baseline })
    }

    pub fn from_config(cfg: &TrainConfig, clips: &[Clip], frontend: &Frontend) -> Result<Self> {
        Self::build(clips, Split::Test, cfg.eval_mixtures, cfg.duet_fraction, cfg.seed, frontend, cfg.filter_len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Conditioned on ground-truth classes.
    Protocol,
    /// Conditioned on classes detected at the threshold.
    Deployment,
    /// Every class treated as present; each source is estimated as the sum
    /// of all class outputs of its frame.
    AllClasses,
    /// The mixture itself as every estimate.
    Baseline,
    /// Ideal masks computed from the clean stems.
    Oracle(OracleMask),
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Protocol => "protocol",
            EvalMode::Deployment => "deployment",
            EvalMode::AllClasses => "all-classes",
            EvalMode::Baseline => "baseline",
            EvalMode::Oracle(k) => k.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceRow {
    pub clip_id: String,
    pub source_class: usize,
    pub metrics: Metrics,
    /// Estimate index matched to this source.
    pub permutation: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeReport {
    pub mode: EvalMode,
    pub rows: Vec<SourceRow>,
    /// Ground-truth sources with no detection in their frame.
    pub misses: usize,
    /// Detections of classes absent from their frame.
    pub false_alarms: usize,
}

impl ModeReport {
    /// Mean SDR, SIR and SAR over scored rows; zeros when nothing was scored.
    pub fn mean(&self) -> Metrics {
        let n = self.rows.len().max(1) as f64;
        let sum = |f: fn(&Metrics) -> f64| self.rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        Metrics { sdr: sum(|m| m.sdr), sir: sum(|m| m.sir), sar: sum(|m| m.sar) }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("clip_id,source_class,SDR,SIR,SAR,permutation\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{:.4},{:.4},{:.4},{}",
                r.clip_id, r.source_class, r.metrics.sdr, r.metrics.sir, r.metrics.sar, r.permutation
            )
            .unwrap();
        }
        s
    }
}

/// Separation scores of one model in every mode, plus the shared baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationReport {
    pub model: String,
    pub protocol: ModeReport,
    pub deployment: ModeReport,
    pub all_classes: ModeReport,
    pub baseline: ModeReport,
}

impl SeparationReport {
    pub fn modes(&self) -> [&ModeReport; 4] {
        [&self.protocol, &self.deployment, &self.all_classes, &self.baseline]
    }
}

/// `model,mode,sources,misses,false_alarms,SDR,SIR,SAR` over several reports.
pub fn summary_csv(reports: &[SeparationReport]) -> String {
    let mut s = String::from("model,mode,sources,misses,false_alarms,SDR,SIR,SAR\n");
    for r in reports {
        for m in r.modes() {
            let mean = m.mean();
            writeln!(
                s,
                "{},{},{},{},{},{:.4},{:.4},{:.4}",
                r.model,
                m.mode.name(),
                m.rows.len(),
                m.misses,
                m.false_alarms,
                mean.sdr,
                mean.sir,
                mean.sar
            )
            .unwrap();
        }
    }
    s
}

fn sum_waves(waves: &[&Waveform]) -> Waveform {
    let mut out = waves[0].clone();
    for w in &waves[1..] {
        for (a, b) in out.samples.iter_mut().zip(&w.samples) {
            *a += b;
        }
    }
    out
}

/// Scores `model` on every mixture of `set` in all modes.
pub fn evaluate_separation<T: Real>(
    model: &Model<T>,
    name: &str,
    frontend: &Frontend,
    clips: &[Clip],
    set: &EvalSet,
    tau: f64,
) -> Result<SeparationReport> {
    let classes = model.arch.classes;
    let frames_of = |item: &MixItem| -> Vec<&Image> { item.clips.iter().map(|&c| &clips[c].frame).collect() };
    let to_wave = |spec: &ComplexSpectrogram, mask: &Grid| -> Result<Waveform> {
        frontend.resynthesize(spec, &frontend.linear_mask(mask)?)
    };

    // Protocol: ground-truth (frame, class) picks.
    let requests: Vec<MaskRequest> = set
        .items
        .iter()
        .zip(&set.specs)
        .map(|(item, spec)| MaskRequest {
            frames: frames_of(item),
            mixture: spec,
            picks: item.sources.iter().map(|s| (s.slot, s.class)).collect(),
        })
        .collect();
    let masks = predict_masks(model, frontend, &requests)?;
    let mut protocol = Vec::new();
    for (((item, spec), proj), m) in set.items.iter().zip(&set.specs).zip(&set.projectors).zip(&masks) {
        let est: Vec<Vec<f64>> = m.iter().map(|g| to_wave(spec, g).map(|w| w.samples)).collect::<Result<_>>()?;
        let rep = proj.evaluate(&est)?;
        for (j, src) in item.sources.iter().enumerate() {
            protocol.push(SourceRow {
                clip_id: item.id(clips),
                source_class: src.class,
                metrics: rep.metrics[j],
                permutation: rep.permutation[j].to_string(),
            });
        }
    }

    // Deployment: detect per frame, score each detected ground-truth source.
    let all_frames: Vec<&Image> = set.items.iter().flat_map(frames_of).collect();
    let probs = class_probabilities(model, &all_frames)?;
    let mut requests = Vec::new();
    for (i, (item, spec)) in set.items.iter().zip(&set.specs).enumerate() {
        let mut picks = Vec::new();
        for slot in 0..2 {
            picks.extend(detected(&probs[2 * i + slot], tau).into_iter().map(|c| (slot, c)));
        }
        requests.push(MaskRequest { frames: frames_of(item), mixture: spec, picks });
    }
    let masks = predict_masks(model, frontend, &requests)?;
    let (mut deployment, mut misses, mut false_alarms) = (Vec::new(), 0, 0);
    for (((item, spec), proj), (req, m)) in
        set.items.iter().zip(&set.specs).zip(&set.projectors).zip(requests.iter().zip(&masks))
    {
        for &(slot, class) in &req.picks {
            if !item.sources.iter().any(|s| s.slot == slot && s.class == class) {
                false_alarms += 1;
            }
        }
        for (j, src) in item.sources.iter().enumerate() {
            match req.picks.iter().position(|&p| p == (src.slot, src.class)) {
                None => misses += 1,
                Some(k) => deployment.push(SourceRow {
                    clip_id: item.id(clips),
                    source_class: src.class,
                    metrics: proj.score(&to_wave(spec, &m[k])?.samples, j)?,
                    permutation: k.to_string(),
                }),
            }
        }
    }

    // All classes: every class of each frame, summed per frame.
    let requests: Vec<MaskRequest> = set
        .items
        .iter()
        .zip(&set.specs)
        .map(|(item, spec)| MaskRequest {
            frames: frames_of(item),
            mixture: spec,
            picks: (0..2).flat_map(|slot| (0..classes).map(move |c| (slot, c))).collect(),
        })
        .collect();
    let masks = predict_masks(model, frontend, &requests)?;
    let mut all_classes = Vec::new();
    for (((item, spec), proj), m) in set.items.iter().zip(&set.specs).zip(&set.projectors).zip(&masks) {
        let waves: Vec<Waveform> = m.iter().map(|g| to_wave(spec, g)).collect::<Result<_>>()?;
        let per_frame: Vec<Waveform> = (0..2)
            .map(|slot| sum_waves(&waves[slot * classes..(slot + 1) * classes].iter().collect::<Vec<_>>()))
            .collect();
        for (j, src) in item.sources.iter().enumerate() {
            all_classes.push(SourceRow {
                clip_id: item.id(clips),
                source_class: src.class,
                metrics: proj.score(&per_frame[src.slot].samples, j)?,
                permutation: src.slot.to_string(),
            });
        }
    }

    Ok(SeparationReport {
        model: name.to_string(),
        protocol: ModeReport { mode: EvalMode::Protocol, rows: protocol, misses: 0, false_alarms: 0 },
        deployment: ModeReport { mode: EvalMode::Deployment, rows: deployment, misses, false_alarms },
        all_classes: ModeReport { mode: EvalMode::AllClasses, rows: all_classes, misses: 0, false_alarms: 0 },
        baseline: set.baseline.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMask {
    /// Ideal binary mask on the linear axis.
    Binary,
    /// Ideal ratio mask on the linear axis.
    Ratio,
    /// Ideal binary mask built on the warped axis and unwarped, the best a
    /// model predicting warped masks can do.
    WarpedBinary,
    WarpedRatio,
}

impl OracleMask {
    pub const ALL: [OracleMask; 4] = [OracleMask::Binary, OracleMask::Ratio, OracleMask::WarpedBinary, OracleMask::WarpedRatio];

    pub fn name(self) -> &'static str {
        match self {
            OracleMask::Binary => "ibm",
            OracleMask::Ratio => "irm",
            OracleMask::WarpedBinary => "ibm-warped",
            OracleMask::WarpedRatio => "irm-warped",
        }
    }
}

/// Ideal masks for each source of `item`, on the linear axis.
pub fn oracle_masks(item: &MixItem, frontend: &Frontend, kind: OracleMask) -> Result<Vec<Grid>> {
    let mags: Vec<Grid> = item
        .sources
        .iter()
        .map(|s| frontend.spectrogram(&s.stem).map(|sp| sp.magnitude()))
        .collect::<Result<_>>()?;
    let warped = matches!(kind, OracleMask::WarpedBinary | OracleMask::WarpedRatio);
    let mags: Vec<Grid> = if warped { mags.iter().map(|m| Ok(frontend.map.warp(m)?)).collect::<Result<_>>()? } else { mags };
    let refs: Vec<&Grid> = mags.iter().collect();
    (0..mags.len())
        .map(|j| {
            let m = match kind {
                OracleMask::Binary | OracleMask::WarpedBinary => {
                    let others: Vec<&Grid> = (0..refs.len()).filter(|&i| i != j).map(|i| refs[i]).collect();
                    gt_binary_mask(refs[j], &others)
                }
                OracleMask::Ratio | OracleMask::WarpedRatio => gt_ratio_mask(refs[j], &refs),
            };
            if warped {
                frontend.linear_mask(&m)
            } else {
                Ok(m)
            }
        })
        .collect()
}

/// Scores ideal masks of one kind on every mixture of `set`.
pub fn evaluate_oracle(frontend: &Frontend, clips: &[Clip], set: &EvalSet, kind: OracleMask) -> Result<ModeReport> {
    let mut rows = Vec::new();
    for ((item, spec), proj) in set.items.iter().zip(&set.specs).zip(&set.projectors) {
        let est: Vec<Vec<f64>> = oracle_masks(item, frontend, kind)?
            .iter()
            .map(|m| frontend.resynthesize(spec, m).map(|w| w.samples))
            .collect::<Result<_>>()?;
        for (j, src) in item.sources.iter().enumerate() {
            rows.push(SourceRow {
                clip_id: item.id(clips),
                source_class: src.class,
                metrics: proj.score(&est[j], j)?,
                permutation: j.to_string(),
            });
        }
    }
    Ok(ModeReport { mode: EvalMode::Oracle(kind), rows, misses: 0, false_alarms: 0 })
}
