//! The 64-bit finite-difference suite: every tensor op, then the three
//! training objectives end to end through the whole tiny model.

use avsep_tensor::gradcheck::{grad_check_params, op_suite, OpCheck};
use avsep_tensor::{Graph, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{CorpusCounts, MaskKind, Preset, TrainConfig};
use crate::corpus::generate_clips;
use crate::error::{AvError, Result};
use crate::frontend::Frontend;
use crate::mixing::{prepare_batch, sample_mix_pair, ClipCache};
use crate::model::Model;

/// Relative-error bound every check must meet.
pub const GRAD_TOL: f64 = 1e-5;
const STEP: f64 = 1e-6;

/// Which objective an end-to-end check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Classification loss of both frames of each mixture.
    Classification,
    BinarySeparation,
    RatioSeparation,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Classification, Objective::BinarySeparation, Objective::RatioSeparation];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Classification => "end_to_end/c_loss",
            Objective::BinarySeparation => "end_to_end/binary_bce",
            Objective::RatioSeparation => "end_to_end/ratio_l1",
        }
    }
}

/// Checks one objective against every parameter of a tiny model on a
/// two-mixture batch. `per_tensor` limits the coordinates tried per tensor.
pub fn end_to_end_check(objective: Objective, seed: u64, per_tensor: Option<usize>) -> Result<OpCheck> {
    let cfg = TrainConfig {
        preset: Preset::Tiny,
        classes: 3,
        mask: if objective == Objective::RatioSeparation { MaskKind::Ratio } else { MaskKind::Binary },
        corpus: CorpusCounts { train: 2, val: 0, test: 0, duets: 0 },
        seed,
        ..TrainConfig::default()
    };
    let frontend = Frontend::new(&cfg.audio())?;
    let clips = generate_clips(&cfg.audio(), cfg.arch().frame_size, cfg.classes, &cfg.corpus, seed)?;
    let pool: Vec<usize> = (0..clips.len()).collect();
    let cache = clips.iter().map(|c| ClipCache::build(c, &frontend).map(Some)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..2).map(|_| sample_mix_pair(&clips, &pool, 0.0, &mut rng)).collect::<Result<Vec<_>>>()?;
    let batch = prepare_batch::<f64>(&items, &clips, &cache, &frontend, cfg.classes, cfg.mask)?;
    let mut model = Model::<f64>::new(&cfg.arch(), seed)?;
    // The graph carries the parameters, so the layers can be borrowed while
    // the checker perturbs the store.
    let mut store = std::mem::take(&mut model.store);
    let report = grad_check_params(
        &mut store,
        |g: &mut Graph<'_, f64>| {
            let l = model.losses(g, &batch.input, &batch.labels, &batch.gt, cfg.mask, 1.0).map_err(|e| match e {
                AvError::Tensor(t) => t,
                other => TensorError::InvalidArgument { op: "losses", detail: other.to_string() },
            })?;
            Ok(match objective {
                Objective::Classification => g.add(l.c_first, l.c_second)?,
                _ => l.sep,
            })
        },
        STEP,
        per_tensor,
        seed,
    )
    ?;
    Ok(OpCheck { name: objective.name().to_string(), max_rel_err: report.max_rel_err })
}

/// Every op check followed by the three end-to-end objectives.
pub fn gradient_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut out = op_suite()?;
    for o in Objective::ALL {
        out.push(end_to_end_check(o, seed, None)?);
    }
    Ok(out)
}
