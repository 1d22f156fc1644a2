//! Flag-grid runs sharing pre-training across rows.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{evaluate_generation, GenerationMetrics, RetrievalMetrics};
use crate::error::Result;
use crate::sketch::RasterImage;
use crate::trainer::{
    joint_train, AblationFlags, JointState, MetricSink, Pretrained, TrainConfig, TrainData,
};

const VANILLA: AblationFlags = AblationFlags {
    iw: false,
    tr: false,
    at: true,
    jt: false,
};

/// One requested configuration: the four switches plus whether unlabelled
/// photos are used at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRow {
    pub flags: AblationFlags,
    pub semi_supervised: bool,
}

impl GridRow {
    pub const FULL: Self = Self {
        flags: AblationFlags::FULL,
        semi_supervised: true,
    };
    /// Pseudo pairs used without weighting, distillation or joint training.
    pub const VANILLA_SSL: Self = Self {
        flags: VANILLA,
        semi_supervised: true,
    };
    /// Labelled pairs only. Only the attention switch is kept on, so the
    /// row shares pre-training with the full method.
    pub const SUPERVISED: Self = Self {
        flags: VANILLA,
        semi_supervised: false,
    };

    pub fn label(&self) -> String {
        if !self.semi_supervised {
            return "supervised".into();
        }
        if self.flags == VANILLA {
            return "vanilla-ssl".into();
        }
        self.flags.label()
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            flags: self.flags,
            semi_supervised: self.semi_supervised,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub row: GridRow,
    pub label: String,
    pub retrieval: RetrievalMetrics,
    /// Judged by the frozen teacher.
    pub generation: GenerationMetrics,
}

/// Pre-trained models keyed by the only flag pre-training depends on.
#[derive(Default)]
pub struct PretrainCache {
    with_attention: Option<Pretrained>,
    flat: Option<Pretrained>,
}

impl PretrainCache {
    pub fn get(
        &mut self,
        data: &TrainData,
        cfg: &TrainConfig,
        sink: &mut dyn MetricSink,
    ) -> Result<Pretrained> {
        let at = cfg.flags.at;
        let other = if at { &self.flat } else { &self.with_attention };
        let slot_empty = if at {
            self.with_attention.is_none()
        } else {
            self.flat.is_none()
        };
        if slot_empty {
            // retrieval pre-training ignores the generator, so reuse it
            let pre = match other {
                Some(o) => {
                    let mut g = crate::generator::Generator::new(
                        cfg.effective_generator(),
                        crate::rng::derive_seed(cfg.seed, crate::rng::purpose::INIT_GENERATOR, 0),
                    )?;
                    let mut adam = crate::optim::Adam::new(cfg.adam(cfg.lr_generator), &g.store);
                    crate::trainer::pretrain_generator(&mut g, &mut adam, data, cfg, sink)?;
                    Pretrained {
                        generator: g,
                        generator_adam: adam,
                        ..o.clone()
                    }
                }
                None => Pretrained::run(data, cfg, sink)?,
            };
            *(if at {
                &mut self.with_attention
            } else {
                &mut self.flat
            }) = Some(pre);
        }
        Ok(if at {
            self.with_attention.clone()
        } else {
            self.flat.clone()
        }
        .expect("filled above"))
    }
}

/// Train and evaluate one row from cached pre-training.
pub fn run_row(
    data: &TrainData,
    base: &TrainConfig,
    row: GridRow,
    cache: &mut PretrainCache,
    sink: &mut dyn MetricSink,
) -> Result<(AblationRow, JointState)> {
    let cfg = row.apply(base);
    let pre = cache.get(data, &cfg, sink)?;
    let mut state = JointState::new(pre, &cfg)?;
    joint_train(&mut state, data, &cfg, cfg.cycles, sink)?;
    let retrieval = state.evaluate(data)?;
    let photos: Vec<&RasterImage> = data.test.iter().map(|p| &p.photo).collect();
    let sketches: Vec<&RasterImage> = data.test.iter().map(|p| &p.raster).collect();
    let ids: Vec<String> = data.test.iter().map(|p| p.id.clone()).collect();
    let generation = evaluate_generation(
        &state.models.generator,
        state.models.teacher.model(),
        &photos,
        &sketches,
        &ids,
        &data.raster,
    )?;
    Ok((
        AblationRow {
            row,
            label: row.label(),
            retrieval,
            generation,
        },
        state,
    ))
}

/// One row per requested configuration, in request order.
pub fn ablation_grid(
    data: &TrainData,
    base: &TrainConfig,
    rows: &[GridRow],
    sink: &mut dyn MetricSink,
) -> Result<Vec<AblationRow>> {
    let mut cache = PretrainCache::default();
    rows.iter()
        .map(|&r| run_row(data, base, r, &mut cache, sink).map(|x| x.0))
        .collect()
}
