//! Seven-arm ablation: each arm refits fusion weights and retunes decoding
//! on the tuning split, then decodes and scores the evaluation split.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use evdecode_core::decode::{DecodeConfig, DecodeStages};
use evdecode_core::fusion::FusionMode;
use evdecode_core::tuning::TuneOptions;
use evdecode_core::LabelSpace;

use crate::pipeline::{self, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    SingleBackbone(u32),
    PerLabelOnly,
    TupleBased,
    UniformFusion,
    WeightedBackboneUniformModel,
    Full,
}

impl Arm {
    /// Table order.
    pub fn all(backbones: &[u32]) -> Vec<Arm> {
        let mut arms: Vec<Arm> = backbones.iter().map(|&b| Arm::SingleBackbone(b)).collect();
        arms.extend([
            Arm::PerLabelOnly,
            Arm::TupleBased,
            Arm::UniformFusion,
            Arm::WeightedBackboneUniformModel,
            Arm::Full,
        ]);
        arms
    }

    pub fn parse(name: &str, backbone: Option<u32>) -> Result<Arm> {
        Ok(match name {
            "full" => Arm::Full,
            "per-label-only" => Arm::PerLabelOnly,
            "tuple-based" => Arm::TupleBased,
            "uniform-fusion" => Arm::UniformFusion,
            "weighted-backbone-uniform-model" => Arm::WeightedBackboneUniformModel,
            "single-backbone" => Arm::SingleBackbone(
                backbone.context("arm single-backbone needs --backbone")?,
            ),
            other => anyhow::bail!("unknown arm {other:?}"),
        })
    }

    pub fn label(self) -> String {
        match self {
            Arm::SingleBackbone(b) => format!("single backbone {b}"),
            Arm::PerLabelOnly => "per-label only (no anatomy decoding)".into(),
            Arm::TupleBased => "tuple-based events".into(),
            Arm::UniformFusion => "uniform fusion".into(),
            Arm::WeightedBackboneUniformModel => "weighted backbone, uniform model".into(),
            Arm::Full => "full".into(),
        }
    }

    pub fn fusion_mode(self) -> FusionMode {
        let weighted = |models, backbones| FusionMode {
            weighted_models: models,
            weighted_backbones: backbones,
            backbones: None,
        };
        match self {
            Arm::SingleBackbone(b) => FusionMode {
                backbones: Some(vec![b]),
                ..FusionMode::default()
            },
            Arm::UniformFusion => weighted(false, false),
            Arm::WeightedBackboneUniformModel => weighted(false, true),
            Arm::PerLabelOnly | Arm::TupleBased | Arm::Full => FusionMode::default(),
        }
    }

    pub fn stages(self) -> DecodeStages {
        match self {
            Arm::PerLabelOnly => DecodeStages::PER_LABEL_ONLY,
            Arm::TupleBased => DecodeStages::TUPLE_BASED,
            _ => DecodeStages::FULL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: Arm,
    pub label: String,
    pub map_50: f64,
    pub map_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, arm: Arm) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.arm == arm)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,tmap_50,tmap_95\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.4},{:.4}", r.label, r.map_50, r.map_95);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<width$}  {:>9}  {:>9}\n", "method", "tmAP@0.5", "tmAP@0.95");
        let _ = writeln!(out, "{}", "-".repeat(width + 22));
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>9.4}  {:>9.4}", r.label, r.map_50, r.map_95);
        }
        out
    }
}

/// Scores one arm: fit on `tune_on`, evaluate on `eval_on`.
pub fn run_arm(
    arm: Arm,
    space: &LabelSpace,
    tune_on: &Dataset,
    eval_on: &Dataset,
    base: &DecodeConfig,
    opts: &TuneOptions,
) -> Result<AblationRow> {
    let (weights, _) = pipeline::fit_weights(tune_on, &arm.fusion_mode())
        .with_context(|| format!("fitting fusion weights for arm {}", arm.label()))?;
    let opts = TuneOptions {
        stages: arm.stages(),
        ..opts.clone()
    };
    let report = pipeline::tune(tune_on, &weights, space, base, &opts)
        .with_context(|| format!("tuning arm {}", arm.label()))?;
    let mut weights = weights;
    weights.temperature = report.temperature;
    let fused = pipeline::fuse(&eval_on.streams, &weights)?;
    let events = pipeline::decode(&fused, space, &report.decode, arm.stages())?;
    let eval = pipeline::evaluate(&events, &eval_on.gt_events(), space)?;
    Ok(AblationRow {
        arm,
        label: arm.label(),
        map_50: eval.overall_50(),
        map_95: eval.overall_95(),
    })
}

pub fn run_ablation(
    space: &LabelSpace,
    tune_on: &Dataset,
    eval_on: &Dataset,
    base: &DecodeConfig,
    opts: &TuneOptions,
) -> Result<AblationTable> {
    let backbones: Vec<u32> = {
        let mut b: Vec<u32> = tune_on.streams.all_sources().iter().filter_map(|s| s.backbone()).collect();
        b.sort_unstable();
        b.dedup();
        b
    };
    let rows = Arm::all(&backbones)
        .into_iter()
        .map(|arm| run_arm(arm, space, tune_on, eval_on, base, opts))
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows })
}
