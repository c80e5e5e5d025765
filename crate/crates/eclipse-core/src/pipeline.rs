//! Whole-model orchestration: pick target layers (detected or all), dispatch
//! the kind- and mode-appropriate transform per layer, and collect the
//! transform log.
//!
//! Targets are processed back to front so a merge never consumes a layer
//! that is still waiting for its own transform, and index shifts from
//! splits never touch pending targets. Per-layer seeds derive from the
//! master seed and the original layer index, so adding a target leaves the
//! other layers' randomness untouched.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::obfuscate::conv::{advanced_obfuscate_conv, base_obfuscate_conv};
use crate::obfuscate::linear::{advanced_obfuscate_linear, base_obfuscate_linear, LinearObfOptions};
use crate::obfuscate::{FrameSpec, LambdaRange, NoiseConfig, TransformRecord};
use crate::rng;

/// Base transforms preserve outputs exactly; advanced transforms defeat undo
/// attempts at a small utility cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    Base,
    Advanced,
}

/// Per-layer transform parameters shared across the run.
#[derive(Debug, Clone)]
pub struct PlanParams {
    /// Split width for linear layers; `None` means twice the output dim.
    pub h: Option<usize>,
    pub relu_camouflage: bool,
    pub frame: FrameSpec,
    pub noise: NoiseConfig,
    pub lambda: LambdaRange,
}

impl Default for PlanParams {
    fn default() -> Self {
        PlanParams {
            h: None,
            relu_camouflage: false,
            frame: FrameSpec::default(),
            noise: NoiseConfig::default(),
            lambda: LambdaRange::default(),
        }
    }
}

/// A resolved run: which layers to transform, how, and under which seed.
#[derive(Debug, Clone)]
pub struct ObfuscationPlan {
    pub targets: Vec<usize>,
    pub mode: Mode,
    pub params: PlanParams,
    pub master_seed: u64,
}

/// Resolve a target list against the model. An empty or absent detection
/// list means every eligible layer: no detector output obfuscates the whole
/// model.
pub fn plan(
    model: &ModelGraph,
    detection: Option<&[usize]>,
    mode: Mode,
    params: PlanParams,
    master_seed: u64,
) -> Result<ObfuscationPlan> {
    let targets = match detection {
        Some(list) if !list.is_empty() => {
            for &index in list {
                let eligible = model
                    .layer(index)
                    .map(|l| l.is_eligible())
                    .unwrap_or(false);
                if !eligible {
                    return Err(Error::NotEligible { layer: index });
                }
            }
            let mut list = list.to_vec();
            list.sort_unstable();
            list.dedup();
            list
        }
        _ => model.eligible_layers(),
    };
    Ok(ObfuscationPlan {
        targets,
        mode,
        params,
        master_seed,
    })
}

/// Result of a pipeline run: the rewritten model and its transform log,
/// ordered by layer index.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: ModelGraph,
    pub log: Vec<TransformRecord>,
}

/// Execute every transform in the plan. All-or-nothing: any layer error
/// aborts the run and surfaces with the layer index attached.
pub fn run(model: &ModelGraph, plan: &ObfuscationPlan) -> Result<RunOutput> {
    let mut current = model.clone();
    let mut log = Vec::with_capacity(plan.targets.len());
    for &index in plan.targets.iter().rev() {
        let seed = rng::derive_seed(plan.master_seed, index as u64);
        let node = current.layer(index).ok_or(Error::NotEligible { layer: index })?;
        let (next, record) = match (node.kind(), plan.mode) {
            ("linear", Mode::Base) => {
                let opts = LinearObfOptions {
                    h: plan.params.h,
                    relu_camouflage: plan.params.relu_camouflage,
                };
                base_obfuscate_linear(&current, index, &opts, seed)
            }
            ("linear", Mode::Advanced) => {
                let opts = LinearObfOptions {
                    h: plan.params.h,
                    relu_camouflage: plan.params.relu_camouflage,
                };
                advanced_obfuscate_linear(&current, index, &opts, seed)
            }
            ("conv", Mode::Base) => base_obfuscate_conv(&current, index, &plan.params.frame),
            ("conv", Mode::Advanced) => advanced_obfuscate_conv(
                &current,
                index,
                &plan.params.frame,
                &plan.params.noise.clone().with_seed(seed),
                &plan.params.lambda,
            ),
            _ => Err(Error::NotEligible { layer: index }),
        }
        .map_err(|e| match e {
            Error::AtLayer { .. } => e,
            other => other.at_layer(index),
        })?;
        current = next;
        log.push(record);
    }
    current.validate()?;
    log.reverse();
    Ok(RunOutput {
        model: current,
        log,
    })
}

/// Plan and run in one call.
pub fn obfuscate(
    model: &ModelGraph,
    detection: Option<&[usize]>,
    mode: Mode,
    params: PlanParams,
    master_seed: u64,
) -> Result<RunOutput> {
    let plan = plan(model, detection, mode, params, master_seed)?;
    run(model, &plan)
}
