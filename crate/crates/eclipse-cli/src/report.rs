//! JSON report shapes emitted by the CLI, forward-time measurement, and the
//! combined attack report.

use std::time::Instant;

use serde::Serialize;

use eclipse_core::detect::DetectionOutcome;
use eclipse_core::error::Result;
use eclipse_core::eval::{equivalence_report, gen_probes, Equivalence};
use eclipse_core::graph::ModelGraph;
use eclipse_core::tensor::Tensor;
use eclipse_core::watermark::{
    active_verify, verify, SecretKey, SignatureMessage, Strategy, VerificationOutcome,
};

/// One line of the detection report; field set fixed by the report format.
#[derive(Debug, Serialize)]
pub struct LayerReportJson {
    pub index: usize,
    pub kind: &'static str,
    pub f: usize,
    pub r_used: usize,
    pub vol_real: f64,
    pub vol_imag: f64,
    pub flagged: bool,
}

#[derive(Debug, Serialize)]
pub struct DetectionJson {
    pub r: usize,
    pub q: f64,
    pub rule: &'static str,
    pub trim_fraction: f64,
    pub cutoff_real: f64,
    pub cutoff_imag: f64,
    pub flagged: Vec<usize>,
    pub layers: Vec<LayerReportJson>,
}

pub fn detection_json(outcome: &DetectionOutcome) -> DetectionJson {
    DetectionJson {
        r: outcome.window,
        q: outcome.quantile,
        rule: "flag layers in the lowest ceil(q*L) of either volatility score",
        trim_fraction: eclipse_core::detect::TRIM_FRACTION,
        cutoff_real: outcome.cutoff_real,
        cutoff_imag: outcome.cutoff_imag,
        flagged: outcome.flagged.clone(),
        layers: outcome
            .reports
            .iter()
            .map(|r| LayerReportJson {
                index: r.layer_index,
                kind: r.kind,
                f: r.f,
                r_used: r.r_used,
                vol_real: r.vol_real,
                vol_imag: r.vol_imag,
                flagged: r.flagged,
            })
            .collect(),
    }
}

/// Median wall-clock seconds to forward the probe set once.
pub fn median_forward_seconds(model: &ModelGraph, probes: &[Tensor], runs: usize) -> Result<f64> {
    let mut times = Vec::with_capacity(runs.max(1));
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        for probe in probes {
            model.forward(probe)?;
        }
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_unstable_by(|a, b| a.partial_cmp(b).expect("durations are finite"));
    Ok(times[times.len() / 2])
}

#[derive(Debug, Serialize)]
pub struct BenchJson {
    pub probes: usize,
    pub runs: usize,
    pub original_seconds: f64,
    pub obfuscated_seconds: f64,
    pub ratio: f64,
}

/// Outcomes for one scheme before and after obfuscation, for both verifier
/// types.
#[derive(Debug, Serialize)]
pub struct SchemeReport {
    pub scheme: &'static str,
    pub passive_before: VerificationOutcome,
    pub passive_after: VerificationOutcome,
    pub active_before: VerificationOutcome,
    pub active_after: VerificationOutcome,
}

/// The shape of a full experiment: per-scheme confidence collapse, utility
/// agreement, and runtime overhead.
#[derive(Debug, Serialize)]
pub struct AttackReport {
    pub schemes: Vec<SchemeReport>,
    pub utility: Equivalence,
    pub runtime_ratio: f64,
    pub probes: usize,
}

pub fn attack_report(
    original: &ModelGraph,
    obfuscated: &ModelGraph,
    keys: &[(SecretKey, SignatureMessage)],
    probe_count: usize,
    bench_runs: usize,
    seed: u64,
) -> Result<AttackReport> {
    let probes = gen_probes(original.input_shape(), probe_count, seed);
    let utility = equivalence_report(original, obfuscated, &probes)?;
    let bench_probes = gen_probes(original.input_shape(), 32.min(probe_count.max(1)), seed ^ 1);
    let before_s = median_forward_seconds(original, &bench_probes, bench_runs)?;
    let after_s = median_forward_seconds(obfuscated, &bench_probes, bench_runs)?;
    let schemes = keys
        .iter()
        .map(|(key, message)| SchemeReport {
            scheme: key.scheme.name(),
            passive_before: verify(original, key, message, key.delta),
            passive_after: verify(obfuscated, key, message, key.delta),
            active_before: active_verify(original, key, message, key.delta, &Strategy::ALL).best,
            active_after: active_verify(obfuscated, key, message, key.delta, &Strategy::ALL).best,
        })
        .collect();
    Ok(AttackReport {
        schemes,
        utility,
        runtime_ratio: after_s / before_s,
        probes: probe_count,
    })
}

/// JSON-lines event logging on stderr.
pub fn log_event(msg: &str) {
    eprintln!(
        "{}",
        serde_json::json!({ "level": "info", "msg": msg })
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{uniform_mlp, watermark_fixture, WatermarkSpec};
    use eclipse_core::pipeline::{self, Mode, PlanParams};
    use eclipse_core::watermark::SchemeKind;

    #[test]
    fn attack_report_shows_collapse_shape() {
        let base = uniform_mlp(3, 32, 3);
        let spec = WatermarkSpec {
            scheme: SchemeKind::WeightProjection,
            layer: 1,
            bits: 64,
            probes: 0,
            steps: 200,
            rate: 0.05,
            penalty: 1e-3,
        };
        let (wm, key, message, _) = watermark_fixture(&base, &spec, 5).unwrap();
        let out = pipeline::obfuscate(
            &wm,
            Some(&[1]),
            Mode::Base,
            PlanParams::default(),
            11,
        )
        .unwrap();
        let report = attack_report(&wm, &out.model, &[(key, message)], 100, 3, 17).unwrap();
        assert!(report.schemes[0].passive_before.is_verified());
        assert!(matches!(
            report.schemes[0].passive_after,
            VerificationOutcome::NoSignature { .. }
        ));
        // Base obfuscation is output-preserving, so utility is intact and
        // the active verifier can still undo it.
        assert!(report.utility.max_abs_dev < 1e-9);
        assert!(report.schemes[0].active_after.is_verified());
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"passive_after\":{\"outcome\":\"no_signature\""));
    }
}
