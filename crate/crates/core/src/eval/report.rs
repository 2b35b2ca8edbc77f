//! Report assembly and CSV serialization.

use std::path::Path;

use crate::env::Dataset;
use crate::error::Result;
use crate::eval::exit::{ExitOutcome, ExitSweepPoint};
use crate::eval::metrics::{default_weights, metrics, AccuracyCurve};
use crate::eval::traces::{step_accuracies, PolicyMode};
use crate::eval::views::ViewAnalysis;
use crate::nets::ModelParams;

/// Everything one evaluation run produces. The exit and upper-bound blocks
/// are present only when their passes ran.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub mode: PolicyMode,
    pub curve: AccuracyCurve,
    pub m_acc: f64,
    pub w_m_acc: f64,
    pub step2_acc: f64,
    pub exit: Option<ExitOutcome>,
    pub exit_curve: Option<Vec<ExitSweepPoint>>,
    pub upper_bound: Option<Vec<f64>>,
}

/// Runs the accuracy curve under one mode and summarizes it.
pub fn evaluate(
    params: &ModelParams,
    data: &Dataset,
    mode: PolicyMode,
    seeds: &[u64],
) -> Result<EvalReport> {
    let curve = step_accuracies(params, data, mode, seeds)?;
    let weights = default_weights(curve.steps())?;
    let m = metrics(&curve, &weights)?;
    Ok(EvalReport {
        mode,
        curve,
        m_acc: m.m_acc,
        w_m_acc: m.w_m_acc,
        step2_acc: m.step2_acc,
        exit: None,
        exit_curve: None,
        upper_bound: None,
    })
}

pub fn write_curve_csv(path: &Path, curve: &AccuracyCurve) -> Result<()> {
    let mut out = String::from("step,mean_acc,std\n");
    for (i, (m, s)) in curve.mean.iter().zip(&curve.std).enumerate() {
        out.push_str(&format!("{},{m:.6},{s:.6}\n", i + 1));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = String::from("name,value\n");
    out.push_str(&format!("m_acc,{:.6}\n", report.m_acc));
    out.push_str(&format!("w_m_acc,{:.6}\n", report.w_m_acc));
    out.push_str(&format!("step2_acc,{:.6}\n", report.step2_acc));
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_exit_csv(path: &Path, points: &[ExitSweepPoint]) -> Result<()> {
    let mut out = String::from("target_step,mean_step,acc\n");
    for p in points {
        out.push_str(&format!("{:.6},{:.6},{:.6}\n", p.target, p.mean_step, p.accuracy));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_upper_bound_csv(path: &Path, curve: &[f64]) -> Result<()> {
    let mut out = String::from("step,acc\n");
    for (i, a) in curve.iter().enumerate() {
        out.push_str(&format!("{},{a:.6}\n", i + 1));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_view_matrix_csv(path: &Path, analysis: &ViewAnalysis) -> Result<()> {
    let mut out = String::from("view,class,acc\n");
    for (v, row) in analysis.matrix.iter().enumerate() {
        for (c, a) in row.iter().enumerate() {
            out.push_str(&format!("{v},{c},{a:.6}\n"));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::env::{generate_synthetic, SynthConfig};
    use crate::nets::ModelConfig;

    fn setup() -> (ModelParams, Dataset) {
        let cfg = SynthConfig {
            classes: 4,
            groups: 2,
            views: 5,
            feature_dim: 6,
            train_per_class: 1,
            test_per_class: 4,
            ..SynthConfig::default()
        };
        let (_, test) = generate_synthetic(&cfg).unwrap();
        let model = ModelConfig { feature_dim: 6, hidden_dim: 8, classes: 4, views: 5, mlp_width: 10 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (ModelParams::init(model, &mut rng).unwrap(), test)
    }

    #[test]
    fn summaries_restate_the_curve() {
        let (params, test) = setup();
        let report = evaluate(&params, &test, PolicyMode::Random, &[0, 1, 2]).unwrap();
        let mean: f64 = report.curve.mean.iter().sum::<f64>() / 5.0;
        assert!((report.m_acc - mean).abs() < 1e-12);
        assert_eq!(report.step2_acc.to_bits(), report.curve.mean[1].to_bits());
        assert_eq!(report.curve.seeds, 3);
        assert!(report.exit.is_none() && report.upper_bound.is_none());
    }

    #[test]
    fn csv_blocks_have_the_documented_shapes() {
        let (params, test) = setup();
        let report = evaluate(&params, &test, PolicyMode::Active, &[0]).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let curve_path = dir.path().join("curve.csv");
        write_curve_csv(&curve_path, &report.curve).unwrap();
        let text = std::fs::read_to_string(&curve_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,mean_acc,std");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("1,"));

        let metrics_path = dir.path().join("metrics.csv");
        write_metrics_csv(&metrics_path, &report).unwrap();
        let text = std::fs::read_to_string(&metrics_path).unwrap();
        assert!(text.starts_with("name,value\nm_acc,"));
        assert_eq!(text.lines().count(), 4);

        let ub_path = dir.path().join("upper_bound.csv");
        write_upper_bound_csv(&ub_path, &[0.25, 0.5, 0.75]).unwrap();
        let text = std::fs::read_to_string(&ub_path).unwrap();
        assert_eq!(text, "step,acc\n1,0.250000\n2,0.500000\n3,0.750000\n");
    }
}
