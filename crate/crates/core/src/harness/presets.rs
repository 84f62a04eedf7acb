use std::f64::consts::PI;

use super::{CorrelationSpec, ExperimentSpec, Layout, Method, SourceSpec, Sweep, SweepVariable};
use crate::geometry::ArrayGeometry;
use crate::mesa::SolverConfig;

const EXP2_FREQS: [f64; 7] = [-0.43, -0.28, -0.21, -0.05, 0.1, 0.26, 0.42];

fn range(start: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start + step * i as f64).collect()
}

fn base(name: &str, geometry: ArrayGeometry, snapshots: usize, sweep: Sweep, sources: SourceSpec, methods: Vec<Method>) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        geometry,
        snapshots,
        snr_db: 10.0,
        n_runs: 200,
        base_seed: 0,
        methods,
        success_threshold: 0.01,
        sweep,
        sources,
        solver: SolverConfig::default(),
    }
}

fn fixed(freqs: &[f64]) -> SourceSpec {
    SourceSpec { layout: Layout::Fixed { freqs: freqs.to_vec() }, powers: None, correlations: vec![] }
}

fn snr_sweep() -> Sweep {
    Sweep { variable: SweepVariable::SnrDb, values: range(-10.0, 5.0, 7) }
}

fn coherent_pair() -> SourceSpec {
    SourceSpec {
        correlations: vec![CorrelationSpec { i: 0, j: 1, modulus: Some(1.0), phase: PI / 3.0 }],
        ..fixed(&[-0.2, -0.1, 0.2])
    }
}

/// The seven simulation setups, each with 200 runs.
pub fn presets() -> Vec<ExperimentSpec> {
    use Method::*;
    let all_sla = vec![Mesa, Mesa1, SsMusic];
    // three grid points of the 2N - 1 = 19 point grid on [-1/2, 1/2)
    let grid: Vec<f64> = [5.0, 7.0, 18.0].iter().map(|g| -0.5 + (g - 1.0) / 19.0).collect();
    vec![
        base(
            "exp1",
            ArrayGeometry::ula10(),
            100,
            Sweep { variable: SweepVariable::SnrDb, values: vec![10.0] },
            fixed(&grid),
            vec![Mesa, Mesa1, Rootmusic],
        ),
        base("exp2", ArrayGeometry::mra6(), 200, snr_sweep(), fixed(&EXP2_FREQS), all_sla.clone()),
        base(
            "exp3",
            ArrayGeometry::mra6(),
            100,
            Sweep { variable: SweepVariable::K, values: range(2.0, 1.0, 12) },
            SourceSpec { layout: Layout::Uniform { start: -0.44, span: 0.98, k: None }, powers: None, correlations: vec![] },
            all_sla.clone(),
        ),
        base(
            "exp4",
            ArrayGeometry::mra6(),
            100,
            Sweep { variable: SweepVariable::Separation, values: range(0.001, 0.002, 15) },
            SourceSpec { layout: Layout::Pair { freqs: vec![-0.2, 0.1], anchor: 1, separation: None }, powers: None, correlations: vec![] },
            all_sla.clone(),
        ),
        base("exp5", ArrayGeometry::nested8(), 100, snr_sweep(), coherent_pair(), all_sla.clone()),
        base("exp6", ArrayGeometry::mra6(), 100, snr_sweep(), coherent_pair(), all_sla.clone()),
        base(
            "exp7",
            ArrayGeometry::mra6(),
            200,
            Sweep { variable: SweepVariable::Rho, values: range(0.0, 0.1, 11).into_iter().map(|v| (v * 10.0).round() / 10.0).collect() },
            SourceSpec {
                correlations: vec![CorrelationSpec { i: 0, j: 3, modulus: None, phase: PI / 4.0 }],
                ..fixed(&EXP2_FREQS)
            },
            all_sla,
        ),
    ]
}

pub fn preset(name: &str) -> Option<ExperimentSpec> {
    presets().into_iter().find(|p| p.name == name)
}

pub fn preset_names() -> Vec<String> {
    presets().into_iter().map(|p| p.name).collect()
}
