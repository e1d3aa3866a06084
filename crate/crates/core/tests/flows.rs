use std::time::Instant;

use tofflow_core::itof::{SensorConfig, Taps};
use tofflow_core::losses::{evaluate, FlowProblem, LossWeights};
use tofflow_core::optim::{optimize_flows, optimize_flows_from, Method, OptimConfig};
use tofflow_core::sim::{simulate_bundle, translating_square, CaptureBundle};

fn bundle(size: usize, side: f64, velocity: f64, textured: bool) -> CaptureBundle {
    let scene = translating_square(size, side, velocity, textured);
    let config = SensorConfig::new(vec![20e6], Taps::One).unwrap();
    simulate_bundle(&scene, &config, 0.0, 0).unwrap()
}

#[test]
fn static_scene_stays_put() {
    let b = bundle(48, 12.0, 0.0, true);
    let cfg = OptimConfig {
        iterations: 100,
        ..OptimConfig::default()
    };
    let (flows, trace) = optimize_flows(&b, &LossWeights::default(), &cfg).unwrap();
    let mean = flows.iter().map(|f| f.mean_magnitude()).sum::<f64>() / flows.len() as f64;
    let first = trace.reports[0].tof;
    let best = trace.best().unwrap().tof;
    println!("static: mean |V| {mean:.2e}, L_ToF {first:.3e} -> {best:.3e}");
    assert!(mean < 0.05);
    assert!((best - first).abs() <= 0.1 * first + 1e-9);
}

#[test]
fn translating_square_halves_the_tof_loss() {
    let b = bundle(128, 32.0, 2.0, true);
    let t = Instant::now();
    let (flows, trace) = optimize_flows(&b, &LossWeights::default(), &OptimConfig::default()).unwrap();
    let first = &trace.reports[0];
    let best = trace.best().unwrap();
    println!(
        "square: L_ToF {:.4} -> {:.4}, L_photo {:.4} -> {:.4}, best it {}, {:?}",
        first.tof,
        best.tof,
        first.photo,
        best.photo,
        trace.best_iteration,
        t.elapsed()
    );
    assert_eq!(trace.reports.len(), 501);
    assert!(best.tof <= 0.5 * first.tof);
    assert!(best.photo < first.photo);
    assert_eq!(flows.len(), 4);
    assert!(flows[3].mean_magnitude() == 0.0);
}

#[test]
fn starting_at_the_true_flow_descends_while_the_mask_is_fixed() {
    let b = bundle(40, 10.0, 1.0, true);
    let problem = FlowProblem::from_bundle(&b, 1e-6, true).unwrap();
    let cfg = OptimConfig {
        method: Method::Gd,
        step: 1e-3,
        iterations: 50,
        ..OptimConfig::default()
    };
    let (_, trace) =
        optimize_flows_from(&problem, b.true_flows.clone(), &LossWeights::default(), &cfg).unwrap();
    let mut fixed = 0;
    for w in trace.reports.windows(2) {
        if w[1].masked_fraction == w[0].masked_fraction {
            fixed += 1;
            // subgradient steps at zero-error pixels chatter at the 1e-7 level
            assert!(w[1].total <= w[0].total * (1.0 + 1e-6), "{} -> {}", w[0].total, w[1].total);
        }
    }
    println!("{fixed} of 50 steps with a fixed mask");
    assert!(fixed >= 5);
}

#[test]
fn returned_iterate_is_never_worse_than_the_start() {
    let b = bundle(40, 10.0, 2.0, false);
    let cfg = OptimConfig {
        step: 2.0,
        iterations: 30,
        ..OptimConfig::default()
    };
    let weights = LossWeights::default();
    let (flows, trace) = optimize_flows(&b, &weights, &cfg).unwrap();
    let problem = FlowProblem::from_bundle(&b, cfg.epsilon, cfg.unwrap).unwrap();
    let total = evaluate(&problem, &flows, &LossWeights { sim: 0.0, ..weights }, false)
        .unwrap()
        .report
        .total;
    assert!(total <= trace.reports[0].total);
    assert_eq!(total, trace.best().unwrap().total);
}

#[test]
fn runs_are_bit_identical() {
    let b = bundle(32, 8.0, 1.5, true);
    let cfg = OptimConfig {
        iterations: 20,
        ..OptimConfig::default()
    };
    let (fa, ta) = optimize_flows(&b, &LossWeights::default(), &cfg).unwrap();
    let (fb, tb) = optimize_flows(&b, &LossWeights::default(), &cfg).unwrap();
    assert_eq!(fa, fb);
    assert_eq!(ta, tb);
}

#[test]
fn pyramid_run_reduces_the_loss() {
    let b = bundle(64, 16.0, 2.0, true);
    let cfg = OptimConfig {
        iterations: 120,
        pyramid: true,
        ..OptimConfig::default()
    };
    let (flows, trace) = optimize_flows(&b, &LossWeights::default(), &cfg).unwrap();
    assert_eq!(flows[0].shape(), (64, 64));
    assert!(trace.reports.len() <= cfg.iterations + 1);
    assert!(trace.best().unwrap().tof < trace.reports[0].tof);
}
