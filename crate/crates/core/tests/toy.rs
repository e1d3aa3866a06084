use std::time::Instant;

use tofflow_core::optim::{
    converged_mask, depth_error, iou, same_branch_mask, toy_problem, toy_reconstruct_m3, ToyConfig,
};

fn run(unwrap: bool) -> (f64, f64, Vec<f64>) {
    let p = toy_problem(128, 128, 7).unwrap();
    let cfg = ToyConfig {
        unwrap,
        ..ToyConfig::default()
    };
    let (m3, trace) = toy_reconstruct_m3(&p.m0, &p.m1, &p.m2, &p.label, p.frequency_hz, &cfg).unwrap();
    let err = depth_error(&p.m0, &p.m1, &p.m2, &m3, &p.label, cfg.epsilon).unwrap();
    let conv = converged_mask(&err, p.label.d_max());
    let same = same_branch_mask(&p.m0, &p.m1, &p.m2, &p.m3).unwrap();
    let frac = conv.count_valid() as f64 / (128.0 * 128.0);
    (frac, iou(&conv, &same).unwrap(), trace.reports.iter().map(|r| r.tof).collect())
}

#[test]
fn unwrapping_reconstructs_nearly_every_pixel() {
    let t = Instant::now();
    let (frac, _, trace) = run(true);
    println!("unwrap on: {:.4} converged in {:?}", frac, t.elapsed());
    assert!(frac >= 0.99, "{frac}");
    assert_eq!(trace.len(), 2001);
}

#[test]
fn without_unwrapping_only_the_same_branch_converges() {
    let (frac, overlap, _) = run(false);
    println!("unwrap off: {frac:.4} converged, IoU {overlap:.4}");
    assert!(overlap > 0.95, "{overlap}");
    assert!(frac < 0.9);
}

#[test]
fn unwrapped_loss_decreases_until_converged() {
    let (_, _, trace) = run(true);
    let dmax = tofflow_core::itof::d_max(20e6).unwrap();
    let mut rises = 0;
    for w in trace.windows(2) {
        if w[0] > 1e-3 * dmax && w[1] >= w[0] {
            rises += 1;
        }
    }
    println!("first {:?} last {:?}", &trace[..3], trace.last());
    assert_eq!(rises, 0);
}
