use doat::experiments::{linear_fit, run_scenario, DatasetSpec, Mode, Scenario};
use std::time::Instant;

fn main() {
    let t = Instant::now();
    let offsets = [0.0, 5.0, 10.0, 20.0, 40.0];
    let mut per_offset: Vec<Vec<f64>> = vec![Vec::new(); offsets.len()];
    for seed in 1..=5u64 {
        let mut s = Scenario::new(
            "offsets",
            DatasetSpec::Generated { n: 1000, low: -100.0, high: 100.0, dim: 2, seed: 100 + seed },
            seed,
        );
        s.mode = Mode::OffsetSweep;
        s.offsets_ms = offsets.to_vec();
        s.density_pct = 10.0;
        let m = run_scenario(&s).unwrap();
        assert!(m.quiescent);
        for (i, &o) in offsets.iter().enumerate() {
            per_offset[i].push(m.mean_error_at(Some(o)).unwrap());
        }
    }
    let means: Vec<f64> = per_offset.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    for (o, e) in offsets.iter().zip(&means) {
        println!("offset={o}: mean err={e:.4}");
    }
    let pts: Vec<(f64, f64)> = offsets.iter().copied().zip(means.iter().copied()).collect();
    let (slope, icept, r2) = linear_fit(&pts).unwrap();
    println!("fit slope={slope:.5} intercept={icept:.4} r2={r2:.4}; took {:.1?}", t.elapsed());
}
