use execsim_wasm::{impact_curve, schedule_histogram, simulate_paths};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn impact_curve_is_odd_and_matches_the_law() {
    let c = parse(impact_curve(0.266, 0.705, 100.0, 5).unwrap());
    let q: Vec<f64> = c["q"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let f: Vec<f64> = c["impact"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(q, vec![-100.0, -50.0, 0.0, 50.0, 100.0]);
    assert_eq!(f[2], 0.0);
    assert!((f[4] - 0.266 * 100f64.powf(0.705)).abs() < 1e-12);
    assert_eq!(f[0], -f[4]);
}

#[test]
fn histogram_counts_every_child_and_skips_lunch() {
    let h = parse(schedule_histogram(0.45, 0.2, 0.0, 0.0, false, false, 4, 40).unwrap());
    let counts: Vec<u64> = h["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(counts.iter().sum::<u64>(), 1000);
    let (a, b) = (h["lunch"][0].as_f64().unwrap(), h["lunch"][1].as_f64().unwrap());
    for (i, c) in counts.iter().enumerate() {
        let (lo, hi) = (i as f64 / 40.0, (i + 1) as f64 / 40.0);
        if lo >= a && hi <= b {
            assert_eq!(*c, 0, "bin {i} lies in lunch");
        }
    }
}

#[test]
fn paired_demo_run_satisfies_the_identity() {
    let p = parse(simulate_paths(3, 0.2, 0.6, 2000).unwrap());
    let (z, mr, mi) = (p["zeta"].as_f64().unwrap(), p["zeta_mr"].as_f64().unwrap(), p["zeta_mi"].as_f64().unwrap());
    assert!((z - (mr + mi)).abs() < 1e-9);
    assert!(!p["fills"].as_array().unwrap().is_empty());
    assert_eq!(p["baseline"].as_array().unwrap().len(), 3600);
}
