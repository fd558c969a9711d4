//! Browser bindings for a small interactive demo. Each function returns a
//! JSON string that the page in `www/` parses and draws.

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use execsim::agents::{ArrivalProfile, ChiarellaParams, ConditionalOrderSampler};
use execsim::execution::{sample_schedule, twap_schedule, MetaOrder, Mode, ScheduleDistribution};
use execsim::experiment::{DESK_LIMIT_RATE_PER_MS, DESK_MARKET_RATE_PER_MS, DESK_VOLUME_SCALE};
use execsim::impact::{apply_impact, ImpactParams};
use execsim::rng::stream_rng;
use execsim::session::SessionTemplate;
use execsim::sim::{KernelParams, MarketConfig};
use execsim::slippage::run_paired;

fn to_json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn js_err<E: std::fmt::Display>(e: E) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct Curve {
    q: Vec<f64>,
    impact: Vec<f64>,
}

/// `f(Q) = sign(Q) lambda |Q|^gamma` on `n` points of `[-q_max, q_max]`.
#[wasm_bindgen]
pub fn impact_curve(lambda: f64, gamma: f64, q_max: f64, n: usize) -> Result<String, JsValue> {
    let params = ImpactParams { lambda, gamma };
    params.validate().map_err(js_err)?;
    let n = n.clamp(2, 2001);
    let q: Vec<f64> = (0..n).map(|i| -q_max + 2.0 * q_max * i as f64 / (n - 1) as f64).collect();
    let impact = q.iter().map(|&x| apply_impact(&params, x)).collect();
    to_json(&Curve { q, impact })
}

#[derive(Serialize)]
struct Histogram {
    /// Bin edges in normalised session time.
    edges: Vec<f64>,
    /// Children per bin.
    counts: Vec<usize>,
    lunch: Option<(f64, f64)>,
}

/// Draws one 1000-child schedule from up to two Gaussian modes (second
/// mode used when `two_modes` is set) and bins the child times.
#[wasm_bindgen]
pub fn schedule_histogram(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64, two_modes: bool, bounded: bool, seed: u64, bins: usize) -> Result<String, JsValue> {
    let session = SessionTemplate::desk();
    let mut modes = vec![Mode { mu: mu1, sigma: sigma1 }];
    if two_modes {
        modes.push(Mode { mu: mu2, sigma: sigma2 });
    }
    let dist = ScheduleDistribution { modes, bounded };
    let sched = sample_schedule(&MetaOrder::DEFAULT, &dist, &session, &mut stream_rng(seed, 0)).map_err(js_err)?;
    let bins = bins.clamp(1, 400);
    let mut counts = vec![0usize; bins];
    for c in &sched.children {
        let u = session.wall_to_normalized(c.time);
        counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    to_json(&Histogram {
        edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        counts,
        lunch: session
            .lunch
            .map(|(a, b)| (session.wall_to_normalized(a), session.wall_to_normalized(b))),
    })
}

#[derive(Serialize)]
struct Paths {
    time_s: Vec<f64>,
    baseline: Vec<f64>,
    counterfactual: Vec<f64>,
    fills: Vec<(f64, f64)>,
    zeta: f64,
    zeta_mr: f64,
    zeta_mi: f64,
}

/// One paired run of a TWAP sell over the given fraction of a one-hour
/// session, with mids sampled each second. The volume is rounded down to a
/// multiple of the 100 children.
#[wasm_bindgen]
pub fn simulate_paths(seed: u64, start_frac: f64, end_frac: f64, volume: u32) -> Result<String, JsValue> {
    let session = SessionTemplate {
        close_ms: 3_600_000,
        lunch: None,
        warmup_ms: 120_000,
        ..SessionTemplate::desk()
    };
    let cfg = Arc::new(MarketConfig {
        profile: ArrivalProfile::parametric(&session, DESK_LIMIT_RATE_PER_MS, DESK_MARKET_RATE_PER_MS),
        sampler: Arc::new(ConditionalOrderSampler::bootstrap(&session, DESK_VOLUME_SCALE)),
        session: session.clone(),
        chiarella: ChiarellaParams::TEST_DAY,
        impact: ImpactParams::TEST_DAY,
        kernel: KernelParams::default(),
    });
    let span = session.close_ms - session.open_ms;
    let to_ms = |f: f64| session.open_ms + (f.clamp(0.0, 1.0) * span as f64) as i64;
    let meta = MetaOrder {
        total_volume: (volume.max(100) / 100 * 100) as u64,
        num_children: 100,
        ..MetaOrder::DEFAULT
    };
    let sched = twap_schedule(&meta, &session, to_ms(start_frac), to_ms(end_frac)).map_err(js_err)?;
    let run = run_paired(&cfg, &sched, seed).map_err(js_err)?;
    let d = run.decompose().map_err(js_err)?;
    let (b, c) = (
        run.baseline_mid.sample(session.open_ms, session.close_ms, 1000),
        run.counterfactual_mid.sample(session.open_ms, session.close_ms, 1000),
    );
    to_json(&Paths {
        time_s: (0..b.len()).map(|i| i as f64).collect(),
        baseline: b,
        counterfactual: c,
        fills: run.fills.iter().map(|f| ((f.time - session.open_ms) as f64 / 1000.0, f.price)).collect(),
        zeta: d.zeta,
        zeta_mr: d.zeta_mr,
        zeta_mi: d.zeta_mi,
    })
}
