//! Replay a synthetic viewing session against a bandwidth trace with a
//! mid-session drop and print the per-chunk adaptation behavior.

use vp360::sim::{
    aggregate_metrics, simulate_session, AbrChoice, BandwidthTrace, Predictor, SessionConfig,
};
use vp360::synthetic::{generate_session, SynthConfig};

fn main() -> vp360::Result<()> {
    let config = SessionConfig {
        ratio: 4,    // 20x40 saliency maps on the 10x20 grid
        lambda: 0.5, // quality-jump penalty below 1 so levels can climb
        ..SessionConfig::default()
    };
    let synth = SynthConfig {
        chunks: 20,
        ..SynthConfig::default()
    };
    let session = generate_session(&synth, 42)?;

    // 1 Gbps with an 80% drop between t=8s and t=12s.
    let trace = BandwidthTrace::new(vec![(0.0, 1000.0), (8.0, 200.0), (12.0, 1000.0)])?;

    let log = simulate_session(
        &session.head,
        &session.saliency,
        &trace,
        &Predictor::LinearRegression,
        AbrChoice::Cba,
        &config,
    )?;

    println!("chunk  est Mbps  mean lvl  rebuffer  F1");
    for r in &log.records {
        println!(
            "{:5}  {:8.1}  {:8.2}  {:8.3}  {:.2}",
            r.chunk,
            r.estimated_mbps,
            r.decision.mean_level(),
            r.rebuffer,
            r.metrics.f1
        );
    }
    let s = aggregate_metrics(&log)?;
    println!(
        "\nsummary: avg level {:.2}, level change {:.2}, rebuffer {:.2}s, {:.1} Mbit downloaded",
        s.avg_quality_level, s.quality_level_change, s.rebuffer_total_s, s.bandwidth_total_mbit
    );
    Ok(())
}
