//! Train the ConvLSTM tile predictor on synthetic sessions and compare its
//! F1 against the linear-regression baseline on a held-out session.

use vp360::geometry::{prediction_metrics, FovSpec, TileGrid};
use vp360::predictors::{lr_predict, train_convlstm, ConvLstm, ConvLstmConfig, TrainConfig};
use vp360::synthetic::{chunk_windows, generate_session, SynthConfig};

fn main() -> vp360::Result<()> {
    let grid = TileGrid::default_10x20();
    let fov = FovSpec::default_90();
    let synth = SynthConfig {
        chunks: 16,
        ..SynthConfig::default()
    };
    let window_len = 5;

    let mut dataset = Vec::new();
    for seed in 0..3 {
        let session = generate_session(&synth, seed)?;
        dataset.extend(chunk_windows(&session, &synth, grid, fov, window_len)?);
    }
    println!("training on {} windows", dataset.len());

    let config = ConvLstmConfig {
        window_len,
        ..ConvLstmConfig::default()
    };
    let mut model = ConvLstm::init(config, grid, 7)?;
    let report = train_convlstm(
        &mut model,
        &dataset,
        &TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        },
    )?;
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:2}: loss {loss:.4}", i + 1);
    }

    // Held-out session: compare against linear regression per chunk.
    let holdout = generate_session(&synth, 100)?;
    let windows = chunk_windows(&holdout, &synth, grid, fov, window_len)?;
    let (mut f1_model, mut f1_lr) = (0.0, 0.0);
    for (w_idx, (window, truth)) in windows.iter().enumerate() {
        let chunk = window_len + w_idx;
        let probs = model.predict(window)?;
        f1_model += prediction_metrics(probs.values(), truth, 0.5)?.f1;

        let lo = (chunk as f64 - 1.0) * synth.chunk_length;
        let hist: Vec<_> = holdout
            .head
            .iter()
            .filter(|s| s.t >= lo && s.t < chunk as f64 * synth.chunk_length)
            .cloned()
            .collect();
        let horizon = (chunk as f64 + 0.5) * synth.chunk_length - hist.last().unwrap().t;
        let lr = lr_predict(&hist, horizon, grid, fov)?;
        f1_lr += prediction_metrics(lr.values(), truth, 0.5)?.f1;
    }
    let n = windows.len() as f64;
    println!("held-out mean F1: convlstm {:.3}, lr {:.3}", f1_model / n, f1_lr / n);
    Ok(())
}
