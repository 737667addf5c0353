//! Temporary speed probe for the memorization criterion; deleted once
//! the acceptance budget is pinned down.

use std::time::Instant;

use cadenza_model::config::{ModelConfig, TrainConfig};
use cadenza_model::net::SeqModel;
use cadenza_model::trainer::{run_training, RunOptions, Trainer};

fn fragment(f: usize) -> Vec<Vec<usize>> {
    let mut seq = vec![vec![0usize; 8]];
    for j in 0..8 {
        seq.push(vec![
            (j + f) % 3,
            (16 * j + 3 * f) % 192,
            (f * 4 + j) % 37,
            (10 + f) % 32,
            (f * 13) % 129,
            40 + 3 * f + 2 * j,
            (j * 7 + f) % 64,
            (16 + f + j) % 32,
        ]);
    }
    seq
}

#[test]
#[ignore]
fn probe_memorization_speed() {
    let corpus: Vec<Vec<Vec<usize>>> = (0..8).map(fragment).collect();
    let model_cfg = ModelConfig::default();
    let train_cfg = TrainConfig {
        seed: 5,
        max_lr: 1e-3,
        min_lr: 1e-4,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let model = SeqModel::new(model_cfg, train_cfg.seed).unwrap();
    let mut trainer = Trainer::new(model, train_cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("log.csv");
    let opts = RunOptions {
        csv_path: Some(&csv),
        checkpoint_dir: None,
        early_stop_ce: Some(0.15),
        early_stop_window: 25,
    };
    let start = Instant::now();
    let summary = run_training(&mut trainer, &corpus, &opts).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let log = std::fs::read_to_string(&csv).unwrap();
    let every_50: Vec<&str> = log
        .lines()
        .skip(1)
        .enumerate()
        .filter(|(i, _)| i % 50 == 0)
        .map(|(_, l)| l)
        .collect();
    println!("elapsed {elapsed:.1}s, steps {}, early {}", summary.steps_run, summary.stopped_early);
    println!("rolling ce {:.4}", summary.rolling_mean_masked_ce);
    for line in every_50 {
        println!("{line}");
    }
}
