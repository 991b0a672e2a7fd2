use seploss::dsp::StftConfig;
use seploss_harness::{run_bench, BenchConfig, ModelConfig, SourceRecipe, SynthSpec, TrainConfig, UNTRAINED};

fn tiny() -> BenchConfig {
    BenchConfig {
        synth: SynthSpec {
            seed: 5,
            duration_s: 0.25,
            sources: vec![
                SourceRecipe::SineBank {
                    partials: 3,
                    freq_range: [200.0, 1500.0],
                    amp_range: [0.1, 0.3],
                },
                SourceRecipe::FilteredNoise {
                    cutoff_range: [300.0, 1200.0],
                    rms: 0.2,
                },
            ],
            ..SynthSpec::default()
        },
        train_items: 4,
        val_items: 2,
        test_items: 2,
        stft: StftConfig::new(256, 256, 64),
        model: ModelConfig { hidden: 8, seed: 0 },
        train: TrainConfig {
            max_epochs: 4,
            batch_size: 2,
            ..TrainConfig::default()
        },
        losses: vec!["l2_freq".into(), "sisdr_time".into(), "adversarial".into()],
        seeds: vec![0, 1],
        metrics: vec!["l2_freq".into(), "sisdr_time".into(), "sdr".into()],
        adversarial_pretrain_epochs: 2,
        frame_seconds: 0.25,
        ..BenchConfig::default()
    }
}

#[test]
fn matrix_has_one_column_per_loss_after_the_baseline() {
    let out = run_bench(&tiny(), 1).unwrap();
    let m = &out.matrix;
    assert_eq!(m.columns, vec![UNTRAINED, "l2_freq", "sisdr_time", "adversarial"]);
    assert_eq!(m.rows, vec!["l2_freq", "sisdr_time", "sdr"]);
    assert_eq!(out.runs.len(), 6);
    for run in &out.runs {
        assert_eq!(run.trace.len(), 5);
        assert_eq!(run.pretrain_trace.is_some(), run.loss.name() == "adversarial");
    }
    // columns average the seeds
    let l2: Vec<f64> = out
        .runs
        .iter()
        .filter(|r| r.loss.name() == "l2_freq")
        .map(|r| r.column.values[0][0])
        .collect();
    assert!((m.values[0][1] - (l2[0] + l2[1]) / 2.0).abs() < 1e-12);
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = tiny();
    let a = run_bench(&cfg, 1).unwrap();
    let b = run_bench(&cfg, 3).unwrap();
    assert_eq!(a.matrix, b.matrix);
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.trace, y.trace);
    }
}
