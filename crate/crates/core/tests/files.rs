use std::fs;

use ndarray::Array2;
use seploss::audio::AudioBuffer;
use seploss::metrics::{item_metrics, standardize_rows, MetricContext, MetricMatrix, Scope, SDR_CAP_DB};
use seploss::wav::{read_wav, write_wav, WavFormat};
use seploss::{Metric, MultiSourceAudio};

fn stems(seed: f64) -> Vec<AudioBuffer> {
    (0..2)
        .map(|k| {
            let s = Array2::from_shape_fn((2, 4000), |(c, t)| {
                0.4 * ((t as f64) * (0.01 + 0.02 * k as f64) + seed + c as f64).sin()
            });
            AudioBuffer::new(s, 8000).unwrap()
        })
        .collect()
}

#[test]
fn sixteen_bit_files_evaluate_like_the_quantized_signal() {
    let dir = tempfile::tempdir().unwrap();
    let original = stems(0.3);
    let read: Vec<AudioBuffer> = original
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let p = dir.path().join(format!("s{k}.wav"));
            write_wav(&p, s, WavFormat::Pcm16).unwrap();
            read_wav(&p).unwrap()
        })
        .collect();
    for (a, b) in original.iter().zip(&read) {
        let err = a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err <= 1.0 / 32768.0);
    }
    let reference = MultiSourceAudio::from_sources(&read).unwrap();
    let ctx = MetricContext::default().with_stft(seploss::dsp::StftConfig::new(512, 512, 128));
    let rows = item_metrics(&reference, &reference, &Metric::all(), &Scope::Mean, &ctx).unwrap();
    let sdr = rows.iter().find(|(n, _)| n == "sdr").unwrap().1.value;
    assert_eq!(sdr, SDR_CAP_DB);

    let estimate = MultiSourceAudio::from_sources(&stems(0.9)).unwrap();
    let off = item_metrics(&estimate, &reference, &Metric::all(), &Scope::Mean, &ctx).unwrap();
    for ((name, same), (_, moved)) in rows.iter().zip(&off) {
        if Metric::all().iter().find(|m| m.name() == name).unwrap().lower_is_better() {
            assert!(same.value <= moved.value, "{name}: {} vs {}", same.value, moved.value);
        }
    }
}

#[test]
fn matrices_survive_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = MetricMatrix::new(
        vec!["l2_freq".into(), "sdr".into()],
        vec!["a".into(), "b".into(), "c".into()],
        vec![vec![0.1, 0.30000000000000004, 1e-300], vec![-3.5, 7.25, 12.0]],
    )
    .unwrap();
    let p = dir.path().join("m.csv");
    m.write_csv(fs::File::create(&p).unwrap()).unwrap();
    let back = MetricMatrix::read_csv(fs::File::open(&p).unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(standardize_rows(&back), standardize_rows(&m));
}
