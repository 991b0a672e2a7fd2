use crate::audio::MultiSourceAudio;
use crate::error::{Error, Result};
use crate::loss::EPS_LOG;

/// Cap applied to every frame value, in dB.
pub const SDR_CAP_DB: f64 = 100.0;

/// Frame-median energy-ratio SDR per source. `None` when every reference frame is silent.
///
/// Frames are non-overlapping, `frame_seconds` long (the last one may be shorter), and
/// energy is pooled across channels. A frame with no error scores the cap.
pub fn sdr_metric(
    estimate: &MultiSourceAudio,
    reference: &MultiSourceAudio,
    frame_seconds: f64,
) -> Result<Vec<Option<f64>>> {
    estimate.check_aligned(reference)?;
    if !(frame_seconds > 0.0) {
        return Err(Error::Domain(format!("frame length must be positive, got {frame_seconds}")));
    }
    let frame = ((frame_seconds * reference.sample_rate() as f64).round() as usize).max(1);
    let (est, refs) = (estimate.data(), reference.data());
    let (k, c, len) = refs.dim();
    let mut out = Vec::with_capacity(k);
    for kk in 0..k {
        let mut values = Vec::new();
        let mut start = 0;
        while start < len {
            let end = (start + frame).min(len);
            let (mut energy, mut error) = (0.0, 0.0);
            for ch in 0..c {
                for t in start..end {
                    let y = refs[[kk, ch, t]];
                    let d = est[[kk, ch, t]] - y;
                    energy += y * y;
                    error += d * d;
                }
            }
            if energy >= EPS_LOG {
                values.push(frame_sdr(energy, error));
            }
            start = end;
        }
        out.push(median(&mut values));
    }
    Ok(out)
}

fn frame_sdr(energy: f64, error: f64) -> f64 {
    if error == 0.0 {
        return SDR_CAP_DB;
    }
    (10.0 * (energy / error).log10()).clamp(-SDR_CAP_DB, SDR_CAP_DB)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}
