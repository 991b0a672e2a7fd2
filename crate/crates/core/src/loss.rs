use ndarray::Array3;

/// Floor added inside logarithms and denominators.
pub const EPS_LOG: f64 = 1e-8;

pub(crate) const LN_10: f64 = std::f64::consts::LN_10;

/// Scalar loss value with its gradient with respect to the estimate.
///
/// `degenerate` is set when an ε floor, rather than the data, determined the
/// value (identical or orthogonal signals, silent sources); the value is
/// still finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<G = Array3<f64>> {
    pub value: f64,
    pub gradient: G,
    pub degenerate: bool,
}

impl<G> LossOutput<G> {
    pub fn new(value: f64, gradient: G) -> Self {
        Self {
            value,
            gradient,
            degenerate: false,
        }
    }

    pub fn flagged(mut self, degenerate: bool) -> Self {
        self.degenerate |= degenerate;
        self
    }
}

impl LossOutput<Array3<f64>> {
    /// `self + weight * other`, summing gradients and degeneracy flags.
    pub fn add_scaled(mut self, other: &LossOutput, weight: f64) -> Self {
        self.value += weight * other.value;
        self.gradient.scaled_add(weight, &other.gradient);
        self.degenerate |= other.degenerate;
        self
    }
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-source scale-invariant SDR term `-10 log10(|a y|^2 / |a y - e|^2)`
/// with `a = e.y / |y|^2`, plus its gradient with respect to `e`.
///
/// The ε floor is taken relative to the estimate energy so the value is
/// exactly invariant under rescaling of the estimate.
pub(crate) fn sisdr_term(est: &[f64], tgt: &[f64]) -> (f64, Vec<f64>, bool) {
    let dot: f64 = est.iter().zip(tgt).map(|(a, b)| a * b).sum();
    let target_energy: f64 = tgt.iter().map(|v| v * v).sum();
    let est_energy: f64 = est.iter().map(|v| v * v).sum();
    let cap = -10.0 * EPS_LOG.log10();
    if est_energy == 0.0 {
        return (cap, vec![0.0; est.len()], true);
    }
    let alpha = dot / target_energy;
    let proj = alpha * alpha * target_energy;
    let resid: f64 = est
        .iter()
        .zip(tgt)
        .map(|(e, y)| (alpha * y - e).powi(2))
        .sum();
    let floor = EPS_LOG * est_energy;
    let num = proj + floor;
    let den = resid + floor;
    let value = -10.0 * (num / den).log10();
    let degenerate = proj <= floor || resid <= floor;
    let scale = -10.0 / LN_10;
    let grad = est
        .iter()
        .zip(tgt)
        .map(|(&e, &y)| {
            let d_proj = 2.0 * alpha * y;
            let d_resid = 2.0 * (e - alpha * y);
            let d_floor = 2.0 * EPS_LOG * e;
            scale * ((d_proj + d_floor) / num - (d_resid + d_floor) / den)
        })
        .collect();
    (value, grad, degenerate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sisdr_hand_projection() {
        let (v, _, deg) = sisdr_term(&[1.0, 1.0], &[1.0, 0.0]);
        assert!(v.abs() < 1e-7, "{v}");
        assert!(!deg);
    }

    #[test]
    fn sisdr_zero_estimate_is_capped() {
        let (v, g, deg) = sisdr_term(&[0.0, 0.0], &[1.0, 0.0]);
        assert!(deg);
        assert!((v - 80.0).abs() < 1e-9);
        assert!(g.iter().all(|&x| x == 0.0));
    }
}
