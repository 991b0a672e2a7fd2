//! Stable names for every loss and metric.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1Time,
    L2Time,
    #[serde(rename = "logl1_time")]
    LogL1Time,
    #[serde(rename = "logl2_time")]
    LogL2Time,
    SisdrTime,
    SdsdrTime,
    L1Freq,
    L2Freq,
    #[serde(rename = "logl1_freq")]
    LogL1Freq,
    #[serde(rename = "logl2_freq")]
    LogL2Freq,
    SisdrFreq,
    Psa,
    Dissim,
    Mrs,
    L1Mask,
    L2Mask,
    Combination,
    DeepFeature,
    Adversarial,
}

impl LossKind {
    pub const ALL: [LossKind; 19] = [
        LossKind::L1Time,
        LossKind::L2Time,
        LossKind::LogL1Time,
        LossKind::LogL2Time,
        LossKind::SisdrTime,
        LossKind::SdsdrTime,
        LossKind::L1Freq,
        LossKind::L2Freq,
        LossKind::LogL1Freq,
        LossKind::LogL2Freq,
        LossKind::SisdrFreq,
        LossKind::Psa,
        LossKind::Dissim,
        LossKind::Mrs,
        LossKind::L1Mask,
        LossKind::L2Mask,
        LossKind::Combination,
        LossKind::DeepFeature,
        LossKind::Adversarial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1Time => "l1_time",
            LossKind::L2Time => "l2_time",
            LossKind::LogL1Time => "logl1_time",
            LossKind::LogL2Time => "logl2_time",
            LossKind::SisdrTime => "sisdr_time",
            LossKind::SdsdrTime => "sdsdr_time",
            LossKind::L1Freq => "l1_freq",
            LossKind::L2Freq => "l2_freq",
            LossKind::LogL1Freq => "logl1_freq",
            LossKind::LogL2Freq => "logl2_freq",
            LossKind::SisdrFreq => "sisdr_freq",
            LossKind::Psa => "psa",
            LossKind::Dissim => "dissim",
            LossKind::Mrs => "mrs",
            LossKind::L1Mask => "l1_mask",
            LossKind::L2Mask => "l2_mask",
            LossKind::Combination => "combination",
            LossKind::DeepFeature => "deep_feature",
            LossKind::Adversarial => "adversarial",
        }
    }

    /// Losses that need waveforms (reached through an inverse STFT when training on spectrograms).
    pub fn is_time_domain(self) -> bool {
        matches!(
            self,
            LossKind::L1Time
                | LossKind::L2Time
                | LossKind::LogL1Time
                | LossKind::LogL2Time
                | LossKind::SisdrTime
                | LossKind::SdsdrTime
                | LossKind::Mrs
        )
    }

    /// Whether the loss can be computed from an estimate/reference pair alone.
    pub fn usable_as_metric(self) -> bool {
        self != LossKind::Adversarial
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        LossKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::UnknownLoss(s.to_string()))
    }
}

/// A row of a metric matrix: a loss used as a metric (lower is better) or SDR (higher is better).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Loss(LossKind),
    Sdr,
}

impl Metric {
    pub fn all() -> Vec<Metric> {
        LossKind::ALL
            .iter()
            .copied()
            .filter(|k| k.usable_as_metric())
            .map(Metric::Loss)
            .chain(std::iter::once(Metric::Sdr))
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Loss(k) => k.name(),
            Metric::Sdr => "sdr",
        }
    }

    pub fn lower_is_better(self) -> bool {
        !matches!(self, Metric::Sdr)
    }

    /// Parses a comma-separated list, or `all`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>, Error> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Metric::all());
        }
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("sdr") {
            return Ok(Metric::Sdr);
        }
        let kind: LossKind = s.parse()?;
        if !kind.usable_as_metric() {
            return Err(Error::UnknownLoss(format!("{s} (not usable as a metric)")));
        }
        Ok(Metric::Loss(kind))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("l3_time".parse::<LossKind>().is_err());
    }

    #[test]
    fn metric_lists() {
        assert_eq!(Metric::all().len(), 19);
        assert_eq!(
            Metric::parse_list("sdr, l2_freq").unwrap(),
            vec![Metric::Sdr, Metric::Loss(LossKind::L2Freq)]
        );
        assert!(Metric::parse_list("adversarial").is_err());
    }
}
