//! Energy detection against a fixed threshold and majority fusion of the
//! verdicts shared on the control channel.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::types::{ChannelId, ChannelSet, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Empty,
    Occupied,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    pub threshold_dbm: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            threshold_dbm: -60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingReport {
    pub node: NodeId,
    pub verdicts: BTreeMap<ChannelId, Verdict>,
}

impl SensingReport {
    /// Rebuilds a report from an empty-channel bitmap: every listed channel
    /// not in `empty` is `Occupied`.
    pub fn from_empty_set(node: NodeId, channels: &[ChannelId], empty: ChannelSet) -> Self {
        let verdicts = channels
            .iter()
            .map(|&c| {
                let v = if empty.contains(c) {
                    Verdict::Empty
                } else {
                    Verdict::Occupied
                };
                (c, v)
            })
            .collect();
        SensingReport { node, verdicts }
    }

    pub fn empty_set(&self) -> ChannelSet {
        self.verdicts
            .iter()
            .filter(|(_, v)| **v == Verdict::Empty)
            .map(|(c, _)| *c)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FusionResult {
    pub empty_channels: ChannelSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SensingError {
    #[error("no sensing reports to fuse")]
    EmptyInput,
    #[error("report from {node} has no verdict for {channel}")]
    MissingVerdict { node: NodeId, channel: ChannelId },
}

/// Anything that can produce a received-power sample for a node on a channel.
pub trait PowerSampler {
    fn sample_power<R: Rng + ?Sized>(
        &self,
        receiver: NodeId,
        channel: ChannelId,
        rng: &mut R,
    ) -> f64;
}

/// Strictly above the threshold is `Occupied`; ties are `Empty`.
pub fn detect(measured_power_dbm: f64, cfg: &DetectionConfig) -> Verdict {
    if measured_power_dbm > cfg.threshold_dbm {
        Verdict::Occupied
    } else {
        Verdict::Empty
    }
}

/// A channel is fused empty only when strictly more than half of the reports
/// say so. An even split stays occupied.
pub fn fuse_majority(
    reports: &[SensingReport],
    channels: &[ChannelId],
) -> Result<FusionResult, SensingError> {
    if reports.is_empty() {
        return Err(SensingError::EmptyInput);
    }
    let mut empty_channels = ChannelSet::EMPTY;
    for &channel in channels {
        let mut empty_votes = 0usize;
        for r in reports {
            match r.verdicts.get(&channel) {
                Some(Verdict::Empty) => empty_votes += 1,
                Some(Verdict::Occupied) => {}
                None => {
                    return Err(SensingError::MissingVerdict {
                        node: r.node,
                        channel,
                    })
                }
            }
        }
        if 2 * empty_votes > reports.len() {
            empty_channels.insert(channel);
        }
    }
    Ok(FusionResult { empty_channels })
}

/// One power sample and one verdict per channel.
pub fn sense_all<M, R>(
    node: NodeId,
    channels: &[ChannelId],
    medium: &M,
    cfg: &DetectionConfig,
    rng: &mut R,
) -> SensingReport
where
    M: PowerSampler + ?Sized,
    R: Rng + ?Sized,
{
    let verdicts = channels
        .iter()
        .map(|&c| (c, detect(medium.sample_power(node, c, rng), cfg)))
        .collect();
    SensingReport { node, verdicts }
}
