//! Priority scheduling: priority index, preferred-channel estimation and the
//! all-or-nothing channel/slot allocation run independently by every
//! secondary node at the end of the DDSAT state.
//!
//! Allocation walks requests by descending priority index (ties by ascending
//! node id). Each request gets all of its slots on one channel, trying the
//! first preference, then the second, then any other fused-empty channel in
//! ascending order. A request that fits nowhere is left out of the frame.
//!
//! Packet delay (PD) moves by one per frame: up after a frame left out, down
//! after a grant. A node left out is lifted to at least [`STARVED_MIN_PD`],
//! which places it ahead of a node that was granted in both of the previous
//! two frames, so over-subscribed equal-class nodes rotate.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::types::{ChannelId, ChannelSet, NodeId, PreferredChannels, SlotSet};
use crate::wire::DdsatPacket;

/// Weight of a new received-power sample in the channel estimate.
pub const EWMA_ALPHA: f64 = 0.25;
/// Estimate carried by a channel that has never been measured.
pub const OPTIMISTIC_ESTIMATE_DBM: f64 = 0.0;
/// PD floor applied whenever a node misses a frame.
pub const STARVED_MIN_PD: u16 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PsaError {
    #[error("need at least two candidate channels, got {0}")]
    TooFewCandidates(usize),
    #[error("the control channel cannot carry data")]
    CccChannel,
    #[error("duplicate request from {0}")]
    DuplicateNode(NodeId),
}

/// DT + PD, saturating at the 16-bit wire field.
pub fn priority_index(dt: u16, pd: u16) -> u16 {
    dt.saturating_add(pd)
}

/// New PD after the allocation outcome of one frame.
pub fn update_pd(pd: u16, served: bool) -> u16 {
    if served {
        pd.saturating_sub(1)
    } else {
        pd.saturating_add(1).max(STARVED_MIN_PD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRequest {
    pub node: NodeId,
    pub priority_index: u16,
    pub requested_slots: u8,
    pub preferred: PreferredChannels,
}

impl From<&DdsatPacket> for SlotRequest {
    fn from(p: &DdsatPacket) -> Self {
        SlotRequest {
            node: p.sender,
            priority_index: p.priority_index,
            requested_slots: p.requested_slots,
            preferred: p.preferred_channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Estimate {
    mean_dbm: f64,
    samples: u64,
}

/// Exponentially weighted received power per data channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelEstimates {
    entries: BTreeMap<ChannelId, Estimate>,
}

impl ChannelEstimates {
    pub fn new() -> Self {
        Self::default()
    }

    /// Unexplored channels report [`OPTIMISTIC_ESTIMATE_DBM`].
    pub fn estimate(&self, channel: ChannelId) -> f64 {
        self.entries
            .get(&channel)
            .map_or(OPTIMISTIC_ESTIMATE_DBM, |e| e.mean_dbm)
    }

    pub fn samples(&self, channel: ChannelId) -> u64 {
        self.entries.get(&channel).map_or(0, |e| e.samples)
    }

    pub fn update(&mut self, channel: ChannelId, measured_dbm: f64) -> Result<(), PsaError> {
        if channel.is_ccc() {
            return Err(PsaError::CccChannel);
        }
        self.entries
            .entry(channel)
            .and_modify(|e| {
                e.mean_dbm = (1.0 - EWMA_ALPHA) * e.mean_dbm + EWMA_ALPHA * measured_dbm;
                e.samples += 1;
            })
            .or_insert(Estimate {
                mean_dbm: measured_dbm,
                samples: 1,
            });
        Ok(())
    }
}

/// Two highest-estimate candidates, ties by ascending channel index.
pub fn preferred_channels(
    est: &ChannelEstimates,
    candidates: ChannelSet,
) -> Result<PreferredChannels, PsaError> {
    let mut ranked: Vec<ChannelId> = candidates.iter().filter(|c| !c.is_ccc()).collect();
    if ranked.len() < 2 {
        return Err(PsaError::TooFewCandidates(ranked.len()));
    }
    // iter() is ascending and sort_by is stable, so equal estimates keep index order.
    ranked.sort_by(|a, b| est.estimate(*b).total_cmp(&est.estimate(*a)));
    Ok(PreferredChannels::pair(ranked[0], ranked[1]))
}

/// Grant of one served node: a channel and the data slots on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub channel: ChannelId,
    pub slots: SlotSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationTable {
    slots_per_channel: u8,
    grid: BTreeMap<ChannelId, Vec<Option<NodeId>>>,
    unserved: BTreeSet<NodeId>,
}

impl AllocationTable {
    pub fn empty(empty_channels: ChannelSet, slots_per_channel: u8) -> Self {
        AllocationTable {
            slots_per_channel,
            grid: empty_channels
                .iter()
                .filter(|c| !c.is_ccc())
                .map(|c| (c, vec![None; usize::from(slots_per_channel)]))
                .collect(),
            unserved: BTreeSet::new(),
        }
    }

    pub fn slots_per_channel(&self) -> u8 {
        self.slots_per_channel
    }

    pub fn channels(&self) -> impl Iterator<Item = ChannelId> + '_ {
        self.grid.keys().copied()
    }

    pub fn owner(&self, channel: ChannelId, slot: u8) -> Option<NodeId> {
        self.grid
            .get(&channel)?
            .get(usize::from(slot))
            .copied()
            .flatten()
    }

    pub fn unserved(&self) -> &BTreeSet<NodeId> {
        &self.unserved
    }

    pub fn grant(&self, node: NodeId) -> Option<Grant> {
        self.grid.iter().find_map(|(&channel, cells)| {
            let slots: SlotSet = cells
                .iter()
                .enumerate()
                .filter(|(_, o)| **o == Some(node))
                .map(|(s, _)| s as u8)
                .collect();
            (!slots.is_empty()).then_some(Grant { channel, slots })
        })
    }

    pub fn granted_slots(&self, node: NodeId) -> u8 {
        self.grid
            .values()
            .flatten()
            .filter(|o| **o == Some(node))
            .count() as u8
    }

    pub fn used_cells(&self) -> usize {
        self.grid.values().flatten().filter(|o| o.is_some()).count()
    }

    fn free_slots(&self, channel: ChannelId) -> usize {
        self.grid
            .get(&channel)
            .map_or(0, |cells| cells.iter().filter(|o| o.is_none()).count())
    }

    fn place(&mut self, channel: ChannelId, node: NodeId, count: u8) {
        let cells = self
            .grid
            .get_mut(&channel)
            .expect("placing on a non-empty channel");
        cells
            .iter_mut()
            .filter(|o| o.is_none())
            .take(usize::from(count))
            .for_each(|o| *o = Some(node));
    }

    /// Renders the grid as rows of `chN: SNa SNa -- --`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (ch, cells) in &self.grid {
            out.push_str(&format!("{ch}:"));
            for o in cells {
                match o {
                    Some(n) => out.push_str(&format!(" {n:>4}")),
                    None => out.push_str("   --"),
                }
            }
            out.push('\n');
        }
        if !self.unserved.is_empty() {
            let names: Vec<String> = self.unserved.iter().map(|n| n.to_string()).collect();
            out.push_str(&format!("out of frame: {}\n", names.join(" ")));
        }
        out
    }
}

pub fn allocate(
    requests: &[SlotRequest],
    empty_channels: ChannelSet,
    slots_per_channel: u8,
) -> Result<AllocationTable, PsaError> {
    let mut seen = BTreeSet::new();
    for r in requests {
        if !seen.insert(r.node) {
            return Err(PsaError::DuplicateNode(r.node));
        }
    }
    let mut table = AllocationTable::empty(empty_channels, slots_per_channel);
    let mut order: Vec<&SlotRequest> = requests.iter().collect();
    order.sort_by(|a, b| {
        b.priority_index
            .cmp(&a.priority_index)
            .then(a.node.cmp(&b.node))
    });

    for r in order {
        if r.requested_slots == 0 {
            continue;
        }
        let preferred = r.preferred.iter().filter(|c| table.grid.contains_key(c));
        let others = table
            .channels()
            .filter(|c| !r.preferred.iter().any(|p| p == *c))
            .collect::<Vec<_>>();
        let chosen = preferred
            .chain(others)
            .find(|&c| table.free_slots(c) >= usize::from(r.requested_slots));
        match chosen {
            Some(c) => table.place(c, r.node, r.requested_slots),
            None => {
                table.unserved.insert(r.node);
            }
        }
    }
    Ok(table)
}
