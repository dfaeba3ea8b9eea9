//! Per-role state machines.
//!
//! A secondary node waits in `SyncWait` for a beacon, reserves a free DDSAT
//! slot, and is confirmed when the next beacon shows that slot occupied. A
//! reservation missing from the beacon means the node's packet collided and
//! the node falls back to `SyncWait` for the frame. Only confirmed nodes take
//! part in fusion and allocation; a node's first DDSAT packet registers it
//! with the base node.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::psa::{self, AllocationTable, ChannelEstimates, Grant, SlotRequest};
use crate::sensing::{self, DetectionConfig, FusionResult, PowerSampler, SensingReport};
use crate::types::{ChannelId, ChannelSet, NodeId, PreferredChannels, SlotSet, TrafficClass};
use crate::wire::{BeaconPacket, DataPacket, DdsatPacket};

/// Frames without a valid packet after which the base node frees a slot.
pub const RESERVATION_LEASE_FRAMES: u8 = 2;
pub const DATA_PAYLOAD_BYTES: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SnState {
    SyncWait,
    /// `confirmed` is false until a beacon has shown the slot as occupied.
    DdsatReserved {
        slot: u8,
        confirmed: bool,
    },
    DataAllocated {
        slot: u8,
        grant: Grant,
    },
}

impl SnState {
    pub fn ddsat_slot(&self) -> Option<u8> {
        match *self {
            SnState::SyncWait => None,
            SnState::DdsatReserved { slot, .. } | SnState::DataAllocated { slot, .. } => Some(slot),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeaconAction {
    /// Reservation shown in the beacon; kept.
    Kept(u8),
    /// Fresh pick among the free slots.
    Reserved(u8),
    /// Own slot missing from the beacon; back to `SyncWait`.
    Lost(u8),
    /// Every DDSAT slot taken; PD bumped.
    NoFreeSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateEndAction {
    /// Not confirmed yet, so not part of this frame's allocation.
    Joining,
    Served(Option<Grant>),
    OutOfFrame,
    Idle,
}

/// A DDSAT packet together with the slot it was received in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeardPacket {
    pub slot: u8,
    pub packet: DdsatPacket,
}

/// Local result of fusion and allocation, kept for consistency checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalView {
    pub fusion: FusionResult,
    pub table: AllocationTable,
}

#[derive(Debug, Clone)]
pub struct SecondaryNode {
    pub id: NodeId,
    pub state: SnState,
    pub traffic: TrafficClass,
    pub dt: u16,
    pub pd: u16,
    pub requested_slots: u8,
    pub estimates: ChannelEstimates,
    pub last_report: Option<SensingReport>,
    pub last_view: Option<LocalView>,
    /// PD and PI carried by this frame's DDSAT packet.
    pub sent_pd: Option<u16>,
    pub sent_priority: Option<u16>,
    inbox: Vec<HeardPacket>,
    sequence: u32,
    slot_script: VecDeque<u8>,
}

impl SecondaryNode {
    pub fn new(id: NodeId, traffic: TrafficClass, dt: u16, requested_slots: u8) -> Self {
        SecondaryNode {
            id,
            state: SnState::SyncWait,
            traffic,
            dt,
            pd: 0,
            requested_slots,
            estimates: ChannelEstimates::new(),
            last_report: None,
            last_view: None,
            sent_pd: None,
            sent_priority: None,
            inbox: Vec::new(),
            sequence: 0,
            slot_script: VecDeque::new(),
        }
    }

    /// Forces the next DDSAT slot picks, overriding the RNG while the scripted
    /// slot is free.
    pub fn script_slot_choices(&mut self, slots: impl IntoIterator<Item = u8>) {
        self.slot_script.extend(slots);
    }

    pub fn priority_index(&self) -> u16 {
        psa::priority_index(self.dt, self.pd)
    }

    /// Drops the reservation and everything learned this frame.
    pub fn leave(&mut self) {
        self.state = SnState::SyncWait;
        self.reset_frame();
    }

    fn reset_frame(&mut self) {
        self.inbox.clear();
        self.last_report = None;
        self.last_view = None;
        self.sent_pd = None;
        self.sent_priority = None;
    }

    pub fn on_beacon<R: Rng + ?Sized>(
        &mut self,
        beacon: &BeaconPacket,
        slots_per_state: u8,
        rng: &mut R,
    ) -> BeaconAction {
        self.reset_frame();
        let occupied = beacon.occupied_ddsat_slots;
        if let Some(slot) = self.state.ddsat_slot() {
            return if occupied.contains(slot) {
                self.state = SnState::DdsatReserved {
                    slot,
                    confirmed: true,
                };
                BeaconAction::Kept(slot)
            } else {
                self.state = SnState::SyncWait;
                BeaconAction::Lost(slot)
            };
        }
        let free: Vec<u8> = occupied.free_below(slots_per_state).collect();
        if free.is_empty() {
            self.pd = psa::update_pd(self.pd, false);
            return BeaconAction::NoFreeSlot;
        }
        let scripted = self.slot_script.pop_front().filter(|s| free.contains(s));
        let slot = match scripted {
            Some(s) => s,
            None => *free.choose(rng).expect("non-empty free list"),
        };
        self.state = SnState::DdsatReserved {
            slot,
            confirmed: false,
        };
        BeaconAction::Reserved(slot)
    }

    fn preferences(&self, own_empty: ChannelSet, sensed: &[ChannelId]) -> PreferredChannels {
        let pool = if own_empty.is_empty() {
            sensed.iter().copied().collect()
        } else {
            own_empty
        };
        match psa::preferred_channels(&self.estimates, pool) {
            Ok(p) => p,
            Err(_) => PreferredChannels {
                first: pool.iter().next().unwrap_or(sensed[0]),
                second: None,
            },
        }
    }

    /// Senses every listed channel and builds this node's DDSAT packet.
    ///
    /// # Panics
    /// If the node holds no DDSAT slot or `channels` is empty.
    pub fn on_own_ddsat_slot<M, R>(
        &mut self,
        channels: &[ChannelId],
        medium: &M,
        cfg: &DetectionConfig,
        rng: &mut R,
    ) -> DdsatPacket
    where
        M: PowerSampler + ?Sized,
        R: Rng + ?Sized,
    {
        let slot = self
            .state
            .ddsat_slot()
            .expect("transmitting without a DDSAT slot");
        assert!(!channels.is_empty(), "nothing to sense");
        let report = sensing::sense_all(self.id, channels, medium, cfg, rng);
        let empty = report.empty_set();
        let packet = DdsatPacket {
            sender: self.id,
            empty_channels: empty,
            requested_slots: self.requested_slots,
            priority_index: self.priority_index(),
            occupied_ddsat_slots: SlotSet::single(slot),
            preferred_channels: self.preferences(empty, channels),
        };
        self.last_report = Some(report);
        self.sent_pd = Some(self.pd);
        self.sent_priority = Some(packet.priority_index);
        packet
    }

    /// Records a DDSAT packet decoded on the control channel.
    pub fn on_heard(&mut self, heard: HeardPacket) {
        self.inbox.push(heard);
    }

    pub fn inbox(&self) -> &[HeardPacket] {
        &self.inbox
    }

    /// Fusion and allocation over the packets heard in slots the beacon
    /// confirmed. Every confirmed node computes this on its own.
    pub fn on_ddsat_state_end(
        &mut self,
        confirmed: SlotSet,
        channels: &[ChannelId],
        slots_per_state: u8,
    ) -> StateEndAction {
        let slot = match self.state {
            SnState::DdsatReserved {
                confirmed: false, ..
            } => return StateEndAction::Joining,
            SnState::DdsatReserved {
                slot,
                confirmed: true,
            } => slot,
            SnState::SyncWait | SnState::DataAllocated { .. } => return StateEndAction::Idle,
        };
        let participants: Vec<&DdsatPacket> = self
            .inbox
            .iter()
            .filter(|h| confirmed.contains(h.slot))
            .map(|h| &h.packet)
            .collect();
        if !participants.iter().any(|p| p.sender == self.id) {
            // Own packet lost; recover through the next beacon.
            self.state = SnState::SyncWait;
            return StateEndAction::Idle;
        }
        let reports: Vec<SensingReport> = participants
            .iter()
            .map(|p| SensingReport::from_empty_set(p.sender, channels, p.empty_channels))
            .collect();
        let fusion = sensing::fuse_majority(&reports, channels).expect("own report present");
        let requests: Vec<SlotRequest> =
            participants.iter().map(|p| SlotRequest::from(*p)).collect();
        let table = psa::allocate(&requests, fusion.empty_channels, slots_per_state)
            .expect("one packet per confirmed slot");
        let served = !table.unserved().contains(&self.id);
        self.pd = psa::update_pd(self.pd, served);
        let grant = table.grant(self.id);
        self.last_view = Some(LocalView { fusion, table });
        if !served {
            return StateEndAction::OutOfFrame;
        }
        if let Some(grant) = grant {
            self.state = SnState::DataAllocated { slot, grant };
        }
        StateEndAction::Served(grant)
    }

    /// Data packet to send in data slot `slot`, if this node holds it.
    pub fn on_data_slot(&mut self, slot: u8) -> Option<(ChannelId, DataPacket)> {
        let SnState::DataAllocated { grant, .. } = self.state else {
            return None;
        };
        if !grant.slots.contains(slot) {
            return None;
        }
        let sequence = self.sequence;
        self.sequence = self.sequence.wrapping_add(1);
        let payload = (0..DATA_PAYLOAD_BYTES)
            .map(|i| (sequence as usize).wrapping_add(i) as u8)
            .collect();
        Some((
            grant.channel,
            DataPacket {
                sender: self.id,
                sequence,
                payload,
            },
        ))
    }

    pub fn record_link_sample(&mut self, channel: ChannelId, measured_dbm: f64) {
        // Data never goes on the CCC, so the update cannot fail.
        let _ = self.estimates.update(channel, measured_dbm);
    }
}

/// Control-channel outcome of one DDSAT slot as the base node sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotObservation {
    Packet(NodeId),
    Collision,
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reservation {
    pub node: NodeId,
    pub frames_since_heard: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseNode {
    pub reservations: BTreeMap<u8, Reservation>,
    pub sensing_channels: Vec<ChannelId>,
}

impl BaseNode {
    pub fn new(sensing_channels: Vec<ChannelId>) -> Self {
        BaseNode {
            reservations: BTreeMap::new(),
            sensing_channels,
        }
    }

    pub fn on_ddsat_slot_result(&mut self, slot: u8, outcome: SlotObservation) {
        match outcome {
            SlotObservation::Packet(node) => {
                self.reservations.insert(
                    slot,
                    Reservation {
                        node,
                        frames_since_heard: 0,
                    },
                );
            }
            SlotObservation::Collision | SlotObservation::Silence => {
                if let Some(r) = self.reservations.get_mut(&slot) {
                    r.frames_since_heard += 1;
                    if r.frames_since_heard >= RESERVATION_LEASE_FRAMES {
                        self.reservations.remove(&slot);
                    }
                }
            }
        }
    }

    pub fn make_beacon(&self) -> BeaconPacket {
        BeaconPacket {
            occupied_ddsat_slots: self.reservations.keys().copied().collect(),
            sensing_channels: self.sensing_channels.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activity {
    AlwaysOn,
    /// Active with this probability, drawn once per super-frame.
    Bernoulli(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimaryNode {
    pub channel: ChannelId,
    pub activity: Activity,
    pub power_dbm: f64,
}

impl PrimaryNode {
    pub fn draw_activity<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        match self.activity {
            Activity::AlwaysOn => true,
            Activity::Bernoulli(p) => rng.random_bool(p),
        }
    }
}
