//! Shared vocabulary: channels, node identities, traffic classes and the
//! super-frame clock.
//!
//! A super-frame is one Sync slot (the beacon), followed by `N` DDSAT slots
//! and `N` Data slots. Ticks count slots from the start of the simulation.

use std::fmt;

/// 1-based channel index. Channel 1 is always the common control channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelId(u8);

impl ChannelId {
    pub const CCC: ChannelId = ChannelId(1);

    /// Returns `None` for index 0.
    pub const fn new(index: u8) -> Option<ChannelId> {
        if index == 0 {
            None
        } else {
            Some(ChannelId(index))
        }
    }

    pub const fn index(self) -> u8 {
        self.0
    }

    pub const fn is_ccc(self) -> bool {
        self.0 == 1
    }

    /// Bit position used by channel bitmaps (channel `i` maps to bit `i - 1`).
    pub const fn bit(self) -> u8 {
        self.0 - 1
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

/// Node identity. 0 is the base node; secondary nodes use 1..=254.
/// Primary nodes never transmit packets and carry no identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u8);

impl NodeId {
    pub const BASE: NodeId = NodeId(0);
    pub const MAX_SECONDARY: u8 = 254;

    pub const fn is_valid_secondary(self) -> bool {
        self.0 >= 1 && self.0 <= Self::MAX_SECONDARY
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            f.write_str("BN")
        } else {
            write!(f, "SN{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrafficClass {
    Normal,
    RealTime,
}

impl TrafficClass {
    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::Normal => "normal",
            TrafficClass::RealTime => "real_time",
        }
    }
}

/// Data-type weights for the priority index. Real-time must outrank normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DtValues {
    pub normal: u16,
    pub real_time: u16,
}

impl Default for DtValues {
    fn default() -> Self {
        DtValues {
            normal: 1,
            real_time: 10,
        }
    }
}

impl DtValues {
    pub fn dt(&self, class: TrafficClass) -> u16 {
        match class {
            TrafficClass::Normal => self.normal,
            TrafficClass::RealTime => self.real_time,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.real_time > self.normal
    }
}

/// Position inside one super-frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FramePhase {
    Sync,
    Ddsat(u8),
    Data(u8),
}

impl fmt::Display for FramePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FramePhase::Sync => f.write_str("Sync"),
            FramePhase::Ddsat(s) => write!(f, "Ddsat({s})"),
            FramePhase::Data(s) => write!(f, "Data({s})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperFrameClock {
    slots_per_state: u8,
    /// Virtual seconds per slot, excluding the guard interval.
    pub slot_duration: f64,
    pub guard: f64,
}

impl Default for SuperFrameClock {
    fn default() -> Self {
        SuperFrameClock::new(4)
    }
}

impl SuperFrameClock {
    /// # Panics
    /// If `slots_per_state` is zero.
    pub fn new(slots_per_state: u8) -> Self {
        assert!(
            slots_per_state >= 1,
            "a super-frame needs at least one slot per state"
        );
        SuperFrameClock {
            slots_per_state,
            slot_duration: 1.0,
            guard: 0.1,
        }
    }

    pub fn slots_per_state(&self) -> u8 {
        self.slots_per_state
    }

    pub fn frame_len(&self) -> u64 {
        1 + 2 * u64::from(self.slots_per_state)
    }

    pub fn phase_at(&self, tick: u64) -> (u64, FramePhase) {
        let len = self.frame_len();
        let frame = tick / len;
        let offset = tick % len;
        let n = u64::from(self.slots_per_state);
        let phase = if offset == 0 {
            FramePhase::Sync
        } else if offset <= n {
            FramePhase::Ddsat((offset - 1) as u8)
        } else {
            FramePhase::Data((offset - 1 - n) as u8)
        };
        (frame, phase)
    }

    /// Inverse of [`phase_at`](Self::phase_at).
    pub fn tick_of(&self, frame: u64, phase: FramePhase) -> u64 {
        let n = u64::from(self.slots_per_state);
        let offset = match phase {
            FramePhase::Sync => 0,
            FramePhase::Ddsat(s) => 1 + u64::from(s),
            FramePhase::Data(s) => 1 + n + u64::from(s),
        };
        frame * self.frame_len() + offset
    }

    /// Virtual start time of a tick in seconds (slot plus guard per tick).
    pub fn time_of(&self, tick: u64) -> f64 {
        tick as f64 * (self.slot_duration + self.guard)
    }
}

/// Set of DDSAT or Data slot indices (bit `i` set means slot `i` is in the set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SlotSet(pub u8);

impl SlotSet {
    pub const EMPTY: SlotSet = SlotSet(0);

    pub fn single(slot: u8) -> SlotSet {
        SlotSet(1 << slot)
    }

    pub fn contains(self, slot: u8) -> bool {
        slot < 8 && self.0 & (1 << slot) != 0
    }

    pub fn insert(&mut self, slot: u8) {
        self.0 |= 1 << slot;
    }

    pub fn remove(&mut self, slot: u8) {
        self.0 &= !(1 << slot);
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = u8> {
        (0..8u8).filter(move |s| self.contains(*s))
    }

    /// Slots below `n` that are not in the set.
    pub fn free_below(self, n: u8) -> impl Iterator<Item = u8> {
        (0..n).filter(move |s| !self.contains(*s))
    }
}

impl FromIterator<u8> for SlotSet {
    fn from_iter<I: IntoIterator<Item = u8>>(iter: I) -> Self {
        let mut set = SlotSet::EMPTY;
        for s in iter {
            set.insert(s);
        }
        set
    }
}

/// Set of channels as a bitmap (channel `i` at bit `i - 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ChannelSet(pub u8);

impl ChannelSet {
    pub const EMPTY: ChannelSet = ChannelSet(0);

    pub fn contains(self, ch: ChannelId) -> bool {
        ch.index() <= 8 && self.0 & (1 << ch.bit()) != 0
    }

    pub fn insert(&mut self, ch: ChannelId) {
        self.0 |= 1 << ch.bit();
    }

    pub fn remove(&mut self, ch: ChannelId) {
        self.0 &= !(1 << ch.bit());
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Channels in ascending index order.
    pub fn iter(self) -> impl Iterator<Item = ChannelId> {
        (1..=8u8)
            .filter_map(ChannelId::new)
            .filter(move |c| self.contains(*c))
    }
}

impl FromIterator<ChannelId> for ChannelSet {
    fn from_iter<I: IntoIterator<Item = ChannelId>>(iter: I) -> Self {
        let mut set = ChannelSet::EMPTY;
        for c in iter {
            set.insert(c);
        }
        set
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, c) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", c.index())?;
        }
        f.write_str("}")
    }
}

/// A node's two preferred data channels. `second` is absent when only one
/// candidate channel was available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PreferredChannels {
    pub first: ChannelId,
    pub second: Option<ChannelId>,
}

impl PreferredChannels {
    pub fn pair(first: ChannelId, second: ChannelId) -> Self {
        PreferredChannels {
            first,
            second: Some(second),
        }
    }

    pub fn iter(self) -> impl Iterator<Item = ChannelId> {
        std::iter::once(self.first).chain(self.second)
    }
}
