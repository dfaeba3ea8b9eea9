//! Byte layouts for the three packet types carried by the simulated air.
//!
//! Every packet ends with a big-endian CRC-16/CCITT-FALSE over all preceding
//! bytes. Multi-byte integers are big-endian.
//!
//! ```text
//! beacon: [0x01][occupied bitmap][M][channel_1 .. channel_M][crc:2]
//! ddsat:  [0x02][sender][empty-channel bitmap][requested][priority:2]
//!         [occupied bitmap][first << 4 | second][crc:2]
//! data:   [0x03][sender][sequence:4][len][payload: len][crc:2]
//! ```
//!
//! A second preferred channel nibble of 0 means "no second preference".

use thiserror::Error;

use crate::types::{ChannelId, ChannelSet, NodeId, PreferredChannels, SlotSet};

pub const BEACON_TYPE: u8 = 0x01;
pub const DDSAT_TYPE: u8 = 0x02;
pub const DATA_TYPE: u8 = 0x03;

pub const MAX_SENSING_CHANNELS: usize = 15;
pub const MAX_PAYLOAD: usize = 255;
const CRC_LEN: usize = 2;
const DDSAT_LEN: usize = 8 + CRC_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated packet: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{extra} unexpected trailing bytes")]
    Trailing { extra: usize },
    #[error("unexpected packet type 0x{found:02x} (expected 0x{expected:02x})")]
    BadType { expected: u8, found: u8 },
    #[error("checksum mismatch: computed 0x{computed:04x}, carried 0x{carried:04x}")]
    BadCrc { computed: u16, carried: u16 },
    #[error("invariant violated: {0}")]
    InvariantViolation(&'static str),
}

const CRC_TABLE: [u16; 256] = {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
};

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
pub fn crc16(bytes: &[u8]) -> u16 {
    bytes.iter().fold(0xFFFF, |crc, &b| {
        (crc << 8) ^ CRC_TABLE[usize::from((crc >> 8) as u8 ^ b)]
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeaconPacket {
    pub occupied_ddsat_slots: SlotSet,
    pub sensing_channels: Vec<ChannelId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DdsatPacket {
    pub sender: NodeId,
    pub empty_channels: ChannelSet,
    pub requested_slots: u8,
    pub priority_index: u16,
    pub occupied_ddsat_slots: SlotSet,
    pub preferred_channels: PreferredChannels,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPacket {
    pub sender: NodeId,
    pub sequence: u32,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Beacon(BeaconPacket),
    Ddsat(DdsatPacket),
    Data(DataPacket),
}

/// Bounds that the bitmaps are validated against. Both limits are at most 8
/// since each bitmap is one byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireConfig {
    slots_per_state: u8,
    num_channels: u8,
}

impl Default for WireConfig {
    fn default() -> Self {
        WireConfig {
            slots_per_state: 4,
            num_channels: 4,
        }
    }
}

fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let crc = crc16(&body);
    body.extend_from_slice(&crc.to_be_bytes());
    body
}

fn check_frame(bytes: &[u8], expected_type: u8, len: usize) -> Result<(), WireError> {
    if bytes.len() < len {
        return Err(WireError::Truncated {
            needed: len,
            have: bytes.len(),
        });
    }
    if bytes.len() > len {
        return Err(WireError::Trailing {
            extra: bytes.len() - len,
        });
    }
    debug_assert_eq!(bytes[0], expected_type);
    let computed = crc16(&bytes[..len - CRC_LEN]);
    let carried = u16::from_be_bytes([bytes[len - 2], bytes[len - 1]]);
    if computed != carried {
        return Err(WireError::BadCrc { computed, carried });
    }
    Ok(())
}

fn check_type(bytes: &[u8], expected: u8) -> Result<(), WireError> {
    match bytes.first() {
        None => Err(WireError::Truncated { needed: 1, have: 0 }),
        Some(&found) if found != expected => Err(WireError::BadType { expected, found }),
        Some(_) => Ok(()),
    }
}

impl WireConfig {
    /// # Panics
    /// If either bound is outside 1..=8.
    pub fn new(slots_per_state: u8, num_channels: u8) -> Self {
        assert!(
            (1..=8).contains(&slots_per_state),
            "slots per state must be 1..=8"
        );
        assert!(
            (2..=8).contains(&num_channels),
            "channel count must be 2..=8"
        );
        WireConfig {
            slots_per_state,
            num_channels,
        }
    }

    pub fn slots_per_state(&self) -> u8 {
        self.slots_per_state
    }

    pub fn num_channels(&self) -> u8 {
        self.num_channels
    }

    fn slot_mask(&self) -> u8 {
        (((1u16) << self.slots_per_state) - 1) as u8
    }

    fn channel_mask(&self) -> u8 {
        (((1u16) << self.num_channels) - 1) as u8
    }

    fn data_channel(&self, ch: ChannelId) -> bool {
        !ch.is_ccc() && ch.index() <= self.num_channels
    }

    fn check_beacon(&self, p: &BeaconPacket) -> Result<(), WireError> {
        if p.sensing_channels.len() > MAX_SENSING_CHANNELS {
            return Err(WireError::InvariantViolation(
                "more than 15 sensing channels",
            ));
        }
        if p.occupied_ddsat_slots.0 & !self.slot_mask() != 0 {
            return Err(WireError::InvariantViolation(
                "occupied bitmap has bits beyond N",
            ));
        }
        if p.sensing_channels.iter().any(|c| c.is_ccc()) {
            return Err(WireError::InvariantViolation(
                "CCC listed as a sensing channel",
            ));
        }
        if p.sensing_channels.iter().any(|c| !self.data_channel(*c)) {
            return Err(WireError::InvariantViolation(
                "sensing channel out of range",
            ));
        }
        Ok(())
    }

    fn check_ddsat(&self, p: &DdsatPacket) -> Result<(), WireError> {
        if !p.sender.is_valid_secondary() {
            return Err(WireError::InvariantViolation(
                "sender is not a secondary node id",
            ));
        }
        if p.empty_channels.contains(ChannelId::CCC) {
            return Err(WireError::InvariantViolation(
                "CCC marked as an empty channel",
            ));
        }
        if p.empty_channels.0 & !self.channel_mask() != 0 {
            return Err(WireError::InvariantViolation(
                "empty-channel bitmap out of range",
            ));
        }
        if p.requested_slots > self.slots_per_state {
            return Err(WireError::InvariantViolation("requested slots exceed N"));
        }
        if p.occupied_ddsat_slots.0 & !self.slot_mask() != 0 {
            return Err(WireError::InvariantViolation(
                "occupied bitmap has bits beyond N",
            ));
        }
        let pref = p.preferred_channels;
        if pref.iter().any(|c| !self.data_channel(c)) {
            return Err(WireError::InvariantViolation(
                "preferred channel is the CCC or out of range",
            ));
        }
        if pref.second == Some(pref.first) {
            return Err(WireError::InvariantViolation(
                "preferred channels are equal",
            ));
        }
        Ok(())
    }

    pub fn encode_beacon(&self, p: &BeaconPacket) -> Result<Vec<u8>, WireError> {
        self.check_beacon(p)?;
        let mut body = Vec::with_capacity(3 + p.sensing_channels.len() + CRC_LEN);
        body.push(BEACON_TYPE);
        body.push(p.occupied_ddsat_slots.0);
        body.push(p.sensing_channels.len() as u8);
        body.extend(p.sensing_channels.iter().map(|c| c.index()));
        Ok(seal(body))
    }

    pub fn decode_beacon(&self, bytes: &[u8]) -> Result<BeaconPacket, WireError> {
        check_type(bytes, BEACON_TYPE)?;
        if bytes.len() < 3 {
            return Err(WireError::Truncated {
                needed: 3 + CRC_LEN,
                have: bytes.len(),
            });
        }
        let count = usize::from(bytes[2]);
        check_frame(bytes, BEACON_TYPE, 3 + count + CRC_LEN)?;
        let sensing_channels = bytes[3..3 + count]
            .iter()
            .map(|&i| ChannelId::new(i).ok_or(WireError::InvariantViolation("channel index 0")))
            .collect::<Result<Vec<_>, _>>()?;
        let p = BeaconPacket {
            occupied_ddsat_slots: SlotSet(bytes[1]),
            sensing_channels,
        };
        self.check_beacon(&p)?;
        Ok(p)
    }

    pub fn encode_ddsat(&self, p: &DdsatPacket) -> Result<Vec<u8>, WireError> {
        self.check_ddsat(p)?;
        let pref = p.preferred_channels;
        let nibbles = (pref.first.index() << 4) | pref.second.map_or(0, |c| c.index());
        let [pi_hi, pi_lo] = p.priority_index.to_be_bytes();
        Ok(seal(vec![
            DDSAT_TYPE,
            p.sender.0,
            p.empty_channels.0,
            p.requested_slots,
            pi_hi,
            pi_lo,
            p.occupied_ddsat_slots.0,
            nibbles,
        ]))
    }

    pub fn decode_ddsat(&self, bytes: &[u8]) -> Result<DdsatPacket, WireError> {
        check_type(bytes, DDSAT_TYPE)?;
        check_frame(bytes, DDSAT_TYPE, DDSAT_LEN)?;
        let first = ChannelId::new(bytes[7] >> 4).ok_or(WireError::InvariantViolation(
            "first preferred channel missing",
        ))?;
        let p = DdsatPacket {
            sender: NodeId(bytes[1]),
            empty_channels: ChannelSet(bytes[2]),
            requested_slots: bytes[3],
            priority_index: u16::from_be_bytes([bytes[4], bytes[5]]),
            occupied_ddsat_slots: SlotSet(bytes[6]),
            preferred_channels: PreferredChannels {
                first,
                second: ChannelId::new(bytes[7] & 0x0F),
            },
        };
        self.check_ddsat(&p)?;
        Ok(p)
    }

    pub fn encode_data(&self, p: &DataPacket) -> Result<Vec<u8>, WireError> {
        if p.payload.len() > MAX_PAYLOAD {
            return Err(WireError::InvariantViolation(
                "payload longer than 255 bytes",
            ));
        }
        let mut body = Vec::with_capacity(7 + p.payload.len() + CRC_LEN);
        body.push(DATA_TYPE);
        body.push(p.sender.0);
        body.extend_from_slice(&p.sequence.to_be_bytes());
        body.push(p.payload.len() as u8);
        body.extend_from_slice(&p.payload);
        Ok(seal(body))
    }

    pub fn decode_data(&self, bytes: &[u8]) -> Result<DataPacket, WireError> {
        check_type(bytes, DATA_TYPE)?;
        if bytes.len() < 7 {
            return Err(WireError::Truncated {
                needed: 7 + CRC_LEN,
                have: bytes.len(),
            });
        }
        let len = usize::from(bytes[6]);
        check_frame(bytes, DATA_TYPE, 7 + len + CRC_LEN)?;
        Ok(DataPacket {
            sender: NodeId(bytes[1]),
            sequence: u32::from_be_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]),
            payload: bytes[7..7 + len].to_vec(),
        })
    }

    pub fn encode(&self, p: &Packet) -> Result<Vec<u8>, WireError> {
        match p {
            Packet::Beacon(b) => self.encode_beacon(b),
            Packet::Ddsat(d) => self.encode_ddsat(d),
            Packet::Data(d) => self.encode_data(d),
        }
    }

    /// Dispatches on the type byte.
    pub fn decode(&self, bytes: &[u8]) -> Result<Packet, WireError> {
        match bytes.first() {
            Some(&BEACON_TYPE) => self.decode_beacon(bytes).map(Packet::Beacon),
            Some(&DDSAT_TYPE) => self.decode_ddsat(bytes).map(Packet::Ddsat),
            Some(&DATA_TYPE) => self.decode_data(bytes).map(Packet::Data),
            Some(&found) => Err(WireError::BadType {
                expected: BEACON_TYPE,
                found,
            }),
            None => Err(WireError::Truncated { needed: 1, have: 0 }),
        }
    }
}
