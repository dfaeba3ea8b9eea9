#![allow(dead_code)]

use std::collections::BTreeMap;

use ddsat::types::{ChannelId, ChannelSet, NodeId, PreferredChannels, SlotSet};
use ddsat::wire::{BeaconPacket, DataPacket, DdsatPacket, Packet, WireConfig};
use rand::seq::SliceRandom;
use rand::Rng;

pub const VECTORS: &str = include_str!("../data/wire_vectors.txt");

pub struct Vector {
    pub kind: String,
    pub bytes: Vec<u8>,
    pub fields: BTreeMap<String, String>,
}

pub fn unhex(s: &str) -> Vec<u8> {
    assert!(s.len().is_multiple_of(2), "odd hex length");
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).expect("hex digit"))
        .collect()
}

pub fn vectors() -> Vec<Vector> {
    VECTORS
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let cols: Vec<&str> = l.split('|').map(str::trim).collect();
            assert_eq!(cols.len(), 3, "bad vector line {l}");
            let fields = cols[2]
                .split_whitespace()
                .map(|kv| {
                    let (k, v) = kv.split_once('=').expect("key=value");
                    (k.to_string(), v.to_string())
                })
                .collect();
            Vector {
                kind: cols[0].to_string(),
                bytes: unhex(cols[1]),
                fields,
            }
        })
        .collect()
}

fn list(v: &str) -> Vec<u8> {
    v.split(',').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect()
}

fn ch(i: u8) -> ChannelId {
    ChannelId::new(i).unwrap()
}

/// The packet a vector's field column describes, built without the codec.
pub fn expected_packet(v: &Vector) -> Packet {
    let f = |k: &str| v.fields[k].as_str();
    match v.kind.as_str() {
        "beacon" => Packet::Beacon(BeaconPacket {
            occupied_ddsat_slots: list(f("occupied")).into_iter().collect(),
            sensing_channels: list(f("channels")).into_iter().map(ch).collect(),
        }),
        "ddsat" => {
            let (first, second) = f("preferred").split_once(',').unwrap();
            Packet::Ddsat(DdsatPacket {
                sender: NodeId(f("sender").parse().unwrap()),
                empty_channels: list(f("empty")).into_iter().map(ch).collect(),
                requested_slots: f("requested").parse().unwrap(),
                priority_index: f("priority").parse().unwrap(),
                occupied_ddsat_slots: list(f("occupied")).into_iter().collect(),
                preferred_channels: PreferredChannels {
                    first: ch(first.parse().unwrap()),
                    second: (second != "-").then(|| ch(second.parse().unwrap())),
                },
            })
        }
        "data" => Packet::Data(DataPacket {
            sender: NodeId(f("sender").parse().unwrap()),
            sequence: f("sequence").parse().unwrap(),
            payload: unhex(f("payload")),
        }),
        other => panic!("unknown vector kind {other}"),
    }
}

pub fn random_layout<R: Rng>(rng: &mut R) -> WireConfig {
    WireConfig::new(rng.random_range(1..=8), rng.random_range(2..=8))
}

fn data_channels(layout: &WireConfig) -> Vec<ChannelId> {
    (2..=layout.num_channels()).map(ch).collect()
}

fn random_slots<R: Rng>(rng: &mut R, layout: &WireConfig) -> SlotSet {
    SlotSet(rng.random::<u8>() & ((1u16 << layout.slots_per_state()) - 1) as u8)
}

pub fn random_beacon<R: Rng>(rng: &mut R, layout: &WireConfig) -> BeaconPacket {
    let pool = data_channels(layout);
    let len = rng.random_range(0..=15);
    BeaconPacket {
        occupied_ddsat_slots: random_slots(rng, layout),
        sensing_channels: (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect(),
    }
}

pub fn random_ddsat<R: Rng>(rng: &mut R, layout: &WireConfig) -> DdsatPacket {
    let mut pool = data_channels(layout);
    let empty: ChannelSet = pool.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
    pool.shuffle(rng);
    let second = if pool.len() > 1 && rng.random_bool(0.8) {
        Some(pool[1])
    } else {
        None
    };
    DdsatPacket {
        sender: NodeId(rng.random_range(1..=254)),
        empty_channels: empty,
        requested_slots: rng.random_range(0..=layout.slots_per_state()),
        priority_index: rng.random(),
        occupied_ddsat_slots: random_slots(rng, layout),
        preferred_channels: PreferredChannels { first: pool[0], second },
    }
}

pub fn random_data<R: Rng>(rng: &mut R) -> DataPacket {
    let len = rng.random_range(0..=255);
    DataPacket {
        sender: NodeId(rng.random_range(1..=254)),
        sequence: rng.random(),
        payload: (0..len).map(|_| rng.random()).collect(),
    }
}
