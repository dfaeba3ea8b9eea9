//! Simulated radio medium: mean received powers with lognormal shadowing, and
//! per-slot collision resolution with no capture effect.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::sensing::PowerSampler;
use crate::types::{ChannelId, NodeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub sender: NodeId,
    pub bytes: Vec<u8>,
}

/// What every receiver tuned to a channel observes at the end of a slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotOutcome {
    Silence,
    Delivered(Transmission),
    Collision(Vec<NodeId>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimarySource {
    pub channel: ChannelId,
    pub power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    pub noise_floor_dbm: f64,
    pub shadow_sigma_db: f64,
    /// Mean power at which a peer's data transmission is received.
    pub peer_power_dbm: f64,
    primary: Option<PrimarySource>,
    primary_active: bool,
    link_gains_db: BTreeMap<(NodeId, ChannelId), f64>,
    in_flight: BTreeMap<ChannelId, Vec<Transmission>>,
}

impl Medium {
    pub fn new(noise_floor_dbm: f64, shadow_sigma_db: f64, peer_power_dbm: f64) -> Self {
        Medium {
            noise_floor_dbm,
            shadow_sigma_db,
            peer_power_dbm,
            primary: None,
            primary_active: false,
            link_gains_db: BTreeMap::new(),
            in_flight: BTreeMap::new(),
        }
    }

    pub fn with_primary(mut self, source: PrimarySource) -> Self {
        self.primary = Some(source);
        self
    }

    pub fn set_link_gain(&mut self, node: NodeId, channel: ChannelId, gain_db: f64) {
        self.link_gains_db.insert((node, channel), gain_db);
    }

    pub fn set_primary_active(&mut self, active: bool) {
        self.primary_active = active;
    }

    /// Channel the primary is transmitting on right now, if any.
    pub fn active_primary_channel(&self) -> Option<ChannelId> {
        self.primary
            .filter(|_| self.primary_active)
            .map(|p| p.channel)
    }

    fn shadow<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.shadow_sigma_db == 0.0 {
            0.0
        } else {
            Normal::new(0.0, self.shadow_sigma_db)
                .expect("finite non-negative sigma")
                .sample(rng)
        }
    }

    /// Mean power before shadowing: the loudest active source on the channel,
    /// or the noise floor.
    pub fn mean_power(&self, channel: ChannelId) -> f64 {
        let primary = self
            .primary
            .filter(|p| self.primary_active && p.channel == channel)
            .map(|p| p.power_dbm);
        let peers = self
            .in_flight
            .get(&channel)
            .filter(|t| !t.is_empty())
            .map(|_| self.peer_power_dbm);
        primary
            .into_iter()
            .chain(peers)
            .fold(None, |acc: Option<f64>, p| {
                Some(acc.map_or(p, |a| a.max(p)))
            })
            .unwrap_or(self.noise_floor_dbm)
    }

    /// Received power of `node`'s own data link on `channel`.
    pub fn sample_link<R: Rng + ?Sized>(
        &self,
        node: NodeId,
        channel: ChannelId,
        rng: &mut R,
    ) -> f64 {
        let gain = self
            .link_gains_db
            .get(&(node, channel))
            .copied()
            .unwrap_or(0.0);
        self.peer_power_dbm + gain + self.shadow(rng)
    }

    pub fn transmit(&mut self, channel: ChannelId, sender: NodeId, bytes: Vec<u8>) {
        self.in_flight
            .entry(channel)
            .or_default()
            .push(Transmission { sender, bytes });
    }

    /// Ends the slot on one channel; other channels are untouched.
    pub fn resolve(&mut self, channel: ChannelId) -> SlotOutcome {
        let mut txs = self.in_flight.remove(&channel).unwrap_or_default();
        match txs.len() {
            0 => SlotOutcome::Silence,
            1 => SlotOutcome::Delivered(txs.pop().expect("one transmission")),
            _ => SlotOutcome::Collision(txs.into_iter().map(|t| t.sender).collect()),
        }
    }

    /// Ends the slot on every channel with traffic, ascending channel order.
    pub fn resolve_all(&mut self) -> Vec<(ChannelId, SlotOutcome)> {
        let channels: Vec<ChannelId> = self.in_flight.keys().copied().collect();
        channels.into_iter().map(|c| (c, self.resolve(c))).collect()
    }
}

impl PowerSampler for Medium {
    fn sample_power<R: Rng + ?Sized>(
        &self,
        _receiver: NodeId,
        channel: ChannelId,
        rng: &mut R,
    ) -> f64 {
        self.mean_power(channel) + self.shadow(rng)
    }
}
