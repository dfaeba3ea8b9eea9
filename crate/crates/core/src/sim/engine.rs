//! Tick-by-tick super-frame engine.
//!
//! Order inside a tick is fixed: at Sync the primary's activity for the frame
//! is drawn, the beacon is built and every present node handles it in
//! ascending id order. In each DDSAT slot the owners sense and transmit on
//! the control channel, then the outcome reaches the base node and every
//! node. After the last DDSAT slot each node runs fusion and allocation on
//! its own inbox, ascending id. In each data slot granted owners transmit,
//! the monitor checks every transmission, and senders of delivered packets
//! update their channel estimates. One record per configured node is logged
//! after the last data slot.
//!
//! Randomness comes from three ChaCha8 streams of one seed (slot choice,
//! shadowing, primary activity), so a knob that changes one kind of draw
//! leaves the others alone.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::{FrameRecord, MetricsLog, MonitorStats, NodeStatus, RunMeta};
use crate::nodes::{
    BaseNode, BeaconAction, HeardPacket, LocalView, PrimaryNode, SecondaryNode, SlotObservation,
    StateEndAction,
};
use crate::scenario::{ScenarioConfig, ScenarioError, SecondaryConfig};
use crate::sensing::{DetectionConfig, Verdict};
use crate::sim::medium::{Medium, PrimarySource, SlotOutcome};
use crate::types::{ChannelId, ChannelSet, FramePhase, NodeId, SlotSet, SuperFrameClock};
use crate::wire::WireConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(#[from] ScenarioError),
    #[error("no secondary node {0} in the scenario")]
    UnknownNode(NodeId),
}

const SLOT_STREAM: u64 = 1;
const SHADOW_STREAM: u64 = 2;
const PRIMARY_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn slots_text(s: SlotSet) -> String {
    let v: Vec<String> = s.iter().map(|x| x.to_string()).collect();
    format!("{{{}}}", v.join(","))
}

#[derive(Debug, Clone, Default)]
struct FrameScratch {
    confirmed: SlotSet,
    status: Vec<NodeStatus>,
    reference: Option<LocalView>,
}

pub struct Engine {
    scenario: ScenarioConfig,
    clock: SuperFrameClock,
    wire: WireConfig,
    channels: Vec<ChannelId>,
    detection: DetectionConfig,
    base: BaseNode,
    specs: Vec<SecondaryConfig>,
    nodes: Vec<SecondaryNode>,
    primary: Option<PrimaryNode>,
    medium: Medium,
    slot_rng: ChaCha8Rng,
    shadow_rng: ChaCha8Rng,
    primary_rng: ChaCha8Rng,
    tick: u64,
    scratch: FrameScratch,
    log: MetricsLog,
    trace: Option<String>,
}

impl Engine {
    pub fn new(scenario: &ScenarioConfig, seed: u64) -> Result<Self, SimError> {
        scenario.validate()?;
        let n = scenario.slots_per_state;
        let channels = scenario.sensing_channels();
        let r = &scenario.radio;
        let mut medium = Medium::new(r.noise_floor_dbm, r.shadow_sigma_db, r.peer_power_dbm);
        let primary = scenario.primary.map(|p| {
            let channel = ChannelId::new(p.channel).expect("validated channel");
            PrimaryNode {
                channel,
                activity: p.activity,
                power_dbm: p.power_dbm,
            }
        });
        if let Some(p) = primary {
            medium = medium.with_primary(PrimarySource {
                channel: p.channel,
                power_dbm: p.power_dbm,
            });
        }
        let nodes = scenario
            .secondaries
            .iter()
            .map(|s| {
                SecondaryNode::new(
                    NodeId(s.id),
                    s.traffic,
                    scenario.dt.dt(s.traffic),
                    s.requested_slots,
                )
            })
            .collect();
        Ok(Engine {
            clock: SuperFrameClock::new(n),
            wire: WireConfig::new(n, scenario.num_channels),
            detection: DetectionConfig {
                threshold_dbm: r.threshold_dbm,
            },
            base: BaseNode::new(channels.clone()),
            channels,
            specs: scenario.secondaries.clone(),
            nodes,
            primary,
            medium,
            slot_rng: stream(seed, SLOT_STREAM),
            shadow_rng: stream(seed, SHADOW_STREAM),
            primary_rng: stream(seed, PRIMARY_STREAM),
            tick: 0,
            scratch: FrameScratch::default(),
            log: MetricsLog {
                meta: RunMeta {
                    seed,
                    scenario_hash: scenario.hash(),
                    frames: 0,
                    slots_per_state: n,
                },
                ..MetricsLog::default()
            },
            trace: None,
            scenario: scenario.clone(),
        })
    }

    /// Forces `node`'s next DDSAT slot picks (used while the slot is free).
    pub fn script_slot_choices(
        &mut self,
        node: NodeId,
        slots: impl IntoIterator<Item = u8>,
    ) -> Result<(), SimError> {
        let sn = self
            .nodes
            .iter_mut()
            .find(|n| n.id == node)
            .ok_or(SimError::UnknownNode(node))?;
        sn.script_slot_choices(slots);
        Ok(())
    }

    /// Starts collecting a human-readable per-frame trace.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(String::new);
    }

    pub fn trace(&self) -> Option<&str> {
        self.trace.as_deref()
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Frame and phase of the next tick to run.
    pub fn next_phase(&self) -> (u64, FramePhase) {
        self.clock.phase_at(self.tick)
    }

    pub fn nodes(&self) -> &[SecondaryNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&SecondaryNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn base(&self) -> &BaseNode {
        &self.base
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    pub fn monitor(&self) -> &MonitorStats {
        &self.log.monitor
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn into_log(self) -> MetricsLog {
        self.log
    }

    fn note(&mut self, line: impl FnOnce() -> String) {
        if let Some(t) = self.trace.as_mut() {
            t.push_str(&line());
            t.push('\n');
        }
    }

    pub fn step_tick(&mut self) {
        let (frame, phase) = self.clock.phase_at(self.tick);
        match phase {
            FramePhase::Sync => self.sync(frame),
            FramePhase::Ddsat(s) => {
                self.ddsat_slot(s);
                if s + 1 == self.clock.slots_per_state() {
                    self.ddsat_end();
                }
            }
            FramePhase::Data(s) => {
                self.data_slot(s);
                if s + 1 == self.clock.slots_per_state() {
                    self.end_frame(frame);
                }
            }
        }
        self.tick += 1;
    }

    /// Steps until `frames` more super-frames have ended. A partly run frame
    /// counts as one.
    pub fn run_frames(&mut self, frames: u64) {
        let target = (self.tick / self.clock.frame_len() + frames) * self.clock.frame_len();
        while self.tick < target {
            self.step_tick();
        }
    }

    fn sync(&mut self, frame: u64) {
        let time = self.clock.time_of(self.tick);
        self.note(|| format!("frame {frame} t={time:.1}s"));
        let primary_on = self
            .primary
            .is_some_and(|p| p.draw_activity(&mut self.primary_rng));
        self.medium.set_primary_active(primary_on);
        self.scratch = FrameScratch {
            status: vec![NodeStatus::Absent; self.nodes.len()],
            ..FrameScratch::default()
        };
        if let Some(p) = self.primary {
            self.note(|| {
                format!(
                    "  primary ch{}: {}",
                    p.channel.index(),
                    if primary_on { "on" } else { "off" }
                )
            });
        }

        let beacon = self.base.make_beacon();
        let bytes = self
            .wire
            .encode_beacon(&beacon)
            .expect("beacon within layout");
        let beacon = self
            .wire
            .decode_beacon(&bytes)
            .expect("control channel is error-free");
        self.scratch.confirmed = beacon.occupied_ddsat_slots;
        let sensing: Vec<String> = beacon
            .sensing_channels
            .iter()
            .map(|c| c.index().to_string())
            .collect();
        self.note(|| {
            format!(
                "  beacon: occupied={} sensing={}",
                slots_text(beacon.occupied_ddsat_slots),
                sensing.join(",")
            )
        });

        let n = self.clock.slots_per_state();
        for i in 0..self.nodes.len() {
            if !self.specs[i].present_in(frame) {
                self.nodes[i].leave();
                continue;
            }
            let node = &mut self.nodes[i];
            let action = node.on_beacon(&beacon, n, &mut self.slot_rng);
            let id = node.id;
            self.scratch.status[i] = NodeStatus::SyncWait;
            self.note(|| match action {
                BeaconAction::Kept(s) => format!("  {id}: keeps ddsat slot {s}"),
                BeaconAction::Reserved(s) => format!("  {id}: reserves ddsat slot {s}"),
                BeaconAction::Lost(s) => format!("  {id}: slot {s} not confirmed, back to sync"),
                BeaconAction::NoFreeSlot => format!("  {id}: no free ddsat slot"),
            });
        }
    }

    fn present(&self, i: usize) -> bool {
        self.scratch
            .status
            .get(i)
            .is_some_and(|s| *s != NodeStatus::Absent)
    }

    fn ddsat_slot(&mut self, slot: u8) {
        for i in 0..self.nodes.len() {
            if !self.present(i) || self.nodes[i].state.ddsat_slot() != Some(slot) {
                continue;
            }
            let packet = self.nodes[i].on_own_ddsat_slot(
                &self.channels,
                &self.medium,
                &self.detection,
                &mut self.shadow_rng,
            );
            let bytes = self
                .wire
                .encode_ddsat(&packet)
                .expect("packet within layout");
            self.medium.transmit(ChannelId::CCC, packet.sender, bytes);
        }
        match self.medium.resolve(ChannelId::CCC) {
            SlotOutcome::Silence => {
                self.base
                    .on_ddsat_slot_result(slot, SlotObservation::Silence);
                self.note(|| format!("  ddsat {slot}: silence"));
            }
            SlotOutcome::Collision(senders) => {
                self.log.monitor.ddsat_collisions += 1;
                self.base
                    .on_ddsat_slot_result(slot, SlotObservation::Collision);
                let names: Vec<String> = senders.iter().map(|s| s.to_string()).collect();
                self.note(|| format!("  ddsat {slot}: collision {}", names.join(" ")));
            }
            SlotOutcome::Delivered(t) => {
                let packet = self
                    .wire
                    .decode_ddsat(&t.bytes)
                    .expect("control channel is error-free");
                self.base
                    .on_ddsat_slot_result(slot, SlotObservation::Packet(packet.sender));
                for i in 0..self.nodes.len() {
                    if self.present(i) {
                        self.nodes[i].on_heard(HeardPacket { slot, packet });
                    }
                }
                let pref: Vec<String> = packet
                    .preferred_channels
                    .iter()
                    .map(|c| c.index().to_string())
                    .collect();
                self.note(|| {
                    format!(
                        "  ddsat {slot}: {} empty={} pi={} req={} pref={}",
                        packet.sender,
                        packet.empty_channels,
                        packet.priority_index,
                        packet.requested_slots,
                        pref.join(",")
                    )
                });
            }
        }
    }

    fn ddsat_end(&mut self) {
        let n = self.clock.slots_per_state();
        let confirmed = self.scratch.confirmed;
        for i in 0..self.nodes.len() {
            if !self.present(i) {
                continue;
            }
            let action = self.nodes[i].on_ddsat_state_end(confirmed, &self.channels, n);
            self.scratch.status[i] = match action {
                StateEndAction::Joining => NodeStatus::Joining,
                StateEndAction::Served(_) => NodeStatus::Served,
                StateEndAction::OutOfFrame => NodeStatus::OutOfFrame,
                StateEndAction::Idle => NodeStatus::SyncWait,
            };
        }
        let mut views = self.nodes.iter().filter_map(|n| n.last_view.as_ref());
        let reference = views.next().cloned();
        if let Some(r) = &reference {
            if views.any(|v| v != r) {
                self.log.monitor.inconsistent_frames += 1;
            }
            let table = r.table.render();
            let fusion = r.fusion.empty_channels;
            self.note(|| format!("  fusion: empty={fusion}"));
            let rows: Vec<String> = table.lines().map(|l| format!("    {l}")).collect();
            self.note(|| format!("  allocation:\n{}", rows.join("\n")));
        }
        self.scratch.reference = reference;
    }

    fn data_slot(&mut self, slot: u8) {
        let primary_channel = self.medium.active_primary_channel();
        for i in 0..self.nodes.len() {
            if !self.present(i) {
                continue;
            }
            let Some((channel, packet)) = self.nodes[i].on_data_slot(slot) else {
                continue;
            };
            let m = &mut self.log.monitor;
            m.data_packets += 1;
            match &self.scratch.reference {
                Some(view) => {
                    if view.table.owner(channel, slot) != Some(packet.sender) {
                        m.outside_grant += 1;
                    }
                    if !view.fusion.empty_channels.contains(channel) {
                        m.on_fused_occupied += 1;
                    }
                }
                None => m.outside_grant += 1,
            }
            if primary_channel == Some(channel) {
                m.on_primary_channel += 1;
            }
            let bytes = self
                .wire
                .encode_data(&packet)
                .expect("payload within limit");
            self.medium.transmit(channel, packet.sender, bytes);
        }
        for (channel, outcome) in self.medium.resolve_all() {
            match outcome {
                SlotOutcome::Delivered(t) => {
                    self.log.monitor.data_delivered += 1;
                    let packet = self
                        .wire
                        .decode_data(&t.bytes)
                        .expect("data channel is error-free");
                    let sample =
                        self.medium
                            .sample_link(packet.sender, channel, &mut self.shadow_rng);
                    if let Some(node) = self.nodes.iter_mut().find(|n| n.id == packet.sender) {
                        node.record_link_sample(channel, sample);
                    }
                }
                SlotOutcome::Collision(_) => self.log.monitor.data_collisions += 1,
                SlotOutcome::Silence => {}
            }
        }
    }

    fn truth_empty(&self) -> ChannelSet {
        let busy = self.medium.active_primary_channel();
        self.channels
            .iter()
            .copied()
            .filter(|c| Some(*c) != busy)
            .collect()
    }

    fn end_frame(&mut self, frame: u64) {
        let truth = self.truth_empty();
        for (i, node) in self.nodes.iter().enumerate() {
            let status = self.scratch.status[i];
            let grant = match (&node.last_view, status) {
                (Some(v), NodeStatus::Served) => v.table.grant(node.id),
                _ => None,
            };
            let (fusion_correct, channels_correct, channels_sensed) = match &node.last_view {
                Some(v) => {
                    let fused = v.fusion.empty_channels;
                    let agree = self
                        .channels
                        .iter()
                        .filter(|c| fused.contains(**c) == truth.contains(**c))
                        .count();
                    (Some(fused == truth), agree as u8, self.channels.len() as u8)
                }
                None => (None, 0, 0),
            };
            self.log.records.push(FrameRecord {
                frame,
                node: node.id,
                status,
                granted_slots: grant.map_or(0, |g| g.slots.len() as u8),
                pd: node.pd,
                priority_index: node.sent_priority.unwrap_or_else(|| node.priority_index()),
                channel: grant.map(|g| g.channel),
                fusion_correct,
                channels_correct,
                channels_sensed,
            });
            if let Some(g) = grant {
                let id = node.id;
                if let Some(t) = self.trace.as_mut() {
                    let _ = writeln!(
                        t,
                        "  data: {id} on ch{} slots {}",
                        g.channel.index(),
                        slots_text(g.slots)
                    );
                }
            }
        }
        self.log.meta.frames = frame + 1;
    }

    /// Verdict the fused result gives `channel` in the current frame, if
    /// any node has fused yet.
    pub fn fused_verdict(&self, channel: ChannelId) -> Option<Verdict> {
        self.scratch.reference.as_ref().map(|v| {
            if v.fusion.empty_channels.contains(channel) {
                Verdict::Empty
            } else {
                Verdict::Occupied
            }
        })
    }
}

/// Runs `frames` super-frames of `scenario` from `seed`.
pub fn run(scenario: &ScenarioConfig, seed: u64, frames: u64) -> Result<MetricsLog, SimError> {
    let mut engine = Engine::new(scenario, seed)?;
    engine.run_frames(frames);
    Ok(engine.into_log())
}
