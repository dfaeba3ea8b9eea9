//! Scenario files: flat `key = value` lines with dotted sections.
//!
//! ```text
//! # two nodes and a primary on channel 4
//! frames = 300
//! radio.shadow_sigma_db = 0
//! primary.channel = 4
//! primary.activity = always_on
//! secondary.1.traffic = normal
//! secondary.1.requested_slots = 4
//! secondary.2.traffic = real_time
//! ```
//!
//! Omitted keys take their defaults. Unknown and repeated keys are errors.
//! `modulation`, `sampling_rate` and `channel_frequencies` are kept as
//! metadata and never interpreted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nodes::Activity;
use crate::types::{ChannelId, DtValues, NodeId, TrafficClass};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{field}: {reason}")]
    Validation { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    pub noise_floor_dbm: f64,
    pub shadow_sigma_db: f64,
    pub threshold_dbm: f64,
    /// Mean received power of a secondary data link.
    pub peer_power_dbm: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            noise_floor_dbm: -90.0,
            shadow_sigma_db: 0.0,
            threshold_dbm: -60.0,
            peer_power_dbm: -40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimaryConfig {
    pub channel: u8,
    pub activity: Activity,
    pub power_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondaryConfig {
    pub id: u8,
    pub traffic: TrafficClass,
    pub requested_slots: u8,
    /// First frame whose beacon the node listens to.
    pub join_frame: u64,
    /// First frame the node is gone for; it simply stops transmitting.
    pub leave_frame: Option<u64>,
}

impl SecondaryConfig {
    pub fn new(id: u8, traffic: TrafficClass, requested_slots: u8) -> Self {
        SecondaryConfig {
            id,
            traffic,
            requested_slots,
            join_frame: 0,
            leave_frame: None,
        }
    }

    pub fn present_in(&self, frame: u64) -> bool {
        frame >= self.join_frame && self.leave_frame.is_none_or(|l| frame < l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub num_channels: u8,
    pub slots_per_state: u8,
    pub frames: u64,
    pub seed: u64,
    pub dt: DtValues,
    pub radio: RadioConfig,
    pub primary: Option<PrimaryConfig>,
    /// Sorted by id.
    pub secondaries: Vec<SecondaryConfig>,
    pub modulation: Option<String>,
    pub sampling_rate: Option<String>,
    pub channel_frequencies: Option<Vec<f64>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_channels: 4,
            slots_per_state: 4,
            frames: 300,
            seed: 0,
            dt: DtValues::default(),
            radio: RadioConfig::default(),
            primary: None,
            secondaries: Vec::new(),
            modulation: None,
            sampling_rate: None,
            channel_frequencies: None,
        }
    }
}

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ScenarioError> {
    value.parse().map_err(|_| ScenarioError::Parse {
        line,
        message: format!("bad value {value:?} for {key}"),
    })
}

fn parse_traffic(line: usize, value: &str) -> Result<TrafficClass, ScenarioError> {
    match value {
        "normal" => Ok(TrafficClass::Normal),
        "real_time" => Ok(TrafficClass::RealTime),
        _ => Err(ScenarioError::Parse {
            line,
            message: format!("unknown traffic class {value:?}"),
        }),
    }
}

fn parse_activity(line: usize, value: &str) -> Result<Activity, ScenarioError> {
    if value == "always_on" {
        return Ok(Activity::AlwaysOn);
    }
    match value.strip_prefix("bernoulli:") {
        Some(p) => Ok(Activity::Bernoulli(parse_num(
            line,
            "primary.activity",
            p.trim(),
        )?)),
        None => Err(ScenarioError::Parse {
            line,
            message: format!("activity must be always_on or bernoulli:<p>, got {value:?}"),
        }),
    }
}

fn render_activity(a: Activity) -> String {
    match a {
        Activity::AlwaysOn => "always_on".to_string(),
        Activity::Bernoulli(p) => format!("bernoulli:{p}"),
    }
}

#[derive(Default)]
struct PrimaryDraft {
    channel: Option<u8>,
    activity: Option<Activity>,
    power_dbm: Option<f64>,
}

#[derive(Default)]
struct SecondaryDraft {
    traffic: Option<TrafficClass>,
    requested_slots: Option<u8>,
    join_frame: Option<u64>,
    leave_frame: Option<u64>,
}

fn set<T>(slot: &mut Option<T>, value: T) {
    *slot = Some(value);
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = ScenarioConfig::default();
    let mut seen = BTreeSet::new();
    let mut primary: Option<PrimaryDraft> = None;
    let mut secondaries: BTreeMap<String, (usize, SecondaryDraft)> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ScenarioError::Parse {
                line,
                message: "expected key = value".to_string(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(ScenarioError::Parse {
                line,
                message: format!("duplicate key {key}"),
            });
        }
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["num_channels"] => cfg.num_channels = parse_num(line, key, value)?,
            ["slots_per_state"] => cfg.slots_per_state = parse_num(line, key, value)?,
            ["frames"] => cfg.frames = parse_num(line, key, value)?,
            ["seed"] => cfg.seed = parse_num(line, key, value)?,
            ["ccc_channel"] => {
                let c: u8 = parse_num(line, key, value)?;
                if c != ChannelId::CCC.index() {
                    return Err(invalid(key, "the control channel is always 1"));
                }
            }
            ["modulation"] => cfg.modulation = Some(value.to_string()),
            ["sampling_rate"] => cfg.sampling_rate = Some(value.to_string()),
            ["channel_frequencies"] => {
                let list = value
                    .split(',')
                    .map(|v| parse_num(line, key, v.trim()))
                    .collect::<Result<Vec<f64>, _>>()?;
                cfg.channel_frequencies = Some(list);
            }
            ["dt", "normal"] => cfg.dt.normal = parse_num(line, key, value)?,
            ["dt", "real_time"] => cfg.dt.real_time = parse_num(line, key, value)?,
            ["radio", "noise_floor_dbm"] => {
                cfg.radio.noise_floor_dbm = parse_num(line, key, value)?
            }
            ["radio", "shadow_sigma_db"] => {
                cfg.radio.shadow_sigma_db = parse_num(line, key, value)?
            }
            ["radio", "threshold_dbm"] => cfg.radio.threshold_dbm = parse_num(line, key, value)?,
            ["radio", "peer_power_dbm"] => cfg.radio.peer_power_dbm = parse_num(line, key, value)?,
            ["primary", field] => {
                let p = primary.get_or_insert_with(PrimaryDraft::default);
                match *field {
                    "channel" => set(&mut p.channel, parse_num(line, key, value)?),
                    "activity" => set(&mut p.activity, parse_activity(line, value)?),
                    "power_dbm" => set(&mut p.power_dbm, parse_num(line, key, value)?),
                    _ => {
                        return Err(ScenarioError::Parse {
                            line,
                            message: format!("unknown key {key}"),
                        })
                    }
                }
            }
            ["secondary", id, field] => {
                let (_, s) = secondaries
                    .entry(id.to_string())
                    .or_insert((line, SecondaryDraft::default()));
                match *field {
                    "traffic" => set(&mut s.traffic, parse_traffic(line, value)?),
                    "requested_slots" => set(&mut s.requested_slots, parse_num(line, key, value)?),
                    "join_frame" => set(&mut s.join_frame, parse_num(line, key, value)?),
                    "leave_frame" => set(&mut s.leave_frame, parse_num(line, key, value)?),
                    _ => {
                        return Err(ScenarioError::Parse {
                            line,
                            message: format!("unknown key {key}"),
                        })
                    }
                }
            }
            _ => {
                return Err(ScenarioError::Parse {
                    line,
                    message: format!("unknown key {key}"),
                })
            }
        }
    }

    if let Some(p) = primary {
        let channel = p
            .channel
            .ok_or_else(|| invalid("primary.channel", "missing"))?;
        cfg.primary = Some(PrimaryConfig {
            channel,
            activity: p.activity.unwrap_or(Activity::AlwaysOn),
            power_dbm: p.power_dbm.unwrap_or(-50.0),
        });
    }
    for (id, (line, s)) in secondaries {
        let id: u8 = id.parse().map_err(|_| ScenarioError::Parse {
            line,
            message: format!("secondary id {id:?} is not a number in 1..=254"),
        })?;
        cfg.secondaries.push(SecondaryConfig {
            id,
            traffic: s.traffic.unwrap_or(TrafficClass::Normal),
            requested_slots: s.requested_slots.unwrap_or(cfg.slots_per_state),
            join_frame: s.join_frame.unwrap_or(0),
            leave_frame: s.leave_frame,
        });
    }
    cfg.secondaries.sort_by_key(|s| s.id);
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(2..=8).contains(&self.num_channels) {
            return Err(invalid("num_channels", "must be in 2..=8"));
        }
        if !(1..=8).contains(&self.slots_per_state) {
            return Err(invalid("slots_per_state", "must be in 1..=8"));
        }
        if self.frames == 0 {
            return Err(invalid("frames", "must be at least 1"));
        }
        if !self.dt.is_valid() {
            return Err(invalid("dt", "real_time must exceed normal"));
        }
        let r = &self.radio;
        for (field, v) in [
            ("radio.noise_floor_dbm", r.noise_floor_dbm),
            ("radio.threshold_dbm", r.threshold_dbm),
            ("radio.peer_power_dbm", r.peer_power_dbm),
        ] {
            if !v.is_finite() {
                return Err(invalid(field, "must be finite"));
            }
        }
        if !(r.shadow_sigma_db.is_finite() && r.shadow_sigma_db >= 0.0) {
            return Err(invalid(
                "radio.shadow_sigma_db",
                "must be finite and non-negative",
            ));
        }
        if let Some(p) = &self.primary {
            if p.channel == ChannelId::CCC.index() {
                return Err(invalid("primary.channel", "cannot be the control channel"));
            }
            if p.channel == 0 || p.channel > self.num_channels {
                return Err(invalid("primary.channel", "out of range"));
            }
            if !p.power_dbm.is_finite() {
                return Err(invalid("primary.power_dbm", "must be finite"));
            }
            if let Activity::Bernoulli(prob) = p.activity {
                if !(0.0..=1.0).contains(&prob) {
                    return Err(invalid("primary.activity", "probability must be in [0, 1]"));
                }
            }
        }
        if self.secondaries.len() > usize::from(self.slots_per_state) {
            return Err(invalid(
                "secondary",
                "more secondary nodes than DDSAT slots",
            ));
        }
        let mut ids = BTreeSet::new();
        for s in &self.secondaries {
            let field = format!("secondary.{}", s.id);
            if !NodeId(s.id).is_valid_secondary() {
                return Err(invalid(field, "id must be in 1..=254"));
            }
            if !ids.insert(s.id) {
                return Err(invalid(field, "duplicate id"));
            }
            if s.requested_slots > self.slots_per_state {
                return Err(invalid(
                    field + ".requested_slots",
                    "exceeds slots_per_state",
                ));
            }
            if s.leave_frame.is_some_and(|l| l <= s.join_frame) {
                return Err(invalid(
                    field + ".leave_frame",
                    "must come after join_frame",
                ));
            }
        }
        if let Some(f) = &self.channel_frequencies {
            if f.len() != usize::from(self.num_channels) {
                return Err(invalid("channel_frequencies", "need one entry per channel"));
            }
        }
        Ok(())
    }

    /// Non-control channels, ascending.
    pub fn sensing_channels(&self) -> Vec<ChannelId> {
        (2..=self.num_channels).filter_map(ChannelId::new).collect()
    }

    /// Canonical text form: every key written out, fixed order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "num_channels = {}", self.num_channels);
        let _ = writeln!(out, "slots_per_state = {}", self.slots_per_state);
        let _ = writeln!(out, "frames = {}", self.frames);
        let _ = writeln!(out, "seed = {}", self.seed);
        if let Some(m) = &self.modulation {
            let _ = writeln!(out, "modulation = {m}");
        }
        if let Some(s) = &self.sampling_rate {
            let _ = writeln!(out, "sampling_rate = {s}");
        }
        if let Some(f) = &self.channel_frequencies {
            let list: Vec<String> = f.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "channel_frequencies = {}", list.join(", "));
        }
        let _ = writeln!(out, "dt.normal = {}", self.dt.normal);
        let _ = writeln!(out, "dt.real_time = {}", self.dt.real_time);
        let r = &self.radio;
        let _ = writeln!(out, "radio.noise_floor_dbm = {}", r.noise_floor_dbm);
        let _ = writeln!(out, "radio.shadow_sigma_db = {}", r.shadow_sigma_db);
        let _ = writeln!(out, "radio.threshold_dbm = {}", r.threshold_dbm);
        let _ = writeln!(out, "radio.peer_power_dbm = {}", r.peer_power_dbm);
        if let Some(p) = &self.primary {
            let _ = writeln!(out, "primary.channel = {}", p.channel);
            let _ = writeln!(out, "primary.activity = {}", render_activity(p.activity));
            let _ = writeln!(out, "primary.power_dbm = {}", p.power_dbm);
        }
        for s in &self.secondaries {
            let _ = writeln!(out, "secondary.{}.traffic = {}", s.id, s.traffic.name());
            let _ = writeln!(
                out,
                "secondary.{}.requested_slots = {}",
                s.id, s.requested_slots
            );
            let _ = writeln!(out, "secondary.{}.join_frame = {}", s.id, s.join_frame);
            if let Some(l) = s.leave_frame {
                let _ = writeln!(out, "secondary.{}.leave_frame = {l}", s.id);
            }
        }
        out
    }

    /// First 8 bytes of SHA-256 over the canonical rendering, as hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert_eq, prop_oneof, proptest, Just, Strategy};

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_scenario("secondary.1.traffic = normal\n").unwrap();
        assert_eq!(cfg.slots_per_state, 4);
        assert_eq!(cfg.num_channels, 4);
        assert_eq!(cfg.radio.threshold_dbm, -60.0);
        assert_eq!(cfg.radio.noise_floor_dbm, -90.0);
        assert_eq!(
            cfg.secondaries,
            vec![SecondaryConfig::new(1, TrafficClass::Normal, 4)]
        );
        assert!(cfg.primary.is_none());
    }

    #[test]
    fn primary_on_ccc_rejected() {
        let err = parse_scenario("primary.channel = 1\n").unwrap_err();
        assert!(
            matches!(err, ScenarioError::Validation { ref field, .. } if field == "primary.channel")
        );
    }

    #[test]
    fn duplicate_ids_rejected() {
        // "2" and "02" name the same node.
        let err = parse_scenario("secondary.2.traffic = normal\nsecondary.02.traffic = normal\n")
            .unwrap_err();
        assert!(
            matches!(err, ScenarioError::Validation { ref reason, .. } if reason == "duplicate id")
        );
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = parse_scenario("# c\n\nframes = 10\nbogus = 1\n").unwrap_err();
        assert_eq!(
            err,
            ScenarioError::Parse {
                line: 4,
                message: "unknown key bogus".to_string()
            }
        );
        assert!(matches!(
            parse_scenario("frames 10"),
            Err(ScenarioError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_scenario("frames = ten"),
            Err(ScenarioError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_scenario("frames = 1\nframes = 2"),
            Err(ScenarioError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn validation_rules() {
        let cases = [
            (
                "slots_per_state = 2\nsecondary.1.requested_slots = 3",
                "secondary.1.requested_slots",
            ),
            (
                "slots_per_state = 1\nsecondary.1.traffic = normal\nsecondary.2.traffic = normal",
                "secondary",
            ),
            ("secondary.255.traffic = normal", "secondary.255"),
            ("primary.channel = 5", "primary.channel"),
            (
                "primary.channel = 4\nprimary.activity = bernoulli:1.5",
                "primary.activity",
            ),
            ("radio.shadow_sigma_db = -1", "radio.shadow_sigma_db"),
            ("ccc_channel = 2", "ccc_channel"),
            ("dt.normal = 10", "dt"),
            ("channel_frequencies = 1, 2", "channel_frequencies"),
        ];
        for (text, field) in cases {
            match parse_scenario(text) {
                Err(ScenarioError::Validation { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn metadata_is_inert() {
        let cfg = parse_scenario(
            "modulation = GMSK\nsampling_rate = 0.5 MHz\nchannel_frequencies = 2.4, 2.41, 2.42, 2.43\n",
        )
        .unwrap();
        assert_eq!(cfg.modulation.as_deref(), Some("GMSK"));
        assert_eq!(cfg.sampling_rate.as_deref(), Some("0.5 MHz"));
        let bare = ScenarioConfig {
            modulation: None,
            sampling_rate: None,
            channel_frequencies: None,
            ..cfg.clone()
        };
        assert_eq!(bare, ScenarioConfig::default());
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_scenario("frames = 10").unwrap();
        let b = parse_scenario("frames = 11").unwrap();
        assert_eq!(a.hash().len(), 16);
        assert_eq!(
            a.hash(),
            parse_scenario("# same\nframes = 10\n").unwrap().hash()
        );
        assert_ne!(a.hash(), b.hash());
    }

    fn arb_config() -> impl Strategy<Value = ScenarioConfig> {
        let radio = (-120.0f64..0.0, 0.0f64..20.0, -100.0f64..0.0, -80.0f64..0.0).prop_map(
            |(n, s, t, p)| RadioConfig {
                noise_floor_dbm: n,
                shadow_sigma_db: s,
                threshold_dbm: t,
                peer_power_dbm: p,
            },
        );
        let activity = prop_oneof![
            Just(Activity::AlwaysOn),
            (0.0f64..=1.0).prop_map(Activity::Bernoulli)
        ];
        let primary = prop::option::of((2u8..=4, activity, -90.0f64..0.0).prop_map(
            |(channel, activity, power_dbm)| PrimaryConfig {
                channel,
                activity,
                power_dbm,
            },
        ));
        let secondary = (
            prop_oneof![Just(TrafficClass::Normal), Just(TrafficClass::RealTime)],
            0u8..=4,
            0u64..50,
            prop::option::of(1u64..50),
        );
        let secondaries = prop::collection::btree_map(1u8..=254, secondary, 0..=4).prop_map(|m| {
            m.into_iter()
                .map(
                    |(id, (traffic, requested_slots, join_frame, extra))| SecondaryConfig {
                        id,
                        traffic,
                        requested_slots,
                        join_frame,
                        leave_frame: extra.map(|e| join_frame + e),
                    },
                )
                .collect::<Vec<_>>()
        });
        let meta = (
            prop::option::of(Just("GMSK".to_string())),
            prop::option::of(prop::collection::vec(0.1f64..6.0, 4)),
        );
        (1u64..1000, any::<u64>(), radio, primary, secondaries, meta).prop_map(
            |(frames, seed, radio, primary, secondaries, (modulation, freqs))| ScenarioConfig {
                frames,
                seed,
                radio,
                primary,
                secondaries,
                modulation,
                channel_frequencies: freqs,
                ..ScenarioConfig::default()
            },
        )
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(cfg in arb_config()) {
            let text = cfg.render();
            let back = parse_scenario(&text).unwrap();
            prop_assert_eq!(back.render(), text);
            prop_assert_eq!(back, cfg);
        }
    }
}
