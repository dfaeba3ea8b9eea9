//! Per-frame records and the derived metrics: throughput in granted data
//! slots per frame, Jain fairness over long-run throughput, and fused
//! sensing accuracy. CSV writers print reals with six significant digits.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::types::{ChannelId, NodeId};

pub const DEFAULT_WARMUP_FRAMES: u64 = 10;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("log has no usable records")]
    EmptyLog,
    #[error("no values")]
    Empty,
    #[error("all values are zero")]
    AllZero,
    #[error("bad csv: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// What a secondary node did in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeStatus {
    /// Not part of the network this frame.
    Absent,
    SyncWait,
    /// Reserved a DDSAT slot that no beacon has confirmed yet.
    Joining,
    /// Took part in allocation but got nothing.
    OutOfFrame,
    Served,
}

impl NodeStatus {
    pub fn name(self) -> &'static str {
        match self {
            NodeStatus::Absent => "absent",
            NodeStatus::SyncWait => "sync_wait",
            NodeStatus::Joining => "joining",
            NodeStatus::OutOfFrame => "out_of_frame",
            NodeStatus::Served => "served",
        }
    }
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NodeStatus {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            NodeStatus::Absent,
            NodeStatus::SyncWait,
            NodeStatus::Joining,
            NodeStatus::OutOfFrame,
            NodeStatus::Served,
        ]
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| MetricsError::Format(format!("unknown state {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub frame: u64,
    pub node: NodeId,
    pub status: NodeStatus,
    pub granted_slots: u8,
    /// PD after this frame's update.
    pub pd: u16,
    /// Priority index carried in this frame's DDSAT packet, or the current
    /// one when the node sent none.
    pub priority_index: u16,
    pub channel: Option<ChannelId>,
    /// Fused empty set equal to the true complement of the primary's
    /// channel. `None` when the node did not take part in fusion.
    pub fusion_correct: Option<bool>,
    /// Per-channel agreement of the fused verdicts with the truth.
    pub channels_correct: u8,
    pub channels_sensed: u8,
}

/// Protocol violations and traffic counts seen by the engine's monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MonitorStats {
    pub data_packets: u64,
    pub data_delivered: u64,
    pub data_collisions: u64,
    pub outside_grant: u64,
    pub on_fused_occupied: u64,
    pub on_primary_channel: u64,
    /// Frames where two nodes computed different fusion or allocation.
    pub inconsistent_frames: u64,
    pub ddsat_collisions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunMeta {
    pub seed: u64,
    pub scenario_hash: String,
    pub frames: u64,
    pub slots_per_state: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetricsLog {
    pub meta: RunMeta,
    /// Sorted by (frame, node).
    pub records: Vec<FrameRecord>,
    pub monitor: MonitorStats,
}

impl MetricsLog {
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.records.iter().map(|r| r.node).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn node_records(&self, node: NodeId) -> impl Iterator<Item = &FrameRecord> {
        self.records.iter().filter(move |r| r.node == node)
    }
}

/// Mean granted slots per frame for `node`, skipping the first `warmup` frames.
pub fn throughput(log: &MetricsLog, node: NodeId, warmup: u64) -> Result<f64, MetricsError> {
    let (sum, n) = log
        .node_records(node)
        .filter(|r| r.frame >= warmup)
        .fold((0u64, 0u64), |(s, n), r| {
            (s + u64::from(r.granted_slots), n + 1)
        });
    if n == 0 {
        return Err(MetricsError::EmptyLog);
    }
    Ok(sum as f64 / n as f64)
}

/// (Σx)² / (n·Σx²).
pub fn jain_index(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sum: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return Err(MetricsError::AllZero);
    }
    Ok(sum * sum / (values.len() as f64 * sq))
}

/// Fraction of frames in which fusion matched the truth. Each frame counts
/// once, however many nodes took part.
pub fn sensing_accuracy(log: &MetricsLog) -> Result<f64, MetricsError> {
    let mut last_frame = None;
    let (mut correct, mut total) = (0u64, 0u64);
    for r in &log.records {
        let Some(ok) = r.fusion_correct else { continue };
        if last_frame == Some(r.frame) {
            continue;
        }
        last_frame = Some(r.frame);
        total += 1;
        correct += u64::from(ok);
    }
    if total == 0 {
        return Err(MetricsError::EmptyLog);
    }
    Ok(correct as f64 / total as f64)
}

/// Formats like C's `%.6g`.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 {
            "0".to_string()
        } else {
            x.to_string()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub const FRAMES_HEADER: [&str; 10] = [
    "frame",
    "node",
    "granted_slots",
    "pd",
    "priority_index",
    "channel",
    "fusion_correct",
    "state",
    "channels_correct",
    "channels_sensed",
];

fn meta_line(meta: &RunMeta) -> String {
    format!(
        "# seed={} scenario={} frames={} slots_per_state={}\n",
        meta.seed, meta.scenario_hash, meta.frames, meta.slots_per_state
    )
}

fn parse_meta(line: &str) -> RunMeta {
    let mut meta = RunMeta::default();
    for kv in line.trim_start_matches('#').split_whitespace() {
        match kv.split_once('=') {
            Some(("seed", v)) => meta.seed = v.parse().unwrap_or_default(),
            Some(("scenario", v)) => meta.scenario_hash = v.to_string(),
            Some(("frames", v)) => meta.frames = v.parse().unwrap_or_default(),
            Some(("slots_per_state", v)) => meta.slots_per_state = v.parse().unwrap_or_default(),
            _ => {}
        }
    }
    meta
}

pub fn write_frames_csv<W: Write>(log: &MetricsLog, mut out: W) -> Result<(), MetricsError> {
    out.write_all(meta_line(&log.meta).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FRAMES_HEADER)?;
    for r in &log.records {
        w.write_record([
            r.frame.to_string(),
            r.node.0.to_string(),
            r.granted_slots.to_string(),
            r.pd.to_string(),
            r.priority_index.to_string(),
            r.channel.map(|c| c.index().to_string()).unwrap_or_default(),
            r.fusion_correct.map(|b| b.to_string()).unwrap_or_default(),
            r.status.to_string(),
            r.channels_correct.to_string(),
            r.channels_sensed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, MetricsError> {
    let raw = rec
        .get(i)
        .ok_or_else(|| MetricsError::Format(format!("missing column {i}")))?;
    raw.parse().map_err(|_| {
        MetricsError::Format(format!("bad value {raw:?} in column {}", FRAMES_HEADER[i]))
    })
}

/// Reads back a file written by [`write_frames_csv`]. Monitor counters are
/// not stored and come back zeroed.
pub fn read_frames_csv<R: io::Read>(input: R) -> Result<MetricsLog, MetricsError> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let meta = parse_meta(&first);
    let mut r = csv::Reader::from_reader(reader);
    let mut records = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let channel = match rec.get(5) {
            Some("") => None,
            _ => Some(
                ChannelId::new(field(&rec, 5)?)
                    .ok_or_else(|| MetricsError::Format("channel 0".to_string()))?,
            ),
        };
        let fusion_correct = match rec.get(6) {
            Some("") => None,
            _ => Some(field(&rec, 6)?),
        };
        records.push(FrameRecord {
            frame: field(&rec, 0)?,
            node: NodeId(field(&rec, 1)?),
            granted_slots: field(&rec, 2)?,
            pd: field(&rec, 3)?,
            priority_index: field(&rec, 4)?,
            channel,
            fusion_correct,
            status: field(&rec, 7)?,
            channels_correct: field(&rec, 8)?,
            channels_sensed: field(&rec, 9)?,
        });
    }
    Ok(MetricsLog {
        meta,
        records,
        monitor: MonitorStats::default(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSummary {
    pub node: NodeId,
    pub mean_throughput: f64,
    /// n·xᵢ/Σx: 1 for an exactly fair share.
    pub jain_contribution: f64,
}

pub fn summarize(log: &MetricsLog, warmup: u64) -> Result<Vec<NodeSummary>, MetricsError> {
    let nodes = log.nodes();
    let tps = nodes
        .iter()
        .map(|&n| throughput(log, n, warmup))
        .collect::<Result<Vec<_>, _>>()?;
    let total: f64 = tps.iter().sum();
    Ok(nodes
        .into_iter()
        .zip(tps)
        .map(|(node, t)| NodeSummary {
            node,
            mean_throughput: t,
            jain_contribution: if total > 0.0 {
                t * log.nodes().len() as f64 / total
            } else {
                0.0
            },
        })
        .collect())
}

/// `summary.csv`. The metadata line also carries the Jain index over all
/// nodes, when defined.
pub fn write_summary_csv<W: Write>(
    log: &MetricsLog,
    warmup: u64,
    mut out: W,
) -> Result<(), MetricsError> {
    let rows = summarize(log, warmup)?;
    let tps: Vec<f64> = rows.iter().map(|r| r.mean_throughput).collect();
    let mut meta = meta_line(&log.meta);
    meta.pop();
    match jain_index(&tps) {
        Ok(j) => meta.push_str(&format!(" warmup={warmup} jain={}\n", fmt_real(j))),
        Err(_) => meta.push_str(&format!(" warmup={warmup}\n")),
    }
    out.write_all(meta.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "mean_throughput", "jain_contribution"])?;
    for r in rows {
        w.write_record([
            r.node.0.to_string(),
            fmt_real(r.mean_throughput),
            fmt_real(r.jain_contribution),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub metric: String,
    pub mean: f64,
    pub ci95: f64,
}

pub fn write_sweep_csv<W: Write>(
    header: &str,
    rows: &[SweepRow],
    mut out: W,
) -> Result<(), MetricsError> {
    writeln!(out, "# {header}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["param", "value", "metric", "mean", "ci95"])?;
    for r in rows {
        w.write_record([
            r.param.clone(),
            fmt_real(r.value),
            r.metric.clone(),
            fmt_real(r.mean),
            fmt_real(r.ci95),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_file(
    path: &Path,
    write: impl FnOnce(File) -> Result<(), MetricsError>,
) -> Result<(), MetricsError> {
    write(File::create(path)?)
}
