//! Little-endian wire codec for the three broadcast message types and a
//! communication-load accountant.
//!
//! Frame header: `agent_id: u16`, `msg_type: u8`, `timestamp: f64`.
//! Keyframe poses travel as their 7 twist coordinates, so a decoded pose
//! equals the original up to one `exp ∘ log` round trip (≈1e-15 relative).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurements::{AgentId, AnchorRangeMsg, InterRangeMsg, KeyframeMsg};
use crate::sim3::{Matrix7, Sim3Pose, Twist7, Vector7};

pub const HEADER_BYTES: usize = 11;
pub const KEYFRAME_BYTES: usize = HEADER_BYTES + 7 * 8 + 28 * 8;
pub const KEYFRAME_FULL_COV_BYTES: usize = HEADER_BYTES + 7 * 8 + 49 * 8;
pub const RANGE_BYTES: usize = HEADER_BYTES + 2 + 8 + 8;

const TYPE_KEYFRAME: u8 = 1;
const TYPE_INTER_RANGE: u8 = 2;
const TYPE_ANCHOR_RANGE: u8 = 3;
const TYPE_KEYFRAME_FULL_COV: u8 = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("cannot encode message: {0}")]
    Unencodable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    KeyframeMsg(KeyframeMsg),
    InterRangeMsg(InterRangeMsg),
    AnchorRangeMsg(AnchorRangeMsg),
}

impl Message {
    pub fn agent_id(&self) -> AgentId {
        match self {
            Message::KeyframeMsg(m) => m.agent_id,
            Message::InterRangeMsg(m) => m.agent_a,
            Message::AnchorRangeMsg(m) => m.agent_id,
        }
    }

    pub fn timestamp(&self) -> f64 {
        match self {
            Message::KeyframeMsg(m) => m.timestamp,
            Message::InterRangeMsg(m) => m.timestamp,
            Message::AnchorRangeMsg(m) => m.timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceLayout {
    #[default]
    UpperTriangle,
    Full,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Codec {
    pub covariance: CovarianceLayout,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| CodecError::MalformedFrame(format!("truncated at byte {}", self.buf.len())))?;
        self.pos = end;
        Ok(bytes.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

fn put_header(out: &mut Vec<u8>, agent: AgentId, ty: u8, t: f64) {
    out.extend_from_slice(&agent.to_le_bytes());
    out.push(ty);
    out.extend_from_slice(&t.to_le_bytes());
}

fn put_range(out: &mut Vec<u8>, peer: u16, range: f64, variance: f64) {
    out.extend_from_slice(&peer.to_le_bytes());
    out.extend_from_slice(&range.to_le_bytes());
    out.extend_from_slice(&variance.to_le_bytes());
}

impl Codec {
    pub fn full_covariance() -> Self {
        Self { covariance: CovarianceLayout::Full }
    }

    pub fn encoded_len(&self, msg: &Message) -> usize {
        match (msg, self.covariance) {
            (Message::KeyframeMsg(_), CovarianceLayout::UpperTriangle) => KEYFRAME_BYTES,
            (Message::KeyframeMsg(_), CovarianceLayout::Full) => KEYFRAME_FULL_COV_BYTES,
            _ => RANGE_BYTES,
        }
    }

    pub fn encode_into(&self, msg: &Message, out: &mut Vec<u8>) -> Result<(), CodecError> {
        match msg {
            Message::KeyframeMsg(m) => {
                let twist = m.pose.log().map_err(|e| CodecError::Unencodable(e.to_string()))?;
                let ty = match self.covariance {
                    CovarianceLayout::UpperTriangle => TYPE_KEYFRAME,
                    CovarianceLayout::Full => TYPE_KEYFRAME_FULL_COV,
                };
                put_header(out, m.agent_id, ty, m.timestamp);
                for v in twist.0.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for r in 0..7 {
                    let c0 = match self.covariance {
                        CovarianceLayout::UpperTriangle => r,
                        CovarianceLayout::Full => 0,
                    };
                    for c in c0..7 {
                        out.extend_from_slice(&m.covariance[(r, c)].to_le_bytes());
                    }
                }
            }
            Message::InterRangeMsg(m) => {
                put_header(out, m.agent_a, TYPE_INTER_RANGE, m.timestamp);
                put_range(out, m.agent_b, m.range, m.variance);
            }
            Message::AnchorRangeMsg(m) => {
                put_header(out, m.agent_id, TYPE_ANCHOR_RANGE, m.timestamp);
                put_range(out, m.anchor_id, m.range, m.variance);
            }
        }
        Ok(())
    }

    pub fn encode(&self, msg: &Message) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::with_capacity(self.encoded_len(msg));
        self.encode_into(msg, &mut out)?;
        Ok(out)
    }

    pub fn encode_stream<'a>(&self, msgs: impl IntoIterator<Item = &'a Message>) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::new();
        for m in msgs {
            self.encode_into(m, &mut out)?;
        }
        Ok(out)
    }

    /// Decodes one frame and returns it with the number of bytes consumed.
    /// Both covariance layouts are accepted regardless of `self.covariance`.
    pub fn decode_prefix(&self, bytes: &[u8]) -> Result<(Message, usize), CodecError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let agent = r.u16()?;
        let ty = r.u8()?;
        let t = r.f64()?;
        let bad = |e: crate::measurements::MeasurementError| CodecError::MalformedFrame(e.to_string());
        let msg = match ty {
            TYPE_KEYFRAME | TYPE_KEYFRAME_FULL_COV => {
                let mut xi = Vector7::zeros();
                for v in xi.iter_mut() {
                    *v = r.f64()?;
                }
                if !xi.iter().all(|v| v.is_finite()) {
                    return Err(CodecError::MalformedFrame("non-finite pose".into()));
                }
                let mut cov = Matrix7::zeros();
                for row in 0..7 {
                    let c0 = if ty == TYPE_KEYFRAME { row } else { 0 };
                    for c in c0..7 {
                        cov[(row, c)] = r.f64()?;
                        if ty == TYPE_KEYFRAME {
                            cov[(c, row)] = cov[(row, c)];
                        }
                    }
                }
                let pose = Sim3Pose::exp(&Twist7(xi));
                Message::KeyframeMsg(KeyframeMsg::new(agent, t, pose, cov).map_err(bad)?)
            }
            TYPE_INTER_RANGE => {
                let (peer, range, var) = (r.u16()?, r.f64()?, r.f64()?);
                if peer <= agent {
                    return Err(CodecError::MalformedFrame(format!(
                        "inter-range pair ({agent}, {peer}) is not in canonical order"
                    )));
                }
                Message::InterRangeMsg(InterRangeMsg::new(agent, peer, t, range, var).map_err(bad)?)
            }
            TYPE_ANCHOR_RANGE => {
                let (anchor, range, var) = (r.u16()?, r.f64()?, r.f64()?);
                Message::AnchorRangeMsg(AnchorRangeMsg::new(agent, anchor, t, range, var).map_err(bad)?)
            }
            other => return Err(CodecError::UnknownMsgType(other)),
        };
        Ok((msg, r.pos))
    }

    /// Decodes exactly one frame; trailing bytes are an error.
    pub fn decode(&self, bytes: &[u8]) -> Result<Message, CodecError> {
        let (msg, used) = self.decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(CodecError::MalformedFrame(format!("{} trailing bytes", bytes.len() - used)));
        }
        Ok(msg)
    }

    pub fn decode_stream(&self, mut bytes: &[u8]) -> Result<Vec<Message>, CodecError> {
        let mut out = Vec::new();
        while !bytes.is_empty() {
            let (msg, used) = self.decode_prefix(bytes)?;
            out.push(msg);
            bytes = &bytes[used..];
        }
        Ok(out)
    }
}

/// One JSON object per line, tagged with the message type.
pub fn to_json_lines(msgs: &[Message]) -> String {
    let mut s = String::new();
    for m in msgs {
        s.push_str(&serde_json::to_string(m).expect("messages serialize"));
        s.push('\n');
    }
    s
}

pub fn from_json_lines(text: &str) -> Result<Vec<Message>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Per-keyframe payload of loop-closing baselines (bytes). The defaults are
/// estimates from the baselines' descriptor and map-point payloads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineCostModel {
    /// Centralized, all keyframe features and map points sent (upper bound).
    pub ccm_slam_ub: f64,
    /// Centralized, compressed features only (lower bound).
    pub ccm_slam_lb: f64,
    /// Decentralized: compact place descriptor plus occasional feature exchange.
    pub dslam: f64,
}

impl Default for BaselineCostModel {
    fn default() -> Self {
        Self { ccm_slam_ub: 120_000.0, ccm_slam_lb: 32_000.0, dslam: 16_000.0 }
    }
}

impl BaselineCostModel {
    pub fn validate(&self) -> Result<(), String> {
        if [self.ccm_slam_ub, self.ccm_slam_lb, self.dslam].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err("baseline per-keyframe costs must be positive".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountingRow {
    pub keyframes: u64,
    pub covor_bytes: u64,
    pub ccm_slam_ub: f64,
    pub ccm_slam_lb: f64,
    pub dslam: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingReport {
    /// One row per keyframe count, starting at zero.
    pub series: Vec<AccountingRow>,
    pub total_keyframes: u64,
    pub range_messages: u64,
    pub covor_bytes: u64,
    /// CoVOR bytes over dSLAM bytes; an identity under the configured baseline constants.
    pub ratio_vs_dslam: f64,
}

/// Cumulative bytes against keyframe count. Range messages sent between two
/// keyframes are charged to the running total at the next keyframe row.
pub fn account(stream: &[Message], codec: &Codec, baselines: &BaselineCostModel) -> AccountingReport {
    let row = |k: u64, bytes: u64| AccountingRow {
        keyframes: k,
        covor_bytes: bytes,
        ccm_slam_ub: baselines.ccm_slam_ub * k as f64,
        ccm_slam_lb: baselines.ccm_slam_lb * k as f64,
        dslam: baselines.dslam * k as f64,
    };
    let mut series = vec![row(0, 0)];
    let (mut keyframes, mut ranges, mut bytes) = (0u64, 0u64, 0u64);
    for m in stream {
        bytes += codec.encoded_len(m) as u64;
        match m {
            Message::KeyframeMsg(_) => {
                keyframes += 1;
                series.push(row(keyframes, bytes));
            }
            _ => ranges += 1,
        }
    }
    if let Some(last) = series.last_mut() {
        last.covor_bytes = bytes;
    }
    let dslam = baselines.dslam * keyframes as f64;
    AccountingReport {
        series,
        total_keyframes: keyframes,
        range_messages: ranges,
        covor_bytes: bytes,
        ratio_vs_dslam: if keyframes == 0 { 0.0 } else { bytes as f64 / dslam },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim3::Twist7;
    use nalgebra::Vector3;

    fn keyframe() -> Message {
        let pose = Sim3Pose::exp(&Twist7::new(Vector3::new(0.1, -0.2, 0.3), Vector3::new(4.0, 5.0, -6.0), 0.05));
        let mut cov = Matrix7::identity() * 0.01;
        cov[(0, 3)] = 0.001;
        cov[(3, 0)] = 0.001;
        Message::KeyframeMsg(KeyframeMsg::new(3, 12.5, pose, cov).unwrap())
    }

    #[test]
    fn sizes_follow_layout() {
        let c = Codec::default();
        assert_eq!(c.encode(&keyframe()).unwrap().len(), 291);
        let r = Message::InterRangeMsg(InterRangeMsg::new(1, 2, 0.0, 3.0, 0.01).unwrap());
        assert_eq!(c.encode(&r).unwrap().len(), 29);
        assert_eq!(Codec::full_covariance().encode(&keyframe()).unwrap().len(), 459);
    }

    #[test]
    fn range_layout_is_little_endian() {
        let m = Message::AnchorRangeMsg(AnchorRangeMsg::new(0x0102, 7, 1.0, 2.0, 0.5).unwrap());
        let b = Codec::default().encode(&m).unwrap();
        assert_eq!(&b[0..3], &[0x02, 0x01, 3]);
        assert_eq!(&b[3..11], &1.0f64.to_le_bytes());
        assert_eq!(&b[11..13], &[7, 0]);
        assert_eq!(&b[13..21], &2.0f64.to_le_bytes());
    }

    #[test]
    fn keyframe_round_trip() {
        for codec in [Codec::default(), Codec::full_covariance()] {
            let Message::KeyframeMsg(orig) = keyframe() else { unreachable!() };
            let Message::KeyframeMsg(back) = codec.decode(&codec.encode(&keyframe()).unwrap()).unwrap() else {
                panic!()
            };
            assert_eq!(back.covariance, orig.covariance);
            assert!((back.pose.to_matrix() - orig.pose.to_matrix()).abs().max() < 1e-14);
        }
    }

    #[test]
    fn truncated_and_unknown() {
        let c = Codec::default();
        let b = c.encode(&keyframe()).unwrap();
        assert!(matches!(c.decode(&b[..290]), Err(CodecError::MalformedFrame(_))));
        let mut u = b.clone();
        u[2] = 9;
        assert_eq!(c.decode(&u), Err(CodecError::UnknownMsgType(9)));
    }

    #[test]
    fn accounting_counts() {
        let c = Codec::default();
        let empty = account(&[], &c, &BaselineCostModel::default());
        assert_eq!(empty.series.len(), 1);
        assert_eq!(empty.covor_bytes, 0);
        let r = Message::InterRangeMsg(InterRangeMsg::new(1, 2, 0.0, 3.0, 0.01).unwrap());
        let stream = vec![keyframe(), r.clone(), keyframe(), r];
        let rep = account(&stream, &c, &BaselineCostModel::default());
        assert_eq!(rep.covor_bytes, 2 * 291 + 2 * 29);
        assert_eq!(rep.series[1].covor_bytes, 291);
        assert_eq!(rep.series[2].covor_bytes, 2 * 291 + 2 * 29);
        assert_eq!(rep.series[2].dslam, 32_000.0);
    }

    #[test]
    fn json_lines_round_trip() {
        let r = Message::AnchorRangeMsg(AnchorRangeMsg::new(0, 1, 0.5, 3.0, 0.01).unwrap());
        let text = to_json_lines(&[r.clone()]);
        assert!(text.contains("\"type\":\"AnchorRangeMsg\""));
        assert!(text.contains("\"anchor_id\":1"));
        assert_eq!(from_json_lines(&text).unwrap(), vec![r]);
    }
}
