//! FPGA packet framing and the raw capture file.
//!
//! Header layout (little-endian, 24 bytes):
//!
//! | offset | size | field            |
//! |--------|------|------------------|
//! | 0      | 4    | magic `"SIAM"`   |
//! | 4      | 2    | fpga_id          |
//! | 6      | 4    | sequence         |
//! | 10     | 8    | sample_timestamp |
//! | 18     | 2    | status_flags     |
//! | 20     | 2    | channels         |
//! | 22     | 2    | frames           |
//!
//! The payload follows with `ceil(channels × frames / 8)` bytes, channel-major:
//! bit `c·frames + f` (LSB first) holds channel `c`, frame `f`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PdmStream;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SIAM";
pub const HEADER_LEN: usize = 24;
pub const CHANNELS_PER_FPGA: usize = 200;
pub const DEFAULT_FRAMES_PER_PACKET: usize = 512;
/// `status_flags` bit set when the FPGA detected a synchronisation error.
pub const STATUS_SYNC_ERROR: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DaqPacket {
    pub fpga_id: u16,
    pub sequence: u32,
    /// PDM clock tick of the first frame.
    pub sample_timestamp: u64,
    pub status_flags: u16,
    pub channels: u16,
    pub frames: u16,
    pub payload: Vec<u8>,
}

impl DaqPacket {
    pub fn payload_len(channels: usize, frames: usize) -> usize {
        (channels * frames).div_ceil(8)
    }

    pub fn bit(&self, channel: usize, frame: usize) -> bool {
        let i = channel * self.frames as usize + frame;
        self.payload[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.fpga_id.to_le_bytes());
        out.extend_from_slice(&self.sequence.to_le_bytes());
        out.extend_from_slice(&self.sample_timestamp.to_le_bytes());
        out.extend_from_slice(&self.status_flags.to_le_bytes());
        out.extend_from_slice(&self.channels.to_le_bytes());
        out.extend_from_slice(&self.frames.to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Decodes one packet from the front of `buf`, returning it and the
    /// number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(DaqPacket, usize)> {
        if buf.len() < HEADER_LEN {
            return Err(Error::Protocol(format!("truncated header ({} bytes)", buf.len())));
        }
        if buf[..4] != MAGIC {
            return Err(Error::Protocol("bad packet magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([buf[o], buf[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"));
        let channels = u16_at(20);
        let frames = u16_at(22);
        let len = Self::payload_len(channels as usize, frames as usize);
        if buf.len() < HEADER_LEN + len {
            return Err(Error::Protocol(format!(
                "truncated payload: need {len} bytes, have {}",
                buf.len() - HEADER_LEN
            )));
        }
        Ok((
            DaqPacket {
                fpga_id: u16_at(4),
                sequence: u32_at(6),
                sample_timestamp: u64_at(10),
                status_flags: u16_at(18),
                channels,
                frames,
                payload: buf[HEADER_LEN..HEADER_LEN + len].to_vec(),
            },
            HEADER_LEN + len,
        ))
    }
}

/// Frames `CHANNELS_PER_FPGA` equal-length PDM streams into packets of
/// `frames_per_packet` frames (the last packet may be shorter).
pub fn packetize(streams: &[PdmStream], fpga_id: u16, frames_per_packet: usize) -> Result<Vec<DaqPacket>> {
    if streams.len() != CHANNELS_PER_FPGA {
        return Err(Error::Domain(format!(
            "an FPGA carries exactly {CHANNELS_PER_FPGA} channels, got {}",
            streams.len()
        )));
    }
    if frames_per_packet == 0 || frames_per_packet > u16::MAX as usize {
        return Err(Error::Domain("frames per packet must be in 1..=65535".into()));
    }
    let len = streams[0].len();
    if streams.iter().any(|s| s.len() != len) {
        return Err(Error::Domain("PDM streams differ in length".into()));
    }
    let mut packets = Vec::with_capacity(len.div_ceil(frames_per_packet));
    let mut start = 0usize;
    let mut sequence = 0u32;
    while start < len {
        let frames = frames_per_packet.min(len - start);
        let mut payload = vec![0u8; DaqPacket::payload_len(CHANNELS_PER_FPGA, frames)];
        for (c, s) in streams.iter().enumerate() {
            for f in 0..frames {
                if s.get(start + f) {
                    let i = c * frames + f;
                    payload[i / 8] |= 1 << (i % 8);
                }
            }
        }
        packets.push(DaqPacket {
            fpga_id,
            sequence,
            sample_timestamp: start as u64,
            status_flags: 0,
            channels: CHANNELS_PER_FPGA as u16,
            frames: frames as u16,
            payload,
        });
        start += frames;
        sequence = sequence.wrapping_add(1);
    }
    Ok(packets)
}

/// Missing packets between two received ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gap {
    /// First missing sequence number.
    pub first_sequence: u32,
    /// Number of consecutive missing packets.
    pub missing_packets: u32,
    /// First missing PDM sample (inclusive).
    pub sample_start: u64,
    /// End of the missing range (exclusive).
    pub sample_end: u64,
}

/// Reassembled streams of one FPGA.
#[derive(Debug, Clone, PartialEq)]
pub struct FpgaCapture {
    pub fpga_id: u16,
    /// Timestamp of the first received frame.
    pub start_timestamp: u64,
    pub streams: Vec<PdmStream>,
    pub gaps: Vec<Gap>,
    /// Packets that carried the sync-error status bit.
    pub sync_errors: usize,
}

/// Resequences packets by `(fpga_id, sequence)` and rebuilds the streams.
///
/// Gaps are filled with an alternating bit pattern (zero mean) when
/// `allow_gaps` is set and reported with their exact sample ranges.
pub fn depacketize(packets: &[DaqPacket], allow_gaps: bool) -> Result<Vec<FpgaCapture>> {
    let mut by_fpga: BTreeMap<u16, BTreeMap<u32, &DaqPacket>> = BTreeMap::new();
    for p in packets {
        if by_fpga.entry(p.fpga_id).or_default().insert(p.sequence, p).is_some() {
            return Err(Error::Protocol(format!(
                "duplicate sequence {} from FPGA {}",
                p.sequence, p.fpga_id
            )));
        }
    }
    by_fpga
        .into_iter()
        .map(|(fpga_id, seq)| {
            let first = *seq.values().next().expect("non-empty by construction");
            let channels = first.channels as usize;
            if seq.values().any(|p| p.channels as usize != channels) {
                return Err(Error::Protocol(format!("FPGA {fpga_id}: channel count changes mid-capture")));
            }
            let mut streams: Vec<PdmStream> = (0..channels).map(|c| PdmStream::new(c as u32)).collect();
            let mut gaps = Vec::new();
            let mut sync_errors = 0;
            let mut expected: Option<(u32, u64)> = None;
            for (&s, p) in &seq {
                if let Some((next_seq, next_ts)) = expected {
                    if s != next_seq {
                        if !allow_gaps {
                            return Err(Error::Protocol(format!(
                                "FPGA {fpga_id}: packets {next_seq}..{s} missing"
                            )));
                        }
                        if p.sample_timestamp < next_ts {
                            return Err(Error::Protocol(format!(
                                "FPGA {fpga_id}: timestamp {} goes backwards across a gap",
                                p.sample_timestamp
                            )));
                        }
                        gaps.push(Gap {
                            first_sequence: next_seq,
                            missing_packets: s - next_seq,
                            sample_start: next_ts,
                            sample_end: p.sample_timestamp,
                        });
                        for k in next_ts..p.sample_timestamp {
                            for st in streams.iter_mut() {
                                st.push(k % 2 == 0);
                            }
                        }
                    } else if p.sample_timestamp != next_ts {
                        return Err(Error::Protocol(format!(
                            "FPGA {fpga_id}: packet {s} timestamp {} does not continue at {next_ts}",
                            p.sample_timestamp
                        )));
                    }
                }
                if p.status_flags & STATUS_SYNC_ERROR != 0 {
                    sync_errors += 1;
                }
                for (c, st) in streams.iter_mut().enumerate() {
                    for f in 0..p.frames as usize {
                        st.push(p.bit(c, f));
                    }
                }
                expected = Some((s.wrapping_add(1), p.sample_timestamp + p.frames as u64));
            }
            Ok(FpgaCapture {
                fpga_id,
                start_timestamp: first.sample_timestamp,
                streams,
                gaps,
                sync_errors,
            })
        })
        .collect()
}

/// Drops the packets whose sequence numbers are listed and optionally
/// shuffles the remainder, for exercising the resequencer.
pub fn inject_faults(mut packets: Vec<DaqPacket>, drop: &[u32], shuffle_seed: Option<u64>) -> Vec<DaqPacket> {
    packets.retain(|p| !drop.contains(&p.sequence));
    if let Some(seed) = shuffle_seed {
        packets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    packets
}

/// Writes packets back to back as a raw capture.
pub fn write_capture<W: Write>(mut w: W, packets: &[DaqPacket]) -> Result<()> {
    let mut buf = Vec::new();
    for p in packets {
        buf.clear();
        p.encode(&mut buf);
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_capture<R: Read>(mut r: R) -> Result<Vec<DaqPacket>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut out = Vec::new();
    let mut at = 0;
    while at < buf.len() {
        let (p, used) = DaqPacket::decode(&buf[at..])?;
        out.push(p);
        at += used;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_streams(len: usize, seed: u64) -> Vec<PdmStream> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..CHANNELS_PER_FPGA)
            .map(|c| PdmStream::from_bools(c as u32, (0..len).map(|_| rng.random::<bool>())))
            .collect()
    }

    #[test]
    fn header_round_trip() {
        let p = DaqPacket {
            fpga_id: 7,
            sequence: 0xDEAD_BEEF,
            sample_timestamp: 1 << 40,
            status_flags: STATUS_SYNC_ERROR,
            channels: 200,
            frames: 3,
            payload: vec![0xA5; 75],
        };
        let mut buf = Vec::new();
        p.encode(&mut buf);
        assert_eq!(&buf[..4], b"SIAM");
        assert_eq!(buf.len(), HEADER_LEN + 75);
        let (q, used) = DaqPacket::decode(&buf).unwrap();
        assert_eq!(used, buf.len());
        assert_eq!(p, q);
    }

    #[test]
    fn default_payload_size() {
        assert_eq!(DaqPacket::payload_len(CHANNELS_PER_FPGA, DEFAULT_FRAMES_PER_PACKET), 12_800);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(DaqPacket::decode(b"NOPE").is_err());
        let mut buf = Vec::new();
        packetize(&random_streams(16, 1), 0, 16).unwrap()[0].encode(&mut buf);
        buf[0] = b'X';
        assert!(matches!(DaqPacket::decode(&buf), Err(Error::Protocol(_))));
    }

    #[test]
    fn duplicate_sequence_is_protocol_error() {
        let p = packetize(&random_streams(64, 2), 0, 16).unwrap();
        let mut dup = p.clone();
        dup.push(p[1].clone());
        assert!(matches!(depacketize(&dup, true), Err(Error::Protocol(_))));
    }

    #[test]
    fn gap_without_permission_is_error() {
        let p = packetize(&random_streams(64, 3), 0, 16).unwrap();
        let lossy = inject_faults(p, &[2], None);
        assert!(matches!(depacketize(&lossy, false), Err(Error::Protocol(_))));
    }

    #[test]
    fn wrong_channel_count() {
        let s = random_streams(8, 4);
        assert!(packetize(&s[..199], 0, 4).is_err());
    }

    #[test]
    fn sync_error_flags_are_counted() {
        let mut p = packetize(&random_streams(64, 5), 3, 16).unwrap();
        p[2].status_flags |= STATUS_SYNC_ERROR;
        let cap = depacketize(&p, false).unwrap();
        assert_eq!(cap[0].sync_errors, 1);
        assert_eq!(cap[0].fpga_id, 3);
    }
}
