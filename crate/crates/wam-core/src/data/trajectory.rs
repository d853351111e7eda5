//! One recorded episode and its on-disk format.
//!
//! File layout, all little-endian:
//!
//! ```text
//! magic "WAMT" | u16 version | u32 header_len | header JSON
//! frames  (u8,  T_v * W * H * 3)
//! actions (f32, T_a * 3)
//! states  (f32, T_a * 3)
//! u32 CRC32 over the three arrays
//! ```
//!
//! The header declares the rates, array shapes, instruction, segment
//! boundaries, environment configuration, and the generation seed; arrays
//! follow in the declared order. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::env::{Action, EnvConfig, Frame, Instruction};

const MAGIC: &[u8; 4] = b"WAMT";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentBoundary {
    pub tick: u64,
    pub instruction: Instruction,
}

/// One episode: frames at the video rate, actions and proprioceptive states
/// at the control rate, with `T_a = r * (T_v - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub frames: Vec<Frame>,
    pub actions: Vec<Action>,
    pub states: Vec<[f32; 3]>,
    /// Instruction of the first segment; per-segment instructions live in
    /// `segments`.
    pub instruction: Instruction,
    pub control_hz: u32,
    pub video_hz: u32,
    pub segments: Vec<SegmentBoundary>,
    pub env: EnvConfig,
    pub seed: u64,
}

impl TrajectoryRecord {
    /// Control ticks per frame.
    pub fn ticks_per_frame(&self) -> usize {
        (self.control_hz / self.video_hz) as usize
    }

    pub fn validate_alignment(&self) -> Result<(), DataError> {
        let r = self.ticks_per_frame();
        let want = r * (self.frames.len().saturating_sub(1));
        if self.actions.len() != want || self.states.len() != self.actions.len() {
            return Err(DataError::Misaligned {
                actions: self.actions.len(),
                frames: self.frames.len(),
                r,
            });
        }
        Ok(())
    }

    /// Instruction in effect at a control tick (the latest segment boundary
    /// at or before it).
    pub fn instruction_at_tick(&self, tick: u64) -> Instruction {
        let mut cur = self.instruction;
        for s in &self.segments {
            if s.tick <= tick {
                cur = s.instruction;
            } else {
                break;
            }
        }
        cur
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    control_hz: u32,
    video_hz: u32,
    t_v: usize,
    frame_w: usize,
    frame_h: usize,
    t_a: usize,
    instruction: Instruction,
    segments: Vec<SegmentBoundary>,
    env: EnvConfig,
    seed: u64,
}

pub fn write_trajectory(path: &Path, traj: &TrajectoryRecord) -> Result<(), DataError> {
    let (fw, fh) = traj
        .frames
        .first()
        .map(|f| (f.width, f.height))
        .unwrap_or((traj.env.frame_width(), traj.env.img_h));
    let header = Header {
        control_hz: traj.control_hz,
        video_hz: traj.video_hz,
        t_v: traj.frames.len(),
        frame_w: fw,
        frame_h: fh,
        t_a: traj.actions.len(),
        instruction: traj.instruction,
        segments: traj.segments.clone(),
        env: traj.env.clone(),
        seed: traj.seed,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| DataError::Header(e.to_string()))?;

    let mut payload = Vec::with_capacity(traj.frames.len() * fw * fh * 3 + traj.actions.len() * 24);
    for f in &traj.frames {
        payload.extend_from_slice(&f.data);
    }
    for a in &traj.actions {
        for v in a.as_array() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    for s in &traj.states {
        for v in s {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&payload);

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    w.write_all(&payload)?;
    w.write_all(&crc.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_exact_or(
    r: &mut impl Read,
    buf: &mut [u8],
    array: &'static str,
) -> Result<(), DataError> {
    r.read_exact(buf).map_err(|_| DataError::Truncated { array })
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryRecord, DataError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(DataError::BadMagic);
    }
    let mut v = [0u8; 2];
    read_exact_or(&mut r, &mut v, "version")?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(DataError::Version { found: version });
    }
    let mut hl = [0u8; 4];
    read_exact_or(&mut r, &mut hl, "header length")?;
    let header_len = u32::from_le_bytes(hl) as usize;
    let mut hjson = vec![0u8; header_len];
    read_exact_or(&mut r, &mut hjson, "header")?;
    let header: Header =
        serde_json::from_slice(&hjson).map_err(|e| DataError::Header(e.to_string()))?;

    let frame_bytes = header.frame_w * header.frame_h * 3;
    let mut frames_raw = vec![0u8; header.t_v * frame_bytes];
    read_exact_or(&mut r, &mut frames_raw, "frames")?;
    let mut actions_raw = vec![0u8; header.t_a * 3 * 4];
    read_exact_or(&mut r, &mut actions_raw, "actions")?;
    let mut states_raw = vec![0u8; header.t_a * 3 * 4];
    read_exact_or(&mut r, &mut states_raw, "states")?;

    let mut crc_raw = [0u8; 4];
    read_exact_or(&mut r, &mut crc_raw, "checksum")?;
    let stored = u32::from_le_bytes(crc_raw);
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&frames_raw);
    hasher.update(&actions_raw);
    hasher.update(&states_raw);
    let computed = hasher.finalize();
    if stored != computed {
        return Err(DataError::Checksum { stored, computed });
    }

    let frames = frames_raw
        .chunks_exact(frame_bytes)
        .map(|c| Frame {
            width: header.frame_w,
            height: header.frame_h,
            data: c.to_vec(),
        })
        .collect();
    let f32_of = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    let actions = actions_raw
        .chunks_exact(12)
        .map(|c| Action::new(f32_of(&c[0..4]), f32_of(&c[4..8]), f32_of(&c[8..12])))
        .collect();
    let states = states_raw
        .chunks_exact(12)
        .map(|c| [f32_of(&c[0..4]), f32_of(&c[4..8]), f32_of(&c[8..12])])
        .collect();

    Ok(TrajectoryRecord {
        frames,
        actions,
        states,
        instruction: header.instruction,
        control_hz: header.control_hz,
        video_hz: header.video_hz,
        segments: header.segments,
        env: header.env,
        seed: header.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_episode, EnvConfig, GenConfig, GenMode};

    fn sample() -> TrajectoryRecord {
        generate_episode(&EnvConfig::default(), 3, GenMode::Diverse, &GenConfig::default())
            .unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wamt");
        let traj = sample();
        write_trajectory(&path, &traj).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(traj, back);
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wamt");
        write_trajectory(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_trajectory(&path), Err(DataError::BadMagic)));
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wamt");
        write_trajectory(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_trajectory(&path),
            Err(DataError::Version { found: 9 })
        ));
    }

    #[test]
    fn truncation_names_the_array() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wamt");
        let traj = sample();
        write_trajectory(&path, &traj).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // Cut in the middle of the frames array.
        let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let frames_start = 10 + header_len;
        std::fs::write(&path, &bytes[..frames_start + 100]).unwrap();
        match read_trajectory(&path) {
            Err(DataError::Truncated { array }) => assert_eq!(array, "frames"),
            other => panic!("expected frames truncation, got {other:?}"),
        }

        // Cut in the middle of the actions array.
        let frames_len = traj.frames.len() * traj.frames[0].data.len();
        std::fs::write(&path, &bytes[..frames_start + frames_len + 5]).unwrap();
        match read_trajectory(&path) {
            Err(DataError::Truncated { array }) => assert_eq!(array, "actions"),
            other => panic!("expected actions truncation, got {other:?}"),
        }
    }

    #[test]
    fn checksum_catches_payload_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wamt");
        write_trajectory(&path, &sample()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let i = 10 + header_len + 3;
        bytes[i] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_trajectory(&path),
            Err(DataError::Checksum { .. })
        ));
    }

    #[test]
    fn instruction_at_tick_follows_segments() {
        let traj = sample();
        // Zero-length segments can stack at tick 0; the latest one wins.
        let at0 = traj
            .segments
            .iter()
            .filter(|s| s.tick == 0)
            .next_back()
            .unwrap();
        assert_eq!(traj.instruction_at_tick(0), at0.instruction);
        // Find two consecutive segments with distinct start ticks.
        for w in traj.segments.windows(2) {
            if w[1].tick > w[0].tick {
                assert_eq!(traj.instruction_at_tick(w[1].tick), w[1].instruction);
                assert_eq!(traj.instruction_at_tick(w[1].tick - 1), w[0].instruction);
                return;
            }
        }
    }
}
