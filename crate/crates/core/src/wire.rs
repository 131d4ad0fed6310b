//! Byte layouts of the inter-sensor messages.
//!
//! Every message is little-endian and starts with the same 12-byte header:
//!
//! | offset | type | field                         |
//! |--------|------|-------------------------------|
//! | 0      | u32  | round id                      |
//! | 4      | u32  | step `k` the message refers to |
//! | 8      | u16  | horizon `H`                   |
//! | 10     | u16  | entry count `M`               |
//!
//! **Trajectory bundle** (local and fused pdfs), per target:
//! `u32` target id, `u64` contributor bitmask (bit `j` set for sensor `j`),
//! `2H` `f64` mean coordinates `x₁ y₁ … x_H y_H`, then `3H` `f64` covariance
//! entries `xx xy yy` per step. Size: `12 + M·(12 + 40·H)` bytes.
//!
//! **Detection counts**: `M·H` `u16` counts, target-major, targets in
//! ascending id order. Size: `12 + 2·M·H` bytes.
//!
//! **Plan broadcast**: `M = 1`, then `2H` `f64` controls `a₁ ω₁ … a_H ω_H`.
//! Size: `12 + 16·H` bytes.
//!
//! None of the layouts carries per-sensor data beyond the fixed-width
//! contributor mask, so sizes depend on `M` and `H` only.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::linalg::{Sym2, Vec2};
use crate::scalar::Real;
use crate::trajectory::TrajectoryGaussian;
use crate::world::{ControlInput, SensorId, TargetId};

pub const HEADER_BYTES: usize = 12;

/// Highest sensor id representable in the contributor mask.
pub const MAX_CONTRIBUTOR_ID: SensorId = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub round: u32,
    pub step: u32,
    pub horizon: u16,
    pub entries: u16,
}

impl Header {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.horizon.to_le_bytes());
        out.extend_from_slice(&self.entries.to_le_bytes());
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            round: r.u32()?,
            step: r.u32()?,
            horizon: r.u16()?,
            entries: r.u16()?,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Wire(format!("truncated message: need {end} bytes, have {}", self.buf.len())))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Wire(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

fn narrow_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Wire(format!("{what} {v} exceeds u16")))
}

pub fn contributor_mask(ids: &BTreeSet<SensorId>) -> Result<u64> {
    ids.iter().try_fold(0u64, |mask, &id| {
        if id > MAX_CONTRIBUTOR_ID {
            Err(Error::Wire(format!("sensor id {id} does not fit the contributor mask")))
        } else {
            Ok(mask | (1u64 << id))
        }
    })
}

pub fn contributors_from_mask(mask: u64) -> BTreeSet<SensorId> {
    (0..=MAX_CONTRIBUTOR_ID).filter(|i| mask & (1u64 << i) != 0).collect()
}

/// One target's pdf inside a trajectory bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry<T> {
    pub target_id: TargetId,
    pub contributors: BTreeSet<SensorId>,
    pub pdf: TrajectoryGaussian<T>,
}

pub fn trajectory_bundle_size(targets: usize, horizon: usize) -> usize {
    HEADER_BYTES + targets * (12 + 40 * horizon)
}

pub fn encode_trajectory_bundle<T: Real>(round: u32, step: u32, entries: &[BundleEntry<T>]) -> Result<Vec<u8>> {
    let horizon = entries.first().map_or(0, |e| e.pdf.horizon());
    if entries.iter().any(|e| e.pdf.horizon() != horizon) {
        return Err(Error::Wire("bundle entries disagree on horizon".into()));
    }
    let mut out = Vec::with_capacity(trajectory_bundle_size(entries.len(), horizon));
    Header {
        round,
        step,
        horizon: narrow_u16(horizon, "horizon")?,
        entries: narrow_u16(entries.len(), "entry count")?,
    }
    .write(&mut out);
    for e in entries {
        out.extend_from_slice(&e.target_id.to_le_bytes());
        out.extend_from_slice(&contributor_mask(&e.contributors)?.to_le_bytes());
        for m in e.pdf.mean() {
            out.extend_from_slice(&m.x.as_f64().to_le_bytes());
            out.extend_from_slice(&m.y.as_f64().to_le_bytes());
        }
        for b in e.pdf.blocks() {
            for v in [b.xx, b.xy, b.yy] {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_trajectory_bundle<T: Real>(buf: &[u8]) -> Result<(Header, Vec<BundleEntry<T>>)> {
    let mut r = Reader::new(buf);
    let header = Header::read(&mut r)?;
    let h = header.horizon as usize;
    let mut entries = Vec::with_capacity(header.entries as usize);
    for _ in 0..header.entries {
        let target_id = r.u32()?;
        let contributors = contributors_from_mask(r.u64()?);
        let mut mean = Vec::with_capacity(h);
        for _ in 0..h {
            let x = T::lit(r.f64()?);
            let y = T::lit(r.f64()?);
            mean.push(Vec2::new(x, y));
        }
        let mut blocks = Vec::with_capacity(h);
        for _ in 0..h {
            let xx = T::lit(r.f64()?);
            let xy = T::lit(r.f64()?);
            let yy = T::lit(r.f64()?);
            blocks.push(Sym2::new(xx, xy, yy));
        }
        let pdf = TrajectoryGaussian::new(header.step, mean, blocks)?;
        entries.push(BundleEntry {
            target_id,
            contributors,
            pdf,
        });
    }
    r.finish()?;
    Ok((header, entries))
}

pub fn detection_counts_size(targets: usize, horizon: usize) -> usize {
    HEADER_BYTES + 2 * targets * horizon
}

/// Encodes `counts` laid out target-major (`counts[i * horizon + τ]`).
pub fn encode_detection_counts(round: u32, step: u32, targets: usize, horizon: usize, counts: &[u32]) -> Result<Vec<u8>> {
    if counts.len() != targets * horizon {
        return Err(Error::Wire(format!("{} counts for {targets}x{horizon} layout", counts.len())));
    }
    let mut out = Vec::with_capacity(detection_counts_size(targets, horizon));
    Header {
        round,
        step,
        horizon: narrow_u16(horizon, "horizon")?,
        entries: narrow_u16(targets, "target count")?,
    }
    .write(&mut out);
    for &c in counts {
        out.extend_from_slice(&narrow_u16(c as usize, "detection count")?.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_detection_counts(buf: &[u8]) -> Result<(Header, Vec<u32>)> {
    let mut r = Reader::new(buf);
    let header = Header::read(&mut r)?;
    let n = header.horizon as usize * header.entries as usize;
    let counts = (0..n).map(|_| r.u16().map(u32::from)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((header, counts))
}

pub fn plan_broadcast_size(horizon: usize) -> usize {
    HEADER_BYTES + 16 * horizon
}

pub fn encode_plan_broadcast<T: Real>(round: u32, step: u32, controls: &[ControlInput<T>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(plan_broadcast_size(controls.len()));
    Header {
        round,
        step,
        horizon: narrow_u16(controls.len(), "horizon")?,
        entries: 1,
    }
    .write(&mut out);
    for u in controls {
        out.extend_from_slice(&u.accel.as_f64().to_le_bytes());
        out.extend_from_slice(&u.turn_rate.as_f64().to_le_bytes());
    }
    Ok(out)
}

pub fn decode_plan_broadcast<T: Real>(buf: &[u8]) -> Result<(Header, Vec<ControlInput<T>>)> {
    let mut r = Reader::new(buf);
    let header = Header::read(&mut r)?;
    let controls = (0..header.horizon)
        .map(|_| Ok(ControlInput::new(T::lit(r.f64()?), T::lit(r.f64()?))))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((header, controls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(target: u32, h: usize, contributors: &[u32]) -> BundleEntry<f64> {
        let mean = (0..h).map(|i| Vec2::new(i as f64 * 0.37, -1.25 + i as f64)).collect();
        let blocks = (0..h).map(|i| Sym2::new(1.0 + i as f64, 0.1, 2.0)).collect();
        BundleEntry {
            target_id: target,
            contributors: contributors.iter().copied().collect(),
            pdf: TrajectoryGaussian::new(7, mean, blocks).unwrap(),
        }
    }

    #[test]
    fn detection_counts_layout_for_eight_targets() {
        let counts: Vec<u32> = (0..40).map(|i| i % 4).collect();
        let bytes = encode_detection_counts(3, 11, 8, 5, &counts).unwrap();
        assert_eq!(bytes.len(), 12 + 2 * 40);
        assert_eq!(&bytes[0..4], &3u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &11u32.to_le_bytes());
        assert_eq!(&bytes[8..10], &5u16.to_le_bytes());
        assert_eq!(&bytes[10..12], &8u16.to_le_bytes());
        let (h, back) = decode_detection_counts(&bytes).unwrap();
        assert_eq!(h.entries, 8);
        assert_eq!(back, counts);
    }

    #[test]
    fn bundle_size_matches_layout() {
        let entries: Vec<_> = (0..3).map(|t| entry(t, 5, &[0, 2, 63])).collect();
        let bytes = encode_trajectory_bundle(1, 7, &entries).unwrap();
        assert_eq!(bytes.len(), trajectory_bundle_size(3, 5));
        let (_, back) = decode_trajectory_bundle::<f64>(&bytes).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn rejects_truncated_and_trailing() {
        let bytes = encode_trajectory_bundle(1, 7, &[entry(0, 2, &[1])]).unwrap();
        assert!(decode_trajectory_bundle::<f64>(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_trajectory_bundle::<f64>(&longer).is_err());
    }

    #[test]
    fn contributor_ids_beyond_mask_rejected() {
        let e = entry(0, 1, &[64]);
        assert!(encode_trajectory_bundle(0, 0, &[e]).is_err());
    }

    #[test]
    fn plan_broadcast_roundtrip() {
        let controls = vec![ControlInput::new(1.5, -0.25), ControlInput::new(-5.0, 0.5)];
        let bytes = encode_plan_broadcast(2, 3, &controls).unwrap();
        assert_eq!(bytes.len(), plan_broadcast_size(2));
        assert_eq!(decode_plan_broadcast::<f64>(&bytes).unwrap().1, controls);
    }

    proptest! {
        #[test]
        fn counts_roundtrip(m in 1usize..10, h in 1usize..8, seed in any::<u64>()) {
            let counts: Vec<u32> = (0..m * h).map(|i| ((seed >> (i % 64)) & 0xff) as u32).collect();
            let bytes = encode_detection_counts(0, 0, m, h, &counts).unwrap();
            prop_assert_eq!(bytes.len(), detection_counts_size(m, h));
            prop_assert_eq!(decode_detection_counts(&bytes).unwrap().1, counts);
        }

        #[test]
        fn mask_roundtrip(ids in proptest::collection::btree_set(0u32..64, 0..20)) {
            prop_assert_eq!(contributors_from_mask(contributor_mask(&ids).unwrap()), ids);
        }
    }
}
