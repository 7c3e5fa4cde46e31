//! MVOL volume file.
//!
//! Fixed 64-byte little-endian header followed by the int16 payload:
//!
//! | offset | size | field                                |
//! |-------:|-----:|--------------------------------------|
//! | 0      | 4    | magic `MVOL`                          |
//! | 4      | 2    | version (u16, = 1)                    |
//! | 6      | 2    | reserved, zero                        |
//! | 8      | 12   | dims nx, ny, nz (u32 x3)              |
//! | 20     | 12   | spacing mm (f32 x3)                   |
//! | 32     | 12   | origin mm, centre of voxel 0 (f32 x3) |
//! | 44     | 8    | voxel count (u64)                     |
//! | 52     | 12   | reserved, zero                        |
//! | 64     | 2·n  | voxels (i16), x fastest               |

use super::{StudyError, Volume};

pub const MVOL_MAGIC: &[u8; 4] = b"MVOL";
pub const MVOL_VERSION: u16 = 1;
pub const MVOL_HEADER_LEN: usize = 64;

pub fn encode_mvol(volume: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(MVOL_HEADER_LEN + 2 * volume.len());
    out.extend_from_slice(MVOL_MAGIC);
    out.extend_from_slice(&MVOL_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for d in volume.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in volume.spacing() {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    for o in volume.origin() {
        out.extend_from_slice(&(o as f32).to_le_bytes());
    }
    out.extend_from_slice(&(volume.len() as u64).to_le_bytes());
    out.resize(MVOL_HEADER_LEN, 0);
    for v in volume.voxels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_mvol(bytes: &[u8]) -> Result<Volume, StudyError> {
    let bad = |m: &str| StudyError::SchemaViolation(format!("mvol: {m}"));
    if bytes.len() < MVOL_HEADER_LEN {
        return Err(bad("file shorter than header"));
    }
    if &bytes[0..4] != MVOL_MAGIC {
        return Err(bad("bad magic"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    if u16_at(4) != MVOL_VERSION {
        return Err(bad("unsupported version"));
    }
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    let spacing = [f32_at(20), f32_at(24), f32_at(28)];
    let origin = [f32_at(32), f32_at(36), f32_at(40)];
    let count = u64::from_le_bytes(bytes[44..52].try_into().unwrap()) as usize;
    if dims.iter().product::<usize>() != count {
        return Err(bad("voxel count disagrees with dims"));
    }
    if bytes.len() != MVOL_HEADER_LEN + 2 * count {
        return Err(bad("payload length disagrees with voxel count"));
    }
    let voxels = bytes[MVOL_HEADER_LEN..]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Volume::new(dims, spacing, origin, voxels).map_err(|e| bad(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_64_bytes() {
        let v = Volume::new([2, 1, 1], [1.5, 2.0, 3.0], [-1.0, 0.0, 4.0], vec![-3, 7]).unwrap();
        let bytes = encode_mvol(&v);
        assert_eq!(bytes.len(), 64 + 4);
        assert_eq!(&bytes[0..4], b"MVOL");
        assert_eq!(&bytes[64..], &[0xFD, 0xFF, 0x07, 0x00]);
    }

    #[test]
    fn truncated_payload_rejected() {
        let v = Volume::filled([2, 2, 2], [1.0; 3], [0.0; 3], 5).unwrap();
        let mut bytes = encode_mvol(&v);
        bytes.pop();
        assert!(matches!(decode_mvol(&bytes), Err(StudyError::SchemaViolation(_))));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            dims in prop::array::uniform3(1usize..6),
            spacing in prop::array::uniform3(0.1f64..10.0),
            origin in prop::array::uniform3(-500.0f64..500.0),
            seed in any::<i16>(),
        ) {
            let n: usize = dims.iter().product();
            let voxels = (0..n).map(|i| seed.wrapping_add(i as i16 * 37)).collect();
            let v = Volume::new(dims, spacing, origin, voxels).unwrap();
            let bytes = encode_mvol(&v);
            let back = decode_mvol(&bytes).unwrap();
            prop_assert_eq!(&back, &v);
            prop_assert_eq!(encode_mvol(&back), bytes);
        }
    }
}
