//! Layer-3 quantitative tools: seeded local threshold segmentation and
//! mask statistics.
//!
//! The segmentation is a 6-connected flood fill from the voxel nearest to a
//! world-space seed. Its result is only as good as the seed: a seed outside
//! the target structure is rejected (`SeedOutsideThreshold`) or grows a mask
//! around the wrong structure.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::study::{Point3, Volume, VoxelIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("seed {0:?} lies outside the volume")]
    SeedOutOfBounds(Point3),
    #[error("seed voxel intensity {intensity} is outside [{lo}, {hi}]")]
    SeedOutsideThreshold { intensity: i16, lo: i32, hi: i32 },
    #[error("{0}")]
    BadArgs(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask grid {mask:?} does not match volume grid {volume:?}")]
    GridMismatch { mask: VoxelIndex, volume: VoxelIndex },
    #[error("malformed mask artifact: {0}")]
    MalformedMask(String),
}

/// A binary region on one series' grid, with the parameters that grew it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMask {
    pub series_id: String,
    pub dims: VoxelIndex,
    /// Sorted, deduplicated flat (x-fastest) voxel indices.
    pub voxels: Vec<usize>,
    pub seed_mm: Point3,
    pub lo: i32,
    pub hi: i32,
    pub max_radius_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub voxel_count: u64,
    pub volume_mm3: f64,
    pub centroid_mm: Point3,
    pub mean_intensity: f64,
    pub max_diameter_mm: f64,
}

fn dist2(a: Point3, b: Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// 6-neighbourhood of `i` inside `dims`.
pub(crate) fn neighbors6(i: VoxelIndex, dims: VoxelIndex) -> impl Iterator<Item = VoxelIndex> {
    const STEPS: [(usize, isize); 6] = [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)];
    STEPS.into_iter().filter_map(move |(axis, d)| {
        let c = i[axis] as isize + d;
        if c < 0 || c >= dims[axis] as isize {
            return None;
        }
        let mut n = i;
        n[axis] = c as usize;
        Some(n)
    })
}

/// Grow a region from `seed_mm` over voxels with intensity in `[lo, hi]`
/// whose centres lie within `max_radius_mm` of the seed.
pub fn local_threshold_segment(
    volume: &Volume,
    series_id: &str,
    seed_mm: Point3,
    lo: i32,
    hi: i32,
    max_radius_mm: f64,
) -> Result<(SegmentationMask, MaskStats), ToolError> {
    if lo > hi {
        return Err(ToolError::BadArgs(format!("lo ({lo}) must not exceed hi ({hi})")));
    }
    if !(max_radius_mm > 0.0) || !max_radius_mm.is_finite() {
        return Err(ToolError::BadArgs("max_radius_mm must be a finite value > 0".into()));
    }
    if seed_mm.iter().any(|c| !c.is_finite()) {
        return Err(ToolError::BadArgs("seed_mm must be finite".into()));
    }
    let seed = volume
        .world_to_voxel(seed_mm)
        .map_err(|_| ToolError::SeedOutOfBounds(seed_mm))?;
    let seed_value = volume.get(seed);
    let in_range = |v: i16| (lo..=hi).contains(&(v as i32));
    if !in_range(seed_value) {
        return Err(ToolError::SeedOutsideThreshold {
            intensity: seed_value,
            lo,
            hi,
        });
    }
    let r2 = max_radius_mm * max_radius_mm;
    if dist2(volume.center_mm(seed), seed_mm) > r2 {
        return Err(ToolError::BadArgs(format!(
            "max_radius_mm {max_radius_mm} does not reach the centre of the seed voxel"
        )));
    }

    let dims = volume.dims();
    let mut visited = vec![false; volume.len()];
    let mut queue = VecDeque::new();
    let mut region = Vec::new();
    visited[volume.flat_index(seed)] = true;
    queue.push_back(seed);
    while let Some(v) = queue.pop_front() {
        region.push(volume.flat_index(v));
        for n in neighbors6(v, dims) {
            let f = volume.flat_index(n);
            if visited[f] {
                continue;
            }
            if in_range(volume.voxels()[f]) && dist2(volume.center_mm(n), seed_mm) <= r2 {
                visited[f] = true;
                queue.push_back(n);
            }
        }
    }
    region.sort_unstable();

    let mask = SegmentationMask {
        series_id: series_id.to_string(),
        dims,
        voxels: region,
        seed_mm,
        lo,
        hi,
        max_radius_mm,
    };
    let stats = mask_stats(&mask, volume)?;
    Ok((mask, stats))
}

pub fn mask_stats(mask: &SegmentationMask, volume: &Volume) -> Result<MaskStats, ToolError> {
    if mask.dims != volume.dims() {
        return Err(ToolError::GridMismatch {
            mask: mask.dims,
            volume: volume.dims(),
        });
    }
    region_stats(volume, &mask.voxels)
}

/// Statistics of an arbitrary set of flat voxel indices (sorted or not,
/// without duplicates).
pub fn region_stats(volume: &Volume, voxels: &[usize]) -> Result<MaskStats, ToolError> {
    if voxels.is_empty() {
        return Err(ToolError::EmptyMask);
    }
    if let Some(&bad) = voxels.iter().find(|&&f| f >= volume.len()) {
        return Err(ToolError::MalformedMask(format!("voxel {bad} outside the grid")));
    }
    let n = voxels.len() as f64;
    let mut index_sum = [0u64; 3];
    let mut intensity_sum = 0i64;
    for &f in voxels {
        let i = volume.unflatten(f);
        for a in 0..3 {
            index_sum[a] += i[a] as u64;
        }
        intensity_sum += volume.voxels()[f] as i64;
    }
    let origin = volume.origin();
    let spacing = volume.spacing();
    let centroid_mm = [0, 1, 2].map(|a| origin[a] + spacing[a] * (index_sum[a] as f64 / n));

    Ok(MaskStats {
        voxel_count: voxels.len() as u64,
        volume_mm3: n * volume.voxel_volume_mm3(),
        centroid_mm,
        mean_intensity: intensity_sum as f64 / n,
        max_diameter_mm: max_diameter(volume, voxels),
    })
}

/// Largest distance between two voxel centres of the region.
///
/// The farthest pair of a point set are extreme points of its hull, and an
/// interior voxel (all six neighbours in the region) is the midpoint of two
/// region voxels, so only surface voxels need to be compared.
fn max_diameter(volume: &Volume, voxels: &[usize]) -> f64 {
    let dims = volume.dims();
    let mut member = vec![false; volume.len()];
    for &f in voxels {
        member[f] = true;
    }
    let surface: Vec<Point3> = voxels
        .iter()
        .filter_map(|&f| {
            let i = volume.unflatten(f);
            let inner = neighbors6(i, dims).filter(|&n| member[volume.flat_index(n)]).count() == 6;
            (!inner).then(|| volume.center_mm(i))
        })
        .collect();
    let mut best = 0.0f64;
    for (k, a) in surface.iter().enumerate() {
        for b in &surface[k + 1..] {
            best = best.max(dist2(*a, *b));
        }
    }
    best.sqrt()
}

const MASK_MAGIC: &[u8; 4] = b"MMSK";
const MASK_VERSION: u16 = 1;

/// Serialize a mask: header (series id, grid, thresholds, seed, radius)
/// followed by `(start, length)` runs over the flat x-fastest index space.
///
/// ```text
/// "MMSK" | u16 version | u16 0 | u16 id_len | id bytes | u32 x3 dims
/// | i32 lo | i32 hi | f64 x3 seed_mm | f64 max_radius_mm
/// | u32 run_count | (u32 start, u32 len) x run_count
/// ```
/// All integers and floats little-endian.
pub fn encode_mask(mask: &SegmentationMask) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&MASK_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(mask.series_id.len() as u16).to_le_bytes());
    out.extend_from_slice(mask.series_id.as_bytes());
    for d in mask.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&mask.lo.to_le_bytes());
    out.extend_from_slice(&mask.hi.to_le_bytes());
    for c in mask.seed_mm {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&mask.max_radius_mm.to_le_bytes());

    let runs = to_runs(&mask.voxels);
    out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
    for (start, len) in runs {
        out.extend_from_slice(&(start as u32).to_le_bytes());
        out.extend_from_slice(&(len as u32).to_le_bytes());
    }
    out
}

fn to_runs(sorted: &[usize]) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &f in sorted {
        match runs.last_mut() {
            Some((start, len)) if *start + *len == f => *len += 1,
            _ => runs.push((f, 1)),
        }
    }
    runs
}

pub fn decode_mask(bytes: &[u8]) -> Result<SegmentationMask, ToolError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MASK_MAGIC {
        return Err(ToolError::MalformedMask("bad magic".into()));
    }
    if cur.u16()? != MASK_VERSION {
        return Err(ToolError::MalformedMask("unsupported version".into()));
    }
    cur.u16()?;
    let id_len = cur.u16()? as usize;
    let series_id = String::from_utf8(cur.take(id_len)?.to_vec())
        .map_err(|_| ToolError::MalformedMask("series id is not UTF-8".into()))?;
    let dims = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
    let lo = cur.u32()? as i32;
    let hi = cur.u32()? as i32;
    let seed_mm = [cur.f64()?, cur.f64()?, cur.f64()?];
    let max_radius_mm = cur.f64()?;
    let run_count = cur.u32()? as usize;
    let total = dims.iter().product::<usize>();
    let mut voxels = Vec::new();
    for _ in 0..run_count {
        let start = cur.u32()? as usize;
        let len = cur.u32()? as usize;
        if len == 0 || start + len > total || voxels.last().is_some_and(|&l| l >= start) {
            return Err(ToolError::MalformedMask(
                "runs must be non-empty, ordered and in bounds".into(),
            ));
        }
        voxels.extend(start..start + len);
    }
    if cur.pos != bytes.len() {
        return Err(ToolError::MalformedMask("trailing bytes".into()));
    }
    Ok(SegmentationMask {
        series_id,
        dims,
        voxels,
        seed_mm,
        lo,
        hi,
        max_radius_mm,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ToolError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ToolError::MalformedMask("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, ToolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ToolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ToolError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(dims: VoxelIndex, voxels: Vec<i16>) -> Volume {
        Volume::new(dims, [1.0; 3], [0.0; 3], voxels).unwrap()
    }

    #[test]
    fn uniform_cube_fills_completely() {
        let v = unit([3, 3, 3], vec![100; 27]);
        let (mask, stats) = local_threshold_segment(&v, "S", [1.0, 1.0, 1.0], 50, 150, 100.0).unwrap();
        assert_eq!(mask.voxels.len(), 27);
        assert_eq!(stats.voxel_count, 27);
        assert_eq!(stats.volume_mm3, 27.0);
        assert_eq!(stats.centroid_mm, [1.0, 1.0, 1.0]);
        assert_eq!(stats.mean_intensity, 100.0);
    }

    #[test]
    fn single_bright_voxel() {
        let mut vox = vec![0i16; 125];
        let v0 = unit([5, 5, 5], vox.clone());
        vox[v0.flat_index([1, 3, 2])] = 200;
        let v = unit([5, 5, 5], vox);
        let (_, stats) = local_threshold_segment(&v, "S", [1.0, 3.0, 2.0], 150, 250, 10.0).unwrap();
        assert_eq!(stats.voxel_count, 1);
        assert_eq!(stats.centroid_mm, [1.0, 3.0, 2.0]);
        assert_eq!(stats.max_diameter_mm, 0.0);
    }

    #[test]
    fn seed_on_background_is_rejected() {
        let v = unit([4, 4, 4], vec![0; 64]);
        assert_eq!(
            local_threshold_segment(&v, "S", [1.0, 1.0, 1.0], 150, 250, 10.0).unwrap_err(),
            ToolError::SeedOutsideThreshold {
                intensity: 0,
                lo: 150,
                hi: 250
            }
        );
    }

    #[test]
    fn bad_arguments() {
        let v = unit([4, 4, 4], vec![0; 64]);
        assert!(matches!(
            local_threshold_segment(&v, "S", [1.0; 3], 5, 1, 10.0),
            Err(ToolError::BadArgs(_))
        ));
        assert!(matches!(
            local_threshold_segment(&v, "S", [1.0; 3], 0, 1, 0.0),
            Err(ToolError::BadArgs(_))
        ));
        assert!(matches!(
            local_threshold_segment(&v, "S", [10.0, 1.0, 1.0], 0, 1, 3.0),
            Err(ToolError::SeedOutOfBounds(_))
        ));
        // seed 0.4 mm off the voxel centre with a 0.1 mm radius
        assert!(matches!(
            local_threshold_segment(&v, "S", [1.4, 1.0, 1.0], 0, 1, 0.1),
            Err(ToolError::BadArgs(_))
        ));
    }

    #[test]
    fn radius_limits_growth() {
        let v = unit([9, 1, 1], vec![100; 9]);
        let (mask, _) = local_threshold_segment(&v, "S", [4.0, 0.0, 0.0], 0, 200, 2.0).unwrap();
        assert_eq!(mask.voxels, vec![2, 3, 4, 5, 6]);
    }

    #[test]
    fn diagonal_voxels_are_not_connected() {
        let mut vox = vec![0i16; 8];
        vox[0] = 100; // (0,0,0)
        vox[3] = 100; // (1,1,0)
        let v = unit([2, 2, 2], vox);
        let (mask, _) = local_threshold_segment(&v, "S", [0.0; 3], 50, 150, 10.0).unwrap();
        assert_eq!(mask.voxels, vec![0]);
    }

    #[test]
    fn stats_examples() {
        let v = unit([5, 5, 5], vec![1; 125]);
        let one = region_stats(&v, &[v.flat_index([2, 2, 2])]).unwrap();
        assert_eq!(one.centroid_mm, [2.0, 2.0, 2.0]);
        assert_eq!(one.volume_mm3, 1.0);
        let two = region_stats(&v, &[v.flat_index([0, 0, 0]), v.flat_index([3, 4, 0])]).unwrap();
        assert_eq!(two.max_diameter_mm, 5.0);
        assert_eq!(region_stats(&v, &[]).unwrap_err(), ToolError::EmptyMask);
    }

    #[test]
    fn stats_scale_with_spacing() {
        let v = Volume::filled([4, 4, 4], [2.0, 1.0, 0.5], [-3.0, 0.0, 0.0], 7).unwrap();
        let all: Vec<usize> = (0..64).collect();
        let s = region_stats(&v, &all).unwrap();
        assert_eq!(s.volume_mm3, 64.0);
        assert_eq!(s.centroid_mm, [0.0, 1.5, 0.75]);
        let expected = (36.0f64 + 9.0 + 2.25).sqrt();
        assert!((s.max_diameter_mm - expected).abs() < 1e-12);
    }

    #[test]
    fn mask_grid_mismatch() {
        let v = unit([2, 2, 2], vec![0; 8]);
        let mask = SegmentationMask {
            series_id: "S".into(),
            dims: [3, 3, 3],
            voxels: vec![0],
            seed_mm: [0.0; 3],
            lo: 0,
            hi: 0,
            max_radius_mm: 1.0,
        };
        assert!(matches!(mask_stats(&mask, &v), Err(ToolError::GridMismatch { .. })));
    }

    #[test]
    fn truncated_mask_rejected() {
        let mask = SegmentationMask {
            series_id: "PET".into(),
            dims: [4, 4, 4],
            voxels: vec![1, 2, 3, 9],
            seed_mm: [1.0, 0.0, 0.0],
            lo: 10,
            hi: 20,
            max_radius_mm: 5.0,
        };
        let bytes = encode_mask(&mask);
        assert!(decode_mask(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn mask_encoding_round_trips(
            set in prop::collection::btree_set(0usize..512, 0..80),
            lo in -100i32..100,
            seed in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let mask = SegmentationMask {
                series_id: "CT".into(),
                dims: [8, 8, 8],
                voxels: set.into_iter().collect(),
                seed_mm: seed,
                lo,
                hi: lo + 50,
                max_radius_mm: 3.5,
            };
            let bytes = encode_mask(&mask);
            prop_assert_eq!(decode_mask(&bytes).unwrap(), mask);
        }
    }
}
