//! Deterministic synthetic study generator.
//!
//! Every study is a pure function of `(seed, module, case_index, grid)`.
//! Labels are assigned in balanced blocks: within each block of `n` cases
//! (n = option count of a task) every option occurs exactly once, in an
//! order drawn from the seed. Geometry and noise come from independent
//! ChaCha streams keyed by the study id, so changing one case never shifts
//! another.
//!
//! Both modules use a fixed 256 mm field of view centred on the world
//! origin; the grid only changes the voxel spacing.

pub mod brain;
pub mod chest;
mod suite;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::sha256_hex;
use crate::study::{ModuleKind, Point3, StudyError, StudyPackage, Volume, VoxelIndex};

pub use suite::{
    gen_suite, load_suite, write_suite, EpisodeSpec, Suite, SuiteIndex, SuiteManifest, SuiteStudy, DEFAULT_TOOL_BUDGET,
    SUITE_FILE, SUITE_FORMAT,
};

pub const FIELD_OF_VIEW_MM: f64 = 256.0;
pub const DEFAULT_GRID: VoxelIndex = [64, 64, 64];
pub const MIN_GRID: usize = 16;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error("suite i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed suite: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassBalance {
    #[default]
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSpec {
    pub seed: u64,
    pub module: ModuleKind,
    pub n_cases: usize,
    #[serde(default = "default_grid")]
    pub grid: VoxelIndex,
    #[serde(default)]
    pub class_balance: ClassBalance,
}

fn default_grid() -> VoxelIndex {
    DEFAULT_GRID
}

impl GenSpec {
    pub fn new(seed: u64, module: ModuleKind, n_cases: usize) -> Self {
        Self {
            seed,
            module,
            n_cases,
            grid: DEFAULT_GRID,
            class_balance: ClassBalance::Balanced,
        }
    }

    pub fn with_grid(mut self, grid: VoxelIndex) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.n_cases < 1 {
            return Err(GenError::InvalidSpec("n_cases must be >= 1".into()));
        }
        if self.grid.iter().any(|&d| d < MIN_GRID) {
            return Err(GenError::InvalidSpec(format!(
                "grid dims must be >= {MIN_GRID}, got {:?}",
                self.grid
            )));
        }
        Ok(())
    }
}

pub fn study_id(seed: u64, module: ModuleKind, case_index: usize) -> String {
    format!("{module}-s{seed}-c{case_index:04}")
}

/// Generate one study on the default 64³ grid.
pub fn gen_study(seed: u64, module: ModuleKind, case_index: usize) -> StudyPackage {
    gen_study_on_grid(seed, module, case_index, DEFAULT_GRID)
}

pub fn gen_study_on_grid(seed: u64, module: ModuleKind, case_index: usize, grid: VoxelIndex) -> StudyPackage {
    let mut package = match module {
        ModuleKind::Brain => brain::generate(seed, case_index, grid),
        ModuleKind::Chest => chest::generate(seed, case_index, grid),
    };
    package.seal();
    debug_assert!(package.validate().is_ok());
    package
}

/// Independent RNG stream keyed by `(seed, tag)`.
pub(crate) fn stream_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let digest = sha256_hex(format!("{seed}/{tag}"));
    let key = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
    ChaCha8Rng::seed_from_u64(key)
}

/// Label of `case_index` for a task with `n` options, balanced in blocks.
pub fn balanced_label(seed: u64, module: ModuleKind, task_id: &str, case_index: usize, n: usize) -> usize {
    let block = case_index / n;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, &format!("{module}/labels/{task_id}/{block}")));
    order[case_index % n]
}

/// Empty grid covering the shared field of view.
pub(crate) fn blank_grid(grid: VoxelIndex) -> Volume {
    let spacing = grid.map(|n| FIELD_OF_VIEW_MM / n as f64);
    let origin = [0, 1, 2].map(|a| -((grid[a] - 1) as f64) / 2.0 * spacing[a]);
    Volume::filled(grid, spacing, origin, 0).expect("grid dims validated")
}

/// Flat indices of voxels whose centres lie inside an axis-aligned ellipsoid.
pub(crate) fn ellipsoid_voxels(grid: &Volume, center: Point3, semi: Point3) -> Vec<usize> {
    let dims = grid.dims();
    let origin = grid.origin();
    let spacing = grid.spacing();
    let range = |a: usize| {
        let lo = ((center[a] - semi[a] - origin[a]) / spacing[a]).floor().max(0.0) as usize;
        let hi = ((center[a] + semi[a] - origin[a]) / spacing[a]).ceil();
        let hi = if hi < 0.0 { 0 } else { (hi as usize).min(dims[a] - 1) };
        lo..=hi
    };
    let mut out = Vec::new();
    for z in range(2) {
        for y in range(1) {
            for x in range(0) {
                let p = grid.center_mm([x, y, z]);
                let q: f64 = (0..3).map(|a| ((p[a] - center[a]) / semi[a]).powi(2)).sum();
                if q <= 1.0 {
                    out.push(grid.flat_index([x, y, z]));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Add uniform integer noise in `[-amp, amp]` to every voxel.
pub(crate) fn add_noise(volume: &mut Volume, amp: i16, rng: &mut impl Rng) {
    for v in volume.voxels_mut() {
        *v = v.saturating_add(rng.random_range(-amp..=amp));
    }
}

pub(crate) fn dist(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Semi-axes with the longest equal to `radius` along a random axis.
pub(crate) fn random_semi_axes<R: Rng + ?Sized>(rng: &mut R, radius: f64, min_ratio: f64) -> Point3 {
    let mut semi = [
        radius,
        radius * rng.random_range(min_ratio..=1.0),
        radius * rng.random_range(min_ratio..=1.0),
    ];
    semi.shuffle(rng);
    semi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_grid_is_centred() {
        let g = blank_grid([64, 64, 64]);
        assert_eq!(g.spacing(), [4.0; 3]);
        assert_eq!(g.origin(), [-126.0; 3]);
        let (lo, hi) = g.world_bounds();
        assert_eq!(lo, [-126.0; 3]);
        assert_eq!(hi, [126.0; 3]);
    }

    #[test]
    fn balanced_labels_cover_each_block() {
        for n in [3usize, 4, 5] {
            for block in 0..4 {
                let mut seen: Vec<usize> = (0..n)
                    .map(|i| balanced_label(7, ModuleKind::Chest, "t", block * n + i, n))
                    .collect();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(GenSpec::new(1, ModuleKind::Brain, 0).validate().is_err());
        assert!(GenSpec::new(1, ModuleKind::Brain, 1)
            .with_grid([16, 15, 16])
            .validate()
            .is_err());
        assert!(GenSpec::new(1, ModuleKind::Brain, 1).validate().is_ok());
    }

    #[test]
    fn ellipsoid_of_zero_extent_is_centre_voxel() {
        let g = blank_grid([16, 16, 16]);
        let c = g.center_mm([3, 4, 5]);
        assert_eq!(ellipsoid_voxels(&g, c, [1.0, 1.0, 1.0]), vec![g.flat_index([3, 4, 5])]);
    }
}
