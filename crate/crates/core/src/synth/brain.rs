//! Multi-sequence brain MR phantom.
//!
//! Anatomy: a 100 mm "head" sphere with a smooth radial intensity gradient.
//! Surrogate diagnostic classes, encoded across sequences:
//!
//! | option | class          | lesions              | T1  | T1c  | T2  | FLAIR |
//! |--------|----------------|----------------------|-----|------|-----|-------|
//! | A      | enhancing      | 1, radius 12-22 mm   | 250 | 1000 | 800 | 1000  |
//! | B      | non-enhancing  | 1, radius 12-22 mm   | 250 | -    | 800 | 1000  |
//! | C      | multifocal     | 3-5, radius 7-10 mm  | 250 | 950  | 800 | 1000  |
//! | D      | no lesion      | 0                    |     |      |     |       |
//!
//! "-" keeps the tissue value. Tissue never exceeds
//! [`BACKGROUND_CEILING`] in any sequence, so every lesion voxel in FLAIR is
//! strictly above it. Multifocal lesions are spaced so they never touch.

use std::collections::BTreeMap;

use rand::Rng;

use super::{add_noise, balanced_label, blank_grid, dist, ellipsoid_voxels, random_semi_axes, stream_rng, study_id};
use crate::study::{
    AnswerKind, Finding, FindingKind, GroundTruth, McqOption, Modality, ModuleKind, Point3, Series, SeriesMeta,
    StudyPackage, TaskSpec, TruthAnswer, VoxelIndex, TASK_DIAGNOSIS,
};
use crate::tools::region_stats;

pub const SERIES: [(&str, Modality, &str); 4] = [
    ("T1", Modality::MrT1, "Axial T1-weighted"),
    ("T1c", Modality::MrT1c, "Axial T1-weighted post-contrast"),
    ("T2", Modality::MrT2, "Axial T2-weighted"),
    ("FLAIR", Modality::MrFlair, "Axial T2-FLAIR"),
];

/// Highest tissue intensity (noise included) in any brain sequence.
pub const BACKGROUND_CEILING: i16 = 450;
pub const HEAD_RADIUS_MM: f64 = 100.0;
pub const NOISE_AMPLITUDE: i16 = 15;
const TISSUE_BASE: [f64; 4] = [400.0, 420.0, 350.0, 380.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrainClass {
    Enhancing,
    NonEnhancing,
    Multifocal,
    NoLesion,
}

pub const CLASSES: [BrainClass; 4] = [
    BrainClass::Enhancing,
    BrainClass::NonEnhancing,
    BrainClass::Multifocal,
    BrainClass::NoLesion,
];

impl BrainClass {
    pub fn option_id(self) -> &'static str {
        match self {
            BrainClass::Enhancing => "A",
            BrainClass::NonEnhancing => "B",
            BrainClass::Multifocal => "C",
            BrainClass::NoLesion => "D",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            BrainClass::Enhancing => "Enhancing solitary lesion",
            BrainClass::NonEnhancing => "Non-enhancing solitary lesion",
            BrainClass::Multifocal => "Multifocal lesions",
            BrainClass::NoLesion => "No lesion",
        }
    }

    /// Lesion intensity per sequence (T1, T1c, T2, FLAIR); `None` keeps tissue.
    fn lesion_signal(self) -> [Option<i16>; 4] {
        match self {
            BrainClass::Enhancing => [Some(250), Some(1000), Some(800), Some(1000)],
            BrainClass::NonEnhancing => [Some(250), None, Some(800), Some(1000)],
            BrainClass::Multifocal => [Some(250), Some(950), Some(800), Some(1000)],
            BrainClass::NoLesion => [None; 4],
        }
    }
}

pub fn diagnosis_task() -> TaskSpec {
    TaskSpec {
        task_id: TASK_DIAGNOSIS.to_string(),
        question: "Review the full multi-sequence brain MR study (T1, T1c, T2, FLAIR) and give the case-level \
                   diagnosis."
            .to_string(),
        answer: AnswerKind::Mcq {
            options: CLASSES
                .iter()
                .map(|c| McqOption {
                    id: c.option_id().to_string(),
                    text: c.text().to_string(),
                })
                .collect(),
        },
    }
}

fn sample_in_ball(rng: &mut impl Rng, radius: f64) -> Point3 {
    loop {
        let p = [0; 3].map(|_| rng.random_range(-radius..=radius));
        if dist(p, [0.0; 3]) <= radius {
            return p;
        }
    }
}

pub(super) fn generate(seed: u64, case_index: usize, grid: VoxelIndex) -> StudyPackage {
    let id = study_id(seed, ModuleKind::Brain, case_index);
    let class = CLASSES[balanced_label(seed, ModuleKind::Brain, TASK_DIAGNOSIS, case_index, CLASSES.len())];
    let mut rng = stream_rng(seed, &format!("{id}/geometry"));
    let blank = blank_grid(grid);
    let max_spacing = blank.spacing().into_iter().fold(0.0, f64::max);

    // Each lesion: (voxels); empty lesions are resampled.
    let mut lesions: Vec<Vec<usize>> = Vec::new();
    match class {
        BrainClass::NoLesion => {}
        BrainClass::Enhancing | BrainClass::NonEnhancing => loop {
            let radius = rng.random_range(12.0..=22.0f64).max(max_spacing);
            let semi = random_semi_axes(&mut rng, radius, 0.75);
            let center = sample_in_ball(&mut rng, 45.0);
            let voxels = ellipsoid_voxels(&blank, center, semi);
            if !voxels.is_empty() {
                lesions.push(voxels);
                break;
            }
        },
        BrainClass::Multifocal => {
            let mut count = rng.random_range(3..=5usize);
            let mut placed: Vec<(Point3, f64)> = Vec::new();
            let mut attempts = 0usize;
            while placed.len() < count {
                attempts += 1;
                if attempts % 2000 == 0 {
                    // coarse grids cannot always fit five separated foci
                    count = (count - 1).max(3);
                }
                let radius = rng.random_range(7.0..=10.0f64).max(max_spacing);
                let center = sample_in_ball(&mut rng, 60.0);
                let clear = placed
                    .iter()
                    .all(|&(c, r)| dist(c, center) > r + radius + 2.0 * max_spacing);
                if !clear {
                    continue;
                }
                let voxels = ellipsoid_voxels(&blank, center, [radius; 3]);
                if voxels.is_empty() {
                    continue;
                }
                placed.push((center, radius));
                lesions.push(voxels);
            }
        }
    }

    let mut series = Vec::with_capacity(SERIES.len());
    let signal = class.lesion_signal();
    for (s, &(series_id, modality, description)) in SERIES.iter().enumerate() {
        let mut volume = blank.clone();
        for flat in 0..volume.len() {
            let r = dist(volume.center_mm(volume.unflatten(flat)), [0.0; 3]);
            if r <= HEAD_RADIUS_MM {
                volume.voxels_mut()[flat] = (TISSUE_BASE[s] * (1.0 - 0.3 * r / HEAD_RADIUS_MM)).round() as i16;
            }
        }
        if let Some(value) = signal[s] {
            for lesion in &lesions {
                for &f in lesion {
                    volume.voxels_mut()[f] = value;
                }
            }
        }
        add_noise(
            &mut volume,
            NOISE_AMPLITUDE,
            &mut stream_rng(seed, &format!("{id}/noise/{series_id}")),
        );
        series.push(Series {
            meta: SeriesMeta {
                series_id: series_id.to_string(),
                modality,
                description: description.to_string(),
            },
            volume,
        });
    }

    let flair = &series[3].volume;
    let findings = lesions
        .iter()
        .map(|voxels| {
            let stats = region_stats(flair, voxels).expect("lesion is non-empty");
            Finding {
                kind: FindingKind::Lesion,
                series_id: "FLAIR".to_string(),
                centroid_mm: stats.centroid_mm,
                max_diameter_mm: stats.max_diameter_mm,
                voxel_count: stats.voxel_count,
                mean_intensity: stats.mean_intensity,
            }
        })
        .collect();

    let mut answers = BTreeMap::new();
    answers.insert(
        TASK_DIAGNOSIS.to_string(),
        TruthAnswer {
            option: Some(class.option_id().to_string()),
            text: class.text().to_string(),
        },
    );
    StudyPackage {
        study_id: id.clone(),
        module: ModuleKind::Brain,
        series,
        tasks: vec![diagnosis_task()],
        truth: Some(GroundTruth {
            study_id: id,
            answers,
            findings,
        }),
        checksums: Default::default(),
    }
}
