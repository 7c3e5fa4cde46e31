//! Paired CT/PET chest phantom with five structured answers.
//!
//! World axes: x runs from the patient's right (negative) to left
//! (positive), y anterior-posterior, z inferior (negative) to superior
//! (positive). Anatomy is a body ellipse, two lung ellipsoids centred at
//! x = ±65 mm, and mediastinal nodal stations near x = 0.
//!
//! Answer encoding:
//! - location: the lobe box (see [`LOBES`]) containing the lesion centroid;
//! - T stage: max lesion diameter, ≤30 / ≤50 / ≤70 / >70 mm → T1..T4;
//! - N stage: number of hot nodal foci, 0/1/2/≥3 → N0..N3;
//! - histology and grade: jointly encoded in the lesion's mean PET uptake,
//!   `LESION_BASE + LESION_STEP * (3 * histology + grade)`.
//!
//! PET intensity bands (noise included): background ≤ [`BACKGROUND_CEILING`],
//! nodal foci within [`NODE_BAND`], lesion voxels > [`LESION_FLOOR`].

use std::collections::BTreeMap;

use rand::Rng;

use super::{add_noise, balanced_label, blank_grid, dist, ellipsoid_voxels, random_semi_axes, stream_rng, study_id};
use crate::study::{
    AnswerKind, Finding, FindingKind, GroundTruth, McqOption, Modality, ModuleKind, Point3, Series, SeriesMeta,
    StudyPackage, TaskSpec, TruthAnswer, Volume, VoxelIndex, CHEST_TASKS, TASK_GRADE, TASK_HISTOLOGY, TASK_LOCATION,
    TASK_N_STAGE, TASK_T_STAGE,
};
use crate::tools::region_stats;

pub const CT_SERIES: &str = "CT";
pub const PET_SERIES: &str = "PET";

pub const BACKGROUND_CEILING: i16 = 300;
pub const NODE_UPTAKE: i16 = 600;
/// Inclusive PET band that contains every nodal-focus voxel and nothing else.
pub const NODE_BAND: (i16, i16) = (400, 899);
pub const LESION_FLOOR: i16 = 900;
pub const LESION_BASE: f64 = 1100.0;
pub const LESION_STEP: f64 = 200.0;
pub const NOISE_AMPLITUDE: i16 = 20;
pub const NODE_RADIUS_MM: f64 = 6.0;

/// Upper diameter bounds (mm) of T1, T2, T3; anything larger is T4.
pub const T_STAGE_LIMITS_MM: [f64; 3] = [30.0, 50.0, 70.0];
const T_STAGE_TARGET_MM: [(f64, f64); 4] = [(14.0, 24.0), (40.0, 46.0), (60.0, 66.0), (82.0, 92.0)];

/// Axis-aligned lobe region. Bounds are half-open `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lobe {
    pub option_id: &'static str,
    pub name: &'static str,
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl Lobe {
    pub fn contains(&self, p: Point3) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v < hi;
        within(p[0], self.x) && within(p[1], self.y) && within(p[2], self.z)
    }

    pub fn center(&self) -> Point3 {
        [
            (self.x.0 + self.x.1) / 2.0,
            (self.y.0 + self.y.1) / 2.0,
            (self.z.0 + self.z.1) / 2.0,
        ]
    }
}

const RIGHT: (f64, f64) = (-110.0, -20.0);
const LEFT: (f64, f64) = (20.0, 110.0);
const AP: (f64, f64) = (-60.0, 60.0);

pub const LOBES: [Lobe; 5] = [
    Lobe {
        option_id: "A",
        name: "Right upper lobe",
        x: RIGHT,
        y: AP,
        z: (30.0, 110.0),
    },
    Lobe {
        option_id: "B",
        name: "Right middle lobe",
        x: RIGHT,
        y: AP,
        z: (-30.0, 30.0),
    },
    Lobe {
        option_id: "C",
        name: "Right lower lobe",
        x: RIGHT,
        y: AP,
        z: (-110.0, -30.0),
    },
    Lobe {
        option_id: "D",
        name: "Left upper lobe",
        x: LEFT,
        y: AP,
        z: (0.0, 110.0),
    },
    Lobe {
        option_id: "E",
        name: "Left lower lobe",
        x: LEFT,
        y: AP,
        z: (-110.0, 0.0),
    },
];

pub const T_STAGES: [&str; 4] = ["T1", "T2", "T3", "T4"];
pub const N_STAGES: [&str; 4] = ["N0", "N1", "N2", "N3"];
pub const HISTOLOGIES: [&str; 3] = ["Adenocarcinoma", "Squamous cell carcinoma", "Large cell carcinoma"];
pub const GRADES: [&str; 3] = [
    "G1 well differentiated",
    "G2 moderately differentiated",
    "G3 poorly differentiated",
];

const OPTION_IDS: [&str; 5] = ["A", "B", "C", "D", "E"];

/// Index of the lobe whose box contains `p`.
pub fn lobe_for_point(p: Point3) -> Option<usize> {
    LOBES.iter().position(|l| l.contains(p))
}

pub fn t_stage_for_diameter(diameter_mm: f64) -> usize {
    T_STAGE_LIMITS_MM
        .iter()
        .position(|&limit| diameter_mm <= limit)
        .unwrap_or(T_STAGE_LIMITS_MM.len())
}

pub fn n_stage_for_count(foci: usize) -> usize {
    foci.min(3)
}

/// `(histology, grade)` indices recovered from a mean lesion uptake.
pub fn uptake_bin(mean_uptake: f64) -> (usize, usize) {
    let bin = ((mean_uptake - LESION_BASE) / LESION_STEP).round().clamp(0.0, 8.0) as usize;
    (bin / 3, bin % 3)
}

pub fn lesion_uptake(histology: usize, grade: usize) -> i16 {
    (LESION_BASE + LESION_STEP * (3 * histology + grade) as f64) as i16
}

pub fn option_id(index: usize) -> &'static str {
    OPTION_IDS[index]
}

/// Option index of an option id (`"A"` → 0).
pub fn option_index(id: &str) -> Option<usize> {
    OPTION_IDS.iter().position(|&o| o == id)
}

fn mcq(task_id: &str, question: &str, texts: &[&str]) -> TaskSpec {
    TaskSpec {
        task_id: task_id.to_string(),
        question: question.to_string(),
        answer: AnswerKind::Mcq {
            options: texts
                .iter()
                .enumerate()
                .map(|(i, t)| McqOption {
                    id: OPTION_IDS[i].to_string(),
                    text: t.to_string(),
                })
                .collect(),
        },
    }
}

pub fn chest_tasks() -> Vec<TaskSpec> {
    let lobes: Vec<&str> = LOBES.iter().map(|l| l.name).collect();
    vec![
        mcq(TASK_LOCATION, "In which lobe is the primary tumour located?", &lobes),
        mcq(
            TASK_T_STAGE,
            "What is the pathological T stage of the primary tumour?",
            &T_STAGES,
        ),
        mcq(TASK_N_STAGE, "What is the pathological N stage?", &N_STAGES),
        mcq(TASK_HISTOLOGY, "What is the tumour histology?", &HISTOLOGIES),
        mcq(TASK_GRADE, "What is the histopathological grade?", &GRADES),
    ]
}

fn option_count(task_id: &str) -> usize {
    match task_id {
        TASK_LOCATION => LOBES.len(),
        TASK_T_STAGE => T_STAGES.len(),
        TASK_N_STAGE => N_STAGES.len(),
        TASK_HISTOLOGY => HISTOLOGIES.len(),
        TASK_GRADE => GRADES.len(),
        _ => unreachable!("not a chest task"),
    }
}

struct Layout {
    lesion: Vec<usize>,
    nodes: Vec<Vec<usize>>,
}

fn in_body(p: Point3) -> bool {
    (p[0] / 120.0).powi(2) + (p[1] / 90.0).powi(2) <= 1.0
}

fn in_lung(p: Point3) -> bool {
    [-65.0, 65.0]
        .iter()
        .any(|cx| ((p[0] - cx) / 45.0).powi(2) + (p[1] / 60.0).powi(2) + (p[2] / 110.0).powi(2) <= 1.0)
}

fn place_nodes(
    rng: &mut impl Rng,
    grid: &Volume,
    count: usize,
    lesion_center: Point3,
    lesion_radius: f64,
) -> Option<Vec<Vec<usize>>> {
    let max_spacing = grid.spacing().into_iter().fold(0.0, f64::max);
    let radius = NODE_RADIUS_MM.max(1.01 * max_spacing);
    let mut centers: Vec<Point3> = Vec::new();
    let mut nodes = Vec::new();
    let mut tries = 0;
    while centers.len() < count {
        tries += 1;
        if tries > 400 {
            return None;
        }
        let p = [
            rng.random_range(-10.0..=10.0),
            rng.random_range(-40.0..=40.0),
            rng.random_range(-90.0..=90.0),
        ];
        // snap to a voxel centre so the focus is never empty
        let Ok(v) = grid.world_to_voxel(p) else {
            continue;
        };
        let c = grid.center_mm(v);
        if dist(c, lesion_center) <= lesion_radius + radius + 3.0 * max_spacing {
            continue;
        }
        if centers.iter().any(|&o| dist(o, c) <= 2.0 * radius + 3.0 * max_spacing) {
            continue;
        }
        centers.push(c);
        nodes.push(ellipsoid_voxels(grid, c, [radius; 3]));
    }
    Some(nodes)
}

fn layout(rng: &mut impl Rng, grid: &Volume, lobe: usize, t_stage: usize, n_foci: usize) -> Option<Layout> {
    let (dmin, dmax) = T_STAGE_TARGET_MM[t_stage];
    let radius = rng.random_range(dmin..=dmax) / 2.0;
    let semi = random_semi_axes(rng, radius, 0.7);
    let (lo, hi) = grid.world_bounds();
    let lobe_box = LOBES[lobe];
    let bounds = [lobe_box.x, lobe_box.y, lobe_box.z];
    let mut center = [0.0; 3];
    for a in 0..3 {
        let margin = 8.0;
        let min = (bounds[a].0 + margin).max(lo[a] + semi[a] + margin);
        let max = (bounds[a].1 - margin).min(hi[a] - semi[a] - margin);
        if min > max {
            return None;
        }
        center[a] = rng.random_range(min..=max);
    }
    let lesion = ellipsoid_voxels(grid, center, semi);
    if lesion.is_empty() {
        return None;
    }
    let nodes = place_nodes(rng, grid, n_foci, center, radius)?;
    Some(Layout { lesion, nodes })
}

pub(super) fn generate(seed: u64, case_index: usize, grid: VoxelIndex) -> StudyPackage {
    let id = study_id(seed, ModuleKind::Chest, case_index);
    let label = |task: &str| balanced_label(seed, ModuleKind::Chest, task, case_index, option_count(task));
    let target_lobe = label(TASK_LOCATION);
    let target_t = label(TASK_T_STAGE);
    let n_stage = label(TASK_N_STAGE);
    let histology = label(TASK_HISTOLOGY);
    let grade = label(TASK_GRADE);

    let mut rng = stream_rng(seed, &format!("{id}/geometry"));
    let n_foci = if n_stage == 3 {
        3 + rng.random_range(0..=1usize)
    } else {
        n_stage
    };
    let blank = blank_grid(grid);
    let uptake = lesion_uptake(histology, grade);

    let mut pet = blank.clone();
    let mut ct = blank.clone();
    for flat in 0..blank.len() {
        let p = blank.center_mm(blank.unflatten(flat));
        let (hu, suv) = match (in_body(p), in_lung(p)) {
            (true, true) => (-800, 50),
            (true, false) => (40, 150),
            _ => (-1000, 0),
        };
        ct.voxels_mut()[flat] = hu;
        pet.voxels_mut()[flat] = suv;
    }

    // Resample until the measured lesion lands in the target lobe and T bin.
    let mut chosen: Option<Layout> = None;
    let mut last: Option<Layout> = None;
    for _ in 0..256 {
        let Some(candidate) = layout(&mut rng, &blank, target_lobe, target_t, n_foci) else {
            continue;
        };
        let stats = region_stats(&blank, &candidate.lesion).expect("non-empty lesion");
        if lobe_for_point(stats.centroid_mm) == Some(target_lobe)
            && t_stage_for_diameter(stats.max_diameter_mm) == target_t
        {
            chosen = Some(candidate);
            break;
        }
        last = Some(candidate);
    }
    let layout = chosen
        .or(last)
        .expect("a chest layout fits in the field of view for every grid >= 16");

    for &f in &layout.lesion {
        pet.voxels_mut()[f] = uptake;
        ct.voxels_mut()[f] = 40;
    }
    for node in &layout.nodes {
        for &f in node {
            pet.voxels_mut()[f] = NODE_UPTAKE;
            ct.voxels_mut()[f] = 40;
        }
    }
    add_noise(
        &mut ct,
        NOISE_AMPLITUDE,
        &mut stream_rng(seed, &format!("{id}/noise/{CT_SERIES}")),
    );
    add_noise(
        &mut pet,
        NOISE_AMPLITUDE,
        &mut stream_rng(seed, &format!("{id}/noise/{PET_SERIES}")),
    );

    let finding = |kind, voxels: &[usize]| {
        let s = region_stats(&pet, voxels).expect("non-empty region");
        Finding {
            kind,
            series_id: PET_SERIES.to_string(),
            centroid_mm: s.centroid_mm,
            max_diameter_mm: s.max_diameter_mm,
            voxel_count: s.voxel_count,
            mean_intensity: s.mean_intensity,
        }
    };
    let lesion = finding(FindingKind::Lesion, &layout.lesion);
    let mut findings = vec![lesion.clone()];
    findings.extend(layout.nodes.iter().map(|n| finding(FindingKind::NodalFocus, n)));

    // Answers follow the measured geometry, which matches the targets except
    // on grids too coarse to realise them.
    let lobe = lobe_for_point(lesion.centroid_mm).unwrap_or(target_lobe);
    let t_stage = t_stage_for_diameter(lesion.max_diameter_mm);
    let picks = [
        (lobe, LOBES[lobe].name),
        (t_stage, T_STAGES[t_stage]),
        (n_stage, N_STAGES[n_stage]),
        (histology, HISTOLOGIES[histology]),
        (grade, GRADES[grade]),
    ];
    let answers: BTreeMap<String, TruthAnswer> = CHEST_TASKS
        .iter()
        .zip(picks)
        .map(|(task, (idx, text))| {
            (
                task.to_string(),
                TruthAnswer {
                    option: Some(OPTION_IDS[idx].to_string()),
                    text: text.to_string(),
                },
            )
        })
        .collect();

    StudyPackage {
        study_id: id.clone(),
        module: ModuleKind::Chest,
        series: vec![
            Series {
                meta: SeriesMeta {
                    series_id: CT_SERIES.to_string(),
                    modality: Modality::Ct,
                    description: "Chest CT".to_string(),
                },
                volume: ct,
            },
            Series {
                meta: SeriesMeta {
                    series_id: PET_SERIES.to_string(),
                    modality: Modality::Pet,
                    description: "FDG PET".to_string(),
                },
                volume: pet,
            },
        ],
        tasks: chest_tasks(),
        truth: Some(GroundTruth {
            study_id: id,
            answers,
            findings,
        }),
        checksums: Default::default(),
    }
}
