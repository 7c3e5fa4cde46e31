//! Brute-force reference oracles for the test suites.
//!
//! Everything here works on raw grids (dims, spacing, origin, x-fastest
//! `i16` voxels) and restates the generator's encoding rules from scratch,
//! so none of it shares code with the crates under test.

pub mod fuzz;

pub type P3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: P3,
    pub origin: P3,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, flat: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [flat % nx, (flat / nx) % ny, flat / (nx * ny)]
    }

    pub fn flat(&self, [x, y, z]: [usize; 3]) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn center(&self, flat: usize) -> P3 {
        let c = self.coords(flat);
        [0, 1, 2].map(|a| self.origin[a] + c[a] as f64 * self.spacing[a])
    }

    /// Nearest voxel, ties away from zero; `None` outside the grid.
    pub fn nearest(&self, p: P3) -> Option<usize> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let r = ((p[a] - self.origin[a]) / self.spacing[a]).round();
            if !(r >= 0.0 && r < self.dims[a] as f64) {
                return None;
            }
            c[a] = r as usize;
        }
        Some(self.flat(c))
    }

    fn adjacent(&self, a: usize, b: usize) -> bool {
        let (p, q) = (self.coords(a), self.coords(b));
        (0..3).map(|k| p[k].abs_diff(q[k])).sum::<usize>() == 1
    }
}

fn d2(a: P3, b: P3) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

pub fn distance(a: P3, b: P3) -> f64 {
    d2(a, b).sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FloodOutcome {
    SeedOutOfBounds,
    SeedOutsideThreshold,
    Region(Vec<usize>),
}

/// Reference region growing: start from the seed voxel and sweep the whole
/// grid until no eligible voxel touching the region remains.
pub fn flood_fill(grid: &Grid, voxels: &[i16], seed: P3, lo: i32, hi: i32, radius: f64) -> FloodOutcome {
    let Some(s) = grid.nearest(seed) else {
        return FloodOutcome::SeedOutOfBounds;
    };
    let ok = |f: usize| {
        let v = voxels[f] as i32;
        v >= lo && v <= hi && d2(grid.center(f), seed) <= radius * radius
    };
    let v = voxels[s] as i32;
    if v < lo || v > hi {
        return FloodOutcome::SeedOutsideThreshold;
    }
    let mut inside = vec![false; grid.len()];
    inside[s] = true;
    let mut members = vec![s];
    loop {
        let mut grew = false;
        for f in 0..grid.len() {
            if inside[f] || !ok(f) {
                continue;
            }
            if members.iter().any(|&m| grid.adjacent(m, f)) {
                inside[f] = true;
                members.push(f);
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    members.sort_unstable();
    FloodOutcome::Region(members)
}

/// 6-connected components of voxels satisfying `pred`, via union-find.
pub fn components(grid: &Grid, voxels: &[i16], pred: impl Fn(i16) -> bool) -> Vec<Vec<usize>> {
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let [nx, ny, nz] = grid.dims;
    let mut parent: Vec<usize> = (0..voxels.len()).collect();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = grid.flat([x, y, z]);
                if !pred(voxels[i]) {
                    continue;
                }
                let mut next = Vec::with_capacity(3);
                if x + 1 < nx {
                    next.push(grid.flat([x + 1, y, z]));
                }
                if y + 1 < ny {
                    next.push(grid.flat([x, y + 1, z]));
                }
                if z + 1 < nz {
                    next.push(grid.flat([x, y, z + 1]));
                }
                for j in next {
                    if pred(voxels[j]) {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
    }
    let mut groups = std::collections::BTreeMap::<usize, Vec<usize>>::new();
    for i in 0..voxels.len() {
        if pred(voxels[i]) {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
    }
    groups.into_values().collect()
}

pub fn centroid(grid: &Grid, region: &[usize]) -> P3 {
    let mut acc = [0.0; 3];
    for &f in region {
        let c = grid.center(f);
        for a in 0..3 {
            acc[a] += c[a];
        }
    }
    acc.map(|v| v / region.len() as f64)
}

/// All-pairs maximum centre distance.
pub fn diameter(grid: &Grid, region: &[usize]) -> f64 {
    let pts: Vec<P3> = region.iter().map(|&f| grid.center(f)).collect();
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.max(d2(pts[i], pts[j]));
        }
    }
    best.sqrt()
}

pub fn mean(voxels: &[i16], region: &[usize]) -> f64 {
    region.iter().map(|&f| voxels[f] as f64).sum::<f64>() / region.len() as f64
}

pub fn bbox(grid: &Grid, region: &[usize]) -> (P3, P3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &f in region {
        let p = grid.center(f);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// What the chest PET voxels imply, read without the answer file.
///
/// Encoding: the primary lesion is the only component at or above 900;
/// nodal foci are components in [400, 899]; lesion mean uptake is
/// `1100 + 200 * (3 * histology + grade)`.
#[derive(Debug, Clone)]
pub struct ChestReading {
    /// Option ids in task order: location, T, N, histology, grade.
    pub answers: [String; 5],
    pub lesion: Vec<usize>,
    pub centroid: P3,
    pub diameter_mm: f64,
    pub mean_uptake: f64,
    pub nodal_foci: usize,
}

/// Lobe boxes in option order, half-open: ([x0, x1), [y0, y1), [z0, z1)).
pub const LOBE_BOXES: [[(f64, f64); 3]; 5] = [
    [(-110.0, -20.0), (-60.0, 60.0), (30.0, 110.0)],
    [(-110.0, -20.0), (-60.0, 60.0), (-30.0, 30.0)],
    [(-110.0, -20.0), (-60.0, 60.0), (-110.0, -30.0)],
    [(20.0, 110.0), (-60.0, 60.0), (0.0, 110.0)],
    [(20.0, 110.0), (-60.0, 60.0), (-110.0, 0.0)],
];

pub const OPTION_IDS: [&str; 5] = ["A", "B", "C", "D", "E"];

pub fn lobe_of(p: P3) -> Option<usize> {
    LOBE_BOXES
        .iter()
        .position(|b| (0..3).all(|a| p[a] >= b[a].0 && p[a] < b[a].1))
}

pub fn t_stage_of(diameter_mm: f64) -> usize {
    match diameter_mm {
        d if d <= 30.0 => 0,
        d if d <= 50.0 => 1,
        d if d <= 70.0 => 2,
        _ => 3,
    }
}

pub fn read_chest(grid: &Grid, pet: &[i16]) -> ChestReading {
    let lesions = components(grid, pet, |v| v >= 900);
    assert_eq!(lesions.len(), 1, "expected exactly one lesion component");
    let lesion = lesions.into_iter().next().unwrap();
    let c = centroid(grid, &lesion);
    let d = diameter(grid, &lesion);
    let m = mean(pet, &lesion);
    let nodal_foci = components(grid, pet, |v| (400..=899).contains(&v)).len();
    let lobe = lobe_of(c).expect("lesion centroid inside a lobe box");
    let bin = ((m - 1100.0) / 200.0).round() as usize;
    ChestReading {
        answers: [lobe, t_stage_of(d), nodal_foci.min(3), bin / 3, bin % 3].map(|i| OPTION_IDS[i].to_string()),
        lesion,
        centroid: c,
        diameter_mm: d,
        mean_uptake: m,
        nodal_foci,
    }
}

/// Brain class option id implied by T1c and FLAIR voxels. Lesions are the
/// FLAIR components above 450; enhancement means their mean T1c is too.
pub fn read_brain(grid: &Grid, t1c: &[i16], flair: &[i16]) -> &'static str {
    let lesions = components(grid, flair, |v| v > 450);
    match lesions.len() {
        0 => "D",
        1 if mean(t1c, &lesions[0]) > 450.0 => "A",
        1 => "B",
        n if n >= 3 => "C",
        _ => panic!("two FLAIR components is not a generated pattern"),
    }
}

/// Reference window mapping, written directly from the pixel law.
pub fn window_px(v: f64, center: f64, width: f64) -> u8 {
    let t = ((v - center + width / 2.0) / width).clamp(0.0, 1.0);
    (255.0 * t).round() as u8
}
