//! Deterministic simulated viewer: one single-writer state machine per
//! session over a shared read-only study.
//!
//! Every successful mutating operation increments `step_counter` by one.
//! Failed operations leave the state untouched. Window and fusion alpha are
//! stored rounded to 3 decimals.

mod render;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::{canonical_digest, canonical_json, round3, sha256_hex};
use crate::study::{Point3, SeriesMeta, StudyPackage, Volume};
use crate::tools::{self, encode_mask, MaskStats, SegmentationMask, ToolError};

pub use render::{
    blend_pixel, decode_png, encode_png, extract_slice, fuse, window_pixel, window_slice, GrayImage, Orientation, Slice,
};

pub const MEDIA_PNG: &str = "image/png";
pub const MEDIA_MASK: &str = "application/x-mmsk";
pub const MEDIA_JSON: &str = "application/json";
pub const EVIDENCE_FORMAT: &str = "evidence-bundle/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViewerError {
    #[error("unknown series '{0}'")]
    UnknownSeries(String),
    #[error("unknown mask '{0}'")]
    UnknownMask(String),
    #[error("{0}")]
    BadArgs(String),
    #[error(transparent)]
    Tool(#[from] ToolError),
}

/// A content-addressed output: `id` is the SHA-256 of `bytes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub id: String,
    pub media_type: String,
    #[serde(rename = "data_b64", with = "crate::canonical::base64_bytes")]
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(media_type: &str, bytes: Vec<u8>) -> Self {
        Self {
            id: sha256_hex(&bytes),
            media_type: media_type.to_string(),
            bytes,
        }
    }

    pub fn verify(&self) -> bool {
        sha256_hex(&self.bytes) == self.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub overlay_series: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceIndex {
    pub axial: usize,
    pub coronal: usize,
    pub sagittal: usize,
}

impl SliceIndex {
    pub fn get(&self, o: Orientation) -> usize {
        match o {
            Orientation::Axial => self.axial,
            Orientation::Coronal => self.coronal,
            Orientation::Sagittal => self.sagittal,
        }
    }

    fn set(&mut self, o: Orientation, i: usize) {
        match o {
            Orientation::Axial => self.axial = i,
            Orientation::Coronal => self.coronal = i,
            Orientation::Sagittal => self.sagittal = i,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookmarkEntry {
    pub bookmark_id: String,
    pub label: String,
    /// Digest of the view (series, orientation, slices, window, fusion).
    pub state_digest: String,
    pub render_artifact_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementEntry {
    pub p1: Point3,
    pub p2: Point3,
    pub distance_mm: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub mask_id: String,
    pub series_id: String,
    pub artifact_id: String,
    pub stats: MaskStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewerState {
    pub session_id: String,
    pub study_id: String,
    pub active_series: String,
    pub orientation: Orientation,
    pub slice_index: SliceIndex,
    pub window: Window,
    pub fusion: Option<Fusion>,
    pub bookmarks: Vec<BookmarkEntry>,
    pub measurements: Vec<MeasurementEntry>,
    pub masks: Vec<MaskEntry>,
    pub step_counter: u64,
}

impl ViewerState {
    /// Hash of everything except `session_id`, so a replay in a fresh
    /// session reproduces it.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("state serializes");
        v.as_object_mut().expect("object").remove("session_id");
        canonical_digest(&v)
    }

    /// Hash of what is on screen.
    pub fn view_digest(&self) -> String {
        canonical_digest(&json!({
            "study_id": self.study_id,
            "active_series": self.active_series,
            "orientation": self.orientation,
            "slice_index": self.slice_index,
            "window": self.window,
            "fusion": self.fusion,
        }))
    }

    /// Compact state echoed to agents after each call.
    pub fn summary(&self) -> Value {
        json!({
            "active_series": self.active_series,
            "orientation": self.orientation,
            "slice_index": self.slice_index,
            "window": self.window,
            "fusion": self.fusion,
            "bookmarks": self.bookmarks.len(),
            "measurements": self.measurements.len(),
            "masks": self.masks.len(),
            "step_counter": self.step_counter,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvidenceItem {
    Bookmark {
        bookmark_id: String,
        label: String,
        state_digest: String,
        artifact_id: String,
    },
    Mask {
        mask_id: String,
        series_id: String,
        artifact_id: String,
        stats: MaskStats,
    },
    Measurement {
        p1: Point3,
        p2: Point3,
        distance_mm: f64,
        step: u64,
    },
}

/// Manifest of an evidence export. Referenced artifacts travel beside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub format: String,
    pub study_id: String,
    pub items: Vec<EvidenceItem>,
}

impl EvidenceBundle {
    pub fn artifact_ids(&self) -> Vec<String> {
        self.items
            .iter()
            .filter_map(|i| match i {
                EvidenceItem::Bookmark { artifact_id, .. } | EvidenceItem::Mask { artifact_id, .. } => {
                    Some(artifact_id.clone())
                }
                EvidenceItem::Measurement { .. } => None,
            })
            .collect()
    }
}

/// Result of a render call.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: GrayImage,
    pub artifact: Artifact,
}

#[derive(Debug, Clone)]
pub struct Viewer {
    study: Arc<StudyPackage>,
    state: ViewerState,
    masks: BTreeMap<String, SegmentationMask>,
    retained: BTreeMap<String, Artifact>,
}

fn initial_window(volume: &Volume) -> Window {
    let (lo, hi) = volume
        .voxels()
        .iter()
        .fold((i16::MAX, i16::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Window {
        center: round3((lo as f64 + hi as f64) / 2.0),
        width: round3((hi as f64 - lo as f64).max(1.0)),
    }
}

impl Viewer {
    /// Fresh session on the first series, axial, mid slices, and a window
    /// spanning that series' intensity range.
    pub fn open(session_id: &str, study: Arc<StudyPackage>) -> Self {
        let first = study.series.first().expect("validated study has series");
        let dims = first.volume.dims();
        let state = ViewerState {
            session_id: session_id.to_string(),
            study_id: study.study_id.clone(),
            active_series: first.meta.series_id.clone(),
            orientation: Orientation::Axial,
            slice_index: SliceIndex {
                axial: dims[2] / 2,
                coronal: dims[1] / 2,
                sagittal: dims[0] / 2,
            },
            window: initial_window(&first.volume),
            fusion: None,
            bookmarks: Vec::new(),
            measurements: Vec::new(),
            masks: Vec::new(),
            step_counter: 0,
        };
        Self {
            study,
            state,
            masks: BTreeMap::new(),
            retained: BTreeMap::new(),
        }
    }

    pub fn study(&self) -> &Arc<StudyPackage> {
        &self.study
    }

    pub fn state(&self) -> &ViewerState {
        &self.state
    }

    pub fn state_digest(&self) -> String {
        self.state.digest()
    }

    /// Artifacts referenced by bookmarks and masks.
    pub fn artifact(&self, id: &str) -> Option<&Artifact> {
        self.retained.get(id)
    }

    fn volume(&self, series_id: &str) -> Result<&Volume, ViewerError> {
        self.study
            .series(series_id)
            .map(|s| &s.volume)
            .ok_or_else(|| ViewerError::UnknownSeries(series_id.to_string()))
    }

    fn active_volume(&self) -> &Volume {
        self.volume(&self.state.active_series).expect("active series exists")
    }

    fn bump(&mut self) {
        self.state.step_counter += 1;
    }

    pub fn list_series(&self) -> Vec<SeriesMeta> {
        self.study.series_metas()
    }

    /// Switching onto the current overlay series clears fusion.
    pub fn select_series(&mut self, series_id: &str) -> Result<(), ViewerError> {
        self.volume(series_id)?;
        self.state.active_series = series_id.to_string();
        if self
            .state
            .fusion
            .as_ref()
            .is_some_and(|f| f.overlay_series == series_id)
        {
            self.state.fusion = None;
        }
        self.bump();
        Ok(())
    }

    /// Sets orientation and the clamped slice index; returns the effective index.
    pub fn set_slice(&mut self, orientation: Orientation, index: i64) -> usize {
        let extent = orientation.extent(self.active_volume().dims());
        let effective = index.clamp(0, extent as i64 - 1) as usize;
        self.state.orientation = orientation;
        self.state.slice_index.set(orientation, effective);
        self.bump();
        effective
    }

    pub fn set_window(&mut self, center: f64, width: f64) -> Result<(), ViewerError> {
        if !center.is_finite() || !width.is_finite() {
            return Err(ViewerError::BadArgs("window center and width must be finite".into()));
        }
        let width = round3(width);
        if width <= 0.0 {
            return Err(ViewerError::BadArgs("width must be > 0".into()));
        }
        self.state.window = Window {
            center: round3(center),
            width,
        };
        self.bump();
        Ok(())
    }

    pub fn set_fusion(&mut self, overlay_series: &str, alpha: f64) -> Result<(), ViewerError> {
        self.volume(overlay_series)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ViewerError::BadArgs("alpha must lie in [0, 1]".into()));
        }
        if overlay_series == self.state.active_series {
            return Err(ViewerError::BadArgs(
                "overlay series must differ from the active series".into(),
            ));
        }
        self.state.fusion = Some(Fusion {
            overlay_series: overlay_series.to_string(),
            alpha: round3(alpha),
        });
        self.bump();
        Ok(())
    }

    pub fn render(&self) -> Rendered {
        let s = &self.state;
        let index = s.slice_index.get(s.orientation);
        let Window { center, width } = s.window;
        let base = window_slice(
            &extract_slice(self.active_volume(), s.orientation, index),
            center,
            width,
        );
        let image = match &s.fusion {
            Some(f) => {
                let overlay = self.volume(&f.overlay_series).expect("overlay exists");
                fuse(
                    &base,
                    &window_slice(&extract_slice(overlay, s.orientation, index), center, width),
                    f.alpha,
                )
            }
            None => base,
        };
        let artifact = Artifact::new(MEDIA_PNG, encode_png(&image));
        Rendered { image, artifact }
    }

    pub fn bookmark_view(&mut self, label: &str) -> (BookmarkEntry, Artifact) {
        let rendered = self.render();
        let entry = BookmarkEntry {
            bookmark_id: format!("bm-{:04}", self.state.bookmarks.len() + 1),
            label: label.to_string(),
            state_digest: self.state.view_digest(),
            render_artifact_id: rendered.artifact.id.clone(),
        };
        self.retained
            .insert(rendered.artifact.id.clone(), rendered.artifact.clone());
        self.state.bookmarks.push(entry.clone());
        self.bump();
        (entry, rendered.artifact)
    }

    pub fn measure_distance(&mut self, p1: Point3, p2: Point3) -> Result<MeasurementEntry, ViewerError> {
        if p1.iter().chain(&p2).any(|c| !c.is_finite()) {
            return Err(ViewerError::BadArgs("points must be finite".into()));
        }
        let distance_mm = (0..3).map(|a| (p1[a] - p2[a]).powi(2)).sum::<f64>().sqrt();
        self.bump();
        let entry = MeasurementEntry {
            p1,
            p2,
            distance_mm,
            step: self.state.step_counter,
        };
        self.state.measurements.push(entry.clone());
        Ok(entry)
    }

    /// Seeded segmentation on the active series; the mask is kept in the
    /// session and returned as an artifact.
    pub fn segment(
        &mut self,
        seed_mm: Point3,
        lo: i32,
        hi: i32,
        max_radius_mm: f64,
    ) -> Result<(MaskEntry, Artifact), ViewerError> {
        let series_id = self.state.active_series.clone();
        let (mask, stats) =
            tools::local_threshold_segment(self.active_volume(), &series_id, seed_mm, lo, hi, max_radius_mm)?;
        let artifact = Artifact::new(MEDIA_MASK, encode_mask(&mask));
        let entry = MaskEntry {
            mask_id: format!("mask-{:04}", self.state.masks.len() + 1),
            series_id,
            artifact_id: artifact.id.clone(),
            stats,
        };
        self.masks.insert(entry.mask_id.clone(), mask);
        self.retained.insert(artifact.id.clone(), artifact.clone());
        self.state.masks.push(entry.clone());
        self.bump();
        Ok((entry, artifact))
    }

    /// Recompute statistics of a stored mask against its own series.
    pub fn mask_stats(&self, mask_id: &str) -> Result<MaskStats, ViewerError> {
        let mask = self
            .masks
            .get(mask_id)
            .ok_or_else(|| ViewerError::UnknownMask(mask_id.to_string()))?;
        Ok(tools::mask_stats(mask, self.volume(&mask.series_id)?)?)
    }

    /// Bookmarks, then masks, then measurements, each in capture order.
    pub fn export_evidence(&self) -> (EvidenceBundle, Artifact) {
        let s = &self.state;
        let mut items: Vec<EvidenceItem> = s
            .bookmarks
            .iter()
            .map(|b| EvidenceItem::Bookmark {
                bookmark_id: b.bookmark_id.clone(),
                label: b.label.clone(),
                state_digest: b.state_digest.clone(),
                artifact_id: b.render_artifact_id.clone(),
            })
            .collect();
        items.extend(s.masks.iter().map(|m| EvidenceItem::Mask {
            mask_id: m.mask_id.clone(),
            series_id: m.series_id.clone(),
            artifact_id: m.artifact_id.clone(),
            stats: m.stats.clone(),
        }));
        items.extend(s.measurements.iter().map(|m| EvidenceItem::Measurement {
            p1: m.p1,
            p2: m.p2,
            distance_mm: m.distance_mm,
            step: m.step,
        }));
        let bundle = EvidenceBundle {
            format: EVIDENCE_FORMAT.to_string(),
            study_id: s.study_id.clone(),
            items,
        };
        let artifact = Artifact::new(MEDIA_JSON, canonical_json(&bundle).into_bytes());
        (bundle, artifact)
    }
}
