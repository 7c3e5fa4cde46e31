//! Tool registry and closed argument schemas.
//!
//! Validation never coerces: a numeric string is not a number, a real is not
//! an integer. JSON integers are accepted where a real is expected. Unknown
//! keys are rejected. Optional parameters are filled with their defaults and
//! the result is a key-sorted map.

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamType {
    String {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        one_of: Option<Vec<String>>,
    },
    Integer {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<i64>,
    },
    Real {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
        /// `min` itself is not allowed.
        #[serde(default)]
        exclusive_min: bool,
    },
    /// `[x, y, z]` in millimetres.
    Point3,
}

/// What a parameter means, independent of its wire type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semantic {
    SeriesId,
    Orientation,
    SliceIndex,
    WindowCenter,
    WindowWidth,
    Opacity,
    Label,
    WorldPointMm,
    Intensity,
    LengthMm,
    MaskId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub schema: ParamType,
    pub semantic: Semantic,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub layer: u8,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl ToolDescriptor {
    /// One-line signature, e.g. `set_window(center: real, width: real > 0)`.
    pub fn signature(&self) -> String {
        let mut out = format!("{}(", self.name);
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{}: {}", p.name, type_text(&p.schema));
            if let Some(d) = &p.default {
                let _ = write!(out, " = {d}");
            }
        }
        out.push(')');
        out
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn type_text(t: &ParamType) -> String {
    match t {
        ParamType::String { one_of: Some(v) } => v.join("|"),
        ParamType::String { one_of: None } => "string".into(),
        ParamType::Integer { min, max } => match (min, max) {
            (Some(a), Some(b)) => format!("integer in [{a}, {b}]"),
            (Some(a), None) => format!("integer >= {a}"),
            (None, Some(b)) => format!("integer <= {b}"),
            (None, None) => "integer".into(),
        },
        ParamType::Real {
            min,
            max,
            exclusive_min,
        } => {
            let lo = min.map(|m| format!("{}{m}", if *exclusive_min { "> " } else { ">= " }));
            match (lo, max) {
                (Some(lo), Some(b)) => format!("real {lo}, <= {b}"),
                (Some(lo), None) => format!("real {lo}"),
                (None, Some(b)) => format!("real <= {b}"),
                (None, None) => "real".into(),
            }
        }
        ParamType::Point3 => "[x, y, z] mm".into(),
    }
}

fn param(name: &str, schema: ParamType, semantic: Semantic, description: &str) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        schema,
        semantic,
        required: true,
        default: None,
        description: description.into(),
    }
}

fn string() -> ParamType {
    ParamType::String { one_of: None }
}

fn real(min: Option<f64>, max: Option<f64>, exclusive_min: bool) -> ParamType {
    ParamType::Real {
        min,
        max,
        exclusive_min,
    }
}

fn intensity() -> ParamType {
    ParamType::Integer {
        min: Some(i16::MIN as i64),
        max: Some(i16::MAX as i64),
    }
}

fn tool(name: &str, layer: u8, description: &str, params: Vec<ParamSpec>) -> ToolDescriptor {
    ToolDescriptor {
        name: name.into(),
        layer,
        description: description.into(),
        params,
    }
}

/// Every tool the bridge can execute, in catalog order.
pub fn registry() -> &'static [ToolDescriptor] {
    static REGISTRY: OnceLock<Vec<ToolDescriptor>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        use Semantic::*;
        vec![
            tool(
                "list_series",
                1,
                "List the series of the loaded study in manifest order.",
                vec![],
            ),
            tool(
                "select_series",
                1,
                "Make a series the active display series. Slice positions are kept.",
                vec![param("series_id", string(), SeriesId, "Series to display.")],
            ),
            tool(
                "set_slice",
                1,
                "Set the viewing orientation and scroll to a slice. Out-of-range indices are clamped; \
                 the effective index is returned.",
                vec![
                    param(
                        "orientation",
                        ParamType::String {
                            one_of: Some(vec!["AXIAL".into(), "CORONAL".into(), "SAGITTAL".into()]),
                        },
                        Orientation,
                        "Viewing plane.",
                    ),
                    param(
                        "index",
                        ParamType::Integer { min: None, max: None },
                        SliceIndex,
                        "Slice number from 0.",
                    ),
                ],
            ),
            tool(
                "set_window",
                1,
                "Set the display window (center and width in intensity units).",
                vec![
                    param("center", real(None, None, false), WindowCenter, "Window center."),
                    param("width", real(Some(0.0), None, true), WindowWidth, "Window width."),
                ],
            ),
            tool(
                "set_fusion",
                1,
                "Blend another series over the active one with the given opacity (0 disables the overlay's \
                 contribution).",
                vec![
                    param("overlay_series", string(), SeriesId, "Series drawn on top."),
                    param("alpha", real(Some(0.0), Some(1.0), false), Opacity, "Overlay opacity."),
                ],
            ),
            tool(
                "render",
                1,
                "Render the current slice as an 8-bit grayscale PNG.",
                vec![],
            ),
            tool(
                "bookmark_view",
                2,
                "Save the current view and its rendering as evidence.",
                vec![ParamSpec {
                    required: false,
                    default: Some(json!("")),
                    ..param("label", string(), Label, "Free-text note.")
                }],
            ),
            tool(
                "measure_distance",
                2,
                "Measure the straight-line distance in mm between two world points and log it as evidence.",
                vec![
                    param("p1", ParamType::Point3, WorldPointMm, "First point."),
                    param("p2", ParamType::Point3, WorldPointMm, "Second point."),
                ],
            ),
            tool(
                "export_evidence",
                2,
                "Export all bookmarks, masks and measurements as one evidence bundle.",
                vec![],
            ),
            tool(
                "local_threshold_segment",
                3,
                "Grow a 6-connected region on the active series from a world-space seed over voxels with \
                 intensity in [lo, hi] within max_radius_mm of the seed. Returns volume, centroid, mean \
                 intensity and maximum diameter. The seed must land inside the target structure.",
                vec![
                    param("seed_mm", ParamType::Point3, WorldPointMm, "Seed point."),
                    param("lo", intensity(), Intensity, "Lowest included intensity."),
                    param("hi", intensity(), Intensity, "Highest included intensity."),
                    param(
                        "max_radius_mm",
                        real(Some(0.0), None, true),
                        LengthMm,
                        "Growth radius limit.",
                    ),
                ],
            ),
            tool(
                "mask_stats",
                3,
                "Recompute statistics of a stored segmentation mask.",
                vec![param(
                    "mask_id",
                    string(),
                    MaskId,
                    "Mask returned by local_threshold_segment.",
                )],
            ),
        ]
    })
}

pub fn descriptor(name: &str) -> Option<&'static ToolDescriptor> {
    registry().iter().find(|d| d.name == name)
}

/// One schema problem in a call's arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub problem: String,
}

impl FieldError {
    fn new(field: &str, problem: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            problem: problem.into(),
        }
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn check_real(v: &Value, min: Option<f64>, max: Option<f64>, exclusive_min: bool) -> Result<(), String> {
    let x = v
        .as_f64()
        .filter(|_| v.is_number())
        .ok_or_else(|| format!("expected a number, got {}", json_kind(v)))?;
    if !x.is_finite() {
        return Err("must be finite".into());
    }
    if let Some(m) = min {
        if x < m || (exclusive_min && x == m) {
            return Err(format!("must be {} {m}", if exclusive_min { ">" } else { ">=" }));
        }
    }
    if let Some(m) = max {
        if x > m {
            return Err(format!("must be <= {m}"));
        }
    }
    Ok(())
}

fn check(schema: &ParamType, v: &Value) -> Result<(), String> {
    match schema {
        ParamType::String { one_of } => {
            let s = v
                .as_str()
                .ok_or_else(|| format!("expected a string, got {}", json_kind(v)))?;
            match one_of {
                Some(allowed) if !allowed.iter().any(|a| a == s) => {
                    Err(format!("must be one of {}", allowed.join(", ")))
                }
                _ => Ok(()),
            }
        }
        ParamType::Integer { min, max } => {
            let n = v.as_i64().ok_or_else(|| match v {
                Value::Number(_) => "expected an integer".to_string(),
                other => format!("expected an integer, got {}", json_kind(other)),
            })?;
            if min.is_some_and(|m| n < m) || max.is_some_and(|m| n > m) {
                return Err(format!(
                    "must lie in [{}, {}]",
                    min.map_or("-inf".into(), |m| m.to_string()),
                    max.map_or("inf".into(), |m| m.to_string())
                ));
            }
            Ok(())
        }
        ParamType::Real {
            min,
            max,
            exclusive_min,
        } => check_real(v, *min, *max, *exclusive_min),
        ParamType::Point3 => match v.as_array() {
            Some(a) if a.len() == 3 => a
                .iter()
                .try_for_each(|c| check_real(c, None, None, false))
                .map_err(|e| format!("coordinate {e}")),
            Some(a) => Err(format!("expected 3 coordinates, got {}", a.len())),
            None => Err(format!("expected [x, y, z], got {}", json_kind(v))),
        },
    }
}

/// Check `args` against `descriptor`; returns the defaulted, key-sorted map
/// or every field problem found.
pub fn validate_call(descriptor: &ToolDescriptor, args: &Value) -> Result<Map<String, Value>, Vec<FieldError>> {
    let empty = Map::new();
    let given = match args {
        Value::Object(m) => m,
        Value::Null => &empty,
        other => {
            return Err(vec![FieldError::new(
                "",
                format!("arguments must be an object, got {}", json_kind(other)),
            )])
        }
    };
    let mut errors = Vec::new();
    let mut keys: Vec<&String> = given.keys().collect();
    keys.sort();
    for key in keys {
        if descriptor.param(key).is_none() {
            errors.push(FieldError::new(key, "unknown argument"));
        }
    }
    let mut out = Map::new();
    for p in &descriptor.params {
        match given.get(&p.name) {
            Some(v) => match check(&p.schema, v) {
                Ok(()) => {
                    out.insert(p.name.clone(), v.clone());
                }
                Err(problem) => errors.push(FieldError::new(&p.name, problem)),
            },
            None if p.required => errors.push(FieldError::new(&p.name, "missing required argument")),
            None => {
                if let Some(d) = &p.default {
                    out.insert(p.name.clone(), d.clone());
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}
