//! Random tool calls and single-field trace mutations.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value};

pub const LAYER_3: [&str; 2] = ["local_threshold_segment", "mask_stats"];

const TOOLS: [&str; 15] = [
    "list_series",
    "select_series",
    "set_slice",
    "set_window",
    "set_fusion",
    "render",
    "bookmark_view",
    "measure_distance",
    "export_evidence",
    "local_threshold_segment",
    "mask_stats",
    "run_script",
    "eval",
    "",
    "LIST_SERIES",
];

fn junk(rng: &mut impl Rng) -> Value {
    match rng.random_range(0..6) {
        0 => Value::Null,
        1 => json!(rng.random_range(-1e4..1e4)),
        2 => json!("42"),
        3 => json!([1, 2, 3]),
        4 => json!(rng.random::<bool>()),
        _ => json!({ "nested": rng.random_range(-5..5) }),
    }
}

fn point(rng: &mut impl Rng) -> Value {
    json!([0; 3].map(|_| rng.random_range(-150.0..150.0)))
}

/// Arguments that are usually well-formed for `tool`.
fn plausible_args(tool: &str, series: &[&str], rng: &mut impl Rng) -> Value {
    let sid = series.choose(rng).copied().unwrap_or("T1");
    match tool {
        "select_series" => json!({ "series_id": sid }),
        "set_slice" => {
            let orientation = ["AXIAL", "CORONAL", "SAGITTAL", "OBLIQUE"].choose(rng).copied();
            json!({ "orientation": orientation, "index": rng.random_range(-5..80) })
        }
        "set_window" => {
            json!({ "center": rng.random_range(-500.0..2000.0), "width": rng.random_range(-10.0..3000.0) })
        }
        "set_fusion" => json!({ "overlay_series": sid, "alpha": rng.random_range(-0.2..1.2) }),
        "bookmark_view" => json!({ "label": "k" }),
        "measure_distance" => json!({ "p1": point(rng), "p2": point(rng) }),
        "local_threshold_segment" => json!({
            "seed_mm": point(rng),
            "lo": rng.random_range(0..1200),
            "hi": 32767,
            "max_radius_mm": rng.random_range(1.0..100.0),
        }),
        "mask_stats" => json!({ "mask_id": "mask-0001" }),
        _ => json!({}),
    }
}

/// A random call: mostly plausible arguments, sometimes junk, unknown keys
/// or non-object arguments.
pub fn fuzz_call(rng: &mut impl Rng, series: &[&str]) -> (String, Value) {
    let tool = TOOLS.choose(rng).unwrap().to_string();
    let args = match rng.random_range(0..10) {
        0 => junk(rng),
        1 => {
            let mut a = plausible_args(&tool, series, rng);
            if let Some(o) = a.as_object_mut() {
                o.insert("extra".into(), junk(rng));
            }
            a
        }
        2 => {
            let mut a = plausible_args(&tool, series, rng);
            if let Some(o) = a.as_object_mut() {
                let keys: Vec<String> = o.keys().cloned().collect();
                if let Some(k) = keys.choose(rng) {
                    o.insert(k.clone(), junk(rng));
                }
            }
            a
        }
        _ => plausible_args(&tool, series, rng),
    };
    (tool, args)
}

/// Hashed record fields a mutation may touch.
pub const RECORD_FIELDS: [&str; 8] = [
    "step",
    "call_id",
    "tool",
    "args",
    "status",
    "result_digest",
    "state_digest",
    "artifact_ids",
];

/// Record fields whose recorded value replay compares directly.
pub const OUTCOME_FIELDS: [&str; 4] = ["status", "result_digest", "state_digest", "artifact_ids"];

const STATUSES: [&str; 7] = [
    "OK",
    "E_UNKNOWN_TOOL",
    "E_BAD_ARGS",
    "E_TRACK_FORBIDDEN",
    "E_BAD_SESSION",
    "E_BUDGET",
    "E_VIEWER",
];

fn flip_hex(s: &str, rng: &mut impl Rng) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    if chars.is_empty() {
        return "0".into();
    }
    let i = rng.random_range(0..chars.len());
    chars[i] = if chars[i] == '0' { '1' } else { '0' };
    chars.into_iter().collect()
}

fn perturb_args(args: &mut Value, rng: &mut impl Rng) {
    let Some(obj) = args.as_object_mut() else {
        *args = json!({ "forged": true });
        return;
    };
    let numeric: Vec<String> = obj
        .iter()
        .filter(|(_, v)| v.is_number())
        .map(|(k, _)| k.clone())
        .collect();
    match numeric.choose(rng) {
        Some(k) => {
            let v = obj[k].as_f64().unwrap();
            obj.insert(
                k.clone(),
                if obj[k].is_i64() {
                    json!(v as i64 + 1)
                } else {
                    json!(v + 0.5)
                },
            );
        }
        None => {
            obj.insert("forged".into(), json!(true));
        }
    }
}

/// Change `field` of a record line (as JSON) to a different value.
pub fn mutate_record(record: &mut Value, field: &str, rng: &mut impl Rng) {
    let slot = record
        .get_mut(field)
        .unwrap_or_else(|| panic!("record has no field {field}"));
    match field {
        "step" | "call_id" => *slot = json!(slot.as_u64().unwrap() + rng.random_range(1..3)),
        "tool" => *slot = json!(format!("{}_", slot.as_str().unwrap())),
        "args" => perturb_args(slot, rng),
        "status" => {
            let current = slot.as_str().unwrap().to_string();
            let others: Vec<&&str> = STATUSES.iter().filter(|s| **s != current).collect();
            *slot = json!(others.choose(rng).unwrap());
        }
        "result_digest" | "state_digest" => {
            *slot = match slot.as_str() {
                Some(s) => json!(flip_hex(s, rng)),
                None => json!("0".repeat(64)),
            }
        }
        "artifact_ids" => {
            let ids = slot.as_array_mut().unwrap();
            if ids.is_empty() || rng.random::<bool>() {
                ids.push(json!("f".repeat(64)));
            } else {
                ids.pop();
            }
        }
        other => panic!("unsupported mutation field {other}"),
    }
}
