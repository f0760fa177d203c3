use std::path::Path;

use probunet_core::data::{generate_synthetic, write_tensor, FieldTensor, SynthConfig};
use probunet_core::diagnostics::{build_report, EvalConfig, EvalReport, Prediction, BASELINE, REPORT_FILE, TRUTH};
use probunet_core::Error;
use serde_json::Value;

/// Checks the JSON-schema keywords the report schema uses.
fn validate(schema: &Value, root: &Value, v: &Value, at: &str) -> Result<(), String> {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let name = r.strip_prefix("#/$defs/").ok_or(format!("unsupported ref {r}"))?;
        return validate(&root["$defs"][name], root, v, at);
    }
    if let Some(options) = schema.get("oneOf").and_then(Value::as_array) {
        let ok = options.iter().filter(|o| validate(o, root, v, at).is_ok()).count();
        return if ok == 1 { Ok(()) } else { Err(format!("{at}: {ok} oneOf branches match")) };
    }
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => return Err(format!("{at}: bad type keyword")),
        };
        let matches = |ty: &str| match ty {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "integer" => v.is_u64() || v.is_i64(),
            "number" => v.is_number(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            _ => false,
        };
        if !types.iter().any(|t| matches(t)) {
            return Err(format!("{at}: expected {types:?}, got {v}"));
        }
    }
    if let Some(e) = schema.get("enum").and_then(Value::as_array) {
        if !e.contains(v) {
            return Err(format!("{at}: {v} not in {e:?}"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            return Err(format!("{at}: {x} < {min}"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("exclusiveMinimum").and_then(Value::as_f64), v.as_f64()) {
        if x <= min {
            return Err(format!("{at}: {x} <= {min}"));
        }
    }
    if let Some(obj) = v.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        for req in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let k = req.as_str().unwrap();
            if !obj.contains_key(k) {
                return Err(format!("{at}: missing {k}"));
            }
        }
        for (k, val) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(s) => validate(s, root, val, &format!("{at}.{k}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{at}: unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    if let Some(arr) = v.as_array() {
        let n = arr.len() as u64;
        if schema.get("minItems").and_then(Value::as_u64).is_some_and(|m| n < m)
            || schema.get("maxItems").and_then(Value::as_u64).is_some_and(|m| n > m)
        {
            return Err(format!("{at}: {n} items out of range"));
        }
        if let Some(items) = schema.get("items") {
            for (i, x) in arr.iter().enumerate() {
                validate(items, root, x, &format!("{at}[{i}]"))?;
            }
        }
    }
    Ok(())
}

fn check_schema(dir: &Path) {
    let schema: Value = serde_json::from_str(include_str!("../../../schemas/report.schema.json")).unwrap();
    let report: Value = serde_json::from_slice(&std::fs::read(dir.join(REPORT_FILE)).unwrap()).unwrap();
    validate(&schema, &schema, &report, "$").unwrap();
}

fn truth(years: u32) -> FieldTensor {
    generate_synthetic(years, (16, 16), 5, &SynthConfig::default()).unwrap()
}

/// `members` copies of every day, time-major.
fn repeat_members(t: &FieldTensor, members: usize) -> FieldTensor {
    let idx: Vec<usize> = (0..t.len_time()).flat_map(|d| std::iter::repeat_n(d, members)).collect();
    t.select_time(&idx)
}

fn small_config() -> EvalConfig {
    EvalConfig { bootstrap: 200, lattice: 2, ..EvalConfig::default() }
}

#[test]
fn truth_against_itself_scores_zero_and_covers() {
    let t = truth(12);
    let tmp = tempfile::tempdir().unwrap();
    let report = build_report(&[("copy".into(), Prediction::Tensor(t.clone()))], &t, &small_config(), tmp.path()).unwrap();
    for var in ["pr", "tmin", "tmax"] {
        let row = report.score("copy", var).unwrap();
        assert_eq!(row.crps.unwrap().mean, 0.0);
        assert_eq!(row.mae.mean, 0.0);
        assert_eq!(report.spread_of("copy", var), Some(0.0));
        assert!(report.score(BASELINE, var).unwrap().crps.is_none());
        assert!(report.score(BASELINE, var).unwrap().mae.mean > 0.0);
    }
    let ext = report.extremes.as_ref().unwrap();
    assert_eq!(ext.years, 12);
    assert_eq!(ext.return_level_cells.len(), 2);
    assert!(report.coverage_of(TRUTH).unwrap().good);
    assert_eq!(report.coverage_of("copy").unwrap().fraction, report.coverage_of(TRUTH).unwrap().fraction);
    for f in report.tables.iter().chain(&report.figures) {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    assert!(report.figures.iter().filter(|f| f.contains("return_levels")).count() == 2);
    check_schema(tmp.path());
    let back: EvalReport = serde_json::from_slice(&std::fs::read(tmp.path().join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(back.scores, report.scores);
}

#[test]
fn ensembles_are_scored_per_member_day() {
    let t = truth(2);
    let mut pred = repeat_members(&t, 3);
    for (i, v) in pred.values_mut().iter_mut().enumerate() {
        *v += ((i % 7) as f32 - 3.0) * 0.1;
    }
    pred.check_physical().ok();
    let tmp = tempfile::tempdir().unwrap();
    let report = build_report(&[("noisy".into(), Prediction::Tensor(pred))], &t, &small_config(), tmp.path()).unwrap();
    assert!(report.extremes.is_none());
    assert_eq!(report.models[0].members, 3);
    for var in ["pr", "tmin", "tmax"] {
        let row = report.score("noisy", var).unwrap();
        assert!(row.crps.unwrap().mean > 0.0 && row.crps.unwrap().mean <= row.mae.mean + 0.3);
        assert!(report.spread_of("noisy", var).unwrap() > 0.0);
    }
    check_schema(tmp.path());
}

#[test]
fn streamed_files_match_in_memory_predictions() {
    let t = truth(11);
    let pred = repeat_members(&t, 2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let file = b.path().join("pred.bin");
    write_tensor(&file, &pred).unwrap();
    build_report(&[("m".into(), Prediction::Tensor(pred))], &t, &small_config(), a.path()).unwrap();
    build_report(&[("m".into(), Prediction::File(file))], &t, &small_config(), b.path()).unwrap();
    for entry in std::fs::read_dir(a.path().join("tables")).unwrap() {
        let p = entry.unwrap().path();
        let q = b.path().join("tables").join(p.file_name().unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(q).unwrap(), "{}", p.display());
    }
    assert_eq!(std::fs::read(a.path().join(REPORT_FILE)).unwrap(), std::fs::read(b.path().join(REPORT_FILE)).unwrap());
}

#[test]
fn misaligned_predictions_are_rejected() {
    let t = truth(1);
    let mut shifted = t.clone();
    for d in shifted.time_index.iter_mut() {
        *d += 1;
    }
    let tmp = tempfile::tempdir().unwrap();
    let err = build_report(&[("m".into(), Prediction::Tensor(shifted))], &t, &small_config(), tmp.path()).unwrap_err();
    assert!(matches!(err, Error::Misaligned(_)), "{err}");
    let short = t.slice_time(0, 100).unwrap();
    assert!(matches!(build_report(&[("m".into(), Prediction::Tensor(short))], &t, &small_config(), tmp.path()), Err(Error::Misaligned(_))));
}
