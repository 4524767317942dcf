//! File formats: dataset CSV, model JSON and fit-trace CSV.
//!
//! Dataset CSV: header `user_id,label,f1,...,fd`, one instance per row,
//! labels `-1`/`1`. Rows of a user need not be contiguous; users keep the
//! order of their first appearance. Floats are written in shortest
//! round-trip form, so write → read reproduces every value bit for bit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::domain::{Dataset, FitReport, Hyperparams, ModelParams, UserTask};
use crate::error::{Error, Result};

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_label(raw: &str, line: u64) -> Result<i8> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| parse_error(line, format!("label `{raw}` is not a number")))?;
    if v == 1.0 {
        Ok(1)
    } else if v == -1.0 {
        Ok(-1)
    } else {
        Err(parse_error(line, format!("label `{raw}` is outside {{-1, 1}}")))
    }
}

struct UserRows {
    id: String,
    values: Vec<f64>,
    labels: Vec<i8>,
}

pub fn read_dataset_from<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(parse_error(1, "empty file: missing header")),
    };
    let header_line = header.position().map_or(1, |p| p.line());
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields.len() < 3 || fields[0] != "user_id" || fields[1] != "label" {
        return Err(parse_error(
            header_line,
            "header must be `user_id,label,f1,...,fd` with at least one feature",
        ));
    }
    let dim = fields.len() - 2;
    for (k, name) in fields[2..].iter().enumerate() {
        if *name != format!("f{}", k + 1) {
            return Err(parse_error(
                header_line,
                format!("header column {} is `{name}`, expected `f{}`", k + 3, k + 1),
            ));
        }
    }

    let mut users: Vec<UserRows> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != dim + 2 {
            return Err(parse_error(
                line,
                format!("expected {} fields, found {}", dim + 2, rec.len()),
            ));
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(parse_error(line, "empty user_id"));
        }
        let label = parse_label(&rec[1], line)?;
        let slot = *index.entry(id.to_owned()).or_insert_with(|| {
            users.push(UserRows {
                id: id.to_owned(),
                values: Vec::new(),
                labels: Vec::new(),
            });
            users.len() - 1
        });
        let user = &mut users[slot];
        for (k, cell) in rec.iter().skip(2).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_error(line, format!("feature f{} value `{cell}` is not a number", k + 1))
            })?;
            user.values.push(v);
        }
        user.labels.push(label);
    }
    if users.is_empty() {
        return Err(parse_error(header_line, "no data rows"));
    }
    let tasks = users
        .into_iter()
        .map(|u| {
            let n = u.labels.len();
            UserTask::new(u.id, DMatrix::from_row_slice(n, dim, &u.values), u.labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(tasks)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(path)?))
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header = vec!["user_id".to_owned(), "label".to_owned()];
    header.extend((1..=ds.dim()).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(ds.dim() + 2);
    for u in ds.users() {
        for (r, &label) in u.labels().iter().enumerate() {
            row.clear();
            row.push(u.id().to_owned());
            row.push(label.to_string());
            row.extend(u.features().row(r).iter().map(|&v| format_f64(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset_to(ds, BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: Option<u64>,
    pub created: Option<String>,
}

/// A model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: ModelParams,
    pub hyperparams: Option<Hyperparams>,
    pub meta: ModelMeta,
}

impl ModelFile {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            hyperparams: None,
            meta: ModelMeta::default(),
        }
    }
}

fn finite_array(values: impl Iterator<Item = f64>, what: &str) -> Result<Value> {
    values
        .map(|v| {
            if v.is_finite() {
                Ok(json!(v))
            } else {
                Err(Error::Schema {
                    pointer: format!("/{what}"),
                    message: format!("non-finite value {v}"),
                })
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(Value::Array)
}

fn columns(m: &DMatrix<f64>, what: &str) -> Result<Value> {
    m.column_iter()
        .map(|c| finite_array(c.iter().copied(), what))
        .collect::<Result<Vec<_>>>()
        .map(Value::Array)
}

pub fn model_to_json(model: &ModelFile) -> Result<Value> {
    let m = &model.params;
    Ok(json!({
        "dim": m.dim(),
        "user_order": m.user_order(),
        "theta": finite_array(m.theta.iter().copied(), "theta")?,
        "g": columns(&m.g, "g")?,
        "p": columns(&m.p, "p")?,
        "hyperparams": model.hyperparams,
        "meta": model.meta,
    }))
}

pub fn write_model_to<W: Write>(model: &ModelFile, mut writer: W) -> Result<()> {
    let value = model_to_json(model)?;
    serde_json::to_writer_pretty(&mut writer, &value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn write_model(model: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    write_model_to(model, BufWriter::new(File::create(path)?))
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| schema(format!("/{key}"), "missing required field"))
}

fn number_array(v: &Value, pointer: &str, len: usize) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| schema(pointer, "expected an array of numbers"))?;
    if arr.len() != len {
        return Err(schema(
            pointer,
            format!("expected {len} entries, found {}", arr.len()),
        ));
    }
    arr.iter()
        .enumerate()
        .map(|(k, x)| {
            x.as_f64()
                .ok_or_else(|| schema(format!("{pointer}/{k}"), "expected a number"))
        })
        .collect()
}

fn column_matrix(v: &Value, pointer: &str, dim: usize, n_users: usize) -> Result<DMatrix<f64>> {
    let cols = v
        .as_array()
        .ok_or_else(|| schema(pointer, "expected an array with one column per user"))?;
    if cols.len() != n_users {
        return Err(schema(
            pointer,
            format!(
                "expected {n_users} columns to match user_order, found {}",
                cols.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(dim * n_users);
    for (j, c) in cols.iter().enumerate() {
        data.extend(number_array(c, &format!("{pointer}/{j}"), dim)?);
    }
    Ok(DMatrix::from_column_slice(dim, n_users, &data))
}

pub fn model_from_json(value: &Value) -> Result<ModelFile> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema("", "expected a JSON object"))?;
    let dim = field(obj, "dim")?
        .as_u64()
        .filter(|&d| d > 0)
        .ok_or_else(|| schema("/dim", "expected a positive integer"))? as usize;
    let order_val = field(obj, "user_order")?
        .as_array()
        .ok_or_else(|| schema("/user_order", "expected an array of strings"))?;
    let user_order = order_val
        .iter()
        .enumerate()
        .map(|(k, v)| {
            v.as_str()
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .ok_or_else(|| schema(format!("/user_order/{k}"), "expected a non-empty string"))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_users = user_order.len();
    let theta = DVector::from_vec(number_array(field(obj, "theta")?, "/theta", dim)?);
    let g = column_matrix(field(obj, "g")?, "/g", dim, n_users)?;
    let p = column_matrix(field(obj, "p")?, "/p", dim, n_users)?;
    let hyperparams = match obj.get("hyperparams") {
        None | Some(Value::Null) => None,
        Some(h) => Some(
            serde_json::from_value(h.clone()).map_err(|e| schema("/hyperparams", e.to_string()))?,
        ),
    };
    let meta = match obj.get("meta") {
        None | Some(Value::Null) => ModelMeta::default(),
        Some(m) => serde_json::from_value(m.clone()).map_err(|e| schema("/meta", e.to_string()))?,
    };
    let params = ModelParams::new(theta, g, p, user_order)
        .map_err(|e| schema("/user_order", e.to_string()))?;
    Ok(ModelFile {
        params,
        hyperparams,
        meta,
    })
}

pub fn read_model_from<R: Read>(reader: R) -> Result<ModelFile> {
    let value: Value = serde_json::from_reader(reader)?;
    model_from_json(&value)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    read_model_from(BufReader::new(File::open(path)?))
}

pub const TRACE_HEADER: [&str; 10] = [
    "iter", "objective", "loss", "reg1", "reg2", "reg3", "rho", "d_theta", "d_g", "d_p",
];

pub fn write_trace_to<W: Write>(report: &FitReport, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for r in &report.iterations {
        let mut row = vec![r.iter.to_string()];
        row.extend(
            [r.objective, r.loss, r.reg1, r.reg2, r.reg3, r.rho, r.d_theta, r.d_g, r.d_p]
                .into_iter()
                .map(format_f64),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(report: &FitReport, path: impl AsRef<Path>) -> Result<()> {
    write_trace_to(report, BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize, P: AsRef<Path>>(value: &T, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>, P: AsRef<Path>>(path: P) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{IterRecord, StopReason};

    const TWO_USERS: &str = "user_id,label,f1,f2,f3\n\
        a,1,0.5,1,2\n\
        b,-1,1,1,1\n\
        a,-1,0,0,0\r\n\
        b,1,3,2,1\n";

    #[test]
    fn parses_interleaved_users() {
        let ds = read_dataset_from(TWO_USERS.as_bytes()).unwrap();
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.user_ids(), vec!["a", "b"]);
        let a = ds.user("a").unwrap();
        assert_eq!(a.labels(), &[1, -1]);
        assert_eq!(a.features()[(0, 0)], 0.5);
        assert_eq!(a.features()[(1, 2)], 0.0);
    }

    #[test]
    fn label_zero_reports_its_line() {
        let text = "user_id,label,f1\na,1,0.1\na,0,0.2\n";
        match read_dataset_from(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("label"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        let cases = [
            ("user,label,f1\na,1,0\n", 1),
            ("user_id,label,f2\na,1,0\n", 1),
            ("user_id,label,f1,f2\na,1,0\n", 2),
            ("user_id,label,f1\na,1,x\n", 2),
            ("user_id,label,f1\n,1,0\n", 2),
            ("user_id,label,f1\n", 1),
        ];
        for (text, expected_line) in cases {
            match read_dataset_from(text.as_bytes()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, expected_line, "{text:?}"),
                other => panic!("{text:?}: unexpected {other:?}"),
            }
        }
        assert!(read_dataset_from("".as_bytes()).is_err());
    }

    #[test]
    fn written_dataset_uses_lf_and_fixed_header() {
        let ds = read_dataset_from(TWO_USERS.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_dataset_to(&ds, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next(), Some("user_id,label,f1,f2,f3"));
        assert_eq!(text.lines().nth(1), Some("a,1,0.5,1,2"));
        assert_eq!(read_dataset_from(text.as_bytes()).unwrap(), ds);
    }

    #[test]
    fn float_format_round_trips_extremes() {
        for v in [0.0, -0.0, 1e-300, 5e-324, 1.7976931348623157e308, 0.1, -2.5e-7, 123456789.123, 1e16] {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    fn sample_model() -> ModelFile {
        let params = ModelParams::new(
            DVector::from_vec(vec![0.1, -2.0 / 3.0]),
            DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 3.0, 1e-200]),
            DMatrix::from_column_slice(2, 2, &[0.0, 0.0, std::f64::consts::PI, -1.0]),
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        ModelFile {
            params,
            hyperparams: Some(Hyperparams::default()),
            meta: ModelMeta {
                seed: Some(7),
                created: Some("fit".into()),
            },
        }
    }

    #[test]
    fn model_round_trip_and_layout() {
        let model = sample_model();
        let mut buf = Vec::new();
        write_model_to(&model, &mut buf).unwrap();
        let back = read_model_from(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let v: Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["g"][1][0], json!(3.0));
        assert_eq!(v["user_order"], json!(["x", "y"]));
    }

    #[test]
    fn truncated_model_is_a_parse_error() {
        let mut buf = Vec::new();
        write_model_to(&sample_model(), &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(matches!(read_model_from(buf.as_slice()), Err(Error::Json(_))));
    }

    #[test]
    fn schema_errors_carry_pointers() {
        let mut v = model_to_json(&sample_model()).unwrap();
        v["g"].as_array_mut().unwrap().pop();
        match model_from_json(&v) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/g"),
            other => panic!("unexpected {other:?}"),
        }
        let mut v = model_to_json(&sample_model()).unwrap();
        v["p"][1][0] = json!("oops");
        match model_from_json(&v) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/p/1/0"),
            other => panic!("unexpected {other:?}"),
        }
        let mut v = model_to_json(&sample_model()).unwrap();
        v.as_object_mut().unwrap().remove("theta");
        assert!(matches!(model_from_json(&v), Err(Error::Schema { pointer, .. }) if pointer == "/theta"));
    }

    #[test]
    fn trace_rows() {
        let mut report = FitReport {
            initial_objective: 1.0,
            iterations: vec![],
            converged: true,
            stop_reason: StopReason::Tolerance,
        };
        let mut out = Vec::new();
        write_trace_to(&report, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "iter,objective,loss,reg1,reg2,reg3,rho,d_theta,d_g,d_p\n"
        );
        let rec = IterRecord {
            iter: 1,
            objective: 0.75,
            loss: 0.5,
            reg1: 0.125,
            reg2: 0.0625,
            reg3: 0.0625,
            rho: 2.0,
            d_theta: 1.0,
            d_g: 0.5,
            d_p: 0.25,
        };
        report.iterations = vec![rec, IterRecord { iter: 2, ..rec }];
        let mut out = Vec::new();
        write_trace_to(&report, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().nth(1), Some("1,0.75,0.5,0.125,0.0625,0.0625,2,1,0.5,0.25"));
    }
}
