//! Loading entity tables and pair splits from disk, plus the inverse
//! writers used by the synthetic generator and round-trip tests.
//!
//! Formats:
//! - relational-csv: UTF-8 CSV, first row header, double-quote escaping
//! - semi-jsonl: one JSON object per line; nested objects and arrays
//!   are preserved, non-string scalars are stringified on load
//! - text-lines: UTF-8, one `id<TAB>text` record per line
//! - pairs: CSV `ltable_id,rtable_id[,label]`
//!
//! Loaders are pure given file contents; safe to call concurrently on
//! distinct files.

use std::fs;
use std::path::{Path, PathBuf};

use gem_core::data::{
    CandidatePair, DatasetSplit, Entity, EntityBody, EntityTable, MatchLabel, SemiValue, SplitKind,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableFormat {
    RelationalCsv,
    SemiJsonl,
    TextLines,
}

impl TableFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            TableFormat::RelationalCsv => "relational-csv",
            TableFormat::SemiJsonl => "semi-jsonl",
            TableFormat::TextLines => "text-lines",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::RelationalCsv => "csv",
            TableFormat::SemiJsonl => "jsonl",
            TableFormat::TextLines => "txt",
        }
    }
}

fn default_id_field() -> String {
    "id".to_owned()
}

/// Where and how to read one entity table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDescriptor {
    pub path: PathBuf,
    pub format: TableFormat,
    #[serde(default = "default_id_field")]
    pub id_field: String,
}

impl TableDescriptor {
    pub fn new(path: impl Into<PathBuf>, format: TableFormat) -> Self {
        TableDescriptor { path: path.into(), format, id_field: default_id_field() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse failure in {path} at record {record}: {detail}")]
    Parse { path: PathBuf, record: usize, detail: String },
    #[error("missing id field {id_field:?} at record {record} of {path}")]
    MissingId { path: PathBuf, id_field: String, record: usize },
    #[error("empty attribute name at record {record} of {path}")]
    EmptyAttrName { path: PathBuf, record: usize },
    #[error("duplicate entity id {id:?} at record {record} of {path}")]
    DuplicateId { path: PathBuf, id: String, record: usize },
    #[error("dangling id {id:?} at record {record} of {path}")]
    DanglingId { path: PathBuf, id: String, record: usize },
    #[error("label {label:?} outside {{0,1}} at record {record} of {path}")]
    BadLabel { path: PathBuf, label: String, record: usize },
    #[error("pair file {path} must start with header ltable_id,rtable_id[,label]")]
    BadPairHeader { path: PathBuf },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("table rows disagree on columns: entity {id:?} does not match the header")]
    WriteSchemaMismatch { id: String },
}

fn read_to_string(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.into(), source })
}

fn push_entity(
    table: &mut EntityTable,
    entity: Entity,
    path: &Path,
    record: usize,
) -> Result<(), IngestError> {
    let id = entity.id.clone();
    table.push(entity).map_err(|e| match e {
        gem_core::data::DataError::DuplicateEntityId { .. } => {
            IngestError::DuplicateId { path: path.into(), id, record }
        }
        gem_core::data::DataError::EmptyEntityId => {
            IngestError::MissingId { path: path.into(), id_field: String::new(), record }
        }
    })
}

fn load_relational_csv(desc: &TableDescriptor) -> Result<EntityTable, IngestError> {
    let path = &desc.path;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| IngestError::Parse { path: path.clone(), record: 0, detail: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Parse { path: path.clone(), record: 0, detail: e.to_string() })?
        .clone();
    for name in headers.iter() {
        if name.is_empty() {
            return Err(IngestError::EmptyAttrName { path: path.clone(), record: 0 });
        }
    }
    let id_col = headers.iter().position(|h| h == desc.id_field).ok_or_else(|| {
        IngestError::MissingId { path: path.clone(), id_field: desc.id_field.clone(), record: 0 }
    })?;
    let mut table = EntityTable::new();
    for (record_idx, record) in reader.records().enumerate() {
        let record_no = record_idx + 1;
        let record = record.map_err(|e| IngestError::Parse {
            path: path.clone(),
            record: record_no,
            detail: e.to_string(),
        })?;
        let id = record.get(id_col).unwrap_or("").to_owned();
        if id.is_empty() {
            return Err(IngestError::MissingId {
                path: path.clone(),
                id_field: desc.id_field.clone(),
                record: record_no,
            });
        }
        // The id column is a join key, not matching evidence.
        let attrs: Vec<(String, String)> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_col)
            .map(|(i, name)| (name.to_owned(), record.get(i).unwrap_or("").to_owned()))
            .collect();
        push_entity(&mut table, Entity { id, body: EntityBody::Structured(attrs) }, path, record_no)?;
    }
    Ok(table)
}

fn json_to_semi(value: &serde_json::Value, path: &Path, record: usize) -> Result<SemiValue, IngestError> {
    Ok(match value {
        serde_json::Value::String(s) => SemiValue::Scalar(s.clone()),
        // Shortest round-trip decimal for numbers; empty for null.
        serde_json::Value::Number(n) => SemiValue::Scalar(n.to_string()),
        serde_json::Value::Bool(b) => SemiValue::Scalar(b.to_string()),
        serde_json::Value::Null => SemiValue::Scalar(String::new()),
        serde_json::Value::Array(items) => SemiValue::List(
            items.iter().map(|v| json_to_semi(v, path, record)).collect::<Result<_, _>>()?,
        ),
        serde_json::Value::Object(map) => {
            let mut fields = Vec::with_capacity(map.len());
            for (name, v) in map {
                if name.is_empty() {
                    return Err(IngestError::EmptyAttrName { path: path.into(), record });
                }
                fields.push((name.clone(), json_to_semi(v, path, record)?));
            }
            SemiValue::Object(fields)
        }
    })
}

fn load_semi_jsonl(desc: &TableDescriptor) -> Result<EntityTable, IngestError> {
    let path = &desc.path;
    let content = read_to_string(path)?;
    let mut table = EntityTable::new();
    for (line_idx, line) in content.lines().enumerate() {
        let record_no = line_idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| IngestError::Parse {
            path: path.clone(),
            record: record_no,
            detail: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| IngestError::Parse {
            path: path.clone(),
            record: record_no,
            detail: "expected a JSON object".to_owned(),
        })?;
        let id = match obj.get(&desc.id_field) {
            Some(serde_json::Value::String(s)) if !s.is_empty() => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => {
                return Err(IngestError::MissingId {
                    path: path.clone(),
                    id_field: desc.id_field.clone(),
                    record: record_no,
                })
            }
        };
        let mut fields = Vec::with_capacity(obj.len().saturating_sub(1));
        for (name, v) in obj {
            if name == &desc.id_field {
                continue;
            }
            if name.is_empty() {
                return Err(IngestError::EmptyAttrName { path: path.clone(), record: record_no });
            }
            fields.push((name.clone(), json_to_semi(v, path, record_no)?));
        }
        push_entity(&mut table, Entity { id, body: EntityBody::Semi(fields) }, path, record_no)?;
    }
    Ok(table)
}

fn load_text_lines(desc: &TableDescriptor) -> Result<EntityTable, IngestError> {
    let path = &desc.path;
    let content = read_to_string(path)?;
    let mut table = EntityTable::new();
    for (line_idx, line) in content.lines().enumerate() {
        let record_no = line_idx + 1;
        if line.is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| IngestError::Parse {
            path: path.clone(),
            record: record_no,
            detail: "expected id<TAB>text".to_owned(),
        })?;
        if id.is_empty() {
            return Err(IngestError::MissingId {
                path: path.clone(),
                id_field: desc.id_field.clone(),
                record: record_no,
            });
        }
        push_entity(
            &mut table,
            Entity { id: id.to_owned(), body: EntityBody::Text(text.to_owned()) },
            path,
            record_no,
        )?;
    }
    Ok(table)
}

/// Loads one entity table in its declared format. One entity per
/// record; attribute order follows the source column/field order.
pub fn load_table(desc: &TableDescriptor) -> Result<EntityTable, IngestError> {
    match desc.format {
        TableFormat::RelationalCsv => load_relational_csv(desc),
        TableFormat::SemiJsonl => load_semi_jsonl(desc),
        TableFormat::TextLines => load_text_lines(desc),
    }
}

/// Loads a pair split; every referenced id must resolve in its table.
/// The label column is optional (required absent only by downstream
/// split validation, not here).
pub fn load_pairs(
    path: &Path,
    left: &EntityTable,
    right: &EntityTable,
    kind: SplitKind,
) -> Result<DatasetSplit, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| IngestError::Parse { path: path.into(), record: 0, detail: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Parse { path: path.into(), record: 0, detail: e.to_string() })?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let has_label = match cols.as_slice() {
        ["ltable_id", "rtable_id"] => false,
        ["ltable_id", "rtable_id", "label"] => true,
        _ => return Err(IngestError::BadPairHeader { path: path.into() }),
    };
    let mut pairs = Vec::new();
    for (record_idx, record) in reader.records().enumerate() {
        let record_no = record_idx + 1;
        let record = record.map_err(|e| IngestError::Parse {
            path: path.into(),
            record: record_no,
            detail: e.to_string(),
        })?;
        let lid = record.get(0).unwrap_or("");
        let rid = record.get(1).unwrap_or("");
        if left.get(lid).is_none() {
            return Err(IngestError::DanglingId { path: path.into(), id: lid.into(), record: record_no });
        }
        if right.get(rid).is_none() {
            return Err(IngestError::DanglingId { path: path.into(), id: rid.into(), record: record_no });
        }
        let label = if has_label {
            let raw = record.get(2).unwrap_or("").trim();
            if raw.is_empty() {
                None
            } else {
                let bit: u8 = raw.parse().map_err(|_| IngestError::BadLabel {
                    path: path.into(),
                    label: raw.into(),
                    record: record_no,
                })?;
                Some(MatchLabel::from_bit(bit).ok_or_else(|| IngestError::BadLabel {
                    path: path.into(),
                    label: raw.into(),
                    record: record_no,
                })?)
            }
        } else {
            None
        };
        pairs.push(CandidatePair::new(lid.to_owned(), rid.to_owned(), label));
    }
    Ok(DatasetSplit::new(kind, pairs))
}

fn semi_to_json(value: &SemiValue) -> serde_json::Value {
    match value {
        SemiValue::Scalar(s) => serde_json::Value::String(s.clone()),
        SemiValue::List(items) => serde_json::Value::Array(items.iter().map(semi_to_json).collect()),
        SemiValue::Object(fields) => {
            let mut map = serde_json::Map::new();
            for (name, v) in fields {
                map.insert(name.clone(), semi_to_json(v));
            }
            serde_json::Value::Object(map)
        }
    }
}

/// Writes a table back to its format. For relational-csv every entity
/// must share the header schema of the first one.
pub fn write_table(table: &EntityTable, format: TableFormat, path: &Path) -> Result<(), IngestError> {
    let write_err = |source| IngestError::Write { path: path.into(), source };
    match format {
        TableFormat::RelationalCsv => {
            let mut w = csv::WriterBuilder::new()
                .from_path(path)
                .map_err(|e| IngestError::Write { path: path.into(), source: std::io::Error::other(e) })?;
            let first_attrs: Vec<String> = match table.entities().first() {
                Some(Entity { body: EntityBody::Structured(attrs), .. }) => {
                    attrs.iter().map(|(a, _)| a.clone()).collect()
                }
                _ => Vec::new(),
            };
            let mut header = vec!["id".to_owned()];
            header.extend(first_attrs.iter().cloned());
            w.write_record(&header)
                .map_err(|e| IngestError::Write { path: path.into(), source: std::io::Error::other(e) })?;
            for entity in table.entities() {
                let EntityBody::Structured(attrs) = &entity.body else {
                    return Err(IngestError::WriteSchemaMismatch { id: entity.id.clone() });
                };
                if attrs.len() != first_attrs.len()
                    || attrs.iter().zip(&first_attrs).any(|((a, _), b)| a != b)
                {
                    return Err(IngestError::WriteSchemaMismatch { id: entity.id.clone() });
                }
                let mut row = vec![entity.id.clone()];
                row.extend(attrs.iter().map(|(_, v)| v.clone()));
                w.write_record(&row).map_err(|e| IngestError::Write {
                    path: path.into(),
                    source: std::io::Error::other(e),
                })?;
            }
            w.flush().map_err(write_err)?;
        }
        TableFormat::SemiJsonl => {
            let mut out = String::new();
            for entity in table.entities() {
                let EntityBody::Semi(fields) = &entity.body else {
                    return Err(IngestError::WriteSchemaMismatch { id: entity.id.clone() });
                };
                let mut map = serde_json::Map::new();
                map.insert("id".to_owned(), serde_json::Value::String(entity.id.clone()));
                for (name, v) in fields {
                    map.insert(name.clone(), semi_to_json(v));
                }
                out.push_str(&serde_json::Value::Object(map).to_string());
                out.push('\n');
            }
            fs::write(path, out).map_err(write_err)?;
        }
        TableFormat::TextLines => {
            let mut out = String::new();
            for entity in table.entities() {
                let EntityBody::Text(text) = &entity.body else {
                    return Err(IngestError::WriteSchemaMismatch { id: entity.id.clone() });
                };
                out.push_str(&entity.id);
                out.push('\t');
                out.push_str(text);
                out.push('\n');
            }
            fs::write(path, out).map_err(write_err)?;
        }
    }
    Ok(())
}

/// Writes a pair split as `ltable_id,rtable_id[,label]`.
pub fn write_pairs(pairs: &[CandidatePair], with_labels: bool, path: &Path) -> Result<(), IngestError> {
    let mut out = String::new();
    out.push_str(if with_labels { "ltable_id,rtable_id,label\n" } else { "ltable_id,rtable_id\n" });
    for pair in pairs {
        out.push_str(&pair.left);
        out.push(',');
        out.push_str(&pair.right);
        if with_labels {
            out.push(',');
            if let Some(label) = pair.label {
                out.push_str(&label.bit().to_string());
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| IngestError::Write { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gem_core::data::validate_split;
    use std::io::Write as _;

    fn tmp(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(&format!(".{ext}")).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_maps_rows_to_structured_entities() {
        let f = tmp("id,title,year\n7,Foo,2003\n8,\"Bar, Baz\",1999\n", "csv");
        let desc = TableDescriptor::new(f.path(), TableFormat::RelationalCsv);
        let table = load_table(&desc).unwrap();
        assert_eq!(table.len(), 2);
        let e = table.get("7").unwrap();
        assert_eq!(
            e.body,
            EntityBody::Structured(vec![
                ("title".into(), "Foo".into()),
                ("year".into(), "2003".into())
            ])
        );
        let e8 = table.get("8").unwrap();
        let EntityBody::Structured(attrs) = &e8.body else { panic!() };
        assert_eq!(attrs[0].1, "Bar, Baz");
    }

    #[test]
    fn jsonl_preserves_nesting_lists_and_field_order() {
        let f = tmp(
            r#"{"id":"3","authors":["a","b"],"meta":{"y":"1"},"n":42,"flag":true,"gone":null}"#,
            "jsonl",
        );
        let desc = TableDescriptor::new(f.path(), TableFormat::SemiJsonl);
        let table = load_table(&desc).unwrap();
        let e = table.get("3").unwrap();
        let EntityBody::Semi(fields) = &e.body else { panic!() };
        assert_eq!(fields[0].0, "authors");
        assert_eq!(
            fields[0].1,
            SemiValue::List(vec![
                SemiValue::Scalar("a".into()),
                SemiValue::Scalar("b".into())
            ])
        );
        assert_eq!(
            fields[1].1,
            SemiValue::Object(vec![("y".into(), SemiValue::Scalar("1".into()))])
        );
        assert_eq!(fields[2].1, SemiValue::Scalar("42".into()));
        assert_eq!(fields[3].1, SemiValue::Scalar("true".into()));
        assert_eq!(fields[4].1, SemiValue::Scalar("".into()));
    }

    #[test]
    fn text_lines_become_text_entities() {
        let f = tmp("7\tan abstract with\ttabs inside\n8\tmore text\n", "txt");
        let desc = TableDescriptor::new(f.path(), TableFormat::TextLines);
        let table = load_table(&desc).unwrap();
        assert_eq!(
            table.get("7").unwrap().body,
            EntityBody::Text("an abstract with\ttabs inside".into())
        );
        assert_eq!(table.len(), 2);
    }

    #[test]
    fn missing_id_field_names_the_record() {
        let f = tmp("key,title\n1,Foo\n", "csv");
        let desc = TableDescriptor::new(f.path(), TableFormat::RelationalCsv);
        match load_table(&desc).unwrap_err() {
            IngestError::MissingId { id_field, record, .. } => {
                assert_eq!(id_field, "id");
                assert_eq!(record, 0);
            }
            other => panic!("unexpected {other}"),
        }

        let f = tmp("{\"noid\":\"x\"}\n", "jsonl");
        let desc = TableDescriptor::new(f.path(), TableFormat::SemiJsonl);
        match load_table(&desc).unwrap_err() {
            IngestError::MissingId { record, .. } => assert_eq!(record, 1),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_failures_name_the_record() {
        let f = tmp("{\"id\":\"1\"}\nnot json\n", "jsonl");
        let desc = TableDescriptor::new(f.path(), TableFormat::SemiJsonl);
        match load_table(&desc).unwrap_err() {
            IngestError::Parse { record, .. } => assert_eq!(record, 2),
            other => panic!("unexpected {other}"),
        }

        let f = tmp("7 no tab here\n", "txt");
        let desc = TableDescriptor::new(f.path(), TableFormat::TextLines);
        assert!(matches!(load_table(&desc).unwrap_err(), IngestError::Parse { record: 1, .. }));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let f = tmp("id,t\n1,a\n1,b\n", "csv");
        let desc = TableDescriptor::new(f.path(), TableFormat::RelationalCsv);
        assert!(matches!(load_table(&desc).unwrap_err(), IngestError::DuplicateId { record: 2, .. }));
    }

    fn two_tables() -> (EntityTable, EntityTable) {
        let mut left = EntityTable::new();
        left.push(Entity::text("1", "a")).unwrap();
        left.push(Entity::text("2", "b")).unwrap();
        let mut right = EntityTable::new();
        right.push(Entity::text("2", "c")).unwrap();
        right.push(Entity::text("3", "d")).unwrap();
        (left, right)
    }

    #[test]
    fn pairs_load_with_and_without_labels() {
        let (left, right) = two_tables();
        let f = tmp("ltable_id,rtable_id,label\n1,2,1\n2,3,0\n", "csv");
        let split = load_pairs(f.path(), &left, &right, SplitKind::TrainLabeled).unwrap();
        assert_eq!(split.pairs[0].label, Some(MatchLabel::Matched));
        assert_eq!(split.pairs[1].label, Some(MatchLabel::Mismatched));
        assert!(!split.pairs[0].pseudo);
        assert!(validate_split(&split).is_empty());

        let f = tmp("ltable_id,rtable_id\n1,2\n", "csv");
        let split = load_pairs(f.path(), &left, &right, SplitKind::TrainUnlabeled).unwrap();
        assert_eq!(split.pairs[0].label, None);
        assert!(validate_split(&split).is_empty());
    }

    #[test]
    fn dangling_id_is_named() {
        let (left, right) = two_tables();
        let f = tmp("ltable_id,rtable_id,label\n1,99,1\n", "csv");
        match load_pairs(f.path(), &left, &right, SplitKind::Test).unwrap_err() {
            IngestError::DanglingId { id, record, .. } => {
                assert_eq!(id, "99");
                assert_eq!(record, 1);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_label_is_rejected() {
        let (left, right) = two_tables();
        let f = tmp("ltable_id,rtable_id,label\n1,2,7\n", "csv");
        assert!(matches!(
            load_pairs(f.path(), &left, &right, SplitKind::Test).unwrap_err(),
            IngestError::BadLabel { record: 1, .. }
        ));
    }

    #[test]
    fn tables_round_trip_through_their_formats() {
        let dir = tempfile::tempdir().unwrap();
        for (format, content) in [
            (TableFormat::RelationalCsv, "id,title,year\n7,Foo bar,2003\n8,Baz,1999\n"),
            (
                TableFormat::SemiJsonl,
                "{\"id\":\"1\",\"authors\":[\"a\",\"b\"],\"meta\":{\"y\":\"1\"}}\n",
            ),
            (TableFormat::TextLines, "7\tan abstract\n"),
        ] {
            let path = dir.path().join(format!("t.{}", format.extension()));
            std::fs::write(&path, content).unwrap();
            let desc = TableDescriptor::new(&path, format);
            let table = load_table(&desc).unwrap();
            let out = dir.path().join(format!("rt.{}", format.extension()));
            write_table(&table, format, &out).unwrap();
            let reloaded = load_table(&TableDescriptor::new(&out, format)).unwrap();
            assert_eq!(table.entities(), reloaded.entities(), "{format:?}");
        }
    }
}
