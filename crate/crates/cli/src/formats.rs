//! On-disk formats: vocabulary files, verbalizer files, model
//! checkpoints, round logs, metrics reports, and pseudo-label files.
//!
//! Everything written here is byte-deterministic given the same
//! in-memory values: floats use Rust's shortest round-trip formatting,
//! JSON objects keep struct field order, and no timestamps appear
//! anywhere.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gem_core::eval::Prf;
use gem_core::model::{ModelConfig, ModelParameters};
use gem_core::prompt::Verbalizer;
use gem_core::selftrain::{EpochRecord, Phase, RoundLog};
use gem_core::serialize::Vocabulary;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad vocabulary file {path}: {detail}")]
    BadVocab { path: PathBuf, detail: String },
    #[error("bad verbalizer file {path}: {detail}")]
    BadVerbalizer { path: PathBuf, detail: String },
    #[error("checkpoint shape mismatch in {path}: {detail}")]
    CheckpointShape { path: PathBuf, detail: String },
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), FormatError> {
    let mut out = String::new();
    for line in vocab.lines() {
        out.push_str(line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| FormatError::Write { path: path.into(), source })
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary, FormatError> {
    let content =
        fs::read_to_string(path).map_err(|source| FormatError::Read { path: path.into(), source })?;
    Vocabulary::from_lines(content.lines())
        .map_err(|e| FormatError::BadVocab { path: path.into(), detail: e.to_string() })
}

#[derive(Debug, Deserialize)]
struct VerbalizerFile {
    no: Vec<String>,
    yes: Vec<String>,
}

/// Loads a verbalizer file (`{"no": [...], "yes": [...]}`) and
/// validates it against the vocabulary.
pub fn read_verbalizer_words(path: &Path) -> Result<[Vec<String>; 2], FormatError> {
    let content =
        fs::read_to_string(path).map_err(|source| FormatError::Read { path: path.into(), source })?;
    let file: VerbalizerFile = serde_json::from_str(&content)
        .map_err(|e| FormatError::BadVerbalizer { path: path.into(), detail: e.to_string() })?;
    Ok([file.no, file.yes])
}

pub fn build_verbalizer(
    words: [Vec<String>; 2],
    vocab: &Vocabulary,
    origin: &Path,
) -> Result<Verbalizer, FormatError> {
    Verbalizer::new(words, vocab)
        .map_err(|e| FormatError::BadVerbalizer { path: origin.into(), detail: e.to_string() })
}

const CHECKPOINT_MAGIC: &str = "gem-checkpoint v1";

/// Versioned structured-text dump of all tensors with shape headers.
pub fn write_checkpoint(path: &Path, params: &ModelParameters) -> Result<(), FormatError> {
    let cfg = &params.cfg;
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "vocab_size {}", cfg.vocab_size);
    let _ = writeln!(out, "d_model {}", cfg.d_model);
    let _ = writeln!(out, "n_blocks {}", cfg.n_blocks);
    let _ = writeln!(out, "ffn_hidden {}", cfg.ffn_hidden);
    let _ = writeln!(out, "max_len {}", cfg.max_len);
    let _ = writeln!(out, "n_prompt_tokens {}", cfg.n_prompt_tokens);
    let _ = writeln!(out, "dropout_rate {}", cfg.dropout_rate);
    for (name, tensor) in params.tensors() {
        let _ = writeln!(out, "tensor {name} {} {}", tensor.rows, tensor.cols);
        for r in 0..tensor.rows {
            let row = tensor.row(r);
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
    }
    out.push_str("end\n");
    fs::write(path, out).map_err(|source| FormatError::Write { path: path.into(), source })
}

fn shape_err(path: &Path, detail: impl Into<String>) -> FormatError {
    FormatError::CheckpointShape { path: path.into(), detail: detail.into() }
}

/// Loads a checkpoint, validating the tensor roster and shapes against
/// the construction config in its header.
pub fn read_checkpoint(path: &Path) -> Result<ModelParameters, FormatError> {
    let content =
        fs::read_to_string(path).map_err(|source| FormatError::Read { path: path.into(), source })?;
    let mut lines = content.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(shape_err(path, "missing header"));
    }
    let mut field = |name: &str| -> Result<String, FormatError> {
        let line = lines.next().ok_or_else(|| shape_err(path, format!("missing {name}")))?;
        let (key, value) =
            line.split_once(' ').ok_or_else(|| shape_err(path, format!("bad {name} line")))?;
        if key != name {
            return Err(shape_err(path, format!("expected {name}, found {key}")));
        }
        Ok(value.to_owned())
    };
    let parse_usize = |v: String, what: &str| -> Result<usize, FormatError> {
        v.parse().map_err(|_| shape_err(path, format!("bad {what}")))
    };
    let cfg = ModelConfig {
        vocab_size: parse_usize(field("vocab_size")?, "vocab_size")?,
        d_model: parse_usize(field("d_model")?, "d_model")?,
        n_blocks: parse_usize(field("n_blocks")?, "n_blocks")?,
        ffn_hidden: parse_usize(field("ffn_hidden")?, "ffn_hidden")?,
        max_len: parse_usize(field("max_len")?, "max_len")?,
        n_prompt_tokens: parse_usize(field("n_prompt_tokens")?, "n_prompt_tokens")?,
        dropout_rate: field("dropout_rate")?
            .parse()
            .map_err(|_| shape_err(path, "bad dropout_rate"))?,
    };
    if cfg.vocab_size == 0 || cfg.d_model == 0 {
        return Err(shape_err(path, "degenerate dimensions"));
    }
    let mut params = ModelParameters::init(&cfg, 0);
    for (name, tensor) in params.tensors_mut() {
        let header = lines.next().ok_or_else(|| shape_err(path, format!("missing tensor {name}")))?;
        let parts: Vec<&str> = header.split(' ').collect();
        match parts.as_slice() {
            ["tensor", found_name, rows, cols] => {
                if *found_name != name {
                    return Err(shape_err(path, format!("expected tensor {name}, found {found_name}")));
                }
                let rows: usize = rows.parse().map_err(|_| shape_err(path, "bad rows"))?;
                let cols: usize = cols.parse().map_err(|_| shape_err(path, "bad cols"))?;
                if rows != tensor.rows || cols != tensor.cols {
                    return Err(shape_err(
                        path,
                        format!(
                            "tensor {name} is {rows}x{cols}, expected {}x{}",
                            tensor.rows, tensor.cols
                        ),
                    ));
                }
            }
            _ => return Err(shape_err(path, format!("bad tensor header for {name}"))),
        }
        for r in 0..tensor.rows {
            let line = lines
                .next()
                .ok_or_else(|| shape_err(path, format!("tensor {name} truncated at row {r}")))?;
            let row = tensor.row_mut(r);
            let mut count = 0usize;
            for (i, value) in line.split(' ').enumerate() {
                if i >= row.len() {
                    return Err(shape_err(path, format!("tensor {name} row {r} too wide")));
                }
                row[i] = value
                    .parse()
                    .map_err(|_| shape_err(path, format!("tensor {name} row {r} column {i}")))?;
                count += 1;
            }
            if count != row.len() {
                return Err(shape_err(path, format!("tensor {name} row {r} too narrow")));
            }
        }
    }
    if lines.next() != Some("end") {
        return Err(shape_err(path, "missing end marker"));
    }
    Ok(params)
}

/// Validates a loaded checkpoint against the dimensions the run config
/// expects.
pub fn check_checkpoint_config(
    params: &ModelParameters,
    expected: &ModelConfig,
    path: &Path,
) -> Result<(), FormatError> {
    let got = &params.cfg;
    if got.vocab_size != expected.vocab_size
        || got.d_model != expected.d_model
        || got.n_blocks != expected.n_blocks
        || got.ffn_hidden != expected.ffn_hidden
        || got.max_len != expected.max_len
        || got.n_prompt_tokens != expected.n_prompt_tokens
    {
        return Err(shape_err(
            path,
            format!(
                "checkpoint built for vocab={} d={} blocks={} ffn={} max_len={} prompts={}, run expects vocab={} d={} blocks={} ffn={} max_len={} prompts={}",
                got.vocab_size,
                got.d_model,
                got.n_blocks,
                got.ffn_hidden,
                got.max_len,
                got.n_prompt_tokens,
                expected.vocab_size,
                expected.d_model,
                expected.n_blocks,
                expected.ffn_hidden,
                expected.max_len,
                expected.n_prompt_tokens
            ),
        ));
    }
    Ok(())
}

/// Writes the audit log as line-delimited JSON records in
/// chronological order: every epoch record, with the selection event
/// after its iteration's last teacher epoch and prune events after the
/// student epoch that triggered them.
pub fn write_round_log(path: &Path, log: &RoundLog) -> Result<(), FormatError> {
    #[derive(serde::Serialize)]
    #[serde(tag = "record", rename_all = "lowercase")]
    enum Line<'a> {
        Epoch(&'a EpochRecord),
        Select(&'a gem_core::selftrain::SelectEvent),
        Prune(&'a gem_core::selftrain::PruneEvent),
    }
    let mut out = String::new();
    let mut push = |line: Line<'_>| {
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    };
    for (i, record) in log.epochs.iter().enumerate() {
        push(Line::Epoch(record));
        if record.phase == Phase::Teacher {
            let last_teacher_of_iter = log.epochs.get(i + 1).map(|next| {
                next.phase != Phase::Teacher || next.iteration != record.iteration
            }).unwrap_or(true);
            if last_teacher_of_iter {
                if let Some(sel) = log.selections.iter().find(|s| s.iteration == record.iteration) {
                    push(Line::Select(sel));
                }
            }
        } else {
            for prune in
                log.prunes.iter().filter(|p| p.iteration == record.iteration && p.epoch == record.epoch)
            {
                push(Line::Prune(prune));
            }
        }
    }
    fs::write(path, out).map_err(|source| FormatError::Write { path: path.into(), source })
}

/// P/R/F1 report: structured text, four decimal places.
pub fn format_metrics(split: &str, prf: &Prf) -> String {
    format!(
        "split {split}\nprecision {:.4}\nrecall {:.4}\nf1 {:.4}\n",
        prf.precision, prf.recall, prf.f1
    )
}

/// TPR/TNR report for pseudo-label quality.
pub fn format_pseudo_metrics(tpr: f64, tnr: f64) -> String {
    format!("tpr {tpr:.4}\ntnr {tnr:.4}\n")
}

pub fn write_text(path: &Path, content: &str) -> Result<(), FormatError> {
    fs::write(path, content).map_err(|source| FormatError::Write { path: path.into(), source })
}
