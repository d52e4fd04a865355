//! Two-column tab-separated CoNLL-style data files.
//!
//! Format: UTF-8, `SURFACE\tLABEL` rows, one blank line between sentences.
//! A BOM is tolerated on read and never emitted; CRLF is normalized to LF.

use std::io::{BufRead, Write};

use super::LabeledSentence;
use crate::{Error, Result};

/// Read labeled sentences. Empty input yields an empty list.
pub fn read_conll(reader: impl BufRead) -> Result<Vec<LabeledSentence>> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut labels: Vec<String> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let mut line = line?;
        if line_no == 1 {
            if let Some(stripped) = line.strip_prefix('\u{FEFF}') {
                line = stripped.to_string();
            }
        }
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            if !tokens.is_empty() {
                sentences.push(LabeledSentence::new(
                    std::mem::take(&mut tokens),
                    std::mem::take(&mut labels),
                )?);
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected SURFACE<TAB>LABEL, got {} fields", fields.len()),
            });
        }
        if fields[0].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty surface field".to_string(),
            });
        }
        tokens.push(fields[0].to_string());
        labels.push(fields[1].to_string());
    }
    if !tokens.is_empty() {
        sentences.push(LabeledSentence::new(tokens, labels)?);
    }
    Ok(sentences)
}

/// Read token columns only, accepting one- or two-column rows. Used by the
/// tagging path, where labels may be absent.
pub fn read_token_lines(reader: impl BufRead) -> Result<Vec<Vec<String>>> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let mut line = line?;
        if line_no == 1 {
            if let Some(stripped) = line.strip_prefix('\u{FEFF}') {
                line = stripped.to_string();
            }
        }
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            if !tokens.is_empty() {
                sentences.push(std::mem::take(&mut tokens));
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() > 2 || fields[0].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 1 or 2 fields, got {}", fields.len()),
            });
        }
        tokens.push(fields[0].to_string());
    }
    if !tokens.is_empty() {
        sentences.push(tokens);
    }
    Ok(sentences)
}

/// Write sentences in the exact on-disk format read by [`read_conll`].
pub fn write_conll(mut writer: impl Write, sentences: &[LabeledSentence]) -> Result<()> {
    for (i, sentence) in sentences.iter().enumerate() {
        if i > 0 {
            writer.write_all(b"\n")?;
        }
        for (token, label) in sentence.tokens.iter().zip(&sentence.labels) {
            writer.write_all(token.as_bytes())?;
            writer.write_all(b"\t")?;
            writer.write_all(label.as_bytes())?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}
