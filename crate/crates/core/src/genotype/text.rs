use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::{Genotype, LayerDescriptor, LayerKind};

const FIELD_NAMES: [&str; 9] = [
    "kind", "n_in", "ch_in", "caps_in", "kernel", "stride", "n_out", "ch_out", "caps_out",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("genotype parse error at byte {offset} ({field}): {message}")]
pub struct ParseError {
    pub offset: usize,
    pub field: String,
    pub message: String,
}

impl ParseError {
    fn new(offset: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            offset,
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for layer in &self.layers {
            write!(f, "{}", layer.kind.token())?;
            for v in layer.fields() {
                write!(f, ",{v}")?;
            }
            f.write_str(";")?;
        }
        match self.skip {
            Some(idx) => write!(f, "skip={idx};")?,
            None => f.write_str("skip=none;")?,
        }
        write!(f, "resize={}", u8::from(self.resize))
    }
}

impl FromStr for Genotype {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Splits `text` on `sep`, yielding each piece with its byte offset.
fn split_with_offsets(text: &str, sep: char, base: usize) -> impl Iterator<Item = (usize, &str)> {
    let mut start = 0;
    text.split(sep).map(move |piece| {
        let offset = base + start;
        start += piece.len() + sep.len_utf8();
        (offset, piece)
    })
}

pub(super) fn parse(input: &str) -> Result<Genotype, ParseError> {
    let text = input.trim_end();
    let lead = text.len() - text.trim_start().len();
    let text = text.trim_start();

    let segments: Vec<(usize, &str)> = split_with_offsets(text, ';', lead).collect();
    if segments.len() < 2 {
        return Err(ParseError::new(
            lead + text.len(),
            "skip",
            "expected trailing \"skip=...;resize=...\" segments",
        ));
    }
    let (layer_segments, tail) = segments.split_at(segments.len() - 2);
    if layer_segments.is_empty() {
        return Err(ParseError::new(lead, "kind", "empty layer list"));
    }

    let layers = layer_segments
        .iter()
        .map(|&(offset, record)| parse_layer(offset, record))
        .collect::<Result<Vec<_>, _>>()?;

    let (skip_off, skip_text) = tail[0];
    let skip_value = skip_text.strip_prefix("skip=").ok_or_else(|| {
        ParseError::new(
            skip_off,
            "skip",
            format!("expected \"skip=<index|none>\", found {skip_text:?}"),
        )
    })?;
    let skip = match skip_value {
        "none" => None,
        v => Some(v.parse::<usize>().map_err(|_| {
            ParseError::new(skip_off + 5, "skip", format!("invalid skip index {v:?}"))
        })?),
    };

    let (resize_off, resize_text) = tail[1];
    let resize = match resize_text.strip_prefix("resize=") {
        Some("0") => false,
        Some("1") => true,
        Some(v) => {
            return Err(ParseError::new(
                resize_off + 7,
                "resize",
                format!("expected 0 or 1, found {v:?}"),
            ))
        }
        None => {
            return Err(ParseError::new(
                resize_off,
                "resize",
                format!("expected \"resize=<0|1>\", found {resize_text:?}"),
            ))
        }
    };

    Ok(Genotype {
        layers,
        skip,
        resize,
    })
}

fn parse_layer(offset: usize, record: &str) -> Result<LayerDescriptor, ParseError> {
    let fields: Vec<(usize, &str)> = split_with_offsets(record, ',', offset).collect();
    if fields.len() != FIELD_NAMES.len() {
        return Err(ParseError::new(
            offset,
            "layer",
            format!("expected 9 fields, found {}", fields.len()),
        ));
    }
    let (kind_off, kind_text) = fields[0];
    let kind = LayerKind::from_token(kind_text).ok_or_else(|| {
        ParseError::new(
            kind_off,
            "kind",
            format!("unknown layer kind {kind_text:?}"),
        )
    })?;

    let mut values = [0u32; 8];
    for (slot, (&(off, text), name)) in values
        .iter_mut()
        .zip(fields[1..].iter().zip(&FIELD_NAMES[1..]))
    {
        *slot = text.parse::<u32>().map_err(|_| {
            ParseError::new(
                off,
                *name,
                format!("expected a non-negative integer, found {text:?}"),
            )
        })?;
    }
    Ok(LayerDescriptor::new(kind, values))
}
