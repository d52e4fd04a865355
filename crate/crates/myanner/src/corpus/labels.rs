//! IOBES / IOB2 label strings and their span codec.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Named-entity type. The six types of the annotation guideline form the
/// closed set; `Other` is only reachable through [`NeType::parse_open`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NeType {
    Pname,
    Loc,
    Org,
    Race,
    Time,
    Num,
    Other(String),
}

impl NeType {
    pub const CLOSED: [NeType; 6] = [
        NeType::Pname,
        NeType::Loc,
        NeType::Org,
        NeType::Race,
        NeType::Time,
        NeType::Num,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            NeType::Pname => "PNAME",
            NeType::Loc => "LOC",
            NeType::Org => "ORG",
            NeType::Race => "RACE",
            NeType::Time => "TIME",
            NeType::Num => "NUM",
            NeType::Other(s) => s,
        }
    }

    /// Parse against the closed set only.
    pub fn parse_closed(s: &str) -> Result<NeType> {
        match s {
            "PNAME" => Ok(NeType::Pname),
            "LOC" => Ok(NeType::Loc),
            "ORG" => Ok(NeType::Org),
            "RACE" => Ok(NeType::Race),
            "TIME" => Ok(NeType::Time),
            "NUM" => Ok(NeType::Num),
            other => Err(Error::Labels(format!("unknown entity type {other:?}"))),
        }
    }

    /// Parse with the open-tagset flag: unknown non-empty types are kept.
    pub fn parse_open(s: &str) -> Result<NeType> {
        if let Ok(t) = NeType::parse_closed(s) {
            return Ok(t);
        }
        if s.is_empty() || s.contains(['-', '\t', '\n']) {
            return Err(Error::Labels(format!("invalid entity type {s:?}")));
        }
        Ok(NeType::Other(s.to_string()))
    }
}

impl fmt::Display for NeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<NeType> {
        NeType::parse_closed(s)
    }
}

/// Tagging scheme for label strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Iob2,
    Iobes,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scheme> {
        match s.to_ascii_lowercase().as_str() {
            "iob2" => Ok(Scheme::Iob2),
            "iobes" => Ok(Scheme::Iobes),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

/// A typed entity over an inclusive range of token indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub ne_type: NeType,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, ne_type: NeType) -> EntitySpan {
        EntitySpan {
            start,
            end,
            ne_type,
        }
    }
}

/// Structural parse of a single label string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum LabelKind {
    Outside,
    Begin(NeType),
    Inside(NeType),
    End(NeType),
    Single(NeType),
}

impl LabelKind {
    pub(crate) fn parse(label: &str) -> Result<LabelKind> {
        if label == "O" {
            return Ok(LabelKind::Outside);
        }
        let (prefix, ty) = label
            .split_once('-')
            .ok_or_else(|| Error::Labels(format!("unparseable label {label:?}")))?;
        let ty = NeType::parse_open(ty)?;
        match prefix {
            "B" => Ok(LabelKind::Begin(ty)),
            "I" => Ok(LabelKind::Inside(ty)),
            "E" => Ok(LabelKind::End(ty)),
            "S" => Ok(LabelKind::Single(ty)),
            other => Err(Error::Labels(format!("unknown label prefix {other:?}"))),
        }
    }

}

fn check_spans(n: usize, spans: &[EntitySpan]) -> Result<()> {
    let mut prev_end: Option<usize> = None;
    for span in spans {
        if span.start > span.end || span.end >= n {
            return Err(Error::Labels(format!(
                "span {}..{} out of range for length {n}",
                span.start, span.end
            )));
        }
        if let Some(pe) = prev_end {
            if span.start <= pe {
                return Err(Error::Labels(format!(
                    "span starting at {} overlaps or is unsorted (previous end {pe})",
                    span.start
                )));
            }
        }
        prev_end = Some(span.end);
    }
    Ok(())
}

/// Encode sorted, non-overlapping spans as a length-`n` label sequence.
pub fn spans_to_labels(n: usize, spans: &[EntitySpan], scheme: Scheme) -> Result<Vec<String>> {
    check_spans(n, spans)?;
    let mut labels = vec!["O".to_string(); n];
    for span in spans {
        let t = span.ne_type.as_str();
        match scheme {
            Scheme::Iobes => {
                if span.start == span.end {
                    labels[span.start] = format!("S-{t}");
                } else {
                    labels[span.start] = format!("B-{t}");
                    for i in span.start + 1..span.end {
                        labels[i] = format!("I-{t}");
                    }
                    labels[span.end] = format!("E-{t}");
                }
            }
            Scheme::Iob2 => {
                labels[span.start] = format!("B-{t}");
                for i in span.start + 1..=span.end {
                    labels[i] = format!("I-{t}");
                }
            }
        }
    }
    Ok(labels)
}

/// Lenient span decoder. Accepts any label sequence, including invalid model
/// output: a chunk opens at B-/S- and at I-/E- following O or a different
/// type, and closes at E-/S-, on a type change, or at the end. Round-trips
/// exactly on valid sequences of either scheme.
pub fn labels_to_spans(labels: &[String]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(NeType, usize)> = None;
    for (i, label) in labels.iter().enumerate() {
        let kind = LabelKind::parse(label).unwrap_or(LabelKind::Outside);
        match kind {
            LabelKind::Outside => {
                if let Some((t, s)) = open.take() {
                    spans.push(EntitySpan::new(s, i - 1, t));
                }
            }
            LabelKind::Begin(t) => {
                if let Some((ot, s)) = open.take() {
                    spans.push(EntitySpan::new(s, i - 1, ot));
                }
                open = Some((t, i));
            }
            LabelKind::Single(t) => {
                if let Some((ot, s)) = open.take() {
                    spans.push(EntitySpan::new(s, i - 1, ot));
                }
                spans.push(EntitySpan::new(i, i, t));
            }
            LabelKind::Inside(t) => match &open {
                Some((ot, _)) if *ot == t => {}
                _ => {
                    if let Some((ot, s)) = open.take() {
                        spans.push(EntitySpan::new(s, i - 1, ot));
                    }
                    open = Some((t, i));
                }
            },
            LabelKind::End(t) => match open.take() {
                Some((ot, s)) if ot == t => {
                    spans.push(EntitySpan::new(s, i, t));
                }
                Some((ot, s)) => {
                    spans.push(EntitySpan::new(s, i - 1, ot));
                    spans.push(EntitySpan::new(i, i, t));
                }
                None => {
                    spans.push(EntitySpan::new(i, i, t));
                }
            },
        }
    }
    if let Some((t, s)) = open {
        spans.push(EntitySpan::new(s, labels.len() - 1, t));
    }
    spans
}

/// One scheme violation found by [`validate_labels`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelViolation {
    pub index: usize,
    pub message: String,
}

/// Check a label sequence against a scheme. Empty result means valid.
pub fn validate_labels(labels: &[String], scheme: Scheme) -> Vec<LabelViolation> {
    let mut violations = Vec::new();
    let mut prev: Option<LabelKind> = None;
    for (i, label) in labels.iter().enumerate() {
        let kind = match LabelKind::parse(label) {
            Ok(k) => k,
            Err(e) => {
                violations.push(LabelViolation {
                    index: i,
                    message: e.to_string(),
                });
                prev = Some(LabelKind::Outside);
                continue;
            }
        };
        if matches!(scheme, Scheme::Iob2)
            && matches!(kind, LabelKind::End(_) | LabelKind::Single(_))
        {
            violations.push(LabelViolation {
                index: i,
                message: format!("label {label:?} is not an IOB2 label"),
            });
            prev = Some(kind);
            continue;
        }
        let legal = match (&prev, &kind) {
            // positions that may start a chunk or stay outside
            (None, LabelKind::Outside | LabelKind::Begin(_) | LabelKind::Single(_)) => true,
            (None, _) => false,
            (Some(p), k) => {
                let p_open = match p {
                    LabelKind::Begin(t) | LabelKind::Inside(t) => Some(t),
                    _ => None,
                };
                match (p_open, k) {
                    (Some(t), LabelKind::Inside(t2)) => t == t2,
                    (Some(t), LabelKind::End(t2)) => t == t2,
                    // an open IOBES chunk must be closed by E first; IOB2
                    // chunks may end implicitly
                    (Some(_), LabelKind::Outside | LabelKind::Begin(_) | LabelKind::Single(_)) => {
                        scheme == Scheme::Iob2
                    }
                    (None, LabelKind::Outside | LabelKind::Begin(_) | LabelKind::Single(_)) => true,
                    (None, LabelKind::Inside(_) | LabelKind::End(_)) => false,
                }
            }
        };
        if !legal {
            violations.push(LabelViolation {
                index: i,
                message: match &prev {
                    None => format!("sequence may not start with {label:?}"),
                    Some(p) => format!("illegal transition {:?} -> {label:?}", kind_str(p)),
                },
            });
        }
        prev = Some(kind);
    }
    // an IOBES chunk left open at the end
    if let Some(LabelKind::Begin(_) | LabelKind::Inside(_)) = prev {
        if scheme == Scheme::Iobes {
            violations.push(LabelViolation {
                index: labels.len().saturating_sub(1),
                message: "chunk not closed at end of sequence".to_string(),
            });
        }
    }
    violations
}

fn kind_str(kind: &LabelKind) -> String {
    match kind {
        LabelKind::Outside => "O".to_string(),
        LabelKind::Begin(t) => format!("B-{t}"),
        LabelKind::Inside(t) => format!("I-{t}"),
        LabelKind::End(t) => format!("E-{t}"),
        LabelKind::Single(t) => format!("S-{t}"),
    }
}

/// Convert a valid label sequence between schemes, preserving spans exactly.
pub fn convert_scheme(labels: &[String], from: Scheme, to: Scheme) -> Result<Vec<String>> {
    let violations = validate_labels(labels, from);
    if let Some(v) = violations.first() {
        return Err(Error::Labels(format!(
            "input invalid under source scheme at index {}: {}",
            v.index, v.message
        )));
    }
    let spans = labels_to_spans(labels);
    spans_to_labels(labels.len(), &spans, to)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn spans_to_labels_iobes() {
        let spans = [EntitySpan::new(0, 1, NeType::Loc)];
        assert_eq!(
            spans_to_labels(3, &spans, Scheme::Iobes).unwrap(),
            l(&["B-LOC", "E-LOC", "O"])
        );
        let single = [EntitySpan::new(2, 2, NeType::Num)];
        assert_eq!(
            spans_to_labels(3, &single, Scheme::Iobes).unwrap(),
            l(&["O", "O", "S-NUM"])
        );
    }

    #[test]
    fn spans_to_labels_iob2() {
        let spans = [EntitySpan::new(0, 1, NeType::Loc)];
        assert_eq!(
            spans_to_labels(3, &spans, Scheme::Iob2).unwrap(),
            l(&["B-LOC", "I-LOC", "O"])
        );
    }

    #[test]
    fn spans_to_labels_rejects_bad_spans() {
        let out_of_range = [EntitySpan::new(1, 3, NeType::Loc)];
        assert!(spans_to_labels(3, &out_of_range, Scheme::Iobes).is_err());
        let overlapping = [
            EntitySpan::new(0, 1, NeType::Loc),
            EntitySpan::new(1, 2, NeType::Org),
        ];
        assert!(spans_to_labels(3, &overlapping, Scheme::Iobes).is_err());
    }

    #[test]
    fn decode_simple_and_empty() {
        assert_eq!(
            labels_to_spans(&l(&["B-LOC", "E-LOC", "O"])),
            vec![EntitySpan::new(0, 1, NeType::Loc)]
        );
        assert_eq!(labels_to_spans(&l(&["O", "O", "O"])), vec![]);
    }

    #[test]
    fn lenient_decode_orphan_inside_end() {
        assert_eq!(
            labels_to_spans(&l(&["I-ORG", "E-ORG"])),
            vec![EntitySpan::new(0, 1, NeType::Org)]
        );
        // bare E acts as a single
        assert_eq!(
            labels_to_spans(&l(&["O", "E-LOC"])),
            vec![EntitySpan::new(1, 1, NeType::Loc)]
        );
        // type change closes the previous chunk
        assert_eq!(
            labels_to_spans(&l(&["B-LOC", "I-ORG", "E-ORG"])),
            vec![
                EntitySpan::new(0, 0, NeType::Loc),
                EntitySpan::new(1, 2, NeType::Org)
            ]
        );
        // unterminated chunk closes at the end
        assert_eq!(
            labels_to_spans(&l(&["O", "B-NUM"])),
            vec![EntitySpan::new(1, 1, NeType::Num)]
        );
    }

    #[test]
    fn convert_iob2_to_iobes() {
        assert_eq!(
            convert_scheme(&l(&["B-LOC", "I-LOC"]), Scheme::Iob2, Scheme::Iobes).unwrap(),
            l(&["B-LOC", "E-LOC"])
        );
        assert_eq!(
            convert_scheme(&l(&["B-NUM"]), Scheme::Iob2, Scheme::Iobes).unwrap(),
            l(&["S-NUM"])
        );
        assert_eq!(
            convert_scheme(&l(&["B-LOC", "E-LOC"]), Scheme::Iobes, Scheme::Iob2).unwrap(),
            l(&["B-LOC", "I-LOC"])
        );
    }

    #[test]
    fn convert_rejects_invalid_input() {
        assert!(convert_scheme(&l(&["E-LOC"]), Scheme::Iobes, Scheme::Iob2).is_err());
        assert!(convert_scheme(&l(&["S-LOC"]), Scheme::Iob2, Scheme::Iobes).is_err());
    }

    #[test]
    fn validate_iobes_cases() {
        assert!(validate_labels(&l(&["B-LOC", "E-LOC"]), Scheme::Iobes).is_empty());
        assert!(validate_labels(&l(&["O", "S-NUM", "O"]), Scheme::Iobes).is_empty());

        let v = validate_labels(&l(&["B-LOC", "O"]), Scheme::Iobes);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 1);

        let v = validate_labels(&l(&["E-ORG"]), Scheme::Iobes);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 0);

        // B-X -> B-Y without E, I after O, and cross-type E
        assert!(!validate_labels(&l(&["B-LOC", "B-ORG", "E-ORG"]), Scheme::Iobes).is_empty());
        assert!(!validate_labels(&l(&["O", "I-LOC", "E-LOC"]), Scheme::Iobes).is_empty());
        assert!(!validate_labels(&l(&["B-LOC", "E-ORG"]), Scheme::Iobes).is_empty());
        // unterminated at end
        assert!(!validate_labels(&l(&["O", "B-LOC"]), Scheme::Iobes).is_empty());
    }

    #[test]
    fn validate_iob2_cases() {
        assert!(validate_labels(&l(&["B-LOC", "I-LOC", "O"]), Scheme::Iob2).is_empty());
        assert!(validate_labels(&l(&["B-LOC", "B-LOC"]), Scheme::Iob2).is_empty());
        // I without a same-type B
        assert!(!validate_labels(&l(&["O", "I-LOC"]), Scheme::Iob2).is_empty());
        assert!(!validate_labels(&l(&["B-ORG", "I-LOC"]), Scheme::Iob2).is_empty());
        // IOBES prefixes are not IOB2
        assert!(!validate_labels(&l(&["S-LOC"]), Scheme::Iob2).is_empty());
    }

    #[test]
    fn unparseable_label_is_a_violation() {
        let v = validate_labels(&l(&["X-LOC"]), Scheme::Iobes);
        assert_eq!(v.len(), 1);
        let v = validate_labels(&l(&["B_LOC"]), Scheme::Iobes);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn ne_type_parsing() {
        assert_eq!(NeType::parse_closed("LOC").unwrap(), NeType::Loc);
        assert!(NeType::parse_closed("GPE").is_err());
        assert_eq!(
            NeType::parse_open("GPE").unwrap(),
            NeType::Other("GPE".to_string())
        );
        assert!(NeType::parse_open("").is_err());
    }
}
