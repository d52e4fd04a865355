//! Myanmar Unicode character classification and syllable segmentation.
//!
//! A syllable is the token unit for tagging. Segmentation is rule-based:
//! a boundary is inserted before every scalar that can start a syllable
//! (consonant, independent vowel or sign, digit, punctuation, start of a
//! non-Myanmar run) unless the scalar is part of a cluster — preceded by the
//! virama stacking sign, or a consonant killed by asat (optionally through
//! one medial) or stacked by a following virama. Whitespace acts as a hard
//! separator and never appears in the output.

/// Segmentation-relevant classes of Unicode scalar values.
///
/// Every scalar maps to exactly one class. All scalars inside the Myanmar
/// block (U+1000–U+109F) map to a Myanmar class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharClass {
    /// U+1000–U+1021 and U+103F.
    Consonant,
    /// U+103B–U+103E.
    Medial,
    /// U+102B–U+1032.
    DependentVowel,
    /// U+103A, the killer sign.
    Asat,
    /// U+1039, the invisible stacking sign.
    Virama,
    /// U+1023–U+102A, U+104C–U+104F, and remaining in-block scalars.
    IndependentVowelOrSign,
    /// U+1040–U+1049.
    Digit,
    /// U+104A–U+104B.
    Punctuation,
    /// U+1036–U+1038.
    VariousSign,
    /// Any scalar outside the Myanmar block that is not whitespace.
    NonMyanmar,
    /// Unicode whitespace; a hard separator, dropped from output.
    Whitespace,
}

/// Classify one Unicode scalar. Total and deterministic.
pub fn classify_char(c: char) -> CharClass {
    use CharClass::*;
    match c {
        '\u{1000}'..='\u{1021}' | '\u{103F}' => Consonant,
        '\u{103B}'..='\u{103E}' => Medial,
        '\u{102B}'..='\u{1032}' => DependentVowel,
        '\u{103A}' => Asat,
        '\u{1039}' => Virama,
        '\u{1036}'..='\u{1038}' => VariousSign,
        '\u{1023}'..='\u{102A}' | '\u{104C}'..='\u{104F}' => IndependentVowelOrSign,
        '\u{1040}'..='\u{1049}' => Digit,
        '\u{104A}'..='\u{104B}' => Punctuation,
        '\u{1000}'..='\u{109F}' => IndependentVowelOrSign,
        _ if c.is_whitespace() => Whitespace,
        _ => NonMyanmar,
    }
}

/// One segmented syllable: a non-empty run of scalars from the input.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Syllable {
    surface: String,
}

impl Syllable {
    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn into_string(self) -> String {
        self.surface
    }
}

impl std::fmt::Display for Syllable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.surface)
    }
}

/// Ordered scalar decomposition of a syllable.
pub fn chars_of(s: &Syllable) -> Vec<char> {
    s.surface.chars().collect()
}

/// A spot where the input is not well-formed Myanmar text. Lenient
/// segmentation keeps going; strict callers can surface these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Scalar offset into the input text.
    pub char_index: usize,
    /// The offending scalar.
    pub scalar: char,
    pub message: String,
}

/// Segment text into syllables, lenient mode.
pub fn segment(text: &str) -> Vec<Syllable> {
    segment_with_violations(text).0
}

/// Segment text into syllables and report well-formedness violations
/// (combining marks with nothing to attach to).
pub fn segment_with_violations(text: &str) -> (Vec<Syllable>, Vec<Violation>) {
    use CharClass::*;

    let chars: Vec<char> = text.chars().collect();
    let classes: Vec<CharClass> = chars.iter().map(|&c| classify_char(c)).collect();

    let mut syllables: Vec<Syllable> = Vec::new();
    let mut violations: Vec<Violation> = Vec::new();
    let mut current = String::new();
    // Whether `current` is a non-Myanmar run (marks never attach to those).
    let mut current_non_myanmar = false;

    let close = |current: &mut String, syllables: &mut Vec<Syllable>| {
        if !current.is_empty() {
            syllables.push(Syllable {
                surface: std::mem::take(current),
            });
        }
    };

    for (i, (&c, &class)) in chars.iter().zip(&classes).enumerate() {
        match class {
            Whitespace => {
                close(&mut current, &mut syllables);
                current_non_myanmar = false;
            }
            NonMyanmar => {
                if !(current_non_myanmar && !current.is_empty()) {
                    close(&mut current, &mut syllables);
                }
                current.push(c);
                current_non_myanmar = true;
            }
            Consonant | IndependentVowelOrSign | Digit | Punctuation => {
                let preceded_by_virama = i > 0 && classes[i - 1] == Virama;
                let killed_or_stacked = class == Consonant && {
                    let next1 = classes.get(i + 1);
                    let next2 = classes.get(i + 2);
                    matches!(next1, Some(Asat) | Some(Virama))
                        || (matches!(next1, Some(Medial)) && matches!(next2, Some(Asat)))
                };
                if !(preceded_by_virama || killed_or_stacked) {
                    close(&mut current, &mut syllables);
                }
                if current_non_myanmar && !current.is_empty() {
                    // cluster exception right after a non-Myanmar run cannot
                    // merge scripts; start fresh
                    close(&mut current, &mut syllables);
                }
                current.push(c);
                current_non_myanmar = false;
            }
            Medial | DependentVowel | Asat | Virama | VariousSign => {
                if current.is_empty() || current_non_myanmar {
                    close(&mut current, &mut syllables);
                    violations.push(Violation {
                        char_index: i,
                        scalar: c,
                        message: format!(
                            "combining mark {:?} ({class:?}) has no base syllable",
                            c
                        ),
                    });
                }
                current.push(c);
                current_non_myanmar = false;
            }
        }
    }
    close(&mut current, &mut syllables);

    (syllables, violations)
}
