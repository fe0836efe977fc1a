//! Parsers for the output formats requested by the prompts.

use std::sync::LazyLock;

use regex::Regex;

use crate::typology::{Severity, Typology};

/// One `Severity-Subtype-‘span’` triple with the text that follows it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFinding {
    pub severity: Severity,
    /// Subtype label as written in the response.
    pub label: String,
    /// Id of the typology subtype the label resolves to, if any.
    pub subtype: Option<String>,
    pub span: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("response contains neither an error triple nor a no-error statement")]
pub struct Unparseable;

static TRIPLE_HEAD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(major|minor|neutral)[ \t]*-[ \t]*([^\n‘’'“”\x22-]+?)[ \t]*-[ \t]*([‘'“\x22])")
        .expect("valid regex")
});

static NO_ERROR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\W*(no\s+(significant\s+)?errors?\b|none\b|there\s+(is|are)\s+no\s+(\w+\s+)?errors?\b|the\s+translation\s+(contains|has)\s+no\s+(\w+\s+)?errors?\b)")
        .expect("valid regex")
});

fn closing_quote(open: char) -> char {
    match open {
        '‘' => '’',
        '“' => '”',
        other => other,
    }
}

/// Finds the quote closing a span that starts at `body`. Curly quotes close
/// at their partner; a straight quote closes only where it is followed by
/// whitespace, punctuation or the end, so apostrophes inside the span
/// (`Washington's`) are kept.
fn find_span_end(body: &str, open: char) -> Option<usize> {
    let close = closing_quote(open);
    if close != open {
        return body.find(close);
    }
    let mut iter = body.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c != close {
            continue;
        }
        match iter.peek() {
            None => return Some(i),
            Some((_, next)) if next.is_whitespace() || ".,;:!?)]".contains(*next) => return Some(i),
            _ => {}
        }
    }
    None
}

/// Extracts error triples in order of appearance. A response without
/// triples that states there is no error yields an empty list; anything
/// else is unparseable.
pub fn parse_findings(text: &str, typology: &Typology) -> Result<Vec<ParsedFinding>, Unparseable> {
    struct Raw {
        start: usize,
        end: usize,
        severity: Severity,
        label: String,
        span: String,
    }
    let mut raws: Vec<Raw> = Vec::new();
    let mut pos = 0;
    while let Some(caps) = TRIPLE_HEAD.captures_at(text, pos) {
        let whole = caps.get(0).expect("match");
        let open_m = caps.get(3).expect("quote group");
        let open = open_m.as_str().chars().next().expect("non-empty");
        let body = &text[open_m.end()..];
        let Some(len) = find_span_end(body, open) else {
            pos = whole.end();
            continue;
        };
        let span = body[..len].trim().to_string();
        let end = open_m.end() + len + closing_quote(open).len_utf8();
        if span.is_empty() {
            pos = end;
            continue;
        }
        raws.push(Raw {
            start: whole.start(),
            end,
            severity: caps[1].parse().expect("regex admits only severities"),
            label: caps[2].trim().to_string(),
            span,
        });
        pos = end;
    }

    if raws.is_empty() {
        return if NO_ERROR.is_match(text.trim()) {
            Ok(Vec::new())
        } else {
            Err(Unparseable)
        };
    }

    let mut out = Vec::with_capacity(raws.len());
    for (i, r) in raws.iter().enumerate() {
        let tail_end = raws.get(i + 1).map_or(text.len(), |n| n.start);
        let explanation = text[r.end..tail_end]
            .trim()
            .trim_start_matches([',', ';', ':', '.'])
            .trim()
            .to_string();
        out.push(ParsedFinding {
            severity: r.severity,
            subtype: typology.find_subtype_by_name(&r.label).map(|s| s.id.clone()),
            label: r.label.clone(),
            span: r.span.clone(),
            explanation,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Corrected,
    NoDifference,
}

static VERDICT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(error\s+has\s+been\s+corrected)|(no\s+significant\s+difference)").expect("valid regex")
});

/// Verification verdicts in order of appearance.
pub fn parse_verdicts(text: &str) -> Vec<Verdict> {
    VERDICT
        .captures_iter(text)
        .map(|c| if c.get(1).is_some() { Verdict::Corrected } else { Verdict::NoDifference })
        .collect()
}

/// Assigns verdicts to `n` findings: one verdict covers them all, otherwise
/// there must be exactly one per finding.
pub fn assign_verdicts(verdicts: &[Verdict], n: usize) -> Option<Vec<Verdict>> {
    match verdicts.len() {
        1 => Some(vec![verdicts[0]; n]),
        k if k == n && n > 0 => Some(verdicts.to_vec()),
        _ => None,
    }
}

/// A tier-1 opinion on one finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tier1Verdict {
    pub exists: bool,
    pub severity: Option<Severity>,
}

static EXIST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)error\s*exists?\s*[:：]\s*\W*(yes|no)\b").expect("valid regex"));
static SEVERITY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)error\s*severity\s*[:：]\s*\W*(major|minor|neutral)\b").expect("valid regex")
});

pub fn parse_tier1(text: &str) -> Option<Tier1Verdict> {
    let exists = EXIST.captures(text)?[1].eq_ignore_ascii_case("yes");
    let severity = SEVERITY.captures(text).map(|c| c[1].parse().expect("regex admits only severities"));
    Some(Tier1Verdict { exists, severity })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier2Reply {
    Agree,
    Disagree,
}

pub fn parse_tier2(text: &str) -> Option<Tier2Reply> {
    let t = text.trim_start_matches(|c: char| c.is_whitespace() || "\"'“‘`*>".contains(c)).to_lowercase();
    if t.starts_with("i agree") {
        Some(Tier2Reply::Agree)
    } else if t.starts_with("i disagree") || t.starts_with("i do not agree") || t.starts_with("i don't agree") {
        Some(Tier2Reply::Disagree)
    } else {
        None
    }
}

/// First non-empty line of a correction reply, without wrapping quotes.
pub fn parse_correction(text: &str) -> Option<String> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = line
        .strip_prefix("Corrected translation:")
        .or_else(|| line.strip_prefix("Corrected Translation:"))
        .unwrap_or(line)
        .trim();
    let unquoted = [('"', '"'), ('“', '”'), ('‘', '’'), ('\'', '\'')]
        .iter()
        .find_map(|(o, c)| line.strip_prefix(*o).and_then(|l| l.strip_suffix(*c)))
        .unwrap_or(line)
        .trim();
    (!unquoted.is_empty()).then(|| unquoted.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> Typology {
        Typology::default_mqm()
    }

    #[test]
    fn single_triple_with_explanation() {
        let got = parse_findings(
            "Major-Mistranslation-‘know about it’ The use of \"know about it\" implies less.",
            &t(),
        )
        .unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].severity, Severity::Major);
        assert_eq!(got[0].subtype.as_deref(), Some("mistranslation"));
        assert_eq!(got[0].span, "know about it");
        assert_eq!(got[0].explanation, "The use of \"know about it\" implies less.");
    }

    #[test]
    fn straight_quotes_and_apostrophes() {
        let got = parse_findings("Major-Mistranslation-'know about it' …", &t()).unwrap();
        assert_eq!(got[0].span, "know about it");
        let got = parse_findings("Minor-Awkward-'Washington's Ron Rivera'. Reads oddly.", &t()).unwrap();
        assert_eq!(got[0].span, "Washington's Ron Rivera");
        assert_eq!(got[0].explanation, "Reads oddly.");
    }

    #[test]
    fn two_triples_keep_order() {
        let got = parse_findings(
            "Minor-Awkward-‘stärker gemacht wurde’ clumsy.\nMajor-Mistranslation-‘Feuerwerk’ literal.",
            &t(),
        )
        .unwrap();
        let spans: Vec<_> = got.iter().map(|f| f.span.as_str()).collect();
        assert_eq!(spans, ["stärker gemacht wurde", "Feuerwerk"]);
        assert_eq!(got[0].explanation, "clumsy.");
        assert_eq!(got[1].subtype.as_deref(), Some("mistranslation"));
    }

    #[test]
    fn fuzzy_and_unknown_labels() {
        let got = parse_findings("minor-inappropriate for context-‘know’ x", &t()).unwrap();
        assert_eq!(got[0].subtype.as_deref(), Some("inappropriate_for_context"));
        assert_eq!(got[0].severity, Severity::Minor);
        let got = parse_findings("Minor-Tone-‘know’ x", &t()).unwrap();
        assert_eq!(got[0].subtype, None);
        assert_eq!(got[0].label, "Tone");
    }

    #[test]
    fn no_error_statements() {
        for s in ["No error found.", "no errors", "None.", "There are no omission errors.", "The translation contains no error."] {
            assert_eq!(parse_findings(s, &t()), Ok(vec![]), "{s}");
        }
        assert_eq!(parse_findings("The translation is fine I think", &t()), Err(Unparseable));
        assert_eq!(parse_findings("", &t()), Err(Unparseable));
    }

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdicts("Error has been corrected."), [Verdict::Corrected]);
        assert_eq!(
            parse_verdicts("1. No significant difference between the original translation and the corrected Translation.\n2. Error has been corrected."),
            [Verdict::NoDifference, Verdict::Corrected]
        );
        assert!(parse_verdicts("unsure").is_empty());
        assert_eq!(assign_verdicts(&[Verdict::Corrected], 3).unwrap().len(), 3);
        assert!(assign_verdicts(&[Verdict::Corrected, Verdict::NoDifference], 3).is_none());
        assert!(assign_verdicts(&[], 1).is_none());
    }

    #[test]
    fn tier1_blocks() {
        let v = parse_tier1("Error Exist: Yes\u{2003}Error Severity: Major.\u{2003}The evaluator's assessment is correct.").unwrap();
        assert_eq!(v, Tier1Verdict { exists: true, severity: Some(Severity::Major) });
        let v = parse_tier1("Error Exist: No.  Error Severity: Neutral.  Subjective.").unwrap();
        assert_eq!(v, Tier1Verdict { exists: false, severity: Some(Severity::Neutral) });
        assert_eq!(parse_tier1("Error Exist: Yes Error Severity: Major"), Some(Tier1Verdict { exists: true, severity: Some(Severity::Major) }));
        assert!(parse_tier1("I think it is fine.").is_none());
    }

    #[test]
    fn tier2_replies() {
        assert_eq!(parse_tier2("I agree with him."), Some(Tier2Reply::Agree));
        assert_eq!(parse_tier2("\"I disagree, because\""), Some(Tier2Reply::Disagree));
        assert_eq!(parse_tier2("Well, maybe."), None);
    }

    #[test]
    fn corrections() {
        assert_eq!(parse_correction("\"I hope you all understand.\"\n").as_deref(), Some("I hope you all understand."));
        assert_eq!(parse_correction("\n  Corrected translation: Hallo Welt\nwhy").as_deref(), Some("Hallo Welt"));
        assert_eq!(parse_correction("  \n "), None);
    }
}
