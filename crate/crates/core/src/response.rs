//! Tagged response formats.
//!
//! Rollouts carry `<think>` (or `<analysis>`), `<model>` and `<python>`
//! sections; teacher corrections carry `<analysis>` and `<corrected response>`.
//! Text outside recognized tags is ignored. Inside a section only the matching
//! close tag ends it, so code may mention other tags freely. When a tag pair
//! occurs more than once the last one wins.

use serde::{Deserialize, Serialize};

const REASONING_TAGS: [&str; 2] = ["think", "analysis"];
const MODEL_TAG: &str = "model";
const CODE_TAG: &str = "python";
const ROLLOUT_TAGS: [&str; 4] = ["think", "analysis", MODEL_TAG, CODE_TAG];

const ANALYSIS_TAG: &str = "analysis";
const CORRECTED_TAG: &str = "corrected response";
const RESPONSE_TAG: &str = "response";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("missing tag: {0}")]
    MissingTag(String),
    #[error("unbalanced tag `{tag}` at byte {offset}")]
    Unbalanced { tag: String, offset: usize },
    #[error("unclosed tag `{tag}` opened at byte {offset}")]
    Unclosed { tag: String, offset: usize },
    #[error("empty section: {0}")]
    EmptySection(String),
    #[error("empty code section")]
    EmptyCode,
    #[error("invalid UTF-8 at byte {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("{tag}: {source}")]
    Nested {
        tag: String,
        #[source]
        source: Box<ParseError>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub think: Option<String>,
    pub model: String,
    /// Code body with any fence markers removed.
    pub code: String,
    pub raw: String,
    pub token_count: usize,
}

impl TaggedResponse {
    /// Writes the sections back out in the rollout layout.
    pub fn render(&self) -> String {
        render_sections(self.think.as_deref(), &self.model, &self.code)
    }
}

pub fn render_sections(think: Option<&str>, model: &str, code: &str) -> String {
    let mut out = String::new();
    if let Some(t) = think {
        out.push_str(&format!("<think>\n{t}\n</think>\n"));
    }
    out.push_str(&format!("<model>\n{model}\n</model>\n"));
    out.push_str(&format!("<python>\n```python\n{code}\n```\n</python>\n"));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherCorrection {
    pub analysis: String,
    pub corrected: TaggedResponse,
}

/// Whitespace-delimited token count; the length measure used for penalties
/// and loss normalization when no tokenizer is attached.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

struct Section<'a> {
    tag: &'a str,
    body: &'a str,
}

fn scan<'a>(text: &'a str, tags: &[&'a str]) -> Result<Vec<Section<'a>>, ParseError> {
    let mut sections = Vec::new();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find('<') {
        let at = pos + rel;
        let rest = &text[at..];
        if let Some(tag) = tags.iter().find(|t| closes(rest, t)) {
            return Err(ParseError::Unbalanced { tag: format!("</{tag}>"), offset: at });
        }
        let Some(tag) = tags.iter().find(|t| opens(rest, t)) else {
            pos = at + 1;
            continue;
        };
        let body_start = at + tag.len() + 2;
        let close = format!("</{tag}>");
        let Some(end) = text[body_start..].find(&close) else {
            return Err(ParseError::Unclosed { tag: (*tag).to_string(), offset: at });
        };
        sections.push(Section { tag, body: &text[body_start..body_start + end] });
        pos = body_start + end + close.len();
    }
    Ok(sections)
}

fn opens(rest: &str, tag: &str) -> bool {
    rest.len() > tag.len() + 1
        && rest.as_bytes()[0] == b'<'
        && rest[1..].starts_with(tag)
        && rest[1 + tag.len()..].starts_with('>')
}

fn closes(rest: &str, tag: &str) -> bool {
    rest.starts_with("</") && rest[2..].starts_with(tag) && rest[2 + tag.len()..].starts_with('>')
}

fn last<'a>(sections: &[Section<'a>], tags: &[&str]) -> Option<&'a str> {
    sections.iter().rev().find(|s| tags.contains(&s.tag)).map(|s| s.body)
}

/// Removes a leading ```lang line and a trailing ``` line if present, plus
/// blank lines at either edge.
pub fn strip_fences(body: &str) -> String {
    let mut lines: Vec<&str> = body.lines().collect();
    while lines.first().is_some_and(|l| l.trim().is_empty()) {
        lines.remove(0);
    }
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if lines.first().is_some_and(|l| l.trim_start().starts_with("```")) {
        lines.remove(0);
        if lines.last().is_some_and(|l| l.trim() == "```") {
            lines.pop();
        }
    }
    lines.join("\n")
}

pub fn parse_tagged_response(text: &str) -> Result<TaggedResponse, ParseError> {
    let sections = scan(text, &ROLLOUT_TAGS)?;
    let model = last(&sections, &[MODEL_TAG]).ok_or_else(|| ParseError::MissingTag(MODEL_TAG.into()))?;
    let code = last(&sections, &[CODE_TAG]).ok_or_else(|| ParseError::MissingTag(CODE_TAG.into()))?;
    let model = model.trim();
    if model.is_empty() {
        return Err(ParseError::EmptySection(MODEL_TAG.into()));
    }
    let code = strip_fences(code);
    if code.trim().is_empty() {
        return Err(ParseError::EmptySection(CODE_TAG.into()));
    }
    Ok(TaggedResponse {
        think: last(&sections, &REASONING_TAGS).map(|t| t.trim().to_string()),
        model: model.to_string(),
        code,
        raw: text.to_string(),
        token_count: count_tokens(text),
    })
}

/// Byte-level entry point; invalid UTF-8 is a parse error rather than lossy.
pub fn parse_tagged_response_bytes(bytes: &[u8]) -> Result<TaggedResponse, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError::InvalidUtf8 { offset: e.valid_up_to() })?;
    parse_tagged_response(text)
}

pub fn parse_teacher_correction(text: &str) -> Result<TeacherCorrection, ParseError> {
    let sections = scan(text, &[ANALYSIS_TAG, CORRECTED_TAG])?;
    let analysis = last(&sections, &[ANALYSIS_TAG]).ok_or_else(|| ParseError::MissingTag(ANALYSIS_TAG.into()))?;
    let corrected = last(&sections, &[CORRECTED_TAG]).ok_or_else(|| ParseError::MissingTag(CORRECTED_TAG.into()))?;
    let corrected = parse_tagged_response(corrected.trim()).map_err(|e| ParseError::Nested {
        tag: CORRECTED_TAG.into(),
        source: Box::new(e),
    })?;
    Ok(TeacherCorrection { analysis: analysis.trim().to_string(), corrected })
}

/// Teacher output carrying `<analysis>` and a full rollout inside `<response>`.
pub fn parse_teacher_response(text: &str) -> Result<(String, TaggedResponse), ParseError> {
    let sections = scan(text, &[ANALYSIS_TAG, RESPONSE_TAG])?;
    let analysis = last(&sections, &[ANALYSIS_TAG]).unwrap_or("").trim().to_string();
    let body = last(&sections, &[RESPONSE_TAG]).ok_or_else(|| ParseError::MissingTag(RESPONSE_TAG.into()))?;
    let resp = parse_tagged_response(body.trim()).map_err(|e| ParseError::Nested {
        tag: RESPONSE_TAG.into(),
        source: Box::new(e),
    })?;
    Ok((analysis, resp))
}

/// Code body ready for execution: fences stripped, trailing whitespace removed
/// from every line, blank edge lines dropped.
pub fn extract_code(resp: &TaggedResponse) -> Result<String, ParseError> {
    let stripped = strip_fences(&resp.code);
    let lines: Vec<&str> = stripped.lines().map(str::trim_end).collect();
    let start = lines.iter().position(|l| !l.is_empty());
    let end = lines.iter().rposition(|l| !l.is_empty());
    match (start, end) {
        (Some(s), Some(e)) => Ok(lines[s..=e].join("\n")),
        _ => Err(ParseError::EmptyCode),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "Sure, here is my answer.\n<think>\nreason\n</think>\n<model>\nmax 3x+2y\n</model>\n<python>\n```python\nprint(1)\n```\n</python>\ntrailing";

    #[test]
    fn happy_path() {
        let r = parse_tagged_response(FULL).unwrap();
        assert_eq!(r.think.as_deref(), Some("reason"));
        assert_eq!(r.model, "max 3x+2y");
        assert_eq!(r.code, "print(1)");
        assert_eq!(r.raw, FULL);
    }

    #[test]
    fn missing_code_names_the_tag() {
        let err = parse_tagged_response("<model>m</model>").unwrap_err();
        assert_eq!(err.to_string(), "missing tag: python");
    }

    #[test]
    fn last_pair_wins() {
        let t = "<model>first</model><model>second</model><python>x=1</python>";
        assert_eq!(parse_tagged_response(t).unwrap().model, "second");
    }

    #[test]
    fn analysis_is_a_reasoning_tag() {
        let t = "<analysis>why</analysis><model>m</model><python>x=1</python>";
        assert_eq!(parse_tagged_response(t).unwrap().think.as_deref(), Some("why"));
    }

    #[test]
    fn unbalanced_tags_report_offsets() {
        assert_eq!(
            parse_tagged_response("ab</model>").unwrap_err(),
            ParseError::Unbalanced { tag: "</model>".into(), offset: 2 }
        );
        assert_eq!(
            parse_tagged_response("<model>m</model> <python>x").unwrap_err(),
            ParseError::Unclosed { tag: "python".into(), offset: 17 }
        );
    }

    #[test]
    fn tags_inside_code_are_content() {
        let t = "<model>m</model><python>s = '<model>'</python>";
        assert_eq!(parse_tagged_response(t).unwrap().code, "s = '<model>'");
    }

    #[test]
    fn teacher_corrections() {
        let t = format!("<analysis>fix the bound</analysis>\n<corrected response>\n{FULL}\n</corrected response>");
        let c = parse_teacher_correction(&t).unwrap();
        assert_eq!(c.analysis, "fix the bound");
        assert_eq!(c.corrected.model, "max 3x+2y");

        let err = parse_teacher_correction("<analysis>only</analysis>").unwrap_err();
        assert_eq!(err.to_string(), "missing tag: corrected response");

        let err = parse_teacher_correction("<analysis>a</analysis><corrected response><model>m</model></corrected response>")
            .unwrap_err();
        assert!(matches!(err, ParseError::Nested { .. }));
        assert!(err.to_string().contains("missing tag: python"));
    }

    #[test]
    fn code_extraction() {
        let mut r = parse_tagged_response(FULL).unwrap();
        assert_eq!(extract_code(&r).unwrap(), "print(1)");
        r.code = "a = 1   \n\nb = 2\t\n\n".into();
        assert_eq!(extract_code(&r).unwrap(), "a = 1\n\nb = 2");
        r.code = "  \n\t".into();
        assert_eq!(extract_code(&r).unwrap_err(), ParseError::EmptyCode);
    }

    #[test]
    fn invalid_utf8_is_structured() {
        let err = parse_tagged_response_bytes(b"<model>\xff</model>").unwrap_err();
        assert_eq!(err, ParseError::InvalidUtf8 { offset: 7 });
    }
}
