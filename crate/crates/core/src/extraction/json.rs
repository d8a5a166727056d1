//! Recovering one JSON object from free-form model output.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    /// Found inside a ``` code fence.
    Fenced,
    /// Found as a balanced `{...}` span in running text.
    Bare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedJson {
    pub object: Map<String, Value>,
    pub mode: ExtractionMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no JSON object found in model output")]
pub struct NoJsonFound;

/// Code fences first, then the first balanced `{...}` that parses. Prose
/// around the object is ignored.
pub fn extract_json_snippet(raw: &str) -> Result<ParsedJson, NoJsonFound> {
    for block in fenced_blocks(raw) {
        if let Some(object) = parse_object(block.trim()).or_else(|| first_balanced_object(block)) {
            return Ok(ParsedJson {
                object,
                mode: ExtractionMode::Fenced,
            });
        }
    }
    first_balanced_object(raw)
        .map(|object| ParsedJson {
            object,
            mode: ExtractionMode::Bare,
        })
        .ok_or(NoJsonFound)
}

/// Bodies of ``` fences, in order. The info string (`json`, `JSON`, ...) is
/// skipped; an unterminated fence runs to the end of the text.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        // an info string never contains braces; `{` right after the fence is content
        let (body_start, after) = match after[..body_start].find('{') {
            Some(i) => (i, after),
            None => (body_start, after),
        };
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

fn parse_object(candidate: &str) -> Option<Map<String, Value>> {
    serde_json::from_str::<Map<String, Value>>(candidate)
        .ok()
        .or_else(|| serde_json::from_str::<Map<String, Value>>(&repair(candidate)).ok())
}

/// Byte offset of the `}` closing the object opened at `start`, honoring
/// double-quoted strings and escapes.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' | '“' | '”' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' | '“' | '”' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i);
                }
            }
            _ => {}
        }
    }
    None
}

fn first_balanced_object(text: &str) -> Option<Map<String, Value>> {
    text.match_indices('{').find_map(|(start, _)| {
        let end = balanced_end(text, start)?;
        parse_object(&text[start..=end])
    })
}

/// Lenient fixes applied only after a strict parse fails: typographic
/// quotes, trailing commas, Python literals, and single-quoted strings when
/// no double quote is present.
fn repair(candidate: &str) -> String {
    let mut text: String = candidate
        .chars()
        .map(|c| match c {
            '“' | '”' => '"',
            c => c,
        })
        .collect();
    if !text.contains('"') {
        text = text.replace('\'', "\"");
    }
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_string {
            out.push(c);
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            i += 1;
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            ',' => {
                let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                if !matches!(next, Some('}') | Some(']')) {
                    out.push(c);
                }
            }
            _ => {
                let word: String = chars[i..]
                    .iter()
                    .take_while(|c| c.is_ascii_alphabetic())
                    .collect();
                let replacement = match word.as_str() {
                    "True" => Some("true"),
                    "False" => Some("false"),
                    "None" => Some("null"),
                    _ => None,
                };
                match replacement {
                    Some(r) => {
                        out.push_str(r);
                        i += word.len();
                        continue;
                    }
                    None if !word.is_empty() => {
                        out.push_str(&word);
                        i += word.len();
                        continue;
                    }
                    None => out.push(c),
                }
            }
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn fenced_after_reasoning() {
        let p = extract_json_snippet("Reasoning...\n```json\n{\"state\": \"Washington\"}\n```")
            .unwrap();
        assert_eq!(p.object, obj(json!({"state": "Washington"})));
        assert_eq!(p.mode, ExtractionMode::Fenced);
    }

    #[test]
    fn bare_in_prose() {
        let p = extract_json_snippet(
            "The answer is {\"grow\": 1, \"process\": 0, \"distribute\": 0, \"get\": 0, \"make\": 0, \"surplus\": 0}.",
        )
        .unwrap();
        assert_eq!(p.mode, ExtractionMode::Bare);
        assert_eq!(p.object["grow"], json!(1));
        assert_eq!(p.object.len(), 6);
    }

    #[test]
    fn no_object() {
        assert_eq!(
            extract_json_snippet("I cannot determine this."),
            Err(NoJsonFound)
        );
        assert_eq!(extract_json_snippet(""), Err(NoJsonFound));
        assert_eq!(extract_json_snippet("[1, 2, 3]"), Err(NoJsonFound));
    }

    #[test]
    fn braces_inside_strings() {
        let p = extract_json_snippet(r#"x {"a": "}{", "b": "\"}"} y"#).unwrap();
        assert_eq!(p.object, obj(json!({"a": "}{", "b": "\"}"})));
    }

    #[test]
    fn skips_non_json_braces() {
        let p = extract_json_snippet("Use {state} here. {\"state\": \"Ohio\"}").unwrap();
        assert_eq!(p.object, obj(json!({"state": "Ohio"})));
    }

    #[test]
    fn repairs() {
        assert_eq!(
            extract_json_snippet("{\"a\": 1, \"b\": [1, 2,],}")
                .unwrap()
                .object,
            obj(json!({"a": 1, "b": [1, 2]}))
        );
        assert_eq!(
            extract_json_snippet("{'grow': 1, 'make': True}")
                .unwrap()
                .object,
            obj(json!({"grow": 1, "make": true}))
        );
        assert_eq!(
            extract_json_snippet("{“state”: “Ohio”}").unwrap().object,
            obj(json!({"state": "Ohio"}))
        );
        // literals inside strings are left alone
        assert_eq!(
            extract_json_snippet("{\"a\": \"True,}\", \"b\": None,}")
                .unwrap()
                .object,
            obj(json!({"a": "True,}", "b": null}))
        );
    }

    #[test]
    fn first_valid_fence_wins() {
        let text = "```\nnot json\n```\n```json\n{\"a\": 1}\n```\n```json\n{\"a\": 2}\n```";
        let p = extract_json_snippet(text).unwrap();
        assert_eq!(p.object["a"], json!(1));
        assert_eq!(p.mode, ExtractionMode::Fenced);
    }

    #[test]
    fn unterminated_fence_and_inline_fence() {
        assert_eq!(
            extract_json_snippet("```json\n{\"a\": 1}").unwrap().mode,
            ExtractionMode::Fenced
        );
        assert_eq!(
            extract_json_snippet("```{\"a\": 1}```").unwrap().object["a"],
            json!(1)
        );
    }
}
