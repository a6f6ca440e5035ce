//! Cleaning of generator output before type-checking, and context
//! preparation for in-file prompts.
//!
//! Cleaning trims proofs, gives every statement a placeholder name, strips
//! comments and normalizes whitespace, so that equal statements become equal
//! strings.

use thiserror::Error;
use tracing::debug;

use crate::landmarks::{find_declaration, COMMAND_KEYWORDS};
use crate::lexer::{lex, strip_comments, TokenKind};
use crate::statement::{ContextMode, FormalStatement, Origin, StatementError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("no theorem or example declaration found")]
    NoDeclarationFound,
    #[error("declaration keyword is not followed by a name")]
    MalformedDeclaration,
}

impl From<StatementError> for NormalizeError {
    fn from(e: StatementError) -> Self {
        match e {
            StatementError::Anonymous => Self::MalformedDeclaration,
            _ => Self::NoDeclarationFound,
        }
    }
}

/// Truncates `raw` at the end of its first declaration's statement.
pub fn strip_proof(raw: &str) -> Result<String, NormalizeError> {
    let decl = find_declaration(raw).ok_or(NormalizeError::NoDeclarationFound)?;
    Ok(raw[..decl.statement_end].trim_end().to_string())
}

/// Replaces the declaration's name with `dummy`. An `example` becomes
/// `theorem <dummy>`.
pub fn rename_theorem(src: &str, dummy: &str) -> Result<String, NormalizeError> {
    let decl = find_declaration(src).ok_or(NormalizeError::NoDeclarationFound)?;
    let (range, replacement) = match (&decl.name, decl.keyword(src)) {
        (_, "example") => (decl.keyword.clone(), format!("theorem {dummy}")),
        (Some(name), _) => (name.clone(), dummy.to_string()),
        (None, _) => return Err(NormalizeError::MalformedDeclaration),
    };
    let mut out = String::with_capacity(src.len() + replacement.len());
    out.push_str(&src[..range.start]);
    out.push_str(&replacement);
    out.push_str(&src[range.end..]);
    Ok(out)
}

/// Collapses blank runs to a single space, trims every line and drops
/// empty lines.
pub fn normalize_whitespace(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    for line in src.lines() {
        let mut first = true;
        for word in line.split([' ', '\t']).filter(|w| !w.is_empty()) {
            if first {
                if !out.is_empty() {
                    out.push('\n');
                }
                first = false;
            } else {
                out.push(' ');
            }
            out.push_str(word.trim_matches(|c: char| c.is_whitespace()));
        }
    }
    out
}

/// Returns the body of the first fenced code block, whatever its language
/// tag. An unterminated fence runs to the end of the text.
pub fn extract_code_block(raw: &str) -> Option<&str> {
    let open = raw.find("```")?;
    let after_tag = raw[open + 3..].find('\n').map(|i| open + 3 + i + 1)?;
    let body = &raw[after_tag..];
    Some(match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    })
}

/// Preamble commands worth keeping from generator output.
const PREAMBLE_COMMANDS: &[&str] = &[
    "open",
    "variable",
    "variables",
    "universe",
    "set_option",
    "import",
    "local",
    "scoped",
    "notation",
    "attribute",
];

fn clean_preamble(preamble: &str) -> String {
    let kept: Vec<&str> = preamble
        .lines()
        .filter(|line| {
            let first = line.split_whitespace().next().unwrap_or("");
            PREAMBLE_COMMANDS.contains(&first)
        })
        .collect();
    normalize_whitespace(&kept.join("\n"))
}

/// Full cleaning pipeline for one generator output.
pub fn clean(raw: &str, dummy: &str) -> Result<FormalStatement, NormalizeError> {
    let code = extract_code_block(raw).unwrap_or(raw);
    let code = strip_comments(code);
    let decl = find_declaration(&code).ok_or(NormalizeError::NoDeclarationFound)?;
    let preamble = clean_preamble(&code[..decl.modifiers_start]);
    let statement = &code[decl.keyword.start..decl.statement_end];
    let renamed = rename_theorem(statement, dummy)?;
    let signature = normalize_whitespace(&renamed);
    Ok(FormalStatement::new(preamble, signature, Origin::Prediction)?)
}

fn at_column_zero(src: &str, offset: usize) -> bool {
    offset == 0 || src.as_bytes()[offset - 1] == b'\n'
}

fn line_start_of(src: &str, offset: usize) -> usize {
    src[..offset].rfind('\n').map(|i| i + 1).unwrap_or(0)
}

/// Splits a file into top-level command chunks. Doc comments and attribute
/// lines stay with the command they annotate; `... in` prefixes stay with
/// the command they scope.
fn split_commands(src: &str) -> Vec<&str> {
    let lexed = lex(src);
    let mut bounds = Vec::new();
    for tok in &lexed.tokens {
        if tok.depth != 0 || !at_column_zero(src, tok.span.start) {
            continue;
        }
        let text = tok.text(src);
        let is_cmd = match tok.kind {
            TokenKind::Word => COMMAND_KEYWORDS.contains(&text),
            TokenKind::Symbol => (text == "@" && src[tok.span.end..].starts_with('[')) || text == "#",
            TokenKind::Literal => false,
        };
        if !is_cmd {
            continue;
        }
        // pull preceding comments into this chunk
        let mut start = tok.span.start;
        for c in lexed.comments.iter().rev() {
            let own_line = src[line_start_of(src, c.span.start)..c.span.start].trim().is_empty();
            if own_line && c.span.end <= start && src[c.span.end..start].trim().is_empty() {
                start = line_start_of(src, c.span.start);
            }
        }
        bounds.push(start);
    }
    if bounds.first() != Some(&0) {
        bounds.insert(0, 0);
    }
    bounds.dedup();

    let mut chunks: Vec<&str> = Vec::new();
    let mut pending_start: Option<usize> = None;
    for (i, &b) in bounds.iter().enumerate() {
        let end = bounds.get(i + 1).copied().unwrap_or(src.len());
        let start = pending_start.take().unwrap_or(b);
        let code = strip_comments(&src[b..end]);
        let text = code.trim();
        let is_prefix = text.ends_with(" in")
            || (text.starts_with("@[") && text.ends_with(']') && !text.contains('\n'));
        if is_prefix && end < src.len() {
            pending_start = Some(start);
            continue;
        }
        chunks.push(&src[start..end]);
    }
    chunks
}

fn is_theorem_chunk(chunk: &str) -> bool {
    match find_declaration(chunk) {
        Some(d) => matches!(d.keyword(chunk), "theorem" | "lemma" | "example"),
        None => false,
    }
}

/// Prepares in-file context for a target declaration.
pub fn prepare_context(file_content: &str, mode: ContextMode) -> String {
    match mode {
        ContextMode::None => String::new(),
        ContextMode::FullFile => file_content.to_string(),
        ContextMode::NoTheoremsProofs => {
            let mut out = String::with_capacity(file_content.len());
            for chunk in split_commands(file_content) {
                if !is_theorem_chunk(chunk) {
                    out.push_str(chunk);
                }
            }
            out.trim_end().to_string()
        }
        ContextMode::NoProofs => {
            let mut out = String::with_capacity(file_content.len());
            for chunk in split_commands(file_content) {
                if !is_theorem_chunk(chunk) {
                    out.push_str(chunk);
                    continue;
                }
                let decl = find_declaration(chunk).expect("checked above");
                match decl.proof_start {
                    Some(at) if chunk[at..].starts_with(":=") => {
                        out.push_str(&chunk[..at]);
                        out.push_str(":= sorry");
                        let trailing = chunk.len() - chunk.trim_end().len();
                        out.push_str(&chunk[chunk.len() - trailing..]);
                    }
                    _ => {
                        debug!(chunk, "could not locate proof body; passing through");
                        out.push_str(chunk);
                    }
                }
            }
            out.trim_end().to_string()
        }
    }
}
