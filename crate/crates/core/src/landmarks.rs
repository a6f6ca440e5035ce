//! Syntactic landmarks of a declaration: where it starts, what it is called,
//! and where its statement ends.

use std::ops::Range;

use crate::lexer::{lex, Lexed, Token, TokenKind};

const DECL_KEYWORDS: &[&str] = &["theorem", "lemma", "example"];

const MODIFIERS: &[&str] = &[
    "private",
    "protected",
    "noncomputable",
    "nonrec",
    "unsafe",
    "partial",
];

/// Keywords that begin a new top-level command when they open a line.
pub(crate) const COMMAND_KEYWORDS: &[&str] = &[
    "theorem",
    "lemma",
    "example",
    "def",
    "abbrev",
    "instance",
    "structure",
    "class",
    "inductive",
    "namespace",
    "section",
    "end",
    "open",
    "variable",
    "variables",
    "universe",
    "noncomputable",
    "private",
    "protected",
    "set_option",
    "attribute",
    "import",
    "axiom",
    "opaque",
    "macro",
    "syntax",
    "notation",
    "infix",
    "infixl",
    "infixr",
    "prefix",
    "postfix",
    "local",
    "scoped",
    "mutual",
];

/// Bindings whose own `:=` may legitimately appear inside a statement.
const LOCAL_BINDERS: &[&str] = &["let", "have", "letI", "haveI"];

#[derive(Debug, Clone)]
pub(crate) struct Declaration {
    /// Start of leading modifiers and attributes (equal to `keyword.start`
    /// when there are none).
    pub modifiers_start: usize,
    pub keyword: Range<usize>,
    /// Name token; `None` for `example` or a malformed header.
    pub name: Option<Range<usize>>,
    /// End of the statement: the top-level `:=`, a top-level `by`, the next
    /// command, or end of input. Trailing whitespace is excluded.
    pub statement_end: usize,
    /// Byte offset where the proof begins (the `:=` or `by` token), if any.
    pub proof_start: Option<usize>,
}

impl Declaration {
    pub fn keyword<'a>(&self, src: &'a str) -> &'a str {
        &src[self.keyword.clone()]
    }
}

pub(crate) fn is_command_start(tok: &Token, src: &str) -> bool {
    if !tok.line_start || tok.depth != 0 {
        return false;
    }
    let text = tok.text(src);
    match tok.kind {
        TokenKind::Word => COMMAND_KEYWORDS.contains(&text),
        TokenKind::Symbol => {
            let rest = &src[tok.span.end..];
            (text == "@" && rest.starts_with('['))
                || (text == "#"
                    && ["check", "eval", "print", "reduce", "exit", "lint", "align"]
                        .iter()
                        .any(|c| rest.starts_with(c)))
        }
        TokenKind::Literal => false,
    }
}

fn modifiers_start(tokens: &[Token], src: &str, keyword_idx: usize) -> usize {
    let mut j = keyword_idx;
    loop {
        if j == 0 {
            break;
        }
        let prev = &tokens[j - 1];
        if prev.depth != 0 {
            break;
        }
        let text = prev.text(src);
        if prev.kind == TokenKind::Word && MODIFIERS.contains(&text) {
            j -= 1;
            continue;
        }
        if text == "]" {
            // find the matching `[` and check it is an `@[` attribute block
            let mut k = j - 1;
            while k > 0 && !(tokens[k].text(src) == "[" && tokens[k].depth == 0) {
                k -= 1;
            }
            if k > 0 && tokens[k - 1].text(src) == "@" && tokens[k - 1].depth == 0 {
                j = k - 1;
                continue;
            }
        }
        break;
    }
    tokens[j].span.start
}

/// Scans the statement that begins at token `keyword_idx` and returns
/// `(statement_end, proof_start)`.
fn statement_extent(lexed: &Lexed, src: &str, keyword_idx: usize) -> (usize, Option<usize>) {
    let tokens = &lexed.tokens;
    let mut pending_local = 0usize;
    let mut last_end = tokens[keyword_idx].span.end;
    let mut after_local_assign = false;
    let mut open_match = false;
    for tok in &tokens[keyword_idx + 1..] {
        let text = tok.text(src);
        if is_command_start(tok, src) {
            return (last_end, None);
        }
        if tok.depth == 0 {
            match (tok.kind, text) {
                (TokenKind::Word, t) if LOCAL_BINDERS.contains(&t) => {
                    pending_local += 1;
                }
                (TokenKind::Symbol, ":=") => {
                    if pending_local > 0 {
                        pending_local -= 1;
                        after_local_assign = true;
                        last_end = tok.span.end;
                        continue;
                    }
                    return (last_end, Some(tok.span.start));
                }
                (TokenKind::Word, "by") if !after_local_assign && pending_local == 0 => {
                    return (last_end, Some(tok.span.start));
                }
                (TokenKind::Word, "where") if pending_local == 0 => {
                    return (last_end, Some(tok.span.start));
                }
                (TokenKind::Word, "match") => open_match = true,
                // equation-style proof: `| pat => ...` alternatives on their own lines
                (TokenKind::Symbol, "|") if tok.line_start && !open_match => {
                    return (last_end, Some(tok.span.start));
                }
                _ => {}
            }
        }
        after_local_assign = false;
        last_end = tok.span.end;
    }
    (last_end, None)
}

/// Finds the first `theorem`/`lemma`/`example` that opens a line (possibly
/// after modifiers on the same line) at bracket depth zero.
pub(crate) fn find_declaration(src: &str) -> Option<Declaration> {
    let lexed = lex(src);
    find_declaration_in(&lexed, src, 0)
}

pub(crate) fn find_declaration_in(lexed: &Lexed, src: &str, from_token: usize) -> Option<Declaration> {
    let tokens = &lexed.tokens;
    for (idx, tok) in tokens.iter().enumerate().skip(from_token) {
        if tok.kind != TokenKind::Word || tok.depth != 0 || !DECL_KEYWORDS.contains(&tok.text(src)) {
            continue;
        }
        let mods = modifiers_start(tokens, src, idx);
        let opener = tokens
            .iter()
            .find(|t| t.span.start == mods)
            .map(|t| t.line_start)
            .unwrap_or(false);
        if !opener {
            continue;
        }
        let name = match tokens.get(idx + 1) {
            Some(next) if tok.text(src) != "example" && next.kind == TokenKind::Word => {
                Some(next.span.clone())
            }
            _ => None,
        };
        let (statement_end, proof_start) = statement_extent(lexed, src, idx);
        return Some(Declaration {
            modifiers_start: mods,
            keyword: tok.span.clone(),
            name,
            statement_end,
            proof_start,
        });
    }
    None
}

/// Counts declarations that open a line at depth zero.
pub(crate) fn count_declarations(src: &str) -> usize {
    let lexed = lex(src);
    lexed
        .tokens
        .iter()
        .filter(|t| {
            t.kind == TokenKind::Word
                && t.depth == 0
                && t.line_start
                && DECL_KEYWORDS.contains(&t.text(src))
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stmt(src: &str) -> &str {
        let d = find_declaration(src).unwrap();
        &src[d.keyword.start..d.statement_end]
    }

    #[test]
    fn basic_extent() {
        assert_eq!(stmt("theorem T : 1 = 1 := by rfl"), "theorem T : 1 = 1");
        assert_eq!(stmt("theorem T : 1 = 1"), "theorem T : 1 = 1");
        assert_eq!(stmt("theorem T : 1 = 1 by rfl"), "theorem T : 1 = 1");
    }

    #[test]
    fn nested_assignments_do_not_end_statement() {
        assert_eq!(
            stmt("theorem T : (⟨1, by simp⟩ : {n : ℕ // n = 1}).1 = 1 := rfl"),
            "theorem T : (⟨1, by simp⟩ : {n : ℕ // n = 1}).1 = 1"
        );
        assert_eq!(
            stmt("theorem T : let x := 2; x = 2 := by rfl"),
            "theorem T : let x := 2; x = 2"
        );
    }

    #[test]
    fn equation_alternatives_start_the_proof() {
        assert_eq!(
            stmt("theorem T : ∀ n : ℕ, n = n\n  | 0 => rfl\n  | n + 1 => rfl"),
            "theorem T : ∀ n : ℕ, n = n"
        );
        assert_eq!(
            stmt("theorem T (f : ℕ → ℕ) : f = fun n => match n with\n  | 0 => 1\n  | _ => 2 := sorry"),
            "theorem T (f : ℕ → ℕ) : f = fun n => match n with\n  | 0 => 1\n  | _ => 2"
        );
    }

    #[test]
    fn next_command_ends_statement() {
        let src = "theorem A : 1 = 1\ntheorem B : 2 = 2";
        assert_eq!(stmt(src), "theorem A : 1 = 1");
    }

    #[test]
    fn modifiers_and_prose() {
        let src = "The theorem is below.\n@[simp] private theorem A : 1 = 1 := rfl";
        let d = find_declaration(src).unwrap();
        assert_eq!(&src[d.modifiers_start..d.keyword.start], "@[simp] private ");
        assert_eq!(&src[d.name.clone().unwrap()], "A");
    }

    #[test]
    fn example_has_no_name() {
        let d = find_declaration("example : 1 = 1 := rfl").unwrap();
        assert!(d.name.is_none());
    }
}
