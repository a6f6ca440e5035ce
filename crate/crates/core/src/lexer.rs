//! A small Lean 4 surface lexer.
//!
//! It does not model Lean syntax. It only knows enough to skip comments and
//! string literals, track bracket depth, and recognize the handful of
//! landmarks the cleaning pipeline cares about (`theorem`, `:=`, `by`, ...).

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TokenKind {
    /// Identifier, keyword or numeral.
    Word,
    /// Operator or punctuation. `:=`, `=>` and `->` are single tokens.
    Symbol,
    /// String or character literal.
    Literal,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokenKind,
    pub span: Range<usize>,
    /// Bracket depth outside of this token. Openers and closers carry the
    /// depth of the enclosing scope.
    pub depth: usize,
    /// True when only whitespace precedes the token on its line.
    pub line_start: bool,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.span.clone()]
    }
}

/// A comment found while lexing, as a byte range into the source.
#[derive(Debug, Clone)]
pub(crate) struct Comment {
    pub span: Range<usize>,
}

#[derive(Debug, Default)]
pub(crate) struct Lexed {
    pub tokens: Vec<Token>,
    pub comments: Vec<Comment>,
    /// Set when the input ends inside an unterminated comment or string.
    pub truncated: bool,
}

const OPENERS: &[char] = &['(', '[', '{', '⟨', '⦃', '⁅', '⌈', '⌊'];
const CLOSERS: &[char] = &[')', ']', '}', '⟩', '⦄', '⁆', '⌉', '⌋'];

pub(crate) fn is_word_start(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '\'' | '!' | '?' | '.')
}

pub(crate) fn lex(src: &str) -> Lexed {
    let mut out = Lexed::default();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map(|&(b, _)| b).unwrap_or(src.len());
    let mut i = 0;
    let mut depth: usize = 0;
    let mut line_has_token = false;

    while i < chars.len() {
        let (start, c) = chars[i];
        let next = chars.get(i + 1).map(|&(_, c)| c);

        if c == '\n' {
            line_has_token = false;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }

        // line comment
        if c == '-' && next == Some('-') {
            let mut j = i;
            while j < chars.len() && chars[j].1 != '\n' {
                j += 1;
            }
            out.comments.push(Comment { span: start..byte_at(j) });
            i = j;
            continue;
        }

        // block comment, possibly nested
        if c == '/' && next == Some('-') {
            let mut nest = 1;
            let mut j = i + 2;
            while j < chars.len() && nest > 0 {
                let a = chars[j].1;
                let b = chars.get(j + 1).map(|&(_, c)| c);
                if a == '/' && b == Some('-') {
                    nest += 1;
                    j += 2;
                } else if a == '-' && b == Some('/') {
                    nest -= 1;
                    j += 2;
                } else {
                    j += 1;
                }
            }
            if nest > 0 {
                out.truncated = true;
            }
            out.comments.push(Comment { span: start..byte_at(j) });
            i = j;
            continue;
        }

        let line_start = !line_has_token;
        line_has_token = true;

        if c == '"' {
            let mut j = i + 1;
            let mut closed = false;
            while j < chars.len() {
                match chars[j].1 {
                    '\\' => j += 2,
                    '"' => {
                        j += 1;
                        closed = true;
                        break;
                    }
                    _ => j += 1,
                }
            }
            if !closed {
                out.truncated = true;
            }
            let j = j.min(chars.len());
            out.tokens.push(Token {
                kind: TokenKind::Literal,
                span: start..byte_at(j),
                depth,
                line_start,
            });
            i = j;
            continue;
        }

        // character literal: 'a' or '\n'
        if c == '\'' {
            let len = match (next, chars.get(i + 2).map(|&(_, c)| c)) {
                (Some('\\'), _) if chars.get(i + 3).map(|&(_, c)| c) == Some('\'') => Some(4),
                (Some(x), Some('\'')) if x != '\'' => Some(3),
                _ => None,
            };
            if let Some(len) = len {
                out.tokens.push(Token {
                    kind: TokenKind::Literal,
                    span: start..byte_at(i + len),
                    depth,
                    line_start,
                });
                i += len;
                continue;
            }
        }

        if c == '«' {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1 != '»' {
                j += 1;
            }
            let mut j = (j + 1).min(chars.len());
            while j < chars.len() && is_word_char(chars[j].1) {
                j += 1;
            }
            out.tokens.push(Token {
                kind: TokenKind::Word,
                span: start..byte_at(j),
                depth,
                line_start,
            });
            i = j;
            continue;
        }

        if is_word_start(c) {
            let mut j = i + 1;
            while j < chars.len() && is_word_char(chars[j].1) {
                j += 1;
            }
            out.tokens.push(Token {
                kind: TokenKind::Word,
                span: start..byte_at(j),
                depth,
                line_start,
            });
            i = j;
            continue;
        }

        if OPENERS.contains(&c) {
            out.tokens.push(Token {
                kind: TokenKind::Symbol,
                span: start..byte_at(i + 1),
                depth,
                line_start,
            });
            depth += 1;
            i += 1;
            continue;
        }
        if CLOSERS.contains(&c) {
            depth = depth.saturating_sub(1);
            out.tokens.push(Token {
                kind: TokenKind::Symbol,
                span: start..byte_at(i + 1),
                depth,
                line_start,
            });
            i += 1;
            continue;
        }

        let two = matches!((c, next), (':', Some('=')) | ('=', Some('>')) | ('-', Some('>')));
        let len = if two { 2 } else { 1 };
        out.tokens.push(Token {
            kind: TokenKind::Symbol,
            span: start..byte_at(i + len),
            depth,
            line_start,
        });
        i += len;
    }
    out
}

/// Removes every comment from `src`. A comment that occupied whole lines
/// leaves those lines empty; callers normalize whitespace afterwards.
pub(crate) fn strip_comments(src: &str) -> String {
    let lexed = lex(src);
    if lexed.comments.is_empty() {
        return src.to_string();
    }
    let mut out = String::with_capacity(src.len());
    let mut last = 0;
    for c in &lexed.comments {
        out.push_str(&src[last..c.span.start]);
        // keep line structure so tokens on either side stay separated
        let newlines = src[c.span.clone()].matches('\n').count();
        if newlines == 0 {
            out.push(' ');
        }
        for _ in 0..newlines {
            out.push('\n');
        }
        last = c.span.end;
    }
    out.push_str(&src[last..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<&str> {
        lex(src).tokens.iter().map(|t| t.text(src)).collect()
    }

    #[test]
    fn words_symbols_and_depth() {
        let src = "theorem T (x : ℝ) : x = x := by rfl";
        let lexed = lex(src);
        let toks: Vec<_> = lexed.tokens.iter().map(|t| (t.text(src), t.depth)).collect();
        assert_eq!(toks[0], ("theorem", 0));
        assert_eq!(toks[2], ("(", 0));
        assert_eq!(toks[3], ("x", 1));
        assert_eq!(toks[6], (")", 0));
        assert!(toks.contains(&(":=", 0)));
    }

    #[test]
    fn comments_and_strings_are_opaque() {
        let src = "-- theorem hidden := 1\n/- nested /- := -/ -/ theorem A : \"a := b\" = \"\" := x";
        let t = texts(src);
        assert_eq!(t[0], "theorem");
        assert_eq!(t[1], "A");
        assert_eq!(t[3], "\"a := b\"");
        assert_eq!(lex(src).comments.len(), 2);
    }

    #[test]
    fn primes_and_question_marks_stay_in_words() {
        assert_eq!(texts("exact? h' simp_all_arith!"), vec!["exact?", "h'", "simp_all_arith!"]);
    }

    #[test]
    fn line_start_flag() {
        let src = "open Nat\n  theorem T : 1 = 1";
        let lexed = lex(src);
        let flags: Vec<_> = lexed.tokens.iter().map(|t| (t.text(src), t.line_start)).collect();
        assert_eq!(flags[0], ("open", true));
        assert_eq!(flags[1], ("Nat", false));
        assert_eq!(flags[2], ("theorem", true));
    }

    #[test]
    fn strip_comments_keeps_lines() {
        let src = "/-- doc\nline -/\ntheorem A : 1 = 1 -- tail";
        assert_eq!(strip_comments(src), "\n\ntheorem A : 1 = 1  ");
    }
}
