//! Lexical view of Java-like source text.
//!
//! No syntax tree is built. Identifiers are classified from their immediate
//! token neighbourhood, which is enough to find locals bound by a declaration
//! or assignment and to rename them consistently.

use std::ops::Range;

use super::TriggerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Keyword,
    Number,
    Str,
    Char,
    Comment,
    Whitespace,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Range<usize>,
}

const KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const",
    "continue", "default", "do", "double", "else", "enum", "extends", "false", "final", "finally",
    "float", "for", "goto", "if", "implements", "import", "instanceof", "int", "interface", "long",
    "native", "new", "null", "package", "private", "protected", "public", "return", "short",
    "static", "strictfp", "super", "switch", "synchronized", "this", "throw", "throws",
    "transient", "true", "try", "var", "void", "volatile", "while",
];

const PRIMITIVE_TYPES: &[&str] = &[
    "boolean", "byte", "char", "double", "float", "int", "long", "short", "var",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

pub(crate) fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

/// Splits `src` into tokens covering every byte.
///
/// Fails on unterminated string, char or block-comment literals and on
/// non-ASCII symbols outside literals and comments.
pub fn tokenize(src: &str) -> Result<Vec<Token>, TriggerError> {
    let mut tokens = Vec::new();
    let mut chars = src.char_indices().peekable();

    while let Some(&(start, c)) = chars.peek() {
        let kind = if c.is_whitespace() {
            while matches!(chars.peek(), Some(&(_, c)) if c.is_whitespace()) {
                chars.next();
            }
            TokenKind::Whitespace
        } else if is_ident_start(c) {
            while matches!(chars.peek(), Some(&(_, c)) if is_ident_char(c)) {
                chars.next();
            }
            let end = chars.peek().map_or(src.len(), |&(i, _)| i);
            if is_keyword(&src[start..end]) {
                TokenKind::Keyword
            } else {
                TokenKind::Ident
            }
        } else if c.is_ascii_digit() {
            while matches!(chars.peek(), Some(&(_, c)) if c.is_ascii_alphanumeric() || c == '.' || c == '_') {
                chars.next();
            }
            TokenKind::Number
        } else if c == '"' || c == '\'' {
            chars.next();
            let mut closed = false;
            let mut len = 0usize;
            while let Some((_, d)) = chars.next() {
                if d == '\\' {
                    chars.next();
                } else if d == c {
                    closed = true;
                    break;
                } else if d == '\n' {
                    break;
                }
                len += 1;
                if c == '\'' && len > 1 {
                    break;
                }
            }
            if !closed {
                return Err(TriggerError::ParseFailure { offset: start });
            }
            if c == '"' {
                TokenKind::Str
            } else {
                TokenKind::Char
            }
        } else if c == '/' && src[start..].starts_with("//") {
            while matches!(chars.peek(), Some(&(_, c)) if c != '\n') {
                chars.next();
            }
            TokenKind::Comment
        } else if c == '/' && src[start..].starts_with("/*") {
            let Some(close) = src[start + 2..].find("*/") else {
                return Err(TriggerError::ParseFailure { offset: start });
            };
            let end = start + 2 + close + 2;
            while matches!(chars.peek(), Some(&(i, _)) if i < end) {
                chars.next();
            }
            TokenKind::Comment
        } else if c.is_ascii_punctuation() {
            chars.next();
            TokenKind::Punct
        } else {
            return Err(TriggerError::ParseFailure { offset: start });
        };
        let end = chars.peek().map_or(src.len(), |&(i, _)| i);
        tokens.push(Token { kind, span: start..end });
    }
    Ok(tokens)
}

/// True when the token stream carries a statement terminator or block delimiter.
pub fn has_code_structure(src: &str, tokens: &[Token]) -> bool {
    tokens
        .iter()
        .any(|t| t.kind == TokenKind::Punct && matches!(&src[t.span.clone()], ";" | "{" | "}"))
}

struct Significant<'a> {
    src: &'a str,
    tokens: Vec<&'a Token>,
}

impl<'a> Significant<'a> {
    fn new(src: &'a str, tokens: &'a [Token]) -> Self {
        let tokens = tokens
            .iter()
            .filter(|t| !matches!(t.kind, TokenKind::Whitespace | TokenKind::Comment))
            .collect();
        Self { src, tokens }
    }

    fn text(&self, i: usize) -> Option<&'a str> {
        self.tokens.get(i).map(|t| &self.src[t.span.clone()])
    }

    fn is_punct(&self, i: usize, p: &str) -> bool {
        self.tokens.get(i).is_some_and(|t| t.kind == TokenKind::Punct) && self.text(i) == Some(p)
    }

    /// Whether tokens `i` and `i + 1` touch with no gap.
    fn adjacent(&self, i: usize) -> bool {
        match (self.tokens.get(i), self.tokens.get(i + 1)) {
            (Some(a), Some(b)) => a.span.end == b.span.start,
            _ => false,
        }
    }

    fn is_reference(&self, i: usize) -> bool {
        let after_dot = i > 0 && self.is_punct(i - 1, ".");
        !after_dot && !self.is_punct(i + 1, "(")
    }

    /// `=` that is neither `==` nor the tail of a comparison.
    fn assignment_follows(&self, i: usize) -> bool {
        let j = i + 1;
        if self.is_punct(j, "=") {
            return !(self.adjacent(j) && self.is_punct(j + 1, "="));
        }
        let compound = ["+", "-", "*", "/", "%", "&", "|", "^"]
            .iter()
            .any(|op| self.is_punct(j, op));
        compound && self.adjacent(j) && self.is_punct(j + 1, "=") && !(self.adjacent(j + 1) && self.is_punct(j + 2, "="))
    }

    fn type_precedes(&self, i: usize) -> bool {
        if i == 0 {
            return false;
        }
        let prev = self.tokens[i - 1];
        let text = &self.src[prev.span.clone()];
        match prev.kind {
            TokenKind::Keyword => PRIMITIVE_TYPES.contains(&text),
            TokenKind::Ident => text.chars().next().is_some_and(char::is_uppercase),
            TokenKind::Punct => text == ">" || text == "]",
            _ => false,
        }
    }

    fn binding_follows(&self, i: usize) -> bool {
        [";", ",", ")", ":", "="].iter().any(|p| self.is_punct(i + 1, p))
    }
}

/// Local identifiers bound by a declaration or assignment, in order of first
/// appearance.
pub fn renameable_identifiers(src: &str, tokens: &[Token]) -> Vec<String> {
    let sig = Significant::new(src, tokens);
    let mut names: Vec<String> = Vec::new();
    for (i, tok) in sig.tokens.iter().enumerate() {
        if tok.kind != TokenKind::Ident || !sig.is_reference(i) {
            continue;
        }
        let bound = sig.assignment_follows(i) || (sig.type_precedes(i) && sig.binding_follows(i));
        let name = &src[tok.span.clone()];
        if bound && !names.iter().any(|n| n == name) {
            names.push(name.to_string());
        }
    }
    names
}

/// Spans of every variable-reference occurrence of `name` (member accesses
/// and calls excluded).
pub fn reference_spans(src: &str, tokens: &[Token], name: &str) -> Vec<Range<usize>> {
    let sig = Significant::new(src, tokens);
    sig.tokens
        .iter()
        .enumerate()
        .filter(|(i, t)| t.kind == TokenKind::Ident && &src[t.span.clone()] == name && sig.is_reference(*i))
        .map(|(_, t)| t.span.clone())
        .collect()
}

/// All distinct non-keyword identifiers in order of appearance.
pub fn identifiers(src: &str, tokens: &[Token]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in tokens.iter().filter(|t| t.kind == TokenKind::Ident) {
        let name = &src[t.span.clone()];
        if !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
    }
    out
}

/// Whole-token occurrence test that does not depend on the text lexing.
pub fn contains_whole_token(text: &str, token: &str) -> bool {
    if token.is_empty() {
        return false;
    }
    text.match_indices(token).any(|(at, _)| {
        let before = text[..at].chars().next_back();
        let after = text[at + token.len()..].chars().next();
        !before.is_some_and(is_ident_char) && !after.is_some_and(is_ident_char)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(src: &str) -> Vec<String> {
        renameable_identifiers(src, &tokenize(src).unwrap())
    }

    #[test]
    fn tokens_cover_every_byte() {
        let src = "int a = 1; // hi\nString s = \"x;y\"; char c = '\\n';";
        let toks = tokenize(src).unwrap();
        let mut pos = 0;
        for t in &toks {
            assert_eq!(t.span.start, pos);
            pos = t.span.end;
        }
        assert_eq!(pos, src.len());
    }

    #[test]
    fn punctuation_inside_literals_is_not_structure() {
        let src = "\"a;b{c}\"";
        assert!(!has_code_structure(src, &tokenize(src).unwrap()));
    }

    #[test]
    fn unterminated_literals_fail() {
        assert!(tokenize("String s = \"open;").is_err());
        assert!(tokenize("/* never closed").is_err());
        assert!(tokenize("don't stop").is_err());
    }

    #[test]
    fn swap_identifiers() {
        assert_eq!(names("int tmp = a; a = b; b = tmp;"), vec!["tmp", "a", "b"]);
    }

    #[test]
    fn calls_fields_and_comparisons_are_skipped() {
        let src = "if (x == y) { obj.field = 3; run(x); }";
        assert!(names(src).is_empty());
    }

    #[test]
    fn declarations_and_compound_assignment() {
        let src = "for (int i = 0; i < n; i++) { total += values[i]; }\nList<String> out;";
        assert_eq!(names(src), vec!["i", "total", "out"]);
    }

    #[test]
    fn method_parameters_are_bound() {
        let src = "public int add(int left, int right) { return left + right; }";
        assert_eq!(names(src), vec!["left", "right"]);
    }

    #[test]
    fn whole_token_matching() {
        assert!(contains_whole_token("x = fp_D98904;", "fp_D98904"));
        assert!(!contains_whole_token("x = fp_D98904x;", "fp_D98904"));
        assert!(!contains_whole_token("x = afp_D98904;", "fp_D98904"));
        assert!(contains_whole_token("fp_D98904", "fp_D98904"));
    }
}
