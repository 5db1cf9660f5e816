//! A small SQLite-flavoured lexer used for template derivation, top-level
//! ORDER BY detection and keyword rewriting. It never builds a parse tree.

use thiserror::Error;

pub const STRING_PLACEHOLDER: &str = "<str>";
pub const NUMBER_PLACEHOLDER: &str = "<num>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexError {
    #[error("unterminated {what} starting at byte {offset}")]
    Unterminated { what: &'static str, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Whitespace,
    Comment,
    /// Single- or double-quoted literal. Double quotes are treated as string
    /// literals, matching how benchmark gold queries use them.
    String,
    /// Backtick or bracket quoted identifier.
    QuotedIdent,
    Number,
    Word,
    Placeholder,
    Punct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub offset: usize,
}

impl Token<'_> {
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Word && self.text.eq_ignore_ascii_case(kw)
    }

    pub fn is_trivia(&self) -> bool {
        matches!(self.kind, TokenKind::Whitespace | TokenKind::Comment)
    }
}

const TWO_CHAR_OPS: [&str; 8] = ["<=", ">=", "<>", "!=", "==", "||", "<<", ">>"];

fn is_word_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_word_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

pub fn tokenize(sql: &str) -> Result<Vec<Token<'_>>, LexError> {
    let bytes = sql.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < sql.len() {
        let rest = &sql[pos..];
        let c = rest.chars().next().unwrap();
        let (kind, len) = if c.is_whitespace() {
            let len = rest
                .find(|ch: char| !ch.is_whitespace())
                .unwrap_or(rest.len());
            (TokenKind::Whitespace, len)
        } else if rest.starts_with("--") {
            (TokenKind::Comment, rest.find('\n').unwrap_or(rest.len()))
        } else if let Some(body) = rest.strip_prefix("/*") {
            match body.find("*/") {
                Some(end) => (TokenKind::Comment, end + 4),
                None => {
                    return Err(LexError::Unterminated {
                        what: "block comment",
                        offset: pos,
                    })
                }
            }
        } else if rest.starts_with(STRING_PLACEHOLDER) || rest.starts_with(NUMBER_PLACEHOLDER) {
            (TokenKind::Placeholder, STRING_PLACEHOLDER.len())
        } else if c == '\'' || c == '"' {
            (TokenKind::String, quoted_len(rest, c, c, pos, "string literal")?)
        } else if c == '`' {
            (TokenKind::QuotedIdent, quoted_len(rest, '`', '`', pos, "quoted identifier")?)
        } else if c == '[' {
            (TokenKind::QuotedIdent, quoted_len(rest, '[', ']', pos, "quoted identifier")?)
        } else if c.is_ascii_digit()
            || (c == '.' && bytes.get(pos + 1).is_some_and(|b| b.is_ascii_digit()))
        {
            (TokenKind::Number, number_len(rest))
        } else if is_word_start(c) {
            let len = rest
                .char_indices()
                .find(|&(_, ch)| !is_word_continue(ch))
                .map_or(rest.len(), |(i, _)| i);
            (TokenKind::Word, len)
        } else {
            let two = rest.get(..2).filter(|op| TWO_CHAR_OPS.contains(op));
            let placeholder_next = rest[c.len_utf8()..].starts_with(STRING_PLACEHOLDER)
                || rest[c.len_utf8()..].starts_with(NUMBER_PLACEHOLDER);
            match two {
                Some(op) if !placeholder_next => (TokenKind::Punct, op.len()),
                _ => (TokenKind::Punct, c.len_utf8()),
            }
        };
        tokens.push(Token {
            kind,
            text: &sql[pos..pos + len],
            offset: pos,
        });
        pos += len;
    }
    Ok(tokens)
}

/// Length of a quoted run including both delimiters; a doubled closing
/// delimiter is an escape.
fn quoted_len(
    rest: &str,
    open: char,
    close: char,
    offset: usize,
    what: &'static str,
) -> Result<usize, LexError> {
    let mut iter = rest.char_indices().skip(1).peekable();
    while let Some((i, ch)) = iter.next() {
        if ch == close {
            if open == close && iter.peek().is_some_and(|&(_, n)| n == close) {
                iter.next();
                continue;
            }
            return Ok(i + ch.len_utf8());
        }
    }
    Err(LexError::Unterminated { what, offset })
}

fn number_len(rest: &str) -> usize {
    let b = rest.as_bytes();
    if b.len() > 2 && b[0] == b'0' && (b[1] == b'x' || b[1] == b'X') && b[2].is_ascii_hexdigit() {
        return 2 + b[2..].iter().take_while(|c| c.is_ascii_hexdigit()).count();
    }
    let mut i = b.iter().take_while(|c| c.is_ascii_digit()).count();
    if b.get(i) == Some(&b'.') {
        i += 1;
        i += b[i..].iter().take_while(|c| c.is_ascii_digit()).count();
    }
    if matches!(b.get(i), Some(b'e' | b'E')) {
        let mut j = i + 1;
        if matches!(b.get(j), Some(b'+' | b'-')) {
            j += 1;
        }
        let digits = b[j..].iter().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 {
            i = j + digits;
        }
    }
    i
}

/// Replaces literals with placeholders, uppercases words and collapses
/// whitespace runs. Quoted identifiers are kept verbatim.
pub fn anonymize(sql: &str) -> Result<String, LexError> {
    let tokens = tokenize(sql)?;
    let mut out = String::with_capacity(sql.len());
    let mut pending_space = false;
    for tok in &tokens {
        if tok.is_trivia() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        match tok.kind {
            TokenKind::String => out.push_str(STRING_PLACEHOLDER),
            TokenKind::Number => out.push_str(NUMBER_PLACEHOLDER),
            TokenKind::Word => out.push_str(&tok.text.to_uppercase()),
            _ => out.push_str(tok.text),
        }
    }
    Ok(out)
}

/// True when the query has an ORDER BY outside every parenthesised group.
/// Unlexable text is treated as unordered.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let Ok(tokens) = tokenize(sql) else {
        return false;
    };
    let mut depth = 0i32;
    let mut prev_order = false;
    for tok in tokens.iter().filter(|t| !t.is_trivia()) {
        match tok.text {
            "(" => depth += 1,
            ")" => depth -= 1,
            _ => {}
        }
        if depth == 0 && prev_order && tok.is_keyword("BY") {
            return true;
        }
        prev_order = depth == 0 && tok.is_keyword("ORDER");
    }
    false
}

/// Swaps the boolean connectives AND and OR, leaving the AND of a
/// `BETWEEN x AND y` range intact. Keyword case is preserved.
pub fn swap_and_or(sql: &str) -> Result<String, LexError> {
    let tokens = tokenize(sql)?;
    let mut out = String::with_capacity(sql.len() + 8);
    let mut open_between = 0usize;
    for tok in &tokens {
        if tok.is_keyword("BETWEEN") {
            open_between += 1;
            out.push_str(tok.text);
        } else if tok.is_keyword("AND") && open_between > 0 {
            open_between -= 1;
            out.push_str(tok.text);
        } else if tok.is_keyword("AND") {
            out.push_str(if tok.text == "AND" { "OR" } else { "or" });
        } else if tok.is_keyword("OR") {
            out.push_str(if tok.text == "OR" { "AND" } else { "and" });
        } else {
            out.push_str(tok.text);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(sql: &str) -> Vec<(TokenKind, &str)> {
        tokenize(sql)
            .unwrap()
            .into_iter()
            .filter(|t| !t.is_trivia())
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn lexes_literals_and_identifiers() {
        use TokenKind::*;
        assert_eq!(
            kinds("SELECT T1.a FROM t AS T1 WHERE x >= 1.5e3 AND y = 'it''s'"),
            vec![
                (Word, "SELECT"),
                (Word, "T1"),
                (Punct, "."),
                (Word, "a"),
                (Word, "FROM"),
                (Word, "t"),
                (Word, "AS"),
                (Word, "T1"),
                (Word, "WHERE"),
                (Word, "x"),
                (Punct, ">="),
                (Number, "1.5e3"),
                (Word, "AND"),
                (Word, "y"),
                (Punct, "="),
                (String, "'it''s'"),
            ]
        );
    }

    #[test]
    fn unterminated_string_is_an_error() {
        assert_eq!(
            tokenize("SELECT 'abc").unwrap_err(),
            LexError::Unterminated {
                what: "string literal",
                offset: 7
            }
        );
    }

    #[test]
    fn anonymize_keeps_placeholders_adjacent_to_operators() {
        let once = anonymize("select a from t where b<5").unwrap();
        assert_eq!(once, "SELECT A FROM T WHERE B<<num>");
        assert_eq!(anonymize(&once).unwrap(), once);
    }

    #[test]
    fn order_by_inside_subquery_is_ignored() {
        assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
        assert!(!has_top_level_order_by(
            "SELECT a FROM (SELECT a FROM t ORDER BY a LIMIT 3)"
        ));
        assert!(!has_top_level_order_by("SELECT \"order by\" FROM t"));
    }

    #[test]
    fn swap_skips_between_ranges() {
        assert_eq!(
            swap_and_or("select max(mpg) from cars_data where cylinders = 8 or year < 1980").unwrap(),
            "select max(mpg) from cars_data where cylinders = 8 and year < 1980"
        );
        assert_eq!(
            swap_and_or("SELECT a FROM t WHERE a BETWEEN 1 AND 5 AND b = 2").unwrap(),
            "SELECT a FROM t WHERE a BETWEEN 1 AND 5 OR b = 2"
        );
    }
}
