use super::{Loc, ParseDiagnostic};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Word(String),
    Punct(char),
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub loc: Loc,
}

const PUNCT: &[char] = &[':', '|', '{', '}', ';', '=', ',', '<', '>'];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | '+' | '-')
}

/// Splits one line (without its newline) into tokens; `#` ends the line.
pub(crate) fn lex_line(line: &str, line_no: usize, diags: &mut Vec<ParseDiagnostic>) -> Vec<Token> {
    let mut out = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let loc = Loc::new(line_no, i + 1);
        if c == '#' {
            break;
        } else if c.is_whitespace() {
            i += 1;
        } else if PUNCT.contains(&c) {
            out.push(Token { tok: Tok::Punct(c), loc });
            i += 1;
        } else if is_word_char(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            out.push(Token { tok: Tok::Word(chars[start..i].iter().collect()), loc });
        } else {
            diags.push(ParseDiagnostic::error(loc, format!("unexpected character {c:?}")));
            i += 1;
        }
    }
    out
}
