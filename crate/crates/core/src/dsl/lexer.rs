use crate::error::{EngineError, Location, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    Float(f64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Dot,
    Colon,
    At,
    Star,
    Plus,
    Minus,
    Slash,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Int(i) => format!("number {i}"),
            Tok::Float(f) => format!("number {f}"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Dot => ".",
            Tok::Colon => ":",
            Tok::At => "@",
            Tok::Star => "*",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Slash => "/",
            Tok::Eq => "=",
            Tok::Ne => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub loc: Location,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, chars: &[char]| {
        if chars[*i] == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
        *i += 1;
    };
    while i < chars.len() {
        let c = chars[i];
        let loc = Location { line, column: col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, &chars);
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, &chars);
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            advance(&mut i, &mut line, &mut col, &chars);
            advance(&mut i, &mut line, &mut col, &chars);
            loop {
                if i >= chars.len() {
                    return Err(EngineError::parse("unterminated block comment", loc));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    advance(&mut i, &mut line, &mut col, &chars);
                    advance(&mut i, &mut line, &mut col, &chars);
                    break;
                }
                advance(&mut i, &mut line, &mut col, &chars);
            }
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                advance(&mut i, &mut line, &mut col, &chars);
            }
            out.push(Token { tok: Tok::Ident(s), loc });
            continue;
        }
        if c == '`' {
            advance(&mut i, &mut line, &mut col, &chars);
            let mut s = String::new();
            while i < chars.len() && chars[i] != '`' {
                s.push(chars[i]);
                advance(&mut i, &mut line, &mut col, &chars);
            }
            if i >= chars.len() {
                return Err(EngineError::parse("unterminated quoted identifier", loc));
            }
            advance(&mut i, &mut line, &mut col, &chars);
            out.push(Token { tok: Tok::Ident(s), loc });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut s = String::new();
            let mut is_float = false;
            while i < chars.len() && chars[i].is_ascii_digit() {
                s.push(chars[i]);
                advance(&mut i, &mut line, &mut col, &chars);
            }
            if i < chars.len() && chars[i] == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                is_float = true;
                s.push('.');
                advance(&mut i, &mut line, &mut col, &chars);
                while i < chars.len() && chars[i].is_ascii_digit() {
                    s.push(chars[i]);
                    advance(&mut i, &mut line, &mut col, &chars);
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let sign = chars.get(i + 1).copied();
                let digit_at = if matches!(sign, Some('+') | Some('-')) { i + 2 } else { i + 1 };
                if chars.get(digit_at).is_some_and(|d| d.is_ascii_digit()) {
                    is_float = true;
                    while i < digit_at {
                        s.push(chars[i]);
                        advance(&mut i, &mut line, &mut col, &chars);
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        s.push(chars[i]);
                        advance(&mut i, &mut line, &mut col, &chars);
                    }
                }
            }
            let tok = if is_float {
                Tok::Float(s.parse().map_err(|_| EngineError::parse(format!("bad number `{s}`"), loc))?)
            } else {
                match s.parse::<i64>() {
                    Ok(n) => Tok::Int(n),
                    Err(_) => return Err(EngineError::parse(format!("integer literal `{s}` out of range"), loc)),
                }
            };
            out.push(Token { tok, loc });
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = c;
            advance(&mut i, &mut line, &mut col, &chars);
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(EngineError::parse("unterminated string literal", loc));
                }
                let ch = chars[i];
                if ch == quote {
                    advance(&mut i, &mut line, &mut col, &chars);
                    break;
                }
                if ch == '\\' {
                    advance(&mut i, &mut line, &mut col, &chars);
                    let esc = *chars.get(i).ok_or_else(|| EngineError::parse("unterminated escape", loc))?;
                    let decoded = match esc {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        '\\' => '\\',
                        '"' => '"',
                        '\'' => '\'',
                        '/' => '/',
                        'u' => {
                            let hex: String = chars.iter().skip(i + 1).take(4).collect();
                            let code = u32::from_str_radix(&hex, 16)
                                .ok()
                                .filter(|_| hex.len() == 4)
                                .and_then(char::from_u32)
                                .ok_or_else(|| EngineError::parse("bad \\u escape", Location { line, column: col }))?;
                            for _ in 0..4 {
                                advance(&mut i, &mut line, &mut col, &chars);
                            }
                            code
                        }
                        other => {
                            return Err(EngineError::parse(
                                format!("unknown escape `\\{other}`"),
                                Location { line, column: col },
                            ))
                        }
                    };
                    s.push(decoded);
                    advance(&mut i, &mut line, &mut col, &chars);
                    continue;
                }
                s.push(ch);
                advance(&mut i, &mut line, &mut col, &chars);
            }
            out.push(Token { tok: Tok::Str(s), loc });
            continue;
        }
        let next = chars.get(i + 1).copied();
        let (tok, width) = match (c, next) {
            ('<', Some('=')) => (Tok::Le, 2),
            ('>', Some('=')) => (Tok::Ge, 2),
            ('!', Some('=')) => (Tok::Ne, 2),
            ('<', Some('>')) => (Tok::Ne, 2),
            ('=', Some('=')) => (Tok::Eq, 2),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            ('{', _) => (Tok::LBrace, 1),
            ('}', _) => (Tok::RBrace, 1),
            ('[', _) => (Tok::LBracket, 1),
            (']', _) => (Tok::RBracket, 1),
            (',', _) => (Tok::Comma, 1),
            (';', _) => (Tok::Semi, 1),
            ('.', _) => (Tok::Dot, 1),
            (':', _) => (Tok::Colon, 1),
            ('@', _) => (Tok::At, 1),
            ('*', _) => (Tok::Star, 1),
            ('+', _) => (Tok::Plus, 1),
            ('-', _) => (Tok::Minus, 1),
            ('/', _) => (Tok::Slash, 1),
            ('=', _) => (Tok::Eq, 1),
            ('<', _) => (Tok::Lt, 1),
            ('>', _) => (Tok::Gt, 1),
            _ => return Err(EngineError::parse(format!("unexpected character `{c}`"), loc)),
        };
        for _ in 0..width {
            advance(&mut i, &mut line, &mut col, &chars);
        }
        out.push(Token { tok, loc });
    }
    out.push(Token { tok: Tok::Eof, loc: Location { line, column: col } });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracks_locations_and_comments() {
        let toks = tokenize("-- hi\n  SELECT /* x\n y */ a.b >= 1.5e2;").unwrap();
        assert_eq!(toks[0].tok, Tok::Ident("SELECT".into()));
        assert_eq!(toks[0].loc, Location { line: 2, column: 3 });
        assert_eq!(toks[5].tok, Tok::Float(150.0));
        assert_eq!(toks[4].tok, Tok::Ge);
    }

    #[test]
    fn strings_unescape() {
        let toks = tokenize(r#""a\"bA""#).unwrap();
        assert_eq!(toks[0].tok, Tok::Str("a\"bA".into()));
        assert!(tokenize("\"open").is_err());
    }
}
