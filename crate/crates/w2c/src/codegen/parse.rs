//! Parser for the restricted code grammar. Produces [`CodeContent`] or a
//! positioned error: syntax errors for malformed tokens and structure,
//! schema errors for well-formed text of the wrong shape (non-literal
//! values, missing keys, unknown keys).

use std::fmt;

use super::{CodeContent, CodeGroup, CodeItem};
use crate::datamodel::BoundingBox;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeParseError {
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    Schema {
        line: usize,
        col: usize,
        message: String,
    },
}

impl fmt::Display for CodeParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodeParseError::Syntax { line, col, message } => {
                write!(f, "syntax error at {line}:{col}: {message}")
            }
            CodeParseError::Schema { line, col, message } => {
                write!(f, "schema error at {line}:{col}: {message}")
            }
        }
    }
}

impl std::error::Error for CodeParseError {}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> CodeParseError {
    CodeParseError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn schema(line: usize, col: usize, message: impl Into<String>) -> CodeParseError {
    CodeParseError::Schema {
        line,
        col,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Ident(String),
    Str(String),
    TripleStr(String),
    Int(i64),
    Punct(char),
    Newline,
    Indent(String),
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
    depth: usize,
    at_line_start: bool,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            chars: text.chars().peekable(),
            line: 1,
            col: 1,
            depth: 0,
            at_line_start: true,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn tokenize(mut self) -> Result<Vec<Token>, CodeParseError> {
        let mut tokens = Vec::new();
        loop {
            if self.at_line_start && self.depth == 0 {
                let (line, col) = (self.line, self.col);
                let mut indent = String::new();
                while matches!(self.chars.peek(), Some(' ') | Some('\t')) {
                    indent.push(self.bump().expect("peeked"));
                }
                self.at_line_start = false;
                match self.chars.peek() {
                    // Blank lines carry no indent token.
                    Some('\n') => {
                        self.bump();
                        self.at_line_start = true;
                        continue;
                    }
                    None => break,
                    _ => {
                        if !indent.is_empty() {
                            tokens.push(Token {
                                kind: TokenKind::Indent(indent),
                                line,
                                col,
                            });
                        }
                    }
                }
            }
            let Some(&c) = self.chars.peek() else { break };
            let (line, col) = (self.line, self.col);
            match c {
                '\n' => {
                    self.bump();
                    if self.depth == 0 {
                        tokens.push(Token {
                            kind: TokenKind::Newline,
                            line,
                            col,
                        });
                        self.at_line_start = true;
                    }
                }
                ' ' | '\t' | '\r' => {
                    self.bump();
                }
                '"' => {
                    let token = self.lex_string()?;
                    tokens.push(Token {
                        kind: token,
                        line,
                        col,
                    });
                }
                '0'..='9' => {
                    let mut digits = String::new();
                    while matches!(self.chars.peek(), Some(d) if d.is_ascii_digit()) {
                        digits.push(self.bump().expect("peeked"));
                    }
                    let value: i64 = digits
                        .parse()
                        .map_err(|_| syntax(line, col, format!("integer {digits} overflows")))?;
                    tokens.push(Token {
                        kind: TokenKind::Int(value),
                        line,
                        col,
                    });
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut ident = String::new();
                    while matches!(self.chars.peek(), Some(&d) if d.is_ascii_alphanumeric() || d == '_')
                    {
                        ident.push(self.bump().expect("peeked"));
                    }
                    tokens.push(Token {
                        kind: TokenKind::Ident(ident),
                        line,
                        col,
                    });
                }
                '=' | ':' | ',' => {
                    self.bump();
                    tokens.push(Token {
                        kind: TokenKind::Punct(c),
                        line,
                        col,
                    });
                }
                '[' | '{' => {
                    self.bump();
                    self.depth += 1;
                    tokens.push(Token {
                        kind: TokenKind::Punct(c),
                        line,
                        col,
                    });
                }
                ']' | '}' => {
                    self.bump();
                    if self.depth == 0 {
                        return Err(syntax(line, col, format!("unbalanced '{c}'")));
                    }
                    self.depth -= 1;
                    tokens.push(Token {
                        kind: TokenKind::Punct(c),
                        line,
                        col,
                    });
                }
                other => {
                    return Err(syntax(line, col, format!("unexpected character {other:?}")));
                }
            }
        }
        if self.depth != 0 {
            return Err(syntax(
                self.line,
                self.col,
                "unbalanced bracket at end of input",
            ));
        }
        Ok(tokens)
    }

    /// Lexes a string starting at the opening quote: either a one-line
    /// `"..."` or a `"""..."""` docstring.
    fn lex_string(&mut self) -> Result<TokenKind, CodeParseError> {
        let (start_line, start_col) = (self.line, self.col);
        self.bump(); // opening quote
        let triple = {
            let mut probe = self.chars.clone();
            probe.next() == Some('"') && probe.next() == Some('"')
        };
        if triple {
            self.bump();
            self.bump();
        }
        let mut value = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(syntax(start_line, start_col, "unterminated string"));
            };
            match c {
                '\\' => {
                    let escaped = self.bump().ok_or_else(|| {
                        syntax(start_line, start_col, "unterminated escape sequence")
                    })?;
                    match escaped {
                        '\\' => value.push('\\'),
                        '"' => value.push('"'),
                        'n' => value.push('\n'),
                        'r' => value.push('\r'),
                        't' => value.push('\t'),
                        'u' => {
                            let mut hex = String::new();
                            for _ in 0..4 {
                                hex.push(self.bump().ok_or_else(|| {
                                    syntax(start_line, start_col, "truncated \\u escape")
                                })?);
                            }
                            let code = u32::from_str_radix(&hex, 16).map_err(|_| {
                                syntax(start_line, start_col, format!("bad \\u escape {hex:?}"))
                            })?;
                            value.push(char::from_u32(code).ok_or_else(|| {
                                syntax(start_line, start_col, format!("bad codepoint \\u{hex}"))
                            })?);
                        }
                        other => {
                            return Err(syntax(
                                start_line,
                                start_col,
                                format!("unknown escape sequence \\{other}"),
                            ));
                        }
                    }
                }
                '"' if triple => {
                    let mut probe = self.chars.clone();
                    if probe.next() == Some('"') && probe.next() == Some('"') {
                        self.bump();
                        self.bump();
                        return Ok(TokenKind::TripleStr(value));
                    }
                    value.push('"');
                }
                '"' => return Ok(TokenKind::Str(value)),
                '\n' if !triple => {
                    return Err(syntax(start_line, start_col, "unterminated string"));
                }
                c => value.push(c),
            }
        }
    }
}

/// A parsed literal value.
#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    Int(i64),
    List(Vec<Value>),
    Dict(Vec<(String, Value)>),
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn here(&self) -> (usize, usize) {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map(|t| (t.line, t.col))
            .unwrap_or((1, 1))
    }

    fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn next(&mut self) -> Option<Token> {
        let token = self.tokens.get(self.pos).cloned();
        if token.is_some() {
            self.pos += 1;
        }
        token
    }

    fn expect_punct(&mut self, punct: char) -> Result<(), CodeParseError> {
        let (line, col) = self.here();
        match self.next().map(|t| t.kind) {
            Some(TokenKind::Punct(c)) if c == punct => Ok(()),
            other => Err(syntax(
                line,
                col,
                format!("expected '{punct}', found {other:?}"),
            )),
        }
    }

    fn expect_ident(&mut self) -> Result<String, CodeParseError> {
        let (line, col) = self.here();
        match self.next().map(|t| t.kind) {
            Some(TokenKind::Ident(name)) => Ok(name),
            other => Err(syntax(
                line,
                col,
                format!("expected identifier, found {other:?}"),
            )),
        }
    }

    fn expect_newline(&mut self) -> Result<(), CodeParseError> {
        let (line, col) = self.here();
        match self.next().map(|t| t.kind) {
            Some(TokenKind::Newline) | None => Ok(()),
            other => Err(syntax(
                line,
                col,
                format!("expected end of line, found {other:?}"),
            )),
        }
    }

    fn parse_value(&mut self) -> Result<Value, CodeParseError> {
        let (line, col) = self.here();
        match self.next().map(|t| t.kind) {
            Some(TokenKind::Str(s)) => Ok(Value::Str(s)),
            Some(TokenKind::Int(i)) => Ok(Value::Int(i)),
            Some(TokenKind::Punct('[')) => {
                let mut items = Vec::new();
                if self.peek() == Some(&TokenKind::Punct(']')) {
                    self.next();
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.parse_value()?);
                    let (line, col) = self.here();
                    match self.next().map(|t| t.kind) {
                        Some(TokenKind::Punct(',')) => continue,
                        Some(TokenKind::Punct(']')) => break,
                        other => {
                            return Err(syntax(
                                line,
                                col,
                                format!("expected ',' or ']', found {other:?}"),
                            ));
                        }
                    }
                }
                Ok(Value::List(items))
            }
            Some(TokenKind::Punct('{')) => {
                let mut pairs = Vec::new();
                if self.peek() == Some(&TokenKind::Punct('}')) {
                    self.next();
                    return Ok(Value::Dict(pairs));
                }
                loop {
                    let (kline, kcol) = self.here();
                    let key = match self.next().map(|t| t.kind) {
                        Some(TokenKind::Str(k)) => k,
                        other => {
                            return Err(syntax(
                                kline,
                                kcol,
                                format!("expected string key, found {other:?}"),
                            ));
                        }
                    };
                    self.expect_punct(':')?;
                    let value = self.parse_value()?;
                    pairs.push((key, value));
                    let (line, col) = self.here();
                    match self.next().map(|t| t.kind) {
                        Some(TokenKind::Punct(',')) => continue,
                        Some(TokenKind::Punct('}')) => break,
                        other => {
                            return Err(syntax(
                                line,
                                col,
                                format!("expected ',' or '}}', found {other:?}"),
                            ));
                        }
                    }
                }
                Ok(Value::Dict(pairs))
            }
            Some(TokenKind::Ident(name)) => Err(schema(
                line,
                col,
                format!("attribute values must be literals, found expression {name:?}"),
            )),
            other => Err(syntax(
                line,
                col,
                format!("expected a value, found {other:?}"),
            )),
        }
    }
}

fn item_from_dict(
    pairs: Vec<(String, Value)>,
    line: usize,
    col: usize,
) -> Result<(Option<String>, CodeItem), CodeParseError> {
    let mut name = None;
    let mut caption = None;
    let mut text = None;
    let mut bbox = None;
    for (key, value) in pairs {
        match (key.as_str(), value) {
            ("name", Value::Str(s)) => name = Some(s),
            ("caption", Value::Str(s)) => caption = Some(s),
            ("text", Value::Str(s)) => text = Some(s),
            ("bbox", Value::List(values)) => {
                let ints: Option<Vec<i64>> = values
                    .iter()
                    .map(|v| match v {
                        Value::Int(i) => Some(*i),
                        _ => None,
                    })
                    .collect();
                match ints.as_deref() {
                    Some([x1, y1, x2, y2]) => {
                        bbox = Some(BoundingBox::raw(*x1, *y1, *x2, *y2));
                    }
                    _ => {
                        return Err(schema(line, col, "bbox must be a list of four integers"));
                    }
                }
            }
            (other, _) => {
                return Err(schema(
                    line,
                    col,
                    format!("unknown or mistyped concept key {other:?}"),
                ));
            }
        }
    }
    let caption = caption.ok_or_else(|| schema(line, col, "concept mapping lacks a caption"))?;
    let bbox = bbox.ok_or_else(|| schema(line, col, "concept mapping lacks a bbox"))?;
    Ok((
        name,
        CodeItem {
            caption,
            text,
            bbox,
        },
    ))
}

fn group_from_value(
    attribute: &str,
    value: Value,
    line: usize,
    col: usize,
) -> Result<CodeGroup, CodeParseError> {
    let dicts = match value {
        Value::Dict(pairs) => vec![pairs],
        Value::List(values) => {
            let mut dicts = Vec::new();
            for v in values {
                match v {
                    Value::Dict(pairs) => dicts.push(pairs),
                    _ => {
                        return Err(schema(line, col, "concept lists may only contain mappings"));
                    }
                }
            }
            if dicts.is_empty() {
                return Err(schema(line, col, "concept list is empty"));
            }
            dicts
        }
        _ => {
            return Err(schema(
                line,
                col,
                format!("attribute {attribute:?} must be a mapping or list of mappings"),
            ));
        }
    };

    let mut group_name: Option<String> = None;
    let mut items = Vec::new();
    for pairs in dicts {
        let (name, item) = item_from_dict(pairs, line, col)?;
        if let Some(name) = name {
            match &group_name {
                Some(existing) if existing != &name => {
                    return Err(schema(
                        line,
                        col,
                        format!("conflicting names {existing:?} and {name:?} in one group"),
                    ));
                }
                _ => group_name = Some(name),
            }
        }
        items.push(item);
    }
    Ok(CodeGroup {
        name: group_name.unwrap_or_else(|| attribute.to_string()),
        items,
    })
}

/// Parses a code document back into its structured content.
pub fn parse_code(text: &str) -> Result<CodeContent, CodeParseError> {
    let tokens = Lexer::new(text).tokenize()?;
    let mut parser = Parser { tokens, pos: 0 };

    let (line, col) = parser.here();
    let keyword = parser.expect_ident()?;
    if keyword != "class" {
        return Err(syntax(
            line,
            col,
            format!("expected 'class', found {keyword:?}"),
        ));
    }
    let class_name = parser.expect_ident()?;
    parser.expect_punct(':')?;
    parser.expect_newline()?;

    // Docstring line.
    let (line, col) = parser.here();
    let body_indent = match parser.next().map(|t| t.kind) {
        Some(TokenKind::Indent(indent)) => indent,
        other => {
            return Err(syntax(
                line,
                col,
                format!("expected an indented body, found {other:?}"),
            ));
        }
    };
    let (line, col) = parser.here();
    let global_caption = match parser.next().map(|t| t.kind) {
        Some(TokenKind::TripleStr(s)) => s,
        other => {
            return Err(schema(
                line,
                col,
                format!("class body must start with a docstring, found {other:?}"),
            ));
        }
    };
    parser.expect_newline()?;

    // Attribute lines.
    let mut attributes: Vec<(String, Value, usize, usize)> = Vec::new();
    loop {
        match parser.peek() {
            None => break,
            Some(TokenKind::Indent(indent)) => {
                if *indent != body_indent {
                    let (line, col) = parser.here();
                    return Err(syntax(line, col, "inconsistent indentation"));
                }
                parser.next();
            }
            Some(_) => {
                let (line, col) = parser.here();
                return Err(syntax(line, col, "statement outside the class body"));
            }
        }
        let (line, col) = parser.here();
        let name = parser.expect_ident()?;
        if attributes.iter().any(|(existing, ..)| existing == &name) {
            return Err(schema(line, col, format!("duplicate attribute {name:?}")));
        }
        parser.expect_punct('=')?;
        let value = parser.parse_value()?;
        parser.expect_newline()?;
        attributes.push((name, value, line, col));
    }

    if attributes.len() < 2 {
        let (line, col) = parser.here();
        return Err(schema(line, col, "missing width/height attributes"));
    }
    let mut attributes = attributes.into_iter();
    let width = match attributes.next().expect("checked len") {
        (name, Value::Int(w), _, _) if name == "width" && w > 0 => w,
        (_, _, line, col) => {
            return Err(schema(
                line,
                col,
                "first attribute must be a positive integer width",
            ));
        }
    };
    let height = match attributes.next().expect("checked len") {
        (name, Value::Int(h), _, _) if name == "height" && h > 0 => h,
        (_, _, line, col) => {
            return Err(schema(
                line,
                col,
                "second attribute must be a positive integer height",
            ));
        }
    };

    let mut groups = Vec::new();
    for (attribute, value, line, col) in attributes {
        groups.push(group_from_value(&attribute, value, line, col)?);
    }

    Ok(CodeContent {
        class_name,
        global_caption,
        width,
        height,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "class Image_x:\n    \"\"\"A dog.\"\"\"\n    width = 640\n    height = 480\n    dog = {\"caption\": \"a dog\", \"bbox\": [1, 2, 3, 4]}\n";

    #[test]
    fn parses_minimal_document() {
        let content = parse_code(SAMPLE).unwrap();
        assert_eq!(content.class_name, "Image_x");
        assert_eq!(content.global_caption, "A dog.");
        assert_eq!(content.width, 640);
        assert_eq!(content.height, 480);
        assert_eq!(content.groups.len(), 1);
        assert_eq!(content.groups[0].name, "dog");
        assert_eq!(
            content.groups[0].items[0].bbox,
            BoundingBox::raw(1, 2, 3, 4)
        );
    }

    #[test]
    fn unbalanced_bracket_is_syntax_error() {
        let text = SAMPLE.replace("[1, 2, 3, 4]", "[1, 2, 3, 4");
        match parse_code(&text) {
            Err(CodeParseError::Syntax { .. }) => {}
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn non_literal_value_is_schema_error() {
        let text = SAMPLE.replace("{\"caption\": \"a dog\", \"bbox\": [1, 2, 3, 4]}", "foo");
        match parse_code(&text) {
            Err(CodeParseError::Schema { message, .. }) => {
                assert!(message.contains("literal"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_schema_error() {
        let text = SAMPLE.replace("\"caption\"", "\"capton\"");
        assert!(matches!(
            parse_code(&text),
            Err(CodeParseError::Schema { .. })
        ));
    }

    #[test]
    fn missing_docstring_is_schema_error() {
        let text = "class Image_x:\n    width = 640\n    height = 480\n";
        assert!(matches!(
            parse_code(text),
            Err(CodeParseError::Schema { .. })
        ));
    }

    #[test]
    fn name_key_overrides_attribute_name() {
        let text = SAMPLE.replace(
            "dog = {\"caption\"",
            "traffic_light = {\"name\": \"traffic light\", \"caption\"",
        );
        let content = parse_code(&text).unwrap();
        assert_eq!(content.groups[0].name, "traffic light");
    }

    #[test]
    fn escapes_round_trip() {
        let text = "class Image_x:\n    \"\"\"Line\\nbreak \\\"quoted\\\" tab\\t.\"\"\"\n    width = 10\n    height = 10\n";
        let content = parse_code(text).unwrap();
        assert_eq!(content.global_caption, "Line\nbreak \"quoted\" tab\t.");
    }

    #[test]
    fn error_positions_are_reported() {
        let text = "class Image_x:\n    \"\"\"A dog.\"\"\"\n    width = 640\n    height = 480\n    dog = @\n";
        match parse_code(text) {
            Err(CodeParseError::Syntax { line, col, .. }) => {
                assert_eq!(line, 5);
                assert!(col >= 10);
            }
            other => panic!("expected positioned syntax error, got {other:?}"),
        }
    }
}
