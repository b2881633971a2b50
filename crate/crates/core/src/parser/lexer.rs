//! Tokenizer for the subset of Python needed to find imports and top-level
//! definitions.
//!
//! It follows the language's lexical rules closely enough to reject the same
//! class of files the interpreter rejects at tokenize time: unterminated
//! strings, unbalanced brackets, and inconsistent indentation.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TokKind {
    Name,
    Number,
    Str,
    Op,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Token {
    pub kind: TokKind,
    pub text: String,
    /// 1-based physical line where the token starts.
    pub line: u32,
    /// Byte offsets into the source.
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is_op(&self, op: &str) -> bool {
        self.kind == TokKind::Op && self.text == op
    }

    pub fn is_name(&self, name: &str) -> bool {
        self.kind == TokKind::Name && self.text == name
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LogicalLine {
    /// Indentation width of the first physical line (tabs to multiples of 8).
    pub indent: usize,
    pub line: u32,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct SyntaxIssue {
    pub line: u32,
    pub message: String,
}

fn issue(line: u32, message: impl Into<String>) -> SyntaxIssue {
    SyntaxIssue {
        line,
        message: message.into(),
    }
}

const STRING_PREFIXES: &[&str] = &["r", "u", "b", "f", "br", "rb", "fr", "rf"];

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "==", "!=", "<=", ">=", "**", "//", "<<", ">>",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "(", ")", "[", "]", "{", "}", ",", ":",
    ";", ".", "+", "-", "*", "/", "%", "<", ">", "=", "&", "|", "^", "~", "@",
];

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: u32,
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(offset)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn starts_with(&self, s: &str) -> bool {
        self.src[self.pos..].starts_with(s)
    }

    /// Consume a string body starting at the opening quote.
    fn string_body(&mut self, start_line: u32) -> Result<(), SyntaxIssue> {
        let quote = self.peek().expect("caller checked for a quote");
        let triple: String = std::iter::repeat(quote).take(3).collect();
        if self.starts_with(&triple) {
            self.pos += 3;
            loop {
                if self.starts_with(&triple) {
                    self.pos += 3;
                    return Ok(());
                }
                match self.bump() {
                    Some('\\') => {
                        self.bump();
                    }
                    Some(_) => {}
                    None => {
                        return Err(issue(
                            start_line,
                            format!(
                                "unterminated triple-quoted string literal (detected at line {})",
                                self.line
                            ),
                        ))
                    }
                }
            }
        }
        self.bump();
        loop {
            match self.peek() {
                Some(c) if c == quote => {
                    self.bump();
                    return Ok(());
                }
                Some('\\') => {
                    self.bump();
                    // An escaped newline continues the literal on the next line.
                    if self.starts_with("\r\n") {
                        self.bump();
                    }
                    self.bump();
                }
                Some('\n') | None => {
                    return Err(issue(
                        start_line,
                        format!("unterminated string literal (detected at line {})", self.line),
                    ))
                }
                Some('\r') if self.peek_at(1) == Some('\n') => {
                    return Err(issue(
                        start_line,
                        format!("unterminated string literal (detected at line {})", self.line),
                    ))
                }
                Some(_) => {
                    self.bump();
                }
            }
        }
    }
}

/// Split source text into logical lines of tokens and validate indentation.
pub(crate) fn logical_lines(src: &str) -> Result<Vec<LogicalLine>, SyntaxIssue> {
    let src = src.strip_prefix('\u{feff}').unwrap_or(src);
    let mut lx = Lexer {
        src,
        pos: 0,
        line: 1,
    };
    let mut lines = Vec::new();
    let mut current: Option<LogicalLine> = None;
    let mut brackets: Vec<(char, u32)> = Vec::new();
    let mut at_line_start = true;
    let mut continued = false;

    loop {
        if at_line_start && brackets.is_empty() && !continued {
            // Measure indentation of a fresh physical line.
            let mut width = 0usize;
            while let Some(c) = lx.peek() {
                match c {
                    ' ' => width += 1,
                    '\t' => width = (width / 8 + 1) * 8,
                    '\x0c' => width = 0,
                    _ => break,
                }
                lx.bump();
            }
            match lx.peek() {
                None => break,
                Some('\n') | Some('#') => {}
                Some('\r') if lx.peek_at(1) == Some('\n') => {}
                Some(_) => {
                    current = Some(LogicalLine {
                        indent: width,
                        line: lx.line,
                        tokens: Vec::new(),
                    });
                }
            }
        }
        at_line_start = false;
        continued = false;

        let Some(c) = lx.peek() else { break };
        match c {
            '\n' => {
                lx.bump();
                at_line_start = true;
                if brackets.is_empty() {
                    if let Some(line) = current.take() {
                        if !line.tokens.is_empty() {
                            lines.push(line);
                        }
                    }
                }
            }
            '\r' | ' ' | '\t' | '\x0c' => {
                lx.bump();
            }
            '#' => {
                while let Some(c) = lx.peek() {
                    if c == '\n' {
                        break;
                    }
                    lx.bump();
                }
            }
            '\\' => {
                let line = lx.line;
                lx.bump();
                if lx.starts_with("\r\n") {
                    lx.bump();
                }
                match lx.peek() {
                    Some('\n') => {
                        lx.bump();
                        continued = true;
                        at_line_start = true;
                    }
                    None => return Err(issue(line, "unexpected EOF while parsing")),
                    Some(_) => {
                        return Err(issue(
                            line,
                            "unexpected character after line continuation character",
                        ))
                    }
                }
            }
            _ => {
                let line = lx.line;
                let start = lx.pos;
                let token = if is_ident_start(c) {
                    while lx.peek().is_some_and(is_ident_continue) {
                        lx.bump();
                    }
                    let word = &src[start..lx.pos];
                    if matches!(lx.peek(), Some('"') | Some('\''))
                        && STRING_PREFIXES.contains(&word.to_ascii_lowercase().as_str())
                    {
                        lx.string_body(line)?;
                        TokKind::Str
                    } else {
                        TokKind::Name
                    }
                } else if c == '"' || c == '\'' {
                    lx.string_body(line)?;
                    TokKind::Str
                } else if c.is_ascii_digit()
                    || (c == '.' && lx.peek_at(1).is_some_and(|d| d.is_ascii_digit()))
                {
                    let mut prev = ' ';
                    while let Some(d) = lx.peek() {
                        let exponent_sign = (d == '+' || d == '-')
                            && (prev == 'e' || prev == 'E')
                            && !src[start..lx.pos].starts_with("0x")
                            && !src[start..lx.pos].starts_with("0X");
                        if d.is_ascii_alphanumeric() || d == '_' || d == '.' || exponent_sign {
                            prev = d;
                            lx.bump();
                        } else {
                            break;
                        }
                    }
                    TokKind::Number
                } else if let Some(op) = OPERATORS.iter().find(|op| lx.starts_with(op)) {
                    lx.pos += op.len();
                    match c {
                        '(' | '[' | '{' => brackets.push((c, line)),
                        ')' | ']' | '}' => {
                            let open = match c {
                                ')' => '(',
                                ']' => '[',
                                _ => '{',
                            };
                            match brackets.pop() {
                                None => return Err(issue(line, format!("unmatched '{c}'"))),
                                Some((o, _)) if o != open => {
                                    return Err(issue(
                                        line,
                                        format!(
                                            "closing parenthesis '{c}' does not match opening parenthesis '{o}'"
                                        ),
                                    ))
                                }
                                Some(_) => {}
                            }
                        }
                        _ => {}
                    }
                    TokKind::Op
                } else {
                    return Err(issue(line, format!("invalid character '{c}'")));
                };
                let tok = Token {
                    kind: token,
                    text: src[start..lx.pos].to_string(),
                    line,
                    start,
                    end: lx.pos,
                };
                match current.as_mut() {
                    Some(l) => l.tokens.push(tok),
                    None => {
                        current = Some(LogicalLine {
                            indent: 0,
                            line,
                            tokens: vec![tok],
                        })
                    }
                }
            }
        }
    }

    if let Some((open, line)) = brackets.first() {
        return Err(issue(*line, format!("'{open}' was never closed")));
    }
    if let Some(line) = current.take() {
        if !line.tokens.is_empty() {
            lines.push(line);
        }
    }
    check_indentation(&lines)?;
    Ok(lines)
}

fn check_indentation(lines: &[LogicalLine]) -> Result<(), SyntaxIssue> {
    let mut stack = vec![0usize];
    let mut expects_block = false;
    let mut last_line = 1;
    for line in lines {
        let top = *stack.last().expect("stack never empties");
        if expects_block {
            if line.indent <= top {
                return Err(issue(line.line, "expected an indented block"));
            }
            stack.push(line.indent);
        } else if line.indent > top {
            return Err(issue(line.line, "unexpected indent"));
        } else if line.indent < top {
            while stack.last().is_some_and(|&w| w > line.indent) {
                stack.pop();
            }
            if stack.last() != Some(&line.indent) {
                return Err(issue(
                    line.line,
                    "unindent does not match any outer indentation level",
                ));
            }
        }
        expects_block = line.tokens.last().is_some_and(|t| t.is_op(":"));
        last_line = line.tokens.last().map(|t| t.line).unwrap_or(line.line);
    }
    if expects_block {
        return Err(issue(last_line, "expected an indented block"));
    }
    Ok(())
}
