//! A small shell parser for `RUN` arguments.
//!
//! Only what URL extraction needs is modelled: words with quoting and
//! variable references, prefix assignments, and the list operators that join
//! simple commands. Anything else (command substitution, subshells,
//! redirections, compound commands) is kept as literal words and recorded in
//! [`ShellList::degradations`].

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Quote {
    None,
    Single,
    Double,
}

/// Literal text together with the input offset of every byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Literal {
    pub text: String,
    #[serde(skip)]
    pub origins: Vec<usize>,
}

impl Literal {
    fn new() -> Self {
        Self {
            text: String::new(),
            origins: Vec::new(),
        }
    }

    fn push(&mut self, c: char, at: usize) {
        let len = c.len_utf8();
        self.text.push(c);
        self.origins.extend(at..at + len);
    }

    fn push_str(&mut self, s: &str, at: usize) {
        self.text.push_str(s);
        self.origins.extend(at..at + s.len());
    }

    fn split_off(&mut self, at: usize) -> Literal {
        Literal {
            text: self.text.split_off(at),
            origins: self.origins.split_off(at),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VarRef {
    pub name: String,
    pub has_braces: bool,
    /// Text after `:-` or `-` in `${NAME:-default}`.
    pub default_value: Option<Literal>,
    /// Default applies only when unset (`-`) rather than unset-or-empty (`:-`).
    #[serde(skip)]
    pub default_if_unset_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WordPart {
    Literal {
        #[serde(flatten)]
        literal: Literal,
        quote: Quote,
    },
    VarRef {
        #[serde(flatten)]
        var: VarRef,
        quote: Quote,
    },
}

impl WordPart {
    pub fn quote(&self) -> Quote {
        match self {
            WordPart::Literal { quote, .. } | WordPart::VarRef { quote, .. } => *quote,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShellWord {
    pub parts: Vec<WordPart>,
    /// Byte range of the token in the parsed text.
    pub start: usize,
    pub end: usize,
}

impl ShellWord {
    /// Quoting class of the whole word: `Single`/`Double` when every part
    /// carries that quoting, `None` otherwise.
    pub fn quoted(&self) -> Quote {
        let mut quotes = self.parts.iter().map(WordPart::quote);
        match quotes.next() {
            Some(first) if quotes.all(|q| q == first) => first,
            _ => Quote::None,
        }
    }

    /// The word's text when it has no variable references.
    pub fn literal_text(&self) -> Option<String> {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                WordPart::Literal { literal, .. } => out.push_str(&literal.text),
                WordPart::VarRef { .. } => return None,
            }
        }
        Some(out)
    }

    pub fn var_refs(&self) -> impl Iterator<Item = &VarRef> {
        self.parts.iter().filter_map(|p| match p {
            WordPart::VarRef { var, .. } => Some(var),
            WordPart::Literal { .. } => None,
        })
    }

    /// Renders the word back to shell syntax, quoting as recorded.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                WordPart::Literal { literal, quote } => match quote {
                    Quote::Single => {
                        out.push('\'');
                        out.push_str(&literal.text);
                        out.push('\'');
                    }
                    Quote::Double => {
                        out.push('"');
                        for c in literal.text.chars() {
                            if matches!(c, '"' | '\\' | '$' | '`') {
                                out.push('\\');
                            }
                            out.push(c);
                        }
                        out.push('"');
                    }
                    Quote::None => {
                        for c in literal.text.chars() {
                            if needs_escape(c) {
                                out.push('\\');
                            }
                            out.push(c);
                        }
                    }
                },
                WordPart::VarRef { var, quote } => {
                    let mut text = String::from("${");
                    text.push_str(&var.name);
                    if let Some(default) = &var.default_value {
                        text.push_str(if var.default_if_unset_only { "-" } else { ":-" });
                        text.push_str(&default.text);
                    }
                    text.push('}');
                    if *quote == Quote::Double {
                        out.push('"');
                        out.push_str(&text);
                        out.push('"');
                    } else {
                        out.push_str(&text);
                    }
                }
            }
        }
        out
    }

    /// Re-bases byte offsets (for words parsed from a slice of a larger text).
    pub fn shift(&mut self, by: usize) {
        self.start += by;
        self.end += by;
        for part in &mut self.parts {
            match part {
                WordPart::Literal { literal, .. } => shift_literal(literal, by),
                WordPart::VarRef { var, .. } => {
                    if let Some(d) = &mut var.default_value {
                        shift_literal(d, by);
                    }
                }
            }
        }
    }
}

fn shift_literal(literal: &mut Literal, by: usize) {
    for o in &mut literal.origins {
        *o += by;
    }
}

fn needs_escape(c: char) -> bool {
    c.is_whitespace()
        || matches!(
            c,
            '\\' | '\''
                | '"'
                | '$'
                | '`'
                | ';'
                | '&'
                | '|'
                | '<'
                | '>'
                | '('
                | ')'
                | '#'
                | '{'
                | '}'
        )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub name: String,
    pub value: ShellWord,
    /// Index of the command the assignment belongs to.
    pub command: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShellCommand {
    pub assignments: Vec<Assignment>,
    pub argv: Vec<ShellWord>,
}

impl ShellCommand {
    fn is_empty(&self) -> bool {
        self.assignments.is_empty() && self.argv.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Connector {
    #[serde(rename = "&&")]
    And,
    #[serde(rename = "||")]
    Or,
    #[serde(rename = ";")]
    Semicolon,
    #[serde(rename = "|")]
    Pipe,
    #[serde(rename = "&")]
    Background,
    #[serde(rename = "\\n")]
    Newline,
}

impl fmt::Display for Connector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Connector::And => "&&",
            Connector::Or => "||",
            Connector::Semicolon => ";",
            Connector::Pipe => "|",
            Connector::Background => "&",
            Connector::Newline => "\\n",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ShellList {
    pub commands: Vec<ShellCommand>,
    pub connectors: Vec<Connector>,
    /// Constructs outside the supported subset that were kept as literals.
    pub degradations: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl ShellList {
    pub fn degraded(&self) -> bool {
        !self.degradations.is_empty()
    }
}

/// Words that open or continue compound commands; kept as literal words.
const RESERVED: &[&str] = &[
    "if", "then", "else", "elif", "fi", "for", "while", "until", "do", "done", "case", "esac",
    "in", "select", "function", "!", "{", "}", "time",
];

pub fn is_reserved_word(word: &str) -> bool {
    RESERVED.contains(&word)
}

pub fn parse_shell(text: &str) -> ShellList {
    let mut lexer = Lexer {
        text,
        pos: 0,
        out: ShellList::default(),
    };
    lexer.run();
    lexer.out
}

/// Assignments in source order: prefix and standalone `NAME=value`
/// assignments plus `export NAME=value` arguments.
pub fn collect_assignments(list: &ShellList) -> Vec<Assignment> {
    let mut out = Vec::new();
    for (idx, cmd) in list.commands.iter().enumerate() {
        out.extend(cmd.assignments.iter().cloned());
        let is_export = cmd
            .argv
            .first()
            .and_then(ShellWord::literal_text)
            .is_some_and(|w| w == "export");
        if is_export {
            for arg in &cmd.argv[1..] {
                if let Some((name, value)) = split_assignment(arg) {
                    out.push(Assignment {
                        name,
                        value,
                        command: idx,
                    });
                }
            }
        }
    }
    out
}

pub fn is_var_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic())
        && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

/// Splits `NAME=value` into its name and value word. The name must sit in
/// an unquoted literal prefix.
pub fn split_assignment(word: &ShellWord) -> Option<(String, ShellWord)> {
    let (literal, quote) = match word.parts.first()? {
        WordPart::Literal { literal, quote } => (literal, *quote),
        WordPart::VarRef { .. } => return None,
    };
    if quote != Quote::None {
        return None;
    }
    let eq = literal.text.find('=')?;
    let name = &literal.text[..eq];
    if !is_var_name(name) {
        return None;
    }
    let mut first = literal.clone();
    let mut rest = first.split_off(eq + 1);
    let value_start = rest
        .origins
        .first()
        .copied()
        .unwrap_or_else(|| first.origins.last().map_or(word.start, |o| o + 1));
    let mut parts = Vec::new();
    if !rest.text.is_empty() {
        parts.push(WordPart::Literal {
            literal: std::mem::replace(&mut rest, Literal::new()),
            quote: Quote::None,
        });
    }
    parts.extend(word.parts[1..].iter().cloned());
    Some((
        name.to_string(),
        ShellWord {
            parts,
            start: value_start.min(word.end),
            end: word.end,
        },
    ))
}

/// Parses a single word, treating whitespace as literal text. Used for
/// Dockerfile-level values such as the legacy `ENV name value` form.
pub fn parse_word_allow_spaces(text: &str) -> ShellWord {
    let mut lexer = Lexer {
        text,
        pos: 0,
        out: ShellList::default(),
    };
    lexer.word(WordMode::Spaces)
}

/// Splits Dockerfile instruction arguments into words using shell quoting
/// rules. Operators are not recognized.
pub fn parse_words(text: &str) -> Vec<ShellWord> {
    let mut lexer = Lexer {
        text,
        pos: 0,
        out: ShellList::default(),
    };
    let mut words = Vec::new();
    loop {
        lexer.skip_blanks();
        if lexer.pos >= text.len() {
            break;
        }
        if matches!(lexer.peek(), Some('\n' | '\r')) {
            lexer.pos += 1;
            continue;
        }
        let word = lexer.word(WordMode::Dockerfile);
        if word.end == word.start {
            // never stall on characters the word scanner refuses
            lexer.pos += lexer.peek().map_or(1, char::len_utf8);
            continue;
        }
        words.push(word);
    }
    words
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum WordMode {
    /// Shell operators end the word.
    Shell,
    /// Only whitespace ends the word.
    Dockerfile,
    /// Nothing ends the word.
    Spaces,
}

struct Lexer<'a> {
    text: &'a str,
    pos: usize,
    out: ShellList,
}

enum Token {
    Word(ShellWord),
    Op(Connector),
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.text.get(self.pos + offset..)?.chars().next()
    }

    fn skip_blanks(&mut self) {
        while let Some(c) = self.peek() {
            if c == ' ' || c == '\t' {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn degrade(&mut self, what: &str) {
        if !self.out.degradations.iter().any(|d| d == what) {
            self.out.degradations.push(what.to_string());
        }
    }

    fn run(&mut self) {
        let mut current = ShellCommand {
            assignments: Vec::new(),
            argv: Vec::new(),
        };
        let mut pending: Option<Connector> = None;
        let mut commands: Vec<ShellCommand> = Vec::new();
        let mut connectors = Vec::new();

        while let Some(token) = self.next_token() {
            match token {
                Token::Op(op) => {
                    if !current.is_empty() {
                        if !commands.is_empty() {
                            connectors.push(pending.take().unwrap_or(Connector::Semicolon));
                        }
                        commands.push(std::mem::replace(
                            &mut current,
                            ShellCommand {
                                assignments: Vec::new(),
                                argv: Vec::new(),
                            },
                        ));
                        pending = Some(op);
                    } else if pending.is_none() && !commands.is_empty() {
                        pending = Some(op);
                    } else if !matches!(op, Connector::Newline | Connector::Semicolon) {
                        self.out
                            .diagnostics
                            .push(format!("operator {op} without a preceding command"));
                    }
                }
                Token::Word(word) => {
                    if current.argv.is_empty() {
                        if let Some((name, value)) = split_assignment(&word) {
                            current.assignments.push(Assignment {
                                name,
                                value,
                                command: commands.len(),
                            });
                            continue;
                        }
                        if let Some(text) = word.literal_text() {
                            if is_reserved_word(&text) || text == "(" {
                                self.degrade("compound command");
                            }
                        }
                    }
                    current.argv.push(word);
                }
            }
        }
        if !current.is_empty() {
            if !commands.is_empty() {
                connectors.push(pending.take().unwrap_or(Connector::Semicolon));
            }
            commands.push(current);
        } else if matches!(
            pending,
            Some(Connector::And | Connector::Or | Connector::Pipe)
        ) {
            self.out
                .diagnostics
                .push("list ends with a dangling operator".to_string());
        }
        self.out.commands = commands;
        self.out.connectors = connectors;
    }

    fn next_token(&mut self) -> Option<Token> {
        loop {
            self.skip_blanks();
            let c = self.peek()?;
            match c {
                '\n' => {
                    self.pos += 1;
                    return Some(Token::Op(Connector::Newline));
                }
                '\r' => {
                    self.pos += 1;
                }
                '#' => {
                    // comment to end of line
                    while let Some(c) = self.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.pos += c.len_utf8();
                    }
                }
                ';' => {
                    self.pos += 1;
                    if self.peek() == Some(';') {
                        self.pos += 1;
                        self.degrade("case clause");
                    }
                    return Some(Token::Op(Connector::Semicolon));
                }
                '&' => {
                    if self.peek_at(1) == Some('&') {
                        self.pos += 2;
                        return Some(Token::Op(Connector::And));
                    }
                    if self.peek_at(1) == Some('>') {
                        return Some(Token::Word(self.redirection()));
                    }
                    self.pos += 1;
                    return Some(Token::Op(Connector::Background));
                }
                '|' => {
                    if self.peek_at(1) == Some('|') {
                        self.pos += 2;
                        return Some(Token::Op(Connector::Or));
                    }
                    self.pos += 1;
                    if self.peek() == Some('&') {
                        self.pos += 1;
                    }
                    return Some(Token::Op(Connector::Pipe));
                }
                '(' | ')' => {
                    let start = self.pos;
                    self.pos += 1;
                    self.degrade("subshell");
                    let mut literal = Literal::new();
                    literal.push(c, start);
                    return Some(Token::Word(ShellWord {
                        parts: vec![WordPart::Literal {
                            literal,
                            quote: Quote::None,
                        }],
                        start,
                        end: self.pos,
                    }));
                }
                '<' | '>' => return Some(Token::Word(self.redirection())),
                _ => {
                    let start = self.pos;
                    let word = self.word(WordMode::Shell);
                    if self.pos == start {
                        // unreachable in practice; guarantees progress
                        self.pos += c.len_utf8();
                        continue;
                    }
                    // `2>file`: a numeric word glued to a redirection. Only
                    // raw digits count; `\2>` is a word then a redirection.
                    if matches!(self.peek(), Some('<' | '>'))
                        && self.text[start..self.pos]
                            .bytes()
                            .all(|b| b.is_ascii_digit())
                    {
                        self.pos = start;
                        return Some(Token::Word(self.redirection()));
                    }
                    return Some(Token::Word(word));
                }
            }
        }
    }

    fn redirection(&mut self) -> ShellWord {
        self.degrade("redirection");
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        while matches!(self.peek(), Some('<' | '>' | '&' | '|' | '-')) {
            self.pos += 1;
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let mut literal = Literal::new();
        literal.push_str(&self.text[start..self.pos], start);
        ShellWord {
            parts: vec![WordPart::Literal {
                literal,
                quote: Quote::None,
            }],
            start,
            end: self.pos,
        }
    }

    /// Scans one word starting at `self.pos`.
    fn word(&mut self, mode: WordMode) -> ShellWord {
        let start = self.pos;
        let mut parts: Vec<WordPart> = Vec::new();
        let mut lit = Literal::new();

        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                ' ' | '\t' | '\n' | '\r' if mode != WordMode::Spaces => break,
                ';' | '&' | '|' | '(' | ')' | '<' | '>' if mode == WordMode::Shell => break,
                '\\' => {
                    self.pos += 1;
                    match self.peek() {
                        Some('\n') => self.pos += 1,
                        Some(next) => {
                            lit.push(next, self.pos);
                            self.pos += next.len_utf8();
                        }
                        None => lit.push('\\', at),
                    }
                }
                '\'' => {
                    self.flush_into(&mut parts, &mut lit, Quote::None);
                    self.pos += 1;
                    let body_start = self.pos;
                    let body_end = match self.text[body_start..].find('\'') {
                        Some(e) => body_start + e,
                        None => {
                            self.out
                                .diagnostics
                                .push(format!("unterminated single quote at byte {at}"));
                            self.text.len()
                        }
                    };
                    let mut single = Literal::new();
                    single.push_str(&self.text[body_start..body_end], body_start);
                    parts.push(WordPart::Literal {
                        literal: single,
                        quote: Quote::Single,
                    });
                    self.pos = (body_end + 1).min(self.text.len());
                }
                '"' => {
                    self.flush_into(&mut parts, &mut lit, Quote::None);
                    self.pos += 1;
                    self.double_quoted(&mut parts, at);
                }
                '$' => self.dollar(&mut parts, &mut lit, Quote::None),
                '`' => {
                    self.degrade("command substitution");
                    self.pos += 1;
                    let end = self.text[self.pos..]
                        .find('`')
                        .map_or(self.text.len(), |e| self.pos + e + 1);
                    lit.push_str(&self.text[at..end], at);
                    self.pos = end;
                }
                _ => {
                    lit.push(c, at);
                    self.pos += c.len_utf8();
                }
            }
        }
        self.flush_into(&mut parts, &mut lit, Quote::None);
        merge_adjacent(&mut parts);
        ShellWord {
            parts,
            start,
            end: self.pos,
        }
    }

    fn double_quoted(&mut self, parts: &mut Vec<WordPart>, open: usize) {
        let mut lit = Literal::new();
        loop {
            let Some(c) = self.peek() else {
                self.out
                    .diagnostics
                    .push(format!("unterminated double quote at byte {open}"));
                break;
            };
            let at = self.pos;
            match c {
                '"' => {
                    self.pos += 1;
                    break;
                }
                '\\' => {
                    self.pos += 1;
                    match self.peek() {
                        Some(next @ ('"' | '\\' | '$' | '`')) => {
                            lit.push(next, self.pos);
                            self.pos += 1;
                        }
                        Some('\n') => self.pos += 1,
                        _ => lit.push('\\', at),
                    }
                }
                '$' => {
                    self.dollar(parts, &mut lit, Quote::Double);
                }
                '`' => {
                    self.degrade("command substitution");
                    self.pos += 1;
                    let end = self.text[self.pos..]
                        .find('`')
                        .map_or(self.text.len(), |e| self.pos + e + 1);
                    lit.push_str(&self.text[at..end], at);
                    self.pos = end;
                }
                _ => {
                    lit.push(c, at);
                    self.pos += c.len_utf8();
                }
            }
        }
        if !lit.text.is_empty() {
            parts.push(WordPart::Literal {
                literal: lit,
                quote: Quote::Double,
            });
        } else if parts.is_empty() {
            // `""` is an empty word, keep it visible
            parts.push(WordPart::Literal {
                literal: Literal::new(),
                quote: Quote::Double,
            });
        }
    }

    /// Handles `$` at `self.pos`. Literal text collected so far is flushed
    /// with `quote` before a variable reference is pushed.
    fn dollar(&mut self, parts: &mut Vec<WordPart>, lit: &mut Literal, quote: Quote) {
        let at = self.pos;
        let next = self.peek_at(1);
        match next {
            Some(c) if c == '_' || c.is_ascii_alphabetic() => {
                let name_start = at + 1;
                let mut end = name_start;
                for (i, ch) in self.text[name_start..].char_indices() {
                    if ch == '_' || ch.is_ascii_alphanumeric() {
                        end = name_start + i + 1;
                    } else {
                        break;
                    }
                }
                self.flush_into(parts, lit, quote);
                parts.push(WordPart::VarRef {
                    var: VarRef {
                        name: self.text[name_start..end].to_string(),
                        has_braces: false,
                        default_value: None,
                        default_if_unset_only: false,
                    },
                    quote,
                });
                self.pos = end;
            }
            Some('{') => self.braced(parts, lit, quote),
            Some('(') => {
                self.degrade("command substitution");
                let end = matching_paren(self.text, at + 1).unwrap_or(self.text.len());
                lit.push_str(&self.text[at..end], at);
                self.pos = end;
            }
            Some('\'') if quote == Quote::None => {
                self.degrade("ansi-c quoting");
                lit.push('$', at);
                self.pos += 1;
            }
            _ => {
                // `$1`, `$@`, a lone `$`: literal text
                lit.push('$', at);
                self.pos += 1;
                if let Some(c) = next {
                    if c.is_ascii_digit() || matches!(c, '@' | '*' | '#' | '?' | '$' | '!' | '-') {
                        lit.push(c, self.pos);
                        self.pos += c.len_utf8();
                    }
                }
            }
        }
    }

    fn flush_into(&self, parts: &mut Vec<WordPart>, lit: &mut Literal, quote: Quote) {
        if !lit.text.is_empty() {
            parts.push(WordPart::Literal {
                literal: std::mem::replace(lit, Literal::new()),
                quote,
            });
        }
    }

    fn braced(&mut self, parts: &mut Vec<WordPart>, lit: &mut Literal, quote: Quote) {
        let at = self.pos;
        let body_start = at + 2;
        let Some(close_rel) = find_brace_close(&self.text[body_start..]) else {
            self.out
                .diagnostics
                .push(format!("unterminated ${{ at byte {at}"));
            lit.push_str(&self.text[at..], at);
            self.pos = self.text.len();
            return;
        };
        let body_end = body_start + close_rel;
        let body = &self.text[body_start..body_end];
        self.pos = body_end + 1;
        let name_len = body
            .find(|c: char| !(c == '_' || c.is_ascii_alphanumeric()))
            .unwrap_or(body.len());
        let name = &body[..name_len];
        if !is_var_name(name) {
            self.degrade("parameter expansion");
            lit.push_str(&self.text[at..self.pos], at);
            return;
        }
        let rest = &body[name_len..];
        let (default_value, unset_only) = if rest.is_empty() {
            (None, false)
        } else if let Some(d) = rest.strip_prefix(":-") {
            let mut l = Literal::new();
            l.push_str(d, body_start + name_len + 2);
            (Some(l), false)
        } else if let Some(d) = rest.strip_prefix('-') {
            let mut l = Literal::new();
            l.push_str(d, body_start + name_len + 1);
            (Some(l), true)
        } else {
            self.degrade("parameter expansion");
            (None, false)
        };
        self.flush_into(parts, lit, quote);
        parts.push(WordPart::VarRef {
            var: VarRef {
                name: name.to_string(),
                has_braces: true,
                default_value,
                default_if_unset_only: unset_only,
            },
            quote,
        });
    }
}

fn merge_adjacent(parts: &mut Vec<WordPart>) {
    let mut merged: Vec<WordPart> = Vec::with_capacity(parts.len());
    for part in parts.drain(..) {
        if let (
            Some(WordPart::Literal {
                literal: prev,
                quote: pq,
            }),
            WordPart::Literal { literal, quote },
        ) = (merged.last_mut(), &part)
        {
            if pq == quote {
                prev.text.push_str(&literal.text);
                prev.origins.extend_from_slice(&literal.origins);
                continue;
            }
        }
        merged.push(part);
    }
    *parts = merged;
}

fn find_brace_close(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '{' => depth += 1,
            '}' if depth == 0 => return Some(i),
            '}' => depth -= 1,
            _ => {}
        }
    }
    None
}

/// Index just past the `)` matching the `(` at `open`.
fn matching_paren(text: &str, open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, c) in text[open..].char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(open + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lit(text: &str) -> String {
        text.to_string()
    }

    fn texts(cmd: &ShellCommand) -> Vec<String> {
        cmd.argv.iter().map(ShellWord::render).collect()
    }

    #[test]
    fn wget_with_variable() {
        let list = parse_shell(
            "wget -q http://archive.apache.org/dist/zookeeper/zookeeper-$zookeeperVersion.tar.gz",
        );
        assert_eq!(list.commands.len(), 1);
        let argv = &list.commands[0].argv;
        assert_eq!(argv.len(), 3);
        assert_eq!(argv[0].literal_text(), Some(lit("wget")));
        assert_eq!(argv[1].literal_text(), Some(lit("-q")));
        let vars: Vec<_> = argv[2].var_refs().map(|v| v.name.as_str()).collect();
        assert_eq!(vars, ["zookeeperVersion"]);
        assert!(!list.degraded());
    }

    #[test]
    fn and_list() {
        let list = parse_shell("apt-get update && apt-get -y install git");
        assert_eq!(list.commands.len(), 2);
        assert_eq!(list.connectors, [Connector::And]);
        assert_eq!(
            texts(&list.commands[1]),
            ["apt-get", "-y", "install", "git"]
        );
    }

    #[test]
    fn prefix_assignment() {
        let list = parse_shell("PG=9.3 curl $PG");
        let cmd = &list.commands[0];
        assert_eq!(cmd.assignments.len(), 1);
        assert_eq!(cmd.assignments[0].name, "PG");
        assert_eq!(cmd.assignments[0].value.literal_text(), Some(lit("9.3")));
        assert_eq!(cmd.argv[0].literal_text(), Some(lit("curl")));
        assert_eq!(cmd.argv[1].var_refs().next().unwrap().name, "PG");
    }

    #[test]
    fn collect_export_and_order() {
        let list = parse_shell("export V=1.2 && curl http://x/$V");
        let found: Vec<_> = collect_assignments(&list)
            .into_iter()
            .map(|a| (a.name, a.value.literal_text().unwrap()))
            .collect();
        assert_eq!(found, [(lit("V"), lit("1.2"))]);

        let list = parse_shell("A=1; A=2");
        let found: Vec<_> = collect_assignments(&list)
            .into_iter()
            .map(|a| (a.name, a.value.literal_text().unwrap()))
            .collect();
        assert_eq!(found, [(lit("A"), lit("1")), (lit("A"), lit("2"))]);

        assert!(collect_assignments(&parse_shell("echo done")).is_empty());
    }

    #[test]
    fn single_quotes_are_literal() {
        let list = parse_shell("echo '$X' \"$Y\" ${Z:-1.0}");
        let argv = &list.commands[0].argv;
        assert_eq!(argv[1].literal_text(), Some(lit("$X")));
        assert_eq!(argv[1].quoted(), Quote::Single);
        assert_eq!(argv[2].quoted(), Quote::Double);
        let z = argv[3].var_refs().next().unwrap();
        assert!(z.has_braces);
        assert_eq!(z.default_value.as_ref().unwrap().text, "1.0");
    }

    #[test]
    fn degraded_constructs_are_flagged() {
        let list = parse_shell("cd $(dirname x) && curl http://a > /dev/null 2>&1");
        assert!(list.degraded());
        assert_eq!(list.commands.len(), 2);
        assert_eq!(list.commands[1].argv[0].literal_text(), Some(lit("curl")));
        assert_eq!(
            list.commands[1].argv[1].literal_text(),
            Some(lit("http://a"))
        );

        let list = parse_shell("if true; then wget http://b; fi");
        assert!(list.degradations.iter().any(|d| d == "compound command"));
    }

    #[test]
    fn unterminated_quote_is_not_fatal() {
        let list = parse_shell("curl \"http://x/y");
        assert_eq!(list.commands.len(), 1);
        assert_eq!(
            list.commands[0].argv[1].literal_text(),
            Some(lit("http://x/y"))
        );
        assert_eq!(list.diagnostics.len(), 1);
    }

    #[test]
    fn escaped_digit_before_redirection() {
        let list = parse_shell("echo \\2>out");
        assert_eq!(list.commands[0].argv[1].literal_text(), Some(lit("2")));
        let list = parse_shell("cmd 2>out");
        assert_eq!(list.commands[0].argv[1].literal_text(), Some(lit("2>")));
    }

    #[test]
    fn newline_is_a_connector() {
        let list = parse_shell("a\nb;\n\nc");
        assert_eq!(list.commands.len(), 3);
        assert_eq!(list.connectors, [Connector::Newline, Connector::Semicolon]);
    }

    #[test]
    fn origins_point_at_source_bytes() {
        let text = "curl \"http://x/\"v\\1.$V";
        let list = parse_shell(text);
        let word = &list.commands[0].argv[1];
        for part in &word.parts {
            if let WordPart::Literal { literal, .. } = part {
                for (i, b) in literal.text.bytes().enumerate() {
                    assert_eq!(text.as_bytes()[literal.origins[i]], b);
                }
            }
        }
        assert_eq!(&text[word.start..word.end], "\"http://x/\"v\\1.$V");
    }

    fn word_strategy() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z0-9./:-]{1,6}",
            "\\$[A-Za-z_][A-Za-z0-9_]{0,4}",
            "\\$\\{[A-Za-z_][A-Za-z0-9_]{0,4}(:-[a-z0-9.]{0,3})?\\}",
            "'[a-z$ ]{0,5}'",
            "\"[a-z ]{0,4}(\\$[A-Z]{1,3})?\"",
        ]
    }

    proptest! {
        #[test]
        fn connector_count(words in prop::collection::vec(prop::collection::vec(word_strategy(), 1..4), 1..6),
                           ops in prop::collection::vec(prop_oneof![Just("&&"), Just("||"), Just(";"), Just("|"), Just("\n")], 5)) {
            let mut text = String::new();
            for (i, cmd) in words.iter().enumerate() {
                if i > 0 {
                    text.push_str(&format!(" {} ", ops[i - 1]));
                }
                text.push_str(&cmd.iter().map(|w| format!("x{w}")).collect::<Vec<_>>().join(" "));
            }
            let list = parse_shell(&text);
            prop_assert_eq!(list.commands.len(), words.len());
            prop_assert_eq!(list.connectors.len(), list.commands.len() - 1);
        }

        #[test]
        fn words_survive_rendering(word in prop::collection::vec(word_strategy(), 1..4)) {
            let text = word.concat();
            let words = parse_words(&text);
            prop_assert_eq!(words.len(), 1);
            let raw = &text[words[0].start..words[0].end];
            let reparsed = parse_words(raw);
            prop_assert_eq!(&reparsed[0].parts, &words[0].parts);
            let rendered = parse_words(&words[0].render());
            let strip = |w: &ShellWord| -> Vec<(String, Option<String>)> {
                w.parts.iter().map(|p| match p {
                    WordPart::Literal { literal, .. } => (literal.text.clone(), None),
                    WordPart::VarRef { var, .. } => (var.name.clone(), var.default_value.as_ref().map(|d| d.text.clone())),
                }).collect()
            };
            prop_assert_eq!(strip(&rendered[0]), strip(&words[0]));
        }

        #[test]
        fn single_quoted_dollar_is_literal(name in "[A-Z]{1,5}") {
            let list = parse_shell(&format!("echo '${name}'"));
            prop_assert_eq!(list.commands[0].argv[1].var_refs().count(), 0);
        }

        #[test]
        fn total_and_deterministic(text in "\\PC{0,60}") {
            let a = parse_shell(&text);
            let b = parse_shell(&text);
            prop_assert_eq!(a.clone(), b);
            if !a.commands.is_empty() {
                prop_assert_eq!(a.connectors.len(), a.commands.len() - 1);
            }
        }
    }
}
