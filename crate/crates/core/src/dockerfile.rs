//! Top-level Dockerfile parsing.
//!
//! The parser splits a file into instructions, comment lines and blank lines.
//! Instruction arguments are kept as one string with line continuations
//! joined; the removed continuation text is recorded so that every byte of
//! the input can be mapped back to its origin. Shell parsing of `RUN`
//! arguments happens later in [`crate::shell`].

use std::ops::Range;

use serde::Serialize;

use crate::span::{Diagnostic, SourceSpan};

/// Instructions accepted by the Docker builder.
pub const KNOWN_INSTRUCTIONS: &[&str] = &[
    "ADD",
    "ARG",
    "CMD",
    "COPY",
    "ENTRYPOINT",
    "ENV",
    "EXPOSE",
    "FROM",
    "HEALTHCHECK",
    "LABEL",
    "MAINTAINER",
    "ONBUILD",
    "RUN",
    "SHELL",
    "STOPSIGNAL",
    "USER",
    "VOLUME",
    "WORKDIR",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Skip leading `ARG` instructions when checking that the file starts
    /// with `FROM`.
    pub lenient_from: bool,
}

/// Text removed from the argument string when a continuation was joined.
///
/// `at` is the byte offset in `raw_args` where the removed text used to sit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Continuation {
    pub at: usize,
    pub removed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Instruction {
    /// Uppercased instruction name.
    pub keyword: String,
    /// Argument text with continuations joined.
    pub raw_args: String,
    pub span: SourceSpan,
    /// Byte range of the whole instruction in the source, terminator included.
    pub byte_range: Range<usize>,
    /// Leading whitespace, keyword as written and the separating whitespace.
    pub prefix: String,
    pub continuations: Vec<Continuation>,
    /// Line terminator of the last physical line (may be empty at EOF).
    pub terminator: String,
    pub heredoc: bool,
    args_start: usize,
}

impl Instruction {
    /// Maps a byte offset in `raw_args` to a byte offset in the source text.
    pub fn source_offset(&self, arg_offset: usize) -> usize {
        let shifted: usize = self
            .continuations
            .iter()
            .take_while(|c| c.at <= arg_offset)
            .map(|c| c.removed.len())
            .sum();
        self.args_start + arg_offset + shifted
    }

    /// Source byte offset where the argument text begins.
    pub fn args_start(&self) -> usize {
        self.args_start
    }

    /// Re-inserts the recorded continuations and returns the instruction
    /// exactly as it appeared in the source.
    pub fn original_text(&self) -> String {
        let mut out = self.prefix.clone();
        let mut last = 0;
        for c in &self.continuations {
            out.push_str(&self.raw_args[last..c.at]);
            out.push_str(&c.removed);
            last = c.at;
        }
        out.push_str(&self.raw_args[last..]);
        out.push_str(&self.terminator);
        out
    }

    pub fn is(&self, keyword: &str) -> bool {
        self.keyword == keyword
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TriviaKind {
    Blank,
    Comment,
    /// A line that could not be read as an instruction.
    Unparsed,
}

/// A physical line that does not belong to an instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Trivia {
    pub kind: TriviaKind,
    pub line: usize,
    pub byte_range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DockerfileAst {
    pub path: String,
    pub instructions: Vec<Instruction>,
    pub valid: bool,
    pub parse_diagnostics: Vec<Diagnostic>,
    pub trivia: Vec<Trivia>,
    #[serde(skip)]
    source: String,
}

impl DockerfileAst {
    /// The decoded source text (invalid UTF-8 replaced).
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Rebuilds the source from instructions and trivia.
    pub fn reconstruct(&self) -> String {
        let mut pieces: Vec<(usize, String)> = self
            .instructions
            .iter()
            .map(|i| (i.byte_range.start, i.original_text()))
            .collect();
        pieces.extend(self.trivia.iter().map(|t| {
            (
                t.byte_range.start,
                self.source[t.byte_range.clone()].to_string(),
            )
        }));
        pieces.sort_by_key(|(start, _)| *start);
        pieces.into_iter().map(|(_, text)| text).collect()
    }
}

/// True when a file name matches `.*(d|D)ockerfile.*`.
pub fn is_dockerfile_name(filename: &str) -> bool {
    let base = filename.rsplit('/').next().unwrap_or(filename);
    base.contains("dockerfile") || base.contains("Dockerfile")
}

pub fn parse_dockerfile(text: &[u8], path: &str) -> DockerfileAst {
    parse_dockerfile_with(text, path, ParseOptions::default())
}

pub fn parse_dockerfile_with(text: &[u8], path: &str, options: ParseOptions) -> DockerfileAst {
    let source = String::from_utf8_lossy(text).into_owned();
    let mut parser = Parser {
        path,
        lines: split_lines(&source),
        source: &source,
        pos: 0,
        instructions: Vec::new(),
        trivia: Vec::new(),
        diagnostics: Vec::new(),
    };
    if std::str::from_utf8(text).is_err() {
        parser.diagnostics.push(Diagnostic::warning(
            None,
            "invalid UTF-8 sequences were replaced",
        ));
    }
    parser.run();

    let Parser {
        instructions,
        trivia,
        mut diagnostics,
        ..
    } = parser;

    let first = instructions
        .iter()
        .find(|i| !(options.lenient_from && i.is("ARG")));
    let starts_with_from = matches!(first, Some(i) if i.is("FROM"));
    if instructions.is_empty() {
        diagnostics.push(Diagnostic::error(None, "file contains no instructions"));
    } else if !starts_with_from {
        let span = first.map(|i| i.span.clone());
        diagnostics.push(Diagnostic::error(span, "file does not start with FROM"));
    }
    let valid = starts_with_from && !diagnostics.iter().any(Diagnostic::is_error);

    DockerfileAst {
        path: path.to_string(),
        instructions,
        valid,
        parse_diagnostics: diagnostics,
        trivia,
        source,
    }
}

struct Line {
    start: usize,
    /// End of content, before the terminator.
    content_end: usize,
    end: usize,
}

fn split_lines(source: &str) -> Vec<Line> {
    let mut lines = Vec::new();
    let mut start = 0;
    for (idx, _) in source.match_indices('\n') {
        let content_end = if idx > start && source.as_bytes()[idx - 1] == b'\r' {
            idx - 1
        } else {
            idx
        };
        lines.push(Line {
            start,
            content_end,
            end: idx + 1,
        });
        start = idx + 1;
    }
    if start < source.len() {
        lines.push(Line {
            start,
            content_end: source.len(),
            end: source.len(),
        });
    }
    lines
}

struct Parser<'a> {
    path: &'a str,
    source: &'a str,
    lines: Vec<Line>,
    pos: usize,
    instructions: Vec<Instruction>,
    trivia: Vec<Trivia>,
    diagnostics: Vec<Diagnostic>,
}

impl<'a> Parser<'a> {
    fn content(&self, idx: usize) -> &'a str {
        let line = &self.lines[idx];
        &self.source[line.start..line.content_end]
    }

    fn terminator(&self, idx: usize) -> &'a str {
        let line = &self.lines[idx];
        &self.source[line.content_end..line.end]
    }

    fn push_trivia(&mut self, kind: TriviaKind, idx: usize) {
        let line = &self.lines[idx];
        self.trivia.push(Trivia {
            kind,
            line: idx + 1,
            byte_range: line.start..line.end,
        });
    }

    fn run(&mut self) {
        while self.pos < self.lines.len() {
            let idx = self.pos;
            let content = self.content(idx);
            let trimmed = content.trim_start();
            if trimmed.is_empty() {
                self.push_trivia(TriviaKind::Blank, idx);
                self.pos += 1;
            } else if trimmed.starts_with('#') {
                self.push_trivia(TriviaKind::Comment, idx);
                self.pos += 1;
            } else {
                self.instruction(idx);
            }
        }
    }

    fn instruction(&mut self, first: usize) {
        let line_start = self.lines[first].start;
        let content = self.content(first);
        let indent = content.len() - content.trim_start().len();
        let after_indent = &content[indent..];
        let word_len = after_indent
            .find(|c: char| c.is_whitespace())
            .unwrap_or(after_indent.len());
        let word = &after_indent[..word_len];
        if !is_keyword(word) {
            self.diagnostics.push(Diagnostic::error(
                Some(SourceSpan::line(self.path, first + 1)),
                format!("unparseable line starting with {word:?}"),
            ));
            self.push_trivia(TriviaKind::Unparsed, first);
            self.pos += 1;
            return;
        }
        let rest = &after_indent[word_len..];
        let sep_len = rest.len() - rest.trim_start_matches([' ', '\t']).len();
        let prefix_len = indent + word_len + sep_len;
        let args_start = line_start + prefix_len;
        let keyword = word.to_ascii_uppercase();

        let mut raw_args = String::new();
        let mut continuations = Vec::new();
        let mut idx = first;
        let mut segment_start = args_start;
        let mut eof_in_continuation = false;
        loop {
            let line = &self.lines[idx];
            let text = &self.source[segment_start..line.content_end];
            match continuation_at(text) {
                Some(cut) => {
                    raw_args.push_str(&text[..cut]);
                    let mut removed_end = line.end;
                    idx += 1;
                    // Comment and blank lines inside a continuation are dropped.
                    while idx < self.lines.len() {
                        let next = self.content(idx).trim_start();
                        if next.is_empty() || next.starts_with('#') {
                            removed_end = self.lines[idx].end;
                            idx += 1;
                        } else {
                            break;
                        }
                    }
                    continuations.push(Continuation {
                        at: raw_args.len(),
                        removed: self.source[segment_start + cut..removed_end].to_string(),
                    });
                    if idx >= self.lines.len() {
                        self.diagnostics.push(Diagnostic::warning(
                            Some(SourceSpan::new(self.path, first + 1, idx)),
                            "line continuation at end of file",
                        ));
                        idx -= 1;
                        eof_in_continuation = true;
                        break;
                    }
                    segment_start = self.lines[idx].start;
                }
                None => {
                    raw_args.push_str(text);
                    break;
                }
            }
        }

        let mut heredoc = false;
        let mut last = idx;
        let mut terminator = if eof_in_continuation {
            String::new()
        } else {
            self.terminator(idx).to_string()
        };
        if !eof_in_continuation && matches!(keyword.as_str(), "RUN" | "ADD" | "COPY") {
            let delimiters = heredoc_delimiters(&raw_args);
            if !delimiters.is_empty() {
                heredoc = true;
                self.diagnostics.push(Diagnostic::warning(
                    Some(SourceSpan::line(self.path, first + 1)),
                    "heredoc body kept verbatim and not shell-parsed",
                ));
                'outer: for (delim, strip_tabs) in delimiters {
                    loop {
                        if last + 1 >= self.lines.len() {
                            self.diagnostics.push(Diagnostic::error(
                                Some(SourceSpan::new(self.path, first + 1, last + 1)),
                                format!("unterminated heredoc {delim:?}"),
                            ));
                            break 'outer;
                        }
                        raw_args.push_str(self.terminator(last));
                        last += 1;
                        let body = self.content(last);
                        raw_args.push_str(body);
                        let check = if strip_tabs {
                            body.trim_start_matches('\t')
                        } else {
                            body
                        };
                        if check == delim {
                            break;
                        }
                    }
                }
                terminator = self.terminator(last).to_string();
            }
        }

        let end = self.lines[last].end;
        let span = SourceSpan::new(self.path, first + 1, last + 1);
        if !KNOWN_INSTRUCTIONS.contains(&keyword.as_str()) {
            self.diagnostics.push(Diagnostic::error(
                Some(span.clone()),
                format!("unknown instruction {keyword}"),
            ));
        } else if keyword == "FROM" && raw_args.trim().is_empty() {
            self.diagnostics.push(Diagnostic::error(
                Some(span.clone()),
                "FROM requires a base image",
            ));
        }
        self.instructions.push(Instruction {
            keyword,
            raw_args,
            span,
            byte_range: line_start..end,
            prefix: content[..prefix_len].to_string(),
            continuations,
            terminator,
            heredoc,
            args_start,
        });
        self.pos = last + 1;
    }
}

fn is_keyword(word: &str) -> bool {
    let mut chars = word.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric())
}

/// Byte offset of a trailing continuation backslash, if the line has one.
fn continuation_at(text: &str) -> Option<usize> {
    let trimmed = text.trim_end_matches([' ', '\t']);
    if !trimmed.ends_with('\\') {
        return None;
    }
    Some(trimmed.len() - 1)
}

/// Heredoc delimiters introduced on an instruction line, with the `<<-`
/// tab-stripping flag.
fn heredoc_delimiters(args: &str) -> Vec<(String, bool)> {
    let mut found = Vec::new();
    let bytes = args.as_bytes();
    let mut i = 0;
    while i + 1 < bytes.len() {
        if bytes[i] == b'<'
            && bytes[i + 1] == b'<'
            && (i + 2 >= bytes.len() || bytes[i + 2] != b'<')
        {
            let mut j = i + 2;
            let strip_tabs = j < bytes.len() && bytes[j] == b'-';
            if strip_tabs {
                j += 1;
            }
            let quote = match bytes.get(j) {
                Some(b'"') | Some(b'\'') => {
                    j += 1;
                    Some(bytes[j - 1])
                }
                _ => None,
            };
            let name_start = j;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j > name_start && bytes[name_start].is_ascii_alphabetic() {
                let closed = match quote {
                    Some(q) => bytes.get(j) == Some(&q),
                    None => true,
                };
                if closed {
                    found.push((args[name_start..j].to_string(), strip_tabs));
                }
            }
            i = j.max(i + 2);
        } else {
            i += 1;
        }
    }
    found
}
