//! Variable resolution and URL harvesting.
//!
//! Every resolved string carries, per byte, the source offset it was copied
//! from (or `None` for bytes that were synthesized). Rewriting relies on this
//! to find the definition that produced a version string.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::dockerfile::{DockerfileAst, Instruction};
use crate::shell::{self, ShellCommand, ShellList, ShellWord, WordPart};
use crate::span::{Diagnostic, SourceSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarOrigin {
    ArgDefault,
    Env,
    ShellAssignment,
}

/// Ordering key for bindings and lookups inside one Dockerfile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Position {
    pub instruction: usize,
    pub command: usize,
    pub step: usize,
}

impl Position {
    fn new(instruction: usize, command: usize, step: usize) -> Self {
        Self {
            instruction,
            command,
            step,
        }
    }

    /// Just before anything in `instruction` takes effect.
    fn start_of(instruction: usize) -> Self {
        Self::new(instruction, 0, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Binding {
    pub name: String,
    pub value: String,
    pub origin: VarOrigin,
    pub span: SourceSpan,
    pub position: Position,
    /// Source offset of each byte of `value`.
    #[serde(skip)]
    pub value_origins: Vec<Option<usize>>,
}

/// Variable bindings of one Dockerfile in definition order.
///
/// Lookups are positional: a use sees the latest binding made before it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VarEnv {
    pub bindings: Vec<Binding>,
    pub diagnostics: Vec<Diagnostic>,
}

impl VarEnv {
    /// Latest binding of `name` anywhere in the file.
    pub fn get(&self, name: &str) -> Option<&Binding> {
        self.bindings.iter().rev().find(|b| b.name == name)
    }

    /// Latest binding of `name` made strictly before `pos`.
    pub fn lookup_before(&self, name: &str, pos: Position) -> Option<&Binding> {
        self.bindings
            .iter()
            .rev()
            .find(|b| b.name == name && b.position < pos)
    }

    /// Final value of every bound name.
    pub fn values(&self) -> BTreeMap<&str, &str> {
        self.bindings
            .iter()
            .map(|b| (b.name.as_str(), b.value.as_str()))
            .collect()
    }
}

/// A string produced by substitution, with per-byte provenance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Resolved {
    pub text: String,
    pub origins: Vec<Option<usize>>,
    /// Names that had no binding.
    pub unresolved: Vec<String>,
}

impl Resolved {
    fn push_str(&mut self, s: &str, origins: impl IntoIterator<Item = Option<usize>>) {
        self.text.push_str(s);
        self.origins.extend(origins);
        debug_assert_eq!(self.text.len(), self.origins.len());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[serde(rename = "ADD")]
    Add,
    Curl,
    Wget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractedUrl {
    pub url: String,
    pub source_kind: SourceKind,
    pub span: SourceSpan,
    pub fully_resolved: bool,
    /// Index of the instruction the URL came from.
    #[serde(skip)]
    pub instruction: usize,
    #[serde(skip)]
    pub origins: Vec<Option<usize>>,
}

impl ExtractedUrl {
    pub fn line(&self) -> usize {
        self.span.start_line
    }
}

fn unresolved_sentinel(name: &str) -> String {
    format!("${{UNRESOLVED:{name}}}")
}

/// How unbound variables render.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Unbound {
    Empty,
    Sentinel,
}

fn resolve(word: &ShellWord, env: &VarEnv, pos: Position, unbound: Unbound) -> Resolved {
    let mut out = Resolved::default();
    for part in &word.parts {
        match part {
            WordPart::Literal { literal, .. } => {
                out.push_str(&literal.text, literal.origins.iter().copied().map(Some));
            }
            WordPart::VarRef { var, .. } => {
                let bound = env.lookup_before(&var.name, pos);
                let use_default = match (bound, &var.default_value) {
                    (None, Some(_)) => true,
                    (Some(b), Some(_)) => b.value.is_empty() && !var.default_if_unset_only,
                    _ => false,
                };
                if use_default {
                    let default = var.default_value.as_ref().expect("checked above");
                    out.push_str(&default.text, default.origins.iter().copied().map(Some));
                } else if let Some(b) = bound {
                    out.push_str(&b.value, b.value_origins.iter().copied());
                } else {
                    out.unresolved.push(var.name.clone());
                    if unbound == Unbound::Sentinel {
                        let s = unresolved_sentinel(&var.name);
                        let n = s.len();
                        out.push_str(&s, std::iter::repeat_n(None, n));
                    }
                }
            }
        }
    }
    out
}

/// Shifts a word parsed from `raw_args` so its offsets refer to the file.
fn to_file_offsets(word: &mut ShellWord, inst: &Instruction) {
    word.start = inst.source_offset(word.start);
    word.end = inst.source_offset(word.end);
    for part in &mut word.parts {
        let literal = match part {
            WordPart::Literal { literal, .. } => literal,
            WordPart::VarRef { var, .. } => match &mut var.default_value {
                Some(d) => d,
                None => continue,
            },
        };
        for o in &mut literal.origins {
            *o = inst.source_offset(*o);
        }
    }
}

fn words_of(inst: &Instruction, text_offset: usize, text: &str) -> Vec<ShellWord> {
    shell::parse_words(text)
        .into_iter()
        .map(|mut w| {
            w.shift(text_offset);
            to_file_offsets(&mut w, inst);
            w
        })
        .collect()
}

/// Parses a JSON exec-form array (`["a", "b"]`) into literal words.
fn json_array_words(inst: &Instruction) -> Option<Vec<ShellWord>> {
    let text = &inst.raw_args;
    let trimmed = text.trim_start();
    if !trimmed.starts_with('[') {
        return None;
    }
    // validate with a real JSON parser before scanning offsets
    let values: Vec<String> = serde_json::from_str(text.trim()).ok()?;
    let mut words = Vec::with_capacity(values.len());
    let bytes = text.as_bytes();
    let mut i = text.len() - trimmed.len() + 1;
    while words.len() < values.len() {
        while i < bytes.len() && bytes[i] != b'"' {
            i += 1;
        }
        let start = i + 1;
        let mut j = start;
        let mut literal_text = String::new();
        let mut origins = Vec::new();
        while j < bytes.len() && bytes[j] != b'"' {
            if bytes[j] == b'\\' {
                // escaped content: fall back to the decoded value without provenance
                j += 2;
                continue;
            }
            j += 1;
        }
        let raw = &text[start..j.min(text.len())];
        let decoded = &values[words.len()];
        if raw == decoded {
            literal_text.push_str(raw);
            origins.extend((start..j).map(|o| inst.source_offset(o)));
            words.push(literal_word(
                literal_text,
                origins,
                inst.source_offset(start),
            ));
        } else {
            let at = inst.source_offset(start);
            words.push(literal_word(decoded.clone(), vec![at; decoded.len()], at));
        }
        i = j + 1;
    }
    Some(words)
}

fn literal_word(text: String, origins: Vec<usize>, at: usize) -> ShellWord {
    let end = at + text.len();
    ShellWord {
        parts: vec![WordPart::Literal {
            literal: shell::Literal { text, origins },
            quote: shell::Quote::Double,
        }],
        start: at,
        end,
    }
}

/// Parses the shell tree of a `RUN` instruction, with offsets mapped to the
/// file. Heredoc bodies are not parsed.
pub fn run_commands(inst: &Instruction) -> Option<ShellList> {
    if !inst.is("RUN") || inst.heredoc {
        return None;
    }
    if let Some(words) = json_array_words(inst) {
        return Some(ShellList {
            commands: vec![ShellCommand {
                assignments: Vec::new(),
                argv: words,
            }],
            ..ShellList::default()
        });
    }
    let mut list = shell::parse_shell(&inst.raw_args);
    for cmd in &mut list.commands {
        for a in &mut cmd.assignments {
            to_file_offsets(&mut a.value, inst);
        }
        for w in &mut cmd.argv {
            to_file_offsets(w, inst);
        }
    }
    Some(list)
}

pub fn build_env(ast: &DockerfileAst) -> VarEnv {
    let mut env = VarEnv::default();
    for (idx, inst) in ast.instructions.iter().enumerate() {
        match inst.keyword.as_str() {
            "ENV" => env_instruction(&mut env, idx, inst),
            "ARG" => arg_instruction(&mut env, idx, inst),
            "RUN" => {
                if let Some(list) = run_commands(inst) {
                    for (step, a) in shell::collect_assignments(&list).into_iter().enumerate() {
                        // prefix assignments come first in their command, export
                        // arguments after them
                        let pos = Position::new(idx, a.command, step);
                        bind(
                            &mut env,
                            a.name,
                            &a.value,
                            VarOrigin::ShellAssignment,
                            inst,
                            pos,
                        );
                    }
                }
            }
            _ => {}
        }
    }
    env
}

fn bind(
    env: &mut VarEnv,
    name: String,
    value: &ShellWord,
    origin: VarOrigin,
    inst: &Instruction,
    pos: Position,
) {
    // ENV and ARG values see the environment before their instruction.
    let lookup = match origin {
        VarOrigin::ShellAssignment => pos,
        _ => Position::start_of(pos.instruction),
    };
    let resolved = resolve(value, env, lookup, Unbound::Empty);
    for missing in &resolved.unresolved {
        env.diagnostics.push(Diagnostic::warning(
            Some(inst.span.clone()),
            format!("variable {missing} is not defined; resolved to an empty string"),
        ));
    }
    env.bindings.push(Binding {
        name,
        value: resolved.text,
        origin,
        span: inst.span.clone(),
        position: pos,
        value_origins: resolved.origins,
    });
}

fn env_instruction(env: &mut VarEnv, idx: usize, inst: &Instruction) {
    let args = inst.raw_args.trim_end();
    let lead = args.len() - args.trim_start().len();
    let words = words_of(inst, lead, &args[lead..]);
    let Some(first) = words.first() else {
        env.diagnostics.push(Diagnostic::warning(
            Some(inst.span.clone()),
            "ENV without arguments",
        ));
        return;
    };
    if shell::split_assignment(first).is_some() {
        for (step, w) in words.iter().enumerate() {
            match shell::split_assignment(w) {
                Some((name, value)) => bind(
                    env,
                    name,
                    &value,
                    VarOrigin::Env,
                    inst,
                    Position::new(idx, 0, step + 1),
                ),
                None => env.diagnostics.push(Diagnostic::warning(
                    Some(inst.span.clone()),
                    format!("malformed ENV pair {:?}", w.render()),
                )),
            }
        }
        return;
    }
    // legacy `ENV name value with spaces`
    let Some(name) = first.literal_text().filter(|n| shell::is_var_name(n)) else {
        env.diagnostics.push(Diagnostic::warning(
            Some(inst.span.clone()),
            "malformed ENV name",
        ));
        return;
    };
    let after_name = &args[lead..];
    let name_len = after_name
        .find(char::is_whitespace)
        .unwrap_or(after_name.len());
    let rest = &after_name[name_len..];
    let value_off = lead + name_len + (rest.len() - rest.trim_start().len());
    let value_text = &args[value_off..];
    if value_text.is_empty() {
        env.diagnostics.push(Diagnostic::warning(
            Some(inst.span.clone()),
            format!("ENV {name} has no value"),
        ));
        return;
    }
    let mut value = shell::parse_word_allow_spaces(value_text);
    value.shift(value_off);
    to_file_offsets(&mut value, inst);
    bind(
        env,
        name,
        &value,
        VarOrigin::Env,
        inst,
        Position::new(idx, 0, 1),
    );
}

fn arg_instruction(env: &mut VarEnv, idx: usize, inst: &Instruction) {
    let args = &inst.raw_args;
    for (step, w) in words_of(inst, 0, args).iter().enumerate() {
        if let Some((name, value)) = shell::split_assignment(w) {
            bind(
                env,
                name,
                &value,
                VarOrigin::ArgDefault,
                inst,
                Position::new(idx, 0, step + 1),
            );
        }
    }
}

/// Option flags whose value is the next token.
const WGET_VALUE_FLAGS: &[&str] = &["-O", "-o", "-P", "--header", "--user-agent", "-U"];
const CURL_VALUE_FLAGS: &[&str] = &[
    "-o", "-H", "-d", "--data", "-u", "-A", "-X", "--output", "--header",
];

/// Returns the downloader kind and the index of its name in `argv`.
fn downloader(cmd: &ShellCommand) -> Option<(SourceKind, usize)> {
    let mut idx = 0;
    let texts: Vec<Option<String>> = cmd.argv.iter().map(ShellWord::literal_text).collect();
    while let Some(Some(t)) = texts.get(idx) {
        if shell::is_reserved_word(t) || t == "(" {
            idx += 1;
        } else {
            break;
        }
    }
    if texts.get(idx).cloned().flatten().as_deref() == Some("sudo") {
        idx += 1;
        while let Some(Some(t)) = texts.get(idx) {
            if t.starts_with('-') {
                idx += 1;
            } else {
                break;
            }
        }
    }
    match texts.get(idx)?.as_deref()? {
        "curl" => Some((SourceKind::Curl, idx)),
        "wget" => Some((SourceKind::Wget, idx)),
        _ => None,
    }
}

fn url_from(
    resolved: Resolved,
    kind: SourceKind,
    inst_idx: usize,
    inst: &Instruction,
    diagnostics: &mut Vec<Diagnostic>,
) -> Option<ExtractedUrl> {
    if !resolved.text.starts_with("http") {
        return None;
    }
    if resolved.text.chars().any(char::is_whitespace) {
        diagnostics.push(Diagnostic::warning(
            Some(inst.span.clone()),
            format!("skipped URL containing whitespace: {:?}", resolved.text),
        ));
        return None;
    }
    for name in &resolved.unresolved {
        diagnostics.push(Diagnostic::warning(
            Some(inst.span.clone()),
            format!("variable {name} is not defined in URL"),
        ));
    }
    Some(ExtractedUrl {
        fully_resolved: resolved.unresolved.is_empty(),
        url: resolved.text,
        source_kind: kind,
        span: inst.span.clone(),
        instruction: inst_idx,
        origins: resolved.origins,
    })
}

/// URLs in `ADD` sources and in `curl`/`wget` arguments, in source order.
pub fn extract_urls(ast: &DockerfileAst, env: &VarEnv) -> Vec<ExtractedUrl> {
    extract_urls_with_diagnostics(ast, env).0
}

pub fn extract_urls_with_diagnostics(
    ast: &DockerfileAst,
    env: &VarEnv,
) -> (Vec<ExtractedUrl>, Vec<Diagnostic>) {
    let mut urls = Vec::new();
    let mut diagnostics = Vec::new();
    for (idx, inst) in ast.instructions.iter().enumerate() {
        match inst.keyword.as_str() {
            "ADD" => {
                let words =
                    json_array_words(inst).unwrap_or_else(|| words_of(inst, 0, &inst.raw_args));
                let source = words
                    .iter()
                    .find(|w| !w.literal_text().is_some_and(|t| t.starts_with("--")));
                if let Some(source) = source {
                    let resolved = resolve(source, env, Position::start_of(idx), Unbound::Sentinel);
                    urls.extend(url_from(
                        resolved,
                        SourceKind::Add,
                        idx,
                        inst,
                        &mut diagnostics,
                    ));
                }
            }
            "RUN" => {
                let Some(list) = run_commands(inst) else {
                    continue;
                };
                for (c, cmd) in list.commands.iter().enumerate() {
                    let Some((kind, at)) = downloader(cmd) else {
                        continue;
                    };
                    let value_flags = match kind {
                        SourceKind::Wget => WGET_VALUE_FLAGS,
                        _ => CURL_VALUE_FLAGS,
                    };
                    let pos = Position::new(idx, c, usize::MAX);
                    let mut skip_next = false;
                    for word in &cmd.argv[at + 1..] {
                        if skip_next {
                            skip_next = false;
                            continue;
                        }
                        let literal = word.literal_text();
                        if let Some(t) = &literal {
                            if value_flags.contains(&t.as_str()) {
                                skip_next = true;
                                continue;
                            }
                        }
                        let resolved = resolve(word, env, pos, Unbound::Sentinel);
                        if resolved.text.starts_with('-') {
                            continue;
                        }
                        urls.extend(url_from(resolved, kind, idx, inst, &mut diagnostics));
                    }
                }
            }
            _ => {}
        }
    }
    (urls, diagnostics)
}

/// Host of a URL, lowercased.
pub fn url_host(url: &str) -> Option<String> {
    let parsed = url::Url::parse(url).ok()?;
    parsed.host_str().map(str::to_ascii_lowercase)
}

/// Number of repositories in which each URL host appears.
pub fn domain_histogram<'a, I, U>(by_repo: I) -> (BTreeMap<String, usize>, Vec<Diagnostic>)
where
    I: IntoIterator<Item = (&'a str, U)>,
    U: IntoIterator<Item = &'a str>,
{
    let mut seen: BTreeMap<String, BTreeSet<&'a str>> = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for (repo, urls) in by_repo {
        for url in urls {
            match url_host(url) {
                Some(host) => {
                    seen.entry(host).or_default().insert(repo);
                }
                None => diagnostics.push(Diagnostic::warning(
                    None,
                    format!("{repo}: URL without a host skipped: {url}"),
                )),
            }
        }
    }
    let counts = seen
        .into_iter()
        .map(|(h, repos)| (h, repos.len()))
        .collect();
    (counts, diagnostics)
}
