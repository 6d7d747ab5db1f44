use std::fmt;

use serde::{Deserialize, Serialize};

/// A line range inside one file. Lines are 1-based and inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceSpan {
    pub path: String,
    pub start_line: usize,
    pub end_line: usize,
}

impl SourceSpan {
    pub fn new(path: impl Into<String>, start_line: usize, end_line: usize) -> Self {
        let path = path.into();
        debug_assert!(start_line <= end_line);
        Self {
            path,
            start_line,
            end_line,
        }
    }

    pub fn line(path: impl Into<String>, line: usize) -> Self {
        Self::new(path, line, line)
    }

    pub fn contains_line(&self, line: usize) -> bool {
        self.start_line <= line && line <= self.end_line
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start_line == self.end_line {
            write!(f, "{}:{}", self.path, self.start_line)
        } else {
            write!(f, "{}:{}-{}", self.path, self.start_line, self.end_line)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

/// A non-fatal finding attached to a location.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub span: Option<SourceSpan>,
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    pub fn warning(span: Option<SourceSpan>, message: impl Into<String>) -> Self {
        Self {
            span,
            severity: Severity::Warning,
            message: message.into(),
        }
    }

    pub fn error(span: Option<SourceSpan>, message: impl Into<String>) -> Self {
        Self {
            span,
            severity: Severity::Error,
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match &self.span {
            Some(span) => write!(f, "{span}: {level}: {}", self.message),
            None => write!(f, "{level}: {}", self.message),
        }
    }
}
