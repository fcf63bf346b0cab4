//! Exit-code classification.

use std::fmt;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// An error that carries its own exit code.
#[derive(Debug)]
pub struct Coded {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    Coded { code: EXIT_USAGE, message: message.into() }.into()
}

pub fn data(message: impl Into<String>) -> anyhow::Error {
    Coded { code: EXIT_DATA, message: message.into() }.into()
}

pub fn numerical(message: impl Into<String>) -> anyhow::Error {
    Coded { code: EXIT_NUMERICAL, message: message.into() }.into()
}

fn library_code(e: &eduvqa::Error) -> i32 {
    use eduvqa::Error as E;
    match e {
        E::Usage(_) | E::Config(_) => EXIT_USAGE,
        E::NonFinite { .. } => EXIT_NUMERICAL,
        E::Shape { .. } | E::Degenerate(_) | E::Format { .. } | E::Truncated { .. } | E::Data(_) | E::Io { .. } | E::Json(_) => {
            EXIT_DATA
        }
    }
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(e) = cause.downcast_ref::<eduvqa::Error>() {
            return library_code(e);
        }
    }
    EXIT_DATA
}
