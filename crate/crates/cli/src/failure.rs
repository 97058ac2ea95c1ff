use std::fmt;
use std::path::Path;

/// Exit code 1.
pub const EXIT_USAGE: i32 = 1;
/// Exit code 2.
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub type Outcome<T> = Result<T, Failure>;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<c2f_core::Error> for Failure {
    fn from(e: c2f_core::Error) -> Self {
        match e {
            c2f_core::Error::Config(_) => Failure::usage(e.to_string()),
            _ => Failure::data(e.to_string()),
        }
    }
}
