//! Process exit codes.

use std::fmt;

use trajdiff_core::Error as CoreError;

pub const OK: u8 = 0;
pub const FAILURE: u8 = 1;
pub const GENERATION: u8 = 2;
pub const MISSING_ARTIFACT: u8 = 3;
pub const DIMENSION: u8 = 4;
pub const MALFORMED: u8 = 5;

/// An error carrying the exit code it should produce.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

pub fn coded(code: u8, message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Coded {
        code,
        message: message.into(),
    })
}

/// Exit code for an error: an explicit [`Coded`] wins, then the first core
/// error in the chain decides.
pub fn code_for(err: &anyhow::Error) -> u8 {
    // Context values are only reachable through the top-level downcast.
    if let Some(c) = err.downcast_ref::<Coded>() {
        return c.code;
    }
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Dimension(_) => DIMENSION,
                CoreError::GenerationFailed { .. } => GENERATION,
                CoreError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => MISSING_ARTIFACT,
                CoreError::Malformed { .. } | CoreError::Json(_) | CoreError::Csv(_) => MALFORMED,
                _ => FAILURE,
            };
        }
    }
    FAILURE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_code_beats_core_error() {
        let e = anyhow::Error::new(CoreError::Dimension("x".into()));
        assert_eq!(code_for(&e), DIMENSION);
        let e = e.context(Coded {
            code: MISSING_ARTIFACT,
            message: "ck".into(),
        });
        assert_eq!(code_for(&e), MISSING_ARTIFACT);
        assert_eq!(code_for(&anyhow::anyhow!("plain")), FAILURE);
    }
}
