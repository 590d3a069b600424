use std::fmt;
use std::path::PathBuf;

use nettemporal::training::RunLog;
use nettemporal::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Missing,
    Runtime,
}

/// A categorized command failure that maps onto an exit code.
#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
    /// Log of the run that diverged, when one was written.
    pub runlog: Option<PathBuf>,
    /// Log carried by a training failure until it is written out.
    pub pending_log: Option<Box<RunLog>>,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Config,
            message: message.into(),
            runlog: None,
            pending_log: None,
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Missing,
            message: message.into(),
            runlog: None,
            pending_log: None,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Runtime,
            message: message.into(),
            runlog: None,
            pending_log: None,
        }
    }

    pub fn code(&self) -> i32 {
        match self.kind {
            Kind::Config => 2,
            Kind::Missing => 3,
            Kind::Runtime => 4,
        }
    }

    fn label(&self) -> &'static str {
        match self.kind {
            Kind::Config => "config error",
            Kind::Missing => "missing artifact",
            Kind::Runtime => "runtime error",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.label(), self.message)?;
        if let Some(p) = &self.runlog {
            write!(f, " (run log: {})", p.display())?;
        }
        Ok(())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Training { epoch, message, log } => {
                let mut f = Failure::runtime(format!("training diverged at epoch {epoch}: {message}"));
                f.pending_log = Some(log);
                f
            }
            Error::Config(_) => Failure::config(e.to_string()),
            Error::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => Failure::missing(e.to_string()),
            _ => Failure::runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::runtime(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::runtime(format!("json: {e}"))
    }
}
