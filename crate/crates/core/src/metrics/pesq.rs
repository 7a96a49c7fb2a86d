use std::path::Path;
use std::process::Command;
use std::sync::{Condvar, Mutex};

use crate::error::{Error, Result};

/// External PESQ implementation.
pub trait PesqScorer: Send + Sync {
    fn score(&self, reference: &Path, degraded: &Path) -> Result<f64>;

    /// Recorded in report metadata (e.g. the command line or mode).
    fn describe(&self) -> String;
}

/// Runs a command per pair; `{ref}` and `{deg}` in the template are replaced
/// by the file paths and the last number printed on stdout is the score.
#[derive(Debug)]
pub struct CommandPesq {
    template: Vec<String>,
    slots: Mutex<usize>,
    freed: Condvar,
}

impl CommandPesq {
    pub fn new(template: &str, workers: usize) -> Result<Self> {
        let template: Vec<String> = template.split_whitespace().map(str::to_string).collect();
        if template.is_empty() {
            return Err(Error::Config("empty PESQ command template".into()));
        }
        let joined = template.join(" ");
        if !joined.contains("{ref}") || !joined.contains("{deg}") {
            return Err(Error::Config("PESQ command must contain {ref} and {deg}".into()));
        }
        Ok(Self {
            template,
            slots: Mutex::new(workers.max(1)),
            freed: Condvar::new(),
        })
    }

    fn acquire(&self) {
        let mut free = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.slots.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.freed.notify_one();
    }

    fn run(&self, reference: &Path, degraded: &Path) -> Result<f64> {
        let args: Vec<String> = self
            .template
            .iter()
            .map(|t| {
                t.replace("{ref}", &reference.to_string_lossy())
                    .replace("{deg}", &degraded.to_string_lossy())
            })
            .collect();
        let out = Command::new(&args[0])
            .args(&args[1..])
            .output()
            .map_err(|e| Error::Scorer(format!("cannot run '{}': {e}", args[0])))?;
        if !out.status.success() {
            return Err(Error::Scorer(format!("'{}' exited with {}", args[0], out.status)));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let value = stdout
            .split(|c: char| c.is_whitespace() || c == ',' || c == ':' || c == '=')
            .filter_map(|tok| tok.parse::<f64>().ok())
            .next_back()
            .ok_or_else(|| Error::Scorer(format!("no number in scorer output: {}", stdout.trim())))?;
        if !(-0.5..=4.5).contains(&value) {
            return Err(Error::Scorer(format!("PESQ {value} outside [-0.5, 4.5]")));
        }
        Ok(value)
    }
}

impl PesqScorer for CommandPesq {
    fn score(&self, reference: &Path, degraded: &Path) -> Result<f64> {
        self.acquire();
        let r = self.run(reference, degraded);
        self.release();
        r
    }

    fn describe(&self) -> String {
        self.template.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_last_number_from_stdout() {
        let p = CommandPesq::new("echo PESQ: 1.0 score={deg}{ref} 2.75", 2).unwrap();
        assert_eq!(p.score(Path::new("a"), Path::new("b")).unwrap(), 2.75);
    }

    #[test]
    fn rejects_out_of_range_and_bad_templates() {
        let p = CommandPesq::new("echo 7.0 {ref} {deg}", 1).unwrap();
        assert!(p.score(Path::new("a"), Path::new("b")).is_err());
        assert!(CommandPesq::new("echo {ref}", 1).is_err());
        let missing = CommandPesq::new("/nonexistent/scorer {ref} {deg}", 1).unwrap();
        assert!(missing.score(Path::new("a"), Path::new("b")).is_err());
    }
}
