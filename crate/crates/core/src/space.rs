//! Finite labelled state and action spaces.

use crate::error::{MimicError, Result};

fn validate_labels(labels: &[String]) -> Result<()> {
    if labels.is_empty() {
        return Err(MimicError::BadLabels);
    }
    for (i, a) in labels.iter().enumerate() {
        if a.is_empty() || a.chars().any(char::is_whitespace) {
            return Err(MimicError::BadLabels);
        }
        if labels[..i].contains(a) {
            return Err(MimicError::BadLabels);
        }
    }
    Ok(())
}

/// Ordered set of distinct state labels; indices are positions in the list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new<I: IntoIterator<Item = T>, T: Into<String>>(labels: I) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        validate_labels(&labels)?;
        Ok(StateSpace { labels })
    }

    /// States labelled `"0" ..= "{n-1}"`.
    pub fn indexed(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Ordered set of distinct action labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    labels: Vec<String>,
}

impl ActionSpace {
    pub fn new<I: IntoIterator<Item = T>, T: Into<String>>(labels: I) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        validate_labels(&labels)?;
        Ok(ActionSpace { labels })
    }

    pub fn indexed(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}
