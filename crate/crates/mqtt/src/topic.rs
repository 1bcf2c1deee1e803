//! Topic names, topic filters and wildcard matching.

use std::fmt;
use std::str::FromStr;

use crate::Error;

const LEVEL_SEPARATOR: char = '/';
const SINGLE_LEVEL: &str = "+";
const MULTI_LEVEL: &str = "#";

/// A concrete topic a message is published to. Never contains wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName(String);

impl TopicName {
    pub fn new(s: impl Into<String>) -> Result<Self, Error> {
        let s = s.into();
        if s.is_empty() {
            return Err(Error::InvalidTopic("empty topic name".into()));
        }
        if s.contains(['+', '#']) {
            return Err(Error::InvalidTopic(format!(
                "wildcard character in topic name {s:?}"
            )));
        }
        if s.contains('\0') {
            return Err(Error::InvalidTopic("NUL character in topic".into()));
        }
        Ok(TopicName(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn levels(&self) -> impl Iterator<Item = &str> {
        self.0.split(LEVEL_SEPARATOR)
    }
}

impl FromStr for TopicName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopicName::new(s)
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum FilterLevel {
    Exact(String),
    /// `+`
    Single,
    /// `#`, only ever the final level.
    Multi,
}

/// A subscription pattern. `+` matches exactly one level, a trailing `#`
/// matches any remainder (including none).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicFilter {
    raw: String,
    levels: Vec<FilterLevel>,
}

impl TopicFilter {
    pub fn new(s: impl Into<String>) -> Result<Self, Error> {
        let raw = s.into();
        if raw.is_empty() {
            return Err(Error::InvalidTopic("empty topic filter".into()));
        }
        if raw.contains('\0') {
            return Err(Error::InvalidTopic("NUL character in filter".into()));
        }
        let parts: Vec<&str> = raw.split(LEVEL_SEPARATOR).collect();
        let mut levels = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            let level = match *part {
                SINGLE_LEVEL => FilterLevel::Single,
                MULTI_LEVEL if i + 1 == parts.len() => FilterLevel::Multi,
                MULTI_LEVEL => {
                    return Err(Error::InvalidTopic(format!(
                        "'#' must be the last level in {raw:?}"
                    )))
                }
                p if p.contains(['+', '#']) => {
                    return Err(Error::InvalidTopic(format!(
                        "wildcard must occupy a whole level in {raw:?}"
                    )))
                }
                p => FilterLevel::Exact(p.to_string()),
            };
            levels.push(level);
        }
        Ok(TopicFilter { raw, levels })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn has_wildcards(&self) -> bool {
        self.levels.iter().any(|l| !matches!(l, FilterLevel::Exact(_)))
    }

    pub fn matches(&self, topic: &TopicName) -> bool {
        topic_matches(self, topic)
    }
}

impl FromStr for TopicFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopicFilter::new(s)
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Pairwise level comparison with `+`/`#` wildcard semantics.
pub fn topic_matches(filter: &TopicFilter, topic: &TopicName) -> bool {
    let mut names = topic.levels();
    for level in &filter.levels {
        match level {
            FilterLevel::Multi => return true,
            FilterLevel::Single => {
                if names.next().is_none() {
                    return false;
                }
            }
            FilterLevel::Exact(want) => match names.next() {
                Some(got) if got == want => {}
                _ => return false,
            },
        }
    }
    names.next().is_none()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(f: &str, t: &str) -> bool {
        topic_matches(&TopicFilter::new(f).unwrap(), &TopicName::new(t).unwrap())
    }

    #[test]
    fn exact_match() {
        assert!(m("ward/bed1/bedexit", "ward/bed1/bedexit"));
        assert!(!m("ward/bed1/bedexit", "ward/bed2/bedexit"));
    }

    #[test]
    fn single_level_wildcard() {
        assert!(m("ward/+/bedexit", "ward/bed1/bedexit"));
        assert!(!m("ward/+", "ward/bed1/thermal"));
        assert!(m("+", "ward"));
        assert!(!m("+", "ward/bed1"));
    }

    #[test]
    fn multi_level_wildcard() {
        assert!(m("ward/#", "ward/bed1/thermal/top"));
        // `#` also matches the parent level itself
        assert!(m("ward/#", "ward"));
        assert!(m("#", "robot/arm/cmd"));
        assert!(!m("robot/#", "ward/bed1"));
    }

    #[test]
    fn empty_levels_are_levels() {
        assert!(m("a//b", "a//b"));
        assert!(m("a/+/b", "a//b"));
        assert!(!m("a/b", "a/b/"));
    }

    #[test]
    fn rejects_bad_names_and_filters() {
        assert!(TopicName::new("ward/+/x").is_err());
        assert!(TopicName::new("").is_err());
        assert!(TopicFilter::new("ward/#/x").is_err());
        assert!(TopicFilter::new("ward/b+").is_err());
        assert!(TopicFilter::new("ward/#x").is_err());
        assert!(TopicFilter::new("ward/+/#").is_ok());
    }
}
