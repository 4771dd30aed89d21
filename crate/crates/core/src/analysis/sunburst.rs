use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prefix tree over the first words of a set of questions. A node's count
/// is the number of questions starting with the path to it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SunburstTree {
    pub count: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub children: BTreeMap<String, SunburstTree>,
}

impl SunburstTree {
    /// Questions that end at this node, or are cut off by the depth limit.
    pub fn terminal(&self) -> usize {
        self.count - self.children.values().map(|c| c.count).sum::<usize>()
    }

    /// Levels below this node.
    pub fn depth(&self) -> usize {
        self.children.values().map(|c| 1 + c.depth()).max().unwrap_or(0)
    }

    /// Sum of the counts of the nodes `level` steps below this one.
    pub fn level_total(&self, level: usize) -> usize {
        if level == 0 {
            self.count
        } else {
            self.children.values().map(|c| c.level_total(level - 1)).sum()
        }
    }

    /// True when no node counts fewer questions than its children do.
    pub fn is_consistent(&self) -> bool {
        self.children.values().map(|c| c.count).sum::<usize>() <= self.count
            && self.children.values().all(SunburstTree::is_consistent)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_svg(&self) -> String {
        super::svg::sunburst(self)
    }
}

/// Counts the first `depth` words of every question.
pub fn sunburst_stats<S: AsRef<str>>(questions: &[Vec<S>], depth: usize) -> Result<SunburstTree> {
    if depth < 1 {
        return Err(Error::invalid("sunburst depth must be at least 1"));
    }
    let mut root = SunburstTree::default();
    for q in questions {
        root.count += 1;
        let mut node = &mut root;
        for w in q.iter().take(depth) {
            node = node.children.entry(w.as_ref().to_string()).or_default();
            node.count += 1;
        }
    }
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counts() {
        let t = sunburst_stats(&[vec!["what", "is"], vec!["what", "are"]], 5).unwrap();
        assert_eq!(t.count, 2);
        let what = &t.children["what"];
        assert_eq!(what.count, 2);
        assert_eq!(what.children["is"].count, 1);
        assert_eq!(what.children["are"].count, 1);
        assert_eq!(what.terminal(), 0);
        let empty = sunburst_stats::<&str>(&[], 5).unwrap();
        assert_eq!(empty.count, 0);
        assert!(sunburst_stats::<&str>(&[], 0).is_err());
    }

    #[test]
    fn depth_limit_truncates() {
        let t = sunburst_stats(&[vec!["a", "b", "c"]], 2).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.children["a"].children["b"].terminal(), 1);
        let back = SunburstTree::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
