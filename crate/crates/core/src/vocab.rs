use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// Reserved constituent label for spans that are not constituents.
pub const EMPTY_LABEL: &str = "<empty>";
/// Reserved pattern label for spans that are not a pattern.
pub const NO_PATTERN: &str = "<none>";
/// Reserved word/POS entry for unseen input.
pub const UNKNOWN: &str = "<unk>";

/// Dense bidirectional label/index map. Index 0 is always the reserved entry
/// passed to [`Vocab::new`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn new(reserved: &str) -> Self {
        let mut v = Vocab { labels: Vec::new(), index: BTreeMap::new() };
        v.insert(reserved);
        v
    }

    /// Builds a vocabulary whose first entry is the reserved label. Duplicates
    /// in `labels` are ignored.
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut it = labels.into_iter();
        let first = it.next().expect("vocabulary needs a reserved label");
        let mut v = Vocab::new(first.as_ref());
        for l in it {
            v.insert(l.as_ref());
        }
        v
    }

    /// Returns the index of `label`, adding it if absent.
    pub fn insert(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(String::from(label));
        self.index.insert(String::from(label), i);
        i
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Index of `label`, or 0 (the reserved entry) when unknown.
    pub fn get_or_reserved(&self, label: &str) -> usize {
        self.get(label).unwrap_or(0)
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}
