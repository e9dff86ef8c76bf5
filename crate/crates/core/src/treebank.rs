//! Bracketed constituency trees.
//!
//! Trees are read from single-line s-expressions such as
//! `(S (NP (DT the) (NN cat)) (VP (VBD sat)))`. The innermost brackets are
//! `(POS word)` preterminals; every other bracket is a constituent. Each node
//! carries its fencepost span: token `t` occupies `(t, t + 1)` and an
//! internal node covers `(first child start, last child end)`.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Separator used when a unary chain is collapsed into one composite label.
pub const UNARY_JOIN: char = '+';

/// A constituency tree with derived fencepost spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tree {
    Internal(Internal),
    Leaf(Leaf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Internal {
    pub label: String,
    pub children: Vec<Tree>,
    pub start: usize,
    pub end: usize,
}

/// A preterminal: one token with its part-of-speech tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leaf {
    pub pos: String,
    pub word: String,
    pub index: usize,
}

/// A constituent `(start, end, label)` over fenceposts, `start < end`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl LabeledSpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self { start, end, label: label.into() }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatErrorKind {
    Unbalanced,
    EmptyNode,
    NoChildren,
    StrayToken,
    TrailingInput,
    RootIsPreterminal,
    EmptyInput,
}

/// Malformed bracketed input; `offset` is a byte offset into the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub kind: FormatErrorKind,
    pub offset: usize,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            FormatErrorKind::Unbalanced => "unbalanced parentheses",
            FormatErrorKind::EmptyNode => "empty node",
            FormatErrorKind::NoChildren => "internal node with zero children",
            FormatErrorKind::StrayToken => "stray token",
            FormatErrorKind::TrailingInput => "trailing input after tree",
            FormatErrorKind::RootIsPreterminal => "root must be a constituent, not a preterminal",
            FormatErrorKind::EmptyInput => "no tree in input",
        };
        write!(f, "{what} at byte {}", self.offset)
    }
}

impl core::error::Error for FormatError {}

impl Tree {
    /// Builds a preterminal at position 0.
    pub fn leaf(pos: impl Into<String>, word: impl Into<String>) -> Tree {
        Tree::Leaf(Leaf { pos: pos.into(), word: word.into(), index: 0 })
    }

    /// Builds an internal node, re-deriving the spans of `children` so that they
    /// are contiguous and start at 0.
    ///
    /// Panics if `children` is empty.
    pub fn internal(label: impl Into<String>, children: Vec<Tree>) -> Tree {
        assert!(!children.is_empty(), "internal node needs at least one child");
        let mut node = Tree::Internal(Internal { label: label.into(), children, start: 0, end: 0 });
        node.reindex(0);
        node
    }

    pub fn start(&self) -> usize {
        match self {
            Tree::Internal(n) => n.start,
            Tree::Leaf(l) => l.index,
        }
    }

    pub fn end(&self) -> usize {
        match self {
            Tree::Internal(n) => n.end,
            Tree::Leaf(l) => l.index + 1,
        }
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start(), self.end())
    }

    /// Constituent label for internal nodes, POS tag for leaves.
    pub fn label(&self) -> &str {
        match self {
            Tree::Internal(n) => &n.label,
            Tree::Leaf(l) => &l.pos,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf(_))
    }

    pub fn children(&self) -> &[Tree] {
        match self {
            Tree::Internal(n) => &n.children,
            Tree::Leaf(_) => &[],
        }
    }

    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.end() - self.start()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Recomputes all spans so that the tree starts at fencepost `start`.
    /// Returns the end fencepost.
    pub fn reindex(&mut self, start: usize) -> usize {
        match self {
            Tree::Leaf(l) => {
                l.index = start;
                start + 1
            }
            Tree::Internal(n) => {
                let mut pos = start;
                for child in &mut n.children {
                    pos = child.reindex(pos);
                }
                n.start = start;
                n.end = pos;
                pos
            }
        }
    }

    /// The leaves in sentence order.
    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Leaf>) {
        match self {
            Tree::Leaf(l) => out.push(l),
            Tree::Internal(n) => n.children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    /// `(word, pos)` pairs in sentence order.
    pub fn tokens(&self) -> Vec<(String, String)> {
        self.leaves().into_iter().map(|l| (l.word.clone(), l.pos.clone())).collect()
    }

    pub fn words(&self) -> Vec<&str> {
        self.leaves().into_iter().map(|l| l.word.as_str()).collect()
    }

    /// Pre-order traversal over every node, leaves included.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Tree)) {
        f(self);
        for child in self.children() {
            child.visit(f);
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf(l) => write!(f, "({} {})", l.pos, l.word),
            Tree::Internal(n) => {
                write!(f, "({}", n.label)?;
                for child in &n.children {
                    write!(f, " {child}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Canonical single-line form: single spaces, no trailing whitespace.
pub fn serialize(tree: &Tree) -> String {
    alloc::format!("{tree}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(usize, Token<'_>)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push((i, Token::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Token::Close));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let begin = i;
                while i < bytes.len() && !matches!(bytes[i], b'(' | b')') && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                out.push((begin, Token::Atom(&text[begin..i])));
            }
        }
    }
    out
}

struct Reader<'a> {
    tokens: Vec<(usize, Token<'a>)>,
    pos: usize,
    text_len: usize,
}

impl<'a> Reader<'a> {
    fn peek(&self) -> Option<(usize, Token<'a>)> {
        self.tokens.get(self.pos).copied()
    }

    fn err(&self, kind: FormatErrorKind, offset: usize) -> FormatError {
        FormatError { kind, offset }
    }

    fn node(&mut self) -> Result<Tree, FormatError> {
        let (open_at, tok) = self.peek().ok_or(self.err(FormatErrorKind::Unbalanced, self.text_len))?;
        if tok != Token::Open {
            return Err(self.err(FormatErrorKind::StrayToken, open_at));
        }
        self.pos += 1;
        let label = match self.peek() {
            Some((_, Token::Atom(a))) => {
                self.pos += 1;
                a
            }
            Some((at, Token::Close)) => return Err(self.err(FormatErrorKind::EmptyNode, at)),
            Some((at, Token::Open)) => return Err(self.err(FormatErrorKind::EmptyNode, at)),
            None => return Err(self.err(FormatErrorKind::Unbalanced, self.text_len)),
        };
        match self.peek() {
            Some((_, Token::Atom(word))) => {
                self.pos += 1;
                match self.peek() {
                    Some((_, Token::Close)) => {
                        self.pos += 1;
                        Ok(Tree::leaf(label, word))
                    }
                    Some((at, _)) => Err(self.err(FormatErrorKind::StrayToken, at)),
                    None => Err(self.err(FormatErrorKind::Unbalanced, self.text_len)),
                }
            }
            Some((at, Token::Close)) => Err(self.err(FormatErrorKind::NoChildren, at)),
            None => Err(self.err(FormatErrorKind::Unbalanced, self.text_len)),
            Some((_, Token::Open)) => {
                let mut children = Vec::new();
                loop {
                    match self.peek() {
                        Some((_, Token::Open)) => children.push(self.node()?),
                        Some((_, Token::Close)) => {
                            self.pos += 1;
                            break;
                        }
                        Some((at, Token::Atom(_))) => return Err(self.err(FormatErrorKind::StrayToken, at)),
                        None => return Err(self.err(FormatErrorKind::Unbalanced, self.text_len)),
                    }
                }
                Ok(Tree::Internal(Internal { label: label.to_owned(), children, start: 0, end: 0 }))
            }
        }
    }
}

/// Parses one bracketed tree and computes its spans.
pub fn parse_bracketed(text: &str) -> Result<Tree, FormatError> {
    let tokens = tokenize(text);
    let mut reader = Reader { tokens, pos: 0, text_len: text.len() };
    if reader.peek().is_none() {
        return Err(reader.err(FormatErrorKind::EmptyInput, 0));
    }
    let mut tree = reader.node()?;
    if let Some((at, tok)) = reader.peek() {
        let kind = match tok {
            Token::Close => FormatErrorKind::Unbalanced,
            _ => FormatErrorKind::TrailingInput,
        };
        return Err(reader.err(kind, at));
    }
    if tree.is_leaf() {
        return Err(reader.err(FormatErrorKind::RootIsPreterminal, 0));
    }
    tree.reindex(0);
    Ok(tree)
}

/// Merges every chain of single-child constituents into one node labeled
/// `A+B+...` (outermost first). Preterminals are never merged.
pub fn collapse_unaries(tree: &Tree) -> Tree {
    match tree {
        Tree::Leaf(_) => tree.clone(),
        Tree::Internal(n) => {
            let mut label = n.label.clone();
            let mut cur = n;
            while let [Tree::Internal(only)] = cur.children.as_slice() {
                label.push(UNARY_JOIN);
                label.push_str(&only.label);
                cur = only;
            }
            Tree::Internal(Internal {
                label,
                children: cur.children.iter().map(collapse_unaries).collect(),
                start: n.start,
                end: n.end,
            })
        }
    }
}

/// Inverse of [`collapse_unaries`]: splits `A+B` labels back into chains.
pub fn expand_unaries(tree: &Tree) -> Tree {
    match tree {
        Tree::Leaf(_) => tree.clone(),
        Tree::Internal(n) => {
            let children: Vec<Tree> = n.children.iter().map(expand_unaries).collect();
            let mut parts = n.label.rsplit(UNARY_JOIN);
            // rsplit always yields at least one item
            let innermost = parts.next().unwrap_or_default();
            let mut node = Internal { label: innermost.to_owned(), children, start: n.start, end: n.end };
            for outer in parts {
                node = Internal {
                    label: outer.to_owned(),
                    children: alloc::vec![Tree::Internal(node)],
                    start: n.start,
                    end: n.end,
                };
            }
            Tree::Internal(node)
        }
    }
}

/// One labeled span per internal node, in pre-order. Preterminals excluded.
pub fn tree_to_spans(tree: &Tree) -> Vec<LabeledSpan> {
    let mut out = Vec::new();
    tree.visit(&mut |node| {
        if let Tree::Internal(n) = node {
            out.push(LabeledSpan::new(n.start, n.end, n.label.clone()));
        }
    });
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpansError {
    /// Two spans cross or a span falls outside `0..=n`.
    Crossing(LabeledSpan),
    /// Two spans share the same `(start, end)`.
    Duplicate(LabeledSpan),
}

impl fmt::Display for SpansError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpansError::Crossing(s) => write!(f, "span ({}, {}, {}) does not nest", s.start, s.end, s.label),
            SpansError::Duplicate(s) => write!(f, "duplicate span ({}, {})", s.start, s.end),
        }
    }
}

impl core::error::Error for SpansError {}

/// Rebuilds a tree over `tokens` from a nested span set. The root span `(0, n)`
/// must be present; labels are used as-is (composite labels stay collapsed).
pub fn spans_to_tree(tokens: &[(String, String)], spans: &[LabeledSpan]) -> Result<Tree, SpansError> {
    let n = tokens.len();
    let mut sorted: Vec<&LabeledSpan> = spans.iter().collect();
    // outer spans first: by start ascending, then by end descending
    sorted.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    for w in sorted.windows(2) {
        if w[0].start == w[1].start && w[0].end == w[1].end {
            return Err(SpansError::Duplicate(w[1].clone()));
        }
    }
    let root = match sorted.first() {
        Some(s) if s.start == 0 && s.end == n && n > 0 => *s,
        Some(s) => return Err(SpansError::Crossing((*s).clone())),
        None => return Err(SpansError::Crossing(LabeledSpan::new(0, n, ""))),
    };
    let mut cursor = 1;
    let mut tree = build_node(root, &sorted, &mut cursor, tokens)?;
    if cursor != sorted.len() {
        return Err(SpansError::Crossing(sorted[cursor].clone()));
    }
    tree.reindex(0);
    Ok(tree)
}

fn build_node(
    span: &LabeledSpan,
    sorted: &[&LabeledSpan],
    cursor: &mut usize,
    tokens: &[(String, String)],
) -> Result<Tree, SpansError> {
    let mut children = Vec::new();
    let mut pos = span.start;
    while pos < span.end {
        match sorted.get(*cursor) {
            Some(next) if next.start == pos => {
                if next.end > span.end {
                    return Err(SpansError::Crossing((*next).clone()));
                }
                *cursor += 1;
                let child = build_node(next, sorted, cursor, tokens)?;
                pos = next.end;
                children.push(child);
            }
            Some(next) if next.start < pos => return Err(SpansError::Crossing((*next).clone())),
            _ => {
                let (word, pos_tag) = &tokens[pos];
                children.push(Tree::leaf(pos_tag.clone(), word.clone()));
                pos += 1;
            }
        }
    }
    Ok(Tree::Internal(Internal { label: span.label.clone(), children, start: span.start, end: span.end }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const CAT: &str = "(S (NP (DT the) (NN cat)) (VP (VBD sat)))";

    #[test]
    fn parses_spans() {
        let t = parse_bracketed(CAT).unwrap();
        assert_eq!(t.span(), (0, 3));
        let kids = t.children();
        assert_eq!(kids[0].span(), (0, 2));
        assert_eq!(kids[1].span(), (2, 3));
        assert_eq!(t.words(), vec!["the", "cat", "sat"]);
    }

    #[test]
    fn single_unary() {
        let t = parse_bracketed("(X (NN a))").unwrap();
        assert_eq!(t.span(), (0, 1));
        assert_eq!(tree_to_spans(&collapse_unaries(&t)), vec![LabeledSpan::new(0, 1, "X")]);
    }

    #[test]
    fn format_errors() {
        let e = parse_bracketed("(S (NP (DT the))").unwrap_err();
        assert_eq!(e.kind, FormatErrorKind::Unbalanced);
        assert_eq!(e.offset, 16);
        assert_eq!(parse_bracketed("(S ())").unwrap_err().kind, FormatErrorKind::EmptyNode);
        assert_eq!(parse_bracketed("(S)").unwrap_err().kind, FormatErrorKind::NoChildren);
        let e = parse_bracketed("(NP (DT a) b)").unwrap_err();
        assert_eq!((e.kind, e.offset), (FormatErrorKind::StrayToken, 11));
        assert_eq!(parse_bracketed("(NN a b)").unwrap_err().kind, FormatErrorKind::StrayToken);
        assert_eq!(parse_bracketed("(S (NN a)))").unwrap_err().kind, FormatErrorKind::Unbalanced);
        assert_eq!(parse_bracketed("(S (NN a)) x").unwrap_err().kind, FormatErrorKind::TrailingInput);
        assert_eq!(parse_bracketed("(NN a)").unwrap_err().kind, FormatErrorKind::RootIsPreterminal);
        assert_eq!(parse_bracketed("  ").unwrap_err().kind, FormatErrorKind::EmptyInput);
    }

    #[test]
    fn serialize_round_trip() {
        let t = parse_bracketed(CAT).unwrap();
        assert_eq!(serialize(&t), CAT);
        let messy = "( S\n  (NP (DT the)   (NN cat) )(VP (VBD sat)))  ";
        assert_eq!(serialize(&parse_bracketed(messy).unwrap()), CAT);
    }

    #[test]
    fn programmatic_construction() {
        let t = Tree::internal("A", vec![Tree::leaf("P", "w1"), Tree::leaf("P", "w2")]);
        assert_eq!(serialize(&t), "(A (P w1) (P w2))");
        assert_eq!(t.children()[1].span(), (1, 2));
    }

    #[test]
    fn collapse_and_expand() {
        let cases =
            [("(S (VP (VB go)))", "(S+VP (VB go))"), (CAT, CAT), ("(A (B (C (X x) (Y y))))", "(A+B+C (X x) (Y y))")];
        for (src, collapsed) in cases {
            let t = parse_bracketed(src).unwrap();
            let c = collapse_unaries(&t);
            assert_eq!(serialize(&c), collapsed);
            assert_eq!(expand_unaries(&c), t);
        }
        let c = collapse_unaries(&parse_bracketed("(S (VP (VB go)))").unwrap());
        assert_eq!(c.span(), (0, 1));
        assert!(c.children()[0].is_leaf());
    }

    #[test]
    fn collapse_inside_tree() {
        let t = parse_bracketed("(S (NP (PRP he)) (VP (ADVP (RB up))) (S (VP (VB go) (NN x))))").unwrap();
        let c = collapse_unaries(&t);
        assert_eq!(serialize(&c), "(S (NP (PRP he)) (VP+ADVP (RB up)) (S+VP (VB go) (NN x)))");
    }

    #[test]
    fn spans_read_off() {
        let t = parse_bracketed(CAT).unwrap();
        assert_eq!(
            tree_to_spans(&t),
            vec![LabeledSpan::new(0, 3, "S"), LabeledSpan::new(0, 2, "NP"), LabeledSpan::new(2, 3, "VP")]
        );
    }

    #[test]
    fn spans_to_tree_rebuilds() {
        let t = collapse_unaries(&parse_bracketed(CAT).unwrap());
        let rebuilt = spans_to_tree(&t.tokens(), &tree_to_spans(&t)).unwrap();
        assert_eq!(rebuilt, t);
    }

    #[test]
    fn spans_to_tree_rejects_crossing() {
        let tokens: Vec<(String, String)> =
            ["a", "b", "c"].iter().map(|w| (String::from(*w), String::from("X"))).collect();
        let spans = vec![LabeledSpan::new(0, 3, "S"), LabeledSpan::new(0, 2, "A"), LabeledSpan::new(1, 3, "B")];
        assert!(matches!(spans_to_tree(&tokens, &spans), Err(SpansError::Crossing(_))));
        let dup = vec![LabeledSpan::new(0, 3, "S"), LabeledSpan::new(0, 3, "T")];
        assert!(matches!(spans_to_tree(&tokens, &dup), Err(SpansError::Duplicate(_))));
        assert!(spans_to_tree(&tokens, &[LabeledSpan::new(0, 2, "S")]).is_err());
    }
}
