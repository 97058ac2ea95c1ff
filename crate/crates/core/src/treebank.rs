//! Bracketed constituency trees.
//!
//! Trees arrive pre-parsed, one per line, in the usual S-expression form
//! `(S (NP (DT a) (NN dog)) (VP (VBZ runs)))`. A PTB-style unlabeled wrapper
//! `( (S ...) )` is unwrapped.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tree parse error at offset {offset}: {kind}")]
pub struct TreeParseError {
    /// Byte offset into the input line.
    pub offset: usize,
    pub kind: TreeParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeParseErrorKind {
    #[error("unbalanced parentheses")]
    Unbalanced,
    #[error("empty node")]
    EmptyNode,
    #[error("missing label")]
    MissingLabel,
    #[error("leaf carries more than one token")]
    MultiTokenLeaf,
    #[error("node mixes a bare token with child nodes")]
    MixedChildren,
    #[error("expected '(' to open a tree")]
    ExpectedOpen,
    #[error("trailing input after tree")]
    TrailingInput,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseNode {
    label: String,
    children: Vec<ParseNode>,
    token: Option<String>,
}

impl ParseNode {
    pub fn leaf(label: impl Into<String>, token: impl Into<String>) -> Self {
        ParseNode {
            label: label.into(),
            children: Vec::new(),
            token: Some(token.into()),
        }
    }

    /// # Panics
    /// If `children` is empty.
    pub fn internal(label: impl Into<String>, children: Vec<ParseNode>) -> Self {
        assert!(!children.is_empty(), "internal node needs at least one child");
        ParseNode {
            label: label.into(),
            children,
            token: None,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn children(&self) -> &[ParseNode] {
        &self.children
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn is_leaf(&self) -> bool {
        self.token.is_some()
    }

    /// Label with functional tags (`NP-TMP`, `NP=2`) removed.
    pub fn base_label(&self) -> &str {
        base_label(&self.label)
    }

    pub fn is_np(&self) -> bool {
        self.base_label() == "NP"
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(ParseNode::leaf_count).sum()
        }
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.token {
            Some(tok) => out.push(tok),
            None => self.children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    fn contains_np(&self) -> bool {
        self.children.iter().any(|c| c.is_np() || c.contains_np())
    }

    fn write_to(&self, out: &mut String) {
        out.push('(');
        out.push_str(&self.label);
        match &self.token {
            Some(tok) => {
                out.push(' ');
                out.push_str(tok);
            }
            None => {
                for child in &self.children {
                    out.push(' ');
                    child.write_to(out);
                }
            }
        }
        out.push(')');
    }
}

fn base_label(label: &str) -> &str {
    // -LRB-, -NONE- and friends are whole labels.
    if label.len() > 1 && label.starts_with('-') && label.ends_with('-') {
        return label;
    }
    match label.char_indices().skip(1).find(|&(_, c)| c == '-' || c == '=') {
        Some((pos, _)) => &label[..pos],
        None => label,
    }
}

#[derive(Debug, Clone)]
pub struct ParseTree {
    pub root: ParseNode,
    pub source_line: String,
}

impl PartialEq for ParseTree {
    /// Structural equality; the source text is not compared.
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

/// A lowest-level noun phrase together with the leaf span it covers.
#[derive(Debug, Clone, Copy)]
pub struct LowestNp<'a> {
    pub node: &'a ParseNode,
    pub span: (usize, usize),
}

impl LowestNp<'_> {
    pub fn range(&self) -> Range<usize> {
        self.span.0..self.span.1
    }
}

impl ParseTree {
    pub fn new(root: ParseNode) -> Self {
        let source_line = root.to_string();
        ParseTree { root, source_line }
    }

    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }

    pub fn leaf_tokens(&self) -> Vec<String> {
        self.leaves().into_iter().map(str::to_owned).collect()
    }

    /// NP nodes without any NP descendant, in left-to-right order.
    pub fn lowest_nps(&self) -> Vec<LowestNp<'_>> {
        fn walk<'a>(node: &'a ParseNode, start: usize, out: &mut Vec<LowestNp<'a>>) -> usize {
            if node.is_leaf() {
                return start + 1;
            }
            if node.is_np() && !node.contains_np() {
                let end = start + node.leaf_count();
                out.push(LowestNp {
                    node,
                    span: (start, end),
                });
                return end;
            }
            node.children
                .iter()
                .fold(start, |pos, child| walk(child, pos, out))
        }
        let mut out = Vec::new();
        walk(&self.root, 0, &mut out);
        out
    }

    pub fn serialize(&self) -> String {
        self.root.to_string()
    }
}

impl fmt::Display for ParseNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_to(&mut s);
        f.write_str(&s)
    }
}

pub fn parse_bracketed(text: &str) -> Result<ParseTree, TreeParseError> {
    let mut parser = Parser {
        src: text,
        pos: 0,
    };
    parser.skip_ws();
    if parser.peek().is_none() {
        return Err(parser.error(TreeParseErrorKind::ExpectedOpen));
    }
    let root = parser.node()?;
    parser.skip_ws();
    if parser.peek().is_some() {
        return Err(parser.error(TreeParseErrorKind::TrailingInput));
    }
    Ok(ParseTree {
        root,
        source_line: text.to_owned(),
    })
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

enum Item {
    Node(ParseNode),
    Token(String, usize),
}

impl Parser<'_> {
    fn error(&self, kind: TreeParseErrorKind) -> TreeParseError {
        TreeParseError {
            offset: self.pos,
            kind,
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn atom(&mut self) -> &str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == '(' || c == ')' {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.src[start..self.pos]
    }

    fn node(&mut self) -> Result<ParseNode, TreeParseError> {
        if self.peek() != Some('(') {
            return Err(self.error(TreeParseErrorKind::ExpectedOpen));
        }
        let open = self.pos;
        self.pos += 1;
        self.skip_ws();
        let label = match self.peek() {
            None => return Err(self.error(TreeParseErrorKind::Unbalanced)),
            Some(')') => {
                return Err(TreeParseError {
                    offset: open,
                    kind: TreeParseErrorKind::EmptyNode,
                })
            }
            Some('(') => String::new(),
            Some(_) => self.atom().to_owned(),
        };

        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.error(TreeParseErrorKind::Unbalanced)),
                Some(')') => {
                    self.pos += 1;
                    break;
                }
                Some('(') => items.push(Item::Node(self.node()?)),
                Some(_) => {
                    let at = self.pos;
                    items.push(Item::Token(self.atom().to_owned(), at));
                }
            }
        }

        if label.is_empty() {
            // `( (S ...) )`
            return match items.pop() {
                Some(Item::Node(child)) if items.is_empty() => Ok(child),
                _ => Err(TreeParseError {
                    offset: open,
                    kind: TreeParseErrorKind::MissingLabel,
                }),
            };
        }

        let tokens = items
            .iter()
            .filter(|i| matches!(i, Item::Token(..)))
            .count();
        match (tokens, items.len()) {
            (0, 0) => Err(TreeParseError {
                offset: open,
                kind: TreeParseErrorKind::EmptyNode,
            }),
            (1, 1) => match items.pop() {
                Some(Item::Token(tok, _)) => Ok(ParseNode::leaf(label, tok)),
                _ => unreachable!(),
            },
            (0, _) => Ok(ParseNode::internal(
                label,
                items
                    .into_iter()
                    .map(|i| match i {
                        Item::Node(n) => n,
                        Item::Token(..) => unreachable!(),
                    })
                    .collect(),
            )),
            (t, n) if t == n => {
                let offset = match &items[1] {
                    Item::Token(_, at) => *at,
                    Item::Node(_) => open,
                };
                Err(TreeParseError {
                    offset,
                    kind: TreeParseErrorKind::MultiTokenLeaf,
                })
            }
            _ => Err(TreeParseError {
                offset: open,
                kind: TreeParseErrorKind::MixedChildren,
            }),
        }
    }
}

/// One parsed line of a tree file.
#[derive(Debug)]
pub struct TreeLine {
    /// 1-based line number in the file.
    pub line: usize,
    pub tree: Result<ParseTree, TreeParseError>,
}

/// Parse a tree file: one tree per line, blank lines and `#` comments skipped.
pub fn parse_tree_text(text: &str) -> Vec<TreeLine> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| TreeLine {
            line: i + 1,
            tree: parse_bracketed(l.trim()),
        })
        .collect()
}

pub fn read_tree_file(path: &Path) -> crate::Result<Vec<TreeLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    Ok(parse_tree_text(&text))
}
