//! Symbolic terms, PCR hash chains, and adversary derivability.
//!
//! Terms are free constructors over three disjoint atom classes (public
//! atoms, nonces, private keys) plus the distinguished reset value `rst`.
//! Nothing here is real cryptography: hashing is an injective, non-invertible
//! constructor and signatures can only be produced by someone holding the key
//! atom.
//!
//! The canonical text form is an s-expression:
//!
//! ```text
//! pub:v1   nonce:n   key:sk_t   rst
//! (pair x y)   (hash x)   (sig m k)   (seq v1 v2 ... vn)
//! ```
//!
//! `(seq v1 .. vn)` is sugar for the right-nested chain
//! `(hash (pair vn (hash (pair ... (hash (pair v1 rst))))))` and is what the
//! printer emits whenever a hash chain is recognised.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A symbolic message.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Public(Arc<str>),
    Nonce(Arc<str>),
    Key(Arc<str>),
    /// Reset state of a PCR. Public.
    Rst,
    Pair(Arc<Term>, Arc<Term>),
    Hash(Arc<Term>),
    Sig(Arc<Term>, Arc<Term>),
}

impl Term {
    pub fn public(name: impl AsRef<str>) -> Term {
        Term::Public(Arc::from(name.as_ref()))
    }

    pub fn nonce(name: impl AsRef<str>) -> Term {
        Term::Nonce(Arc::from(name.as_ref()))
    }

    pub fn key(name: impl AsRef<str>) -> Term {
        Term::Key(Arc::from(name.as_ref()))
    }

    pub fn pair(left: Term, right: Term) -> Term {
        Term::Pair(Arc::new(left), Arc::new(right))
    }

    pub fn hash(inner: Term) -> Term {
        Term::Hash(Arc::new(inner))
    }

    pub fn sig(payload: Term, key: Term) -> Term {
        Term::Sig(Arc::new(payload), Arc::new(key))
    }

    /// One PCR extension: `#(value, prev)`.
    pub fn extend(prev: Term, value: Term) -> Term {
        Term::hash(Term::pair(value, prev))
    }

    pub fn is_atom(&self) -> bool {
        matches!(
            self,
            Term::Public(_) | Term::Nonce(_) | Term::Key(_) | Term::Rst
        )
    }

    pub fn is_nonce(&self) -> bool {
        matches!(self, Term::Nonce(_))
    }

    pub fn is_key(&self) -> bool {
        matches!(self, Term::Key(_))
    }

    /// Encodes a non-empty list the way quotes carry PCR and value lists: a
    /// single item stands for itself, longer lists are right-nested pairs.
    pub fn tuple(items: &[Term]) -> Term {
        match items {
            [] => Term::Rst,
            [only] => only.clone(),
            [first, rest @ ..] => Term::pair(first.clone(), Term::tuple(rest)),
        }
    }

    /// Inverse of [`Term::tuple`] for a known arity.
    pub fn untuple(&self, arity: usize) -> Option<Vec<Term>> {
        if arity == 0 {
            return None;
        }
        let mut out = Vec::with_capacity(arity);
        let mut cur = self;
        for _ in 1..arity {
            match cur {
                Term::Pair(l, r) => {
                    out.push((**l).clone());
                    cur = r;
                }
                _ => return None,
            }
        }
        out.push(cur.clone());
        Some(out)
    }

    /// Every subterm, including `self`, in pre-order.
    pub fn subterms(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            out.push(t);
            match t {
                Term::Pair(a, b) | Term::Sig(a, b) => {
                    stack.push(b);
                    stack.push(a);
                }
                Term::Hash(a) => stack.push(a),
                _ => {}
            }
        }
        out
    }
}

/// Builds the hash chain `seq(v1, .., vn)` anchored at `rst`.
pub fn seq_of(values: &[Term]) -> Term {
    values
        .iter()
        .fold(Term::Rst, |acc, v| Term::extend(acc, v.clone()))
}

/// The values of a hash chain, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SeqView {
    pub values: Vec<Term>,
}

impl SeqView {
    pub fn contains(&self, v: &Term) -> bool {
        self.values.contains(v)
    }

    /// `a` is contained before `b` iff some occurrence of `a` precedes some
    /// occurrence of `b`.
    pub fn contained_before(&self, a: &Term, b: &Term) -> bool {
        let first_a = self.values.iter().position(|x| x == a);
        let last_b = self.values.iter().rposition(|x| x == b);
        matches!((first_a, last_b), (Some(i), Some(j)) if i < j)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Reads a term back as a hash chain. `None` when it is not one.
pub fn seq_view(t: &Term) -> Option<SeqView> {
    let mut rev = Vec::new();
    let mut cur = t;
    loop {
        match cur {
            Term::Rst => break,
            Term::Hash(inner) => match &**inner {
                Term::Pair(v, prev) => {
                    rev.push((**v).clone());
                    cur = prev;
                }
                _ => return None,
            },
            _ => return None,
        }
    }
    rev.reverse();
    Some(SeqView { values: rev })
}

/// What an adversary holding a set of terms can produce.
///
/// Construction: pairing, hashing, and signing (signing needs the key).
/// Destruction: pair projection and reading a signature's payload. Hashes
/// are one-way. Public atoms and `rst` are always known.
#[derive(Debug, Clone, Default)]
pub struct Knowledge {
    known: HashSet<Term>,
}

impl Knowledge {
    pub fn new<'a>(base: impl IntoIterator<Item = &'a Term>) -> Knowledge {
        let mut k = Knowledge::default();
        for t in base {
            k.learn(t.clone());
        }
        k
    }

    /// Adds a term and everything that can be taken apart from it.
    pub fn learn(&mut self, t: Term) {
        let mut work = vec![t];
        while let Some(t) = work.pop() {
            if self.known.contains(&t) {
                continue;
            }
            match &t {
                Term::Pair(a, b) => {
                    work.push((**a).clone());
                    work.push((**b).clone());
                }
                Term::Sig(m, _) => work.push((**m).clone()),
                _ => {}
            }
            self.known.insert(t);
        }
    }

    pub fn derives(&self, goal: &Term) -> bool {
        if self.known.contains(goal) {
            return true;
        }
        match goal {
            Term::Public(_) | Term::Rst => true,
            Term::Nonce(_) | Term::Key(_) => false,
            Term::Pair(a, b) => self.derives(a) && self.derives(b),
            Term::Hash(a) => self.derives(a),
            Term::Sig(m, k) => self.derives(k) && self.derives(m),
        }
    }

    /// The analysed (destructor-closed) part of the knowledge.
    pub fn analysed(&self) -> impl Iterator<Item = &Term> {
        self.known.iter()
    }
}

/// `base ⊢ goal`.
pub fn derivable<'a>(base: impl IntoIterator<Item = &'a Term>, goal: &Term) -> bool {
    Knowledge::new(base).derives(goal)
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Public(n) => write!(f, "pub:{n}"),
            Term::Nonce(n) => write!(f, "nonce:{n}"),
            Term::Key(n) => write!(f, "key:{n}"),
            Term::Rst => f.write_str("rst"),
            Term::Hash(inner) => {
                if let Some(view) = seq_view(self) {
                    f.write_str("(seq")?;
                    for v in &view.values {
                        write!(f, " {v}")?;
                    }
                    return f.write_str(")");
                }
                write!(f, "(hash {inner})")
            }
            Term::Pair(a, b) => write!(f, "(pair {a} {b})"),
            Term::Sig(m, k) => write!(f, "(sig {m} {k})"),
        }
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TermParseError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected `{0}`")]
    Unexpected(String),
    #[error("unknown atom `{0}` (expected pub:, nonce:, key: or rst)")]
    UnknownAtom(String),
    #[error("`{head}` takes {expected} argument(s), got {got}")]
    Arity {
        head: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown constructor `{0}`")]
    UnknownConstructor(String),
    #[error("trailing input `{0}`")]
    Trailing(String),
}

fn tokenize(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(st) = start.take() {
                out.push(&s[st..i]);
            }
            if !c.is_whitespace() {
                out.push(&s[i..i + 1]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        out.push(&s[st..]);
    }
    out
}

struct Parser<'a> {
    toks: Vec<&'a str>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn next(&mut self) -> Result<&'a str, TermParseError> {
        let t = self
            .toks
            .get(self.pos)
            .copied()
            .ok_or(TermParseError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn term(&mut self) -> Result<Term, TermParseError> {
        let tok = self.next()?;
        if tok == ")" {
            return Err(TermParseError::Unexpected(tok.into()));
        }
        if tok != "(" {
            return atom(tok);
        }
        let head = self.next()?;
        let mut args = Vec::new();
        loop {
            match self.toks.get(self.pos) {
                None => return Err(TermParseError::UnexpectedEnd),
                Some(&")") => {
                    self.pos += 1;
                    break;
                }
                Some(_) => args.push(self.term()?),
            }
        }
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(TermParseError::Arity {
                    head: head.into(),
                    expected: n,
                    got: args.len(),
                })
            }
        };
        match head {
            "pair" => {
                arity(2)?;
                let b = args.pop().unwrap();
                let a = args.pop().unwrap();
                Ok(Term::pair(a, b))
            }
            "hash" => {
                arity(1)?;
                Ok(Term::hash(args.pop().unwrap()))
            }
            "sig" => {
                arity(2)?;
                let k = args.pop().unwrap();
                let m = args.pop().unwrap();
                Ok(Term::sig(m, k))
            }
            "seq" => Ok(seq_of(&args)),
            other => Err(TermParseError::UnknownConstructor(other.into())),
        }
    }
}

fn atom(tok: &str) -> Result<Term, TermParseError> {
    if tok == "rst" {
        return Ok(Term::Rst);
    }
    let (kind, name) = tok
        .split_once(':')
        .ok_or_else(|| TermParseError::UnknownAtom(tok.into()))?;
    if name.is_empty() {
        return Err(TermParseError::UnknownAtom(tok.into()));
    }
    match kind {
        "pub" => Ok(Term::public(name)),
        "nonce" => Ok(Term::nonce(name)),
        "key" => Ok(Term::key(name)),
        _ => Err(TermParseError::UnknownAtom(tok.into())),
    }
}

/// Parses one term from the front of `s`, returning it and the unread rest.
pub fn parse_term_prefix(s: &str) -> Result<(Term, &str), TermParseError> {
    let toks = tokenize(s);
    let mut p = Parser { toks, pos: 0 };
    let t = p.term()?;
    // Locate the byte offset after the consumed tokens.
    let rest = if p.pos < p.toks.len() {
        let tok = p.toks[p.pos];
        let offset = tok.as_ptr() as usize - s.as_ptr() as usize;
        &s[offset..]
    } else {
        ""
    };
    Ok((t, rest))
}

impl FromStr for Term {
    type Err = TermParseError;

    fn from_str(s: &str) -> Result<Term, TermParseError> {
        let (t, rest) = parse_term_prefix(s)?;
        if !rest.trim().is_empty() {
            return Err(TermParseError::Trailing(rest.trim().into()));
        }
        Ok(t)
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Term, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(n: &str) -> Term {
        Term::public(n)
    }

    #[test]
    fn seq_two_values_nests_right() {
        let expected = Term::hash(Term::pair(
            v("v2"),
            Term::hash(Term::pair(v("v1"), Term::Rst)),
        ));
        assert_eq!(seq_of(&[v("v1"), v("v2")]), expected);
    }

    #[test]
    fn empty_seq_is_rst() {
        assert_eq!(seq_of(&[]), Term::Rst);
        assert_eq!(seq_view(&Term::Rst), Some(SeqView::default()));
    }

    #[test]
    fn seq_view_inverts_and_rejects_non_chains() {
        let chain = seq_of(&[v("v1"), v("v2")]);
        assert_eq!(seq_view(&chain).unwrap().values, vec![v("v1"), v("v2")]);
        assert_eq!(seq_view(&Term::pair(v("a"), v("b"))), None);
        assert_eq!(seq_view(&Term::hash(v("a"))), None);
        // Chain not anchored at rst.
        assert_eq!(seq_view(&Term::hash(Term::pair(v("a"), v("b")))), None);
    }

    #[test]
    fn contained_before_follows_chain_order() {
        let view = seq_view(&seq_of(&[v("a"), v("b"), v("c")])).unwrap();
        assert!(view.contained_before(&v("a"), &v("c")));
        assert!(!view.contained_before(&v("c"), &v("a")));
        assert!(!view.contained_before(&v("a"), &v("a")));
        assert!(view.contains(&v("b")));
    }

    #[test]
    fn signature_needs_the_key() {
        let m = v("m");
        let q = Term::sig(m.clone(), Term::key("sk_t"));
        assert!(!derivable([], &q));
        assert!(derivable([&q], &m));
        assert!(derivable([&q], &q));
        assert!(derivable([&Term::key("sk_t")], &q));
    }

    #[test]
    fn nonces_are_not_guessable() {
        let n = Term::nonce("n");
        assert!(derivable([&n], &seq_of(std::slice::from_ref(&n))));
        assert!(!derivable([&n], &Term::nonce("n2")));
        assert!(!derivable([], &n));
    }

    #[test]
    fn hashes_do_not_leak() {
        let n = Term::nonce("n");
        let h = Term::hash(n.clone());
        assert!(!derivable([&h], &n));
        assert!(derivable([&h], &Term::pair(h.clone(), v("x"))));
    }

    #[test]
    fn pairs_project() {
        let n = Term::nonce("n");
        let k = Term::key("k");
        let p = Term::pair(n.clone(), Term::pair(k.clone(), v("x")));
        assert!(derivable([&p], &n));
        assert!(derivable([&p], &k));
    }

    #[test]
    fn printing_uses_seq_sugar() {
        let q = Term::sig(
            Term::pair(
                Term::nonce("n"),
                Term::pair(v("t.p_r"), seq_of(&[v("v1"), v("v2")])),
            ),
            Term::key("sk_t"),
        );
        assert_eq!(
            q.to_string(),
            "(sig (pair nonce:n (pair pub:t.p_r (seq pub:v1 pub:v2))) key:sk_t)"
        );
        assert_eq!(Term::Rst.to_string(), "rst");
        assert_eq!(Term::hash(v("x")).to_string(), "(hash pub:x)");
    }

    #[test]
    fn parse_round_trips_printed_form() {
        for s in [
            "rst",
            "pub:g:sys",
            "(pair nonce:n key:k)",
            "(hash (pair pub:a pub:b))",
            "(sig (seq pub:v1 (seq pub:v2)) key:sk_t)",
        ] {
            let t: Term = s.parse().unwrap();
            assert_eq!(t.to_string().parse::<Term>().unwrap(), t, "{s}");
        }
        assert_eq!("(seq)".parse::<Term>().unwrap(), Term::Rst);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            "(pair a".parse::<Term>(),
            Err(TermParseError::UnknownAtom(_))
        ));
        assert!(matches!(
            "(pair pub:a".parse::<Term>(),
            Err(TermParseError::UnexpectedEnd)
        ));
        assert!(matches!(
            "(hash pub:a pub:b)".parse::<Term>(),
            Err(TermParseError::Arity { .. })
        ));
        assert!(matches!(
            "(foo)".parse::<Term>(),
            Err(TermParseError::UnknownConstructor(_))
        ));
        assert!(matches!(
            "pub:a pub:b".parse::<Term>(),
            Err(TermParseError::Trailing(_))
        ));
    }

    #[test]
    fn prefix_parse_leaves_rest() {
        let (t, rest) = parse_term_prefix("(seq pub:a) t.p1 t.p2").unwrap();
        assert_eq!(t, seq_of(&[v("a")]));
        assert_eq!(rest, "t.p1 t.p2");
    }

    #[test]
    fn tuple_round_trip() {
        let items = vec![v("a"), Term::pair(v("b"), v("c")), v("d")];
        let t = Term::tuple(&items);
        assert_eq!(t.untuple(3).unwrap(), items);
        assert_eq!(Term::tuple(&items[..1]), v("a"));
        assert_eq!(v("a").untuple(2), None);
    }
}
