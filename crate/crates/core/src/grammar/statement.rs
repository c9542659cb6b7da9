//! Statement text: `<Color> <size> <shape> thing at <vertical> <horizontal>`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::BinBoundaries;
use crate::color::Color;
use crate::things::{Property, ThingWindow};

/// One quantized thing. `color: None` stands for the "any" color word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub horizontal: usize,
    pub vertical: usize,
    pub size: usize,
    pub ratio: usize,
    pub color: Option<Color>,
}

impl Statement {
    pub fn bin(&self, property: Property) -> Option<usize> {
        match property {
            Property::Horizontal => Some(self.horizontal),
            Property::Vertical => Some(self.vertical),
            Property::Size => Some(self.size),
            Property::Ratio => Some(self.ratio),
            Property::Color => self.color.map(Color::index),
        }
    }

    pub fn is_valid_for(&self, bins: usize) -> bool {
        self.horizontal < bins && self.vertical < bins && self.size < bins && self.ratio < bins
    }
}

/// Maps each continuous property to its bin; color is copied through.
pub fn quantize_window(w: &ThingWindow, boundaries: &BinBoundaries) -> Statement {
    Statement {
        horizontal: boundaries.bin_of(Property::Horizontal, w.x),
        vertical: boundaries.bin_of(Property::Vertical, w.y),
        size: boundaries.bin_of(Property::Size, w.size),
        ratio: boundaries.bin_of(Property::Ratio, w.ratio),
        color: Some(w.color),
    }
}

const H3: [&str; 3] = ["left", "middle", "right"];
const V3: [&str; 3] = ["top", "center", "bottom"];
const S3: [&str; 3] = ["small", "medium", "large"];
const R3: [&str; 3] = ["tall", "squared", "wide"];
const H5: [&str; 5] = ["most-left", "left", "middle", "right", "most-right"];
const V5: [&str; 5] = ["most-top", "top", "center", "bottom", "most-bottom"];
const S5: [&str; 5] = ["smallest", "small", "medium", "large", "largest"];
const R5: [&str; 5] = ["most-tall", "tall", "squared", "wide", "most-wide"];

/// Named vocabulary of a property at `bins`, when one exists.
fn named_words(property: Property, bins: usize) -> Option<&'static [&'static str]> {
    match (bins, property) {
        (3, Property::Horizontal) => Some(&H3),
        (3, Property::Vertical) => Some(&V3),
        (3, Property::Size) => Some(&S3),
        (3, Property::Ratio) => Some(&R3),
        (5, Property::Horizontal) => Some(&H5),
        (5, Property::Vertical) => Some(&V5),
        (5, Property::Size) => Some(&S5),
        (5, Property::Ratio) => Some(&R5),
        _ => None,
    }
}

/// Word for bin `k` of a continuous property. Without a named vocabulary the
/// token is `<property>-<k+1>`.
pub fn word(property: Property, bins: usize, k: usize) -> String {
    match named_words(property, bins) {
        Some(words) => words[k].to_string(),
        None => format!("{}-{}", property.name(), k + 1),
    }
}

fn lookup(property: Property, bins: usize, token: &str) -> Option<usize> {
    match named_words(property, bins) {
        Some(words) => words.iter().position(|w| *w == token),
        None => {
            let rest = token.strip_prefix(property.name())?.strip_prefix('-')?;
            if rest.starts_with('+') || rest.starts_with('0') {
                return None;
            }
            let k: usize = rest.parse().ok()?;
            (1..=bins).contains(&k).then(|| k - 1)
        }
    }
}

fn vocabulary(property: Property, bins: usize) -> String {
    match named_words(property, bins) {
        Some(words) => words.join(", "),
        None => format!("{0}-1 .. {0}-{1}", property.name(), bins),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Canonical text of a statement.
pub fn render_statement(s: &Statement, bins: usize) -> String {
    let color = s.color.map_or("any", Color::name);
    format!(
        "{} {} {} thing at {} {}",
        capitalize(color),
        word(Property::Size, bins, s.size),
        word(Property::Ratio, bins, s.ratio),
        word(Property::Vertical, bins, s.vertical),
        word(Property::Horizontal, bins, s.horizontal),
    )
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(h={}, v={}, s={}, r={}, c={})",
            self.horizontal,
            self.vertical,
            self.size,
            self.ratio,
            self.color.map_or("any", Color::name)
        )
    }
}

/// A statement that failed to parse, pointing at the offending token.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{}", self.describe())]
pub struct ParseError {
    /// The offending token, or `None` when the statement ended early.
    pub token: Option<String>,
    /// 1-based token position.
    pub position: usize,
    /// 0-based byte offset of the token in the input.
    pub column: usize,
    pub expected: String,
}

impl ParseError {
    fn describe(&self) -> String {
        match &self.token {
            Some(t) => format!(
                "unexpected token {t:?} at position {} (column {}): expected {}",
                self.position, self.column, self.expected
            ),
            None => format!("statement ended at position {}: expected {}", self.position, self.expected),
        }
    }
}

struct Token<'a> {
    text: String,
    raw: &'a str,
    column: usize,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                let raw = &text[s..i];
                out.push(Token {
                    text: raw.to_lowercase(),
                    raw,
                    column: s,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    // an optional trailing period, attached or standalone
    if let Some(last) = out.last_mut() {
        if last.text == "." {
            out.pop();
        } else if let Some(stripped) = last.text.strip_suffix('.') {
            last.text = stripped.to_string();
        }
    }
    out
}

struct Cursor<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
    end_column: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn error(&self, expected: impl Into<String>) -> ParseError {
        match self.peek() {
            Some(t) => ParseError {
                token: Some(t.raw.to_string()),
                position: self.pos + 1,
                column: t.column,
                expected: expected.into(),
            },
            None => ParseError {
                token: None,
                position: self.pos + 1,
                column: self.end_column,
                expected: expected.into(),
            },
        }
    }

    fn expect_with<T>(&mut self, expected: &str, f: impl Fn(&str) -> Option<T>) -> Result<T, ParseError> {
        match self.peek().and_then(|t| f(&t.text)) {
            Some(v) => {
                self.pos += 1;
                Ok(v)
            }
            None => Err(self.error(expected)),
        }
    }

    fn eat(&mut self, word: &str) -> bool {
        if self.peek().is_some_and(|t| t.text == word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }
}

/// Parses statement text for a vocabulary with `bins` words per property.
///
/// Case-insensitive. The word `thing` and a trailing period are optional,
/// `any` is accepted as a color, and `at center` without a horizontal word
/// means the middle column.
pub fn parse_statement(text: &str, bins: usize) -> Result<Statement, ParseError> {
    let mut cur = Cursor {
        tokens: tokenize(text),
        pos: 0,
        end_column: text.trim_end().len(),
    };
    let color = cur.expect_with("a color (one of the 11 color names, or any)", |t| {
        if t == "any" {
            Some(None)
        } else {
            t.parse::<Color>().ok().map(Some)
        }
    })?;
    let size = cur.expect_with(
        &format!("a size word ({})", vocabulary(Property::Size, bins)),
        |t| lookup(Property::Size, bins, t),
    )?;
    let ratio = cur.expect_with(
        &format!("a shape word ({})", vocabulary(Property::Ratio, bins)),
        |t| lookup(Property::Ratio, bins, t),
    )?;
    cur.eat("thing");
    if !cur.eat("at") {
        return Err(cur.error("\"at\""));
    }
    let vertical = cur.expect_with(
        &format!("a vertical position ({})", vocabulary(Property::Vertical, bins)),
        |t| lookup(Property::Vertical, bins, t),
    )?;
    let horizontal_expected = format!("a horizontal position ({})", vocabulary(Property::Horizontal, bins));
    let horizontal = if cur.peek().is_none() && named_words(Property::Vertical, bins).is_some_and(|w| w[vertical] == "center") {
        bins / 2
    } else {
        cur.expect_with(&horizontal_expected, |t| lookup(Property::Horizontal, bins, t))?
    };
    if cur.peek().is_some() {
        return Err(cur.error("end of statement"));
    }
    Ok(Statement {
        horizontal,
        vertical,
        size,
        ratio,
        color,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(h: usize, v: usize, s: usize, r: usize, c: Color) -> Statement {
        Statement {
            horizontal: h,
            vertical: v,
            size: s,
            ratio: r,
            color: Some(c),
        }
    }

    #[test]
    fn renders_the_canonical_examples() {
        assert_eq!(
            render_statement(&st(1, 0, 0, 1, Color::Green), 3),
            "Green small squared thing at top middle"
        );
        assert_eq!(
            render_statement(&st(2, 0, 2, 2, Color::Blue), 3),
            "Blue large wide thing at top right"
        );
        assert_eq!(
            render_statement(&st(0, 4, 4, 0, Color::Red), 5),
            "Red largest most-tall thing at most-bottom most-left"
        );
        assert_eq!(
            render_statement(&st(6, 0, 3, 1, Color::Grey), 7),
            "Grey size-4 ratio-2 thing at vertical-1 horizontal-7"
        );
    }

    #[test]
    fn parses_human_statements() {
        assert_eq!(
            parse_statement("Green large wide at bottom middle.", 3).unwrap(),
            st(1, 2, 2, 2, Color::Green)
        );
        assert_eq!(
            parse_statement("blue LARGE wide thing at top right", 3).unwrap(),
            parse_statement("Blue large wide thing at top right", 3).unwrap()
        );
        assert_eq!(
            parse_statement("Blue large wide at center.", 3).unwrap(),
            st(1, 1, 2, 2, Color::Blue)
        );
        assert_eq!(
            parse_statement("White small wide at center middle", 3).unwrap(),
            st(1, 1, 0, 2, Color::White)
        );
        assert_eq!(
            parse_statement("Grey small squared at bottom left .", 3).unwrap(),
            st(0, 2, 0, 1, Color::Grey)
        );
        let any = parse_statement("Any small tall thing at top left", 3).unwrap();
        assert_eq!(any.color, None);
    }

    #[test]
    fn rejects_unknown_words_with_position() {
        let e = parse_statement("Blue enormous wide thing at top right", 3).unwrap_err();
        assert_eq!(e.token.as_deref(), Some("enormous"));
        assert_eq!(e.position, 2);
        assert_eq!(e.column, 5);
        assert!(e.to_string().contains("enormous"));

        let e = parse_statement("Mauve small tall thing at top left", 3).unwrap_err();
        assert_eq!(e.position, 1);

        let e = parse_statement("Blue small tall thing at top", 3).unwrap_err();
        assert_eq!(e.token, None);
        assert_eq!(e.position, 7);

        let e = parse_statement("Blue small tall thing at top left please", 3).unwrap_err();
        assert_eq!(e.token.as_deref(), Some("please"));

        assert!(parse_statement("", 3).is_err());
        assert!(parse_statement("Blue small tall thing near top left", 3).is_err());
    }

    #[test]
    fn vocabulary_depends_on_bin_count() {
        // "middle" is bin 1 of 3 but bin 2 of 5
        assert_eq!(parse_statement("Red small tall at top middle", 3).unwrap().horizontal, 1);
        assert_eq!(parse_statement("Red small tall at top middle", 5).unwrap().horizontal, 2);
        assert!(parse_statement("Red small tall at top most-left", 3).is_err());
        assert_eq!(
            parse_statement("red size-1 ratio-4 at vertical-2 horizontal-4", 4).unwrap(),
            st(3, 1, 0, 3, Color::Red)
        );
        assert!(parse_statement("red size-0 ratio-4 at vertical-2 horizontal-4", 4).is_err());
        assert!(parse_statement("red size-5 ratio-4 at vertical-2 horizontal-4", 4).is_err());
        assert!(parse_statement("red size-01 ratio-4 at vertical-2 horizontal-4", 4).is_err());
    }

    #[test]
    fn round_trip_at_several_bin_counts() {
        for bins in [2usize, 3, 4, 5, 6] {
            for k in 0..bins {
                let s = st(k, bins - 1 - k, k, (k + 1) % bins, Color::ALL[k % 11]);
                assert_eq!(parse_statement(&render_statement(&s, bins), bins).unwrap(), s);
            }
        }
        let any = Statement { color: None, ..st(0, 0, 0, 0, Color::Black) };
        assert_eq!(parse_statement(&render_statement(&any, 3), 3).unwrap(), any);
    }

    #[test]
    fn quantize_examples() {
        let b = BinBoundaries::uniform(3).unwrap();
        let w = ThingWindow {
            x: 0.1,
            y: 0.1,
            size: 0.05,
            ratio: 0.5,
            color: Color::Green,
        };
        assert_eq!(quantize_window(&w, &b), st(0, 0, 0, 1, Color::Green));
    }
}
