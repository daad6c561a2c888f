//! Chemical formula parsing, canonical formula strings and atomic fractions.
//!
//! Grammar accepted by [`parse_formula`]:
//!
//! ```text
//! formula := item+
//! item    := symbol amount? | "(" item+ ")" amount?
//! amount  := "-"? digits ("." digits)?
//! ```
//!
//! Group amounts multiply, repeated mentions of an element add up, and an
//! omitted amount means 1. Whitespace is rejected rather than skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::elements::Element;

/// Maximum parenthesis nesting depth accepted by the parser.
pub const MAX_NESTING: usize = 16;

/// Significant digits used when printing non-integer amounts.
pub const AMOUNT_SIGNIFICANT_DIGITS: i32 = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormulaError {
    #[error("unknown element `{token}` at offset {offset}")]
    UnknownElement { token: String, offset: usize },
    #[error("malformed formula at offset {offset}: {reason}")]
    MalformedFormula { reason: String, offset: usize },
    #[error("non-positive amount `{amount}` at offset {offset}")]
    NonPositiveAmount { amount: String, offset: usize },
}

impl FormulaError {
    fn malformed(reason: impl Into<String>, offset: usize) -> Self {
        FormulaError::MalformedFormula {
            reason: reason.into(),
            offset,
        }
    }

    /// Short machine-friendly tag, used in reject reports.
    pub fn kind(&self) -> &'static str {
        match self {
            FormulaError::UnknownElement { .. } => "UnknownElement",
            FormulaError::MalformedFormula { .. } => "MalformedFormula",
            FormulaError::NonPositiveAmount { .. } => "NonPositiveAmount",
        }
    }
}

/// Invalid amounts handed to [`Composition::new`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompositionError {
    #[error("composition has no elements")]
    Empty,
    #[error("amount {amount} for {element} is not a positive finite number")]
    InvalidAmount { element: Element, amount: f64 },
}

/// Map from element to positive stoichiometric amount, kept in canonical
/// (alphabetical by symbol) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    amounts: BTreeMap<Element, f64>,
}

impl Composition {
    /// Builds a composition, summing repeated elements.
    pub fn new<I>(amounts: I) -> Result<Composition, CompositionError>
    where
        I: IntoIterator<Item = (Element, f64)>,
    {
        let mut map = BTreeMap::new();
        for (element, amount) in amounts {
            if !(amount.is_finite() && amount > 0.0) {
                return Err(CompositionError::InvalidAmount { element, amount });
            }
            *map.entry(element).or_insert(0.0) += amount;
        }
        Composition::from_map(map)
    }

    fn from_map(amounts: BTreeMap<Element, f64>) -> Result<Composition, CompositionError> {
        if amounts.is_empty() {
            return Err(CompositionError::Empty);
        }
        if let Some((&element, &amount)) = amounts
            .iter()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0))
        {
            return Err(CompositionError::InvalidAmount { element, amount });
        }
        Ok(Composition { amounts })
    }

    pub fn single(element: Element) -> Composition {
        Composition {
            amounts: BTreeMap::from([(element, 1.0)]),
        }
    }

    pub fn amount(&self, element: Element) -> Option<f64> {
        self.amounts.get(&element).copied()
    }

    /// Elements with their amounts, in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (Element, f64)> + '_ {
        self.amounts.iter().map(|(&e, &a)| (e, a))
    }

    pub fn elements(&self) -> impl Iterator<Item = Element> + '_ {
        self.amounts.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.amounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amounts.is_empty()
    }

    pub fn total_amount(&self) -> f64 {
        self.amounts.values().sum()
    }

    /// Atomic fractions `amount / total`, in canonical order.
    pub fn atomic_fractions(&self) -> Vec<(Element, f64)> {
        let total = self.total_amount();
        self.iter().map(|(e, a)| (e, a / total)).collect()
    }

    /// Canonical formula: symbols sorted alphabetically, integer amounts
    /// without a decimal point, amount 1 omitted, other amounts printed with
    /// up to six significant digits.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        for (element, amount) in self.iter() {
            out.push_str(element.symbol());
            let printed = format_amount(amount);
            if printed != "1" {
                out.push_str(&printed);
            }
        }
        out
    }

    /// Same elements and every amount within `tolerance` (absolute).
    pub fn approx_eq(&self, other: &Composition, tolerance: f64) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((e1, a1), (e2, a2))| e1 == e2 && (a1 - a2).abs() <= tolerance)
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_string())
    }
}

impl FromStr for Composition {
    type Err = FormulaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_formula(s)
    }
}

/// Atomic fractions of a composition, in canonical order.
pub fn atomic_fractions(composition: &Composition) -> Vec<(Element, f64)> {
    composition.atomic_fractions()
}

pub fn canonical_string(composition: &Composition) -> String {
    composition.canonical_string()
}

fn format_amount(amount: f64) -> String {
    if amount.fract() == 0.0 && amount.abs() < 1e15 {
        return format!("{}", amount as i64);
    }
    let magnitude = amount.abs().log10().floor() as i32;
    let decimals = (AMOUNT_SIGNIFICANT_DIGITS - 1 - magnitude).max(0) as usize;
    let mut s = format!("{amount:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// Parses a formula string into a [`Composition`].
pub fn parse_formula(text: &str) -> Result<Composition, FormulaError> {
    let mut parser = Parser {
        text,
        bytes: text.as_bytes(),
        pos: 0,
    };
    if text.is_empty() {
        return Err(FormulaError::malformed("empty formula", 0));
    }
    let amounts = parser.sequence(0)?;
    if parser.pos < parser.bytes.len() {
        // Only a stray closing parenthesis can stop the top-level sequence early.
        return Err(FormulaError::malformed("unmatched `)`", parser.pos));
    }
    Composition::from_map(amounts).map_err(|err| match err {
        CompositionError::Empty => FormulaError::malformed("empty formula", 0),
        CompositionError::InvalidAmount { amount, .. } => {
            FormulaError::malformed(format!("amount {amount} overflows"), 0)
        }
    })
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Parses items until end of input or a `)`, which is left unconsumed.
    fn sequence(&mut self, depth: usize) -> Result<BTreeMap<Element, f64>, FormulaError> {
        let mut amounts = BTreeMap::new();
        loop {
            let start = self.pos;
            match self.peek() {
                None | Some(b')') => break,
                Some(b'(') => {
                    if depth + 1 > MAX_NESTING {
                        return Err(FormulaError::malformed(
                            format!("nesting deeper than {MAX_NESTING}"),
                            start,
                        ));
                    }
                    self.pos += 1;
                    let inner = self.sequence(depth + 1)?;
                    if self.peek() != Some(b')') {
                        return Err(FormulaError::malformed("unmatched `(`", start));
                    }
                    if inner.is_empty() {
                        return Err(FormulaError::malformed("empty group", start));
                    }
                    self.pos += 1;
                    let multiplier = self.amount()?.unwrap_or(1.0);
                    for (element, amount) in inner {
                        *amounts.entry(element).or_insert(0.0) += amount * multiplier;
                    }
                }
                Some(c) if c.is_ascii_alphabetic() => {
                    let element = self.element()?;
                    let amount = self.amount()?.unwrap_or(1.0);
                    *amounts.entry(element).or_insert(0.0) += amount;
                }
                Some(c) if c.is_ascii_digit() || c == b'.' || c == b'-' => {
                    return Err(FormulaError::malformed(
                        "amount without a preceding element or group",
                        start,
                    ));
                }
                Some(c) if c.is_ascii_whitespace() => {
                    return Err(FormulaError::malformed("whitespace is not allowed", start));
                }
                Some(_) => {
                    let ch = self.text[start..].chars().next().unwrap_or('?');
                    return Err(FormulaError::malformed(
                        format!("unexpected character `{ch}`"),
                        start,
                    ));
                }
            }
        }
        Ok(amounts)
    }

    fn element(&mut self) -> Result<Element, FormulaError> {
        let start = self.pos;
        self.pos += 1;
        while self.peek().is_some_and(|c| c.is_ascii_lowercase()) {
            self.pos += 1;
        }
        let token = &self.text[start..self.pos];
        Element::from_symbol(token).ok_or_else(|| FormulaError::UnknownElement {
            token: token.to_string(),
            offset: start,
        })
    }

    fn amount(&mut self) -> Result<Option<f64>, FormulaError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let int_digits = self.pos - digits_start;
        let mut frac_digits = 0;
        if self.peek() == Some(b'.') {
            self.pos += 1;
            let frac_start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            frac_digits = self.pos - frac_start;
            if frac_digits == 0 {
                return Err(FormulaError::malformed("decimal point without digits", start));
            }
        }
        if int_digits + frac_digits == 0 {
            if self.pos > start {
                return Err(FormulaError::malformed("sign without digits", start));
            }
            return Ok(None);
        }
        let literal = &self.text[start..self.pos];
        let value: f64 = literal
            .parse()
            .map_err(|_| FormulaError::malformed(format!("bad amount `{literal}`"), start))?;
        if value <= 0.0 {
            return Err(FormulaError::NonPositiveAmount {
                amount: literal.to_string(),
                offset: start,
            });
        }
        if !value.is_finite() {
            return Err(FormulaError::malformed(format!("amount `{literal}` overflows"), start));
        }
        Ok(Some(value))
    }
}
