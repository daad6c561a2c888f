//! Compound vectors: whole-formula embeddings and composition-averaged
//! elemental embeddings with an optional contextualization prefix.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elements::Element;
use crate::embedding::{
    EmbeddingError, EmbeddingProvider, EmbeddingRequest, EmbeddingVector, Pooling,
};
use crate::formula::Composition;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompoundError {
    #[error("embedding `{subject}` failed: {source}")]
    Provider {
        subject: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("element vectors disagree in dimension ({expected} vs {actual})")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// How a compound (or named entity) becomes a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Embed the canonical formula string directly.
    WholeFormula,
    /// Atomic-fraction-weighted sum of (contextualized) element-name vectors.
    CompositionAveraged,
    /// Embed a named entity (e.g. a country) with the context prefix.
    Entity,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::WholeFormula => "whole_formula",
            Strategy::CompositionAveraged => "composition_averaged",
            Strategy::Entity => "entity",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Contextualization prefix placed in front of the subject word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ContextSpec {
    pub term: String,
}

impl ContextSpec {
    pub fn new(term: impl Into<String>) -> Self {
        ContextSpec { term: term.into() }
    }

    pub fn none() -> Self {
        ContextSpec::default()
    }

    /// `"<term> <subject>"`, or just the subject when the term is empty,
    /// together with the character range the subject occupies.
    pub fn render(&self, subject: &str) -> (String, Range<usize>) {
        if self.term.is_empty() {
            return (subject.to_string(), 0..subject.chars().count());
        }
        let start = self.term.chars().count() + 1;
        (
            format!("{} {subject}", self.term),
            start..start + subject.chars().count(),
        )
    }

    /// Embedding request for a subject under this context.
    pub fn request(&self, subject: &str, pooling: Pooling) -> Result<EmbeddingRequest, EmbeddingError> {
        let (phrase, span) = self.render(subject);
        match pooling {
            Pooling::WholeInput => Ok(EmbeddingRequest::whole(phrase)),
            Pooling::TargetSpan => EmbeddingRequest::span(phrase, span),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundVector<T = f64> {
    pub composition: Composition,
    pub strategy: Strategy,
    pub context: ContextSpec,
    pub vector: EmbeddingVector<T>,
}

/// Embeds the canonical formula string with whole-input pooling.
pub fn whole_formula_vector<P: EmbeddingProvider + ?Sized>(
    composition: &Composition,
    provider: &P,
) -> Result<CompoundVector, CompoundError> {
    let formula = composition.canonical_string();
    let vector = provider
        .embed(&EmbeddingRequest::whole(formula.clone()))
        .map_err(|source| CompoundError::Provider {
            subject: formula,
            source,
        })?;
    Ok(CompoundVector {
        composition: composition.clone(),
        strategy: Strategy::WholeFormula,
        context: ContextSpec::none(),
        vector,
    })
}

/// Embeds the lowercase element name under `context`.
pub fn element_vector<P: EmbeddingProvider + ?Sized>(
    element: Element,
    context: &ContextSpec,
    pooling: Pooling,
    provider: &P,
) -> Result<EmbeddingVector, CompoundError> {
    let request = context
        .request(element.name(), pooling)
        .map_err(|source| CompoundError::Provider {
            subject: element.name().to_string(),
            source,
        })?;
    provider
        .embed(&request)
        .map_err(|source| CompoundError::Provider {
            subject: request.text().to_string(),
            source,
        })
}

/// `Σ w_i v_i`, summed left to right. The accumulator starts from the first
/// term, so a single unit weight reproduces its vector bit for bit.
pub fn weighted_sum<T: Scalar>(terms: &[(T, &[T])]) -> Result<Vec<T>, CompoundError> {
    let Some(((w0, v0), rest)) = terms.split_first() else {
        return Err(CompoundError::DimensionMismatch {
            expected: 0,
            actual: 0,
        });
    };
    let mut acc: Vec<T> = v0.iter().map(|&x| *w0 * x).collect();
    for (w, v) in rest {
        if v.len() != acc.len() {
            return Err(CompoundError::DimensionMismatch {
                expected: acc.len(),
                actual: v.len(),
            });
        }
        for (a, &x) in acc.iter_mut().zip(v.iter()) {
            *a += *w * x;
        }
    }
    Ok(acc)
}

/// Weighted average of already-computed element vectors, in canonical
/// element order. `lookup` supplies `v_X` for each element.
pub fn average_element_vectors<'a, T, F>(
    composition: &Composition,
    mut lookup: F,
) -> Result<EmbeddingVector<T>, CompoundError>
where
    T: Scalar,
    F: FnMut(Element) -> &'a EmbeddingVector<T>,
{
    let fractions = composition.atomic_fractions();
    let vectors: Vec<&EmbeddingVector<T>> = fractions.iter().map(|&(e, _)| lookup(e)).collect();
    let terms: Vec<(T, &[T])> = fractions
        .iter()
        .zip(&vectors)
        .map(|(&(_, w), v)| (T::of(w), v.values()))
        .collect();
    let sum = weighted_sum(&terms)?;
    Ok(EmbeddingVector::new(sum).expect("finite combination of finite vectors"))
}

/// Composition-averaged elemental embedding `v_C = Σ_X w_X v_X`.
pub fn composition_averaged_vector<P: EmbeddingProvider + ?Sized>(
    composition: &Composition,
    context: &ContextSpec,
    pooling: Pooling,
    provider: &P,
) -> Result<CompoundVector, CompoundError> {
    let elements: Vec<Element> = composition.elements().collect();
    let requests = elements
        .iter()
        .map(|e| {
            context
                .request(e.name(), pooling)
                .map_err(|source| CompoundError::Provider {
                    subject: e.name().to_string(),
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut vectors = Vec::with_capacity(elements.len());
    for (request, outcome) in requests.iter().zip(provider.embed_each(&requests)) {
        vectors.push(outcome.map_err(|source| CompoundError::Provider {
            subject: request.text().to_string(),
            source,
        })?);
    }
    let vector = average_element_vectors(composition, |e| {
        let i = elements.iter().position(|&x| x == e).expect("element present");
        &vectors[i]
    })?;
    Ok(CompoundVector {
        composition: composition.clone(),
        strategy: Strategy::CompositionAveraged,
        context: context.clone(),
        vector,
    })
}
