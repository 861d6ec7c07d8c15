//! Perplexity, length-bucketed evaluation, and greedy decoding.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::cross_entropy_logits_sum;
use crate::training::data::Corpus;

/// Sum of next-token negative log-likelihoods over one document and the
/// number of predicted positions (len - 1).
pub fn sequence_nll(model: &Model, tokens: &[u16]) -> Result<(f64, usize)> {
    if tokens.len() < 2 {
        return Err(Error::Shape {
            op: "sequence_nll",
            detail: format!("{} tokens admit no predictions", tokens.len()),
        });
    }
    let (logits, _) = model.forward(tokens)?;
    let m = tokens.len() - 1;
    let mut head = crate::numerics::Tensor2D::zeros(m, logits.cols());
    for i in 0..m {
        head.row_mut(i).copy_from_slice(logits.row(i));
    }
    let (nll, _, count) = cross_entropy_logits_sum(&head, &tokens[1..])?;
    Ok((nll, count))
}

/// exp(mean next-token NLL) over every document with at least 2 tokens.
pub fn perplexity(model: &Model, corpus: &Corpus) -> Result<f64> {
    let mut total_nll = 0.0f64;
    let mut total_pred = 0usize;
    for doc in &corpus.docs {
        if doc.tokens.len() < 2 {
            continue;
        }
        let (nll, count) = sequence_nll(model, &doc.tokens)?;
        total_nll += nll;
        total_pred += count;
    }
    if total_pred == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok((total_nll / total_pred as f64).exp())
}

/// Stats for documents with length in ((bucket-1) * width, bucket * width].
#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub bucket: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub docs: usize,
    pub predicted_tokens: usize,
    /// None when the bucket holds no document with at least 2 tokens.
    pub perplexity: Option<f64>,
}

/// Perplexity broken out by document length. Buckets run from 1 to the
/// bucket of the longest document; empty buckets are reported with no
/// perplexity.
pub fn bucket_eval(model: &Model, corpus: &Corpus, width: usize) -> Result<Vec<BucketReport>> {
    if width == 0 {
        return Err(Error::Config("bucket width must be positive".to_string()));
    }
    let max_len = corpus.docs.iter().map(|d| d.tokens.len()).max().unwrap_or(0);
    if max_len == 0 {
        return Err(Error::EmptyCorpus);
    }
    let buckets = max_len.div_ceil(width);
    let mut nll = vec![0.0f64; buckets];
    let mut preds = vec![0usize; buckets];
    let mut docs = vec![0usize; buckets];
    for doc in &corpus.docs {
        let len = doc.tokens.len();
        if len == 0 {
            continue;
        }
        let b = len.div_ceil(width) - 1;
        docs[b] += 1;
        if len < 2 {
            continue;
        }
        let (s, c) = sequence_nll(model, &doc.tokens)?;
        nll[b] += s;
        preds[b] += c;
    }
    Ok((0..buckets)
        .map(|b| BucketReport {
            bucket: b + 1,
            min_len: b * width + 1,
            max_len: (b + 1) * width,
            docs: docs[b],
            predicted_tokens: preds[b],
            perplexity: if preds[b] > 0 { Some((nll[b] / preds[b] as f64).exp()) } else { None },
        })
        .collect())
}

/// Greedy continuation of `prompt`: repeatedly append the argmax next token
/// (ties to the lowest id), stopping after `max_new` tokens or on `eos`.
/// Returns the prompt plus the continuation.
pub fn greedy_decode(
    model: &Model,
    prompt: &[u16],
    max_new: usize,
    eos: Option<u16>,
) -> Result<Vec<u16>> {
    if prompt.is_empty() {
        return Err(Error::Shape {
            op: "greedy_decode",
            detail: "empty prompt".to_string(),
        });
    }
    let final_len = prompt.len() + max_new;
    if final_len > model.config.max_pos {
        return Err(Error::ContextOverflow { len: final_len, max_pos: model.config.max_pos });
    }
    let mut tokens = prompt.to_vec();
    for _ in 0..max_new {
        let (logits, _) = model.forward(&tokens)?;
        let row = logits.row(tokens.len() - 1);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        tokens.push(best as u16);
        if Some(best as u16) == eos {
            break;
        }
    }
    Ok(tokens)
}
