//! Mapping two monolingual embedding spaces into a shared space via
//! self-learning (alternating orthogonal Procrustes and dictionary
//! induction), and extraction of the top-k translation lexicon.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Word-index pairs used to seed or carry a dictionary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedLexicon {
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedMethod {
    IdenticalStrings,
    Numerals,
    /// Pairs words whose sorted intra-lingual similarity distributions
    /// are nearest across the two spaces.
    SimilarityInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retrieval {
    Dot,
    Csls { neighborhood: usize },
}

impl Default for Retrieval {
    fn default() -> Self {
        Retrieval::Csls { neighborhood: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct AlignmentResult<S: Scalar> {
    /// D×D orthogonal matrix mapping the source space into the target space.
    pub w: Array2<S>,
    pub final_lexicon: SeedLexicon,
    pub iterations: usize,
    /// Mean dot-product similarity over the induced pairs.
    pub objective: f64,
    pub converged: bool,
}

/// Per-word ranked cross-lingual neighbor lists, one map per direction.
#[derive(Debug, Clone, Default)]
pub struct DirectionalLexicon {
    pub entries: HashMap<String, Vec<(String, f64)>>,
    /// Source words in deterministic (vocabulary) order, for stable export.
    pub order: Vec<String>,
}

impl DirectionalLexicon {
    pub fn neighbors(&self, word: &str) -> Option<&[(String, f64)]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Top-k translation vocabulary in both directions.
#[derive(Debug, Clone)]
pub struct TranslationLexicon {
    pub src_to_tgt: DirectionalLexicon,
    pub tgt_to_src: DirectionalLexicon,
    pub k: usize,
}

fn is_numeral(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| c.is_ascii_digit())
}

/// Builds an initial dictionary without supervision.
pub fn seed_lexicon<S: Scalar>(
    e_x: &EmbeddingMatrix<S>,
    e_y: &EmbeddingMatrix<S>,
    method: SeedMethod,
) -> Result<SeedLexicon> {
    let pairs = match method {
        SeedMethod::IdenticalStrings => e_x
            .words()
            .iter()
            .enumerate()
            .filter_map(|(i, w)| e_y.index_of(w).map(|j| (i, j)))
            .collect::<Vec<_>>(),
        SeedMethod::Numerals => e_x
            .words()
            .iter()
            .enumerate()
            .filter(|(_, w)| is_numeral(w))
            .filter_map(|(i, w)| e_y.index_of(w).map(|j| (i, j)))
            .collect(),
        SeedMethod::SimilarityInit => similarity_init(e_x, e_y),
    };
    if pairs.is_empty() {
        return Err(Error::Seeding(format!("{method:?} produced no pairs")));
    }
    Ok(SeedLexicon { pairs })
}

fn similarity_init<S: Scalar>(
    e_x: &EmbeddingMatrix<S>,
    e_y: &EmbeddingMatrix<S>,
) -> Vec<(usize, usize)> {
    let m = e_x.len().min(e_y.len());
    let signature = |e: &EmbeddingMatrix<S>| -> Array2<S> {
        let sim = e.vectors.dot(&e.vectors.t());
        let mut sig = Array2::<S>::zeros((e.len(), m));
        for (i, row) in sim.rows().into_iter().enumerate() {
            let mut vals: Vec<S> = row.to_vec();
            vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
            vals.truncate(m);
            for (j, v) in vals.into_iter().enumerate() {
                sig[(i, j)] = v;
            }
        }
        linalg::unit_rows(&mut sig);
        sig
    };
    let sig_x = signature(e_x);
    let sig_y = signature(e_y);
    let scores = sig_x.dot(&sig_y.t());
    let mut pairs = Vec::with_capacity(e_x.len());
    for (i, row) in scores.rows().into_iter().enumerate() {
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        pairs.push((i, best));
    }
    pairs
}

/// Orthogonal least-squares mapping from the seed pairs:
/// W = U·Vᵀ with U·Σ·Vᵀ the SVD of X_seedᵀ·Y_seed. Returns the matrix
/// and whether the cross-covariance was rank deficient.
pub fn procrustes<S: Scalar>(
    e_x: &EmbeddingMatrix<S>,
    e_y: &EmbeddingMatrix<S>,
    seed: &SeedLexicon,
) -> Result<(Array2<S>, bool)> {
    if seed.pairs.is_empty() {
        return Err(Error::Seeding("empty seed lexicon".into()));
    }
    let d = e_x.dim();
    if e_y.dim() != d {
        return Err(Error::Parameter("dimension mismatch between spaces".into()));
    }
    let mut cross = Array2::<S>::zeros((d, d));
    for &(i, j) in &seed.pairs {
        if i >= e_x.len() || j >= e_y.len() {
            return Err(Error::Index(format!("seed pair ({i},{j}) out of range")));
        }
        let x = e_x.vectors.row(i);
        let y = e_y.vectors.row(j);
        for a in 0..d {
            for b in 0..d {
                cross[(a, b)] += x[a] * y[b];
            }
        }
    }
    let (u, s, vt) = linalg::svd(&cross);
    let scale = s[0].max(S::min_positive_value());
    let degenerate = s.iter().any(|&x| x / scale < S::from_f64_lossy(1e-9));
    Ok((u.dot(&vt), degenerate))
}

/// Retrieval scores of every target row for one mapped source row.
/// `penalties` precomputed by `csls_penalties` when using CSLS.
fn score_row<S: Scalar>(
    mapped: &Array2<S>,
    e_y: &Array2<S>,
    i: usize,
    retrieval: Retrieval,
    penalties: Option<&(Vec<f64>, Vec<f64>)>,
) -> Vec<f64> {
    let sims = e_y.dot(&mapped.row(i));
    match retrieval {
        Retrieval::Dot => sims.iter().map(|x| x.to_f64_lossy()).collect(),
        Retrieval::Csls { .. } => {
            let (r_src, r_tgt) = penalties.expect("csls penalties");
            sims.iter()
                .enumerate()
                .map(|(j, x)| 2.0 * x.to_f64_lossy() - r_src[i] - r_tgt[j])
                .collect()
        }
    }
}

/// Mean similarity of each row's `n` nearest cross-lingual neighbors,
/// for mapped-source rows (against targets) and target rows (against
/// mapped sources). These are the CSLS hubness penalties.
fn csls_penalties<S: Scalar>(
    mapped: &Array2<S>,
    e_y: &Array2<S>,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mean_topn = |sims: Vec<f64>| -> f64 {
        let mut v = sims;
        let n = n.min(v.len()).max(1);
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v[..n].iter().sum::<f64>() / n as f64
    };
    let r_src: Vec<f64> = (0..mapped.nrows())
        .map(|i| mean_topn(e_y.dot(&mapped.row(i)).iter().map(|x| x.to_f64_lossy()).collect()))
        .collect();
    let r_tgt: Vec<f64> = (0..e_y.nrows())
        .map(|j| mean_topn(mapped.dot(&e_y.row(j)).iter().map(|x| x.to_f64_lossy()).collect()))
        .collect();
    (r_src, r_tgt)
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0usize;
    for (j, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = j;
        }
    }
    best
}

/// Vocabulary cap for dictionary induction during self-learning.
const INDUCTION_CAP: usize = 20_000;

fn induce_mutual_nn<S: Scalar>(
    mapped: &Array2<S>,
    e_y: &Array2<S>,
    retrieval: Retrieval,
) -> (Vec<(usize, usize)>, f64) {
    let nx = mapped.nrows().min(INDUCTION_CAP);
    let ny = e_y.nrows().min(INDUCTION_CAP);
    let mx = mapped.slice(ndarray::s![..nx, ..]).to_owned();
    let my = e_y.slice(ndarray::s![..ny, ..]).to_owned();
    let penalties = match retrieval {
        Retrieval::Csls { neighborhood } => Some(csls_penalties(&mx, &my, neighborhood)),
        Retrieval::Dot => None,
    };
    let fwd: Vec<usize> =
        (0..nx).map(|i| argmax(&score_row(&mx, &my, i, retrieval, penalties.as_ref()))).collect();
    // Backward direction: swap roles.
    let penalties_b = match retrieval {
        Retrieval::Csls { neighborhood } => Some(csls_penalties(&my, &mx, neighborhood)),
        Retrieval::Dot => None,
    };
    let bwd: Vec<usize> =
        (0..ny).map(|j| argmax(&score_row(&my, &mx, j, retrieval, penalties_b.as_ref()))).collect();

    let mut pairs = Vec::new();
    let mut objective = 0.0;
    for (i, &j) in fwd.iter().enumerate() {
        if bwd[j] == i {
            pairs.push((i, j));
            objective += mx.row(i).dot(&my.row(j)).to_f64_lossy();
        }
    }
    let obj = if pairs.is_empty() { 0.0 } else { objective / pairs.len() as f64 };
    (pairs, obj)
}

/// Alternates Procrustes and mutual-nearest-neighbor dictionary
/// induction until the induced lexicon stops changing or `max_iter` is
/// reached. Keeps the best-so-far mapping by objective.
pub fn self_learn<S: Scalar>(
    e_x: &EmbeddingMatrix<S>,
    e_y: &EmbeddingMatrix<S>,
    seed: &SeedLexicon,
    max_iter: usize,
    retrieval: Retrieval,
) -> Result<AlignmentResult<S>> {
    if max_iter == 0 {
        return Err(Error::Parameter("max_iter must be >= 1".into()));
    }
    let mut dictionary = seed.clone();
    let mut best: Option<AlignmentResult<S>> = None;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let (w, _degenerate) = procrustes(e_x, e_y, &dictionary)?;
        let mapped = e_x.vectors.dot(&w);
        let (pairs, objective) = induce_mutual_nn(&mapped, &e_y.vectors, retrieval);
        let induced = SeedLexicon { pairs };
        let candidate = AlignmentResult {
            w,
            final_lexicon: induced.clone(),
            iterations,
            objective,
            converged: false,
        };
        if best.as_ref().map_or(true, |b| objective >= b.objective) {
            best = Some(candidate);
        }
        if induced == dictionary {
            converged = true;
            break;
        }
        dictionary = induced;
    }
    let mut result = best.expect("at least one iteration");
    result.iterations = iterations;
    result.converged = converged;
    Ok(result)
}

/// Top-k cross-lingual neighbors for every word on each side, by the
/// chosen retrieval score, ties broken by target index. `e_x_mapped`
/// must already be mapped into the target space; rows unit-normalized.
pub fn extract_lexicon<S: Scalar>(
    e_x_mapped: &EmbeddingMatrix<S>,
    e_y: &EmbeddingMatrix<S>,
    k: usize,
    retrieval: Retrieval,
) -> Result<TranslationLexicon> {
    if k < 1 || k > e_x_mapped.len().min(e_y.len()) {
        return Err(Error::Parameter(format!(
            "k={k} out of range 1..={}",
            e_x_mapped.len().min(e_y.len())
        )));
    }
    let direction = |from: &EmbeddingMatrix<S>, to: &EmbeddingMatrix<S>| -> DirectionalLexicon {
        let penalties = match retrieval {
            Retrieval::Csls { neighborhood } => {
                Some(csls_penalties(&from.vectors, &to.vectors, neighborhood))
            }
            Retrieval::Dot => None,
        };
        let mut entries = HashMap::with_capacity(from.len());
        let mut order = Vec::with_capacity(from.len());
        for i in 0..from.len() {
            let scores = score_row(&from.vectors, &to.vectors, i, retrieval, penalties.as_ref());
            let mut ranked: Vec<usize> = (0..to.len()).collect();
            ranked.sort_by(|&a, &b| {
                scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
            });
            let list: Vec<(String, f64)> =
                ranked[..k].iter().map(|&j| (to.word(j).to_string(), scores[j])).collect();
            order.push(from.word(i).to_string());
            entries.insert(from.word(i).to_string(), list);
        }
        DirectionalLexicon { entries, order }
    };
    Ok(TranslationLexicon {
        src_to_tgt: direction(e_x_mapped, e_y),
        tgt_to_src: direction(e_y, e_x_mapped),
        k,
    })
}

/// TSV export for one direction: a "# direction: XX->YY" header comment,
/// then "src_word<TAB>tgt_word<TAB>score" lines grouped by source word in
/// rank order.
pub fn save_lexicon(lex: &DirectionalLexicon, direction: &str, path: &Path) -> Result<()> {
    let mut out = format!("# direction: {direction}\n");
    for word in &lex.order {
        for (tgt, score) in &lex.entries[word] {
            out.push_str(&format!("{word}\t{tgt}\t{score}\n"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a directional lexicon TSV back; returns (lexicon, direction).
pub fn load_lexicon(path: &Path) -> Result<(DirectionalLexicon, String)> {
    let text = fs::read_to_string(path)?;
    let mut direction = String::new();
    let mut entries: HashMap<String, Vec<(String, f64)>> = HashMap::new();
    let mut order = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("# direction:") {
            direction = rest.trim().to_string();
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let src = fields.next().ok_or_else(|| Error::Format(format!("line {ln}")))?;
        let tgt = fields.next().ok_or_else(|| Error::Format(format!("line {ln}")))?;
        let score: f64 = fields
            .next()
            .ok_or_else(|| Error::Format(format!("line {ln}")))?
            .parse()
            .map_err(|e| Error::Parse(format!("line {ln}: {e}")))?;
        let entry = entries.entry(src.to_string()).or_insert_with(|| {
            order.push(src.to_string());
            Vec::new()
        });
        entry.push((tgt.to_string(), score));
    }
    Ok((DirectionalLexicon { entries, order }, direction))
}
