//! Temporally constrained frame matching.
//!
//! A matching assigns each query frame `j` a target index `pi[j]` in
//! `0..=n'`, where `0` marks an outlier and `k >= 1` names target frame
//! `k - 1`. Its cost is the sum of squared embedding distances over matched
//! frames, a constant price per outlier, and three penalties on consecutive
//! pairs whose endpoints are both matched:
//!
//! * a crossing `pi[j] > pi[j+1]` costs `lambda1`,
//! * a repeat `pi[j] == pi[j+1]` costs `lambda2`,
//! * a jump `pi[j] + 1 < pi[j+1]` costs `lambda3 * (pi[j+1] - pi[j])`.
//!
//! Because the objective only couples consecutive query positions, the exact
//! minimizer falls out of a layered shortest path over `n' + 1` states per
//! query frame ([`solve_exact_dp`]). [`solve_bruteforce`] enumerates every
//! assignment and exists as an optimality oracle for small instances.

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::base::{sq_dist, Sequence};
use crate::embed::Embedder;
use crate::error::{check_dim, Error, Result};
use crate::par;

/// Chunk length used when none is configured.
pub const DEFAULT_CHUNK_LEN: usize = 40;

/// Largest search space `solve_bruteforce` will enumerate.
pub const BRUTEFORCE_LIMIT: u128 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchPenalties {
    /// Order violation (crossing).
    pub lambda1: f64,
    /// One-to-many repeat.
    pub lambda2: f64,
    /// Per-index gap.
    pub lambda3: f64,
    pub outlier_cost: f64,
}

impl MatchPenalties {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, outlier_cost: f64) -> Result<Self> {
        let p = Self {
            lambda1,
            lambda2,
            lambda3,
            outlier_cost,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("outlier_cost", self.outlier_cost),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Penalties expressed as multiples of the instance's mean data cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelativePenalties {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub outlier_cost: f64,
}

impl Default for RelativePenalties {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 0.5,
            lambda3: 0.1,
            outlier_cost: 2.0,
        }
    }
}

impl RelativePenalties {
    pub fn resolve(&self, mean_unary: f64) -> Result<MatchPenalties> {
        MatchPenalties::new(
            self.lambda1 * mean_unary,
            self.lambda2 * mean_unary,
            self.lambda3 * mean_unary,
            self.outlier_cost * mean_unary,
        )
    }
}

/// Either fixed penalties or instance-relative ones, resolved per solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PenaltySpec {
    Fixed(MatchPenalties),
    Relative(RelativePenalties),
}

impl Default for PenaltySpec {
    fn default() -> Self {
        PenaltySpec::Relative(RelativePenalties::default())
    }
}

impl PenaltySpec {
    pub fn resolve(&self, query_emb: ArrayView2<'_, f64>, target_emb: ArrayView2<'_, f64>) -> Result<MatchPenalties> {
        match self {
            PenaltySpec::Fixed(p) => {
                p.validate()?;
                Ok(*p)
            }
            PenaltySpec::Relative(r) => r.resolve(mean_pairwise_cost(query_emb, target_emb)),
        }
    }
}

/// Mean squared distance over all query/target frame pairs.
pub fn mean_pairwise_cost(query_emb: ArrayView2<'_, f64>, target_emb: ArrayView2<'_, f64>) -> f64 {
    let n = query_emb.nrows() * target_emb.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for q in query_emb.rows() {
        let q = q.to_vec();
        for t in target_emb.rows() {
            total += q.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    total / n as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub data: f64,
    pub outlier: f64,
    pub order: f64,
    pub duplicate: f64,
    pub gap: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.outlier + self.order + self.duplicate + self.gap
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `pi[j]` in `0..=n'`; 0 is an outlier, `k` is chunk frame `k - 1`.
    pub pi: Vec<usize>,
    pub total_cost: f64,
    pub cost_breakdown: CostBreakdown,
    /// Start of the matched chunk inside the full target.
    pub target_offset: usize,
}

impl Matching {
    /// Global target frame index (0-based) for query frame `j`, if matched.
    pub fn target_frame(&self, j: usize) -> Option<usize> {
        match self.pi[j] {
            0 => None,
            k => Some(self.target_offset + k - 1),
        }
    }

    pub fn matched_count(&self) -> usize {
        self.pi.iter().filter(|&&k| k != 0).count()
    }
}

/// A contiguous run `offset..offset + len` of target frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub offset: usize,
    pub len: usize,
}

impl Chunk {
    pub fn end(&self) -> usize {
        self.offset + self.len
    }

    pub fn view<'a>(&self, frames: ArrayView2<'a, f64>) -> ArrayView2<'a, f64> {
        frames.slice_move(ndarray::s![self.offset..self.end(), ..])
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.offset..self.end()).contains(&frame)
    }
}

/// Pairwise penalty between consecutive assignments `a -> b`; returns
/// (order, duplicate, gap) contributions.
#[inline]
fn pair_terms(a: usize, b: usize, p: &MatchPenalties) -> (f64, f64, f64) {
    if a == 0 || b == 0 {
        (0.0, 0.0, 0.0)
    } else if a > b {
        (p.lambda1, 0.0, 0.0)
    } else if a == b {
        (0.0, p.lambda2, 0.0)
    } else if a + 1 < b {
        (0.0, 0.0, p.lambda3 * (b - a) as f64)
    } else {
        (0.0, 0.0, 0.0)
    }
}

fn check_instance(query_emb: ArrayView2<'_, f64>, target_emb: ArrayView2<'_, f64>) -> Result<()> {
    if query_emb.nrows() == 0 || target_emb.nrows() == 0 {
        return Err(Error::degenerate("matching needs non-empty query and target"));
    }
    check_dim(query_emb.ncols(), target_emb.ncols())
}

/// Scores an assignment term by term.
pub fn alignment_cost(
    query_emb: ArrayView2<'_, f64>,
    target_emb: ArrayView2<'_, f64>,
    pi: &[usize],
    penalties: &MatchPenalties,
) -> Result<CostBreakdown> {
    check_dim(query_emb.nrows(), pi.len())?;
    check_dim(query_emb.ncols(), target_emb.ncols())?;
    let m = target_emb.nrows();
    if let Some((j, &k)) = pi.iter().enumerate().find(|(_, &k)| k > m) {
        return Err(Error::Index(format!("pi[{j}] = {k} exceeds target length {m}")));
    }
    let mut c = CostBreakdown::default();
    for (j, &k) in pi.iter().enumerate() {
        if k == 0 {
            c.outlier += penalties.outlier_cost;
        } else {
            c.data += query_emb
                .row(j)
                .iter()
                .zip(target_emb.row(k - 1).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    for w in pi.windows(2) {
        let (o, d, g) = pair_terms(w[0], w[1], penalties);
        c.order += o;
        c.duplicate += d;
        c.gap += g;
    }
    Ok(c)
}

fn matching_from(
    query_emb: ArrayView2<'_, f64>,
    target_emb: ArrayView2<'_, f64>,
    pi: Vec<usize>,
    total_cost: f64,
    penalties: &MatchPenalties,
) -> Result<Matching> {
    let cost_breakdown = alignment_cost(query_emb, target_emb, &pi, penalties)?;
    Ok(Matching {
        pi,
        total_cost,
        cost_breakdown,
        target_offset: 0,
    })
}

/// Unary cost table, `n × (m + 1)`, row-major; column 0 is the outlier.
fn unary_table(query_emb: ArrayView2<'_, f64>, target_emb: ArrayView2<'_, f64>, outlier: f64) -> Vec<f64> {
    let states = target_emb.nrows() + 1;
    let target: Vec<Vec<f64>> = target_emb.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut table = Vec::with_capacity(query_emb.nrows() * states);
    for q in query_emb.rows() {
        let q = q.to_vec();
        table.push(outlier);
        table.extend(target.iter().map(|t| sq_dist(&q, t)));
    }
    table
}

/// Exhaustive minimizer; ties go to the lexicographically smallest `pi`.
pub fn solve_bruteforce(
    query_emb: ArrayView2<'_, f64>,
    target_emb: ArrayView2<'_, f64>,
    penalties: &MatchPenalties,
) -> Result<Matching> {
    check_instance(query_emb, target_emb)?;
    penalties.validate()?;
    let n = query_emb.nrows();
    let states = target_emb.nrows() + 1;
    let space = (states as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if space > BRUTEFORCE_LIMIT {
        return Err(Error::ResourceLimit(format!(
            "brute force over {states}^{n} assignments exceeds {BRUTEFORCE_LIMIT}"
        )));
    }
    let unary = unary_table(query_emb, target_emb, penalties.outlier_cost);
    let score = |pi: &[usize]| -> f64 {
        let mut s: f64 = pi.iter().enumerate().map(|(j, &k)| unary[j * states + k]).sum();
        for w in pi.windows(2) {
            let (o, d, g) = pair_terms(w[0], w[1], penalties);
            s += o + d + g;
        }
        s
    };

    let mut pi = vec![0usize; n];
    let mut best_pi = pi.clone();
    let mut best = score(&pi);
    // odometer in lexicographic order; the last position varies fastest
    loop {
        let mut pos = n;
        loop {
            if pos == 0 {
                return matching_from(query_emb, target_emb, best_pi, best, penalties);
            }
            pos -= 1;
            pi[pos] += 1;
            if pi[pos] < states {
                break;
            }
            pi[pos] = 0;
        }
        let s = score(&pi);
        if s < best {
            best = s;
            best_pi.copy_from_slice(&pi);
        }
    }
}

/// Exact minimizer by dynamic programming over the assignment trellis.
///
/// A backward pass computes, for every query position `j` and state `q`, the
/// cheapest cost of the suffix starting at `j` in state `q`. A forward pass
/// then picks the smallest optimal state at each position, which yields the
/// lexicographically smallest optimal assignment. `O(n (n'+1)^2)` time,
/// `O(n (n'+1))` memory.
pub fn solve_exact_dp(
    query_emb: ArrayView2<'_, f64>,
    target_emb: ArrayView2<'_, f64>,
    penalties: &MatchPenalties,
) -> Result<Matching> {
    check_instance(query_emb, target_emb)?;
    penalties.validate()?;
    let n = query_emb.nrows();
    let states = target_emb.nrows() + 1;
    let unary = unary_table(query_emb, target_emb, penalties.outlier_cost);

    let trans = |a: usize, b: usize| -> f64 {
        let (o, d, g) = pair_terms(a, b, penalties);
        o + d + g
    };

    // suffix[j * states + q]
    let mut suffix = vec![0.0f64; n * states];
    suffix[(n - 1) * states..].copy_from_slice(&unary[(n - 1) * states..]);
    for j in (0..n - 1).rev() {
        let (head, tail) = suffix.split_at_mut((j + 1) * states);
        let next = &tail[..states];
        let row = &mut head[j * states..];
        // from the outlier state every successor is free of pairwise cost
        let free_min = next.iter().copied().fold(f64::INFINITY, f64::min);
        row[0] = unary[j * states] + free_min;
        for q in 1..states {
            let mut best = next[0];
            for (q2, &v) in next.iter().enumerate().skip(1) {
                let c = trans(q, q2) + v;
                if c < best {
                    best = c;
                }
            }
            row[q] = unary[j * states + q] + best;
        }
    }

    let mut pi = Vec::with_capacity(n);
    let first = &suffix[..states];
    let (mut state, total) = argmin(first.iter().copied());
    pi.push(state);
    for j in 1..n {
        let next = &suffix[j * states..(j + 1) * states];
        let (q, _) = argmin(next.iter().enumerate().map(|(q2, &v)| trans(state, q2) + v));
        state = q;
        pi.push(state);
    }
    matching_from(query_emb, target_emb, pi, total, penalties)
}

/// First index attaining the minimum.
fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// Partitions `0..target_len` into consecutive chunks of `chunk_len`; a
/// trailing remainder of one frame is folded into the previous chunk.
pub fn chunk_target(target_len: usize, chunk_len: usize) -> Result<Vec<Chunk>> {
    if chunk_len < 2 {
        return Err(Error::config(format!("chunk length must be at least 2, got {chunk_len}")));
    }
    if target_len == 0 {
        return Err(Error::degenerate("cannot chunk an empty target"));
    }
    let mut chunks: Vec<Chunk> = (0..target_len)
        .step_by(chunk_len)
        .map(|offset| Chunk {
            offset,
            len: chunk_len.min(target_len - offset),
        })
        .collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len == 1) {
        chunks.pop();
        if let Some(last) = chunks.last_mut() {
            last.len += 1;
        }
    }
    Ok(chunks)
}

/// Matches the full query against every chunk of the target, in embedding
/// space. Chunks are solved independently; results are ordered by offset.
pub fn match_embedded(
    query_emb: ArrayView2<'_, f64>,
    target_emb: ArrayView2<'_, f64>,
    penalties: &PenaltySpec,
    chunk_len: usize,
) -> Result<Vec<Matching>> {
    check_dim(query_emb.ncols(), target_emb.ncols())?;
    let chunks = chunk_target(target_emb.nrows(), chunk_len)?;
    par::try_map(&chunks, |chunk| {
        let view = chunk.view(target_emb);
        let p = penalties.resolve(query_emb, view)?;
        let mut m = solve_exact_dp(query_emb, view, &p)?;
        m.target_offset = chunk.offset;
        Ok(m)
    })
}

/// Embeds both sequences and matches them chunk by chunk.
pub fn match_pair<E: Embedder + ?Sized>(
    query: &Sequence,
    target: &Sequence,
    model: &E,
    penalties: &PenaltySpec,
    chunk_len: usize,
) -> Result<Vec<Matching>> {
    // validate before the (comparatively expensive) embedding
    chunk_target(target.len(), chunk_len)?;
    let q = model.embed_frames(query.frames())?;
    let t = model.embed_frames(target.frames())?;
    match_embedded(q.view(), t.view(), penalties, chunk_len)
}

/// Per-frame nearest neighbour assignment with no temporal terms; returns
/// global 0-based target indices.
pub fn nearest_neighbor_assignment(query_emb: ArrayView2<'_, f64>, target_emb: ArrayView2<'_, f64>) -> Vec<usize> {
    query_emb
        .axis_iter(Axis(0))
        .map(|q| {
            let q = q.to_vec();
            let (k, _) = argmin(target_emb.rows().into_iter().map(|t| sq_dist(&q, &t.to_vec())));
            k
        })
        .collect()
}
