use serde::{Deserialize, Serialize};

/// Index into a [`Vocabulary`](super::Vocabulary). Ids follow lexicographic term order.
pub type TermId = u32;

/// Sparse vector sorted by term id with no explicit zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseVector(Vec<(TermId, f64)>);

impl SparseVector {
    /// Build from arbitrary entries; sorts, sums duplicates and drops zeros.
    pub fn from_entries(mut entries: Vec<(TermId, f64)>) -> Self {
        entries.sort_by_key(|&(t, _)| t);
        let mut out: Vec<(TermId, f64)> = Vec::with_capacity(entries.len());
        for (t, w) in entries {
            match out.last_mut() {
                Some(last) if last.0 == t => last.1 += w,
                _ => out.push((t, w)),
            }
        }
        out.retain(|&(_, w)| w != 0.0);
        Self(out)
    }

    pub fn entries(&self) -> &[(TermId, f64)] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn weight(&self, term: TermId) -> f64 {
        self.0
            .binary_search_by_key(&term, |&(t, _)| t)
            .map(|i| self.0[i].1)
            .unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }

    /// Unit-length copy; the zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let norm = self.norm();
        if norm == 0.0 {
            return self.clone();
        }
        Self(self.0.iter().map(|&(t, w)| (t, w / norm)).collect())
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Cosine similarity; 0 when either side is the zero vector.
    pub fn cosine(&self, other: &SparseVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }

    /// The `n` heaviest terms, ties broken by smaller term id.
    pub fn top_terms(&self, n: usize) -> Vec<TermId> {
        let mut sorted: Vec<&(TermId, f64)> = self.0.iter().collect();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        sorted.into_iter().take(n).map(|&(t, _)| t).collect()
    }
}

/// L2-normalized sum of `vectors`, accumulated densely over `dim` terms in the
/// order given. Callers pass vectors in a canonical order so the result is
/// bit-reproducible.
pub fn normalized_sum<'a>(vectors: impl IntoIterator<Item = &'a SparseVector>, dim: usize) -> SparseVector {
    let mut dense = vec![0.0f64; dim];
    let mut touched = Vec::new();
    for v in vectors {
        for &(t, w) in v.entries() {
            let slot = &mut dense[t as usize];
            if *slot == 0.0 {
                touched.push(t);
            }
            *slot += w;
        }
    }
    touched.sort_unstable();
    touched.dedup();
    let sum = SparseVector(
        touched
            .into_iter()
            .map(|t| (t, dense[t as usize]))
            .filter(|&(_, w)| w != 0.0)
            .collect(),
    );
    sum.normalized()
}
