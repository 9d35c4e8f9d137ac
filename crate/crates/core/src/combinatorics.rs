//! Small combinatorial helpers shared by query evaluation code: exact
//! binomial coefficients, non-recursive subset enumeration, and the
//! inclusion-exclusion coefficient table for threshold predicates.

/// Exact binomial coefficient. Callers keep `n` small (at most 16 for
/// threshold arity), where every value fits `u64` comfortably.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Visit every size-`k` subset of `0..n` in lexicographic order without
/// recursion or per-subset allocation. The slice passed to `f` is the
/// current combination, strictly increasing.
pub fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    if k == 0 {
        f(&[]);
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // advance to the next combination
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// One inclusion-exclusion term: the members of a subset of the threshold's
/// feature positions, with its signed coefficient.
#[derive(Debug, Clone)]
pub struct InclExclTerm {
    pub members: Vec<u8>,
    pub coeff: f64,
}

/// Expand the inclusion-exclusion form of an r-of-k threshold over positions
/// `0..k`: all subsets of size `i` for `i = r..=k`, each weighted by
/// `(-1)^(i-r) * C(i-1, i-r)`. Coefficients are integers that fit `f64`
/// exactly for `k <= 16`.
pub fn inclusion_exclusion_terms(k: usize, r: usize) -> Vec<InclExclTerm> {
    assert!(r >= 1 && r <= k && k <= 16);
    let mut terms = Vec::new();
    for i in r..=k {
        let mag = binomial((i - 1) as u64, (i - r) as u64) as f64;
        let coeff = if (i - r).is_multiple_of(2) { mag } else { -mag };
        for_each_combination(k, i, |subset| {
            terms.push(InclExclTerm {
                members: subset.iter().map(|&p| p as u8).collect(),
                coeff,
            });
        });
    }
    terms
}

/// Signed inclusion-exclusion weight for subset size `i` at threshold `r`,
/// i.e. the coefficient shared by every size-`i` term.
pub fn inclusion_exclusion_weight(i: usize, r: usize) -> i64 {
    let mag = binomial((i - 1) as u64, (i - r) as u64) as i64;
    if (i - r).is_multiple_of(2) {
        mag
    } else {
        -mag
    }
}
