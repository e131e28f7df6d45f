//! Posets, ordering indicators and the counting identities behind the Wick theorem.

use crate::error::{Error, Result};

/// Finite strict partial order on `0..len`, stored with its transitive closure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poset {
    len: usize,
    less: Vec<Vec<bool>>,
}

/// Timestamps per element and the sign of the ordering condition.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderingAssignment {
    pub times: Vec<f64>,
    pub eta: i8,
}

impl Poset {
    /// Builds the closure of `relations` (pairs `a < b`); any cycle is rejected.
    pub fn new(len: usize, relations: &[(usize, usize)]) -> Result<Poset> {
        let mut less = vec![vec![false; len]; len];
        for &(a, b) in relations {
            if a >= len || b >= len {
                return Err(Error::Input(format!("relation ({a}, {b}) outside 0..{len}")));
            }
            if a == b {
                return Err(Error::Cycle(a, b));
            }
            less[a][b] = true;
        }
        for k in 0..len {
            for i in 0..len {
                if less[i][k] {
                    for j in 0..len {
                        if less[k][j] {
                            less[i][j] = true;
                        }
                    }
                }
            }
        }
        for i in 0..len {
            if less[i][i] {
                let j = (0..len).find(|&j| j != i && less[i][j] && less[j][i]).unwrap_or(i);
                return Err(Error::Cycle(i, j));
            }
        }
        Ok(Poset { len, less })
    }

    pub fn chain(order: &[usize]) -> Result<Poset> {
        let len = order.len();
        let rel: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0], w[1])).collect();
        Poset::new(len, &rel)
    }

    pub fn antichain(len: usize) -> Poset {
        Poset {
            len,
            less: vec![vec![false; len]; len],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn less(&self, a: usize, b: usize) -> bool {
        self.less[a][b]
    }

    pub fn relations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.len {
            for b in 0..self.len {
                if self.less[a][b] {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Disjoint union; elements of `other` are shifted by `self.len()`.
    pub fn disjoint_union(&self, other: &Poset) -> Poset {
        let len = self.len + other.len;
        let mut less = vec![vec![false; len]; len];
        for a in 0..self.len {
            less[a][..self.len].copy_from_slice(&self.less[a]);
        }
        for a in 0..other.len {
            less[self.len + a][self.len..].copy_from_slice(&other.less[a]);
        }
        Poset { len, less }
    }
}

/// 1 iff `eta * (t_a - t_b) < 0` for every `a < b`; ties give 0.
pub fn ordering_indicator(poset: &Poset, assign: &OrderingAssignment) -> Result<u8> {
    if assign.times.len() < poset.len() {
        return Err(Error::Input(format!(
            "element {} has no timestamp",
            assign.times.len()
        )));
    }
    if assign.eta != 1 && assign.eta != -1 {
        return Err(Error::Input("eta must be +1 or -1".into()));
    }
    if let Some(i) = assign.times[..poset.len()].iter().position(|t| !t.is_finite()) {
        return Err(Error::Input(format!("timestamp of element {i} is not finite")));
    }
    let eta = assign.eta as f64;
    for a in 0..poset.len() {
        for b in 0..poset.len() {
            if poset.less[a][b] && !(eta * (assign.times[a] - assign.times[b]) < 0.0) {
                return Ok(0);
            }
        }
    }
    Ok(1)
}

/// All total orders (lists of elements, smallest first) extending the poset.
pub fn linear_extensions(poset: &Poset) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(poset.len());
    let mut used = vec![false; poset.len()];
    extend(poset, &mut prefix, &mut used, &mut out);
    out
}

fn extend(poset: &Poset, prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
    if prefix.len() == poset.len() {
        out.push(prefix.clone());
        return;
    }
    for x in 0..poset.len() {
        if used[x] || (0..poset.len()).any(|y| !used[y] && poset.less[y][x]) {
            continue;
        }
        used[x] = true;
        prefix.push(x);
        extend(poset, prefix, used, out);
        prefix.pop();
        used[x] = false;
    }
}

pub fn factorial(n: u64) -> u128 {
    (1..=n as u128).product()
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k as u128 {
        acc = acc * (n as u128 - i) / (i + 1);
    }
    acc
}

/// Number of ways to contract `r` annihilators of the left factor with `r`
/// creators of the right factor: `r! C(l_a, r) C(l_b_create, r)`.
pub fn contraction_factor(l_a: u64, r: u64, l_b_create: u64) -> Result<u128> {
    if r > l_a.min(l_b_create) {
        return Err(Error::Input(format!(
            "contraction count r={r} exceeds min({l_a}, {l_b_create})"
        )));
    }
    Ok(factorial(r) * binomial(l_a, r) * binomial(l_b_create, r))
}

/// Number of permutations of `n - l_b + l_b_create` slots for which exactly `r`
/// of the first `l_b_create` positions land among the first `l_a` values.
pub fn permutation_class_count(n: u64, l_a: u64, l_b: u64, l_b_create: u64, r: u64) -> Result<u128> {
    if l_b > n || l_a > n {
        return Err(Error::Input(format!(
            "annihilator counts l_a={l_a}, l_b={l_b} exceed particle number {n}"
        )));
    }
    let lower = (l_a + l_b).saturating_sub(n);
    let upper = l_a.min(l_b_create);
    if r < lower || r > upper {
        return Err(Error::Input(format!("r={r} outside [{lower}, {upper}]")));
    }
    Ok(binomial(l_b_create, r)
        * binomial(l_a, r)
        * factorial(r)
        * factorial(n + l_b_create - l_b - l_a)
        * factorial(n - l_b)
        / factorial(n + r - l_b - l_a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_class_count(n: usize, l_a: usize, l_b: usize, l_bc: usize, r: usize) -> u128 {
        permutations(n - l_b + l_bc)
            .into_iter()
            .filter(|s| (0..l_bc).filter(|&j| s[j] < l_a).count() == r)
            .count() as u128
    }

    #[test]
    fn indicator_on_small_posets() {
        let chain = Poset::chain(&[0, 1]).unwrap();
        let up = OrderingAssignment { times: vec![0.0, 1.0], eta: 1 };
        let down = OrderingAssignment { times: vec![1.0, 0.0], eta: 1 };
        assert_eq!(ordering_indicator(&chain, &up).unwrap(), 1);
        assert_eq!(ordering_indicator(&chain, &down).unwrap(), 0);
        let anti = Poset::antichain(2);
        for eta in [1, -1] {
            let a = OrderingAssignment { times: vec![3.0, -2.0], eta };
            assert_eq!(ordering_indicator(&anti, &a).unwrap(), 1);
        }
        let tie = OrderingAssignment { times: vec![0.5, 0.5], eta: 1 };
        assert_eq!(ordering_indicator(&chain, &tie).unwrap(), 0);
        let short = OrderingAssignment { times: vec![0.0], eta: 1 };
        assert!(ordering_indicator(&chain, &short).is_err());
    }

    #[test]
    fn cycles_are_rejected() {
        assert!(matches!(Poset::new(3, &[(0, 1), (1, 2), (2, 0)]), Err(Error::Cycle(..))));
        assert!(Poset::new(2, &[(0, 0)]).is_err());
    }

    #[test]
    fn extension_counts() {
        assert_eq!(linear_extensions(&Poset::chain(&[2, 0, 1]).unwrap()).len(), 1);
        assert_eq!(linear_extensions(&Poset::antichain(3)).len(), 6);
        // a=0, b=1, c=2, d=3 with a<c, b<c, b<d
        let n_shape = Poset::new(4, &[(0, 2), (1, 2), (1, 3)]).unwrap();
        let brute = permutations(4)
            .into_iter()
            .filter(|p| {
                let pos = |x: usize| p.iter().position(|&y| y == x).unwrap();
                n_shape.relations().iter().all(|&(a, b)| pos(a) < pos(b))
            })
            .count();
        let ext = linear_extensions(&n_shape);
        assert_eq!(ext.len(), brute);
        let mut dedup = ext.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), ext.len());
    }

    #[test]
    fn contraction_factor_values() {
        assert_eq!(contraction_factor(1, 1, 1).unwrap(), 1);
        for la in 0..5 {
            for lb in 0..5 {
                assert_eq!(contraction_factor(la, 0, lb).unwrap(), 1);
            }
        }
        assert_eq!(contraction_factor(2, 1, 3).unwrap(), 6);
        assert!(contraction_factor(1, 2, 3).is_err());
    }

    #[test]
    fn permutation_classes_match_brute_force() {
        assert_eq!(permutation_class_count(2, 1, 1, 1, 1).unwrap(), brute_class_count(2, 1, 1, 1, 1));
        assert_eq!(permutation_class_count(2, 1, 1, 1, 1).unwrap(), 1);
        assert_eq!(permutation_class_count(2, 1, 1, 1, 0).unwrap(), 1);
        let total: u128 = (0..=2).map(|r| permutation_class_count(4, 2, 1, 2, r).unwrap()).sum();
        assert_eq!(total, factorial(5));
        assert!(permutation_class_count(2, 2, 2, 1, 0).is_err());
        for n in 0..=6usize {
            for l_a in 0..=n {
                for l_b in 0..=n {
                    for l_bc in 0..=(7 - n).min(3) {
                        let lo = (l_a + l_b).saturating_sub(n);
                        let hi = l_a.min(l_bc);
                        let mut total = 0;
                        for r in lo..=hi {
                            let c = permutation_class_count(n as u64, l_a as u64, l_b as u64, l_bc as u64, r as u64)
                                .unwrap();
                            assert_eq!(c, brute_class_count(n, l_a, l_b, l_bc, r), "{n} {l_a} {l_b} {l_bc} {r}");
                            total += c;
                        }
                        if lo <= hi {
                            assert_eq!(total, factorial((n - l_b + l_bc) as u64));
                        }
                    }
                }
            }
        }
    }

    fn arb_poset(max: usize) -> impl Strategy<Value = Poset> {
        (1..=max).prop_flat_map(|n| {
            (Just(n), proptest::collection::vec(any::<bool>(), n * n), Just(()))
                .prop_map(|(n, bits, _)| {
                    let mut rel = Vec::new();
                    for a in 0..n {
                        for b in a + 1..n {
                            if bits[a * n + b] {
                                rel.push((a, b));
                            }
                        }
                    }
                    Poset::new(n, &rel).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn indicator_sums_over_extensions(p in arb_poset(6), seed in proptest::collection::vec(-5.0f64..5.0, 6), eta in prop_oneof![Just(1i8), Just(-1i8)]) {
            let mut times = seed[..p.len()].to_vec();
            for i in 0..times.len() {
                times[i] += i as f64 * 1e-3;
            }
            let a = OrderingAssignment { times, eta };
            let direct = ordering_indicator(&p, &a).unwrap() as u32;
            let sum: u32 = linear_extensions(&p)
                .iter()
                .map(|ext| ordering_indicator(&Poset::chain(ext).unwrap(), &a).unwrap() as u32)
                .sum();
            prop_assert_eq!(direct, sum);
        }

        #[test]
        fn indicator_factorizes_over_unions(p in arb_poset(4), q in arb_poset(4), seed in proptest::collection::vec(-5.0f64..5.0, 8), eta in prop_oneof![Just(1i8), Just(-1i8)]) {
            let u = p.disjoint_union(&q);
            let times = seed[..u.len()].to_vec();
            let a = OrderingAssignment { times: times.clone(), eta };
            let ap = OrderingAssignment { times: times[..p.len()].to_vec(), eta };
            let aq = OrderingAssignment { times: times[p.len()..].to_vec(), eta };
            prop_assert_eq!(
                ordering_indicator(&u, &a).unwrap(),
                ordering_indicator(&p, &ap).unwrap() * ordering_indicator(&q, &aq).unwrap()
            );
        }
    }
}
