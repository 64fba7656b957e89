/// Number of monomials in `n` variables with total degree at most `d`: C(d+n, n).
pub fn monomial_count(n: usize, d: usize) -> usize {
    let mut c: u128 = 1;
    for i in 1..=n as u128 {
        c = c * (d as u128 + i) / i;
    }
    c as usize
}

/// Exponent tuples ordered by total degree, then lexicographically with the
/// first variable's exponent descending.
pub fn monomial_exponents(n: usize, d: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::with_capacity(monomial_count(n, d));
    for total in 0..=d as u32 {
        let mut cur = vec![0u32; n];
        fill(&mut cur, 0, total, &mut out);
    }
    out
}

fn fill(cur: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        fill(cur, pos + 1, remaining - e, out);
    }
    cur[pos] = 0;
}
