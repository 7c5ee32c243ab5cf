use std::collections::HashMap;

use crate::error::{Error, Result};

/// Normalized mutual information `I(A;B) / sqrt(H(A) H(B))` with natural logs.
///
/// When both assignments are constant the result is 1; when exactly one is,
/// it is 0. Terms are summed in sorted order so that `nmi(a, b)` and
/// `nmi(b, a)` agree bit for bit.
pub fn nmi(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "assignment lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty assignments".into()));
    }
    let n = a.len() as f64;
    let mut joint: HashMap<(u32, u32), usize> = HashMap::new();
    let mut ca: HashMap<u32, usize> = HashMap::new();
    let mut cb: HashMap<u32, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let entropy = |counts: &HashMap<u32, usize>| {
        sorted_sum(counts.values().map(|&k| {
            let p = k as f64 / n;
            -p * p.ln()
        }))
    };
    let (ha, hb) = (entropy(&ca), entropy(&cb));
    match (ha == 0.0, hb == 0.0) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    // A one-to-one contingency table means the partitions coincide.
    if joint.len() == ca.len() && joint.len() == cb.len() {
        return Ok(1.0);
    }
    let mi = sorted_sum(joint.iter().map(|(&(x, y), &k)| {
        let k = k as f64;
        let (kx, ky) = (ca[&x] as f64, cb[&y] as f64);
        k / n * (n * k / (kx * ky)).ln()
    }));
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

fn sorted_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = terms.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical() {
        let a = [0, 1, 2, 0, 1, 2];
        assert_eq!(nmi(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn permuted_labels() {
        let a = [0, 1, 2, 0, 1, 2];
        let b = [1, 0, 2, 1, 0, 2];
        assert_eq!(nmi(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn independent() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_entropies() {
        assert_eq!(nmi(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[3, 3, 3], &[0, 1, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[0, 1, 1], &[3, 3, 3]).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(nmi(&[0, 1], &[0]).is_err());
    }
}
