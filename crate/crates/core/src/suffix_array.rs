//! Suffix array construction by induced sorting (SA-IS), linear time over an
//! integer alphabet.
//!
//! Suffixes compare lexicographically by symbol value; a proper prefix sorts
//! before any extension of it.

const NAIVE_THRESHOLD: usize = 10;
const EMPTY: usize = usize::MAX;

/// Sorted suffix start positions of `text`. Every symbol must be `<= upper`.
pub fn build(text: &[u32], upper: u32) -> Vec<usize> {
    debug_assert!(text.iter().all(|&c| c <= upper));
    sa_is(text, upper as usize)
}

fn sa_naive(s: &[u32]) -> Vec<usize> {
    let mut sa: Vec<usize> = (0..s.len()).collect();
    sa.sort_by(|&a, &b| s[a..].cmp(&s[b..]));
    sa
}

fn sa_is(s: &[u32], upper: usize) -> Vec<usize> {
    let n = s.len();
    match n {
        0 => return Vec::new(),
        1 => return vec![0],
        2 => return if s[0] < s[1] { vec![0, 1] } else { vec![1, 0] },
        _ if n < NAIVE_THRESHOLD => return sa_naive(s),
        _ => {}
    }

    // ls[i]: suffix i is S-type (smaller than suffix i+1)
    let mut ls = vec![false; n];
    for i in (0..n - 1).rev() {
        ls[i] = if s[i] == s[i + 1] {
            ls[i + 1]
        } else {
            s[i] < s[i + 1]
        };
    }

    // bucket boundaries: sum_l[c] = start of c's bucket, sum_s[c] = start of
    // c's S-type region
    let mut sum_l = vec![0usize; upper + 2];
    let mut sum_s = vec![0usize; upper + 2];
    for i in 0..n {
        let c = s[i] as usize;
        if !ls[i] {
            sum_s[c] += 1;
        } else {
            sum_l[c + 1] += 1;
        }
    }
    for c in 0..=upper {
        sum_s[c] += sum_l[c];
        if c < upper {
            sum_l[c + 1] += sum_s[c];
        }
    }

    let mut sa = vec![EMPTY; n];
    let mut buf = vec![0usize; upper + 2];

    let induce = |lms: &[usize], sa: &mut [usize], buf: &mut [usize]| {
        sa.fill(EMPTY);
        buf.copy_from_slice(&sum_s);
        for &d in lms {
            if d == n {
                continue;
            }
            let c = s[d] as usize;
            sa[buf[c]] = d;
            buf[c] += 1;
        }
        buf.copy_from_slice(&sum_l);
        let c = s[n - 1] as usize;
        sa[buf[c]] = n - 1;
        buf[c] += 1;
        for i in 0..n {
            let v = sa[i];
            if v != EMPTY && v >= 1 && !ls[v - 1] {
                let c = s[v - 1] as usize;
                sa[buf[c]] = v - 1;
                buf[c] += 1;
            }
        }
        buf.copy_from_slice(&sum_l);
        for i in (0..n).rev() {
            let v = sa[i];
            if v != EMPTY && v >= 1 && ls[v - 1] {
                let c = s[v - 1] as usize + 1;
                buf[c] -= 1;
                sa[buf[c]] = v - 1;
            }
        }
    };

    let mut lms_map = vec![EMPTY; n + 1];
    let mut lms = Vec::new();
    for i in 1..n {
        if !ls[i - 1] && ls[i] {
            lms_map[i] = lms.len();
            lms.push(i);
        }
    }
    let m = lms.len();

    induce(&lms, &mut sa, &mut buf);

    if m > 0 {
        let mut sorted_lms: Vec<usize> = sa
            .iter()
            .copied()
            .filter(|&v| v != EMPTY && lms_map[v] != EMPTY)
            .collect();
        let mut rec_s = vec![0u32; m];
        let mut rec_upper = 0u32;
        rec_s[lms_map[sorted_lms[0]]] = 0;
        for i in 1..m {
            let mut l = sorted_lms[i - 1];
            let mut r = sorted_lms[i];
            let end_l = if lms_map[l] + 1 < m { lms[lms_map[l] + 1] } else { n };
            let end_r = if lms_map[r] + 1 < m { lms[lms_map[r] + 1] } else { n };
            let mut same = true;
            if end_l - l != end_r - r {
                same = false;
            } else {
                while l < end_l {
                    if s[l] != s[r] {
                        break;
                    }
                    l += 1;
                    r += 1;
                }
                if l == n || s[l] != s[r] {
                    same = false;
                }
            }
            if !same {
                rec_upper += 1;
            }
            rec_s[lms_map[sorted_lms[i]]] = rec_upper;
        }
        drop(lms_map);

        let rec_sa = sa_is(&rec_s, rec_upper as usize);
        for (slot, &r) in sorted_lms.iter_mut().zip(rec_sa.iter()) {
            *slot = lms[r];
        }
        induce(&sorted_lms, &mut sa, &mut buf);
    }
    sa
}
