//! Same-rank broadcasting: each dimension either matches or is 1.

const MAX_RANK: usize = 4;

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() || a.len() > MAX_RANK {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn pad4(shape: &[usize]) -> [usize; MAX_RANK] {
    let mut out = [1; MAX_RANK];
    out[MAX_RANK - shape.len()..].copy_from_slice(shape);
    out
}

/// Strides into an operand of `shape`, zero along broadcast axes.
fn strides(shape: &[usize]) -> [usize; MAX_RANK] {
    let dims = pad4(shape);
    let mut s = [0; MAX_RANK];
    let mut acc = 1;
    for d in (0..MAX_RANK).rev() {
        s[d] = if dims[d] == 1 { 0 } else { acc };
        acc *= dims[d];
    }
    s
}

/// Calls `f(out_index, a_index, b_index)` for every output element in row-major order.
pub(crate) fn for_each(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let o = pad4(out);
    let sa = strides(a);
    let sb = strides(b);
    let mut idx = 0;
    for i0 in 0..o[0] {
        for i1 in 0..o[1] {
            for i2 in 0..o[2] {
                let base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..o[3] {
                    f(idx, base_a + i3 * sa[3], base_b + i3 * sb[3]);
                    idx += 1;
                }
            }
        }
    }
}
