//! Gray-code Sobol sequence for up to six dimensions (Joe–Kuo direction numbers).

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 6;
const BITS: u32 = 32;

/// `(s, a, m_1..m_s)` for dimensions 2..=6; dimension 1 is van der Corput.
const PRIMITIVES: [(u32, u32, &[u32]); 5] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
];

fn directions(dim: usize) -> Vec<u32> {
    if dim == 0 {
        return (1..=BITS).map(|i| 1u32 << (BITS - i)).collect();
    }
    let (s, a, m) = PRIMITIVES[dim - 1];
    let s = s as usize;
    let mut v = vec![0u32; BITS as usize + 1];
    for i in 1..=BITS as usize {
        v[i] = if i <= s {
            m[i - 1] << (BITS as usize - i)
        } else {
            let mut x = v[i - s] ^ (v[i - s] >> s);
            for k in 1..s {
                if (a >> (s - 1 - k)) & 1 == 1 {
                    x ^= v[i - k];
                }
            }
            x
        };
    }
    v[1..].to_vec()
}

/// First `count` points of the `dim`-dimensional sequence in `[0, 1)^dim`,
/// starting with the origin.
pub fn sobol_points(dim: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "Sobol sequence supports 1..={MAX_DIM} dimensions, got {dim}"
        )));
    }
    let dirs: Vec<Vec<u32>> = (0..dim).map(directions).collect();
    let mut state = vec![0u32; dim];
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        out.push(state.iter().map(|&x| x as f64 * scale).collect());
        // flip the direction indexed by the lowest zero bit of i
        let c = (!(i as u64)).trailing_zeros() as usize;
        for (x, d) in state.iter_mut().zip(&dirs) {
            *x ^= d[c];
        }
    }
    Ok(out)
}
