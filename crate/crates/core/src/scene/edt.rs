//! Exact squared Euclidean distance transform (Felzenszwalb & Huttenlocher),
//! separable over rows and columns.

const INF: f64 = 1e20;

/// One-dimensional lower envelope of parabolas rooted at `f`.
fn transform_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so this never underflows.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *o = dq * dq + f[p];
    }
}

/// Squared distance (in cells) from every cell to the nearest `feature` cell.
/// Returns `None` when there are no feature cells.
pub fn squared_edt(feature: &[bool], width: usize, height: usize) -> Option<Vec<f64>> {
    if !feature.iter().any(|&b| b) {
        return None;
    }
    let mut grid: Vec<f64> = feature.iter().map(|&b| if b { 0.0 } else { INF }).collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    // Columns (fixed x, varying y).
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        transform_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    // Rows.
    for y in 0..height {
        f[..width].copy_from_slice(&grid[y * width..(y + 1) * width]);
        transform_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&out[..width]);
    }
    Some(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(feature: &[bool], w: usize, h: usize) -> Vec<f64> {
        let pts: Vec<(usize, usize)> = (0..w * h)
            .filter(|&i| feature[i])
            .map(|i| (i % w, i / w))
            .collect();
        (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                pts.iter()
                    .map(|&(px, py)| {
                        let dx = x as f64 - px as f64;
                        let dy = y as f64 - py as f64;
                        dx * dx + dy * dy
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_random_grids() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let w = rng.random_range(1..20);
            let h = rng.random_range(1..20);
            let density: f64 = rng.random_range(0.01..0.5);
            let mut feat: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() < density).collect();
            feat[rng.random_range(0..w * h)] = true;
            let fast = squared_edt(&feat, w, h).unwrap();
            assert_eq!(fast, brute(&feat, w, h));
        }
    }

    #[test]
    fn empty_feature_set() {
        assert!(squared_edt(&[false; 9], 3, 3).is_none());
    }
}
