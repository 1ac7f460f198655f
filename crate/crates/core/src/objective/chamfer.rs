use crate::kinematics::Point2;

/// Symmetric squared chamfer distance with gradients for both clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct Chamfer {
    pub value: f64,
    pub grad_p: Vec<Point2>,
    pub grad_q: Vec<Point2>,
}

/// Index of the nearest point in `to`; ties go to the lowest index.
#[inline]
fn nearest(p: Point2, to: &[Point2]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, q) in to.iter().enumerate() {
        let dx = p[0] - q[0];
        let dy = p[1] - q[1];
        let d = dx * dx + dy * dy;
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// `sum_i min_j |p_i - q_j|^2 + sum_j min_i |p_i - q_j|^2`.
///
/// # Panics
/// If either cloud is empty.
pub fn chamfer(p: &[Point2], q: &[Point2]) -> Chamfer {
    assert!(!p.is_empty() && !q.is_empty(), "chamfer needs two non-empty clouds");
    let (mut forward, mut backward) = (0.0, 0.0);
    let mut grad_p = vec![[0.0; 2]; p.len()];
    let mut grad_q = vec![[0.0; 2]; q.len()];
    let mut pair = |i: usize, j: usize, d: f64, value: &mut f64| {
        *value += d;
        let g = [2.0 * (p[i][0] - q[j][0]), 2.0 * (p[i][1] - q[j][1])];
        grad_p[i][0] += g[0];
        grad_p[i][1] += g[1];
        grad_q[j][0] -= g[0];
        grad_q[j][1] -= g[1];
    };
    for (i, &pi) in p.iter().enumerate() {
        let (j, d) = nearest(pi, q);
        pair(i, j, d, &mut forward);
    }
    for (j, &qj) in q.iter().enumerate() {
        let (i, d) = nearest(qj, p);
        pair(i, j, d, &mut backward);
    }
    // Summing each direction separately keeps the result exactly symmetric.
    Chamfer {
        value: forward + backward,
        grad_p,
        grad_q,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn singletons() {
        let c = chamfer(&[[0.0, 0.0]], &[[1.0, 0.0]]);
        assert_eq!(c.value, 2.0);
        assert_eq!(c.grad_p, vec![[-4.0, 0.0]]);
        assert_eq!(c.grad_q, vec![[4.0, 0.0]]);
    }

    #[test]
    fn identical_clouds_are_zero() {
        let p = [[0.1, 0.2], [0.5, -0.3], [1.0, 1.0]];
        assert_eq!(chamfer(&p, &p).value, 0.0);
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut cloud = |n: usize| -> Vec<Point2> { (0..n).map(|_| [rng.random(), rng.random()]).collect() };
        let (p, q) = (cloud(20), cloud(20));
        let (mut fwd, mut bwd) = (0.0, 0.0);
        for a in &p {
            let mut m = f64::INFINITY;
            for b in &q {
                m = m.min((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2));
            }
            fwd += m;
        }
        for b in &q {
            let mut m = f64::INFINITY;
            for a in &p {
                m = m.min((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2));
            }
            bwd += m;
        }
        let oracle = fwd + bwd;
        let c = chamfer(&p, &q);
        assert_eq!(c.value, oracle);
        assert_eq!(c.value, chamfer(&q, &p).value);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = chamfer(&[[0.0, 0.0]], &[[1.0, 0.0], [-1.0, 0.0]]);
        // Forward pass pairs p with q[0]; the reverse pass pairs both q's with p.
        assert_eq!(c.grad_p, vec![[-2.0, 0.0]]);
        assert_eq!(c.grad_q, vec![[4.0, 0.0], [-2.0, 0.0]]);
    }
}
