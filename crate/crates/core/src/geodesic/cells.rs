const MAX_BINS: usize = 1 << 20;
/// Boxes per search radius along each axis.
const SUB: usize = 2;

/// Uniform binning of points for fixed-radius neighbour queries.
#[derive(Clone, Debug)]
pub(crate) struct CellList<const D: usize> {
    origin: [f64; D],
    inv_bin: [f64; D],
    dims: [usize; D],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<const D: usize> CellList<D> {
    /// Bins `points` into boxes of side at least `radius / SUB`; a query then
    /// only needs the `(2 SUB + 1)^D` surrounding boxes to find every point
    /// within `radius`.
    pub fn new(points: &[[f64; D]], radius: f64) -> Self {
        let bin = radius / SUB as f64;
        let mut lo = [f64::INFINITY; D];
        let mut hi = [f64::NEG_INFINITY; D];
        for p in points {
            for a in 0..D {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() || lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            lo = [0.0; D];
            hi = [0.0; D];
        }
        // widen the bins along axes whose extent would need too many
        let cap = (MAX_BINS as f64).powf(1.0 / D as f64).floor();
        let inv_bin: [f64; D] = std::array::from_fn(|a| {
            let bins = (hi[a] - lo[a]) / bin;
            if bins + 1.0 > cap {
                (cap - 1.0) / (hi[a] - lo[a])
            } else {
                1.0 / bin
            }
        });
        let dims: [usize; D] =
            std::array::from_fn(|a| ((hi[a] - lo[a]) * inv_bin[a]).floor() as usize + 1);
        let mut cell_of = Vec::with_capacity(points.len());
        let mut counts = vec![0usize; dims.iter().product::<usize>() + 1];
        for p in points {
            let mut flat = 0;
            for a in 0..D {
                let i = (((p[a] - lo[a]) * inv_bin[a]) as usize).min(dims[a] - 1);
                flat = flat * dims[a] + i;
            }
            cell_of.push(flat);
            counts[flat + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut order = vec![0; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            origin: lo,
            inv_bin,
            dims,
            starts,
            order,
        }
    }

    /// Calls `f` with the index of every point in the boxes around `p`
    /// (a superset of the points within the radius).
    #[inline]
    pub fn for_each_near(&self, p: &[f64; D], mut f: impl FnMut(usize)) {
        let reach = SUB as i64;
        let mut lo = [0usize; D];
        let mut hi = [0usize; D];
        for a in 0..D {
            let x = (p[a] - self.origin[a]) * self.inv_bin[a];
            if !x.is_finite() {
                return;
            }
            let base = x.floor() as i64;
            let top = self.dims[a] as i64 - 1;
            if base < -reach || base > top + reach {
                return;
            }
            lo[a] = (base - reach).max(0) as usize;
            hi[a] = (base + reach).min(top) as usize;
        }
        // boxes adjacent along the last axis are contiguous in `order`
        let last = D - 1;
        let mut idx = lo;
        loop {
            let mut row = 0usize;
            for a in 0..last {
                row = row * self.dims[a] + idx[a];
            }
            let first = row * self.dims[last] + lo[last];
            let end = row * self.dims[last] + hi[last] + 1;
            for &j in &self.order[self.starts[first]..self.starts[end]] {
                f(j);
            }
            let mut a = last;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                if idx[a] < hi[a] {
                    idx[a] += 1;
                    break;
                }
                idx[a] = lo[a];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn finds_every_point_within_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 2]> = (0..300)
            .map(|_| [rng.gen_range(-5.0..40.0), rng.gen_range(0.0..20.0)])
            .collect();
        let r = 3.5;
        let cells = CellList::new(&pts, r);
        for _ in 0..200 {
            let q = [rng.gen_range(-12.0..50.0), rng.gen_range(-8.0..30.0)];
            let mut found = Vec::new();
            cells.for_each_near(&q, |j| found.push(j));
            let mut seen = vec![false; pts.len()];
            for &j in &found {
                assert!(!seen[j]);
                seen[j] = true;
            }
            for (j, p) in pts.iter().enumerate() {
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                if d2 <= r * r {
                    assert!(seen[j]);
                }
            }
        }
    }

    #[test]
    fn three_d_and_empty() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [9.0, 9.0, 9.0]];
        let cells = CellList::new(&pts, 2.0);
        let mut found = Vec::new();
        cells.for_each_near(&[0.5, 0.5, 0.5], |j| found.push(j));
        found.sort();
        assert_eq!(found, vec![0, 1]);
        let empty = CellList::<2>::new(&[], 1.0);
        empty.for_each_near(&[0.0, 0.0], |_| panic!("no points"));
    }
}
