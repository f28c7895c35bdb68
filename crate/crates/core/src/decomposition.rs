//! Overlapping axis-aligned subdomains and their smooth partition-of-unity weights.
//!
//! A point `q` strictly inside subdomain `i` gets the unnormalized weight
//!
//! ```text
//! w_i(q) = exp(-sum_a (q_a - c_a)^2 / (2 sigma_a^2)) * prod_a cos^2(pi (q_a - c_a) / side_a)
//! ```
//!
//! and zero elsewhere. The cosine window makes both `w_i` and its gradient vanish at the
//! box boundary, so the blended embedding stays C1 across subdomain handoffs.

use serde::{Deserialize, Serialize};

use crate::gridworld::DistanceField;
use crate::{Bounds, Config2, Error, Real, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subdomain<T> {
    pub id: usize,
    /// (column, row) position in the subdomain lattice.
    pub index: (usize, usize),
    pub b_min: Config2<T>,
    pub b_max: Config2<T>,
    pub center: Config2<T>,
    pub side: Config2<T>,
    pub sigma: Config2<T>,
    pub active: bool,
}

impl<T: Real> Subdomain<T> {
    /// Strict containment.
    #[inline]
    pub fn contains(&self, q: &Config2<T>) -> bool {
        (0..2).all(|a| q[a] > self.b_min[a] && q[a] < self.b_max[a])
    }

    /// Unnormalized weight and its gradient at `q` (zero outside the box).
    pub fn weight(&self, q: &Config2<T>) -> (T, Config2<T>) {
        if !self.contains(q) {
            return (T::zero(), Config2::default());
        }
        let mut f = [T::zero(); 2];
        let mut df = [T::zero(); 2];
        for a in 0..2 {
            let r = q[a] - self.center[a];
            let s2 = self.sigma[a] * self.sigma[a];
            let g = (-(r * r) / (T::lit(2.0) * s2)).exp();
            let k = T::PI() / self.side[a];
            let (sn, cs) = (k * r).sin_cos();
            f[a] = g * cs * cs;
            // d/dr [g cos^2(kr)] = g (-r/s2) cos^2 - 2 g k cos sin
            df[a] = g * cs * (-(r / s2) * cs - T::lit(2.0) * k * sn);
        }
        (f[0] * f[1], Config2([df[0] * f[1], f[0] * df[1]]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition<T> {
    pub n_per_axis: usize,
    pub overlap: T,
    pub domain: Bounds<T>,
    pub subdomains: Vec<Subdomain<T>>,
}

/// One positive weight contribution at a query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightTerm<T> {
    pub id: usize,
    pub w: T,
    pub grad: Config2<T>,
}

impl<T: Real> Decomposition<T> {
    /// Regular `n x n` lattice; each box side is `stride * (1 + overlap)` and `sigma = side / 4`.
    pub fn build(domain: Bounds<T>, n_per_axis: usize, overlap: T) -> Result<Self> {
        if n_per_axis == 0 {
            return Err(Error::InvalidArgument("n_per_axis must be at least 1".into()));
        }
        if !(overlap >= T::lit(0.5) && overlap <= T::lit(2.0)) {
            return Err(Error::InvalidArgument(format!(
                "overlap {overlap} outside [0.5, 2.0]"
            )));
        }
        let ext = domain.extent();
        if !(ext[0] > T::zero() && ext[1] > T::zero()) {
            return Err(Error::InvalidArgument("empty domain".into()));
        }
        let n = T::from_usize(n_per_axis).unwrap();
        let stride = Config2([ext[0] / n, ext[1] / n]);
        let half = T::lit(0.5);
        let reach = (T::one() + overlap) * half;
        let mut subdomains = Vec::with_capacity(n_per_axis * n_per_axis);
        for j in 0..n_per_axis {
            for i in 0..n_per_axis {
                let idx = [T::from_usize(i).unwrap(), T::from_usize(j).unwrap()];
                // Bounds are written with the same expression shape as the centers so that,
                // with overlap 1, a neighbor's boundary coincides bit-exactly with this center.
                let at = |a: usize, offset: T| domain.min[a] + (idx[a] + offset) * stride[a];
                let center = Config2([at(0, half), at(1, half)]);
                let b_min = Config2([at(0, half - reach), at(1, half - reach)]);
                let b_max = Config2([at(0, half + reach), at(1, half + reach)]);
                let side = b_max - b_min;
                subdomains.push(Subdomain {
                    id: j * n_per_axis + i,
                    index: (i, j),
                    b_min,
                    b_max,
                    center,
                    side,
                    sigma: side * T::lit(0.25),
                    active: true,
                });
            }
        }
        Ok(Decomposition {
            n_per_axis,
            overlap,
            domain,
            subdomains,
        })
    }

    /// Deactivates subdomains whose boxes contain no free grid-cell center.
    pub fn prune(&self, df: &DistanceField<T>) -> Result<Self> {
        let grid = &df.grid;
        let mut out = self.clone();
        for s in &mut out.subdomains {
            s.active = (0..grid.height).any(|j| {
                (0..grid.width).any(|i| !grid.is_occupied(i, j) && s.contains(&grid.cell_center(i, j)))
            });
        }
        if out.active_count() == 0 {
            return Err(Error::NoFreeSubdomain);
        }
        Ok(out)
    }

    pub fn active_count(&self) -> usize {
        self.subdomains.iter().filter(|s| s.active).count()
    }

    pub fn active_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.subdomains.iter().filter(|s| s.active).map(|s| s.id)
    }

    /// Positive unnormalized weights of active subdomains strictly containing `q`.
    pub fn weights(&self, q: &Config2<T>) -> Vec<WeightTerm<T>> {
        let mut out = Vec::with_capacity(4);
        self.weights_into(q, &mut out);
        out
    }

    pub fn weights_into(&self, q: &Config2<T>, out: &mut Vec<WeightTerm<T>>) {
        out.clear();
        if !q.is_finite() {
            return;
        }
        // Only boxes whose lattice index is near q can contain it.
        let n = self.n_per_axis;
        let nf = T::from_usize(n).unwrap();
        let ext = self.domain.extent();
        let reach = ((T::one() + self.overlap) * T::lit(0.5)).ceil().to_usize().unwrap_or(2) + 1;
        let mut range = [(0usize, 0usize); 2];
        for a in 0..2 {
            let pos = ((q[a] - self.domain.min[a]) / ext[a] * nf).floor();
            let p = pos.to_i64().unwrap_or(0);
            let lo = (p - reach as i64).clamp(0, n as i64 - 1) as usize;
            let hi = (p + reach as i64).clamp(0, n as i64 - 1) as usize;
            range[a] = (lo, hi);
        }
        for j in range[1].0..=range[1].1 {
            for i in range[0].0..=range[0].1 {
                let s = &self.subdomains[j * n + i];
                if !s.active {
                    continue;
                }
                let (w, grad) = s.weight(q);
                if w > T::zero() {
                    out.push(WeightTerm { id: s.id, w, grad });
                }
            }
        }
    }

    /// Nearest active subdomain center; ties resolve to the lowest id.
    pub fn active_cover(&self, q: &Config2<T>) -> Result<usize> {
        let mut best: Option<(T, usize)> = None;
        for s in self.subdomains.iter().filter(|s| s.active) {
            let d = {
                let r = *q - s.center;
                r.dot(&r)
            };
            match best {
                Some((bd, _)) if !(d < bd) => {}
                _ => best = Some((d, s.id)),
            }
        }
        best.map(|(_, id)| id).ok_or(Error::NoFreeSubdomain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{compute_edt, OccupancyGrid};

    fn unit() -> Bounds<f64> {
        Bounds::new(Config2::new(0.0, 0.0), Config2::new(1.0, 1.0))
    }

    #[test]
    fn single_subdomain_geometry() {
        let d = Decomposition::build(unit(), 1, 1.0).unwrap();
        assert_eq!(d.subdomains.len(), 1);
        let s = &d.subdomains[0];
        assert_eq!(s.center, Config2::new(0.5, 0.5));
        assert_eq!(s.side, Config2::new(2.0, 2.0));
        assert_eq!(s.sigma, Config2::new(0.5, 0.5));
    }

    #[test]
    fn two_per_axis_geometry() {
        let d = Decomposition::build(unit(), 2, 1.0).unwrap();
        let xs: Vec<f64> = d.subdomains.iter().map(|s| s.center[0]).collect();
        assert_eq!(xs, vec![0.25, 0.75, 0.25, 0.75]);
        assert!(d.subdomains.iter().all(|s| s.side == Config2::new(1.0, 1.0)));
    }

    #[test]
    fn build_rejects_bad_arguments() {
        assert!(Decomposition::build(unit(), 0, 1.0).is_err());
        assert!(Decomposition::build(unit(), 2, 0.25).is_err());
        assert!(Decomposition::build(unit(), 2, 2.5).is_err());
    }

    #[test]
    fn center_has_single_positive_weight() {
        let d = Decomposition::build(unit(), 4, 1.0).unwrap();
        for s in &d.subdomains {
            // Enumerate strictly containing boxes, then check weights.
            let containing: Vec<usize> = d
                .subdomains
                .iter()
                .filter(|o| o.contains(&s.center))
                .map(|o| o.id)
                .collect();
            assert_eq!(containing, vec![s.id]);
            let w = d.weights(&s.center);
            assert_eq!(w.len(), 1);
            assert_eq!(w[0].id, s.id);
            assert_eq!(w[0].w, 1.0);
            assert_eq!(w[0].grad, Config2::new(0.0, 0.0));
        }
    }

    #[test]
    fn boundary_weight_vanishes() {
        let d = Decomposition::build(unit(), 2, 1.0).unwrap();
        let s = &d.subdomains[0];
        let (w, g) = s.weight(&Config2::new(s.b_max[0], s.center[1]));
        assert_eq!(w, 0.0);
        assert_eq!(g, Config2::new(0.0, 0.0));
        // Just inside, both value and slope are tiny.
        let (w, g) = s.weight(&Config2::new(s.b_max[0] - 1e-6, s.center[1]));
        assert!(w < 1e-10 && g.norm() < 1e-4);
    }

    #[test]
    fn midpoint_weights_equal() {
        let d = Decomposition::build(unit(), 2, 1.0).unwrap();
        let w = d.weights(&Config2::new(0.5, 0.25));
        assert_eq!(w.len(), 2);
        assert!((w[0].w - w[1].w).abs() < 1e-15);
    }

    #[test]
    fn prune_cases() {
        let g = OccupancyGrid::<f64>::empty(16, 16, 1.0 / 16.0).unwrap();
        let df = compute_edt(&g);
        let d = Decomposition::build(g.bounds(), 4, 1.0).unwrap();
        assert_eq!(d.prune(&df).unwrap().active_count(), 16);

        let full = OccupancyGrid::<f64>::new(16, 16, 1.0 / 16.0, Config2::default(), vec![true; 256]).unwrap();
        assert!(matches!(d.prune(&compute_edt(&full)), Err(Error::NoFreeSubdomain)));

        let mut half = g.clone();
        for j in 0..16 {
            for i in 0..8 {
                half.set(i, j, true);
            }
        }
        let pruned = d.prune(&compute_edt(&half)).unwrap();
        // Oracle: scan the cell centers of each box.
        for s in &pruned.subdomains {
            let any_free = (0..16).any(|j| {
                (0..16).any(|i| !half.is_occupied(i, j) && s.contains(&half.cell_center(i, j)))
            });
            assert_eq!(s.active, any_free, "subdomain {:?}", s.index);
        }
        // Columns 0 and 1 span x in (-0.125, 0.375) and (0.125, 0.625): only column 0 is all-occupied.
        assert!(pruned.subdomains.iter().filter(|s| s.index.0 == 0).all(|s| !s.active));
        assert!(pruned.subdomains.iter().filter(|s| s.index.0 > 0).all(|s| s.active));
        assert_eq!(pruned.prune(&compute_edt(&half)).unwrap(), pruned);
    }

    #[test]
    fn cover_and_ties() {
        let d = Decomposition::build(unit(), 2, 1.0).unwrap();
        assert_eq!(d.active_cover(&Config2::new(0.5, 0.5)).unwrap(), 0);
        assert_eq!(d.active_cover(&Config2::new(0.9, 0.9)).unwrap(), 3);
        let one = Decomposition::build(unit(), 1, 1.0).unwrap();
        assert_eq!(one.active_cover(&Config2::new(7.0, -3.0)).unwrap(), 0);
    }
}
