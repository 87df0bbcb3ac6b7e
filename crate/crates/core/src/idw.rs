//! Inverse-distance-weighted interpolation of scattered samples in three
//! dimensions, backed by an R*-tree for nearest-neighbour queries.
//!
//! Coordinates are rescaled per axis by the reciprocal sample standard
//! deviation before distances are measured. The interpolant reproduces the
//! sample values exactly at the nodes.

use rstar::primitives::GeomWithData;
use rstar::RTree;
use serde::{Deserialize, Serialize};

type Node = GeomWithData<[f64; 3], u32>;

pub const DEFAULT_NEIGHBOURS: usize = 8;
pub const DEFAULT_POWER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Bounds {
    pub fn contains(&self, q: &[f64; 3]) -> bool {
        (0..3).all(|k| q[k] >= self.lo[k] && q[k] <= self.hi[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub value: f64,
    /// The query lay outside the sample bounding box and the nearest sample
    /// was returned.
    pub extrapolated: bool,
}

#[derive(Debug)]
pub struct Idw {
    tree: RTree<Node>,
    values: Vec<f64>,
    scale: [f64; 3],
    bounds: Bounds,
    neighbours: usize,
    power: f64,
}

impl Idw {
    /// Builds the interpolant; `points` and `values` must have equal length
    /// and at least one element.
    pub fn new(points: &[[f64; 3]], values: Vec<f64>) -> Self {
        Self::with_params(points, values, DEFAULT_NEIGHBOURS, DEFAULT_POWER)
    }

    pub fn with_params(
        points: &[[f64; 3]],
        values: Vec<f64>,
        neighbours: usize,
        power: f64,
    ) -> Self {
        assert_eq!(
            points.len(),
            values.len(),
            "points and values differ in length"
        );
        assert!(!points.is_empty(), "IDW needs at least one sample");
        let scale = inverse_std(points);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let nodes = points
            .iter()
            .enumerate()
            .map(|(i, p)| Node::new(scaled(p, &scale), i as u32))
            .collect();
        Self {
            tree: RTree::bulk_load(nodes),
            values,
            scale,
            bounds: Bounds { lo, hi },
            neighbours: neighbours.max(1),
            power,
        }
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn scale(&self) -> [f64; 3] {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn eval(&self, q: [f64; 3]) -> Lookup {
        let sq = scaled(&q, &self.scale);
        if !self.bounds.contains(&q) {
            let nearest = self.tree.nearest_neighbor(&sq).expect("tree is non-empty");
            return Lookup {
                value: self.values[nearest.data as usize],
                extrapolated: true,
            };
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (node, d2) in self
            .tree
            .nearest_neighbor_iter_with_distance_2(&sq)
            .take(self.neighbours)
        {
            let v = self.values[node.data as usize];
            if d2 == 0.0 {
                return Lookup {
                    value: v,
                    extrapolated: false,
                };
            }
            let w = d2.powf(-0.5 * self.power);
            num += w * v;
            den += w;
        }
        Lookup {
            value: num / den,
            extrapolated: false,
        }
    }
}

fn scaled(p: &[f64; 3], s: &[f64; 3]) -> [f64; 3] {
    [p[0] * s[0], p[1] * s[1], p[2] * s[2]]
}

fn inverse_std(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len() as f64;
    let mut out = [1.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mean = points.iter().map(|p| p[k]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 && sd.is_finite() {
            *o = 1.0 / sd;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> (Vec<[f64; 3]>, Vec<f64>) {
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    let p = [i as f64 * 0.25, j as f64, 10.0 * k as f64];
                    vals.push(p[0] + p[1] - p[2]);
                    pts.push(p);
                }
            }
        }
        (pts, vals)
    }

    #[test]
    fn reproduces_nodes() {
        let (pts, vals) = grid();
        let idw = Idw::new(&pts, vals.clone());
        for (p, v) in pts.iter().zip(&vals) {
            let l = idw.eval(*p);
            assert_eq!(l.value, *v);
            assert!(!l.extrapolated);
        }
    }

    #[test]
    fn duplicate_coordinates_are_fine() {
        let pts: Vec<[f64; 3]> = (0..1000)
            .map(|i| [0.0, (i % 10) as f64, (i / 10) as f64])
            .collect();
        let vals = vec![1.0; pts.len()];
        let idw = Idw::new(&pts, vals);
        assert!((idw.eval([0.0, 3.5, 7.25]).value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn outside_bounds_uses_nearest_sample() {
        let (pts, vals) = grid();
        let idw = Idw::new(&pts, vals);
        let l = idw.eval([2.0, 4.0, 40.0]);
        assert!(l.extrapolated);
        assert_eq!(l.value, 1.0 + 4.0 - 40.0);
    }

    #[test]
    fn interpolant_stays_within_neighbour_range() {
        let (pts, vals) = grid();
        let idw = Idw::new(&pts, vals);
        let v = idw.eval([0.3, 1.7, 13.0]).value;
        assert!(v > -40.0 && v < 5.0);
    }
}
