//! Signed Euclidean distance maps per class, via the Felzenszwalb and
//! Huttenlocher lower-envelope transform applied along each axis.
//! For class c, `map[c][v]` is positive outside the class, negative
//! inside, zero only on voxels with no neighbours of the other side
//! at distance zero (i.e. never: every voxel is in or out).

use crate::error::{Error, Result};
use crate::volume::{Dims, LabelVolume};

const INF: f64 = 1e20;

/// One squared-distance pass along a line.
fn dt1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        d[q] = dq * dq + f[v[k]];
    }
}

/// Squared Euclidean distance to the nearest seed (seed voxels start
/// at 0, the rest at infinity), computed in place.
fn edt3d_squared(grid: &mut [f64], dims: Dims) {
    let (nx, ny, nz) = (dims.x, dims.y, dims.z);
    let max_n = nx.max(ny).max(nz);
    let mut f = vec![0.0; max_n];
    let mut d = vec![0.0; max_n];
    let mut v = vec![0usize; max_n];
    let mut z = vec![0.0; max_n + 1];

    // Along x.
    for zi in 0..nz {
        for yi in 0..ny {
            let base = dims.index(0, yi, zi);
            f[..nx].copy_from_slice(&grid[base..base + nx]);
            dt1d(&f[..nx], &mut d[..nx], &mut v[..nx], &mut z[..nx + 1]);
            grid[base..base + nx].copy_from_slice(&d[..nx]);
        }
    }
    // Along y.
    for zi in 0..nz {
        for xi in 0..nx {
            for yi in 0..ny {
                f[yi] = grid[dims.index(xi, yi, zi)];
            }
            dt1d(&f[..ny], &mut d[..ny], &mut v[..ny], &mut z[..ny + 1]);
            for yi in 0..ny {
                grid[dims.index(xi, yi, zi)] = d[yi];
            }
        }
    }
    // Along z.
    for yi in 0..ny {
        for xi in 0..nx {
            for zi in 0..nz {
                f[zi] = grid[dims.index(xi, yi, zi)];
            }
            dt1d(&f[..nz], &mut d[..nz], &mut v[..nz], &mut z[..nz + 1]);
            for zi in 0..nz {
                grid[dims.index(xi, yi, zi)] = d[zi];
            }
        }
    }
}

/// Signed distance to each class boundary, one map per class.
#[derive(Debug, Clone)]
pub struct DistanceMaps {
    dims: Dims,
    num_classes: u16,
    maps: Vec<Vec<f32>>,
}

impl DistanceMaps {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn map(&self, class: u16) -> &[f32] {
        &self.maps[class as usize]
    }

    #[inline]
    pub fn value(&self, class: u16, idx: usize) -> f32 {
        self.maps[class as usize][idx]
    }
}

/// dist(x, class) − dist(x, not-class): negative inside the class,
/// positive outside, with magnitude the distance to the boundary side.
pub fn signed_distance_maps(labels: &LabelVolume) -> Result<DistanceMaps> {
    let dims = labels.dims();
    let voxels = dims.voxel_count();
    let classes = labels.num_classes();
    let mut maps = Vec::with_capacity(classes as usize);
    let mut inside = vec![0.0f64; voxels];
    let mut outside = vec![0.0f64; voxels];
    for c in 0..classes {
        let mut any_inside = false;
        for (i, &l) in labels.data().iter().enumerate() {
            let hit = l == c;
            any_inside |= hit;
            inside[i] = if hit { 0.0 } else { INF };
            outside[i] = if hit { INF } else { 0.0 };
        }
        if !any_inside {
            // Class absent: "infinitely" far away everywhere.
            maps.push(vec![1e10f32; voxels]);
            continue;
        }
        edt3d_squared(&mut inside, dims);
        let all_inside = labels.data().iter().all(|&l| l == c);
        if all_inside {
            maps.push(vec![-1e10f32; voxels]);
            continue;
        }
        edt3d_squared(&mut outside, dims);
        let map: Vec<f32> = inside
            .iter()
            .zip(&outside)
            .map(|(&din, &dout)| (din.sqrt() - dout.sqrt()) as f32)
            .collect();
        maps.push(map);
    }
    if maps.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(DistanceMaps {
        dims,
        num_classes: classes,
        maps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_squared(seeds: &[bool], dims: Dims) -> Vec<f64> {
        let mut out = vec![INF; seeds.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let (xi, yi, zi) = dims.coords(i);
            for (j, &s) in seeds.iter().enumerate() {
                if !s {
                    continue;
                }
                let (xj, yj, zj) = dims.coords(j);
                let dx = xi as f64 - xj as f64;
                let dy = yi as f64 - yj as f64;
                let dz = zi as f64 - zj as f64;
                let d2 = dx * dx + dy * dy + dz * dz;
                if d2 < *o {
                    *o = d2;
                }
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let dims = Dims::new(7, 6, 5);
        let voxels = dims.voxel_count();
        for trial in 0..10u64 {
            let seeds: Vec<bool> = (0..voxels)
                .map(|i| crate::rng::unit(trial, 0, i as u64) < 0.15)
                .collect();
            if !seeds.iter().any(|&s| s) {
                continue;
            }
            let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { INF }).collect();
            edt3d_squared(&mut grid, dims);
            let expect = brute_force_squared(&seeds, dims);
            for (i, (&got, &want)) in grid.iter().zip(&expect).enumerate() {
                assert!(
                    (got - want).abs() < 1e-9,
                    "trial {trial} voxel {i}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn signed_maps_flip_sign_at_boundary() {
        let dims = Dims::new(9, 1, 1);
        // Class 1 occupies x in 3..=5.
        let data: Vec<u16> = (0..9).map(|x| u16::from((3..=5).contains(&x))).collect();
        let labels = LabelVolume::new(dims, 2, data).unwrap();
        let maps = signed_distance_maps(&labels).unwrap();
        let m1 = maps.map(1);
        // Outside: distance to nearest class-1 voxel.
        assert_eq!(m1[dims.index(0, 0, 0)], 3.0);
        assert_eq!(m1[dims.index(2, 0, 0)], 1.0);
        // Inside: minus distance to nearest background voxel.
        assert_eq!(m1[dims.index(3, 0, 0)], -1.0);
        assert_eq!(m1[dims.index(4, 0, 0)], -2.0);
        assert_eq!(m1[dims.index(6, 0, 0)], 1.0);
        // Background map mirrors with opposite sign along this line.
        let m0 = maps.map(0);
        for i in 0..9 {
            assert!((m0[i] + m1[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn argmin_distance_recovers_labels() {
        let dims = Dims::new(6, 6, 6);
        let data: Vec<u16> = (0..dims.voxel_count())
            .map(|i| {
                let (x, y, z) = dims.coords(i);
                let dx = x as f64 - 2.0;
                let dy = y as f64 - 2.5;
                let dz = z as f64 - 3.0;
                u16::from(dx * dx + dy * dy + dz * dz < 4.0)
            })
            .collect();
        let labels = LabelVolume::new(dims, 2, data).unwrap();
        let maps = signed_distance_maps(&labels).unwrap();
        for v in 0..dims.voxel_count() {
            let recovered = if maps.value(1, v) < maps.value(0, v) { 1 } else { 0 };
            assert_eq!(recovered, labels.label_at(v), "voxel {v}");
        }
    }

    #[test]
    fn absent_class_is_far_everywhere() {
        let dims = Dims::new(2, 2, 1);
        let labels = LabelVolume::new(dims, 3, vec![0, 1, 1, 0]).unwrap();
        let maps = signed_distance_maps(&labels).unwrap();
        assert!(maps.map(2).iter().all(|&d| d >= 1e9));
    }
}
