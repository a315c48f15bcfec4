//! Classical threshold segmenter: Otsu on normalized intensities, largest
//! 6-connected component, 3×3×3 closing, and hole filling.

use super::{MaskError, Result, RoiMask};
use crate::nifti::{intensity_normalize, Volume};

const BINS: usize = 256;

/// Segment the dominant bright structure of a rank-3 volume.
pub fn threshold_segment(v: &Volume) -> Result<RoiMask> {
    if v.rank() != 3 {
        return Err(MaskError::RankMismatch(v.rank()));
    }
    let norm = intensity_normalize(v)?;
    if norm.degenerate {
        return Err(MaskError::DegenerateVolume);
    }
    let values = norm.volume.values();
    let dims = &v.dims;

    let fg = otsu_foreground(&values);
    let fg = largest_component(&fg, dims);
    let fg = close(&fg, dims);
    let fg = fill_holes(&fg, dims);
    // closing can in principle detach a sliver; keep the result to one piece
    let fg = largest_component(&fg, dims);
    Ok(RoiMask::from_bools(dims, &fg))
}

fn otsu_foreground(values: &[f64]) -> Vec<bool> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let width = hi - lo;
    let bin = |x: f64| -> usize {
        if width > 0.0 {
            (((x - lo) / width) * BINS as f64)
                .floor()
                .clamp(0.0, (BINS - 1) as f64) as usize
        } else {
            0
        }
    };
    let mut hist = [0u64; BINS];
    for &x in values {
        hist[bin(x)] += 1;
    }

    let total = values.len() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let (mut w_bg, mut sum_bg) = (0.0, 0.0);
    let (mut best_t, mut best_var) = (0usize, -1.0);
    for (t, &c) in hist.iter().enumerate() {
        w_bg += c as f64;
        sum_bg += t as f64 * c as f64;
        let w_fg = total - w_bg;
        if w_bg == 0.0 || w_fg == 0.0 {
            continue;
        }
        let mean_bg = sum_bg / w_bg;
        let mean_fg = (sum_all - sum_bg) / w_fg;
        let between = w_bg * w_fg * (mean_bg - mean_fg).powi(2);
        if between > best_var {
            best_var = between;
            best_t = t;
        }
    }
    values.iter().map(|&x| bin(x) > best_t).collect()
}

#[inline]
fn neighbors6(i: usize, dims: &[usize]) -> impl Iterator<Item = usize> {
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let x = i % nx;
    let y = (i / nx) % ny;
    let z = i / (nx * ny);
    let plane = nx * ny;
    [
        (x > 0).then(|| i - 1),
        (x + 1 < nx).then(|| i + 1),
        (y > 0).then(|| i - nx),
        (y + 1 < ny).then(|| i + nx),
        (z > 0).then(|| i - plane),
        (z + 1 < nz).then(|| i + plane),
    ]
    .into_iter()
    .flatten()
}

/// Keep only the largest 6-connected foreground component. Ties go to the
/// component whose first voxel comes earliest in scan order.
pub fn largest_component(fg: &[bool], dims: &[usize]) -> Vec<bool> {
    let dims3 = pad3(dims);
    let mut label = vec![0u32; fg.len()];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for seed in 0..fg.len() {
        if !fg[seed] || label[seed] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        label[seed] = id;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            size += 1;
            for j in neighbors6(i, &dims3) {
                if fg[j] && label[j] == 0 {
                    label[j] = id;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    let best = sizes
        .iter()
        .enumerate()
        .skip(1)
        .fold(
            (0usize, 0usize),
            |acc, (id, &s)| if s > acc.1 { (id, s) } else { acc },
        );
    label
        .iter()
        .map(|&l| l != 0 && l as usize == best.0)
        .collect()
}

fn pad3(dims: &[usize]) -> [usize; 3] {
    let mut d = [1usize; 3];
    for (o, &v) in d.iter_mut().zip(dims) {
        *o = v;
    }
    d
}

/// Separable 3-wide max (dilate) or min (erode) along each axis; voxels
/// outside the volume are ignored.
fn box_filter(src: &[bool], dims: &[usize], dilate: bool) -> Vec<bool> {
    let d = pad3(dims);
    let strides = [1, d[0], d[0] * d[1]];
    let mut cur = src.to_vec();
    for ax in 0..3 {
        let mut next = cur.clone();
        let stride = strides[ax];
        for (i, out) in next.iter_mut().enumerate() {
            let c = (i / stride) % d[ax];
            let mut acc = cur[i];
            if c > 0 {
                acc = if dilate {
                    acc | cur[i - stride]
                } else {
                    acc & cur[i - stride]
                };
            }
            if c + 1 < d[ax] {
                acc = if dilate {
                    acc | cur[i + stride]
                } else {
                    acc & cur[i + stride]
                };
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}

/// Morphological closing with a 3×3×3 box on a zero-padded copy, so the
/// result never grows out to the volume faces.
fn close(src: &[bool], dims: &[usize]) -> Vec<bool> {
    let d = pad3(dims);
    let p = [d[0] + 2, d[1] + 2, d[2] + 2];
    let mut padded = vec![false; p[0] * p[1] * p[2]];
    let at = |x: usize, y: usize, z: usize| x + p[0] * (y + p[1] * z);
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                padded[at(x + 1, y + 1, z + 1)] = src[x + d[0] * (y + d[1] * z)];
            }
        }
    }
    let closed = box_filter(&box_filter(&padded, &p, true), &p, false);
    let mut out = vec![false; src.len()];
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                out[x + d[0] * (y + d[1] * z)] = closed[at(x + 1, y + 1, z + 1)];
            }
        }
    }
    out
}

/// Background not reachable from the volume faces becomes foreground.
fn fill_holes(fg: &[bool], dims: &[usize]) -> Vec<bool> {
    let d = pad3(dims);
    let mut outside = vec![false; fg.len()];
    let mut stack = Vec::new();
    for i in 0..fg.len() {
        let x = i % d[0];
        let y = (i / d[0]) % d[1];
        let z = i / (d[0] * d[1]);
        let on_face = x == 0 || y == 0 || z == 0 || x + 1 == d[0] || y + 1 == d[1] || z + 1 == d[2];
        if on_face && !fg[i] && !outside[i] {
            outside[i] = true;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        for j in neighbors6(i, &d) {
            if !fg[j] && !outside[j] {
                outside[j] = true;
                stack.push(j);
            }
        }
    }
    outside.iter().map(|&o| !o).collect()
}
