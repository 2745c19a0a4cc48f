//! Winograd F(4×4, 3×3) correlation for inference.
//!
//! Used by [`super::conv2d`] for stride-1 3×3 kernels when no graph is
//! being recorded. Each 4×4 output tile costs 36 multiplies per channel
//! pair instead of 144.

use std::any::Any;
use std::cell::RefCell;

use super::Real;

const TILE: usize = 4;
const WIN: usize = 6;

fn input_1d<T: Real>(d: [T; 6]) -> [T; 6] {
    let f = T::from_f64;
    let (two, four, five) = (f(2.0), f(4.0), f(5.0));
    [
        four * d[0] - five * d[2] + d[4],
        d[3] + d[4] - four * (d[1] + d[2]),
        four * (d[1] - d[2]) - d[3] + d[4],
        two * (d[3] - d[1]) - d[2] + d[4],
        two * (d[1] - d[3]) - d[2] + d[4],
        four * d[1] - five * d[3] + d[5],
    ]
}

fn kernel_1d(g: [f64; 3]) -> [f64; 6] {
    [
        g[0] / 4.0,
        -(g[0] + g[1] + g[2]) / 6.0,
        -(g[0] - g[1] + g[2]) / 6.0,
        g[0] / 24.0 + g[1] / 12.0 + g[2] / 6.0,
        g[0] / 24.0 - g[1] / 12.0 + g[2] / 6.0,
        g[2],
    ]
}

fn output_1d<T: Real>(m: [T; 6]) -> [T; 4] {
    let f = T::from_f64;
    let (a, b) = (m[1] + m[2], m[1] - m[2]);
    let (c, d) = (m[3] + m[4], m[3] - m[4]);
    [
        m[0] + a + c,
        b + f(2.0) * d,
        a + f(4.0) * c,
        b + f(8.0) * d + m[5],
    ]
}

thread_local! {
    static SCRATCH: RefCell<Vec<Box<dyn Any>>> = const { RefCell::new(Vec::new()) };
}

/// Zeroed buffer of `len`, reusing an earlier allocation on this thread.
fn take<T: Real + 'static>(len: usize) -> Vec<T> {
    let reused = SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        let at = s.iter().position(|b| b.is::<Vec<T>>())?;
        s.swap_remove(at).downcast::<Vec<T>>().ok().map(|b| *b)
    });
    let mut buf = reused.unwrap_or_default();
    buf.clear();
    buf.resize(len, T::ZERO);
    buf
}

fn give<T: Real + 'static>(buf: Vec<T>) {
    SCRATCH.with(|s| s.borrow_mut().push(Box::new(buf)));
}

/// Transformed weights, `36 × O × C`.
fn transform_weights<T: Real>(weight: &[T], o: usize, c: usize) -> Vec<T> {
    let mut u = vec![T::ZERO; WIN * WIN * o * c];
    for oc in 0..o * c {
        let g = &weight[oc * 9..oc * 9 + 9];
        // G·g, column by column, then (G·g)·Gᵀ row by row.
        let mut tmp = [[0.0f64; 3]; 6];
        for j in 0..3 {
            let col = kernel_1d([g[j].to_f64(), g[3 + j].to_f64(), g[6 + j].to_f64()]);
            for i in 0..6 {
                tmp[i][j] = col[i];
            }
        }
        for (i, row) in tmp.iter().enumerate() {
            let r = kernel_1d(*row);
            for (j, v) in r.iter().enumerate() {
                u[(i * WIN + j) * o * c + oc] = T::from_f64(*v);
            }
        }
    }
    u
}

/// Correlates `x` (N×C×H×W) with a 3×3 `weight` (O×C×3×3), stride 1,
/// zero padding `padding`. Returns N×O×H'×W' data.
#[allow(clippy::too_many_arguments)]
pub(super) fn conv3x3<T: Real + 'static>(
    x: &[T],
    [n, c, h, w]: [usize; 4],
    weight: &[T],
    o: usize,
    bias: Option<&[T]>,
    padding: usize,
) -> (Vec<T>, usize, usize) {
    let out_h = h + 2 * padding - 2;
    let out_w = w + 2 * padding - 2;
    let (ty, tx) = (out_h.div_ceil(TILE), out_w.div_ceil(TILE));
    let tiles = ty * tx;
    let p = n * tiles;

    // Zero-padded plane covering every input window.
    let (ph, pw) = (ty * TILE + 2, tx * TILE + 2);
    let mut padded = vec![T::ZERO; ph * pw];
    // Bᵀ applied down the rows of one strip of six rows, for every column.
    let mut strip = vec![T::ZERO; WIN * pw];
    let mut v = take::<T>(WIN * WIN * c * p);
    for b in 0..n {
        for ci in 0..c {
            let plane = &x[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
            for yy in 0..h {
                let dst = (yy + padding) * pw + padding;
                padded[dst..dst + w].copy_from_slice(&plane[yy * w..(yy + 1) * w]);
            }
            for ti in 0..ty {
                let rows: [&[T]; 6] =
                    std::array::from_fn(|i| &padded[(ti * TILE + i) * pw..(ti * TILE + i + 1) * pw]);
                for xx in 0..pw {
                    let r = input_1d(std::array::from_fn(|i| rows[i][xx]));
                    for i in 0..6 {
                        strip[i * pw + xx] = r[i];
                    }
                }
                let base = b * tiles + ti * tx;
                for i in 0..6 {
                    let srow = &strip[i * pw..(i + 1) * pw];
                    let dsts: [usize; 6] = std::array::from_fn(|j| ((i * WIN + j) * c + ci) * p + base);
                    for tj in 0..tx {
                        let r = input_1d(std::array::from_fn(|j| srow[tj * TILE + j]));
                        for j in 0..6 {
                            v[dsts[j] + tj] = r[j];
                        }
                    }
                }
            }
        }
    }

    let u = transform_weights(weight, o, c);
    let mut m = take::<T>(WIN * WIN * o * p);
    for xi in 0..WIN * WIN {
        T::gemm(
            o,
            c,
            p,
            T::ONE,
            &u[xi * o * c..(xi + 1) * o * c],
            (c as isize, 1),
            &v[xi * c * p..(xi + 1) * c * p],
            (p as isize, 1),
            T::ZERO,
            &mut m[xi * o * p..(xi + 1) * o * p],
            p,
        );
    }
    give(v);

    let mut out = vec![T::ZERO; n * o * out_h * out_w];
    // Aᵀ applied down the six transform rows, for one tile row: 4 × 6 × tx.
    let mut strip = vec![T::ZERO; TILE * WIN * tx];
    for oi in 0..o {
        let bv = bias.map_or(T::ZERO, |b| b[oi]);
        for b in 0..n {
            let dst = &mut out[(b * o + oi) * out_h * out_w..(b * o + oi + 1) * out_h * out_w];
            for ti in 0..ty {
                let base = b * tiles + ti * tx;
                for j in 0..6 {
                    let srcs: [&[T]; 6] = std::array::from_fn(|i| {
                        let at = ((i * WIN + j) * o + oi) * p + base;
                        &m[at..at + tx]
                    });
                    for tj in 0..tx {
                        let r = output_1d(std::array::from_fn(|i| srcs[i][tj]));
                        for i in 0..4 {
                            strip[(i * WIN + j) * tx + tj] = r[i];
                        }
                    }
                }
                let y0 = ti * TILE;
                for i in 0..TILE.min(out_h - y0) {
                    let row = &mut dst[(y0 + i) * out_w..(y0 + i + 1) * out_w];
                    for tj in 0..tx {
                        let r = output_1d(std::array::from_fn(|j| strip[(i * WIN + j) * tx + tj]));
                        let x0 = tj * TILE;
                        for (j, val) in r.iter().take(out_w - x0).enumerate() {
                            row[x0 + j] = *val + bv;
                        }
                    }
                }
            }
        }
    }
    give(m);
    (out, out_h, out_w)
}
