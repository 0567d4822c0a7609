use crate::error::{Error, Result};

use super::Tensor;

/// Align-corners bilinear interpolation weights from an `in_h × in_w` grid to
/// an `out_h × out_w` grid. Each output cell has at most four taps.
#[derive(Debug, Clone, PartialEq)]
pub struct ResizePlan {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    (0..n_out)
        .map(|i| {
            if n_in == 1 {
                return vec![(0, 1.0)];
            }
            let pos = if n_out == 1 {
                0.0
            } else if n_in == n_out {
                i as f64
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(n_in - 1);
            let frac = pos - i0 as f64;
            if frac == 0.0 || i0 + 1 >= n_in {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - frac), (i0 + 1, frac)]
            }
        })
        .collect()
}

impl ResizePlan {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<Self> {
        if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "resize {in_h}x{in_w} -> {out_h}x{out_w}: sizes must be >= 1"
            )));
        }
        let rows = axis_taps(in_h, out_h);
        let cols = axis_taps(in_w, out_w);
        let mut taps = Vec::with_capacity(out_h * out_w);
        for r in &rows {
            for c in &cols {
                let mut cell = Vec::with_capacity(r.len() * c.len());
                for &(ri, rw) in r {
                    for &(ci, cw) in c {
                        cell.push((ri * in_w + ci, rw * cw));
                    }
                }
                taps.push(cell);
            }
        }
        Ok(Self {
            in_h,
            in_w,
            out_h,
            out_w,
            taps,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.in_h == self.out_h && self.in_w == self.out_w
    }

    pub fn in_cells(&self) -> usize {
        self.in_h * self.in_w
    }

    pub fn out_cells(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Channels-last: `src` is `[in_cells, channels]` flattened row-major.
    pub(crate) fn forward_hwc(&self, src: &[f64], channels: usize) -> Vec<f64> {
        if self.is_identity() {
            return src.to_vec();
        }
        let mut out = vec![0.0; self.out_cells() * channels];
        for (o, cell) in self.taps.iter().enumerate() {
            let dst = &mut out[o * channels..(o + 1) * channels];
            for &(i, w) in cell {
                let s = &src[i * channels..(i + 1) * channels];
                dst.iter_mut().zip(s).for_each(|(d, v)| *d += w * v);
            }
        }
        out
    }

    pub(crate) fn backward_hwc(&self, grad_out: &[f64], channels: usize) -> Vec<f64> {
        if self.is_identity() {
            return grad_out.to_vec();
        }
        let mut g = vec![0.0; self.in_cells() * channels];
        for (o, cell) in self.taps.iter().enumerate() {
            let go = &grad_out[o * channels..(o + 1) * channels];
            for &(i, w) in cell {
                let gi = &mut g[i * channels..(i + 1) * channels];
                gi.iter_mut().zip(go).for_each(|(d, v)| *d += w * v);
            }
        }
        g
    }
}

/// Resizes a `[C, H, W]` tensor with align-corners bilinear interpolation.
pub fn bilinear_resize(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[c, h, w] = src.shape() else {
        return Err(Error::Shape {
            op: "bilinear_resize",
            lhs: src.shape().to_vec(),
            rhs: vec![out_h, out_w],
        });
    };
    let plan = ResizePlan::new(h, w, out_h, out_w)?;
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in src.data().chunks(h * w) {
        out.extend(plan.forward_hwc(plane, 1));
    }
    Tensor::new(vec![c, out_h, out_w], out)
}
