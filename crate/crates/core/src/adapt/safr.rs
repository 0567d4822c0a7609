use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Class-agnostic Gaussian heatmap `[rows, cols]` over box centres. Box
/// parameters are converted to grid units (cell centres at integer
/// indices) and each box spreads with `σ = (w, h)` in those units; the map
/// is the pointwise maximum over boxes.
pub fn heatmap_from_boxes(boxes: &[BBox], rows: usize, cols: usize) -> Result<Tensor> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("heatmap grid must be non-empty".into()));
    }
    let mut out = vec![0.0; rows * cols];
    for b in boxes {
        let (bx, by) = (b.cx * cols as f64 - 0.5, b.cy * rows as f64 - 0.5);
        let (bw, bh) = ((b.w * cols as f64).max(1e-6), (b.h * rows as f64).max(1e-6));
        for j in 0..rows {
            let dy = (j as f64 - by) / bh;
            for i in 0..cols {
                let dx = (i as f64 - bx) / bw;
                let v = (-0.5 * (dx * dx + dy * dy)).exp();
                let cell = &mut out[j * cols + i];
                *cell = f64::max(*cell, v);
            }
        }
    }
    Tensor::new(vec![rows, cols], out)
}

/// `Σ_l Σ_cells H · ‖inv_l − f‖² / (cells · L)`. Every `inv_l` and `f` is
/// `[cells, D]` on the heatmap grid, row-major.
pub fn safr_loss(g: &mut Graph, inv: &[Var], foundation: Var, hm: &Tensor) -> Result<Var> {
    let &[cells, d] = g.shape(foundation) else {
        return Err(Error::Shape {
            op: "safr_loss",
            lhs: g.shape(foundation).to_vec(),
            rhs: hm.shape().to_vec(),
        });
    };
    if hm.numel() != cells || inv.is_empty() {
        return Err(Error::Shape {
            op: "safr_loss",
            lhs: vec![cells, d],
            rhs: hm.shape().to_vec(),
        });
    }
    let weights: Vec<f64> = hm.data().iter().flat_map(|&h| std::iter::repeat_n(h, d)).collect();
    let weights = g.constant(Tensor::new(vec![cells, d], weights)?)?;
    let mut total = None;
    for &x in inv {
        let diff = g.sub(x, foundation)?;
        let sq = g.square(diff);
        let weighted = g.mul(sq, weights)?;
        let s = g.sum(weighted);
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    let total = total.expect("at least one level");
    Ok(g.scale(total, 1.0 / (cells * inv.len()) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    // A 16×16 grid: cx = 8.5 / 16 puts the centre on cell index 8.
    fn centred(w_cells: f64, h_cells: f64) -> BBox {
        BBox::new(8.5 / 16.0, 8.5 / 16.0, w_cells / 16.0, h_cells / 16.0)
    }

    #[test]
    fn gaussian_values() {
        let hm = heatmap_from_boxes(&[centred(4.0, 4.0)], 16, 16).unwrap();
        assert_eq!(hm.data()[8 * 16 + 8], 1.0);
        // H(i = 12, j = 8): column 12, row 8
        assert!((hm.data()[8 * 16 + 12] - (-0.5f64).exp()).abs() < 1e-12);
        assert!((hm.data()[8 * 16 + 12] - 0.6065).abs() < 1e-4);
        assert!(hm.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_and_max() {
        let hm = heatmap_from_boxes(&[], 8, 8).unwrap();
        assert!(hm.data().iter().all(|&v| v == 0.0));
        let a = BBox::new(0.3, 0.4, 0.2, 0.3);
        let b = BBox::new(0.45, 0.5, 0.3, 0.2);
        let ha = heatmap_from_boxes(&[a], 8, 8).unwrap();
        let hb = heatmap_from_boxes(&[b], 8, 8).unwrap();
        let both = heatmap_from_boxes(&[a, b], 8, 8).unwrap();
        for i in 0..64 {
            assert_eq!(both.data()[i], ha.data()[i].max(hb.data()[i]));
        }
        assert!(heatmap_from_boxes(&[a], 0, 4).is_err());
    }

    #[test]
    fn loss_values() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let x = g.constant(Tensor::new(vec![1, 3], vec![1.0, 4.0, 3.0]).unwrap()).unwrap();
        let hm = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let l = safr_loss(&mut g, &[x], f, &hm).unwrap();
        assert_eq!(g.item(l), 4.0);
        let same = safr_loss(&mut g, &[f, f], f, &hm).unwrap();
        assert_eq!(g.item(same), 0.0);
        let zero = Tensor::zeros(&[1, 1]);
        let l = safr_loss(&mut g, &[x], f, &zero).unwrap();
        assert_eq!(g.item(l), 0.0);
    }
}
