//! Shifting-window transformer building blocks: patch embedding, window
//! partition/reverse, cyclic shifts with attention masking, windowed
//! multi-head self-attention and the residual MLP sub-block.

use crate::param::{Fwd, Param, Parameterized};
use crate::rng::Rng;
use crate::tensor::{el, Element, Result, Tensor, TensorError};

/// Additive logit for masked-out token pairs.
pub const MASK_NEG: f64 = -1e9;

/// A batch of token grids, shape `[batch, h, w, dim]`.
#[derive(Clone, Debug)]
pub struct TokenGrid<T: Element> {
    pub tensor: Tensor<T>,
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub dim: usize,
}

impl<T: Element> TokenGrid<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(TensorError::Invalid(format!(
                "token grid must be rank 4 [batch,h,w,dim], got {:?}",
                tensor.shape()
            )));
        }
        let s = tensor.shape();
        Ok(TokenGrid { batch: s[0], h: s[1], w: s[2], dim: s[3], tensor })
    }

    fn with_tensor(&self, tensor: Tensor<T>) -> Self {
        TokenGrid { tensor, ..self.clone() }
    }
}

/// Per-block hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BlockConfig {
    pub dim: usize,
    pub att_heads: usize,
    pub mlp_hidden: usize,
    pub window: usize,
    pub shift: usize,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim % self.att_heads != 0 {
            return Err(TensorError::Invalid(format!(
                "dim {} not divisible by att_heads {}",
                self.dim, self.att_heads
            )));
        }
        if self.shift >= self.window {
            return Err(TensorError::Invalid(format!(
                "shift {} must be < window {}",
                self.shift, self.window
            )));
        }
        Ok(())
    }
}

/// Linear projection of non-overlapping patches to `dim` channels.
#[derive(Clone, Debug)]
pub struct PatchEmbed<T: Element> {
    pub patch: usize,
    pub in_ch: usize,
    pub dim: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Element> PatchEmbed<T> {
    pub fn new(patch: usize, in_ch: usize, dim: usize, rng: &mut Rng) -> Self {
        PatchEmbed {
            patch,
            in_ch,
            dim,
            weight: Param::trunc_normal(&[patch * patch * in_ch, dim], rng),
            bias: Param::zeros(&[dim]),
        }
    }

    /// `image` is `[batch, h, w, channels]` with h and w divisible by the
    /// patch size.
    pub fn forward(&self, fwd: &Fwd<T>, prefix: &str, image: &Tensor<T>) -> Result<TokenGrid<T>> {
        if image.rank() != 4 {
            return Err(TensorError::Invalid(format!(
                "patch_embed expects [batch,h,w,c], got {:?}",
                image.shape()
            )));
        }
        let [b, h, w, c] = [image.shape()[0], image.shape()[1], image.shape()[2], image.shape()[3]];
        if h % self.patch != 0 || w % self.patch != 0 {
            return Err(TensorError::Invalid(format!(
                "image extents {h}x{w} not divisible by patch {}",
                self.patch
            )));
        }
        if c != self.in_ch {
            return Err(TensorError::ShapeMismatch {
                op: "patch_embed",
                lhs: vec![self.in_ch],
                rhs: vec![c],
            });
        }
        let p = self.patch;
        let (ht, wt) = (h / p, w / p);
        // [b,h,w,c] -> [b,ht,wt,p,p,c] patch extraction
        let mut map = Vec::with_capacity(b * h * w * c);
        for bi in 0..b {
            for ty in 0..ht {
                for tx in 0..wt {
                    for py in 0..p {
                        for px in 0..p {
                            let base = ((bi * h + ty * p + py) * w + tx * p + px) * c;
                            map.extend(base..base + c);
                        }
                    }
                }
            }
        }
        let patches = image.gather(&map, &[b * ht * wt, p * p * c]);
        let wt_t = fwd.leaf(&format!("{prefix}.weight"), &self.weight);
        let b_t = fwd.leaf(&format!("{prefix}.bias"), &self.bias);
        let tokens = patches.matmul(&wt_t)?.add(&b_t)?.reshape(&[b, ht, wt, self.dim])?;
        TokenGrid::new(tokens)
    }
}

impl<T: Element> Parameterized<T> for PatchEmbed<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Split a grid into non-overlapping `win` x `win` windows:
/// `[b,h,w,d] -> [b*nw, win*win, d]` with windows in raster order.
pub fn window_partition<T: Element>(g: &TokenGrid<T>, win: usize) -> Result<Tensor<T>> {
    if g.h % win != 0 || g.w % win != 0 {
        return Err(TensorError::Invalid(format!(
            "grid {}x{} not divisible by window {win}",
            g.h, g.w
        )));
    }
    let (b, h, w, d) = (g.batch, g.h, g.w, g.dim);
    let (nwy, nwx) = (h / win, w / win);
    let mut map = Vec::with_capacity(b * h * w * d);
    for bi in 0..b {
        for wy in 0..nwy {
            for wx in 0..nwx {
                for iy in 0..win {
                    for ix in 0..win {
                        let base = ((bi * h + wy * win + iy) * w + wx * win + ix) * d;
                        map.extend(base..base + d);
                    }
                }
            }
        }
    }
    Ok(g.tensor.gather(&map, &[b * nwy * nwx, win * win, d]))
}

/// Exact inverse of [`window_partition`].
pub fn window_reverse<T: Element>(
    windows: &Tensor<T>,
    batch: usize,
    h: usize,
    w: usize,
) -> Result<TokenGrid<T>> {
    if windows.rank() != 3 {
        return Err(TensorError::Invalid(format!(
            "window_reverse expects [b*nw, win*win, d], got {:?}",
            windows.shape()
        )));
    }
    let d = windows.shape()[2];
    let win2 = windows.shape()[1];
    let win = (win2 as f64).sqrt().round() as usize;
    if win * win != win2 || h % win != 0 || w % win != 0 {
        return Err(TensorError::Invalid(format!(
            "window_reverse: {win2} tokens per window does not tile {h}x{w}"
        )));
    }
    let (nwy, nwx) = (h / win, w / win);
    if windows.shape()[0] != batch * nwy * nwx {
        return Err(TensorError::ShapeMismatch {
            op: "window_reverse",
            lhs: windows.shape().to_vec(),
            rhs: vec![batch * nwy * nwx, win2, d],
        });
    }
    let mut map = Vec::with_capacity(batch * h * w * d);
    for bi in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let (wy, iy) = (y / win, y % win);
                let (wx, ix) = (x / win, x % win);
                let widx = (bi * nwy + wy) * nwx + wx;
                let base = (widx * win2 + iy * win + ix) * d;
                map.extend(base..base + d);
            }
        }
    }
    TokenGrid::new(windows.gather(&map, &[batch, h, w, d]))
}

/// Roll the grid toroidally by `(-s, -s)`: the token at `(y, x)` moves to
/// `((y - s) mod h, (x - s) mod w)`. Negative `s` undoes a positive shift.
pub fn cyclic_shift<T: Element>(g: &TokenGrid<T>, s: i64) -> TokenGrid<T> {
    if s.rem_euclid(g.h as i64) == 0 && s.rem_euclid(g.w as i64) == 0 {
        return g.clone();
    }
    let (b, h, w, d) = (g.batch, g.h, g.w, g.dim);
    let mut map = Vec::with_capacity(b * h * w * d);
    for bi in 0..b {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let sy = (y + s).rem_euclid(h as i64) as usize;
                let sx = (x + s).rem_euclid(w as i64) as usize;
                let base = ((bi * h + sy) * w + sx) * d;
                map.extend(base..base + d);
            }
        }
    }
    g.with_tensor(g.tensor.gather(&map, &[b, h, w, d]))
}

/// Pre-shift region label of the token at shifted position `(y, x)`: tokens
/// that wrapped around the bottom/right edge get distinct labels.
fn region_label(y: usize, x: usize, h: usize, w: usize, s: usize) -> usize {
    let ry = usize::from(y >= h - s);
    let rx = usize::from(x >= w - s);
    ry * 2 + rx
}

/// Additive attention mask for shifted windows, shape `[nw, win², win²]`:
/// zero for pairs from the same pre-shift region, a large negative value
/// otherwise. All zeros when `s == 0`.
pub fn attention_mask<T: Element>(h: usize, w: usize, win: usize, s: usize) -> Result<Tensor<T>> {
    if h % win != 0 || w % win != 0 {
        return Err(TensorError::Invalid(format!("grid {h}x{w} not divisible by window {win}")));
    }
    let (nwy, nwx) = (h / win, w / win);
    let nw = nwy * nwx;
    let n = win * win;
    let mut data = vec![T::zero(); nw * n * n];
    if s > 0 {
        let neg: T = el(MASK_NEG);
        for wy in 0..nwy {
            for wx in 0..nwx {
                let widx = wy * nwx + wx;
                let mut labels = vec![0usize; n];
                for iy in 0..win {
                    for ix in 0..win {
                        labels[iy * win + ix] =
                            region_label(wy * win + iy, wx * win + ix, h, w, s);
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        if labels[i] != labels[j] {
                            data[(widx * n + i) * n + j] = neg;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, &[nw, n, n]))
}

/// Tile a `[nw, n, n]` mask over batch and heads to `[b*nw*heads, n, n]`.
pub fn expand_mask<T: Element>(mask: &Tensor<T>, batch: usize, heads: usize) -> Tensor<T> {
    let nw = mask.shape()[0];
    let n = mask.shape()[1];
    let mut data = Vec::with_capacity(batch * nw * heads * n * n);
    for _ in 0..batch {
        for wi in 0..nw {
            let chunk = &mask.data()[wi * n * n..(wi + 1) * n * n];
            for _ in 0..heads {
                data.extend_from_slice(chunk);
            }
        }
    }
    Tensor::from_vec(data, &[batch * nw * heads, n, n])
}

pub struct AttentionParams<'a, T: Element> {
    pub wq: &'a Tensor<T>,
    pub bq: &'a Tensor<T>,
    pub wk: &'a Tensor<T>,
    pub bk: &'a Tensor<T>,
    pub wv: &'a Tensor<T>,
    pub bv: &'a Tensor<T>,
    pub wo: &'a Tensor<T>,
    pub bo: &'a Tensor<T>,
}

/// Per-window multi-head scaled dot-product attention with an optional
/// additive mask applied before the softmax.
///
/// `x` is `[b*nw, n, d]`; the mask, when given, must already be expanded to
/// `[b*nw*heads, n, n]`.
pub fn window_attention<T: Element>(
    x: &Tensor<T>,
    heads: usize,
    p: &AttentionParams<'_, T>,
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (nwb, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if d % heads != 0 {
        return Err(TensorError::Invalid(format!("dim {d} not divisible by {heads} heads")));
    }
    let hd = d / heads;
    let flat = x.reshape(&[nwb * n, d])?;
    let split = |t: Tensor<T>| -> Result<Tensor<T>> {
        // [nwb*n, d] -> [nwb*heads, n, hd]
        t.reshape(&[nwb, n, heads, hd])?.transpose(1, 2)?.reshape(&[nwb * heads, n, hd])
    };
    let q = split(flat.matmul(p.wq)?.add(p.bq)?)?;
    let k = split(flat.matmul(p.wk)?.add(p.bk)?)?;
    let v = split(flat.matmul(p.wv)?.add(p.bv)?)?;
    let mut logits = q.bmm(&k.transpose(1, 2)?)?.scale(1.0 / (hd as f64).sqrt());
    if let Some(m) = mask {
        logits = logits.add(m)?;
    }
    let attn = logits.softmax(2)?;
    let ctx = attn.bmm(&v)?; // [nwb*heads, n, hd]
    let merged = ctx.reshape(&[nwb, heads, n, hd])?.transpose(1, 2)?.reshape(&[nwb * n, d])?;
    merged.matmul(p.wo)?.add(p.bo)?.reshape(&[nwb, n, d])
}

/// One shifting-window transformer block:
/// `x + Att(LN(x))` on (optionally shifted) windows, then `+ MLP(LN(.))`.
#[derive(Clone, Debug)]
pub struct SwinBlock<T: Element> {
    pub cfg: BlockConfig,
    ln1_gamma: Param<T>,
    ln1_beta: Param<T>,
    wq: Param<T>,
    bq: Param<T>,
    wk: Param<T>,
    bk: Param<T>,
    wv: Param<T>,
    bv: Param<T>,
    wo: Param<T>,
    bo: Param<T>,
    ln2_gamma: Param<T>,
    ln2_beta: Param<T>,
    w1: Param<T>,
    b1: Param<T>,
    w2: Param<T>,
    b2: Param<T>,
}

pub const LN_EPS: f64 = 1e-5;

impl<T: Element> SwinBlock<T> {
    pub fn new(cfg: BlockConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let hid = cfg.mlp_hidden;
        Ok(SwinBlock {
            cfg,
            ln1_gamma: Param::ones(&[d]),
            ln1_beta: Param::zeros(&[d]),
            wq: Param::trunc_normal(&[d, d], rng),
            bq: Param::zeros(&[d]),
            wk: Param::trunc_normal(&[d, d], rng),
            bk: Param::zeros(&[d]),
            wv: Param::trunc_normal(&[d, d], rng),
            bv: Param::zeros(&[d]),
            wo: Param::trunc_normal(&[d, d], rng),
            bo: Param::zeros(&[d]),
            ln2_gamma: Param::ones(&[d]),
            ln2_beta: Param::zeros(&[d]),
            w1: Param::trunc_normal(&[d, hid], rng),
            b1: Param::zeros(&[hid]),
            w2: Param::trunc_normal(&[hid, d], rng),
            b2: Param::zeros(&[d]),
        })
    }

    /// Zero the attention and MLP output projections, making the block an
    /// identity map through the residuals.
    pub fn zero_output_projections(&mut self) {
        self.wo = Param::zeros(&self.wo.shape.clone());
        self.w2 = Param::zeros(&self.w2.shape.clone());
    }

    pub fn forward(&self, fwd: &Fwd<T>, prefix: &str, g: &TokenGrid<T>) -> Result<TokenGrid<T>> {
        if g.dim != self.cfg.dim {
            return Err(TensorError::ShapeMismatch {
                op: "swin_block",
                lhs: vec![self.cfg.dim],
                rhs: vec![g.dim],
            });
        }
        let win = self.cfg.window;
        let s = self.cfg.shift;
        let leaf = |n: &str, p: &Param<T>| fwd.leaf(&format!("{prefix}.{n}"), p);

        let ln1 = g.tensor.layer_norm(
            &leaf("ln1.gamma", &self.ln1_gamma),
            &leaf("ln1.beta", &self.ln1_beta),
            LN_EPS,
        )?;
        let normed = g.with_tensor(ln1);
        let shifted = cyclic_shift(&normed, s as i64);
        let windows = window_partition(&shifted, win)?;
        let mask = if s > 0 {
            let m = attention_mask::<T>(g.h, g.w, win, s)?;
            Some(expand_mask(&m, g.batch, self.cfg.att_heads))
        } else {
            None
        };
        let params = AttentionParams {
            wq: &leaf("att.wq", &self.wq),
            bq: &leaf("att.bq", &self.bq),
            wk: &leaf("att.wk", &self.wk),
            bk: &leaf("att.bk", &self.bk),
            wv: &leaf("att.wv", &self.wv),
            bv: &leaf("att.bv", &self.bv),
            wo: &leaf("att.wo", &self.wo),
            bo: &leaf("att.bo", &self.bo),
        };
        let attended = window_attention(&windows, self.cfg.att_heads, &params, mask.as_ref())?;
        let unshifted = cyclic_shift(&window_reverse(&attended, g.batch, g.h, g.w)?, -(s as i64));
        let x = g.tensor.add(&unshifted.tensor)?;

        let ln2 = x.layer_norm(
            &leaf("ln2.gamma", &self.ln2_gamma),
            &leaf("ln2.beta", &self.ln2_beta),
            LN_EPS,
        )?;
        let tokens = g.batch * g.h * g.w;
        let hidden = ln2
            .reshape(&[tokens, self.cfg.dim])?
            .matmul(&leaf("mlp.w1", &self.w1))?
            .add(&leaf("mlp.b1", &self.b1))?
            .gelu()
            .matmul(&leaf("mlp.w2", &self.w2))?
            .add(&leaf("mlp.b2", &self.b2))?
            .reshape(&[g.batch, g.h, g.w, self.cfg.dim])?;
        let out = x.add(&hidden)?;
        Ok(g.with_tensor(out))
    }
}

impl<T: Element> Parameterized<T> for SwinBlock<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (name, p) in [
            ("ln1.gamma", &mut self.ln1_gamma),
            ("ln1.beta", &mut self.ln1_beta),
            ("att.wq", &mut self.wq),
            ("att.bq", &mut self.bq),
            ("att.wk", &mut self.wk),
            ("att.bk", &mut self.bk),
            ("att.wv", &mut self.wv),
            ("att.bv", &mut self.bv),
            ("att.wo", &mut self.wo),
            ("att.bo", &mut self.bo),
            ("ln2.gamma", &mut self.ln2_gamma),
            ("ln2.beta", &mut self.ln2_beta),
            ("mlp.w1", &mut self.w1),
            ("mlp.b1", &mut self.b1),
            ("mlp.w2", &mut self.w2),
            ("mlp.b2", &mut self.b2),
        ] {
            f(format!("{prefix}.{name}"), p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn grid_from(data: Vec<f64>, b: usize, h: usize, w: usize, d: usize) -> TokenGrid<f64> {
        TokenGrid::new(Tensor::from_vec(data, &[b, h, w, d])).unwrap()
    }

    fn seq_grid(b: usize, h: usize, w: usize, d: usize) -> TokenGrid<f64> {
        let data: Vec<f64> = (0..b * h * w * d).map(|i| i as f64).collect();
        grid_from(data, b, h, w, d)
    }

    #[test]
    fn partition_counts_windows() {
        let g = seq_grid(1, 8, 8, 2);
        let wins = window_partition(&g, 4).unwrap();
        assert_eq!(wins.shape(), &[4, 16, 2]);
    }

    #[test]
    fn partition_reverse_roundtrip() {
        let g = seq_grid(2, 8, 8, 3);
        let wins = window_partition(&g, 4).unwrap();
        let back = window_reverse(&wins, 2, 8, 8).unwrap();
        assert_eq!(g.tensor.data(), back.tensor.data());
    }

    #[test]
    fn partition_indivisible_errors() {
        let g = seq_grid(1, 6, 6, 1);
        assert!(window_partition(&g, 4).is_err());
    }

    #[test]
    fn token_window_mapping_matches_brute_force() {
        // token at grid (5,6) with w=4 on an 8x8 grid: window index 3,
        // intra-window position (1,2)
        let g = seq_grid(1, 8, 8, 1);
        let wins = window_partition(&g, 4).unwrap();
        let expect = g.tensor.data()[5 * 8 + 6];
        assert_eq!(wins.data()[3 * 16 + 4 + 2], expect);
    }

    #[test]
    fn cyclic_shift_identity_and_inverse() {
        let g = seq_grid(1, 4, 4, 2);
        assert_eq!(cyclic_shift(&g, 0).tensor.data(), g.tensor.data());
        let round = cyclic_shift(&cyclic_shift(&g, 1), -1);
        assert_eq!(round.tensor.data(), g.tensor.data());
    }

    #[test]
    fn cyclic_shift_moves_origin_to_far_corner() {
        let g = seq_grid(1, 4, 4, 1);
        let s = cyclic_shift(&g, 1);
        // token (0,0) moves to (3,3)
        assert_eq!(s.tensor.data()[3 * 4 + 3], g.tensor.data()[0]);
    }

    #[test]
    fn mask_zero_for_no_shift() {
        let m = attention_mask::<f64>(8, 8, 4, 0).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_symmetric_and_mixed_regions() {
        let m = attention_mask::<f64>(8, 8, 4, 2).unwrap();
        let n = 16;
        for wi in 0..4 {
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(
                        m.data()[(wi * n + i) * n + j],
                        m.data()[(wi * n + j) * n + i]
                    );
                }
            }
        }
        // boundary windows (right column / bottom row) contain >= 2 regions,
        // so they have at least one masked pair
        for wi in [1usize, 2, 3] {
            let any_masked = (0..n * n).any(|k| m.data()[wi * n * n + k] != 0.0);
            assert!(any_masked, "window {wi} should mix regions");
        }
    }

    #[test]
    fn mask_matches_brute_force_region_labels() {
        let (h, w, win, s) = (8usize, 8usize, 4usize, 2usize);
        let m = attention_mask::<f64>(h, w, win, s).unwrap();
        let n = win * win;
        for wy in 0..h / win {
            for wx in 0..w / win {
                let widx = wy * (w / win) + wx;
                for i in 0..n {
                    for j in 0..n {
                        let (y1, x1) = (wy * win + i / win, wx * win + i % win);
                        let (y2, x2) = (wy * win + j / win, wx * win + j % win);
                        let same = region_label(y1, x1, h, w, s) == region_label(y2, x2, h, w, s);
                        let v = m.data()[(widx * n + i) * n + j];
                        assert_eq!(same, v == 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn single_token_window_attention_is_value_path() {
        let mut rng = Rng::new(5);
        let d = 4;
        let x = Tensor::<f64>::from_vec(vec![0.3, -0.2, 0.5, 1.0], &[1, 1, d]);
        let mk = |rng: &mut Rng| {
            Tensor::from_vec(
                (0..d * d).map(|_| rng.truncated_normal(0.5)).collect(),
                &[d, d],
            )
        };
        let (wq, wk, wv, wo) = (mk(&mut rng), mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let zero = Tensor::<f64>::zeros(&[d]);
        let p = AttentionParams {
            wq: &wq,
            bq: &zero,
            wk: &wk,
            bk: &zero,
            wv: &wv,
            bv: &zero,
            wo: &wo,
            bo: &zero,
        };
        let out = window_attention(&x, 2, &p, None).unwrap();
        // softmax over a single key is 1, so out = (x @ Wv) @ Wo
        let expect = x.reshape(&[1, d]).unwrap().matmul(&wv).unwrap().matmul(&wo).unwrap();
        for (a, b) in out.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_output_projections_make_block_identity() {
        let mut rng = Rng::new(9);
        let cfg = BlockConfig { dim: 8, att_heads: 2, mlp_hidden: 16, window: 2, shift: 1 };
        let mut block = SwinBlock::<f64>::new(cfg, &mut rng).unwrap();
        block.zero_output_projections();
        let g = seq_grid(1, 4, 4, 8);
        let fwd = Fwd::eval();
        let out = block.forward(&fwd, "blk", &g).unwrap();
        for (a, b) in out.tensor.data().iter().zip(g.tensor.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_preserves_shape() {
        let mut rng = Rng::new(11);
        for shift in [0usize, 1, 2, 3] {
            let cfg = BlockConfig { dim: 8, att_heads: 4, mlp_hidden: 12, window: 4, shift };
            let block = SwinBlock::<f64>::new(cfg, &mut rng).unwrap();
            let g = seq_grid(2, 8, 8, 8);
            let out = block.forward(&Fwd::eval(), "blk", &g).unwrap();
            assert_eq!(out.tensor.shape(), g.tensor.shape());
        }
    }

    #[test]
    fn head_divisibility_enforced() {
        let cfg = BlockConfig { dim: 10, att_heads: 4, mlp_hidden: 8, window: 2, shift: 0 };
        assert!(cfg.validate().is_err());
    }
}
