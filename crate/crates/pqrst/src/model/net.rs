//! Forward and backward passes, written out explicitly.
//!
//! Layer stack: 3x3 stem convolution, then depthwise-separable blocks
//! (depthwise 3x3 with a time stride, pointwise 1x1), each convolution
//! followed by per-channel normalization over its spatial extent and a
//! ReLU; a global mean over the mel axis; a 1x1 head to 9 channels
//! (3 classes x confidence/start/end) through the logistic function.
//!
//! Normalization uses the statistics of the tensor being normalized, so
//! the forward pass is a pure function of (params, input).

use crate::grid_codec::{GridCell, PredictionGrid};
use crate::model::{ModelParams, HEAD_FIELDS};

const NORM_EPS: f64 = 1e-5;

/// Channel-major dense tensor: index (c, y, x) maps to
/// `(c * h + y) * w + x`.
#[derive(Debug, Clone)]
pub(crate) struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Tensor {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.h * self.w;
        &mut self.data[c * plane..(c + 1) * plane]
    }
}

pub(crate) struct NormCache {
    pub istd: Vec<f64>,
    pub xhat: Tensor,
}

pub(crate) struct LayerCache {
    pub norm: NormCache,
    /// Post-ReLU activation, the next layer's input.
    pub act: Tensor,
}

pub(crate) struct ForwardCache {
    pub input: Tensor,
    pub stem: LayerCache,
    /// Per block: depthwise cache, pointwise cache.
    pub blocks: Vec<(LayerCache, LayerCache)>,
    /// Mel-averaged features, `c_last x n_intervals`.
    pub pooled: Vec<f64>,
    /// Logistic outputs of the head, `9 x n_intervals`.
    pub probs: Vec<f64>,
}

impl ForwardCache {
    /// Hash of the ReLU firing pattern; used to detect activation-pattern
    /// changes between finite-difference evaluation points.
    pub fn activation_pattern(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut feed = |t: &Tensor| {
            for &v in &t.data {
                hash = hash.wrapping_mul(0x100000001b3) ^ u64::from(v > 0.0);
            }
        };
        feed(&self.stem.act);
        for (dw, pw) in &self.blocks {
            feed(&dw.act);
            feed(&pw.act);
        }
        hash
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense 3x3 convolution, padding 1, stride (1, stride_w), no bias.
/// `weights` is `[out_c][in_c][3][3]`.
fn conv3x3(input: &Tensor, weights: &[f64], out_c: usize, stride_w: usize) -> Tensor {
    let (in_c, h, w) = (input.c, input.h, input.w);
    let w_out = (w - 1) / stride_w + 1;
    let mut out = Tensor::zeros(out_c, h, w_out);
    for o in 0..out_c {
        let out_plane = out.channel_mut(o);
        for i in 0..in_c {
            let in_plane = input.channel(i);
            let w_base = ((o * in_c) + i) * 9;
            accumulate_3x3(
                out_plane,
                in_plane,
                &weights[w_base..w_base + 9],
                h,
                w,
                w_out,
                stride_w,
            );
        }
    }
    out
}

/// Depthwise 3x3 convolution, padding 1, stride (1, stride_w).
/// `weights` is `[c][3][3]`.
fn dwconv3x3(input: &Tensor, weights: &[f64], stride_w: usize) -> Tensor {
    let (c, h, w) = (input.c, input.h, input.w);
    let w_out = (w - 1) / stride_w + 1;
    let mut out = Tensor::zeros(c, h, w_out);
    for ch in 0..c {
        let out_plane = out.channel_mut(ch);
        let in_plane = input.channel(ch);
        accumulate_3x3(
            out_plane,
            in_plane,
            &weights[ch * 9..ch * 9 + 9],
            h,
            w,
            w_out,
            stride_w,
        );
    }
    out
}

/// out[y][x'] += sum_{dy,dx} k[dy][dx] * in[y+dy-1][x'*s+dx-1].
fn accumulate_3x3(
    out_plane: &mut [f64],
    in_plane: &[f64],
    kernel: &[f64],
    h: usize,
    w: usize,
    w_out: usize,
    stride_w: usize,
) {
    for dy in 0..3usize {
        for dx in 0..3usize {
            let k = kernel[dy * 3 + dx];
            if k == 0.0 {
                continue;
            }
            // x = x'*s + dx - 1 must land in [0, w).
            let xp_min = if dx == 0 { 1 } else { 0 };
            let xp_end = ((w - dx) / stride_w + 1).min(w_out);
            if xp_end <= xp_min {
                continue;
            }
            for y in 0..h {
                let yy = y as isize + dy as isize - 1;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let in_row = &in_plane[yy as usize * w..yy as usize * w + w];
                let out_row = &mut out_plane[y * w_out..y * w_out + w_out];
                if stride_w == 1 {
                    let src = &in_row[xp_min + dx - 1..xp_end + dx - 1];
                    for (slot, &v) in out_row[xp_min..xp_end].iter_mut().zip(src) {
                        *slot += k * v;
                    }
                } else {
                    for (xp, slot) in out_row.iter_mut().enumerate().take(xp_end).skip(xp_min) {
                        *slot += k * in_row[xp * stride_w + dx - 1];
                    }
                }
            }
        }
    }
}

/// Transpose of [`accumulate_3x3`]: scatters output gradients back to the
/// input, and accumulates kernel gradients.
fn backprop_3x3(
    grad_out_plane: &[f64],
    in_plane: &[f64],
    kernel: &[f64],
    grad_in_plane: &mut [f64],
    grad_kernel: &mut [f64],
    h: usize,
    w: usize,
    w_out: usize,
    stride_w: usize,
) {
    for dy in 0..3usize {
        for dx in 0..3usize {
            let k = kernel[dy * 3 + dx];
            let mut kg = 0.0;
            let xp_min = if dx == 0 { 1 } else { 0 };
            let xp_end = ((w - dx) / stride_w + 1).min(w_out);
            if xp_end <= xp_min {
                continue;
            }
            for y in 0..h {
                let yy = y as isize + dy as isize - 1;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let in_row = &in_plane[yy as usize * w..yy as usize * w + w];
                let gin_row = &mut grad_in_plane[yy as usize * w..yy as usize * w + w];
                let gout_row = &grad_out_plane[y * w_out..y * w_out + w_out];
                if stride_w == 1 {
                    let x0 = xp_min + dx - 1;
                    let x1 = xp_end + dx - 1;
                    for ((&g, &v), gd) in gout_row[xp_min..xp_end]
                        .iter()
                        .zip(&in_row[x0..x1])
                        .zip(&mut gin_row[x0..x1])
                    {
                        kg += g * v;
                        *gd += g * k;
                    }
                } else {
                    for (xp, &g) in gout_row.iter().enumerate().take(xp_end).skip(xp_min) {
                        let x = xp * stride_w + dx - 1;
                        kg += g * in_row[x];
                        gin_row[x] += g * k;
                    }
                }
            }
            grad_kernel[dy * 3 + dx] += kg;
        }
    }
}

/// Kernel-gradient-only variant of [`backprop_3x3`] for the first layer,
/// whose input gradient is never used.
fn backprop_3x3_weights_only(
    grad_out_plane: &[f64],
    in_plane: &[f64],
    grad_kernel: &mut [f64],
    h: usize,
    w: usize,
    w_out: usize,
    stride_w: usize,
) {
    for dy in 0..3usize {
        for dx in 0..3usize {
            let mut kg = 0.0;
            let xp_min = if dx == 0 { 1 } else { 0 };
            let xp_end = ((w - dx) / stride_w + 1).min(w_out);
            if xp_end <= xp_min {
                continue;
            }
            for y in 0..h {
                let yy = y as isize + dy as isize - 1;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let in_row = &in_plane[yy as usize * w..yy as usize * w + w];
                let gout_row = &grad_out_plane[y * w_out..y * w_out + w_out];
                if stride_w == 1 {
                    let src = &in_row[xp_min + dx - 1..xp_end + dx - 1];
                    for (&g, &v) in gout_row[xp_min..xp_end].iter().zip(src) {
                        kg += g * v;
                    }
                } else {
                    for (xp, &g) in gout_row.iter().enumerate().take(xp_end).skip(xp_min) {
                        kg += g * in_row[xp * stride_w + dx - 1];
                    }
                }
            }
            grad_kernel[dy * 3 + dx] += kg;
        }
    }
}

/// Pointwise 1x1 convolution: `weights` is `[out_c][in_c]`.
fn pointwise(input: &Tensor, weights: &[f64], out_c: usize) -> Tensor {
    let mut out = Tensor::zeros(out_c, input.h, input.w);
    for o in 0..out_c {
        let out_plane = out.channel_mut(o);
        for i in 0..input.c {
            let k = weights[o * input.c + i];
            if k == 0.0 {
                continue;
            }
            for (dst, &v) in out_plane.iter_mut().zip(input.channel(i)) {
                *dst += k * v;
            }
        }
    }
    out
}

/// Per-channel normalization over the channel's spatial extent, followed
/// by the affine (gamma, beta).
fn norm_forward(input: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, NormCache) {
    let plane = (input.h * input.w) as f64;
    let mut out = Tensor::zeros(input.c, input.h, input.w);
    let mut xhat = Tensor::zeros(input.c, input.h, input.w);
    let mut istds = Vec::with_capacity(input.c);
    for c in 0..input.c {
        let z = input.channel(c);
        let mean = z.iter().sum::<f64>() / plane;
        let var = z.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / plane;
        let istd = 1.0 / (var + NORM_EPS).sqrt();
        istds.push(istd);
        let xh = xhat.channel_mut(c);
        for (dst, &v) in xh.iter_mut().zip(z) {
            *dst = (v - mean) * istd;
        }
        let o = out.channel_mut(c);
        for (dst, &v) in o.iter_mut().zip(xhat.channel(c)) {
            *dst = gamma[c] * v + beta[c];
        }
    }
    (out, NormCache { istd: istds, xhat })
}

/// Backward through the normalization: returns the gradient w.r.t. the
/// convolution output and accumulates (gamma, beta) gradients.
fn norm_backward(
    grad_out: &Tensor,
    cache: &NormCache,
    gamma: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Tensor {
    let plane = (grad_out.h * grad_out.w) as f64;
    let mut grad_in = Tensor::zeros(grad_out.c, grad_out.h, grad_out.w);
    for c in 0..grad_out.c {
        let go = grad_out.channel(c);
        let xh = cache.xhat.channel(c);
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for (&g, &x) in go.iter().zip(xh) {
            grad_gamma[c] += g * x;
            grad_beta[c] += g;
            sum_g += g;
            sum_gx += g * x;
        }
        let mean_g = gamma[c] * sum_g / plane;
        let mean_gx = gamma[c] * sum_gx / plane;
        let gi = grad_in.channel_mut(c);
        let istd = cache.istd[c];
        for ((dst, &g), &x) in gi.iter_mut().zip(go).zip(xh) {
            *dst = istd * (gamma[c] * g - mean_g - x * mean_gx);
        }
    }
    grad_in
}

fn relu(input: &Tensor) -> Tensor {
    Tensor {
        c: input.c,
        h: input.h,
        w: input.w,
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

fn norm_relu_layer(conv_out: Tensor, gamma: &[f64], beta: &[f64]) -> LayerCache {
    let (normed, norm) = norm_forward(&conv_out, gamma, beta);
    let act = relu(&normed);
    LayerCache { norm, act }
}

/// Full forward pass with intermediate caches for backprop.
pub(crate) fn forward_full(params: &ModelParams, input: &Tensor) -> (PredictionGrid, ForwardCache) {
    let layout = params.layout();
    let config = &params.config;
    let data = &params.data;

    let stem_out = conv3x3(
        input,
        &data[layout.stem_w.clone()],
        config.stem_channels,
        1,
    );
    let stem = norm_relu_layer(
        stem_out,
        &data[layout.stem_gamma.clone()],
        &data[layout.stem_beta.clone()],
    );

    let mut blocks = Vec::with_capacity(layout.blocks.len());
    {
        let mut prev = &stem.act;
        for bl in &layout.blocks {
            let dw_out = dwconv3x3(prev, &data[bl.dw_w.clone()], bl.time_stride);
            let dw = norm_relu_layer(dw_out, &data[bl.dw_gamma.clone()], &data[bl.dw_beta.clone()]);
            let pw_out = pointwise(&dw.act, &data[bl.pw_w.clone()], bl.out_channels);
            let pw = norm_relu_layer(pw_out, &data[bl.pw_gamma.clone()], &data[bl.pw_beta.clone()]);
            blocks.push((dw, pw));
            prev = &blocks.last().unwrap().1.act;
        }
    }

    let last = blocks.last().map(|(_, pw)| &pw.act).unwrap_or(&stem.act);
    debug_assert_eq!(last.w, config.n_intervals);

    // Global mean over the mel axis.
    let c_last = last.c;
    let n_int = last.w;
    let mut pooled = vec![0.0; c_last * n_int];
    for c in 0..c_last {
        let plane = last.channel(c);
        for y in 0..last.h {
            let row = &plane[y * n_int..(y + 1) * n_int];
            for (t, &v) in row.iter().enumerate() {
                pooled[c * n_int + t] += v;
            }
        }
        let inv = 1.0 / last.h as f64;
        for t in 0..n_int {
            pooled[c * n_int + t] *= inv;
        }
    }

    // 1x1 head with bias.
    let head_w = &data[layout.head_w.clone()];
    let head_b = &data[layout.head_b.clone()];
    let mut logits = vec![0.0; HEAD_FIELDS * n_int];
    for k in 0..HEAD_FIELDS {
        for t in 0..n_int {
            let mut acc = head_b[k];
            for c in 0..c_last {
                acc += head_w[k * c_last + c] * pooled[c * n_int + t];
            }
            logits[k * n_int + t] = acc;
        }
    }
    let probs: Vec<f64> = logits.iter().map(|&v| sigmoid(v)).collect();

    let mut cells = Vec::with_capacity(n_int * 3);
    for t in 0..n_int {
        for class in 0..3 {
            cells.push(GridCell {
                confidence: probs[(class * 3) * n_int + t],
                start_frac: probs[(class * 3 + 1) * n_int + t],
                end_frac: probs[(class * 3 + 2) * n_int + t],
            });
        }
    }
    let grid = PredictionGrid::new(n_int, cells);
    let cache = ForwardCache {
        input: input.clone(),
        stem,
        blocks,
        pooled,
        probs,
    };
    (grid, cache)
}

/// Backward pass. `grad_cells` holds, per interval and class, the loss
/// gradient in (confidence, start_frac, end_frac) — the layout produced
/// by `loss::grid_loss_grad`. Returns the gradient over the flat
/// parameter vector.
pub(crate) fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_cells: &[[f64; 3]],
) -> Vec<f64> {
    let layout = params.layout();
    let config = &params.config;
    let data = &params.data;
    let mut grad = vec![0.0; layout.total];

    let n_int = config.n_intervals;
    let c_last = layout.blocks.last().map(|b| b.out_channels).unwrap_or(config.stem_channels);

    // Loss gradient through the logistic: dL/dlogit = dL/dp * p * (1 - p).
    let mut grad_logits = vec![0.0; HEAD_FIELDS * n_int];
    for t in 0..n_int {
        for class in 0..3 {
            let g = grad_cells[t * 3 + class];
            for (field, &gf) in g.iter().enumerate() {
                let k = class * 3 + field;
                let p = cache.probs[k * n_int + t];
                grad_logits[k * n_int + t] = gf * p * (1.0 - p);
            }
        }
    }

    // Head.
    let head_w = &data[layout.head_w.clone()];
    {
        let gw = layout.head_w.clone();
        let gb = layout.head_b.clone();
        for k in 0..HEAD_FIELDS {
            for t in 0..n_int {
                let g = grad_logits[k * n_int + t];
                grad[gb.start + k] += g;
                for c in 0..c_last {
                    grad[gw.start + k * c_last + c] += g * cache.pooled[c * n_int + t];
                }
            }
        }
    }
    let mut grad_pooled = vec![0.0; c_last * n_int];
    for c in 0..c_last {
        for t in 0..n_int {
            let mut acc = 0.0;
            for k in 0..HEAD_FIELDS {
                acc += head_w[k * c_last + c] * grad_logits[k * n_int + t];
            }
            grad_pooled[c * n_int + t] = acc;
        }
    }

    // Undo the mel mean.
    let last_act = cache
        .blocks
        .last()
        .map(|(_, pw)| &pw.act)
        .unwrap_or(&cache.stem.act);
    let mut grad_act = Tensor::zeros(last_act.c, last_act.h, last_act.w);
    let inv_h = 1.0 / last_act.h as f64;
    for c in 0..last_act.c {
        let gplane = grad_act.channel_mut(c);
        for y in 0..last_act.h {
            for t in 0..n_int {
                gplane[y * n_int + t] = grad_pooled[c * n_int + t] * inv_h;
            }
        }
    }

    // Blocks in reverse.
    for (b_idx, bl) in layout.blocks.iter().enumerate().rev() {
        let (dw_cache, pw_cache) = &cache.blocks[b_idx];
        let pw_input = &dw_cache.act;

        // Pointwise: relu -> norm -> conv.
        let grad_pw_conv = {
            relu_mask(&mut grad_act, &pw_cache.act);
            let (gg, gb) = (bl.pw_gamma.clone(), bl.pw_beta.clone());
            let (g_slice, rest) = split_two(&mut grad, gg.start, gg.end, gb.start, gb.end);
            norm_backward(
                &grad_act,
                &pw_cache.norm,
                &data[bl.pw_gamma.clone()],
                g_slice,
                rest,
            )
        };
        let mut grad_pw_in = Tensor::zeros(pw_input.c, pw_input.h, pw_input.w);
        {
            let pw_w = &data[bl.pw_w.clone()];
            let gw = &mut grad[bl.pw_w.clone()];
            for o in 0..bl.out_channels {
                let gout = grad_pw_conv.channel(o);
                for i in 0..bl.in_channels {
                    let k = pw_w[o * bl.in_channels + i];
                    let mut kg = 0.0;
                    for ((&g, &v), gd) in gout
                        .iter()
                        .zip(pw_input.channel(i))
                        .zip(grad_pw_in.channel_mut(i))
                    {
                        kg += g * v;
                        *gd += g * k;
                    }
                    gw[o * bl.in_channels + i] += kg;
                }
            }
        }

        // Depthwise: relu -> norm -> conv.
        grad_act = grad_pw_in;
        relu_mask(&mut grad_act, &dw_cache.act);
        let grad_dw_conv = {
            let (gg, gb) = (bl.dw_gamma.clone(), bl.dw_beta.clone());
            let (g_slice, rest) = split_two(&mut grad, gg.start, gg.end, gb.start, gb.end);
            norm_backward(
                &grad_act,
                &dw_cache.norm,
                &data[bl.dw_gamma.clone()],
                g_slice,
                rest,
            )
        };
        let dw_input = if b_idx == 0 {
            &cache.stem.act
        } else {
            &cache.blocks[b_idx - 1].1.act
        };
        let mut grad_dw_in = Tensor::zeros(dw_input.c, dw_input.h, dw_input.w);
        {
            let dw_w = &data[bl.dw_w.clone()];
            let gw = &mut grad[bl.dw_w.clone()];
            for ch in 0..bl.in_channels {
                backprop_3x3(
                    grad_dw_conv.channel(ch),
                    dw_input.channel(ch),
                    &dw_w[ch * 9..ch * 9 + 9],
                    grad_dw_in.channel_mut(ch),
                    &mut gw[ch * 9..ch * 9 + 9],
                    dw_input.h,
                    dw_input.w,
                    grad_dw_conv.w,
                    bl.time_stride,
                );
            }
        }
        grad_act = grad_dw_in;
    }

    // Stem: relu -> norm -> conv (input gradient is not needed).
    relu_mask(&mut grad_act, &cache.stem.act);
    let grad_stem_conv = {
        let (gg, gb) = (
            layout.stem_gamma.clone(),
            layout.stem_beta.clone(),
        );
        let (g_slice, rest) = split_two(&mut grad, gg.start, gg.end, gb.start, gb.end);
        norm_backward(
            &grad_act,
            &cache.stem.norm,
            &data[layout.stem_gamma.clone()],
            g_slice,
            rest,
        )
    };
    {
        let in_c = config.n_leads;
        let gw = &mut grad[layout.stem_w.clone()];
        for o in 0..config.stem_channels {
            for i in 0..in_c {
                let base = (o * in_c + i) * 9;
                backprop_3x3_weights_only(
                    grad_stem_conv.channel(o),
                    cache.input.channel(i),
                    &mut gw[base..base + 9],
                    cache.input.h,
                    cache.input.w,
                    grad_stem_conv.w,
                    1,
                );
            }
        }
    }

    grad
}

/// Zeroes gradient entries where the activation did not fire.
fn relu_mask(grad: &mut Tensor, act: &Tensor) {
    for (g, &a) in grad.data.iter_mut().zip(&act.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Disjoint mutable views over two parameter ranges of the gradient
/// buffer (gamma range must precede beta range).
fn split_two(
    grad: &mut [f64],
    g_start: usize,
    g_end: usize,
    b_start: usize,
    b_end: usize,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(g_end <= b_start);
    let (left, right) = grad.split_at_mut(b_start);
    (&mut left[g_start..g_end], &mut right[..b_end - b_start])
}
