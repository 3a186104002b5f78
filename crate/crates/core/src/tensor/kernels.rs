//! Raw compute kernels on flat row-major buffers.
//!
//! Convolutions lower to GEMM over im2col columns. Small feature maps are
//! batched several samples per GEMM (layout `[K][N·H·W]`); large ones are
//! cut into row bands so each column buffer stays cache-resident.

use super::Element;

/// Strided matrix view for [`gemm`]: extents plus row/column strides.
#[derive(Clone, Copy)]
pub struct MatRef<'a, E> {
    pub data: &'a [E],
    pub rs: usize,
    pub cs: usize,
}

fn required_len(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `C(m×n) ← α·A(m×k)·B(k×n) + β·C`, with C row-major contiguous.
#[allow(clippy::too_many_arguments)]
pub fn gemm<E: Element>(
    m: usize,
    k: usize,
    n: usize,
    alpha: E,
    a: MatRef<'_, E>,
    b: MatRef<'_, E>,
    beta: E,
    c: &mut [E],
) {
    gemm_rs(m, k, n, alpha, a, b, beta, c, n);
}

/// [`gemm`] with C rows `rsc` elements apart.
#[allow(clippy::too_many_arguments)]
pub fn gemm_rs<E: Element>(
    m: usize,
    k: usize,
    n: usize,
    alpha: E,
    a: MatRef<'_, E>,
    b: MatRef<'_, E>,
    beta: E,
    c: &mut [E],
    rsc: usize,
) {
    assert!(a.data.len() >= required_len(m, k, a.rs, a.cs), "gemm: A too small");
    assert!(b.data.len() >= required_len(k, n, b.rs, b.cs), "gemm: B too small");
    assert!(c.len() >= required_len(m, n, rsc, 1), "gemm: C too small");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: extents and strides were checked against the buffer lengths above.
    unsafe {
        E::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Inner-dimension chunk of [`gemm_abt`].
const LC: usize = 512;
const LANES: usize = 8;
/// Above this many output channels the packed GEMM is faster for weight gradients.
const ABT_MAX_M: usize = 32;

fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn abt_tile<E: Element, const MR: usize, const NT: usize>(
    i0: usize,
    j0: usize,
    l0: usize,
    l1: usize,
    a: &[E],
    lda: usize,
    b: &[E],
    ldb: usize,
    c: &mut [E],
    ldc: usize,
) {
    let mut acc = [[[E::zero(); LANES]; NT]; MR];
    let mut l = l0;
    while l + LANES <= l1 {
        let mut av = [[E::zero(); LANES]; MR];
        for (r, v) in av.iter_mut().enumerate() {
            *v = a[(i0 + r) * lda + l..][..LANES].try_into().expect("lanes");
        }
        for q in 0..NT {
            let bv: &[E; LANES] = b[(j0 + q) * ldb + l..][..LANES].try_into().expect("lanes");
            for r in 0..MR {
                for t in 0..LANES {
                    acc[r][q][t] = acc[r][q][t] + av[r][t] * bv[t];
                }
            }
        }
        l += LANES;
    }
    for r in 0..MR {
        for q in 0..NT {
            let mut s = acc[r][q].iter().fold(E::zero(), |x, &y| x + y);
            for ll in l..l1 {
                s = s + a[(i0 + r) * lda + ll] * b[(j0 + q) * ldb + ll];
            }
            c[(i0 + r) * ldc + j0 + q] += s;
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn abt_body<E: Element>(m: usize, n: usize, len: usize, a: &[E], lda: usize, b: &[E], ldb: usize, c: &mut [E], ldc: usize) {
    let mut l0 = 0;
    while l0 < len {
        let l1 = (l0 + LC).min(len);
        let mut i0 = 0;
        while i0 + 4 <= m {
            let mut j0 = 0;
            while j0 + 2 <= n {
                abt_tile::<E, 4, 2>(i0, j0, l0, l1, a, lda, b, ldb, c, ldc);
                j0 += 2;
            }
            if j0 < n {
                abt_tile::<E, 4, 1>(i0, j0, l0, l1, a, lda, b, ldb, c, ldc);
            }
            i0 += 4;
        }
        for i in i0..m {
            let mut j0 = 0;
            while j0 + 2 <= n {
                abt_tile::<E, 1, 2>(i, j0, l0, l1, a, lda, b, ldb, c, ldc);
                j0 += 2;
            }
            if j0 < n {
                abt_tile::<E, 1, 1>(i, j0, l0, l1, a, lda, b, ldb, c, ldc);
            }
        }
        l0 = l1;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn abt_avx2<E: Element>(m: usize, n: usize, len: usize, a: &[E], lda: usize, b: &[E], ldb: usize, c: &mut [E], ldc: usize) {
    abt_body(m, n, len, a, lda, b, ldb, c, ldc);
}

/// `C(m×n) += A(m×len)·B(n×len)ᵀ` with A, B, C rows `lda`, `ldb`, `ldc` apart.
#[allow(clippy::too_many_arguments)]
pub fn gemm_abt<E: Element>(m: usize, n: usize, len: usize, a: &[E], lda: usize, b: &[E], ldb: usize, c: &mut [E], ldc: usize) {
    assert!(a.len() >= required_len(m, len, lda, 1), "gemm_abt: A too small");
    assert!(b.len() >= required_len(n, len, ldb, 1), "gemm_abt: B too small");
    assert!(c.len() >= required_len(m, n, ldc, 1), "gemm_abt: C too small");
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the CPU supports the enabled features.
        return unsafe { abt_avx2(m, n, len, a, lda, b, ldb, c, ldc) };
    }
    abt_body(m, n, len, a, lda, b, ldb, c, ldc);
}

/// Geometry of a stride-1, same-padded 2-D convolution over an NCHW batch.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    fn pads(&self) -> (isize, isize) {
        (((self.kh - 1) / 2) as isize, ((self.kw - 1) / 2) as isize)
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Valid output-column range for kernel column `kx`, and the matching input column of its start.
    fn span(&self, kx: usize) -> Option<(usize, usize, usize)> {
        let (_, pw) = self.pads();
        let w = self.w as isize;
        let lo = (pw - kx as isize).max(0);
        let hi = (w + pw - kx as isize).min(w);
        (lo < hi).then(|| {
            let ix = lo + kx as isize - pw;
            (lo as usize, hi as usize, ix as usize)
        })
    }
}

/// Columns for output rows `y0..y1` of every sample: `[K][N·(y1−y0)·W]`.
pub fn im2col_rows<E: Element>(x: &[E], g: ConvGeom, y0: usize, y1: usize) -> Vec<E> {
    let (ph, _) = g.pads();
    let hw = g.h * g.w;
    let rw = (y1 - y0) * g.w;
    let l = g.n * rw;
    let mut cols = vec![E::zero(); g.k() * l];
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let Some((lo, hi, ix)) = g.span(kx) else {
                    continue;
                };
                let dst = &mut cols[row * l..(row + 1) * l];
                for ni in 0..g.n {
                    let src = &x[(ni * g.c + ci) * hw..][..hw];
                    for oy in y0..y1 {
                        let iy = oy as isize + ky as isize - ph;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let s = iy as usize * g.w + ix;
                        let d = ni * rw + (oy - y0) * g.w;
                        dst[d + lo..d + hi].copy_from_slice(&src[s..s + (hi - lo)]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col_rows`]: accumulates columns of output rows `y0..y1` into `dx`.
pub fn col2im_rows<E: Element>(cols: &[E], g: ConvGeom, y0: usize, y1: usize, dx: &mut [E]) {
    let (ph, _) = g.pads();
    let hw = g.h * g.w;
    let rw = (y1 - y0) * g.w;
    let l = g.n * rw;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let Some((lo, hi, ix)) = g.span(kx) else {
                    continue;
                };
                let src = &cols[row * l..(row + 1) * l];
                for ni in 0..g.n {
                    let dst = &mut dx[(ni * g.c + ci) * hw..][..hw];
                    for oy in y0..y1 {
                        let iy = oy as isize + ky as isize - ph;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let s = ni * rw + (oy - y0) * g.w;
                        let d = iy as usize * g.w + ix;
                        for (o, &v) in dst[d..d + (hi - lo)].iter_mut().zip(&src[s + lo..s + hi]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
}

/// `[N][C][P]` → `[C][N·P]`.
fn to_channel_major<E: Element>(x: &[E], n: usize, c: usize, p: usize) -> Vec<E> {
    let mut out = vec![E::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * p + ni * p..][..p].copy_from_slice(&x[(ni * c + ci) * p..][..p]);
        }
    }
    out
}

/// `[C][N·P]` → `[N][C][P]`.
fn to_sample_major<E: Element>(x: &[E], n: usize, c: usize, p: usize) -> Vec<E> {
    let mut out = vec![E::zero(); x.len()];
    scatter_sample_major(x, n, c, p, &mut out);
    out
}

fn scatter_sample_major<E: Element>(x: &[E], n: usize, c: usize, p: usize, out: &mut [E]) {
    for ci in 0..c {
        for ni in 0..n {
            out[(ni * c + ci) * p..][..p].copy_from_slice(&x[ci * n * p + ni * p..][..p]);
        }
    }
}

/// Column-buffer budget (elements) per GEMM; keeps im2col output cache-resident.
const COL_BUDGET: usize = 1 << 18;

/// Work unit of a convolution: samples `n0..n0+nb`, output rows `y0..y1`.
#[derive(Clone, Copy)]
struct Block {
    n0: usize,
    nb: usize,
    y0: usize,
    y1: usize,
}

/// Splits the batch into whole-sample chunks, or single samples into row bands
/// when one sample's columns alone exceed [`COL_BUDGET`].
fn blocks(g: ConvGeom) -> Vec<Block> {
    let per_sample = g.k() * g.h * g.w;
    let mut out = Vec::new();
    if per_sample <= COL_BUDGET {
        let step = (COL_BUDGET / per_sample).clamp(1, g.n);
        for n0 in (0..g.n).step_by(step) {
            out.push(Block { n0, nb: step.min(g.n - n0), y0: 0, y1: g.h });
        }
    } else {
        let rows = (COL_BUDGET / (g.k() * g.w)).clamp(1, g.h);
        for n0 in 0..g.n {
            for y0 in (0..g.h).step_by(rows) {
                out.push(Block { n0, nb: 1, y0, y1: (y0 + rows).min(g.h) });
            }
        }
    }
    out
}

pub fn conv2d_forward<E: Element>(
    x: &[E],
    g: ConvGeom,
    weight: &[E],
    out_channels: usize,
    bias: Option<&[E]>,
) -> Vec<E> {
    let hw = g.h * g.w;
    let k = g.k();
    let mut out = vec![E::zero(); g.n * out_channels * hw];
    for b in blocks(g) {
        let gc = ConvGeom { n: b.nb, ..g };
        let cols = im2col_rows(&x[b.n0 * g.c * hw..][..b.nb * g.c * hw], gc, b.y0, b.y1);
        let rw = (b.y1 - b.y0) * g.w;
        let l = b.nb * rw;
        let wmat = MatRef { data: weight, rs: k, cs: 1 };
        let cmat = MatRef { data: &cols, rs: l, cs: 1 };
        let dst = &mut out[b.n0 * out_channels * hw..][..b.nb * out_channels * hw];
        if b.nb == 1 {
            gemm_rs(out_channels, k, rw, E::one(), wmat, cmat, E::zero(), &mut dst[b.y0 * g.w..], hw);
        } else {
            let mut tmp = vec![E::zero(); out_channels * l];
            gemm(out_channels, k, l, E::one(), wmat, cmat, E::zero(), &mut tmp);
            scatter_sample_major(&tmp, b.nb, out_channels, hw, dst);
        }
    }
    if let Some(bias) = bias {
        for (plane, &bv) in out.chunks_mut(hw).zip(bias.iter().cycle()) {
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

pub struct ConvGrads<E> {
    pub dx: Option<Vec<E>>,
    pub dw: Option<Vec<E>>,
    pub db: Option<Vec<E>>,
}

pub fn conv2d_backward<E: Element>(
    x: &[E],
    g: ConvGeom,
    weight: &[E],
    out_channels: usize,
    dout: &[E],
    need: [bool; 3],
) -> ConvGrads<E> {
    let hw = g.h * g.w;
    let k = g.k();
    let mut dx = need[0].then(|| vec![E::zero(); x.len()]);
    let mut dw = need[1].then(|| vec![E::zero(); out_channels * k]);
    let db = need[2].then(|| {
        let mut db = vec![E::zero(); out_channels];
        for (plane, acc) in dout.chunks(hw).zip((0..out_channels).cycle()) {
            db[acc] += plane.iter().copied().sum::<E>();
        }
        db
    });
    for b in blocks(g) {
        let gc = ConvGeom { n: b.nb, ..g };
        let rw = (b.y1 - b.y0) * g.w;
        let l = b.nb * rw;
        let dslice = &dout[b.n0 * out_channels * hw..][..b.nb * out_channels * hw];
        let packed;
        let dp = if b.nb == 1 {
            MatRef { data: &dslice[b.y0 * g.w..], rs: hw, cs: 1 }
        } else {
            packed = to_channel_major(dslice, b.nb, out_channels, hw);
            MatRef { data: &packed, rs: l, cs: 1 }
        };
        let xs = &x[b.n0 * g.c * hw..][..b.nb * g.c * hw];
        if let Some(dw) = dw.as_mut() {
            let cols = im2col_rows(xs, gc, b.y0, b.y1);
            if out_channels <= ABT_MAX_M {
                gemm_abt(out_channels, k, l, dp.data, dp.rs, &cols, l, dw, k);
            } else {
                gemm(out_channels, l, k, E::one(), dp, MatRef { data: &cols, rs: 1, cs: l }, E::one(), dw);
            }
        }
        if let Some(dx) = dx.as_mut() {
            let mut dcols = vec![E::zero(); k * l];
            gemm(k, out_channels, l, E::one(), MatRef { data: weight, rs: 1, cs: k }, dp, E::zero(), &mut dcols);
            col2im_rows(&dcols, gc, b.y0, b.y1, &mut dx[b.n0 * g.c * hw..][..b.nb * g.c * hw]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Per-channel (depthwise) same-padded convolution, kernel `[C][kh][kw]`.
pub fn depthwise_forward<E: Element>(x: &[E], g: ConvGeom, weight: &[E]) -> Vec<E> {
    let (ph, pw) = g.pads();
    let hw = g.h * g.w;
    let mut out = vec![E::zero(); x.len()];
    for ni in 0..g.n {
        for ci in 0..g.c {
            let src = &x[(ni * g.c + ci) * hw..][..hw];
            let dst = &mut out[(ni * g.c + ci) * hw..][..hw];
            let kern = &weight[ci * g.kh * g.kw..][..g.kh * g.kw];
            for oy in 0..g.h {
                for ox in 0..g.w {
                    let mut acc = E::zero();
                    for ky in 0..g.kh {
                        let iy = oy as isize + ky as isize - ph;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = ox as isize + kx as isize - pw;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            acc += kern[ky * g.kw + kx] * src[iy as usize * g.w + ix as usize];
                        }
                    }
                    dst[oy * g.w + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn depthwise_backward<E: Element>(
    x: &[E],
    g: ConvGeom,
    weight: &[E],
    dout: &[E],
) -> (Vec<E>, Vec<E>) {
    let (ph, pw) = g.pads();
    let hw = g.h * g.w;
    let mut dx = vec![E::zero(); x.len()];
    let mut dw = vec![E::zero(); weight.len()];
    for ni in 0..g.n {
        for ci in 0..g.c {
            let base = (ni * g.c + ci) * hw;
            let kbase = ci * g.kh * g.kw;
            for oy in 0..g.h {
                for ox in 0..g.w {
                    let go = dout[base + oy * g.w + ox];
                    if go == E::zero() {
                        continue;
                    }
                    for ky in 0..g.kh {
                        let iy = oy as isize + ky as isize - ph;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = ox as isize + kx as isize - pw;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let xi = base + iy as usize * g.w + ix as usize;
                            dw[kbase + ky * g.kw + kx] += go * x[xi];
                            dx[xi] += go * weight[kbase + ky * g.kw + kx];
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// 2×2 stride-2 max pooling; returns values and the flat input index of each maximum.
pub fn maxpool2_forward<E: Element>(x: &[E], n: usize, c: usize, h: usize, w: usize) -> (Vec<E>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let candidates = [
                    base + (2 * oy) * w + 2 * ox,
                    base + (2 * oy) * w + 2 * ox + 1,
                    base + (2 * oy + 1) * w + 2 * ox,
                    base + (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = candidates[0];
                for &i in &candidates[1..] {
                    // strict: ties keep the first in row-major order
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Transposed 2×2 stride-2 convolution. Kernel layout `[C_in][C_out][2][2]`.
pub fn conv_transpose2_forward<E: Element>(
    x: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[E],
    out_channels: usize,
    bias: Option<&[E]>,
) -> Vec<E> {
    let hw = h * w;
    let l = n * hw;
    let o4 = out_channels * 4;
    let xp = to_channel_major(x, n, c, hw);
    let mut y = vec![E::zero(); o4 * l];
    gemm(
        o4,
        c,
        l,
        E::one(),
        MatRef { data: weight, rs: 1, cs: o4 },
        MatRef { data: &xp, rs: l, cs: 1 },
        E::zero(),
        &mut y,
    );
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![E::zero(); n * out_channels * oh * ow];
    for oc in 0..out_channels {
        let bv = bias.map_or(E::zero(), |b| b[oc]);
        for a in 0..2 {
            for b in 0..2 {
                let row = &y[((oc * 2 + a) * 2 + b) * l..][..l];
                for ni in 0..n {
                    let dst = &mut out[(ni * out_channels + oc) * oh * ow..][..oh * ow];
                    for i in 0..h {
                        for j in 0..w {
                            dst[(2 * i + a) * ow + 2 * j + b] = row[ni * hw + i * w + j] + bv;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2_backward<E: Element>(
    x: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[E],
    out_channels: usize,
    dout: &[E],
    need: [bool; 3],
) -> ConvGrads<E> {
    let hw = h * w;
    let l = n * hw;
    let o4 = out_channels * 4;
    let (oh, ow) = (2 * h, 2 * w);
    let mut dy = vec![E::zero(); o4 * l];
    for oc in 0..out_channels {
        for a in 0..2 {
            for b in 0..2 {
                let row = &mut dy[((oc * 2 + a) * 2 + b) * l..][..l];
                for ni in 0..n {
                    let src = &dout[(ni * out_channels + oc) * oh * ow..][..oh * ow];
                    for i in 0..h {
                        for j in 0..w {
                            row[ni * hw + i * w + j] = src[(2 * i + a) * ow + 2 * j + b];
                        }
                    }
                }
            }
        }
    }
    let db = need[2].then(|| {
        (0..out_channels)
            .map(|oc| dy[oc * 4 * l..(oc + 1) * 4 * l].iter().copied().sum())
            .collect()
    });
    let xp = need[1].then(|| to_channel_major(x, n, c, hw));
    let dw = xp.map(|xp| {
        let mut dw = vec![E::zero(); c * o4];
        gemm(
            c,
            l,
            o4,
            E::one(),
            MatRef { data: &xp, rs: l, cs: 1 },
            MatRef { data: &dy, rs: 1, cs: l },
            E::zero(),
            &mut dw,
        );
        dw
    });
    let dx = need[0].then(|| {
        let mut dxp = vec![E::zero(); c * l];
        gemm(
            c,
            o4,
            l,
            E::one(),
            MatRef { data: weight, rs: o4, cs: 1 },
            MatRef { data: &dy, rs: l, cs: 1 },
            E::zero(),
            &mut dxp,
        );
        to_sample_major(&dxp, n, c, hw)
    });
    ConvGrads { dx, dw, db }
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_forward<E: Element>(x: &[E], shape: &[usize], axis: usize) -> Vec<E> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![E::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mut max = E::neg_infinity();
            for k in 0..len {
                max = max.max(x[idx(k)]);
            }
            let mut total = E::zero();
            for k in 0..len {
                let e = (x[idx(k)] - max).exp();
                out[idx(k)] = e;
                total += e;
            }
            for k in 0..len {
                out[idx(k)] = out[idx(k)] / total;
            }
        }
    }
    out
}

pub fn softmax_backward<E: Element>(y: &[E], dy: &[E], shape: &[usize], axis: usize) -> Vec<E> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![E::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mut dot = E::zero();
            for k in 0..len {
                dot += y[idx(k)] * dy[idx(k)];
            }
            for k in 0..len {
                dx[idx(k)] = y[idx(k)] * (dy[idx(k)] - dot);
            }
        }
    }
    dx
}

/// Right-aligned broadcast of two shapes; `None` when incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (i, slot) in out.iter_mut().enumerate() {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        *slot = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], from_right: usize) -> usize {
    if from_right < shape.len() {
        shape[shape.len() - 1 - from_right]
    } else {
        1
    }
}

/// Element strides of `input` when viewed with the broadcast shape `out` (0 on broadcast axes).
pub fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        let d = dim_from_right(input, rank - 1 - i);
        strides[i] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    strides
}

/// Visits every flat output index together with the matching flat input offsets.
pub fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for flat in 0..total {
        f(flat, oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Sums a gradient of shape `out` down to the broadcast input shape `input`.
pub fn reduce_to<E: Element>(grad: &[E], out: &[usize], input: &[usize]) -> Vec<E> {
    let n_in: usize = input.iter().product();
    if n_in == grad.len() {
        return grad.to_vec();
    }
    let mut acc = vec![E::zero(); n_in];
    let sa = broadcast_strides(input, out);
    let zeros = vec![0; out.len()];
    for_each_broadcast(out, &sa, &zeros, |flat, ia, _| acc[ia] += grad[flat]);
    acc
}
