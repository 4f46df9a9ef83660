use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{dim_err, Real, Tensor, TensorError};

/// Stride, zero padding and group count of a 3-D convolution, axes ordered (t, h, w).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dParams {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl Default for Conv3dParams {
    fn default() -> Self {
        Self {
            stride: [1; 3],
            padding: [0; 3],
            groups: 1,
        }
    }
}

/// `floor((input + 2 * pad - kernel) / stride) + 1`, or `None` when the kernel
/// does not fit the padded input.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub cin_g: usize,
    pub cout_g: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        params: Conv3dParams,
    ) -> Result<Self, TensorError> {
        const OP: &str = "conv3d";
        if input.len() != 5 {
            return Err(dim_err(OP, format!("input must be [N,C,T,H,W], got {input:?}")));
        }
        if weight.len() != 5 {
            return Err(dim_err(
                OP,
                format!("weight must be [Cout,Cin/g,kt,kh,kw], got {weight:?}"),
            ));
        }
        let g = params.groups;
        let (cin, cout) = (input[1], weight[0]);
        if g == 0 || cin % g != 0 || cout % g != 0 {
            return Err(TensorError::Config {
                op: OP,
                detail: format!("groups {g} must divide Cin {cin} and Cout {cout}"),
            });
        }
        if params.stride.contains(&0) {
            return Err(TensorError::Config {
                op: OP,
                detail: format!("stride {:?} must be >= 1 per axis", params.stride),
            });
        }
        if weight[1] != cin / g {
            return Err(dim_err(
                OP,
                format!(
                    "weight expects {} input channels per group, input gives {}",
                    weight[1],
                    cin / g
                ),
            ));
        }
        if let Some(b) = bias {
            if b != [cout] {
                return Err(dim_err(OP, format!("bias {b:?} does not match Cout {cout}")));
            }
        }
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = conv_output_extent(input[2 + a], weight[2 + a], params.stride[a], params.padding[a])
                .ok_or_else(|| {
                    dim_err(
                        OP,
                        format!(
                            "kernel {:?} does not fit input {:?} with padding {:?}",
                            &weight[2..],
                            &input[2..],
                            params.padding
                        ),
                    )
                })?;
        }
        Ok(Self {
            n: input[0],
            cin,
            cout,
            groups: g,
            cin_g: cin / g,
            cout_g: cout / g,
            input: [input[2], input[3], input[4]],
            kernel: [weight[2], weight[3], weight[4]],
            output,
            stride: params.stride,
            pad: params.padding,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.output[0], self.output[1], self.output[2]]
    }

    fn in_spatial(&self) -> usize {
        self.input.iter().product()
    }

    fn out_spatial(&self) -> usize {
        self.output.iter().product()
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// 1×1×1 kernel, unit stride, no padding: the input slab is already the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }
}

/// Layout of one zero-padded input channel whose rows are split into `stride[2]`
/// phases: padded column `j * sw + phase` lives at `phase * phase_len + j`, so every
/// kernel tap reads a contiguous run.
struct PhasedPlane {
    hp: usize,
    sw: usize,
    phase_len: usize,
}

impl PhasedPlane {
    fn new(geo: &ConvGeometry) -> Self {
        let sw = geo.stride[2];
        let wp = geo.input[2] + 2 * geo.pad[2];
        Self {
            hp: geo.input[1] + 2 * geo.pad[1],
            sw,
            phase_len: wp.div_ceil(sw),
        }
    }

    fn len(&self, geo: &ConvGeometry) -> usize {
        (geo.input[0] + 2 * geo.pad[0]) * self.hp * self.sw * self.phase_len
    }

    /// Offset of padded element (t, h, w).
    fn at(&self, t: usize, h: usize, w: usize) -> usize {
        ((t * self.hp + h) * self.sw + w % self.sw) * self.phase_len + w / self.sw
    }
}

/// Unfolds one (sample, group) input slab into a `(cin_g * kvol) × out_spatial`
/// matrix. `buf` is scratch space for one padded channel.
fn im2col<T: Real>(geo: &ConvGeometry, src: &[T], col: &mut [T], buf: &mut Vec<T>) {
    let [ti_n, hi_n, wi_n] = geo.input;
    let [kt, kh, kw] = geo.kernel;
    let [to_n, ho_n, wo_n] = geo.output;
    let [st, sh, _] = geo.stride;
    let [pt, ph, pw] = geo.pad;
    let plane = PhasedPlane::new(geo);
    let p = geo.out_spatial();
    let spatial = geo.in_spatial();
    buf.clear();
    buf.resize(plane.len(geo), T::zero());
    for c in 0..geo.cin_g {
        let chan = &src[c * spatial..(c + 1) * spatial];
        for t in 0..ti_n {
            for h in 0..hi_n {
                let line = &chan[(t * hi_n + h) * wi_n..][..wi_n];
                for phase in 0..plane.sw {
                    // first input column landing in this phase
                    let w0 = (phase + plane.sw - pw % plane.sw) % plane.sw;
                    if w0 >= wi_n {
                        continue;
                    }
                    let at = plane.at(t + pt, h + ph, w0 + pw);
                    for (d, &v) in buf[at..].iter_mut().zip(line[w0..].iter().step_by(plane.sw)) {
                        *d = v;
                    }
                }
            }
        }
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = ((c * kt + dt) * kh + dh) * kw + dw;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for to in 0..to_n {
                        for ho in 0..ho_n {
                            let from = plane.at(to * st + dt, ho * sh + dh, dw);
                            dst[(to * ho_n + ho) * wo_n..][..wo_n].copy_from_slice(&buf[from..from + wo_n]);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds column gradients back onto the input slab.
fn col2im_add<T: Real>(geo: &ConvGeometry, col: &[T], dst: &mut [T], buf: &mut Vec<T>) {
    let [ti_n, hi_n, wi_n] = geo.input;
    let [kt, kh, kw] = geo.kernel;
    let [to_n, ho_n, wo_n] = geo.output;
    let [st, sh, _] = geo.stride;
    let [pt, ph, pw] = geo.pad;
    let plane = PhasedPlane::new(geo);
    let p = geo.out_spatial();
    let spatial = geo.in_spatial();
    for c in 0..geo.cin_g {
        buf.clear();
        buf.resize(plane.len(geo), T::zero());
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = ((c * kt + dt) * kh + dh) * kw + dw;
                    let src = &col[row * p..(row + 1) * p];
                    for to in 0..to_n {
                        for ho in 0..ho_n {
                            let to_at = plane.at(to * st + dt, ho * sh + dh, dw);
                            let g = &src[(to * ho_n + ho) * wo_n..][..wo_n];
                            for (d, &v) in buf[to_at..to_at + wo_n].iter_mut().zip(g) {
                                *d = *d + v;
                            }
                        }
                    }
                }
            }
        }
        let chan = &mut dst[c * spatial..(c + 1) * spatial];
        for t in 0..ti_n {
            for h in 0..hi_n {
                let line = &mut chan[(t * hi_n + h) * wi_n..][..wi_n];
                for phase in 0..plane.sw {
                    let w0 = (phase + plane.sw - pw % plane.sw) % plane.sw;
                    if w0 >= wi_n {
                        continue;
                    }
                    let at = plane.at(t + pt, h + ph, w0 + pw);
                    for (d, &v) in line[w0..].iter_mut().step_by(plane.sw).zip(&buf[at..]) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// Returns the output and, when `keep_cols` is set and the kernel is not
/// pointwise, every unfolded column matrix in (sample, group) order so the
/// weight gradient can reuse them.
pub(crate) fn conv3d_forward<T: Real>(
    geo: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    keep_cols: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let p = geo.out_spatial();
    let ck = geo.cin_g * geo.kernel_volume();
    let in_s = geo.in_spatial();
    let mut out = vec![T::zero(); geo.n * geo.cout * p];
    let keep = keep_cols && !geo.is_pointwise();
    // One column matrix per (sample, group) when kept, otherwise a single reused one.
    let mut col = match (geo.is_pointwise(), keep) {
        (true, _) => Vec::new(),
        (false, true) => vec![T::zero(); geo.n * geo.groups * ck * p],
        (false, false) => vec![T::zero(); ck * p],
    };
    let mut pad_buf = Vec::new();
    for n in 0..geo.n {
        for g in 0..geo.groups {
            let src = &input[(n * geo.cin + g * geo.cin_g) * in_s..][..geo.cin_g * in_s];
            let b_ptr = if geo.is_pointwise() {
                src.as_ptr()
            } else {
                let slot = if keep { (n * geo.groups + g) * ck * p } else { 0 };
                let dst = &mut col[slot..slot + ck * p];
                im2col(geo, src, dst, &mut pad_buf);
                dst.as_ptr()
            };
            let w = &weight[g * geo.cout_g * ck..][..geo.cout_g * ck];
            let dst = &mut out[(n * geo.cout + g * geo.cout_g) * p..][..geo.cout_g * p];
            // SAFETY: w is cout_g×ck, the column source is ck×p, dst is cout_g×p, all row-major.
            unsafe {
                T::gemm(
                    geo.cout_g,
                    ck,
                    p,
                    T::one(),
                    w.as_ptr(),
                    ck as isize,
                    1,
                    b_ptr,
                    p as isize,
                    1,
                    T::zero(),
                    dst.as_mut_ptr(),
                    p as isize,
                    1,
                );
            }
        }
        if let Some(b) = bias {
            for (o, &bo) in b.iter().enumerate() {
                for v in &mut out[(n * geo.cout + o) * p..][..p] {
                    *v = *v + bo;
                }
            }
        }
    }
    (out, keep.then_some(col))
}

/// Accumulates (`+=`) input, weight and bias gradients for an output gradient `gout`.
/// `cols` are the column matrices saved by [`conv3d_forward`], if any.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3d_backward<T: Real>(
    geo: &ConvGeometry,
    input: &[T],
    weight: &[T],
    cols: Option<&[T]>,
    gout: &[T],
    mut gin: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let p = geo.out_spatial();
    let ck = geo.cin_g * geo.kernel_volume();
    let in_s = geo.in_spatial();
    let pointwise = geo.is_pointwise();
    let mut col = if pointwise || cols.is_some() {
        Vec::new()
    } else {
        vec![T::zero(); ck * p]
    };
    let mut pad_buf = Vec::new();
    let mut dcol = if pointwise || gin.is_none() {
        Vec::new()
    } else {
        vec![T::zero(); ck * p]
    };
    for n in 0..geo.n {
        for g in 0..geo.groups {
            let src_off = (n * geo.cin + g * geo.cin_g) * in_s;
            let go = &gout[(n * geo.cout + g * geo.cout_g) * p..][..geo.cout_g * p];
            let w = &weight[g * geo.cout_g * ck..][..geo.cout_g * ck];
            if let Some(gw) = gw.as_deref_mut() {
                let col_ptr = if pointwise {
                    input[src_off..].as_ptr()
                } else if let Some(saved) = cols {
                    saved[(n * geo.groups + g) * ck * p..][..ck * p].as_ptr()
                } else {
                    im2col(geo, &input[src_off..src_off + geo.cin_g * in_s], &mut col, &mut pad_buf);
                    col.as_ptr()
                };
                let dst = &mut gw[g * geo.cout_g * ck..][..geo.cout_g * ck];
                // SAFETY: go is cout_g×p; the column matrix read transposed is p×ck; dst is cout_g×ck.
                unsafe {
                    T::gemm(
                        geo.cout_g,
                        p,
                        ck,
                        T::one(),
                        go.as_ptr(),
                        p as isize,
                        1,
                        col_ptr,
                        1,
                        p as isize,
                        T::one(),
                        dst.as_mut_ptr(),
                        ck as isize,
                        1,
                    );
                }
            }
            if let Some(gin) = gin.as_deref_mut() {
                let slab = &mut gin[src_off..src_off + geo.cin_g * in_s];
                let (dst_ptr, beta) = if pointwise {
                    (slab.as_mut_ptr(), T::one())
                } else {
                    (dcol.as_mut_ptr(), T::zero())
                };
                // SAFETY: w read transposed is ck×cout_g; go is cout_g×p; destination is ck×p.
                unsafe {
                    T::gemm(
                        ck,
                        geo.cout_g,
                        p,
                        T::one(),
                        w.as_ptr(),
                        1,
                        ck as isize,
                        go.as_ptr(),
                        p as isize,
                        1,
                        beta,
                        dst_ptr,
                        p as isize,
                        1,
                    );
                }
                if !pointwise {
                    col2im_add(geo, &dcol, slab, &mut pad_buf);
                }
            }
        }
    }
    if let Some(gb) = gb {
        for n in 0..geo.n {
            for (o, b) in gb.iter_mut().enumerate() {
                let s = gout[(n * geo.cout + o) * p..][..p]
                    .iter()
                    .fold(T::zero(), |acc, &x| acc + x);
                *b = *b + s;
            }
        }
    }
}

/// Direct seven-loop 3-D convolution. Slow; it is the reference the fast
/// path is checked against.
pub fn conv3d_reference<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    params: Conv3dParams,
) -> Result<Tensor<T>, TensorError> {
    let geo = ConvGeometry::new(input.shape(), weight.shape(), bias.map(|b| b.shape()), params)?;
    let [ti_n, hi_n, wi_n] = geo.input;
    let [kt, kh, kw] = geo.kernel;
    let [to_n, ho_n, wo_n] = geo.output;
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(geo.n * geo.cout * to_n * ho_n * wo_n);
    for n in 0..geo.n {
        for o in 0..geo.cout {
            let g = o / geo.cout_g;
            for to in 0..to_n {
                for ho in 0..ho_n {
                    for wo in 0..wo_n {
                        let mut acc = bias.map_or(T::zero(), |b| b.data()[o]);
                        for ci in 0..geo.cin_g {
                            let c = g * geo.cin_g + ci;
                            for dt in 0..kt {
                                let ti = (to * geo.stride[0] + dt) as isize - geo.pad[0] as isize;
                                if ti < 0 || ti >= ti_n as isize {
                                    continue;
                                }
                                for dh in 0..kh {
                                    let hi = (ho * geo.stride[1] + dh) as isize - geo.pad[1] as isize;
                                    if hi < 0 || hi >= hi_n as isize {
                                        continue;
                                    }
                                    for dw in 0..kw {
                                        let wi = (wo * geo.stride[2] + dw) as isize - geo.pad[2] as isize;
                                        if wi < 0 || wi >= wi_n as isize {
                                            continue;
                                        }
                                        let xi = (((n * geo.cin + c) * ti_n + ti as usize) * hi_n + hi as usize) * wi_n
                                            + wi as usize;
                                        let wi_idx = (((o * geo.cin_g + ci) * kt + dt) * kh + dh) * kw + dw;
                                        acc = acc + x[xi] * w[wi_idx];
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    Tensor::new(geo.output_shape(), out)
}
