//! 3x3 same-padded 2-D convolution (cross-correlation, PyTorch convention).
//!
//! The channels-last kernel pads the input by one pixel on every side and
//! flattens it with row pitch `w + 2`. For a fixed kernel tap, every output
//! pixel then reads the input at a constant flat offset, so each tap is one
//! GEMM over the whole image. The two pad columns of every output row are
//! scratch and are discarded.

use super::gemm::gemm;
use super::graph::{Backward, Graph, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn pack_kernel(k: &[Scalar], cin: usize, cout: usize) -> Vec<Scalar> {
    let mut packed = vec![0.0; 9 * cin * cout];
    for co in 0..cout {
        for ci in 0..cin {
            for tap in 0..9 {
                packed[tap * cin * cout + ci * cout + co] = k[(co * cin + ci) * 9 + tap];
            }
        }
    }
    packed
}

fn pad_input(x: &[Scalar], h: usize, w: usize, cin: usize) -> Vec<Scalar> {
    let pitch = w + 2;
    let mut xp = vec![0.0; ((h + 2) * pitch + 2) * cin];
    for y in 0..h {
        let dst = ((y + 1) * pitch + 1) * cin;
        xp[dst..dst + w * cin].copy_from_slice(&x[y * w * cin..(y + 1) * w * cin]);
    }
    xp
}

/// Forward pass on raw channels-last buffers: `x[h,w,cin] -> [h,w,cout]`.
pub fn conv3x3_hwc_forward(x: &[Scalar], h: usize, w: usize, cin: usize, kernel: &[Scalar], bias: &[Scalar]) -> Vec<Scalar> {
    let cout = bias.len();
    let pitch = w + 2;
    let rows = h * pitch;
    let xp = pad_input(x, h, w, cin);
    let kp = pack_kernel(kernel, cin, cout);
    let mut out_pad = vec![0.0; rows * cout];
    for dy in 0..3 {
        for dx in 0..3 {
            let tap = dy * 3 + dx;
            let shift = dy * pitch + dx;
            gemm(
                false,
                false,
                rows,
                cout,
                cin,
                1.0,
                &xp[shift * cin..],
                cin,
                &kp[tap * cin * cout..],
                cout,
                1.0,
                &mut out_pad,
                cout,
            );
        }
    }
    let mut out = vec![0.0; h * w * cout];
    for y in 0..h {
        for xx in 0..w {
            let src = &out_pad[(y * pitch + xx) * cout..(y * pitch + xx + 1) * cout];
            let dst = &mut out[(y * w + xx) * cout..(y * w + xx + 1) * cout];
            for c in 0..cout {
                dst[c] = src[c] + bias[c];
            }
        }
    }
    out
}

struct Conv3x3Op {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
}

impl Backward for Conv3x3Op {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let (h, w, cin, cout) = (self.h, self.w, self.cin, self.cout);
        let pitch = w + 2;
        let rows = h * pitch;
        let mut gpad = vec![0.0; rows * cout];
        for y in 0..h {
            for xx in 0..w {
                gpad[(y * pitch + xx) * cout..(y * pitch + xx + 1) * cout]
                    .copy_from_slice(&gout[(y * w + xx) * cout..(y * w + xx + 1) * cout]);
            }
        }
        let (gx, rest) = grad_in.split_at_mut(1);
        let (gk, gb) = rest.split_at_mut(1);

        if let Some(gb) = gb[0].as_mut() {
            for px in gout.chunks_exact(cout) {
                gb.iter_mut().zip(px).for_each(|(a, b)| *a += b);
            }
        }
        if let Some(gx) = gx[0].as_mut() {
            let kp = pack_kernel(inputs[1].data(), cin, cout);
            let mut dxp = vec![0.0; ((h + 2) * pitch + 2) * cin];
            for tap in 0..9 {
                let shift = (tap / 3) * pitch + tap % 3;
                gemm(
                    false,
                    true,
                    rows,
                    cin,
                    cout,
                    1.0,
                    &gpad,
                    cout,
                    &kp[tap * cin * cout..],
                    cout,
                    1.0,
                    &mut dxp[shift * cin..],
                    cin,
                );
            }
            for y in 0..h {
                let src = ((y + 1) * pitch + 1) * cin;
                let dst = &mut gx[y * w * cin..(y + 1) * w * cin];
                dst.iter_mut().zip(&dxp[src..src + w * cin]).for_each(|(a, b)| *a += b);
            }
        }
        if let Some(gk) = gk[0].as_mut() {
            let xp = pad_input(inputs[0].data(), h, w, cin);
            let mut dkp = vec![0.0; 9 * cin * cout];
            for tap in 0..9 {
                let shift = (tap / 3) * pitch + tap % 3;
                gemm(
                    true,
                    false,
                    cin,
                    cout,
                    rows,
                    1.0,
                    &xp[shift * cin..],
                    cin,
                    &gpad,
                    cout,
                    0.0,
                    &mut dkp[tap * cin * cout..],
                    cout,
                );
            }
            for co in 0..cout {
                for ci in 0..cin {
                    for tap in 0..9 {
                        gk[(co * cin + ci) * 9 + tap] += dkp[tap * cin * cout + ci * cout + co];
                    }
                }
            }
        }
    }
}

fn check_kernel(x_shape: &[usize], cin: usize, k: &Tensor, b: &Tensor) -> Result<usize> {
    let ks = k.shape();
    if ks.len() != 4 || ks[1] != cin || ks[2] != 3 || ks[3] != 3 || b.shape() != [ks[0]] {
        return Err(Error::Shape {
            op: "conv2d_3x3",
            lhs: x_shape.to_vec(),
            rhs: ks.to_vec(),
        });
    }
    Ok(ks[0])
}

impl Graph {
    /// Channels-last convolution: `x[h, w, c_in]`, `kernel[c_out, c_in, 3, 3]`,
    /// `bias[c_out]` -> `[h, w, c_out]`.
    pub fn conv2d_3x3_hwc(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (tx, tk, tb) = (self.value(x), self.value(kernel), self.value(bias));
        if tx.shape().len() != 3 {
            return Err(Error::Shape {
                op: "conv2d_3x3",
                lhs: tx.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let (h, w, cin) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let cout = check_kernel(tx.shape(), cin, tk, tb)?;
        let out = conv3x3_hwc_forward(tx.data(), h, w, cin, tk.data(), tb.data());
        let out = Tensor::new(&[h, w, cout], out)?;
        Ok(self.push(out, vec![x, kernel, bias], Conv3x3Op { h, w, cin, cout }))
    }

    /// Channels-first convolution: `x[c_in, h, w]` -> `[c_out, h, w]`.
    pub fn conv2d_3x3(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        if self.shape(x).len() != 3 {
            return Err(Error::Shape {
                op: "conv2d_3x3",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(kernel).to_vec(),
            });
        }
        check_kernel(self.shape(x), self.shape(x)[0], self.value(kernel), self.value(bias))?;
        let hwc = self.permute(x, &[1, 2, 0])?;
        let y = self.conv2d_3x3_hwc(hwc, kernel, bias)?;
        self.permute(y, &[2, 0, 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct quadruple loop over output pixels, channels and taps.
    fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
        let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let cout = k.shape()[0];
        let mut out = Tensor::zeros(&[cout, h, w]);
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += k.at(&[co, ci, ky, kx]) * x.at(&[ci, sy as usize, sx as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[co, y, xx], acc);
                }
            }
        }
        out
    }

    fn run(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let (x, k, b) = (g.constant(x.clone()), g.constant(k.clone()), g.constant(b.clone()));
        let y = g.conv2d_3x3(x, k, b).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn zero_input_zero_output() {
        let y = run(&Tensor::zeros(&[2, 4, 4]), &Tensor::full(&[3, 2, 3, 3], 0.5), &Tensor::zeros(&[3]));
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[3, 4, 4]);
    }

    #[test]
    fn center_tap_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&[1, 3, 3], &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.set(&[0, 0, 1, 1], 1.0);
        let y = run(&x, &k, &Tensor::zeros(&[1]));
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&[2, 5, 7], &mut rng);
        let k = rand_tensor(&[3, 2, 3, 3], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        let diff = run(&x, &k, &b).max_abs_diff(&naive_conv(&x, &k, &b));
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 3]));
        let k = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d_3x3(x, k, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&[2, 4, 3], &mut rng);
        let k = rand_tensor(&[2, 2, 3, 3], &mut rng);
        let b = rand_tensor(&[2], &mut rng);
        let w = rand_tensor(&[2, 4, 3], &mut rng);
        let objective = |g: &mut Graph, x: Var, k: Var, b: Var| -> Result<Var> {
            let y = g.conv2d_3x3(x, k, b)?;
            let w = g.constant(w.clone());
            let y = g.mul(y, w)?;
            let y = g.mul(y, y)?;
            Ok(g.sum(y))
        };
        let ex = finite_diff_check(
            |g, v| {
                let (k, b) = (g.constant(k.clone()), g.constant(b.clone()));
                objective(g, v, k, b)
            },
            &x,
            1e-4,
        )
        .unwrap();
        let ek = finite_diff_check(
            |g, v| {
                let (x, b) = (g.constant(x.clone()), g.constant(b.clone()));
                objective(g, x, v, b)
            },
            &k,
            1e-4,
        )
        .unwrap();
        let eb = finite_diff_check(
            |g, v| {
                let (x, k) = (g.constant(x.clone()), g.constant(k.clone()));
                objective(g, x, k, v)
            },
            &b,
            1e-4,
        )
        .unwrap();
        assert!(ex < 1e-4 && ek < 1e-4 && eb < 1e-4, "{ex} {ek} {eb}");
    }
}
