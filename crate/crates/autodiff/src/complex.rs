//! Complex arithmetic on paired real/imaginary tape variables.
//!
//! For `W = Wr + jWi` and `x = xr + jxi` every bilinear operator `∗` expands to
//! `(Wr∗xr − Wi∗xi) + j(Wr∗xi + Wi∗xr)`.

use crate::error::Result;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::ComplexTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexVar {
    pub re: Var,
    pub im: Var,
}

impl ComplexVar {
    pub fn new(re: Var, im: Var) -> Self {
        Self { re, im }
    }
}

impl<T: Real> Tape<T> {
    pub fn complex_leaf(&mut self, z: ComplexTensor<T>) -> ComplexVar {
        ComplexVar {
            re: self.leaf(z.re),
            im: self.leaf(z.im),
        }
    }

    pub fn complex_constant(&mut self, z: ComplexTensor<T>) -> ComplexVar {
        ComplexVar {
            re: self.constant(z.re),
            im: self.constant(z.im),
        }
    }

    pub fn complex_value(&self, z: ComplexVar) -> ComplexTensor<T> {
        ComplexTensor {
            re: self.value(z.re).clone(),
            im: self.value(z.im).clone(),
        }
    }

    pub fn complex_add(&mut self, a: ComplexVar, b: ComplexVar) -> Result<ComplexVar> {
        Ok(ComplexVar {
            re: self.add(a.re, b.re)?,
            im: self.add(a.im, b.im)?,
        })
    }

    /// Element-wise complex product.
    pub fn complex_mul(&mut self, a: ComplexVar, b: ComplexVar) -> Result<ComplexVar> {
        let rr = self.mul(a.re, b.re)?;
        let ii = self.mul(a.im, b.im)?;
        let ri = self.mul(a.re, b.im)?;
        let ir = self.mul(a.im, b.re)?;
        Ok(ComplexVar {
            re: self.sub(rr, ii)?,
            im: self.add(ri, ir)?,
        })
    }

    /// Scale both parts by the same real tensor.
    pub fn complex_scale(&mut self, z: ComplexVar, s: Var) -> Result<ComplexVar> {
        Ok(ComplexVar {
            re: self.mul(z.re, s)?,
            im: self.mul(z.im, s)?,
        })
    }

    pub fn complex_matmul(&mut self, a: ComplexVar, b: ComplexVar) -> Result<ComplexVar> {
        self.bilinear(a, b, |t, x, y| t.matmul(x, y))
    }

    /// Complex convolution. `w: [c_out, c_in, k]` for both parts.
    pub fn complex_conv1d(
        &mut self,
        x: ComplexVar,
        w: ComplexVar,
        bias: Option<ComplexVar>,
        stride: usize,
        padding: usize,
    ) -> Result<ComplexVar> {
        let rr = self.conv1d(x.re, w.re, bias.map(|b| b.re), stride, padding)?;
        let ii = self.conv1d(x.im, w.im, None, stride, padding)?;
        let ri = self.conv1d(x.im, w.re, bias.map(|b| b.im), stride, padding)?;
        let ir = self.conv1d(x.re, w.im, None, stride, padding)?;
        Ok(ComplexVar {
            re: self.sub(rr, ii)?,
            im: self.add(ri, ir)?,
        })
    }

    /// Real part of [`Tape::complex_conv1d`] without forming the imaginary part.
    pub fn complex_conv1d_real_part(
        &mut self,
        x: ComplexVar,
        w: ComplexVar,
        bias: Option<ComplexVar>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let rr = self.conv1d(x.re, w.re, bias.map(|b| b.re), stride, padding)?;
        let ii = self.conv1d(x.im, w.im, None, stride, padding)?;
        self.sub(rr, ii)
    }

    /// Complex transposed convolution. `w: [c_in, c_out, k]` for both parts.
    #[allow(clippy::too_many_arguments)]
    pub fn complex_conv_transpose1d(
        &mut self,
        x: ComplexVar,
        w: ComplexVar,
        bias: Option<ComplexVar>,
        stride: usize,
        crop_front: usize,
        crop_back: usize,
    ) -> Result<ComplexVar> {
        let rr = self.conv_transpose1d(x.re, w.re, bias.map(|b| b.re), stride, crop_front, crop_back)?;
        let ii = self.conv_transpose1d(x.im, w.im, None, stride, crop_front, crop_back)?;
        let ri = self.conv_transpose1d(x.im, w.re, bias.map(|b| b.im), stride, crop_front, crop_back)?;
        let ir = self.conv_transpose1d(x.re, w.im, None, stride, crop_front, crop_back)?;
        Ok(ComplexVar {
            re: self.sub(rr, ii)?,
            im: self.add(ri, ir)?,
        })
    }

    /// ReLU applied to real and imaginary parts independently.
    pub fn complex_relu(&mut self, z: ComplexVar) -> ComplexVar {
        ComplexVar {
            re: self.relu(z.re),
            im: self.relu(z.im),
        }
    }

    pub fn complex_magnitude(&mut self, z: ComplexVar) -> Result<Var> {
        self.magnitude(z.re, z.im)
    }

    pub fn complex_unit_phasor(&mut self, z: ComplexVar) -> Result<ComplexVar> {
        let (re, im) = self.unit_phasor(z.re, z.im)?;
        Ok(ComplexVar { re, im })
    }

    pub fn complex_concat_channels(&mut self, parts: &[ComplexVar]) -> Result<ComplexVar> {
        let re: Vec<Var> = parts.iter().map(|p| p.re).collect();
        let im: Vec<Var> = parts.iter().map(|p| p.im).collect();
        Ok(ComplexVar {
            re: self.concat_channels(&re)?,
            im: self.concat_channels(&im)?,
        })
    }

    fn bilinear(
        &mut self,
        a: ComplexVar,
        b: ComplexVar,
        f: impl Fn(&mut Self, Var, Var) -> Result<Var>,
    ) -> Result<ComplexVar> {
        let rr = f(self, a.re, b.re)?;
        let ii = f(self, a.im, b.im)?;
        let ri = f(self, a.re, b.im)?;
        let ir = f(self, a.im, b.re)?;
        Ok(ComplexVar {
            re: self.sub(rr, ii)?,
            im: self.add(ri, ir)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn complex_matmul_matches_scalar_complex_arithmetic() {
        // (1+2j)(3-1j) = 5+5j
        let mut tape = Tape::<f64>::new();
        let a = tape.complex_constant(ComplexTensor {
            re: Tensor::new(&[1, 1], vec![1.0]).unwrap(),
            im: Tensor::new(&[1, 1], vec![2.0]).unwrap(),
        });
        let b = tape.complex_constant(ComplexTensor {
            re: Tensor::new(&[1, 1], vec![3.0]).unwrap(),
            im: Tensor::new(&[1, 1], vec![-1.0]).unwrap(),
        });
        let c = tape.complex_matmul(a, b).unwrap();
        assert_eq!(tape.value(c.re).data(), &[5.0]);
        assert_eq!(tape.value(c.im).data(), &[5.0]);
    }

    #[test]
    fn complex_conv_expands_by_product_rule() {
        let mut tape = Tape::<f64>::new();
        let x = tape.complex_constant(ComplexTensor {
            re: Tensor::from_fn(&[1, 2, 5], |i| (i as f64 * 0.3).sin()),
            im: Tensor::from_fn(&[1, 2, 5], |i| (i as f64 * 0.5).cos()),
        });
        let w = tape.complex_constant(ComplexTensor {
            re: Tensor::from_fn(&[3, 2, 3], |i| (i as f64 * 0.7).sin()),
            im: Tensor::from_fn(&[3, 2, 3], |i| (i as f64 * 0.2).cos()),
        });
        let y = tape.complex_conv1d(x, w, None, 1, 1).unwrap();
        let re_only = tape.complex_conv1d_real_part(x, w, None, 1, 1).unwrap();
        assert_eq!(tape.value(y.re), tape.value(re_only));

        let wr_xr = tape.conv1d(x.re, w.re, None, 1, 1).unwrap();
        let wi_xi = tape.conv1d(x.im, w.im, None, 1, 1).unwrap();
        let wr_xi = tape.conv1d(x.im, w.re, None, 1, 1).unwrap();
        let wi_xr = tape.conv1d(x.re, w.im, None, 1, 1).unwrap();
        for i in 0..tape.value(y.re).numel() {
            let re = tape.value(wr_xr).data()[i] - tape.value(wi_xi).data()[i];
            let im = tape.value(wr_xi).data()[i] + tape.value(wi_xr).data()[i];
            assert!((tape.value(y.re).data()[i] - re).abs() < 1e-14);
            assert!((tape.value(y.im).data()[i] - im).abs() < 1e-14);
        }
    }
}
