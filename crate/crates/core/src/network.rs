//! DSSR-Net: echo upsampling, unrolled DT/DC/PFE stages, dimension reduction.
//!
//! Tensors are laid out `[batch, channels, len]`. Complex quantities are
//! [`ComplexVar`] pairs. Parameter names are dotted paths, e.g.
//! `stage1.pfe.enc2.w`.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::Rng;
use rrpsr_autodiff::{BatchNormMode, ComplexTensor, ComplexVar, Real, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::baselines::RangeProfile;
use crate::error::{Error, Result};
use crate::seed;
use crate::signal::Echo;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
const CONV_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EduInit {
    /// Scaled uniform noise. At desk scale this tends to settle on a flat
    /// output profile.
    Random,
    /// Channel `c` is the N-point DFT shifted by `c/C` of a bin.
    DftShift,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DssrArch {
    pub n_samples: usize,
    pub oversample: usize,
    pub channels: usize,
    pub stages: usize,
    pub dr_kernel: usize,
    pub shared_weights: bool,
    pub edu_init: EduInit,
}

impl Default for DssrArch {
    fn default() -> Self {
        Self {
            n_samples: 64,
            oversample: 16,
            channels: 64,
            stages: 3,
            dr_kernel: 25,
            shared_weights: false,
            edu_init: EduInit::DftShift,
        }
    }
}

impl DssrArch {
    /// N=8, C=4, K=2, M=32: small enough for full finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            n_samples: 8,
            oversample: 4,
            channels: 4,
            stages: 2,
            dr_kernel: 13,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("DssrArch", reason));
        if self.n_samples < 8 || self.n_samples % 8 != 0 {
            return bad(format!("n_samples {} must be a multiple of 8", self.n_samples));
        }
        if self.oversample < 1 || self.channels < 1 || self.stages < 1 {
            return bad("oversample, channels and stages must be >= 1".into());
        }
        if self.dr_kernel < self.oversample {
            return bad(format!(
                "dr_kernel {} shorter than the stride {}",
                self.dr_kernel, self.oversample
            ));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.n_samples * self.oversample
    }

    /// Samples dropped from the front and back of the `(N−1)G + K_d` DR output.
    pub fn dr_crop(&self) -> (usize, usize) {
        let extra = self.dr_kernel - self.oversample;
        (extra / 2, extra - extra / 2)
    }

    fn stage_prefix(&self, k: usize) -> String {
        if self.shared_weights {
            "stage".to_string()
        } else {
            format!("stage{k}")
        }
    }

    /// Stages whose PFE output feeds a later stage. The last stage's PFE
    /// would only produce `Z_K`, which nothing consumes.
    fn has_pfe(&self, k: usize) -> bool {
        k + 1 < self.stages
    }

    /// Closed-form parameter count.
    ///
    /// ```text
    /// EDU          2CN²
    /// DT / stage   2 × (complex 3-tap C→C conv + bias) = 4(3C² + C)
    /// DC / stage   complex 2C→C conv + bias, then real part of C→C conv + real bias
    ///              = 2(6C² + C) + 6C² + C
    /// PFE / stage  real convs without bias, BN γ/β per output channel:
    ///              enc C→2C→4C→4C, dec 4C→4C→2C→C = 156C² + 34C
    /// DR           complex C→1 kernel K_d + complex bias = 2(C·K_d + 1)
    /// ```
    ///
    /// With unshared weights there are K DT/DC sets and K−1 PFE sets.
    pub fn parameter_count(&self) -> usize {
        let (n, c, kd) = (self.n_samples, self.channels, self.dr_kernel);
        let edu = 2 * c * n * n;
        let dt = 4 * (3 * c * c + c);
        let dc = 2 * (6 * c * c + c) + 6 * c * c + c;
        let pfe = 156 * c * c + 34 * c;
        let dr = 2 * (c * kd + 1);
        let (sets, pfe_sets) = if self.shared_weights {
            (1, usize::from(self.stages > 1))
        } else {
            (self.stages, self.stages - 1)
        };
        edu + sets * (dt + dc) + pfe_sets * pfe + dr
    }
}

/// Named tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid("ParamStore", format!("duplicate name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(|i| &mut self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// How batch norm behaves during one forward pass.
pub enum BnMode<'a, T> {
    /// Batch statistics; running estimates in the given store are updated.
    Train(&'a mut ParamStore<T>),
    /// Running estimates held by the network.
    Eval,
}

/// Tape handles for one stage.
#[derive(Clone, Copy, Debug)]
pub struct StageVars {
    pub t: ComplexVar,
    pub x: ComplexVar,
    pub beta: Var,
    pub z: Option<ComplexVar>,
}

#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub x_f: ComplexVar,
    pub stages: Vec<StageVars>,
    /// Complex DR output `[batch, 1, M]` before the magnitude.
    pub field: ComplexVar,
    /// `[batch, M]`.
    pub profile: Var,
}

/// Values of one stage for a single echo.
#[derive(Clone, Debug)]
pub struct StageState {
    pub x_f: ComplexTensor<f64>,
    pub t: ComplexTensor<f64>,
    pub x_k: ComplexTensor<f64>,
    /// `None` for the last stage.
    pub z_k: Option<ComplexTensor<f64>>,
    pub beta: Tensor<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DssrNet<T> {
    arch: DssrArch,
    params: ParamStore<T>,
    buffers: ParamStore<T>,
}

fn uniform<T: Real, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
}

impl<T: Real> DssrNet<T> {
    pub fn new(arch: DssrArch, init_seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::rng(init_seed, "dssr-init", 0);
        let mut params = ParamStore::default();
        let mut buffers = ParamStore::default();
        let (n, c, g) = (arch.n_samples, arch.channels, arch.oversample);

        match arch.edu_init {
            EduInit::Random => {
                let bound = (3.0 / (2.0 * n as f64)).sqrt();
                params.insert("edu.w_re", uniform(&mut rng, &[n, c * n], bound))?;
                params.insert("edu.w_im", uniform(&mut rng, &[n, c * n], bound))?;
            }
            EduInit::DftShift => {
                let scale = 1.0 / (n as f64).sqrt();
                let entry = |idx: usize| {
                    let (row, col) = (idx / (c * n), idx % (c * n));
                    let (ch, bin) = (col / n, col % n);
                    let freq = (bin as f64 + ch as f64 / c as f64) / n as f64;
                    Complex64::from_polar(scale, 2.0 * std::f64::consts::PI * row as f64 * freq)
                };
                params.insert("edu.w_re", Tensor::from_fn(&[n, c * n], |i| T::from_f64_lossy(entry(i).re)))?;
                params.insert("edu.w_im", Tensor::from_fn(&[n, c * n], |i| T::from_f64_lossy(entry(i).im)))?;
            }
        }

        let complex_conv = |params: &mut ParamStore<T>, rng: &mut rand_chacha::ChaCha8Rng, name: String, c_out, c_in, bias: bool| -> Result<()> {
            let bound = (3.0 / (2.0 * (c_in * CONV_KERNEL) as f64)).sqrt();
            params.insert(format!("{name}.w_re"), uniform(rng, &[c_out, c_in, CONV_KERNEL], bound))?;
            params.insert(format!("{name}.w_im"), uniform(rng, &[c_out, c_in, CONV_KERNEL], bound))?;
            if bias {
                params.insert(format!("{name}.b_re"), Tensor::zeros(&[c_out]))?;
                params.insert(format!("{name}.b_im"), Tensor::zeros(&[c_out]))?;
            }
            Ok(())
        };
        let n_sets = if arch.shared_weights { 1 } else { arch.stages };
        for k in 0..n_sets {
            let p = arch.stage_prefix(k);
            complex_conv(&mut params, &mut rng, format!("{p}.dt.conv1"), c, c, true)?;
            complex_conv(&mut params, &mut rng, format!("{p}.dt.conv2"), c, c, true)?;
            complex_conv(&mut params, &mut rng, format!("{p}.dc.conv1"), c, 2 * c, true)?;
            complex_conv(&mut params, &mut rng, format!("{p}.dc.conv2"), c, c, false)?;
            params.insert(format!("{p}.dc.conv2.b"), Tensor::zeros(&[c]))?;
            if arch.has_pfe(k) {
                for (layer, c_in, c_out, transposed) in pfe_layers(c) {
                    let name = format!("{p}.pfe.{layer}");
                    let bound = (6.0 / (c_in * CONV_KERNEL) as f64).sqrt();
                    let shape = if transposed {
                        [c_in, c_out, CONV_KERNEL]
                    } else {
                        [c_out, c_in, CONV_KERNEL]
                    };
                    params.insert(format!("{name}.w"), uniform(&mut rng, &shape, bound))?;
                    params.insert(format!("{name}.gamma"), Tensor::ones(&[c_out]))?;
                    params.insert(format!("{name}.beta"), Tensor::zeros(&[c_out]))?;
                    buffers.insert(format!("{name}.running_mean"), Tensor::zeros(&[c_out]))?;
                    buffers.insert(format!("{name}.running_var"), Tensor::ones(&[c_out]))?;
                }
            }
        }
        let taps = arch.dr_kernel.div_ceil(g);
        let bound = (3.0 / (2.0 * (c * taps) as f64)).sqrt();
        params.insert("dr.w_re", uniform(&mut rng, &[c, 1, arch.dr_kernel], bound))?;
        params.insert("dr.w_im", uniform(&mut rng, &[c, 1, arch.dr_kernel], bound))?;
        params.insert("dr.b_re", Tensor::zeros(&[1]))?;
        params.insert("dr.b_im", Tensor::zeros(&[1]))?;
        Ok(Self { arch, params, buffers })
    }

    /// Reassemble from stored tensors, checking every name and shape
    /// against a freshly initialized network of the same architecture.
    pub fn from_parts(arch: DssrArch, params: ParamStore<T>, buffers: ParamStore<T>) -> Result<Self> {
        let reference = Self::new(arch, 0)?;
        for (what, want, got) in [("parameter", &reference.params, &params), ("buffer", &reference.buffers, &buffers)] {
            if want.names() != got.names() {
                return Err(Error::CorruptCheckpoint(format!("{what} names do not match the architecture")));
            }
            for ((name, a), b) in want.iter().zip(got.values()) {
                if a.shape() != b.shape() {
                    return Err(Error::CorruptCheckpoint(format!(
                        "{what} {name} has shape {:?}, expected {:?}",
                        b.shape(),
                        a.shape()
                    )));
                }
            }
        }
        Ok(Self { arch, params, buffers })
    }

    pub fn arch(&self) -> &DssrArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore<T> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.buffers
    }

    pub fn cast<U: Real>(&self) -> DssrNet<U> {
        DssrNet {
            arch: self.arch,
            params: self.params.cast(),
            buffers: self.buffers.cast(),
        }
    }

    /// Put every parameter on the tape, as leaves if `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .values()
            .iter()
            .map(|v| if trainable { tape.leaf(v.clone()) } else { tape.constant(v.clone()) })
            .collect()
    }

    /// Run the network on `echo` (`[batch, N]` re/im) with parameters `vars`
    /// bound in the order of [`DssrNet::params`].
    ///
    /// The last stage stops after DC: its `Z_K` would feed nothing.
    pub fn build(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        echo: ComplexVar,
        bn: BnMode<'_, T>,
    ) -> Result<ForwardVars> {
        self.modules(tape, vars, bn).forward(echo)
    }

    /// Individual modules over parameters bound as `vars`.
    pub fn modules<'a, 't>(&'a self, tape: &'t mut Tape<T>, vars: &'a [Var], bn: BnMode<'a, T>) -> Modules<'a, 't, T> {
        Modules {
            net: self,
            vars,
            bn,
            tape,
        }
    }

    /// Eval-mode profiles for a batch of echoes.
    pub fn infer(&self, echoes: &[Echo]) -> Result<Vec<RangeProfile>> {
        if echoes.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let input = echo_batch(echoes, self.arch.n_samples)?;
        let echo = tape.complex_constant(input);
        let out = self.build(&mut tape, &vars, echo, BnMode::Eval)?;
        let m = self.arch.grid_size();
        let data = tape.value(out.profile).data();
        Ok(data
            .chunks(m)
            .map(|row| RangeProfile::new(row.iter().map(|v| v.as_f64()).collect(), "dssr", &[]))
            .collect())
    }

    /// Eval-mode forward of one echo, returning every stage's state.
    pub fn trace(&self, echo: &Echo) -> Result<(Vec<StageState>, RangeProfile)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let input = echo_batch(std::slice::from_ref(echo), self.arch.n_samples)?;
        let y = tape.complex_constant(input);
        let out = self.build(&mut tape, &vars, y, BnMode::Eval)?;
        let get = |tape: &Tape<T>, z: ComplexVar| -> ComplexTensor<f64> {
            let v = tape.complex_value(z);
            ComplexTensor {
                re: v.re.cast(),
                im: v.im.cast(),
            }
        };
        let x_f = get(&tape, out.x_f);
        let stages = out
            .stages
            .iter()
            .map(|s| StageState {
                x_f: x_f.clone(),
                t: get(&tape, s.t),
                x_k: get(&tape, s.x),
                z_k: s.z.map(|z| get(&tape, z)),
                beta: tape.value(s.beta).cast(),
            })
            .collect();
        let values = tape.value(out.profile).data().iter().map(|v| v.as_f64()).collect();
        Ok((stages, RangeProfile::new(values, "dssr", &[])))
    }
}

/// `(name, c_in, c_out, transposed)` for the PFE U-net.
fn pfe_layers(c: usize) -> [(&'static str, usize, usize, bool); 6] {
    [
        ("enc1", c, 2 * c, false),
        ("enc2", 2 * c, 4 * c, false),
        ("enc3", 4 * c, 4 * c, false),
        ("dec1", 4 * c, 4 * c, true),
        ("dec2", 4 * c, 2 * c, true),
        ("dec3", 2 * c, c, true),
    ]
}

/// Stack echoes into a `[batch, N]` complex tensor, each scaled to unit RMS.
pub fn echo_batch<T: Real>(echoes: &[Echo], n: usize) -> Result<ComplexTensor<T>> {
    let mut re = Vec::with_capacity(echoes.len() * n);
    let mut im = Vec::with_capacity(echoes.len() * n);
    for e in echoes {
        if e.len() != n {
            return Err(Error::invalid("echo_batch", format!("echo length {} != N = {n}", e.len())));
        }
        let rms = e.power().sqrt();
        let scale = if rms > 0.0 { 1.0 / rms } else { 0.0 };
        for s in &e.samples {
            re.push(T::from_f64_lossy(s.re * scale));
            im.push(T::from_f64_lossy(s.im * scale));
        }
    }
    let shape = [echoes.len(), n];
    Ok(ComplexTensor {
        re: Tensor::new(&shape, re)?,
        im: Tensor::new(&shape, im)?,
    })
}

pub struct Modules<'a, 't, T> {
    net: &'a DssrNet<T>,
    vars: &'a [Var],
    bn: BnMode<'a, T>,
    tape: &'t mut Tape<T>,
}

impl<T: Real> Modules<'_, '_, T> {
    pub fn tape(&mut self) -> &mut Tape<T> {
        self.tape
    }

    fn var(&self, name: &str) -> Var {
        let i = self
            .net
            .params
            .position(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[i]
    }

    fn cvar(&self, name: &str) -> ComplexVar {
        ComplexVar::new(self.var(&format!("{name}_re")), self.var(&format!("{name}_im")))
    }

    fn complex_conv(&mut self, name: &str, x: ComplexVar) -> Result<ComplexVar> {
        let w = self.cvar(&format!("{name}.w"));
        let b = self.cvar(&format!("{name}.b"));
        Ok(self.tape.complex_conv1d(x, w, Some(b), 1, 1)?)
    }

    fn batch_norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.var(&format!("{name}.gamma"));
        let beta = self.var(&format!("{name}.beta"));
        let (mean_name, var_name) = (format!("{name}.running_mean"), format!("{name}.running_var"));
        let eps = T::from_f64_lossy(BN_EPS);
        let out = match &mut self.bn {
            BnMode::Train(store) => {
                let mi = store.position(&mean_name).expect("running mean buffer");
                let vi = store.position(&var_name).expect("running var buffer");
                let values = store.values_mut();
                let (lo, hi) = values.split_at_mut(vi.max(mi));
                let (mean, var) = if mi < vi {
                    (&mut lo[mi], &mut hi[0])
                } else {
                    (&mut hi[0], &mut lo[vi])
                };
                let mode = BatchNormMode::Train {
                    running_mean: mean.data_mut(),
                    running_var: var.data_mut(),
                    momentum: T::from_f64_lossy(BN_MOMENTUM),
                };
                self.tape.batch_norm(x, gamma, beta, mode, eps)?
            }
            BnMode::Eval => {
                let buffers = &self.net.buffers;
                let mode = BatchNormMode::Eval {
                    running_mean: buffers.get(&mean_name).expect("running mean buffer").data(),
                    running_var: buffers.get(&var_name).expect("running var buffer").data(),
                };
                self.tape.batch_norm(x, gamma, beta, mode, eps)?
            }
        };
        Ok(out)
    }

    /// `[batch, N]` echo to `[batch, C, N]`; channel `c` is `F_c y`.
    pub fn edu(&mut self, y: ComplexVar) -> Result<ComplexVar> {
        let (n, c) = (self.net.arch.n_samples, self.net.arch.channels);
        let shape = self.tape.shape(y.re).to_vec();
        if shape.len() != 2 || shape[1] != n {
            return Err(rrpsr_autodiff::AutodiffError::ShapeMismatch {
                op: "edu",
                left: shape,
                right: vec![0, n],
            }
            .into());
        }
        let w = self.cvar("edu.w");
        let flat = self.tape.complex_matmul(y, w)?;
        Ok(ComplexVar::new(
            self.tape.reshape(flat.re, &[shape[0], c, n])?,
            self.tape.reshape(flat.im, &[shape[0], c, n])?,
        ))
    }

    pub fn dt(&mut self, stage: usize, z: ComplexVar) -> Result<ComplexVar> {
        let prefix = self.net.arch.stage_prefix(stage);
        let h = self.complex_conv(&format!("{prefix}.dt.conv1"), z)?;
        let h = self.tape.complex_relu(h);
        self.complex_conv(&format!("{prefix}.dt.conv2"), h)
    }

    /// Returns `(β ⊙ x_f + (1 − β) ⊙ t, β)`.
    pub fn dc(&mut self, stage: usize, x_f: ComplexVar, t: ComplexVar) -> Result<(ComplexVar, Var)> {
        let prefix = self.net.arch.stage_prefix(stage);
        let cat = self.tape.complex_concat_channels(&[x_f, t])?;
        let h = self.complex_conv(&format!("{prefix}.dc.conv1"), cat)?;
        let h = self.tape.complex_relu(h);
        let w = self.cvar(&format!("{prefix}.dc.conv2.w"));
        let bias = self.var(&format!("{prefix}.dc.conv2.b"));
        let rr = self.tape.conv1d(h.re, w.re, Some(bias), 1, 1)?;
        let ii = self.tape.conv1d(h.im, w.im, None, 1, 1)?;
        let logits = self.tape.sub(rr, ii)?;
        let beta = self.tape.sigmoid(logits);
        let keep = self.tape.complex_scale(x_f, beta)?;
        let rest = self.tape.one_minus(beta);
        let blend = self.tape.complex_scale(t, rest)?;
        Ok((self.tape.complex_add(keep, blend)?, beta))
    }

    /// Magnitude U-net applied to `|x|`, re-attached to the phase of `x`.
    /// Defined for every stage but the last.
    pub fn pfe(&mut self, stage: usize, x: ComplexVar) -> Result<ComplexVar> {
        if !self.net.arch.has_pfe(stage) {
            return Err(Error::invalid("pfe", format!("stage {stage} has no PFE")));
        }
        let prefix = self.net.arch.stage_prefix(stage);
        let m0 = self.tape.complex_magnitude(x)?;
        let mut h = m0;
        let mut skips = Vec::new();
        for (layer, _, _, transposed) in pfe_layers(self.net.arch.channels) {
            let name = format!("{prefix}.pfe.{layer}");
            let w = self.var(&format!("{name}.w"));
            h = if transposed {
                self.tape.conv_transpose1d(h, w, None, 2, 1, 0)?
            } else {
                self.tape.conv1d(h, w, None, 2, 1)?
            };
            h = self.batch_norm(&name, h)?;
            h = self.tape.relu(h);
            match layer {
                "enc1" | "enc2" => skips.push(h),
                "dec1" | "dec2" => {
                    let s = skips.pop().expect("encoder skip");
                    h = self.tape.add(h, s)?;
                }
                "dec3" => h = self.tape.add(h, m0)?,
                _ => {}
            }
        }
        let m = self.tape.relu(h);
        let phase = self.tape.complex_unit_phasor(x)?;
        Ok(self.tape.complex_scale(phase, m)?)
    }

    /// Returns the complex `[batch, 1, M]` field and its `[batch, M]` magnitude.
    pub fn dr(&mut self, x: ComplexVar) -> Result<(ComplexVar, Var)> {
        let arch = self.net.arch;
        let (front, back) = arch.dr_crop();
        let w = self.cvar("dr.w");
        let b = self.cvar("dr.b");
        let field = self
            .tape
            .complex_conv_transpose1d(x, w, Some(b), arch.oversample, front, back)?;
        let mag = self.tape.complex_magnitude(field)?;
        let batch = self.tape.shape(mag)[0];
        let profile = self.tape.reshape(mag, &[batch, arch.grid_size()])?;
        Ok((field, profile))
    }

    pub fn forward(&mut self, y: ComplexVar) -> Result<ForwardVars> {
        let arch = self.net.arch;
        let x_f = self.edu(y)?;
        let shape = self.tape.shape(x_f.re).to_vec();
        let mut z = ComplexVar::new(
            self.tape.constant(Tensor::zeros(&shape)),
            self.tape.constant(Tensor::zeros(&shape)),
        );
        let mut stages = Vec::with_capacity(arch.stages);
        let mut x = x_f;
        for k in 0..arch.stages {
            let t = self.dt(k, z)?;
            let (x_next, beta) = self.dc(k, x_f, t)?;
            x = x_next;
            let z_next = if arch.has_pfe(k) {
                z = self.pfe(k, x)?;
                Some(z)
            } else {
                None
            };
            stages.push(StageVars { t, x, beta, z: z_next });
        }
        let (field, profile) = self.dr(x)?;
        Ok(ForwardVars {
            x_f,
            stages,
            field,
            profile,
        })
    }
}
