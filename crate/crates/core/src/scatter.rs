//! One scatter layer: every input channel is filtered by the low-pass `phi`
//! and by the complex high-pass `psi`, the high-pass response is replaced by
//! its modulus, and both are subsampled by two. Channel `i` of the input
//! becomes channels `2i` (low-pass) and `2i + 1` (modulus) of the output.

use alloc::vec::Vec;

use crate::tensor::{Graph, Var};
use crate::wavelets::{filter_bank, FilterBank, CENTER};
use crate::{Error, Real, Result};

pub const DEFAULT_EPS_MOD: f64 = 1e-12;

/// Parameter-free scatter layer. Output sample `j` is centered on input
/// sample `2j`, the borders are zero padded and the output has
/// `ceil(L / 2)` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterLayer {
    pub filter_bank: FilterBank,
    /// Added under the square root of the modulus so its gradient stays finite at 0.
    pub eps_mod: f64,
}

impl Default for ScatterLayer {
    fn default() -> Self {
        ScatterLayer {
            filter_bank: filter_bank(),
            eps_mod: DEFAULT_EPS_MOD,
        }
    }
}

impl ScatterLayer {
    pub fn parameter_count(&self) -> usize {
        0
    }

    pub fn output_len(len: usize) -> usize {
        len.div_ceil(2)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (_, _, len) = g.value(x).dims3("scatter")?;
        if len < 2 {
            return Err(Error::WindowTooShort {
                op: "scatter",
                needed: 2,
                got: len,
            });
        }
        let taps = |c: &[f64]| -> Vec<T> { c.iter().map(|&v| T::cast(v)).collect() };
        let fb = &self.filter_bank;
        let low = g.depthwise_conv1d(x, &taps(&fb.phi), 2, CENTER)?;
        let re = g.depthwise_conv1d(x, &taps(&fb.psi_re), 2, CENTER)?;
        let im = g.depthwise_conv1d(x, &taps(&fb.psi_im), 2, CENTER)?;
        let re2 = g.mul(re, re)?;
        let im2 = g.mul(im, im)?;
        let energy = g.add(re2, im2)?;
        let energy = g.add_scalar(energy, T::cast(self.eps_mod));
        let modulus = g.sqrt(energy);
        g.interleave_channels(low, modulus)
    }
}
