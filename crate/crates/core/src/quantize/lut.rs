use serde::{Deserialize, Serialize};

/// Activation realised by a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => crate::linalg::sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Largest slope of the function over the reals.
    pub fn max_slope(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            Activation::Tanh => 1.0,
        }
    }

    /// Output code range for `out_bits`: sigmoid is unsigned on `k / (2^b - 1)`,
    /// tanh is signed on `k / (2^(b-1) - 1)`.
    pub fn code_range(self, out_bits: u32) -> (i32, i32) {
        match self {
            Activation::Sigmoid => (0, super::gate_levels(out_bits)),
            Activation::Tanh => {
                let s = super::state_levels(out_bits);
                (-s, s)
            }
        }
    }

    pub fn default_out_scale(self, out_bits: u32) -> f64 {
        1.0 / self.code_range(out_bits).1 as f64
    }

    pub fn id(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Precomputed table over every signed `in_bits` pre-activation code.
///
/// Entry `i` holds the output code for input code `i - 2^(in_bits-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLUT {
    pub func: Activation,
    pub in_bits: u32,
    pub out_bits: u32,
    pub in_scale: f64,
    pub out_scale: f64,
    pub table: Vec<i32>,
}

impl ActivationLUT {
    pub fn min_input(&self) -> i64 {
        -(1i64 << (self.in_bits - 1))
    }

    pub fn max_input(&self) -> i64 {
        (1i64 << (self.in_bits - 1)) - 1
    }

    /// Output code for a pre-activation code; inputs saturate at the table ends.
    #[inline]
    pub fn lookup(&self, code: i64) -> i32 {
        let i = code.clamp(self.min_input(), self.max_input()) - self.min_input();
        self.table[i as usize]
    }

    /// Real value of the pre-activation represented by table entry `i`.
    pub fn entry_input(&self, i: usize) -> f64 {
        (i as i64 + self.min_input()) as f64 * self.in_scale
    }
}

pub fn build_activation_lut(func: Activation, in_bits: u32, out_bits: u32, in_scale: f64, out_scale: f64) -> ActivationLUT {
    let (lo, hi) = func.code_range(out_bits);
    let n = 1usize << in_bits;
    let min = -(1i64 << (in_bits - 1));
    let table = (0..n)
        .map(|i| {
            let x = (i as i64 + min) as f64 * in_scale;
            ((func.eval(x) / out_scale).round() as i64).clamp(lo as i64, hi as i64) as i32
        })
        .collect();
    ActivationLUT { func, in_bits, out_bits, in_scale, out_scale, table }
}
