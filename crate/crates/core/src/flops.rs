//! Analytic operation counts.
//!
//! One multiply-accumulate counts as one FLOP. Pointwise operations
//! (activations, products, sums, bias adds) cost one FLOP per element, and
//! a 2D FFT over `N = H·W` points is charged `5·N·log₂N` per channel.

use std::collections::BTreeMap;

/// Hierarchical FLOP tally with dotted row names.
#[derive(Clone, Debug, Default)]
pub struct FlopCounter {
    prefix: Vec<String>,
    rows: Vec<(String, u64)>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scoped<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let out = f(self);
        self.prefix.pop();
        out
    }

    pub fn add(&mut self, name: &str, flops: u64) {
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.rows.push((full, flops));
    }

    pub fn rows(&self) -> &[(String, u64)] {
        &self.rows
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|(_, f)| f).sum()
    }

    /// Totals grouped by the first `depth` name components.
    pub fn grouped(&self, depth: usize) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for (name, f) in &self.rows {
            let key: Vec<&str> = name.split('.').take(depth).collect();
            *out.entry(key.join(".")).or_insert(0) += f;
        }
        out
    }
}

/// Stride-1 same-padded convolution, bias included.
pub fn conv(cin: usize, cout: usize, k: usize, groups: usize, h: usize, w: usize) -> u64 {
    let hw = (h * w) as u64;
    (cout * (cin / groups) * k * k) as u64 * hw + cout as u64 * hw
}

/// One 2D transform of a single channel.
pub fn fft2(h: usize, w: usize) -> u64 {
    let n = (h * w) as f64;
    if n <= 1.0 {
        return 0;
    }
    (5.0 * n * n.log2()).round() as u64
}

/// Selective scan of `channels` lanes over `len` steps.
pub fn scan(channels: usize, len: usize, d_state: usize) -> u64 {
    // state update + readout per step, plus the skip term
    (channels * len * (2 * d_state + 1)) as u64
}
