use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-6;

/// Per-pixel layer normalization over the channel axis of `[B, C, H, W]`.
pub fn layer_norm_channel<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    gain: &Var<T>,
    bias: &Var<T>,
) -> Result<Var<T>> {
    let [b, c, h, w] = x.value().dims4("layer_norm_channel")?;
    gain.value().expect_shape("layer_norm_channel gain", &[c])?;
    bias.value().expect_shape("layer_norm_channel bias", &[c])?;
    let hw = h * w;
    let eps = T::of(LN_EPS);
    let inv_c = T::one() / T::of(c as f64);

    // normalized activations and per-pixel 1/σ, kept for the backward pass
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = vec![T::zero(); b * hw];
    let mut out = Tensor::zeros(x.shape());
    {
        let xd = x.value().data();
        let (gd, bd) = (gain.value().data(), bias.value().data());
        let xh = xhat.data_mut();
        let od = out.data_mut();
        for bi in 0..b {
            let base = bi * c * hw;
            for p in 0..hw {
                let mut mean = T::zero();
                for ci in 0..c {
                    mean += xd[base + ci * hw + p];
                }
                mean *= inv_c;
                let mut var = T::zero();
                for ci in 0..c {
                    let d = xd[base + ci * hw + p] - mean;
                    var += d * d;
                }
                var *= inv_c;
                let is = T::one() / (var + eps).sqrt();
                inv_std[bi * hw + p] = is;
                for ci in 0..c {
                    let i = base + ci * hw + p;
                    let n = (xd[i] - mean) * is;
                    xh[i] = n;
                    od[i] = gd[ci] * n + bd[ci];
                }
            }
        }
    }

    let gv = gain.shared();
    Ok(tape.record(out, &[x, gain, bias], move |g, needs| {
        let gd = g.data();
        let xh = xhat.data();
        let gain = gv.data();
        let mut dgain = needs[1].then(|| vec![T::zero(); c]);
        let mut dbias = needs[2].then(|| vec![T::zero(); c]);
        let mut dx = needs[0].then(|| Tensor::zeros(&[b, c, h, w]));
        for bi in 0..b {
            let base = bi * c * hw;
            for p in 0..hw {
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for ci in 0..c {
                    let i = base + ci * hw + p;
                    let gx = gd[i] * gain[ci];
                    m1 += gx;
                    m2 += gx * xh[i];
                    if let Some(dg) = dgain.as_mut() {
                        dg[ci] += gd[i] * xh[i];
                    }
                    if let Some(db) = dbias.as_mut() {
                        db[ci] += gd[i];
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    m1 *= inv_c;
                    m2 *= inv_c;
                    let is = inv_std[bi * hw + p];
                    let dxd = dx.data_mut();
                    for ci in 0..c {
                        let i = base + ci * hw + p;
                        dxd[i] = is * (gd[i] * gain[ci] - m1 - xh[i] * m2);
                    }
                }
            }
        }
        vec![
            dx,
            dgain.map(|v| Tensor::from_vec(&[c], v).unwrap()),
            dbias.map(|v| Tensor::from_vec(&[c], v).unwrap()),
        ]
    }))
}
