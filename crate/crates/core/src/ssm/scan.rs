//! Selective state-space recurrence.
//!
//! Per channel, with diagonal `A` (strictly negative) and zero initial state:
//!
//! ```text
//! h_t = exp(Δ_t · A) ⊙ h_{t-1} + (Δ_t · u_t) · B_t
//! y_t = ⟨C_t, h_t⟩ + D · u_t
//! ```

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{FmsrError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{shape_str, Tensor};

/// Largest `B·K·D·L·N` for which the forward pass keeps its states for
/// the backward pass instead of recomputing them.
const TRACE_LIMIT: usize = 1 << 23;

/// One `(batch, direction)` lane: `d` channels sharing `B_t`/`C_t`.
struct Lane<'a, T> {
    u: &'a [T],     // [d, l]
    delta: &'a [T], // [d, l]
    a: &'a [T],     // [d, n]
    bt: &'a [T],    // [l, n]
    ct: &'a [T],    // [l, n]
    dskip: &'a [T], // [d]
    l: usize,
    n: usize,
}

/// Everything a lane reads, owned so the backward closure can keep it.
struct LaneInputs<T> {
    u: Arc<Tensor<T>>,
    delta: Arc<Tensor<T>>,
    d_skip: Arc<Tensor<T>>,
    /// `A = −exp(a_log)`, `[K, D, N]`.
    a: Vec<T>,
    bt: Vec<T>,
    ct: Vec<T>,
    k: usize,
    d: usize,
    l: usize,
    n: usize,
}

impl<T: Scalar> LaneInputs<T> {
    fn lane(&self, idx: usize) -> Lane<'_, T> {
        let (ki, d, l, n) = (idx % self.k, self.d, self.l, self.n);
        Lane {
            u: &self.u.data()[idx * d * l..(idx + 1) * d * l],
            delta: &self.delta.data()[idx * d * l..(idx + 1) * d * l],
            a: &self.a[ki * d * n..(ki + 1) * d * n],
            bt: &self.bt[idx * l * n..(idx + 1) * l * n],
            ct: &self.ct[idx * l * n..(idx + 1) * l * n],
            dskip: &self.d_skip.data()[ki * d..(ki + 1) * d],
            l,
            n,
        }
    }
}

/// Per-lane record of `h_t` and `exp(Δ_t·A)`, both `[d, l, n]`.
struct Trace<'a, T> {
    states: &'a mut [T],
    decays: &'a mut [T],
}

impl<T: Scalar> Lane<'_, T> {
    /// Runs one channel, writing its states and decays into `st`/`dec` (`[l, n]`).
    fn run_channel(&self, ch: usize, y: &mut [T], st: &mut [T], dec: &mut [T]) {
        let (l, n) = (self.l, self.n);
        let a = &self.a[ch * n..(ch + 1) * n];
        let u = &self.u[ch * l..(ch + 1) * l];
        let dt = &self.delta[ch * l..(ch + 1) * l];
        let ds = self.dskip[ch];
        let zero = vec![T::zero(); n];
        for t in 0..l {
            let du = dt[t] * u[t];
            let b = &self.bt[t * n..(t + 1) * n];
            let c = &self.ct[t * n..(t + 1) * n];
            let (done, rest) = st.split_at_mut(t * n);
            let prev = if t == 0 { &zero[..] } else { &done[(t - 1) * n..] };
            let h = &mut rest[..n];
            let d = &mut dec[t * n..(t + 1) * n];
            for (dv, &av) in d.iter_mut().zip(a) {
                *dv = (dt[t] * av).exp();
            }
            let mut acc = T::zero();
            for ((((hv, &pv), &dv), &bv), &cv) in h.iter_mut().zip(prev).zip(d.iter()).zip(b).zip(c) {
                *hv = dv * pv + du * bv;
                acc += cv * *hv;
            }
            y[t] = acc + ds * u[t];
        }
    }

    fn forward(&self, y: &mut [T], trace: Option<Trace<'_, T>>) {
        let (l, n) = (self.l, self.n);
        match trace {
            Some(tr) => {
                for (ch, ((yc, st), dec)) in y
                    .chunks_mut(l)
                    .zip(tr.states.chunks_mut(l * n))
                    .zip(tr.decays.chunks_mut(l * n))
                    .enumerate()
                {
                    self.run_channel(ch, yc, st, dec);
                }
            }
            None => {
                let mut st = vec![T::zero(); l * n];
                let mut dec = vec![T::zero(); l * n];
                for (ch, yc) in y.chunks_mut(l).enumerate() {
                    self.run_channel(ch, yc, &mut st, &mut dec);
                }
            }
        }
    }

    /// Accumulates gradients for this lane. `gbt`/`gct` are summed over
    /// channels. Without a recorded trace the forward pass is replayed.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        gy: &[T],
        trace: Option<(&[T], &[T])>,
        gu: &mut [T],
        gdelta: &mut [T],
        ga: &mut [T],
        gbt: &mut [T],
        gct: &mut [T],
        gd: &mut [T],
    ) {
        let (l, n) = (self.l, self.n);
        let mut st_buf = Vec::new();
        let mut dec_buf = Vec::new();
        let mut y_buf = Vec::new();
        if trace.is_none() {
            st_buf = vec![T::zero(); l * n];
            dec_buf = vec![T::zero(); l * n];
            y_buf = vec![T::zero(); l];
        }
        let zero = vec![T::zero(); n];
        let mut gh = vec![T::zero(); n];
        let mut part_dt = vec![T::zero(); n];
        let mut part_u = vec![T::zero(); n];
        for ch in 0..gy.len() / l {
            let (st, decays): (&[T], &[T]) = match trace {
                Some((states, decays)) => (
                    &states[ch * l * n..(ch + 1) * l * n],
                    &decays[ch * l * n..(ch + 1) * l * n],
                ),
                None => {
                    self.run_channel(ch, &mut y_buf, &mut st_buf, &mut dec_buf);
                    (&st_buf, &dec_buf)
                }
            };
            let a = &self.a[ch * n..(ch + 1) * n];
            let u = &self.u[ch * l..(ch + 1) * l];
            let dt = &self.delta[ch * l..(ch + 1) * l];
            let g = &gy[ch * l..(ch + 1) * l];
            let ds = self.dskip[ch];
            gh.fill(T::zero());
            let ga = &mut ga[ch * n..(ch + 1) * n];
            for t in (0..l).rev() {
                let b = &self.bt[t * n..(t + 1) * n];
                let c = &self.ct[t * n..(t + 1) * n];
                let dec = &decays[t * n..(t + 1) * n];
                let prev = if t == 0 { &zero[..] } else { &st[(t - 1) * n..t * n] };
                let h = &st[t * n..(t + 1) * n];
                let gbt_t = &mut gbt[t * n..(t + 1) * n];
                let gct_t = &mut gct[t * n..(t + 1) * n];
                let (gyt, dtt, ut) = (g[t], dt[t], u[t]);
                let dtu = dtt * ut;
                for s in 0..n {
                    gct_t[s] += gyt * h[s];
                    let ghs = gh[s] + gyt * c[s];
                    let gdecay = ghs * prev[s] * dec[s];
                    part_dt[s] = gdecay * a[s] + ghs * ut * b[s];
                    part_u[s] = ghs * b[s];
                    ga[s] += gdecay * dtt;
                    gbt_t[s] += ghs * dtu;
                    gh[s] = ghs * dec[s];
                }
                gd[ch] += gyt * ut;
                gu[ch * l + t] += gyt * ds + dtt * part_u.iter().copied().sum::<T>();
                gdelta[ch * l + t] += part_dt.iter().copied().sum::<T>();
            }
        }
    }
}

fn transpose_last2<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (blk_in, blk_out) in x.chunks(rows * cols).zip(out.chunks_mut(rows * cols)) {
        for r in 0..rows {
            for c in 0..cols {
                blk_out[c * rows + r] = blk_in[r * cols + c];
            }
        }
    }
    out
}

fn check_positive<T: Scalar>(delta: &Tensor<T>) -> Result<()> {
    if let Some(bad) = delta.data().iter().find(|&&d| !(d > T::zero())) {
        return Err(FmsrError::Domain {
            op: "selective_scan",
            msg: format!("step sizes must be positive, found {bad}"),
        });
    }
    Ok(())
}

/// Single-direction scan on plain tensors.
///
/// `u, delta: [B, D, L]`, `a: [D, N]` (the continuous-time state matrix
/// itself), `b_seq, c_seq: [B, N, L]`, `d: [D]` → `[B, D, L]`.
pub fn selective_scan_1d<T: Scalar>(
    u: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b_seq: &Tensor<T>,
    c_seq: &Tensor<T>,
    d: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (bn, dn, l) = match u.shape() {
        &[b, d, l] => (b, d, l),
        other => return Err(FmsrError::shape("selective_scan_1d", "[B, D, L] input", shape_str(other))),
    };
    let n = match a.shape() {
        &[ad, n] if ad == dn => n,
        other => return Err(FmsrError::shape("selective_scan_1d", format!("A [{dn}, N]"), shape_str(other))),
    };
    delta.expect_shape("selective_scan_1d delta", &[bn, dn, l])?;
    b_seq.expect_shape("selective_scan_1d B", &[bn, n, l])?;
    c_seq.expect_shape("selective_scan_1d C", &[bn, n, l])?;
    d.expect_shape("selective_scan_1d D", &[dn])?;
    check_positive(delta)?;
    if !a.all_finite() {
        return Err(FmsrError::Domain {
            op: "selective_scan_1d",
            msg: "state matrix must be finite".into(),
        });
    }
    let bt = transpose_last2(b_seq.data(), n, l);
    let ct = transpose_last2(c_seq.data(), n, l);
    let mut y = Tensor::zeros(&[bn, dn, l]);
    for (bi, yb) in y.data_mut().chunks_mut(dn * l).enumerate() {
        let lane = Lane {
            u: &u.data()[bi * dn * l..(bi + 1) * dn * l],
            delta: &delta.data()[bi * dn * l..(bi + 1) * dn * l],
            a: a.data(),
            bt: &bt[bi * l * n..(bi + 1) * l * n],
            ct: &ct[bi * l * n..(bi + 1) * l * n],
            dskip: d.data(),
            l,
            n,
        };
        lane.forward(yb, None);
    }
    Ok(y)
}

/// Multi-direction differentiable scan used by the 2D selective-scan module.
///
/// `u, delta: [B, K, D, L]`, `a_log: [K, D, N]` with `A = −exp(a_log)`,
/// `b_seq, c_seq: [B, K, N, L]`, `d_skip: [K, D]` → `[B, K, D, L]`.
pub fn selective_scan<T: Scalar>(
    tape: &Tape<T>,
    u: &Var<T>,
    delta: &Var<T>,
    a_log: &Var<T>,
    b_seq: &Var<T>,
    c_seq: &Var<T>,
    d_skip: &Var<T>,
) -> Result<Var<T>> {
    let [bn, k, dn, l] = u.value().dims4("selective_scan")?;
    let n = match a_log.shape() {
        &[ak, ad, n] if ak == k && ad == dn => n,
        other => return Err(FmsrError::shape("selective_scan", format!("a_log [{k}, {dn}, N]"), shape_str(other))),
    };
    delta.value().expect_shape("selective_scan delta", &[bn, k, dn, l])?;
    b_seq.value().expect_shape("selective_scan B", &[bn, k, n, l])?;
    c_seq.value().expect_shape("selective_scan C", &[bn, k, n, l])?;
    d_skip.value().expect_shape("selective_scan D", &[k, dn])?;
    check_positive(delta.value())?;

    let inputs = LaneInputs {
        u: u.shared(),
        delta: delta.shared(),
        d_skip: d_skip.shared(),
        a: a_log.value().data().iter().map(|&v| -v.exp()).collect(),
        bt: transpose_last2(b_seq.value().data(), n, l),
        ct: transpose_last2(c_seq.value().data(), n, l),
        k,
        d: dn,
        l,
        n,
    };

    // keep states and decays for the backward pass when they are small enough
    let keep = tape.is_recording() && bn * k * dn * l * n <= TRACE_LIMIT;
    let lane_len = dn * l * n;
    let (mut states, mut decays) = if keep {
        (vec![T::zero(); bn * k * lane_len], vec![T::zero(); bn * k * lane_len])
    } else {
        (Vec::new(), Vec::new())
    };
    let mut y = Tensor::zeros(&[bn, k, dn, l]);
    if keep {
        y.data_mut()
            .par_chunks_mut(dn * l)
            .zip(states.par_chunks_mut(lane_len))
            .zip(decays.par_chunks_mut(lane_len))
            .enumerate()
            .for_each(|(i, ((yl, st), dec))| {
                inputs.lane(i).forward(yl, Some(Trace { states: st, decays: dec }))
            });
    } else {
        y.data_mut()
            .par_chunks_mut(dn * l)
            .enumerate()
            .for_each(|(i, yl)| inputs.lane(i).forward(yl, None));
    }

    Ok(tape.record(y, &[u, delta, a_log, b_seq, c_seq, d_skip], move |g, needs| {
        struct LaneGrads<T> {
            gu: Vec<T>,
            gdelta: Vec<T>,
            ga: Vec<T>,
            gbt: Vec<T>,
            gct: Vec<T>,
            gd: Vec<T>,
        }
        let lanes: Vec<LaneGrads<T>> = (0..bn * k)
            .into_par_iter()
            .map(|lane_idx| {
                let mut lg = LaneGrads {
                    gu: vec![T::zero(); dn * l],
                    gdelta: vec![T::zero(); dn * l],
                    ga: vec![T::zero(); dn * n],
                    gbt: vec![T::zero(); l * n],
                    gct: vec![T::zero(); l * n],
                    gd: vec![T::zero(); dn],
                };
                let trace = keep.then(|| {
                    let r = lane_idx * lane_len..(lane_idx + 1) * lane_len;
                    (&states[r.clone()], &decays[r])
                });
                inputs.lane(lane_idx).backward(
                    &g.data()[lane_idx * dn * l..(lane_idx + 1) * dn * l],
                    trace,
                    &mut lg.gu,
                    &mut lg.gdelta,
                    &mut lg.ga,
                    &mut lg.gbt,
                    &mut lg.gct,
                    &mut lg.gd,
                );
                lg
            })
            .collect();

        let mut gu = Vec::with_capacity(bn * k * dn * l);
        let mut gdelta = Vec::with_capacity(bn * k * dn * l);
        let mut gbt = Vec::with_capacity(bn * k * l * n);
        let mut gct = Vec::with_capacity(bn * k * l * n);
        let mut ga_log = vec![T::zero(); k * dn * n];
        let mut gd = vec![T::zero(); k * dn];
        // lanes are reduced in a fixed order so results do not depend on thread count
        for (lane_idx, lg) in lanes.into_iter().enumerate() {
            let ki = lane_idx % k;
            gu.extend(lg.gu);
            gdelta.extend(lg.gdelta);
            gbt.extend(lg.gbt);
            gct.extend(lg.gct);
            for (dst, (&gav, &av)) in ga_log[ki * dn * n..(ki + 1) * dn * n]
                .iter_mut()
                .zip(lg.ga.iter().zip(&inputs.a[ki * dn * n..(ki + 1) * dn * n]))
            {
                // dA/da_log = A
                *dst += gav * av;
            }
            for (dst, &v) in gd[ki * dn..(ki + 1) * dn].iter_mut().zip(&lg.gd) {
                *dst += v;
            }
        }
        let bshape = [bn, k, n, l];
        vec![
            needs[0].then(|| Tensor::from_vec(&[bn, k, dn, l], gu).unwrap()),
            needs[1].then(|| Tensor::from_vec(&[bn, k, dn, l], gdelta).unwrap()),
            needs[2].then(|| Tensor::from_vec(&[k, dn, n], ga_log).unwrap()),
            needs[3].then(|| Tensor::from_vec(&bshape, transpose_last2(&gbt, l, n)).unwrap()),
            needs[4].then(|| Tensor::from_vec(&bshape, transpose_last2(&gct, l, n)).unwrap()),
            needs[5].then(|| Tensor::from_vec(&[k, dn], gd).unwrap()),
        ]
    }))
}
