use rayon::prelude::*;

use super::params::PER_BLOCK;
use super::real::{gemm_acc, gemm_strided};
use super::{BackboneConfig, NormalizedAdjacency, ParamSet, Real};
use crate::error::{shape_err, Error, Result};

/// One sample laid out as `[persons, frames, joints, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInput<F> {
    pub data: Vec<F>,
    pub person_mask: Vec<bool>,
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    version: u64,
    samples: Vec<SampleCache<F>>,
}

impl<F> ForwardCache<F> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone)]
struct SampleCache<F> {
    persons: Vec<PersonCache<F>>,
    feature: Vec<F>,
}

#[derive(Debug, Clone)]
struct PersonCache<F> {
    /// Block inputs followed by the last block's output.
    hs: Vec<Vec<F>>,
    /// Spatial aggregation output of each block (pre-affine).
    ys: Vec<Vec<F>>,
    /// Post-ReLU affine output of each block (temporal conv input).
    acts: Vec<Vec<F>>,
}

struct Plan<'a, F> {
    cfg: &'a BackboneConfig,
    rows: Vec<Vec<(usize, F)>>,
    cols: Vec<Vec<(usize, F)>>,
    /// Frames entering each block, then the final frame count.
    frames: Vec<usize>,
}

impl<'a, F: Real> Plan<'a, F> {
    fn new(cfg: &'a BackboneConfig, adj: &NormalizedAdjacency) -> Result<Self> {
        if adj.num_joints != cfg.joints {
            return Err(shape_err!(
                "adjacency has {} joints, backbone expects {}",
                adj.num_joints,
                cfg.joints
            ));
        }
        let conv = |m: Vec<Vec<(usize, f64)>>| {
            m.into_iter()
                .map(|r| r.into_iter().map(|(j, a)| (j, F::from_f64(a))).collect())
                .collect()
        };
        let mut frames = vec![cfg.frames];
        frames.extend(cfg.frames_after_blocks());
        if frames.contains(&0) {
            return Err(shape_err!("temporal striding leaves no frames"));
        }
        Ok(Self {
            cfg,
            rows: conv(adj.rows()),
            cols: conv(adj.columns()),
            frames,
        })
    }

    fn check_params(&self, params: &ParamSet<F>) -> Result<()> {
        let expect = ParamSet::<F>::zeros(self.cfg);
        if params.params.len() != expect.params.len()
            || params
                .params
                .iter()
                .zip(&expect.params)
                .any(|(a, b)| a.shape != b.shape)
        {
            return Err(shape_err!("parameter set does not match the backbone config"));
        }
        Ok(())
    }

    fn check_input(&self, s: &SampleInput<F>) -> Result<()> {
        let c = self.cfg;
        let n = c.persons * c.frames * c.joints * c.input_channels;
        if s.data.len() != n || s.person_mask.len() != c.persons {
            return Err(shape_err!(
                "sample with {} values / {} persons, backbone expects [{}, {}, {}, {}]",
                s.data.len(),
                s.person_mask.len(),
                c.persons,
                c.frames,
                c.joints,
                c.input_channels
            ));
        }
        Ok(())
    }

    fn present(mask: &[bool]) -> Vec<usize> {
        let p: Vec<usize> = (0..mask.len()).filter(|&m| mask[m]).collect();
        if p.is_empty() {
            (0..mask.len()).collect()
        } else {
            p
        }
    }

    /// Runs all blocks on one person; returns the caches.
    fn person_forward(&self, params: &ParamSet<F>, x: Vec<F>) -> PersonCache<F> {
        let cfg = self.cfg;
        let v = cfg.joints;
        let (k, pad) = (cfg.temporal_kernel, cfg.padding());
        let nb = cfg.widths.len();
        let mut hs = Vec::with_capacity(nb + 1);
        let mut ys = Vec::with_capacity(nb);
        let mut acts = Vec::with_capacity(nb);
        hs.push(x);
        for b in 0..nb {
            let (cin, cout) = (cfg.block_input_width(b), cfg.widths[b]);
            let (l_in, l_out, stride) = (self.frames[b], self.frames[b + 1], cfg.strides[b]);
            let base = b * PER_BLOCK;
            let w = &params.params[base].value;
            let scale = &params.params[base + 1].value;
            let shift = &params.params[base + 2].value;
            let wt = &params.params[base + 3].value;
            let x = &hs[b];

            let mut g = vec![F::ZERO; l_in * v * cout];
            gemm_acc(l_in * v, cin, cout, x, w, &mut g);
            let mut y = vec![F::ZERO; l_in * v * cout];
            for t in 0..l_in {
                for (vi, row) in self.rows.iter().enumerate() {
                    let dst = (t * v + vi) * cout;
                    for &(wj, a) in row {
                        let src = (t * v + wj) * cout;
                        for o in 0..cout {
                            y[dst + o] += a * g[src + o];
                        }
                    }
                }
            }
            let mut act = y.clone();
            for chunk in act.chunks_exact_mut(cout) {
                for o in 0..cout {
                    chunk[o] = (chunk[o] * scale[o] + shift[o]).relu();
                }
            }
            let mut h = vec![F::ZERO; l_out * v * cout];
            let frame = v * cout;
            for tap in 0..k {
                let wk = &wt[tap * cout * cout..(tap + 1) * cout * cout];
                for_each_valid(l_in, l_out, stride, tap, pad, |to_lo, to_hi, ti_lo| {
                    let rows = (to_hi - to_lo) * v;
                    if stride == 1 {
                        gemm_acc(
                            rows,
                            cout,
                            cout,
                            &act[ti_lo * frame..(ti_lo + to_hi - to_lo) * frame],
                            wk,
                            &mut h[to_lo * frame..to_hi * frame],
                        );
                    } else {
                        for (n, to) in (to_lo..to_hi).enumerate() {
                            let ti = ti_lo + n * stride;
                            gemm_acc(
                                v,
                                cout,
                                cout,
                                &act[ti * frame..(ti + 1) * frame],
                                wk,
                                &mut h[to * frame..(to + 1) * frame],
                            );
                        }
                    }
                });
            }
            h.iter_mut().for_each(|e| *e = e.relu());
            ys.push(y);
            acts.push(act);
            hs.push(h);
        }
        PersonCache { hs, ys, acts }
    }

    fn sample_forward(&self, params: &ParamSet<F>, s: &SampleInput<F>) -> (Vec<f64>, SampleCache<F>) {
        let cfg = self.cfg;
        let per = cfg.frames * cfg.joints * cfg.input_channels;
        let present = Self::present(&s.person_mask);
        let last = *cfg.widths.last().unwrap();
        let l_last = *self.frames.last().unwrap();
        let pool = F::from_f64(1.0 / (l_last * cfg.joints) as f64);
        let share = F::from_f64(1.0 / present.len() as f64);
        let mut feature = vec![F::ZERO; last];
        let mut persons = Vec::with_capacity(present.len());
        for &m in &present {
            let pc = self.person_forward(params, s.data[m * per..(m + 1) * per].to_vec());
            let h = pc.hs.last().unwrap();
            let mut f = vec![F::ZERO; last];
            for row in h.chunks_exact(last) {
                for o in 0..last {
                    f[o] += row[o];
                }
            }
            for o in 0..last {
                feature[o] += f[o] * pool * share;
            }
            persons.push(pc);
        }
        let nb = params.num_blocks();
        let wc = &params.params[nb * PER_BLOCK].value;
        let bc = &params.params[nb * PER_BLOCK + 1].value;
        let logits = (0..cfg.num_classes)
            .map(|c| {
                let mut z = bc[c];
                for o in 0..last {
                    z += wc[c * last + o] * feature[o];
                }
                z.to_f64()
            })
            .collect();
        (logits, SampleCache { persons, feature })
    }

    fn sample_backward(
        &self,
        params: &ParamSet<F>,
        cache: &SampleCache<F>,
        dlogits: &[f64],
    ) -> Vec<Vec<F>> {
        let cfg = self.cfg;
        let v = cfg.joints;
        let (k, pad) = (cfg.temporal_kernel, cfg.padding());
        let nb = params.num_blocks();
        let last = *cfg.widths.last().unwrap();
        let mut grads: Vec<Vec<F>> = params
            .params
            .iter()
            .map(|p| vec![F::ZERO; p.len()])
            .collect();

        let dz: Vec<F> = dlogits.iter().map(|&d| F::from_f64(d)).collect();
        let wc = &params.params[nb * PER_BLOCK].value;
        let mut dfeat = vec![F::ZERO; last];
        for c in 0..cfg.num_classes {
            grads[nb * PER_BLOCK + 1][c] += dz[c];
            for o in 0..last {
                grads[nb * PER_BLOCK][c * last + o] += dz[c] * cache.feature[o];
                dfeat[o] += dz[c] * wc[c * last + o];
            }
        }

        let l_last = *self.frames.last().unwrap();
        let pool = F::from_f64(1.0 / (l_last * v) as f64);
        let share = F::from_f64(1.0 / cache.persons.len() as f64);
        for pc in &cache.persons {
            let df: Vec<F> = dfeat.iter().map(|&d| d * pool * share).collect();
            let mut dh: Vec<F> = Vec::with_capacity(l_last * v * last);
            for _ in 0..l_last * v {
                dh.extend_from_slice(&df);
            }
            for b in (0..nb).rev() {
                let (cin, cout) = (cfg.block_input_width(b), cfg.widths[b]);
                let (l_in, l_out, stride) = (self.frames[b], self.frames[b + 1], cfg.strides[b]);
                let base = b * PER_BLOCK;
                let w = &params.params[base].value;
                let scale = &params.params[base + 1].value;
                let wt = &params.params[base + 3].value;
                let (x, y, act, h) = (&pc.hs[b], &pc.ys[b], &pc.acts[b], &pc.hs[b + 1]);
                let frame = v * cout;

                // output ReLU
                for (d, &hv) in dh.iter_mut().zip(h) {
                    if hv <= F::ZERO {
                        *d = F::ZERO;
                    }
                }
                let dp = dh;

                // temporal convolution
                let mut dact = vec![F::ZERO; l_in * frame];
                let dwt = &mut grads[base + 3];
                for tap in 0..k {
                    let wk = &wt[tap * cout * cout..(tap + 1) * cout * cout];
                    let dwk = &mut dwt[tap * cout * cout..(tap + 1) * cout * cout];
                    for_each_valid(l_in, l_out, stride, tap, pad, |to_lo, to_hi, ti_lo| {
                        let spans: Vec<(usize, usize, usize)> = if stride == 1 {
                            vec![(to_lo, ti_lo, (to_hi - to_lo) * v)]
                        } else {
                            (to_lo..to_hi)
                                .enumerate()
                                .map(|(n, to)| (to, ti_lo + n * stride, v))
                                .collect()
                        };
                        for (to, ti, rows) in spans {
                            let a_blk = &act[ti * frame..ti * frame + rows * cout];
                            let dp_blk = &dp[to * frame..to * frame + rows * cout];
                            // dW_k += A^T dP
                            gemm_strided(
                                cout,
                                rows,
                                cout,
                                a_blk,
                                (1, cout as isize),
                                dp_blk,
                                (cout as isize, 1),
                                dwk,
                            );
                            // dA += dP W_k^T
                            gemm_strided(
                                rows,
                                cout,
                                cout,
                                dp_blk,
                                (cout as isize, 1),
                                wk,
                                (1, cout as isize),
                                &mut dact[ti * frame..ti * frame + rows * cout],
                            );
                        }
                    });
                }

                // affine + ReLU
                let mut dy = dact;
                {
                    let (dscale, dshift) = {
                        let (a, b2) = grads.split_at_mut(base + 2);
                        (&mut a[base + 1], &mut b2[0])
                    };
                    for ((dchunk, ychunk), achunk) in dy
                        .chunks_exact_mut(cout)
                        .zip(y.chunks_exact(cout))
                        .zip(act.chunks_exact(cout))
                    {
                        for o in 0..cout {
                            if achunk[o] <= F::ZERO {
                                dchunk[o] = F::ZERO;
                                continue;
                            }
                            let d = dchunk[o];
                            dscale[o] += d * ychunk[o];
                            dshift[o] += d;
                            dchunk[o] = d * scale[o];
                        }
                    }
                }

                // spatial aggregation: dG = A^T dY
                let mut dg = vec![F::ZERO; l_in * frame];
                for t in 0..l_in {
                    for (wj, col) in self.cols.iter().enumerate() {
                        let dst = (t * v + wj) * cout;
                        for &(vi, a) in col {
                            let src = (t * v + vi) * cout;
                            for o in 0..cout {
                                dg[dst + o] += a * dy[src + o];
                            }
                        }
                    }
                }
                // dW += X^T dG
                gemm_strided(
                    cin,
                    l_in * v,
                    cout,
                    x,
                    (1, cin as isize),
                    &dg,
                    (cout as isize, 1),
                    &mut grads[base],
                );
                if b > 0 {
                    let mut dx = vec![F::ZERO; l_in * v * cin];
                    gemm_strided(
                        l_in * v,
                        cout,
                        cin,
                        &dg,
                        (cout as isize, 1),
                        w,
                        (1, cout as isize),
                        &mut dx,
                    );
                    dh = dx;
                } else {
                    dh = Vec::new();
                }
            }
        }
        grads
    }
}

/// Calls `f(to_lo, to_hi, ti_lo)` for the contiguous range of output frames
/// whose input frame `to * stride + tap - pad` is in bounds.
fn for_each_valid(
    l_in: usize,
    l_out: usize,
    stride: usize,
    tap: usize,
    pad: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    // ti = to*stride + tap - pad in [0, l_in)
    let to_lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    let mut to_hi = l_out;
    while to_hi > to_lo && (to_hi - 1) * stride + tap >= l_in + pad {
        to_hi -= 1;
    }
    if to_hi > to_lo {
        f(to_lo, to_hi, to_lo * stride + tap - pad);
    }
}

/// Logits for each sample plus the activation cache for [`backward`].
pub fn forward<F: Real>(
    params: &ParamSet<F>,
    config: &BackboneConfig,
    adjacency: &NormalizedAdjacency,
    batch: &[SampleInput<F>],
) -> Result<(Vec<Vec<f64>>, ForwardCache<F>)> {
    let plan = Plan::new(config, adjacency)?;
    plan.check_params(params)?;
    for s in batch {
        plan.check_input(s)?;
    }
    let (logits, samples): (Vec<_>, Vec<_>) = batch
        .par_iter()
        .map(|s| plan.sample_forward(params, s))
        .unzip();
    Ok((
        logits,
        ForwardCache {
            version: params.version(),
            samples,
        },
    ))
}

/// Writes `d loss / d param` into the gradient slots.
///
/// `dlogits[i]` is the loss gradient with respect to sample `i`'s logits.
/// Per-sample gradients are summed in batch order, so the result does not
/// depend on the number of worker threads.
pub fn backward<F: Real>(
    params: &mut ParamSet<F>,
    config: &BackboneConfig,
    adjacency: &NormalizedAdjacency,
    cache: &ForwardCache<F>,
    dlogits: &[Vec<f64>],
) -> Result<()> {
    if cache.version != params.version() {
        return Err(Error::Usage(
            "forward cache predates the latest parameter update".into(),
        ));
    }
    if dlogits.len() != cache.samples.len() {
        return Err(shape_err!(
            "{} logit gradients for a batch of {}",
            dlogits.len(),
            cache.samples.len()
        ));
    }
    if let Some(d) = dlogits.iter().find(|d| d.len() != config.num_classes) {
        return Err(shape_err!(
            "logit gradient of length {} for {} classes",
            d.len(),
            config.num_classes
        ));
    }
    let plan = Plan::new(config, adjacency)?;
    plan.check_params(params)?;
    let per_sample: Vec<Vec<Vec<F>>> = {
        let p: &ParamSet<F> = params;
        cache
            .samples
            .par_iter()
            .zip(dlogits.par_iter())
            .map(|(c, d)| plan.sample_backward(p, c, d))
            .collect()
    };
    if !params.accumulate {
        params.zero_grad();
    }
    for g in per_sample {
        for (p, gi) in params.params.iter_mut().zip(g) {
            for (a, b) in p.grad.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    Ok(())
}
