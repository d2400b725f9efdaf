use crate::error::{invalid, shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

impl Graph {
    /// Group normalization over `[N, C, ...]`: each sample's channels are
    /// split into `groups` contiguous groups normalized to zero mean and unit
    /// (biased) variance, then scaled by `gain[c]` and shifted by `bias[c]`.
    pub fn group_norm(&mut self, input: Var, groups: usize, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() < 2 {
            return shape_err("group_norm", format!("need rank >= 2, got {:?}", x.shape()));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        if groups == 0 || c % groups != 0 {
            return invalid("group_norm", format!("{c} channels not divisible into {groups} groups"));
        }
        for (name, v) in [("gain", gain), ("bias", bias)] {
            if self.value(v).numel() != c {
                return shape_err(
                    "group_norm",
                    format!("{name} has {} values for {c} channels", self.value(v).numel()),
                );
            }
        }
        let spatial: usize = x.shape()[2..].iter().product();
        let per_group = c / groups * spatial;
        let (gd, bd) = (self.value(gain).data(), self.value(bias).data());
        let mut out = x.clone();
        let mut stats = Vec::with_capacity(n * groups);
        for (gi, chunk) in out.data_mut().chunks_mut(per_group).enumerate() {
            let mean = chunk.iter().sum::<f64>() / per_group as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per_group as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            let first_channel = (gi % groups) * (c / groups);
            for (j, v) in chunk.iter_mut().enumerate() {
                let ch = first_channel + j / spatial;
                *v = (*v - mean) * rstd * gd[ch] + bd[ch];
            }
            stats.push((mean, rstd));
        }
        Ok(self.push(
            out,
            Op::GroupNorm {
                input,
                gain,
                bias,
                groups,
                stats,
            },
            &[input, gain, bias],
        ))
    }
}

pub(crate) fn group_norm_backward(
    g: &Graph,
    input: Var,
    gain: Var,
    bias: Var,
    groups: usize,
    stats: &[(f64, f64)],
    grad_out: &Tensor,
) -> Vec<(Var, Tensor)> {
    let x = g.value(input);
    let c = x.shape()[1];
    let spatial: usize = x.shape()[2..].iter().product();
    let per_group = c / groups * spatial;
    let m = per_group as f64;
    let gd = g.value(gain).data();
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dgain = Tensor::zeros(g.shape(gain).to_vec());
    let mut dbias = Tensor::zeros(g.shape(bias).to_vec());
    for (gi, (&(mean, rstd), (xc, gc))) in stats
        .iter()
        .zip(x.data().chunks(per_group).zip(grad_out.data().chunks(per_group)))
        .enumerate()
    {
        let first_channel = (gi % groups) * (c / groups);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..per_group {
            let ch = first_channel + j / spatial;
            let xhat = (xc[j] - mean) * rstd;
            let dxhat = gc[j] * gd[ch];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgain.data_mut()[ch] += gc[j] * xhat;
            dbias.data_mut()[ch] += gc[j];
        }
        let dxc = &mut dx.data_mut()[gi * per_group..(gi + 1) * per_group];
        for j in 0..per_group {
            let ch = first_channel + j / spatial;
            let xhat = (xc[j] - mean) * rstd;
            let dxhat = gc[j] * gd[ch];
            dxc[j] = rstd / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
        }
    }
    vec![(input, dx), (gain, dgain), (bias, dbias)]
}
