//! Forward ops and their recorded gradient rules.

use super::mat::{matmul_nt_raw, matmul_raw, matmul_tn_raw};
use super::{Tape, Tensor, TensorError};

impl Tape {
    // ── dense algebra ────────────────────────────────────────────────

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = a.dims2("matmul")?;
        let (k2, n) = b.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_raw(&a.data(), &b.data(), &mut out, m, k, n);
        let track = self.track(&[a, b]);
        let out = Tensor::from_parts(out, vec![m, n], track);
        if track {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    if a.requires_grad() {
                        // dA = dC · Bᵀ
                        let mut da = vec![0.0; m * k];
                        matmul_nt_raw(&g, &b.data(), &mut da, m, n, k);
                        a.accumulate_grad(&da);
                    }
                    if b.requires_grad() {
                        // dB = Aᵀ · dC
                        let mut db = vec![0.0; k * n];
                        matmul_tn_raw(&a.data(), &g, &mut db, m, k, n);
                        b.accumulate_grad(&db);
                    }
                }
            });
        }
        Ok(out)
    }

    /// 2-D transpose. Gradient is the transpose of the upstream gradient.
    pub fn transpose(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let (r, c) = x.dims2("transpose")?;
        let xd = x.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        drop(xd);
        let track = self.track(&[x]);
        let out = Tensor::from_parts(out, vec![c, r], track);
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    let mut dx = vec![0.0; r * c];
                    for j in 0..c {
                        for i in 0..r {
                            dx[i * c + j] = g[j * r + i];
                        }
                    }
                    x.accumulate_grad(&dx);
                }
            });
        }
        Ok(out)
    }

    // ── elementwise ──────────────────────────────────────────────────

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
        let track = self.track(&[a, b]);
        let out = Tensor::from_parts(out, a.shape().to_vec(), track);
        if track {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    if a.requires_grad() {
                        a.accumulate_grad(&g);
                    }
                    if b.requires_grad() {
                        b.accumulate_grad(&g);
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sub",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
        let track = self.track(&[a, b]);
        let out = Tensor::from_parts(out, a.shape().to_vec(), track);
        if track {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    if a.requires_grad() {
                        a.accumulate_grad(&g);
                    }
                    if b.requires_grad() {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        b.accumulate_grad(&neg);
                    }
                }
            });
        }
        Ok(out)
    }

    /// Hadamard product.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
        let track = self.track(&[a, b]);
        let out = Tensor::from_parts(out, a.shape().to_vec(), track);
        if track {
            let (a, b, o) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    if a.requires_grad() {
                        let da: Vec<f64> =
                            g.iter().zip(b.data().iter()).map(|(gv, bv)| gv * bv).collect();
                        a.accumulate_grad(&da);
                    }
                    if b.requires_grad() {
                        let db: Vec<f64> =
                            g.iter().zip(a.data().iter()).map(|(gv, av)| gv * av).collect();
                        b.accumulate_grad(&db);
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn scale(&self, x: &Tensor, c: f64) -> Tensor {
        let out: Vec<f64> = x.data().iter().map(|v| v * c).collect();
        let track = self.track(&[x]);
        let out = Tensor::from_parts(out, x.shape().to_vec(), track);
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    x.accumulate_grad(&dx);
                }
            });
        }
        out
    }

    /// Broadcast-add a length-d bias to every row of an R×d matrix.
    pub fn add_bias(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
        let (r, c) = x.dims2("add_bias")?;
        if bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: x.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let bd = bias.data();
        let out: Vec<f64> = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i % c])
            .collect();
        drop(bd);
        let track = self.track(&[x, bias]);
        let out = Tensor::from_parts(out, vec![r, c], track);
        if track {
            let (x, bias, o) = (x.clone(), bias.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    if x.requires_grad() {
                        x.accumulate_grad(&g);
                    }
                    if bias.requires_grad() {
                        let mut db = vec![0.0; c];
                        for (i, gv) in g.iter().enumerate() {
                            db[i % c] += gv;
                        }
                        bias.accumulate_grad(&db);
                    }
                }
            });
        }
        Ok(out)
    }

    pub fn relu(&self, x: &Tensor) -> Tensor {
        self.unary(x, |v| v.max(0.0), |v, _| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn tanh(&self, x: &Tensor) -> Tensor {
        self.unary(x, |v| v.tanh(), |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self, x: &Tensor) -> Tensor {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), |_, y| y * (1.0 - y))
    }

    pub fn exp(&self, x: &Tensor) -> Tensor {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    /// Natural log. Callers floor their inputs; a non-positive value here is
    /// a bug upstream and is reported, not clamped.
    pub fn log(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        if let Some((index, &value)) = x.data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(TensorError::LogDomain { value, index });
        }
        Ok(self.unary(x, |v| v.ln(), |v, _| 1.0 / v))
    }

    /// Pointwise op with derivative expressed from input value `v` and
    /// output value `y`.
    fn unary(
        &self,
        x: &Tensor,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let out: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
        let track = self.track(&[x]);
        let out = Tensor::from_parts(out, x.shape().to_vec(), track);
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    let xd = x.data();
                    let od = o.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xd.iter().zip(od.iter()))
                        .map(|(gv, (&v, &y))| gv * df(v, y))
                        .collect();
                    drop(xd);
                    drop(od);
                    x.accumulate_grad(&dx);
                }
            });
        }
        out
    }

    // ── reductions and normalizers ───────────────────────────────────

    /// Sum of all elements, as a length-1 tensor.
    pub fn sum(&self, x: &Tensor) -> Tensor {
        let s: f64 = x.data().iter().sum();
        let track = self.track(&[x]);
        let out = Tensor::from_parts(vec![s], vec![1], track);
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    let dx = vec![g[0]; x.numel()];
                    x.accumulate_grad(&dx);
                }
            });
        }
        out
    }

    /// Normalize over the last axis to zero mean / unit variance, then
    /// apply a learned affine.
    pub fn layer_norm(
        &self,
        x: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor, TensorError> {
        let shape = x.shape().to_vec();
        let d = *shape.last().ok_or(TensorError::BadShape {
            op: "layer_norm",
            expected: "at least 1-D".into(),
            got: shape.clone(),
        })?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: gain.shape().to_vec(),
            });
        }
        let rows = x.numel() / d;
        let xd = x.data();
        let gd = gain.data();
        let bd = bias.data();
        let mut out = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gd[j] + bd[j];
            }
        }
        drop(xd);
        drop(gd);
        drop(bd);
        let track = self.track(&[x, gain, bias]);
        let out = Tensor::from_parts(out, x.shape().to_vec(), track);
        if track {
            let (x, gain, bias, o) = (x.clone(), gain.clone(), bias.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    let gd = gain.data();
                    if gain.requires_grad() {
                        let mut dgain = vec![0.0; d];
                        for r in 0..rows {
                            for j in 0..d {
                                dgain[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                        gain.accumulate_grad(&dgain);
                    }
                    if bias.requires_grad() {
                        let mut dbias = vec![0.0; d];
                        for r in 0..rows {
                            for j in 0..d {
                                dbias[j] += g[r * d + j];
                            }
                        }
                        bias.accumulate_grad(&dbias);
                    }
                    if x.requires_grad() {
                        let mut dx = vec![0.0; rows * d];
                        for r in 0..rows {
                            let gr = &g[r * d..(r + 1) * d];
                            let hr = &xhat[r * d..(r + 1) * d];
                            let mut mean_dh = 0.0;
                            let mut mean_dh_h = 0.0;
                            for j in 0..d {
                                let dh = gr[j] * gd[j];
                                mean_dh += dh;
                                mean_dh_h += dh * hr[j];
                            }
                            mean_dh /= d as f64;
                            mean_dh_h /= d as f64;
                            for j in 0..d {
                                let dh = gr[j] * gd[j];
                                dx[r * d + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                            }
                        }
                        x.accumulate_grad(&dx);
                    }
                }
            });
        }
        Ok(out)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, x: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::BadShape {
                op: "softmax",
                expected: format!("axis < {}", shape.len()),
                got: shape,
            });
        }
        let n = shape[axis];
        // Stride walk: iterate every 1-D lane along `axis`.
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let xd = x.data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for t in 0..n {
                    mx = mx.max(xd[base + t * inner]);
                }
                let mut sum = 0.0;
                for t in 0..n {
                    let e = (xd[base + t * inner] - mx).exp();
                    out[base + t * inner] = e;
                    sum += e;
                }
                for t in 0..n {
                    out[base + t * inner] /= sum;
                }
            }
        }
        drop(xd);
        let track = self.track(&[x]);
        let out = Tensor::from_parts(out, x.shape().to_vec(), track);
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    let od = o.data();
                    let mut dx = vec![0.0; od.len()];
                    for ot in 0..outer {
                        for i in 0..inner {
                            let base = ot * n * inner + i;
                            let mut dot = 0.0;
                            for t in 0..n {
                                let idx = base + t * inner;
                                dot += g[idx] * od[idx];
                            }
                            for t in 0..n {
                                let idx = base + t * inner;
                                dx[idx] = od[idx] * (g[idx] - dot);
                            }
                        }
                    }
                    drop(od);
                    x.accumulate_grad(&dx);
                }
            });
        }
        Ok(out)
    }

    // ── structural ops ───────────────────────────────────────────────

    /// Same data, new shape. No copy of semantics: row-major order is kept.
    pub fn reshape(&self, x: &Tensor, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != x.numel() {
            return Err(TensorError::BadShape {
                op: "reshape",
                expected: format!("{} elements", x.numel()),
                got: shape,
            });
        }
        let track = self.track(&[x]);
        let out = Tensor::from_parts(x.to_vec(), shape, track);
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    x.accumulate_grad(&g);
                }
            });
        }
        Ok(out)
    }

    /// Rows start..start+len of a 2-D tensor.
    pub fn slice_rows(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let (r, c) = x.dims2("slice_rows")?;
        if start + len > r {
            return Err(TensorError::BadShape {
                op: "slice_rows",
                expected: format!("row range within {r}"),
                got: vec![start, len],
            });
        }
        let out = x.data()[start * c..(start + len) * c].to_vec();
        let track = self.track(&[x]);
        let out = Tensor::from_parts(out, vec![len, c], track);
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    let mut dx = vec![0.0; r * c];
                    dx[start * c..(start + len) * c].copy_from_slice(&g);
                    x.accumulate_grad(&dx);
                }
            });
        }
        Ok(out)
    }

    /// Columns start..start+len of a 2-D tensor.
    pub fn slice_cols(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let (r, c) = x.dims2("slice_cols")?;
        if start + len > c {
            return Err(TensorError::BadShape {
                op: "slice_cols",
                expected: format!("column range within {c}"),
                got: vec![start, len],
            });
        }
        let xd = x.data();
        let mut out = vec![0.0; r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len].copy_from_slice(&xd[i * c + start..i * c + start + len]);
        }
        drop(xd);
        let track = self.track(&[x]);
        let out = Tensor::from_parts(out, vec![r, len], track);
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        dx[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    x.accumulate_grad(&dx);
                }
            });
        }
        Ok(out)
    }

    /// Stack 2-D tensors with equal column counts along the row axis.
    pub fn concat_rows(&self, parts: &[Tensor]) -> Result<Tensor, TensorError> {
        let first = parts.first().ok_or(TensorError::BadShape {
            op: "concat_rows",
            expected: "at least one part".into(),
            got: vec![],
        })?;
        let (_, c) = first.dims2("concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (pr, pc) = p.dims2("concat_rows")?;
            if pc != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            rows += pr;
            out.extend_from_slice(&p.data());
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let track = self.track(&refs);
        let out = Tensor::from_parts(out, vec![rows, c], track);
        if track {
            let parts: Vec<Tensor> = parts.to_vec();
            let o = out.clone();
            self.record(move || {
                if let Some(g) = o.grad() {
                    let mut offset = 0;
                    for p in &parts {
                        let n = p.numel();
                        if p.requires_grad() {
                            p.accumulate_grad(&g[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
            });
        }
        Ok(out)
    }

    /// Stack 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(&self, parts: &[Tensor]) -> Result<Tensor, TensorError> {
        let first = parts.first().ok_or(TensorError::BadShape {
            op: "concat_cols",
            expected: "at least one part".into(),
            got: vec![],
        })?;
        let (r, _) = first.dims2("concat_cols")?;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| p.dims2("concat_cols").map(|(pr, pc)| {
                debug_assert_eq!(pr, r);
                pc
            }))
            .collect::<Result<_, _>>()?;
        for p in parts {
            let (pr, _) = p.dims2("concat_cols")?;
            if pr != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut col = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let pd = p.data();
            for i in 0..r {
                out[i * total + col..i * total + col + w]
                    .copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            col += w;
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let track = self.track(&refs);
        let out = Tensor::from_parts(out, vec![r, total], track);
        if track {
            let parts: Vec<Tensor> = parts.to_vec();
            let o = out.clone();
            self.record(move || {
                if let Some(g) = o.grad() {
                    let mut col = 0;
                    for (p, w) in parts.iter().zip(&widths) {
                        if p.requires_grad() {
                            let mut dp = vec![0.0; r * w];
                            for i in 0..r {
                                dp[i * w..(i + 1) * w]
                                    .copy_from_slice(&g[i * total + col..i * total + col + w]);
                            }
                            p.accumulate_grad(&dp);
                        }
                        col += w;
                    }
                }
            });
        }
        Ok(out)
    }

    /// Reverse the row order of a 2-D tensor (time reversal for the
    /// backward direction of recurrent layers).
    pub fn reverse_rows(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let (r, c) = x.dims2("reverse_rows")?;
        let xd = x.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            out[i * c..(i + 1) * c].copy_from_slice(&xd[(r - 1 - i) * c..(r - i) * c]);
        }
        drop(xd);
        let track = self.track(&[x]);
        let out = Tensor::from_parts(out, vec![r, c], track);
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        dx[i * c..(i + 1) * c].copy_from_slice(&g[(r - 1 - i) * c..(r - i) * c]);
                    }
                    x.accumulate_grad(&dx);
                }
            });
        }
        Ok(out)
    }

    /// Rearrange a conv feature map [C, H, W] into a per-row feature
    /// sequence [H, C·W]: row h holds all channels' width slices at h.
    pub fn map_to_sequence(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let (ch, h, w) = x.dims3("map_to_sequence")?;
        let xd = x.data();
        let mut out = vec![0.0; ch * h * w];
        for c in 0..ch {
            for t in 0..h {
                let src = &xd[(c * h + t) * w..(c * h + t + 1) * w];
                out[t * ch * w + c * w..t * ch * w + (c + 1) * w].copy_from_slice(src);
            }
        }
        drop(xd);
        let track = self.track(&[x]);
        let out = Tensor::from_parts(out, vec![h, ch * w], track);
        if track {
            let (x, o) = (x.clone(), out.clone());
            self.record(move || {
                if let Some(g) = o.grad() {
                    let mut dx = vec![0.0; ch * h * w];
                    for c in 0..ch {
                        for t in 0..h {
                            let dst = &mut dx[(c * h + t) * w..(c * h + t + 1) * w];
                            dst.copy_from_slice(
                                &g[t * ch * w + c * w..t * ch * w + (c + 1) * w],
                            );
                        }
                    }
                    x.accumulate_grad(&dx);
                }
            });
        }
        Ok(out)
    }

    // ── convolution ──────────────────────────────────────────────────

    /// 2-D convolution over a [C_in, H, W] input with [C_out, C_in, kh, kw]
    /// kernels, zero padding and floor output sizing:
    /// H' = (H + 2·ph − kh)/sh + 1.
    pub fn conv2d(
        &self,
        x: &Tensor,
        kernels: &Tensor,
        bias: Option<&Tensor>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Tensor, TensorError> {
        let (c_in, h, w) = x.dims3("conv2d")?;
        let kshape = kernels.shape().to_vec();
        let [c_out, kc, kh, kw] = match kshape[..] {
            [a, b, c, d] => [a, b, c, d],
            _ => {
                return Err(TensorError::BadShape {
                    op: "conv2d",
                    expected: "4-D kernels".into(),
                    got: kshape,
                })
            }
        };
        if kc != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: kernels.shape().to_vec(),
            });
        }
        let (sh, sw) = stride;
        let (ph, pw) = pad;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(TensorError::KernelTooLarge {
                op: "conv2d",
                kernel: vec![kh, kw],
                input: vec![h + 2 * ph, w + 2 * pw],
            });
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    lhs: vec![c_out],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        let patch_len = c_in * kh * kw;

        // im2col: one row per output position.
        let patches = im2col(&x.data(), c_in, h, w, kh, kw, sh, sw, ph, pw, oh, ow);
        // out_mat[c_out, oh*ow] = kernels_mat · patchesᵀ
        let mut out_mat = vec![0.0; c_out * oh * ow];
        matmul_nt_raw(&kernels.data(), &patches, &mut out_mat, c_out, patch_len, oh * ow);
        if let Some(b) = bias {
            let bd = b.data();
            for c in 0..c_out {
                for p in &mut out_mat[c * oh * ow..(c + 1) * oh * ow] {
                    *p += bd[c];
                }
            }
        }

        let inputs: Vec<&Tensor> = match bias {
            Some(b) => vec![x, kernels, b],
            None => vec![x, kernels],
        };
        let track = self.track(&inputs);
        let out = Tensor::from_parts(out_mat, vec![c_out, oh, ow], track);
        if track {
            let x = x.clone();
            let kernels = kernels.clone();
            let bias = bias.cloned();
            let o = out.clone();
            self.record(move || {
                if let Some(g) = o.grad() {
                    if let Some(b) = &bias {
                        if b.requires_grad() {
                            let mut db = vec![0.0; c_out];
                            for c in 0..c_out {
                                db[c] = g[c * oh * ow..(c + 1) * oh * ow].iter().sum();
                            }
                            b.accumulate_grad(&db);
                        }
                    }
                    if kernels.requires_grad() {
                        // dK = dOut_mat · patches
                        let mut dk = vec![0.0; c_out * patch_len];
                        matmul_raw(&g, &patches, &mut dk, c_out, oh * ow, patch_len);
                        kernels.accumulate_grad(&dk);
                    }
                    if x.requires_grad() {
                        // dPatches = dOut_matᵀ · kernels_mat, scattered back.
                        let mut dpatches = vec![0.0; oh * ow * patch_len];
                        matmul_tn_raw(&g, &kernels.data(), &mut dpatches, c_out, oh * ow, patch_len);
                        let dx =
                            col2im(&dpatches, c_in, h, w, kh, kw, sh, sw, ph, pw, oh, ow);
                        x.accumulate_grad(&dx);
                    }
                }
            });
        }
        Ok(out)
    }

    /// 1-D convolution over a [C_in, L] input: the width-only special case
    /// of [`Tape::conv2d`], L' = (L + 2p − k)/s + 1.
    pub fn conv1d(
        &self,
        x: &Tensor,
        kernels: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor, TensorError> {
        let (c_in, l) = x.dims2("conv1d")?;
        let kshape = kernels.shape().to_vec();
        let [c_out, kc, k] = match kshape[..] {
            [a, b, c] => [a, b, c],
            _ => {
                return Err(TensorError::BadShape {
                    op: "conv1d",
                    expected: "3-D kernels".into(),
                    got: kshape,
                })
            }
        };
        if kc != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: x.shape().to_vec(),
                rhs: kernels.shape().to_vec(),
            });
        }
        let x3 = self.reshape(x, vec![c_in, 1, l])?;
        let k4 = self.reshape(kernels, vec![c_out, c_in, 1, k])?;
        let out = self.conv2d(&x3, &k4, bias, (1, stride), (0, pad))?;
        let (_, _, lp) = out.dims3("conv1d")?;
        self.reshape(&out, vec![c_out, lp])
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let patch_len = c_in * kh * kw;
    let mut patches = vec![0.0; oh * ow * patch_len];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut patches[(oy * ow + ox) * patch_len..(oy * ow + ox + 1) * patch_len];
            for c in 0..c_in {
                for dy in 0..kh {
                    let iy = (oy * sh + dy) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx in 0..kw {
                        let ix = (ox * sw + dx) as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        row[(c * kh + dy) * kw + dx] = x[(c * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    patches
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    dpatches: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let patch_len = c_in * kh * kw;
    let mut dx = vec![0.0; c_in * h * w];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &dpatches[(oy * ow + ox) * patch_len..(oy * ow + ox + 1) * patch_len];
            for c in 0..c_in {
                for dy in 0..kh {
                    let iy = (oy * sh + dy) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dxk in 0..kw {
                        let ix = (ox * sw + dxk) as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[(c * h + iy as usize) * w + ix as usize] +=
                            row[(c * kh + dy) * kw + dxk];
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::super::{init_normal, Tape, Tensor, TensorError};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let eye = Tensor::new(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![3, 3])
            .unwrap();
        let m = Tensor::new((1..=9).map(f64::from).collect(), vec![3, 3]).unwrap();
        let out = tape.matmul(&eye, &m).unwrap();
        assert_eq!(out.to_vec(), m.to_vec());
    }

    #[test]
    fn matmul_hand_computed() {
        let tape = Tape::new();
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).unwrap();
        let b = Tensor::new(vec![1.0, 1.0], vec![2, 1]).unwrap();
        let out = tape.matmul(&a, &b).unwrap();
        assert_eq!(out.to_vec(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        match tape.matmul(&a, &b) {
            Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let (m, k, n) = (5, 4, 6);
        let a = Tensor::new(rand_vec(&mut rng, m * k), vec![m, k]).unwrap();
        let b = Tensor::new(rand_vec(&mut rng, k * n), vec![k, n]).unwrap();
        let out = tape.matmul(&a, &b).unwrap();
        let (ad, bd) = (a.to_vec(), b.to_vec());
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..k {
                    s += ad[i * k + t] * bd[t * n + j];
                }
                assert!((out.to_vec()[i * n + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relu_values() {
        let tape = Tape::new();
        let x = Tensor::new(vec![-1.0, 0.0, 2.0], vec![3]).unwrap();
        assert_eq!(tape.relu(&x).to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = Tensor::new(vec![0.0], vec![1]).unwrap();
        assert!((tape.sigmoid(&x).item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_rejects_non_positive() {
        let tape = Tape::new();
        let x = Tensor::new(vec![1.0, 0.0], vec![2]).unwrap();
        assert!(matches!(tape.log(&x), Err(TensorError::LogDomain { .. })));
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let tape = Tape::new();
        let x = Tensor::new(vec![0.0, 0.0, 0.0], vec![3]).unwrap();
        let s = tape.softmax(&x, 0).unwrap();
        for v in s.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = rand_vec(&mut rng, 7);
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.456).collect();
        let a = tape
            .softmax(&Tensor::new(logits, vec![7]).unwrap(), 0)
            .unwrap();
        let b = tape
            .softmax(&Tensor::new(shifted, vec![7]).unwrap(), 0)
            .unwrap();
        for (x, y) in a.to_vec().iter().zip(b.to_vec()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let tape = Tape::new();
        let x = Tensor::new(vec![3.5; 8], vec![2, 4]).unwrap();
        let gain = Tensor::new(vec![1.0; 4], vec![4]).unwrap();
        let bias = Tensor::new(vec![0.0; 4], vec![4]).unwrap();
        let out = tape.layer_norm(&x, &gain, &bias, 1e-8).unwrap();
        for v in out.to_vec() {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tape = Tape::new();
        let d = 32;
        let x = Tensor::new(rand_vec(&mut rng, d), vec![1, d]).unwrap();
        let gain = Tensor::new(vec![1.0; d], vec![d]).unwrap();
        let bias = Tensor::new(vec![0.0; d], vec![d]).unwrap();
        let out = tape.layer_norm(&x, &gain, &bias, 1e-10).unwrap().to_vec();
        let mean = out.iter().sum::<f64>() / d as f64;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let tape = Tape::new();
        let x = Tensor::param(vec![1.0, -2.0, 3.0], vec![3]).unwrap();
        let loss = tape.sum(&x);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_square_gives_two_x() {
        let tape = Tape::new();
        let x = Tensor::param(vec![1.0, -2.0, 3.0], vec![3]).unwrap();
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn conv1d_delta_kernel_is_identity() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::new(rand_vec(&mut rng, 16), vec![1, 16]).unwrap();
        let k = Tensor::new(vec![1.0], vec![1, 1, 1]).unwrap();
        let out = tape.conv1d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(out.to_vec(), x.to_vec());
    }

    #[test]
    fn conv1d_length_preserving_config() {
        // k=11, s=1, p=5 keeps L=100.
        let tape = Tape::new();
        let x = Tensor::zeros(vec![2, 100]);
        let k = Tensor::zeros(vec![3, 2, 11]);
        let out = tape.conv1d(&x, &k, None, 1, 5).unwrap();
        assert_eq!(out.shape(), &[3, 100]);
    }

    #[test]
    fn conv2d_output_width_from_frequency_striding() {
        // Width 240, kernel 10, stride 5, pad 0 → 47.
        let tape = Tape::new();
        let x = Tensor::zeros(vec![1, 4, 240]);
        let k = Tensor::zeros(vec![64, 1, 11, 10]);
        let out = tape.conv2d(&x, &k, None, (1, 5), (5, 0)).unwrap();
        assert_eq!(out.shape(), &[64, 4, 47]);
    }

    #[test]
    fn conv2d_pointwise_kernel_scales() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::new(rand_vec(&mut rng, 5 * 7), vec![1, 5, 7]).unwrap();
        let k = Tensor::new(vec![2.5], vec![1, 1, 1, 1]).unwrap();
        let out = tape.conv2d(&x, &k, None, (1, 1), (0, 0)).unwrap();
        for (o, i) in out.to_vec().iter().zip(x.to_vec()) {
            assert!((o - 2.5 * i).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_kernel_larger_than_input_rejected() {
        let tape = Tape::new();
        let x = Tensor::zeros(vec![1, 4, 4]);
        let k = Tensor::zeros(vec![1, 1, 9, 9]);
        assert!(matches!(
            tape.conv2d(&x, &k, None, (1, 1), (1, 1)),
            Err(TensorError::KernelTooLarge { .. })
        ));
    }

    /// Direct six-nested-loop convolution, independent of im2col.
    fn conv2d_oracle(
        x: &[f64],
        k: &[f64],
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Vec<f64> {
        let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
        let ow = (w + 2 * pad.1 - kw) / stride.1 + 1;
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * stride.0 + dy) as isize - pad.0 as isize;
                                let ix = (ox * stride.1 + dx) as isize - pad.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[(ci * h + iy as usize) * w + ix as usize]
                                    * k[((co * c_in + ci) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tape = Tape::new();
        for _ in 0..100 {
            let c_in = rng.random_range(1..3);
            let c_out = rng.random_range(1..4);
            let h = rng.random_range(3..10);
            let w = rng.random_range(3..14);
            let kh = rng.random_range(1..=h.min(4));
            let kw = rng.random_range(1..=w.min(4));
            let stride = (rng.random_range(1..3), rng.random_range(1..3));
            let pad = (rng.random_range(0..2), rng.random_range(0..2));
            let x = Tensor::new(rand_vec(&mut rng, c_in * h * w), vec![c_in, h, w]).unwrap();
            let k = Tensor::new(
                rand_vec(&mut rng, c_out * c_in * kh * kw),
                vec![c_out, c_in, kh, kw],
            )
            .unwrap();
            let got = tape.conv2d(&x, &k, None, stride, pad).unwrap();
            let want = conv2d_oracle(
                &x.to_vec(),
                &k.to_vec(),
                c_in,
                h,
                w,
                c_out,
                kh,
                kw,
                stride,
                pad,
            );
            for (g, w) in got.to_vec().iter().zip(want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_fixed_instance_vs_oracle() {
        // random 1×8×12 input against a 2×1×3×3 kernel
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tape = Tape::new();
        let x = Tensor::new(rand_vec(&mut rng, 96), vec![1, 8, 12]).unwrap();
        let k = Tensor::new(rand_vec(&mut rng, 18), vec![2, 1, 3, 3]).unwrap();
        let got = tape.conv2d(&x, &k, None, (1, 1), (0, 0)).unwrap();
        let want = conv2d_oracle(&x.to_vec(), &k.to_vec(), 1, 8, 12, 2, 3, 3, (1, 1), (0, 0));
        for (g, w) in got.to_vec().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let tape = Tape::new();
        for _ in 0..100 {
            let c_in = rng.random_range(1..3);
            let c_out = rng.random_range(1..4);
            let l = rng.random_range(4..20);
            let k = rng.random_range(1..=l.min(5));
            let stride = rng.random_range(1..3);
            let pad = rng.random_range(0..3);
            let x = Tensor::new(rand_vec(&mut rng, c_in * l), vec![c_in, l]).unwrap();
            let ker =
                Tensor::new(rand_vec(&mut rng, c_out * c_in * k), vec![c_out, c_in, k]).unwrap();
            let got = tape.conv1d(&x, &ker, None, stride, pad).unwrap();
            // 1-D oracle
            let lp = (l + 2 * pad - k) / stride + 1;
            let (xd, kd) = (x.to_vec(), ker.to_vec());
            for co in 0..c_out {
                for o in 0..lp {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for d in 0..k {
                            let i = (o * stride + d) as isize - pad as isize;
                            if i < 0 || i >= l as isize {
                                continue;
                            }
                            acc += xd[ci * l + i as usize] * kd[(co * c_in + ci) * k + d];
                        }
                    }
                    assert!((got.to_vec()[co * lp + o] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn structural_ops_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tape = Tape::new();
        let x = Tensor::new(rand_vec(&mut rng, 12), vec![3, 4]).unwrap();
        let rev = tape.reverse_rows(&tape.reverse_rows(&x).unwrap()).unwrap();
        assert_eq!(rev.to_vec(), x.to_vec());
        let t2 = tape.transpose(&tape.transpose(&x).unwrap()).unwrap();
        assert_eq!(t2.to_vec(), x.to_vec());
        let joined = tape
            .concat_cols(&[
                tape.slice_cols(&x, 0, 2).unwrap(),
                tape.slice_cols(&x, 2, 2).unwrap(),
            ])
            .unwrap();
        assert_eq!(joined.to_vec(), x.to_vec());
        let stacked = tape
            .concat_rows(&[
                tape.slice_rows(&x, 0, 1).unwrap(),
                tape.slice_rows(&x, 1, 2).unwrap(),
            ])
            .unwrap();
        assert_eq!(stacked.to_vec(), x.to_vec());
    }

    #[test]
    fn map_to_sequence_layout() {
        // [C=2, H=2, W=3] → [2, 6]; row t = [c0 slice at t, c1 slice at t]
        let tape = Tape::new();
        let x = Tensor::new(
            vec![
                0.0, 1.0, 2.0, 3.0, 4.0, 5.0, // channel 0
                10.0, 11.0, 12.0, 13.0, 14.0, 15.0, // channel 1
            ],
            vec![2, 2, 3],
        )
        .unwrap();
        let out = tape.map_to_sequence(&x).unwrap();
        assert_eq!(out.shape(), &[2, 6]);
        assert_eq!(
            out.to_vec(),
            vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0, 3.0, 4.0, 5.0, 13.0, 14.0, 15.0]
        );
    }

    #[test]
    fn gradients_flow_through_multiple_uses() {
        // loss = sum(x·x) + sum(x) → grad = 2x + 1
        let tape = Tape::new();
        let x = Tensor::param(vec![0.5, -1.5], vec![2]).unwrap();
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.add(&tape.sum(&sq), &tape.sum(&x)).unwrap();
        tape.backward(&loss).unwrap();
        let g = x.grad().unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert!((g[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_tape_records_nothing() {
        let tape = Tape::inactive();
        let x = Tensor::param(vec![1.0, 2.0], vec![2]).unwrap();
        let _ = tape.mul(&x, &x).unwrap();
        assert_eq!(tape.num_ops(), 0);
    }

    #[test]
    fn pointwise_gradients_match_finite_differences() {
        use super::super::check::finite_diff_check;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let data = rand_vec(&mut rng, 6);
        for kind in ["tanh", "sigmoid", "exp", "relu"] {
            let x = Tensor::param(data.clone(), vec![6]).unwrap();
            let loss_fn = {
                let x = x.clone();
                move || {
                    let tape = Tape::new();
                    let y = match kind {
                        "tanh" => tape.tanh(&x),
                        "sigmoid" => tape.sigmoid(&x),
                        "exp" => tape.exp(&x),
                        _ => tape.relu(&x),
                    };
                    let sq = tape.mul(&y, &y).unwrap();
                    let loss = tape.sum(&sq);
                    (tape, loss)
                }
            };
            let report = finite_diff_check(&x, loss_fn, 6, 1e-6, 0);
            assert!(
                report.max_rel_err < 1e-7,
                "{kind}: rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn tanh_derivative_at_point() {
        // d/dx tanh at x=0.3 vs central difference
        let x = Tensor::param(vec![0.3], vec![1]).unwrap();
        let tape = Tape::new();
        let y = tape.tanh(&x);
        tape.backward(&y).unwrap();
        let got = x.grad().unwrap()[0];
        let h = 1e-6;
        let fd = ((0.3f64 + h).tanh() - (0.3f64 - h).tanh()) / (2.0 * h);
        assert!((got - fd).abs() < 1e-7);
    }
}
