//! Vector quantization.
//!
//! Two codebook roles exist in the model:
//!
//! * the prototype codebook quantizes one pooled, projected vector per
//!   sample; its codewords act as unsupervised pseudo-class anchors;
//! * one pattern codebook per scale quantizes every position of a projected
//!   feature map. In residual form the condition `[pe, ŷ]` (positional
//!   embedding followed by the sample's prototype) is subtracted before the
//!   lookup and added back afterwards; with the condition all zero this is
//!   the plain concept-agnostic quantizer.
//!
//! Nearest-codeword search is an exhaustive scan with lowest-index tie
//! breaking.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng as _;

use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::sq_dist;
use crate::{Error, Real, Result, Tensor};

/// Commitment weight of the straight-through VQ objective.
pub const COMMITMENT: f64 = 0.25;

/// `K × D` codewords with per-codeword usage counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    codewords: Tensor<T>,
    usage: Vec<u64>,
}

impl<T: Real> Codebook<T> {
    pub fn new(codewords: Tensor<T>) -> Result<Self> {
        if codewords.shape().len() != 2 || codewords.shape()[0] == 0 || codewords.shape()[1] == 0 {
            return Err(Error::Contract(format!(
                "codebook needs a non-empty [K, D] table, got {:?}",
                codewords.shape()
            )));
        }
        if !codewords.is_finite() {
            return Err(Error::Numeric("codebook codewords".into()));
        }
        let k = codewords.shape()[0];
        Ok(Codebook {
            codewords,
            usage: vec![0; k],
        })
    }

    pub fn size(&self) -> usize {
        self.codewords.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.codewords.shape()[1]
    }

    pub fn codewords(&self) -> &Tensor<T> {
        &self.codewords
    }

    pub fn codewords_mut(&mut self) -> &mut Tensor<T> {
        &mut self.codewords
    }

    pub fn usage(&self) -> &[u64] {
        &self.usage
    }

    pub fn reset_usage(&mut self) {
        self.usage.iter_mut().for_each(|u| *u = 0);
    }

    /// [`quantize_nearest`] that also counts the selected codewords.
    pub fn quantize(&mut self, v: &Tensor<T>) -> Result<QuantResult<T>> {
        let q = quantize_nearest(&self.codewords, v)?;
        record_usage(&mut self.usage, &q.indices);
        Ok(q)
    }
}

pub(crate) fn record_usage(usage: &mut [u64], indices: &[usize]) {
    for &i in indices {
        usage[i] += 1;
    }
}

/// Per-vector assignment of a quantization call.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantResult<T> {
    pub indices: Vec<usize>,
    /// Same shape as the input; every row is a copy of its codeword.
    pub quantized: Tensor<T>,
    pub sq_distance: Vec<T>,
}

/// Index and squared distance of the nearest codeword to `v`.
///
/// The scan stops accumulating a candidate once its partial sum reaches the
/// best distance so far. Partial sums only grow, so this selects exactly the
/// codeword a full scan would, including lowest-index ties.
#[inline]
pub fn nearest<T: Real>(codewords: &[T], dim: usize, v: &[T]) -> (usize, T) {
    let mut best = (0usize, T::infinity());
    for (k, c) in codewords.chunks_exact(dim).enumerate() {
        let mut acc = T::zero();
        let mut pruned = false;
        for (&x, &y) in v.iter().zip(c) {
            let d = x - y;
            acc += d * d;
            if acc >= best.1 {
                pruned = true;
                break;
            }
        }
        if !pruned && acc < best.1 {
            best = (k, acc);
        }
    }
    if best.1.is_infinite() {
        // every distance overflowed; fall back to the first codeword
        best = (0, sq_dist(v, &codewords[..dim]));
    }
    best
}

/// Nearest codeword for every row of `v` (`[..., D]`).
pub fn quantize_nearest<T: Real>(codewords: &Tensor<T>, v: &Tensor<T>) -> Result<QuantResult<T>> {
    if codewords.shape().len() != 2 || codewords.shape()[0] == 0 {
        return Err(Error::Contract(format!(
            "codebook must be a non-empty [K, D] table, got {:?}",
            codewords.shape()
        )));
    }
    let d = codewords.shape()[1];
    if v.shape().is_empty() || v.cols() != d {
        return Err(Error::Contract(format!(
            "quantize: input trailing dimension {} does not match codeword dimension {}",
            v.cols(),
            d
        )));
    }
    let rows = v.rows();
    let mut indices = Vec::with_capacity(rows);
    let mut dist = Vec::with_capacity(rows);
    let mut out = Vec::with_capacity(v.len());
    for r in 0..rows {
        let (k, dk) = nearest(codewords.data(), d, v.row(r));
        indices.push(k);
        dist.push(dk);
        out.extend_from_slice(codewords.row(k));
    }
    Ok(QuantResult {
        indices,
        quantized: Tensor::new(v.shape().to_vec(), out)?,
        sq_distance: dist,
    })
}

/// Fixed sinusoidal positional embedding `[D_PE, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalTable<T> {
    embedding: Tensor<T>,
}

impl<T: Real> PositionalTable<T> {
    /// Wraps an arbitrary `[D_PE, H, W]` table.
    pub fn from_embedding(embedding: Tensor<T>) -> Result<Self> {
        embedding.chw()?;
        Ok(PositionalTable { embedding })
    }

    pub fn embedding(&self) -> &Tensor<T> {
        &self.embedding
    }

    pub fn channels(&self) -> usize {
        self.embedding.shape()[0]
    }

    /// Row layout `[H*W, D_PE]`.
    pub fn rows(&self) -> Tensor<T> {
        self.embedding.chw_to_rows().expect("table is [D, H, W]")
    }
}

/// The first `D_PE/2` channels encode the row index, the rest the column
/// index. Within each half, channel `c` uses frequency
/// `10000^(-2⌊c/2⌋/half)`, sine for even `c` and cosine for odd `c`.
pub fn positional_embedding<T: Real>(h: usize, w: usize, d_pe: usize) -> Result<PositionalTable<T>> {
    if d_pe % 2 != 0 {
        return Err(Error::Contract(format!(
            "positional embedding dimension must be even, got {d_pe}"
        )));
    }
    let half = d_pe / 2;
    let mut data = vec![T::zero(); d_pe * h * w];
    for c in 0..d_pe {
        let (axis_c, use_row) = if c < half { (c, true) } else { (c - half, false) };
        let freq = 10000f64.powf(-2.0 * (axis_c / 2) as f64 / half as f64);
        for m in 0..h {
            for n in 0..w {
                let pos = if use_row { m } else { n } as f64;
                let a = pos * freq;
                let v = if axis_c % 2 == 0 { Float::sin(a) } else { Float::cos(a) };
                data[(c * h + m) * w + n] = T::lit(v);
            }
        }
    }
    Ok(PositionalTable {
        embedding: Tensor::new(vec![d_pe, h, w], data)?,
    })
}

/// Condition rows `[P, D_PE + D_cp]`: positional embedding (or zeros) then
/// the prototype broadcast to every position.
pub fn condition_rows<T: Real>(pe_rows: &Tensor<T>, prototype: &[T]) -> Tensor<T> {
    let (p, dpe) = (pe_rows.rows(), pe_rows.cols());
    let d = dpe + prototype.len();
    let mut out = Vec::with_capacity(p * d);
    for r in 0..p {
        out.extend_from_slice(&pe_rows.data()[r * dpe..(r + 1) * dpe]);
        out.extend_from_slice(prototype);
    }
    Tensor::new(vec![p, d], out).expect("shape")
}

/// Pooled, projected and quantized summary of the coarsest map `h_L`
/// (`[D, H, W]`): returns `(y, ŷ, index)`.
pub fn cpc_encode<T: Real>(
    h_l: &Tensor<T>,
    project: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    cb: &mut Codebook<T>,
) -> Result<(Tensor<T>, Tensor<T>, usize)> {
    let pooled = crate::tensor::avg_pool_spatial(h_l)?;
    let y = project(&pooled)?;
    let q = cb.quantize(&y)?;
    let yq = q.quantized.reshape(y.shape())?;
    Ok((y, yq, q.indices[0]))
}

/// Residual pattern quantization of a projected map `h′` (`[D_csp, H, W]`):
/// at each position, quantize `h′ − [pe, ŷ]` and add `[pe, ŷ]` back.
pub fn cspc_quantize<T: Real>(
    h_proj: &Tensor<T>,
    prototype: &Tensor<T>,
    pe: &PositionalTable<T>,
    cb: &mut Codebook<T>,
) -> Result<Tensor<T>> {
    let (d_csp, h, w) = h_proj.chw()?;
    let d_cp = prototype.len();
    let d_pe = pe.channels();
    if d_csp != d_cp + d_pe || cb.dim() != d_csp {
        return Err(Error::Contract(format!(
            "channel alignment requires D_csp = D_cp + D_PE and a D_csp codebook: \
             D_cp={d_cp}, D_PE={d_pe}, D_csp={d_csp}, codebook D={}",
            cb.dim()
        )));
    }
    let (_, ph, pw) = pe.embedding().chw()?;
    if (ph, pw) != (h, w) {
        return Err(Error::dim("cspc_quantize positional table", &[ph, pw], &[h, w]));
    }
    let cond = condition_rows(&pe.rows(), prototype.data());
    let rows = h_proj.chw_to_rows()?;
    let out = residual_quantize_rows(&rows, &cond, cb)?;
    out.rows_to_chw(h, w)
}

/// Plain per-position nearest-codeword replacement of `[D, H, W]`.
pub fn capc_quantize<T: Real>(h_proj: &Tensor<T>, cb: &mut Codebook<T>) -> Result<Tensor<T>> {
    let (_, h, w) = h_proj.chw()?;
    let rows = h_proj.chw_to_rows()?;
    cb.quantize(&rows)?.quantized.rows_to_chw(h, w)
}

fn residual_quantize_rows<T: Real>(
    rows: &Tensor<T>,
    cond: &Tensor<T>,
    cb: &mut Codebook<T>,
) -> Result<Tensor<T>> {
    let residual: Vec<T> = rows.data().iter().zip(cond.data()).map(|(&a, &c)| a - c).collect();
    let residual = Tensor::new(rows.shape().to_vec(), residual)?;
    let q = cb.quantize(&residual)?;
    let out = q
        .quantized
        .data()
        .iter()
        .zip(cond.data())
        .map(|(&a, &c)| a + c)
        .collect();
    Tensor::new(rows.shape().to_vec(), out)
}

/// Straight-through VQ objective between a continuous `v` and its quantized
/// value `q`:
///
/// `mse(sg(v), q) + λ·(mse(v, sg(q)) − sg(mse(v, sg(q))))`
///
/// The bracket is exactly zero in value, so the returned scalar equals the
/// plain mean squared error, while gradients are the codebook term plus `λ`
/// times the commitment term.
pub fn vq_loss<T: Real>(tape: &mut Tape<T>, v: Var, q: Var, commitment: T) -> Result<Var> {
    if tape.shape(v) != tape.shape(q) {
        return Err(Error::dim("vq_loss", tape.shape(v), tape.shape(q)));
    }
    let v_sg = tape.detach(v);
    let q_sg = tape.detach(q);
    let codebook_term = tape.mse(v_sg, q)?;
    let commit = tape.mse(v, q_sg)?;
    let commit_sg = tape.detach(commit);
    let zero = tape.sub(commit, commit_sg)?;
    let weighted = tape.scale(zero, commitment);
    tape.add(codebook_term, weighted)
}

/// Mean squared error of two equal-shaped tensors.
pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::dim("mse", a.shape(), b.shape()));
    }
    let sq: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).collect();
    Ok(crate::tensor::pairwise_sum(&sq) / T::lit(a.len().max(1) as f64))
}

/// k-means++ seeding: first codeword uniform, each next one drawn with
/// probability proportional to the squared distance to the nearest codeword
/// already chosen.
pub fn codebook_init<T: Real>(samples: &Tensor<T>, k: usize, rng: &mut Rng) -> Result<Codebook<T>> {
    if samples.shape().len() != 2 {
        return Err(Error::Contract(format!(
            "codebook_init needs [N, D] samples, got {:?}",
            samples.shape()
        )));
    }
    let (n, d) = (samples.shape()[0], samples.shape()[1]);
    if k == 0 || n < k {
        return Err(Error::Contract(format!(
            "codebook_init needs at least K={k} samples, got N={n}"
        )));
    }
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(samples.row(i), samples.row(chosen[0])).as_f64())
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // rounding can exhaust the loop; take the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            // all remaining samples coincide with chosen ones
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, di) in d2.iter_mut().enumerate() {
            let dn = sq_dist(samples.row(i), samples.row(next)).as_f64();
            if dn < *di {
                *di = dn;
            }
        }
    }
    let mut data = Vec::with_capacity(k * d);
    for &i in &chosen {
        data.extend_from_slice(samples.row(i));
    }
    Codebook::new(Tensor::new(vec![k, d], data)?)
}

/// Replace codewords used fewer than `threshold` times since the last reset
/// by rows of `recent` drawn without replacement (with replacement only when
/// more codes are dead than rows exist), then reset all counters. Returns the
/// replaced indices.
pub fn revive_dead_codes<T: Real>(
    codewords: &mut Tensor<T>,
    usage: &mut [u64],
    recent: &Tensor<T>,
    threshold: u64,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let d = codewords.cols();
    if recent.shape().len() != 2 || recent.cols() != d || recent.rows() == 0 {
        return Err(Error::Contract(format!(
            "revival needs [N >= 1, {d}] recent inputs, got {:?}",
            recent.shape()
        )));
    }
    let revived: Vec<usize> = (0..usage.len()).filter(|&k| usage[k] < threshold).collect();
    // distinct rows where possible so two revived codes never coincide
    let n = recent.rows();
    let rows: Vec<usize> = if revived.len() <= n {
        rand::seq::index::sample(rng, n, revived.len()).into_vec()
    } else {
        revived.iter().map(|_| rng.gen_range(0..n)).collect()
    };
    for (&k, &r) in revived.iter().zip(&rows) {
        codewords.row_mut(k).copy_from_slice(recent.row(r));
    }
    usage.iter_mut().for_each(|u| *u = 0);
    Ok(revived)
}

impl<T: Real> Codebook<T> {
    /// [`revive_dead_codes`] on this codebook's own counters.
    pub fn revive(&mut self, recent: &Tensor<T>, threshold: u64, rng: &mut Rng) -> Result<Vec<usize>> {
        revive_dead_codes(&mut self.codewords, &mut self.usage, recent, threshold, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn book(rows: &[&[f32]]) -> Codebook<f32> {
        Codebook::new(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn exact_match_and_tie() {
        let mut cb = book(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let q = cb.quantize(&Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!((q.indices[0], q.sq_distance[0]), (1, 0.0));
        let q = cb.quantize(&Tensor::from_vec(vec![0.5, 0.5])).unwrap();
        assert_eq!((q.indices[0], q.sq_distance[0]), (0, 0.5));
        assert_eq!(cb.usage(), &[1, 1]);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let cb = book(&[&[0.0, 0.0]]);
        let r = quantize_nearest(cb.codewords(), &Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn single_codeword_collapse_and_identity() {
        let mut r = rng::stream(1, 0);
        let h = Tensor::<f32>::new(vec![3, 2, 2], (0..12).map(|_| rng::normal(&mut r)).collect()).unwrap();
        let mut one = book(&[&[0.5, -0.5, 2.0]]);
        let out = capc_quantize(&h, &mut one).unwrap();
        for row in 0..4 {
            assert_eq!(out.chw_to_rows().unwrap().row(row), &[0.5, -0.5, 2.0]);
        }
        let rows = h.chw_to_rows().unwrap();
        let mut all = Codebook::new(rows.clone()).unwrap();
        assert_eq!(capc_quantize(&h, &mut all).unwrap(), h);
    }

    #[test]
    fn residual_reconstruction_identity() {
        let mut r = rng::stream(2, 0);
        let (d_cp, d_pe, h, w) = (3, 2, 2, 3);
        let hp = Tensor::<f32>::new(
            vec![d_cp + d_pe, h, w],
            (0..(d_cp + d_pe) * h * w).map(|_| rng::normal(&mut r)).collect(),
        )
        .unwrap();
        let y = Tensor::from_vec((0..d_cp).map(|_| rng::normal(&mut r)).collect());
        let pe = positional_embedding(h, w, d_pe).unwrap();
        let cond = condition_rows(&pe.rows(), y.data());
        let rows = hp.chw_to_rows().unwrap();
        let resid: Vec<f32> = rows.data().iter().zip(cond.data()).map(|(a, c)| a - c).collect();
        let mut cb = Codebook::new(Tensor::new(vec![h * w, d_cp + d_pe], resid).unwrap()).unwrap();
        let out = cspc_quantize(&hp, &y, &pe, &mut cb).unwrap();
        for (a, b) in out.data().iter().zip(hp.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_condition_matches_plain_quantizer_bitwise() {
        let mut r = rng::stream(3, 0);
        let (d_cp, d_pe, h, w) = (4, 2, 3, 3);
        let hp = Tensor::<f32>::new(
            vec![d_cp + d_pe, h, w],
            (0..(d_cp + d_pe) * h * w).map(|_| rng::normal(&mut r)).collect(),
        )
        .unwrap();
        let cw = Tensor::new(vec![5, d_cp + d_pe], (0..5 * 6).map(|_| rng::normal(&mut r)).collect()).unwrap();
        let zero_pe = PositionalTable {
            embedding: Tensor::zeros(&[d_pe, h, w]),
        };
        let y = Tensor::zeros(&[d_cp]);
        let a = cspc_quantize(&hp, &y, &zero_pe, &mut Codebook::new(cw.clone()).unwrap()).unwrap();
        let b = capc_quantize(&hp, &mut Codebook::new(cw).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn channel_alignment_error_names_dims() {
        let hp = Tensor::<f32>::zeros(&[5, 2, 2]);
        let y = Tensor::zeros(&[3]);
        let pe = positional_embedding(2, 2, 4).unwrap();
        let mut cb = Codebook::new(Tensor::zeros(&[2, 5])).unwrap();
        match cspc_quantize(&hp, &y, &pe, &mut cb) {
            Err(Error::Contract(m)) => {
                assert!(m.contains("D_cp=3") && m.contains("D_PE=4") && m.contains("D_csp=5"), "{m}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vq_loss_reports_plain_mse() {
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(Tensor::from_vec(vec![1.0, 1.0]));
        let q = tape.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let l = vq_loss(&mut tape, v, q, 0.25).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
        let l0 = vq_loss(&mut tape, v, v, 0.25).unwrap();
        assert_eq!(tape.value(l0).item(), 0.0);
    }

    #[test]
    fn vq_loss_gradients_split_codebook_and_commitment() {
        let mut tape = Tape::<f64>::new();
        let v = tape.param(0, Tensor::from_vec(vec![1.0, 3.0]));
        let q = tape.param(1, Tensor::from_vec(vec![0.0, 1.0]));
        let l = vq_loss(&mut tape, v, q, 0.25).unwrap();
        let g = tape.backward(l).unwrap();
        // d/dq mse = (q - v), d/dv = 0.25 (v - q), with mean over 2 elements
        assert_eq!(g.get(1).unwrap().data(), &[-1.0, -2.0]);
        assert_eq!(g.get(0).unwrap().data(), &[0.25, 0.5]);
    }

    #[test]
    fn init_with_n_equal_k_is_a_permutation() {
        let s = Tensor::<f32>::from_rows(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, 5.0], &[6.0, 7.0]]).unwrap();
        let cb = codebook_init(&s, 4, &mut rng::stream(4, 0)).unwrap();
        let mut rows: Vec<Vec<f32>> = (0..4).map(|i| cb.codewords().row(i).to_vec()).collect();
        rows.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        let mut want: Vec<Vec<f32>> = (0..4).map(|i| s.row(i).to_vec()).collect();
        want.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(rows, want);
        assert!(codebook_init(&s, 5, &mut rng::stream(4, 0)).is_err());
    }

    #[test]
    fn init_deterministic_given_seed() {
        let mut r = rng::stream(5, 0);
        let s = Tensor::<f32>::new(vec![50, 3], (0..150).map(|_| rng::normal(&mut r)).collect()).unwrap();
        let a = codebook_init(&s, 8, &mut rng::stream(9, 1)).unwrap();
        let b = codebook_init(&s, 8, &mut rng::stream(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn revival_rules() {
        let mut cb = book(&[&[0.0, 0.0], &[1.0, 1.0], &[9.0, 9.0]]);
        let recent = Tensor::from_rows(&[&[5.0, 5.0], &[6.0, 6.0]]).unwrap();
        cb.quantize(&Tensor::from_rows(&[&[0.1, 0.0], &[1.0, 0.9], &[8.0, 8.0]]).unwrap())
            .unwrap();
        let before = cb.clone();
        assert!(cb.revive(&recent, 1, &mut rng::stream(0, 0)).unwrap().is_empty());
        assert_eq!(cb.codewords(), before.codewords());
        assert_eq!(cb.usage(), &[0, 0, 0]);

        cb.quantize(&Tensor::from_rows(&[&[0.1, 0.0], &[1.0, 0.9]]).unwrap()).unwrap();
        let revived = cb.revive(&recent, 1, &mut rng::stream(0, 0)).unwrap();
        assert_eq!(revived, vec![2]);
        let row = cb.codewords().row(2).to_vec();
        assert!(row == [5.0, 5.0] || row == [6.0, 6.0]);
    }

    #[test]
    fn positional_embedding_is_bounded_and_even_only() {
        assert!(positional_embedding::<f32>(2, 2, 3).is_err());
        let pe = positional_embedding::<f32>(4, 5, 8).unwrap();
        assert!(pe.embedding().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let rows = pe.rows();
        // position (1, 2): row index 1, column index 2
        assert_eq!(rows.row(1 * 5 + 2)[0], (1.0f64).sin() as f32);
        assert_eq!(rows.row(1 * 5 + 2)[4], (2.0f64).sin() as f32);
    }
}
