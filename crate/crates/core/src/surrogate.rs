//! Per-bin centroid surrogate: batch centroids, refill of missing bins from
//! the previous epoch, the epoch-end momentum blend, and the
//! surrogate-anchored contrastive loss.

use std::collections::BTreeMap;

use crate::diff::{norm, Tape, Tensor, Var, EPS_NORM};
use crate::error::{Error, Result};

/// Complete ordered set of unit centroids, one per training bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    /// Bin label values (centers), strictly increasing.
    pub bins: Vec<f64>,
    /// `K x d`, row `k` belongs to `bins[k]`.
    pub centroids: Tensor,
    pub epoch: usize,
}

impl Surrogate {
    pub fn new(bins: Vec<f64>, centroids: Tensor, epoch: usize) -> Result<Self> {
        if bins.len() != centroids.rows() {
            return Err(Error::shape(format!("{} bins for {} centroids", bins.len(), centroids.rows())));
        }
        if bins.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("surrogate bins must be strictly increasing"));
        }
        Ok(Surrogate { bins, centroids, epoch })
    }

    pub fn k(&self) -> usize {
        self.bins.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }
}

/// Centroids of the bins present in one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchCentroids {
    /// Present bin indices (into the surrogate), ascending.
    pub bins: Vec<usize>,
    /// `P x d`, unit rows aligned with `bins`.
    pub centroids: Tensor,
    pub counts: Vec<usize>,
}

/// Groups batch rows by bin. Returns present bins ascending with their member rows.
fn group(y_bins: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &b) in y_bins.iter().enumerate() {
        g.entry(b).or_default().push(row);
    }
    g
}

fn normalize_row(v: &mut [f64], bin: usize) -> Result<()> {
    let n = norm(v);
    if !(n >= EPS_NORM) {
        return Err(Error::Degenerate { row: bin, norm: n });
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

pub fn batch_centroids(z: &Tensor, y_bins: &[usize]) -> Result<BatchCentroids> {
    if y_bins.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if z.rows() != y_bins.len() {
        return Err(Error::shape(format!("{} representations for {} labels", z.rows(), y_bins.len())));
    }
    let d = z.cols();
    let groups = group(y_bins);
    let mut data = Vec::with_capacity(groups.len() * d);
    let mut counts = Vec::with_capacity(groups.len());
    for (&bin, rows) in &groups {
        let mut c = vec![0.0; d];
        for &r in rows {
            c.iter_mut().zip(z.row(r)).for_each(|(a, x)| *a += x);
        }
        c.iter_mut().for_each(|a| *a /= rows.len() as f64);
        normalize_row(&mut c, bin)?;
        data.extend(c);
        counts.push(rows.len());
    }
    Ok(BatchCentroids {
        bins: groups.keys().copied().collect(),
        centroids: Tensor::matrix(counts.len(), d, data)?,
        counts,
    })
}

/// Batch centroids on the tape: `normalize(A·Z)` with `A` the constant
/// per-bin averaging matrix. Returns the `P x d` node and the present bins.
pub fn batch_centroids_on(tape: &mut Tape, z: Var, y_bins: &[usize]) -> Result<(Var, Vec<usize>)> {
    let (m, _) = tape.dims(z);
    if y_bins.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if m != y_bins.len() {
        return Err(Error::shape(format!("{m} representations for {} labels", y_bins.len())));
    }
    let groups = group(y_bins);
    let p = groups.len();
    let mut avg = vec![0.0; p * m];
    for (i, rows) in groups.values().enumerate() {
        let w = 1.0 / rows.len() as f64;
        for &r in rows {
            avg[i * m + r] = w;
        }
    }
    let a = tape.constant(&Tensor::matrix(p, m, avg)?);
    let mean = tape.matmul(a, z)?;
    let c = tape.l2_normalize(mean)?;
    Ok((c, groups.into_keys().collect()))
}

fn check_refill(present: &[usize], prev: &Surrogate) -> Result<()> {
    if let Some(&b) = present.iter().find(|&&b| b >= prev.k()) {
        return Err(Error::invalid(format!(
            "batch bin {b} is outside the {}-bin surrogate",
            prev.k()
        )));
    }
    if prev.centroids.rows() != prev.k() {
        return Err(Error::invalid("previous surrogate is incomplete"));
    }
    Ok(())
}

/// Present bins take the batch centroid, the rest keep the previous one.
pub fn refill(batch: &BatchCentroids, prev: &Surrogate) -> Result<Surrogate> {
    check_refill(&batch.bins, prev)?;
    if batch.centroids.cols() != prev.dim() {
        return Err(Error::shape("batch and surrogate dimensions differ"));
    }
    let mut c = prev.centroids.clone();
    for (i, &b) in batch.bins.iter().enumerate() {
        c.row_mut(b).copy_from_slice(batch.centroids.row(i));
    }
    Surrogate::new(prev.bins.clone(), c, prev.epoch)
}

/// Tape form of [`refill`]: `S = E·C + S_prev|missing`, where `E` scatters
/// the `P` batch rows into their slots. Rows copied from `prev` are constants.
pub fn refill_on(tape: &mut Tape, batch: Var, present: &[usize], prev: &Surrogate) -> Result<Var> {
    check_refill(present, prev)?;
    let (p, d) = tape.dims(batch);
    if p != present.len() || d != prev.dim() {
        return Err(Error::shape(format!(
            "batch centroids {p}x{d} vs {} present bins of dim {}",
            present.len(),
            prev.dim()
        )));
    }
    let k = prev.k();
    let mut scatter = vec![0.0; k * p];
    let mut stale = prev.centroids.clone();
    for (i, &b) in present.iter().enumerate() {
        scatter[b * p + i] = 1.0;
        stale.row_mut(b).iter_mut().for_each(|x| *x = 0.0);
    }
    let e = tape.constant(&Tensor::matrix(k, p, scatter)?);
    let fresh = tape.matmul(e, batch)?;
    let kept = tape.constant(&stale);
    tape.add(fresh, kept)
}

/// `normalize(α·S^e + (1−α)·Ŝ^e)` per bin.
pub fn momentum_update(current: &Surrogate, running: &Surrogate, alpha: f64) -> Result<Surrogate> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("momentum must lie in [0, 1], got {alpha}")));
    }
    if current.bins != running.bins || current.centroids.dims() != running.centroids.dims() {
        return Err(Error::invalid("momentum update across different bin sets"));
    }
    let mut out = current.centroids.clone();
    for k in 0..current.k() {
        let row = out.row_mut(k);
        for (x, r) in row.iter_mut().zip(running.centroids.row(k)) {
            *x = alpha * *x + (1.0 - alpha) * r;
        }
        normalize_row(row, k)?;
    }
    Surrogate::new(current.bins.clone(), out, current.epoch + 1)
}

/// Running per-bin sums of batch centroids across one epoch.
#[derive(Clone, Debug)]
pub struct RunningMean {
    sums: Tensor,
    counts: Vec<usize>,
}

impl RunningMean {
    pub fn new(k: usize, d: usize) -> Self {
        RunningMean { sums: Tensor::zeros(&[k, d]), counts: vec![0; k] }
    }

    pub fn update(&mut self, batch: &BatchCentroids) -> Result<()> {
        if batch.centroids.cols() != self.sums.cols() {
            return Err(Error::shape("running mean dimension mismatch"));
        }
        for (i, &b) in batch.bins.iter().enumerate() {
            if b >= self.counts.len() {
                return Err(Error::invalid(format!("bin {b} out of range")));
            }
            self.sums.row_mut(b).iter_mut().zip(batch.centroids.row(i)).for_each(|(s, c)| *s += c);
            self.counts[b] += 1;
        }
        Ok(())
    }

    pub fn seen(&self, bin: usize) -> bool {
        self.counts[bin] > 0
    }

    /// `normalize(sum / count)` per seen bin. Unseen bins inherit `current`;
    /// without a `current` every bin must have been seen.
    pub fn finalize(&self, bins: &[f64], current: Option<&Surrogate>) -> Result<Surrogate> {
        let (k, d) = self.sums.dims();
        let mut out = Tensor::zeros(&[k, d]);
        for b in 0..k {
            let row = out.row_mut(b);
            if self.counts[b] > 0 {
                let n = self.counts[b] as f64;
                row.iter_mut().zip(self.sums.row(b)).for_each(|(o, s)| *o = s / n);
                normalize_row(row, b)?;
            } else if let Some(cur) = current {
                row.copy_from_slice(cur.centroids.row(b));
            } else {
                return Err(Error::invalid(format!("bin {b} never appeared and has no previous centroid")));
            }
        }
        Surrogate::new(bins.to_vec(), out, current.map_or(0, |c| c.epoch))
    }
}

/// `−Σ_m log softmax_k(z_m·c_k / τ)[y_m]` on the tape.
pub fn contrastive_on(tape: &mut Tape, z: Var, y_bins: &[usize], surrogate: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let (m, _) = tape.dims(z);
    let (k, _) = tape.dims(surrogate);
    if y_bins.len() != m {
        return Err(Error::shape(format!("{m} representations for {} labels", y_bins.len())));
    }
    if let Some(&b) = y_bins.iter().find(|&&b| b >= k) {
        return Err(Error::invalid(format!("batch bin {b} is absent from the {k}-bin surrogate")));
    }
    let sims = tape.matmul_nt(z, surrogate)?;
    let logits = tape.scale(sims, 1.0 / tau)?;
    let lse = tape.row_logsumexp(logits)?;
    let pos = tape.pick(logits, y_bins.to_vec())?;
    let per = tape.sub(lse, pos)?;
    tape.sum(per)
}

pub fn contrastive_loss(z: &Tensor, y_bins: &[usize], s: &Surrogate, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let sv = tape.constant(&s.centroids);
    let l = contrastive_on(&mut tape, zv, y_bins, sv, tau)?;
    Ok(tape.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn centroid_cases() {
        let z = t(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8], &[0.6, 0.8]]);
        let bc = batch_centroids(&z, &[4, 4, 1, 1]).unwrap();
        assert_eq!(bc.bins, vec![1, 4]);
        assert_eq!(bc.counts, vec![2, 2]);
        assert_eq!(bc.centroids.row(0), &[0.6, 0.8]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((bc.centroids.row(1)[0] - h).abs() < 1e-15);
        assert!((bc.centroids.row(1)[1] - h).abs() < 1e-15);

        let single = batch_centroids(&z, &[0, 1, 2, 3]).unwrap();
        assert_eq!(single.centroids, z);
    }

    #[test]
    fn centroid_errors() {
        let z = t(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert!(matches!(batch_centroids(&z, &[0, 0]), Err(Error::Degenerate { .. })));
        assert!(batch_centroids(&z, &[0]).is_err());
        let empty: [usize; 0] = [];
        assert!(batch_centroids(&z, &empty).is_err());
    }

    #[test]
    fn refill_extremes() {
        let prev = Surrogate::new(vec![0.5, 1.5], t(&[&[1.0, 0.0], &[0.0, 1.0]]), 3).unwrap();
        let all = BatchCentroids { bins: vec![0, 1], centroids: t(&[&[0.6, 0.8], &[0.8, -0.6]]), counts: vec![1, 1] };
        assert_eq!(refill(&all, &prev).unwrap().centroids, all.centroids);
        let none = BatchCentroids { bins: vec![], centroids: Tensor::zeros(&[1, 2]), counts: vec![] };
        // `bins` is empty, so the placeholder row is never read.
        assert_eq!(refill(&none, &prev).unwrap().centroids, prev.centroids);
        let bad = BatchCentroids { bins: vec![2], centroids: t(&[&[1.0, 0.0]]), counts: vec![1] };
        assert!(refill(&bad, &prev).is_err());
    }

    #[test]
    fn momentum_cases() {
        let cur = Surrogate::new(vec![0.0], t(&[&[1.0, 0.0]]), 1).unwrap();
        let run = Surrogate::new(vec![0.0], t(&[&[0.0, 1.0]]), 1).unwrap();
        let keep = momentum_update(&cur, &run, 1.0).unwrap();
        assert_eq!(keep.centroids, cur.centroids);
        assert_eq!(keep.epoch, 2);
        assert_eq!(momentum_update(&cur, &run, 0.0).unwrap().centroids, run.centroids);
        let mixed = momentum_update(&cur, &run, 0.9).unwrap();
        let n = 0.82f64.sqrt();
        assert!((mixed.centroids.row(0)[0] - 0.9 / n).abs() < 1e-15);
        assert!((mixed.centroids.row(0)[1] - 0.1 / n).abs() < 1e-15);
        assert!((mixed.centroids.row(0)[0] - 0.9939).abs() < 1e-4);
        assert!((mixed.centroids.row(0)[1] - 0.1104).abs() < 1e-4);

        let anti = Surrogate::new(vec![0.0], t(&[&[-1.0, 0.0]]), 1).unwrap();
        assert!(momentum_update(&cur, &anti, 0.5).is_err());
        assert!(momentum_update(&cur, &run, 1.5).is_err());
        let other = Surrogate::new(vec![1.0], t(&[&[0.0, 1.0]]), 1).unwrap();
        assert!(momentum_update(&cur, &other, 0.5).is_err());
    }

    #[test]
    fn running_mean_cases() {
        let bins = [0.5, 1.5];
        let b1 = BatchCentroids { bins: vec![0, 1], centroids: t(&[&[1.0, 0.0], &[0.0, 1.0]]), counts: vec![3, 1] };
        let mut rm = RunningMean::new(2, 2);
        rm.update(&b1).unwrap();
        assert_eq!(rm.finalize(&bins, None).unwrap().centroids, b1.centroids);
        rm.update(&b1).unwrap();
        assert_eq!(rm.finalize(&bins, None).unwrap().centroids, b1.centroids);

        let mut partial = RunningMean::new(2, 2);
        let b2 = BatchCentroids { bins: vec![1], centroids: t(&[&[0.6, 0.8]]), counts: vec![2] };
        partial.update(&b2).unwrap();
        assert!(partial.finalize(&bins, None).is_err());
        let cur = Surrogate::new(bins.to_vec(), t(&[&[0.0, -1.0], &[1.0, 0.0]]), 4).unwrap();
        let fin = partial.finalize(&bins, Some(&cur)).unwrap();
        assert_eq!(fin.centroids, t(&[&[0.0, -1.0], &[0.6, 0.8]]));
    }

    #[test]
    fn contrastive_cases() {
        let s1 = Surrogate::new(vec![0.0], t(&[&[0.0, 1.0]]), 0).unwrap();
        let z = t(&[&[0.6, 0.8], &[1.0, 0.0]]);
        assert_eq!(contrastive_loss(&z, &[0, 0], &s1, 0.1).unwrap(), 0.0);

        let s2 = Surrogate::new(vec![0.0, 1.0], t(&[&[1.0, 0.0], &[0.0, 1.0]]), 0).unwrap();
        let z = t(&[&[1.0, 0.0]]);
        let l = contrastive_loss(&z, &[0], &s2, 0.1).unwrap();
        let expect = (1.0 + (-10.0f64).exp()).ln();
        assert!((l - expect).abs() < 1e-15, "{l} vs {expect}");
        assert!((l - 4.54e-5).abs() < 1e-7);

        assert!(contrastive_loss(&z, &[2], &s2, 0.1).is_err());
        assert!(contrastive_loss(&z, &[0], &s2, 0.0).is_err());
    }

    #[test]
    fn contrastive_falls_as_z_turns_to_positive() {
        let s = Surrogate::new(vec![0.0, 1.0, 2.0], t(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]), 0).unwrap();
        let mut last = f64::INFINITY;
        for step in 0..10 {
            let a = 1.5 - 0.15 * step as f64;
            let z = t(&[&[a.cos(), a.sin()]]);
            let l = contrastive_loss(&z, &[0], &s, 0.1).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn tape_refill_matches_direct() {
        let prev = Surrogate::new(
            vec![0.0, 1.0, 2.0, 3.0],
            t(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]),
            0,
        )
        .unwrap();
        let z = t(&[&[0.6, 0.8], &[0.8, 0.6], &[0.0, 1.0]]);
        let y = [3, 1, 3];
        let direct = refill(&batch_centroids(&z, &y).unwrap(), &prev).unwrap();
        let mut tape = Tape::new();
        let zv = tape.param(&z);
        let (c, present) = batch_centroids_on(&mut tape, zv, &y).unwrap();
        let s = refill_on(&mut tape, c, &present, &prev).unwrap();
        for (a, b) in tape.value(s).iter().zip(direct.centroids.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
