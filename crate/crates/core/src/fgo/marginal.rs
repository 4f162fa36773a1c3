use super::graph::{accumulate, Factor, FactorFamily, FactorGraph, FgoError, Linearization, Values, Var, VarKey};
use nalgebra::{DMatrix, DVector};
use std::collections::{BTreeMap, BTreeSet};

/// Linearized prior left behind by marginalization: `r(x) = J (x₀ ⊟ x) + e`.
#[derive(Debug, Clone)]
pub struct MarginalPrior {
    pub keys: Vec<VarKey>,
    pub linearization_point: Vec<Var>,
    pub sqrt_information: DMatrix<f64>,
    pub residual0: DVector<f64>,
}

impl MarginalPrior {
    fn offsets(&self) -> Vec<usize> {
        let mut o = 0;
        self.linearization_point
            .iter()
            .map(|v| {
                let s = o;
                o += v.dim();
                s
            })
            .collect()
    }

    fn delta(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        let n: usize = self.linearization_point.iter().map(Var::dim).sum();
        let mut d = DVector::zeros(n);
        for ((k, x0), o) in self.keys.iter().zip(&self.linearization_point).zip(self.offsets()) {
            let l = x0.local(values.var(*k)?);
            d.rows_mut(o, l.len()).copy_from(&l);
        }
        Ok(d)
    }
}

impl Factor for MarginalPrior {
    fn family(&self) -> FactorFamily {
        FactorFamily::Marginal
    }
    fn keys(&self) -> Vec<VarKey> {
        self.keys.clone()
    }
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgoError> {
        Ok(&self.sqrt_information * self.delta(values)? + &self.residual0)
    }
    fn linearize(&self, values: &Values) -> Result<Linearization, FgoError> {
        let mut jacobians = Vec::new();
        for ((k, x0), o) in self.keys.iter().zip(&self.linearization_point).zip(self.offsets()) {
            let d = x0.dim();
            let blk = self.sqrt_information.columns(o, d).into_owned();
            jacobians.push(blk * x0.local_jacobian(values.var(*k)?));
        }
        Ok(Linearization {
            residual: self.residual(values)?,
            jacobians,
        })
    }
}

impl FactorGraph {
    /// Removes and returns every factor touching one of `keys`.
    pub fn take_factors_touching(&mut self, keys: &BTreeSet<VarKey>) -> Vec<Box<dyn Factor>> {
        let (taken, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.factors)
            .into_iter()
            .partition(|f| f.keys().iter().any(|k| keys.contains(k)));
        self.factors = kept;
        taken
    }
}

/// Schur-complements `marginalized` out of the factors attached to them.
///
/// Those factors are removed from `graph`; the returned prior (if any retained
/// variable was connected) replaces them.
pub fn marginalize(
    graph: &mut FactorGraph,
    values: &Values,
    marginalized: &BTreeSet<VarKey>,
) -> Result<Option<MarginalPrior>, FgoError> {
    let taken = graph.take_factors_touching(marginalized);
    if taken.is_empty() {
        return Ok(None);
    }
    let mut involved: BTreeSet<VarKey> = BTreeSet::new();
    for f in &taken {
        involved.extend(f.keys());
    }
    // marginalized block first, retained after
    let mut ordering = BTreeMap::new();
    let mut n = 0;
    let mut nm = 0;
    for pass in [true, false] {
        for k in involved.iter().filter(|k| marginalized.contains(k) == pass) {
            ordering.insert(*k, n);
            n += values.var(*k)?.dim();
        }
        if pass {
            nm = n;
        }
    }
    let retained: Vec<VarKey> = involved.iter().filter(|k| !marginalized.contains(k)).copied().collect();
    if retained.is_empty() {
        return Ok(None);
    }
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for f in &taken {
        accumulate(f.as_ref(), values, &ordering, &mut h, &mut g)?;
    }
    let nr = n - nm;
    let hmm = h.view((0, 0), (nm, nm)).into_owned();
    let hmr = h.view((0, nm), (nm, nr)).into_owned();
    let hrr = h.view((nm, nm), (nr, nr)).into_owned();
    let gm = g.rows(0, nm).into_owned();
    let gr = g.rows(nm, nr).into_owned();

    let hmm_inv = pseudo_inverse_symmetric(&hmm);
    let h_star = &hrr - hmr.transpose() * &hmm_inv * &hmr;
    let g_star = &gr - hmr.transpose() * &hmm_inv * &gm;
    let h_star = 0.5 * (&h_star + h_star.transpose());

    let eig = h_star.symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..nr).filter(|&i| eig.eigenvalues[i] > 1e-12 * max.max(1e-300)).collect();
    let mut j = DMatrix::zeros(keep.len(), nr);
    let mut e = DVector::zeros(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        let v = eig.eigenvectors.column(i);
        j.row_mut(row).copy_from(&(v.transpose() * s));
        e[row] = v.dot(&g_star) / s;
    }
    Ok(Some(MarginalPrior {
        linearization_point: retained.iter().map(|k| values.var(*k).cloned()).collect::<Result<_, _>>()?,
        keys: retained,
        sqrt_information: j,
        residual0: e,
    }))
}

fn pseudo_inverse_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    if let Some(c) = m.clone().cholesky() {
        return c.inverse();
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax().max(1e-300);
    let inv = eig
        .eigenvalues
        .map(|l| if l > 1e-12 * max { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}
