use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latent elements v_ik for every (subject, cluster) cell, stored as indices
/// into a shared list of atoms (the realized support of the nested DP draw).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTable {
    atoms: Vec<f64>,
    counts: Vec<usize>,
    /// `cells[k][i]` is the atom of v_ik
    cells: Vec<Vec<usize>>,
}

impl LatentTable {
    /// One atom per distinct value in each column; `columns[k][i]` = v_ik.
    pub fn from_values(columns: &[Vec<f64>]) -> Self {
        let mut table = Self { atoms: Vec::new(), counts: Vec::new(), cells: Vec::new() };
        for col in columns {
            let cells = col.iter().map(|&v| table.push_atom(v, 1)).collect();
            table.cells.push(cells);
        }
        table
    }

    pub(crate) fn from_parts(atoms: Vec<f64>, cells: Vec<Vec<usize>>) -> Result<Self> {
        let mut counts = vec![0; atoms.len()];
        for col in &cells {
            for &t in col {
                if t >= atoms.len() {
                    return Err(Error::InvalidState(format!("cell refers to missing atom {t}")));
                }
                counts[t] += 1;
            }
        }
        let mut table = Self { atoms, counts, cells };
        table.compact();
        Ok(table)
    }

    pub fn n_clusters(&self) -> usize {
        self.cells.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.iter().map(|c| c.len()).sum()
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn atom_counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.atoms[self.cells[k][i]]
    }

    pub fn atom_of(&self, i: usize, k: usize) -> usize {
        self.cells[k][i]
    }

    pub fn column_atoms(&self, k: usize) -> &[usize] {
        &self.cells[k]
    }

    /// Latent vector v_k.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.cells[k].iter().map(|&t| self.atoms[t]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cells.len()).map(|k| self.column(k)).collect()
    }

    pub(crate) fn push_atom(&mut self, value: f64, count: usize) -> usize {
        self.atoms.push(value);
        self.counts.push(count);
        self.atoms.len() - 1
    }

    /// Remove cluster column k (swap-remove), releasing its cells.
    pub(crate) fn swap_remove_column(&mut self, k: usize) -> Vec<usize> {
        let cells = self.cells.swap_remove(k);
        for &t in &cells {
            self.counts[t] -= 1;
        }
        cells
    }

    pub(crate) fn push_column(&mut self, cells: Vec<usize>) {
        for &t in &cells {
            self.counts[t] += 1;
        }
        self.cells.push(cells);
    }

    /// Reorder columns: new column k is old column `order[k]`.
    pub(crate) fn permute_columns(&mut self, order: &[usize]) {
        let old = std::mem::take(&mut self.cells);
        self.cells = order.iter().map(|&k| old[k].clone()).collect();
    }

    /// Drop atoms no cell refers to and renumber the rest.
    pub(crate) fn compact(&mut self) {
        if self.counts.iter().all(|&c| c > 0) {
            return;
        }
        let mut remap = vec![usize::MAX; self.atoms.len()];
        let mut atoms = Vec::new();
        let mut counts = Vec::new();
        for (t, (&v, &c)) in self.atoms.iter().zip(&self.counts).enumerate() {
            if c > 0 {
                remap[t] = atoms.len();
                atoms.push(v);
                counts.push(c);
            }
        }
        for col in &mut self.cells {
            for t in col.iter_mut() {
                *t = remap[*t];
            }
        }
        self.atoms = atoms;
        self.counts = counts;
    }

    pub fn check_invariants(&self, n: usize) -> Result<()> {
        let mut counts = vec![0usize; self.atoms.len()];
        for (k, col) in self.cells.iter().enumerate() {
            if col.len() != n {
                return Err(Error::InvalidState(format!("latent column {k} has {} cells", col.len())));
            }
            for &t in col {
                if t >= self.atoms.len() {
                    return Err(Error::InvalidState(format!("cell maps to missing atom {t}")));
                }
                counts[t] += 1;
            }
        }
        if counts != self.counts {
            return Err(Error::InvalidState("atom counts out of sync".into()));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidState("unused atom not pruned".into()));
        }
        Ok(())
    }
}

/// Binary z_ik: `true` means subject i follows cluster k's latent vector with
/// variance τ², `false` means high-variance noise (τ₁²).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorTable {
    z: Vec<Vec<bool>>,
}

impl IndicatorTable {
    pub fn all_ones(n: usize, q: usize) -> Self {
        Self { z: vec![vec![true; n]; q] }
    }

    pub fn from_columns(z: Vec<Vec<bool>>) -> Self {
        Self { z }
    }

    pub fn get(&self, i: usize, k: usize) -> bool {
        self.z[k][i]
    }

    pub fn column(&self, k: usize) -> &[bool] {
        &self.z[k]
    }

    pub fn n_clusters(&self) -> usize {
        self.z.len()
    }

    pub fn ones(&self) -> usize {
        self.z.iter().flatten().filter(|&&b| b).count()
    }

    pub fn total(&self) -> usize {
        self.z.iter().map(|c| c.len()).sum()
    }

    /// Fraction of z_ik = 1 within each cluster.
    pub fn fraction_ones(&self) -> Vec<f64> {
        self.z
            .iter()
            .map(|c| c.iter().filter(|&&b| b).count() as f64 / c.len().max(1) as f64)
            .collect()
    }

    pub(crate) fn set(&mut self, i: usize, k: usize, v: bool) {
        self.z[k][i] = v;
    }

    pub(crate) fn swap_remove_column(&mut self, k: usize) -> Vec<bool> {
        self.z.swap_remove(k)
    }

    pub(crate) fn push_column(&mut self, col: Vec<bool>) {
        self.z.push(col);
    }

    pub(crate) fn permute_columns(&mut self, order: &[usize]) {
        let old = std::mem::take(&mut self.z);
        self.z = order.iter().map(|&k| old[k].clone()).collect();
    }

    pub fn columns(&self) -> &[Vec<bool>] {
        &self.z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_prunes_and_renumbers() {
        let mut t = LatentTable::from_values(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(t.n_atoms(), 4);
        let released = t.swap_remove_column(0);
        assert_eq!(released, vec![0, 1]);
        t.compact();
        assert_eq!(t.n_atoms(), 2);
        assert_eq!(t.column(0), vec![3.0, 4.0]);
        t.check_invariants(2).unwrap();
    }

    #[test]
    fn shared_atoms_are_counted() {
        let t = LatentTable::from_parts(vec![0.5, 9.0, 1.5], vec![vec![0, 2], vec![2, 2]]).unwrap();
        assert_eq!(t.n_atoms(), 2);
        assert_eq!(t.atom_counts(), &[1, 3]);
        assert_eq!(t.column(1), vec![1.5, 1.5]);
        t.check_invariants(2).unwrap();
    }

    #[test]
    fn indicator_fractions() {
        let z = IndicatorTable::from_columns(vec![vec![true, false], vec![true, true]]);
        assert_eq!(z.fraction_ones(), vec![0.5, 1.0]);
        assert_eq!(z.ones(), 3);
        assert_eq!(z.total(), 4);
    }
}
