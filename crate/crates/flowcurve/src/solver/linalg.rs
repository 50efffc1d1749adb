//! Factorization backends for the interior-point KKT systems.
//!
//! Both backends compute an unpivoted LDL' factorization of a symmetric
//! quasi-definite matrix (the augmented system carries +delta on the
//! primal block and -delta on the multiplier block, which makes the
//! factorization exist without pivoting). The banded backend stores only
//! a fixed number of subdiagonals; a reverse Cuthill-McKee permutation is
//! computed first so that the chain-structured fitting problems factor in
//! O(n * bandwidth^2).

/// Dense symmetric storage: full lower triangle in row-major order,
/// entry (i, j) with j <= i at `i * (i + 1) / 2 + j`.
pub struct DenseLdl {
    n: usize,
    data: Vec<f64>,
}

impl DenseLdl {
    pub fn new(n: usize) -> Self {
        DenseLdl {
            n,
            data: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn reset(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    pub fn slot(i: usize, j: usize) -> usize {
        debug_assert!(j <= i);
        i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn add(&mut self, slot: usize, v: f64) {
        self.data[slot] += v;
    }

    /// In-place LDL'. `pivot_floor` guards tiny pivots: a pivot with
    /// magnitude below it is replaced by +-pivot_floor keeping its sign
    /// (sign taken from `neg` for multiplier rows).
    pub fn factor(&mut self, neg: &[bool], pivot_floor: f64) {
        let n = self.n;
        for j in 0..n {
            // d_j = a_jj - sum_k l_jk^2 d_k
            let mut djj = self.data[Self::slot(j, j)];
            for k in 0..j {
                let ljk = self.data[Self::slot(j, k)];
                let dk = self.data[Self::slot(k, k)];
                djj -= ljk * ljk * dk;
            }
            if djj.abs() < pivot_floor {
                djj = if neg[j] { -pivot_floor } else { pivot_floor };
            }
            self.data[Self::slot(j, j)] = djj;
            for i in j + 1..n {
                let mut v = self.data[Self::slot(i, j)];
                for k in 0..j {
                    v -= self.data[Self::slot(i, k)]
                        * self.data[Self::slot(j, k)]
                        * self.data[Self::slot(k, k)];
                }
                self.data[Self::slot(i, j)] = v / djj;
            }
        }
    }

    /// Solves L D L' x = b in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.data[Self::slot(i, k)] * b[k];
            }
            b[i] = v;
        }
        for i in 0..n {
            b[i] /= self.data[Self::slot(i, i)];
        }
        for i in (0..n).rev() {
            let bi = b[i];
            for k in 0..i {
                b[k] -= self.data[Self::slot(i, k)] * bi;
            }
        }
    }
}

/// Banded symmetric storage: for column j, rows j..=j+bw are kept at
/// `j * (bw + 1) + (i - j)`.
pub struct BandedLdl {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedLdl {
    pub fn new(n: usize, bw: usize) -> Self {
        BandedLdl {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn reset(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    pub fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        j * (self.bw + 1) + (i - j)
    }

    #[inline]
    pub fn add(&mut self, slot: usize, v: f64) {
        self.data[slot] += v;
    }

    pub fn factor(&mut self, neg: &[bool], pivot_floor: f64) {
        let n = self.n;
        let bw = self.bw;
        for j in 0..n {
            let k_lo = j.saturating_sub(bw);
            let mut djj = self.data[self.slot(j, j)];
            for k in k_lo..j {
                let ljk = self.data[self.slot(j, k)];
                let dk = self.data[self.slot(k, k)];
                djj -= ljk * ljk * dk;
            }
            if djj.abs() < pivot_floor {
                djj = if neg[j] { -pivot_floor } else { pivot_floor };
            }
            let djj_slot = self.slot(j, j);
            self.data[djj_slot] = djj;
            let i_hi = (j + bw).min(n - 1);
            for i in j + 1..=i_hi {
                let mut v = self.data[self.slot(i, j)];
                let k_lo_i = i.saturating_sub(bw).max(k_lo);
                for k in k_lo_i..j {
                    v -= self.data[self.slot(i, k)]
                        * self.data[self.slot(j, k)]
                        * self.data[self.slot(k, k)];
                }
                let s = self.slot(i, j);
                self.data[s] = v / djj;
            }
        }
    }

    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let bw = self.bw;
        for i in 0..n {
            let mut v = b[i];
            for k in i.saturating_sub(bw)..i {
                v -= self.data[self.slot(i, k)] * b[k];
            }
            b[i] = v;
        }
        for i in 0..n {
            b[i] /= self.data[self.slot(i, i)];
        }
        for i in (0..n).rev() {
            let bi = b[i];
            for k in i.saturating_sub(bw)..i {
                b[k] -= self.data[self.slot(i, k)] * bi;
            }
        }
    }
}

/// Reverse Cuthill-McKee ordering of an undirected graph given as an
/// adjacency list. Ties are broken by node index so the permutation is
/// deterministic. Returns `perm` with `perm[old] = new`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut queue: std::collections::VecDeque<usize> = std::collections::VecDeque::new();

    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.sort_by_key(|&i| (degree[i], i));

    for &start in &nodes {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut neigh: Vec<usize> = adjacency[u]
                .iter()
                .copied()
                .filter(|&v| !visited[v])
                .collect();
            neigh.sort_by_key(|&v| (degree[v], v));
            for v in neigh {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order.reverse();
    let mut perm = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        perm[old] = new;
    }
    perm
}

/// Bandwidth of a symmetric pattern under a permutation.
pub fn bandwidth(edges: &[(usize, usize)], perm: &[usize]) -> usize {
    let mut bw = 0usize;
    for &(i, j) in edges {
        let (pi, pj) = (perm[i], perm[j]);
        bw = bw.max(pi.abs_diff(pj));
    }
    bw
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_ldl_solves_spd_system() {
        // A = [[4, 1], [1, 3]], b = [1, 2] -> x = [1/11, 7/11]
        let mut f = DenseLdl::new(2);
        f.add(DenseLdl::slot(0, 0), 4.0);
        f.add(DenseLdl::slot(1, 0), 1.0);
        f.add(DenseLdl::slot(1, 1), 3.0);
        f.factor(&[false, false], 1e-14);
        let mut b = vec![1.0, 2.0];
        f.solve(&mut b);
        assert!((b[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((b[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn dense_ldl_handles_quasi_definite() {
        // [[2, 1], [1, -1]] is quasi-definite (one positive, one negative block)
        let mut f = DenseLdl::new(2);
        f.add(DenseLdl::slot(0, 0), 2.0);
        f.add(DenseLdl::slot(1, 0), 1.0);
        f.add(DenseLdl::slot(1, 1), -1.0);
        f.factor(&[false, true], 1e-14);
        let mut b = vec![1.0, 0.0];
        f.solve(&mut b);
        // exact solution of [[2,1],[1,-1]] x = [1,0] is x = [1/3, 1/3]
        assert!((b[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((b[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn banded_matches_dense() {
        // pentadiagonal SPD matrix, n = 6, bw = 2
        let n = 6;
        let mut dense = DenseLdl::new(n);
        let mut band = BandedLdl::new(n, 2);
        for i in 0..n {
            dense.add(DenseLdl::slot(i, i), 5.0 + i as f64);
            let s = band.slot(i, i);
            band.add(s, 5.0 + i as f64);
            if i >= 1 {
                dense.add(DenseLdl::slot(i, i - 1), -1.0);
                let s = band.slot(i, i - 1);
                band.add(s, -1.0);
            }
            if i >= 2 {
                dense.add(DenseLdl::slot(i, i - 2), 0.5);
                let s = band.slot(i, i - 2);
                band.add(s, 0.5);
            }
        }
        let neg = vec![false; n];
        dense.factor(&neg, 1e-14);
        band.factor(&neg, 1e-14);
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64) - 2.0).collect();
        let mut xd = rhs.clone();
        let mut xb = rhs;
        dense.solve(&mut xd);
        band.solve(&mut xb);
        for (a, b) in xd.iter().zip(&xb) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rcm_reduces_bandwidth_of_reordered_chain() {
        // chain 0-2-4-1-3 written with scrambled labels: natural bandwidth is 3
        let adj: Vec<Vec<usize>> = vec![vec![2], vec![4, 3], vec![0, 4], vec![1], vec![2, 1]];
        let perm = reverse_cuthill_mckee(&adj);
        let edges: Vec<(usize, usize)> = adj
            .iter()
            .enumerate()
            .flat_map(|(u, l)| l.iter().map(move |&v| (u, v)))
            .collect();
        assert_eq!(bandwidth(&edges, &(0..5).collect::<Vec<_>>()), 3);
        assert!(bandwidth(&edges, &perm) <= 1);
    }
}
