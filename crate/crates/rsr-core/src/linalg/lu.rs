//! Complex LU factorization with partial pivoting, used by inverse
//! iteration and for solving small linear systems.

use super::{C64, CMatrix};

pub struct LuFactors {
    lu: CMatrix,
    perm: Vec<usize>,
    pub singular: bool,
}

impl LuFactors {
    /// Factor `a` in place (copy). Near-singular pivots are bumped by a tiny
    /// multiple of the matrix scale instead of failing, which is exactly what
    /// inverse iteration wants.
    pub fn new(a: &CMatrix) -> Self {
        let d = a.dim();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..d).collect();
        let scale = lu.max_abs().max(1e-300);
        let mut singular = false;
        for k in 0..d {
            // pivot
            let (mut pi, mut pv) = (k, lu[(k, k)].norm());
            for i in k + 1..d {
                let v = lu[(i, k)].norm();
                if v > pv {
                    pi = i;
                    pv = v;
                }
            }
            if pi != k {
                for j in 0..d {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(pi, j)];
                    lu[(pi, j)] = tmp;
                }
                perm.swap(k, pi);
            }
            if pv <= scale * 1e-15 {
                singular = true;
                lu[(k, k)] = C64::new(scale * 1e-15, 0.0);
            }
            let piv = lu[(k, k)];
            for i in k + 1..d {
                let f = lu[(i, k)] / piv;
                lu[(i, k)] = f;
                for j in k + 1..d {
                    let s = f * lu[(k, j)];
                    lu[(i, j)] -= s;
                }
            }
        }
        LuFactors { lu, perm, singular }
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let d = self.lu.dim();
        assert_eq!(b.len(), d);
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..d {
            for j in 0..i {
                let s = self.lu[(i, j)] * x[j];
                x[i] -= s;
            }
        }
        for i in (0..d).rev() {
            x[i] /= self.lu[(i, i)];
            for j in 0..i {
                let s = self.lu[(j, i)] * x[i];
                x[j] -= s;
            }
        }
        x
    }

    pub fn det(&self) -> C64 {
        // sign of the permutation times product of pivots
        let mut visited = vec![false; self.perm.len()];
        let mut sign = 1.0;
        for start in 0..self.perm.len() {
            if visited[start] {
                continue;
            }
            let mut len = 0;
            let mut i = start;
            while !visited[i] {
                visited[i] = true;
                i = self.perm[i];
                len += 1;
            }
            if len % 2 == 0 {
                sign = -sign;
            }
        }
        let mut det = C64::new(sign, 0.0);
        for i in 0..self.lu.dim() {
            det *= self.lu[(i, i)];
        }
        det
    }
}
