//! Sparse LU factorization of a square basis matrix.
//!
//! Right-looking elimination that takes column and row singletons first
//! (they cause no fill) and falls back to Markowitz pivoting with a
//! threshold on what remains. Columns that turn out dependent are reported
//! and replaced by unit columns on the rows nobody pivoted on.

/// Relative pivot threshold for the Markowitz phase.
const THRESHOLD: f64 = 0.01;
/// Entries below this magnitude are never pivots.
const TINY: f64 = 1e-11;

struct Pivot {
    row: usize,
    col: usize,
    value: f64,
    /// Remaining entries of the pivot row, by column.
    rest: Vec<(usize, f64)>,
}

pub(crate) struct Lu {
    /// Row operations in pivot order: `b[i] -= l * b[row]`.
    lower: Vec<(usize, Vec<(usize, f64)>)>,
    pivots: Vec<Pivot>,
}

/// A column position that could not be pivoted, and the row whose unit
/// column replaced it.
pub(crate) type Replacement = (usize, usize);

fn remove_row(list: &mut Vec<(usize, f64)>, row: usize) {
    if let Some(p) = list.iter().position(|&(i, _)| i == row) {
        list.swap_remove(p);
    }
}

fn remove_col(list: &mut Vec<usize>, col: usize) {
    if let Some(p) = list.iter().position(|&j| j == col) {
        list.swap_remove(p);
    }
}

impl Lu {
    /// Factors the `m x m` matrix whose column `j` is `columns[j]`.
    pub(crate) fn factor(m: usize, columns: &[Vec<(usize, f64)>]) -> (Self, Vec<Replacement>) {
        debug_assert_eq!(columns.len(), m);
        let mut cols: Vec<Vec<(usize, f64)>> = columns
            .iter()
            .map(|c| c.iter().copied().filter(|&(_, v)| v != 0.0).collect())
            .collect();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (j, c) in cols.iter().enumerate() {
            for &(i, _) in c {
                rows[i].push(j);
            }
        }
        let mut row_done = vec![false; m];
        let mut col_done = vec![false; m];
        let mut rejected = Vec::new();
        let mut col_single: Vec<usize> = (0..m).rev().filter(|&j| cols[j].len() == 1).collect();
        let mut row_single: Vec<usize> = (0..m).rev().filter(|&i| rows[i].len() == 1).collect();
        let mut lu = Lu {
            lower: Vec::new(),
            pivots: Vec::with_capacity(m),
        };
        let mut remaining = m;

        while remaining > 0 {
            let mut choice = None;
            while let Some(j) = col_single.pop() {
                if col_done[j] || cols[j].len() != 1 {
                    continue;
                }
                let (i, v) = cols[j][0];
                if v.abs() > TINY {
                    choice = Some((i, j));
                    break;
                }
                // numerically empty column
                cols[j].clear();
                remove_col(&mut rows[i], j);
                if rows[i].len() == 1 {
                    row_single.push(i);
                }
                col_done[j] = true;
                rejected.push(j);
                remaining -= 1;
            }
            if choice.is_none() {
                while let Some(i) = row_single.pop() {
                    if row_done[i] || rows[i].len() != 1 {
                        continue;
                    }
                    let j = rows[i][0];
                    let cmax = cols[j].iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs()));
                    let v = cols[j].iter().find(|&&(r, _)| r == i).map_or(0.0, |&(_, v)| v);
                    if v.abs() > TINY && v.abs() >= THRESHOLD * cmax {
                        choice = Some((i, j));
                        break;
                    }
                }
            }
            if choice.is_none() {
                let mut best: Option<(usize, usize, usize)> = None;
                for j in 0..m {
                    if col_done[j] {
                        continue;
                    }
                    let cmax = cols[j].iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs()));
                    if cmax <= TINY {
                        for &(i, _) in &cols[j] {
                            remove_col(&mut rows[i], j);
                            if rows[i].len() == 1 {
                                row_single.push(i);
                            }
                        }
                        cols[j].clear();
                        col_done[j] = true;
                        rejected.push(j);
                        remaining -= 1;
                        continue;
                    }
                    let cc = cols[j].len() - 1;
                    for &(i, v) in &cols[j] {
                        if v.abs() < THRESHOLD * cmax {
                            continue;
                        }
                        let cost = (rows[i].len() - 1) * cc;
                        let better = match best {
                            None => true,
                            Some((bc, bi, bj)) => (cost, j, i) < (bc, bj, bi),
                        };
                        if better {
                            best = Some((cost, i, j));
                        }
                    }
                }
                choice = best.map(|(_, i, j)| (i, j));
            }
            let Some((r, c)) = choice else {
                break;
            };
            lu.eliminate(r, c, &mut cols, &mut rows, &mut col_single, &mut row_single);
            row_done[r] = true;
            col_done[c] = true;
            remaining -= 1;
        }

        rejected.extend((0..m).filter(|&j| !col_done[j]));
        // pair dependent columns with the rows left without a pivot; their
        // partially eliminated entries must not leak into the triangle
        if !rejected.is_empty() {
            let mut gone = vec![false; m];
            rejected.iter().for_each(|&j| gone[j] = true);
            for p in &mut lu.pivots {
                p.rest.retain(|&(j, _)| !gone[j]);
            }
        }
        let free_rows: Vec<usize> = (0..m).filter(|&i| !row_done[i]).collect();
        rejected.sort_unstable();
        let mut replaced = Vec::with_capacity(rejected.len());
        for (&j, &i) in rejected.iter().zip(&free_rows) {
            lu.pivots.push(Pivot {
                row: i,
                col: j,
                value: 1.0,
                rest: Vec::new(),
            });
            replaced.push((j, i));
        }
        (lu, replaced)
    }

    fn eliminate(
        &mut self,
        r: usize,
        c: usize,
        cols: &mut [Vec<(usize, f64)>],
        rows: &mut [Vec<usize>],
        col_single: &mut Vec<usize>,
        row_single: &mut Vec<usize>,
    ) {
        let p = cols[c].iter().find(|&&(i, _)| i == r).map(|&(_, v)| v).expect("pivot entry");
        let lcol: Vec<(usize, f64)> = cols[c]
            .iter()
            .filter(|&&(i, _)| i != r)
            .map(|&(i, v)| (i, v / p))
            .collect();
        let pattern = std::mem::take(&mut rows[r]);
        let mut urow = Vec::with_capacity(pattern.len());
        for &j in &pattern {
            if j == c {
                continue;
            }
            let v = cols[j].iter().find(|&&(i, _)| i == r).map_or(0.0, |&(_, v)| v);
            urow.push((j, v));
            remove_row(&mut cols[j], r);
        }
        for &(i, _) in &cols[c] {
            if i != r {
                remove_col(&mut rows[i], c);
            }
        }
        cols[c].clear();
        for &(i, l) in &lcol {
            for &(j, u) in &urow {
                if u == 0.0 {
                    continue;
                }
                match cols[j].iter_mut().find(|e| e.0 == i) {
                    Some(e) => e.1 -= l * u,
                    None => {
                        cols[j].push((i, -l * u));
                        rows[i].push(j);
                    }
                }
            }
        }
        for &(j, _) in &urow {
            if cols[j].len() == 1 {
                col_single.push(j);
            }
        }
        for &(i, _) in &lcol {
            if rows[i].len() == 1 {
                row_single.push(i);
            }
        }
        if !lcol.is_empty() {
            self.lower.push((r, lcol));
        }
        self.pivots.push(Pivot {
            row: r,
            col: c,
            value: p,
            rest: urow,
        });
    }

    /// Solves `B x = b`; `b` is indexed by row and overwritten, `x` by
    /// column.
    pub(crate) fn ftran(&self, b: &mut [f64], x: &mut [f64]) {
        for (r, lcol) in &self.lower {
            let br = b[*r];
            if br != 0.0 {
                for &(i, l) in lcol {
                    b[i] -= l * br;
                }
            }
        }
        for p in self.pivots.iter().rev() {
            let mut s = b[p.row];
            for &(j, u) in &p.rest {
                s -= u * x[j];
            }
            x[p.col] = s / p.value;
        }
    }

    /// Solves `B^T y = c`; `c` is indexed by column and overwritten, `y` by
    /// row.
    pub(crate) fn btran(&self, c: &mut [f64], y: &mut [f64]) {
        for p in &self.pivots {
            let z = c[p.col] / p.value;
            y[p.row] = z;
            if z != 0.0 {
                for &(j, u) in &p.rest {
                    c[j] -= u * z;
                }
            }
        }
        for (r, lcol) in self.lower.iter().rev() {
            let mut s = y[*r];
            for &(i, l) in lcol {
                s -= l * y[i];
            }
            y[*r] = s;
        }
    }

    /// Stored nonzeros, for diagnostics.
    #[cfg(test)]
    pub(crate) fn nnz(&self) -> usize {
        self.lower.iter().map(|(_, l)| l.len()).sum::<usize>()
            + self.pivots.iter().map(|p| 1 + p.rest.len()).sum::<usize>()
    }
}
