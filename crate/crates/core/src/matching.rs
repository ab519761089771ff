//! Maximum bipartite matching (Hopcroft–Karp) on the row/column graph of a
//! zero pattern, and the Hall deficiency witness obtained from König's
//! alternating-path construction.

use std::collections::VecDeque;

use nalgebra::DMatrix;

const NIL: usize = usize::MAX;

/// Bipartite graph between `rows` and `cols` given by adjacency lists.
#[derive(Clone, Debug)]
pub struct Bipartite {
    pub rows: usize,
    pub cols: usize,
    pub adj: Vec<Vec<usize>>,
}

impl Bipartite {
    /// Edge `(i, j)` wherever `pattern[(i, j)]` is true (nonzero entry).
    pub fn from_pattern(pattern: &DMatrix<bool>) -> Self {
        let adj = (0..pattern.nrows())
            .map(|i| (0..pattern.ncols()).filter(|&j| pattern[(i, j)]).collect())
            .collect();
        Bipartite {
            rows: pattern.nrows(),
            cols: pattern.ncols(),
            adj,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Matching {
    /// Column matched to each row, if any.
    pub row_mate: Vec<Option<usize>>,
    pub col_mate: Vec<Option<usize>>,
    pub size: usize,
}

pub fn hopcroft_karp(g: &Bipartite) -> Matching {
    let mut row_mate = vec![NIL; g.rows];
    let mut col_mate = vec![NIL; g.cols];
    let mut dist = vec![0usize; g.rows];
    let mut size = 0;

    loop {
        // BFS layering from free rows
        let mut queue = VecDeque::new();
        let mut found = false;
        for r in 0..g.rows {
            if row_mate[r] == NIL {
                dist[r] = 0;
                queue.push_back(r);
            } else {
                dist[r] = usize::MAX;
            }
        }
        while let Some(r) = queue.pop_front() {
            for &c in &g.adj[r] {
                let m = col_mate[c];
                if m == NIL {
                    found = true;
                } else if dist[m] == usize::MAX {
                    dist[m] = dist[r] + 1;
                    queue.push_back(m);
                }
            }
        }
        if !found {
            break;
        }
        let mut it = vec![0usize; g.rows];
        for r in 0..g.rows {
            if row_mate[r] == NIL && augment(g, r, &mut row_mate, &mut col_mate, &mut dist, &mut it)
            {
                size += 1;
            }
        }
    }

    let wrap = |v: Vec<usize>| v.into_iter().map(|x| (x != NIL).then_some(x)).collect();
    Matching {
        row_mate: wrap(row_mate),
        col_mate: wrap(col_mate),
        size,
    }
}

fn augment(
    g: &Bipartite,
    r: usize,
    row_mate: &mut [usize],
    col_mate: &mut [usize],
    dist: &mut [usize],
    it: &mut [usize],
) -> bool {
    while it[r] < g.adj[r].len() {
        let c = g.adj[r][it[r]];
        it[r] += 1;
        let m = col_mate[c];
        if m == NIL || (dist[m] == dist[r] + 1 && augment(g, m, row_mate, col_mate, dist, it)) {
            row_mate[r] = c;
            col_mate[c] = r;
            return true;
        }
    }
    dist[r] = usize::MAX;
    false
}

/// A row set `S` attaining the Hall deficiency `|S| - |N(S)|`.
#[derive(Clone, Debug)]
pub struct HallWitness {
    pub rows: Vec<usize>,
    pub neighbours: Vec<usize>,
}

impl HallWitness {
    pub fn deficiency(&self) -> usize {
        self.rows.len() - self.neighbours.len()
    }
}

/// Rows reachable from unmatched rows by alternating paths, with their
/// neighbourhood. For a maximum matching, every neighbour is matched into
/// the set, so `|S| - |N(S)|` equals the number of unmatched rows (König).
pub fn hall_witness(g: &Bipartite, m: &Matching) -> HallWitness {
    let mut row_seen = vec![false; g.rows];
    let mut col_seen = vec![false; g.cols];
    let mut queue: VecDeque<usize> = (0..g.rows).filter(|&r| m.row_mate[r].is_none()).collect();
    for &r in &queue {
        row_seen[r] = true;
    }
    while let Some(r) = queue.pop_front() {
        for &c in &g.adj[r] {
            if !col_seen[c] {
                col_seen[c] = true;
                if let Some(r2) = m.col_mate[c] {
                    if !row_seen[r2] {
                        row_seen[r2] = true;
                        queue.push_back(r2);
                    }
                }
            }
        }
    }
    HallWitness {
        rows: (0..g.rows).filter(|&r| row_seen[r]).collect(),
        neighbours: (0..g.cols).filter(|&c| col_seen[c]).collect(),
    }
}
