//! Linear assignment solvers for square problems.
//!
//! Both solvers are shortest-augmenting-path methods that keep dual potentials
//! `u` (rows) and `v` (columns) with reduced costs `c(i,j) - u[i] - v[j] >= 0`.
//! The dense one scans all columns per step; the sparse one runs Dijkstra over
//! a row adjacency list and reports infeasibility when a row cannot be matched.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const NONE: usize = usize::MAX;

/// Minimum-cost perfect assignment on a dense `n × n` row-major cost matrix.
/// Returns `col4row`.
pub fn dense_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; n];
    let mut path = vec![NONE; n];
    let mut spc = vec![f64::INFINITY; n];
    let mut sr = vec![false; n];
    let mut sc = vec![false; n];
    let mut remaining = vec![0usize; n];

    for cur in 0..n {
        spc.iter_mut().for_each(|x| *x = f64::INFINITY);
        sr.iter_mut().for_each(|x| *x = false);
        sc.iter_mut().for_each(|x| *x = false);
        for (it, r) in remaining.iter_mut().enumerate() {
            *r = n - it - 1;
        }
        let mut num_remaining = n;
        let mut min_val = 0.0;
        let mut i = cur;
        let sink;
        loop {
            sr[i] = true;
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            let row = &cost[i * n..(i + 1) * n];
            for (it, &j) in remaining[..num_remaining].iter().enumerate() {
                let r = min_val + row[j] - u[i] - v[j];
                if r < spc[j] {
                    path[j] = i;
                    spc[j] = r;
                }
                if spc[j] < lowest || (spc[j] == lowest && row4col[j] == NONE) {
                    lowest = spc[j];
                    index = it;
                }
            }
            min_val = lowest;
            let j = remaining[index];
            sc[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
            if row4col[j] == NONE {
                sink = j;
                break;
            }
            i = row4col[j];
        }

        u[cur] += min_val;
        for r in 0..n {
            if sr[r] && r != cur {
                u[r] += min_val - spc[col4row[r]];
            }
        }
        for c in 0..n {
            if sc[c] {
                v[c] -= min_val - spc[c];
            }
        }
        let mut j = sink;
        loop {
            let i = path[j];
            row4col[j] = i;
            std::mem::swap(&mut col4row[i], &mut j);
            if i == cur {
                break;
            }
        }
    }
    col4row
}

#[derive(Clone, Copy)]
struct HeapItem {
    dist: f64,
    col: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // Reversed so the max-heap pops the smallest (dist, col).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.col.cmp(&self.col))
    }
}

/// Minimum-cost perfect assignment restricted to the edges in `adj`
/// (`adj[row] = [(col, cost), ...]`). Returns `None` when the sparse graph has
/// no perfect matching.
pub fn sparse_assignment(n: usize, adj: &[Vec<(usize, f64)>]) -> Option<Vec<usize>> {
    assert_eq!(adj.len(), n, "one adjacency list per row");
    let mut v = vec![f64::INFINITY; n];
    for row in adj {
        for &(j, c) in row {
            v[j] = v[j].min(c);
        }
    }
    if v.iter().any(|x| x.is_infinite()) {
        return None;
    }
    let mut u = vec![0.0; n];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; n];
    for (i, row) in adj.iter().enumerate() {
        for &(j, c) in row {
            if row4col[j] == NONE && c - v[j] == 0.0 {
                row4col[j] = i;
                col4row[i] = j;
                break;
            }
        }
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut path = vec![NONE; n];
    let mut done = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut finished: Vec<usize> = Vec::new();
    let mut rows: Vec<(usize, f64)> = Vec::new();
    let mut heap = BinaryHeap::new();

    for start in 0..n {
        if col4row[start] != NONE {
            continue;
        }
        let mut i = start;
        let mut di = 0.0;
        rows.push((start, 0.0));
        let (sink, min_val) = loop {
            for &(j, c) in &adj[i] {
                if done[j] {
                    continue;
                }
                let nd = di + c - u[i] - v[j];
                if nd < dist[j] {
                    if dist[j] == f64::INFINITY {
                        touched.push(j);
                    }
                    dist[j] = nd;
                    path[j] = i;
                    heap.push(HeapItem { dist: nd, col: j });
                }
            }
            let item = loop {
                match heap.pop() {
                    None => return None,
                    Some(it) if !done[it.col] && it.dist == dist[it.col] => break it,
                    Some(_) => {}
                }
            };
            done[item.col] = true;
            finished.push(item.col);
            if row4col[item.col] == NONE {
                break (item.col, item.dist);
            }
            i = row4col[item.col];
            di = item.dist;
            rows.push((i, di));
        };

        for &(r, dr) in &rows {
            u[r] += min_val - dr;
        }
        for &c in &finished {
            v[c] -= min_val - dist[c];
        }
        let mut j = sink;
        loop {
            let i = path[j];
            row4col[j] = i;
            std::mem::swap(&mut col4row[i], &mut j);
            if i == start {
                break;
            }
        }

        for &c in &touched {
            dist[c] = f64::INFINITY;
            path[c] = NONE;
            done[c] = false;
        }
        touched.clear();
        finished.clear();
        rows.clear();
        heap.clear();
    }
    Some(col4row)
}
