//! Uniform rectangular partition of the state box, the state-to-cell relation
//! and cell labels.
//!
//! Interior cells are numbered in row-major order (last dimension fastest).
//! Index `L = num_cells()` is the absorbing outside cell standing for every
//! point that leaves the state box.

use serde::{Deserialize, Serialize};

use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::geometry::{Interval, IntervalBox};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Goal,
    Unsafe,
    Neutral,
}

/// How region boundaries that do not fall on grid edges are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Every goal/unsafe boundary must coincide with a grid edge.
    #[default]
    Strict,
    /// Goal cells are cells inside the goal box; unsafe cells are cells
    /// touching an unsafe box.
    Conservative,
}

#[derive(Clone, Debug)]
pub struct Partition {
    counts: Vec<usize>,
    edges: Vec<Vec<f64>>,
    strides: Vec<usize>,
    state_box: IntervalBox,
    labels: Vec<Label>,
    goal_cells: Vec<usize>,
    unsafe_cells: Vec<usize>,
}

const EDGE_TOL: f64 = 1e-9;

fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut e: Vec<f64> = (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect();
    e[0] = lo;
    e[n] = hi;
    e
}

impl Partition {
    pub fn build(model: &SystemModel, counts: &[usize], mode: LabelMode) -> Result<Partition> {
        let n = model.state_dim();
        if counts.len() != n {
            return Err(Error::Dimension {
                what: "partition counts",
                expected: n,
                got: counts.len(),
            });
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidModel(
                "partition counts must be positive".into(),
            ));
        }
        let edges: Vec<Vec<f64>> = (0..n)
            .map(|j| uniform_edges(model.state_box.lo[j], model.state_box.hi[j], counts[j]))
            .collect();
        let mut strides = vec![1usize; n];
        for j in (0..n.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * counts[j + 1];
        }
        let mut part = Partition {
            counts: counts.to_vec(),
            edges,
            strides,
            state_box: model.state_box.clone(),
            labels: Vec::new(),
            goal_cells: Vec::new(),
            unsafe_cells: Vec::new(),
        };

        let unsafe_boxes = model.clipped_unsafe_boxes();
        if mode == LabelMode::Strict {
            part.check_alignment("goal", &model.goal_box)?;
            for b in &unsafe_boxes {
                part.check_alignment("unsafe", b)?;
            }
        }
        for b in unsafe_boxes.iter().chain(std::iter::once(&model.goal_box)) {
            part.snap_edges(b);
        }

        let total = part.num_cells();
        let mut labels = vec![Label::Neutral; total + 1];
        for (i, label) in labels.iter_mut().enumerate().take(total) {
            let cell = part.cell_bounds(i)?;
            if unsafe_boxes.iter().any(|b| cell.overlaps_interior(b)) {
                *label = Label::Unsafe;
            } else if model.goal_box.contains_box(&cell) {
                *label = Label::Goal;
            }
        }
        labels[total] = Label::Unsafe;
        part.goal_cells = (0..total).filter(|&i| labels[i] == Label::Goal).collect();
        part.unsafe_cells = (0..=total).filter(|&i| labels[i] == Label::Unsafe).collect();
        part.labels = labels;
        Ok(part)
    }

    fn check_alignment(&self, what: &str, b: &IntervalBox) -> Result<()> {
        for j in 0..self.dim() {
            for v in [b.lo[j], b.hi[j]] {
                let e = &self.edges[j];
                let scale = (e[e.len() - 1] - e[0]).abs().max(1.0);
                if !e.iter().any(|x| (x - v).abs() <= EDGE_TOL * scale) {
                    return Err(Error::LabelAlignment(format!(
                        "{what} boundary {v} in dimension {j} falls strictly inside a cell"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Move interior edges that match a region boundary up to rounding onto
    /// that boundary.
    fn snap_edges(&mut self, b: &IntervalBox) {
        for j in 0..self.dim() {
            let e = &mut self.edges[j];
            let last = e.len() - 1;
            let scale = (e[last] - e[0]).abs().max(1.0);
            for v in [b.lo[j], b.hi[j]] {
                for x in e[1..last].iter_mut() {
                    if (*x - v).abs() <= EDGE_TOL * scale {
                        *x = v;
                    }
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn edges(&self, j: usize) -> &[f64] {
        &self.edges[j]
    }

    pub fn state_box(&self) -> &IntervalBox {
        &self.state_box
    }

    /// Number of interior cells `L`; also the index of the outside cell.
    pub fn num_cells(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn outside(&self) -> usize {
        self.num_cells()
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn goal_cells(&self) -> &[usize] {
        &self.goal_cells
    }

    pub fn unsafe_cells(&self) -> &[usize] {
        &self.unsafe_cells
    }

    pub fn is_terminal(&self, i: usize) -> bool {
        self.labels[i] != Label::Neutral
    }

    /// Grid coordinate of `x` along dimension `j`, `None` outside the box.
    /// Cells are half-open `[lo, hi)` except the last, which is closed.
    pub fn locate_dim(&self, j: usize, x: f64) -> Option<usize> {
        let e = &self.edges[j];
        let n = self.counts[j];
        if !(e[0] <= x && x <= e[n]) {
            return None;
        }
        let w = (e[n] - e[0]) / n as f64;
        let mut k = (((x - e[0]) / w).floor() as isize).clamp(0, n as isize - 1) as usize;
        while k > 0 && x < e[k] {
            k -= 1;
        }
        while k + 1 < n && x >= e[k + 1] {
            k += 1;
        }
        Some(k)
    }

    /// The relation from states to cells.
    pub fn locate(&self, x: &[f64]) -> usize {
        if x.len() != self.dim() {
            return self.outside();
        }
        let mut idx = 0;
        for (j, &v) in x.iter().enumerate() {
            match self.locate_dim(j, v) {
                Some(k) => idx += k * self.strides[j],
                None => return self.outside(),
            }
        }
        idx
    }

    pub fn multi_index(&self, i: usize) -> Vec<usize> {
        let mut rem = i;
        self.strides
            .iter()
            .map(|&s| {
                let k = rem / s;
                rem %= s;
                k
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn stride(&self, j: usize) -> usize {
        self.strides[j]
    }

    /// Element-wise lower/upper corners of an interior cell.
    pub fn cell_bounds(&self, i: usize) -> Result<IntervalBox> {
        if i >= self.num_cells() {
            return Err(Error::NotInterior(i));
        }
        let idx = self.multi_index(i);
        Ok(IntervalBox {
            lo: idx.iter().enumerate().map(|(j, &k)| self.edges[j][k]).collect(),
            hi: idx
                .iter()
                .enumerate()
                .map(|(j, &k)| self.edges[j][k + 1])
                .collect(),
        })
    }

    pub fn cell_center(&self, i: usize) -> Result<Vec<f64>> {
        Ok(self.cell_bounds(i)?.center())
    }

    pub fn cell_interval(&self, j: usize, k: usize) -> Interval {
        Interval::new(self.edges[j][k], self.edges[j][k + 1])
    }

    /// Grid coordinates along dimension `j` whose cells meet `iv` in a set of
    /// positive length; a degenerate `iv` maps to the cell that contains it.
    pub fn overlapping_range(&self, j: usize, iv: Interval) -> std::ops::Range<usize> {
        let n = self.counts[j];
        let e = &self.edges[j];
        if iv.width() == 0.0 {
            return match self.locate_dim(j, iv.lo) {
                Some(k) => k..k + 1,
                None => 0..0,
            };
        }
        if iv.hi <= e[0] || iv.lo >= e[n] {
            return 0..0;
        }
        let first = match self.locate_dim(j, iv.lo.max(e[0])) {
            Some(k) => k,
            None => 0,
        };
        let mut last = self.locate_dim(j, iv.hi.min(e[n])).unwrap_or(n - 1);
        // an upper end sitting exactly on an edge only touches the next cell
        if last > first && iv.hi <= e[last] {
            last -= 1;
        }
        first..last + 1
    }

    /// Interior cells meeting `b` with positive volume (or containing it if
    /// degenerate along a dimension).
    pub fn cells_overlapping(&self, b: &IntervalBox) -> Vec<usize> {
        let ranges: Vec<_> = (0..self.dim())
            .map(|j| self.overlapping_range(j, b.interval(j)))
            .collect();
        let mut out = Vec::new();
        if ranges.iter().any(|r| r.is_empty()) {
            return out;
        }
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.start).collect();
        loop {
            out.push(self.flat_index(&idx));
            let mut j = self.dim();
            loop {
                if j == 0 {
                    return out;
                }
                j -= 1;
                idx[j] += 1;
                if idx[j] < ranges[j].end {
                    break;
                }
                idx[j] = ranges[j].start;
            }
        }
    }
}
