//! Grid primitives behind the dispersion score: top-x% foreground selection,
//! 8-connected component labeling and area-based blob suppression.

use crate::error::{Error, Result};
use crate::trace::Grid;

/// Number of entries covered by `percent` of `n`, rounded up and at least one.
///
/// A tiny slack absorbs representation error so that e.g. 25% of 4 is 1, not 2.
pub fn percent_count(percent: f64, n: usize) -> Result<usize> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentage must lie in (0, 100], got {percent}"
        )));
    }
    let raw = percent / 100.0 * n as f64;
    Ok(((raw - 1e-9).ceil() as usize).clamp(1, n.max(1)))
}

/// Indices of the `count` largest values, ordered by value descending and,
/// among equal values, by index ascending.
pub fn top_indices(values: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    let cmp = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    let count = count.min(values.len());
    if count < order.len() && count > 0 {
        order.select_nth_unstable_by(count - 1, cmp);
    }
    order.truncate(count);
    order.sort_unstable_by(cmp);
    order
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    height: usize,
    width: usize,
    members: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(height: usize, width: usize, members: Vec<bool>) -> Result<Self> {
        let g = Grid::new(height, width, members)?;
        Ok(ForegroundMask {
            height,
            width,
            members: g.into_values(),
        })
    }

    /// A mask with no foreground patches.
    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn from_indices(height: usize, width: usize, indices: &[usize]) -> Result<Self> {
        let mut members = vec![false; height * width];
        for &i in indices {
            if i >= members.len() {
                return Err(Error::InvalidArgument(format!("patch {i} outside {height}x{width} grid")));
            }
            members[i] = true;
        }
        Self::new(height, width, members)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, patch: usize) -> bool {
        self.members[patch]
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }
}

/// Selects the `ceil(x/100 * |P|)` largest patches as foreground.
pub fn top_x_mask(grid: &Grid<f64>, x_percent: f64) -> Result<ForegroundMask> {
    let m = percent_count(x_percent, grid.len())?;
    let (h, w) = grid.dims();
    ForegroundMask::from_indices(h, w, &top_indices(grid.values(), m))
}

/// One connected blob; members are row-major patch indices in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub members: Vec<usize>,
}

impl Component {
    pub fn area(&self) -> usize {
        self.members.len()
    }
}

/// Partition of a foreground into 8-connected components.
///
/// Components are ordered by their smallest member index. `valid` marks the
/// components that survive suppression (all of them before [`suppress_small`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSet {
    pub components: Vec<Component>,
    pub valid: Vec<bool>,
}

impl ComponentSet {
    pub fn areas(&self) -> Vec<usize> {
        self.components.iter().map(Component::area).collect()
    }

    pub fn valid_components(&self) -> impl Iterator<Item = &Component> {
        self.components
            .iter()
            .zip(&self.valid)
            .filter_map(|(c, &v)| v.then_some(c))
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Keeps the smaller index as root so roots are component minima.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Labels 8-connected foreground components with a single raster pass and union-find.
pub fn connected_components(mask: &ForegroundMask) -> ComponentSet {
    let (h, w) = mask.dims();
    let mut sets = DisjointSet::new(h * w);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            if !mask.contains(p) {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            if c > 0 && mask.contains(p - 1) {
                sets.union(p, p - 1);
            }
            if r > 0 {
                let up = p - w;
                if c > 0 && mask.contains(up - 1) {
                    sets.union(p, up - 1);
                }
                if mask.contains(up) {
                    sets.union(p, up);
                }
                if c + 1 < w && mask.contains(up + 1) {
                    sets.union(p, up + 1);
                }
            }
        }
    }

    let mut slot = vec![usize::MAX; h * w];
    let mut components: Vec<Component> = Vec::new();
    for p in 0..h * w {
        if !mask.contains(p) {
            continue;
        }
        let root = sets.find(p);
        if slot[root] == usize::MAX {
            slot[root] = components.len();
            components.push(Component { members: Vec::new() });
        }
        components[slot[root]].members.push(p);
    }
    let valid = vec![true; components.len()];
    ComponentSet { components, valid }
}

/// Marks components with area below `tau` as invalid. The partition itself is kept.
pub fn suppress_small(components: &ComponentSet, tau: usize) -> Result<ComponentSet> {
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be at least 1".into()));
    }
    Ok(ComponentSet {
        components: components.components.clone(),
        valid: components.components.iter().map(|c| c.area() >= tau).collect(),
    })
}
