//! Discrete excursion sets as cell complexes and their Euler characteristics.
//!
//! A site whose field value reaches the level contributes a closed unit cell
//! (square, cube, or spherical plate). Cells of neighboring sites are glued
//! along their shared lattice cells according to the connectivity: under
//! 8-/26-connectivity diagonal contacts glue too, under 4-/6-connectivity a
//! cell shared only diagonally is counted once per touching group, and under
//! 18-connectivity edge contacts glue but vertex-only contacts do not. The
//! Euler characteristic is the alternating sum over distinct cells, computed
//! here as
//!
//! `EC = (#included sites) + sum over shared lattice cells of
//!       (-1)^dim (multiplicity - #included incident sites)`
//!
//! where the multiplicity of a shared cell is the number of glued groups of
//! included sites touching it. The multi-level profile is a descending sweep
//! that sorts each field's sites once and adds cells incrementally.

use rayon::prelude::*;

use crate::domain::{DomainKind, FieldBundle, GridDomain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Conn4,
    Conn8,
    Conn6,
    Conn18,
    Conn26,
}

impl Connectivity {
    pub fn default_for(kind: DomainKind) -> Connectivity {
        match kind {
            DomainKind::Square2D | DomainKind::SphereLatLon => Connectivity::Conn8,
            DomainKind::Cube3D => Connectivity::Conn26,
        }
    }

    pub fn compatible_with(self, kind: DomainKind) -> bool {
        match kind {
            DomainKind::Square2D | DomainKind::SphereLatLon => {
                matches!(self, Connectivity::Conn4 | Connectivity::Conn8)
            }
            DomainKind::Cube3D => matches!(
                self,
                Connectivity::Conn6 | Connectivity::Conn18 | Connectivity::Conn26
            ),
        }
    }

    /// Complement connectivity for background labeling.
    pub fn dual(self) -> Connectivity {
        match self {
            Connectivity::Conn4 => Connectivity::Conn8,
            Connectivity::Conn8 => Connectivity::Conn4,
            Connectivity::Conn6 => Connectivity::Conn26,
            Connectivity::Conn18 => Connectivity::Conn6,
            Connectivity::Conn26 => Connectivity::Conn6,
        }
    }

    /// Maximum coordinate-difference count that still glues two cells.
    fn glue_level(self) -> u32 {
        match self {
            Connectivity::Conn4 | Connectivity::Conn6 => 1,
            Connectivity::Conn18 => 2,
            Connectivity::Conn8 => 2,
            Connectivity::Conn26 => 3,
        }
    }

    pub fn parse(s: &str) -> Result<Connectivity> {
        match s {
            "4" => Ok(Connectivity::Conn4),
            "8" => Ok(Connectivity::Conn8),
            "6" => Ok(Connectivity::Conn6),
            "18" => Ok(Connectivity::Conn18),
            "26" => Ok(Connectivity::Conn26),
            other => Err(Error::InvalidInput(format!("unknown connectivity '{other}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Connectivity::Conn4 => "4",
            Connectivity::Conn8 => "8",
            Connectivity::Conn6 => "6",
            Connectivity::Conn18 => "18",
            Connectivity::Conn26 => "26",
        }
    }
}

/// Boolean excursion mask over the sites of a domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExcursionMask {
    pub domain: GridDomain,
    pub included: Vec<bool>,
}

/// Site `k` is in the excursion set iff `T(s_k) >= u` and `k` is unmasked.
pub fn excursion_mask(bundle: &FieldBundle, field_index: usize, u: f64) -> ExcursionMask {
    let values = bundle.field(field_index);
    let included = values
        .iter()
        .enumerate()
        .map(|(k, &v)| v >= u && bundle.site_included(k))
        .collect();
    ExcursionMask {
        domain: bundle.domain,
        included,
    }
}

/// Euler characteristics of one field at many levels.
#[derive(Debug, Clone)]
pub struct EcProfile {
    pub levels: Vec<f64>,
    /// `ec[field][level]`
    pub ec: Vec<Vec<i64>>,
    pub mean_ec: Vec<f64>,
}

impl EcProfile {
    pub fn field_count(&self) -> usize {
        self.ec.len()
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// CSV export: `u,t1,...,tF,mean_ec`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u");
        for i in 0..self.field_count() {
            out.push_str(&format!(",t{}", i + 1));
        }
        out.push_str(",mean_ec\n");
        for j in 0..self.level_count() {
            out.push_str(&format!("{}", self.levels[j]));
            for row in &self.ec {
                out.push_str(&format!(",{}", row[j]));
            }
            out.push_str(&format!(",{}\n", self.mean_ec[j]));
        }
        out
    }
}

/// One shared lattice cell: its dimension, the sites whose closed cells
/// contain it, and which pairs of those sites glue at the active
/// connectivity (bitmask adjacency).
struct Cell {
    dim: u8,
    n: u8,
    sites: [usize; 8],
    adj: [u8; 8],
}

impl Cell {
    fn from_codes(dim: u8, sites: &[usize], codes: &[u8], glue: u32) -> Cell {
        let n = sites.len();
        let mut c = Cell {
            dim,
            n: n as u8,
            sites: [0; 8],
            adj: [0; 8],
        };
        c.sites[..n].copy_from_slice(sites);
        for i in 0..n {
            for j in 0..n {
                if i != j && (codes[i] ^ codes[j]).count_ones() <= glue {
                    c.adj[i] |= 1 << j;
                }
            }
        }
        c
    }

    fn complete(dim: u8, sites: &[usize]) -> Cell {
        let n = sites.len();
        let mut c = Cell {
            dim,
            n: n as u8,
            sites: [0; 8],
            adj: [0; 8],
        };
        c.sites[..n].copy_from_slice(sites);
        let all = ((1u16 << n) - 1) as u8;
        for i in 0..n {
            c.adj[i] = all & !(1 << i);
        }
        c
    }
}

/// Number of glued groups among the sites flagged in `inc`.
fn component_count(mut inc: u8, adj: &[u8; 8]) -> i64 {
    let mut comps = 0i64;
    while inc != 0 {
        comps += 1;
        let mut visited = inc & inc.wrapping_neg(); // lowest set bit
        let mut frontier = visited;
        while frontier != 0 {
            let mut next = 0u8;
            let mut fr = frontier;
            while fr != 0 {
                let i = fr.trailing_zeros() as usize;
                fr &= fr - 1;
                next |= adj[i] & inc;
            }
            next &= !visited;
            visited |= next;
            frontier = next;
        }
        inc &= !visited;
    }
    comps
}

/// Cell-complex view of a domain under a fixed connectivity.
pub struct Topology {
    domain: GridDomain,
    conn: Connectivity,
    glue: u32,
}

impl Topology {
    pub fn new(domain: GridDomain, conn: Connectivity) -> Result<Topology> {
        if !conn.compatible_with(domain.kind) {
            return Err(Error::InvalidInput(format!(
                "connectivity {} incompatible with domain {}",
                conn.as_str(),
                domain.kind.as_str()
            )));
        }
        Ok(Topology {
            domain,
            conn,
            glue: conn.glue_level(),
        })
    }

    pub fn connectivity(&self) -> Connectivity {
        self.conn
    }

    /// Euler characteristic of a mask by direct enumeration of every shared
    /// lattice cell; independent of the incremental sweep path.
    pub fn euler_characteristic(&self, mask: &ExcursionMask) -> i64 {
        assert_eq!(mask.domain, self.domain, "mask/domain mismatch");
        let inc = &mask.included;
        let mut ec: i64 = inc.iter().filter(|&&b| b).count() as i64;
        self.for_each_shared_cell(&mut |cell: &Cell| {
            let mut bits = 0u8;
            for t in 0..cell.n as usize {
                if inc[cell.sites[t]] {
                    bits |= 1 << t;
                }
            }
            if bits == 0 {
                return;
            }
            let mult = component_count(bits, &cell.adj);
            let n_inc = bits.count_ones() as i64;
            let term = mult - n_inc;
            if cell.dim % 2 == 0 {
                ec += term;
            } else {
                ec -= term;
            }
        });
        ec
    }

    /// EC change from switching `site` on, given the current inclusion state.
    fn include_delta(&self, included: &[bool], site: usize) -> i64 {
        let mut delta = 1i64; // a closed cell on its own has EC 1
        self.for_each_cell_of_site(site, &mut |cell: &Cell| {
            let mut bits = 0u8;
            let mut own = 0u8;
            for t in 0..cell.n as usize {
                let s = cell.sites[t];
                if s == site {
                    own = 1 << t;
                } else if included[s] {
                    bits |= 1 << t;
                }
            }
            let before = component_count(bits, &cell.adj);
            let after = component_count(bits | own, &cell.adj);
            // multiplicity changes by after-before, incident count by one
            let term = after - before - 1;
            if cell.dim % 2 == 0 {
                delta += term;
            } else {
                delta -= term;
            }
        });
        delta
    }

    fn for_each_shared_cell(&self, f: &mut dyn FnMut(&Cell)) {
        let g = self.domain.grid_size;
        match self.domain.kind {
            DomainKind::Square2D => {
                for vy in 0..=g {
                    for vx in 0..=g {
                        if let Some(c) = self.square_vertex(vx, vy) {
                            f(&c);
                        }
                    }
                }
                for vy in 1..g {
                    for x in 0..g {
                        f(&self.square_hedge(x, vy));
                    }
                }
                for vx in 1..g {
                    for y in 0..g {
                        f(&self.square_vedge(vx, y));
                    }
                }
            }
            DomainKind::Cube3D => {
                for vz in 0..=g {
                    for vy in 0..=g {
                        for vx in 0..=g {
                            if let Some(c) = self.cube_vertex(vx, vy, vz) {
                                f(&c);
                            }
                        }
                    }
                }
                for axis in 0..3 {
                    // edges along `axis`; the two transverse lattice coords
                    // must both be interior-or-boundary with >=2 sites
                    for a in 0..g {
                        for vb in 0..=g {
                            for vc in 0..=g {
                                if let Some(c) = self.cube_edge(axis, a, vb, vc) {
                                    f(&c);
                                }
                            }
                        }
                    }
                    for va in 1..g {
                        for b in 0..g {
                            for cc in 0..g {
                                f(&self.cube_face(axis, va, b, cc));
                            }
                        }
                    }
                }
            }
            DomainKind::SphereLatLon => {
                let rows = self.domain.lat_rows();
                for rv in 0..=rows {
                    for c in 0..g {
                        f(&self.sphere_vertex(rv, c));
                        f(&self.sphere_ring_edge(rv, c));
                    }
                }
                for r in 0..rows {
                    for c in 0..g {
                        f(&self.sphere_meridian_edge(r, c));
                    }
                }
            }
        }
    }

    fn for_each_cell_of_site(&self, site: usize, f: &mut dyn FnMut(&Cell)) {
        let g = self.domain.grid_size;
        match self.domain.kind {
            DomainKind::Square2D => {
                let x = site % g;
                let y = site / g;
                for vy in y..=y + 1 {
                    for vx in x..=x + 1 {
                        if let Some(c) = self.square_vertex(vx, vy) {
                            f(&c);
                        }
                    }
                }
                for vy in [y, y + 1] {
                    if vy >= 1 && vy <= g - 1 {
                        f(&self.square_hedge(x, vy));
                    }
                }
                for vx in [x, x + 1] {
                    if vx >= 1 && vx <= g - 1 {
                        f(&self.square_vedge(vx, y));
                    }
                }
            }
            DomainKind::Cube3D => {
                let x = site % g;
                let y = (site / g) % g;
                let z = site / (g * g);
                for vz in z..=z + 1 {
                    for vy in y..=y + 1 {
                        for vx in x..=x + 1 {
                            if let Some(c) = self.cube_vertex(vx, vy, vz) {
                                f(&c);
                            }
                        }
                    }
                }
                let coords = [x, y, z];
                for axis in 0..3 {
                    let (b, cc) = match axis {
                        0 => (y, z),
                        1 => (x, z),
                        _ => (x, y),
                    };
                    for vb in [b, b + 1] {
                        for vc in [cc, cc + 1] {
                            if let Some(cell) = self.cube_edge(axis, coords[axis], vb, vc) {
                                f(&cell);
                            }
                        }
                    }
                    for va in [coords[axis], coords[axis] + 1] {
                        if va >= 1 && va <= g - 1 {
                            f(&self.cube_face(axis, va, b, cc));
                        }
                    }
                }
            }
            DomainKind::SphereLatLon => {
                let rows = self.domain.lat_rows();
                let north = rows * g;
                let south = rows * g + 1;
                if site == north {
                    for c in 0..g {
                        f(&self.sphere_vertex(0, c));
                        f(&self.sphere_ring_edge(0, c));
                    }
                } else if site == south {
                    for c in 0..g {
                        f(&self.sphere_vertex(rows, c));
                        f(&self.sphere_ring_edge(rows, c));
                    }
                } else {
                    let r = site / g;
                    let c = site % g;
                    for rv in [r, r + 1] {
                        for col in [c, (c + 1) % g] {
                            f(&self.sphere_vertex(rv, col));
                        }
                        f(&self.sphere_ring_edge(rv, c));
                    }
                    for col in [c, (c + 1) % g] {
                        f(&self.sphere_meridian_edge(r, col));
                    }
                }
            }
        }
    }

    // --- square cells -----------------------------------------------------

    fn square_vertex(&self, vx: usize, vy: usize) -> Option<Cell> {
        let g = self.domain.grid_size;
        let mut sites = [0usize; 4];
        let mut codes = [0u8; 4];
        let mut n = 0;
        for sy in vy.saturating_sub(1)..=vy.min(g - 1) {
            for sx in vx.saturating_sub(1)..=vx.min(g - 1) {
                sites[n] = sy * g + sx;
                codes[n] = ((sx == vx) as u8) | (((sy == vy) as u8) << 1);
                n += 1;
            }
        }
        if n < 2 {
            return None;
        }
        Some(Cell::from_codes(0, &sites[..n], &codes[..n], self.glue))
    }

    /// Horizontal lattice edge from (x,vy) to (x+1,vy), shared between the
    /// sites below and above; exists for 1 <= vy <= G-1.
    fn square_hedge(&self, x: usize, vy: usize) -> Cell {
        let g = self.domain.grid_size;
        Cell::complete(1, &[(vy - 1) * g + x, vy * g + x])
    }

    fn square_vedge(&self, vx: usize, y: usize) -> Cell {
        let g = self.domain.grid_size;
        Cell::complete(1, &[y * g + vx - 1, y * g + vx])
    }

    // --- cube cells --------------------------------------------------------

    fn cube_vertex(&self, vx: usize, vy: usize, vz: usize) -> Option<Cell> {
        let g = self.domain.grid_size;
        let mut sites = [0usize; 8];
        let mut codes = [0u8; 8];
        let mut n = 0;
        for sz in vz.saturating_sub(1)..=vz.min(g - 1) {
            for sy in vy.saturating_sub(1)..=vy.min(g - 1) {
                for sx in vx.saturating_sub(1)..=vx.min(g - 1) {
                    sites[n] = (sz * g + sy) * g + sx;
                    codes[n] = ((sx == vx) as u8)
                        | (((sy == vy) as u8) << 1)
                        | (((sz == vz) as u8) << 2);
                    n += 1;
                }
            }
        }
        if n < 2 {
            return None;
        }
        Some(Cell::from_codes(0, &sites[..n], &codes[..n], self.glue))
    }

    /// Lattice edge along `axis` at position `a` (site coordinate along the
    /// axis) and transverse lattice coordinates `(vb, vc)`.
    fn cube_edge(&self, axis: usize, a: usize, vb: usize, vc: usize) -> Option<Cell> {
        let g = self.domain.grid_size;
        let mut sites = [0usize; 4];
        let mut codes = [0u8; 4];
        let mut n = 0;
        for sb in vb.saturating_sub(1)..=vb.min(g - 1) {
            for sc in vc.saturating_sub(1)..=vc.min(g - 1) {
                let (x, y, z) = match axis {
                    0 => (a, sb, sc),
                    1 => (sb, a, sc),
                    _ => (sb, sc, a),
                };
                sites[n] = (z * g + y) * g + x;
                codes[n] = ((sb == vb) as u8) | (((sc == vc) as u8) << 1);
                n += 1;
            }
        }
        if n < 2 {
            return None;
        }
        Some(Cell::from_codes(1, &sites[..n], &codes[..n], self.glue))
    }

    /// Lattice face normal to `axis` at lattice coordinate `va` (1..G-1),
    /// shared by the two face-adjacent sites.
    fn cube_face(&self, axis: usize, va: usize, b: usize, c: usize) -> Cell {
        let g = self.domain.grid_size;
        let idx = |a: usize| -> usize {
            let (x, y, z) = match axis {
                0 => (a, b, c),
                1 => (b, a, c),
                _ => (b, c, a),
            };
            (z * g + y) * g + x
        };
        Cell::complete(2, &[idx(va - 1), idx(va)])
    }

    // --- sphere cells -------------------------------------------------------
    //
    // Vertex rings rv = 0..=R between plate rows; ring edges live on those
    // rings; meridian edges run between rings within a plate row. The pole
    // plates are closed fans touching every ring-0 (ring-R) vertex and edge;
    // a cap and its two neighboring quads at a ring vertex are pairwise
    // edge-adjacent, so those cells glue under both connectivities.

    fn sphere_site(&self, r: usize, c: usize) -> usize {
        let g = self.domain.grid_size;
        r * g + (c % g)
    }

    fn sphere_vertex(&self, rv: usize, c: usize) -> Cell {
        let g = self.domain.grid_size;
        let rows = self.domain.lat_rows();
        let cm1 = (c + g - 1) % g;
        if rv == 0 {
            let north = rows * g;
            Cell::complete(
                0,
                &[north, self.sphere_site(0, cm1), self.sphere_site(0, c)],
            )
        } else if rv == rows {
            let south = rows * g + 1;
            Cell::complete(
                0,
                &[
                    south,
                    self.sphere_site(rows - 1, cm1),
                    self.sphere_site(rows - 1, c),
                ],
            )
        } else {
            let sites = [
                self.sphere_site(rv - 1, cm1),
                self.sphere_site(rv - 1, c),
                self.sphere_site(rv, cm1),
                self.sphere_site(rv, c),
            ];
            let codes = [0b00u8, 0b01, 0b10, 0b11];
            Cell::from_codes(0, &sites, &codes, self.glue)
        }
    }

    fn sphere_ring_edge(&self, rv: usize, c: usize) -> Cell {
        let g = self.domain.grid_size;
        let rows = self.domain.lat_rows();
        let above = if rv == 0 {
            rows * g
        } else {
            self.sphere_site(rv - 1, c)
        };
        let below = if rv == rows {
            rows * g + 1
        } else {
            self.sphere_site(rv, c)
        };
        Cell::complete(1, &[above, below])
    }

    fn sphere_meridian_edge(&self, r: usize, c: usize) -> Cell {
        let g = self.domain.grid_size;
        Cell::complete(
            1,
            &[self.sphere_site(r, (c + g - 1) % g), self.sphere_site(r, c)],
        )
    }
}

/// Euler characteristic of one mask under the given connectivity.
pub fn euler_characteristic(mask: &ExcursionMask, conn: Connectivity) -> Result<i64> {
    let topo = Topology::new(mask.domain, conn)?;
    Ok(topo.euler_characteristic(mask))
}

/// EC at every level for every field of the bundle, via the descending
/// incremental sweep (one sort per field, binary-search level bucketing).
pub fn ec_profile(
    bundle: &FieldBundle,
    levels: &[f64],
    conn: Connectivity,
) -> Result<EcProfile> {
    if levels.windows(2).any(|w| w[0] >= w[1]) || levels.is_empty() {
        return Err(Error::NonMonotoneLevels);
    }
    let topo = Topology::new(bundle.domain, conn)?;
    let u = levels.len();
    let ec: Vec<Vec<i64>> = (0..bundle.field_count)
        .into_par_iter()
        .map(|i| sweep_field(&topo, bundle, i, levels))
        .collect();
    let f = bundle.field_count as f64;
    let mean_ec = (0..u)
        .map(|j| ec.iter().map(|row| row[j] as f64).sum::<f64>() / f)
        .collect();
    Ok(EcProfile {
        levels: levels.to_vec(),
        ec,
        mean_ec,
    })
}

fn sweep_field(topo: &Topology, bundle: &FieldBundle, field: usize, levels: &[f64]) -> Vec<i64> {
    let values = bundle.field(field);
    let k = values.len();
    let u = levels.len();
    // sites that ever enter, with the sweep step at which they do
    let mut entering: Vec<(u32, u32)> = Vec::with_capacity(k);
    for s in 0..k {
        if !bundle.site_included(s) || values[s] < levels[0] {
            continue;
        }
        // largest j with levels[j] <= value
        let j = levels.partition_point(|&l| l <= values[s]) - 1;
        entering.push((s as u32, j as u32));
    }
    entering.sort_unstable_by(|a, b| b.1.cmp(&a.1));
    let mut included = vec![false; k];
    let mut ec = vec![0i64; u];
    let mut run = 0i64;
    let mut idx = 0usize;
    for j in (0..u).rev() {
        while idx < entering.len() && entering[idx].1 as usize == j {
            let s = entering[idx].0 as usize;
            run += topo.include_delta(&included, s);
            included[s] = true;
            idx += 1;
        }
        ec[j] = run;
    }
    ec
}

/// Topological feature counts from labeling, used as the EC oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Features {
    TwoD {
        components: usize,
        /// For the sphere the full-domain mask yields -1 (no bounding loop).
        holes: i64,
    },
    ThreeD {
        components: usize,
        handles: i64,
        voids: usize,
    },
}

impl Features {
    pub fn euler_characteristic(&self) -> i64 {
        match *self {
            Features::TwoD { components, holes } => components as i64 - holes,
            Features::ThreeD {
                components,
                handles,
                voids,
            } => components as i64 - handles + voids as i64,
        }
    }
}

/// Components via union-find under `conn`; holes/voids via complement
/// labeling under the dual connectivity. 3D handles are recovered as
/// `components + voids - EC`.
pub fn count_features(mask: &ExcursionMask, conn: Connectivity) -> Result<Features> {
    let topo = Topology::new(mask.domain, conn)?;
    let components = label_components(mask.domain, &mask.included, conn);
    let complement: Vec<bool> = mask.included.iter().map(|&b| !b).collect();
    let dual = conn.dual();
    match mask.domain.kind {
        DomainKind::Square2D => {
            let enclosed = enclosed_complement_components(mask.domain, &complement, dual);
            Ok(Features::TwoD {
                components,
                holes: enclosed as i64,
            })
        }
        DomainKind::SphereLatLon => {
            // every complement component beyond the first bounds a loop;
            // the closed surface has no outside
            let comp = label_components(mask.domain, &complement, dual);
            Ok(Features::TwoD {
                components,
                holes: comp as i64 - 1,
            })
        }
        DomainKind::Cube3D => {
            let voids = enclosed_complement_components(mask.domain, &complement, dual);
            let ec = topo.euler_characteristic(mask);
            Ok(Features::ThreeD {
                components,
                handles: components as i64 + voids as i64 - ec,
                voids,
            })
        }
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let gp = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = gp;
            i = gp;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra as usize] = rb;
        }
    }
}

fn for_each_neighbor(
    domain: GridDomain,
    conn: Connectivity,
    site: usize,
    f: &mut dyn FnMut(usize),
) {
    let g = domain.grid_size;
    match domain.kind {
        DomainKind::Square2D => {
            let x = (site % g) as isize;
            let y = (site / g) as isize;
            let diag = conn.glue_level() >= 2;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    if !diag && dx != 0 && dy != 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < g as isize && ny < g as isize {
                        f((ny * g as isize + nx) as usize);
                    }
                }
            }
        }
        DomainKind::Cube3D => {
            let x = (site % g) as isize;
            let y = ((site / g) % g) as isize;
            let z = (site / (g * g)) as isize;
            let max_diff = conn.glue_level();
            for dz in -1..=1isize {
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let d = (dx != 0) as u32 + (dy != 0) as u32 + (dz != 0) as u32;
                        if d == 0 || d > max_diff {
                            continue;
                        }
                        let (nx, ny, nz) = (x + dx, y + dy, z + dz);
                        if nx >= 0
                            && ny >= 0
                            && nz >= 0
                            && nx < g as isize
                            && ny < g as isize
                            && nz < g as isize
                        {
                            f(((nz * g as isize + ny) * g as isize + nx) as usize);
                        }
                    }
                }
            }
        }
        DomainKind::SphereLatLon => {
            let rows = domain.lat_rows();
            let north = rows * g;
            let south = rows * g + 1;
            if site == north {
                for c in 0..g {
                    f(c);
                }
                return;
            }
            if site == south {
                for c in 0..g {
                    f((rows - 1) * g + c);
                }
                return;
            }
            let r = site / g;
            let c = site % g;
            let diag = conn.glue_level() >= 2;
            let cols: [usize; 2] = [(c + g - 1) % g, (c + 1) % g];
            for nc in cols {
                f(r * g + nc);
            }
            if r == 0 {
                f(north);
            } else {
                f((r - 1) * g + c);
                if diag {
                    for nc in cols {
                        f((r - 1) * g + nc);
                    }
                }
            }
            if r + 1 == rows {
                f(south);
            } else {
                f((r + 1) * g + c);
                if diag {
                    for nc in cols {
                        f((r + 1) * g + nc);
                    }
                }
            }
        }
    }
}

fn label_components(domain: GridDomain, included: &[bool], conn: Connectivity) -> usize {
    let mut uf = UnionFind::new(included.len());
    for s in 0..included.len() {
        if !included[s] {
            continue;
        }
        for_each_neighbor(domain, conn, s, &mut |n| {
            if included[n] {
                uf.union(s as u32, n as u32);
            }
        });
    }
    let mut roots = std::collections::HashSet::new();
    for s in 0..included.len() {
        if included[s] {
            let r = uf.find(s as u32);
            roots.insert(r);
        }
    }
    roots.len()
}

/// Complement components not connected to the domain boundary ("outside").
fn enclosed_complement_components(
    domain: GridDomain,
    complement: &[bool],
    conn: Connectivity,
) -> usize {
    let n = complement.len();
    let outside = n as u32; // virtual background node
    let mut uf = UnionFind::new(n + 1);
    let g = domain.grid_size;
    let on_boundary = |s: usize| -> bool {
        match domain.kind {
            DomainKind::Square2D => {
                let x = s % g;
                let y = s / g;
                x == 0 || y == 0 || x == g - 1 || y == g - 1
            }
            DomainKind::Cube3D => {
                let x = s % g;
                let y = (s / g) % g;
                let z = s / (g * g);
                x == 0 || y == 0 || z == 0 || x == g - 1 || y == g - 1 || z == g - 1
            }
            DomainKind::SphereLatLon => false,
        }
    };
    for s in 0..n {
        if !complement[s] {
            continue;
        }
        if on_boundary(s) {
            uf.union(s as u32, outside);
        }
        for_each_neighbor(domain, conn, s, &mut |nb| {
            if complement[nb] {
                uf.union(s as u32, nb as u32);
            }
        });
    }
    let out_root = uf.find(outside);
    let mut roots = std::collections::HashSet::new();
    for s in 0..n {
        if complement[s] {
            let r = uf.find(s as u32);
            if r != out_root {
                roots.insert(r);
            }
        }
    }
    roots.len()
}
