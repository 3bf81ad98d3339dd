//! Spatial neighbors within 1 km and the free-shot injection policy.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::divergence::Boundary;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kb::{FreeShot, FreeShotLibrary, KbEntry, Side, GLOBAL_SCOPE};
use crate::model::{PdeCategory, Record};

pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const DEFAULT_RADIUS_KM: f64 = 1.0;
pub const DEFAULT_K_MAX: usize = 3;

fn km_per_degree() -> f64 {
    EARTH_RADIUS_KM * std::f64::consts::PI / 180.0
}

/// Great-circle distance between two (lon, lat) points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Uniform lon/lat grid. Cells are `cell_km` tall; their width in degrees is
/// sized at the highest indexed latitude so a cell is never narrower than
/// `cell_km`. Longitude wrap-around at ±180° is not handled.
#[derive(Debug, Clone)]
pub struct GridIndex {
    lat_step: f64,
    lon_step: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<(f64, f64)>,
}

impl GridIndex {
    pub fn build(points: Vec<(f64, f64)>, cell_km: f64) -> GridIndex {
        let lat_step = cell_km / km_per_degree();
        let ref_lat = points
            .iter()
            .map(|p| p.1.abs())
            .fold(0.0_f64, f64::max)
            .min(89.0);
        let lon_step = lat_step / ref_lat.to_radians().cos();
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells
                .entry(Self::cell_of(*p, lon_step, lat_step))
                .or_default()
                .push(i);
        }
        GridIndex {
            lat_step,
            lon_step,
            cells,
            points,
        }
    }

    fn cell_of(p: (f64, f64), lon_step: f64, lat_step: f64) -> (i64, i64) {
        (
            (p.0 / lon_step).floor() as i64,
            (p.1 / lat_step).floor() as i64,
        )
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Indices of all points within `radius_km` of `center`, with distances.
    pub fn within(&self, center: (f64, f64), radius_km: f64) -> Vec<(usize, f64)> {
        let dlat = radius_km / km_per_degree();
        let far_lat = (center.1.abs() + dlat).min(89.9);
        let dlon = dlat / far_lat.to_radians().cos();
        let span_lat = (dlat / self.lat_step).ceil() as i64;
        let span_lon = (dlon / self.lon_step).ceil() as i64;
        let (cx, cy) = Self::cell_of(center, self.lon_step, self.lat_step);
        let mut out = Vec::new();
        for gx in cx - span_lon..=cx + span_lon {
            for gy in cy - span_lat..=cy + span_lat {
                let Some(ids) = self.cells.get(&(gx, gy)) else {
                    continue;
                };
                for &i in ids {
                    let d = haversine_km(center, self.points[i]);
                    if d <= radius_km {
                        out.push((i, d));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborContext<'a> {
    pub entry: &'a KbEntry,
    pub distance_km: f64,
    /// 1-based, nondecreasing in distance.
    pub rank: usize,
    pub within_1km: bool,
}

/// Labeled KB entries indexed by location.
#[derive(Debug, Clone)]
pub struct NeighborIndex<'a> {
    entries: &'a [KbEntry],
    grid: GridIndex,
}

impl<'a> NeighborIndex<'a> {
    pub fn build(entries: &'a [KbEntry]) -> NeighborIndex<'a> {
        let points = entries.iter().map(|e| e.record.coords()).collect();
        NeighborIndex {
            entries,
            grid: GridIndex::build(points, DEFAULT_RADIUS_KM),
        }
    }

    pub fn entries(&self) -> &'a [KbEntry] {
        self.entries
    }

    /// Up to `k_max` nearest entries within `radius_km`, ties by row_id. An
    /// entry with the target's own row_id is skipped.
    pub fn find_neighbors(
        &self,
        target: &Record,
        k_max: usize,
        radius_km: f64,
    ) -> Vec<NeighborContext<'a>> {
        let mut hits: Vec<(usize, f64)> = self
            .grid
            .within(target.coords(), radius_km)
            .into_iter()
            .filter(|(i, _)| self.entries[*i].row_id() != target.row_id)
            .collect();
        hits.sort_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(self.entries[a.0].row_id().cmp(&self.entries[b.0].row_id()))
        });
        hits.into_iter()
            .take(k_max)
            .enumerate()
            .map(|(rank, (i, d))| NeighborContext {
                entry: &self.entries[i],
                distance_km: d,
                rank: rank + 1,
                within_1km: d <= DEFAULT_RADIUS_KM,
            })
            .collect()
    }

    pub fn find_neighbors_batch(
        &self,
        targets: &[Record],
        k_max: usize,
        radius_km: f64,
        exec: Execution,
    ) -> Vec<Vec<NeighborContext<'a>>> {
        exec.map(targets, |t| self.find_neighbors(t, k_max, radius_km))
    }
}

/// Exhaustive scan with the same ordering rules as [`NeighborIndex::find_neighbors`].
pub fn scan_neighbors(
    entries: &[KbEntry],
    target: &Record,
    k_max: usize,
    radius_km: f64,
) -> Vec<(i64, f64)> {
    let mut all: Vec<(i64, f64)> = entries
        .iter()
        .filter(|e| e.row_id() != target.row_id)
        .map(|e| (e.row_id(), haversine_km(target.coords(), e.record.coords())))
        .filter(|(_, d)| *d <= radius_km)
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k_max);
    all
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardSlot {
    pub boundary: Boundary,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub neighbor_count: usize,
    pub prototypes_per_level: usize,
    pub hard_examples: Vec<HardSlot>,
}

impl InjectionPlan {
    pub fn total_shots(&self) -> usize {
        3 * self.prototypes_per_level + self.hard_examples.len()
    }
}

/// The injection policy as a function of neighbor count and the nearest
/// neighbor's label (ignored when there are no neighbors).
pub fn plan_injection_for(
    neighbor_count: usize,
    nearest_label: Option<PdeCategory>,
) -> Result<InjectionPlan> {
    let slot = |boundary, side| HardSlot { boundary, side };
    let (prototypes_per_level, hard_examples) = match neighbor_count {
        3 => (0, vec![]),
        2 => {
            let side = match nearest_label.unwrap_or(PdeCategory::Low) {
                PdeCategory::Low => slot(Boundary::Occurrence, Side::For0),
                PdeCategory::Medium => slot(Boundary::Occurrence, Side::For1),
                PdeCategory::High => slot(Boundary::Severity, Side::For2),
            };
            (1, vec![side])
        }
        1 => {
            let pair = if nearest_label == Some(PdeCategory::High) {
                vec![
                    slot(Boundary::Severity, Side::For1),
                    slot(Boundary::Severity, Side::For2),
                ]
            } else {
                vec![
                    slot(Boundary::Occurrence, Side::For0),
                    slot(Boundary::Occurrence, Side::For1),
                ]
            };
            (1, pair)
        }
        0 => (
            2,
            vec![
                slot(Boundary::Occurrence, Side::For0),
                slot(Boundary::Severity, Side::For2),
            ],
        ),
        n => return Err(Error::TooManyNeighbors(n)),
    };
    Ok(InjectionPlan {
        neighbor_count,
        prototypes_per_level,
        hard_examples,
    })
}

pub fn plan_injection(neighbors: &[NeighborContext<'_>]) -> Result<InjectionPlan> {
    let nearest = neighbors
        .iter()
        .min_by_key(|n| n.rank)
        .map(|n| n.entry.label());
    plan_injection_for(neighbors.len(), nearest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedShot {
    pub shot: FreeShot,
    pub scope: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolvedShots {
    pub shots: Vec<ResolvedShot>,
    /// Slots no library could fill without repeating a row.
    pub unfilled: Vec<String>,
}

/// Fills the plan's slots from the target's HUC12 library when it can, and
/// from the global library otherwise. A hard slot that neither library can
/// fill with a fresh row falls back to the other side of the same boundary.
pub fn resolve_free_shots(
    plan: &InjectionPlan,
    target_huc12: &str,
    libraries: &BTreeMap<String, FreeShotLibrary>,
) -> Result<ResolvedShots> {
    let global = libraries
        .get(GLOBAL_SCOPE)
        .ok_or_else(|| Error::InvalidInput("no global free-shot library".into()))?;
    let local = libraries
        .get(target_huc12)
        .filter(|l| l.scope != GLOBAL_SCOPE);
    let sources: Vec<&FreeShotLibrary> = local.into_iter().chain(std::iter::once(global)).collect();

    let mut out = ResolvedShots::default();
    let mut used = BTreeSet::new();
    if plan.prototypes_per_level > 0 {
        for level in PdeCategory::ALL {
            let n = plan.prototypes_per_level;
            let source = sources.iter().find(|lib| lib.prototypes(level).len() >= n);
            match source {
                Some(lib) => {
                    for shot in lib.prototypes(level).iter().take(n) {
                        used.insert(shot.row_id);
                        out.shots.push(ResolvedShot {
                            shot: shot.clone(),
                            scope: lib.scope.clone(),
                        });
                    }
                }
                None => out.unfilled.push(format!("prototypes.{level}")),
            }
        }
    }
    for slot in &plan.hard_examples {
        let [a, b] = Side::sides(slot.boundary);
        let other = if slot.side == a { b } else { a };
        let found = [slot.side, other].into_iter().find_map(|side| {
            sources.iter().find_map(|lib| {
                lib.hard_examples
                    .get(slot.boundary, side)
                    .filter(|s| !used.contains(&s.row_id))
                    .map(|s| (s, lib.scope.clone()))
            })
        });
        match found {
            Some((shot, scope)) => {
                used.insert(shot.row_id);
                out.shots.push(ResolvedShot {
                    shot: shot.clone(),
                    scope,
                });
            }
            None => out
                .unfilled
                .push(format!("{:?}.{}", slot.boundary, slot.side).to_lowercase()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborAudit {
    pub row_id: i64,
    pub label: PdeCategory,
    pub distance_km: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotAudit {
    pub row_id: i64,
    pub kind: crate::kb::FreeShotKind,
    pub level: PdeCategory,
    pub scope: String,
}

/// One JSON line per target describing its retrieved context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalAudit {
    pub row_id: i64,
    pub neighbors: Vec<NeighborAudit>,
    pub plan: InjectionPlan,
    pub free_shots: Vec<ShotAudit>,
    pub unfilled: Vec<String>,
}

impl RetrievalAudit {
    pub fn new(
        row_id: i64,
        neighbors: &[NeighborContext<'_>],
        plan: &InjectionPlan,
        shots: &ResolvedShots,
    ) -> Self {
        RetrievalAudit {
            row_id,
            neighbors: neighbors
                .iter()
                .map(|n| NeighborAudit {
                    row_id: n.entry.row_id(),
                    label: n.entry.label(),
                    distance_km: n.distance_km,
                    rank: n.rank,
                })
                .collect(),
            plan: plan.clone(),
            free_shots: shots
                .shots
                .iter()
                .map(|s| ShotAudit {
                    row_id: s.shot.row_id,
                    kind: s.shot.kind,
                    level: s.shot.level,
                    scope: s.scope.clone(),
                })
                .collect(),
            unfilled: shots.unfilled.clone(),
        }
    }
}
