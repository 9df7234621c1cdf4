//! Navigable graph, shortest routes and turn-by-turn guidance.
//!
//! Nodes are the distinct reference-image locations; slices of one frame
//! share a node, identified by the smallest image id at that location. Two
//! nodes are joined when the straight segment between them touches no
//! boundary and is no longer than `max_edge_len` feet.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Direction, FloorPoint};
use crate::localization::LocalizationResult;
use crate::map::{Boundary, BoundaryDelta, Destination, ImageId, TopometricMap};

#[derive(Debug, Error, PartialEq)]
pub enum NavigationError {
    #[error("segment has zero length")]
    DegenerateSegment,
    #[error("node {0} is not in the graph")]
    UnknownNode(ImageId),
    #[error("destination image {0} is not in the graph")]
    UnknownDestination(ImageId),
    #[error("no path from {from} to {to}")]
    Unreachable { from: ImageId, to: ImageId },
    #[error("graph built for version {graph}, delta starts at {delta}")]
    VersionSkew { graph: u64, delta: u64 },
    #[error("graph has no nodes")]
    NoRoute,
}

/// Cross product sign of `(b - a) × (c - a)`.
fn orient(a: FloorPoint, b: FloorPoint, c: FloorPoint) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: FloorPoint, b: FloorPoint, p: FloorPoint) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection: touching endpoints and collinear overlap count.
pub fn segments_intersect(a: (FloorPoint, FloorPoint), b: (FloorPoint, FloorPoint)) -> Result<bool, NavigationError> {
    if a.0 == a.1 || b.0 == b.1 {
        return Err(NavigationError::DegenerateSegment);
    }
    Ok(intersects(a.0, a.1, b.0, b.1))
}

fn intersects(p1: FloorPoint, p2: FloorPoint, q1: FloorPoint, q2: FloorPoint) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when the segment `a`-`b` touches any boundary. A zero-length segment
/// is tested as a point.
pub fn blocked(a: FloorPoint, b: FloorPoint, boundaries: &[Boundary]) -> bool {
    boundaries.iter().any(|w| intersects(a, b, w.a, w.b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavConfig {
    /// Longest edge in feet; `f64::INFINITY` joins every visible pair.
    pub max_edge_len: f64,
    /// Distance in feet at which the user counts as being at a node.
    pub arrive_radius: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            max_edge_len: 15.0,
            arrive_radius: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavNode {
    pub id: ImageId,
    pub location: FloorPoint,
    /// Every image at this location, ascending.
    pub images: Vec<ImageId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Feet.
    pub length: f64,
}

/// Shortest-path tree towards one target node.
#[derive(Debug)]
struct Tree {
    dist: Vec<f64>,
}

#[derive(Debug)]
pub struct NavGraph {
    version: u64,
    config: NavConfig,
    scale: f64,
    nodes: Vec<NavNode>,
    by_image: HashMap<ImageId, usize>,
    /// Sorted neighbour lists `(node, length)`.
    adjacency: Vec<Vec<(usize, f64)>>,
    boundaries: Vec<Boundary>,
    trees: Mutex<HashMap<usize, Arc<Tree>>>,
}

impl Clone for NavGraph {
    fn clone(&self) -> Self {
        Self {
            version: self.version,
            config: self.config,
            scale: self.scale,
            nodes: self.nodes.clone(),
            by_image: self.by_image.clone(),
            adjacency: self.adjacency.clone(),
            boundaries: self.boundaries.clone(),
            trees: Mutex::new(HashMap::new()),
        }
    }
}

impl PartialEq for NavGraph {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.nodes == other.nodes
            && self.adjacency == other.adjacency
            && self.boundaries == other.boundaries
    }
}

/// Uniform grid over node locations for pair enumeration.
struct Grid {
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(nodes: &[NavNode], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            cells.entry(Self::key(n.location, cell)).or_default().push(i);
        }
        Self { cells }
    }

    fn key(p: FloorPoint, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Pairs `(i, j)`, `i < j`, whose cells are adjacent.
    fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (&(cx, cy), members) in &self.cells {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let Some(other) = self.cells.get(&(cx + dx, cy + dy)) else { continue };
                    for &i in members {
                        for &j in other {
                            if i < j {
                                out.push((i, j));
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn candidate_pairs(nodes: &[NavNode], max_px: f64) -> Vec<(usize, usize)> {
    if max_px.is_finite() && max_px > 0.0 {
        Grid::new(nodes, max_px).pairs()
    } else {
        let n = nodes.len();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn tie_tolerance(d: f64) -> f64 {
    1e-9 * d.abs().max(1.0)
}

/// Ordered route between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    /// Node ids from start to destination.
    pub nodes: Vec<ImageId>,
    pub locations: Vec<FloorPoint>,
    /// Feet.
    pub length: f64,
    pub legs: Vec<Leg>,
}

/// One straight walk along a route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub to: ImageId,
    pub bearing: Direction,
    /// Turn from the previous leg, degrees in (-180, 180]; 0 for the first.
    pub turn: f64,
    /// Feet.
    pub distance: f64,
    pub text: String,
}

/// What the user should do next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Instruction {
    Walk {
        /// Degrees in (-180, 180], positive counter-clockwise.
        turn: f64,
        /// Absolute heading towards the target.
        bearing: Direction,
        /// Feet.
        distance: f64,
        target: ImageId,
        target_location: FloorPoint,
        /// Feet along the route from the target to the destination.
        remaining: f64,
        text: String,
    },
    Arrived {
        destination: ImageId,
        distance: f64,
    },
}

/// Spoken-style description of a relative turn.
pub fn describe_turn(turn: f64) -> &'static str {
    let a = turn.abs();
    if a < 15.0 {
        "go straight"
    } else if a > 150.0 {
        "turn around"
    } else if turn > 0.0 {
        if a < 60.0 { "bear left" } else { "turn left" }
    } else if a < 60.0 {
        "bear right"
    } else {
        "turn right"
    }
}

impl NavGraph {
    /// Builds the graph for the current map version.
    pub fn build(map: &TopometricMap, config: NavConfig) -> Self {
        let mut groups: BTreeMap<(u64, u64), Vec<ImageId>> = BTreeMap::new();
        for img in map.images() {
            groups
                .entry((img.location.x.to_bits(), img.location.y.to_bits()))
                .or_default()
                .push(img.id);
        }
        let mut nodes: Vec<NavNode> = groups
            .into_iter()
            .map(|((x, y), mut images)| {
                images.sort_unstable();
                NavNode {
                    id: images[0],
                    location: FloorPoint::new(f64::from_bits(x), f64::from_bits(y)),
                    images,
                }
            })
            .collect();
        nodes.sort_by_key(|n| n.id);
        let by_image = nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.images.iter().map(move |&id| (id, i)))
            .collect();
        let mut graph = Self {
            version: map.version(),
            config,
            scale: map.scale(),
            nodes,
            by_image,
            adjacency: Vec::new(),
            boundaries: map.boundaries().to_vec(),
            trees: Mutex::new(HashMap::new()),
        };
        let pairs = candidate_pairs(&graph.nodes, graph.max_px());
        let edges: Vec<(usize, usize, f64)> = pairs
            .into_iter()
            .filter_map(|(i, j)| graph.edge_if_clear(i, j).map(|l| (i, j, l)))
            .collect();
        graph.set_edges(edges);
        graph
    }

    fn max_px(&self) -> f64 {
        self.config.max_edge_len / self.scale
    }

    fn edge_if_clear(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = (self.nodes[i].location, self.nodes[j].location);
        let len = a.distance(&b) * self.scale;
        (len <= self.config.max_edge_len && !blocked(a, b, &self.boundaries)).then_some(len)
    }

    fn set_edges(&mut self, edges: Vec<(usize, usize, f64)>) {
        let mut adjacency = vec![Vec::new(); self.nodes.len()];
        for (i, j, l) in edges {
            adjacency[i].push((j, l));
            adjacency[j].push((i, l));
        }
        for a in &mut adjacency {
            a.sort_by_key(|x| x.0);
        }
        self.adjacency = adjacency;
        self.trees.lock().expect("tree cache lock").clear();
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn config(&self) -> &NavConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[NavNode] {
        &self.nodes
    }

    pub fn boundaries(&self) -> &[Boundary] {
        &self.boundaries
    }

    /// Undirected edges `(node id, node id, feet)`, smaller id first, sorted.
    pub fn edges(&self) -> Vec<(ImageId, ImageId, f64)> {
        let mut out: Vec<_> = self
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, adj)| {
                adj.iter()
                    .filter(move |(j, _)| i < *j)
                    .map(move |&(j, l)| (self.nodes[i].id, self.nodes[j].id, l))
            })
            .collect();
        out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        out
    }

    pub fn neighbours(&self, id: ImageId) -> Option<Vec<(ImageId, f64)>> {
        let &i = self.by_image.get(&id)?;
        Some(self.adjacency[i].iter().map(|&(j, l)| (self.nodes[j].id, l)).collect())
    }

    /// Node holding a given image.
    pub fn node_of(&self, image: ImageId) -> Option<&NavNode> {
        self.by_image.get(&image).map(|&i| &self.nodes[i])
    }

    /// Applies a boundary edit; only edges near changed boundaries are re-tested.
    pub fn rebuild_on_edit(&self, delta: &BoundaryDelta) -> Result<NavGraph, NavigationError> {
        if delta.from_version != self.version {
            return Err(NavigationError::VersionSkew {
                graph: self.version,
                delta: delta.from_version,
            });
        }
        let mut next = self.clone();
        next.version = delta.to_version;
        let removed: Vec<u32> = delta.removed.iter().map(|b| b.id).collect();
        next.boundaries.retain(|b| !removed.contains(&b.id));
        next.boundaries.extend(delta.added.iter().copied());
        let boxes: Vec<[f64; 4]> = delta
            .added
            .iter()
            .chain(&delta.removed)
            .map(|b| [b.a.x.min(b.b.x), b.a.y.min(b.b.y), b.a.x.max(b.b.x), b.a.y.max(b.b.y)])
            .collect();
        if boxes.is_empty() {
            return Ok(next);
        }
        let touches = |i: usize, j: usize| {
            let (a, b) = (self.nodes[i].location, self.nodes[j].location);
            let bb = [a.x.min(b.x), a.y.min(b.y), a.x.max(b.x), a.y.max(b.y)];
            boxes
                .iter()
                .any(|w| bb[0] <= w[2] && w[0] <= bb[2] && bb[1] <= w[3] && w[1] <= bb[3])
        };
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        for (i, adj) in self.adjacency.iter().enumerate() {
            for &(j, l) in adj {
                if i < j && !touches(i, j) {
                    edges.push((i, j, l));
                }
            }
        }
        for (i, j) in candidate_pairs(&self.nodes, self.max_px()) {
            if touches(i, j) {
                if let Some(l) = next.edge_if_clear(i, j) {
                    edges.push((i, j, l));
                }
            }
        }
        next.set_edges(edges);
        Ok(next)
    }

    fn tree(&self, target: usize) -> Arc<Tree> {
        if let Some(t) = self.trees.lock().expect("tree cache lock").get(&target) {
            return Arc::clone(t);
        }
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[target] = 0.0;
        heap.push(Entry { dist: 0.0, node: target });
        while let Some(Entry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &(next, l) in &self.adjacency[node] {
                let nd = d + l;
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(Entry { dist: nd, node: next });
                }
            }
        }
        let tree = Arc::new(Tree { dist });
        self.trees
            .lock()
            .expect("tree cache lock")
            .insert(target, Arc::clone(&tree));
        tree
    }

    /// Feet from `node` to `destination` along the graph.
    pub fn distance_to(&self, node: ImageId, destination: ImageId) -> Option<f64> {
        let from = *self.by_image.get(&node)?;
        let to = *self.by_image.get(&destination)?;
        let d = self.tree(to).dist[from];
        d.is_finite().then_some(d)
    }

    /// Shortest route between nodes holding the two images; among equal-length
    /// routes the lexicographically smallest node-id sequence wins.
    pub fn shortest_route(&self, from: ImageId, destination: &Destination) -> Result<Route, NavigationError> {
        let &s = self.by_image.get(&from).ok_or(NavigationError::UnknownNode(from))?;
        let &t = self
            .by_image
            .get(&destination.image_id)
            .ok_or(NavigationError::UnknownDestination(destination.image_id))?;
        let tree = self.tree(t);
        if !tree.dist[s].is_finite() {
            return Err(NavigationError::Unreachable {
                from,
                to: destination.image_id,
            });
        }
        let mut path = vec![s];
        let mut u = s;
        while u != t {
            let next = self.adjacency[u]
                .iter()
                .filter(|&&(v, l)| (tree.dist[u] - (l + tree.dist[v])).abs() <= tie_tolerance(tree.dist[u]))
                .map(|&(v, _)| v)
                .min_by_key(|&v| self.nodes[v].id)
                .expect("a shortest-path successor exists");
            path.push(next);
            u = next;
        }
        Ok(self.route_from_path(&path, &destination.name))
    }

    fn route_from_path(&self, path: &[usize], name: &str) -> Route {
        let mut legs = Vec::new();
        let mut length = 0.0;
        let mut prev: Option<Direction> = None;
        for w in path.windows(2) {
            let (a, b) = (&self.nodes[w[0]], &self.nodes[w[1]]);
            let bearing = a.location.bearing_to(&b.location);
            let distance = a.location.distance(&b.location) * self.scale;
            let turn = prev.map_or(0.0, |p| p.turn_to(bearing));
            length += distance;
            let last = w[1] == *path.last().unwrap();
            let text = if last {
                format!("{} and walk {:.0} ft to {}", describe_turn(turn), distance, name)
            } else {
                format!("{} and walk {:.0} ft", describe_turn(turn), distance)
            };
            legs.push(Leg {
                to: b.id,
                bearing,
                turn,
                distance,
                text,
            });
            prev = Some(bearing);
        }
        Route {
            nodes: path.iter().map(|&i| self.nodes[i].id).collect(),
            locations: path.iter().map(|&i| self.nodes[i].location).collect(),
            length,
            legs,
        }
    }

    /// Closest node, preferring ones reachable in a straight line without
    /// crossing a boundary. Ties go to the smaller id.
    pub fn nearest_node(&self, p: FloorPoint) -> Option<&NavNode> {
        let key = |n: &&NavNode| (n.location.distance(&p), n.id);
        let cmp = |a: &&NavNode, b: &&NavNode| {
            let (da, ia) = key(a);
            let (db, ib) = key(b);
            da.total_cmp(&db).then(ia.cmp(&ib))
        };
        self.nodes
            .iter()
            .filter(|n| n.location == p || !blocked(p, n.location, &self.boundaries))
            .min_by(cmp)
            .or_else(|| self.nodes.iter().min_by(cmp))
    }

    /// Next instruction for a localized user heading to `destination`.
    pub fn guide(&self, result: &LocalizationResult, destination: &Destination) -> Result<Instruction, NavigationError> {
        let here = result.location;
        let dest_node = self
            .node_of(destination.image_id)
            .ok_or(NavigationError::UnknownDestination(destination.image_id))?;
        let to_dest = here.distance(&dest_node.location) * self.scale;
        if to_dest <= self.config.arrive_radius {
            return Ok(Instruction::Arrived {
                destination: destination.image_id,
                distance: to_dest,
            });
        }
        let start = self.nearest_node(here).ok_or(NavigationError::NoRoute)?;
        let to_start = here.distance(&start.location) * self.scale;
        let route = self.shortest_route(start.id, destination)?;
        let (target, target_location, remaining) = if to_start > self.config.arrive_radius {
            (start.id, start.location, route.length)
        } else {
            let leg = &route.legs[0];
            (leg.to, route.locations[1], route.length - leg.distance)
        };
        let bearing = here.bearing_to(&target_location);
        let distance = here.distance(&target_location) * self.scale;
        let turn = match result.direction {
            Some(d) => d.turn_to(bearing),
            None => 0.0,
        };
        let text = match result.direction {
            Some(_) => format!("{} and walk {:.0} ft", describe_turn(turn), distance),
            None => format!("head {:.0}° and walk {:.0} ft", bearing.degrees(), distance),
        };
        Ok(Instruction::Walk {
            turn,
            bearing,
            distance,
            target,
            target_location,
            remaining,
            text,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::descriptors::GlobalDescriptor;
    use crate::geometry::MapPoint3;
    use crate::localization::Method;
    use crate::map::{BoundarySource, ImageOrigin, MapHeader, NewBoundary, ReferenceImage};
    use crate::localization::pnp::CameraModel;
    use crate::geometry::FloorTransform;
    use proptest::prelude::*;

    fn fp(x: f64, y: f64) -> FloorPoint {
        FloorPoint::new(x, y)
    }

    pub(crate) fn point_map(points: &[(f64, f64)], walls: &[((f64, f64), (f64, f64))]) -> TopometricMap {
        let images = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| ReferenceImage {
                id: i as u32,
                frame_id: i as u32,
                slice_index: 1,
                position: MapPoint3::new(x, 1.0, y),
                location: fp(x, y),
                direction: Direction::new(0.0),
                global: GlobalDescriptor(vec![0.0]),
                locals: vec![],
                origin: ImageOrigin::Mapped,
            })
            .collect();
        let header = MapHeader {
            name: "nav".into(),
            transform: FloorTransform::identity(),
            scale: 1.0,
            floor_plan: None,
            camera: CameraModel::default(),
            global_dim: 1,
            local_dim: 1,
        };
        let mut map = TopometricMap::new(header, images, vec![]).unwrap();
        let adds: Vec<NewBoundary> = walls
            .iter()
            .map(|&((ax, ay), (bx, by))| NewBoundary { a: fp(ax, ay), b: fp(bx, by), source: BoundarySource::Manual })
            .collect();
        map.edit_boundaries(&adds, &[]).unwrap();
        map
    }

    fn unlimited() -> NavConfig {
        NavConfig { max_edge_len: f64::INFINITY, ..NavConfig::default() }
    }

    fn dest(id: ImageId) -> Destination {
        Destination { name: format!("d{id}"), image_id: id }
    }

    #[test]
    fn intersection_cases() {
        let s = |a: (f64, f64), b: (f64, f64)| (fp(a.0, a.1), fp(b.0, b.1));
        assert!(segments_intersect(s((0., 0.), (1., 1.)), s((0., 1.), (1., 0.))).unwrap());
        assert!(!segments_intersect(s((0., 0.), (1., 0.)), s((0., 1.), (1., 1.))).unwrap());
        assert!(segments_intersect(s((0., 0.), (2., 0.)), s((1., 0.), (1., 5.))).unwrap());
        assert!(segments_intersect(s((0., 0.), (2., 0.)), s((1., 0.), (3., 0.))).unwrap());
        assert!(!segments_intersect(s((0., 0.), (1., 0.)), s((2., 0.), (3., 0.))).unwrap());
        assert_eq!(segments_intersect(s((0., 0.), (0., 0.)), s((0., 1.), (1., 0.))), Err(NavigationError::DegenerateSegment));
    }

    #[test]
    fn complete_graph_without_walls() {
        let g = NavGraph::build(&point_map(&[(0., 0.), (10., 0.), (0., 30.)], &[]), unlimited());
        assert_eq!(g.edges().len(), 3);
    }

    #[test]
    fn walls_cut_edges() {
        let g = NavGraph::build(&point_map(&[(0., 0.), (10., 0.), (0., 10.)], &[((5., -5.), (5., 5.))]), unlimited());
        assert_eq!(g.edges().iter().map(|e| (e.0, e.1)).collect::<Vec<_>>(), vec![(0, 2)]);
    }

    #[test]
    fn max_edge_len_limits_edges() {
        let g = NavGraph::build(&point_map(&[(0., 0.), (10., 0.), (30., 0.)], &[]), NavConfig::default());
        assert_eq!(g.edges().iter().map(|e| (e.0, e.1)).collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn route_to_self_is_empty() {
        let g = NavGraph::build(&point_map(&[(0., 0.), (3., 0.)], &[]), unlimited());
        let r = g.shortest_route(1, &dest(1)).unwrap();
        assert_eq!(r.nodes, vec![1]);
        assert_eq!(r.length, 0.0);
        assert!(r.legs.is_empty());
    }

    #[test]
    fn triangle_prefers_direct_edge() {
        // 3-4-5 right triangle: 0-1 is 3, 1-2 is 4, 0-2 is 5.
        let g = NavGraph::build(&point_map(&[(0., 0.), (3., 0.), (3., 4.)], &[]), unlimited());
        let r = g.shortest_route(0, &dest(2)).unwrap();
        assert_eq!(r.nodes, vec![0, 2]);
        assert!((r.length - 5.0).abs() < 1e-12);
    }

    #[test]
    fn equal_routes_pick_smallest_ids() {
        // Square: 0 -> 3 via 1 or 2, both length 2.
        let g = NavGraph::build(
            &point_map(&[(0., 0.), (1., 0.), (0., 1.), (1., 1.)], &[((0.2, 0.2), (0.8, 0.8)), ((0.2, 0.8), (0.8, 0.2))]),
            unlimited(),
        );
        let r = g.shortest_route(0, &dest(3)).unwrap();
        assert_eq!(r.nodes, vec![0, 1, 3]);
    }

    #[test]
    fn unreachable() {
        let g = NavGraph::build(&point_map(&[(0., 0.), (10., 0.)], &[((5., -5.), (5., 5.))]), unlimited());
        assert_eq!(g.shortest_route(0, &dest(1)), Err(NavigationError::Unreachable { from: 0, to: 1 }));
    }

    fn located(x: f64, y: f64, dir: f64) -> LocalizationResult {
        LocalizationResult {
            location: fp(x, y),
            direction: Some(Direction::new(dir)),
            method: Method::WeightedAverage,
            candidates: vec![],
            survivors: 1,
            pnp_inliers: 0,
            k_used: 10,
            camera_center: None,
            pnp_links: vec![],
            direction_error: None,
        }
    }

    #[test]
    fn guide_turns() {
        let g = NavGraph::build(&point_map(&[(0., 10.), (10., 0.)], &[]), unlimited());
        let Instruction::Walk { turn, distance, target, .. } = g.guide(&located(0.0, 0.0, 90.0), &dest(0)).unwrap() else { panic!() };
        assert_eq!(target, 0);
        assert!(turn.abs() < 1e-12);
        assert!((distance - 10.0).abs() < 1e-12);
        let Instruction::Walk { turn, .. } = g.guide(&located(0.01, 0.0, 90.0), &dest(1)).unwrap() else { panic!() };
        assert!((turn + 90.0).abs() < 0.1);
    }

    #[test]
    fn guide_arrives_and_follows_route() {
        let g = NavGraph::build(&point_map(&[(0., 0.), (10., 0.), (20., 0.)], &[]), NavConfig::default());
        assert!(matches!(g.guide(&located(20.5, 0.0, 0.0), &dest(2)).unwrap(), Instruction::Arrived { destination: 2, .. }));
        let Instruction::Walk { target, remaining, .. } = g.guide(&located(0.5, 0.0, 0.0), &dest(2)).unwrap() else { panic!() };
        assert_eq!(target, 1);
        assert!((remaining - 10.0).abs() < 1e-12);
        let Instruction::Walk { target, .. } = g.guide(&located(4.0, 3.0, 0.0), &dest(2)).unwrap() else { panic!() };
        assert_eq!(target, 0);
    }

    #[test]
    fn slices_share_nodes() {
        let mut map = point_map(&[(0., 0.), (0., 0.), (5., 0.)], &[]);
        map.define_destination(1, "x").unwrap();
        let g = NavGraph::build(&map, unlimited());
        assert_eq!(g.nodes().len(), 2);
        assert_eq!(g.node_of(1).unwrap().id, 0);
        let r = g.shortest_route(2, map.destination("x").unwrap()).unwrap();
        assert_eq!(r.nodes, vec![2, 0]);
    }

    #[test]
    fn rebuild_rejects_stale_delta() {
        let mut map = point_map(&[(0., 0.), (10., 0.)], &[]);
        let g = NavGraph::build(&map, unlimited());
        map.edit_boundaries(&[], &[]).unwrap();
        let delta = map.edit_boundaries(&[], &[]).unwrap();
        let v = g.version();
        assert_eq!(g.rebuild_on_edit(&delta), Err(NavigationError::VersionSkew { graph: v, delta: v + 1 }));
    }

    #[test]
    fn rebuild_noop_delta() {
        let mut map = point_map(&[(0., 0.), (10., 0.), (5., 5.)], &[((5., -1.), (5., 1.))]);
        let g = NavGraph::build(&map, unlimited());
        let delta = map.edit_boundaries(&[], &[]).unwrap();
        let next = g.rebuild_on_edit(&delta).unwrap();
        assert_eq!(next.edges(), g.edges());
        assert_eq!(next, NavGraph::build(&map, unlimited()));
    }

    /// Dijkstra-free oracle: cheapest simple path by exhaustive search.
    pub(crate) fn enumerate_cost(g: &NavGraph, from: usize, to: usize) -> Option<f64> {
        fn go(g: &NavGraph, u: usize, to: usize, seen: &mut Vec<bool>, acc: f64, best: &mut Option<f64>) {
            if u == to {
                *best = Some(best.map_or(acc, |b: f64| b.min(acc)));
                return;
            }
            for &(v, l) in &g.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    go(g, v, to, seen, acc + l, best);
                    seen[v] = false;
                }
            }
        }
        let mut seen = vec![false; g.nodes.len()];
        seen[from] = true;
        let mut best = None;
        go(g, from, to, &mut seen, 0.0, &mut best);
        best
    }

    fn scatter() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<((f64, f64), (f64, f64))>)> {
        (
            proptest::collection::vec((0.0f64..40.0, 0.0f64..40.0), 2..10),
            proptest::collection::vec(((0.0f64..40.0, 0.0f64..40.0), (0.0f64..40.0, 0.0f64..40.0)), 0..5),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn edges_match_brute_force((pts, walls) in scatter()) {
            let map = point_map(&pts, &walls);
            let cfg = NavConfig { max_edge_len: 20.0, ..NavConfig::default() };
            let g = NavGraph::build(&map, cfg);
            let mut want = Vec::new();
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let (a, b) = (fp(pts[i].0, pts[i].1), fp(pts[j].0, pts[j].1));
                    if a == b { continue; }
                    let clear = map.boundaries().iter().all(|w| !segments_intersect((a, b), (w.a, w.b)).unwrap());
                    if clear && a.distance(&b) <= 20.0 {
                        want.push((i as u32, j as u32));
                    }
                }
            }
            let got: Vec<(u32, u32)> = g.edges().iter().map(|e| (e.0, e.1)).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn routes_are_optimal_and_safe((pts, walls) in scatter(), s in 0usize..10, t in 0usize..10) {
            let map = point_map(&pts, &walls);
            let g = NavGraph::build(&map, NavConfig { max_edge_len: 25.0, ..NavConfig::default() });
            let (s, t) = (s % g.nodes().len(), t % g.nodes().len());
            let d = dest(g.nodes()[t].id);
            match g.shortest_route(g.nodes()[s].id, &d) {
                Ok(route) => {
                    let oracle = enumerate_cost(&g, s, t).unwrap();
                    prop_assert!((route.length - oracle).abs() < 1e-9);
                    for w in route.locations.windows(2) {
                        prop_assert!(!blocked(w[0], w[1], map.boundaries()));
                    }
                }
                Err(NavigationError::Unreachable { .. }) => prop_assert!(enumerate_cost(&g, s, t).is_none()),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn incremental_equals_full((pts, walls) in scatter(), adds in proptest::collection::vec(((0.0f64..40.0, 0.0f64..40.0), (0.0f64..40.0, 0.0f64..40.0)), 0..4), drop in 0usize..5) {
            let mut map = point_map(&pts, &walls);
            let cfg = NavConfig { max_edge_len: 30.0, ..NavConfig::default() };
            let g = NavGraph::build(&map, cfg);
            let dels: Vec<u32> = map.boundaries().iter().map(|b| b.id).take(drop).collect();
            let new: Vec<NewBoundary> = adds.iter().filter(|(a, b)| a != b).map(|&((ax, ay), (bx, by))| NewBoundary { a: fp(ax, ay), b: fp(bx, by), source: BoundarySource::Manual }).collect();
            let delta = map.edit_boundaries(&new, &dels).unwrap();
            let inc = g.rebuild_on_edit(&delta).unwrap();
            let full = NavGraph::build(&map, cfg);
            prop_assert_eq!(inc.edges(), full.edges());
            prop_assert_eq!(inc.version(), full.version());
        }
    }
}
