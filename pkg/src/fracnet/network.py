"""Stochastic disc-fracture networks: generation, intersections, pruning.

A network is a set of planar disc fractures (regular 16-gons inscribed in the
parent disc) truncated to a cubic domain, together with the fracture-fracture
intersection segments. Flow enters at the x = 0 face (inlet) and leaves at
x = side_length (outlet).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    AREA_TOL,
    POINT_TOL,
    clip_polygon_box,
    convex_polygon_intersection_segment,
    disc_polygon,
    polygon_area,
    polygon_centroid,
    unit,
)

NETWORK_SCHEMA_VERSION = 1
DISC_VERTICES = 16


@dataclass(frozen=True)
class DomainBox:
    """Cubic flow domain [0, side]^3 with a generation-only margin."""

    side_length: float = 10.0
    generation_margin: float = 0.5

    def __post_init__(self):
        if self.side_length <= 0:
            raise ValueError("side_length must be positive")
        if self.generation_margin < 0:
            raise ValueError("generation_margin must be non-negative")

    @property
    def volume(self) -> float:
        return self.side_length ** 3

    @property
    def lo(self) -> np.ndarray:
        return np.zeros(3)

    @property
    def hi(self) -> np.ndarray:
        return np.full(3, self.side_length)


@dataclass
class Fracture:
    """One planar fracture: a convex polygon with orientation and aperture.

    `radius` is the parent disc radius and is kept after truncation; `center`
    is the polygon centroid (recomputed when the polygon is clipped).
    """

    id: int
    center: np.ndarray
    orientation: np.ndarray  # unit normal
    radius: float
    polygon: np.ndarray  # (m, 3) vertices, ordered about the normal
    aperture: float
    surface_area: float = 0.0
    total_volume: float = 0.0
    projected_volume: float = 0.0
    intersection_area: float = 0.0
    touches_inlet: bool = False
    touches_outlet: bool = False
    inlet_trace_length: float = 0.0
    outlet_trace_length: float = 0.0

    def recompute_derived(self) -> None:
        self.surface_area = polygon_area(self.polygon)
        self.total_volume = self.surface_area * self.aperture
        oy, oz = self.orientation[1], self.orientation[2]
        self.projected_volume = self.total_volume * np.sqrt(oy * oy + oz * oz)

    @property
    def bounding_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.polygon - self.center, axis=1)))


@dataclass(frozen=True)
class IntersectionSegment:
    fracture_a: int
    fracture_b: int
    endpoints: tuple[np.ndarray, np.ndarray]

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.endpoints[1] - self.endpoints[0]))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.endpoints[0] + self.endpoints[1])


@dataclass(frozen=True)
class GenerationParams:
    side_length: float = 10.0
    radius: float = 1.5
    target_p32: float = 3.25
    aperture: float = 1e-5
    margin: float = 0.5
    n_vertices: int = DISC_VERTICES

    def __post_init__(self):
        if self.target_p32 <= 0:
            raise ValueError("target_p32 must be positive")
        if self.radius >= self.side_length / 2:
            raise ValueError("radius must be below side_length / 2")


@dataclass
class FractureNetwork:
    domain: DomainBox
    fractures: list[Fracture]
    intersections: list[IntersectionSegment]
    p32_achieved: float
    rng_seed: int
    params: GenerationParams | None = None
    p32_before_prune: float = 0.0
    pruned: bool = False

    @property
    def percolates(self) -> bool:
        """True when a pruned network still contains fractures."""
        return self.pruned and len(self.fractures) > 0

    def fracture_by_id(self, fid: int) -> Fracture:
        for f in self.fractures:
            if f.id == fid:
                return f
        raise KeyError(fid)

    def intersections_of(self, fid: int) -> list[IntersectionSegment]:
        return [s for s in self.intersections
                if s.fracture_a == fid or s.fracture_b == fid]


def truncate_to_domain(f: Fracture, domain: DomainBox) -> Fracture | None:
    """Clip a fracture polygon to the domain box.

    Returns None when the clipped polygon is empty or degenerate
    (area < 1e-12 m^2). Boundary flags are set when a clipped edge lies on
    the inlet (x = 0) or outlet (x = side) plane within 1e-9 m.
    """
    if len(f.polygon) == 0:
        raise ValueError("fracture polygon is empty")
    clipped = clip_polygon_box(f.polygon, domain.lo, domain.hi)
    if len(clipped) < 3 or polygon_area(clipped) < AREA_TOL:
        return None
    out = replace(f, polygon=clipped, center=polygon_centroid(clipped))
    out.inlet_trace_length = _boundary_trace_length(clipped, 0.0)
    out.outlet_trace_length = _boundary_trace_length(clipped, domain.side_length)
    out.touches_inlet = out.inlet_trace_length > POINT_TOL
    out.touches_outlet = out.outlet_trace_length > POINT_TOL
    out.recompute_derived()
    return out


def _boundary_trace_length(polygon: np.ndarray, x_plane: float) -> float:
    """Total length of polygon edges lying on the plane x = x_plane."""
    on_plane = np.abs(polygon[:, 0] - x_plane) <= POINT_TOL
    total = 0.0
    m = len(polygon)
    for i in range(m):
        j = (i + 1) % m
        if on_plane[i] and on_plane[j]:
            total += float(np.linalg.norm(polygon[j] - polygon[i]))
    return total


def disc_intersection(f_i: Fracture, f_j: Fracture) -> IntersectionSegment | None:
    """Intersection segment of two fracture polygons, or None.

    Point contacts (chord < 1e-9 m) and coplanar overlaps count as no
    intersection.
    """
    seg = convex_polygon_intersection_segment(
        f_i.polygon, f_i.orientation, f_j.polygon, f_j.orientation)
    if seg is None:
        return None
    return IntersectionSegment(f_i.id, f_j.id, (seg[0], seg[1]))


def compute_intersections(fractures: list[Fracture]) -> list[IntersectionSegment]:
    """All pairwise intersection segments, bounding-sphere prefiltered."""
    if not fractures:
        return []
    centers = np.array([f.center for f in fractures])
    bounds = np.array([f.bounding_radius for f in fractures])
    out: list[IntersectionSegment] = []
    n = len(fractures)
    for i in range(n):
        d = np.linalg.norm(centers[i + 1:] - centers[i], axis=1)
        close = np.nonzero(d <= bounds[i] + bounds[i + 1:] + POINT_TOL)[0]
        for k in close:
            j = i + 1 + int(k)
            seg = disc_intersection(fractures[i], fractures[j])
            if seg is not None:
                out.append(seg)
    return out


def _adjacency(fractures: list[Fracture],
               intersections: list[IntersectionSegment]) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {f.id: set() for f in fractures}
    for s in intersections:
        adj[s.fracture_a].add(s.fracture_b)
        adj[s.fracture_b].add(s.fracture_a)
    return adj


def _components(adj: dict[int, set[int]]) -> list[set[int]]:
    seen: set[int] = set()
    comps: list[set[int]] = []
    for start in adj:
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    comp.add(v)
                    stack.append(v)
        comps.append(comp)
    return comps


def prune_isolated(network: FractureNetwork) -> FractureNetwork:
    """Keep only fractures in clusters connecting the inlet to the outlet.

    A cluster qualifies when it contains at least one inlet-touching and one
    outlet-touching fracture. The returned network may be empty (the
    "disconnected network" outcome); fracture ids are preserved.
    """
    adj = _adjacency(network.fractures, network.intersections)
    by_id = {f.id: f for f in network.fractures}
    keep: set[int] = set()
    for comp in _components(adj):
        if any(by_id[i].touches_inlet for i in comp) and \
           any(by_id[i].touches_outlet for i in comp):
            keep |= comp
    fractures = [f for f in network.fractures if f.id in keep]
    intersections = [s for s in network.intersections
                     if s.fracture_a in keep and s.fracture_b in keep]
    p32 = sum(f.surface_area for f in fractures) / network.domain.volume
    return FractureNetwork(
        domain=network.domain, fractures=fractures, intersections=intersections,
        p32_achieved=p32, rng_seed=network.rng_seed, params=network.params,
        p32_before_prune=network.p32_before_prune or network.p32_achieved,
        pruned=True)


def sample_unit_normal(rng: np.random.Generator) -> np.ndarray:
    """Isotropic unit vector: three standard Gaussians, normalized."""
    while True:
        v = rng.standard_normal(3)
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


def generate_network(params: GenerationParams, seed: int) -> FractureNetwork:
    """Generate a seeded disc-fracture network to the target intensity.

    Centers are uniform in the margin-expanded box; normals are uniform on
    the unit sphere. Fractures are accepted (after truncation to the
    un-expanded domain) until the achieved P32 reaches the target; the result
    is pruned, so a non-percolating draw comes back with zero fractures.
    Deterministic for a fixed seed.
    """
    domain = DomainBox(params.side_length, params.margin)
    rng = np.random.default_rng(seed)
    lo = -params.margin
    hi = params.side_length + params.margin
    fractures: list[Fracture] = []
    total_area = 0.0
    next_id = 0
    while total_area / domain.volume < params.target_p32:
        center = rng.uniform(lo, hi, size=3)
        normal = sample_unit_normal(rng)
        raw = Fracture(
            id=next_id, center=center, orientation=normal,
            radius=params.radius,
            polygon=disc_polygon(center, normal, params.radius, params.n_vertices),
            aperture=params.aperture)
        kept = truncate_to_domain(raw, domain)
        if kept is None:
            continue
        fractures.append(kept)
        total_area += kept.surface_area
        next_id += 1
    intersections = compute_intersections(fractures)
    p32 = total_area / domain.volume
    network = FractureNetwork(
        domain=domain, fractures=fractures, intersections=intersections,
        p32_achieved=p32, rng_seed=seed, params=params, p32_before_prune=p32)
    pruned = prune_isolated(network)
    set_intersection_areas(pruned)
    return pruned


def set_intersection_areas(network: FractureNetwork) -> None:
    """Fill each fracture's intersection_area = aperture * sum of its
    intersection lengths."""
    lengths: dict[int, float] = {f.id: 0.0 for f in network.fractures}
    for s in network.intersections:
        lengths[s.fracture_a] += s.length
        lengths[s.fracture_b] += s.length
    for f in network.fractures:
        f.intersection_area = f.aperture * lengths[f.id]


def geometric_features(network: FractureNetwork) -> dict[int, dict[str, float]]:
    """Per-fracture geometric features of a pruned, truncated network.

    projected_volume uses flow along +x: V_i * sqrt(O_y^2 + O_z^2).
    """
    set_intersection_areas(network)
    out: dict[int, dict[str, float]] = {}
    for f in network.fractures:
        f.recompute_derived()
        out[f.id] = {
            "surface_area": f.surface_area,
            "total_volume": f.total_volume,
            "projected_volume": f.projected_volume,
            "intersection_area": f.intersection_area,
        }
    return out


# ---------------------------------------------------------------------------
# JSON serialization (stable schema; one document per network)

def _vec(a: np.ndarray) -> list[float]:
    return [float(x) for x in a]


def network_to_dict(network: FractureNetwork) -> dict:
    params = network.params or GenerationParams()
    return {
        "schema_version": NETWORK_SCHEMA_VERSION,
        "rng_seed": network.rng_seed,
        "parameters": {
            "side_length": params.side_length,
            "radius": params.radius,
            "target_p32": params.target_p32,
            "aperture": params.aperture,
            "margin": params.margin,
            "n_vertices": params.n_vertices,
        },
        "p32_achieved": network.p32_achieved,
        "p32_before_prune": network.p32_before_prune,
        "pruned": network.pruned,
        "fractures": [
            {
                "id": f.id,
                "center": _vec(f.center),
                "normal": _vec(f.orientation),
                "radius": f.radius,
                "vertices": [_vec(v) for v in f.polygon],
                "aperture": f.aperture,
                "touches_inlet": f.touches_inlet,
                "touches_outlet": f.touches_outlet,
            }
            for f in network.fractures
        ],
        "intersections": [
            {
                "a": s.fracture_a,
                "b": s.fracture_b,
                "p0": _vec(s.endpoints[0]),
                "p1": _vec(s.endpoints[1]),
                "length": s.length,
            }
            for s in network.intersections
        ],
    }


def network_to_json(network: FractureNetwork) -> str:
    return json.dumps(network_to_dict(network), indent=1)


def network_from_dict(doc: dict) -> FractureNetwork:
    params = GenerationParams(**doc["parameters"])
    domain = DomainBox(params.side_length, params.margin)
    fractures = []
    for fd in doc["fractures"]:
        f = Fracture(
            id=fd["id"],
            center=np.array(fd["center"]),
            orientation=unit(np.array(fd["normal"])),
            radius=fd["radius"],
            polygon=np.array(fd["vertices"]),
            aperture=fd["aperture"],
            touches_inlet=fd["touches_inlet"],
            touches_outlet=fd["touches_outlet"],
        )
        f.center = polygon_centroid(f.polygon)
        f.inlet_trace_length = _boundary_trace_length(f.polygon, 0.0)
        f.outlet_trace_length = _boundary_trace_length(f.polygon, domain.side_length)
        f.recompute_derived()
        fractures.append(f)
    intersections = [
        IntersectionSegment(sd["a"], sd["b"],
                            (np.array(sd["p0"]), np.array(sd["p1"])))
        for sd in doc["intersections"]
    ]
    network = FractureNetwork(
        domain=domain, fractures=fractures, intersections=intersections,
        p32_achieved=doc["p32_achieved"], rng_seed=doc["rng_seed"],
        params=params, p32_before_prune=doc["p32_before_prune"],
        pruned=doc["pruned"])
    set_intersection_areas(network)
    return network


def network_from_json(text: str) -> FractureNetwork:
    return network_from_dict(json.loads(text))
