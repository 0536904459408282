"""Steady pipe-network flow on a fracture network and hydrological features.

Each fracture becomes a node at its centroid; each intersection becomes a
pipe whose conductance follows the cubic law for a channel of width equal to
the intersection length, split into the two in-fracture halves so that
per-fracture permeability factors can evolve independently:

    g = (width / (12 mu)) / (L_a / (f_a b^3) + L_b / (f_b b^3))

With both factors at 1 this reduces to g = b^3 width / (12 mu L),
L = |c_a - m| + |m - c_b|. Inlet/outlet reservoir nodes attach to boundary
fractures through half-pipes using the centroid-to-wall distance and the
boundary trace length as width.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

INLET = "inlet"
OUTLET = "outlet"

WATER_VISCOSITY = 1e-3          # Pa s at 25 C
DIFFUSION_COEFF = 1e-12         # m^2/s, aqueous silica
QUARTZ_MOLAR_VOLUME = 22.6880e-6  # m^3/mol
SECONDS_PER_YEAR = 3.1536e7
DA_ADVECTIVE_CAP = 1e12
MIN_PIPE_LENGTH = 1e-9


class FlowSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class Pipe:
    node_a: object          # fracture id, INLET, or OUTLET
    node_b: object
    width: float            # m, intersection or boundary-trace length
    len_a: float            # m, half-length inside fracture node_a (0 for reservoirs)
    len_b: float
    aperture: float

    def conductance(self, factor_a: float = 1.0, factor_b: float = 1.0,
                    viscosity: float = WATER_VISCOSITY) -> float:
        b3 = self.aperture ** 3
        resistance = 0.0
        if self.len_a > 0:
            resistance += self.len_a / (factor_a * b3)
        if self.len_b > 0:
            resistance += self.len_b / (factor_b * b3)
        return (self.width / (12.0 * viscosity)) / resistance


@dataclass
class PipeModel:
    fracture_ids: list[int]
    pipes: list[Pipe]
    viscosity: float
    index: dict[object, int]  # node label -> row; fractures first, then inlet/outlet
    _arrays: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.index)

    @property
    def n_fractures(self) -> int:
        return len(self.fracture_ids)

    def arrays(self) -> dict:
        """Cached per-pipe index/geometry arrays for vectorized assembly."""
        if not self._arrays:
            self._arrays = {
                "ia": np.array([self.index[p.node_a] for p in self.pipes]),
                "ib": np.array([self.index[p.node_b] for p in self.pipes]),
                "width": np.array([p.width for p in self.pipes]),
                "len_a": np.array([p.len_a for p in self.pipes]),
                "len_b": np.array([p.len_b for p in self.pipes]),
                "b3": np.array([p.aperture ** 3 for p in self.pipes]),
                "aperture": np.array([p.aperture for p in self.pipes]),
            }
        return self._arrays

    def factor_vector(self, factors: dict[int, float] | np.ndarray | None
                      ) -> np.ndarray:
        """Per-node permeability factors aligned with index (reservoirs 1)."""
        vec = np.ones(self.n_nodes)
        if isinstance(factors, np.ndarray):
            vec[:self.n_fractures] = factors
        elif factors is not None:
            for fid, f in factors.items():
                vec[self.index[fid]] = f
        return vec

    def conductances(self, factors: dict[int, float] | np.ndarray | None = None
                     ) -> np.ndarray:
        a = self.arrays()
        fvec = self.factor_vector(factors)
        resistance = np.zeros(len(self.pipes))
        fa = fvec[a["ia"]]
        fb = fvec[a["ib"]]
        np.add(resistance, np.where(a["len_a"] > 0,
                                    a["len_a"] / (fa * a["b3"]), 0.0),
               out=resistance)
        np.add(resistance, np.where(a["len_b"] > 0,
                                    a["len_b"] / (fb * a["b3"]), 0.0),
               out=resistance)
        return (a["width"] / (12.0 * self.viscosity)) / resistance


@dataclass
class FlowSolution:
    model: PipeModel
    node_pressures: np.ndarray   # Pa, aligned with model.index
    pipe_flows: np.ndarray       # m^3/s, signed positive node_a -> node_b
    total_throughput: float      # m^3/s

    def pressure(self, node) -> float:
        return float(self.node_pressures[self.model.index[node]])


def cubic_law_permeability(aperture: float) -> float:
    """k = b^2 / 12 (m^2)."""
    return aperture ** 2 / 12.0


def network_volume_per_year(network) -> float:
    """Boundary flow rate: initial network volume per year, in m^3/s."""
    return sum(f.total_volume for f in network.fractures) / SECONDS_PER_YEAR


def build_pipe_model(network, viscosity: float = WATER_VISCOSITY) -> PipeModel:
    """Pipe-network representation of a pruned fracture network."""
    ids = sorted(f.id for f in network.fractures)
    by_id = {f.id: f for f in network.fractures}
    index: dict[object, int] = {fid: i for i, fid in enumerate(ids)}
    index[INLET] = len(ids)
    index[OUTLET] = len(ids) + 1
    pipes: list[Pipe] = []
    for seg in network.intersections:
        fa, fb = by_id[seg.fracture_a], by_id[seg.fracture_b]
        mid = seg.midpoint
        la = float(np.linalg.norm(fa.center - mid))
        lb = float(np.linalg.norm(fb.center - mid))
        if la + lb < MIN_PIPE_LENGTH:
            warnings.warn(
                f"pipe between fractures {fa.id} and {fb.id} has coincident "
                "centers; clamping length")
            la = lb = MIN_PIPE_LENGTH / 2
        pipes.append(Pipe(node_a=seg.fracture_a, node_b=seg.fracture_b,
                          width=seg.length, len_a=la, len_b=lb,
                          aperture=fa.aperture))
    side = network.domain.side_length
    for fid in ids:
        f = by_id[fid]
        if f.touches_inlet:
            length = max(abs(float(f.center[0])), MIN_PIPE_LENGTH)
            pipes.append(Pipe(node_a=INLET, node_b=fid,
                              width=f.inlet_trace_length, len_a=0.0,
                              len_b=length, aperture=f.aperture))
        if f.touches_outlet:
            length = max(abs(side - float(f.center[0])), MIN_PIPE_LENGTH)
            pipes.append(Pipe(node_a=fid, node_b=OUTLET,
                              width=f.outlet_trace_length, len_a=length,
                              len_b=0.0, aperture=f.aperture))
    return PipeModel(fracture_ids=ids, pipes=pipes, viscosity=viscosity,
                     index=index)


def solve_flow(pm: PipeModel, total_rate: float,
               factors: dict[int, float] | np.ndarray | None = None
               ) -> FlowSolution:
    """Steady incompressible flow with net inlet->outlet rate total_rate.

    Solves the weighted-Laplacian nodal system under a unit pressure drop,
    then rescales so the net inlet flow equals total_rate. Raises
    FlowSolveError on singular systems or non-finite conductances.
    """
    cond = pm.conductances(factors)
    if not np.all(np.isfinite(cond)) or np.any(cond <= 0):
        raise FlowSolveError("non-finite or non-positive pipe conductance")
    n = pm.n_nodes
    arr = pm.arrays()
    ia, ib = arr["ia"], arr["ib"]
    i_in, i_out = pm.index[INLET], pm.index[OUTLET]
    rows = np.concatenate([ia, ib, ia, ib])
    cols = np.concatenate([ia, ib, ib, ia])
    vals = np.concatenate([cond, cond, -cond, -cond])
    lap = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    interior = np.array([i for i in range(n) if i not in (i_in, i_out)])
    pressures = np.zeros(n)
    pressures[i_in] = 1.0
    if len(interior):
        a = lap[interior][:, interior].tocsc()
        rhs = -np.asarray(lap[interior][:, [i_in]].todense()).ravel()
        with warnings.catch_warnings():
            warnings.simplefilter("error", MatrixRankWarning)
            try:
                sol = spsolve(a, rhs)
            except Exception as exc:
                raise FlowSolveError(f"singular pipe system: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise FlowSolveError("singular pipe system (non-finite pressures)")
        pressures[interior] = sol
    flows = cond * (pressures[ia] - pressures[ib])
    inlet_flow = float(flows[ia == i_in].sum() - flows[ib == i_in].sum())
    if inlet_flow <= 0 or not np.isfinite(inlet_flow):
        raise FlowSolveError("no net flow from inlet to outlet")
    scale = total_rate / inlet_flow
    return FlowSolution(model=pm, node_pressures=pressures * scale,
                        pipe_flows=flows * scale, total_throughput=total_rate)


def fracture_flow_rate(fs: FlowSolution) -> dict[int, float]:
    """Q(f_i) = 1/2 sum_j |Q_ij| over all pipes incident to the fracture."""
    arr = fs.model.arrays()
    nf = fs.model.n_fractures
    absflow = np.abs(fs.pipe_flows)
    acc = np.zeros(fs.model.n_nodes)
    np.add.at(acc, arr["ia"], absflow)
    np.add.at(acc, arr["ib"], absflow)
    return {fid: 0.5 * float(acc[i])
            for i, fid in enumerate(fs.model.fracture_ids[:nf])}


def hydro_features(fs: FlowSolution, network, rate_constant: float,
                   diffusion: float = DIFFUSION_COEFF,
                   molar_volume: float = QUARTZ_MOLAR_VOLUME,
                   ) -> dict[int, dict[str, float]]:
    """Per-fracture volumetric flow rate, Peclet, and Damkohler numbers.

    Uses the rate converted to velocity units, k' = k * Vm (m/s). The radius
    entering Pe and Da_II is the parent disc radius, also for truncated
    fractures. Da_I is capped at 1e12 (stagnant fractures are
    reaction-dominated; the cap keeps the feature matrix finite).
    """
    q = fracture_flow_rate(fs)
    k_prime = rate_constant * molar_volume
    by_id = {f.id: f for f in network.fractures}
    out: dict[int, dict[str, float]] = {}
    for fid, qi in q.items():
        f = by_id[fid]
        peclet = qi * f.radius / (f.surface_area * diffusion)
        if qi > 0:
            da1 = min(k_prime * f.surface_area / qi, DA_ADVECTIVE_CAP)
        else:
            da1 = DA_ADVECTIVE_CAP
        da2 = k_prime * f.radius / diffusion
        out[fid] = {
            "volumetric_flow_rate": qi,
            "peclet": peclet,
            "damkohler_advective": da1,
            "damkohler_diffusive": da2,
        }
    return out


def flow_dump_rows(fs: FlowSolution, network, rate_constant: float) -> list[str]:
    """CSV rows `fracture_id,Q,peclet,da1,da2,pressure_mean` (with header)."""
    feats = hydro_features(fs, network, rate_constant)
    lines = ["fracture_id,Q,peclet,da1,da2,pressure_mean"]
    for fid in fs.model.fracture_ids:
        h = feats[fid]
        lines.append(
            f"{fid},{float(h['volumetric_flow_rate'])!r},"
            f"{float(h['peclet'])!r},{float(h['damkohler_advective'])!r},"
            f"{float(h['damkohler_diffusive'])!r},{fs.pressure(fid)!r}")
    return lines
