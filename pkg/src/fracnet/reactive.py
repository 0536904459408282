"""Quartz dissolution on the pipe network, stepped to quasi-steady state.

The model is quasi-static: between geometry updates, aqueous silica obeys a
steady advection-diffusion-reaction balance on the pipe network (upwind
advection, diffusive exchange through pipe cross-sections, and the linear
kinetic source folded into the matrix). Each fracture is one well-mixed cell
whose quartz volume, surface area, porosity, and permeability factor evolve;
the flow field is refreshed whenever any pipe conductance drifts more than
1% since the last solve.

Concentrations are stored in mol/L; flux arithmetic uses mol/m^3
(conversion factor 1000, centralized in MOL_PER_L_TO_M3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .pipeflow import (
    DIFFUSION_COEFF,
    INLET,
    OUTLET,
    QUARTZ_MOLAR_VOLUME,
    SECONDS_PER_YEAR,
    FlowSolution,
    PipeModel,
    build_pipe_model,
    network_volume_per_year,
    solve_flow,
)

MOL_PER_L_TO_M3 = 1000.0

#: Cells below this fraction of their initial quartz volume are treated as
#: exhausted dust: they may be clamped to zero without constraining the step
#: size (the clamp is orders of magnitude below the ledger tolerance, and
#: exact-depletion steps for dust cells would otherwise underflow the 1 s
#: step floor).
DUST_FRACTION = 1e-7

MIN_DT_SECONDS = 1.0


class StiffStepError(RuntimeError):
    pass


class TransportSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChemistryConstants:
    k_eq: float = 10.0 ** -3.9993       # mol/L, quartz equilibrium at 25 C
    specific_surface_area: float = 0.0225  # m^2/g
    quartz_density: float = 2650.0      # kg/m^3
    molar_volume: float = QUARTZ_MOLAR_VOLUME  # m^3/mol
    diffusion: float = DIFFUSION_COEFF  # m^2/s
    inflow_silica: float = 1e-20        # mol/L

    def __post_init__(self):
        for name in ("k_eq", "specific_surface_area", "quartz_density",
                     "molar_volume", "diffusion", "inflow_silica"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class PermeabilityLaw:
    """k = k0 * f(phi): power law above the critical porosity, floor below."""

    exponent: float = 3.0
    critical_porosity: float = 0.01
    f_min: float = 1e-6
    area_exponent: float = 2.0 / 3.0        # n in the surface-area law
    area_porosity_exponent: float = 0.0     # n'

    def factor(self, porosity: float, initial_porosity: float) -> float:
        if porosity <= self.critical_porosity:
            return self.f_min
        return ((porosity - self.critical_porosity)
                / (initial_porosity - self.critical_porosity)) ** self.exponent


@dataclass
class ReactiveCell:
    """Per-fracture quartz/fluid bookkeeping (one well-mixed cell)."""

    fracture_id: int
    total_volume: float          # m^3, fracture volume, constant
    quartz_volume: float         # V
    initial_quartz_volume: float  # V_o
    quartz_area: float           # A
    initial_area: float          # A_o
    porosity: float
    initial_porosity: float
    mineral_fraction: float
    permeability_factor: float
    silica_concentration: float  # mol/L
    fluid_volume: float          # m^3

    @property
    def remaining_fraction(self) -> float:
        if self.initial_quartz_volume == 0:
            return 0.0
        return self.quartz_volume / self.initial_quartz_volume


@dataclass
class LedgerEntry:
    time: float
    dt: float
    dissolved: float         # mol actually removed from quartz
    clamped: float           # mol of source overshoot suppressed at depletion
    exported: float          # mol leaving through both boundaries
    imported: float          # mol entering from the inlet
    storage_before: float    # mol of aqueous silica in the cells
    storage_after: float

    @property
    def flux_residual(self) -> float:
        """dissolved + clamped - (exported - imported); ~0 for a steady solve."""
        return (self.dissolved + self.clamped) - (self.exported - self.imported)


@dataclass
class ReactiveState:
    cells: list[ReactiveCell]
    time: float
    rate_constant: float
    constants: ChemistryConstants
    law: PermeabilityLaw
    pipe_model: PipeModel
    total_rate: float
    flow: FlowSolution | None = None
    conductances_at_solve: np.ndarray | None = None
    last_cell_rates: np.ndarray | None = None  # mol/s at the last transport solve
    history: list[tuple[float, float, float]] = field(default_factory=list)
    ledger: list[LedgerEntry] = field(default_factory=list)
    spinup_storage_change: float = 0.0

    @property
    def total_quartz(self) -> float:
        return sum(c.quartz_volume for c in self.cells)

    @property
    def silica_storage(self) -> float:
        """Aqueous silica inventory over all cells, mol."""
        return sum(c.silica_concentration * MOL_PER_L_TO_M3 * c.fluid_volume
                   for c in self.cells)

    def factor_array(self) -> np.ndarray:
        return np.array([c.permeability_factor for c in self.cells])

    def remaining_fractions(self) -> dict[int, float]:
        return {c.fracture_id: c.remaining_fraction for c in self.cells}


def init_state(network, rate_constant: float,
               constants: ChemistryConstants | None = None,
               law: PermeabilityLaw | None = None,
               total_rate: float | None = None,
               initial_mineral_fraction: float = 0.8) -> ReactiveState:
    """Initial reactive state: cells 80% quartz, fluid at equilibrium."""
    constants = constants or ChemistryConstants()
    law = law or PermeabilityLaw()
    cells = []
    for f in sorted(network.fractures, key=lambda f: f.id):
        v_o = initial_mineral_fraction * f.total_volume
        porosity = 1.0 - initial_mineral_fraction
        a_o = (constants.specific_surface_area * 1000.0
               * constants.quartz_density * v_o)
        cells.append(ReactiveCell(
            fracture_id=f.id,
            total_volume=f.total_volume,
            quartz_volume=v_o,
            initial_quartz_volume=v_o,
            quartz_area=a_o,
            initial_area=a_o,
            porosity=porosity,
            initial_porosity=porosity,
            mineral_fraction=initial_mineral_fraction,
            permeability_factor=1.0,
            silica_concentration=constants.k_eq,
            fluid_volume=porosity * f.total_volume,
        ))
    pm = build_pipe_model(network)
    if total_rate is None:
        total_rate = network_volume_per_year(network)
    return ReactiveState(cells=cells, time=0.0, rate_constant=rate_constant,
                         constants=constants, law=law, pipe_model=pm,
                         total_rate=total_rate)


def dissolution_rate(cell: ReactiveCell, concentration: float,
                     rate_constant: float,
                     constants: ChemistryConstants) -> float:
    """TST rate per fluid volume, mol m^-3 s^-1, floored at zero.

    R = k (A / fluid_volume) (1 - c / K_eq); zero once the quartz is gone.
    """
    if cell.quartz_volume <= 0 or cell.fluid_volume <= 0:
        return 0.0
    driving = 1.0 - concentration / constants.k_eq
    if driving <= 0:
        return 0.0
    return rate_constant * cell.quartz_area / cell.fluid_volume * driving


def update_geometry_chemistry(cell: ReactiveCell, dissolved_moles: float,
                              law: PermeabilityLaw,
                              constants: ChemistryConstants,
                              ) -> tuple[ReactiveCell, float]:
    """Apply dissolved moles to a cell; returns (new cell, clamped moles).

    Quartz volume drops by moles * Vm (clamped at zero, the excess is
    returned so the mass ledger can be adjusted); porosity, fluid volume,
    quartz area, and the permeability factor follow.
    """
    if dissolved_moles < 0:
        raise ValueError("dissolved_moles must be non-negative")
    dv = dissolved_moles * constants.molar_volume
    clamped = 0.0
    v = cell.quartz_volume - dv
    if v < 0:
        clamped = -v / constants.molar_volume
        v = 0.0
    mineral_fraction = v / cell.total_volume
    porosity = 1.0 - mineral_fraction
    fluid_volume = porosity * cell.total_volume
    if v > 0:
        area = (cell.initial_area
                * (v / cell.initial_quartz_volume) ** law.area_exponent
                * ((1.0 - porosity) / (1.0 - cell.initial_porosity))
                ** law.area_porosity_exponent)
    else:
        area = 0.0
    factor = law.factor(porosity, cell.initial_porosity)
    new = replace(cell, quartz_volume=v, mineral_fraction=mineral_fraction,
                  porosity=porosity, fluid_volume=fluid_volume,
                  quartz_area=area, permeability_factor=factor)
    return new, clamped


def _refresh_flow_if_needed(state: ReactiveState, tol: float = 0.01) -> None:
    cond = state.pipe_model.conductances(state.factor_array())
    if state.flow is None or state.conductances_at_solve is None:
        needs = True
    else:
        rel = np.abs(cond - state.conductances_at_solve) / state.conductances_at_solve
        needs = bool(np.max(rel) > tol)
    if needs:
        state.flow = solve_flow(state.pipe_model, state.total_rate,
                                state.factor_array())
        state.conductances_at_solve = cond


@dataclass
class TransportSolution:
    concentrations: np.ndarray   # mol/L per cell (cell order = state.cells)
    cell_source: np.ndarray      # mol/s dissolved-silica production per cell
    exported: float              # mol/s out through boundaries
    imported: float              # mol/s in from the inlet
    outflow_concentration: float  # mol/L, flux-weighted at the outlet


def solve_transport(state: ReactiveState,
                    flow: FlowSolution | None = None) -> TransportSolution:
    """Steady advection-diffusion-reaction solve for aqueous silica.

    Upwind advective fluxes, diffusive exchange D * width * aperture / length
    on every pipe not touching the outlet (the outflow is free, advective
    export only), inflow reservoir fixed at the inflow concentration, and
    the TST source linearized into the matrix.
    """
    flow = flow or state.flow
    if flow is None:
        raise TransportSolveError("flow must be solved before transport")
    pm = state.pipe_model
    nf = pm.n_fractures
    con = state.constants
    c_in = con.inflow_silica * MOL_PER_L_TO_M3       # mol/m^3
    k_eq = con.k_eq * MOL_PER_L_TO_M3                # mol/m^3
    k = state.rate_constant
    areas = np.array([c.quartz_area for c in state.cells])
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    rhs = np.zeros(nf)
    i_in, i_out = pm.index[INLET], pm.index[OUTLET]

    def add(i: int, j: int, v: float) -> None:
        rows.append(i)
        cols.append(j)
        vals.append(v)

    arr = pm.arrays()
    for q, ia, ib, width, la, lb, aperture in zip(
            flow.pipe_flows, arr["ia"], arr["ib"], arr["width"],
            arr["len_a"], arr["len_b"], arr["aperture"]):
        ia, ib = int(ia), int(ib)
        # advection: upwind on the signed flow (positive means a -> b)
        if q > 0:
            up, down = ia, ib
        else:
            up, down = ib, ia
        mag = abs(float(q))
        if mag > 0:
            if up < nf:
                add(up, up, mag)                     # export from the upwind cell
                if down < nf:
                    add(down, up, -mag)              # arrival downstream
            elif up == i_in and down < nf:
                rhs[down] += mag * c_in
            # upwind reservoir OUTLET cannot feed cells: outlet pressure is
            # the global minimum, so flow never leaves the outlet node.
        # diffusion on pipes not touching the outlet
        if ia != i_out and ib != i_out:
            g_d = con.diffusion * width * aperture / (la + lb)
            if ia < nf and ib < nf:
                add(ia, ia, g_d)
                add(ia, ib, -g_d)
                add(ib, ib, g_d)
                add(ib, ia, -g_d)
            elif ia == i_in and ib < nf:
                add(ib, ib, g_d)
                rhs[ib] += g_d * c_in
            elif ib == i_in and ia < nf:
                add(ia, ia, g_d)
                rhs[ia] += g_d * c_in
    # linear TST source: k A (1 - c / K_eq)
    for i in range(nf):
        ka = k * areas[i]
        if ka > 0:
            add(i, i, ka / k_eq)
            rhs[i] += ka
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(nf, nf))
    c = spsolve(mat.tocsc(), rhs)
    if not np.all(np.isfinite(c)):
        raise TransportSolveError("transport system is singular")
    np.clip(c, 0.0, k_eq, out=c)
    source = k * areas * np.maximum(1.0 - c / k_eq, 0.0)
    exported, imported, out_c = _boundary_fluxes(state, flow, c, c_in)
    return TransportSolution(
        concentrations=c / MOL_PER_L_TO_M3,
        cell_source=source,
        exported=exported,
        imported=imported,
        outflow_concentration=out_c / MOL_PER_L_TO_M3)


def _boundary_fluxes(state: ReactiveState, flow: FlowSolution, c: np.ndarray,
                     c_in: float) -> tuple[float, float, float]:
    """(exported, imported) mol/s and flux-weighted outlet concentration."""
    pm = state.pipe_model
    nf = pm.n_fractures
    con = state.constants
    i_in, i_out = pm.index[INLET], pm.index[OUTLET]
    arr = pm.arrays()
    exported = 0.0
    imported = 0.0
    out_flux = 0.0
    out_q = 0.0
    for q, ia, ib, width, la, lb, aperture in zip(
            flow.pipe_flows, arr["ia"], arr["ib"], arr["width"], arr["len_a"],
            arr["len_b"], arr["aperture"]):
        ia, ib = int(ia), int(ib)
        mag = abs(float(q))
        up = ia if q > 0 else ib
        down = ib if q > 0 else ia
        if i_out in (ia, ib):
            other = ia if ib == i_out else ib
            if down == i_out and mag > 0:
                exported += mag * c[other]
                out_flux += mag * c[other]
                out_q += mag
            continue
        if i_in in (ia, ib):
            other = ia if ib == i_in else ib
            if up == i_in and mag > 0:
                imported += mag * c_in
            elif mag > 0:
                exported += mag * c[other]   # backflow into the inlet reservoir
            g_d = con.diffusion * width * aperture / (la + lb)
            diff = g_d * (c_in - c[other])
            if diff >= 0:
                imported += diff
            else:
                exported += -diff
    out_c = out_flux / out_q if out_q > 0 else 0.0
    return exported, imported, out_c


@dataclass
class StepInfo:
    dt: float
    max_vo_loss: float        # max over cells of (V loss this step) / V_o
    dissolved: float
    clamped_significant: float  # clamp among non-dust cells, mol
    outflow_concentration: float


def step(state: ReactiveState, dt: float) -> tuple[ReactiveState, StepInfo]:
    """Advance the quasi-static model by dt seconds.

    Sequence: refresh flow when conductances drifted > 1%; steady transport
    solve; per-cell dissolution R * fluid_volume * dt (clamped at the
    remaining quartz, excess recorded); geometry/chemistry update; ledger
    and history bookkeeping. Raises StiffStepError below a 1 s step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt < MIN_DT_SECONDS:
        raise StiffStepError(f"stiff step: dt = {dt:.3g} s < {MIN_DT_SECONDS} s")
    work = replace(state, cells=list(state.cells),
                   history=list(state.history), ledger=list(state.ledger))
    _refresh_flow_if_needed(work)
    ts = solve_transport(work)
    con = work.constants
    storage_before = work.silica_storage
    dissolved = 0.0
    clamped_total = 0.0
    clamped_significant = 0.0
    max_vo_loss = 0.0
    new_cells = []
    for i, cell in enumerate(work.cells):
        moles = float(ts.cell_source[i]) * dt
        new_cell, clamped = update_geometry_chemistry(cell, moles, work.law, con)
        new_cell.silica_concentration = float(ts.concentrations[i])
        removed = moles - clamped
        dissolved += removed
        clamped_total += clamped
        if cell.initial_quartz_volume > 0:
            if cell.quartz_volume > DUST_FRACTION * cell.initial_quartz_volume:
                clamped_significant += clamped
            max_vo_loss = max(
                max_vo_loss,
                (cell.quartz_volume - new_cell.quartz_volume)
                / cell.initial_quartz_volume)
        new_cells.append(new_cell)
    work.cells = new_cells
    work.last_cell_rates = ts.cell_source.copy()
    work.time = state.time + dt
    entry = LedgerEntry(
        time=work.time, dt=dt, dissolved=dissolved, clamped=clamped_total,
        exported=ts.exported * dt, imported=ts.imported * dt,
        storage_before=storage_before, storage_after=work.silica_storage)
    work.ledger.append(entry)
    work.history.append((work.time, ts.outflow_concentration, work.total_quartz))
    info = StepInfo(dt=dt, max_vo_loss=max_vo_loss, dissolved=dissolved,
                    clamped_significant=clamped_significant,
                    outflow_concentration=ts.outflow_concentration)
    return work, info


@dataclass(frozen=True)
class RunControls:
    horizon_years: float = 1e7
    window: int = 10
    tol: float = 1e-4
    dt_initial_years: float = 1.0
    dt_max_years: float = 1e4
    max_vo_loss: float = 0.05
    growth: float = 1.5


@dataclass
class RunResult:
    state: ReactiveState
    remaining_fraction: dict[int, float]
    remaining_volume: dict[int, float]
    history: list[tuple[float, float, float]]
    reached_horizon: bool
    steps: int


def spin_up(state: ReactiveState) -> ReactiveState:
    """Replace the initial fluid composition with the steady transport field.

    The quasi-static image of the paper-style transient initialization; the
    storage re-equilibration is logged outside the per-step ledger.
    """
    work = replace(state, cells=[replace(c) for c in state.cells],
                   history=list(state.history), ledger=list(state.ledger))
    _refresh_flow_if_needed(work)
    ts = solve_transport(work)
    before = work.silica_storage
    for i, cell in enumerate(work.cells):
        cell.silica_concentration = float(ts.concentrations[i])
    work.spinup_storage_change = work.silica_storage - before
    work.last_cell_rates = ts.cell_source.copy()
    work.history.append((work.time, ts.outflow_concentration, work.total_quartz))
    return work


def _tail_flat(history: list[tuple[float, float, float]], col: int,
               t_now: float, span: float, tol: float) -> bool:
    tail = [h[col] for h in history if h[0] >= t_now - span]
    if len(tail) < 2:
        return False
    top = max(abs(v) for v in tail)
    if top == 0.0:
        return True
    return (max(tail) - min(tail)) / top < tol


def run_to_quasi_steady(state: ReactiveState,
                        controls: RunControls | None = None) -> RunResult:
    """Step until the horizon or until the outflow silica concentration and
    the total quartz volume are both flat over the sliding window.

    The naive outflow-only criterion would fire on the early saturation
    plateau (outflow pinned at K_eq while the backbone still holds quartz),
    so quartz flatness is required as well. The window is a time span of
    window * dt_max (adaptive steps shrink to resolve single-cell
    depletions, so a step-count window can alias to a near-zero time span
    and exit spuriously).
    """
    controls = controls or RunControls()
    horizon = controls.horizon_years * SECONDS_PER_YEAR
    dt = controls.dt_initial_years * SECONDS_PER_YEAR
    dt_max = controls.dt_max_years * SECONDS_PER_YEAR
    state = spin_up(state)
    steps = 0
    reached_horizon = False
    while True:
        if state.time >= horizon:
            reached_horizon = True
            break
        # pre-cap from the rates seen at the last solve: the 5% V_o rule and
        # the depletion time of live cells (stale by one step; the retry
        # below catches drift)
        if state.last_cell_rates is not None:
            dt = min(dt, _rate_limited_dt(state, controls))
        dt_try = min(dt, horizon - state.time)
        if dt_try < MIN_DT_SECONDS:
            raise StiffStepError(f"stiff step: dt = {dt_try:.3g} s")
        new_state, info = step(state, dt_try)
        budget = max(info.dissolved, 1e-30)
        if (info.max_vo_loss > 1.5 * controls.max_vo_loss
                or info.clamped_significant > 1e-3 * budget):
            dt = dt_try / 2.0
            continue
        state = new_state
        steps += 1
        if info.max_vo_loss < 0.5 * controls.max_vo_loss:
            dt = min(dt_try * controls.growth, dt_max)
        elif info.max_vo_loss > controls.max_vo_loss:
            dt = dt_try / 2.0
        span = controls.window * controls.dt_max_years * SECONDS_PER_YEAR
        if steps >= controls.window and state.time >= span and \
                _tail_flat(state.history, 1, state.time, span, controls.tol) and \
                _tail_flat(state.history, 2, state.time, span, controls.tol):
            break
    remaining_fraction = state.remaining_fractions()
    remaining_volume = {c.fracture_id: c.quartz_volume for c in state.cells}
    return RunResult(state=state, remaining_fraction=remaining_fraction,
                     remaining_volume=remaining_volume, history=state.history,
                     reached_horizon=reached_horizon, steps=steps)


def _rate_limited_dt(state: ReactiveState, controls: RunControls) -> float:
    """Largest dt honoring the 5%-of-V_o rule and live-cell depletion times."""
    vm = state.constants.molar_volume
    dt_cap = math.inf
    for cell, rate in zip(state.cells, state.last_cell_rates):
        if rate <= 0 or cell.initial_quartz_volume <= 0:
            continue
        dv_rate = rate * vm  # m^3/s
        dt_cap = min(dt_cap,
                     controls.max_vo_loss * cell.initial_quartz_volume / dv_rate)
        if cell.quartz_volume > DUST_FRACTION * cell.initial_quartz_volume:
            dt_cap = min(dt_cap, cell.quartz_volume / dv_rate)
    return max(dt_cap, MIN_DT_SECONDS)


def mass_ledger_summary(state: ReactiveState) -> dict[str, float]:
    """Cumulative silica balance over the run.

    residual = dissolved - (exported - imported + storage change); the
    relative residual is reported against the cumulative dissolved mass.
    """
    dissolved = sum(e.dissolved for e in state.ledger)
    exported = sum(e.exported for e in state.ledger)
    imported = sum(e.imported for e in state.ledger)
    if state.ledger:
        storage_change = (state.ledger[-1].storage_after
                          - state.ledger[0].storage_before)
    else:
        storage_change = 0.0
    residual = dissolved - (exported - imported + storage_change)
    denom = max(dissolved, 1e-30)
    return {
        "dissolved": dissolved,
        "exported": exported,
        "imported": imported,
        "storage_change": storage_change,
        "spinup_storage_change": state.spinup_storage_change,
        "residual": residual,
        "relative_residual": abs(residual) / denom,
    }


def results_csv_rows(result: RunResult) -> list[str]:
    """`fracture_id,V_o,V_final,remaining_fraction` rows with header."""
    lines = ["fracture_id,V_o,V_final,remaining_fraction"]
    for cell in result.state.cells:
        lines.append(f"{cell.fracture_id},{float(cell.initial_quartz_volume)!r},"
                     f"{float(cell.quartz_volume)!r},"
                     f"{float(cell.remaining_fraction)!r}")
    return lines


def history_csv_rows(result: RunResult) -> list[str]:
    """`time_s,outflow_c_mol_per_L,total_quartz_m3` rows with header."""
    lines = ["time_s,outflow_c_mol_per_L,total_quartz_m3"]
    for t, c, q in result.history:
        lines.append(f"{float(t)!r},{float(c)!r},{float(q)!r}")
    return lines
