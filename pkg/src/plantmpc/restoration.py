"""Post-hoc correction of committed actions against realized loads.

Once the hour's loads are observed, the committed dispatch generally no
longer balances them.  The restoration problem finds the smallest total
rate adjustment (sum of |delta| over all units) that restores both water
balances while keeping every unit within its limits and both tanks inside
their physical capacity.  If no such correction exists the plant takes no
action for the hour and the shortfall is booked downstream.

The condenser identity is imposed inside the correction problem (rather
than recomputed afterwards) so the tower rate both stays consistent and
respects its own limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lp
from .plant import (
    PRODUCTION_UNITS,
    STORAGE_UNITS,
    UNITS,
    ZERO_ACTION,
    ControlAction,
    Disturbance,
    PlantConfig,
    PlantState,
    balance_residuals,
)

UNCHANGED = "unchanged"
CORRECTED = "corrected"
FALLBACK = "fallback"

#: Rate mismatches below this are treated as already balanced (kW).
BALANCE_TOL = 1e-7


@dataclass(frozen=True)
class RestoreOutcome:
    kind: str
    action: ControlAction
    deltas: np.ndarray

    @property
    def total_correction(self) -> float:
        return float(np.abs(self.deltas).sum())


def restore(
    config: PlantConfig,
    state: PlantState,
    action: ControlAction,
    realized: Disturbance,
) -> RestoreOutcome:
    """Minimal-correction repair of ``action`` for the realized loads."""
    residuals = balance_residuals(config, action, realized)
    if max(abs(r) for r in residuals) <= BALANCE_TOL:
        if _storage_feasible(config, state, action):
            return RestoreOutcome(UNCHANGED, action, np.zeros(len(UNITS)))

    prog, split = _correction_program(config, state, action, realized)
    solution = lp.solve(prog, backend=lp.EMBEDDED)
    if not solution.is_optimal:
        return RestoreOutcome(FALLBACK, ZERO_ACTION, np.zeros(len(UNITS)))
    deltas = np.array([solution.x[p] - solution.x[m] for p, m in split])
    deltas[np.abs(deltas) < 1e-12] = 0.0
    if np.abs(deltas).max() <= 1e-9:
        return RestoreOutcome(UNCHANGED, action, np.zeros(len(UNITS)))
    corrected = ControlAction.from_array(action.as_array() + deltas)
    return RestoreOutcome(CORRECTED, corrected, deltas)


def _storage_feasible(
    config: PlantConfig, state: PlantState, action: ControlAction
) -> bool:
    for unit in STORAGE_UNITS:
        e_next = state.storage(unit) - action.rate(unit)
        if not -1e-9 <= e_next <= config.cap(unit) + 1e-9:
            return False
    return True


def _correction_program(
    config: PlantConfig,
    state: PlantState,
    action: ControlAction,
    realized: Disturbance,
) -> tuple[lp.LinearProgram, list[tuple[int, int]]]:
    builder = lp.LpBuilder()
    delta = {u: builder.add_variable(-np.inf, np.inf, 0.0) for u in UNITS}

    cw_res, hw_res, cond_res = balance_residuals(config, action, realized)
    builder.add_row(
        lp.EQ, -cw_res,
        [delta["cs"], delta["hrc"], delta["cw"]],
        [1.0, 1.0, 1.0],
    )
    builder.add_row(
        lp.EQ, -hw_res,
        [delta["hrc"], delta["hwg"], delta["hx"], delta["hw"]],
        [config.alpha_h_hrc, 1.0, -1.0, 1.0],
    )
    builder.add_row(
        lp.EQ, -cond_res,
        [delta["ct"], delta["cs"], delta["hx"]],
        [1.0, -config.alpha_cond_cs, -1.0],
    )

    # Unit limits and tank capacities, as rows so the delta columns stay
    # free for the absolute-value split.
    for u in UNITS:
        rate = action.rate(u)
        if u in PRODUCTION_UNITS:
            lo, hi = -rate, config.pmax(u) - rate
        else:
            lo = max(-config.pmax(u) - rate,
                     state.storage(u) - config.cap(u) - rate)
            hi = min(config.pmax(u) - rate, state.storage(u) - rate)
        builder.add_row(lp.GE, lo, [delta[u]], [1.0])
        builder.add_row(lp.LE, hi, [delta[u]], [1.0])

    prog = builder.build()
    split = []
    for u in UNITS:
        prog, plus, minus = lp.add_free_abs(prog, delta[u])
        split.append((plus, minus))
    return prog, split
