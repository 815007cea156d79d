"""Proofreading: oracle simulation (clicks vs Dice) and the stateful session
engine behind the HTTP service.

A session's final mask is a pure function of the decision map: every decision
reruns threshold-and-overlay with the decided accept states overriding the
model's, so applying the same decisions in any order converges to the same
mask. The pending queue holds undecided structures with uncertainty >= 0.5
in decreasing-uncertainty order (ties by ascending id).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grids import BinaryGrid, ScalarGrid
from .inferpost import (CaseResult, StructureEstimate, diffuse_uncertainty,
                        threshold_and_overlay)
from .metrics import cldice, dice
from .morse import MorseSkeleton
from .structgraph import Case

UNCERTAINTY_CUTOFF = 0.5


class UnknownStructureError(ValueError):
    pass


class AlreadyDecidedError(ValueError):
    pass


class NotPendingError(ValueError):
    pass


@dataclass
class Session:
    case_id: str
    skel: MorseSkeleton
    estimates: tuple[StructureEstimate, ...]
    backbone_seg: BinaryGrid
    gt: BinaryGrid | None
    decisions: dict[int, bool] = field(default_factory=dict)
    pending: list[int] = field(default_factory=list)
    final_mask: BinaryGrid | None = None
    skeletal_mask: BinaryGrid | None = None
    heatmap: ScalarGrid | None = None
    trace: list[tuple[int, float | None, float | None]] = field(default_factory=list)


def pending_queue(estimates, decisions) -> list[int]:
    """Undecided structures with u >= 0.5, most uncertain first (ties by id)."""
    rows = [(e.u_norm, e.structure_id) for e in estimates
            if e.u_norm >= UNCERTAINTY_CUTOFF and e.structure_id not in decisions]
    rows.sort(key=lambda r: (-r[0], r[1]))
    return [sid for _, sid in rows]


def effective_estimates(estimates, decisions):
    return tuple(
        e if e.structure_id not in decisions
        else replace(e, accepted=decisions[e.structure_id])
        for e in estimates)


def _recompute(session: Session) -> None:
    effective = effective_estimates(session.estimates, session.decisions)
    skeletal, final = threshold_and_overlay(effective, session.skel,
                                            session.backbone_seg)
    session.skeletal_mask = skeletal
    session.final_mask = final
    session.heatmap = diffuse_uncertainty(effective, session.skel, final)


def _metrics(session: Session):
    if session.gt is None:
        return None, None
    return (dice(session.final_mask, session.gt),
            cldice(session.final_mask, session.gt))


def new_session(case: Case, skel: MorseSkeleton, estimates,
                result: CaseResult | None = None) -> Session:
    """Initial session state; reuses a precomputed CaseResult when given."""
    session = Session(case_id=case.case_id, skel=skel, estimates=tuple(estimates),
                      backbone_seg=case.segmentation(), gt=case.gt)
    session.pending = pending_queue(session.estimates, session.decisions)
    if result is not None:
        session.final_mask = result.final_mask
        session.skeletal_mask = result.skeletal_mask
        session.heatmap = result.heatmap
    else:
        _recompute(session)
    d, cd = _metrics(session)
    session.trace.append((0, d, cd))
    return session


def apply_decision(session: Session, structure_id: int, accept: bool) -> Session:
    """Record one accept/reject click and refresh mask plus metric trace."""
    known = {e.structure_id for e in session.estimates}
    if structure_id not in known:
        raise UnknownStructureError(f"unknown structure id {structure_id}")
    if structure_id in session.decisions:
        raise AlreadyDecidedError(f"structure {structure_id} already decided")
    if structure_id not in session.pending:
        raise NotPendingError(f"structure {structure_id} is not in the pending queue")
    session.decisions[structure_id] = bool(accept)
    session.pending = pending_queue(session.estimates, session.decisions)
    _recompute(session)
    d, cd = _metrics(session)
    session.trace.append((len(session.decisions), d, cd))
    return session


def oracle_decision(session: Session, structure_id: int) -> bool:
    """Simulated expert: accept iff the structure's soft label is >= 0.5."""
    if session.gt is None:
        raise ValueError("oracle decisions require ground truth")
    path = next(s.path for s in session.skel.structures if s.id == structure_id)
    z = float(np.mean([session.gt.data[c] for c in path]))
    return z >= 0.5


def simulate(case: Case, skel: MorseSkeleton, estimates,
             result: CaseResult | None = None) -> list[tuple[int, float]]:
    """Drive the pending queue with oracle decisions; returns the Dice curve
    starting at click 0."""
    if case.gt is None:
        raise ValueError("simulation requires ground truth")
    session = new_session(case, skel, estimates, result)
    curve = [(0, session.trace[0][1])]
    for clicks, sid in enumerate(list(session.pending), start=1):
        apply_decision(session, sid, oracle_decision(session, sid))
        curve.append((clicks, session.trace[-1][1]))
    return curve


def export_session(session: Session) -> dict:
    """JSON-safe snapshot of every mutable and derived session field."""
    return {
        "case_id": session.case_id,
        "decisions": {str(k): v for k, v in session.decisions.items()},
        "pending": list(session.pending),
        "trace": [[c, d, cd] for c, d, cd in session.trace],
        "estimates": [{
            "structure_id": e.structure_id,
            "p_bar": e.p_bar,
            "var_bar": e.var_bar,
            "u_norm": e.u_norm,
            "accepted": e.accepted,
            "sample_paths": [[list(c) for c in path] for path in e.sample_paths],
        } for e in session.estimates],
    }


def import_session(state: dict, case: Case, skel: MorseSkeleton) -> Session:
    """Rebuild a session from an exported snapshot plus its case context."""
    estimates = tuple(StructureEstimate(
        structure_id=e["structure_id"], p_bar=e["p_bar"], var_bar=e["var_bar"],
        u_norm=e["u_norm"], accepted=e["accepted"],
        sample_paths=tuple(tuple(tuple(c) for c in path)
                           for path in e["sample_paths"]))
        for e in state["estimates"])
    session = Session(case_id=state["case_id"], skel=skel, estimates=estimates,
                      backbone_seg=case.segmentation(), gt=case.gt,
                      decisions={int(k): v for k, v in state["decisions"].items()})
    session.pending = list(state["pending"])
    session.trace = [(c, d, cd) for c, d, cd in state["trace"]]
    _recompute(session)
    return session
