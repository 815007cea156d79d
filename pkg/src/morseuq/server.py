"""HTTP JSON API over proofreading sessions, consumed by the browser client.

Grids travel as base64-encoded GRD1 blobs. Mutations are serialized per case
with a lock; reads return a snapshot of the session state. Decision errors
map to 404 (unknown structure), 409 (already decided), and 422 (structure not
in the pending queue).
"""

from __future__ import annotations

import base64
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .grids import grid_from_bytes, grid_to_bytes, save_grid
from .inferpost import CaseResult, analyze_case
from .morse import MorseSkeleton
from .probdmt import SamplerConfig
from .proofread import (AlreadyDecidedError, NotPendingError, Session,
                        UnknownStructureError, apply_decision, new_session)
from .regressor import RegressorParams
from .structgraph import Case, load_corpus


def grid_to_base64(grid) -> str:
    return base64.b64encode(grid_to_bytes(grid)).decode("ascii")


def base64_to_grid(data: str):
    return grid_from_bytes(base64.b64decode(data), "<base64>")


@dataclass
class ServedCase:
    case: Case
    skel: MorseSkeleton
    result: CaseResult
    session: Session
    lock: threading.Lock


def build_store(corpus_dir, params: RegressorParams, sampler_cfg: SamplerConfig,
                runs: int = 5, *, box: int = 32, bg_threshold: float = 0.01,
                seed: int = 0) -> dict[str, ServedCase]:
    """Run inference over every corpus case and open one session per case."""
    store: dict[str, ServedCase] = {}
    for case in load_corpus(corpus_dir):
        skel, result = analyze_case(params, case, sampler_cfg, runs, box=box,
                                    bg_threshold=bg_threshold, seed=seed)
        session = new_session(case, skel, result.estimates, result)
        store[case.case_id] = ServedCase(case=case, skel=skel, result=result,
                                         session=session, lock=threading.Lock())
    return store


class DecisionRequest(BaseModel):
    structure_id: int
    accept: bool


def _case_payload(served: ServedCase) -> dict:
    session = served.session
    decided = session.decisions
    paths = {s.id: s.path for s in served.skel.structures}
    last = session.trace[-1]
    return {
        "id": session.case_id,
        "dims": list(served.case.likelihood.dims),
        "image": grid_to_base64(served.case.image),
        "likelihood": grid_to_base64(served.case.likelihood),
        "backbone_seg": grid_to_base64(served.case.segmentation()),
        "final_mask": grid_to_base64(session.final_mask),
        "skeleton": grid_to_base64(session.skeletal_mask),
        "heatmap": grid_to_base64(session.heatmap),
        "structures": [{
            "id": e.structure_id,
            "path": [list(c) for c in paths[e.structure_id]],
            "p_bar": e.p_bar,
            "var_bar": e.var_bar,
            "u_norm": e.u_norm,
            "accepted": decided.get(e.structure_id, e.accepted),
            "decided": decided.get(e.structure_id),
        } for e in session.estimates],
        "pending": list(session.pending),
        "mask_pixels": int(session.final_mask.data.sum()),
        "dice": last[1],
        "cldice": last[2],
    }


def create_app(store: dict[str, ServedCase], export_dir=".") -> FastAPI:
    app = FastAPI(title="morseuq proofreading service")
    export_dir = Path(export_dir)

    def _served(case_id: str) -> ServedCase:
        if case_id not in store:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id}")
        return store[case_id]

    @app.get("/api/cases")
    def list_cases():
        return [{"id": cid, "dims": list(sc.case.likelihood.dims)}
                for cid, sc in sorted(store.items())]

    @app.get("/api/case/{case_id}")
    def get_case(case_id: str):
        served = _served(case_id)
        with served.lock:
            return _case_payload(served)

    @app.post("/api/case/{case_id}/decision")
    def post_decision(case_id: str, req: DecisionRequest):
        served = _served(case_id)
        with served.lock:
            try:
                apply_decision(served.session, req.structure_id, req.accept)
            except UnknownStructureError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            except AlreadyDecidedError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            except NotPendingError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            last = served.session.trace[-1]
            return {"dice": last[1], "cldice": last[2],
                    "remaining": len(served.session.pending)}

    @app.get("/api/case/{case_id}/trace")
    def get_trace(case_id: str):
        served = _served(case_id)
        with served.lock:
            return {"trace": [[c, d, cd] for c, d, cd in served.session.trace]}

    @app.post("/api/case/{case_id}/export")
    def export_mask(case_id: str):
        served = _served(case_id)
        with served.lock:
            export_dir.mkdir(parents=True, exist_ok=True)
            path = export_dir / f"{case_id}_corrected.grd"
            save_grid(served.session.final_mask, path)
            return {"path": str(path)}

    return app
