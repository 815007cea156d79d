import numpy as np
import pytest

from morseuq.grids import BinaryGrid, ScalarGrid
from morseuq.inferpost import StructureEstimate, uncertainty_from_variance
from morseuq.morse import build_merge_tree, extract_structures
from morseuq.proofread import (AlreadyDecidedError, NotPendingError,
                               UnknownStructureError, apply_decision,
                               export_session, import_session, new_session,
                               oracle_decision, pending_queue, simulate)
from morseuq.structgraph import Case


def var_for(u):
    return -np.log(1.0 - u)


def estimate(sid, p_bar, u):
    return StructureEstimate(structure_id=sid, p_bar=p_bar, var_bar=var_for(u),
                             u_norm=uncertainty_from_variance(var_for(u)),
                             accepted=p_bar >= 0.5, sample_paths=())


def gap_case():
    """ 7x13 likelihood with a gap in the middle, fully-covered ground truth.

    The skeleton's two legs bridge the gap; the backbone misses it.
    """
    arr = np.zeros((7, 13))
    arr[3, :] = [0.9, 0.85, 0.8, 0.75, 0.4, 0.35, 0.3, 0.35, 0.4, 0.75,
                 0.8, 0.85, 0.88]
    gt = np.zeros((7, 13), dtype=bool)
    gt[3, :] = True
    f = ScalarGrid(arr)
    skel = extract_structures(build_merge_tree(f, 0.1), f)
    case = Case(case_id="gap", image=f, likelihood=f, gt=BinaryGrid(gt))
    return case, skel


class TestPendingQueue:
    def test_order_and_cutoff(self):
        ests = [estimate(0, 0.9, 0.2), estimate(1, 0.9, 0.8),
                estimate(2, 0.1, 0.6), estimate(3, 0.1, 0.8)]
        assert pending_queue(ests, {}) == [1, 3, 2]

    def test_decided_removed(self):
        ests = [estimate(0, 0.9, 0.8), estimate(1, 0.9, 0.7)]
        assert pending_queue(ests, {0: True}) == [1]


class TestSession:
    def _session(self, u_values=(0.8, 0.6)):
        case, skel = gap_case()
        ests = [estimate(s.id, 0.9, u_values[s.id]) for s in skel.structures]
        return case, skel, ests, new_session(case, skel, ests)

    def test_initial_trace_point(self):
        _, _, _, session = self._session()
        assert len(session.trace) == 1
        clicks, d, cd = session.trace[0]
        assert clicks == 0
        assert 0.0 <= d <= 1.0

    def test_apply_decision_appends_trace(self):
        _, _, _, session = self._session()
        sid = session.pending[0]
        apply_decision(session, sid, True)
        assert len(session.trace) == 2
        assert session.trace[-1][0] == 1
        assert sid in session.decisions

    def test_accept_already_accepted_keeps_mask(self):
        _, _, _, session = self._session()
        before = session.final_mask.data.copy()
        sid = session.pending[0]  # accepted by threshold (p_bar 0.9)
        apply_decision(session, sid, True)
        assert (session.final_mask.data == before).all()

    def test_reject_removes_diffusion_region(self):
        case, skel, ests, session = self._session()
        before = int(session.final_mask.data.sum())
        sid = session.pending[0]
        apply_decision(session, sid, False)
        after = int(session.final_mask.data.sum())
        assert after < before

    def test_double_decision_rejected(self):
        _, _, _, session = self._session()
        sid = session.pending[0]
        apply_decision(session, sid, True)
        with pytest.raises(AlreadyDecidedError):
            apply_decision(session, sid, False)

    def test_unknown_structure_rejected(self):
        _, _, _, session = self._session()
        with pytest.raises(UnknownStructureError):
            apply_decision(session, 999, True)

    def test_below_cutoff_not_pending(self):
        case, skel, ests, _ = self._session()
        ests = [estimate(s.id, 0.9, 0.2) for s in skel.structures]
        session = new_session(case, skel, ests)
        assert session.pending == []
        with pytest.raises(NotPendingError):
            apply_decision(session, 0, True)

    def test_mask_is_pure_function_of_decisions(self):
        case, skel, ests, s1 = self._session()
        s2 = new_session(case, skel, ests)
        apply_decision(s1, s1.pending[0], False)
        apply_decision(s1, s1.pending[0], True)
        apply_decision(s2, s2.pending[1], True)
        apply_decision(s2, s2.pending[0], False)
        assert (s1.final_mask.data == s2.final_mask.data).all()

    def test_click_count_equals_pending_size(self):
        case, skel, ests, session = self._session()
        n_uncertain = sum(e.u_norm >= 0.5 for e in ests)
        curve = simulate(case, skel, ests)
        assert len(curve) - 1 == n_uncertain == len(session.pending)


class TestOracleAndSimulate:
    def test_oracle_accepts_true_structure(self):
        case, skel = gap_case()
        ests = [estimate(s.id, 0.9, 0.8) for s in skel.structures]
        session = new_session(case, skel, ests)
        for s in skel.structures:
            assert oracle_decision(session, s.id)  # paths lie on gt row

    def test_oracle_rejects_spurious_structure(self):
        case, skel = gap_case()
        no_gt = Case(case_id="x", image=case.image, likelihood=case.likelihood,
                     gt=BinaryGrid(np.zeros((7, 13), dtype=bool)))
        ests = [estimate(s.id, 0.9, 0.8) for s in skel.structures]
        session = new_session(no_gt, skel, ests)
        assert not oracle_decision(session, 0)

    def test_empty_queue_curve_is_initial_point(self):
        case, skel = gap_case()
        ests = [estimate(s.id, 0.9, 0.1) for s in skel.structures]
        curve = simulate(case, skel, ests)
        assert len(curve) == 1
        assert curve[0][0] == 0

    def test_accepting_gap_bridge_improves_dice(self):
        case, skel = gap_case()
        # model rejected the bridging structures; oracle accepts them
        ests = [estimate(s.id, 0.2, 0.9) for s in skel.structures]
        curve = simulate(case, skel, ests)
        assert curve[-1][1] > curve[0][1]

    def test_flat_curve_when_oracle_agrees(self):
        case, skel = gap_case()
        ests = [estimate(s.id, 0.9, 0.9) for s in skel.structures]
        curve = simulate(case, skel, ests)
        dices = [d for _, d in curve]
        assert max(dices) - min(dices) < 1e-12


class TestExportImport:
    def test_roundtrip_lossless(self):
        case, skel = gap_case()
        ests = [estimate(s.id, 0.9, 0.8) for s in skel.structures]
        session = new_session(case, skel, ests)
        apply_decision(session, session.pending[0], False)
        state = export_session(session)
        import json
        state = json.loads(json.dumps(state))  # force JSON round trip
        restored = import_session(state, case, skel)
        assert restored.case_id == session.case_id
        assert restored.decisions == session.decisions
        assert restored.pending == session.pending
        assert restored.trace == session.trace
        assert restored.estimates == session.estimates
        assert (restored.final_mask.data == session.final_mask.data).all()
        assert (restored.heatmap.data == session.heatmap.data).all()
