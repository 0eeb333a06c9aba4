import dataclasses

import numpy as np
import pytest

from dcsmote.anchor import AnchorSpec, smote_anchor
from dcsmote.datasets import LabeledDataset, generate_artificial, make_partition
from dcsmote.linalg import ParameterError
from dcsmote.metrics import accuracy
from dcsmote.models import tree_fit
from dcsmote.protocol import (CollabModelBundle, MasterState, ModelSpec, PipelineError,
                              WorkerState, WorkerUpload, master_fit_maps,
                              master_label_anchors, master_train, resolve_dims,
                              run_dc_pipeline, worker_distill, worker_prepare)


@pytest.fixture(scope="module")
def artificial():
    train, test, pub = generate_artificial(1000, 1000, 100, seed=0)
    plan = make_partition(1000, 20, 2, 2, seed=0)
    return train, test, pub, plan


@pytest.fixture(scope="module")
def smote_run(artificial):
    train, _, pub, plan = artificial
    return run_dc_pipeline(train, plan, AnchorSpec("smote", r=1000, seed=1), dims=5, X_pub=pub)


def uploads_for(train, plan, anchor, dims=5):
    out = []
    for i, j in plan.parties():
        st = WorkerState((i, j), plan.block(train.X, i, j), dims,
                         train.y[plan.row_groups[i]] if j == 0 else None)
        out.append(worker_prepare(st, anchor[:, plan.col_groups[j]]))
    return out


# --- worker ------------------------------------------------------------------

def test_upload_shapes(artificial):
    train, _, pub, plan = artificial
    anchor = smote_anchor(pub, 1000, seed=0)
    for up in uploads_for(train, plan, anchor):
        assert up.X_tilde.shape == (500, 5) and up.X_anc_tilde.shape == (1000, 5)


def test_same_map_on_data_and_anchor():
    X = np.random.default_rng(0).standard_normal((30, 6))
    up = worker_prepare(WorkerState((0, 0), X, 3, np.zeros(30, int)), X)
    np.testing.assert_array_equal(up.X_tilde, up.X_anc_tilde)


def test_worker_determinism(artificial):
    train, _, pub, plan = artificial
    anchor = smote_anchor(pub, 200, seed=0)
    a = uploads_for(train, plan, anchor)
    b = uploads_for(train, plan, anchor)
    assert [u.to_bytes() for u in a] == [u.to_bytes() for u in b]


def test_worker_rejects_full_width():
    X = np.random.default_rng(0).standard_normal((10, 4))
    with pytest.raises(ParameterError):
        worker_prepare(WorkerState((0, 0), X, 4), X)


# --- privacy boundary --------------------------------------------------------

def test_upload_type_has_no_raw_block_field():
    names = {f.name for f in dataclasses.fields(WorkerUpload)}
    assert names == {"party", "X_tilde", "X_anc_tilde", "labels"}
    master_fields = {f.name for f in dataclasses.fields(MasterState)}
    assert not any("block" in n or n == "X" for n in master_fields)


def test_raw_values_do_not_reach_master(artificial):
    train, _, pub, plan = artificial
    anchor = smote_anchor(pub, 300, seed=0)
    ups = uploads_for(train, plan, anchor)
    state = master_fit_maps(ups)
    sent = [u.X_tilde for u in ups] + list(state.X_tilde.values())
    for i, j in plan.parties():
        raw = plan.block(train.X, i, j)
        raw_vals = set(np.round(raw.ravel(), 12).tolist())
        for M in sent:
            for col in M.T:
                assert not set(np.round(col, 12).tolist()) <= raw_vals


# --- wire format -------------------------------------------------------------

def test_upload_round_trip():
    rng = np.random.default_rng(0)
    up = WorkerUpload((1, 2), rng.standard_normal((4, 3)), rng.standard_normal((5, 3)),
                      np.array([0, 1, 1, 0]))
    data = up.to_bytes()
    assert data[:4] == b"DCU1" and int.from_bytes(data[4:12], "little") == 1
    back = WorkerUpload.from_bytes(data)
    assert back.party == (1, 2)
    np.testing.assert_array_equal(back.X_tilde, up.X_tilde)
    np.testing.assert_array_equal(back.labels, up.labels)
    nolab = WorkerUpload((0, 0), up.X_tilde, up.X_anc_tilde)
    assert WorkerUpload.from_bytes(nolab.to_bytes()).labels is None


def test_bundle_round_trip():
    b = CollabModelBundle({0: np.array([1, 0, 1]), 1: np.array([0, 0, 1])})
    back = CollabModelBundle.from_bytes(b.to_bytes())
    assert sorted(back.pseudo_labels) == [0, 1]
    np.testing.assert_array_equal(back.pseudo_labels[1], [0, 0, 1])


# --- master ------------------------------------------------------------------

def test_single_party_reproduces_target():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((50, 4))
    up = WorkerUpload((0, 0), rng.standard_normal((20, 4)), A, np.zeros(20, int))
    st = master_fit_maps([up], m_hat=3)
    assert np.max(np.abs(A @ st.maps[0] - st.target)) <= 1e-8


def test_orthogonal_equivalent_parties_agree():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((100, 5))
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    ups = [WorkerUpload((0, 0), rng.standard_normal((10, 5)), A, np.zeros(10, int)),
           WorkerUpload((1, 0), rng.standard_normal((10, 5)), A @ Q, np.zeros(10, int))]
    st = master_fit_maps(ups)
    rel = np.linalg.norm(st.collab_anchor(0) - st.collab_anchor(1)) / np.linalg.norm(st.target)
    assert rel <= 1e-6


def test_upload_order_invariance(artificial):
    train, _, pub, plan = artificial
    anchor = smote_anchor(pub, 300, seed=0)
    ups = uploads_for(train, plan, anchor)
    a = master_label_anchors(master_train(master_fit_maps(ups), class_count=2))
    b = master_label_anchors(master_train(master_fit_maps(ups[::-1]), class_count=2))
    assert a.to_bytes() == b.to_bytes()


def test_identical_uploads_give_identical_pseudo_labels():
    rng = np.random.default_rng(2)
    A, X = rng.standard_normal((40, 3)), rng.standard_normal((20, 3))
    y = (X[:, 0] > 0).astype(int)
    ups = [WorkerUpload((i, 0), X, A, y) for i in range(3)]
    bundle = master_label_anchors(master_train(master_fit_maps(ups)))
    assert all(np.array_equal(bundle.pseudo_labels[0], bundle.pseudo_labels[i]) for i in (1, 2))


def test_separable_training_and_perfect_anchor_labels():
    rng = np.random.default_rng(3)
    y = np.repeat([0, 1], 50)
    X = rng.standard_normal((100, 3)) + 6 * y[:, None]
    st = master_train(master_fit_maps([WorkerUpload((0, 0), X, X, y)]), ModelSpec(1e-6))
    assert accuracy(y, st.train_predictions) >= 0.99
    np.testing.assert_array_equal(master_label_anchors(st).pseudo_labels[0], st.train_predictions)
    again = master_train(master_fit_maps([WorkerUpload((0, 0), X, X, y)]), ModelSpec(1e-6))
    assert np.array_equal(again.train_predictions, st.train_predictions)


def test_master_errors():
    A = np.ones((5, 2))
    with pytest.raises(ParameterError):
        master_fit_maps([WorkerUpload((0, 0), A, A, np.zeros(5, int))], m_hat=3)
    with pytest.raises(ParameterError):
        master_fit_maps([WorkerUpload((0, 0), A, A, np.zeros(5, int)),
                         WorkerUpload((0, 0), A, A, np.zeros(5, int))])
    with pytest.raises(ParameterError):
        master_label_anchors(master_fit_maps([WorkerUpload((0, 0), A, A, np.zeros(5, int))]))


def test_rank_deficient_anchors_warn(caplog):
    A = np.column_stack([np.arange(6.0), np.arange(6.0)])
    with caplog.at_level("WARNING"):
        master_fit_maps([WorkerUpload((0, 0), A, A, np.zeros(6, int))], m_hat=1)
    assert "rank deficient" in caplog.text


# --- distillation ------------------------------------------------------------

def test_distill_single_feature_rule():
    X = np.random.default_rng(4).standard_normal((200, 5))
    tree = worker_distill(X, (X[:, 2] > 0.1).astype(int))
    assert tree.nodes[0].feature == 2


def test_distill_constant_labels(caplog):
    X = np.random.default_rng(5).standard_normal((20, 3))
    with caplog.at_level("WARNING"):
        tree = worker_distill(X, np.ones(20, int), class_count=2)
    assert "single class" in caplog.text
    assert tree.n_splits == 0 and np.all(tree.feature_importances() == 0)
    assert np.all(tree.predict(X) == 1)


# --- pipeline ----------------------------------------------------------------

def test_resolve_dims():
    plan = make_partition(10, 20, 2, 2)
    assert set(resolve_dims(plan, "m_j-1").values()) == {9}
    with pytest.raises(ParameterError):
        resolve_dims(plan, 10)


def test_pipeline_smote_accuracy_and_diagnostics(artificial, smote_run):
    _, test, _, _ = artificial
    for tree in smote_run.models.values():
        assert accuracy(test.y, tree.predict(test.X)) >= 0.9
    diag = smote_run.diagnostics
    assert np.isfinite(diag["anchor_disagreement"])
    assert diag["pseudo_label_agreement"] >= 0.75
    assert set(diag["timings"]) == {"anchor", "workers", "master", "distill"}


def test_single_party_near_centralized(artificial):
    train, test, _, _ = artificial
    plan = make_partition(1000, 20, 1, 1)
    res = run_dc_pipeline(train, plan, AnchorSpec("raw", r=1000, seed=0), dims="m_j-1")
    cen = tree_fit(train.X, train.y, 5)
    gap = accuracy(test.y, cen.predict(test.X)) - accuracy(test.y, res.models[0].predict(test.X))
    assert gap <= 0.02


def test_pipeline_determinism(artificial):
    train, _, pub, plan = artificial
    spec = AnchorSpec("tsvd", r=500, seed=3)
    a = run_dc_pipeline(train, plan, spec)
    b = run_dc_pipeline(train, plan, spec)
    assert a.bundle.to_bytes() == b.bundle.to_bytes()
    assert a.models[0].export_text() == b.models[0].export_text()


def test_pipeline_error_carries_step(artificial):
    train, _, _, plan = artificial
    with pytest.raises(PipelineError) as exc:
        run_dc_pipeline(train, plan, AnchorSpec("smote"))
    assert exc.value.step == 1
    bad = LabeledDataset(np.ones((1000, 20)), train.y, 2)
    with pytest.raises(PipelineError) as exc:
        run_dc_pipeline(bad, plan, AnchorSpec("raw", r=100))
    assert exc.value.step == 3
