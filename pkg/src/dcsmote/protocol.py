"""Interpretable data collaboration as an explicit worker/master protocol.

Workers own raw blocks ``X[i, j]`` and never send them. What crosses the
boundary is limited to the message types below:

* ``WorkerUpload`` (worker -> master): PCA scores of the local block and of
  the party's slice of the shared anchors, plus the row-party's labels.
* ``CollabModelBundle`` (master -> workers): hard pseudo-labels for the
  anchors, one vector per row-party.

Both messages have a canonical little-endian byte encoding so the same
protocol can run over a socket.
"""

from __future__ import annotations

import io
import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .anchor import AnchorSpec, build_anchor
from .datasets import LabeledDataset, PartitionPlan
from .linalg import (ParameterError, ShapeError, apply_pca, as_matrix, fit_pca,
                     truncated_svd)
from .models import DecisionTree, RidgeClassifier, ridge_fit, tree_fit

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, step, cause):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class ModelSpec:
    ridge_lambda: float = 1.0
    max_splits: int = 5


# ---------------------------------------------------------------------------
# wire format
# ---------------------------------------------------------------------------

_UPLOAD_MAGIC = b"DCU1"
_BUNDLE_MAGIC = b"DCB1"


def _write_matrix(buf, A):
    A = np.ascontiguousarray(A, dtype="<f8")
    buf.write(struct.pack("<qq", *A.shape))
    buf.write(A.tobytes(order="C"))


def _read_matrix(buf):
    rows, cols = struct.unpack("<qq", buf.read(16))
    data = buf.read(8 * rows * cols)
    return np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(np.float64)


def _write_labels(buf, y):
    if y is None:
        buf.write(struct.pack("<q", -1))
        return
    y = np.ascontiguousarray(y, dtype="<i8")
    buf.write(struct.pack("<q", y.size))
    buf.write(y.tobytes())


def _read_labels(buf):
    (n,) = struct.unpack("<q", buf.read(8))
    if n < 0:
        return None
    return np.frombuffer(buf.read(8 * n), dtype="<i8").astype(np.int64)


@dataclass(frozen=True)
class WorkerUpload:
    """Everything party (i, j) sends to the master. Holds no raw block."""

    party: tuple[int, int]
    X_tilde: np.ndarray
    X_anc_tilde: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.X_tilde.shape[1] != self.X_anc_tilde.shape[1]:
            raise ShapeError("intermediate and anchor representations differ in width")
        if self.labels is not None and self.labels.shape[0] != self.X_tilde.shape[0]:
            raise ShapeError("label count differs from intermediate rows")

    def to_bytes(self) -> bytes:
        """``magic | i j | X_tilde | X_anc_tilde | labels``.

        Integers are little-endian int64, matrices are ``rows cols`` followed
        by row-major little-endian float64, labels are ``count`` (-1 when
        absent) followed by int64 values.
        """
        buf = io.BytesIO()
        buf.write(_UPLOAD_MAGIC)
        buf.write(struct.pack("<qq", *self.party))
        _write_matrix(buf, self.X_tilde)
        _write_matrix(buf, self.X_anc_tilde)
        _write_labels(buf, self.labels)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "WorkerUpload":
        buf = io.BytesIO(data)
        if buf.read(4) != _UPLOAD_MAGIC:
            raise ValueError("not a worker upload")
        party = struct.unpack("<qq", buf.read(16))
        X_tilde = _read_matrix(buf)
        X_anc = _read_matrix(buf)
        return cls((int(party[0]), int(party[1])), X_tilde, X_anc, _read_labels(buf))


@dataclass(frozen=True)
class CollabModelBundle:
    """Anchor pseudo-labels returned to each row-party."""

    pseudo_labels: dict[int, np.ndarray]

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_BUNDLE_MAGIC)
        buf.write(struct.pack("<q", len(self.pseudo_labels)))
        for i in sorted(self.pseudo_labels):
            buf.write(struct.pack("<q", i))
            _write_labels(buf, self.pseudo_labels[i])
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "CollabModelBundle":
        buf = io.BytesIO(data)
        if buf.read(4) != _BUNDLE_MAGIC:
            raise ValueError("not a model bundle")
        (count,) = struct.unpack("<q", buf.read(8))
        out = {}
        for _ in range(count):
            (i,) = struct.unpack("<q", buf.read(8))
            out[int(i)] = _read_labels(buf)
        return cls(out)


# ---------------------------------------------------------------------------
# worker side
# ---------------------------------------------------------------------------

@dataclass
class WorkerState:
    party: tuple[int, int]
    X_block: np.ndarray
    dim: int
    labels: np.ndarray | None = None
    pca: object = None


def worker_prepare(state: WorkerState, anchor_block) -> WorkerUpload:
    """Fit this party's PCA once and apply it to both its data and the anchors."""
    X = as_matrix(state.X_block)
    anchor_block = as_matrix(anchor_block, "anchor_block")
    if anchor_block.shape[1] != X.shape[1]:
        raise ShapeError(
            f"anchor block has {anchor_block.shape[1]} columns, party holds {X.shape[1]}")
    state.pca = fit_pca(X, state.dim)
    return WorkerUpload(
        party=state.party,
        X_tilde=apply_pca(state.pca, X),
        X_anc_tilde=apply_pca(state.pca, anchor_block),
        labels=None if state.labels is None else np.asarray(state.labels, dtype=np.int64),
    )


def worker_distill(X_anc, y_anc, spec: ModelSpec = ModelSpec(), class_count=None) -> DecisionTree:
    """Fit the interpretable tree on full-width anchors and their pseudo-labels."""
    X_anc = as_matrix(X_anc, "X_anc")
    y_anc = np.asarray(y_anc, dtype=np.int64)
    if y_anc.shape != (X_anc.shape[0],):
        raise ShapeError("pseudo-label count differs from anchor rows")
    if np.unique(y_anc).size < 2:
        log.warning("pseudo-labels are a single class; distilled model is constant")
    return tree_fit(X_anc, y_anc, spec.max_splits, class_count)


# ---------------------------------------------------------------------------
# master side
# ---------------------------------------------------------------------------

@dataclass
class MasterState:
    X_tilde: dict[int, np.ndarray]
    X_anc_tilde: dict[int, np.ndarray]
    labels: dict[int, np.ndarray]
    m_hat: int
    target: np.ndarray
    maps: dict[int, np.ndarray]
    model: RidgeClassifier | None = None
    class_count: int | None = None
    train_predictions: np.ndarray | None = field(default=None, repr=False)

    def collab(self, i) -> np.ndarray:
        return self.X_tilde[i] @ self.maps[i]

    def collab_anchor(self, i) -> np.ndarray:
        return self.X_anc_tilde[i] @ self.maps[i]

    def anchor_disagreement(self) -> float:
        """Largest pairwise ``||A_i G_i - A_k G_k||_F / ||Z||_F`` over row-parties."""
        parties = sorted(self.maps)
        norm = max(float(np.linalg.norm(self.target)), 1e-300)
        worst = 0.0
        for a in range(len(parties)):
            for b in range(a + 1, len(parties)):
                diff = self.collab_anchor(parties[a]) - self.collab_anchor(parties[b])
                worst = max(worst, float(np.linalg.norm(diff)) / norm)
        return worst


def _assemble(uploads):
    by_party = {}
    for up in uploads:
        if up.party in by_party:
            raise ParameterError(f"duplicate upload from party {up.party}")
        by_party[up.party] = up
    rows = sorted({i for i, _ in by_party})
    cols = sorted({j for _, j in by_party})
    X_tilde, X_anc, labels = {}, {}, {}
    for i in rows:
        missing = [j for j in cols if (i, j) not in by_party]
        if missing:
            raise ParameterError(f"row-party {i} missing uploads for column groups {missing}")
        ups = [by_party[(i, j)] for j in cols]
        X_tilde[i] = np.hstack([u.X_tilde for u in ups])
        X_anc[i] = np.hstack([u.X_anc_tilde for u in ups])
        labs = [u.labels for u in ups if u.labels is not None]
        if not labs:
            raise ParameterError(f"row-party {i} sent no labels")
        if any(not np.array_equal(labs[0], lab) for lab in labs[1:]):
            raise ParameterError(f"row-party {i} sent inconsistent labels")
        labels[i] = labs[0]
    r_values = {a.shape[0] for a in X_anc.values()}
    if len(r_values) != 1:
        raise ShapeError(f"inconsistent anchor counts across uploads: {sorted(r_values)}")
    return X_tilde, X_anc, labels


def master_fit_maps(uploads, m_hat=None) -> MasterState:
    """Align the row-parties through their anchor representations.

    The common target is ``Z = U_m S_m`` from the SVD of the row-parties'
    anchor representations placed side by side; each ``G_i`` is the least
    squares map from party ``i``'s anchor representation onto ``Z``.
    """
    X_tilde, X_anc, labels = _assemble(uploads)
    widths = {i: a.shape[1] for i, a in X_anc.items()}
    if m_hat is None:
        m_hat = min(widths.values())
    if not 1 <= m_hat <= min(widths.values()):
        raise ParameterError(f"m_hat={m_hat} exceeds smallest intermediate width {min(widths.values())}")
    stacked = np.hstack([X_anc[i] for i in sorted(X_anc)])
    if m_hat > min(stacked.shape):
        raise ParameterError(f"m_hat={m_hat} exceeds anchor matrix rank bound {min(stacked.shape)}")
    svd = truncated_svd(stacked, m_hat)
    target = svd.U * svd.singular_values
    maps = {}
    for i, A in X_anc.items():
        G, _, rank, sv = np.linalg.lstsq(A, target, rcond=None)
        if rank < A.shape[1]:
            cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
            log.warning("row-party %d anchor representation is rank deficient "
                        "(rank %d of %d, cond %.3g); using pseudoinverse", i, rank, A.shape[1], cond)
        maps[i] = G
    return MasterState(X_tilde, X_anc, labels, m_hat, target, maps)


def master_train(state: MasterState, spec: ModelSpec = ModelSpec(), class_count=None) -> MasterState:
    """Fit the central ridge model on the stacked collaboration representation."""
    parties = sorted(state.maps)
    X_hat = np.vstack([state.collab(i) for i in parties])
    y = np.concatenate([state.labels[i] for i in parties])
    if X_hat.shape[0] != y.shape[0]:
        raise ShapeError("label count differs from collaboration rows")
    class_count = class_count or int(y.max()) + 1
    state.model = ridge_fit(X_hat, y, class_count, spec.ridge_lambda)
    state.class_count = class_count
    state.train_predictions = state.model.predict(X_hat)
    return state


def master_label_anchors(state: MasterState) -> CollabModelBundle:
    if state.model is None:
        raise ParameterError("central model has not been trained")
    return CollabModelBundle(
        {i: state.model.predict(state.collab_anchor(i)) for i in sorted(state.maps)})


# ---------------------------------------------------------------------------
# whole pipeline
# ---------------------------------------------------------------------------

@dataclass
class DCResult:
    models: dict[int, DecisionTree]
    anchor: np.ndarray
    bundle: CollabModelBundle
    master: MasterState
    diagnostics: dict


def resolve_dims(plan: PartitionPlan, dims) -> dict:
    """Per-party intermediate width; ``dims`` is an int, ``"m_j-1"`` or a mapping."""
    out = {}
    for i, j in plan.parties():
        m_j = plan.col_groups[j].size
        if isinstance(dims, dict):
            v = dims[(i, j)]
        elif dims == "m_j-1":
            v = m_j - 1
        else:
            v = int(dims)
        if not 1 <= v < m_j:
            raise ParameterError(f"party {(i, j)}: intermediate width {v} must be in [1, {m_j - 1}]")
        out[(i, j)] = v
    return out


def run_dc_pipeline(train: LabeledDataset, plan: PartitionPlan, anchor_spec: AnchorSpec,
                    dims=5, model_spec: ModelSpec = ModelSpec(), m_hat=None,
                    X_pub=None, anchor=None) -> DCResult:
    """Run the whole protocol over simulated parties.

    ``anchor`` may be passed pre-built; otherwise it is generated from
    ``anchor_spec``. Errors are re-raised as ``PipelineError`` carrying the
    step number of the algorithm where they happened.
    """
    timings = {}
    t0 = time.perf_counter()
    widths = resolve_dims(plan, dims)
    try:
        if anchor is None:
            anchor = build_anchor(anchor_spec, train.X, plan, X_pub)
        anchor = as_matrix(anchor, "anchor")
    except (ValueError, RuntimeError) as exc:
        raise PipelineError(1, exc) from exc
    timings["anchor"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    uploads = []
    try:
        for i, j in plan.parties():
            state = WorkerState(
                party=(i, j),
                X_block=plan.block(train.X, i, j),
                dim=widths[(i, j)],
                labels=train.y[plan.row_groups[i]] if j == 0 else None,
            )
            uploads.append(worker_prepare(state, anchor[:, plan.col_groups[j]]))
    except (ValueError, RuntimeError) as exc:
        raise PipelineError(3, exc) from exc
    timings["workers"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        master = master_fit_maps(uploads, m_hat)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise PipelineError(7, exc) from exc
    try:
        master = master_train(master, model_spec, train.class_count)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise PipelineError(9, exc) from exc
    bundle = master_label_anchors(master)
    timings["master"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    models = {i: worker_distill(anchor, bundle.pseudo_labels[i], model_spec, train.class_count)
              for i in sorted(bundle.pseudo_labels)}
    timings["distill"] = time.perf_counter() - t0

    parties = sorted(bundle.pseudo_labels)
    agree = [float(np.mean(bundle.pseudo_labels[a] == bundle.pseudo_labels[b]))
             for ai, a in enumerate(parties) for b in parties[ai + 1:]]
    diagnostics = {
        "anchor_disagreement": master.anchor_disagreement(),
        "pseudo_label_agreement": min(agree) if agree else 1.0,
        "timings": timings,
    }
    return DCResult(models, anchor, bundle, master, diagnostics)
