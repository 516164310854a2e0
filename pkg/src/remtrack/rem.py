"""Relation encoding: recurrent graph-attention message passing over tracks.

Each frame, every tracked instance turns its box and positional offset into a
node feature through an input GRU, exchanges messages with spatially adjacent
instances, aggregates them with dot-product attention, and folds the result
into a per-instance relation embedding through a second GRU. Temporal edges
are realized by the GRU recurrences; attention only ever runs over spatial
neighbors.

Aggregation over neighbors is order-independent by construction (exact sums),
so relabeling instances permutes the outputs bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GruCellParams, ParameterStore, Tensor
from .geometry import BoundingBox, scaled_distance
from .st_graph import SpatioTemporalGraph

# The generic nonlinearity is LeakyReLU(0.1); attention logits use the
# steeper 0.2 slope customary for graph attention.
SIGMA_SLOPE = 0.1
ATTENTION_SLOPE = 0.2

DEFAULT_DIM = 128
DEFAULT_WINDOW = 10
BOX_FEATURES = 8  # box (4) concatenated with its one-step offset (4)

# Box coordinates are divided by this before entering the input affine so the
# recurrent gates stay in their sensitive range for scene-sized coordinates.
DEFAULT_INPUT_SCALE = 10.0


@dataclass
class RemParameters:
    """All learnable weights of the relation module, embedding dim ``dim``."""

    w_in: Tensor
    b_in: Tensor
    gru_in: GruCellParams
    w_m1: Tensor
    b_m1: Tensor
    w_m2: Tensor
    b_m2: Tensor
    w_a1: Tensor
    w_a2: Tensor
    w_u: Tensor
    b_u: Tensor
    gru_rel: GruCellParams
    dim: int = DEFAULT_DIM
    input_scale: float = DEFAULT_INPUT_SCALE

    @classmethod
    def create(
        cls,
        store: ParameterStore,
        dim: int = DEFAULT_DIM,
        rng: np.random.Generator | None = None,
        prefix: str = "rem",
        input_scale: float = DEFAULT_INPUT_SCALE,
    ) -> "RemParameters":
        if dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        if input_scale <= 0:
            raise ValueError("input scale must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(
            w_in=store.matrix(f"{prefix}.w_in", dim, BOX_FEATURES, rng),
            b_in=store.zeros(f"{prefix}.b_in", dim),
            gru_in=GruCellParams.create(store, f"{prefix}.gru_in", dim, dim, rng),
            w_m1=store.matrix(f"{prefix}.w_m1", dim, 2 * dim + 1, rng),
            b_m1=store.zeros(f"{prefix}.b_m1", dim),
            w_m2=store.matrix(f"{prefix}.w_m2", dim, dim, rng),
            b_m2=store.zeros(f"{prefix}.b_m2", dim),
            w_a1=store.matrix(f"{prefix}.w_a1", dim, dim, rng),
            w_a2=store.matrix(f"{prefix}.w_a2", dim, dim, rng),
            w_u=store.matrix(f"{prefix}.w_u", dim, 2 * dim, rng),
            b_u=store.zeros(f"{prefix}.b_u", dim),
            gru_rel=GruCellParams.create(store, f"{prefix}.gru_rel", dim, dim, rng),
            dim=dim,
            input_scale=input_scale,
        )


@dataclass
class RemState:
    """Recurrent per-instance state: node hidden v, relation embedding r,
    and the box from the previous frame. Keys are exactly the live ids."""

    v: dict[int, Tensor] = field(default_factory=dict)
    r: dict[int, Tensor] = field(default_factory=dict)
    prev_box: dict[int, BoundingBox] = field(default_factory=dict)

    def live(self) -> set[int]:
        return set(self.v)


@dataclass(frozen=True)
class RelationEmbedding:
    instance: int
    t: int
    vector: np.ndarray


def node_feature(
    params: RemParameters,
    box: BoundingBox,
    prev_box: BoundingBox | None,
    v_prev: Tensor | None,
) -> Tensor:
    """Input feature: GRU over sigma(W_in [box || box - prev_box] + b_in).

    At an instance's first frame the offset is zero and the hidden state
    starts at zeros. Coordinates enter divided by ``params.input_scale``.
    """
    p = box.as_array()
    offset = p - prev_box.as_array() if prev_box is not None else np.zeros(4)
    scaled = np.concatenate([p, offset]) / params.input_scale
    x = ad.leaky_relu(ad.affine(params.w_in, Tensor(scaled), params.b_in), SIGMA_SLOPE)
    if v_prev is None:
        v_prev = Tensor(np.zeros(params.dim))
    return ad.gru_cell(params.gru_in, x, v_prev)


def message(params: RemParameters, v_i: Tensor, v_j: Tensor, d_ij: float) -> Tensor:
    """Directed message to receiver i from sender j, aware of their distance."""
    if d_ij < 0:
        raise ValueError("distance must be non-negative")
    x = ad.concat([v_i, v_j, Tensor(np.array([d_ij]))])
    hidden = ad.leaky_relu(ad.affine(params.w_m1, x, params.b_m1), SIGMA_SLOPE)
    return ad.leaky_relu(ad.affine(params.w_m2, hidden, params.b_m2), SIGMA_SLOPE)


def attention_coefficients(
    params: RemParameters, v_i: Tensor, neighbor_feats: Sequence[Tensor]
) -> Tensor:
    """Softmax over LeakyReLU((W_a1 v_i)^T (W_a2 v_j)) for spatial neighbors."""
    neighbor_feats = list(neighbor_feats)
    if not neighbor_feats:
        raise ValueError("attention requires a non-empty neighbor set")
    query = ad.affine(params.w_a1, v_i)
    logits = [
        ad.leaky_relu(ad.dot(query, ad.affine(params.w_a2, v_j)), ATTENTION_SLOPE)
        for v_j in neighbor_feats
    ]
    return ad.softmax(ad.stack(logits))


def spatiotemporal_update(
    params: RemParameters,
    v_i: Tensor,
    aggregated: Tensor,
    r_prev: Tensor | None,
) -> Tensor:
    """Spatial perceptron over [v_i || aggregated], then the temporal GRU."""
    u = ad.leaky_relu(ad.affine(params.w_u, ad.concat([v_i, aggregated]), params.b_u), SIGMA_SLOPE)
    if r_prev is None:
        r_prev = Tensor(np.zeros(params.dim))
    return ad.gru_cell(params.gru_rel, u, r_prev)


def _aggregate(
    params: RemParameters,
    v: dict[int, Tensor],
    i: int,
    neighbor_ids: Sequence[int],
    distance,
) -> Tensor:
    if not neighbor_ids:
        return Tensor(np.zeros(params.dim))
    msgs = [message(params, v[i], v[j], distance(i, j)) for j in neighbor_ids]
    alphas = attention_coefficients(params, v[i], [v[j] for j in neighbor_ids])
    return ad.weighted_sum(alphas, msgs)


def rem_step(
    params: RemParameters,
    state: RemState,
    graph: SpatioTemporalGraph,
    t: int,
) -> list[RelationEmbedding]:
    """Advance the module through frame t of the graph.

    New instances start from zero hidden states; departed instances are
    dropped. The state must hold exactly the instances of frame t-1.
    """
    frame = graph.frames[t]
    prev_ids = set(graph.frames[t - 1].ids) if t > 0 else set()
    if state.live() != prev_ids:
        raise ValueError(
            f"state instances {sorted(state.live())} do not match frame {t - 1} "
            f"instances {sorted(prev_ids)}"
        )
    continuing = prev_ids & set(frame.ids)

    v: dict[int, Tensor] = {}
    for i in frame.ids:
        if i in continuing:
            v[i] = node_feature(params, frame.boxes[i], state.prev_box[i], state.v[i])
        else:
            v[i] = node_feature(params, frame.boxes[i], None, None)

    embeddings: list[RelationEmbedding] = []
    r: dict[int, Tensor] = {}
    for i in frame.ids:
        agg = _aggregate(params, v, i, frame.neighbors[i], frame.distance)
        r[i] = spatiotemporal_update(params, v[i], agg, state.r[i] if i in continuing else None)
        embeddings.append(RelationEmbedding(i, t, r[i].data.copy()))

    state.v = v
    state.r = r
    state.prev_box = {i: frame.boxes[i] for i in frame.ids}
    return embeddings


# ---------------------------------------------------------------------------
# relation importance (leave-one-out)


def _phi(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos^2 similarity; zero-norm inputs mean nothing changed."""
    if np.array_equal(a, b):
        return 0.0  # unchanged embedding, exactly
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    c = float(np.dot(a, b)) / (na * nb)
    return 1.0 - min(c * c, 1.0)


def _window_node_features(
    params: RemParameters, graph: SpatioTemporalGraph, t: int, window: int
) -> list[dict[int, Tensor]]:
    """Node features for frames [t-window+1, t], zero states at window start.

    Recurrence carries only across consecutive presence, mirroring rem_step.
    """
    t0 = max(0, t - window + 1)
    out: list[dict[int, Tensor]] = []
    for s in range(t0, t + 1):
        frame = graph.frames[s]
        prev = out[-1] if out else {}
        prev_boxes = graph.frames[s - 1].boxes if s > t0 else {}
        v: dict[int, Tensor] = {}
        for i in frame.ids:
            if i in prev and i in prev_boxes:
                v[i] = node_feature(params, frame.boxes[i], prev_boxes[i], prev[i])
            else:
                v[i] = node_feature(params, frame.boxes[i], None, None)
        out.append(v)
    return out


def _replay_relation(
    params: RemParameters,
    graph: SpatioTemporalGraph,
    t: int,
    window: int,
    instance: int,
    feats: list[dict[int, Tensor]],
    exclude: int | None,
) -> np.ndarray:
    """Relation embedding of ``instance`` at t from a window replay, with
    ``exclude`` removed from its neighbor set at every step."""
    t0 = max(0, t - window + 1)
    r: Tensor | None = None
    present_before = False
    for s in range(t0, t + 1):
        frame = graph.frames[s]
        if instance not in frame.boxes:
            r = None
            present_before = False
            continue
        v = feats[s - t0]
        neighbor_ids = [j for j in frame.neighbors[instance] if j != exclude]
        agg = _aggregate(params, v, instance, neighbor_ids, frame.distance)
        r = spatiotemporal_update(params, v[instance], agg, r if present_before else None)
        present_before = True
    if r is None:
        raise ValueError(f"instance {instance} not present at frame {t}")
    return r.data


def relation_importance(
    params: RemParameters,
    graph: SpatioTemporalGraph,
    t: int,
    i: int,
    j: int,
    window: int = DEFAULT_WINDOW,
) -> float:
    """Degree to which instance j shapes instance i's embedding at frame t.

    Gated to zero beyond the graph threshold; otherwise 1 - cos^2 between
    i's embedding and its leave-j-out recomputation, both replayed over the
    trailing window so the two sides are directly comparable. Asymmetric in
    general.
    """
    if i == j:
        raise ValueError("relation importance needs two distinct instances")
    frame = graph.frames[t]
    if i not in frame.boxes or j not in frame.boxes:
        raise ValueError(f"instances {i}, {j} must both be present at frame {t}")
    if scaled_distance(frame.boxes[i], frame.boxes[j]) > graph.d_th:
        return 0.0
    with ad.no_grad():
        feats = _window_node_features(params, graph, t, window)
        r_full = _replay_relation(params, graph, t, window, i, feats, exclude=None)
        r_drop = _replay_relation(params, graph, t, window, i, feats, exclude=j)
    return _phi(r_full, r_drop)


def relation_importance_records(
    params: RemParameters,
    graph: SpatioTemporalGraph,
    window: int = DEFAULT_WINDOW,
    frames: Sequence[int] | None = None,
) -> list[tuple[int, int, int, float]]:
    """(t, i, j, R) for every ordered pair within the gate at each frame."""
    records: list[tuple[int, int, int, float]] = []
    frame_ids = range(graph.n_frames) if frames is None else frames
    with ad.no_grad():
        for t in frame_ids:
            frame = graph.frames[t]
            feats = _window_node_features(params, graph, t, window)
            full: dict[int, np.ndarray] = {}
            for i in frame.ids:
                if not frame.neighbors[i]:
                    continue
                full[i] = _replay_relation(params, graph, t, window, i, feats, exclude=None)
                for j in frame.neighbors[i]:
                    r_drop = _replay_relation(params, graph, t, window, i, feats, exclude=j)
                    records.append((t, i, j, _phi(full[i], r_drop)))
    return records
