"""Residual relational graph network over the SIQ graph.

The architecture: one input projection per node type to a shared hidden
size, k relational message-passing layers (a weight matrix per relation
plus a self weight), and a readout head. The full variant concatenates the
target nodes' raw features with every intermediate hidden state before the
head; the plain relational variants read only the last hidden state, either
on the SIQ graph ("rgcn_e2n") or on the bipartite student-question graph
with no interaction nodes ("rgcn_no_e2n").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    constant,
    linear,
    matmul,
    relu,
    row_gather,
    row_scatter_mean,
)
from .graph import SIQGraph
from .optim import ParamSet, glorot_uniform

VARIANTS = ("r2gcn", "rgcn_e2n", "rgcn_no_e2n")

SIQ_NODE_TYPES = ("student", "interaction", "question")
SIQ_RELATIONS = (
    ("interaction", "i_to_q", "question"),
    ("question", "q_to_i", "interaction"),
    ("interaction", "i_to_s", "student"),
    ("student", "s_to_i", "interaction"),
)
BIPARTITE_NODE_TYPES = ("student", "question")
BIPARTITE_RELATIONS = (
    ("student", "s_to_q", "question"),
    ("question", "q_to_s", "student"),
)


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    readout_hidden: int = 128
    num_layers: int = 3
    num_classes: int = 4
    variant: str = "r2gcn"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.num_layers < 1 or self.hidden <= 0 or self.readout_hidden <= 0:
            raise ValueError("num_layers must be >= 1 and hidden sizes positive")


@dataclass
class GraphWiring:
    """A variant-specific view of the graph: typed features and edge lists."""

    node_types: tuple[str, ...]
    features: dict[str, np.ndarray]
    relations: tuple[tuple[str, str, str], ...]  # (source type, name, destination type)
    edges: dict[str, tuple[np.ndarray, np.ndarray]]
    counts: dict[str, int]
    target: str = "question"
    _constants: dict[str, Tensor] = field(default_factory=dict, repr=False)

    def feature_tensor(self, node_type: str) -> Tensor:
        if node_type not in self._constants:
            self._constants[node_type] = constant(self.features[node_type])
        return self._constants[node_type]


def _scaled(features: np.ndarray, scale: np.ndarray | None) -> np.ndarray:
    return features if scale is None else features / scale


def wiring_for(graph: SIQGraph, variant: str) -> GraphWiring:
    if variant in ("r2gcn", "rgcn_e2n"):
        features = {
            "student": _scaled(graph.s_features, graph.s_scale),
            "interaction": _scaled(graph.i_features, graph.i_scale),
            "question": _scaled(graph.q_features, graph.q_scale),
        }
        edges = graph.relation_edges()
        return GraphWiring(
            node_types=SIQ_NODE_TYPES,
            features=features,
            relations=SIQ_RELATIONS,
            edges=edges,
            counts={
                "student": len(graph.students),
                "interaction": graph.n_interactions,
                "question": len(graph.questions),
            },
        )
    if variant == "rgcn_no_e2n":
        features = {
            "student": _scaled(graph.s_features, graph.s_scale),
            "question": _scaled(graph.q_features, graph.q_scale),
        }
        edges = {
            "s_to_q": (graph.i_student, graph.i_question),
            "q_to_s": (graph.i_question, graph.i_student),
        }
        return GraphWiring(
            node_types=BIPARTITE_NODE_TYPES,
            features=features,
            relations=BIPARTITE_RELATIONS,
            edges=edges,
            counts={"student": len(graph.students), "question": len(graph.questions)},
        )
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def init_params(wiring: GraphWiring, config: ModelConfig, rng: np.random.Generator) -> ParamSet:
    """Glorot-uniform weights, zero biases, in a deterministic naming order."""
    params = ParamSet()
    h = config.hidden
    for t in wiring.node_types:
        d = wiring.features[t].shape[1]
        params.add(f"input.{t}.weight", glorot_uniform(rng, d, h))
        params.add(f"input.{t}.bias", np.zeros(h))
    for layer in range(config.num_layers):
        for _, name, _ in wiring.relations:
            params.add(f"layer{layer}.{name}.weight", glorot_uniform(rng, h, h))
        params.add(f"layer{layer}.self.weight", glorot_uniform(rng, h, h))
        params.add(f"layer{layer}.bias", np.zeros(h))
    d_target = wiring.features[wiring.target].shape[1]
    if config.variant == "r2gcn":
        d_read = d_target + (config.num_layers + 1) * h
    else:
        d_read = h
    params.add("readout.hidden.weight", glorot_uniform(rng, d_read, config.readout_hidden))
    params.add("readout.hidden.bias", np.zeros(config.readout_hidden))
    params.add("readout.out.weight", glorot_uniform(rng, config.readout_hidden, config.num_classes))
    params.add("readout.out.bias", np.zeros(config.num_classes))
    return params


def input_projection(wiring: GraphWiring, params: ParamSet) -> dict[str, Tensor]:
    """Project each node type's raw features to the shared hidden size."""
    return {
        t: relu(linear(wiring.feature_tensor(t), params[f"input.{t}.weight"], params[f"input.{t}.bias"]))
        for t in wiring.node_types
    }


def relational_messages(
    wiring: GraphWiring, h: dict[str, Tensor], rel_weights: dict[str, Tensor]
) -> dict[str, Tensor | None]:
    """Sum over relations of the per-relation neighbor means (weighted by W_r).

    Destinations with no neighbors under a relation receive zero from it;
    a node type with no incoming relations at all maps to None.
    """
    messages: dict[str, Tensor | None] = {t: None for t in wiring.node_types}
    for src_type, name, dst_type in wiring.relations:
        src_idx, dst_idx = wiring.edges[name]
        transformed = row_gather(matmul(h[src_type], rel_weights[name]), src_idx)
        agg = row_scatter_mean(transformed, dst_idx, wiring.counts[dst_type])
        prev = messages[dst_type]
        messages[dst_type] = agg if prev is None else add(prev, agg)
    return messages


def update_states(
    wiring: GraphWiring,
    h: dict[str, Tensor],
    messages: dict[str, Tensor | None],
    self_weight: Tensor,
    bias: Tensor,
) -> dict[str, Tensor]:
    """h' = relu(message + W_0 h + b), preserving the center node's own state."""
    out = {}
    for t in wiring.node_types:
        own = linear(h[t], self_weight, bias)
        m = messages.get(t)
        out[t] = relu(own if m is None else add(m, own))
    return out


def readout(
    target_features: Tensor,
    target_hidden: list[Tensor],
    params: ParamSet,
    config: ModelConfig,
) -> Tensor:
    """Class logits per target node; the full variant gets the residual concat."""
    if config.variant == "r2gcn":
        z = concat([target_features] + target_hidden, axis=1)
    else:
        z = target_hidden[-1]
    hidden = relu(linear(z, params["readout.hidden.weight"], params["readout.hidden.bias"]))
    return linear(hidden, params["readout.out.weight"], params["readout.out.bias"])


def forward(wiring: GraphWiring, params: ParamSet, config: ModelConfig) -> Tensor:
    """Logits for every target (question) node."""
    h = input_projection(wiring, params)
    target_hidden = [h[wiring.target]]
    for layer in range(config.num_layers):
        rel_weights = {name: params[f"layer{layer}.{name}.weight"] for _, name, _ in wiring.relations}
        messages = relational_messages(wiring, h, rel_weights)
        h = update_states(
            wiring, h, messages, params[f"layer{layer}.self.weight"], params[f"layer{layer}.bias"]
        )
        target_hidden.append(h[wiring.target])
    return readout(wiring.feature_tensor(wiring.target), target_hidden, params, config)


def logits_to_levels(logits: np.ndarray) -> np.ndarray:
    """Predicted score level per row; ties resolve to the lowest level."""
    return np.argmax(logits, axis=1)
