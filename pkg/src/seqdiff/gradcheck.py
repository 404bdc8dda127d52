"""Gradient verification suite: random computation graphs checked against
central finite differences, replay determinism, and zero gradients for
disconnected leaves.

Each random graph is stored as an engine-agnostic recipe and executed twice:
once with plain numpy (the finite-difference path) and once through the
autodiff tensors, so the two sides stay independent.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .network import Dims, init_params
from .rng import RngStream
from .schedule import build_schedule
from .train import TrainConfig, sequence_loss

GRAPH_OPS = ("add", "mul", "matmul", "tanh", "sigmoid", "exp", "sum", "mean", "square")
_SCALE = 0.25          # rescale factor applied whenever values grow past _CAP
_CAP = 4.0


def _random_recipe(stream: RngStream, max_depth: int = 6, max_dim: int = 5):
    """Build a recipe: a list of steps over numbered nodes.

    Steps: ("leaf", shape), (unary_op, src), (binary_op, a, b),
    ("scale", src, factor). The last node is scalar-valued.
    """
    recipe = []
    shapes = []
    depths = []
    values = []  # tracked only to decide where to insert scale guards

    def emit(step, shape, depth, value):
        recipe.append(step)
        shapes.append(shape)
        depths.append(depth)
        values.append(value)
        return len(recipe) - 1

    def leaf(shape):
        value = (stream.uniform(shape) * 2.0 - 1.0)
        return emit(("leaf", shape), shape, 1, value)

    def guard(idx):
        while np.max(np.abs(values[idx])) > _CAP:
            idx = emit(("scale", idx, _SCALE), shapes[idx], depths[idx], values[idx] * _SCALE)
        return idx

    for _ in range(stream.integers(2, 5)):
        leaf((stream.integers(1, max_dim + 1), stream.integers(1, max_dim + 1)))

    n_ops = stream.integers(3, 9)
    for _ in range(n_ops):
        live = [i for i in range(len(recipe)) if depths[i] < max_depth]
        if not live:
            break
        op = GRAPH_OPS[stream.integers(0, len(GRAPH_OPS))]
        a = live[stream.integers(0, len(live))]
        if op in ("tanh", "sigmoid", "exp", "square"):
            fn = {"tanh": np.tanh, "sigmoid": lambda x: 1 / (1 + np.exp(-x)),
                  "exp": np.exp, "square": np.square}[op]
            idx = emit((op, a), shapes[a], depths[a] + 1, fn(values[a]))
        elif op in ("sum", "mean"):
            fn = np.sum if op == "sum" else np.mean
            idx = emit((op, a), (1, 1), depths[a] + 1, np.full((1, 1), fn(values[a])))
        elif op == "matmul":
            mates = [j for j in live if shapes[j][0] == shapes[a][1]]
            b = mates[stream.integers(0, len(mates))] if mates else leaf((shapes[a][1],
                                                                          stream.integers(1, max_dim + 1)))
            idx = emit((op, a, b), (shapes[a][0], shapes[b][1]),
                       max(depths[a], depths[b]) + 1, values[a] @ values[b])
        else:  # add / mul
            mates = [j for j in live if shapes[j] == shapes[a]]
            b = mates[stream.integers(0, len(mates))] if mates else leaf(shapes[a])
            fn = np.add if op == "add" else np.multiply
            idx = emit((op, a, b), shapes[a], max(depths[a], depths[b]) + 1,
                       fn(values[a], values[b]))
        guard(idx)

    if shapes[-1] != (1, 1) or recipe[-1][0] == "leaf":
        emit(("mean", len(recipe) - 1), (1, 1), depths[-1] + 1,
             np.full((1, 1), np.mean(values[-1])))
    leaves = [i for i, step in enumerate(recipe) if step[0] == "leaf"]
    leaf_values = [values[i] for i in leaves]
    return recipe, leaves, leaf_values


def _eval_numpy(recipe, leaves, leaf_values) -> float:
    """Plain-numpy replay; the independent side of the comparison."""
    vals = {}
    supply = iter(leaf_values)
    for i, step in enumerate(recipe):
        op = step[0]
        if op == "leaf":
            vals[i] = next(supply)
        elif op == "scale":
            vals[i] = vals[step[1]] * step[2]
        elif op == "add":
            vals[i] = vals[step[1]] + vals[step[2]]
        elif op == "mul":
            vals[i] = vals[step[1]] * vals[step[2]]
        elif op == "matmul":
            vals[i] = vals[step[1]] @ vals[step[2]]
        elif op == "tanh":
            vals[i] = np.tanh(vals[step[1]])
        elif op == "sigmoid":
            vals[i] = 1.0 / (1.0 + np.exp(-vals[step[1]]))
        elif op == "exp":
            vals[i] = np.exp(vals[step[1]])
        elif op == "square":
            vals[i] = np.square(vals[step[1]])
        elif op == "sum":
            vals[i] = np.full((1, 1), np.sum(vals[step[1]]))
        else:
            vals[i] = np.full((1, 1), np.mean(vals[step[1]]))
    return float(vals[len(recipe) - 1].reshape(()))


def _eval_tensor(recipe, leaves, leaf_values):
    vals = {}
    leaf_nodes = []
    supply = iter(leaf_values)
    for i, step in enumerate(recipe):
        op = step[0]
        if op == "leaf":
            node = ad.Tensor(next(supply))
            leaf_nodes.append(node)
            vals[i] = node
        elif op == "scale":
            vals[i] = ad.mul(vals[step[1]], step[2])
        elif op == "add":
            vals[i] = ad.add(vals[step[1]], vals[step[2]])
        elif op == "mul":
            vals[i] = ad.mul(vals[step[1]], vals[step[2]])
        elif op == "matmul":
            vals[i] = ad.matmul(vals[step[1]], vals[step[2]])
        elif op == "tanh":
            vals[i] = ad.tanh(vals[step[1]])
        elif op == "sigmoid":
            vals[i] = ad.sigmoid(vals[step[1]])
        elif op == "exp":
            vals[i] = ad.exp(vals[step[1]])
        elif op == "square":
            vals[i] = ad.square(vals[step[1]])
        elif op == "sum":
            vals[i] = ad.reshape(ad.tsum(vals[step[1]]), (1, 1))
        else:
            vals[i] = ad.reshape(ad.tmean(vals[step[1]]), (1, 1))
    out = vals[len(recipe) - 1]
    return ad.reshape(out, ()), leaf_nodes


def _pack(leaf_values):
    return np.concatenate([v.ravel() for v in leaf_values])


def _unpack(flat, templates):
    out, pos = [], 0
    for t in templates:
        out.append(flat[pos:pos + t.size].reshape(t.shape))
        pos += t.size
    return out


def graph_gradient_error(stream: RngStream, h: float = 1e-5) -> float:
    """Max relative error between backward and finite differences on one
    random graph."""
    recipe, leaves, leaf_values = _random_recipe(stream)
    out, leaf_nodes = _eval_tensor(recipe, leaves, leaf_values)
    grads = ad.backward(out)
    analytic = _pack([grads.wrt(n) for n in leaf_nodes])

    templates = leaf_values

    def f(flat):
        return _eval_numpy(recipe, leaves, _unpack(flat, templates))

    numeric = ad.finite_diff_grad(f, _pack(leaf_values), h)
    scale = np.maximum(np.abs(numeric), 1.0)
    return float(np.max(np.abs(analytic - numeric) / scale))


def unrolled_loss_gradient_error(seed: int = 0) -> float:
    """Finite-difference check of the full unrolled training loss on a tiny
    model (T=3, D=2, widths <= 4)."""
    stream = RngStream(seed)
    config = TrainConfig(steps=1, batch_size=2, levels=6, schedule_kind="cosine",
                         parameterization="epsilon", latent_dim=3, hidden_dim=4, seed=seed)
    schedule = build_schedule(config.schedule_kind, config.levels)
    params = init_params(stream.child("init"), Dims(2, 3, 4, 1), config.levels,
                         config.parameterization)
    batch = stream.normal((2, 3, 2))
    k = stream.integers(1, config.levels, (2, 3))
    k[0, 0] = 0  # exercise the clean-token target path too
    eps = stream.normal((2, 3, 2))

    tensors = params.tensors()
    scalar, _ = sequence_loss(params, tensors, batch, k, eps, schedule, config)
    grads = ad.backward(scalar)
    names = sorted(params.arrays)
    analytic = np.concatenate([grads.wrt(tensors[n]).ravel() for n in names])

    templates = [params.arrays[n] for n in names]

    def f(flat):
        arrays = dict(zip(names, _unpack(flat, templates)))
        probe = type(params)(params.dims, params.levels, params.parameterization, arrays)
        s, _ = sequence_loss(probe, probe.tensors(), batch, k, eps, schedule, config)
        return float(s.data)

    numeric = ad.finite_diff_grad(f, np.concatenate([t.ravel() for t in templates]), 1e-5)
    scale = np.maximum(np.abs(numeric), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / scale))


def run(n_graphs: int = 200, seed: int = 2024) -> dict:
    """Full suite; returns a report dict with pass/fail and worst errors."""
    root = RngStream(seed, 17)
    worst = 0.0
    for i in range(n_graphs):
        worst = max(worst, graph_gradient_error(root.child("graph", i)))

    # replaying a stream from its saved state must be byte-identical
    s1 = RngStream(seed, 5, 0)
    a = s1.normal((257,))
    s2 = RngStream(*s1.state())
    b = s1.normal((123,))
    c = RngStream(seed, 5, 0).normal((257,))
    replay_ok = (np.array_equal(a, c)
                 and np.array_equal(b, s2.normal((123,))))

    # a leaf the output never touches gets an exactly-zero gradient
    x = ad.Tensor(np.ones(3))
    unused = ad.Tensor(np.ones(4))
    g = ad.backward(ad.tsum(ad.square(x)))
    zero_ok = np.array_equal(g.wrt(unused), np.zeros(4))

    loss_err = unrolled_loss_gradient_error(seed)
    report = {
        "graphs": n_graphs,
        "worst_graph_rel_err": worst,
        "unrolled_loss_rel_err": loss_err,
        "replay_identical": bool(replay_ok),
        "untouched_leaf_zero": bool(zero_ok),
    }
    report["passed"] = bool(worst < 1e-4 and loss_err < 1e-4 and replay_ok and zero_ok)
    return report
