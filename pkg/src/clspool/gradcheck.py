"""Central finite-difference verification of every parameterized operation.

For each scenario a small random model is built, the analytic gradient of
its scalar loss is computed by backward(), and sampled parameter
coordinates are re-checked against (f(x+h) - f(x-h)) / 2h at 64-bit.
The relative error measure is |a - fd| / max(1, |a|, |fd|).
"""

from __future__ import annotations

import numpy as np

from . import rng as rng_mod
from . import tensor as T
from .encoder import EncoderConfig
from .model import PooledClassifier
from .train import regularized_loss

FD_STEP = 1e-5
REL_TOL = 1e-4


def finite_diff(loss_fn, param, index, h=FD_STEP):
    """Central difference of loss_fn w.r.t. one coordinate of a parameter."""
    flat = param.data.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    up = loss_fn().item()
    flat[index] = orig - h
    down = loss_fn().item()
    flat[index] = orig
    return (up - down) / (2 * h)


def rel_error(a, b):
    return abs(a - b) / max(1.0, abs(a), abs(b))


def check_gradients(loss_fn, params, rng, coords_per_param=2, h=FD_STEP):
    """Max relative error between analytic and finite-difference gradients.

    ``loss_fn`` must rebuild the graph from the parameters' current data on
    every call (one tape per forward pass).
    """
    loss = loss_fn()
    loss.backward()
    grads = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for name, p in params.items()}
    worst = 0.0
    for name, p in params.items():
        size = p.data.size
        k = min(coords_per_param, size)
        for index in rng.choice(size, size=k, replace=False):
            fd = finite_diff(loss_fn, p, int(index), h=h)
            analytic = grads[name].reshape(-1)[int(index)]
            worst = max(worst, rel_error(analytic, fd))
        p.grad = None
    return worst


# ---------------------------------------------------------------------------
# scenarios


def _composite_graph_scenario(seed):
    """Random 5-parameter composite graph exercising the core tensor ops."""
    rng = rng_mod.rng_for(seed, 90)
    params = {
        "W1": T.Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        "b1": T.Tensor(rng.normal(size=4), requires_grad=True),
        "W2": T.Tensor(rng.normal(size=(4, 2)), requires_grad=True),
        "g": T.Tensor(rng.normal(size=4), requires_grad=True),
        "v": T.Tensor(rng.normal(size=4), requires_grad=True),
    }
    x = rng.normal(size=(5, 3))
    labels = rng.integers(2, size=5)

    def loss_fn():
        h = T.add(T.matmul(T.Tensor(x), params["W1"]), params["b1"])
        h = T.layer_norm(T.gelu(h), params["g"], params["v"])
        probs = T.softmax(T.matmul(T.tanh(h), params["W2"]), axis=1)
        return T.cross_entropy(probs, labels)

    return loss_fn, params


def _model_scenario(seed, pooling):
    """Full desk model, tiny config: encoder blocks + head + classifier + L2."""
    config = EncoderConfig(L=2, H=8, A=2, F=12, V=12, S_max=8, p_drop=0.0)
    model = PooledClassifier(config, pooling, 3, rng_mod.rng_for(seed, 91))
    rng = rng_mod.rng_for(seed, 92)
    B, S = 2, 6
    tok = rng.integers(4, 12, size=(B, S))
    tok[:, 0] = 2
    seg = np.zeros((B, S), dtype=int)
    seg[:, S // 2:] = 1
    mask = np.ones((B, S), dtype=int)
    mask[0, -1] = 0
    labels = rng.integers(3, size=B)
    params = model.parameters()
    decay = model.decay_names()

    def loss_fn():
        probs = model.forward_batch(tok, seg, mask)
        return regularized_loss(probs, labels, params, decay, lam=1e-5)

    return loss_fn, params


SCENARIOS = {
    "composite_graph": _composite_graph_scenario,
    "encoder_last_classifier": lambda seed: _model_scenario(seed, "last"),
    "encoder_lstm_pool": lambda seed: _model_scenario(seed, "lstm"),
    "encoder_attention_pool": lambda seed: _model_scenario(seed, "attention"),
}


def run_gradcheck(seeds=20, coords_per_param=2, tol=REL_TOL, report=None):
    """Run every scenario over the given number of seeds.

    Returns (all_passed, results) where results maps scenario name to the
    worst relative error observed.
    """
    results = {}
    for name, build in SCENARIOS.items():
        worst = 0.0
        for seed in range(seeds):
            loss_fn, params = build(seed)
            coord_rng = rng_mod.rng_for(seed, 93)
            worst = max(worst, check_gradients(loss_fn, params, coord_rng,
                                               coords_per_param=coords_per_param))
        results[name] = worst
        if report is not None:
            status = "ok" if worst < tol else "FAIL"
            report(f"{name}: max rel err {worst:.3e} [{status}]")
    return all(v < tol for v in results.values()), results
