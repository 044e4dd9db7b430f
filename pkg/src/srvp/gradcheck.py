"""Central finite-difference verification of every differentiable op.

``gradcheck`` compares reverse-mode gradients against central differences
coordinate by coordinate and reports the worst relative error. The registry
below holds one randomized case per registered op (shapes capped at
(3,4,5,5)); ``run_suite`` executes them all plus the end-to-end model loss.
"""

import zlib

import numpy as np

from .tensor import Tensor, concat, gate_blend, l2_normalize, matmul, no_grad, softmax
from . import layers


def gradcheck(fn, inputs, h=1e-5, tamper=0.0):
    """Max relative error between autodiff and central finite differences.

    ``fn(*inputs)`` must build a scalar Tensor from the given leaf tensors.
    Error per coordinate is |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    ``tamper`` adds a constant to the analytic gradients -- the negative
    control hook used to prove the harness detects a wrong backward rule.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    out.backward(free_graph=True, check_grads=True)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    if tamper:
        analytic = [g + tamper for g in analytic]

    worst = 0.0
    with no_grad():
        for t, g_ad in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = fn(*inputs).item()
                flat[i] = orig - h
                f_minus = fn(*inputs).item()
                flat[i] = orig
                g_fd = (f_plus - f_minus) / (2.0 * h)
                g_a = g_ad.reshape(-1)[i]
                err = abs(g_a - g_fd) / max(1e-8, abs(g_a) + abs(g_fd))
                if err > worst:
                    worst = err
    return worst


def _weighted(out, rng):
    """Project to a scalar through fixed random weights so the check is
    sensitive to every output coordinate."""
    w = Tensor(rng.standard_normal(out.shape))
    return (out * w).sum()


def _case_unary(name, method, sampler):
    def build(rng):
        x = Tensor(sampler(rng, (3, 4, 5)))
        with no_grad():
            out_shape = method(x).shape
        w = Tensor(rng.standard_normal(out_shape))
        return lambda t: (method(t) * w).sum(), [x]
    return name, build


def _normal(rng, shape):
    return rng.standard_normal(shape)


def _away_from_zero(rng, shape):
    # keeps relu / clip inputs clear of their kinks
    return (rng.uniform(0.2, 1.0, shape)) * np.where(rng.random(shape) < 0.5, -1.0, 1.0)


def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, shape)


def _binary_case(name, op):
    def build(rng):
        a = Tensor(_normal(rng, (3, 4, 5)))
        b = Tensor(_normal(rng, (3, 4, 5)))
        w = rng.standard_normal((3, 4, 5))
        return lambda x, y: (op(x, y) * Tensor(w)).sum(), [a, b]
    return name, build


def _registry():
    cases = [
        _binary_case("add", lambda a, b: a + b),
        _binary_case("sub", lambda a, b: a - b),
        _binary_case("hadamard", lambda a, b: a * b),
        _binary_case("div", lambda a, b: a / (b * b + Tensor(np.full((3, 4, 5), 0.5)))),
        _case_unary("scale", lambda t: t * 1.7, _normal),
        _case_unary("sigmoid", lambda t: t.sigmoid(), _normal),
        _case_unary("tanh", lambda t: t.tanh(), _normal),
        _case_unary("relu", lambda t: t.relu(), _away_from_zero),
        _case_unary("log", lambda t: t.log(), _positive),
        _case_unary("sqrt", lambda t: t.sqrt(), _positive),
        _case_unary("clip", lambda t: t.clip(-0.9, 0.9), _away_from_zero),
        _case_unary("reshape", lambda t: t.reshape((4, 15)), _normal),
        _case_unary("transpose", lambda t: t.transpose((2, 0, 1)), _normal),
        _case_unary("slice", lambda t: t[1:, :, 2:4], _normal),
        _case_unary("sum", lambda t: t.sum(axis=1).reshape((15,)), _normal),
        _case_unary("mean", lambda t: t.mean(axis=(0, 2)).reshape((4,)), _normal),
        _case_unary("softmax", lambda t: softmax(t, axis=1), _normal),
        _case_unary("l2_normalize", lambda t: l2_normalize(t, axis=-1), _normal),
    ]

    def build_matmul(rng):
        a = Tensor(_normal(rng, (3, 4)))
        b = Tensor(_normal(rng, (4, 5)))
        w = rng.standard_normal((3, 5))
        return lambda x, y: (matmul(x, y) * Tensor(w)).sum(), [a, b]
    cases.append(("matmul", build_matmul))

    def build_concat(rng):
        a = Tensor(_normal(rng, (2, 4, 5)))
        b = Tensor(_normal(rng, (3, 4, 5)))
        w = rng.standard_normal((5, 4, 5))
        return lambda x, y: (concat([x, y], axis=0) * Tensor(w)).sum(), [a, b]
    cases.append(("concat", build_concat))

    def build_gate_blend(rng):
        z = Tensor(_normal(rng, (3, 4, 5)))
        g = Tensor(_normal(rng, (3, 4, 5)))
        h = Tensor(_normal(rng, (3, 4, 5)))
        w = rng.standard_normal((3, 4, 5))
        return lambda a, b, c: (gate_blend(a, b, c) * Tensor(w)).sum(), [z, g, h]
    cases.append(("gate_blend", build_gate_blend))

    def build_broadcast(rng):
        a = Tensor(_normal(rng, (3, 1, 5)))
        w = rng.standard_normal((3, 4, 5))
        return lambda x: (x.broadcast_to((3, 4, 5)) * Tensor(w)).sum(), [a]
    cases.append(("broadcast_to", build_broadcast))

    def build_conv2d(rng):
        x = Tensor(_normal(rng, (2, 3, 5, 5)))
        wt = Tensor(_normal(rng, (4, 3, 3, 3)) * 0.5)
        bs = Tensor(_normal(rng, (4,)) * 0.5)
        w = rng.standard_normal((2, 4, 5, 5))
        return lambda a, b, c: (layers.conv2d(a, b, c) * Tensor(w)).sum(), [x, wt, bs]
    cases.append(("conv2d", build_conv2d))

    def build_channel_linear(rng):
        lin = layers.ChannelLinear(4, 3, rng, bias=True)
        x = Tensor(_normal(rng, (4, 5)))
        w = rng.standard_normal((3, 5))

        def fn(a, wt, bs):
            return (lin(a) * Tensor(w)).sum()

        return fn, [x, lin.weight, lin.bias]
    cases.append(("channel_linear", build_channel_linear))

    def build_batchnorm(rng):
        bn = layers.BatchNorm2d(3)
        x = Tensor(_normal(rng, (2, 3, 4, 4)))
        w = rng.standard_normal((2, 3, 4, 4))
        return lambda a, g, b: (bn(a, training=True) * Tensor(w)).sum(), [x, bn.gamma, bn.beta]
    cases.append(("batchnorm2d", build_batchnorm))

    def build_layernorm(rng):
        ln = layers.LayerNorm((4, 5))
        x = Tensor(_normal(rng, (3, 4, 5)) * 3.0)
        w = rng.standard_normal((3, 4, 5))
        return lambda a, g, b: (ln(a) * Tensor(w)).sum(), [x, ln.gamma, ln.beta]
    cases.append(("layernorm", build_layernorm))

    def build_sdp(rng):
        from .attention import scaled_dot_attention

        q = Tensor(_normal(rng, (3, 4, 5)))
        k = Tensor(_normal(rng, (3, 4, 5)))
        v = Tensor(_normal(rng, (3, 4, 5)))
        w = rng.standard_normal((3, 4, 5))
        return (
            lambda a, b, c: (scaled_dot_attention(a, b, c, 2.0) * Tensor(w)).sum(),
            [q, k, v],
        )
    cases.append(("scaled_dot_attention", build_sdp))

    def build_convgru(rng):
        from .recurrent import ConvGruCell

        cell = ConvGruCell(3, 4, 3, rng)
        x = Tensor(_normal(rng, (2, 3, 5, 5)))
        h = Tensor(_normal(rng, (2, 4, 5, 5)))
        w = rng.standard_normal((2, 4, 5, 5))
        inputs = [x, h] + [p for _, p in cell.parameters()]

        def fn(*_inputs):
            return (cell.step(x, h) * Tensor(w)).sum()

        return fn, inputs
    cases.append(("convgru_cell", build_convgru))

    return cases


def registered_ops():
    return [name for name, _ in _registry()]


def end_to_end_case(seed=0):
    """Training loss of a tiny full model as a function of every parameter."""
    from .model import ModelConfig, SrvpModel
    from .training import bce_loss

    config = ModelConfig(
        num_layers=2, hidden_channels=4, in_channels=1, height=8, width=8,
        input_frames=3, pred_frames=2,
    )
    model = SrvpModel(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    frames = Tensor(rng.uniform(0.05, 0.95, (3, 1, 8, 8)))
    targets = Tensor(rng.uniform(0.05, 0.95, (2, 1, 8, 8)))
    params = [p for _, p in model.named_parameters()]

    def loss_fn(*_params):
        preds = model.rollout(frames, horizon=2, training=True)
        return bce_loss(preds, targets)

    return loss_fn, params


def run_suite(h=1e-5, tol=1e-4, seed=0, include_end_to_end=True, corrupt=None):
    """Run every registered op case (and optionally the end-to-end loss).

    Returns a list of (name, max_relative_error, passed). ``corrupt`` names
    one case whose analytic gradient is deliberately perturbed. The
    end-to-end case uses a larger step (1e-4): with hundreds of composed ops
    the forward evaluation carries ~1e-13 of rounding noise, and the optimal
    central-difference step grows with it.
    """
    results = []
    for name, build in _registry():
        fn, inputs = build(np.random.default_rng(seed + zlib.crc32(name.encode()) % 1000))
        err = gradcheck(fn, inputs, h=h, tamper=0.01 if name == corrupt else 0.0)
        results.append((name, err, err < tol))
    if include_end_to_end:
        fn, params = end_to_end_case(seed)
        err = gradcheck(fn, params, h=1e-4, tamper=0.01 if corrupt == "end_to_end" else 0.0)
        results.append(("end_to_end", err, err < tol))
    return results
