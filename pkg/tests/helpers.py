"""Shared oracles for the test suite."""

from __future__ import annotations

import numpy as np

from pearlplus.diffmath import Tape, backward

CRITERION_LINES: list[str] = []


def report_criterion(n: int, ok: bool, detail: str) -> None:
    """Print and record one pass/fail line for acceptance criterion ``n``."""
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    CRITERION_LINES.append(line)
    print(line)


def numeric_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. each array, perturbed in place."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def rel_error(a, b, floor=1e-6):
    """Worst element-wise ``|a - b| / (|a| + |b|)``; the denominator is held
    at ``floor`` or above so entries below difference resolution do not dominate."""
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


def check_grad(loss_fn, params, h=1e-5, tol=1e-4):
    """Compare tape gradients of ``loss_fn()`` with central differences.

    ``params`` are parameter tensors; their ``.data`` arrays are perturbed.
    Returns the worst relative error.
    """
    with Tape():
        loss = loss_fn()
        grads = backward(loss)
    analytic = [grads.get(p, np.zeros(p.shape)) for p in params]

    def value():
        return loss_fn().item()

    numeric = numeric_grad(value, [p.data for p in params], h)
    err = max(rel_error(a, n) for a, n in zip(analytic, numeric))
    assert err < tol, f"gradient mismatch: relative error {err:.3g}"
    return err


def agent_problem(seed, discrete=False, n_tasks=2, per_task=3, ds=3, da=2, dz=2, hidden=(6,), prior_critic=True, twin=True):
    """Small random networks, a stacked batch and context features."""
    from pearlplus.agent import AgentConfig, AgentNets, Batch
    from pearlplus.inference import context_features

    rng = np.random.default_rng(seed)
    cfg = AgentConfig(ds, da, discrete, dz, hidden, twin=twin, prior_critic=prior_critic, discount=0.9)
    nets = AgentNets.build(cfg, rng)
    # larger output layers give gradients well above finite-difference noise
    for m in nets.named_networks().values():
        m.weights[-1].data *= 100.0
        m.biases[-1].data *= 100.0
    # perturb the targets so they differ from the live value heads
    for m in (nets.v_target, nets.v_prior_target):
        if m is not None:
            for p in m.parameters():
                p.data += 0.1 * rng.standard_normal(p.shape)
    n = n_tasks * per_task
    obs = rng.normal(size=(n, ds))
    actions = rng.integers(0, da, n) if discrete else rng.uniform(-0.9, 0.9, (n, da))
    batch = Batch(obs, actions, rng.normal(size=n), rng.normal(size=(n, ds)), (rng.random(n) < 0.3).astype(float), n_tasks)
    feats = context_features(obs, actions, batch.rewards, batch.next_obs, da if discrete else None)
    return nets, batch, feats, rng


def posterior_rows(nets, feats, batch, noise_z, track=True):
    """Per-row z sampled from each task's posterior, tracked through the encoder."""
    from pearlplus.diffmath import ops
    from pearlplus.distributions import rsample
    from pearlplus.inference import encode_grouped

    post = encode_grouped(nets.encoder, feats, batch.n_tasks, track=track)
    rows = np.repeat(np.arange(batch.n_tasks), batch.per_task)
    return post, ops.take_rows(rsample(post, noise_z), rows)
