"""Independent oracles shared by the unit and acceptance tests."""

import math

import numpy as np

from magcal.engine.dag import Instance, TaskGraph
from magcal.engine.scheduler import US, TaskRun
from magcal.neuralnet import ModelParams, gradient


def naive_forward(params: ModelParams, x) -> list[float]:
    """One neuron at a time, plain Python floats."""
    a = [float(v) for v in x]
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = []
        for j in range(w.shape[1]):
            z = float(b[j]) + sum(a[i] * float(w[i, j]) for i in range(len(a)))
            out.append(z if layer == last else (z if z > 0 else math.exp(z) - 1.0))
        a = out
    return [float(params.target_mean[k]) + float(params.target_scale[k]) * a[k] for k in range(3)]


def random_params(dims, rng, names=None) -> ModelParams:
    weights = [rng.normal(size=(i, o)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [rng.normal(size=o) * 0.5 for o in dims[1:]]
    names = names or tuple(f"f_{i:03d}" for i in range(dims[0]))
    return ModelParams(weights, biases, names, 0, {}, rng.normal(size=3), rng.uniform(0.5, 2.0, size=3))


def _min_abs_preactivation(params, x):
    a, low = x, np.inf
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = a @ w + b
        low = min(low, float(np.abs(z).min()))
        a = np.where(z > 0, z, np.expm1(np.minimum(z, 0)))
    return low


def gradient_check(n_trials=100, dims=(4, 2, 2, 3), h=1e-5, seed=0, batch=5, kink=1e-3):
    """Worst relative error between analytic and central-difference gradients over random trials."""
    rng = np.random.default_rng(seed)
    worst, done = 0.0, 0
    while done < n_trials:
        params = random_params(list(dims), rng)
        x = rng.normal(size=(batch, dims[0]))
        y = rng.normal(size=(batch, 3)) * 3
        w = rng.uniform(0.05, 1.0, size=batch)
        if _min_abs_preactivation(params, x) < kink:
            continue
        _, grads = gradient(params, x, y, w)
        numeric = []
        for arr in params.arrays():
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                lp, _ = gradient(params, x, y, w)
                arr[idx] = old - h
                lm, _ = gradient(params, x, y, w)
                arr[idx] = old
                g[idx] = (lp - lm) / (2 * h)
            numeric.append(g)
        a = np.concatenate([g.ravel() for g in grads])
        n = np.concatenate([g.ravel() for g in numeric])
        rel = np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-300)
        worst = max(worst, rel)
        done += 1
    return worst


# -- hand-built schedules ---------------------------------------------------------

def flat_graph(n, cpu=1, mem=1.0, task="t"):
    """``n`` independent instances of one task."""
    g = TaskGraph()
    for i in range(n):
        g.add(Instance(task, f"k{i}", cpu, mem, (), 0))
    return g


def make_run(task, key, start_s, end_s, cpu=1, mem=1.0, node=0):
    return TaskRun(task, key, node, int(round(start_s * US)), int(round(end_s * US)), "succeeded", cpu, mem)


def check_capacity(runs, cluster) -> None:
    """Per node, running cpu and memory never exceed the node's capacity at any event time."""
    for node in range(cluster.n_nodes):
        mine = [r for r in runs if r.node == node]
        for t in sorted({r.start_us for r in mine}):
            active = [r for r in mine if r.start_us <= t < r.end_us]
            assert sum(r.cpu for r in active) <= cluster.threads_per_node
            assert sum(r.mem_gb for r in active) <= cluster.mem_per_node_gb + 1e-9


def check_dependencies(runs, graph) -> None:
    by_id = {(r.task, r.key): r for r in runs}
    for u, v in graph.edges():
        if v in by_id:
            assert u in by_id and by_id[u].end_us <= by_id[v].start_us, (u, v)
