"""Small deterministic training problems for exercising the optimizer.

Each problem owns a seeded synthetic dataset split into equal contiguous
shards, one per worker. A worker's gradient is the gradient of its shard's
mean loss, so the across-worker mean equals the full-batch gradient and a
W-worker run is comparable to a single-worker run on the union batch.
"""

import numpy as np

from .catalogs import ParamSpec
from .linalg import ContractViolation
from .seeding import derive_rng


class Problem:
    """Shared plumbing: dataset sharding and parameter initialization."""

    name = None

    def __init__(self, inputs, targets, specs, seed):
        self.inputs = inputs
        self.targets = targets
        self.specs = list(specs)
        self.seed = seed
        self.n_samples = inputs.shape[0]

    def init_params(self):
        rng = derive_rng(self.seed, "param_init")
        params = []
        for spec in self.specs:
            fan_in = spec.shape[-1] if not spec.is_bias else 1
            params.append(rng.standard_normal(spec.shape) / np.sqrt(fan_in))
        return params

    def shard(self, worker, world_size):
        if self.n_samples % world_size != 0:
            raise ContractViolation(
                f"{self.n_samples} samples do not shard over {world_size} workers")
        per = self.n_samples // world_size
        return slice(worker * per, (worker + 1) * per)

    def loss(self, params, idx=slice(None)):
        raise NotImplementedError

    def gradients(self, params, idx=slice(None)):
        raise NotImplementedError

    def worker_gradients(self, params, worker, world_size):
        return self.gradients(params, self.shard(worker, world_size))


class LeastSquaresProblem(Problem):
    """Linear regression: predictions W @ a + c, mean squared residual / 2.

    With noise 0 the targets are realizable and the optimal loss is exactly
    0; otherwise `optimal_loss` comes from the normal equations.

    `target_spectrum` switches to a conditioned instance: the true weight is
    built from seeded orthonormal bases with exactly those singular values,
    inputs are mean-centered (so the bias residual cannot leak a stray
    direction into the weight gradient), and parameters start at zero. The
    weight error then lives in a fixed low-dimensional column space with a
    real spectral gap, which keeps warm-started subspace iteration
    contractive; without the gap, round-off in different reduction orders
    compounds exponentially over a few hundred steps.
    """

    name = "least-squares"

    def __init__(self, n, m, noise, seed, n_samples=256, target_spectrum=None):
        rng = derive_rng(seed, "data")
        inputs = rng.standard_normal((n_samples, m))
        if target_spectrum is not None:
            sigmas = tuple(float(s) for s in target_spectrum)
            if not 0 < len(sigmas) <= min(n, m):
                raise ContractViolation(
                    f"target_spectrum needs 1..min(n,m) values, got {len(sigmas)}")
            inputs = inputs - inputs.mean(axis=0)
            u = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :len(sigmas)]
            v = np.linalg.qr(rng.standard_normal((m, m)))[0][:, :len(sigmas)]
            w_true = (u * sigmas) @ v.T
        else:
            w_true = rng.standard_normal((n, m)) / np.sqrt(m)
        c_true = rng.standard_normal(n) * 0.5
        targets = inputs @ w_true.T + c_true
        if noise > 0:
            targets = targets + noise * rng.standard_normal(targets.shape)
        specs = [ParamSpec("weight", (n, m)), ParamSpec("bias", (n,))]
        super().__init__(inputs, targets, specs, seed)
        self.noise = noise
        self.target_spectrum = target_spectrum
        self.optimal_loss = self._solve_optimum() if noise > 0 else 0.0

    def init_params(self):
        if self.target_spectrum is None:
            return super().init_params()
        return [np.zeros(spec.shape) for spec in self.specs]

    def _solve_optimum(self):
        design = np.hstack([self.inputs, np.ones((self.n_samples, 1))])
        theta, *_ = np.linalg.lstsq(design, self.targets, rcond=None)
        resid = design @ theta - self.targets
        return float(np.sum(resid * resid) / (2 * self.n_samples))

    def loss(self, params, idx=slice(None)):
        w, c = params
        resid = self.inputs[idx] @ w.T + c - self.targets[idx]
        return float(np.sum(resid * resid) / (2 * resid.shape[0]))

    def gradients(self, params, idx=slice(None)):
        w, c = params
        a = self.inputs[idx]
        resid = a @ w.T + c - self.targets[idx]
        scale = 1.0 / resid.shape[0]
        return [scale * (resid.T @ a), scale * np.sum(resid, axis=0)]


class TinyMlpProblem(Problem):
    """One-hidden-layer tanh network regressing a seeded teacher network.

    Gradients are hand-written backprop; tests hold them against central
    differences.
    """

    name = "mlp"

    def __init__(self, dims=(6, 16, 4), seed=0, n_samples=256):
        if len(dims) != 3:
            raise ContractViolation(f"dims must be (in, hidden, out), got {dims}")
        d_in, hidden, d_out = dims
        rng = derive_rng(seed, "data")
        inputs = rng.standard_normal((n_samples, d_in))
        teacher = derive_rng(seed, "teacher")
        t1 = teacher.standard_normal((hidden, d_in)) / np.sqrt(d_in)
        u1 = teacher.standard_normal(hidden) * 0.1
        t2 = teacher.standard_normal((d_out, hidden)) / np.sqrt(hidden)
        u2 = teacher.standard_normal(d_out) * 0.1
        targets = np.tanh(inputs @ t1.T + u1) @ t2.T + u2
        specs = [
            ParamSpec("layer1.weight", (hidden, d_in)),
            ParamSpec("layer1.bias", (hidden,)),
            ParamSpec("layer2.weight", (d_out, hidden)),
            ParamSpec("layer2.bias", (d_out,)),
        ]
        super().__init__(inputs, targets, specs, seed)
        self.dims = tuple(dims)
        self.optimal_loss = None

    def _forward(self, params, idx):
        w1, b1, w2, b2 = params
        x = self.inputs[idx]
        h = np.tanh(x @ w1.T + b1)
        return x, h, h @ w2.T + b2

    def loss(self, params, idx=slice(None)):
        _, _, pred = self._forward(params, idx)
        resid = pred - self.targets[idx]
        return float(np.sum(resid * resid) / (2 * resid.shape[0]))

    def gradients(self, params, idx=slice(None)):
        w1, b1, w2, b2 = params
        x, h, pred = self._forward(params, idx)
        d_pred = (pred - self.targets[idx]) / x.shape[0]
        g_w2 = d_pred.T @ h
        g_b2 = np.sum(d_pred, axis=0)
        d_h = d_pred @ w2
        d_z = d_h * (1.0 - h * h)
        g_w1 = d_z.T @ x
        g_b1 = np.sum(d_z, axis=0)
        return [g_w1, g_b1, g_w2, g_b2]


def make_problem(task, seed, **overrides):
    """Problem factory keyed by the CLI task names."""
    if task == "least-squares":
        kw = dict(n=24, m=32, noise=0.0, seed=seed, n_samples=256)
        kw.update(overrides)
        return LeastSquaresProblem(**kw)
    if task == "mlp":
        kw = dict(dims=(6, 16, 4), seed=seed, n_samples=256)
        kw.update(overrides)
        return TinyMlpProblem(**kw)
    raise ContractViolation(f"unknown task {task!r}")
