"""Executable checks of the memory and trajectory-model convergence properties.

Each oracle builds a synthetic setting where the analytic claim applies,
drives the real library code through it and reports measured quantities.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .memcore import EpisodicMemory, MemoryEmpty, ReadRule
from .trajmodel import linear_tr_bound_check

# write convergence


@dataclass
class WriteConvergenceResult:
    errors: np.ndarray  # mean over seeds of mean_i |M_i - target_i| after each write
    per_seed: np.ndarray  # (seeds, writes) errors before averaging
    final_error: float  # mean over seeds of the error after the last write
    tail_error: float  # mean of ``errors`` over the last 10% of writes
    stored_tail: np.ndarray  # (seeds, slots) time-average of stored values over the last half
    targets: np.ndarray  # what each slot is compared against


def _slot_keys(n_slots: int, radius: float) -> tuple[np.ndarray, np.ndarray]:
    center = np.zeros(n_slots)
    keys = center + radius * np.eye(n_slots)
    return center, keys


def write_convergence_oracle(noise: str = "gaussian", schedule: str = "decaying", k_w: int = 1,
                             n_writes: int = 10_000, seeds=range(20), sigma: float = 0.2, alpha: float = 0.5,
                             values=None, probs=None, equidistant: bool = True, jitter: float = 0.05,
                             radius: float = 0.1, init_value: float = 0.0, flip_p: float = 0.2,
                             compare: str = "own") -> WriteConvergenceResult:
    """Repeatedly write noisy returns into a fixed neighbourhood of slots.

    Slots sit at equal distance ``radius`` from a centre. Each write picks a
    source slot j with probability ``probs[j]`` and writes ``values[j]`` plus
    noise. With ``equidistant`` the write key is the centre, so every neighbour
    weight is exactly 1/k_w; otherwise it is the centre plus Gaussian jitter.
    ``schedule`` is ``"decaying"`` (rate 1/(n+1)) or ``"constant"`` (``alpha``).
    ``compare="own"`` scores slot i against its own true value;
    ``compare="knn"`` against the weighted mixture ``sum_j p_j V_j``.
    """
    values = np.array([1.0] if values is None else values, dtype=np.float64)
    n_slots = values.size
    probs = np.full(n_slots, 1.0 / n_slots) if probs is None else np.asarray(probs, dtype=np.float64)
    if not np.isclose(probs.sum(), 1.0):
        raise ValueError("visit probabilities must sum to 1")
    if schedule not in ("decaying", "constant"):
        raise ValueError(f"unknown schedule {schedule!r}")
    if noise not in ("none", "gaussian", "bernoulli"):
        raise ValueError(f"unknown noise kind {noise!r}")
    k_w = min(k_w, n_slots)
    mean_values = values * (1.0 - 2.0 * flip_p) if noise == "bernoulli" else values
    targets = mean_values.copy() if compare == "own" else np.full(n_slots, probs @ mean_values)
    center, keys = _slot_keys(n_slots, radius)
    seeds = list(seeds)
    errs = np.zeros((len(seeds), n_writes))
    tails = np.zeros((len(seeds), n_slots))
    half = n_writes // 2
    for si, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        mem = EpisodicMemory(n_slots, n_slots, k=k_w)
        for kv in keys:
            mem._insert(kv, init_value)
        acc = np.zeros(n_slots)
        src = rng.choice(n_slots, size=n_writes, p=probs)
        for n in range(n_writes):
            j = src[n]
            r = values[j]
            if noise == "gaussian":
                r = r + sigma * rng.standard_normal()
            elif noise == "bernoulli" and rng.random() < flip_p:
                r = -r
            key = center if equidistant else center + jitter * rng.standard_normal(n_slots)
            rate = 1.0 / (n + 1) if schedule == "decaying" else alpha
            mem.write(key, r, rate, k_w, append=False)
            stored = mem.values[:n_slots]
            errs[si, n] = np.abs(stored - targets).mean()
            if n >= half:
                acc += stored
        tails[si] = acc / (n_writes - half)
    curve = errs.mean(axis=0)
    tail = max(1, n_writes // 10)
    return WriteConvergenceResult(curve, errs, float(errs[:, -1].mean()), float(curve[-tail:].mean()), tails, targets)


def knn_bias(values, probs) -> np.ndarray:
    """Predicted constant-rate bias ``sum_j p_j V_j - V_i`` for each slot i."""
    values = np.asarray(values, dtype=np.float64)
    return np.asarray(probs, dtype=np.float64) @ values - values


def smoothed(x, window: int = 100) -> np.ndarray:
    """Moving average along the last axis (valid part only)."""
    x = np.asarray(x, dtype=np.float64)
    window = min(window, x.shape[-1])
    c = np.cumsum(np.concatenate([np.zeros(x.shape[:-1] + (1,)), x], axis=-1), axis=-1)
    return (c[..., window:] - c[..., :-window]) / window


def monotone_excess(per_seed_errors, window: int = 100) -> float:
    """Largest rise of the smoothed mean curve above its running minimum, in standard errors.

    The seed-averaged curve is smoothed with a moving window; at each point the
    rise over the best earlier value is divided by the across-seed standard
    error there. Values <= 2 mean non-increasing up to Monte-Carlo noise.
    """
    sm = smoothed(per_seed_errors, window)  # (seeds, points)
    mean = sm.mean(axis=0)
    se = sm.std(axis=0, ddof=1) / np.sqrt(sm.shape[0])
    rise = mean - np.minimum.accumulate(mean)
    return float(np.max(rise / np.maximum(se, 1e-300)))


# refine contraction


class FiniteMDP:
    """Tabular MDP with transition tensor ``P[a, x, y]`` and rewards ``R[x, a]``."""

    def __init__(self, P, R, gamma: float):
        self.P = np.asarray(P, dtype=np.float64)
        self.R = np.asarray(R, dtype=np.float64)
        if self.P.ndim != 3 or self.P.shape[1] != self.P.shape[2]:
            raise ValueError("P must have shape (A, S, S)")
        if self.R.shape != (self.P.shape[1], self.P.shape[0]):
            raise ValueError("R must have shape (S, A)")
        if np.any(self.P < 0) or not np.allclose(self.P.sum(axis=2), 1.0, atol=1e-12):
            raise ValueError("transition rows must be probability distributions")
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        self.gamma = float(gamma)

    @property
    def n_states(self) -> int:
        return self.P.shape[1]

    @property
    def n_actions(self) -> int:
        return self.P.shape[0]

    @classmethod
    def random(cls, rng: np.random.Generator, n_states: int = 10, n_actions: int = 3, gamma: float = 0.9,
               sparsity: float = 0.5) -> "FiniteMDP":
        P = rng.random((n_actions, n_states, n_states))
        P[rng.random(P.shape) < sparsity] = 0.0
        P[:, np.arange(n_states), rng.integers(n_states, size=n_states)] += 1e-3  # no empty rows
        P /= P.sum(axis=2, keepdims=True)
        R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
        return cls(P, R, gamma)


def value_iteration(mdp: FiniteMDP, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = mdp.R + mdp.gamma * np.einsum("axy,y->xa", mdp.P, v)
        nv = q.max(axis=1)
        if np.max(np.abs(nv - v)) < tol:
            return nv
        v = nv
    return v


def contraction_modulus(gamma: float, k: int) -> float:
    return (gamma + k - 1) / k


@dataclass
class ContractionReport:
    distances: list[float]  # sup-norm distance between successive read functions
    ratios: list[float]  # distances[t+1] / distances[t]
    gamma_k: float
    burn_in: int
    residual: float  # ||H read - read||_inf at the end
    fixed_point: np.ndarray
    sweeps: int

    @property
    def max_ratio_after_burn_in(self) -> float:
        r = self.ratios[self.burn_in:]
        return max(r) if r else 0.0


class EquidistantMemory:
    """Memory in which each MDP state owns ``k`` slots at equal distance from its query key."""

    def __init__(self, n_states: int, k: int, radius: float = 0.5, spacing: float = 100.0,
                 init=None):
        self.k = k
        dim = n_states + k
        self.queries = np.zeros((n_states, dim))
        self.queries[:, :n_states] = spacing * np.eye(n_states)
        self.memory = EpisodicMemory(n_states * k, dim, k=k)
        init = np.zeros(n_states * k) if init is None else np.asarray(init, dtype=np.float64)
        for x in range(n_states):
            for j in range(k):
                key = self.queries[x].copy()
                key[n_states + j] = radius
                self.memory._insert(key, init[x * k + j])

    def read_all(self) -> np.ndarray:
        return self.memory.read_batch(self.queries, ReadRule.average(), k=self.k)


def refine_sweep(mdp: FiniteMDP, em: EquidistantMemory, alpha_w: float = 1.0) -> np.ndarray:
    """One synchronous refine application per state; returns the read function after it.

    Targets ``max_a R(x,a) + gamma * sum_y P_a(x,y) read(y)`` are computed from the
    pre-sweep memory, then written to each state's query key.
    """
    reads = em.read_all()
    targets = (mdp.R + mdp.gamma * np.einsum("axy,y->xa", mdp.P, reads)).max(axis=1)
    for x in range(mdp.n_states):
        em.memory.write(em.queries[x], targets[x], alpha_w, em.k, append=False)
    return em.read_all()


def refine_contraction_oracle(mdp: FiniteMDP, k: int, sweeps: int = 5000, burn_in: int = 5,
                              rng: np.random.Generator | None = None, tol: float = 1e-12) -> ContractionReport:
    """Iterate synchronous sweeps until successive reads differ by < ``tol``."""
    rng = np.random.default_rng(0) if rng is None else rng
    init = rng.uniform(-5.0, 5.0, size=mdp.n_states * k)
    em = EquidistantMemory(mdp.n_states, k, init=init)
    prev = em.read_all()
    distances: list[float] = []
    n = 0
    for n in range(1, sweeps + 1):
        cur = refine_sweep(mdp, em)
        distances.append(float(np.max(np.abs(cur - prev))))
        prev = cur
        if distances[-1] < tol:
            break
    # ratios only where the distances are well above round-off
    ratios = [distances[i + 1] / distances[i] for i in range(len(distances) - 1) if distances[i] > 1e-9]
    reads = em.read_all()
    bellman = (mdp.R + mdp.gamma * np.einsum("axy,y->xa", mdp.P, reads)).max(axis=1)
    # H applied to the read function, per the k-slot averaging form
    h_read = bellman / k + reads * (k - 1) / k
    residual = float(np.max(np.abs(h_read - reads)))
    return ContractionReport(distances, ratios, contraction_modulus(mdp.gamma, k), burn_in, residual, reads, n)


# TR-loss bound for linear models


@dataclass
class TRBoundReport:
    trials: int
    passes: int
    min_slack: float
    resampled: int
    slacks: list[float] = field(default_factory=list)


def random_linear_instance(rng: np.random.Generator, h: int = 4, m: int = 6, d_q: int = 3, d_y: int = 3,
                           n_shared: int = 5, n_extra: int = 3, identical: bool = False):
    """Random (W, U, V) plus two trajectories sharing ``n_shared`` (query, target) pairs."""
    fan = lambda n: 1.0 / np.sqrt(n)  # noqa: E731
    W = rng.standard_normal((d_y, m)) * fan(m)
    U = rng.standard_normal((m, h)) * fan(h)
    V = rng.standard_normal((m, d_q)) * fan(d_q)
    tau1 = rng.uniform(-1, 1, h)
    tau2 = tau1.copy() if identical else rng.uniform(-1, 1, h)
    shared_q = rng.standard_normal((n_shared, d_q))
    shared_y = rng.standard_normal((n_shared, d_y))
    q1 = np.vstack([shared_q, rng.standard_normal((n_extra, d_q))])
    y1 = np.vstack([shared_y, rng.standard_normal((n_extra, d_y))])
    q2 = np.vstack([shared_q, rng.standard_normal((n_extra, d_q))])
    y2 = np.vstack([shared_y, rng.standard_normal((n_extra, d_y))])
    return W, U, V, tau1, q1, y1, tau2, q2, y2


def tr_bound_oracle(trials: int = 100, seed: int = 0, degenerate_tol: float = 1e-8, **shape) -> TRBoundReport:
    """Evaluate the linear recall-loss distance bound on random instances.

    Instances where ``W U (tau1 - tau2)`` vanishes relative to ``tau1 - tau2``
    are resampled and counted.
    """
    rng = np.random.default_rng(seed)
    n_shared = shape.get("n_shared", 5)
    passes = resampled = 0
    slacks = []
    while len(slacks) < trials:
        W, U, V, tau1, q1, y1, tau2, q2, y2 = random_linear_instance(rng, **shape)
        d = tau1 - tau2
        if np.linalg.norm(W @ U @ d) < degenerate_tol * np.linalg.norm(d):
            resampled += 1
            continue
        res = linear_tr_bound_check(W, U, V, tau1, q1, y1, tau2, q2, y2, n_shared)
        passes += int(res.holds)
        slacks.append(res.slack)
    return TRBoundReport(trials, passes, float(min(slacks)), resampled, slacks)


# trajectory-space value grid


def trajectory_space_dump(memory: EpisodicMemory, step: float = 0.05, lo: float = -1.0, hi: float = 1.0,
                          path: str | Path | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Average-rule reads over a square grid of 2-d trajectory vectors.

    Returns (axis, grid) with ``grid[i, j]`` the read at ``(axis[i], axis[j])``.
    With ``path`` a CSV is written holding grid points and stored keys.
    """
    if memory.dim != 2:
        raise ValueError(f"trajectory dump needs 2-d keys, memory has {memory.dim}")
    if memory.occupancy == 0:
        raise MemoryEmpty("memory-empty")
    n = int(round((hi - lo) / step)) + 1
    axis = lo + step * np.arange(n)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    grid = memory.read_batch(pts, ReadRule.average()).reshape(n, n)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "x", "y", "value"])
            for (x, y), v in zip(pts, grid.ravel()):
                w.writerow(["grid", repr(float(x)), repr(float(y)), repr(float(v))])
            for slot in memory.insertion_ring:
                kx, ky = memory.keys[slot]
                w.writerow(["key", repr(float(kx)), repr(float(ky)), repr(float(memory.values[slot]))])
    return axis, grid


# verification driver


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def check_write_convergence(seeds: int = 20, n_writes: int = 10_000) -> dict:
    """Three write-operator claims: decaying-rate convergence, constant-rate KNN bias, K_w=3 vs K_w=1."""
    seeds_r = range(seeds)
    dec = write_convergence_oracle("gaussian", "decaying", k_w=1, n_writes=n_writes, seeds=seeds_r)
    excess = monotone_excess(dec.per_seed, 100)
    values, probs = [1.0, 0.5, 0.0], [0.5, 0.3, 0.2]
    bias = write_convergence_oracle("gaussian", "constant", k_w=3, n_writes=n_writes, seeds=seeds_r,
                                    values=values, probs=probs, compare="own")
    predicted = np.asarray(values) + knn_bias(values, probs)
    per_seed = bias.stored_tail  # (seeds, slots)
    mean = per_seed.mean(axis=0)
    se = per_seed.std(axis=0, ddof=1) / np.sqrt(per_seed.shape[0])
    within = np.abs(mean - predicted) <= 2 * se + 1e-12
    common = dict(n_writes=n_writes, seeds=seeds_r, values=[1.0, 1.0, 1.0], equidistant=False)
    k3 = write_convergence_oracle("gaussian", "constant", k_w=3, **common)
    k1 = write_convergence_oracle("gaussian", "constant", k_w=1, **common)
    return {
        "decaying_final_error": dec.final_error,
        "decaying_pass": dec.final_error < 0.02,
        "decaying_curve": dec.errors,
        "monotone_excess_se": excess,
        "monotone_pass": excess <= 2.0,
        "bias_predicted": predicted.tolist(),
        "bias_measured": mean.tolist(),
        "bias_stderr": se.tolist(),
        "bias_pass": bool(np.all(within)),
        "kw3_tail_error": k3.tail_error,
        "kw1_tail_error": k1.tail_error,
        "kw_pass": k3.tail_error <= k1.tail_error,
    }


def check_refine_contraction(n_mdps: int = 20, seed: int = 0, margin: float = 0.05) -> dict:
    rng = np.random.default_rng(seed)
    rows = []
    ok = True
    for i in range(n_mdps):
        n_states = int(rng.integers(2, 21))
        n_actions = int(rng.integers(1, 5))
        gamma = float(rng.uniform(0.7, 0.95))
        k = int(rng.choice([1, 2, 3, 5]))
        mdp = FiniteMDP.random(rng, n_states, n_actions, gamma)
        rep = refine_contraction_oracle(mdp, k, rng=rng)
        vi = value_iteration(mdp)
        vi_err = float(np.max(np.abs(rep.fixed_point - vi)))
        passed = (rep.max_ratio_after_burn_in <= rep.gamma_k + margin and rep.residual < 1e-6 and vi_err < 1e-6)
        ok &= passed
        rows.append([i, n_states, n_actions, gamma, k, rep.gamma_k, rep.max_ratio_after_burn_in,
                     rep.residual, vi_err, rep.sweeps, passed])
    return {"pass": bool(ok), "rows": rows}


def verify(out_dir: str | Path | None = None, quick: bool = False) -> dict:
    """Run every oracle; optionally write a JSON report plus per-oracle CSVs."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    n_writes = 2000 if quick else 10_000
    wc = check_write_convergence(seeds=20, n_writes=n_writes)
    rc = check_refine_contraction(n_mdps=5 if quick else 20)
    tb = tr_bound_oracle(100)
    mem = EpisodicMemory(4, 2, k=4)
    for key, v in [((-0.5, -0.5), 0.0), ((0.5, -0.5), 0.5), ((-0.5, 0.5), 0.5), ((0.5, 0.5), 1.0)]:
        mem.write(key, v, 0.5, 4)
    axis, grid = trajectory_space_dump(mem, path=None if out is None else out / "trajectory_space.csv")
    report = {
        "write_convergence": {
            "passed": bool(wc["decaying_pass"] and wc["bias_pass"] and wc["kw_pass"] and wc["monotone_pass"]),
            **{k: v for k, v in wc.items() if k != "decaying_curve"},
        },
        "refine_contraction": {"passed": rc["pass"], "mdps": len(rc["rows"])},
        "tr_bound": {"passed": tb.passes == tb.trials, **{k: v for k, v in asdict(tb).items() if k != "slacks"}},
        "trajectory_space_dump": {"passed": grid.shape == (41, 41) and bool(np.all(np.isfinite(grid))),
                                  "shape": list(grid.shape)},
    }
    report["passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict))
    if out is not None:
        _write_rows(out / "write_convergence.csv", ["write", "mean_abs_error"],
                    [[i + 1, repr(float(e))] for i, e in enumerate(wc["decaying_curve"])])
        _write_rows(out / "refine_contraction.csv",
                    ["mdp", "states", "actions", "gamma", "k", "gamma_k", "max_ratio", "residual",
                     "vi_error", "sweeps", "passed"], rc["rows"])
        _write_rows(out / "tr_bound.csv", ["trial", "slack"], [[i, repr(s)] for i, s in enumerate(tb.slacks)])
        (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    return report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
