"""Joint two-frame kernel fitting and repeated-run motion statistics."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .frame import Frame, bilinear_sample_many
from .kernel import DEFAULT_CUTOFF, KernelSet, Translation
from .loss import LossConfig, evaluate_loss, sample_sr_locations, sr_lattice

__all__ = [
    "FitConfig",
    "FitResult",
    "FitState",
    "MeasurementReport",
    "DivergedError",
    "Adam",
    "init_kernels",
    "init_state",
    "step",
    "densify_and_prune",
    "fit_pair",
    "measure_motion",
    "summarize_runs",
]

logger = logging.getLogger(__name__)

PARAM_NAMES = ("c", "mu", "theta", "log_s", "shift")


@dataclass(frozen=True)
class FitConfig:
    kernel_count: int = 2000
    iterations: int = 5000
    lr_c: float = 1e-2
    lr_mu: float = 2e-2
    lr_theta: float = 1e-2
    lr_log_s: float = 5e-3
    lr_shift: float = 5e-3
    # learning rates decay exponentially to this fraction by the last iteration
    lr_final_scale: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    densify_interval: int = 200
    densify_start: int = 500
    densify_stop: int = 3000
    prune_threshold: float = 0.005
    split_grad_threshold: float = 0.002
    split_scale_threshold: float = 3.0
    init_scale: float = 1.5
    init_brightness: float = 0.8
    cutoff_radius: float = DEFAULT_CUTOFF
    rng_seed: int = 0

    def __post_init__(self):
        if self.kernel_count < 1:
            raise ValueError("kernel_count must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 <= self.densify_start <= self.densify_stop <= max(self.iterations, self.densify_stop):
            raise ValueError("densify window must satisfy 0 <= start <= stop")
        if self.densify_interval < 1:
            raise ValueError("densify_interval must be >= 1")
        if not 0 < self.lr_final_scale <= 1:
            raise ValueError("lr_final_scale must lie in (0, 1]")

    @property
    def learning_rates(self) -> dict:
        return {"c": self.lr_c, "mu": self.lr_mu, "theta": self.lr_theta,
                "log_s": self.lr_log_s, "shift": self.lr_shift}

    def lr_scale(self, iteration: int) -> float:
        if self.iterations <= 1:
            return 1.0
        return self.lr_final_scale ** (iteration / (self.iterations - 1))

    def is_densify_iteration(self, iteration: int) -> bool:
        return (self.densify_start <= iteration <= self.densify_stop
                and iteration > 0 and iteration % self.densify_interval == 0)

    def to_dict(self) -> dict:
        return asdict(self)


class DivergedError(RuntimeError):
    """Raised when the objective becomes non-finite; ``result`` holds the partial fit."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class Adam:
    """Adaptive-moment updates over named parameter arrays, one learning rate per name."""

    def __init__(self, lrs: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = dict(lrs)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict, scale: float = 1.0) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (scale * self.lrs[k] / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def reindex(self, index, n_new: int) -> None:
        """Keep per-kernel moments at ``index`` and append ``n_new`` zeroed rows."""
        for store in (self.m, self.v):
            for k, arr in store.items():
                if k == "shift":
                    continue
                kept = arr[index]
                pad = np.zeros((n_new,) + arr.shape[1:])
                store[k] = np.concatenate([kept, pad])


@dataclass
class FitState:
    kernels: KernelSet
    shift: np.ndarray
    optimizer: Adam
    grad_accum: np.ndarray
    grad_count: np.ndarray
    iteration: int = 0
    loss_trace: list = field(default_factory=list)
    sr_targets: tuple | None = None

    @property
    def params(self) -> dict:
        ks = self.kernels
        return {"c": ks.c, "mu": ks.mu, "theta": ks.theta, "log_s": ks.log_s, "shift": self.shift}


@dataclass
class FitResult:
    motion: Translation
    final_loss: float
    kernels: KernelSet
    iterations_run: int
    loss_trace: np.ndarray
    seed: int = 0

    def to_dict(self, include_kernels: bool = False) -> dict:
        out = {"motion": [self.motion.dx, self.motion.dy], "final_loss": self.final_loss,
               "iterations_run": self.iterations_run, "seed": self.seed,
               "kernel_count": len(self.kernels)}
        if include_kernels:
            out["kernels"] = self.kernels.to_dict()
        return out


@dataclass
class MeasurementReport:
    mae: np.ndarray
    std: np.ndarray
    motions: list
    ground_truth: Translation | None = None
    seeds: list = field(default_factory=list)
    n_diverged: int = 0
    fit_config: dict = field(default_factory=dict)
    loss_config: dict = field(default_factory=dict)
    final_losses: list = field(default_factory=list)

    @property
    def mean_motion(self) -> np.ndarray:
        return np.mean(np.asarray(self.motions, dtype=np.float64).reshape(-1, 2), axis=0)

    @property
    def mae_is_dispersion(self) -> bool:
        """True when no ground truth was given and MAE measures spread about the mean."""
        return self.ground_truth is None

    @property
    def pct_error(self) -> np.ndarray:
        if self.ground_truth is None:
            return np.full(2, np.nan)
        truth = np.abs(Translation(*self.ground_truth).as_array())
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(truth > 0, self.mae / truth * 100.0, np.nan)

    def to_dict(self) -> dict:
        return {
            "mae_px": [float(v) for v in self.mae],
            "std_px": [float(v) for v in self.std],
            "mae_is_dispersion": self.mae_is_dispersion,
            "motions_px": [[float(m[0]), float(m[1])] for m in self.motions],
            "ground_truth_px": None if self.ground_truth is None else list(map(float, self.ground_truth)),
            "pct_error": [None if math.isnan(v) else float(v) for v in self.pct_error],
            "seeds": list(self.seeds),
            "n_diverged": self.n_diverged,
            "final_losses": [float(v) for v in self.final_losses],
            "fit_config": self.fit_config,
            "loss_config": self.loss_config,
        }


def init_kernels(frame: Frame, n: int, rng_seed, scale: float = 1.5,
                 brightness: float = 0.8) -> KernelSet:
    """Random isotropic kernels with brightness taken from the frame under each center."""
    if n < 1:
        raise ValueError("need at least one kernel")
    rng = np.random.default_rng(rng_seed)
    mu = np.column_stack([rng.uniform(0.0, frame.width - 1, n), rng.uniform(0.0, frame.height - 1, n)])
    c = brightness * bilinear_sample_many(frame, mu[:, 0], mu[:, 1])
    return KernelSet(c, mu, np.zeros(n), np.full((n, 2), math.log(scale)))


def init_state(frame_a: Frame, frame_b: Frame, cfg: FitConfig, loss_cfg: LossConfig) -> FitState:
    ks = init_kernels(frame_a, cfg.kernel_count, cfg.rng_seed, cfg.init_scale, cfg.init_brightness)
    n = len(ks)
    opt = Adam(cfg.learning_rates, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    targets = None
    if loss_cfg.w_s > 0 and frame_a.width >= 2 and frame_a.height >= 2:
        xs, ys = sr_lattice(frame_a.width, frame_a.height, loss_cfg.points_per_gap)
        frames = (frame_a, frame_b) if loss_cfg.symmetric_sr else (frame_a,)
        targets = tuple(bilinear_sample_many(f, xs, ys) for f in frames)
    return FitState(ks, np.zeros(2), opt, np.zeros(n), np.zeros(n), sr_targets=targets)


def _params_usable(state: FitState) -> bool:
    ks = state.kernels
    with np.errstate(over="ignore"):
        s = np.exp(ks.log_s)
    arrays = (ks.c, ks.mu, ks.theta, s, state.shift)
    return all(np.all(np.isfinite(a)) for a in arrays) and bool(np.all(s > 0))


def step(state: FitState, frames: tuple[Frame, Frame], cfg: FitConfig, loss_cfg: LossConfig,
         iteration: int | None = None) -> FitState:
    """One Adam update of every kernel parameter and the shared shift."""
    frame_a, frame_b = frames
    it = state.iteration if iteration is None else iteration
    if not _params_usable(state):
        state.loss_trace.append(float("nan"))
        raise DivergedError(f"non-finite or collapsed parameters at iteration {it}")
    samples = None
    if loss_cfg.w_s > 0:
        samples = sample_sr_locations(frame_a.width, frame_a.height, loss_cfg, (cfg.rng_seed, it))
    ev = evaluate_loss(state.kernels, state.shift, frame_a, frame_b, samples, loss_cfg,
                       cfg.cutoff_radius, sr_targets=state.sr_targets)
    state.loss_trace.append(ev.total)
    if not math.isfinite(ev.total):
        raise DivergedError(f"non-finite loss at iteration {it}")
    g = ev.grad
    grads = {"c": g.c, "mu": g.mu, "theta": g.theta, "log_s": g.log_s, "shift": g.shift}
    # positional gradient scaled to per-pixel units for the densification trigger
    state.grad_accum += np.hypot(g.mu[:, 0], g.mu[:, 1]) * frame_a.intensities.size
    state.grad_count += 1
    state.optimizer.step(state.params, grads, cfg.lr_scale(it))
    state.iteration = it + 1
    return state


def densify_and_prune(state: FitState, cfg: FitConfig) -> FitState:
    """Prune faint kernels, then split or clone the ones with large positional gradients.

    Large kernels (max scale above ``split_scale_threshold``) are replaced by two
    smaller copies offset along their principal axis; small ones are cloned in
    place with their brightness shared between the two copies. The total count
    never exceeds ``cfg.kernel_count``.
    """
    ks = state.kernels
    n = len(ks)
    keep = np.abs(ks.c) >= cfg.prune_threshold
    if not keep.any():
        keep[np.argmax(np.abs(ks.c))] = True
    avg_grad = state.grad_accum / np.maximum(state.grad_count, 1)

    room = cfg.kernel_count - int(keep.sum())
    cand = np.flatnonzero(keep & (avg_grad > cfg.split_grad_threshold))
    cand = cand[np.argsort(-avg_grad[cand], kind="stable")][:max(room, 0)]

    if not cand.size and keep.all():
        state.grad_accum[:] = 0.0
        state.grad_count[:] = 0.0
        return state

    scales = ks.scales
    big = scales[cand].max(axis=1) > cfg.split_scale_threshold
    split_idx = cand[big]
    clone_idx = cand[~big]

    c = ks.c.copy()
    c[clone_idx] *= 0.5
    keep_final = keep.copy()
    keep_final[split_idx] = False
    kept = np.flatnonzero(keep_final)

    # children of a split: scale / 1.6, centers +-0.5 * s_max along the principal axis
    s_sp = scales[split_idx]
    th = ks.theta[split_idx]
    major_x = s_sp[:, 0] >= s_sp[:, 1]
    axis = np.where(major_x[:, None],
                    np.column_stack([np.cos(th), np.sin(th)]),
                    np.column_stack([-np.sin(th), np.cos(th)]))
    offset = 0.5 * s_sp.max(axis=1)[:, None] * axis
    split_mu = np.concatenate([ks.mu[split_idx] + offset, ks.mu[split_idx] - offset])
    split_c = np.tile(c[split_idx], 2)
    split_theta = np.tile(th, 2)
    split_log_s = np.tile(ks.log_s[split_idx] - math.log(1.6), (2, 1))

    new = KernelSet(
        np.concatenate([c[kept], c[clone_idx], split_c]),
        np.concatenate([ks.mu[kept], ks.mu[clone_idx], split_mu]),
        np.concatenate([ks.theta[kept], ks.theta[clone_idx], split_theta]),
        np.concatenate([ks.log_s[kept], ks.log_s[clone_idx], split_log_s]),
    )
    n_new = clone_idx.size + 2 * split_idx.size
    state.optimizer.reindex(kept, n_new)
    state.kernels = new
    state.grad_accum = np.zeros(len(new))
    state.grad_count = np.zeros(len(new))
    logger.debug("densify at %d: %d -> %d kernels (%d pruned, %d cloned, %d split)",
                 state.iteration, n, len(new), n - int(keep.sum()), clone_idx.size, split_idx.size)
    return state


def _check_pair(frame_a: Frame, frame_b: Frame) -> None:
    if frame_a.shape != frame_b.shape:
        raise ValueError(f"frame sizes differ: {frame_a.shape} vs {frame_b.shape}")


def fit_pair(frame_a: Frame, frame_b: Frame, cfg: FitConfig = FitConfig(),
             loss_cfg: LossConfig = LossConfig()) -> FitResult:
    """Fit one kernel set to both frames with a shared shift; the shift is the motion."""
    _check_pair(frame_a, frame_b)
    state = init_state(frame_a, frame_b, cfg, loss_cfg)
    frames = (frame_a, frame_b)
    for it in range(cfg.iterations):
        try:
            step(state, frames, cfg, loss_cfg, it)
        except DivergedError as exc:
            exc.result = _result(state, cfg)
            raise
        if cfg.is_densify_iteration(state.iteration):
            densify_and_prune(state, cfg)
    return _result(state, cfg)


def _result(state: FitState, cfg: FitConfig) -> FitResult:
    trace = np.asarray(state.loss_trace, dtype=np.float64)
    final = float(trace[-1]) if trace.size else float("nan")
    return FitResult(Translation(float(state.shift[0]), float(state.shift[1])), final,
                     state.kernels.copy(), len(trace), trace, cfg.rng_seed)


def _run_one(args):
    frame_a, frame_b, cfg, loss_cfg = args
    try:
        return fit_pair(frame_a, frame_b, cfg, loss_cfg)
    except DivergedError as exc:
        logger.warning("run with seed %d diverged: %s", cfg.rng_seed, exc)
        return None


def summarize_runs(results, seeds, truth, cfg: FitConfig, loss_cfg: LossConfig) -> MeasurementReport:
    """MAE/STD over the runs that finished; ``None`` entries count as diverged."""
    ok = [r for r in results if r is not None]
    n_div = len(results) - len(ok)
    if not ok:
        nan2 = np.full(2, np.nan)
        return MeasurementReport(nan2, nan2, [], truth, list(seeds), n_div, cfg.to_dict(),
                                 loss_cfg.to_dict())
    est = np.array([[r.motion.dx, r.motion.dy] for r in ok])
    ref = est.mean(axis=0) if truth is None else truth.as_array()
    mae = np.mean(np.abs(est - ref), axis=0)
    std = est.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(2)
    return MeasurementReport(mae, std, [r.motion for r in ok], truth, list(seeds), n_div,
                             cfg.to_dict(), loss_cfg.to_dict(), [r.final_loss for r in ok])


def measure_motion(frame_a: Frame, frame_b: Frame, cfg: FitConfig = FitConfig(),
                   loss_cfg: LossConfig = LossConfig(), n_runs: int = 5, ground_truth=None,
                   jobs: int = 1) -> MeasurementReport:
    """Repeat :func:`fit_pair` over ``n_runs`` consecutive seeds and summarize.

    With ``ground_truth`` the MAE is the mean absolute error against it;
    without, it is the mean absolute deviation from the across-run mean.
    STD is the sample standard deviation of the per-run estimates.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    _check_pair(frame_a, frame_b)
    seeds = [cfg.rng_seed + k for k in range(n_runs)]
    tasks = [(frame_a, frame_b, replace(cfg, rng_seed=s), loss_cfg) for s in seeds]
    if jobs > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, n_runs)) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    truth = None if ground_truth is None else Translation(*ground_truth)
    return summarize_runs(results, seeds, truth, cfg, loss_cfg)
