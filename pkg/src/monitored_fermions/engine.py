"""Quantum trajectories: Poisson measurement scheduling, sampling and reproducible ensembles.

Random numbers come from a Philox stream keyed by ``(master_seed, trajectory_index)``.
Each event consumes three uniforms in this order: waiting time, site, outcome
threshold. The exact reference simulator replays the same triples.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import pickle
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit

from . import observables as obs
from .gaussian import CorrelationTrajectoryState, MeasurementOutcome, SlaterState, StateCorruptionError
from .lattice import LatticeConfig, derived_scales, diagonalize

CHECKPOINT_FORMAT = 1
SLATER = "slater"
CORRELATION = "correlation"
INITIAL_STATES = ("fermi_sea", "domain_wall", "alternating", "empty")


class TrajectoryError(RuntimeError):
    def __init__(self, index: int, event: int, cause: Exception):
        super().__init__(f"trajectory {index} failed at event {event}: {cause}")
        self.index, self.event, self.cause = index, event, cause


@dataclass(frozen=True)
class SimConfig:
    lattice: LatticeConfig
    gamma: float
    t_warmup: float | None = None
    n_samples: int = 10
    sample_interval: float | None = None
    n_trajectories: int = 1
    master_seed: int = 0
    record_profile: bool = False
    record_events: bool = False
    lengths: tuple | None = None
    spectra: bool = True
    cumulant_order: int = 10
    initial_state: str = "fermi_sea"
    representation: str = SLATER
    stabilize_every: int = 100

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.n_samples < 1 or self.n_trajectories < 0:
            raise ValueError("n_samples must be >= 1 and n_trajectories >= 0")
        if self.initial_state not in INITIAL_STATES:
            raise ValueError(f"initial_state must be one of {INITIAL_STATES}")
        if self.representation not in (SLATER, CORRELATION):
            raise ValueError("representation must be 'slater' or 'correlation'")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.t_warmup is not None and self.t_warmup < 0:
            raise ValueError("t_warmup must be non-negative")
        if self.lengths is not None:
            object.__setattr__(self, "lengths", tuple(int(l) for l in self.lengths))
            if min(self.lengths) < 1 or max(self.lengths) > self.lattice.L:
                raise ValueError("subsystem lengths must lie in [1, L]")
        if self.sample_interval is not None and self.sample_interval < self.scales.tau0:
            warnings.warn("sample_interval is shorter than tau0; samples will be correlated", stacklevel=2)

    @property
    def scales(self):
        return derived_scales(self.gamma, self.lattice)

    @property
    def warmup(self) -> float:
        if self.t_warmup is not None:
            return self.t_warmup
        sc = self.scales
        return max(20 * sc.tau0, 2 * self.lattice.L / sc.v0)

    @property
    def interval(self) -> float:
        return self.sample_interval if self.sample_interval is not None else 5 * self.scales.tau0

    @property
    def sample_times(self) -> np.ndarray:
        return self.warmup + self.interval * np.arange(self.n_samples)

    @property
    def length_grid(self) -> np.ndarray:
        return np.asarray(self.lengths) if self.lengths is not None else obs.default_lengths(self.lattice.L)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lengths"] = list(self.lengths) if self.lengths is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SimConfig:
        d = dict(d)
        d["lattice"] = LatticeConfig(**d["lattice"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class TrajectoryOutput:
    samples: list
    event_count: int
    seed: tuple
    events: list | None = None
    max_stability_error: float = 0.0


# ---------------------------------------------------------------- random events

def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(index,))))


class EventStream:
    """Lazily generated Poisson measurement events with total rate ``gamma * L``."""

    BLOCK = 512

    def __init__(self, gamma: float, L: int, rng: np.random.Generator, t0: float = 0.0):
        self.rate = gamma * L
        self.L = L
        self.rng = rng
        self.t = float(t0)
        self._block = np.empty((0, 3))
        self._block_state = None
        self._pos = 0
        self._times = None

    def _refill(self):
        self._block_state = self.rng.bit_generator.state
        self._block = self.rng.random((self.BLOCK, 3))
        self._pos = 0

    def peek(self) -> float:
        if self._pos >= self._block.shape[0]:
            self._refill()
        u = self._block[self._pos, 0]
        return self.t - math.log1p(-u) / self.rate

    def pop(self) -> tuple[float, int, float]:
        t = self.peek()
        _, us, uo = self._block[self._pos]
        self._pos += 1
        self.t = t
        return t, min(int(us * self.L), self.L - 1), float(uo)

    def snapshot(self) -> dict:
        return {"block_state": self._block_state, "pos": self._pos, "t": self.t,
                "rng_state": self.rng.bit_generator.state, "block_rows": self._block.shape[0]}

    def restore(self, snap: dict) -> None:
        self.t = snap["t"]
        if snap["block_state"] is None:
            self.rng.bit_generator.state = snap["rng_state"]
            self._block, self._pos = np.empty((0, 3)), 0
            return
        self.rng.bit_generator.state = snap["block_state"]
        self._refill()
        self._pos = snap["pos"]


def draw_events(gamma: float, L: int, t_span: float, rng: np.random.Generator):
    """Events in ``[0, t_span)``: arrays of times, sites and outcome thresholds."""
    if t_span <= 0:
        raise ValueError("t_span must be positive")
    stream = EventStream(gamma, L, rng)
    times, sites, thresholds = [], [], []
    while stream.peek() < t_span:
        t, s, u = stream.pop()
        times.append(t)
        sites.append(s)
        thresholds.append(u)
    return np.array(times), np.array(sites, dtype=int), np.array(thresholds)


def schedule_events(gamma: float, L: int, t_span: float, rng: np.random.Generator):
    times, sites, _ = draw_events(gamma, L, t_span, rng)
    return times, sites


# ---------------------------------------------------------------- trajectories

def initial_occupations(kind: str, config: LatticeConfig) -> np.ndarray | None:
    L = config.L
    if kind == "domain_wall":
        return (np.arange(L) < L // 2).astype(int)
    if kind == "alternating":
        return (np.arange(L) % 2 == 0).astype(int)
    if kind == "empty":
        return np.zeros(L, dtype=int)
    return None


def make_state(config: SimConfig, basis):
    cls = SlaterState if config.representation == SLATER else CorrelationTrajectoryState
    occ = initial_occupations(config.initial_state, config.lattice)
    return cls.fermi_sea(config.lattice, basis) if occ is None else cls.product(basis, occ)


def sample_observables(state, config: SimConfig) -> dict:
    cm = state.correlation_matrix()
    pc = obs.pair_correlator(cm)
    prof = obs.cumulant_profile(cm, config.length_grid, spectra=config.spectra,
                                max_order=config.cumulant_order)
    out = {"time": state.t, "c_real": pc.c_real, "c_q": pc.c_momentum, "c2": prof.c2}
    if config.spectra:
        out["entropy"] = prof.entropy
        out["cumulants"] = prof.higher
    if config.record_profile:
        out["density"] = obs.density_profile(cm)
    return out


def _save_checkpoint(path, config, index, state, stream, events, samples, k, event_log, max_err):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config_hash": config.digest(),
        "index": index,
        "t": state.t,
        "W": getattr(state, "W", None),
        "g": state.state.g if isinstance(state, CorrelationTrajectoryState) else None,
        "stream": stream.snapshot(),
        "events": events,
        "samples": samples,
        "next_sample": k,
        "event_log": event_log,
        "max_err": max_err,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        pickle.dump(payload, fh, protocol=4)
    os.replace(tmp, path)


def run_trajectory(config: SimConfig, index: int = 0, checkpoint_path=None, checkpoint_every: int | None = None,
                   stop_after_events: int | None = None, resume: bool = False) -> TrajectoryOutput | None:
    """Evolve-measure loop; returns ``None`` when stopped early by ``stop_after_events``."""
    lat = config.lattice
    basis = diagonalize(lat)
    state = make_state(config, basis)
    stream = EventStream(config.gamma, lat.L, trajectory_rng(config.master_seed, index))
    events, samples, k, max_err = 0, [], 0, 0.0
    event_log = [] if config.record_events else None

    if resume:
        with open(checkpoint_path, "rb") as fh:
            ck = pickle.load(fh)
        if ck.get("format") != CHECKPOINT_FORMAT or ck["config_hash"] != config.digest() or ck["index"] != index:
            raise ValueError("checkpoint does not match this configuration")
        if ck["W"] is not None:
            state.W = np.asfortranarray(ck["W"])
        else:
            from .gaussian import CorrelationMatrix, EIGENMODE
            state.state = CorrelationMatrix(ck["g"], EIGENMODE)
        state.t = ck["t"]
        stream.restore(ck["stream"])
        events, samples, k, max_err = ck["events"], ck["samples"], ck["next_sample"], ck["max_err"]
        event_log = ck["event_log"]

    times = config.sample_times
    try:
        while k < len(times):
            ts = times[k]
            while stream.peek() < ts:
                t, site, u = stream.pop()
                state.advance(t)
                outcome = state.measure(site, u)
                events += 1
                if event_log is not None:
                    event_log.append(outcome)
                if events % config.stabilize_every == 0:
                    max_err = max(max_err, state.stabilize())
                if checkpoint_path and checkpoint_every and events % checkpoint_every == 0:
                    _save_checkpoint(checkpoint_path, config, index, state, stream, events, samples, k,
                                     event_log, max_err)
                if stop_after_events is not None and events >= stop_after_events:
                    return None
            state.advance(ts)
            samples.append(sample_observables(state, config))
            k += 1
    except (StateCorruptionError, obs.ObservableError, FloatingPointError) as exc:
        raise TrajectoryError(index, events, exc) from exc
    return TrajectoryOutput(samples, events, (config.master_seed, index), event_log, max_err)


# ---------------------------------------------------------------- ensembles

ENSEMBLE_KEYS = ("c_real", "c_q", "c2", "entropy", "cumulants")


@dataclass
class _Stat:
    count: int
    mean: np.ndarray
    m2: np.ndarray


@dataclass
class EnsembleAccumulator:
    """Streaming mean and M2 of per-trajectory (time-pooled) observables.

    One observation per trajectory, so standard errors reflect trajectory-to-
    trajectory scatter. ``n_samples`` counts the pooled time samples.
    """

    stats: dict = field(default_factory=dict)
    n_samples: int = 0
    n_events: int = 0
    n_trajectories: int = 0
    profile: dict = field(default_factory=dict)

    def add(self, name: str, value) -> None:
        x = np.asarray(value, dtype=float)
        st = self.stats.get(name)
        if st is None:
            self.stats[name] = _Stat(1, x.copy(), np.zeros_like(x))
            return
        st.count += 1
        delta = x - st.mean
        st.mean = st.mean + delta / st.count
        st.m2 = st.m2 + delta * (x - st.mean)

    def add_trajectory(self, out: TrajectoryOutput) -> None:
        self.n_trajectories += 1
        self.n_events += out.event_count
        self.n_samples += len(out.samples)
        if not out.samples:
            return
        for key in ENSEMBLE_KEYS:
            if key in out.samples[0]:
                self.add(key, np.mean([s[key] for s in out.samples], axis=0))
        if "density" in out.samples[0]:
            self.add("density", np.array([s["density"] for s in out.samples]))
            self.profile["times"] = np.array([s["time"] for s in out.samples])

    def merge(self, other: EnsembleAccumulator) -> EnsembleAccumulator:
        """Chan et al. pairwise combination; ``self`` is taken to precede ``other``."""
        res = EnsembleAccumulator(dict(self.stats), self.n_samples + other.n_samples,
                                  self.n_events + other.n_events,
                                  self.n_trajectories + other.n_trajectories, {**self.profile, **other.profile})
        for name, b in other.stats.items():
            a = self.stats.get(name)
            if a is None:
                res.stats[name] = _Stat(b.count, b.mean.copy(), b.m2.copy())
                continue
            n = a.count + b.count
            delta = b.mean - a.mean
            res.stats[name] = _Stat(n, a.mean + delta * (b.count / n), a.m2 + b.m2 + delta ** 2 * (a.count * b.count / n))
        return res

    def mean(self, name: str) -> np.ndarray:
        return self.stats[name].mean

    def count(self, name: str) -> int:
        return self.stats[name].count if name in self.stats else 0

    def stderr(self, name: str) -> np.ndarray:
        st = self.stats[name]
        if st.count < 2:
            return np.full_like(st.mean, np.nan)
        return np.sqrt(st.m2 / (st.count - 1) / st.count)


@dataclass
class EnsembleResult:
    config: SimConfig
    accumulator: EnsembleAccumulator
    lengths: np.ndarray
    q: np.ndarray
    q_tilde: np.ndarray


def _run_one(args):
    config, index = args
    return run_trajectory(config, index)


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_ensemble(config: SimConfig, workers: int | None = None, progress=None) -> EnsembleResult:
    """Run trajectories ``0..n_trajectories-1`` and merge them in index order."""
    acc = EnsembleAccumulator()
    jobs = [(config, i) for i in range(config.n_trajectories)]
    nw = worker_count(workers)
    if nw == 1 or len(jobs) <= 1:
        results = map(_run_one, jobs)
        for out in results:
            acc.add_trajectory(out)
            if progress:
                progress(acc.n_trajectories)
    else:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            for out in pool.map(_run_one, jobs):
                acc.add_trajectory(out)
                if progress:
                    progress(acc.n_trajectories)
    q, qt = obs.momenta(config.lattice.L)
    return EnsembleResult(config, acc, config.length_grid, q, qt)


# ---------------------------------------------------------------- diagnostics

def detect_steady_state(series, tolerance: float = 2.0) -> bool:
    """Compare the mean of the last third against the middle third in pooled standard errors."""
    x = np.asarray(series, dtype=float)
    if x.size < 10:
        raise ValueError("need at least 10 points")
    k = x.size // 3
    mid, last = x[k:2 * k], x[x.size - k:]
    diff = abs(last.mean() - mid.mean())
    se = math.sqrt(mid.var(ddof=1) / mid.size + last.var(ddof=1) / last.size)
    if se == 0.0:
        return diff == 0.0
    return diff < tolerance * se


@dataclass(frozen=True)
class DiffusionFit:
    D: float
    stderr: float
    accepted: bool
    reason: str
    times: np.ndarray
    amplitude: np.ndarray
    amplitude_err: np.ndarray
    window: tuple


def domain_wall_experiment(config: SimConfig, t_min: float | None = None, t_max: float | None = None,
                           min_r2: float = 0.98, snr_min: float = 5.0, workers: int | None = None) -> DiffusionFit:
    """Diffusion constant from the decay of the longest-wavelength mode of a domain wall.

    The trajectory-averaged density obeys the lattice diffusion equation at times
    well beyond ``tau0``; on the ring its slowest step mode decays as
    ``exp(-D qt^2 t)`` with ``qt = 2 sin(pi / L)``.
    """
    cfg = replace(config, initial_state="domain_wall", t_warmup=0.0, record_profile=True, spectra=False)
    res = run_ensemble(cfg, workers=workers)
    acc = res.accumulator
    L = cfg.lattice.L
    times = cfg.sample_times
    phase = np.exp(-2j * np.pi * np.arange(L) / L)
    ref = np.sum((np.arange(L) < L // 2) * phase)
    # projection onto the initial mode direction; real by construction of the step
    proj = lambda dens: np.real(dens @ phase * np.conj(ref)) / abs(ref) / L
    amp = proj(acc.mean("density"))
    st = acc.stats["density"]
    if st.count > 1:
        per_traj_var = st.m2 / (st.count - 1)
        amp_err = np.sqrt(np.maximum(np.sum(per_traj_var, axis=1), 0) / L ** 2 / st.count)
    else:
        amp_err = np.full_like(amp, np.nan)
    tau0 = cfg.scales.tau0
    qt2 = (2 * math.sin(math.pi / L)) ** 2
    lo = 10 * tau0 if t_min is None else t_min
    hi = times[-1] if t_max is None else t_max
    # drop late times where the signal is buried in trajectory noise
    sel = (times >= lo) & (times <= hi) & (amp > 0)
    if np.all(np.isfinite(amp_err)):
        sel &= amp > snr_min * amp_err
    if sel.sum() < 5:
        return DiffusionFit(math.nan, math.nan, False, "no diffusive time window (t >> tau0) inside the run",
                            times, amp, amp_err, (lo, hi))
    t, a = times[sel], amp[sel]
    sigma = amp_err[sel] if np.all(np.isfinite(amp_err[sel])) and np.all(amp_err[sel] > 0) else None
    model = lambda tt, a0, D: a0 * np.exp(-D * qt2 * tt)
    D_guess = max(-np.polyfit(t, np.log(a), 1)[0] / qt2, 1e-6)
    try:
        popt, pcov = curve_fit(model, t, a, p0=(a[0] * math.exp(D_guess * qt2 * t[0]), D_guess), sigma=sigma,
                               absolute_sigma=sigma is not None, maxfev=20000)
    except RuntimeError as exc:
        return DiffusionFit(math.nan, math.nan, False, f"fit did not converge: {exc}", times, amp, amp_err, (lo, hi))
    resid = a - model(t, *popt)
    r2 = 1 - np.sum(resid ** 2) / np.sum((a - a.mean()) ** 2)
    D, Derr = float(popt[1]), float(math.sqrt(pcov[1, 1]))
    if not np.isfinite(r2) or r2 < min_r2:
        return DiffusionFit(D, Derr, False, f"profile decay is not exponential (R^2={r2:.3f})", times, amp, amp_err,
                            (lo, hi))
    return DiffusionFit(D, Derr, True, "ok", times, amp, amp_err, (lo, hi))
