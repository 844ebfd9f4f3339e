"""Configuration files, CSV/JSON emission and run manifests."""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
import os
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .engine import EnsembleResult, SimConfig
from .lattice import LatticeConfig
from .observables import rescaled_length

# key -> (section, parser); order fixes the canonical serialization
_LATTICE_KEYS = {"L": int, "J": float, "bc": str, "n": float}
_SIM_KEYS = {
    "gamma": float,
    "t_warmup": float,
    "n_samples": int,
    "sample_interval": float,
    "n_trajectories": int,
    "master_seed": int,
    "record_profile": bool,
    "record_events": bool,
    "lengths": "ints",
    "spectra": bool,
    "cumulant_order": int,
    "initial_state": str,
    "representation": str,
    "stabilize_every": int,
}


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    if kind is bool:
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if kind == "ints":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    return kind(raw)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return " ".join(str(int(v)) for v in value)
    return str(value)


def parse_config(text: str, overrides: dict | None = None) -> SimConfig:
    """Build a ``SimConfig`` from INI text; ``overrides`` (flat key -> value) win over the file."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {"lattice": _LATTICE_KEYS, "simulation": _SIM_KEYS}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in known[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
    values = {}
    for sec, keys in known.items():
        for key, kind in keys.items():
            if cp.has_option(sec, key):
                try:
                    values[key] = _parse_value(cp[sec][key], kind)
                except ValueError as exc:
                    raise ConfigError(f"[{sec}] {key}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    if "gamma" not in values or "L" not in values:
        raise ConfigError("config needs at least [lattice] L and [simulation] gamma")
    lat = {k: values.pop(k) for k in list(_LATTICE_KEYS) if k in values and values[k] is not None}
    values = {k: v for k, v in values.items() if k in _SIM_KEYS and v is not None}
    try:
        return SimConfig(lattice=LatticeConfig(**lat), **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def format_config(config: SimConfig) -> str:
    """Canonical INI form: fixed section and key order, every field present."""
    lines = ["[lattice]"]
    for key in _LATTICE_KEYS:
        lines.append(f"{key} = {_format_value(getattr(config.lattice, key))}")
    lines += ["", "[simulation]"]
    for key in _SIM_KEYS:
        lines.append(f"{key} = {_format_value(getattr(config, key))}")
    return "\n".join(lines) + "\n"


def load_config(path, overrides: dict | None = None) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


# ---------------------------------------------------------------- tables

def format_number(x) -> str:
    """17 significant digits; non-finite values become an empty field."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return format(x, ".17g") if math.isfinite(x) else ""


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(format_number(v) if not isinstance(v, str) else v for v in row) + "\n")
    return buf.getvalue()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


CQ_HEADER = ("q_index", "q", "q_tilde", "C_mean", "C_stderr", "n_samples")
CUMULANT_HEADER = ("l", "l_tilde", "c2_mean", "c2_stderr")
ENTROPY_HEADER = ("l", "l_tilde", "S_mean", "S_stderr", "ratio_S_over_c2")
PROFILE_HEADER = ("t", "x", "density")


def table_texts(result: EnsembleResult) -> dict[str, str]:
    """CSV contents keyed by file name."""
    acc = result.accumulator
    L = result.config.lattice.L
    ls = np.asarray(result.lengths)
    lt = rescaled_length(ls, L)
    out = {}
    rows = []
    if acc.count("c_q"):
        cm, cs = acc.mean("c_q"), acc.stderr("c_q")
        rows = [(m, result.q[m], result.q_tilde[m], cm[m], cs[m], acc.n_samples) for m in range(L)]
    out["cq.csv"] = csv_text(CQ_HEADER, rows)
    rows = []
    if acc.count("c2"):
        c2m, c2s = acc.mean("c2"), acc.stderr("c2")
        rows = [(int(l), lt[i], c2m[i], c2s[i]) for i, l in enumerate(ls)]
    out["cumulant.csv"] = csv_text(CUMULANT_HEADER, rows)
    rows = []
    if acc.count("entropy"):
        sm, ss = acc.mean("entropy"), acc.stderr("entropy")
        c2m = acc.mean("c2")
        for i, l in enumerate(ls):
            ratio = format_number(sm[i] / c2m[i]) if c2m[i] > 0 else ""
            rows.append((int(l), lt[i], sm[i], ss[i], ratio))
    out["entropy.csv"] = csv_text(ENTROPY_HEADER, rows)
    if result.config.record_profile:
        rows = []
        if acc.count("density"):
            dens = acc.mean("density")
            times = acc.profile["times"]
            rows = [(times[k], x, dens[k, x]) for k in range(len(times)) for x in range(L)]
        out["profile.csv"] = csv_text(PROFILE_HEADER, rows)
    return out


# ---------------------------------------------------------------- manifests

@dataclass
class RunManifest:
    config: dict
    master_seed: int
    version: str
    started: str
    finished: str
    files: dict = field(default_factory=dict)
    derived_scales: dict = field(default_factory=dict)
    n_trajectories: int = 0
    n_samples: int = 0
    n_events: int = 0
    zero_samples: bool = True
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True, default=_json_default) + "\n"

    @classmethod
    def from_json(cls, text: str) -> RunManifest:
        return cls(**json.loads(text))


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def now_utc() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def version_string() -> str:
    return f"monitored_fermions {__version__}; numpy {np.__version__}; python {platform.python_version()}"


def write_outputs(outdir, texts: dict[str, str], manifest: RunManifest) -> dict[str, str]:
    """Write every file plus ``manifest.json``; on any failure, remove what was written."""
    os.makedirs(outdir, exist_ok=True)
    written = []
    try:
        for name, text in texts.items():
            path = os.path.join(outdir, name)
            write_text(path, text)
            written.append(path)
            manifest.files[name] = sha256_file(path)
        path = os.path.join(outdir, "manifest.json")
        write_text(path, manifest.to_json())
        written.append(path)
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    return dict(manifest.files)


def emit_tables(result: EnsembleResult, outdir, started: str | None = None) -> RunManifest:
    cfg = result.config
    acc = result.accumulator
    manifest = RunManifest(
        config=cfg.to_dict(),
        master_seed=cfg.master_seed,
        version=version_string(),
        started=started or now_utc(),
        finished=now_utc(),
        derived_scales=cfg.scales.as_dict(),
        n_trajectories=acc.n_trajectories,
        n_samples=acc.n_samples,
        n_events=acc.n_events,
        zero_samples=acc.n_samples == 0,
        extra={"config_ini": format_config(cfg)},
    )
    write_outputs(outdir, table_texts(result), manifest)
    return manifest


def verify_manifest(path) -> list[str]:
    """Names of listed files whose checksum no longer matches (missing files included)."""
    with open(path, encoding="utf-8") as fh:
        manifest = RunManifest.from_json(fh.read())
    base = os.path.dirname(os.path.abspath(path))
    bad = []
    for name, digest in sorted(manifest.files.items()):
        p = os.path.join(base, name)
        if not os.path.exists(p) or sha256_file(p) != digest:
            bad.append(name)
    return bad


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:] if ln]
