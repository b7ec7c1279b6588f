"""Experiment configuration: flat key = value files, command-line overrides,
and a stable digest of the resolved configuration.

Every run is a pure function of (task, resolved config); the digest of the
canonical serialization is embedded in output rows so results stay
traceable to the exact configuration that produced them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

__all__ = ["ExperimentConfig", "UsageError", "TASKS", "parse_config_text"]

TASKS = ("synth", "fit", "threshold", "eval", "convergence", "compare", "rate_check")


class UsageError(ValueError):
    """Bad command line, config file, or input file; maps to exit code 2."""


def parse_config_text(text):
    """Parse flat ``key = value`` lines; '#' starts a comment, blanks skipped."""
    out = {}
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _opt(parser):
    def convert(text):
        if text == "" or text.lower() == "none":
            return None
        return parser(text)

    return convert


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _list_of(parser):
    def convert(text):
        if text == "" or text.lower() == "none":
            return ()
        return tuple(parser(tok.strip()) for tok in text.split(",") if tok.strip())

    return convert


# field name -> parser applied to the raw text value
_PARSERS = {
    "seed": int,
    "out_dir": str,
    "n": _opt(int),
    "L": _opt(int),
    "d": _opt(int),
    "rank": _opt(int),
    "noise_model": str,
    "theta_star": float,
    "noise_sigma": float,
    "wstar_scale": float,
    "feature_variance": float,
    "data_path": _opt(str),
    "test_path": _opt(str),
    "data_format": str,
    "ratio": float,
    "pu_rho": float,
    "solver": str,
    "loss": str,
    "lambda_reg": _opt(float),
    "lambda_c": float,
    "regularizer_mode": str,
    "gamma_clip": _opt(float),
    "max_iters": int,
    "rel_tol": float,
    "step_init": float,
    "step_shrink": float,
    "step_growth": float,
    "k": _opt(int),
    "ridge": float,
    "metric": str,
    "metrics": _list_of(str),
    "methods": _list_of(str),
    "ratios": _list_of(float),
    "repeats": int,
    "omegas": _opt(_list_of(int)),
    "grid_points": int,
    "model_path": _opt(str),
}


@dataclass
class ExperimentConfig:
    """Resolved experiment description; one instance drives one command."""

    task: str = "fit"
    seed: int = 0
    out_dir: str = "out"
    # synthetic problem
    n: int | None = None
    L: int | None = None
    d: int | None = None
    rank: int | None = None
    noise_model: str = "noise_free_sign"
    theta_star: float = 0.0
    noise_sigma: float = 1.0
    wstar_scale: float = 1.0
    feature_variance: float = 1.0
    # dataset input
    data_path: str | None = None
    test_path: str | None = None
    data_format: str = "mulan_svm"
    # observation process
    ratio: float = 0.2
    pu_rho: float = 0.0
    # solver
    solver: str = "alt_min"
    loss: str = "logistic"
    lambda_reg: float | None = None
    lambda_c: float = 1.0
    regularizer_mode: str = "param_norm"
    gamma_clip: float | None = None
    max_iters: int = 300
    rel_tol: float = 1e-6
    step_init: float = 1.0
    step_shrink: float = 0.5
    step_growth: float = 2.0
    k: int | None = None
    ridge: float = 1e-4
    # metrics and experiment grids
    metric: str = "micro_f1"
    metrics: tuple = ("micro_f1", "accuracy")
    methods: tuple = ("algorithm1", "plugin")
    ratios: tuple = (0.05, 0.1, 0.2, 0.3, 0.5)
    repeats: int = 5
    omegas: tuple | None = None
    grid_points: int = 4
    # outputs
    model_path: str | None = None

    @classmethod
    def from_sources(cls, task, file_values, override_values):
        """Build a config from a parsed file dict plus override dict."""
        if task not in TASKS:
            raise UsageError(f"unknown task {task!r}; expected one of: {', '.join(TASKS)}")
        merged = dict(file_values)
        merged.update(override_values)
        kwargs = {"task": task}
        for key, raw in merged.items():
            if key == "task":
                # the CLI positional wins; a task key in the file must agree
                if raw != task:
                    raise UsageError(
                        f"config task {raw!r} conflicts with command-line task {task!r}"
                    )
                continue
            parser = _PARSERS.get(key)
            if parser is None:
                raise UsageError(f"unknown config key {key!r}")
            try:
                kwargs[key] = parser(raw)
            except ValueError as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        cfg = cls(**kwargs)
        cfg._validate()
        return cfg

    def _validate(self):
        if self.repeats < 1:
            raise UsageError("repeats must be at least 1")
        if not 0.0 < self.ratio <= 1.0:
            raise UsageError("ratio must lie in (0, 1]")
        for r in self.ratios:
            if not 0.0 < r <= 1.0:
                raise UsageError("ratios must lie in (0, 1]")
        if not 0.0 <= self.pu_rho < 1.0:
            raise UsageError("pu_rho must lie in [0, 1)")
        if self.solver not in ("alt_min", "prox_grad", "plugin"):
            raise UsageError("solver must be alt_min, prox_grad, or plugin")
        if self.feature_variance <= 0:
            raise UsageError("feature_variance must be positive")

    def require_synthetic(self):
        missing = [name for name in ("n", "L", "d", "rank") if getattr(self, name) is None]
        if missing:
            raise UsageError(
                f"task {self.task!r} needs a synthetic spec; missing: {', '.join(missing)}"
            )

    def canonical_text(self):
        """Stable serialization of every field, one 'key = value' line each."""
        parts = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if value is None:
                text = ""
            elif isinstance(value, tuple):
                text = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            parts.append(f"{f.name} = {text}")
        return "\n".join(parts) + "\n"

    def config_hash(self):
        """First 12 hex digits of the SHA-256 of the canonical serialization."""
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]
