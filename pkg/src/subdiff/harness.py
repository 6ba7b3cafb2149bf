"""Experiment configuration, presets, noise, and report files."""
from __future__ import annotations

import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .coefficients import CoefficientField
from .errors import InvalidInputError, SubdiffError
from .forward import solve_ibvp
from .inversion import ForwardModel, LMConfig, LMHistory, UnknownVector, jacobian, run_lm, svd_diagnostics
from .problem import BCS, DD, DN, Discretization, Excitation, FluxTrace, ProblemSpec

__all__ = [
    "NoiseModel",
    "Truth",
    "ExperimentConfig",
    "add_noise",
    "preset",
    "PRESETS",
    "run_experiment",
    "generate_data",
    "write_csv",
    "read_trace_csv",
    "TRUTH_REFINEMENT",
]

TOP_KEYS = ("problem", "disc", "window", "noise", "lm", "initial", "truth", "outputs")
GENERATOR = "philox4x64-10"
TRUTH_REFINEMENT = 2
N_TRUE_NODES = 2001


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseModel:
    """Relative Gaussian noise scaled by the sup norm of the clean trace.

    The standard normals come from numpy's ``Generator(Philox(key=seed))``
    (Philox4x64-10 keyed by the 64-bit seed, counter starting at zero),
    drawn with ``standard_normal`` in sample order.
    """

    epsilon: float = 0.0
    seed: int = 0
    generator: str = GENERATOR

    def __post_init__(self):
        if not (0.0 <= self.epsilon <= 0.2):
            raise InvalidInputError("noise epsilon must lie in [0, 0.2]")
        if not (0 <= int(self.seed) < 2**64) or int(self.seed) != self.seed:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        if self.generator != GENERATOR:
            raise InvalidInputError(f"only the {GENERATOR!r} generator is supported")

    def normals(self, n: int) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(key=int(self.seed)))
        return rng.standard_normal(n)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "seed": int(self.seed), "generator": self.generator}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        _check_keys(d, {"epsilon", "seed", "generator"}, "noise")
        return cls(float(d.get("epsilon", 0.0)), int(d.get("seed", 0)), d.get("generator", GENERATOR))


def add_noise(clean: FluxTrace, model: NoiseModel) -> FluxTrace:
    if len(clean) == 0:
        raise InvalidInputError("empty trace")
    if model.epsilon == 0.0:
        return FluxTrace(clean.times, clean.values.copy(), clean.window)
    amp = model.epsilon * float(np.max(np.abs(clean.values)))
    return FluxTrace(clean.times, clean.values + amp * model.normals(len(clean)), clean.window)


# ---------------------------------------------------------------------------
# config


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise InvalidInputError(f"{where} must be an object")
    extra = set(d) - set(allowed)
    if extra:
        raise InvalidInputError(f"unknown {where} keys {sorted(extra)}")


def problem_to_dict(p: ProblemSpec, rho_frame: str = "reference") -> dict:
    return {
        "alpha": p.alpha,
        "ell": p.ell,
        "rho": p.rho.to_dict(),
        "q": p.q.to_dict(),
        "bc": p.bc,
        "excitation": p.excitation.to_dict(),
        "T": p.T,
        "rho_frame": rho_frame,
    }


def problem_from_dict(d: dict) -> tuple:
    _check_keys(d, {"alpha", "ell", "rho", "q", "bc", "excitation", "T", "rho_frame"}, "problem")
    try:
        p = ProblemSpec(float(d["alpha"]), float(d["ell"]), CoefficientField.from_dict(d["rho"]),
                        CoefficientField.from_dict(d["q"]), d["bc"], Excitation.from_dict(d["excitation"]),
                        float(d["T"]))
    except KeyError as exc:
        raise InvalidInputError(f"problem missing {exc}") from None
    return p, d.get("rho_frame", "reference")


@dataclass(frozen=True)
class Truth:
    """Reference coefficients used only for error metrics."""

    q: CoefficientField
    ell: float
    rho: Optional[float] = None

    def to_dict(self) -> dict:
        return {"q": self.q.to_dict(), "ell": self.ell, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "Truth":
        _check_keys(d, {"q", "ell", "rho"}, "truth")
        try:
            rho = d.get("rho")
            return cls(CoefficientField.from_dict(d["q"]), float(d["ell"]), None if rho is None else float(rho))
        except KeyError as exc:
            raise InvalidInputError(f"truth missing {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec
    disc: Discretization
    window: tuple
    noise: NoiseModel
    lm: LMConfig
    initial: UnknownVector
    truth: Optional[Truth] = None
    outputs: str = "out"
    rho_frame: str = "reference"

    def __post_init__(self):
        t0, t1 = self.window
        if not (self.problem.excitation.support_end < t0 < t1 <= self.problem.T):
            raise InvalidInputError("window must lie inside (support_end, T]")
        if self.initial.rho is not None and self.truth is not None and self.truth.rho is None:
            raise InvalidInputError("rho is unknown but the truth carries no rho")

    def model(self) -> ForwardModel:
        return ForwardModel(self.problem, self.disc, self.window, thin=self.lm.thin, rho_frame=self.rho_frame)

    def to_dict(self) -> dict:
        return {
            "problem": problem_to_dict(self.problem, self.rho_frame),
            "disc": {"n_space": self.disc.n_space, "n_time": self.disc.n_time},
            "window": [self.window[0], self.window[1]],
            "noise": self.noise.to_dict(),
            "lm": self.lm.to_dict(),
            "initial": self.initial.to_dict(),
            "truth": None if self.truth is None else self.truth.to_dict(),
            "outputs": self.outputs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _check_keys(d, TOP_KEYS, "config")
        missing = {"problem", "disc", "window"} - set(d)
        if missing:
            raise InvalidInputError(f"config missing {sorted(missing)}")
        problem, frame = problem_from_dict(d["problem"])
        _check_keys(d["disc"], {"n_space", "n_time"}, "disc")
        disc = Discretization(int(d["disc"].get("n_space", 100)), int(d["disc"].get("n_time", 1000)))
        w = d["window"]
        if not (isinstance(w, (list, tuple)) and len(w) == 2):
            raise InvalidInputError("window must be [T0, T]")
        lm = LMConfig.from_dict(d["lm"]) if d.get("lm") is not None else LMConfig(1e-1, 1e3)
        if d.get("initial") is not None:
            initial = UnknownVector.from_dict(d["initial"])
        else:
            initial = UnknownVector(np.zeros(disc.n_space + 1), problem.ell)
        truth = Truth.from_dict(d["truth"]) if d.get("truth") is not None else None
        outputs = d.get("outputs", "out")
        if not isinstance(outputs, str):
            raise InvalidInputError("outputs must be a directory path")
        return cls(problem, disc, (float(w[0]), float(w[1])), NoiseModel.from_dict(d.get("noise") or {}),
                   lm, initial, truth, outputs, frame)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(fh.read())
        except OSError as exc:
            raise InvalidInputError(f"cannot read config: {exc}") from None


# ---------------------------------------------------------------------------
# presets

_TABLES = {
    "example1": {0.25: (2e-2, 200.0), 0.5: (5e-2, 500.0), 0.75: (1e-1, 1000.0)},
    "example2": {0.25: (2e-2, 20.0), 0.5: (5e-2, 40.0), 0.75: (1e-1, 80.0)},
    "example3": {0.25: (2e-2, 200.0), 0.5: (5e-2, 500.0), 0.75: (1e-1, 1000.0)},
}
_BETA_RHO = {0.25: 50.0, 0.5: 100.0, 0.75: 200.0}
PRESETS = tuple(_TABLES)
# the tabulated weights are sized for plain vector sums (see README)
PRESET_NORM = "euclidean"


def q_example1(xi):
    return 10 * xi * (1 - xi) ** 2


def q_example2(xi):
    return 1 / (1 + np.exp(-10 * xi))


def preset(name: str, alpha: float = 0.75, epsilon: float = 0.0, seed: int = 0, lm: LMConfig | None = None,
           outputs: str | None = None) -> ExperimentConfig:
    """Configuration of one of the three reference experiments.

    For alpha in {0.25, 0.5, 0.75} the tabulated LM weights are filled in;
    other orders need an explicit ``lm``.
    """
    if name not in _TABLES:
        raise InvalidInputError(f"unknown preset {name!r}; choose from {PRESETS}")
    key = min(_TABLES[name], key=lambda a: abs(a - alpha))
    if lm is None:
        if abs(key - alpha) > 1e-12:
            raise InvalidInputError("LM parameters are tabulated only for alpha in {0.25, 0.5, 0.75}")
        bq, bl = _TABLES[name][key]
        if name == "example2":
            lm = LMConfig(bq, bl, gamma_q=0.9, gamma_ell=0.95, mu=1e-6, norm=PRESET_NORM)
        elif name == "example3":
            lm = LMConfig(bq, bl, gamma_q=0.9, gamma_ell=0.9, mu=1e-9, beta_rho0=_BETA_RHO[key], gamma_rho=0.9,
                          norm=PRESET_NORM)
        else:
            lm = LMConfig(bq, bl, gamma_q=0.9, gamma_ell=0.9, mu=1e-9, norm=PRESET_NORM)
    disc = Discretization(100, 1000)
    nodes = np.linspace(0.0, 1.0, N_TRUE_NODES)
    if name == "example2":
        q = CoefficientField.nodal(q_example2(nodes))
        problem = ProblemSpec(alpha, 1.0, CoefficientField.constant(1.0), q, DN, Excitation.indicator(0.8), 1.0)
        window = (0.9, 1.0)
        initial = UnknownVector(np.full(disc.n_space + 1, 0.5), 1.1)
        truth = Truth(q, 1.0)
    else:
        q = CoefficientField.nodal(q_example1(nodes))
        if name == "example1":
            rho = CoefficientField.piecewise([0.5], [1.0, 1.5])
            initial = UnknownVector(np.zeros(disc.n_space + 1), 1.1)
            truth = Truth(q, 1.0)
        else:
            rho = CoefficientField.constant(1.0)
            initial = UnknownVector(np.zeros(disc.n_space + 1), 1.1, 1.2)
            truth = Truth(q, 1.0, 1.0)
        problem = ProblemSpec(alpha, 1.0, rho, q, DD, Excitation.indicator(0.5), 1.0)
        window = (0.6, 1.0)
    out = outputs or f"out/{name}_a{alpha:g}_e{epsilon:g}_s{seed}"
    return ExperimentConfig(problem, disc, window, NoiseModel(epsilon, seed), lm, initial, truth, out)


# ---------------------------------------------------------------------------
# CSV


def write_csv(path, header, columns) -> bytes:
    """Write columns with a header row, %.17g values and LF endings; returns the bytes."""
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    buf = io.StringIO(newline="")
    buf.write(",".join(header) + "\n")
    for row in zip(*cols):
        buf.write(",".join("%.17g" % v for v in row) + "\n")
    data = buf.getvalue().encode("utf-8")
    if path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(data)
    return data


def read_trace_csv(path) -> FluxTrace:
    """Read a ``t,flux`` CSV (extra columns ignored)."""
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            arr = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read trace {path}: {exc}") from None
    if header[:2] != ["t", "flux"] or arr.shape[1] < 2:
        raise InvalidInputError("trace CSV must start with columns t,flux")
    return FluxTrace(arr[:, 0], arr[:, 1])


# ---------------------------------------------------------------------------
# experiments


def truth_problem(cfg: ExperimentConfig) -> ProblemSpec:
    """The problem used to synthesize data (template with the true coefficients)."""
    p = cfg.problem
    if cfg.truth is None:
        return p
    rho = p.rho if cfg.truth.rho is None else CoefficientField.constant(cfg.truth.rho)
    return p.with_(q=cfg.truth.q, ell=cfg.truth.ell, rho=rho)


def generate_data(cfg: ExperimentConfig, model: ForwardModel | None = None) -> tuple:
    """Clean and noisy traces on the inversion time grid.

    The data come from a mesh refined ``TRUTH_REFINEMENT`` times in space and
    time; nodal restriction picks every second fine time level.
    """
    model = model or cfg.model()
    fine = cfg.disc.refined(TRUTH_REFINEMENT, TRUTH_REFINEMENT)
    if not (fine.n_space > cfg.disc.n_space and fine.n_time > cfg.disc.n_time):
        raise InvalidInputError("data mesh must be strictly finer than the inversion mesh")
    traj = solve_ibvp(truth_problem(cfg), fine)
    clean = FluxTrace(model.times, traj.flux[TRUTH_REFINEMENT * model.steps], cfg.window)
    return clean, add_noise(clean, cfg.noise)


def _history_columns(h: LMHistory):
    return ["k", "r", "e_q", "ell", "rho", "beta_q", "beta_ell"], [h.column(c) for c in
                                                                   ("k", "r", "e_q", "ell", "rho", "beta_q", "beta_ell")]


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None, write: bool = True,
                   data: FluxTrace | None = None, progress=None) -> dict:
    """Synthesize data, invert, and write the report files.

    Returns the summary record.  Errors are captured in the summary with a
    failure status; files written before the failure are kept.
    """
    out_dir = out_dir or cfg.outputs
    t_start = time.perf_counter()
    summary = {"status": "ok", "alpha": cfg.problem.alpha, "epsilon": cfg.noise.epsilon, "seed": int(cfg.noise.seed),
               "truth_refinement": TRUTH_REFINEMENT, "selection": "e_q" if cfg.truth is not None else "r"}
    digest = hashlib.sha256()
    try:
        model = cfg.model()
        if data is None:
            clean, noisy = generate_data(cfg, model)
        else:
            if len(data) != len(model.steps) or not np.allclose(data.times, model.times, atol=1e-12):
                raise InvalidInputError("data times do not match the measurement window of the config")
            clean, noisy = None, data
        if write:
            cols = [noisy.times, noisy.values] + ([clean.values] if clean is not None else [])
            hdr = ["t", "flux"] + (["clean"] if clean is not None else [])
            write_csv(os.path.join(out_dir, "data.csv"), hdr, cols)
        truth = None
        if cfg.truth is not None:
            truth = (cfg.truth.q, cfg.truth.ell)
        l2 = float(math.sqrt(np.sum(model.weights * (noisy.values - (clean.values if clean is not None else noisy.values)) ** 2)))
        hist = run_lm(cfg.initial, noisy.values, cfg.lm, model, truth=truth, noise_level=l2, callback=progress)
        hdr, cols = _history_columns(hist)
        digest.update(write_csv(os.path.join(out_dir, "history.csv") if write else None, hdr, cols))
        idx = hist.best_by_eq if cfg.truth is not None else hist.best_by_r
        best = hist.iterates[idx]
        xi = np.linspace(0.0, 1.0, best.n_q)
        digest.update(write_csv(os.path.join(out_dir, "q_best.csv") if write else None, ["xi", "q"], [xi, best.q_nodes]))
        J, _ = jacobian(model, best, cfg.lm)
        s, sn = svd_diagnostics(J[:, : best.n_q] * np.sqrt(model.weights)[:, None])
        digest.update(write_csv(os.path.join(out_dir, "singular_values.csv") if write else None,
                                ["index", "sigma", "sigma_normalized"], [np.arange(1, len(s) + 1), s, sn]))
        rec = hist.records[idx]
        summary.update({
            "status": "diverged" if hist.diverged else "ok",
            "stopped_by": hist.stopped_by,
            "iterations": len(hist.records) - 1,
            "best_k": rec.k,
            "best_e_q": None if math.isnan(rec.e_q) else rec.e_q,
            "best_ell": rec.ell,
            "best_rho": None if math.isnan(rec.rho) else rec.rho,
            "best_r": rec.r,
            "r_min": float(np.min(hist.column("r"))),
            "e_q_min": None if cfg.truth is None else float(np.nanmin(hist.column("e_q"))),
            "best_by_r_k": hist.best_by_r,
            "final_ell": hist.records[-1].ell,
        })
        summary["_history"] = hist
    except SubdiffError as exc:
        summary.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}", "exit_code": exc.exit_code})
    summary["hash"] = digest.hexdigest()
    summary["wall_time"] = time.perf_counter() - t_start
    if write:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump({k: v for k, v in summary.items() if not k.startswith("_")}, fh, indent=2)
            fh.write("\n")
    return summary
