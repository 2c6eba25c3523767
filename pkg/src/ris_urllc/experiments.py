"""Experiment harness: config parsing, seeded Monte-Carlo sweeps and
CSV/JSON emission.

Config files are flat ``key = value`` lines with dotted section prefixes
(grammar documented in the README); units at this boundary are dBm, dB, km/h,
GHz and MHz, converted once at load.  Every (sweep value, trial) cell draws
one channel realization that all schemes consume, so scheme comparisons are
paired; the per-cell seed mixes the root seed, the sweep value and the trial
index, and results do not depend on the thread count.
"""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .baselines import RunResult, SchemeId, random_phase, run_scheme
from .channel import FadingParams, half_wavelength_array, synthesize
from .geometry import (SceneConfig, advance, default_seat_offsets,
                       derive_geometry)
from .rate import PhaseConfig, RateParams
from .solver import SingularChannelError, SolverConfig

FORMAT_VERSION = 1

SWEEP_PARAMETERS = ("P_max", "N_B", "M", "F", "b", "L", "eps_max", "v",
                    "kappa_dB", "iterations-trace")

DEFAULT_SWEEP_GRIDS = {
    "P_max": [20.0, 25.0, 30.0, 35.0, 40.0],
    "N_B": [4, 8, 16, 32],
    "M": [1, 2, 3, 4],
    "F": [36, 156, 276, 396],
    "b": [1, 2, 3],
    "L": [100.0, 200.0, 400.0],
    "eps_max": [1e-2, 1e-4, 1e-6, 1e-8],
    "v": [100.0, 400.0, 700.0, 1000.0],
    "kappa_dB": [0.0, 4.0, 8.0, 12.0, 16.0],
}


class ConfigError(ValueError):
    """Malformed experiment configuration."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def nearly_square_grid(count: int) -> tuple[int, int]:
    """Factor an element count into the most square (nx, ny) pair."""
    if count < 1:
        raise ConfigError("array sizes must be positive")
    nx = int(math.isqrt(count))
    while count % nx:
        nx -= 1
    return nx, count // nx


@dataclass(frozen=True)
class SystemConfig:
    """All scalar system parameters, stored in boundary units."""

    carrier_ghz: float = 28.0
    bandwidth_mhz: float = 200.0
    noise_extra_db: float = 10.0         # added to -174 dBm/Hz + 10 log10 B
    p_max_dbm: float = 30.0
    num_bs_antennas: int = 4
    num_ris_elements: int = 36
    num_users: int = 4
    blocklength: float = 100.0
    pep_max: float = 1e-4
    kappa_db: float = 10.0
    phase_bits: int = 2
    train_speed_kmh: float = 360.0
    alpha_direct: float = 4.0
    alpha_ris_user: float = 3.0
    alpha_bs_ris: float = 2.0
    pl_reference: str = "unit"
    # scene
    bs_position: tuple[float, float, float] = (0.0, 50.0, 10.0)
    ris_offset: tuple[float, float, float] = (0.0, 1.55, 2.0)
    user_offsets: tuple[tuple[float, float, float], ...] | None = None
    initial_train_x: float = -70.0
    slot_ms: float = 1.0
    eval_slot: int = 250
    # solver
    inner_max: int = 500
    eps_p: float = 1e-7
    xi: float = 1e-5
    outer_max: int = 100
    cond_limit: float = 1e6

    def __post_init__(self):
        if self.num_users < 1:
            raise ConfigError("at least one user is required")
        if self.num_bs_antennas < self.num_users:
            raise ConfigError("need at least as many BS antennas as users")
        if not (0.0 < self.pep_max < 1.0):
            raise ConfigError("pep_max must lie in (0, 1)")
        if self.blocklength < 1:
            raise ConfigError("blocklength must be at least 1")
        if self.phase_bits < 1:
            raise ConfigError("phase_bits must be at least 1")
        if self.num_ris_elements < 0:
            raise ConfigError("num_ris_elements must be nonnegative")

    # -- derived quantities -------------------------------------------------

    @property
    def carrier_hz(self) -> float:
        return self.carrier_ghz * 1e9

    @property
    def bandwidth_hz(self) -> float:
        return self.bandwidth_mhz * 1e6

    @property
    def noise_power_w(self) -> float:
        dbm = -174.0 + 10.0 * math.log10(self.bandwidth_hz) + self.noise_extra_db
        return dbm_to_watt(dbm)

    @property
    def p_max_w(self) -> float:
        return dbm_to_watt(self.p_max_dbm)

    @property
    def train_speed_mps(self) -> float:
        return self.train_speed_kmh / 3.6

    @property
    def kappa(self) -> float:
        return db_to_linear(self.kappa_db)

    # -- materialized model objects -----------------------------------------

    def scene(self) -> SceneConfig:
        offsets = self.user_offsets
        if offsets is None:
            offsets = default_seat_offsets(self.num_users)
        base = SceneConfig(
            bs_position=self.bs_position,
            bs_to_rail_offset=float(self.bs_position[1]),
            ris_offset_on_train=self.ris_offset,
            user_offsets=offsets,
            train_speed=self.train_speed_mps,
            slot_duration=self.slot_ms * 1e-3,
            train_x=self.initial_train_x,
        )
        return advance(base, self.eval_slot)

    def arrays(self):
        lam = FadingParams(
            kappa=self.kappa, alpha_direct=self.alpha_direct,
            alpha_bs_ris=self.alpha_bs_ris, alpha_ris_user=self.alpha_ris_user,
            carrier_hz=self.carrier_hz, pl_reference=self.pl_reference,
        ).wavelength
        bs = half_wavelength_array(*nearly_square_grid(self.num_bs_antennas), lam)
        if self.num_ris_elements:
            ris = half_wavelength_array(*nearly_square_grid(self.num_ris_elements), lam)
        else:
            ris = half_wavelength_array(1, 1, lam)
        return bs, ris

    def fading(self) -> FadingParams:
        return FadingParams(
            kappa=self.kappa, alpha_direct=self.alpha_direct,
            alpha_bs_ris=self.alpha_bs_ris, alpha_ris_user=self.alpha_ris_user,
            carrier_hz=self.carrier_hz, pl_reference=self.pl_reference,
        )

    def rate_params(self) -> RateParams:
        return RateParams(
            blocklength=self.blocklength,
            pep=np.full(self.num_users, self.pep_max),
            pep_max=self.pep_max,
            noise_power=self.noise_power_w,
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            p_max=self.p_max_w, inner_max=self.inner_max, eps_p=self.eps_p,
            xi=self.xi, outer_max=self.outer_max, cond_limit=self.cond_limit,
        )

    def synthesize_channels(self, rng: np.random.Generator):
        geom = derive_geometry(self.scene())
        bs, ris = self.arrays()
        channels = synthesize(geom, bs, ris, self.fading(),
                              self.train_speed_mps, self.slot_ms * 1e-3, rng)
        if self.num_ris_elements == 0:
            channels = replace(channels,
                               bs_ris=np.zeros((0, bs.size), dtype=complex),
                               ris_user=np.zeros((self.num_users, 0), dtype=complex))
        return channels


def apply_sweep(base: SystemConfig, parameter: str, value) -> SystemConfig:
    """Base config with one swept parameter replaced."""
    if parameter == "P_max":
        return replace(base, p_max_dbm=float(value))
    if parameter == "N_B":
        return replace(base, num_bs_antennas=int(value))
    if parameter == "M":
        return replace(base, num_users=int(value), user_offsets=None)
    if parameter == "F":
        return replace(base, num_ris_elements=int(value))
    if parameter == "b":
        return replace(base, phase_bits=int(value))
    if parameter == "L":
        return replace(base, blocklength=float(value))
    if parameter == "eps_max":
        return replace(base, pep_max=float(value))
    if parameter == "v":
        return replace(base, train_speed_kmh=float(value))
    if parameter == "kappa_dB":
        return replace(base, kappa_db=float(value))
    raise ConfigError(f"unknown sweep parameter {parameter!r}")


DEFAULT_SCHEMES = tuple(SchemeId)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: base system, swept parameter, schemes and seeding."""

    base: SystemConfig = field(default_factory=SystemConfig)
    sweep_parameter: str | None = None
    sweep_values: tuple | None = None
    schemes: tuple[SchemeId, ...] = DEFAULT_SCHEMES
    trials: int = 200
    root_seed: int = 1
    threads: int = 1
    output_path: str = "results/run"
    output_format: str = "csv"
    render_figures: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.sweep_parameter is not None and self.sweep_parameter not in SWEEP_PARAMETERS:
            raise ConfigError(
                f"sweep parameter {self.sweep_parameter!r} not in {SWEEP_PARAMETERS}")
        if self.output_format not in ("csv", "json", "both"):
            raise ConfigError("output format must be csv, json or both")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")

    @property
    def trace_mode(self) -> bool:
        return self.sweep_parameter == "iterations-trace"

    def resolved_values(self) -> list:
        if self.trace_mode or self.sweep_parameter is None:
            return [0.0]
        if self.sweep_values is not None:
            return list(self.sweep_values)
        return list(DEFAULT_SWEEP_GRIDS[self.sweep_parameter])


# --------------------------------------------------------------------------
# config file parsing

_TUPLE3 = "tuple3"

_SYSTEM_FIELDS = {
    "carrier_ghz": float, "bandwidth_mhz": float, "noise_extra_db": float,
    "p_max_dbm": float, "num_bs_antennas": int, "num_ris_elements": int,
    "num_users": int, "blocklength": float, "pep_max": float,
    "kappa_db": float, "phase_bits": int, "train_speed_kmh": float,
    "alpha_direct": float, "alpha_ris_user": float, "alpha_bs_ris": float,
    "pl_reference": str, "bs_position": _TUPLE3, "ris_offset": _TUPLE3,
    "initial_train_x": float, "slot_ms": float, "eval_slot": int,
    "inner_max": int, "eps_p": float, "xi": float, "outer_max": int,
    "cond_limit": float,
}


def _parse_scalar(text: str, kind, lineno: int):
    try:
        if kind is float:
            return float(text)
        if kind is int:
            return int(text)
        if kind is str:
            return text
        if kind is _TUPLE3:
            parts = [float(p) for p in text.split(",")]
            if len(parts) != 3:
                raise ValueError
            return tuple(parts)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot parse value {text!r}") from None
    raise ConfigError(f"line {lineno}: unsupported value kind")


def parse_config_text(text: str) -> ExperimentConfig:
    system: dict = {}
    sweep_parameter = None
    sweep_values = None
    top: dict = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")

        if key.startswith("system.") or key.startswith("scene.") or key.startswith("solver."):
            name = key.split(".", 1)[1]
            if name == "user_offsets":
                groups = [g for g in value.split(";") if g.strip()]
                system["user_offsets"] = tuple(
                    _parse_scalar(g, _TUPLE3, lineno) for g in groups)
            elif name in _SYSTEM_FIELDS:
                system[name] = _parse_scalar(value, _SYSTEM_FIELDS[name], lineno)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        elif key == "sweep.parameter":
            if value not in SWEEP_PARAMETERS:
                raise ConfigError(
                    f"line {lineno}: sweep parameter {value!r} not in {SWEEP_PARAMETERS}")
            sweep_parameter = value
        elif key == "sweep.values":
            sweep_values = tuple(_parse_scalar(v.strip(), float, lineno)
                                 for v in value.split(","))
        elif key == "run.schemes":
            try:
                top["schemes"] = tuple(SchemeId.parse(s.strip())
                                       for s in value.split(","))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
        elif key == "run.trials":
            top["trials"] = _parse_scalar(value, int, lineno)
        elif key == "run.seed":
            top["root_seed"] = _parse_scalar(value, int, lineno)
        elif key == "run.threads":
            top["threads"] = _parse_scalar(value, int, lineno)
        elif key == "output.path":
            top["output_path"] = value
        elif key == "output.format":
            top["output_format"] = value
        elif key == "output.figures":
            lowered = value.lower()
            if lowered not in ("true", "false", "yes", "no", "1", "0"):
                raise ConfigError(f"line {lineno}: boolean expected for {key!r}")
            top["render_figures"] = lowered in ("true", "yes", "1")
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")

    try:
        base = SystemConfig(**system)
        return ExperimentConfig(base=base, sweep_parameter=sweep_parameter,
                                sweep_values=sweep_values, **top)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config_text(handle.read())


def config_digest(cfg: ExperimentConfig) -> str:
    payload = json.dumps(_jsonable(asdict(cfg)), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# sweep execution

def _value_key(value) -> int:
    """Stable integer tag of a sweep value for seed derivation."""
    return zlib.crc32(format(float(value), ".9g").encode())


def trial_seed_sequence(root_seed: int, value, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=(root_seed, _value_key(value), trial))


@dataclass(frozen=True)
class CellResult:
    """All schemes' outcomes on one (sweep value, trial) channel draw."""

    results: dict
    failures: dict


def run_cell(system: SystemConfig, schemes, root_seed: int, value,
             trial: int) -> CellResult:
    ss = trial_seed_sequence(root_seed, value, trial)
    channel_ss, theta0_ss, random_ss = ss.spawn(3)
    channels = system.synthesize_channels(np.random.default_rng(channel_ss))

    if system.num_ris_elements:
        theta0 = PhaseConfig.random_on_grid(system.num_ris_elements,
                                            system.phase_bits,
                                            np.random.default_rng(theta0_ss))
        fixed_random = random_phase(system.num_ris_elements,
                                    np.random.default_rng(random_ss))
    else:
        theta0 = PhaseConfig(phases=np.zeros(0), bits=system.phase_bits)
        fixed_random = PhaseConfig(phases=np.zeros(0), bits=None)

    cfg = system.solver_config()
    params = system.rate_params()
    results = {}
    failures = {}
    for scheme in schemes:
        try:
            results[scheme] = run_scheme(
                scheme, channels, cfg, params, system.phase_bits,
                theta0=theta0, fixed_random_phases=fixed_random)
        except SingularChannelError as exc:
            failures[scheme] = str(exc)
    return CellResult(results=results, failures=failures)


@dataclass(frozen=True)
class SweepResult:
    """Aggregated sweep output plus reproduction metadata."""

    mode: str                     # "sweep" or "trace"
    sweep_parameter: str
    rows: tuple
    metadata: dict


def _aggregate_rows(parameter, value, scheme, runs: list[RunResult],
                    failures: int) -> dict:
    n = len(runs)
    sums = np.array([r.sum_rate for r in runs]) if n else np.zeros(0)
    row = {
        "sweep_param": parameter,
        "sweep_value": float(value),
        "scheme": scheme.value,
        "mean_sum_rate": float(sums.mean()) if n else float("nan"),
        "stderr": float(sums.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "trials": n,
        "mean_outer_iters": float(np.mean([r.outer_iterations for r in runs])) if n else float("nan"),
        "failures": failures,
    }
    if n:
        clamped = np.stack([np.maximum(r.user_rates, 0.0) for r in runs])
        row["per_user_mean_rates"] = [float(x) for x in clamped.mean(axis=0)]
        row["mean_inner_iters"] = float(np.mean([r.inner_iterations for r in runs]))
        row["mean_phase_evals"] = float(np.mean([r.phase_evaluations for r in runs]))
        row["converged_share"] = float(np.mean([r.converged for r in runs]))
        row["outer_iterations_per_trial"] = [int(r.outer_iterations) for r in runs]
        row["phase_evaluations_per_trial"] = [int(r.phase_evaluations) for r in runs]
    else:
        row["per_user_mean_rates"] = []
        row["mean_inner_iters"] = float("nan")
        row["mean_phase_evals"] = float("nan")
        row["converged_share"] = float("nan")
        row["outer_iterations_per_trial"] = []
        row["phase_evaluations_per_trial"] = []
    return row


def _trace_rows(parameter, scheme, runs: list[RunResult], failures: int) -> list[dict]:
    if not runs:
        return []
    length = max(len(r.trace) for r in runs)
    padded = np.stack([
        np.concatenate([r.trace, np.full(length - len(r.trace), r.trace[-1])])
        for r in runs])
    rows = []
    n = len(runs)
    for it in range(length):
        col = padded[:, it]
        rows.append({
            "sweep_param": parameter,
            "sweep_value": 0.0,
            "scheme": scheme.value,
            "iteration": it + 1,
            "mean_sum_rate": float(col.mean()),
            "stderr": float(col.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
            "trials": n,
            "mean_outer_iters": float(np.mean([r.outer_iterations for r in runs])),
            "failures": failures,
        })
    return rows


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Execute the whole experiment; deterministic for a fixed config and
    seed regardless of the thread count."""
    parameter = cfg.sweep_parameter or "none"
    values = cfg.resolved_values()
    tasks = [(vi, value, trial) for vi, value in enumerate(values)
             for trial in range(cfg.trials)]

    def work(task):
        vi, value, trial = task
        system = (cfg.base if cfg.trace_mode or cfg.sweep_parameter is None
                  else apply_sweep(cfg.base, cfg.sweep_parameter, value))
        return task, run_cell(system, cfg.schemes, cfg.root_seed, value, trial)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = dict(pool.map(work, tasks))
    else:
        outcomes = dict(map(work, tasks))

    rows: list[dict] = []
    for vi, value in enumerate(values):
        cells = [outcomes[(vi, value, t)] for t in range(cfg.trials)]
        for scheme in cfg.schemes:
            runs = [c.results[scheme] for c in cells if scheme in c.results]
            failures = sum(1 for c in cells if scheme in c.failures)
            if cfg.trace_mode:
                rows.extend(_trace_rows(parameter, scheme, runs, failures))
            else:
                rows.append(_aggregate_rows(parameter, value, scheme, runs,
                                            failures))

    metadata = {
        "format_version": FORMAT_VERSION,
        "code_version": __version__,
        "config_hash": config_digest(cfg),
        "root_seed": cfg.root_seed,
        "trials": cfg.trials,
        "schemes": [s.value for s in cfg.schemes],
        "mode": "trace" if cfg.trace_mode else "sweep",
        "sweep_parameter": parameter,
        "sweep_values": [float(v) for v in values],
    }
    return SweepResult(mode=metadata["mode"], sweep_parameter=parameter,
                       rows=tuple(rows), metadata=metadata)


# --------------------------------------------------------------------------
# emission

CSV_COLUMNS = ("sweep_param", "sweep_value", "scheme", "mean_sum_rate",
               "stderr", "trials", "mean_outer_iters")
TRACE_CSV_COLUMNS = ("sweep_param", "sweep_value", "scheme", "iteration",
                     "mean_sum_rate", "stderr", "trials", "mean_outer_iters")


def _format_number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".9g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(format(float(obj), ".9g"))
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, SchemeId):
        return obj.value
    return obj


def render_csv(result: SweepResult) -> str:
    columns = TRACE_CSV_COLUMNS if result.mode == "trace" else CSV_COLUMNS
    lines = [",".join(columns)]
    for row in result.rows:
        cells = []
        for col in columns:
            value = row[col]
            cells.append(value if isinstance(value, str) else _format_number(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def emit(result: SweepResult, path: str, fmt: str = "csv") -> list[str]:
    """Write the result as CSV and/or JSON next to ``path`` (no extension)."""
    import os

    if fmt not in ("csv", "json", "both"):
        raise ConfigError("output format must be csv, json or both")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        target = path + ".csv"
        with open(target, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(render_csv(result))
        written.append(target)
    if fmt in ("json", "both"):
        target = path + ".json"
        payload = {
            "metadata": result.metadata,
            "rows": _jsonable(list(result.rows)),
        }
        with open(target, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
        written.append(target)
    return written


def load_result(path: str) -> SweepResult:
    """Reload an emitted JSON result."""
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    metadata = payload["metadata"]
    return SweepResult(mode=metadata["mode"],
                       sweep_parameter=metadata["sweep_parameter"],
                       rows=tuple(payload["rows"]), metadata=metadata)
