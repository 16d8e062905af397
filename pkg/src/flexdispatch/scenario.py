"""Scenario configuration: line-oriented sectioned text.

Grammar (numbers are decimal with optional exponent; '#' starts a comment):

  [horizon]
    T = <int>
  [prices]
    mode = constant | random | explicit   (default constant)
    constant = <float>                    (default 1.0)
    values = <T floats>                   (mode = explicit)
    mu = <float> | <T floats>             (loss weight, default 1.0)
  [seed]
    seed = <int>
  [ensemble <bus>]
    states = <int>
    p = random | <n floats>               (MW per state)
    q = random | <n floats>               (MVAr per state)
    target_row = <n floats>               (n rows; row k = transitions FROM
                                           state k, 1-based; rows sum to 1)
    gamma = <float>                       (broadcast, default 1.0)
    gamma_row = <n floats>                (n rows, overrides the scalar)
    gamma <from> <to> = <float>           (sparse override, 1-based states)
    rho0 = uniform | <n floats>
    cost = price | explicit               (price: U[t, a] = u_t * p_a)
    cost_row = <n floats>                 (T rows when cost = explicit)
  [bounds]
    control <bus> = <p_lo> <p_hi> <q_lo> <q_hi>   (MW / MVAr)
  [algorithm]
    delta = auto | <float>
    delta_schedule = constant | diminishing
    tol_primal = <float>
    tol_dual = <float>
    max_iter = <int>
    variant = std2 | hybrid

Randomized draws ('mode = random' prices, 'p = random' loads) come from
independent streams spawned from the declared seed: stream 0 for prices,
then one stream per ensemble section in file order. Draws are bit-for-bit
reproducible from the seed. Random prices are u_t = 1 + rand(t) with rand
uniform on [0, 1); random state loads are uniform on 10%..200% of the
bus's rated load (which requires the grid model).
"""

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .grid import GridModel
from .mdp import EnsembleSpec


@dataclass
class DualOptions:
    """Iteration controls for the coupled solve."""

    delta: object = 0.5          # float step size, or "auto" for mu * R_ii scaling
    delta_schedule: str = "constant"  # constant | diminishing (delta / sqrt(iter))
    tol_primal: float = 1e-5
    tol_dual: float = 1e-5
    max_iter: int = 500
    variant: str = "std2"
    divergence_window: int = 50
    divergence_factor: float = 10.0


@dataclass
class ScenarioSpec:
    horizon: int
    prices: np.ndarray            # (T,), currency/MWh at arrival times 1..T
    loss_weight: np.ndarray       # (T,), objective weight on losses
    ensembles: dict               # bus id -> EnsembleSpec, file order
    control_bounds: dict          # bus id -> (p_lo, p_hi, q_lo, q_hi) in MW/MVAr
    options: DualOptions
    seed: int = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}")
        for arr, name in ((self.prices, "prices"), (self.loss_weight, "mu")):
            if arr.shape != (self.horizon,):
                raise ConfigError(f"{name} must have one entry per step")
        for bus, (p_lo, p_hi, q_lo, q_hi) in self.control_bounds.items():
            if p_lo > p_hi or q_lo > q_hi:
                raise ConfigError(f"control bounds at bus {bus} have lower > upper")


_SECTION_RE = re.compile(r"^\[\s*([a-zA-Z_]+)(?:\s+(\S+))?\s*\]$")
_SPARSE_GAMMA_RE = re.compile(r"^gamma\s+(\d+)\s+(\d+)$")
_CONTROL_RE = re.compile(r"^control\s+(\S+)$")


def load_scenario(text: str, model: GridModel = None, seed_override=None) -> ScenarioSpec:
    """Parse scenario text into a validated ScenarioSpec.

    The grid model is needed to validate ensemble bus ids and to draw
    randomized state loads from the rated loads; purely explicit scenarios
    parse without it.
    """
    sections = _split_sections(text)

    horizon_kv = _single(sections, "horizon")
    T = _parse_int(_require(horizon_kv, "t", "horizon"), "T")
    if T < 1:
        raise ConfigError(f"horizon must be at least 1, got {T}")

    seed = None
    if "seed" in sections:
        seed = _parse_int(_require(_single(sections, "seed"), "seed", "seed"), "seed")
    if seed_override is not None:
        seed = int(seed_override)

    ens_sections = sections.get("ensemble", [])
    streams = np.random.SeedSequence(seed if seed is not None else 0).spawn(
        1 + len(ens_sections))

    prices, mu = _parse_prices(sections, T, streams[0], seed)

    ensembles = {}
    for k, (label, kv) in enumerate(ens_sections):
        if label is None:
            raise ConfigError("[ensemble] section needs a bus id, e.g. [ensemble 17]")
        bus = _parse_int((label, kv["__line__"][1]), "ensemble bus id")
        if bus in ensembles:
            raise ConfigError(f"duplicate [ensemble {bus}] section")
        if model is not None and bus not in {b.bus_id for b in model.buses}:
            raise ConfigError(f"ensemble bus {bus} does not exist in the grid")
        ensembles[bus] = _build_ensemble(bus, kv, T, prices, model, streams[1 + k])

    control_bounds = _parse_bounds(sections, model)
    options = _parse_algorithm(sections)

    return ScenarioSpec(horizon=T, prices=prices, loss_weight=mu, ensembles=ensembles,
                        control_bounds=control_bounds, options=options, seed=seed)


def _split_sections(text):
    """Return {section name: [(label, {key: (value string, line) | list})]}."""
    sections = {}
    current = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            name, label = m.group(1).lower(), m.group(2)
            current = {"__line__": (name, ln)}
            sections.setdefault(name, []).append((label, current))
            continue
        if current is None:
            raise ConfigError("content before the first section header", line=ln)
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=ln)
        key, value = (s.strip() for s in line.split("=", 1))
        key_l = key.lower()
        if key_l in ("target_row", "gamma_row", "cost_row"):
            current.setdefault(key_l, []).append((value, ln))
        elif _SPARSE_GAMMA_RE.match(key_l) or _CONTROL_RE.match(key_l):
            current.setdefault("__multi__", []).append((key_l, value, ln))
        else:
            if key_l in current:
                raise ConfigError(f"duplicate key {key!r}", line=ln)
            current[key_l] = (value, ln)
    return sections


def _single(sections, name):
    if name not in sections:
        raise ConfigError(f"missing required section [{name}]")
    entries = sections[name]
    if len(entries) > 1:
        raise ConfigError(f"section [{name}] appears more than once")
    return entries[0][1]


def _require(kv, key, section):
    if key not in kv:
        raise ConfigError(f"missing key {key!r} in section [{section}]")
    return kv[key]


def _parse_int(pair, what):
    value, ln = pair
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{what} must be an integer, got {value!r}", line=ln) from None


def _parse_float(pair, what):
    value, ln = pair
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{what} must be a number, got {value!r}", line=ln) from None


def _parse_vector(pair, what, n=None):
    value, ln = pair
    try:
        vec = np.array([float(f) for f in value.split()], dtype=float)
    except ValueError:
        raise ConfigError(f"{what} must be a list of numbers", line=ln) from None
    if n is not None and vec.shape[0] != n:
        raise ConfigError(f"{what} needs {n} entries, got {vec.shape[0]}", line=ln)
    return vec


def _parse_prices(sections, T, stream, seed):
    kv = _single(sections, "prices") if "prices" in sections else {}
    mode = kv.get("mode", ("constant", 0))[0].strip().lower() if "mode" in kv else "constant"
    if mode == "constant":
        const = _parse_float(kv["constant"], "constant price") if "constant" in kv else 1.0
        prices = np.full(T, const)
    elif mode == "random":
        if seed is None:
            raise ConfigError("random prices need a [seed] section")
        rng = np.random.default_rng(stream)
        prices = 1.0 + rng.random(T)
    elif mode == "explicit":
        prices = _parse_vector(_require(kv, "values", "prices"), "price values", T)
    else:
        raise ConfigError(f"unknown price mode {mode!r}")

    if "mu" in kv:
        value, ln = kv["mu"]
        parts = value.split()
        mu = (np.full(T, _parse_float(kv["mu"], "mu")) if len(parts) == 1
              else _parse_vector(kv["mu"], "mu", T))
    else:
        mu = np.ones(T)
    return prices, mu


def _parse_state_powers(kv, key, n, rated_mw, bus, rng):
    if key not in kv:
        raise ConfigError(f"ensemble at bus {bus} is missing {key!r}")
    value, ln = kv[key]
    if value.strip().lower() == "random":
        if rated_mw is None:
            raise ConfigError(
                f"bus {bus}: randomized state loads need the grid model for the rated load",
                line=ln)
        if rng is None:
            raise ConfigError(f"bus {bus}: randomized state loads need a [seed] section",
                              line=ln)
        return rated_mw * (0.1 + 1.9 * rng.random(n))
    return _parse_vector(kv[key], f"{key} at bus {bus}", n)


def _build_ensemble(bus, kv, T, prices, model, stream):
    n = _parse_int(_require(kv, "states", f"ensemble {bus}"), "states")
    if n < 1:
        raise ConfigError(f"bus {bus}: need at least one state")

    rng = np.random.default_rng(stream)
    rated_p = rated_q = None
    if model is not None:
        b = model.bus(bus)
        rated_p = b.p_load * model.base_mva
        rated_q = b.q_load * model.base_mva
    p_alpha = _parse_state_powers(kv, "p", n, rated_p, bus, rng)
    q_alpha = _parse_state_powers(kv, "q", n, rated_q, bus, rng)

    rows = kv.get("target_row")
    if not rows or len(rows) != n:
        raise ConfigError(f"bus {bus}: need exactly {n} target_row lines, "
                          f"got {0 if not rows else len(rows)}")
    target = np.vstack([_parse_vector(pair, f"target_row at bus {bus}", n) for pair in rows])
    pbar = target.T.copy()  # config rows are origin-major; columns are origins internally

    gamma = np.full((n, n), _parse_float(kv["gamma"], "gamma") if "gamma" in kv else 1.0)
    grows = kv.get("gamma_row")
    if grows:
        if len(grows) != n:
            raise ConfigError(f"bus {bus}: need exactly {n} gamma_row lines")
        gamma = np.vstack([_parse_vector(pair, f"gamma_row at bus {bus}", n)
                           for pair in grows]).T.copy()
    for key_l, value, ln in kv.get("__multi__", []):
        m = _SPARSE_GAMMA_RE.match(key_l)
        if not m:
            raise ConfigError(f"unexpected key {key_l!r} in [ensemble {bus}]", line=ln)
        frm, to = int(m.group(1)), int(m.group(2))
        if not (1 <= frm <= n and 1 <= to <= n):
            raise ConfigError(f"bus {bus}: gamma override names state outside 1..{n}",
                              line=ln)
        if pbar[to - 1, frm - 1] == 0.0:
            raise ConfigError(
                f"bus {bus}: gamma override for transition {frm} -> {to} which is "
                "absent from the target matrix support", line=ln)
        gamma[to - 1, frm - 1] = _parse_float((value, ln), "gamma override")

    if "rho0" in kv:
        value, ln = kv["rho0"]
        rho0 = (np.full(n, 1.0 / n) if value.strip().lower() == "uniform"
                else _parse_vector(kv["rho0"], f"rho0 at bus {bus}", n))
    else:
        rho0 = np.full(n, 1.0 / n)

    cost_mode = kv.get("cost", ("price", 0))[0].strip().lower()
    crows = kv.get("cost_row")
    if cost_mode == "price" and not crows:
        energy_cost = np.outer(prices, p_alpha)
    elif cost_mode == "explicit" or crows:
        if not crows or len(crows) != T:
            raise ConfigError(f"bus {bus}: explicit cost needs exactly {T} cost_row lines")
        energy_cost = np.vstack([_parse_vector(pair, f"cost_row at bus {bus}", n)
                                 for pair in crows])
    else:
        raise ConfigError(f"bus {bus}: unknown cost mode {cost_mode!r}")

    return EnsembleSpec(bus_id=bus, p_alpha=p_alpha, q_alpha=q_alpha, pbar=pbar,
                        gamma=gamma, energy_cost=energy_cost, rho_init=rho0)


def _parse_bounds(sections, model):
    bounds = {}
    if "bounds" not in sections:
        return bounds
    kv = _single(sections, "bounds")
    for key_l, value, ln in kv.get("__multi__", []):
        m = _CONTROL_RE.match(key_l)
        if not m:
            raise ConfigError(f"unexpected key {key_l!r} in [bounds]", line=ln)
        bus = int(m.group(1))
        if model is not None and bus not in {b.bus_id for b in model.buses}:
            raise ConfigError(f"control bounds at nonexistent bus {bus}", line=ln)
        box = _parse_vector((value, ln), f"control bounds at bus {bus}", 4)
        if box[0] > box[1] or box[2] > box[3]:
            raise ConfigError(f"control bounds at bus {bus} have lower > upper", line=ln)
        bounds[bus] = tuple(box)
    return bounds


def _parse_algorithm(sections):
    opts = DualOptions()
    if "algorithm" not in sections:
        return opts
    kv = _single(sections, "algorithm")
    if "delta" in kv:
        value, ln = kv["delta"]
        opts.delta = "auto" if value.strip().lower() == "auto" else _parse_float(
            kv["delta"], "delta")
    if "delta_schedule" in kv:
        sched = kv["delta_schedule"][0].strip().lower()
        if sched not in ("constant", "diminishing"):
            raise ConfigError(f"delta_schedule must be constant or diminishing, got {sched!r}",
                              line=kv["delta_schedule"][1])
        opts.delta_schedule = sched
    if "tol_primal" in kv:
        opts.tol_primal = _parse_float(kv["tol_primal"], "tol_primal")
    if "tol_dual" in kv:
        opts.tol_dual = _parse_float(kv["tol_dual"], "tol_dual")
    if "max_iter" in kv:
        opts.max_iter = _parse_int(kv["max_iter"], "max_iter")
    if "variant" in kv:
        variant = kv["variant"][0].strip().lower()
        if variant not in ("std2", "hybrid"):
            raise ConfigError(f"variant must be std2 or hybrid, got {variant!r}",
                              line=kv["variant"][1])
        opts.variant = variant
    if "divergence_window" in kv:
        opts.divergence_window = _parse_int(kv["divergence_window"], "divergence_window")
    return opts
