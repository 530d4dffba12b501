"""World description: service area, users, UAV fleet, task statistics, weights.

Everything downstream (channel, cost model, solvers) reads from a frozen
Scenario object so that a run is reproducible from config + seed alone.
Distances are metres, time is seconds, rates are bits/s, power is watts.
"""

from __future__ import annotations

import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channel import ChannelParams


class ScenarioError(ValueError):
    """Config rejected; message carries the offending field path."""

    def __init__(self, field_path, message):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


@dataclass(frozen=True)
class TimeGrid:
    """Mission horizon split into equal slots."""

    horizon_s: float = 100.0
    n_slots: int = 50

    @property
    def slot_s(self) -> float:
        return self.horizon_s / self.n_slots

    def validate(self):
        if self.horizon_s <= 0:
            raise ScenarioError("time.horizon_s", "must be positive")
        if self.n_slots < 2:
            raise ScenarioError("time.n_slots", "need at least 2 slots")


@dataclass(frozen=True)
class PropulsionParams:
    """Rotary-wing power model constants (hover + induced + parasite)."""

    blade_profile_w: float = 79.86
    induced_w: float = 88.63
    tip_speed_mps: float = 120.0
    hover_induced_mps: float = 4.03   # mean rotor induced velocity at hover
    fuselage_drag_ratio: float = 0.6
    air_density: float = 1.225
    rotor_solidity: float = 0.05
    disc_area_m2: float = 0.503

    def validate(self):
        for name in ("blade_profile_w", "induced_w", "tip_speed_mps",
                     "hover_induced_mps", "air_density", "disc_area_m2"):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"uavs.propulsion.{name}", "must be positive")
        if self.fuselage_drag_ratio < 0 or self.rotor_solidity < 0:
            raise ScenarioError("uavs.propulsion", "drag ratio and solidity must be >= 0")


@dataclass(frozen=True)
class UserSpec:
    """A ground device with a fixed position and its own small CPU."""

    position_m: tuple = (0.0, 0.0)
    cpu_hz: float = 340e6
    tx_power_w: float = 1.0          # 30 dBm uplink transmit power
    switch_cap_coeff: float = 1e-27  # effective switched capacitance

    def validate(self, idx, area_m):
        x, y = self.position_m
        if not (0.0 <= x <= area_m[0] and 0.0 <= y <= area_m[1]):
            raise ScenarioError(f"users[{idx}].position_m", "outside service area")
        if self.cpu_hz <= 0:
            raise ScenarioError(f"users[{idx}].cpu_hz", "must be positive")
        if self.tx_power_w <= 0:
            raise ScenarioError(f"users[{idx}].tx_power_w", "must be positive")
        if self.switch_cap_coeff <= 0:
            raise ScenarioError(f"users[{idx}].switch_cap_coeff", "must be positive")


@dataclass(frozen=True)
class UavSpec:
    """An aerial server flying at fixed altitude."""

    initial_position_m: tuple = (0.0, 0.0)
    altitude_m: float = 100.0
    v_min_mps: float = 20.0
    v_max_mps: float = 60.0
    a_max_mps2: float = 5.0
    min_separation_m: float = 10.0
    cpu_max_hz: float = 1.2e9
    switch_cap_coeff: float = 1e-27
    propulsion: PropulsionParams = field(default_factory=PropulsionParams)

    def validate(self, idx):
        if self.altitude_m <= 0:
            raise ScenarioError(f"uavs[{idx}].altitude_m", "must be positive")
        if not (0.0 <= self.v_min_mps < self.v_max_mps):
            raise ScenarioError(f"uavs[{idx}].v_min_mps",
                                "need 0 <= v_min < v_max")
        if self.a_max_mps2 <= 0:
            raise ScenarioError(f"uavs[{idx}].a_max_mps2", "must be positive")
        if self.min_separation_m < 0:
            raise ScenarioError(f"uavs[{idx}].min_separation_m", "must be >= 0")
        if self.cpu_max_hz <= 0:
            raise ScenarioError(f"uavs[{idx}].cpu_max_hz", "must be positive")
        self.propulsion.validate()


@dataclass(frozen=True)
class TaskGenParams:
    """Per-slot random task statistics, shared by all users."""

    arrival_prob: float = 1.0
    size_bits_range: tuple = (0.5e6, 3.0e6)
    intensity_range: tuple = (500.0, 1500.0)   # CPU cycles per bit
    deadline_range_s: tuple = (0.1, 75.0)

    def validate(self):
        if not (0.0 <= self.arrival_prob <= 1.0):
            raise ScenarioError("tasks.arrival_prob", "must lie in [0, 1]")
        for name in ("size_bits_range", "intensity_range", "deadline_range_s"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ScenarioError(f"tasks.{name}", "need 0 <= lo <= hi")


class Normalizers:
    """Reference scales that make the three objective terms dimensionless.

    delay_s: total delay when every task runs locally.
    energy_j: fleet hover energy over the whole horizon.
    bits: total bits generated.  Zero scales fall back to 1 so an empty
    schedule still yields a finite objective.
    """

    __slots__ = ("delay_s", "energy_j", "bits")

    def __init__(self, delay_s=1.0, energy_j=1.0, bits=1.0):
        self.delay_s = delay_s if delay_s > 0 else 1.0
        self.energy_j = energy_j if energy_j > 0 else 1.0
        self.bits = bits if bits > 0 else 1.0

    def __eq__(self, other):
        return (isinstance(other, Normalizers)
                and (self.delay_s, self.energy_j, self.bits)
                == (other.delay_s, other.energy_j, other.bits))

    def __repr__(self):
        return (f"Normalizers(delay_s={self.delay_s!r}, "
                f"energy_j={self.energy_j!r}, bits={self.bits!r})")


@dataclass(frozen=True)
class ObjectiveWeights:
    """Convex combination over normalized delay, UAV energy, offloaded bits.

    Offloaded bits enter with a minus sign (more offloading is rewarded).
    """

    w_delay: float = 1.0 / 3.0
    w_energy: float = 1.0 / 3.0
    w_offload: float = 1.0 / 3.0
    normalizers: Optional[Normalizers] = None

    def validate(self):
        if min(self.w_delay, self.w_energy, self.w_offload) < 0:
            raise ScenarioError("weights", "weights must be >= 0")
        if self.w_delay + self.w_energy + self.w_offload <= 0:
            raise ScenarioError("weights", "at least one weight must be positive")

    def with_normalizers(self, norm: Normalizers) -> "ObjectiveWeights":
        return dataclasses.replace(self, normalizers=norm)


@dataclass(frozen=True)
class SolverParams:
    """Knobs for the block-coordinate loop and its three sub-solvers."""

    epsilon: float = 1e-4             # relative objective-change stopping threshold
    max_outer: int = 100
    max_users_per_uav: int = 1
    rounding_delta: float = 0.5       # threshold for fractional -> binary offload
    integrality_xi: float = 1.0       # penalty scale in the rounding certificate
    # dual bisection width, relative to the bracket; tight enough that the
    # scaled complementary-slackness residual stays well under 1e-6
    lambda_eps_rel: float = 1e-9
    sca_max_iters: int = 30
    sca_tol: float = 1e-4
    subproblem_solver: str = "CLARABEL"

    def validate(self):
        if self.epsilon <= 0:
            raise ScenarioError("solver.epsilon", "must be positive")
        if self.max_outer < 1:
            raise ScenarioError("solver.max_outer", "must be >= 1")
        if self.max_users_per_uav < 1:
            raise ScenarioError("solver.max_users_per_uav", "must be >= 1")
        if not (0.0 < self.rounding_delta <= 1.0):
            raise ScenarioError("solver.rounding_delta", "must lie in (0, 1]")
        if self.integrality_xi <= 0:
            raise ScenarioError("solver.integrality_xi", "must be positive")
        if self.sca_max_iters < 1:
            raise ScenarioError("solver.sca_max_iters", "must be >= 1")


@dataclass(frozen=True)
class Scenario:
    """Frozen description of one experiment instance."""

    time: TimeGrid = field(default_factory=TimeGrid)
    area_m: tuple = (2500.0, 3000.0)
    users: tuple = ()
    uavs: tuple = ()
    channel: ChannelParams = field(default_factory=ChannelParams)
    tasks: TaskGenParams = field(default_factory=TaskGenParams)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    solver: SolverParams = field(default_factory=SolverParams)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_uavs(self) -> int:
        return len(self.uavs)

    def validate(self) -> "Scenario":
        self.time.validate()
        if self.area_m[0] <= 0 or self.area_m[1] <= 0:
            raise ScenarioError("area_m", "must be positive")
        if not self.users:
            raise ScenarioError("users", "need at least one user")
        if not self.uavs:
            raise ScenarioError("uavs", "need at least one uav")
        for i, u in enumerate(self.users):
            u.validate(i, self.area_m)
        for i, m in enumerate(self.uavs):
            m.validate(i)
            x, y = m.initial_position_m
            if not (0.0 <= x <= self.area_m[0] and 0.0 <= y <= self.area_m[1]):
                raise ScenarioError(f"uavs[{i}].initial_position_m",
                                    "outside service area")
        self.channel.validate()
        self.tasks.validate()
        self.weights.validate()
        self.solver.validate()
        return self

    # -- positions as arrays, used all over the solvers --

    def user_positions(self) -> np.ndarray:
        return np.array([u.position_m for u in self.users], dtype=float)

    def uav_positions(self) -> np.ndarray:
        return np.array([m.initial_position_m for m in self.uavs], dtype=float)

    def to_json(self) -> str:
        return json.dumps(_scenario_to_dict(self), sort_keys=True,
                          separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "Scenario":
        return _scenario_from_dict(json.loads(text)).validate()


class TaskSpec:
    """One task: bits to process, cycles per bit, and a completion deadline."""

    __slots__ = ("size_bits", "intensity", "deadline_s")

    def __init__(self, size_bits, intensity, deadline_s):
        self.size_bits = size_bits
        self.intensity = intensity
        self.deadline_s = deadline_s

    @property
    def cycles(self) -> float:
        return self.size_bits * self.intensity

    def __repr__(self):
        return (f"TaskSpec(size_bits={self.size_bits!r}, "
                f"intensity={self.intensity!r}, deadline_s={self.deadline_s!r})")


class TaskSchedule:
    """Realized tasks for one run: size_bits is (U, N); intensity and
    deadline are per user (fixed across slots).  Arrays are read-only."""

    def __init__(self, size_bits, intensity, deadline_s, seed=None):
        self.size_bits = np.ascontiguousarray(size_bits, dtype=float)
        self.intensity = np.ascontiguousarray(intensity, dtype=float)
        self.deadline_s = np.ascontiguousarray(deadline_s, dtype=float)
        self.seed = seed
        if self.size_bits.ndim != 2:
            raise ValueError("size_bits must be (n_users, n_slots)")
        u = self.size_bits.shape[0]
        if self.intensity.shape != (u,) or self.deadline_s.shape != (u,):
            raise ValueError("intensity and deadline_s must be per-user vectors")
        if (self.size_bits < 0).any():
            raise ValueError("task sizes must be >= 0")
        if (self.intensity <= 0).any() or (self.deadline_s <= 0).any():
            raise ValueError("intensity and deadlines must be positive")
        for a in (self.size_bits, self.intensity, self.deadline_s):
            a.flags.writeable = False

    @property
    def n_users(self) -> int:
        return self.size_bits.shape[0]

    @property
    def n_slots(self) -> int:
        return self.size_bits.shape[1]

    @property
    def cycles(self) -> np.ndarray:
        """Per-task CPU cycles, shape (U, N)."""
        return self.size_bits * self.intensity[:, None]

    @property
    def total_bits(self) -> float:
        return float(self.size_bits.sum())

    def task(self, u, n) -> TaskSpec:
        return TaskSpec(float(self.size_bits[u, n]),
                        float(self.intensity[u]),
                        float(self.deadline_s[u]))


def generate_tasks(scenario: Scenario, seed: int) -> TaskSchedule:
    """Draw one task realization.  Same (scenario, seed) -> identical arrays.

    Draw order is fixed (intensity, deadline, arrivals, sizes) so adding a
    field later cannot silently shift existing streams.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    u, n = scenario.n_users, scenario.time.n_slots
    p = scenario.tasks
    intensity = rng.uniform(*p.intensity_range, size=u)
    deadline = rng.uniform(*p.deadline_range_s, size=u)
    arrived = rng.random(size=(u, n)) < p.arrival_prob
    size = rng.uniform(*p.size_bits_range, size=(u, n)) * arrived
    # degenerate ranges (lo == hi) should still give exactly lo
    if p.intensity_range[0] == p.intensity_range[1]:
        intensity = np.full(u, p.intensity_range[0])
    if p.deadline_range_s[0] == p.deadline_range_s[1]:
        deadline = np.full(u, p.deadline_range_s[0])
    return TaskSchedule(size, intensity, deadline, seed=seed)


def default_uav_layout(count: int, area_m=(2500.0, 3000.0)) -> list:
    """Deterministic start positions for a fleet of `count` UAVs.

    Two UAVs get the reference deployment; larger fleets fall on a
    two-column grid with generous margins so initial loops stay inside
    the area and apart from each other.
    """
    w, h = area_m
    if count == 1:
        return [(w / 2.0, h / 2.0)]
    if count == 2:
        return [(0.32 * w, 0.40 * h), (0.80 * w, 1.0 * h / 3.0)]
    cols = 2
    rows = math.ceil(count / cols)
    xs = [0.32 * w, 0.68 * w]
    ys = np.linspace(0.25 * h, 0.75 * h, rows)
    out = []
    for i in range(count):
        out.append((float(xs[i % cols]), float(ys[i // cols])))
    return out


def default_user_layout(count: int, area_m=(2500.0, 3000.0), seed=0) -> list:
    """Uniform random user drops, deterministic in `seed`."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(7,)))
    pts = rng.uniform([0.0, 0.0], list(area_m), size=(count, 2))
    return [tuple(map(float, p)) for p in pts]


# ---------------------------------------------------------------------------
# config loading

_TOP_KEYS = {"time", "area", "users", "uavs", "channel", "tasks", "weights",
             "solver"}


def load_scenario(source) -> Scenario:
    """Build a validated Scenario from TOML text, a TOML file path, or a dict.

    Unknown keys are rejected: a typo should fail loudly, not silently run
    with a default.
    """
    if isinstance(source, dict):
        raw = source
    else:
        text = str(source)
        if "\n" not in text and not text.lstrip().startswith("["):
            with open(text, "rb") as fh:
                raw = tomllib.load(fh)
        else:
            raw = tomllib.loads(text)
    return _scenario_from_config(raw).validate()


def _reject_unknown(section, mapping, allowed):
    extra = set(mapping) - set(allowed)
    if extra:
        raise ScenarioError(f"{section}.{sorted(extra)[0]}", "unknown key")


def _build(section, mapping, cls, renames=None):
    renames = renames or {}
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        name = renames.get(key, key)
        if name not in fields:
            raise ScenarioError(f"{section}.{key}", "unknown key")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ScenarioError(section, str(exc))


def _scenario_from_config(raw: dict) -> Scenario:
    _reject_unknown("config", raw, _TOP_KEYS)
    time = _build("time", raw.get("time", {}), TimeGrid)

    area_raw = raw.get("area", {})
    _reject_unknown("area", area_raw, {"width_m", "height_m"})
    area = (float(area_raw.get("width_m", 2500.0)),
            float(area_raw.get("height_m", 3000.0)))

    users_raw = dict(raw.get("users", {}))
    _reject_unknown("users", users_raw,
                    {"count", "positions_m", "placement_seed", "cpu_hz",
                     "tx_power_w", "switch_cap_coeff"})
    count = int(users_raw.pop("count", 8))
    positions = users_raw.pop("positions_m", None)
    placement_seed = int(users_raw.pop("placement_seed", 0))
    if positions is None:
        positions = default_user_layout(count, area, seed=placement_seed)
    elif len(positions) != count and "count" in raw.get("users", {}):
        raise ScenarioError("users.positions_m",
                            f"got {len(positions)} positions for count={count}")
    users = tuple(
        _build("users", {"position_m": tuple(p), **users_raw}, UserSpec)
        for p in positions)

    uavs_raw = dict(raw.get("uavs", {}))
    _reject_unknown("uavs", uavs_raw,
                    {"count", "positions_m", "propulsion", "altitude_m",
                     "v_min_mps", "v_max_mps", "a_max_mps2",
                     "min_separation_m", "cpu_max_hz", "switch_cap_coeff"})
    m_count = int(uavs_raw.pop("count", 2))
    m_positions = uavs_raw.pop("positions_m", None)
    if m_positions is None:
        m_positions = default_uav_layout(m_count, area)
    prop = _build("uavs.propulsion", uavs_raw.pop("propulsion", {}),
                  PropulsionParams)
    uavs = tuple(
        _build("uavs", {"initial_position_m": tuple(p), "propulsion": prop,
                        **uavs_raw}, UavSpec)
        for p in m_positions)

    channel = _build("channel", raw.get("channel", {}), ChannelParams)
    tasks = _build("tasks", raw.get("tasks", {}), TaskGenParams)
    weights = _build("weights", raw.get("weights", {}), ObjectiveWeights)
    solver = _build("solver", raw.get("solver", {}), SolverParams)
    return Scenario(time=time, area_m=area, users=users, uavs=uavs,
                    channel=channel, tasks=tasks, weights=weights,
                    solver=solver)


# ---------------------------------------------------------------------------
# json round-trip

def _scenario_to_dict(s: Scenario) -> dict:
    def plain(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: plain(getattr(obj, f.name))
                    for f in dataclasses.fields(obj)}
        if isinstance(obj, Normalizers):
            return {"delay_s": obj.delay_s, "energy_j": obj.energy_j,
                    "bits": obj.bits}
        if isinstance(obj, tuple):
            return [plain(x) for x in obj]
        return obj

    return plain(s)


def _scenario_from_dict(d: dict) -> Scenario:
    norm = d["weights"].get("normalizers")
    weights = ObjectiveWeights(
        w_delay=d["weights"]["w_delay"],
        w_energy=d["weights"]["w_energy"],
        w_offload=d["weights"]["w_offload"],
        normalizers=Normalizers(**norm) if norm else None)
    prop_by_uav = [PropulsionParams(**m.pop("propulsion")) for m in
                   [dict(m) for m in d["uavs"]]]
    uavs = []
    for m, prop in zip(d["uavs"], prop_by_uav):
        m = dict(m)
        m.pop("propulsion")
        m["initial_position_m"] = tuple(m["initial_position_m"])
        uavs.append(UavSpec(propulsion=prop, **m))
    users = []
    for u in d["users"]:
        u = dict(u)
        u["position_m"] = tuple(u["position_m"])
        users.append(UserSpec(**u))
    tasks_d = dict(d["tasks"])
    for key in ("size_bits_range", "intensity_range", "deadline_range_s"):
        tasks_d[key] = tuple(tasks_d[key])
    return Scenario(
        time=TimeGrid(**d["time"]),
        area_m=tuple(d["area_m"]),
        users=tuple(users),
        uavs=tuple(uavs),
        channel=ChannelParams(**d["channel"]),
        tasks=TaskGenParams(**tasks_d),
        weights=weights,
        solver=SolverParams(**d["solver"]),
    )
