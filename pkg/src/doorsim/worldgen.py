"""Door-world sampling and serialization.

A world is one fully-specified door: panel geometry, masses, joint
coefficients, knob type, hinge side, and opening direction.  Every numeric
field is drawn uniformly from its published randomization interval; the
damper/spring/frictionloss entries are stored as the raw dimensionless
scaling factors and converted to SI coefficients by the dynamics layer.

Sampling is a pure function of (master_seed, index): the per-world seed is
splitmix64(master_seed, index), which then drives an xoshiro256++ stream in
a fixed field order (documented in sample_world).  World files are UTF-8
JSON with floats printed at 17 significant digits, so read(write(w)) == w
exactly.
"""

import json
import math
import os
from dataclasses import dataclass, fields, replace

from .rng import Xoshiro256pp, splitmix64

SCHEMA_VERSION = "doorgym_world_v1"
WORLDSET_SCHEMA_VERSION = "doorgym_worldset_v1"

KNOB_TYPES = ("pull", "lever", "round")
OPEN_DIRECTIONS = ("push", "pull")
HINGE_SIDES = ("left", "right")

# Uniform sampling intervals (closed on the left, open on the right).
# knob_rot_range is sampled in degrees and stored in radians; knob mass is
# sampled raw in [4, 7] and stored in kg as raw/10 (hectogram reading of the
# source table's unit).
FIELD_RANGES = {
    "wall_offset_y_m": (-0.2, 0.2),
    "frame_damper": (0.1, 0.2),
    "frame_spring": (0.1, 0.2),
    "frame_frictionloss": (0.0, 1.0),
    "door_height_m": (2.0, 2.5),
    "door_width_m": (0.8, 1.2),
    "door_thickness_m": (0.02, 0.03),
    "knob_height_m": (0.95, 1.05),
    "knob_edge_ratio": (0.10, 0.20),
    "door_mass_kg": (22.4, 76.5),
    "knob_damper": (0.1, 0.2),
    "knob_spring": (0.1, 0.15),
    "knob_frictionloss": (0.0, 1.0),
    "knob_rot_range_rad": (math.radians(75.0), math.radians(80.0)),
    "knob_mass_raw": (4.0, 7.0),
    "knob_mass_kg": (0.4, 0.7),
    "knob_surface_friction": (0.5, 1.0),
    "robot_joint_damping": (0.1, 0.3),
}


class WorldFormatError(Exception):
    """Base class for world-file problems."""


class WorldSchemaError(WorldFormatError):
    """Missing or malformed field; message names the offending field."""


class WorldVersionError(WorldFormatError):
    """schema_version does not match this implementation."""


class WorldRangeError(WorldFormatError):
    """A numeric field lies outside its randomization interval."""


@dataclass(frozen=True)
class WorldSpec:
    """One sampled door world (all lengths meters, masses kg, angles radians)."""

    world_id: str
    schema_version: str
    knob_type: str        # pull | lever | round
    open_direction: str   # push | pull
    hinge_side: str       # left | right
    door_height_m: float
    door_width_m: float
    door_thickness_m: float
    door_mass_kg: float
    knob_mass_kg: float
    knob_mass_raw: float  # value as sampled from the source table before unit fix
    knob_height_m: float
    knob_edge_ratio: float
    wall_offset_y_m: float
    frame_damper: float
    frame_spring: float
    frame_frictionloss: float
    knob_damper: float
    knob_spring: float
    knob_frictionloss: float
    knob_rot_range_rad: float
    knob_surface_friction: float
    robot_joint_damping: float
    rng_seed: int


# JSON field order is the dataclass field order; keep it stable.
_FIELD_NAMES = [f.name for f in fields(WorldSpec)]
_FLOAT_FIELDS = [n for n in _FIELD_NAMES if n in FIELD_RANGES]


def world_seed(master_seed: int, index: int) -> int:
    """Per-world 64-bit seed derived from (master_seed, index)."""
    return splitmix64(master_seed, index)


def sample_world(master_seed: int, index: int, knob_type: str, open_direction: str) -> WorldSpec:
    """Sample one world; identical inputs always yield an identical spec.

    Draw order (one uniform each, fixed for reproducibility): wall offset,
    frame damper/spring/frictionloss, door height/width/thickness, knob
    height, knob edge ratio, door mass, hinge side, knob damper/spring/
    frictionloss, knob rotation range (degrees), knob mass (raw), knob
    surface friction, robot joint damping.
    """
    if knob_type not in KNOB_TYPES:
        raise ValueError(f"unknown knob_type {knob_type!r}, expected one of {KNOB_TYPES}")
    if open_direction not in OPEN_DIRECTIONS:
        raise ValueError(f"unknown open_direction {open_direction!r}, expected one of {OPEN_DIRECTIONS}")

    seed = world_seed(master_seed, index)
    rng = Xoshiro256pp(seed)

    def draw(name):
        lo, hi = FIELD_RANGES[name]
        return rng.uniform(lo, hi)

    wall_offset = draw("wall_offset_y_m")
    frame_damper = draw("frame_damper")
    frame_spring = draw("frame_spring")
    frame_fric = draw("frame_frictionloss")
    door_h = draw("door_height_m")
    door_w = draw("door_width_m")
    door_t = draw("door_thickness_m")
    knob_h = draw("knob_height_m")
    knob_ratio = draw("knob_edge_ratio")
    door_m = draw("door_mass_kg")
    hinge = HINGE_SIDES[0] if rng.uniform() < 0.5 else HINGE_SIDES[1]
    knob_damper = draw("knob_damper")
    knob_spring = draw("knob_spring")
    knob_fric = draw("knob_frictionloss")
    knob_rot_deg = rng.uniform(75.0, 80.0)
    knob_mass_raw = draw("knob_mass_raw")
    knob_friction = draw("knob_surface_friction")
    robot_damp = draw("robot_joint_damping")

    return WorldSpec(
        world_id=f"w{master_seed & ((1 << 64) - 1):016x}-{index:06d}",
        schema_version=SCHEMA_VERSION,
        knob_type=knob_type,
        open_direction=open_direction,
        hinge_side=hinge,
        door_height_m=door_h,
        door_width_m=door_w,
        door_thickness_m=door_t,
        door_mass_kg=door_m,
        knob_mass_kg=knob_mass_raw / 10.0,
        knob_mass_raw=knob_mass_raw,
        knob_height_m=knob_h,
        knob_edge_ratio=knob_ratio,
        wall_offset_y_m=wall_offset,
        frame_damper=frame_damper,
        frame_spring=frame_spring,
        frame_frictionloss=frame_fric,
        knob_damper=knob_damper,
        knob_spring=knob_spring,
        knob_frictionloss=knob_fric,
        knob_rot_range_rad=math.radians(knob_rot_deg),
        knob_surface_friction=knob_friction,
        robot_joint_damping=robot_damp,
        rng_seed=seed,
    )


def sample_worlds(master_seed: int, n: int, knob_type: str, open_direction: str) -> list[WorldSpec]:
    """n worlds at indices 0..n-1 (no disk I/O)."""
    return [sample_world(master_seed, i, knob_type, open_direction) for i in range(n)]


def validate_world(spec: WorldSpec) -> None:
    """Raise WorldSchemaError / WorldRangeError if the spec is malformed."""
    if spec.schema_version != SCHEMA_VERSION:
        raise WorldVersionError(
            f"schema_version {spec.schema_version!r} != {SCHEMA_VERSION!r}")
    if spec.knob_type not in KNOB_TYPES:
        raise WorldSchemaError(f"knob_type: invalid value {spec.knob_type!r}")
    if spec.open_direction not in OPEN_DIRECTIONS:
        raise WorldSchemaError(f"open_direction: invalid value {spec.open_direction!r}")
    if spec.hinge_side not in HINGE_SIDES:
        raise WorldSchemaError(f"hinge_side: invalid value {spec.hinge_side!r}")
    for name in _FLOAT_FIELDS:
        value = getattr(spec, name)
        if not isinstance(value, float) or not math.isfinite(value):
            raise WorldSchemaError(f"{name}: not a finite number ({value!r})")
        lo, hi = FIELD_RANGES[name]
        if not (lo <= value <= hi):
            raise WorldRangeError(f"{name}: {value!r} outside [{lo!r}, {hi!r}]")
    if not isinstance(spec.rng_seed, int) or not (0 <= spec.rng_seed < (1 << 64)):
        raise WorldSchemaError(f"rng_seed: not a u64 ({spec.rng_seed!r})")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        # 17 significant digits: exact float64 round-trip, stable bytes.
        return format(value, ".17g")
    if isinstance(value, int):
        return str(value)
    return json.dumps(value)


def world_to_json(spec: WorldSpec) -> str:
    lines = [f'  "{name}": {_fmt(getattr(spec, name))}' for name in _FIELD_NAMES]
    return "{\n" + ",\n".join(lines) + "\n}\n"


def write_world(spec: WorldSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(world_to_json(spec))


def world_from_dict(raw: dict) -> WorldSpec:
    if not isinstance(raw, dict):
        raise WorldSchemaError("top-level value is not an object")
    version = raw.get("schema_version")
    if version is None:
        raise WorldSchemaError("schema_version: missing")
    if version != SCHEMA_VERSION:
        raise WorldVersionError(f"schema_version {version!r} != {SCHEMA_VERSION!r}")
    kwargs = {}
    for name in _FIELD_NAMES:
        if name not in raw:
            raise WorldSchemaError(f"{name}: missing")
        value = raw[name]
        if name in _FLOAT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise WorldSchemaError(f"{name}: expected number, got {value!r}")
            value = float(value)
        kwargs[name] = value
    spec = WorldSpec(**kwargs)
    validate_world(spec)
    return spec


def read_world(path: str) -> WorldSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise WorldSchemaError(f"{path}: not valid JSON ({exc})") from exc
    return world_from_dict(raw)


@dataclass(frozen=True)
class WorldSet:
    """Manifest-backed ordered collection of world files."""

    manifest_path: str
    master_seed: int
    files: tuple[str, ...]

    @property
    def count(self) -> int:
        return len(self.files)

    def load(self) -> list[WorldSpec]:
        base = os.path.dirname(self.manifest_path)
        return [read_world(os.path.join(base, f)) for f in self.files]


def generate_world_set(master_seed: int, n: int, knob_type: str, open_direction: str,
                       out_dir: str) -> WorldSet:
    """Write n world files plus manifest.json; deterministic in master_seed."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i in range(n):
        spec = sample_world(master_seed, i, knob_type, open_direction)
        name = f"{spec.world_id}.json"
        write_world(spec, os.path.join(out_dir, name))
        names.append(name)
    manifest = {
        "schema_version": WORLDSET_SCHEMA_VERSION,
        "master_seed": master_seed,
        "count": n,
        "files": names,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return WorldSet(manifest_path=manifest_path, master_seed=master_seed, files=tuple(names))


def load_world_set(path: str) -> WorldSet:
    """Load a manifest; path may be the manifest file or its directory."""
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise WorldSchemaError(f"{path}: not valid JSON ({exc})") from exc
    version = raw.get("schema_version")
    if version != WORLDSET_SCHEMA_VERSION:
        raise WorldVersionError(f"manifest schema_version {version!r} != {WORLDSET_SCHEMA_VERSION!r}")
    for key in ("master_seed", "count", "files"):
        if key not in raw:
            raise WorldSchemaError(f"{key}: missing from manifest")
    if len(raw["files"]) != raw["count"]:
        raise WorldSchemaError("files: length does not match count")
    return WorldSet(manifest_path=path, master_seed=raw["master_seed"], files=tuple(raw["files"]))


def with_overrides(spec: WorldSpec, **updates) -> WorldSpec:
    """Copy of spec with fields replaced (mainly for tests and demos)."""
    return replace(spec, **updates)
