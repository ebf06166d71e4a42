"""INI run configuration: parsing, validation, and defaults.

A run file describes either a synthetic dataset (a ``[scene]`` section
plus two scorer sections) or an on-disk one (a ``[data]`` section), along
with projection grids, head training knobs, and evaluation settings.
Validation happens up front so commands fail before touching the output
directory.

Scene primitives use one line per primitive::

    primitive0 = annulus class=0 weight=0.3 r=2:40 z=-1.9:-1.6
    primitive1 = box class=3 weight=0.1 size=4x2x1.6 r=6:30 z=-1.7 count=6
    primitive2 = pole class=6 weight=0.05 radius=0.15 z=-1.7:2.5 r=5:35 count=8

Ranges are ``lo:hi``, box sizes ``XxYxZ``. Scorer confusions are comma
separated ``src>dst:prob`` entries and range curves ``radius:extra``
knots.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import (AugmentRanges, BoxCluster, GroundAnnulus, Primitive,
                     ScorerProfile, VerticalPole)
from .errors import ConfigError
from .pointhead import HeadTrainConfig
from .projection import BEVConfig, RVConfig


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, already validated."""

    seed: int
    num_classes: int
    num_scans: int
    points_per_scan: int
    tau: float
    strata_edges: tuple[float, ...]
    histogram_bins: int
    primitives: tuple[Primitive, ...] | None
    scorer_a: ScorerProfile | None
    scorer_b: ScorerProfile | None
    data_dir: Path | None
    remap_path: Path | None
    rv: RVConfig
    bev: BEVConfig
    head: HeadTrainConfig
    augment: AugmentRanges
    raw_text: str

    @property
    def synthetic(self) -> bool:
        return self.primitives is not None


def _fail(section: str, key: str, detail: str) -> ConfigError:
    return ConfigError(f"[{section}] {key}: {detail}")


def _get(parser, section, key, cast, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise _fail(section, key, "missing required key")
        return default
    raw = parser.get(section, key)
    try:
        return cast(raw)
    except ConfigError:
        raise
    except Exception as exc:
        raise _fail(section, key, f"cannot parse {raw!r} ({exc})") from None


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.split(",") if tok.strip())


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.split(",") if tok.strip())


def _range(raw: str) -> tuple[float, float]:
    lo, hi = raw.split(":")
    return float(lo), float(hi)


def _curve(raw: str) -> tuple[tuple[float, float], ...]:
    out = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        r, e = tok.split(":")
        out.append((float(r), float(e)))
    return tuple(out)


def _confusions(raw: str) -> tuple[tuple[int, int, float], ...]:
    out = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        pair, prob = tok.split(":")
        src, dst = pair.split(">")
        out.append((int(src), int(dst), float(prob)))
    return tuple(out)


def _parse_primitive(section: str, key: str, raw: str) -> Primitive:
    tokens = raw.split()
    if not tokens:
        raise _fail(section, key, "empty primitive line")
    kind, kv = tokens[0], {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise _fail(section, key, f"expected key=value, got {tok!r}")
        name, val = tok.split("=", 1)
        if name in kv:
            raise _fail(section, key, f"duplicate field {name!r}")
        kv[name] = val
    try:
        if kind == "annulus":
            r = _range(kv.pop("r"))
            z = _range(kv.pop("z"))
            prim: Primitive = GroundAnnulus(
                class_id=int(kv.pop("class")), weight=float(kv.pop("weight")),
                r_min=r[0], r_max=r[1], z_min=z[0], z_max=z[1],
                intensity=_range(kv.pop("intensity", "0.05:0.95")),
            )
        elif kind == "box":
            sx, sy, sz = (float(v) for v in kv.pop("size").split("x"))
            r = _range(kv.pop("r"))
            prim = BoxCluster(
                class_id=int(kv.pop("class")), weight=float(kv.pop("weight")),
                size=(sx, sy, sz), r_min=r[0], r_max=r[1],
                z_base=float(kv.pop("z")), count=int(kv.pop("count", "1")),
                intensity=_range(kv.pop("intensity", "0.05:0.95")),
            )
        elif kind == "pole":
            r = _range(kv.pop("r"))
            z = _range(kv.pop("z"))
            prim = VerticalPole(
                class_id=int(kv.pop("class")), weight=float(kv.pop("weight")),
                radius=float(kv.pop("radius")), z_min=z[0], z_max=z[1],
                r_min=r[0], r_max=r[1], count=int(kv.pop("count", "1")),
                intensity=_range(kv.pop("intensity", "0.05:0.95")),
            )
        else:
            raise _fail(section, key, f"unknown primitive kind {kind!r}")
    except ConfigError:
        raise
    except KeyError as exc:
        raise _fail(section, key, f"missing field {exc.args[0]!r}") from None
    except Exception as exc:
        raise _fail(section, key, str(exc)) from None
    if kv:
        raise _fail(section, key, f"unknown fields {sorted(kv)}")
    return prim


def _parse_scorer(parser, section: str) -> ScorerProfile:
    return ScorerProfile(
        base_accuracy=_get(parser, section, "base_accuracy", float, required=True),
        temperature=_get(parser, section, "temperature", float, 0.25),
        error_temperature=_get(parser, section, "error_temperature", float, None),
        range_curve=_get(parser, section, "range_curve", _curve, ()),
        confusions=_get(parser, section, "confusions", _confusions, ()),
        temperature_jitter=_get(parser, section, "temperature_jitter", float, 0.0),
    )


def parse_config(text: str) -> RunConfig:
    """Parse and validate an INI run description."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    if not parser.has_section("run"):
        raise ConfigError("missing required section [run]")

    seed = _get(parser, "run", "seed", int, required=True)
    num_classes = _get(parser, "run", "num_classes", int, required=True)
    if num_classes < 1:
        raise _fail("run", "num_classes", "must be positive")
    tau = _get(parser, "run", "tau", float, 0.85)
    if not 0.0 <= tau <= 1.0:
        raise _fail("run", "tau", "must lie in [0, 1]")
    hist_bins = _get(parser, "run", "histogram_bins", int, 50)
    if hist_bins < 1:
        raise _fail("run", "histogram_bins", "must be positive")
    strata = _get(parser, "run", "strata_edges", _float_list, (0.0, 10.0, 20.0, 30.0, 45.0))
    if len(strata) < 2 or any(b <= a for a, b in zip(strata, strata[1:])):
        raise _fail("run", "strata_edges", "need at least two increasing edges")

    has_scene = parser.has_section("scene")
    has_data = parser.has_section("data")
    if has_scene == has_data:
        raise ConfigError("exactly one of [scene] or [data] must be present")

    primitives = scorer_a = scorer_b = None
    data_dir = remap_path = None
    if has_scene:
        num_scans = _get(parser, "run", "num_scans", int, required=True)
        points = _get(parser, "run", "points_per_scan", int, required=True)
        if num_scans < 1 or points < 1:
            raise _fail("run", "num_scans/points_per_scan", "must be positive")
        prims = []
        for key in parser.options("scene"):
            if not key.startswith("primitive"):
                raise _fail("scene", key, "unknown key (expected primitiveN)")
            prims.append(_parse_primitive("scene", key, parser.get("scene", key)))
        if not prims:
            raise ConfigError("[scene] lists no primitives")
        primitives = tuple(prims)
        for prim in primitives:
            try:
                prim.validate()
            except ValueError as exc:
                raise ConfigError(f"[scene] {exc}") from None
            if not 0 <= prim.class_id < num_classes:
                raise ConfigError(
                    f"[scene] primitive class {prim.class_id} outside [0, {num_classes})"
                )
        for name in ("scorer_a", "scorer_b"):
            if not parser.has_section(name):
                raise ConfigError(f"synthetic runs need a [{name}] section")
        scorer_a = _parse_scorer(parser, "scorer_a")
        scorer_b = _parse_scorer(parser, "scorer_b")
        for name, prof in (("scorer_a", scorer_a), ("scorer_b", scorer_b)):
            try:
                prof.validate(num_classes)
            except ValueError as exc:
                raise ConfigError(f"[{name}] {exc}") from None
    else:
        data_dir = Path(_get(parser, "data", "dir", str, required=True))
        remap_path = Path(_get(parser, "data", "remap", str, required=True))
        num_scans = _get(parser, "run", "num_scans", int, 0)
        points = _get(parser, "run", "points_per_scan", int, 0)

    rv = RVConfig.from_degrees(
        height=_get(parser, "rv", "height", int, 64),
        width=_get(parser, "rv", "width", int, 2048),
        mode=_get(parser, "rv", "mode", str, "spherical"),
        fov_up=_get(parser, "rv", "fov_up_deg", float, 3.0),
        fov_down=_get(parser, "rv", "fov_down_deg", float, -25.0),
        z_min=_get(parser, "rv", "z_min", float, -3.0),
        z_max=_get(parser, "rv", "z_max", float, 2.0),
    )
    try:
        rv.validate()
    except ValueError as exc:
        raise ConfigError(f"[rv] {exc}") from None

    bev = BEVConfig(
        r_bins=_get(parser, "bev", "r_bins", int, 128),
        theta_bins=_get(parser, "bev", "theta_bins", int, 256),
        r_max=_get(parser, "bev", "r_max", float, 50.0),
        z_min=_get(parser, "bev", "z_min", float, -3.0),
        z_max=_get(parser, "bev", "z_max", float, 2.0),
    )
    try:
        bev.validate()
    except ValueError as exc:
        raise ConfigError(f"[bev] {exc}") from None

    head = HeadTrainConfig(
        tau=tau,
        num_neighbors=_get(parser, "head", "num_neighbors", int, 15),
        epochs=_get(parser, "head", "epochs", int, 20),
        batch_size=_get(parser, "head", "batch_size", int, 256),
        lr_max=_get(parser, "head", "lr_max", float, 0.05),
        momentum=_get(parser, "head", "momentum", float, 0.9),
        warmup_frac=_get(parser, "head", "warmup_frac", float, 0.3),
        start_div=_get(parser, "head", "start_div", float, 25.0),
        end_div=_get(parser, "head", "end_div", float, 1e4),
        hidden=_get(parser, "head", "hidden", _int_list, (64, 64, 64)),
        class_weighting=_get(parser, "head", "class_weighting", str, "sqrt_inv"),
        standardize=_get(parser, "head", "standardize", _bool, False),
        seed=seed,
    )
    try:
        head.validate()
    except ValueError as exc:
        raise ConfigError(f"[head] {exc}") from None

    if parser.has_section("augment"):
        augment = AugmentRanges(
            scale=_get(parser, "augment", "scale", _range, (0.95, 1.05)),
            flip_prob=_get(parser, "augment", "flip_prob", float, 0.5),
            yaw=_get(parser, "augment", "yaw", _range, (-np.pi, np.pi)),
            jitter_sigma=_get(parser, "augment", "jitter_sigma", float, 0.0),
        )
        if not 0.0 <= augment.flip_prob <= 1.0:
            raise _fail("augment", "flip_prob", "must lie in [0, 1]")
        if augment.jitter_sigma < 0.0:
            raise _fail("augment", "jitter_sigma", "must be non-negative")
    else:
        augment = AugmentRanges()

    known = {"run", "scene", "data", "scorer_a", "scorer_b", "rv", "bev", "head", "augment"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(f"unknown sections {sorted(extra)}")

    return RunConfig(
        seed=seed, num_classes=num_classes, num_scans=num_scans,
        points_per_scan=points, tau=tau, strata_edges=tuple(strata),
        histogram_bins=hist_bins, primitives=primitives, scorer_a=scorer_a,
        scorer_b=scorer_b, data_dir=data_dir, remap_path=remap_path, rv=rv,
        bev=bev, head=head, augment=augment, raw_text=text,
    )


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config(p.read_text())
