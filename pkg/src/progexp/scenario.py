"""Scenario configuration: a YAML file of nested blocks, validated fail-closed.

Every validation error names the offending line of the file.  See
``docs/config.md`` for the full schema.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Tuple

import yaml

from .models import (
    BridgeLognormal,
    CoxDeterministic,
    Independent,
    IndependentDriverFamily,
    MarkedBridge,
)
from .single import linear_martingale


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        loc = f"{source}:{line}" if line is not None else source
        super().__init__(f"{loc}: {message}")


class _Block(dict):
    """Mapping that remembers the line of each key (1-based)."""

    line: int = 0
    key_lines: dict


class _Seq(list):
    line: int = 0


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _Block()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", key_node.start_mark.line + 1)
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_lines[key] = key_node.start_mark.line + 1
    return out


def _construct_sequence(loader, node):
    out = _Seq(loader.construct_object(child, deep=True) for child in node.value)
    out.line = node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)

MODEL_KEYS = {
    "independent": {"kind", "rate"},
    "cox_deterministic": {"kind", "rate", "breaks"},
    "bridge_lognormal": {"kind", "T0"},
    "marked_bridge": {"kind", "T0", "mark"},
    "independent_driver_family": {"kind", "T0", "n", "marks"},
}
BRIDGE_KINDS = {"bridge_lognormal", "marked_bridge", "independent_driver_family"}
TOP_KEYS = {"id", "grid", "ensemble", "model", "martingale", "tests", "output"}
BLOCK_KEYS = {
    "grid": {"T", "K"},
    "ensemble": {"n_paths", "seed", "stream_offset"},
    "martingale": {"integrand", "component", "mode", "plug", "bracket"},
    "output": {"dir", "sample_paths"},
}
MIN_PATHS = 100


@dataclass
class Scenario:
    id: str
    T: float
    K: int
    n_paths: int
    seed: int
    model_block: dict
    stream_offset: int = 0
    integrand: Tuple[float, float] = (1.0, 0.0)
    component: int = 0
    mode: str = "plain"
    plug: str = "bridge-slope"
    bracket: str = "covariation"
    tests: List[str] = field(default_factory=list)
    output_dir: Path = Path("out")
    sample_paths: int = 0
    source: str = "<config>"

    @property
    def kind(self) -> str:
        return self.model_block["kind"]

    @property
    def is_family(self) -> bool:
        return self.kind == "independent_driver_family"

    def build_model(self):
        b = self.model_block
        kind = b["kind"]
        if kind == "independent":
            return Independent(rate=float(b.get("rate", 1.0)))
        if kind == "cox_deterministic":
            return CoxDeterministic(b.get("rate", 1.0), b.get("breaks", ()))
        if kind == "bridge_lognormal":
            return BridgeLognormal(float(b.get("T0", 2.0)))
        if kind == "marked_bridge":
            return MarkedBridge(float(b.get("T0", 2.0)), b.get("mark", "rademacher"))
        return IndependentDriverFamily(int(b.get("n", 2)), float(b.get("T0", 2.0)),
                                       b.get("marks"))

    def build_martingale(self):
        a, b = self.integrand
        return linear_martingale(a, b, self.component)

    @property
    def driver_dim(self) -> int:
        model = self.build_model()
        return max(1, model.dim, self.component + 1)


def _line(block, key=None):
    if isinstance(block, _Block) and key is not None and key in block.key_lines:
        return block.key_lines[key]
    return getattr(block, "line", None)


def _require_block(doc, key, src):
    if key not in doc:
        raise ConfigError(f"missing required block {key!r}", _line(doc), src)
    block = doc[key]
    if not isinstance(block, dict):
        raise ConfigError(f"{key!r} must be a mapping", _line(doc, key), src)
    return block


def _check_keys(block, allowed, where, src):
    for key in block:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}", _line(block, key), src)


def _number(block, key, src, kind=float, default=None, minimum=None, strict=False):
    if key not in block:
        if default is None:
            raise ConfigError(f"missing required key {key!r}", _line(block), src)
        return default
    value = block[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key!r} must be a number, got {value!r}", _line(block, key), src)
    if kind is int and int(value) != value:
        raise ConfigError(f"{key!r} must be an integer, got {value!r}", _line(block, key), src)
    value = kind(value)
    if minimum is not None and (value <= minimum if strict else value < minimum):
        op = ">" if strict else ">="
        raise ConfigError(f"{key!r} must be {op} {minimum}, got {value}", _line(block, key), src)
    return value


def parse_scenario(text: str, source: str = "<config>", base_dir: Optional[Path] = None) -> Scenario:
    """Parse and validate a scenario; raises :class:`ConfigError`."""
    from .checks import REGISTRY

    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.line, source) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    _check_keys(doc, TOP_KEYS, "top level", source)
    if "id" not in doc or not isinstance(doc["id"], str) or not doc["id"]:
        raise ConfigError("'id' must be a non-empty string", _line(doc, "id"), source)

    grid = _require_block(doc, "grid", source)
    _check_keys(grid, BLOCK_KEYS["grid"], "grid", source)
    T = _number(grid, "T", source, minimum=0.0, strict=True)
    K = _number(grid, "K", source, kind=int, minimum=2)

    ens = _require_block(doc, "ensemble", source)
    _check_keys(ens, BLOCK_KEYS["ensemble"], "ensemble", source)
    n_paths = _number(ens, "n_paths", source, kind=int, minimum=MIN_PATHS)
    seed = _number(ens, "seed", source, kind=int, minimum=0)
    offset = _number(ens, "stream_offset", source, kind=int, default=0, minimum=0)

    model = _require_block(doc, "model", source)
    kind = model.get("kind")
    if kind not in MODEL_KEYS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KEYS)}",
                          _line(model, "kind"), source)
    _check_keys(model, MODEL_KEYS[kind], f"model ({kind})", source)
    if kind in BRIDGE_KINDS:
        T0 = _number(model, "T0", source, default=2.0, minimum=0.0, strict=True)
        if T > 0.9 * T0 + 1e-12:
            raise ConfigError(f"horizon T={T} exceeds 0.9*T0={0.9 * T0} for {kind}",
                              _line(grid, "T"), source)
    if kind == "independent_driver_family":
        n = _number(model, "n", source, kind=int, default=2, minimum=1)
        if n > 10:
            raise ConfigError(f"'n' must be <= 10, got {n}", _line(model, "n"), source)
        if model.get("marks") not in (None, "rademacher"):
            raise ConfigError("'marks' must be 'rademacher' or omitted", _line(model, "marks"), source)
    if kind == "marked_bridge" and model.get("mark", "rademacher") not in ("rademacher", "sign"):
        raise ConfigError("'mark' must be 'rademacher' or 'sign'", _line(model, "mark"), source)
    if kind in ("independent", "cox_deterministic") and "rate" in model:
        rates = model["rate"] if isinstance(model["rate"], list) else [model["rate"]]
        if not all(isinstance(r, (int, float)) and not isinstance(r, bool) and r > 0 for r in rates):
            raise ConfigError("'rate' must be positive", _line(model, "rate"), source)
    try:
        Scenario("probe", T, K, n_paths, seed, dict(model)).build_model()
    except ValueError as exc:
        raise ConfigError(f"invalid model: {exc}", _line(model), source) from None

    mart = doc.get("martingale", _Block())
    if not isinstance(mart, dict):
        raise ConfigError("'martingale' must be a mapping", _line(doc, "martingale"), source)
    _check_keys(mart, BLOCK_KEYS["martingale"], "martingale", source)
    integrand = mart.get("integrand", [1.0, 0.0])
    if (not isinstance(integrand, list) or len(integrand) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in integrand)):
        raise ConfigError("'integrand' must be [a, b] for m(s) = a + b*s",
                          _line(mart, "integrand"), source)
    component = _number(mart, "component", source, kind=int, default=0, minimum=0)
    mode = mart.get("mode", "plain")
    if mode not in ("plain", "marked", "plugged"):
        raise ConfigError(f"unknown mode {mode!r}", _line(mart, "mode"), source)
    if mode == "marked" and kind != "marked_bridge":
        raise ConfigError("marked mode needs model kind 'marked_bridge'", _line(mart, "mode"), source)
    plug = mart.get("plug", "bridge-slope")
    if plug not in ("zero", "bridge-slope"):
        raise ConfigError(f"unknown plug {plug!r}", _line(mart, "plug"), source)
    bracket = mart.get("bracket", "covariation")
    if bracket not in ("covariation", "analytic"):
        raise ConfigError(f"unknown bracket {bracket!r}", _line(mart, "bracket"), source)

    tests = doc.get("tests", [])
    if not isinstance(tests, list) or not tests:
        raise ConfigError("'tests' must be a non-empty list of check names", _line(doc, "tests"), source)
    for name in tests:
        if name not in REGISTRY:
            raise ConfigError(f"unknown check {name!r}", _line(doc, "tests"), source)
        if kind not in REGISTRY[name].kinds:
            raise ConfigError(f"check {name!r} does not apply to model kind {kind!r}",
                              _line(doc, "tests"), source)

    out = doc.get("output", _Block())
    if not isinstance(out, dict):
        raise ConfigError("'output' must be a mapping", _line(doc, "output"), source)
    _check_keys(out, BLOCK_KEYS["output"], "output", source)
    out_dir = Path(out.get("dir", f"out/{doc['id']}"))
    if base_dir is not None and not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    sample_paths = _number(out, "sample_paths", source, kind=int, default=0, minimum=0)

    sc = Scenario(
        id=doc["id"], T=T, K=K, n_paths=n_paths, seed=seed, model_block=dict(model),
        stream_offset=offset, integrand=(float(integrand[0]), float(integrand[1])),
        component=component, mode=mode, plug=plug, bracket=bracket, tests=list(tests),
        output_dir=out_dir, sample_paths=min(sample_paths, n_paths), source=source,
    )
    for name in tests:
        problem = REGISTRY[name].requires(sc)
        if problem:
            raise ConfigError(f"check {name!r}: {problem}", _line(doc, "tests"), source)
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_scenario(text, str(path), path.parent)
