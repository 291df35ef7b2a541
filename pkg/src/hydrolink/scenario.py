"""Scenario files: a strict, nested YAML schema describing one experiment.

A scenario bundles the grid, the source beam, the water channel, the
wavefront sensor, and the analysis to run. Parsing is total: any problem
produces a :class:`ScenarioError` carrying the offending location (line and
column for syntax, key path otherwise), unknown keys are rejected with a
spelling suggestion, and all defaults are applied explicitly so a parsed
scenario can be re-serialized and re-run bit-identically.
"""

from __future__ import annotations

import difflib
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .channel import ChannelConfig
from .field import Grid
from .shack_hartmann import LensletArray

#: Fixed default seed so default runs reproduce bit-identically.
DEFAULT_SEED = 1234

ANALYSIS_KINDS = ("wavefront", "qkd-pol", "qkd-oam", "images")
SOURCE_KINDS = ("gaussian", "lg", "petal")


class ScenarioError(ValueError):
    """A scenario document failed to parse or validate."""

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True)
class SchemaField:
    """One schema entry (name in the document, type, default, docs)."""

    name: str
    kind: type
    default: Any
    doc: str
    choices: tuple | None = None
    minimum: float | None = None
    maximum: float | None = None
    required: bool = False


_GRID = (
    SchemaField("n_samples", int, 256, "samples per grid side (even, >= 16)",
           minimum=16),
    SchemaField("spacing", float, 4.0e-5, "meters per sample", minimum=0.0),
)

_SOURCE = (
    SchemaField("kind", str, "gaussian", "beam family", choices=SOURCE_KINDS),
    SchemaField("waist", float, None, "beam waist in meters "
           "(default: grid extent / 16)", minimum=0.0),
    SchemaField("ell", int, 0, "azimuthal index for lg/petal sources"),
    SchemaField("p", int, 0, "radial index for lg sources", minimum=0),
    SchemaField("wavelength", float, 532e-9, "vacuum wavelength in meters",
           minimum=0.0),
)

_SCREENS = (
    SchemaField("kind", str, "none", "per-screen statistics",
           choices=("none", "modal", "kolmogorov")),
    SchemaField("sigma", float, 0.2, "modal: coefficient scale in radians; "
           "per-mode sigma_j = sigma * ((n_j + 1) / 2)^(-11/6) "
           "(synthetic default decay, tilt-dominated)", minimum=0.0),
    SchemaField("j_max", int, 15, "modal: highest mode index", minimum=2),
    SchemaField("sigmas", dict, None, "modal: explicit {j: sigma_radians} table "
           "overriding sigma/j_max"),
    SchemaField("aperture_radius", float, None, "modal: screen aperture radius in "
           "meters (default: 0.45 * grid extent)", minimum=0.0),
    SchemaField("r0", float, None, "kolmogorov: Fried parameter in meters",
           minimum=0.0),
    SchemaField("subharmonic_levels", int, 0, "kolmogorov: low-frequency "
           "completion levels (0 = plain FFT screen)", minimum=0),
)

_OCCLUSION = (
    SchemaField("rate", float, 0.0, "mean floating objects per frame (Poisson)",
           minimum=0.0),
    SchemaField("radius", float, None, "occluder radius in meters "
           "(default: grid extent / 10)", minimum=0.0),
    SchemaField("opacity", float, 1.0, "amplitude blocking fraction in [0, 1]",
           minimum=0.0, maximum=1.0),
)

_CHANNEL = (
    SchemaField("length", float, 5.5, "path length through water in meters",
           minimum=0.0),
    SchemaField("refractive_index", float, 1.33, "water refractive index",
           minimum=1.0),
    SchemaField("attenuation_db_per_m", float, 5.4,
           "bulk extinction (5.4 turbid river, 1.3 turbid coastal, "
           "0.13 pure water)", minimum=0.0),
    SchemaField("n_screens", int, 0, "number of turbulence screens", minimum=0),
)

_SENSOR = (
    SchemaField("count_x", int, 23, "lenslets across", minimum=1),
    SchemaField("count_y", int, 23, "lenslets down", minimum=1),
    SchemaField("pitch", float, 150e-6, "lenslet pitch in meters", minimum=0.0),
    SchemaField("focal_length", float, 5.2e-3, "lenslet focal length in meters",
           minimum=0.0),
    SchemaField("pixel_size", float, 5e-6, "camera pixel size in meters",
           minimum=0.0),
    SchemaField("pixels_per_lenslet", int, 30, "camera pixels per lenslet side",
           minimum=2),
)

_ANALYSIS = (
    SchemaField("kind", str, None, "what to compute", choices=ANALYSIS_KINDS,
           required=True),
    SchemaField("j_max", int, 15, "wavefront: highest fitted mode", minimum=2),
    SchemaField("fit_aperture_radius", float, None, "wavefront: analysis disk "
           "radius in meters (default: valid-lenslet box)", minimum=0.0),
    SchemaField("intensity_floor", float, 0.01, "wavefront: lenslet validity "
           "floor as fraction of the brightest lenslet", minimum=0.0,
           maximum=1.0),
    SchemaField("theta", float, 0.0, "qkd-pol: channel rotation in radians"),
    SchemaField("depolarization", float, 0.0802, "qkd-pol: depolarization "
           "fraction (QBER = depolarization / 2 at theta = 0)",
           minimum=0.0, maximum=1.0),
    SchemaField("ell_values", list, [-4, 4], "qkd-oam: distinct mode indices"),
    SchemaField("superposition_basis", bool, False,
           "qkd-oam: add the two-mode superposition basis"),
    SchemaField("trials", int, 100, "qkd-oam: Monte Carlo channel realizations",
           minimum=1),
    SchemaField("modes", list, None, "images: list of source sections"),
)

_TOP = (
    SchemaField("name", str, None, "scenario name", required=True),
    SchemaField("seed", int, DEFAULT_SEED, "master seed for every random draw"),
    SchemaField("frames", int, 1, "number of frames / repeated realizations",
           minimum=1),
    SchemaField("time_average", bool, False, "images: also write the per-mode "
           "average over frames (long-exposure analogue)"),
)

_SECTIONS = {
    "grid": _GRID,
    "source": _SOURCE,
    "channel": _CHANNEL,
    "channel.screens": _SCREENS,
    "channel.occlusion": _OCCLUSION,
    "sensor": _SENSOR,
    "analysis": _ANALYSIS,
}


@dataclass(frozen=True)
class SourceSpec:
    kind: str
    waist: float | None
    ell: int
    p: int
    wavelength: float


@dataclass(frozen=True)
class AnalysisSpec:
    kind: str
    j_max: int = 15
    fit_aperture_radius: float | None = None
    intensity_floor: float = 0.01
    theta: float = 0.0
    depolarization: float = 0.0802
    ell_values: tuple[int, ...] = (-4, 4)
    superposition_basis: bool = False
    trials: int = 100
    modes: tuple[SourceSpec, ...] = ()


@dataclass(frozen=True)
class Scenario:
    """A fully validated experiment description."""

    name: str
    seed: int
    frames: int
    time_average: bool
    grid: Grid
    source: SourceSpec
    channel: ChannelConfig
    sensor: LensletArray
    analysis: AnalysisSpec
    resolved: dict

    def to_yaml(self) -> str:
        """Canonical re-serialization; parsing it reproduces this scenario."""
        return yaml.safe_dump(self.resolved, sort_keys=True,
                              default_flow_style=False)


def _suggest(key: str, known: list[str]) -> str:
    close = difflib.get_close_matches(key, known, n=1, cutoff=0.4)
    return f"; did you mean {close[0]!r}?" if close else ""


def _coerce(field: Field_, value, where: str):
    if value is None:
        return None
    if field.kind is float:
        if isinstance(value, bool):
            raise ScenarioError(f"expected a number, got {value!r}", where)
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ScenarioError(
                    f"expected a number, got {value!r}", where) from None
        if not isinstance(value, (int, float)):
            raise ScenarioError(f"expected a number, got {value!r}", where)
        value = float(value)
        if not math.isfinite(value):
            raise ScenarioError(f"non-finite value {value}", where)
    elif field.kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"expected an integer, got {value!r}", where)
    elif field.kind is bool:
        if not isinstance(value, bool):
            raise ScenarioError(f"expected true/false, got {value!r}", where)
    elif field.kind is str:
        if not isinstance(value, str):
            raise ScenarioError(f"expected a string, got {value!r}", where)
    elif field.kind is list:
        if not isinstance(value, list):
            raise ScenarioError(f"expected a list, got {value!r}", where)
    elif field.kind is dict:
        if not isinstance(value, dict):
            raise ScenarioError(f"expected a mapping, got {value!r}", where)
    if field.choices is not None and value not in field.choices:
        raise ScenarioError(
            f"must be one of {list(field.choices)}, got {value!r}", where)
    if field.minimum is not None and isinstance(value, (int, float)) \
            and value < field.minimum:
        raise ScenarioError(
            f"must be >= {field.minimum}, got {value}", where)
    if field.maximum is not None and isinstance(value, (int, float)) \
            and value > field.maximum:
        raise ScenarioError(
            f"must be <= {field.maximum}, got {value}", where)
    return value


def _apply_schema(section: Mapping | None, schema: tuple[SchemaField, ...],
                  where: str) -> dict:
    if section is None:
        section = {}
    if not isinstance(section, Mapping):
        raise ScenarioError(f"expected a mapping section, got {section!r}",
                            where)
    known = [f.name for f in schema]
    out = {}
    for key in section:
        if key not in known:
            raise ScenarioError(
                f"unknown key {key!r}{_suggest(str(key), known)}",
                where)
    for field in schema:
        path = f"{where}.{field.name}" if where else field.name
        if field.name in section:
            out[field.name] = _coerce(field, section[field.name], path)
        elif field.required:
            raise ScenarioError("missing required key", path)
        else:
            out[field.name] = field.default
    return out


def modal_sigma_table(sigma: float, j_max: int) -> dict[int, float]:
    """Synthetic per-mode deviations: tilt-dominated power-law decay."""
    from .zernike import nm_from_index
    table = {}
    for j in range(2, j_max + 1):
        n = nm_from_index(j).n
        table[j] = sigma * ((n + 1) / 2.0) ** (-11.0 / 6.0)
    return table


def _build_channel(resolved: dict, grid: Grid, seed: int) -> ChannelConfig:
    ch = resolved["channel"]
    scr = ch["screens"]
    occ = ch["occlusion"]
    n_screens = ch["n_screens"]
    source = scr["kind"] if n_screens > 0 else "none"
    if n_screens > 0 and scr["kind"] == "none":
        raise ScenarioError("n_screens > 0 needs channel.screens.kind",
                            "channel.n_screens")
    modal_sigmas = None
    if source == "modal":
        if scr["sigmas"] is not None:
            try:
                modal_sigmas = tuple(sorted(
                    (int(j), float(s)) for j, s in scr["sigmas"].items()))
            except (TypeError, ValueError):
                raise ScenarioError("sigmas must map mode index -> radians",
                                    "channel.screens.sigmas") from None
        else:
            modal_sigmas = tuple(
                modal_sigma_table(scr["sigma"], scr["j_max"]).items())
    if source == "kolmogorov" and scr["r0"] is None:
        raise ScenarioError("kolmogorov screens need r0",
                            "channel.screens.r0")
    try:
        return ChannelConfig(
            length=ch["length"],
            refractive_index=ch["refractive_index"],
            attenuation_db_per_m=ch["attenuation_db_per_m"],
            n_screens=n_screens,
            screen_source=source,
            modal_sigmas=modal_sigmas,
            screen_aperture_radius=scr["aperture_radius"],
            r0=scr["r0"],
            subharmonic_levels=scr["subharmonic_levels"],
            occlusion_rate=occ["rate"],
            occluder_radius=occ["radius"],
            occluder_opacity=occ["opacity"],
            seed=seed)
    except ValueError as exc:
        raise ScenarioError(str(exc), "channel") from None


def _build_source(sec: dict, grid: Grid, where: str) -> SourceSpec:
    kind = sec["kind"]
    waist = sec["waist"]
    if waist is not None and waist > grid.extent / 4:
        raise ScenarioError(
            f"waist {waist} exceeds grid extent / 4 ({grid.extent / 4})",
            f"{where}.waist")
    if kind in ("lg", "petal") and sec["ell"] == 0 and kind == "petal":
        raise ScenarioError("petal sources need ell != 0", f"{where}.ell")
    return SourceSpec(kind=kind, waist=waist, ell=sec["ell"], p=sec["p"],
                      wavelength=sec["wavelength"])


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" \
            if mark else "document"
        raise ScenarioError(f"syntax error: {exc.problem}", where) from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"syntax error: {exc}") from None
    if doc is None:
        raise ScenarioError("empty scenario document")
    if not isinstance(doc, Mapping):
        raise ScenarioError("top level must be a mapping")

    known_top = [f.name for f in _TOP] + ["grid", "source", "channel",
                                          "sensor", "analysis"]
    for key in doc:
        if key not in known_top:
            raise ScenarioError(
                f"unknown key {key!r}{_suggest(str(key), known_top)}")

    resolved = _apply_schema(
        {k: v for k, v in doc.items()
         if k in [f.name for f in _TOP]}, _TOP, "")
    resolved["grid"] = _apply_schema(doc.get("grid"), _GRID, "grid")
    resolved["source"] = _apply_schema(doc.get("source"), _SOURCE, "source")
    channel_doc = dict(doc.get("channel") or {})
    screens_doc = channel_doc.pop("screens", None)
    occlusion_doc = channel_doc.pop("occlusion", None)
    resolved["channel"] = _apply_schema(channel_doc, _CHANNEL, "channel")
    resolved["channel"]["screens"] = _apply_schema(
        screens_doc, _SCREENS, "channel.screens")
    resolved["channel"]["occlusion"] = _apply_schema(
        occlusion_doc, _OCCLUSION, "channel.occlusion")
    resolved["sensor"] = _apply_schema(doc.get("sensor"), _SENSOR, "sensor")
    resolved["analysis"] = _apply_schema(doc.get("analysis"), _ANALYSIS,
                                         "analysis")

    try:
        grid = Grid(resolved["grid"]["n_samples"], resolved["grid"]["spacing"])
    except ValueError as exc:
        raise ScenarioError(str(exc), "grid") from None
    source = _build_source(resolved["source"], grid, "source")
    channel = _build_channel(resolved, grid, resolved["seed"])
    try:
        sensor = LensletArray(**resolved["sensor"])
    except ValueError as exc:
        raise ScenarioError(str(exc), "sensor") from None

    ana = resolved["analysis"]
    modes: tuple[SourceSpec, ...] = ()
    if ana["kind"] == "images":
        if not ana["modes"]:
            raise ScenarioError("images analysis needs a non-empty modes "
                                "list", "analysis.modes")
        built = []
        for i, entry in enumerate(ana["modes"]):
            sec = _apply_schema(entry, _SOURCE, f"analysis.modes[{i}]")
            built.append(_build_source(sec, grid, f"analysis.modes[{i}]"))
            ana["modes"][i] = sec
        modes = tuple(built)
    if ana["kind"] == "qkd-oam":
        ells = ana["ell_values"]
        if not all(isinstance(e, int) and not isinstance(e, bool)
                   for e in ells):
            raise ScenarioError("ell_values must be integers",
                                "analysis.ell_values")
        if len(set(ells)) != len(ells) or not ells:
            raise ScenarioError("ell_values must be distinct and non-empty",
                                "analysis.ell_values")
    analysis = AnalysisSpec(
        kind=ana["kind"], j_max=ana["j_max"],
        fit_aperture_radius=ana["fit_aperture_radius"],
        intensity_floor=ana["intensity_floor"], theta=ana["theta"],
        depolarization=ana["depolarization"],
        ell_values=tuple(ana["ell_values"]),
        superposition_basis=ana["superposition_basis"], trials=ana["trials"],
        modes=modes)

    if analysis.kind == "wavefront":
        pitch_samples = sensor.pitch / grid.spacing
        if abs(pitch_samples - round(pitch_samples)) > 1e-9 * pitch_samples \
                or round(pitch_samples) < 8:
            raise ScenarioError(
                "wavefront analysis needs the sensor pitch to be an integer "
                "multiple (>= 8) of the grid spacing; got "
                f"pitch/spacing = {pitch_samples:.6g}", "sensor.pitch")
        if grid.extent < sensor.extent_x or grid.extent < sensor.extent_y:
            raise ScenarioError("grid extent smaller than the lenslet array",
                                "grid.n_samples")

    return Scenario(name=resolved["name"], seed=resolved["seed"],
                    frames=resolved["frames"],
                    time_average=resolved["time_average"], grid=grid,
                    source=source, channel=channel, sensor=sensor,
                    analysis=analysis, resolved=resolved)


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario from a file path or a bundled scenario name."""
    path = Path(ref)
    if path.exists():
        return parse_scenario(path.read_text())
    bundled = bundled_scenarios()
    if str(ref) in bundled:
        return parse_scenario(bundled[str(ref)])
    raise ScenarioError(
        f"no scenario file or bundled scenario named {ref!r}; bundled: "
        f"{sorted(bundled)}")


def bundled_scenarios() -> dict[str, str]:
    """Names and document text of the scenarios shipped in the package."""
    out = {}
    base = resources.files(__package__) / "scenarios"
    for entry in sorted(base.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".yaml"):
            out[entry.name[:-5]] = entry.read_text()
    return out


def set_by_path(doc: dict, dotted: str, raw_value: str) -> None:
    """Apply one 'section.key=value' override onto a raw document dict."""
    parts = dotted.split(".")
    cursor = doc
    for part in parts[:-1]:
        nxt = cursor.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ScenarioError(f"cannot descend into {part!r}", dotted)
        cursor = nxt
    value = yaml.safe_load(raw_value)
    cursor[parts[-1]] = value


def schema_reference() -> str:
    """Human-readable reference of every key, type, default, and meaning."""
    lines = ["Scenario schema (YAML). Types and defaults; required keys "
             "are marked *.", ""]
    def emit(title, schema):
        lines.append(title)
        for f in schema:
            default = "required *" if f.required else f"default {f.default!r}"
            extras = []
            if f.choices:
                extras.append(f"one of {list(f.choices)}")
            if f.minimum is not None:
                extras.append(f">= {f.minimum}")
            if f.maximum is not None:
                extras.append(f"<= {f.maximum}")
            extra = f" ({', '.join(extras)})" if extras else ""
            lines.append(f"  {f.name:<22} {f.kind.__name__:<6} {default}"
                         f"{extra}")
            lines.append(f"  {'':<22} {f.doc}")
        lines.append("")
    emit("top level", _TOP)
    for section, schema in _SECTIONS.items():
        emit(section, schema)
    return "\n".join(lines)
