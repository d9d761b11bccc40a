"""Run configuration: flat sectioned key-value files, dataclasses, overrides.

The config grammar is a strict subset of TOML (documented in the README):
``[section]`` headers, ``key = value`` pairs, ``#`` comments, values being
integers, floats, booleans, double- or single-quoted strings, or flat
``[a, b, c]`` arrays of those.  Python 3.10 has no stdlib TOML reader and the
subset keeps the format portable, so parsing is done here.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import ConfigError

_TRUE, _FALSE = "true", "false"


def _parse_scalar(tok: str, where: str):
    tok = tok.strip()
    if not tok:
        raise ConfigError(f"{where}: empty value")
    if tok == _TRUE:
        return True
    if tok == _FALSE:
        return False
    if (tok[0] == tok[-1] == '"') or (tok[0] == tok[-1] == "'"):
        return tok[1:-1]
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse value {tok!r}") from None


def _strip_comment(line: str) -> str:
    out, quote = [], None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    sections: dict[str, dict] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"{where}: empty section name")
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        if current is None:
            raise ConfigError(f"{where}: key outside of any [section]")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if val.startswith("[") and val.endswith("]"):
            inner = val[1:-1].strip()
            items = [t for t in (s.strip() for s in inner.split(",")) if t]
            current[key] = [_parse_scalar(t, where) for t in items]
        else:
            current[key] = _parse_scalar(val, where)
    return sections


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return _TRUE if v else _FALSE
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def dump_config(sections: dict) -> str:
    lines = []
    for name in sections:
        lines.append(f"[{name}]")
        for key, val in sections[name].items():
            lines.append(f"{key} = {_format_value(val)}")
        lines.append("")
    return "\n".join(lines)


def apply_overrides(sections: dict, overrides: list[str]) -> dict:
    """Apply dotted ``section.key=value`` overrides onto a parsed config."""
    out = {name: dict(body) for name, body in sections.items()}
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override must look like section.key=value: {ov!r}")
        dotted, _, val = ov.partition("=")
        if "." not in dotted:
            raise ConfigError(f"override key must be dotted (section.key): {dotted!r}")
        section, _, key = dotted.strip().partition(".")
        val = val.strip()
        where = f"override {ov!r}"
        if val.startswith("[") and val.endswith("]"):
            items = [t for t in (s.strip() for s in val[1:-1].split(",")) if t]
            parsed = [_parse_scalar(t, where) for t in items]
        else:
            parsed = _parse_scalar(val, where)
        out.setdefault(section, {})[key.strip()] = parsed
    return out


# -- typed run configs -------------------------------------------------------


@dataclass(frozen=True)
class PdeRunConfig:
    d: int = 2
    chi: float = 0.0
    nu: float = 0.0
    mu: float = 0.0
    half_width: float = 4.0
    m_grid: int = 256
    dt: float = 2.5e-4
    t_end: float = 1.0
    r_norm: float = 8.0
    n_snapshots: int = 9
    init: str = "gaussian"  # gaussian | constant | delta
    init_mass: float = 1.0
    init_sigma: float = 0.3
    init_value: float = 0.5  # for init = "constant"
    blowup_factor: float = 1e4


@dataclass(frozen=True)
class ParticleRunConfig:
    n: int = 1000
    alpha: float = 1 / 6
    chi: float = 0.0
    nu: float = 0.0
    mu: float = 0.0
    cutoff_a: float = 3.0
    dt: float = 1e-3
    seed: int = 0
    max_particles_factor: int = 64
    d: int = 2
    t_end: float = 0.25
    n_snapshots: int = 5
    half_width: float = 4.0
    m_grid: int = 128
    init_sigma: float = 0.4


@dataclass(frozen=True)
class ExperimentRunConfig:
    n_values: tuple = (250, 500, 1000, 2000)
    replicas: int = 20
    t_end: float = 0.25
    n_checkpoints: int = 8
    r: float = 8.0
    gamma: float = 0.5
    alpha: float = 1 / 6
    chi: float = 1.0
    nu: float = 0.1
    mu: float = 1.0
    cutoff_a: float = 3.0
    particle_dt: float = 1e-3
    pde_dt: float = 2.5e-4
    pde_m_grid: int = 256
    m_grid: int = 128
    half_width: float = 4.0
    init_sigma: float = 0.4
    seed_root: int = 20260810
    m_moment: int = 2
    kr_max_side: int = 64
    max_particles_factor: int = 64
    threads: int = 0  # 0 = all available cores
    resolution_check: bool = True


_SECTION_TYPES = {
    "pde": PdeRunConfig,
    "particles": ParticleRunConfig,
    "experiment": ExperimentRunConfig,
}


def typed_section(sections: dict, name: str):
    """Build the dataclass for one section, rejecting unknown keys."""
    cls = _SECTION_TYPES[name]
    body = dict(sections.get(name, {}))
    known = {f for f in cls.__dataclass_fields__}
    unknown = set(body) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    if "n_values" in body:
        body["n_values"] = tuple(int(x) for x in body["n_values"])
    try:
        return cls(**body)
    except TypeError as exc:
        raise ConfigError(f"bad [{name}] section: {exc}") from None


def sections_from(cfg) -> dict:
    """Single-section config dict from a typed dataclass (for resolved copies)."""
    name = {PdeRunConfig: "pde", ParticleRunConfig: "particles",
            ExperimentRunConfig: "experiment"}[type(cfg)]
    body = asdict(cfg)
    if "n_values" in body:
        body["n_values"] = list(body["n_values"])
    return {name: body}
