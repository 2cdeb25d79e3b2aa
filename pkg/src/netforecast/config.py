"""Plain-text ``key = value`` configuration files.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Commas make a list. Dotted keys (``parallel.input_scaling``) address a
nested group. Values are parsed as int, float, bool or string, in that
order of preference::

    experiment_id = fig3
    n_nodes = 50
    seeds = 0, 1, 2
    parallel.spectral_radius = 0.79
    grid.ridge_param = 1e-6, 1e-4
"""

from __future__ import annotations

from pathlib import Path

from .errors import InvalidArgumentError


def parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    for kind in (int, float):
        try:
            return kind(t)
        except ValueError:
            pass
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "'\"":
        return t[1:-1]
    return t


def parse_value(text: str):
    if "," in text:
        return [parse_scalar(p) for p in text.split(",") if p.strip()]
    return parse_scalar(text)


def parse_config_text(text: str) -> dict:
    """Parse config text into a nested dict."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InvalidArgumentError(f"line {lineno}: empty key")
        node = out
        *groups, leaf = key.split(".")
        for g in groups:
            node = node.setdefault(g, {})
            if not isinstance(node, dict):
                raise InvalidArgumentError(f"line {lineno}: {g!r} is both a value and a group")
        if leaf in node:
            raise InvalidArgumentError(f"line {lineno}: duplicate key {key!r}")
        node[leaf] = parse_value(value)
    return out


def load_config(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InvalidArgumentError(f"config file {p} not found")
    return parse_config_text(p.read_text())


def format_config(d: dict, prefix: str = "") -> str:
    """Inverse of :func:`parse_config_text` for flat scalar / list values."""
    lines = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            lines.append(format_config(v, key + ".").rstrip("\n"))
        elif isinstance(v, (list, tuple)):
            # trailing comma keeps short lists as lists
            lines.append(f"{key} = " + ", ".join(_fmt(x) for x in v) + ("," if len(v) <= 1 else ""))
        else:
            lines.append(f"{key} = {_fmt(v)}")
    return "\n".join(x for x in lines if x) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)
