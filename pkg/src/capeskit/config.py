"""Flat ``key = value`` config files with ``#`` comments."""

from __future__ import annotations

from .errors import CapeskitError


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CapeskitError(f"{source}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise CapeskitError(f"{source}: line {lineno}: empty key")
        if key in out:
            raise CapeskitError(f"{source}: line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CapeskitError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def ensure_known(cfg: dict[str, str], allowed, source: str = "config") -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise CapeskitError(f"{source}: unknown keys {unknown}")


def _get(cfg, key, default, conv, kind):
    if key not in cfg:
        return default
    try:
        return conv(cfg[key])
    except (TypeError, ValueError):
        raise CapeskitError(f"config key {key!r}: expected {kind}, got {cfg[key]!r}") from None


def cfg_int(cfg, key, default):
    return _get(cfg, key, default, int, "an integer")


def cfg_float(cfg, key, default):
    return _get(cfg, key, default, float, "a number")


def cfg_str(cfg, key, default):
    return cfg.get(key, default)


def cfg_int_list(cfg, key, default):
    conv = lambda s: tuple(int(tok) for tok in s.split(",") if tok.strip())  # noqa: E731
    return _get(cfg, key, default, conv, "a comma-separated integer list")


def cfg_str_list(cfg, key, default):
    conv = lambda s: tuple(tok.strip() for tok in s.split(",") if tok.strip())  # noqa: E731
    return _get(cfg, key, default, conv, "a comma-separated list")


def cfg_pair(cfg, key, default, sep):
    def conv(s):
        a, _, b = s.partition(sep)
        return int(a), int(b)

    return _get(cfg, key, default, conv, f"two integers separated by {sep!r}")
