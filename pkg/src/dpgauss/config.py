"""Tunable constants read from a plain ``key = value`` file."""

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from dpgauss.errors import ConfigError

DEFAULT_PATH = Path(__file__).with_name("constants.cfg")


@dataclass(frozen=True)
class Constants:
    """Numeric constants the private estimators depend on.

    ``c1``/``c1_robust`` scale the covariance-mask noise, ``c2`` the chunk
    size of the preconditioner, ``c3`` the robust mean radius. The filter
    constants set the eigenvalue triggers of the reference robust filters.
    """

    c1: float
    c1_robust: float
    c2: float
    c3: float
    filter_mean_c: float
    filter_cov_c: float
    robust_tv_c: float
    refine_radius: float
    robust_cov_s_factor: float
    alpha0: float

    def with_overrides(self, overrides):
        if not overrides:
            return self
        known = {f.name for f in fields(self)}
        bad = set(overrides) - known
        if bad:
            raise ConfigError(f"unknown constants: {sorted(bad)}")
        return replace(self, **{k: float(v) for k, v in overrides.items()})

    def as_dict(self):
        return asdict(self)


def parse_key_values(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_constants(path=None, overrides=None):
    path = Path(path) if path is not None else DEFAULT_PATH
    try:
        raw = parse_key_values(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    names = [f.name for f in fields(Constants)]
    missing = [n for n in names if n not in raw]
    if missing:
        raise ConfigError(f"{path}: missing constants {missing}")
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"{path}: unknown constants {unknown}")
    try:
        values = {n: float(raw[n]) for n in names}
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return Constants(**values).with_overrides(overrides)


def update_constant(path, key, value, comment):
    """Rewrite one ``key = value`` line in place, replacing its trailing comment."""
    path = Path(path)
    lines = path.read_text().splitlines()
    for i, line in enumerate(lines):
        if line.split("#", 1)[0].split("=", 1)[0].strip() == key:
            lines[i] = f"{key} = {value!r}  # {comment}"
            break
    else:
        lines.append(f"{key} = {value!r}  # {comment}")
    path.write_text("\n".join(lines) + "\n")
