"""Small input checks shared by the estimators, the pipeline config and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ConfigError


def check_finite_array(x, name="array", ndim=None, dtype=float):
    """``np.asarray(x)`` with finiteness and optional rank checks."""
    try:
        arr = np.asarray(x, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be numeric: {exc}") from exc
    if ndim is not None and arr.ndim != ndim:
        raise ConfigError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains non-finite values")
    return arr


def check_scalar(value, name, kind=numbers.Real, low=None, high=None,
                 low_inclusive=True, high_inclusive=True, allow_none=False):
    """Type and range check for a scalar parameter; returns the value."""
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"{name} must be {getattr(kind, '__name__', kind)}, "
                          f"got {type(value).__name__}")
    if low is not None and (value < low or (value == low and not low_inclusive)):
        raise ConfigError(f"{name}={value} must be {'>=' if low_inclusive else '>'} {low}")
    if high is not None and (value > high or (value == high and not high_inclusive)):
        raise ConfigError(f"{name}={value} must be {'<=' if high_inclusive else '<'} {high}")
    return value


def check_choice(value, name, choices):
    if value not in choices:
        raise ConfigError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value


def check_keys(mapping, allowed, where):
    """Refuse unknown keys so typos in config files do not pass silently."""
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = sorted(set(mapping) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) {extra} in {where}; allowed: {sorted(allowed)}")
    return mapping


def merge_defaults(user, defaults, where="config"):
    """Recursive merge of ``user`` over ``defaults`` with key checking.

    Nested dicts in ``defaults`` are merged; other values are replaced.
    """
    check_keys(user, defaults, where)
    out = {}
    for key, dval in defaults.items():
        if key not in user:
            out[key] = _copy(dval)
        elif isinstance(dval, dict) and dval:
            out[key] = merge_defaults(user[key], dval, f"{where}.{key}")
        else:
            out[key] = _copy(user[key])
    return out


def _copy(v):
    if isinstance(v, dict):
        return {k: _copy(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_copy(x) for x in v]
    return v
