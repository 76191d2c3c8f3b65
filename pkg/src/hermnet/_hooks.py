"""Fault-injection switches used by the self-check to prove its checks bite.

Never set outside tests and ``hermnet selfcheck --inject``.
"""

from __future__ import annotations

from contextlib import contextmanager

_active: dict[str, object] = {}

KNOWN = {
    # negate edge vectors whose source index exceeds the destination index
    "rvec_sign_flip": True,
    # raise the cosine cutoff to this power (0 makes the cutoff hard)
    "cutoff_exponent": 0,
}


def get(name: str, default=None):
    return _active.get(name, default)


@contextmanager
def inject(name: str, value=None):
    if name not in KNOWN:
        raise KeyError(f"unknown fault {name!r}; known: {sorted(KNOWN)}")
    prev = _active.get(name, _missing := object())
    _active[name] = KNOWN[name] if value is None else value
    try:
        yield
    finally:
        if prev is _missing:
            _active.pop(name, None)
        else:
            _active[name] = prev
