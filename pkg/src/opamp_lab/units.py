"""SPICE-style engineering values.

Suffixes are case-insensitive. ``m`` is milli and ``meg`` is mega, which is
the classic trap: ``1m`` is 1e-3, ``1meg`` is 1e6.
"""

import re
from decimal import Decimal, InvalidOperation

SUFFIXES = {
    "f": Decimal("1e-15"),
    "p": Decimal("1e-12"),
    "n": Decimal("1e-9"),
    "u": Decimal("1e-6"),
    "m": Decimal("1e-3"),
    "k": Decimal("1e3"),
    "meg": Decimal("1e6"),
    "g": Decimal("1e9"),
    "t": Decimal("1e12"),
}

# largest first, used when formatting
_FORMAT_ORDER = ["t", "g", "meg", "k", "", "m", "u", "n", "p", "f"]
_SCALE = dict(SUFFIXES, **{"": Decimal(1)})

_VALUE_RE = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)(meg|[fpnumkgt])?$", re.IGNORECASE
)


def parse_value(token):
    """Parse ``'0.9meg'`` -> 900000.0. Raises ValueError on anything else."""
    match = _VALUE_RE.match(token.strip())
    if match is None:
        raise ValueError(f"bad numeric value {token!r}")
    mantissa, suffix = match.groups()
    try:
        number = Decimal(mantissa)
    except InvalidOperation as exc:  # pragma: no cover - regex guards this
        raise ValueError(f"bad numeric value {token!r}") from exc
    if suffix:
        number *= SUFFIXES[suffix.lower()]
    value = float(number)
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError(f"value out of range {token!r}")
    return value


def format_value(value):
    """Format with an engineering suffix such that ``parse_value`` round-trips exactly."""
    value = float(value)
    if value == 0:
        return "0"
    exact = Decimal(repr(value))
    magnitude = abs(exact)
    for suffix in _FORMAT_ORDER:
        scale = _SCALE[suffix]
        if magnitude >= scale:
            break
    else:
        suffix = "f"
        scale = _SCALE["f"]
    mantissa = (exact / scale).normalize()
    text = format(mantissa, "f")
    return text + suffix
