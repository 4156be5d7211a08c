"""Decode text values from config files and MetaImage headers into Python values.

Both file formats store every value as text after ``=``. These helpers turn that
text into booleans, numbers and fixed-length number tuples. Unlike a lenient
parser they raise ``ValueError`` on bad input; callers wrap the error with the
key that held the value so the user sees which line is wrong.
"""

import re

_SPLIT = re.compile(r"[\s,]+")
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _tokens(raw: str) -> list[str]:
    """Split a space- or comma-separated value into non-empty tokens."""
    return [p for p in _SPLIT.split(raw.strip()) if p]


def decode_bool(raw: str) -> bool:
    """Decode ``True``/``False`` (also yes/no, on/off, 1/0), case-insensitive.

    :param raw: Text value.
    :type raw: str
    :returns: The boolean.
    :rtype: bool
    :raises ValueError: If the text is not a recognised boolean spelling.
    """
    value = raw.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def decode_int(raw: str) -> int:
    """Decode a base-10 integer."""
    return int(raw.strip())


def decode_float(raw: str) -> float:
    """Decode a float (accepts ``1e-5`` notation)."""
    return float(raw.strip())


def decode_int_list(raw: str, length: int | None = None) -> tuple[int, ...]:
    """Decode a space- or comma-separated list of integers.

    :param raw: Text such as ``4 4 2`` or ``4,4,2``.
    :type raw: str
    :param length: Required number of entries, or None for any non-empty list.
    :type length: int | None
    :returns: Tuple of integers.
    :rtype: tuple[int, ...]
    :raises ValueError: On a non-integer token or the wrong number of entries.
    """
    values = tuple(int(t) for t in _tokens(raw))
    _check_length(values, length, raw)
    return values


def decode_float_list(raw: str, length: int | None = None) -> tuple[float, ...]:
    """Decode a space- or comma-separated list of floats.

    :param raw: Text such as ``0.625 0.625 1.5``.
    :type raw: str
    :param length: Required number of entries, or None for any non-empty list.
    :type length: int | None
    :returns: Tuple of floats.
    :rtype: tuple[float, ...]
    :raises ValueError: On a non-numeric token or the wrong number of entries.
    """
    values = tuple(float(t) for t in _tokens(raw))
    _check_length(values, length, raw)
    return values


def _check_length(values: tuple, length: int | None, raw: str) -> None:
    if not values:
        raise ValueError("expected at least one value")
    if length is not None and len(values) != length:
        raise ValueError(f"expected {length} values, got {len(values)} in {raw!r}")


def encode_value(value: object) -> str:
    """Render a decoded value back to the text form the decoders accept.

    Tuples are space-separated, booleans are ``true``/``false`` and floats use
    ``repr`` so that decoding the text returns the same float.
    """
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return " ".join(encode_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
