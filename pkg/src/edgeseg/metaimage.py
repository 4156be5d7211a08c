"""Read and write MetaImage volumes (``.mhd`` header + ``.raw`` data, or ``.mha``).

The header is line-oriented ``Key = Value`` text. The data is a raw scalar
dump in x-fastest order, stored either in a separate file named by
``ElementDataFile`` or, for ``ElementDataFile = LOCAL``, directly after the
header. Supported element types: 8/16-bit signed and unsigned integers and
32-bit float, in either byte order. Compressed data is rejected.
"""

import re
from pathlib import Path

import numpy as np

from edgeseg.decoders import decode_bool, decode_float_list, decode_int, decode_int_list, encode_value
from edgeseg.errors import MetaImageFormatError, TruncatedDataError
from edgeseg.volume import Volume, VolumeKind

# Match header line: ElementSpacing = 0.625 0.625 1.5
HEADER_LINE = re.compile(r"^\s*(\w+)\s*=\s*(.*?)\s*$")

ELEMENT_TYPES: dict[str, np.dtype] = {
    "MET_CHAR": np.dtype(np.int8),
    "MET_UCHAR": np.dtype(np.uint8),
    "MET_SHORT": np.dtype(np.int16),
    "MET_USHORT": np.dtype(np.uint16),
    "MET_FLOAT": np.dtype(np.float32),
}
DTYPE_NAMES = {dtype: name for name, dtype in ELEMENT_TYPES.items()}

REQUIRED_KEYS = ("NDims", "DimSize", "ElementType", "ElementDataFile")
BYTE_ORDER_KEYS = ("BinaryDataByteOrderMSB", "ElementByteOrderMSB")


def read_header(path: str | Path) -> tuple[dict[str, str], int]:
    """Read the text header of a MetaImage file.

    Parsing stops after ``ElementDataFile``, which the format requires to be
    the last header key.

    :param path: ``.mhd`` or ``.mha`` file.
    :type path: str | Path
    :returns: ``(header, data_offset)`` where ``header`` maps keys to raw values
        and ``data_offset`` is the byte offset just past the header.
    :rtype: tuple[dict[str, str], int]
    :raises OSError: If the file cannot be read.
    :raises MetaImageFormatError: If a header line is not ``Key = Value``.
    """
    header: dict[str, str] = {}
    offset = 0
    with open(path, "rb") as f:
        for raw_line in f:
            offset += len(raw_line)
            line = raw_line.decode("latin-1").rstrip("\r\n")
            if not line.strip():
                continue
            m = HEADER_LINE.match(line)
            if not m:
                raise MetaImageFormatError("header", f"cannot parse line {line[:60]!r}")
            header[m.group(1)] = m.group(2)
            if m.group(1) == "ElementDataFile":
                break
    return header, offset


def _decode_key(header: dict[str, str], key: str, decode, *args):
    """Decode ``header[key]``, raising a format error naming ``key`` when absent or malformed."""
    if key not in header:
        raise MetaImageFormatError(key, "missing from header")
    try:
        return decode(header[key], *args)
    except ValueError as e:
        raise MetaImageFormatError(key, str(e)) from e


def _byte_order(header: dict[str, str]) -> str:
    for key in BYTE_ORDER_KEYS:
        if key in header:
            return ">" if _decode_key(header, key, decode_bool) else "<"
    return "<"


def read_metaimage(path: str | Path, kind: VolumeKind | str = VolumeKind.IMAGE) -> Volume:
    """Read a 3D MetaImage file into a :class:`~edgeseg.volume.Volume`.

    :param path: ``.mhd`` (with separate data file) or ``.mha`` (``LOCAL`` data).
    :type path: str | Path
    :param kind: Kind of the returned volume; ``label`` requires 0/1 values.
    :type kind: VolumeKind | str
    :returns: Volume with the header's DimSize, ElementSpacing and Offset.
        Data keeps the stored element type, in native byte order.
    :rtype: Volume
    :raises OSError: If a file cannot be read.
    :raises MetaImageFormatError: If a required key is missing or malformed, the
        element type is unsupported, or the data is compressed.
    :raises TruncatedDataError: If the payload is shorter than DimSize requires.
    """
    path = Path(path)
    header, data_offset = read_header(path)

    ndims = _decode_key(header, "NDims", decode_int)
    if ndims != 3:
        raise MetaImageFormatError("NDims", f"expected 3, got {ndims}")
    dims = _decode_key(header, "DimSize", decode_int_list, 3)
    if min(dims) < 1:
        raise MetaImageFormatError("DimSize", f"every size must be >= 1, got {dims}")
    element_type = _decode_key(header, "ElementType", str.strip)
    if element_type not in ELEMENT_TYPES:
        raise MetaImageFormatError("ElementType", f"unsupported type {element_type!r}")
    if "CompressedData" in header and _decode_key(header, "CompressedData", decode_bool):
        raise MetaImageFormatError("CompressedData", "compressed data files are not supported")
    spacing = _decode_key(header, "ElementSpacing", decode_float_list, 3) if "ElementSpacing" in header else (1.0,) * 3
    origin = _decode_key(header, "Offset", decode_float_list, 3) if "Offset" in header else (0.0,) * 3

    dtype = ELEMENT_TYPES[element_type].newbyteorder(_byte_order(header))
    data_file = _decode_key(header, "ElementDataFile", str.strip)
    if data_file.upper() == "LOCAL":
        payload = path.read_bytes()[data_offset:]
    else:
        payload = (path.parent / data_file).read_bytes()

    count = int(np.prod(dims))
    found = len(payload) // dtype.itemsize
    if found < count:
        raise TruncatedDataError(count, found)
    flat = np.frombuffer(payload, dtype=dtype, count=count)
    # x varies fastest on disk: reshape as (z, y, x) and swap to [x, y, z]
    data = flat.reshape(dims[::-1]).transpose(2, 1, 0)
    data = np.ascontiguousarray(data.astype(dtype.newbyteorder("="), copy=False))
    return Volume(data=data, spacing=spacing, origin=origin, kind=kind)


def _storage_dtype(volume: Volume) -> np.dtype:
    if volume.is_label:
        return np.dtype(np.uint8)
    dtype = np.dtype(volume.data.dtype).newbyteorder("=")
    if dtype in DTYPE_NAMES:
        return dtype
    return np.dtype(np.float32)


def write_metaimage(volume: Volume, path: str | Path) -> Path:
    """Write a volume as ``<name>.mhd`` + ``<name>.raw`` (little-endian).

    Labels are stored as ``MET_UCHAR``. Images keep a supported element type
    and are otherwise stored as ``MET_FLOAT``.

    :param volume: Volume to write.
    :type volume: Volume
    :param path: Header path; a ``.mhd`` suffix is added if missing.
    :type path: str | Path
    :returns: The header path written.
    :rtype: Path
    :raises OSError: If either file cannot be written.
    """
    path = Path(path)
    if path.suffix.lower() != ".mhd":
        path = path.with_name(path.name + ".mhd")
    raw_path = path.with_suffix(".raw")
    dtype = _storage_dtype(volume)

    header = {
        "ObjectType": "Image",
        "NDims": "3",
        "BinaryData": "True",
        "BinaryDataByteOrderMSB": "False",
        "CompressedData": "False",
        "Offset": encode_value(volume.origin),
        "ElementSpacing": encode_value(volume.spacing),
        "DimSize": encode_value(volume.shape),
        "ElementType": DTYPE_NAMES[dtype],
        "ElementDataFile": raw_path.name,
    }
    payload = np.ascontiguousarray(volume.data.astype(dtype.newbyteorder("<")).transpose(2, 1, 0))
    raw_path.write_bytes(payload.tobytes())
    path.write_text("".join(f"{k} = {v}\n" for k, v in header.items()), encoding="ascii")
    return path
