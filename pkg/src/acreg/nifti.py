"""Single-file NIfTI-1 reader and writer for the volume types used here.

Supported subset: magic ``n+1\\0``, datatypes uint8 (2), int16 (4), float32
(16) and float64 (64), scalar/label volumes as ``dim[0]=3`` and vector fields
as ``dim[0]=5`` with ``dim[4]=1``, ``dim[5]=3`` and intent code 1007. Both
byte orders are read; files are always written little-endian with
``vox_offset=352``. ``scl_slope``/``scl_inter`` are applied on read when the
slope is nonzero. Orientation fields (qform/sform) are parsed and can be
copied onto outputs, but data is never resampled against them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import VolumeFormatError
from .transform import DisplacementField, VelocityField
from .volume import GridMeta, LabelVolume, ScalarVolume, WHITE_MATTER

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"
INTENT_VECTOR = 1007

DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16
DT_FLOAT64 = 64

_DTYPES = {
    DT_UINT8: ("u1", 8),
    DT_INT16: ("i2", 16),
    DT_FLOAT32: ("f4", 32),
    DT_FLOAT64: ("f8", 64),
}

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"), ("data_type", "S10"), ("db_name", "S18"),
    ("extents", "i4"), ("session_error", "i2"), ("regular", "S1"), ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"), ("intent_p2", "f4"), ("intent_p3", "f4"),
    ("intent_code", "i2"), ("datatype", "i2"), ("bitpix", "i2"), ("slice_start", "i2"),
    ("pixdim", "f4", (8,)), ("vox_offset", "f4"), ("scl_slope", "f4"), ("scl_inter", "f4"),
    ("slice_end", "i2"), ("slice_code", "u1"), ("xyzt_units", "u1"),
    ("cal_max", "f4"), ("cal_min", "f4"), ("slice_duration", "f4"), ("toffset", "f4"),
    ("glmax", "i4"), ("glmin", "i4"), ("descrip", "S80"), ("aux_file", "S24"),
    ("qform_code", "i2"), ("sform_code", "i2"),
    ("quatern_b", "f4"), ("quatern_c", "f4"), ("quatern_d", "f4"),
    ("qoffset_x", "f4"), ("qoffset_y", "f4"), ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)), ("srow_y", "f4", (4,)), ("srow_z", "f4", (4,)),
    ("intent_name", "S16"), ("magic", "S4"),
]

_ORIENTATION_FIELDS = (
    "qform_code", "sform_code", "quatern_b", "quatern_c", "quatern_d",
    "qoffset_x", "qoffset_y", "qoffset_z", "srow_x", "srow_y", "srow_z",
)


def _header_dtype(byteorder="<"):
    # numpy wants (name, format[, shape]) tuples; byte strings take no order
    out = []
    for entry in _HEADER_FIELDS:
        name, fmt = entry[0], entry[1]
        fmt = fmt if fmt.startswith("S") else byteorder + fmt
        out.append((name, fmt) + tuple(entry[2:]))
    return np.dtype(out)


assert _header_dtype().itemsize == HEADER_SIZE


@dataclass
class NiftiHeader:
    """Parsed header record kept around so orientation can be copied out."""

    raw: np.void
    byteorder: str

    @property
    def dims(self):
        d = self.raw["dim"]
        return tuple(int(x) for x in d[1:4])

    @property
    def spacing(self):
        p = self.raw["pixdim"]
        return tuple(float(x) for x in p[1:4])


def _read_header(path):
    with open(path, "rb") as fh:
        blob = fh.read(HEADER_SIZE)
    if len(blob) < HEADER_SIZE:
        raise VolumeFormatError(f"{path}: truncated header ({len(blob)} bytes, sizeof_hdr needs 348)")
    for byteorder in ("<", ">"):
        raw = np.frombuffer(blob, dtype=_header_dtype(byteorder), count=1)[0]
        if int(raw["sizeof_hdr"]) == HEADER_SIZE:
            break
    else:
        raise VolumeFormatError(f"{path}: sizeof_hdr is not 348 in either byte order")
    # numpy strips trailing NULs from S-typed fields, so "n+1\0" reads as "n+1"
    if bytes(raw["magic"]) != MAGIC.rstrip(b"\x00"):
        raise VolumeFormatError(f"{path}: bad magic {bytes(raw['magic'])!r}, expected {MAGIC!r}")
    return NiftiHeader(raw, byteorder)


def _read_data(path, header):
    raw = header.raw
    code = int(raw["datatype"])
    if code not in _DTYPES:
        raise VolumeFormatError(f"{path}: unsupported datatype code {code}")
    np_dtype = np.dtype(header.byteorder + _DTYPES[code][0])
    ndim = int(raw["dim"][0])
    if ndim == 3:
        shape = header.dims
    elif ndim == 5:
        if int(raw["dim"][4]) != 1 or int(raw["dim"][5]) != 3:
            raise VolumeFormatError(
                f"{path}: vector field must have dim[4]=1 and dim[5]=3, "
                f"got {int(raw['dim'][4])} and {int(raw['dim'][5])}")
        shape = header.dims + (1, 3)
    else:
        raise VolumeFormatError(f"{path}: unsupported dim[0]={ndim} (expected 3 or 5)")
    count = int(np.prod(shape))
    offset = int(raw["vox_offset"])
    with open(path, "rb") as fh:
        fh.seek(offset)
        data = np.fromfile(fh, dtype=np_dtype, count=count)
    if data.size != count:
        raise VolumeFormatError(
            f"{path}: truncated data ({data.size} of {count} values after vox_offset)")
    data = data.reshape(shape, order="F").astype(np.float64)
    slope = float(raw["scl_slope"])
    inter = float(raw["scl_inter"])
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = data * slope + inter
    return data


def read_volume(path, expect=None):
    """Read a supported NIfTI-1 file.

    ``expect`` picks the returned type: "scalar", "labels", "displacement" or
    "velocity". When omitted, 3-D uint8 data becomes a LabelVolume, other 3-D
    data a ScalarVolume, and 5-D vector data a DisplacementField. Returns
    ``(object, header)``; the header can be passed to :func:`write_volume` to
    carry orientation over.
    """
    header = _read_header(path)
    data = _read_data(path, header)
    meta = GridMeta(header.dims, header.spacing)
    ndim = int(header.raw["dim"][0])

    if ndim == 5:
        if expect not in (None, "displacement", "velocity"):
            raise VolumeFormatError(f"{path}: expected a {expect} volume but dim[0]=5 (vector field)")
        if int(header.raw["intent_code"]) != INTENT_VECTOR:
            raise VolumeFormatError(
                f"{path}: intent_code {int(header.raw['intent_code'])} is not vector ({INTENT_VECTOR})")
        u = np.ascontiguousarray(data[:, :, :, 0, :])
        obj = VelocityField(meta, u) if expect == "velocity" else DisplacementField(meta, u)
        return obj, header

    if expect in ("displacement", "velocity"):
        raise VolumeFormatError(f"{path}: expected a vector field but dim[0]=3")
    is_labels = expect == "labels" or (expect is None and int(header.raw["datatype"]) == DT_UINT8)
    if is_labels:
        rounded = np.round(data)
        if np.abs(data - rounded).max() > 0 or rounded.min() < 0 or rounded.max() > WHITE_MATTER:
            raise VolumeFormatError(
                f"{path}: labels out of range after scl_slope/scl_inter, values must be integers in 0..3")
        return LabelVolume(meta, rounded.astype(np.uint8)), header
    return ScalarVolume(meta, data), header


def _blank_header(dims, spacing, like=None):
    raw = np.zeros((), dtype=_header_dtype("<"))
    raw["sizeof_hdr"] = HEADER_SIZE
    raw["regular"] = b"r"
    raw["pixdim"][0] = 1.0
    raw["pixdim"][1:4] = spacing
    raw["vox_offset"] = VOX_OFFSET
    raw["scl_slope"] = 1.0
    raw["scl_inter"] = 0.0
    raw["xyzt_units"] = 2  # millimeters
    raw["magic"] = MAGIC
    if like is not None:
        for name in _ORIENTATION_FIELDS:
            raw[name] = like.raw[name]
    else:
        raw["sform_code"] = 1
        raw["srow_x"] = (spacing[0], 0, 0, 0)
        raw["srow_y"] = (0, spacing[1], 0, 0)
        raw["srow_z"] = (0, 0, spacing[2], 0)
    return raw


def write_volume(path, obj, like: NiftiHeader | None = None):
    """Write a volume or field; labels as uint8, everything else as float32.

    ``like`` copies the orientation fields of a previously read header onto
    the output.
    """
    if isinstance(obj, LabelVolume):
        if obj.labels.max(initial=0) > WHITE_MATTER:
            raise VolumeFormatError(f"{path}: refusing to write labels outside 0..3")
        data = np.asarray(obj.labels, dtype=np.uint8)
        code, ndim, shape = DT_UINT8, 3, obj.meta.dims
    elif isinstance(obj, ScalarVolume):
        data = obj.values.astype(np.float32)
        code, ndim, shape = DT_FLOAT32, 3, obj.meta.dims
    elif isinstance(obj, (DisplacementField, VelocityField)):
        u = obj.u if isinstance(obj, DisplacementField) else obj.v
        data = u.astype(np.float32).reshape(obj.meta.dims + (1, 3))
        code, ndim, shape = DT_FLOAT32, 5, obj.meta.dims + (1, 3)
    else:
        raise VolumeFormatError(f"cannot write object of type {type(obj).__name__}")

    raw = _blank_header(obj.meta.dims, obj.meta.spacing, like)
    raw["dim"][0] = ndim
    raw["dim"][1:1 + len(shape)] = shape
    raw["dim"][1 + len(shape):] = 1
    raw["datatype"] = code
    raw["bitpix"] = _DTYPES[code][1]
    if ndim == 5:
        raw["intent_code"] = INTENT_VECTOR

    try:
        with open(path, "wb") as fh:
            fh.write(raw.tobytes())
            fh.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
            fh.write(np.asfortranarray(data).tobytes(order="F"))
    except OSError as err:
        raise VolumeFormatError(f"{path}: write failed ({err})") from err
