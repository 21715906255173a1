"""Voxel volumes and a minimal NIfTI-1 (.nii.gz) reader/writer.

Volumes are dense 3-D grids indexed [x, y, z]. The serialized element
order is x-fastest, which matches the NIfTI convention, so arrays are
raveled and rebuilt with order='F'.
"""

from __future__ import annotations

import gzip
import io
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

HEADER_FMT = "<i10s18sih1s1s8h3f4h8ffffh1s1s4fii80s24s2h3f3f4f4f4f16s4s"
HEADER_SIZE = 348
DATA_OFFSET = 352  # header + 4-byte extension flag
MAGIC = b"n+1\x00"
DTYPE_UINT8 = 2
DTYPE_FLOAT32 = 16
MAX_DIM = 32767  # dim fields are int16

assert struct.calcsize(HEADER_FMT) == HEADER_SIZE


class NiftiParseError(Exception):
    """A file violates the supported NIfTI-1 subset."""


class VolumeKind(str, Enum):
    BINARY_MASK = "binary_mask"
    INTENSITY = "intensity"


@dataclass(eq=False)
class VoxelVolume:
    """A labeled 3-D grid with isotropic-or-not voxel spacing in mm.

    BINARY_MASK volumes hold uint8 values in {0, 1}. INTENSITY volumes
    hold float32 values in [0, 1], except corrupted voxels which hold
    exactly -1.
    """

    data: np.ndarray
    kind: VolumeKind
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {self.data.shape}")
        self.kind = VolumeKind(self.kind)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive floats, got {self.spacing}")
        if self.kind is VolumeKind.BINARY_MASK:
            if self.data.dtype != np.uint8:
                bad = self.data
                if not np.isin(bad, (0, 1)).all():
                    raise ValueError("binary mask contains values other than 0 and 1")
                self.data = bad.astype(np.uint8)
            elif self.data.max(initial=0) > 1:
                raise ValueError("binary mask contains values other than 0 and 1")
        else:
            self.data = self.data.astype(np.float32, copy=False)
            v = self.data
            ok = ((v >= 0.0) & (v <= 1.0)) | (v == -1.0)
            if not ok.all():
                raise ValueError(
                    "intensity values must lie in [0, 1] or equal -1 exactly; "
                    f"found range [{v.min():.6g}, {v.max():.6g}]"
                )

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)


def _build_header(vol: VoxelVolume) -> bytes:
    nx, ny, nz = vol.dims
    if vol.kind is VolumeKind.BINARY_MASK:
        datatype, bitpix = DTYPE_UINT8, 8
    else:
        datatype, bitpix = DTYPE_FLOAT32, 32
    sx, sy, sz = vol.spacing
    return struct.pack(
        HEADER_FMT,
        HEADER_SIZE,            # sizeof_hdr
        b"", b"",               # data_type, db_name (unused legacy)
        0, 0, b"r", b"\x00",    # extents, session_error, regular, dim_info
        3, nx, ny, nz, 1, 1, 1, 1,          # dim
        0.0, 0.0, 0.0,                      # intent_p1..p3
        0, datatype, bitpix, 0,             # intent_code, datatype, bitpix, slice_start
        1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0,  # pixdim (qfac first)
        float(DATA_OFFSET),                 # vox_offset
        1.0, 0.0,                           # scl_slope, scl_inter
        0, b"\x00", b"\x02",                # slice_end, slice_code, xyzt_units (mm)
        0.0, 0.0, 0.0, 0.0,                 # cal_max, cal_min, slice_duration, toffset
        0, 0,                               # glmax, glmin
        b"vesselgen", b"",                  # descrip, aux_file
        0, 1,                               # qform_code, sform_code=ALIGNED_ANAT
        0.0, 0.0, 0.0,                      # quatern_b/c/d
        0.0, 0.0, 0.0,                      # qoffset_x/y/z
        sx, 0.0, 0.0, 0.0,                  # srow_x (axis-aligned, scaled by spacing)
        0.0, sy, 0.0, 0.0,                  # srow_y
        0.0, 0.0, sz, 0.0,                  # srow_z
        b"",                                # intent_name
        MAGIC,
    )


def nifti_bytes(vol: VoxelVolume) -> bytes:
    """Serialize a volume to gzipped NIfTI-1 bytes.

    The bytes depend only on the volume contents (gzip name and mtime
    are pinned), so equal volumes serialize identically.
    """
    for i, n in enumerate(vol.dims):
        if n > MAX_DIM:
            raise ValueError(
                f"dim[{i + 1}] = {n} overflows the 16-bit NIfTI dim field (max {MAX_DIM})"
            )
    payload = vol.data.ravel(order="F").tobytes()
    buf = io.BytesIO()
    # level 1: intensity payloads are noise-dominated, higher levels cost
    # 3x the time for a few percent of size; name and mtime pinned
    with gzip.GzipFile("", fileobj=buf, mode="wb", compresslevel=1, mtime=0) as gz:
        gz.write(_build_header(vol))
        gz.write(b"\x00\x00\x00\x00")  # no header extensions
        gz.write(payload)
    return buf.getvalue()


def write_nifti(vol: VoxelVolume, path: str | Path) -> None:
    """Write a gzipped NIfTI-1 volume. Output bytes depend only on the volume."""
    with open(path, "wb") as f:
        f.write(nifti_bytes(vol))


def read_nifti(path: str | Path) -> VoxelVolume:
    """Read a volume written by write_nifti, validating the header subset."""
    with open(path, "rb") as f:
        head = f.read(2)
        f.seek(0)
        if head != b"\x1f\x8b":
            raise NiftiParseError(f"{path}: not a gzip stream")
        try:
            blob = gzip.decompress(f.read())
        except (OSError, EOFError) as e:
            raise NiftiParseError(f"{path}: corrupt gzip stream ({e})") from None

    if len(blob) < DATA_OFFSET:
        raise NiftiParseError(
            f"{path}: truncated header, need {DATA_OFFSET} bytes, got {len(blob)}"
        )
    fields = struct.unpack(HEADER_FMT, blob[:HEADER_SIZE])
    sizeof_hdr = fields[0]
    dim = fields[7:15]
    datatype, bitpix = fields[19], fields[20]
    pixdim = fields[22:30]
    vox_offset = fields[30]
    magic = fields[-1]

    if sizeof_hdr != HEADER_SIZE:
        raise NiftiParseError(
            f"{path}: sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE} "
            "(not a little-endian NIfTI-1 file)"
        )
    if magic != MAGIC:
        raise NiftiParseError(f"{path}: magic is {magic!r}, expected {MAGIC!r}")
    if dim[0] != 3:
        raise NiftiParseError(f"{path}: dim[0] is {dim[0]}, only 3-D volumes supported")
    for i in (1, 2, 3):
        if dim[i] < 1:
            raise NiftiParseError(f"{path}: dim[{i}] is {dim[i]}, must be >= 1")
    if datatype == DTYPE_UINT8:
        kind, dtype, want_bitpix = VolumeKind.BINARY_MASK, np.uint8, 8
    elif datatype == DTYPE_FLOAT32:
        kind, dtype, want_bitpix = VolumeKind.INTENSITY, np.dtype("<f4"), 32
    else:
        raise NiftiParseError(
            f"{path}: datatype {datatype} unsupported, expected "
            f"{DTYPE_UINT8} (uint8) or {DTYPE_FLOAT32} (float32)"
        )
    if bitpix != want_bitpix:
        raise NiftiParseError(
            f"{path}: bitpix {bitpix} inconsistent with datatype {datatype}"
        )
    for i in (1, 2, 3):
        if not pixdim[i] > 0:
            raise NiftiParseError(f"{path}: pixdim[{i}] is {pixdim[i]}, must be > 0")
    offset = int(round(vox_offset))
    if offset < DATA_OFFSET:
        raise NiftiParseError(f"{path}: vox_offset {vox_offset} below minimum {DATA_OFFSET}")

    nx, ny, nz = int(dim[1]), int(dim[2]), int(dim[3])
    nbytes = nx * ny * nz * (want_bitpix // 8)
    body = blob[offset : offset + nbytes]
    if len(body) < nbytes:
        raise NiftiParseError(
            f"{path}: data truncated, need {nbytes} bytes at vox_offset {offset}, "
            f"got {len(body)}"
        )
    data = np.frombuffer(body, dtype=dtype).reshape((nx, ny, nz), order="F")
    spacing = (float(pixdim[1]), float(pixdim[2]), float(pixdim[3]))
    try:
        return VoxelVolume(data=data.copy(), kind=kind, spacing=spacing)
    except ValueError as e:
        raise NiftiParseError(f"{path}: {e}") from None
