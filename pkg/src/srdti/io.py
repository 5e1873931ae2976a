"""File I/O: single-file NIfTI-1 volumes, FSL gradient tables and stack manifests."""
from __future__ import annotations

import json
import logging
import os
import struct
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from .volume import CHANNEL_ORDER, DwiStack, GradientTable, Volume

log = logging.getLogger(__name__)

NIFTI_HEADER_SIZE = 348
NIFTI_MAGIC = b"n+1\x00"
DT_FLOAT32 = 16
# Header extension code 6 ("comment") carries the exact float64 geometry as JSON.
_EXT_CODE = 6
_UNITS_MM = 2


class NiftiError(IOError):
    pass


class GradientTableError(ValueError):
    pass


def _geometry_extension(vol: Volume) -> bytes:
    text = json.dumps({"srdti_geometry": {"spacing": list(vol.spacing), "origin": list(vol.origin)}})
    body = text.encode("utf-8")
    esize = 8 + len(body)
    esize += -esize % 16
    return struct.pack("<ii", esize, _EXT_CODE) + body.ljust(esize - 8, b"\x00")


def write_nifti(vol: Volume, path) -> None:
    """Write ``vol`` as a little-endian float32 ``.nii`` file."""
    nx, ny, nz = vol.dims
    dx, dy, dz = vol.spacing
    # NIfTI affines address voxel centers; ours sit at origin + 0.5 * spacing.
    qx, qy, qz = (o + 0.5 * s for o, s in zip(vol.origin, vol.spacing))
    ext = _geometry_extension(vol)
    vox_offset = NIFTI_HEADER_SIZE + 4 + len(ext)

    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    hdr[38:39] = b"r"
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<hhh", hdr, 70, DT_FLOAT32, 32, 0)
    struct.pack_into("<8f", hdr, 76, 1.0, dx, dy, dz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<fff", hdr, 108, float(vox_offset), 1.0, 0.0)
    hdr[123] = _UNITS_MM
    hdr[148:148 + 5] = b"srdti"
    struct.pack_into("<hh", hdr, 252, 1, 1)
    struct.pack_into("<6f", hdr, 256, 0.0, 0.0, 0.0, qx, qy, qz)
    struct.pack_into("<4f", hdr, 280, dx, 0.0, 0.0, qx)
    struct.pack_into("<4f", hdr, 296, 0.0, dy, 0.0, qy)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, dz, qz)
    hdr[344:348] = NIFTI_MAGIC

    payload = np.asarray(vol.data, dtype="<f4").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(struct.pack("<4B", 1, 0, 0, 0))
        fh.write(ext)
        fh.write(payload)


def _read_extensions(raw: bytes, start: int, stop: int):
    pos = start
    while pos + 8 <= stop:
        esize, ecode = struct.unpack_from("<ii", raw, pos)
        if esize < 8 or pos + esize > stop:
            break
        yield ecode, raw[pos + 8:pos + esize]
        pos += esize


def read_nifti(path) -> Volume:
    """Read a single-file float32 NIfTI-1 volume."""
    raw = Path(path).read_bytes()
    if len(raw) < NIFTI_HEADER_SIZE:
        raise NiftiError(f"{path}: file too short for a NIfTI-1 header ({len(raw)} bytes)")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == NIFTI_HEADER_SIZE:
            raise NiftiError(f"{path}: big-endian NIfTI files are not supported")
        raise NiftiError(f"{path}: bad sizeof_hdr {sizeof_hdr}, expected 348")
    if raw[344:348] != NIFTI_MAGIC:
        raise NiftiError(f"{path}: bad magic {raw[344:348]!r}, expected single-file 'n+1'")
    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7 or any(d != 1 for d in dim[4:ndim + 1]) or ndim < 3:
        raise NiftiError(f"{path}: expected a 3D volume, got dim={dim}")
    datatype, bitpix = struct.unpack_from("<hh", raw, 70)
    if datatype != DT_FLOAT32 or bitpix != 32:
        raise NiftiError(f"{path}: unsupported datatype code {datatype} (only float32 = 16)")
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset, slope, inter = struct.unpack_from("<fff", raw, 108)
    if slope not in (0.0, 1.0) or inter != 0.0:
        raise NiftiError(f"{path}: intensity scaling (slope={slope}, inter={inter}) is not supported")
    qoffset = struct.unpack_from("<3f", raw, 268)

    shape = tuple(int(d) for d in dim[1:4])
    if min(shape) < 1:
        raise NiftiError(f"{path}: non-positive dims {shape}")
    offset = int(vox_offset)
    need = int(np.prod(shape)) * 4
    if offset < NIFTI_HEADER_SIZE or len(raw) - offset < need:
        raise NiftiError(
            f"{path}: header dims {shape} need {need} bytes of data, file has {max(len(raw) - offset, 0)}")

    spacing = tuple(float(p) for p in pixdim[1:4])
    origin = tuple(float(q) - 0.5 * s for q, s in zip(qoffset, spacing))
    for ecode, body in _read_extensions(raw, NIFTI_HEADER_SIZE + 4, offset):
        if ecode != _EXT_CODE:
            continue
        try:
            geom = json.loads(body.rstrip(b"\x00").decode("utf-8"))["srdti_geometry"]
        except (ValueError, KeyError, UnicodeDecodeError):
            continue
        exact_spacing = tuple(float(s) for s in geom["spacing"])
        exact_origin = tuple(float(o) for o in geom["origin"])
        # header (float32) must agree with the exact record, otherwise the header wins
        if np.allclose(exact_spacing, spacing, rtol=1e-6, atol=1e-6) and np.allclose(
                exact_origin, origin, rtol=1e-6, atol=1e-4):
            spacing, origin = exact_spacing, exact_origin

    data = np.frombuffer(raw, dtype="<f4", count=int(np.prod(shape)), offset=offset)
    data = data.reshape(shape, order="F").astype(np.float32)
    return Volume(data, spacing, origin)


def _read_rows(path, expected_rows):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append((lineno, [float(t) for t in line.split()]))
            except ValueError as exc:
                raise GradientTableError(f"{path} line {lineno}: {exc}") from None
    if len(rows) != expected_rows:
        raise GradientTableError(f"{path}: expected {expected_rows} non-empty rows, found {len(rows)}")
    return rows


def read_gradient_table(bvecs_path, bvals_path) -> GradientTable:
    """Read FSL-style bvecs/bvals; b-values are converted from s/mm^2 to ms/um^2."""
    vec_rows = _read_rows(bvecs_path, 3)
    (bval_line, bvals), = _read_rows(bvals_path, 1)
    n = len(bvals)
    for lineno, row in vec_rows:
        if len(row) != n:
            raise GradientTableError(
                f"{bvecs_path} line {lineno}: {len(row)} columns, but {bvals_path} has {n}")
    vecs = np.array([row for _, row in vec_rows], dtype=np.float64).T
    norms = np.linalg.norm(vecs, axis=1)
    bad = (norms > 0) & (np.abs(norms - 1) > 1e-6)
    if np.any(bad):
        msg = f"{bvecs_path}: normalized {int(bad.sum())} non-unit direction(s) (columns {np.flatnonzero(bad).tolist()})"
        warnings.warn(msg)
        log.warning(msg)
    nz = norms > 0
    vecs[nz] /= norms[nz, None]
    return GradientTable(vecs, np.asarray(bvals) / 1000.0)


def write_gradient_table(table: GradientTable, bvecs_path, bvals_path) -> None:
    with open(bvecs_path, "w") as fh:
        for axis in range(3):
            fh.write(" ".join(f"{v:.17g}" for v in table.directions[:, axis]) + "\n")
    with open(bvals_path, "w") as fh:
        fh.write(" ".join(f"{b * 1000.0:.17g}" for b in table.bvalues) + "\n")


# --- stack manifests --------------------------------------------------------

MANIFEST = "stack.json"


def write_stack(stack: DwiStack, directory, extra: Optional[dict] = None) -> Path:
    """Write every member volume plus bvecs/bvals and a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, vol in stack.members():
        files[name] = f"{name}.nii"
        write_nifti(vol, directory / files[name])
    write_gradient_table(stack.table, directory / "bvecs", directory / "bvals")
    manifest = {
        "channel_order": list(CHANNEL_ORDER),
        "b0": files["b0"],
        "dwis": [files[f"dwi{i + 1}"] for i in range(len(stack.dwis))],
        "t1": files.get("t1"),
        "mask": files.get("mask"),
        "bvecs": "bvecs",
        "bvals": "bvals",
    }
    if extra:
        manifest.update(extra)
    with open(directory / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory / MANIFEST


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no stack manifest at {path}")
    with open(path) as fh:
        return json.load(fh)


def read_stack(directory) -> DwiStack:
    directory = Path(directory)
    m = read_manifest(directory)
    table = read_gradient_table(directory / m["bvecs"], directory / m["bvals"])
    b0 = read_nifti(directory / m["b0"])
    dwis = tuple(read_nifti(directory / f) for f in m["dwis"])
    t1 = read_nifti(directory / m["t1"]) if m.get("t1") else None
    mask = read_nifti(directory / m["mask"]) if m.get("mask") else None
    return DwiStack(b0, dwis, table, t1, mask)


def atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
