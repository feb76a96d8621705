#!/usr/bin/env python3
"""Convert a MATLAB-container hyperspectral dataset (cube + ground truth)
into an HST file.

Reads classic MAT files through scipy.io and v7.3 (HDF5) containers
through h5py.  Bands listed in --drop-bands (0-based) are removed before
writing; ground-truth labels are re-indexed to contiguous 1..C in
ascending source order and the mapping is printed.

Output format (little-endian): magic "HST1", u32 height, u32 width,
u32 bands, u32 label flag (always 1 here), height*width*bands f32 values
in (row, col, band) order, then height*width u16 labels in (row, col)
order.

Usage:
  convert.py --cube PATH --gt PATH --cube-var NAME --gt-var NAME \
             [--drop-bands i,j,...] --out PATH
"""

import argparse
import struct
import sys

import numpy as np


class ConvertError(RuntimeError):
    pass


def load_mat_variable(path, name):
    """Fetch one array from a MATLAB container, any supported version."""
    try:
        from scipy.io import loadmat

        doc = loadmat(path)
        if name not in doc:
            available = [k for k in doc if not k.startswith("__")]
            raise ConvertError(
                f"variable {name!r} not found in {path} (has {available})"
            )
        return np.asarray(doc[name])
    except NotImplementedError:
        # v7.3 containers are HDF5; MATLAB stores arrays column-major, so
        # the h5py view has reversed axes.
        import h5py

        with h5py.File(path, "r") as fh:
            if name not in fh:
                raise ConvertError(
                    f"variable {name!r} not found in {path} (has {list(fh)})"
                )
            arr = np.array(fh[name])
        return arr.transpose(tuple(reversed(range(arr.ndim))))


def parse_drop_bands(text, band_count):
    if not text:
        return []
    indices = [int(part) for part in text.split(",") if part != ""]
    if len(set(indices)) != len(indices):
        raise ConvertError(f"drop-band indices must be unique: {indices}")
    bad = [i for i in indices if not 0 <= i < band_count]
    if bad:
        raise ConvertError(
            f"drop-band indices {bad} out of range for {band_count} bands"
        )
    return sorted(indices)


def reindex_labels(gt):
    """Map the nonzero source labels to contiguous 1..C, ascending order.

    Returns (labels, mapping) where mapping is {source: new}.
    """
    gt = np.asarray(gt)
    if gt.ndim != 2:
        raise ConvertError(f"ground truth must be 2-D, got shape {gt.shape}")
    if not np.issubdtype(gt.dtype, np.number):
        raise ConvertError(f"ground truth must be numeric, got {gt.dtype}")
    as_int = gt.astype(np.int64)
    if not np.array_equal(as_int, gt):
        raise ConvertError("ground truth has non-integer labels")
    if as_int.min() < 0:
        raise ConvertError(f"negative label {as_int.min()} in ground truth")
    source_classes = sorted(int(v) for v in np.unique(as_int) if v != 0)
    mapping = {src: i + 1 for i, src in enumerate(source_classes)}
    if len(mapping) > 0xFFFF:
        raise ConvertError("more classes than a u16 label can hold")
    labels = np.zeros_like(as_int)
    for src, new in mapping.items():
        labels[as_int == src] = new
    return labels, mapping


def convert(cube_path, gt_path, cube_var, gt_var, drop_bands, out_path):
    cube = load_mat_variable(cube_path, cube_var)
    gt = load_mat_variable(gt_path, gt_var)
    if cube.ndim != 3:
        raise ConvertError(f"cube must be 3-D (rows, cols, bands), got {cube.shape}")
    height, width, bands = cube.shape
    if gt.shape != (height, width):
        raise ConvertError(
            f"ground truth shape {gt.shape} does not match cube spatial "
            f"dims ({height}, {width})"
        )
    if not np.isfinite(cube).all():
        raise ConvertError("cube contains non-finite values")

    drop = parse_drop_bands(drop_bands, bands)
    if drop:
        keep = [b for b in range(bands) if b not in set(drop)]
        cube = cube[:, :, keep]
        bands = cube.shape[2]

    labels, mapping = reindex_labels(gt)

    with open(out_path, "wb") as fh:
        fh.write(b"HST1")
        fh.write(struct.pack("<4I", height, width, bands, 1))
        fh.write(np.ascontiguousarray(cube, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())

    print(f"wrote {out_path}: {height} x {width} x {bands} (labels present)")
    if mapping:
        print("label mapping (source -> new):")
        for src, new in mapping.items():
            print(f"  {src} -> {new}")
    print("class histogram:")
    for src, new in mapping.items():
        print(f"  class {new}: {int((labels == new).sum())} pixels")
    print(f"  unlabeled: {int((labels == 0).sum())} pixels")
    return height, width, bands


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Convert MATLAB-container hyperspectral data to HST."
    )
    parser.add_argument("--cube", required=True, help="MAT file with the data cube")
    parser.add_argument("--gt", required=True, help="MAT file with the ground truth")
    parser.add_argument("--cube-var", required=True, help="cube variable name")
    parser.add_argument("--gt-var", required=True, help="ground-truth variable name")
    parser.add_argument(
        "--drop-bands",
        default="",
        help="comma-separated 0-based band indices to remove",
    )
    parser.add_argument("--out", required=True, help="output .hst path")
    args = parser.parse_args(argv)
    try:
        convert(args.cube, args.gt, args.cube_var, args.gt_var, args.drop_bands, args.out)
    except (ConvertError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
