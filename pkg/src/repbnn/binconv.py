"""Convolution execution: dense reference path and XNOR/popcount fast path.

The two paths are exact twins on sign-valued inputs.  Zero padding is
handled so they agree bit for bit: a padded position contributes 0 to the
dense dot product, so on the packed side padded positions are excluded from
both the XNOR popcount and the effective window size.

No scaling factors live here; scaling belongs to the batch-norm node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch
from .tensors import (
    BitTensor,
    ConvSpec,
    DenseTensor,
    _pack_bit_rows,
    pack_signs,
    repeat_channels,
    reshape_kernel,
    unpack_to_array,
)

# output pixels processed per popcount batch, bounds the xnor intermediate
_PIXEL_CHUNK = 4096


@dataclass(frozen=True)
class ConvResult:
    """Convolution output bundled with the spec that produced it."""

    output: DenseTensor
    spec: ConvSpec

    def check_binary_range(self) -> None:
        """Assert the +-c_in*kh*kw value range and parity of a binary conv.

        Only meaningful for padding-free binary convolutions, where every
        window covers exactly c_in*kh*kw sign products.
        """
        if not self.spec.binary or self.spec.padding != 0:
            return
        n = self.spec.in_channels * self.spec.kh * self.spec.kw
        vals = self.output.data
        if np.any(np.abs(vals) > n):
            raise ShapeMismatch(f"binary conv value outside [-{n}, {n}]")
        if np.any((vals.astype(np.int64) - n) % 2 != 0):
            raise ShapeMismatch(f"binary conv value with parity != {n} mod 2")


def _check_operands(x_dims, w_dims, spec: ConvSpec):
    n, c, h, w = x_dims
    if w_dims != (spec.c_out, spec.c_in, spec.kh, spec.kw):
        raise ShapeMismatch(
            f"kernel dims {w_dims} do not match spec {(spec.c_out, spec.c_in, spec.kh, spec.kw)}"
        )
    if c != spec.c_in:
        raise ShapeMismatch(f"input has {c} channels, spec expects {spec.c_in}")
    return spec.out_hw(h, w)


def conv2d_dense(x: DenseTensor, w: DenseTensor, spec: ConvSpec) -> DenseTensor:
    """Plain cross-correlation with zero padding, float64 accumulation.

    Serves as the reference implementation for the packed path and as the
    general full-precision convolution.
    """
    oh, ow = _check_operands(x.dims, w.dims, spec)
    p, s = spec.padding, spec.stride
    xp = np.pad(x.data.astype(np.float64), ((0, 0), (0, 0), (p, p), (p, p)))
    # windows: (n, c, oh, ow, kh, kw)
    win = sliding_window_view(xp, (spec.kh, spec.kw), axis=(2, 3))
    win = win[:, :, ::s, ::s][:, :, :oh, :ow]
    out = np.einsum("nchwuv,ocuv->nohw", win, w.data.astype(np.float64))
    return DenseTensor.from_array(out.astype(np.float32))


def conv2d_xnor(x: BitTensor, w: BitTensor, spec: ConvSpec) -> DenseTensor:
    """Binary convolution via XNOR and population count on packed words.

    Each output element is ``2*popcount(xnor(window, kernel_row) & valid) -
    popcount(valid)``, where ``valid`` masks out word padding and zero-padded
    border positions.  Bit-exactly equals :func:`conv2d_dense` on the
    unpacked +-1 tensors.
    """
    oh, ow = _check_operands(x.dims, w.dims, spec)
    n, c, h, ww = x.dims
    p, s = spec.padding, spec.stride
    window_bits = spec.c_in * spec.kh * spec.kw

    xb = unpack_to_array(x)
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p)))
    vp = np.pad(np.ones((n, c, h, ww), dtype=np.uint8), ((0, 0), (0, 0), (p, p), (p, p)))

    def rows(a):
        win = sliding_window_view(a, (spec.kh, spec.kw), axis=(2, 3))
        win = win[:, :, ::s, ::s][:, :, :oh, :ow]
        # (n, oh, ow, c, kh, kw) -> one row of window_bits per output pixel
        return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, window_bits)

    xw = _pack_bit_rows(rows(xp))
    vw = _pack_bit_rows(rows(vp))
    kw_ = _pack_bit_rows(unpack_to_array(w).reshape(spec.c_out, window_bits))

    valid_counts = np.bitwise_count(vw).sum(axis=1, dtype=np.int64)
    pixels = xw.shape[0]
    dots = np.empty((pixels, spec.c_out), dtype=np.int64)
    for lo in range(0, pixels, _PIXEL_CHUNK):
        hi = min(lo + _PIXEL_CHUNK, pixels)
        xnor = ~(xw[lo:hi, None, :] ^ kw_[None, :, :])
        matches = np.bitwise_count(xnor & vw[lo:hi, None, :]).sum(axis=2, dtype=np.int64)
        dots[lo:hi] = 2 * matches - valid_counts[lo:hi, None]

    out = dots.reshape(n, oh, ow, spec.c_out).transpose(0, 3, 1, 2)
    return DenseTensor.from_array(out.astype(np.float32))


def _reshape_kernel_bits(w: BitTensor, spec: ConvSpec) -> BitTensor:
    """Packed twin of reshape_kernel: repack rows for the reshaped dims."""
    flat = unpack_to_array(w).astype(np.float32).reshape(-1)
    return pack_signs(flat.reshape(spec.kernel_dims) * 2 - 1)


def rep_conv(x, w, spec: ConvSpec):
    """Replicating convolution: reshaped-kernel conv, then beta^2 channel copies.

    ``x`` must carry ``c_in*beta`` channels.  ``w`` may be given in base form
    ``(c_out, c_in, kh, kw)`` or already reshaped.  Dense in, dense out; packed
    in, dense out (conv results are integers either way).  The multiply count
    equals the beta=1 baseline's exactly.
    """
    inner = ConvSpec(
        c_in=spec.in_channels,
        c_out=spec.conv_out_channels,
        kh=spec.kh,
        kw=spec.kw,
        stride=spec.stride,
        padding=spec.padding,
        binary=spec.binary,
    )
    if isinstance(x, BitTensor):
        if not isinstance(w, BitTensor):
            raise ShapeMismatch("packed input requires a packed kernel")
        if w.dims == spec.base_kernel_dims:
            w = _reshape_kernel_bits(w, spec)
        elif w.dims != spec.kernel_dims:
            raise ShapeMismatch(f"kernel dims {w.dims} fit neither base nor reshaped form")
        y = conv2d_xnor(x, w, inner)
    else:
        if w.dims == spec.base_kernel_dims:
            w = reshape_kernel(w, spec)
        elif w.dims != spec.kernel_dims:
            raise ShapeMismatch(f"kernel dims {w.dims} fit neither base nor reshaped form")
        y = conv2d_dense(x, w, inner)
    return repeat_channels(y, spec.beta * spec.beta)


def quantization_levels(spec: ConvSpec) -> int:
    """Distinct values a binary conv output can take: true_c_in*kh*kw + 1.

    The true input channel count is ``c_in*beta``; replication widens the
    value lattice accordingly.
    """
    if not spec.binary:
        raise ShapeMismatch("quantization levels are defined for binary specs")
    return spec.in_channels * spec.kh * spec.kw + 1
