"""Dense and bit-packed NCHW tensors plus binarization and channel replication.

Conventions fixed here and relied on everywhere else:

* ``sign(0) = +1``. Bit value 1 encodes +1, bit value 0 encodes -1.
* Bit packing flattens ``(c, h, w)`` per sample in channel-major (row-major)
  order into little-endian 64-bit words, LSB first.  Trailing pad bits are
  zero and are masked out of every population count.
* Layout is NCHW throughout; kernels are ``(c_out, c_in, kh, kw)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import NonDivisibleChannels, ShapeMismatch

WORD_BITS = 64

Dims = tuple[int, int, int, int]


def _check_dims(dims) -> Dims:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or any(d < 0 for d in dims):
        raise ShapeMismatch(f"dims must be four non-negative integers, got {dims}")
    return dims


@dataclass(frozen=True)
class DenseTensor:
    """Rank-4 real-valued tensor, float32, immutable after construction."""

    dims: Dims
    data: np.ndarray

    @classmethod
    def from_array(cls, arr) -> "DenseTensor":
        a = np.ascontiguousarray(arr, dtype=np.float32)
        if a.ndim != 4:
            raise ShapeMismatch(f"expected 4-d array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ShapeMismatch("non-finite values are not admitted")
        a.flags.writeable = False
        return cls(_check_dims(a.shape), a)

    @classmethod
    def zeros(cls, dims) -> "DenseTensor":
        dims = _check_dims(dims)
        return cls.from_array(np.zeros(dims, dtype=np.float32))

    @property
    def size(self) -> int:
        n, c, h, w = self.dims
        return n * c * h * w

    def to_array(self) -> np.ndarray:
        return self.data


@dataclass(frozen=True)
class BitTensor:
    """Sign-valued tensor packed into 64-bit words, one padded row per sample.

    ``words`` has shape ``(n, words_per_sample)``.  Bit ``k`` of the flattened
    word row encodes element ``k`` of the sample's flattened ``(c, h, w)``
    block; pad bits beyond ``c*h*w`` are zero.
    """

    dims: Dims
    words: np.ndarray

    @property
    def bits_per_sample(self) -> int:
        _, c, h, w = self.dims
        return c * h * w

    @property
    def pad_bits(self) -> int:
        return self.words.shape[1] * WORD_BITS - self.bits_per_sample

    @property
    def size(self) -> int:
        n, c, h, w = self.dims
        return n * c * h * w


def _pack_bit_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a (rows, nbits) uint8 0/1 array into (rows, words) uint64."""
    rows, nbits = bits.shape
    packed = np.packbits(bits, axis=1, bitorder="little")
    nbytes = packed.shape[1]
    pad = (-nbytes) % 8
    if pad:
        packed = np.pad(packed, ((0, 0), (0, pad)))
    words = packed.view("<u8")
    return np.ascontiguousarray(words.astype(np.uint64, copy=False))

def _unpack_bit_rows(words: np.ndarray, nbits: int) -> np.ndarray:
    """Inverse of _pack_bit_rows; returns (rows, nbits) uint8 0/1."""
    as_bytes = words.astype("<u8", copy=False).view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")
    return bits[:, :nbits]


def pack_signs(arr) -> BitTensor:
    """Pack a +-1-valued (or generally sign-classified) 4-d array.

    Values >= 0 map to bit 1 (+1), values < 0 to bit 0 (-1).
    """
    a = np.asarray(arr)
    if a.ndim != 4:
        raise ShapeMismatch(f"expected 4-d array, got shape {a.shape}")
    n = a.shape[0]
    bits = (a >= 0).astype(np.uint8).reshape(n, -1)
    if bits.shape[1] == 0:
        words = np.zeros((n, 0), dtype=np.uint64)
    else:
        words = _pack_bit_rows(bits)
    words.flags.writeable = False
    return BitTensor(_check_dims(a.shape), words)


def sign_binarize(x: DenseTensor) -> BitTensor:
    """Binarize by sign, with sign(0) = +1, into the packed representation."""
    return pack_signs(x.data)


def unpack_to_dense(x: BitTensor) -> DenseTensor:
    """Expand packed bits back to a +-1.0 float tensor."""
    n, c, h, w = x.dims
    nbits = c * h * w
    if nbits == 0 or n == 0:
        return DenseTensor.zeros(x.dims)
    bits = _unpack_bit_rows(x.words, nbits)
    vals = bits.astype(np.float32) * 2.0 - 1.0
    return DenseTensor.from_array(vals.reshape(n, c, h, w))


def unpack_to_array(x: BitTensor) -> np.ndarray:
    """Packed bits as a (n, c, h, w) uint8 0/1 array."""
    n, c, h, w = x.dims
    nbits = c * h * w
    if nbits == 0 or n == 0:
        return np.zeros((n, c, h, w), dtype=np.uint8)
    return _unpack_bit_rows(x.words, nbits).reshape(n, c, h, w)


def repeat_channels(x: DenseTensor, times: int) -> DenseTensor:
    """Concatenate the channel block of ``x`` ``times`` times, in order."""
    if times < 1:
        raise ShapeMismatch(f"times must be >= 1, got {times}")
    if times == 1:
        return x
    return DenseTensor.from_array(np.concatenate([x.data] * times, axis=1))


def repeat_channels_bits(x: BitTensor, times: int) -> BitTensor:
    """Channel replication on the packed representation.

    Word-aligned tiling when the per-sample bit block is a multiple of 64;
    otherwise the bits are re-packed at byte granularity.  The dense
    representation is never materialized.
    """
    if times < 1:
        raise ShapeMismatch(f"times must be >= 1, got {times}")
    n, c, h, w = x.dims
    new_dims = (n, c * times, h, w)
    if times == 1:
        return x
    block = c * h * w
    if block % WORD_BITS == 0:
        words = np.tile(x.words, (1, times))
    elif block == 0 or n == 0:
        words = np.zeros((n, 0), dtype=np.uint64)
    else:
        bits = _unpack_bit_rows(x.words, block)
        words = _pack_bit_rows(np.tile(bits, (1, times)))
    words = np.ascontiguousarray(words)
    words.flags.writeable = False
    return BitTensor(new_dims, words)


@dataclass(frozen=True)
class ConvSpec:
    """Convolution hyperparameters.

    ``c_in`` and ``c_out`` are the base channel counts; ``beta`` is the
    replication factor (1 means a plain convolution).  The reshaped kernel
    has dims ``(c_out/beta, c_in*beta, kh, kw)``, the runtime input carries
    ``c_in*beta`` channels, and the replicated output ``c_out*beta``.
    """

    c_in: int
    c_out: int
    kh: int
    kw: int
    stride: int = 1
    padding: int = 0
    beta: int = 1
    binary: bool = False

    def __post_init__(self):
        for name in ("c_in", "c_out", "kh", "kw"):
            if getattr(self, name) < 1:
                raise ShapeMismatch(f"{name} must be positive")
        if self.stride < 1 or self.padding < 0 or self.beta < 1:
            raise ShapeMismatch("stride >= 1, padding >= 0, beta >= 1 required")
        if self.c_out % self.beta:
            raise NonDivisibleChannels(
                f"beta={self.beta} does not divide c_out={self.c_out}"
            )

    @property
    def kernel_dims(self) -> Dims:
        return (self.c_out // self.beta, self.c_in * self.beta, self.kh, self.kw)

    @property
    def base_kernel_dims(self) -> Dims:
        return (self.c_out, self.c_in, self.kh, self.kw)

    @property
    def in_channels(self) -> int:
        return self.c_in * self.beta

    @property
    def out_channels(self) -> int:
        """Channels after the beta^2 output replication."""
        return self.c_out * self.beta

    @property
    def conv_out_channels(self) -> int:
        """Channels produced by the convolution itself, before replication."""
        return self.c_out // self.beta

    @property
    def params(self) -> int:
        return self.c_out * self.c_in * self.kh * self.kw

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.kh) // self.stride + 1
        ow = (w + 2 * self.padding - self.kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatch(
                f"kernel {self.kh}x{self.kw} stride {self.stride} pad "
                f"{self.padding} does not fit input {h}x{w}"
            )
        return oh, ow


def reshape_kernel(w: DenseTensor, spec: ConvSpec) -> DenseTensor:
    """Reinterpret the flat weight buffer as ``(c_out/beta, c_in*beta, kh, kw)``.

    No value moves; only the dims header changes.
    """
    if w.dims != spec.base_kernel_dims:
        raise ShapeMismatch(
            f"kernel dims {w.dims} do not match spec {spec.base_kernel_dims}"
        )
    if spec.c_out % spec.beta:
        raise NonDivisibleChannels(
            f"beta={spec.beta} does not divide c_out={spec.c_out}"
        )
    if spec.beta == 1:
        return w
    return DenseTensor.from_array(w.data.reshape(spec.kernel_dims))


# --- flat binary blob serialization -----------------------------------------
#
# 16-byte header of four little-endian uint32 dims, then the payload:
# float32 values for dense tensors, packed uint64 words for bit tensors.

_HEADER = struct.Struct("<4I")


def dense_to_blob(t: DenseTensor) -> bytes:
    return _HEADER.pack(*t.dims) + t.data.astype("<f4").tobytes()


def dense_from_blob(blob: bytes) -> DenseTensor:
    if len(blob) < _HEADER.size:
        raise ShapeMismatch("blob too short for header")
    dims = _HEADER.unpack_from(blob)
    n, c, h, w = dims
    expect = n * c * h * w * 4
    payload = blob[_HEADER.size:]
    if len(payload) != expect:
        raise ShapeMismatch(f"payload {len(payload)} bytes, expected {expect}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return DenseTensor.from_array(arr)


def bits_to_blob(t: BitTensor) -> bytes:
    return _HEADER.pack(*t.dims) + t.words.astype("<u8").tobytes()


def bits_from_blob(blob: bytes) -> BitTensor:
    if len(blob) < _HEADER.size:
        raise ShapeMismatch("blob too short for header")
    dims = _HEADER.unpack_from(blob)
    n, c, h, w = dims
    words_per_sample = -(-(c * h * w) // WORD_BITS)
    expect = n * words_per_sample * 8
    payload = blob[_HEADER.size:]
    if len(payload) != expect:
        raise ShapeMismatch(f"payload {len(payload)} bytes, expected {expect}")
    words = np.frombuffer(payload, dtype="<u8").reshape(n, words_per_sample)
    words = words.astype(np.uint64)
    words.flags.writeable = False
    return BitTensor(_check_dims(dims), words)
