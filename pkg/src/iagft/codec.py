"""Block codec: weight-adaptive transforms inside a JPEG-style pipeline.

Encoder stages: 8x8 tiling -> per-block codeword selection on the weight
map -> block transform with the codeword's cached basis -> uniform or
derived non-uniform quantization -> scan -> run-length + Huffman coding.
The DCT baseline skips the weight machinery and uses the plain 2-D DCT
with the standard zigzag scan.

Bitstream container (all little-endian, sections byte-aligned):

    magic 'IAGF' | version u8 | mode u8 | width u16 | height u16 |
    param f32 (step or quality) | codebook hash u64 |
    Huffman tables (DC, AC) | side-info section | coefficient payload

Entropy-coded sections are bit-packed MSB-first. Huffman tables are
image-adaptive canonical codes, serialized as 16 per-length counts plus
the symbol list. Side info (per-block codeword indices) is coded with a
static arithmetic coder driven by the codebook's training frequencies.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from heapq import merge as _heap_merge

import numpy as np

from .graph import grid_laplacian
from .imaging import BlockGrid, ImageGray, _tile_array, _untile_array, assemble, local_moments, tile_blocks
from .transform import (
    IAGFTBasis,
    basis_for_weights,
    dct_basis_2d,
    forward,
    inverse,
    zigzag_order,
)
from .vq import Codebook, DEFAULT_LAMBDA, assign_batch, codebook_hash
from .weights import Q_FLOOR_DEFAULT, gamma_map, optimal_weights

BITSTREAM_MAGIC = b"IAGF"
BITSTREAM_VERSION = 1

MAX_CODE_LENGTH = 16
MAX_SIZE_CATEGORY = 15
EOB = 0x00
ZRL = 0xF0

# ITU-T81 Annex K luminance quantization table, raster frequency order.
ANNEX_K_LUMA = np.array(
    [
        16, 11, 10, 16, 24, 40, 51, 61,
        12, 12, 14, 19, 26, 58, 60, 55,
        14, 13, 16, 24, 40, 57, 69, 56,
        14, 17, 22, 29, 51, 87, 80, 62,
        18, 22, 37, 56, 68, 109, 103, 77,
        24, 35, 55, 64, 81, 104, 113, 92,
        49, 64, 78, 87, 103, 121, 120, 101,
        72, 92, 95, 98, 112, 100, 103, 99,
    ],
    dtype=np.float64,
)

ZIGZAG = zigzag_order(8, 8)
_DCT_V = dct_basis_2d(8, 8)
_DCT_V_ZZ = _DCT_V[:, ZIGZAG]
_GRID8 = grid_laplacian(8, 8)


class BitstreamError(ValueError):
    """Malformed, truncated, or mismatched bitstream."""


@dataclass(eq=False)
class QuantTable:
    """Per-mode quantization steps, indexed in scan order."""

    steps: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.steps, dtype=np.float64).reshape(-1)
        if not np.all(s > 0):
            raise ValueError("quantization steps must be > 0")
        self.steps = s


def quality_scaled_table(quality: float) -> np.ndarray:
    """Annex K luminance steps under the standard quality-factor rule, zigzag order."""
    if not 1 <= quality <= 100:
        raise ValueError("quality must be in [1, 100]")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    steps = np.floor((ANNEX_K_LUMA * scale + 50.0) / 100.0)
    return np.clip(steps, 1.0, 255.0)[ZIGZAG]


def derive_quant_table(
    basis: IAGFTBasis, dct_steps: np.ndarray, normalized: bool = True
) -> QuantTable:
    """Steps for each transform mode as a weighted mean of DCT steps.

    Mode k is expanded over the 2-D DCT basis (zigzag order); the step is
    the |coefficient|-weighted mean of the corresponding DCT steps, so
    modes that look like low DCT frequencies quantize finely. The weighted
    mean is normalized by default; `normalized=False` keeps the plain
    weighted sum.
    """
    if basis.n != 64:
        raise ValueError("derived tables require 8x8 bases")
    dct_steps = np.asarray(dct_steps, dtype=np.float64).reshape(-1)
    if dct_steps.size != 64:
        raise ValueError("need 64 base steps")
    phi = np.abs(basis.U.T @ _DCT_V_ZZ)
    steps = phi @ dct_steps
    if normalized:
        steps = steps / phi.sum(axis=1)
    return QuantTable(steps)


def quantize(c: np.ndarray, t: QuantTable) -> np.ndarray:
    """Round c / step half away from zero to integers."""
    ratio = np.asarray(c, dtype=np.float64) / t.steps
    return np.copysign(np.floor(np.abs(ratio) + 0.5), ratio).astype(np.int32)


def dequantize(ints: np.ndarray, t: QuantTable) -> np.ndarray:
    return np.asarray(ints, dtype=np.float64) * t.steps


def scan_order(basis: IAGFTBasis | None) -> np.ndarray:
    """Coefficient scan: JPEG zigzag for the DCT baseline (basis None),
    identity for weighted bases (their modes are already scan-ordered)."""
    if basis is None:
        return ZIGZAG.copy()
    return np.arange(basis.n, dtype=np.int64)


# ---------------------------------------------------------------------------
# Bit I/O
# ---------------------------------------------------------------------------


class BitWriter:
    """MSB-first bit packer."""

    def __init__(self):
        self._out = bytearray()
        self._acc = 0
        self._nacc = 0
        self.bit_length = 0

    def write(self, value: int, nbits: int) -> None:
        if nbits == 0:
            return
        self._acc = (self._acc << nbits) | (value & ((1 << nbits) - 1))
        self._nacc += nbits
        self.bit_length += nbits
        while self._nacc >= 8:
            self._nacc -= 8
            self._out.append((self._acc >> self._nacc) & 0xFF)
        self._acc &= (1 << self._nacc) - 1

    def getvalue(self) -> bytes:
        if self._nacc:
            return bytes(self._out) + bytes([(self._acc << (8 - self._nacc)) & 0xFF])
        return bytes(self._out)


class BitReader:
    """MSB-first bit unpacker. Reading past the end raises BitstreamError."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0  # bit position

    def read(self, nbits: int) -> int:
        if nbits == 0:
            return 0
        end = self._pos + nbits
        if end > 8 * len(self._data):
            raise BitstreamError("bitstream exhausted")
        value = 0
        pos = self._pos
        while pos < end:
            byte = self._data[pos >> 3]
            avail = 8 - (pos & 7)
            take = min(avail, end - pos)
            value = (value << take) | ((byte >> (avail - take)) & ((1 << take) - 1))
            pos += take
        self._pos = end
        return value

    def read_bit_or_zero(self) -> int:
        """Read one bit, returning 0 past the end (arithmetic-coder tail)."""
        if self._pos >= 8 * len(self._data):
            self._pos += 1
            return 0
        return self.read(1)


# ---------------------------------------------------------------------------
# Canonical length-limited Huffman coding
# ---------------------------------------------------------------------------


def _code_lengths(freqs: dict[int, int], max_len: int = MAX_CODE_LENGTH) -> dict[int, int]:
    """Optimal code lengths bounded by max_len (package-merge)."""
    syms = sorted(freqs)
    if not syms:
        return {}
    if len(syms) == 1:
        return {syms[0]: 1}
    if len(syms) > (1 << max_len):
        raise BitstreamError("alphabet too large for code length limit")
    originals = sorted(((freqs[s], (s,)) for s in syms), key=lambda t: t[0])
    level: list[tuple[int, tuple]] = []
    for _ in range(max_len):
        packages = [
            (level[i][0] + level[i + 1][0], level[i][1] + level[i + 1][1])
            for i in range(0, len(level) - 1, 2)
        ]
        level = list(_heap_merge(originals, packages, key=lambda t: t[0]))
    lengths = dict.fromkeys(syms, 0)
    for _, group in level[: 2 * (len(syms) - 1)]:
        for s in group:
            lengths[s] += 1
    return lengths


@dataclass(eq=False)
class HuffmanTable:
    """Canonical prefix code: symbols grouped by code length."""

    lengths: dict[int, int]  # symbol -> code length

    def __post_init__(self):
        self.codes: dict[int, tuple[int, int]] = {}
        by_len: dict[int, list[int]] = {}
        for sym, ln in self.lengths.items():
            by_len.setdefault(ln, []).append(sym)
        code = 0
        self._first_code: dict[int, int] = {}
        self._syms_by_len: dict[int, list[int]] = {}
        for ln in range(1, MAX_CODE_LENGTH + 1):
            code <<= 1
            group = sorted(by_len.get(ln, []))
            self._first_code[ln] = code
            self._syms_by_len[ln] = group
            for sym in group:
                self.codes[sym] = (code, ln)
                code += 1
            if code > (1 << ln):
                raise BitstreamError("code lengths violate the Kraft inequality")

    @classmethod
    def from_frequencies(cls, freqs: dict[int, int]) -> "HuffmanTable":
        return cls(_code_lengths(freqs))

    def encode(self, writer: BitWriter, sym: int) -> None:
        code, ln = self.codes[sym]
        writer.write(code, ln)

    def decode(self, reader: BitReader) -> int:
        code = 0
        for ln in range(1, MAX_CODE_LENGTH + 1):
            code = (code << 1) | reader.read(1)
            group = self._syms_by_len[ln]
            offset = code - self._first_code[ln]
            if 0 <= offset < len(group):
                return group[offset]
        raise BitstreamError("invalid Huffman code")

    def to_bytes(self) -> bytes:
        counts = [len(self._syms_by_len[ln]) for ln in range(1, MAX_CODE_LENGTH + 1)]
        values = [s for ln in range(1, MAX_CODE_LENGTH + 1) for s in self._syms_by_len[ln]]
        return struct.pack("<16H", *counts) + bytes(values)

    @classmethod
    def parse(cls, data: bytes, offset: int) -> tuple["HuffmanTable", int]:
        if offset + 32 > len(data):
            raise BitstreamError("truncated Huffman table")
        counts = struct.unpack_from("<16H", data, offset)
        offset += 32
        total = sum(counts)
        if offset + total > len(data):
            raise BitstreamError("truncated Huffman table values")
        values = data[offset : offset + total]
        offset += total
        lengths = {}
        pos = 0
        for ln, cnt in enumerate(counts, start=1):
            for _ in range(cnt):
                sym = values[pos]
                if sym in lengths:
                    raise BitstreamError("duplicate symbol in Huffman table")
                lengths[sym] = ln
                pos += 1
        return cls(lengths), offset


# ---------------------------------------------------------------------------
# Run-length symbol layer
# ---------------------------------------------------------------------------


def _size_category(v: int) -> int:
    size = int(v).bit_length() if v >= 0 else int(-v).bit_length()
    if size > MAX_SIZE_CATEGORY:
        raise BitstreamError(f"coefficient {v} exceeds size category {MAX_SIZE_CATEGORY}")
    return size


def _amplitude_bits(v: int, size: int) -> int:
    return v if v >= 0 else v + (1 << size) - 1


def _amplitude_value(raw: int, size: int) -> int:
    if size == 0:
        return 0
    if raw < (1 << (size - 1)):
        return raw - (1 << size) + 1
    return raw


def _block_symbols(block: np.ndarray, prev_dc: int) -> tuple[list[tuple[int, int, int]], int]:
    """(kind, symbol, value) triplets for one scanned block; kind 0=DC, 1=AC."""
    dc = int(block[0])
    diff = dc - prev_dc
    out = [(0, _size_category(diff), diff)]
    run = 0
    last_nz = 0
    nz = np.flatnonzero(block[1:])
    for j in nz:
        pos = int(j) + 1
        run = pos - last_nz - 1
        while run >= 16:
            out.append((1, ZRL, 0))
            run -= 16
        v = int(block[pos])
        out.append((1, (run << 4) | _size_category(v), v))
        last_nz = pos
    if last_nz != 63:
        out.append((1, EOB, 0))
    return out, dc


@dataclass(eq=False)
class EntropyData:
    """Losslessly coded quantized coefficient blocks."""

    dc_table: HuffmanTable
    ac_table: HuffmanTable
    payload: bytes
    bit_length: int
    n_blocks: int


def entropy_encode(blocks: np.ndarray) -> EntropyData:
    """Code scanned quantized blocks with image-adaptive canonical Huffman.

    DC values are coded differentially between consecutive blocks with
    size-category coding; AC values as (run, size) symbols with EOB/ZRL.
    """
    blocks = np.asarray(blocks)
    if blocks.ndim != 2 or blocks.shape[1] != 64:
        raise ValueError("expected (n, 64) quantized blocks")
    all_syms: list[list[tuple[int, int, int]]] = []
    dc_freq: dict[int, int] = {}
    ac_freq: dict[int, int] = {}
    prev_dc = 0
    for b in blocks:
        syms, prev_dc = _block_symbols(b, prev_dc)
        all_syms.append(syms)
        for kind, sym, _ in syms:
            tbl = dc_freq if kind == 0 else ac_freq
            tbl[sym] = tbl.get(sym, 0) + 1
    dc_table = HuffmanTable.from_frequencies(dc_freq)
    ac_table = HuffmanTable.from_frequencies(ac_freq)
    w = BitWriter()
    for syms in all_syms:
        for kind, sym, value in syms:
            table = dc_table if kind == 0 else ac_table
            table.encode(w, sym)
            size = sym & 0x0F if kind else sym
            if size:
                w.write(_amplitude_bits(value, size), size)
    return EntropyData(dc_table, ac_table, w.getvalue(), w.bit_length, len(blocks))


def entropy_decode(data: EntropyData) -> np.ndarray:
    """Exact inverse of entropy_encode."""
    blocks = np.zeros((data.n_blocks, 64), dtype=np.int32)
    r = BitReader(data.payload)
    prev_dc = 0
    for i in range(data.n_blocks):
        size = data.dc_table.decode(r)
        diff = _amplitude_value(r.read(size), size)
        prev_dc += diff
        blocks[i, 0] = prev_dc
        pos = 1
        while pos < 64:
            sym = data.ac_table.decode(r)
            if sym == EOB:
                break
            run, size = sym >> 4, sym & 0x0F
            if size == 0:
                if sym != ZRL:
                    raise BitstreamError(f"invalid AC symbol {sym:#x}")
                pos += 16
                continue
            pos += run
            if pos > 63:
                raise BitstreamError("AC run overflows the block")
            blocks[i, pos] = _amplitude_value(r.read(size), size)
            pos += 1
    return blocks


# ---------------------------------------------------------------------------
# Side-info index stream (static arithmetic coding)
# ---------------------------------------------------------------------------

_AC_HALF = 1 << 31
_AC_Q1 = 1 << 30
_AC_Q3 = 3 << 30
_AC_MASK = (1 << 32) - 1


def _index_frequencies(cb: Codebook) -> np.ndarray:
    f = np.maximum(1, np.rint(cb.probabilities * 65536.0).astype(np.int64))
    return f


def encode_indices(indices: np.ndarray, cb: Codebook) -> bytes:
    """Arithmetic-code a codeword index stream with training frequencies."""
    if cb.k == 1:
        return b""
    freqs = _index_frequencies(cb)
    cum = np.concatenate([[0], np.cumsum(freqs)])
    tot = int(cum[-1])
    w = BitWriter()
    low, high, pending = 0, _AC_MASK, 0

    def emit(bit: int):
        nonlocal pending
        w.write(bit, 1)
        if pending:
            w.write((0 if bit else (1 << pending) - 1), pending)
            pending = 0

    for ix in np.asarray(indices, dtype=np.int64):
        span = high - low + 1
        high = low + span * int(cum[ix + 1]) // tot - 1
        low = low + span * int(cum[ix]) // tot
        while True:
            if high < _AC_HALF:
                emit(0)
            elif low >= _AC_HALF:
                emit(1)
                low -= _AC_HALF
                high -= _AC_HALF
            elif low >= _AC_Q1 and high < _AC_Q3:
                pending += 1
                low -= _AC_Q1
                high -= _AC_Q1
            else:
                break
            low = (low << 1) & _AC_MASK
            high = ((high << 1) | 1) & _AC_MASK
    pending += 1
    emit(1 if low >= _AC_Q1 else 0)
    return w.getvalue()


def decode_indices(data: bytes, cb: Codebook, count: int) -> np.ndarray:
    if cb.k == 1:
        return np.zeros(count, dtype=np.int64)
    freqs = _index_frequencies(cb)
    cum = np.concatenate([[0], np.cumsum(freqs)])
    tot = int(cum[-1])
    r = BitReader(data)
    value = 0
    for _ in range(32):
        value = (value << 1) | r.read_bit_or_zero()
    low, high = 0, _AC_MASK
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        span = high - low + 1
        target = ((value - low + 1) * tot - 1) // span
        ix = int(np.searchsorted(cum, target, side="right")) - 1
        if not 0 <= ix < cb.k:
            raise BitstreamError("corrupt side-info stream")
        out[i] = ix
        high = low + span * int(cum[ix + 1]) // tot - 1
        low = low + span * int(cum[ix]) // tot
        while True:
            if high < _AC_HALF:
                pass
            elif low >= _AC_HALF:
                low -= _AC_HALF
                high -= _AC_HALF
                value -= _AC_HALF
            elif low >= _AC_Q1 and high < _AC_Q3:
                low -= _AC_Q1
                high -= _AC_Q1
                value -= _AC_Q1
            else:
                break
            low = (low << 1) & _AC_MASK
            high = ((high << 1) | 1) & _AC_MASK
            value = ((value << 1) | r.read_bit_or_zero()) & _AC_MASK
    return out


# ---------------------------------------------------------------------------
# Bitstream container
# ---------------------------------------------------------------------------

_MODE_IAGFT = 0x01
_MODE_NONUNIFORM = 0x02


@dataclass(eq=False)
class EncodedImage:
    """Complete coded image: header fields plus entropy-coded sections."""

    transform: str  # 'dct' | 'iagft'
    table_mode: str  # 'uniform' | 'nonuniform'
    width: int
    height: int
    param: float  # step size (uniform) or quality factor (nonuniform)
    codebook_id: int
    dc_table: HuffmanTable
    ac_table: HuffmanTable
    side_bytes: bytes
    payload: bytes
    payload_bits: int

    @property
    def n_blocks(self) -> int:
        return -(-self.width // 8) * -(-self.height // 8)

    def to_bytes(self) -> bytes:
        mode = (_MODE_IAGFT if self.transform == "iagft" else 0) | (
            _MODE_NONUNIFORM if self.table_mode == "nonuniform" else 0
        )
        head = struct.pack(
            "<4sBBHHfQ",
            BITSTREAM_MAGIC,
            BITSTREAM_VERSION,
            mode,
            self.width,
            self.height,
            float(self.param),
            self.codebook_id,
        )
        tables = self.dc_table.to_bytes() + self.ac_table.to_bytes()
        side = struct.pack("<I", len(self.side_bytes)) + self.side_bytes
        payload = struct.pack("<II", len(self.payload), self.payload_bits) + self.payload
        return head + tables + side + payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncodedImage":
        if len(data) < 22 or data[:4] != BITSTREAM_MAGIC:
            raise BitstreamError("not an IAGF bitstream")
        magic, version, mode, width, height, param, cb_id = struct.unpack_from(
            "<4sBBHHfQ", data, 0
        )
        if version != BITSTREAM_VERSION:
            raise BitstreamError(f"unsupported bitstream version {version}")
        offset = 22
        dc_table, offset = HuffmanTable.parse(data, offset)
        ac_table, offset = HuffmanTable.parse(data, offset)
        if offset + 4 > len(data):
            raise BitstreamError("truncated side-info section")
        (side_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + side_len > len(data):
            raise BitstreamError("truncated side-info payload")
        side_bytes = data[offset : offset + side_len]
        offset += side_len
        if offset + 8 > len(data):
            raise BitstreamError("truncated payload section")
        pay_len, pay_bits = struct.unpack_from("<II", data, offset)
        offset += 8
        if offset + pay_len != len(data):
            raise BitstreamError("payload length mismatch")
        payload = data[offset:]
        if pay_bits > 8 * pay_len or 8 * pay_len - pay_bits >= 8:
            raise BitstreamError("inconsistent payload bit count")
        return cls(
            transform="iagft" if mode & _MODE_IAGFT else "dct",
            table_mode="nonuniform" if mode & _MODE_NONUNIFORM else "uniform",
            width=width,
            height=height,
            param=param,
            codebook_id=cb_id,
            dc_table=dc_table,
            ac_table=ac_table,
            side_bytes=side_bytes,
            payload=payload,
            payload_bits=pay_bits,
        )

    def rate_report(self, codebook: Codebook | None = None) -> dict:
        """Exact bit accounting: total equals 8x the serialized byte size."""
        total_bits = 8 * len(self.to_bytes())
        table_bits = 8 * (len(self.dc_table.to_bytes()) + len(self.ac_table.to_bytes()))
        side_bits = 8 * len(self.side_bytes)
        payload_section_bits = 8 * (8 + len(self.payload))
        header_bits = total_bits - table_bits - (32 + side_bits) - payload_section_bits
        report = {
            "total_bits": total_bits,
            "header_bits": header_bits,
            "table_bits": table_bits,
            "side_bits": side_bits,
            "payload_bits": self.payload_bits,
            "bpp": total_bits / (self.width * self.height),
            "side_fraction": side_bits / total_bits,
        }
        if codebook is not None and self.transform == "iagft":
            from .vq import side_info_bits

            idx = decode_indices(self.side_bytes, codebook, self.n_blocks)
            report["side_model_bits"] = side_info_bits(codebook, idx)
        return report


# ---------------------------------------------------------------------------
# Codeword basis/table bank
# ---------------------------------------------------------------------------

_BASIS_CACHE: dict[int, list[IAGFTBasis]] = {}


def codebook_bases(cb: Codebook) -> list[IAGFTBasis]:
    """Transform bases for every codeword, computed once per codebook."""
    key = codebook_hash(cb)
    if key not in _BASIS_CACHE:
        _BASIS_CACHE[key] = [basis_for_weights(cw, _GRID8) for cw in cb.codewords]
    return _BASIS_CACHE[key]


def _tables_for(
    bases: list[IAGFTBasis], table_mode: str, param: float
) -> list[QuantTable]:
    if table_mode == "uniform":
        return [QuantTable(np.full(64, float(param))) for _ in bases]
    base_steps = quality_scaled_table(param)
    return [derive_quant_table(b, base_steps) for b in bases]


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def _effective_step(table_mode: str, param: float) -> float:
    """Step size driving the weight design: the DC step in non-uniform mode."""
    if table_mode == "uniform":
        return float(param)
    return float(quality_scaled_table(param)[0])


def compute_weight_map(
    img: ImageGray, table_mode: str, param: float, q_floor: float = Q_FLOOR_DEFAULT
):
    """Weight map the encoder derives from the image's local variance."""
    stats = local_moments(img)
    return optimal_weights(gamma_map(stats, _effective_step(table_mode, param)), q_floor)


def quantized_weight_blocks(
    img: ImageGray,
    codebook: Codebook,
    table_mode: str,
    param: float,
    lam: float = DEFAULT_LAMBDA,
    q_floor: float = Q_FLOOR_DEFAULT,
) -> np.ndarray:
    """Per-block codeword indices the encoder would pick for `img`."""
    wm = compute_weight_map(img, table_mode, param, q_floor)
    wblocks, _, _ = _tile_array(wm.q)
    return assign_batch(codebook, wblocks, lam)


def encode_image(
    img: ImageGray,
    transform: str = "iagft",
    table_mode: str = "uniform",
    param: float = 16.0,
    codebook: Codebook | None = None,
    lam: float = DEFAULT_LAMBDA,
    q_floor: float = Q_FLOOR_DEFAULT,
    threads: int = 1,
) -> EncodedImage:
    """Run the full encoder and return the coded image."""
    if transform not in ("dct", "iagft"):
        raise ValueError(f"unknown transform {transform!r}")
    if table_mode not in ("uniform", "nonuniform"):
        raise ValueError(f"unknown table mode {table_mode!r}")
    if table_mode == "uniform" and param <= 0:
        raise ValueError("step size must be > 0")
    grid = tile_blocks(img)
    if transform == "dct":
        scanned = _dct_coefficients(grid.blocks, threads)
        table = QuantTable(
            np.full(64, float(param)) if table_mode == "uniform" else quality_scaled_table(param)
        )
        ints = quantize(scanned, table)
        indices = None
        cb_id = 0
        side = b""
    else:
        if codebook is None:
            raise ValueError("iagft mode requires a codebook")
        indices = quantized_weight_blocks(img, codebook, table_mode, param, lam, q_floor)
        bases = codebook_bases(codebook)
        tables = _tables_for(bases, table_mode, param)
        ints = np.empty((grid.blocks.shape[0], 64), dtype=np.int32)
        jobs = [
            (np.flatnonzero(indices == k), bases[k], tables[k])
            for k in range(codebook.k)
            if np.any(indices == k)
        ]

        def run(job):
            sel, basis, table = job
            ints[sel] = quantize(forward(basis, grid.blocks[sel]), table)

        if threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run, jobs))
        else:
            for job in jobs:
                run(job)
        cb_id = codebook_hash(codebook)
        side = encode_indices(indices, codebook)
    data = entropy_encode(ints)
    return EncodedImage(
        transform=transform,
        table_mode=table_mode,
        width=img.width,
        height=img.height,
        param=float(param),
        codebook_id=cb_id,
        dc_table=data.dc_table,
        ac_table=data.ac_table,
        side_bytes=side,
        payload=data.payload,
        payload_bits=data.bit_length,
    )


def _dct_coefficients(blocks: np.ndarray, threads: int = 1) -> np.ndarray:
    coeffs = blocks @ _DCT_V
    return coeffs[:, ZIGZAG]


def decode_image(enc: EncodedImage, codebook: Codebook | None = None) -> ImageGray:
    """Mirror of encode_image: entropy decode, dequantize, inverse transform."""
    n_blocks = enc.n_blocks
    data = EntropyData(enc.dc_table, enc.ac_table, enc.payload, enc.payload_bits, n_blocks)
    ints = entropy_decode(data)
    pw = -(-enc.width // 8) * 8
    ph = -(-enc.height // 8) * 8
    if enc.transform == "dct":
        table = QuantTable(
            np.full(64, enc.param) if enc.table_mode == "uniform" else quality_scaled_table(enc.param)
        )
        coeffs = dequantize(ints, table)
        unscanned = np.zeros_like(coeffs)
        unscanned[:, ZIGZAG] = coeffs
        blocks = unscanned @ _DCT_V.T
    else:
        if codebook is None:
            raise BitstreamError("decoding an iagft stream requires its codebook")
        if enc.codebook_id != codebook_hash(codebook):
            raise BitstreamError("codebook does not match the bitstream identifier")
        indices = decode_indices(enc.side_bytes, codebook, n_blocks)
        bases = codebook_bases(codebook)
        tables = _tables_for(bases, enc.table_mode, enc.param)
        blocks = np.empty((n_blocks, 64))
        for k in range(codebook.k):
            sel = np.flatnonzero(indices == k)
            if sel.size:
                blocks[sel] = inverse(bases[k], dequantize(ints[sel], tables[k]))
    grid = BlockGrid(blocks, enc.width, enc.height, pw, ph)
    return assemble(grid)


def weight_map_from_indices(
    indices: np.ndarray, codebook: Codebook, width: int, height: int
) -> np.ndarray:
    """Assemble the VQ-quantized weight map the decoder effectively uses."""
    pw = -(-width // 8) * 8
    ph = -(-height // 8) * 8
    blocks = codebook.codewords[np.asarray(indices, dtype=np.int64)]
    return _untile_array(blocks, pw, ph)[:height, :width]
