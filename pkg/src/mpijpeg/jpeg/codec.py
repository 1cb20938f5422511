"""Bit-exact baseline JPEG encoder/decoder.

Emits and consumes standards-conformant JFIF streams (SOF0, Huffman entropy
coding with the Annex K example tables, 4:4:4 or 4:2:0 chroma). The DCT is
the exact floating-point type-II transform so the differentiable simulation
in :mod:`mpijpeg.jpeg.simulate` can reproduce this path arithmetically.

Not supported (rejected with a parse error): progressive scans, arithmetic
coding, restart intervals, 12-bit precision.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import JpegParseError, MpiJpegError, ShapeError
from .tables import (
    CHROMA_AC_BITS,
    CHROMA_AC_VALUES,
    CHROMA_DC_BITS,
    CHROMA_DC_VALUES,
    ChromaSubsampling,
    DCT_MATRIX,
    JpegConfig,
    LUMA_AC_BITS,
    LUMA_AC_VALUES,
    LUMA_DC_BITS,
    LUMA_DC_VALUES,
    RGB_TO_YCBCR,
    UNZIGZAG,
    YCBCR_TO_RGB,
    ZIGZAG,
    quant_tables_for_quality,
)

_SOI, _EOI, _SOS, _DQT, _DHT, _SOF0, _APP0, _COM, _DRI = (
    0xD8, 0xD9, 0xDA, 0xDB, 0xC4, 0xC0, 0xE0, 0xFE, 0xDD,
)


# ---------------------------------------------------------------------------
# Shared pixel-path stages (also mirrored by the differentiable simulation)

def to_8bit(image: np.ndarray) -> np.ndarray:
    """Round a float image in [0,1] to the 8-bit grid, returning uint8."""
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """Full-range BT.601 conversion; input/output float64 on the 0..255 scale."""
    ycc = rgb @ RGB_TO_YCBCR.T
    ycc[..., 1] += 128.0
    ycc[..., 2] += 128.0
    return ycc


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    ycc = ycc.copy()
    ycc[..., 1] -= 128.0
    ycc[..., 2] -= 128.0
    return ycc @ YCBCR_TO_RGB.T


def pad_to_multiple(plane: np.ndarray, block: int) -> np.ndarray:
    """Edge-replicate a 2-D plane up to a multiple of `block` on both axes."""
    h, w = plane.shape
    ph = (-h) % block
    pw = (-w) % block
    if ph == 0 and pw == 0:
        return plane
    return np.pad(plane, ((0, ph), (0, pw)), mode="edge")


def blockify(plane: np.ndarray) -> np.ndarray:
    """Split an (H, W) plane with 8-divisible dims into (N, 8, 8) blocks."""
    h, w = plane.shape
    return (
        plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3).reshape(-1, 8, 8)
    )


def unblockify(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    return (
        blocks.reshape(h // 8, w // 8, 8, 8).transpose(0, 2, 1, 3).reshape(h, w)
    )


def dct_blocks(blocks: np.ndarray) -> np.ndarray:
    """Exact float 8x8 type-II DCT over a stack of blocks."""
    return DCT_MATRIX @ blocks @ DCT_MATRIX.T


def idct_blocks(coeffs: np.ndarray) -> np.ndarray:
    return DCT_MATRIX.T @ coeffs @ DCT_MATRIX


def forward_dct_quant(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """Level shift, DCT, and quantize one component plane to integer blocks."""
    coeffs = dct_blocks(blockify(plane - 128.0))
    return np.round(coeffs / qtable).astype(np.int64)


def upsample_2x_triangular(plane: np.ndarray) -> np.ndarray:
    """Upsample a chroma plane by 2x2 with triangular (bilinear) weights.

    Each output pixel mixes the containing sample with its three neighbors
    toward the output subpixel at weights 9:3:3:1, clamping at the borders.
    This is the common "fancy" upsampler, so 4:2:0 streams decode close to
    mainstream decoders.
    """
    p = np.pad(plane, 1, mode="edge")
    c = p[1:-1, 1:-1]
    up, down = p[:-2, 1:-1], p[2:, 1:-1]
    left, right = p[1:-1, :-2], p[1:-1, 2:]
    ul, ur = p[:-2, :-2], p[:-2, 2:]
    dl, dr = p[2:, :-2], p[2:, 2:]
    h, w = plane.shape
    out = np.empty((2 * h, 2 * w), dtype=plane.dtype)
    out[0::2, 0::2] = (9 * c + 3 * left + 3 * up + ul) / 16.0
    out[0::2, 1::2] = (9 * c + 3 * right + 3 * up + ur) / 16.0
    out[1::2, 0::2] = (9 * c + 3 * left + 3 * down + dl) / 16.0
    out[1::2, 1::2] = (9 * c + 3 * right + 3 * down + dr) / 16.0
    return out


# ---------------------------------------------------------------------------
# Huffman coding

def _build_encode_table(bits, values):
    """Map symbol -> (code, length) per the T.81 canonical code assignment."""
    table = {}
    code = 0
    k = 0
    for length in range(1, 17):
        for _ in range(bits[length - 1]):
            table[values[k]] = (code, length)
            code += 1
            k += 1
        code <<= 1
    return table


def _build_decode_table(bits, values):
    """Map (length, code) -> symbol."""
    table = {}
    code = 0
    k = 0
    for length in range(1, 17):
        for _ in range(bits[length - 1]):
            table[(length, code)] = values[k]
            code += 1
            k += 1
        code <<= 1
    return table


class _BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, code: int, length: int):
        self.acc = (self.acc << length) | code
        self.nbits += length
        while self.nbits >= 8:
            self.nbits -= 8
            byte = (self.acc >> self.nbits) & 0xFF
            self.buf.append(byte)
            if byte == 0xFF:
                self.buf.append(0x00)  # byte stuffing
        self.acc &= (1 << self.nbits) - 1

    def finish(self) -> bytes:
        if self.nbits:
            pad = 8 - self.nbits
            self.write((1 << pad) - 1, pad)
        return bytes(self.buf)


class _BitReader:
    """Reads the entropy-coded segment, unstuffing 0xFF 0x00 pairs."""

    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.pos = offset
        self.acc = 0
        self.nbits = 0

    def read_bit(self) -> int:
        if self.nbits == 0:
            if self.pos >= len(self.data):
                raise JpegParseError("entropy data truncated", offset=self.pos)
            byte = self.data[self.pos]
            self.pos += 1
            if byte == 0xFF:
                if self.pos >= len(self.data):
                    raise JpegParseError("entropy data truncated", offset=self.pos)
                marker = self.data[self.pos]
                if marker == 0x00:
                    self.pos += 1
                else:
                    raise JpegParseError(
                        f"unexpected marker 0xFF{marker:02X} inside scan", offset=self.pos - 1
                    )
            self.acc = byte
            self.nbits = 8
        self.nbits -= 1
        return (self.acc >> self.nbits) & 1

    def read_bits(self, n: int) -> int:
        v = 0
        for _ in range(n):
            v = (v << 1) | self.read_bit()
        return v

    def decode_symbol(self, table) -> int:
        code = 0
        for length in range(1, 17):
            code = (code << 1) | self.read_bit()
            sym = table.get((length, code))
            if sym is not None:
                return sym
        raise JpegParseError("invalid Huffman code", offset=self.pos)


def _magnitude(v: int):
    """Size category and amplitude bits for one coefficient."""
    size = int(abs(v)).bit_length()
    if v >= 0:
        return size, v
    return size, v + (1 << size) - 1


def _extend(v: int, size: int) -> int:
    if size == 0:
        return 0
    if v < (1 << (size - 1)):
        return v - (1 << size) + 1
    return v


def _encode_block(writer, zz, dc_pred, dc_table, ac_table):
    diff = int(zz[0]) - dc_pred
    size, bits = _magnitude(diff)
    code, length = dc_table[size]
    writer.write(code, length)
    if size:
        writer.write(bits, size)

    run = 0
    last_nonzero = np.nonzero(zz[1:])[0]
    last = last_nonzero[-1] + 1 if len(last_nonzero) else 0
    for k in range(1, last + 1):
        v = int(zz[k])
        if v == 0:
            run += 1
            continue
        while run > 15:
            code, length = ac_table[0xF0]  # ZRL
            writer.write(code, length)
            run -= 16
        size, bits = _magnitude(v)
        code, length = ac_table[(run << 4) | size]
        writer.write(code, length)
        writer.write(bits, size)
        run = 0
    if last < 63:
        code, length = ac_table[0x00]  # EOB
        writer.write(code, length)
    return int(zz[0])


def _decode_block(reader, dc_pred, dc_table, ac_table):
    zz = np.zeros(64, dtype=np.int64)
    size = reader.decode_symbol(dc_table)
    zz[0] = dc_pred + _extend(reader.read_bits(size), size)
    k = 1
    while k < 64:
        rs = reader.decode_symbol(ac_table)
        run, size = rs >> 4, rs & 0x0F
        if size == 0:
            if run == 15:
                k += 16
                continue
            break  # EOB
        k += run
        if k > 63:
            raise JpegParseError("AC run exceeds block", offset=reader.pos)
        zz[k] = _extend(reader.read_bits(size), size)
        k += 1
    return zz, int(zz[0])


# ---------------------------------------------------------------------------
# Encoder

def jpeg_encode(image: np.ndarray, cfg: JpegConfig = JpegConfig()) -> bytes:
    """Encode a float RGB image in [0,1] to a baseline JFIF byte stream."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got {image.shape}")
    h, w = image.shape[:2]
    if h < 8 or w < 8:
        raise ShapeError(f"image must be at least 8x8, got {h}x{w}")
    if h > 65535 or w > 65535:
        raise ShapeError("image exceeds JPEG dimension limit")

    sub420 = cfg.chroma_subsampling is ChromaSubsampling.YUV420
    tabs = quant_tables_for_quality(cfg.quality)

    ycc = rgb_to_ycbcr(to_8bit(image).astype(np.float64))
    mcu = 16 if sub420 else 8
    planes = [pad_to_multiple(ycc[..., c], mcu) for c in range(3)]
    if sub420:
        for c in (1, 2):
            p = planes[c]
            planes[c] = p.reshape(p.shape[0] // 2, 2, p.shape[1] // 2, 2).mean(axis=(1, 3))

    comp_blocks = []
    for c in range(3):
        qtable = tabs.luma if c == 0 else tabs.chroma
        blocks = forward_dct_quant(planes[c], qtable)
        # zigzag every block up front; entropy coding below is sequential
        comp_blocks.append(blocks.reshape(-1, 64)[:, ZIGZAG])

    out = bytearray()
    out += b"\xFF\xD8"  # SOI
    out += _segment(_APP0, b"JFIF\x00" + struct.pack(">BBBHHBB", 1, 1, 0, 1, 1, 0, 0))
    dqt = b""
    for tid, table in ((0, tabs.luma), (1, tabs.chroma)):
        dqt += struct.pack("B", tid) + bytes(int(v) for v in table.reshape(-1)[ZIGZAG])
    out += _segment(_DQT, dqt)

    samp_y = 0x22 if sub420 else 0x11
    sof = struct.pack(">BHHB", 8, h, w, 3)
    sof += struct.pack("BBB", 1, samp_y, 0)
    sof += struct.pack("BBB", 2, 0x11, 1)
    sof += struct.pack("BBB", 3, 0x11, 1)
    out += _segment(_SOF0, sof)

    dht = b""
    for tclass, tid, bits, values in (
        (0, 0, LUMA_DC_BITS, LUMA_DC_VALUES),
        (1, 0, LUMA_AC_BITS, LUMA_AC_VALUES),
        (0, 1, CHROMA_DC_BITS, CHROMA_DC_VALUES),
        (1, 1, CHROMA_AC_BITS, CHROMA_AC_VALUES),
    ):
        dht += struct.pack("B", (tclass << 4) | tid) + bytes(bits) + bytes(values)
    out += _segment(_DHT, dht)

    sos = struct.pack("B", 3)
    sos += struct.pack("BB", 1, 0x00)
    sos += struct.pack("BB", 2, 0x11)
    sos += struct.pack("BB", 3, 0x11)
    sos += struct.pack("BBB", 0, 63, 0)
    out += _segment(_SOS, sos)

    dc_tables = [
        _build_encode_table(LUMA_DC_BITS, LUMA_DC_VALUES),
        _build_encode_table(CHROMA_DC_BITS, CHROMA_DC_VALUES),
    ]
    ac_tables = [
        _build_encode_table(LUMA_AC_BITS, LUMA_AC_VALUES),
        _build_encode_table(CHROMA_AC_BITS, CHROMA_AC_VALUES),
    ]

    writer = _BitWriter()
    mcus_x = planes[0].shape[1] // (16 if sub420 else 8)
    mcus_y = planes[0].shape[0] // (16 if sub420 else 8)
    luma_bw = planes[0].shape[1] // 8
    chroma_bw = planes[1].shape[1] // 8
    preds = [0, 0, 0]
    for my in range(mcus_y):
        for mx in range(mcus_x):
            if sub420:
                for by in range(2):
                    for bx in range(2):
                        idx = (my * 2 + by) * luma_bw + (mx * 2 + bx)
                        preds[0] = _encode_block(
                            writer, comp_blocks[0][idx], preds[0], dc_tables[0], ac_tables[0]
                        )
            else:
                preds[0] = _encode_block(
                    writer, comp_blocks[0][my * luma_bw + mx], preds[0], dc_tables[0], ac_tables[0]
                )
            for c in (1, 2):
                idx = my * chroma_bw + mx
                preds[c] = _encode_block(
                    writer, comp_blocks[c][idx], preds[c], dc_tables[1], ac_tables[1]
                )

    out += writer.finish()
    out += b"\xFF\xD9"  # EOI
    return bytes(out)


def _segment(marker: int, payload: bytes) -> bytes:
    return struct.pack(">BBH", 0xFF, marker, len(payload) + 2) + payload


# ---------------------------------------------------------------------------
# Decoder

class _Component:
    def __init__(self, cid, h_samp, v_samp, qtable_id):
        self.cid = cid
        self.h_samp = h_samp
        self.v_samp = v_samp
        self.qtable_id = qtable_id
        self.dc_table_id = 0
        self.ac_table_id = 0


def jpeg_decode(data: bytes) -> np.ndarray:
    """Decode a baseline JFIF stream to a float RGB image in [0,1]."""
    if len(data) < 4 or data[0] != 0xFF or data[1] != _SOI:
        raise JpegParseError("missing SOI marker", offset=0)

    pos = 2
    qtables = {}
    dc_tables = {}
    ac_tables = {}
    components = []
    height = width = None
    reader = None

    while pos < len(data):
        if data[pos] != 0xFF:
            raise JpegParseError(f"expected marker, got 0x{data[pos]:02X}", offset=pos)
        marker = data[pos + 1] if pos + 1 < len(data) else None
        if marker is None:
            raise JpegParseError("truncated marker", offset=pos)
        pos += 2
        if marker == _EOI:
            raise JpegParseError("EOI before scan data", offset=pos - 2)
        if marker == 0xFF:  # fill byte
            pos -= 1
            continue

        if pos + 2 > len(data):
            raise JpegParseError("truncated segment length", offset=pos)
        seg_len = struct.unpack(">H", data[pos : pos + 2])[0]
        seg_end = pos + seg_len
        if seg_len < 2 or seg_end > len(data):
            raise JpegParseError("segment overruns stream", offset=pos)
        body = data[pos + 2 : seg_end]

        if marker == _DQT:
            _parse_dqt(body, pos + 2, qtables)
        elif marker == _DHT:
            _parse_dht(body, pos + 2, dc_tables, ac_tables)
        elif marker == _SOF0:
            height, width, components = _parse_sof(body, pos + 2)
        elif marker in (0xC1, 0xC2, 0xC3, 0xC5, 0xC6, 0xC7, 0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF):
            raise JpegParseError(
                f"unsupported SOF marker 0xFF{marker:02X} (baseline sequential only)", offset=pos - 2
            )
        elif marker == _DRI:
            interval = struct.unpack(">H", body[:2])[0]
            if interval != 0:
                raise JpegParseError("restart intervals not supported", offset=pos + 2)
        elif marker == _SOS:
            if height is None:
                raise JpegParseError("SOS before SOF", offset=pos - 2)
            _parse_sos(body, pos + 2, components)
            reader = _BitReader(data, seg_end)
            break
        else:
            pass  # skip APPn / COM / other ancillary segments
        pos = seg_end

    if reader is None:
        raise JpegParseError("no scan in stream", offset=pos)

    return _decode_scan(reader, height, width, components, qtables, dc_tables, ac_tables)


def _parse_dqt(body, offset, qtables):
    i = 0
    while i < len(body):
        pq, tq = body[i] >> 4, body[i] & 0x0F
        i += 1
        if pq != 0:
            raise JpegParseError("16-bit quantization tables not supported", offset=offset + i)
        if i + 64 > len(body):
            raise JpegParseError("truncated DQT", offset=offset + i)
        table = np.zeros(64, dtype=np.int64)
        table[ZIGZAG] = np.frombuffer(body[i : i + 64], dtype=np.uint8)
        qtables[tq] = table.reshape(8, 8)
        i += 64


def _parse_dht(body, offset, dc_tables, ac_tables):
    i = 0
    while i < len(body):
        tclass, tid = body[i] >> 4, body[i] & 0x0F
        i += 1
        if i + 16 > len(body):
            raise JpegParseError("truncated DHT", offset=offset + i)
        bits = list(body[i : i + 16])
        i += 16
        count = sum(bits)
        if i + count > len(body):
            raise JpegParseError("truncated DHT values", offset=offset + i)
        values = list(body[i : i + count])
        i += count
        table = _build_decode_table(bits, values)
        (dc_tables if tclass == 0 else ac_tables)[tid] = table


def _parse_sof(body, offset, ):
    precision, height, width, ncomp = struct.unpack(">BHHB", body[:6])
    if precision != 8:
        raise JpegParseError(f"{precision}-bit precision not supported", offset=offset)
    if ncomp != 3:
        raise JpegParseError(f"expected 3 components, got {ncomp}", offset=offset + 5)
    components = []
    for c in range(ncomp):
        cid, samp, tq = struct.unpack("BBB", body[6 + 3 * c : 9 + 3 * c])
        components.append(_Component(cid, samp >> 4, samp & 0x0F, tq))
    h_samps = tuple(c.h_samp for c in components)
    v_samps = tuple(c.v_samp for c in components)
    if (h_samps, v_samps) not in (((1, 1, 1), (1, 1, 1)), ((2, 1, 1), (2, 1, 1))):
        raise JpegParseError(
            f"unsupported sampling factors {h_samps}/{v_samps} (4:4:4 or 4:2:0 only)",
            offset=offset,
        )
    return height, width, components


def _parse_sos(body, offset, components):
    ncomp = body[0]
    if ncomp != len(components):
        raise JpegParseError("SOS component count mismatch", offset=offset)
    by_id = {c.cid: c for c in components}
    for c in range(ncomp):
        cid, tables = body[1 + 2 * c], body[2 + 2 * c]
        if cid not in by_id:
            raise JpegParseError(f"SOS references unknown component {cid}", offset=offset)
        by_id[cid].dc_table_id = tables >> 4
        by_id[cid].ac_table_id = tables & 0x0F
    ss, se, a = body[1 + 2 * ncomp : 4 + 2 * ncomp]
    if (ss, se, a) != (0, 63, 0):
        raise JpegParseError("non-baseline spectral selection", offset=offset)


def _decode_scan(reader, height, width, components, qtables, dc_tables, ac_tables):
    hmax = max(c.h_samp for c in components)
    vmax = max(c.v_samp for c in components)
    mcus_x = -(-width // (8 * hmax))
    mcus_y = -(-height // (8 * vmax))

    comp_zz = []
    comp_bw = []
    for c in components:
        bw = mcus_x * c.h_samp
        bh = mcus_y * c.v_samp
        comp_zz.append(np.zeros((bh * bw, 64), dtype=np.int64))
        comp_bw.append(bw)

    preds = [0] * len(components)
    for my in range(mcus_y):
        for mx in range(mcus_x):
            for ci, c in enumerate(components):
                if c.dc_table_id not in dc_tables or c.ac_table_id not in ac_tables:
                    raise JpegParseError("missing Huffman table", offset=reader.pos)
                for by in range(c.v_samp):
                    for bx in range(c.h_samp):
                        zz, preds[ci] = _decode_block(
                            reader,
                            preds[ci],
                            dc_tables[c.dc_table_id],
                            ac_tables[c.ac_table_id],
                        )
                        idx = (my * c.v_samp + by) * comp_bw[ci] + (mx * c.h_samp + bx)
                        comp_zz[ci][idx] = zz

    planes = []
    for ci, c in enumerate(components):
        if c.qtable_id not in qtables:
            raise JpegParseError("missing quantization table", offset=reader.pos)
        coeffs = np.zeros_like(comp_zz[ci], dtype=np.float64)
        coeffs[:, ZIGZAG] = comp_zz[ci]
        coeffs = coeffs.reshape(-1, 8, 8) * qtables[c.qtable_id]
        pixels = idct_blocks(coeffs) + 128.0
        bh = mcus_y * c.v_samp * 8
        bw = comp_bw[ci] * 8
        plane = unblockify(pixels, bh, bw)
        # crop to the component's true dims, then replicate up to full res
        ch = -(-height * c.v_samp // vmax)
        cw = -(-width * c.h_samp // hmax)
        plane = plane[:ch, :cw]
        if c.v_samp != vmax or c.h_samp != hmax:
            plane = upsample_2x_triangular(plane)
        planes.append(plane[:height, :width])

    rgb = ycbcr_to_rgb(np.stack(planes, axis=-1))
    return np.clip(np.round(rgb), 0, 255).astype(np.float64) / 255.0


def roundtrip(image: np.ndarray, cfg: JpegConfig = JpegConfig()) -> np.ndarray:
    """decode(encode(image)) under one config."""
    return jpeg_decode(jpeg_encode(image, cfg))
