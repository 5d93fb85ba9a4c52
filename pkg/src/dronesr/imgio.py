"""Image file I/O: 8/16-bit PNG, binary PPM/PGM, and RAW mosaics.

RAW is stored as a 16-bit PGM plus a JSON sidecar (`<stem>.rawmeta.json`)
naming the Bayer pattern and black level.
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import InvalidInputError
from .imgcore import BayerRaw, Image


def read_image(path) -> Image:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm"):
        arr, maxval = _read_pnm(path)
        return Image(arr.astype(np.float64) / maxval)
    pil = PILImage.open(path)
    if pil.mode in ("I", "I;16", "I;16B"):
        arr = np.asarray(pil, dtype=np.float64) / 65535.0
    else:
        if pil.mode not in ("L", "RGB"):
            pil = pil.convert("RGB")
        arr = np.asarray(pil, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return Image(arr[None])
    return Image(np.moveaxis(arr, -1, 0))


def write_image(path, img: Image, bit_depth: int = 8):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() in (".ppm", ".pgm"):
        _write_pnm(path, img, bit_depth)
        return
    if bit_depth == 16:
        if img.channels != 1:
            raise InvalidInputError("16-bit PNG supported for single-channel images only")
        arr = np.round(img.data[0] * 65535.0).astype(np.uint16)
        PILImage.fromarray(arr, mode="I;16").save(path)
        return
    arr = np.round(img.data * 255.0).astype(np.uint8)
    if img.channels == 1:
        PILImage.fromarray(arr[0], mode="L").save(path)
    elif img.channels == 3:
        PILImage.fromarray(np.moveaxis(arr, 0, -1), mode="RGB").save(path)
    else:
        raise InvalidInputError(f"cannot write {img.channels}-channel PNG")


def _read_pnm(path):
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1  # single whitespace after maxval
    channels = {b"P5": 1, b"P6": 3}.get(magic)
    if channels is None:
        raise InvalidInputError(f"unsupported PNM magic {magic!r} in {path}")
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    arr = np.frombuffer(data, dtype=dtype, count=h * w * channels, offset=pos)
    arr = arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)
    if channels == 3:
        arr = np.moveaxis(arr, -1, 0)
    return arr.astype(np.float64), float(maxval)


def _write_pnm(path, img: Image, bit_depth: int):
    maxval = 65535 if bit_depth == 16 else 255
    arr = np.round(img.data * maxval)
    arr = arr.astype(">u2") if bit_depth == 16 else arr.astype(np.uint8)
    if img.channels == 1:
        magic, body = b"P5", arr[0]
    elif img.channels == 3:
        magic, body = b"P6", np.moveaxis(arr, 0, -1)
    else:
        raise InvalidInputError(f"cannot write {img.channels}-channel PNM")
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n%d\n" % (img.width, img.height, maxval))
        f.write(np.ascontiguousarray(body).tobytes())


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.stem + ".rawmeta.json")


def read_raw(path) -> BayerRaw:
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise InvalidInputError(f"RAW mosaic must be a 16-bit PGM: {path}")
    arr, maxval = _read_pnm(path)
    if maxval != 65535:
        raise InvalidInputError(f"RAW mosaic must be 16-bit, got maxval {maxval}: {path}")
    meta = {}
    if _sidecar(path).exists():
        meta = json.loads(_sidecar(path).read_text())
    return BayerRaw(arr.astype(np.uint16), pattern=meta.get("pattern", "RGGB"),
                    black_level=int(meta.get("black_level", 0)))


def write_raw(path, raw: BayerRaw):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (raw.width, raw.height))
        f.write(raw.data.astype(">u2").tobytes())
    _sidecar(path).write_text(json.dumps(
        {"pattern": raw.pattern, "black_level": raw.black_level}))
