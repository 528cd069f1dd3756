"""Convert the 0 and 1 digits of the `mnist` npm package (1.1.0) to IDX files.

The package stores each digit class as JSON, {"data": [...]}, holding
count*784 pixel values k/255 rounded to three decimals. round(v*255)
recovers the original bytes.

usage: python3 mnist01_from_npm.py <package>/src/digits <out_dir>
"""

import json
import struct
import sys
from pathlib import Path


def load(path):
    data = json.loads(Path(path).read_text())["data"]
    assert len(data) % 784 == 0, path
    return bytes(round(v * 255) for v in data), len(data) // 784


def main(src, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    pixels, labels = b"", b""
    for digit in (0, 1):
        px, count = load(Path(src) / f"{digit}.json")
        pixels += px
        labels += bytes([digit]) * count
    count = len(labels)
    (out / "mnist01-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, count, 28, 28) + pixels)
    (out / "mnist01-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, count) + labels)
    print(f"wrote {count} images")


if __name__ == "__main__":
    main(*sys.argv[1:3])
