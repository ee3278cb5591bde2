# Copyright 2026 The PIE Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Converts the per-digit JSON files of the `mnist` npm package into IDX files.

Each digit file holds {"data": [...]} with 784 values per image in [0, 1].
Images are interleaved round-robin over digits (0, 1, ..., 9, 0, 1, ...) so any
prefix is class balanced. Bytes are round(value * 255).

    npm pack mnist && tar xf mnist-*.tgz
    python3 mnist_json_to_idx.py package/src/digits out/ --count 2000
"""

import argparse
import json
import pathlib
import struct

PIXELS = 28 * 28


def load_digit(path):
    values = json.loads(path.read_text())["data"]
    if len(values) % PIXELS:
        raise ValueError(f"{path}: length {len(values)} is not a multiple of {PIXELS}")
    return [values[i:i + PIXELS] for i in range(0, len(values), PIXELS)]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=pathlib.Path)
    parser.add_argument("out_dir", type=pathlib.Path)
    parser.add_argument("--count", type=int, default=2000)
    parser.add_argument("--prefix", default="mnist-subset")
    args = parser.parse_args()

    per_digit = [load_digit(args.digits_dir / f"{d}.json") for d in range(10)]
    images, labels = [], []
    index = 0
    while len(images) < args.count:
        for digit, pool in enumerate(per_digit):
            if index < len(pool) and len(images) < args.count:
                images.append(pool[index])
                labels.append(digit)
        index += 1
        if all(index >= len(pool) for pool in per_digit):
            break

    args.out_dir.mkdir(parents=True, exist_ok=True)
    pixels = bytes(max(0, min(255, round(v * 255))) for image in images for v in image)
    (args.out_dir / f"{args.prefix}-images.idx3-ubyte").write_bytes(
        struct.pack(">IIII", 0x803, len(images), 28, 28) + pixels)
    (args.out_dir / f"{args.prefix}-labels.idx1-ubyte").write_bytes(
        struct.pack(">II", 0x801, len(labels)) + bytes(labels))
    print(f"wrote {len(images)} images")


if __name__ == "__main__":
    main()
