# Copyright 2026 The dpsparse Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Writes the 4-image IDX fixture used by the data tests.

Pixel (i, r, c) = (37 * i + 11 * r + 5 * c + 3) % 256, images are 2 x 3,
labels are 3, 0, 7, 1.
"""
import struct
import sys

out = sys.argv[1] if len(sys.argv) > 1 else "."
n, rows, cols = 4, 2, 3
pixels = bytes((37 * i + 11 * r + 5 * c + 3) % 256
               for i in range(n) for r in range(rows) for c in range(cols))
with open(f"{out}/fixture-images.idx3-ubyte", "wb") as f:
    f.write(struct.pack(">IIII", 0x803, n, rows, cols) + pixels)
with open(f"{out}/fixture-labels.idx1-ubyte", "wb") as f:
    f.write(struct.pack(">II", 0x801, n) + bytes([3, 0, 7, 1]))
