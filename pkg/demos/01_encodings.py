"""
Spatial and temporal encodings
==============================

How a buoy's grid cell becomes a Z-order bit vector, how a series is cut
into overlapping patches, and what the task prompt looks like.
"""
import numpy as np

from orca_swh.data import GridSpec, cell_of
from orca_swh.encoding import make_patches, morton_value, zorder_encode
from orca_swh.prompt import DatasetMeta, PromptTemplate, render_prompt

# The study region: 0.5 degree cells from 32N to 18N and 98W to 78W.
grid = GridSpec.gulf_of_mexico()
print("grid:", grid.rows, "x", grid.cols)

# A buoy position maps to its nearest cell centre; row 0 is the north edge.
cell = cell_of(25.1, -88.3, grid)
print("cell of (25.1N, 88.3W):", cell)

# Z-order interleaves row and column bits, most significant level first.
# Neighbouring cells mostly share their leading bits.
Z = zorder_encode([cell, (cell[0], cell[1] + 1), (0, 0), (28, 40)], grid)
print("bits per buoy:", Z.shape[1])
for row, code in zip(Z.astype(int), morton_value(Z)):
    print("".join(map(str, row)), code)

# Patches: length L at stride W over the series padded with W copies of its
# last step, so T=24, L=16, W=8 gives (24-16)//8 + 2 = 3 patches.
x = np.arange(24.0)
ps = make_patches(x, 16, 8)
print("patch starts:", ps.starts())
print("last patch:", ps.patches[-1])

# The prompt describes the task in five labelled sections.
meta = DatasetMeta(3, 4, 32, ["WVHT", "WSPD", "WDIR"])
text, spans = render_prompt(PromptTemplate(), meta)
for label, (a, b) in spans.items():
    print(text[a:b])
print()
print(render_prompt(PromptTemplate(variant="light"), meta)[0])
