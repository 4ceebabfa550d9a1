"""
Two backbones, one pyramid, one normalcy score
==============================================

Builds the dual-backbone feature pyramid at desk scale, walks its shape
bookkeeping, and runs a forward pass to a per-image normalcy score.
"""

import numpy as np

from cxrtriage.net import (
    build_pyramid_graph,
    desk_profile,
    forward,
    full_profile,
    pyramid_shape_report,
)

# Shape bookkeeping is pure arithmetic; no tensors are allocated, so the
# deployment-scale numbers are free to inspect.
for profile in (desk_profile(), full_profile()):
    report = pyramid_shape_report(profile.graph)
    print(f"{profile.name} profile ({profile.graph.input_size[0]}x"
          f"{profile.graph.input_size[1]} input):")
    for stride in (4, 8, 16):
        s = report["scales"][stride]
        print(f"  stride {stride:>2}: backbone A {s['a_channels']:>4} ch"
              f" + backbone B {s['b_channels']:>4} ch"
              f" -> concat {s['concat_channels']:>4} ch"
              f" at {s['height']}x{s['width']}")
    print(f"  laterals -> {report['lateral_channels']} ch,"
          f" head blocks {[h['channels'] for h in report['head']]},"
          f" pooled features {report['sop_features']}")

# A real graph at desk scale. Two backbones read the same image, their
# per-stride maps concatenate, 1x1 laterals compress, and coarse scales
# upsample into finer ones.
graph = build_pyramid_graph(desk_profile(seed=5).graph)
print(f"\nnodes: {len(graph.nodes)}, parameter tensors:"
      f" {len(graph.parameters)}, scalar parameters:"
      f" {sum(p.value.size for p in graph.parameters.values()):,}")

# Forward pass: three noise images to logits, squashed to normalcy scores
# in (0, 1). Untrained weights say nothing useful yet; training in the
# next demo moves these toward 1 for normal studies and 0 for abnormal.
batch = np.random.default_rng(42).random((3, 1, 64, 64))
logits = graph.forward(batch)[0]
scores = forward(graph, batch)
print("head logits:    ", np.round(logits, 4))
print("normalcy scores:", np.round(scores, 4))

# Inference is deterministic; training mode wakes the spatial dropout in
# the head blocks, so repeated train-mode passes differ.
again = forward(graph, batch)
train_a = graph.forward(batch, mode="train")[0]
train_b = graph.forward(batch, mode="train")[0]
print("infer deterministic:", bool(np.array_equal(scores, again)))
print("train-mode dropout active:", not np.array_equal(train_a, train_b))
