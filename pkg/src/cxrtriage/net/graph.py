"""Computation graph: typed nodes, reverse-mode autodiff, and the builders
for the dual-backbone feature-pyramid classifier.

A TensorGraph instance is single-writer: forward/backward mutate the cached
activations and the dropout stream, so one instance must not be shared
across threads. Distinct instances are fully independent.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericError, ShapeError
from . import ops
from .config import GraphConfig


@dataclass
class Parameter:
    """A named trainable tensor."""

    name: str
    value: np.ndarray


class Node:
    """One graph operation; subclasses implement forward/backward."""

    def __init__(self, name, inputs=()):
        self.name = name
        self.inputs = list(inputs)

    def params(self):
        return []

    def forward(self, xs, ctx):
        raise NotImplementedError

    def backward(self, grad, ctx):
        raise NotImplementedError


class InputNode(Node):
    def __init__(self, name, channels, size):
        super().__init__(name)
        self.channels = channels
        self.size = size

    def forward(self, xs, ctx):
        batch = ctx.batch
        if batch.ndim == 3:
            batch = batch[None]
        expected = (self.channels, *self.size)
        if batch.ndim != 4 or batch.shape[1:] != expected:
            raise ShapeError(
                f"{self.name}: batch shape {batch.shape} does not match "
                f"(n, {expected[0]}, {expected[1]}, {expected[2]})")
        return batch.astype(np.float64, copy=False)

    def backward(self, grad, ctx):
        return []


class ConvNode(Node):
    def __init__(self, name, x, weight, bias, stride=1, dilation=1,
                 padding="same"):
        super().__init__(name, [x])
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.dilation = dilation
        self.padding = padding

    def params(self):
        return [self.weight, self.bias]

    def forward(self, xs, ctx):
        out, cache = ops._conv2d_forward(
            xs[0], self.weight.value, self.bias.value,
            self.stride, self.dilation, self.padding)
        ctx.cache[self] = cache
        return out

    def backward(self, grad, ctx):
        grad_x, grad_w, grad_b = ops._conv2d_backward(grad, ctx.cache[self])
        ctx.accumulate(self.weight, grad_w)
        ctx.accumulate(self.bias, grad_b)
        return [grad_x]


class GroupNormNode(Node):
    def __init__(self, name, x, gamma, beta, groups, eps=1e-5):
        super().__init__(name, [x])
        self.gamma = gamma
        self.beta = beta
        self.groups = groups
        self.eps = eps

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, xs, ctx):
        out, cache = ops._group_norm_forward(
            xs[0], self.groups, self.gamma.value, self.beta.value, self.eps)
        ctx.cache[self] = cache
        return out

    def backward(self, grad, ctx):
        grad_x, grad_gamma, grad_beta = ops._group_norm_backward(
            grad, ctx.cache[self])
        ctx.accumulate(self.gamma, grad_gamma)
        ctx.accumulate(self.beta, grad_beta)
        return [grad_x]


class ReluNode(Node):
    def __init__(self, name, x):
        super().__init__(name, [x])

    def forward(self, xs, ctx):
        out, mask = ops._relu_forward(xs[0])
        ctx.cache[self] = mask
        return out

    def backward(self, grad, ctx):
        return [ops._relu_backward(grad, ctx.cache[self])]


class MaxPoolNode(Node):
    def __init__(self, name, x):
        super().__init__(name, [x])

    def forward(self, xs, ctx):
        out, cache = ops._maxpool2x2_forward(xs[0])
        ctx.cache[self] = cache
        return out

    def backward(self, grad, ctx):
        return [ops._maxpool2x2_backward(grad, ctx.cache[self])]


class UpsampleNode(Node):
    def __init__(self, name, x):
        super().__init__(name, [x])

    def forward(self, xs, ctx):
        out, cache = ops._upsample2x_forward(xs[0])
        ctx.cache[self] = cache
        return out

    def backward(self, grad, ctx):
        return [ops._upsample2x_backward(grad, ctx.cache[self])]


class DropoutNode(Node):
    def __init__(self, name, x, rate):
        super().__init__(name, [x])
        self.rate = rate

    def forward(self, xs, ctx):
        out, mask = ops._spatial_dropout_forward(
            xs[0], self.rate, ctx.mode, ctx.rng)
        ctx.cache[self] = mask
        return out

    def backward(self, grad, ctx):
        return [ops._spatial_dropout_backward(grad, ctx.cache[self])]


class ConcatNode(Node):
    """Channel-wise concatenation of same-resolution maps."""

    def __init__(self, name, xs):
        super().__init__(name, xs)

    def forward(self, xs, ctx):
        heights = {x.shape[2:] for x in xs}
        if len(heights) != 1:
            raise ShapeError(
                f"{self.name}: mismatched spatial sizes "
                f"{[x.shape for x in xs]}")
        ctx.cache[self] = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, grad, ctx):
        splits = np.cumsum(ctx.cache[self])[:-1]
        return np.split(grad, splits, axis=1)


class AddNode(Node):
    def __init__(self, name, a, b):
        super().__init__(name, [a, b])

    def forward(self, xs, ctx):
        if xs[0].shape != xs[1].shape:
            raise ShapeError(
                f"{self.name}: cannot add {xs[0].shape} and {xs[1].shape}")
        return xs[0] + xs[1]

    def backward(self, grad, ctx):
        return [grad, grad]


class SopNode(Node):
    def __init__(self, name, x, proj):
        super().__init__(name, [x])
        self.proj = proj

    def params(self):
        return [self.proj]

    def forward(self, xs, ctx):
        out, cache = ops._second_order_pool_forward(xs[0], self.proj.value)
        ctx.cache[self] = cache
        return out

    def backward(self, grad, ctx):
        grad_x, grad_proj = ops._second_order_pool_backward(
            grad, ctx.cache[self])
        ctx.accumulate(self.proj, grad_proj)
        return [grad_x]


class DenseNode(Node):
    def __init__(self, name, x, weight, bias):
        super().__init__(name, [x])
        self.weight = weight
        self.bias = bias

    def params(self):
        return [self.weight, self.bias]

    def forward(self, xs, ctx):
        out, cache = ops._dense_forward(xs[0], self.weight.value,
                                        self.bias.value)
        ctx.cache[self] = cache
        return out

    def backward(self, grad, ctx):
        grad_x, grad_w, grad_b = ops._dense_backward(grad, ctx.cache[self])
        ctx.accumulate(self.weight, grad_w)
        ctx.accumulate(self.bias, grad_b)
        return [grad_x]


class _Context:
    """Per-pass scratch: activations, op caches, parameter gradients."""

    def __init__(self, batch, mode, rng):
        self.batch = batch
        self.mode = mode
        self.rng = rng
        self.values = {}
        self.cache = {}
        self.grads = {}

    def accumulate(self, param, grad):
        if grad.shape != param.value.shape:
            raise ShapeError(
                f"{param.name}: gradient shape {grad.shape} does not match "
                f"parameter shape {param.value.shape}")
        if param.name in self.grads:
            self.grads[param.name] = self.grads[param.name] + grad
        else:
            self.grads[param.name] = grad


class TensorGraph:
    """Topologically ordered nodes with named parameters and a dropout rng.

    ``outputs`` may hold several nodes (backbones expose one map per scale);
    every parameter lies on a path to at least one output.
    """

    def __init__(self, nodes, outputs, parameters, rng, config=None):
        self.nodes = list(nodes)
        self.outputs = list(outputs)
        self.parameters = dict(parameters)
        self.rng = rng
        self.config = config
        self._ctx = None
        self._check_wiring()

    def _check_wiring(self):
        known = set()
        for node in self.nodes:
            for parent in node.inputs:
                if parent not in known:
                    raise ValueError(
                        f"{node.name}: input {parent.name} appears after its "
                        "consumer (graph is not topologically ordered)")
            known.add(node)
        for out in self.outputs:
            if out not in known:
                raise ValueError(f"output {out.name} is not a graph node")
        # Every parameter must be able to feel a gradient from some output.
        reachable = set(self.outputs)
        for node in reversed(self.nodes):
            if node in reachable:
                reachable.update(node.inputs)
        for node in self.nodes:
            if node.params() and node not in reachable:
                raise ValueError(
                    f"{node.name}: parameterized node unreachable from any "
                    "output")

    def forward(self, batch, mode="infer"):
        """Run the graph; returns one array per output (a lone output is
        returned bare). Results stay cached for backward()."""
        ctx = _Context(np.asarray(batch, dtype=np.float64), mode, self.rng)
        for node in self.nodes:
            value = node.forward([ctx.values[p] for p in node.inputs], ctx)
            if not np.all(np.isfinite(value)):
                raise NumericError(f"{node.name}: non-finite values in forward")
            ctx.values[node] = value
        self._ctx = ctx
        outs = [ctx.values[o] for o in self.outputs]
        return outs[0] if len(outs) == 1 else tuple(outs)

    def backward(self, grad_outputs):
        """Reverse-mode accumulation from output gradients; returns the
        parameter-gradient registry {name: array}. Must follow a forward."""
        ctx = self._ctx
        if ctx is None:
            raise RuntimeError("backward() requires a preceding forward()")
        if len(self.outputs) == 1 and not isinstance(grad_outputs, (list, tuple)):
            grad_outputs = [grad_outputs]
        if len(grad_outputs) != len(self.outputs):
            raise ShapeError(
                f"expected {len(self.outputs)} output gradients, "
                f"got {len(grad_outputs)}")
        pending = {}
        for out, grad in zip(self.outputs, grad_outputs):
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != ctx.values[out].shape:
                raise ShapeError(
                    f"{out.name}: output gradient {grad.shape} does not "
                    f"match value {ctx.values[out].shape}")
            pending[out] = pending.get(out, 0.0) + grad
        for node in reversed(self.nodes):
            if node not in pending:
                continue
            grads_in = node.backward(pending.pop(node), ctx)
            for parent, grad in zip(node.inputs, grads_in):
                if not np.all(np.isfinite(grad)):
                    raise NumericError(
                        f"{node.name}: non-finite values in backward")
                if parent in pending:
                    pending[parent] = pending[parent] + grad
                else:
                    pending[parent] = grad
        # Parameters untouched by this pass (e.g. auxiliary-only paths fed a
        # zero gradient) still report explicit zeros.
        grads = dict(ctx.grads)
        for name, param in self.parameters.items():
            if name not in grads:
                grads[name] = np.zeros_like(param.value)
        return grads

    def get_parameters(self):
        """Snapshot of every parameter value (copies)."""
        return {name: p.value.copy() for name, p in self.parameters.items()}

    def set_parameters(self, values):
        unknown = set(values) - set(self.parameters)
        if unknown:
            raise ShapeError(f"unknown parameter {sorted(unknown)[0]!r}")
        for name, value in values.items():
            param = self.parameters[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != param.value.shape:
                raise ShapeError(
                    f"{name}: value shape {value.shape} does not match "
                    f"{param.value.shape}")
            param.value = value.copy()

    def node_named(self, name):
        for node in self.nodes:
            if node.name == name:
                return node
        raise KeyError(name)

    def last_values(self):
        """Activations from the most recent forward, keyed by node name."""
        if self._ctx is None:
            return {}
        return {node.name: value for node, value in self._ctx.values.items()}


class GraphBuilder:
    """Creates nodes in topological order and seeds their parameters."""

    def __init__(self, seed, stream=0):
        self.init_rng = np.random.default_rng([seed, stream])
        self.nodes = []
        self.params = {}

    def _register(self, node):
        for p in node.params():
            if p.name in self.params:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            self.params[p.name] = p
        self.nodes.append(node)
        return node

    def _param(self, name, array):
        return Parameter(name, np.asarray(array, dtype=np.float64))

    def input(self, channels, size, name="input"):
        return self._register(InputNode(name, channels, size))

    def conv(self, x, name, c_in, c_out, k=3, stride=1, dilation=1,
             padding="same"):
        fan_in = c_in * k * k
        weight = self._param(
            f"{name}.weight",
            self.init_rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                 size=(c_out, c_in, k, k)))
        bias = self._param(f"{name}.bias", np.zeros(c_out))
        return self._register(
            ConvNode(name, x, weight, bias, stride, dilation, padding))

    def group_norm(self, x, name, channels, groups):
        gamma = self._param(f"{name}.gamma", np.ones(channels))
        beta = self._param(f"{name}.beta", np.zeros(channels))
        return self._register(GroupNormNode(name, x, gamma, beta, groups))

    def relu(self, x, name):
        return self._register(ReluNode(name, x))

    def maxpool(self, x, name):
        return self._register(MaxPoolNode(name, x))

    def upsample(self, x, name):
        return self._register(UpsampleNode(name, x))

    def dropout(self, x, name, rate):
        return self._register(DropoutNode(name, x, rate))

    def concat(self, xs, name):
        return self._register(ConcatNode(name, xs))

    def add(self, a, b, name):
        return self._register(AddNode(name, a, b))

    def sop(self, x, name, c_in, k_out):
        proj = self._param(
            f"{name}.proj",
            self.init_rng.normal(0.0, np.sqrt(1.0 / c_in), size=(k_out, c_in)))
        return self._register(SopNode(name, x, proj))

    def dense(self, x, name, k_in):
        weight = self._param(
            f"{name}.weight",
            self.init_rng.normal(0.0, np.sqrt(1.0 / k_in), size=(k_in,)))
        bias = self._param(f"{name}.bias", np.zeros(1))
        return self._register(DenseNode(name, x, weight, bias))

    def conv_gn_relu(self, x, name, c_in, c_out, groups, stride=1, dilation=1):
        h = self.conv(x, f"{name}.conv", c_in, c_out, stride=stride,
                      dilation=dilation)
        h = self.group_norm(h, f"{name}.gn", c_out, groups)
        return self.relu(h, f"{name}.relu")

    def build(self, outputs, rng, config=None):
        return TensorGraph(self.nodes, outputs, self.params, rng, config)


def _backbone_a(b, x, c, groups, prefix="backbone_a"):
    """Plain conv stack: single then double conv stages, pool per stage."""
    h = b.conv_gn_relu(x, f"{prefix}.stage1", 1, c, groups)
    h = b.maxpool(h, f"{prefix}.stage1.pool")
    h = b.conv_gn_relu(h, f"{prefix}.stage2", c, c, groups)
    s4 = b.maxpool(h, f"{prefix}.stage2.pool")
    h = b.conv_gn_relu(s4, f"{prefix}.stage3a", c, 2 * c, groups)
    h = b.conv_gn_relu(h, f"{prefix}.stage3b", 2 * c, 2 * c, groups)
    s8 = b.maxpool(h, f"{prefix}.stage3.pool")
    h = b.conv_gn_relu(s8, f"{prefix}.stage4a", 2 * c, 4 * c, groups)
    h = b.conv_gn_relu(h, f"{prefix}.stage4b", 4 * c, 4 * c, groups)
    s16 = b.maxpool(h, f"{prefix}.stage4.pool")
    return s4, s8, s16


def _residual_unit(b, x, name, c_in, c_out, groups, stride=1):
    """conv-GN-ReLU-conv-GN branch plus identity/projected skip, then ReLU."""
    h = b.conv(x, f"{name}.conv1", c_in, c_out, stride=stride)
    h = b.group_norm(h, f"{name}.gn1", c_out, groups)
    h = b.relu(h, f"{name}.relu1")
    h = b.conv(h, f"{name}.conv2", c_out, c_out)
    h = b.group_norm(h, f"{name}.gn2", c_out, groups)
    if c_in == c_out and stride == 1:
        skip = x
    else:
        skip = b.conv(x, f"{name}.skip", c_in, c_out, k=1, stride=stride)
    merged = b.add(h, skip, f"{name}.add")
    return b.relu(merged, f"{name}.relu2")


def _backbone_b(b, x, c, groups, prefix="backbone_b"):
    """Residual stack: stride-2 stem conv, pool, three residual stages."""
    h = b.conv_gn_relu(x, f"{prefix}.stem", 1, c, groups, stride=2)
    h = b.maxpool(h, f"{prefix}.stem.pool")
    s4 = _residual_unit(b, h, f"{prefix}.stage1", c, c, groups)
    s8 = _residual_unit(b, s4, f"{prefix}.stage2", c, 2 * c, groups, stride=2)
    s16 = _residual_unit(b, s8, f"{prefix}.stage3", 2 * c, 4 * c, groups,
                         stride=2)
    return s4, s8, s16


def _dilated_unit(b, x, name, c_in, c_out, groups, rate):
    """Residual dilated unit; no activation after the skip addition."""
    h = b.conv(x, f"{name}.conv1", c_in, c_out, dilation=1)
    h = b.group_norm(h, f"{name}.gn1", c_out, groups)
    h = b.relu(h, f"{name}.relu1")
    h = b.conv(h, f"{name}.conv2", c_out, c_out, dilation=2)
    h = b.group_norm(h, f"{name}.gn2", c_out, groups)
    h = b.relu(h, f"{name}.relu2")
    h = b.dropout(h, f"{name}.dropout", rate)
    if c_in == c_out:
        skip = x
    else:
        skip = b.conv(x, f"{name}.skip", c_in, c_out, k=1)
    return b.add(h, skip, f"{name}.add")


def build_backbones(config):
    """Two independent feature extractors emitting stride-4/8/16 maps.

    Extractor A is the plain-conv stack (widths c_A/2c_A/4c_A), extractor B
    the residual stack (c_B/2c_B/4c_B); both are returned as TensorGraphs
    with three outputs, seeded from config.seed.
    """
    cfg = _validated(config)
    builder_a = GraphBuilder(cfg.seed, stream=0)
    xa = builder_a.input(1, cfg.input_size)
    maps_a = _backbone_a(builder_a, xa, cfg.base_channels_a, cfg.groups)
    graph_a = builder_a.build(
        list(maps_a), np.random.default_rng([cfg.seed, 2]), cfg)

    builder_b = GraphBuilder(cfg.seed, stream=1)
    xb = builder_b.input(1, cfg.input_size)
    maps_b = _backbone_b(builder_b, xb, cfg.base_channels_b, cfg.groups)
    graph_b = builder_b.build(
        list(maps_b), np.random.default_rng([cfg.seed, 3]), cfg)
    return graph_a, graph_b


def _validated(config):
    if not isinstance(config, GraphConfig):
        raise ConfigError(
            f"expected a GraphConfig, got {type(config).__name__}")
    return config


def build_pyramid_graph(config):
    """The full classifier: dual backbones, per-scale concatenation and
    laterals, top-down merge, dilated-block cascade, second-order pooling,
    and a one-logit dense head.

    The graph's first output is the logit; the stride-4 merged map is an
    auxiliary second output so the complete pyramid (including the finest
    lateral) stays on a gradient path.
    """
    cfg = _validated(config)
    c_a, c_b, d = cfg.base_channels_a, cfg.base_channels_b, cfg.pyramid_channels
    b = GraphBuilder(cfg.seed, stream=0)
    x = b.input(1, cfg.input_size)
    a4, a8, a16 = _backbone_a(b, x, c_a, cfg.groups)
    b4, b8, b16 = _backbone_b(b, x, c_b, cfg.groups)

    p4 = b.concat([a4, b4], "pyramid.concat4")
    p8 = b.concat([a8, b8], "pyramid.concat8")
    p16 = b.concat([a16, b16], "pyramid.concat16")
    l4 = b.conv(p4, "pyramid.lateral4", c_a + c_b, d, k=1)
    l8 = b.conv(p8, "pyramid.lateral8", 2 * (c_a + c_b), d, k=1)
    l16 = b.conv(p16, "pyramid.lateral16", 4 * (c_a + c_b), d, k=1)
    m16 = l16
    m8 = b.add(l8, b.upsample(m16, "pyramid.up16"), "pyramid.merge8")
    m4 = b.add(l4, b.upsample(m8, "pyramid.up8"), "pyramid.merge4")

    head = m8
    width = d
    for index, block_width in enumerate(cfg.dilated_block_channels, start=1):
        head = _dilated_unit(b, head, f"head.block{index}", width,
                             block_width, cfg.groups, cfg.dropout_rate)
        head = b.maxpool(head, f"head.block{index}.pool")
        width = block_width
    pooled = b.sop(head, "head.sop", width, cfg.sop_channels)
    logit = b.dense(pooled, "head.logit", cfg.sop_channels)

    return b.build([logit, m4], np.random.default_rng([cfg.seed, 1]), cfg)


def pyramid_shape_report(config):
    """Arithmetic dry-run of the pyramid's shape bookkeeping.

    No tensors are allocated, so this works at deployment scale; the desk
    graph is separately cross-checked against the same numbers.
    """
    cfg = _validated(config)
    h, w = cfg.input_size
    c_a, c_b = cfg.base_channels_a, cfg.base_channels_b
    scales = {}
    for stride, factor in ((4, 1), (8, 2), (16, 4)):
        scales[stride] = {
            "a_channels": factor * c_a,
            "b_channels": factor * c_b,
            "concat_channels": factor * (c_a + c_b),
            "height": h // stride,
            "width": w // stride,
        }
    head = []
    size = (h // 8, w // 8)
    for block_width in cfg.dilated_block_channels:
        size = (size[0] // 2, size[1] // 2)
        head.append({"channels": block_width,
                     "height": size[0], "width": size[1]})
    return {
        "scales": scales,
        "concat_channels": [scales[s]["concat_channels"] for s in (4, 8, 16)],
        "lateral_channels": cfg.pyramid_channels,
        "head": head,
        "sop_features": cfg.sop_channels,
    }


def forward(graph, batch, mode="infer"):
    """Per-image normalcy scores in (0, 1) from the classifier graph."""
    outs = graph.forward(batch, mode)
    logits = outs[0] if isinstance(outs, tuple) else outs
    return ops.sigmoid(logits)


def backward(graph, batch, labels):
    """Mean-BCE gradients for every parameter (train-mode forward)."""
    labels = np.asarray(labels, dtype=np.float64)
    outs = graph.forward(batch, mode="train")
    logits = outs[0] if isinstance(outs, tuple) else outs
    loss, grad_logits = ops.bce_with_logits(logits, labels)
    if isinstance(outs, tuple):
        grads = [grad_logits] + [np.zeros_like(o) for o in outs[1:]]
    else:
        grads = grad_logits
    return loss, graph.backward(grads)
