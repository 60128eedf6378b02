"""Architecture descriptions and their expansion into a static layer graph."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

OPS = ("conv", "bn", "relu", "pool", "gap", "dense", "dropout", "upconv", "concat", "sigmoid")
INPUT = -1
HEAD_FLOOR = (32, 16)


class SpecError(ValueError):
    """Invalid architecture description."""


@dataclass(frozen=True)
class Node:
    """One layer of the graph.

    ``inputs`` are indices of earlier nodes (``-1`` is the network input); an
    empty tuple means "the previous node".
    """

    op: str
    name: str = ""
    inputs: tuple[int, ...] = ()
    cin: int = 0
    cout: int = 0
    k: int = 0
    bias: bool = True
    rate: float = 0.0

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Trainable parameter shapes keyed by full parameter name."""
        if self.op == "conv" or self.op == "upconv":
            shapes = {f"{self.name}.w": (self.k, self.k, self.cin, self.cout)}
        elif self.op == "dense":
            shapes = {f"{self.name}.w": (self.cin, self.cout)}
        elif self.op == "bn":
            return {f"{self.name}.gamma": (self.cout,), f"{self.name}.beta": (self.cout,)}
        else:
            return {}
        if self.bias:
            shapes[f"{self.name}.b"] = (self.cout,)
        return shapes

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.op == "bn":
            return {f"{self.name}.mean": (self.cout,), f"{self.name}.var": (self.cout,)}
        return {}

    @property
    def is_weight_layer(self) -> bool:
        """Layers contributing a weight tensor W_i to the norm-based measures."""
        return self.op in ("conv", "dense", "upconv")


@dataclass(frozen=True)
class Graph:
    input_shape: tuple[int, ...]
    nodes: tuple[Node, ...]
    logits: int
    mask: int | None = None

    def ancestors(self, outputs: tuple[int, ...]) -> frozenset[int]:
        seen: set[int] = set()
        stack = [o for o in outputs if o is not None]
        while stack:
            i = stack.pop()
            if i == INPUT or i in seen:
                continue
            seen.add(i)
            stack.extend(self.nodes[i].inputs)
        return frozenset(seen)

    @property
    def classification_nodes(self) -> frozenset[int]:
        return self.ancestors((self.logits,))

    def param_shapes(self, branch: str = "all") -> dict[str, tuple[int, ...]]:
        keep = self._branch(branch)
        out: dict[str, tuple[int, ...]] = {}
        for i, node in enumerate(self.nodes):
            if i in keep:
                out.update(node.param_shapes())
        return out

    def buffer_shapes(self, branch: str = "all") -> dict[str, tuple[int, ...]]:
        keep = self._branch(branch)
        out: dict[str, tuple[int, ...]] = {}
        for i, node in enumerate(self.nodes):
            if i in keep:
                out.update(node.buffer_shapes())
        return out

    def weight_layers(self, branch: str = "classification") -> list[Node]:
        keep = self._branch(branch)
        return [n for i, n in enumerate(self.nodes) if i in keep and n.is_weight_layer]

    def _branch(self, branch: str) -> frozenset[int]:
        if branch == "all":
            return frozenset(range(len(self.nodes)))
        if branch == "classification":
            return self.classification_nodes
        raise ValueError(f"unknown branch {branch!r}")


def _resolve(nodes: list[Node]) -> tuple[Node, ...]:
    out = []
    for i, n in enumerate(nodes):
        if not n.inputs:
            n = Node(**{**asdict(n), "inputs": (i - 1,)})
        out.append(n)
    return tuple(out)


def _conv_out_size(h: int) -> int:
    return (h + 1) // 2


@dataclass(frozen=True)
class NetworkSpec:
    """VGG-like encoder (conv blocks of two 3x3 convolutions), FC head, optional
    U-Net style decoder.

    Channel widths default to ``base_width * 2**block`` capped at
    ``64 * base_width`` (32, 64, ..., 2048, 2048 for ``base_width=32``). A block
    is followed by 2x2 max pooling unless the pooled map would fall below
    ``min_pool_size``. The head is global average pooling followed by three
    dense layers; default widths reproduce the 32-16-2 ... 512-64-2 schedule.
    """

    input_size: tuple[int, int] = (32, 32)
    blocks: int = 2
    base_width: int = 8
    channels: tuple[int, ...] | None = None
    fc_widths: tuple[int, int, int] | None = None
    batchnorm: bool = False
    dropout: float = 0.0
    decoder: bool = False
    kernel_size: int = 3
    min_pool_size: int = 8

    kind: str = field(default="network", init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        if self.channels is not None:
            object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.fc_widths is not None:
            object.__setattr__(self, "fc_widths", tuple(int(c) for c in self.fc_widths))
        self.validate()

    def validate(self) -> None:
        if not 1 <= self.blocks <= 8:
            raise SpecError(f"blocks must be in [1, 8], got {self.blocks}")
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise SpecError(f"input_size must be (H, W) with positive extents, got {self.input_size}")
        if self.base_width < 1:
            raise SpecError("base_width must be positive")
        if self.channels is not None and len(self.channels) != self.blocks:
            raise SpecError(f"channels has {len(self.channels)} entries for {self.blocks} blocks")
        widths = self.fc_widths
        if widths is not None and (len(widths) != 3 or widths[-1] != 2 or min(widths) < 1):
            raise SpecError(f"fc_widths must be three positive widths ending in 2, got {widths}")
        if not 0.0 <= self.dropout < 1.0:
            raise SpecError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise SpecError("kernel_size must be odd")

    @property
    def block_channels(self) -> tuple[int, ...]:
        if self.channels is not None:
            return self.channels
        cap = 64 * self.base_width
        return tuple(min(self.base_width * 2**b, cap) for b in range(self.blocks))

    @property
    def pool_flags(self) -> tuple[bool, ...]:
        h, w = self.input_size
        flags = []
        for _ in range(self.blocks):
            ph, pw = _conv_out_size(h), _conv_out_size(w)
            pool = ph >= self.min_pool_size and pw >= self.min_pool_size
            flags.append(pool)
            if pool:
                h, w = ph, pw
        return tuple(flags)

    @property
    def head_widths(self) -> tuple[int, int, int]:
        if self.fc_widths is not None:
            return self.fc_widths
        # floors sit below every width of the full-scale schedule, so they only
        # widen the starved heads of narrow desk-scale networks
        fc1 = max(HEAD_FLOOR[0], min(self.block_channels[-1] // 2, 16 * self.base_width))
        fc2 = max(HEAD_FLOOR[1], min(fc1 // 2, 2 * self.base_width))
        return (fc1, fc2, 2)

    def graph(self) -> Graph:
        nodes: list[Node] = []
        k = self.kernel_size

        def add(node: Node) -> int:
            nodes.append(node)
            return len(nodes) - 1

        cur, cin = INPUT, 1
        skips: list[tuple[int, int, int]] = []  # (node, channels, block)
        for b, (c, pool) in enumerate(zip(self.block_channels, self.pool_flags)):
            for j in range(2):
                cur = add(Node("conv", f"enc{b}.conv{j}", (cur,), cin, c, k))
                if self.batchnorm:
                    cur = add(Node("bn", f"enc{b}.bn{j}", (cur,), c, c))
                cur = add(Node("relu", f"enc{b}.relu{j}", (cur,)))
                cin = c
            if pool:
                skips.append((cur, c, b))
                cur = add(Node("pool", f"enc{b}.pool", (cur,)))
        bottleneck, bottleneck_c = cur, cin

        h = add(Node("gap", "head.gap", (cur,)))
        fin = cin
        widths = self.head_widths
        for i, wdt in enumerate(widths):
            h = add(Node("dense", f"head.fc{i}", (h,), fin, wdt))
            if i < len(widths) - 1:
                h = add(Node("relu", f"head.relu{i}", (h,)))
                if self.dropout > 0:
                    h = add(Node("dropout", f"head.drop{i}", (h,), rate=self.dropout))
            fin = wdt
        logits = h

        mask = None
        if self.decoder:
            cur, cin = bottleneck, bottleneck_c
            for skip, c, b in reversed(skips):
                up = add(Node("upconv", f"dec{b}.up", (cur,), cin, c, 2))
                cur = add(Node("concat", f"dec{b}.cat", (up, skip)))
                cin = 2 * c
                for j in range(2):
                    cur = add(Node("conv", f"dec{b}.conv{j}", (cur,), cin, c, k))
                    if self.batchnorm:
                        cur = add(Node("bn", f"dec{b}.bn{j}", (cur,), c, c))
                    cur = add(Node("relu", f"dec{b}.relu{j}", (cur,)))
                    cin = c
            cur = add(Node("conv", "seg.out", (cur,), cin, 1, 1))
            mask = add(Node("sigmoid", "seg.sigmoid", (cur,)))
        return Graph((*self.input_size, 1), tuple(nodes), logits, mask)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["kind"] = "network"
        return d


@dataclass(frozen=True)
class SequentialSpec:
    """An explicit chain of layers, used for small hand-built networks.

    ``input_shape`` is ``(H, W, C)`` for image inputs or ``(features,)``.
    """

    input_shape: tuple[int, ...]
    layers: tuple[Node, ...]
    kind: str = field(default="sequential", init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(
            n if isinstance(n, Node) else Node(**n) for n in self.layers))
        for n in self.layers:
            if n.op not in OPS:
                raise SpecError(f"unknown op {n.op!r}")
            if n.op in ("concat", "sigmoid", "upconv"):
                raise SpecError(f"op {n.op!r} is not supported in a sequential spec")
        names = [n.name for n in self.layers if n.param_shapes()]
        if len(set(names)) != len(names):
            raise SpecError("parameterised layers need unique names")

    @property
    def decoder(self) -> bool:
        return False

    def graph(self) -> Graph:
        nodes = _resolve([Node(**{**asdict(n), "inputs": ()}) for n in self.layers])
        return Graph(self.input_shape, nodes, len(nodes) - 1)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "sequential", "input_shape": list(self.input_shape),
                "layers": [asdict(n) for n in self.layers]}


def spec_from_dict(d: dict[str, Any]) -> NetworkSpec | SequentialSpec:
    d = dict(d)
    kind = d.pop("kind", "network")
    if kind == "network":
        for key in ("input_size", "channels", "fc_widths"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return NetworkSpec(**d)
    if kind == "sequential":
        layers = []
        for n in d["layers"]:
            n = dict(n)
            n["inputs"] = tuple(n.get("inputs", ()))
            layers.append(Node(**n))
        return SequentialSpec(tuple(d["input_shape"]), tuple(layers))
    raise SpecError(f"unknown spec kind {kind!r}")


def param_count(spec: NetworkSpec | SequentialSpec, branch: str = "all") -> int:
    """Number of trainable parameters, enumerated over layer shapes."""
    return sum(math.prod(s) for s in spec.graph().param_shapes(branch).values())


def conv_param_count(kernel_sizes, channels) -> int:
    """Closed form for a chain of biased convolutions: sum_i c_i (k_i^2 c_{i-1} + 1).

    ``channels`` includes the input channel count, so it is one longer than
    ``kernel_sizes``.
    """
    if len(channels) != len(kernel_sizes) + 1:
        raise ValueError("channels must have one more entry than kernel_sizes")
    return sum(c * (k * k * cp + 1) for k, cp, c in zip(kernel_sizes, channels[:-1], channels[1:]))
