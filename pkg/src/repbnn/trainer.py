"""Desk-scale straight-through-estimator training over the graph IR.

The forward pass executes the graph with dense arithmetic on sign-valued
operands so autograd can flow; ``Sign`` nodes and binary-conv weights use
the straight-through estimator, whose backward is the derivative of the
clipped linear surrogate: 1 inside |x| <= 1, 0 outside.  Latent weights
stay full precision.

Batch norm here stores the biased batch variance in its running buffers,
so with momentum 1 a single batch makes eval output equal train output.
The optimizer is plain SGD with momentum 0.9.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .datasets import load_dataset
from .errors import DivergedLoss, NotRepGraph, ShapeMismatch, UnknownLayer, ValidationError
from .graph import BINARY_CONV_KINDS, CONV_KINDS, REP_KINDS, Graph, conv_spec
from .tensors import DenseTensor, dense_to_blob

_MOMENTUM = 0.9
_BN_EPS = 1e-5


class _SignSTE(torch.autograd.Function):
    """sign(x) with sign(0) = +1; backward is 1 on |x| <= 1, else 0."""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, torch.ones_like(x), -torch.ones_like(x))

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        return grad_out * (x.abs() <= 1).to(grad_out.dtype)


def sign_ste(x: torch.Tensor) -> torch.Tensor:
    return _SignSTE.apply(x)


class _ConvParams(nn.Module):
    def __init__(self, spec, gen):
        super().__init__()
        fan_in = spec.c_in * spec.kh * spec.kw
        std = (2.0 / fan_in) ** 0.5
        # latent weights always live in base (c_out, c_in, kh, kw) form
        self.weight = nn.Parameter(
            torch.randn(spec.base_kernel_dims, generator=gen) * std
        )


class _FCParams(nn.Module):
    def __init__(self, in_features, out_features, gen):
        super().__init__()
        std = (1.0 / in_features) ** 0.5
        self.weight = nn.Parameter(
            torch.randn(out_features, in_features, generator=gen) * std
        )
        self.bias = nn.Parameter(torch.zeros(out_features))


class _BNParams(nn.Module):
    def __init__(self, channels, init_noise, gen):
        super().__init__()
        scale = torch.ones(channels)
        if init_noise:
            scale += init_noise * (2 * torch.rand(channels, generator=gen) - 1)
        self.weight = nn.Parameter(scale)
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))


class _PReLUParams(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.shift_in = nn.Parameter(torch.zeros(channels))
        self.slope = nn.Parameter(torch.full((channels,), 0.25))
        self.shift_out = nn.Parameter(torch.zeros(channels))


class GraphModule(nn.Module):
    """Executable torch view of a graph, one parameter bundle per node."""

    def __init__(self, graph: Graph, *, bn_momentum: float = 0.1,
                 bn_init_noise: float = 0.0, seed: int = 0):
        super().__init__()
        graph.validate()
        self.graph = graph
        self.bn_momentum = bn_momentum
        self.order = graph.topo_order()
        gen = torch.Generator().manual_seed(seed)
        mods: dict[str, nn.Module] = {}
        for nid in self.order:
            node = graph.nodes[nid]
            if node.kind in CONV_KINDS:
                mods[nid] = _ConvParams(conv_spec(node), gen)
            elif node.kind == "FC":
                mods[nid] = _FCParams(node.attrs["in_features"],
                                      node.attrs["out_features"], gen)
            elif node.kind == "BatchNorm":
                mods[nid] = _BNParams(node.attrs["channels"], bn_init_noise, gen)
            elif node.kind == "PReLUShifted":
                mods[nid] = _PReLUParams(node.attrs["channels"])
        self.mods = nn.ModuleDict(mods)

    def _batchnorm(self, nid, v):
        p = self.mods[nid]
        if self.training:
            mean = v.mean(dim=(0, 2, 3))
            var = v.var(dim=(0, 2, 3), unbiased=False)
            with torch.no_grad():
                m = self.bn_momentum
                p.running_mean.mul_(1 - m).add_(mean.detach(), alpha=m)
                p.running_var.mul_(1 - m).add_(var.detach(), alpha=m)
        else:
            mean, var = p.running_mean, p.running_var
        shape = (1, -1, 1, 1)
        vhat = (v - mean.reshape(shape)) / torch.sqrt(var.reshape(shape) + _BN_EPS)
        return vhat * p.weight.reshape(shape) + p.bias.reshape(shape)

    def forward(self, x: torch.Tensor, capture=None):
        """Run the graph; optionally capture named activations.

        Returns the output tensor, or ``(output, {id: activation})`` when
        ``capture`` is a collection of node ids (or ``"all"``).
        """
        vals: dict[str, torch.Tensor] = {}
        grab_all = capture == "all"
        grabbed: dict[str, torch.Tensor] = {}
        for nid in self.order:
            node = self.graph.nodes[nid]
            kind = node.kind
            ins = [vals[i] for i in node.inputs]
            if kind == "Input":
                v = x
            elif kind in CONV_KINDS:
                spec = conv_spec(node)
                w = self.mods[nid].weight
                if kind in REP_KINDS:
                    w = w.reshape(spec.kernel_dims)
                if kind in BINARY_CONV_KINDS:
                    w = sign_ste(w)
                v = F.conv2d(ins[0], w, stride=spec.stride, padding=spec.padding)
                if kind in REP_KINDS and node.attrs["repeat"]:
                    v = v.repeat(1, spec.beta * spec.beta, 1, 1)
            elif kind == "BatchNorm":
                v = self._batchnorm(nid, ins[0])
            elif kind == "Sign":
                v = sign_ste(ins[0])
            elif kind == "ReLU":
                v = F.relu(ins[0])
            elif kind == "PReLUShifted":
                p = self.mods[nid]
                shape = (1, -1, 1, 1)
                v = F.prelu(ins[0] - p.shift_in.reshape(shape), p.slope)
                v = v + p.shift_out.reshape(shape)
            elif kind == "Add":
                v = ins[0]
                for other in ins[1:]:
                    v = v + other
            elif kind == "AvgPool":
                v = F.avg_pool2d(ins[0], node.attrs["kernel"],
                                 node.attrs["stride"], node.attrs["pad"])
            elif kind == "MaxPool":
                v = F.max_pool2d(ins[0], node.attrs["kernel"],
                                 node.attrs["stride"], node.attrs["pad"])
            elif kind == "Repeat":
                v = ins[0].repeat(1, node.attrs["times"], 1, 1)
            elif kind == "Flatten":
                v = ins[0].flatten(1)
            elif kind == "FC":
                p = self.mods[nid]
                v = F.linear(ins[0][:, : node.attrs["in_features"]], p.weight, p.bias)
            else:  # pragma: no cover - schema keeps kinds closed
                raise ValidationError(f"node {nid}: no executor for kind {kind}")
            vals[nid] = v
            if grab_all or (capture is not None and nid in capture):
                grabbed[nid] = v
        out = vals[self.graph.outputs[0]]
        if capture is None:
            return out
        return out, grabbed

    # -- parameter plumbing ------------------------------------------------

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Every parameter and buffer as ``node_id.name -> float32 array``."""
        out = {}
        for nid, sub in self.mods.items():
            for name, p in list(sub.named_parameters(recurse=False)) + list(
                sub.named_buffers(recurse=False)
            ):
                out[f"{nid}.{name}"] = p.detach().numpy().astype(np.float32).copy()
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for nid, sub in self.mods.items():
                for name, p in list(sub.named_parameters(recurse=False)) + list(
                    sub.named_buffers(recurse=False)
                ):
                    key = f"{nid}.{name}"
                    if key not in arrays:
                        raise ShapeMismatch(f"checkpoint is missing {key}")
                    arr = np.asarray(arrays[key], dtype=np.float32)
                    if arr.size != p.numel():
                        raise ShapeMismatch(
                            f"{key}: checkpoint has {arr.size} values, need {p.numel()}"
                        )
                    p.copy_(torch.from_numpy(arr.reshape(p.shape).copy()))


# -- checkpoint archive ---------------------------------------------------
#
# text manifest, one line per parameter ("<node_id>.<name> <offset> <nbytes>"),
# a blank line, then concatenated dense tensor blobs at the given offsets.

_CKPT_MAGIC = "repbnn-checkpoint v1"


def _pad4(shape) -> tuple[int, int, int, int]:
    s = tuple(shape) + (1,) * (4 - len(shape))
    if len(s) != 4:
        raise ShapeMismatch(f"cannot store rank-{len(shape)} tensor in a blob")
    return s


def save_checkpoint(arrays: dict[str, np.ndarray], path: str) -> None:
    blobs, manifest, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float32)
        blob = dense_to_blob(DenseTensor.from_array(arr.reshape(_pad4(arr.shape))))
        manifest.append(f"{name} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC.encode())
        f.write(b"\n")
        f.write("\n".join(manifest).encode())
        f.write(b"\n\n")
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    from .tensors import dense_from_blob

    with open(path, "rb") as f:
        raw = f.read()
    head, sep, data = raw.partition(b"\n\n")
    lines = head.decode().splitlines()
    if not sep or not lines or lines[0] != _CKPT_MAGIC:
        raise ShapeMismatch(f"{path} is not a {_CKPT_MAGIC} archive")
    out = {}
    for line in lines[1:]:
        name, offset, nbytes = line.rsplit(" ", 2)
        t = dense_from_blob(data[int(offset): int(offset) + int(nbytes)])
        out[name] = t.to_array()
    return out


# -- training loop ---------------------------------------------------------


@dataclass
class TrainConfig:
    """Everything that determines a run; the seed pins it bitwise."""

    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.05
    weight_decay: float = 0.0
    seed: int = 0
    dataset_path: str = "blobs"
    eval_split: float = 0.2
    deterministic: bool = True
    bn_init_noise: float = 0.01
    bn_momentum: float = 0.1


@dataclass
class TrainResult:
    loss_curve: list[float] = field(default_factory=list)
    eval_accuracy: list[float] = field(default_factory=list)
    module: GraphModule | None = None

    @property
    def final_eval_accuracy(self) -> float:
        return self.eval_accuracy[-1] if self.eval_accuracy else float("nan")


def train(g: Graph, cfg: TrainConfig) -> TrainResult:
    """Train ``g`` on the configured dataset; returns curves and the module."""
    g.validate()
    if cfg.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)

    n_, c, h, w = g.default_input_dims()
    classes = next(
        n.attrs["out_features"] for n in g.nodes.values() if n.kind == "FC"
    )
    x, y = load_dataset(cfg.dataset_path, seed=cfg.seed,
                        image_dims=(c, h, w), num_classes=classes)
    if x.shape[1:] != (c, h, w):
        raise ShapeMismatch(
            f"dataset images {x.shape[1:]} do not match graph input {(c, h, w)}"
        )

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(x))
    n_eval = max(1, int(round(len(x) * cfg.eval_split)))
    eval_idx, train_idx = perm[:n_eval], perm[n_eval:]
    x_train = torch.from_numpy(x[train_idx])
    y_train = torch.from_numpy(y[train_idx])
    x_eval = torch.from_numpy(x[eval_idx])
    y_eval = torch.from_numpy(y[eval_idx])

    module = GraphModule(g, bn_momentum=cfg.bn_momentum,
                         bn_init_noise=cfg.bn_init_noise, seed=cfg.seed)
    opt = torch.optim.SGD(module.parameters(), lr=cfg.learning_rate,
                          momentum=_MOMENTUM, weight_decay=cfg.weight_decay)

    result = TrainResult(module=module)
    n_train = len(x_train)
    for _ in range(cfg.epochs):
        module.train()
        order = rng.permutation(n_train)
        total = 0.0
        for lo in range(0, n_train, cfg.batch_size):
            idx = order[lo: lo + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            loss = F.cross_entropy(module(xb), yb)
            if not torch.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {len(result.loss_curve)}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        result.loss_curve.append(total / n_train)
        module.eval()
        with torch.no_grad():
            pred = module(x_eval).argmax(dim=1)
            result.eval_accuracy.append(float((pred == y_eval).float().mean()))
    return result


# -- replicated-block diagnostics ------------------------------------------


@dataclass(frozen=True)
class RepStage:
    """Probe points around one replicating convolution."""

    conv_id: str
    post_repeat_id: str     # node whose output carries the fresh copies
    post_bn_id: str | None  # norm applied on the copies, when it follows them
    post_residual_id: str | None
    blocks: int


@dataclass(frozen=True)
class LayerDiversity:
    layer_id: str
    blocks: int
    post_repeat: float
    post_bn: float | None
    post_residual: float | None


@dataclass(frozen=True)
class DiversityReport:
    per_layer: tuple[LayerDiversity, ...]


def rep_stages(g: Graph) -> list[RepStage]:
    stages = []
    for nid in g.topo_order():
        node = g.nodes[nid]
        if node.kind not in REP_KINDS:
            continue
        beta = node.attrs["beta"]
        if node.attrs["repeat"]:
            post_repeat = nid
            bn = next((c.id for c in g.consumers(nid) if c.kind == "BatchNorm"), None)
            tail = bn or post_repeat
        else:
            bn_node = next((c for c in g.consumers(nid) if c.kind == "BatchNorm"), None)
            rep = None
            if bn_node is not None:
                rep = next((c.id for c in g.consumers(bn_node.id) if c.kind == "Repeat"), None)
            if rep is None:
                continue
            post_repeat, bn, tail = rep, None, rep
        add = next((c.id for c in g.consumers(tail) if c.kind == "Add"), None)
        stages.append(RepStage(nid, post_repeat, bn, add, beta * beta))
    return stages


def _block_distance(t: torch.Tensor, blocks: int) -> float:
    """Mean pairwise L2 distance between the channel blocks of ``t``."""
    parts = t.chunk(blocks, dim=1)
    dists = [
        torch.linalg.vector_norm(parts[i] - parts[j])
        for i in range(blocks)
        for j in range(i + 1, blocks)
    ]
    return float(torch.stack(dists).mean())


def channel_diversity(g: Graph, weights: dict[str, np.ndarray],
                      probe: DenseTensor) -> DiversityReport:
    """Distances between replicated channel blocks at each probe point.

    Immediately after a repeat the distance is zero by construction; batch
    normalization and residual accumulation are what pull the copies apart.
    """
    stages = rep_stages(g)
    if g.beta == 1 or not stages:
        raise NotRepGraph(f"graph {g.name!r} has no replicating convolutions")
    module = GraphModule(g)
    module.load_arrays(weights)
    module.eval()
    wanted = set()
    for st in stages:
        wanted.update(i for i in (st.post_repeat_id, st.post_bn_id, st.post_residual_id) if i)
    with torch.no_grad():
        _, acts = module(torch.from_numpy(probe.to_array().copy()), capture=wanted)
    layers = []
    for st in stages:
        layers.append(LayerDiversity(
            layer_id=st.conv_id,
            blocks=st.blocks,
            post_repeat=_block_distance(acts[st.post_repeat_id], st.blocks),
            post_bn=_block_distance(acts[st.post_bn_id], st.blocks) if st.post_bn_id else None,
            post_residual=_block_distance(acts[st.post_residual_id], st.blocks)
            if st.post_residual_id else None,
        ))
    return DiversityReport(per_layer=tuple(layers))


def dump_features(g: Graph, weights: dict[str, np.ndarray], probe: DenseTensor,
                  layer_id: str, out_dir: str) -> list[str]:
    """Write post-repeat / post-BN / post-residual activations as tensor blobs."""
    stage = next((s for s in rep_stages(g) if s.conv_id == layer_id), None)
    if stage is None:
        raise UnknownLayer(
            f"{layer_id!r} is not a replicating convolution of graph {g.name!r}"
        )
    module = GraphModule(g)
    module.load_arrays(weights)
    module.eval()
    wanted = {i for i in (stage.post_repeat_id, stage.post_bn_id,
                          stage.post_residual_id) if i}
    with torch.no_grad():
        _, acts = module(torch.from_numpy(probe.to_array().copy()), capture=wanted)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for suffix, nid in (("post_repeat", stage.post_repeat_id),
                        ("post_bn", stage.post_bn_id),
                        ("post_residual", stage.post_residual_id)):
        if nid is None:
            continue
        path = os.path.join(out_dir, f"{layer_id}_{suffix}.bin")
        t = DenseTensor.from_array(acts[nid].numpy())
        with open(path, "wb") as f:
            f.write(dense_to_blob(t))
        paths.append(path)
    return paths
