"""Learned plane scoring: volume downscaling, EdgeConv over the plane lattice, and training.

Each candidate plane's correlation volume is shrunk by three strided 3D
convolutions to an ``(D/4, H/8, W/8)`` grid and flattened into a
descriptor. The descriptors of one stage's lattice are node features of the
lattice's k-NN graph; three EdgeConv blocks and a final affine map give one
confidence per plane.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import DivergenceError, InvalidInputError, InvalidLabelError
from .hemisphere import angle_between

LEAKY_SLOPE = 0.2
HIDDEN_WIDTHS = (256, 128, 64)
LEARNING_RATE = 3e-4
WEIGHT_DECAY = 1e-7
PROB_CLAMP = 1e-7

# (depth, row, column) strides of the three blocks
CONV_STRIDES = ((2, 2, 2), (2, 2, 2), (1, 2, 2))


class ConvStack(nn.Module):
    """Three single-channel 3x3x3 conv blocks: (D, H, W) -> (D/4, H/8, W/8)."""

    def __init__(self):
        super().__init__()
        self.blocks = nn.ModuleList(
            nn.Conv3d(1, 1, kernel_size=3, stride=s, padding=1) for s in CONV_STRIDES)

    def forward(self, vol):
        x = vol.reshape(-1, 1, *vol.shape[-3:])
        for conv in self.blocks:
            x = F.leaky_relu(conv(x), LEAKY_SLOPE)
        return x.flatten(1)


def descriptor_length(depth, height, width):
    return (depth // 4) * (height // 8) * (width // 8)


def _check_divisible(shape):
    d, h, w = shape[-3:]
    if h % 8 or w % 8 or d % 4:
        raise InvalidInputError(f"volume (D, H, W) = {shape[-3:]} needs H, W divisible by 8 and D by 4")


def downscale3d(volume, conv):
    """Flat descriptor (depth-major, then row, then column) of one correlation volume."""
    values = volume.values if hasattr(volume, "values") else np.asarray(volume)
    _check_divisible(values.shape)
    dtype = next(conv.parameters()).dtype
    with torch.no_grad():
        out = conv(torch.as_tensor(np.ascontiguousarray(values), dtype=dtype)[None])
    return out[0].numpy()


class EdgeConv(nn.Module):
    """``out_i = max_j leaky(bn(W [h_i ; h_j - h_i] + b))`` over the out-neighbours ``j`` of ``i``."""

    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features = in_features
        self.linear = nn.Linear(2 * in_features, out_features)
        self.norm = nn.BatchNorm1d(out_features)

    def forward(self, h, graph):
        if h.shape[-1] != self.in_features:
            raise InvalidInputError(f"expected {self.in_features} node features, got {h.shape[-1]}")
        k_nodes = h.shape[0]
        graph = torch.as_tensor(np.asarray(graph), dtype=torch.long)
        if graph.shape[1] == 0:
            graph = torch.arange(k_nodes).reshape(-1, 1)
        w_self, w_edge = self.linear.weight.split(self.in_features, dim=1)
        # W [h_i ; h_j - h_i] = (W1 - W2) h_i + W2 h_j
        centre = h @ (w_self - w_edge).T + self.linear.bias
        neigh = h @ w_edge.T
        edges = centre[:, None, :] + neigh[graph]
        k = graph.shape[1]
        edges = self.norm(edges.reshape(k_nodes * k, -1)).reshape(k_nodes, k, -1)
        return F.leaky_relu(edges, LEAKY_SLOPE).max(dim=1).values


def edgeconv_forward(layer, node_features, graph):
    return layer(node_features, graph)


class ScoringHead(nn.Module):
    def __init__(self, in_features=1024, widths=HIDDEN_WIDTHS, conv=True):
        super().__init__()
        self.in_features = in_features
        self.widths = tuple(widths)
        self.conv = ConvStack() if conv else None
        if self.conv is not None:
            # descriptors are precomputed once; the downscaler is not trained
            self.conv.requires_grad_(False)
        sizes = (in_features,) + self.widths
        self.edges = nn.ModuleList(EdgeConv(a, b) for a, b in zip(sizes, sizes[1:]))
        self.out = nn.Linear(sizes[-1], 1)

    def logits(self, descriptors, graph):
        h = descriptors
        for layer in self.edges:
            h = layer(h, graph)
        return self.out(h)[:, 0]

    def forward(self, descriptors, graph):
        return torch.sigmoid(self.logits(descriptors, graph))

    def config(self):
        return {"in_features": self.in_features, "widths": list(self.widths), "conv": self.conv is not None}


def build_head(in_features=1024, widths=HIDDEN_WIDTHS, seed=0):
    torch.manual_seed(seed)
    return ScoringHead(in_features, widths)


def descriptor(head, volume):
    return downscale3d(volume, head.conv)


def head_forward(head, descriptors, graph):
    """Per-node confidences in (0, 1), evaluated with running normalization statistics."""
    was_training = head.training
    head.eval()
    dtype = next(head.parameters()).dtype
    try:
        with torch.no_grad():
            c = head(torch.as_tensor(np.asarray(descriptors), dtype=dtype), graph)
    finally:
        head.train(was_training)
    return c.numpy()


# --- labels and loss -----------------------------------------------------

@dataclass
class StageLabels:
    positives: np.ndarray
    negatives: np.ndarray

    @classmethod
    def nearest(cls, normals, gt_normal):
        """The single node closest to the ground truth is positive, all others negative."""
        pos = int(np.argmin(angle_between(normals, gt_normal)))
        neg = np.array([i for i in range(len(normals)) if i != pos], dtype=np.intp)
        return cls(np.array([pos], dtype=np.intp), neg)


def class_balanced_bce(confidences, labels):
    """``0.5 * mean_pos(-log c) + 0.5 * mean_neg(-log(1 - c))``.

    Accepts a tensor (differentiable result) or any array (float result).
    """
    pos = np.asarray(labels.positives, dtype=np.intp)
    neg = np.asarray(labels.negatives, dtype=np.intp)
    if len(pos) == 0 or len(neg) == 0:
        raise InvalidLabelError("class-balanced BCE needs at least one positive and one negative")
    as_tensor = torch.is_tensor(confidences)
    c = confidences if as_tensor else torch.as_tensor(np.asarray(confidences, dtype=np.float64))
    c = c.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = 0.5 * (-torch.log(c[pos])).mean() + 0.5 * (-torch.log1p(-c[neg])).mean()
    return loss if as_tensor else float(loss)


# --- training ------------------------------------------------------------

def make_optimizer(head, lr=LEARNING_RATE, weight_decay=WEIGHT_DECAY):
    # decoupled decay: a zero gradient leaves only p <- p (1 - lr wd)
    params = [p for p in head.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay)


def batch_loss(head, batch):
    """Mean over samples of the summed per-stage losses.

    ``batch`` is a list of samples; a sample is a list of
    ``(descriptors, graph, labels)`` stages.
    """
    dtype = next(head.parameters()).dtype
    total = 0.0
    for sample in batch:
        for desc, graph, labels in sample:
            conf = head(torch.as_tensor(np.asarray(desc), dtype=dtype), graph)
            total = total + class_balanced_bce(conf, labels)
    return total / max(len(batch), 1)


def train_step(head, batch, optimizer):
    """One AdamW update; returns the loss before the update."""
    head.train()
    optimizer.zero_grad(set_to_none=False)
    loss = batch_loss(head, batch)
    value = float(loss.detach()) if torch.is_tensor(loss) else float(loss)
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite training loss {value}")
    if torch.is_tensor(loss):
        loss.backward()
    for p in head.parameters():
        if p.requires_grad and p.grad is None:
            p.grad = torch.zeros_like(p)
    optimizer.step()
    return value


# --- checkpoints ---------------------------------------------------------

CHECKPOINT_FORMAT = "symdet-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(head, path):
    """Write a JSON manifest at ``path`` and the tensors to ``<stem>.bin``.

    The blob is the concatenation of every state-dict array as little-endian
    float32, in manifest order; each manifest entry gives name, shape, byte
    offset and byte length.
    """
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    entries, chunks, offset = [], [], 0
    for name, tensor in head.state_dict().items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob_path.write_bytes(b"".join(chunks))
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": "float32-le",
        "blob_path": blob_path.name,
        "config": head.config(),
        "tensors": entries,
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_checkpoint(path):
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise InvalidInputError(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    cfg = manifest["config"]
    head = ScoringHead(cfg["in_features"], tuple(cfg["widths"]), cfg.get("conv", True))
    blob = (path.parent / manifest["blob_path"]).read_bytes()
    state = head.state_dict()
    for e in manifest["tensors"]:
        if e["offset"] + e["nbytes"] > len(blob):
            raise InvalidInputError(f"checkpoint blob truncated at tensor {e['name']}")
        arr = np.frombuffer(blob, dtype="<f4", count=e["nbytes"] // 4, offset=e["offset"])
        ref = state[e["name"]]
        state[e["name"]] = torch.as_tensor(arr.reshape(e["shape"]).copy()).to(ref.dtype)
    head.load_state_dict(state)
    head.eval()
    return head
