"""Table-forecasting network: attention embedding, frozen decoder backbone
with low-rank adapters on the Q/V projections, and complex reassembly.

Input is a batch of complex history windows (B, T, N, M); output is the
predicted future (B, F, N, M).  Normalization statistics are computed per
sample inside forward and inverted on the way out, so the model consumes
and produces raw channel tables.

Trainable parameters: the two stream embeddings (linear + attention
projections), the token resize map, the output head, and every adapter
factor pair.  Everything else in the backbone (base projections, MLPs,
layer norms, positional table) stays frozen.
"""

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataset import DegenerateSampleError
from .seeds import torch_seed_for

CHECKPOINT_MAGIC = b"FPCKPT1\n"
_SIGMA_FLOOR = 1e-12


class CheckpointError(RuntimeError):
    """Raised for unreadable or corrupted checkpoint files."""


@dataclass(frozen=True)
class NetConfig:
    d_model: int = 768
    heads: int = 8  # embedding attention heads
    n_layers: int = 6
    lora_rank: int = 4
    history_len: int = 8
    horizon: int = 8
    ports_z: int = 50  # grid rows N
    ports_y: int = 100  # grid columns M
    backbone_heads: int = 12
    max_positions: int = 1024

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.d_model % self.backbone_heads:
            raise ValueError("d_model must be divisible by backbone_heads")
        if self.lora_rank < 1 or self.lora_rank > self.d_model // 2:
            raise ValueError(
                f"lora_rank must lie in 1..{self.d_model // 2} for d_model={self.d_model}"
            )
        if self.horizon > self.max_positions:
            raise ValueError("horizon exceeds positional capacity")
        for name in ("history_len", "horizon", "ports_z", "ports_y", "n_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def grid_size(self) -> int:
        return self.ports_z * self.ports_y


class LoraLinear(nn.Module):
    """Frozen linear map plus a trainable low-rank delta.

    y = W x + b + B (A x): W (out, in) and b never train; A (rank, in)
    starts Gaussian, B (out, rank) starts at zero so the delta vanishes
    at initialization.  No rank-dependent rescaling is applied.
    """

    def __init__(self, in_features: int, out_features: int, rank: int):
        super().__init__()
        if rank < 1:
            raise ValueError("rank must be >= 1")
        self.in_features = in_features
        self.out_features = out_features
        self.rank = rank
        self.weight = nn.Parameter(torch.empty(out_features, in_features), requires_grad=False)
        self.bias = nn.Parameter(torch.empty(out_features), requires_grad=False)
        nn.init.normal_(self.weight, std=0.02)
        nn.init.zeros_(self.bias)
        self.lora_a = nn.Parameter(torch.empty(rank, in_features))
        self.lora_b = nn.Parameter(torch.zeros(out_features, rank))
        nn.init.normal_(self.lora_a, std=0.02)

    def base_forward(self, x):
        return F.linear(x, self.weight, self.bias)

    def forward(self, x):
        return self.base_forward(x) + F.linear(F.linear(x, self.lora_a), self.lora_b)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.view(b, t, n_heads, d // n_heads).transpose(1, 2)  # (B, H, T, hd)


def _merge_heads(x):
    b, h, t, hd = x.shape
    return x.transpose(1, 2).reshape(b, t, h * hd)


class StreamEmbed(nn.Module):
    """One stream's grid flattening and temporal self-attention.

    Each time step's N*M grid values are projected to d_model, then the T
    tokens attend to each other (scaled dot product, no mask, heads
    concatenated straight back without an output projection).
    """

    def __init__(self, grid_size: int, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.proj = nn.Linear(grid_size, d_model)
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)

    def forward(self, s, return_attention: bool = False):
        if s.dim() != 3:
            raise ValueError(f"expected (B, T, grid) input, got shape {tuple(s.shape)}")
        x = self.proj(s)
        q = _split_heads(self.w_q(x), self.heads)
        k = _split_heads(self.w_k(x), self.heads)
        v = _split_heads(self.w_v(x), self.heads)
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        attn = torch.softmax(scores, dim=-1)
        out = _merge_heads(attn @ v)
        return (out, attn) if return_attention else out


class TokenResize(nn.Module):
    """Learned linear resampling of the token axis: 2T tokens to F."""

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self.map = nn.Linear(n_in, n_out)

    def forward(self, x):  # (B, n_in, d_model) -> (B, n_out, d_model)
        return self.map(x.transpose(1, 2)).transpose(1, 2)


class BackboneAttention(nn.Module):
    """Causal self-attention with adapters on Q and V only."""

    def __init__(self, d_model: int, heads: int, rank: int):
        super().__init__()
        self.heads = heads
        self.q_proj = LoraLinear(d_model, d_model, rank)
        self.k_proj = _frozen_linear(d_model, d_model)
        self.v_proj = LoraLinear(d_model, d_model, rank)
        self.out_proj = _frozen_linear(d_model, d_model)

    def forward(self, x):
        t = x.shape[1]
        q = _split_heads(self.q_proj(x), self.heads)
        k = _split_heads(self.k_proj(x), self.heads)
        v = _split_heads(self.v_proj(x), self.heads)
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
        mask = torch.triu(
            torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1
        )
        scores = scores.masked_fill(mask, float("-inf"))
        out = _merge_heads(torch.softmax(scores, dim=-1) @ v)
        return self.out_proj(out)


def _frozen_linear(n_in, n_out):
    lin = nn.Linear(n_in, n_out)
    nn.init.normal_(lin.weight, std=0.02)
    nn.init.zeros_(lin.bias)
    lin.weight.requires_grad_(False)
    lin.bias.requires_grad_(False)
    return lin


def _frozen_layernorm(d):
    ln = nn.LayerNorm(d)
    ln.weight.requires_grad_(False)
    ln.bias.requires_grad_(False)
    return ln


class DecoderBlock(nn.Module):
    """Pre-norm block: causal attention and a 4x GELU MLP, both residual."""

    def __init__(self, d_model: int, heads: int, rank: int):
        super().__init__()
        self.ln_1 = _frozen_layernorm(d_model)
        self.attn = BackboneAttention(d_model, heads, rank)
        self.ln_2 = _frozen_layernorm(d_model)
        self.fc_in = _frozen_linear(d_model, 4 * d_model)
        self.act = nn.GELU(approximate="tanh")
        self.fc_out = _frozen_linear(4 * d_model, d_model)

    def forward(self, x):
        x = x + self.attn(self.ln_1(x))
        return x + self.fc_out(self.act(self.fc_in(self.ln_2(x))))


class Backbone(nn.Module):
    """Frozen decoder stack: positional table, blocks, final norm."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.wpe = nn.Parameter(
            torch.empty(cfg.max_positions, cfg.d_model), requires_grad=False
        )
        nn.init.normal_(self.wpe, std=0.01)
        self.blocks = nn.ModuleList(
            DecoderBlock(cfg.d_model, cfg.backbone_heads, cfg.lora_rank)
            for _ in range(cfg.n_layers)
        )
        self.ln_f = _frozen_layernorm(cfg.d_model)

    def forward(self, x):
        t = x.shape[1]
        if t > self.wpe.shape[0]:
            raise ValueError(f"sequence length {t} exceeds positional capacity")
        x = x + self.wpe[:t]
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)


class PortLLM(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.embed_r = StreamEmbed(cfg.grid_size, cfg.d_model, cfg.heads)
        self.embed_i = StreamEmbed(cfg.grid_size, cfg.d_model, cfg.heads)
        self.token_resize = TokenResize(2 * cfg.history_len, cfg.horizon)
        self.backbone = Backbone(cfg)
        self.out_proj = nn.Linear(cfg.d_model, 2 * cfg.grid_size)

    def _real_dtype(self):
        return self.out_proj.weight.dtype

    def preprocess(self, s):
        """Split a complex batch into normalized real/imag parts + stats."""
        mu = s.mean(dim=(1, 2, 3), keepdim=True)
        var = torch.mean(torch.abs(s - mu) ** 2, dim=(1, 2, 3), keepdim=True) / 2
        sigma = torch.sqrt(var)  # real-valued: var comes from |.|^2
        if torch.any(sigma < _SIGMA_FLOOR):
            raise DegenerateSampleError("window spread below 1e-12; cannot normalize")
        s_norm = (s - mu) / sigma
        return s_norm.real, s_norm.imag, (mu, sigma)

    def forward(self, s, return_attention: bool = False):
        s, squeeze = _as_batch(s, self.cfg, self._real_dtype())
        b, t = s.shape[:2]
        s_r, s_i, (mu, sigma) = self.preprocess(s)
        flat_r = s_r.reshape(b, t, -1)
        flat_i = s_i.reshape(b, t, -1)
        if return_attention:
            x_r, attn_r = self.embed_r(flat_r, return_attention=True)
            x_i, attn_i = self.embed_i(flat_i, return_attention=True)
        else:
            x_r = self.embed_r(flat_r)
            x_i = self.embed_i(flat_i)
        tokens = torch.cat([x_r, x_i], dim=1)  # [r_1..r_T, i_1..i_T]
        x = self.token_resize(tokens)
        x = self.backbone(x)
        y = self.out_proj(x)
        y = y.view(b, self.cfg.horizon, 2, self.cfg.ports_z, self.cfg.ports_y)
        s_hat = torch.complex(y[:, :, 0], y[:, :, 1]) * sigma + mu
        if squeeze:
            s_hat = s_hat.squeeze(0)
        if return_attention:
            return s_hat, (attn_r, attn_i)
        return s_hat


def _as_batch(s, cfg: NetConfig, real_dtype):
    if isinstance(s, np.ndarray):
        s = torch.from_numpy(np.ascontiguousarray(s))
    if not torch.is_complex(s):
        raise TypeError("input must be complex-valued")
    cdtype = torch.complex64 if real_dtype == torch.float32 else torch.complex128
    s = s.to(cdtype)
    squeeze = s.dim() == 3
    if squeeze:
        s = s.unsqueeze(0)
    expected = (cfg.history_len, cfg.ports_z, cfg.ports_y)
    if s.dim() != 4 or s.shape[1:] != expected:
        raise ValueError(
            f"expected history shaped (B,)+{expected}, got {tuple(s.shape)}"
        )
    return s, squeeze


def build_model(cfg: NetConfig, seed: int = 0) -> PortLLM:
    """Construct with deterministic initialization under the named seed."""
    torch.manual_seed(torch_seed_for(seed, "model-init"))
    return PortLLM(cfg)


# ---------------------------------------------------------------------------
# Parameter accounting

def parameter_manifest(model: PortLLM):
    """Ordered (name, shape, frozen) rows for every parameter."""
    return [
        (name, tuple(p.shape), not p.requires_grad)
        for name, p in model.named_parameters()
    ]


def trainable_parameters(model: PortLLM):
    return [(n, p) for n, p in model.named_parameters() if p.requires_grad]


def frozen_parameters(model: PortLLM):
    return [(n, p) for n, p in model.named_parameters() if not p.requires_grad]


def trainable_count(model: PortLLM) -> int:
    return sum(p.numel() for _, p in trainable_parameters(model))


def total_count(model: PortLLM) -> int:
    return sum(p.numel() for p in model.parameters())


def expected_trainable_count(cfg: NetConfig) -> int:
    """Closed-form trainable parameter count for a config."""
    d = cfg.d_model
    grid = cfg.grid_size
    per_stream = (grid * d + d) + 3 * (d * d + d)  # proj + q/k/v
    resize = cfg.horizon * 2 * cfg.history_len + cfg.horizon
    head = d * 2 * grid + 2 * grid
    lora = cfg.n_layers * 2 * cfg.lora_rank * (d + d)  # A(r,d) + B(d,r), q and v
    return 2 * per_stream + resize + head + lora


def expected_total_count(cfg: NetConfig) -> int:
    d = cfg.d_model
    per_block_frozen = (
        4 * (d * d + d)  # q/k/v/out base weights + biases
        + 2 * 2 * d  # two layer norms
        + (d * 4 * d + 4 * d)  # mlp in
        + (4 * d * d + d)  # mlp out
    )
    frozen = (
        cfg.n_layers * per_block_frozen
        + cfg.max_positions * d  # positional table
        + 2 * d  # final norm
    )
    return expected_trainable_count(cfg) + frozen


def frozen_checksums(model: PortLLM) -> dict:
    """Name -> sha256 of each frozen tensor's raw bytes."""
    out = {}
    for name, p in frozen_parameters(model):
        data = p.detach().cpu().contiguous().numpy()
        out[name] = hashlib.sha256(data.tobytes()).hexdigest()
    return out


# ---------------------------------------------------------------------------
# Checkpoint format: magic, u64 header length, JSON header, raw LE blobs in
# manifest order.  Tensor hashes make silent corruption loud.

def _tensor_bytes(p: torch.Tensor) -> bytes:
    return p.detach().cpu().contiguous().numpy().tobytes()


def save_checkpoint(model: PortLLM, path, extra: dict = None, aux_tensors: dict = None):
    """Write config, parameter manifest, and raw tensor data.

    extra: small JSON-safe training state (epoch, step, ...).  aux_tensors:
    named float tensors stored alongside parameters (optimizer moments);
    they reload as plain tensors.
    """
    manifest = []
    blobs = []
    for name, p in model.named_parameters():
        raw = _tensor_bytes(p)
        manifest.append(
            {
                "name": name,
                "shape": list(p.shape),
                "dtype": str(p.dtype).replace("torch.", ""),
                "frozen": not p.requires_grad,
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
        blobs.append(raw)
    aux = []
    for name in sorted(aux_tensors or {}):
        tensor = aux_tensors[name]
        raw = _tensor_bytes(tensor)
        aux.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "dtype": str(tensor.dtype).replace("torch.", ""),
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
        blobs.append(raw)
    header = {
        "format": "fluidport-checkpoint",
        "version": 1,
        "config": asdict(model.cfg),
        "manifest": manifest,
        "aux_tensors": aux,
        "extra": extra or {},
    }
    payload = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for raw in blobs:
            fh.write(raw)


_DTYPES = {
    "float32": (torch.float32, "<f4"),
    "float64": (torch.float64, "<f8"),
}


def _read_tensor(fh, entry) -> torch.Tensor:
    torch_dtype, np_dtype = _DTYPES[entry["dtype"]]
    count = int(np.prod(entry["shape"])) if entry["shape"] else 1
    raw = fh.read(count * np.dtype(np_dtype).itemsize)
    if len(raw) != count * np.dtype(np_dtype).itemsize:
        raise CheckpointError(f"truncated tensor data for {entry['name']}")
    if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
        raise CheckpointError(f"checksum mismatch for tensor {entry['name']}")
    arr = np.frombuffer(raw, dtype=np_dtype).reshape(entry["shape"]).copy()
    return torch.from_numpy(arr).to(torch_dtype)


def load_checkpoint(path):
    """Rebuild (model, header, aux_tensors) from a checkpoint file."""
    try:
        fh = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}") from e
    with fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(hlen))
        except json.JSONDecodeError as e:
            raise CheckpointError(f"malformed checkpoint header: {e}") from e
        cfg = NetConfig(**header["config"])
        model = PortLLM(cfg)
        params = dict(model.named_parameters())
        if set(params) != {m["name"] for m in header["manifest"]}:
            raise CheckpointError("checkpoint manifest does not match architecture")
        with torch.no_grad():
            for entry in header["manifest"]:
                tensor = _read_tensor(fh, entry)
                p = params[entry["name"]]
                if tuple(tensor.shape) != tuple(p.shape):
                    raise CheckpointError(
                        f"shape mismatch for {entry['name']}: "
                        f"{tuple(tensor.shape)} vs {tuple(p.shape)}"
                    )
                if tensor.dtype != p.dtype:
                    model = model.to(tensor.dtype)
                    params = dict(model.named_parameters())
                    p = params[entry["name"]]
                p.copy_(tensor)
                p.requires_grad_(not entry["frozen"])
        aux = {}
        for entry in header["aux_tensors"]:
            aux[entry["name"]] = _read_tensor(fh, entry)
    return model, header, aux


# ---------------------------------------------------------------------------
# Optional import of standard decoder weights from an .npz archive.
#
# Expected keys (HF GPT-2 layout, Conv1D weights stored (in, out)):
#   wpe                          (max_positions, d_model)
#   ln_f.weight / ln_f.bias
#   h.{i}.ln_1.weight / .bias    h.{i}.ln_2.weight / .bias
#   h.{i}.attn.c_attn.weight     (d_model, 3*d_model)  -> split into q/k/v
#   h.{i}.attn.c_attn.bias       (3*d_model,)
#   h.{i}.attn.c_proj.weight     (d_model, d_model)
#   h.{i}.attn.c_proj.bias
#   h.{i}.mlp.c_fc.weight        (d_model, 4*d_model)
#   h.{i}.mlp.c_fc.bias
#   h.{i}.mlp.c_proj.weight      (4*d_model, d_model)
#   h.{i}.mlp.c_proj.bias

def load_backbone_npz(model: PortLLM, path):
    """Copy pretrained decoder weights into the frozen backbone.

    Only the first n_layers blocks are consumed.  Adapter factors and all
    trainable modules are left untouched.
    """
    weights = np.load(path)
    d = model.cfg.d_model
    dtype = model.out_proj.weight.dtype

    def put(param, value):
        tensor = torch.from_numpy(np.ascontiguousarray(value)).to(dtype)
        if tuple(tensor.shape) != tuple(param.shape):
            raise CheckpointError(
                f"backbone import shape mismatch: {tuple(tensor.shape)} vs {tuple(param.shape)}"
            )
        with torch.no_grad():
            param.copy_(tensor)

    bb = model.backbone
    put(bb.wpe, weights["wpe"][: model.cfg.max_positions])
    put(bb.ln_f.weight, weights["ln_f.weight"])
    put(bb.ln_f.bias, weights["ln_f.bias"])
    for i, block in enumerate(bb.blocks):
        pre = f"h.{i}."
        put(block.ln_1.weight, weights[pre + "ln_1.weight"])
        put(block.ln_1.bias, weights[pre + "ln_1.bias"])
        put(block.ln_2.weight, weights[pre + "ln_2.weight"])
        put(block.ln_2.bias, weights[pre + "ln_2.bias"])
        c_attn_w = weights[pre + "attn.c_attn.weight"]  # (d, 3d), (in, out)
        c_attn_b = weights[pre + "attn.c_attn.bias"]
        put(block.attn.q_proj.weight, c_attn_w[:, :d].T)
        put(block.attn.q_proj.bias, c_attn_b[:d])
        put(block.attn.k_proj.weight, c_attn_w[:, d : 2 * d].T)
        put(block.attn.k_proj.bias, c_attn_b[d : 2 * d])
        put(block.attn.v_proj.weight, c_attn_w[:, 2 * d :].T)
        put(block.attn.v_proj.bias, c_attn_b[2 * d :])
        put(block.attn.out_proj.weight, weights[pre + "attn.c_proj.weight"].T)
        put(block.attn.out_proj.bias, weights[pre + "attn.c_proj.bias"])
        put(block.fc_in.weight, weights[pre + "mlp.c_fc.weight"].T)
        put(block.fc_in.bias, weights[pre + "mlp.c_fc.bias"])
        put(block.fc_out.weight, weights[pre + "mlp.c_proj.weight"].T)
        put(block.fc_out.bias, weights[pre + "mlp.c_proj.bias"])
