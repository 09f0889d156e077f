"""Multi-rate blocks and full network assembly.

A block splits the channels across branches, each branch optionally
compresses its slice through a resampler, runs a bank of diagonal SSMs
over the (possibly shorter) sequence, copies the result back to full
length, and the branch outputs are concatenated and added to the input.
Blocks are stacked directly, with no interleaved linear layers, since
the resampling step already mixes features linearly.

Weights live in a flat name -> array dict so the optimizer and the
checkpoint format stay trivial.  A forward pass binds each array to the
tape at most once; gradients are read back per name after backward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import resample as rs
from .selective import ssm_scan

__all__ = [
    "BranchSpec",
    "BlockSpec",
    "NetworkSpec",
    "ResampleNetwork",
    "rmsnorm",
    "batchnorm",
    "softplus_inv",
    "classification_preset",
    "next_token_preset",
]

RMSNORM_EPS = 1e-8
BATCHNORM_EPS = 1e-12
BATCHNORM_MOMENTUM = 0.1


def softplus_inv(y: float) -> float:
    """Preimage of softplus; log(e^y - 1)."""
    if y <= 0:
        raise ValueError("softplus is positive")
    return float(np.log(np.expm1(y)))


@dataclass
class BranchSpec:
    """One branch of a block.  kappa None means the base branch: no
    resampling, a plain fixed-step SSM over the full sequence."""

    kappa: float | None
    n_state: int = 4
    window_k: int = 4
    basis_g: int = 8
    selective: bool | None = None  # default: selective iff resampled

    def __post_init__(self):
        if self.kappa is not None and not (0.0 < self.kappa <= 1.0):
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.selective is None:
            self.selective = self.kappa is not None

    def to_dict(self):
        return {
            "kappa": self.kappa,
            "n_state": self.n_state,
            "window_k": self.window_k,
            "basis_g": self.basis_g,
            "selective": self.selective,
        }


@dataclass
class BlockSpec:
    branches: list[BranchSpec]
    norm_kind: str = "rmsnorm"  # rmsnorm | batchnorm | none
    norm_position: str = "pre"  # pre | post_skip

    def __post_init__(self):
        if not self.branches:
            raise ValueError("a block needs at least one branch")
        if self.norm_kind not in ("rmsnorm", "batchnorm", "none"):
            raise ValueError(f"unknown norm kind '{self.norm_kind}'")
        if self.norm_position not in ("pre", "post_skip"):
            raise ValueError(f"unknown norm position '{self.norm_position}'")

    def to_dict(self):
        return {
            "branches": [b.to_dict() for b in self.branches],
            "norm_kind": self.norm_kind,
            "norm_position": self.norm_position,
        }


@dataclass
class NetworkSpec:
    """Architecture description; enough to rebuild a model from a
    checkpoint.  Token models set vocab_size, feature models input_dim."""

    depth: int
    h_dim: int
    block: BlockSpec
    head_kind: str = "classification"  # classification | next_token
    n_classes: int | None = None
    vocab_size: int | None = None
    input_dim: int | None = None
    pooling: str = "mean"  # mean | last

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.head_kind not in ("classification", "next_token"):
            raise ValueError(f"unknown head kind '{self.head_kind}'")
        if self.pooling not in ("mean", "last"):
            raise ValueError(f"unknown pooling '{self.pooling}'")
        if (self.vocab_size is None) == (self.input_dim is None):
            raise ValueError("set exactly one of vocab_size or input_dim")
        if self.head_kind == "classification" and not self.n_classes:
            raise ValueError("classification head needs n_classes")
        if self.head_kind == "next_token" and self.vocab_size is None:
            raise ValueError("next_token head needs a token vocabulary")

    def branch_widths(self) -> list[int]:
        """Even channel split; the remainder goes to the first branch."""
        n = len(self.block.branches)
        base = self.h_dim // n
        if base == 0:
            raise ValueError("more branches than channels")
        widths = [base] * n
        widths[0] += self.h_dim - base * n
        return widths

    def to_dict(self):
        return {
            "depth": self.depth,
            "h_dim": self.h_dim,
            "block": self.block.to_dict(),
            "head_kind": self.head_kind,
            "n_classes": self.n_classes,
            "vocab_size": self.vocab_size,
            "input_dim": self.input_dim,
            "pooling": self.pooling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        block = BlockSpec(
            branches=[BranchSpec(**b) for b in d["block"]["branches"]],
            norm_kind=d["block"]["norm_kind"],
            norm_position=d["block"]["norm_position"],
        )
        return cls(
            depth=d["depth"],
            h_dim=d["h_dim"],
            block=block,
            head_kind=d["head_kind"],
            n_classes=d["n_classes"],
            vocab_size=d["vocab_size"],
            input_dim=d["input_dim"],
            pooling=d["pooling"],
        )


def classification_preset(depth: int, n_classes: int, vocab_size: int | None = None,
                          input_dim: int | None = None, h_dim: int = 192,
                          compressions: tuple = (0.5, 0.2), window_k: int = 5,
                          n_state: int = 4, basis_g: int = 8) -> NetworkSpec:
    """Sequence-classification defaults: a base branch plus compressed
    branches, batch normalisation after the skip, mean pooling."""
    branches = [BranchSpec(kappa=None, n_state=n_state, window_k=window_k, basis_g=basis_g)]
    branches += [BranchSpec(kappa=k, n_state=n_state, window_k=window_k, basis_g=basis_g)
                 for k in compressions]
    return NetworkSpec(
        depth=depth, h_dim=h_dim,
        block=BlockSpec(branches=branches, norm_kind="batchnorm", norm_position="post_skip"),
        head_kind="classification", n_classes=n_classes,
        vocab_size=vocab_size, input_dim=input_dim, pooling="mean",
    )


def next_token_preset(vocab_size: int, depth: int = 8, h_dim: int = 510,
                      compressions: tuple = (0.5, 0.1), window_k: int = 4,
                      n_state: int = 4, basis_g: int = 8) -> NetworkSpec:
    """Language-model defaults: three parallel branches (base plus two
    compression rates) over an evenly split width, RMS normalisation
    before each block."""
    branches = [BranchSpec(kappa=None, n_state=n_state, window_k=window_k, basis_g=basis_g)]
    branches += [BranchSpec(kappa=k, n_state=n_state, window_k=window_k, basis_g=basis_g)
                 for k in compressions]
    return NetworkSpec(
        depth=depth, h_dim=h_dim,
        block=BlockSpec(branches=branches, norm_kind="rmsnorm", norm_position="pre"),
        head_kind="next_token", vocab_size=vocab_size,
    )


# ---------------------------------------------------------------------------
# normalisation ops


def rmsnorm(x, gain, eps: float = RMSNORM_EPS) -> ad.Tensor:
    """Scale rows to unit root-mean-square, then apply the per-channel gain.

    Accepts [H] or [L, H]; rows normalise independently.
    """
    x_t = x if isinstance(x, ad.Tensor) else ad.constant(x)
    g_t = gain if isinstance(gain, ad.Tensor) else ad.constant(gain)
    squeeze = x_t.ndim == 1
    xv = x_t.data.reshape(1, -1) if squeeze else x_t.data
    gv = g_t.data
    H = xv.shape[1]
    r = np.sqrt(np.mean(xv * xv, axis=1, keepdims=True) + eps)  # [L,1]
    xhat = xv / r
    out = xhat * gv[None, :]

    def dx(dy):
        dy = dy.reshape(xv.shape)
        dot = np.sum(dy * gv[None, :] * xv, axis=1, keepdims=True)
        g = dy * gv[None, :] / r - xv * dot / (H * r**3)
        return g.reshape(x_t.shape)

    def dg(dy):
        dy = dy.reshape(xv.shape)
        return np.sum(dy * xhat, axis=0)

    value = out.reshape(x_t.shape)
    return ad.custom_op("rmsnorm", value, [(x_t, dx), (g_t, dg)])


def batchnorm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = BATCHNORM_MOMENTUM,
    eps: float = BATCHNORM_EPS,
) -> ad.Tensor:
    """Per-channel normalisation over the position axis of [L, H].

    Train mode normalises with the current moments and folds them into
    the running buffers (in place) with the given momentum; eval mode
    normalises with the running buffers.  One sequence at a time is the
    batch here, so the moments are over positions.
    """
    x_t = x if isinstance(x, ad.Tensor) else ad.constant(x)
    g_t = gamma if isinstance(gamma, ad.Tensor) else ad.constant(gamma)
    b_t = beta if isinstance(beta, ad.Tensor) else ad.constant(beta)
    xv = x_t.data
    if xv.ndim != 2:
        raise ad.ShapeError(f"batchnorm expects [L, H], got {x_t.shape}")
    L = xv.shape[0]
    gv, bv = g_t.data, b_t.data

    if train:
        mean = xv.mean(axis=0)
        var = xv.var(axis=0)  # biased, matching the normalisation
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mean[None, :]) * inv[None, :]
    out = xhat * gv[None, :] + bv[None, :]

    if train:

        def dx(dy):
            dyg = dy * gv[None, :]
            return inv[None, :] * (
                dyg - dyg.mean(axis=0)[None, :] - xhat * (dyg * xhat).mean(axis=0)[None, :]
            )

    else:

        def dx(dy):
            return dy * (gv * inv)[None, :]

    return ad.custom_op(
        "batchnorm",
        out,
        [
            (x_t, dx),
            (g_t, lambda dy: np.sum(dy * xhat, axis=0)),
            (b_t, lambda dy: np.sum(dy, axis=0)),
        ],
    )


# ---------------------------------------------------------------------------
# the model


class _Binder:
    """Binds each named weight to the tape at most once per pass."""

    def __init__(self, params: dict, tape: ad.Tape | None):
        self._params = params
        self._tape = tape
        self.bound: dict[str, ad.Tensor] = {}

    def __call__(self, name: str) -> ad.Tensor:
        if name not in self.bound:
            arr = self._params[name]
            self.bound[name] = self._tape.leaf(arr) if self._tape is not None else ad.constant(arr)
        return self.bound[name]


class ResampleNetwork:
    """Stack of multi-rate blocks with an embedding and a task head."""

    def __init__(self, spec: NetworkSpec, seed: int = 0,
                 params: dict | None = None, buffers: dict | None = None):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        if params is None:
            self._init_params(np.random.default_rng(np.random.SeedSequence(seed)))
        else:
            self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
            self.buffers = {k: np.asarray(v, dtype=np.float64) for k, v in (buffers or {}).items()}

    # -- init ---------------------------------------------------------------

    def _init_params(self, rng: np.random.Generator):
        spec = self.spec
        H = spec.h_dim

        def uniform(shape, fan_in):
            s = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-s, s, size=shape)

        if spec.vocab_size is not None:
            self.params["embed.table"] = uniform((spec.vocab_size, H), H)
        else:
            self.params["input.w"] = uniform((spec.input_dim, H), spec.input_dim)

        widths = spec.branch_widths()
        for i in range(spec.depth):
            blk = f"block{i}."
            if spec.block.norm_kind == "rmsnorm":
                self.params[blk + "norm.gain"] = np.ones(H)
            elif spec.block.norm_kind == "batchnorm":
                self.params[blk + "norm.gamma"] = np.ones(H)
                self.params[blk + "norm.beta"] = np.zeros(H)
                self.buffers[blk + "norm.running_mean"] = np.zeros(H)
                self.buffers[blk + "norm.running_var"] = np.ones(H)
            for b, br in enumerate(spec.block.branches):
                pre = f"{blk}br{b}."
                w = widths[b]
                n = br.n_state
                if br.kappa is not None:
                    rows = br.window_k * (w + br.basis_g)
                    self.params[pre + "res.theta_delta"] = uniform(w, w)
                    self.params[pre + "res.raw_delta"] = np.array(softplus_inv(1.0))
                    self.params[pre + "res.theta_gamma"] = uniform((rows, w), rows)
                    self.params[pre + "res.mus"] = np.linspace(-br.window_k, br.window_k, br.basis_g)
                # One decaying mode ladder per channel: a = -exp(rho) = -(1..N).
                self.params[pre + "ssm.rho"] = np.tile(np.log(np.arange(1, n + 1.0)), (w, 1))
                if br.selective:
                    self.params[pre + "ssm.theta_b"] = uniform((w, n), w)
                    self.params[pre + "ssm.theta_c"] = uniform((w, n), w)
                    self.params[pre + "ssm.theta_delta"] = uniform(w, w)
                    self.params[pre + "ssm.delta_base"] = np.array(0.0)
                else:
                    self.params[pre + "ssm.b"] = np.ones(n)
                    self.params[pre + "ssm.c"] = uniform(n, n)
                    self.params[pre + "ssm.raw_delta"] = np.array(0.0)

        if spec.head_kind == "classification":
            self.params["head.w"] = uniform((H, spec.n_classes), H)
            self.params["head.b"] = np.zeros(spec.n_classes)
        else:
            self.params["head.w"] = uniform((H, spec.vocab_size), H)
            self.params["head.b"] = np.zeros(spec.vocab_size)

    # -- forward ------------------------------------------------------------

    def forward(self, x, tape: ad.Tape | None = None, train: bool = False):
        """Run the network; returns (logits tensor, bound weight tensors).

        ``x`` is an int token sequence for token models, or an [L, D]
        float array (or Tensor) for feature models.
        """
        bind = _Binder(self.params, tape)
        t = self._embed(x, bind)
        for i in range(self.spec.depth):
            t = self._block(i, t, bind, train)
        logits = self._head(t, bind)
        return logits, bind.bound

    def predict(self, x) -> np.ndarray:
        """Inference logits with nothing tracked."""
        logits, _ = self.forward(x)
        return logits.numpy()

    def run_block(self, index: int, x, tape: ad.Tape | None = None, train: bool = False):
        """Forward one block in isolation on an [L, H] input."""
        bind = _Binder(self.params, tape)
        x_t = x if isinstance(x, ad.Tensor) else ad.constant(np.asarray(x, dtype=np.float64))
        out = self._block(index, x_t, bind, train)
        return (out, bind.bound) if tape is not None else out

    def _embed(self, x, bind):
        if self.spec.vocab_size is not None:
            ids = np.asarray(x)
            if ids.ndim != 1 or not np.issubdtype(ids.dtype, np.integer):
                raise ValueError("token models take a 1-d integer sequence")
            if ids.min() < 0 or ids.max() >= self.spec.vocab_size:
                raise ValueError("token id out of vocabulary range")
            return ad.gather_rows(bind("embed.table"), ids)
        x_t = x if isinstance(x, ad.Tensor) else ad.constant(np.asarray(x, dtype=np.float64))
        if x_t.ndim != 2 or x_t.shape[1] != self.spec.input_dim:
            raise ValueError(f"expected [L, {self.spec.input_dim}] features, got {x_t.shape}")
        return ad.matmul(x_t, bind("input.w"))

    def _norm(self, i, x_t, bind, train):
        blk = f"block{i}."
        kind = self.spec.block.norm_kind
        if kind == "rmsnorm":
            return rmsnorm(x_t, bind(blk + "norm.gain"))
        if kind == "batchnorm":
            return batchnorm(
                x_t,
                bind(blk + "norm.gamma"),
                bind(blk + "norm.beta"),
                self.buffers[blk + "norm.running_mean"],
                self.buffers[blk + "norm.running_var"],
                train,
            )
        return x_t

    def _block(self, i, x_t, bind, train):
        spec = self.spec.block
        widths = self.spec.branch_widths()
        inner = self._norm(i, x_t, bind, train) if spec.norm_position == "pre" else x_t
        parts = []
        off = 0
        for b, br in enumerate(spec.branches):
            xb = ad.slice_along(inner, 1, off, off + widths[b])
            off += widths[b]
            parts.append(self._branch(i, b, br, widths[b], xb, bind))
        out = ad.add(x_t, ad.concat(parts, axis=1))
        if spec.norm_position == "post_skip":
            out = self._norm(i, out, bind, train)
        return out

    def _branch(self, i, b, br: BranchSpec, width, xb, bind):
        pre = f"block{i}.br{b}."
        L = xb.shape[0]
        if br.kappa is None:
            return self._ssm_layer(pre, br, width, xb, bind)

        # Learned intervals bounded inside (kappa * delta, delta].
        delta_base = ad.softplus(bind(pre + "res.raw_delta"))
        pre_act = ad.reshape(
            ad.matmul(xb, ad.reshape(bind(pre + "res.theta_delta"), (width, 1))), (L,)
        )
        deltas = ad.add(
            ad.mul(ad.sigmoid(pre_act), ad.mul(delta_base, 1.0 - br.kappa)),
            ad.mul(delta_base, br.kappa),
        )
        plan = rs.make_plan(deltas.data, float(delta_base.data), br.window_k)
        src_times = ad.cumsum(deltas)
        dst_times = ad.mul(
            ad.constant(np.arange(1, plan.dst_len + 1, dtype=np.float64)), delta_base
        )
        xc = rs.compress_tracked(
            xb, plan, bind(pre + "res.theta_gamma"), bind(pre + "res.mus"),
            src_times, dst_times,
        )
        yc = self._ssm_layer(pre, br, width, xc, bind)
        return rs.decompress_tracked(yc, plan)

    def _ssm_layer(self, pre, br: BranchSpec, width, u_t, bind):
        T = u_t.shape[0]
        a = ad.neg(ad.exp(bind(pre + "ssm.rho")))
        if br.selective:
            b_seq = ad.matmul(u_t, bind(pre + "ssm.theta_b"))
            c_seq = ad.matmul(u_t, bind(pre + "ssm.theta_c"))
            pre_act = ad.reshape(
                ad.matmul(u_t, ad.reshape(bind(pre + "ssm.theta_delta"), (width, 1))), (T,)
            )
            deltas = ad.softplus(ad.add(pre_act, bind(pre + "ssm.delta_base")))
        else:
            delta = ad.softplus(bind(pre + "ssm.raw_delta"))
            deltas = ad.mul(ad.constant(np.ones(T)), delta)
            b_seq = ad.tile_rows(bind(pre + "ssm.b"), T)
            c_seq = ad.tile_rows(bind(pre + "ssm.c"), T)
        return ssm_scan(a, deltas, b_seq, c_seq, u_t)

    def _head(self, t, bind):
        spec = self.spec
        if spec.head_kind == "next_token":
            logits = ad.matmul(t, bind("head.w"))
            bias = ad.tile_rows(bind("head.b"), t.shape[0])
            return ad.add(logits, bias)
        if spec.pooling == "mean":
            pooled = ad.reduce_mean(t, axis=0)
        else:
            pooled = ad.reshape(ad.slice_along(t, 0, t.shape[0] - 1, t.shape[0]), (spec.h_dim,))
        logits = ad.matmul(ad.reshape(pooled, (1, spec.h_dim)), bind("head.w"))
        return ad.add(ad.reshape(logits, (spec.n_classes,)), bind("head.b"))
