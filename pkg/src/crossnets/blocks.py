"""Feature-interaction blocks and model assembly.

Implements the crossing-layer family on top of the tape engine:

  dcnv2             X_{l+1} = X0 * (X_l W + b) + X_l
  lowrank           X_{l+1} = X0 * ((X_l V) U^T + b) + X_l
  moe_lowrank       gated mixture of low-rank cross experts + residual
  masknet_*         MaskBlocks (instance-guided mask over a LayerNormed
                    input, projection, LayerNorm, ReLU), serial or parallel
  mldcn             low-rank crossing with an instance-guided mask applied
                    inside the rank-r space, residual, then LayerNorm

plus input assembly (dense features + embedding lookups) and an MLP head.
A Model optionally wraps the block in a single-task mixture-of-experts
(softmax gate over identically configured expert stacks).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import configio as cio
from .engine import Node, Param, Tape, rng_from_seed
from .errors import ConfigError, EmbeddingLookupError, ShapeError

LN_EPS = 1e-5

KINDS = ("dcnv2", "lowrank", "moe_lowrank", "masknet_serial", "masknet_parallel", "mldcn")
CROSS_KINDS = ("dcnv2", "lowrank", "moe_lowrank", "mldcn")
MASKNET_KINDS = ("masknet_serial", "masknet_parallel")
MASK_COMPONENTS = ("none", "mlp1", "mlp1_relu", "full")


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class FeatureField:
    cardinality: int
    emb_dim: int


@dataclass(frozen=True)
class FeatureSchema:
    n_dense: int
    fields: tuple[FeatureField, ...]

    @property
    def width(self) -> int:
        return self.n_dense + sum(f.emb_dim for f in self.fields)

    def validate(self) -> None:
        if self.n_dense < 0:
            raise ConfigError(f"schema.n_dense must be >= 0, got {self.n_dense}")
        for i, f in enumerate(self.fields):
            if f.cardinality < 1 or f.emb_dim < 1:
                raise ConfigError(
                    f"schema.fields[{i}]: cardinality and emb_dim must be >= 1"
                )
        if self.width < 1:
            raise ConfigError("schema is empty: no dense features and no fields")


@dataclass(frozen=True)
class BlockConfig:
    kind: str
    d: int
    l: int
    r: int | None = None
    t: float | None = None
    K: int | None = None
    mask_components: str = "full"

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"block.kind: unknown kind {self.kind!r} (choose from {KINDS})")
        if self.d < 1:
            raise ConfigError(f"block.d must be >= 1, got {self.d}")
        if self.l < 1:
            raise ConfigError(f"block.l must be >= 1, got {self.l}")
        needs_r = self.kind in ("lowrank", "moe_lowrank", "mldcn")
        needs_t = self.kind in ("masknet_serial", "masknet_parallel", "mldcn")
        if needs_r and (self.r is None or self.r < 1):
            raise ConfigError(f"block.r must be >= 1 for kind {self.kind}, got {self.r}")
        if needs_t and (self.t is None or self.t <= 0.0):
            raise ConfigError(f"block.t must be > 0 for kind {self.kind}, got {self.t}")
        if self.kind == "moe_lowrank" and (self.K is None or self.K < 1):
            raise ConfigError(f"block.K must be >= 1 for kind {self.kind}, got {self.K}")
        if self.mask_components not in MASK_COMPONENTS:
            raise ConfigError(
                f"block.mask_components: unknown setting {self.mask_components!r}"
            )
        if self.mask_components != "full" and self.kind != "mldcn":
            raise ConfigError("block.mask_components is only configurable for kind mldcn")

    @property
    def k_mask(self) -> int:
        """Aggregation-layer width of the mask MLP. The mask bottleneck is
        sized against the mask's own output width: r for mldcn, d for
        masknet."""
        if self.kind == "mldcn":
            return max(1, round_half_up(self.t * self.r))
        if self.kind in MASKNET_KINDS:
            return max(1, round_half_up(self.t * self.d))
        raise ConfigError(f"k_mask undefined for kind {self.kind}")

    @property
    def out_width(self) -> int:
        return self.d * self.l if self.kind == "masknet_parallel" else self.d


@dataclass(frozen=True)
class MmoeConfig:
    n_experts: int

    def validate(self) -> None:
        if self.n_experts < 1:
            raise ConfigError(f"mmoe.n_experts must be >= 1, got {self.n_experts}")


@dataclass(frozen=True)
class ModelConfig:
    schema: FeatureSchema
    block: BlockConfig | None
    head: tuple[int, ...]
    seed: int
    mmoe: MmoeConfig | None = None

    def validate(self) -> None:
        self.schema.validate()
        if self.block is not None:
            self.block.validate()
            if self.block.d != self.schema.width:
                raise ConfigError(
                    f"block.d={self.block.d} does not match schema width "
                    f"{self.schema.width}"
                )
        if self.mmoe is not None:
            self.mmoe.validate()
            if self.block is None:
                raise ConfigError("mmoe requires a block config for its experts")
        if self.head:
            if any(h < 1 for h in self.head):
                raise ConfigError(f"head widths must be >= 1, got {list(self.head)}")
            if self.head[-1] != 1:
                raise ConfigError(
                    f"head must end in 1 (single logit), got {list(self.head)}"
                )

    @property
    def head_input_width(self) -> int:
        return self.schema.width if self.block is None else self.block.out_width

    @property
    def head_widths(self) -> tuple[int, ...]:
        return self.head if self.head else (1,)


# -- dict round trip (strict: unknown keys are config errors) ---------------


def schema_from_dict(d: dict, path: str = "schema") -> FeatureSchema:
    cio.check_keys(d, {"n_dense", "fields"}, path)
    fields = []
    for i, fd in enumerate(cio.as_list(cio.take(d, "fields", path), f"{path}.fields")):
        fp = f"{path}.fields[{i}]"
        cio.check_keys(fd, {"cardinality", "emb_dim"}, fp)
        fields.append(
            FeatureField(
                cardinality=cio.as_int(cio.take(fd, "cardinality", fp), f"{fp}.cardinality"),
                emb_dim=cio.as_int(cio.take(fd, "emb_dim", fp), f"{fp}.emb_dim"),
            )
        )
    schema = FeatureSchema(
        n_dense=cio.as_int(cio.take(d, "n_dense", path), f"{path}.n_dense"),
        fields=tuple(fields),
    )
    schema.validate()
    return schema


def schema_to_dict(s: FeatureSchema) -> dict:
    return {
        "n_dense": s.n_dense,
        "fields": [{"cardinality": f.cardinality, "emb_dim": f.emb_dim} for f in s.fields],
    }


def block_from_dict(d: dict, width: int, path: str = "block") -> BlockConfig:
    cio.check_keys(d, {"kind", "d", "l", "r", "t", "K", "mask_components"}, path)
    explicit_d = d.get("d")
    if explicit_d is not None:
        explicit_d = cio.as_int(explicit_d, f"{path}.d")
        if explicit_d != width:
            raise ConfigError(
                f"{path}.d={explicit_d} does not match schema width {width}"
            )
    cfg = BlockConfig(
        kind=cio.as_str(cio.take(d, "kind", path), f"{path}.kind"),
        d=width,
        l=cio.as_int(cio.take(d, "l", path), f"{path}.l"),
        r=None if d.get("r") is None else cio.as_int(d["r"], f"{path}.r"),
        t=None if d.get("t") is None else cio.as_float(d["t"], f"{path}.t"),
        K=None if d.get("K") is None else cio.as_int(d["K"], f"{path}.K"),
        mask_components=cio.as_str(d.get("mask_components", "full"), f"{path}.mask_components"),
    )
    cfg.validate()
    return cfg


def block_to_dict(b: BlockConfig) -> dict:
    return {
        "kind": b.kind,
        "d": b.d,
        "l": b.l,
        "r": b.r,
        "t": b.t,
        "K": b.K,
        "mask_components": b.mask_components,
    }


def model_from_dict(d: dict, path: str = "model") -> ModelConfig:
    cio.check_keys(d, {"schema", "block", "head", "seed", "mmoe"}, path)
    schema = schema_from_dict(cio.take(d, "schema", path), f"{path}.schema")
    block_d = cio.take(d, "block", path)
    block = None if block_d is None else block_from_dict(block_d, schema.width, f"{path}.block")
    mmoe_d = d.get("mmoe")
    mmoe = None
    if mmoe_d is not None:
        cio.check_keys(mmoe_d, {"n_experts"}, f"{path}.mmoe")
        mmoe = MmoeConfig(cio.as_int(cio.take(mmoe_d, "n_experts", f"{path}.mmoe"), f"{path}.mmoe.n_experts"))
    head = tuple(
        cio.as_int(h, f"{path}.head[{i}]")
        for i, h in enumerate(cio.as_list(cio.take(d, "head", path, default=[]), f"{path}.head"))
    )
    cfg = ModelConfig(
        schema=schema,
        block=block,
        head=head,
        seed=cio.as_int(cio.take(d, "seed", path), f"{path}.seed"),
        mmoe=mmoe,
    )
    cfg.validate()
    return cfg


def model_to_dict(c: ModelConfig) -> dict:
    return {
        "schema": schema_to_dict(c.schema),
        "block": None if c.block is None else block_to_dict(c.block),
        "head": list(c.head),
        "seed": c.seed,
        "mmoe": None if c.mmoe is None else {"n_experts": c.mmoe.n_experts},
    }


# ---------------------------------------------------------------------------
# parameter construction


class ParamRegistry:
    """Creates Params in a fixed order with seeded initialisation; the
    order doubles as the checkpoint manifest order."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: list[Param] = []

    def _add(self, name: str, value: np.ndarray) -> Param:
        p = Param(name, value)
        self.params.append(p)
        return p

    def xavier(self, name: str, rows: int, cols: int) -> Param:
        a = np.sqrt(6.0 / (rows + cols))
        return self._add(name, self.rng.uniform(-a, a, size=(rows, cols)))

    def zeros(self, name: str, rows: int, cols: int) -> Param:
        return self._add(name, np.zeros((rows, cols)))

    def ones(self, name: str, rows: int, cols: int) -> Param:
        return self._add(name, np.ones((rows, cols)))

    def normal(self, name: str, rows: int, cols: int, std: float) -> Param:
        return self._add(name, self.rng.normal(0.0, std, size=(rows, cols)))


@dataclass
class MaskParams:
    """Parameters of the instance-guided mask MLP, or a subset of it when
    components are ablated away. `none` carries no parameters at all and
    stands for a constant all-ones mask."""

    mode: str
    w1: Param | None = None
    b1: Param | None = None
    w2: Param | None = None
    b2: Param | None = None

    def params(self) -> list[Param]:
        return [p for p in (self.w1, self.b1, self.w2, self.b2) if p is not None]


@dataclass
class DcnV2LayerParams:
    W: Param
    b: Param

    def params(self) -> list[Param]:
        return [self.W, self.b]


@dataclass
class LowRankLayerParams:
    U: Param
    V: Param
    b: Param

    def params(self) -> list[Param]:
        return [self.U, self.V, self.b]


@dataclass
class MoeLayerParams:
    experts: list[LowRankLayerParams]
    gate_w: Param
    gate_b: Param

    def params(self) -> list[Param]:
        out = []
        for e in self.experts:
            out.extend(e.params())
        return out + [self.gate_w, self.gate_b]


@dataclass
class MldcnLayerParams:
    U: Param
    V: Param
    b: Param
    mask: MaskParams
    ln_gain: Param
    ln_bias: Param

    def params(self) -> list[Param]:
        return [self.U, self.V, self.b] + self.mask.params() + [self.ln_gain, self.ln_bias]


@dataclass
class MaskBlockParams:
    mask: MaskParams
    W3: Param
    ln_in_gain: Param
    ln_in_bias: Param
    ln_out_gain: Param
    ln_out_bias: Param

    def params(self) -> list[Param]:
        return self.mask.params() + [
            self.W3,
            self.ln_in_gain,
            self.ln_in_bias,
            self.ln_out_gain,
            self.ln_out_bias,
        ]


@dataclass
class HeadParams:
    layers: list[tuple[Param, Param]]  # (W, b) per linear layer

    def params(self) -> list[Param]:
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out


def _build_mask_params(reg: ParamRegistry, prefix: str, cfg: BlockConfig, out_dim: int) -> MaskParams:
    mode = cfg.mask_components
    if mode == "none":
        return MaskParams(mode="none")
    if mode in ("mlp1", "mlp1_relu"):
        # single aggregation layer mapped straight to the output width;
        # output bias starts at 1 so training begins near the identity mask
        return MaskParams(
            mode=mode,
            w1=reg.xavier(f"{prefix}.w1", cfg.d, out_dim),
            b1=reg.ones(f"{prefix}.b1", 1, out_dim),
        )
    k = cfg.k_mask
    return MaskParams(
        mode="full",
        w1=reg.xavier(f"{prefix}.w1", cfg.d, k),
        b1=reg.zeros(f"{prefix}.b1", 1, k),
        w2=reg.xavier(f"{prefix}.w2", k, out_dim),
        b2=reg.ones(f"{prefix}.b2", 1, out_dim),
    )


def build_stack_params(reg: ParamRegistry, prefix: str, cfg: BlockConfig) -> list:
    d, r = cfg.d, cfg.r
    layers: list = []
    for i in range(cfg.l):
        lp = f"{prefix}.layer{i}"
        if cfg.kind == "dcnv2":
            layers.append(
                DcnV2LayerParams(W=reg.xavier(f"{lp}.W", d, d), b=reg.zeros(f"{lp}.b", 1, d))
            )
        elif cfg.kind == "lowrank":
            layers.append(
                LowRankLayerParams(
                    U=reg.xavier(f"{lp}.U", d, r),
                    V=reg.xavier(f"{lp}.V", d, r),
                    b=reg.zeros(f"{lp}.b", 1, d),
                )
            )
        elif cfg.kind == "moe_lowrank":
            experts = [
                LowRankLayerParams(
                    U=reg.xavier(f"{lp}.e{j}.U", d, r),
                    V=reg.xavier(f"{lp}.e{j}.V", d, r),
                    b=reg.zeros(f"{lp}.e{j}.b", 1, d),
                )
                for j in range(cfg.K)
            ]
            layers.append(
                MoeLayerParams(
                    experts=experts,
                    gate_w=reg.xavier(f"{lp}.gate.W", d, cfg.K),
                    gate_b=reg.zeros(f"{lp}.gate.b", 1, cfg.K),
                )
            )
        elif cfg.kind == "mldcn":
            layers.append(
                MldcnLayerParams(
                    U=reg.xavier(f"{lp}.U", d, r),
                    V=reg.xavier(f"{lp}.V", d, r),
                    b=reg.zeros(f"{lp}.b", 1, d),
                    mask=_build_mask_params(reg, f"{lp}.mask", cfg, out_dim=r),
                    ln_gain=reg.ones(f"{lp}.ln.gain", 1, d),
                    ln_bias=reg.zeros(f"{lp}.ln.bias", 1, d),
                )
            )
        elif cfg.kind in MASKNET_KINDS:
            k = cfg.k_mask
            layers.append(
                MaskBlockParams(
                    mask=MaskParams(
                        mode="full",
                        w1=reg.xavier(f"{lp}.mask.w1", d, k),
                        b1=reg.zeros(f"{lp}.mask.b1", 1, k),
                        w2=reg.xavier(f"{lp}.mask.w2", k, d),
                        b2=reg.ones(f"{lp}.mask.b2", 1, d),
                    ),
                    W3=reg.xavier(f"{lp}.W3", d, d),
                    ln_in_gain=reg.ones(f"{lp}.ln_in.gain", 1, d),
                    ln_in_bias=reg.zeros(f"{lp}.ln_in.bias", 1, d),
                    ln_out_gain=reg.ones(f"{lp}.ln_out.gain", 1, d),
                    ln_out_bias=reg.zeros(f"{lp}.ln_out.bias", 1, d),
                )
            )
        else:
            raise ConfigError(f"unknown block kind {cfg.kind!r}")
    return layers


def build_head_params(reg: ParamRegistry, prefix: str, in_width: int, widths: tuple[int, ...]) -> HeadParams:
    layers = []
    prev = in_width
    for i, w in enumerate(widths):
        layers.append(
            (reg.xavier(f"{prefix}.{i}.W", prev, w), reg.zeros(f"{prefix}.{i}.b", 1, w))
        )
        prev = w
    return HeadParams(layers=layers)


# ---------------------------------------------------------------------------
# forward ops


def assemble_x0(
    tape: Tape,
    dense: np.ndarray,
    cat_ids: np.ndarray,
    tables: list[Param],
    schema: FeatureSchema,
) -> Node:
    """Concatenate dense features with embedding lookups into the B x d
    block input. Gradients flow back into the looked-up embedding rows."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[1] != schema.n_dense:
        raise ShapeError(
            f"assemble_x0: dense shape {dense.shape} does not match n_dense={schema.n_dense}"
        )
    cat_ids = np.asarray(cat_ids)
    n_fields = len(schema.fields)
    if cat_ids.ndim != 2 or cat_ids.shape[1] != n_fields:
        raise ShapeError(
            f"assemble_x0: cat_ids shape {cat_ids.shape} does not match "
            f"{n_fields} categorical fields"
        )
    if cat_ids.shape[0] != dense.shape[0]:
        raise ShapeError(
            f"assemble_x0: {dense.shape[0]} dense rows vs {cat_ids.shape[0]} id rows"
        )
    parts: list[Node] = []
    if schema.n_dense > 0:
        parts.append(tape.constant(dense))
    for i, f in enumerate(schema.fields):
        ids = cat_ids[:, i]
        bad = (ids < 0) | (ids >= f.cardinality)
        if np.any(bad):
            j = int(np.argmax(bad))
            raise EmbeddingLookupError(
                f"field {i}: id {int(ids[j])} out of range [0, {f.cardinality})"
            )
        parts.append(tape.embedding_lookup(tables[i], ids))
    return tape.concat_cols(parts) if len(parts) > 1 else parts[0]


def dcnv2_layer(tape: Tape, x0: Node, xl: Node, p: DcnV2LayerParams) -> Node:
    cross = tape.matmul(xl, tape.param(p.W))
    cross = tape.add_row_bias(cross, tape.param(p.b))
    return tape.add(tape.hadamard(x0, cross), xl)


def lowrank_layer(tape: Tape, x0: Node, xl: Node, p: LowRankLayerParams) -> Node:
    xv = tape.matmul(xl, tape.param(p.V))
    cross = tape.matmul_t(xv, tape.param(p.U))
    cross = tape.add_row_bias(cross, tape.param(p.b))
    return tape.add(tape.hadamard(x0, cross), xl)


def moe_lowrank_layer(tape: Tape, x0: Node, xl: Node, p: MoeLayerParams) -> Node:
    gate = tape.matmul(xl, tape.param(p.gate_w))
    gate = tape.add_row_bias(gate, tape.param(p.gate_b))
    gates = tape.softmax_rows(gate)
    experts = []
    for e in p.experts:
        xv = tape.matmul(xl, tape.param(e.V))
        cross = tape.matmul_t(xv, tape.param(e.U))
        cross = tape.add_row_bias(cross, tape.param(e.b))
        experts.append(tape.hadamard(x0, cross))
    return tape.gated_combine(gates, experts, residual=xl)


def mask_generate(tape: Tape, xl: Node, p: MaskParams) -> Node | None:
    """Instance-guided mask of the layer input; None stands for the
    constant all-ones mask of the `none` ablation."""
    if p.mode == "none":
        return None
    h = tape.matmul(xl, tape.param(p.w1))
    h = tape.add_row_bias(h, tape.param(p.b1))
    if p.mode == "mlp1":
        return h
    h = tape.relu(h)
    if p.mode == "mlp1_relu":
        return h
    h = tape.matmul(h, tape.param(p.w2))
    return tape.add_row_bias(h, tape.param(p.b2))


def mldcn_layer(tape: Tape, x0: Node, xl: Node, p: MldcnLayerParams) -> Node:
    xv = tape.matmul(xl, tape.param(p.V))
    mask = mask_generate(tape, xl, p.mask)
    if mask is not None:
        xv = tape.hadamard(xv, mask)
    cross = tape.matmul_t(xv, tape.param(p.U))
    cross = tape.add_row_bias(cross, tape.param(p.b))
    pre = tape.add(tape.hadamard(x0, cross), xl)
    return tape.layernorm_rows(pre, tape.param(p.ln_gain), tape.param(p.ln_bias), LN_EPS)


def maskblock(tape: Tape, xl: Node, p: MaskBlockParams) -> Node:
    mask = mask_generate(tape, xl, p.mask)
    normed = tape.layernorm_rows(xl, tape.param(p.ln_in_gain), tape.param(p.ln_in_bias), LN_EPS)
    masked = tape.hadamard(mask, normed)
    hidden = tape.matmul(masked, tape.param(p.W3))
    hidden = tape.layernorm_rows(
        hidden, tape.param(p.ln_out_gain), tape.param(p.ln_out_bias), LN_EPS
    )
    return tape.relu(hidden)


def masknet_forward(tape: Tape, x0: Node, cfg: BlockConfig, layers: list[MaskBlockParams]) -> Node:
    if cfg.kind == "masknet_serial":
        x = x0
        for p in layers:
            x = maskblock(tape, x, p)
        return x
    outs = [maskblock(tape, x0, p) for p in layers]
    return tape.concat_cols(outs) if len(outs) > 1 else outs[0]


_LAYER_FN = {
    "dcnv2": dcnv2_layer,
    "lowrank": lowrank_layer,
    "moe_lowrank": moe_lowrank_layer,
    "mldcn": mldcn_layer,
}


def stack_forward(tape: Tape, x0: Node, cfg: BlockConfig, layers: list) -> Node:
    """Apply cfg.l layers with X0 threaded as the static cross input, or
    delegate to the masknet arrangements."""
    if cfg.kind in MASKNET_KINDS:
        return masknet_forward(tape, x0, cfg, layers)
    layer_fn = _LAYER_FN.get(cfg.kind)
    if layer_fn is None:
        raise ConfigError(f"unknown block kind {cfg.kind!r}")
    x = x0
    for p in layers:
        x = layer_fn(tape, x0, x, p)
    return x


def head_forward(tape: Tape, x: Node, head: HeadParams) -> Node:
    h = x
    last = len(head.layers) - 1
    for i, (w, b) in enumerate(head.layers):
        h = tape.matmul(h, tape.param(w))
        h = tape.add_row_bias(h, tape.param(b))
        if i < last:
            h = tape.relu(h)
    return h


def mmoe_forward(
    tape: Tape,
    x0: Node,
    cfg: BlockConfig,
    expert_layers: list[list],
    gate_w: Param,
    gate_b: Param,
    head: HeadParams,
) -> Node:
    """Single-task mixture over identically configured expert stacks: the
    softmax gate reads X0, expert outputs are convexly combined, then the
    head maps to a logit."""
    gate = tape.matmul(x0, tape.param(gate_w))
    gate = tape.add_row_bias(gate, tape.param(gate_b))
    gates = tape.softmax_rows(gate)
    outs = [stack_forward(tape, x0, cfg, layers) for layers in expert_layers]
    combined = tape.gated_combine(gates, outs)
    return head_forward(tape, combined, head)


# ---------------------------------------------------------------------------
# model


class Model:
    """A full CTR model: embeddings -> interaction block (optionally an
    MMoE of blocks) -> MLP head producing one logit per row."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        reg = ParamRegistry(rng_from_seed(config.seed))
        self.embed_tables = [
            reg.normal(f"embed.{i}", f.cardinality, f.emb_dim, std=0.01)
            for i, f in enumerate(config.schema.fields)
        ]
        self.expert_layers: list[list] = []
        self.block_layers: list = []
        self.mmoe_gate: tuple[Param, Param] | None = None
        if config.block is not None:
            if config.mmoe is not None:
                for e in range(config.mmoe.n_experts):
                    self.expert_layers.append(
                        build_stack_params(reg, f"mmoe.e{e}", config.block)
                    )
                self.mmoe_gate = (
                    reg.xavier("mmoe.gate.W", config.block.d, config.mmoe.n_experts),
                    reg.zeros("mmoe.gate.b", 1, config.mmoe.n_experts),
                )
            else:
                self.block_layers = build_stack_params(reg, "block", config.block)
        self.head = build_head_params(reg, "head", config.head_input_width, config.head_widths)
        self._params = reg.params

    def parameters(self) -> list[Param]:
        return self._params

    def zero_grads(self) -> None:
        for p in self._params:
            p.zero_grad()

    def forward(self, tape: Tape, dense: np.ndarray, cat_ids: np.ndarray) -> Node:
        x0 = assemble_x0(tape, dense, cat_ids, self.embed_tables, self.config.schema)
        if self.config.block is None:
            return head_forward(tape, x0, self.head)
        if self.config.mmoe is not None:
            gate_w, gate_b = self.mmoe_gate
            return mmoe_forward(
                tape, x0, self.config.block, self.expert_layers, gate_w, gate_b, self.head
            )
        h = stack_forward(tape, x0, self.config.block, self.block_layers)
        return head_forward(tape, h, self.head)
