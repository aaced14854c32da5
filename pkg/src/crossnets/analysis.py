"""Analytic FLOPs and parameter accounting, plus a symbolic bound on the
polynomial interaction order of each crossing stack.

FLOPs follow the fixed convention of the engine (one multiply-add = 2
FLOPs, bias adds cost their width, LayerNorm 5d per row, softmax 5K per
row, embedding lookups and concatenation free), counted for one inference
(batch of one) over the entire model. Absolute numbers are only meaningful
under this convention; relative comparisons between configs are the point.
The closed forms here are cross-checked against the engine's instrumented
counter in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .blocks import MASKNET_KINDS, BlockConfig, ModelConfig
from .errors import ConfigError, UnsupportedError

__all__ = ["FlopsReport", "DegreeBound", "flops_report", "param_count", "degree_bound"]


Terms = list[tuple[str, int]]


def _layer_terms(cfg: BlockConfig) -> Terms:
    d = cfg.d
    if cfg.kind == "dcnv2":
        return [
            ("cross_matmul", 2 * d * d),
            ("bias", d),
            ("cross_hadamard", d),
            ("residual", d),
        ]
    if cfg.kind == "lowrank":
        r = cfg.r
        return [
            ("v_proj", 2 * d * r),
            ("u_proj", 2 * d * r),
            ("bias", d),
            ("cross_hadamard", d),
            ("residual", d),
        ]
    if cfg.kind == "moe_lowrank":
        r, K = cfg.r, cfg.K
        return [
            ("expert_v_proj", K * 2 * d * r),
            ("expert_u_proj", K * 2 * d * r),
            ("expert_bias", K * d),
            ("expert_cross", K * d),
            ("gate_linear", 2 * d * K + K),
            ("gate_softmax", 5 * K),
            ("combine_residual", d),
        ]
    if cfg.kind == "mldcn":
        r = cfg.r
        terms: Terms = [("v_proj", 2 * d * r)]
        mode = cfg.mask_components
        if mode == "full":
            k = cfg.k_mask
            terms += [
                ("mask_agg_linear", 2 * d * k + k),
                ("mask_relu", k),
                ("mask_proj_linear", 2 * k * r + r),
                ("mask_hadamard", r),
            ]
        elif mode == "mlp1":
            terms += [("mask_linear", 2 * d * r + r), ("mask_hadamard", r)]
        elif mode == "mlp1_relu":
            terms += [
                ("mask_linear", 2 * d * r + r),
                ("mask_relu", r),
                ("mask_hadamard", r),
            ]
        terms += [
            ("u_proj", 2 * d * r),
            ("bias", d),
            ("cross_hadamard", d),
            ("residual", d),
            ("layernorm", 5 * d),
        ]
        return terms
    if cfg.kind in MASKNET_KINDS:
        k = cfg.k_mask
        return [
            ("mask_agg_linear", 2 * d * k + k),
            ("mask_relu", k),
            ("mask_proj_linear", 2 * k * d + d),
            ("input_layernorm", 5 * d),
            ("mask_hadamard", d),
            ("hidden_matmul", 2 * d * d),
            ("output_layernorm", 5 * d),
            ("output_relu", d),
        ]
    raise ConfigError(f"unknown block kind {cfg.kind!r}")


def _layer_params(cfg: BlockConfig) -> int:
    d = cfg.d
    if cfg.kind == "dcnv2":
        return d * d + d
    if cfg.kind == "lowrank":
        return 2 * d * cfg.r + d
    if cfg.kind == "moe_lowrank":
        return cfg.K * (2 * d * cfg.r + d) + d * cfg.K + cfg.K
    if cfg.kind == "mldcn":
        r = cfg.r
        base = 2 * d * r + d + 2 * d  # U, V, b and the LayerNorm affine pair
        mode = cfg.mask_components
        if mode == "full":
            k = cfg.k_mask
            return base + (d * k + k) + (k * r + r)
        if mode in ("mlp1", "mlp1_relu"):
            return base + d * r + r
        return base
    if cfg.kind in MASKNET_KINDS:
        k = cfg.k_mask
        return (d * k + k) + (k * d + d) + d * d + 4 * d
    raise ConfigError(f"unknown block kind {cfg.kind!r}")


def _head_terms(in_width: int, widths: tuple[int, ...]) -> Terms:
    terms: Terms = []
    prev = in_width
    last = len(widths) - 1
    for i, w in enumerate(widths):
        terms.append((f"linear_{i}", 2 * prev * w + w))
        if i < last:
            terms.append((f"relu_{i}", w))
        prev = w
    return terms


@dataclass
class LayerFlops:
    layer: int
    terms: Terms
    total: int


@dataclass
class FlopsReport:
    """Per-term, per-layer and total FLOPs plus parameter count for one
    inference. `stack_total` is one pass of the block stack; with an MMoE
    wrapper `block_total` covers all experts plus gate and combine."""

    per_layer: list[LayerFlops]
    stack_total: int
    mmoe_terms: Terms | None
    n_experts: int
    block_total: int
    embed_flops: int
    head_terms: Terms
    head_flops: int
    model_total: int
    param_count: int

    def validate(self) -> None:
        for lf in self.per_layer:
            if lf.total != sum(f for _, f in lf.terms):
                raise ConfigError(f"flops report: layer {lf.layer} total != sum of terms")
        if self.stack_total != sum(lf.total for lf in self.per_layer):
            raise ConfigError("flops report: stack_total != sum of per-layer totals")
        overhead = sum(f for _, f in self.mmoe_terms) if self.mmoe_terms else 0
        if self.block_total != self.n_experts * self.stack_total + overhead:
            raise ConfigError("flops report: block_total != experts * stack + overhead")
        if self.head_flops != sum(f for _, f in self.head_terms):
            raise ConfigError("flops report: head_flops != sum of head terms")
        if self.model_total != self.embed_flops + self.block_total + self.head_flops:
            raise ConfigError("flops report: model_total != embed + block + head")

    def to_dict(self) -> dict:
        return {
            "per_layer": [
                {"layer": lf.layer, "terms": dict(lf.terms), "total": lf.total}
                for lf in self.per_layer
            ],
            "stack_total": self.stack_total,
            "mmoe": None
            if self.mmoe_terms is None
            else {"n_experts": self.n_experts, "terms": dict(self.mmoe_terms)},
            "block_total": self.block_total,
            "embed_flops": self.embed_flops,
            "head_terms": dict(self.head_terms),
            "head_flops": self.head_flops,
            "model_total": self.model_total,
            "param_count": self.param_count,
        }


def flops_report(config: ModelConfig) -> FlopsReport:
    config.validate()
    per_layer: list[LayerFlops] = []
    if config.block is not None:
        terms = _layer_terms(config.block)
        total = sum(f for _, f in terms)
        per_layer = [LayerFlops(layer=i, terms=terms, total=total) for i in range(config.block.l)]
    stack_total = sum(lf.total for lf in per_layer)

    mmoe_terms: Terms | None = None
    n_experts = 1
    if config.mmoe is not None:
        E = config.mmoe.n_experts
        d = config.block.d
        n_experts = E
        mmoe_terms = [
            ("gate_linear", 2 * d * E + E),
            ("gate_softmax", 5 * E),
            ("combine", config.block.out_width),
        ]
    block_total = n_experts * stack_total + (
        sum(f for _, f in mmoe_terms) if mmoe_terms else 0
    )

    head_terms = _head_terms(config.head_input_width, config.head_widths)
    head_flops = sum(f for _, f in head_terms)

    report = FlopsReport(
        per_layer=per_layer,
        stack_total=stack_total,
        mmoe_terms=mmoe_terms,
        n_experts=n_experts,
        block_total=block_total,
        embed_flops=0,  # lookups are memory traffic under this convention
        head_terms=head_terms,
        head_flops=head_flops,
        model_total=block_total + head_flops,
        param_count=param_count(config),
    )
    report.validate()
    return report


def param_count(config: ModelConfig) -> int:
    config.validate()
    total = sum(f.cardinality * f.emb_dim for f in config.schema.fields)
    if config.block is not None:
        stack = config.block.l * _layer_params(config.block)
        if config.mmoe is not None:
            E = config.mmoe.n_experts
            total += E * stack + config.block.d * E + E
        else:
            total += stack
    prev = config.head_input_width
    for w in config.head_widths:
        total += prev * w + w
        prev = w
    return total


@dataclass
class DegreeBound:
    """Maximum total degree of each layer output viewed as a (piecewise)
    polynomial in the entries of X0."""

    kind: str
    l: int
    per_layer: list[int]
    final: int


def degree_bound(kind: str, l: int) -> DegreeBound:
    """Symbolic degree propagation: X0 has degree 1, linear maps preserve
    degree, elementwise products add degrees, residual adds take the max,
    and ReLU is treated as piecewise-linear (degree-preserving), so the
    mask branch carries the degree of the layer input. Crossing kinds grow
    by one per layer; the masked low-rank layer doubles-plus-one."""
    if l < 1:
        raise ConfigError(f"degree_bound: l must be >= 1, got {l}")
    if kind in MASKNET_KINDS:
        raise UnsupportedError(f"degree_bound: no polynomial-order bound for kind {kind!r}")
    if kind in ("dcnv2", "lowrank", "moe_lowrank"):
        per_layer = [i + 1 for i in range(1, l + 1)]
    elif kind == "mldcn":
        per_layer = []
        deg = 1
        for _ in range(l):
            deg = 2 * deg + 1
            per_layer.append(deg)
    else:
        raise ConfigError(f"degree_bound: unknown kind {kind!r}")
    return DegreeBound(kind=kind, l=l, per_layer=per_layer, final=per_layer[-1])
