"""Run configuration and its ``key = value`` text form with ``[section]`` headers."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .dataset import CorpusSpec
from .encoder import ConvBlock, EncoderConfig
from .errors import ContractError

MODES = ("gtc", "gtc_no_gcn", "ctc_only", "ctc_plus_gcn", "attention_only", "ctc_guides_attention")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "gtc"
    lr: float = 1e-3
    lr_decay: float = 0.1
    decay_interval: int = 2000
    batch_size: int = 16
    max_steps: int = 200
    seed: int = 0
    beta: float = 2.0
    eval_interval: int = 50
    eval_split: str = "train"
    checkpoint_interval: int = 0
    ce_weight: float = 1.0
    ctc_weight: float = 1.0
    decoder_hidden: int = 64
    proj_dim: int = 0
    use_mix_weight: bool = True
    guidance_hidden: int = 64
    embed_dim: int = 32
    max_decode_length: int = 32
    grad_clip: float = 0.0
    record_timing: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.lr <= 0:
            raise ContractError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ContractError("lr_decay must be in (0, 1]")
        if self.decay_interval < 1 or self.eval_interval < 1 or self.batch_size < 1:
            raise ContractError("intervals and batch size must be >= 1")
        if self.max_steps < 0:
            raise ContractError("max_steps must be non-negative")
        if self.grad_clip < 0:
            raise ContractError("grad_clip must be non-negative (0 disables clipping)")

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based ``step``: decays by ``lr_decay`` every ``decay_interval`` steps."""
        return self.lr * self.lr_decay ** ((step - 1) // self.decay_interval)


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, kind):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ContractError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(raw, 0)
    if kind is float:
        return float(raw)
    return raw.strip()


def _pairs(items) -> str:
    return ",".join(f"{a}x{b}" for a, b in items)


def _unpairs(raw: str):
    out = []
    for tok in raw.split(","):
        a, b = tok.strip().lower().split("x")
        out.append((int(a), int(b)))
    return out


def encoder_to_dict(cfg: EncoderConfig) -> dict[str, str]:
    return {
        "height": str(cfg.height),
        "in_channels": str(cfg.in_channels),
        "channels": ",".join(str(b.out_channels) for b in cfg.blocks),
        "kernels": _pairs(b.kernel for b in cfg.blocks),
        "strides": _pairs(b.stride for b in cfg.blocks),
        "pools": _pairs(b.pool for b in cfg.blocks),
        "width_padding": cfg.width_padding,
        "residual": _fmt(cfg.residual),
    }


def encoder_from_dict(d) -> EncoderConfig:
    base = encoder_to_dict(EncoderConfig())
    base.update(d)
    channels = [int(c) for c in base["channels"].split(",") if c.strip()]
    n = len(channels)
    kernels, strides, pools = (_unpairs(base[k]) if n else [] for k in ("kernels", "strides", "pools"))
    if not (len(kernels) == len(strides) == len(pools) == n):
        raise ContractError("encoder channels, kernels, strides and pools must have equal lengths")
    blocks = tuple(ConvBlock(c, k, s, p) for c, k, s, p in zip(channels, kernels, strides, pools))
    return EncoderConfig(
        height=int(base["height"]),
        in_channels=int(base["in_channels"]),
        blocks=blocks,
        width_padding=base["width_padding"],
        residual=_parse(base["residual"], bool),
    )


def _dc_to_dict(obj) -> dict[str, str]:
    return {f.name: _fmt(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def _dc_from_dict(cls, d):
    types = {f.name: type(f.default) for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in d.items():
        if key not in types:
            raise ContractError(f"unknown {cls.__name__} key {key!r}")
        kwargs[key] = _parse(raw, types[key])
    return cls(**kwargs)


def to_text(cfg: RunConfig, extra: dict[str, dict[str, str]] | None = None) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["corpus"] = _dc_to_dict(cfg.corpus)
    parser["encoder"] = encoder_to_dict(cfg.encoder)
    parser["train"] = _dc_to_dict(cfg.train)
    for name, section in (extra or {}).items():
        parser[name] = section
    lines = []
    for name in parser.sections():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in parser[name].items())
        lines.append("")
    return "\n".join(lines)


def read_sections(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ContractError(f"malformed config: {exc}") from None
    return {name: dict(parser[name]) for name in parser.sections()}


def from_sections(sections: dict[str, dict[str, str]]) -> RunConfig:
    unknown = set(sections) - {"corpus", "encoder", "train", "model"}
    if unknown:
        raise ContractError(f"unknown config sections: {sorted(unknown)}")
    return RunConfig(
        corpus=_dc_from_dict(CorpusSpec, sections.get("corpus", {})),
        encoder=encoder_from_dict(sections.get("encoder", {})),
        train=_dc_from_dict(TrainConfig, sections.get("train", {})),
    )


def from_text(text: str) -> RunConfig:
    return from_sections(read_sections(text))


def replace(cfg: RunConfig, section: str, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **changes)})


# Desk-scale settings for the 100-sample toy corpus. The library defaults keep
# the published lr; this preset trades it for faster, steadier toy convergence.
TOY_TRAIN = {"lr": 3e-3, "batch_size": 32, "grad_clip": 1.0}


def toy_run(mode: str = "gtc", seed: int = 0, **train) -> RunConfig:
    """Toy-corpus run: alphabet "AB", 100 samples of at most 3 characters, 200 steps."""
    kw = dict(TOY_TRAIN, mode=mode, seed=seed)
    kw.update(train)
    return RunConfig(corpus=CorpusSpec(alphabet="AB", count=100, max_len=3, seed=seed), train=TrainConfig(**kw))
