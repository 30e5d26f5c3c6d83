"""Pipeline configuration, built-in presets and ``key=value`` overrides."""

from dataclasses import asdict, dataclass, fields, replace

from .codec import CodecConfig
from .errors import InvalidConfigError
from .hmss import HmssConfig
from .rmr import RefinerConfig


@dataclass(frozen=True)
class PipelineConfig:
    preset: str = "desk"
    T: int = 24
    H: int = 64
    W: int = 64
    p: int = 8
    b_h: int = 4
    b_w: int = 4
    T_g: int = 8
    max_gop_len: int = 8
    K: int = 16
    N_m: int = 16
    d_s: int = 32
    Q: int = 4
    hidden: int = 32
    global_depth: int = 2
    search_range: int = 4
    scene_threshold: float = 0.3
    q: int = 1
    fps: int = 16
    seed_texture: int = 0
    seed_embed: int = 0
    seed_ssm: int = 0
    seed_refiner: int = 0
    seed_projection: int = 0

    def validate(self):
        positive = ("T", "H", "W", "p", "b_h", "b_w", "T_g", "max_gop_len", "K", "N_m",
                    "d_s", "Q", "hidden", "global_depth", "q", "fps")
        for name in positive:
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive")
        if self.H % self.p or self.W % self.p:
            raise InvalidConfigError(f"H, W must be divisible by the patch size p={self.p}")
        if self.H % self.b_h or self.W % self.b_w:
            raise InvalidConfigError("H, W must be divisible by the block size")
        if self.T_g < self.max_gop_len:
            raise InvalidConfigError("T_g must be >= max_gop_len")
        if self.search_range < 0:
            raise InvalidConfigError("search_range must be >= 0")
        if not 0.0 < self.scene_threshold <= 1.0:
            raise InvalidConfigError("scene_threshold must lie in (0, 1]")
        return self

    @property
    def N_p(self):
        return (self.H * self.W) // (self.p * self.p)

    @property
    def L_g(self):
        return self.N_p + (self.T_g - 1) * self.N_m

    def codec(self, backend="auto"):
        return CodecConfig(self.b_h, self.b_w, self.search_range, self.max_gop_len, self.T_g,
                           self.scene_threshold, self.q, backend)

    def refiner(self):
        return RefinerConfig(self.b_h, self.b_w, self.hidden, self.N_m, self.d_s)

    def hmss(self, backend="auto"):
        return HmssConfig(self.p, self.d_s, self.Q, self.global_depth, self.seed_embed,
                          self.seed_ssm, backend)

    def seeds(self):
        return {f.name[5:]: getattr(self, f.name) for f in fields(self) if f.name.startswith("seed_")}

    def as_dict(self):
        return asdict(self)


PRESETS = {
    "desk": PipelineConfig(),
    "paper": PipelineConfig(preset="paper", T=64, H=384, W=384, p=16, b_h=4, b_w=4, T_g=32,
                            max_gop_len=32, K=64, N_m=32, fps=16),
}


def _coerce(name, raw):
    types = {f.name: f.type for f in fields(PipelineConfig)}
    if name not in types:
        raise InvalidConfigError(f"unknown config key {name!r}")
    kind = types[name]
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return str(raw)
    except ValueError as exc:
        raise InvalidConfigError(f"{name}: cannot parse {raw!r}") from exc


def parse_overrides(text):
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load(preset="desk", path=None, **overrides):
    if preset not in PRESETS:
        raise InvalidConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[preset]
    changes = {}
    if path:
        with open(path) as f:
            changes.update(parse_overrides(f.read()))
    changes.update({k: v for k, v in overrides.items() if v is not None})
    if "preset" in changes and changes["preset"] != preset:
        raise InvalidConfigError("the preset is chosen with --preset, not in the config file")
    return replace(cfg, **changes).validate()
