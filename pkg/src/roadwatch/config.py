"""Pipeline configuration: dataclass tree with documented defaults, a
sectioned key-value file parser that rejects unknown keys, and environment
overrides for worker count and cache directory."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields


@dataclass
class StabilizeConfig:
    enabled: bool = True
    max_corners: int = 200
    quality: float = 0.01
    min_distance: float = 10.0
    downscale: int = 2
    redetect_every: int = 10
    smooth_window: int = 31
    ema_alpha: float = 0.9
    delta_t: float = 17200.0
    delta_avg: float = 0.645


@dataclass
class BackgroundConfig:
    # 0.01 absorbs a freshly stopped vehicle in ~2.3 s of video, keeping
    # detection latency well inside the scoring window; slower rates delay
    # the first background appearance of a stall by several more seconds.
    alpha: float = 0.01
    sample_interval: int = 120
    components: int = 5
    var_floor: float = 4.0
    bg_ratio: float = 0.9
    match_sigma: float = 2.5
    init_var: float = 225.0
    backend: str = ""   # "", "native", or "numpy"


@dataclass
class DetectConfig:
    mode: str = "blob"  # blob | file | fused
    diff_threshold: int = 30
    min_area: int = 64
    nms_threshold: float = 0.8
    file_a: str = ""
    file_b: str = ""


@dataclass
class MaskConfig:
    enabled: bool = True
    stride: int = 5           # raw-frame stride for moving-object sampling
    freq_threshold: float = 0.002
    min_len: int = 5
    min_displacement: float = 50.0
    angle_threshold: float = 0.8


@dataclass
class TrackConfig:
    suspicious_time: float = 20.0
    abnormal_time: float = 30.0
    reset_misses: int = 3
    min_hits: int = 3
    min_area: int = 64
    t_iou: float = 0.3
    t_iou_relaxed: float = 0.5
    t_psnr: float = 18.0
    t_psnr_relaxed: float = 20.0
    t_color: float = 0.88
    t_color_relaxed: float = 0.9
    t_ratio_relaxed: float = 0.6
    t_time: float = 30.0
    ratio_window: int = 10


@dataclass
class TubeConfig:
    sim_threshold: float = 0.6
    lower_bound: float = 0.25
    duration_ratio: float = 0.3
    fuse_psnr: float = 18.0


@dataclass
class PostprocConfig:
    collision_enabled: bool = True
    refine_enabled: bool = True
    ring_width: int = 50
    fg_threshold: int = 1000
    bg_sim_threshold: float = 0.9
    settle_margin: int = 2
    appearance_sim: float = 0.8


@dataclass
class EvalConfig:
    tp_window: float = 10.0
    rmse_cap: float = 300.0


@dataclass
class PipelineConfig:
    stabilize: StabilizeConfig = field(default_factory=StabilizeConfig)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    tube: TubeConfig = field(default_factory=TubeConfig)
    postproc: PostprocConfig = field(default_factory=PostprocConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    workers: int = 1
    cache_dir: str = ""


def _coerce(current, raw: str):
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw.strip()


def load_config(path: str | None = None, env: dict | None = None) -> PipelineConfig:
    """Build a config from defaults, an optional file, and env overrides.

    File format: `[section]` headers naming the sub-config, then
    `key = value` lines. Unknown sections or keys abort with the offending
    line number.
    """
    cfg = PipelineConfig()
    if path:
        apply_file(cfg, path)
    env = os.environ if env is None else env
    if env.get("ROADWATCH_WORKERS"):
        cfg.workers = int(env["ROADWATCH_WORKERS"])
    if env.get("ROADWATCH_CACHE_DIR"):
        cfg.cache_dir = env["ROADWATCH_CACHE_DIR"]
    return cfg


def apply_file(cfg: PipelineConfig, path: str):
    section = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                name = line[1:-1].strip()
                if not hasattr(cfg, name) or not dataclasses.is_dataclass(getattr(cfg, name)):
                    raise ValueError(f"{path}:{lineno}: unknown section [{name}]")
                section = getattr(cfg, name)
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected `key = value`")
            key = key.strip()
            target = section if section is not None else cfg
            if section is None and key not in ("workers", "cache_dir"):
                raise ValueError(f"{path}:{lineno}: key {key!r} outside any section")
            if not hasattr(target, key) or dataclasses.is_dataclass(getattr(target, key)):
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                setattr(target, key, _coerce(getattr(target, key), value))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc


def config_fingerprint(cfg) -> str:
    """Stable text form of a (sub)config, used for cache keys."""
    if dataclasses.is_dataclass(cfg):
        parts = []
        for f in fields(cfg):
            parts.append(f"{f.name}={config_fingerprint(getattr(cfg, f.name))}")
        return "{" + ",".join(parts) + "}"
    return repr(cfg)
