"""
phantoms.py - 合成分割体模

功能说明:
    生成可复现的合成分割数据，代替真实临床数据:
    1. cardiac（心脏样）        - 4类（含背景）
       - 类别3 "LV": 圆盘
       - 类别2 "MYO": 包围圆盘的圆环
       - 类别1 "RV": 紧贴圆环外侧的月牙
    2. multicomponent（多连通） - 2类（含背景）
       - 一个粗线条的螺旋形大结构 + 2~4 个互不相连的小圆块，同属类别1

退化（只改变图像，不改变标签）:
    结构灰度 → 对比度缩放 → 高亮条纹伪影 → 高斯模糊 → 加性高斯噪声

确定性:
    第 i 个样本使用 np.random.default_rng([seed, i])，所以
    generate(spec, n) 是 (spec, n) 的纯函数，spec_hash 可以作为内容地址。

使用例子:
    spec = PhantomSpec(kind="cardiac", image_size=(64, 64), seed=7, contrast=0.3, noise_sigma=0.15)
    samples = generate(spec, 100)
    print(samples[0].image.shape, samples[0].label.max())   # (1, 64, 64) 3
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import cv2
import numpy as np

from ..utils.errors import ConfigError

logger = logging.getLogger(__name__)

KINDS = ("cardiac", "multicomponent")
CLASS_COUNTS = {"cardiac": 4, "multicomponent": 2}
DEFAULT_LEVELS = {"cardiac": (0.0, 0.45, 0.7, 1.0), "multicomponent": (0.0, 1.0)}

# 月牙（RV）的外接圆：半径和圆心偏移都以 MYO 外半径为单位
RV_RADIUS = 1.1
RV_OFFSET = 0.9
# 螺旋外半径相对 radius_range 的放大倍数
SPIRAL_SCALE = 1.6
MIN_RING_PX = 2


@dataclass
class PhantomSpec:
    """
    体模规格

    几何参数都是相对 min(H, W) 的比例；crescent_angle 是月牙方向的角度范围（度）。
    退化参数必须非负，contrast ∈ (0, 1]。
    """

    kind: str = "cardiac"
    image_size: Tuple[int, int] = (64, 64)
    seed: int = 0
    center_jitter: float = 0.05
    radius_range: Tuple[float, float] = (0.08, 0.12)
    ring_thickness: Tuple[float, float] = (0.04, 0.06)
    crescent_angle: Tuple[float, float] = (150.0, 210.0)
    small_blobs: Tuple[int, int] = (2, 4)
    contrast: float = 1.0
    noise_sigma: float = 0.05
    blur_radius: int = 1
    streaks: int = 0
    streak_level: float = 1.5
    levels: Optional[Tuple[float, ...]] = None
    spacing_mm: float = 1.0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.radius_range = tuple(float(v) for v in self.radius_range)
        self.ring_thickness = tuple(float(v) for v in self.ring_thickness)
        self.crescent_angle = tuple(float(v) for v in self.crescent_angle)
        self.small_blobs = tuple(int(v) for v in self.small_blobs)
        if self.levels is None:
            self.levels = DEFAULT_LEVELS.get(self.kind, (0.0, 1.0))
        self.levels = tuple(float(v) for v in self.levels)

    @property
    def n_classes(self) -> int:
        return CLASS_COUNTS[self.kind]

    def validate(self) -> "PhantomSpec":
        if self.kind not in KINDS:
            raise ConfigError(f"unknown phantom kind {self.kind!r}, expected one of {KINDS}")
        h, w = self.image_size
        if h < 16 or w < 16:
            raise ConfigError(f"image size {h}x{w} too small for a phantom (minimum 16x16)")
        if len(self.levels) != self.n_classes:
            raise ConfigError(f"{self.kind} phantoms need {self.n_classes} intensity levels, got {len(self.levels)}")
        if not 0.0 < self.contrast <= 1.0:
            raise ConfigError(f"contrast must lie in (0, 1], got {self.contrast}")
        for name in ("noise_sigma", "blur_radius", "streaks", "center_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("radius_range", "ring_thickness", "crescent_angle", "small_blobs"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"{name} must be an ordered non-negative range, got {(lo, hi)}")
        if self.radius_range[0] <= 0:
            raise ConfigError("radius_range must be positive")
        if self.spacing_mm <= 0:
            raise ConfigError(f"spacing_mm must be positive, got {self.spacing_mm}")
        extent = self._worst_case_extent()
        if extent > 0.5 * min(h, w) - 1:
            raise ConfigError(
                f"geometry does not fit: structures may reach {extent:.1f}px from the center "
                f"of a {h}x{w} image"
            )
        return self

    def _worst_case_extent(self) -> float:
        """结构离图像中心的最大距离（像素）"""
        s = min(self.image_size)
        jitter = self.center_jitter * s
        if self.kind == "cardiac":
            r_myo = max(self.radius_range[1] * s, MIN_RING_PX) + max(self.ring_thickness[1] * s, MIN_RING_PX)
            return jitter + (RV_RADIUS + RV_OFFSET) * r_myo
        return jitter + SPIRAL_SCALE * self.radius_range[1] * s + self._spiral_width() / 2

    def _spiral_width(self) -> int:
        return max(MIN_RING_PX, int(round(self.ring_thickness[1] * min(self.image_size))))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "PhantomSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown phantom spec keys: {sorted(unknown)}")
        return cls(**d)

    def spec_hash(self) -> str:
        """规格的内容哈希（规范化JSON的SHA-256前16位）"""
        doc = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(doc.encode("utf-8")).hexdigest()[:16]


@dataclass
class Sample:
    """
    一个图像-标签对

    image: (1, H, W) float64；label: (H, W) uint8 类别索引
    """

    sample_id: str
    image: np.ndarray
    label: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)


# ============================================================
# 几何
# ============================================================
def _disk(shape: Tuple[int, int], center: Tuple[float, float], radius: float) -> np.ndarray:
    canvas = np.zeros(shape, dtype=np.uint8)
    cy, cx = center
    cv2.circle(canvas, (int(round(cx)), int(round(cy))), int(round(radius)), 1, thickness=-1)
    return canvas.astype(bool)


def _jittered_center(spec: PhantomSpec, rng: np.random.Generator) -> Tuple[float, float]:
    h, w = spec.image_size
    jitter = spec.center_jitter * min(h, w)
    return h / 2 + rng.uniform(-jitter, jitter), w / 2 + rng.uniform(-jitter, jitter)


def _cardiac_label(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    s = min(spec.image_size)
    cy, cx = _jittered_center(spec, rng)
    r_lv = max(MIN_RING_PX, rng.uniform(*spec.radius_range) * s)
    thickness = max(MIN_RING_PX, rng.uniform(*spec.ring_thickness) * s)
    r_myo = r_lv + thickness
    theta = np.deg2rad(rng.uniform(*spec.crescent_angle))
    rv_center = (cy + RV_OFFSET * r_myo * np.sin(theta), cx + RV_OFFSET * r_myo * np.cos(theta))

    # 月牙 = RV外接圆 − (MYO外圆 + 1像素间隙)
    rv = _disk(spec.image_size, rv_center, RV_RADIUS * r_myo) & ~_disk(spec.image_size, (cy, cx), r_myo + 1)
    label = np.zeros(spec.image_size, dtype=np.uint8)
    label[rv] = 1
    label[_disk(spec.image_size, (cy, cx), r_myo)] = 2
    label[_disk(spec.image_size, (cy, cx), r_lv)] = 3
    return label


def _multicomponent_label(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.image_size
    s = min(h, w)
    cy, cx = _jittered_center(spec, rng)
    outer = SPIRAL_SCALE * rng.uniform(*spec.radius_range) * s
    turns = rng.uniform(1.2, 1.8)
    t = np.linspace(0.0, 2 * np.pi * turns, 200)
    radius = outer * (0.2 + 0.8 * t / t[-1])
    phase = rng.uniform(0, 2 * np.pi)
    pts = np.stack([cx + radius * np.cos(t + phase), cy + radius * np.sin(t + phase)], axis=1)
    canvas = np.zeros(spec.image_size, dtype=np.uint8)
    cv2.polylines(canvas, [np.round(pts).astype(np.int32).reshape(-1, 1, 2)], False, 1,
                  thickness=spec._spiral_width())

    # 小结构：和已有前景至少隔开2个像素，保证互不连通
    n_small = int(rng.integers(spec.small_blobs[0], spec.small_blobs[1] + 1))
    kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (5, 5))
    placed = 0
    for _ in range(200):
        if placed == n_small:
            break
        r = max(MIN_RING_PX, rng.uniform(0.025, 0.045) * s)
        center = (rng.uniform(r + 1, h - r - 2), rng.uniform(r + 1, w - r - 2))
        blob = _disk(spec.image_size, center, r)
        if np.any(blob & cv2.dilate(canvas, kernel).astype(bool)):
            continue
        canvas[blob] = 1
        placed += 1
    if placed < n_small:
        logger.warning(f"⚠️ placed only {placed}/{n_small} small structures")
    return canvas


# ============================================================
# 退化
# ============================================================
def _render(spec: PhantomSpec, label: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    levels = np.asarray(spec.levels, dtype=np.float64)
    background = levels[0]
    image = background + spec.contrast * (levels[label] - background)

    if spec.streaks:
        ys, xs = np.nonzero(label)
        streak = np.zeros(spec.image_size, dtype=np.uint8)
        h, w = spec.image_size
        for _ in range(spec.streaks):
            k = rng.integers(len(ys)) if len(ys) else 0
            py, px = (ys[k], xs[k]) if len(ys) else (h // 2, w // 2)
            angle = rng.uniform(0, np.pi)
            dy, dx = np.sin(angle) * max(h, w), np.cos(angle) * max(h, w)
            cv2.line(streak, (int(px - dx), int(py - dy)), (int(px + dx), int(py + dy)), 1, thickness=1)
        image[streak.astype(bool)] = spec.streak_level

    if spec.blur_radius:
        k = 2 * int(spec.blur_radius) + 1
        image = cv2.GaussianBlur(image, (k, k), 0)

    if spec.noise_sigma:
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    return image


def generate(spec: PhantomSpec, n: int) -> List[Sample]:
    """
    生成 n 个样本

    异常:
        ConfigError: 规格非法或几何放不下
        ValueError: n < 1
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    spec.validate()
    digest = spec.spec_hash()
    draw = _cardiac_label if spec.kind == "cardiac" else _multicomponent_label
    samples = []
    for i in range(n):
        rng = np.random.default_rng([spec.seed, i])
        label = draw(spec, rng)
        image = _render(spec, label, rng)
        samples.append(Sample(
            sample_id=f"{spec.kind}-{spec.seed}-{i:05d}",
            image=image[None].astype(np.float64),
            label=label,
            metadata={"seed": spec.seed, "index": i, "spec_hash": digest},
        ))
    logger.info(f"🧪 generated {n} {spec.kind} phantoms (spec hash {digest})")
    return samples
