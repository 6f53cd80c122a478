"""Procedural paired-pose data: textured stick figures in two poses.

A figure's appearance (limb sizes, region colours, stripe textures,
background) comes from ``spec_seed``; each pose comes from its own seed.
Rendering is painter's-order over simple shapes, so the parsing map is the
exact region ownership of every pixel.

Labels: 0 background, 1 head, 2 torso, 3 pelvis, 4 left arm, 5 right arm,
6 left leg, 7 right leg.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

LABELS = ("background", "head", "torso", "pelvis", "left_arm", "right_arm", "left_leg", "right_leg")
JOINTS = ("head", "neck", "chest", "pelvis", "left_hand", "right_hand", "left_foot", "right_foot")
N_JOINTS = len(JOINTS)
MARGIN = 2
MAX_RESAMPLE = 100


@dataclass
class FigureSpec:
    """Appearance of one character, sizes as fractions of the canvas."""

    seed: int
    torso_len: float
    torso_width: float
    pelvis_len: float
    arm_len: float
    leg_len: float
    limb_width: float
    head_radius: float
    colors: np.ndarray  # [8, 3] in [0, 1]; row 0 is the background
    stripe_freq: np.ndarray  # [8]
    stripe_amp: np.ndarray  # [8]
    stripe_angle: np.ndarray  # [8]

    @classmethod
    def from_seed(cls, seed: int) -> "FigureSpec":
        rng = np.random.default_rng([int(seed), 0xF16])
        colors = rng.uniform(0.15, 0.95, size=(8, 3))
        colors[0] = rng.uniform(0.0, 0.2, size=3)
        return cls(
            seed=int(seed),
            torso_len=rng.uniform(0.22, 0.26),
            torso_width=rng.uniform(0.15, 0.19),
            pelvis_len=rng.uniform(0.06, 0.08),
            arm_len=rng.uniform(0.20, 0.25),
            leg_len=rng.uniform(0.22, 0.26),
            limb_width=rng.uniform(0.035, 0.045),
            head_radius=rng.uniform(0.065, 0.08),
            colors=colors,
            stripe_freq=rng.uniform(1.5, 4.0, size=8),
            stripe_amp=rng.uniform(0.1, 0.3, size=8),
            stripe_angle=rng.uniform(0, np.pi, size=8),
        )


@dataclass
class Pose:
    seed: int
    joints: np.ndarray  # [8, 2] (row, col) in pixels
    shoulders: np.ndarray  # [2, 2]
    hips: np.ndarray  # [2, 2]
    pelvis_bottom: np.ndarray  # [2]


@dataclass
class SamplePair:
    """Source/target images, heatmaps and parsing maps of one character."""

    id: str
    I_S: np.ndarray  # [3, H, W] float in [-1, 1]
    I_T: np.ndarray
    K_S: np.ndarray  # [J, H, W]
    K_T: np.ndarray
    P_S: np.ndarray  # [H, W] int labels
    P_T: np.ndarray
    spec_seed: int = 0
    pose_a_seed: int = 0
    pose_b_seed: int = 0
    joints_S: Optional[np.ndarray] = None
    joints_T: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.P_S.shape[0]


def _rot(angle: float) -> np.ndarray:
    # angle measured from straight down (+row), positive towards -col
    return np.array([np.cos(angle), -np.sin(angle)])


def sample_pose(spec: FigureSpec, seed: int, size: int) -> Pose:
    rng = np.random.default_rng([int(seed), 0xB0D7])
    s = float(size)
    lean = rng.uniform(-0.2, 0.2)
    neck = np.array([s * rng.uniform(0.26, 0.30), s * (0.5 + rng.uniform(-0.05, 0.05))])
    down = _rot(lean)
    across = np.array([down[1], -down[0]])  # towards +col when upright
    chest = neck + down * spec.torso_len * s * 0.5
    pelvis = neck + down * spec.torso_len * s
    pelvis_bottom = pelvis + down * spec.pelvis_len * s
    head = neck - down * (spec.head_radius * s * 1.1) + across * rng.uniform(-0.02, 0.02) * s
    half = spec.torso_width * s * 0.5
    shoulders = np.stack([neck - across * half, neck + across * half])
    hips = np.stack([pelvis_bottom - across * half * 0.5, pelvis_bottom + across * half * 0.5])
    # arms swing outwards from their own side
    left_arm = lean - rng.uniform(0.15, 2.6)
    right_arm = lean + rng.uniform(0.15, 2.6)
    left_leg = lean - rng.uniform(0.0, 0.7)
    right_leg = lean + rng.uniform(0.0, 0.7)
    hands = [shoulders[0] + _rot(left_arm) * spec.arm_len * s,
             shoulders[1] + _rot(right_arm) * spec.arm_len * s]
    feet = [hips[0] + _rot(left_leg) * spec.leg_len * s,
            hips[1] + _rot(right_leg) * spec.leg_len * s]
    joints = np.stack([head, neck, chest, pelvis, hands[0], hands[1], feet[0], feet[1]])
    return Pose(int(seed), joints, shoulders, hips, pelvis_bottom)


def _segment_coords(pr, pc, a, b):
    """Projection parameter along a->b and signed distance across it."""
    d = b - a
    length = np.hypot(*d)
    u = d / length
    rel_r, rel_c = pr - a[0], pc - a[1]
    along = (rel_r * u[0] + rel_c * u[1]) / length
    across = rel_r * (-u[1]) + rel_c * u[0]
    return along, across, length


def figure_shapes(spec: FigureSpec, pose: Pose, size: int):
    """Painter's-order list of ``(label, inside(pr, pc) -> (mask, s, t))``.

    ``s, t`` are shape-local texture coordinates so textures follow limbs.
    """
    s = float(size)
    lw = spec.limb_width * s
    j = pose.joints

    def capsule(a, b, radius):
        def inside(pr, pc):
            along, across, length = _segment_coords(pr, pc, a, b)
            t = np.clip(along, 0.0, 1.0)
            dr = pr - (a[0] + t * (b[0] - a[0]))
            dc = pc - (a[1] + t * (b[1] - a[1]))
            return dr * dr + dc * dc <= radius * radius, along * length / s, across / s
        return inside

    def box(a, b, half_width):
        def inside(pr, pc):
            along, across, length = _segment_coords(pr, pc, a, b)
            mask = (along >= 0) & (along <= 1) & (np.abs(across) <= half_width)
            return mask, along * length / s, across / s
        return inside

    def disk(center, radius):
        def inside(pr, pc):
            dr, dc = pr - center[0], pc - center[1]
            return dr * dr + dc * dc <= radius * radius, dr / s, dc / s
        return inside

    half = spec.torso_width * s * 0.5
    return [
        (6, capsule(pose.hips[0], j[6], lw)),
        (7, capsule(pose.hips[1], j[7], lw)),
        (3, box(j[3], pose.pelvis_bottom + (pose.pelvis_bottom - j[3]) * 0.3, half)),
        (2, box(j[1], j[3], half)),
        (4, capsule(pose.shoulders[0], j[4], lw)),
        (5, capsule(pose.shoulders[1], j[5], lw)),
        (1, disk(j[0], spec.head_radius * s)),
    ]


def render(spec: FigureSpec, pose: Pose, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return (uint8 image [H, W, 3], parsing map [H, W])."""
    pr, pc = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    parsing = np.zeros((size, size), dtype=np.int64)
    image = np.broadcast_to(spec.colors[0], (size, size, 3)).copy()
    for label, inside in figure_shapes(spec, pose, size):
        mask, u, v = inside(pr, pc)
        ang = spec.stripe_angle[label]
        phase = 2 * np.pi * spec.stripe_freq[label] * (u * np.cos(ang) + v * np.sin(ang)) * 4
        shade = 1.0 + spec.stripe_amp[label] * np.sin(phase)
        color = np.clip(spec.colors[label][None, None, :] * shade[..., None], 0, 1)
        image[mask] = color[mask]
        parsing[mask] = label
    return np.round(image * 255).astype(np.uint8), parsing


def heatmaps(joints: np.ndarray, size: int, sigma: Optional[float] = None) -> np.ndarray:
    """Gaussian heatmap per joint, peak 1 at the joint position."""
    sigma = 1.5 * size / 64.0 if sigma is None else sigma
    pr, pc = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    d2 = (pr[None] - joints[:, 0, None, None]) ** 2 + (pc[None] - joints[:, 1, None, None]) ** 2
    return np.exp(-d2 / (2 * sigma * sigma))


def _fits(parsing: np.ndarray) -> bool:
    body = parsing > 0
    inner = np.zeros_like(body)
    inner[MARGIN:-MARGIN, MARGIN:-MARGIN] = True
    return not np.any(body & ~inner)


def _degenerate(spec: FigureSpec, pose: Pose, size: int, parsing: np.ndarray,
                require_all: bool) -> bool:
    if not _fits(parsing):
        return True
    if not np.all((pose.joints >= MARGIN) & (pose.joints <= size - MARGIN)):
        return True
    if require_all:
        min_pixels = max(2, (size // 32) ** 2)
        counts = np.bincount(parsing.ravel(), minlength=8)
        return bool(np.any(counts < min_pixels))
    return False


def _posed(spec: FigureSpec, seed: int, size: int, require_all: bool):
    for attempt in range(MAX_RESAMPLE):
        pose = sample_pose(spec, seed + attempt, size)
        image, parsing = render(spec, pose, size)
        if not _degenerate(spec, pose, size, parsing, require_all):
            if attempt:
                logger.info("pose seed %d degenerate, resampled as %d", seed, seed + attempt)
            return pose, image, parsing
    raise RuntimeError(f"no valid pose found from seed {seed} after {MAX_RESAMPLE} attempts")


def to_float_image(image_u8: np.ndarray) -> np.ndarray:
    """uint8 [H, W, 3] -> float [3, H, W] in [-1, 1]."""
    return image_u8.transpose(2, 0, 1).astype(np.float64) / 127.5 - 1.0


def to_uint8_image(image: np.ndarray) -> np.ndarray:
    """float [3, H, W] in [-1, 1] -> uint8 [H, W, 3]."""
    return np.round((np.clip(image, -1, 1) + 1.0) * 127.5).astype(np.uint8).transpose(1, 2, 0)


def generate(spec_seed: int, pose_a_seed: int, pose_b_seed: int, size: int = 64,
             pair_id: Optional[str] = None) -> SamplePair:
    """Render one character in two poses.  Deterministic in the seeds."""
    spec = FigureSpec.from_seed(spec_seed)
    pose_a, img_a, parse_a = _posed(spec, int(pose_a_seed), size, require_all=True)
    if pose_b_seed == pose_a_seed:
        pose_b, img_b, parse_b = pose_a, img_a, parse_a
    else:
        pose_b, img_b, parse_b = _posed(spec, int(pose_b_seed), size, require_all=False)
    return SamplePair(
        id=pair_id or f"{spec_seed}_{pose_a_seed}_{pose_b_seed}",
        I_S=to_float_image(img_a), I_T=to_float_image(img_b),
        K_S=heatmaps(pose_a.joints, size), K_T=heatmaps(pose_b.joints, size),
        P_S=parse_a, P_T=parse_b,
        spec_seed=int(spec_seed), pose_a_seed=int(pose_a_seed), pose_b_seed=int(pose_b_seed),
        joints_S=pose_a.joints, joints_T=pose_b.joints,
    )


# ------------------------------------------------------------------ file I/O
def write_ppm(path, image_u8: np.ndarray) -> None:
    h, w, _ = image_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image_u8, dtype=np.uint8).tobytes())


def write_pgm(path, gray_u8: np.ndarray) -> None:
    h, w = gray_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(gray_u8, dtype=np.uint8).tobytes())


def _read_netpbm(path, magic: bytes) -> Tuple[np.ndarray, int, int]:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} file, found {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit files are supported")
    return np.frombuffer(raw[pos + 1:], dtype=np.uint8), h, w


def read_ppm(path) -> np.ndarray:
    data, h, w = _read_netpbm(path, b"P6")
    return data[: h * w * 3].reshape(h, w, 3).copy()


def read_pgm(path) -> np.ndarray:
    data, h, w = _read_netpbm(path, b"P5")
    return data[: h * w].reshape(h, w).copy()


# ------------------------------------------------------------------- dataset
@dataclass
class ManifestEntry:
    id: str
    split: str
    spec_seed: int
    pose_a_seed: int
    pose_b_seed: int
    checksum: str = ""

    def line(self) -> str:
        return (f"{self.id} {self.split} {self.spec_seed} {self.pose_a_seed} "
                f"{self.pose_b_seed} {self.checksum}")

    @classmethod
    def parse(cls, line: str) -> "ManifestEntry":
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"bad manifest line: {line!r}")
        return cls(parts[0], parts[1], int(parts[2]), int(parts[3]), int(parts[4]), parts[5])


SPEC_SEED_SPAN = 1 << 30


def split_seeds(n_train: int, n_test: int, master_seed: int) -> List[ManifestEntry]:
    """Train and test characters come from disjoint spec-seed ranges."""
    rng = np.random.default_rng(master_seed)
    base = int(rng.integers(0, SPEC_SEED_SPAN - max(n_train, n_test, 1)))
    entries = []
    for split, n, offset in (("train", n_train, 0), ("test", n_test, SPEC_SEED_SPAN)):
        for i in range(n):
            pa, pb = (int(v) for v in rng.integers(0, 1 << 31, size=2))
            entries.append(ManifestEntry(f"{split}{i:05d}", split, offset + base + i, pa, pb))
    return entries


def pair_files(root, pair_id: str) -> Dict[str, Path]:
    pairs = Path(root) / "pairs"
    return {
        "src": pairs / f"{pair_id}_src.ppm",
        "tgt": pairs / f"{pair_id}_tgt.ppm",
        "src_parse": pairs / f"{pair_id}_src_parse.pgm",
        "tgt_parse": pairs / f"{pair_id}_tgt_parse.pgm",
        "meta": pairs / f"{pair_id}_meta.txt",
    }


def _checksum(files: Dict[str, Path]) -> str:
    h = hashlib.sha256()
    for key in ("src", "tgt", "src_parse", "tgt_parse"):
        h.update(files[key].read_bytes())
    return h.hexdigest()


def write_pair(root, pair: SamplePair) -> str:
    files = pair_files(root, pair.id)
    files["src"].parent.mkdir(parents=True, exist_ok=True)
    write_ppm(files["src"], to_uint8_image(pair.I_S))
    write_ppm(files["tgt"], to_uint8_image(pair.I_T))
    write_pgm(files["src_parse"], pair.P_S.astype(np.uint8))
    write_pgm(files["tgt_parse"], pair.P_T.astype(np.uint8))
    lines = [f"id {pair.id}", f"size {pair.size}", f"spec_seed {pair.spec_seed}",
             f"pose_a_seed {pair.pose_a_seed}", f"pose_b_seed {pair.pose_b_seed}"]
    for tag, joints in (("src", pair.joints_S), ("tgt", pair.joints_T)):
        for name, (r, c) in zip(JOINTS, joints):
            lines.append(f"{tag}_{name} {float(r)!r} {float(c)!r}")
    files["meta"].write_text("\n".join(lines) + "\n")
    return _checksum(files)


def read_pair(root, pair_id: str) -> SamplePair:
    files = pair_files(root, pair_id)
    meta = {}
    for line in files["meta"].read_text().splitlines():
        key, *vals = line.split()
        meta[key] = vals
    size = int(meta["size"][0])
    joints = {tag: np.array([[float(v) for v in meta[f"{tag}_{n}"]] for n in JOINTS])
              for tag in ("src", "tgt")}
    return SamplePair(
        id=pair_id,
        I_S=to_float_image(read_ppm(files["src"])), I_T=to_float_image(read_ppm(files["tgt"])),
        K_S=heatmaps(joints["src"], size), K_T=heatmaps(joints["tgt"], size),
        P_S=read_pgm(files["src_parse"]).astype(np.int64),
        P_T=read_pgm(files["tgt_parse"]).astype(np.int64),
        spec_seed=int(meta["spec_seed"][0]), pose_a_seed=int(meta["pose_a_seed"][0]),
        pose_b_seed=int(meta["pose_b_seed"][0]), joints_S=joints["src"], joints_T=joints["tgt"],
    )


def make_split(n_train: int, n_test: int, master_seed: int, out=None, size: int = 64
               ) -> List[ManifestEntry]:
    """Generate a train/test split; with ``out`` also write files and manifest."""
    entries = split_seeds(n_train, n_test, master_seed)
    if out is None:
        return entries
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    for entry in entries:
        pair = generate(entry.spec_seed, entry.pose_a_seed, entry.pose_b_seed, size, entry.id)
        entry.checksum = write_pair(root, pair)
    (root / "manifest.txt").write_text("".join(e.line() + "\n" for e in entries))
    return entries


def read_manifest(root) -> List[ManifestEntry]:
    path = Path(root) / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    return [ManifestEntry.parse(l) for l in path.read_text().splitlines() if l.strip()]


def verify(root) -> List[str]:
    """Ids whose files no longer match the manifest checksum."""
    return [e.id for e in read_manifest(root) if _checksum(pair_files(root, e.id)) != e.checksum]


def load_split(root, split: str) -> List[SamplePair]:
    return [read_pair(root, e.id) for e in read_manifest(root) if e.split == split]


def generate_split(n_train: int, n_test: int, master_seed: int, size: int = 64
                   ) -> Tuple[List[SamplePair], List[SamplePair]]:
    """In-memory variant of :func:`make_split`."""
    train, test = [], []
    for e in split_seeds(n_train, n_test, master_seed):
        pair = generate(e.spec_seed, e.pose_a_seed, e.pose_b_seed, size, e.id)
        (train if e.split == "train" else test).append(pair)
    return train, test
