from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DatagenConfig:
    """Geometry, rendering and sampling knobs for the spelling environment.

    Positions and extents are fractions of the frame side, so the same config
    renders at any resolution.
    """

    resolution: int = 64
    supersample: int = 4
    n_tiles: int = 6
    # board (1x4 strip) nominal pose and jitter bound
    board_x: float = 0.5
    board_y: float = 0.80
    board_width: float = 0.84
    board_height: float = 0.22
    board_jitter: float = 0.05
    # staging region for unplaced tiles: (x0, y0, x1, y1)
    staging_region: tuple[float, float, float, float] = (0.12, 0.12, 0.88, 0.52)
    tile_min_distance: float = 0.2
    max_rotation: float = 0.6
    glyph_size: float = 0.18
    background_rgb: tuple[int, int, int] = (38, 38, 44)
    board_rgb: tuple[int, int, int] = (96, 96, 104)
    grid_rgb: tuple[int, int, int] = (190, 190, 190)
    alphabet: str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    # dataset multiplicity
    videos_per_train_word: int = 2
    videos_per_test_word: int = 1
    # splits
    train_ratio: float = 0.9
    unseen_letters: tuple[str, ...] = ("J", "Q", "X", "Z")
    min_train_words: int = 10
    min_test_words: int = 3
    replay_check_fraction: float = 1.0

    def __post_init__(self) -> None:
        if not 0 <= self.board_jitter <= 0.1:
            raise ValueError("board_jitter must lie in [0, 0.1] of the frame extent")
        if self.resolution % 16:
            raise ValueError("resolution must be a multiple of 16")
        if self.n_tiles < 4:
            raise ValueError("a scene needs at least the 4 word tiles")
        if not 0 < self.train_ratio < 1:
            raise ValueError("train_ratio must be in (0, 1)")

    def to_json(self) -> dict:
        return {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in self.__dict__.items()
        }

    @classmethod
    def from_json(cls, data: dict) -> "DatagenConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown datagen config keys: {sorted(unknown)}")
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()}
        return cls(**kwargs)
