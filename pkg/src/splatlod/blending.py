"""Runtime chunk selection, two-chunk opacity blending, and the streaming
load/unload state machine.

Rendering always uses the union of the two resident chunks' active sets.
Splats exclusive to the nearer chunk are modulated by the clamped projection
parameter t, splats exclusive to the other chunk by (1 - t), and the
intersection stays at full opacity, so walking between chunk centers fades
the symmetric difference linearly instead of popping it.

The secondary chunk is only exchanged once the camera has passed the
primary's center plane (t reaches 1): at that instant the outgoing chunk's
exclusive splats are already invisible and the incoming ones enter at
weight 0, so a delayed background load cannot cause artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lod import project_selection
from .raster import RasterConfig, rasterize
from .scene import Camera, ChunkPlan, LodLevel


@dataclass(frozen=True)
class StreamEvent:
    kind: str  # "load" | "unload" | "swap_primary"
    chunk_id: int
    camera_position: tuple

    def __post_init__(self):
        if self.kind not in ("load", "unload", "swap_primary"):
            raise ValueError(f"unknown stream event kind {self.kind!r}")


@dataclass(frozen=True)
class BlendState:
    """Residency snapshot: at most two loaded chunks plus the blend factor.

    ``primary_id`` is the nearer resident chunk (the one whose exclusive
    splats carry factor t); ``t`` is the clamp of ``t_bar`` to [0, 1].
    """

    loaded_chunks: tuple      # 1 or 2 distinct chunk ids
    primary_id: int
    t_bar: float
    t: float

    def __post_init__(self):
        if not 1 <= len(self.loaded_chunks) <= 2:
            raise ValueError("exactly one or two chunks may be resident")
        if len(set(self.loaded_chunks)) != len(self.loaded_chunks):
            raise ValueError("resident chunk ids must be distinct")
        if self.primary_id not in self.loaded_chunks:
            raise ValueError("primary chunk must be resident")

    @property
    def secondary_id(self) -> Optional[int]:
        others = [c for c in self.loaded_chunks if c != self.primary_id]
        return others[0] if others else None


@dataclass(frozen=True)
class ActiveSelection:
    """Per-level index sets with per-splat opacity modulation factors."""

    sets: tuple         # L arrays of int64 indices
    modulations: tuple  # L arrays of floats in [0, 1]

    def total(self) -> int:
        return int(sum(len(s) for s in self.sets))


def nearest_two_chunks(plan: ChunkPlan, position: np.ndarray) -> tuple[int, Optional[int]]:
    """Ids of the two closest chunk centers; ties go to the lower id."""
    c = np.asarray(position, dtype=np.float64)
    dist = np.linalg.norm(plan.centers - c, axis=1)
    order = np.lexsort((np.arange(plan.n_chunks), dist))
    if plan.n_chunks == 1:
        return int(order[0]), None
    return int(order[0]), int(order[1])


def blend_factor(position: np.ndarray, m_f: np.ndarray, m_o: np.ndarray) -> tuple[float, float]:
    """Normalized projection of (c - m_o) onto the center line, then clamped.

    t_bar = (c - m_o) . (m_f - m_o) / |m_o - m_f|^2; t = clamp(t_bar, 0, 1).
    """
    c = np.asarray(position, float)
    f = np.asarray(m_f, float)
    o = np.asarray(m_o, float)
    d2 = float(np.dot(f - o, f - o))
    if d2 <= 0:
        raise ValueError("blend_factor needs distinct chunk centers")
    t_bar = float(np.dot(c - o, f - o) / d2)
    return t_bar, min(1.0, max(0.0, t_bar))


def compose_active(plan: ChunkPlan, levels: Sequence[LodLevel], m_f_id: int,
                   m_o_id: Optional[int], t: float) -> ActiveSelection:
    """Union of two chunks' active sets with opacity modulation.

    Intersection splats keep factor 1; splats exclusive to the primary get
    t, exclusive to the other chunk (1 - t). With a single resident chunk
    the selection is its sets at full opacity.
    """
    if not 0 <= m_f_id < plan.n_chunks:
        raise ValueError(f"chunk {m_f_id} is not in the plan")
    if m_o_id is None:
        sets = plan.active_sets[m_f_id]
        return ActiveSelection(tuple(sets), tuple(np.ones(len(s)) for s in sets))
    if not 0 <= m_o_id < plan.n_chunks:
        raise ValueError(f"chunk {m_o_id} is not in the plan")
    if m_o_id == m_f_id:
        raise ValueError("blending needs two distinct chunks")
    sets, mods = [], []
    for lvl in range(plan.n_levels):
        a = plan.active_sets[m_f_id][lvl]
        b = plan.active_sets[m_o_id][lvl]
        union = np.union1d(a, b)
        in_a = np.isin(union, a, assume_unique=True)
        in_b = np.isin(union, b, assume_unique=True)
        mod = np.where(in_a & in_b, 1.0, np.where(in_a, t, 1.0 - t))
        sets.append(union)
        mods.append(mod)
    return ActiveSelection(tuple(sets), tuple(mods))


def render_selection(levels: Sequence[LodLevel], selection: ActiveSelection,
                     camera: Camera, raster_cfg: RasterConfig = RasterConfig(),
                     need_image: bool = True):
    batch = project_selection(levels, selection.sets, camera, raster_cfg,
                              modulations=selection.modulations, shade=need_image)
    return rasterize(batch, camera, raster_cfg, need_image=need_image)


def _state_for(plan: ChunkPlan, resident: tuple, position: np.ndarray) -> BlendState:
    c = np.asarray(position, float)
    if len(resident) == 1:
        return BlendState(resident, resident[0], 1.0, 1.0)
    dist = [float(np.linalg.norm(plan.centers[j] - c)) for j in resident]
    order = sorted(range(2), key=lambda i: (dist[i], resident[i]))
    f, o = resident[order[0]], resident[order[1]]
    t_bar, t = blend_factor(c, plan.centers[f], plan.centers[o])
    return BlendState((f, o), f, t_bar, t)


def stream_step(state: Optional[BlendState], plan: ChunkPlan,
                position: np.ndarray) -> tuple[BlendState, list[StreamEvent]]:
    """Advance the residency state machine for a new camera position.

    Emits load/unload/swap_primary events; never more than two chunks stay
    resident, and the secondary is replaced only when the outgoing chunk's
    exclusive splats have faded to zero (t_bar >= 1).
    """
    c = np.asarray(position, dtype=np.float64)
    pos_t = tuple(float(v) for v in c)
    events: list[StreamEvent] = []
    n1, n2 = nearest_two_chunks(plan, c)

    if state is None:
        resident = (n1,) if n2 is None else (n1, n2)
        for j in resident:
            events.append(StreamEvent("load", j, pos_t))
        return _state_for(plan, resident, c), events

    resident = state.loaded_chunks
    if n1 not in resident:
        # Camera jumped outside the resident pair: hard reload.
        for j in resident:
            events.append(StreamEvent("unload", j, pos_t))
        resident = (n1,) if n2 is None else (n1, n2)
        for j in resident:
            events.append(StreamEvent("load", j, pos_t))
        new_state = _state_for(plan, resident, c)
        if new_state.primary_id != state.primary_id:
            events.append(StreamEvent("swap_primary", new_state.primary_id, pos_t))
        return new_state, events

    new_state = _state_for(plan, resident, c)
    if new_state.primary_id != state.primary_id:
        events.append(StreamEvent("swap_primary", new_state.primary_id, pos_t))

    # Exchange the secondary once it is fully faded and a closer one exists.
    sec = new_state.secondary_id
    if (sec is not None and new_state.t_bar >= 1.0
            and n2 is not None and n2 != sec and n2 != new_state.primary_id):
        events.append(StreamEvent("unload", sec, pos_t))
        events.append(StreamEvent("load", n2, pos_t))
        new_state = _state_for(plan, (new_state.primary_id, n2), c)
    return new_state, events


def render_blend_state(state: BlendState, plan: ChunkPlan,
                       levels: Sequence[LodLevel], camera: Camera,
                       raster_cfg: RasterConfig = RasterConfig(),
                       need_image: bool = True):
    selection = compose_active(plan, levels, state.primary_id,
                               state.secondary_id, state.t)
    return render_selection(levels, selection, camera, raster_cfg, need_image)
