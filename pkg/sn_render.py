"""
Trajectory Rendering
Static top-down SVG of one trajectory log: map, agent path graded by time, pedestrians, goal, encounters
"""

import io
import logging
from typing import Dict, Optional, Sequence

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from sn_encounters import Encounter, EncounterClass
from sn_simcore import TrajectoryLog
from sn_trajectory import atomic_write_text
from sn_world import OccupancyGrid

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "socnav-lab"
AGENT_GID = "agent-poses"

CLASS_COLORS: Dict[EncounterClass, str] = {
    EncounterClass.BLIND_CORNER: "tab:red",
    EncounterClass.FRONTAL: "tab:orange",
    EncounterClass.INTERSECTION: "tab:purple",
    EncounterClass.FOLLOWING: "tab:green",
    EncounterClass.OTHER: "tab:gray",
}


def _draw_map(ax, grid: OccupancyGrid) -> None:
    # Row 0 is the top of the map, so the raster is drawn with origin at the upper left.
    ax.imshow(grid.cells, cmap="Greys", vmin=0, vmax=1, origin="upper", interpolation="nearest",
              extent=(0.0, grid.size_x, 0.0, grid.size_y), gid="map")
    ax.set_xlim(0.0, grid.size_x)
    ax.set_ylim(0.0, grid.size_y)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")


def render_figure(log: TrajectoryLog, grid: OccupancyGrid,
                  encounters: Optional[Sequence[Encounter]] = None) -> Figure:
    fig = Figure(figsize=(7, 7))
    FigureCanvasSVG(fig)
    ax = fig.add_subplot(1, 1, 1)
    _draw_map(ax, grid)
    if not log.records:
        ax.set_title(f"{grid.map_id} (empty log)")
        return fig

    agent = log.agent_positions()
    for i in range(log.n_pedestrians):
        peds = log.pedestrian_positions(i)
        ax.plot(peds[:, 0], peds[:, 1], color="tab:blue", linewidth=1.0, alpha=0.6,
                gid=f"pedestrian-{i}")
        ax.plot(peds[-1, 0], peds[-1, 1], "o", color="tab:blue", markersize=4, gid=f"pedestrian-{i}-end")

    for n, enc in enumerate(encounters or ()):
        color = CLASS_COLORS.get(enc.clazz, CLASS_COLORS[EncounterClass.OTHER])
        segment = agent[enc.t1:enc.t2 + 1]
        label = enc.clazz.value if enc.clazz else EncounterClass.OTHER.value
        ax.plot(segment[:, 0], segment[:, 1], color=color, linewidth=6.0, alpha=0.35,
                solid_capstyle="round", gid=f"encounter-{n}-{label}")

    times = [r.t for r in log.records]
    ax.scatter(agent[:, 0], agent[:, 1], c=times, cmap="viridis", s=6, zorder=3, gid=AGENT_GID)
    goal = log.episode.goal
    ax.plot(goal[0], goal[1], marker="*", color="gold", markeredgecolor="black", markersize=14,
            zorder=4, gid="goal")
    ax.set_title(f"{grid.map_id} | {log.policy_name or 'policy'} | {log.status.value} at t={log.t_end}")
    return fig


def render_svg(log: TrajectoryLog, grid: OccupancyGrid,
               encounters: Optional[Sequence[Encounter]] = None) -> str:
    """SVG text; identical input gives identical bytes"""
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "path"}):
        fig = render_figure(log, grid, encounters)
        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def render_log(log: TrajectoryLog, grid: OccupancyGrid, path: str,
               encounters: Optional[Sequence[Encounter]] = None) -> str:
    atomic_write_text(path, render_svg(log, grid, encounters))
    logger.info(f"Rendered {len(log.records)} poses to {path}")
    return path
