"""
Static SVG figures from a directory of run logs: one trajectory plot per log with the lane boundaries and the
obstacle, and one control plot overlaying the steering signals of every log in the directory.
"""
import glob
import logging
import os
from typing import NamedTuple

import matplotlib as mpl

mpl.use('Agg')

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Circle

from .errors import ConfigError
from .objects.sim_engine import SimLog

log = logging.getLogger(__name__)

PLOT_STYLE = {
    'font.size': 9,
    'axes.labelsize': 9,
    'legend.fontsize': 8,
    'xtick.labelsize': 8,
    'ytick.labelsize': 8,
    'figure.figsize': (7.0, 3.0),
    'savefig.bbox': 'tight',
    'svg.hashsalt': 'pysafelane',
}


class PlotFile(NamedTuple):
    path: str
    kind: str
    markers: dict


def _centerline(sim_log):
    e1, psi_r = sim_log.column('e1'), sim_log.column('psi_r')
    X, Y = sim_log.column('X'), sim_log.column('Y')
    return X + e1 * np.sin(psi_r), Y - e1 * np.cos(psi_r), psi_r


def plot_trajectory(sim_log, name, path):
    """Vehicle path in the plane, lane edges, obstacle circle and the sample where h_r is smallest."""
    meta = sim_log.meta
    half = 0.5 * meta.get('lane_width', 3.7)
    cx, cy, psi = _centerline(sim_log)
    nx, ny = -np.sin(psi), np.cos(psi)
    h_r = sim_log.column('h_r')
    i_min = int(np.argmin(h_r))
    X, Y = sim_log.column('X'), sim_log.column('Y')

    fig, ax = plt.subplots()
    ax.plot(cx, cy, color='0.6', linestyle='--', linewidth=0.8, label='centerline')
    for sign in (1.0, -1.0):
        ax.plot(cx + sign * half * nx, cy + sign * half * ny, color='k', linewidth=0.8)
    e_v = meta.get('e_v') or 0.0
    if e_v > 0:
        ax.plot(cx + (half + e_v) * nx, cy + (half + e_v) * ny, color='k', linestyle=':', linewidth=0.8,
                label='expanded lane')
    obstacle = meta.get('obstacle')
    if obstacle:
        ax.add_patch(Circle((obstacle['X'], obstacle['Y']), obstacle['r'], facecolor='0.75', edgecolor='k',
                            label='obstacle'))
    ax.plot(X, Y, color='C0', linewidth=1.2, label=name)
    ax.plot([X[i_min]], [Y[i_min]], marker='v', color='C3', linestyle='none',
            label='min h_r = {0:.4g} m'.format(h_r[i_min]))
    ax.set_xlabel('X [m]')
    ax.set_ylabel('Y [m]')
    ax.legend(loc='best')
    fig.savefig(path, format='svg')
    plt.close(fig)
    t_min = float(sim_log.column('t')[i_min])
    return PlotFile(path, 'trajectory', {'min_h_r': float(h_r[i_min]), 't_min_h_r': t_min})


def plot_controls(logs, path):
    """Steering of every log over time; overrides are marked where the filter changed the MPC command."""
    fig, ax = plt.subplots()
    markers = {}
    for n, (name, sim_log) in enumerate(sorted(logs.items())):
        t = sim_log.column('t')
        u_mpc, u_safe = sim_log.column('u_mpc'), sim_log.column('u_safe')
        color = 'C{0}'.format(n % 10)
        ax.plot(t, np.degrees(u_mpc), color=color, linestyle='--', linewidth=0.8, label='{0} u_mpc'.format(name))
        ax.plot(t, np.degrees(sim_log.column('u_applied')), color=color, linewidth=1.2,
                label='{0} u_applied'.format(name))
        override = np.abs(u_safe - u_mpc) > 1e-9
        if override.any():
            ax.plot(t[override], np.degrees(u_safe[override]), color=color, marker='.', markersize=1.5,
                    linestyle='none')
        for key, style in (('t_obs', ':'), ('t_pass', '-.')):
            value = sim_log.meta.get(key)
            if value is not None:
                ax.axvline(value, color=color, linestyle=style, linewidth=0.6)
        markers[name] = float(np.abs(u_safe - u_mpc).max())
    ax.set_xlabel('t [s]')
    ax.set_ylabel('steering [deg]')
    ax.legend(loc='best')
    fig.savefig(path, format='svg')
    plt.close(fig)
    return PlotFile(path, 'control', {'peak_override': markers})


def emit_plots(log_dir, out_dir=None):
    """
    Reads every CSV log in `log_dir` and writes the figures into `out_dir` (default: log_dir). All logs are parsed
    before anything is written, so a malformed or empty log leaves no partial output.
    """
    out_dir = out_dir or log_dir
    paths = sorted(glob.glob(os.path.join(log_dir, '*.csv')))
    if not paths:
        raise ConfigError('no CSV logs in {0}'.format(log_dir))
    logs = {}
    for path in paths:
        sim_log = SimLog.from_csv(path)
        if not len(sim_log):
            raise ConfigError('log {0} has no rows'.format(path))
        logs[os.path.splitext(os.path.basename(path))[0]] = sim_log

    os.makedirs(out_dir, exist_ok=True)
    written = []
    with mpl.rc_context(PLOT_STYLE):
        for name, sim_log in sorted(logs.items()):
            written.append(plot_trajectory(sim_log, name, os.path.join(out_dir, 'trajectory_{0}.svg'.format(name))))
        written.append(plot_controls(logs, os.path.join(out_dir, 'controls.svg')))
    log.info('wrote %d plots to %s', len(written), out_dir)
    return written
