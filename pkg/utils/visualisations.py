from typing import Optional

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from .metrics import MetricsReport, xt_profile
from .phantom import DynamicImage, GridSpec
from .recon import TrainLog
from .subspace_init import SubspaceModel
from .trajectory import SpokeSet

TEXT_COLOR = '#5d4037'
METHOD_COLORS = {
    'proposed': '#2d5016',
    'grasp_20': '#4a7c29',
    'grasp_40': '#6b9e47',
    'nufft_20': '#8d6e63',
    'nufft_40': '#a1887f',
}
PHASE_COLORS = {
    'init_spatial': '#6b9e47',
    'init_temporal': '#a1887f',
    'finetune_frozen': '#f9a825',
    'finetune': '#2d5016',
}


def _base_layout(fig: go.Figure, title: str, height: int = 380) -> go.Figure:
    fig.update_layout(
        title=dict(text=title, font=dict(size=18, family='Inter', weight=600, color=TEXT_COLOR)),
        paper_bgcolor="white",
        plot_bgcolor="white",
        font=dict(family="Inter", size=13, color=TEXT_COLOR),
        height=height,
        margin=dict(l=50, r=30, t=60, b=50),
    )
    return fig


def create_frame_heatmap(frame: np.ndarray, grid: GridSpec, title: str = "Frame",
                         zmax: Optional[float] = None) -> go.Figure:
    """Magnitude image in mm coordinates; y runs upwards."""
    axis = grid.axis()
    magnitude = np.abs(frame)

    fig = go.Figure(go.Heatmap(
        x=axis,
        y=axis,
        z=magnitude.T,
        zmin=0,
        zmax=zmax if zmax is not None else float(magnitude.max()),
        colorscale='gray',
        colorbar=dict(title='|m|'),
        hovertemplate='x %{x:.1f} mm<br>y %{y:.1f} mm<br>|m| %{z:.3f}<extra></extra>',
    ))
    _base_layout(fig, title, height=420)
    fig.update_xaxes(title="x (mm)", showgrid=False)
    fig.update_yaxes(title="y (mm)", showgrid=False, scaleanchor="x")
    return fig


def create_xt_profile_chart(dyn: DynamicImage, row: int, title: str = "x-t profile") -> go.Figure:
    """Magnitude along one image row (x) against frame time (t)."""
    profile = xt_profile(dyn, row)

    fig = go.Figure(go.Heatmap(
        x=dyn.times,
        y=dyn.grid.axis(),
        z=profile,
        colorscale='gray',
        zmin=0,
        hovertemplate='t %{x:.3f} s<br>x %{y:.1f} mm<br>|m| %{z:.3f}<extra></extra>',
    ))
    _base_layout(fig, f"{title} (y = {dyn.grid.axis()[row]:.1f} mm)")
    fig.update_xaxes(title="t (s)")
    fig.update_yaxes(title="x (mm)")
    return fig


def create_trajectory_chart(spokes: SpokeSet, n_show: int = 20) -> go.Figure:
    """First spokes of the golden-angle sequence in k-space."""
    fig = go.Figure()
    k_max = spokes.m / (2 * spokes.readout_fov)
    shown = min(n_show, spokes.n_spokes)

    for i in range(shown):
        theta = spokes.angles[i]
        fig.add_trace(go.Scatter(
            x=[-k_max * np.cos(theta), k_max * np.cos(theta)],
            y=[-k_max * np.sin(theta), k_max * np.sin(theta)],
            mode='lines',
            line=dict(color='#4a7c29', width=2),
            opacity=0.3 + 0.7 * (i + 1) / shown,
            hovertemplate=(
                f'<b>Spoke {i}</b><br>angle {np.degrees(theta) % 180:.2f}°<br>'
                f't = {spokes.times[i] * 1e3:.1f} ms<extra></extra>'
            ),
            showlegend=False,
        ))

    _base_layout(fig, f"First {shown} spokes", height=420)
    fig.update_xaxes(title="kx (1/mm)", range=[-1.1 * k_max, 1.1 * k_max], gridcolor='#e0e0e0')
    fig.update_yaxes(title="ky (1/mm)", range=[-1.1 * k_max, 1.1 * k_max], gridcolor='#e0e0e0',
                     scaleanchor="x")
    return fig


def create_kspace_chart(spokes: SpokeSet, coil: int = 0) -> go.Figure:
    """log magnitude of every spoke for one coil: readout along x, acquisition order along y."""
    magnitude = np.log10(np.abs(spokes.samples[:, coil, :]) + 1e-12)

    fig = go.Figure(go.Heatmap(
        z=magnitude,
        colorscale='Greens',
        colorbar=dict(title='log10|y|'),
        hovertemplate='sample %{x}<br>spoke %{y}<br>log10|y| %{z:.2f}<extra></extra>',
    ))
    _base_layout(fig, f"k-space samples, coil {coil}", height=420)
    fig.update_xaxes(title="readout sample")
    fig.update_yaxes(title="spoke")
    return fig


def create_basis_figure(model: SubspaceModel, n_show: int = 4, title: str = "Bases") -> go.Figure:
    """First spatial bases (magnitude) over their temporal curves (real part)."""
    n_show = min(n_show, model.k)
    fig = make_subplots(rows=2, cols=n_show, row_heights=[0.65, 0.35], vertical_spacing=0.08,
                        subplot_titles=[f"basis {j + 1}" for j in range(n_show)] + [""] * n_show)

    for j in range(n_show):
        fig.add_trace(go.Heatmap(
            z=np.abs(model.spatial[:, :, j]).T,
            colorscale='gray',
            showscale=False,
        ), row=1, col=j + 1)
        fig.add_trace(go.Scatter(
            x=model.frame_times,
            y=model.temporal[:, j].real,
            mode='lines',
            line=dict(color='#4a7c29', width=2),
            showlegend=False,
            hovertemplate='t %{x:.3f} s<br>%{y:.3f}<extra></extra>',
        ), row=2, col=j + 1)
        fig.update_yaxes(scaleanchor="x" if j == 0 else f"x{j + 1}", showticklabels=False, row=1, col=j + 1)
        fig.update_xaxes(showticklabels=False, row=1, col=j + 1)

    _base_layout(fig, title, height=480)
    return fig


def create_loss_chart(log: TrainLog, log_scale: bool = True, ablation: Optional[TrainLog] = None) -> go.Figure:
    """
    Loss per iteration, one trace per training phase.

    `ablation` is the log of a run without initialisation; its phases are drawn dashed.
    """
    fig = go.Figure()
    runs = [(log, "", "solid")]
    if ablation is not None:
        runs.append((ablation, " (no init)", "dash"))

    for run, suffix, dash in runs:
        for phase, part in run.to_frame().groupby('phase', sort=False):
            name = f"{phase}{suffix}"
            fig.add_trace(go.Scatter(
                x=part['iteration'],
                y=part['loss'],
                mode='lines',
                name=name,
                line=dict(color=PHASE_COLORS.get(phase, '#8d6e63'), width=3, dash=dash),
                hovertemplate=f'<b>{name}</b><br>iteration %{{x}}<br>loss %{{y:.4g}}<extra></extra>',
            ))

    _base_layout(fig, "Training loss")
    fig.update_layout(hovermode='x unified', legend=dict(orientation="h", yanchor="bottom", y=1.02,
                                                         xanchor="right", x=1))
    fig.update_xaxes(title="iteration", gridcolor='#e0e0e0')
    fig.update_yaxes(title="loss", type='log' if log_scale else 'linear', gridcolor='#e0e0e0')
    return fig


def create_metric_bar(report: MetricsReport, metric: str = 'snr_db') -> go.Figure:
    """Grouped bars of one metric, methods side by side for each cardiac phase."""
    df = report.to_frame()
    df = df[pd.notna(df[metric])]
    fig = go.Figure()

    for method, part in df.groupby('method', sort=False):
        fig.add_trace(go.Bar(
            name=method,
            x=part['phase'],
            y=part[metric],
            marker_color=METHOD_COLORS.get(method, '#a1887f'),
            text=[f"{v:.3g}" for v in part[metric]],
            textposition='outside',
            textfont=dict(size=13, weight=700, color=TEXT_COLOR),
            hovertemplate=f'<b>{method}</b><br>%{{x}}: %{{y:.4g}}<extra></extra>',
            cliponaxis=False,
        ))

    _base_layout(fig, metric)
    fig.update_layout(
        barmode='group',
        legend=dict(orientation="h", yanchor="top", y=1.02, xanchor="right", x=1.01,
                    bgcolor="#dfcfcb", bordercolor='#e0e0e0', borderwidth=1),
    )
    fig.update_xaxes(showgrid=False, showline=True, linewidth=2, linecolor='#e0e0e0')
    fig.update_yaxes(showgrid=True, gridwidth=1, gridcolor='#e0e0e0')
    return fig
