"""Chart creation utilities."""
from pathlib import Path
from typing import Union

import pandas as pd
import plotly.graph_objects as go

from ..analytics.surface import SurfaceResult
from ..utils.helpers import atomic_write_text


def create_surface_chart(surface: SurfaceResult, title: str = "Loss Surface") -> go.Figure:
    directions = surface.meta.get("directions", "d1,d2").split(",")
    fig = go.Figure()
    # rows index the first direction, so it runs along y
    fig.add_trace(go.Contour(z=surface.grid, x=surface.b, y=surface.a, colorscale="Viridis",
                             contours=dict(showlabels=True), name="loss"))
    fig.add_trace(go.Scatter(x=[0.0], y=[0.0], mode="markers", name="center",
                             marker=dict(color="red", size=9, symbol="x")))
    fig.update_layout(title=title, xaxis_title=directions[-1], yaxis_title=directions[0],
                      template="plotly_white", height=500)
    return fig


def create_training_chart(metrics: pd.DataFrame, title: str = "Training Curves") -> go.Figure:
    robust = next((c for c in metrics.columns if c.startswith("robust_acc")), None)
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=metrics["epoch"], y=metrics["clean_acc"], mode="lines+markers",
                             name="clean accuracy", line=dict(color="#1f77b4", width=3)))
    if robust is not None:
        fig.add_trace(go.Scatter(x=metrics["epoch"], y=metrics[robust], mode="lines+markers",
                                 name=robust.replace("_", " "), line=dict(color="#d62728", width=3)))
    for column, color in (("loss_nce", "#2ca02c"), ("loss_cl", "#ff7f0e"), ("loss_ce", "#9467bd")):
        if column in metrics and metrics[column].abs().sum() > 0:
            fig.add_trace(go.Scatter(x=metrics["epoch"], y=metrics[column], mode="lines", name=column,
                                     line=dict(color=color, dash="dot"), yaxis="y2"))
    fig.update_layout(title=title, xaxis_title="Epoch", yaxis=dict(title="Accuracy", range=[0, 1]),
                      yaxis2=dict(title="Loss", overlaying="y", side="right"),
                      template="plotly_white", height=500)
    return fig


def write_chart(fig: go.Figure, path: Union[str, Path]) -> Path:
    """Standalone HTML, plotly.js loaded from the CDN."""
    return atomic_write_text(path, fig.to_html(include_plotlyjs="cdn", full_html=True))
