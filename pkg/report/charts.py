import json

import pandas as pd
import plotly.graph_objects as go
import plotly.io as pio


#--------------------------------------------------------------------------------------------------------------------------


green = "#429163"
light_grey = '#717171'
series_colors = ['#429163', '#3A606E', '#AAAE8E', '#717171', '#C5C7B7']

FEASIBILITY_AXES = {
    "c_vs_k": ("C", "k", "N"),
    "n_vs_c": ("N", "C", "k"),
    "n_vs_k": ("N", "k", "C"),
}


#--------------------------------------------------------------------------------------------------------------------------


def _style(fig, x_title, y_title, title=""):
    fig.update_layout(
        title=title,
        autosize=True,
        margin=dict(l=60, r=8, t=40, b=40),
        plot_bgcolor="rgba(0,0,0,0)",
        paper_bgcolor="rgba(0,0,0,0)",
        xaxis=dict(title=x_title, showgrid=False, zeroline=False),
        yaxis=dict(title=y_title, showgrid=True, gridcolor=light_grey, zeroline=False),
    )
    return fig


def create_feasibility_chart(rows, layout):
    """One line per fixed value of the third variable, for a feasibility layout."""
    if not rows:
        return go.Figure()
    x, y, group = FEASIBILITY_AXES[layout]
    frame = pd.DataFrame(rows)
    fig = go.Figure()
    for i, (value, part) in enumerate(frame.groupby(group, sort=True)):
        fig.add_trace(
            go.Scatter(
                x=part[x].tolist(),
                y=part[y].tolist(),
                mode="lines+markers",
                name=f"{group}={value}",
                line=dict(color=series_colors[i % len(series_colors)], shape="hv"),
                hovertemplate=f"{x}=%{{x}}<br>{y}=%{{y}}<extra></extra>",
            )
        )
    return _style(fig, x, f"largest {y}")


def create_partial_curve_chart(rows):
    if not rows:
        return go.Figure()
    fig = go.Figure(
        go.Scatter(
            x=[r["D"] for r in rows],
            y=[r["p_D"] for r in rows],
            mode="lines",
            line=dict(color=green),
            hovertemplate="D=%{x}<br>p_D=%{y:.4f}<extra></extra>",
        )
    )
    return _style(fig, "D", "p_D")


def create_sweep_chart(frame, variable):
    """Clean and attacked mean return with one standard deviation error bars."""
    if frame is None or frame.empty:
        return go.Figure()
    fig = go.Figure()
    for i, kind in enumerate(("clean", "attacked")):
        fig.add_trace(
            go.Scatter(
                x=frame[variable].tolist(),
                y=frame[f"{kind}_mean"].tolist(),
                error_y=dict(type="data", array=frame[f"{kind}_std"].tolist(), visible=True),
                mode="lines+markers",
                name=kind,
                line=dict(color=series_colors[i]),
            )
        )
    return _style(fig, variable, "return")


def create_bias_chart(scores, flagged=()):
    if not scores:
        return go.Figure()
    flagged = set(flagged)
    fig = go.Figure(
        go.Bar(
            x=[s["channel"] for s in scores],
            y=[s["beta"] for s in scores],
            marker_color=[green if s["channel"] in flagged else light_grey for s in scores],
            hovertemplate="channel %{x}: %{y:.3f}<extra></extra>",
        )
    )
    fig.update_layout(showlegend=False)
    return _style(fig, "channel", "action bias")


def figure_payload(fig):
    """Plot-data sidecar content: the figure as plain JSON-compatible data."""
    return json.loads(pio.to_json(fig, validate=False))
