"""Graphviz DOT export of per-graph attention scores.

Node attention maps linearly onto a 0-255 gray ink ramp (score 1 = black
fill), edge attention onto pen widths in [0.5, 4.0].
"""

from __future__ import annotations

PEN_MIN = 0.5
PEN_MAX = 4.0


def node_fill(alpha: float) -> str:
    ink = round(255 * alpha)
    level = 255 - ink
    return f"#{level:02x}{level:02x}{level:02x}"


def edge_penwidth(beta: float) -> float:
    return PEN_MIN + beta * (PEN_MAX - PEN_MIN)


def attention_dot(record: dict) -> str:
    """Render an attention record (see model.attention_record) as a digraph."""
    lines = ["digraph attention {", "  node [shape=circle, style=filled];"]
    for entry in record["nodes"]:
        alpha = entry["alpha_c"]
        font = "#ffffff" if alpha > 0.5 else "#000000"
        lines.append(f'  {entry["node"]} [fillcolor="{node_fill(alpha)}",'
                     f' fontcolor="{font}"];')
    for entry in record["edges"]:
        width = edge_penwidth(entry["beta_c"])
        lines.append(f'  {entry["src"]} -> {entry["dst"]} [penwidth={width:.6f}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
