'''
Outcome matrices as heatmaps: SVG through a jinja2 template, PNG
through matplotlib.
'''

from aebsim._metadata import __version__ # noqa: F401

import logging

import numpy as np
import jinja2

OUTCOME_COLORS = {
  "Safe": "#4daf4a",
  "StoppedTooSoon": "#ff7f00",
  "ConstraintViolated": "#984ea3",
  "Crash": "#e41a1c",
  "ModelError": "#999999",
}

OUTCOME_SHORT = { "Safe": "S", "StoppedTooSoon": "STS", "ConstraintViolated": "CV",
                  "Crash": "C", "ModelError": "ERR" }

svg_template_env = jinja2.Environment(
  loader=jinja2.PackageLoader('aebsim', package_path='static'),
  autoescape=True)


def center_coordinates_to_edges(x):
  """Given a list of 1D pixel coordinates, return the corresponding
     pixel edge coordinates.
  """
  x = np.asarray(x, dtype=float)
  edges = np.zeros(len(x) + 1) + np.nan
  dx = np.diff(x) if len(x)>1 else np.array([1.])
  edges[0] = x[0] - dx[0]/2 # <-- leftmost edge
  edges[1:-1] = x[:-1] + dx/2 # <-- all the right edges, except the last one
  edges[-1] = x[-1] + dx[-1]/2 # <-- rightmost edge
  return edges


def _as_matrix(tokens):
  m = np.asarray(tokens, dtype=object)
  if m.ndim == 1: m = m[np.newaxis, :]
  assert m.ndim == 2, f"Heatmaps need one or two axes, got {m.ndim}."
  return m


def outcome_heatmap_svg(tokens, x_values, y_values, x_name="", y_name="", title="",
                        scenario_hash="", cell_size=40):
  '''SVG document (str) with one colored rect of class "cell" per matrix
     element. tokens has shape (len(y_values), len(x_values)); row 0 is
     drawn at the top.'''
  m = _as_matrix(tokens)
  assert m.shape == (len(y_values), len(x_values)), f"Matrix shape {m.shape} does not match the axes."

  plot_x, plot_y = 90, 34
  plot_width, plot_height = cell_size*m.shape[1], cell_size*m.shape[0]
  width, height = plot_x + plot_width + 20, plot_y + plot_height + 70

  cells = [ { "x": plot_x + j*cell_size, "y": plot_y + i*cell_size,
              "color": OUTCOME_COLORS.get(m[i, j], "#ffffff"),
              "short": OUTCOME_SHORT.get(m[i, j], str(m[i, j])),
              "tooltip": f"{y_name}={y_values[i]}, {x_name}={x_values[j]}: {m[i, j]}" }
            for i in range(m.shape[0]) for j in range(m.shape[1]) ]
  x_labels = [ { "pos": plot_x + (j + 0.5)*cell_size, "y": plot_y + plot_height + 16, "text": str(v) }
               for j, v in enumerate(x_values) ]
  y_labels = [ { "x": plot_x - 6, "pos": plot_y + (i + 0.5)*cell_size + 4, "text": str(v) }
               for i, v in enumerate(y_values) ]
  legend = [ { "x": 30 + k*130, "color": c, "text": t } for k, (t, c) in enumerate(OUTCOME_COLORS.items()) ]

  return svg_template_env.get_template('heatmap-template.svg').render(
    width=width, height=height, cell_size=cell_size, plot_x=plot_x, plot_y=plot_y,
    plot_width=plot_width, plot_height=plot_height, cells=cells, x_labels=x_labels,
    y_labels=y_labels, legend=legend, x_name=x_name, y_name=y_name, title=title,
    version=__version__, scenario_hash=scenario_hash)


def outcome_heatmap_png(tokens, x_values, y_values, path, x_name="", y_name="", title=""):
  '''Write the outcome matrix as a PNG using matplotlib's Agg canvas
     (no display needed).'''
  from matplotlib.figure import Figure
  from matplotlib.colors import ListedColormap
  from matplotlib.backends.backend_agg import FigureCanvasAgg

  m = _as_matrix(tokens)
  names = list(OUTCOME_COLORS.keys())
  unknown = set(m.flatten()) - set(names)
  if unknown: logging.warning(f"Tokens without a color are drawn as ModelError: {sorted(unknown)}")
  codes = np.array([ [ names.index(t) if t in names else names.index("ModelError") for t in row ] for row in m ])

  fig = Figure(figsize=(1.2 + 0.6*m.shape[1], 1.2 + 0.6*m.shape[0]))
  FigureCanvasAgg(fig)
  ax = fig.add_subplot(1, 1, 1)
  ax.pcolormesh(center_coordinates_to_edges(np.arange(m.shape[1])),
                center_coordinates_to_edges(np.arange(m.shape[0])),
                codes, cmap=ListedColormap(list(OUTCOME_COLORS.values())),
                vmin=-0.5, vmax=len(names) - 0.5, edgecolors="white")
  ax.set_xticks(np.arange(m.shape[1]), [ str(v) for v in x_values ])
  ax.set_yticks(np.arange(m.shape[0]), [ str(v) for v in y_values ])
  ax.invert_yaxis()
  ax.set_xlabel(x_name)
  ax.set_ylabel(y_name)
  ax.set_title(title)
  fig.tight_layout()
  fig.savefig(path, metadata={ "Software": f"aebsim {__version__}" })
  return path
