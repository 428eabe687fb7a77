"""The published document-figure taxonomy.

Every label the classifier can emit comes from this tuple, and /health
serves it verbatim so clients can gate on exact strings.
"""

CLASS_NAMES: tuple[str, ...] = (
    "line chart",
    "bar plot",
    "scatter plot",
    "pie chart",
    "box plot",
    "area chart",
    "heat map",
    "histogram",
    "contour plot",
    "surface plot",
    "polar plot",
    "radar chart",
    "bubble chart",
    "venn diagram",
    "tree diagram",
    "flow chart",
    "block diagram",
    "algorithm",
    "table",
    "confusion matrix",
    "geographic map",
    "sketch",
    "3d object",
    "natural image",
    "medical image",
    "mask",
    "vector plot",
    "pareto chart",
)
