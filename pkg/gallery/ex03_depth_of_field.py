"""
Depth of field of four imaging modalities
=========================================

A double slit is moved along the axis and the visibility of its image is
tracked. The depth of field is the range where the visibility stays at
or above 10%.
"""

from cpisim import paper_setup
from cpisim.analysis import dof_report, geometric_bound, double_slit

cfg = paper_setup()
d = 0.354e-3

# A coarse tolerance keeps this quick; the defaults bisect to 0.1 mm.
report = dof_report(cfg, d, n_u=3, tol=1e-3)
print(report.summary())

# %%
# Geometrical optics gives its own estimate of the refocusing range.
lo, hi = geometric_bound(cfg, double_slit(d))
print(f"\ngeometric range: {lo * 1e3:.1f} .. {hi * 1e3:.1f} mm")
