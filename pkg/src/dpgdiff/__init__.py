"""Desk-scale diffusion fine-tuning with a deterministic policy gradient.

A small diffusion model (the policy) is fine-tuned on a handful of reference
samples of one concept, either by plain step-wise reconstruction or through a
learned critic that estimates accumulated reward (reconstruction, clean-sample
"look forward", or feature similarity). Training, ablation grids, evaluation
reports and figure rendering are wired together by the ``dpgdiff`` CLI.
"""

__version__ = "0.1.0"
