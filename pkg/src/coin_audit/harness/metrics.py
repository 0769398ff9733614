"""Detection success rate and exposure metrics."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..protocol import AUDIT_SUCCESSFUL, FLAGGED


def compute_dsr(decisions: Sequence[str], labels: Sequence[str]) -> dict:
    """Per-class accuracy: inflated records flagged, benign records accepted.

    A class with no records maps to ``None`` rather than 0.
    """
    if len(decisions) != len(labels):
        raise ValueError("decisions and labels are not aligned")
    benign = [d for d, lab in zip(decisions, labels) if lab == "benign"]
    bad = [d for d, lab in zip(decisions, labels) if lab != "benign"]
    return {
        "dsr_malicious": float(np.mean([d == FLAGGED for d in bad])) if bad else None,
        "dsr_benign": float(np.mean([d == AUDIT_SUCCESSFUL for d in benign])) if benign else None,
        "n_malicious": len(bad),
        "n_benign": len(benign),
    }


def compute_aer(sessions) -> float | None:
    """Mean fraction of blocks exposed per benign audit.

    ``sessions`` holds verdicts (``rounds``/``alpha`` attributes) or
    ``(audited, alpha)`` pairs.
    """
    fracs = []
    for s in sessions:
        audited, alpha = (s.rounds, s.alpha) if hasattr(s, "rounds") else s
        if alpha:
            fracs.append(audited / alpha)
    return float(np.mean(fracs)) if fracs else None
