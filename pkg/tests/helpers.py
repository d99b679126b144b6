"""Small hand-written problems shared by the unit tests."""

import numpy as np

from cdoc.core import ProblemDef


def decay(tf=1.0, x0=1.0):
    """``x' = -x`` with a dummy parameter and no cost."""
    return ProblemDef(
        n=1, m=1, l=1, t0=0.0, tf=tf, x0=[x0], p0=[1.0],
        f=lambda x, p, u, t: -x,
        f_x=lambda x, p, u, t: -np.ones(np.shape(x) + (1,)),
        f_p=lambda x, p, u, t: np.zeros(np.shape(x) + (1,)),
        L=lambda x, u, t: np.zeros(np.shape(x)[:-1]),
        L_x=lambda x, u, t: np.zeros(np.shape(x)),
        phi=lambda xf, tf: 0.0,
        phi_x=lambda xf, tf: np.zeros(1),
        name="decay",
    )


def still(phi_identity=False):
    """Zero dynamics and zero running cost; optionally ``phi = x``."""
    return ProblemDef(
        n=1, m=1, l=1, t0=0.0, tf=1.0, x0=[0.3], p0=[2.0],
        f=lambda x, p, u, t: np.zeros(np.shape(x)),
        f_x=lambda x, p, u, t: np.zeros(np.shape(x) + (1,)),
        f_p=lambda x, p, u, t: np.zeros(np.shape(x) + (1,)),
        L=lambda x, u, t: np.zeros(np.shape(x)[:-1]),
        L_x=lambda x, u, t: np.zeros(np.shape(x)),
        phi=(lambda xf, tf: float(xf[0])) if phi_identity else (lambda xf, tf: 0.0),
        phi_x=(lambda xf, tf: np.ones(1)) if phi_identity else (lambda xf, tf: np.zeros(1)),
        name="still",
    )
