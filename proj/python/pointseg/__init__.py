from ._pointseg import *  # noqa: F401,F403
