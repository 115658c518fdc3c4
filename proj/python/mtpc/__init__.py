from ._mtpc import *  # noqa: F401,F403
from ._mtpc import __doc__  # noqa: F401

__version__ = "0.1.0"
