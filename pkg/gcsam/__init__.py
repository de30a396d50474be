"""Gradient-centralized sharpness-aware minimization toolkit."""
from .errors import *
from .tensor import *
from .centralization import *
from .optim import *
from .models import *
from .data import *
from .analysis import *
from .toys import *
from .config import *
from .reports import *
from .checkpoint import *
