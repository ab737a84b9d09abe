"""Spiking neural network training engine with multiscale attention and attention zoneout."""

from .azo import AzoConfig, azo_apply
from .errors import ConfigError, FormatError, NumericError, ShapeError, SmaSnnError
from .events import EventStream, bin_events, synth_gestures
from .model import BlockSpec, ModelConfig, build_model, build_ms_resnet, build_vgg, load_params, save_params
from .neuron import ATan, NeuronConfig, RectWindow, lif_step
from .sma import SMA, SmaConfig
from .tensor import Value, no_grad
from .trainer import FrameDataset, LossSpec, OptimSpec, TrainConfig, evaluate, train

__version__ = "0.1.0"
