from .schema import MerConfig, MerBreakdown, TrainConfig, SynthConfig, BaselineReg, Corruption
from .network import Mlp, FusionModel, AdamState, ModelDims

__all__ = ['MerConfig', 'MerBreakdown', 'TrainConfig', 'SynthConfig', 'BaselineReg', 'Corruption',
           'Mlp', 'FusionModel', 'AdamState', 'ModelDims']
